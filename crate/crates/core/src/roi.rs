//! Region-of-interest bit allocation with a two-level spatial map.

use thiserror::Error;

use crate::brm::{match_rate, BrmConfig, BrmError, BrmResult};
use crate::quality_map::{DeltaBeta, QualityMapError, SpatialQualityMap};
use crate::surrogate::{
    encode_picture, CachedPicture, CodecError, EncodeParams, LatentPicture, ModelSuite,
};
use crate::tensor::Tensor3;

/// Quality index inside the region by default.
pub const DEFAULT_ROI_INDEX: i32 = 3;
/// Quality index outside the region by default.
pub const DEFAULT_BG_INDEX: i32 = -3;

#[derive(Debug, Error)]
pub enum RoiError {
    #[error("rectangle {0} does not fit a {1}x{2} latent grid")]
    BadRect(Rect, usize, usize),
    #[error(transparent)]
    QualityMap(#[from] QualityMapError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Brm(#[from] BrmError),
}

/// Axis-aligned rectangle in latent units; `x` is the column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl std::fmt::Display for Rect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

impl std::str::FromStr for Rect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("bad rectangle `{s}`: {e}"))?;
        match parts[..] {
            [x, y, w, h] => Ok(Self { x, y, w, h }),
            _ => Err(format!("rectangle `{s}` needs four values x,y,w,h")),
        }
    }
}

impl Rect {
    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.y..self.y + self.h).contains(&i) && (self.x..self.x + self.w).contains(&j)
    }

    /// Non-empty and strictly smaller than the grid, so both regions exist.
    pub fn check(&self, height: usize, width: usize) -> Result<(), RoiError> {
        let fits = self.w > 0
            && self.h > 0
            && self.x + self.w <= width
            && self.y + self.h <= height
            && self.w * self.h < width * height;
        if fits {
            Ok(())
        } else {
            Err(RoiError::BadRect(*self, height, width))
        }
    }
}

pub fn roi_map(
    height: usize,
    width: usize,
    rect: Rect,
    roi_index: i32,
    bg_index: i32,
) -> Result<SpatialQualityMap, RoiError> {
    rect.check(height, width)?;
    let indices = (0..height * width)
        .map(|k| {
            if rect.contains(k / width, k % width) {
                roi_index
            } else {
                bg_index
            }
        })
        .collect();
    Ok(SpatialQualityMap::new(height, width, indices)?)
}

/// Mean squared error inside and outside a rectangle, over all channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionMse {
    pub roi: f64,
    pub background: f64,
}

pub fn region_mse(original: &LatentPicture, recon: &LatentPicture, rect: Rect) -> RegionMse {
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    let mut add = |a: &Tensor3, b: &Tensor3| {
        let d = a.dims();
        let plane = d.plane();
        for (k, (x, y)) in a.as_slice().iter().zip(b.as_slice()).enumerate() {
            let p = k % plane;
            let slot = usize::from(!rect.contains(p / d.width, p % d.width));
            sums[slot] += (x - y) * (x - y);
            counts[slot] += 1;
        }
    };
    add(&original.y, &recon.y);
    add(&original.uv, &recon.uv);
    RegionMse {
        roi: sums[0] / counts[0] as f64,
        background: sums[1] / counts[1] as f64,
    }
}

/// One encode of the comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiEncode {
    pub model_id: u8,
    pub delta_beta: DeltaBeta,
    pub bpp: f64,
    pub mse: RegionMse,
    /// Present when the Δβ came from rate matching.
    pub brm: Option<BrmResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiReport {
    pub rect: Rect,
    pub plain: RoiEncode,
    pub with_map: RoiEncode,
}

/// How the two encodes pick their operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RoiOperatingPoint {
    /// Same model and Δβ for both encodes.
    Fixed { model_id: u8, delta: DeltaBeta },
    /// Each encode is rate matched to the target on its own.
    Target { bpp: f64, brm: BrmConfig },
}

fn encode_region(
    cached: &CachedPicture,
    suite: &ModelSuite,
    model_id: u8,
    delta: DeltaBeta,
    spatial: Option<&SpatialQualityMap>,
    rect: Rect,
) -> Result<RoiEncode, RoiError> {
    let model = suite.model(model_id)?;
    let latent = cached.latent(model)?;
    let enc = encode_picture(
        &latent,
        model,
        &EncodeParams::uniform(delta, spatial),
        suite.log_cfg(),
    )?;
    Ok(RoiEncode {
        model_id,
        delta_beta: delta,
        bpp: enc.report.bpp,
        mse: region_mse(&latent, &enc.reconstruction, rect),
        brm: None,
    })
}

fn encode_at(
    cached: &CachedPicture,
    suite: &ModelSuite,
    point: RoiOperatingPoint,
    spatial: Option<&SpatialQualityMap>,
    rect: Rect,
) -> Result<RoiEncode, RoiError> {
    match point {
        RoiOperatingPoint::Fixed { model_id, delta } => {
            encode_region(cached, suite, model_id, delta, spatial, rect)
        }
        RoiOperatingPoint::Target { bpp, brm } => {
            let res = match_rate(cached, suite, bpp, spatial, &brm)?;
            let mut enc =
                encode_region(cached, suite, res.model_id, res.delta_beta, spatial, rect)?;
            enc.brm = Some(res);
            Ok(enc)
        }
    }
}

/// Encodes the picture without and with the ROI map at the same operating point.
pub fn roi_demo(
    cached: &CachedPicture,
    suite: &ModelSuite,
    rect: Rect,
    roi_index: i32,
    bg_index: i32,
    point: RoiOperatingPoint,
) -> Result<RoiReport, RoiError> {
    let shape = cached.shape();
    let map = roi_map(
        shape.latent_height(),
        shape.latent_width(),
        rect,
        roi_index,
        bg_index,
    )?;
    Ok(RoiReport {
        rect,
        plain: encode_at(cached, suite, point, None, rect)?,
        with_map: encode_at(cached, suite, point, Some(&map), rect)?,
    })
}
