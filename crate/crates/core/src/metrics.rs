//! Rate-distortion curves and Bjøntegaard-delta rate.

use std::io;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quality_map::DeltaBeta;
use crate::surrogate::{rate_for_delta, CachedPicture, CodecError, EncodeParams, ModelSuite};

/// Displacement grid of the standard variable-rate sweep.
pub const STANDARD_GRID: [i32; 10] = [-1069, -860, -660, -460, -260, 0, 200, 400, 600, 702];

/// Minimum points per curve for a cubic fit.
pub const MIN_CURVE_POINTS: usize = 4;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("curve has {0} points, need at least {MIN_CURVE_POINTS}")]
    TooFewPoints(usize),
    #[error("curve bpp must be strictly increasing")]
    NotIncreasing,
    #[error("curve point has non-positive or non-finite values")]
    InvalidPoint,
    #[error("curves share no quality range")]
    NoOverlap,
    #[error("delta beta {0} outside [-1069, 702]")]
    DeltaOutOfRange(i32),
    #[error("polynomial fit failed")]
    FitFailed,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub bpp: f64,
    pub quality: f64,
}

impl RdPoint {
    pub fn new(bpp: f64, quality: f64) -> Self {
        Self { bpp, quality }
    }
}

/// Row of a multi-model sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdRow {
    pub model: u8,
    pub delta_beta: i32,
    pub bpp: f64,
    pub quality: f64,
}

impl RdRow {
    pub fn point(&self) -> RdPoint {
        RdPoint::new(self.bpp, self.quality)
    }
}

/// Encodes the cached picture with `model_id` at each Δβ; rows are sorted by bpp.
pub fn rd_curve(
    cached: &CachedPicture,
    suite: &ModelSuite,
    model_id: u8,
    grid: &[i32],
) -> Result<Vec<RdRow>, MetricsError> {
    let model = suite.model(model_id)?;
    let latent = cached.latent(model)?;
    let mut rows = grid
        .iter()
        .map(|&d| {
            let delta = DeltaBeta(d);
            if !delta.in_signal_range() {
                return Err(MetricsError::DeltaOutOfRange(d));
            }
            let r = rate_for_delta(
                &latent,
                model,
                &EncodeParams::uniform(delta, None),
                suite.log_cfg(),
            )?;
            Ok(RdRow {
                model: model_id,
                delta_beta: d,
                bpp: r.bpp,
                quality: r.psnr(),
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    rows.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
    Ok(rows)
}

fn check_curve(curve: &[RdPoint]) -> Result<(), MetricsError> {
    if curve.len() < MIN_CURVE_POINTS {
        return Err(MetricsError::TooFewPoints(curve.len()));
    }
    if curve
        .iter()
        .any(|p| !(p.bpp.is_finite() && p.bpp > 0.0 && p.quality.is_finite()))
    {
        return Err(MetricsError::InvalidPoint);
    }
    if curve.windows(2).any(|w| w[1].bpp <= w[0].bpp) {
        return Err(MetricsError::NotIncreasing);
    }
    Ok(())
}

/// Cubic `ln(bpp) = Σ c_k t^k` with `t = (quality - center) / scale`.
struct CubicFit {
    coeffs: [f64; 4],
    center: f64,
    scale: f64,
}

impl CubicFit {
    fn new(curve: &[RdPoint]) -> Result<Self, MetricsError> {
        let n = curve.len() as f64;
        let center = curve.iter().map(|p| p.quality).sum::<f64>() / n;
        let spread = curve
            .iter()
            .map(|p| (p.quality - center).abs())
            .fold(0.0, f64::max);
        let scale = if spread > 0.0 { spread } else { 1.0 };
        let t: Vec<f64> = curve.iter().map(|p| (p.quality - center) / scale).collect();
        let a = DMatrix::from_fn(curve.len(), 4, |i, k| t[i].powi(k as i32));
        let y = DVector::from_iterator(curve.len(), curve.iter().map(|p| p.bpp.ln()));
        let c = a
            .svd(true, true)
            .solve(&y, 1e-12)
            .map_err(|_| MetricsError::FitFailed)?;
        if c.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::FitFailed);
        }
        Ok(Self {
            coeffs: [c[0], c[1], c[2], c[3]],
            center,
            scale,
        })
    }

    /// `∫_lo^hi` of the fitted polynomial over quality.
    fn integral(&self, lo: f64, hi: f64) -> f64 {
        let anti = |q: f64| {
            let t = (q - self.center) / self.scale;
            self.coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * t.powi(k as i32 + 1) / (k as f64 + 1.0))
                .sum::<f64>()
                * self.scale
        };
        anti(hi) - anti(lo)
    }
}

fn quality_range(curve: &[RdPoint]) -> (f64, f64) {
    curve
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.quality), hi.max(p.quality))
        })
}

/// Average bitrate change of `test` against `anchor` at equal quality, in percent.
pub fn bd_rate(anchor: &[RdPoint], test: &[RdPoint]) -> Result<f64, MetricsError> {
    check_curve(anchor)?;
    check_curve(test)?;
    let (alo, ahi) = quality_range(anchor);
    let (tlo, thi) = quality_range(test);
    let (lo, hi) = (alo.max(tlo), ahi.min(thi));
    if !(hi > lo) {
        return Err(MetricsError::NoOverlap);
    }
    let fa = CubicFit::new(anchor)?;
    let ft = CubicFit::new(test)?;
    let avg = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
    Ok(100.0 * avg.exp_m1())
}

pub fn write_points<W: io::Write>(out: W, points: &[RdPoint]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_points<R: io::Read>(input: R) -> Result<Vec<RdPoint>, MetricsError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<RdPoint>, _>>()?)
}

pub fn write_rows<W: io::Write>(out: W, rows: &[RdRow]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_rows<R: io::Read>(input: R) -> Result<Vec<RdRow>, MetricsError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<RdRow>, _>>()?)
}
