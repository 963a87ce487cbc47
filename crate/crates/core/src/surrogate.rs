//! Deterministic dual-stream latent codec standing in for a trained model.
//!
//! A picture is represented by two latent tensors (Y with `C_Y` channels, UV
//! with `C_UV` channels) on a shared `⌈H/16⌉ × ⌈W/16⌉` grid. Latents are drawn
//! once per picture as unit-variance Gaussian fields; each model then scales
//! every channel by its own standard deviation. Encoding multiplies the
//! residual by a 3D quality map, rounds, and range codes every element under
//! a discretized Gaussian whose width follows the scaled standard deviation.
//!
//! Model channel deviations follow a truncated power law so that the coded
//! rate grows close to exponentially with the log-domain displacement, which
//! is what the rate matcher's log-linear fit relies on.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::bitstream::{Bitstream, BitstreamError, PictureHeader};
use crate::quality_map::{
    combine_joint_for, extend_channel_map, ChannelGainVector, Component, DeltaBeta,
    LogDomainConfig, QualityMap3D, QualityMapError, SpatialQualityMap,
};
use crate::range_coder::{CdfCache, CdfTable, RangeCoderError, RangeDecoder, RangeEncoder};
use crate::spatial_codec::{self, SpatialCodecError};
use crate::tensor::{Dims, Tensor3};

/// Peak value used to express latent-domain MSE as PSNR.
pub const PSNR_PEAK: f64 = 255.0;

pub const MODEL_COUNT: usize = 4;

/// Lagrange multipliers the four anchor models were trained for.
pub const BETA_TRAIN: [f64; MODEL_COUNT] = [0.002, 0.007, 0.075, 0.5];

pub const DEFAULT_SUITE_SEED: u64 = 0x5EED_0001;

/// `(decay, sigma_min, sigma_max)` of each model's channel deviation law.
const MODEL_SIGMA_LAW: [(f64, f64, f64); MODEL_COUNT] = [
    (0.8, 0.02, 16.0),
    (0.8, 0.05, 16.0),
    (0.8, 0.10, 16.0),
    (0.3, 0.10, 16.0),
];
const UV_SIGMA_FACTOR: f64 = 0.7;
const GAIN_SPREAD: i32 = 24;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error(transparent)]
    QualityMap(#[from] QualityMapError),
    #[error(transparent)]
    RangeCoder(#[from] RangeCoderError),
    #[error(transparent)]
    SpatialMap(#[from] SpatialCodecError),
    #[error(transparent)]
    Bitstream(#[from] BitstreamError),
    #[error("invalid picture shape: {0}")]
    InvalidShape(&'static str),
    #[error("model {0} is not part of the suite")]
    UnknownModel(u8),
    #[error("spatial map is {map_h}x{map_w} but the latent grid is {grid_h}x{grid_w}")]
    SpatialMapShape {
        map_h: usize,
        map_w: usize,
        grid_h: usize,
        grid_w: usize,
    },
    #[error("latent does not match the model's {component:?} channel count")]
    ChannelMismatch { component: Component },
    #[error("container channel counts {c_y}/{c_uv} do not match the model suite")]
    SuiteMismatch { c_y: u8, c_uv: u8 },
}

/// Latent grid size of `n` source pixels.
pub fn latent_extent(n: usize) -> usize {
    n.div_ceil(16)
}

/// Source image size and latent channel counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PictureShape {
    image_height: u16,
    image_width: u16,
    c_y: u8,
    c_uv: u8,
}

impl PictureShape {
    pub fn new(image_height: u16, image_width: u16, c_y: u8, c_uv: u8) -> Result<Self, CodecError> {
        if image_height == 0 || image_width == 0 {
            return Err(CodecError::InvalidShape(
                "image dimensions must be positive",
            ));
        }
        if c_y == 0 || c_uv == 0 {
            return Err(CodecError::InvalidShape("channel counts must be positive"));
        }
        Ok(Self {
            image_height,
            image_width,
            c_y,
            c_uv,
        })
    }

    /// Shape whose latent grid is exactly `h × w`.
    pub fn from_latent(c_y: u8, c_uv: u8, h: usize, w: usize) -> Result<Self, CodecError> {
        let side = |n: usize| {
            u16::try_from(n * 16).map_err(|_| CodecError::InvalidShape("latent grid too large"))
        };
        Self::new(side(h)?, side(w)?, c_y, c_uv)
    }

    pub fn image_height(&self) -> u16 {
        self.image_height
    }

    pub fn image_width(&self) -> u16 {
        self.image_width
    }

    pub fn c_y(&self) -> u8 {
        self.c_y
    }

    pub fn c_uv(&self) -> u8 {
        self.c_uv
    }

    pub fn latent_height(&self) -> usize {
        latent_extent(self.image_height.into())
    }

    pub fn latent_width(&self) -> usize {
        latent_extent(self.image_width.into())
    }

    pub fn source_pixels(&self) -> usize {
        usize::from(self.image_height) * usize::from(self.image_width)
    }

    pub fn component(&self, component: Component) -> TensorShape {
        let channels = match component {
            Component::Y => self.c_y,
            Component::UV => self.c_uv,
        };
        TensorShape {
            channels: channels.into(),
            height: self.latent_height(),
            width: self.latent_width(),
            source_pixels: self.source_pixels(),
        }
    }
}

/// Latent tensor shape of one component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub source_pixels: usize,
}

impl TensorShape {
    pub fn dims(&self) -> Dims {
        Dims::new(self.channels, self.height, self.width)
    }
}

/// Counts latent synthesis runs per component.
#[derive(Debug, Default)]
pub struct SynthesisCounter {
    y: AtomicUsize,
    uv: AtomicUsize,
}

impl SynthesisCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, component: Component) -> usize {
        self.slot(component).load(Ordering::Relaxed)
    }

    fn slot(&self, component: Component) -> &AtomicUsize {
        match component {
            Component::Y => &self.y,
            Component::UV => &self.uv,
        }
    }
}

fn component_seed(seed: u64, component: Component) -> u64 {
    let tag = match component {
        Component::Y => 0x9E37_79B9_7F4A_7C15,
        Component::UV => 0xC2B2_AE3D_27D4_EB4F,
    };
    seed ^ tag
}

/// Draws the unit-variance field of one component. Increments `counter`.
pub fn synthesize_field(
    shape: TensorShape,
    component: Component,
    seed: u64,
    counter: &SynthesisCounter,
) -> Tensor3 {
    counter.slot(component).fetch_add(1, Ordering::Relaxed);
    let mut rng = ChaCha8Rng::seed_from_u64(component_seed(seed, component));
    let dims = shape.dims();
    let data = (0..dims.len())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor3::from_vec(dims, data).expect("length matches dims")
}

/// Model-independent latent draws of one picture, kept across rate probes.
#[derive(Debug, Clone)]
pub struct CachedPicture {
    shape: PictureShape,
    seed: u64,
    y_field: Tensor3,
    uv_field: Tensor3,
}

impl CachedPicture {
    pub fn synthesize(shape: PictureShape, seed: u64, counter: &SynthesisCounter) -> Self {
        Self {
            shape,
            seed,
            y_field: synthesize_field(shape.component(Component::Y), Component::Y, seed, counter),
            uv_field: synthesize_field(
                shape.component(Component::UV),
                Component::UV,
                seed,
                counter,
            ),
        }
    }

    pub fn shape(&self) -> PictureShape {
        self.shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Latent picture as produced by `model`'s analysis stage.
    pub fn latent(&self, model: &SurrogateModel) -> Result<LatentPicture, CodecError> {
        let scale = |field: &Tensor3, component| -> Result<Tensor3, CodecError> {
            let sigma = model.base_sigma(component);
            if sigma.len() != field.dims().channels {
                return Err(CodecError::ChannelMismatch { component });
            }
            let mut out = field.clone();
            let plane = field.dims().plane();
            for (k, v) in out.as_mut_slice().iter_mut().enumerate() {
                *v = sigma[k / plane] * *v + model.mu;
            }
            Ok(out)
        };
        Ok(LatentPicture {
            shape: self.shape,
            y: scale(&self.y_field, Component::Y)?,
            uv: scale(&self.uv_field, Component::UV)?,
            mu: model.mu,
        })
    }
}

/// Y and UV latents of one picture.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPicture {
    pub shape: PictureShape,
    pub y: Tensor3,
    pub uv: Tensor3,
    pub mu: f64,
}

impl LatentPicture {
    pub fn component(&self, component: Component) -> &Tensor3 {
        match component {
            Component::Y => &self.y,
            Component::UV => &self.uv,
        }
    }
}

/// One-shot synthesis of `model`'s latent for a picture.
pub fn synthesize_latent(
    shape: PictureShape,
    seed: u64,
    model: &SurrogateModel,
) -> Result<LatentPicture, CodecError> {
    CachedPicture::synthesize(shape, seed, &SynthesisCounter::new()).latent(model)
}

/// Statistics of one anchor model.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub model_id: u8,
    pub beta_train: f64,
    pub mu: f64,
    base_sigma_y: Vec<f64>,
    base_sigma_uv: Vec<f64>,
    gain_y: ChannelGainVector,
    gain_uv: ChannelGainVector,
}

impl SurrogateModel {
    pub fn new(
        model_id: u8,
        beta_train: f64,
        base_sigma_y: Vec<f64>,
        base_sigma_uv: Vec<f64>,
        gain_y: ChannelGainVector,
        gain_uv: ChannelGainVector,
    ) -> Result<Self, CodecError> {
        if base_sigma_y.len() != gain_y.len() {
            return Err(CodecError::ChannelMismatch {
                component: Component::Y,
            });
        }
        if base_sigma_uv.len() != gain_uv.len() {
            return Err(CodecError::ChannelMismatch {
                component: Component::UV,
            });
        }
        if base_sigma_y
            .iter()
            .chain(&base_sigma_uv)
            .any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return Err(CodecError::InvalidShape(
                "channel deviations must be positive",
            ));
        }
        Ok(Self {
            model_id,
            beta_train,
            mu: 0.0,
            base_sigma_y,
            base_sigma_uv,
            gain_y,
            gain_uv,
        })
    }

    /// Seeded synthetic model `model_id` of the default four-anchor suite.
    pub fn synthetic(model_id: u8, c_y: u8, c_uv: u8, seed: u64) -> Result<Self, CodecError> {
        let (decay, lo, hi) = *MODEL_SIGMA_LAW
            .get(usize::from(model_id))
            .ok_or(CodecError::UnknownModel(model_id))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(u64::from(model_id) << 32));
        let mut sigmas = |n: u8, factor: f64| -> Vec<f64> {
            let n = usize::from(n);
            // Stratified draws from the truncated power law, then shuffled.
            let (a, b) = (lo.ln(), hi.ln());
            let mass = 1.0 - (-decay * (b - a)).exp();
            let mut out: Vec<f64> = (0..n)
                .map(|c| {
                    let q = (c as f64 + rng.random::<f64>()) / n as f64;
                    factor * (a - (1.0 - q * mass).ln() / decay).exp()
                })
                .collect();
            for i in (1..n).rev() {
                out.swap(i, rng.random_range(0..=i));
            }
            out
        };
        let sigma_y = sigmas(c_y, 1.0);
        let sigma_uv = sigmas(c_uv, UV_SIGMA_FACTOR);
        let mut gains = |n: u8, component| {
            let g = (0..n)
                .map(|_| rng.random_range(-GAIN_SPREAD..=GAIN_SPREAD))
                .collect();
            ChannelGainVector::new(g, component)
        };
        let gain_y = gains(c_y, Component::Y)?;
        let gain_uv = gains(c_uv, Component::UV)?;
        Self::new(
            model_id,
            BETA_TRAIN[usize::from(model_id)],
            sigma_y,
            sigma_uv,
            gain_y,
            gain_uv,
        )
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn base_sigma(&self, component: Component) -> &[f64] {
        match component {
            Component::Y => &self.base_sigma_y,
            Component::UV => &self.base_sigma_uv,
        }
    }

    pub fn gain(&self, component: Component) -> &ChannelGainVector {
        match component {
            Component::Y => &self.gain_y,
            Component::UV => &self.gain_uv,
        }
    }

    pub fn channels(&self, component: Component) -> usize {
        self.base_sigma(component).len()
    }

    /// Channel-wise map, or the joint map when a spatial map is supplied.
    pub fn quality_map(
        &self,
        component: Component,
        delta: DeltaBeta,
        spatial: Option<&SpatialQualityMap>,
        height: usize,
        width: usize,
        cfg: &LogDomainConfig,
    ) -> Result<QualityMap3D, CodecError> {
        let gain = self.gain(component);
        match spatial {
            None => Ok(extend_channel_map(gain, delta, height, width, cfg)?),
            Some(map) => {
                if map.height() != height || map.width() != width {
                    return Err(CodecError::SpatialMapShape {
                        map_h: map.height(),
                        map_w: map.width(),
                        grid_h: height,
                        grid_w: width,
                    });
                }
                let dims = Dims::new(gain.len(), height, width);
                Ok(combine_joint_for(dims, gain, delta, map, cfg)?)
            }
        }
    }
}

/// The four anchor models plus the shared log-domain configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSuite {
    models: Vec<SurrogateModel>,
    log_cfg: LogDomainConfig,
    c_y: u8,
    c_uv: u8,
}

impl ModelSuite {
    pub fn synthetic(c_y: u8, c_uv: u8, seed: u64) -> Result<Self, CodecError> {
        let models = (0..MODEL_COUNT as u8)
            .map(|id| SurrogateModel::synthetic(id, c_y, c_uv, seed))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            models,
            log_cfg: LogDomainConfig::default(),
            c_y,
            c_uv,
        })
    }

    pub fn for_shape(shape: PictureShape, seed: u64) -> Result<Self, CodecError> {
        Self::synthetic(shape.c_y(), shape.c_uv(), seed)
    }

    pub fn models(&self) -> &[SurrogateModel] {
        &self.models
    }

    pub fn model(&self, id: u8) -> Result<&SurrogateModel, CodecError> {
        self.models
            .get(usize::from(id))
            .ok_or(CodecError::UnknownModel(id))
    }

    pub fn log_cfg(&self) -> &LogDomainConfig {
        &self.log_cfg
    }
}

/// Round half away from zero.
pub fn quantize(v: f64) -> i32 {
    v.round() as i32
}

/// Coded form of one component.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedComponent {
    pub bytes: Vec<u8>,
    pub bit_count: u64,
    /// Symbols that exceeded the coder's support and were clamped.
    pub clamped: usize,
    pub reconstruction: Tensor3,
}

/// Per-element table lookup with a local memo over the shared cache.
struct TableLookup<'a> {
    cache: &'a CdfCache,
    local: HashMap<i32, Arc<CdfTable>>,
}

impl<'a> TableLookup<'a> {
    fn new(cache: &'a CdfCache) -> Self {
        Self {
            cache,
            local: HashMap::new(),
        }
    }

    fn get(&mut self, sigma: f64) -> Arc<CdfTable> {
        let key = crate::range_coder::sigma_key(sigma);
        self.local
            .entry(key)
            .or_insert_with(|| self.cache.table_for_key(key))
            .clone()
    }
}

fn check_component(
    model: &SurrogateModel,
    component: Component,
    dims: Dims,
    map: &QualityMap3D,
) -> Result<(), CodecError> {
    if dims.channels != model.channels(component) {
        return Err(CodecError::ChannelMismatch { component });
    }
    if map.dims() != dims {
        return Err(QualityMapError::ShapeMismatch {
            expected: dims,
            actual: map.dims(),
        }
        .into());
    }
    Ok(())
}

/// Quantizes `m ⊙ (y - μ)` and range codes it under per-element Gaussian tables.
pub fn encode_component(
    model: &SurrogateModel,
    component: Component,
    latent: &Tensor3,
    map: &QualityMap3D,
) -> Result<EncodedComponent, CodecError> {
    let dims = latent.dims();
    check_component(model, component, dims, map)?;
    let sigma = model.base_sigma(component);
    let plane = dims.plane();
    let mut tables = TableLookup::new(CdfCache::global());
    let mut enc = RangeEncoder::new();
    let mut recon = Vec::with_capacity(dims.len());
    for (k, (&y, &m)) in latent
        .as_slice()
        .iter()
        .zip(map.scales().as_slice())
        .enumerate()
    {
        let table = tables.get(m * sigma[k / plane]);
        let symbol = table.clamp_symbol(quantize(m * (y - model.mu)));
        enc.encode(symbol, &table);
        recon.push(f64::from(symbol) / m + model.mu);
    }
    let clamped = enc.clamped();
    let bytes = enc.finish();
    Ok(EncodedComponent {
        bit_count: 8 * bytes.len() as u64,
        bytes,
        clamped,
        reconstruction: Tensor3::from_vec(dims, recon).expect("length matches dims"),
    })
}

/// Inverse of [`encode_component`]: `ŷ = symbol / m + μ`.
pub fn decode_component(
    bytes: &[u8],
    model: &SurrogateModel,
    component: Component,
    map: &QualityMap3D,
) -> Result<Tensor3, CodecError> {
    let dims = map.dims();
    check_component(model, component, dims, map)?;
    let sigma = model.base_sigma(component);
    let plane = dims.plane();
    let mut tables = TableLookup::new(CdfCache::global());
    let mut dec = RangeDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(dims.len());
    for (k, &m) in map.scales().as_slice().iter().enumerate() {
        let table = tables.get(m * sigma[k / plane]);
        let symbol = dec.decode(&table)?;
        out.push(f64::from(symbol) / m + model.mu);
    }
    dec.finish()?;
    Ok(Tensor3::from_vec(dims, out).expect("length matches dims"))
}

/// Measured rate and latent-domain distortion of one encode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateReport {
    pub bits_y: u64,
    pub bits_uv: u64,
    pub bpp: f64,
    pub mse: f64,
}

impl RateReport {
    pub fn psnr(&self) -> f64 {
        psnr_from_mse(self.mse)
    }

    pub fn total_bits(&self) -> u64 {
        self.bits_y + self.bits_uv
    }

    pub const CSV_HEADER: &'static str = "bpp,mse,psnr,bits_y,bits_uv";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.4},{},{}",
            self.bpp,
            self.mse,
            self.psnr(),
            self.bits_y,
            self.bits_uv
        )
    }
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    10.0 * (PSNR_PEAK * PSNR_PEAK / mse).log10()
}

/// Sum of squared differences between two equally shaped tensors.
pub fn squared_error(a: &Tensor3, b: &Tensor3) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Encoded picture plus the encoder-side reconstruction.
#[derive(Debug, Clone)]
pub struct EncodedPicture {
    pub bitstream: Bitstream,
    pub report: RateReport,
    pub reconstruction: LatentPicture,
}

/// Quality parameters of one encode.
#[derive(Debug, Clone, Copy, Default)]
pub struct EncodeParams<'a> {
    pub delta_y: DeltaBeta,
    pub delta_uv: DeltaBeta,
    pub spatial: Option<&'a SpatialQualityMap>,
}

impl<'a> EncodeParams<'a> {
    pub fn uniform(delta: DeltaBeta, spatial: Option<&'a SpatialQualityMap>) -> Self {
        Self {
            delta_y: delta,
            delta_uv: delta,
            spatial,
        }
    }

    pub fn delta(&self, component: Component) -> DeltaBeta {
        match component {
            Component::Y => self.delta_y,
            Component::UV => self.delta_uv,
        }
    }
}

struct ComponentPair {
    y: EncodedComponent,
    uv: EncodedComponent,
}

fn encode_components(
    latent: &LatentPicture,
    model: &SurrogateModel,
    params: &EncodeParams<'_>,
    cfg: &LogDomainConfig,
) -> Result<ComponentPair, CodecError> {
    let (h, w) = (latent.shape.latent_height(), latent.shape.latent_width());
    let map_y = model.quality_map(Component::Y, params.delta_y, params.spatial, h, w, cfg)?;
    let map_uv = model.quality_map(Component::UV, params.delta_uv, params.spatial, h, w, cfg)?;
    // Y and UV are independent streams.
    let (y, uv) = std::thread::scope(|s| {
        let uv = s.spawn(|| encode_component(model, Component::UV, &latent.uv, &map_uv));
        let y = encode_component(model, Component::Y, &latent.y, &map_y);
        (y, uv.join().expect("UV encoder panicked"))
    });
    Ok(ComponentPair { y: y?, uv: uv? })
}

fn report_for(latent: &LatentPicture, pair: &ComponentPair) -> RateReport {
    let n = (latent.y.dims().len() + latent.uv.dims().len()) as f64;
    let sse = squared_error(&latent.y, &pair.y.reconstruction)
        + squared_error(&latent.uv, &pair.uv.reconstruction);
    RateReport {
        bits_y: pair.y.bit_count,
        bits_uv: pair.uv.bit_count,
        bpp: (pair.y.bit_count + pair.uv.bit_count) as f64 / latent.shape.source_pixels() as f64,
        mse: sse / n,
    }
}

/// Encodes both components and assembles the container.
pub fn encode_picture(
    latent: &LatentPicture,
    model: &SurrogateModel,
    params: &EncodeParams<'_>,
    cfg: &LogDomainConfig,
) -> Result<EncodedPicture, CodecError> {
    for d in [params.delta_y, params.delta_uv] {
        if !d.in_signal_range() {
            return Err(BitstreamError::DeltaOutOfRange(d.value()).into());
        }
    }
    let pair = encode_components(latent, model, params, cfg)?;
    let report = report_for(latent, &pair);
    let shape = latent.shape;
    let bitstream = Bitstream {
        header: PictureHeader {
            image_height: shape.image_height(),
            image_width: shape.image_width(),
            c_y: shape.c_y(),
            c_uv: shape.c_uv(),
            delta_beta_y: params.delta_y,
            delta_beta_uv: params.delta_uv,
            model_id: model.model_id,
            spatial_map: params.spatial.is_some(),
        },
        spatial: params.spatial.map(spatial_codec::serialize),
        y: pair.y.bytes,
        uv: pair.uv.bytes,
    };
    let reconstruction = LatentPicture {
        shape,
        y: pair.y.reconstruction,
        uv: pair.uv.reconstruction,
        mu: latent.mu,
    };
    Ok(EncodedPicture {
        bitstream,
        report,
        reconstruction,
    })
}

/// Rate and distortion of an encode, computed from an already analysed latent.
pub fn rate_for_delta(
    latent: &LatentPicture,
    model: &SurrogateModel,
    params: &EncodeParams<'_>,
    cfg: &LogDomainConfig,
) -> Result<RateReport, CodecError> {
    let pair = encode_components(latent, model, params, cfg)?;
    Ok(report_for(latent, &pair))
}

/// Decoded picture and the parameters read from its header.
#[derive(Debug, Clone)]
pub struct DecodedPicture {
    pub header: PictureHeader,
    pub spatial: Option<SpatialQualityMap>,
    pub latent: LatentPicture,
}

pub fn decode_picture(bytes: &[u8], suite: &ModelSuite) -> Result<DecodedPicture, CodecError> {
    let stream = Bitstream::from_bytes(bytes)?;
    let header = stream.header;
    if header.c_y != suite.c_y || header.c_uv != suite.c_uv {
        return Err(CodecError::SuiteMismatch {
            c_y: header.c_y,
            c_uv: header.c_uv,
        });
    }
    let shape = PictureShape::new(
        header.image_height,
        header.image_width,
        header.c_y,
        header.c_uv,
    )?;
    let model = suite.model(header.model_id)?;
    let (h, w) = (shape.latent_height(), shape.latent_width());
    let spatial = stream
        .spatial
        .as_deref()
        .map(|b| spatial_codec::deserialize(b, h, w))
        .transpose()?;
    let cfg = suite.log_cfg();
    let map_y = model.quality_map(
        Component::Y,
        header.delta_beta_y,
        spatial.as_ref(),
        h,
        w,
        cfg,
    )?;
    let map_uv = model.quality_map(
        Component::UV,
        header.delta_beta_uv,
        spatial.as_ref(),
        h,
        w,
        cfg,
    )?;
    let y = decode_component(&stream.y, model, Component::Y, &map_y)?;
    let uv = decode_component(&stream.uv, model, Component::UV, &map_uv)?;
    Ok(DecodedPicture {
        header,
        spatial,
        latent: LatentPicture {
            shape,
            y,
            uv,
            mu: model.mu,
        },
    })
}

/// Re-encodes a decoded picture with the parameters from its own header.
pub fn reencode(decoded: &DecodedPicture, suite: &ModelSuite) -> Result<Vec<u8>, CodecError> {
    let model = suite.model(decoded.header.model_id)?;
    let params = EncodeParams {
        delta_y: decoded.header.delta_beta_y,
        delta_uv: decoded.header.delta_beta_uv,
        spatial: decoded.spatial.as_ref(),
    };
    let enc = encode_picture(&decoded.latent, model, &params, suite.log_cfg())?;
    Ok(enc.bitstream.to_bytes()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_shape() -> PictureShape {
        PictureShape::from_latent(8, 4, 6, 5).unwrap()
    }

    #[test]
    fn latent_extent_rounds_up() {
        assert_eq!(latent_extent(256), 16);
        assert_eq!(latent_extent(257), 17);
        assert_eq!(latent_extent(1), 1);
        let s = PictureShape::new(100, 33, 4, 2).unwrap();
        assert_eq!((s.latent_height(), s.latent_width()), (7, 3));
        assert_eq!(s.source_pixels(), 3300);
        assert!(PictureShape::new(0, 16, 1, 1).is_err());
        assert!(PictureShape::new(16, 16, 0, 1).is_err());
    }

    #[test]
    fn synthesis_is_deterministic_and_counted() {
        let counter = SynthesisCounter::new();
        let a = CachedPicture::synthesize(small_shape(), 11, &counter);
        let b = CachedPicture::synthesize(small_shape(), 11, &counter);
        assert_eq!(a.y_field, b.y_field);
        assert_eq!(a.uv_field, b.uv_field);
        assert_ne!(a.y_field.as_slice()[..5], a.uv_field.as_slice()[..5]);
        assert_eq!(counter.count(Component::Y), 2);
        assert_eq!(counter.count(Component::UV), 2);
        let c = CachedPicture::synthesize(small_shape(), 12, &counter);
        assert_ne!(a.y_field, c.y_field);
    }

    #[test]
    fn zero_mean_latent_equals_residual() {
        let model = SurrogateModel::synthetic(1, 8, 4, 3).unwrap();
        let cached = CachedPicture::synthesize(small_shape(), 5, &SynthesisCounter::new());
        let lat = cached.latent(&model).unwrap();
        assert_eq!(model.mu, 0.0);
        for c in 0..8 {
            for (v, z) in lat.y.channel(c).iter().zip(cached.y_field.channel(c)) {
                assert_eq!(*v, model.base_sigma(Component::Y)[c] * z);
            }
        }
        let shifted = cached.latent(&model.clone().with_mu(2.5)).unwrap();
        assert_eq!(shifted.y.get(0, 0, 0), lat.y.get(0, 0, 0) + 2.5);
    }

    #[test]
    fn synthetic_models_are_seeded() {
        let a = SurrogateModel::synthetic(2, 16, 8, 1).unwrap();
        let b = SurrogateModel::synthetic(2, 16, 8, 1).unwrap();
        let c = SurrogateModel::synthetic(2, 16, 8, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.beta_train, 0.075);
        assert!(SurrogateModel::synthetic(4, 16, 8, 1).is_err());
        for s in a.base_sigma(Component::Y) {
            assert!((0.1..=16.0).contains(s));
        }
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(quantize(0.5), 1);
        assert_eq!(quantize(-0.5), -1);
        assert_eq!(quantize(1.49), 1);
        assert_eq!(quantize(-2.5), -3);
    }

    #[test]
    fn unit_map_integer_latent_is_exact() {
        let model = SurrogateModel::new(
            0,
            1.0,
            vec![2.0, 3.0],
            vec![1.0],
            ChannelGainVector::zeros(2, Component::Y).unwrap(),
            ChannelGainVector::zeros(1, Component::UV).unwrap(),
        )
        .unwrap();
        let dims = Dims::new(2, 3, 3);
        let y = Tensor3::from_fn(dims, |c, i, j| (c as f64 + 1.0) * (i as f64 - j as f64));
        let map = QualityMap3D::uniform(dims, 1.0).unwrap();
        let enc = encode_component(&model, Component::Y, &y, &map).unwrap();
        assert_eq!(enc.reconstruction, y);
        let dec = decode_component(&enc.bytes, &model, Component::Y, &map).unwrap();
        assert_eq!(dec, y);
        let wrong = QualityMap3D::uniform(Dims::new(1, 3, 3), 1.0).unwrap();
        assert!(matches!(
            encode_component(&model, Component::Y, &y, &wrong),
            Err(CodecError::QualityMap(
                QualityMapError::ShapeMismatch { .. }
            ))
        ));
        assert!(matches!(
            encode_component(&model, Component::UV, &y, &map),
            Err(CodecError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn spatial_map_must_match_grid() {
        let model = SurrogateModel::synthetic(0, 8, 4, 1).unwrap();
        let map = SpatialQualityMap::filled(3, 3, 0).unwrap();
        let err = model
            .quality_map(
                Component::Y,
                DeltaBeta(0),
                Some(&map),
                6,
                5,
                &LogDomainConfig::default(),
            )
            .unwrap_err();
        assert!(matches!(err, CodecError::SpatialMapShape { .. }));
    }

    #[test]
    fn picture_round_trip_small() {
        let shape = small_shape();
        let suite = ModelSuite::for_shape(shape, 9).unwrap();
        let model = suite.model(3).unwrap();
        let lat = synthesize_latent(shape, 4, model).unwrap();
        let spatial = SpatialQualityMap::new(6, 5, (0..30).map(|k| k % 17 - 8).collect()).unwrap();
        let params = EncodeParams {
            delta_y: DeltaBeta(-300),
            delta_uv: DeltaBeta(150),
            spatial: Some(&spatial),
        };
        let enc = encode_picture(&lat, model, &params, suite.log_cfg()).unwrap();
        let bytes = enc.bitstream.to_bytes().unwrap();
        let dec = decode_picture(&bytes, &suite).unwrap();
        assert_eq!(dec.latent, enc.reconstruction);
        assert_eq!(dec.spatial.as_ref(), Some(&spatial));
        assert_eq!(reencode(&dec, &suite).unwrap(), bytes);

        let other = ModelSuite::synthetic(9, 4, 9).unwrap();
        assert!(matches!(
            decode_picture(&bytes, &other),
            Err(CodecError::SuiteMismatch { .. })
        ));
    }

    #[test]
    fn out_of_range_delta_is_rejected() {
        let shape = small_shape();
        let suite = ModelSuite::for_shape(shape, 9).unwrap();
        let model = suite.model(0).unwrap();
        let lat = synthesize_latent(shape, 4, model).unwrap();
        let params = EncodeParams::uniform(DeltaBeta(703), None);
        assert!(matches!(
            encode_picture(&lat, model, &params, suite.log_cfg()),
            Err(CodecError::Bitstream(BitstreamError::DeltaOutOfRange(703)))
        ));
    }
}
