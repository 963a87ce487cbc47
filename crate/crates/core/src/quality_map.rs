//! 3D quality maps built from channel-wise (integer log domain) and spatial
//! (LUT-indexed) sources.
//!
//! Channel-wise gains live in an integer log domain whose unit is
//! `sigma_step / beta_precision`: adding a displacement to a gain there is a
//! multiplication of the linear scale. Spatial maps carry small quantization
//! indices that are looked up in a fixed 17-entry scale table. Both are
//! materialized as a linear-domain `C × h × w` tensor of positive scales that
//! multiplies the latent residual before rounding.

use thiserror::Error;

use crate::tensor::{Dims, Tensor3};

/// Smallest signalable displacement.
pub const DELTA_BETA_MIN: i32 = -1069;
/// Largest signalable displacement.
pub const DELTA_BETA_MAX: i32 = 702;

pub const SPATIAL_INDEX_MIN: i32 = -8;
pub const SPATIAL_INDEX_MAX: i32 = 8;

/// Quantization scale for spatial indices `-8..=8`.
const QUANT_SCALES: [f64; 17] = [
    0.25, 0.3125, 0.375, 0.4375, 0.5, 0.625, 0.75, 0.875, 1.0, 1.25, 1.4375, 1.6875, 2.0, 2.4375,
    2.875, 3.375, 4.0,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QualityMapError {
    #[error("quality ratio must be positive and finite, got {0}")]
    NonPositiveRatio(f64),
    #[error("log-domain configuration requires positive step and precision")]
    InvalidConfig,
    #[error("spatial quantization index {0} outside [-8, 8]")]
    IndexOutOfRange(i32),
    #[error("gain vector is empty")]
    EmptyGain,
    #[error("spatial dimensions must be at least 1x1, got {0}x{1}")]
    EmptyGrid(usize, usize),
    #[error("channel count must be at least 1")]
    NoChannels,
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: Dims, actual: Dims },
    #[error("quality map has a non-positive scale {0}")]
    NonPositiveScale(f64),
    #[error("grid rows have inconsistent lengths")]
    RaggedGrid,
}

/// Constants of the integer log domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDomainConfig {
    sigma_step: f64,
    beta_precision: u32,
}

impl Default for LogDomainConfig {
    fn default() -> Self {
        Self {
            sigma_step: 0.2,
            beta_precision: 128,
        }
    }
}

impl LogDomainConfig {
    pub fn new(sigma_step: f64, beta_precision: u32) -> Result<Self, QualityMapError> {
        if !(sigma_step > 0.0 && sigma_step.is_finite()) || beta_precision == 0 {
            return Err(QualityMapError::InvalidConfig);
        }
        Ok(Self {
            sigma_step,
            beta_precision,
        })
    }

    pub fn sigma_step(&self) -> f64 {
        self.sigma_step
    }

    pub fn beta_precision(&self) -> u32 {
        self.beta_precision
    }

    /// Natural-log increment represented by one integer unit.
    pub fn log_unit(&self) -> f64 {
        self.sigma_step / f64::from(self.beta_precision)
    }
}

/// Signed log-domain displacement applied to a gain vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct DeltaBeta(pub i32);

impl DeltaBeta {
    pub const ZERO: Self = Self(0);

    pub fn value(self) -> i32 {
        self.0
    }

    pub fn clamped(self) -> Self {
        Self(self.0.clamp(DELTA_BETA_MIN, DELTA_BETA_MAX))
    }

    pub fn in_signal_range(self) -> bool {
        (DELTA_BETA_MIN..=DELTA_BETA_MAX).contains(&self.0)
    }
}

/// Which latent stream a gain vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Y,
    UV,
}

impl Component {
    pub const ALL: [Component; 2] = [Component::Y, Component::UV];
}

/// Per-channel integer log-domain gains of one component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelGainVector {
    gains: Vec<i32>,
    component: Component,
}

impl ChannelGainVector {
    pub fn new(gains: Vec<i32>, component: Component) -> Result<Self, QualityMapError> {
        if gains.is_empty() {
            return Err(QualityMapError::EmptyGain);
        }
        Ok(Self { gains, component })
    }

    pub fn zeros(channels: usize, component: Component) -> Result<Self, QualityMapError> {
        Self::new(vec![0; channels], component)
    }

    pub fn gains(&self) -> &[i32] {
        &self.gains
    }

    pub fn component(&self) -> Component {
        self.component
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }
}

/// Grid of spatial quantization indices, one per latent position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialQualityMap {
    height: usize,
    width: usize,
    indices: Vec<i32>,
}

impl SpatialQualityMap {
    pub fn new(height: usize, width: usize, indices: Vec<i32>) -> Result<Self, QualityMapError> {
        if height == 0 || width == 0 {
            return Err(QualityMapError::EmptyGrid(height, width));
        }
        if indices.len() != height * width {
            return Err(QualityMapError::RaggedGrid);
        }
        if let Some(&bad) = indices
            .iter()
            .find(|q| !(SPATIAL_INDEX_MIN..=SPATIAL_INDEX_MAX).contains(*q))
        {
            return Err(QualityMapError::IndexOutOfRange(bad));
        }
        Ok(Self {
            height,
            width,
            indices,
        })
    }

    pub fn filled(height: usize, width: usize, index: i32) -> Result<Self, QualityMapError> {
        Self::new(height, width, vec![index; height * width])
    }

    pub fn from_rows(rows: &[Vec<i32>]) -> Result<Self, QualityMapError> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(QualityMapError::RaggedGrid);
        }
        Self::new(height, width, rows.concat())
    }

    /// Parses whitespace-separated integer rows; blank lines and `#` comments are skipped.
    pub fn parse_text(text: &str) -> Result<Self, QualityMapParseError> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<i32>()
                        .map_err(|_| QualityMapParseError::BadToken {
                            line: lineno + 1,
                            token: tok.to_string(),
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Ok(Self::from_rows(&rows)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.height {
            let row: Vec<String> = (0..self.width)
                .map(|j| self.get(i, j).to_string())
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn indices(&self) -> &[i32] {
        &self.indices
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> i32 {
        self.indices[i * self.width + j]
    }
}

#[derive(Debug, Error)]
pub enum QualityMapParseError {
    #[error("line {line}: `{token}` is not an integer")]
    BadToken { line: usize, token: String },
    #[error(transparent)]
    Invalid(#[from] QualityMapError),
}

/// Linear-domain per-element scales `m[c, i, j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityMap3D {
    scales: Tensor3,
}

impl QualityMap3D {
    pub fn from_tensor(scales: Tensor3) -> Result<Self, QualityMapError> {
        if let Some(&bad) = scales.as_slice().iter().find(|s| !(**s > 0.0)) {
            return Err(QualityMapError::NonPositiveScale(bad));
        }
        Ok(Self { scales })
    }

    pub fn uniform(dims: Dims, scale: f64) -> Result<Self, QualityMapError> {
        Self::from_tensor(Tensor3::filled(dims, scale))
    }

    pub fn dims(&self) -> Dims {
        self.scales.dims()
    }

    pub fn scales(&self) -> &Tensor3 {
        &self.scales
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.scales.get(c, i, j)
    }

    pub fn min_scale(&self) -> f64 {
        self.scales
            .as_slice()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Ratio of the requested to the trained Lagrange multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateControlParams {
    beta_train: f64,
    beta_test: f64,
}

impl RateControlParams {
    pub fn new(beta_train: f64, beta_test: f64) -> Result<Self, QualityMapError> {
        for v in [beta_train, beta_test] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(QualityMapError::NonPositiveRatio(v));
            }
        }
        Ok(Self {
            beta_train,
            beta_test,
        })
    }

    pub fn beta_train(&self) -> f64 {
        self.beta_train
    }

    pub fn beta_test(&self) -> f64 {
        self.beta_test
    }

    pub fn delta_ratio(&self) -> f64 {
        self.beta_test / self.beta_train
    }
}

/// `floor(ln(ratio) / log_unit)`, unclamped.
pub fn delta_beta_from_ratio(
    ratio: f64,
    cfg: &LogDomainConfig,
) -> Result<DeltaBeta, QualityMapError> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(QualityMapError::NonPositiveRatio(ratio));
    }
    let scaled = ratio.ln() * f64::from(cfg.beta_precision) / cfg.sigma_step;
    Ok(DeltaBeta(scaled.floor() as i32))
}

pub fn delta_beta_from_quality(
    params: &RateControlParams,
    cfg: &LogDomainConfig,
) -> Result<DeltaBeta, QualityMapError> {
    delta_beta_from_ratio(params.delta_ratio(), cfg)
}

pub fn log_to_linear(v: i32, cfg: &LogDomainConfig) -> f64 {
    (f64::from(v) * cfg.log_unit()).exp()
}

pub fn quant_scale_for_index(idx: i32) -> Result<f64, QualityMapError> {
    if !(SPATIAL_INDEX_MIN..=SPATIAL_INDEX_MAX).contains(&idx) {
        return Err(QualityMapError::IndexOutOfRange(idx));
    }
    Ok(QUANT_SCALES[(idx - SPATIAL_INDEX_MIN) as usize])
}

/// Spatially constant map: `m[c, i, j] = exp((gain[c] + delta) * log_unit)`.
pub fn extend_channel_map(
    gain: &ChannelGainVector,
    delta: DeltaBeta,
    height: usize,
    width: usize,
    cfg: &LogDomainConfig,
) -> Result<QualityMap3D, QualityMapError> {
    if gain.is_empty() {
        return Err(QualityMapError::EmptyGain);
    }
    if height == 0 || width == 0 {
        return Err(QualityMapError::EmptyGrid(height, width));
    }
    let per_channel: Vec<f64> = gain
        .gains()
        .iter()
        .map(|&g| log_to_linear(g + delta.value(), cfg))
        .collect();
    let dims = Dims::new(gain.len(), height, width);
    QualityMap3D::from_tensor(Tensor3::from_fn(dims, |c, _, _| per_channel[c]))
}

/// Channel-constant map: every channel copies the LUT scale of `map[i, j]`.
pub fn extend_spatial_map(
    map: &SpatialQualityMap,
    channels: usize,
) -> Result<QualityMap3D, QualityMapError> {
    if channels == 0 {
        return Err(QualityMapError::NoChannels);
    }
    let plane = map
        .indices()
        .iter()
        .map(|&q| quant_scale_for_index(q))
        .collect::<Result<Vec<_>, _>>()?;
    let dims = Dims::new(channels, map.height(), map.width());
    QualityMap3D::from_tensor(Tensor3::from_fn(dims, |_, i, j| plane[i * map.width() + j]))
}

/// Product of the channel-wise and spatial extensions over the map's grid.
pub fn combine_joint(
    gain: &ChannelGainVector,
    delta: DeltaBeta,
    map: &SpatialQualityMap,
    cfg: &LogDomainConfig,
) -> Result<QualityMap3D, QualityMapError> {
    let channel = extend_channel_map(gain, delta, map.height(), map.width(), cfg)?;
    let spatial = extend_spatial_map(map, gain.len())?;
    multiply_maps(&channel, &spatial)
}

/// Joint map with an explicit target shape; fails if `map` or `gain` disagree with it.
pub fn combine_joint_for(
    dims: Dims,
    gain: &ChannelGainVector,
    delta: DeltaBeta,
    map: &SpatialQualityMap,
    cfg: &LogDomainConfig,
) -> Result<QualityMap3D, QualityMapError> {
    let actual = Dims::new(gain.len(), map.height(), map.width());
    if actual != dims {
        return Err(QualityMapError::ShapeMismatch {
            expected: dims,
            actual,
        });
    }
    combine_joint(gain, delta, map, cfg)
}

fn multiply_maps(a: &QualityMap3D, b: &QualityMap3D) -> Result<QualityMap3D, QualityMapError> {
    check_dims(a.dims(), b.dims())?;
    let data = a
        .scales
        .as_slice()
        .iter()
        .zip(b.scales.as_slice())
        .map(|(x, y)| x * y)
        .collect();
    QualityMap3D::from_tensor(Tensor3::from_vec(a.dims(), data).expect("dims checked"))
}

fn check_dims(expected: Dims, actual: Dims) -> Result<(), QualityMapError> {
    if expected != actual {
        return Err(QualityMapError::ShapeMismatch { expected, actual });
    }
    Ok(())
}

/// `r' = m ⊙ r`.
pub fn apply_map(residual: &Tensor3, map: &QualityMap3D) -> Result<Tensor3, QualityMapError> {
    check_dims(map.dims(), residual.dims())?;
    let data = residual
        .as_slice()
        .iter()
        .zip(map.scales.as_slice())
        .map(|(r, m)| m * r)
        .collect();
    Ok(Tensor3::from_vec(residual.dims(), data).expect("dims checked"))
}

/// Decoder-side inverse of [`apply_map`].
pub fn unapply_map(scaled: &Tensor3, map: &QualityMap3D) -> Result<Tensor3, QualityMapError> {
    check_dims(map.dims(), scaled.dims())?;
    let data = scaled
        .as_slice()
        .iter()
        .zip(map.scales.as_slice())
        .map(|(r, &m)| {
            if m > 0.0 {
                Ok(r / m)
            } else {
                Err(QualityMapError::NonPositiveScale(m))
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(Tensor3::from_vec(scaled.dims(), data).expect("dims checked"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> LogDomainConfig {
        LogDomainConfig::default()
    }

    #[test]
    fn default_config_constants() {
        let c = cfg();
        assert_eq!(c.sigma_step(), 0.2);
        assert_eq!(c.beta_precision(), 128);
        assert_eq!(c.log_unit(), 0.2 / 128.0);
        assert!(LogDomainConfig::new(0.0, 128).is_err());
        assert!(LogDomainConfig::new(0.2, 0).is_err());
    }

    #[test]
    fn delta_beta_examples() {
        // ln(2) * 640 = 443.614..., floor toward -inf on both sides.
        assert_eq!(delta_beta_from_ratio(1.0, &cfg()).unwrap(), DeltaBeta(0));
        assert_eq!(delta_beta_from_ratio(2.0, &cfg()).unwrap(), DeltaBeta(443));
        assert_eq!(delta_beta_from_ratio(0.5, &cfg()).unwrap(), DeltaBeta(-444));
        let p = RateControlParams::new(0.075, 0.15).unwrap();
        assert_eq!(delta_beta_from_quality(&p, &cfg()).unwrap(), DeltaBeta(443));
    }

    #[test]
    fn delta_beta_rejects_non_positive() {
        assert!(delta_beta_from_ratio(0.0, &cfg()).is_err());
        assert!(delta_beta_from_ratio(-1.0, &cfg()).is_err());
        assert!(delta_beta_from_ratio(f64::NAN, &cfg()).is_err());
        assert!(RateControlParams::new(0.0, 1.0).is_err());
    }

    #[test]
    fn log_to_linear_examples() {
        assert_eq!(log_to_linear(0, &cfg()), 1.0);
        assert!((log_to_linear(640, &cfg()) - std::f64::consts::E).abs() < 1e-12);
        // exp(443 / 640) = exp(0.6921875)
        assert!((log_to_linear(443, &cfg()) - 1.998_081_559_572_339).abs() < 1e-12);
    }

    #[test]
    fn delta_clamp() {
        assert_eq!(DeltaBeta(800).clamped(), DeltaBeta(702));
        assert_eq!(DeltaBeta(-2000).clamped(), DeltaBeta(-1069));
        assert!(DeltaBeta(702).in_signal_range());
        assert!(!DeltaBeta(703).in_signal_range());
    }

    #[test]
    fn lut_entries() {
        assert_eq!(quant_scale_for_index(0).unwrap(), 1.0);
        assert_eq!(quant_scale_for_index(-8).unwrap(), 0.25);
        assert_eq!(quant_scale_for_index(8).unwrap(), 4.0);
        assert_eq!(quant_scale_for_index(3).unwrap(), 1.6875);
        assert_eq!(quant_scale_for_index(-3).unwrap(), 0.625);
        assert_eq!(quant_scale_for_index(4).unwrap(), 2.0);
        assert_eq!(quant_scale_for_index(-4).unwrap(), 0.5);
        assert!(quant_scale_for_index(9).is_err());
        assert!(quant_scale_for_index(-9).is_err());
    }

    #[test]
    fn lut_strictly_increasing() {
        for q in SPATIAL_INDEX_MIN..SPATIAL_INDEX_MAX {
            assert!(quant_scale_for_index(q).unwrap() < quant_scale_for_index(q + 1).unwrap());
        }
    }

    #[test]
    fn channel_map_examples() {
        let g = ChannelGainVector::zeros(2, Component::Y).unwrap();
        let m = extend_channel_map(&g, DeltaBeta(0), 2, 2, &cfg()).unwrap();
        assert!(m.scales().as_slice().iter().all(|&s| s == 1.0));

        let g = ChannelGainVector::new(vec![0], Component::UV).unwrap();
        let m = extend_channel_map(&g, DeltaBeta(640), 1, 1, &cfg()).unwrap();
        assert!((m.get(0, 0, 0) - std::f64::consts::E).abs() < 1e-12);

        assert_eq!(
            ChannelGainVector::new(vec![], Component::Y),
            Err(QualityMapError::EmptyGain)
        );
        assert!(extend_channel_map(&g, DeltaBeta(0), 0, 3, &cfg()).is_err());
    }

    #[test]
    fn spatial_map_examples() {
        let zero = SpatialQualityMap::filled(3, 2, 0).unwrap();
        let m = extend_spatial_map(&zero, 4).unwrap();
        assert!(m.scales().as_slice().iter().all(|&s| s == 1.0));

        let mut idx = vec![0; 4];
        idx[0] = 4;
        let map = SpatialQualityMap::new(2, 2, idx).unwrap();
        let m = extend_spatial_map(&map, 3).unwrap();
        for c in 0..3 {
            assert_eq!(m.get(c, 0, 0), 2.0);
        }
        assert!(extend_spatial_map(&map, 0).is_err());
        assert_eq!(
            SpatialQualityMap::new(1, 1, vec![9]),
            Err(QualityMapError::IndexOutOfRange(9))
        );
    }

    #[test]
    fn joint_examples() {
        let g = ChannelGainVector::zeros(3, Component::Y).unwrap();
        let zero = SpatialQualityMap::filled(2, 2, 0).unwrap();
        let m = combine_joint(&g, DeltaBeta(0), &zero, &cfg()).unwrap();
        assert!(m.scales().as_slice().iter().all(|&s| s == 1.0));

        // Channel scale exactly 2.0 via a log unit of ln(2) / 128.
        let c2 = LogDomainConfig::new(std::f64::consts::LN_2, 128).unwrap();
        let g = ChannelGainVector::new(vec![128], Component::Y).unwrap();
        let half = SpatialQualityMap::filled(1, 1, -4).unwrap();
        let m = combine_joint(&g, DeltaBeta(0), &half, &c2).unwrap();
        assert!((m.get(0, 0, 0) - 1.0).abs() < 1e-12);

        let wrong = Dims::new(4, 2, 2);
        assert!(combine_joint_for(wrong, &g, DeltaBeta(0), &zero, &cfg()).is_err());
    }

    #[test]
    fn apply_examples() {
        let dims = Dims::new(1, 1, 1);
        let r = Tensor3::filled(dims, 3.0);
        let m = QualityMap3D::uniform(dims, 0.25).unwrap();
        assert_eq!(apply_map(&r, &m).unwrap().get(0, 0, 0), 0.75);

        let dims = Dims::new(2, 3, 4);
        let r = Tensor3::from_fn(dims, |c, i, j| (c * 12 + i * 4 + j) as f64 - 7.5);
        let one = QualityMap3D::uniform(dims, 1.0).unwrap();
        assert_eq!(apply_map(&r, &one).unwrap(), r);
        assert_eq!(unapply_map(&r, &one).unwrap(), r);
        let z = Tensor3::zeros(dims);
        let m = QualityMap3D::uniform(dims, 3.7).unwrap();
        assert_eq!(apply_map(&z, &m).unwrap(), z);
        assert_eq!(unapply_map(&z, &m).unwrap(), z);

        let other = QualityMap3D::uniform(Dims::new(2, 3, 5), 1.0).unwrap();
        assert!(matches!(
            apply_map(&r, &other),
            Err(QualityMapError::ShapeMismatch { .. })
        ));
        assert!(QualityMap3D::uniform(dims, 0.0).is_err());
    }

    #[test]
    fn parse_text_grid() {
        let m = SpatialQualityMap::parse_text("# roi\n 1 2 -3\n0 0 8\n\n").unwrap();
        assert_eq!((m.height(), m.width()), (2, 3));
        assert_eq!(m.get(0, 2), -3);
        assert_eq!(SpatialQualityMap::parse_text(&m.to_text()).unwrap(), m);
        assert!(SpatialQualityMap::parse_text("1 2\n3").is_err());
        assert!(SpatialQualityMap::parse_text("1 x").is_err());
        assert!(SpatialQualityMap::parse_text("1 9").is_err());
    }

    proptest! {
        #[test]
        fn log_domain_additivity(g in -4000i32..4000, d in -4000i32..4000) {
            let c = cfg();
            let lhs = log_to_linear(g + d, &c);
            let rhs = log_to_linear(g, &c) * log_to_linear(d, &c);
            prop_assert!((lhs - rhs).abs() / lhs <= 1e-12);
        }

        #[test]
        fn floor_quantization_bound(ln_ratio in (0.01f64).ln()..(100f64).ln()) {
            let c = cfg();
            let ratio = ln_ratio.exp();
            let d = delta_beta_from_ratio(ratio, &c).unwrap();
            let back = log_to_linear(d.value(), &c);
            prop_assert!(back <= ratio * (1.0 + 1e-12));
            prop_assert!((back - ratio).abs() / ratio <= c.log_unit().exp() - 1.0);
        }

        #[test]
        fn extensions_are_constant_along_their_axis(
            gains in prop::collection::vec(-300i32..300, 1..6),
            idx in prop::collection::vec(-8i32..=8, 12),
            delta in DELTA_BETA_MIN..=DELTA_BETA_MAX,
        ) {
            let g = ChannelGainVector::new(gains.clone(), Component::Y).unwrap();
            let map = SpatialQualityMap::new(3, 4, idx).unwrap();
            let ch = extend_channel_map(&g, DeltaBeta(delta), 3, 4, &cfg()).unwrap();
            let sp = extend_spatial_map(&map, gains.len()).unwrap();
            let joint = combine_joint(&g, DeltaBeta(delta), &map, &cfg()).unwrap();
            for c in 0..gains.len() {
                for i in 0..3 {
                    for j in 0..4 {
                        prop_assert_eq!(ch.get(c, i, j), ch.get(c, 0, 0));
                        prop_assert_eq!(sp.get(c, i, j), sp.get(0, i, j));
                        // Independent route: explicit scalar product.
                        let expect = log_to_linear(gains[c] + delta, &cfg())
                            * quant_scale_for_index(map.get(i, j)).unwrap();
                        prop_assert_eq!(joint.get(c, i, j), expect);
                    }
                }
            }
        }

        #[test]
        fn unapply_inverts_apply(
            vals in prop::collection::vec(-1e3f64..1e3, 24),
            scales in prop::collection::vec(0.05f64..8.0, 24),
        ) {
            let dims = Dims::new(2, 3, 4);
            let r = Tensor3::from_vec(dims, vals).unwrap();
            let m = QualityMap3D::from_tensor(Tensor3::from_vec(dims, scales).unwrap()).unwrap();
            let back = unapply_map(&apply_map(&r, &m).unwrap(), &m).unwrap();
            for (a, b) in back.as_slice().iter().zip(r.as_slice()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
