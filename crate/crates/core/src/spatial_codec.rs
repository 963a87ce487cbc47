//! Lossless coding of spatial quality maps.
//!
//! Each index is predicted from its causal neighbours (left, up) and only the
//! residual is transmitted. Residuals are written in raster order as order-0
//! signed Exp-Golomb codes (zigzag mapped), packed MSB-first and zero-padded to
//! a byte boundary.

use thiserror::Error;

use crate::quality_map::{SpatialQualityMap, SPATIAL_INDEX_MAX, SPATIAL_INDEX_MIN};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpatialCodecError {
    #[error("position ({i}, {j}) outside {height}x{width} map")]
    OutOfBounds {
        i: usize,
        j: usize,
        height: usize,
        width: usize,
    },
    #[error("spatial map stream truncated")]
    Truncated,
    #[error("reconstructed index {value} at ({i}, {j}) outside [-8, 8]")]
    CorruptIndex { i: usize, j: usize, value: i64 },
    #[error("residual grid must be non-empty and rectangular")]
    BadGrid,
    #[error("exp-golomb prefix longer than 32 bits")]
    CodeTooLong,
}

/// Prediction residuals `q - q_pred` in raster order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidualGrid {
    height: usize,
    width: usize,
    residuals: Vec<i32>,
}

impl ResidualGrid {
    pub fn new(
        height: usize,
        width: usize,
        residuals: Vec<i32>,
    ) -> Result<Self, SpatialCodecError> {
        if height == 0 || width == 0 || residuals.len() != height * width {
            return Err(SpatialCodecError::BadGrid);
        }
        Ok(Self {
            height,
            width,
            residuals,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn residuals(&self) -> &[i32] {
        &self.residuals
    }

    pub fn get(&self, i: usize, j: usize) -> i32 {
        self.residuals[i * self.width + j]
    }
}

/// Causal predictor over a raster-ordered grid accessor.
fn predict_with(get: impl Fn(usize, usize) -> i32, i: usize, j: usize) -> i32 {
    match (i, j) {
        (0, 0) => 0,
        (0, _) => get(0, j - 1),
        (_, 0) => get(i - 1, 0),
        _ => (get(i, j - 1) + get(i - 1, j)).div_euclid(2),
    }
}

/// Predicted index at `(i, j)` from the left and upper neighbours.
///
/// The mean of two neighbours is floored toward negative infinity.
pub fn predict(map: &SpatialQualityMap, i: usize, j: usize) -> Result<i32, SpatialCodecError> {
    if i >= map.height() || j >= map.width() {
        return Err(SpatialCodecError::OutOfBounds {
            i,
            j,
            height: map.height(),
            width: map.width(),
        });
    }
    Ok(predict_with(|a, b| map.get(a, b), i, j))
}

pub fn compute_residuals(map: &SpatialQualityMap) -> ResidualGrid {
    let (h, w) = (map.height(), map.width());
    let mut residuals = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            residuals.push(map.get(i, j) - predict_with(|a, b| map.get(a, b), i, j));
        }
    }
    ResidualGrid {
        height: h,
        width: w,
        residuals,
    }
}

pub fn reconstruct(grid: &ResidualGrid) -> Result<SpatialQualityMap, SpatialCodecError> {
    let (h, w) = (grid.height, grid.width);
    let mut q = vec![0i32; h * w];
    for i in 0..h {
        for j in 0..w {
            let pred = predict_with(|a, b| q[a * w + b], i, j);
            let value = i64::from(pred) + i64::from(grid.get(i, j));
            if !(i64::from(SPATIAL_INDEX_MIN)..=i64::from(SPATIAL_INDEX_MAX)).contains(&value) {
                return Err(SpatialCodecError::CorruptIndex { i, j, value });
            }
            q[i * w + j] = value as i32;
        }
    }
    Ok(SpatialQualityMap::new(h, w, q).expect("indices validated during reconstruction"))
}

/// 0, -1, 1, -2, 2, ... -> 0, 1, 2, 3, 4, ...
pub fn zigzag(v: i32) -> u32 {
    ((v << 1) ^ (v >> 31)) as u32
}

pub fn unzigzag(u: u32) -> i32 {
    ((u >> 1) as i32) ^ -((u & 1) as i32)
}

#[derive(Debug, Default)]
pub(crate) struct BitWriter {
    bytes: Vec<u8>,
    acc: u8,
    filled: u8,
}

impl BitWriter {
    pub fn write_bit(&mut self, bit: bool) {
        self.acc = (self.acc << 1) | u8::from(bit);
        self.filled += 1;
        if self.filled == 8 {
            self.bytes.push(self.acc);
            self.acc = 0;
            self.filled = 0;
        }
    }

    pub fn write_bits(&mut self, value: u64, count: u32) {
        for k in (0..count).rev() {
            self.write_bit((value >> k) & 1 == 1);
        }
    }

    /// Order-0 Exp-Golomb code of `value`.
    pub fn write_exp_golomb(&mut self, value: u32) {
        let v = u64::from(value) + 1;
        let len = 64 - v.leading_zeros();
        self.write_bits(0, len - 1);
        self.write_bits(v, len);
    }

    pub fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.acc <<= 8 - self.filled;
            self.bytes.push(self.acc);
        }
        self.bytes
    }
}

pub(crate) struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn read_bit(&mut self) -> Result<bool, SpatialCodecError> {
        let byte = *self
            .bytes
            .get(self.pos / 8)
            .ok_or(SpatialCodecError::Truncated)?;
        let bit = (byte >> (7 - self.pos % 8)) & 1 == 1;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_exp_golomb(&mut self) -> Result<u32, SpatialCodecError> {
        let mut zeros = 0u32;
        while !self.read_bit()? {
            zeros += 1;
            if zeros > 32 {
                return Err(SpatialCodecError::CodeTooLong);
            }
        }
        let mut v: u64 = 1;
        for _ in 0..zeros {
            v = (v << 1) | u64::from(self.read_bit()?);
        }
        u32::try_from(v - 1).map_err(|_| SpatialCodecError::CodeTooLong)
    }
}

/// Bit length of the signed Exp-Golomb code for `v`.
pub fn signed_code_len(v: i32) -> u32 {
    let n = u64::from(zigzag(v)) + 1;
    2 * (63 - n.leading_zeros()) + 1
}

pub fn serialize(map: &SpatialQualityMap) -> Vec<u8> {
    let grid = compute_residuals(map);
    let mut w = BitWriter::default();
    for &r in grid.residuals() {
        w.write_exp_golomb(zigzag(r));
    }
    w.finish()
}

/// Decodes `height * width` residuals and rebuilds the map. Trailing padding is ignored.
pub fn deserialize(
    bytes: &[u8],
    height: usize,
    width: usize,
) -> Result<SpatialQualityMap, SpatialCodecError> {
    if height == 0 || width == 0 {
        return Err(SpatialCodecError::BadGrid);
    }
    let mut r = BitReader::new(bytes);
    let residuals = (0..height * width)
        .map(|_| r.read_exp_golomb().map(unzigzag))
        .collect::<Result<Vec<_>, _>>()?;
    reconstruct(&ResidualGrid::new(height, width, residuals)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(rows: &[&[i32]]) -> SpatialQualityMap {
        SpatialQualityMap::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn predictor_cases() {
        let m = map(&[&[3, 3], &[1, 0]]);
        assert_eq!(predict(&m, 0, 0).unwrap(), 0);
        assert_eq!(predict(&m, 0, 1).unwrap(), 3);
        assert_eq!(predict(&m, 1, 0).unwrap(), 3);
        // left = 1, up = 3
        assert_eq!(predict(&m, 1, 1).unwrap(), 2);

        // left = -3, up = 0 -> floor(-1.5)
        let m = map(&[&[0, 0], &[-3, 5]]);
        assert_eq!(predict(&m, 1, 1).unwrap(), -2);
        assert!(matches!(
            predict(&m, 2, 0),
            Err(SpatialCodecError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn residuals_of_constant_map() {
        let m = SpatialQualityMap::filled(3, 4, -5).unwrap();
        let r = compute_residuals(&m);
        assert_eq!(r.get(0, 0), -5);
        assert!(r.residuals()[1..].iter().all(|&v| v == 0));
        assert_eq!(reconstruct(&r).unwrap(), m);

        let one = SpatialQualityMap::filled(1, 1, 5).unwrap();
        assert_eq!(compute_residuals(&one).residuals(), &[5]);
    }

    #[test]
    fn zero_residuals_reconstruct_zero_map() {
        let r = ResidualGrid::new(2, 3, vec![0; 6]).unwrap();
        assert_eq!(
            reconstruct(&r).unwrap(),
            SpatialQualityMap::filled(2, 3, 0).unwrap()
        );
    }

    #[test]
    fn reconstruct_rejects_out_of_range() {
        let r = ResidualGrid::new(1, 2, vec![8, 1]).unwrap();
        assert_eq!(
            reconstruct(&r),
            Err(SpatialCodecError::CorruptIndex {
                i: 0,
                j: 1,
                value: 9
            })
        );
    }

    #[test]
    fn zigzag_order() {
        let expect = [(0, 0), (-1, 1), (1, 2), (-2, 3), (2, 4)];
        for (v, u) in expect {
            assert_eq!(zigzag(v), u);
            assert_eq!(unzigzag(u), v);
        }
    }

    #[test]
    fn codeword_bits() {
        let one = SpatialQualityMap::filled(1, 1, 0).unwrap();
        assert_eq!(serialize(&one), vec![0b1000_0000]);

        // residual -1 -> zigzag 1 -> "010"
        let m = SpatialQualityMap::filled(1, 1, -1).unwrap();
        assert_eq!(serialize(&m), vec![0b0100_0000]);
        assert_eq!(signed_code_len(-1), 3);
        assert_eq!(signed_code_len(0), 1);
        assert_eq!(signed_code_len(2), 5);
    }

    #[test]
    fn truncated_stream() {
        let m = map(&[&[8, -8], &[-8, 8]]);
        let bytes = serialize(&m);
        assert_eq!(
            deserialize(&bytes[..bytes.len() - 1], 2, 2),
            Err(SpatialCodecError::Truncated)
        );
        assert_eq!(deserialize(&[], 1, 1), Err(SpatialCodecError::Truncated));
        assert_eq!(
            deserialize(&[0, 0, 0, 0, 0], 1, 1),
            Err(SpatialCodecError::CodeTooLong)
        );
    }

    #[test]
    fn constant_map_size_bound() {
        for k in -8..=8 {
            let m = SpatialQualityMap::filled(7, 9, k).unwrap();
            let n = 63;
            let bound = (signed_code_len(k) as usize + (n - 1)).div_ceil(8);
            assert!(serialize(&m).len() <= bound);
        }
    }

    fn arb_map(max_h: usize, max_w: usize) -> impl Strategy<Value = SpatialQualityMap> {
        (1..=max_h, 1..=max_w).prop_flat_map(|(h, w)| {
            prop::collection::vec(-8i32..=8, h * w)
                .prop_map(move |v| SpatialQualityMap::new(h, w, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn residual_round_trip(m in arb_map(12, 12)) {
            prop_assert_eq!(reconstruct(&compute_residuals(&m)).unwrap(), m);
        }

        #[test]
        fn serialize_round_trip(m in arb_map(12, 12)) {
            let bytes = serialize(&m);
            prop_assert_eq!(deserialize(&bytes, m.height(), m.width()).unwrap(), m);
        }
    }
}
