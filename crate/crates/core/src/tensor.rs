//! Dense channel-major 3D tensor used for latents and quality maps.

use std::fmt;

/// Shape of a `C × h × w` tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Row-major `[c][i][j]` storage of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: Dims,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }

    /// Wraps `data` laid out as `[c][i][j]`. Returns `None` on a length mismatch.
    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Option<Self> {
        (data.len() == dims.len()).then_some(Self { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for c in 0..dims.channels {
            for i in 0..dims.height {
                for j in 0..dims.width {
                    data.push(f(c, i, j));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        debug_assert!(c < self.dims.channels && i < self.dims.height && j < self.dims.width);
        (c * self.dims.height + i) * self.dims.width + j
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.index(c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, value: f64) {
        let idx = self.index(c, i, j);
        self.data[idx] = value;
    }

    /// Values of channel `c` as a contiguous plane.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.dims.plane();
        &self.data[c * plane..(c + 1) * plane]
    }
}
