use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use super::RangeCoderError;

/// Total frequency of every table.
pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;

/// Largest coded magnitude; values beyond fold into the extreme bins.
pub const SYMBOL_LIMIT: i32 = 255;
const SYMBOL_COUNT: usize = (2 * SYMBOL_LIMIT + 1) as usize;

/// Log-grid step used to share tables between nearby standard deviations.
pub const SIGMA_GRID_STEP: f64 = 0.2;
const SIGMA_KEY_LIMIT: i32 = 50;

/// Upper tail `1 - Φ(x)` of the standard normal.
///
/// Chebyshev fit to `erfc`; fractional error below 1.2e-7, so the absolute
/// error of the returned tail is below 6e-8 everywhere.
pub fn normal_tail(x: f64) -> f64 {
    let z = x.abs() * std::f64::consts::FRAC_1_SQRT_2;
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98
                                + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77))))))));
    let erfc = t * poly.exp();
    if x >= 0.0 {
        0.5 * erfc
    } else {
        1.0 - 0.5 * erfc
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    normal_tail(-x)
}

/// Quantized cumulative frequencies over symbols `-255..=255`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    cumulative: Vec<u32>,
    symbol_offset: i32,
}

impl CdfTable {
    /// Builds a table from explicit frequencies; all must be positive and sum to 2^16.
    pub fn from_frequencies(freqs: &[u32], symbol_offset: i32) -> Result<Self, RangeCoderError> {
        if freqs.is_empty() || freqs.contains(&0) {
            return Err(RangeCoderError::InvalidTable);
        }
        let mut cumulative = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cumulative.push(0);
        for &f in freqs {
            acc = acc.checked_add(f).ok_or(RangeCoderError::InvalidTable)?;
            cumulative.push(acc);
        }
        if acc != PROB_TOTAL {
            return Err(RangeCoderError::InvalidTable);
        }
        Ok(Self {
            cumulative,
            symbol_offset,
        })
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cumulative
    }

    pub fn symbol_offset(&self) -> i32 {
        self.symbol_offset
    }

    pub fn symbol_count(&self) -> usize {
        self.cumulative.len() - 1
    }

    pub fn min_symbol(&self) -> i32 {
        self.symbol_offset
    }

    pub fn max_symbol(&self) -> i32 {
        self.symbol_offset + self.symbol_count() as i32 - 1
    }

    pub fn clamp_symbol(&self, symbol: i32) -> i32 {
        symbol.clamp(self.min_symbol(), self.max_symbol())
    }

    /// `(start, freq)` of an in-range symbol.
    #[inline]
    pub fn range_of(&self, symbol: i32) -> (u32, u32) {
        let idx = (symbol - self.symbol_offset) as usize;
        let start = self.cumulative[idx];
        (start, self.cumulative[idx + 1] - start)
    }

    pub fn frequency(&self, symbol: i32) -> u32 {
        self.range_of(self.clamp_symbol(symbol)).1
    }

    pub fn probability(&self, symbol: i32) -> f64 {
        f64::from(self.frequency(symbol)) / f64::from(PROB_TOTAL)
    }

    /// Symbol whose cumulative slot contains `value`.
    #[inline]
    pub(crate) fn lookup(&self, value: u32) -> (i32, u32, u32) {
        let idx = self.cumulative.partition_point(|&c| c <= value) - 1;
        let start = self.cumulative[idx];
        (
            idx as i32 + self.symbol_offset,
            start,
            self.cumulative[idx + 1] - start,
        )
    }

    /// Shannon entropy of the quantized distribution in bits.
    pub fn entropy_bits(&self) -> f64 {
        self.cumulative
            .windows(2)
            .map(|w| {
                let p = f64::from(w[1] - w[0]) / f64::from(PROB_TOTAL);
                -p * p.log2()
            })
            .sum()
    }
}

/// Discretized zero-mean Gaussian with tails folded into `±255`.
///
/// Probabilities are quantized to a 16-bit total with a floor of one count per
/// symbol. Leftover counts go to the largest fractional parts in mirrored
/// pairs, so the table is exactly symmetric.
pub fn build_cdf(sigma: f64) -> Result<CdfTable, RangeCoderError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(RangeCoderError::InvalidSigma(sigma));
    }
    let limit = SYMBOL_LIMIT as usize;
    // probs[k] for k = 0..=255; the negative half mirrors it.
    let tail = |x: f64| normal_tail(x / sigma);
    let mut probs = vec![0.0f64; limit + 1];
    probs[0] = 1.0 - 2.0 * tail(0.5);
    for (k, p) in probs.iter_mut().enumerate().take(limit).skip(1) {
        *p = tail(k as f64 - 0.5) - tail(k as f64 + 0.5);
    }
    probs[limit] = tail(limit as f64 - 0.5);

    let budget = f64::from(PROB_TOTAL - SYMBOL_COUNT as u32);
    let mut half: Vec<u32> = Vec::with_capacity(limit + 1);
    let mut fracs: Vec<(f64, usize)> = Vec::with_capacity(limit);
    for (k, &p) in probs.iter().enumerate() {
        let raw = p.max(0.0) * budget;
        let floor = raw.floor();
        half.push(1 + floor as u32);
        if k > 0 {
            fracs.push((raw - floor, k));
        }
    }
    let total = |half: &[u32]| -> i64 {
        i64::from(half[0]) + 2 * half[1..].iter().map(|&f| i64::from(f)).sum::<i64>()
    };
    let mut rem = i64::from(PROB_TOTAL) - total(&half);
    fracs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, k) in &fracs {
        if rem < 2 {
            break;
        }
        half[k] += 1;
        rem -= 2;
    }
    if rem > 0 {
        half[0] += rem as u32;
    } else if rem < 0 {
        // Only reachable if the float mass exceeded one; trim the center bin.
        half[0] = half[0].saturating_sub((-rem) as u32).max(1);
    }

    let freqs: Vec<u32> = (-SYMBOL_LIMIT..=SYMBOL_LIMIT)
        .map(|s| half[s.unsigned_abs() as usize])
        .collect();
    CdfTable::from_frequencies(&freqs, -SYMBOL_LIMIT)
}

/// Grid key of `sigma` on the shared log grid.
pub fn sigma_key(sigma: f64) -> i32 {
    let k = (sigma.ln() / SIGMA_GRID_STEP).round();
    (k as i32).clamp(-SIGMA_KEY_LIMIT, SIGMA_KEY_LIMIT)
}

pub fn sigma_for_key(key: i32) -> f64 {
    (f64::from(key) * SIGMA_GRID_STEP).exp()
}

/// Memoized tables keyed by the log-grid index of sigma.
#[derive(Debug, Default)]
pub struct CdfCache {
    tables: Mutex<HashMap<i32, Arc<CdfTable>>>,
}

impl CdfCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Process-wide shared cache.
    pub fn global() -> &'static CdfCache {
        static CACHE: OnceLock<CdfCache> = OnceLock::new();
        CACHE.get_or_init(CdfCache::new)
    }

    pub fn table_for_key(&self, key: i32) -> Arc<CdfTable> {
        let key = key.clamp(-SIGMA_KEY_LIMIT, SIGMA_KEY_LIMIT);
        let mut tables = self.tables.lock().unwrap_or_else(|e| e.into_inner());
        tables
            .entry(key)
            .or_insert_with(|| {
                Arc::new(build_cdf(sigma_for_key(key)).expect("grid sigma is positive"))
            })
            .clone()
    }

    /// Table for `sigma` rounded to the log grid. Non-positive sigma maps to the narrowest table.
    pub fn table(&self, sigma: f64) -> Arc<CdfTable> {
        if sigma > 0.0 {
            self.table_for_key(sigma_key(sigma))
        } else {
            self.table_for_key(-SIGMA_KEY_LIMIT)
        }
    }
}
