//! Bit-rate matching: pick an anchor model and a Δβ whose rate lands near a target.
//!
//! The pipeline is model selection by relative distance to each anchor's
//! default rate, a log-linear fit through the two extreme Δβ values, one
//! validation at the fitted Δβ, and an integer bisection in a ±100 window.
//! Every validation re-codes the cached latent; nothing is re-synthesized.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::quality_map::{DeltaBeta, SpatialQualityMap, DELTA_BETA_MAX, DELTA_BETA_MIN};
use crate::surrogate::{rate_for_delta, CachedPicture, CodecError, EncodeParams, ModelSuite};

#[derive(Debug, Error)]
pub enum BrmError {
    #[error("invalid rate-matching configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("rates must be positive and finite, got {0}")]
    NonPositiveRate(f64),
    #[error("need at least one anchor rate")]
    NoAnchors,
    #[error("fit points share delta beta {0}")]
    CoincidentDelta(i32),
    #[error("linear fit has zero slope")]
    DegenerateFit,
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Search parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrmConfig {
    /// Largest accepted `|bpp - target| / target`.
    pub max_rate_diff: f64,
    pub delta_min: i32,
    pub delta_max: i32,
    pub bisection_halfwidth: i32,
}

impl Default for BrmConfig {
    fn default() -> Self {
        Self {
            max_rate_diff: 0.10,
            delta_min: DELTA_BETA_MIN,
            delta_max: DELTA_BETA_MAX,
            bisection_halfwidth: 100,
        }
    }
}

impl BrmConfig {
    /// Tight-matching preset (1%).
    pub fn v2() -> Self {
        Self {
            max_rate_diff: 0.01,
            ..Self::default()
        }
    }

    pub fn with_max_rate_diff(self, max_rate_diff: f64) -> Self {
        Self {
            max_rate_diff,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), BrmError> {
        if !(self.max_rate_diff > 0.0 && self.max_rate_diff < 1.0) {
            return Err(BrmError::InvalidConfig("max_rate_diff must lie in (0, 1)"));
        }
        if self.delta_min >= self.delta_max {
            return Err(BrmError::InvalidConfig("delta_min must be below delta_max"));
        }
        if self.bisection_halfwidth < 0 {
            return Err(BrmError::InvalidConfig(
                "bisection_halfwidth must be non-negative",
            ));
        }
        Ok(())
    }

    /// Search window around `center`, clipped to the signalable range.
    pub fn window(&self, center: i32) -> (i32, i32) {
        (
            (center - self.bisection_halfwidth).max(self.delta_min),
            (center + self.bisection_halfwidth).min(self.delta_max),
        )
    }
}

/// `ln R ≈ a·Δβ + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub a: f64,
    pub b: f64,
}

impl LinearFit {
    pub fn rate_at(&self, delta: f64) -> f64 {
        (self.a * delta + self.b).exp()
    }
}

/// One validated point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub delta_beta: i32,
    pub bpp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrmResult {
    pub model_id: u8,
    pub delta_beta: DeltaBeta,
    pub achieved_bpp: f64,
    pub target_bpp: f64,
    pub default_rate: f64,
    /// `|achieved - target| / target`.
    pub relative_diff: f64,
    /// Validations in the order they ran, without repeats.
    pub evaluations: Vec<Evaluation>,
    pub met_threshold: bool,
}

impl BrmResult {
    pub const TRACE_CSV_HEADER: &'static str = "delta_beta,bpp";

    pub fn validations(&self) -> usize {
        self.evaluations.len()
    }

    pub fn trace_csv(&self) -> String {
        let mut out = format!("{}\n", Self::TRACE_CSV_HEADER);
        for e in &self.evaluations {
            out.push_str(&format!("{},{:.6}\n", e.delta_beta, e.bpp));
        }
        out
    }
}

fn check_rate(r: f64) -> Result<f64, BrmError> {
    if r.is_finite() && r > 0.0 {
        Ok(r)
    } else {
        Err(BrmError::NonPositiveRate(r))
    }
}

pub fn relative_diff(bpp: f64, target: f64) -> f64 {
    (bpp - target).abs() / target
}

/// Index of the anchor with the smallest `|R_d - R_t| / R_d`. Exact ties go to
/// the anchor with the higher default rate.
pub fn select_model(default_rates: &[f64], target: f64) -> Result<usize, BrmError> {
    check_rate(target)?;
    if default_rates.is_empty() {
        return Err(BrmError::NoAnchors);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, &rd) in default_rates.iter().enumerate() {
        let d = (check_rate(rd)? - target).abs() / rd;
        best = match best {
            Some((j, bd)) if d > bd || (d == bd && rd < default_rates[j]) => Some((j, bd)),
            _ => Some((i, d)),
        };
    }
    Ok(best.expect("non-empty").0)
}

pub fn fit_linear(p1: (i32, f64), p2: (i32, f64)) -> Result<LinearFit, BrmError> {
    if p1.0 == p2.0 {
        return Err(BrmError::CoincidentDelta(p1.0));
    }
    let (l1, l2) = (check_rate(p1.1)?.ln(), check_rate(p2.1)?.ln());
    let a = (l2 - l1) / f64::from(p2.0 - p1.0);
    Ok(LinearFit {
        a,
        b: l1 - a * f64::from(p1.0),
    })
}

/// Δβ where the fit predicts `target`, rounded and clamped to the config range.
pub fn initial_delta(fit: &LinearFit, target: f64, cfg: &BrmConfig) -> Result<i32, BrmError> {
    check_rate(target)?;
    if fit.a == 0.0 || !fit.a.is_finite() {
        return Err(BrmError::DegenerateFit);
    }
    let d = ((target.ln() - fit.b) / fit.a).round();
    Ok(d.clamp(f64::from(cfg.delta_min), f64::from(cfg.delta_max)) as i32)
}

/// Memoizing wrapper that records each distinct validation once.
struct Probe<F> {
    validate: F,
    seen: BTreeMap<i32, f64>,
    trace: Vec<Evaluation>,
}

impl<F, E> Probe<F>
where
    F: FnMut(i32) -> Result<f64, E>,
{
    fn new(validate: F) -> Self {
        Self {
            validate,
            seen: BTreeMap::new(),
            trace: Vec::new(),
        }
    }

    fn rate(&mut self, delta: i32) -> Result<f64, E> {
        if let Some(&r) = self.seen.get(&delta) {
            return Ok(r);
        }
        let r = (self.validate)(delta)?;
        self.seen.insert(delta, r);
        self.trace.push(Evaluation {
            delta_beta: delta,
            bpp: r,
        });
        Ok(r)
    }
}

/// Rate the search steers toward: the anchor rate pulled into the acceptance band.
fn steering_rate(target: f64, anchor: f64, max_rate_diff: f64) -> f64 {
    anchor.clamp(
        target * (1.0 - max_rate_diff),
        target * (1.0 + max_rate_diff),
    )
}

/// Bisects `[lo, hi]` for the first Δβ whose rate reaches the steering rate.
///
/// The two points around that boundary hold the best candidate of any
/// non-decreasing rate function, so both end up validated.
fn bisect<F, E>(
    probe: &mut Probe<F>,
    delta1: i32,
    target: f64,
    anchor: f64,
    cfg: &BrmConfig,
) -> Result<(), E>
where
    F: FnMut(i32) -> Result<f64, E>,
{
    let goal = steering_rate(target, anchor, cfg.max_rate_diff);
    let (wlo, whi) = cfg.window(delta1);
    probe.rate(delta1)?;
    // Sentinels just outside the window are never evaluated.
    let (mut lo, mut hi) = (wlo - 1, whi + 1);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if probe.rate(mid)? >= goal {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(())
}

/// Chosen point among `candidates`: within the threshold and closest to the
/// anchor rate (ties to smaller |Δβ|), else the smallest relative difference.
pub fn select_candidate(
    candidates: &[Evaluation],
    target: f64,
    anchor: f64,
    max_rate_diff: f64,
) -> Option<(Evaluation, bool)> {
    let key = |e: &Evaluation, metric: f64| (metric, e.delta_beta.unsigned_abs(), e.delta_beta);
    let better =
        |a: (f64, u32, i32), b: (f64, u32, i32)| a.partial_cmp(&b).is_some_and(|o| o.is_lt());
    let pick = |metric: &dyn Fn(&Evaluation) -> f64, filter: &dyn Fn(&Evaluation) -> bool| {
        candidates
            .iter()
            .filter(|e| filter(e))
            .fold(None::<&Evaluation>, |best, e| match best {
                Some(b) if !better(key(e, metric(e)), key(b, metric(b))) => Some(b),
                _ => Some(e),
            })
            .copied()
    };
    let qualifies = |e: &Evaluation| relative_diff(e.bpp, target) <= max_rate_diff;
    pick(&|e| (e.bpp - anchor).abs(), &qualifies)
        .map(|e| (e, true))
        .or_else(|| pick(&|e| relative_diff(e.bpp, target), &|_| true).map(|e| (e, false)))
}

/// Walks the selected point along its rate plateau toward Δβ = 0.
///
/// Bisection pins down which rate wins but not where on a flat stretch of
/// equal rates it sits; the scan rule prefers the smallest |Δβ| there. One
/// validation next to the selected point settles the common, strictly
/// increasing case; only a real plateau costs a further bisection.
fn refine<F, E>(
    probe: &mut Probe<F>,
    target: f64,
    anchor: f64,
    cfg: &BrmConfig,
    (wlo, whi): (i32, i32),
) -> Result<(), E>
where
    F: FnMut(i32) -> Result<f64, E>,
{
    let (best, _) = select_candidate(&probe.trace, target, anchor, cfg.max_rate_diff)
        .expect("at least one validation");
    let d0 = best.delta_beta;
    if !(wlo..=whi).contains(&d0) {
        return Ok(());
    }
    let (step, limit) = if d0 > 0 {
        (-1, wlo.max(0))
    } else {
        (1, whi.min(0))
    };
    let reach = (limit - d0) * step;
    if reach <= 0 || probe.rate(d0 + step)? != best.bpp {
        return Ok(());
    }
    // Offsets from d0: `same` is on the plateau, `other` is past its end.
    let mut same = 1;
    let mut other = probe
        .seen
        .iter()
        .filter(|&(&d, &r)| r != best.bpp && (2..=reach).contains(&((d - d0) * step)))
        .map(|(&d, _)| (d - d0) * step)
        .min()
        .unwrap_or(reach + 1);
    while other - same > 1 {
        let mid = same + (other - same) / 2;
        if probe.rate(d0 + step * mid)? == best.bpp {
            same = mid;
        } else {
            other = mid;
        }
    }
    Ok(())
}

fn search<F, E>(
    probe: &mut Probe<F>,
    delta1: i32,
    target: f64,
    anchor: f64,
    cfg: &BrmConfig,
) -> Result<(), E>
where
    F: FnMut(i32) -> Result<f64, E>,
{
    bisect(probe, delta1, target, anchor, cfg)?;
    refine(probe, target, anchor, cfg, cfg.window(delta1))
}

fn finish(
    model_id: u8,
    trace: Vec<Evaluation>,
    target: f64,
    anchor: f64,
    cfg: &BrmConfig,
) -> BrmResult {
    let (best, met) = select_candidate(&trace, target, anchor, cfg.max_rate_diff)
        .expect("at least one validation");
    BrmResult {
        model_id,
        delta_beta: DeltaBeta(best.delta_beta),
        achieved_bpp: best.bpp,
        target_bpp: target,
        default_rate: anchor,
        relative_diff: relative_diff(best.bpp, target),
        evaluations: trace,
        met_threshold: met,
    }
}

/// Validates `delta1`, bisects its window, settles plateau ties, and selects
/// among the validated points.
///
/// `validate` must be non-decreasing in Δβ for the result to match an
/// exhaustive scan of the window.
pub fn bisection_search<F, E>(
    validate: F,
    delta1: i32,
    target: f64,
    anchor: f64,
    cfg: &BrmConfig,
) -> Result<BrmResult, E>
where
    F: FnMut(i32) -> Result<f64, E>,
{
    let mut probe = Probe::new(validate);
    search(&mut probe, delta1, target, anchor, cfg)?;
    Ok(finish(0, probe.trace, target, anchor, cfg))
}

/// Default rate (Δβ = 0) of each model in the suite, computed concurrently.
pub fn default_rates(
    cached: &CachedPicture,
    suite: &ModelSuite,
    spatial: Option<&SpatialQualityMap>,
) -> Result<Vec<f64>, BrmError> {
    let params = EncodeParams::uniform(DeltaBeta::ZERO, spatial);
    std::thread::scope(|s| {
        let handles: Vec<_> = suite
            .models()
            .iter()
            .map(|model| {
                s.spawn(move || -> Result<f64, CodecError> {
                    let latent = cached.latent(model)?;
                    Ok(rate_for_delta(&latent, model, &params, suite.log_cfg())?.bpp)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| Ok(h.join().expect("anchor validation panicked")?))
            .collect()
    })
}

/// Full rate-matching pipeline on a cached picture. Y and UV share the Δβ.
pub fn match_rate(
    cached: &CachedPicture,
    suite: &ModelSuite,
    target: f64,
    spatial: Option<&SpatialQualityMap>,
    cfg: &BrmConfig,
) -> Result<BrmResult, BrmError> {
    cfg.validate()?;
    check_rate(target)?;
    let anchors = default_rates(cached, suite, spatial)?;
    let idx = select_model(&anchors, target)?;
    let model = &suite.models()[idx];
    let latent = cached.latent(model)?;
    let mut probe = Probe::new(|d: i32| -> Result<f64, BrmError> {
        let params = EncodeParams::uniform(DeltaBeta(d), spatial);
        Ok(rate_for_delta(&latent, model, &params, suite.log_cfg())?.bpp)
    });
    let r_min = probe.rate(cfg.delta_min)?;
    let r_max = probe.rate(cfg.delta_max)?;
    let fit = fit_linear((cfg.delta_min, r_min), (cfg.delta_max, r_max))?;
    let delta1 = initial_delta(&fit, target, cfg)?;
    search(&mut probe, delta1, target, anchors[idx], cfg)?;
    Ok(finish(
        model.model_id,
        probe.trace,
        target,
        anchors[idx],
        cfg,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log_linear(a: f64, b: f64) -> impl Fn(i32) -> Result<f64, BrmError> {
        move |d| Ok((a * f64::from(d) + b).exp())
    }

    fn exhaustive(
        f: &dyn Fn(i32) -> f64,
        delta1: i32,
        target: f64,
        anchor: f64,
        cfg: &BrmConfig,
    ) -> (Evaluation, bool) {
        let (lo, hi) = cfg.window(delta1);
        let all: Vec<Evaluation> = (lo..=hi)
            .map(|d| Evaluation {
                delta_beta: d,
                bpp: f(d),
            })
            .collect();
        select_candidate(&all, target, anchor, cfg.max_rate_diff).unwrap()
    }

    #[test]
    fn select_model_examples() {
        assert_eq!(select_model(&[0.1, 0.3, 0.6, 1.1], 0.5).unwrap(), 2);
        assert_eq!(select_model(&[0.1, 0.3, 0.6, 1.1], 0.3).unwrap(), 1);
        // D_r = 1.0 vs 0.5.
        assert_eq!(select_model(&[0.5, 2.0], 1.0).unwrap(), 1);
        // Exact tie: |1 - 1.5|/1 = 0.5 = |3 - 1.5|/3.
        assert_eq!(select_model(&[1.0, 3.0], 1.5).unwrap(), 1);
        assert_eq!(select_model(&[3.0, 1.0], 1.5).unwrap(), 0);
        assert!(matches!(
            select_model(&[0.1, 0.0], 0.5),
            Err(BrmError::NonPositiveRate(_))
        ));
        assert!(matches!(
            select_model(&[0.1], -1.0),
            Err(BrmError::NonPositiveRate(_))
        ));
        assert!(matches!(select_model(&[], 1.0), Err(BrmError::NoAnchors)));
    }

    #[test]
    fn fit_examples() {
        let f = fit_linear((0, 1.0), (100, std::f64::consts::E)).unwrap();
        assert!((f.a - 0.01).abs() < 1e-15 && f.b.abs() < 1e-15);
        assert_eq!(fit_linear((-5, 2.0), (9, 2.0)).unwrap().a, 0.0);
        assert!(matches!(
            fit_linear((3, 1.0), (3, 2.0)),
            Err(BrmError::CoincidentDelta(3))
        ));
        let cfg = BrmConfig::default();
        assert_eq!(initial_delta(&f, 0.5f64.exp(), &cfg).unwrap(), 50);
        assert_eq!(initial_delta(&f, 1e-9, &cfg).unwrap(), -1069);
        assert_eq!(initial_delta(&f, 1e9, &cfg).unwrap(), 702);
        let flat = LinearFit { a: 0.0, b: 1.0 };
        assert!(matches!(
            initial_delta(&flat, 1.0, &cfg),
            Err(BrmError::DegenerateFit)
        ));
    }

    #[test]
    fn config_checks() {
        assert!(BrmConfig::default().validate().is_ok());
        assert_eq!(BrmConfig::v2().max_rate_diff, 0.01);
        assert!(BrmConfig::default()
            .with_max_rate_diff(0.0)
            .validate()
            .is_err());
        assert!(BrmConfig::default()
            .with_max_rate_diff(1.0)
            .validate()
            .is_err());
        let cfg = BrmConfig {
            delta_min: 5,
            delta_max: 5,
            ..BrmConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert_eq!(BrmConfig::default().window(-1000), (-1069, -900));
        assert_eq!(BrmConfig::default().window(650), (550, 702));
    }

    #[test]
    fn target_at_anchor_returns_zero() {
        let cfg = BrmConfig::default();
        let f = log_linear(0.003, -1.0);
        let r0 = (-1.0f64).exp();
        let res = bisection_search(f, 0, r0, r0, &cfg).unwrap();
        assert_eq!(res.delta_beta, DeltaBeta(0));
        assert_eq!(res.relative_diff, 0.0);
        assert!(res.met_threshold);
    }

    #[test]
    fn log_linear_oracle_hits_initial_delta() {
        let cfg = BrmConfig::default();
        let (a, b) = (0.002, -0.7);
        let f = log_linear(a, b);
        let fit = fit_linear((-1069, f(-1069).unwrap()), (702, f(702).unwrap())).unwrap();
        assert!((fit.a - a).abs() < 1e-12 && (fit.b - b).abs() < 1e-12);
        let target = fit.rate_at(137.0);
        let d1 = initial_delta(&fit, target, &cfg).unwrap();
        assert_eq!(d1, 137);
        // Anchor equal to the target: Δβ₁ is both exact and closest to the anchor.
        let res = bisection_search(f, d1, target, target, &cfg).unwrap();
        assert_eq!(res.delta_beta, DeltaBeta(137));
        assert!(res.relative_diff < 1e-12);
    }

    #[test]
    fn prefers_point_nearest_anchor() {
        // Band [0.9, 1.1]; anchor above the band pulls the choice to its top.
        let cfg = BrmConfig::default();
        let f = log_linear(0.001, 0.0);
        let res = bisection_search(f, 0, 1.0, 5.0, &cfg).unwrap();
        assert!(res.met_threshold);
        assert_eq!(res.delta_beta, DeltaBeta(95)); // e^0.095 = 1.0997
        let res = bisection_search(log_linear(0.001, 0.0), 0, 1.0, 0.2, &cfg).unwrap();
        assert_eq!(res.delta_beta, DeltaBeta(-100)); // e^-0.1 = 0.905 is the window edge
    }

    #[test]
    fn unreachable_target_reports_failure() {
        let cfg = BrmConfig::default();
        let res = bisection_search(log_linear(0.001, 0.0), 0, 3.0, 1.0, &cfg).unwrap();
        assert!(!res.met_threshold);
        assert_eq!(res.delta_beta, DeltaBeta(100));
        assert!(res.evaluations.len() <= 10);
    }

    #[test]
    fn validation_errors_propagate() {
        let cfg = BrmConfig::default();
        let res = bisection_search(
            |d| if d < -10 { Err(d) } else { Ok(1.0) },
            0,
            1.0,
            1.0,
            &cfg,
        );
        assert!(matches!(res, Err(d) if d < -10));
    }

    proptest! {
        #[test]
        fn matches_exhaustive_scan_on_strictly_increasing(
            steps in prop::collection::vec(1e-4f64..0.02, 1772),
            base in -3.0f64..0.5,
            delta1 in -1069i32..=702,
            target_shift in -0.3f64..0.3,
            anchor_shift in -0.5f64..0.5,
            thr in 0.005f64..0.2,
        ) {
            let mut cum = vec![base];
            for s in &steps { cum.push(cum.last().unwrap() + s); }
            let f = move |d: i32| cum[(d + 1069) as usize].exp();
            let target = f(delta1) * target_shift.exp();
            let anchor = f(delta1) * anchor_shift.exp();
            let cfg = BrmConfig::default().with_max_rate_diff(thr);
            let res = bisection_search(|d| Ok::<_, ()>(f(d)), delta1, target, anchor, &cfg).unwrap();
            let (want, met) = exhaustive(&f, delta1, target, anchor, &cfg);
            prop_assert_eq!(res.delta_beta.value(), want.delta_beta);
            prop_assert_eq!(res.met_threshold, met);
            prop_assert!(res.evaluations.len() <= 10);
            let (lo, hi) = cfg.window(delta1);
            prop_assert!(res.evaluations.iter().all(|e| (lo..=hi).contains(&e.delta_beta)));
            prop_assert!(res.evaluations.iter().any(|e| e.bpp == res.achieved_bpp));
        }

        #[test]
        fn matches_exhaustive_scan_on_plateaus(
            jumps in prop::collection::vec(prop::option::weighted(0.15, 1e-3f64..0.05), 1772),
            delta1 in -1069i32..=702,
            target_shift in -0.2f64..0.2,
            anchor_shift in -0.5f64..0.5,
            thr in 0.005f64..0.2,
        ) {
            let mut cum = vec![-1.0f64];
            for j in &jumps { cum.push(cum.last().unwrap() + j.unwrap_or(0.0)); }
            let f = move |d: i32| cum[(d + 1069) as usize].exp();
            let target = f(delta1) * target_shift.exp();
            let anchor = f(delta1) * anchor_shift.exp();
            let cfg = BrmConfig::default().with_max_rate_diff(thr);
            let res = bisection_search(|d| Ok::<_, ()>(f(d)), delta1, target, anchor, &cfg).unwrap();
            let (want, met) = exhaustive(&f, delta1, target, anchor, &cfg);
            prop_assert_eq!(res.delta_beta.value(), want.delta_beta);
            prop_assert_eq!(res.achieved_bpp, want.bpp);
            prop_assert_eq!(res.met_threshold, met);
        }
    }
}
