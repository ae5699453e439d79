//! Convergence diagnostics for the single-clan survival probability and the
//! conditioned-walk functional limits.

use serde::Serialize;

use crate::env_model::{classify_regime, Family, IncrementLaw, RegimeClass, StepLaw, CLOSED_FORM_TOL};
use crate::error::{Error, Result};
use crate::mc::{Engine, Estimate, McRng, SeedSpec};
use crate::tilt::{is_normalized_a, tilt_for_regime, IsConfig, LogAccumulator, TiltedLaw, SERIES_MAX_LEN, SERIES_TAIL_TOL};
use crate::walk::CompensatedSum;

pub use crate::tilt::LambdaHorizon as Horizon;

/// Band for successive normalized ratios in the strong regime.
pub const STRONG_BAND: (f64, f64) = (0.8, 1.25);
/// Band for the driftless-tilt regimes.
pub const SLOW_BAND: (f64, f64) = (0.7, 1.4);
/// Maximum max/min spread of the functional-limit sequences.
pub const GUIV_SPREAD: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TheoremTarget {
    T1FixedN,
    T1Ratio,
    T2FixedN,
    T2Ratio,
    T3FixedN,
    T3FixedI,
    T3Ratio,
    L5Gh,
    L5H,
}

impl TheoremTarget {
    pub const ALL: [TheoremTarget; 9] = [
        TheoremTarget::T1FixedN,
        TheoremTarget::T1Ratio,
        TheoremTarget::T2FixedN,
        TheoremTarget::T2Ratio,
        TheoremTarget::T3FixedN,
        TheoremTarget::T3FixedI,
        TheoremTarget::T3Ratio,
        TheoremTarget::L5Gh,
        TheoremTarget::L5H,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TheoremTarget::T1FixedN => "T1_fixedN",
            TheoremTarget::T1Ratio => "T1_ratio",
            TheoremTarget::T2FixedN => "T2_fixedN",
            TheoremTarget::T2Ratio => "T2_ratio",
            TheoremTarget::T3FixedN => "T3_fixedN",
            TheoremTarget::T3FixedI => "T3_fixed_i",
            TheoremTarget::T3Ratio => "T3_ratio",
            TheoremTarget::L5Gh => "L5_gh",
            TheoremTarget::L5H => "L5_h",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }

    /// Regime name the law must have, `None` for the functional limits,
    /// which accept any law whose tilt is driftless.
    pub fn required_regime(&self) -> Option<&'static str> {
        match self {
            TheoremTarget::T1FixedN | TheoremTarget::T1Ratio => Some("strong"),
            TheoremTarget::T2FixedN | TheoremTarget::T2Ratio => Some("intermediate"),
            TheoremTarget::T3FixedN | TheoremTarget::T3FixedI | TheoremTarget::T3Ratio => Some("weak"),
            TheoremTarget::L5Gh | TheoremTarget::L5H => None,
        }
    }

    pub fn normalization(&self) -> &'static str {
        match self {
            TheoremTarget::T1FixedN | TheoremTarget::T2FixedN | TheoremTarget::T3FixedN => "none: P(A_{n-N}(n))",
            TheoremTarget::T1Ratio => "gamma^{-(n-i)}",
            TheoremTarget::T2Ratio => "gamma^{-(n-i)} / P(max tilted S_k <= 0, k <= n-i)",
            TheoremTarget::T3FixedI => "gamma^{-(n-i)} (n-i) c_{n-i}, c_m = sigma sqrt(m)",
            TheoremTarget::T3Ratio => "gamma^{-(n-i)} (n-i) c_{n-i} with i = floor(n/2)",
            TheoremTarget::L5Gh => "n c_n E[a_n^l1 (1 + a_n + B_{1,n})^{-l2}]",
            TheoremTarget::L5H => "E[(1 + a_n + B_{1,n})^{-l2}] / P(L_n >= 0)",
        }
    }

    pub fn is_fixed_n(&self) -> bool {
        matches!(self, TheoremTarget::T1FixedN | TheoremTarget::T2FixedN | TheoremTarget::T3FixedN)
    }

    pub fn band(&self) -> (f64, f64) {
        match self {
            TheoremTarget::T1FixedN | TheoremTarget::T1Ratio => STRONG_BAND,
            _ => SLOW_BAND,
        }
    }
}

/// Draw of `e^{S_N} / sum_{r<N} e^{S_r} * 1 / sum_{r<=n} e^{S_r}`.
fn rn_sample<L: StepLaw>(law: &L, big_n: usize, horizon: Horizon, rng: &mut McRng) -> f64 {
    let mut den = LogAccumulator::new();
    let mut total = LogAccumulator::new();
    den.add(0.0);
    total.add(0.0);
    let mut s = 0.0;
    for r in 1..=big_n {
        s += law.sample_step(rng);
        if r < big_n {
            den.add(s);
        }
        total.add(s);
    }
    let s_n = s;
    match horizon {
        Horizon::Finite(n) => {
            for _ in big_n..n {
                s += law.sample_step(rng);
                total.add(s);
            }
        }
        Horizon::Infinite => {
            let log_factor = -(1.0 - (0.5 * law.step_mean()).exp()).ln();
            let log_tol = SERIES_TAIL_TOL.ln();
            let mut r = big_n;
            while s + log_factor >= log_tol + total.log_value() && r < SERIES_MAX_LEN {
                s += law.sample_step(rng);
                total.add(s);
                r += 1;
            }
        }
    }
    (s_n - den.log_value() - total.log_value()).exp()
}

/// Monte Carlo of `P(A_{n-N}(n))` under `P` through the walk functional.
/// The same seed at two horizons shares the first steps of every path.
pub fn estimate_rn(law: &IncrementLaw, big_n: usize, horizon: Horizon, n_samples: usize, seed: SeedSpec, engine: &Engine) -> Result<Estimate> {
    if big_n == 0 {
        return Err(Error::IndexError { i: 0, n: 0, len: 0 });
    }
    if let Horizon::Finite(n) = horizon {
        if n < big_n {
            return Err(Error::IndexError { i: big_n, n, len: n });
        }
    }
    Ok(engine.estimate(n_samples, seed, |rng| rn_sample(law, big_n, horizon, rng)))
}

fn rn_functional(ps: &[f64], big_n: usize) -> f64 {
    let mut den = CompensatedSum::default();
    for &s in &ps[..big_n] {
        den.add(s.exp());
    }
    let mut total = CompensatedSum::default();
    for &s in ps {
        total.add(s.exp());
    }
    ps[big_n].exp() / den.value() / total.value()
}

/// Exact value of the `r_N` functional for a point mass (any horizon) or a
/// two-point law (finite horizon up to 22, by enumeration).
pub fn rn_exact(law: &Family, big_n: usize, horizon: Horizon) -> Result<f64> {
    if big_n == 0 {
        return Err(Error::IndexError { i: 0, n: 0, len: 0 });
    }
    match (*law, horizon) {
        (Family::Degenerate { value }, Horizon::Infinite) => {
            if value >= 0.0 {
                return Err(Error::TruncationNotReached { max_len: SERIES_MAX_LEN });
            }
            let den: f64 = (0..big_n).map(|r| (r as f64 * value).exp()).sum();
            Ok((big_n as f64 * value).exp() / den * -(value.exp_m1()))
        }
        (Family::Degenerate { value }, Horizon::Finite(n)) => {
            let ps: Vec<f64> = (0..=n).map(|r| r as f64 * value).collect();
            Ok(rn_functional(&ps, big_n))
        }
        (Family::TwoPoint { x_minus, x_plus, p_plus }, Horizon::Finite(n)) if (big_n..=22).contains(&n) => {
            let mut acc = CompensatedSum::default();
            let mut ps = vec![0.0; n + 1];
            for mask in 0u32..(1 << n) {
                let mut prob = 1.0;
                for r in 0..n {
                    let up = mask >> r & 1 == 1;
                    ps[r + 1] = ps[r] + if up { x_plus } else { x_minus };
                    prob *= if up { p_plus } else { 1.0 - p_plus };
                }
                acc.add(prob * rn_functional(&ps, big_n));
            }
            Ok(acc.value())
        }
        _ => Err(Error::Config { field: "law".into(), message: "exact r_N needs a point mass or a two-point law with horizon <= 22".into() }),
    }
}

/// `E_tilted[(sum_{r=0}^{truncation} e^{S_r})^{-2}]`, the strong-regime
/// limit of `gamma^{-(n-i)} P(A_i(n))`.
pub fn estimate_r_strong(law: &IncrementLaw, truncation: usize, n_samples: usize, seed: SeedSpec, engine: &Engine) -> Result<Estimate> {
    let regime = classify_regime(law, CLOSED_FORM_TOL)?;
    if !regime.is_strong() {
        return Err(Error::WrongRegime { expected: "strong".into(), found: regime.kind.name().into() });
    }
    let tilted = tilt_for_regime(law, &regime)?;
    Ok(engine.estimate(n_samples, seed, |rng| {
        let mut t = LogAccumulator::new();
        t.add(0.0);
        let mut s = 0.0;
        for _ in 0..truncation {
            s += tilted.sample_step(rng);
            t.add(s);
        }
        (-2.0 * t.log_value()).exp()
    }))
}

/// `P(max_{k<=m} S_k <= 0)` for the tilted walk: the probability that the
/// dual walk stays non-negative.
pub fn dual_stay_probability(tilted: &TiltedLaw, m: usize, n_samples: usize, seed: SeedSpec, engine: &Engine) -> Estimate {
    engine.estimate(n_samples, seed, |rng| {
        let mut s = 0.0;
        for _ in 0..m {
            s += tilted.sample_step(rng);
            if s > 0.0 {
                return 0.0;
            }
        }
        1.0
    })
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub n_samples: usize,
    pub master_seed: u64,
    /// Inner draws per outer path for the importance-sampling estimator.
    pub inner: usize,
    /// Regime to use instead of the classified one.
    pub regime: Option<RegimeClass>,
}

impl SweepConfig {
    pub fn new(n_samples: usize, master_seed: u64) -> Self {
        SweepConfig { n_samples, master_seed, inner: 1, regime: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    /// `P(A)` estimate (or the functional mean for the functional limits).
    pub estimate: Estimate,
    pub normalized: Estimate,
    pub ratio_to_prev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub target: TheoremTarget,
    pub regime: RegimeClass,
    /// `i` for the ratio targets, `N` for the fixed-`N` targets.
    pub param: usize,
    pub rows: Vec<SweepRow>,
    pub band: (f64, f64),
    pub ratios_in_band: bool,
    pub positive: bool,
    pub pass: bool,
}

pub fn regime_for(target: TheoremTarget, law: &IncrementLaw, cfg: &SweepConfig) -> Result<RegimeClass> {
    let regime = match cfg.regime {
        Some(r) => r,
        None => classify_regime(law, CLOSED_FORM_TOL)?,
    };
    if let Some(req) = target.required_regime() {
        if regime.kind.name() != req {
            return Err(Error::WrongRegime { expected: req.into(), found: regime.kind.name().into() });
        }
    }
    if !regime.is_strong() && law.is_lattice() {
        return Err(Error::LatticeLaw);
    }
    Ok(regime)
}

fn finish_report(target: TheoremTarget, regime: RegimeClass, param: usize, mut rows: Vec<SweepRow>, band: (f64, f64)) -> SweepReport {
    for k in 1..rows.len() {
        rows[k].ratio_to_prev = Some(rows[k].normalized.mean / rows[k - 1].normalized.mean);
    }
    let ratios_in_band = rows.iter().filter_map(|r| r.ratio_to_prev).all(|q| q >= band.0 && q <= band.1);
    let positive = rows.iter().all(|r| r.normalized.mean > 0.0 && r.normalized.excludes_zero());
    SweepReport { target, regime, param, rows, band, ratios_in_band, positive, pass: ratios_in_band && positive }
}

/// Sweeps a theorem target over `n_values` (total generations `n`). The
/// parameter is `N` for the fixed-`N` targets and `i` for the others
/// (ignored by `T3_ratio`, which uses `i = floor(n/2)`).
pub fn theorem_sweep(target: TheoremTarget, law: &IncrementLaw, param: usize, n_values: &[usize], cfg: &SweepConfig, engine: &Engine) -> Result<SweepReport> {
    if matches!(target, TheoremTarget::L5Gh | TheoremTarget::L5H) {
        return Err(Error::Config { field: "target".into(), message: "use guiv_check for the functional limits".into() });
    }
    let regime = regime_for(target, law, cfg)?;
    let tilted = tilt_for_regime(law, &regime)?;
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let seed = SeedSpec::new(cfg.master_seed, n as u64);
        let row = if target.is_fixed_n() {
            let e = estimate_rn(law, param, Horizon::Finite(n), cfg.n_samples, seed, engine)?;
            SweepRow { n, estimate: e, normalized: e, ratio_to_prev: None }
        } else {
            let i = if target == TheoremTarget::T3Ratio { n / 2 } else { param };
            if i >= n {
                return Err(Error::IndexError { i, n, len: n });
            }
            let m = n - i;
            let is_cfg = IsConfig { n_samples: cfg.n_samples, inner: cfg.inner, seed };
            let base = is_normalized_a(law, &regime, i, n, &is_cfg, engine)?;
            let raw = base.scale_log(m as f64 * regime.gamma.ln());
            let normalized = match target {
                TheoremTarget::T1Ratio => base,
                TheoremTarget::T2Ratio => {
                    let p = dual_stay_probability(&tilted, m, cfg.n_samples, seed.substream(1), engine);
                    base.ratio(&p)
                }
                _ => {
                    let c = tilted.step_variance().sqrt() * (m as f64).sqrt();
                    base.scale(m as f64 * c)
                }
            };
            SweepRow { n, estimate: raw, normalized, ratio_to_prev: None }
        };
        rows.push(row);
    }
    Ok(finish_report(target, regime, param, rows, target.band()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuivRow {
    pub n: usize,
    /// `n c_n E[g h]`.
    pub gh: Estimate,
    /// `E[h] / P(L_n >= 0)`.
    pub h_ratio: Estimate,
    pub stay: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuivReport {
    pub lambda1: f64,
    pub lambda2: f64,
    pub rows: Vec<GuivRow>,
    pub gh_spread: f64,
    pub h_spread: f64,
    pub pass: bool,
}

fn spread(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi / lo
}

/// Functional limits with `g(x) = x^l1`, `h(x, y) = (1 + x + y)^{-l2}`
/// evaluated at `(a_n, B_{1,n})` for a driftless walk.
pub fn guiv_check<L: StepLaw>(law: &L, lambda1: f64, lambda2: f64, n_values: &[usize], n_samples: usize, master_seed: u64, engine: &Engine) -> Result<GuivReport> {
    if !(lambda1 > 0.0 && lambda2 > lambda1) {
        return Err(Error::BadExponents { lambda1, lambda2 });
    }
    let drift = law.step_mean();
    if drift.abs() > crate::conditioned::DRIFT_TOL {
        return Err(Error::NonZeroDrift { drift });
    }
    let sigma = law.step_variance().sqrt();
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let seed = SeedSpec::new(master_seed, n as u64);
        let est = engine.estimate_many(2, n_samples, seed, |rng, out| {
            // ln(1 + a_n + B_{1,n}) with a_n = e^{-S_n}, B_{1,n} = sum_{k=1}^{n-1} e^{-S_k}
            let mut acc = LogAccumulator::new();
            acc.add(0.0);
            let mut s = 0.0;
            for _ in 0..n {
                s += law.sample_step(rng);
                acc.add(-s);
            }
            let log_den = acc.log_value();
            out[0] = (-lambda1 * s - lambda2 * log_den).exp();
            out[1] = (-lambda2 * log_den).exp();
        });
        let stay = crate::conditioned::stay_nonnegative_probability(law, n, n_samples, seed.substream(1), engine);
        let c_n = sigma * (n as f64).sqrt();
        rows.push(GuivRow { n, gh: est[0].scale(n as f64 * c_n), h_ratio: est[1].ratio(&stay), stay });
    }
    let gh_spread = spread(rows.iter().map(|r| r.gh.mean));
    let h_spread = spread(rows.iter().map(|r| r.h_ratio.mean));
    let positive = rows.iter().all(|r| r.gh.excludes_zero() && r.h_ratio.excludes_zero());
    Ok(GuivReport { lambda1, lambda2, rows, gh_spread, h_spread, pass: positive && gh_spread <= GUIV_SPREAD && h_spread <= GUIV_SPREAD })
}

/// Normalized estimates for two values of `i` at the same `n - i`.
pub fn i_independence(law: &IncrementLaw, i_values: (usize, usize), m: usize, n_samples: usize, master_seed: u64, engine: &Engine) -> Result<(Estimate, Estimate)> {
    let regime = classify_regime(law, CLOSED_FORM_TOL)?;
    if regime.is_weak() {
        return Err(Error::WrongRegime { expected: "strong or intermediate".into(), found: "weak".into() });
    }
    let run = |i: usize, stream: u64| is_normalized_a(law, &regime, i, i + m, &IsConfig::new(n_samples, SeedSpec::new(master_seed, stream)), engine);
    Ok((run(i_values.0, 0)?, run(i_values.1, 1)?))
}
