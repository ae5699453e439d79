//! Exponential change of measure `e^{delta x} P(dx) / gamma` and the
//! importance-sampling estimators of the single-clan probability built on it.

use rand::Rng;
use serde::Serialize;

use crate::env_model::{Family, IncrementLaw, RegimeClass, StepLaw};
use crate::error::{Error, Result};
use crate::mc::{Engine, Estimate, McRng, SeedSpec};
use crate::walk::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SamplerKind {
    /// Draws from the tilted family directly.
    ClosedForm,
    /// Draws from the base law and carries the likelihood ratio
    /// `e^{delta x} / gamma` as a weight.
    Reweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TiltedLaw {
    pub base: IncrementLaw,
    pub delta: f64,
    pub gamma: f64,
    /// The law of one increment under the tilted measure.
    pub law: Family,
    pub sampler_kind: SamplerKind,
}

pub fn tilt(law: &IncrementLaw, delta: f64) -> Result<TiltedLaw> {
    let gamma = law.family().mgf(delta).ok_or(Error::NonFiniteMoment { t: delta })?;
    let tilted = law.family().tilt(delta).ok_or(Error::NonFiniteMoment { t: delta })?;
    Ok(TiltedLaw { base: *law, delta, gamma, law: tilted, sampler_kind: SamplerKind::ClosedForm })
}

/// Same measure, sampled by reweighting base draws.
pub fn tilt_reweighted(law: &IncrementLaw, delta: f64) -> Result<TiltedLaw> {
    Ok(TiltedLaw { sampler_kind: SamplerKind::Reweighted, ..tilt(law, delta)? })
}

pub fn tilt_for_regime(law: &IncrementLaw, regime: &RegimeClass) -> Result<TiltedLaw> {
    tilt(law, regime.delta)
}

impl TiltedLaw {
    /// One increment and its likelihood ratio against the tilted measure.
    pub fn sample_weighted<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match self.sampler_kind {
            SamplerKind::ClosedForm => (self.law.sample(rng), 1.0),
            SamplerKind::Reweighted => {
                let x = self.base.family().sample(rng);
                (x, (self.delta * x).exp() / self.gamma)
            }
        }
    }

    /// `E_tilted[X] = E[X e^{delta X}] / gamma`.
    pub fn drift(&self) -> f64 {
        self.law.mean()
    }
}

impl StepLaw for TiltedLaw {
    fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.law.sample(rng)
    }
    fn step_mean(&self) -> f64 {
        self.law.mean()
    }
    fn step_variance(&self) -> f64 {
        self.law.variance()
    }
}

/// Number of steps in `Lambda_i`: finite, or the infinite series truncated
/// once the drift bound on the remaining tail drops below `1e-12`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaHorizon {
    Finite(usize),
    Infinite,
}

pub const SERIES_TAIL_TOL: f64 = 1e-12;
pub const SERIES_MAX_LEN: usize = 1_000_000;

/// `sum_{r=0}^{i} e^{S_r}` for a fresh walk from 0 under `law`.
pub fn exp_walk_sum<L: StepLaw, R: Rng + ?Sized>(law: &L, horizon: LambdaHorizon, rng: &mut R) -> Result<f64> {
    let mut acc = CompensatedSum::default();
    acc.add(1.0);
    let mut s = 0.0;
    match horizon {
        LambdaHorizon::Finite(i) => {
            for _ in 0..i {
                s += law.sample_step(rng);
                acc.add(s.exp());
            }
        }
        LambdaHorizon::Infinite => {
            let mu = law.step_mean();
            if mu >= 0.0 {
                return Err(Error::TruncationNotReached { max_len: 0 });
            }
            let tail_factor = 1.0 / (1.0 - (0.5 * mu).exp());
            let mut r = 0;
            while s.exp() * tail_factor >= SERIES_TAIL_TOL {
                if r >= SERIES_MAX_LEN {
                    return Err(Error::TruncationNotReached { max_len: SERIES_MAX_LEN });
                }
                s += law.sample_step(rng);
                acc.add(s.exp());
                r += 1;
            }
        }
    }
    Ok(acc.value())
}

/// `Lambda_i(x, y) = E[1 / (1 + y + x sum_{r=0}^{i} e^{S_r})]` under the
/// original law `P`.
pub fn lambda_i(
    law: &IncrementLaw,
    horizon: LambdaHorizon,
    x: f64,
    y: f64,
    m_samples: usize,
    seed: SeedSpec,
    engine: &Engine,
) -> Result<Estimate> {
    if x == 0.0 {
        return Ok(Estimate::exact(1.0 / (1.0 + y)));
    }
    if horizon == LambdaHorizon::Finite(0) {
        return Ok(Estimate::exact(1.0 / (1.0 + y + x)));
    }
    if horizon == LambdaHorizon::Infinite {
        exp_walk_sum(law, horizon, &mut crate::mc::derive_rng(seed, u64::MAX))?;
    }
    Ok(engine.estimate(m_samples, seed, |rng| {
        let t = exp_walk_sum(law, horizon, rng).unwrap_or(f64::INFINITY);
        1.0 / (1.0 + y + x * t)
    }))
}

/// Configuration of [`is_estimate_a`].
#[derive(Debug, Clone, Copy)]
pub struct IsConfig {
    pub n_samples: usize,
    /// Inner draws of `Lambda_i` per outer tilted path.
    pub inner: usize,
    pub seed: SeedSpec,
}

impl IsConfig {
    pub fn new(n_samples: usize, seed: SeedSpec) -> Self {
        IsConfig { n_samples, inner: 1, seed }
    }
}

/// `ln[e^{(1-delta) S_N} h_i(e^{S_N}, sum_{r=1}^{N-1} e^{S_r})] + ln(weight)`
/// for one tilted path of length `N = n - i` followed by `inner` draws of
/// the last `i` steps under `P`.
fn is_sample(law: &IncrementLaw, tilted: &TiltedLaw, i: usize, big_n: usize, inner: usize, rng: &mut McRng) -> f64 {
    let mut s = 0.0;
    let mut log_w = 0.0;
    // y = sum_{r=1}^{N-1} e^{S_r}, kept as a max-factored sum
    let mut y = LogAccumulator::new();
    for r in 1..=big_n {
        let (x, w) = tilted.sample_weighted(rng);
        s += x;
        log_w += w.ln();
        if r < big_n {
            y.add(s);
        }
    }
    let log_y = y.log_value();
    // ln(1 + y)
    let log_1y = log_add(0.0, log_y);
    let mut lam = 0.0;
    for _ in 0..inner {
        let t = if i == 0 {
            1.0
        } else {
            exp_walk_sum(law, LambdaHorizon::Finite(i), rng).expect("finite horizon")
        };
        // ln(1 + y + e^{S_N} t)
        let log_den = log_add(log_1y, s + t.ln());
        lam += (-log_den).exp();
    }
    let lam = lam / inner as f64;
    ((1.0 - tilted.delta) * s - log_1y + lam.ln() + log_w).exp()
}

/// `ln(e^a + e^b)`.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Sum of `e^{v}` with the running maximum factored out.
#[derive(Debug, Clone, Copy)]
pub struct LogAccumulator {
    max: f64,
    acc: f64,
}

impl LogAccumulator {
    pub fn new() -> Self {
        LogAccumulator { max: f64::NEG_INFINITY, acc: 0.0 }
    }

    pub fn add(&mut self, v: f64) {
        if v > self.max {
            self.acc = self.acc * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.acc += (v - self.max).exp();
        }
    }

    pub fn log_value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.acc.ln()
        }
    }
}

impl Default for LogAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

/// Estimate of `gamma^{-(n-i)} P(A_i(n)) = E_tilted[e^{(1-delta) S_{n-i}} h_i(..)]`,
/// before the deterministic factor `gamma^{n-i}` is applied.
pub fn is_normalized_a(law: &IncrementLaw, regime: &RegimeClass, i: usize, n: usize, cfg: &IsConfig, engine: &Engine) -> Result<Estimate> {
    is_normalized_a_with(law, &tilt_for_regime(law, regime)?, regime, i, n, cfg, engine)
}

pub fn is_normalized_a_with(
    law: &IncrementLaw,
    tilted: &TiltedLaw,
    regime: &RegimeClass,
    i: usize,
    n: usize,
    cfg: &IsConfig,
    engine: &Engine,
) -> Result<Estimate> {
    if i >= n {
        return Err(Error::IndexError { i, n, len: n });
    }
    if !regime.is_strong() && law.is_lattice() {
        return Err(Error::LatticeLaw);
    }
    let big_n = n - i;
    let inner = cfg.inner.max(1);
    Ok(engine.estimate(cfg.n_samples, cfg.seed, |rng| is_sample(law, tilted, i, big_n, inner, rng)))
}

/// Importance-sampling estimate of `P(A_i(n))`: tilted first `n - i` dual
/// steps, untilted last `i`, scaled by `gamma^{n-i}` in log space.
pub fn is_estimate_a(law: &IncrementLaw, regime: &RegimeClass, i: usize, n: usize, cfg: &IsConfig, engine: &Engine) -> Result<Estimate> {
    let e = is_normalized_a(law, regime, i, n, cfg, engine)?;
    Ok(e.scale_log((n - i) as f64 * regime.gamma.ln()))
}

/// Plain Monte Carlo of `E_P[H_{i,n}]` over environments drawn from `P`.
pub fn direct_estimate_a(law: &IncrementLaw, i: usize, n: usize, n_samples: usize, seed: SeedSpec, engine: &Engine) -> Result<Estimate> {
    if i >= n {
        return Err(Error::IndexError { i, n, len: n });
    }
    Ok(engine.estimate(n_samples, seed, |rng| {
        let path = crate::walk::sample_path(law, n, rng);
        let f = crate::walk::functionals(&path);
        crate::exact::clan_survival_prob(&f, i, n).expect("valid index")
    }))
}
