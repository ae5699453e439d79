//! Renewal functions `U`, `V` of a driftless walk, the conditioned measures
//! they define, and the random series `W_inf`, `T_inf`.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::env_model::StepLaw;
use crate::error::{Error, Result};
use crate::mc::{Engine, Estimate, SeedSpec};
use crate::walk::{CompensatedSum, WalkPath};

/// Drift tolerance for the driftless-walk operations.
pub const DRIFT_TOL: f64 = 1e-8;
pub const DEFAULT_HORIZON: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Renewal {
    /// `U(x) = 1 + sum_n P(S_n >= -x, M_n < 0)`, `x >= 0`.
    U,
    /// `V(x) = 1 + sum_n P(S_n < -x, L_n >= 0)`, `x <= 0`.
    V,
}

impl Renewal {
    pub fn name(&self) -> &'static str {
        match self {
            Renewal::U => "U",
            Renewal::V => "V",
        }
    }

    fn in_domain(&self, x: f64) -> bool {
        match self {
            Renewal::U => x >= 0.0,
            Renewal::V => x <= 0.0,
        }
    }
}

fn check_driftless<L: StepLaw>(law: &L) -> Result<()> {
    let drift = law.step_mean();
    if drift.abs() > DRIFT_TOL {
        return Err(Error::NonZeroDrift { drift });
    }
    Ok(())
}

/// Per-path contribution to `U - 1` (or `V - 1`) at each level in `xs`:
/// the number of `1 <= k <= horizon` before the walk first leaves the
/// killing region at which the level condition holds.
fn renewal_counts<L: StepLaw, R: Rng + ?Sized>(law: &L, which: Renewal, xs: &[f64], horizon: usize, rng: &mut R, out: &mut [f64]) {
    let mut s = 0.0;
    for _ in 0..horizon {
        s += law.sample_step(rng);
        match which {
            Renewal::U => {
                if s >= 0.0 {
                    return;
                }
                for (o, &x) in out.iter_mut().zip(xs) {
                    if s >= -x {
                        *o += 1.0;
                    }
                }
            }
            Renewal::V => {
                if s < 0.0 {
                    return;
                }
                for (o, &x) in out.iter_mut().zip(xs) {
                    if s < -x {
                        *o += 1.0;
                    }
                }
            }
        }
    }
}

/// `1 + sum_{n=1}^{horizon}` of the event probabilities, one estimate per
/// level. All levels share the same paths.
pub fn renewal_estimates<L: StepLaw>(
    law: &L,
    which: Renewal,
    xs: &[f64],
    horizon: usize,
    mc_per_term: usize,
    seed: SeedSpec,
    engine: &Engine,
) -> Result<Vec<Estimate>> {
    check_driftless(law)?;
    if let Some(&x) = xs.iter().find(|&&x| !which.in_domain(x)) {
        return Err(Error::Config { field: "x".into(), message: format!("{x} outside the domain of {}", which.name()) });
    }
    let est = engine.estimate_many(xs.len(), mc_per_term, seed, |rng, out| renewal_counts(law, which, xs, horizon, rng, out));
    Ok(est
        .into_iter()
        .zip(xs)
        .map(|(e, &x)| if x == 0.0 { Estimate::exact(1.0) } else { Estimate::new(1.0 + e.mean, e.stderr, e.n_samples) })
        .collect())
}

pub fn renewal_estimate<L: StepLaw>(
    law: &L,
    which: Renewal,
    x: f64,
    horizon: usize,
    mc_per_term: usize,
    seed: SeedSpec,
    engine: &Engine,
) -> Result<Estimate> {
    Ok(renewal_estimates(law, which, &[x], horizon, mc_per_term, seed, engine)?[0])
}

/// Tabulated `U` or `V` on a sorted grid, with monotone piecewise-linear
/// interpolation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenewalTable {
    pub which: Renewal,
    /// Sorted by `|x|`, starting at 0.
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub horizon: usize,
    pub mc_per_term: usize,
    /// Bound on the dropped terms beyond the horizon, relative to the
    /// largest tabulated value.
    pub tail_bound: f64,
}

impl RenewalTable {
    /// Estimates the table on `grid` (absolute levels; the sign is fixed by
    /// `which`). Values are made monotone by a running maximum.
    pub fn build<L: StepLaw>(law: &L, which: Renewal, grid: &[f64], horizon: usize, mc_per_term: usize, seed: SeedSpec, engine: &Engine) -> Result<Self> {
        let mut levels: Vec<f64> = grid.iter().map(|x| x.abs()).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        if levels.first() != Some(&0.0) {
            levels.insert(0, 0.0);
        }
        let signed: Vec<f64> = match which {
            Renewal::U => levels.clone(),
            Renewal::V => levels.iter().map(|x| -x).collect(),
        };
        let est = renewal_estimates(law, which, &signed, horizon, mc_per_term, seed, engine)?;
        let mut values = Vec::with_capacity(est.len());
        let mut running = 1.0f64;
        for e in est {
            running = running.max(e.mean);
            values.push(running);
        }
        let sigma = law.step_variance().sqrt();
        let x_max = levels.last().copied().unwrap_or(0.0);
        // terms of order P(L_n >= 0) * P(|S_n| <= x | L_n >= 0) ~ x^2 / (sigma^2 n^{3/2})
        let tail = if horizon == 0 { f64::INFINITY } else { 2.0 * (x_max / sigma).powi(2) / (horizon as f64).sqrt() };
        let top = values.last().copied().unwrap_or(1.0);
        Ok(RenewalTable { which, grid: signed, values, horizon, mc_per_term, tail_bound: tail / top })
    }

    /// Value at `x`. Zero outside the domain; linear extrapolation with the
    /// last non-negative slope beyond the grid.
    pub fn eval(&self, x: f64) -> f64 {
        if !self.which.in_domain(x) {
            return 0.0;
        }
        let z = x.abs();
        let g = &self.grid;
        let v = &self.values;
        let k = g.len();
        if k == 1 {
            return v[0];
        }
        if z >= g[k - 1].abs() {
            let slope = ((v[k - 1] - v[k - 2]) / (g[k - 1].abs() - g[k - 2].abs())).max(0.0);
            return v[k - 1] + slope * (z - g[k - 1].abs());
        }
        let j = g.partition_point(|&gx| gx.abs() <= z);
        let (z0, z1) = (g[j - 1].abs(), g[j].abs());
        let t = (z - z0) / (z1 - z0);
        v[j - 1] + t * (v[j] - v[j - 1])
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# renewal={} mc_per_term={} tail_bound={:.16e}", self.which.name(), self.mc_per_term, self.tail_bound)?;
        writeln!(f, "grid,value,horizon")?;
        for (x, v) in self.grid.iter().zip(&self.values) {
            writeln!(f, "{x:.16e},{v:.16e},{}", self.horizon)?;
        }
        Ok(())
    }

    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let bad = |m: &str| Error::Config { field: "renewal_table".into(), message: m.to_string() };
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut which = None;
        let mut mc_per_term = 0;
        let mut tail_bound = f64::NAN;
        let mut grid = Vec::new();
        let mut values = Vec::new();
        let mut horizon = 0;
        for line in f.lines() {
            let line = line?;
            let line = line.trim();
            if let Some(meta) = line.strip_prefix('#') {
                for kv in meta.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("renewal", "U")) => which = Some(Renewal::U),
                        Some(("renewal", "V")) => which = Some(Renewal::V),
                        Some(("mc_per_term", v)) => mc_per_term = v.parse().map_err(|_| bad("mc_per_term"))?,
                        Some(("tail_bound", v)) => tail_bound = v.parse().map_err(|_| bad("tail_bound"))?,
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() || line.starts_with("grid") {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(bad("expected 3 columns"));
            }
            grid.push(cols[0].parse().map_err(|_| bad("grid"))?);
            values.push(cols[1].parse().map_err(|_| bad("value"))?);
            horizon = cols[2].parse().map_err(|_| bad("horizon"))?;
        }
        let which = which.ok_or_else(|| bad("missing renewal kind"))?;
        if grid.is_empty() {
            return Err(bad("empty table"));
        }
        Ok(RenewalTable { which, grid, values, horizon, mc_per_term, tail_bound })
    }
}

/// Relative residual `|E[U(x + X); x + X >= 0] - U(x)| / U(x)` (and the
/// mirrored form for `V`) with the expectation estimated from `mc` draws.
pub fn harmonicity_residual<L: StepLaw>(table: &RenewalTable, law: &L, x: f64, mc: usize, seed: SeedSpec, engine: &Engine) -> f64 {
    let lhs = engine.estimate(mc, seed, |rng| {
        let y = x + law.sample_step(rng);
        let keep = match table.which {
            Renewal::U => y >= 0.0,
            Renewal::V => y < 0.0,
        };
        if keep {
            table.eval(y)
        } else {
            0.0
        }
    });
    let u = table.eval(x);
    (lhs.mean - u).abs() / u
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Conditioning {
    None,
    /// `L_n >= 0`, weighted by `U(S_n) / U(x)`.
    Plus,
    /// `M_n < 0`, weighted by `V(S_n) / V(x)`.
    Minus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedSample {
    pub path: WalkPath,
    pub weight: f64,
    /// Proposals drawn, including the accepted one.
    pub attempts: u64,
}

fn event_holds(cond: Conditioning, path: &WalkPath) -> bool {
    let ps = path.partial_sums();
    match cond {
        Conditioning::None => true,
        Conditioning::Plus => ps.iter().all(|&s| s >= 0.0),
        Conditioning::Minus => ps[1..].iter().all(|&s| s < 0.0),
    }
}

/// Path from `x` distributed as `law` restricted to the conditioning event,
/// found by rejection, with the renewal weight of the target measure.
///
/// An expectation under the conditioned measure is estimated by
/// `sum(O_i * weight_i) / sum(attempts_i)`.
pub fn sample_conditioned<L: StepLaw, R: Rng + ?Sized>(
    law: &L,
    cond: Conditioning,
    x: f64,
    n: usize,
    max_attempts: u64,
    table: Option<&RenewalTable>,
    rng: &mut R,
) -> Result<ConditionedSample> {
    match cond {
        Conditioning::Plus if x < 0.0 => return Err(Error::Config { field: "x".into(), message: "plus-conditioning needs x >= 0".into() }),
        Conditioning::Minus if x > 0.0 => return Err(Error::Config { field: "x".into(), message: "minus-conditioning needs x <= 0".into() }),
        _ => {}
    }
    for attempt in 1..=max_attempts.max(1) {
        let mut incs = Vec::with_capacity(n);
        let mut s = x;
        let mut alive = cond != Conditioning::Plus || s >= 0.0;
        for _ in 0..n {
            let dx = law.sample_step(rng);
            s += dx;
            incs.push(dx);
            alive = match cond {
                Conditioning::None => true,
                Conditioning::Plus => s >= 0.0,
                Conditioning::Minus => s < 0.0,
            };
            if !alive {
                break;
            }
        }
        if !alive {
            continue;
        }
        let path = WalkPath::from_increments(x, incs);
        debug_assert!(event_holds(cond, &path));
        let weight = match (cond, table) {
            (Conditioning::None, _) | (_, None) => 1.0,
            (_, Some(t)) => t.eval(path.last()) / t.eval(x),
        };
        return Ok(ConditionedSample { path, weight, attempts: attempt });
    }
    Err(Error::RejectionBudgetExceeded { attempts: max_attempts })
}

/// Weighted estimate of `E^{+/-}_x[O(path)]` over `n_samples` conditioned
/// draws, as a ratio of the weighted sum and the total attempt count.
#[allow(clippy::too_many_arguments)]
pub fn conditioned_expectation<L, O>(
    law: &L,
    cond: Conditioning,
    x: f64,
    n: usize,
    table: &RenewalTable,
    n_samples: usize,
    max_attempts: u64,
    seed: SeedSpec,
    engine: &Engine,
    observable: O,
) -> Result<Estimate>
where
    L: StepLaw,
    O: Fn(&WalkPath) -> f64 + Sync,
{
    // probe the budget once so a vacuous event is reported as an error
    sample_conditioned(law, cond, x, n, max_attempts, Some(table), &mut crate::mc::derive_rng(seed, u64::MAX))?;
    let est = engine.estimate_many(2, n_samples, seed, |rng, out| match sample_conditioned(law, cond, x, n, max_attempts, Some(table), rng) {
        Ok(c) => {
            out[0] = observable(&c.path) * c.weight;
            out[1] = c.attempts as f64;
        }
        Err(_) => {
            out[0] = 0.0;
            out[1] = max_attempts as f64;
        }
    });
    Ok(est[0].ratio(&est[1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SeriesKind {
    /// `sum_{k>=1} e^{-S_k}`.
    WInf,
    /// `sum_{k>=0} e^{S_k}`.
    TInf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesLimit {
    pub kind: SeriesKind,
    /// Number of increments used.
    pub truncation: usize,
    pub value: f64,
    pub tail_bound: f64,
    /// Renewal weight of the sampled path, 1 without conditioning or
    /// without a table.
    pub weight: f64,
}

/// One realisation of a truncated series. Without conditioning the tail is
/// bounded by `term / (1 - e^{-|mu|/2})` and the walk must drift the right
/// way. With conditioning the path is drawn by rejection over `max_len`
/// steps and the tail bound is the last term times the remaining horizon
/// allowance of one geometric window.
#[allow(clippy::too_many_arguments)]
pub fn series_limit<L: StepLaw, R: Rng + ?Sized>(
    law: &L,
    kind: SeriesKind,
    cond: Conditioning,
    tol: f64,
    max_len: usize,
    max_attempts: u64,
    table: Option<&RenewalTable>,
    rng: &mut R,
) -> Result<SeriesLimit> {
    let sign = match kind {
        SeriesKind::WInf => -1.0,
        SeriesKind::TInf => 1.0,
    };
    match cond {
        Conditioning::None => {
            let mu = law.step_mean() * sign;
            if mu >= 0.0 {
                return Err(Error::TruncationNotReached { max_len });
            }
            let factor = 1.0 / (1.0 - (0.5 * mu).exp());
            let mut acc = CompensatedSum::default();
            let mut s = 0.0f64;
            if kind == SeriesKind::TInf {
                acc.add(1.0);
            }
            let mut r = 0;
            loop {
                let bound = (sign * s).exp() * factor;
                if r > 0 && bound < tol {
                    return Ok(SeriesLimit { kind, truncation: r, value: acc.value(), tail_bound: bound, weight: 1.0 });
                }
                if r >= max_len {
                    return Err(Error::TruncationNotReached { max_len });
                }
                s += law.sample_step(rng);
                acc.add((sign * s).exp());
                r += 1;
            }
        }
        _ => {
            let c = sample_conditioned(law, cond, 0.0, max_len, max_attempts, table, rng)?;
            let ps = c.path.partial_sums();
            let start = if kind == SeriesKind::WInf { 1 } else { 0 };
            let mut acc = CompensatedSum::default();
            for &s in &ps[start..] {
                acc.add((sign * s).exp());
            }
            let last = (sign * c.path.last()).exp();
            if last >= tol {
                return Err(Error::TruncationNotReached { max_len });
            }
            Ok(SeriesLimit { kind, truncation: max_len, value: acc.value(), tail_bound: last, weight: c.weight })
        }
    }
}

/// `m_1(theta) = int_0^inf e^{-theta z} U(z) dz` (or with `V(-z)`):
/// trapezoid rule over the table plus the exact integral of the linear
/// extrapolation beyond it.
pub fn laplace_moment(table: &RenewalTable, theta: f64) -> Result<f64> {
    if theta <= 0.0 {
        return Err(Error::Config { field: "theta".into(), message: "must be positive".into() });
    }
    let zs: Vec<f64> = table.grid.iter().map(|x| x.abs()).collect();
    let mut total = CompensatedSum::default();
    for j in 1..zs.len() {
        let (z0, z1) = (zs[j - 1], zs[j]);
        let h = z1 - z0;
        total.add(0.5 * h * ((-theta * z0).exp() * table.values[j - 1] + (-theta * z1).exp() * table.values[j]));
    }
    let k = zs.len();
    let g = zs[k - 1];
    let slope = if k > 1 { ((table.values[k - 1] - table.values[k - 2]) / (zs[k - 1] - zs[k - 2])).max(0.0) } else { 0.0 };
    total.add((-theta * g).exp() * (table.values[k - 1] / theta + slope / (theta * theta)));
    Ok(total.value())
}

/// `P(S_n > 0)` for a walk from 0.
pub fn positivity_probability<L: StepLaw>(law: &L, n: usize, n_samples: usize, seed: SeedSpec, engine: &Engine) -> Estimate {
    engine.estimate(n_samples, seed, |rng| {
        let mut acc = CompensatedSum::default();
        for _ in 0..n {
            acc.add(law.sample_step(rng));
        }
        f64::from(acc.value() > 0.0)
    })
}

/// `P(L_n >= 0)`, stopping each path at its first negative value.
pub fn stay_nonnegative_probability<L: StepLaw>(law: &L, n: usize, n_samples: usize, seed: SeedSpec, engine: &Engine) -> Estimate {
    engine.estimate(n_samples, seed, |rng| {
        let mut s = 0.0;
        for _ in 0..n {
            s += law.sample_step(rng);
            if s < 0.0 {
                return 0.0;
            }
        }
        1.0
    })
}
