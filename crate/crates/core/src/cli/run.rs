//! Executes an [`ExperimentSpec`].

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;

use super::config::ExperimentSpec;
use super::report::{sweep_row, ExperimentReport, Table, SWEEP_COLUMNS};
use crate::bpire::{bridge_z, clan_frequencies, direct_prob_a};
use crate::conditioned::{harmonicity_residual, positivity_probability, stay_nonnegative_probability, Renewal, RenewalTable, DEFAULT_HORIZON};
use crate::env_model::{Family, IncrementLaw, RegimeClass};
use crate::error::{Error, Result};
use crate::exact::{closed_form, compose_range, Direction};
use crate::limits::{guiv_check, theorem_sweep, SweepConfig, TheoremTarget};
use crate::mc::{Engine, McRng, SeedSpec};
use crate::tilt::{is_estimate_a, tilt_for_regime, IsConfig, TiltedLaw};
use crate::walk::{functionals, sample_path};

/// Named checks besides the theorem targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    OracleEquivalence,
    Harmonicity,
    Bridge,
    MeasureChange,
    Rho,
    Lemma2,
}

impl Check {
    pub const ALL: [Check; 6] = [Check::OracleEquivalence, Check::Harmonicity, Check::Bridge, Check::MeasureChange, Check::Rho, Check::Lemma2];

    pub fn name(&self) -> &'static str {
        match self {
            Check::OracleEquivalence => "oracle_equivalence",
            Check::Harmonicity => "harmonicity",
            Check::Bridge => "bridge",
            Check::MeasureChange => "measure_change",
            Check::Rho => "rho",
            Check::Lemma2 => "lemma2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Theorem(TheoremTarget),
    Check(Check),
}

impl Target {
    pub fn parse(name: &str) -> Result<Self> {
        if let Some(t) = TheoremTarget::parse(name) {
            return Ok(Target::Theorem(t));
        }
        Check::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .map(Target::Check)
            .ok_or_else(|| Error::Config { field: "target".into(), message: format!("unknown target `{name}`; see list-targets") })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Target::Theorem(t) => t.name(),
            Target::Check(c) => c.name(),
        }
    }
}

/// `(name, anchor, required regime, what is computed)` for every target.
pub fn target_catalog() -> Vec<(&'static str, &'static str, &'static str, &'static str)> {
    vec![
        ("T1_fixedN", "Theorem 1, part 1", "strong", "P(A_{n-N}(n)) for fixed N as n grows"),
        ("T1_ratio", "Theorem 1, part 2", "strong", "gamma^{-(n-i)} P(A_i(n)) for fixed i"),
        ("T2_fixedN", "Theorem 2, part 1", "intermediate", "P(A_{n-N}(n)) for fixed N as n grows"),
        ("T2_ratio", "Theorem 2, part 2", "intermediate", "P(A_i(n)) / (gamma^{n-i} P(dual walk stays >= 0))"),
        ("T3_fixedN", "Theorem 3, part 1", "weak", "P(A_{n-N}(n)) for fixed N as n grows"),
        ("T3_fixed_i", "Theorem 3, part 2", "weak", "gamma^{-(n-i)} (n-i) c_{n-i} P(A_i(n)) for fixed i"),
        ("T3_ratio", "Theorem 3", "weak", "gamma^{-(n-i)} (n-i) c_{n-i} P(A_i(n)) with i = n/2"),
        ("L5_gh", "Lemma 5, Eq. (GuivStatement)", "intermediate or weak", "n c_n E[g(a_n) h(a_n, B_{1,n})]"),
        ("L5_h", "Lemma 5, Eq. (GuivStatement2)", "intermediate or weak", "E[h(a_n, B_{1,n})] / P(L_n >= 0)"),
        ("oracle_equivalence", "Eq. (expr_Fin1)", "any", "closed form vs step-by-step composition of F_{i,n}"),
        ("harmonicity", "Eq. (Mes1) and Eq. (Mes2)", "intermediate or weak", "E[U(x+X); x+X >= 0] = U(x) and the V analogue"),
        ("bridge", "Corollary 1", "any", "population simulation frequency vs exact H_{i,n}"),
        ("measure_change", "Eq. (changeni)", "any nonlattice outside strong", "tilted estimator vs direct simulation of P(A_i(n))"),
        ("rho", "Eq. (Def-ro)", "intermediate or weak", "P(S_n > 0) for the tilted walk"),
        ("lemma2", "Lemma 2, Eq. (AsymMin)", "intermediate or weak", "sqrt(n) P(L_n >= 0) for the tilted walk"),
    ]
}

pub fn list_targets() -> String {
    let mut out = String::from("target              anchor                          regime                          computes\n");
    for (name, anchor, regime, what) in target_catalog() {
        out.push_str(&format!("{name:<19} {anchor:<31} {regime:<31} {what}\n"));
    }
    out
}

/// Outcome of a target: its table and named pass/fail flags.
struct Outcome {
    table: Table,
    flags: BTreeMap<String, bool>,
}

fn flag(flags: &mut BTreeMap<String, bool>, name: &str, ok: bool) {
    flags.insert(name.to_string(), ok);
}

/// Runs `spec` and returns its report (nothing is written).
pub fn execute(spec: &ExperimentSpec, engine: &Engine) -> Result<ExperimentReport> {
    let start = Instant::now();
    let target = Target::parse(&spec.target)?;
    let law = spec.increment_law()?;
    let regime = spec.regime_class(&law)?;
    let outcome = match target {
        Target::Theorem(TheoremTarget::L5Gh) | Target::Theorem(TheoremTarget::L5H) => run_guiv(spec, target, &law, &regime, engine)?,
        Target::Theorem(t) => run_sweep(spec, t, &law, &regime, engine)?,
        Target::Check(Check::OracleEquivalence) => run_oracle(spec, &law)?,
        Target::Check(Check::Harmonicity) => run_harmonicity(spec, &law, &regime, engine)?,
        Target::Check(Check::Bridge) => run_bridge(spec, &law, engine)?,
        Target::Check(Check::MeasureChange) => run_measure_change(spec, &law, &regime, engine)?,
        Target::Check(Check::Rho) => run_rho(spec, &law, &regime, engine)?,
        Target::Check(Check::Lemma2) => run_lemma2(spec, &law, &regime, engine)?,
    };
    let pass = outcome.flags.values().all(|&v| v);
    Ok(ExperimentReport {
        spec: spec.clone(),
        regime: Some(regime.kind.name().to_string()),
        table: outcome.table,
        flags: outcome.flags,
        pass,
        wall_clock_s: start.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: spec.master_seed,
        n_samples: spec.n_samples,
    })
}

fn n_values(spec: &ExperimentSpec) -> Result<&[usize]> {
    if spec.n_values.is_empty() {
        return Err(Error::Config { field: "n_values".into(), message: "at least one value needed".into() });
    }
    Ok(&spec.n_values)
}

fn run_sweep(spec: &ExperimentSpec, t: TheoremTarget, law: &IncrementLaw, regime: &RegimeClass, engine: &Engine) -> Result<Outcome> {
    let param = if t.is_fixed_n() { spec.big_n.unwrap_or(1) } else { spec.i.unwrap_or(0) };
    let cfg = SweepConfig { n_samples: spec.n_samples, master_seed: spec.master_seed, inner: spec.inner.unwrap_or(1), regime: Some(*regime) };
    let rep = theorem_sweep(t, law, param, n_values(spec)?, &cfg, engine)?;
    let mut table = Table::new(&SWEEP_COLUMNS);
    for r in &rep.rows {
        table.push(sweep_row(r.n, &r.estimate, r.normalized.mean, r.ratio_to_prev));
    }
    let mut flags = BTreeMap::new();
    flag(&mut flags, "ratios_in_band", rep.ratios_in_band);
    flag(&mut flags, "positive", rep.positive);
    Ok(Outcome { table, flags })
}

fn driftless_tilt(law: &IncrementLaw, regime: &RegimeClass, target: &str) -> Result<TiltedLaw> {
    if regime.is_strong() {
        return Err(Error::WrongRegime { expected: format!("intermediate or weak for {target}"), found: "strong".into() });
    }
    tilt_for_regime(law, regime)
}

fn run_guiv(spec: &ExperimentSpec, target: Target, law: &IncrementLaw, regime: &RegimeClass, engine: &Engine) -> Result<Outcome> {
    let tilted = driftless_tilt(law, regime, target.name())?;
    if law.is_lattice() {
        return Err(Error::LatticeLaw);
    }
    let rep = guiv_check(&tilted.law, spec.lambda1.unwrap_or(0.5), spec.lambda2.unwrap_or(1.5), n_values(spec)?, spec.n_samples, spec.master_seed, engine)?;
    let gh = target == Target::Theorem(TheoremTarget::L5Gh);
    let mut table = Table::new(&SWEEP_COLUMNS);
    let mut prev: Option<f64> = None;
    for r in &rep.rows {
        let e = if gh { r.gh } else { r.h_ratio };
        table.push(sweep_row(r.n, &e, e.mean, prev.map(|p| e.mean / p)));
        prev = Some(e.mean);
    }
    let spread = if gh { rep.gh_spread } else { rep.h_spread };
    let mut flags = BTreeMap::new();
    flag(&mut flags, "spread_within_1.5", spread <= crate::limits::GUIV_SPREAD);
    flag(&mut flags, "positive", rep.rows.iter().all(|r| if gh { r.gh.excludes_zero() } else { r.h_ratio.excludes_zero() }));
    Ok(Outcome { table, flags })
}

/// Largest `|F_{i,n}(s)|` discrepancy between the two evaluation routes,
/// per `n`, over `envs` environments.
pub fn oracle_discrepancy(family: &Family, n_max: usize, envs: usize, seed: SeedSpec) -> Result<Vec<f64>> {
    let mut rng = McRng::from_seed(crate::mc::derive_key(seed.master_seed, seed.stream_id, 0));
    let mut worst = vec![0.0f64; n_max + 1];
    for _ in 0..envs {
        let path = sample_path(family, n_max, &mut rng);
        let f = functionals(&path);
        for n in 0..=n_max {
            for i in 0..=n {
                let composed = compose_range(&path, i, n, Direction::Forward)?;
                let closed = closed_form(&f, i, n)?;
                for s in [0.0, 0.3, 0.9] {
                    let d = (composed.eval(s) - closed.eval(s)).abs();
                    worst[n] = worst[n].max(d);
                }
            }
        }
    }
    Ok(worst)
}

fn run_oracle(spec: &ExperimentSpec, law: &IncrementLaw) -> Result<Outcome> {
    let n_max = spec.n_values.last().copied().unwrap_or(50);
    let worst = oracle_discrepancy(law.family(), n_max, spec.envs.unwrap_or(1000), SeedSpec::new(spec.master_seed, 0))?;
    let mut table = Table::new(&["n", "max_abs_diff"]);
    for (n, d) in worst.iter().enumerate() {
        table.push(vec![n.into(), (*d).into()]);
    }
    let mut flags = BTreeMap::new();
    flag(&mut flags, "max_abs_diff_le_1e-12", worst.iter().all(|&d| d <= 1e-12));
    Ok(Outcome { table, flags })
}

/// Grid used for harmonicity tables: step 0.05 out to `x_max + 6 sigma`.
pub fn harmonicity_grid(x_max: f64, sigma: f64) -> Vec<f64> {
    let top = x_max + 6.0 * sigma;
    let k = (top / 0.05).ceil() as usize;
    (0..=k).map(|j| j as f64 * 0.05).collect()
}

fn run_harmonicity(spec: &ExperimentSpec, law: &IncrementLaw, regime: &RegimeClass, engine: &Engine) -> Result<Outcome> {
    let tilted = driftless_tilt(law, regime, "harmonicity")?;
    let xs = spec.x_values.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0, 3.0, 4.0]);
    let horizon = spec.horizon.unwrap_or(DEFAULT_HORIZON);
    let sigma = tilted.law.variance().sqrt();
    let x_max = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let grid = harmonicity_grid(x_max, sigma);
    let mut table = Table::new(&["renewal", "x", "value", "residual"]);
    let mut ok = true;
    for (k, which) in [Renewal::U, Renewal::V].into_iter().enumerate() {
        let t = RenewalTable::build(&tilted.law, which, &grid, horizon, spec.n_samples, SeedSpec::new(spec.master_seed, k as u64), engine)?;
        for (j, &x) in xs.iter().enumerate() {
            let x = if which == Renewal::U { x.abs() } else { -x.abs() };
            let r = harmonicity_residual(&t, &tilted.law, x, spec.n_samples, SeedSpec::new(spec.master_seed, 100 + 10 * k as u64 + j as u64), engine);
            ok &= r <= 0.02;
            table.push(vec![which.name().into(), x.into(), t.eval(x).into(), r.into()]);
        }
    }
    let mut flags = BTreeMap::new();
    flag(&mut flags, "residual_le_0.02", ok);
    Ok(Outcome { table, flags })
}

fn run_bridge(spec: &ExperimentSpec, law: &IncrementLaw, engine: &Engine) -> Result<Outcome> {
    let ns: Vec<usize> = if spec.n_values.is_empty() { (1..=6).collect() } else { spec.n_values.clone() };
    let envs = spec.envs.unwrap_or(20);
    let mut rng = McRng::from_seed(crate::mc::derive_key(spec.master_seed, u64::MAX, 0));
    let mut table = Table::new(&["env", "n", "i", "exact", "frequency", "stderr", "z"]);
    let mut ok = true;
    for e in 0..envs {
        let n = ns[e % ns.len()];
        let env = sample_path(law, n, &mut rng);
        let f = functionals(&env);
        let freqs = clan_frequencies(&env, n, spec.n_samples, SeedSpec::new(spec.master_seed, e as u64), engine)?;
        for (i, fr) in freqs.iter().take(n).enumerate() {
            let h = crate::exact::clan_survival_prob(&f, i, n)?;
            let z = bridge_z(fr, h);
            ok &= z <= 4.0;
            table.push(vec![e.into(), n.into(), i.into(), h.into(), fr.mean.into(), fr.stderr.into(), z.into()]);
        }
    }
    let mut flags = BTreeMap::new();
    flag(&mut flags, "within_4_stderr", ok);
    Ok(Outcome { table, flags })
}

fn run_measure_change(spec: &ExperimentSpec, law: &IncrementLaw, regime: &RegimeClass, engine: &Engine) -> Result<Outcome> {
    let n = spec.n_values.first().copied().unwrap_or(13);
    let i = spec.i.unwrap_or(3);
    let cfg = IsConfig { n_samples: spec.n_samples, inner: spec.inner.unwrap_or(1), seed: SeedSpec::new(spec.master_seed, 0) };
    let is = is_estimate_a(law, regime, i, n, &cfg, engine)?;
    let direct = direct_prob_a(law, i, n, spec.n_samples, SeedSpec::new(spec.master_seed, 1), engine)?;
    let mut table = Table::new(&["method", "estimate", "stderr", "ci_lo", "ci_hi"]);
    for (name, e) in [("tilted", &is), ("direct", &direct)] {
        table.push(vec![name.into(), e.mean.into(), e.stderr.into(), e.ci95.0.into(), e.ci95.1.into()]);
    }
    let mut flags = BTreeMap::new();
    flag(&mut flags, "ci_overlap", is.ci_overlaps(&direct));
    Ok(Outcome { table, flags })
}

fn run_rho(spec: &ExperimentSpec, law: &IncrementLaw, regime: &RegimeClass, engine: &Engine) -> Result<Outcome> {
    let tilted = driftless_tilt(law, regime, "rho")?;
    let mut table = Table::new(&["n", "estimate", "stderr"]);
    let mut ok = true;
    for &n in n_values(spec)? {
        let p = positivity_probability(&tilted.law, n, spec.n_samples, SeedSpec::new(spec.master_seed, n as u64), engine);
        ok &= (p.mean - 0.5).abs() <= 0.01;
        table.push(vec![n.into(), p.mean.into(), p.stderr.into()]);
    }
    let mut flags = BTreeMap::new();
    flag(&mut flags, "within_0.01_of_half", ok);
    Ok(Outcome { table, flags })
}

fn run_lemma2(spec: &ExperimentSpec, law: &IncrementLaw, regime: &RegimeClass, engine: &Engine) -> Result<Outcome> {
    let tilted = driftless_tilt(law, regime, "lemma2")?;
    let mut table = Table::new(&SWEEP_COLUMNS);
    let mut values = Vec::new();
    for &n in n_values(spec)? {
        let p = stay_nonnegative_probability(&tilted.law, n, spec.n_samples, SeedSpec::new(spec.master_seed, n as u64), engine);
        let v = (n as f64).sqrt() * p.mean;
        table.push(sweep_row(n, &p, v, values.last().map(|prev: &f64| v / prev)));
        values.push(v);
    }
    let (lo, hi) = values.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut flags = BTreeMap::new();
    flag(&mut flags, "plateau_within_1.15", hi / lo <= 1.15);
    Ok(Outcome { table, flags })
}
