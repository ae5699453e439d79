//! Forward simulation of the population with one immigrant per generation,
//! keeping a separate count for every immigrant's clan.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Geometric, Poisson};
use serde::Serialize;

use crate::env_model::{geometric_q, mean_offspring, IncrementLaw};
use crate::error::{Error, Result};
use crate::mc::{Engine, Estimate, McRng, SeedSpec};
use crate::walk::{sample_path, WalkPath};

pub const DEFAULT_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PopulationState {
    pub generation: usize,
    /// `clans[k]` counts the descendants of the immigrant of generation `k`
    /// (the immigrant itself at `k`); `k = 0` is the initial individual.
    pub clans: Vec<u64>,
    /// Total before this generation's immigrant arrived.
    pub y_minus: u64,
}

impl PopulationState {
    /// Generation 0: a single individual.
    pub fn new() -> Self {
        PopulationState { generation: 0, clans: vec![1], y_minus: 0 }
    }

    pub fn total(&self) -> u64 {
        self.clans.iter().sum()
    }
}

impl Default for PopulationState {
    fn default() -> Self {
        Self::new()
    }
}

/// Total offspring of `k` individuals with i.i.d. geometric laws on
/// `{0, 1, ..}`, `P(0) = 1 / (1 + e^x)`. A negative binomial, drawn as a
/// gamma-mixed Poisson for `k > 1`.
pub fn offspring_sum<R: Rng + ?Sized>(k: u64, x: f64, rng: &mut R) -> u64 {
    let m = mean_offspring(x);
    if k == 0 || m == 0.0 {
        return 0;
    }
    if k == 1 {
        return Geometric::new(geometric_q(x)).expect("q in (0, 1]").sample(rng);
    }
    let lambda = Gamma::new(k as f64, m).expect("positive shape and scale").sample(rng);
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map(|p| p.sample(rng) as u64).unwrap_or(u64::MAX)
}

/// One generation in environment `x`: every clan reproduces, then the
/// immigrant founds a new clan of size 1.
pub fn step_generation<R: Rng + ?Sized>(state: &PopulationState, x: f64, cap: u64, rng: &mut R) -> Result<PopulationState> {
    let mut clans = Vec::with_capacity(state.clans.len() + 1);
    let mut total: u64 = 0;
    for &k in &state.clans {
        let c = offspring_sum(k, x, rng);
        total = total.saturating_add(c);
        if total > cap {
            return Err(Error::PopulationOverflow { size: total, cap });
        }
        clans.push(c);
    }
    clans.push(1);
    Ok(PopulationState { generation: state.generation + 1, clans, y_minus: total })
}

/// Only the clan of founder `i` is alive before immigration.
pub fn event_a(state: &PopulationState, i: usize) -> bool {
    state.y_minus > 0 && state.clans.get(i) == Some(&state.y_minus)
}

/// Runs generations `1..=n` in the environment `env` (its first `n`
/// increments).
pub fn simulate<R: Rng + ?Sized>(env: &WalkPath, n: usize, cap: u64, rng: &mut R) -> Result<PopulationState> {
    if n > env.len() {
        return Err(Error::IndexError { i: n, n, len: env.len() });
    }
    let mut state = PopulationState::new();
    for &x in &env.increments()[..n] {
        state = step_generation(&state, x, cap, rng)?;
    }
    Ok(state)
}

/// Frequency of `A_i(n)` over replicates sharing the environment `env`.
pub fn conditional_prob_a(env: &WalkPath, i: usize, n: usize, replicates: usize, seed: SeedSpec, engine: &Engine) -> Result<Estimate> {
    Ok(clan_frequencies(env, n, replicates, seed, engine)?[i])
}

/// Frequencies of `A_0(n) .. A_{n-1}(n)` from one replicate set, followed
/// by the frequency of `Y_n^- = 0`.
pub fn clan_frequencies(env: &WalkPath, n: usize, replicates: usize, seed: SeedSpec, engine: &Engine) -> Result<Vec<Estimate>> {
    if n == 0 || n > env.len() {
        return Err(Error::IndexError { i: 0, n, len: env.len() });
    }
    simulate(env, n, DEFAULT_CAP, &mut crate::mc::derive_rng(seed, u64::MAX))?;
    Ok(engine.estimate_many(n + 1, replicates, seed, |rng, out| {
        let s = simulate(env, n, DEFAULT_CAP, rng).expect("cap checked on probe run");
        for (i, o) in out[..n].iter_mut().enumerate() {
            *o = f64::from(event_a(&s, i));
        }
        out[n] = f64::from(s.y_minus == 0);
    }))
}

/// `|freq - h| / sqrt(h (1 - h) / R)`: distance from the exact value in
/// units of the binomial standard error under that value.
pub fn bridge_z(freq: &Estimate, h: f64) -> f64 {
    let se = (h * (1.0 - h) / freq.n_samples as f64).sqrt();
    (freq.mean - h).abs() / se
}

/// Unconditional `P(A_i(n))`, resampling the environment for each replicate.
pub fn direct_prob_a(law: &IncrementLaw, i: usize, n: usize, replicates: usize, seed: SeedSpec, engine: &Engine) -> Result<Estimate> {
    if i >= n {
        return Err(Error::IndexError { i, n, len: n });
    }
    Ok(engine.estimate(replicates, seed, |rng: &mut McRng| {
        let env = sample_path(law, n, rng);
        match simulate(&env, n, DEFAULT_CAP, rng) {
            Ok(s) => f64::from(event_a(&s, i)),
            // only reachable for environments far outside the subcritical bulk
            Err(_) => 0.0,
        }
    }))
}

/// Writes `generation,founder,count` rows for one replicate.
pub fn write_trajectory<P: AsRef<Path>, R: Rng + ?Sized>(env: &WalkPath, n: usize, cap: u64, rng: &mut R, path: P) -> Result<PopulationState> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "generation,founder,count")?;
    let mut state = PopulationState::new();
    writeln!(f, "0,0,1")?;
    for &x in &env.increments()[..n.min(env.len())] {
        state = step_generation(&state, x, cap, rng)?;
        for (k, c) in state.clans.iter().enumerate() {
            writeln!(f, "{},{k},{c}", state.generation)?;
        }
    }
    Ok(state)
}
