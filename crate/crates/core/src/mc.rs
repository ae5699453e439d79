//! Monte Carlo estimation with reproducible parallel seeding.
//!
//! Samples are assigned to fixed chunks of [`CHUNK_SIZE`]. Chunk `c` of
//! stream `(master, stream)` draws from its own ChaCha8 generator keyed by
//! [`derive_key`], chunk summaries are merged in chunk order, so the result is
//! bit-identical for any worker count.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub type McRng = ChaCha8Rng;

pub const CHUNK_SIZE: usize = 4096;
/// Below this magnitude samples are accumulated with a per-chunk log scale.
pub const LOG_SPACE_THRESHOLD: f64 = 1e-280;
pub const WORKERS_ENV: &str = "BPIRE_WORKERS";

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        SeedSpec { master_seed, stream_id }
    }

    /// A sub-stream, for estimators that need several independent streams.
    pub fn substream(&self, k: u64) -> Self {
        SeedSpec { master_seed: self.master_seed, stream_id: mix64(self.stream_id ^ mix64(k.wrapping_add(GOLDEN))) }
    }
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 256-bit ChaCha key for `(master, stream, chunk)`: the three words are
/// absorbed one at a time through the SplitMix64 finaliser, and the key words
/// are four further finaliser outputs of the absorbed state.
pub fn derive_key(master: u64, stream: u64, chunk: u64) -> [u8; 32] {
    let mut state = mix64(master.wrapping_add(GOLDEN));
    state = mix64(state ^ stream.wrapping_mul(GOLDEN).wrapping_add(0x632b_e59b_d9b4_e019));
    state = mix64(state ^ chunk.wrapping_mul(0xd6e8_feb8_6659_fd93).wrapping_add(GOLDEN));
    let mut key = [0u8; 32];
    for (j, part) in key.chunks_exact_mut(8).enumerate() {
        let w = mix64(state.wrapping_add(GOLDEN.wrapping_mul(j as u64 + 1)));
        part.copy_from_slice(&w.to_le_bytes());
    }
    key
}

pub fn derive_rng(seed: SeedSpec, chunk: u64) -> McRng {
    ChaCha8Rng::from_seed(derive_key(seed.master_seed, seed.stream_id, chunk))
}

/// Generator for the whole stream (chunk 0).
pub fn derive_seed(master: u64, stream_id: u64) -> McRng {
    derive_rng(SeedSpec::new(master, stream_id), 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub ci95: (f64, f64),
    /// Natural log of `mean`, set when the estimate was accumulated or
    /// rescaled in log space.
    pub log_mean: Option<f64>,
    /// Natural log of `stderr`, alongside `log_mean`.
    pub log_stderr: Option<f64>,
}

impl Estimate {
    pub fn new(mean: f64, stderr: f64, n_samples: u64) -> Self {
        Estimate { mean, stderr, n_samples, ci95: (mean - 1.96 * stderr, mean + 1.96 * stderr), log_mean: None, log_stderr: None }
    }

    /// A value known without sampling.
    pub fn exact(value: f64) -> Self {
        Self::new(value, 0.0, 1)
    }

    /// Multiplies by `e^{log_factor}`, keeping the result in log space too.
    pub fn scale_log(&self, log_factor: f64) -> Self {
        let log_mean = self.log_mean.unwrap_or(self.mean.ln()) + log_factor;
        let log_stderr = self.log_stderr.unwrap_or(self.stderr.ln()) + log_factor;
        let mut out = Self::new(log_mean.exp(), log_stderr.exp(), self.n_samples);
        out.log_mean = Some(log_mean);
        out.log_stderr = Some(log_stderr);
        out
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self::new(self.mean * factor, self.stderr * factor.abs(), self.n_samples)
    }

    /// Ratio of independent estimates with delta-method error.
    pub fn ratio(&self, other: &Estimate) -> Self {
        let r = self.mean / other.mean;
        let rel = ((self.stderr / self.mean).powi(2) + (other.stderr / other.mean).powi(2)).sqrt();
        Self::new(r, (r * rel).abs(), self.n_samples.min(other.n_samples))
    }

    pub fn ci_overlaps(&self, other: &Estimate) -> bool {
        self.ci95.0 <= other.ci95.1 && other.ci95.0 <= self.ci95.1
    }

    /// `|a - b| / sqrt(se_a^2 + se_b^2)`.
    pub fn z_distance(&self, other: &Estimate) -> f64 {
        let d = (self.mean - other.mean).abs();
        let s = (self.stderr.powi(2) + other.stderr.powi(2)).sqrt();
        if s == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / s
        }
    }

    pub fn excludes_zero(&self) -> bool {
        self.ci95.0 > 0.0 || self.ci95.1 < 0.0
    }

    pub fn relative_stderr(&self) -> f64 {
        self.stderr / self.mean.abs()
    }
}

/// Running moments `sum (x - mean)^2` for values `x = e^{shift} * y`.
#[derive(Debug, Clone, Copy)]
struct Moments {
    n: u64,
    shift: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn from_samples(xs: &[f64]) -> Self {
        let tiny = xs.iter().any(|&x| x != 0.0 && x.abs() < LOG_SPACE_THRESHOLD);
        let (shift, scale) = if tiny {
            let big = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            (big.ln(), 1.0 / big)
        } else {
            (0.0, 1.0)
        };
        let mut n = 0u64;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for &x in xs {
            let y = if tiny { x * scale } else { x };
            n += 1;
            let d = y - mean;
            mean += d / n as f64;
            m2 += d * (y - mean);
        }
        Moments { n, shift, mean, m2 }
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let shift = self.shift.max(other.shift);
        let (fa, fb) = ((self.shift - shift).exp(), (other.shift - shift).exp());
        let (ma, mb) = (self.mean * fa, other.mean * fb);
        let (va, vb) = (self.m2 * fa * fa, other.m2 * fb * fb);
        let n = self.n + other.n;
        let d = mb - ma;
        let mean = ma + d * other.n as f64 / n as f64;
        let m2 = va + vb + d * d * self.n as f64 * other.n as f64 / n as f64;
        Moments { n, shift, mean, m2 }
    }

    fn finish(self) -> Estimate {
        let n = self.n.max(1);
        let var = if self.n > 1 { (self.m2 / (self.n - 1) as f64).max(0.0) } else { 0.0 };
        let se = (var / n as f64).sqrt();
        if self.shift == 0.0 {
            Estimate::new(self.mean, se, n)
        } else {
            let mut e = Estimate::new(self.mean * self.shift.exp(), se * self.shift.exp(), n);
            e.log_mean = Some(self.mean.ln() + self.shift);
            e.log_stderr = Some(se.ln() + self.shift);
            e
        }
    }
}

/// Owns the worker pool.
#[derive(Clone)]
pub struct Engine {
    pool: Arc<rayon::ThreadPool>,
    workers: usize,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("workers", &self.workers).finish()
    }
}

impl Engine {
    pub fn new(workers: usize) -> Self {
        let workers = workers.max(1);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().expect("thread pool");
        Engine { pool: Arc::new(pool), workers }
    }

    /// Worker count from `BPIRE_WORKERS`, else the available parallelism.
    pub fn from_env() -> Self {
        let workers = std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
        Self::new(workers)
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Estimates `k` functionals jointly: `sample` fills one slot per
    /// functional for each draw.
    pub fn estimate_many<F>(&self, k: usize, n_samples: usize, seed: SeedSpec, sample: F) -> Vec<Estimate>
    where
        F: Fn(&mut McRng, &mut [f64]) + Sync,
    {
        let n_chunks = n_samples.div_ceil(CHUNK_SIZE);
        let chunks: Vec<Vec<Moments>> = self.pool.install(|| {
            (0..n_chunks)
                .into_par_iter()
                .map(|c| {
                    let len = CHUNK_SIZE.min(n_samples - c * CHUNK_SIZE);
                    let mut rng = derive_rng(seed, c as u64);
                    let mut buf = vec![0.0; len * k];
                    let mut slot = vec![0.0; k];
                    for s in 0..len {
                        slot.iter_mut().for_each(|v| *v = 0.0);
                        sample(&mut rng, &mut slot);
                        for j in 0..k {
                            buf[j * len + s] = slot[j];
                        }
                    }
                    (0..k).map(|j| Moments::from_samples(&buf[j * len..(j + 1) * len])).collect()
                })
                .collect()
        });
        let empty = Moments { n: 0, shift: 0.0, mean: 0.0, m2: 0.0 };
        (0..k)
            .map(|j| chunks.iter().fold(empty, |acc, ch| acc.merge(ch[j])).finish())
            .collect()
    }

    pub fn estimate<F>(&self, n_samples: usize, seed: SeedSpec, sample: F) -> Estimate
    where
        F: Fn(&mut McRng) -> f64 + Sync,
    {
        self.estimate_many(1, n_samples, seed, |rng, out| out[0] = sample(rng))[0]
    }

    /// Applies `functional` to draws of `sampler`.
    pub fn estimate_with<T, S, F>(&self, n_samples: usize, seed: SeedSpec, sampler: S, functional: F) -> Estimate
    where
        S: Fn(&mut McRng) -> T + Sync,
        F: Fn(&T) -> f64 + Sync,
    {
        self.estimate(n_samples, seed, |rng| functional(&sampler(rng)))
    }

    /// One estimate per index in `n_values`, stream id = the index value.
    pub fn sweep<F>(&self, n_values: &[usize], n_samples: usize, master_seed: u64, sample: F) -> Vec<(usize, Estimate)>
    where
        F: Fn(usize, &mut McRng) -> f64 + Sync,
    {
        n_values
            .iter()
            .map(|&n| (n, self.estimate(n_samples, SeedSpec::new(master_seed, n as u64), |rng| sample(n, rng))))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn constant_functional_has_zero_stderr() {
        let e = Engine::new(2).estimate(10_000, SeedSpec::new(1, 0), |_| 3.0);
        assert_eq!(e.mean, 3.0);
        assert_eq!(e.stderr, 0.0);
        assert_eq!(e.ci95, (3.0, 3.0));
    }

    #[test]
    fn gaussian_mean() {
        let normal = Normal::new(-1.5, 1.0).unwrap();
        let e = Engine::new(1).estimate(1_000_000, SeedSpec::new(5, 0), |rng| normal.sample(rng));
        assert!((e.mean + 1.5).abs() < 4e-3);
        assert!((e.stderr - 1e-3).abs() < 5e-5);
    }

    #[test]
    fn identical_across_worker_counts() {
        let seed = SeedSpec::new(77, 3);
        let f = |rng: &mut McRng| rng.random::<f64>().powi(3);
        let runs: Vec<Estimate> = [1, 4, 16].iter().map(|&w| Engine::new(w).estimate(50_001, seed, f)).collect();
        assert_eq!(runs[0].mean.to_bits(), runs[1].mean.to_bits());
        assert_eq!(runs[0].mean.to_bits(), runs[2].mean.to_bits());
        assert_eq!(runs[0].stderr.to_bits(), runs[2].stderr.to_bits());
    }

    #[test]
    fn derived_streams_differ_and_are_stable() {
        let a: u64 = derive_seed(42, 0).random();
        let b: u64 = derive_seed(42, 1).random();
        let a2: u64 = derive_seed(42, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, a2);
        assert_ne!(derive_key(1, 2, 3), derive_key(1, 3, 2));
    }

    #[test]
    fn derived_first_draws_are_uniform() {
        // chi-square over 100 bins, 10^5 streams; 1% critical value at 99 dof is 134.6
        let bins = 100;
        let mut counts = vec![0u64; bins];
        let draws = 100_000u64;
        for s in 0..draws {
            let u: f64 = derive_seed(2024, s).random();
            counts[(u * bins as f64) as usize] += 1;
        }
        let expected = draws as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 134.6, "chi2 = {chi2}");
    }

    #[test]
    fn coverage_of_ci() {
        let engine = Engine::new(1);
        let normal = Normal::new(-1.5, 1.0).unwrap();
        let covered = (0..100u64)
            .filter(|&m| {
                let e = engine.estimate(2_000, SeedSpec::new(m, 0), |rng| normal.sample(rng));
                e.ci95.0 <= -1.5 && -1.5 <= e.ci95.1
            })
            .count();
        assert!(covered >= 90, "covered {covered}");
    }

    #[test]
    fn stderr_halves_when_samples_quadruple() {
        let engine = Engine::new(1);
        let f = |rng: &mut McRng| rng.random::<f64>();
        let a = engine.estimate(20_000, SeedSpec::new(3, 0), f);
        let b = engine.estimate(80_000, SeedSpec::new(3, 1), f);
        let r = a.stderr / b.stderr;
        assert!((r - 2.0).abs() < 0.4, "{r}");
    }

    #[test]
    fn log_space_accumulation_for_tiny_values() {
        let e = Engine::new(1).estimate(10_000, SeedSpec::new(1, 0), |rng| 1e-300 * (1.0 + rng.random::<f64>()));
        let lm = e.log_mean.expect("log space");
        assert!((lm - (1.5e-300f64).ln()).abs() < 0.01);
        assert!((e.mean / 1.5e-300 - 1.0).abs() < 0.01);
        assert!(e.stderr > 0.0);
        let scaled = Estimate::new(0.5, 0.1, 10).scale_log(-1000.0);
        assert_eq!(scaled.mean, 0.0);
        assert!((scaled.log_mean.unwrap() - (0.5f64.ln() - 1000.0)).abs() < 1e-12);
    }

    #[test]
    fn sweep_matches_estimate_and_is_reproducible() {
        let engine = Engine::new(2);
        let f = |n: usize, rng: &mut McRng| rng.random::<f64>() * n as f64;
        let t = engine.sweep(&[20], 5_000, 9, f);
        let direct = engine.estimate(5_000, SeedSpec::new(9, 20), |rng| f(20, rng));
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].1, direct);
        let a = engine.sweep(&[20, 40, 80], 5_000, 9, f);
        let b = engine.sweep(&[20, 40, 80], 5_000, 9, f);
        assert_eq!(a, b);
    }
}
