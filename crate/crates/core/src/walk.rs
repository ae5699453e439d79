//! The associated random walk `S_k = S_0 + X_1 + ... + X_k` and the path
//! functionals every formula consumes.

use rand::Rng;

use crate::env_model::StepLaw;

#[derive(Debug, Clone, PartialEq)]
pub struct WalkPath {
    start: f64,
    increments: Vec<f64>,
    partial_sums: Vec<f64>,
}

impl WalkPath {
    pub fn from_increments(start: f64, increments: Vec<f64>) -> Self {
        let mut partial_sums = Vec::with_capacity(increments.len() + 1);
        let mut s = start;
        partial_sums.push(s);
        for &x in &increments {
            s += x;
            partial_sums.push(s);
        }
        WalkPath { start, increments, partial_sums }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn partial_sums(&self) -> &[f64] {
        &self.partial_sums
    }

    /// Number of steps `n`.
    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.partial_sums.last().expect("nonempty")
    }
}

pub fn sample_path<L: StepLaw, R: Rng + ?Sized>(law: &L, n: usize, rng: &mut R) -> WalkPath {
    sample_path_from(law, 0.0, n, rng)
}

pub fn sample_path_from<L: StepLaw, R: Rng + ?Sized>(law: &L, start: f64, n: usize, rng: &mut R) -> WalkPath {
    let increments = (0..n).map(|_| law.sample_step(rng)).collect();
    WalkPath::from_increments(start, increments)
}

/// `S^_r = S_0 + S_n - S_{n-r}`: the increments in reverse order.
pub fn dual_path(path: &WalkPath) -> WalkPath {
    let increments = path.increments.iter().rev().copied().collect();
    WalkPath::from_increments(path.start, increments)
}

/// Smallest index attaining the minimum of `S_0..S_n`.
pub fn first_min_index(path: &WalkPath) -> usize {
    let mut best = 0;
    for (k, &s) in path.partial_sums.iter().enumerate() {
        if s < path.partial_sums[best] {
            best = k;
        }
    }
    best
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `ln sum_k e^{v_k}`, factoring out the maximum.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let vals: Vec<f64> = values.into_iter().collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max == f64::INFINITY {
        return max;
    }
    let mut acc = CompensatedSum::default();
    for v in vals {
        acc.add((v - max).exp());
    }
    max + acc.value().ln()
}

/// `a_k = e^{-S_k}`, `b_k = sum_{j<k} e^{-S_j}` and the extremes of a path.
/// `log_b` carries `b` in log form; it stays finite when `b` overflows.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkFunctionals {
    pub sums: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub log_b: Vec<f64>,
    /// `L_n = min(S_0..S_n)`.
    pub min: f64,
    /// `M_n = max(S_1..S_n)`, `-inf` for the empty walk.
    pub max: f64,
    pub tau: usize,
    /// Set when some `e^{-S_k}` or `b_k` is not representable.
    pub overflowed: bool,
}

impl WalkFunctionals {
    pub fn n(&self) -> usize {
        self.sums.len() - 1
    }

    /// `B_{j,n} = b_n - b_j = sum_{k=j}^{n-1} e^{-S_k}`, summed directly.
    pub fn big_b(&self, j: usize) -> f64 {
        let mut acc = CompensatedSum::default();
        for &s in &self.sums[j..self.n()] {
            acc.add((-s).exp());
        }
        acc.value()
    }

    /// `a_{i,n} = e^{S_i - S_n}`.
    pub fn a_in(&self, i: usize, n: usize) -> f64 {
        (self.sums[i] - self.sums[n]).exp()
    }

    /// `b_{i,n} = sum_{k=i}^{n-1} e^{S_i - S_k}`.
    pub fn b_in(&self, i: usize, n: usize) -> f64 {
        let mut acc = CompensatedSum::default();
        for &s in &self.sums[i..n] {
            acc.add((self.sums[i] - s).exp());
        }
        acc.value()
    }
}

pub fn functionals(path: &WalkPath) -> WalkFunctionals {
    let sums = path.partial_sums.clone();
    let mut a = Vec::with_capacity(sums.len());
    let mut b = Vec::with_capacity(sums.len());
    let mut log_b = Vec::with_capacity(sums.len());
    let mut acc = CompensatedSum::default();
    // running log-sum-exp of -S_j
    let mut lmax = f64::NEG_INFINITY;
    let mut lacc: f64 = 0.0;
    let mut min = sums[0];
    let mut tau = 0;
    let mut max = f64::NEG_INFINITY;
    for (k, &s) in sums.iter().enumerate() {
        b.push(acc.value());
        log_b.push(if lmax == f64::NEG_INFINITY { f64::NEG_INFINITY } else { lmax + lacc.ln() });
        a.push((-s).exp());
        acc.add((-s).exp());
        if -s > lmax {
            lacc = lacc * (lmax + s).exp() + 1.0;
            lmax = -s;
        } else {
            lacc += (-s - lmax).exp();
        }
        if s < min {
            min = s;
            tau = k;
        }
        if k > 0 && s > max {
            max = s;
        }
    }
    let overflowed = a.iter().chain(b.iter()).any(|v| !v.is_finite());
    WalkFunctionals { sums, a, b, log_b, min, max, tau, overflowed }
}
