//! Fractional-linear generating functions of geometric offspring laws, their
//! iterates along an environment, and the exact probability that a single
//! clan survives.

use crate::error::{Error, Result};
use crate::walk::{log_sum_exp, WalkFunctionals, WalkPath};

/// `s -> 1 - 1 / (a (1 - s)^{-1} + b)`.
///
/// One generation with log mean `x` is `a = e^{-x}`, `b = 1`, which is
/// `F(s) = 1 / (1 + e^x (1 - s))`. The identity map is `a = 1`, `b = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracLinGF {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `F_{i,n} = F_{i+1}(F_{i+2}(... F_n(s)))`.
    Forward,
    /// `F_{n,i} = F_n(F_{n-1}(... F_{i+1}(s)))`.
    Backward,
}

impl FracLinGF {
    pub const IDENTITY: FracLinGF = FracLinGF { a: 1.0, b: 0.0 };

    pub fn single_step(x: f64) -> Self {
        FracLinGF { a: (-x).exp(), b: 1.0 }
    }

    /// `self(inner(s))`.
    pub fn compose(&self, inner: &FracLinGF) -> FracLinGF {
        FracLinGF { a: self.a * inner.a, b: self.a * inner.b + self.b }
    }

    /// `1 - F(s)`, evaluated without cancellation.
    pub fn tail(&self, s: f64) -> f64 {
        if s >= 1.0 {
            return 0.0;
        }
        let t = 1.0 - s;
        t / (self.a + self.b * t)
    }

    pub fn eval(&self, s: f64) -> f64 {
        if s >= 1.0 {
            1.0
        } else if *self == Self::IDENTITY {
            s
        } else {
            1.0 - self.tail(s)
        }
    }
}

pub fn gf_eval(gf: &FracLinGF, s: f64) -> f64 {
    gf.eval(s)
}

fn check_range(i: usize, n: usize, len: usize) -> Result<()> {
    if i > n || n > len {
        Err(Error::IndexError { i, n, len })
    } else {
        Ok(())
    }
}

/// Composes the single-step maps of `path` between `i` and `n` one at a time.
pub fn compose_range(path: &WalkPath, i: usize, n: usize, direction: Direction) -> Result<FracLinGF> {
    check_range(i, n, path.len())?;
    let steps = &path.increments()[i..n];
    let gf = match direction {
        Direction::Forward => steps
            .iter()
            .fold(FracLinGF::IDENTITY, |acc, &x| acc.compose(&FracLinGF::single_step(x))),
        Direction::Backward => steps
            .iter()
            .fold(FracLinGF::IDENTITY, |acc, &x| FracLinGF::single_step(x).compose(&acc)),
    };
    Ok(gf)
}

/// `F_{i,n}` read directly off the walk: `a = e^{S_i - S_n}`,
/// `b = sum_{k=i}^{n-1} e^{S_i - S_k}`.
pub fn closed_form(f: &WalkFunctionals, i: usize, n: usize) -> Result<FracLinGF> {
    check_range(i, n, f.n())?;
    Ok(FracLinGF { a: f.a_in(i, n), b: f.b_in(i, n) })
}

/// Probability, given the environment, that at generation `n` the population
/// before immigration is nonempty and descends entirely from founder `i`:
/// `a_i / (a_n + b_n - b_{i+1}) * a_n / (a_n + b_n)`, in log form.
pub fn clan_survival_prob(f: &WalkFunctionals, i: usize, n: usize) -> Result<f64> {
    if n == 0 || i >= n || n > f.n() {
        return Err(Error::IndexError { i, n, len: f.n() });
    }
    let s = &f.sums;
    // a_n + b_n - b_{i+1} = sum_{k=i+1}^{n} e^{-S_k}
    let first = -s[i] - log_sum_exp(s[i + 1..=n].iter().map(|v| -v));
    let second = -s[n] - log_sum_exp(s[..=n].iter().map(|v| -v));
    Ok((first + second).exp())
}

/// All `H_{i,n}` for `i = 0..n-1`.
pub fn clan_survival_all(f: &WalkFunctionals, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|i| clan_survival_prob(f, i, n)).collect()
}

/// `h_n(s) = 1/(A + b_n) * A/(A + b_n - b_1)` with `A = a_n / (1 - s)`.
pub fn h_n(f: &WalkFunctionals, n: usize, s: f64) -> Result<f64> {
    if n == 0 || n > f.n() {
        return Err(Error::IndexError { i: 0, n, len: f.n() });
    }
    if s >= 1.0 {
        return Ok(0.0);
    }
    let sums = &f.sums;
    let log_a = -sums[n] - (1.0 - s).ln();
    let d1 = log_sum_exp(std::iter::once(log_a).chain(sums[..n].iter().map(|v| -v)));
    let d2 = log_sum_exp(std::iter::once(log_a).chain(sums[1..n].iter().map(|v| -v)));
    Ok((log_a - d1 - d2).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::Family;
    use crate::walk::{functionals, sample_path};
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    /// Pointwise nested evaluation, the route independent of (a, b) algebra.
    fn nested(path: &WalkPath, i: usize, n: usize, s: f64) -> f64 {
        path.increments()[i..n].iter().rev().fold(s, |v, &x| 1.0 / (1.0 + x.exp() * (1.0 - v)))
    }

    /// `1 - nested(..)`, iterated on the tail to avoid cancellation.
    fn nested_tail(path: &WalkPath, i: usize, n: usize, s: f64) -> f64 {
        path.increments()[i..n].iter().rev().fold(1.0 - s, |t, &x| {
            let mt = x.exp() * t;
            mt / (1.0 + mt)
        })
    }

    fn ln2_walk() -> WalkPath {
        WalkPath::from_increments(0.0, vec![2f64.ln(), 2f64.ln()])
    }

    #[test]
    fn eval_examples() {
        assert_relative_eq!(gf_eval(&FracLinGF { a: 1.0, b: 1.0 }, 0.0), 0.5);
        assert_eq!(gf_eval(&FracLinGF { a: 0.3, b: 2.0 }, 1.0), 1.0);
        assert_relative_eq!(gf_eval(&FracLinGF { a: 0.25, b: 1.5 }, 0.0), 3.0 / 7.0, epsilon = 1e-15);
    }

    #[test]
    fn compose_examples() {
        let p = ln2_walk();
        let id = compose_range(&p, 2, 2, Direction::Forward).unwrap();
        for s in [0.0, 0.2, 0.7] {
            assert_eq!(id.eval(s), s);
        }
        let g = compose_range(&p, 0, 2, Direction::Forward).unwrap();
        assert_relative_eq!(g.eval(0.0), 3.0 / 7.0, epsilon = 1e-15);
        assert_relative_eq!(nested(&p, 0, 2, 0.0), 3.0 / 7.0, epsilon = 1e-15);

        let d = WalkPath::from_increments(0.0, vec![-1.0; 3]);
        let composed = compose_range(&d, 0, 3, Direction::Forward).unwrap();
        let closed = closed_form(&functionals(&d), 0, 3).unwrap();
        assert!((composed.eval(0.0) - closed.eval(0.0)).abs() < 1e-14);

        assert!(matches!(compose_range(&p, 2, 1, Direction::Forward), Err(Error::IndexError { .. })));
    }

    #[test]
    fn backward_reverses_order() {
        let p = WalkPath::from_increments(0.0, vec![0.3, -1.2, 0.8]);
        let back = compose_range(&p, 0, 3, Direction::Backward).unwrap();
        let fwd_of_reversed = compose_range(&crate::walk::dual_path(&p), 0, 3, Direction::Forward).unwrap();
        assert_relative_eq!(back.a, fwd_of_reversed.a, max_relative = 1e-15);
        assert_relative_eq!(back.b, fwd_of_reversed.b, max_relative = 1e-15);
    }

    #[test]
    fn closed_form_examples() {
        let f = functionals(&ln2_walk());
        let g = closed_form(&f, 0, 2).unwrap();
        assert_relative_eq!(g.a, 0.25, epsilon = 1e-15);
        assert_relative_eq!(g.b, 1.5, epsilon = 1e-15);
        let g = closed_form(&f, 1, 2).unwrap();
        assert_relative_eq!(g.a, 0.5, epsilon = 1e-15);
        assert_relative_eq!(g.b, 1.0);
        assert_relative_eq!(g.eval(0.0), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(closed_form(&f, 2, 2).unwrap(), FracLinGF::IDENTITY);
    }

    #[test]
    fn clan_survival_examples() {
        let f = functionals(&ln2_walk());
        let h = clan_survival_prob(&f, 1, 2).unwrap();
        assert_relative_eq!(h, 2.0 / 7.0, epsilon = 1e-15);
        // independent lines: (1 - F_{1,2}(0)) F_{0,2}(0)
        let p = ln2_walk();
        assert_relative_eq!(h, (1.0 - nested(&p, 1, 2, 0.0)) * nested(&p, 0, 2, 0.0), epsilon = 1e-15);

        let f = functionals(&WalkPath::from_increments(0.0, vec![0.0]));
        assert_relative_eq!(clan_survival_prob(&f, 0, 1).unwrap(), 0.5);
        let x = 0.7f64;
        let f = functionals(&WalkPath::from_increments(0.0, vec![x]));
        assert_relative_eq!(clan_survival_prob(&f, 0, 1).unwrap(), 1.0 / (1.0 + (-x).exp()), epsilon = 1e-15);
        assert!(clan_survival_prob(&f, 1, 1).is_err());
    }

    #[test]
    fn h_n_examples() {
        let f = functionals(&WalkPath::from_increments(0.0, vec![0.0]));
        assert_relative_eq!(h_n(&f, 1, 0.0).unwrap(), 0.5);
        let f = functionals(&WalkPath::from_increments(0.0, vec![0.4, -0.9, 1.1]));
        assert_eq!(h_n(&f, 3, 1.0).unwrap(), 0.0);
        assert!(h_n(&f, 3, 1.0 - 1e-12).unwrap() < 1e-10);
    }

    #[test]
    fn survives_extreme_walks() {
        // S_k far below zero: e^{-S_k} overflows, log form does not
        let p = WalkPath::from_increments(0.0, vec![-400.0; 4]);
        let f = functionals(&p);
        assert!(f.overflowed);
        let hs = clan_survival_all(&f, 4).unwrap();
        assert!(hs.iter().all(|h| h.is_finite() && *h >= 0.0 && *h <= 1.0));
        // clan 3 lived one generation with m = e^{-400}; naive evaluation rounds this to 0
        assert_relative_eq!(hs[3], (-400.0f64).exp(), max_relative = 1e-12);
        let naive = 1.0 - nested(&p, 3, 4, 0.0);
        assert_eq!(naive, 0.0);
    }

    fn random_walks(fam: Family, count: usize, n: usize, seed: u64) -> Vec<WalkPath> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| sample_path(&fam, n, &mut rng)).collect()
    }

    #[test]
    fn product_identity_and_telescoping() {
        for p in random_walks(Family::Gaussian { mu: -0.5, sigma2: 1.0 }, 1000, 12, 4) {
            let f = functionals(&p);
            let n = p.len();
            let h0 = h_n(&f, n, 0.0).unwrap();
            let c0 = clan_survival_prob(&f, 0, n).unwrap();
            assert!((h0 - c0).abs() <= 1e-13, "{h0} {c0}");
            let prod: f64 = (0..n).map(|k| nested(&p, k, n, 0.0)).product();
            assert_relative_eq!(prod, f.a[n] / (f.a[n] + f.b[n]), max_relative = 1e-12);
            let total: f64 = clan_survival_all(&f, n).unwrap().iter().sum();
            assert!(total <= 1.0 + 1e-12);
            // direct definition of H_{i,n}
            for i in 0..n {
                let direct = nested_tail(&p, i, n, 0.0)
                    * (0..n).filter(|&k| k != i).map(|k| nested(&p, k, n, 0.0)).product::<f64>();
                let h = clan_survival_prob(&f, i, n).unwrap();
                assert!(h > 0.0 && h < 1.0);
                assert_relative_eq!(h, direct, max_relative = 1e-11);
            }
        }
    }

    #[test]
    fn composition_agrees_with_nested_evaluation() {
        for p in random_walks(Family::ShiftedExponential { rate: 2.0, shift: -1.2 }, 200, 30, 5) {
            for i in 0..=30 {
                for n in i..=30 {
                    let g = compose_range(&p, i, n, Direction::Forward).unwrap();
                    for s in [0.0, 0.3, 0.9] {
                        assert!((g.eval(s) - nested(&p, i, n, s)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn monotone_and_convex_on_grid() {
        for p in random_walks(Family::TwoPoint { x_minus: -1.0, x_plus: 1.0, p_plus: 0.4 }, 100, 10, 6) {
            let g = closed_form(&functionals(&p), 0, 10).unwrap();
            let vals: Vec<f64> = (0..=100).map(|k| g.eval(k as f64 / 100.0)).collect();
            assert!(vals.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(vals.windows(2).all(|w| w[1] >= w[0]));
            assert!(vals.windows(3).all(|w| w[2] - 2.0 * w[1] + w[0] >= -1e-14));
        }
    }
}
