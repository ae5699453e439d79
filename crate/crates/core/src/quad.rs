//! Composite Gauss-Legendre quadrature used as an independent check on the
//! closed-form moments.

use std::sync::OnceLock;

const ORDER: usize = 20;

fn nodes() -> &'static [(f64, f64); ORDER] {
    static NODES: OnceLock<[(f64, f64); ORDER]> = OnceLock::new();
    NODES.get_or_init(|| {
        let mut out = [(0.0, 0.0); ORDER];
        let n = ORDER as f64;
        for (k, slot) in out.iter_mut().enumerate() {
            // Newton iteration on P_n from the Chebyshev-like initial guess.
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for j in 2..=ORDER {
                    let j = j as f64;
                    let p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            *slot = (x, 2.0 / ((1.0 - x * x) * dp * dp));
        }
        out
    })
}

/// Integral of `f` over `[lo, hi]` with one Gauss-Legendre panel.
pub fn panel<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> f64 {
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    nodes().iter().map(|&(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

/// Integrates `f` over `[start, +inf)` (direction `+1`) or `(-inf, start]`
/// (direction `-1`), adding panels of width `width` until three consecutive
/// panels contribute less than `1e-17` of the running total.
pub fn integrate_outward<F: Fn(f64) -> f64>(f: &F, start: f64, width: f64, direction: f64) -> f64 {
    let mut total = 0.0;
    let mut quiet = 0;
    let mut lo = start;
    for _ in 0..200_000 {
        let hi = lo + direction * width;
        let part = panel(f, lo.min(hi), lo.max(hi));
        total += part;
        if part.abs() <= 1e-17 * total.abs() || part == 0.0 {
            quiet += 1;
            if quiet >= 3 {
                break;
            }
        } else {
            quiet = 0;
        }
        lo = hi;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two() {
        let s: f64 = nodes().iter().map(|p| p.1).sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn integrates_polynomials_exactly() {
        let v = panel(&|x: f64| x.powi(7) + 3.0 * x * x, 0.0, 2.0);
        assert!((v - (256.0 / 8.0 + 8.0)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_tail_integral() {
        let dens = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let v = integrate_outward(&dens, 0.0, 0.5, 1.0) + integrate_outward(&dens, 0.0, 0.5, -1.0);
        assert!((v - 1.0).abs() < 1e-14);
    }
}
