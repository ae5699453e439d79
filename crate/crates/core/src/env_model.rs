//! Environment increment laws `X = log m(F)`, the geometric offspring law they
//! induce, regime classification and the tilting parameters.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Default regime tolerance for the closed-form families.
pub const CLOSED_FORM_TOL: f64 = 1e-10;
/// Default regime tolerance when moments come from quadrature.
pub const QUADRATURE_TOL: f64 = 1e-6;

/// Anything that produces i.i.d. walk increments.
pub trait StepLaw: Sync {
    fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> f64;
    fn step_mean(&self) -> f64;
    fn step_variance(&self) -> f64;
}

/// A parametric law for `X`. No sign constraint on the mean; see
/// [`IncrementLaw`] for the validated subcritical wrapper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Gaussian { mu: f64, sigma2: f64 },
    TwoPoint { x_minus: f64, x_plus: f64, p_plus: f64 },
    /// `X = shift + E` with `E ~ Exp(rate)`.
    ShiftedExponential { rate: f64, shift: f64 },
    /// Point mass, used for deterministic sanity values.
    Degenerate { value: f64 },
}

impl Family {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Family::Gaussian { mu, sigma2 } => mu.is_finite() && sigma2.is_finite() && sigma2 > 0.0,
            Family::TwoPoint { x_minus, x_plus, p_plus } => {
                x_minus.is_finite() && x_plus.is_finite() && x_minus < 0.0 && x_plus > 0.0 && p_plus > 0.0 && p_plus < 1.0
            }
            Family::ShiftedExponential { rate, shift } => rate.is_finite() && rate > 0.0 && shift.is_finite(),
            Family::Degenerate { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidLaw(format!("{self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Family::Gaussian { mu, .. } => mu,
            Family::TwoPoint { x_minus, x_plus, p_plus } => (1.0 - p_plus) * x_minus + p_plus * x_plus,
            Family::ShiftedExponential { rate, shift } => shift + 1.0 / rate,
            Family::Degenerate { value } => value,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Family::Gaussian { sigma2, .. } => sigma2,
            Family::TwoPoint { x_minus, x_plus, p_plus } => p_plus * (1.0 - p_plus) * (x_plus - x_minus).powi(2),
            Family::ShiftedExponential { rate, .. } => 1.0 / (rate * rate),
            Family::Degenerate { .. } => 0.0,
        }
    }

    /// `E[e^{tX}]`, or `None` where it diverges.
    pub fn mgf(&self, t: f64) -> Option<f64> {
        let v = match *self {
            Family::Gaussian { mu, sigma2 } => (t * mu + 0.5 * t * t * sigma2).exp(),
            Family::TwoPoint { x_minus, x_plus, p_plus } => {
                (1.0 - p_plus) * (t * x_minus).exp() + p_plus * (t * x_plus).exp()
            }
            Family::ShiftedExponential { rate, shift } => {
                if t >= rate {
                    return None;
                }
                (t * shift).exp() * rate / (rate - t)
            }
            Family::Degenerate { value } => (t * value).exp(),
        };
        v.is_finite().then_some(v)
    }

    /// `E[X e^{tX}]`, the derivative of the mgf.
    pub fn dmgf(&self, t: f64) -> Option<f64> {
        let v = match *self {
            Family::Gaussian { mu, sigma2 } => (mu + t * sigma2) * (t * mu + 0.5 * t * t * sigma2).exp(),
            Family::TwoPoint { x_minus, x_plus, p_plus } => {
                (1.0 - p_plus) * x_minus * (t * x_minus).exp() + p_plus * x_plus * (t * x_plus).exp()
            }
            Family::ShiftedExponential { rate, shift } => {
                let m = self.mgf(t)?;
                m * (shift + 1.0 / (rate - t))
            }
            Family::Degenerate { value } => value * (t * value).exp(),
        };
        v.is_finite().then_some(v)
    }

    /// Law of `X` under `e^{tx} P(dx) / E[e^{tX}]`. Every supported family is
    /// closed under this map.
    pub fn tilt(&self, t: f64) -> Option<Family> {
        let gamma = self.mgf(t)?;
        Some(match *self {
            Family::Gaussian { mu, sigma2 } => Family::Gaussian { mu: mu + t * sigma2, sigma2 },
            Family::TwoPoint { x_minus, x_plus, p_plus } => Family::TwoPoint {
                x_minus,
                x_plus,
                p_plus: p_plus * (t * x_plus).exp() / gamma,
            },
            Family::ShiftedExponential { rate, shift } => Family::ShiftedExponential { rate: rate - t, shift },
            Family::Degenerate { value } => Family::Degenerate { value },
        })
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self, Family::TwoPoint { .. } | Family::Degenerate { .. })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Family::Gaussian { mu, sigma2 } => {
                // Parameters are validated at construction.
                Normal::new(mu, sigma2.sqrt()).expect("validated").sample(rng)
            }
            Family::TwoPoint { x_minus, x_plus, p_plus } => {
                if rng.random::<f64>() < p_plus {
                    x_plus
                } else {
                    x_minus
                }
            }
            Family::ShiftedExponential { rate, shift } => shift + Exp::new(rate).expect("validated").sample(rng),
            Family::Degenerate { value } => value,
        }
    }

    /// `E[f(X)]` by numerical integration (exact summation for atoms).
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        match *self {
            Family::Gaussian { mu, sigma2 } => {
                let sd = sigma2.sqrt();
                let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma2).sqrt();
                let g = |x: f64| f(x) * norm * (-0.5 * (x - mu) * (x - mu) / sigma2).exp();
                quad::integrate_outward(&g, mu, 0.25 * sd, 1.0) + quad::integrate_outward(&g, mu, 0.25 * sd, -1.0)
            }
            Family::TwoPoint { x_minus, x_plus, p_plus } => (1.0 - p_plus) * f(x_minus) + p_plus * f(x_plus),
            Family::ShiftedExponential { rate, shift } => {
                let g = |x: f64| f(x) * rate * (-rate * (x - shift)).exp();
                quad::integrate_outward(&g, shift, 0.25 / rate, 1.0)
            }
            Family::Degenerate { value } => f(value),
        }
    }
}

impl StepLaw for Family {
    fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sample(rng)
    }
    fn step_mean(&self) -> f64 {
        self.mean()
    }
    fn step_variance(&self) -> f64 {
        self.variance()
    }
}

/// Law of `X` under the original measure, checked to be subcritical with a
/// finite first exponential moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IncrementLaw {
    family: Family,
}

impl IncrementLaw {
    pub fn new(family: Family) -> Result<Self> {
        family.validate()?;
        let mean = family.mean();
        if !(mean.is_finite() && mean < 0.0) {
            return Err(Error::NotSubcritical { mean });
        }
        if family.mgf(1.0).is_none() {
            return Err(Error::NonFiniteMoment { t: 1.0 });
        }
        Ok(IncrementLaw { family })
    }

    pub fn gaussian(mu: f64, sigma2: f64) -> Result<Self> {
        Self::new(Family::Gaussian { mu, sigma2 })
    }

    pub fn two_point(x_minus: f64, x_plus: f64, p_plus: f64) -> Result<Self> {
        Self::new(Family::TwoPoint { x_minus, x_plus, p_plus })
    }

    pub fn shifted_exponential(rate: f64, shift: f64) -> Result<Self> {
        Self::new(Family::ShiftedExponential { rate, shift })
    }

    pub fn degenerate(value: f64) -> Result<Self> {
        Self::new(Family::Degenerate { value })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn mean(&self) -> f64 {
        self.family.mean()
    }

    pub fn is_lattice(&self) -> bool {
        self.family.is_lattice()
    }
}

impl StepLaw for IncrementLaw {
    fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.family.sample(rng)
    }
    fn step_mean(&self) -> f64 {
        self.family.mean()
    }
    fn step_variance(&self) -> f64 {
        self.family.variance()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegimeKind {
    StronglySubcritical,
    IntermediateSubcritical,
    WeaklySubcritical { beta: f64 },
}

impl RegimeKind {
    pub fn name(&self) -> &'static str {
        match self {
            RegimeKind::StronglySubcritical => "strong",
            RegimeKind::IntermediateSubcritical => "intermediate",
            RegimeKind::WeaklySubcritical { .. } => "weak",
        }
    }
}

/// Regime together with the tilt `delta` (1, or beta in the weak case) and
/// `gamma = E[e^{delta X}]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeClass {
    pub kind: RegimeKind,
    pub delta: f64,
    pub gamma: f64,
}

impl RegimeClass {
    pub fn is_strong(&self) -> bool {
        matches!(self.kind, RegimeKind::StronglySubcritical)
    }

    pub fn is_intermediate(&self) -> bool {
        matches!(self.kind, RegimeKind::IntermediateSubcritical)
    }

    pub fn is_weak(&self) -> bool {
        matches!(self.kind, RegimeKind::WeaklySubcritical { .. })
    }
}

/// `m(F) = e^x`. Saturates to `+inf` (with a logged warning) on overflow.
pub fn mean_offspring(x: f64) -> f64 {
    let m = x.exp();
    if m.is_infinite() && x.is_finite() {
        log::warn!("mean offspring e^{x} overflows; saturating to +inf");
    }
    m
}

/// `p = e^x / (1 + e^x)`, the parameter of the geometric offspring law.
pub fn geometric_p(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `q = 1 / (1 + e^x) = F(0)`.
pub fn geometric_q(x: f64) -> f64 {
    geometric_p(-x)
}

pub fn gamma_of(law: &IncrementLaw, delta: f64) -> Result<f64> {
    law.family.mgf(delta).ok_or(Error::NonFiniteMoment { t: delta })
}

/// Root of `t -> E[X e^{tX}]` in `(0, 1)` by bisection.
pub fn solve_beta(law: &IncrementLaw, tol: f64) -> Result<f64> {
    let f = |t: f64| law.family.dmgf(t).ok_or(Error::NonFiniteMoment { t });
    let mut lo = 1e-6;
    let mut hi = 1.0 - 1e-6;
    let mut flo = f(lo)?;
    while flo >= 0.0 && lo > 1e-300 {
        lo *= 1e-3;
        flo = f(lo)?;
    }
    let mut fhi = f(hi)?;
    while fhi <= 0.0 && hi < 1.0 {
        let next = 0.5 * (hi + 1.0);
        if next == hi {
            break;
        }
        hi = next;
        fhi = f(hi)?;
    }
    if flo >= 0.0 || fhi <= 0.0 {
        return Err(Error::NoBetaRoot);
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm.abs() <= tol || hi - lo <= f64::EPSILON * mid {
            break;
        }
        if fm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}

/// Classifies by the sign of `E[X e^X]`: strong below `-tol`, intermediate
/// within `tol`, weak above.
pub fn classify_regime(law: &IncrementLaw, tol: f64) -> Result<RegimeClass> {
    if law.mean() >= 0.0 {
        return Err(Error::NotSubcritical { mean: law.mean() });
    }
    let slope = law.family.dmgf(1.0).ok_or(Error::NonFiniteMoment { t: 1.0 })?;
    let (kind, delta) = if slope < -tol {
        (RegimeKind::StronglySubcritical, 1.0)
    } else if slope.abs() <= tol {
        (RegimeKind::IntermediateSubcritical, 1.0)
    } else {
        let beta = solve_beta(law, tol)?;
        (RegimeKind::WeaklySubcritical { beta }, beta)
    };
    Ok(RegimeClass { kind, delta, gamma: gamma_of(law, delta)? })
}

/// Builds the regime the caller asserts, checking it against the law within
/// `tol`. Intended for parameter manifolds such as `mu = -sigma2`.
pub fn assert_regime(law: &IncrementLaw, name: &str, tol: f64) -> Result<RegimeClass> {
    let found = classify_regime(law, tol)?;
    if found.kind.name() != name {
        return Err(Error::WrongRegime { expected: name.to_string(), found: found.kind.name().to_string() });
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn mean_offspring_values() {
        assert_eq!(mean_offspring(0.0), 1.0);
        assert_relative_eq!(mean_offspring(2f64.ln()), 2.0, epsilon = 1e-15);
        assert_relative_eq!(mean_offspring(-1.5), 0.22313016014842982, epsilon = 1e-15);
        assert!(mean_offspring(1000.0).is_infinite());
        assert_relative_eq!(geometric_p(0.0), 0.5);
        assert_relative_eq!(geometric_p(1.0) + geometric_q(1.0), 1.0);
    }

    #[test]
    fn constructor_rejects_bad_laws() {
        assert!(matches!(IncrementLaw::gaussian(0.1, 1.0), Err(Error::NotSubcritical { .. })));
        assert!(matches!(IncrementLaw::gaussian(-1.0, -1.0), Err(Error::InvalidLaw(_))));
        // E[e^X] infinite when rate <= 1
        assert!(matches!(IncrementLaw::shifted_exponential(0.9, -3.0), Err(Error::NonFiniteMoment { .. })));
        assert!(IncrementLaw::two_point(-1.0, 1.0, 0.3).is_ok());
    }

    #[test]
    fn gaussian_regimes() {
        let s = classify_regime(&IncrementLaw::gaussian(-1.5, 1.0).unwrap(), CLOSED_FORM_TOL).unwrap();
        assert!(s.is_strong());
        assert_relative_eq!(s.gamma, (-1.0f64).exp(), epsilon = 1e-15);
        let m = classify_regime(&IncrementLaw::gaussian(-1.0, 1.0).unwrap(), CLOSED_FORM_TOL).unwrap();
        assert!(m.is_intermediate());
        let w = classify_regime(&IncrementLaw::gaussian(-0.5, 1.0).unwrap(), CLOSED_FORM_TOL).unwrap();
        match w.kind {
            RegimeKind::WeaklySubcritical { beta } => assert!((beta - 0.5).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
        assert_eq!(w.delta, match w.kind {
            RegimeKind::WeaklySubcritical { beta } => beta,
            _ => unreachable!(),
        });
    }

    #[test]
    fn beta_examples() {
        let tol = 1e-12;
        let b = solve_beta(&IncrementLaw::gaussian(-0.5, 1.0).unwrap(), tol).unwrap();
        assert!((b - 0.5).abs() < 1e-10);
        let b = solve_beta(&IncrementLaw::gaussian(-0.25, 1.0).unwrap(), tol).unwrap();
        assert!((b - 0.25).abs() < 1e-10);
        let b = solve_beta(&IncrementLaw::two_point(-1.0, 1.0, 0.3).unwrap(), tol).unwrap();
        assert!((b - 0.5 * (7.0f64 / 3.0).ln()).abs() < 1e-10);
        // shift + 1/(rate - beta) = 0
        let b = solve_beta(&IncrementLaw::shifted_exponential(3.0, -0.45).unwrap(), tol).unwrap();
        assert!((b - (3.0 - 1.0 / 0.45)).abs() < 1e-10);
    }

    #[test]
    fn beta_root_missing_for_strong_law() {
        let law = IncrementLaw::gaussian(-1.5, 1.0).unwrap();
        assert_eq!(solve_beta(&law, 1e-10), Err(Error::NoBetaRoot));
    }

    #[test]
    fn gamma_examples() {
        let g = gamma_of(&IncrementLaw::gaussian(-1.5, 1.0).unwrap(), 1.0).unwrap();
        assert_relative_eq!(g, 0.36787944117144233, epsilon = 1e-15);
        let tp = IncrementLaw::two_point(-1.0, 1.0, 0.3).unwrap();
        assert_eq!(gamma_of(&tp, 0.0).unwrap(), 1.0);
        let expected = 0.7 * (-1.0f64).exp() + 0.3 * 1.0f64.exp();
        assert_relative_eq!(gamma_of(&tp, 1.0).unwrap(), expected, epsilon = 1e-15);
        assert!((expected - 1.0730).abs() < 1e-4);
        let se = IncrementLaw::shifted_exponential(2.0, -1.0).unwrap();
        assert!(matches!(gamma_of(&se, 2.5), Err(Error::NonFiniteMoment { .. })));
    }

    #[test]
    fn closed_forms_match_quadrature() {
        let laws = [
            Family::Gaussian { mu: -0.7, sigma2: 1.3 },
            Family::ShiftedExponential { rate: 2.5, shift: -1.2 },
            Family::TwoPoint { x_minus: -2.0, x_plus: 0.5, p_plus: 0.4 },
        ];
        for fam in laws {
            for t in [0.0, 0.3, 1.0] {
                let mgf = fam.expect(|x| (t * x).exp());
                let dmgf = fam.expect(|x| x * (t * x).exp());
                assert_relative_eq!(mgf, fam.mgf(t).unwrap(), max_relative = 1e-12);
                assert_relative_eq!(dmgf, fam.dmgf(t).unwrap(), max_relative = 1e-10, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn beta_checked_by_quadrature() {
        for fam in [
            Family::Gaussian { mu: -0.3, sigma2: 0.8 },
            Family::ShiftedExponential { rate: 3.0, shift: -0.45 },
            Family::TwoPoint { x_minus: -1.0, x_plus: 1.0, p_plus: 0.3 },
        ] {
            let law = IncrementLaw::new(fam).unwrap();
            let beta = solve_beta(&law, 1e-12).unwrap();
            let resid = fam.expect(|x| x * (beta * x).exp());
            assert!(resid.abs() < 1e-10, "{fam:?}: {resid}");
        }
    }

    #[test]
    fn tilted_families_match_reweighting() {
        let tp = Family::TwoPoint { x_minus: -1.0, x_plus: 1.0, p_plus: 0.3 };
        match tp.tilt(1.0).unwrap() {
            Family::TwoPoint { p_plus, .. } => {
                let gamma = 0.7 * (-1.0f64).exp() + 0.3 * 1.0f64.exp();
                assert_relative_eq!(p_plus, 0.3 * 1.0f64.exp() / gamma, epsilon = 1e-15);
                assert!((p_plus - 0.7601).abs() < 1e-4);
            }
            other => panic!("{other:?}"),
        }
        for fam in [Family::Gaussian { mu: -1.5, sigma2: 1.0 }, Family::ShiftedExponential { rate: 2.5, shift: -1.2 }] {
            let tilted = fam.tilt(1.0).unwrap();
            let gamma = fam.mgf(1.0).unwrap();
            let m = fam.expect(|x| x * x.exp()) / gamma;
            assert_relative_eq!(tilted.mean(), m, max_relative = 1e-10);
        }
        assert_eq!(Family::Gaussian { mu: -1.5, sigma2: 1.0 }.tilt(1.0).unwrap(), Family::Gaussian { mu: -0.5, sigma2: 1.0 });
    }

    #[test]
    fn tilted_mean_vanishes_for_driftless_regimes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for law in [IncrementLaw::gaussian(-1.0, 1.0).unwrap(), IncrementLaw::gaussian(-0.5, 1.0).unwrap()] {
            let reg = classify_regime(&law, CLOSED_FORM_TOL).unwrap();
            let tilted = law.family().tilt(reg.delta).unwrap();
            let n = 200_000;
            let mean: f64 = (0..n).map(|_| tilted.sample(&mut rng)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "{mean}");
        }
    }

    proptest! {
        #[test]
        fn classification_stable_under_tol_halving(mu in -3.0f64..-0.05, sigma2 in 0.1f64..3.0) {
            let law = IncrementLaw::gaussian(mu, sigma2).unwrap();
            let tol = 1e-8;
            prop_assume!(law.family().dmgf(1.0).unwrap().abs() > 10.0 * tol);
            let a = classify_regime(&law, tol).unwrap();
            let b = classify_regime(&law, tol / 2.0).unwrap();
            prop_assert_eq!(a.kind.name(), b.kind.name());
        }

        #[test]
        fn beta_root_is_root(mu in -2.0f64..-0.05, sigma2 in 0.1f64..3.0) {
            let law = IncrementLaw::gaussian(mu, sigma2).unwrap();
            prop_assume!(mu + sigma2 > 1e-6);
            let beta = solve_beta(&law, 1e-12).unwrap();
            prop_assert!(beta > 0.0 && beta < 1.0);
            prop_assert!(law.family().dmgf(beta).unwrap().abs() <= 1e-12);
        }
    }
}
