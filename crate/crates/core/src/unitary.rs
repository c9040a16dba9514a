//! Finite local charge transformations as truncated power series.
//!
//! A transformed functional is expanded in powers of a global order
//! parameter `a` multiplying a fixed direction function `beta`. Each
//! coefficient is an exact field polynomial carrying the appropriate
//! test-function factors, so the defining flow equation can be checked
//! order by order with no approximation. The module also evaluates the
//! two derivation parts of the charge variation on named functionals.

use crate::canon::Idx;
use crate::fields::{
    self, FTerm, FieldPolynomial, Generator, Species, TestBase, TestFactor,
};
use crate::scalar::{GaussRat, Scalar};
use num::BigInt;
use num::rational::BigRational;

/// A polynomial in the order parameter with field-polynomial coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ASeries {
    coeffs: Vec<FieldPolynomial>,
}

impl ASeries {
    pub fn from_coeffs(coeffs: Vec<FieldPolynomial>) -> Self {
        ASeries { coeffs }
    }

    /// Coefficient of the k-th power; zero beyond the stored range.
    pub fn coeff(&self, k: usize) -> FieldPolynomial {
        self.coeffs.get(k).cloned().unwrap_or_else(FieldPolynomial::zero)
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// True when every stored coefficient vanishes.
    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }
}

/// Truncation order for series checks; overridable through the
/// MWI_TRUNCATION_ORDER environment variable.
pub fn default_truncation() -> usize {
    std::env::var("MWI_TRUNCATION_ORDER")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(3)
}

/// Fresh label for the derivative index on a test factor.
fn fresh_label(p: &FieldPolynomial) -> Idx {
    Idx(p.max_label() + 1)
}

/// Local derivation part of the charge variation: multiplies by the total
/// charge and by one plain test factor.
pub fn delta0_with(p: &FieldPolynomial, base: TestBase) -> FieldPolynomial {
    let th = p.theta();
    FieldPolynomial::from_terms(
        th.terms()
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.tests.push(TestFactor::plain(base));
                t
            })
            .collect(),
    )
}

/// Gradient derivation part of the charge variation: replaces one
/// derivative generator by its underived field and contracts the freed
/// index with a derived test factor.
pub fn delta1_with(p: &FieldPolynomial, base: TestBase) -> FieldPolynomial {
    let mu = fresh_label(p);
    let th = p.theta_mu(mu);
    FieldPolynomial::from_terms(
        th.terms()
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.tests.push(TestFactor::deriv(base, mu));
                t
            })
            .collect(),
    )
}

/// The full charge variation `-i (delta0 + delta1)` for the given test
/// direction.
pub fn delta_q(p: &FieldPolynomial, base: TestBase) -> FieldPolynomial {
    delta0_with(p, base).add(&delta1_with(p, base)).scale(&Scalar::minus_i())
}

/// `(i q)^k / k!` as an exact coefficient.
fn phase_coeff(q: i64, k: usize) -> GaussRat {
    let mut fact = BigInt::from(1);
    for j in 1..=k {
        fact *= BigInt::from(j as u64);
    }
    let mag = BigRational::new(BigInt::from(q).pow(k as u32), fact);
    match k % 4 {
        0 => GaussRat { re: mag, im: BigRational::from_integer(BigInt::from(0)) },
        1 => GaussRat { re: BigRational::from_integer(BigInt::from(0)), im: mag },
        2 => GaussRat { re: -mag, im: BigRational::from_integer(BigInt::from(0)) },
        _ => GaussRat { re: BigRational::from_integer(BigInt::from(0)), im: -mag },
    }
}

/// Applies the finite transformation of charged fields to a functional and
/// expands in powers of the order parameter up to and including `k_max`.
///
/// Per term, every derivative generator branches into its unshifted form
/// or the underived field times a derived test factor, and the whole term
/// is multiplied by the charge phase expanded as an exponential series in
/// plain test factors.
pub fn transform(f: &FieldPolynomial, k_max: usize) -> ASeries {
    let mut buckets: Vec<Vec<FTerm>> = vec![Vec::new(); k_max + 1];
    for t in f.terms() {
        let q: i64 = t.gens.iter().map(|g| g.species.charge()).sum();
        let deriv_pos: Vec<usize> = t
            .gens
            .iter()
            .enumerate()
            .filter(|(_, g)| matches!(g.species, Species::DPhi | Species::DPhiStar))
            .map(|(k, _)| k)
            .collect();
        for mask in 0..(1u32 << deriv_pos.len()) {
            let mut gens = t.gens.clone();
            let mut tests = t.tests.clone();
            let mut coeff = t.coeff.clone();
            let mut converted = 0usize;
            for (bit, pos) in deriv_pos.iter().enumerate() {
                if mask & (1 << bit) == 0 {
                    continue;
                }
                let g = gens[*pos];
                let ix = g.index.expect("derivative generator carries an index");
                let (species, sign) = match g.species {
                    Species::DPhi => (Species::Phi, Scalar::i()),
                    Species::DPhiStar => (Species::PhiStar, Scalar::minus_i()),
                    _ => unreachable!(),
                };
                gens[*pos] = Generator::new(species, None);
                tests.push(TestFactor::deriv(TestBase::Beta, ix));
                coeff = coeff.mul(&sign);
                converted += 1;
            }
            if converted > k_max {
                continue;
            }
            let top = k_max - converted;
            for p in 0..=top {
                if p > 0 && q == 0 {
                    break;
                }
                let mut tests_p = tests.clone();
                for _ in 0..p {
                    tests_p.push(TestFactor::plain(TestBase::Beta));
                }
                buckets[converted + p].push(FTerm {
                    coeff: coeff.mul(&Scalar::constant(phase_coeff(q, p))),
                    tests: tests_p,
                    metrics: t.metrics.clone(),
                    gens: gens.clone(),
                });
            }
        }
    }
    ASeries::from_coeffs(buckets.into_iter().map(FieldPolynomial::from_terms).collect())
}

/// Flow residuals of a series under the charge variation: order j holds
/// `(j+1) c_{j+1} + delta_q(c_j)`, which must vanish for a transformed
/// functional.
fn flow_residuals(series: &ASeries, k_max: usize) -> Vec<FieldPolynomial> {
    (0..k_max)
        .map(|j| {
            series
                .coeff(j + 1)
                .scale(&Scalar::from_int((j + 1) as i64))
                .add(&delta_q(&series.coeff(j), TestBase::Beta))
        })
        .collect()
}

/// Checks the defining flow equation for the transformed functional up to
/// the given order; the returned residual series is zero exactly when it
/// holds.
pub fn check_fa(f: &FieldPolynomial, k_max: usize) -> ASeries {
    ASeries::from_coeffs(flow_residuals(&transform(f, k_max), k_max))
}

/// The free-action shift produced by the transformation, exact to all
/// orders: zero at order 0, a current-gradient coupling at order 1 and a
/// quadratic gradient term at order 2.
pub fn delta_l0() -> ASeries {
    let mu = Idx(1);
    let linear = FieldPolynomial::from_terms(
        fields::current(mu)
            .terms()
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.tests.push(TestFactor::deriv(TestBase::Beta, mu));
                t
            })
            .collect(),
    );
    let quad = FieldPolynomial::from_terms(
        fields::phiphistar()
            .terms()
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.tests.push(TestFactor::deriv(TestBase::Beta, Idx(1)));
                t.tests.push(TestFactor::deriv(TestBase::Beta, Idx(1)));
                t
            })
            .collect(),
    );
    ASeries::from_coeffs(vec![FieldPolynomial::zero(), linear, quad])
}

/// Checks the flow equation of the free-action shift. Its source term is
/// the order-1 coefficient itself, so the residual at order j is
/// `(j+1) c_{j+1} + delta_q(c_j) - c_1 delta_{j,0}`.
pub fn check_dl0_da(k_max: usize) -> ASeries {
    let series = delta_l0();
    let mut out = flow_residuals(&series, k_max);
    if !out.is_empty() {
        out[0] = out[0].sub(&series.coeff(1));
    }
    ASeries::from_coeffs(out)
}

/// The two derivation parts of the charge variation evaluated on the
/// interaction functional, with the transformation direction `alpha`.
pub fn derivations() -> (FieldPolynomial, FieldPolynomial) {
    let s = fields::interaction_s();
    (delta0_with(&s, TestBase::Alpha), delta1_with(&s, TestBase::Alpha))
}

/// A family of functionals spanning the distinct generator structures,
/// charges and test-factor patterns used by the series checks.
pub fn functional_family() -> Vec<FieldPolynomial> {
    let m1 = Idx(1);
    let m2 = Idx(2);
    vec![
        fields::phi(),
        fields::phistar(),
        fields::dphi(m1),
        fields::dphistar(m1),
        fields::a_field(m1),
        fields::phiphistar(),
        fields::phi().mul(&fields::dphistar(m1)),
        fields::phistar().mul(&fields::dphi(m1)),
        fields::current(m1),
        fields::j_dot_a(),
        fields::lagrangian(),
        fields::a_squared().mul(&fields::phiphistar()),
        fields::phi().mul(&fields::phi()),
        fields::phistar().mul(&fields::phistar()),
        fields::a_squared(),
        fields::phi().mul(&fields::dphi(m1)),
        fields::a_phistar_phi(m1),
        fields::phi().mul(&fields::a_field(m1)),
        fields::dphi(m1).mul(&fields::dphistar(m2)),
        fields::phiphistar().mul(&fields::phiphistar()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Sym;

    fn with_tests(p: &FieldPolynomial, extra: &[TestFactor]) -> FieldPolynomial {
        FieldPolynomial::from_terms(
            p.terms()
                .iter()
                .map(|t| {
                    let mut t = t.clone();
                    t.tests.extend_from_slice(extra);
                    t
                })
                .collect(),
        )
    }

    #[test]
    fn transform_of_scalar_field() {
        let series = transform(&fields::phi(), 2);
        assert_eq!(series.coeff(0), fields::phi());
        let want1 = with_tests(&fields::phi(), &[TestFactor::plain(TestBase::Beta)])
            .scale(&Scalar::i());
        assert_eq!(series.coeff(1), want1);
        let want2 = with_tests(
            &fields::phi(),
            &[TestFactor::plain(TestBase::Beta), TestFactor::plain(TestBase::Beta)],
        )
        .scale(&Scalar::ratio(-1, 2));
        assert_eq!(series.coeff(2), want2);
    }

    #[test]
    fn transform_of_derivative_field() {
        let mu = Idx(1);
        let series = transform(&fields::dphi(mu), 1);
        let converted = with_tests(&fields::phi(), &[TestFactor::deriv(TestBase::Beta, mu)]);
        let phase = with_tests(&fields::dphi(mu), &[TestFactor::plain(TestBase::Beta)]);
        assert_eq!(series.coeff(1), converted.add(&phase).scale(&Scalar::i()));
    }

    #[test]
    fn neutral_functional_is_inert_up_to_gradients() {
        // The photon field carries no charge and no derivative generator,
        // so its series terminates at order zero.
        let series = transform(&fields::a_field(Idx(1)), 3);
        assert_eq!(series.coeff(0), fields::a_field(Idx(1)));
        for k in 1..=3 {
            assert!(series.coeff(k).is_zero());
        }
    }

    #[test]
    fn flow_equation_holds_for_family() {
        for f in functional_family() {
            assert!(check_fa(&f, 3).is_zero(), "nonzero flow residual for {}", f);
        }
    }

    #[test]
    fn flow_equation_detects_wrong_series() {
        let series =
            ASeries::from_coeffs(vec![fields::phi(), FieldPolynomial::zero()]);
        let residuals = flow_residuals(&series, 1);
        assert!(!residuals[0].is_zero());
    }

    #[test]
    fn free_action_shift_flow_is_exact() {
        assert!(check_dl0_da(4).is_zero());
    }

    #[test]
    fn derivation_values_on_interaction() {
        let (d0, d1) = derivations();
        assert!(d0.is_zero());
        let mu = Idx(5);
        let want = with_tests(
            &fields::a_phistar_phi(mu),
            &[TestFactor::plain(TestBase::G), TestFactor::deriv(TestBase::Alpha, mu)],
        )
        .scale(&Scalar::from_int(-2).mul(&Scalar::i()).mul(&Scalar::sym(Sym::E)));
        assert_eq!(d1, want);
    }
}
