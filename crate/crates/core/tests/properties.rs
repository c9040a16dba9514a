//! Cross-module algebraic properties on randomized inputs.
//!
//! Polynomials are generated with term-uniform free index sets: either no
//! free index or exactly the free label 1, so every strategy output is a
//! well-typed polynomial and survives printing.

use mwi_core::canon::Idx;
use mwi_core::delta::DeltaPoly;
use mwi_core::dsl;
use mwi_core::fields::{self, FieldPolynomial};
use mwi_core::scalar::{Scalar, Sym};
use mwi_core::tproduct::{verify_theorem, Direction};
use mwi_core::unitary;
use mwi_core::wick::{check_order2_wi, t2_tree, KernelKind, NormOpts};
use proptest::prelude::*;

/// Index-free building blocks; derivative pairs arrive pre-contracted.
fn scalar_atom() -> impl Strategy<Value = FieldPolynomial> {
    prop_oneof![
        Just(fields::phi()),
        Just(fields::phistar()),
        Just(fields::phiphistar()),
        Just(fields::a_squared()),
        (2u32..4).prop_map(|i| fields::dphi(Idx(i)).mul(&fields::dphistar(Idx(i)))),
    ]
}

/// Blocks carrying the free label 1.
fn vector_atom() -> impl Strategy<Value = FieldPolynomial> {
    prop_oneof![
        Just(fields::a_field(Idx(1))),
        Just(fields::dphi(Idx(1))),
        Just(fields::dphistar(Idx(1))),
    ]
}

/// Small exact coefficients over the Gaussian rationals with e powers.
fn coeff() -> impl Strategy<Value = Scalar> {
    (1i64..=4, any::<bool>(), any::<bool>(), 0u32..=2).prop_map(|(k, neg, imag, epow)| {
        let mut c = Scalar::from_int(if neg { -k } else { k });
        if imag {
            c = c.mul(&Scalar::i());
        }
        for _ in 0..epow {
            c = c.mul(&Scalar::sym(Sym::E));
        }
        c
    })
}

/// One monomial; with `vector` set it carries the free label 1.
fn monomial(vector: bool) -> impl Strategy<Value = FieldPolynomial> {
    (proptest::collection::vec(scalar_atom(), 0..=2), vector_atom(), coeff()).prop_map(
        move |(scalars, v, c)| {
            let mut p = if vector { v } else { FieldPolynomial::one() };
            for s in &scalars {
                p = p.mul(s);
            }
            p.scale(&c)
        },
    )
}

/// Sums of up to three monomials sharing one free-index shape.
fn poly() -> impl Strategy<Value = FieldPolynomial> {
    any::<bool>().prop_flat_map(|vector| {
        proptest::collection::vec(monomial(vector), 1..=3).prop_map(|ms| {
            let mut p = FieldPolynomial::zero();
            for m in &ms {
                p = p.add(m);
            }
            p
        })
    })
}

/// Fresh free label above everything the strategies use.
const FRESH: Idx = Idx(9);

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn normal_form_is_idempotent(p in poly()) {
        let rebuilt = FieldPolynomial::from_terms(p.terms().to_vec());
        prop_assert_eq!(rebuilt, p);
    }

    #[test]
    fn charge_grading_obeys_leibniz(a in poly(), b in poly()) {
        let lhs = a.mul(&b).theta();
        let rhs = a.theta().mul(&b).add(&a.mul(&b.theta()));
        prop_assert!(lhs.sub(&rhs).is_zero());
    }

    #[test]
    fn gradient_companion_obeys_leibniz(a in poly(), b in poly()) {
        let lhs = a.mul(&b).theta_mu(FRESH);
        let rhs = a.theta_mu(FRESH).mul(&b).add(&a.mul(&b.theta_mu(FRESH)));
        prop_assert!(lhs.sub(&rhs).is_zero());
    }

    #[test]
    fn charges_add_under_the_pairing(
        a in prop_oneof![monomial(false), monomial(true)],
        b in prop_oneof![monomial(false), monomial(true)],
    ) {
        let qa = a.charge_number().expect("monomials are eigenvectors");
        let qb = b.charge_number().expect("monomials are eigenvectors");
        let z = a.zeta(&b);
        prop_assert!(z.theta().sub(&z.scale(&Scalar::from_int(qa + qb))).is_zero());
    }

    #[test]
    fn the_pairing_of_single_derivative_entries_has_no_gradient_part(
        a in prop_oneof![monomial(false), monomial(true)],
        b in prop_oneof![monomial(false), monomial(true)],
    ) {
        prop_assume!(a.single_derivative_only() && b.single_derivative_only());
        prop_assert!(a.zeta(&b).theta_mu(FRESH).is_zero());
    }

    #[test]
    fn conjugation_is_an_involution_and_flips_the_charge(p in poly()) {
        prop_assert!(p.charge_conjugate().charge_conjugate().sub(&p).is_zero());
        if let Ok(q) = p.charge_number() {
            prop_assert_eq!(p.charge_conjugate().charge_number().unwrap(), -q);
        }
    }

    #[test]
    fn submonomial_multiplicities_are_binomial(
        m in prop_oneof![monomial(false), monomial(true)],
    ) {
        let d = m.terms()[0].gens.len();
        let mut by_degree = vec![0i64; d + 1];
        for e in m.submonomials() {
            let k = e.sub.terms().first().map(|t| t.gens.len()).unwrap_or(0);
            by_degree[k] += e.factor;
        }
        let mut binom = 1i64;
        for (k, sum) in by_degree.iter().enumerate() {
            prop_assert_eq!(*sum, binom);
            binom = binom * (d as i64 - k as i64) / (k as i64 + 1).max(1);
        }
    }
}

/// Random derivative chain on the total delta; index multiplicities stay
/// at most two so every label is either free or one contracted pair.
fn delta_input() -> impl Strategy<Value = DeltaPoly> {
    (
        1usize..=3,
        0u32..=2,
        0u32..=2,
        proptest::collection::vec(0usize..=3, 4),
        1i64..=5,
        any::<bool>(),
        1i64..=3,
    )
        .prop_map(|(n, m2, m3, points, k, spoil, ks)| {
            let mut d = DeltaPoly::delta(n, true);
            let mut chain: Vec<Idx> = Vec::new();
            chain.extend(std::iter::repeat(Idx(2)).take(m2 as usize));
            chain.extend(std::iter::repeat(Idx(3)).take(m3 as usize));
            for (slot, idx) in chain.into_iter().enumerate() {
                let p = points[slot] % (n + 1);
                if p == n {
                    d = d.deriv_y(idx);
                } else {
                    d = d.deriv_x(p, idx);
                }
            }
            d = d.scale(&Scalar::from_int(k));
            if spoil {
                let mut s = DeltaPoly::delta(n, true);
                for idx in d.free_indices() {
                    s = s.deriv_x(0, idx);
                }
                d = d.add(&s.scale(&Scalar::from_int(ks)));
            }
            d
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn potentials_solve_exactly_the_integral_zero_inputs(d in delta_input()) {
        let mu = Idx(1);
        let io_zero = d.integrate_out_y().is_zero();
        match d.poincare_solve(mu) {
            Ok(u) => {
                prop_assert!(io_zero);
                prop_assert!(u.divergence_y(mu).sub(&d).is_zero());
                if !d.is_zero() {
                    let deg = |p: &DeltaPoly| {
                        p.terms().iter().map(|t| t.degree()).max().unwrap_or(0)
                    };
                    prop_assert_eq!(deg(&u) + 1, deg(&d));
                }
            }
            Err(_) => prop_assert!(!io_zero),
        }
    }
}

#[test]
fn divergence_free_kernels_shift_solutions() {
    let mu = Idx(1);
    let dot = Idx(8);
    let total = DeltaPoly::delta(2, true);
    // (sum q)^2 q0^mu - (sum q . q0) (sum q)^mu has vanishing divergence.
    let a = total.deriv_y(dot).deriv_y(dot).deriv_x(0, mu);
    let b = total.deriv_y(dot).deriv_x(0, dot).deriv_y(mu);
    let w = a.sub(&b);
    assert!(w.divergence_y(mu).is_zero());

    let d = total.deriv_y(Idx(7)).deriv_y(Idx(7));
    let u = d.poincare_solve(mu).expect("box of the delta is a divergence");
    assert!(u.add(&w).divergence_y(mu).sub(&d).is_zero());
}

#[test]
fn point_symmetrization_commutes_with_the_divergence() {
    let mu = Idx(1);
    let u = DeltaPoly::delta(2, true)
        .deriv_x(0, mu)
        .deriv_x(0, Idx(5))
        .deriv_x(1, Idx(5));
    let gens = vec![(vec![1usize, 0, 2], vec![])];
    let left = u.symmetrize(&gens).divergence_y(mu);
    let right = u.divergence_y(mu).symmetrize(&gens);
    assert!(left.sub(&right).is_zero());
}

#[test]
fn tree_products_contract_opposite_charges_only() {
    let opts = NormOpts::default();
    let c = Scalar::sym(Sym::C);
    let same = fields::phi().mul(&fields::phi());
    let t_same = t2_tree(&same, &same, &c, &opts).unwrap();
    assert!(t_same.terms().iter().all(|t| t.kernels.is_empty()));

    let conj = fields::phistar().mul(&fields::phistar());
    let t_mixed = t2_tree(&same, &conj, &c, &opts).unwrap();
    assert!(t_mixed.terms().iter().any(|t| !t.kernels.is_empty()));
}

#[test]
fn identity_residuals_are_delta_supported_even_off_convention() {
    let flipped = NormOpts { kg_delta_sign: -1, ..NormOpts::default() };
    let c = Scalar::sym(Sym::C);
    let entries =
        [fields::dphi(Idx(1)), fields::dphistar(Idx(1)), fields::current(Idx(1))];
    let mut some_violation = false;
    for b in &entries {
        let r = check_order2_wi(b, &c, &flipped).unwrap();
        some_violation |= !r.is_zero();
        for t in r.terms() {
            assert!(
                t.kernels.iter().all(|k| k.kind == KernelKind::Dirac),
                "propagator term survived the on-shell reduction"
            );
        }
    }
    assert!(some_violation, "flipping the wave-operator sign must break a line");
}

#[test]
fn tree_products_are_affine_in_the_interpolation_parameter() {
    let opts = NormOpts::default();
    let c = Scalar::sym(Sym::C);
    let pairs = [
        (fields::dphi(Idx(1)), fields::dphistar(Idx(2))),
        (fields::current(Idx(1)), fields::current(Idx(2))),
        (fields::j_dot_a(), fields::j_dot_a()),
    ];
    for (a, b) in &pairs {
        let t = t2_tree(a, b, &c, &opts).unwrap();
        for term in t.terms() {
            for (pow, _) in term.coeff.iter() {
                assert!(pow[Sym::C.slot()] <= 1, "quadratic c dependence in {term:?}");
            }
        }
    }
}

#[test]
fn the_equivalence_holds_at_both_interpolation_endpoints() {
    let entries = [fields::lagrangian(), fields::current(Idx(1))];
    for c in [Scalar::zero(), Scalar::one()] {
        for dir in [Direction::MwiToWi, Direction::WiToMwi] {
            assert!(verify_theorem(&entries, &c, dir).ok());
        }
    }
}

#[test]
fn the_equivalence_is_independent_of_entry_order() {
    let c = Scalar::sym(Sym::C);
    let fwd = [fields::lagrangian(), fields::current(Idx(1))];
    let rev = [fields::current(Idx(1)), fields::lagrangian()];
    for dir in [Direction::MwiToWi, Direction::WiToMwi] {
        assert!(verify_theorem(&fwd, &c, dir).ok());
        assert!(verify_theorem(&rev, &c, dir).ok());
    }
}

#[test]
fn composing_the_flow_doubles_the_parameter() {
    let k = 3;
    for f in [fields::phi(), fields::phiphistar(), fields::current(Idx(1))] {
        let once = unitary::transform(&f, k);
        for m in 0..=k {
            let mut composed = FieldPolynomial::zero();
            for j in 0..=m {
                composed = composed.add(&unitary::transform(&once.coeff(j), k).coeff(m - j));
            }
            let doubled = once.coeff(m).scale(&Scalar::from_int(1 << m));
            assert!(
                composed.sub(&doubled).is_zero(),
                "composition fails at order {m} for {f}"
            );
        }
    }
}

#[test]
fn long_identical_factor_products_normalize() {
    // Eight mutually contracted photon factors in one term; the grading
    // still obeys the Leibniz law and the product is its own normal form.
    let a4 = fields::a_squared().mul(&fields::a_squared());
    let product = a4.mul(&a4);
    assert_eq!(FieldPolynomial::from_terms(product.terms().to_vec()), product);
    let left = a4.theta().mul(&a4).add(&a4.mul(&a4.theta()));
    assert!(product.theta().sub(&left).is_zero());
    assert!(product.theta().is_zero());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn printed_polynomials_parse_back(p in poly()) {
        prop_assume!(!p.is_zero());
        let text = p.to_string();
        let back = dsl::parse_poly(&text)
            .unwrap_or_else(|e| panic!("reparsing {text:?}: {e}"));
        prop_assert_eq!(back, p);
    }
}
