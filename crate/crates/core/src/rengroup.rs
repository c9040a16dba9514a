//! The one-parameter renormalization maps connecting the two
//! time-ordering prescriptions.
//!
//! A map here is determined by its two-entry component, which pairs the
//! derivative gradients of its arguments on the diagonal: z2(B1, B2) =
//! lambda zeta(B1, B2) delta(x1 - x2). The first-order component is the
//! identity and all higher components vanish, so the action on an
//! interaction functional closes after the quadratic term.

use crate::canon::Idx;
use crate::delta::DeltaPoly;
use crate::fields::{
    self, FieldPolynomial, Generator, Species, TestBase, TestFactor,
};
use crate::scalar::{Scalar, Sym};

/// A renormalization map of the interpolating family.
#[derive(Debug, Clone)]
pub struct RenMap {
    /// Coefficient of the two-entry kernel.
    pub lambda: Scalar,
    /// Test hook: adds a forbidden wave-operator kernel on the scalar pair,
    /// which breaks the scaling requirement.
    pub corrupt_scalar_kernel: bool,
}

impl RenMap {
    /// The map taking the plain time ordering into the interpolated one.
    pub fn z(c: &Scalar) -> Self {
        RenMap { lambda: c.clone(), corrupt_scalar_kernel: false }
    }

    /// The inverse map.
    pub fn inverse(&self) -> Self {
        RenMap {
            lambda: self.lambda.neg(),
            corrupt_scalar_kernel: self.corrupt_scalar_kernel,
        }
    }
}

/// Density of the two-entry component at the collapsed point.
pub fn z2(map: &RenMap, b1: &FieldPolynomial, b2: &FieldPolynomial) -> FieldPolynomial {
    b1.zeta(b2).scale(&map.lambda)
}

/// Kernel of the two-entry component on a pair of single generators:
/// a distribution over the two points together with the remaining density.
/// None when the pair does not couple.
pub fn z2_kernel(
    map: &RenMap,
    g1: &Generator,
    g2: &Generator,
) -> Option<(DeltaPoly, FieldPolynomial)> {
    let p1 = generator_poly(g1);
    let p2 = generator_poly(g2);
    let density = z2(map, &p1, &p2);
    if !density.is_zero() {
        return Some((DeltaPoly::delta(2, false), density));
    }
    if map.corrupt_scalar_kernel {
        let scalar_pair = matches!(
            (g1.species, g2.species),
            (Species::Phi, Species::PhiStar) | (Species::PhiStar, Species::Phi)
        );
        if scalar_pair {
            let d = Idx(1);
            let boxed = DeltaPoly::delta(2, false).deriv_x(0, d).deriv_x(0, d);
            return Some((boxed, FieldPolynomial::constant(map.lambda.clone())));
        }
    }
    None
}

fn generator_poly(g: &Generator) -> FieldPolynomial {
    match g.species {
        Species::Phi => fields::phi(),
        Species::PhiStar => fields::phistar(),
        Species::A => fields::a_field(g.index.expect("indexed generator")),
        Species::DPhi => fields::dphi(g.index.expect("indexed generator")),
        Species::DPhiStar => fields::dphistar(g.index.expect("indexed generator")),
    }
}

/// Action on an interaction functional, exact because the series stops at
/// the quadratic component.
pub fn renormalize_interaction(map: &RenMap, s: &FieldPolynomial) -> FieldPolynomial {
    s.add(&z2(map, s, s).scale(&Scalar::ratio(1, 2)))
}

/// First-order response of the renormalized interaction to adding the
/// smeared current: the current plus the vertex correction.
pub fn interacting_current_shift(map: &RenMap, mu: Idx) -> FieldPolynomial {
    let j_smeared = FieldPolynomial::from_terms(
        fields::current(mu)
            .terms()
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.tests.push(TestFactor::plain(TestBase::Alpha));
                t
            })
            .collect(),
    );
    j_smeared.add(&z2(map, &fields::interaction_s(), &j_smeared))
}

/// One verified property of a map.
#[derive(Debug, Clone)]
pub struct SpProperty {
    pub name: &'static str,
    pub ok: bool,
    pub detail: String,
}

/// Report of the membership checks.
#[derive(Debug, Clone)]
pub struct SpReport {
    pub properties: Vec<SpProperty>,
}

impl SpReport {
    pub fn ok(&self) -> bool {
        self.properties.iter().all(|p| p.ok)
    }
}

fn generator_family() -> Vec<Generator> {
    vec![
        Generator::new(Species::Phi, None),
        Generator::new(Species::PhiStar, None),
        Generator::new(Species::A, Some(Idx(1))),
        Generator::new(Species::DPhi, Some(Idx(1))),
        Generator::new(Species::DPhiStar, Some(Idx(2))),
    ]
}

fn pair_family() -> Vec<(FieldPolynomial, FieldPolynomial)> {
    vec![
        (fields::dphi(Idx(1)), fields::dphistar(Idx(2))),
        (fields::j_dot_a(), fields::j_dot_a()),
        (fields::current(Idx(1)), fields::j_dot_a()),
        (fields::lagrangian(), fields::lagrangian()),
        (fields::current(Idx(1)), fields::current(Idx(2))),
    ]
}

/// Runs the defining checks for membership in the renormalization group:
/// identity at first order, pair symmetry, charge equivariance, locality
/// with the scaling bound, exact inversion, and well-typed tensor output.
pub fn verify_sp_membership(map: &RenMap) -> SpReport {
    let mut props = Vec::new();

    // 1. First order is the identity: a derivative-free functional is
    // fixed, and single entries are untouched by construction.
    let passive = fields::phiphistar().mul(&fields::a_squared());
    let fixed = renormalize_interaction(map, &passive) == passive;
    props.push(SpProperty {
        name: "first-order-identity",
        ok: fixed,
        detail: "derivative-free functionals are fixed points".into(),
    });

    // 2. Symmetry of the two-entry component.
    let symmetric = pair_family().iter().all(|(a, b)| {
        fields::normalize_free_labels(&z2(map, a, b))
            == fields::normalize_free_labels(&z2(map, b, a))
    });
    props.push(SpProperty {
        name: "pair-symmetry",
        ok: symmetric,
        detail: "z2(B1,B2) = z2(B2,B1) on the generator family".into(),
    });

    // 3. Charge equivariance: the kernel carries the total charge and has
    // no gradient part.
    let equivariant = pair_family().iter().all(|(a, b)| {
        let (Ok(qa), Ok(qb)) = (a.charge_number(), b.charge_number()) else {
            return false;
        };
        let img = z2(map, a, b);
        let top = Idx(img.max_label() + 1);
        img.theta() == img.scale(&Scalar::from_int(qa + qb))
            && img.theta_mu(top).is_zero()
    });
    props.push(SpProperty {
        name: "charge-equivariance",
        ok: equivariant,
        detail: "theta z2 = (b1+b2) z2 and theta_mu z2 = 0".into(),
    });

    // 4. Locality and scaling: every generator-pair kernel is a diagonal
    // distribution with scaling degree at most the dimensions supplied,
    // minus what the density uses up.
    let mut scaling_ok = true;
    let mut detail4 = String::new();
    for g1 in generator_family() {
        for g2 in generator_family() {
            if let Some((dist, density)) = z2_kernel(map, &g1, &g2) {
                let sd = dist.scaling_degree().expect("nonzero kernel");
                let budget = g1.species.mass_dimension() + g2.species.mass_dimension()
                    - density.mass_dimension().unwrap_or(0);
                if sd > budget {
                    scaling_ok = false;
                    detail4 = format!(
                        "kernel on ({:?}, {:?}) has scaling degree {} over budget {}",
                        g1.species, g2.species, sd, budget
                    );
                }
            }
        }
    }
    if scaling_ok {
        detail4 = "all pair kernels respect the scaling bound".into();
    }
    props.push(SpProperty { name: "locality-scaling", ok: scaling_ok, detail: detail4 });

    // 5. Exact inversion on interaction functionals.
    let inv = map.inverse();
    let roundtrip = [fields::interaction_s(), cubic_only()].iter().all(|s| {
        renormalize_interaction(&inv, &renormalize_interaction(map, s)) == *s
            && renormalize_interaction(map, &renormalize_interaction(&inv, s)) == *s
    });
    props.push(SpProperty {
        name: "exact-inverse",
        ok: roundtrip,
        detail: "composition with the inverse map is the identity".into(),
    });

    // 6. Well-typed tensor output: free indices of the image are exactly
    // the free indices of the inputs.
    let typed = pair_family().iter().all(|(a, b)| {
        let img = z2(map, a, b);
        if img.is_zero() {
            return true;
        }
        let mut want = a.free_indices();
        want.extend(b.free_indices());
        img.free_indices() == want
    });
    props.push(SpProperty {
        name: "tensor-typing",
        ok: typed,
        detail: "image carries the union of the free indices".into(),
    });

    SpReport { properties: props }
}

/// The smeared cubic vertex alone.
pub fn cubic_only() -> FieldPolynomial {
    FieldPolynomial::from_terms(
        fields::j_dot_a()
            .scale(&Scalar::sym(Sym::E))
            .terms()
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.tests.push(TestFactor::plain(TestBase::G));
                t
            })
            .collect(),
    )
}

/// The quartic density with the given coefficient and two smearings.
pub fn quartic_with(coeff: &Scalar) -> FieldPolynomial {
    let base = fields::a_squared()
        .mul(&fields::phiphistar())
        .scale(&coeff.mul(&Scalar::sym_pow(Sym::E, 2)));
    FieldPolynomial::from_terms(
        base.terms()
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.tests.push(TestFactor::plain(TestBase::G));
                t.tests.push(TestFactor::plain(TestBase::G));
                t
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wick::{self, NormOpts};

    fn sym_c() -> Scalar {
        Scalar::sym(Sym::C)
    }

    #[test]
    fn image_of_cubic_vertex() {
        // The cubic interaction flows to itself plus the interpolating
        // quartic term.
        let z = RenMap::z(&sym_c());
        let got = renormalize_interaction(&z, &cubic_only());
        let want = cubic_only().add(&quartic_with(&sym_c()));
        assert_eq!(got, want);
    }

    #[test]
    fn composition_identity() {
        // Feeding back the complementary quartic piece lands on the full
        // interaction, with c symbolic.
        let z = RenMap::z(&sym_c());
        let s = cubic_only().add(&quartic_with(&Scalar::one().sub(&sym_c())));
        let got = renormalize_interaction(&z, &s);
        let want = cubic_only().add(&quartic_with(&Scalar::one()));
        assert_eq!(got, want);
        assert_eq!(want, fields::interaction_s());
    }

    #[test]
    fn group_law_numeric() {
        let s = fields::interaction_s();
        let z2m = RenMap::z(&Scalar::from_int(2));
        let z3m = RenMap::z(&Scalar::from_int(3));
        let z5m = RenMap::z(&Scalar::from_int(5));
        let lhs = renormalize_interaction(&z2m, &renormalize_interaction(&z3m, &s));
        assert_eq!(lhs, renormalize_interaction(&z5m, &s));
    }

    #[test]
    fn sp_membership_and_corruption() {
        for m in [RenMap::z(&sym_c()), RenMap::z(&sym_c()).inverse()] {
            let rep = verify_sp_membership(&m);
            assert!(rep.ok(), "failed: {:?}", rep);
        }
        let mut bad = RenMap::z(&sym_c());
        bad.corrupt_scalar_kernel = true;
        let rep = verify_sp_membership(&bad);
        assert!(!rep.ok());
        let failing: Vec<_> = rep
            .properties
            .iter()
            .filter(|p| !p.ok)
            .map(|p| p.name)
            .collect();
        assert_eq!(failing, vec!["locality-scaling"]);
    }

    #[test]
    fn derivative_pair_scaling_is_exactly_four() {
        let z = RenMap::z(&sym_c());
        let g1 = Generator::new(Species::DPhi, Some(Idx(1)));
        let g2 = Generator::new(Species::DPhiStar, Some(Idx(2)));
        let (dist, density) = z2_kernel(&z, &g1, &g2).expect("coupled pair");
        assert_eq!(dist.scaling_degree(), Ok(4));
        assert_eq!(density, fields::dphi(Idx(1)).zeta(&fields::dphistar(Idx(2))).scale(&sym_c()));
    }

    #[test]
    fn current_shift_value() {
        // j(alpha) + 2 c e (A phistar phi)(g alpha).
        let z = RenMap::z(&sym_c());
        let mu = Idx(5);
        let got = interacting_current_shift(&z, mu);
        let correction = FieldPolynomial::from_terms(
            fields::a_phistar_phi(mu)
                .scale(
                    &Scalar::from_int(2)
                        .mul(&sym_c())
                        .mul(&Scalar::sym(Sym::E)),
                )
                .terms()
                .iter()
                .map(|t| {
                    let mut t = t.clone();
                    t.tests.push(TestFactor::plain(TestBase::G));
                    t.tests.push(TestFactor::plain(TestBase::Alpha));
                    t
                })
                .collect(),
        );
        let j_al = FieldPolynomial::from_terms(
            fields::current(mu)
                .terms()
                .iter()
                .map(|t| {
                    let mut t = t.clone();
                    t.tests.push(TestFactor::plain(TestBase::Alpha));
                    t
                })
                .collect(),
        );
        assert_eq!(got, j_al.add(&correction));
    }

    #[test]
    fn consistency_with_tree_product() {
        // The local difference between the two tree orderings of the cubic
        // vertex is -i times the two-entry kernel density.
        let opts = NormOpts::default();
        let v = cubic_only();
        let hat = wick::t2_tree(&v, &v, &sym_c(), &opts).unwrap();
        let plain = wick::t2_tree(&v, &v, &Scalar::zero(), &opts).unwrap();
        let diff = wick::local_delta_density(&hat.sub(&plain, &opts));
        let z = RenMap::z(&sym_c());
        assert_eq!(diff, z2(&z, &v, &v).scale(&Scalar::minus_i()));
    }
}
