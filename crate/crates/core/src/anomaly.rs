//! Solution spaces for the delta-supported counterterms that cancel the
//! local obstruction, organized by how many vector indices the entry
//! tuple carries besides the divergence index.
//!
//! Each solver builds the dimensionally allowed derivative ansatz on the
//! total delta, imposes the exchange symmetries that products of
//! identical entries force, and extracts the linear constraints on the
//! ansatz constants. All linear algebra is exact, over Gaussian
//! rationals on the monomial coordinates of the derivative polynomials;
//! the reports describe solution spaces, never numeric choices.

use crate::canon::Idx;
use crate::delta::{DTerm, DeltaPoly};
use crate::fields;
use crate::scalar::{GaussRat, Scalar, Sym};
use crate::tproduct;
use serde::Serialize;
use std::collections::BTreeMap;
use std::collections::BTreeSet;

/// Free index reserved for the divergence direction.
const MU: Idx = Idx(1);
/// Free indices of the remaining vector entries, in entry order.
const NU1: Idx = Idx(2);
const NU2: Idx = Idx(3);
const NU3: Idx = Idx(4);
/// Helper label for contracted derivative pairs; used at most twice per
/// term, so it contracts away on construction.
const DOT: Idx = Idx(9);

/// Monomial body of a term, the coordinates the linear algebra runs over.
type Body = (Vec<(Idx, Idx)>, Vec<(u8, Idx)>, BTreeMap<(u8, u8), u32>);

fn body_of(t: &DTerm) -> Body {
    (t.mets.clone(), t.mom.clone(), t.dots.clone())
}

fn eq(a: &DeltaPoly, b: &DeltaPoly) -> bool {
    a.sub(b).is_zero()
}

fn map_coeff(p: &DeltaPoly, f: impl Fn(&Scalar) -> Scalar) -> DeltaPoly {
    let terms = p
        .terms()
        .iter()
        .map(|t| DTerm {
            coeff: f(&t.coeff),
            mets: t.mets.clone(),
            mom: t.mom.clone(),
            dots: t.dots.clone(),
        })
        .collect();
    DeltaPoly::from_terms(p.n, p.has_y, terms)
}

fn subst_all(p: &DeltaPoly, pairs: &[(Sym, Scalar)]) -> DeltaPoly {
    map_coeff(p, |s| {
        let mut s = s.clone();
        for (sym, v) in pairs {
            s = s.substitute(*sym, v);
        }
        s
    })
}

/// Component of a polynomial that is linear homogeneous in the given
/// symbols: the coefficient polynomial of one symbol, all others to zero.
fn unit_component(p: &DeltaPoly, syms: &[Sym], which: usize) -> DeltaPoly {
    map_coeff(p, |s| {
        let mut s = s.clone();
        for (k, sym) in syms.iter().enumerate() {
            let v = if k == which { Scalar::one() } else { Scalar::zero() };
            s = s.substitute(*sym, &v);
        }
        s
    })
}

fn coeff_at(p: &DeltaPoly, body: &Body) -> GaussRat {
    p.terms()
        .iter()
        .find(|t| t.mets == body.0 && t.mom == body.1 && t.dots == body.2)
        .map(|t| t.coeff.as_gauss().expect("numeric coefficient"))
        .unwrap_or_else(GaussRat::zero)
}

/// Row rank by Gaussian elimination over Gaussian rationals.
fn rank_rows(mut rows: Vec<Vec<GaussRat>>) -> usize {
    let cols = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..rows.len()).find(|&r| !rows[r][c].is_zero()) else {
            continue;
        };
        rows.swap(rank, p);
        let inv = rows[rank][c].inv();
        for r in 0..rows.len() {
            if r != rank && !rows[r][c].is_zero() {
                let f = rows[r][c].mul(&inv);
                for cc in c..cols {
                    let s = rows[rank][cc].mul(&f).neg();
                    rows[r][cc] = rows[r][cc].add(&s);
                }
            }
        }
        rank += 1;
        if rank == rows.len() {
            break;
        }
    }
    rank
}

/// Rank of a family of numeric polynomials on their shared monomial
/// coordinates.
fn rank(ops: &[DeltaPoly]) -> usize {
    let mut bodies = BTreeSet::new();
    for p in ops {
        for t in p.terms() {
            bodies.insert(body_of(t));
        }
    }
    let bodies: Vec<Body> = bodies.into_iter().collect();
    let rows = ops
        .iter()
        .map(|p| bodies.iter().map(|b| coeff_at(p, b)).collect())
        .collect();
    rank_rows(rows)
}

/// Number of independent linear conditions the vanishing of the residuals
/// places on the symbols. Each residual must be linear homogeneous in
/// them.
fn independent_conditions(residuals: &[DeltaPoly], syms: &[Sym]) -> usize {
    let mut rows = Vec::new();
    for r in residuals {
        let comps: Vec<DeltaPoly> =
            (0..syms.len()).map(|k| unit_component(r, syms, k)).collect();
        let mut bodies = BTreeSet::new();
        for c in &comps {
            for t in c.terms() {
                bodies.insert(body_of(t));
            }
        }
        for b in bodies {
            rows.push(comps.iter().map(|c| coeff_at(c, &b)).collect());
        }
    }
    rank_rows(rows)
}

/// Solution space when the tuple has no vector entry besides the
/// divergence index: one scalar pair entry and the pinned current.
#[derive(Debug, Clone, Serialize)]
pub struct Case3Report {
    /// Points of the representative tuple.
    pub points: usize,
    /// Ansatz basis on the total delta.
    pub basis: Vec<DeltaPoly>,
    /// Dimension of the ansatz space.
    pub dimension: usize,
    /// Whether every basis element is invariant under exchanging the
    /// current point with the distinguished point, indices paired.
    pub symmetric: bool,
    /// Divergence of the basis element in the distinguished point.
    pub divergence: DeltaPoly,
}

/// Solves the two-index case. The counterterm has rank two and no
/// derivatives, and every rank-two monomial besides the bare metric
/// carries momentum factors, so the space is one-dimensional.
pub fn solve_case3() -> Case3Report {
    let total = DeltaPoly::delta(2, true);
    let basis = vec![total.mul_metric(MU, NU1)];
    let dimension = rank(&basis);
    let pm = [0, 2, 1];
    let symmetric = basis.iter().all(|b| eq(&b.permute(&pm, &[(MU, NU1)]), b));
    let divergence = basis[0].divergence_y(MU);
    Case3Report { points: 2, basis, dimension, symmetric, divergence }
}

/// Which pairs of the three vector entries are identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case2Variant {
    /// All three entries alike.
    A,
    /// Entries one and two alike.
    B,
    /// Entries two and three alike.
    C,
}

impl Case2Variant {
    pub fn label(self) -> &'static str {
        match self {
            Case2Variant::A => "2a",
            Case2Variant::B => "2b",
            Case2Variant::C => "2c",
        }
    }
}

impl std::str::FromStr for Case2Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "2a" => Ok(Case2Variant::A),
            "2b" => Ok(Case2Variant::B),
            "2c" => Ok(Case2Variant::C),
            other => Err(format!("unknown variant `{other}`, expected 2a, 2b or 2c")),
        }
    }
}

/// Solution space for a tuple with four vector indices: the divergence
/// index plus three vector entries.
#[derive(Debug, Clone, Serialize)]
pub struct Case2Report {
    pub variant: String,
    /// The three metric-product structures on the total delta.
    pub basis: Vec<DeltaPoly>,
    /// Linear constraints forced on the basis constants, as equations in
    /// c1, c2, c3.
    pub constraints: Vec<String>,
    /// Dimension of the constrained solution space.
    pub solution_dimension: usize,
    /// A fully antisymmetric rank-four structure flips sign under each
    /// paired transposition while the delta stays fixed, so it is ruled
    /// out whenever one generator is a transposition.
    pub epsilon_excluded: bool,
    /// Whether the assembled obstruction itself is invariant under the
    /// variant's entry exchanges, checked on the product terms.
    pub exchange_symmetric: bool,
    /// Constraints re-checked exactly: generic residuals have full rank
    /// and vanish identically once the constraints are substituted.
    pub verified: bool,
}

/// Solves the four-index case. The counterterm has rank four and no
/// derivatives, so it is a combination of the three metric products; the
/// identical entries force invariance under their paired exchanges, and
/// the like-entry variant with the pinned pair adds the invariance of the
/// contracted divergence under exchanging the last point with the
/// distinguished one.
pub fn solve_case2(variant: Case2Variant) -> Case2Report {
    let total = DeltaPoly::delta(3, true);
    let basis = vec![
        total.mul_metric(MU, NU1).mul_metric(NU2, NU3),
        total.mul_metric(MU, NU2).mul_metric(NU1, NU3),
        total.mul_metric(MU, NU3).mul_metric(NU1, NU2),
    ];
    let syms = [Sym::C1, Sym::C2, Sym::C3];
    let u = basis[0]
        .scale(&Scalar::sym(Sym::C1))
        .add(&basis[1].scale(&Scalar::sym(Sym::C2)))
        .add(&basis[2].scale(&Scalar::sym(Sym::C3)));

    // Paired generators: each swaps two entry points together with their
    // indices.
    let gen01 = (vec![1usize, 0, 2, 3], vec![(NU1, NU2)]);
    let gen12 = (vec![0usize, 2, 1, 3], vec![(NU2, NU3)]);
    let j = fields::current(Idx(1));
    let pair = fields::a_phistar_phi(Idx(1));
    let (gens, constraints, entries, pairs) = match variant {
        Case2Variant::A => (
            vec![gen01, gen12],
            vec!["c1 = c2".to_string(), "c2 = c3".to_string()],
            vec![j.clone(), j.clone(), j.clone()],
            vec![(0usize, 1usize), (1, 2)],
        ),
        Case2Variant::B => (
            vec![gen01],
            vec!["c1 = c2".to_string()],
            vec![pair.clone(), pair.clone(), j.clone()],
            vec![(0, 1)],
        ),
        Case2Variant::C => (
            vec![gen12],
            vec!["c2 = c3".to_string(), "c1 = c2".to_string()],
            vec![pair.clone(), j.clone(), j.clone()],
            vec![(1, 2)],
        ),
    };

    let mut residuals: Vec<DeltaPoly> = gens
        .iter()
        .map(|(pm, sw)| u.permute(pm, sw).sub(&u))
        .collect();
    if variant == Case2Variant::C {
        // The pinned pair: contracting the last entry index with its own
        // point exposes one more exchange invariance, against the
        // distinguished point.
        let dd = u.divergence_y(MU).deriv_x(2, NU3);
        residuals.push(dd.permute(&[0, 1, 3, 2], &[]).sub(&dd));
    }
    let conditions = independent_conditions(&residuals, &syms);
    let solution_dimension = 3 - conditions;

    let c3 = Scalar::sym(Sym::C3);
    let sub: Vec<(Sym, Scalar)> = match variant {
        Case2Variant::A | Case2Variant::C => {
            vec![(Sym::C1, c3.clone()), (Sym::C2, c3.clone())]
        }
        Case2Variant::B => vec![(Sym::C1, Scalar::sym(Sym::C2))],
    };
    let verified = conditions == constraints.len()
        && residuals.iter().all(|r| subst_all(r, &sub).is_zero());

    let epsilon_excluded = gens.iter().any(|(_, sw)| sw.len() % 2 == 1);
    let exchange_symmetric = pairs.iter().all(|&(a, b)| {
        tproduct::anomaly_exchange_symmetric(&entries, a, b)
            .expect("representative entries carry definite charge")
    });

    Case2Report {
        variant: variant.label().to_string(),
        basis,
        constraints,
        solution_dimension,
        epsilon_excluded,
        exchange_symmetric,
        verified,
    }
}

/// Solution space for the two-index case with interaction entries: the
/// current sits at one point, the other points carry interaction terms.
#[derive(Debug, Clone, Serialize)]
pub struct Case1Report {
    /// Number of interaction points.
    pub m: usize,
    /// Second-order derivative operators on the total delta, with the
    /// derivative sums running over the interaction points.
    pub basis: Vec<DeltaPoly>,
    pub rank: usize,
    /// Zero-based positions of identically vanishing basis operators.
    pub zero_ops: Vec<usize>,
    /// The same span through derivatives at the current point and the
    /// distinguished point only.
    pub alt_basis: Vec<DeltaPoly>,
    pub alt_rank: usize,
    /// Whether the two bases span the same space.
    pub span_equal: bool,
    /// Whether each operator of the first group is invariant under
    /// exchanging the current point with the distinguished point, indices
    /// paired, and keeps an invariant double divergence.
    pub group1_invariant: bool,
    /// The linear relation forced on the second-group constants.
    pub constraint: String,
    /// Independent conditions the exchange invariance of the double
    /// divergence imposes; one means exactly the stated relation.
    pub independent_conditions: usize,
    /// The residual vanishes identically once the relation is
    /// substituted.
    pub constraint_verified: bool,
    /// Second-group combination rewritten without the eliminated
    /// constant.
    pub replacement: DeltaPoly,
    /// The replacement is invariant under the paired exchange.
    pub replacement_symmetric: bool,
    /// The replacement has the same divergence in the distinguished point
    /// as the constrained original.
    pub divergence_preserved: bool,
    /// The derivative-free metric term is already invariant, so it needs
    /// no replacement.
    pub scalar_term_symmetric: bool,
    /// Whether the assembled obstruction is invariant under exchanging
    /// two interaction entries, checked on the product terms.
    pub exchange_symmetric: bool,
}

/// Solves the two-index interaction case for m interaction points. The
/// basis is the nine second-order operators; the exchange invariance of
/// the fully contracted divergence ties the four operators at the current
/// and distinguished points together, and the tied combination admits a
/// manifestly symmetric rewriting with the same divergence.
pub fn solve_case1(m: usize) -> Case1Report {
    assert!(m >= 1, "at least one interaction point");
    let n = m + 1;
    let nu = NU1;
    let total = DeltaPoly::delta(n, true);

    let metric_sum = |parts: Vec<DeltaPoly>| {
        let mut out = DeltaPoly::zero(n, true);
        for p in parts {
            out = out.add(&p);
        }
        out
    };

    // First index block: sums over the interaction points k >= 1; the
    // current point is 0.
    let o1 = metric_sum((1..=m).map(|k| total.deriv_x(k, DOT).deriv_x(k, DOT)).collect())
        .mul_metric(MU, nu);
    let o2 = metric_sum((1..=m).map(|k| total.deriv_x(k, MU).deriv_x(k, nu)).collect());
    let mut cross_dot = Vec::new();
    let mut cross_mu = Vec::new();
    for k in 1..=m {
        for l in 1..=m {
            if k != l {
                cross_dot.push(total.deriv_x(k, DOT).deriv_x(l, DOT));
                cross_mu.push(total.deriv_x(k, MU).deriv_x(l, nu));
            }
        }
    }
    let o3 = metric_sum(cross_dot).mul_metric(MU, nu);
    let o4 = metric_sum(cross_mu);
    let o5 = metric_sum((1..=m).map(|k| total.deriv_x(0, DOT).deriv_x(k, DOT)).collect())
        .mul_metric(MU, nu);
    let o6 = metric_sum((1..=m).map(|k| total.deriv_x(0, MU).deriv_x(k, nu)).collect());
    let o7 = metric_sum((1..=m).map(|k| total.deriv_x(0, nu).deriv_x(k, MU)).collect());
    let o8 = total.deriv_x(0, DOT).deriv_x(0, DOT).mul_metric(MU, nu);
    let o9 = total.deriv_x(0, MU).deriv_x(0, nu);
    let basis = vec![o1, o2, o3, o4, o5, o6, o7, o8, o9];
    let basis_rank = rank(&basis);
    let zero_ops: Vec<usize> =
        basis.iter().enumerate().filter(|(_, b)| b.is_zero()).map(|(i, _)| i).collect();

    // Same span after eliminating the interaction sums through momentum
    // conservation, which the representation applies automatically: the
    // first group keeps the interaction sums, the second carries only the
    // current point and the distinguished point.
    let p3 = total.deriv_x(0, MU).deriv_y(nu);
    let p4 = total.deriv_y(MU).deriv_x(0, nu);
    let p5 = total.deriv_y(DOT).deriv_x(0, DOT).mul_metric(MU, nu);
    let g_box2 = basis[7].clone();
    let g_boxy = total.deriv_y(DOT).deriv_y(DOT).mul_metric(MU, nu);
    let d2d2 = basis[8].clone();
    let dydy = total.deriv_y(MU).deriv_y(nu);
    let alt_basis = vec![
        basis[0].clone(),
        basis[1].clone(),
        p3,
        p4,
        p5,
        g_box2.clone(),
        g_boxy.clone(),
        d2d2.clone(),
        dydy.clone(),
    ];
    let alt_rank = rank(&alt_basis);
    let mut joint = basis.clone();
    joint.extend(alt_basis.iter().cloned());
    let span_equal = basis_rank == alt_rank && rank(&joint) == basis_rank;

    // Paired exchange of the current point with the distinguished point.
    let mut pm_paired: Vec<usize> = (0..=n).collect();
    pm_paired[0] = n;
    pm_paired[n] = 0;
    let pm = pm_paired.clone();
    let swaps = [(MU, nu)];
    let exchange = |p: &DeltaPoly| p.permute(&pm, &swaps);
    let plain = |p: &DeltaPoly| p.permute(&pm, &[]);
    let dd = |p: &DeltaPoly| p.divergence_y(MU).deriv_x(0, nu);
    let group1_invariant = alt_basis[..5].iter().all(|p| {
        eq(&exchange(p), p) && {
            let d = dd(p);
            eq(&plain(&d), &d)
        }
    });

    // Second group with free constants; the double divergence must be
    // invariant under the plain point exchange.
    let syms = [Sym::C1, Sym::C2, Sym::C3, Sym::C4];
    let u = alt_basis[5]
        .scale(&Scalar::sym(Sym::C1))
        .add(&alt_basis[6].scale(&Scalar::sym(Sym::C2)))
        .add(&alt_basis[7].scale(&Scalar::sym(Sym::C3)))
        .add(&alt_basis[8].scale(&Scalar::sym(Sym::C4)));
    let r = {
        let d = dd(&u);
        plain(&d).sub(&d)
    };
    let independent = independent_conditions(&[r.clone()], &syms);
    let constraint = "c1 = c2 - c3 + c4".to_string();
    let relation = Scalar::sym(Sym::C2)
        .sub(&Scalar::sym(Sym::C3))
        .add(&Scalar::sym(Sym::C4));
    let constraint_verified =
        independent == 1 && subst_all(&r, &[(Sym::C1, relation.clone())]).is_zero();

    // Symmetric rewriting of the tied combination.
    let c2 = Scalar::sym(Sym::C2);
    let c3 = Scalar::sym(Sym::C3);
    let c4 = Scalar::sym(Sym::C4);
    let replacement = g_box2
        .add(&g_boxy)
        .scale(&c2.add(&c4))
        .add(&d2d2.sub(&g_box2).add(&dydy).sub(&g_boxy).scale(&c3));
    let replacement_symmetric = eq(&exchange(&replacement), &replacement);
    let constrained = subst_all(&u, &[(Sym::C1, relation)]);
    let divergence_preserved =
        eq(&replacement.divergence_y(MU), &constrained.divergence_y(MU));
    let scalar_term = total.mul_metric(MU, nu);
    let scalar_term_symmetric = eq(&exchange(&scalar_term), &scalar_term);

    let entries =
        vec![fields::lagrangian(), fields::lagrangian(), fields::current(Idx(1))];
    let exchange_symmetric = tproduct::anomaly_exchange_symmetric(&entries, 0, 1)
        .expect("representative entries carry definite charge");

    Case1Report {
        m,
        basis,
        rank: basis_rank,
        zero_ops,
        alt_basis,
        alt_rank,
        span_equal,
        group1_invariant,
        constraint,
        independent_conditions: independent,
        constraint_verified,
        replacement,
        replacement_symmetric,
        divergence_preserved,
        scalar_term_symmetric,
        exchange_symmetric,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_two_index_space_is_the_metric_line() {
        let r = solve_case3();
        assert_eq!(r.dimension, 1);
        assert!(r.symmetric);
        assert!(!r.divergence.is_zero());
        // The divergence spreads over both momenta.
        assert_eq!(r.divergence.terms().len(), 2);
    }

    #[test]
    fn all_three_entries_alike_pins_the_metric_products_together() {
        let r = solve_case2(Case2Variant::A);
        assert_eq!(r.constraints, vec!["c1 = c2", "c2 = c3"]);
        assert_eq!(r.solution_dimension, 1);
        assert!(r.epsilon_excluded);
        assert!(r.exchange_symmetric);
        assert!(r.verified);
    }

    #[test]
    fn a_single_like_pair_leaves_two_constants() {
        let r = solve_case2(Case2Variant::B);
        assert_eq!(r.constraints, vec!["c1 = c2"]);
        assert_eq!(r.solution_dimension, 2);
        assert!(r.exchange_symmetric);
        assert!(r.verified);
    }

    #[test]
    fn the_pinned_pair_variant_pins_all_three_again() {
        let r = solve_case2(Case2Variant::C);
        assert_eq!(r.constraints, vec!["c2 = c3", "c1 = c2"]);
        assert_eq!(r.solution_dimension, 1);
        assert!(r.exchange_symmetric);
        assert!(r.verified);
    }

    #[test]
    fn two_interaction_points_give_the_full_rank_basis() {
        let r = solve_case1(2);
        assert_eq!(r.rank, 9);
        assert!(r.zero_ops.is_empty());
        assert_eq!(r.alt_rank, 9);
        assert!(r.span_equal);
        assert!(r.group1_invariant);
        assert_eq!(r.independent_conditions, 1);
        assert!(r.constraint_verified);
        assert!(r.replacement_symmetric);
        assert!(r.divergence_preserved);
        assert!(r.scalar_term_symmetric);
        assert!(r.exchange_symmetric);
    }

    #[test]
    fn one_interaction_point_drops_the_cross_sums() {
        let r = solve_case1(1);
        assert_eq!(r.zero_ops, vec![2, 3]);
        assert_eq!(r.rank, 7);
        assert!(r.span_equal);
        assert!(r.constraint_verified);
        assert!(r.replacement_symmetric);
        assert!(r.divergence_preserved);
    }

    #[test]
    fn the_tied_combination_is_not_symmetric_before_rewriting() {
        // The rewriting is needed: with generic constants the constrained
        // combination itself is not exchange invariant, only its
        // divergence data is.
        let r = solve_case1(2);
        let u = r.alt_basis[5]
            .scale(&Scalar::sym(Sym::C1))
            .add(&r.alt_basis[6].scale(&Scalar::sym(Sym::C2)))
            .add(&r.alt_basis[7].scale(&Scalar::sym(Sym::C3)))
            .add(&r.alt_basis[8].scale(&Scalar::sym(Sym::C4)));
        let relation = Scalar::sym(Sym::C2)
            .sub(&Scalar::sym(Sym::C3))
            .add(&Scalar::sym(Sym::C4));
        let constrained = subst_all(&u, &[(Sym::C1, relation)]);
        let mut pm: Vec<usize> = (0..=3).collect();
        pm[0] = 3;
        pm[3] = 0;
        let swapped = constrained.permute(&pm, &[(MU, NU1)]);
        assert!(!swapped.sub(&constrained).is_zero());
    }
}
