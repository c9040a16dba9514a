//! Local field polynomials and the derivations acting on them.
//!
//! The generator set is fixed: the photon `A^mu`, the charged scalar `phi`
//! and its conjugate `phistar`, and their first derivatives. No higher
//! derivatives and no derivative of `A` are representable. Terms may carry
//! formal test-function factors (g, alpha, beta, h and first derivatives
//! thereof) and explicit metric factors over free indices. Everything is
//! kept in a canonical normal form with exact coefficients.

use crate::canon::{self, FlatFactor, Idx};
use crate::scalar::Scalar;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

/// Field generator species.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Species {
    /// Photon field, carries one index.
    A,
    /// Charged scalar.
    Phi,
    /// Conjugate scalar.
    PhiStar,
    /// First derivative of the scalar, carries one index.
    DPhi,
    /// First derivative of the conjugate scalar, carries one index.
    DPhiStar,
}

impl Species {
    pub fn carries_index(self) -> bool {
        matches!(self, Species::A | Species::DPhi | Species::DPhiStar)
    }

    /// Charge counted by the number operator.
    pub fn charge(self) -> i64 {
        match self {
            Species::Phi | Species::DPhi => 1,
            Species::PhiStar | Species::DPhiStar => -1,
            Species::A => 0,
        }
    }

    /// Mass dimension of the generator.
    pub fn mass_dimension(self) -> i64 {
        match self {
            Species::A | Species::Phi | Species::PhiStar => 1,
            Species::DPhi | Species::DPhiStar => 2,
        }
    }

    fn code(self) -> i64 {
        match self {
            Species::A => 0,
            Species::Phi => 1,
            Species::PhiStar => 2,
            Species::DPhi => 3,
            Species::DPhiStar => 4,
        }
    }
}

/// One field generator occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Generator {
    pub species: Species,
    pub index: Option<Idx>,
}

impl Generator {
    pub fn new(species: Species, index: Option<Idx>) -> Self {
        assert_eq!(
            species.carries_index(),
            index.is_some(),
            "index slot mismatch for {:?}",
            species
        );
        Generator { species, index }
    }
}

/// Formal test-function symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TestBase {
    /// Coupling switch g.
    G,
    /// Local transformation function alpha.
    Alpha,
    /// Fixed direction beta with alpha = a beta.
    Beta,
    /// Generic smearing function h.
    H,
}

impl TestBase {
    fn code(self) -> i64 {
        match self {
            TestBase::G => 0,
            TestBase::Alpha => 1,
            TestBase::Beta => 2,
            TestBase::H => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TestBase::G => "g",
            TestBase::Alpha => "alpha",
            TestBase::Beta => "beta",
            TestBase::H => "h",
        }
    }
}

/// A test-function factor, optionally carrying one derivative index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TestFactor {
    pub base: TestBase,
    pub deriv: Option<Idx>,
}

impl TestFactor {
    pub fn plain(base: TestBase) -> Self {
        TestFactor { base, deriv: None }
    }

    pub fn deriv(base: TestBase, idx: Idx) -> Self {
        TestFactor { base, deriv: Some(idx) }
    }
}

/// One monomial with exact coefficient, test factors, explicit metrics and
/// field generators. Metrics surviving normalization pair free indices only.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FTerm {
    pub coeff: Scalar,
    pub tests: Vec<TestFactor>,
    pub metrics: Vec<(Idx, Idx)>,
    pub gens: Vec<Generator>,
}

impl FTerm {
    pub fn constant(coeff: Scalar) -> Self {
        FTerm { coeff, tests: vec![], metrics: vec![], gens: vec![] }
    }

    fn labels(&self) -> Vec<Idx> {
        let mut out = Vec::new();
        for t in &self.tests {
            if let Some(i) = t.deriv {
                out.push(i);
            }
        }
        for (a, b) in &self.metrics {
            out.push(*a);
            out.push(*b);
        }
        for g in &self.gens {
            if let Some(i) = g.index {
                out.push(i);
            }
        }
        out
    }

    fn free_labels(&self) -> BTreeSet<Idx> {
        let mut count: BTreeMap<Idx, u32> = BTreeMap::new();
        for l in self.labels() {
            *count.entry(l).or_insert(0) += 1;
        }
        count.into_iter().filter(|&(_, c)| c == 1).map(|(l, _)| l).collect()
    }

    /// Structural key without the coefficient, used for term merging.
    fn body(&self) -> (Vec<TestFactor>, Vec<(Idx, Idx)>, Vec<Generator>) {
        (self.tests.clone(), self.metrics.clone(), self.gens.clone())
    }

    fn max_label(&self) -> u32 {
        self.labels().iter().map(|i| i.0).max().unwrap_or(0)
    }
}

/// A field polynomial in normal form: metric contractions collapsed,
/// contracted labels renamed canonically, terms sorted and merged.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FieldPolynomial {
    terms: Vec<FTerm>,
}

/// Errors from field-polynomial queries.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FieldError {
    #[error("polynomial is not an eigenvector of the charge number operator")]
    NotEigenvector,
    #[error("polynomial is not homogeneous in mass dimension")]
    NotHomogeneous,
}

/// Resolves the four metric-contraction situations on one term.
/// Returns false when no rewrite applies.
fn metric_collapse_step(t: &mut FTerm) -> bool {
    let mut count: BTreeMap<Idx, u32> = BTreeMap::new();
    for l in t.labels() {
        *count.entry(l).or_insert(0) += 1;
    }
    for k in 0..t.metrics.len() {
        let (a, b) = t.metrics[k];
        if a == b {
            // g contracted with itself: trace over four dimensions.
            t.metrics.remove(k);
            t.coeff = t.coeff.mul_int(4);
            return true;
        }
        for (hit, other) in [(a, b), (b, a)] {
            if count.get(&hit) == Some(&2) {
                t.metrics.remove(k);
                rename_one_occurrence(t, hit, other, k);
                return true;
            }
        }
    }
    false
}

/// Renames one occurrence of `from` to `to`, skipping the removed metric
/// (already deleted, so every remaining occurrence is fair game; exactly one
/// exists by the dummy count).
fn rename_one_occurrence(t: &mut FTerm, from: Idx, to: Idx, _removed: usize) {
    for tf in &mut t.tests {
        if tf.deriv == Some(from) {
            tf.deriv = Some(to);
            return;
        }
    }
    for m in &mut t.metrics {
        if m.0 == from {
            m.0 = to;
            return;
        }
        if m.1 == from {
            m.1 = to;
            return;
        }
    }
    for g in &mut t.gens {
        if g.index == Some(from) {
            g.index = Some(to);
            return;
        }
    }
    panic!("dangling contraction label {:?}", from);
}

fn flatten(t: &FTerm) -> Vec<FlatFactor> {
    let mut out = Vec::new();
    for g in &t.gens {
        out.push(FlatFactor {
            key: vec![0, g.species.code()],
            slots: g.index.iter().copied().collect(),
            symmetric: false,
        });
    }
    for tf in &t.tests {
        out.push(FlatFactor {
            key: vec![1, tf.base.code(), tf.deriv.is_some() as i64],
            slots: tf.deriv.iter().copied().collect(),
            symmetric: false,
        });
    }
    for (a, b) in &t.metrics {
        out.push(FlatFactor { key: vec![2], slots: vec![*a, *b], symmetric: true });
    }
    out
}

fn canonicalize_term(t: &FTerm) -> FTerm {
    let flat = flatten(t);
    let res = canon::canonicalize(&flat);
    let n_gens = t.gens.len();
    let n_tests = t.tests.len();
    let rename = |i: Idx| -> Idx {
        res.rename.get(&i).map(|&v| Idx(v)).unwrap_or(i)
    };
    let mut gens = Vec::new();
    let mut tests = Vec::new();
    let mut metrics = Vec::new();
    for (pos, &fi) in res.order.iter().enumerate() {
        if fi < n_gens {
            let g = t.gens[fi];
            gens.push(Generator { species: g.species, index: g.index.map(rename) });
        } else if fi < n_gens + n_tests {
            let tf = t.tests[fi - n_gens];
            tests.push(TestFactor { base: tf.base, deriv: tf.deriv.map(rename) });
        } else {
            let m = t.metrics[fi - n_gens - n_tests];
            let slots = [m.0, m.1];
            let p = &res.perms[pos];
            metrics.push((rename(slots[p[0]]), rename(slots[p[1]])));
        }
    }
    FTerm { coeff: t.coeff.clone(), tests, metrics, gens }
}

impl FieldPolynomial {
    pub fn zero() -> Self {
        FieldPolynomial { terms: vec![] }
    }

    pub fn one() -> Self {
        FieldPolynomial::constant(Scalar::one())
    }

    pub fn constant(c: Scalar) -> Self {
        FieldPolynomial::from_terms(vec![FTerm::constant(c)])
    }

    /// Builds the normal form from raw terms.
    pub fn from_terms(terms: Vec<FTerm>) -> Self {
        let mut canonical = Vec::new();
        for mut t in terms {
            if t.coeff.is_zero() {
                continue;
            }
            while metric_collapse_step(&mut t) {}
            canonical.push(canonicalize_term(&t));
        }
        let mut merged: BTreeMap<(Vec<TestFactor>, Vec<(Idx, Idx)>, Vec<Generator>), Scalar> =
            BTreeMap::new();
        for t in canonical {
            let entry = merged.entry(t.body()).or_insert_with(Scalar::zero);
            *entry = entry.add(&t.coeff);
        }
        let terms: Vec<FTerm> = merged
            .into_iter()
            .filter(|(_, c)| !c.is_zero())
            .map(|((tests, metrics, gens), coeff)| FTerm { coeff, tests, metrics, gens })
            .collect();
        let poly = FieldPolynomial { terms };
        poly.assert_well_typed();
        poly
    }

    fn assert_well_typed(&self) {
        if let Some(first) = self.terms.first() {
            let free = first.free_labels();
            for t in &self.terms[1..] {
                assert_eq!(
                    t.free_labels(),
                    free,
                    "free-index sets differ between terms"
                );
            }
        }
    }

    pub fn terms(&self) -> &[FTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Free index labels (empty for scalars and the zero polynomial).
    pub fn free_indices(&self) -> BTreeSet<Idx> {
        self.terms.first().map(|t| t.free_labels()).unwrap_or_default()
    }

    pub fn max_label(&self) -> u32 {
        self.terms.iter().map(|t| t.max_label()).max().unwrap_or(0)
    }

    pub fn add(&self, o: &FieldPolynomial) -> FieldPolynomial {
        let mut ts = self.terms.clone();
        ts.extend(o.terms.iter().cloned());
        FieldPolynomial::from_terms(ts)
    }

    pub fn sub(&self, o: &FieldPolynomial) -> FieldPolynomial {
        self.add(&o.neg())
    }

    pub fn neg(&self) -> FieldPolynomial {
        self.scale(&Scalar::from_int(-1))
    }

    pub fn scale(&self, s: &Scalar) -> FieldPolynomial {
        FieldPolynomial::from_terms(
            self.terms
                .iter()
                .map(|t| FTerm { coeff: t.coeff.mul(s), ..t.clone() })
                .collect(),
        )
    }

    /// Pointwise product. Contracted labels of the right factor are moved
    /// out of the way first, so only labels free on both sides contract.
    pub fn mul(&self, o: &FieldPolynomial) -> FieldPolynomial {
        let top = self.max_label().max(o.max_label()) + 1;
        let mut out = Vec::new();
        for a in &self.terms {
            for b in &o.terms {
                let b = relabel_bound(b, top);
                out.push(FTerm {
                    coeff: a.coeff.mul(&b.coeff),
                    tests: a.tests.iter().chain(&b.tests).copied().collect(),
                    metrics: a.metrics.iter().chain(&b.metrics).copied().collect(),
                    gens: a.gens.iter().chain(&b.gens).copied().collect(),
                });
            }
        }
        FieldPolynomial::from_terms(out)
    }

    /// Renames one free index label.
    pub fn rename_free(&self, from: Idx, to: Idx) -> FieldPolynomial {
        FieldPolynomial::from_terms(
            self.terms
                .iter()
                .map(|t| {
                    let mut t = t.clone();
                    for tf in &mut t.tests {
                        if tf.deriv == Some(from) {
                            tf.deriv = Some(to);
                        }
                    }
                    for m in &mut t.metrics {
                        if m.0 == from {
                            m.0 = to;
                        }
                        if m.1 == from {
                            m.1 = to;
                        }
                    }
                    for g in &mut t.gens {
                        if g.index == Some(from) {
                            g.index = Some(to);
                        }
                    }
                    t
                })
                .collect(),
        )
    }

    /// Charge number derivation: counts each scalar occurrence with its
    /// charge. Monomials are eigenvectors, so this multiplies each term by
    /// its total charge.
    pub fn theta(&self) -> FieldPolynomial {
        FieldPolynomial::from_terms(
            self.terms
                .iter()
                .map(|t| {
                    let q: i64 = t.gens.iter().map(|g| g.species.charge()).sum();
                    FTerm { coeff: t.coeff.mul_int(q), ..t.clone() }
                })
                .collect(),
        )
    }

    /// Gradient companion of the charge derivation: replaces one derivative
    /// generator by its plain field, signed by charge, with a metric onto
    /// the new free index `mu`.
    pub fn theta_mu(&self, mu: Idx) -> FieldPolynomial {
        let mut out = Vec::new();
        for t in &self.terms {
            for (k, g) in t.gens.iter().enumerate() {
                let (new_species, sign) = match g.species {
                    Species::DPhi => (Species::Phi, 1),
                    Species::DPhiStar => (Species::PhiStar, -1),
                    _ => continue,
                };
                let mut nt = t.clone();
                let nu = nt.gens[k].index.take().expect("derivative without index");
                nt.gens[k].species = new_species;
                nt.metrics.push((mu, nu));
                nt.coeff = nt.coeff.mul_int(sign);
                out.push(nt);
            }
        }
        FieldPolynomial::from_terms(out)
    }

    /// Derivative with respect to a derivative generator, producing the new
    /// free index `nu`: each matching occurrence is removed and replaced by
    /// a metric linking its old slot to `nu`.
    pub fn deriv_wrt(&self, species: Species, nu: Idx) -> FieldPolynomial {
        assert!(
            matches!(species, Species::DPhi | Species::DPhiStar),
            "only derivative generators have free derivatives"
        );
        let mut out = Vec::new();
        for t in &self.terms {
            for (k, g) in t.gens.iter().enumerate() {
                if g.species != species {
                    continue;
                }
                let mut nt = t.clone();
                let rho = nt.gens[k].index.expect("derivative without index");
                nt.gens.remove(k);
                nt.metrics.push((nu, rho));
                out.push(nt);
            }
        }
        FieldPolynomial::from_terms(out)
    }

    /// The bilinear kernel pairing derivative-field gradients of the two
    /// arguments, with the internal direction contracted away.
    pub fn zeta(&self, o: &FieldPolynomial) -> FieldPolynomial {
        let top = self.max_label().max(o.max_label()) + 1;
        let d = Idx(top);
        let a1 = self.deriv_wrt(Species::DPhiStar, d);
        let a2 = o.deriv_wrt(Species::DPhi, d);
        let b1 = self.deriv_wrt(Species::DPhi, d);
        let b2 = o.deriv_wrt(Species::DPhiStar, d);
        a1.mul(&a2).add(&b1.mul(&b2))
    }

    /// Eigenvalue of the charge derivation.
    pub fn charge_number(&self) -> Result<i64, FieldError> {
        let mut val: Option<i64> = None;
        for t in &self.terms {
            let q: i64 = t.gens.iter().map(|g| g.species.charge()).sum();
            match val {
                None => val = Some(q),
                Some(v) if v != q => return Err(FieldError::NotEigenvector),
                _ => {}
            }
        }
        Ok(val.unwrap_or(0))
    }

    pub fn is_theta_eigenvector(&self) -> bool {
        self.charge_number().is_ok()
    }

    /// Total mass dimension, uniform across terms.
    pub fn mass_dimension(&self) -> Result<i64, FieldError> {
        let mut val: Option<i64> = None;
        for t in &self.terms {
            let d: i64 = t.gens.iter().map(|g| g.species.mass_dimension()).sum();
            match val {
                None => val = Some(d),
                Some(v) if v != d => return Err(FieldError::NotHomogeneous),
                _ => {}
            }
        }
        val.ok_or(FieldError::NotHomogeneous)
    }

    /// Charge conjugation with phase `eta` (a unit scalar): swaps the two
    /// scalar species and flips the sign of the photon. Linear, not
    /// antilinear.
    pub fn charge_conjugate_with(&self, eta: &Scalar) -> FieldPolynomial {
        let eta_bar = eta.conj();
        FieldPolynomial::from_terms(
            self.terms
                .iter()
                .map(|t| {
                    let mut nt = t.clone();
                    for g in &mut nt.gens {
                        match g.species {
                            Species::Phi => {
                                g.species = Species::PhiStar;
                                nt.coeff = nt.coeff.mul(eta);
                            }
                            Species::DPhi => {
                                g.species = Species::DPhiStar;
                                nt.coeff = nt.coeff.mul(eta);
                            }
                            Species::PhiStar => {
                                g.species = Species::Phi;
                                nt.coeff = nt.coeff.mul(&eta_bar);
                            }
                            Species::DPhiStar => {
                                g.species = Species::DPhi;
                                nt.coeff = nt.coeff.mul(&eta_bar);
                            }
                            Species::A => {
                                nt.coeff = nt.coeff.mul_int(-1);
                            }
                        }
                    }
                    nt
                })
                .collect(),
        )
    }

    pub fn charge_conjugate(&self) -> FieldPolynomial {
        self.charge_conjugate_with(&Scalar::one())
    }

    /// Star operation: conjugate coefficients and exchange the scalar with
    /// its conjugate; the photon and the test functions are real.
    pub fn star(&self) -> FieldPolynomial {
        FieldPolynomial::from_terms(
            self.terms
                .iter()
                .map(|t| {
                    let mut nt = t.clone();
                    nt.coeff = nt.coeff.conj();
                    for g in &mut nt.gens {
                        g.species = match g.species {
                            Species::Phi => Species::PhiStar,
                            Species::PhiStar => Species::Phi,
                            Species::DPhi => Species::DPhiStar,
                            Species::DPhiStar => Species::DPhi,
                            Species::A => Species::A,
                        };
                    }
                    nt
                })
                .collect(),
        )
    }

    /// True when no term holds more than one derivative generator, i.e.
    /// all three second derivatives with respect to derivative generators
    /// vanish.
    pub fn single_derivative_only(&self) -> bool {
        self.terms.iter().all(|t| {
            t.gens
                .iter()
                .filter(|g| matches!(g.species, Species::DPhi | Species::DPhiStar))
                .count()
                <= 1
        })
    }

    /// Decomposition of the charge variation into its local and gradient
    /// parts `(theta B, theta_mu B)`.
    pub fn delta_q_action(&self, mu: Idx) -> (FieldPolynomial, FieldPolynomial) {
        (self.theta(), self.theta_mu(mu))
    }

    /// The same polynomial with all test-function factors removed.
    pub fn without_tests(&self) -> FieldPolynomial {
        FieldPolynomial::from_terms(
            self.terms
                .iter()
                .map(|t| {
                    let mut t = t.clone();
                    t.tests.clear();
                    t
                })
                .collect(),
        )
    }
}

/// Moves every non-free label of a term above `top`, keeping free labels.
fn relabel_bound(t: &FTerm, top: u32) -> FTerm {
    let free = t.free_labels();
    let mut map: HashMap<Idx, Idx> = HashMap::new();
    let mut next = top;
    let mut relabel = |i: Idx, map: &mut HashMap<Idx, Idx>| -> Idx {
        if free.contains(&i) {
            return i;
        }
        *map.entry(i).or_insert_with(|| {
            let v = Idx(next);
            next += 1;
            v
        })
    };
    let mut nt = t.clone();
    for tf in &mut nt.tests {
        if let Some(d) = tf.deriv {
            tf.deriv = Some(relabel(d, &mut map));
        }
    }
    for m in &mut nt.metrics {
        m.0 = relabel(m.0, &mut map);
        m.1 = relabel(m.1, &mut map);
    }
    for g in &mut nt.gens {
        if let Some(i) = g.index {
            g.index = Some(relabel(i, &mut map));
        }
    }
    nt
}

/// One causal-expansion entry: `poly = sub`, `comp` the removed bare
/// generators, `factor` the number of position subsets in the class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubEntry {
    pub sub: FieldPolynomial,
    pub comp: FieldPolynomial,
    pub factor: i64,
}

/// Base for the labels linking a submonomial to its complement.
const LINK_BASE: u32 = 3_000_000;

impl FieldPolynomial {
    /// All submonomial/complement pairs with multiplicities, normalized so
    /// that the doubled polynomial is recovered: replacing every generator
    /// occurrence `v` by `v_x + v_y` and expanding equals
    /// `sum factor * sub(x) * comp(y)`. The coefficient and the test
    /// factors stay with `sub`.
    pub fn submonomials(&self) -> Vec<SubEntry> {
        let mut classes: BTreeMap<(Scalar, Vec<i64>), (FTerm, FTerm, i64)> = BTreeMap::new();
        for t in &self.terms {
            let n = t.gens.len();
            assert!(n < 63, "monomial order too large");
            for mask in 0..(1u64 << n) {
                let kept: Vec<usize> = (0..n).filter(|k| mask & (1 << k) != 0).collect();
                let removed: Vec<usize> = (0..n).filter(|k| mask & (1 << k) == 0).collect();
                let (sub_t, comp_t, image) = split_term(t, &kept, &removed);
                let key = (t.coeff.clone(), image);
                let entry = classes.entry(key).or_insert((sub_t, comp_t, 0));
                entry.2 += 1;
            }
        }
        let mut raw: Vec<SubEntry> = classes
            .into_values()
            .map(|(sub_t, comp_t, factor)| SubEntry {
                sub: FieldPolynomial::from_terms(vec![sub_t]),
                comp: FieldPolynomial::from_terms(vec![comp_t]),
                factor,
            })
            .collect();
        // Distinct joint classes normally stay distinct as pairs; fold any
        // that coincide after separate normalization.
        let mut merged: BTreeMap<(FieldPolynomial, FieldPolynomial), i64> = BTreeMap::new();
        for e in raw.drain(..) {
            *merged.entry((e.sub, e.comp)).or_insert(0) += e.factor;
        }
        merged
            .into_iter()
            .map(|((sub, comp), factor)| SubEntry { sub, comp, factor })
            .collect()
    }
}

/// Splits one term into sub and complement parts with a joint canonical
/// image. Labels contracted across the split are renamed into the link
/// range so each side exposes them as free indices.
fn split_term(t: &FTerm, kept: &[usize], removed: &[usize]) -> (FTerm, FTerm, Vec<i64>) {
    // Joint flat structure: sub part first (part tag 0), complement second.
    let mut flat = Vec::new();
    for &k in kept {
        let g = t.gens[k];
        flat.push(FlatFactor {
            key: vec![0, 0, g.species.code()],
            slots: g.index.iter().copied().collect(),
            symmetric: false,
        });
    }
    for tf in &t.tests {
        flat.push(FlatFactor {
            key: vec![0, 1, tf.base.code(), tf.deriv.is_some() as i64],
            slots: tf.deriv.iter().copied().collect(),
            symmetric: false,
        });
    }
    for (a, b) in &t.metrics {
        flat.push(FlatFactor { key: vec![0, 2], slots: vec![*a, *b], symmetric: true });
    }
    for &k in removed {
        let g = t.gens[k];
        flat.push(FlatFactor {
            key: vec![1, 0, g.species.code()],
            slots: g.index.iter().copied().collect(),
            symmetric: false,
        });
    }
    let res = canon::canonicalize(&flat);

    // Occurrence counts per side decide which canonical dummies cross the
    // split; those get stable link labels in canonical scan order.
    let rename = |i: Idx| -> Idx { res.rename.get(&i).map(|&v| Idx(v)).unwrap_or(i) };
    let mut image: Vec<i64> = Vec::new();
    let mut side_count: HashMap<Idx, (u32, u32)> = HashMap::new();
    let mut ordered: Vec<(bool, FlatFactor)> = Vec::new();
    for (pos, &fi) in res.order.iter().enumerate() {
        let f = &flat[fi];
        let is_comp = f.key[0] == 1;
        let p = &res.perms[pos];
        let slots: Vec<Idx> = p.iter().map(|&k| rename(f.slots[k])).collect();
        image.push(i64::MIN + 1);
        image.extend_from_slice(&f.key);
        for s in &slots {
            image.push(s.0 as i64);
            let e = side_count.entry(*s).or_insert((0, 0));
            if is_comp {
                e.1 += 1;
            } else {
                e.0 += 1;
            }
        }
        ordered.push((is_comp, FlatFactor { key: f.key.clone(), slots, symmetric: f.symmetric }));
    }
    let mut link: HashMap<Idx, Idx> = HashMap::new();
    let mut next_link = LINK_BASE;
    for (_, f) in &ordered {
        for s in &f.slots {
            let (a, b) = side_count[s];
            if a == 1 && b == 1 && !link.contains_key(s) {
                link.insert(*s, Idx(next_link));
                next_link += 1;
            }
        }
    }
    let relink = |i: Idx| -> Idx { link.get(&i).copied().unwrap_or(i) };

    let mut sub_t = FTerm::constant(t.coeff.clone());
    let mut comp_t = FTerm::constant(Scalar::one());
    for (is_comp, f) in ordered {
        let target = if is_comp { &mut comp_t } else { &mut sub_t };
        match f.key[1] {
            0 => {
                let species = [
                    Species::A,
                    Species::Phi,
                    Species::PhiStar,
                    Species::DPhi,
                    Species::DPhiStar,
                ][f.key[2] as usize];
                target.gens.push(Generator {
                    species,
                    index: f.slots.first().map(|&s| relink(s)),
                });
            }
            1 => {
                let base = [TestBase::G, TestBase::Alpha, TestBase::Beta, TestBase::H]
                    [f.key[2] as usize];
                target.tests.push(TestFactor {
                    base,
                    deriv: f.slots.first().map(|&s| relink(s)),
                });
            }
            _ => {
                target.metrics.push((relink(f.slots[0]), relink(f.slots[1])));
            }
        }
    }
    (sub_t, comp_t, image)
}

// Named polynomials of the model.

/// Internal scratch labels for contractions inside named constructors.
const SCRATCH: u32 = 900_000;

pub fn phi() -> FieldPolynomial {
    FieldPolynomial::from_terms(vec![FTerm {
        coeff: Scalar::one(),
        tests: vec![],
        metrics: vec![],
        gens: vec![Generator::new(Species::Phi, None)],
    }])
}

pub fn phistar() -> FieldPolynomial {
    FieldPolynomial::from_terms(vec![FTerm {
        coeff: Scalar::one(),
        tests: vec![],
        metrics: vec![],
        gens: vec![Generator::new(Species::PhiStar, None)],
    }])
}

pub fn a_field(mu: Idx) -> FieldPolynomial {
    FieldPolynomial::from_terms(vec![FTerm {
        coeff: Scalar::one(),
        tests: vec![],
        metrics: vec![],
        gens: vec![Generator::new(Species::A, Some(mu))],
    }])
}

pub fn dphi(mu: Idx) -> FieldPolynomial {
    FieldPolynomial::from_terms(vec![FTerm {
        coeff: Scalar::one(),
        tests: vec![],
        metrics: vec![],
        gens: vec![Generator::new(Species::DPhi, Some(mu))],
    }])
}

pub fn dphistar(mu: Idx) -> FieldPolynomial {
    FieldPolynomial::from_terms(vec![FTerm {
        coeff: Scalar::one(),
        tests: vec![],
        metrics: vec![],
        gens: vec![Generator::new(Species::DPhiStar, Some(mu))],
    }])
}

/// The conserved current `i(phi dphistar - phistar dphi)` with free index.
pub fn current(mu: Idx) -> FieldPolynomial {
    phi()
        .mul(&dphistar(mu))
        .sub(&phistar().mul(&dphi(mu)))
        .scale(&Scalar::i())
}

/// `phi phistar`.
pub fn phiphistar() -> FieldPolynomial {
    phi().mul(&phistar())
}

/// `A_mu A^mu`.
pub fn a_squared() -> FieldPolynomial {
    let d = Idx(SCRATCH);
    a_field(d).mul(&a_field(d))
}

/// `A^mu phistar phi` with free index.
pub fn a_phistar_phi(mu: Idx) -> FieldPolynomial {
    a_field(mu).mul(&phiphistar())
}

/// Contracted `A_mu j^mu`.
pub fn j_dot_a() -> FieldPolynomial {
    let d = Idx(SCRATCH);
    current(d).mul(&a_field(d))
}

/// The interaction density: `e jA` plus the quartic part with one explicit
/// coupling-switch factor so that smearing with g matches the full
/// interaction.
pub fn lagrangian() -> FieldPolynomial {
    let quartic = a_squared().mul(&phiphistar()).scale(&Scalar::sym_pow(crate::scalar::Sym::E, 2));
    let quartic = FieldPolynomial::from_terms(
        quartic
            .terms()
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.tests.push(TestFactor::plain(TestBase::G));
                t
            })
            .collect(),
    );
    j_dot_a().scale(&Scalar::sym(crate::scalar::Sym::E)).add(&quartic)
}

/// The interaction functional: every term of the density smeared with one
/// more coupling-switch factor, so the quartic part carries two.
pub fn interaction_s() -> FieldPolynomial {
    FieldPolynomial::from_terms(
        lagrangian()
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

/// Membership policy for which polynomials a verification accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MembershipPolicy {
    /// Only the named interaction submonomial set.
    Strict,
    /// Any charge eigenvector with at most one derivative generator per
    /// term.
    Permissive,
}

/// Renames the free labels of `p` to 1, 2, ... in sorted order, so that
/// polynomials differing only in free-label names compare equal.
pub fn normalize_free_labels(p: &FieldPolynomial) -> FieldPolynomial {
    let free: Vec<Idx> = p.free_indices().into_iter().collect();
    let mut q = p.clone();
    // Two passes through a high scratch range avoid label collisions.
    for (k, f) in free.iter().enumerate() {
        q = q.rename_free(*f, Idx(4_000_000 + k as u32));
    }
    for k in 0..free.len() {
        q = q.rename_free(Idx(4_000_000 + k as u32), Idx(1 + k as u32));
    }
    q
}

/// Checks whether `B` is a nonzero scalar multiple of a member of the
/// strict generating set: the interaction density, the current, and the
/// submonomial structures of both, excluding the cubic and quartic
/// interaction monomials on their own and the two halves of the current.
/// Comparison is insensitive to free-label names.
pub fn in_strict_set(b: &FieldPolynomial) -> bool {
    if b.is_zero() {
        return false;
    }
    let bn = normalize_free_labels(b);
    let mu = Idx(1);
    let mut members: Vec<FieldPolynomial> = vec![lagrangian(), current(mu)];
    // Submonomial structures of the generating monomials; labels linking a
    // sub to its complement become ordinary free labels here.
    for base in [j_dot_a(), a_squared().mul(&phiphistar()), current(mu)] {
        for e in base.submonomials() {
            if !e.sub.is_zero() {
                members.push(e.sub.clone());
            }
        }
    }
    let excluded = [
        j_dot_a(),
        lagrangian().sub(&j_dot_a().scale(&Scalar::sym(crate::scalar::Sym::E))),
        phi().mul(&dphistar(mu)),
        phistar().mul(&dphi(mu)),
        phi().mul(&dphistar(mu)).mul(&a_field(mu)),
        phistar().mul(&dphi(mu)).mul(&a_field(mu)),
    ];
    if excluded.iter().any(|q| proportional(&bn, &normalize_free_labels(q))) {
        return false;
    }
    members
        .iter()
        .any(|q| proportional(&bn, &normalize_free_labels(q)))
}

/// True when `p = s q` for some nonzero scalar `s` (structures equal,
/// coefficient cross-ratios equal).
pub fn proportional(p: &FieldPolynomial, q: &FieldPolynomial) -> bool {
    if p.terms.len() != q.terms.len() {
        return false;
    }
    if p.terms.is_empty() {
        return true;
    }
    for (a, b) in p.terms.iter().zip(q.terms.iter()) {
        if a.body() != b.body() {
            return false;
        }
    }
    let c0 = &p.terms[0].coeff;
    let d0 = &q.terms[0].coeff;
    p.terms
        .iter()
        .zip(q.terms.iter())
        .all(|(a, b)| a.coeff.mul(d0) == b.coeff.mul(c0))
}

/// Validates tuple entries for a verification run under the given policy.
pub fn admissible(b: &FieldPolynomial, policy: MembershipPolicy) -> bool {
    let basic = b.is_theta_eigenvector() && b.single_derivative_only();
    match policy {
        MembershipPolicy::Permissive => basic,
        MembershipPolicy::Strict => basic && in_strict_set(b),
    }
}

/// Renders an index label in input syntax: free labels as `m<k>`, bound
/// labels from the canonical dummy range as `s<j>`.
pub fn index_name(i: Idx) -> String {
    if i.0 >= canon::DUMMY_BASE {
        format!("s{}", i.0 - canon::DUMMY_BASE)
    } else {
        format!("m{}", i.0)
    }
}

impl std::fmt::Display for FieldPolynomial {
    /// Prints in the input syntax. Complex coefficients split into a real
    /// and an imaginary printed term because the grammar has no grouping.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        use num::{One, Signed, Zero};
        let mut pieces: Vec<(bool, String)> = Vec::new();
        for t in &self.terms {
            let mut body: Vec<String> = Vec::new();
            for tf in &t.tests {
                body.push(match tf.deriv {
                    None => tf.base.name().to_string(),
                    Some(ix) => format!("d{}[{}]", tf.base.name(), index_name(ix)),
                });
            }
            for (a, b) in &t.metrics {
                body.push(format!("metric[{},{}]", index_name(*a), index_name(*b)));
            }
            for g in &t.gens {
                let name = match g.species {
                    Species::A => "A",
                    Species::Phi => "phi",
                    Species::PhiStar => "phistar",
                    Species::DPhi => "dphi",
                    Species::DPhiStar => "dphistar",
                };
                body.push(match g.index {
                    None => name.to_string(),
                    Some(ix) => format!("{}[{}]", name, index_name(ix)),
                });
            }
            for (pow, gr) in t.coeff.iter() {
                let mut syms: Vec<String> = Vec::new();
                for s in crate::scalar::SYMS {
                    let k = pow[s.slot()];
                    if k == 1 {
                        syms.push(s.name().to_string());
                    } else if k > 1 {
                        syms.push(format!("{}^{}", s.name(), k));
                    }
                }
                for (part, with_i) in [(&gr.re, false), (&gr.im, true)] {
                    if part.is_zero() {
                        continue;
                    }
                    let mut atoms: Vec<String> = Vec::new();
                    let mag = part.abs();
                    let has_other = with_i || !syms.is_empty() || !body.is_empty();
                    if !mag.is_one() || !has_other {
                        atoms.push(mag.to_string());
                    }
                    if with_i {
                        atoms.push("i".to_string());
                    }
                    atoms.extend(syms.iter().cloned());
                    atoms.extend(body.iter().cloned());
                    pieces.push((part.is_negative(), atoms.join(" ")));
                }
            }
        }
        if pieces.is_empty() {
            return write!(f, "0");
        }
        for (k, (neg, text)) in pieces.iter().enumerate() {
            if k == 0 {
                if *neg {
                    write!(f, "-")?;
                }
            } else if *neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            write!(f, "{}", text)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Sym;

    const MU: Idx = Idx(1);
    const NU: Idx = Idx(2);

    #[test]
    fn theta_values() {
        assert!(current(NU).theta().is_zero());
        assert_eq!(phi().theta(), phi());
        assert!(a_phistar_phi(NU).theta().is_zero());
        let phiphi = phi().mul(&phi());
        assert_eq!(phiphi.theta(), phiphi.scale(&Scalar::from_int(2)));
        assert!(lagrangian().theta().is_zero());
    }

    #[test]
    fn theta_mu_values() {
        // On the current: -2i g^{mu nu} phi phistar.
        let got = current(NU).theta_mu(MU);
        let want = FieldPolynomial::from_terms(vec![FTerm {
            coeff: Scalar::from_int(-2).mul(&Scalar::i()),
            tests: vec![],
            metrics: vec![(MU, NU)],
            gens: vec![
                Generator::new(Species::Phi, None),
                Generator::new(Species::PhiStar, None),
            ],
        }]);
        assert_eq!(got, want);
        // On the interaction density: -2ie A^mu phistar phi.
        let got = lagrangian().theta_mu(MU);
        let want = a_phistar_phi(MU)
            .scale(&Scalar::from_int(-2).mul(&Scalar::i()).mul(&Scalar::sym(Sym::E)));
        assert_eq!(got, want);
        assert!(phi().theta_mu(MU).is_zero());
    }

    #[test]
    fn zeta_values() {
        // zeta(dphi, dphistar) = g^{mu nu}.
        let got = dphi(MU).zeta(&dphistar(NU));
        let want = FieldPolynomial::from_terms(vec![FTerm {
            coeff: Scalar::one(),
            tests: vec![],
            metrics: vec![(MU, NU)],
            gens: vec![],
        }]);
        assert_eq!(got, want);
        // zeta(jA, jA) = 2 phi phistar A^2.
        let got = j_dot_a().zeta(&j_dot_a());
        let want = a_squared().mul(&phiphistar()).scale(&Scalar::from_int(2));
        assert_eq!(got, want);
        assert!(phi().zeta(&phistar()).is_zero());
        // zeta(B, j^mu) = i theta^mu B on a generating family.
        for b in [j_dot_a(), current(NU), dphi(NU), lagrangian()] {
            let lhs = b.zeta(&current(MU));
            let rhs = b.theta_mu(MU).scale(&Scalar::i());
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn charge_numbers() {
        assert_eq!(current(MU).charge_number(), Ok(0));
        assert_eq!(dphi(MU).charge_number(), Ok(1));
        assert_eq!(dphistar(MU).charge_number(), Ok(-1));
        assert_eq!(
            phi().add(&phistar()).charge_number(),
            Err(FieldError::NotEigenvector)
        );
    }

    #[test]
    fn mass_dimensions() {
        assert_eq!(current(MU).mass_dimension(), Ok(3));
        assert_eq!(phi().mass_dimension(), Ok(1));
        assert_eq!(j_dot_a().mass_dimension(), Ok(4));
        assert_eq!(lagrangian().mass_dimension(), Ok(4));
    }

    #[test]
    fn conjugation_table() {
        assert_eq!(current(MU).charge_conjugate(), current(MU).neg());
        assert_eq!(lagrangian().charge_conjugate(), lagrangian());
        assert_eq!(a_field(MU).charge_conjugate(), a_field(MU).neg());
        assert_eq!(a_phistar_phi(MU).charge_conjugate(), a_phistar_phi(MU).neg());
        let th = current(NU).theta_mu(MU);
        assert_eq!(th.charge_conjugate(), th);
    }

    #[test]
    fn submonomial_shapes() {
        let subs = phi().submonomials();
        assert_eq!(subs.len(), 2);
        let subs = phi().mul(&dphistar(MU)).submonomials();
        assert_eq!(subs.len(), 4);
        let subs = phi().mul(&phi()).submonomials();
        let mid = subs
            .iter()
            .find(|e| e.sub == phi() && e.comp == phi())
            .expect("single-generator class");
        assert_eq!(mid.factor, 2);
    }

    #[test]
    fn strict_set_examples() {
        assert!(in_strict_set(&lagrangian()));
        assert!(in_strict_set(&current(MU)));
        assert!(in_strict_set(&phiphistar()));
        assert!(in_strict_set(&a_squared()));
        assert!(in_strict_set(&a_phistar_phi(MU)));
        assert!(in_strict_set(&dphi(MU)));
        assert!(in_strict_set(&dphi(MU).scale(&Scalar::from_int(5))));
        assert!(!in_strict_set(&j_dot_a()));
        assert!(!in_strict_set(&phi().mul(&dphistar(MU))));
        assert!(!in_strict_set(&phi().mul(&phi())));
    }

    #[test]
    fn eq56_on_members() {
        for b in [lagrangian(), current(MU), a_phistar_phi(MU), phiphistar()] {
            assert!(b.single_derivative_only());
            let top = b.max_label() + 1;
            for s1 in [Species::DPhi, Species::DPhiStar] {
                for s2 in [Species::DPhi, Species::DPhiStar] {
                    assert!(b
                        .deriv_wrt(s1, Idx(top))
                        .deriv_wrt(s2, Idx(top + 1))
                        .is_zero());
                }
            }
        }
        let bad = dphi(MU).mul(&dphistar(MU));
        assert!(!bad.single_derivative_only());
    }
}
