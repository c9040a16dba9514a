//! Two-point contraction engine for tree-level time-ordered products.
//!
//! Expressions live on two points x and y. Terms hold translation-invariant
//! kernels in the difference x - y (the massive and massless Feynman
//! propagators and the delta distribution, with symmetrized derivative
//! indices) together with field factors sitting at either point. The
//! normal form optionally applies the free field equations and relocates
//! factors multiplying a delta onto x.

use crate::canon::{self, FlatFactor, Idx};
use crate::fields::{FieldPolynomial, Generator, Species, TestBase, TestFactor};
use crate::scalar::Scalar;
use std::collections::BTreeMap;
use thiserror::Error;

/// Translation-invariant two-point kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum KernelKind {
    /// Massive Feynman propagator of the charged scalar.
    DeltaF,
    /// Massless Feynman propagator of the photon.
    DFree,
    /// Delta distribution.
    Dirac,
}

impl KernelKind {
    fn code(self) -> i64 {
        match self {
            KernelKind::DeltaF => 0,
            KernelKind::DFree => 1,
            KernelKind::Dirac => 2,
        }
    }
}

/// A derivative monomial applied to one kernel, as a function of x - y.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Kernel {
    pub kind: KernelKind,
    pub derivs: Vec<Idx>,
}

/// A field-side factor located at one of the two points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PointFactor {
    Gen(Generator),
    /// Wave operator applied to an index-free generator.
    BoxG(Species),
    Test(TestFactor),
}

impl PointFactor {
    fn key(&self, point: u8) -> Vec<i64> {
        match self {
            PointFactor::Gen(g) => vec![0, point as i64, 0, g.species as i64],
            PointFactor::BoxG(s) => vec![0, point as i64, 1, *s as i64],
            PointFactor::Test(t) => {
                vec![0, point as i64, 2, t.base as i64, t.deriv.is_some() as i64]
            }
        }
    }

    fn slots(&self) -> Vec<Idx> {
        match self {
            PointFactor::Gen(g) => g.index.iter().copied().collect(),
            PointFactor::BoxG(_) => vec![],
            PointFactor::Test(t) => t.deriv.iter().copied().collect(),
        }
    }

    fn with_slots(&self, slots: &[Idx]) -> PointFactor {
        match self {
            PointFactor::Gen(g) => PointFactor::Gen(Generator {
                species: g.species,
                index: slots.first().copied(),
            }),
            PointFactor::BoxG(s) => PointFactor::BoxG(*s),
            PointFactor::Test(t) => PointFactor::Test(TestFactor {
                base: t.base,
                deriv: slots.first().copied(),
            }),
        }
    }
}

/// One term: exact coefficient, metric factors, kernels, located factors.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct WTerm {
    pub coeff: Scalar,
    pub metrics: Vec<(Idx, Idx)>,
    pub kernels: Vec<Kernel>,
    pub factors: Vec<(u8, PointFactor)>,
}

impl WTerm {
    fn constant(coeff: Scalar) -> Self {
        WTerm { coeff, metrics: vec![], kernels: vec![], factors: vec![] }
    }

    fn labels(&self) -> Vec<Idx> {
        let mut out = Vec::new();
        for (a, b) in &self.metrics {
            out.push(*a);
            out.push(*b);
        }
        for k in &self.kernels {
            out.extend(k.derivs.iter().copied());
        }
        for (_, f) in &self.factors {
            out.extend(f.slots());
        }
        out
    }

    fn body(&self) -> (Vec<(Idx, Idx)>, Vec<Kernel>, Vec<(u8, PointFactor)>) {
        (self.metrics.clone(), self.kernels.clone(), self.factors.clone())
    }
}

/// Normalization options.
#[derive(Debug, Clone, Copy)]
pub struct NormOpts {
    /// Sign of the delta produced by the wave operator on a propagator.
    /// The physical value is +1; flipping it breaks the field equation.
    pub kg_delta_sign: i64,
    /// Apply the free field equations to boxed generators.
    pub on_shell: bool,
    /// Move factors multiplying a delta kernel over to x.
    pub relocate: bool,
}

impl Default for NormOpts {
    fn default() -> Self {
        NormOpts { kg_delta_sign: 1, on_shell: true, relocate: true }
    }
}

/// Errors from the contraction engine.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum WickError {
    #[error("second derivative of a generator is not representable here")]
    SecondDerivative,
}

/// A sum of two-point terms in normal form.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LocalExpr {
    terms: Vec<WTerm>,
}

pub const X: u8 = 0;
pub const Y: u8 = 1;

/// Applies one derivative with index `mu` to a located factor.
/// A derivative hitting a derivative generator is only representable when
/// the two indices are already contracted, which makes it a wave operator.
fn apply_deriv(f: &PointFactor, mu: Idx) -> Result<PointFactor, WickError> {
    match f {
        PointFactor::Gen(g) => match g.species {
            Species::Phi => Ok(PointFactor::Gen(Generator::new(Species::DPhi, Some(mu)))),
            Species::PhiStar => {
                Ok(PointFactor::Gen(Generator::new(Species::DPhiStar, Some(mu))))
            }
            Species::DPhi => {
                if g.index == Some(mu) {
                    Ok(PointFactor::BoxG(Species::Phi))
                } else {
                    Err(WickError::SecondDerivative)
                }
            }
            Species::DPhiStar => {
                if g.index == Some(mu) {
                    Ok(PointFactor::BoxG(Species::PhiStar))
                } else {
                    Err(WickError::SecondDerivative)
                }
            }
            Species::A => Err(WickError::SecondDerivative),
        },
        PointFactor::BoxG(_) => Err(WickError::SecondDerivative),
        PointFactor::Test(t) => {
            if t.deriv.is_none() {
                Ok(PointFactor::Test(TestFactor { base: t.base, deriv: Some(mu) }))
            } else {
                Err(WickError::SecondDerivative)
            }
        }
    }
}

/// Resolves metric contractions inside a term; false when done.
fn metric_step(t: &mut WTerm) -> bool {
    let mut count: BTreeMap<Idx, u32> = BTreeMap::new();
    for l in t.labels() {
        *count.entry(l).or_insert(0) += 1;
    }
    for k in 0..t.metrics.len() {
        let (a, b) = t.metrics[k];
        if a == b {
            t.metrics.remove(k);
            t.coeff = t.coeff.mul_int(4);
            return true;
        }
        for (hit, other) in [(a, b), (b, a)] {
            if count.get(&hit) == Some(&2) {
                t.metrics.remove(k);
                // Exactly one further occurrence exists.
                for m in &mut t.metrics {
                    if m.0 == hit {
                        m.0 = other;
                        return true;
                    }
                    if m.1 == hit {
                        m.1 = other;
                        return true;
                    }
                }
                for kr in &mut t.kernels {
                    for d in &mut kr.derivs {
                        if *d == hit {
                            *d = other;
                            return true;
                        }
                    }
                }
                for (_, f) in &mut t.factors {
                    let slots = f.slots();
                    if slots.contains(&hit) {
                        let new: Vec<Idx> = slots
                            .iter()
                            .map(|&s| if s == hit { other } else { s })
                            .collect();
                        *f = f.with_slots(&new);
                        return true;
                    }
                }
                panic!("dangling contraction label {:?}", hit);
            }
        }
    }
    false
}

/// Rewrites one self-contracted propagator derivative pair via the field
/// equation. Returns the replacement terms, or None when nothing applies.
fn kg_step(t: &WTerm, opts: &NormOpts) -> Option<Vec<WTerm>> {
    for (ki, k) in t.kernels.iter().enumerate() {
        if k.kind == KernelKind::Dirac {
            // Boxes on the delta stay as they are.
            continue;
        }
        for i in 0..k.derivs.len() {
            for j in (i + 1)..k.derivs.len() {
                if k.derivs[i] != k.derivs[j] {
                    continue;
                }
                let mut rest = k.derivs.clone();
                rest.remove(j);
                rest.remove(i);
                // Box K = s(-i) delta - m^2 K for the massive kernel and
                // just the delta part for the massless one.
                let mut delta_term = t.clone();
                delta_term.kernels[ki] = Kernel { kind: KernelKind::Dirac, derivs: rest.clone() };
                delta_term.coeff = delta_term
                    .coeff
                    .mul(&Scalar::minus_i())
                    .mul_int(opts.kg_delta_sign);
                let mut out = vec![delta_term];
                if k.kind == KernelKind::DeltaF {
                    let mut mass_term = t.clone();
                    mass_term.kernels[ki] = Kernel { kind: KernelKind::DeltaF, derivs: rest };
                    mass_term.coeff = mass_term
                        .coeff
                        .mul(&Scalar::sym_pow(crate::scalar::Sym::M, 2))
                        .mul_int(-1);
                    out.push(mass_term);
                }
                return Some(out);
            }
        }
    }
    None
}

/// Moves the y factors of a single-delta term onto x, distributing the
/// delta derivatives over the moved factors.
fn relocate_term(t: &WTerm) -> Result<Vec<WTerm>, WickError> {
    let delta_pos = t
        .kernels
        .iter()
        .position(|k| k.kind == KernelKind::Dirac);
    let Some(dp) = delta_pos else {
        return Ok(vec![t.clone()]);
    };
    if t.factors.iter().all(|(p, _)| *p == X) {
        return Ok(vec![t.clone()]);
    }
    assert!(
        t.kernels.len() == 1,
        "delta multiplying another kernel at the same points"
    );
    let derivs = t.kernels[dp].derivs.clone();
    // Each delta derivative either stays on the delta or lands on one of
    // the y factors; y factors then move to x.
    let y_slots: Vec<usize> = t
        .factors
        .iter()
        .enumerate()
        .filter(|(_, (p, _))| *p == Y)
        .map(|(i, _)| i)
        .collect();
    let mut branches: Vec<(Vec<Idx>, WTerm)> = vec![(vec![], t.clone())];
    for &mu in &derivs {
        let mut next = Vec::new();
        for (stay, cur) in &branches {
            // Stays on the delta.
            let mut s = stay.clone();
            s.push(mu);
            next.push((s, cur.clone()));
            for &fi in &y_slots {
                let mut nt = cur.clone();
                let (_, f) = &nt.factors[fi];
                match apply_deriv(f, mu) {
                    Ok(nf) => {
                        nt.factors[fi].1 = nf;
                        next.push((stay.clone(), nt));
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        branches = next;
    }
    let mut out = Vec::new();
    for (stay, mut bt) in branches {
        bt.kernels[dp].derivs = stay;
        for (p, _) in &mut bt.factors {
            *p = X;
        }
        out.push(bt);
    }
    Ok(out)
}

fn canonicalize_wterm(t: &WTerm) -> WTerm {
    let mut flat: Vec<FlatFactor> = Vec::new();
    for (p, f) in &t.factors {
        flat.push(FlatFactor { key: f.key(*p), slots: f.slots(), symmetric: false });
    }
    for k in &t.kernels {
        flat.push(FlatFactor {
            key: vec![1, k.kind.code(), k.derivs.len() as i64],
            slots: k.derivs.clone(),
            symmetric: true,
        });
    }
    for (a, b) in &t.metrics {
        flat.push(FlatFactor { key: vec![2], slots: vec![*a, *b], symmetric: true });
    }
    let res = canon::canonicalize(&flat);
    let rename = |i: Idx| -> Idx { res.rename.get(&i).map(|&v| Idx(v)).unwrap_or(i) };
    let nf = t.factors.len();
    let nk = t.kernels.len();
    let mut factors = Vec::new();
    let mut kernels = Vec::new();
    let mut metrics = Vec::new();
    for (pos, &fi) in res.order.iter().enumerate() {
        let p = &res.perms[pos];
        if fi < nf {
            let (pt, f) = &t.factors[fi];
            let slots: Vec<Idx> = p.iter().map(|&k| rename(f.slots()[k])).collect();
            factors.push((*pt, f.with_slots(&slots)));
        } else if fi < nf + nk {
            let k = &t.kernels[fi - nf];
            let derivs: Vec<Idx> = p.iter().map(|&s| rename(k.derivs[s])).collect();
            kernels.push(Kernel { kind: k.kind, derivs });
        } else {
            let m = t.metrics[fi - nf - nk];
            let slots = [m.0, m.1];
            metrics.push((rename(slots[p[0]]), rename(slots[p[1]])));
        }
    }
    WTerm { coeff: t.coeff.clone(), metrics, kernels, factors }
}

impl LocalExpr {
    pub fn zero() -> Self {
        LocalExpr { terms: vec![] }
    }

    pub fn terms(&self) -> &[WTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Builds the normal form. Metric collapse and the field-equation
    /// rewrites run to a fixed point before canonical relabeling.
    pub fn normalize(raw: Vec<WTerm>, opts: &NormOpts) -> Result<LocalExpr, WickError> {
        let mut queue = raw;
        let mut finished: Vec<WTerm> = Vec::new();
        while let Some(mut t) = queue.pop() {
            if t.coeff.is_zero() {
                continue;
            }
            while metric_step(&mut t) {}
            if let Some(repl) = kg_step(&t, opts) {
                queue.extend(repl);
                continue;
            }
            if opts.on_shell {
                if let Some(pos) = t
                    .factors
                    .iter()
                    .position(|(_, f)| matches!(f, PointFactor::BoxG(_)))
                {
                    let (_, PointFactor::BoxG(s)) = &t.factors[pos] else { unreachable!() };
                    match s {
                        Species::Phi => {
                            let mut nt = t.clone();
                            nt.factors[pos].1 = PointFactor::Gen(Generator::new(Species::Phi, None));
                            nt.coeff = nt
                                .coeff
                                .mul(&Scalar::sym_pow(crate::scalar::Sym::M, 2))
                                .mul_int(-1);
                            queue.push(nt);
                        }
                        Species::PhiStar => {
                            let mut nt = t.clone();
                            nt.factors[pos].1 =
                                PointFactor::Gen(Generator::new(Species::PhiStar, None));
                            nt.coeff = nt
                                .coeff
                                .mul(&Scalar::sym_pow(crate::scalar::Sym::M, 2))
                                .mul_int(-1);
                            queue.push(nt);
                        }
                        // The photon is massless.
                        _ => {}
                    }
                    continue;
                }
            }
            if opts.relocate {
                let moved = relocate_term(&t)?;
                if moved.len() != 1 || moved[0] != t {
                    queue.extend(moved);
                    continue;
                }
            }
            finished.push(canonicalize_wterm(&t));
        }
        let mut merged: BTreeMap<_, Scalar> = BTreeMap::new();
        for t in finished {
            let e = merged.entry(t.body()).or_insert_with(Scalar::zero);
            *e = e.add(&t.coeff);
        }
        let terms = merged
            .into_iter()
            .filter(|(_, c)| !c.is_zero())
            .map(|((metrics, kernels, factors), coeff)| WTerm {
                coeff,
                metrics,
                kernels,
                factors,
            })
            .collect();
        Ok(LocalExpr { terms })
    }

    /// Places a field polynomial at one point.
    pub fn from_poly_at(point: u8, b: &FieldPolynomial, opts: &NormOpts) -> LocalExpr {
        let raw = b
            .terms()
            .iter()
            .map(|ft| WTerm {
                coeff: ft.coeff.clone(),
                metrics: ft.metrics.clone(),
                kernels: vec![],
                factors: ft
                    .gens
                    .iter()
                    .map(|g| (point, PointFactor::Gen(*g)))
                    .chain(ft.tests.iter().map(|t| (point, PointFactor::Test(*t))))
                    .collect(),
            })
            .collect();
        LocalExpr::normalize(raw, opts).expect("plain placement cannot fail")
    }

    pub fn add(&self, o: &LocalExpr, opts: &NormOpts) -> LocalExpr {
        let mut ts = self.terms.clone();
        ts.extend(o.terms.iter().cloned());
        LocalExpr::normalize(ts, opts).expect("recombination cannot fail")
    }

    pub fn scale(&self, s: &Scalar) -> LocalExpr {
        LocalExpr {
            terms: self
                .terms
                .iter()
                .map(|t| WTerm { coeff: t.coeff.mul(s), ..t.clone() })
                .filter(|t| !t.coeff.is_zero())
                .collect(),
        }
    }

    pub fn sub(&self, o: &LocalExpr, opts: &NormOpts) -> LocalExpr {
        self.add(&o.scale(&Scalar::from_int(-1)), opts)
    }

    /// Derivative at y with index `mu`: Leibniz over kernels and y factors.
    pub fn deriv_y(&self, mu: Idx, opts: &NormOpts) -> Result<LocalExpr, WickError> {
        let mut out = Vec::new();
        for t in &self.terms {
            for ki in 0..t.kernels.len() {
                let mut nt = t.clone();
                nt.kernels[ki].derivs.push(mu);
                nt.coeff = nt.coeff.mul_int(-1);
                out.push(nt);
            }
            for fi in 0..t.factors.len() {
                if t.factors[fi].0 != Y {
                    continue;
                }
                let mut nt = t.clone();
                nt.factors[fi].1 = apply_deriv(&t.factors[fi].1, mu)?;
                out.push(nt);
            }
        }
        LocalExpr::normalize(out, opts)
    }
}

/// The two-point kernel for a pair of single generators, the first at x
/// and the second at y. Zero for pairings forbidden by charge or species.
pub fn contraction(g1: &Generator, g2: &Generator, c: &Scalar, opts: &NormOpts) -> LocalExpr {
    use Species::*;
    let mut raw: Vec<WTerm> = Vec::new();
    let push_prop = |raw: &mut Vec<WTerm>, coeff: Scalar, derivs: Vec<Idx>| {
        raw.push(WTerm {
            coeff,
            metrics: vec![],
            kernels: vec![Kernel { kind: KernelKind::DeltaF, derivs }],
            factors: vec![],
        });
    };
    match (g1.species, g2.species) {
        (A, A) => {
            raw.push(WTerm {
                coeff: Scalar::from_int(-1),
                metrics: vec![(g1.index.unwrap(), g2.index.unwrap())],
                kernels: vec![Kernel { kind: KernelKind::DFree, derivs: vec![] }],
                factors: vec![],
            });
        }
        (Phi, PhiStar) | (PhiStar, Phi) => push_prop(&mut raw, Scalar::one(), vec![]),
        (DPhi, PhiStar) | (DPhiStar, Phi) => {
            push_prop(&mut raw, Scalar::one(), vec![g1.index.unwrap()])
        }
        (Phi, DPhiStar) | (PhiStar, DPhi) => {
            push_prop(&mut raw, Scalar::from_int(-1), vec![g2.index.unwrap()])
        }
        (DPhi, DPhiStar) | (DPhiStar, DPhi) => {
            let (nu, mu) = (g1.index.unwrap(), g2.index.unwrap());
            push_prop(&mut raw, Scalar::from_int(-1), vec![nu, mu]);
            raw.push(WTerm {
                coeff: Scalar::minus_i().mul(c),
                metrics: vec![(nu, mu)],
                kernels: vec![Kernel { kind: KernelKind::Dirac, derivs: vec![] }],
                factors: vec![],
            });
        }
        _ => {}
    }
    LocalExpr::normalize(raw, opts).expect("kernel table cannot fail")
}

/// Tree part of the second-order product: the uncontracted term plus all
/// single contractions between an occurrence in `b1` at x and one in `b2`
/// at y.
pub fn t2_tree(
    b1: &FieldPolynomial,
    b2: &FieldPolynomial,
    c: &Scalar,
    opts: &NormOpts,
) -> Result<LocalExpr, WickError> {
    let top = b1.max_label().max(b2.max_label()) + 1;
    let mut raw: Vec<WTerm> = Vec::new();
    for t1 in b1.terms() {
        for t2 in b2.terms() {
            // Keep label sets disjoint: shift the contracted labels of the
            // second term.
            let t2s = shift_bound_labels(t2, top);
            // No contraction.
            let mut base = WTerm::constant(t1.coeff.mul(&t2s.coeff));
            base.metrics.extend(t1.metrics.iter().copied());
            base.metrics.extend(t2s.metrics.iter().copied());
            for g in &t1.gens {
                base.factors.push((X, PointFactor::Gen(*g)));
            }
            for tf in &t1.tests {
                base.factors.push((X, PointFactor::Test(*tf)));
            }
            for g in &t2s.gens {
                base.factors.push((Y, PointFactor::Gen(*g)));
            }
            for tf in &t2s.tests {
                base.factors.push((Y, PointFactor::Test(*tf)));
            }
            raw.push(base.clone());
            // Single contractions.
            for (i1, g1) in t1.gens.iter().enumerate() {
                for (i2, g2) in t2s.gens.iter().enumerate() {
                    let kern = contraction(g1, g2, c, opts);
                    if kern.is_zero() {
                        continue;
                    }
                    for kt in kern.terms() {
                        let mut nt = WTerm::constant(
                            t1.coeff.mul(&t2s.coeff).mul(&kt.coeff),
                        );
                        nt.metrics.extend(t1.metrics.iter().copied());
                        nt.metrics.extend(t2s.metrics.iter().copied());
                        nt.metrics.extend(kt.metrics.iter().copied());
                        nt.kernels.extend(kt.kernels.iter().cloned());
                        for (k, g) in t1.gens.iter().enumerate() {
                            if k != i1 {
                                nt.factors.push((X, PointFactor::Gen(*g)));
                            }
                        }
                        for tf in &t1.tests {
                            nt.factors.push((X, PointFactor::Test(*tf)));
                        }
                        for (k, g) in t2s.gens.iter().enumerate() {
                            if k != i2 {
                                nt.factors.push((Y, PointFactor::Gen(*g)));
                            }
                        }
                        for tf in &t2s.tests {
                            nt.factors.push((Y, PointFactor::Test(*tf)));
                        }
                        raw.push(nt);
                    }
                }
            }
        }
    }
    LocalExpr::normalize(raw, opts)
}

/// Moves contracted labels of a field term above `top`.
fn shift_bound_labels(t: &crate::fields::FTerm, top: u32) -> crate::fields::FTerm {
    let free = {
        let mut count: BTreeMap<Idx, u32> = BTreeMap::new();
        let mut all = Vec::new();
        for tf in &t.tests {
            if let Some(i) = tf.deriv {
                all.push(i);
            }
        }
        for (a, b) in &t.metrics {
            all.push(*a);
            all.push(*b);
        }
        for g in &t.gens {
            if let Some(i) = g.index {
                all.push(i);
            }
        }
        for l in all {
            *count.entry(l).or_insert(0) += 1;
        }
        count
    };
    let mut map: BTreeMap<Idx, Idx> = BTreeMap::new();
    let mut next = top;
    let mut rl = |i: Idx, map: &mut BTreeMap<Idx, Idx>| -> Idx {
        if free.get(&i) == Some(&1) {
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
            tf.deriv = Some(rl(d, &mut map));
        }
    }
    for m in &mut nt.metrics {
        m.0 = rl(m.0, &mut map);
        m.1 = rl(m.1, &mut map);
    }
    for g in &mut nt.gens {
        if let Some(i) = g.index {
            g.index = Some(rl(i, &mut map));
        }
    }
    nt
}

/// Scratch labels for the divergence index and internal contractions.
const WI_MU: Idx = Idx(800_000);

/// Residual of the interpolated Ward identity at second order for one
/// entry `B`: the y divergence of the two-point product against the
/// current, minus the contact terms. Zero exactly when the identity holds.
pub fn check_order2_wi(
    b: &FieldPolynomial,
    c: &Scalar,
    opts: &NormOpts,
) -> Result<LocalExpr, WickError> {
    let mu = WI_MU;
    let j = crate::fields::current(mu);
    let lhs = t2_tree(b, &j, c, opts)?.deriv_y(mu, opts)?;
    // Contact terms: delta against theta B, and the interpolation part
    // carrying the derivative of the delta against theta_mu B.
    let (tb, tmb) = b.delta_q_action(mu);
    let mut raw: Vec<WTerm> = Vec::new();
    for t in tb.terms() {
        let mut nt = WTerm::constant(t.coeff.clone());
        nt.metrics.extend(t.metrics.iter().copied());
        nt.kernels.push(Kernel { kind: KernelKind::Dirac, derivs: vec![] });
        for g in &t.gens {
            nt.factors.push((X, PointFactor::Gen(*g)));
        }
        for tf in &t.tests {
            nt.factors.push((X, PointFactor::Test(*tf)));
        }
        raw.push(nt);
    }
    // (c - 1) d/dy_mu [delta (theta_mu B)(x)]: only the delta depends on y.
    let cm1 = c.sub(&Scalar::one());
    for t in tmb.terms() {
        let mut nt = WTerm::constant(t.coeff.mul(&cm1).mul_int(-1));
        nt.metrics.extend(t.metrics.iter().copied());
        nt.kernels.push(Kernel { kind: KernelKind::Dirac, derivs: vec![mu] });
        for g in &t.gens {
            nt.factors.push((X, PointFactor::Gen(*g)));
        }
        for tf in &t.tests {
            nt.factors.push((X, PointFactor::Test(*tf)));
        }
        raw.push(nt);
    }
    let rhs = LocalExpr::normalize(raw, opts)?;
    Ok(lhs.sub(&rhs, opts))
}

/// Collects the plain-delta terms of an expression into a local density.
/// Relocation must have moved every factor of such terms onto x already.
pub fn local_delta_density(expr: &LocalExpr) -> FieldPolynomial {
    let mut out: Vec<crate::fields::FTerm> = Vec::new();
    for t in expr.terms() {
        let local = t.kernels.len() == 1
            && t.kernels[0].kind == KernelKind::Dirac
            && t.kernels[0].derivs.is_empty();
        if !local {
            continue;
        }
        let mut ft = crate::fields::FTerm::constant(t.coeff.clone());
        ft.metrics = t.metrics.clone();
        for (p, f) in &t.factors {
            assert_eq!(*p, X, "relocation left a factor at y");
            match f {
                PointFactor::Gen(g) => ft.gens.push(*g),
                PointFactor::Test(tf) => ft.tests.push(*tf),
                PointFactor::BoxG(_) => panic!("boxed generator in a local term"),
            }
        }
        out.push(ft);
    }
    FieldPolynomial::from_terms(out)
}

/// The local part of the second-order S expansion for the minimal coupling
/// interaction: collects the delta terms of the tree product of the
/// smeared cubic vertex with itself, including the 1/2! and the i^2.
pub fn smatrix_order2(c: &Scalar, opts: &NormOpts) -> Result<FieldPolynomial, WickError> {
    let vertex = smeared_cubic_vertex();
    let t2 = t2_tree(&vertex, &vertex, c, opts)?;
    // i^2 / 2! times the local density; the delta itself becomes the
    // identification of the two g smearings.
    Ok(local_delta_density(&t2).scale(&Scalar::ratio(-1, 2)))
}

/// The cubic interaction vertex with its coupling and one smearing factor.
fn smeared_cubic_vertex() -> FieldPolynomial {
    let ja = crate::fields::j_dot_a().scale(&Scalar::sym(crate::scalar::Sym::E));
    FieldPolynomial::from_terms(
        ja.terms()
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.tests.push(TestFactor::plain(TestBase::G));
                t
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields;
    use crate::scalar::Sym;

    const NU: Idx = Idx(1);

    fn sym_c() -> Scalar {
        Scalar::sym(Sym::C)
    }

    #[test]
    fn kernel_table() {
        let opts = NormOpts::default();
        let phi = Generator::new(Species::Phi, None);
        let phistar = Generator::new(Species::PhiStar, None);
        let k = contraction(&phi, &phistar, &sym_c(), &opts);
        assert_eq!(k.terms().len(), 1);
        assert_eq!(k.terms()[0].kernels[0].kind, KernelKind::DeltaF);
        // Same charge vanishes.
        assert!(contraction(&phi, &phi, &sym_c(), &opts).is_zero());
        let a1 = Generator::new(Species::A, Some(Idx(1)));
        let a2 = Generator::new(Species::A, Some(Idx(2)));
        let k = contraction(&a1, &a2, &sym_c(), &opts);
        assert_eq!(k.terms()[0].kernels[0].kind, KernelKind::DFree);
        assert!(contraction(&a1, &phi, &sym_c(), &opts).is_zero());
        // Derivative pair carries the interpolating delta.
        let dp = Generator::new(Species::DPhi, Some(Idx(1)));
        let dps = Generator::new(Species::DPhiStar, Some(Idx(2)));
        let k = contraction(&dp, &dps, &sym_c(), &opts);
        assert_eq!(k.terms().len(), 2);
        assert!(k
            .terms()
            .iter()
            .any(|t| t.kernels[0].kind == KernelKind::Dirac));
    }

    #[test]
    fn wi_line_dphi() {
        let opts = NormOpts::default();
        let res = check_order2_wi(&fields::dphi(NU), &sym_c(), &opts).unwrap();
        assert!(res.is_zero(), "residual: {:?}", res);
    }

    #[test]
    fn wi_line_dphistar() {
        let opts = NormOpts::default();
        let res = check_order2_wi(&fields::dphistar(NU), &sym_c(), &opts).unwrap();
        assert!(res.is_zero(), "residual: {:?}", res);
    }

    #[test]
    fn wi_line_current() {
        let opts = NormOpts::default();
        let res = check_order2_wi(&fields::current(NU), &sym_c(), &opts).unwrap();
        assert!(res.is_zero(), "residual: {:?}", res);
    }

    #[test]
    fn wi_fails_off_equation() {
        let mut opts = NormOpts::default();
        opts.kg_delta_sign = -1;
        let res = check_order2_wi(&fields::dphi(NU), &sym_c(), &opts).unwrap();
        assert!(!res.is_zero());
    }

    #[test]
    fn smatrix_local_part() {
        let opts = NormOpts::default();
        let got = smatrix_order2(&Scalar::one(), &opts).unwrap();
        // i e^2 A A phistar phi with two g factors.
        let want = fields::a_squared()
            .mul(&fields::phiphistar())
            .scale(&Scalar::i().mul(&Scalar::sym_pow(Sym::E, 2)));
        let want = FieldPolynomial::from_terms(
            want.terms()
                .iter()
                .map(|t| {
                    let mut t = t.clone();
                    t.tests.push(TestFactor::plain(TestBase::G));
                    t.tests.push(TestFactor::plain(TestBase::G));
                    t
                })
                .collect(),
        );
        assert_eq!(got, want);
        // The c dependence is linear: symbolic c gives c times the same.
        let sym = smatrix_order2(&sym_c(), &opts).unwrap();
        assert_eq!(sym, want.scale(&sym_c()));
        // At c = 0 nothing local survives.
        assert!(smatrix_order2(&Scalar::zero(), &opts).unwrap().is_zero());
    }

    #[test]
    fn c_endpoint_values() {
        // The identity holds for numeric endpoints as well.
        let opts = NormOpts::default();
        for c in [Scalar::zero(), Scalar::one(), Scalar::ratio(3, 7)] {
            for b in [fields::dphi(NU), fields::dphistar(NU), fields::current(NU)] {
                let res = check_order2_wi(&b, &c, &opts).unwrap();
                assert!(res.is_zero());
            }
        }
    }
}
