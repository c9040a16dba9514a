//! Formal multi-point products of local entries and the exact rewrite
//! rules connecting their two ordering prescriptions.
//!
//! A term is one product symbol applied to local entries at labeled
//! points, multiplied by a cluster of point-identifying deltas held in a
//! momentum representation, optional momentum factors standing for point
//! derivatives of those deltas, and an exact scalar coefficient. Three
//! rewrites act on sums of such terms: the pair-partition expansion that
//! converts one product family into the other, the divergence in the
//! distinguished point, and the divergence identity that trades a
//! divergence node for charge and gradient terms. Identities are decided
//! by canonical relabeling and exact coefficient cancellation, so a
//! verification either closes to the empty sum or exhibits its residual.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::canon::{self, FlatFactor, Idx};
use crate::fields::{
    self, FieldPolynomial, MembershipPolicy, TestBase, TestFactor, admissible,
    normalize_free_labels, proportional,
};
use crate::rengroup::{self, RenMap};
use crate::scalar::{Scalar, Sym, SymPow};
use crate::unitary;

/// Point label of the distinguished (divergence) point.
pub const Y_POINT: u8 = 255;

/// Entry polynomials are stored with their free labels renamed into this
/// range, in sorted order; the outer names are kept alongside.
const ENTRY_SLOT_BASE: u32 = 2_000_000;

/// Divergence and gradient labels are drawn from this range, above any
/// caller-chosen label and below the canonical dummy range.
const DIV_BASE: u32 = 500_000;

/// The two product families: the plain ordering and the interpolated one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    /// Plain ordering.
    T,
    /// Interpolated ordering, carrying the parameter `c` implicitly.
    That,
}

impl Family {
    fn code(self) -> i64 {
        match self {
            Family::T => 0,
            Family::That => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::T => "T",
            Family::That => "T^",
        }
    }
}

/// Whether the term is a plain product or its divergence in the
/// distinguished point, contracted through the stored label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    Plain,
    DivY(Idx),
}

/// One local entry of a product term.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Entry {
    pub point: u8,
    /// Slot-normalized polynomial; free labels renamed to the slot range.
    pub poly: FieldPolynomial,
    /// Outer labels of the slots, in slot order.
    pub binds: Vec<Idx>,
}

/// One term of a product expression.
#[derive(Debug, Clone)]
pub struct TTerm {
    pub coeff: Scalar,
    /// Momentum factors `q_p^label`, one per entry; points must be
    /// non-pivot members of the block containing the distinguished point.
    pub mom: Vec<(u8, Idx)>,
    /// Delta clusters as sorted member lists; singletons are implicit.
    pub blocks: Vec<Vec<u8>>,
    pub family: Family,
    pub node: Node,
    pub entries: Vec<Entry>,
}

/// Splits a polynomial into its field monomials; scalar coefficients stay
/// attached and may themselves be symbol sums.
fn split_monomials(p: &FieldPolynomial) -> Vec<FieldPolynomial> {
    p.terms().iter().map(|t| FieldPolynomial::from_terms(vec![t.clone()])).collect()
}

/// Factors a polynomial into a scalar content and a primitive part whose
/// leading coefficient monomial is one.
fn extract_content(p: &FieldPolynomial) -> (Scalar, FieldPolynomial) {
    let mut min_pow: Option<SymPow> = None;
    for t in p.terms() {
        for (pow, _) in t.coeff.iter() {
            min_pow = Some(match min_pow {
                None => *pow,
                Some(m) => {
                    let mut m = m;
                    for (slot, e) in pow.iter().enumerate() {
                        m[slot] = m[slot].min(*e);
                    }
                    m
                }
            });
        }
    }
    let min_pow = min_pow.expect("content of the zero polynomial");
    let lead = p.terms()[0]
        .coeff
        .iter()
        .next()
        .expect("terms carry nonzero coefficients")
        .1
        .clone();
    let lead_inv = lead.inv();
    let mut content_map = BTreeMap::new();
    content_map.insert(min_pow, lead);
    let content = Scalar::from_parts(content_map);
    let terms = p
        .terms()
        .iter()
        .map(|t| {
            let mut t = t.clone();
            let mut parts = BTreeMap::new();
            for (pow, g) in t.coeff.iter() {
                let mut q = *pow;
                for (slot, e) in min_pow.iter().enumerate() {
                    q[slot] -= e;
                }
                parts.insert(q, g.mul(&lead_inv));
            }
            t.coeff = Scalar::from_parts(parts);
            t
        })
        .collect();
    (content, FieldPolynomial::from_terms(terms))
}

/// Slot-normalizes a polynomial into an entry without factoring out its
/// content; used for the distinguished entry, which is kept whole.
fn raw_entry(point: u8, outer: &FieldPolynomial) -> Entry {
    let free: Vec<Idx> = outer.free_indices().into_iter().collect();
    let mut poly = outer.clone();
    for (k, f) in free.iter().enumerate() {
        assert!(f.0 < ENTRY_SLOT_BASE, "entry label {} too large", f.0);
        poly = poly.rename_free(*f, Idx(ENTRY_SLOT_BASE + k as u32));
    }
    Entry { point, poly, binds: free }
}

/// Builds an entry from a (usually single-monomial) polynomial, factoring
/// its content into the returned scalar. Returns None for zero.
fn make_entry(point: u8, outer: &FieldPolynomial) -> Option<(Scalar, Entry)> {
    if outer.is_zero() {
        return None;
    }
    let (content, prim) = extract_content(outer);
    Some((content, raw_entry(point, &prim)))
}

/// Restores the outer labels of an entry polynomial.
fn denorm(e: &Entry) -> FieldPolynomial {
    let mut p = e.poly.clone();
    for (k, f) in e.binds.iter().enumerate() {
        p = p.rename_free(Idx(ENTRY_SLOT_BASE + k as u32), *f);
    }
    p
}

/// The slot-normalized current, used to recognize the distinguished entry.
fn current_entry_poly() -> FieldPolynomial {
    raw_entry(Y_POINT, &fields::current(Idx(1))).poly
}

/// The product of the given polynomials at points `0..n`, with an optional
/// current at the distinguished point carrying the given index. Each
/// x-entry distributes over its field monomials, so every resulting term
/// holds single-monomial x-entries; the current stays whole.
pub fn product_atom(
    family: Family,
    xs: &[FieldPolynomial],
    y_index: Option<Idx>,
) -> Vec<TTerm> {
    assert!(xs.len() < Y_POINT as usize, "too many entry points");
    let base_entries: Vec<Entry> = match y_index {
        Some(mu) => vec![raw_entry(Y_POINT, &fields::current(mu))],
        None => vec![],
    };
    let mut terms = vec![TTerm {
        coeff: Scalar::one(),
        mom: vec![],
        blocks: vec![],
        family,
        node: Node::Plain,
        entries: base_entries,
    }];
    for (pt, p) in xs.iter().enumerate() {
        let mut next = Vec::new();
        for mono in split_monomials(p) {
            if let Some((content, e)) = make_entry(pt as u8, &mono) {
                for t in &terms {
                    let mut t = t.clone();
                    t.coeff = t.coeff.mul(&content);
                    t.entries.push(e.clone());
                    next.push(t);
                }
            }
        }
        terms = next;
    }
    for t in &mut terms {
        t.entries.sort();
    }
    terms
}

/// Multiplies two delta clusters and the link between the two given
/// points into one cluster, rewriting momentum factors in terms of the
/// merged cluster's variables. The result is a sum when a momentum factor
/// at the link endpoint on the pivot side expands.
fn merge_link(t: &TTerm, a: u8, b: u8) -> Vec<TTerm> {
    let pos_a = t.blocks.iter().position(|bl| bl.contains(&a));
    let pos_b = t.blocks.iter().position(|bl| bl.contains(&b));
    if let (Some(x), Some(y)) = (pos_a, pos_b) {
        assert_ne!(x, y, "link endpoints already identified");
    }
    let a_side: Vec<u8> = pos_a.map(|i| t.blocks[i].clone()).unwrap_or_else(|| vec![a]);
    let b_side: Vec<u8> = pos_b.map(|i| t.blocks[i].clone()).unwrap_or_else(|| vec![b]);
    let a_has_y = a_side.contains(&Y_POINT);
    let b_has_y = b_side.contains(&Y_POINT);
    assert!(!(a_has_y && b_has_y), "two distinguished points");

    let mut nt = t.clone();
    let mut drop: Vec<usize> = pos_a.into_iter().chain(pos_b).collect();
    drop.sort_unstable_by(|x, y| y.cmp(x));
    for i in drop {
        nt.blocks.remove(i);
    }
    let mut merged: Vec<u8> = a_side.iter().chain(b_side.iter()).copied().collect();
    merged.sort_unstable();
    nt.blocks.push(merged);
    nt.blocks.sort();

    // The pivot of every cluster with the distinguished point is that
    // point, so only the link endpoint on that side re-expresses.
    let (endpoint, other_side) = if a_has_y {
        (a, &b_side)
    } else if b_has_y {
        (b, &a_side)
    } else {
        debug_assert!(t.mom.iter().all(|(p, _)| !a_side.contains(p) && !b_side.contains(p)));
        return vec![nt];
    };
    if endpoint == Y_POINT {
        return vec![nt];
    }
    let (at_e, rest): (Vec<(u8, Idx)>, Vec<(u8, Idx)>) =
        nt.mom.iter().partition(|(p, _)| *p == endpoint);
    nt.mom = rest;
    let mut out = vec![nt];
    for (_, label) in at_e {
        let mut next = Vec::new();
        for w in &out {
            for target in std::iter::once(endpoint).chain(other_side.iter().copied()) {
                let mut w2 = w.clone();
                w2.mom.push((target, label));
                w2.mom.sort();
                next.push(w2);
            }
        }
        out = next;
    }
    out
}

/// All partitions of `0..k` into singletons and unordered pairs.
fn pair_partitions_of(k: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(
        remaining: &[usize],
        acc: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        let Some((&first, rest)) = remaining.split_first() else {
            out.push(acc.clone());
            return;
        };
        rec(rest, acc, out);
        for (i, &other) in rest.iter().enumerate() {
            let mut rem = rest.to_vec();
            rem.remove(i);
            acc.push((first, other));
            rec(&rem, acc, out);
            acc.pop();
        }
    }
    let items: Vec<usize> = (0..k).collect();
    let mut out = Vec::new();
    rec(&items, &mut Vec::new(), &mut out);
    out
}

/// Number of partitions of an n-set into singletons and pairs.
pub fn part2_partitions(n: u32) -> u128 {
    let mut a: Vec<u128> = vec![1, 1];
    for k in 2..=n as usize {
        a.push(a[k - 1] + (k as u128 - 1) * a[k - 2]);
    }
    a[n as usize]
}

/// Expands every term of one family into the other by summing over pair
/// partitions of its entries. Each pair contributes a factor `-i lambda`,
/// the paired entries merge into their derivative-pairing at the smaller
/// point, and the pair's points are identified by a delta link.
fn expand_pairs(terms: &[TTerm], from: Family, to: Family, lambda: &Scalar) -> Vec<TTerm> {
    let mut out = Vec::new();
    for t in terms {
        assert_eq!(t.family, from, "expansion applied to a mixed sum");
        for part in pair_partitions_of(t.entries.len()) {
            let mut merged: Vec<(u8, FieldPolynomial)> = Vec::new();
            let mut links: Vec<(u8, u8)> = Vec::new();
            let mut dead = false;
            for (ia, ib) in &part {
                let ea = &t.entries[*ia];
                let eb = &t.entries[*ib];
                let z = denorm(ea).zeta(&denorm(eb));
                if z.is_zero() {
                    dead = true;
                    break;
                }
                merged.push((ea.point.min(eb.point), z));
                links.push((ea.point, eb.point));
            }
            if dead {
                continue;
            }
            let paired: BTreeSet<usize> =
                part.iter().flat_map(|(a, b)| [*a, *b]).collect();
            let mut base = t.clone();
            base.family = to;
            for _ in 0..part.len() {
                base.coeff = base.coeff.mul(&Scalar::minus_i()).mul(lambda);
            }
            if base.coeff.is_zero() {
                continue;
            }
            base.entries = t
                .entries
                .iter()
                .enumerate()
                .filter(|(i, _)| !paired.contains(i))
                .map(|(_, e)| e.clone())
                .collect();
            let mut work = vec![base];
            for (pa, pb) in &links {
                work = work.iter().flat_map(|w| merge_link(w, *pa, *pb)).collect();
            }
            for (pt, z) in &merged {
                let mut next = Vec::new();
                for mono in split_monomials(z) {
                    let Some((content, e)) = make_entry(*pt, &mono) else { continue };
                    for w in &work {
                        let mut w2 = w.clone();
                        w2.coeff = w2.coeff.mul(&content);
                        w2.entries.push(e.clone());
                        next.push(w2);
                    }
                }
                work = next;
            }
            for mut w in work {
                w.entries.sort();
                out.push(w);
            }
        }
    }
    out
}

/// Expansion of the interpolated family into the plain one.
pub fn expand_that(terms: &[TTerm], c: &Scalar) -> Vec<TTerm> {
    expand_pairs(terms, Family::That, Family::T, c)
}

/// Divergence in the distinguished point, contracted through `mu`. Terms
/// holding the point as an entry become divergence nodes; terms holding it
/// only inside a delta cluster pick up the cluster's momentum factors;
/// terms without it vanish.
fn dy(terms: &[TTerm], mu: Idx) -> Vec<TTerm> {
    let mut out = Vec::new();
    for t in terms {
        if let Some(pos) = t.entries.iter().position(|e| e.point == Y_POINT) {
            assert!(matches!(t.node, Node::Plain), "double divergence");
            assert!(
                t.blocks.iter().all(|b| !b.contains(&Y_POINT)),
                "distinguished point both free and clustered"
            );
            assert_eq!(t.entries[pos].binds, vec![mu], "divergence index mismatch");
            let mut nt = t.clone();
            nt.node = Node::DivY(mu);
            out.push(nt);
        } else if let Some(bi) = t.blocks.iter().position(|b| b.contains(&Y_POINT)) {
            for &z in t.blocks[bi].iter().filter(|&&z| z != Y_POINT) {
                let mut nt = t.clone();
                nt.coeff = nt.coeff.neg();
                nt.mom.push((z, mu));
                nt.mom.sort();
                out.push(nt);
            }
        }
    }
    out
}

/// Applies the divergence identity of the given family to every
/// divergence node: the current entry at the distinguished point is
/// consumed, each remaining entry contributes a charge term that
/// identifies the two points and a gradient term weighted by `lambda`
/// that also differentiates the identifying delta.
fn mwi_rewrite(
    terms: &[TTerm],
    family: Family,
    lambda: &Scalar,
    fresh: &mut u32,
) -> Vec<TTerm> {
    let jpoly = current_entry_poly();
    let mut out = Vec::new();
    for t in terms {
        let Node::DivY(mu) = t.node else {
            out.push(t.clone());
            continue;
        };
        assert_eq!(t.family, family, "rewrite family mismatch");
        assert!(t.mom.is_empty(), "divergence node carries momentum factors");
        let ypos = t
            .entries
            .iter()
            .position(|e| e.point == Y_POINT)
            .expect("divergence node without the distinguished entry");
        assert_eq!(t.entries[ypos].binds, vec![mu]);
        assert_eq!(t.entries[ypos].poly, jpoly, "distinguished entry is not the current");
        for (l, el) in t.entries.iter().enumerate() {
            if l == ypos {
                continue;
            }
            let cl = denorm(el);
            let w = el.point;
            let others: Vec<Entry> = t
                .entries
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != ypos && *i != l)
                .map(|(_, e)| e.clone())
                .collect();
            let th = cl.theta();
            if !th.is_zero() {
                let (content, e) = make_entry(w, &th).expect("nonzero charge term");
                let mut base = t.clone();
                base.node = Node::Plain;
                base.coeff = t.coeff.mul(&content);
                base.entries = others.clone();
                base.entries.push(e);
                base.entries.sort();
                out.extend(merge_link(&base, Y_POINT, w));
            }
            let rho = Idx(*fresh);
            *fresh += 1;
            let thmu = cl.theta_mu(rho);
            for mono in split_monomials(&thmu) {
                let Some((content, e)) = make_entry(w, &mono) else { continue };
                let mut base = t.clone();
                base.node = Node::Plain;
                base.coeff = t.coeff.mul(lambda).mul(&content);
                if base.coeff.is_zero() {
                    continue;
                }
                base.entries = others.clone();
                base.entries.push(e);
                base.entries.sort();
                for m in merge_link(&base, Y_POINT, w) {
                    let bi = m
                        .blocks
                        .iter()
                        .position(|b| b.contains(&Y_POINT))
                        .expect("gradient term without a distinguished cluster");
                    for &z in m.blocks[bi].iter().filter(|&&z| z != Y_POINT) {
                        let mut nt = m.clone();
                        nt.coeff = nt.coeff.neg();
                        nt.mom.push((z, rho));
                        nt.mom.sort();
                        out.push(nt);
                    }
                }
            }
        }
    }
    out
}

/// Canonically relabels every term and merges equal structures, dropping
/// zero coefficients. The empty result certifies that the sum vanishes.
pub fn canonical_reduce(terms: &[TTerm]) -> Vec<(Scalar, TTerm)> {
    let mut polys: BTreeSet<FieldPolynomial> = BTreeSet::new();
    for t in terms {
        for e in &t.entries {
            polys.insert(e.poly.clone());
        }
    }
    let ids: BTreeMap<&FieldPolynomial, i64> =
        polys.iter().enumerate().map(|(k, p)| (p, k as i64)).collect();
    let mut acc: BTreeMap<Vec<i64>, (Scalar, TTerm)> = BTreeMap::new();
    for t in terms {
        if t.coeff.is_zero() {
            continue;
        }
        let mut factors: Vec<FlatFactor> = Vec::new();
        let node_key = match t.node {
            Node::Plain => vec![0, t.family.code(), 0],
            Node::DivY(_) => vec![0, t.family.code(), 1],
        };
        let node_slots = match t.node {
            Node::Plain => vec![],
            Node::DivY(mu) => vec![mu],
        };
        factors.push(FlatFactor { key: node_key, slots: node_slots, symmetric: false });
        for b in &t.blocks {
            let mut key = vec![1];
            key.extend(b.iter().map(|p| *p as i64));
            factors.push(FlatFactor { key, slots: vec![], symmetric: false });
        }
        for (p, l) in &t.mom {
            factors.push(FlatFactor {
                key: vec![2, *p as i64],
                slots: vec![*l],
                symmetric: false,
            });
        }
        for e in &t.entries {
            factors.push(FlatFactor {
                key: vec![3, e.point as i64, ids[&e.poly]],
                slots: e.binds.clone(),
                symmetric: false,
            });
        }
        let res = canon::canonicalize(&factors);
        let mut image: Vec<i64> = Vec::new();
        for (pos, &fi) in res.order.iter().enumerate() {
            let f = &factors[fi];
            image.push(i64::MIN + 1);
            image.extend_from_slice(&f.key);
            for &sp in &res.perms[pos] {
                let label = f.slots[sp];
                image.push(
                    res.rename.get(&label).map(|v| *v as i64).unwrap_or(label.0 as i64),
                );
            }
        }
        let rn = |i: Idx| res.rename.get(&i).map(|v| Idx(*v)).unwrap_or(i);
        match acc.entry(image) {
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let (c, _) = o.get_mut();
                *c = c.add(&t.coeff);
            }
            std::collections::btree_map::Entry::Vacant(v) => {
                let mut rep = t.clone();
                if let Node::DivY(mu) = rep.node {
                    rep.node = Node::DivY(rn(mu));
                }
                rep.mom = rep.mom.iter().map(|(p, l)| (*p, rn(*l))).collect();
                rep.mom.sort();
                for e in &mut rep.entries {
                    e.binds = e.binds.iter().map(|b| rn(*b)).collect();
                }
                rep.entries.sort();
                v.insert((t.coeff.clone(), rep));
            }
        }
    }
    acc.into_values()
        .filter(|(c, _)| !c.is_zero())
        .map(|(c, mut rep)| {
            rep.coeff = c.clone();
            (c, rep)
        })
        .collect()
}

/// Direction of a divergence-identity verification: derive the identity of
/// the interpolated family from that of the plain family, or conversely.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    MwiToWi,
    WiToMwi,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::MwiToWi => "mwi-to-wi",
            Direction::WiToMwi => "wi-to-mwi",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mwi-to-wi" => Ok(Direction::MwiToWi),
            "wi-to-mwi" => Ok(Direction::WiToMwi),
            other => Err(format!("unknown direction {:?}", other)),
        }
    }
}

/// Result of a divergence-identity verification.
#[derive(Debug, Clone)]
pub struct TheoremReport {
    pub direction: Direction,
    pub n: usize,
    pub residual: Vec<(Scalar, TTerm)>,
}

impl TheoremReport {
    pub fn ok(&self) -> bool {
        self.residual.is_empty()
    }
}

impl fmt::Display for TheoremReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok() {
            write!(f, "verified ({}, n = {}): residual is empty", self.direction.name(), self.n)
        } else {
            writeln!(
                f,
                "violated ({}, n = {}): {} residual terms",
                self.direction.name(),
                self.n,
                self.residual.len()
            )?;
            for (_, t) in &self.residual {
                writeln!(f, "  {}", t)?;
            }
            Ok(())
        }
    }
}

/// Renames entry labels into disjoint low ranges so that distinct entries
/// never share a free label.
fn disjoint_labels(entries: &[FieldPolynomial]) -> Vec<FieldPolynomial> {
    entries
        .iter()
        .enumerate()
        .map(|(l, b)| {
            let bn = normalize_free_labels(b);
            let free: Vec<Idx> = bn.free_indices().into_iter().collect();
            let mut q = bn;
            for f in &free {
                let target = Idx(16 * l as u32 + f.0);
                if *f != target {
                    q = q.rename_free(*f, target);
                }
            }
            q
        })
        .collect()
}

/// The rewrite weight of the divergence identity for each family: the
/// gradient term of the plain family carries -1, the interpolated one
/// carries c - 1.
fn family_lambda(family: Family, c: &Scalar) -> Scalar {
    match family {
        Family::T => Scalar::from_int(-1),
        Family::That => c.sub(&Scalar::one()),
    }
}

/// Core of the verification, with the rewrite weight of the assumed
/// identity passed explicitly so tests can corrupt it.
fn verify_core(
    bs: &[FieldPolynomial],
    c: &Scalar,
    direction: Direction,
    assumed_lambda: &Scalar,
) -> Vec<(Scalar, TTerm)> {
    let n = bs.len();
    assert!(n >= 1, "empty entry tuple");
    let bs = disjoint_labels(bs);
    let mu = Idx(DIV_BASE);
    let mut fresh = DIV_BASE + 1;
    let (main, other, expand_lambda) = match direction {
        Direction::MwiToWi => (Family::That, Family::T, c.clone()),
        Direction::WiToMwi => (Family::T, Family::That, c.neg()),
    };
    let main_lambda = family_lambda(main, c);

    let lhs = product_atom(main, &bs, Some(mu));
    let lhs = expand_pairs(&lhs, main, other, &expand_lambda);
    let lhs = dy(&lhs, mu);
    let lhs = mwi_rewrite(&lhs, other, assumed_lambda, &mut fresh);

    let mut rhs: Vec<TTerm> = Vec::new();
    for l in 0..n {
        let th = bs[l].theta();
        if !th.is_zero() {
            let mut xs = bs.clone();
            xs[l] = th;
            for mut t in product_atom(main, &xs, None) {
                t.blocks = vec![vec![l as u8, Y_POINT]];
                rhs.push(t);
            }
        }
        let rho = Idx(fresh);
        fresh += 1;
        let thmu = bs[l].theta_mu(rho);
        if !thmu.is_zero() {
            let mut xs = bs.clone();
            xs[l] = thmu;
            for mut t in product_atom(main, &xs, None) {
                t.blocks = vec![vec![l as u8, Y_POINT]];
                t.mom = vec![(l as u8, rho)];
                t.coeff = t.coeff.mul(&main_lambda).neg();
                if t.coeff.is_zero() {
                    continue;
                }
                rhs.push(t);
            }
        }
    }
    let rhs = expand_pairs(&rhs, main, other, &expand_lambda);

    let mut total = lhs;
    for mut t in rhs {
        t.coeff = t.coeff.neg();
        total.push(t);
    }
    canonical_reduce(&total)
}

/// Verifies the divergence identity of one family given the identity of
/// the other, for the given entries and interpolation parameter. Both
/// sides are expanded into the assumed family and reduced canonically;
/// the report carries whatever fails to cancel.
pub fn verify_theorem(
    entries: &[FieldPolynomial],
    c: &Scalar,
    direction: Direction,
) -> TheoremReport {
    for b in entries {
        assert!(
            admissible(b, MembershipPolicy::Permissive),
            "entry is not a single-derivative charge eigenvector: {}",
            b
        );
    }
    let other = match direction {
        Direction::MwiToWi => Family::T,
        Direction::WiToMwi => Family::That,
    };
    let residual = verify_core(entries, c, direction, &family_lambda(other, c));
    TheoremReport { direction, n: entries.len(), residual }
}

/// The local obstruction to the divergence identity of the plain family:
/// minus the divergence of the extended product, plus the charge terms,
/// plus the gradient counterterms. For an identity-satisfying assignment
/// this sum vanishes; its general form is what the case solvers constrain.
pub fn anomaly_expression(
    entries: &[FieldPolynomial],
) -> Result<Vec<TTerm>, fields::FieldError> {
    assert!(!entries.is_empty(), "empty entry tuple");
    let bs = disjoint_labels(entries);
    let mu = Idx(DIV_BASE);
    let mut fresh = DIV_BASE + 1;
    let mut out = Vec::new();
    for mut t in dy(&product_atom(Family::T, &bs, Some(mu)), mu) {
        t.coeff = t.coeff.neg();
        out.push(t);
    }
    for (l, b) in bs.iter().enumerate() {
        let charge = b.charge_number()?;
        if charge != 0 {
            let mut xs = bs.clone();
            xs[l] = b.clone();
            for mut t in product_atom(Family::T, &xs, None) {
                t.blocks = vec![vec![l as u8, Y_POINT]];
                t.coeff = t.coeff.mul_int(charge);
                out.push(t);
            }
        }
        let rho = Idx(fresh);
        fresh += 1;
        let thmu = b.theta_mu(rho);
        if !thmu.is_zero() {
            let mut xs = bs.clone();
            xs[l] = thmu;
            for mut t in product_atom(Family::T, &xs, None) {
                t.blocks = vec![vec![l as u8, Y_POINT]];
                t.mom = vec![(l as u8, rho)];
                out.push(t);
            }
        }
    }
    Ok(out)
}

/// Relabels two points throughout a term: entry points, block members and
/// momentum factors. Block pivots are preserved because the distinguished
/// point never moves and momentum factors travel with their point.
fn swap_points(t: &TTerm, i: u8, j: u8) -> TTerm {
    let flip = |p: u8| {
        if p == i {
            j
        } else if p == j {
            i
        } else {
            p
        }
    };
    let mut out = t.clone();
    for e in &mut out.entries {
        e.point = flip(e.point);
    }
    out.entries.sort_by_key(|e| e.point);
    for b in &mut out.blocks {
        for p in b.iter_mut() {
            *p = flip(*p);
        }
        b.sort();
    }
    out.blocks.sort();
    for (p, _) in &mut out.mom {
        *p = flip(*p);
    }
    out.mom.sort();
    out
}

/// Exchanges the per-position free label ranges of two entry slots, so a
/// point relabeling keeps each entry paired with its own outer labels.
fn swap_slot_ranges(t: &TTerm, i: u8, j: u8) -> TTerm {
    let lo_i = 16 * i as u32;
    let lo_j = 16 * j as u32;
    let flip = |l: Idx| {
        if (lo_i..lo_i + 16).contains(&l.0) {
            Idx(l.0 - lo_i + lo_j)
        } else if (lo_j..lo_j + 16).contains(&l.0) {
            Idx(l.0 - lo_j + lo_i)
        } else {
            l
        }
    };
    let mut out = t.clone();
    for e in &mut out.entries {
        for b in &mut e.binds {
            *b = flip(*b);
        }
    }
    for (_, l) in &mut out.mom {
        *l = flip(*l);
    }
    if let Node::DivY(l) = out.node {
        out.node = Node::DivY(flip(l));
    }
    out
}

/// Checks that the assembled obstruction is invariant under exchanging two
/// entry positions, with the points and per-position label ranges mapped
/// back afterwards. The entries travel with their own labels, so this is
/// the paired point-and-index exchange, and the charge and gradient groups
/// must permute onto each other for the difference to cancel.
pub fn anomaly_exchange_symmetric(
    entries: &[FieldPolynomial],
    i: usize,
    j: usize,
) -> Result<bool, fields::FieldError> {
    let original = anomaly_expression(entries)?;
    let mut swapped_entries = entries.to_vec();
    swapped_entries.swap(i, j);
    let swapped = anomaly_expression(&swapped_entries)?;
    let mut total = original;
    for t in swapped {
        let mut t = swap_slot_ranges(&swap_points(&t, i as u8, j as u8), i as u8, j as u8);
        t.coeff = t.coeff.neg();
        total.push(t);
    }
    Ok(canonical_reduce(&total).is_empty())
}

/// Outcome of the vanishing and case analysis for an entry tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    CncZero,
    FtZero,
    Case1,
    Case2a,
    Case2b,
    Case2c,
    Case3,
    NotApplicable,
}

impl Classification {
    pub fn label(self) -> &'static str {
        match self {
            Classification::CncZero => "CNC-zero",
            Classification::FtZero => "FT-zero",
            Classification::Case1 => "case 1",
            Classification::Case2a => "case 2a",
            Classification::Case2b => "case 2b",
            Classification::Case2c => "case 2c",
            Classification::Case3 => "case 3",
            Classification::NotApplicable => "not-applicable",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Conjugation parity of a polynomial: +1 for even, -1 for odd, None when
/// it is not an eigenvector.
fn conjugation_parity(p: &FieldPolynomial) -> Option<i32> {
    let cc = p.charge_conjugate();
    if cc == *p {
        Some(1)
    } else if cc == p.neg() {
        Some(-1)
    } else {
        None
    }
}

/// A tuple's product vanishes by conjugation symmetry exactly when all
/// entries are parity eigenvectors and an odd number of them are odd.
fn conjugation_vanishes(tuple: &[&FieldPolynomial]) -> bool {
    let mut odd = 0;
    for p in tuple {
        match conjugation_parity(p) {
            Some(-1) => odd += 1,
            Some(_) => {}
            None => return false,
        }
    }
    odd % 2 == 1
}

/// Structural kinds an entry can match, for the case table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EntryKind {
    Interaction,
    Current,
    VectorScalarPair,
    ScalarPair,
    PhotonPair,
    PhotonPairPhi,
    PhotonPairPhiStar,
    PhotonGradPhi,
    PhotonGradPhiStar,
    Other,
}

fn classify_entry(b: &FieldPolynomial) -> EntryKind {
    let bn = normalize_free_labels(&b.without_tests());
    let d = Idx(9);
    let table: [(EntryKind, FieldPolynomial); 9] = [
        (EntryKind::Interaction, fields::lagrangian().without_tests()),
        (EntryKind::Current, fields::current(Idx(1))),
        (EntryKind::VectorScalarPair, fields::a_phistar_phi(Idx(1))),
        (EntryKind::ScalarPair, fields::phiphistar()),
        (EntryKind::PhotonPair, fields::a_squared()),
        (EntryKind::PhotonPairPhi, fields::a_squared().mul(&fields::phi())),
        (EntryKind::PhotonPairPhiStar, fields::a_squared().mul(&fields::phistar())),
        (EntryKind::PhotonGradPhi, fields::a_field(d).mul(&fields::dphi(d))),
        (EntryKind::PhotonGradPhiStar, fields::a_field(d).mul(&fields::dphistar(d))),
    ];
    for (kind, r) in &table {
        if proportional(&bn, &normalize_free_labels(r)) {
            return *kind;
        }
    }
    EntryKind::Other
}

/// Applies the two vanishing criteria and then the case table: first the
/// charge-sum rule, then conjugation symmetry of every group of the
/// obstruction, then structural matching of the non-interaction entries.
pub fn selection_rules(entries: &[FieldPolynomial]) -> Classification {
    assert!(!entries.is_empty(), "empty entry tuple");
    let charges: Option<Vec<i64>> =
        entries.iter().map(|b| b.charge_number().ok()).collect();
    if let Some(cs) = &charges {
        if cs.iter().sum::<i64>() != 0 {
            return Classification::CncZero;
        }
    }

    let top = entries.iter().map(|b| b.max_label()).max().unwrap_or(0) + 1;
    let refs: Vec<&FieldPolynomial> = entries.iter().collect();
    let j = fields::current(Idx(top));
    let mut with_j = refs.clone();
    with_j.push(&j);
    let divergence_group = conjugation_vanishes(&with_j);
    let charge_group = conjugation_vanishes(&refs)
        || charges.as_ref().map(|cs| cs.iter().all(|q| *q == 0)).unwrap_or(false);
    let gradient_group = entries.iter().enumerate().all(|(l, b)| {
        let thmu = b.theta_mu(Idx(top + 1 + l as u32));
        if thmu.is_zero() {
            return true;
        }
        let mut tuple = refs.clone();
        tuple[l] = &thmu;
        conjugation_vanishes(&tuple)
    });
    if divergence_group && charge_group && gradient_group {
        return Classification::FtZero;
    }

    let mut kinds: Vec<EntryKind> = entries
        .iter()
        .map(classify_entry)
        .filter(|k| *k != EntryKind::Interaction)
        .collect();
    kinds.sort();
    use EntryKind::*;
    match kinds.as_slice() {
        [Current] => Classification::Case1,
        [Current, Current, Current] => Classification::Case2a,
        [Current, VectorScalarPair, VectorScalarPair] => Classification::Case2b,
        [Current, Current, VectorScalarPair] => Classification::Case2c,
        [Current, ScalarPair] => Classification::Case3,
        [Current, PhotonPair] => Classification::Case3,
        [Current, PhotonPairPhi, PhotonPairPhiStar] => Classification::Case3,
        [Current, PhotonGradPhi, PhotonGradPhiStar] => Classification::Case3,
        [Current, PhotonPairPhi, PhotonGradPhiStar] => Classification::Case3,
        [Current, PhotonPairPhiStar, PhotonGradPhi] => Classification::Case3,
        _ => Classification::NotApplicable,
    }
}

/// One checked step of the conservation certificate.
#[derive(Debug, Clone)]
pub struct CertificateStep {
    pub name: &'static str,
    pub ok: bool,
    pub detail: String,
}

/// Derivation of the interacting conserved current from the variation of
/// the interaction, with its agreement check against the flow of the
/// product interpolation.
#[derive(Debug, Clone)]
pub struct CurrentCertificate {
    pub steps: Vec<CertificateStep>,
    /// The conserved combination, with the coupling switch on the
    /// compensating term.
    pub current: FieldPolynomial,
}

impl CurrentCertificate {
    pub fn ok(&self) -> bool {
        self.steps.iter().all(|s| s.ok)
    }
}

/// Appends test factors to every term of a polynomial.
fn smear(p: &FieldPolynomial, extra: &[TestFactor]) -> FieldPolynomial {
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

/// Derives the conserved interacting current: the local variation of the
/// interaction vanishes, the gradient variation is a pure vector-scalar
/// coupling, and absorbing it shifts the free current by exactly that
/// coupling. The shift agrees with the first-order flow of the product
/// interpolation at full interpolation weight.
pub fn current_conservation_certificate() -> CurrentCertificate {
    let (d0, d1) = unitary::derivations();
    let mu = Idx(5);
    let expected_gradient = smear(
        &fields::a_phistar_phi(mu),
        &[TestFactor::plain(TestBase::G), TestFactor::deriv(TestBase::Alpha, mu)],
    )
    .scale(&Scalar::from_int(-2).mul(&Scalar::i()).mul(&Scalar::sym(Sym::E)));
    let correction = smear(&fields::a_phistar_phi(mu), &[TestFactor::plain(TestBase::G)])
        .scale(&Scalar::sym(Sym::E).mul_int(2));
    let total = fields::current(mu).add(&correction);
    let shift = rengroup::interacting_current_shift(&RenMap::z(&Scalar::one()), mu);
    let steps = vec![
        CertificateStep {
            name: "local variation vanishes",
            ok: d0.is_zero(),
            detail: format!("{}", d0),
        },
        CertificateStep {
            name: "gradient variation is the vector-scalar coupling",
            ok: d1 == expected_gradient,
            detail: format!("{}", d1),
        },
        CertificateStep {
            name: "shift agrees with the interpolation flow",
            ok: smear(&total, &[TestFactor::plain(TestBase::Alpha)]) == shift,
            detail: format!("{}", total),
        },
    ];
    CurrentCertificate { steps, current: total }
}

impl fmt::Display for TTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let point_name = |p: u8| {
            if p == Y_POINT {
                "y".to_string()
            } else {
                format!("x{}", p)
            }
        };
        write!(f, "({})", self.coeff)?;
        if let Node::DivY(mu) = self.node {
            write!(f, " d_y[{}]", fields::index_name(mu))?;
        }
        write!(f, " {}(", self.family.name())?;
        for (k, e) in self.entries.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{} @ {}", denorm(e), point_name(e.point))?;
        }
        write!(f, ")")?;
        for b in &self.blocks {
            let names: Vec<String> = b.iter().map(|p| point_name(*p)).collect();
            write!(f, " delta{{{}}}", names.join(","))?;
        }
        for (p, l) in &self.mom {
            write!(f, " q[{},{}]", point_name(*p), fields::index_name(*l))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{a_phistar_phi, current, dphi, dphistar, lagrangian, phi, phiphistar};

    fn sym_c() -> Scalar {
        Scalar::sym(Sym::C)
    }

    #[test]
    fn partition_counts() {
        assert_eq!(part2_partitions(2), 2);
        assert_eq!(part2_partitions(3), 4);
        assert_eq!(part2_partitions(4), 10);
        assert_eq!(part2_partitions(5), 26);
        assert_eq!(pair_partitions_of(4).len(), 10);
    }

    #[test]
    fn expansion_structure_for_a_derivative_pair() {
        let atoms = product_atom(Family::That, &[dphi(Idx(1)), dphistar(Idx(2))], None);
        assert_eq!(atoms.len(), 1);
        let expanded = expand_that(&atoms, &sym_c());
        assert_eq!(expanded.len(), 2);
        let pair = expanded.iter().find(|t| !t.blocks.is_empty()).unwrap();
        assert_eq!(pair.coeff, Scalar::minus_i().mul(&sym_c()));
        assert_eq!(pair.blocks, vec![vec![0, 1]]);
        assert_eq!(pair.entries.len(), 1);
        let ident = expanded.iter().find(|t| t.blocks.is_empty()).unwrap();
        assert_eq!(ident.entries.len(), 2);
        assert_eq!(ident.family, Family::T);
    }

    #[test]
    fn reduction_cancels_relabeled_copies() {
        let atoms = product_atom(Family::T, &[current(Idx(1))], Some(Idx(DIV_BASE)));
        let mut total = atoms.clone();
        for mut t in product_atom(Family::T, &[current(Idx(1))], Some(Idx(DIV_BASE))) {
            t.coeff = t.coeff.neg();
            total.push(t);
        }
        assert!(canonical_reduce(&total).is_empty());
    }

    #[test]
    fn theorem_holds_at_order_one() {
        for b in [dphi(Idx(1)), dphistar(Idx(1)), current(Idx(1))] {
            for dir in [Direction::MwiToWi, Direction::WiToMwi] {
                let report = verify_theorem(std::slice::from_ref(&b), &sym_c(), dir);
                assert!(report.ok(), "residual for {}: \n{}", b, report);
            }
        }
    }

    #[test]
    fn theorem_holds_at_order_two() {
        let entries = [lagrangian(), current(Idx(1))];
        for dir in [Direction::MwiToWi, Direction::WiToMwi] {
            let report = verify_theorem(&entries, &sym_c(), dir);
            assert!(report.ok(), "residual:\n{}", report);
        }
    }

    #[test]
    fn corrupted_rewrite_weight_leaves_a_residual() {
        let entries = [dphi(Idx(1))];
        let residual = verify_core(
            &entries,
            &sym_c(),
            Direction::MwiToWi,
            &Scalar::from_int(-2),
        );
        assert!(!residual.is_empty());
    }

    #[test]
    fn selection_rules_match_the_case_table() {
        let j = current(Idx(1));
        let j2 = current(Idx(2));
        let j3 = current(Idx(3));
        let v = a_phistar_phi(Idx(1));
        let v2 = a_phistar_phi(Idx(2));
        assert_eq!(selection_rules(&[j.clone()]), Classification::Case1);
        assert_eq!(
            selection_rules(&[lagrangian(), lagrangian(), j.clone()]),
            Classification::Case1
        );
        assert_eq!(
            selection_rules(&[j.clone(), j2.clone(), j3.clone()]),
            Classification::Case2a
        );
        assert_eq!(
            selection_rules(&[v.clone(), v2.clone(), j.clone()]),
            Classification::Case2b
        );
        assert_eq!(
            selection_rules(&[v.clone(), j.clone(), j2.clone()]),
            Classification::Case2c
        );
        assert_eq!(
            selection_rules(&[phiphistar(), j.clone()]),
            Classification::Case3
        );
        assert_eq!(
            selection_rules(&[fields::a_squared(), j.clone()]),
            Classification::Case3
        );
        assert_eq!(
            selection_rules(&[
                fields::a_squared().mul(&phi()),
                fields::a_squared().mul(&fields::phistar()),
                j.clone()
            ]),
            Classification::Case3
        );
        assert_eq!(
            selection_rules(&[
                fields::a_field(Idx(9)).mul(&dphi(Idx(9))),
                fields::a_field(Idx(9)).mul(&dphistar(Idx(9))),
                j.clone()
            ]),
            Classification::Case3
        );
        assert_eq!(
            selection_rules(&[
                fields::a_squared().mul(&phi()),
                fields::a_field(Idx(9)).mul(&dphistar(Idx(9))),
                j.clone()
            ]),
            Classification::Case3
        );
        assert_eq!(
            selection_rules(&[
                fields::a_field(Idx(9)).mul(&dphi(Idx(9))),
                fields::a_squared().mul(&fields::phistar()),
                j.clone()
            ]),
            Classification::Case3
        );
    }

    #[test]
    fn selection_rules_vanishing_criteria() {
        let j = current(Idx(1));
        let j2 = current(Idx(2));
        assert_eq!(
            selection_rules(&[lagrangian(), j.clone(), j2.clone()]),
            Classification::FtZero
        );
        assert_eq!(
            selection_rules(&[lagrangian(), a_phistar_phi(Idx(1)), j.clone()]),
            Classification::FtZero
        );
        assert_eq!(selection_rules(&[phi(), j.clone()]), Classification::CncZero);
        assert_eq!(
            selection_rules(&[phiphistar(), phiphistar(), j.clone()]),
            Classification::NotApplicable
        );
    }

    #[test]
    fn anomaly_expression_structure_for_the_current() {
        let terms = anomaly_expression(&[current(Idx(1))]).unwrap();
        // Two divergence terms from the split current entry, no charge
        // terms, and one gradient term whose two pieces merge.
        assert_eq!(terms.len(), 3);
        assert!(terms.iter().all(|t| t.family == Family::T));
        let divergences =
            terms.iter().filter(|t| matches!(t.node, Node::DivY(_))).count();
        assert_eq!(divergences, 2);
    }

    #[test]
    fn certificate_closes() {
        let cert = current_conservation_certificate();
        assert!(cert.ok(), "{:?}", cert.steps);
    }
}
