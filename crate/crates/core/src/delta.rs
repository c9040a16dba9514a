//! Derivative polynomials acting on a total delta distribution.
//!
//! A distribution here is a derivative polynomial applied to the delta
//! pinning points x_1..x_n to y (or, without y, to the last x point).
//! Everything is stored in momentum form: the Fourier variable q_i is dual
//! to x_i - base, a derivative at x_i multiplies by q_i and a derivative at
//! y multiplies by minus the sum of all q_i. Constant i factors from the
//! transform are dropped throughout; the identities checked here are linear
//! so nothing is lost.

use crate::canon::Idx;
use crate::fields::{FieldError, FieldPolynomial};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Errors from distribution queries.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DeltaError {
    #[error("distribution is not a y-divergence: nonzero part survives integrating out y")]
    NotCoexact,
    #[error("scaling degree of the zero distribution is undefined")]
    ZeroDistribution,
}

/// One derivative monomial: indexed momentum factors and contracted pairs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "DTermSer", into = "DTermSer")]
pub struct DTerm {
    pub coeff: Scalar,
    /// Metric factors over free indices.
    pub mets: Vec<(Idx, Idx)>,
    /// Indexed momentum factors (momentum label, free index).
    pub mom: Vec<(u8, Idx)>,
    /// Contracted momentum pairs (a <= b) with multiplicities.
    pub dots: BTreeMap<(u8, u8), u32>,
}

#[derive(Serialize, Deserialize)]
struct DTermSer {
    coeff: Scalar,
    mets: Vec<(u32, u32)>,
    mom: Vec<(u8, u32)>,
    dots: Vec<(u8, u8, u32)>,
}

impl From<DTermSer> for DTerm {
    fn from(s: DTermSer) -> Self {
        DTerm {
            coeff: s.coeff,
            mets: s.mets.into_iter().map(|(a, b)| (Idx(a), Idx(b))).collect(),
            mom: s.mom.into_iter().map(|(p, i)| (p, Idx(i))).collect(),
            dots: s.dots.into_iter().map(|(a, b, w)| ((a, b), w)).collect(),
        }
    }
}

impl From<DTerm> for DTermSer {
    fn from(t: DTerm) -> Self {
        DTermSer {
            coeff: t.coeff,
            mets: t.mets.into_iter().map(|(a, b)| (a.0, b.0)).collect(),
            mom: t.mom.into_iter().map(|(p, i)| (p, i.0)).collect(),
            dots: t.dots.into_iter().map(|((a, b), w)| (a, b, w)).collect(),
        }
    }
}

impl DTerm {
    fn unit(coeff: Scalar) -> Self {
        DTerm { coeff, mets: vec![], mom: vec![], dots: BTreeMap::new() }
    }

    /// Momentum degree of the monomial.
    pub fn degree(&self) -> u32 {
        self.mom.len() as u32 + 2 * self.dots.values().sum::<u32>()
    }

    fn labels(&self) -> Vec<Idx> {
        let mut out = Vec::new();
        for (a, b) in &self.mets {
            out.push(*a);
            out.push(*b);
        }
        for (_, i) in &self.mom {
            out.push(*i);
        }
        out
    }

    fn free_labels(&self) -> Vec<Idx> {
        // After normalization every label occurs exactly once.
        let mut ls = self.labels();
        ls.sort();
        ls
    }

    fn body(&self) -> (Vec<(Idx, Idx)>, Vec<(u8, Idx)>, Vec<((u8, u8), u32)>) {
        (
            self.mets.clone(),
            self.mom.clone(),
            self.dots.iter().map(|(&k, &v)| (k, v)).collect(),
        )
    }
}

/// Resolves one contraction inside a term; false when none remains.
fn contract_step(t: &mut DTerm) -> bool {
    let mut occ: BTreeMap<Idx, Vec<(bool, usize)>> = BTreeMap::new();
    for (k, (a, b)) in t.mets.iter().enumerate() {
        occ.entry(*a).or_default().push((true, k));
        occ.entry(*b).or_default().push((true, k));
    }
    for (k, (_, i)) in t.mom.iter().enumerate() {
        occ.entry(*i).or_default().push((false, k));
    }
    for (label, places) in occ {
        match places.len() {
            1 => continue,
            2 => {}
            n => panic!("label {:?} occurs {} times in one distribution term", label, n),
        }
        let (p1, p2) = (places[0], places[1]);
        match (p1, p2) {
            ((true, k1), (true, k2)) if k1 == k2 => {
                // Trace of the metric.
                t.mets.remove(k1);
                t.coeff = t.coeff.mul_int(4);
                return true;
            }
            ((true, k1), (true, k2)) => {
                let other1 = other_slot(t.mets[k1], label);
                let other2 = other_slot(t.mets[k2], label);
                let (hi, lo) = if k1 > k2 { (k1, k2) } else { (k2, k1) };
                t.mets.remove(hi);
                t.mets.remove(lo);
                t.mets.push((other1, other2));
                return true;
            }
            ((true, km), (false, kp)) | ((false, kp), (true, km)) => {
                let other = other_slot(t.mets[km], label);
                t.mets.remove(km);
                t.mom[kp].1 = other;
                return true;
            }
            ((false, k1), (false, k2)) => {
                let (a, i1) = t.mom[k1];
                let (b, _) = t.mom[k2];
                let (hi, lo) = if k1 > k2 { (k1, k2) } else { (k2, k1) };
                let _ = i1;
                t.mom.remove(hi);
                t.mom.remove(lo);
                let key = if a <= b { (a, b) } else { (b, a) };
                *t.dots.entry(key).or_insert(0) += 1;
                return true;
            }
        }
    }
    false
}

fn other_slot(m: (Idx, Idx), label: Idx) -> Idx {
    if m.0 == label {
        m.1
    } else {
        m.0
    }
}

/// A distribution over x_1..x_n and optionally y, in normal form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaPoly {
    /// Number of x points.
    pub n: usize,
    /// Whether the y point is present.
    pub has_y: bool,
    terms: Vec<DTerm>,
}

impl DeltaPoly {
    /// Number of independent momentum labels.
    pub fn num_momenta(&self) -> usize {
        if self.has_y {
            self.n
        } else {
            self.n.saturating_sub(1)
        }
    }

    /// The plain delta with unit coefficient.
    pub fn delta(n: usize, has_y: bool) -> Self {
        assert!(n >= 1, "need at least one x point");
        DeltaPoly { n, has_y, terms: vec![DTerm::unit(Scalar::one())] }
    }

    pub fn zero(n: usize, has_y: bool) -> Self {
        DeltaPoly { n, has_y, terms: vec![] }
    }

    pub fn from_terms(n: usize, has_y: bool, terms: Vec<DTerm>) -> Self {
        let k = if has_y { n } else { n.saturating_sub(1) };
        for t in &terms {
            for (p, _) in &t.mom {
                assert!((*p as usize) < k, "momentum label out of range");
            }
            for (a, b) in t.dots.keys() {
                assert!((*a as usize) < k && (*b as usize) < k, "momentum label out of range");
                assert!(a <= b, "dot keys must be ordered");
            }
        }
        let mut canonical = Vec::new();
        for mut t in terms {
            if t.coeff.is_zero() {
                continue;
            }
            while contract_step(&mut t) {}
            t.mom.sort();
            let mut mets: Vec<(Idx, Idx)> = t
                .mets
                .iter()
                .map(|&(a, b)| if a <= b { (a, b) } else { (b, a) })
                .collect();
            mets.sort();
            t.mets = mets;
            canonical.push(t);
        }
        let mut merged: BTreeMap<_, Scalar> = BTreeMap::new();
        for t in canonical {
            let e = merged.entry(t.body()).or_insert_with(Scalar::zero);
            *e = e.add(&t.coeff);
        }
        let terms: Vec<DTerm> = merged
            .into_iter()
            .filter(|(_, c)| !c.is_zero())
            .map(|((mets, mom, dots), coeff)| DTerm {
                coeff,
                mets,
                mom,
                dots: dots.into_iter().collect(),
            })
            .collect();
        let out = DeltaPoly { n, has_y, terms };
        out.assert_well_typed();
        out
    }

    fn assert_well_typed(&self) {
        if let Some(first) = self.terms.first() {
            let free = first.free_labels();
            for t in &self.terms[1..] {
                assert_eq!(t.free_labels(), free, "free-index sets differ between terms");
            }
        }
    }

    pub fn terms(&self) -> &[DTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn free_indices(&self) -> Vec<Idx> {
        self.terms.first().map(|t| t.free_labels()).unwrap_or_default()
    }

    pub fn add(&self, o: &DeltaPoly) -> DeltaPoly {
        assert_eq!((self.n, self.has_y), (o.n, o.has_y), "point sets differ");
        let mut ts = self.terms.clone();
        ts.extend(o.terms.iter().cloned());
        DeltaPoly::from_terms(self.n, self.has_y, ts)
    }

    pub fn sub(&self, o: &DeltaPoly) -> DeltaPoly {
        self.add(&o.scale(&Scalar::from_int(-1)))
    }

    pub fn scale(&self, s: &Scalar) -> DeltaPoly {
        DeltaPoly::from_terms(
            self.n,
            self.has_y,
            self.terms
                .iter()
                .map(|t| DTerm { coeff: t.coeff.mul(s), ..t.clone() })
                .collect(),
        )
    }

    /// Multiplies by an explicit metric factor.
    pub fn mul_metric(&self, a: Idx, b: Idx) -> DeltaPoly {
        DeltaPoly::from_terms(
            self.n,
            self.has_y,
            self.terms
                .iter()
                .map(|t| {
                    let mut t = t.clone();
                    t.mets.push((a, b));
                    t
                })
                .collect(),
        )
    }

    fn mul_mom_label(&self, label: u8, idx: Idx, sign: i64) -> Vec<DTerm> {
        self.terms
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.mom.push((label, idx));
                t.coeff = t.coeff.mul_int(sign);
                t
            })
            .collect()
    }

    /// Derivative at x_i with index `idx`; contraction happens when `idx`
    /// is already present.
    pub fn deriv_x(&self, i: usize, idx: Idx) -> DeltaPoly {
        assert!(i < self.n, "point out of range");
        let terms = if self.has_y || i + 1 < self.n {
            self.mul_mom_label(i as u8, idx, 1)
        } else {
            // Base point of the y-free representation.
            let mut out = Vec::new();
            for b in 0..self.num_momenta() {
                out.extend(self.mul_mom_label(b as u8, idx, -1));
            }
            out
        };
        DeltaPoly::from_terms(self.n, self.has_y, terms)
    }

    /// Derivative at y with index `idx`.
    pub fn deriv_y(&self, idx: Idx) -> DeltaPoly {
        assert!(self.has_y, "no y point present");
        let mut out = Vec::new();
        for b in 0..self.n {
            out.extend(self.mul_mom_label(b as u8, idx, -1));
        }
        DeltaPoly::from_terms(self.n, self.has_y, out)
    }

    /// Contracted derivative at y over the free index `mu` of `self`.
    pub fn divergence_y(&self, mu: Idx) -> DeltaPoly {
        assert!(
            self.is_zero() || self.free_indices().contains(&mu),
            "divergence index must be free"
        );
        self.deriv_y(mu)
    }

    /// Linear substitution of momentum labels; each label maps to a signed
    /// combination of new labels.
    fn substitute(
        &self,
        new_n: usize,
        new_has_y: bool,
        map: &dyn Fn(u8) -> Vec<(i64, u8)>,
    ) -> DeltaPoly {
        let mut out: Vec<DTerm> = Vec::new();
        for t in &self.terms {
            // Expand factor by factor.
            let mut partial: Vec<DTerm> = vec![DTerm::unit(t.coeff.clone())];
            for &(p, idx) in &t.mom {
                let image = map(p);
                let mut next = Vec::new();
                for pt in &partial {
                    for &(c, np) in &image {
                        let mut nt = pt.clone();
                        nt.coeff = nt.coeff.mul_int(c);
                        nt.mom.push((np, idx));
                        next.push(nt);
                    }
                }
                partial = next;
            }
            for (&(a, b), &w) in &t.dots {
                for _ in 0..w {
                    let ia = map(a);
                    let ib = map(b);
                    let mut next = Vec::new();
                    for pt in &partial {
                        for &(ca, na) in &ia {
                            for &(cb, nb) in &ib {
                                let mut nt = pt.clone();
                                nt.coeff = nt.coeff.mul_int(ca * cb);
                                let key = if na <= nb { (na, nb) } else { (nb, na) };
                                *nt.dots.entry(key).or_insert(0) += 1;
                                next.push(nt);
                            }
                        }
                    }
                    partial = next;
                }
            }
            for mut pt in partial {
                pt.mets.extend(t.mets.iter().copied());
                out.push(pt);
            }
        }
        DeltaPoly::from_terms(new_n, new_has_y, out)
    }

    /// Integrates out the y point: the surviving distribution lives on the
    /// x points alone. Divergences in y integrate to zero.
    pub fn integrate_out_y(&self) -> DeltaPoly {
        assert!(self.has_y, "no y point present");
        let n = self.n;
        self.substitute(n, false, &|a| {
            if (a as usize) + 1 < n {
                vec![(1, a)]
            } else {
                (0..n - 1).map(|b| (-1i64, b as u8)).collect()
            }
        })
    }

    /// Solves d = d/dy_mu u^mu for u with the fresh free index `mu`.
    /// Fails exactly when integrating out y leaves something behind.
    pub fn poincare_solve(&self, mu: Idx) -> Result<DeltaPoly, DeltaError> {
        assert!(self.has_y, "no y point present");
        assert!(
            !self.free_indices().contains(&mu),
            "solution index must be fresh"
        );
        let n = self.n;
        let q_label = (n - 1) as u8;
        // Coordinates (k_1..k_{n-1}, Q) with Q the sum of all momenta; a
        // derivative at y is exactly -Q.
        let mixed = self.substitute(n, true, &|a| {
            if (a as usize) + 1 < n {
                vec![(1, a)]
            } else {
                let mut v: Vec<(i64, u8)> = vec![(1, q_label)];
                v.extend((0..n - 1).map(|b| (-1i64, b as u8)));
                v
            }
        });
        let mut u_terms: Vec<DTerm> = Vec::new();
        for t in mixed.terms() {
            let q_mom: Vec<usize> = t
                .mom
                .iter()
                .enumerate()
                .filter(|(_, (p, _))| *p == q_label)
                .map(|(k, _)| k)
                .collect();
            let q_dots: Vec<(u8, u8)> = t
                .dots
                .keys()
                .copied()
                .filter(|&(a, b)| a == q_label || b == q_label)
                .collect();
            if q_mom.is_empty() && q_dots.is_empty() {
                return Err(DeltaError::NotCoexact);
            }
            let mut nt = t.clone();
            nt.coeff = nt.coeff.mul_int(-1);
            if let Some(&k) = q_mom.first() {
                // Smallest slot: mom is kept sorted, Q entries are last, so
                // pick the first Q entry (smallest index label among them).
                let (_, rho) = nt.mom.remove(k);
                nt.mets.push((mu, rho));
            } else {
                let &key = q_dots
                    .iter()
                    .find(|&&(a, b)| !(a == q_label && b == q_label))
                    .unwrap_or(&(q_label, q_label));
                let w = nt.dots.get_mut(&key).expect("dot key present");
                *w -= 1;
                if *w == 0 {
                    nt.dots.remove(&key);
                }
                let partner = if key.0 == q_label { key.1 } else { key.0 };
                nt.mom.push((partner, mu));
            }
            u_terms.push(nt);
        }
        let u_mixed = DeltaPoly::from_terms(n, true, u_terms);
        // Back to the physical coordinates.
        Ok(u_mixed.substitute(n, true, &|a| {
            if (a as usize) + 1 < n {
                vec![(1, a)]
            } else {
                (0..n).map(|b| (1i64, b as u8)).collect()
            }
        }))
    }

    /// Applies one point permutation combined with a free-index renaming.
    /// `point_map[i]` gives the image of x_i; the image value `n` stands
    /// for y. The index map is a disjoint set of label swaps.
    pub fn permute(&self, point_map: &[usize], index_swaps: &[(Idx, Idx)]) -> DeltaPoly {
        assert!(self.has_y, "permutations involving y need the y point");
        assert_eq!(point_map.len(), self.n + 1, "map covers x points and y");
        let n = self.n;
        // Derivatives move with their point: q_i becomes the momentum of
        // the image point, and the derivative at an image y expands to
        // minus the sum of all momenta.
        let swapped = self.substitute(n, true, &|a| {
            let img = point_map[a as usize];
            if img < n {
                vec![(1, img as u8)]
            } else {
                (0..n).map(|b| (-1i64, b as u8)).collect()
            }
        });
        let renamed = swapped
            .terms
            .iter()
            .map(|t| {
                let mut t = t.clone();
                let map_idx = |i: Idx| -> Idx {
                    for &(a, b) in index_swaps {
                        if i == a {
                            return b;
                        }
                        if i == b {
                            return a;
                        }
                    }
                    i
                };
                for m in &mut t.mets {
                    m.0 = map_idx(m.0);
                    m.1 = map_idx(m.1);
                }
                for m in &mut t.mom {
                    m.1 = map_idx(m.1);
                }
                t
            })
            .collect();
        DeltaPoly::from_terms(n, true, renamed)
    }

    /// Group average over the closure of the given generators.
    pub fn symmetrize(&self, generators: &[(Vec<usize>, Vec<(Idx, Idx)>)]) -> DeltaPoly {
        let mut seen: Vec<DeltaPoly> = vec![self.clone()];
        let mut frontier: Vec<DeltaPoly> = vec![self.clone()];
        while let Some(cur) = frontier.pop() {
            for (pm, sw) in generators {
                let img = cur.permute(pm, sw);
                if !seen.contains(&img) {
                    seen.push(img.clone());
                    frontier.push(img);
                }
            }
        }
        let size = seen.len() as i64;
        let mut acc = DeltaPoly::zero(self.n, self.has_y);
        for p in &seen {
            acc = acc.add(p);
        }
        acc.scale(&Scalar::ratio(1, size))
    }

    /// Steinmann scaling degree with respect to the total diagonal.
    pub fn scaling_degree(&self) -> Result<i64, DeltaError> {
        if self.is_zero() {
            return Err(DeltaError::ZeroDistribution);
        }
        let diffs = self.num_momenta() as i64;
        let deg = self.terms.iter().map(|t| t.degree()).max().unwrap_or(0) as i64;
        Ok(4 * diffs + deg)
    }
}

/// Degree bound for the local obstruction on a tuple of the given mass
/// dimensions.
pub fn singular_order_dims(dims: &[i64]) -> i64 {
    dims.iter().sum::<i64>() + 4 - 4 * dims.len() as i64
}

/// Degree bound computed from field polynomials.
pub fn singular_order(bs: &[FieldPolynomial]) -> Result<i64, FieldError> {
    let mut dims = Vec::new();
    for b in bs {
        dims.push(b.mass_dimension()?);
    }
    Ok(singular_order_dims(&dims))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MU: Idx = Idx(1);
    const NU: Idx = Idx(2);

    #[test]
    fn contraction_resolution() {
        // q1.q1 via a repeated index.
        let d = DeltaPoly::delta(2, true).deriv_x(0, MU).deriv_x(0, MU);
        assert_eq!(d.terms().len(), 1);
        assert_eq!(d.terms()[0].dots.get(&(0, 0)), Some(&1));
        // Metric against a momentum slot.
        let d = DeltaPoly::delta(2, true).deriv_x(0, MU).mul_metric(MU, NU);
        assert_eq!(d.terms()[0].mom, vec![(0u8, NU)]);
        assert!(d.terms()[0].mets.is_empty());
    }

    #[test]
    fn scaling_degrees() {
        assert_eq!(DeltaPoly::delta(1, true).scaling_degree(), Ok(4));
        // Box at y on the two-point delta.
        let boxed = DeltaPoly::delta(2, true).deriv_y(MU).deriv_y(MU);
        assert_eq!(boxed.scaling_degree(), Ok(10));
        assert_eq!(
            DeltaPoly::zero(1, true).scaling_degree(),
            Err(DeltaError::ZeroDistribution)
        );
    }

    #[test]
    fn order_bounds() {
        assert_eq!(singular_order_dims(&[4, 4, 4, 3]), 3);
        assert_eq!(singular_order_dims(&[4, 3, 3, 3]), 1);
        assert_eq!(singular_order_dims(&[1, 1]), -2);
    }

    #[test]
    fn integrate_out_kills_divergences() {
        let u = DeltaPoly::delta(3, true).deriv_x(1, NU);
        let d = u.deriv_y(MU);
        assert!(!d.is_zero());
        assert!(d.integrate_out_y().is_zero());
        // A non-divergence survives.
        let s = DeltaPoly::delta(3, true).deriv_x(0, MU);
        assert!(!s.integrate_out_y().is_zero());
    }

    #[test]
    fn poincare_roundtrip_simple() {
        let d = DeltaPoly::delta(1, true).deriv_y(NU);
        let u = d.poincare_solve(MU).expect("coexact");
        assert_eq!(u.divergence_y(MU), d);
        // g^{mu nu} delta expected here.
        assert_eq!(u.terms().len(), 1);
        assert_eq!(u.terms()[0].mets, vec![(MU, NU)]);
        let bad = DeltaPoly::delta(2, true).deriv_x(0, NU);
        assert_eq!(bad.poincare_solve(MU), Err(DeltaError::NotCoexact));
    }

    #[test]
    fn swap_with_y_is_involutive() {
        let d = DeltaPoly::delta(2, true).deriv_x(1, NU).deriv_y(MU);
        // Swap x_2 and y, keep indices.
        let pm = vec![0usize, 2, 1];
        let once = d.permute(&pm, &[]);
        assert_ne!(once, d);
        assert_eq!(once.permute(&pm, &[]), d);
    }

    #[test]
    fn symmetrizer_projects() {
        let d = DeltaPoly::delta(2, true).deriv_x(0, MU);
        let gens = vec![(vec![1usize, 0, 2], vec![])];
        let s = d.symmetrize(&gens);
        assert_eq!(s.symmetrize(&gens), s);
        // Average of q1 and q2.
        assert_eq!(s.terms().len(), 2);
    }
}
