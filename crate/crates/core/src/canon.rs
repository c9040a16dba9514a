//! Canonical relabeling of abstract index structures.
//!
//! A term is flattened into factors carrying a structural key and ordered
//! index slots. A label occurring once is free and keeps its name; a label
//! occurring twice is a contraction and is renamed canonically. The
//! canonical arrangement is the lexicographically smallest encoding over
//! the reorderings of equal-key factors and the slot permutations of
//! symmetric factors, found by a depth-first search that prunes against
//! the best image prefix and explores one representative of each class of
//! interchangeable siblings.

use std::cmp::Ordering;
use std::collections::HashMap;

/// An abstract index label. Occurs at most twice per term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Idx(pub u32);

/// Canonical contraction labels are assigned from this base in scan order.
/// Caller-chosen free labels should stay below it.
pub const DUMMY_BASE: u32 = 1_000_000;

/// One flattened factor of a term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatFactor {
    /// Structural identity; factors compare by key first.
    pub key: Vec<i64>,
    /// Index slots in factor order.
    pub slots: Vec<Idx>,
    /// Whether the slots are mutually interchangeable.
    pub symmetric: bool,
}

/// Splits the labels of a term into free (single occurrence) and
/// contracted (double occurrence) sets. Panics on higher multiplicity.
pub fn classify_labels(factors: &[FlatFactor]) -> (Vec<Idx>, Vec<Idx>) {
    let mut count: HashMap<Idx, u32> = HashMap::new();
    for f in factors {
        for s in &f.slots {
            *count.entry(*s).or_insert(0) += 1;
        }
    }
    let mut free = Vec::new();
    let mut dummy = Vec::new();
    for (l, c) in count {
        match c {
            1 => free.push(l),
            2 => dummy.push(l),
            n => panic!("label {:?} occurs {} times in one term", l, n),
        }
    }
    free.sort();
    dummy.sort();
    (free, dummy)
}

/// Hard ceiling on search nodes; sibling collapsing keeps realistic terms
/// far below it, so reaching it means a malformed flattening.
const NODE_BUDGET: usize = 500_000;

/// Result of canonicalization: the factor order, the slot permutation
/// applied to each factor (indexed by output position), and the renaming
/// of contracted labels.
#[derive(Debug, Clone)]
pub struct CanonResult {
    pub order: Vec<usize>,
    pub perms: Vec<Vec<usize>>,
    pub rename: HashMap<Idx, u32>,
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..k).collect();
    heap_perm(&mut items, k, &mut out);
    out.sort();
    out
}

fn heap_perm(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == 1 {
        out.push(items.clone());
        return;
    }
    for i in 0..k {
        heap_perm(items, k - 1, out);
        if k % 2 == 0 {
            items.swap(i, k - 1);
        } else {
            items.swap(0, k - 1);
        }
    }
}

struct Best {
    image: Vec<i64>,
    order: Vec<usize>,
    perms: Vec<Vec<usize>>,
    rename: HashMap<Idx, u32>,
}

/// One placement choice at a search node.
struct Cand {
    seg: Vec<i64>,
    fi: usize,
    pi: usize,
    fresh: Vec<Idx>,
}

struct Search<'a> {
    factors: &'a [FlatFactor],
    dummies: HashMap<Idx, ()>,
    base: Vec<usize>,
    runs: Vec<(usize, usize)>,
    run_of_pos: Vec<usize>,
    slot_perms: Vec<Vec<Vec<usize>>>,
    /// Factor indices containing each label, for partner lookups.
    occurrences: HashMap<Idx, Vec<usize>>,
    used: Vec<bool>,
    image: Vec<i64>,
    order: Vec<usize>,
    perms: Vec<Vec<usize>>,
    rename: HashMap<Idx, u32>,
    assigned: Vec<Idx>,
    next: u32,
    best: Option<Best>,
    nodes: usize,
}

impl Search<'_> {
    /// Encodes one factor under the current renaming without committing;
    /// also returns the labels that would receive fresh codes, in
    /// first-occurrence order.
    fn segment(&self, fi: usize, perm: &[usize]) -> (Vec<i64>, Vec<Idx>) {
        let f = &self.factors[fi];
        let mut seg = Vec::with_capacity(1 + f.key.len() + f.slots.len());
        seg.push(i64::MIN + 1);
        seg.extend_from_slice(&f.key);
        let mut fresh: Vec<Idx> = Vec::new();
        for &sp in perm {
            let label = f.slots[sp];
            let code = if self.dummies.contains_key(&label) {
                match self.rename.get(&label) {
                    Some(v) => *v,
                    None => match fresh.iter().position(|l| *l == label) {
                        Some(k) => self.next + k as u32,
                        None => {
                            fresh.push(label);
                            self.next + (fresh.len() - 1) as u32
                        }
                    },
                }
            } else {
                label.0
            };
            seg.push(code as i64);
        }
        (seg, fresh)
    }

    /// For a single-slot factor introducing one fresh contraction label,
    /// the partner factor's shape with the shared label masked. Two
    /// candidates with equal segments and equal signatures are related by
    /// a transposition of their fresh labels that fixes every other
    /// factor, so exploring one of them suffices.
    fn swap_signature(&self, fi: usize, fresh: &[Idx]) -> Option<(Vec<i64>, Vec<i64>, bool)> {
        if self.factors[fi].slots.len() != 1 || fresh.len() != 1 {
            return None;
        }
        let l = fresh[0];
        let partner = *self.occurrences.get(&l)?.iter().find(|&&j| j != fi)?;
        let p = &self.factors[partner];
        let masked: Vec<i64> =
            p.slots.iter().map(|s| if *s == l { i64::MIN } else { s.0 as i64 }).collect();
        Some((p.key.clone(), masked, p.symmetric))
    }

    fn dfs(&mut self, pos: usize) {
        self.nodes += 1;
        assert!(self.nodes <= NODE_BUDGET, "canonicalization search exceeds {NODE_BUDGET} nodes");
        if pos == self.factors.len() {
            let better = match &self.best {
                None => true,
                Some(b) => self.image < b.image,
            };
            if better {
                self.best = Some(Best {
                    image: self.image.clone(),
                    order: self.order.clone(),
                    perms: self.perms.clone(),
                    rename: self.rename.clone(),
                });
            }
            return;
        }
        let (rs, rl) = self.runs[self.run_of_pos[pos]];
        let mut cands: Vec<Cand> = Vec::new();
        let mut labels_seen: Vec<(Vec<i64>, Vec<Idx>)> = Vec::new();
        let mut sigs_seen: Vec<(Vec<i64>, (Vec<i64>, Vec<i64>, bool))> = Vec::new();
        for k in rs..rs + rl {
            let fi = self.base[k];
            if self.used[fi] {
                continue;
            }
            for (pi, perm) in self.slot_perms[fi].iter().enumerate() {
                let labels: Vec<Idx> = perm.iter().map(|&sp| self.factors[fi].slots[sp]).collect();
                let (seg, fresh) = self.segment(fi, perm);
                if labels_seen.iter().any(|(s, l)| *s == seg && *l == labels) {
                    continue;
                }
                if let Some(sig) = self.swap_signature(fi, &fresh) {
                    if sigs_seen.iter().any(|(s, g)| *s == seg && *g == sig) {
                        continue;
                    }
                    sigs_seen.push((seg.clone(), sig));
                }
                labels_seen.push((seg.clone(), labels));
                cands.push(Cand { seg, fi, pi, fresh });
            }
        }
        cands.sort_by(|a, b| a.seg.cmp(&b.seg));
        for c in cands {
            let cur = self.image.len();
            if let Some(b) = &self.best {
                let end = cur + c.seg.len();
                let cmp = self.image[..]
                    .cmp(&b.image[..cur])
                    .then_with(|| c.seg[..].cmp(&b.image[cur..end]));
                // Candidates come in ascending segment order, so the
                // first uncompetitive one ends the node.
                if cmp == Ordering::Greater {
                    break;
                }
            }
            self.order.push(c.fi);
            self.perms.push(self.slot_perms[c.fi][c.pi].clone());
            self.used[c.fi] = true;
            self.image.extend_from_slice(&c.seg);
            let assigned_before = self.assigned.len();
            for l in &c.fresh {
                self.rename.insert(*l, self.next);
                self.next += 1;
                self.assigned.push(*l);
            }
            self.dfs(pos + 1);
            while self.assigned.len() > assigned_before {
                let l = self.assigned.pop().expect("stacked label");
                self.rename.remove(&l);
                self.next -= 1;
            }
            self.image.truncate(cur);
            self.used[c.fi] = false;
            self.perms.pop();
            self.order.pop();
        }
    }
}

/// Finds the canonical arrangement of the factors.
pub fn canonicalize(factors: &[FlatFactor]) -> CanonResult {
    let (_, dummy) = classify_labels(factors);
    let dummies: HashMap<Idx, ()> = dummy.into_iter().map(|d| (d, ())).collect();
    let n = factors.len();
    let mut base: Vec<usize> = (0..n).collect();
    base.sort_by(|&a, &b| factors[a].key.cmp(&factors[b].key).then(a.cmp(&b)));
    // Runs of equal keys may be reordered freely; each output position
    // draws its factor from the unused members of its run.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut run_of_pos = vec![0usize; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && factors[base[end]].key == factors[base[start]].key {
            debug_assert_eq!(
                factors[base[end]].slots.len(),
                factors[base[start]].slots.len(),
                "equal keys imply equal arity"
            );
            end += 1;
        }
        for item in run_of_pos.iter_mut().take(end).skip(start) {
            *item = runs.len();
        }
        runs.push((start, end - start));
        start = end;
    }
    let slot_perms: Vec<Vec<Vec<usize>>> = factors
        .iter()
        .map(|f| {
            if f.symmetric && f.slots.len() > 1 {
                permutations(f.slots.len())
            } else {
                vec![(0..f.slots.len()).collect()]
            }
        })
        .collect();
    let mut occurrences: HashMap<Idx, Vec<usize>> = HashMap::new();
    for (i, f) in factors.iter().enumerate() {
        for s in &f.slots {
            occurrences.entry(*s).or_default().push(i);
        }
    }
    let mut search = Search {
        factors,
        dummies,
        base,
        runs,
        run_of_pos,
        slot_perms,
        occurrences,
        used: vec![false; n],
        image: Vec::new(),
        order: Vec::new(),
        perms: Vec::new(),
        rename: HashMap::new(),
        assigned: Vec::new(),
        next: DUMMY_BASE,
        best: None,
        nodes: 0,
    };
    search.dfs(0);
    let best = search.best.expect("at least one arrangement");
    CanonResult { order: best.order, perms: best.perms, rename: best.rename }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factor(key: i64, slots: Vec<u32>, symmetric: bool) -> FlatFactor {
        FlatFactor {
            key: vec![key],
            slots: slots.into_iter().map(Idx).collect(),
            symmetric,
        }
    }

    #[test]
    fn dummy_rename_is_scan_ordered() {
        let fs = vec![factor(0, vec![7, 9], false), factor(1, vec![9, 7], false)];
        let res = canonicalize(&fs);
        assert_eq!(res.rename[&Idx(7)], DUMMY_BASE);
        assert_eq!(res.rename[&Idx(9)], DUMMY_BASE + 1);
    }

    #[test]
    fn symmetric_slots_normalize() {
        let a = vec![factor(0, vec![3, 1], true)];
        let b = vec![factor(0, vec![1, 3], true)];
        let ra = canonicalize(&a);
        let rb = canonicalize(&b);
        let slots_a: Vec<Idx> = ra.perms[0].iter().map(|&p| a[0].slots[p]).collect();
        let slots_b: Vec<Idx> = rb.perms[0].iter().map(|&p| b[0].slots[p]).collect();
        assert_eq!(slots_a, slots_b);
    }

    #[test]
    fn three_symmetric_slots_normalize() {
        // All six orderings of a fully symmetric factor give one image.
        let mut images = Vec::new();
        for slots in [[4u32, 2, 6], [2, 6, 4], [6, 4, 2], [6, 2, 4], [4, 6, 2], [2, 4, 6]] {
            let fs = vec![factor(0, slots.to_vec(), true)];
            let r = canonicalize(&fs);
            let arranged: Vec<Idx> = r.perms[0].iter().map(|&p| fs[0].slots[p]).collect();
            images.push(arranged);
        }
        images.dedup();
        assert_eq!(images.len(), 1);
    }

    #[test]
    fn equal_key_factors_reorder() {
        // Two equal-key factors with crossed labels reach one canonical
        // form regardless of input order.
        let f1 = vec![factor(5, vec![11], false), factor(5, vec![4], false)];
        let f2 = vec![factor(5, vec![4], false), factor(5, vec![11], false)];
        let r1 = canonicalize(&f1);
        let r2 = canonicalize(&f2);
        let lab1: Vec<Idx> = r1.order.iter().map(|&i| f1[i].slots[0]).collect();
        let lab2: Vec<Idx> = r2.order.iter().map(|&i| f2[i].slots[0]).collect();
        assert_eq!(lab1, lab2);
    }

    #[test]
    fn long_runs_of_identical_contractions_stay_tractable() {
        // Four contracted pairs of one vector factor flatten to eight
        // equal-key factors; the naive variant space has size 8!.
        let mut fs = Vec::new();
        for pair in 1..=4u32 {
            fs.push(factor(3, vec![pair], false));
            fs.push(factor(3, vec![pair], false));
        }
        let r = canonicalize(&fs);
        let renamed: Vec<u32> = r.order.iter().map(|&i| r.rename[&fs[i].slots[0]]).collect();
        let want: Vec<u32> =
            (0..4).flat_map(|k| [DUMMY_BASE + k, DUMMY_BASE + k]).collect();
        assert_eq!(renamed, want);
    }

    #[test]
    fn cross_run_pairings_canonicalize_without_blowup() {
        // Six labels each pairing a factor of one key with a factor of
        // another; interchangeable siblings collapse the search.
        let mut fs = Vec::new();
        for k in 1..=6u32 {
            fs.push(factor(1, vec![k], false));
        }
        for k in 1..=6u32 {
            fs.push(factor(2, vec![k], false));
        }
        let r = canonicalize(&fs);
        let first: Vec<u32> = (0..6).map(|p| r.rename[&fs[r.order[p]].slots[0]]).collect();
        let second: Vec<u32> = (6..12).map(|p| r.rename[&fs[r.order[p]].slots[0]]).collect();
        let want: Vec<u32> = (0..6).map(|k| DUMMY_BASE + k).collect();
        assert_eq!(first, want);
        assert_eq!(second, want);
    }

    #[test]
    #[should_panic]
    fn triple_label_rejected() {
        let fs = vec![
            factor(0, vec![1], false),
            factor(1, vec![1], false),
            factor(2, vec![1], false),
        ];
        canonicalize(&fs);
    }
}
