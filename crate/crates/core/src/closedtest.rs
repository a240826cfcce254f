//! Exhaustive closed testing over all intersection hypotheses.
//!
//! An intersection `H_I` is rejected when its local test (the combiner over
//! the p-values in `I`) is at or below α and every `H_J` with `J ⊇ I` is
//! rejected too. From the rejection lattice, the lower bound for any
//! selected set `R` is `|R|` minus the size of the largest non-rejected
//! subset of `R`. All such bounds hold simultaneously, so `R` may be chosen
//! after looking at the data.
//!
//! Internally bit `j` of a subset mask is the hypothesis with the `j`-th
//! smallest p-value. Masks crossing the public surface (and the JSON form)
//! use input order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::combine::{Accumulator, Combiner, CombinerKind};
use crate::conjunction::{lower_bound_umax, pc_curve, ConfidenceBound};
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{Alpha, PValueVector, SelectionSet};

/// Largest `n` for which the full lattice is built.
pub const LATTICE_CAP: usize = 20;

/// Minimum masks per parallel work item.
const CHUNK: usize = 4096;

/// Closed-testing rejections for every non-empty subset of one vector.
#[derive(Debug, Clone)]
pub struct IntersectionLattice {
    n: usize,
    alpha: Alpha,
    combiner: CombinerKind,
    ids: Vec<String>,
    /// rank -> input position
    order: Vec<usize>,
    /// input position -> rank
    rank_of: Vec<usize>,
    /// Indexed by rank mask; entry 0 unused.
    local_p: Vec<f64>,
    rejected: Vec<bool>,
}

/// The combiner applied to the p-values in `subset`.
pub fn local_p<C: Combiner + ?Sized>(v: &PValueVector, subset: &SelectionSet, c: &C) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::EmptySelection);
    }
    let ps: Vec<f64> = subset
        .indices()
        .iter()
        .map(|&i| {
            v.get(i)
                .map(|h| h.p)
                .ok_or_else(|| Error::InvalidArgument(format!("index {i} outside the vector")))
        })
        .collect::<Result<_>>()?;
    Ok(c.combine(&ps)?.value)
}

pub fn build_lattice(v: &PValueVector, alpha: Alpha, c: CombinerKind) -> Result<IntersectionLattice> {
    let n = v.len();
    if n > LATTICE_CAP {
        return Err(Error::CapExceeded { n, cap: LATTICE_CAP });
    }
    let order = v.sorted_indices().to_vec();
    let mut rank_of = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        rank_of[i] = r;
    }
    let sorted_p = v.sorted_p();
    let size = 1usize << n;

    // Parent-minus-lowest-bit recurrence. Adding the lowest rank last means
    // every subset is accumulated from its largest p-value downwards.
    let mut acc = vec![Accumulator::new(); size];
    for mask in 1..size {
        let low = mask.trailing_zeros() as usize;
        acc[mask] = acc[mask & (mask - 1)].with(&c, sorted_p[low]);
    }
    let local_p: Vec<f64> = exec::map_range(size, CHUNK, |mask| match acc[mask].result(&c) {
        Some(r) => r.value,
        None => f64::NAN,
    });
    drop(acc);

    let mut levels: Vec<Vec<u32>> = vec![Vec::new(); n + 1];
    for mask in 1..size {
        levels[mask.count_ones() as usize].push(mask as u32);
    }
    let full = size - 1;
    let mut rejected = vec![false; size];
    for level in levels.iter().rev() {
        // Each level reads only the level above it.
        let decided = exec::map_slice(level, CHUNK, |&mask| {
            let mask = mask as usize;
            if local_p[mask] > alpha.get() {
                return false;
            }
            let mut missing = full & !mask;
            while missing != 0 {
                let bit = missing & missing.wrapping_neg();
                if !rejected[mask | bit] {
                    return false;
                }
                missing &= missing - 1;
            }
            true
        });
        for (&mask, r) in level.iter().zip(decided) {
            rejected[mask as usize] = r;
        }
    }

    Ok(IntersectionLattice {
        n,
        alpha,
        combiner: c,
        ids: v.hypotheses().iter().map(|h| h.id.clone()).collect(),
        order,
        rank_of,
        local_p,
        rejected,
    })
}

/// Lower bound on the number of false hypotheses inside a selected set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionBound {
    /// Selected ids, input order.
    pub selection: Vec<String>,
    pub size: usize,
    pub f_alpha: usize,
    /// A largest non-rejected subset of the selection, when one exists.
    pub witness: Option<Vec<String>>,
}

impl IntersectionLattice {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> Alpha {
        self.alpha
    }

    pub fn combiner(&self) -> CombinerKind {
        self.combiner
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn to_rank_mask(&self, input_mask: u64) -> usize {
        let mut m = 0usize;
        for i in 0..self.n {
            if input_mask >> i & 1 == 1 {
                m |= 1 << self.rank_of[i];
            }
        }
        m
    }

    fn to_input_mask(&self, rank_mask: usize) -> u64 {
        let mut m = 0u64;
        for r in 0..self.n {
            if rank_mask >> r & 1 == 1 {
                m |= 1 << self.order[r];
            }
        }
        m
    }

    fn check_mask(&self, input_mask: u64) -> Result<()> {
        if input_mask == 0 || input_mask >> self.n != 0 {
            Err(Error::InvalidArgument(format!(
                "subset mask {input_mask:#b} is not a non-empty subset of {} hypotheses",
                self.n
            )))
        } else {
            Ok(())
        }
    }

    /// Whether `H_I` is rejected, `I` given as a bitmask over input positions.
    pub fn is_rejected(&self, input_mask: u64) -> Result<bool> {
        self.check_mask(input_mask)?;
        Ok(self.rejected[self.to_rank_mask(input_mask)])
    }

    /// Local p-value of `H_I`, `I` as an input-order bitmask.
    pub fn local_p(&self, input_mask: u64) -> Result<f64> {
        self.check_mask(input_mask)?;
        Ok(self.local_p[self.to_rank_mask(input_mask)])
    }

    fn selection_mask(&self, r: &SelectionSet) -> Result<usize> {
        if r.is_empty() {
            return Err(Error::EmptySelection);
        }
        let mut mask = 0usize;
        for (&i, id) in r.indices().iter().zip(r.ids()) {
            if i >= self.n || self.ids[i] != *id {
                return Err(Error::UnknownId(id.clone()));
            }
            mask |= 1 << self.rank_of[i];
        }
        Ok(mask)
    }

    fn ids_of(&self, rank_mask: usize) -> Vec<String> {
        let mut idx: Vec<usize> = (0..self.n)
            .filter(|&r| rank_mask >> r & 1 == 1)
            .map(|r| self.order[r])
            .collect();
        idx.sort_unstable();
        idx.into_iter().map(|i| self.ids[i].clone()).collect()
    }

    fn bound_for_mask(&self, r_mask: usize) -> (usize, Option<usize>) {
        let size = r_mask.count_ones() as usize;
        if !self.rejected[r_mask] {
            return (0, Some(r_mask));
        }
        let mut best: Option<usize> = None;
        let mut best_len = 0;
        let mut s = (r_mask - 1) & r_mask;
        while s != 0 {
            let len = s.count_ones() as usize;
            if len > best_len && !self.rejected[s] {
                best = Some(s);
                best_len = len;
                if best_len + 1 == size {
                    break;
                }
            }
            s = (s - 1) & r_mask;
        }
        (size - best_len, best)
    }

    pub fn selection_bound(&self, r: &SelectionSet) -> Result<SelectionBound> {
        let mask = self.selection_mask(r)?;
        let (f_alpha, witness) = self.bound_for_mask(mask);
        Ok(SelectionBound {
            selection: r.ids().to_vec(),
            size: r.len(),
            f_alpha,
            witness: witness.map(|w| self.ids_of(w)),
        })
    }

    /// The bound for the full index set.
    pub fn full_set_bound(&self) -> usize {
        self.bound_for_mask((1usize << self.n) - 1).0
    }

    pub fn to_snapshot(&self) -> LatticeSnapshot {
        let entries = (1..self.local_p.len())
            .map(|rm| (rm, self.to_input_mask(rm)))
            .map(|(rm, im)| LatticeEntry(im, self.local_p[rm], self.rejected[rm]))
            .collect::<Vec<_>>();
        let mut entries = entries;
        entries.sort_by_key(|e| e.0);
        LatticeSnapshot {
            n: self.n,
            alpha: self.alpha,
            combiner: self.combiner,
            ids: self.ids.clone(),
            entries,
        }
    }

    /// Restore a lattice cached for `v`. The snapshot must list exactly
    /// `v`'s ids and satisfy the closure condition.
    pub fn from_snapshot(v: &PValueVector, snap: &LatticeSnapshot) -> Result<Self> {
        let n = v.len();
        let bad = |m: &str| Err(Error::validation(format!("invalid lattice snapshot: {m}")));
        if snap.n != n || n > LATTICE_CAP {
            return bad("size does not match the vector");
        }
        if snap.ids.iter().ne(v.hypotheses().iter().map(|h| &h.id)) {
            return bad("ids do not match the vector");
        }
        let size = 1usize << n;
        if snap.entries.len() != size - 1 {
            return bad("wrong number of entries");
        }
        let order = v.sorted_indices().to_vec();
        let mut rank_of = vec![0; n];
        for (r, &i) in order.iter().enumerate() {
            rank_of[i] = r;
        }
        let mut lattice = IntersectionLattice {
            n,
            alpha: snap.alpha,
            combiner: snap.combiner,
            ids: snap.ids.clone(),
            order,
            rank_of,
            local_p: vec![f64::NAN; size],
            rejected: vec![false; size],
        };
        let mut seen = vec![false; size];
        for &LatticeEntry(im, p, rej) in &snap.entries {
            if im == 0 || im >> n != 0 {
                return bad("mask out of range");
            }
            let rm = lattice.to_rank_mask(im);
            if std::mem::replace(&mut seen[rm], true) {
                return bad("duplicate mask");
            }
            lattice.local_p[rm] = p;
            lattice.rejected[rm] = rej;
        }
        if !lattice.closure_holds() {
            return bad("closure condition violated");
        }
        Ok(lattice)
    }

    /// Every rejected set has all of its one-larger supersets rejected and a
    /// local p-value at or below α.
    pub fn closure_holds(&self) -> bool {
        let full = (1usize << self.n) - 1;
        (1..=full).all(|mask| {
            !self.rejected[mask]
                || (self.local_p[mask] <= self.alpha.get()
                    && (0..self.n)
                        .filter(|&b| mask >> b & 1 == 0)
                        .all(|b| self.rejected[mask | 1 << b]))
        })
    }
}

/// JSON form of a lattice: one `[mask, local_p, rejected]` triple per
/// subset, mask bit `i` meaning the `i`-th hypothesis in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSnapshot {
    pub n: usize,
    pub alpha: Alpha,
    pub combiner: CombinerKind,
    pub ids: Vec<String>,
    pub entries: Vec<LatticeEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeEntry(pub u64, pub f64, pub bool);

pub fn selection_bound(lattice: &IntersectionLattice, r: &SelectionSet) -> Result<SelectionBound> {
    lattice.selection_bound(r)
}

pub fn full_set_bound(lattice: &IntersectionLattice) -> usize {
    lattice.full_set_bound()
}

/// Outcome of comparing the partial-conjunction bound with the exhaustive
/// closed-testing bound on the full set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceCheck {
    pub holds: bool,
    pub u_max: usize,
    pub closed_testing_bound: usize,
    /// The input, reported only when the two disagree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discrepancy: Option<Vec<f64>>,
}

pub fn check_shortcut_equivalence(v: &PValueVector, alpha: Alpha, c: CombinerKind) -> Result<EquivalenceCheck> {
    let lattice = build_lattice(v, alpha, c)?;
    let closed = lattice.full_set_bound();
    let u_max = lower_bound_umax(&pc_curve(v, &c), alpha).u_max;
    let holds = closed == u_max;
    if !holds {
        tracing::error!(u_max, closed, p = ?v.p_values(), "shortcut and closed-testing bounds disagree");
    }
    Ok(EquivalenceCheck {
        holds,
        u_max,
        closed_testing_bound: closed,
        discrepancy: (!holds).then(|| v.p_values()),
    })
}

/// Multiple-family correction. Only Bonferroni is offered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FamilyCorrection {
    #[default]
    Bonferroni,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyBound {
    pub bound: ConfidenceBound,
    /// Whether post-hoc selection queries are possible for this family
    /// (a lattice can be built at `per_family_alpha`).
    pub selection_available: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiFamilyReport {
    pub correction: FamilyCorrection,
    pub alpha: f64,
    pub per_family_alpha: f64,
    pub families: BTreeMap<String, FamilyBound>,
    /// Families with `u_max ≥ 1`: a lower bound on the number of families
    /// containing at least one false hypothesis.
    pub families_with_false_hypotheses: usize,
}

/// Analyse each family at `α / K`.
pub fn multifamily_bounds(
    families: &BTreeMap<String, PValueVector>,
    alpha: Alpha,
    c: CombinerKind,
    correction: FamilyCorrection,
) -> Result<MultiFamilyReport> {
    if families.is_empty() {
        return Err(Error::InvalidArgument("no families given".into()));
    }
    let FamilyCorrection::Bonferroni = correction;
    let level = alpha.split(families.len());
    let out: BTreeMap<String, FamilyBound> = families
        .iter()
        .map(|(name, v)| {
            let bound = lower_bound_umax(&pc_curve(v, &c), level);
            (
                name.clone(),
                FamilyBound {
                    bound,
                    selection_available: v.len() <= LATTICE_CAP,
                },
            )
        })
        .collect();
    let hits = out.values().filter(|f| f.bound.u_max >= 1).count();
    Ok(MultiFamilyReport {
        correction,
        alpha: alpha.get(),
        per_family_alpha: level.get(),
        families: out,
        families_with_false_hypotheses: hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combine::Fisher;
    use crate::model::resolve_selection;

    fn alpha(a: f64) -> Alpha {
        Alpha::new(a).unwrap()
    }

    fn lattice(ps: &[f64], a: f64) -> (PValueVector, IntersectionLattice) {
        let v = PValueVector::from_pvalues(ps).unwrap();
        let l = build_lattice(&v, alpha(a), CombinerKind::Fisher).unwrap();
        (v, l)
    }

    #[test]
    fn local_p_examples() {
        let v = PValueVector::from_pvalues(&[0.3, 1.0, 1.0, 0.2, 0.8]).unwrap();
        let s = |ids: &[&str]| resolve_selection(&v, ids).unwrap();
        assert_eq!(local_p(&v, &s(&["h1"]), &Fisher).unwrap(), 0.3);
        assert_eq!(local_p(&v, &s(&["h2", "h3"]), &Fisher).unwrap(), 1.0);
        let p = local_p(&v, &s(&["h4", "h5"]), &Fisher).unwrap();
        assert!((p - 0.453_213_034_199_729_6).abs() < 1e-14);
    }

    #[test]
    fn lattice_examples() {
        let (_, l) = lattice(&[1e-6, 1e-6], 0.05);
        assert!((1..4).all(|m| l.is_rejected(m).unwrap()));
        let (_, l) = lattice(&[0.9], 0.05);
        assert!(!l.is_rejected(1).unwrap());
        let (_, l) = lattice(&[0.9, 0.9, 0.9], 0.05);
        assert!((1..8).all(|m| !l.is_rejected(m).unwrap()));
        assert!((l.local_p(7).unwrap() - 0.995_839_747_654_556_4).abs() < 1e-14);
    }

    #[test]
    fn cap_enforced() {
        let v = PValueVector::from_pvalues(&[0.5; LATTICE_CAP + 1]).unwrap();
        assert!(matches!(
            build_lattice(&v, alpha(0.05), CombinerKind::Fisher),
            Err(Error::CapExceeded { n: 21, cap: 20 })
        ));
    }

    #[test]
    fn selection_examples() {
        let (v, l) = lattice(&[1e-6, 1e-6], 0.05);
        let b = l.selection_bound(&SelectionSet::full(&v)).unwrap();
        assert_eq!((b.f_alpha, b.witness), (2, None));

        let (v, l) = lattice(&[0.9, 0.7, 0.8], 0.05);
        let r = resolve_selection(&v, ["h1", "h3"]).unwrap();
        let b = l.selection_bound(&r).unwrap();
        assert_eq!(b.f_alpha, 0);
        assert_eq!(b.witness.unwrap(), vec!["h1", "h3"]);

        let (v, l) = lattice(&[1e-6, 0.5, 0.6], 0.05);
        let r = resolve_selection(&v, ["h2", "h3"]).unwrap();
        assert_eq!(l.selection_bound(&r).unwrap().f_alpha, 0);
        let r = resolve_selection(&v, ["h1"]).unwrap();
        assert_eq!(l.selection_bound(&r).unwrap().f_alpha, 1);
        let b = l.selection_bound(&SelectionSet::full(&v)).unwrap();
        assert_eq!(b.f_alpha, 1);
        assert_eq!(b.witness.unwrap(), vec!["h2", "h3"]);
    }

    #[test]
    fn foreign_selection_rejected() {
        let (_, l) = lattice(&[0.1, 0.2], 0.05);
        let other = PValueVector::from_pvalues(&[0.1, 0.2, 0.3]).unwrap();
        let r = resolve_selection(&other, ["h3"]).unwrap();
        assert!(matches!(l.selection_bound(&r), Err(Error::UnknownId(_))));
    }

    #[test]
    fn full_set_examples() {
        assert_eq!(lattice(&[1.0, 1.0], 0.05).1.full_set_bound(), 0);
        assert_eq!(lattice(&[1e-6; 3], 0.05).1.full_set_bound(), 3);
        assert_eq!(lattice(&[0.01, 0.2, 0.8], 0.05).1.full_set_bound(), 1);
    }

    #[test]
    fn equivalence_examples() {
        for ps in [&[0.01, 0.2, 0.8][..], &[1.0, 1.0, 1.0]] {
            let v = PValueVector::from_pvalues(ps).unwrap();
            let e = check_shortcut_equivalence(&v, alpha(0.05), CombinerKind::Fisher).unwrap();
            assert!(e.holds, "{e:?}");
            assert!(e.discrepancy.is_none());
        }
    }

    #[test]
    fn equivalence_at_exact_alpha() {
        // Ties at the threshold must resolve identically on both routes.
        for ps in [[0.05, 0.05, 0.5], [0.05, 0.01, 0.02]] {
            let v = PValueVector::from_pvalues(&ps).unwrap();
            for c in CombinerKind::ALL {
                assert!(check_shortcut_equivalence(&v, alpha(0.05), c).unwrap().holds);
            }
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let (v, l) = lattice(&[0.001, 0.04, 0.3, 0.02], 0.05);
        let snap = l.to_snapshot();
        let json = serde_json::to_string(&snap).unwrap();
        let back: LatticeSnapshot = serde_json::from_str(&json).unwrap();
        let restored = IntersectionLattice::from_snapshot(&v, &back).unwrap();
        for m in 1..16u64 {
            assert_eq!(restored.is_rejected(m).unwrap(), l.is_rejected(m).unwrap());
            assert_eq!(restored.local_p(m).unwrap(), l.local_p(m).unwrap());
        }
        let mut broken = back.clone();
        let last = broken.entries.len() - 1;
        broken.entries[last].2 = false; // full set no longer rejected
        let any_rejected = broken.entries.iter().any(|e| e.2);
        if any_rejected {
            assert!(IntersectionLattice::from_snapshot(&v, &broken).is_err());
        }
        let other = PValueVector::from_pvalues(&[0.5, 0.5, 0.5, 0.5]).unwrap();
        let renamed = PValueVector::new(
            other.hypotheses().iter().map(|h| crate::model::Hypothesis::new(format!("x{}", h.id), h.p)).collect(),
        )
        .unwrap();
        assert!(IntersectionLattice::from_snapshot(&renamed, &back).is_err());
    }

    #[test]
    fn multifamily_examples() {
        let mut fams = BTreeMap::new();
        fams.insert("A".to_string(), PValueVector::from_pvalues(&[1e-6, 1e-6]).unwrap());
        let single = multifamily_bounds(&fams, alpha(0.05), CombinerKind::Fisher, FamilyCorrection::Bonferroni).unwrap();
        assert_eq!(single.per_family_alpha, 0.05);
        assert_eq!(single.families["A"].bound.u_max, 2);

        fams.insert("B".to_string(), PValueVector::from_pvalues(&[0.04]).unwrap());
        let r = multifamily_bounds(&fams, alpha(0.05), CombinerKind::Fisher, FamilyCorrection::Bonferroni).unwrap();
        assert_eq!(r.per_family_alpha, 0.025);
        assert_eq!(r.families["A"].bound.u_max, 2);
        assert_eq!(r.families["B"].bound.u_max, 0);
        assert_eq!(r.families_with_false_hypotheses, 1);

        let mut nulls = BTreeMap::new();
        nulls.insert("A".to_string(), PValueVector::from_pvalues(&[1.0]).unwrap());
        nulls.insert("B".to_string(), PValueVector::from_pvalues(&[1.0, 1.0]).unwrap());
        let r = multifamily_bounds(&nulls, alpha(0.05), CombinerKind::Fisher, FamilyCorrection::Bonferroni).unwrap();
        assert!(r.families.values().all(|f| f.bound.u_max == 0));

        assert!(multifamily_bounds(&BTreeMap::new(), alpha(0.05), CombinerKind::Fisher, FamilyCorrection::Bonferroni).is_err());
    }
}
