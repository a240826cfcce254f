//! Validated p-value collections, analysis settings and selections.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::combine::CombinerKind;
use crate::error::{Error, Result};

/// Family assigned to hypotheses that carry no label.
pub const DEFAULT_FAMILY: &str = "_default";

/// One elementary hypothesis and its p-value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
}

impl Hypothesis {
    pub fn new(id: impl Into<String>, p: f64) -> Self {
        Hypothesis {
            id: id.into(),
            p,
            family: None,
        }
    }

    pub fn with_family(mut self, family: impl Into<String>) -> Self {
        self.family = Some(family.into());
        self
    }

    pub fn family_or_default(&self) -> &str {
        self.family.as_deref().unwrap_or(DEFAULT_FAMILY)
    }
}

/// A non-empty, validated collection of hypotheses in input order.
///
/// Input position is the canonical index; every other view (sorted order,
/// lattice bitmasks) is derived from it.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PValueVector {
    hypotheses: Vec<Hypothesis>,
    #[serde(skip)]
    sorted: Vec<usize>,
}

/// A row of [`PValueVector::sorted_view`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedHypothesis {
    /// 1-based rank in ascending p order.
    pub rank: usize,
    pub id: String,
    pub p: f64,
}

impl PValueVector {
    pub fn new(hypotheses: Vec<Hypothesis>) -> Result<Self> {
        Self::with_lines(hypotheses, None)
    }

    /// Like [`PValueVector::new`], with the source line of each row so
    /// validation errors can point at it.
    pub(crate) fn with_lines(hypotheses: Vec<Hypothesis>, lines: Option<&[u64]>) -> Result<Self> {
        if hypotheses.is_empty() {
            return Err(Error::validation("no hypotheses: at least one p-value is required"));
        }
        let line_of = |i: usize| lines.map(|l| l[i]);
        let mut seen = HashMap::with_capacity(hypotheses.len());
        for (i, h) in hypotheses.iter().enumerate() {
            if h.id.is_empty() {
                return Err(Error::Validation {
                    message: match line_of(i) {
                        Some(l) => format!("empty id at line {l}"),
                        None => format!("empty id at position {}", i + 1),
                    },
                    id: None,
                    line: line_of(i),
                });
            }
            if !(0.0..=1.0).contains(&h.p) {
                let at = line_of(i).map(|l| format!(" at line {l}")).unwrap_or_default();
                return Err(Error::for_id(
                    &h.id,
                    line_of(i),
                    format!("p-value for {} is outside [0, 1]: {}{at}", h.id, h.p),
                ));
            }
            if matches!(h.family.as_deref(), Some("")) {
                return Err(Error::for_id(&h.id, line_of(i), format!("empty family label for {}", h.id)));
            }
            if seen.insert(h.id.as_str(), i).is_some() {
                return Err(Error::for_id(&h.id, line_of(i), format!("duplicate id {}", h.id)));
            }
            if h.p == 0.0 {
                tracing::warn!(id = %h.id, "p-value is exactly 0; combiners treat it as a degenerate input");
            }
        }
        let mut sorted: Vec<usize> = (0..hypotheses.len()).collect();
        sorted.sort_by(|&a, &b| cmp_hypotheses(&hypotheses[a], &hypotheses[b]));
        Ok(PValueVector { hypotheses, sorted })
    }

    /// Convenience constructor with ids `h1..hn`.
    pub fn from_pvalues(ps: &[f64]) -> Result<Self> {
        Self::new(
            ps.iter()
                .enumerate()
                .map(|(i, &p)| Hypothesis::new(format!("h{}", i + 1), p))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn get(&self, index: usize) -> Option<&Hypothesis> {
        self.hypotheses.get(index)
    }

    pub fn p_values(&self) -> Vec<f64> {
        self.hypotheses.iter().map(|h| h.p).collect()
    }

    /// Input positions in ascending p order, ties broken by id.
    pub fn sorted_indices(&self) -> &[usize] {
        &self.sorted
    }

    /// p-values in ascending order.
    pub fn sorted_p(&self) -> Vec<f64> {
        self.sorted.iter().map(|&i| self.hypotheses[i].p).collect()
    }

    pub fn sorted_view(&self) -> Vec<RankedHypothesis> {
        self.sorted
            .iter()
            .enumerate()
            .map(|(r, &i)| RankedHypothesis {
                rank: r + 1,
                id: self.hypotheses[i].id.clone(),
                p: self.hypotheses[i].p,
            })
            .collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.hypotheses.iter().position(|h| h.id == id)
    }

    /// Ids whose p-value is exactly zero.
    pub fn zero_pvalue_ids(&self) -> Vec<&str> {
        self.hypotheses
            .iter()
            .filter(|h| h.p == 0.0)
            .map(|h| h.id.as_str())
            .collect()
    }

    /// Split into one vector per family label (unlabelled rows go to
    /// [`DEFAULT_FAMILY`]); order within each family follows input order.
    pub fn by_family(&self) -> BTreeMap<String, PValueVector> {
        let mut groups: BTreeMap<String, Vec<Hypothesis>> = BTreeMap::new();
        for h in &self.hypotheses {
            groups
                .entry(h.family_or_default().to_owned())
                .or_default()
                .push(h.clone());
        }
        groups
            .into_iter()
            .map(|(k, hs)| (k, PValueVector::new(hs).expect("subset of a valid vector")))
            .collect()
    }

    /// The hypotheses at the given input positions, as a new vector.
    pub fn subset(&self, indices: &[usize]) -> Result<PValueVector> {
        PValueVector::new(indices.iter().map(|&i| self.hypotheses[i].clone()).collect())
    }
}

impl<'de> Deserialize<'de> for PValueVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let hs = Vec::<Hypothesis>::deserialize(d)?;
        PValueVector::new(hs).map_err(serde::de::Error::custom)
    }
}

fn cmp_hypotheses(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    a.p.total_cmp(&b.p).then_with(|| a.id.cmp(&b.id))
}

/// Significance level, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Alpha(f64);

impl Alpha {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Alpha(alpha))
        } else {
            Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// Bonferroni share `alpha / k`.
    pub fn split(self, k: usize) -> Alpha {
        assert!(k >= 1);
        Alpha(self.0 / k as f64)
    }
}

impl TryFrom<f64> for Alpha {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Alpha::new(v)
    }
}

impl From<Alpha> for f64 {
    fn from(a: Alpha) -> f64 {
        a.0
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Level, local test and (for simulations) seed of one analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub alpha: Alpha,
    #[serde(rename = "combiner")]
    pub combiner: CombinerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl AnalysisConfig {
    pub fn new(alpha: f64, combiner: CombinerKind) -> Result<Self> {
        Ok(AnalysisConfig {
            alpha: Alpha::new(alpha)?,
            combiner,
            seed: None,
        })
    }
}

/// A non-empty set of hypotheses resolved against a [`PValueVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SelectionSet {
    /// Input positions, ascending.
    indices: Vec<usize>,
    ids: Vec<String>,
}

impl SelectionSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Ids in input order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn full(v: &PValueVector) -> Self {
        SelectionSet {
            indices: (0..v.len()).collect(),
            ids: v.hypotheses.iter().map(|h| h.id.clone()).collect(),
        }
    }

    pub(crate) fn from_indices(v: &PValueVector, mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        let ids = indices.iter().map(|&i| v.hypotheses[i].id.clone()).collect();
        SelectionSet { indices, ids }
    }
}

/// Resolve ids against `v`. Duplicates collapse; unknown ids are an error.
pub fn resolve_selection<I, S>(v: &PValueVector, ids: I) -> Result<SelectionSet>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut indices = BTreeSet::new();
    for id in ids {
        let id = id.as_ref();
        match v.index_of(id) {
            Some(i) => {
                indices.insert(i);
            }
            None => return Err(Error::UnknownId(id.to_owned())),
        }
    }
    if indices.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(SelectionSet::from_indices(v, indices.into_iter().collect()))
}
