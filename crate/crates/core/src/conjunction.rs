//! Partial-conjunction p-values and the lower confidence bound on the number
//! of false hypotheses.
//!
//! `p^{u/n}` tests "fewer than `u` of the `n` nulls are false" by combining
//! the `n - u + 1` largest p-values. Testing `u = 1, 2, …` in order and
//! stopping at the first non-rejection gives `u_max`; the number of false
//! nulls lies in `[u_max, n]` with confidence `1 - α`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::combine::{Accumulator, CombineResult, Combiner, CombinerKind};
use crate::error::{Error, Result};
use crate::model::{Alpha, PValueVector};

/// `p^{1/n}, …, p^{n/n}` for one vector and combiner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjunctionCurve {
    pub values: Vec<f64>,
    /// Combiner statistic behind each value.
    pub statistics: Vec<f64>,
    pub combiner: CombinerKind,
    pub n: usize,
}

/// `[u_max, n]` at level `1 - α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBound {
    pub u_max: usize,
    pub alpha: f64,
    pub n: usize,
    pub interval: (usize, usize),
}

/// Running results over suffixes of the sorted p-values: element `u - 1`
/// combines `p_(u), …, p_(n)`, accumulated from `p_(n)` downwards.
fn suffix_results<C: Combiner + ?Sized>(v: &PValueVector, c: &C) -> Vec<CombineResult> {
    let sorted = v.sorted_p();
    let n = sorted.len();
    let mut out = vec![None; n];
    let mut acc = Accumulator::new();
    for u in (0..n).rev() {
        acc.push(c, sorted[u]);
        out[u] = acc.result(c);
    }
    out.into_iter().map(|r| r.expect("filled")).collect()
}

/// `p^{u/n}`: the combiner applied to the `n - u + 1` largest p-values.
pub fn pc_pvalue<C: Combiner + ?Sized>(v: &PValueVector, u: usize, c: &C) -> Result<f64> {
    let n = v.len();
    if u == 0 || u > n {
        return Err(Error::InvalidArgument(format!("u must lie in 1..={n}, got {u}")));
    }
    let sorted = v.sorted_p();
    let acc = sorted[u - 1..]
        .iter()
        .rev()
        .fold(Accumulator::new(), |acc, &p| acc.with(c, p));
    Ok(acc.result(c).expect("non-empty").value)
}

/// All partial-conjunction p-values in one pass over the sorted vector.
pub fn pc_curve<C: Combiner + ?Sized>(v: &PValueVector, c: &C) -> ConjunctionCurve {
    let results = suffix_results(v, c);
    ConjunctionCurve {
        values: results.iter().map(|r| r.value).collect(),
        statistics: results.iter().map(|r| r.statistic).collect(),
        combiner: c.kind(),
        n: v.len(),
    }
}

/// Longest prefix of the curve at or below `alpha`.
///
/// A later value `≤ α` after an exceedance does not extend the prefix.
pub fn lower_bound_umax(curve: &ConjunctionCurve, alpha: Alpha) -> ConfidenceBound {
    let u_max = curve
        .values
        .iter()
        .take_while(|&&p| p <= alpha.get())
        .count();
    ConfidenceBound {
        u_max,
        alpha: alpha.get(),
        n: curve.n,
        interval: (u_max, curve.n),
    }
}

/// One row of a [`BoundReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub u: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub rejected: bool,
}

/// Everything `bound` prints: curve, `u_max` and the interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub combiner: CombinerKind,
    pub alpha: f64,
    pub n: usize,
    pub u_max: usize,
    pub interval: (usize, usize),
    pub curve: Vec<f64>,
    pub rows: Vec<CurveRow>,
    /// Fisher and Stouffer are calibrated for independent p-values; this is
    /// recorded, not checked.
    pub independence_assumed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero_pvalue_ids: Vec<String>,
}

pub fn report_bound<C: Combiner + ?Sized>(v: &PValueVector, c: &C, alpha: Alpha) -> BoundReport {
    let curve = pc_curve(v, c);
    let bound = lower_bound_umax(&curve, alpha);
    let rows = curve
        .values
        .iter()
        .zip(&curve.statistics)
        .enumerate()
        .map(|(i, (&p, &s))| CurveRow {
            u: i + 1,
            statistic: s,
            p_value: p,
            rejected: p <= alpha.get(),
        })
        .collect();
    BoundReport {
        combiner: c.kind(),
        alpha: alpha.get(),
        n: v.len(),
        u_max: bound.u_max,
        interval: bound.interval,
        curve: curve.values,
        rows,
        independence_assumed: true,
        zero_pvalue_ids: v.zero_pvalue_ids().into_iter().map(str::to_owned).collect(),
    }
}

impl BoundReport {
    /// Human-readable table. Rows after the first non-rejection are marked
    /// so a later small p-value is not mistaken for part of the bound.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "combiner: {}   alpha: {}   n: {}",
            self.combiner, self.alpha, self.n
        );
        let _ = writeln!(out, "{:>6}  {:>14}  {:>14}  {:>9}", "u", "statistic", "p^{u/n}", "<= alpha");
        for row in &self.rows {
            let mark = if row.u <= self.u_max {
                "yes"
            } else if row.rejected {
                "(yes)"
            } else {
                "no"
            };
            let _ = writeln!(
                out,
                "{:>6}  {:>14.6e}  {:>14.6e}  {:>9}",
                row.u, row.statistic, row.p_value, mark
            );
        }
        let _ = writeln!(out, "u_max = {}", self.u_max);
        let _ = writeln!(
            out,
            "with {:.0}% confidence, between {} and {} of the {} hypotheses are false",
            (1.0 - self.alpha) * 100.0,
            self.interval.0,
            self.interval.1,
            self.n
        );
        if !self.zero_pvalue_ids.is_empty() {
            let _ = writeln!(out, "warning: p = 0 for {}", self.zero_pvalue_ids.join(", "));
        }
        out
    }
}
