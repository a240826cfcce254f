//! Monte Carlo checks of bound coverage, and random data splitting.
//!
//! Replication `r` of a scenario draws from its own ChaCha8 stream
//! (`seed`, stream `r`), so results do not depend on how replications are
//! scheduled across threads.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::closedtest::{build_lattice, LATTICE_CAP};
use crate::combine::{normal_sf, CombinerKind};
use crate::conjunction::{lower_bound_umax, pc_curve};
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{Alpha, PValueVector, SelectionSet};

/// Truth configuration for a coverage simulation.
///
/// The first `k_false` hypotheses are false: their p-values are `Φ̄(Z + μ)`
/// with `Z ~ N(0, 1)`. The rest are true nulls with uniform p-values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub n: usize,
    pub k_false: usize,
    #[serde(default)]
    pub effect: f64,
    pub alpha: Alpha,
    #[serde(default = "default_combiner")]
    pub combiner: CombinerKind,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_combiner() -> CombinerKind {
    CombinerKind::Fisher
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        if self.k_false > self.n {
            return Err(Error::InvalidArgument(format!(
                "k_false = {} exceeds n = {}",
                self.k_false, self.n
            )));
        }
        if !(self.effect >= 0.0 && self.effect.is_finite()) {
            return Err(Error::InvalidArgument(format!("effect must be finite and >= 0, got {}", self.effect)));
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be at least 1".into()));
        }
        Ok(())
    }

    /// p-values of replication `rep`.
    pub fn draw(&self, rep: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep);
        (0..self.n)
            .map(|i| {
                if i < self.k_false {
                    let z: f64 = rng.sample(StandardNormal);
                    normal_sf(z + self.effect)
                } else {
                    // (0, 1]
                    1.0 - rng.random::<f64>()
                }
            })
            .collect()
    }
}

/// Empirical coverage of one bound over a scenario's replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub replications: usize,
    /// Replications where the bound did not exceed the true count.
    pub covered: usize,
    pub empirical_coverage: f64,
    /// Mean of the bound (`u_max` for the curve, `f_α(R)` for selections).
    pub mean_umax: f64,
    pub alpha: f64,
    pub monte_carlo_se: f64,
}

impl CoverageReport {
    fn from_counts(replications: usize, covered: usize, bound_sum: u64, alpha: Alpha) -> Self {
        let c = covered as f64 / replications as f64;
        CoverageReport {
            replications,
            covered,
            empirical_coverage: c,
            mean_umax: bound_sum as f64 / replications as f64,
            alpha: alpha.get(),
            monte_carlo_se: (c * (1.0 - c) / replications as f64).sqrt(),
        }
    }

    /// `1 - α - 3·SE`, with SE taken at the nominal coverage.
    pub fn nominal_floor(&self) -> f64 {
        let a = self.alpha;
        1.0 - a - 3.0 * (a * (1.0 - a) / self.replications as f64).sqrt()
    }

    pub fn meets_nominal(&self) -> bool {
        self.empirical_coverage >= self.nominal_floor()
    }
}

/// Result of [`simulate_coverage`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: ScenarioSpec,
    pub coverage: CoverageReport,
}

fn tally(results: &[(bool, usize)], alpha: Alpha) -> CoverageReport {
    let covered = results.iter().filter(|r| r.0).count();
    let sum = results.iter().map(|r| r.1 as u64).sum();
    CoverageReport::from_counts(results.len(), covered, sum, alpha)
}

/// Coverage of `[u_max, n]` for the true number of false hypotheses.
pub fn simulate_coverage(spec: &ScenarioSpec) -> Result<ScenarioReport> {
    spec.validate()?;
    let results = exec::map_range(spec.replications, 64, |rep| {
        let ps = spec.draw(rep as u64);
        let v = PValueVector::from_pvalues(&ps).expect("draws are valid p-values");
        let u_max = lower_bound_umax(&pc_curve(&v, &spec.combiner), spec.alpha).u_max;
        (u_max <= spec.k_false, u_max)
    });
    Ok(ScenarioReport {
        scenario: spec.clone(),
        coverage: tally(&results, spec.alpha),
    })
}

/// How the post-hoc set `R` is chosen from the realised p-values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SelectionRule {
    FullSet,
    /// The `size` hypotheses with the smallest p-values.
    SmallestP { size: usize },
}

impl SelectionRule {
    fn select(&self, v: &PValueVector) -> Result<SelectionSet> {
        match *self {
            SelectionRule::FullSet => Ok(SelectionSet::full(v)),
            SelectionRule::SmallestP { size } => {
                if size == 0 || size > v.len() {
                    return Err(Error::InvalidArgument(format!(
                        "selection size must lie in 1..={}, got {size}",
                        v.len()
                    )));
                }
                Ok(SelectionSet::from_indices(v, v.sorted_indices()[..size].to_vec()))
            }
        }
    }
}

/// Coverage for a data-dependent selection, against the number of false
/// hypotheses inside the realised `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCoverageReport {
    pub scenario: ScenarioSpec,
    pub rule: SelectionRule,
    /// `f_α(R)` from the closed-testing lattice.
    pub lattice: CoverageReport,
    /// `u_max` of the sub-vector `R` as if `R` had been fixed in advance.
    pub naive: CoverageReport,
}

pub fn simulate_selection_coverage(spec: &ScenarioSpec, rule: SelectionRule) -> Result<SelectionCoverageReport> {
    spec.validate()?;
    if spec.n > LATTICE_CAP {
        return Err(Error::CapExceeded {
            n: spec.n,
            cap: LATTICE_CAP,
        });
    }
    if let SelectionRule::SmallestP { size } = rule {
        if size == 0 || size > spec.n {
            return Err(Error::InvalidArgument(format!("selection size must lie in 1..={}, got {size}", spec.n)));
        }
    }
    let results = exec::map_range(spec.replications, 16, |rep| -> Result<_> {
        let ps = spec.draw(rep as u64);
        let v = PValueVector::from_pvalues(&ps)?;
        let r = rule.select(&v)?;
        let false_in_r = r.indices().iter().filter(|&&i| i < spec.k_false).count();
        let lattice = build_lattice(&v, spec.alpha, spec.combiner)?;
        let f = lattice.selection_bound(&r)?.f_alpha;
        let sub = v.subset(r.indices())?;
        let naive = lower_bound_umax(&pc_curve(&sub, &spec.combiner), spec.alpha).u_max;
        Ok(((f <= false_in_r, f), (naive <= false_in_r, naive)))
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let (lat, naive): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(SelectionCoverageReport {
        scenario: spec.clone(),
        rule,
        lattice: tally(&lat, spec.alpha),
        naive: tally(&naive, spec.alpha),
    })
}

/// Disjoint exploration / confirmation partition of record ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// Input order preserved within each side.
    pub exploration_ids: Vec<String>,
    pub confirmation_ids: Vec<String>,
    pub exploration_fraction: f64,
    pub seed: u64,
}

/// Set aside `round(fraction · N)` records, drawn uniformly without
/// replacement, for exploration.
pub fn split_dataset<S: AsRef<str>>(ids: &[S], fraction: f64, seed: u64) -> Result<SplitPlan> {
    let n = ids.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 ids to split, got {n}")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("fraction must lie in (0, 1), got {fraction}")));
    }
    let k = (fraction * n as f64).round() as usize;
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} of {n} ids leaves one side empty"
        )));
    }
    let mut seen = HashSet::with_capacity(n);
    for id in ids {
        if !seen.insert(id.as_ref()) {
            return Err(Error::validation(format!("duplicate id {}", id.as_ref())));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut explore = vec![false; n];
    for &i in &order[..k] {
        explore[i] = true;
    }
    let (mut exploration_ids, mut confirmation_ids) = (Vec::with_capacity(k), Vec::with_capacity(n - k));
    for (i, id) in ids.iter().enumerate() {
        let id = id.as_ref().to_owned();
        if explore[i] {
            exploration_ids.push(id);
        } else {
            confirmation_ids.push(id);
        }
    }
    Ok(SplitPlan {
        exploration_ids,
        confirmation_ids,
        exploration_fraction: fraction,
        seed,
    })
}

impl ScenarioReport {
    pub fn to_table(&self) -> String {
        let s = &self.scenario;
        let c = &self.coverage;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "n={} k_false={} effect={} alpha={} combiner={} reps={} seed={}",
            s.n, s.k_false, s.effect, s.alpha, s.combiner, s.replications, s.seed
        );
        let _ = writeln!(out, "{:<10} {:>10} {:>10} {:>10} {:>10}", "bound", "coverage", "se", "floor", "mean");
        let _ = writeln!(
            out,
            "{:<10} {:>10.4} {:>10.4} {:>10.4} {:>10.3}",
            "u_max",
            c.empirical_coverage,
            c.monte_carlo_se,
            c.nominal_floor(),
            c.mean_umax
        );
        out
    }
}

impl SelectionCoverageReport {
    pub fn to_table(&self) -> String {
        let s = &self.scenario;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "n={} k_false={} effect={} alpha={} combiner={} reps={} seed={} rule={:?}",
            s.n, s.k_false, s.effect, s.alpha, s.combiner, s.replications, s.seed, self.rule
        );
        let _ = writeln!(out, "{:<10} {:>10} {:>10} {:>10} {:>10}", "bound", "coverage", "se", "floor", "mean");
        for (name, c) in [("lattice", &self.lattice), ("naive", &self.naive)] {
            let _ = writeln!(
                out,
                "{:<10} {:>10.4} {:>10.4} {:>10.4} {:>10.3}",
                name,
                c.empirical_coverage,
                c.monte_carlo_se,
                c.nominal_floor(),
                c.mean_umax
            );
        }
        out
    }
}
