//! Lower confidence bounds on the number of false hypotheses.
//!
//! * [`conjunction`]: partial-conjunction p-values and the `[u_max, n]`
//!   confidence interval.
//! * [`closedtest`]: exhaustive closed testing, bounds for post-hoc selected
//!   sets, and a per-family Bonferroni wrapper.
//! * [`combine`]: Fisher and Stouffer combining functions.
//! * [`harness`]: Monte Carlo coverage checks and data splitting.
//!
//! Lattice construction and simulations run on rayon when the default
//! `parallel` feature is on; results are identical either way.

pub mod closedtest;
pub mod combine;
pub mod conjunction;
pub mod error;
pub mod exec;
pub mod harness;
pub mod io;
pub mod model;
pub mod numeric;

pub use closedtest::{
    build_lattice, check_shortcut_equivalence, full_set_bound, local_p, multifamily_bounds, selection_bound,
    EquivalenceCheck, FamilyCorrection, IntersectionLattice, LatticeSnapshot, MultiFamilyReport, SelectionBound,
    LATTICE_CAP,
};
pub use combine::{
    chisq_even_df_survival, combine, fisher_combine, stouffer_combine, CombineResult, Combiner, CombinerKind, Fisher,
    Stouffer,
};
pub use conjunction::{lower_bound_umax, pc_curve, pc_pvalue, report_bound, BoundReport, ConfidenceBound, ConjunctionCurve};
pub use error::{Error, Result};
pub use harness::{
    simulate_coverage, simulate_selection_coverage, split_dataset, CoverageReport, ScenarioReport, ScenarioSpec,
    SelectionCoverageReport, SelectionRule, SplitPlan,
};
pub use io::{load_pvalues, write_pvalues, Format};
pub use model::{resolve_selection, Alpha, AnalysisConfig, Hypothesis, PValueVector, RankedHypothesis, SelectionSet};
