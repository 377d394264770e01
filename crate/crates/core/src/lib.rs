//! Exact static certification of causal fairness for feed-forward ReLU
//! classifiers.
//!
//! A forward pre-analysis over boxes, symbolic or deeppoly bounds splits the
//! query region until each partition is either classified outright, has few
//! enough unknown ReLUs to be handled by the backward analysis, or is too small
//! to split further. The backward analysis runs over disjunctive polyhedra with
//! exact rational arithmetic and compares, per partition, the projections of
//! each outcome onto the non-sensitive inputs.

pub mod error;
pub mod numeric;
pub mod model;
pub mod input;
pub mod lp;
pub mod polyhedra;
pub mod forward;
pub mod partition;
pub mod preanalysis;
pub mod backward;
pub mod analyze;
pub mod report;

pub use analyze::{analyze, analyze_from, Analysis, AnalysisConfig};
pub use error::{Error, Result};
pub use forward::{ActivationPattern, Domain};
pub use input::{parse_query, parse_spec, InputSpec, Query};
pub use model::{parse_model, NetworkModel};
pub use numeric::{Interval, Rational};
pub use partition::{BudgetConfig, Partition};
pub use report::{build_report, emit_report, parse_resume, AnalysisReport};

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Output order always matches input order.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}
