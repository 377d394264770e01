//! End-to-end analysis: pre-analysis, then the backward check of every
//! feasible partition, grouped by activation pattern.

use std::time::{Duration, Instant};

use crate::backward::{analyze_partition, group_outcomes, BackwardStats, PartitionResult};
use crate::error::{Error, Result};
use crate::forward::{ActivationPattern, Domain};
use crate::input::{InputSpec, Query};
use crate::model::NetworkModel;
use crate::numeric::Rational;
use crate::par_map;
use crate::partition::{total_volume, BudgetConfig, Partition};
use crate::preanalysis::{run_preanalysis, Preanalysis};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnalysisConfig {
    pub domain: Domain,
    pub budget: BudgetConfig,
    /// Wall-clock limit for the partition queue.
    pub timeout: Option<Duration>,
}

impl AnalysisConfig {
    /// `L = 0`, `U = min(hidden nodes, 10)`, symbolic domain.
    pub fn default_for(model: &NetworkModel) -> AnalysisConfig {
        AnalysisConfig {
            domain: Domain::Symbolic,
            budget: BudgetConfig::new(Rational::from_integer(0.into()), model.hidden_count().min(10)),
            timeout: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupStats {
    pub pattern: ActivationPattern,
    pub partitions: usize,
    /// One entry per class.
    pub backward: Vec<BackwardStats>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Analysis {
    pub roots: Vec<Partition>,
    pub pre: Preanalysis,
    /// Verdicts for the feasible partitions, sorted by partition.
    pub results: Vec<PartitionResult>,
    pub groups: Vec<GroupStats>,
}

impl Analysis {
    /// Volume of the analyzed region Y.
    pub fn query_volume(&self, spec: &InputSpec) -> Rational {
        total_volume(&self.roots, spec)
    }

    pub fn is_biased(&self) -> bool {
        self.results.iter().any(PartitionResult::is_biased)
    }
}

pub fn check_compatible(model: &NetworkModel, spec: &InputSpec) -> Result<()> {
    if model.input_size() != spec.width() {
        return Err(Error::Spec(format!(
            "spec describes {} input nodes but the model has {}",
            spec.width(),
            model.input_size()
        )));
    }
    Ok(())
}

/// Analyzes the region given by `query`.
pub fn analyze(model: &NetworkModel, spec: &InputSpec, query: &Query, config: &AnalysisConfig) -> Result<Analysis> {
    analyze_from(model, spec, vec![Partition::root(spec, query)], config)
}

/// Analyzes the union of `roots`, e.g. the excluded partitions of an earlier run.
pub fn analyze_from(
    model: &NetworkModel,
    spec: &InputSpec,
    roots: Vec<Partition>,
    config: &AnalysisConfig,
) -> Result<Analysis> {
    check_compatible(model, spec)?;
    let deadline = config.timeout.map(|t| Instant::now() + t);
    let pre = run_preanalysis(model, spec, roots.clone(), config.domain, &config.budget, deadline)?;
    let entries = pre.feasible.entries();
    let outcomes = par_map(entries, |(pattern, _)| group_outcomes(model, pattern));
    let tasks: Vec<(usize, &Partition)> =
        entries.iter().enumerate().flat_map(|(g, (_, parts))| parts.iter().map(move |p| (g, p))).collect();
    let verdicts = par_map(&tasks, |&(g, part)| {
        let sets: Vec<_> = outcomes[g].iter().map(|(set, _)| set.clone()).collect();
        analyze_partition(model, spec, part, &entries[g].0, &sets)
    });
    let mut results = verdicts.into_iter().collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| a.partition.cmp(&b.partition));
    let groups = entries
        .iter()
        .zip(&outcomes)
        .map(|((pattern, parts), outs)| GroupStats {
            pattern: pattern.clone(),
            partitions: parts.len(),
            backward: outs.iter().map(|(_, s)| *s).collect(),
        })
        .collect();
    Ok(Analysis { roots, pre, results, groups })
}
