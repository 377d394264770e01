//! Forward pre-analysis: drains the partition queue, sorting every partition
//! into completed, feasible or excluded.

use std::time::Instant;

use crate::error::Result;
use crate::forward::{forward, uniquely_classified, ActivationPattern, Domain};
use crate::input::InputSpec;
use crate::model::NetworkModel;
use crate::par_map;
use crate::partition::{BudgetConfig, Partition};

/// Feasible partitions keyed by abstract activation pattern. No key is
/// subsumed by another key.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeasibleMap {
    entries: Vec<(ActivationPattern, Vec<Partition>)>,
}

impl FeasibleMap {
    pub fn new() -> FeasibleMap {
        FeasibleMap::default()
    }

    /// Attaches `part` to the first key whose flags are all in `pattern`;
    /// otherwise opens a key `pattern` and folds into it every key that
    /// `pattern` subsumes.
    pub fn insert(&mut self, pattern: ActivationPattern, part: Partition) {
        if let Some((_, parts)) = self.entries.iter_mut().find(|(k, _)| k.is_subset_of(&pattern)) {
            parts.push(part);
            return;
        }
        let mut parts = Vec::new();
        self.entries.retain_mut(|(k, ps)| {
            if k.is_subsumed_by(&pattern) {
                parts.append(ps);
                false
            } else {
                true
            }
        });
        parts.push(part);
        parts.sort();
        self.entries.push((pattern, parts));
    }

    pub fn entries(&self) -> &[(ActivationPattern, Vec<Partition>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn partitions(&self) -> impl Iterator<Item = &Partition> {
        self.entries.iter().flat_map(|(_, ps)| ps)
    }
}

/// What the forward pass decides for one partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Triage {
    /// Every input of the partition gets this class.
    Completed(usize),
    /// At most U unknown ReLUs: handed to the backward analysis.
    Feasible(ActivationPattern),
    Split(Vec<Partition>),
    Excluded(ActivationPattern),
}

pub fn triage(
    model: &NetworkModel,
    spec: &InputSpec,
    part: &Partition,
    domain: Domain,
    budget: &BudgetConfig,
) -> Result<Triage> {
    let (bounds, pattern) = forward(model, domain, &part.input_box(spec));
    if let Some(class) = uniquely_classified(&bounds) {
        return Ok(Triage::Completed(class));
    }
    if model.hidden_count() - pattern.len() <= budget.upper {
        return Ok(Triage::Feasible(pattern));
    }
    if part.can_split(spec, budget) {
        return Ok(Triage::Split(part.split(spec, budget)?));
    }
    Ok(Triage::Excluded(pattern))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Preanalysis {
    /// Partitions classified by the forward pass alone (C₀), sorted.
    pub completed: Vec<(Partition, usize)>,
    pub feasible: FeasibleMap,
    /// Sorted by partition.
    pub excluded: Vec<(ActivationPattern, Partition)>,
    /// Set when the deadline cut the queue short.
    pub timed_out: bool,
}

/// Breadth-first drain of the queue seeded with `roots`. Each round is
/// processed in parallel; results are committed in canonical order so the
/// outcome does not depend on scheduling. Partitions still queued at
/// `deadline` are excluded with an empty pattern.
pub fn run_preanalysis(
    model: &NetworkModel,
    spec: &InputSpec,
    roots: Vec<Partition>,
    domain: Domain,
    budget: &BudgetConfig,
    deadline: Option<Instant>,
) -> Result<Preanalysis> {
    let mut out = Preanalysis::default();
    let mut feasible: Vec<(Partition, ActivationPattern)> = Vec::new();
    let mut frontier = roots;
    frontier.sort();
    while !frontier.is_empty() {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            out.timed_out = true;
            out.excluded.extend(frontier.drain(..).map(|p| (ActivationPattern::empty(), p)));
            break;
        }
        let verdicts = par_map(&frontier, |p| triage(model, spec, p, domain, budget));
        let mut next = Vec::new();
        for (part, verdict) in frontier.drain(..).zip(verdicts) {
            match verdict? {
                Triage::Completed(c) => out.completed.push((part, c)),
                Triage::Feasible(pattern) => feasible.push((part, pattern)),
                Triage::Split(children) => next.extend(children),
                Triage::Excluded(pattern) => out.excluded.push((pattern, part)),
            }
        }
        next.sort();
        frontier = next;
    }
    out.completed.sort();
    out.excluded.sort_by(|a, b| a.1.cmp(&b.1));
    feasible.sort();
    for (part, pattern) in feasible {
        out.feasible.insert(pattern, part);
    }
    Ok(out)
}
