//! JSON report: coverage and bias figures, biased regions, completed and
//! excluded partitions. Also reads back the excluded set to resume a run.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::analyze::{Analysis, AnalysisConfig};
use crate::backward::BiasRegion;
use crate::error::{Error, Result};
use crate::input::{FeatureKind, InputSpec};
use crate::numeric::{fmt_decimal, fmt_exact, parse_rational, Interval, Rational};
use crate::partition::{total_volume, Cell, Partition};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSummary {
    pub feature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub cells: Vec<CellSummary>,
    pub depth: u32,
    pub cursor: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletedSummary {
    pub partition: PartitionSummary,
    /// `fair` or `biased`.
    pub verdict: String,
    /// Set when the forward pass alone fixed the class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessSummary {
    pub first: Vec<String>,
    pub second: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub partition: PartitionSummary,
    pub classes: [usize; 2],
    pub choices: [usize; 2],
    #[serde(rename = "box")]
    pub bounds: Vec<CellSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<WitnessSummary>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedSummary {
    pub pattern: String,
    pub partition: PartitionSummary,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub domain: String,
    pub lower: String,
    pub upper: usize,
    pub max_depth: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub verdict: String,
    /// Relative to Y.
    pub covered_fraction: String,
    pub covered_fraction_decimal: String,
    pub fair_fraction: String,
    pub fair_fraction_decimal: String,
    pub biased_partition_fraction: String,
    pub biased_partition_fraction_decimal: String,
    /// Relative to the full declared input space.
    pub bias_fraction: String,
    pub bias_fraction_decimal: String,
    /// Relative to the covered part of Y.
    pub bias_fraction_of_covered: String,
    pub bias_fraction_of_covered_decimal: String,
    pub excluded_fraction: String,
    pub excluded_fraction_decimal: String,
    pub biased_regions: Vec<RegionSummary>,
    pub tie_regions: Vec<RegionSummary>,
    pub completed: Vec<CompletedSummary>,
    pub excluded: Vec<ExcludedSummary>,
    pub config: ConfigEcho,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub timed_out: bool,
}

/// Exact figures behind a report.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fractions {
    pub query_volume: Rational,
    pub covered: Rational,
    pub fair: Rational,
    pub biased_partitions: Rational,
    pub bias: Rational,
    pub bias_of_covered: Rational,
    pub excluded: Rational,
}

pub fn summarize_partition(spec: &InputSpec, p: &Partition) -> PartitionSummary {
    let cells = spec
        .features
        .iter()
        .zip(&p.cells)
        .map(|(f, c)| {
            let mut s = CellSummary { feature: f.name.clone(), lo: None, hi: None, value: None };
            match c {
                Cell::Range(r) => {
                    s.lo = Some(fmt_exact(&r.lo));
                    s.hi = Some(fmt_exact(&r.hi));
                }
                Cell::Fixed(v) => s.value = Some(*v),
                Cell::Open => {}
            }
            s
        })
        .collect();
    PartitionSummary { cells, depth: p.depth, cursor: p.cursor }
}

/// Inverse of [`summarize_partition`].
pub fn partition_from_summary(spec: &InputSpec, s: &PartitionSummary) -> Result<Partition> {
    if s.cells.len() != spec.features.len() {
        return Err(Error::Resume(format!("partition has {} cells, spec has {} features", s.cells.len(), spec.features.len())));
    }
    let mut cells = Vec::with_capacity(s.cells.len());
    for (f, c) in spec.features.iter().zip(&s.cells) {
        if f.name != c.feature {
            return Err(Error::Resume(format!("expected feature `{}`, found `{}`", f.name, c.feature)));
        }
        let num = |t: &Option<String>| -> Result<Rational> {
            let t = t.as_deref().ok_or_else(|| Error::Resume(format!("`{}` needs lo and hi", f.name)))?;
            parse_rational(t).ok_or_else(|| Error::Resume(format!("bad number `{t}`")))
        };
        let cell = match &f.kind {
            FeatureKind::Continuous(full) => {
                let r = Interval::new(num(&c.lo)?, num(&c.hi)?);
                if r.lo >= r.hi || !full.contains_interval(&r) || (f.sensitive && r != *full) {
                    return Err(Error::Resume(format!("range {r} is not valid for `{}`", f.name)));
                }
                Cell::Range(r)
            }
            FeatureKind::Categorical { arity } => match c.value {
                Some(v) if v < *arity && !f.sensitive => Cell::Fixed(v),
                Some(v) => return Err(Error::Resume(format!("value {v} is not valid for `{}`", f.name))),
                None => Cell::Open,
            },
        };
        cells.push(cell);
    }
    Ok(Partition { cells, cursor: s.cursor, depth: s.depth })
}

/// The `excluded` partitions of an emitted report.
pub fn parse_resume(text: &str, spec: &InputSpec) -> Result<Vec<Partition>> {
    #[derive(Deserialize)]
    struct Excluded {
        excluded: Vec<ExcludedSummary>,
    }
    let e: Excluded = serde_json::from_str(text).map_err(|e| Error::Resume(e.to_string()))?;
    e.excluded.iter().map(|x| partition_from_summary(spec, &x.partition)).collect()
}

/// Volume of a union of axis-aligned boxes, by sweeping one coordinate at a
/// time.
pub fn union_volume(boxes: &[Vec<Interval>]) -> Rational {
    let Some(first) = boxes.first() else { return Rational::zero() };
    if first.is_empty() {
        return Rational::one();
    }
    let mut cuts: Vec<&Rational> = boxes.iter().flat_map(|b| [&b[0].lo, &b[0].hi]).collect();
    cuts.sort();
    cuts.dedup();
    let mut total = Rational::zero();
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let slab: Vec<Vec<Interval>> =
            boxes.iter().filter(|b| b[0].lo <= *lo && *hi <= b[0].hi).map(|b| b[1..].to_vec()).collect();
        if !slab.is_empty() {
            total += (hi - lo) * union_volume(&slab);
        }
    }
    total
}

/// Bounding-box estimate of the biased share of the full declared input
/// space. Regions are grouped by their categorical fixings; boxes within a
/// group are de-overlapped before summing.
pub fn quantify_bias(regions: &[&BiasRegion], spec: &InputSpec) -> Rational {
    let mut groups: BTreeMap<Vec<Cell>, Vec<Vec<Interval>>> = BTreeMap::new();
    for r in regions {
        let key: Vec<Cell> = spec
            .features
            .iter()
            .zip(&r.cell.cells)
            .map(|(f, c)| match (&f.kind, c) {
                (FeatureKind::Categorical { .. }, Cell::Fixed(v)) => Cell::Fixed(*v),
                _ => Cell::Open,
            })
            .collect();
        groups.entry(key).or_default().push(r.bounds.iter().map(|(_, iv)| iv.clone()).collect());
    }
    let declared: Rational = spec
        .splittable_continuous()
        .iter()
        .map(|&fi| spec.features[fi].range().expect("continuous").width())
        .fold(Rational::one(), |a, w| a * w);
    let mut total = Rational::zero();
    for (key, boxes) in groups {
        let weight = spec.features.iter().zip(&key).fold(Rational::one(), |w, (f, c)| match (&f.kind, c) {
            (FeatureKind::Categorical { arity }, Cell::Fixed(_)) => w / Rational::from_integer(BigInt::from(*arity)),
            _ => w,
        });
        total += union_volume(&boxes) * weight;
    }
    total / declared
}

pub fn fractions(analysis: &Analysis, spec: &InputSpec) -> Fractions {
    let y = analysis.query_volume(spec);
    let excluded = total_volume(analysis.pre.excluded.iter().map(|(_, p)| p), spec);
    let completed0 = total_volume(analysis.pre.completed.iter().map(|(p, _)| p), spec);
    let biased_parts =
        total_volume(analysis.results.iter().filter(|r| r.is_biased()).map(|r| &r.partition), spec);
    let feasible = total_volume(analysis.results.iter().map(|r| &r.partition), spec);
    let covered = &completed0 + &feasible;
    let confirmed: Vec<&BiasRegion> =
        analysis.results.iter().flat_map(|r| &r.regions).filter(|r| r.is_confirmed()).collect();
    let bias = quantify_bias(&confirmed, spec);
    let ratio = |v: &Rational| if y.is_zero() { Rational::zero() } else { v / &y };
    Fractions {
        covered: ratio(&covered),
        fair: ratio(&(&covered - &biased_parts)),
        biased_partitions: ratio(&biased_parts),
        bias_of_covered: if covered.is_zero() { Rational::zero() } else { &bias / &covered },
        bias,
        excluded: ratio(&excluded),
        query_volume: y,
    }
}

fn region_summary(spec: &InputSpec, r: &BiasRegion) -> RegionSummary {
    RegionSummary {
        partition: summarize_partition(spec, &r.cell),
        classes: [r.classes.0, r.classes.1],
        choices: [r.choices.0, r.choices.1],
        bounds: r
            .bounds
            .iter()
            .map(|(fi, iv)| CellSummary {
                feature: spec.features[*fi].name.clone(),
                lo: Some(fmt_exact(&iv.lo)),
                hi: Some(fmt_exact(&iv.hi)),
                value: None,
            })
            .collect(),
        witness: r.witness.as_ref().map(|(a, b)| WitnessSummary {
            first: a.iter().map(fmt_exact).collect(),
            second: b.iter().map(fmt_exact).collect(),
        }),
    }
}

type RegionKey = (Partition, (usize, usize), (usize, usize), Vec<(usize, Interval)>);

/// One entry per distinct cell, class pair, choice pair and box; a confirmed
/// region wins over tie boundaries with the same key.
fn distinct_regions(analysis: &Analysis) -> (Vec<&BiasRegion>, Vec<&BiasRegion>) {
    let mut confirmed: BTreeMap<RegionKey, &BiasRegion> = BTreeMap::new();
    let mut ties: BTreeMap<RegionKey, &BiasRegion> = BTreeMap::new();
    for r in analysis.results.iter().flat_map(|r| &r.regions) {
        let key = (r.cell.clone(), r.classes, r.choices, r.bounds.clone());
        if r.is_confirmed() {
            ties.remove(&key);
            confirmed.entry(key).or_insert(r);
        } else if !confirmed.contains_key(&key) {
            ties.entry(key).or_insert(r);
        }
    }
    (confirmed.into_values().collect(), ties.into_values().collect())
}

pub fn build_report(analysis: &Analysis, spec: &InputSpec, config: &AnalysisConfig) -> AnalysisReport {
    let f = fractions(analysis, spec);
    let (confirmed, ties) = distinct_regions(analysis);
    let mut completed: Vec<(Partition, CompletedSummary)> = analysis
        .pre
        .completed
        .iter()
        .map(|(p, c)| {
            (
                p.clone(),
                CompletedSummary {
                    partition: summarize_partition(spec, p),
                    verdict: "fair".into(),
                    class: Some(*c),
                    pattern: None,
                },
            )
        })
        .collect();
    completed.extend(analysis.results.iter().map(|r| {
        (
            r.partition.clone(),
            CompletedSummary {
                partition: summarize_partition(spec, &r.partition),
                verdict: if r.is_biased() { "biased" } else { "fair" }.into(),
                class: None,
                pattern: Some(r.pattern.to_string()),
            },
        )
    }));
    completed.sort_by(|a, b| a.0.cmp(&b.0));
    let pair = |r: &Rational| (fmt_exact(r), fmt_decimal(r));
    let (covered, covered_d) = pair(&f.covered);
    let (fair, fair_d) = pair(&f.fair);
    let (bparts, bparts_d) = pair(&f.biased_partitions);
    let (bias, bias_d) = pair(&f.bias);
    let (bias_c, bias_c_d) = pair(&f.bias_of_covered);
    let (excl, excl_d) = pair(&f.excluded);
    AnalysisReport {
        verdict: if analysis.is_biased() { "biased" } else { "fair" }.into(),
        covered_fraction: covered,
        covered_fraction_decimal: covered_d,
        fair_fraction: fair,
        fair_fraction_decimal: fair_d,
        biased_partition_fraction: bparts,
        biased_partition_fraction_decimal: bparts_d,
        bias_fraction: bias,
        bias_fraction_decimal: bias_d,
        bias_fraction_of_covered: bias_c,
        bias_fraction_of_covered_decimal: bias_c_d,
        excluded_fraction: excl,
        excluded_fraction_decimal: excl_d,
        biased_regions: confirmed.iter().map(|r| region_summary(spec, r)).collect(),
        tie_regions: ties.iter().map(|r| region_summary(spec, r)).collect(),
        completed: completed.into_iter().map(|(_, c)| c).collect(),
        excluded: analysis
            .pre
            .excluded
            .iter()
            .map(|(pat, p)| ExcludedSummary { pattern: pat.to_string(), partition: summarize_partition(spec, p) })
            .collect(),
        config: ConfigEcho {
            domain: config.domain.name().into(),
            lower: fmt_exact(&config.budget.lower),
            upper: config.budget.upper,
            max_depth: config.budget.max_depth,
        },
        timed_out: analysis.pre.timed_out,
    }
}

/// Pretty-printed JSON with a trailing newline. Key order follows the struct
/// declarations, arrays are already sorted.
pub fn emit_report(report: &AnalysisReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::input::{parse_spec, Query};
    use crate::numeric::{int, rat};
    use crate::polyhedra::Polyhedron;

    fn iv(lo: Rational, hi: Rational) -> Interval {
        Interval::new(lo, hi)
    }

    fn region(spec: &InputSpec, bounds: Vec<(usize, Interval)>) -> BiasRegion {
        BiasRegion {
            cell: Partition::root(spec, &Query::default()),
            classes: (0, 1),
            choices: (0, 1),
            region: Polyhedron::universe(),
            bounds,
            joint: Polyhedron::universe(),
            witness: Some((vec![], vec![])),
        }
    }

    const CREDIT: &str = "continuous amount 0 1\ncontinuous age 0 1 sensitive\nchoices 0:0.5,0.5:1\n";

    #[test]
    fn single_region_over_the_unit_square() {
        let s = parse_spec(CREDIT).unwrap();
        let r = region(&s, vec![(0, iv(rat(1, 2), int(1)))]);
        assert_eq!(quantify_bias(&[&r], &s), rat(1, 2));
        assert_eq!(quantify_bias(&[], &s), int(0));
    }

    #[test]
    fn disjoint_regions_add_and_overlaps_count_once() {
        let s = parse_spec(CREDIT).unwrap();
        let a = region(&s, vec![(0, iv(int(0), rat(1, 4)))]);
        let b = region(&s, vec![(0, iv(rat(1, 2), rat(3, 4)))]);
        assert_eq!(quantify_bias(&[&a, &b], &s), rat(1, 2));
        let c = region(&s, vec![(0, iv(rat(1, 8), rat(5, 8)))]);
        assert_eq!(quantify_bias(&[&a, &b, &c], &s), rat(3, 4));
    }

    #[test]
    fn union_volume_in_two_dimensions() {
        let b1 = vec![iv(int(0), int(2)), iv(int(0), int(2))];
        let b2 = vec![iv(int(1), int(3)), iv(int(1), int(3))];
        assert_eq!(union_volume(&[b1.clone(), b2]), int(7));
        assert_eq!(union_volume(&[b1.clone(), b1]), int(4));
    }

    #[test]
    fn categorical_fixings_weigh_by_arity() {
        let s = parse_spec("categorical job 4\ncontinuous x 0 2\ncategorical sex 2 sensitive\n").unwrap();
        let mut r = region(&s, vec![(1, iv(int(0), int(1)))]);
        r.cell.cells[0] = Cell::Fixed(2);
        assert_eq!(quantify_bias(&[&r], &s), rat(1, 8));
    }

    #[test]
    fn partition_summary_round_trips() {
        let s = parse_spec("categorical job 3\ncontinuous x 0 1\ncontinuous s 0 1 sensitive\nchoices 0:0.5,0.5:1\n")
            .unwrap();
        let mut p = Partition::root(&s, &Query::default());
        p.cells[0] = Cell::Fixed(1);
        p.cells[1] = Cell::Range(iv(rat(3, 8), rat(1, 2)));
        p.depth = 3;
        p.cursor = 0;
        let sum = summarize_partition(&s, &p);
        assert_eq!(partition_from_summary(&s, &sum).unwrap(), p);
        let mut bad = sum.clone();
        bad.cells[2].lo = Some("1/4".into());
        assert!(partition_from_summary(&s, &bad).is_err());
    }
}
