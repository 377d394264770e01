//! Backward analysis from each outcome over disjunctive polyhedra, and the
//! per-partition comparison of outcome projections onto the non-sensitive
//! inputs.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::forward::ActivationPattern;
use crate::input::{ChoiceValue, FeatureKind, InputSpec};
use crate::lp::LpOutcome;
use crate::model::{NetworkModel, NodeId};
use crate::numeric::{int, Interval, LinExpr, Rational, Var};
use crate::partition::{Cell, Partition};
use crate::polyhedra::{assume_outcome, PolySet, Polyhedron};

/// Candidate points tried per region before it is reported as a tie boundary.
const WITNESS_SAMPLES: usize = 16;
/// LP vertices collected as seeds for the convex-combination sampler.
const WITNESS_VERTICES: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BackwardStats {
    /// Largest number of live disjuncts after any pruning step.
    pub max_live: usize,
    pub disjuncts: usize,
}

/// Preimage of outcome `class` over the input variables, following the
/// flags of `pattern` and both branches of every unknown ReLU. Empty
/// disjuncts are dropped after each unknown split.
pub fn backward(model: &NetworkModel, class: usize, pattern: &ActivationPattern) -> (PolySet, BackwardStats) {
    let out = model.depth();
    let mut set: PolySet = vec![assume_outcome(model, class)];
    for i in 0..model.output_size() {
        set = set.iter().map(|p| p.backward_assign(Var::post(out, i), &model.affine_expr(out, i))).collect();
    }
    let mut stats = BackwardStats { max_live: 1, disjuncts: 0 };
    for layer in (1..out).rev() {
        for index in (0..model.layer(layer).rows()).rev() {
            let flag = pattern.get(NodeId { layer, index });
            let (post, pre) = (Var::post(layer, index), Var::pre(layer, index));
            let mut next: PolySet = set.iter().flat_map(|p| p.backward_relu(post, pre, flag)).collect();
            if flag.is_none() {
                next.retain(|p| !p.is_empty());
            }
            let rhs = model.affine_expr(layer, index);
            set = next.iter().map(|p| p.backward_assign(pre, &rhs)).collect();
            stats.max_live = stats.max_live.max(set.len());
        }
    }
    set.retain(|p| !p.is_trivially_empty());
    for p in &mut set {
        p.prune_pairwise();
    }
    set.sort();
    set.dedup();
    stats.disjuncts = set.len();
    (set, stats)
}

/// A projected outcome polyhedron tagged with its class and sensitive choice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Projected {
    pub class: usize,
    pub choice: usize,
    pub region: Polyhedron,
}

/// All pairs `(a, b)`, `a < b`, whose classes and choices both differ and
/// whose regions intersect, with the intersection. An empty result certifies
/// that the projections do not overlap.
pub fn check(entries: &[Projected]) -> Vec<(usize, usize, Polyhedron)> {
    let mut out = Vec::new();
    for a in 0..entries.len() {
        for b in a + 1..entries.len() {
            let (ea, eb) = (&entries[a], &entries[b]);
            if ea.class == eb.class || ea.choice == eb.choice {
                continue;
            }
            let meet = ea.region.meet(&eb.region);
            if !meet.is_empty() {
                out.push((a, b, meet));
            }
        }
    }
    out
}

/// Non-sensitive inputs on which two sensitive choices lead to different
/// outcomes. `witness` holds a confirmed pair of concrete inputs; without one
/// the region is a tie boundary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BiasRegion {
    /// The partition with every non-sensitive categorical feature fixed.
    pub cell: Partition,
    /// Outcome for the first and the second choice.
    pub classes: (usize, usize),
    pub choices: (usize, usize),
    /// Over the non-sensitive input variables.
    pub region: Polyhedron,
    /// Bounding box of `region`, per non-sensitive continuous feature.
    pub bounds: Vec<(usize, Interval)>,
    /// Both points at once: sensitive variables of the first point are tagged
    /// copy 1, of the second copy 2.
    pub joint: Polyhedron,
    pub witness: Option<(Vec<Rational>, Vec<Rational>)>,
}

impl BiasRegion {
    pub fn is_confirmed(&self) -> bool {
        self.witness.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionResult {
    pub partition: Partition,
    /// Key of the feasible-map group the partition was analyzed under.
    pub pattern: ActivationPattern,
    pub regions: Vec<BiasRegion>,
}

impl PartitionResult {
    pub fn is_biased(&self) -> bool {
        self.regions.iter().any(BiasRegion::is_confirmed)
    }
}

/// Resolved sensitive choice: constants for one-hot nodes, a range for the
/// continuous sensitive input.
struct ChoiceEnv {
    consts: BTreeMap<Var, Rational>,
    range: Option<(Var, Interval)>,
}

fn choice_envs(spec: &InputSpec) -> Vec<ChoiceEnv> {
    spec.choices
        .iter()
        .map(|c| {
            let mut env = ChoiceEnv { consts: BTreeMap::new(), range: None };
            for (fi, v) in &c.values {
                let f = &spec.features[*fi];
                match v {
                    ChoiceValue::Range(iv) => env.range = Some((Var::input(f.offset), iv.clone())),
                    ChoiceValue::OneHot(k) => {
                        for n in 0..f.width() {
                            env.consts.insert(Var::input(f.offset + n), int(i64::from(n == *k)));
                        }
                    }
                }
            }
            env
        })
        .collect()
}

/// Every way of fixing the open non-sensitive categorical features of `part`.
pub fn sub_cells(spec: &InputSpec, part: &Partition) -> Vec<Partition> {
    let mut cells = vec![part.clone()];
    for fi in spec.non_sensitive_categorical() {
        if part.cells[fi] != Cell::Open {
            continue;
        }
        let FeatureKind::Categorical { arity } = spec.features[fi].kind else { unreachable!() };
        cells = cells
            .into_iter()
            .flat_map(|c| {
                (0..arity).map(move |v| {
                    let mut c = c.clone();
                    c.cells[fi] = Cell::Fixed(v);
                    c
                })
            })
            .collect();
    }
    cells
}

/// Constants for the fixed categorical nodes and ranges for the continuous
/// non-sensitive inputs of a sub-cell.
fn cell_env(spec: &InputSpec, cell: &Partition) -> (BTreeMap<Var, Rational>, BTreeMap<Var, Interval>) {
    let mut consts = BTreeMap::new();
    let mut ranges = BTreeMap::new();
    for (f, c) in spec.features.iter().zip(&cell.cells) {
        match c {
            Cell::Range(r) if !f.sensitive => {
                ranges.insert(Var::input(f.offset), r.clone());
            }
            Cell::Fixed(v) => {
                for n in 0..f.width() {
                    consts.insert(Var::input(f.offset + n), int(i64::from(n == *v)));
                }
            }
            _ => {}
        }
    }
    (consts, ranges)
}

fn non_sensitive_continuous_vars(spec: &InputSpec) -> Vec<(usize, Var)> {
    spec.splittable_continuous().into_iter().map(|fi| (fi, Var::input(spec.features[fi].offset))).collect()
}

/// Concrete input vector for one side of a joint point.
fn concrete_input(
    spec: &InputSpec,
    cell: &Partition,
    env: &ChoiceEnv,
    point: &BTreeMap<Var, Rational>,
    tag: u8,
) -> Vec<Rational> {
    let mut x = vec![Rational::zero(); spec.width()];
    for (fi, (f, c)) in spec.features.iter().zip(&cell.cells).enumerate() {
        let v = Var::input(f.offset);
        match &f.kind {
            FeatureKind::Continuous(full) => {
                let (key, fallback) = if f.sensitive {
                    let r = env.range.as_ref().map_or(full, |(_, r)| r);
                    (v.copy(tag), r.lo.clone())
                } else {
                    (v, cell.range(fi).map_or(full.lo.clone(), |r| r.lo.clone()))
                };
                x[f.offset] = point.get(&key).cloned().unwrap_or(fallback);
            }
            FeatureKind::Categorical { .. } => {
                for n in 0..f.width() {
                    let node = Var::input(f.offset + n);
                    x[f.offset + n] = match c {
                        Cell::Fixed(k) => int(i64::from(n == *k)),
                        _ => env.consts.get(&node).cloned().unwrap_or_else(Rational::zero),
                    };
                }
            }
        }
    }
    x
}

/// FNV-1a, for stable per-region RNG seeds.
fn stable_seed(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

struct WitnessSearch<'a> {
    model: &'a NetworkModel,
    spec: &'a InputSpec,
    cell: &'a Partition,
    envs: (&'a ChoiceEnv, &'a ChoiceEnv),
    classes: (usize, usize),
}

impl WitnessSearch<'_> {
    fn confirm(&self, point: &BTreeMap<Var, Rational>) -> Option<(Vec<Rational>, Vec<Rational>)> {
        let a = concrete_input(self.spec, self.cell, self.envs.0, point, 1);
        let b = concrete_input(self.spec, self.cell, self.envs.1, point, 2);
        (self.model.eval_concrete(&a) == self.classes.0 && self.model.eval_concrete(&b) == self.classes.1)
            .then_some((a, b))
    }

    /// Tries the relative-interior point, then LP vertices for random
    /// directions, then random strictly positive combinations of those.
    fn run(&self, joint: &Polyhedron, seed: u64) -> Option<(Vec<Rational>, Vec<Rational>)> {
        let center = joint.relative_interior_point()?;
        if let Some(w) = self.confirm(&center) {
            return Some(w);
        }
        let vars: Vec<Var> = joint.vars().into_iter().collect();
        if vars.is_empty() {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seeds = vec![center];
        let mut tried = 1;
        for _ in 0..WITNESS_VERTICES {
            let dir = LinExpr::from_terms(vars.iter().map(|v| (*v, int(rng.gen_range(-8..=8)))), Rational::zero());
            if let LpOutcome::Optimal { point, .. } = joint.maximize(&dir) {
                tried += 1;
                if let Some(w) = self.confirm(&point) {
                    return Some(w);
                }
                seeds.push(point);
            }
        }
        while tried < WITNESS_SAMPLES {
            tried += 1;
            let weights: Vec<i64> = seeds.iter().map(|_| rng.gen_range(1..=16)).collect();
            let total = Rational::from_integer(BigInt::from(weights.iter().sum::<i64>()));
            let point: BTreeMap<Var, Rational> = vars
                .iter()
                .map(|v| {
                    let sum = seeds
                        .iter()
                        .zip(&weights)
                        .fold(Rational::zero(), |acc, (s, w)| acc + s.get(v).cloned().unwrap_or_default() * int(*w));
                    (*v, sum / &total)
                })
                .collect();
            if let Some(w) = self.confirm(&point) {
                return Some(w);
            }
        }
        None
    }
}

/// One projected outcome with the data needed to rebuild its joint system.
struct Entry {
    proj: Projected,
    /// Before projection, over the cell's inputs.
    full: Polyhedron,
    bounds: Vec<(usize, Interval)>,
}

fn boxes_overlap(a: &[(usize, Interval)], b: &[(usize, Interval)]) -> bool {
    a.iter().zip(b).all(|((_, x), (_, y))| x.lo <= y.hi && y.lo <= x.hi)
}

/// Checks one partition against the per-class outcome preimages of its
/// group's pattern.
pub fn analyze_partition(
    model: &NetworkModel,
    spec: &InputSpec,
    part: &Partition,
    pattern: &ActivationPattern,
    outcomes: &[PolySet],
) -> Result<PartitionResult> {
    let envs = choice_envs(spec);
    let ns_vars = non_sensitive_continuous_vars(spec);
    let bbox_vars: Vec<Var> = ns_vars.iter().map(|(_, v)| *v).collect();
    let mut regions = Vec::new();
    for cell in sub_cells(spec, part) {
        let (cell_consts, ranges) = cell_env(spec, &cell);
        let mut entries: Vec<Entry> = Vec::new();
        for (ci, env) in envs.iter().enumerate() {
            let mut consts = cell_consts.clone();
            consts.extend(env.consts.iter().map(|(v, x)| (*v, x.clone())));
            let mut bounds = ranges.clone();
            if let Some((v, r)) = &env.range {
                bounds.insert(*v, r.clone());
            }
            let sensitive: Vec<Var> = env.range.iter().map(|(v, _)| *v).collect();
            for (class, set) in outcomes.iter().enumerate() {
                let mut seen = BTreeSet::new();
                for d in set {
                    let full = d.substitute_all(&consts).meet_box(&bounds);
                    if !seen.insert(full.clone()) || full.is_empty() {
                        continue;
                    }
                    let region = full.project_out(&sensitive);
                    let bb = region.bounding_box(&bbox_vars)?;
                    let bounds = ns_vars.iter().map(|(fi, v)| (*fi, bb[v].clone())).collect();
                    entries.push(Entry { proj: Projected { class, choice: ci, region }, full, bounds });
                }
            }
        }
        let projected: Vec<Projected> = entries.iter().map(|e| e.proj.clone()).collect();
        for (a, b, region) in check_prefiltered(&projected, &entries) {
            let (ea, eb) = (&entries[a], &entries[b]);
            let joint = joint_system(&ea.full, &eb.full, &envs[ea.proj.choice], &envs[eb.proj.choice]);
            let search = WitnessSearch {
                model,
                spec,
                cell: &cell,
                envs: (&envs[ea.proj.choice], &envs[eb.proj.choice]),
                classes: (ea.proj.class, eb.proj.class),
            };
            let seed = stable_seed(&format!("{:?}|{a}|{b}", cell.cells));
            let witness = search.run(&joint, seed);
            let bb = region.bounding_box(&bbox_vars)?;
            let bounds = ns_vars.iter().map(|(fi, v)| (*fi, bb[v].clone())).collect();
            regions.push(BiasRegion {
                cell: cell.clone(),
                classes: (ea.proj.class, eb.proj.class),
                choices: (ea.proj.choice, eb.proj.choice),
                region,
                bounds,
                joint,
                witness,
            });
        }
    }
    Ok(PartitionResult { partition: part.clone(), pattern: pattern.clone(), regions })
}

/// `check`, skipping pairs whose bounding boxes are already disjoint.
fn check_prefiltered(projected: &[Projected], entries: &[Entry]) -> Vec<(usize, usize, Polyhedron)> {
    let mut out = Vec::new();
    for a in 0..projected.len() {
        for b in a + 1..projected.len() {
            if !boxes_overlap(&entries[a].bounds, &entries[b].bounds) {
                continue;
            }
            let pair = [projected[a].clone(), projected[b].clone()];
            if let Some((_, _, meet)) = check(&pair).pop() {
                out.push((a, b, meet));
            }
        }
    }
    out
}

fn joint_system(a: &Polyhedron, b: &Polyhedron, ea: &ChoiceEnv, eb: &ChoiceEnv) -> Polyhedron {
    let tag = |p: &Polyhedron, env: &ChoiceEnv, t: u8| match &env.range {
        Some((v, _)) => p.rename(&BTreeMap::from([(*v, v.copy(t))])),
        None => p.clone(),
    };
    tag(a, ea, 1).meet(&tag(b, eb, 2))
}

/// Backward preimages for one feasible-map group, one `PolySet` per class.
pub fn group_outcomes(model: &NetworkModel, pattern: &ActivationPattern) -> Vec<(PolySet, BackwardStats)> {
    (0..model.output_size()).map(|j| backward(model, j, pattern)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;
    use crate::numeric::{rat, LinIneq};
    use crate::polyhedra::Flag;

    /// n = ReLU(x); o₀ = n, o₁ = 1 − n.
    const ONE_NODE: &str = "inputs 1\nlayer 1 1 relu\n1\nbias 0\nlayer 2 1 identity\n1\n-1\nbias 0 1\n";

    fn x() -> LinExpr {
        LinExpr::var(Var::input(0))
    }

    fn half_line() -> Polyhedron {
        Polyhedron::from_constraints([LinIneq::ge(&x(), &LinExpr::constant(rat(1, 2)))])
    }

    #[test]
    fn active_pattern_gives_single_disjunct() {
        let m = parse_model(ONE_NODE).unwrap();
        let p = ActivationPattern::from_flags([(NodeId { layer: 1, index: 0 }, Flag::Active)]);
        let (set, stats) = backward(&m, 0, &p);
        assert_eq!(set, vec![half_line()]);
        assert_eq!(stats.max_live, 1);
    }

    #[test]
    fn unknown_pattern_prunes_the_inactive_branch() {
        let m = parse_model(ONE_NODE).unwrap();
        let (set, stats) = backward(&m, 0, &ActivationPattern::empty());
        assert_eq!(set, vec![half_line()]);
        assert!(stats.max_live <= 2);
    }

    #[test]
    fn infeasible_full_pattern_is_empty() {
        // n = ReLU(x − 2) Active on x ≤ 1 would need x ≥ 2; o₀ = n, o₁ = 5.
        let m = parse_model("inputs 1\nlayer 1 1 relu\n1\nbias -2\nlayer 2 1 identity\n1\n0\nbias 0 5\n").unwrap();
        let p = ActivationPattern::from_flags([(NodeId { layer: 1, index: 0 }, Flag::Active)]);
        let (set, _) = backward(&m, 0, &p);
        let boxed: Vec<Polyhedron> = set
            .iter()
            .map(|d| d.meet_box(&BTreeMap::from([(Var::input(0), Interval::new(int(0), int(1)))])))
            .filter(|d| !d.is_empty())
            .collect();
        assert!(boxed.is_empty());
    }

    fn interval(lo: Rational, hi: Rational) -> Polyhedron {
        Polyhedron::from_box(&BTreeMap::from([(Var::input(0), Interval::new(lo, hi))]))
    }

    #[test]
    fn check_separated_projections_is_fair() {
        let e = [
            Projected { class: 0, choice: 0, region: interval(int(0), rat(2, 5)) },
            Projected { class: 1, choice: 1, region: interval(rat(3, 5), int(1)) },
        ];
        assert!(check(&e).is_empty());
    }

    #[test]
    fn check_reports_the_overlap() {
        let e = [
            Projected { class: 0, choice: 0, region: interval(int(0), rat(3, 5)) },
            Projected { class: 1, choice: 1, region: interval(rat(1, 2), int(1)) },
        ];
        let out = check(&e);
        assert_eq!(out.len(), 1);
        let bb = out[0].2.bounding_box(&[Var::input(0)]).unwrap();
        assert_eq!(bb[&Var::input(0)], Interval::new(rat(1, 2), rat(3, 5)));
    }

    #[test]
    fn check_three_classes_one_region_per_pair() {
        let e: Vec<Projected> =
            (0..3).map(|j| Projected { class: j, choice: j, region: interval(int(0), int(1)) }).collect();
        let pairs: Vec<(usize, usize)> = check(&e).into_iter().map(|(a, b, _)| (a, b)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn same_choice_never_counts_as_bias() {
        let e = [
            Projected { class: 0, choice: 0, region: interval(int(0), int(1)) },
            Projected { class: 1, choice: 0, region: interval(int(0), int(1)) },
        ];
        assert!(check(&e).is_empty());
    }
}
