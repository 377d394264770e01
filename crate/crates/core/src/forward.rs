//! Forward abstract domains: boxes, boxes with symbolic propagation, and
//! DeepPoly-style relational bounds with back-substitution.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::model::{NetworkModel, NodeId};
use crate::numeric::{Interval, Rational};
use crate::polyhedra::Flag;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Boxes,
    Symbolic,
    #[serde(rename = "deeppoly")]
    DeepPoly,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Boxes, Domain::Symbolic, Domain::DeepPoly];

    pub fn name(self) -> &'static str {
        match self {
            Domain::Boxes => "boxes",
            Domain::Symbolic => "symbolic",
            Domain::DeepPoly => "deeppoly",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Domain, String> {
        match s {
            "boxes" => Ok(Domain::Boxes),
            "symbolic" => Ok(Domain::Symbolic),
            "deeppoly" => Ok(Domain::DeepPoly),
            other => Err(format!("unknown domain `{other}` (expected boxes, symbolic or deeppoly)")),
        }
    }
}

/// Partial map from hidden nodes to activation flags; absent means unknown.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActivationPattern {
    flags: BTreeMap<NodeId, Flag>,
}

impl ActivationPattern {
    pub fn empty() -> ActivationPattern {
        ActivationPattern::default()
    }

    pub fn from_flags<I: IntoIterator<Item = (NodeId, Flag)>>(flags: I) -> ActivationPattern {
        ActivationPattern { flags: flags.into_iter().collect() }
    }

    pub fn get(&self, node: NodeId) -> Option<Flag> {
        self.flags.get(&node).copied()
    }

    pub fn set(&mut self, node: NodeId, flag: Flag) {
        self.flags.insert(node, flag);
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, Flag)> + '_ {
        self.flags.iter().map(|(n, f)| (*n, *f))
    }

    /// Every flag of `self` is also set, identically, in `other`.
    pub fn is_subset_of(&self, other: &ActivationPattern) -> bool {
        self.flags.iter().all(|(n, f)| other.flags.get(n) == Some(f))
    }

    /// `self` is subsumed by `other` when `other` claims no more than `self`.
    pub fn is_subsumed_by(&self, other: &ActivationPattern) -> bool {
        other.is_subset_of(self)
    }
}

impl fmt::Display for ActivationPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.flags.is_empty() {
            return f.write_str("ε");
        }
        for (k, (n, fl)) in self.flags.iter().enumerate() {
            let mark = match fl {
                Flag::Active => '+',
                Flag::Inactive => '-',
            };
            let sep = if k == 0 { "" } else { " " };
            write!(f, "{sep}x{},{}{mark}", n.layer, n.index)?;
        }
        Ok(())
    }
}

/// Per-layer bounds on every non-input node: pre-activation values for
/// hidden nodes, scores for the output layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeBounds {
    layers: Vec<Vec<Interval>>,
}

impl NodeBounds {
    /// Pre-activation bounds of node `(layer ≥ 1, index)`.
    pub fn pre(&self, node: NodeId) -> &Interval {
        &self.layers[node.layer - 1][node.index]
    }

    pub fn post(&self, node: NodeId) -> Interval {
        relu_bounds(self.pre(node))
    }

    pub fn layer(&self, layer: usize) -> &[Interval] {
        &self.layers[layer - 1]
    }

    pub fn outputs(&self) -> &[Interval] {
        self.layers.last().map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Interval)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, v)| v.iter().enumerate().map(move |(i, iv)| (NodeId { layer: l + 1, index: i }, iv)))
    }
}

fn flag_of(iv: &Interval) -> Option<Flag> {
    if !iv.lo.is_negative() {
        Some(Flag::Active)
    } else if !iv.hi.is_positive() {
        Some(Flag::Inactive)
    } else {
        None
    }
}

fn relu_bounds(iv: &Interval) -> Interval {
    match flag_of(iv) {
        Some(Flag::Active) => iv.clone(),
        Some(Flag::Inactive) => Interval::point(Rational::zero()),
        None => Interval::new(Rational::zero(), iv.hi.clone()),
    }
}

/// Runs the chosen forward domain over the input box (one interval per input node).
pub fn forward(model: &NetworkModel, domain: Domain, input: &[Interval]) -> (NodeBounds, ActivationPattern) {
    assert_eq!(input.len(), model.input_size(), "input box arity mismatch");
    let bounds = match domain {
        Domain::Boxes => forward_boxes(model, input),
        Domain::Symbolic => forward_symbolic(model, input),
        Domain::DeepPoly => forward_deeppoly(model, input),
    };
    let hidden_layers = model.depth() - 1;
    let mut pattern = ActivationPattern::empty();
    for (l, layer) in bounds.layers.iter().take(hidden_layers).enumerate() {
        for (i, iv) in layer.iter().enumerate() {
            if let Some(f) = flag_of(iv) {
                pattern.set(NodeId { layer: l + 1, index: i }, f);
            }
        }
    }
    (bounds, pattern)
}

/// `Some(j)` when output `j`'s lower bound strictly exceeds every other upper bound.
pub fn uniquely_classified(bounds: &NodeBounds) -> Option<usize> {
    let outs = bounds.outputs();
    (0..outs.len()).find(|&j| (0..outs.len()).all(|i| i == j || outs[j].lo > outs[i].hi))
}

fn affine_interval(weights: &[Rational], bias: &Rational, prev: &[Interval]) -> Interval {
    let mut acc = Interval::point(bias.clone());
    for (w, iv) in weights.iter().zip(prev) {
        if !w.is_zero() {
            acc = acc.add(&iv.scale(w));
        }
    }
    acc
}

fn forward_boxes(model: &NetworkModel, input: &[Interval]) -> NodeBounds {
    let mut prev: Vec<Interval> = input.to_vec();
    let mut layers = Vec::with_capacity(model.depth());
    for (l, layer) in model.layers().iter().enumerate() {
        let pre: Vec<Interval> =
            (0..layer.rows()).map(|r| affine_interval(&layer.weights[r], &layer.biases[r], &prev)).collect();
        let last = l + 1 == model.depth();
        prev = if last { pre.clone() } else { pre.iter().map(relu_bounds).collect() };
        layers.push(pre);
    }
    NodeBounds { layers }
}

/// Affine form over the input nodes plus an interval offset.
#[derive(Clone)]
struct SymForm {
    coeffs: Vec<Rational>,
    constant: Rational,
    offset: Interval,
}

impl SymForm {
    fn range(&self, input: &[Interval]) -> Interval {
        let mut acc = Interval::point(self.constant.clone()).add(&self.offset);
        for (c, iv) in self.coeffs.iter().zip(input) {
            if !c.is_zero() {
                acc = acc.add(&iv.scale(c));
            }
        }
        acc
    }
}

fn forward_symbolic(model: &NetworkModel, input: &[Interval]) -> NodeBounds {
    let n = input.len();
    let zero = Interval::point(Rational::zero());
    let mut prev: Vec<SymForm> = (0..n)
        .map(|i| {
            let mut coeffs = vec![Rational::zero(); n];
            coeffs[i] = Rational::from_integer(1.into());
            SymForm { coeffs, constant: Rational::zero(), offset: zero.clone() }
        })
        .collect();
    let mut layers = Vec::with_capacity(model.depth());
    for (l, layer) in model.layers().iter().enumerate() {
        let last = l + 1 == model.depth();
        let mut pre_bounds = Vec::with_capacity(layer.rows());
        let mut next = Vec::with_capacity(layer.rows());
        for r in 0..layer.rows() {
            let mut f = SymForm { coeffs: vec![Rational::zero(); n], constant: layer.biases[r].clone(), offset: zero.clone() };
            for (w, p) in layer.weights[r].iter().zip(&prev) {
                if w.is_zero() {
                    continue;
                }
                for (c, pc) in f.coeffs.iter_mut().zip(&p.coeffs) {
                    if !pc.is_zero() {
                        *c += w * pc;
                    }
                }
                f.constant += w * &p.constant;
                f.offset = f.offset.add(&p.offset.scale(w));
            }
            let iv = f.range(input);
            if !last {
                next.push(match flag_of(&iv) {
                    Some(Flag::Active) => f,
                    Some(Flag::Inactive) => SymForm { coeffs: vec![Rational::zero(); n], constant: Rational::zero(), offset: zero.clone() },
                    // unknown status: the form collapses to its interval
                    None => SymForm {
                        coeffs: vec![Rational::zero(); n],
                        constant: Rational::zero(),
                        offset: Interval::new(Rational::zero(), iv.hi.clone()),
                    },
                });
            }
            pre_bounds.push(iv);
        }
        layers.push(pre_bounds);
        prev = next;
    }
    NodeBounds { layers }
}

/// Linear bounds of a ReLU output in terms of its own pre-activation.
#[derive(Clone)]
struct ReluRelax {
    lower: (Rational, Rational),
    upper: (Rational, Rational),
}

fn relax(iv: &Interval) -> ReluRelax {
    let zero = || (Rational::zero(), Rational::zero());
    let ident = || (Rational::from_integer(1.into()), Rational::zero());
    match flag_of(iv) {
        Some(Flag::Active) => ReluRelax { lower: ident(), upper: ident() },
        Some(Flag::Inactive) => ReluRelax { lower: zero(), upper: zero() },
        None => {
            let slope = &iv.hi / (&iv.hi - &iv.lo);
            let intercept = -(&slope * &iv.lo);
            ReluRelax { lower: zero(), upper: (slope, intercept) }
        }
    }
}

/// Linear expression over the nodes of one layer.
struct Dense {
    coeffs: Vec<Rational>,
    constant: Rational,
}

impl Dense {
    fn bound(&self, vals: &[Interval], upper: bool) -> Rational {
        let mut acc = self.constant.clone();
        for (c, iv) in self.coeffs.iter().zip(vals) {
            if c.is_zero() {
                continue;
            }
            let pick_hi = c.is_positive() == upper;
            acc += c * if pick_hi { &iv.hi } else { &iv.lo };
        }
        acc
    }
}

fn forward_deeppoly(model: &NetworkModel, input: &[Interval]) -> NodeBounds {
    let depth = model.depth();
    // pre[l] / post[l] are bounds of layer l+1's nodes; relax[l] their ReLU relations.
    let mut pre: Vec<Vec<Interval>> = Vec::with_capacity(depth);
    let mut post: Vec<Vec<Interval>> = Vec::with_capacity(depth);
    let mut relaxations: Vec<Vec<ReluRelax>> = Vec::with_capacity(depth);
    for l in 1..=depth {
        let layer = model.layer(l);
        let mut bounds = Vec::with_capacity(layer.rows());
        for r in 0..layer.rows() {
            let expr = || Dense { coeffs: layer.weights[r].clone(), constant: layer.biases[r].clone() };
            let hi = back_substitute(model, expr(), l - 1, input, &pre, &post, &relaxations, true);
            let lo = back_substitute(model, expr(), l - 1, input, &pre, &post, &relaxations, false);
            bounds.push(Interval::new(lo, hi));
        }
        if l < depth {
            relaxations.push(bounds.iter().map(relax).collect());
            post.push(bounds.iter().map(relu_bounds).collect());
        }
        pre.push(bounds);
    }
    NodeBounds { layers: pre }
}

/// Bounds `expr` (over the post-activation nodes of `layer`) by walking the
/// relations back to the inputs, keeping the tightest value seen at any depth.
#[allow(clippy::too_many_arguments)]
fn back_substitute(
    model: &NetworkModel,
    mut expr: Dense,
    mut layer: usize,
    input: &[Interval],
    pre: &[Vec<Interval>],
    post: &[Vec<Interval>],
    relaxations: &[Vec<ReluRelax>],
    upper: bool,
) -> Rational {
    let better = |a: Rational, b: Rational| if upper { a.min(b) } else { a.max(b) };
    let mut best: Option<Rational> = None;
    let mut keep = |v: Rational| {
        best = Some(match best.take() {
            None => v,
            Some(b) => better(b, v),
        })
    };
    while layer > 0 {
        keep(expr.bound(&post[layer - 1], upper));
        // through the ReLU
        let mut over_pre = Dense { coeffs: vec![Rational::zero(); expr.coeffs.len()], constant: expr.constant.clone() };
        for (i, c) in expr.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let rel = &relaxations[layer - 1][i];
            let (slope, intercept) = if c.is_positive() == upper { &rel.upper } else { &rel.lower };
            over_pre.coeffs[i] = c * slope;
            over_pre.constant += c * intercept;
        }
        keep(over_pre.bound(&pre[layer - 1], upper));
        // through the affine map
        let l = model.layer(layer);
        let mut next = Dense { coeffs: vec![Rational::zero(); l.cols()], constant: over_pre.constant.clone() };
        for (i, c) in over_pre.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            next.constant += c * &l.biases[i];
            for (k, w) in l.weights[i].iter().enumerate() {
                if !w.is_zero() {
                    next.coeffs[k] += c * w;
                }
            }
        }
        expr = next;
        layer -= 1;
    }
    keep(expr.bound(input, upper));
    best.expect("at least one bound")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;
    use crate::numeric::{int, rat};

    fn unit(lo: Rational, hi: Rational) -> Vec<Interval> {
        vec![Interval::new(lo, hi)]
    }

    const SHIFTED: &str = "inputs 1\nlayer 1 1 relu\n1\nbias -1/2\nlayer 2 1 identity\n1\n0\nbias 0 0\n";

    #[test]
    fn single_node_patterns() {
        let m = parse_model(SHIFTED).unwrap();
        let n = NodeId { layer: 1, index: 0 };
        for d in Domain::ALL {
            let (b, p) = forward(&m, d, &unit(int(0), rat(1, 2)));
            assert_eq!(p.get(n), Some(Flag::Inactive), "{d}");
            assert_eq!(b.post(n), Interval::point(int(0)));
            let (b, p) = forward(&m, d, &unit(int(0), int(1)));
            assert!(p.is_empty());
            assert_eq!(b.post(n), Interval::new(int(0), rat(1, 2)));
        }
    }

    // a = ReLU(x), b = ReLU(-x + 1), o1 = a - b, o0 = 0
    const TENT: &str = "inputs 1\nlayer 2 1 relu\n1\n-1\nbias 0 1\nlayer 2 2 identity\n0 0\n1 -1\nbias 0 0\n";

    #[test]
    fn quarter_boxes_are_exact_for_stable_nodes() {
        // Both nodes are stable on every quarter box [k/4, (k+1)/4], where
        // a - b = 2x - 1 has range [2k/4 - 1, (2k+2)/4 - 1].
        let m = parse_model(TENT).unwrap();
        for d in Domain::ALL {
            let (b, p) = forward(&m, d, &unit(int(0), int(1)));
            assert_eq!(b.outputs()[1], Interval::new(int(-1), int(1)), "{d}");
            assert_eq!(p.len(), 2);
            for k in 0..4 {
                let exact = Interval::new(rat(2 * k, 4) - int(1), rat(2 * k + 2, 4) - int(1));
                let (b, p) = forward(&m, d, &unit(rat(k, 4), rat(k + 1, 4)));
                assert_eq!(p.len(), 2);
                assert_eq!(b.outputs()[1], exact, "{d} quarter {k}");
            }
        }
        // boundary value 0 counts as active
        let (_, p) = forward(&m, Domain::Boxes, &unit(rat(1, 2), int(1)));
        assert_eq!(p.get(NodeId { layer: 1, index: 1 }), Some(Flag::Active));
    }

    #[test]
    fn relational_domains_keep_correlations() {
        // o1 = ReLU(x) + ReLU(1 - x) = 1 on [0, 1]; boxes only see [0, 2]
        let m = parse_model("inputs 1\nlayer 2 1 relu\n1\n-1\nbias 0 1\nlayer 2 2 identity\n0 0\n1 1\nbias 0 0\n").unwrap();
        let (b, _) = forward(&m, Domain::Boxes, &unit(int(0), int(1)));
        assert_eq!(b.outputs()[1], Interval::new(int(0), int(2)));
        for d in [Domain::Symbolic, Domain::DeepPoly] {
            let (b, _) = forward(&m, d, &unit(int(0), int(1)));
            assert_eq!(b.outputs()[1], Interval::point(int(1)), "{d}");
        }
    }

    #[test]
    fn deeppoly_triangle_relaxation() {
        let m = parse_model("inputs 1\nlayer 2 1 relu\n1\n-1\nbias 0 0\nlayer 2 2 identity\n0 0\n1/2 1/2\nbias 0 0\n").unwrap();
        // |x|/2 on [-1, 1] ranges over [0, 1/2]
        let (b, p) = forward(&m, Domain::DeepPoly, &unit(int(-1), int(1)));
        assert!(p.is_empty());
        let o = &b.outputs()[1];
        assert!(o.contains_interval(&Interval::new(int(0), rat(1, 2))));
        let (bb, _) = forward(&m, Domain::Boxes, &unit(int(-1), int(1)));
        assert!(bb.outputs()[1].contains_interval(o));
    }

    #[test]
    fn unique_classification_is_strict() {
        let mk = |a: (i64, i64), b: (i64, i64)| NodeBounds {
            layers: vec![vec![Interval::new(int(a.0), int(a.1)), Interval::new(int(b.0), int(b.1))]],
        };
        assert_eq!(uniquely_classified(&mk((2, 3), (0, 1))), Some(0));
        assert_eq!(uniquely_classified(&mk((0, 2), (1, 3))), None);
        assert_eq!(uniquely_classified(&mk((1, 2), (2, 3))), None);
        assert_eq!(uniquely_classified(&mk((0, 1), (2, 3))), Some(1));
    }

    #[test]
    fn pattern_subsumption() {
        let a = NodeId { layer: 1, index: 0 };
        let b = NodeId { layer: 1, index: 1 };
        let big = ActivationPattern::from_flags([(a, Flag::Active), (b, Flag::Inactive)]);
        let small = ActivationPattern::from_flags([(a, Flag::Active)]);
        assert!(big.is_subsumed_by(&small));
        assert!(!small.is_subsumed_by(&big));
        let other = ActivationPattern::from_flags([(a, Flag::Inactive)]);
        assert!(!big.is_subsumed_by(&other));
        assert!(big.is_subsumed_by(&ActivationPattern::empty()));
    }
}
