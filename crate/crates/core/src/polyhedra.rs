//! Constraint-form convex polyhedra over rational variables, with the backward
//! transfer functions used to compute outcome preimages.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::lp::{feasible_point, maximize, LpOutcome};
use crate::model::NetworkModel;
use crate::numeric::{Canon, Interval, LinExpr, LinIneq, Rational, Var};

/// Activation status of one hidden node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Flag {
    Active,
    Inactive,
}

/// Above this many constraints FM results get LP-based redundancy removal.
const FULL_PRUNE_THRESHOLD: usize = 64;

/// Conjunction of canonical inequalities. `empty` is set once a syntactic
/// contradiction (such as `1 ≤ 0`) has been added.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Polyhedron {
    ineqs: BTreeSet<LinIneq>,
    contradiction: bool,
}

/// Finite disjunction of polyhedra.
pub type PolySet = Vec<Polyhedron>;

impl Polyhedron {
    pub fn universe() -> Polyhedron {
        Polyhedron::default()
    }

    pub fn bottom() -> Polyhedron {
        Polyhedron { ineqs: BTreeSet::new(), contradiction: true }
    }

    pub fn from_constraints<I: IntoIterator<Item = Canon>>(cs: I) -> Polyhedron {
        let mut p = Polyhedron::universe();
        for c in cs {
            p.add(c);
        }
        p
    }

    pub fn add(&mut self, c: Canon) {
        match c {
            Canon::Tautology => {}
            Canon::Contradiction => {
                self.contradiction = true;
                self.ineqs.clear();
            }
            Canon::Ineq(i) => {
                if !self.contradiction {
                    self.ineqs.insert(i);
                }
            }
        }
    }

    pub fn ineqs(&self) -> impl Iterator<Item = &LinIneq> {
        self.ineqs.iter()
    }

    pub fn len(&self) -> usize {
        self.ineqs.len()
    }

    pub fn is_universe(&self) -> bool {
        !self.contradiction && self.ineqs.is_empty()
    }

    pub fn is_trivially_empty(&self) -> bool {
        self.contradiction
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        self.ineqs.iter().flat_map(|i| i.expr().vars()).collect()
    }

    pub fn contains(&self, point: &BTreeMap<Var, Rational>) -> Result<bool> {
        if self.contradiction {
            return Ok(false);
        }
        for i in &self.ineqs {
            if !i.holds_at(point)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn map_ineqs(&self, f: impl Fn(&LinExpr) -> LinExpr) -> Polyhedron {
        if self.contradiction {
            return Polyhedron::bottom();
        }
        Polyhedron::from_constraints(self.ineqs.iter().map(|i| i.map_expr(&f)))
    }

    /// Affine preimage of `node := rhs`: every occurrence of `node` replaced by `rhs`.
    pub fn backward_assign(&self, node: Var, rhs: &LinExpr) -> Polyhedron {
        self.map_ineqs(|e| e.substitute(node, rhs))
    }

    pub fn substitute_all(&self, values: &BTreeMap<Var, Rational>) -> Polyhedron {
        self.map_ineqs(|e| {
            let mut e = e.clone();
            for (v, x) in values {
                if e.mentions(*v) {
                    e = e.substitute(*v, &LinExpr::constant(x.clone()));
                }
            }
            e
        })
    }

    pub fn rename(&self, renames: &BTreeMap<Var, Var>) -> Polyhedron {
        self.map_ineqs(|e| {
            // Two-phase so that swaps cannot collide.
            let mut out = LinExpr::constant(e.constant_term().clone());
            for (v, c) in e.coeffs() {
                out.add_term(*renames.get(v).unwrap_or(v), c.clone());
            }
            out
        })
    }

    /// Backward ReLU over the post-activation variable `post`, introducing
    /// `pre`. Unknown status yields both branches; their union is the exact
    /// ReLU preimage. Syntactically empty branches are dropped.
    pub fn backward_relu(&self, post: Var, pre: Var, flag: Option<Flag>) -> PolySet {
        let active = || {
            let mut p = self.map_ineqs(|e| e.rename(post, pre));
            p.add(LinIneq::ge(&LinExpr::var(pre), &LinExpr::zero()));
            p
        };
        let inactive = || {
            let mut p = self.backward_assign(post, &LinExpr::zero());
            p.add(LinIneq::le(&LinExpr::var(pre), &LinExpr::zero()));
            p
        };
        let branches = match flag {
            Some(Flag::Active) => vec![active()],
            Some(Flag::Inactive) => vec![inactive()],
            None => vec![active(), inactive()],
        };
        branches.into_iter().filter(|p| !p.is_trivially_empty()).collect()
    }

    pub fn meet(&self, other: &Polyhedron) -> Polyhedron {
        if self.contradiction || other.contradiction {
            return Polyhedron::bottom();
        }
        let mut p = self.clone();
        p.ineqs.extend(other.ineqs.iter().cloned());
        p
    }

    pub fn meet_box(&self, bounds: &BTreeMap<Var, Interval>) -> Polyhedron {
        self.meet(&Polyhedron::from_box(bounds))
    }

    pub fn from_box(bounds: &BTreeMap<Var, Interval>) -> Polyhedron {
        Polyhedron::from_constraints(bounds.iter().flat_map(|(v, iv)| {
            [
                LinIneq::ge(&LinExpr::var(*v), &LinExpr::constant(iv.lo.clone())),
                LinIneq::le(&LinExpr::var(*v), &LinExpr::constant(iv.hi.clone())),
            ]
        }))
    }

    /// Exact test for the absence of rational points.
    pub fn is_empty(&self) -> bool {
        self.witness().is_none()
    }

    /// A point of the polyhedron, if any.
    pub fn witness(&self) -> Option<BTreeMap<Var, Rational>> {
        if self.contradiction {
            return None;
        }
        let cs: Vec<LinIneq> = self.ineqs.iter().cloned().collect();
        feasible_point(&cs)
    }

    pub fn maximize(&self, objective: &LinExpr) -> LpOutcome {
        if self.contradiction {
            return LpOutcome::Infeasible;
        }
        let cs: Vec<LinIneq> = self.ineqs.iter().cloned().collect();
        maximize(&cs, objective)
    }

    /// Exact per-variable extent.
    pub fn bounding_box(&self, vars: &[Var]) -> Result<BTreeMap<Var, Interval>> {
        let mut out = BTreeMap::new();
        for &v in vars {
            let hi = match self.maximize(&LinExpr::var(v)) {
                LpOutcome::Optimal { value, .. } => value,
                LpOutcome::Unbounded => return Err(Error::Unbounded(v)),
                LpOutcome::Infeasible => return Err(Error::Empty),
            };
            let lo = match self.maximize(&LinExpr::term(v, -Rational::one())) {
                LpOutcome::Optimal { value, .. } => -value,
                LpOutcome::Unbounded => return Err(Error::Unbounded(v)),
                LpOutcome::Infeasible => return Err(Error::Empty),
            };
            out.insert(v, Interval::new(lo, hi));
        }
        Ok(out)
    }

    /// Fourier–Motzkin elimination of `vars`: the exact shadow on the rest.
    pub fn project_out(&self, vars: &[Var]) -> Polyhedron {
        let mut p = self.clone();
        for &v in vars {
            if p.contradiction {
                break;
            }
            p = p.eliminate(v);
        }
        p
    }

    fn eliminate(&self, v: Var) -> Polyhedron {
        let (mut pos, mut neg, mut rest) = (Vec::new(), Vec::new(), Vec::new());
        for i in &self.ineqs {
            let c = i.expr().coeff(v);
            if c.is_positive() {
                pos.push((c, i));
            } else if c.is_negative() {
                neg.push((c, i));
            } else {
                rest.push(Canon::Ineq(i.clone()));
            }
        }
        for (cp, p) in &pos {
            for (cn, n) in &neg {
                // (-cn)·p + cp·n cancels v
                let mut e = p.expr().scaled(&-cn);
                e.add_scaled(n.expr(), cp);
                rest.push(LinIneq::le_zero(e));
            }
        }
        let mut out = Polyhedron::from_constraints(rest);
        out.prune_pairwise();
        if out.ineqs.len() > FULL_PRUNE_THRESHOLD {
            out.prune_redundant();
        }
        out
    }

    /// Among constraints with parallel normals keep only the tightest.
    pub fn prune_pairwise(&mut self) {
        if self.contradiction {
            return;
        }
        let mut best: BTreeMap<LinExpr, Rational> = BTreeMap::new();
        for i in &self.ineqs {
            // a·x + c ≤ 0 with g = gcd(a): (a/g)·x ≤ -c/g
            let mut g = BigInt::zero();
            for (_, a) in i.expr().coeffs() {
                g = g.gcd(a.numer());
            }
            let g = Rational::from_integer(g);
            let normal = LinExpr::from_terms(i.expr().coeffs().map(|(v, a)| (*v, a / &g)), Rational::zero());
            let rhs = -i.expr().constant_term() / &g;
            match best.get_mut(&normal) {
                Some(b) if *b <= rhs => {}
                Some(b) => *b = rhs,
                None => {
                    best.insert(normal, rhs);
                }
            }
        }
        self.ineqs.clear();
        for (normal, rhs) in best {
            let mut e = normal;
            e.add_constant(&-rhs);
            self.add(LinIneq::le_zero(e));
        }
    }

    /// Removes every constraint implied by the others (one LP each).
    pub fn prune_redundant(&mut self) {
        if self.contradiction {
            return;
        }
        let all: Vec<LinIneq> = self.ineqs.iter().cloned().collect();
        let mut kept: Vec<LinIneq> = all.clone();
        for i in all.iter().rev() {
            let others: Vec<LinIneq> = kept.iter().filter(|k| *k != i).cloned().collect();
            let mut obj = i.expr().clone();
            let c = obj.constant_term().clone();
            obj.add_constant(&-c.clone());
            // redundant iff max a·x over the others ≤ -c
            let redundant = match maximize(&others, &obj) {
                LpOutcome::Optimal { value, .. } => value <= -c,
                LpOutcome::Infeasible => true,
                LpOutcome::Unbounded => false,
            };
            if redundant {
                kept.retain(|k| k != i);
            }
        }
        self.ineqs = kept.into_iter().collect();
    }

    /// Whether the polyhedron has nonempty interior in the space of its own
    /// variables.
    pub fn is_full_dimensional(&self) -> bool {
        if self.contradiction {
            return false;
        }
        matches!(self.max_slack(), Some((s, _)) if s.is_positive())
    }

    /// max t subject to `a·x + c + t ≤ 0` for every constraint, with `t ≤ 1`.
    fn max_slack(&self) -> Option<(Rational, BTreeMap<Var, Rational>)> {
        let t = slack_var();
        let mut cs: Vec<LinIneq> = Vec::with_capacity(self.ineqs.len() + 1);
        for i in &self.ineqs {
            let mut e = i.expr().clone();
            e.add_term(t, Rational::one());
            if let Canon::Ineq(c) = LinIneq::le_zero(e) {
                cs.push(c);
            }
        }
        if let Canon::Ineq(c) = LinIneq::le(&LinExpr::var(t), &LinExpr::constant(Rational::one())) {
            cs.push(c);
        }
        match maximize(&cs, &LinExpr::var(t)) {
            LpOutcome::Optimal { value, mut point } => {
                if value.is_negative() {
                    return None;
                }
                point.remove(&t);
                Some((value, point))
            }
            _ => None,
        }
    }

    /// A point in the relative interior: every constraint that is not an
    /// implicit equality holds strictly there.
    pub fn relative_interior_point(&self) -> Option<BTreeMap<Var, Rational>> {
        let (slack, point) = self.max_slack()?;
        if slack.is_positive() || self.ineqs.is_empty() {
            return Some(point);
        }
        let cs: Vec<LinIneq> = self.ineqs.iter().cloned().collect();
        let mut strict_points: Vec<BTreeMap<Var, Rational>> = Vec::new();
        for i in &cs {
            // maximize -(a·x + c); zero means `i` is tight everywhere
            match maximize(&cs, &i.expr().scaled(&-Rational::one())) {
                LpOutcome::Optimal { value, point } if value.is_positive() => strict_points.push(point),
                LpOutcome::Unbounded => {
                    let mut bounded = cs.clone();
                    if let Canon::Ineq(c) = LinIneq::ge(i.expr(), &LinExpr::constant(-Rational::one())) {
                        bounded.push(c);
                    }
                    if let LpOutcome::Optimal { point, .. } = maximize(&bounded, &i.expr().scaled(&-Rational::one())) {
                        strict_points.push(point);
                    }
                }
                _ => {}
            }
        }
        if strict_points.is_empty() {
            return Some(point);
        }
        let vars = self.vars();
        let k = Rational::from_integer(BigInt::from(strict_points.len()));
        Some(
            vars.into_iter()
                .map(|v| {
                    let sum = strict_points
                        .iter()
                        .fold(Rational::zero(), |acc, p| acc + p.get(&v).cloned().unwrap_or_else(Rational::zero));
                    (v, sum / &k)
                })
                .collect(),
        )
    }
}

fn slack_var() -> Var {
    Var { layer: u32::MAX, index: u32::MAX, stage: crate::numeric::Stage::Post }
}

impl fmt::Display for Polyhedron {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.contradiction {
            return write!(f, "{{ ⊥ }}");
        }
        write!(f, "{{ ")?;
        for (k, i) in self.ineqs.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, " }}")
    }
}

/// `{ o_j − o_i ≥ 0 : i ≠ j }` over the output variables (ties included).
pub fn assume_outcome(model: &NetworkModel, class: usize) -> Polyhedron {
    let out_layer = model.depth();
    let oj = LinExpr::var(Var::post(out_layer, class));
    Polyhedron::from_constraints(
        (0..model.output_size())
            .filter(|&i| i != class)
            .map(|i| LinIneq::ge(&oj, &LinExpr::var(Var::post(out_layer, i)))),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;
    use crate::numeric::{int, rat};

    fn x() -> Var {
        Var::input(0)
    }
    fn y() -> Var {
        Var::input(1)
    }
    fn v(e: LinExpr) -> LinExpr {
        e
    }
    fn le(terms: &[(Var, Rational)], c: Rational) -> Canon {
        // Σ terms ≤ c
        LinIneq::le(&LinExpr::from_terms(terms.iter().cloned(), int(0)), &LinExpr::constant(c))
    }
    fn ge(terms: &[(Var, Rational)], c: Rational) -> Canon {
        LinIneq::ge(&LinExpr::from_terms(terms.iter().cloned(), int(0)), &LinExpr::constant(c))
    }

    #[test]
    fn outcome_polyhedra() {
        let m = parse_model("inputs 1\nlayer 3 1 identity\n1\n1\n1\nbias 0 0 0\n").unwrap();
        let p = assume_outcome(&m, 2);
        assert_eq!(p.len(), 2);
        let two = parse_model("inputs 1\nlayer 2 1 identity\n1\n-1\nbias 0 1\n").unwrap();
        let a = assume_outcome(&two, 0);
        let b = assume_outcome(&two, 1);
        assert_eq!(a.len(), 1);
        // intersection is the tie hyperplane o0 = o1
        let tie = a.meet(&b);
        let o0 = Var::post(1, 0);
        let o1 = Var::post(1, 1);
        let on: BTreeMap<_, _> = [(o0, int(1)), (o1, int(1))].into_iter().collect();
        let off: BTreeMap<_, _> = [(o0, int(1)), (o1, int(2))].into_iter().collect();
        assert!(tie.contains(&on).unwrap());
        assert!(!tie.contains(&off).unwrap());
        assert!(!tie.is_full_dimensional());
    }

    #[test]
    fn backward_assign_examples() {
        let n = Var::post(1, 0);
        let m = Var::post(1, 1);
        let p = Polyhedron::from_constraints([le(&[(n, int(1))], int(1))]);
        let q = p.backward_assign(n, &LinExpr::from_terms([(x(), int(2))], int(1)));
        assert_eq!(q, Polyhedron::from_constraints([le(&[(x(), int(1))], int(0))]));

        let p = Polyhedron::from_constraints([ge(&[(n, int(1)), (m, int(-1))], int(0))]);
        assert!(p.backward_assign(n, &v(LinExpr::var(m))).is_universe());

        let p = Polyhedron::from_constraints([ge(&[(n, int(1))], rat(1, 2))]);
        let rhs = LinExpr::from_terms([(x(), rat(-31, 100)), (y(), rat(99, 100))], rat(-63, 100));
        let q = p.backward_assign(n, &rhs);
        assert_eq!(q, Polyhedron::from_constraints([ge(&[(x(), int(-31)), (y(), int(99))], int(113))]));
    }

    #[test]
    fn backward_relu_examples() {
        let n = Var::post(1, 0);
        let pre = Var::pre(1, 0);
        let p = Polyhedron::from_constraints([ge(&[(n, int(1))], int(1))]);
        let act = p.backward_relu(n, pre, Some(Flag::Active));
        assert_eq!(act.len(), 1);
        let mut expect = Polyhedron::from_constraints([ge(&[(pre, int(1))], int(1)), ge(&[(pre, int(1))], int(0))]);
        assert_eq!(act[0], expect);
        expect.prune_pairwise();
        let mut got = act[0].clone();
        got.prune_pairwise();
        assert_eq!(got, Polyhedron::from_constraints([ge(&[(pre, int(1))], int(1))]));

        assert!(p.backward_relu(n, pre, Some(Flag::Inactive)).is_empty());

        let p = Polyhedron::from_constraints([le(&[(n, int(1))], int(1))]);
        let both = p.backward_relu(n, pre, None);
        assert_eq!(both.len(), 2);
        // union is exactly pre ≤ 1
        for k in -8..=16 {
            let val = rat(k, 4);
            let pt: BTreeMap<_, _> = [(pre, val.clone())].into_iter().collect();
            let inside = both.iter().any(|d| d.contains(&pt).unwrap());
            assert_eq!(inside, val <= int(1), "pre = {val}");
        }
    }

    #[test]
    fn meet_examples() {
        let a = Polyhedron::from_constraints([le(&[(x(), int(1))], int(1))]);
        let b = Polyhedron::from_constraints([ge(&[(x(), int(1))], int(0))]);
        assert_eq!(a.meet(&b).len(), 2);
        let bot = Polyhedron::from_constraints([ge(&[], int(1))]);
        assert!(a.meet(&bot).is_empty());
        let bx: BTreeMap<_, _> =
            [(x(), Interval::new(int(0), int(1))), (y(), Interval::new(int(0), int(1)))].into_iter().collect();
        let tri = Polyhedron::from_constraints([le(&[(x(), int(1)), (y(), int(1))], int(1))]).meet_box(&bx);
        let inside: BTreeMap<_, _> = [(x(), rat(1, 4)), (y(), rat(1, 2))].into_iter().collect();
        let outside: BTreeMap<_, _> = [(x(), rat(3, 4)), (y(), rat(1, 2))].into_iter().collect();
        assert!(tri.contains(&inside).unwrap());
        assert!(!tri.contains(&outside).unwrap());
    }

    #[test]
    fn projection_examples() {
        let tri = Polyhedron::from_constraints([
            le(&[(x(), int(1)), (y(), int(1))], int(1)),
            ge(&[(x(), int(1))], int(0)),
            ge(&[(y(), int(1))], int(0)),
        ]);
        let shadow = tri.project_out(&[y()]);
        assert_eq!(
            shadow,
            Polyhedron::from_constraints([ge(&[(x(), int(1))], int(0)), le(&[(x(), int(1))], int(1))])
        );
        let line = Polyhedron::from_constraints([
            ge(&[(y(), int(1)), (x(), int(-1))], int(0)),
            le(&[(y(), int(1)), (x(), int(-1))], int(0)),
        ]);
        assert!(line.project_out(&[y()]).is_universe());
    }

    #[test]
    fn emptiness_examples() {
        let p = Polyhedron::from_constraints([le(&[(x(), int(1))], int(0)), ge(&[(x(), int(1))], int(1))]);
        assert!(p.is_empty());
        assert!(!Polyhedron::from_constraints([ge(&[(x(), int(1))], int(0))]).is_empty());
        let p = Polyhedron::from_constraints([
            le(&[(x(), int(1)), (y(), int(1))], int(1)),
            ge(&[(x(), int(1))], rat(3, 4)),
            ge(&[(y(), int(1))], rat(3, 4)),
        ]);
        assert!(p.is_empty());
    }

    #[test]
    fn bounding_box_examples() {
        let nonneg = [ge(&[(x(), int(1))], int(0)), ge(&[(y(), int(1))], int(0))];
        let tri = Polyhedron::from_constraints(
            nonneg.iter().cloned().chain([le(&[(x(), int(1)), (y(), int(1))], int(1))]),
        );
        let bb = tri.bounding_box(&[x(), y()]).unwrap();
        assert_eq!(bb[&x()], Interval::new(int(0), int(1)));
        assert_eq!(bb[&y()], Interval::new(int(0), int(1)));

        let seg = Polyhedron::from_constraints([
            ge(&[(x(), int(1)), (y(), int(-1))], int(0)),
            le(&[(x(), int(1)), (y(), int(-1))], int(0)),
            ge(&[(x(), int(1))], int(0)),
            le(&[(x(), int(1))], rat(1, 2)),
        ]);
        let bb = seg.bounding_box(&[x(), y()]).unwrap();
        assert_eq!(bb[&y()], Interval::new(int(0), rat(1, 2)));

        let p = Polyhedron::from_constraints(
            nonneg.iter().cloned().chain([le(&[(x(), int(2)), (y(), int(1))], int(2))]),
        );
        let bb = p.bounding_box(&[x(), y()]).unwrap();
        assert_eq!(bb[&x()], Interval::new(int(0), int(1)));
        assert_eq!(bb[&y()], Interval::new(int(0), int(2)));

        let half = Polyhedron::from_constraints([ge(&[(x(), int(1))], int(0))]);
        assert!(matches!(half.bounding_box(&[x()]), Err(Error::Unbounded(_))));
    }

    #[test]
    fn relative_interior_of_a_segment_is_strict_elsewhere() {
        // x = y, 0 ≤ x ≤ 1
        let seg = Polyhedron::from_constraints([
            ge(&[(x(), int(1)), (y(), int(-1))], int(0)),
            le(&[(x(), int(1)), (y(), int(-1))], int(0)),
            ge(&[(x(), int(1))], int(0)),
            le(&[(x(), int(1))], int(1)),
        ]);
        assert!(!seg.is_full_dimensional());
        let p = seg.relative_interior_point().unwrap();
        assert!(seg.contains(&p).unwrap());
        assert!(p[&x()] > int(0) && p[&x()] < int(1));
    }

    #[test]
    fn redundancy_pruning_keeps_the_set() {
        let mut p = Polyhedron::from_constraints([
            le(&[(x(), int(1))], int(1)),
            le(&[(x(), int(1))], int(2)),
            le(&[(x(), int(1)), (y(), int(1))], int(5)),
            ge(&[(x(), int(1))], int(0)),
            ge(&[(y(), int(1))], int(0)),
            le(&[(y(), int(1))], int(1)),
        ]);
        p.prune_pairwise();
        assert_eq!(p.len(), 5);
        p.prune_redundant();
        assert_eq!(p.len(), 4);
    }
}
