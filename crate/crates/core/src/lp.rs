//! Exact rational simplex over `A·x ≤ b` with free variables.
//!
//! Dictionary form: free variables are pivoted into the basis first and never
//! leave it; the remaining rows are slack rows with nonnegative basics. Phase 1
//! uses a single auxiliary variable, both phases pivot with Bland's rule so
//! degenerate problems terminate.

use std::collections::BTreeMap;

use num_traits::{One, Signed, Zero};

use crate::numeric::{LinExpr, LinIneq, Rational, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LpOutcome {
    Infeasible,
    Unbounded,
    Optimal { value: Rational, point: BTreeMap<Var, Rational> },
}

struct Dictionary {
    /// Basic variable of each row.
    basic: Vec<usize>,
    /// Nonbasic variable of each column.
    nonbasic: Vec<usize>,
    consts: Vec<Rational>,
    coeffs: Vec<Vec<Rational>>,
    /// Number of free (original) variables; ids `0..free`.
    free: usize,
}

impl Dictionary {
    fn is_free(&self, var: usize) -> bool {
        var < self.free
    }

    fn pivot(&mut self, row: usize, col: usize, obj: &mut Option<(&mut Rational, &mut Vec<Rational>)>) {
        let a = self.coeffs[row][col].clone();
        let inv = a.recip();
        let neg_inv = -&inv;
        // Solve row for the entering variable.
        let d = &self.consts[row] * &neg_inv;
        self.consts[row] = d;
        for k in 0..self.nonbasic.len() {
            if k == col {
                self.coeffs[row][k] = inv.clone();
            } else if !self.coeffs[row][k].is_zero() {
                self.coeffs[row][k] = &self.coeffs[row][k] * &neg_inv;
            }
        }
        let pivot_row = self.coeffs[row].clone();
        let pivot_const = self.consts[row].clone();
        let substitute = |c: &mut Rational, r: &mut Vec<Rational>| {
            let t = std::mem::take(&mut r[col]);
            if t.is_zero() {
                return;
            }
            *c += &t * &pivot_const;
            for (k, p) in pivot_row.iter().enumerate() {
                if k == col {
                    r[k] = &t * p;
                } else if !p.is_zero() {
                    r[k] += &t * p;
                }
            }
        };
        for i in 0..self.basic.len() {
            if i != row {
                let (c, r) = (&mut self.consts[i], &mut self.coeffs[i]);
                substitute(c, r);
            }
        }
        if let Some((c, r)) = obj.as_mut() {
            substitute(c, r);
        }
        std::mem::swap(&mut self.basic[row], &mut self.nonbasic[col]);
    }

    /// Bland's-rule simplex maximizing `obj`; returns false when unbounded.
    fn optimize(&mut self, obj_const: &mut Rational, obj: &mut Vec<Rational>) -> bool {
        loop {
            let entering = (0..self.nonbasic.len())
                .filter(|&k| obj[k].is_positive() && !self.is_free(self.nonbasic[k]))
                .min_by_key(|&k| self.nonbasic[k]);
            let Some(col) = entering else { return true };
            let mut best: Option<(usize, Rational)> = None;
            for r in 0..self.basic.len() {
                if self.is_free(self.basic[r]) || !self.coeffs[r][col].is_negative() {
                    continue;
                }
                let ratio = &self.consts[r] / -&self.coeffs[r][col];
                let better = match &best {
                    None => true,
                    Some((br, bv)) => ratio < *bv || (ratio == *bv && self.basic[r] < self.basic[*br]),
                };
                if better {
                    best = Some((r, ratio));
                }
            }
            let Some((row, _)) = best else { return false };
            self.pivot(row, col, &mut Some((obj_const, obj)));
        }
    }
}

fn build(constraints: &[LinIneq], objective: Option<&LinExpr>) -> (Vec<Var>, Dictionary) {
    let mut vars: Vec<Var> = constraints.iter().flat_map(|c| c.expr().vars()).collect();
    if let Some(o) = objective {
        vars.extend(o.vars());
    }
    vars.sort();
    vars.dedup();
    let index: BTreeMap<Var, usize> = vars.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let n = vars.len();
    let m = constraints.len();
    let mut consts = Vec::with_capacity(m);
    let mut coeffs = Vec::with_capacity(m);
    for c in constraints {
        // a·x + c0 ≤ 0  ⇔  s = -c0 - a·x ≥ 0
        consts.push(-c.expr().constant_term().clone());
        let mut row = vec![Rational::zero(); n];
        for (v, a) in c.expr().coeffs() {
            row[index[v]] = -a.clone();
        }
        coeffs.push(row);
    }
    let dict = Dictionary { basic: (n..n + m).collect(), nonbasic: (0..n).collect(), consts, coeffs, free: n };
    (vars, dict)
}

/// Phase 0 and phase 1. Returns false when the constraints are infeasible.
fn make_feasible(d: &mut Dictionary) -> bool {
    // Pivot every free variable into the basis where possible.
    for col in 0..d.nonbasic.len() {
        if !d.is_free(d.nonbasic[col]) {
            continue;
        }
        let row = (0..d.basic.len()).find(|&r| !d.is_free(d.basic[r]) && !d.coeffs[r][col].is_zero());
        if let Some(row) = row {
            d.pivot(row, col, &mut None);
        }
    }
    let worst = (0..d.basic.len())
        .filter(|&r| !d.is_free(d.basic[r]) && d.consts[r].is_negative())
        .min_by(|&a, &b| d.consts[a].cmp(&d.consts[b]).then(d.basic[a].cmp(&d.basic[b])));
    let Some(worst) = worst else { return true };

    // Auxiliary variable with the largest id; maximize -aux.
    let aux = d.free + d.basic.len() + d.nonbasic.len();
    d.nonbasic.push(aux);
    let aux_col = d.nonbasic.len() - 1;
    for r in 0..d.basic.len() {
        let c = if d.is_free(d.basic[r]) { Rational::zero() } else { Rational::one() };
        d.coeffs[r].push(c);
    }
    let mut obj = vec![Rational::zero(); d.nonbasic.len()];
    obj[aux_col] = -Rational::one();
    let mut obj_const = Rational::zero();
    d.pivot(worst, aux_col, &mut Some((&mut obj_const, &mut obj)));
    let bounded = d.optimize(&mut obj_const, &mut obj);
    debug_assert!(bounded, "phase 1 objective is bounded by 0");
    if obj_const.is_negative() {
        return false;
    }
    // Drive the auxiliary variable out of the basis, then drop its column.
    if let Some(row) = d.basic.iter().position(|&b| b == aux) {
        let col = (0..d.nonbasic.len()).find(|&k| !d.coeffs[row][k].is_zero() && d.nonbasic[k] != aux);
        match col {
            Some(col) => d.pivot(row, col, &mut None),
            None => {
                // Row reads aux = 0 identically.
                d.basic.remove(row);
                d.consts.remove(row);
                d.coeffs.remove(row);
            }
        }
    }
    let col = d.nonbasic.iter().position(|&v| v == aux).expect("aux is nonbasic");
    d.nonbasic.remove(col);
    for r in d.coeffs.iter_mut() {
        r.remove(col);
    }
    true
}

fn read_point(vars: &[Var], d: &Dictionary) -> BTreeMap<Var, Rational> {
    let mut point: BTreeMap<Var, Rational> = vars.iter().map(|v| (*v, Rational::zero())).collect();
    for (r, &b) in d.basic.iter().enumerate() {
        if d.is_free(b) {
            point.insert(vars[b], d.consts[r].clone());
        }
    }
    point
}

/// Maximizes `objective` subject to every `expr ≤ 0` in `constraints`.
pub fn maximize(constraints: &[LinIneq], objective: &LinExpr) -> LpOutcome {
    let (vars, mut d) = build(constraints, Some(objective));
    if !make_feasible(&mut d) {
        return LpOutcome::Infeasible;
    }
    // Objective in terms of the current nonbasic variables.
    let mut obj_const = objective.constant_term().clone();
    let mut obj = vec![Rational::zero(); d.nonbasic.len()];
    let col_of: BTreeMap<usize, usize> = d.nonbasic.iter().enumerate().map(|(k, v)| (*v, k)).collect();
    let row_of: BTreeMap<usize, usize> = d.basic.iter().enumerate().map(|(r, v)| (*v, r)).collect();
    for (i, v) in vars.iter().enumerate() {
        let c = objective.coeff(*v);
        if c.is_zero() {
            continue;
        }
        if let Some(&k) = col_of.get(&i) {
            obj[k] += c;
        } else {
            let r = row_of[&i];
            obj_const += &c * &d.consts[r];
            for (k, a) in d.coeffs[r].iter().enumerate() {
                if !a.is_zero() {
                    obj[k] += &c * a;
                }
            }
        }
    }
    // A free variable left nonbasic is unconstrained.
    if (0..d.nonbasic.len()).any(|k| d.is_free(d.nonbasic[k]) && !obj[k].is_zero()) {
        return LpOutcome::Unbounded;
    }
    if !d.optimize(&mut obj_const, &mut obj) {
        return LpOutcome::Unbounded;
    }
    let point = read_point(&vars, &d);
    debug_assert_eq!(objective.eval(&point).ok(), Some(obj_const.clone()));
    LpOutcome::Optimal { value: obj_const, point }
}

/// A point satisfying every constraint, or `None` when there is none.
pub fn feasible_point(constraints: &[LinIneq]) -> Option<BTreeMap<Var, Rational>> {
    let (vars, mut d) = build(constraints, None);
    if !make_feasible(&mut d) {
        return None;
    }
    Some(read_point(&vars, &d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{int, rat, Canon};

    fn ineq(terms: &[(usize, i64)], c: Rational) -> LinIneq {
        let e = LinExpr::from_terms(terms.iter().map(|(v, a)| (Var::input(*v), int(*a))), c);
        match LinIneq::le_zero(e) {
            Canon::Ineq(i) => i,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn maximizes_over_triangle() {
        // x + y ≤ 1, x ≥ 0, y ≥ 0; max 2x + y = 2 at (1, 0)
        let cs = vec![ineq(&[(0, 1), (1, 1)], int(-1)), ineq(&[(0, -1)], int(0)), ineq(&[(1, -1)], int(0))];
        let obj = LinExpr::from_terms([(Var::input(0), int(2)), (Var::input(1), int(1))], int(0));
        match maximize(&cs, &obj) {
            LpOutcome::Optimal { value, point } => {
                assert_eq!(value, int(2));
                assert_eq!(point[&Var::input(0)], int(1));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let cs = vec![ineq(&[(0, 1)], int(0)), ineq(&[(0, -1)], int(1))];
        assert_eq!(feasible_point(&cs), None);
        let cs = vec![ineq(&[(0, -1)], int(0))];
        assert_eq!(maximize(&cs, &LinExpr::var(Var::input(0))), LpOutcome::Unbounded);
        // objective variable absent from constraints
        let cs = vec![ineq(&[(0, -1)], int(0))];
        assert_eq!(maximize(&cs, &LinExpr::var(Var::input(1))), LpOutcome::Unbounded);
    }

    #[test]
    fn negative_optimum_with_free_variables() {
        // x ≥ -3/2 (x free), minimize x
        let cs = vec![ineq(&[(0, -2)], int(-3))];
        match maximize(&cs, &LinExpr::term(Var::input(0), int(-1))) {
            LpOutcome::Optimal { value, .. } => assert_eq!(value, rat(3, 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn degenerate_system_terminates() {
        // many constraints through the origin
        let mut cs = Vec::new();
        for a in -3..=3 {
            cs.push(ineq(&[(0, a), (1, 1), (2, -1)], int(0)));
            cs.push(ineq(&[(0, 1), (1, a), (2, 1)], int(0)));
        }
        cs.push(ineq(&[(2, 1)], int(-1)));
        cs.push(ineq(&[(2, -1)], int(-1)));
        let obj = LinExpr::from_terms([(Var::input(0), int(1)), (Var::input(1), int(1))], int(0));
        let out = maximize(&cs, &obj);
        if let LpOutcome::Optimal { point, .. } = &out {
            for c in &cs {
                assert!(c.holds_at(point).unwrap());
            }
        }
    }

    #[test]
    fn feasible_point_satisfies_constraints() {
        let cs = vec![ineq(&[(0, 1), (1, 1)], int(-1)), ineq(&[(0, -4)], int(3)), ineq(&[(1, -1)], int(0))];
        let p = feasible_point(&cs).unwrap();
        for c in &cs {
            assert!(c.holds_at(&p).unwrap());
        }
    }
}
