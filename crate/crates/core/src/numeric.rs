//! Exact rational arithmetic and sparse affine expressions.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};

pub type Rational = BigRational;

pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Parses `[-+]digits[.digits]` or `[-+]p/q` into an exact rational.
/// Decimal tokens are read as decimal fractions, never through binary floats.
pub fn parse_rational(token: &str) -> Option<Rational> {
    let (neg, body) = match token.as_bytes().first()? {
        b'-' => (true, &token[1..]),
        b'+' => (false, &token[1..]),
        _ => (false, token),
    };
    let value = if let Some((p, q)) = body.split_once('/') {
        if !is_digits(p) || !is_digits(q) {
            return None;
        }
        let q: BigInt = q.parse().ok()?;
        if q.is_zero() {
            return None;
        }
        Rational::new(p.parse().ok()?, q)
    } else if let Some((whole, frac)) = body.split_once('.') {
        if !is_digits(whole) || !is_digits(frac) {
            return None;
        }
        let digits: BigInt = format!("{whole}{frac}").parse().ok()?;
        let scale = num_traits::pow(BigInt::from(10), frac.len());
        Rational::new(digits, scale)
    } else {
        if !is_digits(body) {
            return None;
        }
        Rational::from_integer(body.parse().ok()?)
    };
    Some(if neg { -value } else { value })
}

fn is_digits(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

/// Always `p/q`, including integers (`0/1`, `3/1`).
pub fn fmt_exact(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn to_f64(r: &Rational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}

/// Fixed six-digit decimal rendering, computed exactly (round half away from zero).
pub fn fmt_decimal(r: &Rational) -> String {
    let scaled = r * Rational::from_integer(BigInt::from(1_000_000));
    let rounded = scaled.round().to_integer();
    let neg = rounded.is_negative();
    let abs = rounded.abs();
    let (whole, frac) = abs.div_rem(&BigInt::from(1_000_000));
    format!("{}{}.{:06}", if neg { "-" } else { "" }, whole, frac)
}

/// Which value of a network node a variable stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    /// Post-activation value (inputs and outputs only have this stage).
    Post,
    /// Pre-activation value of a hidden ReLU node.
    Pre,
    /// Renamed copy of an input node, used when two input points share
    /// their non-sensitive coordinates.
    Copy(u8),
}

/// A variable of the linear-constraint domains: node `index` of layer `layer`
/// (layer 0 holds the inputs).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var {
    pub layer: u32,
    pub index: u32,
    pub stage: Stage,
}

impl Var {
    pub fn input(index: usize) -> Var {
        Var { layer: 0, index: index as u32, stage: Stage::Post }
    }

    pub fn post(layer: usize, index: usize) -> Var {
        Var { layer: layer as u32, index: index as u32, stage: Stage::Post }
    }

    pub fn pre(layer: usize, index: usize) -> Var {
        Var { layer: layer as u32, index: index as u32, stage: Stage::Pre }
    }

    pub fn copy(self, tag: u8) -> Var {
        Var { stage: Stage::Copy(tag), ..self }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stage {
            Stage::Post => write!(f, "x{}_{}", self.layer, self.index),
            Stage::Pre => write!(f, "x{}_{}'", self.layer, self.index),
            Stage::Copy(t) => write!(f, "x{}_{}#{}", self.layer, self.index, t),
        }
    }
}

/// Closed rational interval.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Interval {
    pub lo: Rational,
    pub hi: Rational,
}

impl Interval {
    pub fn new(lo: Rational, hi: Rational) -> Interval {
        debug_assert!(lo <= hi, "empty interval");
        Interval { lo, hi }
    }

    pub fn point(v: Rational) -> Interval {
        Interval { lo: v.clone(), hi: v }
    }

    pub fn width(&self) -> Rational {
        &self.hi - &self.lo
    }

    pub fn contains(&self, v: &Rational) -> bool {
        &self.lo <= v && v <= &self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// `coeff * self`, endpoints swapped for negative coefficients.
    pub fn scale(&self, coeff: &Rational) -> Interval {
        if coeff.is_negative() {
            Interval { lo: coeff * &self.hi, hi: coeff * &self.lo }
        } else {
            Interval { lo: coeff * &self.lo, hi: coeff * &self.hi }
        }
    }

    pub fn add(&self, other: &Interval) -> Interval {
        Interval { lo: &self.lo + &other.lo, hi: &self.hi + &other.hi }
    }

    pub fn meet(&self, other: &Interval) -> Interval {
        let lo = (&self.lo).max(&other.lo).clone();
        let hi = (&self.hi).min(&other.hi).clone();
        Interval { lo, hi }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Sparse affine form `Σ coeff·var + constant`. Zero coefficients are never stored.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinExpr {
    coeffs: BTreeMap<Var, Rational>,
    constant: Rational,
}

impl LinExpr {
    pub fn zero() -> LinExpr {
        LinExpr::default()
    }

    pub fn constant(c: Rational) -> LinExpr {
        LinExpr { coeffs: BTreeMap::new(), constant: c }
    }

    pub fn var(v: Var) -> LinExpr {
        LinExpr::term(v, Rational::one())
    }

    pub fn term(v: Var, c: Rational) -> LinExpr {
        let mut e = LinExpr::zero();
        e.add_term(v, c);
        e
    }

    pub fn from_terms<I>(terms: I, constant: Rational) -> LinExpr
    where
        I: IntoIterator<Item = (Var, Rational)>,
    {
        let mut e = LinExpr::constant(constant);
        for (v, c) in terms {
            e.add_term(v, c);
        }
        e
    }

    pub fn add_term(&mut self, v: Var, c: Rational) {
        if c.is_zero() {
            return;
        }
        let slot = self.coeffs.entry(v).or_insert_with(Rational::zero);
        *slot += c;
        if slot.is_zero() {
            self.coeffs.remove(&v);
        }
    }

    pub fn add_constant(&mut self, c: &Rational) {
        self.constant += c;
    }

    pub fn coeff(&self, v: Var) -> Rational {
        self.coeffs.get(&v).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn coeffs(&self) -> impl Iterator<Item = (&Var, &Rational)> {
        self.coeffs.iter()
    }

    pub fn constant_term(&self) -> &Rational {
        &self.constant
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.coeffs.keys().copied()
    }

    pub fn mentions(&self, v: Var) -> bool {
        self.coeffs.contains_key(&v)
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn scaled(&self, k: &Rational) -> LinExpr {
        if k.is_zero() {
            return LinExpr::zero();
        }
        LinExpr {
            coeffs: self.coeffs.iter().map(|(v, c)| (*v, c * k)).collect(),
            constant: &self.constant * k,
        }
    }

    pub fn add_scaled(&mut self, other: &LinExpr, k: &Rational) {
        for (v, c) in &other.coeffs {
            self.add_term(*v, c * k);
        }
        self.constant += &other.constant * k;
    }

    pub fn plus(&self, other: &LinExpr) -> LinExpr {
        let mut e = self.clone();
        e.add_scaled(other, &Rational::one());
        e
    }

    pub fn minus(&self, other: &LinExpr) -> LinExpr {
        let mut e = self.clone();
        e.add_scaled(other, &-Rational::one());
        e
    }

    /// Replaces every occurrence of `v` by `replacement`.
    pub fn substitute(&self, v: Var, replacement: &LinExpr) -> LinExpr {
        match self.coeffs.get(&v) {
            None => self.clone(),
            Some(c) => {
                let c = c.clone();
                let mut e = self.clone();
                e.coeffs.remove(&v);
                e.add_scaled(replacement, &c);
                e
            }
        }
    }

    /// Renames variable `from` to `to` (adding onto an existing `to` term).
    pub fn rename(&self, from: Var, to: Var) -> LinExpr {
        self.substitute(from, &LinExpr::var(to))
    }

    pub fn eval(&self, point: &BTreeMap<Var, Rational>) -> Result<Rational> {
        let mut acc = self.constant.clone();
        for (v, c) in &self.coeffs {
            let x = point.get(v).ok_or(Error::MissingVariable(*v))?;
            acc += c * x;
        }
        Ok(acc)
    }

    /// Exact range of the affine form over a box.
    pub fn interval_of(&self, bounds: &BTreeMap<Var, Interval>) -> Result<Interval> {
        let mut acc = Interval::point(self.constant.clone());
        for (v, c) in &self.coeffs {
            let iv = bounds.get(v).ok_or(Error::MissingVariable(*v))?;
            acc = acc.add(&iv.scale(c));
        }
        Ok(acc)
    }
}

impl fmt::Display for LinExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (v, c) in &self.coeffs {
            if first {
                write!(f, "{c}·{v}")?;
            } else if c.is_negative() {
                write!(f, " - {}·{v}", -c)?;
            } else {
                write!(f, " + {c}·{v}")?;
            }
            first = false;
        }
        if first {
            write!(f, "{}", self.constant)
        } else if self.constant.is_negative() {
            write!(f, " - {}", -&self.constant)
        } else if !self.constant.is_zero() {
            write!(f, " + {}", self.constant)
        } else {
            Ok(())
        }
    }
}

/// Outcome of canonicalizing a constraint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Canon {
    Tautology,
    Contradiction,
    Ineq(LinIneq),
}

/// Half-space `expr ≤ 0` with integer coefficients whose gcd (constant
/// included) is 1, so every half-space has exactly one representative.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinIneq {
    expr: LinExpr,
}

impl LinIneq {
    /// `expr ≤ 0`.
    pub fn le_zero(expr: LinExpr) -> Canon {
        if expr.is_constant() {
            return if expr.constant.is_positive() {
                Canon::Contradiction
            } else {
                Canon::Tautology
            };
        }
        let mut lcm = BigInt::one();
        for c in expr.coeffs.values().chain(std::iter::once(&expr.constant)) {
            lcm = lcm.lcm(c.denom());
        }
        let lcm = Rational::from_integer(lcm);
        let mut gcd = BigInt::zero();
        for c in expr.coeffs.values().chain(std::iter::once(&expr.constant)) {
            gcd = gcd.gcd(&(c * &lcm).to_integer());
        }
        let k = lcm / Rational::from_integer(gcd);
        Canon::Ineq(LinIneq { expr: expr.scaled(&k) })
    }

    /// `lhs ≤ rhs`.
    pub fn le(lhs: &LinExpr, rhs: &LinExpr) -> Canon {
        LinIneq::le_zero(lhs.minus(rhs))
    }

    /// `lhs ≥ rhs`.
    pub fn ge(lhs: &LinExpr, rhs: &LinExpr) -> Canon {
        LinIneq::le_zero(rhs.minus(lhs))
    }

    pub fn expr(&self) -> &LinExpr {
        &self.expr
    }

    pub fn holds_at(&self, point: &BTreeMap<Var, Rational>) -> Result<bool> {
        Ok(!self.expr.eval(point)?.is_positive())
    }

    pub fn map_expr(&self, f: impl FnOnce(&LinExpr) -> LinExpr) -> Canon {
        LinIneq::le_zero(f(&self.expr))
    }
}

impl fmt::Display for LinIneq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} <= 0", self.expr)
    }
}
