//! Input-space partitions: boxes over the continuous features plus categorical
//! value fixings, split round-robin along non-sensitive dimensions.

use std::cmp::Ordering;

use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::input::{FeatureKind, InputSpec, Query, Restriction};
use crate::numeric::{int, Interval, Rational};

/// The slice of one feature a partition covers.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cell {
    Range(Interval),
    /// Categorical feature, any value.
    Open,
    /// Categorical feature fixed to one value.
    Fixed(usize),
}

/// Analysis budget: minimum continuous width `lower` (L), maximum number of
/// unknown ReLUs `upper` (U), and a cap on the number of halvings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BudgetConfig {
    pub lower: Rational,
    pub upper: usize,
    pub max_depth: u32,
}

impl BudgetConfig {
    pub const DEFAULT_MAX_DEPTH: u32 = 12;

    pub fn new(lower: Rational, upper: usize) -> BudgetConfig {
        BudgetConfig { lower, upper, max_depth: BudgetConfig::DEFAULT_MAX_DEPTH }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Partition {
    pub cells: Vec<Cell>,
    /// Position in the list of non-sensitive continuous features where the
    /// next halving starts looking.
    pub cursor: usize,
    /// Number of halvings that produced this partition.
    pub depth: u32,
}

impl Ord for Partition {
    fn cmp(&self, other: &Partition) -> Ordering {
        self.cells.cmp(&other.cells).then(self.depth.cmp(&other.depth)).then(self.cursor.cmp(&other.cursor))
    }
}

impl PartialOrd for Partition {
    fn partial_cmp(&self, other: &Partition) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Partition {
    /// The query region Y as a single partition.
    pub fn root(spec: &InputSpec, query: &Query) -> Partition {
        let mut cells: Vec<Cell> = spec
            .features
            .iter()
            .map(|f| match &f.kind {
                FeatureKind::Continuous(r) => Cell::Range(r.clone()),
                FeatureKind::Categorical { .. } => Cell::Open,
            })
            .collect();
        for (i, r) in &query.restrictions {
            cells[*i] = match r {
                Restriction::Range(iv) => Cell::Range(iv.clone()),
                Restriction::Value(v) => Cell::Fixed(*v),
            };
        }
        Partition { cells, cursor: 0, depth: 0 }
    }

    pub fn range(&self, feature: usize) -> Option<&Interval> {
        match &self.cells[feature] {
            Cell::Range(r) => Some(r),
            _ => None,
        }
    }

    /// One interval per input node; categorical groups get `[0,1]` per node
    /// unless fixed.
    pub fn input_box(&self, spec: &InputSpec) -> Vec<Interval> {
        let mut out = Vec::with_capacity(spec.width());
        for (f, cell) in spec.features.iter().zip(&self.cells) {
            match (&f.kind, cell) {
                (FeatureKind::Continuous(_), Cell::Range(r)) => out.push(r.clone()),
                (FeatureKind::Categorical { arity }, Cell::Fixed(v)) => {
                    out.extend((0..*arity).map(|k| Interval::point(int(i64::from(k == *v)))))
                }
                (FeatureKind::Categorical { arity }, _) => {
                    out.extend((0..*arity).map(|_| Interval::new(int(0), int(1))))
                }
                (FeatureKind::Continuous(r), _) => out.push(r.clone()),
            }
        }
        out
    }

    /// Measure relative to the full declared input space: continuous widths
    /// over declared widths, `1/arity` per fixed categorical feature.
    pub fn volume(&self, spec: &InputSpec) -> Rational {
        let mut v = Rational::one();
        for (f, cell) in spec.features.iter().zip(&self.cells) {
            match (&f.kind, cell) {
                (FeatureKind::Continuous(full), Cell::Range(r)) => v *= r.width() / full.width(),
                (FeatureKind::Categorical { arity }, Cell::Fixed(_)) => {
                    v /= Rational::from_integer(BigInt::from(*arity))
                }
                _ => {}
            }
        }
        v
    }

    pub fn contains_point(&self, spec: &InputSpec, x: &[Rational]) -> bool {
        self.input_box(spec).iter().zip(x).all(|(iv, v)| iv.contains(v))
    }

    fn halvable(&self, spec: &InputSpec, budget: &BudgetConfig) -> Option<usize> {
        if self.depth >= budget.max_depth {
            return None;
        }
        let dims = spec.splittable_continuous();
        if dims.is_empty() {
            return None;
        }
        let two = int(2);
        (0..dims.len()).map(|k| (self.cursor + k) % dims.len()).find(|&k| {
            let r = self.range(dims[k]).expect("continuous cell");
            r.width() / &two >= budget.lower && !r.width().is_zero()
        })
    }

    fn open_categorical(&self, spec: &InputSpec) -> Option<usize> {
        spec.non_sensitive_categorical().into_iter().find(|&i| self.cells[i] == Cell::Open)
    }

    pub fn can_split(&self, spec: &InputSpec, budget: &BudgetConfig) -> bool {
        self.open_categorical(spec).is_some() || self.halvable(spec, budget).is_some()
    }

    /// Enumerates an unsplit non-sensitive categorical feature if there is
    /// one, otherwise halves the next eligible continuous dimension.
    pub fn split(&self, spec: &InputSpec, budget: &BudgetConfig) -> Result<Vec<Partition>> {
        if let Some(i) = self.open_categorical(spec) {
            let FeatureKind::Categorical { arity } = spec.features[i].kind else { unreachable!() };
            return Ok((0..arity)
                .map(|v| {
                    let mut p = self.clone();
                    p.cells[i] = Cell::Fixed(v);
                    p
                })
                .collect());
        }
        let k = self.halvable(spec, budget).ok_or(Error::NoSplittableDimension)?;
        let dims = spec.splittable_continuous();
        let dim = dims[k];
        let r = self.range(dim).expect("continuous cell").clone();
        let mid = (&r.lo + &r.hi) / int(2);
        let child = |iv: Interval| {
            let mut p = self.clone();
            p.cells[dim] = Cell::Range(iv);
            p.cursor = (k + 1) % dims.len();
            p.depth += 1;
            p
        };
        Ok(vec![child(Interval::new(r.lo.clone(), mid.clone())), child(Interval::new(mid, r.hi))])
    }

    pub fn describe(&self, spec: &InputSpec) -> String {
        let parts: Vec<String> = spec
            .features
            .iter()
            .zip(&self.cells)
            .filter(|(f, _)| !f.sensitive)
            .map(|(f, c)| match c {
                Cell::Range(r) => format!("{}: {r}", f.name),
                Cell::Open => format!("{}: *", f.name),
                Cell::Fixed(v) => format!("{} = {v}", f.name),
            })
            .collect();
        parts.join(", ")
    }
}

/// Total volume of a set of partitions.
pub fn total_volume<'a, I: IntoIterator<Item = &'a Partition>>(parts: I, spec: &InputSpec) -> Rational {
    parts.into_iter().fold(Rational::zero(), |acc, p| acc + p.volume(spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::input::parse_spec;
    use crate::numeric::rat;

    fn spec(text: &str) -> InputSpec {
        parse_spec(text).unwrap()
    }

    #[test]
    fn halves_only_the_non_sensitive_dimension() {
        let s = spec("continuous x 0 1\ncontinuous y 0 1 sensitive\nchoices 0:0.5,0.5:1\n");
        let root = Partition::root(&s, &Query::default());
        let kids = root.split(&s, &BudgetConfig::new(int(0), 0)).unwrap();
        assert_eq!(kids.len(), 2);
        assert_eq!(kids[0].range(0), Some(&Interval::new(int(0), rat(1, 2))));
        assert_eq!(kids[1].range(0), Some(&Interval::new(rat(1, 2), int(1))));
        for k in &kids {
            assert_eq!(k.range(1), Some(&Interval::new(int(0), int(1))));
            assert_eq!(k.volume(&s), rat(1, 2));
        }
    }

    #[test]
    fn categorical_is_enumerated_first() {
        let s = spec("categorical work 4\ncontinuous x 0 1\ncategorical sex 2 sensitive\n");
        let root = Partition::root(&s, &Query::default());
        let kids = root.split(&s, &BudgetConfig::new(int(0), 0)).unwrap();
        assert_eq!(kids.len(), 4);
        for (v, k) in kids.iter().enumerate() {
            assert_eq!(k.cells[0], Cell::Fixed(v));
            assert_eq!(k.volume(&s), rat(1, 4));
            let bx = k.input_box(&s);
            assert_eq!(bx[v], Interval::point(int(1)));
        }
        // the sensitive categorical is never enumerated
        let grand = kids[0].split(&s, &BudgetConfig::new(int(0), 0)).unwrap();
        assert_eq!(grand.len(), 2);
        assert_eq!(grand[0].cells[2], Cell::Open);
    }

    #[test]
    fn round_robin_over_continuous_dims() {
        let s = spec("continuous a 0 1\ncontinuous b 0 1\ncontinuous s 0 1 sensitive\nchoices 0:0.5,0.5:1\n");
        let b = BudgetConfig::new(int(0), 0);
        let root = Partition::root(&s, &Query::default());
        let first = &root.split(&s, &b).unwrap()[0];
        assert_eq!(first.range(0).unwrap().width(), rat(1, 2));
        let second = &first.split(&s, &b).unwrap()[0];
        assert_eq!(second.range(0).unwrap().width(), rat(1, 2));
        assert_eq!(second.range(1).unwrap().width(), rat(1, 2));
        let third = &second.split(&s, &b).unwrap()[0];
        assert_eq!(third.range(0).unwrap().width(), rat(1, 4));
    }

    #[test]
    fn lower_bound_stops_halving() {
        let s = spec("continuous x 0 1\ncontinuous y 0 1 sensitive\nchoices 0:0.5,0.5:1\n");
        let b = BudgetConfig::new(rat(1, 4), 0);
        let mut p = Partition::root(&s, &Query::default());
        p.cells[0] = Cell::Range(Interval::new(rat(1, 2), int(1)));
        assert!(p.can_split(&s, &b));
        p.cells[0] = Cell::Range(Interval::new(rat(3, 4), int(1)));
        assert!(!p.can_split(&s, &b));
        assert!(matches!(p.split(&s, &b), Err(Error::NoSplittableDimension)));
        let capped = BudgetConfig { max_depth: 0, ..BudgetConfig::new(int(0), 0) };
        assert!(!Partition::root(&s, &Query::default()).can_split(&s, &capped));
    }
}
