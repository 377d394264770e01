//! Input-layer specification (features, sensitive set, value choices) and queries.

use crate::error::{Error, Result};
use crate::numeric::{int, parse_rational, Interval, Rational};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    Continuous(Interval),
    /// One-hot group of `arity` consecutive input nodes.
    Categorical { arity: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputFeature {
    pub name: String,
    pub kind: FeatureKind,
    pub sensitive: bool,
    /// First input node of the feature.
    pub offset: usize,
}

impl InputFeature {
    pub fn width(&self) -> usize {
        match self.kind {
            FeatureKind::Continuous(_) => 1,
            FeatureKind::Categorical { arity } => arity,
        }
    }

    pub fn range(&self) -> Option<&Interval> {
        match &self.kind {
            FeatureKind::Continuous(r) => Some(r),
            FeatureKind::Categorical { .. } => None,
        }
    }
}

/// The value a sensitive feature takes under one choice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChoiceValue {
    Range(Interval),
    OneHot(usize),
}

/// One element of V: a value for every sensitive feature.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensitiveChoice {
    pub values: Vec<(usize, ChoiceValue)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputSpec {
    pub features: Vec<InputFeature>,
    pub choices: Vec<SensitiveChoice>,
}

impl InputSpec {
    pub fn width(&self) -> usize {
        self.features.iter().map(InputFeature::width).sum()
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    pub fn sensitive(&self) -> impl Iterator<Item = (usize, &InputFeature)> {
        self.features.iter().enumerate().filter(|(_, f)| f.sensitive)
    }

    pub fn non_sensitive(&self) -> impl Iterator<Item = (usize, &InputFeature)> {
        self.features.iter().enumerate().filter(|(_, f)| !f.sensitive)
    }

    /// Indices of non-sensitive continuous features, in declaration order.
    pub fn splittable_continuous(&self) -> Vec<usize> {
        self.non_sensitive()
            .filter(|(_, f)| matches!(f.kind, FeatureKind::Continuous(_)))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn non_sensitive_categorical(&self) -> Vec<usize> {
        self.non_sensitive()
            .filter(|(_, f)| matches!(f.kind, FeatureKind::Categorical { .. }))
            .map(|(i, _)| i)
            .collect()
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn number(line: usize, tok: &str) -> Result<Rational> {
    parse_rational(tok).ok_or_else(|| parse_err(line, format!("bad number `{tok}`")))
}

fn parse_range(line: usize, tok: &str) -> Result<Interval> {
    let (lo, hi) = tok.split_once(':').ok_or_else(|| parse_err(line, format!("expected `lo:hi`, found `{tok}`")))?;
    let (lo, hi) = (number(line, lo)?, number(line, hi)?);
    if lo >= hi {
        return Err(parse_err(line, format!("empty range `{tok}`")));
    }
    Ok(Interval::new(lo, hi))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, t)| !t.is_empty())
}

/// Parses a spec file: `continuous <name> <lo> <hi> [sensitive]`,
/// `categorical <name> <k> [sensitive]` and an optional `choices lo:hi,...`.
pub fn parse_spec(text: &str) -> Result<InputSpec> {
    let mut features: Vec<InputFeature> = Vec::new();
    let mut ranges: Option<(usize, Vec<Interval>)> = None;
    let mut offset = 0;
    for (ln, toks) in content_lines(text) {
        let (kind, name, rest) = match toks.as_slice() {
            ["continuous", name, lo, hi, rest @ ..] => {
                let (lo, hi) = (number(ln, lo)?, number(ln, hi)?);
                if lo >= hi {
                    return Err(parse_err(ln, format!("feature `{name}` needs lo < hi")));
                }
                (FeatureKind::Continuous(Interval::new(lo, hi)), *name, rest)
            }
            ["categorical", name, k, rest @ ..] => {
                let arity: usize = k.parse().map_err(|_| parse_err(ln, format!("bad arity `{k}`")))?;
                if arity < 2 {
                    return Err(parse_err(ln, "a categorical feature needs at least two values"));
                }
                (FeatureKind::Categorical { arity }, *name, rest)
            }
            ["choices", list] => {
                if ranges.is_some() {
                    return Err(parse_err(ln, "duplicate `choices` line"));
                }
                let rs = list.split(',').map(|r| parse_range(ln, r)).collect::<Result<Vec<_>>>()?;
                ranges = Some((ln, rs));
                continue;
            }
            _ => return Err(parse_err(ln, format!("unrecognized line `{}`", toks.join(" ")))),
        };
        let sensitive = match rest {
            [] => false,
            ["sensitive"] => true,
            _ => return Err(parse_err(ln, format!("unexpected `{}`", rest.join(" ")))),
        };
        if features.iter().any(|f| f.name == name) {
            return Err(parse_err(ln, format!("duplicate feature `{name}`")));
        }
        let f = InputFeature { name: name.to_string(), kind, sensitive, offset };
        offset += f.width();
        features.push(f);
    }
    build_spec(features, ranges)
}

fn build_spec(features: Vec<InputFeature>, ranges: Option<(usize, Vec<Interval>)>) -> Result<InputSpec> {
    let sensitive: Vec<usize> = features.iter().enumerate().filter(|(_, f)| f.sensitive).map(|(i, _)| i).collect();
    if sensitive.is_empty() {
        return Err(Error::Spec("no sensitive feature declared".into()));
    }
    if sensitive.len() == features.len() {
        return Err(Error::Spec("every feature is sensitive; the non-sensitive set is empty".into()));
    }
    let continuous: Vec<usize> =
        sensitive.iter().copied().filter(|&i| features[i].range().is_some()).collect();
    if continuous.len() > 1 {
        return Err(Error::Spec("at most one continuous sensitive feature is supported".into()));
    }
    // Per-feature value lists, then their cartesian product.
    let mut per_feature: Vec<(usize, Vec<ChoiceValue>)> = Vec::new();
    for &i in &sensitive {
        match &features[i].kind {
            FeatureKind::Categorical { arity } => {
                per_feature.push((i, (0..*arity).map(ChoiceValue::OneHot).collect()));
            }
            FeatureKind::Continuous(range) => {
                let Some((ln, rs)) = &ranges else {
                    return Err(Error::Spec(format!(
                        "continuous sensitive feature `{}` needs a `choices` line",
                        features[i].name
                    )));
                };
                check_choice_ranges(*ln, range, rs)?;
                per_feature.push((i, rs.iter().cloned().map(ChoiceValue::Range).collect()));
            }
        }
    }
    if continuous.is_empty() {
        if let Some((ln, _)) = ranges {
            return Err(parse_err(ln, "`choices` given but no continuous sensitive feature"));
        }
    }
    let mut choices = vec![SensitiveChoice { values: Vec::new() }];
    for (i, vals) in per_feature {
        choices = choices
            .into_iter()
            .flat_map(|c| {
                vals.iter().map(move |v| {
                    let mut c = c.clone();
                    c.values.push((i, v.clone()));
                    c
                })
            })
            .collect();
    }
    Ok(InputSpec { features, choices })
}

fn check_choice_ranges(line: usize, range: &Interval, rs: &[Interval]) -> Result<()> {
    if rs.len() < 2 {
        return Err(parse_err(line, "at least two value choices are required"));
    }
    if rs[0].lo != range.lo || rs[rs.len() - 1].hi != range.hi {
        return Err(parse_err(line, format!("choices must cover {range}")));
    }
    if rs.windows(2).any(|w| w[0].hi != w[1].lo) {
        return Err(parse_err(line, "choices must be consecutive ranges sharing only endpoints"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Restriction {
    Range(Interval),
    Value(usize),
}

/// The initial region of interest; an empty query is the whole input space.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Query {
    pub restrictions: Vec<(usize, Restriction)>,
}

/// Parses `assume <name> in <lo:hi>` / `assume <name> = <value-index>` lines.
pub fn parse_query(text: &str, spec: &InputSpec) -> Result<Query> {
    let mut restrictions: Vec<(usize, Restriction)> = Vec::new();
    for (ln, toks) in content_lines(text) {
        let (name, r) = match toks.as_slice() {
            ["assume", name, "in", range] => (*name, Restriction::Range(parse_range(ln, range)?)),
            ["assume", name, "=", v] => {
                let v: usize = v.parse().map_err(|_| parse_err(ln, format!("bad value index `{v}`")))?;
                (*name, Restriction::Value(v))
            }
            _ => return Err(parse_err(ln, format!("unrecognized line `{}`", toks.join(" ")))),
        };
        let fi = spec.feature_index(name)?;
        let f = &spec.features[fi];
        if f.sensitive {
            return Err(Error::Query(format!("`{name}` is sensitive; queries restrict non-sensitive features only")));
        }
        match (&f.kind, &r) {
            (FeatureKind::Continuous(full), Restriction::Range(sub)) => {
                if !full.contains_interval(sub) {
                    return Err(Error::Query(format!("range {sub} for `{name}` lies outside {full}")));
                }
            }
            (FeatureKind::Categorical { arity }, Restriction::Value(v)) => {
                if v >= arity {
                    return Err(Error::Query(format!("value {v} out of range for `{name}` (arity {arity})")));
                }
            }
            _ => return Err(Error::Query(format!("restriction kind does not match feature `{name}`"))),
        }
        if restrictions.iter().any(|(i, _)| *i == fi) {
            return Err(Error::Query(format!("`{name}` restricted twice")));
        }
        restrictions.push((fi, r));
    }
    Ok(Query { restrictions })
}

/// Default range of a continuous feature when none is meaningful: `[0, 1]`.
pub fn unit_range() -> Interval {
    Interval::new(int(0), int(1))
}
