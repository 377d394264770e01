//! Browser bindings. Each export takes the text formats the CLI reads and
//! returns JSON; errors come back as thrown strings.

use faircert_core::analyze::AnalysisConfig;
use faircert_core::forward::forward;
use faircert_core::input::FeatureKind;
use faircert_core::numeric::{fmt_exact, parse_rational, to_f64, Interval};
use faircert_core::{
    analyze, build_report, emit_report, parse_model, parse_query, parse_spec, BudgetConfig, Domain, InputSpec, Query,
    Rational,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn parse_domain(s: &str) -> Result<Domain, String> {
    s.parse()
}

/// Full analysis; returns the JSON report. `upper < 0` picks the default
/// min(hidden nodes, 10); an empty `query` means the whole input space.
pub fn analyze_text(model: &str, spec: &str, query: &str, domain: &str, lower: &str, upper: i32) -> Result<String, String> {
    let model = parse_model(model).map_err(|e| format!("model: {e}"))?;
    let spec = parse_spec(spec).map_err(|e| format!("spec: {e}"))?;
    let query = if query.trim().is_empty() {
        Query::default()
    } else {
        parse_query(query, &spec).map_err(|e| format!("query: {e}"))?
    };
    let mut config = AnalysisConfig::default_for(&model);
    config.domain = parse_domain(domain)?;
    let lower = parse_rational(lower.trim()).ok_or_else(|| format!("lower bound `{lower}` is not a rational"))?;
    if lower < Rational::from_integer(0.into()) {
        return Err("lower bound must not be negative".into());
    }
    let upper = if upper < 0 { config.budget.upper } else { upper as usize };
    if upper > model.hidden_count() {
        return Err(format!("upper bound {upper} exceeds the {} hidden nodes", model.hidden_count()));
    }
    config.budget = BudgetConfig::new(lower, upper);
    let analysis = analyze(&model, &spec, &query, &config).map_err(|e| e.to_string())?;
    Ok(emit_report(&build_report(&analysis, &spec, &config)))
}

#[derive(Serialize)]
struct Bound {
    lo: String,
    hi: String,
    lo_decimal: f64,
    hi_decimal: f64,
}

impl From<&Interval> for Bound {
    fn from(iv: &Interval) -> Bound {
        Bound { lo: fmt_exact(&iv.lo), hi: fmt_exact(&iv.hi), lo_decimal: to_f64(&iv.lo), hi_decimal: to_f64(&iv.hi) }
    }
}

#[derive(Serialize)]
struct ForwardView {
    /// Pre-activation bounds, one list per non-input layer.
    layers: Vec<Vec<Bound>>,
    pattern: String,
    fixed: usize,
    hidden: usize,
    class: Option<usize>,
}

/// Forward bounds of one domain over an input box given as `lo:hi` tokens,
/// one per input node, separated by whitespace or commas.
pub fn forward_text(model: &str, domain: &str, input_box: &str) -> Result<String, String> {
    let model = parse_model(model).map_err(|e| format!("model: {e}"))?;
    let domain = parse_domain(domain)?;
    let bx = input_box
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            let (lo, hi) = t.split_once(':').ok_or_else(|| format!("`{t}` is not lo:hi"))?;
            match (parse_rational(lo), parse_rational(hi)) {
                (Some(lo), Some(hi)) if lo <= hi => Ok(Interval::new(lo, hi)),
                _ => Err(format!("`{t}` is not an interval")),
            }
        })
        .collect::<Result<Vec<_>, String>>()?;
    if bx.len() != model.input_size() {
        return Err(format!("box has {} intervals, model has {} inputs", bx.len(), model.input_size()));
    }
    let (bounds, pattern) = forward(&model, domain, &bx);
    let view = ForwardView {
        layers: (1..=model.depth()).map(|l| bounds.layer(l).iter().map(Bound::from).collect()).collect(),
        pattern: pattern.to_string(),
        fixed: pattern.len(),
        hidden: model.hidden_count(),
        class: faircert_core::forward::uniquely_classified(&bounds),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct GridView {
    x: String,
    y: String,
    x_range: [f64; 2],
    y_range: [f64; 2],
    resolution: usize,
    /// Row-major classes, `y` slowest, bottom row first.
    classes: Vec<usize>,
}

fn continuous(spec: &InputSpec, name: &str) -> Result<(usize, Interval), String> {
    let i = spec.feature_index(name).map_err(|e| e.to_string())?;
    match &spec.features[i].kind {
        FeatureKind::Continuous(r) => Ok((spec.features[i].offset, r.clone())),
        FeatureKind::Categorical { .. } => Err(format!("`{name}` is categorical")),
    }
}

/// Concrete classes over a `resolution²` grid of cell centres spanned by two
/// continuous features. Other continuous features sit at their midpoints,
/// categorical features at value 0, and the sensitive feature takes the
/// midpoint of `choice`.
pub fn classify_grid_text(
    model: &str,
    spec: &str,
    x: &str,
    y: &str,
    choice: usize,
    resolution: usize,
) -> Result<String, String> {
    let model = parse_model(model).map_err(|e| format!("model: {e}"))?;
    let spec = parse_spec(spec).map_err(|e| format!("spec: {e}"))?;
    if spec.width() != model.input_size() {
        return Err(format!("spec covers {} inputs, model has {}", spec.width(), model.input_size()));
    }
    if !(1..=256).contains(&resolution) {
        return Err("resolution must be between 1 and 256".into());
    }
    let choice = spec.choices.get(choice).ok_or_else(|| format!("no sensitive choice {choice}"))?;
    let (xi, xr) = continuous(&spec, x)?;
    let (yi, yr) = continuous(&spec, y)?;
    let two = Rational::from_integer(2.into());
    let mut base = vec![Rational::from_integer(0.into()); model.input_size()];
    for f in &spec.features {
        match &f.kind {
            FeatureKind::Continuous(r) => base[f.offset] = (&r.lo + &r.hi) / &two,
            FeatureKind::Categorical { .. } => base[f.offset] = Rational::from_integer(1.into()),
        }
    }
    for (fi, v) in &choice.values {
        let f = &spec.features[*fi];
        match v {
            faircert_core::input::ChoiceValue::Range(r) => base[f.offset] = (&r.lo + &r.hi) / &two,
            faircert_core::input::ChoiceValue::OneHot(k) => {
                for j in 0..f.width() {
                    base[f.offset + j] = Rational::from_integer(i64::from(j == *k).into());
                }
            }
        }
    }
    let n = resolution as i64;
    let at = |r: &Interval, k: usize| &r.lo + (&r.hi - &r.lo) * Rational::new((2 * k as i64 + 1).into(), (2 * n).into());
    let mut classes = Vec::with_capacity(resolution * resolution);
    let mut point = base;
    for row in 0..resolution {
        point[yi] = at(&yr, row);
        for col in 0..resolution {
            point[xi] = at(&xr, col);
            classes.push(model.eval_concrete(&point));
        }
    }
    let view = GridView {
        x: x.into(),
        y: y.into(),
        x_range: [to_f64(&xr.lo), to_f64(&xr.hi)],
        y_range: [to_f64(&yr.lo), to_f64(&yr.hi)],
        resolution,
        classes,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = analyze)]
pub fn analyze_js(model: &str, spec: &str, query: &str, domain: &str, lower: &str, upper: i32) -> Result<String, JsValue> {
    analyze_text(model, spec, query, domain, lower, upper).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = forwardBounds)]
pub fn forward_bounds_js(model: &str, domain: &str, input_box: &str) -> Result<String, JsValue> {
    forward_text(model, domain, input_box).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = classifyGrid)]
pub fn classify_grid_js(model: &str, spec: &str, x: &str, y: &str, choice: usize, resolution: usize) -> Result<String, JsValue> {
    classify_grid_text(model, spec, x, y, choice, resolution).map_err(|e| JsValue::from_str(&e))
}
