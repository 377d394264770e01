//! Network representation, the text model format and the exact evaluator.

use std::fmt::Write as _;

use num_traits::{Signed, Zero};

use crate::error::{Error, Result};
use crate::numeric::{fmt_exact, parse_rational, LinExpr, Rational, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    pub weights: Vec<Vec<Rational>>,
    pub biases: Vec<Rational>,
    pub activation: Activation,
}

impl Layer {
    pub fn rows(&self) -> usize {
        self.biases.len()
    }

    pub fn cols(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn affine(&self, row: usize, prev: &[Rational]) -> Rational {
        let mut acc = self.biases[row].clone();
        for (w, x) in self.weights[row].iter().zip(prev) {
            if !w.is_zero() {
                acc += w * x;
            }
        }
        acc
    }
}

/// Identifies a node by `(layer, index)`; layer 0 is the input layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub layer: usize,
    pub index: usize,
}

/// Feed-forward network: ReLU hidden layers, identity output layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkModel {
    input_size: usize,
    layers: Vec<Layer>,
}

impl NetworkModel {
    pub fn new(input_size: usize, layers: Vec<Layer>) -> Result<NetworkModel> {
        if layers.is_empty() {
            return Err(Error::Shape { layer: 0, msg: "model has no layers".into() });
        }
        let mut prev = input_size;
        for (i, l) in layers.iter().enumerate() {
            let layer = i + 1;
            if l.weights.len() != l.biases.len() {
                return Err(Error::Shape {
                    layer,
                    msg: format!("{} weight rows but {} biases", l.weights.len(), l.biases.len()),
                });
            }
            if let Some(row) = l.weights.iter().position(|r| r.len() != prev) {
                return Err(Error::Shape {
                    layer,
                    msg: format!("row {} has {} columns, expected {prev}", row, l.weights[row].len()),
                });
            }
            let last = i + 1 == layers.len();
            let expected = if last { Activation::Identity } else { Activation::Relu };
            if l.activation != expected {
                return Err(Error::Activation { layer });
            }
            prev = l.rows();
        }
        if prev < 2 {
            return Err(Error::Shape { layer: layers.len(), msg: "need at least two outputs".into() });
        }
        Ok(NetworkModel { input_size, layers })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, Layer::rows)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Layer `l ≥ 1` (1-based, matching node ids).
    pub fn layer(&self, l: usize) -> &Layer {
        &self.layers[l - 1]
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_count(&self) -> usize {
        self.layers[..self.layers.len() - 1].iter().map(Layer::rows).sum()
    }

    pub fn hidden_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.layers[..self.layers.len() - 1]
            .iter()
            .enumerate()
            .flat_map(|(i, l)| (0..l.rows()).map(move |j| NodeId { layer: i + 1, index: j }))
    }

    pub fn is_hidden(&self, node: NodeId) -> bool {
        node.layer >= 1 && node.layer < self.depth() && node.index < self.layer(node.layer).rows()
    }

    /// Affine pre-activation of node `(layer, row)` over the post-activation
    /// variables of layer `layer - 1`.
    pub fn affine_expr(&self, layer: usize, row: usize) -> LinExpr {
        let l = self.layer(layer);
        LinExpr::from_terms(
            l.weights[row].iter().enumerate().map(|(k, w)| (Var::post(layer - 1, k), w.clone())),
            l.biases[row].clone(),
        )
    }

    /// Output scores at `x`.
    pub fn scores(&self, x: &[Rational]) -> Vec<Rational> {
        assert_eq!(x.len(), self.input_size, "input arity mismatch");
        let mut values = x.to_vec();
        for l in &self.layers {
            values = (0..l.rows())
                .map(|r| {
                    let v = l.affine(r, &values);
                    match l.activation {
                        Activation::Relu if v.is_negative() => Rational::zero(),
                        _ => v,
                    }
                })
                .collect();
        }
        values
    }

    /// Hidden activation flags at `x` (`true` = pre-activation ≥ 0).
    pub fn activations(&self, x: &[Rational]) -> Vec<(NodeId, bool)> {
        let mut values = x.to_vec();
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            values = (0..l.rows())
                .map(|r| {
                    let v = l.affine(r, &values);
                    if l.activation == Activation::Relu {
                        out.push((NodeId { layer: i + 1, index: r }, !v.is_negative()));
                        if v.is_negative() {
                            return Rational::zero();
                        }
                    }
                    v
                })
                .collect();
        }
        out
    }

    /// Predicted class: index of the maximal score, lowest index on ties.
    pub fn eval_concrete(&self, x: &[Rational]) -> usize {
        argmax(&self.scores(x))
    }

    /// Serializes back into the text model format.
    pub fn to_text(&self) -> String {
        let mut s = format!("inputs {}\n", self.input_size);
        for l in &self.layers {
            let act = match l.activation {
                Activation::Relu => "relu",
                Activation::Identity => "identity",
            };
            let _ = writeln!(s, "layer {} {} {}", l.rows(), l.cols(), act);
            for row in &l.weights {
                let toks: Vec<_> = row.iter().map(fmt_token).collect();
                let _ = writeln!(s, "{}", toks.join(" "));
            }
            let toks: Vec<_> = l.biases.iter().map(fmt_token).collect();
            let _ = writeln!(s, "bias {}", toks.join(" "));
        }
        s
    }
}

fn fmt_token(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        fmt_exact(r)
    }
}

pub fn argmax(scores: &[Rational]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s > &scores[best] {
            best = i;
        }
    }
    best
}

/// Non-blank lines as (line number, tokens), comments stripped.
type TokenLines<'a> = Box<dyn Iterator<Item = (usize, Vec<&'a str>)> + 'a>;

struct Lines<'a> {
    inner: std::iter::Peekable<TokenLines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Lines<'a> {
        let it: TokenLines<'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").split_whitespace().collect::<Vec<_>>()))
                .filter(|(_, toks)| !toks.is_empty()),
        );
        Lines { inner: it.peekable() }
    }

    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        self.inner.next().ok_or_else(|| Error::Parse { line: 0, msg: format!("unexpected end of file, expected {what}") })
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_count(line: usize, tok: &str) -> Result<usize> {
    tok.parse().map_err(|_| parse_err(line, format!("expected a count, found `{tok}`")))
}

fn parse_tokens(line: usize, toks: &[&str]) -> Result<Vec<Rational>> {
    toks.iter()
        .map(|t| parse_rational(t).ok_or_else(|| parse_err(line, format!("bad number `{t}`"))))
        .collect()
}

/// Parses the line-oriented model format.
pub fn parse_model(text: &str) -> Result<NetworkModel> {
    let mut lines = Lines::new(text);
    let (ln, head) = lines.next("`inputs <k>`")?;
    let input_size = match head.as_slice() {
        ["inputs", k] => parse_count(ln, k)?,
        _ => return Err(parse_err(ln, "expected `inputs <k>`")),
    };
    let mut layers = Vec::new();
    while let Some((ln, toks)) = lines.inner.next() {
        let (rows, cols, activation) = match toks.as_slice() {
            ["layer", r, c, act] => {
                let act = match *act {
                    "relu" => Activation::Relu,
                    "identity" => Activation::Identity,
                    other => return Err(parse_err(ln, format!("unknown activation `{other}`"))),
                };
                (parse_count(ln, r)?, parse_count(ln, c)?, act)
            }
            _ => return Err(parse_err(ln, "expected `layer <rows> <cols> <relu|identity>`")),
        };
        let layer_no = layers.len() + 1;
        let mut weights = Vec::with_capacity(rows);
        for _ in 0..rows {
            let (ln, toks) = lines.next("a weight row")?;
            if toks[0] == "bias" || toks[0] == "layer" {
                return Err(Error::Shape { layer: layer_no, msg: format!("line {ln}: expected {rows} weight rows") });
            }
            if toks.len() != cols {
                return Err(Error::Shape {
                    layer: layer_no,
                    msg: format!("line {ln}: expected {cols} weights, found {}", toks.len()),
                });
            }
            weights.push(parse_tokens(ln, &toks)?);
        }
        let (ln, toks) = lines.next("`bias ...`")?;
        if toks[0] != "bias" {
            return Err(Error::Shape { layer: layer_no, msg: format!("line {ln}: expected `bias` after {rows} weight rows") });
        }
        if toks.len() - 1 != rows {
            return Err(Error::Shape {
                layer: layer_no,
                msg: format!("line {ln}: expected {rows} biases, found {}", toks.len() - 1),
            });
        }
        let biases = parse_tokens(ln, &toks[1..])?;
        layers.push(Layer { weights, biases, activation });
    }
    NetworkModel::new(input_size, layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{int, rat};

    const IDENTITY_NET: &str = "\
inputs 2
layer 2 2 relu
1 0
0 1
bias 0 0
layer 2 2 identity
1 0
0 1
bias 0 0
";

    #[test]
    fn parses_two_two_two() {
        let m = parse_model(IDENTITY_NET).unwrap();
        assert_eq!(m.depth(), 2);
        assert_eq!(m.hidden_count(), 2);
        assert_eq!(m.output_size(), 2);
        assert_eq!(m.eval_concrete(&[rat(1, 4), rat(3, 4)]), 1);
    }

    #[test]
    fn short_weight_row_is_a_shape_error() {
        let text = "inputs 3\nlayer 2 3 relu\n1 0\n0 1 1\nbias 0 0\nlayer 2 2 identity\n1 0\n0 1\nbias 0 0\n";
        assert!(matches!(parse_model(text), Err(Error::Shape { layer: 1, .. })));
    }

    #[test]
    fn declared_cols_must_match_previous_layer() {
        let text = "inputs 3\nlayer 2 2 relu\n1 0\n0 1\nbias 0 0\nlayer 2 2 identity\n1 0\n0 1\nbias 0 0\n";
        assert!(matches!(parse_model(text), Err(Error::Shape { layer: 1, .. })));
    }

    #[test]
    fn activation_rules() {
        let text = "inputs 1\nlayer 2 1 identity\n1\n1\nbias 0 0\nlayer 2 2 identity\n1 0\n0 1\nbias 0 0\n";
        assert!(matches!(parse_model(text), Err(Error::Activation { layer: 1 })));
        let text = "inputs 1\nlayer 2 1 relu\n1\n1\nbias 0 0\n";
        assert!(matches!(parse_model(text), Err(Error::Activation { layer: 1 })));
    }

    #[test]
    fn decimal_weights_are_exact() {
        let text = "# comment\ninputs 1\n\nlayer 2 1 identity  # output\n0.99\n-3/4\nbias 0.5 0\n";
        let m = parse_model(text).unwrap();
        assert_eq!(m.layer(1).weights[0][0], rat(99, 100));
        assert_eq!(m.layer(1).weights[1][0], rat(-3, 4));
        assert_eq!(m.layer(1).biases[0], rat(1, 2));
        assert_eq!(parse_model(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn bad_token_reports_line() {
        let text = "inputs 1\nlayer 2 1 identity\n0.9x\n1\nbias 0 0\n";
        assert!(matches!(parse_model(text), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        // o0 = x, o1 = 1 - x
        let text = "inputs 1\nlayer 2 1 identity\n1\n-1\nbias 0 1\n";
        let m = parse_model(text).unwrap();
        assert_eq!(m.eval_concrete(&[rat(1, 2)]), 0);
        assert_eq!(m.eval_concrete(&[rat(1, 4)]), 1);
        assert_eq!(m.eval_concrete(&[int(1)]), 0);
    }
}
