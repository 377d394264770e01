//! Shared test support: seeded random networks and an exact grid oracle
//! that shares no code with the analyzer.

#![allow(dead_code)]

use std::collections::BTreeMap;

use faircert_core::numeric::{Rational, Var};
use faircert_core::{parse_model, parse_spec, InputSpec, NetworkModel};
use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Grid resolution of the oracle: points `k / GRID` for `k = 0..=GRID`.
pub const GRID: i64 = 64;

/// A layer with weights and biases in hundredths.
#[derive(Clone, Debug)]
pub struct IntLayer {
    pub weights: Vec<Vec<i64>>,
    pub biases: Vec<i64>,
}

#[derive(Clone, Debug)]
pub struct Case {
    pub seed: u64,
    pub model: NetworkModel,
    pub spec: InputSpec,
    pub model_text: String,
    pub spec_text: String,
    pub layers: Vec<IntLayer>,
    /// Number of non-sensitive continuous inputs; they come first.
    pub free_dims: usize,
    /// Sensitive feature is a two-valued one-hot group rather than a
    /// continuous input split into two halves.
    pub onehot: bool,
}

/// 2 to 4 input nodes, one or two hidden layers of 1 to 4 nodes, 2 or 3
/// outputs, weights and biases `k/100` with `|k| ≤ 100`.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: usize = rng.gen_range(2..=4);
    let onehot = inputs >= 3 && rng.gen_bool(0.5);
    let free_dims = if onehot { inputs - 2 } else { inputs - 1 };
    let hidden: usize = rng.gen_range(1..=2);
    let mut sizes = vec![inputs];
    for _ in 0..hidden {
        sizes.push(rng.gen_range(1..=4));
    }
    sizes.push(rng.gen_range(2..=3));
    let mut layers = Vec::new();
    let mut model_text = format!("inputs {inputs}\n");
    for w in sizes.windows(2) {
        let (cols, rows) = (w[0], w[1]);
        let act = if layers.len() == hidden { "identity" } else { "relu" };
        let layer = IntLayer {
            weights: (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-100..=100)).collect()).collect(),
            biases: (0..rows).map(|_| rng.gen_range(-100..=100)).collect(),
        };
        model_text.push_str(&format!("layer {rows} {cols} {act}\n"));
        for row in &layer.weights {
            let toks: Vec<String> = row.iter().map(|k| format!("{k}/100")).collect();
            model_text.push_str(&toks.join(" "));
            model_text.push('\n');
        }
        let toks: Vec<String> = layer.biases.iter().map(|k| format!("{k}/100")).collect();
        model_text.push_str(&format!("bias {}\n", toks.join(" ")));
        layers.push(layer);
    }
    let mut spec_text = String::new();
    for i in 0..free_dims {
        spec_text.push_str(&format!("continuous x{i} 0 1\n"));
    }
    if onehot {
        spec_text.push_str("categorical s 2 sensitive\n");
    } else {
        spec_text.push_str("continuous s 0 1 sensitive\nchoices 0:0.5,0.5:1\n");
    }
    Case {
        seed,
        model: parse_model(&model_text).expect("generated model parses"),
        spec: parse_spec(&spec_text).expect("generated spec parses"),
        model_text,
        spec_text,
        layers,
        free_dims,
        onehot,
    }
}

impl Case {
    /// Class of the input whose coordinates are `num[i] / GRID`, computed in
    /// scaled integers. Ties go to the lowest index.
    pub fn class_on_grid(&self, num: &[i64]) -> usize {
        let mut values: Vec<i128> = num.iter().map(|&v| v as i128).collect();
        let mut denom: i128 = GRID as i128;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            values = layer
                .weights
                .iter()
                .zip(&layer.biases)
                .map(|(row, &b)| {
                    let s: i128 = row.iter().zip(&values).map(|(&w, &v)| w as i128 * v).sum::<i128>() + b as i128 * denom;
                    if l < last { s.max(0) } else { s }
                })
                .collect();
            denom *= 100;
        }
        let mut best = 0;
        for (j, v) in values.iter().enumerate() {
            if *v > values[best] {
                best = j;
            }
        }
        best
    }

    /// Per-choice class masks at every grid point of the non-sensitive dims,
    /// indexed in row-major order with the first dimension slowest.
    pub fn oracle(&self) -> Vec<[u8; 2]> {
        let side = (GRID + 1) as usize;
        let total = side.pow(self.free_dims as u32);
        let mut out = Vec::with_capacity(total);
        let mut x = vec![0i64; self.model.input_size()];
        for idx in 0..total {
            let coords = self.grid_coords(idx);
            x[..self.free_dims].copy_from_slice(&coords);
            let mut masks = [0u8; 2];
            if self.onehot {
                for (c, m) in masks.iter_mut().enumerate() {
                    x[self.free_dims] = if c == 0 { GRID } else { 0 };
                    x[self.free_dims + 1] = if c == 0 { 0 } else { GRID };
                    *m |= 1 << self.class_on_grid(&x);
                }
            } else {
                for s in 0..=GRID {
                    x[self.free_dims] = s;
                    let bit = 1u8 << self.class_on_grid(&x);
                    if 2 * s <= GRID {
                        masks[0] |= bit;
                    }
                    if 2 * s >= GRID {
                        masks[1] |= bit;
                    }
                }
            }
            out.push(masks);
        }
        out
    }

    pub fn grid_coords(&self, mut idx: usize) -> Vec<i64> {
        let side = (GRID + 1) as usize;
        let mut c = vec![0i64; self.free_dims];
        for d in (0..self.free_dims).rev() {
            c[d] = (idx % side) as i64;
            idx /= side;
        }
        c
    }

    /// The non-sensitive part of a grid point as analyzer variables.
    pub fn grid_point(&self, coords: &[i64]) -> BTreeMap<Var, Rational> {
        coords
            .iter()
            .enumerate()
            .map(|(i, &k)| (Var::input(i), Rational::new(BigInt::from(k), BigInt::from(GRID))))
            .collect()
    }
}

/// Two choices lead to different classes at this grid point.
pub fn is_counterexample(masks: [u8; 2]) -> bool {
    (masks[0] | masks[1]).count_ones() >= 2
}

pub fn grid_value(k: i64) -> Rational {
    Rational::new(BigInt::from(k), BigInt::from(GRID))
}
