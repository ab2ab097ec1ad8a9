//! Integer weight models decoded from solver assignments, and the reference
//! fixed-point interpreter that mirrors the encoder's arithmetic exactly:
//! every step the circuit would refuse (an UNSAT side-constraint) is reported
//! here as an overflow instead of wrapping.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arith::BitVec;
use crate::cnf::Assignment;
use crate::datasets::{Dataset, Example, Label};
use crate::encoder::{bias_label, kernel_label, weight_label, window_cells, window_shift, Architecture, NetworkSpec, WeightVars};
use crate::error::{Error, Result};
use crate::params::{signed_range, Hyperparams, MarginRule};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerWeights {
    /// `weights[neuron][input]`.
    pub weights: Vec<Vec<i64>>,
    pub biases: Vec<i64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub batch_id: usize,
    pub seed: u64,
    /// Index of this solution among those found for the batch.
    pub solution: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub net: NetworkSpec,
    pub hp: Hyperparams,
    /// Effective weights; for kernelised networks layer 0 holds the derived
    /// window averages.
    pub layers: Vec<LayerWeights>,
    /// Per-neuron kernel cells (row-major) of a kernelised first layer.
    pub kernels: Option<Vec<Vec<i64>>>,
    pub provenance: Provenance,
}

impl TrainedModel {
    /// All-zero model of the given shape.
    pub fn zeros(net: &NetworkSpec, hp: &Hyperparams) -> TrainedModel {
        let layers = (0..net.num_layers())
            .map(|l| {
                let (fan_in, neurons) = net.layer_shape(l);
                LayerWeights {
                    weights: vec![vec![0; fan_in]; neurons],
                    biases: vec![0; neurons],
                }
            })
            .collect();
        let kernels = net.kernel_side().map(|side| {
            let (_, neurons) = net.layer_shape(0);
            vec![vec![0; side * side]; neurons]
        });
        TrainedModel {
            net: net.clone(),
            hp: hp.clone(),
            layers,
            kernels,
            provenance: Provenance::default(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<TrainedModel> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<TrainedModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        TrainedModel::from_json(&text)
    }

    /// Recomputes kernelised first-layer weights from `kernels`.
    pub fn refresh_kernel_weights(&mut self) -> Result<()> {
        if let Some(kernels) = &self.kernels {
            for (n, kernel) in kernels.iter().enumerate() {
                self.layers[0].weights[n] = kernel_weights(kernel, n, &self.net, &self.hp)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OverflowStep {
    /// An operand equals the most negative value, whose magnitude does not fit.
    Operand { input: usize },
    /// `|w * x| >= 2^product_magnitude_bits`.
    ProductMagnitude { input: usize },
    /// Running sum left the `slack_bits` range after adding term `input`.
    PartialSum { input: usize },
    /// Adding the bias left the `slack_bits` range.
    Bias,
    /// Window sum of a kernelised weight left the `slack_bits` range.
    KernelWindow { pixel: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OverflowReport {
    pub layer: usize,
    pub neuron: usize,
    pub step: OverflowStep,
}

impl fmt::Display for OverflowReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer {} neuron {}: {:?}", self.layer, self.neuron, self.step)
    }
}

fn overflow(layer: usize, neuron: usize, step: OverflowStep) -> Error {
    Error::Overflow(OverflowReport { layer, neuron, step })
}

fn in_range(v: i64, width: u32) -> bool {
    let (lo, hi) = signed_range(width);
    (lo..=hi).contains(&v)
}

/// Window-average weights of one kernelised neuron.
pub fn kernel_weights(kernel: &[i64], neuron: usize, net: &NetworkSpec, hp: &Hyperparams) -> Result<Vec<i64>> {
    let Architecture::Kernelised {
        grid_side,
        window_size,
        window_stride,
    } = net.architecture
    else {
        return Err(Error::Config("not a kernelised network".into()));
    };
    let side = net.kernel_side().expect("kernelised");
    let shift = window_shift(window_size);
    (0..net.input_dim)
        .map(|pixel| {
            let mut acc: Option<i64> = None;
            for (r, c) in window_cells(pixel, grid_side, window_size, window_stride) {
                let v = kernel[r * side + c];
                let next = acc.map_or(v, |a| a + v);
                if !in_range(next, hp.slack_bits) {
                    return Err(overflow(0, neuron, OverflowStep::KernelWindow { pixel }));
                }
                acc = Some(next);
            }
            let avg = acc.expect("window_size >= 1") >> shift;
            Ok(avg)
        })
        .collect()
}

fn neuron_sum(
    inputs: &[i64],
    weights: &[i64],
    bias: i64,
    hp: &Hyperparams,
    layer: usize,
    neuron: usize,
) -> Result<i64> {
    let (wmin, _) = hp.weight_range();
    let bound = 1i64 << hp.product_magnitude_bits;
    let mut acc: Option<i64> = None;
    for (i, (&x, &w)) in inputs.iter().zip(weights).enumerate() {
        if x == wmin || w == wmin {
            return Err(overflow(layer, neuron, OverflowStep::Operand { input: i }));
        }
        let p = w * x;
        if p.abs() >= bound {
            return Err(overflow(layer, neuron, OverflowStep::ProductMagnitude { input: i }));
        }
        let next = acc.map_or(p, |a| a + p);
        if !in_range(next, hp.slack_bits) {
            return Err(overflow(layer, neuron, OverflowStep::PartialSum { input: i }));
        }
        acc = Some(next);
    }
    let total = acc.map_or(bias, |a| a + bias);
    if !in_range(total, hp.slack_bits) {
        return Err(overflow(layer, neuron, OverflowStep::Bias));
    }
    Ok(total)
}

/// `min(max(floor(s / 2^regret_bits), 0), 2^(num_bits-1) - 1)`.
pub fn clipped_activation(s: i64, hp: &Hyperparams) -> i64 {
    (s >> hp.regret_bits).clamp(0, hp.clip_max())
}

/// Raw output of the network on `features`.
pub fn infer(model: &TrainedModel, features: &[i64]) -> Result<i64> {
    let hp = &model.hp;
    if features.len() != model.net.input_dim {
        return Err(Error::Shape(format!(
            "{} features for input_dim {}",
            features.len(),
            model.net.input_dim
        )));
    }
    if let Some(&bad) = features.iter().find(|&&v| !in_range(v, hp.num_bits)) {
        return Err(Error::Range(format!("feature {bad} does not fit {} bits", hp.num_bits)));
    }
    let mut acts = features.to_vec();
    let last = model.layers.len() - 1;
    for (l, layer) in model.layers.iter().enumerate() {
        let mut next = Vec::with_capacity(layer.biases.len());
        for (n, (row, &bias)) in layer.weights.iter().zip(&layer.biases).enumerate() {
            let s = neuron_sum(&acts, row, bias, hp, l, n)?;
            if l == last {
                return Ok(s);
            }
            next.push(clipped_activation(s, hp));
        }
        acts = next;
    }
    unreachable!("model has an output layer")
}

/// Whether `y` satisfies the encoded margin for `label`: `y >= 2^cost_bits`
/// for positives, and for negatives `y <= -2^cost_bits` or, under
/// [`MarginRule::BitPattern`], `y <= -2^(slack_bits-1) + 2^cost_bits - 1`.
pub fn satisfies_margin(y: i64, label: Label, hp: &Hyperparams) -> bool {
    let (lo, hi) = hp.slack_range();
    if y < lo || y > hi {
        return false;
    }
    let m = 1i64 << hp.cost_bits;
    match (label, hp.margin) {
        (Label::Positive, _) => y >= m,
        (Label::Negative, MarginRule::Threshold) => y <= -m,
        (Label::Negative, MarginRule::BitPattern) => y < lo + m,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Correct iff the output satisfies the training margin for its label.
    Margin,
    /// Predict `+1` iff the output is `>= 0`.
    Sign,
}

pub fn is_correct(model: &TrainedModel, ex: &Example, mode: EvalMode) -> bool {
    match infer(model, &ex.features) {
        Err(_) => false,
        Ok(y) => match mode {
            EvalMode::Margin => satisfies_margin(y, ex.label, &model.hp),
            EvalMode::Sign => Label::from_bool(y >= 0) == ex.label,
        },
    }
}

/// Fraction of examples classified correctly; overflowing examples count as
/// errors.
pub fn accuracy(model: &TrainedModel, examples: &[Example], mode: EvalMode) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let correct = examples.iter().filter(|e| is_correct(model, e, mode)).count();
    correct as f64 / examples.len() as f64
}

pub fn dataset_accuracy(model: &TrainedModel, ds: &Dataset, mode: EvalMode) -> f64 {
    accuracy(model, &ds.examples, mode)
}

fn decode_bv(bv: &BitVec, assignment: &Assignment, label: impl Fn(u32) -> String) -> Result<i64> {
    bv.decode(assignment).ok_or_else(|| {
        let missing = bv
            .bits()
            .iter()
            .position(|&l| assignment.lit(l).is_none())
            .unwrap_or(0);
        Error::Decode {
            label: label(missing as u32),
        }
    })
}

/// Two's-complement decode of every weight and bias.
pub fn decode_weights(
    assignment: &Assignment,
    vars: &WeightVars,
    net: &NetworkSpec,
    hp: &Hyperparams,
) -> Result<TrainedModel> {
    let mut model = TrainedModel::zeros(net, hp);
    for (l, layer) in vars.layers.iter().enumerate() {
        for (n, bias) in layer.biases.iter().enumerate() {
            model.layers[l].biases[n] = decode_bv(bias, assignment, |b| bias_label(l, n, b))?;
        }
        if l == 0 && vars.kernels.is_some() {
            continue;
        }
        for (n, row) in layer.weights.iter().enumerate() {
            for (i, w) in row.iter().enumerate() {
                model.layers[l].weights[n][i] = decode_bv(w, assignment, |b| weight_label(l, n, i, b))?;
            }
        }
    }
    if let Some(kernels) = &vars.kernels {
        let decoded = kernels
            .iter()
            .enumerate()
            .map(|(n, grid)| {
                grid.cells
                    .iter()
                    .enumerate()
                    .map(|(k, cell)| {
                        decode_bv(cell, assignment, |b| kernel_label(n, k / grid.side, k % grid.side, b))
                    })
                    .collect::<Result<Vec<i64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        model.kernels = Some(decoded);
        model.refresh_kernel_weights()?;
    }
    Ok(model)
}

/// Result of brute-force training.
#[derive(Clone, Debug, PartialEq)]
pub enum OracleVerdict {
    Sat(Box<TrainedModel>),
    Unsat,
}

impl OracleVerdict {
    pub fn is_sat(&self) -> bool {
        matches!(self, OracleVerdict::Sat(_))
    }
}

/// Largest number of free weight bits the brute-force oracle will enumerate.
pub const ORACLE_MAX_BITS: u32 = 24;

/// Enumerates every weight assignment of a tiny network and reports whether
/// one meets the margin on every batch example.
pub fn exhaustive_train_oracle(net: &NetworkSpec, batch: &[Example], hp: &Hyperparams) -> Result<OracleVerdict> {
    hp.validate()?;
    net.validate()?;
    // (width, slot) for every free parameter
    #[derive(Clone, Copy)]
    enum Slot {
        Weight(usize, usize, usize),
        Bias(usize, usize),
        Kernel(usize, usize),
    }
    let mut slots: Vec<(u32, Slot)> = Vec::new();
    for l in 0..net.num_layers() {
        let (fan_in, neurons) = net.layer_shape(l);
        for n in 0..neurons {
            match net.kernel_side() {
                Some(side) if l == 0 => {
                    slots.extend((0..side * side).map(|k| (hp.num_bits, Slot::Kernel(n, k))));
                }
                _ => slots.extend((0..fan_in).map(|i| (hp.num_bits, Slot::Weight(l, n, i)))),
            }
            slots.push((hp.slack_bits, Slot::Bias(l, n)));
        }
    }
    let total: u32 = slots.iter().map(|(w, _)| w).sum();
    if total > ORACLE_MAX_BITS {
        return Err(Error::Config(format!(
            "{total} weight bits exceed the brute-force limit of {ORACLE_MAX_BITS}"
        )));
    }

    let mut model = TrainedModel::zeros(net, hp);
    for mask in 0u64..(1u64 << total) {
        let mut offset = 0;
        for &(width, slot) in &slots {
            let raw = (mask >> offset) & ((1u64 << width) - 1);
            offset += width;
            // reinterpret the field as a signed `width`-bit integer
            let v = ((raw << (64 - width)) as i64) >> (64 - width);
            match slot {
                Slot::Weight(l, n, i) => model.layers[l].weights[n][i] = v,
                Slot::Bias(l, n) => model.layers[l].biases[n] = v,
                Slot::Kernel(n, k) => model.kernels.as_mut().unwrap()[n][k] = v,
            }
        }
        if model.kernels.is_some() && model.refresh_kernel_weights().is_err() {
            continue;
        }
        let fits = batch.iter().all(|ex| {
            infer(&model, &ex.features).is_ok_and(|y| satisfies_margin(y, ex.label, hp))
        });
        if fits {
            return Ok(OracleVerdict::Sat(Box::new(model)));
        }
    }
    Ok(OracleVerdict::Unsat)
}
