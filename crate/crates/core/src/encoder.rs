//! Lowers a network plus a labeled batch into CNF over the weight bits.
//!
//! Hidden neurons compute `relu_clipped(sum w*x + b)` at `num_bits` width; the
//! single output neuron exposes its raw `slack_bits` sum to the margin
//! constraints.

use serde::{Deserialize, Serialize};

use crate::arith::{bitwise_add, bitwise_mul, drop_lsbs, sign_extend, AddMode, BitVec, SideConstraints};
use crate::cnf::{CnfFormula, Lit, Var};
use crate::datasets::{Example, Label};
use crate::error::{Error, Result};
use crate::params::{Hyperparams, MarginRule};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Vanilla,
    /// First-layer weights are window averages over a per-neuron kernel grid.
    Kernelised {
        grid_side: usize,
        window_size: usize,
        window_stride: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
}

impl NetworkSpec {
    pub fn vanilla(input_dim: usize, hidden_layers: Vec<usize>) -> Self {
        NetworkSpec {
            architecture: Architecture::Vanilla,
            input_dim,
            hidden_layers,
        }
    }

    pub fn kernelised(
        grid_side: usize,
        window_size: usize,
        window_stride: usize,
        hidden_layers: Vec<usize>,
    ) -> Self {
        NetworkSpec {
            architecture: Architecture::Kernelised {
                grid_side,
                window_size,
                window_stride,
            },
            input_dim: grid_side * grid_side,
            hidden_layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Shape("input_dim must be >= 1".into()));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::Shape("hidden layers must have >= 1 neuron".into()));
        }
        if let Architecture::Kernelised {
            grid_side,
            window_size,
            window_stride,
        } = self.architecture
        {
            if grid_side * grid_side != self.input_dim {
                return Err(Error::Shape(format!(
                    "kernelised input_dim {} != grid_side^2 = {}",
                    self.input_dim,
                    grid_side * grid_side
                )));
            }
            if window_size == 0 || window_stride == 0 {
                return Err(Error::Shape("window size and stride must be >= 1".into()));
            }
            if window_size > grid_side {
                return Err(Error::Shape(format!(
                    "window {window_size} larger than grid {grid_side}"
                )));
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_layers.len() + 1
    }

    /// `(fan_in, neurons)` of layer `l`; the last layer has one neuron.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        let fan_in = if l == 0 {
            self.input_dim
        } else {
            self.hidden_layers[l - 1]
        };
        let neurons = self.hidden_layers.get(l).copied().unwrap_or(1);
        (fan_in, neurons)
    }

    /// Side of each first-layer kernel grid: windows of `window_size` cells
    /// placed every `window_stride` cells, one per input pixel.
    pub fn kernel_side(&self) -> Option<usize> {
        match self.architecture {
            Architecture::Vanilla => None,
            Architecture::Kernelised {
                grid_side,
                window_size,
                window_stride,
            } => Some((grid_side - 1) * window_stride + window_size),
        }
    }
}

/// Power-of-two exponent used to average a window: `ceil(log2(area))`.
pub fn window_shift(window_size: usize) -> u32 {
    let area = window_size * window_size;
    area.next_power_of_two().trailing_zeros()
}

/// Kernel cells `(row, col)` covered by the window that defines the weight of
/// input pixel `pixel`.
pub fn window_cells(
    pixel: usize,
    grid_side: usize,
    window_size: usize,
    window_stride: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let (r0, c0) = (pixel / grid_side * window_stride, pixel % grid_side * window_stride);
    (0..window_size).flat_map(move |i| (0..window_size).map(move |j| (r0 + i, c0 + j)))
}

pub fn weight_label(layer: usize, neuron: usize, index: usize, bit: u32) -> String {
    format!("L{layer}_N{neuron}_W{index}_b{bit}")
}

pub fn bias_label(layer: usize, neuron: usize, bit: u32) -> String {
    format!("L{layer}_N{neuron}_B_b{bit}")
}

pub fn kernel_label(neuron: usize, row: usize, col: usize, bit: u32) -> String {
    format!("L0_N{neuron}_K{row}_{col}_b{bit}")
}

#[derive(Clone, Debug)]
pub struct LayerVars {
    /// `weights[neuron][input]`, each `num_bits` wide.
    pub weights: Vec<Vec<BitVec>>,
    /// One `slack_bits`-wide bias per neuron.
    pub biases: Vec<BitVec>,
}

/// Per-neuron kernel grid, row-major cells of `num_bits`.
#[derive(Clone, Debug)]
pub struct KernelGrid {
    pub side: usize,
    pub cells: Vec<BitVec>,
}

/// Weight and bias bit-vectors allocated for one network.
#[derive(Clone, Debug)]
pub struct WeightVars {
    pub layers: Vec<LayerVars>,
    /// First-layer kernels for kernelised networks; `layers[0].weights` then
    /// holds the derived (circuit) weights.
    pub kernels: Option<Vec<KernelGrid>>,
    free_vars: Vec<Var>,
}

impl WeightVars {
    /// Variables the solver chooses freely (weight, bias and kernel bits), in
    /// allocation order. Derived kernelised weights are not included.
    pub fn model_vars(&self) -> &[Var] {
        &self.free_vars
    }

    /// Dense layers from existing bit-vectors (constants allowed); their
    /// variables, if any, become the model variables.
    pub fn from_layers(layers: Vec<LayerVars>) -> WeightVars {
        let mut free_vars = Vec::new();
        for layer in &layers {
            for (row, bias) in layer.weights.iter().zip(&layer.biases) {
                row.iter().for_each(|w| collect_vars(&mut free_vars, w));
                collect_vars(&mut free_vars, bias);
            }
        }
        WeightVars {
            layers,
            kernels: None,
            free_vars,
        }
    }
}

fn collect_vars(out: &mut Vec<Var>, bv: &BitVec) {
    out.extend(bv.bits().iter().filter_map(|l| l.var()));
}

/// Allocates every weight and bias of `net`. Kernelised networks get their
/// first layer from [`kernelised_weights`].
pub fn declare_weights(formula: &mut CnfFormula, net: &NetworkSpec, hp: &Hyperparams) -> Result<WeightVars> {
    net.validate()?;
    if matches!(net.architecture, Architecture::Kernelised { .. }) {
        return kernelised_weights(formula, net, hp);
    }
    let mut free_vars = Vec::new();
    let layers = (0..net.num_layers())
        .map(|l| declare_dense_layer(formula, net, hp, l, &mut free_vars))
        .collect();
    Ok(WeightVars {
        layers,
        kernels: None,
        free_vars,
    })
}

fn declare_dense_layer(
    formula: &mut CnfFormula,
    net: &NetworkSpec,
    hp: &Hyperparams,
    l: usize,
    free_vars: &mut Vec<Var>,
) -> LayerVars {
    let (fan_in, neurons) = net.layer_shape(l);
    let mut weights = Vec::with_capacity(neurons);
    let mut biases = Vec::with_capacity(neurons);
    for n in 0..neurons {
        let row: Vec<BitVec> = (0..fan_in)
            .map(|i| BitVec::fresh(formula, hp.num_bits, |b| weight_label(l, n, i, b)))
            .collect();
        row.iter().for_each(|w| collect_vars(free_vars, w));
        let bias = BitVec::fresh(formula, hp.slack_bits, |b| bias_label(l, n, b));
        collect_vars(free_vars, &bias);
        weights.push(row);
        biases.push(bias);
    }
    LayerVars { weights, biases }
}

/// Kernelised first layer: each neuron owns a kernel grid, and the weight of
/// every input pixel is the sum of its window (at `slack_bits`) shifted right
/// by [`window_shift`] and truncated back to `num_bits`. Overflow constraints
/// of the window sums are asserted directly into `formula`.
pub fn kernelised_weights(formula: &mut CnfFormula, net: &NetworkSpec, hp: &Hyperparams) -> Result<WeightVars> {
    net.validate()?;
    let Architecture::Kernelised {
        grid_side,
        window_size,
        window_stride,
    } = net.architecture
    else {
        return Err(Error::Config("kernelised_weights needs a kernelised network".into()));
    };
    let side = net.kernel_side().expect("kernelised");
    let (_, neurons) = net.layer_shape(0);
    let shift = window_shift(window_size);
    if shift >= hp.slack_bits {
        return Err(Error::Shape(format!("window {window_size} too large for slack_bits")));
    }

    let mut free_vars = Vec::new();
    let mut kernels = Vec::with_capacity(neurons);
    let mut weights = Vec::with_capacity(neurons);
    let mut biases = Vec::with_capacity(neurons);
    let mut side_constraints = SideConstraints::new();
    for n in 0..neurons {
        let cells: Vec<BitVec> = (0..side * side)
            .map(|k| BitVec::fresh(formula, hp.num_bits, |b| kernel_label(n, k / side, k % side, b)))
            .collect();
        cells.iter().for_each(|c| collect_vars(&mut free_vars, c));
        let bias = BitVec::fresh(formula, hp.slack_bits, |b| bias_label(0, n, b));
        collect_vars(&mut free_vars, &bias);

        let mut row = Vec::with_capacity(net.input_dim);
        for pixel in 0..net.input_dim {
            let mut acc: Option<BitVec> = None;
            for (r, c) in window_cells(pixel, grid_side, window_size, window_stride) {
                let term = sign_extend(&cells[r * side + c], hp.slack_bits)?;
                acc = Some(match acc {
                    None => term,
                    Some(prev) => {
                        let (sum, sc) = bitwise_add(formula, &prev, &term, AddMode::Signed)?;
                        side_constraints.extend(sc);
                        sum
                    }
                });
            }
            let avg = drop_lsbs(&acc.expect("window_size >= 1"), shift)?;
            row.push(avg.low_bits(hp.num_bits)?);
        }
        kernels.push(KernelGrid { side, cells });
        weights.push(row);
        biases.push(bias);
    }
    side_constraints.assert_into(formula);

    let mut layers = vec![LayerVars { weights, biases }];
    for l in 1..net.num_layers() {
        layers.push(declare_dense_layer(formula, net, hp, l, &mut free_vars));
    }
    Ok(WeightVars {
        layers,
        kernels: Some(kernels),
        free_vars,
    })
}

/// Plain ReLU: sign cleared, every other bit masked by the inverted sign.
pub fn relu(formula: &mut CnfFormula, bv: &BitVec) -> BitVec {
    let not_sign = !bv.sign();
    let mut bits = vec![Lit::FALSE];
    bits.extend(bv.bits()[1..].iter().map(|&b| formula.and(b, not_sign)));
    BitVec::from_bits(bits).expect("non-empty")
}

/// Stepped, clipped ReLU from `slack_bits` down to `num_bits`:
/// `min(max(floor(x / 2^regret_bits), 0), 2^(num_bits-1) - 1)`.
pub fn relu_clipped(
    formula: &mut CnfFormula,
    bv: &BitVec,
    hp: &Hyperparams,
) -> Result<(BitVec, SideConstraints)> {
    let s = hp.slack_bits as usize;
    let nb = hp.num_bits as usize;
    if bv.width() as usize != s {
        return Err(Error::Shape(format!(
            "relu_clipped expects {s} bits, got {}",
            bv.width()
        )));
    }
    let shifted = drop_lsbs(&relu(formula, bv), hp.regret_bits)?;
    let bits = shifted.bits();
    // any set bit above the low num_bits-1 positions saturates the output
    let saturated = bits[1..=s - nb]
        .iter()
        .fold(Lit::FALSE, |acc, &b| formula.or(acc, b));
    let mut out = vec![Lit::FALSE];
    out.extend(bits[s - nb + 1..].iter().map(|&b| formula.or(b, saturated)));
    Ok((BitVec::from_bits(out)?, SideConstraints::new()))
}

/// `sum_i weights[i] * inputs[i] + bias` at `slack_bits`, accumulated in
/// input order with the bias added last.
pub fn weighted_sum(
    formula: &mut CnfFormula,
    inputs: &[BitVec],
    weights: &[BitVec],
    bias: &BitVec,
    hp: &Hyperparams,
) -> Result<(BitVec, SideConstraints)> {
    if inputs.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} inputs but {} weights",
            inputs.len(),
            weights.len()
        )));
    }
    if bias.width() != hp.slack_bits {
        return Err(Error::Shape(format!(
            "bias must be {} bits, got {}",
            hp.slack_bits,
            bias.width()
        )));
    }
    let mut side = SideConstraints::new();
    let mut acc: Option<BitVec> = None;
    for (x, w) in inputs.iter().zip(weights) {
        let (p, sc) = bitwise_mul(formula, w, x, hp)?;
        side.extend(sc);
        acc = Some(match acc {
            None => p,
            Some(prev) => {
                let (sum, sc) = bitwise_add(formula, &prev, &p, AddMode::Signed)?;
                side.extend(sc);
                sum
            }
        });
    }
    let total = match acc {
        None => bias.clone(),
        Some(prev) => {
            let (sum, sc) = bitwise_add(formula, &prev, bias, AddMode::Signed)?;
            side.extend(sc);
            sum
        }
    };
    Ok((total, side))
}

/// Margin constraints on the raw output `y`, with `u = slack_bits - cost_bits - 1`.
/// Positive labels need sign 0 and one of bits `1..=u` set (`y >= 2^cost_bits`).
/// Negative labels need sign 1 and, under [`MarginRule::Threshold`], one of
/// bits `1..=u` clear or all lower bits clear (`y <= -2^cost_bits`); under
/// [`MarginRule::BitPattern`] bits `1..=u` all clear.
pub fn encode_cost(formula: &mut CnfFormula, y: &BitVec, label: Label, hp: &Hyperparams) -> Result<()> {
    if y.width() != hp.slack_bits {
        return Err(Error::Shape(format!(
            "cost expects {} bits, got {}",
            hp.slack_bits,
            y.width()
        )));
    }
    if hp.cost_bits + 1 >= hp.slack_bits {
        return Err(Error::Config("cost_bits must be < slack_bits - 1".into()));
    }
    let upper = (hp.slack_bits - hp.cost_bits - 1) as usize;
    let bits = y.bits();
    match (label, hp.margin) {
        (Label::Positive, _) => {
            formula.assert_lit(!bits[0]);
            formula.add_clause(bits[1..=upper].iter().copied());
        }
        (Label::Negative, MarginRule::Threshold) => {
            formula.assert_lit(bits[0]);
            let low_clear = bits[upper + 1..]
                .iter()
                .fold(Lit::TRUE, |acc, &b| formula.and(acc, !b));
            let clause: Vec<Lit> = bits[1..=upper].iter().map(|&b| !b).chain([low_clear]).collect();
            formula.add_clause(clause);
        }
        (Label::Negative, MarginRule::BitPattern) => {
            formula.assert_lit(bits[0]);
            for &b in &bits[1..=upper] {
                formula.assert_lit(!b);
            }
        }
    }
    Ok(())
}

/// Forward pass of one example; returns the `slack_bits` output and all
/// overflow constraints (not yet asserted).
pub fn encode_forward(
    formula: &mut CnfFormula,
    net: &NetworkSpec,
    weights: &WeightVars,
    features: &[i64],
    hp: &Hyperparams,
) -> Result<(BitVec, SideConstraints)> {
    if features.len() != net.input_dim {
        return Err(Error::Shape(format!(
            "example has {} features, network expects {}",
            features.len(),
            net.input_dim
        )));
    }
    let mut activations = features
        .iter()
        .map(|&v| BitVec::constant(v, hp.num_bits))
        .collect::<Result<Vec<_>>>()?;
    let mut side = SideConstraints::new();
    let last = net.num_layers() - 1;
    for (l, layer) in weights.layers.iter().enumerate() {
        let mut next = Vec::with_capacity(layer.biases.len());
        for (row, bias) in layer.weights.iter().zip(&layer.biases) {
            let (sum, sc) = weighted_sum(formula, &activations, row, bias, hp)?;
            side.extend(sc);
            if l == last {
                return Ok((sum, side));
            }
            let (act, sc) = relu_clipped(formula, &sum, hp)?;
            side.extend(sc);
            next.push(act);
        }
        activations = next;
    }
    unreachable!("network has an output layer")
}

/// Formula for one batch, with the weight variables it is defined over.
#[derive(Clone, Debug)]
pub struct EncodedBatch {
    pub formula: CnfFormula,
    pub weights: WeightVars,
}

/// One shared weight declaration; per example the forward pass, its overflow
/// constraints and the margin constraints.
pub fn encode_batch(net: &NetworkSpec, batch: &[Example], hp: &Hyperparams) -> Result<EncodedBatch> {
    hp.validate()?;
    net.validate()?;
    if batch.is_empty() {
        return Err(Error::Config("cannot encode an empty batch".into()));
    }
    let mut formula = CnfFormula::new();
    let weights = declare_weights(&mut formula, net, hp)?;
    for ex in batch {
        let (y, side) = encode_forward(&mut formula, net, &weights, &ex.features, hp)?;
        side.assert_into(&mut formula);
        encode_cost(&mut formula, &y, ex.label, hp)?;
    }
    Ok(EncodedBatch { formula, weights })
}
