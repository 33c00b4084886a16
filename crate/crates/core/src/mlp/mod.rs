//! Dense feed-forward networks with exact forward semantics and hand-written
//! backpropagation for both parameters and inputs.
//!
//! A network is a chain of [`DenseLayer`]s followed by an
//! [`OutputBlockSpec`] that applies a per-block activation to contiguous
//! slices of the final layer's output. Softmax only exists at block level:
//! the network output is `blocks(act_last(W_last · … + b_last))`.

mod train;

pub use train::{train_supervised, train_with, Optimizer, TrainConfig};

use crate::error::{Error, Result};
use crate::tensor::{spectral_norm, DenseMatrix, DenseVector, Rng};

/// Safety factor applied to each numerically computed spectral norm.
const SPECTRAL_SAFETY: f64 = 1.0 + 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    /// Only valid inside an output block.
    Softmax,
}

impl Activation {
    pub fn id(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
            Activation::Softmax => 4,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        Some(match id {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Sigmoid,
            4 => Activation::Softmax,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
        }
    }

    /// Global Lipschitz constant of the activation in the L2 norm.
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            _ => 1.0,
        }
    }

    fn apply_in_place(self, xs: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => xs.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Tanh => xs.iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Sigmoid => xs.iter_mut().for_each(|x| *x = 1.0 / (1.0 + (-*x).exp())),
            Activation::Softmax => softmax_in_place(xs),
        }
    }

    /// Vector-Jacobian product given the activation *output* `ys`.
    fn vjp(self, ys: &[f64], cot: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for (g, y) in cot.iter_mut().zip(ys) {
                    if *y <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (g, y) in cot.iter_mut().zip(ys) {
                    *g *= 1.0 - y * y;
                }
            }
            Activation::Sigmoid => {
                for (g, y) in cot.iter_mut().zip(ys) {
                    *g *= y * (1.0 - y);
                }
            }
            Activation::Softmax => {
                let inner: f64 = cot.iter().zip(ys).map(|(g, p)| g * p).sum();
                for (g, p) in cot.iter_mut().zip(ys) {
                    *g = p * (*g - inner);
                }
            }
        }
    }
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    xs.iter_mut().for_each(|x| *x /= sum);
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: DenseMatrix,
    bias: DenseVector,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: DenseMatrix, bias: DenseVector, activation: Activation) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::dim("layer bias", weights.rows(), bias.len()));
        }
        if activation == Activation::Softmax {
            return Err(Error::Parameter(
                "softmax is only allowed on output blocks".into(),
            ));
        }
        if !weights.is_finite() || !bias.is_finite() {
            return Err(Error::Parameter("layer parameters must be finite".into()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    /// Linear layer `y = W x` with zero bias.
    pub fn linear(weights: DenseMatrix) -> Self {
        let bias = DenseVector::zeros(weights.rows());
        Self {
            weights,
            bias,
            activation: Activation::Identity,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn bias(&self) -> &DenseVector {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputBlock {
    pub offset: usize,
    pub len: usize,
    pub activation: Activation,
}

/// Disjoint, sorted blocks tiling `[0, output_dim)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputBlockSpec {
    blocks: Vec<OutputBlock>,
}

impl OutputBlockSpec {
    pub fn new(blocks: Vec<OutputBlock>, output_dim: usize) -> Result<Self> {
        let mut cursor = 0;
        for (i, b) in blocks.iter().enumerate() {
            if b.offset != cursor {
                return Err(Error::Parameter(format!(
                    "output block {i} starts at {} but previous blocks end at {cursor}",
                    b.offset
                )));
            }
            if b.len == 0 {
                return Err(Error::Parameter(format!("output block {i} is empty")));
            }
            cursor += b.len;
        }
        if cursor != output_dim {
            return Err(Error::dim("output blocks coverage", output_dim, cursor));
        }
        Ok(Self { blocks })
    }

    /// A single identity block over the whole output (or none for dim 0).
    pub fn identity(output_dim: usize) -> Self {
        let blocks = if output_dim == 0 {
            Vec::new()
        } else {
            vec![OutputBlock {
                offset: 0,
                len: output_dim,
                activation: Activation::Identity,
            }]
        };
        Self { blocks }
    }

    pub fn blocks(&self) -> &[OutputBlock] {
        &self.blocks
    }

    pub fn output_dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len)
    }

    fn apply(&self, xs: &mut [f64]) {
        for b in &self.blocks {
            b.activation.apply_in_place(&mut xs[b.offset..b.offset + b.len]);
        }
    }

    fn vjp(&self, outputs: &[f64], cot: &mut [f64]) {
        for b in &self.blocks {
            let r = b.offset..b.offset + b.len;
            b.activation.vjp(&outputs[r.clone()], &mut cot[r]);
        }
    }

    fn lipschitz(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.activation.lipschitz())
            .fold(0.0, f64::max)
    }
}

/// Training loss for supervised fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// `½‖o − t‖²`
    SquaredError,
    /// Cross-entropy on every softmax block, `½‖o − t‖²` on the rest.
    Mixed,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `inputs[k]` is the input to layer `k`; the last entry is the final
    /// layer's activation output (before output blocks).
    inputs: Vec<DenseVector>,
    output: DenseVector,
}

impl Trace {
    pub fn output(&self) -> &DenseVector {
        &self.output
    }

    fn last_activation(&self) -> &DenseVector {
        self.inputs.last().expect("trace holds at least the input")
    }
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: DenseMatrix,
    pub bias: DenseVector,
}

impl Gradients {
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: DenseMatrix::zeros(l.out_dim(), l.in_dim()),
                    bias: DenseVector::zeros(l.out_dim()),
                })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weights.data_mut().iter_mut().for_each(|x| *x = 0.0);
            l.bias.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Flattened view in the same order as [`MlpNetwork::params_mut`].
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.data().iter().chain(l.bias.iter()).copied())
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weights.data_mut().iter_mut().for_each(|x| *x *= alpha);
            l.bias.scale(alpha);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layers: Vec<DenseLayer>,
    output_blocks: OutputBlockSpec,
}

impl MlpNetwork {
    pub fn new(layers: Vec<DenseLayer>, output_blocks: OutputBlockSpec) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parameter("network needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::dim(
                    format!("layer {} input (chained from layer {k})", k + 1),
                    pair[0].out_dim(),
                    pair[1].in_dim(),
                ));
            }
        }
        let out = layers.last().map(DenseLayer::out_dim).unwrap_or(0);
        if output_blocks.output_dim() != out {
            return Err(Error::dim("output block coverage", out, output_blocks.output_dim()));
        }
        Ok(Self {
            layers,
            output_blocks,
        })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let out = layers.last().map(DenseLayer::out_dim).unwrap_or(0);
        Self::new(layers, OutputBlockSpec::identity(out))
    }

    /// Single identity-activation layer with weights `I` and zero bias.
    pub fn identity(dim: usize) -> Self {
        Self::from_layers(vec![DenseLayer::linear(DenseMatrix::identity(dim))])
            .expect("identity layer is valid")
    }

    /// Randomly initialized network with layer widths `dims` (input first).
    /// Relu layers use He-uniform weights, everything else Xavier-uniform;
    /// biases start at zero.
    pub fn random(
        dims: &[usize],
        activations: &[Activation],
        output_blocks: OutputBlockSpec,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::Parameter(format!(
                "need one activation per layer: {} widths, {} activations",
                dims.len(),
                activations.len()
            )));
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (k, &act) in activations.iter().enumerate() {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let limit = match act {
                Activation::Relu => (6.0 / fan_in.max(1) as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out).max(1) as f64).sqrt(),
            };
            let w = DenseMatrix::from_fn(fan_out, fan_in, |_, _| rng.uniform_range(-limit, limit));
            layers.push(DenseLayer::new(w, DenseVector::zeros(fan_out), act)?);
        }
        Self::new(layers, output_blocks)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn output_blocks(&self) -> &OutputBlockSpec {
        &self.output_blocks
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    /// Mutable flattened parameters: per layer, weights row-major then bias.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers.iter_mut().flat_map(|l| {
            l.weights
                .data_mut()
                .iter_mut()
                .chain(l.bias.iter_mut())
        })
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.data().iter().chain(l.bias.iter()).copied())
    }

    pub fn forward(&self, input: &[f64]) -> Result<DenseVector> {
        Ok(self.forward_trace(input)?.output)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), input.len()));
        }
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        inputs.push(DenseVector::new(input.to_vec()));
        for (k, layer) in self.layers.iter().enumerate() {
            let x = inputs.last().expect("non-empty");
            let mut h = layer.weights.matvec_unchecked(x);
            for (hi, bi) in h.iter_mut().zip(layer.bias.iter()) {
                *hi += bi;
            }
            layer.activation.apply_in_place(&mut h);
            if !h.is_finite() {
                return Err(Error::numeric(format!("forward pass, layer {k}"), k));
            }
            inputs.push(h);
        }
        let mut output = inputs.last().expect("non-empty").clone();
        self.output_blocks.apply(&mut output);
        if !output.is_finite() {
            return Err(Error::numeric("forward pass, output blocks", self.layers.len()));
        }
        Ok(Trace { inputs, output })
    }

    /// Backpropagate a cotangent on the final layer's activation output
    /// (before output blocks). Accumulates into `grads` when given and
    /// returns the cotangent on the network input.
    fn backprop(
        &self,
        trace: &Trace,
        cot_last: DenseVector,
        mut grads: Option<&mut Gradients>,
    ) -> DenseVector {
        let mut g = cot_last;
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let out = &trace.inputs[k + 1];
            layer.activation.vjp(out, &mut g);
            if let Some(grads) = grads.as_deref_mut() {
                let lg = &mut grads.layers[k];
                let x = &trace.inputs[k];
                for (i, &gi) in g.iter().enumerate() {
                    if gi == 0.0 {
                        continue;
                    }
                    for (w, xj) in lg.weights.row_mut(i).iter_mut().zip(x.iter()) {
                        *w += gi * xj;
                    }
                }
                lg.bias.axpy(1.0, &g);
            }
            g = layer.weights.matvec_t_unchecked(&g);
        }
        g
    }

    fn output_cotangent_to_last(&self, trace: &Trace, cot_out: &[f64]) -> DenseVector {
        let mut g = DenseVector::new(cot_out.to_vec());
        self.output_blocks.vjp(&trace.output, &mut g);
        g
    }

    /// Loss value and its gradient with respect to the final layer's
    /// activation output. Softmax blocks under [`Loss::Mixed`] use the
    /// fused softmax/cross-entropy gradient `p·Σt − t`.
    pub fn loss_and_cotangent(
        &self,
        trace: &Trace,
        target: &[f64],
        loss: Loss,
    ) -> Result<(f64, DenseVector)> {
        if target.len() != self.output_dim() {
            return Err(Error::dim("loss target", self.output_dim(), target.len()));
        }
        let out = &trace.output;
        let last = trace.last_activation();
        let mut value = 0.0;
        let mut cot = DenseVector::zeros(out.len());
        for b in self.output_blocks.blocks() {
            let r = b.offset..b.offset + b.len;
            if loss == Loss::Mixed && b.activation == Activation::Softmax {
                let logits = &last[r.clone()];
                let lse = log_sum_exp(logits);
                let t = &target[r.clone()];
                let t_sum: f64 = t.iter().sum();
                for (&z, &ti) in logits.iter().zip(t) {
                    value -= ti * (z - lse);
                }
                for ((c, &p), &ti) in cot[r.clone()].iter_mut().zip(&out[r.clone()]).zip(t) {
                    *c = p * t_sum - ti;
                }
            } else {
                let mut g: Vec<f64> = out[r.clone()]
                    .iter()
                    .zip(&target[r.clone()])
                    .map(|(o, t)| o - t)
                    .collect();
                value += 0.5 * g.iter().map(|x| x * x).sum::<f64>();
                b.activation.vjp(&out[r.clone()], &mut g);
                cot[r].copy_from_slice(&g);
            }
        }
        Ok((value, cot))
    }

    /// Loss and exact parameter gradients for one sample.
    pub fn grad_params(
        &self,
        input: &[f64],
        target: &[f64],
        loss: Loss,
    ) -> Result<(f64, Gradients)> {
        let trace = self.forward_trace(input)?;
        let (value, cot) = self.loss_and_cotangent(&trace, target, loss)?;
        let mut grads = Gradients::zeros_like(self);
        self.backprop(&trace, cot, Some(&mut grads));
        Ok((value, grads))
    }

    /// Accumulate parameter gradients for an arbitrary cotangent on the
    /// network output; returns the input cotangent.
    pub fn accumulate_output_cotangent(
        &self,
        trace: &Trace,
        cot_out: &[f64],
        grads: &mut Gradients,
    ) -> Result<DenseVector> {
        if cot_out.len() != self.output_dim() {
            return Err(Error::dim("output cotangent", self.output_dim(), cot_out.len()));
        }
        let g = self.output_cotangent_to_last(trace, cot_out);
        Ok(self.backprop(trace, g, Some(grads)))
    }

    /// Accumulate parameter gradients for a supervised loss; returns the
    /// loss value.
    pub fn accumulate_loss(
        &self,
        input: &[f64],
        target: &[f64],
        loss: Loss,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let trace = self.forward_trace(input)?;
        let (value, cot) = self.loss_and_cotangent(&trace, target, loss)?;
        self.backprop(&trace, cot, Some(grads));
        Ok(value)
    }

    /// `Jᵀ · cotangent`, with `J` the Jacobian of the network at `input`.
    pub fn grad_input(&self, input: &[f64], cotangent: &[f64]) -> Result<DenseVector> {
        if cotangent.len() != self.output_dim() {
            return Err(Error::dim("cotangent", self.output_dim(), cotangent.len()));
        }
        let trace = self.forward_trace(input)?;
        let g = self.output_cotangent_to_last(&trace, cotangent);
        Ok(self.backprop(&trace, g, None))
    }

    /// Certified upper bound on the network's L2 Lipschitz constant: the
    /// product of weight spectral norms and activation constants.
    pub fn lipschitz_upper_bound(&self) -> f64 {
        let mut bound = self.output_blocks.lipschitz();
        for layer in &self.layers {
            bound *= spectral_norm(&layer.weights) * SPECTRAL_SAFETY * layer.activation.lipschitz();
        }
        bound
    }
}
