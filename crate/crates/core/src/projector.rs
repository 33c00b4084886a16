//! Learned maps from signal space back to the structured latent space, and
//! the pixel-domain denoiser used by the plug-and-play baseline.

use crate::error::{Error, Result};
use crate::generative::{sample_latent, Generator, LatentLayout, LatentVector, SampleMode};
use crate::mlp::{train_with, Activation, Loss, MlpNetwork, OutputBlockSpec, TrainConfig};
use crate::tensor::{derive_seed, DenseVector, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Gaussian,
    Uniform,
}

/// Additive training noise. `scale` is the standard deviation (gaussian)
/// or half-width (uniform).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub scale: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, scale: f64, seed: u64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::Parameter(format!("noise scale must be ≥ 0, got {scale}")));
        }
        Ok(Self { kind, scale, seed })
    }

    pub fn gaussian(scale: f64, seed: u64) -> Result<Self> {
        Self::new(NoiseKind::Gaussian, scale, seed)
    }

    pub fn none() -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            scale: 0.0,
            seed: 0,
        }
    }

    pub fn with_scale(self, scale: f64) -> Result<Self> {
        Self::new(self.kind, scale, self.seed)
    }

    /// `x + ε`; returns `x` unchanged when the scale is zero.
    pub fn perturb(&self, x: &[f64], rng: &mut Rng) -> DenseVector {
        if self.scale == 0.0 {
            return DenseVector::new(x.to_vec());
        }
        x.iter()
            .map(|xi| {
                xi + match self.kind {
                    NoiseKind::Gaussian => self.scale * rng.normal(),
                    NoiseKind::Uniform => rng.uniform_range(-self.scale, self.scale),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    net: MlpNetwork,
    layout: LatentLayout,
}

impl Projector {
    /// The network must emit `L` values with a softmax block over exactly
    /// each categorical group and no softmax anywhere else.
    pub fn new(net: MlpNetwork, layout: LatentLayout) -> Result<Self> {
        if net.output_dim() != layout.l() {
            return Err(Error::dim("projector output vs latent dimension", layout.l(), net.output_dim()));
        }
        let groups: Vec<(usize, usize)> = layout.group_ranges().collect();
        for b in net.output_blocks().blocks() {
            let is_group = groups.contains(&(b.offset, b.len));
            if is_group != (b.activation == Activation::Softmax) {
                return Err(Error::Parameter(format!(
                    "projector block at {}..{} must {}use softmax",
                    b.offset,
                    b.offset + b.len,
                    if is_group { "" } else { "not " }
                )));
            }
        }
        let softmax_blocks = net
            .output_blocks()
            .blocks()
            .iter()
            .filter(|b| b.activation == Activation::Softmax)
            .count();
        if softmax_blocks != groups.len() {
            return Err(Error::Parameter("every categorical group needs its own softmax block".into()));
        }
        Ok(Self { net, layout })
    }

    /// Fresh projector `N → hidden… → L` with relu hidden layers.
    pub fn random(n: usize, hidden_dims: &[usize], layout: &LatentLayout, seed: u64) -> Result<Self> {
        let mut dims = vec![n];
        dims.extend_from_slice(hidden_dims);
        dims.push(layout.l());
        let mut acts = vec![Activation::Relu; hidden_dims.len()];
        acts.push(Activation::Identity);
        let net = MlpNetwork::random(&dims, &acts, layout.output_blocks(), &mut Rng::new(seed))?;
        Self::new(net, layout.clone())
    }

    pub fn net(&self) -> &MlpNetwork {
        &self.net
    }

    pub fn layout(&self) -> &LatentLayout {
        &self.layout
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Forward pass followed by constraint enforcement.
    pub fn project(&self, x: &[f64]) -> Result<LatentVector> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("projector input", self.input_dim(), x.len()));
        }
        let raw = self.net.forward(x)?;
        let mut z = LatentVector::from_flat(&self.layout, &raw)?;
        z.enforce(&self.layout);
        Ok(z)
    }
}

fn check_pair(gen: &Generator, proj: &Projector) -> Result<()> {
    if proj.input_dim() != gen.n() {
        return Err(Error::dim("projector input vs signal dimension", gen.n(), proj.input_dim()));
    }
    if !proj.layout().same_shape(gen.layout()) {
        return Err(Error::Parameter("projector and generator latent layouts differ".into()));
    }
    Ok(())
}

/// Latent-supervised samples `(G(z) + ε, z)` with hard codewords.
pub fn method1_dataset(
    gen: &Generator,
    noise: &NoiseModel,
    num_samples: usize,
    seed: u64,
) -> Result<Vec<(DenseVector, DenseVector)>> {
    let mut latent_rng = Rng::new(derive_seed(seed, 1));
    let mut noise_rng = Rng::new(noise.seed);
    (0..num_samples)
        .map(|_| {
            let z = sample_latent(gen.layout(), &mut latent_rng, SampleMode::Hard);
            let x = gen.generate(&z)?;
            Ok((noise.perturb(&x, &mut noise_rng), z.flat()))
        })
        .collect()
}

/// Mean mixed loss of `proj` on a latent-supervised dataset.
pub fn method1_loss(proj: &Projector, data: &[(DenseVector, DenseVector)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, z) in data {
        let trace = proj.net.forward_trace(x)?;
        total += proj.net.loss_and_cotangent(&trace, z, Loss::Mixed)?.0;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Method I: regress `z` from noisy generated samples `G(z) + ε`, with
/// cross-entropy on categorical groups and squared error elsewhere.
pub fn train_projector_method1(
    gen: &Generator,
    init: Projector,
    noise: &NoiseModel,
    num_samples: usize,
    cfg: &TrainConfig,
) -> Result<(Projector, Vec<f64>)> {
    check_pair(gen, &init)?;
    if num_samples == 0 {
        return Err(Error::Parameter("num_samples must be ≥ 1".into()));
    }
    let data = method1_dataset(gen, noise, num_samples, cfg.seed)?;
    train_projector_on(init, &data, cfg)
}

/// Fit a projector to explicit `(x, z)` pairs with the mixed loss.
pub fn train_projector_on(init: Projector, data: &[(DenseVector, DenseVector)], cfg: &TrainConfig) -> Result<(Projector, Vec<f64>)> {
    let mut net = init.net;
    if let Some(k) = data.iter().position(|(x, z)| x.len() != net.input_dim() || z.len() != net.output_dim()) {
        return Err(Error::dim(format!("projector training pair {k}"), net.input_dim(), data[k].0.len()));
    }
    let trace = train_with(&mut net, data.len(), cfg, |net, i, grads| {
        let (x, z) = &data[i];
        net.accumulate_loss(x, z, Loss::Mixed, grads)
    })?;
    Ok((Projector { net, layout: init.layout }, trace))
}

/// Outcome of [`train_projector_noise_sweep`].
#[derive(Debug, Clone)]
pub struct NoiseSweepResult {
    pub projector: Projector,
    pub loss_trace: Vec<f64>,
    pub noise_scale: f64,
    pub validation_losses: Vec<(f64, f64)>,
}

/// Method I at each noise level `fraction × RMS(signal)`, keeping the
/// projector with the lowest validation loss. The validation set mixes
/// every candidate level in equal parts so all candidates face the same
/// test.
pub fn train_projector_noise_sweep(
    gen: &Generator,
    init: Projector,
    noise: &NoiseModel,
    fractions: &[f64],
    num_samples: usize,
    num_validation: usize,
    cfg: &TrainConfig,
) -> Result<NoiseSweepResult> {
    if fractions.is_empty() {
        return Err(Error::Parameter("noise sweep needs at least one level".into()));
    }
    let clean = method1_dataset(gen, &NoiseModel::none(), 256, derive_seed(cfg.seed, 7))?;
    let rms = (clean.iter().map(|(x, _)| x.norm_sq()).sum::<f64>()
        / (clean.len() * gen.n()) as f64)
        .sqrt();
    let scales: Vec<f64> = fractions.iter().map(|f| f * rms).collect();

    let per_level = num_validation.div_ceil(scales.len()).max(1);
    let mut validation = Vec::new();
    for (i, &s) in scales.iter().enumerate() {
        let val_noise = noise.with_scale(s)?;
        let val_noise = NoiseModel { seed: derive_seed(noise.seed, 100 + i as u64), ..val_noise };
        validation.extend(method1_dataset(gen, &val_noise, per_level, derive_seed(cfg.seed, 200 + i as u64))?);
    }

    let mut best: Option<(f64, Projector, Vec<f64>, f64)> = None;
    let mut losses = Vec::new();
    for &s in &scales {
        let (proj, trace) = train_projector_method1(gen, init.clone(), &noise.with_scale(s)?, num_samples, cfg)?;
        let val = method1_loss(&proj, &validation)?;
        losses.push((s, val));
        if best.as_ref().is_none_or(|b| val < b.0) {
            best = Some((val, proj, trace, s));
        }
    }
    let (_, projector, loss_trace, noise_scale) = best.expect("at least one level");
    let result = NoiseSweepResult {
        projector,
        loss_trace,
        noise_scale,
        validation_losses: losses,
    };
    Ok(result)
}

/// `½‖G(P(x)) − x‖²` averaged over `data`.
pub fn method2_loss(gen: &Generator, proj: &Projector, data: &[DenseVector]) -> Result<f64> {
    let mut total = 0.0;
    for x in data {
        let z = proj.net.forward(x)?;
        total += 0.5 * gen.generate_flat(&z)?.sub(x).norm_sq();
    }
    Ok(total / data.len().max(1) as f64)
}

/// Method II: train `P` so that `G(P(x + ε)) ≈ x`, backpropagating through
/// the frozen generator.
pub fn train_projector_method2(
    gen: &Generator,
    init: Projector,
    dataset: &[DenseVector],
    noise: &NoiseModel,
    cfg: &TrainConfig,
) -> Result<(Projector, Vec<f64>)> {
    check_pair(gen, &init)?;
    if dataset.is_empty() {
        return Err(Error::Parameter("training set is empty".into()));
    }
    if let Some(k) = dataset.iter().position(|x| x.len() != gen.n()) {
        return Err(Error::dim(format!("training sample {k}"), gen.n(), dataset[k].len()));
    }
    let mut noise_rng = Rng::new(noise.seed);
    let noisy: Vec<DenseVector> = dataset.iter().map(|x| noise.perturb(x, &mut noise_rng)).collect();
    let gnet = gen.net();
    let mut net = init.net;
    let trace = train_with(&mut net, dataset.len(), cfg, |net, i, grads| {
        let ptrace = net.forward_trace(&noisy[i])?;
        let z = ptrace.output();
        let residual = gnet.forward(z)?.sub(&dataset[i]);
        let cot_z = gnet.grad_input(z, &residual)?;
        net.accumulate_output_cotangent(&ptrace, &cot_z, grads)?;
        Ok(0.5 * residual.norm_sq())
    })?;
    Ok((Projector { net, layout: init.layout }, trace))
}

/// Pixel-domain denoising autoencoder `N → hidden… → N` (relu hidden,
/// identity output) trained on `(x + ε, x)`. Empty `hidden_dims` gives a
/// single linear layer.
pub fn train_denoiser(
    dataset: &[DenseVector],
    noise: &NoiseModel,
    hidden_dims: &[usize],
    cfg: &TrainConfig,
) -> Result<(MlpNetwork, Vec<f64>)> {
    let n = dataset
        .first()
        .ok_or_else(|| Error::Parameter("training set is empty".into()))?
        .len();
    if let Some(k) = dataset.iter().position(|x| x.len() != n) {
        return Err(Error::dim(format!("training sample {k}"), n, dataset[k].len()));
    }
    let mut dims = vec![n];
    dims.extend_from_slice(hidden_dims);
    dims.push(n);
    let mut acts = vec![Activation::Relu; hidden_dims.len()];
    acts.push(Activation::Identity);
    let mut rng = Rng::new(derive_seed(cfg.seed, 0xDAE));
    let mut net = MlpNetwork::random(&dims, &acts, OutputBlockSpec::identity(n), &mut rng)?;
    let mut noise_rng = Rng::new(noise.seed);
    let noisy: Vec<DenseVector> = dataset.iter().map(|x| noise.perturb(x, &mut noise_rng)).collect();
    let trace = train_with(&mut net, dataset.len(), cfg, |net, i, grads| {
        net.accumulate_loss(&noisy[i], &dataset[i], Loss::SquaredError, grads)
    })?;
    Ok((net, trace))
}
