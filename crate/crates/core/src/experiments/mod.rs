//! Config-driven experiment runner: synthetic or loaded generators, trained
//! projectors and denoisers, compression sweeps and theory checks.

mod checks;
mod sweep;

pub use checks::{run_theory, CheckKind, CheckOutcome, TheorySummary};
pub use sweep::{
    measurements_for, run_recover_one, run_sweep, run_sweep_with, run_trial, trial_seed, sweep_csv, summary_csv, SummaryRow, SweepReport, TrialRow, SCHEMA_VERSION,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generative::{estimate_beta, make_synthetic_generator, sample_latent, Generator, LatentLayout, SampleMode};
use crate::mlp::{Loss, MlpNetwork, TrainConfig};
use crate::projector::{
    method1_dataset, train_denoiser, train_projector_noise_sweep, train_projector_on, NoiseModel, Projector,
};
use crate::recovery::SolverConfig;
use crate::tensor::{derive_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Sweep,
    Theory,
    Train,
    RecoverOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Pinv,
    Pnp,
    Csgm,
    Fcsrg,
    FcsrgUnstructured,
}

impl SolverKind {
    pub const ALL: [SolverKind; 5] = [
        SolverKind::Pinv,
        SolverKind::Pnp,
        SolverKind::Csgm,
        SolverKind::Fcsrg,
        SolverKind::FcsrgUnstructured,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Pinv => "pinv",
            SolverKind::Pnp => "pnp",
            SolverKind::Csgm => "csgm",
            SolverKind::Fcsrg => "fcsrg",
            SolverKind::FcsrgUnstructured => "fcsrg-unstructured",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorSource {
    Synthetic,
    /// An `FCW1` file with a layout section, or a bundle directory.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub source: GeneratorSource,
    pub path: Option<PathBuf>,
    pub n: usize,
    pub categorical: Vec<usize>,
    pub continuous: usize,
    pub v_dim: usize,
    pub beta_target: f64,
    pub hidden: Vec<usize>,
    #[serde(with = "seed_repr")]
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            source: GeneratorSource::Synthetic,
            path: None,
            n: 256,
            categorical: vec![10],
            continuous: 0,
            v_dim: 64,
            beta_target: 0.1,
            hidden: vec![64; 4],
            seed: 11,
        }
    }
}

/// Training recipe for a projector or denoiser. Inputs are corrupted with
/// Gaussian noise of standard deviation `noise_fraction × signal RMS`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub hidden: Vec<usize>,
    pub samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub noise_fraction: f64,
    /// Candidate noise fractions for projectors; when non-empty the one with
    /// the best validation loss wins and `noise_fraction` is ignored.
    pub noise_sweep: Vec<f64>,
    #[serde(with = "seed_repr")]
    pub seed: u64,
    /// Load these weights instead of training.
    pub path: Option<PathBuf>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            hidden: vec![128],
            samples: 4000,
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            noise_fraction: 0.2,
            noise_sweep: Vec::new(),
            seed: 3,
            path: None,
        }
    }
}

impl TrainSpec {
    fn train_config(&self, loss: Loss) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            loss,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub rho: f64,
    pub max_iters: usize,
    pub feasibility_tol: f64,
    pub lambda: f64,
    pub gd_step: f64,
    pub gd_iters: usize,
    pub restarts: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            rho: d.rho,
            max_iters: d.max_iters,
            feasibility_tol: d.feasibility_tol,
            lambda: d.lambda,
            gd_step: d.gd_step,
            gd_iters: d.gd_iters,
            restarts: d.restarts,
        }
    }
}

impl SolverSpec {
    pub fn config(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            rho: self.rho,
            max_iters: self.max_iters,
            feasibility_tol: self.feasibility_tol,
            lambda: self.lambda,
            gd_step: self.gd_step,
            gd_iters: self.gd_iters,
            restarts: self.restarts,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Compression ratios `N/M`.
    pub ratios: Vec<f64>,
    pub solvers: Vec<SolverKind>,
    pub trials: usize,
    pub noise_scale: f64,
    /// PGM dumps of `x*` and every `x̂` for the first trial of each ratio.
    pub dump_images: bool,
    pub image_width: usize,
    pub image_height: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            ratios: vec![4.0, 8.0, 16.0, 32.0, 64.0],
            solvers: SolverKind::ALL.to_vec(),
            trials: 100,
            noise_scale: 0.0,
            dump_images: false,
            image_width: 16,
            image_height: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySpec {
    pub checks: Vec<CheckKind>,
    pub epsilon: f64,
    pub delta: f64,
    pub num_pairs: usize,
    pub num_matrix_draws: usize,
    /// Slack as a fraction of the median pairwise distance.
    pub slack_fraction: f64,
    /// Leading constant of the latent-ball thresholds.
    pub constant: f64,
    pub operator_norm_n: usize,
    pub operator_norm_m: usize,
    pub operator_norm_draws: usize,
    pub jl_points: usize,
    pub jl_n: usize,
    /// Defaults to the lemma's threshold.
    pub jl_m: Option<usize>,
    /// Defaults to the check's threshold.
    pub isometry_m: Option<usize>,
    pub bound_m: usize,
    pub bound_trials: usize,
    pub off_manifold: f64,
    pub noise_scale: f64,
}

impl Default for TheorySpec {
    fn default() -> Self {
        Self {
            checks: vec![CheckKind::OperatorNorm, CheckKind::Jl, CheckKind::RecoveryBound],
            epsilon: 0.3,
            delta: 0.1,
            num_pairs: 200,
            num_matrix_draws: 100,
            slack_fraction: 0.05,
            constant: 16.0,
            operator_norm_n: 100,
            operator_norm_m: 20,
            operator_norm_draws: 1000,
            jl_points: 10,
            jl_n: 512,
            jl_m: None,
            isometry_m: None,
            bound_m: 24,
            bound_trials: 100,
            off_manifold: 0.0,
            noise_scale: 0.0,
        }
    }
}

/// Single-trial replay; `seed` and `m` come from a sweep CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverSpec {
    #[serde(with = "seed_repr")]
    pub seed: u64,
    pub m: usize,
    pub solvers: Vec<SolverKind>,
    pub noise_scale: f64,
    pub dump_images: bool,
}

impl Default for RecoverSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            m: 32,
            solvers: vec![SolverKind::Fcsrg],
            noise_scale: 0.0,
            dump_images: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(with = "seed_repr")]
    pub seed: u64,
    pub out: PathBuf,
    pub generator: GeneratorSpec,
    pub projector: TrainSpec,
    pub denoiser: TrainSpec,
    pub solver: SolverSpec,
    pub sweep: SweepSpec,
    pub theory: TheorySpec,
    pub recover: RecoverSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Sweep,
            seed: 0,
            out: PathBuf::from("out"),
            generator: GeneratorSpec::default(),
            // Picked on held-out trials at M = 24 among {0.02, 0.05, 0.1, 0.2}.
            projector: TrainSpec {
                noise_fraction: 0.05,
                ..TrainSpec::default()
            },
            denoiser: TrainSpec {
                samples: 2000,
                ..TrainSpec::default()
            },
            solver: SolverSpec::default(),
            sweep: SweepSpec::default(),
            theory: TheorySpec::default(),
            recover: RecoverSpec::default(),
        }
    }
}

/// TOML integers are signed, so seeds above `i64::MAX` (which derived trial
/// seeds routinely are) travel as decimal strings.
mod seed_repr {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&seed.to_string()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(i64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => u64::try_from(v).map_err(|_| de::Error::custom(format!("seed must be ≥ 0, got {v}"))),
            Repr::Text(t) => t
                .trim()
                .parse()
                .map_err(|_| de::Error::custom(format!("seed `{t}` is not an unsigned 64-bit integer"))),
        }
    }
}

/// Turn `value` into a TOML value; bare words become strings.
fn parse_override_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key v"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Apply `a.b.c=value` to a parsed document.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let Some((key, value)) = assignment.split_once('=') else {
        return Err(Error::Config(format!("override `{assignment}` is not KEY=VALUE")));
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` has an empty segment")));
    }
    let (last, path) = parts.split_last().expect("non-empty");
    let mut table = doc;
    for p in path {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    table.insert(last.to_string(), parse_override_value(value.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Parse a TOML document, apply overrides, validate. Relative paths in
    /// the document resolve against `base`.
    pub fn from_toml_str(text: &str, overrides: &[String], base: Option<&Path>) -> Result<Self> {
        let parse = |s: &str| toml::from_str::<ExperimentConfig>(s).map_err(|e| e.to_string());
        // Overrides go through a re-rendered document so errors keep line
        // and field context; without overrides lines match the file.
        let mut cfg = if overrides.is_empty() {
            parse(text).map_err(Error::Config)?
        } else {
            let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
            for o in overrides {
                apply_override(&mut doc, o)?;
            }
            let merged = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
            parse(&merged).map_err(|e| Error::Config(format!("after overrides: {e}")))?
        };
        if let Some(base) = base {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides, path.parent())
            .map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
                other => other,
            })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.generator.path);
        fix(&mut self.projector.path);
        fix(&mut self.denoiser.path);
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if let Some(r) = self.sweep.ratios.iter().find(|r| !(**r >= 1.0 && r.is_finite())) {
            return cfg_err(format!("sweep.ratios: every ratio must be ≥ 1, got {r}"));
        }
        if self.sweep.trials == 0 {
            return cfg_err("sweep.trials must be ≥ 1".into());
        }
        if !(self.sweep.noise_scale >= 0.0) || !(self.recover.noise_scale >= 0.0) {
            return cfg_err("noise_scale must be ≥ 0".into());
        }
        if self.generator.source == GeneratorSource::File {
            match &self.generator.path {
                None => return cfg_err("generator.path is required when generator.source = \"file\"".into()),
                Some(p) if !p.exists() => return cfg_err(format!("generator.path {} does not exist", p.display())),
                _ => {}
            }
        }
        for (name, spec) in [("projector", &self.projector), ("denoiser", &self.denoiser)] {
            if let Some(p) = &spec.path {
                if !p.exists() {
                    return cfg_err(format!("{name}.path {} does not exist", p.display()));
                }
            }
            if spec.noise_sweep.iter().any(|f| !(*f >= 0.0)) {
                return cfg_err(format!("{name}.noise_sweep entries must be ≥ 0"));
            }
            if !(spec.noise_fraction >= 0.0) {
                return cfg_err(format!("{name}.noise_fraction must be ≥ 0"));
            }
        }
        self.solver.config(0).validate()
    }
}

/// Build or load the generator, with `t_hat` and `beta_hat` filled in.
pub fn build_generator(spec: &GeneratorSpec) -> Result<Generator> {
    let mut gen = match spec.source {
        GeneratorSource::Synthetic => {
            let layout = LatentLayout::new(spec.categorical.clone(), spec.continuous, spec.v_dim)?;
            make_synthetic_generator(&layout, spec.n, spec.beta_target, &spec.hidden, spec.seed)?
        }
        GeneratorSource::File => {
            let path = spec
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("generator.path is required".into()))?;
            if path.is_dir() {
                let b = crate::bundle::load_bundle(path)?;
                b.check_parity(1e-5)?;
                b.generator
            } else {
                let (net, layout) = crate::weights::load_weights(path)?;
                let layout = layout.ok_or_else(|| {
                    Error::Config(format!("{} has no latent layout section", path.display()))
                })?;
                Generator::new(net, layout)?
            }
        }
    };
    if gen.t_hat.is_none() {
        gen.t_hat = Some(gen.net().lipschitz_upper_bound());
    }
    if gen.beta_hat.is_none() {
        gen.beta_hat = Some(estimate_beta(&gen, 32, 32, &mut Rng::new(derive_seed(spec.seed, 0xBE7A)))?);
    }
    Ok(gen)
}

/// RMS of generated signals over 64 hard draws.
pub fn signal_rms(gen: &Generator, seed: u64) -> Result<f64> {
    let mut rng = Rng::new(derive_seed(seed, 0x5126));
    let mut acc = 0.0;
    let draws = 64;
    for _ in 0..draws {
        acc += gen.generate(&sample_latent(gen.layout(), &mut rng, SampleMode::Hard))?.norm_sq();
    }
    Ok((acc / (draws * gen.n()) as f64).sqrt())
}

/// The same network over a single latent ball of radius `√(r_c² + r_v²)`.
pub fn unstructured_view(gen: &Generator) -> Result<Generator> {
    let layout = gen.layout();
    let flat = LatentLayout::with_radii(vec![], 0, layout.l(), 1.0, layout.radius())?;
    let mut g = Generator::new(gen.net().clone(), flat)?;
    g.t_hat = gen.t_hat;
    g.beta_hat = gen.beta_hat;
    Ok(g)
}

/// Everything a sweep needs besides the measurements.
pub struct Models {
    pub generator: Generator,
    pub projector: Option<Projector>,
    /// Unstructured generator view and its projector.
    pub unstructured: Option<(Generator, Projector)>,
    pub denoiser: Option<MlpNetwork>,
}

fn load_projector(path: &Path, n: usize) -> Result<Projector> {
    let (net, layout) = crate::weights::load_weights(path)?;
    let layout = layout.ok_or_else(|| Error::Config(format!("{} has no latent layout section", path.display())))?;
    if net.input_dim() != n {
        return Err(Error::dim("loaded projector input", n, net.input_dim()));
    }
    Projector::new(net, layout)
}

pub fn train_structured_projector(gen: &Generator, spec: &TrainSpec) -> Result<Projector> {
    if let Some(p) = &spec.path {
        return load_projector(p, gen.n());
    }
    train_projector_for(gen, gen, spec)
}

/// Train a projector for `target` (the latent space it must emit) on noisy
/// samples of `source`. A noise sweep samples from `target`'s own prior.
fn train_projector_for(source: &Generator, target: &Generator, spec: &TrainSpec) -> Result<Projector> {
    let init = Projector::random(source.n(), &spec.hidden, target.layout(), derive_seed(spec.seed, 0x9F0))?;
    let cfg = spec.train_config(Loss::Mixed);
    if !spec.noise_sweep.is_empty() {
        let noise = NoiseModel::gaussian(0.0, derive_seed(spec.seed, 0x401))?;
        let validation = (spec.samples / 5).max(1);
        return Ok(train_projector_noise_sweep(target, init, &noise, &spec.noise_sweep, spec.samples, validation, &cfg)?.projector);
    }
    let data = projector_data(source, spec)?;
    Ok(train_projector_on(init, &data, &cfg)?.0)
}

fn projector_data(gen: &Generator, spec: &TrainSpec) -> Result<Vec<(crate::tensor::DenseVector, crate::tensor::DenseVector)>> {
    let rms = signal_rms(gen, spec.seed)?;
    let noise = NoiseModel::gaussian(spec.noise_fraction * rms, derive_seed(spec.seed, 0x401))?;
    method1_dataset(gen, &noise, spec.samples, spec.seed)
}

/// Projector onto the single latent ball, trained on the same pairs as the
/// structured one but without the simplex output blocks.
pub fn train_unstructured_projector(gen: &Generator, spec: &TrainSpec) -> Result<(Generator, Projector)> {
    let flat = unstructured_view(gen)?;
    let proj = train_projector_for(gen, &flat, spec)?;
    Ok((flat, proj))
}

pub fn train_pixel_denoiser(gen: &Generator, spec: &TrainSpec) -> Result<MlpNetwork> {
    if let Some(p) = &spec.path {
        let (net, _) = crate::weights::load_weights(p)?;
        if net.input_dim() != gen.n() || net.output_dim() != gen.n() {
            return Err(Error::dim("loaded denoiser", gen.n(), net.input_dim()));
        }
        return Ok(net);
    }
    let mut rng = Rng::new(derive_seed(spec.seed, 0xDA7A));
    let data = (0..spec.samples)
        .map(|_| gen.generate(&sample_latent(gen.layout(), &mut rng, SampleMode::Hard)))
        .collect::<Result<Vec<_>>>()?;
    let rms = signal_rms(gen, spec.seed)?;
    let noise = NoiseModel::gaussian(spec.noise_fraction * rms, derive_seed(spec.seed, 0x402))?;
    Ok(train_denoiser(&data, &noise, &spec.hidden, &spec.train_config(Loss::SquaredError))?.0)
}

/// Train (or load) only what `solvers` needs.
pub fn prepare_models(cfg: &ExperimentConfig, solvers: &[SolverKind]) -> Result<Models> {
    let generator = build_generator(&cfg.generator)?;
    let needs = |k: SolverKind| solvers.contains(&k);
    let projector = if needs(SolverKind::Fcsrg) {
        Some(train_structured_projector(&generator, &cfg.projector)?)
    } else {
        None
    };
    let unstructured = if needs(SolverKind::FcsrgUnstructured) {
        Some(train_unstructured_projector(&generator, &cfg.projector)?)
    } else {
        None
    };
    let denoiser = if needs(SolverKind::Pnp) {
        Some(train_pixel_denoiser(&generator, &cfg.denoiser)?)
    } else {
        None
    };
    Ok(Models {
        generator,
        projector,
        unstructured,
        denoiser,
    })
}
