//! Monte-Carlo checks of the measurement-count lemmas and the recovery
//! bounds.
//!
//! Every report stores enough raw data (per-draw excess, per-trial terms) to
//! recompute its verdict at any slack.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::generative::{sample_latent, Generator, SampleMode};
use crate::projector::Projector;
use crate::recovery::{csgm_gd_recover_with, fcsrg_recover, measure, GdOptions, Measurement, SolverConfig};
use crate::tensor::{derive_seed, spectral_norm, DenseMatrix, DenseVector, Rng, SensingMatrix};

/// Additive tolerance for the hidden `O(δ)` terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Slack {
    Absolute(f64),
    /// Multiple of the median pairwise distance of the tested signals.
    MedianFraction(f64),
}

impl Default for Slack {
    fn default() -> Self {
        Slack::MedianFraction(0.05)
    }
}

impl Slack {
    fn resolve(self, median_distance: f64) -> f64 {
        match self {
            Slack::Absolute(s) => s,
            Slack::MedianFraction(f) => f * median_distance,
        }
    }

    fn validate(self) -> Result<()> {
        let v = match self {
            Slack::Absolute(s) | Slack::MedianFraction(s) => s,
        };
        if v >= 0.0 {
            Ok(())
        } else {
            Err(Error::Parameter(format!("slack must be non-negative, got {v}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsometryConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub num_pairs: usize,
    pub num_matrix_draws: usize,
    pub slack: Slack,
    pub seed: u64,
    /// Leading constant `c` in the latent-ball measurement thresholds.
    pub constant: f64,
}

impl Default for IsometryConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.3,
            delta: 0.1,
            num_pairs: 200,
            num_matrix_draws: 100,
            slack: Slack::default(),
            seed: 0,
            constant: 16.0,
        }
    }
}

fn check_eps_delta(epsilon: f64, delta: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::Parameter(format!("epsilon must lie in (0, 1/2), got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

impl IsometryConfig {
    pub fn validate(&self) -> Result<()> {
        check_eps_delta(self.epsilon, self.delta)?;
        if self.num_pairs == 0 || self.num_matrix_draws == 0 {
            return Err(Error::Parameter("num_pairs and num_matrix_draws must be ≥ 1".into()));
        }
        if !(self.constant > 0.0 && self.constant.is_finite()) {
            return Err(Error::Parameter(format!("threshold constant must be positive, got {}", self.constant)));
        }
        self.slack.validate()
    }
}

/// `√(p(1−p)/n)`
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n.max(1) as f64).sqrt()
}

fn required(value: f64) -> usize {
    if value.is_finite() {
        value.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// `⌈(8/ε²)·ln(2Q/δ)⌉`
pub fn required_m_jl(q: usize, epsilon: f64, delta: f64) -> usize {
    required(8.0 / (epsilon * epsilon) * (2.0 * q as f64 / delta).ln())
}

/// `⌈c·(k/ε²)·ln(T·r/δ)⌉`, the latent-ball threshold for a `k`-dimensional
/// latent of radius `r` under a `T`-Lipschitz map.
pub fn required_m_latent(k: usize, epsilon: f64, delta: f64, t: f64, r: f64, c: f64) -> usize {
    required(c * k as f64 / (epsilon * epsilon) * (t * r / delta).ln())
}

fn lipschitz_of(gen: &Generator) -> f64 {
    gen.t_hat.unwrap_or_else(|| gen.net().lipschitz_upper_bound())
}

/// Threshold over the whole latent ball, `k = L`, `r = √(r_c² + r_v²)`.
pub fn required_m_generator(gen: &Generator, epsilon: f64, delta: f64, c: f64) -> usize {
    let layout = gen.layout();
    required_m_latent(layout.l(), epsilon, delta, lipschitz_of(gen), layout.radius(), c)
}

/// Threshold over the codeword only, `k = D`, `r = r_c`.
pub fn required_m_structured(gen: &Generator, epsilon: f64, delta: f64, c: f64) -> usize {
    let layout = gen.layout();
    required_m_latent(layout.d(), epsilon, delta, lipschitz_of(gen), layout.r_c(), c)
}

fn ensure_m(m: usize, required: usize) -> Result<()> {
    if m < required {
        Err(Error::InsufficientMeasurements { m, required })
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsometryReport {
    /// Fraction of matrix draws with at least one violation at `slack`.
    pub violation_fraction: f64,
    /// Largest `|‖Φd‖/‖d‖ − 1|` seen, slack ignored.
    pub worst_distortion: f64,
    pub pairs_tested: usize,
    pub draws: usize,
    pub epsilon: f64,
    pub nominal_delta: f64,
    /// `√(δ(1−δ)/draws)`
    pub standard_error: f64,
    /// `δ + 3·standard_error`
    pub bound_delta: f64,
    pub slack: f64,
    /// Per draw, the largest amount by which any pair exceeds the
    /// multiplicative band (after β widening). A draw violates at slack `s`
    /// when this exceeds `s`.
    pub draw_excess: Vec<f64>,
    pub passed: bool,
}

impl IsometryReport {
    fn new(draw_excess: Vec<f64>, worst: f64, pairs: usize, eps: f64, delta: f64, slack: f64) -> Self {
        let draws = draw_excess.len();
        let se = binomial_se(delta, draws);
        let mut r = Self {
            violation_fraction: 0.0,
            worst_distortion: worst,
            pairs_tested: pairs,
            draws,
            epsilon: eps,
            nominal_delta: delta,
            standard_error: se,
            bound_delta: delta + 3.0 * se,
            slack,
            draw_excess,
            passed: false,
        };
        r.violation_fraction = r.violation_fraction_at(slack);
        r.passed = r.violation_fraction <= r.bound_delta;
        r
    }

    pub fn violation_fraction_at(&self, slack: f64) -> f64 {
        if self.draw_excess.is_empty() {
            return 0.0;
        }
        self.draw_excess.iter().filter(|&&e| e > slack).count() as f64 / self.draw_excess.len() as f64
    }

    /// `(slack, violation fraction)` at zero, the configured and double slack.
    pub fn slack_sweep(&self) -> [(f64, f64); 3] {
        [0.0, self.slack, 2.0 * self.slack].map(|s| (s, self.violation_fraction_at(s)))
    }
}

/// Norm preservation `(1−ε)‖x‖ ≤ ‖Φx‖ ≤ (1+ε)‖x‖` for a finite point set,
/// over fresh `N(0, 1/m)` draws.
pub fn check_jl(points: &[DenseVector], m: usize, cfg: &IsometryConfig) -> Result<IsometryReport> {
    cfg.validate()?;
    let Some(first) = points.first() else {
        return Err(Error::Parameter("check_jl needs at least one point".into()));
    };
    let n = first.len();
    if let Some(p) = points.iter().find(|p| p.len() != n) {
        return Err(Error::dim("JL point set", n, p.len()));
    }
    ensure_m(m, required_m_jl(points.len(), cfg.epsilon, cfg.delta))?;
    let norms: Vec<f64> = points.iter().map(|p| p.norm()).collect();
    let eps = cfg.epsilon;
    let mut excess = Vec::with_capacity(cfg.num_matrix_draws);
    let mut worst: f64 = 0.0;
    for draw in 0..cfg.num_matrix_draws {
        let phi = SensingMatrix::standard(m, n, derive_seed(cfg.seed, draw as u64))?;
        let mut e = f64::NEG_INFINITY;
        for (p, &norm) in points.iter().zip(&norms) {
            let c = phi.apply(p)?.norm();
            e = e.max(((1.0 - eps) * norm - c).max(c - (1.0 + eps) * norm));
            if norm > 0.0 {
                worst = worst.max((c / norm - 1.0).abs());
            }
        }
        excess.push(e);
    }
    Ok(IsometryReport::new(excess, worst, points.len(), eps, cfg.delta, 0.0))
}

/// Pairwise distance preservation over fixed signal pairs. The band is
/// `[(1−ε)d − widen[0] − s, (1+ε)d + widen[1] + s]`.
pub fn check_pair_isometry(
    pairs: &[(DenseVector, DenseVector)],
    m: usize,
    cfg: &IsometryConfig,
    widen: [f64; 2],
) -> Result<IsometryReport> {
    cfg.validate()?;
    let Some((a0, _)) = pairs.first() else {
        return Err(Error::Parameter("isometry check needs at least one pair".into()));
    };
    let n = a0.len();
    let mut diffs = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        if a.len() != n || b.len() != n {
            return Err(Error::dim("isometry pair", n, a.len().max(b.len())));
        }
        diffs.push(a.sub(b));
    }
    let dists: Vec<f64> = diffs.iter().map(|d| d.norm()).collect();
    let slack = cfg.slack.resolve(median(&dists));
    let eps = cfg.epsilon;
    let mut excess = Vec::with_capacity(cfg.num_matrix_draws);
    let mut worst: f64 = 0.0;
    for draw in 0..cfg.num_matrix_draws {
        let phi = SensingMatrix::standard(m, n, derive_seed(cfg.seed, draw as u64))?;
        let mut e = f64::NEG_INFINITY;
        for (d, &dist) in diffs.iter().zip(&dists) {
            let c = phi.apply(d)?.norm();
            let lower = (1.0 - eps) * dist - widen[0];
            let upper = (1.0 + eps) * dist + widen[1];
            e = e.max((lower - c).max(c - upper));
            if dist > 0.0 {
                worst = worst.max((c / dist - 1.0).abs());
            }
        }
        excess.push(e);
    }
    Ok(IsometryReport::new(excess, worst, pairs.len(), eps, cfg.delta, slack))
}

/// Soft latent pairs mapped through `gen`; pair `i` owns substream `i`.
fn generated_pairs(gen: &Generator, count: usize, seed: u64) -> Result<Vec<(DenseVector, DenseVector)>> {
    let layout = gen.layout();
    (0..count)
        .map(|i| {
            let mut r = Rng::new(derive_seed(seed, i as u64));
            let a = gen.generate(&sample_latent(layout, &mut r, SampleMode::Soft))?;
            let b = gen.generate(&sample_latent(layout, &mut r, SampleMode::Soft))?;
            Ok((a, b))
        })
        .collect()
}

const PAIR_STREAM: u64 = 0x9A1;
const DRAW_STREAM: u64 = 0xD7A;

fn split(cfg: &IsometryConfig) -> (u64, IsometryConfig) {
    let pair_seed = derive_seed(cfg.seed, PAIR_STREAM);
    let draws = IsometryConfig {
        seed: derive_seed(cfg.seed, DRAW_STREAM),
        ..*cfg
    };
    (pair_seed, draws)
}

/// Distance preservation on the generator range with the threshold taken
/// over the whole latent ball.
pub fn check_generator_isometry(gen: &Generator, m: usize, cfg: &IsometryConfig) -> Result<IsometryReport> {
    cfg.validate()?;
    ensure_m(m, required_m_generator(gen, cfg.epsilon, cfg.delta, cfg.constant))?;
    let (pair_seed, draw_cfg) = split(cfg);
    let pairs = generated_pairs(gen, cfg.num_pairs, pair_seed)?;
    check_pair_isometry(&pairs, m, &draw_cfg, [0.0, 0.0])
}

/// `(6 + 2√(N/M) ∓ 2ε)·β` for the lower and upper sides.
pub fn structured_widening(n: usize, m: usize, epsilon: f64, beta: f64) -> [f64; 2] {
    let base = 6.0 + 2.0 * (n as f64 / m as f64).sqrt();
    [(base - 2.0 * epsilon) * beta, (base + 2.0 * epsilon) * beta]
}

/// Distance preservation with the β-widened band and the codeword-only
/// measurement threshold.
pub fn check_structured_isometry(
    gen: &Generator,
    m: usize,
    beta_hat: f64,
    cfg: &IsometryConfig,
) -> Result<IsometryReport> {
    cfg.validate()?;
    if gen.layout().d() == 0 {
        return Err(Error::Parameter("structured isometry needs a codeword (D ≥ 1)".into()));
    }
    if !(beta_hat >= 0.0 && beta_hat.is_finite()) {
        return Err(Error::Parameter(format!("beta_hat must be finite and ≥ 0, got {beta_hat}")));
    }
    ensure_m(m, required_m_structured(gen, cfg.epsilon, cfg.delta, cfg.constant))?;
    let (pair_seed, draw_cfg) = split(cfg);
    let pairs = generated_pairs(gen, cfg.num_pairs, pair_seed)?;
    check_pair_isometry(&pairs, m, &draw_cfg, structured_widening(gen.n(), m, cfg.epsilon, beta_hat))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorNormReport {
    pub violation_fraction: f64,
    pub max_sigma: f64,
    /// `2 + √(n/m)`
    pub bound: f64,
    /// `min(1, 2e^{−m/2})`
    pub probability_bound: f64,
    pub standard_error: f64,
    /// `probability_bound + 3·standard_error`
    pub threshold: f64,
    pub draws: usize,
    /// `σ_max` of every draw.
    pub sigmas: Vec<f64>,
    pub passed: bool,
}

/// Largest singular value of `N(0, 1/m)` matrices against `2 + √(n/m)`.
pub fn check_operator_norm(n: usize, m: usize, num_draws: usize, rng: &mut Rng) -> Result<OperatorNormReport> {
    if num_draws == 0 {
        return Err(Error::Parameter("num_draws must be ≥ 1".into()));
    }
    let bound = 2.0 + (n as f64 / m as f64).sqrt();
    let mut sigmas = Vec::with_capacity(num_draws);
    for _ in 0..num_draws {
        let phi = SensingMatrix::sample(m, n, 1.0 / m as f64, rng)?;
        sigmas.push(spectral_norm(phi.matrix()));
    }
    let violations = sigmas.iter().filter(|&&s| s > bound).count();
    let max_sigma = sigmas.iter().copied().fold(0.0, f64::max);
    let p = (2.0 * (-(m as f64) / 2.0).exp()).min(1.0);
    let se = binomial_se(p, num_draws);
    let violation_fraction = violations as f64 / num_draws as f64;
    Ok(OperatorNormReport {
        violation_fraction,
        max_sigma,
        bound,
        probability_bound: p,
        standard_error: se,
        threshold: p + 3.0 * se,
        draws: num_draws,
        sigmas,
        passed: violation_fraction <= p + 3.0 * se,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub slack: Slack,
    /// Norm of a random perturbation added to `G(z*)`; 0 keeps `x*` in range.
    pub off_manifold: f64,
    /// Overrides `gen.beta_hat`.
    pub beta_hat: Option<f64>,
    /// Random starts of the uncompressed projection oracle.
    pub oracle_restarts: usize,
    pub oracle_iters: usize,
    /// Compressed-domain descent steps applied after F-CSRG.
    pub polish_iters: usize,
    pub solver: SolverConfig,
    /// Leading constant of the whole-ball threshold deciding when the
    /// β-free bound applies.
    pub constant: f64,
    /// Generated pairs used to compute the median distance for the slack.
    pub median_pairs: usize,
    pub seed: u64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.3,
            delta: 0.1,
            slack: Slack::default(),
            off_manifold: 0.0,
            beta_hat: None,
            oracle_restarts: 10,
            oracle_iters: 300,
            polish_iters: 300,
            solver: SolverConfig::default(),
            constant: 16.0,
            median_pairs: 200,
            seed: 0,
        }
    }
}

impl BoundConfig {
    pub fn validate(&self) -> Result<()> {
        check_eps_delta(self.epsilon, self.delta)?;
        self.slack.validate()?;
        self.solver.validate()?;
        if !(self.off_manifold >= 0.0 && self.off_manifold.is_finite()) {
            return Err(Error::Parameter(format!("off_manifold must be ≥ 0, got {}", self.off_manifold)));
        }
        if self.oracle_restarts < 10 {
            return Err(Error::Parameter(format!(
                "the projection oracle needs at least 10 restarts, got {}",
                self.oracle_restarts
            )));
        }
        if let Some(b) = self.beta_hat {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::Parameter(format!("beta_hat must be finite and ≥ 0, got {b}")));
            }
        }
        if self.median_pairs == 0 {
            return Err(Error::Parameter("median_pairs must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// One evaluation of a recovery bound: `satisfied ⇔ lhs ≤ mismatch + beta + noise + slack`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    /// `‖x* − x̂‖`
    pub lhs: f64,
    pub mismatch: f64,
    pub beta: f64,
    pub noise: f64,
    pub slack: f64,
    pub satisfied: bool,
}

impl BoundCheck {
    fn new(lhs: f64, mismatch: f64, beta: f64, noise: f64, slack: f64) -> Self {
        let mut b = Self {
            lhs,
            mismatch,
            beta,
            noise,
            slack,
            satisfied: false,
        };
        b.satisfied = b.satisfied_with_slack(slack);
        b
    }

    pub fn rhs(&self) -> f64 {
        self.mismatch + self.beta + self.noise + self.slack
    }

    pub fn satisfied_with_slack(&self, slack: f64) -> bool {
        self.lhs <= self.mismatch + self.beta + self.noise + slack
    }
}

/// Coefficients on `‖x* − x̄‖`, `β` and `‖w‖` in the D-regime bound.
pub fn bound_coefficients(n: usize, m: usize, epsilon: f64) -> [f64; 3] {
    let root = (n as f64 / m as f64).sqrt();
    let denom = 1.0 - epsilon;
    [
        (5.0 + 2.0 * root - epsilon) / denom,
        (6.0 + 2.0 * root - 2.0 * epsilon) / denom,
        2.0 / denom,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialBound {
    pub trial: usize,
    /// Seed of the trial's substream; replays `z*`, the perturbation, `Φ`
    /// and the noise.
    pub seed: u64,
    pub phi_seed: u64,
    /// `‖x* − x̄‖` for the surrogate `x̄`.
    pub mismatch_distance: f64,
    /// The surrogate is the true projection (`x*` in range).
    pub surrogate_exact: bool,
    pub noise_norm: f64,
    /// Bound with the β term.
    pub eq5: BoundCheck,
    /// β-free bound; present only when `m` meets the whole-ball threshold.
    pub eq6: Option<BoundCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryBoundReport {
    pub trials: Vec<TrialBound>,
    /// Trials dropped because the oracle or a solver went non-finite.
    pub invalid: usize,
    pub m: usize,
    pub n: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub beta_hat: f64,
    pub slack: f64,
    pub whole_ball_threshold: usize,
}

impl RecoveryBoundReport {
    fn fraction(&self, f: impl Fn(&TrialBound) -> Option<bool>) -> Option<f64> {
        let hits: Vec<bool> = self.trials.iter().filter_map(f).collect();
        if hits.is_empty() {
            None
        } else {
            Some(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
        }
    }

    pub fn eq5_satisfied_fraction(&self) -> Option<f64> {
        self.fraction(|t| Some(t.eq5.satisfied))
    }

    pub fn eq6_satisfied_fraction(&self) -> Option<f64> {
        self.fraction(|t| t.eq6.map(|b| b.satisfied))
    }

    pub fn eq5_fraction_at(&self, slack: f64) -> Option<f64> {
        self.fraction(|t| Some(t.eq5.satisfied_with_slack(slack)))
    }

    /// Evidence counts only when the required fraction `1 − δ` is met.
    pub fn passed(&self) -> bool {
        let eq5 = self.eq5_satisfied_fraction().is_some_and(|f| f >= 1.0 - self.delta);
        let eq6 = self.eq6_satisfied_fraction().is_none_or(|f| f >= 1.0 - self.delta);
        eq5 && eq6
    }
}

fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

enum Trial {
    Done(TrialBound),
    Invalid,
}

fn is_numeric(e: &Error) -> bool {
    matches!(e, Error::Numeric { .. })
}

/// Empirical check of the recovery bounds. Per trial: `x* = G(z*)` plus an
/// optional perturbation, `x̄` from the best of `z*` and multi-start
/// uncompressed descent, `x̂` from F-CSRG followed by compressed-domain
/// descent without the latent penalty.
pub fn check_recovery_bound(
    gen: &Generator,
    proj: &Projector,
    m: usize,
    noise_scale: f64,
    num_trials: usize,
    cfg: &BoundConfig,
) -> Result<RecoveryBoundReport> {
    cfg.validate()?;
    let n = gen.n();
    if m == 0 || m > n {
        return Err(Error::Parameter(format!("need 1 ≤ m ≤ N = {n}, got m = {m}")));
    }
    let beta = match cfg.beta_hat.or(gen.beta_hat) {
        Some(b) => b,
        None => crate::generative::estimate_beta(gen, 32, 32, &mut Rng::new(derive_seed(cfg.seed, 0xBE7A)))?,
    };
    let pairs = generated_pairs(gen, cfg.median_pairs, derive_seed(cfg.seed, PAIR_STREAM))?;
    let dists: Vec<f64> = pairs.iter().map(|(a, b)| a.distance(b)).collect();
    let slack = cfg.slack.resolve(median(&dists));
    let threshold = required_m_generator(gen, cfg.epsilon, cfg.delta, cfg.constant);
    let [k_mis, k_beta, k_noise] = bound_coefficients(n, m, cfg.epsilon);
    let identity = SensingMatrix::from_matrix(DenseMatrix::identity(n))?;

    let mut trials = Vec::with_capacity(num_trials);
    let mut invalid = 0;
    for t in 0..num_trials {
        let seed = derive_seed(cfg.seed, 1000 + t as u64);
        match run_bound_trial(gen, proj, m, noise_scale, cfg, &identity, t, seed, beta, slack, threshold, [k_mis, k_beta, k_noise]) {
            Ok(Trial::Done(b)) => trials.push(b),
            Ok(Trial::Invalid) => invalid += 1,
            Err(e) if is_numeric(&e) => invalid += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(RecoveryBoundReport {
        trials,
        invalid,
        m,
        n,
        epsilon: cfg.epsilon,
        delta: cfg.delta,
        beta_hat: beta,
        slack,
        whole_ball_threshold: threshold,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_bound_trial(
    gen: &Generator,
    proj: &Projector,
    m: usize,
    noise_scale: f64,
    cfg: &BoundConfig,
    identity: &SensingMatrix,
    t: usize,
    seed: u64,
    beta: f64,
    slack: f64,
    threshold: usize,
    [k_mis, k_beta, k_noise]: [f64; 3],
) -> Result<Trial> {
    let layout = gen.layout();
    let n = gen.n();
    let mut rng = Rng::new(seed);
    let z_star = sample_latent(layout, &mut rng, SampleMode::Hard);
    let mut x_star = gen.generate(&z_star)?;
    if cfg.off_manifold > 0.0 {
        let mut u = DenseVector::new(rng.normal_vec(n, 1.0));
        let un = u.norm();
        u.scale(cfg.off_manifold / un);
        x_star.axpy(1.0, &u);
    }
    let phi_seed = rng.next_u64();
    let phi = SensingMatrix::standard(m, n, phi_seed)?;
    let meas = measure(&phi, &x_star, noise_scale, &mut rng)?;

    // x̄ surrogate: z* first, descent only if it can still improve.
    let mut mismatch = gen.generate(&z_star)?.distance(&x_star);
    let exact = cfg.off_manifold == 0.0;
    if mismatch > 0.0 {
        let oracle = Measurement::new(identity.clone(), x_star.clone())?;
        let ocfg = SolverConfig {
            lambda: 0.0,
            gd_iters: cfg.oracle_iters,
            restarts: cfg.oracle_restarts,
            seed: derive_seed(seed, 0x0AC1E),
            ..cfg.solver
        };
        let r = csgm_gd_recover_with(&oracle, gen, &ocfg, GdOptions::default())?;
        if !r.x_hat.is_finite() {
            return Ok(Trial::Invalid);
        }
        mismatch = mismatch.min(r.x_hat.distance(&x_star));
    }

    let first = fcsrg_recover(&meas, gen, proj, &cfg.solver)?;
    let x_hat = if cfg.polish_iters > 0 {
        let pcfg = SolverConfig {
            lambda: 0.0,
            gd_iters: cfg.polish_iters,
            restarts: 1,
            ..cfg.solver
        };
        let opts = GdOptions {
            init: first.z_hat.clone(),
            runs: Some(1),
            ..GdOptions::default()
        };
        csgm_gd_recover_with(&meas, gen, &pcfg, opts)?.x_hat
    } else {
        first.x_hat
    };
    if !x_hat.is_finite() {
        return Ok(Trial::Invalid);
    }
    let lhs = x_hat.distance(&x_star);
    let w = meas.noise_norm();
    let eq5 = BoundCheck::new(lhs, k_mis * mismatch, k_beta * beta, k_noise * w, slack);
    let eq6 = (m >= threshold).then(|| BoundCheck::new(lhs, k_mis * mismatch, 0.0, k_noise * w, slack));
    Ok(Trial::Done(TrialBound {
        trial: t,
        seed,
        phi_seed,
        mismatch_distance: mismatch,
        surrogate_exact: exact,
        noise_norm: w,
        eq5,
        eq6,
    }))
}
