//! Structured latent spaces `z = (c, v)` and generators over them.

use crate::error::{Error, Result};
use crate::mlp::{Activation, DenseLayer, MlpNetwork, OutputBlock, OutputBlockSpec};
use crate::tensor::{derive_seed, spectral_norm, DenseMatrix, DenseVector, Rng};

/// Shape of the latent space: `c` holds the one-hot categorical groups then
/// the continuous codes (dimension `D`), `v` the randomness (`L − D`).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentLayout {
    categorical_groups: Vec<usize>,
    continuous_codes: usize,
    v_dim: usize,
    r_c: f64,
    r_v: f64,
}

impl LatentLayout {
    /// Layout with default radii: `r_c = √(groups + continuous)` and
    /// `r_v = 3√v_dim` (1 when the corresponding part is empty).
    pub fn new(categorical_groups: Vec<usize>, continuous_codes: usize, v_dim: usize) -> Result<Self> {
        let parts = categorical_groups.len() + continuous_codes;
        let r_c = if parts == 0 { 1.0 } else { (parts as f64).sqrt() };
        let r_v = if v_dim == 0 { 1.0 } else { 3.0 * (v_dim as f64).sqrt() };
        Self::with_radii(categorical_groups, continuous_codes, v_dim, r_c, r_v)
    }

    pub fn with_radii(
        categorical_groups: Vec<usize>,
        continuous_codes: usize,
        v_dim: usize,
        r_c: f64,
        r_v: f64,
    ) -> Result<Self> {
        if let Some(k) = categorical_groups.iter().position(|&n| n == 0) {
            return Err(Error::Parameter(format!("categorical group {k} has no classes")));
        }
        let layout = Self {
            categorical_groups,
            continuous_codes,
            v_dim,
            r_c,
            r_v,
        };
        if layout.l() == 0 {
            return Err(Error::Parameter("latent dimension must be at least 1".into()));
        }
        if !(r_c > 0.0 && r_c.is_finite() && r_v > 0.0 && r_v.is_finite()) {
            return Err(Error::Parameter(format!("latent radii must be positive, got r_c={r_c}, r_v={r_v}")));
        }
        // Every simplex point has norm ≤ 1, so this keeps hard codewords inside B(r_c).
        let min_rc = (layout.categorical_groups.len() as f64).sqrt();
        if r_c < min_rc * (1.0 - 1e-6) {
            return Err(Error::Parameter(format!(
                "r_c={r_c} cannot contain one-hot codewords (needs ≥ {min_rc})"
            )));
        }
        Ok(layout)
    }

    /// No codeword, `v_dim = dim`: an unstructured latent space.
    pub fn unstructured(dim: usize) -> Result<Self> {
        Self::new(Vec::new(), 0, dim)
    }

    pub fn categorical_groups(&self) -> &[usize] {
        &self.categorical_groups
    }

    pub fn continuous_codes(&self) -> usize {
        self.continuous_codes
    }

    pub fn v_dim(&self) -> usize {
        self.v_dim
    }

    pub fn r_c(&self) -> f64 {
        self.r_c
    }

    pub fn r_v(&self) -> f64 {
        self.r_v
    }

    pub fn categorical_dim(&self) -> usize {
        self.categorical_groups.iter().sum()
    }

    /// Codeword dimension `D`.
    pub fn d(&self) -> usize {
        self.categorical_dim() + self.continuous_codes
    }

    /// Total latent dimension `L`.
    pub fn l(&self) -> usize {
        self.d() + self.v_dim
    }

    /// Radius of the full latent ball, `√(r_c² + r_v²)`.
    pub fn radius(&self) -> f64 {
        self.r_c.hypot(self.r_v)
    }

    /// `(offset, classes)` of each categorical group inside `c`.
    pub fn group_ranges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.categorical_groups.iter().scan(0, |off, &k| {
            let start = *off;
            *off += k;
            Some((start, k))
        })
    }

    /// Output blocks for a network emitting this latent: softmax per group,
    /// identity over the rest.
    pub fn output_blocks(&self) -> OutputBlockSpec {
        let mut blocks: Vec<OutputBlock> = self
            .group_ranges()
            .map(|(offset, len)| OutputBlock {
                offset,
                len,
                activation: Activation::Softmax,
            })
            .collect();
        let rest = self.l() - self.categorical_dim();
        if rest > 0 {
            blocks.push(OutputBlock {
                offset: self.categorical_dim(),
                len: rest,
                activation: Activation::Identity,
            });
        }
        OutputBlockSpec::new(blocks, self.l()).expect("layout blocks tile the latent")
    }

    pub(crate) fn same_shape(&self, other: &LatentLayout) -> bool {
        self.categorical_groups == other.categorical_groups
            && self.continuous_codes == other.continuous_codes
            && self.v_dim == other.v_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// One-hot categorical groups.
    Hard,
    /// Symmetric Dirichlet(1) categorical groups.
    Soft,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector {
    pub c: DenseVector,
    pub v: DenseVector,
}

impl LatentVector {
    /// Split a flat `(c, v)` vector according to `layout`.
    pub fn from_flat(layout: &LatentLayout, z: &[f64]) -> Result<Self> {
        if z.len() != layout.l() {
            return Err(Error::dim("latent vector", layout.l(), z.len()));
        }
        let (c, v) = z.split_at(layout.d());
        Ok(Self {
            c: DenseVector::new(c.to_vec()),
            v: DenseVector::new(v.to_vec()),
        })
    }

    pub fn flat(&self) -> DenseVector {
        self.c.concat(&self.v)
    }

    pub fn matches(&self, layout: &LatentLayout) -> bool {
        self.c.len() == layout.d() && self.v.len() == layout.v_dim()
    }

    /// Bring the vector back into the admissible set: categorical groups
    /// onto the simplex, continuous codes into `[−1, 1]`, then the
    /// continuous part shrunk until `‖c‖ ≤ r_c` (which leaves the simplex
    /// groups intact), and `v` radially onto `B(r_v)`.
    pub fn enforce(&mut self, layout: &LatentLayout) {
        for (off, k) in layout.group_ranges() {
            project_simplex(&mut self.c[off..off + k]);
        }
        let cat = layout.categorical_dim();
        for x in self.c[cat..].iter_mut() {
            *x = x.clamp(-1.0, 1.0);
        }
        let cat_sq: f64 = self.c[..cat].iter().map(|x| x * x).sum();
        let cont_sq: f64 = self.c[cat..].iter().map(|x| x * x).sum();
        let r_sq = layout.r_c() * layout.r_c();
        if cat_sq + cont_sq > r_sq && cont_sq > 0.0 {
            let room = (r_sq - cat_sq).max(0.0);
            let s = (room / cont_sq).sqrt();
            self.c[cat..].iter_mut().for_each(|x| *x *= s);
        }
        self.v.project_to_ball(layout.r_v());
    }

    /// Both balls and every simplex constraint hold (to `tol`).
    pub fn is_admissible(&self, layout: &LatentLayout, tol: f64) -> bool {
        if !self.matches(layout) {
            return false;
        }
        for (off, k) in layout.group_ranges() {
            let g = &self.c[off..off + k];
            if g.iter().any(|&p| p < -tol) || (g.iter().sum::<f64>() - 1.0).abs() > tol {
                return false;
            }
        }
        let cat = layout.categorical_dim();
        self.c[cat..].iter().all(|x| x.abs() <= 1.0 + tol)
            && self.c.norm() <= layout.r_c() * (1.0 + tol)
            && self.v.norm() <= layout.r_v() * (1.0 + tol)
    }

    /// Argmax of each categorical group, ties toward the lowest index.
    pub fn hard_codes(&self, layout: &LatentLayout) -> Vec<usize> {
        layout
            .group_ranges()
            .map(|(off, k)| argmax(&self.c[off..off + k]))
            .collect()
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    xs.iter_mut().for_each(|x| *x = (*x - tau).max(0.0));
}

/// Draw from the latent prior: uniform one-hot (hard) or Dirichlet(1)
/// (soft) groups, uniform `[−1, 1]` continuous codes, standard normal `v`
/// pulled back onto `B(r_v)` when it falls outside.
pub fn sample_latent(layout: &LatentLayout, rng: &mut Rng, mode: SampleMode) -> LatentVector {
    let mut c = DenseVector::zeros(layout.d());
    for (off, k) in layout.group_ranges() {
        match mode {
            SampleMode::Hard => c[off + rng.index(k)] = 1.0,
            SampleMode::Soft => {
                let g = &mut c[off..off + k];
                g.iter_mut().for_each(|x| *x = rng.exponential());
                let s: f64 = g.iter().sum();
                g.iter_mut().for_each(|x| *x /= s);
            }
        }
    }
    for x in c[layout.categorical_dim()..].iter_mut() {
        *x = rng.uniform_range(-1.0, 1.0);
    }
    let mut v = DenseVector::new(rng.normal_vec(layout.v_dim(), 1.0));
    v.project_to_ball(layout.r_v());
    LatentVector { c, v }
}

/// A network `G: R^L → R^N` over a structured latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    net: MlpNetwork,
    layout: LatentLayout,
    /// Certified Lipschitz upper bound.
    pub t_hat: Option<f64>,
    /// Sampled lower estimate of β.
    pub beta_hat: Option<f64>,
}

impl Generator {
    pub fn new(net: MlpNetwork, layout: LatentLayout) -> Result<Self> {
        if net.input_dim() != layout.l() {
            return Err(Error::dim("generator input vs latent dimension", layout.l(), net.input_dim()));
        }
        Ok(Self {
            net,
            layout,
            t_hat: None,
            beta_hat: None,
        })
    }

    /// `G(z) = A z` with `t_hat = σ_max(A)`.
    pub fn linear(a: DenseMatrix, layout: LatentLayout) -> Result<Self> {
        let t = spectral_norm(&a);
        let net = MlpNetwork::from_layers(vec![DenseLayer::linear(a)])?;
        let mut gen = Self::new(net, layout)?;
        gen.t_hat = Some(t);
        Ok(gen)
    }

    /// `G(z) = z` on an unstructured latent of dimension `n`.
    pub fn identity(n: usize) -> Result<Self> {
        Self::linear(DenseMatrix::identity(n), LatentLayout::unstructured(n)?)
    }

    pub fn net(&self) -> &MlpNetwork {
        &self.net
    }

    pub fn layout(&self) -> &LatentLayout {
        &self.layout
    }

    /// Signal dimension `N`.
    pub fn n(&self) -> usize {
        self.net.output_dim()
    }

    pub fn generate(&self, z: &LatentVector) -> Result<DenseVector> {
        if !z.matches(&self.layout) {
            return Err(Error::dim(
                "latent vs generator layout",
                self.layout.l(),
                z.c.len() + z.v.len(),
            ));
        }
        self.net.forward(&z.flat())
    }

    pub fn generate_flat(&self, z: &[f64]) -> Result<DenseVector> {
        self.net.forward(z)
    }

    /// Generator restricted to the codeword, with `v` frozen at `v0`
    /// (folded into the first-layer bias).
    pub fn codeword_slice(&self, v0: &[f64]) -> Result<Generator> {
        let d = self.layout.d();
        if d == 0 {
            return Err(Error::Parameter("layout has no codeword to slice".into()));
        }
        if v0.len() != self.layout.v_dim() {
            return Err(Error::dim("frozen v", self.layout.v_dim(), v0.len()));
        }
        let first = &self.net.layers()[0];
        let w = first.weights();
        let wc = w.column_block(0, d);
        let wv = w.column_block(d, self.layout.v_dim());
        let bias = first.bias().add(&wv.matvec(v0)?);
        let mut layers = vec![DenseLayer::new(wc, bias, first.activation())?];
        layers.extend(self.net.layers()[1..].iter().cloned());
        let net = MlpNetwork::new(layers, self.net.output_blocks().clone())?;
        let layout = LatentLayout::with_radii(
            self.layout.categorical_groups().to_vec(),
            self.layout.continuous_codes(),
            0,
            self.layout.r_c(),
            1.0,
        )?;
        let mut gen = Generator::new(net, layout)?;
        gen.t_hat = Some(gen.net.lipschitz_upper_bound());
        Ok(gen)
    }
}

/// `G(c, v) = F_c(c) + γ·F_cv(c, v)`.
///
/// `F_c` is a relu stack on `c` followed by a tanh layer and a linear
/// read-out `B`; `F_cv` is a relu stack on `(c, v)` ending in a tanh layer
/// of width `N`. `γ` is chosen so that `2γ·T̂(F_cv)·r_v = beta_target`,
/// which certifies `‖G(c,v₁) − G(c,v₂)‖ ≤ beta_target`. Both branches are
/// packed into one network with block-diagonal weights.
///
/// With empty `hidden_dims` the generator is linear,
/// `G(c, v) = W_c c + γ W_v v`, and `T̂(F_cv) = σ_max(W_v)`.
pub fn make_synthetic_generator(
    layout: &LatentLayout,
    n: usize,
    beta_target: f64,
    hidden_dims: &[usize],
    seed: u64,
) -> Result<Generator> {
    if !(beta_target >= 0.0 && beta_target.is_finite()) {
        return Err(Error::Parameter(format!("beta_target must be ≥ 0, got {beta_target}")));
    }
    if n == 0 {
        return Err(Error::Parameter("signal dimension must be positive".into()));
    }
    let (d, l) = (layout.d(), layout.l());
    let mut rng = Rng::new(derive_seed(seed, 0x5EED_6E4E));
    let xavier = |rng: &mut Rng, rows: usize, cols: usize| {
        let lim = (6.0 / (rows + cols).max(1) as f64).sqrt();
        DenseMatrix::from_fn(rows, cols, |_, _| rng.uniform_range(-lim, lim))
    };
    let he = |rng: &mut Rng, rows: usize, cols: usize| {
        let lim = (6.0 / cols.max(1) as f64).sqrt();
        DenseMatrix::from_fn(rows, cols, |_, _| rng.uniform_range(-lim, lim))
    };
    let r_v = layout.r_v();
    let gamma_for = |lip: f64| {
        if beta_target == 0.0 || layout.v_dim() == 0 || lip == 0.0 {
            0.0
        } else {
            beta_target / (2.0 * lip * r_v)
        }
    };

    let net = if hidden_dims.is_empty() {
        let wc = xavier(&mut rng, n, d);
        let wv = xavier(&mut rng, n, layout.v_dim());
        let gamma = gamma_for(spectral_norm(&wv));
        let w = DenseMatrix::from_fn(n, l, |i, j| if j < d { wc.get(i, j) } else { gamma * wv.get(i, j - d) });
        MlpNetwork::from_layers(vec![DenseLayer::linear(w)])?
    } else {
        // c-branch: D → h₁ → … → h_k (relu) → h_k (tanh) → B.
        // cv-branch: L → h₁ → … → h_k (relu) → N (tanh).
        let mut c_layers: Vec<DenseLayer> = Vec::new();
        let mut cv_layers: Vec<DenseLayer> = Vec::new();
        let mut c_in = d;
        let mut cv_in = l;
        for &h in hidden_dims {
            c_layers.push(relu_layer(he(&mut rng, h, c_in.max(1)), c_in)?);
            cv_layers.push(relu_layer(he(&mut rng, h, cv_in), cv_in)?);
            c_in = h;
            cv_in = h;
        }
        let h_last = *hidden_dims.last().expect("non-empty");
        c_layers.push(DenseLayer::new(
            xavier(&mut rng, h_last, h_last),
            DenseVector::zeros(h_last),
            Activation::Tanh,
        )?);
        cv_layers.push(DenseLayer::new(
            xavier(&mut rng, n, h_last),
            DenseVector::zeros(n),
            Activation::Tanh,
        )?);
        let b = xavier(&mut rng, n, h_last);

        // v-sensitivity of F_cv: the certified bound on the whole branch.
        let f_cv = MlpNetwork::from_layers(cv_layers.clone())?;
        let gamma = gamma_for(f_cv.lipschitz_upper_bound());

        let mut layers = Vec::with_capacity(c_layers.len() + 1);
        for (k, (lc, lcv)) in c_layers.iter().zip(&cv_layers).enumerate() {
            let (rc, ccols) = (lc.out_dim(), lc.in_dim());
            let (rcv, cvcols) = (lcv.out_dim(), lcv.in_dim());
            let w = if k == 0 {
                // Shared input (c, v): the c-branch reads only the first D columns.
                DenseMatrix::from_fn(rc + rcv, l, |i, j| {
                    if i < rc {
                        if j < d { lc.weights().get(i, j) } else { 0.0 }
                    } else {
                        lcv.weights().get(i - rc, j)
                    }
                })
            } else {
                DenseMatrix::from_fn(rc + rcv, ccols + cvcols, |i, j| match (i < rc, j < ccols) {
                    (true, true) => lc.weights().get(i, j),
                    (false, false) => lcv.weights().get(i - rc, j - ccols),
                    _ => 0.0,
                })
            };
            let bias = lc.bias().concat(lcv.bias());
            layers.push(DenseLayer::new(w, bias, lc.activation())?);
        }
        let readout = DenseMatrix::from_fn(n, h_last + n, |i, j| {
            if j < h_last {
                b.get(i, j)
            } else if j - h_last == i {
                gamma
            } else {
                0.0
            }
        });
        layers.push(DenseLayer::linear(readout));
        MlpNetwork::from_layers(layers)?
    };
    let mut gen = Generator::new(net, layout.clone())?;
    gen.t_hat = Some(gen.net.lipschitz_upper_bound());
    let mut est_rng = Rng::new(derive_seed(seed, 0xBE7A));
    gen.beta_hat = Some(estimate_beta(&gen, 32, 32, &mut est_rng)?);
    Ok(gen)
}

/// Relu layer; a zero-width codeword gets a zero-column weight matrix.
fn relu_layer(w: DenseMatrix, in_dim: usize) -> Result<DenseLayer> {
    let w = if in_dim == 0 { DenseMatrix::zeros(w.rows(), 0) } else { w };
    let rows = w.rows();
    DenseLayer::new(w, DenseVector::zeros(rows), Activation::Relu)
}

/// Largest sampled `‖G(c,v₁) − G(c,v₂)‖`. Codewords alternate hard and
/// soft draws; codeword `i` owns the substream `derive_seed(base, i)`, so
/// raising either count only adds samples.
pub fn estimate_beta(
    gen: &Generator,
    num_codewords: usize,
    num_v_pairs: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if num_codewords == 0 || num_v_pairs == 0 {
        return Err(Error::Parameter("estimate_beta needs positive sample counts".into()));
    }
    let layout = gen.layout();
    let base = rng.next_u64();
    let mut best: f64 = 0.0;
    for i in 0..num_codewords {
        let mut r = Rng::new(derive_seed(base, i as u64));
        let mode = if i % 2 == 0 { SampleMode::Hard } else { SampleMode::Soft };
        let c = sample_latent(layout, &mut r, mode).c;
        for _ in 0..num_v_pairs {
            let v1 = sample_latent(layout, &mut r, SampleMode::Hard).v;
            let v2 = sample_latent(layout, &mut r, SampleMode::Hard).v;
            let a = gen.generate(&LatentVector { c: c.clone(), v: v1 })?;
            let b = gen.generate(&LatentVector { c: c.clone(), v: v2 })?;
            best = best.max(a.distance(&b));
        }
    }
    Ok(best)
}

/// Largest sampled difference quotient `‖G(z₁) − G(z₂)‖ / ‖z₁ − z₂‖` over
/// soft latent pairs; pair `i` owns substream `derive_seed(base, i)`.
pub fn estimate_lipschitz_lower(gen: &Generator, num_pairs: usize, rng: &mut Rng) -> Result<f64> {
    if num_pairs == 0 {
        return Err(Error::Parameter("estimate_lipschitz_lower needs num_pairs ≥ 1".into()));
    }
    let layout = gen.layout();
    let base = rng.next_u64();
    let mut best: f64 = 0.0;
    for i in 0..num_pairs {
        let mut r = Rng::new(derive_seed(base, i as u64));
        let z1 = sample_latent(layout, &mut r, SampleMode::Soft).flat();
        let z2 = sample_latent(layout, &mut r, SampleMode::Soft).flat();
        let dz = z1.distance(&z2);
        if dz == 0.0 {
            continue;
        }
        let dx = gen.generate_flat(&z1)?.distance(&gen.generate_flat(&z2)?);
        best = best.max(dx / dz);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_dimensions_and_defaults() {
        let l = LatentLayout::new(vec![10, 10], 3, 16).unwrap();
        assert_eq!(l.d(), 23);
        assert_eq!(l.l(), 39);
        assert!((l.r_c() - 5f64.sqrt()).abs() < 1e-15);
        assert!((l.r_v() - 12.0).abs() < 1e-15);
        assert!(LatentLayout::new(vec![], 0, 0).is_err());
        assert!(LatentLayout::new(vec![0], 0, 1).is_err());
        assert!(LatentLayout::with_radii(vec![3], 0, 1, 0.0, 1.0).is_err());
    }

    #[test]
    fn hard_samples_are_uniform_one_hot() {
        let layout = LatentLayout::new(vec![3], 0, 0).unwrap();
        let mut rng = Rng::new(21);
        let mut counts = [0usize; 3];
        let draws = 10_000;
        for _ in 0..draws {
            let z = sample_latent(&layout, &mut rng, SampleMode::Hard);
            let ones: Vec<usize> = (0..3).filter(|&i| z.c[i] == 1.0).collect();
            assert_eq!(ones.len(), 1);
            assert_eq!(z.c.iter().filter(|&&x| x == 0.0).count(), 2);
            counts[ones[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 3.0).abs() <= 0.02);
        }
    }

    #[test]
    fn empty_v() {
        let layout = LatentLayout::new(vec![4], 0, 0).unwrap();
        let z = sample_latent(&layout, &mut Rng::new(1), SampleMode::Soft);
        assert!(z.v.is_empty());
        assert!(z.v.norm() <= layout.r_v());
    }

    #[test]
    fn samples_are_admissible() {
        let layout = LatentLayout::with_radii(vec![5, 2], 3, 40, 3.0, 4.0).unwrap();
        let mut rng = Rng::new(8);
        for i in 0..500 {
            let mode = if i % 2 == 0 { SampleMode::Hard } else { SampleMode::Soft };
            let z = sample_latent(&layout, &mut rng, mode);
            assert!(z.is_admissible(&layout, 1e-12));
        }
    }

    #[test]
    fn enforce_projects_everything() {
        let layout = LatentLayout::with_radii(vec![3], 2, 2, 1.2, 1.0).unwrap();
        let mut z = LatentVector {
            c: DenseVector::new(vec![2.0, -1.0, 0.5, 3.0, -0.9]),
            v: DenseVector::new(vec![3.0, 4.0]),
        };
        z.enforce(&layout);
        assert!(z.is_admissible(&layout, 1e-12));
        assert!((z.v[0] - 0.6).abs() < 1e-15 && (z.v[1] - 0.8).abs() < 1e-15);
        assert_eq!(&z.c[..3], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn simplex_projection_known_values() {
        let mut x = [0.5, 0.5, 0.5];
        project_simplex(&mut x);
        for v in x {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let mut y = [0.2, 0.3, 0.5];
        project_simplex(&mut y);
        assert!((y[0] - 0.2).abs() < 1e-15 && (y[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }

    #[test]
    fn identity_generator_concatenates() {
        let gen = Generator::identity(5).unwrap();
        let z = LatentVector::from_flat(gen.layout(), &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(gen.generate(&z).unwrap().as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let bad = LatentVector { c: DenseVector::zeros(0), v: DenseVector::zeros(4) };
        assert!(gen.generate(&bad).is_err());
    }

    #[test]
    fn zero_beta_makes_v_irrelevant() {
        let layout = LatentLayout::new(vec![4], 0, 6).unwrap();
        let gen = make_synthetic_generator(&layout, 12, 0.0, &[8], 3).unwrap();
        assert_eq!(gen.beta_hat, Some(0.0));
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let a = sample_latent(&layout, &mut rng, SampleMode::Soft);
            let b = LatentVector { c: a.c.clone(), v: sample_latent(&layout, &mut rng, SampleMode::Hard).v };
            assert_eq!(gen.generate(&a).unwrap(), gen.generate(&b).unwrap());
        }
    }

    #[test]
    fn synthetic_generator_is_deterministic() {
        let layout = LatentLayout::new(vec![3], 1, 5).unwrap();
        let a = make_synthetic_generator(&layout, 10, 0.2, &[6, 6], 17).unwrap();
        let b = make_synthetic_generator(&layout, 10, 0.2, &[6, 6], 17).unwrap();
        assert_eq!(a, b);
        let z = sample_latent(&layout, &mut Rng::new(0), SampleMode::Soft);
        let x1 = a.generate(&z).unwrap();
        let x2 = a.generate(&z).unwrap();
        assert!(x1.iter().zip(x2.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn beta_estimate_nested_monotone() {
        let layout = LatentLayout::new(vec![4], 0, 8).unwrap();
        let gen = make_synthetic_generator(&layout, 16, 0.5, &[8], 2).unwrap();
        let small = estimate_beta(&gen, 4, 10, &mut Rng::new(6)).unwrap();
        let large = estimate_beta(&gen, 4, 20, &mut Rng::new(6)).unwrap();
        let more_c = estimate_beta(&gen, 8, 20, &mut Rng::new(6)).unwrap();
        assert!(small <= large && large <= more_c);
        assert!(more_c <= 0.5);
    }

    #[test]
    fn codeword_slice_freezes_v() {
        let layout = LatentLayout::new(vec![3], 1, 4).unwrap();
        let gen = make_synthetic_generator(&layout, 9, 0.3, &[5], 5).unwrap();
        let mut rng = Rng::new(12);
        let z = sample_latent(&layout, &mut rng, SampleMode::Soft);
        let slice = gen.codeword_slice(&z.v).unwrap();
        let zc = LatentVector { c: z.c.clone(), v: DenseVector::zeros(0) };
        let a = gen.generate(&z).unwrap();
        let b = slice.generate(&zc).unwrap();
        assert!(a.distance(&b) < 1e-12);
    }
}
