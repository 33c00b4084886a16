//! Oracles and fixtures shared by the integration tests. Nothing here calls
//! the solver code it is used to check.
#![allow(dead_code)]

use fcsrg::generative::{Generator, LatentLayout};
use fcsrg::mlp::{Activation, DenseLayer, MlpNetwork, OutputBlock, OutputBlockSpec};
use fcsrg::projector::Projector;
use fcsrg::tensor::{DenseMatrix, DenseVector, Rng};
use nalgebra::{DMatrix, DVector};

pub fn to_na(a: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.data())
}

pub fn from_na(a: &DMatrix<f64>) -> DenseMatrix {
    DenseMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// `(ΦᵀΦ + ρI)⁻¹ b` by LU on the full `n × n` system.
pub fn direct_ridge(phi: &DenseMatrix, rho: f64, b: &[f64]) -> Vec<f64> {
    let p = to_na(phi);
    let a = p.transpose() * &p + DMatrix::identity(phi.cols(), phi.cols()) * rho;
    a.lu().solve(&DVector::from_column_slice(b)).expect("SPD system").as_slice().to_vec()
}

/// `argmin_z ‖y − B z‖` through the SVD.
pub fn least_squares(b: &DenseMatrix, y: &[f64]) -> Vec<f64> {
    let svd = to_na(b).svd(true, true);
    svd.solve(&DVector::from_column_slice(y), 1e-12).expect("svd solve").as_slice().to_vec()
}

pub fn sigma_max(a: &DenseMatrix) -> f64 {
    to_na(a).singular_values().max()
}

pub fn pinv(a: &DenseMatrix) -> DenseMatrix {
    from_na(&to_na(a).pseudo_inverse(1e-12).expect("pinv"))
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b).max(1e-300)
}

/// Random network of width ≤ `max_dim` with random biases and, if
/// `softmax`, a softmax block over part of the output.
pub fn random_net(seed: u64, max_dim: usize, softmax: bool) -> MlpNetwork {
    let mut rng = Rng::new(seed);
    let depth = 1 + rng.index(3);
    let dims: Vec<usize> = (0..=depth).map(|_| 2 + rng.index(max_dim - 1)).collect();
    let acts = [Activation::Identity, Activation::Relu, Activation::Tanh, Activation::Sigmoid];
    let mut layers = Vec::with_capacity(depth);
    for k in 0..depth {
        let (i, o) = (dims[k], dims[k + 1]);
        let w = DenseMatrix::from_fn(o, i, |_, _| rng.normal() / (i as f64).sqrt());
        let b = DenseVector::new(rng.normal_vec(o, 0.5));
        layers.push(DenseLayer::new(w, b, acts[rng.index(acts.len())]).unwrap());
    }
    let out = dims[depth];
    let blocks = if softmax {
        let len = 2 + rng.index(out - 1);
        let off = rng.index(out - len + 1);
        let mut b = Vec::new();
        if off > 0 {
            b.push(OutputBlock { offset: 0, len: off, activation: Activation::Identity });
        }
        b.push(OutputBlock { offset: off, len, activation: Activation::Softmax });
        if off + len < out {
            b.push(OutputBlock { offset: off + len, len: out - off - len, activation: Activation::Identity });
        }
        OutputBlockSpec::new(b, out).unwrap()
    } else {
        OutputBlockSpec::identity(out)
    };
    MlpNetwork::new(layers, blocks).unwrap()
}

/// Target for `net`: a probability vector on softmax blocks, Gaussian
/// elsewhere.
pub fn random_target(net: &MlpNetwork, rng: &mut Rng) -> Vec<f64> {
    let mut t = rng.normal_vec(net.output_dim(), 1.0);
    for b in net.output_blocks().blocks() {
        if b.activation == Activation::Softmax {
            let w: Vec<f64> = (0..b.len).map(|_| rng.uniform() + 0.05).collect();
            let s: f64 = w.iter().sum();
            for (k, wi) in w.iter().enumerate() {
                t[b.offset + k] = wi / s;
            }
        }
    }
    t
}

/// Mixed loss from the forward output alone: `−Σ t log p` on softmax
/// blocks, `½‖o − t‖²` elsewhere.
pub fn mixed_loss(net: &MlpNetwork, x: &[f64], t: &[f64]) -> f64 {
    let o = net.forward(x).unwrap();
    let mut loss = 0.0;
    for b in net.output_blocks().blocks() {
        for k in b.offset..b.offset + b.len {
            loss += if b.activation == Activation::Softmax {
                -t[k] * o[k].ln()
            } else {
                0.5 * (o[k] - t[k]).powi(2)
            };
        }
    }
    loss
}

pub fn fd_param_grad(net: &MlpNetwork, x: &[f64], t: &[f64], h: f64) -> Vec<f64> {
    let count = net.param_count();
    (0..count)
        .map(|i| {
            let mut plus = net.clone();
            *plus.params_mut().nth(i).unwrap() += h;
            let mut minus = net.clone();
            *minus.params_mut().nth(i).unwrap() -= h;
            (mixed_loss(&plus, x, t) - mixed_loss(&minus, x, t)) / (2.0 * h)
        })
        .collect()
}

/// Central differences of `cotᵀ f(x)`.
pub fn fd_input_grad(net: &MlpNetwork, x: &[f64], cot: &[f64], h: f64) -> Vec<f64> {
    let f = |x: &[f64]| -> f64 { net.forward(x).unwrap().iter().zip(cot).map(|(a, b)| a * b).sum() };
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            p[i] += h;
            let mut m = x.to_vec();
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

/// Linear generator `G(z) = Az` on an unstructured latent, with the
/// projector `z = A⁺x` wrapped as a linear net.
pub struct LinearFixture {
    pub a: DenseMatrix,
    pub gen: Generator,
    pub proj: Projector,
}

pub fn linear_fixture(n: usize, l: usize, seed: u64) -> LinearFixture {
    let mut rng = Rng::new(seed);
    let a = DenseMatrix::from_fn(n, l, |_, _| rng.normal() / (n as f64).sqrt());
    let layout = LatentLayout::unstructured(l).unwrap();
    let gen = Generator::linear(a.clone(), layout.clone()).unwrap();
    let net = MlpNetwork::from_layers(vec![DenseLayer::linear(pinv(&a))]).unwrap();
    let proj = Projector::new(net, layout).unwrap();
    LinearFixture { a, gen, proj }
}
