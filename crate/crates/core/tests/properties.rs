mod common;

use common::*;
use fcsrg::bundle::{decode_fim, encode_fim, Manifest};
use fcsrg::experiments::{apply_override, ExperimentConfig};
use fcsrg::generative::{
    estimate_lipschitz_lower, make_synthetic_generator, sample_latent, LatentLayout, LatentVector, SampleMode,
};
use fcsrg::image::{decode_pgm, encode_pgm, quantize};
use fcsrg::mlp::{Activation, DenseLayer, Loss, MlpNetwork, OutputBlockSpec};
use fcsrg::projector::Projector;
use fcsrg::recovery::{
    codeword_accuracy, csgm_gd_recover, fcsrg_recover, measure, pinv_recover, pnp_dae_recover, reconstruction_error,
    SolverConfig,
};
use fcsrg::tensor::{ridge_solve, DenseMatrix, DenseVector, Rng, SensingMatrix};
use fcsrg::theory::{bound_coefficients, check_jl, IsometryConfig, Slack};
use fcsrg::weights::{decode, encode};
use proptest::prelude::*;

fn layout_strategy() -> impl Strategy<Value = LatentLayout> {
    (prop::collection::vec(2usize..5, 0..3), 0usize..3, 0usize..5)
        .prop_filter("L ≥ 1", |(g, c, v)| g.iter().sum::<usize>() + c + v >= 1)
        .prop_map(|(g, c, v)| LatentLayout::new(g, c, v).unwrap())
}

const FD_STEP: f64 = 1e-5;
/// Central differences carry ~1e-11 absolute roundoff at this step; below
/// this gradient norm the oracle cannot resolve 1e-4 relative error.
const FD_FLOOR: f64 = 1e-5;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn woodbury_agrees_with_direct_solve(m in 1usize..=64, extra in 0usize..=448, log_rho in -3.0f64..3.0, seed: u64) {
        let n = m + extra;
        let rho = 10f64.powf(log_rho);
        let phi = SensingMatrix::standard(m, n, seed).unwrap();
        let b = Rng::new(seed ^ 1).normal_vec(n, 1.0);
        let x = ridge_solve(&phi, rho, &b).unwrap();
        let oracle = direct_ridge(phi.matrix(), rho, &b);
        prop_assert!(rel_err(&x, &oracle) <= 1e-10, "rel err {}", rel_err(&x, &oracle));
        // Residual of the full system.
        let ax = phi.apply_t(&phi.apply(&x).unwrap()).unwrap().add(&x.scaled(rho));
        prop_assert!(rel_err(&ax, &b) <= 1e-9);
    }

    #[test]
    fn sensing_matrix_regenerates_bit_identically(m in 1usize..20, extra in 0usize..20, seed: u64) {
        let a = SensingMatrix::standard(m, m + extra, seed).unwrap();
        let b = SensingMatrix::standard(m, m + extra, seed).unwrap();
        prop_assert_eq!(a.matrix().data(), b.matrix().data());
    }

    #[test]
    fn parameter_gradients_match_finite_differences(seed: u64, softmax: bool) {
        let net = random_net(seed, 8, softmax);
        let mut rng = Rng::new(seed ^ 0xF00D);
        let x = rng.normal_vec(net.input_dim(), 1.0);
        let t = random_target(&net, &mut rng);
        let (value, grads) = net.grad_params(&x, &t, Loss::Mixed).unwrap();
        prop_assert!((value - mixed_loss(&net, &x, &t)).abs() <= 1e-10 * value.abs().max(1.0));
        let analytic: Vec<f64> = grads.iter().collect();
        let numeric = fd_param_grad(&net, &x, &t, FD_STEP);
        prop_assume!(norm(&numeric) > FD_FLOOR);
        prop_assert!(rel_err(&analytic, &numeric) <= 1e-4, "rel err {}", rel_err(&analytic, &numeric));
    }

    #[test]
    fn input_gradients_match_finite_differences(seed: u64, softmax: bool) {
        let net = random_net(seed, 8, softmax);
        let mut rng = Rng::new(seed ^ 0xBEEF);
        let x = rng.normal_vec(net.input_dim(), 1.0);
        let cot = rng.normal_vec(net.output_dim(), 1.0);
        let analytic = net.grad_input(&x, &cot).unwrap();
        let numeric = fd_input_grad(&net, &x, &cot, FD_STEP);
        prop_assume!(norm(&numeric) > FD_FLOOR);
        prop_assert!(rel_err(&analytic, &numeric) <= 1e-4, "rel err {}", rel_err(&analytic, &numeric));
    }

    #[test]
    fn softmax_blocks_are_distributions(seed: u64, scale in 0.1f64..50.0) {
        let net = random_net(seed, 8, true);
        let x = Rng::new(seed).normal_vec(net.input_dim(), scale);
        let o = net.forward(&x).unwrap();
        for b in net.output_blocks().blocks().iter().filter(|b| b.activation == Activation::Softmax) {
            let block = &o[b.offset..b.offset + b.len];
            prop_assert!(block.iter().all(|&p| p >= 0.0));
            prop_assert!((block.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn lipschitz_bound_dominates_difference_quotients(seed: u64) {
        let net = random_net(seed, 8, false);
        let bound = net.lipschitz_upper_bound();
        let mut rng = Rng::new(seed ^ 7);
        for _ in 0..500 {
            let a = rng.normal_vec(net.input_dim(), 1.0);
            let step = 10f64.powf(rng.uniform_range(-4.0, 0.5));
            let d = rng.normal_vec(net.input_dim(), step);
            let b: Vec<f64> = a.iter().zip(&d).map(|(x, y)| x + y).collect();
            let q = net.forward(&a).unwrap().distance(&net.forward(&b).unwrap()) / norm(&d);
            prop_assert!(q <= bound, "quotient {q} > bound {bound}");
        }
    }

    #[test]
    fn weight_round_trip_keeps_forward(seed: u64, softmax: bool) {
        let net = random_net(seed, 8, softmax);
        let (back, layout) = decode(&encode(&net, None)).unwrap();
        prop_assert!(layout.is_none());
        let mut rng = Rng::new(seed);
        for _ in 0..10 {
            let x = rng.normal_vec(net.input_dim(), 1.0);
            let (a, b) = (net.forward(&x).unwrap(), back.forward(&x).unwrap());
            prop_assert!(rel_err(&b, &a) <= 1e-6);
        }
    }

    #[test]
    fn sampled_and_enforced_latents_are_admissible(layout in layout_strategy(), seed: u64, hard: bool) {
        let mut rng = Rng::new(seed);
        let mode = if hard { SampleMode::Hard } else { SampleMode::Soft };
        let z = sample_latent(&layout, &mut rng, mode);
        prop_assert!(z.is_admissible(&layout, 1e-12));
        let raw = rng.normal_vec(layout.l(), 20.0);
        let mut w = LatentVector::from_flat(&layout, &raw).unwrap();
        w.enforce(&layout);
        prop_assert!(w.is_admissible(&layout, 1e-9));
    }

    #[test]
    fn projector_output_is_admissible(layout in layout_strategy(), seed: u64, scale in 0.01f64..100.0) {
        let proj = Projector::random(6, &[5], &layout, seed).unwrap();
        let x = Rng::new(seed ^ 3).normal_vec(6, scale);
        prop_assert!(proj.project(&x).unwrap().is_admissible(&layout, 1e-9));
    }

    #[test]
    fn generated_lipschitz_estimate_never_exceeds_certificate(seed: u64, beta in 0.0f64..1.0) {
        let layout = LatentLayout::new(vec![3], 1, 3).unwrap();
        let gen = make_synthetic_generator(&layout, 10, beta, &[6], seed).unwrap();
        let lower = estimate_lipschitz_lower(&gen, 200, &mut Rng::new(seed)).unwrap();
        prop_assert!(lower <= gen.t_hat.unwrap());
    }

    #[test]
    fn v_changes_only_pass_through_the_detail_branch(seed: u64, beta in 0.01f64..1.0) {
        let hidden = [5usize, 4];
        let layout = LatentLayout::new(vec![3], 1, 4).unwrap();
        let n = 7;
        let gen = make_synthetic_generator(&layout, n, beta, &hidden, seed).unwrap();
        let (f_cv, gamma) = detail_branch(gen.net(), &hidden, layout.d(), n);
        let mut rng = Rng::new(seed ^ 9);
        let z1 = sample_latent(&layout, &mut rng, SampleMode::Soft);
        let v2 = sample_latent(&layout, &mut rng, SampleMode::Hard).v;
        let z2 = LatentVector { c: z1.c.clone(), v: v2 };
        let diff = gen.generate(&z1).unwrap().sub(&gen.generate(&z2).unwrap());
        let branch = f_cv.forward(&z1.flat()).unwrap().sub(&f_cv.forward(&z2.flat()).unwrap()).scaled(gamma);
        for (a, b) in diff.iter().zip(branch.iter()) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
        prop_assert!(diff.norm() <= beta);
    }

    #[test]
    fn all_solvers_return_finite_deterministic_estimates(seed: u64, m in 1usize..=12) {
        let layout = LatentLayout::new(vec![3], 0, 3).unwrap();
        let gen = make_synthetic_generator(&layout, 12, 0.1, &[8], seed).unwrap();
        let proj = Projector::random(12, &[8], &layout, seed ^ 1).unwrap();
        let denoiser = MlpNetwork::random(
            &[12, 12, 12],
            &[Activation::Relu, Activation::Identity],
            OutputBlockSpec::identity(12),
            &mut Rng::new(seed ^ 2),
        )
        .unwrap();
        let mut rng = Rng::new(seed ^ 3);
        let x = gen.generate(&sample_latent(&layout, &mut rng, SampleMode::Hard)).unwrap();
        let phi = SensingMatrix::standard(m, 12, seed).unwrap();
        let meas = measure(&phi, &x, 0.01, &mut rng).unwrap();
        let cfg = SolverConfig { max_iters: 20, gd_iters: 20, restarts: 2, seed, ..SolverConfig::default() };
        let runs = || {
            vec![
                pinv_recover(&meas).unwrap(),
                pnp_dae_recover(&meas, &denoiser, &cfg).unwrap(),
                csgm_gd_recover(&meas, &gen, &cfg).unwrap(),
                fcsrg_recover(&meas, &gen, &proj, &cfg).unwrap(),
            ]
        };
        let (first, second) = (runs(), runs());
        for (a, b) in first.iter().zip(&second) {
            prop_assert_eq!(a.x_hat.len(), 12);
            prop_assert!(a.x_hat.is_finite());
            prop_assert!(a.iterations <= cfg.max_iters.max(cfg.gd_iters));
            prop_assert!(a.same_outcome(b));
        }
    }

    #[test]
    fn jl_violations_are_scale_invariant(seed: u64, scale in 0.1f64..20.0) {
        let mut rng = Rng::new(seed);
        let points: Vec<DenseVector> = (0..2).map(|_| DenseVector::new(rng.normal_vec(100, 1.0))).collect();
        let scaled: Vec<DenseVector> = points.iter().map(|p| p.scaled(scale)).collect();
        let cfg = IsometryConfig { epsilon: 0.45, delta: 0.5, num_matrix_draws: 20, slack: Slack::Absolute(0.0), seed, ..IsometryConfig::default() };
        let m = 83;
        let a = check_jl(&points, m, &cfg).unwrap();
        let b = check_jl(&scaled, m, &cfg).unwrap();
        prop_assert_eq!(a.violation_fraction, b.violation_fraction);
    }

    #[test]
    fn metrics_are_well_behaved(seed: u64, k in 2usize..6, groups in 1usize..4) {
        let layout = LatentLayout::new(vec![k; groups], 0, 1).unwrap();
        let mut rng = Rng::new(seed);
        let a = sample_latent(&layout, &mut rng, SampleMode::Soft);
        let b = sample_latent(&layout, &mut rng, SampleMode::Hard);
        let acc = codeword_accuracy(&a, &b.c, &layout).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert_eq!(codeword_accuracy(&b, &b.c, &layout).unwrap(), 1.0);
        let (x, y) = (rng.normal_vec(9, 1.0), rng.normal_vec(9, 1.0));
        prop_assert_eq!(reconstruction_error(&x, &y).unwrap(), reconstruction_error(&y, &x).unwrap());
    }

    #[test]
    fn bound_coefficients_shrink_with_more_measurements(n in 10usize..500, m in 1usize..10, eps in 0.01f64..0.49) {
        let lo = bound_coefficients(n, m, eps);
        let hi = bound_coefficients(n, m + 1, eps);
        for (a, b) in lo.iter().zip(&hi) {
            prop_assert!(b <= a && *b > 0.0);
        }
    }

    #[test]
    fn fim_round_trip(count in 0usize..5, dim in 1usize..9, seed: u64) {
        let mut rng = Rng::new(seed);
        let vs: Vec<DenseVector> = (0..count).map(|_| DenseVector::new(rng.normal_vec(dim, 3.0))).collect();
        let back = decode_fim(&encode_fim(&vs).unwrap()).unwrap();
        prop_assert_eq!(back.len(), count);
        for (a, b) in vs.iter().zip(&back) {
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert_eq!(*y, *x as f32 as f64);
            }
        }
    }

    #[test]
    fn manifest_round_trip(entries in prop::collection::btree_map("[a-z][a-z0-9_.]{0,8}", "[ -~&&[^=#]]{0,12}", 0..6)) {
        let mut m = Manifest::default();
        for (k, v) in &entries {
            m.set(k.clone(), v.trim().to_string());
        }
        let back = Manifest::parse(&m.render()).unwrap();
        for (k, v) in &entries {
            prop_assert_eq!(back.get(k), Some(v.trim()));
        }
    }

    #[test]
    fn pgm_round_trip(w in 1usize..9, h in 1usize..9, seed: u64) {
        let x = Rng::new(seed).normal_vec(w * h, 2.0);
        let (w2, h2, px) = decode_pgm(&encode_pgm(&x, w, h).unwrap()).unwrap();
        prop_assert_eq!((w2, h2), (w, h));
        prop_assert_eq!(px, quantize(&x).unwrap());
    }

    #[test]
    fn overrides_land_on_the_named_field(trials in 1usize..1000, eps in 0.01f64..0.49, seed: u64) {
        let o = vec![format!("sweep.trials={trials}"), format!("theory.epsilon={eps:?}"), format!("recover.seed={seed}")];
        let cfg = ExperimentConfig::from_toml_str("", &o, None).unwrap();
        prop_assert_eq!(cfg.sweep.trials, trials);
        prop_assert_eq!(cfg.theory.epsilon, eps);
        prop_assert_eq!(cfg.recover.seed, seed);
        let mut doc = toml::Table::new();
        apply_override(&mut doc, "a.b.c=word").unwrap();
        prop_assert_eq!(doc["a"]["b"]["c"].as_str(), Some("word"));
    }
}

/// Unpack the `(c, v)` detail branch and its gain `γ` from the packed
/// block-diagonal network of a synthetic generator.
fn detail_branch(net: &MlpNetwork, hidden: &[usize], d: usize, n: usize) -> (MlpNetwork, f64) {
    let layers = net.layers();
    let h_last = *hidden.last().unwrap();
    // c-branch widths per packed layer: the hidden widths, then h_last.
    let c_rows: Vec<usize> = hidden.iter().copied().chain([h_last]).collect();
    let mut out = Vec::new();
    for (k, layer) in layers[..layers.len() - 1].iter().enumerate() {
        let (rc, w) = (c_rows[k], layer.weights());
        let c_cols = if k == 0 { 0 } else { c_rows[k - 1] };
        if k == 0 {
            // The codeword branch never reads v.
            for i in 0..rc {
                for j in d..w.cols() {
                    assert_eq!(w.get(i, j), 0.0);
                }
            }
        }
        let sub = DenseMatrix::from_fn(w.rows() - rc, w.cols() - c_cols, |i, j| w.get(rc + i, c_cols + j));
        let bias = DenseVector::new(layer.bias().as_slice()[rc..].to_vec());
        out.push(DenseLayer::new(sub, bias, layer.activation()).unwrap());
    }
    let readout = layers.last().unwrap().weights();
    assert_eq!(readout.cols(), h_last + n);
    (MlpNetwork::from_layers(out).unwrap(), readout.get(0, h_last))
}

