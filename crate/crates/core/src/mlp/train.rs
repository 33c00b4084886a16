use super::{Gradients, Loss, MlpNetwork};
use crate::error::{Error, Result};
use crate::tensor::{DenseVector, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub loss: Loss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 50,
            optimizer: Optimizer::adam(),
            seed: 0,
            loss: Loss::SquaredError,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Parameter("batch size and epochs must be positive".into()));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            let in_unit = |b: f64| b > 0.0 && b < 1.0;
            if !in_unit(beta1) || !in_unit(beta2) || !(eps > 0.0) {
                return Err(Error::Parameter(format!(
                    "adam moments must lie in (0,1) and eps > 0, got ({beta1}, {beta2}, {eps})"
                )));
            }
        }
        Ok(())
    }
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(cfg: &TrainConfig, params: usize) -> Self {
        let (m, v) = match cfg.optimizer {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::Adam { .. } => (vec![0.0; params], vec![0.0; params]),
        };
        Self {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            m,
            v,
            t: 0,
        }
    }

    fn step(&mut self, net: &mut MlpNetwork, grads: &Gradients) {
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in net.params_mut().zip(grads.iter()) {
                    *p -= self.lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                let (m, v) = (&mut self.m, &mut self.v);
                for (((p, g), mi), vi) in net
                    .params_mut()
                    .zip(grads.iter())
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                {
                    *mi = beta1 * *mi + (1.0 - beta1) * g;
                    *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                    let m_hat = *mi / c1;
                    let v_hat = *vi / c2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

/// Minibatch training loop over `num_samples` abstract samples.
///
/// `sample_grad(net, i, grads)` must add sample `i`'s loss gradient into
/// `grads` and return its loss. Returns one mean loss per epoch, measured
/// while the epoch's updates are applied. Shuffling is seeded by `cfg.seed`.
pub fn train_with<F>(
    net: &mut MlpNetwork,
    num_samples: usize,
    cfg: &TrainConfig,
    mut sample_grad: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&MlpNetwork, usize, &mut Gradients) -> Result<f64>,
{
    cfg.validate()?;
    if num_samples == 0 {
        return Err(Error::Parameter("training set is empty".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..num_samples).collect();
    let mut opt = OptimizerState::new(cfg, net.param_count());
    let mut grads = Gradients::zeros_like(net);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.fill_zero();
            for &i in batch {
                let loss = match sample_grad(net, i, &mut grads) {
                    Err(Error::Numeric { context, .. }) => {
                        return Err(Error::numeric(format!("training epoch {epoch}: {context}"), epoch))
                    }
                    other => other?,
                };
                total += loss;
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(net, &grads);
        }
        let mean = total / num_samples as f64;
        if !mean.is_finite() || !net.params().all(f64::is_finite) {
            return Err(Error::numeric(format!("training loss diverged at epoch {epoch}"), epoch));
        }
        trace.push(mean);
    }
    Ok(trace)
}

/// Supervised fit of `net` to `(input, target)` pairs.
pub fn train_supervised(
    mut net: MlpNetwork,
    dataset: &[(DenseVector, DenseVector)],
    cfg: &TrainConfig,
) -> Result<(MlpNetwork, Vec<f64>)> {
    for (k, (x, t)) in dataset.iter().enumerate() {
        if x.len() != net.input_dim() {
            return Err(Error::dim(format!("training input {k}"), net.input_dim(), x.len()));
        }
        if t.len() != net.output_dim() {
            return Err(Error::dim(format!("training target {k}"), net.output_dim(), t.len()));
        }
    }
    let loss = cfg.loss;
    let trace = train_with(&mut net, dataset.len(), cfg, |net, i, grads| {
        let (x, t) = &dataset[i];
        net.accumulate_loss(x, t, loss, grads)
    })?;
    Ok((net, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{Activation, OutputBlockSpec};
    use crate::tensor::DenseMatrix;

    fn small_task(rng: &mut Rng) -> Vec<(DenseVector, DenseVector)> {
        (0..64)
            .map(|_| {
                let x = DenseVector::new(rng.normal_vec(3, 1.0));
                let t = DenseVector::new(vec![x[0] * x[1], (x[2]).sin()]);
                (x, t)
            })
            .collect()
    }

    #[test]
    fn identity_net_on_identity_data_has_zero_loss() {
        let mut rng = Rng::new(1);
        let data: Vec<_> = (0..20)
            .map(|_| {
                let x = DenseVector::new(rng.normal_vec(4, 1.0));
                (x.clone(), x)
            })
            .collect();
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        let (_, trace) = train_supervised(MlpNetwork::identity(4), &data, &cfg).unwrap();
        assert_eq!(trace, vec![0.0; 5]);
    }

    #[test]
    fn empty_dataset_rejected() {
        let cfg = TrainConfig::default();
        assert!(matches!(
            train_supervised(MlpNetwork::identity(2), &[], &cfg),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn bad_hyperparameters_rejected() {
        let cfg = TrainConfig {
            optimizer: Optimizer::Adam { beta1: 1.0, beta2: 0.9, eps: 1e-8 },
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn random_task_loss_decreases_and_is_reproducible() {
        let mut rng = Rng::new(9);
        let data = small_task(&mut rng);
        let net = MlpNetwork::random(
            &[3, 8, 2],
            &[Activation::Tanh, Activation::Identity],
            OutputBlockSpec::identity(2),
            &mut rng,
        )
        .unwrap();
        let cfg = TrainConfig { epochs: 40, batch_size: 8, learning_rate: 0.01, seed: 3, ..TrainConfig::default() };
        let (_, a) = train_supervised(net.clone(), &data, &cfg).unwrap();
        let (_, b) = train_supervised(net, &data, &cfg).unwrap();
        assert!(a.iter().all(|x| x.is_finite()));
        assert!(a.last().unwrap() <= a.first().unwrap());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn divergence_reports_epoch() {
        let data = vec![(DenseVector::new(vec![1e200]), DenseVector::new(vec![0.0]))];
        let net = MlpNetwork::from_layers(vec![crate::mlp::DenseLayer::linear(
            DenseMatrix::identity(1),
        )])
        .unwrap();
        let cfg = TrainConfig { optimizer: Optimizer::Sgd, learning_rate: 1.0, ..TrainConfig::default() };
        match train_supervised(net, &data, &cfg) {
            Err(Error::Numeric { step, .. }) => assert!(step < cfg.epochs),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
