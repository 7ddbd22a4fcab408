//! Mini-batch SGD with momentum on `½‖Xⁿ − L‖²_F` (averaged over the batch), by
//! back-propagation. Shares initialization, batch order and metrics with the block
//! descent trainer so the two are directly comparable.

use std::time::Instant;

use log::info;

use crate::activation::Activation;
use crate::datasets::LabeledDataset;
use crate::error::{LpomError, Result};
use crate::network::Weights;
use crate::tensor::Matrix;
use crate::trainer::{epoch_metrics, init_weights, BatchPlan, EpochMetrics, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            epochs: 17,
            batch_size: 100,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(LpomError::Config(format!(
                "learning rate {} must be >= 0",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(LpomError::Config(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(LpomError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean loss `½‖Xⁿ − L‖²_F / m` over the batch and its gradient for every layer
/// (bias column included).
pub fn loss_and_gradients(
    weights: &Weights,
    act: Activation,
    input: &Matrix,
    labels: &Matrix,
) -> Result<(f64, Vec<Matrix>)> {
    let depth = weights.depth();
    let m = input.cols() as f64;
    let mut pre = Vec::with_capacity(depth);
    let mut outs: Vec<Matrix> = Vec::with_capacity(depth);
    for i in 0..depth {
        let z = weights.pre_activation(i, outs.last().unwrap_or(input))?;
        outs.push(act.apply(&z));
        pre.push(z);
    }
    let diff = outs[depth - 1].sub(labels)?;
    let loss = 0.5 * diff.frobenius_norm().powi(2) / m;

    let mut grads = vec![Matrix::zeros(1, 1); depth];
    let mut delta = hadamard_derivative(&diff.scale(1.0 / m)?, &pre[depth - 1], act)?;
    for i in (0..depth).rev() {
        let lower = if i == 0 { input } else { &outs[i - 1] };
        grads[i] = delta.matmul_t(&weights.lift_input(lower))?;
        if i > 0 {
            delta = hadamard_derivative(&weights.transpose_apply(i, &delta)?, &pre[i - 1], act)?;
        }
    }
    Ok((loss, grads))
}

fn hadamard_derivative(upstream: &Matrix, pre: &Matrix, act: Activation) -> Result<Matrix> {
    let mut out = upstream.clone().into_array();
    out.zip_mut_with(pre.as_array(), |d, &z| *d *= act.derivative(z));
    Matrix::from_array(out)
}

/// Trains the network described by `arch` (layer sizes, activation, bias, seed and
/// parallelism are taken from it) with momentum SGD.
pub fn train_sgd(
    config: &SgdConfig,
    arch: &TrainConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<(Weights, Vec<EpochMetrics>)> {
    train_sgd_with(config, arch, train, test, |_, _| Ok(()))
}

pub fn train_sgd_with(
    config: &SgdConfig,
    arch: &TrainConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
    mut on_epoch: impl FnMut(&EpochMetrics, &Weights) -> Result<()>,
) -> Result<(Weights, Vec<EpochMetrics>)> {
    config.validate()?;
    let arch = TrainConfig {
        seed: config.seed,
        ..arch.clone()
    };
    let mut weights = init_weights(&arch)?;
    if train.feature_dim() != weights.input_dim() || train.class_count != weights.output_dim() {
        return Err(LpomError::Config(format!(
            "training split has {} features and {} classes, network expects {} and {}",
            train.feature_dim(),
            train.class_count,
            weights.input_dim(),
            weights.output_dim()
        )));
    }
    let started = Instant::now();
    let mut velocity: Vec<Matrix> = weights
        .layers()
        .iter()
        .map(|w| Matrix::zeros(w.rows(), w.cols()))
        .collect();
    let mut plan = BatchPlan::new(train.len(), config.batch_size, config.seed);
    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let batches = plan.epoch();
        let mut total = 0.0;
        for idx in &batches {
            let batch = train.subset(idx)?;
            let (loss, grads) = loss_and_gradients(&weights, arch.activation, &batch.features, &batch.labels_onehot)
                .map_err(|e| diverged(epoch, e))?;
            if !loss.is_finite() {
                return Err(LpomError::Diverged {
                    epoch,
                    reason: format!("loss {loss}"),
                });
            }
            total += loss;
            for (i, g) in grads.iter().enumerate() {
                velocity[i] = velocity[i]
                    .lin_comb(config.momentum, g, -config.learning_rate)
                    .map_err(|e| diverged(epoch, e))?;
                let next = weights.layer(i).add(&velocity[i]).map_err(|e| diverged(epoch, e))?;
                weights.set_layer(i, next)?;
            }
        }
        let m = epoch_metrics(
            epoch,
            &weights,
            arch.activation,
            train,
            test,
            arch.eval_train,
            total / batches.len() as f64,
            started,
            arch.parallelism,
        )?;
        info!(
            "sgd epoch {epoch}: train {:.4} test {:.4} loss {:.5} ({:.1}s)",
            m.train_accuracy, m.test_accuracy, m.objective_mean, m.wall_seconds
        );
        on_epoch(&m, &weights)?;
        metrics.push(m);
    }
    Ok((weights, metrics))
}

fn diverged(epoch: usize, e: LpomError) -> LpomError {
    match e {
        LpomError::NonFinite(reason) => LpomError::Diverged { epoch, reason },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synth_blobs;

    fn arch() -> TrainConfig {
        TrainConfig {
            layer_sizes: vec![4, 5, 2],
            activation: Activation::Sigmoid,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let data = synth_blobs(2, 10, 4, 5.0, 1).unwrap();
        let cfg = SgdConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 7,
            ..SgdConfig::default()
        };
        let (w, m) = train_sgd(&cfg, &arch(), &data, &data).unwrap();
        assert_eq!(w, init_weights(&arch()).unwrap());
        assert!(m.windows(2).all(|p| p[0].test_accuracy == p[1].test_accuracy));
    }

    #[test]
    fn separable_blobs_are_fit() {
        let data = synth_blobs(2, 50, 4, 20.0, 2).unwrap();
        let cfg = SgdConfig {
            learning_rate: 0.1,
            epochs: 20,
            batch_size: 10,
            ..SgdConfig::default()
        };
        let (_, m) = train_sgd(&cfg, &arch(), &data, &data).unwrap();
        assert_eq!(m.last().unwrap().train_accuracy, 1.0);
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let data = synth_blobs(2, 50, 4, 20.0, 2).unwrap();
        let a = TrainConfig {
            activation: Activation::Identity,
            ..arch()
        };
        let cfg = SgdConfig {
            learning_rate: 1e6,
            momentum: 0.0,
            epochs: 50,
            batch_size: 10,
            seed: 0,
        };
        assert!(matches!(
            train_sgd(&cfg, &a, &data, &data),
            Err(LpomError::Diverged { .. })
        ));
    }

    #[test]
    fn gradients_match_central_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let w = Weights::glorot(&[3, 4, 2], true, 5).unwrap().scaled(2.0).unwrap();
        let x = Matrix::from_fn(3, 6, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let labels = crate::datasets::one_hot(&[0, 1, 1, 0, 1, 0], 2).unwrap();
        let act = Activation::Sigmoid;
        let (_, grads) = loss_and_gradients(&w, act, &x, &labels).unwrap();
        let h = 1e-5;
        for i in 0..w.depth() {
            for r in 0..w.layer(i).rows() {
                for c in 0..w.layer(i).cols() {
                    let bump = |d: f64| {
                        let mut layers = w.layers().to_vec();
                        let mut a = layers[i].clone().into_array();
                        a[(r, c)] += d;
                        layers[i] = Matrix::from_array(a).unwrap();
                        let v = Weights::new(layers, true).unwrap();
                        loss_and_gradients(&v, act, &x, &labels).unwrap().0
                    };
                    let fd = (bump(h) - bump(-h)) / (2.0 * h);
                    let g = grads[i].get(r, c);
                    assert!(
                        (fd - g).abs() <= 1e-6 * (1.0 + g.abs()),
                        "layer {i} ({r},{c}): {g} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn invalid_config() {
        assert!(SgdConfig {
            momentum: 1.0,
            ..SgdConfig::default()
        }
        .validate()
        .is_err());
        assert!(SgdConfig {
            learning_rate: -1.0,
            ..SgdConfig::default()
        }
        .validate()
        .is_err());
    }
}
