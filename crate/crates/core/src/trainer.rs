//! Mini-batch block coordinate descent on the lifted objective.
//!
//! Each batch: initialize the activation blocks by a forward pass, sweep the activation
//! blocks (hidden blocks then the output), then re-solve every weight block against the
//! updated activations. Weight blocks only read activation blocks, so they are solved
//! concurrently.

use std::time::Instant;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activation::{Activation, Quadrature};
use crate::apg::{weight_update, Ridge, WeightRoute, WeightUpdateOptions};
use crate::datasets::LabeledDataset;
use crate::error::{LpomError, Result};
use crate::lifted::{
    iterate_fixed_point, objective, BlockSolve, Damping, FixedPointOptions, HiddenBlockMap, Loss, NetworkState,
    OutputBlockMap, Penalties,
};
use crate::network::Weights;
use crate::par::Parallelism;
use crate::tensor::Matrix;

/// Samples per forward pass when measuring accuracy.
const EVAL_CHUNK: usize = 2000;

/// How the activation blocks of one sweep see each other.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum XUpdateMode {
    /// Blocks in forward order, each using the freshest neighbours.
    #[default]
    Serial,
    /// All blocks from the same snapshot, solved concurrently.
    Jacobi,
}

impl std::str::FromStr for XUpdateMode {
    type Err = LpomError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "serial" => Ok(XUpdateMode::Serial),
            "jacobi" => Ok(XUpdateMode::Jacobi),
            other => Err(LpomError::Config(format!(
                "unknown x-update mode '{other}' (expected serial or jacobi)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// `n₁, …, nₙ`.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    /// One weight per non-input block, or a single value for all of them.
    pub mu: Vec<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fixed-point iterations per activation block.
    pub k1: usize,
    /// Accelerated steps per weight block.
    pub k2: usize,
    pub seed: u64,
    pub x_mode: XUpdateMode,
    /// Activation sweeps per batch before the weights are updated.
    pub x_sweeps: usize,
    pub safeguard_damping: bool,
    pub ridge: Ridge,
    pub bias: bool,
    pub parallelism: Parallelism,
    /// Measure accuracy on the full training split after every epoch.
    pub eval_train: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            layer_sizes: vec![784, 300, 10],
            activation: Activation::Relu,
            mu: vec![20.0],
            batch_size: 100,
            epochs: 17,
            k1: 10,
            k2: 30,
            seed: 0,
            x_mode: XUpdateMode::Serial,
            x_sweeps: 20,
            safeguard_damping: true,
            ridge: Ridge::default(),
            bias: true,
            parallelism: Parallelism::default(),
            eval_train: true,
        }
    }
}

impl TrainConfig {
    pub fn depth(&self) -> usize {
        self.layer_sizes.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(LpomError::Config("need at least an input and an output layer".into()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(LpomError::Config("layer sizes must be positive".into()));
        }
        if self.batch_size == 0 || self.k1 == 0 || self.k2 == 0 || self.x_sweeps == 0 {
            return Err(LpomError::Config(
                "batch size, k1, k2 and x_sweeps must be at least 1".into(),
            ));
        }
        if self.mu.len() != 1 && self.mu.len() != self.depth() {
            return Err(LpomError::Config(format!(
                "{} penalty weights for {} blocks",
                self.mu.len(),
                self.depth()
            )));
        }
        self.penalties().map(|_| ())
    }

    pub fn penalties(&self) -> Result<Penalties> {
        match self.mu.as_slice() {
            [mu] => Penalties::uniform(*mu, self.depth()),
            many => Penalties::new(many.to_vec()),
        }
    }

    fn check_data(&self, data: &LabeledDataset, split: &str) -> Result<()> {
        if data.feature_dim() != self.layer_sizes[0] || data.class_count != self.layer_sizes[self.depth()] {
            return Err(LpomError::Config(format!(
                "{split} split has {} features and {} classes, network expects {} and {}",
                data.feature_dim(),
                data.class_count,
                self.layer_sizes[0],
                self.layer_sizes[self.depth()]
            )));
        }
        Ok(())
    }

    fn fixed_point_options(&self) -> FixedPointOptions {
        FixedPointOptions {
            max_iter: self.k1,
            tol: 1e-6,
            damping: if self.safeguard_damping {
                Damping::Safeguard
            } else {
                Damping::Off
            },
        }
    }

    fn weight_options(&self) -> WeightUpdateOptions {
        WeightUpdateOptions {
            max_iter: self.k2,
            rel_tol: 1e-7,
            ridge: self.ridge,
            route: WeightRoute::Auto,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// `NaN` when training accuracy is not measured.
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Mean over the epoch's batches of the per-batch objective (lifted objective for
    /// block descent, loss for gradient descent).
    pub objective_mean: f64,
    /// Since the start of training.
    pub wall_seconds: f64,
}

/// Glorot-uniform weights for `config`, deterministic in the seed.
pub fn init_weights(config: &TrainConfig) -> Result<Weights> {
    config.validate()?;
    Weights::glorot(&config.layer_sizes, config.bias, config.seed)
}

/// Per-epoch shuffled batch partitions; the last batch of an epoch may be short.
pub(crate) struct BatchPlan {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    batch_size: usize,
}

impl BatchPlan {
    pub(crate) fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Separate stream from the one used for weight initialization.
        rng.set_stream(1);
        BatchPlan {
            rng,
            order: (0..n).collect(),
            batch_size,
        }
    }

    pub(crate) fn epoch(&mut self) -> Vec<Vec<usize>> {
        self.order.shuffle(&mut self.rng);
        self.order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Result of one batch of block descent.
#[derive(Clone, Debug)]
pub struct BatchReport {
    /// Lifted objective after the activation sweeps and after the weight updates.
    pub objective_after_x: f64,
    pub objective_after_w: f64,
    pub weight_steps: Vec<usize>,
    /// Largest contraction bound seen per non-input block.
    pub certificates: Vec<f64>,
}

fn finite_objective(state: &NetworkState, labels: &Matrix) -> Result<f64> {
    objective(state, labels, Loss::LeastSquares, Quadrature::Allowed)?
        .finite()
        .ok_or_else(|| LpomError::NonFinite("lifted objective left the domain".into()))
}

/// One activation sweep over `state` in the configured order. Returns the contraction
/// bound of every non-input block, in block order.
pub fn sweep_activations(state: &mut NetworkState, labels: &Matrix, config: &TrainConfig) -> Result<Vec<f64>> {
    let input_pre = state.weights.pre_activation(0, &state.blocks[0])?;
    sweep_with_input(state, labels, config, &input_pre)
}

/// [`sweep_activations`] with `W¹X¹` precomputed; it stays fixed for the whole batch.
fn sweep_with_input(
    state: &mut NetworkState,
    labels: &Matrix,
    config: &TrainConfig,
    input_pre: &Matrix,
) -> Result<Vec<f64>> {
    let opts = config.fixed_point_options();
    let depth = state.depth();
    let solve = |state: &NetworkState, j: usize| -> Result<BlockSolve> {
        if j < depth {
            let map = if j == 1 {
                HiddenBlockMap::with_base(state, 1, input_pre.clone())?
            } else {
                HiddenBlockMap::new(state, j)?
            };
            iterate_fixed_point(&map, &state.blocks[j], opts)
        } else {
            let map = OutputBlockMap::new(state, labels, Loss::LeastSquares)?;
            iterate_fixed_point(&map, &state.blocks[j], opts)
        }
    };
    let mut certificates = Vec::with_capacity(depth);
    match config.x_mode {
        XUpdateMode::Serial => {
            for j in 1..=depth {
                let s = solve(state, j)?;
                certificates.push(s.certificate);
                state.blocks[j] = s.x;
            }
        }
        XUpdateMode::Jacobi => {
            let snapshot = &*state;
            let solved = config.parallelism.map(depth, |j| solve(snapshot, j + 1));
            for (j, s) in solved.into_iter().enumerate() {
                let s = s?;
                certificates.push(s.certificate);
                state.blocks[j + 1] = s.x;
            }
        }
    }
    Ok(certificates)
}

/// Re-solves every weight block against the current activation blocks.
pub fn update_weights(state: &mut NetworkState, config: &TrainConfig) -> Result<Vec<usize>> {
    let opts = config.weight_options();
    let snapshot = &*state;
    let solved = config.parallelism.map(state.depth(), |i| {
        let input = snapshot.weights.lift_input(&snapshot.blocks[i]);
        weight_update(
            snapshot.weights.layer(i),
            &input,
            &snapshot.blocks[i + 1],
            snapshot.activation,
            opts,
        )
    });
    let mut steps = Vec::with_capacity(solved.len());
    for (i, s) in solved.into_iter().enumerate() {
        let s = s?;
        steps.push(s.steps);
        state.weights.set_layer(i, s.w)?;
    }
    Ok(steps)
}

/// Runs one batch of block descent, replacing `weights` with the updated ones.
pub fn train_batch(weights: &mut Weights, batch: &LabeledDataset, config: &TrainConfig) -> Result<BatchReport> {
    let mut state = NetworkState::from_feedforward(
        weights.clone(),
        config.activation,
        config.penalties()?,
        batch.features.clone(),
    )?;
    let labels = &batch.labels_onehot;
    let input_pre = state.weights.pre_activation(0, &state.blocks[0])?;
    let mut certificates = vec![0.0f64; state.depth()];
    for _ in 0..config.x_sweeps {
        let seen = sweep_with_input(&mut state, labels, config, &input_pre)?;
        for (c, s) in certificates.iter_mut().zip(seen) {
            *c = c.max(s);
        }
    }
    let objective_after_x = finite_objective(&state, labels)?;
    let weight_steps = update_weights(&mut state, config)?;
    let objective_after_w = finite_objective(&state, labels)?;
    *weights = state.weights;
    Ok(BatchReport {
        objective_after_x,
        objective_after_w,
        weight_steps,
        certificates,
    })
}

/// Fraction of samples whose predicted class matches the label.
pub fn evaluate(weights: &Weights, act: Activation, data: &LabeledDataset) -> Result<f64> {
    evaluate_with(weights, act, data, Parallelism::default())
}

pub fn evaluate_with(weights: &Weights, act: Activation, data: &LabeledDataset, par: Parallelism) -> Result<f64> {
    if data.is_empty() {
        return Err(LpomError::Empty("evaluation dataset"));
    }
    let predicted = weights.predict_chunked(act, &data.features, EVAL_CHUNK, par)?;
    let hits = predicted.iter().zip(&data.labels_index).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / data.len() as f64)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn epoch_metrics(
    epoch: usize,
    weights: &Weights,
    act: Activation,
    train: &LabeledDataset,
    test: &LabeledDataset,
    eval_train: bool,
    objective_mean: f64,
    started: Instant,
    par: Parallelism,
) -> Result<EpochMetrics> {
    let train_accuracy = if eval_train {
        evaluate_with(weights, act, train, par)?
    } else {
        f64::NAN
    };
    Ok(EpochMetrics {
        epoch,
        train_accuracy,
        test_accuracy: evaluate_with(weights, act, test, par)?,
        objective_mean,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Trains from [`init_weights`] and returns the final weights and per-epoch metrics.
pub fn train_lpom(
    config: &TrainConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<(Weights, Vec<EpochMetrics>)> {
    train_lpom_with(config, train, test, |_, _| Ok(()))
}

/// [`train_lpom`] with a callback after every epoch.
pub fn train_lpom_with(
    config: &TrainConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
    mut on_epoch: impl FnMut(&EpochMetrics, &Weights) -> Result<()>,
) -> Result<(Weights, Vec<EpochMetrics>)> {
    config.validate()?;
    config.check_data(train, "training")?;
    config.check_data(test, "test")?;
    let started = Instant::now();
    let mut weights = init_weights(config)?;
    let mut plan = BatchPlan::new(train.len(), config.batch_size, config.seed);
    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let batches = plan.epoch();
        let mut total = 0.0;
        let mut worst = vec![0.0f64; config.depth()];
        for (b, idx) in batches.iter().enumerate() {
            let batch = train.subset(idx)?;
            let report = train_batch(&mut weights, &batch, config).map_err(|e| match e {
                LpomError::NonFinite(msg) => LpomError::NonFinite(format!("epoch {epoch} batch {b}: {msg}")),
                other => other,
            })?;
            debug!(
                "epoch {epoch} batch {b}: objective {:.6} -> {:.6}, weight steps {:?}",
                report.objective_after_x, report.objective_after_w, report.weight_steps
            );
            total += report.objective_after_w;
            for (w, c) in worst.iter_mut().zip(&report.certificates) {
                *w = w.max(*c);
            }
        }
        for (j, c) in worst.iter().enumerate().filter(|(_, c)| **c >= 1.0) {
            warn!(
                "epoch {epoch}: block {} contraction bound reached {c:.4} >= 1 ({})",
                j + 1,
                if config.safeguard_damping { "damped" } else { "undamped" }
            );
        }
        let m = epoch_metrics(
            epoch,
            &weights,
            config.activation,
            train,
            test,
            config.eval_train,
            total / batches.len() as f64,
            started,
            config.parallelism,
        )?;
        info!(
            "epoch {epoch}: train {:.4} test {:.4} objective {:.4} ({:.1}s)",
            m.train_accuracy, m.test_accuracy, m.objective_mean, m.wall_seconds
        );
        on_epoch(&m, &weights)?;
        metrics.push(m);
    }
    Ok((weights, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synth_blobs;

    fn blob_config(act: Activation) -> TrainConfig {
        TrainConfig {
            layer_sizes: vec![4, 6, 2],
            activation: act,
            mu: vec![1.0],
            batch_size: 16,
            epochs: 5,
            seed: 3,
            eval_train: true,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn batch_plan_partitions_each_epoch() {
        let mut plan = BatchPlan::new(10, 4, 1);
        for _ in 0..3 {
            let batches = plan.epoch();
            assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
            let mut all: Vec<usize> = batches.concat();
            all.sort_unstable();
            assert_eq!(all, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let data = synth_blobs(2, 10, 4, 10.0, 1).unwrap();
        let config = TrainConfig {
            epochs: 0,
            ..blob_config(Activation::Relu)
        };
        let (w, m) = train_lpom(&config, &data, &data).unwrap();
        assert!(m.is_empty());
        assert_eq!(w, init_weights(&config).unwrap());
    }

    #[test]
    fn identity_network_separates_blobs() {
        let data = synth_blobs(2, 50, 4, 20.0, 2).unwrap();
        // μ = 1 would put the output certificate at exactly 1.
        let config = TrainConfig {
            mu: vec![5.0],
            ..blob_config(Activation::Identity)
        };
        let (_, m) = train_lpom(&config, &data, &data).unwrap();
        assert_eq!(m.last().unwrap().train_accuracy, 1.0);
    }

    #[test]
    fn config_validation() {
        let mut c = blob_config(Activation::Relu);
        c.mu = vec![1.0, 2.0, 3.0];
        assert!(c.validate().is_err());
        c.mu = vec![1.0, 2.0];
        assert!(c.validate().is_ok());
        c.k1 = 0;
        assert!(c.validate().is_err());
        let data = synth_blobs(3, 4, 4, 1.0, 1).unwrap();
        assert!(train_lpom(&blob_config(Activation::Relu), &data, &data).is_err());
    }

    #[test]
    fn evaluate_counts_matches() {
        let data = synth_blobs(2, 3, 2, 50.0, 4).unwrap();
        let w = Weights::new(vec![Matrix::identity(2)], false).unwrap();
        assert_eq!(evaluate(&w, Activation::Identity, &data).unwrap(), 1.0);
        let flipped = Weights::new(
            vec![Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()],
            false,
        )
        .unwrap();
        assert_eq!(
            evaluate(&flipped, Activation::Identity, &data.head(1).unwrap()).unwrap(),
            0.0
        );
    }
}
