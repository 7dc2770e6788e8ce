//! Minibatch training against fixed centers.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datakit::{BackgroundStream, LabeledDataset};
use crate::error::{shape_err, DscError, Result};
use crate::losses::{evaluate, within_class_squared_distances, FeatureBatch, LossKind, LossSpec};
use crate::matrix::Matrix;
use crate::network::NetworkModel;
use crate::scalar::Scalar;
use crate::simplex::SimplexCenters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn sgd(momentum: f64) -> Self {
        OptimizerKind::Sgd { momentum }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

fn check_shapes<T>(params: &[&mut [T]], grads: &[Vec<T>]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(shape_err("optimizer tensor count", params.len(), grads.len()));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(shape_err(format!("optimizer tensor {i}"), p.len(), g.len()));
        }
    }
    Ok(())
}

/// Velocity buffers for momentum SGD.
#[derive(Debug, Clone, Default)]
pub struct SgdState<T> {
    velocity: Vec<Vec<T>>,
}

/// `v = momentum * v + g; p -= lr * v`. With zero momentum this is `p -= lr * g`.
pub fn sgd_step<T: Scalar>(params: &mut [&mut [T]], grads: &[Vec<T>], state: &mut SgdState<T>, lr: T, momentum: T) -> Result<()> {
    check_shapes(params, grads)?;
    if momentum == T::zero() {
        for (p, g) in params.iter_mut().zip(grads) {
            for (pi, &gi) in p.iter_mut().zip(g) {
                *pi -= lr * gi;
            }
        }
        return Ok(());
    }
    if state.velocity.is_empty() {
        state.velocity = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((pi, &gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = momentum * *vi + gi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct AdamState<T> {
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

/// Adam with bias-corrected moment estimates.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
) -> Result<()> {
    check_shapes(params, grads)?;
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
        state.v = state.m.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = T::one() - beta1.powi(t);
    let c2 = T::one() - beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        for (((pi, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = beta1 * *mi + (T::one() - beta1) * gi;
            *vi = beta2 * *vi + (T::one() - beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// An optimizer kind bound to its state.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Sgd { lr: T, momentum: T, state: SgdState<T> },
    Adam { lr: T, beta1: T, beta2: T, eps: T, state: AdamState<T> },
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Sgd { momentum } => Optimizer::Sgd {
                lr: T::of(lr),
                momentum: T::of(momentum),
                state: SgdState::default(),
            },
            OptimizerKind::Adam { beta1, beta2, eps } => Optimizer::Adam {
                lr: T::of(lr),
                beta1: T::of(beta1),
                beta2: T::of(beta2),
                eps: T::of(eps),
                state: AdamState::default(),
            },
        }
    }

    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[Vec<T>]) -> Result<()> {
        match self {
            Optimizer::Sgd { lr, momentum, state } => sgd_step(params, grads, state, *lr, *momentum),
            Optimizer::Adam { lr, beta1, beta2, eps, state } => adam_step(params, grads, state, *lr, *beta1, *beta2, *eps),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub seed: u64,
    pub loss: LossSpec<T>,
    pub shuffle: bool,
}

impl<T: Scalar> TrainConfig<T> {
    /// SGD without momentum at lr 0.05, shuffled, dsc loss.
    pub fn new(epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            optimizer: OptimizerKind::sgd(0.0),
            lr: 0.05,
            seed,
            loss: LossSpec::dsc(),
            shuffle: true,
        }
    }

    pub fn with_optimizer(mut self, optimizer: OptimizerKind, lr: f64) -> Self {
        self.optimizer = optimizer;
        self.lr = lr;
        self
    }

    pub fn with_loss(mut self, loss: LossSpec<T>) -> Self {
        self.loss = loss;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_within_class_sq_dist: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// Records with the wall-clock field dropped; identical across reruns of
    /// the same configuration.
    pub fn deterministic_part(&self) -> Vec<(usize, f64, f64)> {
        self.records
            .iter()
            .map(|r| (r.epoch, r.mean_loss, r.mean_within_class_sq_dist))
            .collect()
    }

    /// One JSON object per line. Wall time is included only when requested.
    pub fn to_json_lines(&self, with_timings: bool) -> String {
        let mut out = String::new();
        for r in &self.records {
            let mut v = serde_json::json!({
                "epoch": r.epoch,
                "mean_loss": r.mean_loss,
                "mean_within_class_sq_dist": r.mean_within_class_sq_dist,
            });
            if with_timings {
                v["wall_secs"] = serde_json::json!(r.wall_secs);
            }
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }
}

/// Sample order for one epoch: identity, or a shuffle seeded by `seed ^ epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch as u64);
        order.shuffle(&mut rng);
    }
    order
}

/// The index batches `train` visits in `epoch` (0-based).
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<Vec<usize>> {
    epoch_order(n, seed, epoch, shuffle)
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

pub fn train<T: Scalar>(
    model: NetworkModel<T>,
    data: &LabeledDataset<T>,
    centers: &SimplexCenters<T>,
    config: &TrainConfig<T>,
    background: Option<&mut BackgroundStream<T>>,
) -> Result<(NetworkModel<T>, TrainLog)> {
    train_with_observer(model, data, centers, config, background, |_, _| Ok(()))
}

/// [`train`] with a callback after every epoch, e.g. for checkpointing.
pub fn train_with_observer<T: Scalar>(
    mut model: NetworkModel<T>,
    data: &LabeledDataset<T>,
    centers: &SimplexCenters<T>,
    config: &TrainConfig<T>,
    mut background: Option<&mut BackgroundStream<T>>,
    mut observer: impl FnMut(&EpochRecord, &NetworkModel<T>) -> Result<()>,
) -> Result<(NetworkModel<T>, TrainLog)> {
    validate_setup(&model, data, centers, config, background.as_deref())?;
    let loss = config.loss.with_defaults(centers.radius(), config.batch_size);
    let mut optimizer = Optimizer::<T>::new(config.optimizer, config.lr);
    let n = data.len();
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut dist_sum = 0.0;
        for (step, idx) in epoch_batches(n, config.batch_size, config.seed, epoch, config.shuffle)
            .into_iter()
            .enumerate()
        {
            let x = data.samples.select_rows(&idx);
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let bg_rows = background.as_deref_mut().map(|s| s.take_rows(idx.len()));
            let inputs = match &bg_rows {
                Some(bg) => x.vstack(bg)?,
                None => x,
            };

            let out = model.forward(&inputs)?;
            let (features, bg_features) = out.split_rows(idx.len());
            let mut batch = FeatureBatch::new(&features, &labels);
            if bg_rows.is_some() {
                batch = batch.with_background(&bg_features);
            }
            let lo = evaluate(&batch, centers, &loss)?;
            let value = lo.value.as_f64();
            if !value.is_finite() || !lo.feature_grad.is_finite() {
                return Err(DscError::Diverged {
                    epoch: epoch + 1,
                    step,
                    loss: value,
                });
            }
            loss_sum += value * idx.len() as f64;
            dist_sum += within_class_squared_distances(&features, &labels, centers)
                .into_iter()
                .map(Scalar::as_f64)
                .sum::<f64>();

            let out_grad = match lo.background_grad {
                Some(bg) => lo.feature_grad.vstack(&bg)?,
                None => lo.feature_grad,
            };
            let grads = model.backward(&out_grad)?;
            optimizer.step(&mut model.params_mut(), &grads.params)?;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            mean_loss: loss_sum / n as f64,
            mean_within_class_sq_dist: dist_sum / n as f64,
            wall_secs: started.elapsed().as_secs_f64(),
        };
        log.records.push(record);
        observer(&record, &model)?;
    }
    Ok((model, log))
}

fn validate_setup<T: Scalar>(
    model: &NetworkModel<T>,
    data: &LabeledDataset<T>,
    centers: &SimplexCenters<T>,
    config: &TrainConfig<T>,
    background: Option<&BackgroundStream<T>>,
) -> Result<()> {
    if config.epochs == 0 {
        return Err(DscError::Config("epochs must be positive".into()));
    }
    if config.batch_size == 0 || config.batch_size > data.len() {
        return Err(DscError::Config(format!(
            "batch size {} must be in [1, {}]",
            config.batch_size,
            data.len()
        )));
    }
    if !(config.lr >= 0.0) || !config.lr.is_finite() {
        return Err(DscError::Config(format!("learning rate must be finite and nonnegative, got {}", config.lr)));
    }
    if model.input_dim() != data.dim() {
        return Err(shape_err("model input vs data width", model.input_dim(), data.dim()));
    }
    if model.output_dim() != centers.dim() {
        return Err(shape_err("model output vs center dimension", centers.dim(), model.output_dim()));
    }
    if let Some(&label) = data.labels.iter().find(|&&y| y >= centers.num_classes()) {
        return Err(DscError::InvalidLabel {
            label,
            num_classes: centers.num_classes(),
        });
    }
    match (config.loss.kind == LossKind::DscBackground, background) {
        (true, None) => Err(DscError::Config("loss dsc_background requires a background source".into())),
        (false, Some(_)) => Err(DscError::Config("a background source is only used by loss dsc_background".into())),
        (true, Some(bg)) if bg.dim() != data.dim() => Err(shape_err("background width", data.dim(), bg.dim())),
        _ => Ok(()),
    }
}

/// Forward pass in chunks; avoids one huge activation matrix on large sets.
pub fn embed<T: Scalar>(model: &NetworkModel<T>, samples: &Matrix<T>, chunk: usize) -> Result<Matrix<T>> {
    let chunk = chunk.max(1);
    let mut out: Option<Matrix<T>> = None;
    let idx: Vec<usize> = (0..samples.rows()).collect();
    for part in idx.chunks(chunk) {
        let f = model.predict(&samples.select_rows(part))?;
        out = Some(match out {
            Some(acc) => acc.vstack(&f)?,
            None => f,
        });
    }
    Ok(out.unwrap_or_else(|| Matrix::zeros(0, model.output_dim())))
}
