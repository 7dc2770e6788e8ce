//! Training fixtures shared by the trainer tests and the acceptance suite.

use dsc_core::datakit::{blob_anchor, gen_blobs, make_open_split, BackgroundStream, BlobSpec, LabeledDataset};
use dsc_core::evalkit::{auc_roc, closed_set_accuracy, scatter_stats};
use dsc_core::inference::{open_set_scores, predict_batch};
use dsc_core::trainer::{embed, train};
use dsc_core::{build_centers, Centers, Dataset, LossKind, LossSpec, Model, OptimizerKind, TrainConfig};

pub fn accuracy(model: &Model, data: &Dataset, centers: &Centers) -> f64 {
    let f = embed(model, &data.samples, 4096).unwrap();
    let labels: Vec<_> = predict_batch(&f, centers).unwrap().iter().map(|p| p.label).collect();
    closed_set_accuracy(&labels, &data.labels).unwrap()
}

pub fn scatter(model: &Model, data: &Dataset, centers: &Centers) -> Vec<f64> {
    let f = embed(model, &data.samples, 4096).unwrap();
    scatter_stats(&f, &data.labels, centers).unwrap().into_iter().map(|s| s.unwrap()).collect()
}

pub struct OpenSetSetup {
    pub hidden: usize,
    pub feature_dim: usize,
    pub radius: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

pub const OPEN_SET: OpenSetSetup = OpenSetSetup {
    hidden: 64,
    feature_dim: 8,
    radius: 64.0,
    epochs: 15,
    batch_size: 32,
    lr: 1e-3,
};

pub struct TrialResult {
    pub auc: f64,
    pub closed_accuracy: f64,
}

/// Background blobs at anchors past the ones used by the dataset's classes.
pub fn background_source(dim: usize, first: usize, count: usize, sigma: f64, batch: usize, seed: u64) -> BackgroundStream<f64> {
    let means = (first..first + count).map(|i| blob_anchor::<f64>(i, dim, sigma).unwrap()).collect();
    BackgroundStream::from_gaussians(means, sigma, 1000, batch, seed).unwrap()
}

pub fn open_set_trial(data: &LabeledDataset<f64>, num_known: usize, trial_seed: u64, setup: &OpenSetSetup, kind: LossKind) -> TrialResult {
    let bg = background_source(data.dim(), data.num_classes(), 10, 1.0, setup.batch_size, trial_seed);
    open_set_trial_with(data, num_known, trial_seed, setup, kind, bg)
}

pub fn open_set_trial_with(
    data: &LabeledDataset<f64>,
    num_known: usize,
    trial_seed: u64,
    setup: &OpenSetSetup,
    kind: LossKind,
    mut bg: BackgroundStream<f64>,
) -> TrialResult {
    let split = make_open_split(data, num_known, trial_seed).unwrap();
    let train_set = split.train_set(data).unwrap();
    let test = split.test_set(data);
    let centers = build_centers::<f64>(num_known, setup.feature_dim, setup.radius).unwrap();
    let model = Model::mlp(&[data.dim(), setup.hidden, setup.feature_dim], trial_seed).unwrap();
    let loss = match kind {
        LossKind::DscBackground => LossSpec::background(setup.radius / 2.0, 1.0 / (2.0 * (setup.batch_size * setup.batch_size) as f64)),
        _ => LossSpec::dsc(),
    };
    let config = TrainConfig::new(setup.epochs, setup.batch_size, trial_seed)
        .with_optimizer(OptimizerKind::adam(), setup.lr)
        .with_loss(loss);
    let bg = (kind == LossKind::DscBackground).then_some(&mut bg);
    let (model, _) = train(model, &train_set, &centers, &config, bg).unwrap();

    let f = embed(&model, &test.samples, 4096).unwrap();
    let scores = open_set_scores(&f, &centers).unwrap();
    let preds = predict_batch(&f, &centers).unwrap();
    let (mut known, mut unknown) = (Vec::new(), Vec::new());
    let (mut pk, mut tk) = (Vec::new(), Vec::new());
    for (i, k) in test.known_labels.iter().enumerate() {
        match k {
            Some(y) => {
                known.push(scores[i]);
                pk.push(preds[i].label);
                tk.push(*y);
            }
            None => unknown.push(scores[i]),
        }
    }
    TrialResult {
        auc: auc_roc(&known, &unknown).unwrap(),
        closed_accuracy: closed_set_accuracy(&pk, &tk).unwrap(),
    }
}

pub fn ten_blobs(seed: u64) -> Dataset {
    gen_blobs(&BlobSpec::new(10, 32, 200, 1.0, seed)).unwrap()
}
