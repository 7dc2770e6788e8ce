//! Run configuration: one JSON document per run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dsc_core::datakit::{self, BlobSpec, LabelColumn, LabeledDataset};
use dsc_core::{DscError, LossKind, LossSpec, OptimizerKind, Scalar, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<BackgroundConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub simplex: SimplexConfig,
    #[serde(default)]
    pub loss: LossConfig,
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub precision: Precision,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// A single count or one per class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Counts {
    Shared(usize),
    PerClass(Vec<usize>),
}

impl Counts {
    fn to_vec(&self) -> Vec<usize> {
        match self {
            Counts::Shared(n) => vec![*n],
            Counts::PerClass(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Blobs {
        num_classes: usize,
        dim: usize,
        samples_per_class: Counts,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default)]
        seed: u64,
        /// Also draw a separate test set from the same blobs with this seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_samples_per_class: Option<Counts>,
    },
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label_column: Option<LabelColumn>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackgroundConfig {
    /// Gaussians at the blob anchors with these indices.
    Blobs {
        anchors: Vec<usize>,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "default_per_pass")]
        per_pass: usize,
    },
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label_column: Option<LabelColumn>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub hidden: Vec<usize>,
    /// Width of the last dense layer; defaults to `classes - 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    #[serde(default)]
    pub dam: bool,
    #[serde(default = "yes")]
    pub dam_activation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimplexConfig {
    #[serde(default = "default_radius")]
    pub u: f64,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        Self { u: default_radius() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Dsc,
            m: None,
            lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    /// 0.05 for SGD, 1e-3 for Adam when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub shuffle: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default)]
    pub open_set: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_known: Option<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            open_set: false,
            num_known: None,
            trials: default_trials(),
            test_fraction: default_test_fraction(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_per_pass() -> usize {
    1000
}
fn default_radius() -> f64 {
    dsc_core::simplex::DEFAULT_RADIUS
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::sgd(0.0)
}
fn default_trials() -> usize {
    5
}
fn default_test_fraction() -> f64 {
    datakit::DEFAULT_TEST_FRACTION
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    DscError::Config(msg.into()).into()
}

/// Loaded data: the training pool and an optional separate test pool.
pub struct Data<T> {
    pub train: LabeledDataset<T>,
    pub test: Option<LabeledDataset<T>>,
}

impl RunConfig {
    /// Parses and validates; relative paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(DscError::from)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.data {
            DataConfig::Blobs { .. } => {}
            DataConfig::Csv { path, test_path, .. } => {
                fix(path);
                test_path.iter_mut().for_each(fix);
            }
            DataConfig::Idx {
                images,
                labels,
                test_images,
                test_labels,
            } => {
                fix(images);
                fix(labels);
                test_images.iter_mut().for_each(fix);
                test_labels.iter_mut().for_each(fix);
            }
        }
        if let Some(BackgroundConfig::Csv { path, .. }) = &mut self.background {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.epochs == 0 {
            bail!(config_err("train.epochs must be positive"));
        }
        if t.batch_size == 0 {
            bail!(config_err("train.batch_size must be positive"));
        }
        if t.checkpoint_every == Some(0) {
            bail!(config_err("train.checkpoint_every must be positive"));
        }
        if !(self.simplex.u > 0.0) || !self.simplex.u.is_finite() {
            bail!(config_err(format!("simplex.u must be positive, got {}", self.simplex.u)));
        }
        let l = &self.loss;
        match l.kind {
            LossKind::Dsc | LossKind::FixedSoftmax if l.m.is_some() || l.lambda.is_some() => {
                bail!(config_err(format!("loss kind {:?} takes no m or lambda", l.kind)))
            }
            LossKind::Hinge if l.m.is_none() => bail!(config_err("loss kind hinge requires m")),
            LossKind::Hinge if l.lambda.is_some() => bail!(config_err("loss kind hinge takes no lambda")),
            _ => {}
        }
        match (l.kind.uses_background(), &self.background) {
            (true, None) => bail!(config_err("loss kind dsc_background requires a background section")),
            (false, Some(_)) => bail!(config_err("a background section is only used by loss kind dsc_background")),
            _ => {}
        }
        if let DataConfig::Idx {
            test_images, test_labels, ..
        } = &self.data
        {
            if test_images.is_some() != test_labels.is_some() {
                bail!(config_err("data.test_images and data.test_labels go together"));
            }
        }
        if let DataConfig::Blobs {
            test_seed,
            test_samples_per_class,
            ..
        } = &self.data
        {
            if test_samples_per_class.is_some() && test_seed.is_none() {
                bail!(config_err("data.test_samples_per_class needs data.test_seed"));
            }
        }
        let e = &self.eval;
        if e.open_set {
            if e.num_known.is_none() {
                bail!(config_err("eval.open_set requires eval.num_known"));
            }
            if e.trials == 0 {
                bail!(config_err("eval.trials must be positive"));
            }
            if !(e.test_fraction > 0.0 && e.test_fraction < 1.0) {
                bail!(config_err(format!("eval.test_fraction must be in (0, 1), got {}", e.test_fraction)));
            }
        }
        Ok(())
    }

    pub fn load_data<T: Scalar>(&self) -> Result<Data<T>> {
        let last = LabelColumn::LAST;
        let data = match &self.data {
            DataConfig::Blobs {
                num_classes,
                dim,
                samples_per_class,
                sigma,
                seed,
                test_seed,
                test_samples_per_class,
            } => {
                let spec = BlobSpec::new(*num_classes, *dim, 0, *sigma, *seed).with_counts(samples_per_class.to_vec());
                let test = test_seed
                    .map(|s| {
                        let counts = test_samples_per_class.as_ref().unwrap_or(samples_per_class);
                        datakit::gen_blobs(&spec.clone().with_counts(counts.to_vec()).with_seed(s))
                    })
                    .transpose()?;
                Data {
                    train: datakit::gen_blobs(&spec)?,
                    test,
                }
            }
            DataConfig::Csv {
                path,
                test_path,
                label_column,
            } => {
                let col = label_column.as_ref().unwrap_or(&last);
                Data {
                    train: datakit::load_csv(path, col).with_context(|| format!("loading {}", path.display()))?,
                    test: test_path
                        .as_ref()
                        .map(|p| datakit::load_csv(p, col).with_context(|| format!("loading {}", p.display())))
                        .transpose()?,
                }
            }
            DataConfig::Idx {
                images,
                labels,
                test_images,
                test_labels,
            } => Data {
                train: datakit::load_idx(images, labels)?,
                test: match (test_images, test_labels) {
                    (Some(i), Some(l)) => Some(datakit::load_idx(i, l)?),
                    _ => None,
                },
            },
        };
        if let Some(test) = &data.test {
            if test.dim() != data.train.dim() {
                bail!(config_err(format!(
                    "test data has {} features, training data {}",
                    test.dim(),
                    data.train.dim()
                )));
            }
        }
        Ok(data)
    }

    /// Number of classes the simplex is built for.
    pub fn num_classes(&self, train_classes: usize) -> Result<usize> {
        if !self.eval.open_set {
            return Ok(train_classes);
        }
        let k = self.eval.num_known.unwrap_or(0);
        if k == 0 || k >= train_classes {
            bail!(config_err(format!("eval.num_known must be in [1, {train_classes}), got {k}")));
        }
        Ok(k)
    }

    /// Layer widths before any DAM block.
    pub fn widths(&self, input_dim: usize, classes: usize) -> Vec<usize> {
        let feature = self.model.feature_dim.unwrap_or(classes.saturating_sub(1).max(1));
        std::iter::once(input_dim)
            .chain(self.model.hidden.iter().copied())
            .chain(std::iter::once(feature))
            .collect()
    }

    pub fn train_config<T: Scalar>(&self, seed: u64) -> TrainConfig<T> {
        let t = &self.train;
        let lr = t.lr.unwrap_or(match t.optimizer {
            OptimizerKind::Sgd { .. } => 0.05,
            OptimizerKind::Adam { .. } => 1e-3,
        });
        let loss = LossSpec {
            kind: self.loss.kind,
            margin: self.loss.m.map(T::of),
            lambda: self.loss.lambda.map(T::of),
        };
        let mut cfg = TrainConfig::new(t.epochs, t.batch_size, seed)
            .with_optimizer(t.optimizer, lr)
            .with_loss(loss);
        cfg.shuffle = t.shuffle;
        cfg
    }
}
