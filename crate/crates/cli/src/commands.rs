use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dsc_core::datakit::{self, BackgroundStream, BlobSpec, LabelColumn, LabeledDataset, OpenSetSplit};
use dsc_core::evalkit::{self, EvalReport, TrialSummary};
use dsc_core::inference::{open_set_scores, predict_batch};
use dsc_core::io::{fmt_sig17, write_atomic};
use dsc_core::trainer::{embed, train_with_observer};
use dsc_core::{build_centers, DscError, Matrix, NetworkModel, Scalar, SimplexCenters};

use crate::config::{BackgroundConfig, DataConfig, RunConfig};

const EMBED_CHUNK: usize = 1024;

pub fn simplex(classes: usize, dim: usize, radius: f64, out: Option<&Path>) -> Result<()> {
    let centers = build_centers::<f64>(classes, dim, radius)?;
    let mut csv = String::new();
    for row in centers.matrix().iter_rows() {
        let cells: Vec<String> = row.iter().map(|&x| fmt_sig17(x)).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    emit(out, &csv)
}

pub fn gen_data(spec: &BlobSpec, out: &Path) -> Result<()> {
    let data = datakit::gen_blobs::<f64>(spec)?;
    data.save_csv(out).with_context(|| format!("writing {}", out.display()))?;
    log::info!("wrote {} samples to {}", data.len(), out.display());
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Open-set pool: the training data, plus any separate test data marked as test partition.
struct Pool<T> {
    data: LabeledDataset<T>,
    is_test: Option<Vec<bool>>,
}

impl<T: Scalar> Pool<T> {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let loaded = cfg.load_data::<T>()?;
        Ok(match loaded.test {
            Some(test) => {
                let mut is_test = vec![false; loaded.train.len()];
                is_test.extend(std::iter::repeat_n(true, test.len()));
                Pool {
                    data: loaded.train.concat(&test)?,
                    is_test: Some(is_test),
                }
            }
            None => Pool {
                data: loaded.train,
                is_test: None,
            },
        })
    }

    fn split(&self, cfg: &RunConfig, trial_seed: u64) -> Result<OpenSetSplit> {
        let k = cfg.num_classes(self.data.num_classes())?;
        Ok(match &self.is_test {
            Some(mask) => datakit::make_open_split_with_partition(&self.data, mask, k, trial_seed)?,
            None => datakit::make_open_split_with_fraction(&self.data, k, trial_seed, cfg.eval.test_fraction)?,
        })
    }
}

fn background<T: Scalar>(cfg: &RunConfig, dim: usize, seed: u64) -> Result<Option<BackgroundStream<T>>> {
    let batch = cfg.train.batch_size;
    let bg_seed = seed ^ 0x0062_6b67;
    Ok(match &cfg.background {
        None => None,
        Some(BackgroundConfig::Blobs { anchors, sigma, per_pass }) => {
            let means = anchors
                .iter()
                .map(|&a| datakit::blob_anchor::<f64>(a, dim, *sigma))
                .collect::<dsc_core::Result<Vec<_>>>()?;
            Some(BackgroundStream::from_gaussians(means, *sigma, *per_pass, batch, bg_seed)?)
        }
        Some(BackgroundConfig::Csv { path, label_column }) => {
            let col = label_column.clone().unwrap_or(LabelColumn::LAST);
            let rows = datakit::load_csv::<T>(path, &col).with_context(|| format!("loading {}", path.display()))?;
            Some(BackgroundStream::from_rows(rows.samples, batch, bg_seed)?)
        }
    })
}

fn build_model<T: Scalar>(cfg: &RunConfig, input_dim: usize, classes: usize, seed: u64) -> Result<NetworkModel<T>> {
    let mut model = NetworkModel::<T>::mlp(&cfg.widths(input_dim, classes), seed)?;
    if cfg.model.dam {
        model = model.attach_dam_with(classes, cfg.model.dam_activation);
    }
    Ok(model)
}

fn expected_output_dim(cfg: &RunConfig, input_dim: usize, classes: usize) -> usize {
    if cfg.model.dam {
        classes.saturating_sub(1)
    } else {
        *cfg.widths(input_dim, classes).last().expect("nonempty widths")
    }
}

fn centers_for<T: Scalar>(cfg: &RunConfig, classes: usize, dim: usize) -> Result<SimplexCenters<T>> {
    Ok(build_centers::<T>(classes, dim, T::of(cfg.simplex.u))?)
}

fn accuracy<T: Scalar>(model: &NetworkModel<T>, data: &LabeledDataset<T>, centers: &SimplexCenters<T>) -> Result<f64> {
    let features = embed(model, &data.samples, EMBED_CHUNK)?;
    let labels: Vec<_> = predict_batch(&features, centers)?.iter().map(|p| p.label).collect();
    Ok(evalkit::closed_set_accuracy(&labels, &data.labels)?)
}

pub struct TrainArgs<'a> {
    pub seed: u64,
    pub out_dir: &'a Path,
    pub timings: bool,
}

pub fn train<T: Scalar>(cfg: &RunConfig, args: &TrainArgs<'_>) -> Result<()> {
    let effective = serde_json::to_string_pretty(cfg)? + "\n";
    write_atomic(&args.out_dir.join("run_config.json"), effective.as_bytes())?;
    if !cfg.eval.open_set {
        let data = cfg.load_data::<T>()?.train;
        let classes = cfg.num_classes(data.num_classes())?;
        let acc = train_one(cfg, &data, classes, args.seed, args.out_dir, args.timings)?;
        println!("{}", acc.line());
        return Ok(());
    }
    let pool = Pool::<T>::new(cfg)?;
    for k in 0..cfg.eval.trials {
        let trial_seed = args.seed.wrapping_add(k as u64);
        let split = pool.split(cfg, trial_seed)?;
        let dir = args.out_dir.join(format!("trial_{k}"));
        split.save(dir.join("split.json"))?;
        let data = split.train_set(&pool.data)?;
        let result = train_one(cfg, &data, split.known_class_ids.len(), trial_seed, &dir, args.timings)?;
        println!("trial {k} {}", result.line());
    }
    Ok(())
}

struct Finish {
    epoch: usize,
    loss: f64,
    accuracy: f64,
}

impl Finish {
    fn line(&self) -> String {
        format!(
            "epoch {} loss {} train_accuracy {}",
            self.epoch,
            fmt_sig17(self.loss),
            fmt_sig17(self.accuracy)
        )
    }
}

fn train_one<T: Scalar>(
    cfg: &RunConfig,
    data: &LabeledDataset<T>,
    classes: usize,
    seed: u64,
    dir: &Path,
    timings: bool,
) -> Result<Finish> {
    let model = build_model::<T>(cfg, data.dim(), classes, seed)?;
    let centers = centers_for::<T>(cfg, classes, model.output_dim())?;
    let tc = cfg.train_config::<T>(seed);
    let mut bg = background::<T>(cfg, data.dim(), seed)?;
    let every = cfg.train.checkpoint_every;
    let (model, log) = train_with_observer(model, data, &centers, &tc, bg.as_mut(), |rec, m| {
        if let Some(k) = every {
            if rec.epoch % k == 0 {
                m.save(dir.join("checkpoints").join(format!("epoch_{:04}.json", rec.epoch)))?;
            }
        }
        log::debug!("epoch {} loss {}", rec.epoch, rec.mean_loss);
        Ok(())
    })?;
    model.save(dir.join("model.json"))?;
    write_atomic(&dir.join("train_log.jsonl"), log.to_json_lines(timings).as_bytes())?;
    let last = log.records.last().expect("at least one epoch");
    Ok(Finish {
        epoch: last.epoch,
        loss: last.mean_loss,
        accuracy: accuracy(&model, data, &centers)?,
    })
}

fn load_model<T: Scalar>(cfg: &RunConfig, path: &Path, input_dim: usize, classes: usize) -> Result<NetworkModel<T>> {
    let model = NetworkModel::<T>::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if model.input_dim() != input_dim {
        return Err(DscError::Shape {
            context: format!("checkpoint {} input width vs data", path.display()),
            expected: input_dim,
            actual: model.input_dim(),
        }
        .into());
    }
    let want = expected_output_dim(cfg, input_dim, classes);
    if model.output_dim() != want {
        return Err(DscError::Shape {
            context: format!("checkpoint {} output width vs config", path.display()),
            expected: want,
            actual: model.output_dim(),
        }
        .into());
    }
    Ok(model)
}

pub struct EvalArgs<'a> {
    pub seed: u64,
    pub checkpoints: &'a [PathBuf],
    pub out: Option<&'a Path>,
    pub distance_csv: Option<&'a Path>,
}

pub fn eval<T: Scalar>(cfg: &RunConfig, args: &EvalArgs<'_>) -> Result<()> {
    let report = if cfg.eval.open_set {
        eval_open::<T>(cfg, args)?
    } else {
        eval_closed::<T>(cfg, args)?
    };
    if let (Some(p), Some(m)) = (args.distance_csv, &report.center_distance_matrix) {
        write_atomic(p, m.to_csv().as_bytes())?;
    }
    emit(args.out, &(serde_json::to_string_pretty(&report)? + "\n"))
}

fn eval_closed<T: Scalar>(cfg: &RunConfig, args: &EvalArgs<'_>) -> Result<EvalReport> {
    let [checkpoint] = args.checkpoints else {
        bail!(DscError::Config(format!(
            "closed-set evaluation takes one checkpoint, got {}",
            args.checkpoints.len()
        )));
    };
    let loaded = cfg.load_data::<T>()?;
    let classes = cfg.num_classes(loaded.train.num_classes())?;
    let data = loaded.test.unwrap_or(loaded.train);
    let model = load_model::<T>(cfg, checkpoint, data.dim(), classes)?;
    let centers = centers_for::<T>(cfg, classes, model.output_dim())?;
    let features = embed(&model, &data.samples, EMBED_CHUNK)?;
    let labels: Vec<_> = predict_batch(&features, &centers)?.iter().map(|p| p.label).collect();
    Ok(EvalReport {
        closed_accuracy: evalkit::closed_set_accuracy(&labels, &data.labels)?,
        auc: None,
        auc_orientation: None,
        per_class_scatter: evalkit::scatter_stats(&features, &data.labels, &centers)?,
        center_distance_matrix: Some(evalkit::center_distance_matrix(&features, &data.labels)?),
        trials: None,
    })
}

fn eval_open<T: Scalar>(cfg: &RunConfig, args: &EvalArgs<'_>) -> Result<EvalReport> {
    if args.checkpoints.len() != cfg.eval.trials {
        bail!(DscError::Config(format!(
            "open-set evaluation takes one checkpoint per trial: {} trials, {} checkpoints",
            cfg.eval.trials,
            args.checkpoints.len()
        )));
    }
    let pool = Pool::<T>::new(cfg)?;
    let mut aucs = Vec::new();
    let mut accuracies = Vec::new();
    let mut scatter = Vec::new();
    let mut matrix = None;
    for (k, checkpoint) in args.checkpoints.iter().enumerate() {
        let split = pool.split(cfg, args.seed.wrapping_add(k as u64))?;
        let classes = split.known_class_ids.len();
        let model = load_model::<T>(cfg, checkpoint, pool.data.dim(), classes)?;
        let centers = centers_for::<T>(cfg, classes, model.output_dim())?;
        let test = split.test_set(&pool.data);
        let features = embed(&model, &test.samples, EMBED_CHUNK)?;
        let scores = open_set_scores(&features, &centers)?;
        let (mut known, mut unknown) = (Vec::new(), Vec::new());
        for (s, l) in scores.iter().zip(&test.known_labels) {
            if l.is_some() { known.push(*s) } else { unknown.push(*s) }
        }
        aucs.push(evalkit::auc_roc(&known, &unknown)?);

        let known_rows: Vec<usize> = (0..test.known_labels.len()).filter(|&i| test.known_labels[i].is_some()).collect();
        let known_truth: Vec<usize> = known_rows.iter().filter_map(|&i| test.known_labels[i]).collect();
        let known_features: Matrix<T> = features.select_rows(&known_rows);
        let predicted: Vec<_> = predict_batch(&known_features, &centers)?.iter().map(|p| p.label).collect();
        accuracies.push(evalkit::closed_set_accuracy(&predicted, &known_truth)?);
        if k == 0 {
            scatter = evalkit::scatter_stats(&known_features, &known_truth, &centers)?;
            let original: Vec<usize> = split.test_indices.iter().map(|&i| pool.data.labels[i]).collect();
            matrix = Some(evalkit::center_distance_matrix(&features, &original)?);
        }
    }
    let summary = TrialSummary::new(aucs, accuracies);
    Ok(EvalReport {
        closed_accuracy: evalkit::mean_std(&summary.closed_accuracies).0,
        auc: Some(summary.auc_mean),
        auc_orientation: Some(evalkit::AUC_ORIENTATION.to_string()),
        per_class_scatter: scatter,
        center_distance_matrix: matrix,
        trials: Some(summary),
    })
}

pub struct EmbedArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: Option<&'a Path>,
    pub out: Option<&'a Path>,
}

pub fn embed_cmd<T: Scalar>(cfg: &RunConfig, args: &EmbedArgs<'_>) -> Result<()> {
    let loaded = cfg.load_data::<T>()?;
    let classes = cfg.num_classes(loaded.train.num_classes())?;
    let data = match args.data {
        Some(p) => {
            let col = match &cfg.data {
                DataConfig::Csv { label_column: Some(c), .. } => c.clone(),
                _ => LabelColumn::LAST,
            };
            datakit::load_csv::<T>(p, &col).with_context(|| format!("loading {}", p.display()))?
        }
        None => loaded.test.unwrap_or(loaded.train),
    };
    let model = load_model::<T>(cfg, args.checkpoint, data.dim(), classes)?;
    let centers = centers_for::<T>(cfg, classes, model.output_dim())?;
    let features = embed(&model, &data.samples, EMBED_CHUNK)?;
    let predictions = predict_batch(&features, &centers)?;

    let mut csv = String::new();
    for j in 0..features.cols() {
        write!(csv, "f{j},")?;
    }
    csv.push_str("predicted,euclid_score,label\n");
    for ((row, p), &y) in features.iter_rows().zip(&predictions).zip(&data.labels) {
        for x in row {
            csv.push_str(&fmt_sig17(x.as_f64()));
            csv.push(',');
        }
        let predicted = p.label.class().map_or_else(|| "reject".to_string(), |c| c.to_string());
        writeln!(csv, "{predicted},{},{y}", fmt_sig17(p.euclid_score.as_f64()))?;
    }
    emit(args.out, &csv)
}
