//! Datasets: synthetic Gaussian blobs, IDX and CSV loaders, known/unknown
//! class splits and cycling background streams.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DscError, Result};
use crate::io::{fmt_sig17, write_atomic};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Distance between blob anchors in units of the spread.
pub const ANCHOR_SEPARATION: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    pub samples: Matrix<T>,
    /// Dense ids in `[0, num_classes)`.
    pub labels: Vec<usize>,
    /// Original label text for each dense id, when labels were remapped.
    pub class_names: Option<Vec<String>>,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(samples: Matrix<T>, labels: Vec<usize>) -> Result<Self> {
        if samples.rows() != labels.len() {
            return Err(DscError::InvalidArgument(format!(
                "{} samples but {} labels",
                samples.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(DscError::InvalidArgument("dataset is empty".into()));
        }
        Ok(Self {
            samples,
            labels,
            class_names: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// `max label + 1`.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: self.samples.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Concatenates two datasets over the same label space.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        let samples = self.samples.vstack(&other.samples)?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Self {
            samples,
            labels,
            class_names: self.class_names.clone(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> LabeledDataset<U> {
        LabeledDataset {
            samples: self.samples.cast(),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Writes `features..., label` rows with a header line.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        let header: Vec<String> = (0..self.dim())
            .map(|j| format!("x{j}"))
            .chain(std::iter::once("label".to_string()))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for (row, &y) in self.samples.iter_rows().zip(&self.labels) {
            for x in row {
                out.push_str(&fmt_sig17(x.as_f64()));
                out.push(',');
            }
            match &self.class_names {
                Some(names) => out.push_str(&names[y]),
                None => out.push_str(&y.to_string()),
            }
            out.push('\n');
        }
        write_atomic(path.as_ref(), out.as_bytes())
    }
}

/// Anchor of blob `index`: `+a e_index` for `index < dim`, `-a e_{index-dim}`
/// below `2 dim`, with `a = ANCHOR_SEPARATION * sigma / sqrt 2`. Distinct
/// anchors are at least `ANCHOR_SEPARATION * sigma` apart.
pub fn blob_anchor<T: Scalar>(index: usize, dim: usize, sigma: T) -> Result<Vec<T>> {
    if index >= 2 * dim {
        return Err(DscError::InvalidArgument(format!(
            "cannot place blob {index} with separation {ANCHOR_SEPARATION} sigma in {dim} dimensions (at most {} blobs)",
            2 * dim
        )));
    }
    let a = T::of(ANCHOR_SEPARATION / std::f64::consts::SQRT_2) * sigma;
    let mut v = vec![T::zero(); dim];
    if index < dim {
        v[index] = a;
    } else {
        v[index - dim] = -a;
    }
    Ok(v)
}

/// Isotropic Gaussian blobs around fixed anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub dim: usize,
    /// One count for every class, or a single count shared by all.
    pub samples_per_class: Vec<usize>,
    pub sigma: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn new(num_classes: usize, dim: usize, samples_per_class: usize, sigma: f64, seed: u64) -> Self {
        Self {
            num_classes,
            dim,
            samples_per_class: vec![samples_per_class],
            sigma,
            seed,
        }
    }

    pub fn with_counts(mut self, counts: Vec<usize>) -> Self {
        self.samples_per_class = counts;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn counts(&self) -> Result<Vec<usize>> {
        match self.samples_per_class.len() {
            1 => Ok(vec![self.samples_per_class[0]; self.num_classes]),
            n if n == self.num_classes => Ok(self.samples_per_class.clone()),
            n => Err(DscError::InvalidArgument(format!(
                "{n} per-class counts for {} classes",
                self.num_classes
            ))),
        }
    }
}

pub fn gen_blobs<T: Scalar>(spec: &BlobSpec) -> Result<LabeledDataset<T>> {
    if !(spec.sigma > 0.0) || !spec.sigma.is_finite() {
        return Err(DscError::InvalidArgument(format!(
            "sigma must be positive, got {}",
            spec.sigma
        )));
    }
    if spec.num_classes == 0 || spec.dim == 0 {
        return Err(DscError::InvalidArgument("blobs need classes and dimensions".into()));
    }
    let counts = spec.counts()?;
    let anchors = (0..spec.num_classes)
        .map(|c| blob_anchor::<f64>(c, spec.dim, spec.sigma))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total: usize = counts.iter().sum();
    let mut data = Vec::with_capacity(total * spec.dim);
    let mut labels = Vec::with_capacity(total);
    for (c, (&count, anchor)) in counts.iter().zip(&anchors).enumerate() {
        for _ in 0..count {
            data.extend(sample_gaussian::<T>(&mut rng, anchor, spec.sigma));
            labels.push(c);
        }
    }
    let samples = Matrix::from_vec(total, spec.dim, data)?;
    LabeledDataset::new(samples, labels)
}

fn sample_gaussian<'a, T: Scalar>(
    rng: &'a mut ChaCha8Rng,
    mean: &'a [f64],
    sigma: f64,
) -> impl Iterator<Item = T> + 'a {
    mean.iter().map(move |&m| {
        let z: f64 = StandardNormal.sample(rng);
        T::of(m + sigma * z)
    })
}

/// Known blobs plus probe blobs planted next to designated known blobs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFixture<T> {
    /// Labels `[0, num_known)` are known classes; `num_known + p` is probe `p`.
    pub data: LabeledDataset<T>,
    pub num_known: usize,
    /// `neighbors[p]` is the known class probe `p` was planted beside.
    pub neighbors: Vec<usize>,
}

/// Probe `p` is centered at `anchor(neighbors[p]) + offset * sigma * e_{num_known + p}`.
/// Neighbors are distinct known classes drawn from `seed`.
pub fn gen_probe_fixture<T: Scalar>(
    num_known: usize,
    num_probe: usize,
    dim: usize,
    samples_per_class: usize,
    sigma: f64,
    offset: f64,
    seed: u64,
) -> Result<ProbeFixture<T>> {
    if num_probe > num_known {
        return Err(DscError::InvalidArgument(format!(
            "{num_probe} probes need at least as many known classes, got {num_known}"
        )));
    }
    if dim < num_known + num_probe {
        return Err(DscError::InvalidArgument(format!(
            "dimension {dim} too small for {num_known} known and {num_probe} probe blobs"
        )));
    }
    let known = gen_blobs::<T>(&BlobSpec::new(num_known, dim, samples_per_class, sigma, seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_9a0b);
    let mut pool: Vec<usize> = (0..num_known).collect();
    pool.shuffle(&mut rng);
    let neighbors: Vec<usize> = pool[..num_probe].to_vec();

    let mut data = known.samples.into_vec();
    let mut labels = known.labels;
    for (p, &nb) in neighbors.iter().enumerate() {
        let mut center = blob_anchor::<f64>(nb, dim, sigma)?;
        center[num_known + p] += offset * sigma;
        for _ in 0..samples_per_class {
            data.extend(sample_gaussian::<T>(&mut rng, &center, sigma));
            labels.push(num_known + p);
        }
    }
    let samples = Matrix::from_vec(labels.len(), dim, data)?;
    Ok(ProbeFixture {
        data: LabeledDataset::new(samples, labels)?,
        num_known,
        neighbors,
    })
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DscError::Format {
            offset: bytes.len() as u64,
            message: format!("truncated header, expected 4 bytes at offset {offset}"),
        })
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DscError::Format {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(DscError::Format {
            offset: bytes.len() as u64,
            message: format!("truncated image data, expected {need} bytes"),
        });
    }
    Ok((n, rows, cols, &bytes[16..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DscError::Format {
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n = read_u32(bytes, 4)? as usize;
    if bytes.len() < 8 + n {
        return Err(DscError::Format {
            offset: bytes.len() as u64,
            message: format!("truncated label data, expected {} bytes", 8 + n),
        });
    }
    Ok(&bytes[8..8 + n])
}

/// Loads IDX images and labels; pixels scaled to `[0, 1]`, images flattened row-major.
pub fn load_idx<T: Scalar>(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset<T>> {
    let img_bytes = fs::read(images_path)?;
    let lbl_bytes = fs::read(labels_path)?;
    let (n, rows, cols, pixels) = parse_idx_images(&img_bytes)?;
    let raw_labels = parse_idx_labels(&lbl_bytes)?;
    if raw_labels.len() != n {
        return Err(DscError::Format {
            offset: 4,
            message: format!("{n} images but {} labels", raw_labels.len()),
        });
    }
    let data: Vec<T> = pixels.iter().map(|&p| T::of(p as f64 / 255.0)).collect();
    let samples = Matrix::from_vec(n, rows * cols, data)?;
    LabeledDataset::new(samples, raw_labels.iter().map(|&l| l as usize).collect())
}

pub fn write_idx_images(path: impl AsRef<Path>, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let per = rows * cols;
    if per == 0 || !pixels.len().is_multiple_of(per) {
        return Err(DscError::InvalidArgument(format!(
            "{} pixels do not tile {rows}x{cols} images",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&((pixels.len() / per) as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    write_atomic(path.as_ref(), &out)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    write_atomic(path.as_ref(), &out)
}

/// Which CSV column holds the label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl LabelColumn {
    /// Last column.
    pub const LAST: LabelColumn = LabelColumn::Index(usize::MAX);
}

/// Reads a numeric CSV. A first row whose feature cells are not all numeric
/// is treated as a header. Labels are remapped to dense ids in sorted order
/// (numeric when every label parses as a number); the original text is kept
/// in `class_names`.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, label_column: &LabelColumn) -> Result<LabeledDataset<T>> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, label_column)
}

pub fn parse_csv<T: Scalar>(text: &str, label_column: &LabelColumn) -> Result<LabeledDataset<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| DscError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        let line = rec.position().map_or(0, |p| p.line());
        records.push((line, rec));
    }
    let Some((first_line, first)) = records.first() else {
        return Err(DscError::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    };
    let width = first.len();
    if width < 2 {
        return Err(DscError::Parse {
            line: *first_line,
            message: "need at least one feature column and a label column".into(),
        });
    }

    let label_idx_for = |header: Option<&csv::StringRecord>| -> Result<usize> {
        match label_column {
            LabelColumn::Index(i) if *i == usize::MAX => Ok(width - 1),
            LabelColumn::Index(i) if *i < width => Ok(*i),
            LabelColumn::Index(i) => Err(DscError::Parse {
                line: *first_line,
                message: format!("label column {i} out of range for {width} columns"),
            }),
            LabelColumn::Name(name) => header
                .and_then(|h| h.iter().position(|c| c == name))
                .ok_or_else(|| DscError::Parse {
                    line: *first_line,
                    message: format!("label column {name:?} not found in header"),
                }),
        }
    };

    let looks_numeric = |rec: &csv::StringRecord, skip: usize| {
        rec.iter()
            .enumerate()
            .filter(|&(j, _)| j != skip)
            .all(|(_, c)| c.parse::<f64>().is_ok())
    };
    let has_header = match label_column {
        LabelColumn::Name(_) => true,
        _ => !looks_numeric(first, label_idx_for(None)?),
    };
    let label_idx = label_idx_for(has_header.then_some(first))?;
    let body = if has_header { &records[1..] } else { &records[..] };
    if body.is_empty() {
        return Err(DscError::Parse {
            line: *first_line,
            message: "no data rows after header".into(),
        });
    }

    let mut data = Vec::with_capacity(body.len() * (width - 1));
    let mut raw_labels = Vec::with_capacity(body.len());
    for (line, rec) in body {
        if rec.len() != width {
            return Err(DscError::Parse {
                line: *line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            if j == label_idx {
                raw_labels.push(cell.to_string());
            } else {
                let v: f64 = cell.parse().map_err(|_| DscError::Parse {
                    line: *line,
                    message: format!("non-numeric cell {cell:?} in column {j}"),
                })?;
                data.push(T::of(v));
            }
        }
    }

    let (labels, names) = remap_labels(&raw_labels);
    let samples = Matrix::from_vec(body.len(), width - 1, data)?;
    let mut ds = LabeledDataset::new(samples, labels)?;
    ds.class_names = Some(names);
    Ok(ds)
}

/// Dense ids for arbitrary label strings plus the id -> original mapping.
pub fn remap_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut distinct: Vec<&String> = raw.iter().collect();
    distinct.sort();
    distinct.dedup();
    let numeric: Option<Vec<f64>> = distinct.iter().map(|s| s.parse::<f64>().ok()).collect();
    if let Some(values) = numeric {
        let mut paired: Vec<(f64, &String)> = values.into_iter().zip(distinct).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0));
        distinct = paired.into_iter().map(|(_, s)| s).collect();
    }
    let index: HashMap<&String, usize> = distinct.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let labels = raw.iter().map(|s| index[s]).collect();
    (labels, distinct.into_iter().cloned().collect())
}

/// Known/unknown class partition with train and test sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenSetSplit {
    /// Sorted; simplex index of a known class is its position here.
    pub known_class_ids: Vec<usize>,
    pub unknown_class_ids: Vec<usize>,
    pub trial_seed: u64,
    /// Known-class training samples only.
    pub train_indices: Vec<usize>,
    /// Test-partition samples of every class, known and unknown.
    pub test_indices: Vec<usize>,
}

/// Fraction of each class held out for testing by [`make_open_split`].
pub const DEFAULT_TEST_FRACTION: f64 = 0.25;

/// Random known/unknown partition with a stratified holdout of
/// [`DEFAULT_TEST_FRACTION`] per class.
pub fn make_open_split<T: Scalar>(dataset: &LabeledDataset<T>, num_known: usize, trial_seed: u64) -> Result<OpenSetSplit> {
    make_open_split_with_fraction(dataset, num_known, trial_seed, DEFAULT_TEST_FRACTION)
}

pub fn make_open_split_with_fraction<T: Scalar>(
    dataset: &LabeledDataset<T>,
    num_known: usize,
    trial_seed: u64,
    test_fraction: f64,
) -> Result<OpenSetSplit> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction <= 0.0 {
        return Err(DscError::InvalidArgument(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    rng.set_stream(1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
    for (i, &y) in dataset.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut is_test = vec![false; dataset.len()];
    for members in &mut by_class {
        members.shuffle(&mut rng);
        let take = ((members.len() as f64) * test_fraction).ceil() as usize;
        for &i in members.iter().take(take) {
            is_test[i] = true;
        }
    }
    make_open_split_with_partition(dataset, &is_test, num_known, trial_seed)
}

/// Like [`make_open_split`] but with a caller-supplied train/test partition.
pub fn make_open_split_with_partition<T: Scalar>(
    dataset: &LabeledDataset<T>,
    is_test: &[bool],
    num_known: usize,
    trial_seed: u64,
) -> Result<OpenSetSplit> {
    let total = dataset.num_classes();
    if num_known == 0 || num_known >= total {
        return Err(DscError::InvalidArgument(format!(
            "num_known must be in [1, {total}), got {num_known}"
        )));
    }
    if is_test.len() != dataset.len() {
        return Err(DscError::InvalidArgument(format!(
            "partition mask has {} entries for {} samples",
            is_test.len(),
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let mut classes: Vec<usize> = (0..total).collect();
    classes.shuffle(&mut rng);
    let mut known = classes[..num_known].to_vec();
    let mut unknown = classes[num_known..].to_vec();
    known.sort_unstable();
    unknown.sort_unstable();

    let mut is_known = vec![false; total];
    for &k in &known {
        is_known[k] = true;
    }
    let mut train_indices = Vec::new();
    let mut test_indices = Vec::new();
    for (i, &y) in dataset.labels.iter().enumerate() {
        if is_test[i] {
            test_indices.push(i);
        } else if is_known[y] {
            train_indices.push(i);
        }
    }
    Ok(OpenSetSplit {
        known_class_ids: known,
        unknown_class_ids: unknown,
        trial_seed,
        train_indices,
        test_indices,
    })
}

/// Test samples with their known-class index, or `None` for unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenTestSet<T> {
    pub samples: Matrix<T>,
    pub known_labels: Vec<Option<usize>>,
}

impl OpenSetSplit {
    pub fn known_index(&self, class_id: usize) -> Option<usize> {
        self.known_class_ids.binary_search(&class_id).ok()
    }

    /// Training samples with labels remapped to `[0, num_known)`.
    pub fn train_set<T: Scalar>(&self, dataset: &LabeledDataset<T>) -> Result<LabeledDataset<T>> {
        let mut labels = Vec::with_capacity(self.train_indices.len());
        for &i in &self.train_indices {
            let idx = self.known_index(dataset.labels[i]).ok_or_else(|| {
                DscError::State(format!("training index {i} belongs to an unknown class"))
            })?;
            labels.push(idx);
        }
        let mut ds = LabeledDataset::new(dataset.samples.select_rows(&self.train_indices), labels)?;
        ds.class_names = dataset
            .class_names
            .as_ref()
            .map(|names| self.known_class_ids.iter().map(|&k| names[k].clone()).collect());
        Ok(ds)
    }

    pub fn test_set<T: Scalar>(&self, dataset: &LabeledDataset<T>) -> OpenTestSet<T> {
        OpenTestSet {
            samples: dataset.samples.select_rows(&self.test_indices),
            known_labels: self
                .test_indices
                .iter()
                .map(|&i| self.known_index(dataset.labels[i]))
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

enum Source<T> {
    Rows(Matrix<T>),
    Gaussian {
        means: Vec<Vec<f64>>,
        sigma: f64,
        per_pass: usize,
    },
}

/// Endless, seeded stream of unlabeled rows.
///
/// Each pass visits the source once in a freshly shuffled order. Row-backed
/// streams shuffle the stored rows; generator-backed streams draw `per_pass`
/// new samples from a Gaussian mixture.
pub struct BackgroundStream<T> {
    source: Source<T>,
    batch_size: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    pending: Option<Matrix<T>>,
    dim: usize,
}

impl<T: Scalar> BackgroundStream<T> {
    pub fn from_rows(rows: Matrix<T>, batch_size: usize, seed: u64) -> Result<Self> {
        if rows.rows() == 0 {
            return Err(DscError::InvalidArgument("background source is empty".into()));
        }
        let dim = rows.cols();
        Self::build(Source::Rows(rows), batch_size, seed, dim)
    }

    /// Draws `per_pass` samples per pass from equal-weight Gaussians at `means`.
    pub fn from_gaussians(means: Vec<Vec<f64>>, sigma: f64, per_pass: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if means.is_empty() || per_pass == 0 {
            return Err(DscError::InvalidArgument("background generator produces no samples".into()));
        }
        if !(sigma > 0.0) {
            return Err(DscError::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        let dim = means[0].len();
        if means.iter().any(|m| m.len() != dim) {
            return Err(DscError::InvalidArgument("background means differ in width".into()));
        }
        Self::build(Source::Gaussian { means, sigma, per_pass }, batch_size, seed, dim)
    }

    fn build(source: Source<T>, batch_size: usize, seed: u64, dim: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(DscError::InvalidArgument("background batch size must be positive".into()));
        }
        Ok(Self {
            source,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: Vec::new(),
            cursor: 0,
            pending: None,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn start_pass(&mut self) {
        match &self.source {
            Source::Rows(rows) => {
                self.order = (0..rows.rows()).collect();
                self.order.shuffle(&mut self.rng);
            }
            Source::Gaussian { means, sigma, per_pass } => {
                let mut data = Vec::with_capacity(per_pass * self.dim);
                for i in 0..*per_pass {
                    data.extend(sample_gaussian::<T>(&mut self.rng, &means[i % means.len()], *sigma));
                }
                let fresh = Matrix::from_vec(*per_pass, self.dim, data).expect("generator shape");
                self.order = (0..*per_pass).collect();
                self.order.shuffle(&mut self.rng);
                self.pending = Some(fresh);
            }
        }
        self.cursor = 0;
    }

    fn rows(&self) -> &Matrix<T> {
        match &self.source {
            Source::Rows(rows) => rows,
            Source::Gaussian { .. } => self.pending.as_ref().expect("pass started"),
        }
    }

    fn remaining(&self) -> usize {
        self.order.len() - self.cursor
    }

    /// Exactly `count` rows, continuing into new passes as needed.
    pub fn take_rows(&mut self, count: usize) -> Matrix<T> {
        let mut idx_rows: Vec<T> = Vec::with_capacity(count * self.dim);
        let mut taken = 0;
        while taken < count {
            if self.remaining() == 0 {
                self.start_pass();
            }
            let step = self.remaining().min(count - taken);
            let rows = self.rows();
            for &i in &self.order[self.cursor..self.cursor + step] {
                idx_rows.extend_from_slice(rows.row(i));
            }
            self.cursor += step;
            taken += step;
        }
        Matrix::from_vec(count, self.dim, idx_rows).expect("row count")
    }
}

impl<T: Scalar> Iterator for BackgroundStream<T> {
    type Item = Matrix<T>;

    /// Batches of `batch_size` that stop at the end of each pass.
    fn next(&mut self) -> Option<Matrix<T>> {
        if self.remaining() == 0 {
            self.start_pass();
        }
        let n = self.remaining().min(self.batch_size);
        Some(self.take_rows(n))
    }
}
