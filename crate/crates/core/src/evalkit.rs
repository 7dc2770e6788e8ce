//! Closed-set accuracy, rank-based AUC, within-class scatter and distances
//! between empirical class means.

use serde::{Deserialize, Serialize};

use crate::error::{DscError, Result};
use crate::inference::Label;
use crate::matrix::{squared_distance, Matrix};
use crate::scalar::Scalar;
use crate::simplex::SimplexCenters;

/// Written into every report next to the AUC.
pub const AUC_ORIENTATION: &str = "positive=unknown; score=min squared distance to a center";

/// Fraction of predictions equal to the truth; rejections count as errors.
pub fn closed_set_accuracy(predictions: &[Label], truth: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(DscError::InvalidArgument("accuracy of an empty prediction set".into()));
    }
    if predictions.len() != truth.len() {
        return Err(DscError::InvalidArgument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let hits = predictions
        .iter()
        .zip(truth)
        .filter(|(p, &t)| **p == Label::Class(t))
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Per-class recall; `None` for classes absent from `truth`.
pub fn per_class_recall(predictions: &[Label], truth: &[usize], num_classes: usize) -> Vec<Option<f64>> {
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (p, &t) in predictions.iter().zip(truth) {
        if t < num_classes {
            totals[t] += 1;
            if *p == Label::Class(t) {
                hits[t] += 1;
            }
        }
    }
    hits.iter()
        .zip(&totals)
        .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
        .collect()
}

/// Mann-Whitney AUC with unknowns as positives and ties worth one half.
///
/// Ranks are accumulated doubled in integers so the result equals exhaustive
/// pair counting bit for bit.
pub fn auc_roc<T: Scalar>(known_scores: &[T], unknown_scores: &[T]) -> Result<f64> {
    if known_scores.is_empty() || unknown_scores.is_empty() {
        return Err(DscError::InvalidArgument("AUC needs known and unknown scores".into()));
    }
    if known_scores.iter().chain(unknown_scores).any(|s| !s.is_finite()) {
        return Err(DscError::InvalidArgument("AUC scores must be finite".into()));
    }
    let mut all: Vec<(f64, bool)> = known_scores
        .iter()
        .map(|s| (s.as_f64(), false))
        .chain(unknown_scores.iter().map(|s| (s.as_f64(), true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // `total_cmp` separates -0.0 and 0.0; treat them as tied.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1..=j average to (i+1+j)/2.
        let twice_mid = (i + 1 + j) as u128;
        let positives = all[i..j].iter().filter(|e| e.1).count() as u128;
        twice_rank_sum += twice_mid * positives;
        i = j;
    }
    let n_pos = unknown_scores.len() as u128;
    let n_neg = known_scores.len() as u128;
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Mean `||f - s_j||^2` over class `j` samples; `None` for empty classes.
pub fn scatter_stats<T: Scalar>(features: &Matrix<T>, labels: &[usize], centers: &SimplexCenters<T>) -> Result<Vec<Option<f64>>> {
    if features.rows() != labels.len() {
        return Err(DscError::InvalidArgument("features and labels differ in length".into()));
    }
    let c = centers.num_classes();
    let mut sums = vec![0.0; c];
    let mut counts = vec![0usize; c];
    for (f, &y) in features.iter_rows().zip(labels) {
        if y >= c {
            return Err(DscError::InvalidLabel { label: y, num_classes: c });
        }
        sums[y] += squared_distance(f, centers.center(y)).as_f64();
        counts[y] += 1;
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
        .collect())
}

/// Pairwise distances between empirical class means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterDistanceMatrix {
    /// Class id of each row/column.
    pub class_ids: Vec<usize>,
    pub distances: Vec<Vec<f64>>,
    /// Label ids below the maximum label that had no samples.
    pub excluded: Vec<usize>,
}

impl CenterDistanceMatrix {
    pub fn position(&self, class_id: usize) -> Option<usize> {
        self.class_ids.iter().position(|&c| c == class_id)
    }

    pub fn distance(&self, a: usize, b: usize) -> Option<f64> {
        Some(self.distances[self.position(a)?][self.position(b)?])
    }

    /// Closest class to `class_id` among `candidates` (ties to the first).
    pub fn nearest_among(&self, class_id: usize, candidates: &[usize]) -> Option<usize> {
        candidates
            .iter()
            .filter(|&&c| c != class_id)
            .filter_map(|&c| self.distance(class_id, c).map(|d| (c, d)))
            .fold(None, |best: Option<(usize, f64)>, (c, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((c, d)),
            })
            .map(|(c, _)| c)
    }

    /// Max over min of the off-diagonal entries among `classes`.
    pub fn spread_ratio(&self, classes: &[usize]) -> Option<f64> {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for (i, &a) in classes.iter().enumerate() {
            for &b in &classes[i + 1..] {
                let d = self.distance(a, b)?;
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
        (lo.is_finite() && lo > 0.0).then(|| hi / lo)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class");
        for c in &self.class_ids {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (c, row) in self.class_ids.iter().zip(&self.distances) {
            out.push_str(&c.to_string());
            for d in row {
                out.push(',');
                out.push_str(&crate::io::fmt_sig17(*d));
            }
            out.push('\n');
        }
        out
    }
}

pub fn center_distance_matrix<T: Scalar>(features: &Matrix<T>, labels: &[usize]) -> Result<CenterDistanceMatrix> {
    if features.rows() != labels.len() {
        return Err(DscError::InvalidArgument("features and labels differ in length".into()));
    }
    let num = labels.iter().max().map_or(0, |m| m + 1);
    let d = features.cols();
    let mut sums = vec![vec![0.0f64; d]; num];
    let mut counts = vec![0usize; num];
    for (f, &y) in features.iter_rows().zip(labels) {
        for (s, &x) in sums[y].iter_mut().zip(f) {
            *s += x.as_f64();
        }
        counts[y] += 1;
    }
    let mut class_ids = Vec::new();
    let mut excluded = Vec::new();
    let mut means = Vec::new();
    for (c, (s, &n)) in sums.iter().zip(&counts).enumerate() {
        if n == 0 {
            log::warn!("class {c} has no samples; excluded from the distance matrix");
            excluded.push(c);
        } else {
            class_ids.push(c);
            means.push(s.iter().map(|v| v / n as f64).collect::<Vec<f64>>());
        }
    }
    let k = means.len();
    let mut distances = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in a + 1..k {
            let dist = squared_distance(&means[a], &means[b]).sqrt();
            distances[a][b] = dist;
            distances[b][a] = dist;
        }
    }
    Ok(CenterDistanceMatrix {
        class_ids,
        distances,
        excluded,
    })
}

/// Mean and sample standard deviation (`n - 1`; zero for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `"99.6 ± 0.1"`: percentages with one decimal.
pub fn format_percent_mean_std(mean: f64, std: f64) -> String {
    format!("{:.1} ± {:.1}", 100.0 * mean, 100.0 * std)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub aucs: Vec<f64>,
    pub closed_accuracies: Vec<f64>,
    pub auc_mean: f64,
    pub auc_std: f64,
    /// Mean ± std of the AUC in percent.
    pub auc_table: String,
}

impl TrialSummary {
    pub fn new(aucs: Vec<f64>, closed_accuracies: Vec<f64>) -> Self {
        let (auc_mean, auc_std) = mean_std(&aucs);
        Self {
            auc_table: format_percent_mean_std(auc_mean, auc_std),
            aucs,
            closed_accuracies,
            auc_mean,
            auc_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub closed_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc_orientation: Option<String>,
    /// `null` marks a class without samples.
    pub per_class_scatter: Vec<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center_distance_matrix: Option<CenterDistanceMatrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<TrialSummary>,
}
