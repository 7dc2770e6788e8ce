//! Nearest-center classification and unknown-sample scoring.
//!
//! With every center at the same norm, `argmin_j ||f - s_j||^2` and
//! `argmax_j <f, s_j>` select the same class, so the Euclidean and cosine
//! rules agree. Ties go to the smallest class index in both.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, DscError, Result};
use crate::matrix::{dot, norm, squared_distance, Matrix};
use crate::scalar::Scalar;
use crate::simplex::SimplexCenters;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Class(usize),
    Reject,
}

impl Label {
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(c),
            Label::Reject => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<T> {
    pub label: Label,
    /// Smallest squared Euclidean distance to any center.
    pub euclid_score: T,
    /// Largest cosine similarity to any center; 0 for a zero feature.
    pub cosine_score: T,
}

fn check<T: Scalar>(feature: &[T], centers: &SimplexCenters<T>) -> Result<()> {
    if feature.len() != centers.dim() {
        Err(shape_err("feature width", centers.dim(), feature.len()))
    } else {
        Ok(())
    }
}

fn nearest<T: Scalar>(feature: &[T], centers: &SimplexCenters<T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for j in 0..centers.num_classes() {
        let d = squared_distance(feature, centers.center(j));
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// `(argmax_j cos(f, s_j), max cos)`, or `None` for a zero feature.
fn most_similar<T: Scalar>(feature: &[T], centers: &SimplexCenters<T>) -> Option<(usize, T)> {
    let nf = norm(feature);
    if nf == T::zero() {
        return None;
    }
    let mut best = (0, T::neg_infinity());
    for j in 0..centers.num_classes() {
        let s = centers.center(j);
        let c = dot(feature, s) / (nf * norm(s));
        if c > best.1 {
            best = (j, c);
        }
    }
    Some(best)
}

pub fn predict_euclid<T: Scalar>(feature: &[T], centers: &SimplexCenters<T>) -> Result<Prediction<T>> {
    check(feature, centers)?;
    let (label, euclid_score) = nearest(feature, centers);
    let cosine_score = most_similar(feature, centers).map_or(T::zero(), |(_, c)| c);
    Ok(Prediction {
        label: Label::Class(label),
        euclid_score,
        cosine_score,
    })
}

pub fn predict_cosine<T: Scalar>(feature: &[T], centers: &SimplexCenters<T>) -> Result<Prediction<T>> {
    check(feature, centers)?;
    let (label, cosine_score) = most_similar(feature, centers).ok_or(DscError::UndefinedDirection)?;
    let (_, euclid_score) = nearest(feature, centers);
    Ok(Prediction {
        label: Label::Class(label),
        euclid_score,
        cosine_score,
    })
}

/// `min_j ||f - s_j||^2`; larger means more likely unknown.
pub fn open_set_score<T: Scalar>(feature: &[T], centers: &SimplexCenters<T>) -> Result<T> {
    check(feature, centers)?;
    Ok(nearest(feature, centers).1)
}

/// Rejects when the open-set score exceeds `threshold`.
pub fn classify_with_rejection<T: Scalar>(feature: &[T], centers: &SimplexCenters<T>, threshold: T) -> Result<Prediction<T>> {
    if !(threshold >= T::zero()) {
        return Err(DscError::InvalidArgument(format!(
            "rejection threshold must be nonnegative, got {threshold}"
        )));
    }
    let mut p = predict_euclid(feature, centers)?;
    if p.euclid_score > threshold {
        p.label = Label::Reject;
    }
    Ok(p)
}

pub fn predict_batch<T: Scalar>(features: &Matrix<T>, centers: &SimplexCenters<T>) -> Result<Vec<Prediction<T>>> {
    features.iter_rows().map(|f| predict_euclid(f, centers)).collect()
}

pub fn open_set_scores<T: Scalar>(features: &Matrix<T>, centers: &SimplexCenters<T>) -> Result<Vec<T>> {
    features.iter_rows().map(|f| open_set_score(f, centers)).collect()
}

/// Smallest score `tau` with at least a `quantile` fraction of `scores <= tau`.
pub fn percentile_threshold<T: Scalar>(scores: &[T], quantile: f64) -> Result<T> {
    if scores.is_empty() {
        return Err(DscError::InvalidArgument("no scores to threshold".into()));
    }
    if !(0.0..=1.0).contains(&quantile) {
        return Err(DscError::InvalidArgument(format!("quantile must be in [0, 1], got {quantile}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let rank = ((quantile * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}
