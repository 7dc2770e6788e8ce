//! Losses over features with fixed class centers.
//!
//! Each loss returns its value together with the gradient with respect to
//! every feature row. Centers never receive gradients.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, DscError, Result};
use crate::matrix::{dot, squared_distance, Matrix};
use crate::scalar::Scalar;
use crate::simplex::SimplexCenters;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean squared distance to the own-class center.
    Dsc,
    /// `Dsc` plus a margin term pushing background samples away.
    DscBackground,
    /// Squared distance beyond a threshold.
    Hinge,
    /// Softmax cross-entropy with weights frozen to the centers.
    FixedSoftmax,
}

impl LossKind {
    pub fn uses_background(self) -> bool {
        matches!(self, LossKind::DscBackground)
    }
}

/// Loss selection plus hyperparameters. `margin` is in squared-distance units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec<T> {
    pub kind: LossKind,
    pub margin: Option<T>,
    pub lambda: Option<T>,
}

impl<T: Scalar> LossSpec<T> {
    pub fn dsc() -> Self {
        Self {
            kind: LossKind::Dsc,
            margin: None,
            lambda: None,
        }
    }

    pub fn hinge(margin: T) -> Self {
        Self {
            kind: LossKind::Hinge,
            margin: Some(margin),
            lambda: None,
        }
    }

    pub fn fixed_softmax() -> Self {
        Self {
            kind: LossKind::FixedSoftmax,
            margin: None,
            lambda: None,
        }
    }

    pub fn background(margin: T, lambda: T) -> Self {
        Self {
            kind: LossKind::DscBackground,
            margin: Some(margin),
            lambda: Some(lambda),
        }
    }

    /// Fills unset background hyperparameters: `m = u/2`, `lambda = 1/(2 * batch_size^2)`.
    pub fn with_defaults(mut self, radius: T, batch_size: usize) -> Self {
        if self.kind == LossKind::DscBackground {
            self.margin.get_or_insert(radius / T::of(2.0));
            let b = T::of_usize(batch_size.max(1));
            self.lambda.get_or_insert(T::one() / (T::of(2.0) * b * b));
        }
        self
    }

    fn check(&self) -> Result<()> {
        for (name, v) in [("margin", self.margin), ("lambda", self.lambda)] {
            if let Some(v) = v {
                if !(v >= T::zero()) || !v.is_finite() {
                    return Err(DscError::InvalidArgument(format!(
                        "{name} must be nonnegative and finite, got {v}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Features with labels, optionally paired with a background block.
#[derive(Debug, Clone, Copy)]
pub struct FeatureBatch<'a, T> {
    pub features: &'a Matrix<T>,
    pub labels: &'a [usize],
    pub background: Option<&'a Matrix<T>>,
}

impl<'a, T: Scalar> FeatureBatch<'a, T> {
    pub fn new(features: &'a Matrix<T>, labels: &'a [usize]) -> Self {
        Self {
            features,
            labels,
            background: None,
        }
    }

    pub fn with_background(mut self, background: &'a Matrix<T>) -> Self {
        self.background = Some(background);
        self
    }

    fn check(&self, centers: &SimplexCenters<T>) -> Result<()> {
        if self.features.rows() == 0 {
            return Err(DscError::InvalidArgument("empty feature batch".into()));
        }
        if self.features.rows() != self.labels.len() {
            return Err(shape_err("labels", self.features.rows(), self.labels.len()));
        }
        if self.features.cols() != centers.dim() {
            return Err(shape_err("feature width", centers.dim(), self.features.cols()));
        }
        if let Some(&label) = self.labels.iter().find(|&&y| y >= centers.num_classes()) {
            return Err(DscError::InvalidLabel {
                label,
                num_classes: centers.num_classes(),
            });
        }
        if let Some(bg) = self.background {
            if bg.rows() > 0 && bg.cols() != centers.dim() {
                return Err(shape_err("background width", centers.dim(), bg.cols()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub value: T,
    pub feature_grad: Matrix<T>,
    pub background_grad: Option<Matrix<T>>,
}

/// Dispatches on `spec.kind`.
pub fn evaluate<T: Scalar>(
    batch: &FeatureBatch<'_, T>,
    centers: &SimplexCenters<T>,
    spec: &LossSpec<T>,
) -> Result<LossOutput<T>> {
    match spec.kind {
        LossKind::Dsc => dsc_loss(batch, centers),
        LossKind::DscBackground => dsc_background_loss(batch, centers, spec),
        LossKind::Hinge => hinge_loss(batch, centers, spec),
        LossKind::FixedSoftmax => fixed_softmax_loss(batch, centers),
    }
}

/// `(1/n) * sum_i ||f_i - s_{y_i}||^2`
pub fn dsc_loss<T: Scalar>(batch: &FeatureBatch<'_, T>, centers: &SimplexCenters<T>) -> Result<LossOutput<T>> {
    batch.check(centers)?;
    if batch.background.is_some() {
        return Err(DscError::InvalidArgument(
            "dsc loss takes no background block".into(),
        ));
    }
    Ok(dsc_term(batch, centers))
}

fn dsc_term<T: Scalar>(batch: &FeatureBatch<'_, T>, centers: &SimplexCenters<T>) -> LossOutput<T> {
    let f = batch.features;
    let n = f.rows();
    let inv_n = T::one() / T::of_usize(n);
    let two_over_n = T::of(2.0) * inv_n;
    let mut grad = Matrix::zeros(n, f.cols());
    let mut total = T::zero();
    for (i, &y) in batch.labels.iter().enumerate() {
        let s = centers.center(y);
        let g = grad.row_mut(i);
        for ((gk, &fk), &sk) in g.iter_mut().zip(f.row(i)).zip(s) {
            let d = fk - sk;
            total += d * d;
            *gk = two_over_n * d;
        }
    }
    LossOutput {
        value: total * inv_n,
        feature_grad: grad,
        background_grad: None,
    }
}

/// `dsc + lambda * sum_i sum_k max(0, m + ||f_i - s_{y_i}||^2 - ||f_k - s_{y_i}||^2)`
///
/// The double sum runs over this batch's known rows and background rows.
/// A hinge term exactly at zero contributes no gradient.
pub fn dsc_background_loss<T: Scalar>(
    batch: &FeatureBatch<'_, T>,
    centers: &SimplexCenters<T>,
    spec: &LossSpec<T>,
) -> Result<LossOutput<T>> {
    batch.check(centers)?;
    spec.check()?;
    let background = batch.background.ok_or_else(|| {
        DscError::InvalidArgument("background loss requires a background block".into())
    })?;
    let spec = spec.with_defaults(centers.radius(), batch.features.rows());
    let margin = spec.margin.unwrap_or_else(T::zero);
    let lambda = spec.lambda.unwrap_or_else(T::zero);

    let mut out = dsc_term(batch, centers);
    let f = batch.features;
    let mut bg_grad = Matrix::zeros(background.rows(), background.cols());
    let two_lambda = T::of(2.0) * lambda;
    let mut penalty = T::zero();

    for (i, &y) in batch.labels.iter().enumerate() {
        let s = centers.center(y);
        let own = squared_distance(f.row(i), s);
        let mut active = 0usize;
        for k in 0..background.rows() {
            let fk = background.row(k);
            let h = margin + own - squared_distance(fk, s);
            if h > T::zero() {
                penalty += h;
                active += 1;
                for ((g, &x), &sc) in bg_grad.row_mut(k).iter_mut().zip(fk).zip(s) {
                    *g -= two_lambda * (x - sc);
                }
            }
        }
        if active > 0 {
            let scale = two_lambda * T::of_usize(active);
            for ((g, &x), &sc) in out.feature_grad.row_mut(i).iter_mut().zip(f.row(i)).zip(s) {
                *g += scale * (x - sc);
            }
        }
    }
    out.value += lambda * penalty;
    out.background_grad = Some(bg_grad);
    Ok(out)
}

/// `(1/n) * sum_i max(0, ||f_i - s_{y_i}||^2 - m)`
pub fn hinge_loss<T: Scalar>(
    batch: &FeatureBatch<'_, T>,
    centers: &SimplexCenters<T>,
    spec: &LossSpec<T>,
) -> Result<LossOutput<T>> {
    batch.check(centers)?;
    spec.check()?;
    let margin = spec
        .margin
        .ok_or_else(|| DscError::InvalidArgument("hinge loss requires a margin".into()))?;
    let f = batch.features;
    let n = f.rows();
    let inv_n = T::one() / T::of_usize(n);
    let two_over_n = T::of(2.0) * inv_n;
    let mut grad = Matrix::zeros(n, f.cols());
    let mut total = T::zero();
    for (i, &y) in batch.labels.iter().enumerate() {
        let s = centers.center(y);
        let dist = squared_distance(f.row(i), s);
        if dist > margin {
            total += dist - margin;
            for ((g, &x), &sc) in grad.row_mut(i).iter_mut().zip(f.row(i)).zip(s) {
                *g = two_over_n * (x - sc);
            }
        }
    }
    Ok(LossOutput {
        value: total * inv_n,
        feature_grad: grad,
        background_grad: None,
    })
}

/// Cross-entropy over logits `s_j^T f_i` with zero biases.
pub fn fixed_softmax_loss<T: Scalar>(
    batch: &FeatureBatch<'_, T>,
    centers: &SimplexCenters<T>,
) -> Result<LossOutput<T>> {
    batch.check(centers)?;
    let f = batch.features;
    let n = f.rows();
    let c = centers.num_classes();
    let inv_n = T::one() / T::of_usize(n);
    let mut grad = Matrix::zeros(n, f.cols());
    let mut total = T::zero();
    let mut logits = vec![T::zero(); c];
    for (i, &y) in batch.labels.iter().enumerate() {
        let fi = f.row(i);
        for (j, z) in logits.iter_mut().enumerate() {
            *z = dot(centers.center(j), fi);
        }
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for z in logits.iter_mut() {
            *z = (*z - max).exp();
            denom += *z;
        }
        // loss_i = log(denom) - (z_y - max)
        total += denom.ln() - logits[y].ln();
        let g = grad.row_mut(i);
        for (j, &e) in logits.iter().enumerate() {
            let p = e / denom;
            let w = (p - if j == y { T::one() } else { T::zero() }) * inv_n;
            for (gk, &sk) in g.iter_mut().zip(centers.center(j)) {
                *gk += w * sk;
            }
        }
    }
    Ok(LossOutput {
        value: total * inv_n,
        feature_grad: grad,
        background_grad: None,
    })
}

/// `||f_i - s_{y_i}||^2` for every row.
pub fn within_class_squared_distances<T: Scalar>(
    features: &Matrix<T>,
    labels: &[usize],
    centers: &SimplexCenters<T>,
) -> Vec<T> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| squared_distance(features.row(i), centers.center(y)))
        .collect()
}
