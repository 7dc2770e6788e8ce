//! Regular-simplex class centers on an origin-centered hypersphere.
//!
//! The unit construction places vertex 0 at `(C-1)^{-1/2} * 1` and vertex
//! `j >= 1` at `kappa * 1 + eta * e_{j-1}` in `C-1` dimensions, with
//! `kappa = -(1 + sqrt C) / (C-1)^{3/2}` and `eta = sqrt(C / (C-1))`. Every
//! vertex has unit norm, every pair has inner product `-1/(C-1)`, and the
//! vertices sum to zero. Centers are the unit vertices scaled by the radius
//! and zero-padded up to the feature dimension.

use serde::Serialize;

use crate::error::{DscError, Result};
use crate::matrix::{dot, norm, squared_distance, Matrix};
use crate::scalar::Scalar;

/// Radius used when none is given.
pub const DEFAULT_RADIUS: f64 = 64.0;

/// Fixed class centers `s_j`, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexCenters<T> {
    num_classes: usize,
    radius: T,
    centers: Matrix<T>,
}

/// Unit-norm simplex vertices as a `C x (C-1)` matrix.
pub fn build_unit_simplex<T: Scalar>(num_classes: usize) -> Result<Matrix<T>> {
    if num_classes < 2 {
        return Err(DscError::InvalidArgument(format!(
            "a simplex needs at least 2 classes, got {num_classes}"
        )));
    }
    let c = T::of_usize(num_classes);
    let cm1 = c - T::one();
    let dim = num_classes - 1;
    let kappa = -(T::one() + c.sqrt()) / cm1.powf(T::of(1.5));
    let eta = (c / cm1).sqrt();

    let mut v = Matrix::zeros(num_classes, dim);
    let first = T::one() / cm1.sqrt();
    v.row_mut(0).fill(first);
    for j in 1..num_classes {
        let row = v.row_mut(j);
        row.fill(kappa);
        row[j - 1] += eta;
    }
    Ok(v)
}

/// Scaled, zero-padded centers in a `dim`-dimensional feature space.
pub fn build_centers<T: Scalar>(num_classes: usize, dim: usize, radius: T) -> Result<SimplexCenters<T>> {
    if num_classes < 2 {
        return Err(DscError::InvalidArgument(format!(
            "a simplex needs at least 2 classes, got {num_classes}"
        )));
    }
    if dim + 1 < num_classes {
        return Err(DscError::DimensionTooSmall {
            classes: num_classes,
            dim,
        });
    }
    if !(radius > T::zero()) || !radius.is_finite() {
        return Err(DscError::InvalidArgument(format!(
            "radius must be positive and finite, got {radius}"
        )));
    }
    let unit = build_unit_simplex::<T>(num_classes)?;
    let mut centers = Matrix::zeros(num_classes, dim);
    for j in 0..num_classes {
        let dst = centers.row_mut(j);
        for (d, &x) in dst.iter_mut().zip(unit.row(j)) {
            *d = radius * x;
        }
    }
    Ok(SimplexCenters {
        num_classes,
        radius,
        centers,
    })
}

impl<T: Scalar> SimplexCenters<T> {
    /// Wraps an arbitrary center matrix without checking it. Use
    /// [`SimplexCenters::validate`] to audit the result.
    pub fn from_matrix_unchecked(radius: T, centers: Matrix<T>) -> Self {
        Self {
            num_classes: centers.rows(),
            radius,
            centers,
        }
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    #[inline]
    pub fn radius(&self) -> T {
        self.radius
    }

    #[inline]
    pub fn center(&self, j: usize) -> &[T] {
        self.centers.row(j)
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.centers
    }

    /// Closed-form distance between any two distinct centers, `u * sqrt(2C/(C-1))`.
    pub fn expected_pairwise_distance(&self) -> T {
        let c = T::of_usize(self.num_classes);
        self.radius * (T::of(2.0) * c / (c - T::one())).sqrt()
    }

    /// Closed-form inner product between distinct centers, `-u^2/(C-1)`.
    pub fn expected_inner_product(&self) -> T {
        let c = T::of_usize(self.num_classes);
        -(self.radius * self.radius) / (c - T::one())
    }

    /// Checks every geometric invariant at the default tolerance for `T`.
    pub fn validate(&self) -> ValidationReport {
        self.validate_with_tolerance(default_tolerance::<T>())
    }

    pub fn validate_with_tolerance(&self, tol: f64) -> ValidationReport {
        let c = self.num_classes;
        let d = self.dim();
        let u = self.radius.as_f64();
        let mut checks = Vec::with_capacity(5);

        checks.push(InvariantCheck::new(
            Invariant::DimensionSufficient,
            (c.saturating_sub(1) as f64 - d as f64).max(0.0),
            0.0,
        ));

        let norm_dev = (0..c)
            .map(|j| (norm(self.center(j)).as_f64() - u).abs() / u)
            .fold(0.0, f64::max);
        checks.push(InvariantCheck::new(Invariant::RowNorm, norm_dev, tol));

        let expected_dist = self.expected_pairwise_distance().as_f64();
        let expected_ip = self.expected_inner_product().as_f64();
        let mut dist_dev: f64 = 0.0;
        let mut ip_dev: f64 = 0.0;
        for a in 0..c {
            for b in a + 1..c {
                let dist = squared_distance(self.center(a), self.center(b)).as_f64().sqrt();
                dist_dev = dist_dev.max((dist - expected_dist).abs() / expected_dist);
                let ip = dot(self.center(a), self.center(b)).as_f64();
                ip_dev = ip_dev.max((ip - expected_ip).abs() / expected_ip.abs());
            }
        }
        checks.push(InvariantCheck::new(Invariant::PairwiseDistance, dist_dev, tol));
        checks.push(InvariantCheck::new(Invariant::InnerProduct, ip_dev, tol));

        let mut centroid = vec![0.0f64; d];
        for j in 0..c {
            for (m, &x) in centroid.iter_mut().zip(self.center(j)) {
                *m += x.as_f64();
            }
        }
        let centroid_dev = centroid
            .iter()
            .map(|m| (m / c as f64).abs() / u)
            .fold(0.0, f64::max);
        checks.push(InvariantCheck::new(Invariant::ZeroCentroid, centroid_dev, tol));

        ValidationReport { checks }
    }
}

/// Relative tolerance used by [`SimplexCenters::validate`]: `1e-9`, or looser
/// when `T` cannot resolve it.
pub fn default_tolerance<T: Scalar>() -> f64 {
    (1e3 * T::epsilon().as_f64()).max(1e-9)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Invariant {
    DimensionSufficient,
    RowNorm,
    PairwiseDistance,
    InnerProduct,
    ZeroCentroid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantCheck {
    pub invariant: Invariant,
    /// Worst measured deviation. Relative for norms, distances and inner
    /// products; centroid deviation is divided by the radius; dimension
    /// shortfall is in coordinates.
    pub worst_deviation: f64,
    pub tolerance: f64,
}

impl InvariantCheck {
    fn new(invariant: Invariant, worst_deviation: f64, tolerance: f64) -> Self {
        Self {
            invariant,
            worst_deviation,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        // NaN deviations fail.
        self.worst_deviation <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<InvariantCheck>,
}

impl ValidationReport {
    pub fn violations(&self) -> Vec<&InvariantCheck> {
        self.checks.iter().filter(|c| !c.passed()).collect()
    }

    pub fn is_valid(&self) -> bool {
        self.checks.iter().all(InvariantCheck::passed)
    }

    pub fn violates(&self, invariant: Invariant) -> bool {
        self.checks
            .iter()
            .any(|c| c.invariant == invariant && !c.passed())
    }
}
