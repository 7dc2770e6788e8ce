//! Test-only oracles, independent of the code under test.
#![allow(dead_code)]

use dsc_core::Matrix;
use nalgebra::DMatrix;

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Number of singular values above `rel_threshold * sigma_max`.
pub fn numerical_rank(m: &Matrix<f64>, rel_threshold: f64) -> usize {
    let dm = DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice());
    let sv = dm.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > rel_threshold * max).count()
}

/// Deterministic pseudo-random values in `[-scale, scale)` (SplitMix64).
pub fn lcg_values(seed: u64, n: usize, scale: f64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    (0..n)
        .map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            scale * (2.0 * ((z >> 11) as f64 / (1u64 << 53) as f64) - 1.0)
        })
        .collect()
}

/// Standard-normal values via Box-Muller over `lcg_values`.
pub fn normal_values(seed: u64, n: usize) -> Vec<f64> {
    let u = lcg_values(seed, 2 * n, 1.0);
    (0..n)
        .map(|i| {
            let u1 = (u[2 * i] + 1.0) / 2.0 + 1e-300;
            let u2 = (u[2 * i + 1] + 1.0) / 2.0;
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

pub fn matrix(rows: usize, cols: usize, seed: u64, scale: f64) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, lcg_values(seed, rows * cols, scale)).unwrap()
}

pub mod grad;

/// Exhaustive pair counting with unknowns as positives and ties worth one half.
pub fn brute_force_auc(known: &[f64], unknown: &[f64]) -> f64 {
    let mut twice = 0u128;
    for &u in unknown {
        for &k in known {
            if u > k {
                twice += 2;
            } else if u == k {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * known.len() * unknown.len()) as f64
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn random_orthogonal(n: usize, seed: u64) -> Matrix<f64> {
    let g = DMatrix::from_row_slice(n, n, &normal_values(seed, n * n));
    let q = g.qr().q();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = q[(i, j)];
        }
    }
    out
}
pub mod fixtures;
