//! Brute-force oracles shared by the integration tests. Nothing here calls
//! the structured implementations it is used to check.

#![allow(dead_code)]

use blocklev::linalg::{partition, InstanceSpec, PartitionedDataset};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Dense `q tau x N` matrix `(D Omega) (x) I_tau` for block indices and scales.
pub fn dense_sketch(indices: &[usize], scales: &[f64], blocks: usize, tau: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(indices.len(), blocks);
    for (j, (&i, &s)) in indices.iter().zip(scales).enumerate() {
        omega[(j, i)] = s;
    }
    omega.kronecker(&DMatrix::<f64>::identity(tau, tau))
}

/// `(A^T A)^{-1} A^T b` by Cholesky on the normal equations.
pub fn normal_equations(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let chol = a.tr_mul(a).cholesky().expect("normal matrix is positive definite");
    chol.solve(&a.tr_mul(b))
}

/// Orthogonal projector `A (A^T A)^{-1} A^T`.
pub fn projector(a: &DMatrix<f64>) -> DMatrix<f64> {
    let inv = a.tr_mul(a).try_inverse().expect("full column rank");
    a * inv * a.transpose()
}

/// Row leverage scores `diag(P) / d`.
pub fn leverage_oracle(a: &DMatrix<f64>) -> Vec<f64> {
    let p = projector(a);
    let d = a.ncols() as f64;
    (0..a.nrows()).map(|i| p[(i, i)] / d).collect()
}

/// Block scores summed from the projector diagonal.
pub fn block_leverage_oracle(a: &DMatrix<f64>, tau: usize) -> Vec<f64> {
    leverage_oracle(a).chunks(tau).map(|c| c.iter().sum()).collect()
}

/// Spectral norm of a symmetric matrix by dense SVD.
pub fn spectral_norm_oracle(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

/// Minimizer of a unimodal function on `[lo, hi]` by golden-section search.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    while hi - lo > tol {
        if f(c) < f(d) {
            hi = d;
        } else {
            lo = c;
        }
        c = hi - g * (hi - lo);
        d = lo + g * (hi - lo);
    }
    0.5 * (lo + hi)
}

/// Gaussian matrix with a few rows scaled up so that block scores are
/// clearly nonuniform.
pub fn skewed_matrix<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |i, _| {
        let u: f64 = rng.random_range(-1.0..1.0);
        let v: f64 = rng.random_range(-1.0..1.0);
        let weight = if i % 7 == 0 { 4.0 } else { 1.0 };
        weight * (u + v)
    })
}

pub fn random_dataset<R: Rng + ?Sized>(n: usize, d: usize, blocks: usize, rng: &mut R) -> PartitionedDataset {
    let a = skewed_matrix(n, d, rng);
    let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    partition(a, b, blocks).expect("valid shape")
}

/// The experimental instance: 2000 x 40 Student-t design, 100 blocks.
pub fn benchmark_spec() -> InstanceSpec {
    InstanceSpec {
        n: 2000,
        d: 40,
        dof: 1.0,
        noise_sigma: 1.0,
        signal_scale: 8.0,
    }
}

/// Direct transcription of the replica adjustment pseudocode, with a
/// 1-based sentinel `j~ = 0`, used to cross-check the library version.
pub fn fit_to_m_interpreter(p: &[f64], r_tilde: &[usize], m: usize) -> Vec<usize> {
    let k = p.len();
    let mf = m as f64;
    let mut r: Vec<i64> = r_tilde.iter().map(|&v| v as i64).collect();
    let mut big_r: i64 = r.iter().sum();
    let mut dt: Vec<f64> = (0..k).map(|i| p[i] - r[i] as f64 / mf).collect();
    let mut chi: i32 = 1;
    if big_r < m as i64 {
        chi = 0;
        dt.iter_mut().for_each(|v| *v = -*v);
    }
    let pm = |e: i32| if e % 2 == 0 { 1.0 } else { -1.0 };
    let mut j_tilde: usize = 0;
    while big_r != m as i64 {
        // argmin over 1-based indices, skipping counts that would hit zero
        let mut j = 0;
        let mut best = f64::INFINITY;
        for i in 0..k {
            if chi == 1 && r[i] == 1 {
                continue;
            }
            if dt[i] < best {
                best = dt[i];
                j = i + 1;
            }
        }
        let ji = j - 1;
        let step = pm(chi) as i64;
        if pm(chi + 1) * (p[ji] - (r[ji] + step) as f64 / mf) > 0.0 && j_tilde == j {
            dt[ji] = 1.0;
            j_tilde = 0;
        } else {
            r[ji] += step;
            big_r += step;
            dt[ji] = pm(chi + 1) * (p[ji] - r[ji] as f64 / mf);
            j_tilde = j;
        }
    }
    r.into_iter().map(|v| v as usize).collect()
}
