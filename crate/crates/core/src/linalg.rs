//! Dense substrate: row-block partitioning, orthonormal bases, leverage
//! scores, exact least squares and synthetic instances.

use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};
use serde::{Deserialize, Serialize};

use crate::distribution::{DistributionKind, SamplingDistribution};
use crate::error::{invalid, Error, Result};
use crate::rng::std_normal;

/// Smallest singular value accepted relative to the largest.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// `A` and `b` split into `K` contiguous row blocks of `tau` rows each.
#[derive(Clone, Debug)]
pub struct PartitionedDataset {
    a: DMatrix<f64>,
    b: DVector<f64>,
    blocks: usize,
    tau: usize,
    raw_rows: usize,
}

/// Splits `(A, b)` into `blocks` row blocks, appending zero rows until the
/// block count divides the row count.
pub fn partition(a_raw: DMatrix<f64>, b_raw: DVector<f64>, blocks: usize) -> Result<PartitionedDataset> {
    let raw_rows = a_raw.nrows();
    if raw_rows == 0 {
        return Err(invalid("A has no rows"));
    }
    if b_raw.len() != raw_rows {
        return Err(Error::DimensionMismatch(format!(
            "A has {raw_rows} rows but b has {} entries",
            b_raw.len()
        )));
    }
    if blocks == 0 {
        return Err(invalid("block count must be positive"));
    }
    if blocks > raw_rows {
        return Err(invalid(format!("{blocks} blocks requested for only {raw_rows} rows")));
    }
    let tau = raw_rows.div_ceil(blocks);
    let n = tau * blocks;
    let d = a_raw.ncols();
    if d >= n {
        return Err(invalid(format!("system is not overdetermined: d = {d}, N = {n}")));
    }
    let (a, b) = if n == raw_rows {
        (a_raw, b_raw)
    } else {
        (a_raw.resize_vertically(n, 0.0), b_raw.resize_vertically(n, 0.0))
    };
    Ok(PartitionedDataset {
        a,
        b,
        blocks,
        tau,
        raw_rows,
    })
}

impl PartitionedDataset {
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Padded row count `N = K * tau`.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn d(&self) -> usize {
        self.a.ncols()
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    /// Rows before zero padding.
    pub fn raw_rows(&self) -> usize {
        self.raw_rows
    }

    pub fn block_range(&self, block: usize) -> Range<usize> {
        block * self.tau..(block + 1) * self.tau
    }

    pub fn block_ranges(&self) -> Vec<Range<usize>> {
        (0..self.blocks).map(|l| self.block_range(l)).collect()
    }

    pub fn block_a(&self, block: usize) -> DMatrixView<'_, f64> {
        self.a.rows(block * self.tau, self.tau)
    }

    pub fn block_b(&self, block: usize) -> DVectorView<'_, f64> {
        self.b.rows(block * self.tau, self.tau)
    }

    /// Same partition with a different target vector.
    pub fn with_b(&self, b: DVector<f64>) -> Result<Self> {
        if b.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "b has {} entries, expected {}",
                b.len(),
                self.n()
            )));
        }
        Ok(Self { b, ..self.clone() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisProvenance {
    ThinSvd,
}

/// `N x d` matrix with orthonormal columns spanning the range of `A`.
#[derive(Clone, Debug)]
pub struct OrthonormalBasis {
    u: DMatrix<f64>,
    provenance: BasisProvenance,
}

impl OrthonormalBasis {
    /// Left singular vectors of a full column rank matrix.
    pub fn of_matrix(a: &DMatrix<f64>) -> Result<Self> {
        let svd = FullRankSvd::new(a)?;
        Ok(Self {
            u: svd.u,
            provenance: BasisProvenance::ThinSvd,
        })
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn provenance(&self) -> BasisProvenance {
        self.provenance
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn d(&self) -> usize {
        self.u.ncols()
    }
}

pub fn orthonormal_basis(ds: &PartitionedDataset) -> Result<OrthonormalBasis> {
    OrthonormalBasis::of_matrix(ds.a())
}

/// Thin SVD after the rank check.
struct FullRankSvd {
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    v_t: DMatrix<f64>,
}

impl FullRankSvd {
    fn new(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() < a.ncols() || a.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "expected a tall matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let svd = a.clone().svd(true, true);
        let sigma = svd.singular_values;
        let smax = sigma.max();
        let smin = sigma.min();
        if !(smax > 0.0) || smin < RANK_TOLERANCE * smax {
            let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
            return Err(Error::RankDeficient { ratio });
        }
        Ok(Self {
            u: svd.u.expect("requested U"),
            sigma,
            v_t: svd.v_t.expect("requested V^T"),
        })
    }
}

/// `pi_i = ||U_(i)||^2 / d`.
pub fn row_leverage_scores(basis: &OrthonormalBasis) -> DVector<f64> {
    let d = basis.d() as f64;
    DVector::from_iterator(basis.n(), basis.u.row_iter().map(|row| row.norm_squared() / d))
}

/// Squared Frobenius norm of every row block of `m`.
pub fn frobenius_block_scores(m: &DMatrix<f64>, ds: &PartitionedDataset) -> Result<Vec<f64>> {
    if m.nrows() != ds.n() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} rows, partition expects {}",
            m.nrows(),
            ds.n()
        )));
    }
    Ok((0..ds.blocks())
        .map(|l| m.rows(l * ds.tau(), ds.tau()).norm_squared())
        .collect())
}

/// `Pi_l = ||U_(K_l)||_F^2 / d`.
pub fn block_leverage_scores(basis: &OrthonormalBasis, ds: &PartitionedDataset) -> Result<SamplingDistribution> {
    let d = basis.d() as f64;
    let mut p: Vec<f64> = frobenius_block_scores(basis.u(), ds)?
        .into_iter()
        .map(|s| s / d)
        .collect();
    // absorb the rounding so the sum check is exact to machine precision
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    SamplingDistribution::new(p, DistributionKind::Exact)
}

/// Exact block leverage scores straight from the data.
pub fn dataset_block_scores(ds: &PartitionedDataset) -> Result<SamplingDistribution> {
    block_leverage_scores(&orthonormal_basis(ds)?, ds)
}

/// Least squares minimizer `A^+ b`.
pub fn exact_solution(ds: &PartitionedDataset) -> Result<DVector<f64>> {
    let svd = FullRankSvd::new(ds.a())?;
    let mut c = svd.u.tr_mul(ds.b());
    c.component_div_assign(&svd.sigma);
    Ok(svd.v_t.tr_mul(&c))
}

/// Synthetic regression problem with Student-t design.
#[derive(Clone, Debug)]
pub struct RegressionInstance {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub x_true: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub n: usize,
    pub d: usize,
    pub dof: f64,
    pub noise_sigma: f64,
    /// Standard deviation of the entries of `x_true`.
    #[serde(default = "default_signal_scale")]
    pub signal_scale: f64,
}

fn default_signal_scale() -> f64 {
    1.0
}

/// `A` has i.i.d. Student-t(dof) entries and `b = A x_true + sigma * noise`
/// with `x_true ~ N(0, signal_scale^2 I)`.
pub fn generate_regression_instance(spec: &InstanceSpec, seed: u64) -> Result<RegressionInstance> {
    if !(spec.dof > 0.0 && spec.dof.is_finite()) {
        return Err(invalid(format!(
            "degrees of freedom must be positive, got {}",
            spec.dof
        )));
    }
    if spec.n <= spec.d {
        return Err(invalid(format!("need N > d, got N = {}, d = {}", spec.n, spec.d)));
    }
    if !(spec.noise_sigma >= 0.0) || !(spec.signal_scale >= 0.0) {
        return Err(invalid("noise and signal scales must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = StudentT::new(spec.dof).map_err(|e| invalid(e.to_string()))?;
    // column-major fill, so column j is drawn contiguously
    let a = DMatrix::from_fn(spec.n, spec.d, |_, _| t.sample(&mut rng));
    let x_true = DVector::from_fn(spec.d, |_, _| spec.signal_scale * std_normal(&mut rng));
    let noise = DVector::from_fn(spec.n, |_, _| std_normal(&mut rng));
    let b = &a * &x_true + noise * spec.noise_sigma;
    Ok(RegressionInstance { a, b, x_true })
}

/// Largest eigenvalue magnitude of a symmetric matrix.
pub fn symmetric_spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    match nalgebra::SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000) {
        Some(eig) => eig.eigenvalues.amax(),
        None => power_iteration(m, 1e-10, 10_000),
    }
}

/// Dominant eigenvalue magnitude of a symmetric matrix by power iteration.
pub fn power_iteration(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = m.nrows();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = w / norm;
        if (next - lambda).abs() <= tol * next {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// `sigma_max(A)` through the SVD.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().singular_values().max()
}

/// `sigma_max(A)` by power iteration on `A^T A`.
pub fn spectral_norm_power(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    power_iteration(&a.tr_mul(a), tol, max_iter).sqrt()
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::Parse(format!(
                    "{}: row {} has {} fields, expected {c}",
                    path.display(),
                    line + 1,
                    record.len()
                )))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse(format!("{}: row {}: bad number {field:?}", path.display(), line + 1)))?;
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Parse(format!("{}: empty matrix", path.display())))?;
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Reads a vector stored one entry per line, or as a single row.
pub fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix_csv(path)?;
    if m.ncols() == 1 || m.nrows() == 1 {
        Ok(DVector::from_iterator(m.len(), m.iter().copied()))
    } else {
        Err(Error::Parse(format!(
            "{}: expected a vector, found a {}x{} matrix",
            path.display(),
            m.nrows(),
            m.ncols()
        )))
    }
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in m.row_iter() {
        writer.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_vector_csv(path: &Path, v: &DVector<f64>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for x in v.iter() {
        writer.write_record([format!("{x:e}")])?;
    }
    writer.flush()?;
    Ok(())
}
