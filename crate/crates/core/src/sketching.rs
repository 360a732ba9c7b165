//! Block leverage score sketches, their weighted form, and the Gaussian and
//! block-SRHT baselines.
//!
//! A block sketch is kept as a list of `(block, scale)` pairs. The implied
//! `q tau x N` matrix is `(D Omega) (x) I_tau` and is never formed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::distribution::{check_support, DistributionKind, SamplingDistribution};
use crate::error::{invalid, Error, Result};
use crate::linalg::{partition, symmetric_spectral_norm, OrthonormalBasis, PartitionedDataset};
use crate::rng::std_normal;

/// Anything that acts as a block-row selection with rescaling.
pub trait BlockSketch {
    /// `(block, scale)` pairs, one per row block of the sketch.
    fn terms(&self) -> Vec<(usize, f64)>;

    /// Row blocks in the sketched matrix.
    fn sketch_blocks(&self) -> usize;

    /// Rows of the sketched matrix.
    fn sketch_rows(&self, tau: usize) -> usize {
        self.sketch_blocks() * tau
    }
}

/// `q` blocks sampled with replacement, with scales `1/sqrt(q p_i)`.
#[derive(Clone, Debug)]
pub struct SketchDraw {
    sampled: Vec<usize>,
    scales: Vec<f64>,
    source: SamplingDistribution,
}

impl SketchDraw {
    /// A draw with prescribed block indices.
    pub fn from_indices(source: &SamplingDistribution, sampled: Vec<usize>) -> Result<Self> {
        if sampled.is_empty() {
            return Err(invalid("a sketch needs at least one block"));
        }
        let q = sampled.len() as f64;
        let mut scales = Vec::with_capacity(sampled.len());
        for &i in &sampled {
            if i >= source.len() {
                return Err(invalid(format!("block {i} out of range for {} blocks", source.len())));
            }
            let p = source.prob(i);
            if p <= 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "block {i} was drawn but has zero probability"
                )));
            }
            scales.push(1.0 / (q * p).sqrt());
        }
        Ok(Self {
            sampled,
            scales,
            source: source.clone(),
        })
    }

    pub fn sampled(&self) -> &[usize] {
        &self.sampled
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn source(&self) -> &SamplingDistribution {
        &self.source
    }

    pub fn q(&self) -> usize {
        self.sampled.len()
    }

    /// Number of distinct sampled blocks.
    pub fn distinct_count(&self) -> usize {
        let mut v = self.sampled.clone();
        v.sort_unstable();
        v.dedup();
        v.len()
    }
}

impl BlockSketch for SketchDraw {
    fn terms(&self) -> Vec<(usize, f64)> {
        self.sampled.iter().copied().zip(self.scales.iter().copied()).collect()
    }

    fn sketch_blocks(&self) -> usize {
        self.sampled.len()
    }
}

/// `q` i.i.d. block draws from `dist`, each rescaled by `1 / sqrt(q p_i)`.
pub fn draw_sketch<R: Rng + ?Sized>(
    dist: &SamplingDistribution,
    q: usize,
    ds: &PartitionedDataset,
    rng: &mut R,
) -> Result<SketchDraw> {
    if dist.len() != ds.blocks() {
        return Err(Error::DimensionMismatch(format!(
            "distribution over {} blocks, dataset has {}",
            dist.len(),
            ds.blocks()
        )));
    }
    if q == 0 {
        return Err(invalid("q must be positive"));
    }
    if q * ds.tau() <= ds.d() {
        return Err(Error::SketchTooSmall {
            rows: q * ds.tau(),
            d: ds.d(),
        });
    }
    let sampler = dist.sampler();
    let sampled = (0..q).map(|_| sampler.sample(rng)).collect();
    SketchDraw::from_indices(dist, sampled)
}

/// Like [`draw_sketch`], but first checks that `approx` covers the support
/// of the target scores.
pub fn draw_sketch_checked<R: Rng + ?Sized>(
    target: &SamplingDistribution,
    approx: &SamplingDistribution,
    q: usize,
    ds: &PartitionedDataset,
    rng: &mut R,
) -> Result<SketchDraw> {
    check_support(target, approx)?;
    draw_sketch(approx, q, ds, rng)
}

/// `(S A, S b)` with row block `j` equal to `scale_j * A_{block_j}`.
pub fn apply_sketch<S: BlockSketch + ?Sized>(sketch: &S, ds: &PartitionedDataset) -> (DMatrix<f64>, DVector<f64>) {
    let tau = ds.tau();
    let terms = sketch.terms();
    let mut a_hat = DMatrix::zeros(terms.len() * tau, ds.d());
    let mut b_hat = DVector::zeros(terms.len() * tau);
    for (j, (block, scale)) in terms.into_iter().enumerate() {
        a_hat.rows_mut(j * tau, tau).copy_from(&(ds.block_a(block) * scale));
        b_hat.rows_mut(j * tau, tau).copy_from(&(ds.block_b(block) * scale));
    }
    (a_hat, b_hat)
}

/// Distinct sampled blocks with their multiplicities.
#[derive(Clone, Debug)]
pub struct WeightedSketchDraw {
    distinct: Vec<usize>,
    weights: Vec<usize>,
    scales: Vec<f64>,
    q: usize,
}

impl WeightedSketchDraw {
    pub fn distinct(&self) -> &[usize] {
        &self.distinct
    }

    pub fn weights(&self) -> &[usize] {
        &self.weights
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn q_bar(&self) -> usize {
        self.distinct.len()
    }

    /// Compression ratio `q / q_bar`.
    pub fn zeta(&self) -> f64 {
        self.q as f64 / self.distinct.len() as f64
    }
}

impl BlockSketch for WeightedSketchDraw {
    fn terms(&self) -> Vec<(usize, f64)> {
        self.distinct.iter().copied().zip(self.scales.iter().copied()).collect()
    }

    fn sketch_blocks(&self) -> usize {
        self.distinct.len()
    }
}

/// Merges repeated blocks; block `i` sampled `w` times gets scale
/// `sqrt(w / (q p_i))`, with `p` the draw's source distribution.
pub fn weighted_collapse(draw: &SketchDraw) -> WeightedSketchDraw {
    let mut sorted = draw.sampled.clone();
    sorted.sort_unstable();
    let mut distinct = Vec::new();
    let mut weights: Vec<usize> = Vec::new();
    for i in sorted {
        if distinct.last() == Some(&i) {
            *weights.last_mut().unwrap() += 1;
        } else {
            distinct.push(i);
            weights.push(1);
        }
    }
    let q = draw.q() as f64;
    let scales = distinct
        .iter()
        .zip(&weights)
        .map(|(&i, &w)| (w as f64 / (q * draw.source.prob(i))).sqrt())
        .collect();
    WeightedSketchDraw {
        distinct,
        weights,
        scales,
        q: draw.q(),
    }
}

/// `sum_j s_j^2 M_{b_j}^T M_{b_j}` for an `N x c` matrix `m`.
fn projected_gram<S: BlockSketch + ?Sized>(sketch: &S, m: &DMatrix<f64>, tau: usize) -> DMatrix<f64> {
    let mut gram = DMatrix::zeros(m.ncols(), m.ncols());
    for (block, scale) in sketch.terms() {
        let rows = m.rows(block * tau, tau);
        gram.gemm_tr(scale * scale, &rows, &rows, 1.0);
    }
    gram
}

/// `A^T S^T S A`.
pub fn sketch_gram<S: BlockSketch + ?Sized>(sketch: &S, ds: &PartitionedDataset) -> DMatrix<f64> {
    projected_gram(sketch, ds.a(), ds.tau())
}

/// `U^T S^T S U`.
pub fn sketch_basis_gram<S: BlockSketch + ?Sized>(
    sketch: &S,
    basis: &OrthonormalBasis,
    ds: &PartitionedDataset,
) -> DMatrix<f64> {
    projected_gram(sketch, basis.u(), ds.tau())
}

/// Sketched least squares gradient `2 A^T S^T S (A x - b)`.
pub fn sketch_gradient<S: BlockSketch + ?Sized>(sketch: &S, ds: &PartitionedDataset, x: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(ds.d());
    for (block, scale) in sketch.terms() {
        let a = ds.block_a(block);
        let r = a * x - ds.block_b(block);
        g.gemv_tr(2.0 * scale * scale, &a, &r, 1.0);
    }
    g
}

/// `|| I_d - U^T S^T S U ||_2`.
pub fn embedding_error<S: BlockSketch + ?Sized>(sketch: &S, basis: &OrthonormalBasis, ds: &PartitionedDataset) -> f64 {
    deviation_from_identity(sketch_basis_gram(sketch, basis, ds))
}

/// `|| I - M ||_2` for symmetric `M`.
pub fn deviation_from_identity(mut m: DMatrix<f64>) -> f64 {
    m.neg_mut();
    for i in 0..m.nrows() {
        m[(i, i)] += 1.0;
    }
    symmetric_spectral_norm(&m)
}

/// `K - sum_i (1 - p_i)^q`, the expected number of distinct blocks.
pub fn expected_distinct(dist: &SamplingDistribution, q: usize) -> f64 {
    let q = q as i32;
    dist.len() as f64 - dist.probs().iter().map(|p| (1.0 - p).powi(q)).sum::<f64>()
}

/// Misestimated scores with `min_i p_i / p~_i >= beta`.
///
/// Each block is independently down-weighted by `beta` with probability one
/// half before renormalizing, so `p~_i / p_i` ranges over `[beta, 1/beta]`.
pub fn perturb_distribution<R: Rng + ?Sized>(
    dist: &SamplingDistribution,
    beta: f64,
    rng: &mut R,
) -> Result<SamplingDistribution> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(invalid(format!("beta must lie in (0, 1], got {beta}")));
    }
    let weights: Vec<f64> = dist
        .probs()
        .iter()
        .map(|p| if rng.random_bool(0.5) { p * beta } else { *p })
        .collect();
    if beta == 1.0 {
        return Ok(dist.clone());
    }
    SamplingDistribution::from_weights(&weights, DistributionKind::Approximate)
}

/// Dense `r x n` Gaussian sketch with `N(0, 1/r)` entries.
pub fn gaussian_sketch<R: Rng + ?Sized>(r: usize, n: usize, rng: &mut R) -> DMatrix<f64> {
    let scale = 1.0 / (r as f64).sqrt();
    DMatrix::from_fn(r, n, |_, _| scale * std_normal(rng))
}

/// `S^T S v` for a fresh `r x N` Gaussian sketch, generated one row at a time.
pub fn gaussian_sketch_normal_apply<R: Rng + ?Sized>(r: usize, v: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    let n = v.len();
    let mut row = DVector::zeros(n);
    let mut out = DVector::zeros(n);
    for _ in 0..r {
        row.iter_mut().for_each(|x| *x = std_normal(rng));
        let y = row.dot(v);
        out.axpy(y, &row, 1.0);
    }
    out / r as f64
}

/// Gradient `2 A^T S^T S (A x - b)` for a fresh Gaussian sketch.
pub fn gaussian_sketch_gradient<R: Rng + ?Sized>(
    r: usize,
    ds: &PartitionedDataset,
    x: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let residual = ds.a() * x - ds.b();
    ds.a().tr_mul(&gaussian_sketch_normal_apply(r, &residual, rng)) * 2.0
}

/// `|| I_d - U^T S^T S U ||_2` for a fresh Gaussian sketch.
pub fn gaussian_embedding_error<R: Rng + ?Sized>(r: usize, basis: &OrthonormalBasis, rng: &mut R) -> f64 {
    let s = gaussian_sketch(r, basis.n(), rng);
    let su = s * basis.u();
    deviation_from_identity(su.tr_mul(&su))
}

/// In-place unnormalized fast Walsh-Hadamard transform.
pub fn fwht(x: &mut [f64]) -> Result<()> {
    let n = x.len();
    if !n.is_power_of_two() {
        return Err(invalid(format!("transform length {n} is not a power of two")));
    }
    let mut h = 1;
    while h < n {
        for start in (0..n).step_by(2 * h) {
            for i in start..start + h {
                let (a, b) = (x[i], x[i + h]);
                x[i] = a + b;
                x[i + h] = a - b;
            }
        }
        h *= 2;
    }
    Ok(())
}

/// Randomized Hadamard mixing of a partitioned dataset for block-SRHT.
///
/// The rows are zero padded to a power of two, multiplied by random signs,
/// transformed by the orthonormal Hadamard matrix, and re-blocked with the
/// original block size. Sampling the mixed blocks uniformly with scale
/// `sqrt(K'/q)` gives the block-SRHT sketch.
#[derive(Clone, Debug)]
pub struct BlockSrht {
    mixed: PartitionedDataset,
}

impl BlockSrht {
    pub fn new<R: Rng + ?Sized>(ds: &PartitionedDataset, rng: &mut R) -> Result<Self> {
        let n2 = ds.n().next_power_of_two();
        let signs: Vec<f64> = (0..n2).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let norm = 1.0 / (n2 as f64).sqrt();
        let mix = |col: &mut Vec<f64>| -> Result<()> {
            col.resize(n2, 0.0);
            col.iter_mut().zip(&signs).for_each(|(v, s)| *v *= s);
            fwht(col)?;
            col.iter_mut().for_each(|v| *v *= norm);
            Ok(())
        };
        let mut a = DMatrix::zeros(n2, ds.d());
        for j in 0..ds.d() {
            let mut col: Vec<f64> = ds.a().column(j).iter().copied().collect();
            mix(&mut col)?;
            a.column_mut(j).copy_from_slice(&col);
        }
        let mut b: Vec<f64> = ds.b().iter().copied().collect();
        mix(&mut b)?;
        let blocks = n2.div_ceil(ds.tau());
        let mixed = partition(a, DVector::from_vec(b), blocks)?;
        debug_assert_eq!(mixed.tau(), ds.tau());
        Ok(Self { mixed })
    }

    /// The mixed dataset `(H D A, H D b)`, re-blocked.
    pub fn mixed(&self) -> &PartitionedDataset {
        &self.mixed
    }

    pub fn blocks(&self) -> usize {
        self.mixed.blocks()
    }

    /// `q` uniform block draws over the mixed data, each with scale `sqrt(K'/q)`.
    pub fn draw<R: Rng + ?Sized>(&self, q: usize, rng: &mut R) -> Result<SketchDraw> {
        let uniform = SamplingDistribution::uniform(self.mixed.blocks())?;
        draw_sketch(&uniform, q, &self.mixed, rng)
    }
}
