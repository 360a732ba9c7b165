//! Checkers for the structural identities and error bounds, each returning
//! a serializable report with the measured values.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::distribution::SamplingDistribution;
use crate::error::{Error, Result};
use crate::expansion::{distortion, ExpansionNetwork};
use crate::linalg::{frobenius_block_scores, OrthonormalBasis, PartitionedDataset};
use crate::sketching::{
    draw_sketch, embedding_error, sketch_gradient, sketch_gram, weighted_collapse, BlockSrht, SketchDraw,
};
use crate::solver::{gradient, GradientOracle, SolverRun};

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub check: String,
    pub params: Value,
    pub measured: Value,
    pub bound: Value,
    pub pass: bool,
}

fn rel_diff_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE)
}

fn rel_diff_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE)
}

/// Normalized block scores of the expanded encoded basis,
/// `Q_j = q / (R d) || g_i U_i ||_F^2` for server `j` holding block `i`.
pub fn flattened_scores(net: &ExpansionNetwork, basis: &OrthonormalBasis, ds: &PartitionedDataset) -> Result<Vec<f64>> {
    let fro = frobenius_block_scores(basis.u(), ds)?;
    if fro.len() != net.blocks() {
        return Err(Error::DimensionMismatch(format!(
            "network over {} blocks, dataset has {}",
            net.blocks(),
            fro.len()
        )));
    }
    let norm = net.q() as f64 / (net.servers() as f64 * basis.d() as f64);
    Ok(net
        .assignment()
        .iter()
        .map(|&i| {
            let g = net.encoding_scales()[i];
            norm * g * g * fro[i]
        })
        .collect())
}

/// The expanded basis has uniform block scores `1/R` when the plan emulates
/// the scores exactly; otherwise its distortion from uniform is at most
/// `1 / (R beta)`.
pub fn check_flattened_scores(
    net: &ExpansionNetwork,
    basis: &OrthonormalBasis,
    ds: &PartitionedDataset,
    scores: &SamplingDistribution,
) -> Result<Report> {
    let q_scores = flattened_scores(net, basis, ds)?;
    let r = net.servers() as f64;
    let beta = scores.misestimation_factor(net.induced())?;
    let uniform = SamplingDistribution::uniform(net.servers())?;
    let flat = SamplingDistribution::from_weights(&q_scores, crate::distribution::DistributionKind::Induced)?;
    let dist = distortion(&uniform, &flat)?;
    let max_dev = q_scores.iter().map(|v| (v - 1.0 / r).abs()).fold(0.0, f64::max);
    let exact = (beta - 1.0).abs() <= 1e-12 && net.plan().distortion() <= 1e-15;
    let bound = 1.0 / (r * beta);
    let pass = if exact { max_dev <= 1e-10 } else { dist <= bound };
    Ok(Report {
        check: "flattened_scores".into(),
        params: json!({"servers": net.servers(), "q": net.q(), "beta": beta}),
        measured: json!({"max_deviation_from_uniform": max_dev, "distortion": dist, "sum": q_scores.iter().sum::<f64>()}),
        bound: if exact {
            json!({"max_deviation_from_uniform": 1e-10})
        } else {
            json!({"distortion": bound})
        },
        pass,
    })
}

/// Weighted and unweighted forms of each draw give the same gradient and Gram.
pub fn check_weighted_identities(ds: &PartitionedDataset, draws: &[SketchDraw], x: &DVector<f64>) -> Report {
    let mut worst_grad: f64 = 0.0;
    let mut worst_gram: f64 = 0.0;
    let mut worst_dim = true;
    for draw in draws {
        let w = weighted_collapse(draw);
        worst_grad = worst_grad.max(rel_diff_vec(&sketch_gradient(draw, ds, x), &sketch_gradient(&w, ds, x)));
        worst_gram = worst_gram.max(rel_diff_mat(&sketch_gram(draw, ds), &sketch_gram(&w, ds)));
        worst_dim &= w.q_bar() <= draw.q() && w.q_bar() == draw.distinct_count();
    }
    Report {
        check: "weighted_identities".into(),
        params: json!({"draws": draws.len()}),
        measured: json!({"gradient_rel_diff": worst_grad, "gram_rel_diff": worst_gram, "dimension_ok": worst_dim}),
        bound: json!({"rel_diff": 1e-10}),
        pass: worst_grad <= 1e-10 && worst_gram <= 1e-10 && worst_dim,
    }
}

/// Monte Carlo mean of the diagonal of `S^T S`, one entry per block.
///
/// `S^T S = (Omega^T D^2 Omega) (x) I_tau` is block diagonal with scalar
/// blocks, so the `K` block weights determine the whole matrix.
pub fn mean_sts_block_diagonal<R: Rng + ?Sized>(
    dist: &SamplingDistribution,
    q: usize,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let sampler = dist.sampler();
    let mut acc = vec![0.0; dist.len()];
    for _ in 0..trials {
        let sampled: Vec<usize> = (0..q).map(|_| sampler.sample(rng)).collect();
        let draw = SketchDraw::from_indices(dist, sampled)?;
        for (&i, &s) in draw.sampled().iter().zip(draw.scales()) {
            acc[i] += s * s;
        }
    }
    Ok(acc.into_iter().map(|v| v / trials as f64).collect())
}

/// `E[S^T S] = I_N`: largest entrywise deviation of the Monte Carlo mean.
pub fn check_expected_sts_identity<R: Rng + ?Sized>(
    dist: &SamplingDistribution,
    q: usize,
    tau: usize,
    trials: usize,
    tolerance: f64,
    rng: &mut R,
) -> Result<Report> {
    let mean = mean_sts_block_diagonal(dist, q, trials, rng)?;
    let dev = mean.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    Ok(Report {
        check: "expected_sts_identity".into(),
        params: json!({"blocks": dist.len(), "tau": tau, "n": dist.len() * tau, "q": q, "trials": trials}),
        measured: json!({"max_abs_deviation": dev}),
        bound: json!({"max_abs_deviation": tolerance}),
        pass: dev <= tolerance,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median embedding errors of block leverage sampling and of block-SRHT at
/// equal `q`. Report only.
pub fn check_embedding_vs_srht<R: Rng + ?Sized>(
    ds: &PartitionedDataset,
    basis: &OrthonormalBasis,
    scores: &SamplingDistribution,
    qs: &[usize],
    trials: usize,
    rng: &mut R,
) -> Result<Report> {
    let mut rows = Vec::new();
    for &q in qs {
        let mut lvg = Vec::with_capacity(trials);
        let mut srht = Vec::with_capacity(trials);
        for _ in 0..trials {
            let draw = draw_sketch(scores, q, ds, rng)?;
            lvg.push(embedding_error(&draw, basis, ds));
            let h = BlockSrht::new(ds, rng)?;
            // H D A spans the same space as H D U
            let mixed_basis = OrthonormalBasis::of_matrix(h.mixed().a())?;
            let draw = h.draw(q, rng)?;
            srht.push(embedding_error(&draw, &mixed_basis, h.mixed()));
        }
        rows.push(json!({"q": q, "block_lvg_median": median(lvg), "block_srht_median": median(srht)}));
    }
    Ok(Report {
        check: "embedding_vs_srht".into(),
        params: json!({"qs": qs, "trials": trials}),
        measured: Value::Array(rows),
        bound: Value::Null,
        pass: true,
    })
}

/// Every iteration with a known embedding error satisfies
/// `||g - g_hat|| <= 2 eps ||A|| ||A x - b||`.
pub fn check_decoding_error_bound(run: &SolverRun, blocks: usize) -> Report {
    let tracked: Vec<_> = run.records.iter().filter(|r| r.grad_error_bound.is_some()).collect();
    let violations = run.bound_violations(1e-9);
    let worst_ratio = tracked
        .iter()
        .map(|r| r.grad_error / r.grad_error_bound.unwrap().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let max_eps = tracked.iter().filter_map(|r| r.embedding_error).fold(0.0, f64::max);
    Report {
        check: "decoding_error_bound".into(),
        params: json!({"iterations": run.records.len(), "tracked": tracked.len(), "blocks": blocks}),
        measured: json!({
            "violations": violations.len(),
            "first_violation": violations.first(),
            "max_lhs_over_rhs": worst_ratio,
            "max_implied_err_g": max_eps / (blocks as f64).sqrt(),
        }),
        bound: json!({"lhs_over_rhs": 1.0}),
        pass: violations.is_empty() && !tracked.is_empty(),
    }
}

/// Mean of `rounds` gradient estimates at fixed `x` against the exact
/// gradient, componentwise within `z` standard errors.
pub fn check_unbiased_gradient<O: GradientOracle, R: Rng + ?Sized>(
    ds: &PartitionedDataset,
    oracle: &mut O,
    x: &DVector<f64>,
    rounds: usize,
    z: f64,
    rng: &mut R,
) -> Result<Report> {
    let d = ds.d();
    let mut sum = DVector::zeros(d);
    let mut sum_sq = DVector::zeros(d);
    for _ in 0..rounds {
        let g = oracle.estimate(ds, x, rng)?.g;
        sum_sq += g.component_mul(&g);
        sum += g;
    }
    let n = rounds as f64;
    let mean = &sum / n;
    let exact = gradient(ds, x);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for k in 0..d {
        let var = ((sum_sq[k] / n - mean[k] * mean[k]) * n / (n - 1.0)).max(0.0);
        let tol = z * var.sqrt() / n.sqrt();
        let err = (mean[k] - exact[k]).abs();
        // a zero-variance component must match up to rounding
        let tol = tol.max(1e-10 * exact.amax().max(1.0));
        worst = worst.max(err / tol);
        ok &= err <= tol;
    }
    Ok(Report {
        check: "unbiased_gradient".into(),
        params: json!({"rounds": rounds, "z": z}),
        measured: json!({"max_error_in_standard_errors": worst * z, "relative_mean_error": rel_diff_vec(&mean, &exact)}),
        bound: json!({"standard_errors": z}),
        pass: ok,
    })
}
