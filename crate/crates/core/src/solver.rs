//! Steepest descent driven by exact, sketched, or network-aggregated
//! gradients.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distribution::SamplingDistribution;
use crate::error::{invalid, Error, Result};
use crate::expansion::ExpansionNetwork;
use crate::linalg::{partition, spectral_norm_power, OrthonormalBasis, PartitionedDataset};
use crate::sketching::{
    draw_sketch, embedding_error, gaussian_sketch_gradient, sketch_gradient, BlockSrht, SketchDraw,
};
use crate::straggler::{simulate_round, ResponseMode, RoundOutcome, RuntimeModel};

/// Floor applied to the log residual when the iterate is exact.
pub const LOG_RESIDUAL_FLOOR: f64 = -16.0;

/// `2 A^T (A x - b)`.
pub fn gradient(ds: &PartitionedDataset, x: &DVector<f64>) -> DVector<f64> {
    ds.a().tr_mul(&(ds.a() * x - ds.b())) * 2.0
}

/// `2 A_i^T (A_i x - b_i)`.
pub fn partial_gradient(ds: &PartitionedDataset, block: usize, x: &DVector<f64>) -> DVector<f64> {
    let a = ds.block_a(block);
    a.tr_mul(&(a * x - ds.block_b(block))) * 2.0
}

/// `g_i / (q induced_i)`, the gradient of the encoded block held by a
/// server of the network.
pub fn encoded_partial_gradient(
    net: &ExpansionNetwork,
    ds: &PartitionedDataset,
    block: usize,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let p = net.induced().prob(block);
    if p <= 0.0 {
        return Err(invalid(format!("block {block} is not replicated")));
    }
    Ok(partial_gradient(ds, block, x) / (net.q() as f64 * p))
}

/// Sum of the encoded partial gradients of the responders.
///
/// With a deadline the number of responders varies, and the sum is
/// rescaled by `q / |S|` so that it keeps the normalization of `q` responses.
pub fn aggregate(
    outcome: &RoundOutcome,
    ds: &PartitionedDataset,
    net: &ExpansionNetwork,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    if outcome.responders.is_empty() {
        return Err(Error::NoResponders);
    }
    let mut g = DVector::zeros(ds.d());
    for &block in &outcome.responders {
        g += encoded_partial_gradient(net, ds, block, x)?;
    }
    if let ResponseMode::Deadline(_) = outcome.mode {
        g *= net.q() as f64 / outcome.responders.len() as f64;
    }
    Ok(g)
}

/// The responders of a round as a sketch over the induced distribution,
/// normalized by the number of responses actually received.
pub fn induced_sketch(outcome: &RoundOutcome, net: &ExpansionNetwork) -> Result<SketchDraw> {
    if outcome.responders.is_empty() {
        return Err(Error::NoResponders);
    }
    SketchDraw::from_indices(net.induced(), outcome.responders.clone())
}

/// Exact line search step `<A g, A x - b> / ||A g||^2`, zero when `A g = 0`.
pub fn optimal_step(ds: &PartitionedDataset, g: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let ag = ds.a() * g;
    let denom = ag.norm_squared();
    if denom == 0.0 {
        return 0.0;
    }
    ag.dot(&(ds.a() * x - ds.b())) / denom
}

/// `||A x - b||^2`.
pub fn objective(ds: &PartitionedDataset, x: &DVector<f64>) -> f64 {
    (ds.a() * x - ds.b()).norm_squared()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepPolicy {
    Fixed {
        xi: f64,
    },
    /// `scale * 2 / sigma_max(A)^2`.
    Conservative {
        scale: f64,
    },
    /// Exact line search on the full objective.
    Optimal,
    /// `1 / (eta s)` at iteration `s = 1, 2, ...`.
    Diminishing {
        eta: f64,
    },
}

impl StepPolicy {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepPolicy::Fixed { xi } => xi > 0.0 && xi.is_finite(),
            StepPolicy::Conservative { scale } => scale > 0.0 && scale.is_finite(),
            StepPolicy::Optimal => true,
            StepPolicy::Diminishing { eta } => eta > 0.0 && eta.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid step policy {self:?}")))
        }
    }
}

/// One gradient estimate together with what produced it.
#[derive(Clone, Debug)]
pub struct GradientSample {
    pub g: DVector<f64>,
    /// Blocks contributing to the estimate, with repetition.
    pub responders: Vec<usize>,
    /// `|| I - U^T S^T S U ||_2` of the estimate's sketch, when cheap to know.
    pub embedding_error: Option<f64>,
}

/// Source of the gradient used at each iteration.
pub trait GradientOracle {
    fn estimate<R: Rng + ?Sized>(
        &mut self,
        ds: &PartitionedDataset,
        x: &DVector<f64>,
        rng: &mut R,
    ) -> Result<GradientSample>;

    /// Embedding errors are measured when this basis is present.
    fn set_basis(&mut self, _basis: Option<OrthonormalBasis>) {}
}

/// Full gradient, i.e. plain steepest descent.
#[derive(Clone, Debug, Default)]
pub struct ExactOracle;

impl GradientOracle for ExactOracle {
    fn estimate<R: Rng + ?Sized>(
        &mut self,
        ds: &PartitionedDataset,
        x: &DVector<f64>,
        _rng: &mut R,
    ) -> Result<GradientSample> {
        Ok(GradientSample {
            g: gradient(ds, x),
            responders: (0..ds.blocks()).collect(),
            embedding_error: Some(0.0),
        })
    }
}

/// Sketches drawn directly from a block distribution.
#[derive(Clone, Debug)]
pub struct BlockSamplingOracle {
    pub dist: SamplingDistribution,
    pub q: usize,
    pub basis: Option<OrthonormalBasis>,
}

impl GradientOracle for BlockSamplingOracle {
    fn estimate<R: Rng + ?Sized>(
        &mut self,
        ds: &PartitionedDataset,
        x: &DVector<f64>,
        rng: &mut R,
    ) -> Result<GradientSample> {
        let draw = draw_sketch(&self.dist, self.q, ds, rng)?;
        Ok(GradientSample {
            g: sketch_gradient(&draw, ds, x),
            embedding_error: self.basis.as_ref().map(|u| embedding_error(&draw, u, ds)),
            responders: draw.sampled().to_vec(),
        })
    }

    fn set_basis(&mut self, basis: Option<OrthonormalBasis>) {
        self.basis = basis;
    }
}

/// Responses of a simulated expansion network.
#[derive(Clone, Debug)]
pub struct NetworkOracle {
    pub net: ExpansionNetwork,
    pub model: RuntimeModel,
    pub mode: ResponseMode,
    pub basis: Option<OrthonormalBasis>,
}

impl GradientOracle for NetworkOracle {
    fn estimate<R: Rng + ?Sized>(
        &mut self,
        ds: &PartitionedDataset,
        x: &DVector<f64>,
        rng: &mut R,
    ) -> Result<GradientSample> {
        let outcome = simulate_round(&self.net, &self.model, self.mode, rng)?;
        let g = aggregate(&outcome, ds, &self.net, x)?;
        let embedding_error = match &self.basis {
            Some(u) => Some(embedding_error(&induced_sketch(&outcome, &self.net)?, u, ds)),
            None => None,
        };
        Ok(GradientSample {
            g,
            responders: outcome.responders,
            embedding_error,
        })
    }

    fn set_basis(&mut self, basis: Option<OrthonormalBasis>) {
        self.basis = basis;
    }
}

/// A fresh dense Gaussian sketch with `r` rows per iteration.
#[derive(Clone, Debug)]
pub struct GaussianOracle {
    pub r: usize,
}

impl GradientOracle for GaussianOracle {
    fn estimate<R: Rng + ?Sized>(
        &mut self,
        ds: &PartitionedDataset,
        x: &DVector<f64>,
        rng: &mut R,
    ) -> Result<GradientSample> {
        Ok(GradientSample {
            g: gaussian_sketch_gradient(self.r, ds, x, rng),
            responders: Vec::new(),
            embedding_error: None,
        })
    }
}

/// Uniform block sampling of the randomized Hadamard mixed data.
#[derive(Clone, Debug)]
pub struct BlockSrhtOracle {
    pub srht: BlockSrht,
    pub q: usize,
}

impl GradientOracle for BlockSrhtOracle {
    fn estimate<R: Rng + ?Sized>(
        &mut self,
        _ds: &PartitionedDataset,
        x: &DVector<f64>,
        rng: &mut R,
    ) -> Result<GradientSample> {
        let draw = self.srht.draw(self.q, rng)?;
        Ok(GradientSample {
            g: sketch_gradient(&draw, self.srht.mixed(), x),
            responders: draw.sampled().to_vec(),
            embedding_error: None,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord {
    /// Iteration `s`, starting at 1; the step maps `x^[s-1]` to `x^[s]`.
    pub iter: usize,
    pub step_size: f64,
    pub q_responded: usize,
    #[serde(skip)]
    pub responders: Vec<usize>,
    #[serde(skip)]
    pub g_hat: DVector<f64>,
    /// `||A x^[s] - b||^2`.
    pub objective: f64,
    /// `||g - g_hat||` at `x^[s-1]`.
    pub grad_error: f64,
    /// `2 eps ||A|| ||A x^[s-1] - b||`, when the embedding error is known.
    pub grad_error_bound: Option<f64>,
    pub embedding_error: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SolverRun {
    /// `x^[0], ..., x^[S]`.
    pub iterates: Vec<DVector<f64>>,
    pub records: Vec<IterationRecord>,
    /// Row count `N` of the data the run was solved on.
    pub rows: usize,
    pub seed: Option<u64>,
}

impl SolverRun {
    pub fn final_iterate(&self) -> &DVector<f64> {
        self.iterates.last().expect("a run has its starting point")
    }

    /// Iterations whose gradient error exceeded the known bound, with a
    /// relative slack for rounding.
    pub fn bound_violations(&self, slack: f64) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| matches!(r.grad_error_bound, Some(b) if r.grad_error > b * (1.0 + slack) + f64::MIN_POSITIVE))
            .map(|r| r.iter)
            .collect()
    }

    /// Telemetry table; the residual column needs the exact solution.
    pub fn write_csv<W: Write>(&self, out: W, x_star: &DVector<f64>) -> Result<()> {
        let residual = residual_metric(self, x_star);
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "iter",
            "step_size",
            "q_responded",
            "log10_residual",
            "objective",
            "grad_error_bound_lhs",
            "grad_error_bound_rhs",
        ])?;
        for r in &self.records {
            w.write_record([
                r.iter.to_string(),
                format!("{:e}", r.step_size),
                r.q_responded.to_string(),
                format!("{:.12}", residual[r.iter]),
                format!("{:e}", r.objective),
                if r.grad_error.is_nan() {
                    String::new()
                } else {
                    format!("{:e}", r.grad_error)
                },
                r.grad_error_bound.map(|b| format!("{b:e}")).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Settings shared by all solver runs.
#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub policy: StepPolicy,
    pub iterations: usize,
    pub x0: Option<DVector<f64>>,
    /// Measure `||g - g_hat||` against `2 eps ||A|| ||Ax - b||`; costs one
    /// full gradient per iteration.
    pub track_bound: bool,
}

impl SolveOptions {
    pub fn new(policy: StepPolicy, iterations: usize) -> Self {
        Self {
            policy,
            iterations,
            x0: None,
            track_bound: false,
        }
    }
}

/// Runs `iterations` steps of `x <- x - xi_s g_hat`.
pub fn solve<O: GradientOracle, R: Rng + ?Sized>(
    ds: &PartitionedDataset,
    oracle: &mut O,
    opts: &SolveOptions,
    rng: &mut R,
) -> Result<SolverRun> {
    run_descent(ds, opts, rng, |x, rng| oracle.estimate(ds, x, rng))
}

fn run_descent<R, F>(ds: &PartitionedDataset, opts: &SolveOptions, rng: &mut R, mut estimate: F) -> Result<SolverRun>
where
    R: Rng + ?Sized,
    F: FnMut(&DVector<f64>, &mut R) -> Result<GradientSample>,
{
    opts.policy.validate()?;
    let x0 = match &opts.x0 {
        Some(x) if x.len() != ds.d() => {
            return Err(Error::DimensionMismatch(format!(
                "starting point has {} entries, expected {}",
                x.len(),
                ds.d()
            )))
        }
        Some(x) => x.clone(),
        None => DVector::zeros(ds.d()),
    };
    let sigma_max = if opts.track_bound || matches!(opts.policy, StepPolicy::Conservative { .. }) {
        spectral_norm_power(ds.a(), 1e-10, 10_000)
    } else {
        0.0
    };
    let mut x = x0.clone();
    let mut iterates = Vec::with_capacity(opts.iterations + 1);
    iterates.push(x0);
    let mut records = Vec::with_capacity(opts.iterations);
    for s in 1..=opts.iterations {
        let sample = estimate(&x, rng)?;
        let (grad_error, grad_error_bound) = if opts.track_bound {
            let err = (gradient(ds, &x) - &sample.g).norm();
            let bound = sample
                .embedding_error
                .map(|eps| 2.0 * eps * sigma_max * (ds.a() * &x - ds.b()).norm());
            (err, bound)
        } else {
            (f64::NAN, None)
        };
        let xi = match opts.policy {
            StepPolicy::Fixed { xi } => xi,
            StepPolicy::Conservative { scale } => scale * 2.0 / (sigma_max * sigma_max),
            StepPolicy::Optimal => optimal_step(ds, &sample.g, &x),
            StepPolicy::Diminishing { eta } => 1.0 / (eta * s as f64),
        };
        x.axpy(-xi, &sample.g, 1.0);
        records.push(IterationRecord {
            iter: s,
            step_size: xi,
            q_responded: sample.responders.len(),
            responders: sample.responders,
            g_hat: sample.g,
            objective: objective(ds, &x),
            grad_error,
            grad_error_bound,
            embedding_error: sample.embedding_error,
        });
        iterates.push(x.clone());
    }
    Ok(SolverRun {
        iterates,
        records,
        rows: ds.n(),
        seed: None,
    })
}

/// The expanded, encoded data `(Psi, psi)`: one block per server, equal to
/// its assigned block scaled by the encoding factor.
pub fn expanded_dataset(net: &ExpansionNetwork, ds: &PartitionedDataset) -> Result<PartitionedDataset> {
    if net.blocks() != ds.blocks() {
        return Err(Error::DimensionMismatch(format!(
            "network over {} blocks, dataset has {}",
            net.blocks(),
            ds.blocks()
        )));
    }
    let tau = ds.tau();
    let m = net.servers();
    let mut psi_a = DMatrix::zeros(m * tau, ds.d());
    let mut psi_b = DVector::zeros(m * tau);
    for (server, &block) in net.assignment().iter().enumerate() {
        let g = net.encoding_scales()[block];
        psi_a.rows_mut(server * tau, tau).copy_from(&(ds.block_a(block) * g));
        psi_b.rows_mut(server * tau, tau).copy_from(&(ds.block_b(block) * g));
    }
    partition(psi_a, psi_b, m)
}

/// Mini-batch stochastic descent on the encoded data, with `q` distinct
/// encoded blocks drawn uniformly per step.
pub fn solve_reference_ssd<R: Rng + ?Sized>(
    encoded: &PartitionedDataset,
    q: usize,
    opts: &SolveOptions,
    rng: &mut R,
) -> Result<SolverRun> {
    let total = encoded.blocks();
    if q == 0 || q > total {
        return Err(invalid(format!("cannot draw {q} of {total} encoded blocks")));
    }
    run_descent(encoded, opts, rng, |x, rng| {
        let picks = index::sample(rng, total, q).into_vec();
        let mut g = DVector::zeros(encoded.d());
        for &j in &picks {
            g += partial_gradient(encoded, j, x);
        }
        Ok(GradientSample {
            g,
            responders: picks,
            embedding_error: None,
        })
    })
}

/// `log10(||x* - x^[s]|| / sqrt(N))` for every iterate, floored at -16.
pub fn residual_metric(run: &SolverRun, x_star: &DVector<f64>) -> Vec<f64> {
    run.iterates.iter().map(|x| log_residual(x, x_star, run.rows)).collect()
}

/// `log10(||x* - x|| / sqrt(n))`, floored at -16.
pub fn log_residual(x: &DVector<f64>, x_star: &DVector<f64>, n: usize) -> f64 {
    let r = (x_star - x).norm() / (n as f64).sqrt();
    if r > 0.0 {
        r.log10().max(LOG_RESIDUAL_FLOOR)
    } else {
        LOG_RESIDUAL_FLOOR
    }
}
