//! Per-trial data, network design and gradient oracles.

use anyhow::{bail, Context, Result};
use blocklev::expansion::{build_network, design_plan, phi_for_servers, ExpansionNetwork};
use blocklev::linalg::{
    dataset_block_scores, exact_solution, generate_regression_instance, orthonormal_basis, partition, read_matrix_csv,
    read_vector_csv, InstanceSpec,
};
use blocklev::sketching::BlockSrht;
use blocklev::solver::{
    BlockSamplingOracle, BlockSrhtOracle, ExactOracle, GaussianOracle, GradientOracle, GradientSample, NetworkOracle,
};
use blocklev::straggler::{ResponseMode, RuntimeModel};
use blocklev::{OrthonormalBasis, PartitionedDataset, SamplingDistribution};
use nalgebra::DVector;
use rand::Rng;

use crate::config::{check_sketch_rows, ExperimentConfig, InstanceSource, NetworkConfig, SketchKind};

pub struct Problem {
    pub ds: PartitionedDataset,
    pub x_star: DVector<f64>,
    pub scores: SamplingDistribution,
}

/// Synthetic instances are redrawn per trial from `seed + trial`; CSV data
/// is the same in every trial.
pub fn load_problem(cfg: &ExperimentConfig, trial: u64) -> Result<Problem> {
    let ds = load_dataset(cfg, trial)?;
    check_sketch_rows(cfg.q, ds.tau(), ds.d())?;
    let x_star = exact_solution(&ds)?;
    let scores = dataset_block_scores(&ds)?;
    Ok(Problem { ds, x_star, scores })
}

pub fn load_dataset(cfg: &ExperimentConfig, trial: u64) -> Result<PartitionedDataset> {
    let k = cfg.instance.blocks;
    match &cfg.instance.source {
        InstanceSource::Synthetic {
            n,
            d,
            dof,
            noise_sigma,
            signal_scale,
            seed,
        } => {
            let spec = InstanceSpec {
                n: *n,
                d: *d,
                dof: *dof,
                noise_sigma: *noise_sigma,
                signal_scale: *signal_scale,
            };
            let inst = generate_regression_instance(&spec, seed.wrapping_add(trial))?;
            Ok(partition(inst.a, inst.b, k)?)
        }
        InstanceSource::Csv { a, b } => {
            let a_mat = read_matrix_csv(a).with_context(|| format!("reading {}", a.display()))?;
            let b_vec = match b {
                Some(p) => read_vector_csv(p).with_context(|| format!("reading {}", p.display()))?,
                None => DVector::zeros(a_mat.nrows()),
            };
            Ok(partition(a_mat, b_vec, k)?)
        }
    }
}

/// Runtime model of one block's task and the straggling probability the
/// design targets: `1 - F~(T)` at the deadline, otherwise the value at which
/// the ideal counts fill the servers.
pub fn design_inputs(
    net: &NetworkConfig,
    scores: &SamplingDistribution,
    tau: usize,
    n: usize,
) -> Result<(RuntimeModel, f64)> {
    let model = net.model()?.for_blocks(tau, n)?;
    let phi = match net.deadline {
        Some(t) => deadline_phi(&model, t)?,
        None => phi_for_servers(scores, net.servers)?,
    };
    Ok((model, phi))
}

pub fn deadline_phi(model: &RuntimeModel, t: f64) -> Result<f64> {
    let phi = model.survival(t);
    if phi >= 1.0 {
        bail!("no server finishes by deadline {t}");
    }
    if phi <= 0.0 {
        bail!("every server finishes by deadline {t}, so nothing straggles");
    }
    Ok(phi)
}

pub fn network_oracle(cfg: &ExperimentConfig, net_cfg: &NetworkConfig, problem: &Problem) -> Result<NetworkOracle> {
    let (model, phi) = design_inputs(net_cfg, &problem.scores, problem.ds.tau(), problem.ds.n())?;
    let plan = design_plan(&problem.scores, phi, net_cfg.servers)
        .with_context(|| format!("designing a plan at straggling probability {phi}"))?;
    let net: ExpansionNetwork = build_network(&plan, net_cfg.servers, cfg.q)?;
    let mode = match net_cfg.deadline {
        Some(t) => ResponseMode::Deadline(t),
        None => ResponseMode::FastestQ(cfg.q),
    };
    Ok(NetworkOracle {
        net,
        model,
        mode,
        basis: None,
    })
}

pub enum Oracle {
    Exact(ExactOracle),
    Sampling(BlockSamplingOracle),
    Network(Box<NetworkOracle>),
    Gaussian(GaussianOracle),
    Srht(Box<BlockSrhtOracle>),
}

impl Oracle {
    pub fn new<R: Rng + ?Sized>(
        kind: SketchKind,
        cfg: &ExperimentConfig,
        problem: &Problem,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match kind {
            SketchKind::None => Oracle::Exact(ExactOracle),
            SketchKind::BlockLvg => match &cfg.network {
                Some(net) => Oracle::Network(Box::new(network_oracle(cfg, net, problem)?)),
                None => Oracle::Sampling(BlockSamplingOracle {
                    dist: problem.scores.clone(),
                    q: cfg.q,
                    basis: None,
                }),
            },
            SketchKind::Gaussian => Oracle::Gaussian(GaussianOracle {
                r: cfg.q * problem.ds.tau(),
            }),
            SketchKind::BlockSrht => Oracle::Srht(Box::new(BlockSrhtOracle {
                srht: BlockSrht::new(&problem.ds, rng)?,
                q: cfg.q,
            })),
        })
    }
}

impl GradientOracle for Oracle {
    fn estimate<R: Rng + ?Sized>(
        &mut self,
        ds: &PartitionedDataset,
        x: &DVector<f64>,
        rng: &mut R,
    ) -> blocklev::Result<GradientSample> {
        match self {
            Oracle::Exact(o) => o.estimate(ds, x, rng),
            Oracle::Sampling(o) => o.estimate(ds, x, rng),
            Oracle::Network(o) => o.estimate(ds, x, rng),
            Oracle::Gaussian(o) => o.estimate(ds, x, rng),
            Oracle::Srht(o) => o.estimate(ds, x, rng),
        }
    }

    fn set_basis(&mut self, basis: Option<OrthonormalBasis>) {
        match self {
            Oracle::Exact(o) => o.set_basis(basis),
            Oracle::Sampling(o) => o.set_basis(basis),
            Oracle::Network(o) => o.set_basis(basis),
            Oracle::Gaussian(o) => o.set_basis(basis),
            Oracle::Srht(o) => o.set_basis(basis),
        }
    }
}

pub fn basis(problem: &Problem) -> Result<OrthonormalBasis> {
    Ok(orthonormal_basis(&problem.ds)?)
}
