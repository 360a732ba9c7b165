use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use blocklev::distribution::DistributionKind;
use blocklev::expansion::{
    delta_distortion, design_plan, distortion, phi_for_servers, replication_from_runtime, rounding_bound,
    ReplicationPlan,
};
use blocklev::linalg::dataset_block_scores;
use blocklev::rng::trial_rng;
use blocklev::sketching::{draw_sketch, expected_distinct};
use blocklev::solver::{residual_metric, solve, GradientOracle, SolveOptions};
use blocklev::verify::{
    check_decoding_error_bound, check_embedding_vs_srht, check_expected_sts_identity, check_flattened_scores,
    check_unbiased_gradient, check_weighted_identities, Report,
};
use blocklev::SamplingDistribution;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{policy_label, ExperimentConfig, SketchKind};
use crate::pipeline::{basis, deadline_phi, load_dataset, load_problem, network_oracle, Oracle, Problem};

/// Whether every assertion a command makes held.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
}

impl Status {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

fn prepare_output(cfg: &ExperimentConfig) -> Result<&Path> {
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("config.json"), cfg)?;
    Ok(dir)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize, Deserialize)]
pub struct ScoresFile {
    pub config_sha256: String,
    pub rows: usize,
    pub columns: usize,
    pub blocks: usize,
    pub tau: usize,
    pub scores: Vec<f64>,
    pub min: f64,
    pub max: f64,
    /// `(1/K) sum_i |Pi_i - 1/K|`.
    pub uniform_distortion: f64,
    pub q: usize,
    pub expected_distinct: f64,
}

pub fn scores(cfg: &ExperimentConfig) -> Result<Status> {
    let ds = load_dataset(cfg, 0)?;
    let p = dataset_block_scores(&ds)?;
    let k = p.len();
    let out = ScoresFile {
        config_sha256: cfg.hash(),
        rows: ds.raw_rows(),
        columns: ds.d(),
        blocks: k,
        tau: ds.tau(),
        scores: p.probs().to_vec(),
        min: p.probs().iter().copied().fold(f64::INFINITY, f64::min),
        max: p.probs().iter().copied().fold(0.0, f64::max),
        uniform_distortion: distortion(&p, &SamplingDistribution::uniform(k)?)?,
        q: cfg.q,
        expected_distinct: expected_distinct(&p, cfg.q),
    };
    write_json(&prepare_output(cfg)?.join("scores.json"), &out)?;
    Ok(Status::Pass)
}

#[derive(Serialize)]
struct DesignTable {
    deadline: Vec<Option<f64>>,
    /// `floor(F~(T) m)`.
    q: Vec<Option<usize>>,
    phi: Vec<f64>,
    delta: Vec<f64>,
    delta_bound: Vec<f64>,
    distortion: Vec<f64>,
    beta: Vec<f64>,
    additive_eps: Vec<f64>,
}

/// Scores from a `scores.json` when given, else from the configured data.
pub fn design(cfg: &ExperimentConfig, scores_file: Option<&PathBuf>, deadlines: &[f64]) -> Result<Status> {
    let Some(net) = &cfg.network else {
        bail!("design needs a network: pass --servers or a config with a network section");
    };
    let (p, tau, n) = match scores_file {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let f: ScoresFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let p = SamplingDistribution::new(f.scores, DistributionKind::Exact)?;
            (p, f.tau, f.blocks * f.tau)
        }
        None => {
            let ds = load_dataset(cfg, 0)?;
            (dataset_block_scores(&ds)?, ds.tau(), ds.n())
        }
    };
    ensure!(
        net.servers >= p.len(),
        "{} servers cannot hold {} blocks",
        net.servers,
        p.len()
    );
    let model = net.model()?.for_blocks(tau, n)?;
    let columns: Vec<Option<f64>> = if !deadlines.is_empty() {
        deadlines.iter().map(|&t| Some(t)).collect()
    } else {
        vec![net.deadline]
    };
    let m = net.servers;
    let mut table = DesignTable {
        deadline: Vec::new(),
        q: Vec::new(),
        phi: Vec::new(),
        delta: Vec::new(),
        delta_bound: Vec::new(),
        distortion: Vec::new(),
        beta: Vec::new(),
        additive_eps: Vec::new(),
    };
    let mut plans: Vec<ReplicationPlan> = Vec::new();
    let mut pass = true;
    for t in columns {
        let phi = match t {
            Some(t) => deadline_phi(&model, t)?,
            None => phi_for_servers(&p, m)?,
        };
        let r_hat = replication_from_runtime(&p, phi)?;
        let delta = delta_distortion(&p, phi, &r_hat)?;
        let bound = rounding_bound(&p, phi, &r_hat)?;
        let plan = design_plan(&p, phi, m)?;
        pass &= delta <= bound + 1e-12 && plan.beta() <= 1.0 + 1e-12 && plan.total() == m;
        table.deadline.push(t);
        table
            .q
            .push(t.map(|t| (model.scaled_cdf(t) * m as f64).floor() as usize));
        table.phi.push(phi);
        table.delta.push(delta);
        table.delta_bound.push(bound);
        table.distortion.push(plan.distortion());
        table.beta.push(plan.beta());
        table.additive_eps.push(plan.additive_eps());
        plans.push(plan);
    }
    let out = json!({
        "config_sha256": cfg.hash(),
        "servers": m,
        "blocks": p.len(),
        "runtime": net.runtime,
        "table": table,
        "plans": plans,
    });
    write_json(&prepare_output(cfg)?.join("plan.json"), &out)?;
    Ok(Status::from_pass(pass))
}

pub fn solve_cmd(cfg: &ExperimentConfig) -> Result<Status> {
    let problem = load_problem(cfg, 0)?;
    let mut rng = trial_rng(cfg.seed, 0);
    let mut oracle = Oracle::new(cfg.sketch, cfg, &problem, &mut rng)?;
    if cfg.track_bound {
        oracle.set_basis(Some(basis(&problem)?));
    }
    let mut opts = SolveOptions::new(cfg.policy, cfg.iterations);
    opts.track_bound = cfg.track_bound;
    let mut run = solve(&problem.ds, &mut oracle, &opts, &mut rng)?;
    run.seed = Some(cfg.seed);
    let dir = prepare_output(cfg)?;
    let path = dir.join("run.csv");
    let file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
    run.write_csv(std::io::BufWriter::new(file), &problem.x_star)?;
    let residual = residual_metric(&run, &problem.x_star);
    let violations = cfg.track_bound.then(|| run.bound_violations(1e-9).len());
    write_json(
        &dir.join("run.json"),
        &json!({
            "config_sha256": cfg.hash(),
            "seed": cfg.seed,
            "sketch": cfg.sketch,
            "policy": policy_label(&cfg.policy),
            "iterations": cfg.iterations,
            "initial_log10_residual": residual[0],
            "final_log10_residual": residual[cfg.iterations],
            "bound_violations": violations,
        }),
    )?;
    Ok(Status::from_pass(violations.unwrap_or(0) == 0))
}

/// One residual curve per (policy, sketch) pair, policies outermost.
fn trial_curves(cfg: &ExperimentConfig, trial: u64) -> Result<Vec<Vec<f64>>> {
    let problem = load_problem(cfg, trial)?;
    let base = trial_rng(cfg.seed, trial);
    let mut curves = Vec::new();
    for policy in cfg.policies() {
        for &kind in &cfg.compare_sketches {
            // every sketch sees the same random stream
            let mut rng = base.clone();
            let mut oracle = Oracle::new(kind, cfg, &problem, &mut rng)?;
            let run = solve(
                &problem.ds,
                &mut oracle,
                &SolveOptions::new(policy, cfg.iterations),
                &mut rng,
            )
            .with_context(|| format!("trial {trial}, sketch {kind}"))?;
            curves.push(residual_metric(&run, &problem.x_star));
        }
    }
    Ok(curves)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mu = mean(v);
    (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn compare(cfg: &ExperimentConfig) -> Result<Status> {
    let per_trial: Vec<Vec<Vec<f64>>> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| trial_curves(cfg, t))
        .collect::<Result<_>>()?;
    let labels: Vec<(String, SketchKind)> = cfg
        .policies()
        .iter()
        .flat_map(|p| cfg.compare_sketches.iter().map(move |&k| (policy_label(p), k)))
        .collect();
    let dir = prepare_output(cfg)?;
    let mut table = csv::Writer::from_path(dir.join("table.csv"))?;
    table.write_record([
        "policy",
        "sketch",
        "trials",
        "mean_final_log10_residual",
        "median_final_log10_residual",
        "std_final_log10_residual",
    ])?;
    let mut series = csv::Writer::from_path(dir.join("series.csv"))?;
    series.write_record(["policy", "sketch", "iter", "mean_log10_residual"])?;
    let mut rows = Vec::new();
    for (c, (policy, kind)) in labels.iter().enumerate() {
        let finals: Vec<f64> = per_trial.iter().map(|curves| curves[c][cfg.iterations]).collect();
        let (mu, med, sd) = (mean(&finals), median(&finals), std_dev(&finals));
        table.write_record([
            policy.clone(),
            kind.to_string(),
            cfg.trials.to_string(),
            format!("{mu:.8}"),
            format!("{med:.8}"),
            format!("{sd:.8}"),
        ])?;
        for s in 0..=cfg.iterations {
            let at: Vec<f64> = per_trial.iter().map(|curves| curves[c][s]).collect();
            series.write_record([
                policy.clone(),
                kind.to_string(),
                s.to_string(),
                format!("{:.8}", mean(&at)),
            ])?;
        }
        rows.push(json!({"policy": policy, "sketch": kind, "mean": mu, "median": med, "std": sd}));
    }
    table.flush()?;
    series.flush()?;
    write_json(
        &dir.join("compare.json"),
        &json!({"config_sha256": cfg.hash(), "trials": cfg.trials, "rows": rows}),
    )?;
    Ok(Status::Pass)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    /// Flattened block scores of the expansion network.
    Flattened,
    /// Weighted and unweighted sketches agree.
    Weighted,
    /// `E[S^T S] = I`.
    Sts,
    /// The block leverage gradient estimate is unbiased.
    Unbiased,
    /// Embedding errors of block leverage sampling against block-SRHT.
    Embedding,
    /// Gradient error bound along a tracked run.
    Decoding,
    All,
}

fn run_suite(cfg: &ExperimentConfig, problem: &Problem, suite: Suite) -> Result<Report> {
    let mut rng = trial_rng(cfg.seed, suite as u64);
    let ds = &problem.ds;
    Ok(match suite {
        Suite::Flattened => {
            let Some(net_cfg) = &cfg.network else {
                bail!("the flattened suite needs a network: pass --servers");
            };
            let net = network_oracle(cfg, net_cfg, problem)?.net;
            check_flattened_scores(&net, &basis(problem)?, ds, &problem.scores)?
        }
        Suite::Weighted => {
            let draws = (0..50)
                .map(|_| draw_sketch(&problem.scores, cfg.q, ds, &mut rng))
                .collect::<blocklev::Result<Vec<_>>>()?;
            check_weighted_identities(ds, &draws, &(&problem.x_star * 0.5))
        }
        Suite::Sts => {
            let trials = 20_000;
            // five standard errors of the noisiest block weight
            let tol = problem
                .scores
                .probs()
                .iter()
                .map(|p| 5.0 * ((1.0 - p) / (cfg.q as f64 * p * trials as f64)).sqrt())
                .fold(0.0, f64::max);
            check_expected_sts_identity(&problem.scores, cfg.q, ds.tau(), trials, tol, &mut rng)?
        }
        Suite::Unbiased => {
            let mut oracle = Oracle::new(SketchKind::BlockLvg, cfg, problem, &mut rng)?;
            check_unbiased_gradient(ds, &mut oracle, &DVector::zeros(ds.d()), 2_000, 5.0, &mut rng)?
        }
        Suite::Embedding => {
            let mut qs: Vec<usize> = [cfg.q / 2, cfg.q, 2 * cfg.q]
                .into_iter()
                .filter(|&q| q * ds.tau() > ds.d())
                .collect();
            qs.dedup();
            check_embedding_vs_srht(ds, &basis(problem)?, &problem.scores, &qs, cfg.trials.max(10), &mut rng)?
        }
        Suite::Decoding => {
            let mut oracle = Oracle::new(SketchKind::BlockLvg, cfg, problem, &mut rng)?;
            oracle.set_basis(Some(basis(problem)?));
            let mut opts = SolveOptions::new(cfg.policy, cfg.iterations);
            opts.track_bound = true;
            let run = solve(ds, &mut oracle, &opts, &mut rng)?;
            check_decoding_error_bound(&run, ds.blocks())
        }
        Suite::All => unreachable!("expanded by the caller"),
    })
}

pub fn verify(cfg: &ExperimentConfig, suite: Suite) -> Result<Status> {
    let problem = load_problem(cfg, 0)?;
    let suites = match suite {
        Suite::All => {
            let mut all = vec![
                Suite::Weighted,
                Suite::Sts,
                Suite::Unbiased,
                Suite::Embedding,
                Suite::Decoding,
            ];
            if cfg.network.is_some() {
                all.insert(0, Suite::Flattened);
            }
            all
        }
        s => vec![s],
    };
    let reports = suites
        .iter()
        .map(|&s| run_suite(cfg, &problem, s))
        .collect::<Result<Vec<_>>>()?;
    let pass = reports.iter().all(|r| r.pass);
    for r in &reports {
        println!("{} {}", if r.pass { "PASS" } else { "FAIL" }, r.check);
    }
    write_json(
        &prepare_output(cfg)?.join("verify.json"),
        &json!({"config_sha256": cfg.hash(), "pass": pass, "reports": reports}),
    )?;
    Ok(Status::from_pass(pass))
}
