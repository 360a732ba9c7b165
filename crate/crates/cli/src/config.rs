use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use blocklev::solver::StepPolicy;
use blocklev::straggler::RuntimeModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SketchKind {
    /// Block leverage score sampling, through the network when one is configured.
    BlockLvg,
    /// Dense Gaussian sketch with `q tau` rows, redrawn every iteration.
    Gaussian,
    BlockSrht,
    /// No sketch: plain steepest descent.
    None,
}

impl SketchKind {
    pub const ALL: [SketchKind; 4] = [
        SketchKind::None,
        SketchKind::Gaussian,
        SketchKind::BlockSrht,
        SketchKind::BlockLvg,
    ];
}

impl fmt::Display for SketchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SketchKind::BlockLvg => "block_lvg",
            SketchKind::Gaussian => "gaussian",
            SketchKind::BlockSrht => "block_srht",
            SketchKind::None => "none",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum InstanceSource {
    /// Student-t design with a Gaussian planted solution.
    Synthetic {
        n: usize,
        d: usize,
        dof: f64,
        noise_sigma: f64,
        signal_scale: f64,
        seed: u64,
    },
    /// Matrix and optional right-hand side from CSV files.
    Csv { a: PathBuf, b: Option<PathBuf> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceConfig {
    pub blocks: usize,
    #[serde(flatten)]
    pub source: InstanceSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub servers: usize,
    /// Ending time. Without it the `q` fastest responses are kept and the
    /// design matches the ideal counts to the server count.
    #[serde(default)]
    pub deadline: Option<f64>,
    /// `shifted-exp:RATE,SHIFT` or `trace:PATH`.
    pub runtime: String,
}

impl NetworkConfig {
    pub fn model(&self) -> Result<RuntimeModel> {
        self.runtime
            .parse()
            .with_context(|| format!("runtime model {:?}", self.runtime))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceConfig,
    pub sketch: SketchKind,
    /// Sketch size in blocks.
    pub q: usize,
    #[serde(default)]
    pub network: Option<NetworkConfig>,
    pub policy: StepPolicy,
    pub iterations: usize,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub track_bound: bool,
    /// Sketches and step policies crossed by `compare`; an empty policy list
    /// means `policy` alone.
    #[serde(default = "all_sketches")]
    pub compare_sketches: Vec<SketchKind>,
    #[serde(default)]
    pub compare_policies: Vec<StepPolicy>,
    pub output_dir: PathBuf,
}

fn all_sketches() -> Vec<SketchKind> {
    SketchKind::ALL.to_vec()
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// SHA-256 of the compact JSON serialization, leaving out where the
    /// outputs go.
    pub fn hash(&self) -> String {
        let mut cfg = self.clone();
        cfg.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&cfg).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn policies(&self) -> Vec<StepPolicy> {
        if self.compare_policies.is_empty() {
            vec![self.policy]
        } else {
            self.compare_policies.clone()
        }
    }

    /// Checks that need no data. The `q tau > d` check for CSV input runs
    /// once the matrix is loaded.
    pub fn validate(&self) -> Result<()> {
        let k = self.instance.blocks;
        ensure!(k >= 1, "need at least one block");
        ensure!(self.q >= 1, "sketch size q must be positive");
        ensure!(self.iterations >= 1, "need at least one iteration");
        ensure!(self.trials >= 1, "need at least one trial");
        self.policy.validate()?;
        for p in &self.compare_policies {
            p.validate()?;
        }
        ensure!(!self.compare_sketches.is_empty(), "compare needs at least one sketch");
        if let InstanceSource::Synthetic { n, d, .. } = self.instance.source {
            ensure!(n > d, "need N > d, got N = {n}, d = {d}");
            ensure!(k <= n, "{k} blocks exceed {n} rows");
            check_sketch_rows(self.q, n.div_ceil(k), d)?;
        }
        if let Some(net) = &self.network {
            ensure!(net.servers >= k, "{} servers cannot hold {k} blocks", net.servers);
            if net.deadline.is_none() {
                ensure!(
                    self.q <= net.servers,
                    "cannot wait for {} of {} servers",
                    self.q,
                    net.servers
                );
            }
            if let Some(t) = net.deadline {
                ensure!(t.is_finite() && t > 0.0, "deadline must be positive, got {t}");
            }
            net.model()?;
        }
        Ok(())
    }
}

pub fn check_sketch_rows(q: usize, tau: usize, d: usize) -> Result<()> {
    if q * tau <= d {
        bail!("sketch of q = {q} blocks of {tau} rows cannot embed d = {d} columns (need q tau > d)");
    }
    Ok(())
}

/// `fixed:XI`, `conservative:SCALE`, `optimal` or `diminishing:ETA`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyArg(pub StepPolicy);

impl FromStr for PolicyArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (kind, value) = match s.split_once(':') {
            Some((k, v)) => (k, Some(v)),
            None => (s, None),
        };
        let num = || -> std::result::Result<f64, String> {
            value
                .ok_or_else(|| format!("{kind} needs a value, e.g. {kind}:0.5"))?
                .parse()
                .map_err(|_| format!("bad number in {s:?}"))
        };
        let policy = match kind {
            "fixed" => StepPolicy::Fixed { xi: num()? },
            "conservative" => StepPolicy::Conservative {
                scale: value.map(|_| num()).transpose()?.unwrap_or(1.0),
            },
            "optimal" => StepPolicy::Optimal,
            "diminishing" => StepPolicy::Diminishing { eta: num()? },
            _ => return Err(format!("unknown step policy {s:?}")),
        };
        policy.validate().map_err(|e| e.to_string())?;
        Ok(PolicyArg(policy))
    }
}

pub fn policy_label(p: &StepPolicy) -> String {
    match p {
        StepPolicy::Fixed { xi } => format!("fixed:{xi}"),
        StepPolicy::Conservative { scale } => format!("conservative:{scale}"),
        StepPolicy::Optimal => "optimal".into(),
        StepPolicy::Diminishing { eta } => format!("diminishing:{eta}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_strings_round_trip() {
        for s in ["fixed:0.01", "conservative:0.4207", "optimal", "diminishing:2"] {
            let p: PolicyArg = s.parse().unwrap();
            assert_eq!(policy_label(&p.0), s);
        }
        assert_eq!(
            "conservative".parse::<PolicyArg>().unwrap().0,
            StepPolicy::Conservative { scale: 1.0 }
        );
        assert!("fixed".parse::<PolicyArg>().is_err());
        assert!("fixed:-1".parse::<PolicyArg>().is_err());
        assert!("newton".parse::<PolicyArg>().is_err());
    }

    fn example() -> ExperimentConfig {
        serde_json::from_str(
            r#"{
                "instance": {"blocks": 100, "source": "synthetic", "n": 2000, "d": 40, "dof": 1.0,
                             "noise_sigma": 1.0, "signal_scale": 8.0, "seed": 0},
                "sketch": "block_lvg",
                "q": 50,
                "network": {"servers": 500, "runtime": "shifted-exp:1,0.5"},
                "policy": {"kind": "conservative", "scale": 0.4207},
                "iterations": 600,
                "trials": 6,
                "seed": 1,
                "output_dir": "out"
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn config_round_trips_and_hash_ignores_output_dir() {
        let cfg = example();
        cfg.validate().unwrap();
        assert_eq!(cfg.compare_sketches, SketchKind::ALL);
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let mut moved = cfg.clone();
        moved.output_dir = "elsewhere".into();
        assert_eq!(moved.hash(), cfg.hash());
        let mut reseeded = cfg.clone();
        reseeded.seed = 2;
        assert_ne!(reseeded.hash(), cfg.hash());
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let mut cfg = example();
        cfg.q = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = example();
        cfg.network.as_mut().unwrap().servers = 99;
        assert!(cfg.validate().is_err());
        let mut cfg = example();
        cfg.network.as_mut().unwrap().runtime = "exp:1".into();
        assert!(cfg.validate().is_err());
    }
}
