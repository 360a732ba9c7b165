//! Server runtime model and per-round straggler simulation.
//!
//! A server processing one block of `tau` out of `N` rows finishes by time
//! `t` with probability `F(t tau / N)`, where `F` is the mother runtime
//! distribution of a job over all `N` rows.

use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expansion::ExpansionNetwork;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotherRuntime {
    /// `F(t) = 1 - exp(-rate (t - shift))` for `t >= shift`.
    ShiftedExponential { rate: f64, shift: f64 },
    /// Empirical distribution of observed completion times, sorted.
    Empirical { times: Vec<f64> },
}

/// Mother distribution together with the task scale `tau / N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeModel {
    pub mother: MotherRuntime,
    pub task_scale: f64,
}

impl RuntimeModel {
    pub fn shifted_exponential(rate: f64, shift: f64, task_scale: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(invalid(format!("rate must be positive, got {rate}")));
        }
        if !(shift >= 0.0 && shift.is_finite()) {
            return Err(invalid(format!("shift must be nonnegative, got {shift}")));
        }
        Self::with_scale(MotherRuntime::ShiftedExponential { rate, shift }, task_scale)
    }

    pub fn empirical(mut times: Vec<f64>, task_scale: f64) -> Result<Self> {
        if times.is_empty() {
            return Err(invalid("empirical runtime trace is empty"));
        }
        if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(invalid(format!("completion times must be nonnegative, got {t}")));
        }
        times.sort_by(f64::total_cmp);
        Self::with_scale(MotherRuntime::Empirical { times }, task_scale)
    }

    fn with_scale(mother: MotherRuntime, task_scale: f64) -> Result<Self> {
        if !(task_scale > 0.0 && task_scale <= 1.0) {
            return Err(invalid(format!("task scale must lie in (0, 1], got {task_scale}")));
        }
        Ok(Self { mother, task_scale })
    }

    /// Same mother distribution for blocks of `tau` out of `n` rows.
    pub fn for_blocks(mut self, tau: usize, n: usize) -> Result<Self> {
        if tau == 0 || tau > n {
            return Err(invalid(format!("invalid block size {tau} of {n} rows")));
        }
        self.task_scale = tau as f64 / n as f64;
        Ok(self)
    }

    /// Mother CDF `F(t)`.
    pub fn mother_cdf(&self, t: f64) -> f64 {
        match &self.mother {
            MotherRuntime::ShiftedExponential { rate, shift } => {
                if t < *shift {
                    0.0
                } else {
                    1.0 - (-rate * (t - shift)).exp()
                }
            }
            MotherRuntime::Empirical { times } => times.partition_point(|x| *x <= t) as f64 / times.len() as f64,
        }
    }

    /// Per-server CDF `F~(t) = F(t tau / N)`.
    pub fn scaled_cdf(&self, t: f64) -> f64 {
        self.mother_cdf(t * self.task_scale)
    }

    /// Straggling probability `phi(t) = 1 - F~(t)`.
    pub fn survival(&self, t: f64) -> f64 {
        1.0 - self.scaled_cdf(t)
    }

    /// `q(T) = floor(F~(T) m)`.
    pub fn responders_at(&self, t: f64, m: usize) -> Result<usize> {
        let q = (self.scaled_cdf(t) * m as f64).floor() as usize;
        if q == 0 {
            return Err(Error::NoResponders);
        }
        Ok(q.min(m))
    }

    /// One server completion time.
    pub fn sample_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mother = match &self.mother {
            MotherRuntime::ShiftedExponential { rate, shift } => {
                let u: f64 = rng.random();
                shift - (1.0 - u).ln() / rate
            }
            MotherRuntime::Empirical { times } => times[rng.random_range(0..times.len())],
        };
        mother / self.task_scale
    }
}

/// Parses `shifted-exp:RATE,SHIFT` or `trace:PATH` with task scale one.
impl FromStr for RuntimeModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("shifted-exp:") {
            let (a, b) = rest
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("expected shifted-exp:RATE,SHIFT, got {s:?}")))?;
            let rate = a.trim().parse().map_err(|_| Error::Parse(format!("bad rate {a:?}")))?;
            let shift = b.trim().parse().map_err(|_| Error::Parse(format!("bad shift {b:?}")))?;
            RuntimeModel::shifted_exponential(rate, shift, 1.0)
        } else if let Some(path) = s.strip_prefix("trace:") {
            RuntimeModel::empirical(read_trace(Path::new(path))?, 1.0)
        } else {
            Err(Error::Parse(format!(
                "unknown runtime model {s:?}; use shifted-exp:RATE,SHIFT or trace:PATH"
            )))
        }
    }
}

/// One completion time per line; blank lines are skipped.
pub fn read_trace(path: &Path) -> Result<Vec<f64>> {
    parse_trace(&std::fs::read_to_string(path)?)
}

pub fn parse_trace(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let t: f64 = line
            .parse()
            .map_err(|_| Error::Parse(format!("trace line {}: bad time {line:?}", n + 1)))?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Parse(format!("trace line {}: negative time {t}", n + 1)));
        }
        out.push(t);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    /// Wait for the `q` fastest servers.
    FastestQ(usize),
    /// Collect every server finished by the deadline.
    Deadline(f64),
}

#[derive(Clone, Debug)]
pub struct RoundOutcome {
    /// Blocks of the responding servers, a multiset in arrival order.
    pub responders: Vec<usize>,
    /// Indices of the responding servers in arrival order.
    pub servers: Vec<usize>,
    pub server_times: Vec<f64>,
    pub mode: ResponseMode,
}

/// Draws i.i.d. completion times for every server and keeps the responders.
pub fn simulate_round<R: Rng + ?Sized>(
    net: &ExpansionNetwork,
    model: &RuntimeModel,
    mode: ResponseMode,
    rng: &mut R,
) -> Result<RoundOutcome> {
    let m = net.servers();
    if let ResponseMode::FastestQ(q) = mode {
        if q == 0 || q > m {
            return Err(invalid(format!("cannot wait for {q} of {m} servers")));
        }
    }
    let server_times: Vec<f64> = (0..m).map(|_| model.sample_time(rng)).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| server_times[a].total_cmp(&server_times[b]).then(a.cmp(&b)));
    let servers: Vec<usize> = match mode {
        ResponseMode::FastestQ(q) => order[..q].to_vec(),
        ResponseMode::Deadline(t) => order.into_iter().take_while(|&s| server_times[s] <= t).collect(),
    };
    let responders = servers.iter().map(|&s| net.block_of(s)).collect();
    Ok(RoundOutcome {
        responders,
        servers,
        server_times,
        mode,
    })
}
