//! Block sampling distributions and a categorical sampler over them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum(p) - 1|` accepted by [`SamplingDistribution::new`].
pub const SUM_TOLERANCE: f64 = 1e-12;

/// Where a block distribution came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    /// Exact normalized block leverage scores.
    Exact,
    /// A misestimate of the exact scores.
    Approximate,
    /// Induced by a replication plan, `r_i / R`.
    Induced,
    /// Uniform over the blocks.
    Uniform,
}

/// `K` nonnegative block probabilities summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingDistribution {
    p: Vec<f64>,
    kind: DistributionKind,
}

impl SamplingDistribution {
    pub fn new(p: Vec<f64>, kind: DistributionKind) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidDistribution("empty distribution".into()));
        }
        if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} = {v} is not a nonnegative number"
            )));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { p, kind })
    }

    /// Normalizes nonnegative weights by their sum.
    pub fn from_weights(weights: &[f64], kind: DistributionKind) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidDistribution(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("weights sum to zero".into()));
        }
        Self::new(weights.iter().map(|w| w / total).collect(), kind)
    }

    pub fn uniform(blocks: usize) -> Result<Self> {
        if blocks == 0 {
            return Err(Error::InvalidDistribution("empty distribution".into()));
        }
        Self::new(vec![1.0 / blocks as f64; blocks], DistributionKind::Uniform)
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn prob(&self, block: usize) -> f64 {
        self.p[block]
    }

    pub fn with_kind(mut self, kind: DistributionKind) -> Self {
        self.kind = kind;
        self
    }

    /// `min_i p_i / other_i` over blocks where `other_i > 0`: the
    /// misestimation factor of `other` with respect to `self`.
    pub fn misestimation_factor(&self, other: &SamplingDistribution) -> Result<f64> {
        check_same_len(self, other)?;
        Ok(self
            .p
            .iter()
            .zip(&other.p)
            .filter(|(_, o)| **o > 0.0)
            .map(|(p, o)| p / o)
            .fold(f64::INFINITY, f64::min))
    }

    /// `max_i |p_i - other_i|`.
    pub fn additive_error(&self, other: &SamplingDistribution) -> Result<f64> {
        check_same_len(self, other)?;
        Ok(self
            .p
            .iter()
            .zip(&other.p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn sampler(&self) -> CategoricalSampler {
        CategoricalSampler::new(&self.p)
    }
}

pub(crate) fn check_same_len(a: &SamplingDistribution, b: &SamplingDistribution) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "distributions over {} and {} blocks",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Rejects an approximate distribution that never samples a block the
/// target distribution gives positive mass.
pub fn check_support(target: &SamplingDistribution, approx: &SamplingDistribution) -> Result<()> {
    check_same_len(target, approx)?;
    for (i, (t, a)) in target.probs().iter().zip(approx.probs()).enumerate() {
        if *a == 0.0 && *t > 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "block {i} has target mass {t} but zero sampling probability"
            )));
        }
    }
    Ok(())
}

/// Inverse-CDF sampling on a prefix-sum array.
#[derive(Clone, Debug)]
pub struct CategoricalSampler {
    cdf: Vec<f64>,
    last_positive: usize,
}

impl CategoricalSampler {
    pub fn new(p: &[f64]) -> Self {
        let mut acc = 0.0;
        let cdf = p
            .iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        let last_positive = p.iter().rposition(|v| *v > 0.0).unwrap_or(0);
        Self { cdf, last_positive }
    }

    /// Index of the first bucket whose cumulative mass exceeds `u`.
    pub fn index_of(&self, u: f64) -> usize {
        let i = self.cdf.partition_point(|c| *c <= u);
        // u can land past the last partial sum when the sum rounds below one
        i.min(self.last_positive)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index_of(rng.random::<f64>())
    }
}
