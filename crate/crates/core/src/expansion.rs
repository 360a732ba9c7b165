//! Replication plans and expansion networks.
//!
//! Block `i` is replicated on `r_i` of the `m` servers. If the servers that
//! respond first form a uniformly random subset, a single response lands on
//! block `i` with probability `r_i / m`, so choosing `r` proportional to the
//! block scores emulates importance sampling.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::distribution::{check_same_len, DistributionKind, SamplingDistribution};
use crate::error::{invalid, Error, Result};
use crate::linalg::symmetric_spectral_norm;

/// `(1/K) sum_i |P_i - Q_i|`.
pub fn distortion(p: &SamplingDistribution, q: &SamplingDistribution) -> Result<f64> {
    check_same_len(p, q)?;
    let k = p.len() as f64;
    Ok(p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).sum::<f64>() / k)
}

/// Round half up, `floor(x + 1/2)`.
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

fn check_phi(phi: f64) -> Result<()> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(invalid(format!("survival probability must lie in (0, 1), got {phi}")));
    }
    Ok(())
}

/// `rho_i = log(1 - P_i) / log(phi)`, the real replication count at which a
/// block is recovered with probability exactly `P_i`.
pub fn ideal_replication(p: &SamplingDistribution, phi: f64) -> Result<Vec<f64>> {
    check_phi(phi)?;
    let lphi = phi.ln();
    p.probs()
        .iter()
        .enumerate()
        .map(|(i, &pi)| {
            if pi >= 1.0 {
                Err(invalid(format!(
                    "block {i} has probability 1; its replication is unbounded"
                )))
            } else {
                Ok((1.0 - pi).ln() / lphi)
            }
        })
        .collect()
}

/// The straggling probability at which the ideal counts sum to `m`,
/// `exp(sum_i log(1 - P_i) / m)`.
pub fn phi_for_servers(p: &SamplingDistribution, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(invalid("need at least one server"));
    }
    if let Some(i) = p.probs().iter().position(|&v| v >= 1.0) {
        return Err(invalid(format!(
            "block {i} has probability 1; its replication is unbounded"
        )));
    }
    let s: f64 = p.probs().iter().map(|v| (1.0 - v).ln()).sum();
    let phi = (s / m as f64).exp();
    check_phi(phi)?;
    Ok(phi)
}

/// `r_i = max(1, round(rho_i))`.
pub fn replication_from_runtime(p: &SamplingDistribution, phi: f64) -> Result<Vec<usize>> {
    Ok(ideal_replication(p, phi)?
        .into_iter()
        .map(|rho| (round_half_up(rho) as usize).max(1))
        .collect())
}

/// `(1 - sqrt(phi)) sum_i phi^min(r_i, rho_i)`.
pub fn rounding_bound(p: &SamplingDistribution, phi: f64, r: &[usize]) -> Result<f64> {
    let rho = ideal_replication(p, phi)?;
    check_counts(p, r)?;
    Ok((1.0 - phi.sqrt())
        * rho
            .iter()
            .zip(r)
            .map(|(&rho, &r)| phi.powf(rho.min(r as f64)))
            .sum::<f64>())
}

/// `(1/K) sum_i |P_i - (1 - phi^r_i)|`.
pub fn delta_distortion(p: &SamplingDistribution, phi: f64, r: &[usize]) -> Result<f64> {
    check_phi(phi)?;
    check_counts(p, r)?;
    let k = p.len() as f64;
    Ok(p.probs()
        .iter()
        .zip(r)
        .map(|(&pi, &ri)| (pi - (1.0 - phi.powi(ri as i32))).abs())
        .sum::<f64>()
        / k)
}

fn check_counts(p: &SamplingDistribution, r: &[usize]) -> Result<()> {
    if p.len() != r.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probabilities but {} replication counts",
            p.len(),
            r.len()
        )));
    }
    Ok(())
}

/// A positive rational `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 {
            return Err(invalid("zero denominator"));
        }
        Ok(Self { num, den })
    }

    pub fn reduced(self) -> Self {
        let g = self.num.gcd(&self.den);
        Self {
            num: self.num / g,
            den: self.den / g,
        }
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl FromStr for Fraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("expected a fraction a/b, got {s:?}"));
        let (a, b) = s.trim().split_once('/').ok_or_else(bad)?;
        let num = a.trim().parse().map_err(|_| bad())?;
        let den = b.trim().parse().map_err(|_| bad())?;
        Fraction::new(num, den)
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Exact emulation of rational scores: `R = lcm(den_i)`, `r_i = R num_i / den_i`.
pub fn perfect_replication(p: &[Fraction]) -> Result<(u64, Vec<u64>)> {
    if p.is_empty() {
        return Err(invalid("no probabilities given"));
    }
    let reduced: Vec<Fraction> = p.iter().map(|f| f.reduced()).collect();
    if let Some(i) = reduced.iter().position(|f| f.num == 0) {
        return Err(invalid(format!("block {i} has probability 0 and cannot be replicated")));
    }
    let mut big_r: u64 = 1;
    for f in &reduced {
        big_r = big_r.lcm(&f.den);
    }
    let r: Vec<u64> = reduced.iter().map(|f| big_r / f.den * f.num).collect();
    let total: u64 = r.iter().sum();
    if total != big_r {
        return Err(Error::InvalidDistribution(format!(
            "fractions sum to {total}/{big_r}, not 1"
        )));
    }
    Ok((big_r, r))
}

/// Adjusts `r_tilde` one unit at a time until it sums to `m`.
///
/// Each step moves the block whose share `r_i / m` is furthest from `P_i` on
/// the side that needs correcting. No count is lowered below one.
pub fn fit_to_m(p: &SamplingDistribution, r_tilde: &[usize], m: usize) -> Result<Vec<usize>> {
    let k = p.len();
    check_counts(p, r_tilde)?;
    if m < k {
        return Err(invalid(format!("{m} servers cannot hold {k} blocks")));
    }
    if r_tilde.contains(&0) {
        return Err(invalid("replication counts must be positive"));
    }
    let mf = m as f64;
    let pi = p.probs();
    let mut r = r_tilde.to_vec();
    let mut total: usize = r.iter().sum();
    // decrementing when chi is set, incrementing otherwise
    let chi = total >= m;
    let sign = if chi { 1.0 } else { -1.0 };
    let floor = |ri: usize, v: f64| if chi && ri == 1 { f64::INFINITY } else { v };
    let mut dev: Vec<f64> = (0..k).map(|i| floor(r[i], sign * (pi[i] - r[i] as f64 / mf))).collect();
    let mut last: Option<usize> = None;
    while total != m {
        let j = argmin(&dev);
        let next = if chi { r[j] as f64 - 1.0 } else { r[j] as f64 + 1.0 };
        if sign * (pi[j] - next / mf) > 0.0 && last == Some(j) {
            dev[j] = 1.0;
            last = None;
            continue;
        }
        if chi {
            r[j] -= 1;
            total -= 1;
        } else {
            r[j] += 1;
            total += 1;
        }
        dev[j] = floor(r[j], sign * (pi[j] - r[j] as f64 / mf));
        last = Some(j);
    }
    Ok(r)
}

/// Index of the smallest entry, ties to the lowest index.
fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Integer replication counts together with their induced distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PlanRecord", try_from = "PlanRecord")]
pub struct ReplicationPlan {
    target: SamplingDistribution,
    r: Vec<usize>,
    induced: SamplingDistribution,
    beta: f64,
    additive_eps: f64,
    distortion: f64,
}

#[derive(Serialize, Deserialize)]
struct PlanRecord {
    pi: Vec<f64>,
    r: Vec<usize>,
    m: usize,
    beta: f64,
    distortion: f64,
}

impl From<ReplicationPlan> for PlanRecord {
    fn from(plan: ReplicationPlan) -> Self {
        PlanRecord {
            m: plan.total(),
            pi: plan.target.probs().to_vec(),
            r: plan.r,
            beta: plan.beta,
            distortion: plan.distortion,
        }
    }
}

impl TryFrom<PlanRecord> for ReplicationPlan {
    type Error = Error;

    fn try_from(rec: PlanRecord) -> Result<Self> {
        let target = SamplingDistribution::new(rec.pi, DistributionKind::Exact)?;
        let plan = ReplicationPlan::new(target, rec.r)?;
        if plan.total() != rec.m {
            return Err(Error::Parse(format!(
                "plan replications sum to {}, but m = {}",
                plan.total(),
                rec.m
            )));
        }
        Ok(plan)
    }
}

impl ReplicationPlan {
    pub fn new(target: SamplingDistribution, r: Vec<usize>) -> Result<Self> {
        check_counts(&target, &r)?;
        if r.contains(&0) {
            return Err(invalid("replication counts must be positive"));
        }
        let weights: Vec<f64> = r.iter().map(|&v| v as f64).collect();
        let induced = SamplingDistribution::from_weights(&weights, DistributionKind::Induced)?;
        let beta = target.misestimation_factor(&induced)?;
        let additive_eps = target.additive_error(&induced)?;
        let distortion = distortion(&target, &induced)?;
        Ok(Self {
            target,
            r,
            induced,
            beta,
            additive_eps,
            distortion,
        })
    }

    pub fn target(&self) -> &SamplingDistribution {
        &self.target
    }

    pub fn r(&self) -> &[usize] {
        &self.r
    }

    /// `R = sum_i r_i`.
    pub fn total(&self) -> usize {
        self.r.iter().sum()
    }

    /// `r_i / R`.
    pub fn induced(&self) -> &SamplingDistribution {
        &self.induced
    }

    /// `min_i P_i / induced_i`.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `max_i |P_i - induced_i|`.
    pub fn additive_eps(&self) -> f64 {
        self.additive_eps
    }

    /// `(1/K) sum_i |P_i - induced_i|`.
    pub fn distortion(&self) -> f64 {
        self.distortion
    }

    /// Lower and upper distortion bounds
    /// `(1/m) min_i floor|m P_i - r_i|` and `(1/m) max_i ceil|m P_i - r_i|`.
    pub fn distortion_bounds(&self) -> (f64, f64) {
        let m = self.total() as f64;
        let gaps: Vec<f64> = self
            .target
            .probs()
            .iter()
            .zip(&self.r)
            .map(|(p, &r)| (m * p - r as f64).abs())
            .collect();
        let lo = gaps.iter().map(|g| g.floor()).fold(f64::INFINITY, f64::min);
        let hi = gaps.iter().map(|g| g.ceil()).fold(0.0, f64::max);
        (lo / m, hi / m)
    }
}

/// Replication design for `m` servers whose straggling probability at the
/// ending time is `phi`: round the ideal counts, spread them over the
/// servers when there are many more servers than counts, then fit the total
/// to `m` with [`fit_to_m`].
pub fn design_plan(p: &SamplingDistribution, phi: f64, m: usize) -> Result<ReplicationPlan> {
    let r_hat = replication_from_runtime(p, phi)?;
    let r_tilde = spread_to_servers(&r_hat, m);
    let r = fit_to_m(p, &r_tilde, m)?;
    ReplicationPlan::new(p.clone(), r)
}

/// `r_i * round(m / R)` when that factor is at least two, else `r` itself.
pub fn spread_to_servers(r: &[usize], m: usize) -> Vec<usize> {
    let total: usize = r.iter().sum();
    let factor = round_half_up(m as f64 / total as f64) as usize;
    if factor >= 2 {
        r.iter().map(|v| v * factor).collect()
    } else {
        r.to_vec()
    }
}

/// Servers holding replicated, rescaled copies of the data blocks.
#[derive(Clone, Debug)]
pub struct ExpansionNetwork {
    plan: ReplicationPlan,
    q: usize,
    assignment: Vec<usize>,
    encoding_scales: Vec<f64>,
}

/// Lays out the plan over `m = R` servers in block order and fixes the
/// encoding scale `1 / sqrt(q induced_i)` for `q` responses per round.
pub fn build_network(plan: &ReplicationPlan, m: usize, q: usize) -> Result<ExpansionNetwork> {
    if plan.total() != m {
        return Err(invalid(format!("plan places {} replicas on {m} servers", plan.total())));
    }
    if q == 0 {
        return Err(invalid("q must be positive"));
    }
    let assignment = plan
        .r()
        .iter()
        .enumerate()
        .flat_map(|(block, &count)| std::iter::repeat_n(block, count))
        .collect();
    let encoding_scales = plan
        .induced()
        .probs()
        .iter()
        .map(|p| 1.0 / (q as f64 * p).sqrt())
        .collect();
    Ok(ExpansionNetwork {
        plan: plan.clone(),
        q,
        assignment,
        encoding_scales,
    })
}

impl ExpansionNetwork {
    pub fn plan(&self) -> &ReplicationPlan {
        &self.plan
    }

    pub fn servers(&self) -> usize {
        self.assignment.len()
    }

    pub fn blocks(&self) -> usize {
        self.plan.r().len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Block held by each server.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn block_of(&self, server: usize) -> usize {
        self.assignment[server]
    }

    /// Servers holding `block`, as a contiguous range.
    pub fn servers_of(&self, block: usize) -> std::ops::Range<usize> {
        let start: usize = self.plan.r()[..block].iter().sum();
        start..start + self.plan.r()[block]
    }

    /// `g_i = 1 / sqrt(q induced_i)`.
    pub fn encoding_scales(&self) -> &[f64] {
        &self.encoding_scales
    }

    pub fn induced(&self) -> &SamplingDistribution {
        self.plan.induced()
    }

    /// Rows stored over all servers, `m tau`.
    pub fn stored_rows(&self, tau: usize) -> usize {
        self.servers() * tau
    }
}

/// `|| I_K - G^+ G ||_2` for a `q x K` decoding matrix.
pub fn optimal_decoding_error(g: &DMatrix<f64>) -> Result<f64> {
    if g.is_empty() {
        return Err(invalid("empty decoding matrix"));
    }
    let smax = g.clone().singular_values().max();
    if smax == 0.0 {
        return Err(invalid("decoding matrix has rank zero"));
    }
    let eps = f64::EPSILON * g.nrows().max(g.ncols()) as f64 * smax;
    let pinv = g.clone().pseudo_inverse(eps).map_err(|e| invalid(e.to_string()))?;
    let mut m = -(pinv * g);
    for i in 0..m.nrows() {
        m[(i, i)] += 1.0;
    }
    // symmetrize away rounding before the eigensolve
    let m = (&m + m.transpose()) * 0.5;
    Ok(symmetric_spectral_norm(&m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: &[f64]) -> SamplingDistribution {
        SamplingDistribution::new(p.to_vec(), DistributionKind::Exact).unwrap()
    }

    fn five_block() -> SamplingDistribution {
        dist(&[0.15, 0.15, 0.2, 0.25, 0.25])
    }

    #[test]
    fn distortion_examples() {
        let p = dist(&[0.6, 0.4]);
        let q = SamplingDistribution::uniform(2).unwrap();
        assert!((distortion(&p, &q).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(distortion(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn replication_rounding_and_clamp() {
        assert_eq!(replication_from_runtime(&dist(&[0.75, 0.25]), 0.5).unwrap(), vec![2, 1]);
        assert!(replication_from_runtime(&dist(&[1.0, 0.0]), 0.5).is_err());
        assert!(replication_from_runtime(&dist(&[0.5, 0.5]), 1.0).is_err());
        assert!(replication_from_runtime(&dist(&[0.5, 0.5]), 0.0).is_err());
        assert_eq!(round_half_up(2.5), 3.0);
        assert_eq!(round_half_up(0.49), 0.0);
    }

    #[test]
    fn delta_example() {
        let d = delta_distortion(&dist(&[0.75, 0.25]), 0.5, &[2, 1]).unwrap();
        assert!((d - 0.125).abs() < 1e-15);
    }

    #[test]
    fn perfect_replication_examples() {
        let f = |s: &str| s.parse::<Fraction>().unwrap();
        assert_eq!(
            perfect_replication(&[f("1/2"), f("1/3"), f("1/6")]).unwrap(),
            (6, vec![3, 2, 1])
        );
        let b: Vec<Fraction> = ["3/20", "3/20", "4/20", "5/20", "5/20"].iter().map(|s| f(s)).collect();
        assert_eq!(perfect_replication(&b).unwrap(), (20, vec![3, 3, 4, 5, 5]));
        assert_eq!(perfect_replication(&[f("1/2"), f("1/2")]).unwrap(), (2, vec![1, 1]));
        assert!(perfect_replication(&[f("1/2"), f("1/3")]).is_err());
        assert!("1".parse::<Fraction>().is_err());
        assert!("1/0".parse::<Fraction>().is_err());
    }

    #[test]
    fn fit_to_m_hand_trace() {
        let p = dist(&[0.5, 0.3, 0.2]);
        assert_eq!(fit_to_m(&p, &[3, 2, 1], 4).unwrap(), vec![2, 1, 1]);
        assert_eq!(
            fit_to_m(&five_block(), &[3, 3, 4, 5, 5], 20).unwrap(),
            vec![3, 3, 4, 5, 5]
        );
        assert!(fit_to_m(&p, &[1, 1, 1], 2).is_err());
    }

    #[test]
    fn fit_to_m_single_block_terminates() {
        let p = dist(&[1.0]);
        assert_eq!(fit_to_m(&p, &[5], 2).unwrap(), vec![2]);
        assert_eq!(fit_to_m(&p, &[1], 4).unwrap(), vec![4]);
    }

    #[test]
    fn five_block_network() {
        let plan = ReplicationPlan::new(five_block(), vec![3, 3, 4, 5, 5]).unwrap();
        assert_eq!(plan.distortion(), 0.0);
        assert!((plan.beta() - 1.0).abs() < 1e-12);
        let net = build_network(&plan, 20, 3).unwrap();
        assert_eq!(net.servers_of(0), 0..3);
        assert_eq!(net.servers_of(2), 6..10);
        assert_eq!(net.servers_of(4), 15..20);
        assert_eq!(net.block_of(10), 3);
        assert_eq!(net.stored_rows(4), 80);
        assert!(build_network(&plan, 19, 3).is_err());
    }

    #[test]
    fn plan_json_shape() {
        let plan = ReplicationPlan::new(dist(&[0.5, 0.5]), vec![1, 1]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&plan).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["beta", "distortion", "m", "pi", "r"]);
        let back: ReplicationPlan = serde_json::from_value(v).unwrap();
        assert_eq!(back, plan);
    }

    #[test]
    fn decoding_error_of_full_rank_is_zero() {
        assert!(optimal_decoding_error(&DMatrix::identity(4, 4)).unwrap() < 1e-12);
        let g = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!((optimal_decoding_error(&g).unwrap() - 1.0).abs() < 1e-12);
        assert!(optimal_decoding_error(&DMatrix::zeros(2, 2)).is_err());
    }
}
