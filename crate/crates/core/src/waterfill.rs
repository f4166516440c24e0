//! Per-user water-filling best response and rate evaluation.

use crate::error::{Error, Result};
use crate::netmodel::NetworkConfig;
use crate::precode::EffectiveNetwork;

/// Slack allowed on the per-user budget when checking feasibility.
pub const BUDGET_SLACK: f64 = 1e-9;

/// Power per transmit antenna, `p[q][j]` for antenna `j` of user `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerProfile {
    pub p: Vec<Vec<f64>>,
}

impl PowerProfile {
    /// Each user splits its budget evenly over its transmit antennas.
    pub fn uniform(config: &NetworkConfig) -> Self {
        let p = (0..config.users)
            .map(|q| vec![config.power_budget[q] / config.nt[q] as f64; config.nt[q]])
            .collect();
        Self { p }
    }

    /// Each user puts its whole budget on its first antenna, which the SVD
    /// precoder maps to the strongest stream.
    pub fn strongest_stream(config: &NetworkConfig) -> Self {
        let p = (0..config.users)
            .map(|q| {
                let mut v = vec![0.0; config.nt[q]];
                v[0] = config.power_budget[q];
                v
            })
            .collect();
        Self { p }
    }

    pub fn zeros(config: &NetworkConfig) -> Self {
        Self {
            p: config.nt.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Checks shape, nonnegativity and the budgets.
    pub fn new(config: &NetworkConfig, p: Vec<Vec<f64>>) -> Result<Self> {
        let profile = Self { p };
        profile.check(config)?;
        Ok(profile)
    }

    pub fn check(&self, config: &NetworkConfig) -> Result<()> {
        if self.p.len() != config.users {
            return Err(Error::DimensionMismatch(format!(
                "profile has {} users, config has {}",
                self.p.len(),
                config.users
            )));
        }
        for (q, pq) in self.p.iter().enumerate() {
            if pq.len() != config.nt[q] {
                return Err(Error::DimensionMismatch(format!(
                    "user {q} has {} powers for {} antennas",
                    pq.len(),
                    config.nt[q]
                )));
            }
            if pq.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::config("power", format!("user {q} has a negative or non-finite power")));
            }
            let total: f64 = pq.iter().sum();
            if total > config.power_budget[q] + BUDGET_SLACK {
                return Err(Error::config(
                    "power",
                    format!("user {q} uses {total} above budget {}", config.power_budget[q]),
                ));
            }
        }
        Ok(())
    }

    /// Concatenation over users in order.
    pub fn stacked(&self) -> Vec<f64> {
        self.p.iter().flatten().copied().collect()
    }

    /// Max-norm distance between two profiles of equal shape.
    pub fn max_abs_diff(&self, other: &PowerProfile) -> f64 {
        self.p
            .iter()
            .flatten()
            .zip(other.p.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaterfillResult {
    /// `(mu - c_i)^+`, in the order of the input levels.
    pub p_star: Vec<f64>,
    pub mu: f64,
    pub active_set: Vec<usize>,
}

/// Normalized interference-plus-noise `c_q^i` seen on each stream of user `q`.
pub fn interference_plus_noise(net: &EffectiveNetwork, profile: &PowerProfile, q: usize) -> Vec<f64> {
    let mut c = net.noise_floor[q].clone();
    for r in (0..net.users()).filter(|&r| r != q) {
        let g = net.normalized_gain(r, q);
        for (i, ci) in c.iter_mut().enumerate() {
            *ci += g
                .row(i)
                .iter()
                .zip(&profile.p[r])
                .map(|(gij, pj)| gij * pj)
                .sum::<f64>();
        }
    }
    c
}

/// Exact water level for floors `c` and budget `budget`.
///
/// With the floors sorted ascending, the active set is the longest prefix
/// `k` whose level `(budget + sum_{i<=k} c_i) / k` stays above `c_k`.
pub fn water_level(c: &[f64], budget: f64) -> Result<WaterfillResult> {
    if c.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = c.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut prefix = 0.0;
    let mut mu = budget + sorted[0];
    for (k, &ck) in sorted.iter().enumerate() {
        prefix += ck;
        let level = (budget + prefix) / (k + 1) as f64;
        if level > ck {
            mu = level;
        } else {
            break;
        }
    }

    let p_star: Vec<f64> = c.iter().map(|&ci| (mu - ci).max(0.0)).collect();
    let active_set = p_star
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, _)| i)
        .collect();
    Ok(WaterfillResult {
        p_star,
        mu,
        active_set,
    })
}

/// Water-filling response of user `q` to the others' powers in `profile`.
/// Antennas without a matching singular value get zero power.
pub fn best_response(net: &EffectiveNetwork, profile: &PowerProfile, q: usize) -> Result<Vec<f64>> {
    let c = interference_plus_noise(net, profile, q);
    let wf = water_level(&c, net.config.power_budget[q])?;
    let mut out = vec![0.0; net.config.nt[q]];
    out[..wf.p_star.len()].copy_from_slice(&wf.p_star);
    Ok(out)
}

/// `sum_i log2(1 + p_i / c_i)` over the streams in `c`, in bits per channel use.
pub fn user_rate(p: &[f64], c: &[f64]) -> f64 {
    p.iter()
        .zip(c)
        .map(|(pi, ci)| (pi / ci).ln_1p() / std::f64::consts::LN_2)
        .sum()
}

pub fn user_rates(net: &EffectiveNetwork, profile: &PowerProfile) -> Vec<f64> {
    (0..net.users())
        .map(|q| user_rate(&profile.p[q], &interference_plus_noise(net, profile, q)))
        .collect()
}

pub fn sum_rate(net: &EffectiveNetwork, profile: &PowerProfile) -> f64 {
    user_rates(net, profile).iter().sum()
}
