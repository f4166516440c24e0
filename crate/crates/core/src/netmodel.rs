//! Network topology and random channel realizations.
//!
//! Small-scale fading is i.i.d. circularly-symmetric complex Gaussian
//! `CN(0, 1)` (each of the real and imaginary parts has variance 1/2), and
//! large-scale attenuation is the power law `d^-gamma`. Path loss is folded
//! into the sampled matrices as the amplitude factor `d^(-gamma/2)`, so every
//! downstream consumer sees one composite `H[r][q]`.
//!
//! Sampling uses `ChaCha8Rng::seed_from_u64(seed)` with entries drawn in the
//! order `r` (transmitter, outer), `q` (receiver), then row-major entries,
//! real part before imaginary part. Identical `(config, seed)` pairs produce
//! bit-identical realizations on every platform.

use nalgebra::DMatrix;
use nalgebra::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

/// Static description of a `Q`-link interference network.
///
/// `cross_distance[r][q]` is the distance from transmitter `r` to receiver
/// `q`; its diagonal mirrors `direct_distance` and is never used for
/// interference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub users: usize,
    pub nt: Vec<usize>,
    pub nr: Vec<usize>,
    pub power_budget: Vec<f64>,
    pub noise_power: Vec<f64>,
    pub direct_distance: Vec<f64>,
    pub cross_distance: Vec<Vec<f64>>,
    pub pathloss_exponent: f64,
}

impl NetworkConfig {
    /// Every user gets the same antennas, budget and noise; all cross links
    /// share one distance.
    #[allow(clippy::too_many_arguments)]
    pub fn symmetric(
        users: usize,
        nt: usize,
        nr: usize,
        power_budget: f64,
        noise_power: f64,
        direct_distance: f64,
        cross_distance: f64,
        pathloss_exponent: f64,
    ) -> Result<Self> {
        let cross = (0..users)
            .map(|r| {
                (0..users)
                    .map(|q| if r == q { direct_distance } else { cross_distance })
                    .collect()
            })
            .collect();
        validate_config(NetworkConfig {
            users,
            nt: vec![nt; users],
            nr: vec![nr; users],
            power_budget: vec![power_budget; users],
            noise_power: vec![noise_power; users],
            direct_distance: vec![direct_distance; users],
            cross_distance: cross,
            pathloss_exponent,
        })
    }

    /// Number of parallel streams `min(nt, nr)` of user `q`.
    pub fn streams(&self, q: usize) -> usize {
        self.nt[q].min(self.nr[q])
    }

    pub fn total_tx_antennas(&self) -> usize {
        self.nt.iter().sum()
    }

    /// Distance from transmitter `r` to receiver `q`.
    pub fn distance(&self, r: usize, q: usize) -> f64 {
        if r == q {
            self.direct_distance[q]
        } else {
            self.cross_distance[r][q]
        }
    }
}

/// Checks every invariant of [`NetworkConfig`] and returns the config with
/// the diagonal of `cross_distance` set to `direct_distance`.
pub fn validate_config(mut raw: NetworkConfig) -> Result<NetworkConfig> {
    let q = raw.users;
    if q == 0 {
        return Err(Error::config("users", "at least one user is required"));
    }
    if raw.nt.len() != q || raw.nr.len() != q {
        return Err(Error::config(
            if raw.nt.len() != q { "nt" } else { "nr" },
            format!(
                "antenna array length mismatch: users = {q}, nt has {}, nr has {}",
                raw.nt.len(),
                raw.nr.len()
            ),
        ));
    }
    for (name, counts) in [("nt", &raw.nt), ("nr", &raw.nr)] {
        if let Some(i) = counts.iter().position(|&n| n == 0) {
            return Err(Error::config(name, format!("antenna count of user {i} is zero")));
        }
    }
    for (name, values) in [
        ("power_budget", &raw.power_budget),
        ("noise_power", &raw.noise_power),
        ("direct_distance", &raw.direct_distance),
    ] {
        if values.len() != q {
            return Err(Error::config(
                name,
                format!("length mismatch: expected {q} entries, got {}", values.len()),
            ));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::config(
                name,
                format!("entry {i} must be positive and finite, got {v}"),
            ));
        }
    }
    if raw.cross_distance.len() != q || raw.cross_distance.iter().any(|row| row.len() != q) {
        return Err(Error::config(
            "cross_distance",
            format!("length mismatch: expected a {q}x{q} matrix"),
        ));
    }
    for r in 0..q {
        for s in 0..q {
            let d = raw.cross_distance[r][s];
            if r != s && !(d.is_finite() && d > 0.0) {
                return Err(Error::config(
                    "cross_distance",
                    format!("entry [{r}][{s}] must be positive and finite, got {d}"),
                ));
            }
        }
        raw.cross_distance[r][r] = raw.direct_distance[r];
    }
    if !(raw.pathloss_exponent.is_finite() && raw.pathloss_exponent >= 0.0) {
        return Err(Error::config(
            "pathloss_exponent",
            format!("must be finite and >= 0, got {}", raw.pathloss_exponent),
        ));
    }
    Ok(raw)
}

/// Mean power attenuation `d^-gamma` of a link of length `d`.
pub fn pathloss_power_gain(distance: f64, exponent: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::NonPositiveDistance(distance));
    }
    Ok(distance.powf(-exponent))
}

/// All channel matrices of one network draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `h[r][q]` has shape `nr[q] x nt[r]`.
    h: Vec<Vec<CMatrix>>,
    /// `None` for channels supplied explicitly.
    pub seed: Option<u64>,
}

impl ChannelRealization {
    /// Wraps explicitly supplied matrices after checking their shapes.
    pub fn from_matrices(config: &NetworkConfig, h: Vec<Vec<CMatrix>>) -> Result<Self> {
        let q = config.users;
        if h.len() != q || h.iter().any(|row| row.len() != q) {
            return Err(Error::config(
                "channels",
                format!("expected a {q}x{q} array of matrices"),
            ));
        }
        for (r, row) in h.iter().enumerate() {
            for (s, m) in row.iter().enumerate() {
                if m.shape() != (config.nr[s], config.nt[r]) {
                    return Err(Error::config(
                        "channels",
                        format!(
                            "H[{r}][{s}] has shape {:?}, expected ({}, {})",
                            m.shape(),
                            config.nr[s],
                            config.nt[r]
                        ),
                    ));
                }
            }
        }
        Ok(Self { h, seed: None })
    }

    /// Channel from transmitter `r` to receiver `q`.
    pub fn get(&self, r: usize, q: usize) -> &CMatrix {
        &self.h[r][q]
    }

    pub fn users(&self) -> usize {
        self.h.len()
    }
}

pub fn sample_channels(config: &NetworkConfig, seed: u64) -> ChannelRealization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let component_std = std::f64::consts::FRAC_1_SQRT_2;
    let q = config.users;
    let mut h = Vec::with_capacity(q);
    for r in 0..q {
        let mut row = Vec::with_capacity(q);
        for s in 0..q {
            let amplitude = config
                .distance(r, s)
                .powf(-config.pathloss_exponent / 2.0);
            let (rows, cols) = (config.nr[s], config.nt[r]);
            let mut entries = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                entries.push(C64::new(re, im) * (component_std * amplitude));
            }
            row.push(CMatrix::from_row_slice(rows, cols, &entries));
        }
        h.push(row);
    }
    ChannelRealization { h, seed: Some(seed) }
}
