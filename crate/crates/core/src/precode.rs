//! SVD precoding and the effective cross-link gains it induces.
//!
//! Transmitter `r` sends through `V_r` and receiver `q` decodes with `U_q^H`,
//! so the direct link of user `q` becomes `nu_q = min(nt_q, nr_q)` parallel
//! scalar channels with gains `sigma_q^i`, and the interference from `r`
//! arrives through the rotated matrix `U_q^H H_rq V_r`. Only the first
//! `nu_q` rows of that matrix are kept: the remaining receive dimensions
//! carry no signal after decoding.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::netmodel::{ChannelRealization, NetworkConfig};
pub use crate::svd::{svd_decompose, LinkSvd};

#[derive(Debug, Clone)]
pub struct EffectiveNetwork {
    pub config: NetworkConfig,
    pub svd: Vec<LinkSvd>,
    /// `gain[r][q]` is `nu_q x nt_r` with entries `|[U_q^H H_rq V_r]_ij|^2`;
    /// the diagonal `r == q` slots are empty.
    gain: Vec<Vec<DMatrix<f64>>>,
    /// `gain[r][q]` with row `i` divided by `sigma_q^i^2`.
    normalized: Vec<Vec<DMatrix<f64>>>,
    pub sigma_sq: Vec<Vec<f64>>,
    /// `N0_q / sigma_q^i^2`.
    pub noise_floor: Vec<Vec<f64>>,
}

impl EffectiveNetwork {
    pub fn users(&self) -> usize {
        self.config.users
    }

    pub fn streams(&self, q: usize) -> usize {
        self.sigma_sq[q].len()
    }

    /// Raw squared cross gains from transmitter `r` into the streams of
    /// receiver `q`.
    pub fn gain(&self, r: usize, q: usize) -> &DMatrix<f64> {
        &self.gain[r][q]
    }

    /// Cross gains normalized by the direct-link stream gains of `q`.
    pub fn normalized_gain(&self, r: usize, q: usize) -> &DMatrix<f64> {
        &self.normalized[r][q]
    }
}

pub fn build_effective_network(
    realization: &ChannelRealization,
    config: &NetworkConfig,
) -> Result<EffectiveNetwork> {
    let users = config.users;
    if realization.users() != users {
        return Err(Error::DimensionMismatch(format!(
            "realization has {} users, config has {users}",
            realization.users()
        )));
    }

    let svd = (0..users)
        .map(|q| svd_decompose(realization.get(q, q)))
        .collect::<Result<Vec<_>>>()?;

    let mut sigma_sq = Vec::with_capacity(users);
    let mut noise_floor = Vec::with_capacity(users);
    for (q, s) in svd.iter().enumerate() {
        let sq: Vec<f64> = s.sigma.iter().map(|x| x * x).collect();
        let floor: Vec<f64> = sq.iter().map(|x| config.noise_power[q] / x).collect();
        // numerically zero singular values count as rank loss
        let rank_tol = s.sigma[0] * (config.nt[q].max(config.nr[q]) as f64) * f64::EPSILON;
        if let Some(index) = s
            .sigma
            .iter()
            .zip(&floor)
            .position(|(&sv, f)| !(sv > rank_tol) || !f.is_finite())
        {
            return Err(Error::DegenerateChannel { user: q, index });
        }
        sigma_sq.push(sq);
        noise_floor.push(floor);
    }

    let mut gain = vec![vec![DMatrix::zeros(0, 0); users]; users];
    let mut normalized = gain.clone();
    for r in 0..users {
        for q in (0..users).filter(|&q| q != r) {
            let nu = sigma_sq[q].len();
            let rotated = svd[q].u.adjoint() * realization.get(r, q) * &svd[r].v;
            let g = DMatrix::from_fn(nu, config.nt[r], |i, j| rotated[(i, j)].norm_sqr());
            let mut n = g.clone();
            for (i, mut row) in n.row_iter_mut().enumerate() {
                row /= sigma_sq[q][i];
            }
            gain[r][q] = g;
            normalized[r][q] = n;
        }
    }

    Ok(EffectiveNetwork {
        config: config.clone(),
        svd,
        gain,
        normalized,
        sigma_sq,
        noise_floor,
    })
}
