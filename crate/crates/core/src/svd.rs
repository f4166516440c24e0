//! Full singular value decomposition of small complex matrices.
//!
//! One-sided (Hestenes) Jacobi: plane rotations are applied to the columns of
//! a tall matrix until every pair is numerically orthogonal. The column norms
//! are then the singular values, and the normalized columns are the left
//! singular vectors. The left basis is completed to a full unitary matrix by
//! Gram-Schmidt against the canonical basis. Wide inputs are handled through
//! their adjoint.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::netmodel::{CMatrix, C64};

const MAX_SWEEPS: usize = 80;
const ORTHO_TOL: f64 = 1e-15;

/// `h = u * diag(sigma) * v^H` with `u` and `v` square unitary.
#[derive(Debug, Clone)]
pub struct LinkSvd {
    pub u: CMatrix,
    /// `min(rows, cols)` singular values, non-increasing.
    pub sigma: Vec<f64>,
    pub v: CMatrix,
}

impl LinkSvd {
    /// `u * Sigma * v^H` with `Sigma` the rectangular diagonal embedding.
    pub fn reconstruct(&self) -> CMatrix {
        let (m, n) = (self.u.nrows(), self.v.nrows());
        let mut s = CMatrix::zeros(m, n);
        for (i, &x) in self.sigma.iter().enumerate() {
            s[(i, i)] = C64::new(x, 0.0);
        }
        &self.u * s * self.v.adjoint()
    }
}

pub fn svd_decompose(h: &CMatrix) -> Result<LinkSvd> {
    let (m, n) = h.shape();
    if m == 0 || n == 0 {
        return Err(Error::EmptyInput);
    }
    if m >= n {
        tall_svd(h)
    } else {
        let t = tall_svd(&h.adjoint())?;
        Ok(LinkSvd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        })
    }
}

fn tall_svd(a: &CMatrix) -> Result<LinkSvd> {
    let (m, n) = a.shape();
    let mut g = a.clone();
    let mut v = CMatrix::identity(n, n);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = g.column(p).norm_squared();
                let beta = g.column(q).norm_squared();
                let gamma = g.column(p).dotc(&g.column(q));
                let off = gamma.norm();
                if off == 0.0 || off <= ORTHO_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                // remove the phase of gamma, then a real Jacobi rotation
                let phase = (gamma / off).conj();
                let zeta = (beta - alpha) / (2.0 * off);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut g, p, q, phase, c, s);
                rotate(&mut v, p, q, phase, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence { sweeps: MAX_SWEEPS });
    }

    let norms: Vec<f64> = (0..n).map(|j| g.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let rank_tol = sigma[0] * m as f64 * f64::EPSILON;

    let mut left: Vec<Option<DVector<C64>>> = order
        .iter()
        .map(|&j| (norms[j] > rank_tol).then(|| g.column(j) / C64::new(norms[j], 0.0)))
        .collect();
    left.resize(m, None);
    let u = complete_basis(m, left);

    let mut v_sorted = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        v_sorted.set_column(dst, &v.column(src));
    }

    Ok(LinkSvd {
        u,
        sigma,
        v: v_sorted,
    })
}

fn rotate(x: &mut CMatrix, p: usize, q: usize, phase: C64, c: f64, s: f64) {
    for i in 0..x.nrows() {
        let xp = x[(i, p)];
        let xq = x[(i, q)] * phase;
        x[(i, p)] = xp * c - xq * s;
        x[(i, q)] = xp * s + xq * c;
    }
}

/// Fills the `None` slots with unit vectors orthogonal to everything else.
fn complete_basis(m: usize, mut cols: Vec<Option<DVector<C64>>>) -> CMatrix {
    while let Some(slot) = cols.iter().position(Option::is_none) {
        let known: Vec<&DVector<C64>> = cols.iter().flatten().collect();
        let project_out = |mut w: DVector<C64>| {
            for _ in 0..2 {
                for b in &known {
                    let coeff = b.dotc(&w);
                    w -= *b * coeff;
                }
            }
            w
        };
        let best = (0..m)
            .map(|i| {
                let mut e = DVector::<C64>::zeros(m);
                e[i] = C64::new(1.0, 0.0);
                project_out(e)
            })
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .expect("m > 0");
        let norm = best.norm();
        cols[slot] = Some(best / C64::new(norm, 0.0));
    }
    let mut u = CMatrix::zeros(m, m);
    for (j, c) in cols.into_iter().enumerate() {
        u.set_column(j, &c.expect("filled"));
    }
    u
}

/// Largest entry magnitude of `a^H a - I`.
pub fn unitarity_error(a: &CMatrix) -> f64 {
    let g = a.adjoint() * a;
    let eye = CMatrix::identity(g.nrows(), g.ncols());
    (g - eye).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}
