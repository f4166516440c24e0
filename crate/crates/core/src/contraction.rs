//! Interference matrix and Nash-equilibrium uniqueness certificates.
//!
//! Stacking every user's transmit powers into one vector `p`, the
//! normalized interference seen on all streams is `M p`, where the block of
//! `M` at (receiver `q`, transmitter `r`) holds the squared rotated cross
//! gains `|[U_q^H H_rq V_r]_ij|^2 / sigma_q^i^2` and the diagonal blocks are
//! zero. A user with more transmit antennas than streams gets zero rows so
//! that its row block has `nt_q` rows and `M` is square of size `sum nt_q`.
//!
//! The water-filling game has a unique equilibrium when the interference map
//! is a contraction in some weighted maximum norm. With unit weights that is
//! `||M||_inf < 1` (or `||M^T||_inf < 1`); over all positive weights it is
//! `rho(M) < 1`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numfmt::format_sig;
use crate::precode::EffectiveNetwork;

pub const SPECTRAL_TOL: f64 = 1e-9;
pub const SPECTRAL_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone)]
pub struct InterferenceMatrix {
    pub m: DMatrix<f64>,
    /// First row (and column) of each user's block.
    pub offsets: Vec<usize>,
    /// Zero rows appended to each user's row block.
    pub padded_rows: Vec<usize>,
}

impl InterferenceMatrix {
    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    /// Row of stream `i` at receiver `q`.
    pub fn row_of(&self, q: usize, i: usize) -> usize {
        self.offsets[q] + i
    }

    /// Column of transmit antenna `j` of user `r`.
    pub fn col_of(&self, r: usize, j: usize) -> usize {
        self.offsets[r] + j
    }

    /// `true` for the appended all-zero rows.
    pub fn is_padded_row(&self, row: usize) -> bool {
        let q = self.offsets.partition_point(|&o| o <= row) - 1;
        let block_rows = self.offsets.get(q + 1).copied().unwrap_or(self.dim()) - self.offsets[q];
        row - self.offsets[q] >= block_rows - self.padded_rows[q]
    }
}

pub fn build_m(net: &EffectiveNetwork) -> InterferenceMatrix {
    let nt = &net.config.nt;
    let mut offsets = Vec::with_capacity(nt.len());
    let mut acc = 0;
    for &n in nt {
        offsets.push(acc);
        acc += n;
    }
    let mut m = DMatrix::zeros(acc, acc);
    for q in 0..net.users() {
        for r in (0..net.users()).filter(|&r| r != q) {
            let g = net.normalized_gain(r, q);
            m.view_mut((offsets[q], offsets[r]), g.shape()).copy_from(g);
        }
    }
    let padded_rows = (0..net.users()).map(|q| nt[q] - net.streams(q)).collect();
    InterferenceMatrix {
        m,
        offsets,
        padded_rows,
    }
}

/// `||M||_inf`: the largest row sum.
pub fn max_row_sum(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.sum()).fold(0.0, f64::max)
}

/// `||M^T||_inf`: the largest column sum.
pub fn max_col_sum(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.sum()).fold(0.0, f64::max)
}

/// `max_i (1 / v_i) sum_j M_ij v_j`.
pub fn weighted_max_norm(m: &DMatrix<f64>, v: &[f64]) -> Result<f64> {
    if v.len() != m.ncols() || m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} matrix with weight vector of length {}",
            m.nrows(),
            m.ncols(),
            v.len()
        )));
    }
    if let Some((index, &value)) = v.iter().enumerate().find(|(_, x)| !(**x > 0.0)) {
        return Err(Error::NonPositiveWeight { index, value });
    }
    let mv = m * DVector::from_column_slice(v);
    Ok(mv
        .iter()
        .zip(v)
        .map(|(a, vi)| a / vi)
        .fold(0.0, f64::max))
}

/// Perron root of a square nonnegative matrix, to absolute accuracy `tol`.
///
/// The matrix is split into strongly connected components of its sparsity
/// graph; `rho` is the largest component root. Each irreducible component is
/// solved by power iteration on `I + M_c`, which is primitive, and the
/// iteration stops once the Collatz-Wielandt bounds
/// `min_i (M x)_i / x_i <= rho <= max_i (M x)_i / x_i` are within `tol`.
pub fn spectral_radius(m: &DMatrix<f64>, tol: f64) -> Result<f64> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "spectral radius of a {}x{} matrix",
            n,
            m.ncols()
        )));
    }
    if let Some(x) = m.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
        return Err(Error::DimensionMismatch(format!(
            "expected a finite nonnegative matrix, found entry {x}"
        )));
    }

    let mut graph = DiGraph::<(), ()>::with_capacity(n, n * n);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if m[(i, j)] > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }

    let mut rho: f64 = 0.0;
    for component in tarjan_scc(&graph) {
        let idx: Vec<usize> = component.iter().map(|v| v.index()).collect();
        let root = if idx.len() == 1 {
            m[(idx[0], idx[0])]
        } else {
            let sub = m.select_rows(&idx).select_columns(&idx);
            perron_root_irreducible(&sub, tol)?
        };
        rho = rho.max(root);
    }
    Ok(rho)
}

/// Power iteration on `s I + M` with `s` the largest row sum, so the shift
/// matches the scale of the component. The Collatz-Wielandt ratios bracket the
/// Perron root at every step; if the bracket is still wider than `tol` after
/// the iteration budget, the dense eigenvalue modulus clamped into it is used.
fn perron_root_irreducible(m: &DMatrix<f64>, tol: f64) -> Result<f64> {
    let shift = max_row_sum(m);
    let mut x = DVector::from_element(m.nrows(), 1.0);
    let (mut lo, mut hi): (f64, f64) = (0.0, shift);
    for _ in 0..SPECTRAL_MAX_ITER {
        let y = m * &x;
        let (l, h) = y
            .iter()
            .zip(x.iter())
            .map(|(a, b)| a / b)
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
        lo = lo.max(l);
        hi = hi.min(h);
        if hi - lo <= tol.max(16.0 * f64::EPSILON * hi) {
            return Ok(0.5 * (lo + hi));
        }
        x = y + &x * shift;
        let scale = x.max();
        x /= scale;
    }
    let dense = m
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if dense.is_finite() && dense >= lo - tol && dense <= hi + tol {
        Ok(dense.clamp(lo, hi))
    } else {
        Err(Error::SpectralNoConvergence {
            iterations: SPECTRAL_MAX_ITER,
            gap: hi - lo,
        })
    }
}

/// `sum_j max_(q,i) sum_{r != q} |[H~_rq]_ij|^2 / sigma_q^i^2`, with `j`
/// running over transmit antenna indices (missing antennas count as zero).
pub fn condition_13_value(net: &EffectiveNetwork) -> f64 {
    let max_nt = net.config.nt.iter().copied().max().unwrap_or(0);
    let mut column_max = vec![0.0f64; max_nt];
    for q in 0..net.users() {
        for i in 0..net.streams(q) {
            let mut per_antenna = vec![0.0; max_nt];
            for r in (0..net.users()).filter(|&r| r != q) {
                let g = net.normalized_gain(r, q);
                for j in 0..g.ncols() {
                    per_antenna[j] += g[(i, j)];
                }
            }
            for (cm, v) in column_max.iter_mut().zip(per_antenna) {
                *cm = cm.max(v);
            }
        }
    }
    column_max.iter().sum()
}

/// The transposed counterpart of [`condition_13_value`]: the interference
/// produced by antenna `j` of user `q` on stream `i` of every other receiver
/// `r`, normalized by that receiver's stream gain, summed over `r`, maximized
/// over `(q, j)` and summed over `i`.
pub fn condition_14_value(net: &EffectiveNetwork) -> f64 {
    let max_nu = (0..net.users()).map(|q| net.streams(q)).max().unwrap_or(0);
    let mut stream_max = vec![0.0f64; max_nu];
    for q in 0..net.users() {
        for j in 0..net.config.nt[q] {
            let mut per_stream = vec![0.0; max_nu];
            for r in (0..net.users()).filter(|&r| r != q) {
                let g = net.normalized_gain(q, r);
                for i in 0..g.nrows() {
                    per_stream[i] += g[(i, j)];
                }
            }
            for (sm, v) in stream_max.iter_mut().zip(per_stream) {
                *sm = sm.max(v);
            }
        }
    }
    stream_max.iter().sum()
}

pub fn cond_13_holds(net: &EffectiveNetwork) -> bool {
    condition_13_value(net) < 1.0
}

pub fn cond_14_holds(net: &EffectiveNetwork) -> bool {
    condition_14_value(net) < 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessCertificate {
    pub row_norm: f64,
    pub col_norm: f64,
    pub spectral_radius: f64,
    pub cond_13_value: f64,
    pub cond_14_value: f64,
    pub cond_13: bool,
    pub cond_14: bool,
    pub norm_unique: bool,
    pub spectral_unique: bool,
    /// `min(row_norm, col_norm)` when it is below one.
    pub modulus: Option<f64>,
}

pub fn certify(net: &EffectiveNetwork) -> Result<UniquenessCertificate> {
    let im = build_m(net);
    certify_matrix(net, &im)
}

pub fn certify_matrix(net: &EffectiveNetwork, im: &InterferenceMatrix) -> Result<UniquenessCertificate> {
    let row_norm = max_row_sum(&im.m);
    let col_norm = max_col_sum(&im.m);
    let best_norm = row_norm.min(col_norm);
    // both norms bound rho from above exactly, the iterate only to within tol
    let rho = spectral_radius(&im.m, SPECTRAL_TOL)?.min(best_norm);
    let cond_13_value = condition_13_value(net);
    let cond_14_value = condition_14_value(net);
    let norm_unique = best_norm < 1.0;
    Ok(UniquenessCertificate {
        row_norm,
        col_norm,
        spectral_radius: rho,
        cond_13_value,
        cond_14_value,
        cond_13: cond_13_value < 1.0,
        cond_14: cond_14_value < 1.0,
        norm_unique,
        spectral_unique: rho < 1.0 || norm_unique,
        modulus: norm_unique.then_some(best_norm),
    })
}

/// `M p + offset`, the affine interference map at fixed water levels.
pub fn interference_function(im: &InterferenceMatrix, p: &[f64], offset: &[f64]) -> Vec<f64> {
    let mp = &im.m * DVector::from_column_slice(p);
    mp.iter().zip(offset).map(|(a, b)| a + b).collect()
}

/// Writes `M` with a `row` label column; labels are `user.index`, 1-based.
pub fn write_matrix_csv(im: &InterferenceMatrix, path: &Path) -> Result<()> {
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let labels: Vec<String> = (0..im.offsets.len())
        .flat_map(|q| {
            let end = im.offsets.get(q + 1).copied().unwrap_or(im.dim());
            (0..end - im.offsets[q]).map(move |i| format!("{}.{}", q + 1, i + 1))
        })
        .collect();
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    let mut header = vec!["row".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header).map_err(wrap)?;
    for (label, row) in labels.iter().zip(im.m.row_iter()) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|&x| format_sig(x, 9)));
        w.write_record(&rec).map_err(wrap)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{sample_channels, CMatrix, ChannelRealization, NetworkConfig, C64};
    use crate::precode::build_effective_network;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two scalar links, cross power gains `a` (into receiver 1) and `b`.
    fn scalar_pair(a: f64, b: f64) -> EffectiveNetwork {
        let config = NetworkConfig::symmetric(2, 1, 1, 1.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let one = CMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        let amp = |g: f64| CMatrix::from_element(1, 1, C64::new(g.sqrt(), 0.0));
        let ch = ChannelRealization::from_matrices(
            &config,
            vec![vec![one.clone(), amp(b)], vec![amp(a), one]],
        )
        .unwrap();
        build_effective_network(&ch, &config).unwrap()
    }

    fn random_net(users: usize, nt: usize, nr: usize, cross: f64, seed: u64) -> EffectiveNetwork {
        let c = NetworkConfig::symmetric(users, nt, nr, 10.0, 1.0, 15.0, cross, 2.5).unwrap();
        build_effective_network(&sample_channels(&c, seed), &c).unwrap()
    }

    fn dense_spectral_radius(m: &DMatrix<f64>) -> f64 {
        m.clone()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn scalar_pair_matrix() {
        let net = scalar_pair(0.3, 0.6);
        let im = build_m(&net);
        assert!((im.m[(0, 1)] - 0.3).abs() < 1e-15);
        assert!((im.m[(1, 0)] - 0.6).abs() < 1e-15);
        assert_eq!(im.m[(0, 0)], 0.0);
        assert_eq!(im.m[(1, 1)], 0.0);
        assert!((max_row_sum(&im.m) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn single_user_matrix_is_zero() {
        let im = build_m(&random_net(1, 2, 2, 15.0, 3));
        assert_eq!(im.m, DMatrix::zeros(2, 2));
        assert_eq!(spectral_radius(&im.m, 1e-9).unwrap(), 0.0);
    }

    #[test]
    fn wide_users_get_zero_rows() {
        let net = random_net(2, 4, 2, 20.0, 9);
        let im = build_m(&net);
        assert_eq!(im.dim(), 8);
        assert_eq!(im.padded_rows, vec![2, 2]);
        for row in 0..8 {
            let padded = matches!(row, 2 | 3 | 6 | 7);
            assert_eq!(im.is_padded_row(row), padded);
            assert_eq!(im.m.row(row).sum() == 0.0, padded, "row {row}");
        }
    }

    #[test]
    fn entries_follow_block_layout() {
        let net = random_net(3, 3, 2, 20.0, 4);
        let im = build_m(&net);
        for q in 0..3 {
            for r in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        let v = im.m[(im.row_of(q, i), im.col_of(r, j))];
                        if r == q || i >= 2 {
                            assert_eq!(v, 0.0);
                        } else {
                            let expected = net.gain(r, q)[(i, j)] / net.sigma_sq[q][i];
                            assert!((v - expected).abs() < 1e-15);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn norms_against_scans() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = DMatrix::from_fn(6, 6, |_, _| rng.random_range(0.0..1.0));
        let rows: Vec<f64> = (0..6).map(|i| (0..6).map(|j| m[(i, j)]).sum()).collect();
        let cols: Vec<f64> = (0..6).map(|j| (0..6).map(|i| m[(i, j)]).sum()).collect();
        assert_eq!(max_row_sum(&m), rows.iter().copied().fold(0.0, f64::max));
        assert_eq!(max_col_sum(&m), cols.iter().copied().fold(0.0, f64::max));
        assert_eq!(max_row_sum(&DMatrix::zeros(3, 3)), 0.0);
        assert_eq!(weighted_max_norm(&m, &[1.0; 6]).unwrap(), max_row_sum(&m));
    }

    #[test]
    fn weighted_norm_by_hand() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.25, 0.0]);
        assert!((weighted_max_norm(&m, &[2.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            weighted_max_norm(&m, &[1.0, 0.0]),
            Err(Error::NonPositiveWeight { index: 1, .. })
        ));
        assert_eq!(weighted_max_norm(&DMatrix::zeros(2, 2), &[3.0, 0.1]).unwrap(), 0.0);
    }

    #[test]
    fn spectral_radius_closed_forms() {
        assert_eq!(spectral_radius(&DMatrix::zeros(4, 4), 1e-9).unwrap(), 0.0);
        let (a, b) = (0.3, 1.7);
        let m = DMatrix::from_row_slice(2, 2, &[0.0, a, b, 0.0]);
        assert!((spectral_radius(&m, 1e-12).unwrap() - (a * b).sqrt()).abs() < 1e-12);
        let nil = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]);
        assert_eq!(spectral_radius(&nil, 1e-9).unwrap(), 0.0);
        assert!(spectral_radius(&DMatrix::zeros(2, 3), 1e-9).is_err());
    }

    #[test]
    fn spectral_radius_matches_dense_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for n in 2..9 {
            for density in [0.2, 0.5, 1.0] {
                let m = DMatrix::from_fn(n, n, |_, _| {
                    if rng.random_bool(density) { rng.random_range(0.0..2.0) } else { 0.0 }
                });
                let ours = spectral_radius(&m, 1e-11).unwrap();
                let dense = dense_spectral_radius(&m);
                assert!((ours - dense).abs() < 1e-7 * dense.max(1.0), "{ours} vs {dense}\n{m}");
            }
        }
    }

    #[test]
    fn padding_is_neutral() {
        let net = random_net(3, 4, 2, 20.0, 17);
        let im = build_m(&net);
        let keep: Vec<usize> = (0..im.dim()).filter(|&r| !im.is_padded_row(r)).collect();
        let rect = im.m.select_rows(&keep);
        assert_eq!(max_row_sum(&rect), max_row_sum(&im.m));
        assert_eq!(max_col_sum(&rect), max_col_sum(&im.m));
        let core = rect.select_columns(&keep);
        let a = spectral_radius(&im.m, 1e-12).unwrap();
        let b = spectral_radius(&core, 1e-12).unwrap();
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn sum_of_max_conditions_on_scalars() {
        let net = scalar_pair(0.25, 0.25);
        assert!((condition_13_value(&net) - 0.25).abs() < 1e-15);
        assert!((condition_14_value(&net) - 0.25).abs() < 1e-15);
        assert!(cond_13_holds(&net) && cond_14_holds(&net));
        assert!(cond_13_holds(&random_net(1, 2, 2, 15.0, 1)));
    }

    #[test]
    fn certificate_examples() {
        let single = certify(&random_net(1, 2, 2, 15.0, 2)).unwrap();
        assert_eq!(single.spectral_radius, 0.0);
        assert!(single.norm_unique && single.spectral_unique && single.cond_13 && single.cond_14);

        let strong = certify(&scalar_pair(4.0, 4.0)).unwrap();
        assert!((strong.row_norm - 4.0).abs() < 1e-12);
        assert!((strong.spectral_radius - 4.0).abs() < 1e-9);
        assert!(!strong.norm_unique && !strong.spectral_unique && !strong.cond_13 && !strong.cond_14);
        assert_eq!(strong.modulus, None);

        let lopsided = certify(&scalar_pair(0.1, 5.0)).unwrap();
        assert!((lopsided.spectral_radius - 0.5f64.sqrt()).abs() < 1e-9);
        assert!((lopsided.row_norm - 5.0).abs() < 1e-12);
        assert!(lopsided.spectral_unique && !lopsided.norm_unique);

        let weak = certify(&scalar_pair(0.25, 0.25)).unwrap();
        assert_eq!(weak.modulus, Some(weak.row_norm));
    }

    #[test]
    fn fixed_level_interference_map_contracts() {
        for seed in 0..20 {
            let net = random_net(4, 2, 2, 45.0, seed);
            let im = build_m(&net);
            let c = max_row_sum(&im.m);
            if c >= 1.0 {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p: Vec<f64> = (0..im.dim()).map(|_| rng.random_range(0.0..5.0)).collect();
            let offset: Vec<f64> = (0..im.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            for eps in [1e-3, 0.5, 10.0] {
                let shifted: Vec<f64> = p.iter().map(|x| x + eps).collect();
                let lhs = interference_function(&im, &shifted, &offset);
                let base = interference_function(&im, &p, &offset);
                for (l, b) in lhs.iter().zip(&base) {
                    assert!(*l <= b + c * eps + 1e-12);
                    assert!(*l >= *b);
                }
            }
        }
    }

    #[test]
    fn matrix_csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_matrix_csv(&build_m(&scalar_pair(0.25, 0.5)), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "row,1.1,2.1\n1.1,0,0.25\n2.1,0.5,0\n");
    }

    proptest! {
        #[test]
        fn certificate_coherence(seed in any::<u64>(), cross in 15.0f64..60.0, wide in any::<bool>()) {
            let net = random_net(4, if wide { 4 } else { 2 }, 2, cross, seed);
            let im = build_m(&net);
            let cert = certify_matrix(&net, &im).unwrap();
            prop_assert!(cert.spectral_radius <= cert.row_norm.min(cert.col_norm) + 1e-9);
            prop_assert!(!cert.norm_unique || cert.spectral_unique);
            prop_assert!(!cert.cond_13 || cert.row_norm < 1.0);
            prop_assert!(!cert.cond_14 || cert.col_norm < 1.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..im.dim()).map(|_| rng.random_range(0.1..3.0)).collect();
            let rho = spectral_radius(&im.m, 1e-10).unwrap();
            prop_assert!(rho <= weighted_max_norm(&im.m, &v).unwrap() + 1e-9);
        }
    }
}
