//! The power-control game under Jacobi, Gauss-Seidel and randomized
//! bounded-staleness asynchronous update schedules.
//!
//! At step `n` every user scheduled to update water-fills against the other
//! users' powers as it last heard them, `p_j(n - d)` with staleness
//! `d <= D`; everyone else holds its allocation. Asynchrony is simulated in
//! one deterministic loop, so a run is a pure function of
//! `(net, schedule, p0, tol)`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::NetworkConfig;
use crate::numfmt::format_sig;
use crate::precode::EffectiveNetwork;
use crate::waterfill::{best_response, user_rates, PowerProfile};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_IT_MAX: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Jacobi,
    GaussSeidel,
    RandomAsync,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jacobi" => Ok(Self::Jacobi),
            "gauss-seidel" | "gauss_seidel" => Ok(Self::GaussSeidel),
            "async" | "random-async" | "random_async" => Ok(Self::RandomAsync),
            other => Err(Error::InvalidSchedule(format!(
                "unknown schedule kind `{other}` (expected jacobi, gauss-seidel or async)"
            ))),
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Jacobi => "jacobi",
            Self::GaussSeidel => "gauss-seidel",
            Self::RandomAsync => "async",
        })
    }
}

/// Who updates at each step, and how stale each updater's information is.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub users: usize,
    pub it_max: usize,
    /// Largest staleness `n - tau_j^q(n)`.
    pub delay_bound: usize,
    /// Every user updates at least once in any `update_bound` consecutive steps.
    pub update_bound: usize,
    pub seed: u64,
    updates: Vec<Vec<bool>>,
    /// `delays[n][q][j]`; empty when every delay is zero.
    delays: Vec<Vec<Vec<usize>>>,
}

impl Schedule {
    /// Whether user `q` updates at step `n` (0-based).
    pub fn updates(&self, n: usize, q: usize) -> bool {
        self.updates[n][q]
    }

    pub fn updated_users(&self, n: usize) -> Vec<usize> {
        (0..self.users).filter(|&q| self.updates[n][q]).collect()
    }

    /// Age of user `j`'s power as seen by user `q` at step `n`.
    pub fn delay(&self, n: usize, q: usize, j: usize) -> usize {
        if self.delays.is_empty() {
            0
        } else {
            self.delays[n][q][j]
        }
    }
}

/// Builds a schedule of `it_max` steps.
///
/// Jacobi updates everyone every step with fresh information (`D = 0`,
/// `B = 1`). Gauss-Seidel updates user `n mod Q` at step `n`, again with
/// fresh information (`B = Q`). The random schedule flips a fair coin per
/// user and step, forcing an update whenever a user would otherwise go `B`
/// steps without one, and draws each staleness uniformly from `0..=D`.
pub fn make_schedule(
    kind: ScheduleKind,
    users: usize,
    it_max: usize,
    seed: u64,
    delay_bound: usize,
    update_bound: usize,
) -> Result<Schedule> {
    if users == 0 {
        return Err(Error::InvalidSchedule("at least one user is required".into()));
    }
    if it_max == 0 {
        return Err(Error::InvalidSchedule("it_max must be at least 1".into()));
    }
    let base = Schedule {
        kind,
        users,
        it_max,
        delay_bound: 0,
        update_bound: 1,
        seed,
        updates: Vec::new(),
        delays: Vec::new(),
    };
    match kind {
        ScheduleKind::Jacobi => Ok(Schedule {
            updates: vec![vec![true; users]; it_max],
            ..base
        }),
        ScheduleKind::GaussSeidel => Ok(Schedule {
            update_bound: users,
            updates: (0..it_max)
                .map(|n| (0..users).map(|q| n % users == q).collect())
                .collect(),
            ..base
        }),
        ScheduleKind::RandomAsync => {
            if update_bound == 0 {
                return Err(Error::InvalidSchedule(
                    "update bound B must be at least 1".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idle = vec![0usize; users];
            let mut updates = Vec::with_capacity(it_max);
            let mut delays = Vec::with_capacity(it_max);
            for n in 0..it_max {
                let mut row = Vec::with_capacity(users);
                for slot in idle.iter_mut() {
                    let coin = rng.random_bool(0.5);
                    let update = coin || *slot + 1 >= update_bound;
                    *slot = if update { 0 } else { *slot + 1 };
                    row.push(update);
                }
                updates.push(row);
                let step: Vec<Vec<usize>> = (0..users)
                    .map(|q| {
                        (0..users)
                            .map(|j| {
                                let d = rng.random_range(0..=delay_bound);
                                if j == q { 0 } else { d.min(n) }
                            })
                            .collect()
                    })
                    .collect();
                delays.push(step);
            }
            Ok(Schedule {
                delay_bound,
                update_bound,
                updates,
                delays,
                ..base
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct GameTrace {
    /// `profiles[0]` is the starting point, `profiles[n]` follows step `n`.
    pub profiles: Vec<PowerProfile>,
    /// Users that updated at step `n + 1`.
    pub updated: Vec<Vec<usize>>,
    /// Max-norm change made by step `n + 1` alone.
    pub step_change: Vec<f64>,
    /// Largest step change over the most recent window in which every user
    /// updated, extended back by the staleness bound; infinite until every
    /// user has updated once.
    pub residual: Vec<f64>,
    pub converged: bool,
    pub iterations_used: usize,
    /// Last step whose change reached the tolerance (0 if none did).
    pub settled_at: usize,
    pub final_rates: Vec<f64>,
    pub nash_gap: f64,
    /// Both the residual threshold and the stationarity tolerance.
    pub tolerance: f64,
}

impl GameTrace {
    pub fn final_profile(&self) -> &PowerProfile {
        self.profiles.last().expect("trace holds the starting profile")
    }

    /// Writes one row per (iteration, user, antenna); iteration 0 is the
    /// starting profile and has an empty residual. Users and antennas are
    /// numbered from 1.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let wrap = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(wrap)?;
        w.write_record(["iteration", "user", "antenna", "power", "residual"])
            .map_err(wrap)?;
        for (n, profile) in self.profiles.iter().enumerate() {
            let residual = if n == 0 {
                String::new()
            } else {
                format_sig(self.residual[n - 1], 9)
            };
            for (q, pq) in profile.p.iter().enumerate() {
                for (j, &power) in pq.iter().enumerate() {
                    w.write_record([
                        n.to_string(),
                        (q + 1).to_string(),
                        (j + 1).to_string(),
                        format_sig(power, 9),
                        residual.clone(),
                    ])
                    .map_err(wrap)?;
                }
            }
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn respond(net: &EffectiveNetwork, view: &PowerProfile, q: usize) -> Vec<f64> {
    best_response(net, view, q).expect("every user has at least one stream")
}

/// Largest deviation of any user from its water-filling response to the
/// others' powers in `profile`.
pub fn check_nash(net: &EffectiveNetwork, profile: &PowerProfile) -> f64 {
    (0..net.users())
        .flat_map(|q| {
            respond(net, profile, q)
                .into_iter()
                .zip(profile.p[q].clone())
                .map(|(a, b)| (a - b).abs())
        })
        .fold(0.0, f64::max)
}

/// Plays the game from `p0` until the windowed residual drops below `tol`
/// and the profile is a `tol`-Nash point, or `schedule.it_max` steps pass.
pub fn run_game(
    net: &EffectiveNetwork,
    schedule: &Schedule,
    p0: &PowerProfile,
    tol: f64,
) -> GameTrace {
    let users = net.users();
    let mut profiles = vec![p0.clone()];
    let mut updated = Vec::new();
    let mut step_change = Vec::new();
    let mut residual = Vec::new();
    let mut last_update: Vec<Option<usize>> = vec![None; users];
    let mut converged = false;
    let mut nash_gap = f64::INFINITY;

    for n in 0..schedule.it_max {
        let current = &profiles[n];
        let mut next = current.clone();
        let movers = schedule.updated_users(n);
        for &q in &movers {
            let mut view = current.clone();
            for j in (0..users).filter(|&j| j != q) {
                let age = schedule.delay(n, q, j);
                if age > 0 {
                    view.p[j].clone_from(&profiles[n - age].p[j]);
                }
            }
            next.p[q] = respond(net, &view, q);
            last_update[q] = Some(n);
        }
        step_change.push(next.max_abs_diff(current));
        profiles.push(next);
        updated.push(movers);

        let window = last_update
            .iter()
            .copied()
            .collect::<Option<Vec<_>>>()
            .map(|t| t.into_iter().min().unwrap_or(n).saturating_sub(schedule.delay_bound));
        let r = match window {
            Some(start) => step_change[start..=n].iter().copied().fold(0.0, f64::max),
            None => f64::INFINITY,
        };
        residual.push(r);

        if r < tol {
            nash_gap = check_nash(net, &profiles[n + 1]);
            if nash_gap <= tol {
                converged = true;
                break;
            }
        }
    }

    let last = profiles.last().expect("non-empty");
    if !converged {
        nash_gap = check_nash(net, last);
    }
    let final_rates = user_rates(net, last);
    let settled_at = step_change
        .iter()
        .rposition(|&c| c >= tol)
        .map_or(0, |i| i + 1);
    GameTrace {
        iterations_used: step_change.len(),
        profiles,
        updated,
        step_change,
        residual,
        converged,
        settled_at,
        final_rates,
        nash_gap,
        tolerance: tol,
    }
}

/// A random feasible start: each user spends a uniform fraction of its
/// budget, split over its antennas by normalized exponential weights.
pub fn random_feasible_profile(config: &NetworkConfig, rng: &mut impl Rng) -> PowerProfile {
    let p = (0..config.users)
        .map(|q| {
            let w: Vec<f64> = (0..config.nt[q]).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = w.iter().sum();
            let spend = config.power_budget[q] * rng.random_range(0.0..=1.0);
            w.iter().map(|x| spend * x / total).collect()
        })
        .collect();
    PowerProfile { p }
}

/// Per-step contraction ratio from a least-squares fit of `ln r_n` against
/// `n`, using only residuals above `floor`. `None` with fewer than two.
pub fn geometric_rate(residuals: &[f64], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = residuals
        .iter()
        .enumerate()
        .take_while(|(_, &r)| r > floor)
        .map(|(n, &r)| (n as f64, r.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    Some((sxy / sxx).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contraction::certify;
    use crate::netmodel::{sample_channels, CMatrix, ChannelRealization, C64};
    use crate::precode::build_effective_network;
    use crate::waterfill::water_level;

    fn net(users: usize, nt: usize, nr: usize, cross: f64, seed: u64) -> EffectiveNetwork {
        let c = NetworkConfig::symmetric(users, nt, nr, 10.0, 1.0, 15.0, cross, 2.5).unwrap();
        build_effective_network(&sample_channels(&c, seed), &c).unwrap()
    }

    fn certified_net(seed0: u64) -> EffectiveNetwork {
        (seed0..)
            .map(|s| net(4, 2, 2, 40.0, s))
            .find(|n| certify(n).unwrap().spectral_unique)
            .unwrap()
    }

    #[test]
    fn jacobi_schedule_updates_everyone() {
        let s = make_schedule(ScheduleKind::Jacobi, 4, 10, 0, 7, 7).unwrap();
        assert_eq!((s.delay_bound, s.update_bound), (0, 1));
        for n in 0..10 {
            assert_eq!(s.updated_users(n), vec![0, 1, 2, 3]);
            assert_eq!(s.delay(n, 0, 3), 0);
        }
    }

    #[test]
    fn gauss_seidel_round_robin() {
        let s = make_schedule(ScheduleKind::GaussSeidel, 2, 6, 0, 0, 0).unwrap();
        let seq: Vec<Vec<usize>> = (0..6).map(|n| s.updated_users(n)).collect();
        assert_eq!(seq, vec![vec![0], vec![1], vec![0], vec![1], vec![0], vec![1]]);
        assert_eq!(s.update_bound, 2);
    }

    #[test]
    fn async_without_slack_is_jacobi() {
        let s = make_schedule(ScheduleKind::RandomAsync, 3, 50, 99, 0, 1).unwrap();
        for n in 0..50 {
            assert_eq!(s.updated_users(n), vec![0, 1, 2]);
            for q in 0..3 {
                for j in 0..3 {
                    assert_eq!(s.delay(n, q, j), 0);
                }
            }
        }
    }

    #[test]
    fn async_respects_bounds() {
        for (d, b) in [(3, 5), (1, 2), (5, 3)] {
            let s = make_schedule(ScheduleKind::RandomAsync, 4, 400, d as u64, d, b).unwrap();
            for q in 0..4 {
                let times: Vec<usize> = (0..400).filter(|&n| s.updates(n, q)).collect();
                assert!(times[0] < b);
                assert!(times.windows(2).all(|w| w[1] - w[0] <= b));
                assert!(399 - times.last().unwrap() < b);
            }
            for n in 0..400 {
                for q in 0..4 {
                    assert_eq!(s.delay(n, q, q), 0);
                    for j in 0..4 {
                        assert!(s.delay(n, q, j) <= d.min(n));
                    }
                }
            }
            // the coin is not degenerate
            let total: usize = (0..400).map(|n| s.updated_users(n).len()).sum();
            assert!(total < 4 * 400);
        }
    }

    #[test]
    fn schedule_errors() {
        assert!(make_schedule(ScheduleKind::Jacobi, 2, 0, 0, 0, 1).is_err());
        assert!(make_schedule(ScheduleKind::RandomAsync, 2, 5, 0, 1, 0).is_err());
        assert!("round-robin".parse::<ScheduleKind>().is_err());
        assert_eq!("gauss-seidel".parse::<ScheduleKind>().unwrap(), ScheduleKind::GaussSeidel);
        assert_eq!("async".parse::<ScheduleKind>().unwrap(), ScheduleKind::RandomAsync);
    }

    #[test]
    fn single_user_settles_after_one_update() {
        let n = net(1, 2, 2, 15.0, 3);
        let s = make_schedule(ScheduleKind::Jacobi, 1, 100, 0, 0, 1).unwrap();
        let trace = run_game(&n, &s, &PowerProfile::uniform(&n.config), 1e-6);
        assert!(trace.converged);
        assert_eq!(trace.settled_at, 1);
        let wf = water_level(&n.noise_floor[0], 10.0).unwrap();
        assert_eq!(trace.profiles[1].p[0], wf.p_star);
        assert_eq!(trace.final_profile(), &trace.profiles[1]);
        assert_eq!(trace.nash_gap, 0.0);
    }

    #[test]
    fn scalar_links_go_full_power() {
        let config = NetworkConfig::symmetric(2, 1, 1, 3.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let one = CMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        let h = CMatrix::from_element(1, 1, C64::new(0.9, 0.4));
        let ch = ChannelRealization::from_matrices(&config, vec![vec![one.clone(), h.clone()], vec![h, one]])
            .unwrap();
        let n = build_effective_network(&ch, &config).unwrap();
        let s = make_schedule(ScheduleKind::Jacobi, 2, 100, 0, 0, 1).unwrap();
        let trace = run_game(&n, &s, &PowerProfile::zeros(&config), 1e-6);
        assert!(trace.converged);
        assert_eq!(trace.profiles[1].p, vec![vec![3.0], vec![3.0]]);
        assert_eq!(trace.settled_at, 1);
    }

    #[test]
    fn jacobi_and_gauss_seidel_agree() {
        let n = certified_net(100);
        let p0 = PowerProfile::uniform(&n.config);
        let j = run_game(&n, &make_schedule(ScheduleKind::Jacobi, 4, 100, 0, 0, 1).unwrap(), &p0, 1e-9);
        let g = run_game(&n, &make_schedule(ScheduleKind::GaussSeidel, 4, 400, 0, 0, 0).unwrap(), &p0, 1e-9);
        assert!(j.converged && g.converged);
        assert!(j.final_profile().max_abs_diff(g.final_profile()) < 1e-5);
    }

    #[test]
    fn converged_trace_is_stationary() {
        let n = certified_net(200);
        let s = make_schedule(ScheduleKind::Jacobi, 4, 100, 0, 0, 1).unwrap();
        let trace = run_game(&n, &s, &PowerProfile::uniform(&n.config), DEFAULT_TOL);
        assert!(trace.converged);
        assert!(trace.nash_gap <= DEFAULT_TOL);
        // an extra Jacobi round barely moves
        let more = make_schedule(ScheduleKind::Jacobi, 4, 1, 0, 0, 1).unwrap();
        let extra = run_game(&n, &more, trace.final_profile(), DEFAULT_TOL);
        assert!(extra.step_change[0] < DEFAULT_TOL);
        for p in &trace.profiles[1..] {
            p.check(&n.config).unwrap();
            for (q, pq) in p.p.iter().enumerate() {
                assert!((pq.iter().sum::<f64>() - n.config.power_budget[q]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn perturbed_equilibrium_has_positive_gap() {
        let n = certified_net(300);
        let s = make_schedule(ScheduleKind::Jacobi, 4, 100, 0, 0, 1).unwrap();
        let trace = run_game(&n, &s, &PowerProfile::uniform(&n.config), 1e-9);
        let mut p = trace.final_profile().clone();
        // move a tenth of the strongest stream's power to the other antenna
        let shift = 0.1 * p.p[1][0];
        p.p[1][0] -= shift;
        p.p[1][1] += shift;
        p.check(&n.config).unwrap();
        assert!(check_nash(&n, &p) >= shift - 1e-9);
    }

    #[test]
    fn async_reaches_the_same_point() {
        let n = certified_net(400);
        let p0 = PowerProfile::uniform(&n.config);
        let j = run_game(&n, &make_schedule(ScheduleKind::Jacobi, 4, 100, 0, 0, 1).unwrap(), &p0, 1e-9);
        let a = run_game(
            &n,
            &make_schedule(ScheduleKind::RandomAsync, 4, 2000, 5, 3, 5).unwrap(),
            &p0,
            1e-9,
        );
        assert!(a.converged);
        assert!(j.final_profile().max_abs_diff(a.final_profile()) < 1e-5);
    }

    #[test]
    fn trace_csv_layout() {
        let n = net(1, 2, 2, 15.0, 3);
        let s = make_schedule(ScheduleKind::Jacobi, 1, 100, 0, 0, 1).unwrap();
        let trace = run_game(&n, &s, &PowerProfile::uniform(&n.config), 1e-6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        trace.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iteration,user,antenna,power,residual");
        assert_eq!(lines.len(), 1 + 2 * trace.profiles.len());
        assert_eq!(lines[1], "0,1,1,5,");
    }

    #[test]
    fn geometric_fit() {
        let r: Vec<f64> = (0..10).map(|n| 3.0 * 0.4f64.powi(n)).collect();
        assert!((geometric_rate(&r, 1e-14).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(geometric_rate(&[1.0], 1e-14), None);
        assert_eq!(geometric_rate(&[1.0, 0.0, 0.0], 1e-14), None);
    }

    #[test]
    fn random_profiles_are_feasible() {
        let c = NetworkConfig::symmetric(3, 4, 2, 10.0, 1.0, 15.0, 20.0, 2.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            random_feasible_profile(&c, &mut rng).check(&c).unwrap();
        }
    }
}
