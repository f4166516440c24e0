//! Monte Carlo sweeps: probability of a unique equilibrium against the
//! interfering distance, and mean sum-rate against the power budget.
//!
//! Every trial draws its randomness from its own ChaCha stream,
//! `ChaCha8Rng::seed_from_u64(base_seed)` with stream id
//! `(point << 32) | trial`, so a sweep is a pure function of its
//! [`SweepSpec`] no matter how trials are spread over threads.
//!
//! CSV columns, one row per sweep value:
//!
//! | column | meaning |
//! |---|---|
//! | `sweep_value` | cross distance, or power budget in dB |
//! | `p_norm_cond` | `P(min(‖M‖∞, ‖Mᵀ‖∞) < 1 and empirically unique)` |
//! | `p_paper_cond` | `P((row or column sum-of-max form < 1) and empirically unique)` |
//! | `p_spectral` | `P(ρ(M) < 1 and empirically unique)` |
//! | `p_empirical_unique` | `P(three starts converge and agree)` |
//! | `mean_sum_rate` | mean sum-rate of the uniform-start run, bits/channel use |
//! | `mean_iterations` | mean steps used by the uniform-start run |
//! | `excluded_trials` | trials dropped after exhausting degenerate-channel retries |

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contraction::{certify, UniquenessCertificate};
use crate::engine::{make_schedule, random_feasible_profile, run_game, ScheduleKind};
use crate::error::{Error, Result};
use crate::netmodel::{sample_channels, NetworkConfig};
use crate::numfmt::format_sig;
use crate::precode::build_effective_network;
use crate::waterfill::{sum_rate, PowerProfile};

pub const MAX_CHANNEL_RETRIES: usize = 16;
pub const CSV_HEADER: [&str; 8] = [
    "sweep_value",
    "p_norm_cond",
    "p_paper_cond",
    "p_spectral",
    "p_empirical_unique",
    "mean_sum_rate",
    "mean_iterations",
    "excluded_trials",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    CrossDistance,
    PowerBudgetDb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// `(nt, nr)` shared by every user.
    pub scenario: (usize, usize),
    #[serde(default = "defaults::users")]
    pub users: usize,
    #[serde(default = "defaults::direct_distance")]
    pub direct_distance: f64,
    pub sweep_variable: SweepVariable,
    pub sweep_values: Vec<f64>,
    #[serde(default = "defaults::trials")]
    pub trials: usize,
    #[serde(default = "defaults::it_max")]
    pub it_max: usize,
    #[serde(default = "defaults::schedule")]
    pub schedule: ScheduleKind,
    #[serde(default)]
    pub base_seed: u64,
    /// Budget relative to unit noise, used when sweeping distance.
    #[serde(default = "defaults::power_budget_db")]
    pub power_budget_db: f64,
    /// `(d_qq / d_rq)^gamma` in dB, used when sweeping the budget.
    #[serde(default = "defaults::pathloss_ratio_db")]
    pub pathloss_ratio_db: f64,
    #[serde(default = "defaults::noise_power")]
    pub noise_power: f64,
    #[serde(default = "defaults::pathloss_exponent")]
    pub pathloss_exponent: f64,
    #[serde(default = "defaults::tolerance")]
    pub tolerance: f64,
    /// Max-norm distance within which the three starts count as one point.
    #[serde(default = "defaults::agreement")]
    pub agreement: f64,
    #[serde(default = "defaults::delay_bound")]
    pub delay_bound: usize,
    #[serde(default = "defaults::update_bound")]
    pub update_bound: usize,
}

mod defaults {
    use crate::engine::ScheduleKind;

    pub fn users() -> usize {
        4
    }
    pub fn direct_distance() -> f64 {
        15.0
    }
    pub fn trials() -> usize {
        300
    }
    pub fn it_max() -> usize {
        crate::engine::DEFAULT_IT_MAX
    }
    pub fn schedule() -> ScheduleKind {
        ScheduleKind::Jacobi
    }
    pub fn power_budget_db() -> f64 {
        10.0
    }
    pub fn pathloss_ratio_db() -> f64 {
        -10.0
    }
    pub fn noise_power() -> f64 {
        1.0
    }
    pub fn pathloss_exponent() -> f64 {
        2.5
    }
    pub fn tolerance() -> f64 {
        crate::engine::DEFAULT_TOL
    }
    pub fn agreement() -> f64 {
        1e-5
    }
    pub fn delay_bound() -> usize {
        3
    }
    pub fn update_bound() -> usize {
        5
    }
}

impl SweepSpec {
    /// Four users, `d_qq = 15`, `d_rq` over `{15, 25, 35, 45, 55}`.
    pub fn uniqueness(nt: usize, nr: usize, trials: usize, base_seed: u64) -> Self {
        Self {
            scenario: (nt, nr),
            users: defaults::users(),
            direct_distance: defaults::direct_distance(),
            sweep_variable: SweepVariable::CrossDistance,
            sweep_values: vec![15.0, 25.0, 35.0, 45.0, 55.0],
            trials,
            it_max: defaults::it_max(),
            schedule: defaults::schedule(),
            base_seed,
            power_budget_db: defaults::power_budget_db(),
            pathloss_ratio_db: defaults::pathloss_ratio_db(),
            noise_power: defaults::noise_power(),
            pathloss_exponent: defaults::pathloss_exponent(),
            tolerance: defaults::tolerance(),
            agreement: defaults::agreement(),
            delay_bound: defaults::delay_bound(),
            update_bound: defaults::update_bound(),
        }
    }

    /// Budget over `{0, 5, 10, 15, 20}` dB with interference 10 dB below
    /// the direct links.
    pub fn sumrate(nt: usize, nr: usize, trials: usize, base_seed: u64) -> Self {
        Self {
            sweep_variable: SweepVariable::PowerBudgetDb,
            sweep_values: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            ..Self::uniqueness(nt, nr, trials, base_seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSweep(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.it_max == 0 {
            return bad("it_max must be at least 1".into());
        }
        if self.sweep_values.is_empty() {
            return bad("sweep_values is empty".into());
        }
        if self.sweep_values.iter().any(|v| !v.is_finite()) {
            return bad("sweep_values must be finite".into());
        }
        if !self.sweep_values.windows(2).all(|w| w[0] < w[1]) {
            return bad("sweep_values must be strictly increasing".into());
        }
        if !(self.tolerance > 0.0 && self.agreement > 0.0) {
            return bad("tolerance and agreement must be positive".into());
        }
        // the per-point network must be valid too
        for point in 0..self.sweep_values.len() {
            self.network_at(point)?;
        }
        Ok(())
    }

    /// Cross distance for budget sweeps: `(d_qq / d_rq)^gamma` equals
    /// `pathloss_ratio_db`.
    pub fn derived_cross_distance(&self) -> f64 {
        self.direct_distance * 10f64.powf(-self.pathloss_ratio_db / (10.0 * self.pathloss_exponent))
    }

    pub fn network_at(&self, point: usize) -> Result<NetworkConfig> {
        let value = self.sweep_values[point];
        let (budget_db, cross) = match self.sweep_variable {
            SweepVariable::CrossDistance => (self.power_budget_db, value),
            SweepVariable::PowerBudgetDb => (value, self.derived_cross_distance()),
        };
        NetworkConfig::symmetric(
            self.users,
            self.scenario.0,
            self.scenario.1,
            10f64.powf(budget_db / 10.0),
            self.noise_power,
            self.direct_distance,
            cross,
            self.pathloss_exponent,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub point: usize,
    pub trial: usize,
    pub channel_seed: u64,
    /// Degenerate draws discarded before this one.
    pub resamples: usize,
    pub certificate: UniquenessCertificate,
    pub converged: [bool; 3],
    /// Largest pairwise max-norm distance between the three final profiles.
    pub disagreement: f64,
    pub empirically_unique: bool,
    pub sum_rate: f64,
    pub iterations: usize,
}

impl TrialRecord {
    pub fn norm_condition(&self) -> bool {
        self.certificate.norm_unique
    }

    pub fn sum_of_max_condition(&self) -> bool {
        self.certificate.cond_13 || self.certificate.cond_14
    }

    pub fn spectral_condition(&self) -> bool {
        self.certificate.spectral_unique
    }
}

fn trial_rng(spec: &SweepSpec, point: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.base_seed);
    rng.set_stream(((point as u64) << 32) | trial as u64);
    rng
}

/// One channel draw at one sweep point, played from a uniform split, from
/// all power on the strongest stream, and from a random feasible start.
pub fn run_trial(spec: &SweepSpec, point: usize, trial: usize) -> Result<TrialRecord> {
    let config = spec.network_at(point)?;
    let mut rng = trial_rng(spec, point, trial);

    let mut resamples = 0;
    let (net, channel_seed) = loop {
        let seed = rng.next_u64();
        match build_effective_network(&sample_channels(&config, seed), &config) {
            Ok(net) => break (net, seed),
            Err(Error::DegenerateChannel { .. }) if resamples + 1 < MAX_CHANNEL_RETRIES => {
                resamples += 1;
            }
            Err(Error::DegenerateChannel { .. }) => {
                return Err(Error::RetryExhausted {
                    attempts: MAX_CHANNEL_RETRIES,
                })
            }
            Err(e) => return Err(e),
        }
    };
    let certificate = certify(&net)?;

    let starts = [
        PowerProfile::uniform(&config),
        PowerProfile::strongest_stream(&config),
        random_feasible_profile(&config, &mut rng),
    ];
    let schedule_seed = rng.next_u64();
    let schedule = make_schedule(
        spec.schedule,
        config.users,
        spec.it_max,
        schedule_seed,
        spec.delay_bound,
        spec.update_bound,
    )?;
    let traces: Vec<_> = starts
        .iter()
        .map(|p0| run_game(&net, &schedule, p0, spec.tolerance))
        .collect();

    let mut disagreement: f64 = 0.0;
    for a in 0..traces.len() {
        for b in a + 1..traces.len() {
            disagreement =
                disagreement.max(traces[a].final_profile().max_abs_diff(traces[b].final_profile()));
        }
    }
    let converged = [traces[0].converged, traces[1].converged, traces[2].converged];
    let empirically_unique = converged.iter().all(|&c| c) && disagreement <= spec.agreement;

    Ok(TrialRecord {
        point,
        trial,
        channel_seed,
        resamples,
        certificate,
        converged,
        disagreement,
        empirically_unique,
        sum_rate: sum_rate(&net, traces[0].final_profile()),
        iterations: traces[0].iterations_used,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_value: f64,
    pub p_norm_cond: f64,
    pub p_paper_cond: f64,
    pub p_spectral: f64,
    pub p_empirical_unique: f64,
    pub mean_sum_rate: f64,
    pub mean_iterations: f64,
    pub excluded_trials: usize,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub rows: Vec<SweepRow>,
    /// Standard error of `mean_sum_rate`, per row.
    pub sum_rate_std_err: Vec<f64>,
    /// Every trial, grouped by sweep point in trial order.
    pub records: Vec<Vec<TrialRecord>>,
}

fn aggregate(value: f64, outcomes: &[Result<TrialRecord>]) -> (SweepRow, f64, Vec<TrialRecord>) {
    let records: Vec<TrialRecord> = outcomes.iter().filter_map(|o| o.as_ref().ok().cloned()).collect();
    let excluded_trials = outcomes.len() - records.len();
    let n = records.len() as f64;
    let frac = |f: &dyn Fn(&TrialRecord) -> bool| {
        if records.is_empty() {
            f64::NAN
        } else {
            records.iter().filter(|r| f(r)).count() as f64 / n
        }
    };
    let mean_sum_rate = records.iter().map(|r| r.sum_rate).sum::<f64>() / n;
    let var = if records.len() > 1 {
        records
            .iter()
            .map(|r| (r.sum_rate - mean_sum_rate).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    let row = SweepRow {
        sweep_value: value,
        p_norm_cond: frac(&|r| r.norm_condition() && r.empirically_unique),
        p_paper_cond: frac(&|r| r.sum_of_max_condition() && r.empirically_unique),
        p_spectral: frac(&|r| r.spectral_condition() && r.empirically_unique),
        p_empirical_unique: frac(&|r| r.empirically_unique),
        mean_sum_rate,
        mean_iterations: records.iter().map(|r| r.iterations as f64).sum::<f64>() / n,
        excluded_trials,
    };
    (row, (var / n).sqrt(), records)
}

/// Runs every trial of `spec` on `jobs` worker threads (0 picks the rayon
/// default) and aggregates per sweep point.
pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<SweepResult> {
    spec.validate()?;
    let points = spec.sweep_values.len();
    let tasks: Vec<(usize, usize)> = (0..points)
        .flat_map(|p| (0..spec.trials).map(move |t| (p, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidSweep(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<TrialRecord>> =
        pool.install(|| tasks.par_iter().map(|&(p, t)| run_trial(spec, p, t)).collect());

    let mut rows = Vec::with_capacity(points);
    let mut std_errs = Vec::with_capacity(points);
    let mut records = Vec::with_capacity(points);
    for (p, chunk) in outcomes.chunks(spec.trials).enumerate() {
        // anything but degenerate-channel exhaustion is a hard failure
        if let Some(Err(e)) = chunk
            .iter()
            .find(|o| matches!(o, Err(e) if !matches!(e, Error::RetryExhausted { .. })))
        {
            return Err(Error::InvalidSweep(format!("trial failed: {e}")));
        }
        let (row, se, recs) = aggregate(spec.sweep_values[p], chunk);
        rows.push(row);
        std_errs.push(se);
        records.push(recs);
    }
    Ok(SweepResult {
        spec: spec.clone(),
        rows,
        sum_rate_std_err: std_errs,
        records,
    })
}

pub fn sweep_uniqueness(spec: &SweepSpec, jobs: usize) -> Result<SweepResult> {
    if spec.sweep_variable != SweepVariable::CrossDistance {
        return Err(Error::InvalidSweep(
            "uniqueness sweeps vary cross_distance".into(),
        ));
    }
    run_sweep(spec, jobs)
}

pub fn sweep_sumrate(spec: &SweepSpec, jobs: usize) -> Result<SweepResult> {
    if spec.sweep_variable != SweepVariable::PowerBudgetDb {
        return Err(Error::InvalidSweep(
            "sum-rate sweeps vary power_budget_db".into(),
        ));
    }
    run_sweep(spec, jobs)
}

pub fn write_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(CSV_HEADER).map_err(wrap)?;
    for r in rows {
        let fields = [
            r.sweep_value,
            r.p_norm_cond,
            r.p_paper_cond,
            r.p_spectral,
            r.p_empirical_unique,
            r.mean_sum_rate,
            r.mean_iterations,
        ]
        .map(|x| format_sig(x, 9));
        w.write_record(fields.iter().map(String::as_str).chain([r.excluded_trials.to_string().as_str()]))
            .map_err(wrap)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(wrap)?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(wrap)
}

/// Writes the spec that produced a sweep as pretty JSON.
pub fn write_metadata(spec: &SweepSpec, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(spec).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
