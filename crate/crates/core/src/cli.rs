//! Command-line front end.
//!
//! `play` and `certify` read a [`GameDocument`]; the sweep subcommands read a
//! [`SweepSpec`]. Both are JSON and reject unknown keys. Results go to stdout,
//! timing and diagnostics to stderr.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::contraction::{build_m, certify_matrix, write_matrix_csv};
use crate::engine::{make_schedule, run_game, ScheduleKind, DEFAULT_IT_MAX, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::expharness::{sweep_sumrate, sweep_uniqueness, write_csv, write_metadata, SweepSpec};
use crate::netmodel::{
    sample_channels, validate_config, CMatrix, ChannelRealization, NetworkConfig, C64,
};
use crate::numfmt::format_sig;
use crate::precode::build_effective_network;
use crate::waterfill::PowerProfile;

#[derive(Debug, Parser)]
#[command(name = "mimo-iwf", version, about = "Iterative water-filling games on MIMO interference channels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Play one game and report rates, iteration counts and the Nash gap.
    Play(CommonArgs),
    /// Build the interference matrix and print the uniqueness certificate.
    Certify(CommonArgs),
    /// Monte Carlo uniqueness probabilities against the cross distance.
    SweepUniqueness(SweepArgs),
    /// Monte Carlo mean sum-rate against the power budget.
    SweepSumrate(SweepArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON document with the network (and optionally explicit channels).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// `play`: per-iteration trace CSV. `certify`: interference matrix CSV.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Channel and schedule seed; overrides the document.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Update schedule; overrides the document.
    #[arg(long, value_parser = parse_schedule)]
    pub schedule: Option<ScheduleKind>,
    /// Suppress timing lines on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// JSON sweep specification.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output CSV; metadata is written next to it with a `.json` extension.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Base seed; overrides the spec.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Update schedule; overrides the spec.
    #[arg(long, value_parser = parse_schedule)]
    pub schedule: Option<ScheduleKind>,
    /// Worker threads (0 uses every core). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Trials per sweep point; overrides the spec.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Suppress timing lines on stderr.
    #[arg(long)]
    pub quiet: bool,
}

fn parse_schedule(s: &str) -> std::result::Result<ScheduleKind, String> {
    s.parse::<ScheduleKind>().map_err(|e| e.to_string())
}

/// Rows of `[re, im]` pairs.
pub type RawMatrix = Vec<Vec<[f64; 2]>>;

/// Input for `play` and `certify`.
///
/// Without `channels` the network is sampled from `seed`. Explicit channels
/// are `channels[r][q]`, the `nr[q] x nt[r]` matrix from transmitter `r` to
/// receiver `q`, as rows of `[re, im]` pairs, used as given (no path loss).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameDocument {
    pub network: NetworkConfig,
    #[serde(default)]
    pub channels: Option<Vec<Vec<RawMatrix>>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub schedule: Option<ScheduleKind>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_it_max")]
    pub it_max: usize,
    #[serde(default = "default_delay_bound")]
    pub delay_bound: usize,
    #[serde(default = "default_update_bound")]
    pub update_bound: usize,
}

fn default_tolerance() -> f64 {
    DEFAULT_TOL
}
fn default_it_max() -> usize {
    DEFAULT_IT_MAX
}
fn default_delay_bound() -> usize {
    3
}
fn default_update_bound() -> usize {
    5
}

impl GameDocument {
    fn channels(&self, config: &NetworkConfig) -> Result<ChannelRealization> {
        let Some(raw) = &self.channels else {
            return Ok(sample_channels(config, self.seed));
        };
        let mut h = Vec::with_capacity(raw.len());
        for (r, row) in raw.iter().enumerate() {
            let mut out = Vec::with_capacity(row.len());
            for (q, m) in row.iter().enumerate() {
                let cols = m.first().map_or(0, Vec::len);
                if m.iter().any(|line| line.len() != cols) {
                    return Err(Error::config("channels", format!("H[{r}][{q}] has ragged rows")));
                }
                out.push(CMatrix::from_fn(m.len(), cols, |i, j| {
                    C64::new(m[i][j][0], m[i][j][1])
                }));
            }
            h.push(out);
        }
        ChannelRealization::from_matrices(config, h)
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn fmt(x: f64) -> String {
    format_sig(x, 9)
}

fn play(args: &CommonArgs) -> Result<()> {
    let mut doc: GameDocument = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        doc.seed = seed;
    }
    let kind = args.schedule.or(doc.schedule).unwrap_or(ScheduleKind::Jacobi);
    if !(doc.tolerance > 0.0 && doc.tolerance.is_finite()) {
        return Err(Error::config("tolerance", "must be positive and finite"));
    }
    let config = validate_config(doc.network.clone())?;
    let net = build_effective_network(&doc.channels(&config)?, &config)?;
    let schedule = make_schedule(
        kind,
        config.users,
        doc.it_max,
        doc.seed,
        doc.delay_bound,
        doc.update_bound,
    )?;
    let trace = run_game(&net, &schedule, &PowerProfile::uniform(&config), doc.tolerance);

    println!("schedule: {kind}");
    println!("converged: {}", trace.converged);
    println!("settled_at: {}", trace.settled_at);
    println!("iterations_used: {}", trace.iterations_used);
    println!("nash_gap: {}", fmt(trace.nash_gap));
    for (q, rate) in trace.final_rates.iter().enumerate() {
        let powers: Vec<String> = trace.final_profile().p[q].iter().map(|&x| fmt(x)).collect();
        println!("user {}: rate {} power [{}]", q + 1, fmt(*rate), powers.join(", "));
    }
    println!("sum_rate: {}", fmt(trace.final_rates.iter().sum()));
    if let Some(out) = &args.out {
        trace.write_csv(out)?;
    }
    Ok(())
}

fn certify_cmd(args: &CommonArgs) -> Result<()> {
    let mut doc: GameDocument = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        doc.seed = seed;
    }
    let config = validate_config(doc.network.clone())?;
    let net = build_effective_network(&doc.channels(&config)?, &config)?;
    let im = build_m(&net);
    let cert = certify_matrix(&net, &im)?;

    println!("row_norm: {}", fmt(cert.row_norm));
    println!("col_norm: {}", fmt(cert.col_norm));
    println!("spectral_radius: {}", fmt(cert.spectral_radius));
    println!("cond_13_value: {}", fmt(cert.cond_13_value));
    println!("cond_14_value: {}", fmt(cert.cond_14_value));
    println!("cond_13: {}", cert.cond_13);
    println!("cond_14: {}", cert.cond_14);
    println!("norm_unique: {}", cert.norm_unique);
    println!("spectral_unique: {}", cert.spectral_unique);
    match cert.modulus {
        Some(c) => println!("modulus: {}", fmt(c)),
        None => println!("modulus: none"),
    }
    if let Some(out) = &args.out {
        write_matrix_csv(&im, out)?;
    }
    Ok(())
}

fn sweep(args: &SweepArgs, uniqueness: bool) -> Result<()> {
    let mut spec: SweepSpec = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        spec.base_seed = seed;
    }
    if let Some(kind) = args.schedule {
        spec.schedule = kind;
    }
    if let Some(trials) = args.trials {
        spec.trials = trials;
    }
    let result = if uniqueness {
        sweep_uniqueness(&spec, args.jobs)?
    } else {
        sweep_sumrate(&spec, args.jobs)?
    };
    write_csv(&result.rows, &args.out)?;
    write_metadata(&result.spec, &args.out.with_extension("json"))?;

    for row in &result.rows {
        if uniqueness {
            println!(
                "{}: p_norm_cond {} p_spectral {} p_empirical_unique {}",
                fmt(row.sweep_value),
                fmt(row.p_norm_cond),
                fmt(row.p_spectral),
                fmt(row.p_empirical_unique)
            );
        } else {
            println!(
                "{}: mean_sum_rate {} mean_iterations {}",
                fmt(row.sweep_value),
                fmt(row.mean_sum_rate),
                fmt(row.mean_iterations)
            );
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the subcommand and maps failures
/// to a diagnostic on stderr and a nonzero status.
pub fn parse_and_dispatch<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let start = Instant::now();
    let (result, quiet) = match &cli.command {
        Command::Play(a) => (play(a), a.quiet),
        Command::Certify(a) => (certify_cmd(a), a.quiet),
        Command::SweepUniqueness(a) => (sweep(a, true), a.quiet),
        Command::SweepSumrate(a) => (sweep(a, false), a.quiet),
    };
    match result {
        Ok(()) => {
            if !quiet {
                eprintln!("elapsed: {:.3} s", start.elapsed().as_secs_f64());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
