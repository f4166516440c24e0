//! Distributed power control for multiuser MIMO interference channels.
//!
//! Every transmitter precodes with the right singular vectors of its direct
//! channel and water-fills its power over the resulting parallel streams,
//! treating the other links' interference as noise. Repeating this best
//! response across users is a non-cooperative game; the [`contraction`]
//! module builds the nonnegative interference matrix `M` whose norms and
//! spectral radius certify a unique Nash equilibrium, and [`engine`] runs
//! the game under synchronous, sequential and bounded-staleness
//! asynchronous schedules.
//!
//! Pipeline for one network draw:
//!
//! ```
//! use mimo_iwf::{netmodel, precode, contraction, engine, waterfill};
//!
//! let config = netmodel::NetworkConfig::symmetric(4, 2, 2, 10.0, 1.0, 15.0, 60.0, 2.5).unwrap();
//! let channels = netmodel::sample_channels(&config, 7);
//! let net = precode::build_effective_network(&channels, &config).unwrap();
//! let cert = contraction::certify(&net).unwrap();
//! let schedule = engine::make_schedule(engine::ScheduleKind::Jacobi, 4, 100, 0, 0, 1).unwrap();
//! let p0 = waterfill::PowerProfile::uniform(&config);
//! let trace = engine::run_game(&net, &schedule, &p0, 1e-6);
//! if cert.spectral_unique {
//!     assert!(trace.converged);
//! }
//! ```

// `!(x > 0.0)` is used on purpose so NaN lands on the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod contraction;
pub mod engine;

pub mod error;
pub mod expharness;

pub mod netmodel;
pub mod numfmt;
pub mod precode;
pub mod svd;
pub mod waterfill;

pub use error::{Error, Result};
