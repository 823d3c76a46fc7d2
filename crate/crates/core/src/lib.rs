//! Collusion-robustness analysis for the binary peer prediction mechanism.
//!
//! The crate is organised bottom-up:
//!
//! - [`scoring`]: proper scoring rules on the two-outcome space `{l, h}`.
//! - [`prior`]: the symmetric common prior, posteriors and the two-state
//!   world model used when more than one signal has to be conditioned on.
//! - [`mechanism`]: rewards, ex-ante and interim expected utilities of
//!   arbitrary deviation profiles, the per-signal reward functions and a
//!   seeded Monte Carlo simulator.
//! - [`thresholds`]: closed-form coalition-size thresholds under ex-ante and
//!   interim strong equilibrium, plus checks of the canonical deviations.
//! - [`checker`]: a finite Bayesian game representation with grid-based
//!   coalition-deviation falsifiers and certificate verification.
//!
//! Inner loops that sweep many independent points (simulation blocks,
//! grid searches, parameter scans) run on rayon when the `parallel` feature
//! is enabled and fall back to a plain iterator otherwise. Results never
//! depend on the degree of parallelism.

pub mod checker;
pub mod error;
pub mod exec;
pub mod mechanism;
pub mod prior;
pub mod scoring;
pub mod thresholds;

pub use error::{Error, Result};
pub use exec::Exec;
pub use mechanism::{DeviationProfile, Role, Setting, Strategy};
pub use prior::{BinaryPrior, WorldModel};
pub use scoring::{BinaryDist, GapReport, ScoreTable, ScoringRule, Signal};
pub use thresholds::{CanonicalDeviation, Concept, ScanPoint, ScanRow, SideThreshold, ThresholdReport};

/// Absolute tolerance used for every "strictly greater" comparison unless a
/// caller supplies its own.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;
