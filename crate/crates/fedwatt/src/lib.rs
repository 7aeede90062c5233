//! Tradeoff engine and Monte Carlo simulator for wirelessly powered
//! federated edge learning.
//!
//! Edge devices harvest RF energy (from a field of dedicated power beacons or
//! from the coordinating server's beamformed transfer), spend part of it
//! uploading a model update within a deadline, and put the remainder into
//! local gradient computation. More harvested energy buys larger mini-batches
//! and therefore less gradient noise, but the harvest is random, so some
//! devices fall out of each round entirely. This crate evaluates the
//! closed-form convergence/outage bounds that capture the tradeoff, provides
//! the matching per-round resource policies, and cross-checks everything with
//! a particle-level Monte Carlo simulator of federated training.
//!
//! Module map:
//! - [`mathkit`]: special functions (log-gamma, incomplete gamma, beta,
//!   modified Bessel K0) and adaptive Gauss-Kronrod quadrature.
//! - [`rng`]: counter-based substream RNG so every (round, device) draw is
//!   addressable and independent of scheduling.
//! - [`sysmodel`]: system configuration, channel sampling, harvested- and
//!   transmission-energy primitives.
//! - [`config`]: flat `key = value` experiment files.
//! - [`analysis`]: outage probabilities, convergence-bound assembly, scaling
//!   fits.
//! - [`policy`]: per-round batch/clock optimization, energy splitting,
//!   server-side scheduling and power allocation.
//! - [`montecarlo`]: synthetic learning task, federated training simulator,
//!   and the Monte Carlo oracles used to validate the analysis.
//! - [`cli`]: experiment runner behind the `fedwatt` binary.
//! - [`validate`]: the self-check battery run by `fedwatt --mode validate`.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod mathkit;
pub mod montecarlo;
pub mod policy;
pub mod rng;
pub mod sysmodel;
pub mod validate;
