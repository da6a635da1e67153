//! Passive crowd-speed estimation from a pair of links in one region.
//!
//! Pedestrians walk in two adjacent regions with region-dependent speeds.
//! Two links parallel to the y-axis in region 1 record when people cross
//! them. From the crossing probability and the cross-correlation between the
//! two links' event sequences the speeds in *both* regions can be recovered.
//!
//! Modules, roughly bottom-up:
//! - [`geometry`]: workspace and scenario configuration
//! - [`analytic`]: closed-form crossing probabilities
//! - [`markov`]: explicit discretized chains used as an oracle
//! - [`simulator`]: Monte Carlo pedestrians, event sequences, correlations
//! - [`rssi`]: RSSI traces to event sequences
//! - [`estimator`]: speed / arrival-rate estimation and scoring
//! - [`experiment`]: simulated end-to-end runs

pub mod analytic;
pub mod estimator;
pub mod experiment;
pub mod geometry;
pub mod markov;
pub mod rssi;
pub mod simulator;
pub mod validate;
