//! Remote estimation over a Gilbert-Elliott packet-drop channel with
//! one-step delayed channel-state and ACK/NACK feedback.
//!
//! The crate is organised bottom-up:
//!
//! * [`models`]: sources, the two-state channel, distortions and per-step cost.
//! * [`belief`]: pre/post-transmission belief filters for finite sources and
//!   for the AR(1) error process, plus symmetric-unimodal and majorization
//!   utilities on grid densities.
//! * [`dp_finite`]: exact finite-horizon common-information dynamic program
//!   over reachable beliefs.
//! * [`dp_threshold`]: the single-agent error-grid dynamic program for AR(1)
//!   sources and extraction of channel-state dependent thresholds.
//! * [`simulator`]: closed-loop Monte Carlo evaluation with reproducible
//!   per-replication random streams.
//! * [`oracle`]: brute-force exact evaluation and strategy search on tiny
//!   instances.
//!
//! Data-parallel inner loops run on rayon when the `parallel` feature is
//! enabled (the default) and fall back to plain iterators otherwise. Results
//! are bit-identical either way.

pub mod belief;
pub mod dp_finite;
pub mod dp_threshold;
mod error;
pub mod models;
pub mod oracle;
pub mod par;
pub mod simulator;
pub(crate) mod sum;

pub use error::{Error, Result};
