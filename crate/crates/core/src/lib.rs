//! Continuous-time maximum-entropy temporal network ensembles.
//!
//! A temporal network is modelled as a marked point process whose edge
//! intensities factorise as `λ_ij(t) = φ_r(t) · w_ij`: one time profile per
//! edge part `r` ([`time_layer`]) and a static edge-weight matrix calibrated on
//! a support mask ([`mark_layer`]). [`ensemble`] assembles the two, evaluates
//! the decomposed likelihood, samples networks and computes Poissonized
//! expectations; [`diagnostics`] turns logs and models into report tables.

pub mod diagnostics;
pub mod ensemble;
pub mod event_store;
pub mod mark_layer;
mod optim;
pub mod rng;
pub mod time_layer;

pub use ensemble::EnsembleModel;
pub use event_store::{Event, EventLog, SufficientStats};
pub use mark_layer::{Mask, MarkWeights};
pub use time_layer::{TimeModel, TimeParams};
