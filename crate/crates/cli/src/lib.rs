//! Experiment runner for the quad-curl solver: configuration, rate
//! computation, CSV tables and VTU export.

pub mod config;
pub mod rates;
pub mod run;
pub mod solve;
pub mod vtu;
