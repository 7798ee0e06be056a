//! Scenario files, experiment orchestration, robustness checks, metrics and
//! reports.

pub mod config;
pub mod metrics;
pub mod report;
pub mod robustness;
pub mod run;
pub mod suite;
