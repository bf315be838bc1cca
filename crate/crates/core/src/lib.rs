//! Triple-difference (TD) and double-triple-difference (DTD) estimation
//! under spillovers.
//!
//! The TD contrast compares outcome changes across a treatment/placebo
//! stratum split and a target/control group split. When the policy spills
//! over onto part of the control group, the TD coefficient mixes the
//! treatment effect with the spillover. The DTD refines the control group
//! into interference and pure-control sets and recovers both effects; a
//! doubly-robust variant handles selection on observables.
//!
//! Modules:
//! * [`panel`] — long-format panel model, CSV ingestion, validation.
//! * [`regress`] — OLS with cluster-robust covariance, fixed-effect
//!   absorption, IRLS logit, Wald tests.
//! * [`tdiff`] — TD/DTD estimators (two-period and three-way FE) and the
//!   cell-mean contrast oracle.
//! * [`drdtd`] — doubly-robust estimators with bootstrap inference.
//! * [`dgp`] — seeded simulation designs.
//! * [`mc`] — Monte Carlo study driver with bias/MSE/coverage reporting.
//! * [`pretrend`] — event-study lead diagnostics and joint tests.

pub mod dgp;
pub mod drdtd;
pub mod error;
pub mod mc;
pub mod panel;
pub mod pretrend;
pub mod regress;
pub mod rng;
pub mod tdiff;

pub use error::{Error, Result};
pub use panel::{
    load_panel_csv, to_two_period, validate_partition, ColumnMapping, Observation, PanelDataset,
    PartitionSummary,
};
pub use tdiff::{Estimand, Estimate};
