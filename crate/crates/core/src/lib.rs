//! Tile-score matching for MIL whole-slide classifiers.
//!
//! A decision threshold chosen on a reference cohort rarely keeps its
//! sensitivity on a new cohort whose score distribution has drifted. This
//! crate transports tile-level scores from the new cohort onto the
//! prevalence-reweighted reference tile distribution with the exact 1D Monge
//! map, so the reference threshold can be reused as is.
//!
//! - [`distributions`]: empirical CDFs, quantiles, target mixtures and Monge maps.
//! - [`mil`]: Chowder-style slides, top-k/bottom-k selection, predictor and trainer.
//! - [`calibration`]: TSM, UPA and PLTS calibrations plus threshold selection.
//! - [`metrics`]: sensitivity, specificity, AUC and ROC curves.
//! - [`synthdata`]: synthetic cohorts with prevalence and score shift.
//! - [`experiment`]: the repeated-sampling harness behind `tsm experiment`.

pub mod calibration;
pub mod cli;
pub mod distributions;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mil;
pub mod synthdata;

pub use error::{Error, Result};
