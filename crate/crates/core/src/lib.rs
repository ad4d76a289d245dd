//! Two-factor lognormal forward-variance model.
//!
//! The crate covers the full pipeline: ingestion of VIX futures data, curve
//! extraction, marginalised maximum-likelihood calibration, extraction of the
//! latent factor increments, spot/vol non-linearity, vol-of-vol analytics and
//! derivative analytics. A Monte Carlo engine re-derives every closed form
//! independently.
//!
//! Conventions used throughout:
//! * time is measured in trading years; one business day is [`DT`] = 1/252;
//! * the VIX window is [`VIX_WINDOW`] = 30/365 years;
//! * variances are annualised decimals (0.04 is 20% vol), quotes are decimals
//!   of one (0.20, not 20.0).

pub mod analytics;
pub mod calibration;
pub mod curve;
pub mod error;
pub mod estimators;
pub mod kernel;
pub mod market_data;
pub mod model;
pub mod montecarlo;
pub mod optimize;
pub mod quad;
pub mod replica;
pub mod spotvol;
pub mod stats;
pub mod synthetic;
pub mod validation;
pub mod volofvol;

pub use error::{Error, Result};

/// Daily step, trading years.
pub const DT: f64 = 1.0 / 252.0;
/// Length of the VIX averaging window, years.
pub const VIX_WINDOW: f64 = 30.0 / 365.0;
