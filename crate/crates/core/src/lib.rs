//! Alert-triggered forecasting of seasonal hospitalization peaks.
//!
//! The pipeline runs once per monitoring day on data truncated at that day:
//!
//! 1. [`timeseries`] smooths daily admissions into `H`, `dH`, `d²H`.
//! 2. [`alerts`] locates onset, acceleration and inflection on that curve.
//! 3. [`sir`] integrates a seasonally forced SIR model with waning immunity.
//! 4. [`calibrate`] fits that model with differential evolution under a
//!    penalized loss.
//! 5. [`ensemble`] blends the fitted peak date with a historical offset
//!    predictor and defers magnitude forecasts until after inflection.
//! 6. [`backtest`] replays whole seasons and scores the forecasts.

pub mod alerts;
pub mod backtest;
pub mod calibrate;
pub mod config;
pub mod dates;
pub mod ensemble;
mod error;
pub mod sir;
pub mod timeseries;

pub use alerts::{AlertConfig, AlertKind, AlertState};
pub use backtest::{SeasonReport, SeasonTruth};
pub use calibrate::{CalibrationResult, DeConfig, LossConfig};
pub use config::{FacilityPreset, ForecastProfile, SeasonWindow};
pub use ensemble::{DailyForecast, ForecastRecord, SeasonHistory, WeightConvention};
pub use error::{Error, Result};
pub use sir::{PeakEstimate, SirConstants, SirParams, Trajectory};
pub use timeseries::{DailySeries, EdgePolicy, SmoothedCurve, SmoothingConfig};
