//! Penalized SIR calibration.
//!
//! The loss is
//!
//! ```text
//! L(θ) = λ [ MSE(H, H_SIR(θ)) + ρ (h_SIR(θ) - h0)² ] + (1 - λ) (t_SIR(θ) - t_M)²
//! ```
//!
//! with the MSE over `fit_window`, the peak `(t_SIR, h_SIR)` taken over
//! `peak_window` and the date gap in days.

mod de;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use de::{derive_seed, differential_evolution, differential_evolution_bounded, DeConfig, DeOutcome};

use std::ops::ControlFlow;

use crate::dates::{add_days, days_between};
use crate::error::{Error, Result};
use crate::sir::{self, season_time, Grid, PeakEstimate, SirConstants, SirParams, Trajectory, PARAM_BOUNDS};
use crate::timeseries::SmoothedCurve;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub rho: f64,
    /// Historical mean peak magnitude, admissions/day.
    pub h0: f64,
    /// Mobile peak-date prediction.
    pub t_m: NaiveDate,
    /// Days whose squared residuals are averaged (inclusive).
    pub fit_window: (NaiveDate, NaiveDate),
    /// Days searched for the model peak (inclusive).
    pub peak_window: (NaiveDate, NaiveDate),
    /// Day on which `θ`'s initial state `(1 - I0 - R0, I0, R0)` applies.
    pub origin: NaiveDate,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if !(self.rho >= 0.0) {
            return Err(Error::Config(format!("rho must be >= 0, got {}", self.rho)));
        }
        if self.fit_window.0 > self.fit_window.1 {
            return Err(Error::Config(format!(
                "fit window {} .. {} is empty",
                self.fit_window.0, self.fit_window.1
            )));
        }
        if self.peak_window.0 > self.peak_window.1 {
            return Err(Error::Config("peak window is empty".into()));
        }
        if self.origin > self.fit_window.0 || self.origin > self.peak_window.0 {
            return Err(Error::Config(format!(
                "integration origin {} must precede the fit and peak windows",
                self.origin
            )));
        }
        Ok(())
    }

    fn horizon_end(&self) -> NaiveDate {
        self.fit_window.1.max(self.peak_window.1)
    }
}

/// A loss bound to one observed curve, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct SeasonLoss {
    cfg: LossConfig,
    constants: SirConstants,
    grid: Grid,
    observed: Vec<f64>,
    fit_offset: usize,
    peak_range: (usize, usize),
}

/// Sum of squares, model peak and its date offset for one `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub mse: f64,
    pub peak: PeakEstimate,
    pub height_penalty: f64,
    pub date_gap_days: f64,
}

impl SeasonLoss {
    pub fn new(observed: &SmoothedCurve, cfg: &LossConfig, constants: &SirConstants) -> Result<Self> {
        cfg.validate()?;
        let (lo, hi) = match (observed.index_of(cfg.fit_window.0), observed.index_of(cfg.fit_window.1)) {
            (Some(lo), Some(hi)) => (lo, hi),
            _ => {
                return Err(Error::Config(format!(
                    "observed curve {} .. {} does not cover the fit window {} .. {}",
                    observed.start,
                    observed.end(),
                    cfg.fit_window.0,
                    cfg.fit_window.1
                )))
            }
        };
        let days = days_between(cfg.origin, cfg.horizon_end()) as usize + 1;
        let grid = Grid::new(season_time(cfg.origin), days, 1.0)?;
        Ok(Self {
            cfg: cfg.clone(),
            constants: *constants,
            grid,
            observed: observed.h[lo..=hi].to_vec(),
            fit_offset: days_between(cfg.origin, cfg.fit_window.0) as usize,
            peak_range: (
                days_between(cfg.origin, cfg.peak_window.0) as usize,
                days_between(cfg.origin, cfg.peak_window.1) as usize,
            ),
        })
    }

    pub fn config(&self) -> &LossConfig {
        &self.cfg
    }

    /// Loss components, or the integration error.
    pub fn terms(&self, theta: &SirParams) -> Result<LossTerms> {
        Ok(self
            .terms_until(theta, f64::INFINITY)?
            .expect("unbounded run completes"))
    }

    /// As [`terms`](Self::terms), but gives up with `None` once the
    /// weighted MSE alone exceeds `bound`.
    fn terms_until(&self, theta: &SirParams, bound: f64) -> Result<Option<LossTerms>> {
        let (fit_lo, fit_hi) = (self.fit_offset, self.fit_offset + self.observed.len() - 1);
        let (pk_lo, pk_hi) = self.peak_range;
        let n = self.observed.len() as f64;
        let lambda = self.cfg.lambda;
        let mut sse = 0.0;
        let mut best: Option<(usize, f64)> = None;
        let finished = self.grid.run(theta, &self.constants, |day, [_, i, _]| {
            let h = theta.alpha * i;
            if (fit_lo..=fit_hi).contains(&day) {
                let r = self.observed[day - fit_lo] - h;
                sse += r * r;
                if lambda * (sse / n) > bound {
                    return ControlFlow::Break(());
                }
            }
            if (pk_lo..=pk_hi).contains(&day) && best.map_or(true, |(_, b)| h > b) {
                best = Some((day, h));
            }
            ControlFlow::Continue(())
        })?;
        if !finished {
            return Ok(None);
        }
        let (k, h_sir) = best.expect("peak window lies inside the horizon");
        let t_sir = add_days(self.cfg.origin, k as i64);
        let gap = days_between(self.cfg.t_m, t_sir) as f64;
        Ok(Some(LossTerms {
            mse: sse / n,
            peak: PeakEstimate { t_sir, h_sir },
            height_penalty: (h_sir - self.cfg.h0).powi(2),
            date_gap_days: gap,
        }))
    }

    /// Penalized loss; integration failures map to `+∞`.
    pub fn eval(&self, theta: &SirParams) -> f64 {
        self.eval_until(theta, f64::INFINITY)
    }

    /// Penalized loss, or `+∞` as soon as it is known to exceed `bound`.
    pub fn eval_until(&self, theta: &SirParams, bound: f64) -> f64 {
        match self.terms_until(theta, bound) {
            Ok(Some(t)) => {
                let l = self.cfg.lambda;
                let v = l * (t.mse + self.cfg.rho * t.height_penalty) + (1.0 - l) * t.date_gap_days * t.date_gap_days;
                if v.is_nan() {
                    f64::INFINITY
                } else {
                    v
                }
            }
            Ok(None) | Err(_) => f64::INFINITY,
        }
    }
}

/// Evaluates the penalized loss for one parameter vector.
pub fn loss(theta: &SirParams, observed: &SmoothedCurve, cfg: &LossConfig, constants: &SirConstants) -> Result<f64> {
    Ok(SeasonLoss::new(observed, cfg, constants)?.eval(theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub theta_star: SirParams,
    pub loss_value: f64,
    pub peak: PeakEstimate,
    pub generations_used: usize,
    pub converged: bool,
    pub seed: u64,
}

/// JSON export shape of a calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationExport {
    pub theta: SirParams,
    pub loss: f64,
    pub t_sir: NaiveDate,
    pub h_sir: f64,
    pub generations: usize,
    pub seed: u64,
}

impl CalibrationResult {
    pub fn export(&self) -> CalibrationExport {
        CalibrationExport {
            theta: self.theta_star,
            loss: self.loss_value,
            t_sir: self.peak.t_sir,
            h_sir: self.peak.h_sir,
            generations: self.generations_used,
            seed: self.seed,
        }
    }

    /// The fitted `H_SIR` over `[origin, end]`.
    pub fn trajectory(&self, constants: &SirConstants, origin: NaiveDate, end: NaiveDate) -> Result<Trajectory> {
        sir::integrate(&self.theta_star, constants, origin, end, 1.0)
    }
}

/// Fits `θ` to `observed` by differential evolution over the parameter box.
pub fn fit(
    observed: &SmoothedCurve,
    cfg: &LossConfig,
    de: &DeConfig,
    constants: &SirConstants,
) -> Result<CalibrationResult> {
    let objective = SeasonLoss::new(observed, cfg, constants)?;
    fit_prepared(&objective, de)
}

pub fn fit_prepared(objective: &SeasonLoss, de: &DeConfig) -> Result<CalibrationResult> {
    let outcome = differential_evolution_bounded(
        |x, bound| objective.eval_until(&SirParams::from_slice(x), bound),
        &PARAM_BOUNDS,
        de,
    )?;
    let theta_star = SirParams::from_slice(&outcome.best);
    if !outcome.best_value.is_finite() {
        return Err(Error::Config(
            "calibration found no parameter vector with a finite loss".into(),
        ));
    }
    let peak = objective.terms(&theta_star)?.peak;
    Ok(CalibrationResult {
        theta_star,
        loss_value: outcome.best_value,
        peak,
        generations_used: outcome.generations,
        converged: outcome.converged,
        seed: de.seed,
    })
}
