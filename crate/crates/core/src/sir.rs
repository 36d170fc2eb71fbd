//! Seasonally forced SIR model with waning immunity.
//!
//! ```text
//! dS/dt = -β(t) S I + γ R
//! dI/dt =  β(t) S I - ν I
//! dR/dt =  ν I - γ R
//! β(t)  =  b0 (1 + b1 cos(2π t + φ))
//! ```
//!
//! Time is in years with `t = 0` on January 1 of the season year, so rates
//! are per year and one day is `1/365` year. Observed admissions are
//! modelled as `H_SIR = α I`.

use std::f64::consts::PI;
use std::ops::ControlFlow;
use std::sync::OnceLock;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::dates::{add_days, days_between, jan_first};
use crate::error::{Error, Result};

pub const DAYS_PER_YEAR: f64 = 365.0;

/// Largest `h · rate` the integrator accepts before subdividing a step.
const MAX_STEP_RATE: f64 = 2.0;

const SIMPLEX_SLACK: f64 = 1e-6;

/// Sub-step counts up to this reuse a forcing table cached on the grid.
const MAX_CACHED_REFINE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirConstants {
    /// Loss-of-immunity rate, 1/year.
    pub gamma: f64,
    /// Recovery rate, 1/year.
    pub nu: f64,
}

impl Default for SirConstants {
    fn default() -> Self {
        Self { gamma: 1.8, nu: 36.0 }
    }
}

/// Free parameters `θ = (b0, b1, φ, α, I0, R0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirParams {
    pub b0: f64,
    pub b1: f64,
    pub phi: f64,
    pub alpha: f64,
    pub i0: f64,
    pub r0: f64,
}

/// Admissible box for `θ`, in [`SirParams::to_array`] order. `b0` and `α`
/// have open lower bounds, realized as a tiny positive floor.
pub const PARAM_BOUNDS: [(f64, f64); 6] = [
    (1e-9, 3000.0),
    (0.0, 1.0),
    (0.0, 2.0 * PI),
    (1e-9, 2000.0),
    (0.0, 0.5),
    (0.0, 0.5),
];

pub const PARAM_NAMES: [&str; 6] = ["b0", "b1", "phi", "alpha", "i0", "r0"];

impl SirParams {
    pub fn to_array(&self) -> [f64; 6] {
        [self.b0, self.b1, self.phi, self.alpha, self.i0, self.r0]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            b0: x[0],
            b1: x[1],
            phi: x[2],
            alpha: x[3],
            i0: x[4],
            r0: x[5],
        }
    }

    pub fn within_bounds(&self) -> bool {
        self.to_array()
            .iter()
            .zip(PARAM_BOUNDS)
            .all(|(v, (lo, hi))| *v >= lo && *v <= hi)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.within_bounds() {
            return Err(Error::Config(format!("SIR parameters out of bounds: {self:?}")));
        }
        Ok(())
    }
}

/// Transmission rate at `t` years.
pub fn beta(t: f64, p: &SirParams) -> f64 {
    p.b0 * (1.0 + p.b1 * (2.0 * PI * t + p.phi).cos())
}

/// Compartment proportions on a daily grid, plus `H_SIR = α I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: NaiveDate,
    /// Years since January 1 of the start date's year.
    pub times: Vec<f64>,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
    pub h_sir: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn date_at(&self, index: usize) -> NaiveDate {
        add_days(self.start, index as i64)
    }

    pub fn end(&self) -> NaiveDate {
        self.date_at(self.len() - 1)
    }

    pub fn h_at(&self, date: NaiveDate) -> Option<f64> {
        let k = days_between(self.start, date);
        (k >= 0 && (k as usize) < self.len()).then(|| self.h_sir[k as usize])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakEstimate {
    pub t_sir: NaiveDate,
    pub h_sir: f64,
}

/// Number of RK4 sub-steps per requested step keeping `h · rate <= MAX_STEP_RATE`.
fn substeps_for(p: &SirParams, c: &SirConstants, step_years: f64) -> usize {
    let rate = p.b0.abs() * (1.0 + p.b1.abs()) + c.nu + c.gamma;
    ((rate * step_years / MAX_STEP_RATE).ceil() as usize).max(1)
}

/// `cos(2πt)`, `sin(2πt)` sampled every half sub-step from `origin`.
#[derive(Debug, Clone)]
pub(crate) struct ForcingTable {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl ForcingTable {
    pub(crate) fn new(origin_years: f64, substep_years: f64, substeps: usize) -> Self {
        let (sin, cos) = (0..=2 * substeps)
            .map(|j| (2.0 * PI * (origin_years + 0.5 * j as f64 * substep_years)).sin_cos())
            .unzip();
        Self { cos, sin }
    }
}

/// A prepared integration grid: origin, daily horizon and sub-step size.
#[derive(Debug, Clone)]
pub(crate) struct Grid {
    pub origin_years: f64,
    pub days: usize,
    pub step_days: f64,
    steps_per_day: usize,
    table: ForcingTable,
    refined: Vec<OnceLock<ForcingTable>>,
}

impl Grid {
    pub(crate) fn new(origin_years: f64, days: usize, step_days: f64) -> Result<Self> {
        if !(step_days > 0.0 && step_days <= 1.0) {
            return Err(Error::Config(format!("step must be in (0, 1] days, got {step_days}")));
        }
        let per_day = 1.0 / step_days;
        let steps_per_day = per_day.round() as usize;
        if (per_day - steps_per_day as f64).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "step of {step_days} days does not divide a day evenly"
            )));
        }
        let h = step_days / DAYS_PER_YEAR;
        let total = days.saturating_sub(1) * steps_per_day;
        Ok(Self {
            origin_years,
            days,
            step_days,
            steps_per_day,
            table: ForcingTable::new(origin_years, h, total),
            refined: (0..=MAX_CACHED_REFINE).map(|_| OnceLock::new()).collect(),
        })
    }

    /// Integrates and hands each daily state `[s, i, r]` to `sink`, stopping
    /// early when the sink breaks. Returns whether the horizon was reached.
    pub(crate) fn run(
        &self,
        p: &SirParams,
        c: &SirConstants,
        mut sink: impl FnMut(usize, [f64; 3]) -> ControlFlow<()>,
    ) -> Result<bool> {
        let h_base = self.step_days / DAYS_PER_YEAR;
        let refine = substeps_for(p, c, h_base);
        let fresh;
        let (table, h, per_day) = if refine == 1 {
            (&self.table, h_base, self.steps_per_day)
        } else {
            let per_day = self.steps_per_day * refine;
            let h = h_base / refine as f64;
            let build = || ForcingTable::new(self.origin_years, h, self.days.saturating_sub(1) * per_day);
            let table = match self.refined.get(refine) {
                Some(cell) => cell.get_or_init(build),
                None => {
                    fresh = build();
                    &fresh
                }
            };
            (table, h, per_day)
        };

        let (cphi, sphi) = (p.phi.cos(), p.phi.sin());
        let (amp_c, amp_s) = (p.b0 * p.b1 * cphi, p.b0 * p.b1 * sphi);
        let (cos, sin) = (&table.cos[..], &table.sin[..]);
        let beta_at = |j: usize| p.b0 + cos[j] * amp_c - sin[j] * amp_s;
        let (gamma, nu) = (c.gamma, c.nu);
        let rhs = |b: f64, y: [f64; 3]| {
            let inf = b * y[0] * y[1];
            let rec = nu * y[1];
            let wane = gamma * y[2];
            [wane - inf, inf - rec, rec - wane]
        };
        let axpy = |y: [f64; 3], a: f64, k: [f64; 3]| [y[0] + a * k[0], y[1] + a * k[1], y[2] + a * k[2]];
        let (half, sixth) = (0.5 * h, h / 6.0);
        let (lo, hi) = (-SIMPLEX_SLACK, 1.0 + SIMPLEX_SLACK);

        let mut y = [1.0 - p.i0 - p.r0, p.i0, p.r0];
        if self.days == 0 {
            return Ok(true);
        }
        if sink(0, y).is_break() {
            return Ok(false);
        }
        let mut step = 0usize;
        let mut b_start = beta_at(0);
        for day in 1..self.days {
            for _ in 0..per_day {
                let j = 2 * step;
                let (bh, b_end) = (beta_at(j + 1), beta_at(j + 2));
                let k1 = rhs(b_start, y);
                let k2 = rhs(bh, axpy(y, half, k1));
                let k3 = rhs(bh, axpy(y, half, k2));
                let k4 = rhs(b_end, axpy(y, h, k3));
                for d in 0..3 {
                    y[d] += sixth * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
                }
                b_start = b_end;
                step += 1;
                // the negated form also catches NaN
                if !(y[0] >= lo && y[0] <= hi && y[1] >= lo && y[1] <= hi && y[2] >= lo && y[2] <= hi) {
                    return Err(Error::NumericalBlowup {
                        step,
                        time_years: self.origin_years + step as f64 * h,
                    });
                }
            }
            if sink(day, y).is_break() {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Years from January 1 of `date`'s year.
pub fn season_time(date: NaiveDate) -> f64 {
    days_between(jan_first(date.year()), date) as f64 / DAYS_PER_YEAR
}

/// Fixed-step classical RK4 from `t_start` to `t_end` (both inclusive on
/// the daily output grid).
///
/// `step_days` must divide one day. When `h · (b0 (1 + b1) + ν + γ)` would
/// exceed 2, every step is split evenly so the scheme stays inside its
/// stability region; the sub-step is fixed for the whole run.
pub fn integrate(
    p: &SirParams,
    c: &SirConstants,
    t_start: NaiveDate,
    t_end: NaiveDate,
    step_days: f64,
) -> Result<Trajectory> {
    if t_start >= t_end {
        return Err(Error::Config(format!(
            "integration window is empty: {t_start} .. {t_end}"
        )));
    }
    let days = days_between(t_start, t_end) as usize + 1;
    let origin = season_time(t_start);
    let grid = Grid::new(origin, days, step_days)?;
    let mut traj = Trajectory {
        start: t_start,
        times: Vec::with_capacity(days),
        s: Vec::with_capacity(days),
        i: Vec::with_capacity(days),
        r: Vec::with_capacity(days),
        h_sir: Vec::with_capacity(days),
    };
    grid.run(p, c, |day, [s, i, r]| {
        traj.times.push(origin + day as f64 / DAYS_PER_YEAR);
        traj.s.push(s);
        traj.i.push(i);
        traj.r.push(r);
        traj.h_sir.push(p.alpha * i);
        ControlFlow::Continue(())
    })?;
    Ok(traj)
}

/// Index and value of the first maximum of `values[lo..=hi]`.
pub(crate) fn first_argmax(values: &[f64], lo: usize, hi: usize) -> (usize, f64) {
    let mut best = (lo, values[lo]);
    for (k, &v) in values.iter().enumerate().take(hi + 1).skip(lo + 1) {
        if v > best.1 {
            best = (k, v);
        }
    }
    best
}

/// Grid argmax of `H_SIR` over `[search_start, search_end]`, earliest on ties.
pub fn peak(traj: &Trajectory, search_start: NaiveDate, search_end: NaiveDate) -> Result<PeakEstimate> {
    let lo = days_between(traj.start, search_start).max(0);
    let hi = days_between(traj.start, search_end).min(traj.len() as i64 - 1);
    if traj.is_empty() || lo > hi {
        return Err(Error::Config(format!(
            "peak search window {search_start} .. {search_end} does not overlap the trajectory"
        )));
    }
    let (k, h) = first_argmax(&traj.h_sir, lo as usize, hi as usize);
    Ok(PeakEstimate {
        t_sir: traj.date_at(k),
        h_sir: h,
    })
}
