//! Three-level alert system on the smoothed admission curve.
//!
//! * onset `t0`: first day with `dH > 0`, `d²H > 0` and `H > μ`;
//! * acceleration `tmin`: argmax of `d²H` while `dH > 0`;
//! * inflection `t1`: first downward zero crossing of `d²H` after `tmin`.
//!
//! A maximum or a zero crossing can only be recognised after the fact, so
//! `tmin` and `t1` require the condition to hold for `confirm_lag_days`
//! further days before they are reported.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::dates::add_days;
use crate::error::{Error, Result};
use crate::timeseries::{ensemble_smooth, DailySeries, SmoothedCurve, SmoothingConfig};

pub const DEFAULT_CONFIRM_LAG_DAYS: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertConfig {
    /// Onset gate on `H`, admissions/day.
    pub mu: f64,
    pub season_start: NaiveDate,
    pub season_end: NaiveDate,
    pub confirm_lag_days: u32,
}

impl AlertConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0) {
            return Err(Error::Config(format!("mu must be >= 0, got {}", self.mu)));
        }
        if self.season_start >= self.season_end {
            return Err(Error::Config(format!(
                "season window {} .. {} is empty",
                self.season_start, self.season_end
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlertKind {
    T0,
    Tmin,
    T1,
}

impl AlertKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AlertKind::T0 => "t0",
            AlertKind::Tmin => "tmin",
            AlertKind::T1 => "t1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertState {
    pub t0: Option<NaiveDate>,
    pub tmin: Option<NaiveDate>,
    pub t1: Option<NaiveDate>,
    pub evaluated_at: NaiveDate,
}

impl AlertState {
    pub fn empty(evaluated_at: NaiveDate) -> Self {
        Self {
            t0: None,
            tmin: None,
            t1: None,
            evaluated_at,
        }
    }

    /// Checks the ordering and nesting invariants.
    pub fn is_consistent(&self) -> bool {
        let nested = (self.t1.is_none() || self.tmin.is_some()) && (self.tmin.is_none() || self.t0.is_some());
        let ordered = match (self.t0, self.tmin, self.t1) {
            (Some(a), Some(b), Some(c)) => a <= b && b <= c,
            (Some(a), Some(b), None) => a <= b,
            _ => true,
        };
        let past = [self.t0, self.tmin, self.t1]
            .iter()
            .flatten()
            .all(|d| *d <= self.evaluated_at);
        nested && ordered && past
    }
}

/// One alert firing: the detected date and the day it was confirmed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertEvent {
    #[serde(rename = "alert")]
    pub kind: AlertKind,
    pub date: NaiveDate,
    pub confirmed_at: NaiveDate,
}

/// Last usable curve index for a detector evaluated on `evaluated_at`.
fn last_index(curve: &SmoothedCurve, evaluated_at: NaiveDate) -> Option<usize> {
    if curve.is_empty() || evaluated_at < curve.start {
        return None;
    }
    let end = evaluated_at.min(curve.end());
    curve.index_of(end)
}

pub fn detect_onset(curve: &SmoothedCurve, cfg: &AlertConfig) -> Option<NaiveDate> {
    let (lo, hi) = curve.index_range(cfg.season_start, cfg.season_end)?;
    (lo..=hi)
        .find(|&k| curve.dh[k] > 0.0 && curve.d2h[k] > 0.0 && curve.h[k] > cfg.mu)
        .map(|k| curve.date_at(k))
}

/// Confirmed argmax of `d²H` over `[t0, evaluated_at]` restricted to `dH > 0`.
pub fn detect_acceleration(
    curve: &SmoothedCurve,
    t0: NaiveDate,
    evaluated_at: NaiveDate,
    confirm_lag_days: u32,
) -> Option<NaiveDate> {
    let hi = last_index(curve, evaluated_at)?;
    let lo = curve.index_of(t0.max(curve.start))?;
    if lo > hi {
        return None;
    }
    let mut best: Option<usize> = None;
    for k in lo..=hi {
        if curve.dh[k] > 0.0 && best.map_or(true, |b| curve.d2h[k] > curve.d2h[b]) {
            best = Some(k);
        }
    }
    let k = best?;
    (curve.d2h[k] > 0.0 && k + confirm_lag_days as usize <= hi).then(|| curve.date_at(k))
}

/// First confirmed downward crossing of `d²H` after `tmin` while `dH > 0`.
///
/// On the daily grid the crossing is the pair `d²H(t-1) > 0 >= d²H(t)` and
/// `t` is reported. Confirmation needs `d²H <= 0` on the following
/// `confirm_lag_days` days.
pub fn detect_inflection(
    curve: &SmoothedCurve,
    tmin: NaiveDate,
    evaluated_at: NaiveDate,
    confirm_lag_days: u32,
) -> Option<NaiveDate> {
    let hi = last_index(curve, evaluated_at)?;
    let lag = confirm_lag_days as usize;
    let first = curve.index_of(add_days(tmin, 1).max(curve.start))?.max(1);
    (first..=hi)
        .filter(|&k| k + lag <= hi)
        .find(|&k| {
            curve.d2h[k - 1] > 0.0
                && curve.d2h[k] <= 0.0
                && curve.dh[k] > 0.0
                && curve.d2h[k + 1..=k + lag].iter().all(|v| *v <= 0.0)
        })
        .map(|k| curve.date_at(k))
}

/// Alert triple read off a single curve.
pub fn alert_state(curve: &SmoothedCurve, cfg: &AlertConfig, evaluated_at: NaiveDate) -> AlertState {
    let mut state = AlertState::empty(evaluated_at);
    let onset = detect_onset(curve, cfg).filter(|d| *d <= evaluated_at);
    let Some(t0) = onset else { return state };
    state.t0 = Some(t0);
    state.tmin = detect_acceleration(curve, t0, evaluated_at, cfg.confirm_lag_days);
    if let Some(tmin) = state.tmin {
        state.t1 = detect_inflection(curve, tmin, evaluated_at, cfg.confirm_lag_days);
    }
    state
}

/// Alerts accumulated by replaying the season one day at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertTimeline {
    pub state: AlertState,
    pub events: Vec<AlertEvent>,
}

impl AlertTimeline {
    /// State as it stood at the end of `day` (a prefix of this replay).
    pub fn state_at(&self, day: NaiveDate) -> AlertState {
        let mut state = AlertState::empty(day);
        for ev in self.events.iter().filter(|e| e.confirmed_at <= day) {
            match ev.kind {
                AlertKind::T0 => state.t0 = Some(ev.date),
                AlertKind::Tmin => state.tmin = Some(ev.date),
                AlertKind::T1 => state.t1 = Some(ev.date),
            }
        }
        state
    }
}

/// Causal replay: on each day the series is truncated, re-smoothed and the
/// next pending alert is looked for; a fired alert is frozen for good.
///
/// Alerts therefore never un-fire as `evaluated_at` grows, and the result
/// for a given day depends only on data up to that day.
pub fn replay_alerts(
    series: &DailySeries,
    smoothing: &SmoothingConfig,
    cfg: &AlertConfig,
    evaluated_at: NaiveDate,
) -> Result<AlertTimeline> {
    cfg.validate()?;
    smoothing.validate()?;
    let mut timeline = AlertTimeline {
        state: AlertState::empty(evaluated_at),
        events: Vec::new(),
    };
    let min_len = smoothing.max_window() as i64;
    let first_day = cfg.season_start.max(add_days(series.start(), min_len - 1));
    let last_day = evaluated_at.min(series.end());
    let lag = cfg.confirm_lag_days;

    let mut day = first_day;
    while day <= last_day && timeline.state.t1.is_none() {
        let curve = ensemble_smooth(&series.truncate_to(day)?, smoothing)?;
        let state = &mut timeline.state;
        let mut push = |kind, date| {
            timeline.events.push(AlertEvent {
                kind,
                date,
                confirmed_at: day,
            })
        };
        if state.t0.is_none() {
            if let Some(t0) = detect_onset(&curve, cfg) {
                state.t0 = Some(t0);
                push(AlertKind::T0, t0);
            }
        }
        if let (Some(t0), None) = (state.t0, state.tmin) {
            if let Some(tmin) = detect_acceleration(&curve, t0, day, lag) {
                state.tmin = Some(tmin);
                push(AlertKind::Tmin, tmin);
            }
        }
        if let (Some(tmin), None) = (state.tmin, state.t1) {
            if let Some(t1) = detect_inflection(&curve, tmin, day, lag) {
                state.t1 = Some(t1);
                push(AlertKind::T1, t1);
            }
        }
        day = add_days(day, 1);
    }
    Ok(timeline)
}
