//! Daily combined forecasts.
//!
//! Once the acceleration alert has fired, each monitoring day produces a
//! peak date that blends the historical offset predictor `t_M` with the
//! fitted SIR peak `t_SIR`. The magnitude forecast is withheld until the
//! inflection alert has passed.

use chrono::{Datelike, NaiveDate};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::alerts::{replay_alerts, AlertState};
use crate::calibrate::{self, derive_seed, CalibrationResult, LossConfig, SeasonLoss};
use crate::config::ForecastProfile;
use crate::dates::{add_days, day_number, days_between, from_day_number, jan_first};
use crate::error::{Error, Result};
use crate::sir::{first_argmax, Trajectory};
use crate::timeseries::{ensemble_smooth, DailySeries, EdgePolicy, SmoothedCurve, SmoothingConfig};

/// One past season as seen by the mobile predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeasonRecord {
    pub year: i32,
    pub t_peak: NaiveDate,
    pub tmin: NaiveDate,
    pub h_peak: f64,
}

impl SeasonRecord {
    pub fn offset_days(&self) -> i64 {
        days_between(self.tmin, self.t_peak)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonHistory {
    records: Vec<SeasonRecord>,
}

impl SeasonHistory {
    pub fn new(mut records: Vec<SeasonRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::HistoryEmpty);
        }
        records.sort_by_key(|r| r.year);
        if records.windows(2).any(|w| w[0].year == w[1].year) {
            return Err(Error::Config("history lists a year twice".into()));
        }
        if let Some(r) = records.iter().find(|r| r.tmin > r.t_peak) {
            return Err(Error::Config(format!(
                "{}: acceleration alert {} falls after the peak {}",
                r.year, r.tmin, r.t_peak
            )));
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[SeasonRecord] {
        &self.records
    }

    pub fn years(&self) -> impl Iterator<Item = i32> + '_ {
        self.records.iter().map(|r| r.year)
    }

    pub fn contains_year(&self, year: i32) -> bool {
        self.records.iter().any(|r| r.year == year)
    }

    /// Leave-one-out view; `None` when nothing would remain.
    pub fn without_year(&self, year: i32) -> Option<SeasonHistory> {
        let rest: Vec<_> = self.records.iter().copied().filter(|r| r.year != year).collect();
        SeasonHistory::new(rest).ok()
    }

    pub fn offsets(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.offset_days() as f64).collect()
    }

    pub fn mean_offset(&self) -> f64 {
        mean(&self.offsets())
    }

    /// Sample standard deviation of the alert-to-peak offsets (0 for one year).
    pub fn offset_std(&self) -> f64 {
        sample_std(&self.offsets())
    }

    /// Historical mean peak magnitude `h0`.
    pub fn h0(&self) -> f64 {
        mean(&self.records.iter().map(|r| r.h_peak).collect::<Vec<_>>())
    }

    /// Mean day-of-year (1-based) of the historical peaks.
    pub fn mean_peak_day_of_year(&self) -> f64 {
        mean(
            &self
                .records
                .iter()
                .map(|r| r.t_peak.ordinal() as f64)
                .collect::<Vec<_>>(),
        )
    }

    /// `t_max` placed in `year`.
    pub fn t_max(&self, year: i32) -> NaiveDate {
        from_day_number(day_number(jan_first(year)) + self.mean_peak_day_of_year() - 1.0)
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Date and magnitude of the maximum of a retrospectively smoothed season.
pub fn retrospective_peak(season: &DailySeries, smoothing: &SmoothingConfig) -> Result<(NaiveDate, f64)> {
    let curve = ensemble_smooth(season, &smoothing.with_edge_policy(EdgePolicy::Mirror))?;
    let (k, h) = first_argmax(&curve.h, 0, curve.len() - 1);
    Ok((curve.date_at(k), h))
}

/// Builds the mobile-predictor history from complete past seasons.
///
/// Peaks come from the mirror-smoothed full season. The acceleration alert
/// of each year is the one the live system would have confirmed, obtained
/// by replaying that season day by day, so historical offsets and live
/// alerts are measured the same way. Seasons without a confirmed alert are
/// dropped with a warning.
pub fn build_history(past_seasons: &[DailySeries], profile: &ForecastProfile) -> Result<SeasonHistory> {
    let mut peaks = Vec::with_capacity(past_seasons.len());
    for season in past_seasons {
        match retrospective_peak(season, &profile.smoothing) {
            Ok(p) => peaks.push((season, p)),
            Err(e) => warn!("season starting {} skipped: {e}", season.start()),
        }
    }
    if peaks.is_empty() {
        return Err(Error::HistoryEmpty);
    }
    let h0 = mean(&peaks.iter().map(|(_, (_, h))| *h).collect::<Vec<_>>());

    let mut records = Vec::new();
    for (season, (t_peak, h_peak)) in peaks {
        let year = season.start().year();
        let cfg = profile.alert_config(year, h0)?;
        let timeline = replay_alerts(season, &profile.smoothing, &cfg, season.end())?;
        match timeline.state.tmin {
            Some(tmin) if tmin <= t_peak => records.push(SeasonRecord {
                year,
                t_peak,
                tmin,
                h_peak,
            }),
            Some(tmin) => warn!("{year}: acceleration alert {tmin} after peak {t_peak}; year dropped"),
            None => warn!("{year}: no confirmed acceleration alert; year dropped"),
        }
    }
    SeasonHistory::new(records)
}

/// `t_M = tmin + mean(t_peak - tmin)`, rounded half-to-even.
pub fn mobile_prediction(tmin: NaiveDate, hist: &SeasonHistory) -> NaiveDate {
    from_day_number(day_number(tmin) + hist.mean_offset())
}

/// Which factor of the date blend multiplies `t_M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightConvention {
    /// `t_M` starts fully weighted at `tmin` and fades to 0 at `t_max`.
    #[default]
    Fading,
    /// `t_M` starts at weight 0 at `tmin` and reaches 1 at `t_max`.
    Rising,
}

/// Coefficient of `t_M` in the combined date forecast on day `t`.
pub fn weight(t: NaiveDate, tmin: NaiveDate, t_max: NaiveDate, convention: WeightConvention) -> Result<f64> {
    if t_max <= tmin {
        return Err(Error::Config(format!(
            "historical mean peak {t_max} does not follow the acceleration alert {tmin}"
        )));
    }
    let ramp = (days_between(tmin, t) as f64 / days_between(tmin, t_max) as f64).clamp(0.0, 1.0);
    Ok(match convention {
        WeightConvention::Fading => 1.0 - ramp,
        WeightConvention::Rising => ramp,
    })
}

/// `ω t_M + (1 - ω) t_SIR` on day numbers, rounded half-to-even.
pub fn peak_date_forecast(t_m: NaiveDate, t_sir: NaiveDate, omega_mobile: f64) -> NaiveDate {
    let w = omega_mobile.clamp(0.0, 1.0);
    from_day_number(w * day_number(t_m) + (1.0 - w) * day_number(t_sir))
}

/// `h_SIR` once the inflection alert lies strictly in the past.
pub fn peak_magnitude_forecast(alert: &AlertState, t: NaiveDate, fit: &CalibrationResult) -> Option<f64> {
    match alert.t1 {
        Some(t1) if t > t1 => Some(fit.peak.h_sir),
        _ => None,
    }
}

/// Date interval `t̂ ± round(std of offsets)` and, when `h_hat` is given,
/// `ĥ ± mean |H_SIR - H|` over `[t0, t]`.
pub fn uncertainty_intervals(
    t_hat: NaiveDate,
    h_hat: Option<f64>,
    hist: &SeasonHistory,
    fitted: &Trajectory,
    observed: &SmoothedCurve,
    alert: &AlertState,
    t: NaiveDate,
) -> ((NaiveDate, NaiveDate), Option<(f64, f64)>) {
    if hist.records().len() == 1 {
        warn!("single-year history: peak-date interval has zero width");
    }
    let half = hist.offset_std().round_ties_even() as i64;
    let dates = (add_days(t_hat, -half), add_days(t_hat, half));

    let magnitude = h_hat.map(|h| {
        let from = alert.t0.unwrap_or(t);
        let deviations: Vec<f64> = observed
            .index_range(from, t)
            .map(|(lo, hi)| {
                (lo..=hi)
                    .filter_map(|k| fitted.h_at(observed.date_at(k)).map(|m| (m - observed.h[k]).abs()))
                    .collect()
            })
            .unwrap_or_default();
        let mad = if deviations.is_empty() { 0.0 } else { mean(&deviations) };
        (h - mad, h + mad)
    });
    (dates, magnitude)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyForecast {
    pub evaluated_at: NaiveDate,
    pub alert: AlertState,
    pub t_hat: Option<NaiveDate>,
    pub t_interval: Option<(NaiveDate, NaiveDate)>,
    pub h_hat: Option<f64>,
    pub h_interval: Option<(f64, f64)>,
    pub t_sir: Option<NaiveDate>,
    pub t_m: Option<NaiveDate>,
    /// Coefficient of `t_M` in the date blend.
    pub omega: Option<f64>,
    /// Fitted peak magnitude, reported even while `h_hat` is withheld.
    pub h_sir: Option<f64>,
}

impl DailyForecast {
    pub fn alerts_only(alert: AlertState) -> Self {
        Self {
            evaluated_at: alert.evaluated_at,
            alert,
            t_hat: None,
            t_interval: None,
            h_hat: None,
            h_interval: None,
            t_sir: None,
            t_m: None,
            omega: None,
            h_sir: None,
        }
    }

    pub fn has_prediction(&self) -> bool {
        self.t_hat.is_some()
    }
}

/// Flat JSON-lines shape of a [`DailyForecast`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub date: NaiveDate,
    pub t0: Option<NaiveDate>,
    pub tmin: Option<NaiveDate>,
    pub t1: Option<NaiveDate>,
    pub t_hat: Option<NaiveDate>,
    pub t_lo: Option<NaiveDate>,
    pub t_hi: Option<NaiveDate>,
    pub h_hat: Option<f64>,
    pub h_lo: Option<f64>,
    pub h_hi: Option<f64>,
    pub t_sir: Option<NaiveDate>,
    pub t_m: Option<NaiveDate>,
    pub omega_mobile: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_sir: Option<f64>,
}

impl From<&DailyForecast> for ForecastRecord {
    fn from(f: &DailyForecast) -> Self {
        Self {
            date: f.evaluated_at,
            t0: f.alert.t0,
            tmin: f.alert.tmin,
            t1: f.alert.t1,
            t_hat: f.t_hat,
            t_lo: f.t_interval.map(|i| i.0),
            t_hi: f.t_interval.map(|i| i.1),
            h_hat: f.h_hat,
            h_lo: f.h_interval.map(|i| i.0),
            h_hi: f.h_interval.map(|i| i.1),
            t_sir: f.t_sir,
            t_m: f.t_m,
            omega_mobile: f.omega,
            h_sir: f.h_sir,
        }
    }
}

impl From<&ForecastRecord> for DailyForecast {
    fn from(r: &ForecastRecord) -> Self {
        Self {
            evaluated_at: r.date,
            alert: AlertState {
                t0: r.t0,
                tmin: r.tmin,
                t1: r.t1,
                evaluated_at: r.date,
            },
            t_hat: r.t_hat,
            t_interval: r.t_lo.zip(r.t_hi),
            h_hat: r.h_hat,
            h_interval: r.h_lo.zip(r.h_hi),
            t_sir: r.t_sir,
            t_m: r.t_m,
            omega: r.omega_mobile,
            h_sir: r.h_sir,
        }
    }
}

/// Runs the full pipeline for monitoring day `day`, reading `series` only
/// up to that day.
pub fn run_day(
    series: &DailySeries,
    day: NaiveDate,
    hist: &SeasonHistory,
    profile: &ForecastProfile,
) -> Result<DailyForecast> {
    let truncated = series.truncate_to(day)?;
    let cfg = profile.alert_config(day.year(), hist.h0())?;
    let timeline = replay_alerts(&truncated, &profile.smoothing, &cfg, day)?;
    forecast_with_alerts(&truncated, day, timeline.state_at(day), hist, profile)
}

/// Pipeline after the alert step, for callers that already replayed the
/// alerts of this season (`alert` must be the state at `day`).
pub fn forecast_with_alerts(
    series: &DailySeries,
    day: NaiveDate,
    alert: AlertState,
    hist: &SeasonHistory,
    profile: &ForecastProfile,
) -> Result<DailyForecast> {
    let truncated = series.truncate_to(day)?;
    let (Some(t0), Some(tmin)) = (alert.t0, alert.tmin) else {
        return Ok(DailyForecast::alerts_only(alert));
    };
    let year = day.year();
    let (_, season_end) = profile.season.for_year(year)?;

    let t_m = mobile_prediction(tmin, hist);
    let observed = ensemble_smooth(&truncated, &profile.smoothing)?;
    let origin = jan_first(year).max(truncated.start());
    let loss_cfg = LossConfig {
        lambda: profile.lambda,
        rho: profile.rho,
        h0: hist.h0(),
        t_m,
        fit_window: (t0, day),
        peak_window: (t0, season_end.max(day)),
        origin,
    };
    let seed = derive_seed(
        profile.seed,
        &[day_number(day) as u64, profile.lambda.to_bits(), profile.rho.to_bits()],
    );
    let objective = SeasonLoss::new(&observed, &loss_cfg, &profile.constants)?;
    let fit = calibrate::fit_prepared(&objective, &profile.de.with_seed(seed))?;

    let t_max = hist.t_max(year);
    let omega = match weight(day, tmin, t_max, profile.weight_convention) {
        Ok(w) => w,
        // Alert on or after the historical mean peak: the blend has already
        // reached its end point.
        Err(_) => match profile.weight_convention {
            WeightConvention::Fading => 0.0,
            WeightConvention::Rising => 1.0,
        },
    };
    let t_hat = peak_date_forecast(t_m, fit.peak.t_sir, omega);
    let h_hat = peak_magnitude_forecast(&alert, day, &fit);
    let fitted = fit.trajectory(&profile.constants, origin, day.max(add_days(origin, 1)))?;
    let (t_interval, h_interval) = uncertainty_intervals(t_hat, h_hat, hist, &fitted, &observed, &alert, day);

    Ok(DailyForecast {
        evaluated_at: day,
        alert,
        t_hat: Some(t_hat),
        t_interval: Some(t_interval),
        h_hat,
        h_interval,
        t_sir: Some(fit.peak.t_sir),
        t_m: Some(t_m),
        omega: Some(omega),
        h_sir: Some(fit.peak.h_sir),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sir::PeakEstimate;
    use crate::sir::SirParams;

    fn day(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn history(offsets: &[i64]) -> SeasonHistory {
        SeasonHistory::new(
            offsets
                .iter()
                .enumerate()
                .map(|(k, off)| {
                    let tmin = day(2010 + k as i32, 5, 1);
                    SeasonRecord {
                        year: 2010 + k as i32,
                        tmin,
                        t_peak: add_days(tmin, *off),
                        h_peak: 20.0,
                    }
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn mobile_prediction_examples() {
        let tmin = day(2023, 5, 7);
        assert_eq!(mobile_prediction(tmin, &history(&[30])), add_days(tmin, 30));
        assert_eq!(mobile_prediction(tmin, &history(&[20, 40])), add_days(tmin, 30));
        assert_eq!(mobile_prediction(tmin, &history(&[32, 33, 29])), add_days(tmin, 31));
    }

    #[test]
    fn weight_endpoints_and_midpoint() {
        let (tmin, tmax) = (day(2023, 5, 1), day(2023, 5, 21));
        use WeightConvention::*;
        assert_eq!(weight(tmin, tmin, tmax, Fading).unwrap(), 1.0);
        assert_eq!(weight(tmin, tmin, tmax, Rising).unwrap(), 0.0);
        assert_eq!(weight(tmax, tmin, tmax, Fading).unwrap(), 0.0);
        assert_eq!(weight(tmax, tmin, tmax, Rising).unwrap(), 1.0);
        let mid = day(2023, 5, 11);
        assert_eq!(weight(mid, tmin, tmax, Fading).unwrap(), 0.5);
        assert_eq!(weight(mid, tmin, tmax, Rising).unwrap(), 0.5);
        assert!(weight(mid, tmin, tmin, Fading).is_err());
    }

    #[test]
    fn date_blend_examples() {
        let base = day(2023, 1, 1);
        let (tm, ts) = (add_days(base, 159), add_days(base, 169));
        assert_eq!(peak_date_forecast(tm, ts, 1.0), tm);
        assert_eq!(peak_date_forecast(tm, ts, 0.0), ts);
        assert_eq!(peak_date_forecast(tm, ts, 0.3), add_days(base, 166));
    }

    #[test]
    fn interval_half_width_from_sample_std() {
        assert_eq!(history(&[20, 40]).offset_std().round_ties_even(), 14.0);
        assert_eq!(history(&[31, 31, 31]).offset_std(), 0.0);
    }

    #[test]
    fn magnitude_deferred_until_after_inflection() {
        let fit = CalibrationResult {
            theta_star: SirParams {
                b0: 60.0,
                b1: 0.3,
                phi: 4.0,
                alpha: 230.0,
                i0: 1e-4,
                r0: 0.3,
            },
            loss_value: 0.0,
            peak: PeakEstimate {
                t_sir: day(2023, 6, 18),
                h_sir: 25.0,
            },
            generations_used: 1,
            converged: true,
            seed: 1,
        };
        let t1 = day(2023, 6, 1);
        let alert = AlertState {
            t0: Some(day(2023, 4, 1)),
            tmin: Some(day(2023, 5, 10)),
            t1: Some(t1),
            evaluated_at: day(2023, 6, 10),
        };
        assert_eq!(peak_magnitude_forecast(&alert, t1, &fit), None);
        assert_eq!(peak_magnitude_forecast(&alert, add_days(t1, 1), &fit), Some(25.0));
        let no_t1 = AlertState { t1: None, ..alert };
        assert_eq!(peak_magnitude_forecast(&no_t1, add_days(t1, 9), &fit), None);
    }

    #[test]
    fn zero_deviation_gives_zero_magnitude_width() {
        let start = day(2023, 1, 1);
        let h: Vec<f64> = (0..40).map(|k| k as f64).collect();
        let traj = Trajectory {
            start,
            times: vec![0.0; 40],
            s: vec![0.0; 40],
            i: vec![0.0; 40],
            r: vec![0.0; 40],
            h_sir: h.clone(),
        };
        let curve = SmoothedCurve {
            start,
            h,
            dh: vec![0.0; 40],
            d2h: vec![0.0; 40],
        };
        let alert = AlertState {
            t0: Some(add_days(start, 5)),
            tmin: Some(add_days(start, 10)),
            t1: Some(add_days(start, 20)),
            evaluated_at: add_days(start, 39),
        };
        let (_, mag) = uncertainty_intervals(
            add_days(start, 45),
            Some(40.0),
            &history(&[30, 30]),
            &traj,
            &curve,
            &alert,
            add_days(start, 39),
        );
        assert_eq!(mag, Some((40.0, 40.0)));
    }

    #[test]
    fn history_rejects_duplicates_and_empty() {
        assert!(matches!(SeasonHistory::new(vec![]), Err(Error::HistoryEmpty)));
        let r = history(&[30]).records()[0];
        assert!(SeasonHistory::new(vec![r, r]).is_err());
    }

    #[test]
    fn record_round_trip() {
        let f = DailyForecast {
            evaluated_at: day(2023, 5, 20),
            alert: AlertState {
                t0: Some(day(2023, 4, 1)),
                tmin: Some(day(2023, 5, 7)),
                t1: None,
                evaluated_at: day(2023, 5, 20),
            },
            t_hat: Some(day(2023, 6, 9)),
            t_interval: Some((day(2023, 6, 1), day(2023, 6, 17))),
            h_hat: None,
            h_interval: None,
            t_sir: Some(day(2023, 6, 12)),
            t_m: Some(day(2023, 6, 8)),
            omega: Some(0.75),
            h_sir: Some(21.3),
        };
        let rec = ForecastRecord::from(&f);
        let json = serde_json::to_string(&rec).unwrap();
        let back: ForecastRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(DailyForecast::from(&back), f);
    }
}
