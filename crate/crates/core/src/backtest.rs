//! Season replays, evaluation metrics, the λ sweep and synthetic seasons.
//!
//! The "stabilization day" is the first monitoring day from which every
//! later pre-peak date forecast stays within ±3 days of the last pre-peak
//! forecast. Anticipation is counted from that day to the true peak.

use std::fmt::Write as _;

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alerts::replay_alerts;
use crate::config::ForecastProfile;
use crate::dates::{add_days, days_between, jan_first};
use crate::ensemble::{forecast_with_alerts, mean, retrospective_peak, sample_std, DailyForecast, SeasonHistory};
use crate::error::{Error, Result};
use crate::sir::{first_argmax, integrate, SirConstants, SirParams};
use crate::timeseries::{DailySeries, SmoothingConfig};

/// Forecasts within this many days of the final value count as settled.
pub const STABILITY_BAND_DAYS: i64 = 3;

/// Snapshot horizons (days before the true peak) of the anticipation table.
pub const SNAPSHOT_HORIZONS: [i64; 3] = [30, 14, 7];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeasonTruth {
    pub true_peak_date: NaiveDate,
    pub true_peak_magnitude: f64,
}

/// Peak of the retrospectively smoothed season (mirror edges).
pub fn true_peak(full_season: &DailySeries, smoothing: &SmoothingConfig) -> Result<SeasonTruth> {
    let (true_peak_date, true_peak_magnitude) = retrospective_peak(full_season, smoothing)?;
    Ok(SeasonTruth {
        true_peak_date,
        true_peak_magnitude,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SeasonMetrics {
    pub stabilization_day: Option<NaiveDate>,
    pub anticipation_days: Option<i64>,
    pub peak_date_error_days: Option<i64>,
    pub peak_magnitude_error: Option<f64>,
}

impl SeasonMetrics {
    pub fn available(&self) -> bool {
        self.stabilization_day.is_some()
    }
}

/// Stabilization day and the three headline errors of one forecast stream.
pub fn stabilization_and_metrics(forecasts: &[DailyForecast], truth: &SeasonTruth) -> SeasonMetrics {
    let mut pre_peak: Vec<&DailyForecast> = forecasts
        .iter()
        .filter(|f| f.evaluated_at < truth.true_peak_date && f.t_hat.is_some())
        .collect();
    pre_peak.sort_by_key(|f| f.evaluated_at);
    let Some(last) = pre_peak.last() else {
        return SeasonMetrics::default();
    };
    let final_hat = last.t_hat.unwrap();

    // first index of the settled suffix
    let mut start = pre_peak.len();
    for (k, f) in pre_peak.iter().enumerate().rev() {
        if days_between(final_hat, f.t_hat.unwrap()).abs() > STABILITY_BAND_DAYS {
            break;
        }
        start = k;
    }
    let settled = pre_peak[start];
    let stabilization_day = settled.evaluated_at;

    let magnitude = forecasts
        .iter()
        .filter(|f| f.evaluated_at < truth.true_peak_date)
        .filter_map(|f| f.h_hat.map(|h| (f.evaluated_at, h)))
        .max_by_key(|(d, _)| *d)
        .map(|(_, h)| (h - truth.true_peak_magnitude).abs());

    SeasonMetrics {
        stabilization_day: Some(stabilization_day),
        anticipation_days: Some(days_between(stabilization_day, truth.true_peak_date)),
        peak_date_error_days: Some(days_between(truth.true_peak_date, settled.t_hat.unwrap()).abs()),
        peak_magnitude_error: magnitude,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonReport {
    pub facility: String,
    pub year: i32,
    pub truth: SeasonTruth,
    pub forecasts: Vec<DailyForecast>,
    pub metrics: SeasonMetrics,
}

impl SeasonReport {
    pub fn forecast_on(&self, day: NaiveDate) -> Option<&DailyForecast> {
        self.forecasts.iter().find(|f| f.evaluated_at == day)
    }
}

/// Replays `full_season` day by day over `[monitor_from, monitor_to]`.
///
/// Every forecast sees `full_season` truncated at its own day. Alerts are
/// replayed once for the whole window and read back per day, which gives
/// the same states as replaying separately for each day.
pub fn run_season(
    full_season: &DailySeries,
    hist: &SeasonHistory,
    profile: &ForecastProfile,
    monitor_from: NaiveDate,
    monitor_to: NaiveDate,
) -> Result<SeasonReport> {
    let year = full_season.start().year();
    if hist.contains_year(year) {
        return Err(Error::LeakedSeason(year));
    }
    if monitor_from > monitor_to {
        return Err(Error::Config(format!(
            "monitoring window {monitor_from} .. {monitor_to} is empty"
        )));
    }
    let truth = true_peak(full_season, &profile.smoothing)?;
    let last = monitor_to.min(full_season.end());
    let cfg = profile.alert_config(year, hist.h0())?;
    let timeline = replay_alerts(&full_season.truncate_to(last)?, &profile.smoothing, &cfg, last)?;

    let days: Vec<NaiveDate> = (0..=days_between(monitor_from, last).max(-1))
        .map(|k| add_days(monitor_from, k))
        .collect();
    let forecasts = days
        .par_iter()
        .map(|&d| {
            let prefix = full_season.truncate_to(d)?;
            forecast_with_alerts(&prefix, d, timeline.state_at(d), hist, profile)
        })
        .collect::<Result<Vec<_>>>()?;
    let metrics = stabilization_and_metrics(&forecasts, &truth);
    Ok(SeasonReport {
        facility: full_season.facility().to_string(),
        year,
        truth,
        forecasts,
        metrics,
    })
}

/// Leave-one-year-out backtest over `seasons`, one report per season.
///
/// The history for each season is `hist` with that season's year removed.
pub fn leave_one_out(
    seasons: &[DailySeries],
    hist: &SeasonHistory,
    profile: &ForecastProfile,
    monitor: impl Fn(&DailySeries) -> (NaiveDate, NaiveDate),
) -> Result<Vec<SeasonReport>> {
    seasons
        .iter()
        .map(|s| {
            let year = s.start().year();
            let rest = hist.without_year(year).ok_or(Error::HistoryEmpty)?;
            let (from, to) = monitor(s);
            run_season(s, &rest, profile, from, to)
        })
        .collect()
}

/// Mean and sample std of one metric over the seasons where it exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
}

fn summarize(values: &[f64]) -> MetricSummary {
    MetricSummary {
        mean: (!values.is_empty()).then(|| mean(values)),
        std: (values.len() >= 2).then(|| sample_std(values)),
        count: values.len(),
    }
}

/// Summary rows (anticipation, date error, magnitude error).
pub fn summarize_reports(reports: &[SeasonReport]) -> [MetricSummary; 3] {
    let collect =
        |f: &dyn Fn(&SeasonMetrics) -> Option<f64>| reports.iter().filter_map(|r| f(&r.metrics)).collect::<Vec<_>>();
    [
        summarize(&collect(&|m| m.anticipation_days.map(|v| v as f64))),
        summarize(&collect(&|m| m.peak_date_error_days.map(|v| v as f64))),
        summarize(&collect(&|m| m.peak_magnitude_error)),
    ]
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `report.csv`: one row per season, then `mean` and `std` rows.
pub fn report_csv(reports: &[SeasonReport]) -> String {
    let mut out = String::from(
        "facility,year,true_peak_date,true_peak_magnitude,stabilization_day,anticipation_days,peak_date_error_days,peak_magnitude_error\n",
    );
    for r in reports {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.facility,
            r.year,
            r.truth.true_peak_date,
            r.truth.true_peak_magnitude,
            opt(m.stabilization_day),
            opt(m.anticipation_days),
            opt(m.peak_date_error_days),
            opt(m.peak_magnitude_error),
        );
    }
    let [a, d, h] = summarize_reports(reports);
    let _ = writeln!(
        out,
        "mean,n={}/{}/{},,,,{},{},{}",
        a.count,
        d.count,
        h.count,
        opt(a.mean),
        opt(d.mean),
        opt(h.mean)
    );
    let _ = writeln!(
        out,
        "std,n={}/{}/{},,,,{},{},{}",
        a.count,
        d.count,
        h.count,
        opt(a.std),
        opt(d.std),
        opt(h.std)
    );
    out
}

/// Outcome of one anticipation-table cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hit {
    Green,
    Yellow,
    Red,
    /// The acceleration alert had not fired by the snapshot day.
    AlertNotFired,
    /// The alert had fired but the forecast was withheld (magnitude before t1).
    Withheld,
    /// The snapshot day was outside the monitored window.
    NotMonitored,
}

impl Hit {
    pub fn label(self) -> &'static str {
        match self {
            Hit::Green => "green",
            Hit::Yellow => "yellow",
            Hit::Red => "red",
            Hit::AlertNotFired => "not-fired",
            Hit::Withheld => "withheld",
            Hit::NotMonitored => "not-monitored",
        }
    }
}

/// Green inside the interval, yellow inside the interval widened by 50%.
pub fn classify(truth: f64, estimate: f64, lo: f64, hi: f64) -> Hit {
    let half = (hi - lo) / 2.0;
    if truth >= lo && truth <= hi {
        Hit::Green
    } else if (truth - estimate).abs() <= 1.5 * half {
        Hit::Yellow
    } else {
        Hit::Red
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnticipationRow {
    pub facility: String,
    pub year: i32,
    pub true_peak_date: NaiveDate,
    pub true_peak_magnitude: f64,
    pub tmin: Option<NaiveDate>,
    pub horizon_days: i64,
    pub snapshot_day: NaiveDate,
    pub t_hat: Option<NaiveDate>,
    pub t_half_width: Option<i64>,
    pub date_hit: Hit,
    pub h_hat: Option<f64>,
    pub h_half_width: Option<f64>,
    pub magnitude_hit: Hit,
}

/// Snapshots at 30, 14 and 7 days before each true peak.
pub fn anticipation_table(reports: &[SeasonReport]) -> Vec<AnticipationRow> {
    let mut rows = Vec::new();
    for r in reports {
        let tmin = r.forecasts.iter().rev().find_map(|f| f.alert.tmin);
        for k in SNAPSHOT_HORIZONS {
            let snapshot_day = add_days(r.truth.true_peak_date, -k);
            let snap = r.forecast_on(snapshot_day);
            let (date_hit, magnitude_hit) = match snap {
                None => (Hit::NotMonitored, Hit::NotMonitored),
                Some(f) => {
                    let date_hit = match (f.t_hat, f.t_interval) {
                        (Some(t), Some((lo, hi))) => {
                            let x = |d: NaiveDate| days_between(r.truth.true_peak_date, d) as f64;
                            classify(0.0, x(t), x(lo), x(hi))
                        }
                        _ => Hit::AlertNotFired,
                    };
                    let magnitude_hit = match (f.h_hat, f.h_interval) {
                        (Some(h), Some((lo, hi))) => classify(r.truth.true_peak_magnitude, h, lo, hi),
                        _ if f.t_hat.is_some() => Hit::Withheld,
                        _ => Hit::AlertNotFired,
                    };
                    (date_hit, magnitude_hit)
                }
            };
            rows.push(AnticipationRow {
                facility: r.facility.clone(),
                year: r.year,
                true_peak_date: r.truth.true_peak_date,
                true_peak_magnitude: r.truth.true_peak_magnitude,
                tmin,
                horizon_days: k,
                snapshot_day,
                t_hat: snap.and_then(|f| f.t_hat),
                t_half_width: snap.and_then(|f| f.t_interval).map(|(lo, hi)| days_between(lo, hi) / 2),
                date_hit,
                h_hat: snap.and_then(|f| f.h_hat),
                h_half_width: snap.and_then(|f| f.h_interval).map(|(lo, hi)| (hi - lo) / 2.0),
                magnitude_hit,
            });
        }
    }
    rows
}

/// `anticipation.csv`.
pub fn anticipation_csv(rows: &[AnticipationRow]) -> String {
    let mut out = String::from(
        "facility,year,true_peak_date,true_peak_magnitude,alert,horizon_days,snapshot_day,t_hat,t_half_width,date_hit,h_hat,h_half_width,magnitude_hit\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.facility,
            r.year,
            r.true_peak_date,
            r.true_peak_magnitude,
            opt(r.tmin),
            r.horizon_days,
            r.snapshot_day,
            opt(r.t_hat),
            opt(r.t_half_width),
            r.date_hit.label(),
            opt(r.h_hat),
            opt(r.h_half_width),
            r.magnitude_hit.label(),
        );
    }
    out
}

/// Plain-text rendering of the anticipation table.
pub fn anticipation_text(rows: &[AnticipationRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>4} {:>10} {:>6} {:>10} {:>4}  {:<24} {:<22}",
        "facility", "year", "peak", "mag", "alert", "-k", "date", "magnitude"
    );
    for r in rows {
        let date = match (r.t_hat, r.t_half_width) {
            (Some(t), Some(w)) => format!("{t} ±{w}d {}", r.date_hit.label()),
            _ => format!("-- {}", r.date_hit.label()),
        };
        let mag = match (r.h_hat, r.h_half_width) {
            (Some(h), Some(w)) => format!("{h:.1} ±{w:.1} {}", r.magnitude_hit.label()),
            _ => format!("-- {}", r.magnitude_hit.label()),
        };
        let _ = writeln!(
            out,
            "{:<10} {:>4} {:>10} {:>6.1} {:>10} {:>4}  {:<24} {:<22}",
            r.facility,
            r.year,
            r.true_peak_date.to_string(),
            r.true_peak_magnitude,
            opt(r.tmin),
            r.horizon_days,
            date,
            mag
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaCell {
    pub lambda: f64,
    pub rho: f64,
    pub report: SeasonReport,
    /// Days on which `ĥ` moved by more than 50% from the previous day.
    pub outliers: usize,
}

/// Counts day-over-day magnitude jumps above 50%.
pub fn count_outliers(forecasts: &[DailyForecast]) -> usize {
    let hs: Vec<f64> = forecasts.iter().filter_map(|f| f.h_hat).collect();
    hs.windows(2)
        .filter(|w| w[0] > 0.0 && ((w[1] - w[0]) / w[0]).abs() > 0.5)
        .count()
}

/// One [`run_season`] per `λ` with fixed `ρ`.
pub fn grid_search_lambda(
    full_season: &DailySeries,
    hist: &SeasonHistory,
    lambda_grid: &[f64],
    rho: f64,
    profile: &ForecastProfile,
    monitor_from: NaiveDate,
    monitor_to: NaiveDate,
) -> Result<Vec<LambdaCell>> {
    if lambda_grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    if let Some(bad) = lambda_grid.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::Config(format!("lambda {bad} outside [0, 1]")));
    }
    lambda_grid
        .iter()
        .map(|&lambda| {
            let p = ForecastProfile {
                lambda,
                rho,
                ..profile.clone()
            };
            let report = run_season(full_season, hist, &p, monitor_from, monitor_to)?;
            let outliers = count_outliers(&report.forecasts);
            Ok(LambdaCell {
                lambda,
                rho,
                report,
                outliers,
            })
        })
        .collect()
}

/// `lambda_sweep.csv`: per-λ, per-day predicted date, date error, predicted
/// magnitude and magnitude error.
pub fn lambda_sweep_csv(cells: &[LambdaCell]) -> String {
    let mut out = String::from("lambda,rho,date,t_hat,date_error_days,h_hat,magnitude_error,outliers\n");
    for c in cells {
        let truth = c.report.truth;
        for f in &c.report.forecasts {
            let date_err = f.t_hat.map(|t| days_between(truth.true_peak_date, t));
            let mag_err = f.h_hat.map(|h| h - truth.true_peak_magnitude);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.lambda,
                c.rho,
                f.evaluated_at,
                opt(f.t_hat),
                opt(date_err),
                opt(f.h_hat),
                opt(mag_err),
                c.outliers
            );
        }
    }
    out
}

/// Noisy daily counts drawn from a known SIR season, with the noiseless peak.
///
/// Noise is Gaussian with `σ = noise_sigma_frac × peak`; counts are clipped
/// at zero and rounded.
pub fn generate_synthetic_season(
    theta_true: &SirParams,
    constants: &SirConstants,
    year: i32,
    noise_sigma_frac: f64,
    seed: u64,
    facility: &str,
) -> Result<(DailySeries, SeasonTruth)> {
    theta_true.validate()?;
    if !(noise_sigma_frac >= 0.0) {
        return Err(Error::Config(format!(
            "noise fraction must be >= 0, got {noise_sigma_frac}"
        )));
    }
    let start = jan_first(year);
    let end = jan_first(year + 1).pred_opt().expect("valid date");
    let traj = integrate(theta_true, constants, start, end, 1.0)?;
    let (k, peak) = first_argmax(&traj.h_sir, 0, traj.len() - 1);
    let sigma = noise_sigma_frac * peak;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let counts = traj
        .h_sir
        .iter()
        .map(|h| {
            let e = if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (h + e).max(0.0).round()
        })
        .collect();
    Ok((
        DailySeries::new(facility, start, counts)?,
        SeasonTruth {
            true_peak_date: traj.date_at(k),
            true_peak_magnitude: peak,
        },
    ))
}

/// Six parameter sets giving single winter waves that peak in June,
/// with alert-to-peak offsets of about a month.
pub fn synthetic_corpus_params() -> [SirParams; 6] {
    let p = |b0, b1, phi, alpha, i0, r0| SirParams {
        b0,
        b1,
        phi,
        alpha,
        i0,
        r0,
    };
    [
        p(60.0, 0.30, 4.00, 230.0, 1.0e-4, 0.30),
        p(62.0, 0.30, 3.95, 220.0, 1.0e-4, 0.30),
        p(58.0, 0.32, 4.05, 240.0, 1.0e-4, 0.30),
        p(61.0, 0.28, 4.00, 235.0, 1.2e-4, 0.32),
        p(59.0, 0.30, 3.90, 225.0, 1.0e-4, 0.28),
        p(63.0, 0.30, 4.10, 215.0, 0.8e-4, 0.31),
    ]
}
