//! Daily admission series, ingestion and the two-stage smoother.
//!
//! Smoothing is a centered moving average followed by an ensemble of
//! Savitzky–Golay fits whose value, slope and curvature tracks are averaged
//! pointwise. Derivatives are expressed per day.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dates::{add_days, days_between};
use crate::error::{Error, Result};

/// Gap-free daily admission counts for one facility.
///
/// Dates are implicit: entry `k` belongs to `start + k` days, so the
/// one-day-step invariant holds by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySeries {
    facility: String,
    start: NaiveDate,
    counts: Vec<f64>,
}

impl DailySeries {
    pub fn new(facility: impl Into<String>, start: NaiveDate, counts: Vec<f64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptySeries("series has no days".into()));
        }
        if let Some(k) = counts.iter().position(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Config(format!(
                "count on {} is negative or not finite",
                add_days(start, k as i64)
            )));
        }
        Ok(Self {
            facility: facility.into(),
            start,
            counts,
        })
    }

    pub fn facility(&self) -> &str {
        &self.facility
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        add_days(self.start, self.counts.len() as i64 - 1)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn date_at(&self, index: usize) -> NaiveDate {
        add_days(self.start, index as i64)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.counts.len()).map(|k| self.date_at(k))
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let k = days_between(self.start, date);
        (k >= 0 && (k as usize) < self.counts.len()).then_some(k as usize)
    }

    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        self.index_of(date).map(|k| self.counts[k])
    }

    /// Prefix of the series ending at `day`.
    ///
    /// This is the only way the forecasting pipeline reads data, so nothing
    /// after `day` can influence a forecast made on `day`. A `day` past the
    /// end returns the whole series.
    pub fn truncate_to(&self, day: NaiveDate) -> Result<DailySeries> {
        let k = days_between(self.start, day);
        if k < 0 {
            return Err(Error::EmptySeries(format!(
                "{day} is before the first recorded day {}",
                self.start
            )));
        }
        let keep = (k as usize + 1).min(self.counts.len());
        Ok(DailySeries {
            facility: self.facility.clone(),
            start: self.start,
            counts: self.counts[..keep].to_vec(),
        })
    }

    /// Splits into one series per calendar year, skipping `excluded_years`.
    pub fn split_by_year(&self, excluded_years: &BTreeSet<i32>) -> Vec<DailySeries> {
        let mut out: Vec<DailySeries> = Vec::new();
        for (k, &c) in self.counts.iter().enumerate() {
            let date = self.date_at(k);
            if excluded_years.contains(&date.year()) {
                continue;
            }
            match out.last_mut() {
                Some(s) if s.start.year() == date.year() => s.counts.push(c),
                _ => out.push(DailySeries {
                    facility: self.facility.clone(),
                    start: date,
                    counts: vec![c],
                }),
            }
        }
        out
    }
}

/// Row filters applied while reading a record file.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub facility: Option<String>,
    /// Keep rows with `age <= age_max` (rows without an age always pass).
    pub age_max: Option<u32>,
    pub excluded_years: BTreeSet<i32>,
}

/// Reads a record CSV into a gap-free [`DailySeries`].
///
/// Accepted headers are `date,facility,age,count` and `date,count`; `facility`,
/// `age` and `count` are each optional. A missing or empty `count` makes the
/// row a single admission event. Days without rows are zero-filled.
pub fn load_records(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<DailySeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_records(file, opts)
}

pub fn parse_records<R: Read>(reader: R, opts: &LoadOptions) -> Result<DailySeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let date_col = column("date").ok_or(Error::Parse {
        line: 1,
        message: "header has no `date` column".into(),
    })?;
    let count_col = column("count");
    let facility_col = column("facility");
    let age_col = column("age");

    let mut totals: BTreeMap<NaiveDate, f64> = BTreeMap::new();
    let mut facilities: BTreeSet<String> = BTreeSet::new();

    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| Error::Parse { line, message };

        let raw_date = record.get(date_col).unwrap_or("");
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d")
            .map_err(|e| bad(format!("invalid date {raw_date:?}: {e}")))?;

        let count = match count_col.and_then(|c| record.get(c)).filter(|s| !s.is_empty()) {
            None => 1.0,
            Some(s) => {
                let v: f64 = s.parse().map_err(|_| bad(format!("invalid count {s:?}")))?;
                if !v.is_finite() || v < 0.0 {
                    return Err(bad(format!("count must be a non-negative number, got {s}")));
                }
                v
            }
        };

        let facility = facility_col.and_then(|c| record.get(c)).filter(|s| !s.is_empty());
        if let (Some(want), Some(have)) = (opts.facility.as_deref(), facility) {
            if want != have {
                continue;
            }
        }

        if let (Some(max), Some(raw)) = (
            opts.age_max,
            age_col.and_then(|c| record.get(c)).filter(|s| !s.is_empty()),
        ) {
            let age: u32 = raw.parse().map_err(|_| bad(format!("invalid age {raw:?}")))?;
            if age > max {
                continue;
            }
        }

        if opts.excluded_years.contains(&date.year()) {
            continue;
        }

        if let Some(f) = facility {
            facilities.insert(f.to_string());
        }
        *totals.entry(date).or_insert(0.0) += count;
    }

    let (first, last) = match (totals.keys().next(), totals.keys().next_back()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::EmptySeries("no rows left after filtering".into())),
    };

    let facility = match (&opts.facility, facilities.len()) {
        (Some(f), _) => f.clone(),
        (None, 0) => "unknown".to_string(),
        (None, 1) => facilities.into_iter().next().unwrap(),
        (None, _) => {
            return Err(Error::Config(format!(
                "file mixes {} facilities; select one with a facility filter",
                facilities.len()
            )))
        }
    };

    let n = days_between(first, last) as usize + 1;
    let mut counts = vec![0.0; n];
    for (date, c) in totals {
        counts[days_between(first, date) as usize] = c;
    }
    DailySeries::new(facility, first, counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EdgePolicy {
    /// Only data inside the series is used; windows are clipped (moving
    /// average) or shifted inward (Savitzky–Golay). Safe for live use.
    #[default]
    TruncateWindow,
    /// Reflect the series about its end samples. Retrospective only.
    Mirror,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SgConfig {
    pub window: usize,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub ma_window: usize,
    pub sg_configs: Vec<SgConfig>,
    pub edge_policy: EdgePolicy,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            ma_window: 15,
            sg_configs: [(11, 2), (15, 2), (15, 3), (21, 3)]
                .into_iter()
                .map(|(window, order)| SgConfig { window, order })
                .collect(),
            edge_policy: EdgePolicy::TruncateWindow,
        }
    }
}

impl SmoothingConfig {
    pub fn with_edge_policy(&self, edge_policy: EdgePolicy) -> Self {
        Self {
            edge_policy,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ma_window < 3 || self.ma_window % 2 == 0 {
            return Err(Error::Config(format!(
                "moving-average window must be odd and >= 3, got {}",
                self.ma_window
            )));
        }
        if self.sg_configs.is_empty() {
            return Err(Error::Config("at least one Savitzky–Golay config is required".into()));
        }
        for sg in &self.sg_configs {
            if sg.window < 5 || sg.window % 2 == 0 || sg.order < 2 || sg.order >= sg.window {
                return Err(Error::Config(format!(
                    "Savitzky–Golay window {} / order {} invalid (odd window >= 5, 2 <= order < window)",
                    sg.window, sg.order
                )));
            }
        }
        Ok(())
    }

    pub fn max_window(&self) -> usize {
        self.sg_configs.iter().map(|c| c.window).max().unwrap_or(0)
    }
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}

/// Centered moving average over `window` days.
pub fn moving_average(values: &[f64], window: usize, edge: EdgePolicy) -> Vec<f64> {
    assert!(window >= 3 && window % 2 == 1, "window must be odd and >= 3");
    let n = values.len();
    let half = (window / 2) as isize;
    (0..n as isize)
        .map(|i| match edge {
            EdgePolicy::TruncateWindow => {
                let lo = (i - half).max(0) as usize;
                let hi = ((i + half) as usize).min(n - 1);
                values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
            }
            EdgePolicy::Mirror => (i - half..=i + half).map(|j| values[reflect(j, n)]).sum::<f64>() / window as f64,
        })
        .collect()
}

pub fn moving_average_series(series: &DailySeries, window: usize, edge: EdgePolicy) -> Result<DailySeries> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Config(format!(
            "moving-average window must be odd and >= 3, got {window}"
        )));
    }
    DailySeries::new(
        series.facility.clone(),
        series.start,
        moving_average(&series.counts, window, edge),
    )
}

/// Convolution weights of one Savitzky–Golay filter, one row per evaluation
/// offset inside the window (`-half..=half`).
#[derive(Debug, Clone)]
pub struct SavGolKernel {
    window: usize,
    rows: Vec<Vec<f64>>,
}

impl SavGolKernel {
    pub fn new(window: usize, order: usize, deriv: usize) -> Result<Self> {
        if window % 2 == 0 || window < 3 {
            return Err(Error::Config(format!("window must be odd and >= 3, got {window}")));
        }
        if order >= window {
            return Err(Error::Config(format!(
                "polynomial order {order} must be below the window length {window}"
            )));
        }
        if deriv > order {
            return Err(Error::Config(format!(
                "derivative {deriv} exceeds polynomial order {order}"
            )));
        }
        let half = (window / 2) as i64;
        // Abscissae scaled to [-1, 1] keep the normal matrix well conditioned.
        let scale = half as f64;
        let design = DMatrix::from_fn(window, order + 1, |j, k| {
            ((j as i64 - half) as f64 / scale).powi(k as i32)
        });
        let normal = design.transpose() * &design;
        let lu = normal.lu();

        let mut rows = Vec::with_capacity(window);
        for offset in -half..=half {
            let u0 = offset as f64 / scale;
            let target = DVector::from_fn(order + 1, |k, _| {
                if k < deriv {
                    0.0
                } else {
                    let falling: f64 = ((k - deriv + 1)..=k).map(|m| m as f64).product();
                    falling * u0.powi((k - deriv) as i32)
                }
            });
            let z = lu
                .solve(&target)
                .ok_or_else(|| Error::Config("singular Savitzky–Golay normal matrix".into()))?;
            let weights = (&design * z) / scale.powi(deriv as i32);
            rows.push(weights.iter().copied().collect());
        }
        Ok(Self { window, rows })
    }

    fn row(&self, offset: i64) -> &[f64] {
        &self.rows[(offset + (self.window / 2) as i64) as usize]
    }

    pub fn apply(&self, values: &[f64], edge: EdgePolicy) -> Result<Vec<f64>> {
        let n = values.len();
        let w = self.window;
        if n < w {
            return Err(Error::Config(format!(
                "Savitzky–Golay window {w} is longer than the series ({n} days)"
            )));
        }
        let half = (w / 2) as isize;
        let center = self.row(0);
        let out = (0..n as isize)
            .map(|i| {
                if i >= half && i + half < n as isize {
                    let lo = (i - half) as usize;
                    return dot(center, &values[lo..lo + w]);
                }
                match edge {
                    EdgePolicy::TruncateWindow => {
                        let lo = (i - half).clamp(0, (n - w) as isize);
                        let offset = i - (lo + half);
                        dot(self.row(offset as i64), &values[lo as usize..lo as usize + w])
                    }
                    EdgePolicy::Mirror => center
                        .iter()
                        .zip(i - half..=i + half)
                        .map(|(c, j)| c * values[reflect(j, n)])
                        .sum(),
                }
            })
            .collect();
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Savitzky–Golay estimate of the `deriv`-th derivative (per sample step).
pub fn savitzky_golay(values: &[f64], window: usize, order: usize, deriv: usize, edge: EdgePolicy) -> Result<Vec<f64>> {
    SavGolKernel::new(window, order, deriv)?.apply(values, edge)
}

/// The smoothed curve `H` with its first and second derivatives per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedCurve {
    pub start: NaiveDate,
    pub h: Vec<f64>,
    pub dh: Vec<f64>,
    pub d2h: Vec<f64>,
}

impl SmoothedCurve {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn end(&self) -> NaiveDate {
        add_days(self.start, self.h.len() as i64 - 1)
    }

    pub fn date_at(&self, index: usize) -> NaiveDate {
        add_days(self.start, index as i64)
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let k = days_between(self.start, date);
        (k >= 0 && (k as usize) < self.h.len()).then_some(k as usize)
    }

    /// Index range of `[from, to]` clipped to the curve, `None` if disjoint.
    pub fn index_range(&self, from: NaiveDate, to: NaiveDate) -> Option<(usize, usize)> {
        if from > to || to < self.start || from > self.end() {
            return None;
        }
        let lo = days_between(self.start, from).max(0) as usize;
        let hi = (days_between(self.start, to) as usize).min(self.h.len() - 1);
        Some((lo, hi))
    }
}

/// Moving average followed by the averaged Savitzky–Golay ensemble.
pub fn ensemble_smooth(series: &DailySeries, cfg: &SmoothingConfig) -> Result<SmoothedCurve> {
    cfg.validate()?;
    if series.len() < cfg.max_window() {
        return Err(Error::Config(format!(
            "series has {} days but the widest Savitzky–Golay window is {}",
            series.len(),
            cfg.max_window()
        )));
    }
    let base = moving_average(&series.counts, cfg.ma_window, cfg.edge_policy);
    let n = base.len();
    let mut tracks = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for sg in &cfg.sg_configs {
        for (deriv, track) in tracks.iter_mut().enumerate() {
            let est = savitzky_golay(&base, sg.window, sg.order, deriv, cfg.edge_policy)?;
            track.iter_mut().zip(est).for_each(|(acc, v)| *acc += v);
        }
    }
    let m = cfg.sg_configs.len() as f64;
    let [h, dh, d2h] = tracks.map(|t| t.into_iter().map(|v| v / m).collect::<Vec<_>>());
    Ok(SmoothedCurve {
        start: series.start,
        h,
        dh,
        d2h,
    })
}
