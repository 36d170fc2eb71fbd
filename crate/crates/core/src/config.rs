//! Facility presets and the per-run forecasting profile.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::alerts::{AlertConfig, DEFAULT_CONFIRM_LAG_DAYS};
use crate::calibrate::DeConfig;
use crate::ensemble::WeightConvention;
use crate::error::{Error, Result};
use crate::sir::SirConstants;
use crate::timeseries::SmoothingConfig;

/// Calendar month and day, written `MM-DD`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct MonthDay {
    pub month: u32,
    pub day: u32,
}

impl MonthDay {
    pub const fn new(month: u32, day: u32) -> Self {
        Self { month, day }
    }

    pub fn in_year(self, year: i32) -> Result<NaiveDate> {
        NaiveDate::from_ymd_opt(year, self.month, self.day)
            .ok_or_else(|| Error::Config(format!("{self} does not exist in {year}")))
    }
}

impl fmt::Display for MonthDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}-{:02}", self.month, self.day)
    }
}

impl FromStr for MonthDay {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("expected MM-DD, got {s:?}"));
        let (m, d) = s.split_once('-').ok_or_else(bad)?;
        let md = MonthDay::new(m.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?);
        // 2024 is a leap year, so Feb 29 is accepted here
        md.in_year(2024).map_err(|_| bad())?;
        Ok(md)
    }
}

impl Serialize for MonthDay {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MonthDay {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Yearly window in which alerts may fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonWindow {
    pub start: MonthDay,
    pub end: MonthDay,
}

impl Default for SeasonWindow {
    fn default() -> Self {
        Self {
            start: MonthDay::new(3, 1),
            end: MonthDay::new(12, 31),
        }
    }
}

impl SeasonWindow {
    pub fn for_year(&self, year: i32) -> Result<(NaiveDate, NaiveDate)> {
        let (a, b) = (self.start.in_year(year)?, self.end.in_year(year)?);
        if a >= b {
            return Err(Error::Config(format!(
                "season window {} .. {} is empty",
                self.start, self.end
            )));
        }
        Ok((a, b))
    }
}

/// Loss weights tuned for a named facility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FacilityPreset {
    pub name: &'static str,
    pub lambda: f64,
    pub rho: f64,
}

pub const PRESETS: [FacilityPreset; 4] = [
    FacilityPreset {
        name: "hlcm",
        lambda: 0.9981,
        rho: 0.97,
    },
    FacilityPreset {
        name: "hegc",
        lambda: 0.998,
        rho: 0.93,
    },
    FacilityPreset {
        name: "hfb",
        lambda: 0.9991,
        rho: 0.8,
    },
    FacilityPreset {
        name: "hrdr",
        lambda: 0.9991,
        rho: 0.2,
    },
];

/// `(λ, ρ)` for facilities without a preset.
pub const DEFAULT_LOSS_WEIGHTS: (f64, f64) = (0.998, 0.9);

/// Onset gate as a fraction of the historical mean peak.
pub const DEFAULT_MU_FRACTION: f64 = 0.15;

pub fn preset(name: &str) -> Option<FacilityPreset> {
    PRESETS.iter().copied().find(|p| p.name.eq_ignore_ascii_case(name))
}

/// Everything a forecast needs besides data and history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastProfile {
    pub facility: String,
    pub lambda: f64,
    pub rho: f64,
    /// Fixed onset gate; when absent `mu_fraction × h0` is used.
    pub mu: Option<f64>,
    pub mu_fraction: f64,
    pub season: SeasonWindow,
    pub confirm_lag_days: u32,
    pub smoothing: SmoothingConfig,
    pub de: DeConfig,
    pub weight_convention: WeightConvention,
    pub constants: SirConstants,
    pub seed: u64,
}

impl Default for ForecastProfile {
    fn default() -> Self {
        Self {
            facility: "unknown".into(),
            lambda: DEFAULT_LOSS_WEIGHTS.0,
            rho: DEFAULT_LOSS_WEIGHTS.1,
            mu: None,
            mu_fraction: DEFAULT_MU_FRACTION,
            season: SeasonWindow::default(),
            confirm_lag_days: DEFAULT_CONFIRM_LAG_DAYS,
            smoothing: SmoothingConfig::default(),
            de: DeConfig::default(),
            weight_convention: WeightConvention::default(),
            constants: SirConstants::default(),
            seed: 42,
        }
    }
}

impl ForecastProfile {
    /// Profile for `facility`, with preset loss weights when one exists.
    pub fn for_facility(facility: &str) -> Self {
        let (lambda, rho) = preset(facility)
            .map(|p| (p.lambda, p.rho))
            .unwrap_or(DEFAULT_LOSS_WEIGHTS);
        Self {
            facility: facility.to_string(),
            lambda,
            rho,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if !(self.rho >= 0.0) {
            return Err(Error::Config(format!("rho must be >= 0, got {}", self.rho)));
        }
        if let Some(mu) = self.mu {
            if !(mu >= 0.0) {
                return Err(Error::Config(format!("mu must be >= 0, got {mu}")));
            }
        }
        self.season.for_year(2023)?;
        self.smoothing.validate()?;
        self.de.validate()
    }

    pub fn mu_for(&self, h0: f64) -> f64 {
        self.mu.unwrap_or(self.mu_fraction * h0)
    }

    pub fn alert_config(&self, year: i32, h0: f64) -> Result<AlertConfig> {
        let (season_start, season_end) = self.season.for_year(year)?;
        Ok(AlertConfig {
            mu: self.mu_for(h0),
            season_start,
            season_end,
            confirm_lag_days: self.confirm_lag_days,
        })
    }
}
