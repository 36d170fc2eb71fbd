//! Run configuration: built-in defaults, then preset, then config file,
//! then command-line flags.
//!
//! ```toml
//! data = "admissions.csv"
//! history = "past/"
//! facility = "hlcm"
//! age_max = 5
//! preset = "hlcm"
//! out_dir = "out"
//! format = "jsonl"
//!
//! [profile]
//! lambda = 0.998
//! confirm_lag_days = 5
//! [profile.de]
//! population_size = 60
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use peakcast::config::preset;
use peakcast::ForecastProfile;
use serde::Deserialize;

use crate::{DataArgs, Format, Global};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data: Option<PathBuf>,
    history: Option<PathBuf>,
    facility: Option<String>,
    age_max: Option<u32>,
    preset: Option<String>,
    out_dir: Option<PathBuf>,
    format: Option<String>,
    seed: Option<u64>,
    profile: Option<toml::Table>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub profile: ForecastProfile,
    pub data: DataArgs,
    pub out_dir: Option<PathBuf>,
    pub format: Option<Format>,
}

fn parse_format(s: &str) -> Result<Format> {
    match s {
        "json" => Ok(Format::Json),
        "jsonl" => Ok(Format::Jsonl),
        "csv" => Ok(Format::Csv),
        other => bail!("unknown format {other:?} (expected json, jsonl or csv)"),
    }
}

fn read_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: FileConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(cfg)
}

/// Paths in a config file are relative to the file.
fn rebase(base: &Path, p: Option<PathBuf>) -> Option<PathBuf> {
    p.map(|p| if p.is_relative() { base.join(p) } else { p })
}

fn merge(dst: &mut toml::Table, src: toml::Table) {
    for (k, v) in src {
        match (dst.get_mut(&k), v) {
            (Some(toml::Value::Table(d)), toml::Value::Table(s)) => merge(d, s),
            (_, v) => {
                dst.insert(k, v);
            }
        }
    }
}

pub fn resolve(global: &Global, cli_data: &DataArgs) -> Result<Settings> {
    let file = match &global.config {
        Some(p) => {
            let mut cfg = read_file_config(p)?;
            let base = p.parent().unwrap_or(Path::new("."));
            cfg.data = rebase(base, cfg.data);
            cfg.history = rebase(base, cfg.history);
            cfg.out_dir = rebase(base, cfg.out_dir);
            cfg
        }
        None => FileConfig::default(),
    };

    let facility = cli_data.facility.clone().or(file.facility.clone());
    let preset_name = global.preset.clone().or(file.preset.clone());
    let mut profile = match &preset_name {
        Some(name) => {
            if preset(name).is_none() {
                bail!("unknown preset {name:?} (expected hlcm, hegc, hfb or hrdr)");
            }
            ForecastProfile::for_facility(name)
        }
        None => ForecastProfile::for_facility(facility.as_deref().unwrap_or("unknown")),
    };
    if let Some(facility) = &facility {
        profile.facility = facility.clone();
    }
    if let Some(overrides) = file.profile {
        let mut table = toml::Table::try_from(&profile).context("encoding the base profile")?;
        merge(&mut table, overrides);
        profile = toml::Value::Table(table)
            .try_into()
            .context("invalid [profile] section")?;
    }
    if let Some(seed) = global.seed.or(file.seed) {
        profile.seed = seed;
    }
    profile.validate()?;

    let format = match (global.format, &file.format) {
        (Some(f), _) => Some(f),
        (None, Some(s)) => Some(parse_format(s)?),
        (None, None) => None,
    };
    Ok(Settings {
        profile,
        data: DataArgs {
            data: cli_data.data.clone().or(file.data),
            history: cli_data.history.clone().or(file.history),
            facility,
            age_max: cli_data.age_max.or(file.age_max),
        },
        out_dir: global.out_dir.clone().or(file.out_dir),
        format,
    })
}
