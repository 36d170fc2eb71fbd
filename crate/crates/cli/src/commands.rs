use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{Datelike, NaiveDate};
use log::info;
use peakcast::alerts::replay_alerts;
use peakcast::backtest::{
    anticipation_csv, anticipation_table, generate_synthetic_season, grid_search_lambda, lambda_sweep_csv,
    leave_one_out, report_csv, synthetic_corpus_params, true_peak,
};
use peakcast::dates::add_days;
use peakcast::ensemble::{build_history, run_day};
use peakcast::sir::integrate;
use peakcast::timeseries::{ensemble_smooth, load_records, LoadOptions};
use peakcast::{
    AlertKind, DailyForecast, DailySeries, EdgePolicy, ForecastProfile, ForecastRecord, SeasonHistory, SirParams,
};
use serde::Serialize;

use crate::settings::{resolve, Settings};
use crate::{Cli, Command, DataArgs, Format, ThetaArgs};

/// Exit code when no peak prediction is available yet.
const NO_PREDICTION: u8 = 2;

pub fn run(cli: Cli) -> Result<ExitCode> {
    let empty = DataArgs::default();
    let data_args = match &cli.command {
        Command::Forecast { data, .. }
        | Command::Backtest { data, .. }
        | Command::Sweep { data, .. }
        | Command::Smooth { data, .. } => data,
        Command::Synth { .. } | Command::Simulate { .. } => &empty,
    };
    let s = resolve(&cli.global, data_args)?;
    match cli.command {
        Command::Forecast { as_of, .. } => forecast(&s, as_of),
        Command::Backtest {
            year, days_after_peak, ..
        } => backtest(&s, &year, days_after_peak),
        Command::Sweep {
            year,
            lambda,
            rho,
            days_after_peak,
            ..
        } => sweep(&s, year, &lambda, rho, days_after_peak),
        Command::Synth {
            theta,
            year,
            seasons,
            noise,
            facility,
            out,
        } => synth(&s, &theta, year, seasons, noise, &facility, out.as_deref()),
        Command::Simulate {
            theta,
            from,
            to,
            step,
            out,
        } => simulate(&s, &theta, from, to, step, out.as_deref()),
        Command::Smooth { mirror, out, .. } => smooth(&s, mirror, out.as_deref()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => Ok(r?),
            }
        }
    }
}

fn out_path(s: &Settings, name: &str) -> PathBuf {
    s.out_dir.clone().unwrap_or_else(|| PathBuf::from(".")).join(name)
}

fn load_options(s: &Settings) -> LoadOptions {
    LoadOptions {
        facility: s.data.facility.clone(),
        age_max: s.data.age_max,
        excluded_years: BTreeSet::new(),
    }
}

fn load_data(s: &Settings) -> Result<DailySeries> {
    let path = s
        .data
        .data
        .as_ref()
        .ok_or_else(|| anyhow!("no data file given (use --data)"))?;
    load_records(path, &load_options(s)).with_context(|| format!("loading {}", path.display()))
}

fn history_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.exists() {
        bail!("history path {} does not exist", path.display());
    }
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")));
    files.sort();
    if files.is_empty() {
        bail!("history directory {} holds no .csv files", path.display());
    }
    Ok(files)
}

/// Past seasons from `--history`, or from the data file itself.
fn past_seasons(s: &Settings, data: &DailySeries, exclude: &BTreeSet<i32>) -> Result<Vec<DailySeries>> {
    let mut seasons = Vec::new();
    match &s.data.history {
        Some(path) => {
            for file in history_files(path)? {
                let series =
                    load_records(&file, &load_options(s)).with_context(|| format!("loading {}", file.display()))?;
                seasons.extend(series.split_by_year(exclude));
            }
        }
        None => seasons.extend(data.split_by_year(exclude)),
    }
    Ok(seasons)
}

fn history(s: &Settings, seasons: &[DailySeries]) -> Result<SeasonHistory> {
    let hist = build_history(seasons, &s.profile)?;
    info!("history years: {:?}", hist.years().collect::<Vec<_>>());
    Ok(hist)
}

fn season_of(data: &DailySeries, year: i32) -> Result<DailySeries> {
    data.split_by_year(&BTreeSet::new())
        .into_iter()
        .find(|x| x.start().year() == year)
        .ok_or_else(|| anyhow!("data has no rows in {year}"))
}

#[derive(Serialize)]
struct AlertLine<'a> {
    facility: &'a str,
    alert: &'static str,
    date: NaiveDate,
    confirmed_at: NaiveDate,
}

fn alert_lines(facility: &str, events: impl IntoIterator<Item = (AlertKind, NaiveDate, NaiveDate)>) -> String {
    let mut out = String::new();
    for (kind, date, confirmed_at) in events {
        let line = AlertLine {
            facility,
            alert: kind.as_str(),
            date,
            confirmed_at,
        };
        let _ = writeln!(out, "{}", serde_json::to_string(&line).expect("plain struct"));
    }
    out
}

/// Alert events read off a day-by-day forecast stream.
fn stream_alerts(forecasts: &[DailyForecast]) -> Vec<(AlertKind, NaiveDate, NaiveDate)> {
    let mut seen = [false; 3];
    let mut out = Vec::new();
    for f in forecasts {
        let fired = [
            (AlertKind::T0, f.alert.t0),
            (AlertKind::Tmin, f.alert.tmin),
            (AlertKind::T1, f.alert.t1),
        ];
        for (k, (kind, date)) in fired.into_iter().enumerate() {
            if let (Some(date), false) = (date, seen[k]) {
                seen[k] = true;
                out.push((kind, date, f.evaluated_at));
            }
        }
    }
    out
}

/// [`ForecastRecord`] with every column present, for CSV output.
#[derive(Serialize)]
struct ForecastRow {
    date: NaiveDate,
    t0: Option<NaiveDate>,
    tmin: Option<NaiveDate>,
    t1: Option<NaiveDate>,
    t_hat: Option<NaiveDate>,
    t_lo: Option<NaiveDate>,
    t_hi: Option<NaiveDate>,
    h_hat: Option<f64>,
    h_lo: Option<f64>,
    h_hi: Option<f64>,
    t_sir: Option<NaiveDate>,
    t_m: Option<NaiveDate>,
    omega_mobile: Option<f64>,
    h_sir: Option<f64>,
}

impl From<ForecastRecord> for ForecastRow {
    fn from(r: ForecastRecord) -> Self {
        Self {
            date: r.date,
            t0: r.t0,
            tmin: r.tmin,
            t1: r.t1,
            t_hat: r.t_hat,
            t_lo: r.t_lo,
            t_hi: r.t_hi,
            h_hat: r.h_hat,
            h_lo: r.h_lo,
            h_hi: r.h_hi,
            t_sir: r.t_sir,
            t_m: r.t_m,
            omega_mobile: r.omega_mobile,
            h_sir: r.h_sir,
        }
    }
}

fn render_forecasts(forecasts: &[DailyForecast], format: Format) -> Result<String> {
    let records: Vec<ForecastRecord> = forecasts.iter().map(ForecastRecord::from).collect();
    Ok(match format {
        Format::Json => {
            let mut s = if records.len() == 1 {
                serde_json::to_string_pretty(&records[0])?
            } else {
                serde_json::to_string_pretty(&records)?
            };
            s.push('\n');
            s
        }
        Format::Jsonl => {
            let mut s = String::new();
            for r in &records {
                let _ = writeln!(s, "{}", serde_json::to_string(r)?);
            }
            s
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in records {
                w.serialize(ForecastRow::from(r))?;
            }
            String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}"))?)?
        }
    })
}

fn forecast(s: &Settings, as_of: NaiveDate) -> Result<ExitCode> {
    let data = load_data(s)?;
    let year = as_of.year();
    let current = data.truncate_to(as_of)?;
    let past = past_seasons(s, &data, &BTreeSet::from([year]))?;
    let hist = history(s, &past)?;
    let f = run_day(&current, as_of, &hist, &s.profile)?;

    if let Some(dir) = &s.out_dir {
        let cfg = s.profile.alert_config(year, hist.h0())?;
        let timeline = replay_alerts(&current, &s.profile.smoothing, &cfg, as_of)?;
        let events = timeline.events.iter().map(|e| (e.kind, e.date, e.confirmed_at));
        emit(
            Some(&dir.join("alerts.jsonl")),
            &alert_lines(current.facility(), events),
        )?;
    }
    emit(
        None,
        &render_forecasts(std::slice::from_ref(&f), s.format.unwrap_or(Format::Json))?,
    )?;
    Ok(if f.has_prediction() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(NO_PREDICTION)
    })
}

fn monitor_window(profile: &ForecastProfile, season: &DailySeries, days_after_peak: i64) -> (NaiveDate, NaiveDate) {
    let year = season.start().year();
    let from = profile
        .season
        .for_year(year)
        .map(|(a, _)| a.max(season.start()))
        .unwrap_or(season.start());
    let to = true_peak(season, &profile.smoothing)
        .map(|t| add_days(t.true_peak_date, days_after_peak))
        .unwrap_or(season.end());
    (from, to.min(season.end()))
}

fn backtest(s: &Settings, years: &[i32], days_after_peak: i64) -> Result<ExitCode> {
    let data = load_data(s)?;
    let all = data.split_by_year(&BTreeSet::new());
    let targets: Vec<DailySeries> = if years.is_empty() {
        all
    } else {
        years.iter().map(|&y| season_of(&data, y)).collect::<Result<_>>()?
    };
    let hist = history(s, &past_seasons(s, &data, &BTreeSet::new())?)?;
    let reports = leave_one_out(&targets, &hist, &s.profile, |season| {
        monitor_window(&s.profile, season, days_after_peak)
    })?;

    let format = s.format.unwrap_or(Format::Jsonl);
    let ext = match format {
        Format::Json => "json",
        Format::Jsonl => "jsonl",
        Format::Csv => "csv",
    };
    let forecasts: Vec<DailyForecast> = reports.iter().flat_map(|r| r.forecasts.iter().cloned()).collect();
    emit(
        Some(&out_path(s, &format!("forecasts.{ext}"))),
        &render_forecasts(&forecasts, format)?,
    )?;
    emit(Some(&out_path(s, "report.csv")), &report_csv(&reports))?;
    emit(
        Some(&out_path(s, "anticipation.csv")),
        &anticipation_csv(&anticipation_table(&reports)),
    )?;
    let alerts: String = reports
        .iter()
        .map(|r| alert_lines(&r.facility, stream_alerts(&r.forecasts)))
        .collect();
    emit(Some(&out_path(s, "alerts.jsonl")), &alerts)?;
    for r in &reports {
        info!("{} {}: {:?}", r.facility, r.year, r.metrics);
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(s: &Settings, year: i32, grid: &[f64], rho: Option<f64>, days_after_peak: i64) -> Result<ExitCode> {
    let data = load_data(s)?;
    let season = season_of(&data, year)?;
    let hist = history(s, &past_seasons(s, &data, &BTreeSet::from([year]))?)?;
    let (from, to) = monitor_window(&s.profile, &season, days_after_peak);
    let cells = grid_search_lambda(&season, &hist, grid, rho.unwrap_or(s.profile.rho), &s.profile, from, to)?;
    emit(Some(&out_path(s, "lambda_sweep.csv")), &lambda_sweep_csv(&cells))?;
    Ok(ExitCode::SUCCESS)
}

fn theta_for(t: &ThetaArgs, offset: usize) -> Result<SirParams> {
    let theta = match &t.params {
        Some(p) if p.len() == 6 => SirParams::from_slice(p),
        Some(p) => bail!("--params needs 6 values (b0,b1,phi,alpha,i0,r0), got {}", p.len()),
        None => {
            let sets = synthetic_corpus_params();
            if t.set >= sets.len() {
                bail!("parameter set {} does not exist (0 to {})", t.set, sets.len() - 1);
            }
            sets[(t.set + offset) % sets.len()]
        }
    };
    theta.validate()?;
    Ok(theta)
}

fn synth(
    s: &Settings,
    theta: &ThetaArgs,
    year: i32,
    seasons: usize,
    noise: f64,
    facility: &str,
    out: Option<&Path>,
) -> Result<ExitCode> {
    if seasons == 0 {
        bail!("--seasons must be at least 1");
    }
    let mut text = String::from("date,facility,age,count\n");
    for k in 0..seasons {
        let th = theta_for(theta, k)?;
        let y = year + k as i32;
        let (series, truth) =
            generate_synthetic_season(&th, &s.profile.constants, y, noise, s.profile.seed + k as u64, facility)?;
        info!("{y}: peak {} ({:.2})", truth.true_peak_date, truth.true_peak_magnitude);
        for (date, count) in series.dates().zip(series.counts()) {
            let _ = writeln!(text, "{date},{facility},,{count}");
        }
    }
    emit(out, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn simulate(
    s: &Settings,
    theta: &ThetaArgs,
    from: NaiveDate,
    to: NaiveDate,
    step: f64,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let t = integrate(&theta_for(theta, 0)?, &s.profile.constants, from, to, step)?;
    let mut text = String::from("date,s,i,r,h_sir\n");
    for k in 0..t.len() {
        let _ = writeln!(text, "{},{},{},{},{}", t.date_at(k), t.s[k], t.i[k], t.r[k], t.h_sir[k]);
    }
    emit(out, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn smooth(s: &Settings, mirror: bool, out: Option<&Path>) -> Result<ExitCode> {
    let data = load_data(s)?;
    let edge = if mirror {
        EdgePolicy::Mirror
    } else {
        EdgePolicy::TruncateWindow
    };
    let curve = ensemble_smooth(&data, &s.profile.smoothing.with_edge_policy(edge))?;
    let mut text = String::from("date,h,dh,d2h\n");
    for k in 0..curve.len() {
        let _ = writeln!(
            text,
            "{},{},{},{}",
            curve.date_at(k),
            curve.h[k],
            curve.dh[k],
            curve.d2h[k]
        );
    }
    emit(out, &text)?;
    Ok(ExitCode::SUCCESS)
}
