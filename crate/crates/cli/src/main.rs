mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Forecast the date and size of seasonal admission peaks.
#[derive(Debug, Parser)]
#[command(name = "peakcast", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Facility preset for the loss weights (hlcm, hegc, hfb, hrdr).
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Jsonl,
    Csv,
}

#[derive(Debug, Args, Clone, Default)]
pub struct DataArgs {
    /// Admission records (`date,facility,age,count` or `date,count`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Past seasons: a record file or a directory of them.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Keep only rows of this facility.
    #[arg(long)]
    pub facility: Option<String>,
    /// Keep only rows with `age <= AGE_MAX`.
    #[arg(long)]
    pub age_max: Option<u32>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Forecast as of one day.
    Forecast {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        as_of: NaiveDate,
    },
    /// Leave-one-year-out replay of past seasons.
    Backtest {
        #[command(flatten)]
        data: DataArgs,
        /// Seasons to replay (default: every year in the data).
        #[arg(long, value_delimiter = ',')]
        year: Vec<i32>,
        /// Days to keep forecasting after the true peak.
        #[arg(long, default_value_t = 7)]
        days_after_peak: i64,
    },
    /// Backtest one season for each λ on a grid.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        year: i32,
        #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.9, 0.99, 0.998, 0.9991])]
        lambda: Vec<f64>,
        /// Magnitude penalty (default: from the profile).
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = 7)]
        days_after_peak: i64,
    },
    /// Write a noisy synthetic season in the record format.
    Synth {
        #[command(flatten)]
        theta: ThetaArgs,
        #[arg(long, default_value_t = 2023)]
        year: i32,
        /// Consecutive seasons to write, one per built-in parameter set.
        #[arg(long, default_value_t = 1)]
        seasons: usize,
        /// Noise standard deviation as a fraction of the peak.
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value = "synthetic")]
        facility: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the SIR model and print `date,s,i,r,h_sir`.
    Simulate {
        #[command(flatten)]
        theta: ThetaArgs,
        #[arg(long)]
        from: NaiveDate,
        #[arg(long)]
        to: NaiveDate,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Smooth a record file and print `date,h,dh,d2h`.
    Smooth {
        #[command(flatten)]
        data: DataArgs,
        /// Reflect the series at its ends (retrospective use only).
        #[arg(long)]
        mirror: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args, Clone)]
pub struct ThetaArgs {
    /// Explicit `b0,b1,phi,alpha,i0,r0`.
    #[arg(long, value_delimiter = ',', conflicts_with = "set")]
    pub params: Option<Vec<f64>>,
    /// Index of a built-in parameter set (0 to 5).
    #[arg(long, default_value_t = 0)]
    pub set: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
