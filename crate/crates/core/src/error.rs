use chrono::NaiveDate;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("empty series: {0}")]
    EmptySeries(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical blowup at step {step} (t = {time_years:.6} y): state left the unit simplex")]
    NumericalBlowup { step: usize, time_years: f64 },

    #[error("history is empty: no past season produced a confirmed acceleration alert")]
    HistoryEmpty,

    #[error("history contains the season under test ({0})")]
    LeakedSeason(i32),

    #[error("date {0} is outside the series")]
    DateOutOfRange(NaiveDate),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
