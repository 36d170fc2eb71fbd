//! Day-number helpers shared by the forecasting modules.

use chrono::{Datelike, Days, NaiveDate};

/// Signed number of days from `from` to `to`.
pub fn days_between(from: NaiveDate, to: NaiveDate) -> i64 {
    (to - from).num_days()
}

/// `date + n` days, `n` may be negative.
pub fn add_days(date: NaiveDate, n: i64) -> NaiveDate {
    if n >= 0 {
        date.checked_add_days(Days::new(n as u64))
    } else {
        date.checked_sub_days(Days::new(n.unsigned_abs()))
    }
    .expect("date arithmetic out of range")
}

/// Continuous day number (days since 0001-01-01) used for convex combinations.
pub fn day_number(date: NaiveDate) -> f64 {
    date.num_days_from_ce() as f64
}

/// Inverse of [`day_number`] with round-half-to-even on fractional inputs.
pub fn from_day_number(x: f64) -> NaiveDate {
    let n = x.round_ties_even() as i32;
    NaiveDate::from_num_days_from_ce_opt(n).expect("day number out of range")
}

pub fn jan_first(year: i32) -> NaiveDate {
    NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year")
}
