//! Fixtures shared by the benchmarks in `benches/`.

use chrono::NaiveDate;
use peakcast::backtest::{generate_synthetic_season, synthetic_corpus_params};
use peakcast::{DailySeries, SirConstants, SirParams};

pub fn day(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

pub fn reference_params() -> SirParams {
    synthetic_corpus_params()[0]
}

/// Noisy synthetic seasons for 2015 onwards.
pub fn seasons(n: usize) -> Vec<DailySeries> {
    let sets = synthetic_corpus_params();
    (0..n)
        .map(|k| {
            generate_synthetic_season(
                &sets[k % sets.len()],
                &SirConstants::default(),
                2015 + k as i32,
                0.05,
                k as u64,
                "bench",
            )
            .expect("valid parameters")
            .0
        })
        .collect()
}
