#![allow(dead_code)]

use peakcast::backtest::{generate_synthetic_season, synthetic_corpus_params};
use peakcast::ensemble::build_history;
use peakcast::{DailySeries, ForecastProfile, SeasonHistory, SeasonTruth, SirConstants};

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Least-squares polynomial through `values[i-half..=i+half]` in raw day
/// offsets; returns value, slope and curvature at the centre.
pub fn window_fit(values: &[f64], i: usize, half: usize, order: usize) -> [f64; 3] {
    let m = order + 1;
    let mut ata = vec![vec![0.0; m]; m];
    let mut aty = vec![0.0; m];
    for j in i - half..=i + half {
        let u = j as f64 - i as f64;
        let pows: Vec<f64> = (0..m).map(|k| u.powi(k as i32)).collect();
        for r in 0..m {
            aty[r] += pows[r] * values[j];
            for c in 0..m {
                ata[r][c] += pows[r] * pows[c];
            }
        }
    }
    let c = solve(ata, aty);
    [c[0], c[1], 2.0 * c.get(2).copied().unwrap_or(0.0)]
}

pub struct Corpus {
    pub seasons: Vec<DailySeries>,
    pub truths: Vec<SeasonTruth>,
    pub hist: SeasonHistory,
}

/// Six noisy synthetic seasons, 2015 to 2020, and the history built from them.
pub fn synthetic_corpus() -> Corpus {
    let c = SirConstants::default();
    let (seasons, truths): (Vec<_>, Vec<_>) = synthetic_corpus_params()
        .iter()
        .enumerate()
        .map(|(k, th)| generate_synthetic_season(th, &c, 2015 + k as i32, 0.05, 100 + k as u64, "synth").unwrap())
        .unzip();
    let hist = build_history(&seasons, &ForecastProfile::default()).unwrap();
    Corpus { seasons, truths, hist }
}
