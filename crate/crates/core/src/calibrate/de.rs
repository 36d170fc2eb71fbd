//! Differential evolution, rand/1/bin with per-generation dithering.
//!
//! Trial vectors for a generation are built serially from one seeded
//! stream before any of them is scored, so the objective may be evaluated
//! in parallel without changing the result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeConfig {
    pub population_size: usize,
    /// `F` is drawn uniformly from this range once per generation.
    pub mutation: (f64, f64),
    pub crossover_prob: f64,
    pub max_generations: usize,
    /// Stop when `(max - min) / (|mean| + 1e-12)` of population losses
    /// drops below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            population_size: 15 * 6,
            mutation: (0.5, 1.0),
            crossover_prob: 0.7,
            max_generations: 300,
            tolerance: 1e-6,
            seed: 42,
        }
    }
}

impl DeConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.mutation;
        if self.population_size < 4 {
            return Err(Error::Config("population needs at least 4 members".into()));
        }
        if !(self.crossover_prob > 0.0 && self.crossover_prob <= 1.0) {
            return Err(Error::Config(format!(
                "crossover probability must be in (0, 1], got {}",
                self.crossover_prob
            )));
        }
        if !(lo > 0.0 && lo <= hi && hi < 2.0) {
            return Err(Error::Config(format!(
                "mutation range must lie in (0, 2), got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeOutcome {
    pub best: Vec<f64>,
    pub best_value: f64,
    pub generations: usize,
    pub converged: bool,
    /// Best population loss after initialisation and after each generation.
    pub best_history: Vec<f64>,
}

fn spread_converged(fitness: &[f64], tolerance: f64) -> bool {
    if fitness.iter().any(|f| !f.is_finite()) {
        return false;
    }
    let (min, max) = fitness
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &f| (a.min(f), b.max(f)));
    let mean = fitness.iter().sum::<f64>() / fitness.len() as f64;
    (max - min) / (mean.abs() + 1e-12) < tolerance
}

fn best_index(fitness: &[f64]) -> usize {
    let mut best = 0;
    for (k, f) in fitness.iter().enumerate() {
        if *f < fitness[best] {
            best = k;
        }
    }
    best
}

/// Minimises `objective` over the box `bounds`.
///
/// The objective must be total: failures should map to `f64::INFINITY`,
/// which greedy selection never prefers over a finite loss. NaN is treated
/// as infinity.
pub fn differential_evolution<F>(objective: F, bounds: &[(f64, f64)], cfg: &DeConfig) -> Result<DeOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    differential_evolution_bounded(|x, _| objective(x), bounds, cfg)
}

/// Like [`differential_evolution`], but each trial is scored together with
/// the loss of the member it competes against.
///
/// The objective may stop early and return any value above that loss once
/// it knows the trial will lose, which leaves the search path unchanged.
pub fn differential_evolution_bounded<F>(objective: F, bounds: &[(f64, f64)], cfg: &DeConfig) -> Result<DeOutcome>
where
    F: Fn(&[f64], f64) -> f64 + Sync,
{
    cfg.validate()?;
    if bounds.is_empty() {
        return Err(Error::Config("no dimensions to optimise".into()));
    }
    if let Some((lo, hi)) = bounds
        .iter()
        .find(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi))
    {
        return Err(Error::Config(format!("invalid bound ({lo}, {hi})")));
    }
    let dim = bounds.len();
    let np = cfg.population_size;
    let score = |x: &Vec<f64>, bound: f64| {
        let v = objective(x, bound);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut population: Vec<Vec<f64>> = (0..np)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| lo + rng.gen::<f64>() * (hi - lo))
                .collect()
        })
        .collect();
    let mut fitness: Vec<f64> = population.par_iter().map(|x| score(x, f64::INFINITY)).collect();
    let mut best_history = vec![fitness[best_index(&fitness)]];

    let mut generations = 0;
    let mut converged = spread_converged(&fitness, cfg.tolerance);
    while !converged && generations < cfg.max_generations {
        let f = rng.gen_range(cfg.mutation.0..=cfg.mutation.1);
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|target| {
                let mut pick = |taken: &[usize]| loop {
                    let k = rng.gen_range(0..np);
                    if k != target && !taken.contains(&k) {
                        break k;
                    }
                };
                let a = pick(&[]);
                let b = pick(&[a]);
                let c = pick(&[a, b]);
                let forced = rng.gen_range(0..dim);
                (0..dim)
                    .map(|j| {
                        let cross = rng.gen::<f64>() < cfg.crossover_prob;
                        if cross || j == forced {
                            let (lo, hi) = bounds[j];
                            let v = population[a][j] + f * (population[b][j] - population[c][j]);
                            v.clamp(lo, hi)
                        } else {
                            population[target][j]
                        }
                    })
                    .collect()
            })
            .collect();

        let trial_fitness: Vec<f64> = trials
            .par_iter()
            .zip(fitness.par_iter())
            .map(|(x, &bound)| score(x, bound))
            .collect();
        for (k, (x, fx)) in trials.into_iter().zip(trial_fitness).enumerate() {
            if fx <= fitness[k] {
                population[k] = x;
                fitness[k] = fx;
            }
        }
        generations += 1;
        best_history.push(fitness[best_index(&fitness)]);
        converged = spread_converged(&fitness, cfg.tolerance);
    }

    let b = best_index(&fitness);
    Ok(DeOutcome {
        best: population[b].clone(),
        best_value: fitness[b],
        generations,
        converged,
        best_history,
    })
}

/// Mixes a base seed with identifying parts (splitmix64 finaliser), so work
/// units get independent, schedule-free streams.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    parts
        .iter()
        .fold(mix(base.wrapping_add(0x9e37_79b9_7f4a_7c15)), |acc, &p| {
            mix(acc ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15))
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn rejects_bad_config() {
        let bounds = [(-1.0, 1.0)];
        let small = DeConfig {
            population_size: 3,
            ..Default::default()
        };
        assert!(differential_evolution(sphere, &bounds, &small).is_err());
        let bad_cr = DeConfig {
            crossover_prob: 0.0,
            ..Default::default()
        };
        assert!(differential_evolution(sphere, &bounds, &bad_cr).is_err());
        assert!(differential_evolution(sphere, &[(1.0, -1.0)], &DeConfig::default()).is_err());
    }

    #[test]
    fn best_history_never_increases() {
        let out = differential_evolution(
            sphere,
            &[(-5.0, 5.0); 3],
            &DeConfig {
                max_generations: 50,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(out.best_history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(out.best_history.len(), out.generations + 1);
    }

    #[test]
    fn flat_objective_converges_immediately() {
        let out = differential_evolution(|_| 3.0, &[(0.0, 1.0); 2], &DeConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.generations, 0);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &[2]), derive_seed(1, &[3]));
        assert_ne!(derive_seed(1, &[2]), derive_seed(2, &[2]));
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
    }
}
