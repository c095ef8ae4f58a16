//! Parallel Monte Carlo estimate of the crossing probability.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrialConfig;
use super::trial::{run_trial_indexed, Outcome, TrialResult};
use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    // Clamp so rounding never leaves p outside its own interval.
    (
        (center - half).max(0.0).min(p),
        (center + half).min(1.0).max(p),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub trials: u64,
    pub crossings: u64,
    pub p_hat: f64,
    pub wilson_ci_95: (f64, f64),
    pub outcomes: BTreeMap<String, u64>,
    pub max_steps_hits: u64,
    pub mean_steps: f64,
    pub config: TrialConfig,
}

impl MonteCarloReport {
    pub fn from_results(config: &TrialConfig, results: &[TrialResult]) -> Self {
        let mut outcomes: BTreeMap<String, u64> = Outcome::ALL
            .iter()
            .map(|o| (o.label().to_string(), 0))
            .collect();
        for r in results {
            *outcomes
                .get_mut(r.outcome.label())
                .expect("all outcomes present") += 1;
        }
        let trials = results.len() as u64;
        let crossings = outcomes[Outcome::Crossed.label()];
        let p_hat = if trials == 0 {
            0.0
        } else {
            crossings as f64 / trials as f64
        };
        let mean_steps =
            results.iter().map(|r| r.steps_run as f64).sum::<f64>() / trials.max(1) as f64;
        MonteCarloReport {
            trials,
            crossings,
            p_hat,
            wilson_ci_95: wilson_interval(crossings, trials, Z95),
            max_steps_hits: outcomes[Outcome::MaxStepsNoCross.label()],
            outcomes,
            mean_steps,
            config: config.clone(),
        }
    }

    pub fn count(&self, o: Outcome) -> u64 {
        self.outcomes.get(o.label()).copied().unwrap_or(0)
    }
}

/// Runs every trial index in `0..trials` and keeps results in index order.
/// `threads = 0` uses the default pool size.
pub fn run_trials(cfg: &TrialConfig, trials: u64, threads: usize) -> Result<Vec<TrialResult>> {
    if trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|i| run_trial_indexed(cfg, i))
            .collect()
    })
}

pub fn monte_carlo(cfg: &TrialConfig, trials: u64, threads: usize) -> Result<MonteCarloReport> {
    let results = run_trials(cfg, trials, threads)?;
    Ok(MonteCarloReport::from_results(cfg, &results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wilson_contains_estimate() {
        for (k, n) in [(0, 10), (3, 10), (10, 10), (361, 1000)] {
            let (lo, hi) = wilson_interval(k, n, Z95);
            let p = k as f64 / n as f64;
            assert!(lo <= p && p <= hi, "{k}/{n}: {lo} {hi}");
        }
        // Textbook value for 0 of 10.
        assert!((wilson_interval(0, 10, Z95).1 - 0.277_532).abs() < 1e-5);
    }

    #[test]
    fn wilson_coverage_on_bernoulli_stub() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut covered = 0;
        for _ in 0..1000 {
            let k = (0..200).filter(|_| rng.random::<f64>() < 0.3).count() as u64;
            let (lo, hi) = wilson_interval(k, 200, Z95);
            covered += u32::from(lo <= 0.3 && 0.3 <= hi);
        }
        assert!((930..=970).contains(&covered), "coverage {covered}");
    }

    #[test]
    fn single_trial_is_bernoulli() {
        let mut cfg = TrialConfig::new(4, 5);
        cfg.max_steps = Some(2000);
        let r = monte_carlo(&cfg, 1, 1).unwrap();
        assert!(r.p_hat == 0.0 || r.p_hat == 1.0);
        assert_eq!(r.outcomes.values().sum::<u64>(), 1);
    }

    #[test]
    fn thread_count_does_not_change_report() {
        let mut cfg = TrialConfig::new(6, 77);
        cfg.max_steps = Some(5000);
        let a = monte_carlo(&cfg, 12, 1).unwrap();
        let b = monte_carlo(&cfg, 12, 4).unwrap();
        assert_eq!(a, b);
    }
}
