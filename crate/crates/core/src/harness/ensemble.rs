use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::Engine;
use super::schedule::Schedule;
use super::trajectory::{run_trial, Trajectory};
use crate::analysis::rate_bound_strong;
use crate::error::{Error, Result};

/// Per-update statistics across trials that share one initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub trials: usize,
    pub block_count: usize,
    pub gap0: f64,
    /// Mean gap at `n = 0..=N`.
    pub mean_gap: Vec<f64>,
    /// Standard error of the mean; zero for a single trial.
    pub stderr: Vec<f64>,
    /// `(1 − λ*/K)ⁿ · gap₀`, present once attached.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_star: Option<f64>,
    /// `gaps[t][n]` for trial `t`.
    #[serde(skip)]
    pub gaps: Vec<Vec<f64>>,
    /// Per-trial running `R`.
    #[serde(skip)]
    pub running_r: Vec<Vec<f64>>,
}

impl EnsembleSummary {
    pub fn from_trajectories(trajectories: &[Trajectory], block_count: usize) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::Precondition("ensemble needs at least one trial".into()))?;
        let len = first.records.len();
        if trajectories.iter().any(|t| t.records.len() != len) {
            return Err(Error::Precondition("trajectories differ in length".into()));
        }
        let gap0 = first.initial().gap;
        if trajectories.iter().any(|t| t.initial().gap != gap0) {
            return Err(Error::Precondition("trials do not share an initial state".into()));
        }
        let gaps: Vec<Vec<f64>> = trajectories.iter().map(|t| t.gaps().collect()).collect();
        let running_r = trajectories
            .iter()
            .map(|t| t.records.iter().map(|r| r.running_r).collect())
            .collect();
        let m = gaps.len() as f64;
        let mut mean_gap = Vec::with_capacity(len);
        let mut stderr = Vec::with_capacity(len);
        for n in 0..len {
            let mean = gaps.iter().map(|g| g[n]).sum::<f64>() / m;
            let se = if gaps.len() > 1 {
                let var = gaps.iter().map(|g| (g[n] - mean).powi(2)).sum::<f64>() / (m - 1.0);
                (var / m).sqrt()
            } else {
                0.0
            };
            mean_gap.push(mean);
            stderr.push(se);
        }
        Ok(Self {
            trials: gaps.len(),
            block_count,
            gap0,
            mean_gap,
            stderr,
            envelope: None,
            lambda_star: None,
            gaps,
            running_r,
        })
    }

    /// Number of updates per trial.
    pub fn updates(&self) -> usize {
        self.mean_gap.len() - 1
    }

    /// Attaches the strong-convexity envelope for `λ*`.
    pub fn with_strong_envelope(mut self, lambda_star: f64) -> Result<Self> {
        let envelope = (0..self.mean_gap.len())
            .map(|n| rate_bound_strong(n as u64, self.block_count, lambda_star, self.gap0))
            .collect::<Result<Vec<_>>>()?;
        self.envelope = Some(envelope);
        self.lambda_star = Some(lambda_star);
        Ok(self)
    }

    /// Fraction of trials whose gap at `n` is at least `eps`.
    pub fn fraction_at_least(&self, n: usize, eps: f64) -> f64 {
        let hits = self.gaps.iter().filter(|g| g[n] >= eps).count();
        hits as f64 / self.trials as f64
    }
}

/// Trajectories together with their summary.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub trajectories: Vec<Trajectory>,
    pub summary: EnsembleSummary,
}

/// Runs `trials` trials from `init`, trial `t` using `schedule` reseeded with
/// `seed_base + t`. Results are ordered by trial whatever the thread timing.
pub fn monte_carlo<E: Engine>(
    engine: &E,
    init: &E::State,
    schedule: &Schedule,
    seed_base: u64,
    trials: usize,
    n_updates: u64,
) -> Result<Ensemble> {
    if trials == 0 {
        return Err(Error::Precondition("trials must be at least 1".into()));
    }
    let trajectories = (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = schedule.reseeded(seed_base.wrapping_add(t as u64));
            run_trial(engine, init, &s, n_updates)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = EnsembleSummary::from_trajectories(&trajectories, engine.block_count())?;
    Ok(Ensemble {
        trajectories,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianProduct;
    use crate::harness::GaussianEngine;
    use crate::potential::{BlockStructure, Potential};
    use nalgebra::{dmatrix, dvector};

    fn setup() -> (GaussianEngine, GaussianProduct) {
        let blocks = BlockStructure::scalar(3).unwrap();
        let q = dmatrix![1.0, 0.4, 0.2; 0.4, 1.0, 0.3; 0.2, 0.3, 1.0];
        let pot = Potential::quadratic(q, dvector![0.5, 0.0, -0.5]).unwrap();
        let init = GaussianProduct::from_diagonal(&blocks, &[2.0, -1.0, 1.0], &[1.0; 3]).unwrap();
        (GaussianEngine::new(pot, blocks).unwrap(), init)
    }

    #[test]
    fn single_trial_summary_is_the_trajectory() {
        let (engine, init) = setup();
        let s = Schedule::Random { seed: 0 };
        let e = monte_carlo(&engine, &init, &s, 5, 1, 30).unwrap();
        let t = run_trial(&engine, &init, &s.reseeded(5), 30).unwrap();
        assert_eq!(e.summary.mean_gap, t.gaps().collect::<Vec<_>>());
        assert!(e.summary.stderr.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_monotone_mean() {
        let (engine, init) = setup();
        let s = Schedule::Random { seed: 0 };
        let a = monte_carlo(&engine, &init, &s, 100, 64, 50).unwrap();
        let b = monte_carlo(&engine, &init, &s, 100, 64, 50).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.trajectories, b.trajectories);
        assert!(a.summary.mean_gap.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn stderr_scales_with_trials() {
        let (engine, init) = setup();
        let s = Schedule::Random { seed: 0 };
        let small = monte_carlo(&engine, &init, &s, 0, 2000, 6).unwrap().summary;
        let large = monte_carlo(&engine, &init, &s, 1_000_000, 8000, 6).unwrap().summary;
        for n in 2..=6 {
            let ratio = small.stderr[n] / large.stderr[n];
            assert!((1.8..=2.2).contains(&ratio), "n = {n}: ratio {ratio}");
        }
    }

    #[test]
    fn envelope_starts_at_gap0() {
        let (engine, init) = setup();
        let e = monte_carlo(&engine, &init, &Schedule::Cyclic, 0, 2, 5).unwrap();
        let s = e.summary.with_strong_envelope(0.4).unwrap();
        assert_eq!(s.envelope.as_ref().unwrap()[0], s.gap0);
        assert_eq!(s.mean_gap[0], s.gap0);
    }
}
