use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::optics::Geometry;
use crate::task::{Environment, NoiseConfig, Trial};

use super::{compute_metrics, run_episode, Agent, HarnessError, RunMetrics, RunRecord, Termination};

/// Seed of run `run_index` on a trial; serial and parallel execution agree.
pub fn derive_seed(trial_seed: u64, run_index: u64) -> u64 {
    let mut z = trial_seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(run_index.wrapping_add(1).wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs every trial `runs_per_trial` times. `make_agent` receives the trial
/// and the run seed. Records come back in trial-major order.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    trials: &[Trial],
    runs_per_trial: usize,
    budget: usize,
    geometry: &Geometry,
    noise: NoiseConfig,
    workers: usize,
    make_agent: &(dyn Fn(&Trial, u64) -> Box<dyn Agent> + Sync),
) -> Result<Vec<RunRecord>, HarnessError> {
    let jobs: Vec<(usize, usize)> = (0..trials.len())
        .flat_map(|t| (0..runs_per_trial).map(move |r| (t, r)))
        .collect();
    let one = |&(t, r): &(usize, usize)| -> Result<RunRecord, HarnessError> {
        let trial = &trials[t];
        let seed = derive_seed(trial.seed, r as u64);
        let mut env = Environment::new(trial.clone(), geometry, noise, derive_seed(seed, 0x5eed))?;
        let mut agent = make_agent(trial, seed);
        run_episode(&mut env, agent.as_mut(), budget, r, seed)
    };
    if workers <= 1 {
        return jobs.iter().map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    pool.install(|| jobs.par_iter().map(one).collect())
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                sd: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Self {
            mean,
            sd: var.sqrt(),
            n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tiers {
    pub runs: usize,
    pub successes: usize,
    /// Every run succeeded.
    pub outright: bool,
    /// At least two thirds of the runs succeeded.
    pub partial: bool,
    /// Every run of at least one trial succeeded.
    pub single_trial: bool,
}

impl Tiers {
    pub fn best(&self) -> &'static str {
        if self.outright {
            "outright"
        } else if self.partial {
            "partial"
        } else if self.single_trial {
            "single_trial"
        } else {
            "none"
        }
    }
}

/// Success tiers from `(trial id, run success)` pairs.
pub fn tiers<S: AsRef<str>>(outcomes: &[(S, bool)]) -> Tiers {
    let runs = outcomes.len();
    let successes = outcomes.iter().filter(|(_, ok)| *ok).count();
    let mut per_trial: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (id, ok) in outcomes {
        let e = per_trial.entry(id.as_ref()).or_default();
        e.0 += 1;
        e.1 += usize::from(*ok);
    }
    Tiers {
        runs,
        successes,
        outright: runs > 0 && successes == runs,
        partial: runs > 0 && 3 * successes >= 2 * runs,
        single_trial: per_trial.values().any(|(n, ok)| *n > 0 && n == ok),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub trial_id: String,
    pub run_index: usize,
    pub run_seed: u64,
    pub termination: Termination,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub optimizer: String,
    pub uses_model: bool,
    pub budget: usize,
    pub runs: Vec<RunSummary>,
    pub final_beam_difference_um: Stat,
    pub normalized_improvement_pct: Stat,
    pub normalized_integrated_mae_pct: Stat,
    /// Only meaningful for model-driven optimizers.
    pub successful_steps: Option<Stat>,
    /// Runs left out of the normalized means because their initial MAE is zero.
    pub excluded_runs: usize,
    /// Runs whose integrated MAE needed the hold-last-value fill.
    pub filled_runs: usize,
    pub terminations: BTreeMap<String, usize>,
    pub tiers: Tiers,
}

/// Aggregates the records of one optimizer.
pub fn summarize(records: &[RunRecord]) -> SuiteSummary {
    let runs: Vec<RunSummary> = records
        .iter()
        .map(|r| RunSummary {
            trial_id: r.trial_id.clone(),
            run_index: r.run_index,
            run_seed: r.run_seed,
            termination: r.termination,
            metrics: compute_metrics(r),
        })
        .collect();
    let collect =
        |f: &dyn Fn(&RunMetrics) -> Option<f64>| -> Vec<f64> { runs.iter().filter_map(|r| f(&r.metrics)).collect() };
    let improvement = collect(&|m| m.normalized_improvement_pct);
    let integrated = collect(&|m| m.normalized_integrated_mae_pct);
    let uses_model = records.iter().any(|r| r.uses_model);
    let mut terminations = BTreeMap::new();
    for r in &runs {
        *terminations.entry(r.termination.as_str().to_string()).or_insert(0) += 1;
    }
    let outcomes: Vec<(&str, bool)> = runs
        .iter()
        .map(|r| (r.trial_id.as_str(), r.metrics.run_success))
        .collect();
    SuiteSummary {
        optimizer: records.first().map(|r| r.optimizer.clone()).unwrap_or_default(),
        uses_model,
        budget: records.first().map_or(0, |r| r.budget),
        final_beam_difference_um: Stat::of(&collect(&|m| Some(m.final_beam_difference_um))),
        normalized_improvement_pct: Stat::of(&improvement),
        normalized_integrated_mae_pct: Stat::of(&integrated),
        successful_steps: uses_model.then(|| Stat::of(&collect(&|m| Some(m.successful_steps as f64)))),
        excluded_runs: runs.len() - improvement.len(),
        filled_runs: runs.iter().filter(|r| r.metrics.filled_steps > 0).count(),
        terminations,
        tiers: tiers(&outcomes),
        runs,
    }
}
