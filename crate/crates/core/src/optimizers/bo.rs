//! Bayesian optimisation baseline: GP surrogate plus expected improvement.
//!
//! The first `n_init - 1` proposals (the reset sample counts towards
//! `n_init`) come from an Owen-scrambled Sobol design over the actuator box.
//! After that every proposal maximizes EI over `n_candidates` scrambled Sobol
//! points plus `n_local` Gaussian perturbations of the best samples so far,
//! polishing the best `n_refine` of them with a bounded pattern search.
//!
//! When the budget is known, the last proposal returns the best settings
//! observed instead of another exploratory point.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::task::{ActuatorBox, MagnetSettings, Sample};

use super::gp::{GpConfig, GpModel, DIM};
use super::Optimizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    Identity,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoConfig {
    pub n_init: usize,
    pub n_candidates: usize,
    /// Candidates drawn around the best observed points.
    pub n_local: usize,
    /// Standard deviation of those draws, normalized units.
    pub local_scale: f64,
    pub n_refine: usize,
    pub refine_iterations: usize,
    /// Return the best observed settings on the final step of a known budget.
    pub recommend_last: bool,
    /// Exploration margin subtracted from the incumbent, standardized units.
    pub xi: f64,
    pub transform: TargetTransform,
    pub gp: GpConfig,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            n_init: 5,
            n_candidates: 4096,
            n_local: 512,
            local_scale: 0.1,
            n_refine: 8,
            refine_iterations: 60,
            recommend_last: true,
            xi: 0.0,
            transform: TargetTransform::Identity,
            gp: GpConfig::default(),
        }
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// EI for minimization, all quantities in standardized units.
pub fn expected_improvement(model: &GpModel, x: &[f64; DIM], best: f64, xi: f64) -> f64 {
    let (mean, var) = model.predict_standardized(x);
    let sd = var.sqrt();
    let gap = best - xi - mean;
    if sd < 1e-12 {
        return gap.max(0.0);
    }
    let z = gap / sd;
    (gap * normal_cdf(z) + sd * normal_pdf(z)).max(0.0)
}

/// Point `index` of a scrambled Sobol sequence mapped to `[-1, 1]^5`.
pub fn sobol_point(index: u32, seed: u32) -> [f64; DIM] {
    let mut p = [0.0; DIM];
    for (d, v) in p.iter_mut().enumerate() {
        *v = 2.0 * sobol_burley::sample(index, d as u32, seed) as f64 - 1.0;
    }
    p
}

fn fold_seed(seed: u64) -> u32 {
    (seed ^ (seed >> 32)) as u32
}

#[derive(Debug, Clone)]
pub struct BayesianOptimizer {
    config: BoConfig,
    seed: u64,
    actuators: ActuatorBox,
    fallback_rng: ChaCha8Rng,
    fallbacks: usize,
    budget: Option<usize>,
}

impl BayesianOptimizer {
    pub fn new(config: BoConfig, seed: u64) -> Self {
        Self {
            config,
            seed,
            actuators: ActuatorBox::default(),
            fallback_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995),
            fallbacks: 0,
            budget: None,
        }
    }

    /// Number of proposals that fell back to random sampling because the
    /// surrogate could not be fitted.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    fn transform(&self, y: f64) -> f64 {
        match self.config.transform {
            TargetTransform::Identity => y,
            TargetTransform::Log => (y + 1e-6).ln(),
        }
    }

    pub fn fit(&self, history: &[Sample]) -> Result<GpModel, super::GpError> {
        let x: Vec<[f64; DIM]> = history.iter().map(|s| self.actuators.normalize(&s.settings)).collect();
        let y: Vec<f64> = history.iter().map(|s| self.transform(s.objective)).collect();
        GpModel::fit(&x, &y, &self.config.gp)
    }

    /// Best standardized objective seen so far.
    pub fn incumbent(&self, model: &GpModel, history: &[Sample]) -> f64 {
        history
            .iter()
            .map(|s| model.standardize(self.transform(s.objective)))
            .fold(f64::INFINITY, f64::min)
    }

    fn refine(&self, model: &GpModel, best: f64, start: [f64; DIM], start_value: f64) -> ([f64; DIM], f64) {
        let (mut x, mut value) = (start, start_value);
        let mut step = 0.1;
        for _ in 0..self.config.refine_iterations {
            let mut improved = false;
            for d in 0..DIM {
                for dir in [1.0, -1.0] {
                    let mut trial = x;
                    trial[d] = (trial[d] + dir * step).clamp(-1.0, 1.0);
                    let v = expected_improvement(model, &trial, best, self.config.xi);
                    if v > value {
                        x = trial;
                        value = v;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
                if step < 1e-3 {
                    break;
                }
            }
        }
        (x, value)
    }

    fn local_candidates(&self, history: &[Sample], seed: u64) -> Vec<[f64; DIM]> {
        if self.config.n_local == 0 || self.config.local_scale <= 0.0 {
            return Vec::new();
        }
        let mut order: Vec<&Sample> = history.iter().collect();
        order.sort_by(|a, b| a.objective.total_cmp(&b.objective));
        let centres: Vec<[f64; DIM]> = order
            .iter()
            .take(3)
            .map(|s| self.actuators.normalize(&s.settings))
            .collect();
        let normal = Normal::new(0.0, self.config.local_scale).expect("positive scale");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.config.n_local)
            .map(|i| {
                let mut p = centres[i % centres.len()];
                for v in p.iter_mut() {
                    *v = (*v + normal.sample(&mut rng)).clamp(-1.0, 1.0);
                }
                p
            })
            .collect()
    }

    fn maximize_ei(&self, model: &GpModel, history: &[Sample]) -> [f64; DIM] {
        let best = self.incumbent(model, history);
        let stream = self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ history.len() as u64;
        let seed = fold_seed(stream);
        let mut scored: Vec<([f64; DIM], f64)> = (0..self.config.n_candidates as u32)
            .map(|i| sobol_point(i, seed))
            .chain(self.local_candidates(history, stream))
            .map(|p| (p, expected_improvement(model, &p, best, self.config.xi)))
            .collect();
        // Stable sort keeps the candidate order as a deterministic tie-break.
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored
            .iter()
            .take(self.config.n_refine.max(1))
            .map(|(p, v)| self.refine(model, best, *p, *v))
            .fold(None, |acc: Option<([f64; DIM], f64)>, cand| match acc {
                Some(a) if a.1 >= cand.1 => Some(a),
                _ => Some(cand),
            })
            .map(|(p, _)| p)
            .unwrap_or_else(|| sobol_point(0, seed))
    }
}

impl Optimizer for BayesianOptimizer {
    fn name(&self) -> &'static str {
        "bo"
    }

    fn set_budget(&mut self, budget: usize) {
        self.budget = Some(budget);
    }

    fn propose(&mut self, history: &[Sample]) -> MagnetSettings {
        if self.config.recommend_last && self.budget == Some(history.len()) {
            return history
                .iter()
                .min_by(|a, b| a.objective.total_cmp(&b.objective))
                .expect("history is never empty")
                .settings;
        }
        if history.len() < self.config.n_init {
            let index = history.len().saturating_sub(1) as u32;
            let p = sobol_point(index, fold_seed(self.seed));
            return self.actuators.denormalize(&p);
        }
        match self.fit(history) {
            Ok(model) => {
                let p = self.maximize_ei(&model, history);
                self.actuators.denormalize(&p)
            }
            Err(_) => {
                self.fallbacks += 1;
                self.actuators.sample_uniform(&mut self.fallback_rng)
            }
        }
    }

    fn fallback_count(&self) -> usize {
        self.fallbacks
    }
}
