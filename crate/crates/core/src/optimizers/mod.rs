//! Baseline proposal strategies.
//!
//! Every strategy sees only the settings and the scalar objective of past
//! samples and always returns finite settings; range enforcement is left to
//! the environment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::task::{ActuatorBox, MagnetSettings, Sample};

pub mod bo;
pub mod es;
pub mod gp;
pub mod rlo;

pub use bo::{BayesianOptimizer, BoConfig};
pub use es::{EsConfig, ExtremumSeeking};
pub use gp::{GpConfig, GpError, GpModel};

/// Common proposal interface. `history` is never empty when called.
pub trait Optimizer: Send {
    fn name(&self) -> &'static str;

    fn propose(&mut self, history: &[Sample]) -> MagnetSettings;

    /// Number of proposals the episode will ask for.
    fn set_budget(&mut self, _budget: usize) {}

    /// Proposals that had to fall back to a degenerate strategy.
    fn fallback_count(&self) -> usize {
        0
    }
}

/// Keeps the magnets where they were at reset.
#[derive(Debug, Default, Clone)]
pub struct DoNothing;

impl Optimizer for DoNothing {
    fn name(&self) -> &'static str {
        "do-nothing"
    }

    fn propose(&mut self, history: &[Sample]) -> MagnetSettings {
        history[0].settings
    }
}

/// Uniform samples from the actuator box.
#[derive(Debug, Clone)]
pub struct RandomSearch {
    actuators: ActuatorBox,
    rng: ChaCha8Rng,
}

impl RandomSearch {
    pub fn new(seed: u64) -> Self {
        Self {
            actuators: ActuatorBox::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Optimizer for RandomSearch {
    fn name(&self) -> &'static str {
        "random"
    }

    fn propose(&mut self, _history: &[Sample]) -> MagnetSettings {
        self.actuators.sample_uniform(&mut self.rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Bo,
    Es,
    Random,
    DoNothing,
}

impl BaselineKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Bo => "bo",
            Self::Es => "es",
            Self::Random => "random",
            Self::DoNothing => "do-nothing",
        }
    }
}

/// Hyperparameters of all baselines, as read from the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub bo: BoConfig,
    pub es: EsConfig,
}

pub fn build(kind: BaselineKind, config: &BaselineConfig, seed: u64) -> Box<dyn Optimizer> {
    match kind {
        BaselineKind::Bo => Box::new(BayesianOptimizer::new(config.bo.clone(), seed)),
        BaselineKind::Es => Box::new(ExtremumSeeking::new(config.es.clone())),
        BaselineKind::Random => Box::new(RandomSearch::new(seed)),
        BaselineKind::DoNothing => Box::new(DoNothing),
    }
}
