//! Adapter for a learned optimiser policy supplied by the caller.
//!
//! No policy ships with this crate; anything that maps an observation to a
//! normalized action can be plugged in through [`Policy`].

use crate::task::{ActuatorBox, BeamParameters, MagnetSettings, Sample};

use super::Optimizer;

/// Observation layout: measured beam (4, mm), target beam (4, mm), current
/// normalized settings (5).
pub type Observation = [f64; 13];

pub trait Policy: Send {
    /// Returns the next settings in normalized units, `[-1, 1]^5`.
    fn act(&mut self, observation: &Observation) -> [f64; 5];
}

pub struct PolicyOptimizer<P: Policy> {
    policy: P,
    target: BeamParameters,
    actuators: ActuatorBox,
}

impl<P: Policy> PolicyOptimizer<P> {
    pub fn new(policy: P, target: BeamParameters) -> Self {
        Self {
            policy,
            target,
            actuators: ActuatorBox::default(),
        }
    }
}

impl<P: Policy> Optimizer for PolicyOptimizer<P> {
    fn name(&self) -> &'static str {
        "rlo"
    }

    fn propose(&mut self, history: &[Sample]) -> MagnetSettings {
        let last = history.last().expect("history is never empty");
        let mut obs = [0.0; 13];
        obs[..4].copy_from_slice(&last.parameters.to_array());
        obs[4..8].copy_from_slice(&self.target.to_array());
        obs[8..].copy_from_slice(&self.actuators.normalize(&last.settings));
        let mut action = self.policy.act(&obs);
        for a in action.iter_mut() {
            *a = if a.is_finite() { a.clamp(-1.0, 1.0) } else { 0.0 };
        }
        self.actuators.denormalize(&action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::testing::sample;

    struct Hold;

    impl Policy for Hold {
        fn act(&mut self, obs: &Observation) -> [f64; 5] {
            let mut out = [0.0; 5];
            out.copy_from_slice(&obs[8..]);
            out[0] = f64::NAN;
            out
        }
    }

    #[test]
    fn policy_output_is_sanitized() {
        let mut opt = PolicyOptimizer::new(Hold, BeamParameters::default());
        let start = MagnetSettings::new(15.0, -3.0, 1e-3, 0.0, 2e-3);
        let next = opt.propose(&[sample(0, start, 1.0)]);
        assert_eq!(next.q1, 0.0);
        assert!((next.q2 - start.q2).abs() < 1e-12);
        assert!((next.ch - start.ch).abs() < 1e-15);
    }
}
