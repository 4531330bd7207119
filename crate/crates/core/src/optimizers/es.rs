//! Bounded extremum seeking.
//!
//! Each normalized actuator coordinate follows
//! `u_j <- u_j + dt * sqrt(a * w_j) * cos(w_j * t + k * C)`, where `C` is the
//! latest objective divided by the objective at reset. The dither phase
//! drifts with the measured cost, which on average moves the actuators down
//! the cost gradient.

use serde::{Deserialize, Serialize};

use crate::task::{ActuatorBox, MagnetSettings, Sample};

use super::Optimizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsConfig {
    /// Dither frequencies per coordinate, rad per unit time.
    pub omega: [f64; 5],
    pub dt: f64,
    /// Dither amplitude parameter `a`.
    pub amplitude: f64,
    /// Cost gain `k`.
    pub gain: f64,
}

impl Default for EsConfig {
    fn default() -> Self {
        let primes = [2.0f64, 3.0, 5.0, 7.0, 11.0];
        let omega = primes.map(|p| 2.0 * std::f64::consts::PI * p.sqrt() / 10.0);
        Self {
            omega,
            dt: 1.0,
            amplitude: 0.01,
            gain: 6.0,
        }
    }
}

impl EsConfig {
    /// Largest possible change of one normalized coordinate in one step.
    pub fn max_step(&self) -> f64 {
        let w_max = self.omega.iter().cloned().fold(0.0, f64::max);
        self.dt * (self.amplitude * w_max).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct ExtremumSeeking {
    config: EsConfig,
    actuators: ActuatorBox,
    time: f64,
    position: Option<[f64; 5]>,
}

impl ExtremumSeeking {
    pub fn new(config: EsConfig) -> Self {
        Self {
            config,
            actuators: ActuatorBox::default(),
            time: 0.0,
            position: None,
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// One update of the normalized position for a rescaled cost.
    fn advance(&mut self, cost: f64) -> [f64; 5] {
        let c = &self.config;
        let mut u = self.position.expect("position initialised");
        for (j, uj) in u.iter_mut().enumerate() {
            let w = c.omega[j];
            let delta = c.dt * (c.amplitude * w).sqrt() * (w * self.time + c.gain * cost).cos();
            *uj = (*uj + delta).clamp(-1.0, 1.0);
        }
        self.time += c.dt;
        self.position = Some(u);
        u
    }
}

impl Optimizer for ExtremumSeeking {
    fn name(&self) -> &'static str {
        "es"
    }

    fn propose(&mut self, history: &[Sample]) -> MagnetSettings {
        let last = history.last().expect("history is never empty");
        if self.position.is_none() {
            self.position = Some(self.actuators.normalize(&last.settings));
        }
        let scale = history[0].objective;
        let cost = if scale > 0.0 && scale.is_finite() {
            last.objective / scale
        } else {
            last.objective
        };
        let cost = if cost.is_finite() { cost } else { 0.0 };
        let u = self.advance(cost);
        self.actuators.denormalize(&u)
    }
}
