//! The tuning problem: actuator box, trials, the step/reset environment and
//! the L1 beam-difference objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optics::{self, Geometry, Lattice, Offset, OpticsError, TransverseState};

/// Quadrupole strength limit, m^-2.
pub const QUAD_LIMIT: f64 = 30.0;
/// Steering angle limit, rad.
pub const STEERER_LIMIT: f64 = 6.0e-3;
/// Position accuracy of the screen readout, m.
pub const SCREEN_ACCURACY: f64 = 20e-6;
/// Run-success threshold on the MAE improvement, mm.
pub const SUCCESS_THRESHOLD_MM: f64 = 0.040;

pub const MAGNET_NAMES: [&str; 5] = ["Q1", "Q2", "CV", "Q3", "CH"];

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("environment has not been reset")]
    NotReset,
    #[error("proposed settings contain a non-finite value ({0})")]
    NonFiniteSettings(&'static str),
    #[error("invalid trial generator range for {name}: [{lo}, {hi}]")]
    GeneratorRange { name: &'static str, lo: f64, hi: f64 },
    #[error("invalid trial: {0}")]
    InvalidTrial(String),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error("trial fixture: {0}")]
    Fixture(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The five actuator values in lattice order. Quadrupoles in m^-2, steerers in rad.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MagnetSettings {
    pub q1: f64,
    pub q2: f64,
    pub cv: f64,
    pub q3: f64,
    pub ch: f64,
}

/// Per-field flags, in Q1, Q2, CV, Q3, CH order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClampFlags(pub [bool; 5]);

impl ClampFlags {
    pub fn any(&self) -> bool {
        self.0.iter().any(|f| *f)
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|f| **f).count()
    }
}

impl MagnetSettings {
    pub const fn new(q1: f64, q2: f64, cv: f64, q3: f64, ch: f64) -> Self {
        Self { q1, q2, cv, q3, ch }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.q1, self.q2, self.cv, self.q3, self.ch]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    /// Values as shown to a model: m^-2 for quadrupoles, mrad for steerers.
    pub fn to_display(&self) -> [f64; 5] {
        [self.q1, self.q2, self.cv * 1e3, self.q3, self.ch * 1e3]
    }

    pub fn from_display(v: [f64; 5]) -> Self {
        Self::new(v[0], v[1], v[2] * 1e-3, v[3], v[4] * 1e-3)
    }

    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.to_array()
            .iter()
            .zip(MAGNET_NAMES)
            .find(|(v, _)| !v.is_finite())
            .map(|(_, n)| n)
    }
}

/// Hard limits of the five actuators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorBox {
    pub quad_limit: f64,
    pub steerer_limit: f64,
}

impl Default for ActuatorBox {
    fn default() -> Self {
        Self {
            quad_limit: QUAD_LIMIT,
            steerer_limit: STEERER_LIMIT,
        }
    }
}

impl ActuatorBox {
    pub fn limits(&self) -> [f64; 5] {
        let (q, s) = (self.quad_limit, self.steerer_limit);
        [q, q, s, q, s]
    }

    pub fn contains(&self, s: &MagnetSettings) -> bool {
        s.to_array().iter().zip(self.limits()).all(|(v, l)| v.abs() <= l)
    }

    pub fn clamp(&self, s: &MagnetSettings) -> (MagnetSettings, ClampFlags) {
        let mut flags = [false; 5];
        let mut out = s.to_array();
        for ((v, l), f) in out.iter_mut().zip(self.limits()).zip(flags.iter_mut()) {
            if *v > l || *v < -l {
                *v = v.clamp(-l, l);
                *f = true;
            }
        }
        (MagnetSettings::from_array(out), ClampFlags(flags))
    }

    /// Map into `[-1, 1]^5`.
    pub fn normalize(&self, s: &MagnetSettings) -> [f64; 5] {
        let mut out = s.to_array();
        for (v, l) in out.iter_mut().zip(self.limits()) {
            *v /= l;
        }
        out
    }

    pub fn denormalize(&self, u: &[f64; 5]) -> MagnetSettings {
        let mut out = *u;
        for (v, l) in out.iter_mut().zip(self.limits()) {
            *v *= l;
        }
        MagnetSettings::from_array(out)
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> MagnetSettings {
        let mut out = [0.0; 5];
        for (v, l) in out.iter_mut().zip(self.limits()) {
            *v = rng.random_range(-l..=l);
        }
        MagnetSettings::from_array(out)
    }
}

/// Screen readout, millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BeamParameters {
    pub mu_x: f64,
    pub sigma_x: f64,
    pub mu_y: f64,
    pub sigma_y: f64,
}

impl BeamParameters {
    pub const fn new(mu_x: f64, sigma_x: f64, mu_y: f64, sigma_y: f64) -> Self {
        Self {
            mu_x,
            sigma_x,
            mu_y,
            sigma_y,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.mu_x, self.sigma_x, self.mu_y, self.sigma_y]
    }
}

/// Sum of absolute differences of the four beam parameters, in mm.
pub fn objective(observed: &BeamParameters, target: &BeamParameters) -> f64 {
    (observed.mu_x - target.mu_x).abs()
        + (observed.mu_y - target.mu_y).abs()
        + (observed.sigma_x - target.sigma_x).abs()
        + (observed.sigma_y - target.sigma_y).abs()
}

/// Mean absolute error over the four beam parameters, in mm.
pub fn mae(observed: &BeamParameters, target: &BeamParameters) -> f64 {
    objective(observed, target) / 4.0
}

/// One problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub trial_id: String,
    pub seed: u64,
    pub target: BeamParameters,
    pub incoming: TransverseState,
    pub quad_misalignments: [Offset; 3],
    pub screen_misalignment: Offset,
    pub initial_settings: MagnetSettings,
}

impl Trial {
    pub fn validate(&self, actuators: &ActuatorBox) -> Result<(), TaskError> {
        let t = self.target;
        if t.to_array().iter().any(|v| !v.is_finite()) {
            return Err(TaskError::InvalidTrial("non-finite target".into()));
        }
        // Zero target sizes are allowed (the all-zero target is a valid request).
        if t.sigma_x < 0.0 || t.sigma_y < 0.0 {
            return Err(TaskError::InvalidTrial("negative target beam size".into()));
        }
        if !actuators.contains(&self.initial_settings) {
            return Err(TaskError::InvalidTrial(
                "initial settings outside the actuator box".into(),
            ));
        }
        let cov = &self.incoming.cov;
        if (cov - cov.transpose()).abs().max() > 1e-18 || (0..4).any(|i| cov[(i, i)] < 0.0) {
            return Err(TaskError::InvalidTrial(
                "incoming covariance is not symmetric with a non-negative diagonal".into(),
            ));
        }
        Ok(())
    }

    pub fn lattice(&self, geometry: &Geometry) -> Result<Lattice, TaskError> {
        Ok(Lattice::new(
            geometry,
            self.quad_misalignments,
            self.screen_misalignment,
        )?)
    }
}

/// Sampling ranges for [`make_trial`], SI units. Symmetric ranges are given by
/// their half-width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialGenerator {
    pub target_position: f64,
    pub target_size: [f64; 2],
    pub misalignment: f64,
    pub incoming_position: f64,
    pub incoming_slope: f64,
    pub incoming_size: [f64; 2],
    pub incoming_divergence: [f64; 2],
}

impl Default for TrialGenerator {
    fn default() -> Self {
        Self {
            target_position: 2.0e-3,
            target_size: [0.05e-3, 0.5e-3],
            misalignment: 0.5e-3,
            incoming_position: 0.5e-3,
            incoming_slope: 0.1e-3,
            incoming_size: [0.1e-3, 0.5e-3],
            incoming_divergence: [0.05e-3, 0.2e-3],
        }
    }
}

impl TrialGenerator {
    fn validate(&self) -> Result<(), TaskError> {
        let half = [
            ("target_position", self.target_position),
            ("misalignment", self.misalignment),
            ("incoming_position", self.incoming_position),
            ("incoming_slope", self.incoming_slope),
        ];
        for (name, h) in half {
            if !h.is_finite() || h < 0.0 {
                return Err(TaskError::GeneratorRange { name, lo: -h, hi: h });
            }
        }
        let spans = [
            ("target_size", self.target_size),
            ("incoming_size", self.incoming_size),
            ("incoming_divergence", self.incoming_divergence),
        ];
        for (name, [lo, hi]) in spans {
            if !lo.is_finite() || !hi.is_finite() || lo < 0.0 || lo > hi {
                return Err(TaskError::GeneratorRange { name, lo, hi });
            }
        }
        Ok(())
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, half: f64) -> f64 {
    if half == 0.0 {
        0.0
    } else {
        rng.random_range(-half..=half)
    }
}

fn span<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Deterministic trial from a seed.
pub fn make_trial(seed: u64, generator: &TrialGenerator, actuators: &ActuatorBox) -> Result<Trial, TaskError> {
    generator.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = generator;

    let target = BeamParameters {
        mu_x: symmetric(&mut rng, g.target_position) * 1e3,
        sigma_x: span(&mut rng, g.target_size) * 1e3,
        mu_y: symmetric(&mut rng, g.target_position) * 1e3,
        sigma_y: span(&mut rng, g.target_size) * 1e3,
    };
    let offset = |rng: &mut ChaCha8Rng| Offset::new(symmetric(rng, g.misalignment), symmetric(rng, g.misalignment));
    let quad_misalignments = [offset(&mut rng), offset(&mut rng), offset(&mut rng)];
    let screen_misalignment = offset(&mut rng);

    let mean = [
        symmetric(&mut rng, g.incoming_position),
        symmetric(&mut rng, g.incoming_slope),
        symmetric(&mut rng, g.incoming_position),
        symmetric(&mut rng, g.incoming_slope),
    ];
    let rms = [
        span(&mut rng, g.incoming_size),
        span(&mut rng, g.incoming_divergence),
        span(&mut rng, g.incoming_size),
        span(&mut rng, g.incoming_divergence),
    ];
    let incoming = TransverseState::uncorrelated(mean, rms);
    let initial_settings = actuators.sample_uniform(&mut rng);

    let trial = Trial {
        trial_id: format!("trial-{seed}"),
        seed,
        target,
        incoming,
        quad_misalignments,
        screen_misalignment,
        initial_settings,
    };
    trial.validate(actuators)?;
    Ok(trial)
}

/// One entry of the optimization history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub step: usize,
    pub settings: MagnetSettings,
    pub parameters: BeamParameters,
    pub objective: f64,
    pub mae: f64,
    #[serde(default)]
    pub clamped: ClampFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub enabled: bool,
    /// Position noise width, m.
    pub sigma: f64,
}

impl NoiseConfig {
    pub fn off() -> Self {
        Self {
            enabled: false,
            sigma: SCREEN_ACCURACY,
        }
    }

    pub fn screen_accuracy() -> Self {
        Self {
            enabled: true,
            sigma: SCREEN_ACCURACY,
        }
    }

    pub fn effective_sigma(&self) -> f64 {
        if self.enabled {
            self.sigma
        } else {
            0.0
        }
    }
}

/// Step/reset interface around the simulated section.
#[derive(Debug, Clone)]
pub struct Environment {
    trial: Trial,
    lattice: Lattice,
    actuators: ActuatorBox,
    noise_sigma: f64,
    rng_seed: u64,
    rng: ChaCha8Rng,
    history: Vec<Sample>,
}

impl Environment {
    pub fn new(trial: Trial, geometry: &Geometry, noise: NoiseConfig, rng_seed: u64) -> Result<Self, TaskError> {
        let actuators = ActuatorBox::default();
        trial.validate(&actuators)?;
        let lattice = trial.lattice(geometry)?;
        let noise_sigma = noise.effective_sigma();
        if !noise_sigma.is_finite() || noise_sigma < 0.0 {
            return Err(TaskError::InvalidTrial("invalid noise width".into()));
        }
        Ok(Self {
            trial,
            lattice,
            actuators,
            noise_sigma,
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            history: Vec::new(),
        })
    }

    pub fn trial(&self) -> &Trial {
        &self.trial
    }

    pub fn actuators(&self) -> &ActuatorBox {
        &self.actuators
    }

    pub fn history(&self) -> &[Sample] {
        &self.history
    }

    /// Beam parameters for the given (in-range) settings without touching history.
    pub fn measure(&mut self, settings: &MagnetSettings) -> Result<BeamParameters, TaskError> {
        let state = optics::track(&self.lattice, settings, &self.trial.incoming)?;
        Ok(optics::read_screen(
            &state,
            self.lattice.screen_offset(),
            self.noise_sigma,
            &mut self.rng,
        )?)
    }

    fn record(&mut self, settings: MagnetSettings, clamped: ClampFlags) -> Result<Sample, TaskError> {
        let parameters = self.measure(&settings)?;
        let objective = objective(&parameters, &self.trial.target);
        let sample = Sample {
            step: self.history.len(),
            settings,
            parameters,
            objective,
            mae: objective / 4.0,
            clamped,
        };
        self.history.push(sample.clone());
        Ok(sample)
    }

    /// Applies the initial settings and starts a fresh history.
    pub fn reset(&mut self) -> Result<Sample, TaskError> {
        self.history.clear();
        self.rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        self.record(self.trial.initial_settings, ClampFlags::default())
    }

    /// Clamps the proposal into the actuator box, applies it and measures.
    pub fn step(&mut self, proposed: &MagnetSettings) -> Result<Sample, TaskError> {
        if self.history.is_empty() {
            return Err(TaskError::NotReset);
        }
        if let Some(name) = proposed.first_non_finite() {
            return Err(TaskError::NonFiniteSettings(name));
        }
        let (applied, flags) = self.actuators.clamp(proposed);
        self.record(applied, flags)
    }
}

pub mod fixture {
    //! Versioned TOML file holding a suite of trials. Everything is in SI units
    //! except the target, which is kept in mm like all beam parameters.

    use std::path::Path;

    use serde::{Deserialize, Serialize};

    use super::*;

    pub const SCHEMA: &str = "beamtune.trials/v1";

    #[derive(Debug, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct TrialRecord {
        id: String,
        seed: u64,
        target_mm: BeamParameters,
        initial_settings: MagnetSettings,
        quad_misalignments: [Offset; 3],
        screen_misalignment: Offset,
        incoming_mean: [f64; 4],
        incoming_cov: [[f64; 4]; 4],
    }

    #[derive(Debug, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct TrialFile {
        schema: String,
        trial: Vec<TrialRecord>,
    }

    impl From<&Trial> for TrialRecord {
        fn from(t: &Trial) -> Self {
            let mut cov = [[0.0; 4]; 4];
            for (i, row) in cov.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = t.incoming.cov[(i, j)];
                }
            }
            Self {
                id: t.trial_id.clone(),
                seed: t.seed,
                target_mm: t.target,
                initial_settings: t.initial_settings,
                quad_misalignments: t.quad_misalignments,
                screen_misalignment: t.screen_misalignment,
                incoming_mean: [
                    t.incoming.mean[0],
                    t.incoming.mean[1],
                    t.incoming.mean[2],
                    t.incoming.mean[3],
                ],
                incoming_cov: cov,
            }
        }
    }

    impl From<TrialRecord> for Trial {
        fn from(r: TrialRecord) -> Self {
            let mut incoming = TransverseState::uncorrelated(r.incoming_mean, [0.0; 4]);
            for i in 0..4 {
                for j in 0..4 {
                    incoming.cov[(i, j)] = r.incoming_cov[i][j];
                }
            }
            Trial {
                trial_id: r.id,
                seed: r.seed,
                target: r.target_mm,
                incoming,
                quad_misalignments: r.quad_misalignments,
                screen_misalignment: r.screen_misalignment,
                initial_settings: r.initial_settings,
            }
        }
    }

    pub fn to_string(trials: &[Trial]) -> Result<String, TaskError> {
        let file = TrialFile {
            schema: SCHEMA.to_string(),
            trial: trials.iter().map(TrialRecord::from).collect(),
        };
        toml::to_string(&file).map_err(|e| TaskError::Fixture(e.to_string()))
    }

    pub fn from_str(text: &str) -> Result<Vec<Trial>, TaskError> {
        let file: TrialFile = toml::from_str(text).map_err(|e| TaskError::Fixture(e.to_string()))?;
        if file.schema != SCHEMA {
            return Err(TaskError::Fixture(format!(
                "unsupported schema {:?}, expected {SCHEMA:?}",
                file.schema
            )));
        }
        let trials: Vec<Trial> = file.trial.into_iter().map(Trial::from).collect();
        let actuators = ActuatorBox::default();
        for t in &trials {
            t.validate(&actuators)?;
        }
        Ok(trials)
    }

    pub fn load(path: &Path) -> Result<Vec<Trial>, TaskError> {
        from_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(path: &Path, trials: &[Trial]) -> Result<(), TaskError> {
        std::fs::write(path, to_string(trials)?)?;
        Ok(())
    }

    /// Seeds of the shipped evaluation suite.
    pub const CANONICAL_SEEDS: [u64; 3] = [1, 2, 3];

    /// The shipped suite, embedded at build time.
    pub fn canonical() -> Vec<Trial> {
        from_str(include_str!("../fixtures/trials.toml")).expect("embedded fixture is valid")
    }

    pub fn generate_canonical(generator: &TrialGenerator) -> Result<Vec<Trial>, TaskError> {
        CANONICAL_SEEDS
            .iter()
            .map(|s| make_trial(*s, generator, &ActuatorBox::default()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn trial() -> Trial {
        make_trial(11, &TrialGenerator::default(), &ActuatorBox::default()).unwrap()
    }

    #[test]
    fn objective_of_identical_parameters_is_zero() {
        let p = BeamParameters::new(1.2, 0.11, 1.25, 0.06);
        assert_eq!(objective(&p, &p), 0.0);
        assert_eq!(mae(&p, &p), 0.0);
    }

    #[test]
    fn objective_unit_case() {
        let a = BeamParameters::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(objective(&a, &BeamParameters::default()), 4.0);
        assert_eq!(mae(&a, &BeamParameters::default()), 1.0);
    }

    #[test]
    fn prompt_example_objective() {
        let observed = BeamParameters::new(-1038.63, 1893.75, -2353.77, 2226.94);
        let target = BeamParameters::new(1.20, 0.11, 1.25, 0.06);
        assert_abs_diff_eq!(objective(&observed, &target), 7515.37, epsilon = 1e-9);
        assert_abs_diff_eq!(mae(&observed, &target), 1878.8425, epsilon = 1e-9);
    }

    #[test]
    fn trials_are_deterministic_per_seed() {
        let g = TrialGenerator::default();
        let a = ActuatorBox::default();
        assert_eq!(make_trial(5, &g, &a).unwrap(), make_trial(5, &g, &a).unwrap());
        assert_ne!(make_trial(5, &g, &a).unwrap(), make_trial(6, &g, &a).unwrap());
    }

    #[test]
    fn generated_trials_respect_ranges() {
        let g = TrialGenerator::default();
        for seed in 0..50 {
            let t = make_trial(seed, &g, &ActuatorBox::default()).unwrap();
            assert!(t.target.mu_x.abs() <= 2.0 && t.target.mu_y.abs() <= 2.0);
            assert!((0.05..=0.5).contains(&t.target.sigma_x));
            assert!((0.05..=0.5).contains(&t.target.sigma_y));
            for o in t.quad_misalignments.iter().chain([&t.screen_misalignment]) {
                assert!(o.dx.abs() <= 0.5e-3 && o.dy.abs() <= 0.5e-3);
            }
            assert!(ActuatorBox::default().contains(&t.initial_settings));
        }
    }

    #[test]
    fn malformed_generator_ranges_are_rejected() {
        let g = TrialGenerator {
            target_size: [0.5e-3, 0.1e-3],
            ..TrialGenerator::default()
        };
        assert!(matches!(
            make_trial(1, &g, &ActuatorBox::default()),
            Err(TaskError::GeneratorRange {
                name: "target_size",
                ..
            })
        ));
        let g = TrialGenerator {
            misalignment: f64::NAN,
            ..TrialGenerator::default()
        };
        assert!(make_trial(1, &g, &ActuatorBox::default()).is_err());
    }

    #[test]
    fn all_zero_target_is_representable() {
        let mut t = trial();
        t.target = BeamParameters::default();
        assert!(t.validate(&ActuatorBox::default()).is_ok());
        let mut env = Environment::new(t, &Geometry::default(), NoiseConfig::off(), 0).unwrap();
        env.reset().unwrap();
    }

    #[test]
    fn reset_records_initial_measurement() {
        let t = trial();
        let mut env = Environment::new(t.clone(), &Geometry::default(), NoiseConfig::off(), 0).unwrap();
        let first = env.reset().unwrap();
        assert_eq!(env.history().len(), 1);
        assert_eq!(first.settings, t.initial_settings);
        assert_eq!(first.mae, mae(&first.parameters, &t.target));
        assert_eq!(env.reset().unwrap(), first);
    }

    #[test]
    fn step_requires_reset() {
        let mut env = Environment::new(trial(), &Geometry::default(), NoiseConfig::off(), 0).unwrap();
        assert!(matches!(env.step(&MagnetSettings::default()), Err(TaskError::NotReset)));
    }

    #[test]
    fn step_clamps_out_of_range_values() {
        let mut env = Environment::new(trial(), &Geometry::default(), NoiseConfig::off(), 0).unwrap();
        env.reset().unwrap();
        let s = env.step(&MagnetSettings::new(45.0, 0.0, -1.0, 0.0, 0.0)).unwrap();
        assert_eq!(s.settings.q1, 30.0);
        assert_eq!(s.settings.cv, -STEERER_LIMIT);
        assert_eq!(s.clamped, ClampFlags([true, false, true, false, false]));
        assert_eq!(env.history().len(), 2);
    }

    #[test]
    fn non_finite_proposal_is_not_applied() {
        let mut env = Environment::new(trial(), &Geometry::default(), NoiseConfig::off(), 0).unwrap();
        env.reset().unwrap();
        let err = env.step(&MagnetSettings::new(1.0, f64::NAN, 0.0, 0.0, 0.0));
        assert!(matches!(err, Err(TaskError::NonFiniteSettings("Q2"))));
        assert_eq!(env.history().len(), 1);
    }

    #[test]
    fn repeated_settings_give_identical_readout() {
        let mut env = Environment::new(trial(), &Geometry::default(), NoiseConfig::off(), 0).unwrap();
        let first = env.reset().unwrap();
        let again = env.step(&first.settings).unwrap();
        assert_eq!(first.parameters, again.parameters);
        assert_eq!(again.step, 1);
    }

    #[test]
    fn noisy_environment_is_reproducible_from_its_seed() {
        let run = || {
            let mut env = Environment::new(trial(), &Geometry::default(), NoiseConfig::screen_accuracy(), 9).unwrap();
            env.reset().unwrap();
            env.step(&MagnetSettings::new(3.0, -4.0, 1e-3, 2.0, -1e-3)).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fixture_round_trip_is_exact() {
        let trials = fixture::generate_canonical(&TrialGenerator::default()).unwrap();
        let text = fixture::to_string(&trials).unwrap();
        assert!(text.contains(fixture::SCHEMA));
        assert_eq!(fixture::from_str(&text).unwrap(), trials);
    }

    #[test]
    fn shipped_fixture_matches_generator() {
        let generated = fixture::generate_canonical(&TrialGenerator::default()).unwrap();
        assert_eq!(fixture::canonical(), generated);
    }

    #[test]
    fn fixture_schema_tag_is_checked() {
        let text = fixture::to_string(&[trial()])
            .unwrap()
            .replace(fixture::SCHEMA, "beamtune.trials/v0");
        assert!(matches!(fixture::from_str(&text), Err(TaskError::Fixture(_))));
    }

    fn params() -> impl Strategy<Value = BeamParameters> {
        (-5.0..5.0f64, 0.0..5.0f64, -5.0..5.0f64, 0.0..5.0f64).prop_map(|(a, b, c, d)| BeamParameters::new(a, b, c, d))
    }

    proptest! {
        #[test]
        fn objective_is_a_metric(a in params(), b in params(), c in params()) {
            prop_assert_eq!(objective(&a, &b), objective(&b, &a));
            prop_assert!(objective(&a, &c) <= objective(&a, &b) + objective(&b, &c) + 1e-12);
            prop_assert!(objective(&a, &b) >= 0.0);
            prop_assert_eq!(mae(&a, &b) * 4.0, objective(&a, &b));
        }

        #[test]
        fn objective_ignores_common_position_shift(a in params(), b in params(), shift in -3.0..3.0f64) {
            let mut a2 = a;
            let mut b2 = b;
            a2.mu_x += shift;
            b2.mu_x += shift;
            prop_assert!((objective(&a2, &b2) - objective(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn applied_settings_stay_in_the_box(v in proptest::array::uniform5(-100.0..100.0f64)) {
            let mut env = Environment::new(trial(), &Geometry::default(), NoiseConfig::off(), 0).unwrap();
            env.reset().unwrap();
            let mut s = MagnetSettings::from_array(v);
            s.cv *= 1e-3;
            s.ch *= 1e-3;
            let sample = env.step(&s).unwrap();
            prop_assert!(ActuatorBox::default().contains(&sample.settings));
            prop_assert_eq!(sample.mae * 4.0, sample.objective);
        }
    }
}
