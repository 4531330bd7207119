//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use beamtune::task::{BeamParameters, ClampFlags, MagnetSettings, Sample};

pub const GOLDEN_TUNING: &str = include_str!("../golden/tuning.txt");
pub const GOLDEN_EXPLAINED: &str = include_str!("../golden/explained.txt");
pub const GOLDEN_COT: &str = include_str!("../golden/cot.txt");
pub const GOLDEN_OPTIMISATION: &str = include_str!("../golden/optimisation.txt");

pub const RESPONSE_EXAMPLE: &str = include_str!("../responses/settings_example.txt");
pub const RESPONSE_TRAILING_COMMA: &str = include_str!("../responses/llama_trailing_comma.txt");
pub const RESPONSE_ESSAY: &str = include_str!("../responses/orca_essay.txt");
pub const RESPONSE_INCOHERENT: &str = include_str!("../responses/gemma_incoherent.txt");

pub fn sample(step: usize, display: [f64; 5], parameters: BeamParameters, objective: f64) -> Sample {
    Sample {
        step,
        settings: MagnetSettings::from_display(display),
        parameters,
        objective,
        mae: objective / 4.0,
        clamped: ClampFlags::default(),
    }
}

pub fn example_target() -> BeamParameters {
    BeamParameters::new(1.20, 0.11, 1.25, 0.06)
}

/// The single measured pair shown in the tuning-style prompt examples.
pub fn example_pair() -> Vec<Sample> {
    let beam = BeamParameters::new(-1038.63, 1893.75, -2353.77, 2226.94);
    vec![sample(0, [25.12, 12.48, 0.84, -8.25, 3.94], beam, 7515.37)]
}

/// The two samples of the optimisation prompt example, best one first so
/// that rendering has to reorder them.
pub fn example_objectives() -> Vec<Sample> {
    let beam = BeamParameters::default();
    vec![
        sample(0, [-13.25, -8.85, -2.80, -8.90, -5.70], beam, 2.28),
        sample(1, [-13.50, -9.00, -3.00, -9.00, -6.00], beam, 2.37),
    ]
}
