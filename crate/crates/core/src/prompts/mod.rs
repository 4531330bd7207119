//! Prompt templates and the response parser.
//!
//! Templates live next to this file as plain text with two markers,
//! `{target}` and `{samples}`, replaced at render time. Everything else is
//! emitted byte for byte.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::task::{BeamParameters, MagnetSettings, Sample, MAGNET_NAMES};

mod parse;

pub use parse::{format_settings_block, parse, FailureReason, ParseFailure, ParsedSettings, EXCERPT_LIMIT};

/// Samples kept in a prompt unless configured otherwise.
pub const DEFAULT_WINDOW: usize = 50;

const TUNING: &str = include_str!("templates/tuning.txt");
const EXPLAINED: &str = include_str!("templates/explained.txt");
const CHAIN_OF_THOUGHT: &str = include_str!("templates/cot.txt");
const OPTIMISATION: &str = include_str!("templates/optimisation.txt");

const BEAM_NAMES: [&str; 4] = ["mu_x", "sigma_x", "mu_y", "sigma_y"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Tuning,
    Explained,
    #[serde(rename = "cot", alias = "chain_of_thought")]
    ChainOfThought,
    Optimisation,
}

impl PromptKind {
    pub const ALL: [PromptKind; 4] = [
        PromptKind::Tuning,
        PromptKind::Explained,
        PromptKind::ChainOfThought,
        PromptKind::Optimisation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Tuning => "tuning",
            Self::Explained => "explained",
            Self::ChainOfThought => "cot",
            Self::Optimisation => "optimisation",
        }
    }

    pub fn template(&self) -> &'static str {
        match self {
            Self::Tuning => TUNING,
            Self::Explained => EXPLAINED,
            Self::ChainOfThought => CHAIN_OF_THOUGHT,
            Self::Optimisation => OPTIMISATION,
        }
    }

    /// Whether the settings and beam blocks of one sample are separated by a
    /// blank line.
    fn spaced_pairs(&self) -> bool {
        matches!(self, Self::Tuning)
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tuning" => Ok(Self::Tuning),
            "explained" => Ok(Self::Explained),
            "cot" | "chain_of_thought" | "chain-of-thought" => Ok(Self::ChainOfThought),
            "optimisation" | "optimization" => Ok(Self::Optimisation),
            other => Err(format!("unknown prompt kind {other:?}")),
        }
    }
}

/// Two decimals, the only number format used in prompts.
pub fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

pub(crate) fn json_block(names: &[&str], values: &[f64]) -> String {
    let body: Vec<String> = names
        .iter()
        .zip(values)
        .map(|(n, v)| format!("    \"{n}\": {}", fmt2(*v)))
        .collect();
    format!("```json\n{{\n{}\n}}\n```", body.join(",\n"))
}

fn settings_block(s: &MagnetSettings) -> String {
    json_block(&MAGNET_NAMES, &s.to_display())
}

fn beam_block(p: &BeamParameters) -> String {
    json_block(&BEAM_NAMES, &p.to_array())
}

fn target_section(target: &BeamParameters) -> String {
    format!("Target beam parameters:\n{}", beam_block(target))
}

fn chronological(kind: PromptKind, history: &[Sample], window: usize) -> String {
    let start = history.len().saturating_sub(window);
    let gap = if kind.spaced_pairs() { "\n\n" } else { "\n" };
    history[start..]
        .iter()
        .map(|s| {
            format!(
                "Magnet settings:\n{}{gap}Beam parameters:\n{}",
                settings_block(&s.settings),
                beam_block(&s.parameters)
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Samples ordered by objective, worst first; the `window` best are kept.
pub fn optimisation_order(history: &[Sample], window: usize) -> Vec<&Sample> {
    let mut ordered: Vec<&Sample> = history.iter().collect();
    ordered.sort_by(|a, b| b.objective.total_cmp(&a.objective));
    let start = ordered.len().saturating_sub(window);
    ordered.split_off(start)
}

fn by_objective(history: &[Sample], window: usize) -> String {
    optimisation_order(history, window)
        .into_iter()
        .map(|s| {
            format!(
                "Inputs:\n{}\nObjective value = {}",
                settings_block(&s.settings),
                fmt2(s.objective)
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Renders the prompt for the next proposal. A `window` of zero is treated
/// as one.
pub fn render(kind: PromptKind, target: &BeamParameters, history: &[Sample], window: usize) -> String {
    let window = window.max(1);
    let samples = match kind {
        PromptKind::Optimisation => by_objective(history, window),
        _ => chronological(kind, history, window),
    };
    kind.template()
        .replace("{target}", &target_section(target))
        .replace("{samples}", &samples)
}
