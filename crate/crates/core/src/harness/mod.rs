//! Episode loop, metrics, suite evaluation and reporting.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{default_system_prompt, Backend, ChatRequest, Usage, DEFAULT_TIMEOUT_SECS};
use crate::optimizers::Optimizer;
use crate::prompts::{self, FailureReason, PromptKind, DEFAULT_WINDOW};
use crate::task::{ActuatorBox, BeamParameters, Environment, MagnetSettings, Sample, TaskError};

mod metrics;
mod report;
mod suite;

pub use metrics::{compute_metrics, RunMetrics};
pub use report::{load_records, read_report_dir, summaries, write_report, ReportError, CSV_HEADER};
pub use suite::{derive_seed, evaluate, summarize, tiers, RunSummary, Stat, SuiteSummary, Tiers};

pub const DEFAULT_BUDGET: usize = 50;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("budget must be positive")]
    ZeroBudget,
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    BudgetExhausted,
    DoubleParseFailure,
    TransportFailure,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::BudgetExhausted => "budget_exhausted",
            Self::DoubleParseFailure => "double_parse_failure",
            Self::TransportFailure => "transport_failure",
        }
    }
}

/// One model call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    /// Step the call was proposing for, starting at 1.
    pub step: usize,
    /// 1 for the first attempt, 2 for the second chance.
    pub attempt: u8,
    pub prompt: String,
    pub response: Option<String>,
    /// `None` when the response parsed.
    pub parse_failure: Option<FailureReason>,
    pub transport_error: Option<String>,
    pub latency: f64,
    pub usage: Option<Usage>,
}

/// Result of asking an agent for the next settings.
#[derive(Debug, Clone, PartialEq)]
pub enum Proposal {
    Settings(MagnetSettings),
    Stop(Termination, String),
}

/// Anything that proposes settings inside an episode.
pub trait Agent: Send {
    fn id(&self) -> String;

    fn propose(&mut self, target: &BeamParameters, history: &[Sample], calls: &mut Vec<CallRecord>) -> Proposal;

    /// Whether the agent talks to a language model.
    fn uses_model(&self) -> bool {
        false
    }

    fn fallbacks(&self) -> usize {
        0
    }

    fn set_budget(&mut self, _budget: usize) {}
}

/// Adapter for the classical baselines.
pub struct BaselineAgent(pub Box<dyn Optimizer>);

impl Agent for BaselineAgent {
    fn id(&self) -> String {
        self.0.name().to_string()
    }

    fn propose(&mut self, _target: &BeamParameters, history: &[Sample], _calls: &mut Vec<CallRecord>) -> Proposal {
        Proposal::Settings(self.0.propose(history))
    }

    fn fallbacks(&self) -> usize {
        self.0.fallback_count()
    }

    fn set_budget(&mut self, budget: usize) {
        self.0.set_budget(budget);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondChance {
    /// Resend the same prompt.
    #[default]
    Identical,
    /// Append a note naming the parse failure.
    WithFeedback,
}

/// Per-request settings of a model-driven agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    /// Falls back to the backend default when unset.
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    /// Seconds.
    pub timeout: f64,
    pub window: usize,
    /// Overrides the model's default system prompt; an empty string disables it.
    pub system_prompt: Option<String>,
    pub second_chance: SecondChance,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            temperature: None,
            max_tokens: None,
            timeout: DEFAULT_TIMEOUT_SECS,
            window: DEFAULT_WINDOW,
            system_prompt: None,
            second_chance: SecondChance::Identical,
        }
    }
}

pub struct LlmAgent {
    backend: Arc<dyn Backend>,
    model: String,
    kind: PromptKind,
    settings: LlmSettings,
    actuators: ActuatorBox,
}

impl LlmAgent {
    pub fn new(backend: Arc<dyn Backend>, model: impl Into<String>, kind: PromptKind, settings: LlmSettings) -> Self {
        Self {
            backend,
            model: model.into(),
            kind,
            settings,
            actuators: ActuatorBox::default(),
        }
    }

    fn request(&self, message: String) -> ChatRequest {
        let system_prompt = match &self.settings.system_prompt {
            Some(s) if s.is_empty() => None,
            Some(s) => Some(s.clone()),
            None => default_system_prompt(&self.model).map(String::from),
        };
        ChatRequest {
            model: self.model.clone(),
            system_prompt,
            user_message: message,
            temperature: self.settings.temperature.unwrap_or(self.backend.default_temperature()),
            max_tokens: self.settings.max_tokens,
            timeout: self.settings.timeout,
        }
    }
}

fn feedback(prompt: &str, reason: FailureReason) -> String {
    format!(
        "{prompt}\n\nYour previous response could not be used ({}). Reply with exactly one JSON code snippet in the schema above.",
        reason.as_str()
    )
}

impl Agent for LlmAgent {
    fn id(&self) -> String {
        format!("llm:{}:{}", self.model, self.kind)
    }

    fn uses_model(&self) -> bool {
        true
    }

    fn propose(&mut self, target: &BeamParameters, history: &[Sample], calls: &mut Vec<CallRecord>) -> Proposal {
        let step = history.len();
        let base = prompts::render(self.kind, target, history, self.settings.window);
        let mut prompt = base.clone();
        for attempt in 1..=2u8 {
            let request = self.request(prompt.clone());
            let mut call = CallRecord {
                step,
                attempt,
                prompt: prompt.clone(),
                response: None,
                parse_failure: None,
                transport_error: None,
                latency: 0.0,
                usage: None,
            };
            let reply = match self.backend.chat(&request) {
                Ok(r) => r,
                Err(e) => {
                    let detail = format!("{}: {e}", e.class());
                    call.transport_error = Some(detail.clone());
                    calls.push(call);
                    return Proposal::Stop(Termination::TransportFailure, detail);
                }
            };
            call.latency = reply.latency;
            call.usage = reply.usage;
            let parsed = prompts::parse(&reply.text, &self.actuators);
            call.response = Some(reply.text);
            match parsed {
                Ok(p) => {
                    calls.push(call);
                    return Proposal::Settings(p.values);
                }
                Err(f) => {
                    call.parse_failure = Some(f.reason);
                    calls.push(call);
                    if attempt == 2 {
                        return Proposal::Stop(Termination::DoubleParseFailure, f.to_string());
                    }
                    if self.settings.second_chance == SecondChance::WithFeedback {
                        prompt = feedback(&base, f.reason);
                    }
                }
            }
        }
        unreachable!("the loop returns on the second attempt")
    }
}

/// Everything recorded about one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub trial_id: String,
    pub trial_seed: u64,
    pub run_index: usize,
    pub run_seed: u64,
    pub optimizer: String,
    pub uses_model: bool,
    pub budget: usize,
    pub target: BeamParameters,
    /// Reset sample first.
    pub samples: Vec<Sample>,
    pub transcripts: Vec<CallRecord>,
    pub termination: Termination,
    pub termination_detail: Option<String>,
    /// Steps whose proposal was usable, second attempts not counted separately.
    pub successful_steps: usize,
    pub clamp_counts: [usize; 5],
    pub fallbacks: usize,
    /// Wall-clock seconds spent on each step.
    pub step_seconds: Vec<f64>,
}

impl RunRecord {
    pub fn steps_taken(&self) -> usize {
        self.samples.len().saturating_sub(1)
    }

    pub fn second_attempts(&self) -> usize {
        self.transcripts.iter().filter(|c| c.attempt == 2).count()
    }
}

/// Resets the environment and lets `agent` drive it for up to `budget` steps.
pub fn run_episode(
    env: &mut Environment,
    agent: &mut dyn Agent,
    budget: usize,
    run_index: usize,
    run_seed: u64,
) -> Result<RunRecord, HarnessError> {
    if budget == 0 {
        return Err(HarnessError::ZeroBudget);
    }
    env.reset()?;
    agent.set_budget(budget);
    let target = env.trial().target;
    let mut calls = Vec::new();
    let mut step_seconds = Vec::with_capacity(budget);
    let mut termination = Termination::BudgetExhausted;
    let mut detail = None;
    let mut successful_steps = 0;
    for _ in 0..budget {
        let started = Instant::now();
        match agent.propose(&target, env.history(), &mut calls) {
            Proposal::Settings(settings) => {
                env.step(&settings)?;
                successful_steps += 1;
                step_seconds.push(started.elapsed().as_secs_f64());
            }
            Proposal::Stop(reason, why) => {
                termination = reason;
                detail = Some(why);
                break;
            }
        }
    }
    let samples = env.history().to_vec();
    let mut clamp_counts = [0usize; 5];
    for s in &samples {
        for (count, flag) in clamp_counts.iter_mut().zip(s.clamped.0) {
            *count += usize::from(flag);
        }
    }
    Ok(RunRecord {
        trial_id: env.trial().trial_id.clone(),
        trial_seed: env.trial().seed,
        run_index,
        run_seed,
        optimizer: agent.id(),
        uses_model: agent.uses_model(),
        budget,
        target,
        samples,
        transcripts: calls,
        termination,
        termination_detail: detail,
        successful_steps,
        clamp_counts,
        fallbacks: agent.fallbacks(),
        step_seconds,
    })
}
