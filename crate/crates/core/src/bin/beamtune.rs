use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use beamtune::config::Config;
use beamtune::harness::{evaluate, read_report_dir, write_report, Agent, BaselineAgent, LlmAgent, SuiteSummary};
use beamtune::llm::{Backend, HttpBackend, OnExhaust, ScriptedBackend};
use beamtune::optimizers::{build, BaselineKind};
use beamtune::prompts::PromptKind;
use beamtune::task::{fixture, make_trial, ActuatorBox, Trial};

#[derive(Parser)]
#[command(name = "beamtune", version, about = "Beam tuning benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one optimizer on a set of trials.
    Run(RunArgs),
    /// Recompute summaries from the run records in a directory.
    Report {
        #[arg(long = "in")]
        dir: PathBuf,
    },
    /// Trial fixtures.
    Trials {
        #[command(subcommand)]
        command: TrialsCommand,
    },
}

#[derive(Subcommand)]
enum TrialsCommand {
    /// Generate trials from seeds and print or save them as TOML.
    Generate {
        #[arg(long = "seed", required = true, num_args = 1..)]
        seeds: Vec<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Bo,
    Es,
    Random,
    DoNothing,
    Llm,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    optimizer: OptimizerArg,
    /// Prompt template for `llm`.
    #[arg(long, default_value = "tuning")]
    prompt: PromptKind,
    /// Model name sent to the backend.
    #[arg(long)]
    model: Option<String>,
    /// Backend name from the config file.
    #[arg(long, conflicts_with = "script")]
    backend: Option<String>,
    /// JSON array of canned responses, replayed from the start in every run.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    trials_fixture: Option<PathBuf>,
    /// Runs per trial.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

fn load_trials(config: &Config, fixture_path: Option<&Path>) -> Result<Vec<Trial>> {
    if let Some(p) = fixture_path.or(config.harness.trials_fixture.as_deref()) {
        return Ok(fixture::load(p)?);
    }
    config
        .harness
        .trial_seeds
        .iter()
        .map(|&s| Ok(make_trial(s, &config.generator, &ActuatorBox::default())?))
        .collect()
}

fn read_script(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let script: Vec<String> =
        serde_json::from_str(&text).with_context(|| format!("{}: expected a JSON array of strings", path.display()))?;
    if script.is_empty() {
        bail!("{}: script is empty", path.display());
    }
    Ok(script)
}

type AgentFactory = Box<dyn Fn(&Trial, u64) -> Box<dyn Agent> + Sync>;

fn agent_factory(args: &RunArgs, config: &Config) -> Result<AgentFactory> {
    let baseline = |kind: BaselineKind| -> AgentFactory {
        let cfg = config.baselines.clone();
        Box::new(move |_, seed| Box::new(BaselineAgent(build(kind, &cfg, seed))))
    };
    Ok(match args.optimizer {
        OptimizerArg::Bo => baseline(BaselineKind::Bo),
        OptimizerArg::Es => baseline(BaselineKind::Es),
        OptimizerArg::Random => baseline(BaselineKind::Random),
        OptimizerArg::DoNothing => baseline(BaselineKind::DoNothing),
        OptimizerArg::Llm => {
            let kind = args.prompt;
            let settings = config.llm.clone();
            if let Some(path) = &args.script {
                let script = read_script(path)?;
                let model = args.model.clone().unwrap_or_else(|| "scripted".into());
                ScriptedBackend::from_texts(script.clone(), OnExhaust::RepeatLast)?;
                // a fresh tape per run keeps runs independent of scheduling
                Box::new(move |_, _| {
                    let backend = ScriptedBackend::from_texts(script.clone(), OnExhaust::RepeatLast)
                        .expect("script validated above");
                    Box::new(LlmAgent::new(Arc::new(backend), model.clone(), kind, settings.clone()))
                })
            } else {
                let Some(name) = &args.backend else {
                    bail!("--optimizer llm needs --backend or --script");
                };
                let Some(model) = args.model.clone() else {
                    bail!("--optimizer llm needs --model");
                };
                let backend: Arc<dyn Backend> = Arc::new(HttpBackend::new(config.backend(name)?.clone())?);
                Box::new(move |_, _| Box::new(LlmAgent::new(backend.clone(), model.clone(), kind, settings.clone())))
            }
        }
    })
}

fn print_summaries(summaries: &[SuiteSummary]) {
    for s in summaries {
        println!(
            "{:<32} runs {:>3}  successes {:>3}  final {:>9.1} ± {:<8.1} μm  improvement {:>7.1} %  integrated {:>6.1} %  tier {}",
            s.optimizer,
            s.runs.len(),
            s.tiers.successes,
            s.final_beam_difference_um.mean,
            s.final_beam_difference_um.sd,
            s.normalized_improvement_pct.mean,
            s.normalized_integrated_mae_pct.mean,
            s.tiers.best(),
        );
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(b) = args.budget {
        config.harness.budget = b;
    }
    if let Some(n) = args.seeds {
        config.harness.runs_per_trial = n;
    }
    if let Some(w) = args.workers {
        config.harness.workers = w;
    }
    config.validate()?;
    let trials = load_trials(&config, args.trials_fixture.as_deref())?;
    let factory = agent_factory(&args, &config)?;
    let h = &config.harness;
    let records = evaluate(
        &trials,
        h.runs_per_trial,
        h.budget,
        &config.geometry,
        config.noise,
        h.workers,
        &*factory,
    )?;
    let summaries = write_report(&args.out, &records)?;
    print_summaries(&summaries);
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Report { dir } => {
            print_summaries(&read_report_dir(&dir)?);
            Ok(())
        }
        Command::Trials {
            command: TrialsCommand::Generate { seeds, config, out },
        } => {
            let config = load_config(config.as_deref())?;
            let trials = seeds
                .iter()
                .map(|&s| make_trial(s, &config.generator, &ActuatorBox::default()))
                .collect::<Result<Vec<_>, _>>()?;
            match out {
                Some(p) => fixture::save(&p, &trials)?,
                None => print!("{}", fixture::to_string(&trials)?),
            }
            Ok(())
        }
    }
}
