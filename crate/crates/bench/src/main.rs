use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use toolgate::agent::{Agent, Scaffold, SessionConfig, DEFAULT_MAX_STEPS, DEFAULT_MODEL};
use toolgate::backend::{
    BackendError, ChatMessage, CompletionBackend, CompletionRequest, HttpBackend, HttpConfig, Reply,
    RequestTag, ScriptedBackend,
};
use toolgate::bench::{
    fixture_report, load_corpus, render_report, run_benchmark, BenchOptions, ReportFormat,
    Table2Fixture,
};
use toolgate::gate::{rule_classifier, Classifier, Gate};
use toolgate::intent::{propose_intent_map, IntentLabeler, IntentMap, ProposalInput};
use toolgate::registry::{ToolRegistry, ToolSchema};
use toolgate::synthetic;
use toolgate::tokens::TokenSource;

/// Marks errors caused by bad arguments or unreadable inputs (exit code 2).
#[derive(Debug)]
struct ConfigError(anyhow::Error);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| ConfigError(e).into())
}

#[derive(Parser)]
#[command(name = "bench", version, about = "Benchmark intent-gated tool selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a corpus under the chosen configurations and write a metrics report.
    Run(RunArgs),
    /// Run every scaffold gated and ungated and print the comparison table.
    Ab(RunArgs),
    /// Replay recorded per-scaffold token totals through the report pipeline.
    Fixtures(FixtureArgs),
    /// Draft an intent map from a corpus of prompts.
    Propose(ProposeArgs),
    /// Write the synthetic benchmark suite to a directory.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Gating {
    On,
    Off,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ClassifierKind {
    /// Ask the planner backend.
    Backend,
    /// Keyword overlap with the intent map's example queries.
    Rule,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Tokenizer {
    Desk,
    Endpoint,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    registry: PathBuf,
    #[arg(long)]
    intent_map: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Scripted replies; mutually exclusive with --endpoint.
    #[arg(long, conflicts_with = "endpoint")]
    script: Option<PathBuf>,
    /// Chat-completions URL; the key is read from LLM_API_KEY.
    #[arg(long)]
    endpoint: Option<String>,
    /// Scaffold to run; repeat for several, or `all`.
    #[arg(long, default_value = "cot-zero")]
    scaffold: Vec<String>,
    #[arg(long, value_enum, default_value_t = Gating::Both)]
    gating: Gating,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format; guessed from --out when omitted.
    #[arg(long)]
    format: Option<ReportFormat>,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: usize,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value = DEFAULT_MODEL)]
    model: String,
    /// File holding the few-shot exemplar block.
    #[arg(long)]
    exemplars: Option<PathBuf>,
    /// File holding the classifier prompt template.
    #[arg(long)]
    classifier_prompt: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ClassifierKind::Backend)]
    classifier: ClassifierKind,
    #[arg(long, value_enum, default_value_t = Tokenizer::Desk)]
    tokenizer: Tokenizer,
    /// Run the tool calls of one step on separate threads.
    #[arg(long)]
    parallel_tools: bool,
    /// Write every trajectory and its ledger as JSON lines.
    #[arg(long)]
    trajectories: Option<PathBuf>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    table2: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<ReportFormat>,
}

#[derive(Args)]
struct ProposeArgs {
    #[arg(long)]
    registry: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Label prompts with the keyword classifier over an existing map.
    #[arg(long, conflicts_with = "endpoint")]
    seed_map: Option<PathBuf>,
    /// Label prompts by asking a chat-completions endpoint.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = DEFAULT_MODEL)]
    model: String,
    /// Do not use the corpus' required tools as reference trajectories.
    #[arg(long)]
    no_reference: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = synthetic::DEFAULT_TASKS)]
    tasks: usize,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args, false),
        Command::Ab(args) => run(args, true),
        Command::Fixtures(args) => fixtures(args),
        Command::Propose(args) => propose(args),
        Command::Synth(args) => synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn parse_scaffolds(values: &[String]) -> Result<Vec<Scaffold>> {
    let mut out = Vec::new();
    for v in values {
        let expanded: Vec<Scaffold> = if v == "all" {
            Scaffold::ALL.to_vec()
        } else {
            vec![v.parse().map_err(|e: String| anyhow::anyhow!(e))?]
        };
        for s in expanded {
            if !out.contains(&s) {
                out.push(s);
            }
        }
    }
    Ok(out)
}

fn output(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn report_format(format: Option<ReportFormat>, out: Option<&Path>) -> ReportFormat {
    format.unwrap_or_else(|| out.map_or(ReportFormat::Json, ReportFormat::from_path))
}

struct Setup {
    agent: Agent,
    configs: Vec<SessionConfig>,
    corpus: Vec<toolgate::agent::TaskSpec>,
    options: BenchOptions,
}

fn setup(args: &RunArgs, ab: bool) -> Result<Setup> {
    let registry = Arc::new(ToolRegistry::load(&args.registry)?);
    let map = Arc::new(IntentMap::load(&args.intent_map)?);
    let mut gate = Gate::new(registry.clone(), map)?;
    if let Some(path) = &args.classifier_prompt {
        gate = gate.with_template(read(path)?)?;
    }
    let corpus = load_corpus(&args.corpus, &registry)?;
    let planner: Arc<dyn CompletionBackend> = match (&args.script, &args.endpoint) {
        (Some(path), _) => Arc::new(ScriptedBackend::load(path)?),
        (None, Some(url)) => Arc::new(HttpBackend::new(HttpConfig::new(url).with_env_key())),
        (None, None) => bail!("either --script or --endpoint is required"),
    };
    let classifier = match args.classifier {
        ClassifierKind::Backend => Classifier::Backend(planner.clone()),
        ClassifierKind::Rule => Classifier::Rule,
    };
    if args.workers == 0 {
        bail!("--workers must be at least 1");
    }
    if args.max_steps == 0 {
        bail!("--max-steps must be at least 1");
    }
    let exemplars: Option<Arc<str>> = match &args.exemplars {
        Some(path) => Some(read(path)?.into()),
        None => None,
    };
    let scaffolds = if ab {
        Scaffold::ALL.to_vec()
    } else {
        parse_scaffolds(&args.scaffold)?
    };
    let gatings: &[bool] = match (ab, args.gating) {
        (true, _) | (false, Gating::Both) => &[false, true],
        (false, Gating::On) => &[true],
        (false, Gating::Off) => &[false],
    };
    let mut configs = Vec::new();
    for &scaffold in &scaffolds {
        for &gating in gatings {
            let mut c = SessionConfig::new(scaffold, gating);
            c.max_steps = args.max_steps;
            c.temperature = args.temperature;
            c.model = args.model.clone();
            c.exemplars = exemplars.clone();
            c.parallel_tools = args.parallel_tools;
            configs.push(c);
        }
    }
    Ok(Setup {
        agent: Agent::new(gate, planner, classifier),
        configs,
        corpus,
        options: BenchOptions {
            workers: args.workers,
            token_source: match args.tokenizer {
                Tokenizer::Desk => TokenSource::Desk,
                Tokenizer::Endpoint => TokenSource::Endpoint,
            },
        },
    })
}

fn run(args: RunArgs, ab: bool) -> Result<()> {
    let setup = config(setup(&args, ab))?;
    if setup.corpus.is_empty() {
        eprintln!("nothing to run: the corpus is empty");
        return Ok(());
    }
    let run = run_benchmark(&setup.corpus, &setup.configs, &setup.agent, setup.options)?;
    if let Some(path) = &args.trajectories {
        let mut text = String::new();
        for result in &run.results {
            text.push_str(&serde_json::to_string(result)?);
            text.push('\n');
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    let out = args.out.as_deref();
    let format = if ab && args.format.is_none() && out.is_none() {
        ReportFormat::Markdown
    } else {
        report_format(args.format, out)
    };
    output(&render_report(&run.report, format), out)
}

fn fixtures(args: FixtureArgs) -> Result<()> {
    let fixture = config(Table2Fixture::load(&args.table2).map_err(Into::into))?;
    let report = config(fixture_report(&fixture).map_err(Into::into))?;
    let out = args.out.as_deref();
    let format = args
        .format
        .unwrap_or_else(|| out.map_or(ReportFormat::Markdown, ReportFormat::from_path));
    output(&render_report(&report, format), out)
}

struct RuleLabeler(IntentMap);

impl IntentLabeler for RuleLabeler {
    fn label(&self, prompt: &str) -> Result<String, BackendError> {
        Ok(rule_classifier(prompt, &self.0))
    }
}

struct BackendLabeler {
    backend: HttpBackend,
    model: String,
}

impl IntentLabeler for BackendLabeler {
    fn label(&self, prompt: &str) -> Result<String, BackendError> {
        let request = CompletionRequest {
            model: self.model.clone(),
            messages: vec![ChatMessage::user(format!(
                "Name the intent of this request in at most four words. Reply with the name only.\n\nRequest: {prompt}"
            ))],
            tools: ToolSchema::empty(),
            temperature: 0.0,
        };
        match self.backend.complete(&RequestTag::classify("propose", 0), &request)?.reply {
            Reply::Content(text) => Ok(text),
            Reply::ToolCalls(_) => Err(BackendError::MalformedResponse(
                "expected an intent label, got tool calls".into(),
            )),
        }
    }
}

fn propose(args: ProposeArgs) -> Result<()> {
    let (registry, corpus, labeler) = config((|| {
        let registry = ToolRegistry::load(&args.registry)?;
        let corpus = load_corpus(&args.corpus, &registry)?;
        let labeler: Box<dyn IntentLabeler> = match (&args.seed_map, &args.endpoint) {
            (Some(path), _) => Box::new(RuleLabeler(IntentMap::load(path)?)),
            (None, Some(url)) => Box::new(BackendLabeler {
                backend: HttpBackend::new(HttpConfig::new(url).with_env_key()),
                model: args.model.clone(),
            }),
            (None, None) => bail!("either --seed-map or --endpoint is required"),
        };
        Ok((registry, corpus, labeler))
    })())?;
    if corpus.is_empty() {
        eprintln!("nothing to run: the corpus is empty");
        return Ok(());
    }
    let inputs: Vec<ProposalInput> = corpus
        .iter()
        .map(|t| ProposalInput {
            prompt: t.prompt.clone(),
            invoked_tools: (!args.no_reference && !t.required_tools.is_empty())
                .then(|| t.required_tools.iter().cloned().collect()),
        })
        .collect();
    let draft = propose_intent_map(&inputs, labeler.as_ref(), &registry)?;
    draft
        .write(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let review = draft.intents.iter().filter(|i| i.needs_review).count();
    eprintln!(
        "wrote {} draft intents to {} ({review} need review)",
        draft.intents.len(),
        args.out.display()
    );
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let suite = synthetic::generate(args.tasks);
    suite
        .write_to(&args.out_dir)
        .with_context(|| format!("writing {}", args.out_dir.display()))?;
    eprintln!("wrote {} tasks to {}", suite.corpus.len(), args.out_dir.display());
    Ok(())
}
