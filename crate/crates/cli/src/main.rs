//! `sgcot` command line: generate suites, run policies over them, score runs
//! and render artifacts.
//!
//! Exit codes: 0 success, 2 configuration error, 3 IO or input error,
//! 4 at least one episode failed or errored.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sgcot_core::agent::{GraphMode, GreedyPolicy, LlmPolicy, OraclePolicy, Policy, PolicyConfig, ScriptedPolicy, DEFAULT_MAX_TURNS};
use sgcot_core::chat::{ChatClient, ChatConfig, HttpChatClient, ReplayCache};
use sgcot_core::harness::{self, HarnessError, RunOptions, RunSummary};
use sgcot_core::scenario::{build_suite, read_suite, write_suite, Scenario, ScenarioError, SuiteConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_EPISODES: u8 = 4;

#[derive(Parser)]
#[command(name = "sgcot", version, about = "Scene-graph clarification benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario suite.
    Gen(GenArgs),
    /// Run a policy over a suite and write transcripts.
    Run(RunArgs),
    /// Score a run and write report.json and report.txt.
    Eval(EvalArgs),
    /// Pretty-print a scenario, transcript, world or graph file.
    Inspect { path: PathBuf },
    /// Re-run a transcript's recorded replies and check it reproduces.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output directory for the suite.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    clear: Option<u32>,
    #[arg(long)]
    multiplicity: Option<u32>,
    #[arg(long)]
    absence: Option<u32>,
    #[arg(long)]
    underspecified: Option<u32>,
    #[arg(long)]
    dual_stack: Option<u32>,
    #[arg(long)]
    dual_pass: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum PolicyKind {
    Oracle,
    Greedy,
    Scripted,
    Llm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum GraphModeArg {
    Query,
    FullInPrompt,
    NoEdges,
}

impl From<GraphModeArg> for GraphMode {
    fn from(m: GraphModeArg) -> Self {
        match m {
            GraphModeArg::Query => GraphMode::Query,
            GraphModeArg::FullInPrompt => GraphMode::FullInPrompt,
            GraphModeArg::NoEdges => GraphMode::NoEdges,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Suite directory written by `gen`.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Output directory for transcripts and the run summary.
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file with [run] and [chat] tables; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    policy: Option<PolicyKind>,
    /// Scripted policy source: a JSON script file or a run directory.
    #[arg(long)]
    scripts: Option<PathBuf>,
    #[arg(long, value_enum)]
    graph_mode: Option<GraphModeArg>,
    #[arg(long)]
    max_turns: Option<u32>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    retries: Option<u32>,
    /// Recorded in the run config; generation seeds live in the suite.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    /// Name of the environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    tool_role: Option<String>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    /// Allow network calls; misses are recorded into the cache.
    #[arg(long)]
    live: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    suite: PathBuf,
    /// Run directory written by `run`.
    #[arg(long)]
    run: PathBuf,
    /// Method name for the report; defaults to the run's policy.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Args)]
struct ReplayArgs {
    transcript: PathBuf,
    /// Suite containing the transcript's scenario.
    #[arg(long, conflicts_with = "scenario")]
    suite: Option<PathBuf>,
    /// Single scenario file.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    suite: FileSuite,
    #[serde(default)]
    run: FileRun,
    #[serde(default)]
    chat: FileChat,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSuite {
    seed: Option<u64>,
    clear: Option<u32>,
    multiplicity: Option<u32>,
    absence: Option<u32>,
    underspecified: Option<u32>,
    dual_stack: Option<u32>,
    dual_pass: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRun {
    suite: Option<PathBuf>,
    out: Option<PathBuf>,
    policy: Option<PolicyKind>,
    scripts: Option<PathBuf>,
    graph_mode: Option<GraphModeArg>,
    max_turns: Option<u32>,
    workers: Option<usize>,
    retries: Option<u32>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileChat {
    model: Option<String>,
    base_url: Option<String>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    api_key_env: Option<String>,
    tool_role: Option<String>,
    cache_dir: Option<PathBuf>,
    timeout_secs: Option<u64>,
}

/// Effective run configuration, echoed into run_summary.json and reports.
#[derive(Debug, Clone, Serialize)]
struct RunConfig {
    suite: PathBuf,
    out: PathBuf,
    policy: PolicyKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    scripts: Option<PathBuf>,
    graph_mode: GraphModeArg,
    max_turns: u32,
    workers: usize,
    retries: u32,
    seed: u64,
    live: bool,
    chat: ChatConfig,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_CONFIG, error: error.into() }
    }

    fn io(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_IO, error: error.into() }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) => Failure::config(e),
            _ => Failure::io(e),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::io(e)
    }
}

type CmdResult = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Inspect { path } => cmd_inspect(&path),
        Command::Replay(a) => cmd_replay(a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, Failure> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::io)?;
    toml::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::config)
}

fn cmd_gen(a: GenArgs) -> CmdResult {
    let file = load_config(a.config.as_deref())?.suite;
    let d = SuiteConfig::default();
    let config = SuiteConfig {
        master_seed: a.seed.or(file.seed).unwrap_or(d.master_seed),
        clear: a.clear.or(file.clear).unwrap_or(d.clear),
        multiplicity: a.multiplicity.or(file.multiplicity).unwrap_or(d.multiplicity),
        absence: a.absence.or(file.absence).unwrap_or(d.absence),
        underspecified: a.underspecified.or(file.underspecified).unwrap_or(d.underspecified),
        dual_stack: a.dual_stack.or(file.dual_stack).unwrap_or(d.dual_stack),
        dual_pass: a.dual_pass.or(file.dual_pass).unwrap_or(d.dual_pass),
    };
    let scenarios = build_suite(&config).map_err(Failure::config)?;
    let manifest = write_suite(&a.out, &config, &scenarios)?;
    println!("wrote {} scenarios to {}", manifest.scenarios.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn resolve_run(a: &RunArgs) -> Result<RunConfig, Failure> {
    let file = load_config(a.config.as_deref())?;
    let (r, c) = (file.run, file.chat);
    let d = ChatConfig::default();
    let suite = a.suite.clone().or(r.suite).ok_or_else(|| Failure::config(anyhow!("--suite is required")))?;
    let out = a.out.clone().or(r.out).ok_or_else(|| Failure::config(anyhow!("--out is required")))?;
    if !suite.is_dir() {
        return Err(Failure::config(anyhow!("suite directory {} does not exist", suite.display())));
    }
    let config = RunConfig {
        suite,
        out,
        policy: a.policy.or(r.policy).unwrap_or(PolicyKind::Oracle),
        scripts: a.scripts.clone().or(r.scripts),
        graph_mode: a.graph_mode.or(r.graph_mode).unwrap_or(GraphModeArg::Query),
        max_turns: a.max_turns.or(r.max_turns).unwrap_or(DEFAULT_MAX_TURNS),
        workers: a.workers.or(r.workers).unwrap_or(1),
        retries: a.retries.or(r.retries).unwrap_or(1),
        seed: a.seed.or(r.seed).unwrap_or(0),
        live: a.live,
        chat: ChatConfig {
            model: a.model.clone().or(c.model).unwrap_or(d.model),
            base_url: a.base_url.clone().or(c.base_url).unwrap_or(d.base_url),
            temperature: a.temperature.or(c.temperature).unwrap_or(d.temperature),
            max_tokens: a.max_tokens.or(c.max_tokens).or(d.max_tokens),
            api_key_env: a.api_key_env.clone().or(c.api_key_env).unwrap_or(d.api_key_env),
            tool_role: a.tool_role.clone().or(c.tool_role).unwrap_or(d.tool_role),
            cache_dir: a.cache_dir.clone().or(c.cache_dir).or(d.cache_dir),
            timeout_secs: a.timeout_secs.or(c.timeout_secs).unwrap_or(d.timeout_secs),
        },
    };
    if config.workers == 0 {
        return Err(Failure::config(anyhow!("--workers must be at least 1")));
    }
    Ok(config)
}

fn scripted_policy(path: &Path) -> Result<ScriptedPolicy, Failure> {
    if path.is_dir() {
        let mut policy = ScriptedPolicy::new();
        for t in harness::read_transcripts(path)? {
            policy.scripts.extend(ScriptedPolicy::from_transcript(&t).scripts);
        }
        return Ok(policy);
    }
    let text = harness::read_text(path)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing script {}", path.display()))
        .map_err(Failure::config)
}

fn build_policy(config: &RunConfig) -> Result<Box<dyn Policy>, Failure> {
    Ok(match config.policy {
        PolicyKind::Oracle => Box::new(OraclePolicy),
        PolicyKind::Greedy => Box::new(GreedyPolicy),
        PolicyKind::Scripted => {
            let path = config
                .scripts
                .as_deref()
                .ok_or_else(|| Failure::config(anyhow!("--policy scripted needs --scripts")))?;
            Box::new(scripted_policy(path)?)
        }
        PolicyKind::Llm => {
            let chat = &config.chat;
            let client: Box<dyn ChatClient> = match (&chat.cache_dir, config.live) {
                (Some(dir), false) => Box::new(ReplayCache::replay_only(dir)),
                (None, false) => {
                    return Err(Failure::config(anyhow!("--policy llm needs --cache-dir unless --live is given")))
                }
                (dir, true) => {
                    let http = Box::new(HttpChatClient::new(chat).map_err(Failure::config)?);
                    match dir {
                        Some(dir) => Box::new(ReplayCache::recording(dir, http)),
                        None => http,
                    }
                }
            };
            Box::new(LlmPolicy::new(client, chat.clone()))
        }
    })
}

fn cmd_run(a: RunArgs) -> CmdResult {
    let config = resolve_run(&a)?;
    let (_, scenarios) = read_suite(&config.suite)?;
    let policy = build_policy(&config)?;
    let opts = RunOptions {
        policy: PolicyConfig { max_turns: config.max_turns, graph_mode: config.graph_mode.into() },
        workers: config.workers,
        retries: config.retries,
    };
    let transcripts = harness::run_suite(&scenarios, policy.as_ref(), &opts)?;
    let echo = serde_json::to_value(&config).expect("run config serializes");
    let summary = RunSummary::new(&policy.name(), &transcripts, echo);
    harness::write_run(&config.out, &transcripts, &summary)?;
    println!(
        "{} episodes: {} completed, {} failed, {} errored",
        summary.episodes, summary.completed, summary.failed, summary.errored
    );
    if summary.failed + summary.errored > 0 {
        return Ok(ExitCode::from(EXIT_EPISODES));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let method = match a.method {
        Some(m) => m,
        None => std::fs::read_to_string(a.run.join(harness::RUN_SUMMARY_FILE))
            .ok()
            .and_then(|t| serde_json::from_str::<RunSummary>(&t).ok())
            .map(|s| s.policy)
            .unwrap_or_else(|| "run".to_string()),
    };
    let report = harness::evaluate_dirs(&a.suite, &a.run, &method)?;
    print!("{}", sgcot_core::eval::render_report(std::slice::from_ref(&report)));
    Ok(ExitCode::SUCCESS)
}

fn cmd_inspect(path: &Path) -> CmdResult {
    print!("{}", harness::inspect(path)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_replay(a: ReplayArgs) -> CmdResult {
    let t = harness::read_transcript(&a.transcript)?;
    let scenario: Scenario = match (&a.suite, &a.scenario) {
        (_, Some(path)) => Scenario::from_json(&harness::read_text(path)?)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(Failure::io)?,
        (Some(dir), None) => {
            let (_, suite) = read_suite(dir)?;
            suite
                .into_iter()
                .find(|s| s.id == t.scenario_id)
                .ok_or_else(|| Failure::io(anyhow!("scenario {} not in suite {}", t.scenario_id, dir.display())))?
        }
        (None, None) => return Err(Failure::config(anyhow!("replay needs --suite or --scenario"))),
    };
    let (again, same) = harness::replay(&t, &scenario);
    print!("{}", harness::render_transcript(&again));
    if same {
        println!("replay: identical");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("replay: differs");
        Ok(ExitCode::from(EXIT_EPISODES))
    }
}
