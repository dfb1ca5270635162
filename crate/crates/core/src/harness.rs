//! File-level workflows behind the command line: run a suite, persist
//! transcripts, evaluate a run, render artifacts and replay transcripts.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent::{run_episode, split_prompt, EpisodeStatus, Policy, PolicyConfig, ScriptedPolicy, Transcript, TranscriptError};
use crate::eval::{aggregate, render_report, score, EvalError, Report};
use crate::scenario::{read_suite, Scenario, ScenarioError};
use crate::scene_graph::{ParseError, SceneGraph};
use crate::world::WorldState;

pub const TRANSCRIPT_DIR: &str = "transcripts";
pub const RUN_SUMMARY_FILE: &str = "run_summary.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{path}: {source}")]
    Transcript {
        path: PathBuf,
        #[source]
        source: TranscriptError,
    },
    #[error("{path}: {source}")]
    Graph {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

pub fn read_text(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub policy: PolicyConfig,
    /// Worker threads; at least 1.
    pub workers: usize,
    /// Extra attempts for episodes that end in a transport error.
    pub retries: u32,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { policy: PolicyConfig::default(), workers: 1, retries: 1 }
    }
}

fn run_with_retries(s: &Scenario, policy: &dyn Policy, opts: &RunOptions) -> Transcript {
    let mut t = run_episode(s, policy, &opts.policy);
    for _ in 0..opts.retries {
        if !t.is_errored() {
            break;
        }
        t = run_episode(s, policy, &opts.policy);
    }
    t
}

/// Runs every scenario; output order follows `scenarios`.
pub fn run_suite(scenarios: &[Scenario], policy: &dyn Policy, opts: &RunOptions) -> Result<Vec<Transcript>, HarnessError> {
    if opts.workers == 0 {
        return Err(HarnessError::Config("workers must be at least 1".into()));
    }
    if opts.workers == 1 {
        return Ok(scenarios.iter().map(|s| run_with_retries(s, policy, opts)).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(pool.install(|| scenarios.par_iter().map(|s| run_with_retries(s, policy, opts)).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub episodes: usize,
    pub completed: usize,
    pub failed: usize,
    pub errored: usize,
    pub failed_ids: Vec<String>,
    pub errored_ids: Vec<String>,
    /// Effective configuration of the run.
    pub config: Value,
}

impl RunSummary {
    pub fn new(policy: &str, transcripts: &[Transcript], config: Value) -> Self {
        let ids = |f: fn(&EpisodeStatus) -> bool| -> Vec<String> {
            transcripts.iter().filter(|t| f(&t.status)).map(|t| t.scenario_id.clone()).collect()
        };
        let failed_ids = ids(|s| matches!(s, EpisodeStatus::Failed { .. }));
        let errored_ids = ids(|s| matches!(s, EpisodeStatus::Errored { .. }));
        RunSummary {
            policy: policy.to_string(),
            episodes: transcripts.len(),
            completed: transcripts.len() - failed_ids.len() - errored_ids.len(),
            failed: failed_ids.len(),
            errored: errored_ids.len(),
            failed_ids,
            errored_ids,
            config,
        }
    }
}

pub fn transcript_path(out_dir: &Path, scenario_id: &str) -> PathBuf {
    out_dir.join(TRANSCRIPT_DIR).join(format!("{scenario_id}.jsonl"))
}

pub fn write_run(out_dir: &Path, transcripts: &[Transcript], summary: &RunSummary) -> Result<(), HarnessError> {
    for t in transcripts {
        write_text(&transcript_path(out_dir, &t.scenario_id), &t.to_jsonl())?;
    }
    let text = serde_json::to_string_pretty(summary).expect("summary serialization is infallible");
    write_text(&out_dir.join(RUN_SUMMARY_FILE), &format!("{text}\n"))
}

pub fn read_transcript(path: &Path) -> Result<Transcript, HarnessError> {
    Transcript::from_jsonl(&read_text(path)?).map_err(|source| HarnessError::Transcript { path: path.to_path_buf(), source })
}

/// Transcripts of a run directory (or a bare directory of `.jsonl` files),
/// sorted by file name.
pub fn read_transcripts(dir: &Path) -> Result<Vec<Transcript>, HarnessError> {
    let nested = dir.join(TRANSCRIPT_DIR);
    let dir = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_transcript(p)).collect()
}

/// Scores a run against its suite.
pub fn evaluate(suite: &[Scenario], transcripts: &[Transcript]) -> Result<Report, HarnessError> {
    let scores = transcripts
        .par_iter()
        .map(|t| {
            let s = suite
                .iter()
                .find(|s| s.id == t.scenario_id)
                .ok_or_else(|| EvalError::UnknownScenario(t.scenario_id.clone()))?;
            score(t, s)
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(aggregate(&scores, suite)?)
}

/// Evaluates `run_dir` against `suite_dir` and writes the report pair next
/// to the transcripts.
pub fn evaluate_dirs(suite_dir: &Path, run_dir: &Path, method: &str) -> Result<Report, HarnessError> {
    let (_, suite) = read_suite(suite_dir)?;
    let transcripts = read_transcripts(run_dir)?;
    let config = fs::read_to_string(run_dir.join(RUN_SUMMARY_FILE))
        .ok()
        .and_then(|t| serde_json::from_str::<RunSummary>(&t).ok())
        .map(|s| s.config)
        .unwrap_or(Value::Null);
    let report = evaluate(&suite, &transcripts)?.with_meta(method, config);
    write_report(run_dir, &report)?;
    Ok(report)
}

pub fn write_report(dir: &Path, report: &Report) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(report).expect("report serialization is infallible");
    write_text(&dir.join(REPORT_JSON), &format!("{json}\n"))?;
    write_text(&dir.join(REPORT_TEXT), &render_report(std::slice::from_ref(report)))
}

pub fn render_graph(graph: &SceneGraph) -> String {
    let mut out = format!("{} nodes, {} edges\n", graph.nodes().len(), graph.edges().len());
    for n in graph.nodes() {
        let attrs: Vec<String> = n.attributes.iter().map(|(k, v)| format!("{k}={v}")).collect();
        out.push_str(&format!("  node {} [{}]\n", n.id, attrs.join(", ")));
    }
    for e in graph.edges() {
        out.push_str(&format!("  {}\n", e.sentence()));
    }
    out
}

pub fn render_world(world: &WorldState) -> String {
    let mut out = format!("grid {} cols x {} rows\n", world.layout.cols, world.layout.rows);
    let mut grid = vec![vec![".".to_string(); world.layout.cols as usize]; world.layout.rows as usize];
    for (i, o) in world.objects.iter().enumerate() {
        if let Some(c) = o.cell {
            grid[c.row as usize][c.col as usize] = (i + 1).to_string();
        }
    }
    for row in grid {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>3}")).collect();
        out.push_str(&cells.concat());
        out.push('\n');
    }
    for (i, o) in world.objects.iter().enumerate() {
        let at = match (&o.cell, &o.container, &o.on_top_of) {
            (Some(c), _, _) => format!("at {c}"),
            (_, Some(b), _) => format!("inside {b}"),
            (_, _, Some(s)) => format!("on top of {s}"),
            _ => "held".to_string(),
        };
        out.push_str(&format!("{:>3} {} {at}\n", i + 1, o.id));
    }
    out
}

pub fn render_scenario(s: &Scenario) -> String {
    let mut out = format!("scenario {} ({:?}, label {})\n", s.id, s.mode, s.label.as_str());
    out.push_str(&format!("instruction: {}\n\n", s.instruction.text));
    out.push_str(&render_world(&s.world));
    out.push('\n');
    match crate::agent::episode_graph(s, crate::agent::GraphMode::Query) {
        Ok(g) => out.push_str(&render_graph(&g)),
        Err(e) => out.push_str(&format!("graph unavailable: {e}\n")),
    }
    out
}

/// Instruction text as it appears in P_0.
pub fn instruction_of(t: &Transcript) -> &str {
    let (_, user) = split_prompt(&t.history.initial_prompt);
    user.lines().next().unwrap_or("").trim_start_matches("User: ")
}

pub fn render_transcript(t: &Transcript) -> String {
    t.history.dialogue(instruction_of(t))
}

/// Renders a scenario, transcript or graph file; the kind is detected from
/// the content.
pub fn inspect(path: &Path) -> Result<String, HarnessError> {
    let text = read_text(path)?;
    let parse_err = |message: String| HarnessError::Parse { path: path.to_path_buf(), message };
    if path.extension().is_some_and(|x| x == "jsonl") {
        return Ok(render_transcript(&read_transcript(path)?));
    }
    let value: Value = serde_json::from_str(&text).map_err(|e| parse_err(format!("line {} column {}: {e}", e.line(), e.column())))?;
    if value.get("world").is_some() {
        let s = Scenario::from_json(&text).map_err(|e| parse_err(format!("line {} column {}: {e}", e.line(), e.column())))?;
        return Ok(render_scenario(&s));
    }
    if value.get("nodes").is_some() {
        let g = SceneGraph::parse(&text).map_err(|source| HarnessError::Graph { path: path.to_path_buf(), source })?;
        return Ok(render_graph(&g));
    }
    if value.get("objects").is_some() {
        let w: WorldState = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        return Ok(render_world(&w));
    }
    Err(parse_err("not a scenario, transcript, world or graph file".into()))
}

/// Re-runs a transcript's recorded replies and reports whether the new
/// transcript is identical.
pub fn replay(t: &Transcript, scenario: &Scenario) -> (Transcript, bool) {
    let policy = ScriptedPolicy::from_transcript(t);
    let mut again = run_episode(scenario, &policy, &t.config);
    again.policy = t.policy.clone();
    let same = again == *t;
    (again, same)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::OraclePolicy;
    use crate::scenario::{build_suite, SuiteConfig};

    #[test]
    fn empty_graph_render() {
        assert_eq!(render_graph(&SceneGraph::empty()), "0 nodes, 0 edges\n");
    }

    #[test]
    fn parallel_and_serial_runs_agree() {
        let cfg = SuiteConfig { clear: 6, multiplicity: 3, absence: 3, underspecified: 3, ..SuiteConfig::empty(5) };
        let suite = build_suite(&cfg).unwrap();
        let serial = run_suite(&suite, &OraclePolicy, &RunOptions::default()).unwrap();
        let parallel = run_suite(&suite, &OraclePolicy, &RunOptions { workers: 8, ..Default::default() }).unwrap();
        assert_eq!(serial, parallel);
        assert!(run_suite(&suite, &OraclePolicy, &RunOptions { workers: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn replay_is_identical() {
        let suite = build_suite(&SuiteConfig { clear: 3, multiplicity: 2, ..SuiteConfig::empty(9) }).unwrap();
        for s in &suite {
            let t = run_episode(s, &OraclePolicy, &PolicyConfig::default());
            let (_, same) = replay(&t, s);
            assert!(same, "{}", s.id);
        }
    }
}
