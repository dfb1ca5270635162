//! The reasoning loop: prompt assembly, tool-call interception, history
//! accumulation and termination, plus the policy abstraction.

pub mod greedy;
pub mod llm;
pub mod oracle;
pub mod parser;
pub mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{approx_tokens, CostCounters};
use crate::instruction::InstructionSpec;
use crate::scene_graph::{DegradeMode, GraphSchema, NodeId, SceneGraph};
use crate::scenario::{Mode, Scenario};
use crate::world::{Action, ActionOutcome};

pub use greedy::GreedyPolicy;
pub use llm::LlmPolicy;
pub use oracle::OraclePolicy;
pub use parser::{parse_policy_output, Arg, ParsedOutput, ToolCall, ToolName};
pub use scripted::{ScriptedPolicy, ScriptedReply};

pub const DEFAULT_MAX_TURNS: u32 = 8;

/// Note shown to the policy on the forced-conclusion invocation.
pub const FORCED_NOTE: &str =
    "System: Maximum turns reached. Conclude now: reply with pick_and_place(...) or ask(...) lines only.";

const SYSTEM_PROMPT: &str = "\
System: You are a tabletop robot arm. Before acting, ground the user's instruction in the scene graph.
Reply with a few lines of reasoning, then one or more call lines. A reply holds either retrieval calls or actions, never both.
Retrieval functions:
  retrieve_node(attr_key='<key>', attr_val='<value>')  ids of nodes whose attribute matches; several key='value' filters may be given instead
  retrieve_edge(source='<id>', target='<id>', relation='<relation>')  relation sentences; give at least one argument
Actions:
  pick_and_place('<pick id>', '<place id>')
  ask('<question>', '<tag>')  tag is one of multiplicity, absence, underspecified; ask_<tag>(\"<question>\") also works";

const DUAL_ACTIONS: &str = "\
  ask_robot('<question>')  ask the other robot about objects outside your view
  pick_and_place('<pick id>', 'shared')  put the object in the shared workspace";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    #[default]
    Query,
    /// Serialized graph in the prompt; retrieval calls are refused.
    FullInPrompt,
    /// Same nodes, no edges.
    NoEdges,
}

impl GraphMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GraphMode::Query => "query",
            GraphMode::FullInPrompt => "full_in_prompt",
            GraphMode::NoEdges => "no_edges",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub max_turns: u32,
    pub graph_mode: GraphMode,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { max_turns: DEFAULT_MAX_TURNS, graph_mode: GraphMode::Query }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Emission {
    ToolCalls { calls: Vec<ToolCall> },
    Actions { lines: Vec<String>, actions: Vec<Action> },
    Malformed { diagnostic: String },
}

/// One policy invocation: thought, emission and (for tool calls) results.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    /// Reply text exactly as returned.
    pub raw: String,
    pub thought: String,
    pub emission: Emission,
    /// One entry per executed call, in call order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub results: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub forced: bool,
}

impl Turn {
    /// R_t as fed back to the policy; the diagnostic for malformed turns.
    pub fn tool_result(&self) -> Option<String> {
        match &self.emission {
            Emission::ToolCalls { .. } if !self.forced => Some(self.results.join(", ")),
            Emission::Malformed { diagnostic } if !self.forced => Some(format!("error: {diagnostic}")),
            _ => None,
        }
    }

    fn llm_lines(&self) -> Vec<String> {
        match &self.emission {
            Emission::ToolCalls { calls } => calls.iter().map(|c| c.raw.clone()).collect(),
            Emission::Actions { lines, .. } => lines.clone(),
            Emission::Malformed { .. } => self.raw.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect(),
        }
    }

    fn render(&self) -> String {
        let mut blocks = Vec::new();
        if self.forced {
            blocks.push(FORCED_NOTE.to_string());
        }
        let malformed = matches!(self.emission, Emission::Malformed { .. });
        if !self.thought.is_empty() && !malformed {
            blocks.push(prefix_lines("LLM: ", &self.thought));
        }
        let lines = self.llm_lines();
        if !lines.is_empty() {
            blocks.push(prefix_lines("LLM: ", &lines.join("\n")));
        }
        match (&self.emission, self.tool_result()) {
            (Emission::ToolCalls { .. }, Some(r)) => blocks.push(format!("SG: {r}")),
            (Emission::Malformed { diagnostic }, _) => blocks.push(format!("System: {diagnostic}")),
            _ => {}
        }
        blocks.join("\n\n")
    }
}

fn prefix_lines(prefix: &str, text: &str) -> String {
    text.lines().map(|l| format!("{prefix}{l}")).collect::<Vec<_>>().join("\n")
}

/// P_0 followed by the turns, append-only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub initial_prompt: String,
    pub turns: Vec<Turn>,
}

impl History {
    pub fn new(initial_prompt: String) -> Self {
        History { initial_prompt, turns: Vec::new() }
    }

    pub fn push(&mut self, turn: Turn) {
        self.turns.push(turn);
    }

    /// Serialized H_t. Each appended turn only extends this text.
    pub fn render(&self) -> String {
        let mut out = self.initial_prompt.clone();
        for turn in &self.turns {
            out.push_str("\n\n");
            out.push_str(&turn.render());
        }
        out
    }

    /// The system and user halves of P_0.
    pub fn prompt_parts(&self) -> (&str, &str) {
        split_prompt(&self.initial_prompt)
    }

    /// Dialogue view: user instruction followed by the turns.
    pub fn dialogue(&self, instruction: &str) -> String {
        let mut out = format!("User: {instruction}");
        for turn in &self.turns {
            out.push_str("\n\n");
            out.push_str(&turn.render());
        }
        out.push('\n');
        out
    }
}

pub fn split_prompt(prompt: &str) -> (&str, &str) {
    match prompt.find("\n\nUser: ") {
        Some(i) => (&prompt[..i], &prompt[i + 2..]),
        None => ("", prompt),
    }
}

pub fn render_id_list<'a>(ids: impl IntoIterator<Item = &'a NodeId>) -> String {
    let quoted: Vec<String> = ids
        .into_iter()
        .map(|id| format!("'{}'", id.as_str().replace('\\', "\\\\").replace('\'', "\\'")))
        .collect();
    format!("[{}]", quoted.join(", "))
}

/// Inverse of [`render_id_list`].
pub fn parse_id_list(text: &str) -> Option<Vec<String>> {
    let inner = text.trim().strip_prefix('[')?.strip_suffix(']')?;
    if inner.trim().is_empty() {
        return Some(Vec::new());
    }
    let args = parser::parse_args(inner).ok()?;
    args.into_iter().map(|a| a.key.is_none().then_some(a.value)).collect()
}

/// P_0 = instruction, detected objects, and the graph schema (or the whole
/// graph in `full_in_prompt` mode).
pub fn initial_prompt(
    instr: &InstructionSpec,
    objects: &[NodeId],
    schema: &GraphSchema,
    mode: GraphMode,
    dual: bool,
    graph: &SceneGraph,
) -> String {
    let mut out = SYSTEM_PROMPT.to_string();
    if dual {
        out.push('\n');
        out.push_str(DUAL_ACTIONS);
    }
    out.push_str("\n\nUser: ");
    out.push_str(&instr.text);
    out.push_str("\nDetected objects: ");
    out.push_str(&render_id_list(objects));
    match mode {
        GraphMode::FullInPrompt => {
            out.push_str("\nScene graph:\n");
            out.push_str(&graph.serialize());
        }
        GraphMode::Query | GraphMode::NoEdges => {
            let keys: Vec<&str> = schema.attribute_keys.iter().map(String::as_str).collect();
            let rels: Vec<&str> = schema.relations.iter().map(String::as_str).collect();
            out.push_str(&format!("\nAttribute keys: {}", keys.join(", ")));
            out.push_str(&format!("\nRelations: {}", rels.join(", ")));
        }
    }
    out
}

fn node_filters(args: &[Arg]) -> Result<Vec<(String, String)>, String> {
    let mut filters = Vec::new();
    let mut attr_key = None;
    let mut attr_val = None;
    for arg in args {
        match arg.key.as_deref() {
            None => return Err(format!("retrieve_node takes named arguments, got positional '{}'", arg.value)),
            Some("attr_key") => attr_key = Some(arg.value.clone()),
            Some("attr_val") => attr_val = Some(arg.value.clone()),
            Some(k) => filters.push((k.to_string(), arg.value.clone())),
        }
    }
    match (attr_key, attr_val) {
        (Some(k), Some(v)) => filters.insert(0, (k, v)),
        (None, None) => {}
        _ => return Err("attr_key and attr_val must be given together".to_string()),
    }
    Ok(filters)
}

fn edge_filters(args: &[Arg]) -> Result<[Option<String>; 3], String> {
    let mut out: [Option<String>; 3] = Default::default();
    let mut position = 0;
    for arg in args {
        let slot = match arg.key.as_deref() {
            None => {
                position += 1;
                position - 1
            }
            Some("source" | "src" | "subject") => 0,
            Some("target" | "tgt" | "object") => 1,
            Some("relation" | "type" | "rel") => 2,
            Some(other) => return Err(format!("retrieve_edge has no argument '{other}'; use source, target, relation")),
        };
        if slot > 2 {
            return Err("retrieve_edge takes at most three arguments".to_string());
        }
        out[slot] = Some(arg.value.clone());
    }
    Ok(out)
}

/// Executes one retrieval call and renders its result text.
pub fn execute_call(graph: &SceneGraph, call: &ToolCall, mode: GraphMode) -> String {
    if mode == GraphMode::FullInPrompt {
        return "error: retrieval is disabled; the scene graph is in the prompt".to_string();
    }
    let result = match call.name {
        ToolName::RetrieveNode => node_filters(&call.args)
            .and_then(|f| graph.retrieve_node(&f).map_err(|e| e.to_string()))
            .map(|ids| render_id_list(&ids)),
        ToolName::RetrieveEdge => edge_filters(&call.args).and_then(|[s, t, r]| {
            graph
                .retrieve_edge(s.as_deref(), t.as_deref(), r.as_deref())
                .map_err(|e| e.to_string())
                .map(|sentences| if sentences.is_empty() { "[]".to_string() } else { sentences.join(", ") })
        }),
    };
    result.unwrap_or_else(|e| format!("error: {e}"))
}

/// What a policy sees on each invocation.
pub struct PolicyRequest<'a> {
    /// Ground-truth access, used only by the reference policies.
    pub scenario: &'a Scenario,
    pub history: &'a History,
    pub config: &'a PolicyConfig,
    pub forced: bool,
    /// Serialized history, with the forced note appended when forced.
    pub prompt: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyReply {
    pub text: String,
    /// Provider token usage `(in, out)`; approximated when absent.
    pub usage: Option<(u64, u64)>,
    pub truncated: bool,
}

impl PolicyReply {
    pub fn text(text: impl Into<String>) -> Self {
        PolicyReply { text: text.into(), usage: None, truncated: false }
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy transport failure: {0}")]
    Transport(String),
}

pub trait Policy: Send + Sync {
    fn name(&self) -> String;
    fn respond(&self, request: &PolicyRequest<'_>) -> Result<PolicyReply, PolicyError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EpisodeStatus {
    Completed,
    /// Method failure: counted as SR 0.
    Failed { reason: String },
    /// Infrastructure failure: flagged and excluded from CQR.
    Errored { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub scenario_id: String,
    pub policy: String,
    pub config: PolicyConfig,
    pub history: History,
    pub final_actions: Vec<Action>,
    pub outcomes: Vec<ActionOutcome>,
    pub cost: CostCounters,
    pub status: EpisodeStatus,
    pub forced_conclusion: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header {
        scenario_id: String,
        policy: String,
        config: PolicyConfig,
        initial_prompt: String,
    },
    Turn {
        t: usize,
        #[serde(flatten)]
        turn: Turn,
    },
    Summary {
        scenario_id: String,
        final_actions: Vec<Action>,
        outcomes: Vec<ActionOutcome>,
        cost: CostCounters,
        #[serde(flatten)]
        status: EpisodeStatus,
        forced_conclusion: bool,
    },
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("transcript has no {0} record")]
    Missing(&'static str),
}

impl Transcript {
    /// One header line, one line per turn, one summary line.
    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![Record::Header {
            scenario_id: self.scenario_id.clone(),
            policy: self.policy.clone(),
            config: self.config,
            initial_prompt: self.history.initial_prompt.clone(),
        }];
        lines.extend(self.history.turns.iter().enumerate().map(|(t, turn)| Record::Turn { t, turn: turn.clone() }));
        lines.push(Record::Summary {
            scenario_id: self.scenario_id.clone(),
            final_actions: self.final_actions.clone(),
            outcomes: self.outcomes.clone(),
            cost: self.cost.clone(),
            status: self.status.clone(),
            forced_conclusion: self.forced_conclusion,
        });
        let mut out = String::new();
        for r in &lines {
            out.push_str(&serde_json::to_string(r).expect("transcript serialization is infallible"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TranscriptError> {
        let mut header = None;
        let mut turns = Vec::new();
        let mut summary = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let record: Record =
                serde_json::from_str(line).map_err(|e| TranscriptError::Parse { line: i + 1, message: e.to_string() })?;
            match record {
                Record::Header { .. } if header.is_some() => {
                    return Err(TranscriptError::Parse { line: i + 1, message: "second header record".into() })
                }
                Record::Header { scenario_id, policy, config, initial_prompt } => {
                    header = Some((scenario_id, policy, config, initial_prompt))
                }
                Record::Turn { t, turn } => {
                    if t != turns.len() {
                        return Err(TranscriptError::Parse { line: i + 1, message: format!("turn {t} out of order") });
                    }
                    turns.push(turn);
                }
                Record::Summary { final_actions, outcomes, cost, status, forced_conclusion, .. } => {
                    summary = Some((final_actions, outcomes, cost, status, forced_conclusion))
                }
            }
        }
        let (scenario_id, policy, config, initial_prompt) = header.ok_or(TranscriptError::Missing("header"))?;
        let (final_actions, outcomes, cost, status, forced_conclusion) = summary.ok_or(TranscriptError::Missing("summary"))?;
        Ok(Transcript {
            scenario_id,
            policy,
            config,
            history: History { initial_prompt, turns },
            final_actions,
            outcomes,
            cost,
            status,
            forced_conclusion,
        })
    }

    pub fn is_errored(&self) -> bool {
        matches!(self.status, EpisodeStatus::Errored { .. })
    }
}

/// The graph handed to the policy under `mode`.
pub fn episode_graph(scenario: &Scenario, mode: GraphMode) -> Result<SceneGraph, String> {
    let obs = scenario.world.observe(&scenario.acting_agent()).map_err(|e| e.to_string())?;
    let graph = SceneGraph::build_from_observation(&obs.visible, &scenario.world.layout).map_err(|e| e.to_string())?;
    Ok(match mode {
        GraphMode::NoEdges => graph.degrade(DegradeMode::DropEdges),
        _ => graph,
    })
}

/// Runs one episode: build the graph, assemble P_0, then loop until the
/// policy emits an action sequence or the turn budget runs out, in which case
/// one forced-conclusion call is made.
pub fn run_episode(scenario: &Scenario, policy: &dyn Policy, config: &PolicyConfig) -> Transcript {
    let graph = match episode_graph(scenario, config.graph_mode) {
        Ok(g) => g,
        Err(e) => {
            return Transcript {
                scenario_id: scenario.id.clone(),
                policy: policy.name(),
                config: *config,
                history: History::new(String::new()),
                final_actions: Vec::new(),
                outcomes: Vec::new(),
                cost: CostCounters::default(),
                status: EpisodeStatus::Errored { message: format!("scenario world: {e}") },
                forced_conclusion: false,
            }
        }
    };
    let prompt = initial_prompt(
        &scenario.instruction,
        &graph.node_ids(),
        graph.schema(),
        config.graph_mode,
        scenario.mode == Mode::Dual,
        &graph,
    );
    let mut history = History::new(prompt);
    let mut cost = CostCounters::default();
    let mut t = 0u32;
    let mut malformed_seen = false;
    let mut final_actions = Vec::new();
    let mut forced_conclusion = false;

    let status = loop {
        let forced = t >= config.max_turns;
        forced_conclusion |= forced;
        let mut prompt_text = history.render();
        if forced {
            prompt_text.push_str("\n\n");
            prompt_text.push_str(FORCED_NOTE);
        }
        let request = PolicyRequest { scenario, history: &history, config, forced, prompt: &prompt_text };
        let reply = match policy.respond(&request) {
            Ok(r) => r,
            Err(e) => break EpisodeStatus::Errored { message: e.to_string() },
        };
        match reply.usage {
            Some((i, o)) => cost.record(i, o, false),
            None => cost.record(approx_tokens(&prompt_text), approx_tokens(&reply.text), true),
        }
        let parsed = if reply.truncated {
            let thought = match parse_policy_output(&reply.text) {
                ParsedOutput::ToolCalls { thought, .. }
                | ParsedOutput::Actions { thought, .. }
                | ParsedOutput::Malformed { thought, .. } => thought,
            };
            ParsedOutput::Malformed { thought, diagnostic: "output was truncated; reply again, shorter".into() }
        } else {
            parse_policy_output(&reply.text)
        };
        let mut turn = Turn { raw: reply.text, thought: String::new(), emission: Emission::Malformed { diagnostic: String::new() }, results: Vec::new(), forced };
        match parsed {
            ParsedOutput::Actions { thought, lines, actions } => {
                turn.thought = thought;
                turn.emission = Emission::Actions { lines, actions: actions.clone() };
                history.push(turn);
                final_actions = actions;
                break EpisodeStatus::Completed;
            }
            ParsedOutput::ToolCalls { thought, calls } => {
                turn.thought = thought;
                if forced {
                    turn.emission = Emission::ToolCalls { calls };
                    history.push(turn);
                    break EpisodeStatus::Failed { reason: "retrieval call on the forced-conclusion turn".into() };
                }
                turn.results = calls.iter().map(|c| execute_call(&graph, c, config.graph_mode)).collect();
                turn.emission = Emission::ToolCalls { calls };
                history.push(turn);
                t += 1;
            }
            ParsedOutput::Malformed { thought, diagnostic } => {
                turn.thought = thought;
                turn.emission = Emission::Malformed { diagnostic: diagnostic.clone() };
                history.push(turn);
                if forced || malformed_seen {
                    break EpisodeStatus::Failed { reason: format!("malformed output: {diagnostic}") };
                }
                malformed_seen = true;
                t += 1;
            }
        }
    };

    let mut outcomes = Vec::new();
    let mut status = status;
    if status == EpisodeStatus::Completed {
        match scenario.world.apply_all(&scenario.acting_agent(), &final_actions) {
            Ok((_, o)) => outcomes = o,
            Err(e) => status = EpisodeStatus::Failed { reason: format!("world rejected actions: {e}") },
        }
    }
    Transcript {
        scenario_id: scenario.id.clone(),
        policy: policy.name(),
        config: *config,
        history,
        final_actions,
        outcomes,
        cost,
        status,
        forced_conclusion,
    }
}

