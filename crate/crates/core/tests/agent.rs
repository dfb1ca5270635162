mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use sgcot_core::agent::{
    episode_graph, initial_prompt, parse_policy_output, run_episode, Emission, EpisodeStatus, GraphMode, GreedyPolicy,
    LlmPolicy, OraclePolicy, ParsedOutput, Policy, PolicyConfig, PolicyError, PolicyReply, PolicyRequest, ScriptedPolicy,
    ScriptedReply, ToolName, Transcript,
};
use sgcot_core::chat::{ChatClient, ChatConfig, ChatError, ChatRequest, ChatResponse, ReplayCache, Usage};
use sgcot_core::eval::score;
use sgcot_core::instruction::AmbiguityLabel;
use sgcot_core::scenario::{build_suite, gen_basic, gen_spatial, SuiteConfig};
use sgcot_core::world::{Action, AskTag};

fn config(max_turns: u32, graph_mode: GraphMode) -> PolicyConfig {
    PolicyConfig { max_turns, graph_mode }
}

#[test]
fn prompt_contains_instruction_and_objects() {
    let s = gen_spatial(4);
    let g = episode_graph(&s, GraphMode::Query).unwrap();
    let p = initial_prompt(&s.instruction, &g.node_ids(), g.schema(), GraphMode::Query, false, &g);
    assert!(p.contains(&s.instruction.text));
    for id in g.node_ids() {
        assert!(p.contains(id.as_str()), "{id}");
    }
    assert!(p.contains("Attribute keys: color, type"));
    assert!(p.contains("left_of"));
    assert!(!g.edges().iter().any(|e| p.contains(&e.sentence())));
    assert!(!p.contains("ask_robot"));

    let full = initial_prompt(&s.instruction, &g.node_ids(), g.schema(), GraphMode::FullInPrompt, false, &g);
    assert!(full.contains(&g.serialize()));
}

#[test]
fn dual_prompt_lists_robot_actions() {
    let s = sgcot_core::scenario::gen_dual(3, sgcot_core::scenario::DualTask::Pass);
    let g = episode_graph(&s, GraphMode::Query).unwrap();
    let p = initial_prompt(&s.instruction, &g.node_ids(), g.schema(), GraphMode::Query, true, &g);
    assert!(p.contains("ask_robot") && p.contains("'shared'"));
}

#[test]
fn query_mode_leaks_no_geometry() {
    let s = gen_spatial(11);
    let t = run_episode(&s, &OraclePolicy, &PolicyConfig::default());
    let mut seen = t.history.initial_prompt.clone();
    for turn in &t.history.turns {
        seen.push_str(&turn.results.join("\n"));
    }
    for o in &s.world.objects {
        if let Some(c) = o.cell {
            assert!(!seen.contains(&c.to_string()), "cell {c} leaked");
        }
    }
    assert!(!seen.contains("\"col\"") && !seen.contains("\"row\""));
}

#[test]
fn example_one_scripted_matches_golden() {
    let s = common::example_one();
    assert_eq!(s.label, AmbiguityLabel::Multiplicity);
    let t = run_episode(&s, &ScriptedPolicy::single(common::example_one_replies()), &PolicyConfig::default());
    assert_eq!(t.status, EpisodeStatus::Completed);
    assert_eq!(sgcot_core::harness::render_transcript(&t), common::golden("example1.txt"));
    let sc = score(&t, &s).unwrap();
    assert_eq!((sc.sr, sc.cqr), (1, Some(1)));
}

#[test]
fn example_two_scripted_matches_golden() {
    let s = common::example_two();
    assert_eq!(s.label, AmbiguityLabel::Underspecified);
    let t = run_episode(&s, &ScriptedPolicy::single(common::example_two_replies()), &PolicyConfig::default());
    assert_eq!(sgcot_core::harness::render_transcript(&t), common::golden("example2.txt"));
}

#[test]
fn oracle_on_example_one_asks_after_two_tool_turns() {
    let s = common::example_one();
    let t = run_episode(&s, &OraclePolicy, &PolicyConfig::default());
    let tool_turns = t.history.turns.iter().filter(|t| matches!(t.emission, Emission::ToolCalls { .. })).count();
    assert!(tool_turns >= 2);
    match t.final_actions.as_slice() {
        [Action::Ask { tag: AskTag::Multiplicity, question }] => {
            assert_eq!(question, "Did you mean the yellow block or the blue block?")
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn oracle_on_example_two_asks_immediately() {
    let t = run_episode(&common::example_two(), &OraclePolicy, &PolicyConfig::default());
    assert_eq!(t.cost.calls, 1);
    assert!(t.history.turns[0].results.is_empty());
    assert!(matches!(t.final_actions.as_slice(), [Action::Ask { tag: AskTag::Underspecified, .. }]));
}

#[test]
fn oracle_clear_basic_uses_one_retrieval_turn() {
    let s = gen_basic(21);
    let t = run_episode(&s, &OraclePolicy, &PolicyConfig::default());
    assert_eq!(t.cost.calls, 2);
    assert!(matches!(t.history.turns[0].emission, Emission::ToolCalls { .. }));
    assert!(matches!(t.final_actions.as_slice(), [Action::PickAndPlace { .. }]));
    assert_eq!(score(&t, &s).unwrap().sr, 1);
}

#[test]
fn zero_turns_full_graph_is_one_call() {
    let s = gen_basic(2);
    let t = run_episode(&s, &GreedyPolicy, &config(0, GraphMode::FullInPrompt));
    assert_eq!(t.cost.calls, 1);
    assert!(t.forced_conclusion);
    assert!(t.history.turns.iter().all(|t| !matches!(t.emission, Emission::ToolCalls { .. })));
    assert_eq!(t.status, EpisodeStatus::Completed);
}

#[test]
fn tool_call_on_forced_turn_fails_the_episode() {
    let call = ScriptedReply::text("looking\nretrieve_node(type='bowl')");
    let policy = ScriptedPolicy::single(vec![call; 10]);
    let t = run_episode(&gen_basic(1), &policy, &config(3, GraphMode::Query));
    assert_eq!(t.cost.calls, 4);
    assert!(t.forced_conclusion);
    assert!(t.history.turns[3].forced);
    assert!(matches!(t.status, EpisodeStatus::Failed { .. }));
    assert!(t.final_actions.is_empty());
}

#[test]
fn one_malformed_reply_is_retried() {
    let s = gen_basic(8);
    let oracle_final = run_episode(&s, &OraclePolicy, &PolicyConfig::default());
    let last = oracle_final.history.turns.last().unwrap().raw.clone();
    let policy = ScriptedPolicy::single(vec![ScriptedReply::text("I will just do it."), ScriptedReply::text(last)]);
    let t = run_episode(&s, &policy, &PolicyConfig::default());
    assert_eq!(t.status, EpisodeStatus::Completed);
    let diag = t.history.turns[0].tool_result().unwrap();
    assert!(diag.starts_with("error: no call line"), "{diag}");
    assert!(t.history.render().contains("System: no call line"));
}

#[test]
fn second_malformed_reply_fails() {
    let policy = ScriptedPolicy::single(vec![ScriptedReply::text(""), ScriptedReply::text("pick_and_place('a')")]);
    let t = run_episode(&gen_basic(8), &policy, &PolicyConfig::default());
    assert!(matches!(&t.status, EpisodeStatus::Failed { reason } if reason.contains("malformed")));
    assert_eq!(t.cost.calls, 2);
}

#[test]
fn truncated_reply_takes_the_malformed_path() {
    let mut cut = ScriptedReply::text("retrieve_node(type='bowl')");
    cut.truncated = true;
    let policy = ScriptedPolicy::single(vec![cut.clone(), cut]);
    let t = run_episode(&gen_basic(8), &policy, &PolicyConfig::default());
    assert!(matches!(t.history.turns[0].emission, Emission::Malformed { .. }));
    assert!(matches!(t.status, EpisodeStatus::Failed { .. }));
}

struct Failing;

impl Policy for Failing {
    fn name(&self) -> String {
        "failing".into()
    }
    fn respond(&self, _: &PolicyRequest<'_>) -> Result<PolicyReply, PolicyError> {
        Err(PolicyError::Transport("connection reset".into()))
    }
}

#[test]
fn transport_failure_marks_errored() {
    let s = gen_basic(5);
    let t = run_episode(&s, &Failing, &PolicyConfig::default());
    assert!(t.is_errored());
    let sc = score(&t, &s).unwrap();
    assert!(sc.errored && sc.sr == 0 && sc.cqr.is_none());
}

#[test]
fn no_edges_mode_returns_empty_edge_results() {
    let s = gen_spatial(6);
    let t = run_episode(&s, &OraclePolicy, &config(8, GraphMode::NoEdges));
    let mut edge_calls = 0;
    for turn in &t.history.turns {
        if let Emission::ToolCalls { calls } = &turn.emission {
            for (c, r) in calls.iter().zip(&turn.results) {
                if c.name == ToolName::RetrieveEdge {
                    edge_calls += 1;
                    assert_eq!(r, "[]");
                }
            }
        }
    }
    assert!(edge_calls > 0);
    assert!(matches!(t.final_actions.as_slice(), [Action::Ask { tag: AskTag::Absence, .. }]));
}

#[test]
fn full_graph_mode_refuses_retrieval() {
    let policy = ScriptedPolicy::single(vec![
        ScriptedReply::text("retrieve_node(type='bowl')"),
        ScriptedReply::text("ask_absence(\"none?\")"),
    ]);
    let t = run_episode(&gen_basic(3), &policy, &config(4, GraphMode::FullInPrompt));
    assert!(t.history.turns[0].results[0].starts_with("error: retrieval is disabled"));
}

#[test]
fn usage_counters_sum_to_scripted_totals() {
    let s = common::example_one();
    let replies: Vec<ScriptedReply> = common::example_one_replies()
        .into_iter()
        .zip([(100, 20), (140, 35), (190, 18)])
        .map(|(r, (i, o))| ScriptedReply::with_usage(r.text, i, o))
        .collect();
    let t = run_episode(&s, &ScriptedPolicy::single(replies), &PolicyConfig::default());
    assert_eq!(t.cost.calls, 3);
    assert_eq!(t.cost.tokens_in, vec![100, 140, 190]);
    assert_eq!(t.cost.total_out(), 73);
    assert!(!t.cost.approx);
}

#[test]
fn history_is_append_only_on_oracle_runs() {
    let suite = build_suite(&SuiteConfig { clear: 9, multiplicity: 4, absence: 4, underspecified: 4, ..SuiteConfig::empty(17) }).unwrap();
    for s in &suite {
        let t = run_episode(s, &OraclePolicy, &PolicyConfig::default());
        let mut h = t.history.clone();
        let mut renders = Vec::new();
        while !h.turns.is_empty() {
            renders.push(h.render());
            h.turns.pop();
        }
        renders.push(h.render());
        for w in renders.windows(2) {
            assert!(w[0].starts_with(&w[1]));
        }
    }
}

#[test]
fn oracle_and_scripted_are_deterministic() {
    let s = gen_spatial(30);
    let a = run_episode(&s, &OraclePolicy, &PolicyConfig::default());
    let b = run_episode(&s, &OraclePolicy, &PolicyConfig::default());
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    let back = Transcript::from_jsonl(&a.to_jsonl()).unwrap();
    assert_eq!(back, a);
}

#[test]
fn transcript_jsonl_shape() {
    let t = run_episode(&common::example_one(), &OraclePolicy, &PolicyConfig::default());
    let lines: Vec<serde_json::Value> = t.to_jsonl().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), t.history.turns.len() + 2);
    assert_eq!(lines[0]["record"], "header");
    assert_eq!(lines[1]["record"], "turn");
    let last = lines.last().unwrap();
    assert_eq!(last["record"], "summary");
    assert_eq!(last["scenario_id"], "example-1");
    assert_eq!(last["status"], "completed");
    assert!(Transcript::from_jsonl("").is_err());
    assert!(Transcript::from_jsonl("{\"record\":\"turn\"}").is_err());
}

/// Serves fixed responses in order and records the requests it saw.
struct Canned {
    responses: Vec<ChatResponse>,
    next: AtomicUsize,
    seen: Mutex<Vec<ChatRequest>>,
}

impl Canned {
    fn new(texts: Vec<String>) -> Self {
        let responses = texts
            .into_iter()
            .enumerate()
            .map(|(i, content)| ChatResponse {
                content,
                finish_reason: Some("stop".into()),
                usage: Some(Usage { prompt_tokens: 50 + i as u64, completion_tokens: 10 }),
            })
            .collect();
        Canned { responses, next: AtomicUsize::new(0), seen: Mutex::new(Vec::new()) }
    }
}

impl ChatClient for Canned {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ChatError> {
        self.seen.lock().unwrap().push(request.clone());
        let i = self.next.fetch_add(1, Ordering::SeqCst);
        self.responses.get(i).cloned().ok_or_else(|| ChatError::Http("exhausted".into()))
    }
}

#[test]
fn llm_policy_maps_history_to_messages() {
    let texts: Vec<String> = common::example_one_replies().into_iter().map(|r| r.text).collect();
    let policy = LlmPolicy::new(Box::new(Canned::new(texts)), ChatConfig::default());
    let s = common::example_one();
    let t = run_episode(&s, &policy, &PolicyConfig::default());
    assert_eq!(sgcot_core::harness::render_transcript(&t), common::golden("example1.txt"));
    assert_eq!(t.cost.tokens_in, vec![50, 51, 52]);

    let fake = LlmPolicy::new(Box::new(Canned::new(vec![])), ChatConfig::default());
    let mut h = t.history.clone();
    h.turns.truncate(2);
    let req = PolicyRequest { scenario: &s, history: &h, config: &t.config, forced: true, prompt: "" };
    let roles: Vec<String> = fake.messages(&req).into_iter().map(|m| m.role).collect();
    assert_eq!(roles, ["system", "user", "assistant", "tool", "assistant", "tool", "user"]);
    let msgs = fake.messages(&req);
    assert_eq!(msgs[3].content, "['red bowl 1', 'red bowl 2']");
    assert!(msgs[1].content.starts_with("Pick the block inside the red bowl"));
}

#[test]
fn llm_replay_reproduces_example_one() {
    let dir = tempfile::tempdir().unwrap();
    let texts: Vec<String> = common::example_one_replies().into_iter().map(|r| r.text).collect();
    let s = common::example_one();
    let recording = LlmPolicy::new(
        Box::new(ReplayCache::recording(dir.path(), Box::new(Canned::new(texts)))),
        ChatConfig::default(),
    );
    let recorded = run_episode(&s, &recording, &PolicyConfig::default());

    let replaying = LlmPolicy::new(Box::new(ReplayCache::replay_only(dir.path())), ChatConfig::default());
    let replayed = run_episode(&s, &replaying, &PolicyConfig::default());
    assert_eq!(replayed.to_jsonl(), recorded.to_jsonl());
    assert_eq!(sgcot_core::harness::render_transcript(&replayed), common::golden("example1.txt"));

    let empty = tempfile::tempdir().unwrap();
    let cold = LlmPolicy::new(Box::new(ReplayCache::replay_only(empty.path())), ChatConfig::default());
    let t = run_episode(&s, &cold, &PolicyConfig::default());
    assert!(matches!(&t.status, EpisodeStatus::Errored { message } if message.contains("no recorded response")));
}

#[test]
fn scripted_client_tool_call_passes_through() {
    let policy = LlmPolicy::new(
        Box::new(Canned::new(vec!["retrieve_node(attr_key='color', attr_val='red')".into(), "ask_absence(\"?\")".into()])),
        ChatConfig::default(),
    );
    let t = run_episode(&gen_basic(4), &policy, &PolicyConfig::default());
    let ParsedOutput::ToolCalls { calls, .. } = parse_policy_output(&t.history.turns[0].raw) else { panic!() };
    assert_eq!(calls[0].name, ToolName::RetrieveNode);
    assert!(matches!(t.history.turns[0].emission, Emission::ToolCalls { .. }));
}
