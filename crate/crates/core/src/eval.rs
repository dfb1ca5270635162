//! Episode scoring (success rate, correct-question rate), per-category
//! aggregation, cost statistics, and report rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent::{EpisodeStatus, Transcript};
use crate::instruction::AmbiguityLabel;
use crate::scenario::{DualExpectation, GoalSpec, Mode, Scenario};
use crate::world::{goal_satisfied, Action, ActionOutcome, PlaceTarget};

/// Per-episode call and token accounting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostCounters {
    pub calls: u64,
    pub tokens_in: Vec<u64>,
    pub tokens_out: Vec<u64>,
    /// Counts are whitespace-token estimates rather than provider usage.
    #[serde(default)]
    pub approx: bool,
}

impl CostCounters {
    pub fn record(&mut self, tokens_in: u64, tokens_out: u64, approx: bool) {
        self.calls += 1;
        self.tokens_in.push(tokens_in);
        self.tokens_out.push(tokens_out);
        self.approx |= approx;
    }

    pub fn total_in(&self) -> u64 {
        self.tokens_in.iter().sum()
    }

    pub fn total_out(&self) -> u64 {
        self.tokens_out.iter().sum()
    }
}

/// Whitespace-delimited token estimate.
pub fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeScore {
    pub scenario_id: String,
    pub label: AmbiguityLabel,
    pub mode: Mode,
    pub sr: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cqr: Option<u8>,
    pub errored: bool,
    pub calls: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub approx_tokens: bool,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("transcript is for scenario '{transcript}' but was scored against '{scenario}'")]
    IdMismatch { transcript: String, scenario: String },
    #[error("no scores to aggregate")]
    Empty,
    #[error("score for '{0}' has no scenario in the suite")]
    UnknownScenario(String),
}

fn single_ask(actions: &[Action]) -> Option<&Action> {
    match actions {
        [a @ (Action::Ask { .. } | Action::AskRobot { .. })] => Some(a),
        _ => None,
    }
}

/// Scores one transcript. Pure in `(transcript, scenario)`.
pub fn score(transcript: &Transcript, scenario: &Scenario) -> Result<EpisodeScore, EvalError> {
    if transcript.scenario_id != scenario.id {
        return Err(EvalError::IdMismatch {
            transcript: transcript.scenario_id.clone(),
            scenario: scenario.id.clone(),
        });
    }
    let errored = matches!(transcript.status, EpisodeStatus::Errored { .. });
    let completed = transcript.status == EpisodeStatus::Completed;
    let actions = &transcript.final_actions;
    let clean = completed && !transcript.outcomes.iter().any(ActionOutcome::is_violation);
    let agent = scenario.acting_agent();
    let reaches_goal = || {
        clean
            && scenario
                .world
                .apply_all(&agent, actions)
                .is_ok_and(|(w, outcomes)| !outcomes.iter().any(ActionOutcome::is_violation) && goal_satisfied(&w, &scenario.goal))
    };

    let (sr, cqr) = match scenario.mode {
        Mode::Single if scenario.label.is_ambiguous_single() => {
            let asked = clean.then(|| single_ask(actions)).flatten();
            let sr = matches!(asked, Some(Action::Ask { .. }));
            let tag_ok = matches!(asked, Some(Action::Ask { tag, .. }) if Some(*tag) == scenario.label.ask_tag());
            (sr, (!errored).then_some((sr && tag_ok) as u8))
        }
        Mode::Single => {
            let no_asks = actions.iter().all(|a| matches!(a, Action::PickAndPlace { .. }));
            (!actions.is_empty() && no_asks && reaches_goal(), None)
        }
        Mode::Dual => {
            let sr = match &scenario.goal {
                GoalSpec::Transfer { pick, expected, .. } => match expected {
                    DualExpectation::AskRobot => clean && matches!(single_ask(actions), Some(Action::AskRobot { .. })),
                    DualExpectation::PlaceToShared => {
                        clean
                            && matches!(actions.as_slice(),
                                [Action::PickAndPlace { pick: p, place: PlaceTarget::Shared }] if p == pick)
                            && reaches_goal()
                    }
                    DualExpectation::Direct => {
                        matches!(actions.as_slice(), [Action::PickAndPlace { .. }]) && reaches_goal()
                    }
                },
                _ => false,
            };
            (sr, None)
        }
    };
    Ok(EpisodeScore {
        scenario_id: scenario.id.clone(),
        label: scenario.label,
        mode: scenario.mode,
        sr: (sr && !errored) as u8,
        cqr,
        errored,
        calls: transcript.cost.calls,
        tokens_in: transcript.cost.total_in(),
        tokens_out: transcript.cost.total_out(),
        approx_tokens: transcript.cost.approx,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub label: AmbiguityLabel,
    /// Episodes scored without infrastructure error.
    pub n: usize,
    pub errored: usize,
    pub sr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cqr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub calls_per_episode: f64,
    pub avg_in_per_call: f64,
    pub avg_out_per_call: f64,
    pub approx: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub method: String,
    pub categories: Vec<CategoryRow>,
    pub episodes: usize,
    pub errored: usize,
    /// Mean SR over every episode, clear trials included.
    pub overall_sr: f64,
    /// Mean SR over non-clear episodes only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall_sr_ambiguous: Option<f64>,
    /// Mean CQR over ambiguous single-agent episodes only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall_cqr: Option<f64>,
    pub cost: CostSummary,
    #[serde(default)]
    pub config: Value,
}

impl Report {
    pub fn category(&self, label: AmbiguityLabel) -> Option<&CategoryRow> {
        self.categories.iter().find(|c| c.label == label)
    }

    pub fn with_meta(mut self, method: impl Into<String>, config: Value) -> Self {
        self.method = method.into();
        self.config = config;
        self
    }
}

fn mean(values: impl Iterator<Item = u8>) -> Option<f64> {
    let (sum, n) = values.fold((0u64, 0u64), |(s, n), v| (s + v as u64, n + 1));
    (n > 0).then(|| sum as f64 / n as f64)
}

const CATEGORY_ORDER: [AmbiguityLabel; 5] = [
    AmbiguityLabel::Multiplicity,
    AmbiguityLabel::Absence,
    AmbiguityLabel::Underspecified,
    AmbiguityLabel::Occluded,
    AmbiguityLabel::Clear,
];

pub fn aggregate(scores: &[EpisodeScore], suite: &[Scenario]) -> Result<Report, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(s) = scores.iter().find(|s| !suite.iter().any(|sc| sc.id == s.scenario_id)) {
        return Err(EvalError::UnknownScenario(s.scenario_id.clone()));
    }
    let categories = CATEGORY_ORDER
        .iter()
        .filter_map(|&label| {
            let rows: Vec<&EpisodeScore> = scores.iter().filter(|s| s.label == label).collect();
            let sr = mean(rows.iter().map(|s| s.sr))?;
            Some(CategoryRow {
                label,
                n: rows.iter().filter(|s| !s.errored).count(),
                errored: rows.iter().filter(|s| s.errored).count(),
                sr,
                cqr: mean(rows.iter().filter(|s| !s.errored).filter_map(|s| s.cqr)),
            })
        })
        .collect();
    let total_calls: u64 = scores.iter().map(|s| s.calls).sum();
    let per_call = |total: u64| if total_calls == 0 { 0.0 } else { total as f64 / total_calls as f64 };
    Ok(Report {
        method: String::new(),
        categories,
        episodes: scores.len(),
        errored: scores.iter().filter(|s| s.errored).count(),
        overall_sr: mean(scores.iter().map(|s| s.sr)).expect("non-empty"),
        overall_sr_ambiguous: mean(scores.iter().filter(|s| s.label != AmbiguityLabel::Clear).map(|s| s.sr)),
        overall_cqr: mean(scores.iter().filter(|s| !s.errored).filter_map(|s| s.cqr)),
        cost: CostSummary {
            calls_per_episode: total_calls as f64 / scores.len() as f64,
            avg_in_per_call: per_call(scores.iter().map(|s| s.tokens_in).sum()),
            avg_out_per_call: per_call(scores.iter().map(|s| s.tokens_out).sum()),
            approx: scores.iter().any(|s| s.approx_tokens),
        },
        config: Value::Null,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

fn title(label: AmbiguityLabel) -> &'static str {
    match label {
        AmbiguityLabel::Clear => "Clear",
        AmbiguityLabel::Multiplicity => "Multiplicity",
        AmbiguityLabel::Absence => "Absence",
        AmbiguityLabel::Underspecified => "Underspecified",
        AmbiguityLabel::Occluded => "Occluded",
    }
}

/// Aligned text table: one row per report, SR/CQR per category and overall,
/// followed by the cost block.
pub fn render_report(reports: &[Report]) -> String {
    let present: Vec<AmbiguityLabel> = CATEGORY_ORDER
        .into_iter()
        .filter(|l| reports.iter().any(|r| r.category(*l).is_some()))
        .collect();
    let mut header = vec!["Method".to_string()];
    for l in &present {
        header.push(format!("{} SR", title(*l)));
        if l.is_ambiguous_single() {
            header.push(format!("{} CQR", title(*l)));
        }
    }
    header.extend(["Overall SR", "Overall CQR", "SR excl. clear", "N", "Errored"].map(String::from));

    let mut rows = vec![header];
    for r in reports {
        let mut row = vec![if r.method.is_empty() { "-".to_string() } else { r.method.clone() }];
        for l in &present {
            let c = r.category(*l);
            row.push(cell(c.map(|c| c.sr)));
            if l.is_ambiguous_single() {
                row.push(cell(c.and_then(|c| c.cqr)));
            }
        }
        row.push(cell(Some(r.overall_sr)));
        row.push(cell(r.overall_cqr));
        row.push(cell(r.overall_sr_ambiguous));
        row.push(r.episodes.to_string());
        row.push(r.errored.to_string());
        rows.push(row);
    }

    let mut out = String::new();
    out.push_str("# Overall SR includes clear trials; Overall CQR is averaged over ambiguous trials only.\n");
    out.push_str(&table(&rows));
    out.push('\n');

    let mut cost = vec![["Method", "Calls/Ep", "Avg In/Call", "Avg Out/Call", "Tokens"].map(String::from).to_vec()];
    for r in reports {
        cost.push(vec![
            if r.method.is_empty() { "-".to_string() } else { r.method.clone() },
            format!("{:.2}", r.cost.calls_per_episode),
            format!("{:.2}", r.cost.avg_in_per_call),
            format!("{:.2}", r.cost.avg_out_per_call),
            if r.cost.approx { "approx" } else { "usage" }.to_string(),
        ]);
    }
    out.push_str(&table(&cost));
    out
}

fn table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|i| rows.iter().filter_map(|r| r.get(i)).map(|c| c.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (ri, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if ri == 0 {
            let total = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, label: AmbiguityLabel, sr: u8, cqr: Option<u8>, calls: u64) -> EpisodeScore {
        EpisodeScore {
            scenario_id: id.into(),
            label,
            mode: Mode::Single,
            sr,
            cqr,
            errored: false,
            calls,
            tokens_in: 10 * calls,
            tokens_out: 2 * calls,
            approx_tokens: false,
        }
    }

    fn suite_for(scores: &[EpisodeScore]) -> Vec<Scenario> {
        let base = crate::scenario::gen_basic(0);
        scores
            .iter()
            .map(|s| Scenario { id: s.scenario_id.clone(), label: s.label, ..base.clone() })
            .collect()
    }

    /// Eight episodes with hand-counted tallies:
    /// multiplicity: sr 1,1,0 cqr 1,0,0 -> 2/3, 1/3
    /// absence:      sr 1,1   cqr 1,1   -> 1, 1
    /// clear:        sr 1,0,1           -> 2/3
    /// overall SR 6/8, SR excl. clear 4/5, CQR 3/5, calls (1+2+...+8)/8 = 4.5
    #[test]
    fn fixture_means() {
        use AmbiguityLabel::*;
        let scores = vec![
            row("m0", Multiplicity, 1, Some(1), 1),
            row("m1", Multiplicity, 1, Some(0), 2),
            row("m2", Multiplicity, 0, Some(0), 3),
            row("a0", Absence, 1, Some(1), 4),
            row("a1", Absence, 1, Some(1), 5),
            row("c0", Clear, 1, None, 6),
            row("c1", Clear, 0, None, 7),
            row("c2", Clear, 1, None, 8),
        ];
        let report = aggregate(&scores, &suite_for(&scores)).unwrap();
        let m = report.category(Multiplicity).unwrap();
        assert_eq!((m.n, m.sr, m.cqr), (3, 2.0 / 3.0, Some(1.0 / 3.0)));
        let a = report.category(Absence).unwrap();
        assert_eq!((a.sr, a.cqr), (1.0, Some(1.0)));
        let c = report.category(Clear).unwrap();
        assert_eq!((c.sr, c.cqr), (2.0 / 3.0, None));
        assert!(report.category(Underspecified).is_none());
        assert_eq!(report.overall_sr, 6.0 / 8.0);
        assert_eq!(report.overall_sr_ambiguous, Some(4.0 / 5.0));
        assert_eq!(report.overall_cqr, Some(3.0 / 5.0));
        assert_eq!(report.cost.calls_per_episode, 4.5);
        assert_eq!(report.cost.avg_in_per_call, 10.0);
        assert_eq!(report.cost.avg_out_per_call, 2.0);
        // overall SR is the count-weighted mean of category SRs
        let weighted: f64 = report.categories.iter().map(|c| c.sr * (c.n + c.errored) as f64).sum::<f64>() / 8.0;
        assert!((weighted - report.overall_sr).abs() < 1e-12);
    }

    #[test]
    fn all_ones_give_ones() {
        let scores: Vec<_> = (0..400)
            .map(|i| {
                let label = [AmbiguityLabel::Clear, AmbiguityLabel::Multiplicity, AmbiguityLabel::Absence, AmbiguityLabel::Underspecified][i % 4];
                row(&format!("s{i}"), label, 1, label.is_ambiguous_single().then_some(1), 1)
            })
            .collect();
        let r = aggregate(&scores, &suite_for(&scores)).unwrap();
        assert_eq!(r.overall_sr, 1.0);
        assert_eq!(r.overall_cqr, Some(1.0));
        assert!(r.categories.iter().all(|c| c.sr == 1.0 && c.cqr.unwrap_or(1.0) == 1.0));
    }

    #[test]
    fn cost_calls_per_episode() {
        let scores = vec![row("x", AmbiguityLabel::Clear, 1, None, 3), row("y", AmbiguityLabel::Clear, 1, None, 5)];
        let r = aggregate(&scores, &suite_for(&scores)).unwrap();
        assert_eq!(r.cost.calls_per_episode, 4.0);
    }

    #[test]
    fn errored_episodes_count_as_failures_and_skip_cqr() {
        let mut bad = row("m1", AmbiguityLabel::Multiplicity, 0, None, 0);
        bad.errored = true;
        let scores = vec![row("m0", AmbiguityLabel::Multiplicity, 1, Some(1), 2), bad];
        let r = aggregate(&scores, &suite_for(&scores)).unwrap();
        let m = r.category(AmbiguityLabel::Multiplicity).unwrap();
        assert_eq!((m.n, m.errored, m.sr, m.cqr), (1, 1, 0.5, Some(1.0)));
        assert_eq!(r.errored, 1);
    }

    #[test]
    fn aggregate_errors() {
        assert!(matches!(aggregate(&[], &[]), Err(EvalError::Empty)));
        let scores = vec![row("ghost", AmbiguityLabel::Clear, 1, None, 1)];
        assert!(matches!(aggregate(&scores, &[]), Err(EvalError::UnknownScenario(_))));
    }

    #[test]
    fn report_json_round_trips_and_renders_stably() {
        let scores = vec![
            row("m0", AmbiguityLabel::Multiplicity, 1, Some(1), 3),
            row("u0", AmbiguityLabel::Underspecified, 1, Some(0), 1),
            row("c0", AmbiguityLabel::Clear, 1, None, 2),
        ];
        let r = aggregate(&scores, &suite_for(&scores)).unwrap().with_meta("oracle/query", serde_json::json!({"max_turns": 8}));
        let back: Report = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        let text = render_report(std::slice::from_ref(&r));
        assert_eq!(text, render_report(&[back]));
        let header = text.lines().nth(1).unwrap();
        let order = ["Multiplicity SR", "Multiplicity CQR", "Underspecified SR", "Clear SR", "Overall SR", "Overall CQR"];
        let positions: Vec<usize> = order.iter().map(|h| header.find(h).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{header}");
        assert!(text.contains("Calls/Ep"));
        assert!(text.contains("oracle/query"));
    }
}
