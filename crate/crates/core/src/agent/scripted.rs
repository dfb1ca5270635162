//! Fixed replies indexed by invocation, per scenario.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Policy, PolicyError, PolicyReply, PolicyRequest, Transcript};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedReply {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<(u64, u64)>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl ScriptedReply {
    pub fn text(text: impl Into<String>) -> Self {
        ScriptedReply { text: text.into(), usage: None, truncated: false }
    }

    pub fn with_usage(text: impl Into<String>, tokens_in: u64, tokens_out: u64) -> Self {
        ScriptedReply { text: text.into(), usage: Some((tokens_in, tokens_out)), truncated: false }
    }
}

/// The n-th invocation of an episode gets the n-th reply of that scenario's
/// script. A script keyed `*` applies to every scenario without its own.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    pub scripts: BTreeMap<String, Vec<ScriptedReply>>,
}

impl ScriptedPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(replies: Vec<ScriptedReply>) -> Self {
        let mut p = Self::new();
        p.scripts.insert("*".to_string(), replies);
        p
    }

    pub fn with(mut self, scenario_id: &str, replies: Vec<ScriptedReply>) -> Self {
        self.scripts.insert(scenario_id.to_string(), replies);
        self
    }

    /// Script that reproduces a recorded transcript's replies and usage.
    pub fn from_transcript(t: &Transcript) -> Self {
        let replies = t
            .history
            .turns
            .iter()
            .enumerate()
            .map(|(i, turn)| ScriptedReply {
                text: turn.raw.clone(),
                usage: (!t.cost.approx).then(|| (t.cost.tokens_in[i], t.cost.tokens_out[i])),
                truncated: false,
            })
            .collect();
        Self::new().with(&t.scenario_id, replies)
    }
}

impl Policy for ScriptedPolicy {
    fn name(&self) -> String {
        "scripted".to_string()
    }

    fn respond(&self, req: &PolicyRequest<'_>) -> Result<PolicyReply, PolicyError> {
        let id = &req.scenario.id;
        let script = self
            .scripts
            .get(id)
            .or_else(|| self.scripts.get("*"))
            .ok_or_else(|| PolicyError::Transport(format!("no script for scenario '{id}'")))?;
        let n = req.history.turns.len();
        let r = script
            .get(n)
            .ok_or_else(|| PolicyError::Transport(format!("script for '{id}' has no reply {}", n + 1)))?;
        Ok(PolicyReply { text: r.text.clone(), usage: r.usage, truncated: r.truncated })
    }
}
