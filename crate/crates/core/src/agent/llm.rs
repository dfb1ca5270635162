//! Policy backed by a chat-completions model.

use crate::chat::{ChatClient, ChatConfig, ChatMessage, ChatRequest};

use super::{Policy, PolicyError, PolicyReply, PolicyRequest, FORCED_NOTE};

pub struct LlmPolicy {
    client: Box<dyn ChatClient>,
    config: ChatConfig,
}

impl LlmPolicy {
    pub fn new(client: Box<dyn ChatClient>, config: ChatConfig) -> Self {
        LlmPolicy { client, config }
    }

    /// P_0 as system + user, each turn as an assistant message followed by
    /// its tool result, and the forced note as a final user message.
    pub fn messages(&self, req: &PolicyRequest<'_>) -> Vec<ChatMessage> {
        let (system, user) = req.history.prompt_parts();
        let mut out = Vec::new();
        if !system.is_empty() {
            out.push(ChatMessage::new("system", system.trim_start_matches("System: ")));
        }
        out.push(ChatMessage::new("user", user.trim_start_matches("User: ")));
        for turn in &req.history.turns {
            out.push(ChatMessage::new("assistant", turn.raw.clone()));
            if let Some(result) = turn.tool_result() {
                out.push(ChatMessage::new(&self.config.tool_role, result));
            }
        }
        if req.forced {
            out.push(ChatMessage::new("user", FORCED_NOTE.trim_start_matches("System: ")));
        }
        out
    }

    pub fn request(&self, req: &PolicyRequest<'_>) -> ChatRequest {
        ChatRequest {
            model: self.config.model.clone(),
            messages: self.messages(req),
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        }
    }
}

impl Policy for LlmPolicy {
    fn name(&self) -> String {
        format!("llm:{}", self.config.model)
    }

    fn respond(&self, req: &PolicyRequest<'_>) -> Result<PolicyReply, PolicyError> {
        let response = self
            .client
            .complete(&self.request(req))
            .map_err(|e| PolicyError::Transport(e.to_string()))?;
        Ok(PolicyReply {
            truncated: response.truncated(),
            usage: response.usage.map(|u| (u.prompt_tokens, u.completion_tokens)),
            text: response.content,
        })
    }
}
