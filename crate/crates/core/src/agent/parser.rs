//! Line-oriented grammar for policy output: free-form thought lines followed
//! by one or more call lines `name(arg, key='value', ...)`.

use serde::{Deserialize, Serialize};

use crate::scene_graph::NodeId;
use crate::world::{Action, AskTag, PlaceTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolName {
    RetrieveNode,
    RetrieveEdge,
}

impl ToolName {
    pub fn as_str(self) -> &'static str {
        match self {
            ToolName::RetrieveNode => "retrieve_node",
            ToolName::RetrieveEdge => "retrieve_edge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    pub value: String,
}

impl Arg {
    pub fn positional(value: &str) -> Self {
        Arg { key: None, value: value.to_string() }
    }

    pub fn named(key: &str, value: &str) -> Self {
        Arg { key: Some(key.to_string()), value: value.to_string() }
    }
}

/// A retrieval call as written by the policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: ToolName,
    pub args: Vec<Arg>,
    /// The call line exactly as emitted.
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedOutput {
    ToolCalls { thought: String, calls: Vec<ToolCall> },
    Actions { thought: String, lines: Vec<String>, actions: Vec<Action> },
    Malformed { thought: String, diagnostic: String },
}

impl ParsedOutput {
    fn malformed(thought: String, diagnostic: impl Into<String>) -> Self {
        ParsedOutput::Malformed { thought, diagnostic: diagnostic.into() }
    }
}

const ACTION_NAMES: [&str; 6] = [
    "pick_and_place",
    "ask",
    "ask_robot",
    "ask_multiplicity",
    "ask_absence",
    "ask_underspecified",
];

fn is_known(name: &str) -> bool {
    name == "retrieve_node" || name == "retrieve_edge" || ACTION_NAMES.contains(&name)
}

/// Splits `name(args)` into its parts when the line has call shape.
fn call_shape(line: &str) -> Option<(&str, &str)> {
    let line = line.trim().trim_end_matches(';').trim_end();
    let open = line.find('(')?;
    let name = line[..open].trim_end();
    let mut chars = name.chars();
    let ident = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
    if !ident || !line.ends_with(')') {
        return None;
    }
    Some((name, &line[open + 1..line.len() - 1]))
}

fn is_filler(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with("```")
}

/// Splits an argument list on top-level commas and decodes each piece.
pub fn parse_args(text: &str) -> Result<Vec<Arg>, String> {
    let mut pieces = Vec::new();
    let mut current = String::new();
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for c in text.chars() {
        if escaped {
            current.push(c);
            escaped = false;
            continue;
        }
        match (quote, c) {
            (Some(_), '\\') => {
                current.push(c);
                escaped = true;
            }
            (Some(q), c) if c == q => {
                quote = None;
                current.push(c);
            }
            (None, '\'' | '"') => {
                quote = Some(c);
                current.push(c);
            }
            (None, ',') => pieces.push(std::mem::take(&mut current)),
            _ => current.push(c),
        }
    }
    if quote.is_some() {
        return Err("unterminated string literal".to_string());
    }
    if !current.trim().is_empty() || !pieces.is_empty() {
        pieces.push(current);
    }
    pieces.iter().map(|p| parse_arg(p.trim())).collect()
}

fn parse_arg(piece: &str) -> Result<Arg, String> {
    if piece.is_empty() {
        return Err("empty argument".to_string());
    }
    if let Some(eq) = piece.find('=') {
        let key = piece[..eq].trim();
        let is_key = !key.is_empty() && key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if is_key && !key.starts_with(['\'', '"']) {
            return Ok(Arg {
                key: Some(key.to_string()),
                value: parse_value(piece[eq + 1..].trim())?,
            });
        }
    }
    Ok(Arg { key: None, value: parse_value(piece)? })
}

fn parse_value(v: &str) -> Result<String, String> {
    let mut chars = v.chars();
    match chars.next() {
        Some(q @ ('\'' | '"')) => {
            if v.len() < 2 || !v.ends_with(q) {
                return Err(format!("badly quoted value {v}"));
            }
            let inner = &v[1..v.len() - 1];
            let mut out = String::with_capacity(inner.len());
            let mut escaped = false;
            for c in inner.chars() {
                if escaped {
                    out.push(c);
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else {
                    out.push(c);
                }
            }
            Ok(out)
        }
        Some(_) if v.contains(['\'', '"']) => Err(format!("stray quote in value {v}")),
        Some(_) => Ok(v.to_string()),
        None => Err("empty value".to_string()),
    }
}

/// Parses one policy output.
pub fn parse_policy_output(text: &str) -> ParsedOutput {
    let lines: Vec<&str> = text.lines().collect();
    let first_call = lines
        .iter()
        .position(|l| call_shape(l).is_some_and(|(name, _)| is_known(name)));
    let Some(start) = first_call else {
        let thought = join_thought(&lines);
        let diag = if text.trim().is_empty() {
            "empty output; expected a retrieval call or an action".to_string()
        } else {
            "no call line found; end your reply with retrieve_node(...), retrieve_edge(...), pick_and_place(...) or ask(...)".to_string()
        };
        return ParsedOutput::malformed(thought, diag);
    };
    let thought = join_thought(&lines[..start]);

    let mut tool_calls = Vec::new();
    let mut action_lines = Vec::new();
    let mut actions = Vec::new();
    for (offset, line) in lines[start..].iter().enumerate() {
        if is_filler(line) {
            continue;
        }
        let lineno = start + offset + 1;
        let Some((name, args_text)) = call_shape(line) else {
            return ParsedOutput::malformed(thought, format!("line {lineno}: expected a call line, found: {}", line.trim()));
        };
        let args = match parse_args(args_text) {
            Ok(a) => a,
            Err(e) => return ParsedOutput::malformed(thought, format!("line {lineno}: {e}")),
        };
        let raw = line.trim().to_string();
        match name {
            "retrieve_node" | "retrieve_edge" => {
                let name = if name == "retrieve_node" { ToolName::RetrieveNode } else { ToolName::RetrieveEdge };
                tool_calls.push(ToolCall { name, args, raw });
            }
            _ if ACTION_NAMES.contains(&name) => match build_action(name, &args) {
                Ok(a) => {
                    actions.push(a);
                    action_lines.push(raw);
                }
                Err(e) => return ParsedOutput::malformed(thought, format!("line {lineno}: {e}")),
            },
            other => return ParsedOutput::malformed(thought, format!("line {lineno}: unknown function '{other}'")),
        }
    }
    match (tool_calls.is_empty(), actions.is_empty()) {
        (false, true) => ParsedOutput::ToolCalls { thought, calls: tool_calls },
        (true, false) => ParsedOutput::Actions { thought, lines: action_lines, actions },
        _ => ParsedOutput::malformed(thought, "retrieval calls and actions cannot be mixed in one reply"),
    }
}

fn join_thought(lines: &[&str]) -> String {
    lines
        .iter()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty() && !l.starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn lookup<'a>(args: &'a [Arg], keys: &[&str], position: usize) -> Option<&'a str> {
    args.iter()
        .find(|a| a.key.as_deref().is_some_and(|k| keys.contains(&k)))
        .or_else(|| args.iter().filter(|a| a.key.is_none()).nth(position))
        .map(|a| a.value.as_str())
}

fn build_action(name: &str, args: &[Arg]) -> Result<Action, String> {
    let question = |pos| {
        lookup(args, &["question", "q"], pos)
            .filter(|q| !q.trim().is_empty())
            .map(str::to_string)
            .ok_or_else(|| format!("{name} needs a non-empty question"))
    };
    match name {
        "pick_and_place" => {
            let pick = lookup(args, &["pick", "object"], 0).ok_or("pick_and_place needs a pick object")?;
            let place = lookup(args, &["place", "target"], 1).ok_or("pick_and_place needs a place target")?;
            let place = if place.eq_ignore_ascii_case("shared") {
                PlaceTarget::Shared
            } else {
                PlaceTarget::Object(NodeId::new(place))
            };
            Ok(Action::PickAndPlace { pick: NodeId::new(pick), place })
        }
        "ask_robot" => Ok(Action::AskRobot { question: question(0)? }),
        "ask" => {
            let tag_text = lookup(args, &["tag"], 1).ok_or("ask needs a tag (multiplicity, absence or underspecified)")?;
            let tag = AskTag::parse(&tag_text.to_lowercase())
                .ok_or_else(|| format!("unknown ask tag '{tag_text}'; use multiplicity, absence or underspecified"))?;
            Ok(Action::Ask { question: question(0)?, tag })
        }
        _ => {
            let tag = name.strip_prefix("ask_").and_then(AskTag::parse).ok_or_else(|| format!("unknown action '{name}'"))?;
            Ok(Action::Ask { question: question(0)?, tag })
        }
    }
}
