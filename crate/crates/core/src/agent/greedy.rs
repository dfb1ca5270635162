//! Answers from the initial prompt alone: takes the first name-matching
//! object and never asks about multiplicity. Serves as the 0-iteration
//! baseline shape.

use crate::instruction::{Direction, VAGUE_WORDS};
use crate::scene_graph::SceneGraph;
use crate::world::{Action, AskTag};

use super::{parse_id_list, Policy, PolicyError, PolicyReply, PolicyRequest};

#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyPolicy;

struct PromptView {
    instruction: String,
    objects: Vec<String>,
    graph: Option<SceneGraph>,
}

fn read_prompt(prompt: &str) -> PromptView {
    let (_, user) = super::split_prompt(prompt);
    let mut lines = user.lines();
    let instruction = lines.next().unwrap_or("").trim_start_matches("User: ").to_string();
    let objects = user
        .lines()
        .find_map(|l| l.strip_prefix("Detected objects: "))
        .and_then(parse_id_list)
        .unwrap_or_default();
    let graph = user.split_once("\nScene graph:\n").and_then(|(_, g)| SceneGraph::parse(g).ok());
    PromptView { instruction, objects, graph }
}

fn matches_noun(id: &str, noun: &str) -> bool {
    let id = id.to_lowercase();
    let noun = noun.to_lowercase();
    if noun == "object" {
        return true;
    }
    id == noun
        || id
            .strip_prefix(&noun)
            .and_then(|rest| rest.strip_prefix(' '))
            .is_some_and(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
        || (!noun.contains(' ') && id.ends_with(&format!(" {noun}")))
}

impl PromptView {
    fn resolve(&self, noun: &str) -> Option<String> {
        for dir in [Direction::Left, Direction::Right, Direction::Above, Direction::Below, Direction::Inside] {
            let sep = match dir {
                Direction::Inside => " inside the ".to_string(),
                d => format!(" to the {} of the ", d.word()),
            };
            if let Some((base, reference)) = noun.split_once(&sep) {
                let reference = self.resolve(reference)?;
                let graph = self.graph.as_ref()?;
                return graph
                    .edges()
                    .iter()
                    .filter(|e| e.relation == dir.relation() && e.target.as_str().eq_ignore_ascii_case(&reference))
                    .map(|e| e.source.as_str().to_string())
                    .find(|src| matches_noun(src, base));
            }
        }
        self.objects.iter().find(|id| matches_noun(id, noun)).cloned()
    }
}

fn reply(thought: &str, lines: &[String]) -> PolicyReply {
    PolicyReply::text(format!("{thought}\n{}", lines.join("\n")))
}

impl Policy for GreedyPolicy {
    fn name(&self) -> String {
        "greedy".to_string()
    }

    fn respond(&self, req: &PolicyRequest<'_>) -> Result<PolicyReply, PolicyError> {
        let view = read_prompt(&req.history.initial_prompt);
        let text = view.instruction.trim_end_matches('.').to_string();
        if VAGUE_WORDS.iter().any(|w| text.contains(w)) {
            let ask = Action::Ask { question: "Could you be more specific?".into(), tag: AskTag::Underspecified };
            return Ok(reply("The instruction is vague.", &[ask.to_call()]));
        }
        if text.starts_with("Place all the blocks") {
            let mut lines = Vec::new();
            for block in view.objects.iter().filter(|id| id.ends_with(" block")) {
                let bowl = block.replace(" block", " bowl");
                if view.objects.contains(&bowl) {
                    lines.push(Action::pick_and_place(block, &bowl).to_call());
                }
            }
            if !lines.is_empty() {
                return Ok(reply("Matching blocks to bowls by color.", &lines));
            }
        }
        let split = text
            .strip_prefix("Pick up the ")
            .and_then(|r| r.split_once(" and place on the "))
            .or_else(|| text.strip_prefix("Place ").and_then(|r| r.split_once(" over the ")));
        let Some((pick, place)) = split else {
            let ask = Action::Ask { question: "What would you like me to do?".into(), tag: AskTag::Underspecified };
            return Ok(reply("I cannot read the instruction.", &[ask.to_call()]));
        };
        match (view.resolve(pick), view.resolve(place)) {
            (Some(p), Some(q)) => Ok(reply("Taking the first match for each object.", &[Action::pick_and_place(&p, &q).to_call()])),
            (p, _) => {
                let missing = if p.is_none() { pick } else { place };
                let ask = Action::Ask { question: format!("I cannot find the {missing}. Which object did you mean?"), tag: AskTag::Absence };
                Ok(reply("Something is missing from the scene.", &[ask.to_call()]))
            }
        }
    }
}
