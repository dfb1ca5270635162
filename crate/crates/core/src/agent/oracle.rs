//! Deterministic reference policy. It reads the structured instruction of the
//! scenario but learns about the scene only through retrieval results.

use crate::instruction::{ReferentSpec, TaskKind};
use crate::scenario::{Mode, COLORS};
use crate::scene_graph::{AttributeMap, NodeId};
use crate::world::{Action, AskTag, PlaceTarget};

use super::{parse_id_list, Emission, Policy, PolicyError, PolicyReply, PolicyRequest, Turn};

#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePolicy;

fn quote(v: &str) -> String {
    v.replace('\\', "\\\\").replace('\'', "\\'")
}

fn node_call(attrs: &AttributeMap) -> String {
    let args: Vec<String> = attrs.iter().map(|(k, v)| format!("{k}='{}'", quote(v))).collect();
    format!("retrieve_node({})", args.join(", "))
}

fn edge_call(relation: &str, target: &str) -> String {
    format!("retrieve_edge(relation='{relation}', target='{}')", quote(target))
}

/// Sources named in a rendered `retrieve_edge` result.
fn edge_sources(result: &str, relation: &str) -> Vec<String> {
    let sep = format!(" is {relation} the ");
    result
        .split(", ")
        .filter_map(|s| s.strip_prefix("the ")?.split_once(&sep).map(|(src, _)| src.to_string()))
        .collect()
}

fn reply(thought: &str, lines: &[String]) -> PolicyReply {
    PolicyReply::text(format!("{thought}\n{}", lines.join("\n")))
}

fn or_list(names: &[String]) -> String {
    match names {
        [] => String::new(),
        [one] => format!("the {one}"),
        [init @ .., last] => {
            let head: Vec<String> = init.iter().map(|n| format!("the {n}")).collect();
            format!("{} or the {last}", head.join(", "))
        }
    }
}

/// Retrieval plan for one referent: node query on its own attributes and,
/// for relational referents, on the reference's attributes.
struct Probe<'a> {
    spec: &'a ReferentSpec,
    attr_call: Option<usize>,
    ref_call: Option<usize>,
}

/// Grounding outcome for one referent.
enum Grounding {
    Unique(String),
    None,
    Many(Vec<String>),
}

impl OraclePolicy {
    fn plan<'a>(referents: &[&'a ReferentSpec]) -> (Vec<Probe<'a>>, Vec<String>) {
        let mut calls = Vec::new();
        let probes = referents
            .iter()
            .map(|spec| {
                let attr_call = (!spec.attributes.is_empty() || spec.spatial.is_none()).then(|| {
                    calls.push(node_call(&spec.attributes));
                    calls.len() - 1
                });
                let ref_call = spec.spatial.as_ref().map(|sp| {
                    calls.push(node_call(&sp.reference.attributes));
                    calls.len() - 1
                });
                Probe { spec, attr_call, ref_call }
            })
            .collect();
        (probes, calls)
    }

    fn ground(probe: &Probe, first: Option<&Turn>, edges: &[(usize, String)], second: Option<&Turn>) -> Grounding {
        let ids = |turn: Option<&Turn>, idx: Option<usize>| -> Option<Vec<String>> {
            let r = turn?.results.get(idx?)?;
            parse_id_list(r)
        };
        let own = ids(first, probe.attr_call);
        let candidates = match &probe.spec.spatial {
            None => own.unwrap_or_default(),
            Some(sp) => {
                let refs = ids(first, probe.ref_call).unwrap_or_default();
                let relation = sp.direction.relation();
                let mut sources: Vec<String> = Vec::new();
                for (i, _) in edges.iter().enumerate().filter(|(_, (p, _))| Some(*p) == probe.ref_call) {
                    if let Some(r) = second.and_then(|t| t.results.get(i)) {
                        sources.extend(edge_sources(r, relation));
                    }
                }
                if let Some(own) = &own {
                    sources.retain(|s| own.iter().any(|o| o.eq_ignore_ascii_case(s)));
                }
                if refs.len() > 1 {
                    return Grounding::Many(if sources.len() > 1 { sources } else { refs });
                }
                sources
            }
        };
        match candidates.len() {
            0 => Grounding::None,
            1 => Grounding::Unique(candidates[0].clone()),
            _ => Grounding::Many(candidates),
        }
    }

    fn long_horizon(req: &PolicyRequest, first: Option<&Turn>) -> PolicyReply {
        let queries: Vec<AttributeMap> = COLORS
            .iter()
            .flat_map(|c| ["block", "bowl"].map(|ty| AttributeMap::from_pairs([("color", *c), ("type", ty)])))
            .collect();
        let Some(first) = first else {
            if !req.forced {
                let calls: Vec<String> = queries.iter().map(node_call).collect();
                return reply("I need every block and bowl, grouped by color.", &calls);
            }
            let ask = Action::Ask { question: "I could not look at the table. Which blocks should go where?".into(), tag: AskTag::Absence };
            return reply("I ran out of turns before finding the objects.", &[ask.to_call()]);
        };
        let mut lines = Vec::new();
        for i in 0..COLORS.len() {
            let found = |j: usize| first.results.get(2 * i + j).and_then(|r| parse_id_list(r)).unwrap_or_default();
            if let ([block], [bowl]) = (found(0).as_slice(), found(1).as_slice()) {
                lines.push(Action::pick_and_place(block, bowl).to_call());
            }
        }
        if lines.is_empty() {
            let ask = Action::Ask { question: "I cannot find any block with a matching bowl. What should I do?".into(), tag: AskTag::Absence };
            return reply("No color has both a block and a bowl.", &[ask.to_call()]);
        }
        reply("Each block goes into the bowl of its own color.", &lines)
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> String {
        "oracle".to_string()
    }

    fn respond(&self, req: &PolicyRequest<'_>) -> Result<PolicyReply, PolicyError> {
        let instr = &req.scenario.instruction;
        let tool_turns: Vec<&Turn> = req
            .history
            .turns
            .iter()
            .filter(|t| matches!(t.emission, Emission::ToolCalls { .. }))
            .collect();

        if let Some(pick) = &instr.pick {
            if pick.is_vague() {
                let place = instr.place.as_ref().map(|p| p.phrase()).unwrap_or_default();
                let ask = Action::Ask { question: format!("Which object would you like me to place over {place}?"), tag: AskTag::Underspecified };
                return Ok(reply("The instruction does not say which object to move. I need clarification.", &[ask.to_call()]));
            }
        }
        if let (Some(pick), Some(place)) = (&instr.pick, &instr.place) {
            if place.is_vague() {
                let noun = pick.noun();
                let ask = Action::Ask {
                    question: format!("Where exactly would you like me to place the {noun}?"),
                    tag: AskTag::Underspecified,
                };
                let thought = format!(
                    "The instruction specifies the object ({noun}) but does not specify the target location. I need clarification about where it should be placed."
                );
                return Ok(reply(&thought, &[ask.to_call()]));
            }
        }
        if instr.task == TaskKind::LongHorizon {
            return Ok(Self::long_horizon(req, tool_turns.first().copied()));
        }

        let referents: Vec<&ReferentSpec> = instr.referents().collect();
        let (probes, first_calls) = Self::plan(&referents);
        let first = tool_turns.first().copied();
        let Some(first_turn) = first else {
            if !req.forced {
                let nouns: Vec<String> = referents.iter().map(|r| r.phrase()).collect();
                let thought = format!("The user wants me to move {} onto {}. First, I will find the candidate objects.", nouns[0], nouns.get(1).cloned().unwrap_or_default());
                return Ok(reply(&thought, &first_calls));
            }
            return Ok(self.decide(req, &probes, None, &[], None));
        };

        let mut edges: Vec<(usize, String)> = Vec::new();
        for probe in &probes {
            if let (Some(sp), Some(idx)) = (&probe.spec.spatial, probe.ref_call) {
                let refs = first_turn.results.get(idx).and_then(|r| parse_id_list(r)).unwrap_or_default();
                for r in refs {
                    edges.push((idx, edge_call(sp.direction.relation(), &r)));
                }
            }
        }
        if !edges.is_empty() && tool_turns.len() < 2 && !req.forced {
            let calls: Vec<String> = edges.iter().map(|(_, c)| c.clone()).collect();
            return Ok(reply("I should check how the objects relate to the reference object.", &calls));
        }
        Ok(self.decide(req, &probes, Some(first_turn), &edges, tool_turns.get(1).copied()))
    }
}

impl OraclePolicy {
    fn decide(&self, req: &PolicyRequest, probes: &[Probe], first: Option<&Turn>, edges: &[(usize, String)], second: Option<&Turn>) -> PolicyReply {
        let dual = req.scenario.mode == Mode::Dual;
        let mut grounded = Vec::new();
        for (slot, probe) in probes.iter().enumerate() {
            match Self::ground(probe, first, edges, second) {
                Grounding::Unique(id) => grounded.push(id),
                Grounding::Many(names) => {
                    let ask = Action::Ask { question: format!("Did you mean {}?", or_list(&names)), tag: AskTag::Multiplicity };
                    return reply(&format!("There are several matches for {}, so the command is ambiguous. I should ask for clarification.", probe.spec.phrase()), &[ask.to_call()]);
                }
                Grounding::None if dual && slot == 0 => {
                    let ask = Action::AskRobot { question: format!("I cannot see {}. Is it on your side?", probe.spec.phrase()) };
                    return reply(&format!("I cannot see {}. The other robot may see it.", probe.spec.phrase()), &[ask.to_call()]);
                }
                Grounding::None if dual => {
                    let act = Action::PickAndPlace { pick: NodeId::new(grounded[0].clone()), place: PlaceTarget::Shared };
                    return reply(&format!("I cannot see {}, so I will put the object in the shared workspace.", probe.spec.phrase()), &[act.to_call()]);
                }
                Grounding::None => {
                    let ask = Action::Ask {
                        question: format!("I cannot find {}. Which object did you mean?", probe.spec.phrase()),
                        tag: AskTag::Absence,
                    };
                    return reply(&format!("Nothing in the scene matches {}. I should ask for clarification.", probe.spec.phrase()), &[ask.to_call()]);
                }
            }
        }
        let act = Action::pick_and_place(&grounded[0], &grounded[1]);
        reply("Both objects are grounded uniquely.", &[act.to_call()])
    }
}
