#![allow(dead_code)]

use sgcot_core::agent::ScriptedReply;
use sgcot_core::instruction::{AmbiguityLabel, Direction, InstructionSpec, ReferentSpec, TaskKind};
use sgcot_core::scenario::{GoalSpec, Mode, Scenario};
use sgcot_core::scene_graph::AttributeMap;
use sgcot_core::world::{AskTag, Cell, ObjectInstance, WorldState};

pub fn obj(id: &str, color: &str, ty: &str) -> ObjectInstance {
    ObjectInstance::new(id, AttributeMap::from_pairs([("color", color), ("type", ty)]))
}

/// Two red bowls, each holding a different block, and a green bowl.
pub fn example_one() -> Scenario {
    let objects = vec![
        obj("red bowl 1", "red", "bowl").at(Cell::new(1, 1)),
        obj("red bowl 2", "red", "bowl").at(Cell::new(5, 1)),
        obj("green bowl", "green", "bowl").at(Cell::new(3, 5)),
        obj("yellow block", "yellow", "block").inside("red bowl 1"),
        obj("blue block", "blue", "block").inside("red bowl 2"),
    ];
    let pick = ReferentSpec::attrs(AttributeMap::from_pairs([("type", "block")]))
        .related(Direction::Inside, ReferentSpec::colored("red", "bowl"));
    let instruction = InstructionSpec::new(TaskKind::Spatial, Some(pick), Some(ReferentSpec::colored("green", "bowl")))
        .unwrap()
        .with_text("Pick the block inside the red bowl and place it inside the green bowl.");
    let mut s = Scenario {
        id: "example-1".into(),
        mode: Mode::Single,
        seed: 0,
        dual_task: None,
        instruction,
        label: AmbiguityLabel::Clear,
        goal: GoalSpec::Clarify { tag: AskTag::Multiplicity },
        world: WorldState::single(objects),
    };
    s.label = s.recompute_label();
    s
}

/// A red block with no stated destination.
pub fn example_two() -> Scenario {
    let objects = vec![
        obj("red block", "red", "block").at(Cell::new(2, 3)),
        obj("blue bowl", "blue", "bowl").at(Cell::new(5, 1)),
        obj("green block", "green", "block").at(Cell::new(4, 4)),
    ];
    let instruction = InstructionSpec::new(
        TaskKind::Basic,
        Some(ReferentSpec::colored("red", "block")),
        Some(ReferentSpec::vague("away from the table")),
    )
    .unwrap()
    .with_text("Can you move the red block away from the table?");
    let mut s = Scenario {
        id: "example-2".into(),
        mode: Mode::Single,
        seed: 0,
        dual_task: None,
        instruction,
        label: AmbiguityLabel::Clear,
        goal: GoalSpec::Clarify { tag: AskTag::Underspecified },
        world: WorldState::single(objects),
    };
    s.label = s.recompute_label();
    s
}

pub fn example_one_replies() -> Vec<ScriptedReply> {
    [
        "The user wants me to place the block inside the red bowl into the green bowl. First, I will identify all red bowls in the scene.\n\
         retrieve_node(type = 'bowl', color='red')",
        "There are two red bowls. I should next determine which objects are inside each of them so I can identify the relevant block.\n\
         retrieve_edge(type='inside_of', target='red bowl 1')\n\
         retrieve_edge(type='inside_of', target='red bowl 2')",
        "There are two red bowls, each with a different block, making the user\u{2019}s command ambiguous. I should ask for clarification.\n\
         ask_multiplicity(\"Did you mean the yellow block or the blue block?\")",
    ]
    .into_iter()
    .map(ScriptedReply::text)
    .collect()
}

pub fn example_two_replies() -> Vec<ScriptedReply> {
    vec![ScriptedReply::text(
        "The instruction specifies the object (red block) but does not specify the target location. I need clarification about where the block should be placed.\n\
         ask_underspecified(\"Where exactly would you like me to place the red block?\")",
    )]
}

pub fn golden(name: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub mod graphs {
    use rand::seq::SliceRandom;
    use rand::Rng;
    use sgcot_core::scene_graph::{AttributeMap, Edge, Node, NodeId, SceneGraph};

    pub const KEYS: [&str; 3] = ["color", "type", "size"];
    pub const VALUES: [&str; 4] = ["red", "bowl", "small", "blue"];
    pub const RELATIONS: [&str; 5] = ["left_of", "right_of", "above", "below", "inside_of"];

    /// Up to 12 nodes and 40 edges drawn from small vocabularies so that
    /// filters hit often.
    pub fn random_graph(rng: &mut impl Rng) -> SceneGraph {
        let n = rng.gen_range(0..=12);
        let nodes: Vec<Node> = (0..n)
            .map(|i| {
                let mut attributes = AttributeMap::new();
                for k in KEYS {
                    if rng.gen_bool(0.7) {
                        attributes.insert(k, *VALUES.choose(rng).unwrap());
                    }
                }
                Node { id: NodeId::new(format!("n{i}")), attributes }
            })
            .collect();
        let mut edges = Vec::new();
        if n >= 2 {
            for _ in 0..rng.gen_range(0..=40) {
                let s = rng.gen_range(0..n);
                let t = rng.gen_range(0..n);
                let e = Edge::new(format!("n{s}").as_str(), RELATIONS.choose(rng).unwrap(), format!("n{t}").as_str());
                if s != t && !edges.contains(&e) {
                    edges.push(e);
                }
            }
        }
        SceneGraph::new(nodes, edges).unwrap()
    }

    pub fn random_case(rng: &mut impl Rng, s: &str) -> String {
        if rng.gen_bool(0.3) {
            s.to_uppercase()
        } else {
            s.to_string()
        }
    }

    pub fn random_node_filters(rng: &mut impl Rng, graph: &SceneGraph) -> Vec<(String, String)> {
        (0..rng.gen_range(0..=3))
            .map(|_| {
                let key = match rng.gen_range(0..10) {
                    0 => "weight".to_string(),
                    1 => "name".to_string(),
                    _ => KEYS.choose(rng).unwrap().to_string(),
                };
                let value = if key == "name" {
                    format!("n{}", rng.gen_range(0..graph.nodes().len().max(1) + 1))
                } else {
                    VALUES.choose(rng).unwrap().to_string()
                };
                (key, random_case(rng, &value))
            })
            .collect()
    }

    pub fn random_edge_filter(rng: &mut impl Rng, graph: &SceneGraph) -> [Option<String>; 3] {
        let n = graph.nodes().len();
        let id = |rng: &mut dyn rand::RngCore| format!("n{}", rng.gen_range(0..n + 2));
        let src = rng.gen_bool(0.5).then(|| id(rng));
        let tgt = rng.gen_bool(0.5).then(|| id(rng));
        let rel = rng.gen_bool(0.5).then(|| {
            let r = *RELATIONS.choose(rng).unwrap();
            random_case(rng, r)
        });
        [src, tgt, rel]
    }

    fn same(a: &str, b: &str) -> bool {
        a.to_lowercase() == b.to_lowercase()
    }

    /// Linear-scan reference for retrieve_node: `None` means an error.
    pub fn naive_nodes(graph: &SceneGraph, filters: &[(String, String)]) -> Option<Vec<String>> {
        let known = |k: &str| k == "name" || graph.nodes().iter().any(|n| n.attributes.get(k).is_some());
        if filters.iter().any(|(k, _)| !known(k)) {
            return None;
        }
        let mut out = Vec::new();
        for n in graph.nodes() {
            let mut ok = true;
            for (k, v) in filters {
                let own = if k == "name" { Some(n.id.as_str()) } else { n.attributes.get(k) };
                ok &= own.is_some_and(|o| same(o, v));
            }
            if ok {
                out.push(n.id.as_str().to_string());
            }
        }
        Some(out)
    }

    /// Linear-scan reference for retrieve_edge: `None` means an error.
    pub fn naive_edges(graph: &SceneGraph, f: &[Option<String>; 3]) -> Option<Vec<String>> {
        if f.iter().all(Option::is_none) {
            return None;
        }
        for id in [&f[0], &f[1]].into_iter().flatten() {
            if !graph.nodes().iter().any(|n| same(n.id.as_str(), id)) {
                return None;
            }
        }
        let mut hits: Vec<(String, String, String)> = Vec::new();
        for e in graph.edges() {
            let ok = f[0].as_ref().is_none_or(|s| same(e.source.as_str(), s))
                && f[1].as_ref().is_none_or(|t| same(e.target.as_str(), t))
                && f[2].as_ref().is_none_or(|r| same(&e.relation, r));
            if ok {
                hits.push((e.source.as_str().into(), e.relation.clone(), e.target.as_str().into()));
            }
        }
        hits.sort();
        Some(hits.into_iter().map(|(s, r, t)| format!("the {s} is {r} the {t}")).collect())
    }
}
