//! Referring expressions, grounding (`match_set`), ambiguity classification
//! and instruction text rendering.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene_graph::{AttributeMap, NodeId, SceneGraph};
use crate::world::{GridLayout, ObjectInstance, Observation};

/// Vague words substituted for a grounded referent.
pub const VAGUE_WORDS: [&str; 5] = ["something", "an object", "that thing", "one of them", "an item"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
    Above,
    Below,
    /// Containment ("the block inside the red bowl").
    Inside,
}

impl Direction {
    pub const CARDINAL: [Direction; 4] = [Direction::Left, Direction::Right, Direction::Above, Direction::Below];

    /// Graph relation an object bears toward its reference.
    pub fn relation(self) -> &'static str {
        match self {
            Direction::Left => "left_of",
            Direction::Right => "right_of",
            Direction::Above => "above",
            Direction::Below => "below",
            Direction::Inside => "inside_of",
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Above => "above",
            Direction::Below => "below",
            Direction::Inside => "inside",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialConstraint {
    pub direction: Direction,
    pub reference: ReferentSpec,
}

/// Constraints an instruction places on one referent. A vague referent
/// carries only the ungrounded word that replaced it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferentSpec {
    pub attributes: AttributeMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial: Option<Box<SpatialConstraint>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vague: Option<String>,
}

impl ReferentSpec {
    pub fn attrs(attributes: AttributeMap) -> Self {
        ReferentSpec {
            attributes,
            ..Default::default()
        }
    }

    /// `{color, type}` referent, e.g. "the red block".
    pub fn colored(color: &str, ty: &str) -> Self {
        Self::attrs(AttributeMap::from_pairs([("color", color), ("type", ty)]))
    }

    pub fn related(mut self, direction: Direction, reference: ReferentSpec) -> Self {
        self.spatial = Some(Box::new(SpatialConstraint { direction, reference }));
        self
    }

    pub fn vague(word: &str) -> Self {
        ReferentSpec {
            vague: Some(word.to_string()),
            ..Default::default()
        }
    }

    pub fn is_vague(&self) -> bool {
        self.vague.is_some()
    }

    fn is_well_formed(&self) -> bool {
        match &self.vague {
            Some(w) => !w.is_empty() && self.attributes.is_empty() && self.spatial.is_none(),
            None => self.spatial.as_ref().is_none_or(|s| s.reference.is_well_formed() && !s.reference.is_vague()),
        }
    }

    /// Noun phrase without article: "red block", "object to the left of the red apple".
    pub fn noun(&self) -> String {
        if let Some(word) = &self.vague {
            return word.clone();
        }
        let mut words: Vec<&str> = Vec::new();
        for key in ["size", "color"] {
            if let Some(v) = self.attributes.get(key) {
                words.push(v);
            }
        }
        words.push(self.attributes.get("type").unwrap_or("object"));
        let mut noun = words.join(" ");
        if let Some(s) = &self.spatial {
            let rel = match s.direction {
                Direction::Inside => "inside".to_string(),
                d => format!("to the {} of", d.word()),
            };
            noun = format!("{noun} {rel} the {}", s.reference.noun());
        }
        noun
    }

    /// Noun phrase with article; vague words stand alone.
    pub fn phrase(&self) -> String {
        if self.is_vague() {
            self.noun()
        } else {
            format!("the {}", self.noun())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Basic,
    Spatial,
    LongHorizon,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSpec {
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pick: Option<ReferentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub place: Option<ReferentSpec>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstructionError {
    #[error("long-horizon instructions carry no pick or place referent")]
    LongHorizonReferents,
    #[error("{0:?} instructions need both pick and place referents")]
    MissingReferent(TaskKind),
    #[error("malformed referent (vague referents carry only the vague word)")]
    MalformedReferent,
    #[error("instruction text is empty")]
    EmptyText,
}

impl InstructionSpec {
    /// Builds an instruction and renders its template text.
    pub fn new(task: TaskKind, pick: Option<ReferentSpec>, place: Option<ReferentSpec>) -> Result<Self, InstructionError> {
        let mut spec = InstructionSpec {
            task,
            pick,
            place,
            text: String::new(),
        };
        spec.text = render(&spec);
        spec.validate()?;
        Ok(spec)
    }

    pub fn long_horizon() -> Self {
        InstructionSpec::new(TaskKind::LongHorizon, None, None).expect("valid by construction")
    }

    /// Replaces the rendered text, e.g. for hand-written dialogue fixtures.
    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = text.into();
        self
    }

    pub fn validate(&self) -> Result<(), InstructionError> {
        match self.task {
            TaskKind::LongHorizon if self.pick.is_some() || self.place.is_some() => {
                return Err(InstructionError::LongHorizonReferents)
            }
            TaskKind::Basic | TaskKind::Spatial if self.pick.is_none() || self.place.is_none() => {
                return Err(InstructionError::MissingReferent(self.task))
            }
            _ => {}
        }
        if !self.referents().all(ReferentSpec::is_well_formed) {
            return Err(InstructionError::MalformedReferent);
        }
        if self.text.trim().is_empty() {
            return Err(InstructionError::EmptyText);
        }
        Ok(())
    }

    pub fn referents(&self) -> impl Iterator<Item = &ReferentSpec> {
        self.pick.iter().chain(self.place.iter())
    }
}

/// Fills the instruction template for the task variant.
pub fn render(instr: &InstructionSpec) -> String {
    if instr.task == TaskKind::LongHorizon {
        return "Place all the blocks over the bowls that match their color".to_string();
    }
    let pick = instr.pick.as_ref();
    let place = instr.place.as_ref();
    let place_phrase = place.map(ReferentSpec::phrase).unwrap_or_default();
    match pick {
        Some(p) if p.is_vague() => {
            let over = match place {
                Some(pl) if !pl.is_vague() => format!("the {}", pl.noun()),
                _ => place_phrase,
            };
            format!("Place {} over {over}", p.noun())
        }
        Some(p) => format!("Pick up {} and place on {place_phrase}", p.phrase()),
        None => String::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbiguityLabel {
    Clear,
    Multiplicity,
    Absence,
    Underspecified,
    Occluded,
}

impl AmbiguityLabel {
    pub const ALL: [AmbiguityLabel; 5] = [
        AmbiguityLabel::Clear,
        AmbiguityLabel::Multiplicity,
        AmbiguityLabel::Absence,
        AmbiguityLabel::Underspecified,
        AmbiguityLabel::Occluded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AmbiguityLabel::Clear => "clear",
            AmbiguityLabel::Multiplicity => "multiplicity",
            AmbiguityLabel::Absence => "absence",
            AmbiguityLabel::Underspecified => "underspecified",
            AmbiguityLabel::Occluded => "occluded",
        }
    }

    /// Ask tag matching this label, for the three instruction/environment kinds.
    pub fn ask_tag(self) -> Option<crate::world::AskTag> {
        use crate::world::AskTag;
        match self {
            AmbiguityLabel::Multiplicity => Some(AskTag::Multiplicity),
            AmbiguityLabel::Absence => Some(AskTag::Absence),
            AmbiguityLabel::Underspecified => Some(AskTag::Underspecified),
            _ => None,
        }
    }

    pub fn is_ambiguous_single(self) -> bool {
        self.ask_tag().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroundingError {
    #[error("vague referent cannot be grounded")]
    Vague,
    #[error("spatial reference matches {count} objects, expected exactly one")]
    AmbiguousReference { count: usize },
}

/// Objects whose attributes include every constraint of `spec`, narrowed by
/// the spatial constraint when present. Order follows `objects`.
pub fn match_set(spec: &ReferentSpec, objects: &[ObjectInstance], graph: &SceneGraph) -> Result<Vec<NodeId>, GroundingError> {
    if spec.is_vague() {
        return Err(GroundingError::Vague);
    }
    let candidates = objects
        .iter()
        .filter(|o| o.attributes.satisfies(&spec.attributes))
        .map(|o| o.id.clone());
    let Some(spatial) = &spec.spatial else {
        return Ok(candidates.collect());
    };
    let refs = match_set(&spatial.reference, objects, graph)?;
    let [reference] = refs.as_slice() else {
        return Err(GroundingError::AmbiguousReference { count: refs.len() });
    };
    let relation = spatial.direction.relation();
    Ok(candidates
        .filter(|id| {
            graph
                .edges()
                .iter()
                .any(|e| &e.source == id && &e.target == reference && e.relation == relation)
        })
        .collect())
}

/// Number of plausible referents: an ambiguous spatial reference counts as
/// its own reference multiplicity.
fn referent_count(spec: &ReferentSpec, objects: &[ObjectInstance], graph: &SceneGraph) -> usize {
    match match_set(spec, objects, graph) {
        Ok(ids) => ids.len(),
        Err(GroundingError::AmbiguousReference { count }) => count,
        Err(GroundingError::Vague) => 0,
    }
}

/// Total ambiguity classification of an instruction against what the agent
/// sees. `global_objects` enables the occluded tag.
pub fn classify(
    instr: &InstructionSpec,
    observation: &Observation,
    global_objects: Option<&[ObjectInstance]>,
    graph: &SceneGraph,
) -> AmbiguityLabel {
    if instr.referents().any(ReferentSpec::is_vague) {
        return AmbiguityLabel::Underspecified;
    }
    let global_graph = global_objects.map(|objs| {
        SceneGraph::build_from_observation(objs, &GridLayout::dual()).unwrap_or_else(|_| SceneGraph::empty())
    });
    for referent in instr.referents() {
        match referent_count(referent, &observation.visible, graph) {
            1 => {}
            0 => {
                let global = global_objects
                    .zip(global_graph.as_ref())
                    .map(|(objs, g)| referent_count(referent, objs, g))
                    .unwrap_or(0);
                return if global >= 1 {
                    AmbiguityLabel::Occluded
                } else {
                    AmbiguityLabel::Absence
                };
            }
            _ => return AmbiguityLabel::Multiplicity,
        }
    }
    AmbiguityLabel::Clear
}
