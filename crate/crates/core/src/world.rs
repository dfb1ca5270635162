//! Symbolic tabletop: objects on a discrete grid, containment and stacking,
//! one or two agents with per-agent visibility, and the action semantics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{DualExpectation, GoalSpec};
use crate::scene_graph::{AttributeMap, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub col: u8,
    pub row: u8,
}

impl Cell {
    pub const fn new(col: u8, row: u8) -> Self {
        Cell { col, row }
    }

    /// Neighbour one step in `dir`, if it stays inside `layout`.
    pub fn step(self, dir: crate::instruction::Direction, layout: &GridLayout) -> Option<Cell> {
        use crate::instruction::Direction::*;
        let (dc, dr): (i16, i16) = match dir {
            Left => (-1, 0),
            Right => (1, 0),
            Above => (0, -1),
            Below => (0, 1),
            Inside => return None,
        };
        let col = self.col as i16 + dc;
        let row = self.row as i16 + dr;
        (col >= 0 && row >= 0 && (col as u8) < layout.cols && (row as u8) < layout.rows)
            .then(|| Cell::new(col as u8, row as u8))
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.col, self.row)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub cols: u8,
    pub rows: u8,
}

impl GridLayout {
    /// 7x7 table for single-agent scenes.
    pub const fn single() -> Self {
        GridLayout { cols: 7, rows: 7 }
    }

    /// 7 rows by 9 columns, split into three vertical bands of 3 columns.
    pub const fn dual() -> Self {
        GridLayout { cols: 9, rows: 7 }
    }

    pub fn center(&self) -> Cell {
        Cell::new(self.cols / 2, self.rows / 2)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.cols).flat_map(move |c| (0..self.rows).map(move |r| Cell::new(c, r)))
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.col < self.cols && cell.row < self.rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionName {
    Robot1,
    Robot2,
    Shared,
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub name: RegionName,
    pub cells: BTreeSet<Cell>,
}

impl Region {
    fn columns(name: RegionName, layout: &GridLayout, cols: std::ops::Range<u8>) -> Self {
        Region {
            name,
            cells: layout.cells().filter(|c| cols.contains(&c.col)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(value: impl Into<String>) -> Self {
        AgentId(value.into())
    }

    pub fn robot1() -> Self {
        AgentId::new("robot1")
    }

    pub fn robot2() -> Self {
        AgentId::new("robot2")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Where an object rests. Held objects have no location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Cell(Cell),
    Inside(NodeId),
    OnTopOf(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: NodeId,
    pub attributes: AttributeMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<Cell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub container: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_top_of: Option<NodeId>,
}

impl ObjectInstance {
    pub fn new(id: impl Into<NodeId>, attributes: AttributeMap) -> Self {
        ObjectInstance {
            id: id.into(),
            attributes,
            cell: None,
            container: None,
            on_top_of: None,
        }
    }

    pub fn at(mut self, cell: Cell) -> Self {
        self.set_location(Some(Location::Cell(cell)));
        self
    }

    pub fn inside(mut self, container: impl Into<NodeId>) -> Self {
        self.set_location(Some(Location::Inside(container.into())));
        self
    }

    pub fn on_top_of(mut self, support: impl Into<NodeId>) -> Self {
        self.set_location(Some(Location::OnTopOf(support.into())));
        self
    }

    pub fn location(&self) -> Option<Location> {
        match (&self.cell, &self.container, &self.on_top_of) {
            (Some(c), None, None) => Some(Location::Cell(*c)),
            (None, Some(b), None) => Some(Location::Inside(b.clone())),
            (None, None, Some(s)) => Some(Location::OnTopOf(s.clone())),
            _ => None,
        }
    }

    pub fn set_location(&mut self, loc: Option<Location>) {
        self.cell = None;
        self.container = None;
        self.on_top_of = None;
        match loc {
            Some(Location::Cell(c)) => self.cell = Some(c),
            Some(Location::Inside(b)) => self.container = Some(b),
            Some(Location::OnTopOf(s)) => self.on_top_of = Some(s),
            None => {}
        }
    }

    pub fn object_type(&self) -> Option<&str> {
        self.attributes.get("type")
    }

    pub fn color(&self) -> Option<&str> {
        self.attributes.get("color")
    }

    pub fn is_bowl(&self) -> bool {
        self.object_type() == Some("bowl")
    }

    pub fn is_block(&self) -> bool {
        self.object_type() == Some("block")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AskTag {
    Multiplicity,
    Absence,
    Underspecified,
}

impl AskTag {
    pub const ALL: [AskTag; 3] = [AskTag::Multiplicity, AskTag::Absence, AskTag::Underspecified];

    pub fn as_str(self) -> &'static str {
        match self {
            AskTag::Multiplicity => "multiplicity",
            AskTag::Absence => "absence",
            AskTag::Underspecified => "underspecified",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        AskTag::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

/// Destination of a pick-and-place: a receptacle object or the shared band.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceTarget {
    Object(NodeId),
    Shared,
}

impl fmt::Display for PlaceTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlaceTarget::Object(id) => write!(f, "{id}"),
            PlaceTarget::Shared => f.write_str("shared"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    PickAndPlace { pick: NodeId, place: PlaceTarget },
    Ask { question: String, tag: AskTag },
    AskRobot { question: String },
}

impl Action {
    pub fn pick_and_place(pick: &str, place: &str) -> Self {
        let place = if place == "shared" {
            PlaceTarget::Shared
        } else {
            PlaceTarget::Object(NodeId::new(place))
        };
        Action::PickAndPlace {
            pick: NodeId::new(pick),
            place,
        }
    }

    /// Canonical call-line form, e.g. `pick_and_place('red block', 'green bowl')`.
    pub fn to_call(&self) -> String {
        match self {
            Action::PickAndPlace { pick, place } => {
                format!("pick_and_place('{}', '{}')", escape(pick.as_str(), '\''), escape(&place.to_string(), '\''))
            }
            Action::Ask { question, tag } => {
                format!("ask_{}(\"{}\")", tag.as_str(), escape(question, '"'))
            }
            Action::AskRobot { question } => {
                format!("ask_robot(\"{}\")", escape(question, '"'))
            }
        }
    }
}

fn escape(s: &str, quote: char) -> String {
    s.replace('\\', "\\\\").replace(quote, &format!("\\{quote}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    OccludedTarget,
    Holding,
    NoSuchObject,
    SelfPlace,
    InvalidPlace,
    SupportOccupied,
    NoFreeCell,
    EmptyQuestion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ActionOutcome {
    Placed { pick: NodeId, place: PlaceTarget },
    Asked { question: String, tag: AskTag },
    AskedRobot { question: String },
    Violation { violation: Violation, detail: String },
}

impl ActionOutcome {
    pub fn is_violation(&self) -> bool {
        matches!(self, ActionOutcome::Violation { .. })
    }

    fn violation(violation: Violation, detail: impl Into<String>) -> Self {
        ActionOutcome::Violation {
            violation,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("unknown agent '{0}'")]
    UnknownAgent(AgentId),
    #[error("duplicate object id '{0}'")]
    DuplicateObject(NodeId),
    #[error("object '{0}' must have exactly one of cell, container, on_top_of unless held")]
    BadLocation(NodeId),
    #[error("object '{id}' references missing or invalid support '{support}'")]
    BadSupport { id: NodeId, support: NodeId },
    #[error("object '{0}' must carry type and color attributes")]
    MissingAttributes(NodeId),
    #[error("object '{0}' lies outside the grid")]
    OffGrid(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub agent: AgentId,
    pub visible: Vec<ObjectInstance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub layout: GridLayout,
    pub objects: Vec<ObjectInstance>,
    pub regions: Vec<Region>,
    pub holding: BTreeMap<AgentId, Option<NodeId>>,
    pub agents: Vec<AgentId>,
}

impl WorldState {
    pub fn single(objects: Vec<ObjectInstance>) -> Self {
        let layout = GridLayout::single();
        let agent = AgentId::robot1();
        WorldState {
            layout,
            objects,
            regions: vec![Region::columns(RegionName::Full, &layout, 0..layout.cols)],
            holding: BTreeMap::from([(agent.clone(), None)]),
            agents: vec![agent],
        }
    }

    /// Two agents on the 9-column table: robot1 | shared | robot2.
    pub fn dual(objects: Vec<ObjectInstance>) -> Self {
        let layout = GridLayout::dual();
        let agents = vec![AgentId::robot1(), AgentId::robot2()];
        WorldState {
            layout,
            objects,
            regions: vec![
                Region::columns(RegionName::Robot1, &layout, 0..3),
                Region::columns(RegionName::Shared, &layout, 3..6),
                Region::columns(RegionName::Robot2, &layout, 6..9),
                Region::columns(RegionName::Full, &layout, 0..9),
            ],
            holding: agents.iter().map(|a| (a.clone(), None)).collect(),
            agents,
        }
    }

    pub fn is_dual(&self) -> bool {
        self.agents.len() > 1
    }

    pub fn object(&self, id: &NodeId) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| &o.id == id)
    }

    pub fn region(&self, name: RegionName) -> Option<&Region> {
        self.regions.iter().find(|r| r.name == name)
    }

    /// Checks structural invariants of a snapshot.
    pub fn validate(&self) -> Result<(), WorldError> {
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(&o.id) {
                return Err(WorldError::DuplicateObject(o.id.clone()));
            }
            if o.object_type().is_none() || o.color().is_none() {
                return Err(WorldError::MissingAttributes(o.id.clone()));
            }
        }
        let held: BTreeSet<&NodeId> = self.holding.values().flatten().collect();
        for o in &self.objects {
            match o.location() {
                None if held.contains(&o.id) => {}
                None => return Err(WorldError::BadLocation(o.id.clone())),
                Some(_) if held.contains(&o.id) => return Err(WorldError::BadLocation(o.id.clone())),
                Some(Location::Cell(c)) if !self.layout.contains(c) => {
                    return Err(WorldError::OffGrid(o.id.clone()))
                }
                Some(Location::Cell(_)) => {}
                Some(Location::Inside(b)) => {
                    if !self.object(&b).is_some_and(ObjectInstance::is_bowl) || b == o.id {
                        return Err(WorldError::BadSupport { id: o.id.clone(), support: b });
                    }
                }
                Some(Location::OnTopOf(s)) => {
                    if self.object(&s).is_none() || s == o.id {
                        return Err(WorldError::BadSupport { id: o.id.clone(), support: s });
                    }
                }
            }
            if self.root_cell(&o.id).is_none() && !held.contains(&o.id) && !self.held_chain(&o.id) {
                return Err(WorldError::BadLocation(o.id.clone()));
            }
        }
        Ok(())
    }

    fn held_chain(&self, id: &NodeId) -> bool {
        let held: BTreeSet<&NodeId> = self.holding.values().flatten().collect();
        let mut cur = id.clone();
        for _ in 0..=self.objects.len() {
            if held.contains(&cur) {
                return true;
            }
            match self.object(&cur).and_then(ObjectInstance::location) {
                Some(Location::Inside(n)) | Some(Location::OnTopOf(n)) => cur = n,
                _ => return false,
            }
        }
        false
    }

    /// Grid cell an object ultimately rests on, following containers and
    /// supports. `None` for held objects (or broken chains).
    pub fn root_cell(&self, id: &NodeId) -> Option<Cell> {
        let mut cur = id.clone();
        for _ in 0..=self.objects.len() {
            match self.object(&cur)?.location()? {
                Location::Cell(c) => return Some(c),
                Location::Inside(n) | Location::OnTopOf(n) => cur = n,
            }
        }
        None
    }

    fn agent_region(&self, agent: &AgentId) -> Option<RegionName> {
        match agent.as_str() {
            "robot1" => Some(RegionName::Robot1),
            "robot2" => Some(RegionName::Robot2),
            _ => None,
        }
    }

    fn visible_to(&self, agent: &AgentId, id: &NodeId) -> bool {
        if !self.is_dual() {
            return true;
        }
        if self.holding.get(agent).and_then(Option::as_ref) == Some(id) {
            return true;
        }
        let Some(cell) = self.root_cell(id) else {
            return false;
        };
        let own = self.agent_region(agent).and_then(|r| self.region(r));
        let shared = self.region(RegionName::Shared);
        [own, shared]
            .into_iter()
            .flatten()
            .any(|r| r.cells.contains(&cell))
    }

    pub fn observe(&self, agent: &AgentId) -> Result<Observation, WorldError> {
        if !self.agents.contains(agent) {
            return Err(WorldError::UnknownAgent(agent.clone()));
        }
        Ok(Observation {
            agent: agent.clone(),
            visible: self
                .objects
                .iter()
                .filter(|o| self.visible_to(agent, &o.id))
                .cloned()
                .collect(),
        })
    }

    /// Applies one action for `agent`. Precondition failures are reported
    /// in the outcome and leave the world untouched.
    pub fn apply(&self, agent: &AgentId, action: &Action) -> Result<(WorldState, ActionOutcome), WorldError> {
        if !self.agents.contains(agent) {
            return Err(WorldError::UnknownAgent(agent.clone()));
        }
        let outcome = match action {
            Action::Ask { question, tag } => {
                if question.trim().is_empty() {
                    ActionOutcome::violation(Violation::EmptyQuestion, "ask needs a question")
                } else {
                    ActionOutcome::Asked {
                        question: question.clone(),
                        tag: *tag,
                    }
                }
            }
            Action::AskRobot { question } => {
                if question.trim().is_empty() {
                    ActionOutcome::violation(Violation::EmptyQuestion, "ask_robot needs a question")
                } else {
                    ActionOutcome::AskedRobot {
                        question: question.clone(),
                    }
                }
            }
            Action::PickAndPlace { pick, place } => match self.pick_and_place(agent, pick, place) {
                Ok(next) => {
                    let outcome = ActionOutcome::Placed {
                        pick: pick.clone(),
                        place: place.clone(),
                    };
                    return Ok((next, outcome));
                }
                Err(v) => v,
            },
        };
        Ok((self.clone(), outcome))
    }

    fn pick_and_place(&self, agent: &AgentId, pick: &NodeId, place: &PlaceTarget) -> Result<WorldState, ActionOutcome> {
        use Violation::*;
        if self.object(pick).is_none() {
            return Err(ActionOutcome::violation(NoSuchObject, format!("no object '{pick}'")));
        }
        if let PlaceTarget::Object(dest) = place {
            if self.object(dest).is_none() {
                return Err(ActionOutcome::violation(NoSuchObject, format!("no object '{dest}'")));
            }
            if dest == pick {
                return Err(ActionOutcome::violation(SelfPlace, format!("cannot place '{pick}' on itself")));
            }
        }
        if self.holding.get(agent).and_then(Option::as_ref).is_some() {
            return Err(ActionOutcome::violation(Holding, format!("{agent} already holds an object")));
        }
        if !self.visible_to(agent, pick) {
            return Err(ActionOutcome::violation(OccludedTarget, format!("'{pick}' is not visible to {agent}")));
        }
        let new_location = match place {
            PlaceTarget::Shared => {
                let Some(shared) = self.region(RegionName::Shared) else {
                    return Err(ActionOutcome::violation(InvalidPlace, "no shared workspace in this scene"));
                };
                let occupied: BTreeSet<Cell> = self
                    .objects
                    .iter()
                    .filter(|o| &o.id != pick)
                    .filter_map(|o| o.cell)
                    .collect();
                match shared.cells.iter().find(|c| !occupied.contains(c)) {
                    Some(c) => Location::Cell(*c),
                    None => return Err(ActionOutcome::violation(NoFreeCell, "shared workspace is full")),
                }
            }
            PlaceTarget::Object(dest) => {
                if !self.visible_to(agent, dest) {
                    return Err(ActionOutcome::violation(OccludedTarget, format!("'{dest}' is not visible to {agent}")));
                }
                if self.rests_on(dest, pick) {
                    return Err(ActionOutcome::violation(InvalidPlace, format!("'{dest}' rests on '{pick}'")));
                }
                let receptacle = self.object(dest).expect("checked above");
                if receptacle.is_bowl() {
                    Location::Inside(dest.clone())
                } else {
                    let occupied = self
                        .objects
                        .iter()
                        .any(|o| &o.id != pick && o.on_top_of.as_ref() == Some(dest));
                    if occupied {
                        return Err(ActionOutcome::violation(SupportOccupied, format!("something already rests on '{dest}'")));
                    }
                    Location::OnTopOf(dest.clone())
                }
            }
        };
        let mut next = self.clone();
        next.objects
            .iter_mut()
            .find(|o| &o.id == pick)
            .expect("checked above")
            .set_location(Some(new_location));
        Ok(next)
    }

    /// True if `id` sits (transitively) inside or on top of `base`.
    fn rests_on(&self, id: &NodeId, base: &NodeId) -> bool {
        let mut cur = id.clone();
        for _ in 0..=self.objects.len() {
            match self.object(&cur).and_then(ObjectInstance::location) {
                Some(Location::Inside(n)) | Some(Location::OnTopOf(n)) => {
                    if &n == base {
                        return true;
                    }
                    cur = n;
                }
                _ => return false,
            }
        }
        false
    }

    /// Applies a sequence, stopping after the first violation.
    pub fn apply_all(&self, agent: &AgentId, actions: &[Action]) -> Result<(WorldState, Vec<ActionOutcome>), WorldError> {
        let mut world = self.clone();
        let mut outcomes = Vec::with_capacity(actions.len());
        for action in actions {
            let (next, outcome) = world.apply(agent, action)?;
            let stop = outcome.is_violation();
            world = next;
            outcomes.push(outcome);
            if stop {
                break;
            }
        }
        Ok((world, outcomes))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serialization is infallible")
    }
}

/// Pure goal check against a scenario's ground-truth goal.
pub fn goal_satisfied(world: &WorldState, goal: &GoalSpec) -> bool {
    let rests_in = |pick: &NodeId, place: &NodeId| {
        world.object(pick).is_some_and(|o| {
            o.container.as_ref() == Some(place) || o.on_top_of.as_ref() == Some(place)
        })
    };
    match goal {
        GoalSpec::Placement { pick, place } => rests_in(pick, place),
        GoalSpec::ColorMatch => {
            let mut blocks = world.objects.iter().filter(|o| o.is_block()).peekable();
            blocks.peek().is_some()
                && blocks.all(|b| {
                    b.container
                        .as_ref()
                        .and_then(|c| world.object(c))
                        .is_some_and(|bowl| bowl.is_bowl() && bowl.color() == b.color())
                })
        }
        GoalSpec::Transfer { pick, place, expected } => match expected {
            DualExpectation::PlaceToShared => world
                .root_cell(pick)
                .zip(world.region(RegionName::Shared))
                .is_some_and(|(c, r)| r.cells.contains(&c)),
            DualExpectation::Direct | DualExpectation::AskRobot => rests_in(pick, place),
        },
        GoalSpec::Clarify { .. } => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(id: &str, color: &str, ty: &str) -> ObjectInstance {
        ObjectInstance::new(id, AttributeMap::from_pairs([("color", color), ("type", ty)]))
    }

    fn basic_world() -> WorldState {
        WorldState::single(vec![
            obj("yellow block", "yellow", "block").at(Cell::new(0, 0)),
            obj("green bowl", "green", "bowl").at(Cell::new(3, 3)),
            obj("red block", "red", "block").at(Cell::new(1, 4)),
            obj("blue block", "blue", "block").at(Cell::new(6, 6)),
            obj("apple", "red", "apple").at(Cell::new(2, 2)),
        ])
    }

    #[test]
    fn single_agent_sees_everything() {
        let w = basic_world();
        assert_eq!(w.observe(&AgentId::robot1()).unwrap().visible.len(), 5);
        assert!(w.observe(&AgentId::robot2()).is_err());
    }

    #[test]
    fn dual_agent_visibility_by_band() {
        let w = WorldState::dual(vec![
            obj("red block", "red", "block").at(Cell::new(7, 2)),
            obj("green bowl", "green", "bowl").at(Cell::new(4, 1)),
            obj("blue block", "blue", "block").inside("green bowl"),
            obj("cup", "blue", "cup").at(Cell::new(0, 0)),
        ]);
        w.validate().unwrap();
        let r1 = w.observe(&AgentId::robot1()).unwrap();
        let r1_ids: Vec<_> = r1.visible.iter().map(|o| o.id.as_str()).collect();
        assert_eq!(r1_ids, ["green bowl", "blue block", "cup"]);
        let r2 = w.observe(&AgentId::robot2()).unwrap();
        let r2_ids: Vec<_> = r2.visible.iter().map(|o| o.id.as_str()).collect();
        assert_eq!(r2_ids, ["red block", "green bowl", "blue block"]);
    }

    #[test]
    fn pick_and_place_into_bowl() {
        let w = basic_world();
        let (next, outcome) = w
            .apply(&AgentId::robot1(), &Action::pick_and_place("yellow block", "green bowl"))
            .unwrap();
        assert!(!outcome.is_violation());
        let y = next.object(&NodeId::new("yellow block")).unwrap();
        assert_eq!(y.container, Some(NodeId::new("green bowl")));
        assert_eq!(y.cell, None);
        next.validate().unwrap();
    }

    #[test]
    fn stacking_sets_on_top_of_and_allows_one_per_support() {
        let w = basic_world();
        let a = AgentId::robot1();
        let (w, o) = w.apply(&a, &Action::pick_and_place("yellow block", "red block")).unwrap();
        assert!(!o.is_violation());
        assert_eq!(
            w.object(&NodeId::new("yellow block")).unwrap().on_top_of,
            Some(NodeId::new("red block"))
        );
        let (_, o) = w.apply(&a, &Action::pick_and_place("blue block", "red block")).unwrap();
        assert!(matches!(o, ActionOutcome::Violation { violation: Violation::SupportOccupied, .. }));
    }

    #[test]
    fn ask_leaves_world_unchanged() {
        let w = basic_world();
        let ask = Action::Ask {
            question: "Which block?".into(),
            tag: AskTag::Absence,
        };
        let (next, outcome) = w.apply(&AgentId::robot1(), &ask).unwrap();
        assert_eq!(next, w);
        assert!(matches!(outcome, ActionOutcome::Asked { tag: AskTag::Absence, .. }));
    }

    #[test]
    fn violations_are_reported_not_raised() {
        let w = basic_world();
        let a = AgentId::robot1();
        let cases = [
            (Action::pick_and_place("ghost", "green bowl"), Violation::NoSuchObject),
            (Action::pick_and_place("apple", "apple"), Violation::SelfPlace),
            (Action::pick_and_place("apple", "shared"), Violation::InvalidPlace),
        ];
        for (action, expected) in cases {
            let (next, outcome) = w.apply(&a, &action).unwrap();
            assert_eq!(next, w);
            assert!(
                matches!(outcome, ActionOutcome::Violation { violation, .. } if violation == expected),
                "{action:?}"
            );
        }
        let mut holding = w.clone();
        holding.holding.insert(a.clone(), Some(NodeId::new("apple")));
        let (_, outcome) = holding.apply(&a, &Action::pick_and_place("red block", "green bowl")).unwrap();
        assert!(matches!(outcome, ActionOutcome::Violation { violation: Violation::Holding, .. }));
    }

    #[test]
    fn occluded_pick_is_a_violation() {
        let w = WorldState::dual(vec![
            obj("red block", "red", "block").at(Cell::new(8, 0)),
            obj("green bowl", "green", "bowl").at(Cell::new(0, 0)),
        ]);
        let (_, outcome) = w
            .apply(&AgentId::robot1(), &Action::pick_and_place("red block", "green bowl"))
            .unwrap();
        assert!(matches!(outcome, ActionOutcome::Violation { violation: Violation::OccludedTarget, .. }));
    }

    #[test]
    fn place_to_shared_uses_lowest_free_cell() {
        let w = WorldState::dual(vec![
            obj("red block", "red", "block").at(Cell::new(1, 1)),
            obj("cup", "blue", "cup").at(Cell::new(3, 0)),
            obj("green bowl", "green", "bowl").at(Cell::new(8, 3)),
        ]);
        let (next, outcome) = w
            .apply(&AgentId::robot1(), &Action::pick_and_place("red block", "shared"))
            .unwrap();
        assert!(!outcome.is_violation());
        assert_eq!(next.object(&NodeId::new("red block")).unwrap().cell, Some(Cell::new(3, 1)));
        let goal = GoalSpec::Transfer {
            pick: NodeId::new("red block"),
            place: NodeId::new("green bowl"),
            expected: DualExpectation::PlaceToShared,
        };
        assert!(goal_satisfied(&next, &goal));
        assert!(!goal_satisfied(&w, &goal));
    }

    #[test]
    fn color_match_goal() {
        let mut w = WorldState::single(vec![
            obj("red block", "red", "block").at(Cell::new(0, 0)),
            obj("blue block", "blue", "block").at(Cell::new(1, 0)),
            obj("green block", "green", "block").at(Cell::new(2, 0)),
            obj("red bowl", "red", "bowl").at(Cell::new(0, 3)),
            obj("blue bowl", "blue", "bowl").at(Cell::new(1, 3)),
            obj("green bowl", "green", "bowl").at(Cell::new(2, 3)),
        ]);
        assert!(!goal_satisfied(&w, &GoalSpec::ColorMatch));
        let a = AgentId::robot1();
        for c in ["red", "blue", "green"] {
            let (next, o) = w
                .apply(&a, &Action::pick_and_place(&format!("{c} block"), &format!("{c} bowl")))
                .unwrap();
            assert!(!o.is_violation());
            w = next;
        }
        assert!(goal_satisfied(&w, &GoalSpec::ColorMatch));
    }

    /// Every block-to-bowl assignment for three colors: the predicate holds
    /// for exactly the identity assignment.
    #[test]
    fn color_match_agrees_with_assignment_enumeration() {
        let colors = ["red", "blue", "green"];
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for perm in perms {
            let mut objects = Vec::new();
            for (i, c) in colors.iter().enumerate() {
                objects.push(obj(&format!("{c} bowl"), c, "bowl").at(Cell::new(i as u8, 3)));
            }
            for (i, c) in colors.iter().enumerate() {
                let bowl = format!("{} bowl", colors[perm[i]]);
                objects.push(obj(&format!("{c} block"), c, "block").inside(bowl.as_str()));
            }
            let w = WorldState::single(objects);
            w.validate().unwrap();
            let brute = perm.iter().enumerate().all(|(i, &j)| i == j);
            assert_eq!(goal_satisfied(&w, &GoalSpec::ColorMatch), brute, "{perm:?}");
        }
    }

    #[test]
    fn apply_preserves_attributes_and_count() {
        let w = basic_world();
        let a = AgentId::robot1();
        let actions = [
            Action::pick_and_place("yellow block", "green bowl"),
            Action::pick_and_place("apple", "red block"),
            Action::pick_and_place("green bowl", "blue block"),
        ];
        let (next, outcomes) = w.apply_all(&a, &actions).unwrap();
        assert_eq!(outcomes.len(), 3);
        assert_eq!(next.objects.len(), w.objects.len());
        for (before, after) in w.objects.iter().zip(&next.objects) {
            assert_eq!(before.id, after.id);
            assert_eq!(before.attributes, after.attributes);
        }
        next.validate().unwrap();
    }

    #[test]
    fn cannot_place_onto_something_resting_on_pick() {
        let w = WorldState::single(vec![
            obj("red bowl", "red", "bowl").at(Cell::new(0, 0)),
            obj("blue bowl", "blue", "bowl").inside("red bowl"),
        ]);
        let (_, outcome) = w
            .apply(&AgentId::robot1(), &Action::pick_and_place("red bowl", "blue bowl"))
            .unwrap();
        assert!(matches!(outcome, ActionOutcome::Violation { violation: Violation::InvalidPlace, .. }));
    }

    #[test]
    fn snapshot_round_trips() {
        let w = basic_world();
        let back: WorldState = serde_json::from_str(&w.to_json()).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn validate_rejects_bad_snapshots() {
        let dup = WorldState::single(vec![
            obj("cup", "red", "cup").at(Cell::new(0, 0)),
            obj("cup", "red", "cup").at(Cell::new(1, 0)),
        ]);
        assert!(matches!(dup.validate(), Err(WorldError::DuplicateObject(_))));
        let not_bowl = WorldState::single(vec![
            obj("cup", "red", "cup").at(Cell::new(0, 0)),
            obj("block", "red", "block").inside("cup"),
        ]);
        assert!(matches!(not_bowl.validate(), Err(WorldError::BadSupport { .. })));
        let floating = WorldState::single(vec![obj("cup", "red", "cup")]);
        assert!(matches!(floating.validate(), Err(WorldError::BadLocation(_))));
    }
}
