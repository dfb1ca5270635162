//! Seeded scenario generation: basic, spatial and long-horizon tabletop
//! tasks, ambiguity perturbations, dual-agent Stack/Pass instances, and
//! suite assembly with a JSON manifest.
//!
//! Seeding: every scenario draws from its own ChaCha8 stream seeded with
//! `splitmix64(master + splitmix64(stream << 32 | index))`, where `stream`
//! identifies the category. Growing one category never reshuffles another.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instruction::{classify, AmbiguityLabel, Direction, InstructionSpec, ReferentSpec, TaskKind, VAGUE_WORDS};
use crate::scene_graph::{AttributeMap, NodeId, SceneGraph};
use crate::world::{AgentId, AskTag, Cell, GridLayout, ObjectInstance, WorldState};

pub const COLORS: [&str; 6] = ["red", "green", "blue", "yellow", "cyan", "purple"];

/// (type, admissible colors) for everything the generator may place.
const KINDS: [(&str, &[&str]); 5] = [
    ("block", &COLORS),
    ("bowl", &COLORS),
    ("apple", &["red", "green", "yellow"]),
    ("banana", &["yellow", "green"]),
    ("cup", &COLORS),
];

const MAX_ATTEMPTS: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Single,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualTask {
    Stack,
    Pass,
}

/// Behaviour that earns success in a dual-agent episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualExpectation {
    /// Pick target occluded: query the other robot.
    AskRobot,
    /// Only the place target occluded: hand the pick target over via shared.
    PlaceToShared,
    /// Both visible: place directly.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "goal", rename_all = "snake_case")]
pub enum GoalSpec {
    Placement { pick: NodeId, place: NodeId },
    ColorMatch,
    Transfer { pick: NodeId, place: NodeId, expected: DualExpectation },
    /// Ambiguous trial: satisfied by asking with this tag.
    Clarify { tag: AskTag },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub mode: Mode,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_task: Option<DualTask>,
    pub instruction: InstructionSpec,
    pub label: AmbiguityLabel,
    pub goal: GoalSpec,
    pub world: WorldState,
}

impl Scenario {
    pub fn acting_agent(&self) -> AgentId {
        AgentId::robot1()
    }

    /// Label recomputed from scratch against the acting agent's view.
    pub fn recompute_label(&self) -> AmbiguityLabel {
        let obs = self
            .world
            .observe(&self.acting_agent())
            .expect("acting agent exists");
        let graph = SceneGraph::build_from_observation(&obs.visible, &self.world.layout)
            .expect("generated worlds have unique ids");
        let global = (self.mode == Mode::Dual).then_some(self.world.objects.as_slice());
        classify(&self.instruction, &obs, global, &graph)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization is infallible")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("perturbation requires a clear single-agent basic or spatial scenario, got {0}")]
    NotPerturbable(String),
    #[error("no free cell for the duplicated target in {0}")]
    NoFreeCell(String),
    #[error("generated scenario {id} labelled {got:?}, expected {expected:?}")]
    Inconsistent { id: String, expected: AmbiguityLabel, got: AmbiguityLabel },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn scenario_seed(master: u64, stream: u32, index: u32) -> u64 {
    splitmix64(master.wrapping_add(splitmix64(((stream as u64) << 32) | index as u64)))
}

fn kind_name(color: &str, ty: &str) -> String {
    format!("{color} {ty}")
}

fn make(color: &str, ty: &str, cell: Cell) -> ObjectInstance {
    ObjectInstance::new(
        kind_name(color, ty),
        AttributeMap::from_pairs([("color", color), ("type", ty)]),
    )
    .at(cell)
}

fn sample_kind(rng: &mut ChaCha8Rng, types: &[&str]) -> (String, String) {
    let ty = *types.choose(rng).expect("non-empty");
    let colors = KINDS.iter().find(|(t, _)| *t == ty).map(|(_, c)| *c).expect("known type");
    (colors.choose(rng).expect("non-empty").to_string(), ty.to_string())
}

/// Samples a kind not already in `taken`.
fn fresh_kind(rng: &mut ChaCha8Rng, types: &[&str], taken: &mut BTreeSet<(String, String)>) -> (String, String) {
    loop {
        let k = sample_kind(rng, types);
        if taken.insert(k.clone()) {
            return k;
        }
    }
}

fn distinct_cells(rng: &mut ChaCha8Rng, pool: &[Cell], n: usize) -> Vec<Cell> {
    pool.choose_multiple(rng, n).copied().collect()
}

const ALL_TYPES: [&str; 5] = ["block", "bowl", "apple", "banana", "cup"];
const PICKABLE: [&str; 4] = ["block", "apple", "banana", "cup"];

fn finish(id: String, seed: u64, mode: Mode, dual_task: Option<DualTask>, instruction: InstructionSpec, goal: GoalSpec, world: WorldState) -> Scenario {
    let mut s = Scenario {
        id,
        mode,
        seed,
        dual_task,
        instruction,
        label: AmbiguityLabel::Clear,
        goal,
        world,
    };
    s.label = s.recompute_label();
    s
}

/// Pick object, bowl to place it in, and 2-4 distractors on distinct cells.
pub fn gen_basic(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = BTreeSet::new();
    let pick = fresh_kind(&mut rng, &PICKABLE, &mut taken);
    let place = fresh_kind(&mut rng, &["bowl"], &mut taken);
    let n_distractors = rng.gen_range(2..=4);
    let distractors: Vec<_> = (0..n_distractors)
        .map(|_| fresh_kind(&mut rng, &ALL_TYPES, &mut taken))
        .collect();
    let layout = GridLayout::single();
    let pool: Vec<Cell> = layout.cells().collect();
    let cells = distinct_cells(&mut rng, &pool, 2 + distractors.len());
    let mut objects = vec![make(&pick.0, &pick.1, cells[0]), make(&place.0, &place.1, cells[1])];
    for (k, c) in distractors.iter().zip(&cells[2..]) {
        objects.push(make(&k.0, &k.1, *c));
    }
    objects.shuffle(&mut rng);
    let instruction = InstructionSpec::new(
        TaskKind::Basic,
        Some(ReferentSpec::colored(&pick.0, &pick.1)),
        Some(ReferentSpec::colored(&place.0, &place.1)),
    )
    .expect("valid by construction");
    let goal = GoalSpec::Placement {
        pick: NodeId::new(kind_name(&pick.0, &pick.1)),
        place: NodeId::new(kind_name(&place.0, &place.1)),
    };
    finish(format!("basic-{seed:016x}"), seed, Mode::Single, None, instruction, goal, WorldState::single(objects))
}

/// Reference at the table centre, target one cell away in a sampled
/// direction, distractors on the other cardinal cells, and a bowl that
/// shares neither row nor column with the reference.
pub fn gen_spatial(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = GridLayout::single();
    let center = layout.center();
    let mut taken = BTreeSet::new();
    let reference = fresh_kind(&mut rng, &ALL_TYPES, &mut taken);
    let target = fresh_kind(&mut rng, &PICKABLE, &mut taken);
    let place = fresh_kind(&mut rng, &["bowl"], &mut taken);
    let direction = *Direction::CARDINAL.choose(&mut rng).expect("non-empty");
    let mut others: Vec<Direction> = Direction::CARDINAL.into_iter().filter(|d| *d != direction).collect();
    others.shuffle(&mut rng);
    let n_distractors = rng.gen_range(2..=3);
    let off_axis: Vec<Cell> = layout
        .cells()
        .filter(|c| c.row != center.row && c.col != center.col)
        .collect();
    let place_cell = *off_axis.choose(&mut rng).expect("non-empty");

    let mut objects = vec![
        make(&reference.0, &reference.1, center),
        make(&target.0, &target.1, center.step(direction, &layout).expect("centre has neighbours")),
        make(&place.0, &place.1, place_cell),
    ];
    for d in others.into_iter().take(n_distractors) {
        let k = fresh_kind(&mut rng, &ALL_TYPES, &mut taken);
        objects.push(make(&k.0, &k.1, center.step(d, &layout).expect("centre has neighbours")));
    }
    objects.shuffle(&mut rng);
    let pick = ReferentSpec::default().related(direction, ReferentSpec::colored(&reference.0, &reference.1));
    let instruction = InstructionSpec::new(TaskKind::Spatial, Some(pick), Some(ReferentSpec::colored(&place.0, &place.1)))
        .expect("valid by construction");
    let goal = GoalSpec::Placement {
        pick: NodeId::new(kind_name(&target.0, &target.1)),
        place: NodeId::new(kind_name(&place.0, &place.1)),
    };
    finish(format!("spatial-{seed:016x}"), seed, Mode::Single, None, instruction, goal, WorldState::single(objects))
}

/// Two or three colors, one block and one bowl of each.
pub fn gen_long_horizon(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(2..=3);
    let colors: Vec<&str> = COLORS.choose_multiple(&mut rng, k).copied().collect();
    let pool: Vec<Cell> = GridLayout::single().cells().collect();
    let cells = distinct_cells(&mut rng, &pool, 2 * k);
    let mut objects = Vec::with_capacity(2 * k);
    for (i, c) in colors.iter().enumerate() {
        objects.push(make(c, "block", cells[2 * i]));
        objects.push(make(c, "bowl", cells[2 * i + 1]));
    }
    objects.shuffle(&mut rng);
    finish(
        format!("long_horizon-{seed:016x}"),
        seed,
        Mode::Single,
        None,
        InstructionSpec::long_horizon(),
        GoalSpec::ColorMatch,
        WorldState::single(objects),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    Multiplicity,
    Absence,
    Underspecified,
}

impl Perturbation {
    pub fn label(self) -> AmbiguityLabel {
        match self {
            Perturbation::Multiplicity => AmbiguityLabel::Multiplicity,
            Perturbation::Absence => AmbiguityLabel::Absence,
            Perturbation::Underspecified => AmbiguityLabel::Underspecified,
        }
    }
}

/// Injects one ambiguity into a clear single-agent scenario.
pub fn perturb(s: &Scenario, kind: Perturbation, seed: u64) -> Result<Scenario, ScenarioError> {
    let GoalSpec::Placement { pick: target, .. } = &s.goal else {
        return Err(ScenarioError::NotPerturbable(s.id.clone()));
    };
    if s.label != AmbiguityLabel::Clear || s.mode != Mode::Single || s.instruction.task == TaskKind::LongHorizon {
        return Err(ScenarioError::NotPerturbable(s.id.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = s.clone();
    match kind {
        Perturbation::Multiplicity => {
            let original = s.world.object(target).expect("goal ids exist").clone();
            let cell = duplicate_cell(s, &original, &mut rng).ok_or_else(|| ScenarioError::NoFreeCell(s.id.clone()))?;
            let base = target.as_str();
            let first = NodeId::new(format!("{base} 1"));
            let mut clone = original.clone();
            clone.id = NodeId::new(format!("{base} 2"));
            clone.set_location(Some(crate::world::Location::Cell(cell)));
            for o in out.world.objects.iter_mut().filter(|o| &o.id == target) {
                o.id = first.clone();
            }
            out.world.objects.push(clone);
        }
        Perturbation::Absence => {
            out.world.objects.retain(|o| &o.id != target);
        }
        Perturbation::Underspecified => {
            let word = *VAGUE_WORDS.choose(&mut rng).expect("non-empty");
            let slot = if rng.gen_bool(0.5) { &mut out.instruction.pick } else { &mut out.instruction.place };
            *slot = Some(ReferentSpec::vague(word));
            out.instruction.text = crate::instruction::render(&out.instruction);
        }
    }
    out.goal = GoalSpec::Clarify {
        tag: kind.label().ask_tag().expect("ambiguous labels have tags"),
    };
    out.label = out.recompute_label();
    if out.label != kind.label() {
        return Err(ScenarioError::Inconsistent {
            id: s.id.clone(),
            expected: kind.label(),
            got: out.label,
        });
    }
    Ok(out)
}

/// Free cell for a duplicate that satisfies the same referent: anywhere for
/// attribute referents, further along the ray for spatial ones.
fn duplicate_cell(s: &Scenario, target: &ObjectInstance, rng: &mut ChaCha8Rng) -> Option<Cell> {
    let occupied: BTreeSet<Cell> = s.world.objects.iter().filter_map(|o| o.cell).collect();
    let layout = s.world.layout;
    let spatial = s.instruction.pick.as_ref().and_then(|p| p.spatial.as_ref());
    let candidates: Vec<Cell> = match spatial {
        None => layout.cells().filter(|c| !occupied.contains(c)).collect(),
        Some(sp) => {
            let mut ray = Vec::new();
            let mut cur = target.cell?;
            while let Some(next) = cur.step(sp.direction, &layout) {
                if !occupied.contains(&next) {
                    ray.push(next);
                }
                cur = next;
            }
            ray
        }
    };
    candidates.choose(rng).copied()
}

/// Two-robot Stack or Pass instance; robot1 acts. With probability
/// 0.4/0.4/0.2 the pick target is occluded, only the place target is
/// occluded, or both are visible.
pub fn gen_dual(seed: u64, task: DualTask) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = GridLayout::dual();
    let roll = rng.gen_range(0..100);
    let expected = match roll {
        0..40 => DualExpectation::AskRobot,
        40..80 => DualExpectation::PlaceToShared,
        _ => DualExpectation::Direct,
    };
    let mut taken = BTreeSet::new();
    let pick = fresh_kind(&mut rng, &["block"], &mut taken);
    let place_type = match task {
        DualTask::Stack => "block",
        DualTask::Pass => "bowl",
    };
    let place = fresh_kind(&mut rng, &[place_type], &mut taken);

    let band = |cols: std::ops::Range<u8>| -> Vec<Cell> { layout.cells().filter(|c| cols.contains(&c.col)).collect() };
    let robot1_side = band(0..6);
    let robot2_band = band(6..9);
    let everywhere = band(0..9);
    let (pick_pool, place_pool) = match expected {
        DualExpectation::AskRobot => (&robot2_band, &everywhere),
        DualExpectation::PlaceToShared => (&robot1_side, &robot2_band),
        DualExpectation::Direct => (&robot1_side, &robot1_side),
    };
    let pick_cell = *pick_pool.choose(&mut rng).expect("non-empty");
    let place_cell = loop {
        let c = *place_pool.choose(&mut rng).expect("non-empty");
        if c != pick_cell {
            break c;
        }
    };
    let mut objects = vec![make(&pick.0, &pick.1, pick_cell), make(&place.0, &place.1, place_cell)];
    let n_distractors = rng.gen_range(1..=3);
    let free: Vec<Cell> = everywhere.iter().copied().filter(|c| *c != pick_cell && *c != place_cell).collect();
    let cells = distinct_cells(&mut rng, &free, n_distractors);
    for c in cells {
        let k = fresh_kind(&mut rng, &ALL_TYPES, &mut taken);
        objects.push(make(&k.0, &k.1, c));
    }
    objects.shuffle(&mut rng);
    let instruction = InstructionSpec::new(
        TaskKind::Basic,
        Some(ReferentSpec::colored(&pick.0, &pick.1)),
        Some(ReferentSpec::colored(&place.0, &place.1)),
    )
    .expect("valid by construction");
    let goal = GoalSpec::Transfer {
        pick: NodeId::new(kind_name(&pick.0, &pick.1)),
        place: NodeId::new(kind_name(&place.0, &place.1)),
        expected,
    };
    let name = match task {
        DualTask::Stack => "stack",
        DualTask::Pass => "pass",
    };
    finish(format!("dual_{name}-{seed:016x}"), seed, Mode::Dual, Some(task), instruction, goal, WorldState::dual(objects))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub master_seed: u64,
    pub clear: u32,
    pub multiplicity: u32,
    pub absence: u32,
    pub underspecified: u32,
    pub dual_stack: u32,
    pub dual_pass: u32,
}

impl Default for SuiteConfig {
    /// 100 clear trials and 100 per ambiguity category, no dual-agent trials.
    fn default() -> Self {
        SuiteConfig {
            master_seed: 0,
            clear: 100,
            multiplicity: 100,
            absence: 100,
            underspecified: 100,
            dual_stack: 0,
            dual_pass: 0,
        }
    }
}

impl SuiteConfig {
    pub fn empty(master_seed: u64) -> Self {
        SuiteConfig {
            master_seed,
            clear: 0,
            multiplicity: 0,
            absence: 0,
            underspecified: 0,
            dual_stack: 0,
            dual_pass: 0,
        }
    }

    /// Dual-agent suite split evenly between Stack and Pass.
    pub fn dual(master_seed: u64, total: u32) -> Self {
        SuiteConfig {
            dual_stack: total / 2,
            dual_pass: total - total / 2,
            ..SuiteConfig::empty(master_seed)
        }
    }

    pub fn total(&self) -> u32 {
        self.clear + self.multiplicity + self.absence + self.underspecified + self.dual_stack + self.dual_pass
    }
}

#[derive(Clone, Copy)]
enum Category {
    Clear,
    Perturbed(Perturbation),
    Dual(DualTask),
}

impl Category {
    fn stream(self) -> u32 {
        match self {
            Category::Clear => 1,
            Category::Perturbed(Perturbation::Multiplicity) => 2,
            Category::Perturbed(Perturbation::Absence) => 3,
            Category::Perturbed(Perturbation::Underspecified) => 4,
            Category::Dual(DualTask::Stack) => 5,
            Category::Dual(DualTask::Pass) => 6,
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            Category::Clear => "clear",
            Category::Perturbed(Perturbation::Multiplicity) => "multiplicity",
            Category::Perturbed(Perturbation::Absence) => "absence",
            Category::Perturbed(Perturbation::Underspecified) => "underspecified",
            Category::Dual(DualTask::Stack) => "dual_stack",
            Category::Dual(DualTask::Pass) => "dual_pass",
        }
    }
}

fn gen_one(master: u64, category: Category, index: u32) -> Result<Scenario, ScenarioError> {
    let seed = scenario_seed(master, category.stream(), index);
    let mut s = match category {
        Category::Clear => match index % 3 {
            0 => gen_basic(seed),
            1 => gen_spatial(seed),
            _ => gen_long_horizon(seed),
        },
        Category::Dual(task) => gen_dual(seed, task),
        Category::Perturbed(kind) => {
            let mut last_err = None;
            let mut found = None;
            for attempt in 0..MAX_ATTEMPTS {
                let base_seed = if attempt == 0 { seed } else { splitmix64(seed.wrapping_add(attempt)) };
                let base = if index.is_multiple_of(2) { gen_basic(base_seed) } else { gen_spatial(base_seed) };
                match perturb(&base, kind, splitmix64(base_seed)) {
                    Ok(s) => {
                        found = Some(s);
                        break;
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            match found {
                Some(s) => s,
                None => return Err(last_err.expect("at least one attempt")),
            }
        }
    };
    s.id = format!("{}-{index:03}", category.prefix());
    Ok(s)
}

/// All scenarios of a suite in deterministic order: clear, multiplicity,
/// absence, underspecified, dual stack, dual pass.
pub fn build_suite(config: &SuiteConfig) -> Result<Vec<Scenario>, ScenarioError> {
    let plan: Vec<(Category, u32)> = [
        (Category::Clear, config.clear),
        (Category::Perturbed(Perturbation::Multiplicity), config.multiplicity),
        (Category::Perturbed(Perturbation::Absence), config.absence),
        (Category::Perturbed(Perturbation::Underspecified), config.underspecified),
        (Category::Dual(DualTask::Stack), config.dual_stack),
        (Category::Dual(DualTask::Pass), config.dual_pass),
    ]
    .into_iter()
    .flat_map(|(c, n)| (0..n).map(move |i| (c, i)))
    .collect();
    plan.into_par_iter()
        .map(|(c, i)| gen_one(config.master_seed, c, i))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub master_seed: u64,
    pub config: SuiteConfig,
    pub scenarios: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCENARIO_DIR: &str = "scenarios";

/// Writes `scenarios/<id>.json` per scenario plus `manifest.json`.
pub fn write_suite(dir: &Path, config: &SuiteConfig, scenarios: &[Scenario]) -> Result<SuiteManifest, ScenarioError> {
    let scen_dir = dir.join(SCENARIO_DIR);
    fs::create_dir_all(&scen_dir)?;
    let mut names = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        let name = format!("{}.json", s.id);
        fs::write(scen_dir.join(&name), s.to_json())?;
        names.push(format!("{SCENARIO_DIR}/{name}"));
    }
    let manifest = SuiteManifest {
        master_seed: config.master_seed,
        config: config.clone(),
        scenarios: names,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_suite(dir: &Path) -> Result<(SuiteManifest, Vec<Scenario>), ScenarioError> {
    let manifest: SuiteManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let scenarios = manifest
        .scenarios
        .iter()
        .map(|name| Ok(Scenario::from_json(&fs::read_to_string(dir.join(name))?)?))
        .collect::<Result<Vec<_>, ScenarioError>>()?;
    Ok((manifest, scenarios))
}
