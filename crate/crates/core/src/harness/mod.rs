//! Scenario files, the run pipeline, traces, replay and ablations.

mod ablate;
pub mod bundled;
mod engine;
mod trace;

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentError;
use crate::judger::{JudgerError, Viewpoint, ALL_VIEWPOINTS};
use crate::planner::{Goal, PlannerError};
use crate::reasoner::ReasonerError;
use crate::rules::{Rule, RuleSet};
use crate::scheduler::SchedulerError;
use crate::world::{Block, Bounds, Door, Entity, Facing, Inventory, Pos, World, WorldConfig, WorldError, WorldState};

pub use ablate::{ablate, standard_settings, toggle_product, AblationReport, AblationRow};
pub use engine::{run, RunOutput};
pub use trace::{read_trace, record_from_trace, replay, write_trace, PlanEntry, TraceEvent};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    #[error("planning failed: {0}")]
    Planner(#[from] PlannerError),
    #[error("scheduling failed: {0}")]
    Scheduler(#[from] SchedulerError),
    #[error("world error: {0}")]
    World(#[from] WorldError),
    #[error("reasoner error: {0}")]
    Reasoner(#[from] ReasonerError),
    #[error("agent error: {0}")]
    Agent(#[from] AgentError),
    #[error("metric error: {0}")]
    Judger(#[from] JudgerError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt trace: {0}")]
    TraceCorrupt(String),
    #[error("replay diverged at trace line {line}: {detail}")]
    DivergenceDetected { line: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::ScenarioInvalid(msg.into())
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Rule-evaluating reasoner and scripted agent pipelines.
    #[default]
    Scripted,
    /// Chat-model reasoner and agent policy over HTTP.
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerSpec {
    pub batch_size: u32,
    /// Number of random rule-free dependencies the reasoner asserts on top
    /// of the rules.
    pub hallucinated_edges: usize,
    /// Specific rule-free dependencies to assert, as (from, to) subtask ids.
    pub spurious_edges: Vec<(u32, u32)>,
    /// Pruning threshold; the reasoner's default when absent.
    pub epsilon: Option<f64>,
    pub strict: bool,
    pub threads: usize,
}

impl Default for PlannerSpec {
    fn default() -> Self {
        Self { batch_size: 1, hallucinated_edges: 0, spurious_edges: Vec::new(), epsilon: None, strict: false, threads: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerSpec {
    pub retry_cap: u32,
    pub path_cap: usize,
}

impl Default for SchedulerSpec {
    fn default() -> Self {
        Self { retry_cap: crate::scheduler::DEFAULT_RETRY_CAP, path_cap: crate::scheduler::DEFAULT_PATH_CAP }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricSpec {
    pub viewpoints: Vec<Viewpoint>,
    pub minutes_per_tick: f64,
    /// Agent perception radius.
    pub observe_radius: i32,
}

impl Default for MetricSpec {
    fn default() -> Self {
        Self { viewpoints: ALL_VIEWPOINTS.to_vec(), minutes_per_tick: 0.05, observe_radius: 16 }
    }
}

fn chest() -> String {
    "chest".into()
}

fn lever() -> String {
    "lever".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedBlock {
    pub pos: Pos,
    pub block: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facing: Option<Facing>,
}

/// Solid cuboid between two corners (inclusive).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub from: Pos,
    pub to: Pos,
    pub block: String,
    /// Cells left open inside the cuboid.
    #[serde(default)]
    pub except: Vec<Pos>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainerSpec {
    pub pos: Pos,
    #[serde(default = "chest")]
    pub block: String,
    pub items: Inventory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub pos: Pos,
    #[serde(default = "lever")]
    pub block: String,
    #[serde(default)]
    pub on: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub kind: String,
    pub pos: Pos,
}

/// `count` entities of `kind` on random standing cells in `region`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scatter {
    pub kind: String,
    pub count: u32,
    pub region: Bounds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub config: WorldConfig,
    #[serde(default)]
    pub fills: Vec<Fill>,
    #[serde(default)]
    pub blocks: Vec<PlacedBlock>,
    #[serde(default)]
    pub containers: Vec<ContainerSpec>,
    #[serde(default)]
    pub mechanisms: Vec<MechanismSpec>,
    #[serde(default)]
    pub doors: Vec<Door>,
    #[serde(default)]
    pub entities: Vec<EntitySpec>,
    #[serde(default)]
    pub scatter: Vec<Scatter>,
    /// Agents spawn on distinct random standing cells in this region.
    pub spawn: Bounds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub agents: u32,
    pub tick_budget: u64,
    #[serde(default)]
    pub policy: PolicyMode,
    pub world: WorldSpec,
    pub task: Goal,
    /// Rules added after the builtin ones.
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub planner: PlannerSpec,
    #[serde(default)]
    pub scheduler: SchedulerSpec,
    #[serde(default)]
    pub metrics: MetricSpec,
}

/// Which parts of the method are switched on.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Toggles {
    pub busy_rate: bool,
    pub causal: bool,
    pub graph: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self { busy_rate: true, causal: true, graph: true }
    }
}

impl Toggles {
    /// Without a graph there is nothing to refine.
    pub fn normalized(self) -> Self {
        Self { causal: self.causal && self.graph, ..self }
    }

    /// `full`, or the switched-off parts, e.g. `no-busy-rate,no-graph`.
    /// Causal refinement is implied off without a graph and not listed.
    pub fn label(self) -> String {
        let t = self.normalized();
        let mut off = Vec::new();
        if !t.busy_rate {
            off.push("no-busy-rate");
        }
        if t.graph && !t.causal {
            off.push("no-causal");
        }
        if !t.graph {
            off.push("no-graph");
        }
        if off.is_empty() {
            "full".into()
        } else {
            off.join(",")
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub agents: Option<u32>,
    pub policy: Option<PolicyMode>,
    pub toggles: Toggles,
    pub out_dir: Option<PathBuf>,
    pub reasoner_endpoint: Option<String>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
        let s = Self::from_json(&text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Copy with command-line overrides applied.
    pub fn with_overrides(&self, opts: &RunOptions) -> Self {
        let mut s = self.clone();
        if let Some(seed) = opts.seed {
            s.seed = seed;
        }
        if let Some(n) = opts.agents {
            s.agents = n;
        }
        if let Some(p) = opts.policy {
            s.policy = p;
        }
        s
    }

    pub fn rule_set(&self) -> Result<RuleSet> {
        RuleSet::with_extensions(self.rules.clone()).map_err(|e| invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!("schema_version {} (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        if self.agents == 0 {
            return Err(invalid("at least one agent is required"));
        }
        if self.tick_budget == 0 {
            return Err(invalid("tick_budget must be positive"));
        }
        if !(self.metrics.minutes_per_tick > 0.0) {
            return Err(invalid("minutes_per_tick must be positive"));
        }
        if self.metrics.viewpoints.is_empty() {
            return Err(invalid("at least one viewpoint is required"));
        }
        if self.planner.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        self.rule_set()?;
        let bounds = &self.world.config.bounds;
        let in_bounds = |p: &Pos, what: &str| {
            if bounds.contains(*p) {
                Ok(())
            } else {
                Err(invalid(format!("{what} at {p} is outside the world")))
            }
        };
        match &self.task {
            Goal::Construction { blueprint } => {
                if blueprint.is_empty() {
                    return Err(invalid("blueprint is empty"));
                }
                for b in blueprint {
                    in_bounds(&b.pos, "blueprint block")?;
                }
            }
            Goal::Cooking { dish } => {
                if dish.ingredients.is_empty() && dish.steps.is_empty() {
                    return Err(invalid("dish has no ingredients or steps"));
                }
                if dish.ingredients.iter().map(|i| i.score).chain(dish.steps.iter().map(|s| s.score)).any(|s| s <= 0.0) {
                    return Err(invalid("cooking scores must be positive"));
                }
            }
            Goal::Escape { rooms } => {
                if rooms.is_empty() {
                    return Err(invalid("no rooms"));
                }
                for r in rooms {
                    if r.conditions.is_empty() || r.score <= 0.0 {
                        return Err(invalid(format!("room {} needs conditions and a positive score", r.name)));
                    }
                    for c in &r.conditions {
                        if !self.world.mechanisms.iter().any(|m| m.pos == *c) {
                            return Err(invalid(format!("room {} refers to missing mechanism {c}", r.name)));
                        }
                    }
                }
            }
            Goal::ItemGathering { amount, .. } => {
                if *amount == 0 {
                    return Err(invalid("target amount is zero"));
                }
            }
        }
        for b in &self.world.blocks {
            in_bounds(&b.pos, "block")?;
        }
        for c in &self.world.containers {
            in_bounds(&c.pos, "container")?;
        }
        for m in &self.world.mechanisms {
            in_bounds(&m.pos, "mechanism")?;
        }
        Ok(())
    }

    /// The initial world for `self.seed`.
    pub fn build_world(&self) -> Result<World> {
        let spec = &self.world;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut state = WorldState { rng_seed: self.seed, ..Default::default() };
        for f in &spec.fills {
            let (lo, hi) = (f.from, f.to);
            for x in lo.x.min(hi.x)..=lo.x.max(hi.x) {
                for y in lo.y.min(hi.y)..=lo.y.max(hi.y) {
                    for z in lo.z.min(hi.z)..=lo.z.max(hi.z) {
                        let p = Pos::new(x, y, z);
                        if !f.except.contains(&p) {
                            state.blocks.insert(p, Block::plain(f.block.clone()));
                        }
                    }
                }
            }
        }
        for b in &spec.blocks {
            state.blocks.insert(b.pos, Block { id: b.block.clone(), facing: b.facing });
        }
        for c in &spec.containers {
            state.blocks.insert(c.pos, Block::plain(c.block.clone()));
            state.containers.insert(c.pos, c.items.clone());
        }
        for m in &spec.mechanisms {
            state.blocks.insert(m.pos, Block::plain(m.block.clone()));
            state.mechanisms.insert(m.pos, m.on);
        }
        state.doors = spec.doors.clone();
        let probe = World::new(spec.config.clone(), state.clone())?;
        let standing = |region: &Bounds| -> Vec<Pos> {
            let mut cells = Vec::new();
            for x in region.min.x..=region.max.x {
                for y in region.min.y..=region.max.y {
                    for z in region.min.z..=region.max.z {
                        let p = Pos::new(x, y, z);
                        if probe.walkable(p) {
                            cells.push(p);
                        }
                    }
                }
            }
            cells
        };
        let mut next_id = 1;
        for e in &spec.entities {
            state.entities.push(Entity { id: next_id, kind: e.kind.clone(), pos: e.pos, alive: true, spent: false });
            next_id += 1;
        }
        for s in &spec.scatter {
            let cells = standing(&s.region);
            if cells.is_empty() {
                return Err(invalid(format!("no room to scatter {}", s.kind)));
            }
            for _ in 0..s.count {
                let pos = cells[rng.random_range(0..cells.len())];
                state.entities.push(Entity { id: next_id, kind: s.kind.clone(), pos, alive: true, spent: false });
                next_id += 1;
            }
        }
        let taken: BTreeSet<Pos> = state.entities.iter().map(|e| e.pos).collect();
        let mut spots: Vec<Pos> = standing(&spec.spawn).into_iter().filter(|p| !taken.contains(p)).collect();
        if spots.len() < self.agents as usize {
            return Err(invalid(format!("spawn region fits {} agents, {} requested", spots.len(), self.agents)));
        }
        spots.shuffle(&mut rng);
        for (i, pos) in spots.into_iter().take(self.agents as usize).enumerate() {
            state.agents.insert(i as u32 + 1, crate::world::AgentState { pos, inventory: Inventory::new(), equipped: None });
        }
        Ok(World::new(spec.config.clone(), state)?)
    }
}
