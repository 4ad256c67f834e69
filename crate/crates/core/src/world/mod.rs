//! Deterministic discrete-time voxel crafting world.
//!
//! The world is the single mutation authority for environmental state. Agents
//! submit [`Action`]s; the world validates and applies them one at a time and
//! reports an [`ActionResult`]. All maps are ordered so serialized snapshots
//! are bit-exact for identical histories.

mod actions;
mod nav;

pub use actions::{Action, ActionKind, ActionResult, Delta, FailureReason, ALL_ACTION_KINDS};
pub use nav::{find_path, reach_ok, stand_spots, Terrain};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type AgentId = u32;
pub type EntityId = u32;

/// Integer voxel coordinate. `y` is vertical.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[i32; 3]", into = "[i32; 3]")]
pub struct Pos {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl Pos {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    pub fn offset(self, dx: i32, dy: i32, dz: i32) -> Self {
        Self::new(self.x + dx, self.y + dy, self.z + dz)
    }

    pub fn up(self) -> Self {
        self.offset(0, 1, 0)
    }

    pub fn down(self) -> Self {
        self.offset(0, -1, 0)
    }

    pub fn face_neighbors(self) -> [Pos; 6] {
        [
            self.offset(1, 0, 0),
            self.offset(-1, 0, 0),
            self.offset(0, 1, 0),
            self.offset(0, -1, 0),
            self.offset(0, 0, 1),
            self.offset(0, 0, -1),
        ]
    }

    pub fn chebyshev(self, other: Pos) -> i32 {
        (self.x - other.x)
            .abs()
            .max((self.y - other.y).abs())
            .max((self.z - other.z).abs())
    }

    pub fn distance(self, other: Pos) -> f64 {
        let dx = f64::from(self.x - other.x);
        let dy = f64::from(self.y - other.y);
        let dz = f64::from(self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

impl From<[i32; 3]> for Pos {
    fn from(v: [i32; 3]) -> Self {
        Pos::new(v[0], v[1], v[2])
    }
}

impl From<Pos> for [i32; 3] {
    fn from(p: Pos) -> Self {
        [p.x, p.y, p.z]
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facing {
    North,
    South,
    East,
    West,
    Up,
    Down,
}

/// Item multiset keyed by item id. Zero counts are never stored.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Inventory(BTreeMap<String, u32>);

impl Inventory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, item: &str) -> u32 {
        self.0.get(item).copied().unwrap_or(0)
    }

    pub fn add(&mut self, item: &str, n: u32) {
        if n > 0 {
            *self.0.entry(item.to_string()).or_insert(0) += n;
        }
    }

    /// Removes `n` of `item`; returns false (and changes nothing) when short.
    pub fn remove(&mut self, item: &str, n: u32) -> bool {
        let have = self.count(item);
        if have < n {
            return false;
        }
        if have == n {
            self.0.remove(item);
        } else {
            self.0.insert(item.to_string(), have - n);
        }
        true
    }

    pub fn contains_all(&self, other: &Inventory) -> bool {
        other.iter().all(|(k, n)| self.count(k) >= n)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, factor: u32) -> Inventory {
        Inventory(self.0.iter().map(|(k, v)| (k.clone(), v * factor)).collect())
    }
}

impl<S: Into<String>> FromIterator<(S, u32)> for Inventory {
    fn from_iter<I: IntoIterator<Item = (S, u32)>>(iter: I) -> Self {
        let mut inv = Inventory::new();
        for (k, n) in iter {
            inv.add(&k.into(), n);
        }
        inv
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facing: Option<Facing>,
}

impl Block {
    pub fn plain(id: impl Into<String>) -> Self {
        Self { id: id.into(), facing: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub kind: String,
    pub pos: Pos,
    pub alive: bool,
    /// Set once a tool has been used on the entity (sheared, milked).
    #[serde(default)]
    pub spent: bool,
}

/// A door blocks movement until every listed mechanism is on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Door {
    pub cells: Vec<Pos>,
    pub opens_when: Vec<Pos>,
    #[serde(default)]
    pub open: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub pos: Pos,
    #[serde(default)]
    pub inventory: Inventory,
    #[serde(default)]
    pub equipped: Option<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeKind {
    Craft,
    Smelt,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recipe {
    pub output: String,
    /// Units produced per crafting operation.
    #[serde(default = "one")]
    pub amount: u32,
    pub ingredients: Inventory,
    #[serde(default)]
    pub station: Option<String>,
    #[serde(default = "default_recipe_kind")]
    pub kind: RecipeKind,
}

fn one() -> u32 {
    1
}

fn default_recipe_kind() -> RecipeKind {
    RecipeKind::Craft
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Loot {
    pub items: Inventory,
    #[serde(default)]
    pub tool: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UseRule {
    pub tool: String,
    pub target: String,
    pub yields: Inventory,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Drop {
    pub item: String,
    #[serde(default)]
    pub tool: Option<String>,
}

/// Per-action tick costs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionCosts {
    pub move_step: u64,
    pub place: u64,
    pub mine: u64,
    pub craft: u64,
    pub smelt: u64,
    pub toggle: u64,
    pub withdraw: u64,
    pub check: u64,
    pub scan: u64,
    pub equip: u64,
    pub handover: u64,
    pub use_on: u64,
    pub attack: u64,
    /// Charged for any rejected action.
    pub failure: u64,
}

impl Default for ActionCosts {
    fn default() -> Self {
        Self {
            move_step: 1,
            place: 2,
            mine: 2,
            craft: 4,
            smelt: 8,
            toggle: 1,
            withdraw: 1,
            check: 1,
            scan: 1,
            equip: 1,
            handover: 1,
            use_on: 2,
            attack: 2,
            failure: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Pos,
    pub max: Pos,
}

impl Bounds {
    pub fn contains(&self, p: Pos) -> bool {
        (self.min.x..=self.max.x).contains(&p.x)
            && (self.min.y..=self.max.y).contains(&p.y)
            && (self.min.z..=self.max.z).contains(&p.z)
    }
}

/// Static world rules: geometry limits, costs and the recipe/loot tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub bounds: Bounds,
    /// Lowest open layer; every cell below it is solid bedrock.
    pub ground_y: i32,
    #[serde(default = "default_reach")]
    pub reach: f64,
    #[serde(default = "default_scan_radius")]
    pub scan_radius: i32,
    #[serde(default)]
    pub costs: ActionCosts,
    #[serde(default)]
    pub recipes: Vec<Recipe>,
    #[serde(default)]
    pub loot: BTreeMap<String, Loot>,
    #[serde(default)]
    pub uses: Vec<UseRule>,
    #[serde(default)]
    pub drops: BTreeMap<String, Drop>,
    /// Blocks that cannot be mined (chests, crafting tables, furnaces).
    #[serde(default = "default_fixtures")]
    pub fixtures: BTreeSet<String>,
    /// Block kinds whose facing is stored and compared.
    #[serde(default)]
    pub orientable: BTreeSet<String>,
}

fn default_reach() -> f64 {
    4.0
}

fn default_scan_radius() -> i32 {
    16
}

fn default_fixtures() -> BTreeSet<String> {
    ["chest", "crafting_table", "furnace"].iter().map(|s| s.to_string()).collect()
}

impl WorldConfig {
    pub fn new(bounds: Bounds, ground_y: i32) -> Self {
        Self {
            bounds,
            ground_y,
            reach: default_reach(),
            scan_radius: default_scan_radius(),
            costs: ActionCosts::default(),
            recipes: Vec::new(),
            loot: BTreeMap::new(),
            uses: Vec::new(),
            drops: BTreeMap::new(),
            fixtures: default_fixtures(),
            orientable: BTreeSet::new(),
        }
    }

    pub fn recipe(&self, output: &str, kind: RecipeKind) -> Option<&Recipe> {
        self.recipes.iter().find(|r| r.output == output && r.kind == kind)
    }

    pub fn drop_for(&self, block: &str) -> Drop {
        self.drops
            .get(block)
            .cloned()
            .unwrap_or_else(|| Drop { item: block.to_string(), tool: None })
    }
}

/// Mutable environmental state. Serializes deterministically.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    #[serde(with = "pos_map")]
    pub blocks: BTreeMap<Pos, Block>,
    #[serde(with = "pos_map")]
    pub containers: BTreeMap<Pos, Inventory>,
    #[serde(with = "pos_map")]
    pub mechanisms: BTreeMap<Pos, bool>,
    #[serde(default)]
    pub doors: Vec<Door>,
    #[serde(default)]
    pub entities: Vec<Entity>,
    pub agents: BTreeMap<AgentId, AgentState>,
    pub clock: u64,
    pub rng_seed: u64,
    /// Expected total of every item across inventories, containers and
    /// placed blocks. Only recipe, mining and loot deltas move it.
    #[serde(default)]
    pub item_ledger: BTreeMap<String, i64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("agent {0} does not exist")]
    UnknownAgent(AgentId),
    #[error("agent {agent} spawned in a non-walkable cell {pos}")]
    BadSpawn { agent: AgentId, pos: Pos },
    #[error("item conservation violated for {item}: expected {expected}, found {actual}")]
    Conservation { item: String, expected: i64, actual: i64 },
    #[error("agent {agent} has {item} equipped but none in inventory")]
    DanglingEquip { agent: AgentId, item: String },
    #[error("block at {0} violates the support rule")]
    Unsupported(Pos),
}

/// The world: static configuration plus live state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub state: WorldState,
}

impl World {
    /// Builds a world and seeds the conservation ledger from its contents.
    pub fn new(config: WorldConfig, mut state: WorldState) -> Result<Self, WorldError> {
        state.item_ledger.clear();
        let mut world = World { config, state };
        world.state.item_ledger = world.item_totals();
        for door in &mut world.state.doors {
            door.open = door
                .opens_when
                .iter()
                .all(|p| world.state.mechanisms.get(p).copied().unwrap_or(false));
        }
        for (id, agent) in &world.state.agents {
            if !world.walkable(agent.pos) {
                return Err(WorldError::BadSpawn { agent: *id, pos: agent.pos });
            }
        }
        Ok(world)
    }

    pub fn agent(&self, id: AgentId) -> Result<&AgentState, WorldError> {
        self.state.agents.get(&id).ok_or(WorldError::UnknownAgent(id))
    }

    pub fn block_at(&self, p: Pos) -> Option<&Block> {
        self.state.blocks.get(&p)
    }

    /// Occupied by a block, a closed door or bedrock.
    pub fn is_solid(&self, p: Pos) -> bool {
        p.y < self.config.ground_y
            || self.state.blocks.contains_key(&p)
            || self.state.doors.iter().any(|d| !d.open && d.cells.contains(&p))
    }

    pub fn walkable(&self, p: Pos) -> bool {
        nav::walkable(self, p)
    }

    /// Actual item totals over inventories, containers and placed blocks.
    pub fn item_totals(&self) -> BTreeMap<String, i64> {
        let mut totals: BTreeMap<String, i64> = BTreeMap::new();
        let mut add = |k: &str, n: i64| *totals.entry(k.to_string()).or_insert(0) += n;
        for a in self.state.agents.values() {
            for (k, n) in a.inventory.iter() {
                add(k, i64::from(n));
            }
        }
        for c in self.state.containers.values() {
            for (k, n) in c.iter() {
                add(k, i64::from(n));
            }
        }
        for b in self.state.blocks.values() {
            add(&b.id, 1);
        }
        totals.retain(|_, v| *v != 0);
        totals
    }

    /// Global audit: item conservation, equip consistency and block support.
    pub fn audit(&self) -> Result<(), WorldError> {
        let actual = self.item_totals();
        let keys: BTreeSet<&String> = actual.keys().chain(self.state.item_ledger.keys()).collect();
        for k in keys {
            let e = self.state.item_ledger.get(k).copied().unwrap_or(0);
            let a = actual.get(k).copied().unwrap_or(0);
            if e != a {
                return Err(WorldError::Conservation { item: k.clone(), expected: e, actual: a });
            }
        }
        for (id, a) in &self.state.agents {
            if let Some(item) = &a.equipped {
                if a.inventory.count(item) == 0 {
                    return Err(WorldError::DanglingEquip { agent: *id, item: item.clone() });
                }
            }
        }
        Ok(())
    }

    pub(crate) fn ledger_delta(&mut self, item: &str, delta: i64) {
        let e = self.state.item_ledger.entry(item.to_string()).or_insert(0);
        *e += delta;
        if *e == 0 {
            self.state.item_ledger.remove(item);
        }
    }

    /// Sets the global clock. The clock never moves backwards.
    pub fn advance_clock_to(&mut self, tick: u64) {
        self.state.clock = self.state.clock.max(tick);
    }

    /// Applies an action and advances the clock by its cost. Used by
    /// sequential drivers; the multi-agent engine manages the clock itself.
    pub fn step(&mut self, agent: AgentId, action: &Action) -> ActionResult {
        let res = self.apply(agent, action);
        self.state.clock += res.cost;
        res
    }

    pub fn snapshot_json(&self) -> String {
        serde_json::to_string(&self.state).expect("world state serializes")
    }

    /// Radius-limited view of the world around an agent.
    pub fn observe(&self, agent: AgentId, radius: i32) -> Result<Observation, WorldError> {
        let me = self.agent(agent)?.clone();
        let near = |p: &Pos| p.chebyshev(me.pos) <= radius;
        Ok(Observation {
            agent,
            tick: self.state.clock,
            me: me.clone(),
            bounds: self.config.bounds.clone(),
            ground_y: self.config.ground_y,
            reach: self.config.reach,
            blocks: self.state.blocks.iter().filter(|(p, _)| near(p)).map(|(p, b)| (*p, b.clone())).collect(),
            containers: self
                .state
                .containers
                .iter()
                .filter(|(p, _)| near(p))
                .map(|(p, c)| (*p, c.clone()))
                .collect(),
            mechanisms: self.state.mechanisms.iter().filter(|(p, _)| near(p)).map(|(p, s)| (*p, *s)).collect(),
            closed_doors: self
                .state
                .doors
                .iter()
                .filter(|d| !d.open)
                .flat_map(|d| d.cells.iter().copied())
                .collect(),
            entities: self
                .state
                .entities
                .iter()
                .filter(|e| e.alive && near(&e.pos))
                .cloned()
                .collect(),
            teammates: self
                .state
                .agents
                .iter()
                .filter(|(id, a)| **id != agent && near(&a.pos))
                .map(|(id, a)| (*id, a.clone()))
                .collect(),
        })
    }
}

/// What a single agent can see: a snapshot within its perception radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub agent: AgentId,
    pub tick: u64,
    pub me: AgentState,
    pub bounds: Bounds,
    pub ground_y: i32,
    pub reach: f64,
    #[serde(with = "pos_map")]
    pub blocks: BTreeMap<Pos, Block>,
    #[serde(with = "pos_map")]
    pub containers: BTreeMap<Pos, Inventory>,
    #[serde(with = "pos_map")]
    pub mechanisms: BTreeMap<Pos, bool>,
    pub closed_doors: BTreeSet<Pos>,
    pub entities: Vec<Entity>,
    pub teammates: BTreeMap<AgentId, AgentState>,
}

impl Observation {
    /// Nearest live entity of `kind`, ties by lowest id.
    pub fn nearest_entity(&self, kind: &str) -> Option<&Entity> {
        self.entities
            .iter()
            .filter(|e| e.alive && e.kind == kind)
            .min_by_key(|e| (e.pos.chebyshev(self.me.pos), e.id))
    }

    pub fn nearest_block(&self, id: &str) -> Option<Pos> {
        self.blocks
            .iter()
            .filter(|(_, b)| b.id == id)
            .map(|(p, _)| *p)
            .min_by_key(|p| (p.chebyshev(self.me.pos), *p))
    }
}

/// Serializes a `BTreeMap<Pos, V>` as an ordered list of `[pos, value]` pairs.
pub(crate) mod pos_map {
    use super::Pos;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<V: Serialize, S: Serializer>(map: &BTreeMap<Pos, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, V: Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Pos, V>, D::Error> {
        let v: Vec<(Pos, V)> = Vec::deserialize(d)?;
        Ok(v.into_iter().collect())
    }
}
