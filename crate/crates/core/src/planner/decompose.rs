//! Template decomposition of goals into subtasks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::reasoner::ReasonerError;
use crate::task::{ActionSpec, Postcondition, Subtask, SubtaskId};
use crate::world::{ActionKind, Facing, Inventory, Pos, RecipeKind, World, WorldConfig};

fn one() -> u32 {
    1
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlueprintBlock {
    pub pos: Pos,
    pub block: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facing: Option<Facing>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ingredient {
    pub item: String,
    #[serde(default = "one")]
    pub amount: u32,
    #[serde(default = "unit")]
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CookStep {
    pub item: String,
    #[serde(default = "one")]
    pub amount: u32,
    #[serde(default = "craft_kind")]
    pub kind: RecipeKind,
    #[serde(default)]
    pub fuel: Option<String>,
    #[serde(default = "unit")]
    pub score: f64,
}

fn craft_kind() -> RecipeKind {
    RecipeKind::Craft
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dish {
    pub name: String,
    pub ingredients: Vec<Ingredient>,
    pub steps: Vec<CookStep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub name: String,
    /// Mechanisms that must all be on to clear the room.
    pub conditions: Vec<Pos>,
    #[serde(default = "unit")]
    pub score: f64,
}

/// What the team is asked to achieve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Goal {
    Construction { blueprint: Vec<BlueprintBlock> },
    Cooking { dish: Dish },
    Escape { rooms: Vec<Room> },
    ItemGathering {
        target: String,
        #[serde(default = "one")]
        amount: u32,
        /// Fuel used if any step needs smelting.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fuel: Option<String>,
    },
}

impl Goal {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Goal::Construction { .. } => "construction",
            Goal::Cooking { .. } => "cooking",
            Goal::Escape { .. } => "escape",
            Goal::ItemGathering { .. } => "item_gathering",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecomposeOptions {
    /// Blocks covered by one withdraw subtask.
    pub batch_size: u32,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self { batch_size: 1 }
    }
}

/// Planner-side digest of the world: where things are and how items are
/// made.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSummary {
    pub containers: Vec<(Pos, Inventory)>,
    pub entities: BTreeMap<String, usize>,
    pub blocks: BTreeMap<String, usize>,
    pub config: WorldConfig,
}

impl EnvSummary {
    pub fn from_world(world: &World) -> Self {
        let mut entities = BTreeMap::new();
        for e in world.state.entities.iter().filter(|e| e.alive) {
            *entities.entry(e.kind.clone()).or_insert(0) += 1;
        }
        let mut blocks = BTreeMap::new();
        for b in world.state.blocks.values() {
            *blocks.entry(b.id.clone()).or_insert(0) += 1;
        }
        Self {
            containers: world.state.containers.iter().map(|(p, c)| (*p, c.clone())).collect(),
            entities,
            blocks,
            config: world.config.clone(),
        }
    }

    pub fn describe(&self) -> String {
        let mut s = String::new();
        for (p, c) in &self.containers {
            let items: Vec<String> = c.iter().map(|(k, n)| format!("{n} {k}")).collect();
            let _ = writeln!(s, "container at {p}: {}", items.join(", "));
        }
        for (k, n) in &self.entities {
            let _ = writeln!(s, "{n} {k} nearby");
        }
        for (k, n) in &self.blocks {
            let _ = writeln!(s, "{n} {k} blocks");
        }
        s
    }

    /// Container holding the most of `item`, ties to the lowest position.
    fn best_container(&self, item: &str) -> Option<(Pos, u32)> {
        self.containers
            .iter()
            .filter(|(_, c)| c.count(item) > 0)
            .map(|(p, c)| (*p, c.count(item)))
            .max_by_key(|(p, n)| (*n, std::cmp::Reverse(*p)))
    }

    /// A non-crafting way to obtain `item`: container, loot, tool use or mining.
    fn natural_source(&self, item: &str) -> Option<ActionSpec> {
        if let Some((pos, _)) = self.best_container(item) {
            return Some(ActionSpec::withdraw(pos, item, 1));
        }
        for (kind, loot) in &self.config.loot {
            if loot.items.count(item) > 0 && self.entities.contains_key(kind) {
                return Some(ActionSpec::attack(kind, item).with_tool(loot.tool.clone()));
            }
        }
        for u in &self.config.uses {
            if u.yields.count(item) > 0 && self.entities.contains_key(&u.target) {
                return Some(ActionSpec::use_on(&u.target, &u.tool, item));
            }
        }
        for block in self.blocks.keys() {
            let drop = self.config.drop_for(block);
            if drop.item == item && !self.config.fixtures.contains(block) {
                return Some(ActionSpec::mine(block, item).with_tool(drop.tool));
            }
        }
        None
    }
}

fn failed(msg: impl Into<String>) -> ReasonerError {
    ReasonerError::DecompositionFailed(msg.into())
}

/// Default postcondition for an action spec.
pub fn infer_postcondition(spec: &ActionSpec) -> Postcondition {
    let amount = spec.amount.unwrap_or(1);
    match (spec.kind, &spec.item, &spec.output, spec.pos) {
        (ActionKind::PlaceBlock, Some(item), _, Some(pos)) => {
            Postcondition::BlockPresent { pos, block: item.clone(), facing: spec.facing }
        }
        (ActionKind::Toggle, _, _, Some(pos)) => Postcondition::MechanismOn { pos },
        (ActionKind::WithdrawItem | ActionKind::Craft | ActionKind::Smelt, Some(item), _, _) => {
            Postcondition::TeamHolds { item: item.clone(), count: amount }
        }
        (ActionKind::MineBlock | ActionKind::Attack | ActionKind::UseOn, _, Some(out), _) => {
            Postcondition::TeamHolds { item: out.clone(), count: amount }
        }
        _ => Postcondition::ActionSucceeded,
    }
}

fn gather_subtask(id: SubtaskId, spec: ActionSpec, item: &str, amount: u32, score: f64) -> Subtask {
    let spec = spec.with_amount(amount);
    let description = match spec.kind {
        ActionKind::WithdrawItem => {
            format!("withdraw {amount} {item} from container at {}", spec.container.expect("withdraw has container"))
        }
        ActionKind::Attack => format!("hunt {} for {amount} {item}", spec.target.as_deref().unwrap_or("?")),
        ActionKind::UseOn => format!("collect {amount} {item} from {}", spec.target.as_deref().unwrap_or("?")),
        ActionKind::MineBlock => format!("mine {} for {amount} {item}", spec.item.as_deref().unwrap_or("?")),
        _ => format!("obtain {amount} {item}"),
    };
    Subtask::new(id, description, spec, Postcondition::TeamHolds { item: item.into(), count: amount })
        .with_score(score)
}

fn craft_subtask(
    id: SubtaskId,
    item: &str,
    amount: u32,
    kind: RecipeKind,
    fuel: Option<&str>,
    config: &WorldConfig,
    score: f64,
) -> Result<Subtask, ReasonerError> {
    let recipe = config.recipe(item, kind).ok_or_else(|| failed(format!("no recipe for {item}")))?;
    let ingredients = recipe.ingredients.scaled(amount.div_ceil(recipe.amount));
    let (spec, verb) = match kind {
        RecipeKind::Craft => (ActionSpec::craft(item, amount, ingredients), "craft"),
        RecipeKind::Smelt => {
            let fuel = fuel.ok_or_else(|| failed(format!("smelting {item} needs a fuel")))?;
            (ActionSpec::smelt(item, amount, ingredients, fuel), "smelt")
        }
    };
    Ok(Subtask::new(
        id,
        format!("{verb} {amount} {item}"),
        spec,
        Postcondition::TeamHolds { item: item.into(), count: amount },
    )
    .with_score(score))
}

/// Deterministic per-kind templates. Ids start at 1 in emission order.
pub fn template_subtasks(goal: &Goal, env: &EnvSummary, opts: &DecomposeOptions) -> Result<Vec<Subtask>, ReasonerError> {
    match goal {
        Goal::Construction { blueprint } => construction(blueprint, env, opts),
        Goal::Cooking { dish } => cooking(dish, env),
        Goal::Escape { rooms } => escape(rooms),
        Goal::ItemGathering { target, amount, fuel } => gathering(target, *amount, fuel.clone(), env),
    }
}

fn construction(
    blueprint: &[BlueprintBlock],
    env: &EnvSummary,
    opts: &DecomposeOptions,
) -> Result<Vec<Subtask>, ReasonerError> {
    if blueprint.is_empty() {
        return Err(failed("blueprint is empty"));
    }
    let mut seen = BTreeSet::new();
    for b in blueprint {
        if !seen.insert(b.pos) {
            return Err(failed(format!("blueprint lists {} twice", b.pos)));
        }
    }
    let mut materials: Vec<(&str, u32)> = Vec::new();
    for b in blueprint {
        match materials.iter_mut().find(|(m, _)| *m == b.block) {
            Some((_, n)) => *n += 1,
            None => materials.push((&b.block, 1)),
        }
    }
    let batch = opts.batch_size.max(1);
    let mut out = Vec::new();
    let mut sources = BTreeMap::new();
    for (material, total) in materials {
        let (chest, stock) =
            env.best_container(material).ok_or_else(|| failed(format!("no container holds {material}")))?;
        sources.insert(material, chest);
        let mut taken = 0;
        while taken < total {
            let n = batch.min(total - taken);
            taken += n;
            let id = out.len() as SubtaskId + 1;
            out.push(
                Subtask::new(
                    id,
                    format!("withdraw {n} {material} from container at {chest}"),
                    ActionSpec::withdraw(chest, material, n),
                    Postcondition::ContainerAtMost {
                        container: chest,
                        item: material.into(),
                        count: stock.saturating_sub(taken),
                    },
                )
                .with_score(0.0),
            );
        }
    }
    for b in blueprint {
        let id = out.len() as SubtaskId + 1;
        out.push(
            Subtask::new(
                id,
                format!("place {} at {}", b.block, b.pos),
                ActionSpec::place(&b.block, b.pos).with_facing(b.facing).with_container(sources.get(b.block.as_str()).copied()),
                Postcondition::BlockPresent { pos: b.pos, block: b.block.clone(), facing: b.facing },
            )
            .with_score(1.0),
        );
    }
    Ok(out)
}

fn cooking(dish: &Dish, env: &EnvSummary) -> Result<Vec<Subtask>, ReasonerError> {
    if dish.ingredients.is_empty() && dish.steps.is_empty() {
        return Err(failed("recipe has no ingredients or steps"));
    }
    let mut out = Vec::new();
    for ing in &dish.ingredients {
        let spec = env.natural_source(&ing.item).ok_or_else(|| failed(format!("no source for {}", ing.item)))?;
        out.push(gather_subtask(out.len() as SubtaskId + 1, spec, &ing.item, ing.amount, ing.score));
    }
    for step in &dish.steps {
        let id = out.len() as SubtaskId + 1;
        out.push(craft_subtask(id, &step.item, step.amount, step.kind, step.fuel.as_deref(), &env.config, step.score)?);
    }
    Ok(out)
}

fn escape(rooms: &[Room]) -> Result<Vec<Subtask>, ReasonerError> {
    if rooms.is_empty() {
        return Err(failed("no rooms"));
    }
    let mut out = Vec::new();
    for (stage, room) in rooms.iter().enumerate() {
        if room.conditions.is_empty() {
            return Err(failed(format!("room {} has no conditions", room.name)));
        }
        let each = room.score / room.conditions.len() as f64;
        for &pos in &room.conditions {
            let id = out.len() as SubtaskId + 1;
            out.push(
                Subtask::new(
                    id,
                    format!("switch on mechanism at {pos} in {}", room.name),
                    ActionSpec::toggle(pos, stage as u32 + 1),
                    Postcondition::MechanismOn { pos },
                )
                .with_score(each),
            );
        }
    }
    Ok(out)
}

enum Making {
    Recipe(RecipeKind, Option<String>),
    Source(ActionSpec),
}

fn gathering(target: &str, amount: u32, fuel: Option<String>, env: &EnvSummary) -> Result<Vec<Subtask>, ReasonerError> {
    if amount == 0 {
        return Err(failed("target amount is zero"));
    }
    let cfg = &env.config;

    // Resolve how each item is obtained, children before parents.
    let mut how: BTreeMap<String, Making> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    fn children(m: &Making, cfg: &WorldConfig, item: &str) -> Vec<String> {
        match m {
            Making::Recipe(kind, fuel) => {
                let r = cfg.recipe(item, *kind).expect("resolved recipe");
                let mut v: Vec<String> = r.ingredients.iter().map(|(k, _)| k.to_string()).collect();
                v.extend(fuel.clone());
                v
            }
            Making::Source(spec) => spec.tool.clone().into_iter().collect(),
        }
    }
    fn visit(
        item: &str,
        env: &EnvSummary,
        fuel: &Option<String>,
        how: &mut BTreeMap<String, Making>,
        order: &mut Vec<String>,
        stack: &mut Vec<String>,
    ) -> Result<(), ReasonerError> {
        if how.contains_key(item) {
            return Ok(());
        }
        if stack.iter().any(|s| s == item) {
            return Err(failed(format!("recipe cycle through {item}")));
        }
        stack.push(item.to_string());
        let cfg = &env.config;
        let making = if env.best_container(item).is_some() {
            Making::Source(env.natural_source(item).expect("container source"))
        } else if cfg.recipe(item, RecipeKind::Craft).is_some() {
            Making::Recipe(RecipeKind::Craft, None)
        } else if cfg.recipe(item, RecipeKind::Smelt).is_some() {
            Making::Recipe(RecipeKind::Smelt, fuel.clone())
        } else {
            Making::Source(env.natural_source(item).ok_or_else(|| failed(format!("no source for {item}")))?)
        };
        for c in children(&making, cfg, item) {
            visit(&c, env, fuel, how, order, stack)?;
        }
        stack.pop();
        how.insert(item.to_string(), making);
        order.push(item.to_string());
        Ok(())
    }
    visit(target, env, &fuel, &mut how, &mut order, &mut Vec::new())?;

    // Propagate required amounts from the target down.
    let mut need: BTreeMap<String, u32> = BTreeMap::new();
    let mut tool_need: BTreeMap<String, u32> = BTreeMap::new();
    need.insert(target.to_string(), amount);
    for item in order.iter().rev() {
        let n = need.get(item).copied().unwrap_or(0) + tool_need.get(item).copied().unwrap_or(0);
        match &how[item] {
            Making::Recipe(kind, fuel) => {
                let r = cfg.recipe(item, *kind).expect("resolved recipe");
                let ops = n.div_ceil(r.amount);
                for (k, c) in r.ingredients.iter() {
                    *need.entry(k.to_string()).or_insert(0) += ops * c;
                }
                if let Some(f) = fuel {
                    *need.entry(f.clone()).or_insert(0) += n.div_ceil(8);
                }
            }
            Making::Source(spec) => {
                if let Some(t) = &spec.tool {
                    tool_need.insert(t.clone(), 1);
                }
            }
        }
    }

    let mut out = Vec::new();
    for item in &order {
        let n = need.get(item).copied().unwrap_or(0) + tool_need.get(item).copied().unwrap_or(0);
        let id = out.len() as SubtaskId + 1;
        let score = if item == target { 1.0 } else { 0.0 };
        let sub = match &how[item] {
            Making::Recipe(kind, fuel) => craft_subtask(id, item, n, *kind, fuel.as_deref(), cfg, score)?,
            Making::Source(spec) => gather_subtask(id, spec.clone(), item, n, score),
        };
        out.push(sub);
    }
    Ok(out)
}
