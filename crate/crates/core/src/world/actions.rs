use std::fmt;

use serde::{Deserialize, Serialize};

use super::{nav, AgentId, Block, Facing, Inventory, Pos, RecipeKind, World};

/// The action vocabulary available to agents.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    NavigateTo,
    CheckContainer,
    WithdrawItem,
    ScanEntities,
    Equip,
    PlaceBlock,
    Handover,
    Craft,
    Smelt,
    MineBlock,
    Toggle,
    UseOn,
    Attack,
}

pub const ALL_ACTION_KINDS: [ActionKind; 13] = [
    ActionKind::NavigateTo,
    ActionKind::CheckContainer,
    ActionKind::WithdrawItem,
    ActionKind::ScanEntities,
    ActionKind::Equip,
    ActionKind::PlaceBlock,
    ActionKind::Handover,
    ActionKind::Craft,
    ActionKind::Smelt,
    ActionKind::MineBlock,
    ActionKind::Toggle,
    ActionKind::UseOn,
    ActionKind::Attack,
];

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string));
        f.write_str(s.as_deref().unwrap_or("?"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    NavigateTo { pos: Pos },
    CheckContainer { container: Pos },
    WithdrawItem { container: Pos, item: String, amount: u32 },
    ScanEntities { item: String, distance: i32 },
    Equip { item: String },
    PlaceBlock {
        item: String,
        pos: Pos,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        facing: Option<Facing>,
    },
    Handover { item: String, amount: u32, to: AgentId },
    Craft { item: String, amount: u32 },
    Smelt { item: String, amount: u32, fuel: String },
    MineBlock { pos: Pos },
    Toggle { pos: Pos },
    UseOn { target: String },
    Attack { target: String },
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::NavigateTo { .. } => ActionKind::NavigateTo,
            Action::CheckContainer { .. } => ActionKind::CheckContainer,
            Action::WithdrawItem { .. } => ActionKind::WithdrawItem,
            Action::ScanEntities { .. } => ActionKind::ScanEntities,
            Action::Equip { .. } => ActionKind::Equip,
            Action::PlaceBlock { .. } => ActionKind::PlaceBlock,
            Action::Handover { .. } => ActionKind::Handover,
            Action::Craft { .. } => ActionKind::Craft,
            Action::Smelt { .. } => ActionKind::Smelt,
            Action::MineBlock { .. } => ActionKind::MineBlock,
            Action::Toggle { .. } => ActionKind::Toggle,
            Action::UseOn { .. } => ActionKind::UseOn,
            Action::Attack { .. } => ActionKind::Attack,
        }
    }

    /// Whether a successful application of this action changes world state.
    pub fn mutates(&self) -> bool {
        !matches!(self, Action::CheckContainer { .. } | Action::ScanEntities { .. })
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    UnknownAgent,
    InvalidPosition,
    InvalidParameter,
    NoPath,
    NotEquipped,
    NotInInventory,
    TooFar,
    NoSupport,
    PositionOccupied,
    MissingIngredients,
    UnknownRecipe,
    NoTool,
    TargetIsAir,
    Unbreakable,
    NoContainer,
    InsufficientItems,
    NoTarget,
    NotInteractive,
}

/// Structured record of what an action changed (or why it could not).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Delta {
    None,
    Moved { from: Pos, to: Pos, steps: u32 },
    Contents { container: Pos, items: Inventory },
    Withdrew { container: Pos, item: String, amount: u32 },
    Scanned { found: Option<Pos> },
    Equipped { item: String },
    Placed { pos: Pos, item: String },
    HandedOver { item: String, amount: u32, to: AgentId },
    Crafted { item: String, amount: u32, consumed: Inventory },
    Recipe { item: String, needs: Inventory, missing: Inventory },
    Mined { pos: Pos, block: String, drop: String },
    Toggled { pos: Pos, previous: bool, current: bool },
    Used { target: String, yields: Inventory },
    Attacked { target: String, loot: Inventory },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionResult {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<FailureReason>,
    pub observation: Delta,
    pub cost: u64,
}

impl ActionResult {
    fn success(observation: Delta, cost: u64) -> Self {
        Self { ok: true, reason: None, observation, cost }
    }
}

impl World {
    fn fail(&self, reason: FailureReason) -> ActionResult {
        self.fail_with(reason, Delta::None)
    }

    fn fail_with(&self, reason: FailureReason, observation: Delta) -> ActionResult {
        ActionResult { ok: false, reason: Some(reason), observation, cost: self.config.costs.failure }
    }

    fn in_reach(&self, agent: AgentId, target: Pos) -> bool {
        nav::reach_ok(self.state.agents[&agent].pos, target, self.config.reach)
    }

    fn agent_occupies(&self, p: Pos) -> bool {
        self.state.agents.values().any(|a| a.pos == p || a.pos.up() == p)
    }

    fn station_in_reach(&self, agent: AgentId, station: &str) -> bool {
        self.state.blocks.iter().any(|(p, b)| b.id == station && self.in_reach(agent, *p))
    }

    fn nearest_entity_in_reach(&self, agent: AgentId, kind: &str) -> Option<usize> {
        let me = self.state.agents[&agent].pos;
        self.state
            .entities
            .iter()
            .enumerate()
            .filter(|(_, e)| e.alive && e.kind == kind && nav::reach_ok(me, e.pos, self.config.reach))
            .min_by_key(|(_, e)| (e.pos.chebyshev(me), e.id))
            .map(|(i, _)| i)
    }

    fn take_from_agent(&mut self, agent: AgentId, item: &str, n: u32) -> bool {
        let a = self.state.agents.get_mut(&agent).expect("agent checked");
        if !a.inventory.remove(item, n) {
            return false;
        }
        if a.equipped.as_deref() == Some(item) && a.inventory.count(item) == 0 {
            a.equipped = None;
        }
        true
    }

    fn give_to_agent(&mut self, agent: AgentId, items: &Inventory) {
        let a = self.state.agents.get_mut(&agent).expect("agent checked");
        for (k, n) in items.iter() {
            a.inventory.add(k, n);
        }
    }

    /// Validates and applies one action for `agent` at the current clock.
    /// Never panics on bad input: every violation becomes a failure reason.
    pub fn apply(&mut self, agent: AgentId, action: &Action) -> ActionResult {
        if !self.state.agents.contains_key(&agent) {
            return self.fail(FailureReason::UnknownAgent);
        }
        let costs = self.config.costs.clone();
        match action {
            Action::NavigateTo { pos } => {
                let from = self.state.agents[&agent].pos;
                if !self.config.bounds.contains(*pos) {
                    return self.fail(FailureReason::InvalidPosition);
                }
                match nav::find_path(self, from, *pos) {
                    Some(steps) => {
                        self.state.agents.get_mut(&agent).expect("agent").pos = *pos;
                        ActionResult::success(
                            Delta::Moved { from, to: *pos, steps: steps as u32 },
                            steps as u64 * costs.move_step,
                        )
                    }
                    None => self.fail(FailureReason::NoPath),
                }
            }
            Action::CheckContainer { container } => {
                let Some(items) = self.state.containers.get(container).cloned() else {
                    return self.fail(FailureReason::NoContainer);
                };
                if !self.in_reach(agent, *container) {
                    return self.fail(FailureReason::TooFar);
                }
                ActionResult::success(Delta::Contents { container: *container, items }, costs.check)
            }
            Action::WithdrawItem { container, item, amount } => {
                if *amount == 0 {
                    return self.fail(FailureReason::InvalidParameter);
                }
                if !self.state.containers.contains_key(container) {
                    return self.fail(FailureReason::NoContainer);
                }
                if !self.in_reach(agent, *container) {
                    return self.fail(FailureReason::TooFar);
                }
                let chest = self.state.containers.get_mut(container).expect("container");
                if !chest.remove(item, *amount) {
                    return self.fail(FailureReason::InsufficientItems);
                }
                self.give_to_agent(agent, &[(item.as_str(), *amount)].into_iter().collect());
                ActionResult::success(
                    Delta::Withdrew { container: *container, item: item.clone(), amount: *amount },
                    costs.withdraw,
                )
            }
            Action::ScanEntities { item, distance } => {
                let me = self.state.agents[&agent].pos;
                let radius = (*distance).clamp(0, self.config.scan_radius);
                let entity = self
                    .state
                    .entities
                    .iter()
                    .filter(|e| e.alive && &e.kind == item && e.pos.chebyshev(me) <= radius)
                    .min_by_key(|e| (e.pos.chebyshev(me), e.id))
                    .map(|e| e.pos);
                let found = entity.or_else(|| {
                    self.state
                        .blocks
                        .iter()
                        .filter(|(p, b)| &b.id == item && p.chebyshev(me) <= radius)
                        .map(|(p, _)| *p)
                        .min_by_key(|p| (p.chebyshev(me), *p))
                });
                ActionResult::success(Delta::Scanned { found }, costs.scan)
            }
            Action::Equip { item } => {
                let a = self.state.agents.get_mut(&agent).expect("agent");
                if a.inventory.count(item) == 0 {
                    return self.fail(FailureReason::NotInInventory);
                }
                a.equipped = Some(item.clone());
                ActionResult::success(Delta::Equipped { item: item.clone() }, costs.equip)
            }
            Action::PlaceBlock { item, pos, facing } => {
                if !self.config.bounds.contains(*pos) {
                    return self.fail(FailureReason::InvalidPosition);
                }
                let a = &self.state.agents[&agent];
                if a.equipped.as_deref() != Some(item.as_str()) {
                    return self.fail(FailureReason::NotEquipped);
                }
                if !self.in_reach(agent, *pos) {
                    return self.fail(FailureReason::TooFar);
                }
                if self.is_solid(*pos) || self.agent_occupies(*pos) {
                    return self.fail(FailureReason::PositionOccupied);
                }
                if !pos.face_neighbors().iter().any(|n| self.is_solid(*n)) {
                    return self.fail(FailureReason::NoSupport);
                }
                self.take_from_agent(agent, item, 1);
                let facing = if self.config.orientable.contains(item) { *facing } else { None };
                self.state.blocks.insert(*pos, Block { id: item.clone(), facing });
                ActionResult::success(Delta::Placed { pos: *pos, item: item.clone() }, costs.place)
            }
            Action::Handover { item, amount, to } => {
                if *amount == 0 || *to == agent {
                    return self.fail(FailureReason::InvalidParameter);
                }
                let Some(recipient) = self.state.agents.get(to) else {
                    return self.fail(FailureReason::UnknownAgent);
                };
                let giver = &self.state.agents[&agent];
                if giver.inventory.count(item) < *amount {
                    return self.fail(FailureReason::NotInInventory);
                }
                if giver.pos.distance(recipient.pos) > self.config.reach {
                    return self.fail(FailureReason::TooFar);
                }
                self.take_from_agent(agent, item, *amount);
                self.give_to_agent(*to, &[(item.as_str(), *amount)].into_iter().collect());
                ActionResult::success(
                    Delta::HandedOver { item: item.clone(), amount: *amount, to: *to },
                    costs.handover,
                )
            }
            Action::Craft { item, amount } => self.craft_like(agent, item, *amount, None, RecipeKind::Craft),
            Action::Smelt { item, amount, fuel } => {
                self.craft_like(agent, item, *amount, Some(fuel.as_str()), RecipeKind::Smelt)
            }
            Action::MineBlock { pos } => {
                if !self.config.bounds.contains(*pos) {
                    return self.fail(FailureReason::InvalidPosition);
                }
                let Some(block) = self.state.blocks.get(pos).cloned() else {
                    return self.fail(if pos.y < self.config.ground_y {
                        FailureReason::Unbreakable
                    } else {
                        FailureReason::TargetIsAir
                    });
                };
                if !self.in_reach(agent, *pos) {
                    return self.fail(FailureReason::TooFar);
                }
                if self.config.fixtures.contains(&block.id) || self.state.containers.contains_key(pos) {
                    return self.fail(FailureReason::Unbreakable);
                }
                let drop = self.config.drop_for(&block.id);
                if let Some(tool) = &drop.tool {
                    if self.state.agents[&agent].equipped.as_ref() != Some(tool) {
                        return self.fail(FailureReason::NoTool);
                    }
                }
                self.state.blocks.remove(pos);
                self.give_to_agent(agent, &[(drop.item.as_str(), 1)].into_iter().collect());
                if drop.item != block.id {
                    self.ledger_delta(&block.id, -1);
                    self.ledger_delta(&drop.item, 1);
                }
                ActionResult::success(
                    Delta::Mined { pos: *pos, block: block.id, drop: drop.item },
                    costs.mine,
                )
            }
            Action::Toggle { pos } => {
                let Some(previous) = self.state.mechanisms.get(pos).copied() else {
                    return self.fail(FailureReason::NotInteractive);
                };
                if !self.in_reach(agent, *pos) {
                    return self.fail(FailureReason::TooFar);
                }
                self.state.mechanisms.insert(*pos, !previous);
                let mechanisms = self.state.mechanisms.clone();
                for door in &mut self.state.doors {
                    door.open = door.opens_when.iter().all(|p| mechanisms.get(p).copied().unwrap_or(false));
                }
                ActionResult::success(Delta::Toggled { pos: *pos, previous, current: !previous }, costs.toggle)
            }
            Action::UseOn { target } => {
                let Some(tool) = self.state.agents[&agent].equipped.clone() else {
                    return self.fail(FailureReason::NoTool);
                };
                let Some(idx) = self.nearest_entity_in_reach(agent, target) else {
                    return self.fail(FailureReason::NoTarget);
                };
                if self.state.entities[idx].spent {
                    return self.fail(FailureReason::NoTarget);
                }
                let Some(rule) = self.config.uses.iter().find(|u| u.tool == tool && &u.target == target).cloned()
                else {
                    return self.fail(FailureReason::NoTool);
                };
                self.state.entities[idx].spent = true;
                self.give_to_agent(agent, &rule.yields);
                for (k, n) in rule.yields.iter() {
                    self.ledger_delta(k, i64::from(n));
                }
                ActionResult::success(Delta::Used { target: target.clone(), yields: rule.yields }, costs.use_on)
            }
            Action::Attack { target } => {
                let Some(idx) = self.nearest_entity_in_reach(agent, target) else {
                    return self.fail(FailureReason::NoTarget);
                };
                let loot = self.config.loot.get(target).cloned();
                if let Some(tool) = loot.as_ref().and_then(|l| l.tool.as_ref()) {
                    if self.state.agents[&agent].equipped.as_ref() != Some(tool) {
                        return self.fail(FailureReason::NoTool);
                    }
                }
                self.state.entities[idx].alive = false;
                let items = loot.map(|l| l.items).unwrap_or_default();
                self.give_to_agent(agent, &items);
                for (k, n) in items.iter() {
                    self.ledger_delta(k, i64::from(n));
                }
                ActionResult::success(Delta::Attacked { target: target.clone(), loot: items }, costs.attack)
            }
        }
    }

    fn craft_like(
        &mut self,
        agent: AgentId,
        item: &str,
        amount: u32,
        fuel: Option<&str>,
        kind: RecipeKind,
    ) -> ActionResult {
        if amount == 0 {
            return self.fail(FailureReason::InvalidParameter);
        }
        let Some(recipe) = self.config.recipe(item, kind).cloned() else {
            return self.fail(FailureReason::UnknownRecipe);
        };
        let ops = amount.div_ceil(recipe.amount);
        let mut needs = recipe.ingredients.scaled(ops);
        if let Some(fuel) = fuel {
            needs.add(fuel, amount.div_ceil(8));
        }
        if let Some(station) = &recipe.station {
            if !self.station_in_reach(agent, station) {
                return self.fail(FailureReason::TooFar);
            }
        }
        let inv = &self.state.agents[&agent].inventory;
        let missing: Inventory = needs
            .iter()
            .filter(|(k, n)| inv.count(k) < *n)
            .map(|(k, n)| (k, n - inv.count(k)))
            .collect();
        if !missing.is_empty() {
            return self.fail_with(
                FailureReason::MissingIngredients,
                Delta::Recipe { item: item.to_string(), needs, missing },
            );
        }
        for (k, n) in needs.iter() {
            self.take_from_agent(agent, k, n);
            self.ledger_delta(k, -i64::from(n));
        }
        let produced = ops * recipe.amount;
        self.give_to_agent(agent, &[(item, produced)].into_iter().collect());
        self.ledger_delta(item, i64::from(produced));
        let cost = match kind {
            RecipeKind::Craft => self.config.costs.craft,
            RecipeKind::Smelt => self.config.costs.smelt,
        };
        ActionResult::success(Delta::Crafted { item: item.to_string(), amount: produced, consumed: needs }, cost)
    }
}
