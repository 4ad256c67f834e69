use std::collections::BTreeSet;

use super::{ActionIntent, AgentMemory, Policy, PolicyContext};
use crate::task::{ActionSpec, Subtask};
use crate::world::{reach_ok, stand_spots, Action, ActionKind, AgentId, AgentState, Inventory, Observation, Pos, RecipeKind};

/// Fixed action pipelines per subtask kind. Stateless: every call re-reads
/// the observation, so a failed action is simply retried from whatever stage
/// the world is in now.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScriptedPolicy;

enum Source {
    Have,
    Act(ActionIntent),
    Missing,
}

fn own(obs: &Observation, action: Action) -> Option<ActionIntent> {
    Some(ActionIntent::own(obs.agent, action))
}

/// Walk somewhere within `reach` of `target`, or `None` if already there.
fn approach(obs: &Observation, target: Pos, reach: f64, avoid: &BTreeSet<Pos>) -> Result<Option<Action>, ()> {
    let (spot, _) = stand_spots(obs, obs.me.pos, target, reach, avoid).ok_or(())?;
    Ok((spot != obs.me.pos).then_some(Action::NavigateTo { pos: spot }))
}

fn go_or(obs: &Observation, target: Pos, avoid: &BTreeSet<Pos>, then: Action) -> Option<ActionIntent> {
    match approach(obs, target, obs.reach, avoid) {
        Ok(Some(walk)) => own(obs, walk),
        Ok(None) => own(obs, then),
        Err(()) => None,
    }
}

/// Nearest way to top up `item` to `need`: a container (the hinted one on
/// equal distance), else a teammate handing over a spare unit.
fn source(obs: &Observation, item: &str, need: u32, hint: Option<Pos>, avoid: &BTreeSet<Pos>) -> Source {
    let have = obs.me.inventory.count(item);
    if have >= need {
        return Source::Have;
    }
    let missing = need - have;
    let me = obs.me.pos;
    let mut options: Vec<(bool, i32, bool, Pos, Option<AgentId>)> = Vec::new();
    for (p, c) in &obs.containers {
        if c.count(item) > 0 {
            options.push((false, p.chebyshev(me), Some(*p) != hint, *p, None));
        }
    }
    for (id, mate) in &obs.teammates {
        if spare(mate, item) > 0 {
            options.push((true, mate.pos.chebyshev(me), true, mate.pos, Some(*id)));
        }
    }
    options.sort();
    let Some(&(_, _, _, pos, mate)) = options.first() else {
        return Source::Missing;
    };
    match mate {
        None => {
            let amount = missing.min(obs.containers[&pos].count(item));
            let withdraw = Action::WithdrawItem { container: pos, item: item.into(), amount };
            go_or(obs, pos, avoid, withdraw).map_or(Source::Missing, Source::Act)
        }
        Some(id) => {
            let amount = missing.min(spare(&obs.teammates[&id], item));
            let give = Action::Handover { item: item.into(), amount, to: obs.agent };
            if me.distance(pos) <= obs.reach {
                return Source::Act(ActionIntent { actor: id, on_behalf_of: obs.agent, action: give });
            }
            // standing within reach of the teammate's head keeps feet within reach of its feet
            match approach(obs, pos.up(), obs.reach, avoid) {
                Ok(Some(walk)) => Source::Act(ActionIntent::own(obs.agent, walk)),
                _ => Source::Missing,
            }
        }
    }
}

/// Units a teammate can give away; an equipped last unit is about to be used.
fn spare(mate: &AgentState, item: &str) -> u32 {
    let n = mate.inventory.count(item);
    if mate.equipped.as_deref() == Some(item) {
        n.saturating_sub(1)
    } else {
        n
    }
}

/// Ensures `items` are in hand, one acquisition step at a time.
fn gather_all(obs: &Observation, items: &Inventory, hint: Option<Pos>, avoid: &BTreeSet<Pos>) -> Result<Option<ActionIntent>, ()> {
    for (item, n) in items.iter() {
        match source(obs, item, n, hint, avoid) {
            Source::Have => {}
            Source::Act(i) => return Ok(Some(i)),
            Source::Missing => return Err(()),
        }
    }
    Ok(None)
}

fn equip_then(obs: &Observation, tool: Option<&str>, then: Action) -> Action {
    match tool {
        Some(t) if obs.me.equipped.as_deref() != Some(t) => Action::Equip { item: t.into() },
        _ => then,
    }
}

fn place(spec: &ActionSpec, obs: &Observation, avoid: &BTreeSet<Pos>) -> Option<ActionIntent> {
    let (item, pos) = (spec.item.as_deref()?, spec.pos?);
    match source(obs, item, 1, spec.container, avoid) {
        Source::Have => {}
        Source::Act(i) => return Some(i),
        Source::Missing => return None,
    }
    let placing = Action::PlaceBlock { item: item.into(), pos, facing: spec.facing };
    match approach(obs, pos, obs.reach, avoid) {
        Ok(Some(walk)) => own(obs, walk),
        Ok(None) => own(obs, equip_then(obs, Some(item), placing)),
        Err(()) => None,
    }
}

fn withdraw(spec: &ActionSpec, obs: &Observation, avoid: &BTreeSet<Pos>) -> Option<ActionIntent> {
    let (container, item) = (spec.container?, spec.item.clone()?);
    let amount = spec.amount.unwrap_or(1);
    go_or(obs, container, avoid, Action::WithdrawItem { container, item, amount })
}

fn toggle(spec: &ActionSpec, obs: &Observation, avoid: &BTreeSet<Pos>) -> Option<ActionIntent> {
    let pos = spec.pos?;
    go_or(obs, pos, avoid, Action::Toggle { pos })
}

fn craft(spec: &ActionSpec, obs: &Observation, ctx: &PolicyContext<'_>, avoid: &BTreeSet<Pos>) -> Option<ActionIntent> {
    let item = spec.item.clone()?;
    let amount = spec.amount.unwrap_or(1);
    let kind = if spec.kind == ActionKind::Smelt { RecipeKind::Smelt } else { RecipeKind::Craft };
    let recipe = ctx.config.recipe(&item, kind)?;
    let mut needs = recipe.ingredients.scaled(amount.div_ceil(recipe.amount));
    if let Some(fuel) = &spec.fuel {
        needs.add(fuel, amount.div_ceil(8));
    }
    if let Some(i) = gather_all(obs, &needs, spec.container, avoid).ok()? {
        return Some(i);
    }
    let action = match &spec.fuel {
        Some(fuel) if kind == RecipeKind::Smelt => Action::Smelt { item, amount, fuel: fuel.clone() },
        _ => Action::Craft { item, amount },
    };
    match &recipe.station {
        Some(station) => go_or(obs, obs.nearest_block(station)?, avoid, action),
        None => own(obs, action),
    }
}

fn with_tool(spec: &ActionSpec, obs: &Observation, avoid: &BTreeSet<Pos>) -> Result<Option<ActionIntent>, ()> {
    match &spec.tool {
        Some(t) => match source(obs, t, 1, None, avoid) {
            Source::Have => Ok(None),
            Source::Act(i) => Ok(Some(i)),
            Source::Missing => Err(()),
        },
        None => Ok(None),
    }
}

fn hunt(spec: &ActionSpec, obs: &Observation, avoid: &BTreeSet<Pos>) -> Option<ActionIntent> {
    if let Some(i) = with_tool(spec, obs, avoid).ok()? {
        return Some(i);
    }
    let target = spec.target.clone()?;
    let use_on = spec.kind == ActionKind::UseOn;
    let entity = obs
        .entities
        .iter()
        .filter(|e| e.alive && e.kind == target && !(use_on && e.spent))
        .min_by_key(|e| (e.pos.chebyshev(obs.me.pos), e.id))?;
    let act = if use_on { Action::UseOn { target } } else { Action::Attack { target } };
    let act = equip_then(obs, spec.tool.as_deref(), act);
    if reach_ok(obs.me.pos, entity.pos, obs.reach) {
        return own(obs, act);
    }
    go_or(obs, entity.pos, avoid, act)
}

fn mine(spec: &ActionSpec, obs: &Observation, ctx: &PolicyContext<'_>, avoid: &BTreeSet<Pos>) -> Option<ActionIntent> {
    if let Some(i) = with_tool(spec, obs, avoid).ok()? {
        return Some(i);
    }
    let pos = match spec.pos {
        Some(p) => p,
        None => {
            let block = spec.item.as_deref()?;
            obs.blocks
                .iter()
                .filter(|(p, b)| b.id == block && !obs.containers.contains_key(*p) && !ctx.config.fixtures.contains(&b.id))
                .map(|(p, _)| *p)
                .min_by_key(|p| (p.chebyshev(obs.me.pos), *p))?
        }
    };
    go_or(obs, pos, avoid, equip_then(obs, spec.tool.as_deref(), Action::MineBlock { pos }))
}

fn handover(spec: &ActionSpec, obs: &Observation, avoid: &BTreeSet<Pos>) -> Option<ActionIntent> {
    let (item, to) = (spec.item.clone()?, spec.recipient?);
    let amount = spec.amount.unwrap_or(1);
    match source(obs, &item, amount, spec.container, avoid) {
        Source::Have => {}
        Source::Act(i) => return Some(i),
        Source::Missing => return None,
    }
    let mate = obs.teammates.get(&to)?;
    let give = Action::Handover { item, amount, to };
    if obs.me.pos.distance(mate.pos) <= obs.reach {
        return own(obs, give);
    }
    match approach(obs, mate.pos.up(), obs.reach, avoid) {
        Ok(Some(walk)) => own(obs, walk),
        _ => None,
    }
}

impl Policy for ScriptedPolicy {
    fn next(&self, subtask: &Subtask, obs: &Observation, _memory: &AgentMemory, ctx: &PolicyContext<'_>) -> Option<ActionIntent> {
        let spec = &subtask.action;
        let avoid = ctx.avoid();
        match spec.kind {
            ActionKind::PlaceBlock => place(spec, obs, &avoid),
            ActionKind::WithdrawItem => withdraw(spec, obs, &avoid),
            ActionKind::Toggle => toggle(spec, obs, &avoid),
            ActionKind::Craft | ActionKind::Smelt => craft(spec, obs, ctx, &avoid),
            ActionKind::Attack | ActionKind::UseOn => hunt(spec, obs, &avoid),
            ActionKind::MineBlock => mine(spec, obs, ctx, &avoid),
            ActionKind::Handover => handover(spec, obs, &avoid),
            ActionKind::Equip => {
                let item = spec.item.clone()?;
                match source(obs, &item, 1, spec.container, &avoid) {
                    Source::Have => own(obs, Action::Equip { item }),
                    Source::Act(i) => Some(i),
                    Source::Missing => None,
                }
            }
            ActionKind::NavigateTo => own(obs, Action::NavigateTo { pos: spec.pos? }),
            ActionKind::CheckContainer => go_or(obs, spec.container?, &avoid, Action::CheckContainer { container: spec.container? }),
            ActionKind::ScanEntities => {
                own(obs, Action::ScanEntities { item: spec.target.clone().or(spec.item.clone())?, distance: i32::MAX })
            }
        }
    }
}

/// A step off a reserved cell for an agent with nothing to do.
pub fn move_aside(obs: &Observation, ctx: &PolicyContext<'_>) -> Option<Action> {
    let avoid = ctx.avoid();
    if !avoid.contains(&obs.me.pos) {
        return None;
    }
    let (spot, _) = stand_spots(obs, obs.me.pos, obs.me.pos.up(), 3.0, &avoid)?;
    (spot != obs.me.pos).then_some(Action::NavigateTo { pos: spot })
}
