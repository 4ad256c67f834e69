use std::collections::{BTreeMap, BTreeSet};

use causeway::harness::bundled;
use causeway::world::Delta;
use causeway::{Action, ActionResult, AgentId, Pos, World};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FUZZ_SCENARIOS: [&str; 4] = ["tower", "cooking", "escape", "gathering"];

pub fn fuzz_world(seed: u64) -> World {
    let name = FUZZ_SCENARIOS[(seed % FUZZ_SCENARIOS.len() as u64) as usize];
    let mut sc = bundled::get(name).expect("bundled scenario").expect("parses");
    sc.seed = seed;
    sc.build_world().expect("world builds")
}

fn item_names(w: &World) -> Vec<String> {
    let mut names: BTreeSet<String> = BTreeSet::new();
    for a in w.state.agents.values() {
        names.extend(a.inventory.iter().map(|(k, _)| k.to_string()));
    }
    for c in w.state.containers.values() {
        names.extend(c.iter().map(|(k, _)| k.to_string()));
    }
    names.extend(w.state.blocks.values().map(|b| b.id.clone()));
    for r in &w.config.recipes {
        names.insert(r.output.clone());
        names.extend(r.ingredients.iter().map(|(k, _)| k.to_string()));
    }
    names.insert("nothing".into());
    names.into_iter().collect()
}

fn near(rng: &mut ChaCha8Rng, p: Pos) -> Pos {
    p.offset(rng.random_range(-4..=4), rng.random_range(-1..=3), rng.random_range(-4..=4))
}

/// A random action, biased towards ones that can succeed in `w`.
pub fn random_action(w: &World, rng: &mut ChaCha8Rng) -> (AgentId, Action) {
    let agents: Vec<AgentId> = w.state.agents.keys().copied().collect();
    let agent = *agents.choose(rng).unwrap();
    let me = &w.state.agents[&agent];
    let items = item_names(w);
    let held: Vec<String> = me.inventory.iter().map(|(k, _)| k.to_string()).collect();
    let any_item = |rng: &mut ChaCha8Rng| items.choose(rng).unwrap().clone();
    let some_held = |rng: &mut ChaCha8Rng| held.choose(rng).cloned().unwrap_or_else(|| any_item(rng));
    let containers: Vec<Pos> = w.state.containers.keys().copied().collect();
    let landmarks: Vec<Pos> = containers
        .iter()
        .copied()
        .chain(w.state.mechanisms.keys().copied())
        .chain(w.state.entities.iter().filter(|e| e.alive).map(|e| e.pos))
        .chain(w.state.blocks.keys().copied())
        .collect();
    let kinds: Vec<String> = w.state.entities.iter().map(|e| e.kind.clone()).chain(["ghost".to_string()]).collect();
    let action = match rng.random_range(0..14) {
        0 | 1 => {
            let target = match landmarks.choose(rng) {
                Some(l) if rng.random_bool(0.7) => near(rng, *l),
                _ => near(rng, me.pos),
            };
            Action::NavigateTo { pos: target }
        }
        2 => Action::CheckContainer { container: containers.choose(rng).copied().unwrap_or_else(|| near(rng, me.pos)) },
        3 => {
            let container = containers.choose(rng).copied().unwrap_or_else(|| near(rng, me.pos));
            let stock: Vec<String> =
                w.state.containers.get(&container).map(|c| c.iter().map(|(k, _)| k.to_string()).collect()).unwrap_or_default();
            let item = stock.choose(rng).cloned().unwrap_or_else(|| any_item(rng));
            Action::WithdrawItem { container, item, amount: rng.random_range(0..=3) }
        }
        4 => Action::ScanEntities { item: kinds.choose(rng).unwrap().clone(), distance: rng.random_range(-2..20) },
        5 => Action::Equip { item: some_held(rng) },
        6 | 7 => {
            let item = match &me.equipped {
                Some(e) if rng.random_bool(0.8) => e.clone(),
                _ => some_held(rng),
            };
            Action::PlaceBlock { item, pos: near(rng, me.pos), facing: None }
        }
        8 => Action::Handover {
            item: some_held(rng),
            amount: rng.random_range(0..=2),
            to: *agents.choose(rng).unwrap(),
        },
        9 => {
            let item = w.config.recipes.choose(rng).map(|r| r.output.clone()).unwrap_or_else(|| any_item(rng));
            if rng.random_bool(0.8) {
                Action::Craft { item, amount: rng.random_range(0..=4) }
            } else {
                Action::Smelt { item, amount: rng.random_range(0..=2), fuel: any_item(rng) }
            }
        }
        10 => {
            let pos = match w.state.blocks.keys().copied().collect::<Vec<_>>().choose(rng) {
                Some(b) if rng.random_bool(0.5) => *b,
                _ => near(rng, me.pos),
            };
            Action::MineBlock { pos }
        }
        11 => {
            let mechs: Vec<Pos> = w.state.mechanisms.keys().copied().collect();
            Action::Toggle { pos: mechs.choose(rng).copied().unwrap_or_else(|| near(rng, me.pos)) }
        }
        12 => Action::UseOn { target: kinds.choose(rng).unwrap().clone() },
        _ => Action::Attack { target: kinds.choose(rng).unwrap().clone() },
    };
    (agent, action)
}

/// Items counted directly from the world: inventories, containers and
/// placed blocks.
pub fn recount(w: &World) -> BTreeMap<String, i64> {
    let mut out: BTreeMap<String, i64> = BTreeMap::new();
    let inventories = w.state.agents.values().map(|a| &a.inventory).chain(w.state.containers.values());
    for inv in inventories {
        for (k, n) in inv.iter() {
            *out.entry(k.to_string()).or_default() += i64::from(n);
        }
    }
    for b in w.state.blocks.values() {
        *out.entry(b.id.clone()).or_default() += 1;
    }
    out.retain(|_, n| *n != 0);
    out
}

/// How a successful action is allowed to change item totals. Anything not
/// listed only moves items around.
pub fn account(expected: &mut BTreeMap<String, i64>, result: &ActionResult) {
    if !result.ok {
        return;
    }
    let mut add = |k: &str, n: i64| *expected.entry(k.to_string()).or_default() += n;
    match &result.observation {
        Delta::Crafted { item, amount, consumed } => {
            add(item, i64::from(*amount));
            for (k, n) in consumed.iter() {
                add(k, -i64::from(n));
            }
        }
        Delta::Mined { block, drop, .. } => {
            add(block, -1);
            add(drop, 1);
        }
        Delta::Used { yields: items, .. } | Delta::Attacked { loot: items, .. } => {
            for (k, n) in items.iter() {
                add(k, i64::from(n));
            }
        }
        _ => {}
    }
    expected.retain(|_, n| *n != 0);
}

/// Some face neighbour is ground, a block or a closed door.
pub fn supported(w: &World, p: Pos) -> bool {
    let faces = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
    faces.iter().map(|&(dx, dy, dz)| p.offset(dx, dy, dz)).any(|n| {
        n.y < w.config.ground_y
            || w.state.blocks.contains_key(&n)
            || w.state.doors.iter().any(|d| !d.open && d.cells.contains(&n))
    })
}

#[derive(Debug, Default)]
pub struct FuzzReport {
    pub successes: usize,
    pub violations: Vec<String>,
}

/// Applies `steps` random actions, checking conservation after each one,
/// then replays the recorded actions on a fresh world and compares.
pub fn fuzz(seed: u64, steps: usize) -> FuzzReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut w = fuzz_world(seed);
    let mut report = FuzzReport::default();
    let mut expected = recount(&w);
    let mut log: Vec<(AgentId, Action, ActionResult)> = Vec::with_capacity(steps);
    for i in 0..steps {
        let (agent, action) = random_action(&w, &mut rng);
        let clock = w.state.clock;
        let result = w.step(agent, &action);
        report.successes += usize::from(result.ok);
        if w.state.clock != clock + result.cost {
            report.violations.push(format!("seed {seed} step {i}: clock {clock} -> {} for cost {}", w.state.clock, result.cost));
        }
        if let (true, Delta::Placed { pos, .. }) = (result.ok, &result.observation) {
            if !supported(&w, *pos) {
                report.violations.push(format!("seed {seed} step {i}: block at {pos:?} has no support"));
            }
        }
        account(&mut expected, &result);
        if let Err(e) = w.audit() {
            report.violations.push(format!("seed {seed} step {i}: audit failed: {e}"));
        }
        let actual = recount(&w);
        if actual != expected {
            report.violations.push(format!("seed {seed} step {i} ({action:?}): totals {actual:?}, expected {expected:?}"));
        }
        if !report.violations.is_empty() {
            return report;
        }
        log.push((agent, action, result));
    }
    let mut again = fuzz_world(seed);
    for (i, (agent, action, result)) in log.iter().enumerate() {
        let replayed = again.step(*agent, action);
        if &replayed != result {
            report.violations.push(format!("seed {seed} step {i}: replay gave {replayed:?}, recorded {result:?}"));
            return report;
        }
    }
    let (a, b) = (serde_json::to_string(&w).unwrap(), serde_json::to_string(&again).unwrap());
    if a != b || w != again {
        report.violations.push(format!("seed {seed}: replayed world differs from the original"));
    }
    report
}
