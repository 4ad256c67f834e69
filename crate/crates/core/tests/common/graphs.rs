use std::collections::{BTreeMap, BTreeSet};

use causeway::planner::{build_initial_graph, refine_graph, RefineOptions};
use causeway::reasoner::{BiasedReasoner, DeterministicReasoner};
use causeway::scheduler::{enumerate_paths, Directive, Issue, Outcome};
use causeway::task::{ActionSpec, Postcondition, Provenance, SubtaskState};
use causeway::world::{ActionKind, Inventory, Pos};
use causeway::{builtin_rules, Scheduler, SchedulerConfig, Subtask, SubtaskId, TaskGraph};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Pair = (SubtaskId, SubtaskId);

/// Test-side description of a subtask. The oracle reads this, never the
/// `ActionSpec` built from it.
#[derive(Clone, Debug)]
pub enum Node {
    Withdraw(&'static str),
    Mine { block: &'static str, out: &'static str, tool: Option<&'static str> },
    Craft { out: &'static str, uses: Vec<&'static str> },
    Smelt { out: &'static str, uses: Vec<&'static str>, fuel: &'static str },
    Attack { target: &'static str, out: &'static str, tool: Option<&'static str> },
    Shear { tool: &'static str, out: &'static str },
    Equip(&'static str),
    Handover(&'static str),
    Place { item: &'static str, x: i32, y: i32 },
    Toggle(u32),
}

// Crafted items only consume items of a lower tier, so rule edges can
// never close a cycle.
const TIERS: [&[&str]; 4] = [&["log", "stone", "cobblestone", "beef", "coal"], &["planks", "iron"], &["stick"], &["pickaxe"]];
const TOOLS: [&str; 3] = ["pickaxe", "shears", "sword"];
const BLOCKS: [&str; 4] = ["stone", "planks", "log", "cobblestone"];

fn every_item() -> Vec<&'static str> {
    let mut v: Vec<&str> = TIERS.iter().flat_map(|t| t.iter().copied()).chain(TOOLS).collect();
    v.sort_unstable();
    v.dedup();
    v
}

pub fn random_node(rng: &mut ChaCha8Rng) -> Node {
    let items = every_item();
    let pick = |rng: &mut ChaCha8Rng, xs: &[&'static str]| *xs.choose(rng).unwrap();
    match rng.random_range(0..10) {
        0 => Node::Withdraw(pick(rng, &items)),
        1 => {
            let block = pick(rng, &["stone", "log"]);
            let out = if block == "stone" && rng.random_bool(0.5) { "cobblestone" } else { block };
            Node::Mine { block, out, tool: rng.random_bool(0.5).then_some("pickaxe") }
        }
        2 => {
            let tier = rng.random_range(1..TIERS.len());
            let out = pick(rng, TIERS[tier]);
            let lower: Vec<&str> = TIERS[..tier].iter().flat_map(|t| t.iter().copied()).collect();
            let mut uses: Vec<&str> = (0..rng.random_range(1..=2)).map(|_| pick(rng, &lower)).collect();
            uses.sort_unstable();
            uses.dedup();
            Node::Craft { out, uses }
        }
        3 => Node::Smelt { out: "iron", uses: vec![pick(rng, &["stone", "cobblestone"])], fuel: "coal" },
        4 => Node::Attack { target: "cow", out: "beef", tool: rng.random_bool(0.5).then_some("sword") },
        5 => Node::Shear { tool: "shears", out: pick(rng, &["log", "coal"]) },
        6 => Node::Equip(pick(rng, &[&BLOCKS[..], &TOOLS[..]].concat())),
        7 => Node::Handover(pick(rng, &items)),
        8 => Node::Toggle(rng.random_range(0..3)),
        _ => Node::Place { item: pick(rng, &BLOCKS), x: rng.random_range(0..2), y: rng.random_range(64..68) },
    }
}

fn inventory(items: &[&str]) -> Inventory {
    let mut inv = Inventory::new();
    for i in items {
        inv.add(i, 1);
    }
    inv
}

pub fn to_subtask(id: SubtaskId, n: &Node) -> Subtask {
    let chest = Pos::new(5, 64, 5);
    let spec = match n {
        Node::Withdraw(x) => ActionSpec::withdraw(chest, x, 1),
        Node::Mine { block, out, tool } => ActionSpec::mine(block, out).with_tool(tool.map(String::from)),
        Node::Craft { out, uses } => ActionSpec::craft(out, 1, inventory(uses)),
        Node::Smelt { out, uses, fuel } => ActionSpec::smelt(out, 1, inventory(uses), fuel),
        Node::Attack { target, out, tool } => ActionSpec::attack(target, out).with_tool(tool.map(String::from)),
        Node::Shear { tool, out } => ActionSpec::use_on("sheep", tool, out),
        Node::Equip(x) => ActionSpec::equip(x),
        Node::Handover(x) => ActionSpec { item: Some(x.to_string()), amount: Some(1), ..ActionSpec::new(ActionKind::Handover) },
        Node::Place { item, x, y } => ActionSpec::place(item, Pos::new(*x, *y, 0)),
        Node::Toggle(stage) => ActionSpec::toggle(Pos::new(9, 64, *stage as i32), *stage),
    };
    Subtask::new(id, format!("node {id}"), spec, Postcondition::ActionSucceeded)
}

fn yields(n: &Node) -> Option<&'static str> {
    match n {
        Node::Withdraw(x) | Node::Craft { out: x, .. } | Node::Smelt { out: x, .. } => Some(x),
        Node::Mine { out, .. } | Node::Attack { out, .. } | Node::Shear { out, .. } => Some(out),
        _ => None,
    }
}

/// Whether builtin rule `rule` requires `p` before `q`, read straight off
/// the rule statements.
pub fn oracle_asserts(rule: u32, p: &Node, q: &Node) -> bool {
    match rule {
        // held before placed
        1 => matches!(q, Node::Place { item, .. } if yields(p) == Some(*item)),
        // taken out of a container before equipped, used or handed over
        2 => match (p, q) {
            (Node::Withdraw(x), Node::Equip(y) | Node::Handover(y)) => x == y,
            (Node::Withdraw(x), Node::Shear { tool, .. }) => x == tool,
            (Node::Withdraw(x), Node::Attack { tool: Some(t), .. } | Node::Mine { tool: Some(t), .. }) => x == t,
            _ => false,
        },
        // equipped before placed
        3 => matches!((p, q), (Node::Equip(x), Node::Place { item, .. }) if x == item),
        // lower before higher in one column
        4 => matches!((p, q), (Node::Place { x: px, y: py, .. }, Node::Place { x: qx, y: qy, .. }) if px == qx && py < qy),
        // ingredients gathered before crafting
        5 => match q {
            Node::Craft { uses, .. } => yields(p).is_some_and(|x| uses.contains(&x)),
            Node::Smelt { uses, fuel, .. } => yields(p).is_some_and(|x| uses.contains(&x) || x == *fuel),
            _ => false,
        },
        _ => false,
    }
}

pub const RULE_IDS: [u32; 5] = [1, 2, 3, 4, 5];

/// Rules asserting each directed pair, or `None` if two rules disagree on
/// the direction of some pair.
pub fn oracle_rule_edges(nodes: &[Node]) -> Option<BTreeMap<Pair, BTreeSet<u32>>> {
    let mut out = BTreeMap::new();
    for (i, p) in nodes.iter().enumerate() {
        for (j, q) in nodes.iter().enumerate() {
            if i == j {
                continue;
            }
            let fwd: BTreeSet<u32> = RULE_IDS.iter().copied().filter(|r| oracle_asserts(*r, p, q)).collect();
            let back = RULE_IDS.iter().any(|r| oracle_asserts(*r, q, p));
            if !fwd.is_empty() {
                if back {
                    return None;
                }
                out.insert((i as SubtaskId + 1, j as SubtaskId + 1), fwd);
            }
        }
    }
    Some(out)
}

pub fn reaches(edges: &BTreeSet<Pair>, from: SubtaskId, to: SubtaskId) -> bool {
    let mut stack = vec![from];
    let mut seen = BTreeSet::new();
    while let Some(n) = stack.pop() {
        if n == to {
            return true;
        }
        if seen.insert(n) {
            stack.extend(edges.iter().filter(|e| e.0 == n).map(|e| e.1));
        }
    }
    false
}

/// One instance for the pruning checks.
#[derive(Clone, Debug)]
pub struct RefineCase {
    pub nodes: Vec<Node>,
    pub rule_edges: BTreeMap<Pair, BTreeSet<u32>>,
    pub hallucinated: BTreeSet<Pair>,
}

impl RefineCase {
    pub fn subtasks(&self) -> Vec<Subtask> {
        self.nodes.iter().enumerate().map(|(i, n)| to_subtask(i as SubtaskId + 1, n)).collect()
    }
}

/// Up to 8 random subtasks plus `0..=4` rule-free edges that keep the
/// graph acyclic.
pub fn refine_case(seed: u64) -> RefineCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n = rng.random_range(2..=8);
        let nodes: Vec<Node> = (0..n).map(|_| random_node(&mut rng)).collect();
        let Some(rule_edges) = oracle_rule_edges(&nodes) else { continue };
        let want = rng.random_range(0..=4);
        let mut all: BTreeSet<Pair> = rule_edges.keys().copied().collect();
        let mut free: Vec<Pair> = (1..=n as SubtaskId)
            .flat_map(|a| (1..=n as SubtaskId).map(move |b| (a, b)))
            .filter(|&(a, b)| a != b && !all.contains(&(a, b)) && !all.contains(&(b, a)))
            .collect();
        free.shuffle(&mut rng);
        let mut hallucinated = BTreeSet::new();
        for (a, b) in free {
            if hallucinated.len() == want {
                break;
            }
            if all.contains(&(b, a)) || reaches(&all, b, a) {
                continue;
            }
            all.insert((a, b));
            hallucinated.insert((a, b));
        }
        return RefineCase { nodes, rule_edges, hallucinated };
    }
}

#[derive(Default, Debug)]
pub struct RefineCheck {
    pub edges: usize,
    /// Disagreements with the oracle about which edges survive.
    pub pruning: Vec<String>,
    /// Violations of the effect algebra.
    pub algebra: Vec<String>,
}

pub fn check_refine_case(case: &RefineCase) -> RefineCheck {
    let mut out = RefineCheck::default();
    let rules = builtin_rules();
    let subtasks = case.subtasks();
    let reasoner = BiasedReasoner::new(DeterministicReasoner, case.hallucinated.iter().copied());
    let (g_init, rejected) = match build_initial_graph(&subtasks, &rules, &reasoner) {
        Ok(x) => x,
        Err(e) => {
            out.pruning.push(format!("initial graph failed: {e}"));
            return out;
        }
    };
    if !rejected.is_empty() {
        out.pruning.push(format!("edges rejected as cyclic: {rejected:?}"));
    }
    let truth: BTreeSet<Pair> = case.rule_edges.keys().copied().collect();
    let expected_init: BTreeSet<Pair> = truth.union(&case.hallucinated).copied().collect();
    if g_init.edge_set() != expected_init {
        out.pruning.push(format!("initial edges {:?}, oracle {:?}", g_init.edge_set(), expected_init));
    }
    let (refined, ledger) = match refine_graph(&g_init, &rules, &reasoner, &RefineOptions::for_reasoner(&reasoner)) {
        Ok(x) => x,
        Err(e) => {
            out.pruning.push(format!("refinement failed: {e}"));
            return out;
        }
    };
    out.edges = ledger.len();
    if refined.edge_set() != truth {
        out.pruning.push(format!("refined edges {:?}, oracle {:?}", refined.edge_set(), truth));
    }
    let pruned: BTreeSet<Pair> = ledger.iter().filter(|r| !r.kept).map(|r| r.pair).collect();
    if pruned != case.hallucinated {
        out.pruning.push(format!("pruned {pruned:?}, injected {:?}", case.hallucinated));
    }
    for r in &ledger {
        if r.per_rule.len() != RULE_IDS.len() {
            out.algebra.push(format!("{:?}: {} per-rule effects", r.pair, r.per_rule.len()));
            continue;
        }
        let mean = r.per_rule.iter().sum::<f64>() / r.per_rule.len() as f64;
        if (r.aggregate - mean).abs() > 1e-12 {
            out.algebra.push(format!("{:?}: aggregate {} vs mean {mean}", r.pair, r.aggregate));
        }
        let asserting = case.rule_edges.get(&r.pair).cloned().unwrap_or_default();
        for (i, rule) in RULE_IDS.iter().enumerate() {
            let ate = r.per_rule[i];
            if !asserting.contains(rule) {
                if ate != 0.0 {
                    out.algebra.push(format!("{:?}: rule {rule} does not cover the pair but moved it by {ate}", r.pair));
                }
            } else {
                // The edge survives the intervention only if another rule
                // still asserts it.
                let expected = if asserting.len() == 1 { 1.0 } else { 0.0 };
                if ate != expected {
                    out.algebra.push(format!("{:?}: rule {rule} effect {ate}, expected {expected}", r.pair));
                }
            }
        }
    }
    out
}

/// Random DAG on ids `1..=n` in shuffled topological order.
pub fn random_dag(rng: &mut ChaCha8Rng, max_nodes: u32) -> (u32, BTreeSet<Pair>) {
    let n = rng.random_range(1..=max_nodes);
    let density = rng.random_range(0.1..0.6);
    let mut order: Vec<u32> = (1..=n).collect();
    order.shuffle(rng);
    let mut edges = BTreeSet::new();
    for i in 0..order.len() {
        for j in i + 1..order.len() {
            if rng.random_bool(density) {
                edges.insert((order[i], order[j]));
            }
        }
    }
    (n, edges)
}

pub fn toggle_graph(n: u32, edges: &BTreeSet<Pair>) -> TaskGraph {
    let mut g = TaskGraph::from_subtasks(
        (1..=n).map(|i| Subtask::new(i, format!("s{i}"), ActionSpec::new(ActionKind::Toggle), Postcondition::ActionSucceeded)),
    )
    .unwrap();
    for &(a, b) in edges {
        g.add_edge(a, b, Provenance::rules([])).unwrap();
    }
    g
}

fn is_subsequence(short: &[u32], long: &[u32]) -> bool {
    let mut it = long.iter();
    short.iter().all(|s| it.any(|l| l == s))
}

/// Every root-to-leaf walk over all edges, minus walks that are a proper
/// subsequence of another walk.
pub fn brute_maximal_paths(n: u32, edges: &BTreeSet<Pair>) -> BTreeSet<Vec<u32>> {
    let succ = |a: u32| edges.iter().filter(move |e| e.0 == a).map(|e| e.1);
    let roots: Vec<u32> = (1..=n).filter(|v| !edges.iter().any(|e| e.1 == *v)).collect();
    let mut walks = Vec::new();
    let mut stack: Vec<Vec<u32>> = roots.iter().map(|r| vec![*r]).collect();
    while let Some(w) = stack.pop() {
        let last = *w.last().unwrap();
        let next: Vec<u32> = succ(last).collect();
        if next.is_empty() {
            walks.push(w);
        } else {
            for s in next {
                let mut w2 = w.clone();
                w2.push(s);
                stack.push(w2);
            }
        }
    }
    walks
        .iter()
        .filter(|w| !walks.iter().any(|o| o.len() > w.len() && is_subsequence(w, o)))
        .cloned()
        .collect()
}

/// Path coverage on one random DAG with at most `max_nodes` nodes.
pub fn check_paths(seed: u64, max_nodes: u32) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, edges) = random_dag(&mut rng, max_nodes);
    let paths = match enumerate_paths(&toggle_graph(n, &edges)) {
        Ok(p) => p,
        Err(e) => return vec![format!("seed {seed}: {e}")],
    };
    let got: BTreeSet<Vec<u32>> = paths.iter().map(|p| p.subtask_ids.clone()).collect();
    let mut bad = Vec::new();
    if got.len() != paths.len() {
        bad.push(format!("seed {seed}: duplicate paths"));
    }
    let union: BTreeSet<u32> = got.iter().flatten().copied().collect();
    if union != (1..=n).collect() {
        bad.push(format!("seed {seed}: paths cover {union:?} of {n} nodes"));
    }
    let want = brute_maximal_paths(n, &edges);
    if got != want {
        bad.push(format!("seed {seed}: enumerated {got:?}, brute force {want:?}"));
    }
    bad
}

/// One randomized assignment episode. Returns every invariant violation
/// observed.
pub fn scheduler_episode(seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, edges) = random_dag(&mut rng, 10);
    let agents: Vec<u32> = (1..=rng.random_range(1..=4)).collect();
    let fail_p = rng.random_range(0.0..0.3);
    let mut s = Scheduler::new(toggle_graph(n, &edges), SchedulerConfig::default()).unwrap();
    let mut done: BTreeSet<u32> = BTreeSet::new();
    let mut bad = Vec::new();
    let preds = |v: u32| edges.iter().filter(move |e| e.1 == v).map(|e| e.0);
    for _ in 0..5_000 {
        let agent = *agents.choose(&mut rng).unwrap();
        if s.assignment(agent).is_none() {
            if !s.has_open_path() {
                if agents.iter().all(|a| s.held(*a).is_none()) {
                    break;
                }
                continue;
            }
            let before: Vec<(u32, f64)> =
                s.ledger().open_paths().map(|p| (p.id, s.busy_rate(p.id).unwrap())).collect();
            let chosen = s.assign(agent).unwrap();
            let min = before.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
            let first_min = before.iter().find(|b| b.1 == min).map(|b| b.0);
            if first_min != Some(chosen) {
                bad.push(format!("seed {seed}: assigned path {chosen}, argmin is {first_min:?} in {before:?}"));
            }
            let was = before.iter().find(|b| b.0 == chosen).map_or(f64::NAN, |b| b.1);
            let now = s.busy_rate(chosen).unwrap();
            if ((now - was) - 1.0).abs() > 1e-12 {
                bad.push(format!("seed {seed}: busy rate of path {chosen} went from {was} to {now}"));
            }
            continue;
        }
        match s.issue(agent).unwrap() {
            Issue::Ready(sid) => {
                let missing: Vec<u32> = preds(sid).filter(|p| !done.contains(p)).collect();
                if !missing.is_empty() {
                    bad.push(format!("seed {seed}: issued {sid} before predecessors {missing:?}"));
                }
                let outcome = if rng.random_bool(fail_p) { Outcome::Failed } else { Outcome::Done };
                let directive = s.advance(agent, outcome).unwrap();
                if outcome == Outcome::Done {
                    done.insert(sid);
                }
                if directive == Directive::AllDone {
                    if done.len() != n as usize || !s.graph().nodes().all(|v| v.state == SubtaskState::Done) {
                        bad.push(format!("seed {seed}: all done with {done:?} of {n}"));
                    }
                    return bad;
                }
            }
            Issue::Wait | Issue::Reassign => {}
        }
    }
    if done.len() == n as usize && !s.all_done() {
        bad.push(format!("seed {seed}: every subtask finished but the scheduler disagrees"));
    }
    bad
}
