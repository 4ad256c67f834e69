//! Path enumeration and busy-rate path assignment.
//!
//! Every maximal root-to-leaf path of the refined graph is a unit of work.
//! An agent that needs work joins the open path with the lowest busy rate,
//! `br = Σ 1/d` over the agents on it, where `d` is how far along the path
//! each agent is (1 at the entrance). A subtask shared by several paths runs
//! once; later visitors skip it.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::{ExecutionPath, PathId, PathStatus, SubtaskId, SubtaskState, TaskError, TaskGraph};
use crate::world::AgentId;

pub const DEFAULT_PATH_CAP: usize = 10_000;
pub const DEFAULT_RETRY_CAP: u32 = 3;

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("graph has no subtasks")]
    EmptyGraph,
    #[error("graph has a cycle")]
    Cyclic,
    #[error("unknown path {0}")]
    UnknownPath(PathId),
    #[error("no open path left")]
    NoOpenPath,
    #[error("agent {0} has no assignment")]
    UnknownAgent(AgentId),
    #[error("agent {0} is not working on a subtask")]
    NothingClaimed(AgentId),
    #[error(transparent)]
    Task(#[from] TaskError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAssignment {
    pub agent_id: AgentId,
    pub path_id: PathId,
    /// Index of the agent's current subtask within the path.
    pub position: usize,
}

impl AgentAssignment {
    /// Subtasks from the path entrance up to and including the current one.
    pub fn entrance_distance(&self) -> usize {
        self.position + 1
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathLedger {
    pub paths: Vec<ExecutionPath>,
    pub assignments: BTreeMap<AgentId, AgentAssignment>,
    pub completed: BTreeSet<SubtaskId>,
}

impl PathLedger {
    pub fn new(paths: Vec<ExecutionPath>) -> Self {
        Self { paths, assignments: BTreeMap::new(), completed: BTreeSet::new() }
    }

    pub fn path(&self, id: PathId) -> Result<&ExecutionPath, SchedulerError> {
        self.paths.iter().find(|p| p.id == id).ok_or(SchedulerError::UnknownPath(id))
    }

    fn path_mut(&mut self, id: PathId) -> Result<&mut ExecutionPath, SchedulerError> {
        self.paths.iter_mut().find(|p| p.id == id).ok_or(SchedulerError::UnknownPath(id))
    }

    /// Σ 1/d over the agents on the path; 0 with nobody assigned.
    pub fn busy_rate(&self, id: PathId) -> Result<f64, SchedulerError> {
        self.path(id)?;
        Ok(self
            .assignments
            .values()
            .filter(|a| a.path_id == id)
            .map(|a| 1.0 / a.entrance_distance() as f64)
            .sum())
    }

    pub fn open_paths(&self) -> impl Iterator<Item = &ExecutionPath> {
        self.paths.iter().filter(|p| p.status == PathStatus::Open)
    }
}

/// Result of path enumeration.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSet {
    pub paths: Vec<ExecutionPath>,
    /// The exhaustive path count exceeded the cap and chains were used instead.
    pub fallback: bool,
}

/// Successor lists of the transitive reduction: an edge `a -> b` is dropped
/// when `b` is also reachable through another successor of `a`. Root-to-leaf
/// walks over these lists are exactly the maximal chains of the graph.
fn direct_successors(graph: &TaskGraph, order: &[SubtaskId]) -> BTreeMap<SubtaskId, Vec<SubtaskId>> {
    let mut below: BTreeMap<SubtaskId, BTreeSet<SubtaskId>> = BTreeMap::new();
    let mut hops = BTreeMap::new();
    for &n in order.iter().rev() {
        let succ: Vec<SubtaskId> = graph.successors(n).collect();
        let direct: Vec<SubtaskId> = succ
            .iter()
            .copied()
            .filter(|&b| !succ.iter().any(|&o| o != b && below[&o].contains(&b)))
            .collect();
        let mut reach = BTreeSet::new();
        for &m in &succ {
            reach.insert(m);
            reach.extend(below[&m].iter().copied());
        }
        below.insert(n, reach);
        hops.insert(n, direct);
    }
    hops
}

fn count_paths(hops: &BTreeMap<SubtaskId, Vec<SubtaskId>>, order: &[SubtaskId], roots: &[SubtaskId]) -> u128 {
    let mut count: BTreeMap<SubtaskId, u128> = BTreeMap::new();
    for &n in order.iter().rev() {
        let s: u128 = hops[&n].iter().map(|m| count[m]).fold(0, u128::saturating_add);
        count.insert(n, if s == 0 { 1 } else { s });
    }
    roots.iter().map(|r| count[r]).fold(0, u128::saturating_add)
}

fn dfs(
    hops: &BTreeMap<SubtaskId, Vec<SubtaskId>>,
    node: SubtaskId,
    stack: &mut Vec<SubtaskId>,
    out: &mut Vec<Vec<SubtaskId>>,
) {
    stack.push(node);
    for &s in &hops[&node] {
        dfs(hops, s, stack, out);
    }
    if hops[&node].is_empty() {
        out.push(stack.clone());
    }
    stack.pop();
}

/// Greedy chain cover: start from the first uncovered node in topological
/// order and keep following the lowest-id uncovered successor.
fn chain_cover(graph: &TaskGraph, order: &[SubtaskId]) -> Vec<Vec<SubtaskId>> {
    let mut covered = BTreeSet::new();
    let mut chains = Vec::new();
    for &start in order {
        if covered.contains(&start) {
            continue;
        }
        let mut chain = vec![start];
        covered.insert(start);
        let mut cur = start;
        while let Some(next) = graph.successors(cur).find(|s| !covered.contains(s)) {
            covered.insert(next);
            chain.push(next);
            cur = next;
        }
        chains.push(chain);
    }
    chains
}

/// All maximal root-to-leaf paths (roots and successors in ascending id
/// order). A walk that takes a shortcut edge past a step it could have
/// included is not maximal and is left out. Falls back to a chain cover
/// beyond `cap` paths.
pub fn enumerate_paths_capped(graph: &TaskGraph, cap: usize) -> Result<PathSet, SchedulerError> {
    if graph.node_count() == 0 {
        return Err(SchedulerError::EmptyGraph);
    }
    let order = graph.topo_order().ok_or(SchedulerError::Cyclic)?;
    let hops = direct_successors(graph, &order);
    let roots: Vec<SubtaskId> = graph.roots().collect();
    let total = count_paths(&hops, &order, &roots);
    let (raw, fallback) = if total > cap as u128 {
        log::warn!("{total} paths exceed the cap of {cap}; using a chain cover");
        (chain_cover(graph, &order), true)
    } else {
        let mut out = Vec::new();
        for &r in &roots {
            dfs(&hops, r, &mut Vec::new(), &mut out);
        }
        (out, false)
    };
    let paths = raw.into_iter().enumerate().map(|(i, ids)| ExecutionPath::new(i as PathId + 1, ids)).collect();
    Ok(PathSet { paths, fallback })
}

pub fn enumerate_paths(graph: &TaskGraph) -> Result<Vec<ExecutionPath>, SchedulerError> {
    Ok(enumerate_paths_capped(graph, DEFAULT_PATH_CAP)?.paths)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum AssignPolicy {
    /// Lowest busy rate, ties to the lowest path id.
    BusyRate,
    /// Uniformly random open path.
    Random { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub retry_cap: u32,
    pub path_cap: usize,
    pub policy: AssignPolicy,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { retry_cap: DEFAULT_RETRY_CAP, path_cap: DEFAULT_PATH_CAP, policy: AssignPolicy::BusyRate }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Done,
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "directive", content = "subtask", rename_all = "snake_case")]
pub enum Directive {
    Continue(SubtaskId),
    Reassign,
    AllDone,
}

/// Answer to "what should this agent work on now?".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Issue {
    /// Start (or keep working on) this subtask.
    Ready(SubtaskId),
    /// Nothing can start yet; ask again next tick.
    Wait,
    /// The path is finished or blocked; the agent was released.
    Reassign,
}

/// Single authority over path state, subtask claims and subtask lifecycle.
#[derive(Clone, Debug)]
pub struct Scheduler {
    graph: TaskGraph,
    ledger: PathLedger,
    claims: BTreeMap<SubtaskId, AgentId>,
    held: BTreeMap<AgentId, SubtaskId>,
    dead: BTreeSet<SubtaskId>,
    config: SchedulerConfig,
    rng: ChaCha8Rng,
    fallback: bool,
    recovered: usize,
}

impl Scheduler {
    pub fn new(graph: TaskGraph, config: SchedulerConfig) -> Result<Self, SchedulerError> {
        let set = enumerate_paths_capped(&graph, config.path_cap)?;
        let seed = match config.policy {
            AssignPolicy::Random { seed } => seed,
            AssignPolicy::BusyRate => 0,
        };
        let completed = graph.nodes().filter(|n| n.state == SubtaskState::Done).map(|n| n.id).collect();
        let mut s = Self {
            graph,
            ledger: PathLedger { completed, ..PathLedger::new(set.paths) },
            claims: BTreeMap::new(),
            held: BTreeMap::new(),
            dead: BTreeSet::new(),
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            fallback: set.fallback,
            recovered: 0,
        };
        s.refresh();
        Ok(s)
    }

    pub fn graph(&self) -> &TaskGraph {
        &self.graph
    }

    pub fn ledger(&self) -> &PathLedger {
        &self.ledger
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn used_fallback(&self) -> bool {
        self.fallback
    }

    pub fn recovery_paths(&self) -> usize {
        self.recovered
    }

    pub fn assignment(&self, agent: AgentId) -> Option<&AgentAssignment> {
        self.ledger.assignments.get(&agent)
    }

    /// The subtask an agent has been issued and not yet reported on.
    pub fn held(&self, agent: AgentId) -> Option<SubtaskId> {
        self.held.get(&agent).copied()
    }

    pub fn busy_rate(&self, path: PathId) -> Result<f64, SchedulerError> {
        self.ledger.busy_rate(path)
    }

    pub fn all_done(&self) -> bool {
        self.ledger.completed.len() == self.graph.node_count()
    }

    pub fn has_open_path(&self) -> bool {
        self.ledger.open_paths().next().is_some()
    }

    pub fn permanently_failed(&self) -> &BTreeSet<SubtaskId> {
        &self.dead
    }

    /// Joins `agent` to an open path and returns its id. An existing
    /// assignment is dropped first.
    pub fn assign(&mut self, agent: AgentId) -> Result<PathId, SchedulerError> {
        self.release(agent);
        let open: Vec<PathId> = self.ledger.open_paths().map(|p| p.id).collect();
        if open.is_empty() {
            return Err(SchedulerError::NoOpenPath);
        }
        let chosen = match self.config.policy {
            AssignPolicy::BusyRate => {
                let mut best = (f64::INFINITY, PathId::MAX);
                for id in open {
                    let br = self.ledger.busy_rate(id)?;
                    if br < best.0 || (br == best.0 && id < best.1) {
                        best = (br, id);
                    }
                }
                best.1
            }
            AssignPolicy::Random { .. } => open[self.rng.random_range(0..open.len())],
        };
        self.ledger.assignments.insert(agent, AgentAssignment { agent_id: agent, path_id: chosen, position: 0 });
        Ok(chosen)
    }

    /// Drops the agent's assignment and any unreported claim.
    pub fn release(&mut self, agent: AgentId) {
        self.ledger.assignments.remove(&agent);
        if let Some(s) = self.held.remove(&agent) {
            self.claims.remove(&s);
            if let Some(n) = self.graph.node_mut(s) {
                if n.state == SubtaskState::InProgress {
                    n.state = if n.attempts == 0 { SubtaskState::Pending } else { SubtaskState::Failed };
                }
            }
        }
    }

    fn preds_done(&self, id: SubtaskId) -> bool {
        self.graph.predecessors(id).all(|p| self.ledger.completed.contains(&p))
    }

    fn doomed(&self) -> BTreeSet<SubtaskId> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<SubtaskId> = self.dead.iter().copied().collect();
        while let Some(n) = stack.pop() {
            if out.insert(n) {
                stack.extend(self.graph.successors(n));
            }
        }
        out
    }

    /// Updates path statuses and adds single-subtask paths for live subtasks
    /// no open path covers any more.
    fn refresh(&mut self) {
        let doomed = self.doomed();
        for p in self.ledger.paths.iter_mut().filter(|p| p.status == PathStatus::Open) {
            let pending: Vec<SubtaskId> =
                p.subtask_ids.iter().copied().filter(|s| !self.ledger.completed.contains(s)).collect();
            if pending.is_empty() {
                p.status = PathStatus::Complete;
            } else if pending.iter().any(|s| doomed.contains(s)) {
                p.status = PathStatus::Blocked;
                log::info!("path {} blocked", p.id);
            }
        }
        let covered: BTreeSet<SubtaskId> = self.ledger.open_paths().flat_map(|p| p.subtask_ids.iter().copied()).collect();
        let orphans: Vec<SubtaskId> = self
            .graph
            .node_ids()
            .filter(|s| !self.ledger.completed.contains(s) && !doomed.contains(s) && !covered.contains(s))
            .collect();
        for s in orphans {
            let id = self.ledger.paths.iter().map(|p| p.id).max().unwrap_or(0) + 1;
            log::info!("subtask {s} lost its open paths; adding recovery path {id}");
            self.ledger.paths.push(ExecutionPath::new(id, vec![s]));
            self.recovered += 1;
        }
    }

    fn claim(&mut self, agent: AgentId, id: SubtaskId) -> Result<(), SchedulerError> {
        let cap = self.config.retry_cap;
        self.graph.node_mut(id).expect("claimed subtask exists").start(cap)?;
        self.claims.insert(id, agent);
        self.held.insert(agent, id);
        Ok(())
    }

    /// Lowest-id unfinished ancestor of `id` that could start right now and
    /// that nobody is working on.
    fn free_ancestor(&self, id: SubtaskId) -> Option<SubtaskId> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<SubtaskId> = self.graph.predecessors(id).collect();
        let mut best: Option<SubtaskId> = None;
        while let Some(n) = stack.pop() {
            if !seen.insert(n) || self.ledger.completed.contains(&n) {
                continue;
            }
            if !self.claims.contains_key(&n) && !self.dead.contains(&n) && self.preds_done(n) {
                best = Some(best.map_or(n, |b| b.min(n)));
            }
            stack.extend(self.graph.predecessors(n));
        }
        best
    }

    /// Hands the agent its next subtask. Completed subtasks on the path are
    /// skipped. When the next subtask is gated by unfinished predecessors the
    /// agent takes a startable unfinished ancestor if one is free, and waits
    /// otherwise.
    pub fn issue(&mut self, agent: AgentId) -> Result<Issue, SchedulerError> {
        if let Some(s) = self.held(agent) {
            return Ok(Issue::Ready(s));
        }
        let asg = self.ledger.assignments.get(&agent).cloned().ok_or(SchedulerError::UnknownAgent(agent))?;
        let path = self.ledger.path(asg.path_id)?.clone();
        if path.status != PathStatus::Open {
            self.release(agent);
            return Ok(Issue::Reassign);
        }
        let mut pos = asg.position;
        while pos < path.subtask_ids.len() && self.ledger.completed.contains(&path.subtask_ids[pos]) {
            pos += 1;
        }
        if let Some(a) = self.ledger.assignments.get_mut(&agent) {
            a.position = pos;
        }
        if pos >= path.subtask_ids.len() {
            self.refresh();
            self.release(agent);
            return Ok(Issue::Reassign);
        }
        let next = path.subtask_ids[pos];
        if self.claims.contains_key(&next) {
            return Ok(Issue::Wait);
        }
        if self.preds_done(next) {
            self.claim(agent, next)?;
            return Ok(Issue::Ready(next));
        }
        match self.free_ancestor(next) {
            Some(a) => {
                self.claim(agent, a)?;
                Ok(Issue::Ready(a))
            }
            None => Ok(Issue::Wait),
        }
    }

    /// Reports the outcome of the agent's held subtask.
    pub fn advance(&mut self, agent: AgentId, outcome: Outcome) -> Result<Directive, SchedulerError> {
        let asg = self.ledger.assignments.get(&agent).cloned().ok_or(SchedulerError::UnknownAgent(agent))?;
        let sid = self.held.remove(&agent).ok_or(SchedulerError::NothingClaimed(agent))?;
        self.claims.remove(&sid);
        let cap = self.config.retry_cap;
        let node = self.graph.node_mut(sid).expect("held subtask exists");
        match outcome {
            Outcome::Done => {
                node.complete()?;
                self.ledger.completed.insert(sid);
            }
            Outcome::Failed => {
                node.fail()?;
                if node.exhausted(cap) {
                    log::warn!("subtask {sid} failed {cap} times; giving up on it");
                    self.dead.insert(sid);
                }
            }
        }
        self.refresh();
        if self.all_done() {
            self.release(agent);
            return Ok(Directive::AllDone);
        }
        if outcome == Outcome::Failed && !self.dead.contains(&sid) {
            return Ok(Directive::Continue(sid));
        }
        let path = self.ledger.path(asg.path_id)?.clone();
        if path.status != PathStatus::Open {
            self.release(agent);
            return Ok(Directive::Reassign);
        }
        let mut pos = asg.position;
        while pos < path.subtask_ids.len() && self.ledger.completed.contains(&path.subtask_ids[pos]) {
            pos += 1;
        }
        if pos >= path.subtask_ids.len() {
            self.ledger.path_mut(asg.path_id)?.status = PathStatus::Complete;
            self.release(agent);
            return Ok(Directive::Reassign);
        }
        if let Some(a) = self.ledger.assignments.get_mut(&agent) {
            a.position = pos;
        }
        Ok(Directive::Continue(path.subtask_ids[pos]))
    }
}
