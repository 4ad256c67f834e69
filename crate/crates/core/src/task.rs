//! Shared planning vocabulary: subtasks, dependency graphs and execution paths.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rules::RuleId;
use crate::world::{ActionKind, AgentId, Facing, Inventory, Observation, Pos, World};

pub type SubtaskId = u32;
pub type PathId = u32;

/// Structured action template: an action kind plus whichever parameters the
/// kind needs. Unused parameters stay `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<Pos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amount: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub container: Option<Pos>,
    /// Entity kind for attack / use-on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    /// Item the action is expected to yield (mining drops, loot, shearing).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuel: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facing: Option<Facing>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingredients: Option<Inventory>,
    /// Ordering stage for staged mechanisms (escape rooms).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipient: Option<AgentId>,
}

impl ActionSpec {
    pub fn new(kind: ActionKind) -> Self {
        Self {
            kind,
            item: None,
            pos: None,
            amount: None,
            container: None,
            target: None,
            tool: None,
            output: None,
            fuel: None,
            facing: None,
            ingredients: None,
            stage: None,
            recipient: None,
        }
    }

    pub fn withdraw(container: Pos, item: &str, amount: u32) -> Self {
        Self { container: Some(container), item: Some(item.into()), amount: Some(amount), ..Self::new(ActionKind::WithdrawItem) }
    }

    pub fn place(item: &str, pos: Pos) -> Self {
        Self { item: Some(item.into()), pos: Some(pos), ..Self::new(ActionKind::PlaceBlock) }
    }

    pub fn equip(item: &str) -> Self {
        Self { item: Some(item.into()), ..Self::new(ActionKind::Equip) }
    }

    pub fn craft(item: &str, amount: u32, ingredients: Inventory) -> Self {
        Self {
            item: Some(item.into()),
            amount: Some(amount),
            ingredients: Some(ingredients),
            ..Self::new(ActionKind::Craft)
        }
    }

    pub fn smelt(item: &str, amount: u32, ingredients: Inventory, fuel: &str) -> Self {
        Self { fuel: Some(fuel.into()), kind: ActionKind::Smelt, ..Self::craft(item, amount, ingredients) }
    }

    pub fn attack(target: &str, output: &str) -> Self {
        Self { target: Some(target.into()), output: Some(output.into()), ..Self::new(ActionKind::Attack) }
    }

    pub fn use_on(target: &str, tool: &str, output: &str) -> Self {
        Self {
            target: Some(target.into()),
            tool: Some(tool.into()),
            output: Some(output.into()),
            ..Self::new(ActionKind::UseOn)
        }
    }

    /// Mine any block of kind `block`, expecting `output` as the drop.
    pub fn mine(block: &str, output: &str) -> Self {
        Self { item: Some(block.into()), output: Some(output.into()), ..Self::new(ActionKind::MineBlock) }
    }

    pub fn toggle(pos: Pos, stage: u32) -> Self {
        Self { pos: Some(pos), stage: Some(stage), ..Self::new(ActionKind::Toggle) }
    }

    pub fn with_tool(mut self, tool: Option<String>) -> Self {
        self.tool = tool;
        self
    }

    pub fn with_amount(mut self, amount: u32) -> Self {
        self.amount = Some(amount);
        self
    }

    pub fn with_container(mut self, container: Option<Pos>) -> Self {
        self.container = container;
        self
    }

    pub fn with_facing(mut self, facing: Option<Facing>) -> Self {
        self.facing = facing;
        self
    }
}

/// World predicate that marks a subtask as finished.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Postcondition {
    BlockPresent {
        pos: Pos,
        block: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        facing: Option<Facing>,
    },
    /// The container has been drawn down to at most `count` of `item`.
    ContainerAtMost { container: Pos, item: String, count: u32 },
    /// The team jointly holds at least `count` of `item`.
    TeamHolds { item: String, count: u32 },
    MechanismOn { pos: Pos },
    /// No world predicate: finishes when its action succeeds once.
    ActionSucceeded,
}

impl Postcondition {
    pub fn holds_in_world(&self, world: &World) -> bool {
        let s = &world.state;
        match self {
            Postcondition::BlockPresent { pos, block, facing } => s.blocks.get(pos).is_some_and(|b| {
                b.id == *block && (facing.is_none() || !world.config.orientable.contains(block) || b.facing == *facing)
            }),
            Postcondition::ContainerAtMost { container, item, count } => {
                s.containers.get(container).is_some_and(|c| c.count(item) <= *count)
            }
            Postcondition::TeamHolds { item, count } => {
                s.agents.values().map(|a| a.inventory.count(item)).sum::<u32>() >= *count
            }
            Postcondition::MechanismOn { pos } => s.mechanisms.get(pos).copied().unwrap_or(false),
            Postcondition::ActionSucceeded => false,
        }
    }

    /// Evaluated against a partial view; never true unless true in the world.
    pub fn holds_in_view(&self, obs: &Observation) -> bool {
        match self {
            Postcondition::BlockPresent { pos, block, facing } => obs
                .blocks
                .get(pos)
                .is_some_and(|b| b.id == *block && (facing.is_none() || b.facing.is_none() || b.facing == *facing)),
            Postcondition::ContainerAtMost { container, item, count } => {
                obs.containers.get(container).is_some_and(|c| c.count(item) <= *count)
            }
            Postcondition::TeamHolds { item, count } => {
                obs.me.inventory.count(item) + obs.teammates.values().map(|a| a.inventory.count(item)).sum::<u32>()
                    >= *count
            }
            Postcondition::MechanismOn { pos } => obs.mechanisms.get(pos).copied().unwrap_or(false),
            Postcondition::ActionSucceeded => false,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskState {
    Pending,
    InProgress,
    Done,
    Failed,
}

#[derive(Debug, Error, PartialEq)]
pub enum TaskError {
    #[error("subtask {id}: illegal transition {from:?} -> {to:?}")]
    InvalidTransition { id: SubtaskId, from: SubtaskState, to: SubtaskState },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subtask {
    pub id: SubtaskId,
    pub description: String,
    pub action: ActionSpec,
    pub postcondition: Postcondition,
    #[serde(default = "pending")]
    pub state: SubtaskState,
    #[serde(default)]
    pub attempts: u32,
    /// Indicator score credited to whoever finishes the subtask.
    #[serde(default)]
    pub score: f64,
}

fn pending() -> SubtaskState {
    SubtaskState::Pending
}

impl Subtask {
    pub fn new(id: SubtaskId, description: impl Into<String>, action: ActionSpec, postcondition: Postcondition) -> Self {
        Self {
            id,
            description: description.into(),
            action,
            postcondition,
            state: SubtaskState::Pending,
            attempts: 0,
            score: 0.0,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    fn illegal(&self, to: SubtaskState) -> TaskError {
        TaskError::InvalidTransition { id: self.id, from: self.state, to }
    }

    /// Pending → InProgress, or a retry Failed → InProgress while attempts
    /// remain under `retry_cap`.
    pub fn start(&mut self, retry_cap: u32) -> Result<(), TaskError> {
        match self.state {
            SubtaskState::Pending => {}
            SubtaskState::Failed if self.attempts < retry_cap => {}
            _ => return Err(self.illegal(SubtaskState::InProgress)),
        }
        self.state = SubtaskState::InProgress;
        Ok(())
    }

    pub fn complete(&mut self) -> Result<(), TaskError> {
        if self.state != SubtaskState::InProgress {
            return Err(self.illegal(SubtaskState::Done));
        }
        self.state = SubtaskState::Done;
        Ok(())
    }

    pub fn fail(&mut self) -> Result<(), TaskError> {
        if self.state != SubtaskState::InProgress {
            return Err(self.illegal(SubtaskState::Failed));
        }
        self.state = SubtaskState::Failed;
        self.attempts += 1;
        Ok(())
    }

    pub fn exhausted(&self, retry_cap: u32) -> bool {
        self.state == SubtaskState::Failed && self.attempts >= retry_cap
    }
}

/// Which rules justified an edge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum Provenance {
    RuleDerived { rules: Vec<RuleId> },
    Pruned,
}

impl Provenance {
    pub fn rules(ids: impl IntoIterator<Item = RuleId>) -> Self {
        let mut rules: Vec<RuleId> = ids.into_iter().collect();
        rules.sort_unstable();
        rules.dedup();
        Provenance::RuleDerived { rules }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: SubtaskId,
    pub to: SubtaskId,
    pub provenance: Provenance,
}

/// Serialized graph form. May hold an invalid graph; see [`validate_graph`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub nodes: Vec<Subtask>,
    pub edges: Vec<Edge>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    CycleFound { nodes: Vec<SubtaskId> },
    DanglingEdge { from: SubtaskId, to: SubtaskId },
    DuplicateId { id: SubtaskId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::CycleFound { nodes } => write!(f, "cycle through {nodes:?}"),
            Violation::DanglingEdge { from, to } => write!(f, "edge ({from}, {to}) references a missing node"),
            Violation::DuplicateId { id } => write!(f, "duplicate subtask id {id}"),
        }
    }
}

/// Reports every invariant violation in a serialized graph. An empty report
/// means the document can be loaded as a [`TaskGraph`].
pub fn validate_graph(doc: &GraphDoc) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for n in &doc.nodes {
        if !ids.insert(n.id) {
            out.push(Violation::DuplicateId { id: n.id });
        }
    }
    let mut adj: BTreeMap<SubtaskId, BTreeSet<SubtaskId>> = BTreeMap::new();
    for e in &doc.edges {
        if !ids.contains(&e.from) || !ids.contains(&e.to) {
            out.push(Violation::DanglingEdge { from: e.from, to: e.to });
        } else {
            adj.entry(e.from).or_default().insert(e.to);
        }
    }
    if let Some(cycle) = find_cycle(&ids, &adj) {
        out.push(Violation::CycleFound { nodes: cycle });
    }
    out
}

fn find_cycle(
    ids: &BTreeSet<SubtaskId>,
    adj: &BTreeMap<SubtaskId, BTreeSet<SubtaskId>>,
) -> Option<Vec<SubtaskId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Closed,
    }
    fn visit(
        n: SubtaskId,
        adj: &BTreeMap<SubtaskId, BTreeSet<SubtaskId>>,
        marks: &mut BTreeMap<SubtaskId, Mark>,
        stack: &mut Vec<SubtaskId>,
    ) -> Option<Vec<SubtaskId>> {
        marks.insert(n, Mark::Open);
        stack.push(n);
        for &m in adj.get(&n).into_iter().flatten() {
            match marks.get(&m) {
                Some(Mark::Open) => {
                    let start = stack.iter().position(|&x| x == m).expect("open node is on stack");
                    return Some(stack[start..].to_vec());
                }
                Some(Mark::Closed) => {}
                None => {
                    if let Some(c) = visit(m, adj, marks, stack) {
                        return Some(c);
                    }
                }
            }
        }
        stack.pop();
        marks.insert(n, Mark::Closed);
        None
    }
    let mut marks = BTreeMap::new();
    for &n in ids {
        if !marks.contains_key(&n) {
            let mut stack = Vec::new();
            if let Some(c) = visit(n, adj, &mut marks, &mut stack) {
                return Some(c);
            }
        }
    }
    None
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("subtask {0} already exists")]
    DuplicateId(SubtaskId),
    #[error("edge ({0}, {1}) references a missing node")]
    DanglingEdge(SubtaskId, SubtaskId),
    #[error("edge ({0}, {1}) would create a cycle")]
    WouldCycle(SubtaskId, SubtaskId),
    #[error("unknown subtask {0}")]
    UnknownSubtask(SubtaskId),
    #[error("invalid graph: {0:?}")]
    Invalid(Vec<Violation>),
}

/// Directed acyclic dependency graph over subtasks. An edge `(a, b)` means
/// `a` must be done before `b` may start. Acyclicity is enforced on every
/// insertion.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphDoc", into = "GraphDoc")]
pub struct TaskGraph {
    nodes: BTreeMap<SubtaskId, Subtask>,
    edges: BTreeMap<(SubtaskId, SubtaskId), Provenance>,
}

impl TryFrom<GraphDoc> for TaskGraph {
    type Error = GraphError;

    fn try_from(doc: GraphDoc) -> Result<Self, Self::Error> {
        let violations = validate_graph(&doc);
        if !violations.is_empty() {
            return Err(GraphError::Invalid(violations));
        }
        Ok(TaskGraph {
            nodes: doc.nodes.into_iter().map(|n| (n.id, n)).collect(),
            edges: doc.edges.into_iter().map(|e| ((e.from, e.to), e.provenance)).collect(),
        })
    }
}

impl From<TaskGraph> for GraphDoc {
    fn from(g: TaskGraph) -> Self {
        g.to_doc()
    }
}

impl TaskGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_subtasks(subtasks: impl IntoIterator<Item = Subtask>) -> Result<Self, GraphError> {
        let mut g = Self::new();
        for s in subtasks {
            g.add_node(s)?;
        }
        Ok(g)
    }

    pub fn to_doc(&self) -> GraphDoc {
        GraphDoc {
            nodes: self.nodes.values().cloned().collect(),
            edges: self
                .edges
                .iter()
                .map(|(&(from, to), p)| Edge { from, to, provenance: p.clone() })
                .collect(),
        }
    }

    pub fn add_node(&mut self, s: Subtask) -> Result<(), GraphError> {
        if self.nodes.contains_key(&s.id) {
            return Err(GraphError::DuplicateId(s.id));
        }
        self.nodes.insert(s.id, s);
        Ok(())
    }

    /// Inserts `from -> to`. Re-inserting an existing edge merges provenance.
    pub fn add_edge(&mut self, from: SubtaskId, to: SubtaskId, provenance: Provenance) -> Result<(), GraphError> {
        if !self.nodes.contains_key(&from) || !self.nodes.contains_key(&to) {
            return Err(GraphError::DanglingEdge(from, to));
        }
        if let Some(existing) = self.edges.get_mut(&(from, to)) {
            if let (Provenance::RuleDerived { rules: a }, Provenance::RuleDerived { rules: b }) = (&*existing, &provenance)
            {
                *existing = Provenance::rules(a.iter().chain(b).copied());
            }
            return Ok(());
        }
        if from == to || self.reaches(to, from) {
            return Err(GraphError::WouldCycle(from, to));
        }
        self.edges.insert((from, to), provenance);
        Ok(())
    }

    /// Inserts candidate edges in ascending `(from, to)` order, skipping and
    /// logging any that would close a cycle. Returns the rejected pairs.
    pub fn insert_sorted(
        &mut self,
        mut candidates: Vec<(SubtaskId, SubtaskId, Provenance)>,
    ) -> Result<Vec<(SubtaskId, SubtaskId)>, GraphError> {
        candidates.sort_by_key(|c| (c.0, c.1));
        let mut rejected = Vec::new();
        for (from, to, prov) in candidates {
            match self.add_edge(from, to, prov) {
                Ok(()) => {}
                Err(GraphError::WouldCycle(a, b)) => {
                    log::warn!("rejected edge ({a}, {b}): would create a cycle");
                    rejected.push((a, b));
                }
                Err(e) => return Err(e),
            }
        }
        Ok(rejected)
    }

    pub fn remove_edge(&mut self, from: SubtaskId, to: SubtaskId) -> Option<Provenance> {
        self.edges.remove(&(from, to))
    }

    pub fn has_edge(&self, from: SubtaskId, to: SubtaskId) -> bool {
        self.edges.contains_key(&(from, to))
    }

    pub fn provenance(&self, from: SubtaskId, to: SubtaskId) -> Option<&Provenance> {
        self.edges.get(&(from, to))
    }

    /// Whether `to` is reachable from `from` along edges.
    pub fn reaches(&self, from: SubtaskId, to: SubtaskId) -> bool {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([from]);
        while let Some(n) = queue.pop_front() {
            if n == to {
                return true;
            }
            for s in self.successors(n) {
                if seen.insert(s) {
                    queue.push_back(s);
                }
            }
        }
        false
    }

    pub fn node(&self, id: SubtaskId) -> Option<&Subtask> {
        self.nodes.get(&id)
    }

    pub fn node_mut(&mut self, id: SubtaskId) -> Option<&mut Subtask> {
        self.nodes.get_mut(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Subtask> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = SubtaskId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (SubtaskId, SubtaskId, &Provenance)> {
        self.edges.iter().map(|(&(a, b), p)| (a, b, p))
    }

    pub fn edge_set(&self) -> BTreeSet<(SubtaskId, SubtaskId)> {
        self.edges.keys().copied().collect()
    }

    /// Successors in ascending id order.
    pub fn successors(&self, id: SubtaskId) -> impl Iterator<Item = SubtaskId> + '_ {
        self.edges.range((id, SubtaskId::MIN)..=(id, SubtaskId::MAX)).map(|(&(_, b), _)| b)
    }

    pub fn predecessors(&self, id: SubtaskId) -> impl Iterator<Item = SubtaskId> + '_ {
        self.edges.keys().filter(move |(_, b)| *b == id).map(|&(a, _)| a)
    }

    pub fn roots(&self) -> impl Iterator<Item = SubtaskId> + '_ {
        self.nodes.keys().copied().filter(|&n| self.predecessors(n).next().is_none())
    }

    /// Same nodes, no edges.
    pub fn without_edges(&self) -> TaskGraph {
        TaskGraph { nodes: self.nodes.clone(), edges: BTreeMap::new() }
    }

    /// Kahn's algorithm; `None` if a cycle exists (never for a well-formed graph).
    pub fn topo_order(&self) -> Option<Vec<SubtaskId>> {
        let mut indeg: BTreeMap<SubtaskId, usize> = self.nodes.keys().map(|&n| (n, 0)).collect();
        for &(_, b) in self.edges.keys() {
            *indeg.get_mut(&b)? += 1;
        }
        let mut ready: BTreeSet<SubtaskId> = indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop_first() {
            order.push(n);
            for s in self.successors(n).collect::<Vec<_>>() {
                let d = indeg.get_mut(&s)?;
                *d -= 1;
                if *d == 0 {
                    ready.insert(s);
                }
            }
        }
        (order.len() == self.nodes.len()).then_some(order)
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_graph(&self.to_doc())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathStatus {
    Open,
    Complete,
    Blocked,
}

/// A root-to-leaf sequence of subtasks; the unit of agent assignment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPath {
    pub id: PathId,
    pub subtask_ids: Vec<SubtaskId>,
    pub status: PathStatus,
}

impl ExecutionPath {
    pub fn new(id: PathId, subtask_ids: Vec<SubtaskId>) -> Self {
        Self { id, subtask_ids, status: PathStatus::Open }
    }
}
