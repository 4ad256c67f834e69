//! Dependency graph construction and counterfactual edge pruning.
//!
//! The initial graph takes every dependency the reasoner asserts under the
//! full rule set. Each edge is then re-queried with one rule at a time
//! replaced by its counterfactual; the per-rule change in the asserted
//! probability is that rule's effect on the edge. Edges whose mean effect is
//! (near) zero are not explained by any rule and are dropped.

mod decompose;

pub use decompose::{
    infer_postcondition, template_subtasks, BlueprintBlock, CookStep, DecomposeOptions, Dish, EnvSummary, Goal,
    Ingredient, Room,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reasoner::{DependencyQuery, Reasoner, ReasonerError};
use crate::rules::{intervene, EffectiveRules, InterventionSet, RuleError, RuleSet, Verdict};
use crate::task::{GraphError, Provenance, Subtask, SubtaskId, TaskGraph};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("no subtasks to plan")]
    NoSubtasks,
    #[error("edge ({0}, {1}) is not in the graph")]
    MissingEdge(SubtaskId, SubtaskId),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Rule(#[from] RuleError),
}

/// Effect of each rule on one edge of the initial graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AteResult {
    pub pair: (SubtaskId, SubtaskId),
    pub per_rule: Vec<f64>,
    pub aggregate: f64,
    pub kept: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    pub epsilon: f64,
    /// Keep an edge if any single rule moves it, instead of the mean.
    #[serde(default)]
    pub strict: bool,
    /// Worker threads for per-edge queries.
    #[serde(default = "one_thread")]
    pub threads: usize,
}

fn one_thread() -> usize {
    1
}

impl RefineOptions {
    pub fn for_reasoner(r: &dyn Reasoner) -> Self {
        Self { epsilon: r.default_epsilon(), strict: false, threads: 1 }
    }
}

fn lookup(graph: &TaskGraph, id: SubtaskId) -> Result<&Subtask, PlannerError> {
    graph.node(id).ok_or(PlannerError::Graph(GraphError::UnknownSubtask(id)))
}

/// Probability the reasoner puts on `from -> to` under `rules`.
fn edge_mass(
    reasoner: &dyn Reasoner,
    rules: &EffectiveRules,
    from: &Subtask,
    to: &Subtask,
) -> Result<f64, PlannerError> {
    Ok(reasoner.query(&DependencyQuery::new(rules, from, to))?.p_edge_pq)
}

/// Queries every unordered pair under the unmodified rules and inserts each
/// direction asserted with probability above one half. Returns the graph and
/// the edges rejected because they would have closed a cycle.
pub fn build_initial_graph(
    subtasks: &[Subtask],
    rules: &RuleSet,
    reasoner: &dyn Reasoner,
) -> Result<(TaskGraph, Vec<(SubtaskId, SubtaskId)>), PlannerError> {
    if subtasks.is_empty() {
        return Err(PlannerError::NoSubtasks);
    }
    let mut graph = TaskGraph::from_subtasks(subtasks.iter().cloned())?;
    let normal = rules.normal();
    let mut candidates = Vec::new();
    for (i, p) in subtasks.iter().enumerate() {
        for q in &subtasks[i + 1..] {
            let d = reasoner.query(&DependencyQuery::new(&normal, p, q))?;
            if d.p_edge_pq > 0.5 {
                candidates.push((p.id, q.id, Provenance::rules(rules.asserting(p, q, Verdict::EdgePQ))));
            }
            if d.p_edge_qp > 0.5 {
                candidates.push((q.id, p.id, Provenance::rules(rules.asserting(p, q, Verdict::EdgeQP))));
            }
        }
    }
    let rejected = graph.insert_sorted(candidates)?;
    Ok((graph, rejected))
}

/// Effect of rule `index` (1-based) on an existing edge: the drop in the
/// edge's probability when that rule is negated.
pub fn ate_for_rule(
    index: usize,
    pair: (SubtaskId, SubtaskId),
    graph: &TaskGraph,
    rules: &RuleSet,
    reasoner: &dyn Reasoner,
) -> Result<f64, PlannerError> {
    if !graph.has_edge(pair.0, pair.1) {
        return Err(PlannerError::MissingEdge(pair.0, pair.1));
    }
    let set = intervene(rules, index)?;
    let (from, to) = (lookup(graph, pair.0)?, lookup(graph, pair.1)?);
    Ok(edge_mass(reasoner, &rules.normal(), from, to)? - edge_mass(reasoner, &set.effective, from, to)?)
}

fn edge_effect(
    pair: (SubtaskId, SubtaskId),
    graph: &TaskGraph,
    normal: &EffectiveRules,
    interventions: &[InterventionSet],
    reasoner: &dyn Reasoner,
    opts: &RefineOptions,
) -> Result<AteResult, PlannerError> {
    let (from, to) = (lookup(graph, pair.0)?, lookup(graph, pair.1)?);
    let base = edge_mass(reasoner, normal, from, to)?;
    let per_rule = interventions
        .iter()
        .map(|set| Ok(base - edge_mass(reasoner, &set.effective, from, to)?))
        .collect::<Result<Vec<f64>, PlannerError>>()?;
    let aggregate = per_rule.iter().sum::<f64>() / per_rule.len() as f64;
    let kept = if opts.strict {
        per_rule.iter().any(|a| a.abs() > opts.epsilon)
    } else {
        aggregate.abs() > opts.epsilon
    };
    Ok(AteResult { pair, per_rule, aggregate, kept })
}

/// Computes the effect ledger for every edge (ascending order) and drops
/// edges not explained by the rules.
pub fn refine_graph(
    g_init: &TaskGraph,
    rules: &RuleSet,
    reasoner: &dyn Reasoner,
    opts: &RefineOptions,
) -> Result<(TaskGraph, Vec<AteResult>), PlannerError> {
    let interventions = (1..=rules.len()).map(|i| intervene(rules, i)).collect::<Result<Vec<_>, _>>()?;
    let normal = rules.normal();
    let pairs: Vec<(SubtaskId, SubtaskId)> = g_init.edges().map(|(a, b, _)| (a, b)).collect();

    let ledger: Vec<AteResult> = if opts.threads > 1 && pairs.len() > 1 {
        let chunk = pairs.len().div_ceil(opts.threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = pairs
                .chunks(chunk)
                .map(|part| {
                    let (normal, interventions) = (&normal, &interventions);
                    s.spawn(move || {
                        part.iter()
                            .map(|&p| edge_effect(p, g_init, normal, interventions, reasoner, opts))
                            .collect::<Result<Vec<_>, _>>()
                    })
                })
                .collect();
            let mut all = Vec::with_capacity(pairs.len());
            for h in handles {
                all.extend(h.join().expect("refinement worker panicked")?);
            }
            Ok::<_, PlannerError>(all)
        })?
    } else {
        pairs
            .iter()
            .map(|&p| edge_effect(p, g_init, &normal, &interventions, reasoner, opts))
            .collect::<Result<_, _>>()?
    };

    let mut refined = g_init.clone();
    for r in ledger.iter().filter(|r| !r.kept) {
        refined.remove_edge(r.pair.0, r.pair.1);
        log::debug!("pruned ({}, {}): aggregate effect {}", r.pair.0, r.pair.1, r.aggregate);
    }
    Ok((refined, ledger))
}

/// Copy of the initial graph with pruned edges tagged as such.
pub fn annotate_pruned(g_init: &TaskGraph, ledger: &[AteResult]) -> TaskGraph {
    let mut g = g_init.clone();
    for r in ledger.iter().filter(|r| !r.kept) {
        if g.remove_edge(r.pair.0, r.pair.1).is_some() {
            g.add_edge(r.pair.0, r.pair.1, Provenance::Pruned).expect("re-adding an existing edge");
        }
    }
    g
}
