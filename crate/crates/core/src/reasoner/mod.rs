//! Dependency-verdict oracles.
//!
//! A reasoner answers "given these rules, must `p` precede `q`?" with a
//! probability distribution over the three possible answers.

pub(crate) mod remote;

pub use remote::{ChatClient, ChatConfig, PromptTemplates, RemoteReasoner};

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{template_subtasks, DecomposeOptions, EnvSummary, Goal};
use crate::rules::{evaluate, EffectiveRules, RuleError, RuleId, Verdict};
use crate::task::{Subtask, SubtaskId, TaskGraph};

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("queried subtask {0} against itself")]
    IdenticalPair(SubtaskId),
    #[error("remote reasoner unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("decomposition failed: {0}")]
    DecompositionFailed(String),
}

#[derive(Clone, Copy, Debug)]
pub struct DependencyQuery<'a> {
    pub rules: &'a EffectiveRules,
    pub p: &'a Subtask,
    pub q: &'a Subtask,
}

impl<'a> DependencyQuery<'a> {
    pub fn new(rules: &'a EffectiveRules, p: &'a Subtask, q: &'a Subtask) -> Self {
        Self { rules, p, q }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictDistribution {
    pub p_edge_pq: f64,
    pub p_edge_qp: f64,
    pub p_no_edge: f64,
}

impl VerdictDistribution {
    pub fn point(v: Verdict) -> Self {
        match v {
            Verdict::EdgePQ => Self { p_edge_pq: 1.0, p_edge_qp: 0.0, p_no_edge: 0.0 },
            Verdict::EdgeQP => Self { p_edge_pq: 0.0, p_edge_qp: 1.0, p_no_edge: 0.0 },
            Verdict::NoEdge | Verdict::NotCovered => Self { p_edge_pq: 0.0, p_edge_qp: 0.0, p_no_edge: 1.0 },
        }
    }

    /// Empirical distribution of sampled verdicts. Empty input is all NoEdge.
    pub fn empirical(samples: &[Verdict]) -> Self {
        if samples.is_empty() {
            return Self::point(Verdict::NoEdge);
        }
        let n = samples.len() as f64;
        let count = |v: Verdict| samples.iter().filter(|s| **s == v).count() as f64;
        let pq = count(Verdict::EdgePQ) / n;
        let qp = count(Verdict::EdgeQP) / n;
        Self { p_edge_pq: pq, p_edge_qp: qp, p_no_edge: 1.0 - pq - qp }
    }

    /// Swaps the roles of `p` and `q`.
    pub fn flipped(self) -> Self {
        Self { p_edge_pq: self.p_edge_qp, p_edge_qp: self.p_edge_pq, p_no_edge: self.p_no_edge }
    }
}

pub trait Reasoner: Send + Sync {
    fn query(&self, q: &DependencyQuery<'_>) -> Result<VerdictDistribution, ReasonerError>;

    /// Samples drawn per query; 1 for deterministic reasoners.
    fn samples(&self) -> u32 {
        1
    }

    /// Pruning threshold appropriate for this reasoner's noise level.
    fn default_epsilon(&self) -> f64 {
        if self.samples() <= 1 {
            0.0
        } else {
            0.1
        }
    }

    /// Breaks a goal into subtasks. The default uses the built-in templates.
    fn decompose(&self, goal: &Goal, env: &EnvSummary, opts: &DecomposeOptions) -> Result<Vec<Subtask>, ReasonerError> {
        template_subtasks(goal, env, opts)
    }
}

impl<R: Reasoner + ?Sized> Reasoner for Box<R> {
    fn query(&self, q: &DependencyQuery<'_>) -> Result<VerdictDistribution, ReasonerError> {
        (**self).query(q)
    }
    fn samples(&self) -> u32 {
        (**self).samples()
    }
    fn default_epsilon(&self) -> f64 {
        (**self).default_epsilon()
    }
    fn decompose(&self, goal: &Goal, env: &EnvSummary, opts: &DecomposeOptions) -> Result<Vec<Subtask>, ReasonerError> {
        (**self).decompose(goal, env, opts)
    }
}

/// Combines rule verdicts: one-sided directed verdicts win, conflicts go to
/// the lowest rule id, anything else is no edge.
pub fn combine_rules(rules: &EffectiveRules, p: &Subtask, q: &Subtask) -> Result<Verdict, RuleError> {
    let mut directed: Vec<(RuleId, Verdict)> = Vec::new();
    for (rule, polarity) in &rules.rules {
        let v = evaluate(rule, p, q, *polarity)?;
        if v.is_directed() {
            directed.push((rule.id, v));
        }
    }
    directed.sort_by_key(|(id, _)| *id);
    let pq = directed.iter().any(|(_, v)| *v == Verdict::EdgePQ);
    let qp = directed.iter().any(|(_, v)| *v == Verdict::EdgeQP);
    Ok(match (pq, qp) {
        (true, false) => Verdict::EdgePQ,
        (false, true) => Verdict::EdgeQP,
        (true, true) => {
            let (id, v) = directed[0];
            log::warn!("rules disagree on ({}, {}); rule {id} wins with {v:?}", p.id, q.id);
            v
        }
        (false, false) => Verdict::NoEdge,
    })
}

/// Evaluates the rule predicates directly; always a point mass.
#[derive(Clone, Copy, Debug, Default)]
pub struct DeterministicReasoner;

impl Reasoner for DeterministicReasoner {
    fn query(&self, q: &DependencyQuery<'_>) -> Result<VerdictDistribution, ReasonerError> {
        if q.p.id == q.q.id {
            return Err(ReasonerError::IdenticalPair(q.p.id));
        }
        Ok(VerdictDistribution::point(combine_rules(q.rules, q.p, q.q)?))
    }
}

/// Wraps a reasoner and asserts extra dependencies no rule supports, the way
/// a model's prior knowledge can. The injected verdicts ignore the rule set,
/// so interventions never move them.
#[derive(Clone, Debug)]
pub struct BiasedReasoner<R> {
    inner: R,
    spurious: BTreeSet<(SubtaskId, SubtaskId)>,
}

impl<R: Reasoner> BiasedReasoner<R> {
    pub fn new(inner: R, spurious: impl IntoIterator<Item = (SubtaskId, SubtaskId)>) -> Self {
        Self { inner, spurious: spurious.into_iter().collect() }
    }

    pub fn spurious(&self) -> &BTreeSet<(SubtaskId, SubtaskId)> {
        &self.spurious
    }
}

impl<R: Reasoner> Reasoner for BiasedReasoner<R> {
    fn query(&self, q: &DependencyQuery<'_>) -> Result<VerdictDistribution, ReasonerError> {
        let base = self.inner.query(q)?;
        if self.spurious.contains(&(q.p.id, q.q.id)) {
            return Ok(VerdictDistribution::point(Verdict::EdgePQ));
        }
        if self.spurious.contains(&(q.q.id, q.p.id)) {
            return Ok(VerdictDistribution::point(Verdict::EdgeQP));
        }
        Ok(base)
    }

    fn samples(&self) -> u32 {
        self.inner.samples()
    }

    fn default_epsilon(&self) -> f64 {
        self.inner.default_epsilon()
    }

    fn decompose(&self, goal: &Goal, env: &EnvSummary, opts: &DecomposeOptions) -> Result<Vec<Subtask>, ReasonerError> {
        self.inner.decompose(goal, env, opts)
    }
}

/// Picks up to `count` ordered pairs that carry no dependency in `graph` and
/// can be added to it without closing a cycle. The pairs are mutually
/// consistent, so all of them survive acyclic insertion.
pub fn pick_spurious_edges(graph: &TaskGraph, count: usize, seed: u64) -> Vec<(SubtaskId, SubtaskId)> {
    let ids: Vec<SubtaskId> = graph.node_ids().collect();
    let mut candidates: Vec<(SubtaskId, SubtaskId)> = ids
        .iter()
        .flat_map(|&a| ids.iter().map(move |&b| (a, b)))
        .filter(|&(a, b)| a != b && !graph.has_edge(a, b) && !graph.has_edge(b, a))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    let mut work = graph.clone();
    let mut out = Vec::new();
    for (a, b) in candidates {
        if out.len() == count {
            break;
        }
        if work.has_edge(b, a) || work.has_edge(a, b) {
            continue;
        }
        if work.add_edge(a, b, crate::task::Provenance::rules([])).is_ok() {
            out.push((a, b));
        }
    }
    out.sort_unstable();
    out
}
