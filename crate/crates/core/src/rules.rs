//! Game rules as executable predicates over pairs of subtasks.
//!
//! Each rule carries a normal statement and a counterfactual statement. Under
//! the normal polarity a rule may assert a directed dependency between two
//! subtasks; under the counterfactual polarity it never asserts one.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::{Subtask, SubtaskId};
use crate::world::ActionKind;

pub type RuleId = u32;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Normal,
    Counterfactual,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    /// The first subtask must precede the second.
    EdgePQ,
    /// The second subtask must precede the first.
    EdgeQP,
    NoEdge,
    /// The rule says nothing about this pair.
    NotCovered,
}

impl Verdict {
    pub fn is_directed(self) -> bool {
        matches!(self, Verdict::EdgePQ | Verdict::EdgeQP)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderKey {
    /// Vertical coordinate of the target position.
    Height,
    /// Explicit stage number.
    Stage,
}

/// Machine-checkable body of a rule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Predicate {
    /// A producer must finish before a consumer that uses what it produced.
    ItemFlow { producers: Vec<ActionKind>, consumers: Vec<ActionKind> },
    /// Subtasks of the listed kinds run in ascending key order.
    Ordered {
        kinds: Vec<ActionKind>,
        key: OrderKey,
        /// Only order subtasks that target the same (x, z) column.
        #[serde(default)]
        same_column: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub id: RuleId,
    pub statement: String,
    pub counterfactual: String,
    pub predicate: Predicate,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuleError {
    #[error("subtask {subtask} ({kind}) is missing parameter `{param}`")]
    MalformedActionSpec { subtask: SubtaskId, kind: ActionKind, param: &'static str },
    #[error("intervention index {index} is outside 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("rule {0} has no counterfactual statement")]
    MissingCounterfactual(RuleId),
    #[error("rule id {0} is used more than once")]
    DuplicateRule(RuleId),
    #[error("rule set is empty")]
    Empty,
}

fn kinds_mention(kinds: &[ActionKind], k: ActionKind) -> bool {
    kinds.contains(&k)
}

fn missing(s: &Subtask, param: &'static str) -> RuleError {
    RuleError::MalformedActionSpec { subtask: s.id, kind: s.action.kind, param }
}

/// What an action hands to later steps, if anything.
fn produced(s: &Subtask) -> Result<Option<&str>, RuleError> {
    let a = &s.action;
    let out = match a.kind {
        ActionKind::WithdrawItem | ActionKind::Craft | ActionKind::Smelt | ActionKind::Equip => {
            Some(a.item.as_deref().ok_or_else(|| missing(s, "item"))?)
        }
        ActionKind::MineBlock => Some(a.output.as_deref().or(a.item.as_deref()).ok_or_else(|| missing(s, "item"))?),
        ActionKind::Attack | ActionKind::UseOn => Some(a.output.as_deref().ok_or_else(|| missing(s, "output"))?),
        _ => None,
    };
    Ok(out)
}

/// Items an action needs in hand before it can run.
fn consumed(s: &Subtask) -> Result<BTreeSet<&str>, RuleError> {
    let a = &s.action;
    let mut out = BTreeSet::new();
    match a.kind {
        ActionKind::PlaceBlock | ActionKind::Equip | ActionKind::Handover => {
            out.insert(a.item.as_deref().ok_or_else(|| missing(s, "item"))?);
        }
        ActionKind::UseOn | ActionKind::MineBlock | ActionKind::Attack => {
            out.extend(a.tool.as_deref());
        }
        ActionKind::Craft | ActionKind::Smelt => {
            let ing = a.ingredients.as_ref().ok_or_else(|| missing(s, "ingredients"))?;
            out.extend(ing.iter().map(|(k, _)| k));
            out.extend(a.fuel.as_deref());
        }
        _ => {}
    }
    Ok(out)
}

fn flows(
    from: &Subtask,
    to: &Subtask,
    producers: &[ActionKind],
    consumers: &[ActionKind],
) -> Result<bool, RuleError> {
    if !kinds_mention(producers, from.action.kind) || !kinds_mention(consumers, to.action.kind) {
        return Ok(false);
    }
    let Some(item) = produced(from)? else { return Ok(false) };
    Ok(consumed(to)?.contains(item))
}

fn order_key(s: &Subtask, key: OrderKey) -> Result<i64, RuleError> {
    match key {
        OrderKey::Height => Ok(i64::from(s.action.pos.ok_or_else(|| missing(s, "pos"))?.y)),
        OrderKey::Stage => Ok(i64::from(s.action.stage.ok_or_else(|| missing(s, "stage"))?)),
    }
}

impl Predicate {
    fn mentions(&self, k: ActionKind) -> bool {
        match self {
            Predicate::ItemFlow { producers, consumers } => kinds_mention(producers, k) || kinds_mention(consumers, k),
            Predicate::Ordered { kinds, .. } => kinds_mention(kinds, k),
        }
    }

    fn judge(&self, p: &Subtask, q: &Subtask) -> Result<Verdict, RuleError> {
        if !self.mentions(p.action.kind) && !self.mentions(q.action.kind) {
            return Ok(Verdict::NotCovered);
        }
        match self {
            Predicate::ItemFlow { producers, consumers } => {
                if flows(p, q, producers, consumers)? {
                    Ok(Verdict::EdgePQ)
                } else if flows(q, p, producers, consumers)? {
                    Ok(Verdict::EdgeQP)
                } else {
                    Ok(Verdict::NoEdge)
                }
            }
            Predicate::Ordered { kinds, key, same_column } => {
                if !kinds_mention(kinds, p.action.kind) || !kinds_mention(kinds, q.action.kind) {
                    return Ok(Verdict::NoEdge);
                }
                let (kp, kq) = (order_key(p, *key)?, order_key(q, *key)?);
                if *same_column {
                    let pp = p.action.pos.ok_or_else(|| missing(p, "pos"))?;
                    let qp = q.action.pos.ok_or_else(|| missing(q, "pos"))?;
                    if (pp.x, pp.z) != (qp.x, qp.z) {
                        return Ok(Verdict::NoEdge);
                    }
                }
                Ok(match kp.cmp(&kq) {
                    std::cmp::Ordering::Less => Verdict::EdgePQ,
                    std::cmp::Ordering::Greater => Verdict::EdgeQP,
                    std::cmp::Ordering::Equal => Verdict::NoEdge,
                })
            }
        }
    }
}

/// Evaluates one rule on an ordered pair under the given polarity. The
/// counterfactual polarity withdraws any dependency the rule would assert.
pub fn evaluate(rule: &Rule, p: &Subtask, q: &Subtask, polarity: Polarity) -> Result<Verdict, RuleError> {
    let v = rule.predicate.judge(p, q)?;
    Ok(match (polarity, v) {
        (Polarity::Counterfactual, v) if v.is_directed() => Verdict::NoEdge,
        (_, v) => v,
    })
}

/// Ordered, validated collection of rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    rules: Vec<Rule>,
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>) -> Result<Self, RuleError> {
        if rules.is_empty() {
            return Err(RuleError::Empty);
        }
        let mut seen = BTreeSet::new();
        for r in &rules {
            if !seen.insert(r.id) {
                return Err(RuleError::DuplicateRule(r.id));
            }
            if r.counterfactual.trim().is_empty() {
                return Err(RuleError::MissingCounterfactual(r.id));
            }
        }
        Ok(Self { rules })
    }

    /// Builtin rules followed by `extra`.
    pub fn with_extensions(extra: Vec<Rule>) -> Result<Self, RuleError> {
        let mut rules = builtin_rules().rules;
        rules.extend(extra);
        Self::new(rules)
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, id: RuleId) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// Every rule at normal polarity.
    pub fn normal(&self) -> EffectiveRules {
        EffectiveRules { rules: self.rules.iter().map(|r| (r.clone(), Polarity::Normal)).collect() }
    }

    /// Rules whose normal verdict on `(p, q)` is `verdict`. Malformed pairs
    /// are skipped.
    pub fn asserting(&self, p: &Subtask, q: &Subtask, verdict: Verdict) -> Vec<RuleId> {
        self.rules
            .iter()
            .filter(|r| evaluate(r, p, q, Polarity::Normal) == Ok(verdict))
            .map(|r| r.id)
            .collect()
    }

    /// Pairs on which two or more rules assert the same dependency. Under the
    /// combination used by the deterministic reasoner such redundancy hides
    /// each rule's individual effect.
    pub fn overlapping(&self, subtasks: &[Subtask]) -> Vec<((SubtaskId, SubtaskId), Vec<RuleId>)> {
        let mut out = Vec::new();
        for (i, p) in subtasks.iter().enumerate() {
            for q in &subtasks[i + 1..] {
                for v in [Verdict::EdgePQ, Verdict::EdgeQP] {
                    let ids = self.asserting(p, q, v);
                    if ids.len() > 1 {
                        let pair = if v == Verdict::EdgePQ { (p.id, q.id) } else { (q.id, p.id) };
                        out.push((pair, ids));
                    }
                }
            }
        }
        out
    }
}

/// Rules with a polarity each; what a dependency query is evaluated against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveRules {
    pub rules: Vec<(Rule, Polarity)>,
}

/// The rule set with exactly one rule switched to its counterfactual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionSet {
    /// 1-based position of the replaced rule.
    pub index: usize,
    pub rule_id: RuleId,
    pub effective: EffectiveRules,
}

/// Switches the `index`-th rule (1-based) to its counterfactual form.
pub fn intervene(base: &RuleSet, index: usize) -> Result<InterventionSet, RuleError> {
    if index == 0 || index > base.len() {
        return Err(RuleError::IndexOutOfRange { index, len: base.len() });
    }
    let mut effective = base.normal();
    effective.rules[index - 1].1 = Polarity::Counterfactual;
    Ok(InterventionSet { index, rule_id: base.rules[index - 1].id, effective })
}

fn rule(id: RuleId, statement: &str, counterfactual: &str, predicate: Predicate) -> Rule {
    Rule { id, statement: statement.into(), counterfactual: counterfactual.into(), predicate }
}

/// The five builtin game rules. Their directed coverage is disjoint: no
/// subtask pair receives the same dependency from two of them.
pub fn builtin_rules() -> RuleSet {
    use ActionKind::*;
    let gatherers = vec![WithdrawItem, MineBlock, Craft, Smelt, Attack, UseOn];
    RuleSet::new(vec![
        rule(
            1,
            "A block has to be in the inventory before it can be put into the world.",
            "A block can be put into the world without holding it.",
            Predicate::ItemFlow { producers: gatherers.clone(), consumers: vec![PlaceBlock] },
        ),
        rule(
            2,
            "Items kept in a container have to be taken out before they are equipped, used or handed over.",
            "Items can be equipped, used or handed over while still inside a container.",
            Predicate::ItemFlow { producers: vec![WithdrawItem], consumers: vec![Equip, UseOn, Attack, MineBlock, Handover] },
        ),
        rule(
            3,
            "An item has to be equipped before it is put into the world.",
            "An item can be put into the world without equipping it.",
            Predicate::ItemFlow { producers: vec![Equip], consumers: vec![PlaceBlock] },
        ),
        rule(
            4,
            "In a single column, lower blocks go in before the blocks above them.",
            "Blocks in a column can go in at any height order.",
            Predicate::Ordered { kinds: vec![PlaceBlock], key: OrderKey::Height, same_column: true },
        ),
        rule(
            5,
            "Crafting or smelting needs every ingredient gathered beforehand.",
            "Crafting or smelting can start before its ingredients are gathered.",
            Predicate::ItemFlow { producers: gatherers, consumers: vec![Craft, Smelt] },
        ),
    ])
    .expect("builtin rules are well formed")
}
