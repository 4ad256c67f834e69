//! Per-agent act / observe / reflect loop.
//!
//! An agent holds at most one subtask at a time. Each call to [`AgentMemory::step`]
//! yields the next action for it (or reports that it is finished or stuck),
//! the engine applies that action to the world, and [`AgentMemory::record`]
//! logs the result. Reflection checks the subtask's postcondition against the
//! agent's own observation.

mod remote;
mod scripted;

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::{Postcondition, Subtask, SubtaskId};
use crate::world::{Action, ActionResult, AgentId, Delta, FailureReason, Observation, Pos, WorldConfig};

pub use remote::{RemotePolicy, RemoteSummarizer};
pub use scripted::{move_aside, ScriptedPolicy};

pub const DEFAULT_LOG_BOUND: usize = 64;
pub const DEFAULT_FAILURE_CAP: u32 = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AgentError {
    #[error("agent {0} holds no subtask")]
    NoSubtask(AgentId),
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reflection {
    #[default]
    Incomplete,
    Complete,
    Stuck,
}

/// An action to apply to the world. `actor` performs it; for handovers the
/// actor is the teammate giving the item and `on_behalf_of` the receiver.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionIntent {
    pub actor: AgentId,
    pub on_behalf_of: AgentId,
    pub action: Action,
}

impl ActionIntent {
    pub fn own(agent: AgentId, action: Action) -> Self {
        Self { actor: agent, on_behalf_of: agent, action }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Act(ActionIntent),
    Complete,
    Stuck,
}

/// Static knowledge handed to a policy besides the observation.
pub struct PolicyContext<'a> {
    pub config: &'a WorldConfig,
    /// Cells the team still has to fill; agents should not stand in them.
    pub reserved: &'a BTreeSet<Pos>,
}

impl PolicyContext<'_> {
    /// Standing cells that would put the agent's body in a reserved cell.
    pub fn avoid(&self) -> BTreeSet<Pos> {
        self.reserved.iter().flat_map(|p| [*p, p.down()]).collect()
    }
}

/// Chooses the next action for a subtask.
pub trait Policy {
    /// `None` means the policy sees no way forward.
    fn next(&self, subtask: &Subtask, obs: &Observation, memory: &AgentMemory, ctx: &PolicyContext<'_>)
        -> Option<ActionIntent>;
}

/// Rewrites the running summary from new log entries.
pub trait Summarizer {
    fn summarize(&self, summary: &str, fresh: &[LogEntry]) -> Option<String>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub subtask: Option<SubtaskId>,
    pub intent: ActionIntent,
    pub result: ActionResult,
}

/// One line per completed pipeline stage, empty for stages not worth noting.
pub fn summary_line(entry: &LogEntry) -> Option<String> {
    if !entry.result.ok {
        return None;
    }
    Some(match &entry.result.observation {
        Delta::Placed { pos, item } => format!("placed {item} at {pos}"),
        Delta::Withdrew { container, item, amount } => format!("withdrew {amount} {item} from {container}"),
        Delta::Crafted { item, amount, .. } => format!("made {amount} {item}"),
        Delta::Mined { pos, block, .. } => format!("mined {block} at {pos}"),
        Delta::Toggled { pos, current, .. } => format!("switched {pos} {}", if *current { "on" } else { "off" }),
        Delta::HandedOver { item, amount, to } => {
            format!("agent {} handed {amount} {item} to agent {to}", entry.intent.actor)
        }
        Delta::Used { target, yields } => {
            let got: Vec<String> = yields.iter().map(|(k, n)| format!("{n} {k}")).collect();
            format!("collected {} from {target}", got.join(", "))
        }
        Delta::Attacked { target, .. } => format!("hunted {target}"),
        Delta::Equipped { item } => format!("equipped {item}"),
        _ => return None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentMemory {
    pub agent_id: AgentId,
    pub current_subtask: Option<Subtask>,
    pub action_log: VecDeque<LogEntry>,
    pub running_summary: String,
    pub reflection: Reflection,
    pub log_bound: usize,
    pub failure_cap: u32,
    pub consecutive_failures: u32,
    /// Set when the current subtask's own action has succeeded at least once.
    pub succeeded_once: bool,
    last_failure: Option<FailureReason>,
    dirty: bool,
    unsummarized: usize,
}

impl AgentMemory {
    pub fn new(agent_id: AgentId) -> Self {
        Self {
            agent_id,
            current_subtask: None,
            action_log: VecDeque::new(),
            running_summary: String::new(),
            reflection: Reflection::Incomplete,
            log_bound: DEFAULT_LOG_BOUND,
            failure_cap: DEFAULT_FAILURE_CAP,
            consecutive_failures: 0,
            succeeded_once: false,
            last_failure: None,
            dirty: false,
            unsummarized: 0,
        }
    }

    pub fn with_bounds(mut self, log_bound: usize, failure_cap: u32) -> Self {
        self.log_bound = log_bound.max(1);
        self.failure_cap = failure_cap.max(1);
        self
    }

    /// Takes on a new subtask (or a retry of the same one).
    pub fn take(&mut self, subtask: Subtask) {
        self.current_subtask = Some(subtask);
        self.reflection = Reflection::Incomplete;
        self.consecutive_failures = 0;
        self.succeeded_once = false;
        self.last_failure = None;
        self.dirty = false;
    }

    pub fn drop_subtask(&mut self) {
        self.current_subtask = None;
        self.reflection = Reflection::Incomplete;
    }

    pub fn subtask_id(&self) -> Option<SubtaskId> {
        self.current_subtask.as_ref().map(|s| s.id)
    }

    /// Logs an applied action. The oldest entry is evicted at the bound; its
    /// summary line is written first so nothing is lost.
    pub fn record(&mut self, intent: ActionIntent, result: ActionResult) {
        let subtask = self.subtask_id();
        if result.ok {
            self.last_failure = None;
            if intent.action.mutates() {
                self.consecutive_failures = 0;
            }
            if let Some(s) = &self.current_subtask {
                if s.action.kind == intent.action.kind() {
                    self.succeeded_once = true;
                }
            }
        } else {
            self.consecutive_failures += 1;
            self.last_failure = result.reason;
        }
        self.dirty = !result.ok || intent.action.mutates();
        if self.action_log.len() == self.log_bound {
            if self.unsummarized == self.action_log.len() {
                let oldest = self.action_log.front().cloned().expect("non-empty log");
                self.append_summary(&oldest);
                self.unsummarized -= 1;
            }
            self.action_log.pop_front();
        }
        self.action_log.push_back(LogEntry { subtask, intent, result });
        self.unsummarized += 1;
    }

    fn append_summary(&mut self, entry: &LogEntry) {
        if let Some(line) = summary_line(entry) {
            if !self.running_summary.is_empty() {
                self.running_summary.push('\n');
            }
            self.running_summary.push_str(&line);
        }
    }

    /// Entries logged since the last summary.
    pub fn fresh_entries(&self) -> Vec<LogEntry> {
        let n = self.unsummarized.min(self.action_log.len());
        self.action_log.iter().skip(self.action_log.len() - n).cloned().collect()
    }

    /// Folds new log entries into the running summary with the templated
    /// one-liners.
    pub fn summarize(&mut self) -> &str {
        for e in self.fresh_entries() {
            self.append_summary(&e);
        }
        self.unsummarized = 0;
        &self.running_summary
    }

    /// Same as [`summarize`](Self::summarize) but lets a summarizer rewrite
    /// the text; falls back to the template when it declines.
    pub fn summarize_with(&mut self, s: &dyn Summarizer) -> &str {
        let fresh = self.fresh_entries();
        if fresh.is_empty() {
            return &self.running_summary;
        }
        match s.summarize(&self.running_summary, &fresh) {
            Some(text) => {
                self.running_summary = text;
                self.unsummarized = 0;
                &self.running_summary
            }
            None => self.summarize(),
        }
    }

    fn finished(&self, subtask: &Subtask, obs: &Observation) -> bool {
        match subtask.postcondition {
            Postcondition::ActionSucceeded => self.succeeded_once,
            ref p => p.holds_in_view(obs),
        }
    }

    /// Re-evaluates the verdict after a world mutation or a failure; returns
    /// the cached verdict otherwise.
    pub fn reflect(&mut self, obs: &Observation) -> Reflection {
        if !self.dirty {
            return self.reflection;
        }
        self.dirty = false;
        let Some(subtask) = &self.current_subtask else {
            return self.reflection;
        };
        self.reflection = if self.finished(subtask, obs) {
            Reflection::Complete
        } else if self.last_failure == Some(FailureReason::NoSupport) || self.consecutive_failures >= self.failure_cap {
            Reflection::Stuck
        } else {
            Reflection::Incomplete
        };
        self.reflection
    }

    /// Next thing to do for the held subtask.
    pub fn step(&mut self, obs: &Observation, policy: &dyn Policy, ctx: &PolicyContext<'_>) -> Result<StepOutcome, AgentError> {
        let subtask = self.current_subtask.clone().ok_or(AgentError::NoSubtask(self.agent_id))?;
        if self.finished(&subtask, obs) {
            self.reflection = Reflection::Complete;
            return Ok(StepOutcome::Complete);
        }
        if self.reflection == Reflection::Stuck {
            return Ok(StepOutcome::Stuck);
        }
        match policy.next(&subtask, obs, self, ctx) {
            Some(intent) => Ok(StepOutcome::Act(intent)),
            None => {
                self.reflection = Reflection::Stuck;
                Ok(StepOutcome::Stuck)
            }
        }
    }
}
