use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result, Scenario, Toggles};
use crate::judger::{compute_report, MetricReport, RunRecord, SubtaskRecord, Termination};
use crate::scheduler::Outcome;
use crate::task::{PathId, SubtaskId};
use crate::world::{Action, ActionKind, ActionResult, AgentId, World};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub id: SubtaskId,
    pub kind: ActionKind,
    pub score: f64,
    pub description: String,
}

/// One line of a run trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Start { scenario: Scenario, seed: u64, toggles: Toggles },
    Plan { subtasks: Vec<PlanEntry>, edges: Vec<(SubtaskId, SubtaskId)> },
    Assign { tick: u64, agent: AgentId, path: PathId },
    Issue { tick: u64, agent: AgentId, subtask: SubtaskId },
    Action {
        tick: u64,
        actor: AgentId,
        requested_by: AgentId,
        subtask: Option<SubtaskId>,
        action: Action,
        result: ActionResult,
    },
    Outcome { tick: u64, agent: AgentId, subtask: SubtaskId, outcome: Outcome, score: f64 },
    Release { tick: u64, agent: AgentId },
    End { tick: u64, reason: Termination },
}

pub fn write_trace(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("trace event serializes"));
        out.push('\n');
    }
    out
}

pub fn read_trace(text: &str) -> Result<Vec<TraceEvent>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| HarnessError::TraceCorrupt(format!("line {}: {e}", i + 1))))
        .collect()
}

fn start_of(events: &[TraceEvent]) -> Result<(&Scenario, u64)> {
    match events.first() {
        Some(TraceEvent::Start { scenario, seed, .. }) => Ok((scenario, *seed)),
        _ => Err(HarnessError::TraceCorrupt("trace does not begin with a start event".into())),
    }
}

/// Builds the metric inputs from a trace and the final world. Live runs and
/// replays both go through here.
pub fn record_from_trace(events: &[TraceEvent], world: World) -> Result<RunRecord> {
    let (sc, seed) = start_of(events)?;
    let (ticks, termination) = match events.last() {
        Some(TraceEvent::End { tick, reason }) => (*tick, *reason),
        _ => return Err(HarnessError::TraceCorrupt("trace does not end with an end event".into())),
    };
    let agents: Vec<AgentId> = world.state.agents.keys().copied().collect();
    let mut busy: BTreeMap<AgentId, u64> = agents.iter().map(|a| (*a, 0)).collect();
    let mut since: BTreeMap<AgentId, u64> = BTreeMap::new();
    let mut subtasks: Vec<SubtaskRecord> = Vec::new();
    let mut plan_seen = false;
    for e in events {
        match e {
            TraceEvent::Plan { subtasks: plan, .. } => {
                plan_seen = true;
                subtasks = plan
                    .iter()
                    .map(|p| SubtaskRecord { id: p.id, kind: p.kind, score: p.score, done: false, by: None })
                    .collect();
            }
            TraceEvent::Assign { tick, agent, .. } => {
                since.insert(*agent, *tick);
            }
            TraceEvent::Release { tick, agent } => {
                let start = since
                    .remove(agent)
                    .ok_or_else(|| HarnessError::TraceCorrupt(format!("agent {agent} released without assignment")))?;
                *busy.entry(*agent).or_insert(0) += tick.saturating_sub(start);
            }
            TraceEvent::Outcome { agent, subtask, outcome: Outcome::Done, .. } => {
                let rec = subtasks
                    .iter_mut()
                    .find(|s| s.id == *subtask)
                    .ok_or_else(|| HarnessError::TraceCorrupt(format!("outcome for unplanned subtask {subtask}")))?;
                rec.done = true;
                rec.by = Some(*agent);
            }
            _ => {}
        }
    }
    if !plan_seen {
        return Err(HarnessError::TraceCorrupt("trace has no plan event".into()));
    }
    for (agent, start) in since {
        *busy.entry(agent).or_insert(0) += ticks.min(sc.tick_budget).saturating_sub(start);
    }
    Ok(RunRecord {
        scenario: sc.name.clone(),
        seed,
        goal: sc.task.clone(),
        execution_ticks: agents.iter().map(|a| busy[a].min(sc.tick_budget)).collect(),
        agents,
        tick_budget: sc.tick_budget,
        minutes_per_tick: sc.metrics.minutes_per_tick,
        viewpoints: sc.metrics.viewpoints.clone(),
        subtasks,
        ticks,
        termination,
        world,
    })
}

/// Re-applies every recorded action to a freshly built world and recomputes
/// the metrics. Any action whose result differs from the recorded one, or
/// any conservation breach, is a divergence.
pub fn replay(events: &[TraceEvent]) -> Result<(RunRecord, MetricReport)> {
    let (sc, seed) = start_of(events)?;
    let mut sc = sc.clone();
    sc.seed = seed;
    let mut world = sc.build_world()?;
    for (i, e) in events.iter().enumerate() {
        if let TraceEvent::Action { tick, actor, action, result, .. } = e {
            world.advance_clock_to(*tick);
            let got = world.apply(*actor, action);
            let line = i + 1;
            if got != *result {
                return Err(HarnessError::DivergenceDetected {
                    line,
                    detail: format!("recorded {result:?}, replayed {got:?}"),
                });
            }
            world.audit().map_err(|e| HarnessError::DivergenceDetected { line, detail: e.to_string() })?;
        }
    }
    if let Some(TraceEvent::End { tick, .. }) = events.last() {
        world.advance_clock_to(*tick);
    }
    let record = record_from_trace(events, world)?;
    let report = compute_report(&record)?;
    Ok((record, report))
}
