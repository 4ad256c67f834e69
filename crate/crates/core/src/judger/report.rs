use serde::{Deserialize, Serialize};

use super::{
    agent_contribution_rate, balanced_score, completion_rate, construction_cr, cooking_cr, efficiency, escape_cr,
    success_rate, view_hit_rate, JudgerError, Termination, Viewpoint,
};
use crate::planner::Goal;
use crate::task::SubtaskId;
use crate::world::{ActionKind, AgentId, World};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtaskRecord {
    pub id: SubtaskId,
    pub kind: ActionKind,
    pub score: f64,
    pub done: bool,
    /// Agent that completed it.
    pub by: Option<AgentId>,
}

/// Everything the metrics are computed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub seed: u64,
    pub goal: Goal,
    pub agents: Vec<AgentId>,
    /// Busy ticks per agent, in `agents` order, clamped to the budget.
    pub execution_ticks: Vec<u64>,
    pub tick_budget: u64,
    pub minutes_per_tick: f64,
    pub viewpoints: Vec<Viewpoint>,
    pub subtasks: Vec<SubtaskRecord>,
    pub ticks: u64,
    pub termination: Termination,
    pub world: World,
}

impl RunRecord {
    pub fn contributions(&self) -> Vec<f64> {
        self.agents
            .iter()
            .map(|a| self.subtasks.iter().filter(|s| s.done && s.by == Some(*a)).map(|s| s.score).sum())
            .collect()
    }

    pub fn minutes(&self) -> Vec<f64> {
        self.execution_ticks.iter().map(|t| *t as f64 * self.minutes_per_tick).collect()
    }
}

/// Flat metric report. Every key is always present; metrics that do not
/// apply to a run (VHR outside construction, BS and ACR with one agent)
/// are null.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scenario: String,
    pub kind: String,
    pub seed: u64,
    pub cr: f64,
    pub efficiency: Option<f64>,
    pub bs: Option<f64>,
    pub acr: Option<f64>,
    pub vhr: Option<f64>,
    pub sr: f64,
    pub execution_times: Vec<f64>,
    pub contributions: Vec<f64>,
    pub ticks: u64,
    pub termination: Termination,
}

pub fn compute_report(rec: &RunRecord) -> Result<MetricReport, JudgerError> {
    let (cr, vhr) = match &rec.goal {
        Goal::Construction { blueprint } => (
            construction_cr(blueprint, &rec.world)?,
            Some(view_hit_rate(blueprint, &rec.world, &rec.viewpoints)?),
        ),
        Goal::Cooking { .. } => {
            let flags = |cooking: bool| -> Vec<(bool, f64)> {
                rec.subtasks
                    .iter()
                    .filter(|s| matches!(s.kind, ActionKind::Craft | ActionKind::Smelt) == cooking)
                    .map(|s| (s.done, s.score))
                    .collect()
            };
            (cooking_cr(&flags(false), &flags(true))?, None)
        }
        Goal::Escape { rooms } => {
            let tallies: Vec<(u32, u32, f64)> = rooms
                .iter()
                .map(|r| {
                    let on = r
                        .conditions
                        .iter()
                        .filter(|p| rec.world.state.mechanisms.get(p).copied().unwrap_or(false))
                        .count();
                    (on as u32, r.conditions.len() as u32, r.score)
                })
                .collect();
            (escape_cr(&tallies)?, None)
        }
        Goal::ItemGathering { .. } => {
            let done = rec.subtasks.iter().filter(|s| s.done).count() as u32;
            (completion_rate(done, rec.subtasks.len() as u32)?, None)
        }
    };
    let minutes = rec.minutes();
    let contributions = rec.contributions();
    let t_max = rec.tick_budget as f64 * rec.minutes_per_tick;
    Ok(MetricReport {
        scenario: rec.scenario.clone(),
        kind: rec.goal.kind_name().to_string(),
        seed: rec.seed,
        cr,
        efficiency: efficiency(cr, &minutes).ok(),
        bs: balanced_score(&minutes, t_max).ok(),
        acr: agent_contribution_rate(&contributions).ok(),
        vhr,
        sr: success_rate(u32::from(cr >= 1.0), 1)?,
        execution_times: minutes,
        contributions,
        ticks: rec.ticks,
        termination: rec.termination,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    scenario: &'a str,
    kind: &'a str,
    seed: u64,
    cr: f64,
    efficiency: Option<f64>,
    bs: Option<f64>,
    acr: Option<f64>,
    vhr: Option<f64>,
    sr: f64,
    ticks: u64,
    termination: Termination,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One header line plus one row per report.
    pub fn to_csv(reports: &[MetricReport]) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in reports {
            w.serialize(CsvRow {
                scenario: &r.scenario,
                kind: &r.kind,
                seed: r.seed,
                cr: r.cr,
                efficiency: r.efficiency,
                bs: r.bs,
                acr: r.acr,
                vhr: r.vhr,
                sr: r.sr,
                ticks: r.ticks,
                termination: r.termination,
            })
            .expect("csv row");
        }
        String::from_utf8(w.into_inner().expect("csv flush")).expect("utf-8 csv")
    }
}
