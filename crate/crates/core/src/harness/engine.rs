use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::trace::{record_from_trace, write_trace, PlanEntry, TraceEvent};
use super::{HarnessError, PolicyMode, Result, RunOptions, Scenario, Toggles};
use crate::agent::{
    move_aside, AgentMemory, Policy, PolicyContext, RemotePolicy, RemoteSummarizer, ScriptedPolicy, StepOutcome,
    Summarizer,
};
use crate::judger::{compute_report, termination, MetricReport, RunRecord, RunState, Termination};
use crate::planner::{annotate_pruned, build_initial_graph, refine_graph, AteResult, DecomposeOptions, EnvSummary, RefineOptions};
use crate::reasoner::{
    pick_spurious_edges, BiasedReasoner, ChatClient, ChatConfig, DeterministicReasoner, PromptTemplates, Reasoner,
    RemoteReasoner,
};
use crate::scheduler::{AssignPolicy, Directive, Issue, Outcome, Scheduler, SchedulerConfig, SchedulerError};
use crate::task::{Postcondition, SubtaskState, TaskGraph};
use crate::world::{AgentId, Pos, World};

/// Samples per dependency query for a chat-model reasoner.
const REMOTE_SAMPLES: u32 = 3;
/// Control steps (assign, issue, complete) an agent may take before acting.
const MAX_CONTROL_STEPS: usize = 8;

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub toggles: Toggles,
    /// Initial graph with pruned edges tagged.
    pub g_init: TaskGraph,
    pub g_refined: TaskGraph,
    pub ate_ledger: Vec<AteResult>,
    /// Edges the reasoner asserted that would have closed a cycle.
    pub rejected: Vec<(u32, u32)>,
    pub trace: Vec<TraceEvent>,
    pub record: RunRecord,
    pub report: MetricReport,
}

impl RunOutput {
    pub fn termination(&self) -> Termination {
        self.record.termination
    }

    /// 0 when the run finished or ran out of time, 2 when it got blocked.
    pub fn exit_code(&self) -> i32 {
        match self.termination() {
            Termination::AllDone | Termination::Timeout => 0,
            Termination::Blocked => 2,
        }
    }

    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        let io = |path: &Path, source| HarnessError::Io { path: path.to_path_buf(), source };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let files: [(&str, String); 7] = [
            ("scenario.json", self.scenario.to_json()),
            ("g_init.json", pretty(&self.g_init.to_doc())),
            ("g_refined.json", pretty(&self.g_refined.to_doc())),
            ("ate_ledger.json", pretty(&self.ate_ledger)),
            ("trace.ndjson", write_trace(&self.trace)),
            ("metrics.json", self.report.to_json()),
            ("metrics.csv", MetricReport::to_csv(std::slice::from_ref(&self.report))),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| io(&path, e))?;
        }
        Ok(())
    }
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("artifact serializes")
}

struct Plan {
    g_init: TaskGraph,
    g_refined: TaskGraph,
    ledger: Vec<AteResult>,
    rejected: Vec<(u32, u32)>,
    used: TaskGraph,
}

fn chat_config(opts: &RunOptions) -> Result<ChatConfig> {
    if let Some(endpoint) = &opts.reasoner_endpoint {
        let mut cfg = ChatConfig::from_env().unwrap_or_else(|| ChatConfig::new(endpoint.clone()));
        cfg.endpoint = endpoint.clone();
        return Ok(cfg);
    }
    ChatConfig::from_env().ok_or_else(|| super::invalid("remote policy needs a reasoner endpoint"))
}

fn plan(sc: &Scenario, world: &World, toggles: Toggles, opts: &RunOptions) -> Result<Plan> {
    let rules = sc.rule_set()?;
    let base: Box<dyn Reasoner> = match sc.policy {
        PolicyMode::Scripted => Box::new(DeterministicReasoner),
        PolicyMode::Remote => Box::new(RemoteReasoner::new(
            ChatClient::new(chat_config(opts)?),
            PromptTemplates::default(),
            REMOTE_SAMPLES,
        )),
    };
    let env = EnvSummary::from_world(world);
    let subtasks = base.decompose(&sc.task, &env, &DecomposeOptions { batch_size: sc.planner.batch_size })?;
    let reasoner: Box<dyn Reasoner> = if sc.planner.hallucinated_edges > 0 || !sc.planner.spurious_edges.is_empty() {
        let (truth, _) = build_initial_graph(&subtasks, &rules, &*base)?;
        let mut spurious = pick_spurious_edges(&truth, sc.planner.hallucinated_edges, sc.seed);
        spurious.extend(sc.planner.spurious_edges.iter().copied());
        Box::new(BiasedReasoner::new(base, spurious))
    } else {
        base
    };
    let (g_init, rejected) = build_initial_graph(&subtasks, &rules, &*reasoner)?;
    let refine = RefineOptions {
        epsilon: sc.planner.epsilon.unwrap_or_else(|| reasoner.default_epsilon()),
        strict: sc.planner.strict,
        threads: sc.planner.threads.max(1),
    };
    let (g_refined, ledger) = refine_graph(&g_init, &rules, &*reasoner, &refine)?;
    let used = if !toggles.graph {
        g_refined.without_edges()
    } else if !toggles.causal {
        g_init.clone()
    } else {
        g_refined.clone()
    };
    Ok(Plan { g_init: annotate_pruned(&g_init, &ledger), g_refined, ledger, rejected, used })
}

/// Plans and executes a scenario.
pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<RunOutput> {
    let sc = scenario.with_overrides(opts);
    sc.validate()?;
    let toggles = opts.toggles.normalized();
    let world = sc.build_world()?;
    let plan = plan(&sc, &world, toggles, opts)?;
    let (policy, summarizer): (Box<dyn Policy>, Option<Box<dyn Summarizer>>) = match sc.policy {
        PolicyMode::Scripted => (Box::new(ScriptedPolicy), None),
        PolicyMode::Remote => {
            let cfg = chat_config(opts)?;
            (
                Box::new(RemotePolicy::new(ChatClient::new(cfg.clone()), PromptTemplates::default())),
                Some(Box::new(RemoteSummarizer::new(ChatClient::new(cfg), PromptTemplates::default()))),
            )
        }
    };
    let sched_cfg = SchedulerConfig {
        retry_cap: sc.scheduler.retry_cap,
        path_cap: sc.scheduler.path_cap,
        policy: if toggles.busy_rate { AssignPolicy::BusyRate } else { AssignPolicy::Random { seed: sc.seed } },
    };
    let scheduler = Scheduler::new(plan.used.clone(), sched_cfg)?;
    let mut engine = Engine::new(&sc, world, scheduler, &*policy, summarizer.as_deref());
    engine.events.push(TraceEvent::Start { scenario: sc.clone(), seed: sc.seed, toggles });
    engine.events.push(TraceEvent::Plan {
        subtasks: plan
            .used
            .nodes()
            .map(|n| PlanEntry { id: n.id, kind: n.action.kind, score: n.score, description: n.description.clone() })
            .collect(),
        edges: plan.used.edge_set().into_iter().collect(),
    });
    engine.run()?;
    let Engine { events, world, .. } = engine;
    let record = record_from_trace(&events, world)?;
    let report = compute_report(&record)?;
    let out = RunOutput {
        scenario: sc,
        toggles,
        g_init: plan.g_init,
        g_refined: plan.g_refined,
        ate_ledger: plan.ledger,
        rejected: plan.rejected,
        trace: events,
        record,
        report,
    };
    if let Some(dir) = &opts.out_dir {
        out.write_artifacts(dir)?;
    }
    Ok(out)
}

struct Slot {
    memory: AgentMemory,
    busy_until: u64,
    assigned: bool,
}

struct Engine<'a> {
    sc: &'a Scenario,
    world: World,
    sched: Scheduler,
    policy: &'a dyn Policy,
    summarizer: Option<&'a dyn Summarizer>,
    slots: BTreeMap<AgentId, Slot>,
    events: Vec<TraceEvent>,
}

impl<'a> Engine<'a> {
    fn new(
        sc: &'a Scenario,
        world: World,
        sched: Scheduler,
        policy: &'a dyn Policy,
        summarizer: Option<&'a dyn Summarizer>,
    ) -> Self {
        let slots = world
            .state
            .agents
            .keys()
            .map(|&id| (id, Slot { memory: AgentMemory::new(id), busy_until: 0, assigned: false }))
            .collect();
        Self { sc, world, sched, policy, summarizer, slots, events: Vec::new() }
    }

    fn run(&mut self) -> Result<()> {
        let mut tick = 0;
        let reason = loop {
            let state = RunState {
                all_done: self.sched.all_done(),
                any_open_path: self.sched.has_open_path(),
                tick,
                tick_budget: self.sc.tick_budget,
            };
            if let Some(reason) = termination(&state) {
                break reason;
            }
            self.world.advance_clock_to(tick);
            let ids: Vec<AgentId> = self.slots.keys().copied().collect();
            for id in ids {
                if self.slots[&id].busy_until <= tick {
                    self.turn(id, tick)?;
                }
            }
            tick += 1;
        };
        self.world.advance_clock_to(tick);
        let end = tick.min(self.sc.tick_budget);
        for (&agent, slot) in &mut self.slots {
            if slot.assigned {
                slot.assigned = false;
                self.events.push(TraceEvent::Release { tick: end, agent });
            }
        }
        self.events.push(TraceEvent::End { tick, reason });
        Ok(())
    }

    /// Cells blueprint subtasks still have to fill.
    fn reserved(&self) -> BTreeSet<Pos> {
        self.sched
            .graph()
            .nodes()
            .filter(|n| n.state != SubtaskState::Done)
            .filter_map(|n| match &n.postcondition {
                Postcondition::BlockPresent { pos, .. } => Some(*pos),
                _ => None,
            })
            .collect()
    }

    fn slot(&mut self, id: AgentId) -> &mut Slot {
        self.slots.get_mut(&id).expect("known agent")
    }

    fn turn(&mut self, id: AgentId, tick: u64) -> Result<()> {
        for _ in 0..MAX_CONTROL_STEPS {
            if self.slots[&id].memory.current_subtask.is_none() {
                if !self.slots[&id].assigned {
                    match self.sched.assign(id) {
                        Ok(path) => {
                            self.slot(id).assigned = true;
                            self.events.push(TraceEvent::Assign { tick, agent: id, path });
                        }
                        Err(SchedulerError::NoOpenPath) => return self.idle(id, tick),
                        Err(e) => return Err(e.into()),
                    }
                }
                match self.sched.issue(id)? {
                    Issue::Ready(sid) => {
                        let node = self.sched.graph().node(sid).expect("issued subtask exists").clone();
                        self.slot(id).memory.take(node);
                        self.events.push(TraceEvent::Issue { tick, agent: id, subtask: sid });
                    }
                    Issue::Wait => return self.idle(id, tick),
                    Issue::Reassign => {
                        self.slot(id).assigned = false;
                        self.events.push(TraceEvent::Release { tick, agent: id });
                        continue;
                    }
                }
            }
            let obs = self.world.observe(id, self.sc.metrics.observe_radius)?;
            let reserved = self.reserved();
            let ctx = PolicyContext { config: &self.world.config, reserved: &reserved };
            let policy = self.policy;
            let step = self.slots.get_mut(&id).expect("known agent").memory.step(&obs, policy, &ctx);
            match step? {
                StepOutcome::Complete => self.finish(id, tick, Outcome::Done)?,
                StepOutcome::Stuck => {
                    self.finish(id, tick, Outcome::Failed)?;
                    self.slot(id).busy_until = tick + 1;
                    return Ok(());
                }
                StepOutcome::Act(intent) => {
                    let result = self.world.apply(intent.actor, &intent.action);
                    let subtask = self.slots[&id].memory.subtask_id();
                    self.events.push(TraceEvent::Action {
                        tick,
                        actor: intent.actor,
                        requested_by: intent.on_behalf_of,
                        subtask,
                        action: intent.action.clone(),
                        result: result.clone(),
                    });
                    let cost = result.cost.max(1);
                    let after = self.world.observe(id, self.sc.metrics.observe_radius)?;
                    let slot = self.slot(id);
                    slot.memory.record(intent, result);
                    slot.memory.reflect(&after);
                    slot.busy_until = tick + cost;
                    return Ok(());
                }
            }
        }
        Ok(())
    }

    /// Nothing to work on: step off any cell the team still has to fill.
    fn idle(&mut self, id: AgentId, tick: u64) -> Result<()> {
        let obs = self.world.observe(id, self.sc.metrics.observe_radius)?;
        let reserved = self.reserved();
        let ctx = PolicyContext { config: &self.world.config, reserved: &reserved };
        if let Some(action) = move_aside(&obs, &ctx) {
            let result = self.world.apply(id, &action);
            let cost = result.cost.max(1);
            self.events.push(TraceEvent::Action { tick, actor: id, requested_by: id, subtask: None, action, result });
            self.slot(id).busy_until = tick + cost;
        }
        Ok(())
    }

    fn finish(&mut self, id: AgentId, tick: u64, outcome: Outcome) -> Result<()> {
        let sid = self.slots[&id].memory.subtask_id().expect("finishing a held subtask");
        let score = self.sched.graph().node(sid).map_or(0.0, |n| n.score);
        let directive = self.sched.advance(id, outcome)?;
        self.events.push(TraceEvent::Outcome { tick, agent: id, subtask: sid, outcome, score });
        let summarizer = self.summarizer;
        let slot = self.slot(id);
        match summarizer {
            Some(s) => {
                slot.memory.summarize_with(s);
            }
            None => {
                slot.memory.summarize();
            }
        }
        slot.memory.drop_subtask();
        if matches!(directive, Directive::Reassign | Directive::AllDone) {
            slot.assigned = false;
            self.events.push(TraceEvent::Release { tick, agent: id });
        }
        Ok(())
    }
}
