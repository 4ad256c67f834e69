//! Multi-agent task planning over a voxel crafting world.
//!
//! A goal is split into subtasks, dependencies between them are derived from
//! game rules and checked by counterfactual intervention, and the resulting
//! graph is executed by several agents that pick the least busy path.

pub mod agent;
pub mod harness;
pub mod judger;
pub mod planner;
pub mod reasoner;
pub mod rules;
pub mod scheduler;
pub mod task;
pub mod world;

pub use harness::{run, HarnessError, RunOptions, RunOutput, Scenario, Toggles};
pub use judger::{MetricReport, RunRecord, Termination};
pub use planner::{AteResult, Goal};
pub use rules::{builtin_rules, Rule, RuleSet};
pub use scheduler::{Scheduler, SchedulerConfig};
pub use task::{Subtask, SubtaskId, TaskGraph};
pub use world::{Action, ActionResult, AgentId, Pos, World, WorldConfig};
