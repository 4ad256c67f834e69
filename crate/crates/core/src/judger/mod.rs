//! Evaluation metrics and the end-of-run signal.

mod report;
mod view;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::BlueprintBlock;
use crate::world::World;

pub use report::{compute_report, MetricReport, RunRecord, SubtaskRecord};
pub use view::{visible_cells, Viewpoint, ALL_VIEWPOINTS};

#[derive(Debug, Error, PartialEq)]
pub enum JudgerError {
    #[error("indicator total is zero or below the achieved count")]
    ZeroIndicators,
    #[error("blueprint is empty")]
    EmptyBlueprint,
    #[error("no viewpoints given")]
    NoViewpoints,
    #[error("total execution time is zero")]
    ZeroTime,
    #[error("time cap equals the shortest execution time")]
    DegenerateDenominator,
    #[error("at least two agents are needed")]
    TooFewAgents,
    #[error("recipe has no ingredients or actions")]
    EmptyRecipe,
    #[error("total contribution is zero")]
    ZeroTotal,
    #[error("no rooms")]
    EmptyRooms,
    #[error("zero attempts")]
    ZeroAttempts,
    #[error("invalid input: {0}")]
    Invalid(&'static str),
}

pub type Result<T> = std::result::Result<T, JudgerError>;

pub fn completion_rate(achieved: u32, total: u32) -> Result<f64> {
    if total == 0 || achieved > total {
        return Err(JudgerError::ZeroIndicators);
    }
    Ok(f64::from(achieved) / f64::from(total))
}

/// Share of blueprint blocks present with the right type (and facing, for
/// orientable kinds).
pub fn construction_cr(blueprint: &[BlueprintBlock], world: &World) -> Result<f64> {
    if blueprint.is_empty() {
        return Err(JudgerError::EmptyBlueprint);
    }
    let correct = blueprint
        .iter()
        .filter(|b| {
            world.block_at(b.pos).is_some_and(|w| {
                w.id == b.block && (!world.config.orientable.contains(&b.block) || w.facing == b.facing)
            })
        })
        .count();
    Ok(correct as f64 / blueprint.len() as f64)
}

/// Mean IoU of the visible surfaces of blueprint and world, one view per
/// viewpoint, restricted to the blueprint's bounding box.
pub fn view_hit_rate(blueprint: &[BlueprintBlock], world: &World, viewpoints: &[Viewpoint]) -> Result<f64> {
    if viewpoints.is_empty() {
        return Err(JudgerError::NoViewpoints);
    }
    if blueprint.is_empty() {
        return Err(JudgerError::EmptyBlueprint);
    }
    let (lo, hi) = view::bbox(blueprint.iter().map(|b| b.pos));
    let want: Vec<_> = blueprint.iter().map(|b| (b.pos, b.block.clone())).collect();
    let have: Vec<_> = world
        .state
        .blocks
        .iter()
        .filter(|(p, _)| view::inside(**p, lo, hi))
        .map(|(p, b)| (*p, b.id.clone()))
        .collect();
    let mut total = 0.0;
    for v in viewpoints {
        let b = visible_cells(&want, *v);
        let p = visible_cells(&have, *v);
        let union = b.union(&p).count();
        total += if union == 0 { 1.0 } else { b.intersection(&p).count() as f64 / union as f64 };
    }
    Ok(total / viewpoints.len() as f64)
}

/// Completion per minute of summed agent time.
pub fn efficiency(cr: f64, minutes: &[f64]) -> Result<f64> {
    let total: f64 = minutes.iter().sum();
    if total <= 0.0 {
        return Err(JudgerError::ZeroTime);
    }
    Ok(cr / total)
}

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// `1 − std(u)` with `u_j = (t_j − min t) / (T_max − min t)`.
pub fn balanced_score(times: &[f64], t_max: f64) -> Result<f64> {
    if times.len() < 2 {
        return Err(JudgerError::TooFewAgents);
    }
    if times.iter().any(|t| *t < 0.0 || *t > t_max) {
        return Err(JudgerError::Invalid("execution time outside [0, T_max]"));
    }
    let min = times.iter().copied().fold(f64::INFINITY, f64::min);
    if t_max == min {
        return Err(JudgerError::DegenerateDenominator);
    }
    let u: Vec<f64> = times.iter().map(|t| (t - min) / (t_max - min)).collect();
    Ok(1.0 - population_std(&u))
}

/// Score-weighted share of ingredients and cooking actions achieved.
/// Each entry is `(achieved, score)`.
pub fn cooking_cr(ingredients: &[(bool, f64)], actions: &[(bool, f64)]) -> Result<f64> {
    if ingredients.is_empty() && actions.is_empty() {
        return Err(JudgerError::EmptyRecipe);
    }
    let all = ingredients.iter().chain(actions);
    if all.clone().any(|(_, s)| *s <= 0.0) {
        return Err(JudgerError::Invalid("scores must be positive"));
    }
    let got: f64 = all.clone().filter(|(k, _)| *k).map(|(_, s)| s).sum();
    let total: f64 = all.map(|(_, s)| s).sum();
    Ok(got / total)
}

/// Largest possible population deviation of `n` non-negative values summing
/// to `total`: one agent holds everything.
pub fn sigma_max(total: f64, n: usize) -> f64 {
    let n = n as f64;
    total * (n - 1.0).sqrt() / n
}

/// How evenly work was shared: 1 for equal contributions, 0 when one agent
/// did everything.
pub fn agent_contribution_rate(contributions: &[f64]) -> Result<f64> {
    if contributions.len() < 2 {
        return Err(JudgerError::TooFewAgents);
    }
    let total: f64 = contributions.iter().sum();
    if total <= 0.0 {
        return Err(JudgerError::ZeroTotal);
    }
    let s = population_std(contributions);
    Ok((1.0 - s / sigma_max(total, contributions.len())).clamp(0.0, 1.0))
}

/// Rooms as `(conditions met, conditions total, score)`.
pub fn escape_cr(rooms: &[(u32, u32, f64)]) -> Result<f64> {
    if rooms.is_empty() {
        return Err(JudgerError::EmptyRooms);
    }
    if rooms.iter().any(|(c, a, s)| *a == 0 || c > a || *s <= 0.0) {
        return Err(JudgerError::Invalid("room tallies"));
    }
    let num: f64 = rooms.iter().map(|(c, a, s)| f64::from(*c) / f64::from(*a) * s).sum();
    let den: f64 = rooms.iter().map(|(_, _, s)| s).sum();
    Ok(num / den)
}

pub fn success_rate(successes: u32, attempts: u32) -> Result<f64> {
    if attempts == 0 {
        return Err(JudgerError::ZeroAttempts);
    }
    if successes > attempts {
        return Err(JudgerError::Invalid("more successes than attempts"));
    }
    Ok(f64::from(successes) / f64::from(attempts))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    AllDone,
    Timeout,
    Blocked,
}

/// Engine state the end signal looks at.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct RunState {
    pub all_done: bool,
    pub any_open_path: bool,
    pub tick: u64,
    pub tick_budget: u64,
}

/// Why the run should stop, if it should.
pub fn termination(s: &RunState) -> Option<Termination> {
    if s.all_done {
        Some(Termination::AllDone)
    } else if s.tick > s.tick_budget {
        Some(Termination::Timeout)
    } else if !s.any_open_path {
        Some(Termination::Blocked)
    } else {
        None
    }
}

pub fn end_signal(s: &RunState) -> bool {
    termination(s).is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Block, Bounds, Pos, WorldConfig, WorldState};

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-9, "{a} != {b}");
    }

    fn world_with(blocks: &[(Pos, &str)]) -> World {
        let mut s = WorldState::default();
        for (p, id) in blocks {
            s.blocks.insert(*p, Block::plain(*id));
        }
        World::new(WorldConfig::new(Bounds { min: Pos::new(-5, 60, -5), max: Pos::new(5, 70, 5) }, 64), s).unwrap()
    }

    fn bp(x: i32, id: &str) -> BlueprintBlock {
        BlueprintBlock { pos: Pos::new(x, 64, 0), block: id.into(), facing: None }
    }

    #[test]
    fn completion_rate_examples() {
        close(completion_rate(10, 10).unwrap(), 1.0);
        close(completion_rate(0, 10).unwrap(), 0.0);
        close(completion_rate(3, 10).unwrap(), 0.3);
        assert_eq!(completion_rate(0, 0), Err(JudgerError::ZeroIndicators));
    }

    #[test]
    fn construction_examples() {
        let plan: Vec<_> = (0..4).map(|x| bp(x, "stone")).collect();
        let exact = world_with(&[(Pos::new(0, 64, 0), "stone"), (Pos::new(1, 64, 0), "stone"), (Pos::new(2, 64, 0), "stone"), (Pos::new(3, 64, 0), "stone")]);
        close(construction_cr(&plan, &exact).unwrap(), 1.0);
        let one_wrong = world_with(&[(Pos::new(0, 64, 0), "stone"), (Pos::new(1, 64, 0), "stone"), (Pos::new(2, 64, 0), "stone"), (Pos::new(3, 64, 0), "dirt")]);
        close(construction_cr(&plan, &one_wrong).unwrap(), 0.75);
        close(construction_cr(&plan, &world_with(&[])).unwrap(), 0.0);
        assert_eq!(construction_cr(&[], &exact), Err(JudgerError::EmptyBlueprint));
    }

    #[test]
    fn vhr_examples() {
        let plan = vec![bp(0, "stone"), bp(1, "stone")];
        let exact = world_with(&[(Pos::new(0, 64, 0), "stone"), (Pos::new(1, 64, 0), "stone")]);
        close(view_hit_rate(&plan, &exact, &ALL_VIEWPOINTS).unwrap(), 1.0);
        close(view_hit_rate(&plan, &world_with(&[]), &ALL_VIEWPOINTS).unwrap(), 0.0);
        // one of two blocks along x: the x views see the present block in
        // one case and miss in the other; the other four views see half
        let half = world_with(&[(Pos::new(0, 64, 0), "stone")]);
        let expected = (1.0 + 0.0 + 4.0 * 0.5) / 6.0;
        close(view_hit_rate(&plan, &half, &ALL_VIEWPOINTS).unwrap(), expected);
        assert_eq!(view_hit_rate(&plan, &exact, &[]), Err(JudgerError::NoViewpoints));
    }

    #[test]
    fn efficiency_examples() {
        close(efficiency(1.0, &[10.0]).unwrap(), 0.10);
        close(efficiency(0.0, &[10.0]).unwrap(), 0.0);
        close(efficiency(0.8, &[3.0, 5.0]).unwrap() / 2.0, efficiency(0.8, &[6.0, 10.0]).unwrap());
        assert_eq!(efficiency(1.0, &[0.0]), Err(JudgerError::ZeroTime));
    }

    #[test]
    fn balanced_score_examples() {
        close(balanced_score(&[5.0, 5.0, 5.0], 10.0).unwrap(), 1.0);
        close(balanced_score(&[0.0, 10.0], 10.0).unwrap(), 0.5);
        assert_eq!(balanced_score(&[10.0, 10.0], 10.0), Err(JudgerError::DegenerateDenominator));
    }

    #[test]
    fn cooking_examples() {
        let ones = [(true, 1.0); 3];
        close(cooking_cr(&ones, &[(true, 1.0)]).unwrap(), 1.0);
        close(cooking_cr(&[(false, 1.0); 3], &[(false, 1.0)]).unwrap(), 0.0);
        close(cooking_cr(&[(true, 1.0), (true, 1.0), (false, 1.0)], &[(false, 1.0)]).unwrap(), 0.5);
        assert_eq!(cooking_cr(&[], &[]), Err(JudgerError::EmptyRecipe));
    }

    #[test]
    fn contribution_examples() {
        close(agent_contribution_rate(&[2.0, 2.0, 2.0]).unwrap(), 1.0);
        close(agent_contribution_rate(&[6.0, 0.0, 0.0]).unwrap(), 0.0);
        close(agent_contribution_rate(&[3.0, 1.0]).unwrap(), 0.5);
        assert_eq!(agent_contribution_rate(&[0.0, 0.0]), Err(JudgerError::ZeroTotal));
    }

    #[test]
    fn escape_examples() {
        close(escape_cr(&[(2, 2, 1.0), (1, 1, 1.0)]).unwrap(), 1.0);
        close(escape_cr(&[(1, 2, 1.0)]).unwrap(), 0.5);
        close(escape_cr(&[(1, 1, 1.0), (0, 1, 3.0)]).unwrap(), 0.25);
        assert_eq!(escape_cr(&[]), Err(JudgerError::EmptyRooms));
    }

    #[test]
    fn success_examples() {
        close(success_rate(5, 5).unwrap(), 1.0);
        close(success_rate(0, 5).unwrap(), 0.0);
        close(success_rate(7, 10).unwrap(), 0.7);
        assert_eq!(success_rate(0, 0), Err(JudgerError::ZeroAttempts));
    }

    #[test]
    fn end_signal_examples() {
        let s = RunState { all_done: true, any_open_path: false, tick: 3, tick_budget: 10 };
        assert!(end_signal(&s));
        let s = RunState { all_done: false, any_open_path: true, tick: 11, tick_budget: 10 };
        assert_eq!(termination(&s), Some(Termination::Timeout));
        let s = RunState { all_done: false, any_open_path: true, tick: 5, tick_budget: 10 };
        assert!(!end_signal(&s));
        let s = RunState { all_done: false, any_open_path: false, tick: 5, tick_budget: 10 };
        assert_eq!(termination(&s), Some(Termination::Blocked));
    }
}
