use std::collections::BTreeMap;

use causeway::judger::Viewpoint;
use causeway::planner::BlueprintBlock;
use causeway::world::{Block, Bounds, WorldState};
use causeway::{Pos, World, WorldConfig};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Pixel = Option<(Pos, String)>;

/// Renders one orthographic view of `cells` inside the box `lo..=hi` by
/// marching every ray from the viewer's side until it hits a filled cell.
pub fn render(cells: &BTreeMap<Pos, String>, lo: Pos, hi: Pos, v: Viewpoint) -> Vec<Pixel> {
    // (axis the ray travels along, whether the viewer sits on the high side)
    let (axis, from_high) = match v {
        Viewpoint::PosX => (0, true),
        Viewpoint::NegX => (0, false),
        Viewpoint::PosY => (1, true),
        Viewpoint::NegY => (1, false),
        Viewpoint::PosZ => (2, true),
        Viewpoint::NegZ => (2, false),
    };
    let get = |p: Pos, a: usize| [p.x, p.y, p.z][a];
    let (u, w) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut image = Vec::new();
    for a in get(lo, u)..=get(hi, u) {
        for b in get(lo, w)..=get(hi, w) {
            let depths: Vec<i32> = if from_high {
                (get(lo, axis)..=get(hi, axis)).rev().collect()
            } else {
                (get(lo, axis)..=get(hi, axis)).collect()
            };
            let mut hit = None;
            for d in depths {
                let mut c = [0; 3];
                c[axis] = d;
                c[u] = a;
                c[w] = b;
                let p = Pos::new(c[0], c[1], c[2]);
                if let Some(id) = cells.get(&p) {
                    hit = Some((p, id.clone()));
                    break;
                }
            }
            image.push(hit);
        }
    }
    image
}

fn iou(want: &[Pixel], have: &[Pixel]) -> f64 {
    let lit = |img: &[Pixel]| img.iter().filter(|p| p.is_some()).count();
    let both = want.iter().zip(have).filter(|(a, b)| a.is_some() && a == b).count();
    let union = lit(want) + lit(have) - both;
    if union == 0 {
        1.0
    } else {
        both as f64 / union as f64
    }
}

/// Mean IoU over the given views, with the world clipped to the
/// blueprint's bounding box.
pub fn oracle_vhr(blueprint: &[BlueprintBlock], world: &BTreeMap<Pos, String>, views: &[Viewpoint]) -> f64 {
    let lo = Pos::new(
        blueprint.iter().map(|b| b.pos.x).min().unwrap(),
        blueprint.iter().map(|b| b.pos.y).min().unwrap(),
        blueprint.iter().map(|b| b.pos.z).min().unwrap(),
    );
    let hi = Pos::new(
        blueprint.iter().map(|b| b.pos.x).max().unwrap(),
        blueprint.iter().map(|b| b.pos.y).max().unwrap(),
        blueprint.iter().map(|b| b.pos.z).max().unwrap(),
    );
    let want: BTreeMap<Pos, String> = blueprint.iter().map(|b| (b.pos, b.block.clone())).collect();
    views.iter().map(|v| iou(&render(&want, lo, hi, *v), &render(world, lo, hi, *v))).sum::<f64>() / views.len() as f64
}

pub fn world_of(cells: &BTreeMap<Pos, String>) -> World {
    let bounds = Bounds { min: Pos::new(-20, 0, -20), max: Pos::new(20, 40, 20) };
    let state = WorldState {
        blocks: cells.iter().map(|(p, id)| (*p, Block::plain(id.clone()))).collect(),
        ..WorldState::default()
    };
    World::new(WorldConfig::new(bounds, 0), state).unwrap()
}

pub fn block(pos: Pos, id: &str) -> BlueprintBlock {
    BlueprintBlock { pos, block: id.to_string(), facing: None }
}

/// A random blueprint inside a 5x5x5 box and a noisy attempt at building
/// it: some blocks missing or of the wrong kind, some strays, a few of them
/// outside the box.
pub fn random_build(seed: u64) -> (Vec<BlueprintBlock>, BTreeMap<Pos, String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = ["stone", "dirt", "glass"];
    let fill = rng.random_range(0.15..0.6);
    let mut blueprint = Vec::new();
    for x in 0..5 {
        for y in 1..6 {
            for z in 0..5 {
                if rng.random_bool(fill) {
                    blueprint.push(block(Pos::new(x, y, z), kinds.choose(&mut rng).unwrap()));
                }
            }
        }
    }
    if blueprint.is_empty() {
        blueprint.push(block(Pos::new(2, 3, 2), "stone"));
    }
    let mut built = BTreeMap::new();
    for b in &blueprint {
        match rng.random_range(0..10) {
            0 | 1 => {}
            2 => {
                built.insert(b.pos, kinds.choose(&mut rng).unwrap().to_string());
            }
            _ => {
                built.insert(b.pos, b.block.clone());
            }
        }
    }
    for _ in 0..rng.random_range(0..12) {
        let p = Pos::new(rng.random_range(-1..6), rng.random_range(0..7), rng.random_range(-1..6));
        built.entry(p).or_insert_with(|| kinds.choose(&mut rng).unwrap().to_string());
    }
    (blueprint, built)
}
