use std::collections::{BTreeSet, HashMap, VecDeque};

use super::{Bounds, Observation, Pos, World};

/// Anything that can answer solidity queries over a bounded grid.
pub trait Terrain {
    fn bounds(&self) -> &Bounds;
    fn solid(&self, p: Pos) -> bool;
}

impl Terrain for World {
    fn bounds(&self) -> &Bounds {
        &self.config.bounds
    }

    fn solid(&self, p: Pos) -> bool {
        self.is_solid(p)
    }
}

impl Terrain for Observation {
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    // Cells outside the perception radius are assumed open.
    fn solid(&self, p: Pos) -> bool {
        p.y < self.ground_y || self.blocks.contains_key(&p) || self.closed_doors.contains(&p)
    }
}

/// An agent is two cells tall: it needs both cells open and solid footing.
pub(crate) fn walkable<T: Terrain + ?Sized>(t: &T, p: Pos) -> bool {
    t.bounds().contains(p) && t.bounds().contains(p.up()) && !t.solid(p) && !t.solid(p.up()) && t.solid(p.down())
}

const DIRS: [(i32, i32); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

fn neighbors<T: Terrain + ?Sized>(t: &T, p: Pos) -> impl Iterator<Item = Pos> + '_ {
    DIRS.iter().flat_map(move |&(dx, dz)| {
        [0, 1, -1].into_iter().filter_map(move |dy| {
            let n = p.offset(dx, dy, dz);
            if !walkable(t, n) {
                return None;
            }
            // jumping up needs head room above the start; stepping down needs
            // head room above the landing column at the start height
            let clear = match dy {
                1 => !t.solid(p.up().up()),
                -1 => !t.solid(n.up().up()),
                _ => true,
            };
            clear.then_some(n)
        })
    })
}

/// Shortest walk length from `from` to `to` (4-connected, step height 1).
pub fn find_path<T: Terrain + ?Sized>(t: &T, from: Pos, to: Pos) -> Option<usize> {
    if from == to {
        return Some(0);
    }
    if !walkable(t, to) {
        return None;
    }
    let mut dist: HashMap<Pos, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    dist.insert(from, 0);
    queue.push_back(from);
    while let Some(p) = queue.pop_front() {
        let d = dist[&p];
        for n in neighbors(t, p) {
            if dist.contains_key(&n) {
                continue;
            }
            if n == to {
                return Some(d + 1);
            }
            dist.insert(n, d + 1);
            queue.push_back(n);
        }
    }
    None
}

/// Whether an agent standing at `stand` can interact with `target`.
pub fn reach_ok(stand: Pos, target: Pos, reach: f64) -> bool {
    stand.up().distance(target) <= reach
}

/// Nearest standing cell (BFS order) within reach of `target`, skipping the
/// cells in `avoid` and any cell whose body would overlap the target.
pub fn stand_spots<T: Terrain + ?Sized>(
    t: &T,
    from: Pos,
    target: Pos,
    reach: f64,
    avoid: &BTreeSet<Pos>,
) -> Option<(Pos, usize)> {
    let ok = |p: Pos| reach_ok(p, target, reach) && p != target && p.up() != target && !avoid.contains(&p);
    let mut seen: HashMap<Pos, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    seen.insert(from, 0);
    queue.push_back(from);
    while let Some(p) = queue.pop_front() {
        let d = seen[&p];
        if ok(p) && (p == from || walkable(t, p)) {
            return Some((p, d));
        }
        for n in neighbors(t, p) {
            if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(n) {
                e.insert(d + 1);
                queue.push_back(n);
            }
        }
    }
    None
}
