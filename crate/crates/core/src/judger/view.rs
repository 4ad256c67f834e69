use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::world::Pos;

/// Axis-aligned orthographic viewpoint. `+x` looks from the positive x side
/// towards negative x.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Viewpoint {
    #[serde(rename = "+x")]
    PosX,
    #[serde(rename = "-x")]
    NegX,
    #[serde(rename = "+y")]
    PosY,
    #[serde(rename = "-y")]
    NegY,
    #[serde(rename = "+z")]
    PosZ,
    #[serde(rename = "-z")]
    NegZ,
}

pub const ALL_VIEWPOINTS: [Viewpoint; 6] =
    [Viewpoint::PosX, Viewpoint::NegX, Viewpoint::PosY, Viewpoint::NegY, Viewpoint::PosZ, Viewpoint::NegZ];

impl Viewpoint {
    /// (ray key, depth towards the viewer) for a cell.
    fn project(self, p: Pos) -> ((i32, i32), i32) {
        match self {
            Viewpoint::PosX => ((p.y, p.z), p.x),
            Viewpoint::NegX => ((p.y, p.z), -p.x),
            Viewpoint::PosY => ((p.x, p.z), p.y),
            Viewpoint::NegY => ((p.x, p.z), -p.y),
            Viewpoint::PosZ => ((p.x, p.y), p.z),
            Viewpoint::NegZ => ((p.x, p.y), -p.z),
        }
    }
}

pub(crate) fn bbox(cells: impl Iterator<Item = Pos>) -> (Pos, Pos) {
    let mut lo = Pos::new(i32::MAX, i32::MAX, i32::MAX);
    let mut hi = Pos::new(i32::MIN, i32::MIN, i32::MIN);
    for p in cells {
        lo = Pos::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Pos::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    (lo, hi)
}

pub(crate) fn inside(p: Pos, lo: Pos, hi: Pos) -> bool {
    (lo.x..=hi.x).contains(&p.x) && (lo.y..=hi.y).contains(&p.y) && (lo.z..=hi.z).contains(&p.z)
}

/// The first filled cell along every ray, as `(position, block id)`.
pub fn visible_cells(filled: &[(Pos, String)], v: Viewpoint) -> BTreeSet<(Pos, String)> {
    let mut front: BTreeMap<(i32, i32), (i32, &(Pos, String))> = BTreeMap::new();
    for cell in filled {
        let (ray, depth) = v.project(cell.0);
        match front.get(&ray) {
            Some((d, _)) if *d >= depth => {}
            _ => {
                front.insert(ray, (depth, cell));
            }
        }
    }
    front.into_values().map(|(_, c)| c.clone()).collect()
}
