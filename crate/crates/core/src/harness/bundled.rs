//! Scenarios shipped with the crate.

use super::{Result, Scenario};

/// (name, JSON text) for every bundled scenario.
pub const BUNDLED: [(&str, &str); 5] = [
    ("tower", include_str!("../../../../scenarios/tower.json")),
    ("cooking", include_str!("../../../../scenarios/cooking.json")),
    ("escape", include_str!("../../../../scenarios/escape.json")),
    ("gathering", include_str!("../../../../scenarios/gathering.json")),
    ("tower_ablation", include_str!("../../../../scenarios/tower_ablation.json")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

/// Parses and validates a bundled scenario; `None` for an unknown name.
pub fn get(name: &str) -> Option<Result<Scenario>> {
    let (_, text) = BUNDLED.iter().find(|(n, _)| *n == name)?;
    Some(Scenario::from_json(text).and_then(|s| s.validate().map(|()| s)))
}
