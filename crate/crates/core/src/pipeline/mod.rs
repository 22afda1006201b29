//! Data preparation: LiDAR-tracker frame streams to filtered per-agent
//! tracks, joint `T × 4k` arrays and combinatorial scenario catalogs, plus
//! the trajectory interchange format and the synthetic demonstration
//! generator.

mod catalog;
mod frames;
mod interchange;
mod synth;
mod tracks;

pub use catalog::{
    classify_direction, combinatorial_scenarios, group_by_direction, Category, CatalogEntry,
    Direction, ScenarioCatalog, DEFAULT_CATEGORIES,
};
pub use frames::{parse_frames, write_frames, ObjectClass, RawFrame, RawFrameObject};
pub use interchange::{read_demos, write_demos, DemoHeader, DemoSet};
pub use synth::{preset, synth_generate, PRESETS};
pub use tracks::{
    assemble_joint, filter_tracks, tracks_from_frames, Alignment, PreprocessConfig, Track,
};

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Rejects objects whose key set differs from `expected`, listing every
/// unknown and missing key.
pub(crate) fn check_keys(
    obj: &serde_json::Map<String, serde_json::Value>,
    expected: &[&str],
    location: &str,
) -> Result<()> {
    let allowed: BTreeSet<&str> = expected.iter().copied().collect();
    let unknown: Vec<&str> = obj
        .keys()
        .map(String::as_str)
        .filter(|k| !allowed.contains(k))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::format(location, format!("unknown keys: {}", unknown.join(", "))));
    }
    let missing: Vec<&str> = expected
        .iter()
        .copied()
        .filter(|k| !obj.contains_key(*k))
        .collect();
    if !missing.is_empty() {
        return Err(Error::format(location, format!("missing keys: {}", missing.join(", "))));
    }
    Ok(())
}
