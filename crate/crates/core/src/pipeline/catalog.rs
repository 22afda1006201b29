use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tracks::{assemble_joint, Alignment, Track};
use crate::error::{Error, Result};
use crate::traj::{from_dataset_row, Trajectory};

pub const DEFAULT_CATEGORIES: [&str; 4] = ["W-E-S", "W-E-N", "S-N-W", "S-N-E"];

/// Compass side a pedestrian enters from: `W` tracks walk west to east.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    E,
    W,
    N,
    S,
}

impl Direction {
    fn from_char(c: char) -> Option<Self> {
        Some(match c {
            'E' => Self::E,
            'W' => Self::W,
            'N' => Self::N,
            'S' => Self::S,
            _ => return None,
        })
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Classifies a track by the side it enters from, using its net
/// displacement along the dominant axis.
pub fn classify_direction(track: &Track) -> Option<Direction> {
    let (first, last) = (track.states.first()?, track.states.last()?);
    let dx = last.px - first.px;
    let dy = last.py - first.py;
    if dx == 0.0 && dy == 0.0 {
        return None;
    }
    Some(if dx.abs() >= dy.abs() {
        if dx > 0.0 {
            Direction::W
        } else {
            Direction::E
        }
    } else if dy > 0.0 {
        Direction::S
    } else {
        Direction::N
    })
}

pub fn group_by_direction(tracks: &[Track]) -> BTreeMap<Direction, Vec<Track>> {
    let mut groups: BTreeMap<Direction, Vec<Track>> = BTreeMap::new();
    for t in tracks {
        if let Some(d) = classify_direction(t) {
            groups.entry(d).or_default().push(t.clone());
        }
    }
    groups
}

/// An ordered tuple of entry directions, written `W-E-S`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Category(pub Vec<Direction>);

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let dirs = s
            .split('-')
            .map(|p| {
                let mut chars = p.chars();
                match (chars.next().and_then(Direction::from_char), chars.next()) {
                    (Some(d), None) => Ok(d),
                    _ => Err(Error::validation("category", format!("bad direction `{p}` in `{s}`"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Category(dirs))
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.0.iter().map(Direction::to_string).collect();
        f.write_str(&names.join("-"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub category: String,
    /// Track labels in agent order.
    pub tracks: Vec<String>,
    /// `rows × 4k` dataset array.
    pub rows: Vec<Vec<f64>>,
}

impl CatalogEntry {
    pub fn trajectory(&self, dt: f64) -> Result<Trajectory> {
        let states = self
            .rows
            .iter()
            .map(|r| from_dataset_row(r))
            .collect::<Result<Vec<_>>>()?;
        Trajectory::from_states(states, dt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCatalog {
    pub categories: Vec<String>,
    pub entries: Vec<CatalogEntry>,
}

impl ScenarioCatalog {
    pub fn by_category<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a CatalogEntry> {
        self.entries.iter().filter(move |e| e.category == name)
    }
}

fn cross_product(n: usize, arity: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..arity {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..n).map(move |j| {
                    let mut p = prefix.clone();
                    p.push(j);
                    p
                })
            })
            .collect();
    }
    out
}

/// Crosses the first `n` tracks of each direction named by a category,
/// producing `n^arity` scenes per category with `rows` steps each. Tracks
/// come from different times, so they are aligned on their own first samples.
pub fn combinatorial_scenarios(
    groups: &BTreeMap<Direction, Vec<Track>>,
    categories: &[Category],
    n: usize,
    rows: usize,
) -> Result<ScenarioCatalog> {
    if n == 0 {
        return Err(Error::validation("n", "must be >= 1"));
    }
    for cat in categories {
        for d in &cat.0 {
            let have = groups.get(d).map_or(0, Vec::len);
            if have < n {
                return Err(Error::validation(
                    "groups",
                    format!("category {cat} needs {n} tracks from {d}, found {have}"),
                ));
            }
        }
    }
    let per_category = categories
        .par_iter()
        .map(|cat| {
            let name = cat.to_string();
            cross_product(n, cat.0.len())
                .into_iter()
                .map(|pick| {
                    let tracks: Vec<&Track> =
                        cat.0.iter().zip(&pick).map(|(d, &j)| &groups[d][j]).collect();
                    Ok(CatalogEntry {
                        category: name.clone(),
                        tracks: tracks.iter().map(|t| t.label()).collect(),
                        rows: assemble_joint(&tracks, rows, Alignment::Relative)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioCatalog {
        categories: categories.iter().map(Category::to_string).collect(),
        entries: per_category.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traj::AgentState;
    use proptest::prelude::*;

    fn walker(id: &str, vx: f64, vy: f64) -> Track {
        Track {
            id: id.into(),
            segment: 0,
            start_index: 0,
            dt: 0.1,
            states: (0..12)
                .map(|j| AgentState {
                    px: vx * 0.1 * j as f64,
                    py: vy * 0.1 * j as f64,
                    vx,
                    vy,
                })
                .collect(),
        }
    }

    fn groups(n: usize) -> BTreeMap<Direction, Vec<Track>> {
        let dirs = [
            (Direction::W, 1.0, 0.0),
            (Direction::E, -1.0, 0.0),
            (Direction::S, 0.0, 1.0),
            (Direction::N, 0.0, -1.0),
        ];
        let tracks: Vec<Track> = dirs
            .iter()
            .flat_map(|(d, vx, vy)| (0..n).map(move |j| walker(&format!("{d}{j}"), *vx, *vy)))
            .collect();
        group_by_direction(&tracks)
    }

    fn default_categories() -> Vec<Category> {
        DEFAULT_CATEGORIES.iter().map(|c| c.parse().unwrap()).collect()
    }

    #[test]
    fn direction_classifier() {
        assert_eq!(classify_direction(&walker("a", 1.0, 0.2)), Some(Direction::W));
        assert_eq!(classify_direction(&walker("a", -1.0, 0.2)), Some(Direction::E));
        assert_eq!(classify_direction(&walker("a", 0.1, 1.0)), Some(Direction::S));
        assert_eq!(classify_direction(&walker("a", 0.1, -1.0)), Some(Direction::N));
        assert_eq!(classify_direction(&walker("a", 0.0, 0.0)), None);
    }

    #[test]
    fn category_parsing() {
        let c: Category = "W-E-S".parse().unwrap();
        assert_eq!(c.0, vec![Direction::W, Direction::E, Direction::S]);
        assert_eq!(c.to_string(), "W-E-S");
        assert!("W-X".parse::<Category>().is_err());
        assert!("WE-S".parse::<Category>().is_err());
    }

    #[test]
    fn five_per_direction_gives_five_hundred() {
        let cat = combinatorial_scenarios(&groups(5), &default_categories(), 5, 10).unwrap();
        assert_eq!(cat.entries.len(), 500);
        assert_eq!(cat.by_category("S-N-E").count(), 125);
        assert!(cat.entries.iter().all(|e| e.rows.len() == 10 && e.rows[0].len() == 12));
    }

    #[test]
    fn one_per_direction_gives_one_per_category() {
        let cat = combinatorial_scenarios(&groups(1), &default_categories(), 1, 10).unwrap();
        assert_eq!(cat.entries.len(), 4);
    }

    #[test]
    fn two_per_direction_one_category() {
        let cat = combinatorial_scenarios(&groups(2), &default_categories()[..1], 2, 10).unwrap();
        assert_eq!(cat.entries.len(), 8);
        assert_eq!(cat.entries[1].tracks, vec!["W0#0", "E0#0", "S1#0"]);
        let traj = cat.entries[0].trajectory(0.1).unwrap();
        assert_eq!((traj.k(), traj.horizon()), (3, 9));
    }

    #[test]
    fn missing_group_is_an_error() {
        let mut g = groups(2);
        g.remove(&Direction::N);
        let err = combinatorial_scenarios(&g, &default_categories(), 2, 10).unwrap_err();
        assert!(err.to_string().contains("from N"), "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn catalog_size_law(n in 1usize..4, ncat in 1usize..5, arity in 1usize..4) {
            let cats: Vec<Category> = default_categories()
                .into_iter()
                .take(ncat)
                .map(|c| Category(c.0[..arity].to_vec()))
                .collect();
            let cat = combinatorial_scenarios(&groups(n), &cats, n, 10).unwrap();
            prop_assert_eq!(cat.entries.len(), ncat * n.pow(arity as u32));
        }
    }
}
