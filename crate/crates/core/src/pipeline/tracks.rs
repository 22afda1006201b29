use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::frames::RawFrame;
use crate::error::{Error, Result};
use crate::traj::{to_dataset_row, AgentState, JointState};

const GRID_TOL: f64 = 1e-9;
/// Observation gaps longer than this many resample steps split a track.
const SPLIT_GAP_STEPS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub standstill_speed: f64,
    pub min_track_len: usize,
    pub resample_dt: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            x_range: [-20.0, 20.0],
            y_range: [-10.0, 15.0],
            standstill_speed: 0.2,
            min_track_len: 10,
            resample_dt: 0.1,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_range[0] < self.x_range[1]) || !(self.y_range[0] < self.y_range[1]) {
            return Err(Error::validation("range", "ranges must be ordered"));
        }
        if !(self.resample_dt > 0.0) {
            return Err(Error::validation("resample_dt", "must be > 0"));
        }
        Ok(())
    }

    fn contains(&self, s: &AgentState) -> bool {
        (self.x_range[0]..=self.x_range[1]).contains(&s.px)
            && (self.y_range[0]..=self.y_range[1]).contains(&s.py)
    }
}

/// A track resampled onto the stream's uniform time grid: sample `j` sits at
/// `t_ref + (start_index + j)·dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: String,
    /// Position of this piece among the pieces of the same id.
    pub segment: usize,
    pub start_index: i64,
    pub dt: f64,
    pub states: Vec<AgentState>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn end_index(&self) -> i64 {
        self.start_index + self.states.len() as i64
    }

    pub fn mean_speed(&self) -> f64 {
        if self.states.is_empty() {
            return 0.0;
        }
        self.states.iter().map(AgentState::speed).sum::<f64>() / self.states.len() as f64
    }

    pub fn label(&self) -> String {
        format!("{}#{}", self.id, self.segment)
    }
}

struct Obs {
    t: f64,
    state: AgentState,
}

fn resample(obs: &[Obs], t_ref: f64, dt: f64) -> (i64, Vec<AgentState>) {
    if let [only] = obs {
        return (((only.t - t_ref) / dt).round() as i64, vec![only.state]);
    }
    let first = ((obs[0].t - t_ref) / dt - GRID_TOL).ceil() as i64;
    let last = ((obs[obs.len() - 1].t - t_ref) / dt + GRID_TOL).floor() as i64;
    let mut states = Vec::new();
    let mut seg = 0;
    for n in first..=last {
        let t = t_ref + n as f64 * dt;
        while seg + 1 < obs.len() && obs[seg + 1].t < t - GRID_TOL * dt {
            seg += 1;
        }
        let a = &obs[seg];
        let s = if seg + 1 >= obs.len() || (t - a.t).abs() <= GRID_TOL * dt {
            a.state
        } else {
            let b = &obs[seg + 1];
            let w = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
            let lerp = |x: f64, y: f64| x + w * (y - x);
            AgentState {
                px: lerp(a.state.px, b.state.px),
                py: lerp(a.state.py, b.state.py),
                vx: lerp(a.state.vx, b.state.vx),
                vy: lerp(a.state.vy, b.state.vy),
            }
        };
        states.push(s);
    }
    (first, states)
}

/// Groups detections by id, splits on long gaps and resamples each piece
/// linearly onto a grid anchored at the first frame's timestamp.
pub fn tracks_from_frames(frames: &[RawFrame], cfg: &PreprocessConfig) -> Result<Vec<Track>> {
    cfg.validate()?;
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let t_ref = first.timestamp;
    let dt = cfg.resample_dt;
    let mut by_id: BTreeMap<&str, Vec<Obs>> = BTreeMap::new();
    for f in frames {
        for o in &f.objects {
            by_id.entry(o.id.as_str()).or_default().push(Obs {
                t: f.timestamp,
                state: AgentState {
                    px: o.x,
                    py: o.y,
                    vx: o.speed * o.angle.cos(),
                    vy: o.speed * o.angle.sin(),
                },
            });
        }
    }

    let mut tracks = Vec::new();
    for (id, obs) in by_id {
        let mut pieces: Vec<&[Obs]> = Vec::new();
        let mut start = 0;
        for j in 1..obs.len() {
            if obs[j].t - obs[j - 1].t > SPLIT_GAP_STEPS * dt + GRID_TOL {
                log::warn!(
                    "track {id}: gap of {:.3}s at t={:.3}, splitting",
                    obs[j].t - obs[j - 1].t,
                    obs[j - 1].t
                );
                pieces.push(&obs[start..j]);
                start = j;
            }
        }
        pieces.push(&obs[start..]);
        for (segment, piece) in pieces.into_iter().enumerate() {
            let (start_index, states) = resample(piece, t_ref, dt);
            if states.is_empty() {
                continue;
            }
            tracks.push(Track {
                id: id.to_owned(),
                segment,
                start_index,
                dt,
                states,
            });
        }
    }
    Ok(tracks)
}

/// Trims each track to its longest contiguous in-range run, then drops
/// standstill and short tracks. Idempotent.
pub fn filter_tracks(tracks: Vec<Track>, cfg: &PreprocessConfig) -> Vec<Track> {
    tracks
        .into_iter()
        .filter_map(|mut track| {
            let mut best = (0usize, 0usize);
            let mut run_start = None;
            for (j, s) in track.states.iter().enumerate() {
                match (cfg.contains(s), run_start) {
                    (true, None) => run_start = Some(j),
                    (false, Some(a)) => {
                        if j - a > best.1 - best.0 {
                            best = (a, j);
                        }
                        run_start = None;
                    }
                    _ => {}
                }
            }
            if let Some(a) = run_start {
                if track.states.len() - a > best.1 - best.0 {
                    best = (a, track.states.len());
                }
            }
            track.start_index += best.0 as i64;
            track.states = track.states[best.0..best.1].to_vec();
            let keep = !track.is_empty()
                && track.mean_speed() >= cfg.standstill_speed
                && track.len() >= cfg.min_track_len;
            keep.then_some(track)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    /// Tracks share the stream clock; rows cover their common time window.
    Absolute,
    /// Each track starts at its own first sample (scenes composed from
    /// different recordings).
    Relative,
}

/// Stacks `rows` aligned steps of the given tracks into a `rows × 4k` array
/// in dataset layout.
pub fn assemble_joint(tracks: &[&Track], rows: usize, alignment: Alignment) -> Result<Vec<Vec<f64>>> {
    if tracks.is_empty() {
        return Err(Error::Empty("track selection"));
    }
    let starts: Vec<usize> = match alignment {
        Alignment::Relative => vec![0; tracks.len()],
        Alignment::Absolute => {
            let lo = tracks.iter().map(|t| t.start_index).max().expect("nonempty");
            tracks.iter().map(|t| (lo - t.start_index).max(0) as usize).collect()
        }
    };
    let available = tracks
        .iter()
        .zip(&starts)
        .map(|(t, s)| t.len().saturating_sub(*s))
        .min()
        .expect("nonempty");
    if available < rows {
        let shortest = tracks
            .iter()
            .zip(&starts)
            .min_by_key(|(t, s)| t.len().saturating_sub(**s))
            .map(|(t, _)| t.label())
            .expect("nonempty");
        return Err(Error::validation(
            "tracks",
            format!("overlap of {available} steps < {rows} required (shortest: {shortest})"),
        ));
    }
    Ok((0..rows)
        .map(|r| {
            let joint = JointState {
                agents: tracks
                    .iter()
                    .zip(&starts)
                    .map(|(t, s)| t.states[s + r])
                    .collect(),
            };
            to_dataset_row(&joint)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::frames::{ObjectClass, RawFrameObject};
    use proptest::prelude::*;

    fn obj(id: &str, x: f64, y: f64, speed: f64, angle: f64) -> RawFrameObject {
        RawFrameObject {
            id: id.into(),
            x,
            y,
            width: 0.5,
            length: 0.5,
            angle,
            class: ObjectClass::Pedestrian,
            speed,
            accuracy: 0.9,
        }
    }

    fn frame(t: f64, objects: Vec<RawFrameObject>) -> RawFrame {
        RawFrame {
            timestamp: t,
            objects,
        }
    }

    fn walker(id: &str, x0: f64, y0: f64, vx: f64, n: usize, dt: f64) -> Track {
        Track {
            id: id.into(),
            segment: 0,
            start_index: 0,
            dt,
            states: (0..n)
                .map(|j| AgentState {
                    px: x0 + vx * dt * j as f64,
                    py: y0,
                    vx,
                    vy: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn two_close_frames_make_one_track() {
        let frames = vec![
            frame(0.0, vec![obj("a", 0.0, 0.0, 1.0, 0.0)]),
            frame(0.1, vec![obj("a", 0.1, 0.0, 1.0, 0.0)]),
        ];
        let tracks = tracks_from_frames(&frames, &PreprocessConfig::default()).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 2);
        assert!((tracks[0].states[1].px - 0.1).abs() < 1e-12);
        assert!((tracks[0].states[0].vx - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_sighting_is_a_point_track_that_gets_dropped() {
        let frames = vec![frame(3.0, vec![obj("a", 0.0, 0.0, 1.0, 0.0)])];
        let cfg = PreprocessConfig::default();
        let tracks = tracks_from_frames(&frames, &cfg).unwrap();
        assert_eq!(tracks[0].len(), 1);
        assert!(filter_tracks(tracks, &cfg).is_empty());
    }

    #[test]
    fn long_gap_splits_track() {
        let frames = vec![
            frame(0.0, vec![obj("a", 0.0, 0.0, 1.0, 0.0)]),
            frame(0.1, vec![obj("a", 0.1, 0.0, 1.0, 0.0)]),
            frame(1.1, vec![obj("a", 1.1, 0.0, 1.0, 0.0)]),
        ];
        let tracks = tracks_from_frames(&frames, &PreprocessConfig::default()).unwrap();
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[1].segment, 1);
        assert_eq!(tracks[1].start_index, 11);
    }

    #[test]
    fn resampling_interpolates_linearly() {
        let frames = vec![
            frame(0.0, vec![obj("a", 0.0, 0.0, 1.0, 0.0)]),
            frame(0.25, vec![obj("b", 9.0, 9.0, 1.0, 0.0)]),
            frame(0.3, vec![obj("a", 3.0, 0.0, 1.0, 0.0)]),
        ];
        let tracks = tracks_from_frames(&frames, &PreprocessConfig::default()).unwrap();
        let a = &tracks[0];
        assert_eq!(a.len(), 4);
        assert!((a.states[2].px - 2.0).abs() < 1e-9);
        let b = &tracks[1];
        assert_eq!((b.len(), b.start_index), (1, 3));
    }

    #[test]
    fn standstill_is_dropped() {
        let t = walker("s", 1.0, 1.0, 0.0, 20, 0.1);
        assert!(filter_tracks(vec![t], &PreprocessConfig::default()).is_empty());
    }

    #[test]
    fn points_beyond_clip_range_are_trimmed() {
        // From x = 15 to x = 29.5 at 5 m/s.
        let t = walker("c", 15.0, 0.0, 5.0, 30, 0.1);
        let out = filter_tracks(vec![t], &PreprocessConfig::default());
        assert_eq!(out.len(), 1);
        assert!(out[0].states.iter().all(|s| s.px <= 20.0));
        assert_eq!(out[0].len(), 11);
        assert_eq!(out[0].start_index, 0);

        let t = walker("y", 0.0, -12.0, 1.0, 30, 0.1);
        assert!(filter_tracks(vec![t], &PreprocessConfig::default()).is_empty());
    }

    #[test]
    fn short_survivor_is_dropped() {
        let t = walker("s", 0.0, 0.0, 1.0, 5, 0.1);
        assert!(filter_tracks(vec![t], &PreprocessConfig::default()).is_empty());
    }

    #[test]
    fn assemble_shapes_and_errors() {
        let a = walker("a", 0.0, 0.0, 1.0, 12, 0.1);
        let rows = assemble_joint(&[&a], 2, Alignment::Absolute).unwrap();
        assert_eq!((rows.len(), rows[0].len()), (2, 4));

        let b = walker("b", 5.0, 1.0, -1.0, 40, 0.1);
        let c = walker("c", 0.0, -5.0, 0.0, 40, 0.1);
        let d = walker("d", 1.0, -5.0, 1.0, 40, 0.1);
        let rows = assemble_joint(&[&b, &c, &d], 30, Alignment::Relative).unwrap();
        assert_eq!((rows.len(), rows[0].len()), (30, 12));

        let mut late = walker("late", 0.0, 0.0, 1.0, 12, 0.1);
        late.start_index = 7;
        match assemble_joint(&[&a, &late], 10, Alignment::Absolute) {
            Err(Error::Validation { reason, .. }) => assert!(reason.contains("a#0"), "{reason}"),
            other => panic!("unexpected {other:?}"),
        }
        let rows = assemble_joint(&[&a, &late], 5, Alignment::Absolute).unwrap();
        assert_eq!(rows[0][0], a.states[7].px);
    }

    proptest! {
        #[test]
        fn filtering_is_idempotent(
            x0 in -30.0..30.0f64, y0 in -15.0..20.0f64,
            vx in -6.0..6.0f64, vy in -3.0..3.0f64, n in 1usize..60,
        ) {
            let t = Track {
                id: "p".into(), segment: 0, start_index: 3, dt: 0.1,
                states: (0..n).map(|j| AgentState {
                    px: x0 + vx * 0.1 * j as f64,
                    py: y0 + vy * 0.1 * j as f64,
                    vx, vy,
                }).collect(),
            };
            let cfg = PreprocessConfig::default();
            let once = filter_tracks(vec![t], &cfg);
            let twice = filter_tracks(once.clone(), &cfg);
            prop_assert_eq!(once, twice);
        }
    }
}
