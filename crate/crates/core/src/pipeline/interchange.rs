use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::check_keys;
use crate::error::{Error, Result};
use crate::irl::infer_goals;
use crate::traj::{from_dataset_row, to_dataset_row, AgentState, JointState, ScenarioSpec, Trajectory};

const HEADER_KEYS: [&str; 6] = ["k", "T", "dt", "goals", "count", "provenance"];

/// First line of a demonstration file. `horizon` steps means `horizon + 1`
/// state rows per demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoHeader {
    pub k: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub dt: f64,
    /// Absent for recorded data; goals are then taken from the final
    /// demonstrated positions.
    pub goals: Option<Vec<[f64; 2]>>,
    pub count: usize,
    pub provenance: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub header: DemoHeader,
    pub trajectories: Vec<Trajectory>,
}

impl DemoSet {
    pub fn new(
        trajectories: Vec<Trajectory>,
        goals: Option<Vec<[f64; 2]>>,
        provenance: Value,
    ) -> Result<Self> {
        let first = trajectories.first().ok_or(Error::Empty("demonstration set"))?;
        let header = DemoHeader {
            k: first.k(),
            horizon: first.horizon(),
            dt: first.dt,
            goals,
            count: trajectories.len(),
            provenance,
        };
        let set = Self {
            header,
            trajectories,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.count != self.trajectories.len() {
            return Err(Error::validation("count", "header count differs from data"));
        }
        if let Some(g) = &h.goals {
            if g.len() != h.k {
                return Err(Error::validation("goals", format!("expected {} goals", h.k)));
            }
        }
        for (d, t) in self.trajectories.iter().enumerate() {
            t.validate()?;
            if t.k() != h.k || t.horizon() != h.horizon || (t.dt - h.dt).abs() > 1e-12 {
                return Err(Error::validation(
                    "trajectories",
                    format!("demonstration {d} does not match the header shape"),
                ));
            }
        }
        Ok(())
    }

    /// Scene for training and prediction: mean demonstrated start state and
    /// the header goals, or inferred goals when none are recorded.
    pub fn scenario(&self) -> Result<ScenarioSpec> {
        if self.trajectories.is_empty() {
            return Err(Error::Empty("demonstration set"));
        }
        let n = self.trajectories.len() as f64;
        let agents = (0..self.header.k)
            .map(|i| {
                let mut s = [0.0; 4];
                for t in &self.trajectories {
                    let a = t.states[0].agents[i];
                    for (acc, v) in s.iter_mut().zip([a.px, a.py, a.vx, a.vy]) {
                        *acc += v / n;
                    }
                }
                AgentState::new(s[0], s[1], s[2], s[3])
            })
            .collect::<Result<Vec<_>>>()?;
        let goals = match &self.header.goals {
            Some(g) => g.clone(),
            None => infer_goals(&self.trajectories)?,
        };
        ScenarioSpec::new(JointState::new(agents)?, goals, self.header.horizon, self.header.dt)
    }
}

/// Writes the header line followed by `horizon + 1` comma-separated rows
/// per demonstration.
pub fn write_demos<W: Write>(mut w: W, set: &DemoSet) -> Result<()> {
    set.validate()?;
    serde_json::to_writer(&mut w, &set.header).map_err(std::io::Error::other)?;
    writeln!(w)?;
    for traj in &set.trajectories {
        for s in &traj.states {
            let row: Vec<String> = to_dataset_row(s).iter().map(f64::to_string).collect();
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}

pub fn read_demos<R: BufRead>(reader: R) -> Result<DemoSet> {
    let mut lines = reader
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::format("line 1", "missing header"))?;
    let value: Value = serde_json::from_str(&first?)
        .map_err(|e| Error::format("line 1", format!("invalid header: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::format("line 1", "header must be a JSON object"))?;
    check_keys(obj, &HEADER_KEYS, "line 1")?;
    let header: DemoHeader = serde_json::from_value(value.clone())
        .map_err(|e| Error::format("line 1", format!("invalid header: {e}")))?;
    if header.k == 0 || !(header.dt > 0.0) {
        return Err(Error::format("line 1", "header needs k >= 1 and dt > 0"));
    }

    let width = 4 * header.k;
    let per_demo = header.horizon + 1;
    let mut states: Vec<JointState> = Vec::with_capacity(header.count * per_demo);
    for (n, line) in lines {
        let loc = format!("line {}", n + 1);
        let values = line?
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(&loc, format!("bad number: {e}")))?;
        if values.len() != width {
            return Err(Error::format(
                &loc,
                format!("expected {width} values, got {}", values.len()),
            ));
        }
        let row = from_dataset_row(&values).map_err(|e| match e {
            Error::Format { reason, .. } => Error::format(&loc, reason),
            other => other,
        })?;
        states.push(row);
    }
    if states.len() != header.count * per_demo {
        return Err(Error::format(
            "body",
            format!(
                "expected {} rows for {} demonstrations, got {}",
                header.count * per_demo,
                header.count,
                states.len()
            ),
        ));
    }
    let mut trajectories = Vec::with_capacity(header.count);
    let mut rest = states.into_iter();
    for _ in 0..header.count {
        let chunk: Vec<JointState> = rest.by_ref().take(per_demo).collect();
        trajectories.push(Trajectory::from_states(chunk, header.dt)?);
    }
    let set = DemoSet {
        header,
        trajectories,
    };
    set.validate()?;
    Ok(set)
}
