//! State and trajectory types with exact double-integrator stepping.
//!
//! The solver works on Cartesian `(px, py, vx, vy)` per agent with
//! acceleration controls. Speed and heading only appear at the dataset
//! boundary (`to_dataset_row` / `from_dataset_row`).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_U_MAX: f64 = 3.0;

/// Per-agent state dimension in the joint vector.
pub const STATE_DIM: usize = 4;
/// Per-agent control dimension.
pub const CONTROL_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
}

impl AgentState {
    pub fn new(px: f64, py: f64, vx: f64, vy: f64) -> Result<Self> {
        let s = Self { px, py, vx, vy };
        s.validate()?;
        Ok(s)
    }

    pub fn at_rest(px: f64, py: f64) -> Self {
        Self {
            px,
            py,
            vx: 0.0,
            vy: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("px", self.px),
            ("py", self.py),
            ("vx", self.vx),
            ("vy", self.vy),
        ] {
            if !v.is_finite() {
                return Err(Error::validation(name, format!("non-finite value {v}")));
            }
        }
        Ok(())
    }

    pub fn position(&self) -> [f64; 2] {
        [self.px, self.py]
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    /// Heading in (−π, π]; 0 at rest.
    pub fn heading(&self) -> f64 {
        if self.vx == 0.0 && self.vy == 0.0 {
            0.0
        } else {
            normalize_angle(self.vy.atan2(self.vx))
        }
    }
}

/// Maps an angle into (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub ax: f64,
    pub ay: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { ax: 0.0, ay: 0.0 };

    pub fn new(ax: f64, ay: f64) -> Self {
        Self { ax, ay }
    }

    pub fn norm(&self) -> f64 {
        self.ax.hypot(self.ay)
    }

    /// Scales the control back onto the disc of radius `u_max` if needed.
    pub fn clamped(self, u_max: f64) -> Self {
        let n = self.norm();
        if n > u_max && n > 0.0 {
            let s = u_max / n;
            Self {
                ax: self.ax * s,
                ay: self.ay * s,
            }
        } else {
            self
        }
    }
}

/// Joint state of all agents in a scene. Agent order is fixed for a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub agents: Vec<AgentState>,
}

impl JointState {
    pub fn new(agents: Vec<AgentState>) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::validation("agents", "joint state needs k >= 1"));
        }
        for a in &agents {
            a.validate()?;
        }
        Ok(Self { agents })
    }

    pub fn k(&self) -> usize {
        self.agents.len()
    }

    /// Stacked `[px, py, vx, vy]` blocks, length 4k.
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            STATE_DIM * self.k(),
            self.agents.iter().flat_map(|a| [a.px, a.py, a.vx, a.vy]),
        )
    }

    pub fn from_slice(v: &[f64]) -> Self {
        debug_assert_eq!(v.len() % STATE_DIM, 0);
        let agents = v
            .chunks_exact(STATE_DIM)
            .map(|c| AgentState {
                px: c[0],
                py: c[1],
                vx: c[2],
                vy: c[3],
            })
            .collect();
        Self { agents }
    }
}

/// A joint trajectory: `T + 1` states and `T` controls per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<JointState>,
    /// `controls[i][t]` is agent `i`'s control at step `t`.
    pub controls: Vec<Vec<ControlInput>>,
    pub dt: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn k(&self) -> usize {
        self.states.first().map_or(0, JointState::k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation("dt", format!("must be > 0, got {}", self.dt)));
        }
        if self.states.len() < 2 {
            return Err(Error::validation("states", "trajectory needs at least 2 states"));
        }
        let k = self.k();
        if self.states.iter().any(|s| s.k() != k) {
            return Err(Error::validation("states", "agent count changes over time"));
        }
        if self.controls.len() != k {
            return Err(Error::validation(
                "controls",
                format!("expected {k} control sequences, got {}", self.controls.len()),
            ));
        }
        let t = self.horizon();
        if let Some((i, c)) = self.controls.iter().enumerate().find(|(_, c)| c.len() != t) {
            return Err(Error::validation(
                "controls",
                format!("agent {i} has {} controls, expected {t}", c.len()),
            ));
        }
        Ok(())
    }

    /// Positions of agent `i` over time.
    pub fn positions(&self, i: usize) -> Vec<[f64; 2]> {
        self.states.iter().map(|s| s.agents[i].position()).collect()
    }

    /// Rebuilds a trajectory from states only, recovering the acceleration
    /// controls from consecutive velocities.
    pub fn from_states(states: Vec<JointState>, dt: f64) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::validation("states", "trajectory needs at least 2 states"));
        }
        let k = states[0].k();
        let controls = (0..k)
            .map(|i| {
                states
                    .windows(2)
                    .map(|w| {
                        let (a, b) = (&w[0].agents[i], &w[1].agents[i]);
                        ControlInput::new((b.vx - a.vx) / dt, (b.vy - a.vy) / dt)
                    })
                    .collect()
            })
            .collect();
        let traj = Self {
            states,
            controls,
            dt,
        };
        traj.validate()?;
        Ok(traj)
    }
}

/// A scene to be solved or rolled out: initial joint state, goals, horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub x0: JointState,
    pub goals: Vec<[f64; 2]>,
    pub horizon: usize,
    pub dt: f64,
    #[serde(default = "default_u_max")]
    pub u_max: f64,
}

fn default_u_max() -> f64 {
    DEFAULT_U_MAX
}

impl ScenarioSpec {
    pub fn new(x0: JointState, goals: Vec<[f64; 2]>, horizon: usize, dt: f64) -> Result<Self> {
        let spec = Self {
            x0,
            goals,
            horizon,
            dt,
            u_max: DEFAULT_U_MAX,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn k(&self) -> usize {
        self.x0.k()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x0.agents.is_empty() {
            return Err(Error::validation("x0", "k must be >= 1"));
        }
        for a in &self.x0.agents {
            a.validate()?;
        }
        if self.goals.len() != self.k() {
            return Err(Error::validation(
                "goals",
                format!("expected {} goals, got {}", self.k(), self.goals.len()),
            ));
        }
        if self.goals.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::validation("goals", "non-finite goal coordinate"));
        }
        if self.horizon < 1 {
            return Err(Error::validation("horizon", "T must be >= 1"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.u_max > 0.0) {
            return Err(Error::validation("u_max", "must be > 0"));
        }
        Ok(())
    }
}

/// One exact double-integrator step.
pub fn propagate(s: &AgentState, u: &ControlInput, dt: f64) -> Result<AgentState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::validation("dt", format!("must be > 0, got {dt}")));
    }
    s.validate()?;
    if !u.ax.is_finite() {
        return Err(Error::validation("ax", "non-finite value"));
    }
    if !u.ay.is_finite() {
        return Err(Error::validation("ay", "non-finite value"));
    }
    Ok(step(s, u, dt))
}

/// Unchecked propagation used on hot paths where inputs are already valid.
#[inline]
pub(crate) fn step(s: &AgentState, u: &ControlInput, dt: f64) -> AgentState {
    let h = 0.5 * dt * dt;
    AgentState {
        px: s.px + s.vx * dt + h * u.ax,
        py: s.py + s.vy * dt + h * u.ay,
        vx: s.vx + u.ax * dt,
        vy: s.vy + u.ay * dt,
    }
}

/// Per-agent `[px, py, speed, heading]` blocks.
pub fn to_dataset_row(x: &JointState) -> Vec<f64> {
    x.agents
        .iter()
        .flat_map(|a| [a.px, a.py, a.speed(), a.heading()])
        .collect()
}

pub fn from_dataset_row(row: &[f64]) -> Result<JointState> {
    if row.is_empty() || !row.len().is_multiple_of(STATE_DIM) {
        return Err(Error::format(
            "row",
            format!("length {} is not a positive multiple of 4", row.len()),
        ));
    }
    let agents = row
        .chunks_exact(STATE_DIM)
        .enumerate()
        .map(|(i, c)| {
            let (px, py, speed, heading) = (c[0], c[1], c[2], c[3]);
            if speed < 0.0 {
                return Err(Error::format(
                    format!("agent {i}"),
                    format!("negative speed {speed}"),
                ));
            }
            if speed == 0.0 {
                return AgentState::new(px, py, 0.0, 0.0);
            }
            AgentState::new(px, py, speed * heading.cos(), speed * heading.sin())
        })
        .collect::<Result<Vec<_>>>()?;
    JointState::new(agents)
}

/// Applies recorded per-agent controls from `spec.x0`.
pub fn rollout_openloop(spec: &ScenarioSpec, controls: &[Vec<ControlInput>]) -> Result<Trajectory> {
    spec.validate()?;
    let k = spec.k();
    if controls.len() != k {
        return Err(Error::validation(
            "controls",
            format!("expected {k} agents, got {}", controls.len()),
        ));
    }
    for (i, c) in controls.iter().enumerate() {
        if c.len() != spec.horizon {
            return Err(Error::validation(
                "controls",
                format!("agent {i} has {} steps, expected {}", c.len(), spec.horizon),
            ));
        }
    }
    let mut states = Vec::with_capacity(spec.horizon + 1);
    states.push(spec.x0.clone());
    for t in 0..spec.horizon {
        let prev = &states[t];
        let next = prev
            .agents
            .iter()
            .zip(controls)
            .map(|(s, c)| propagate(s, &c[t], spec.dt))
            .collect::<Result<Vec<_>>>()?;
        states.push(JointState { agents: next });
    }
    Ok(Trajectory {
        states,
        controls: controls.to_vec(),
        dt: spec.dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn propagate_examples() {
        let s = AgentState::new(0.0, 0.0, 1.0, 0.0).unwrap();
        let out = propagate(&s, &ControlInput::ZERO, 1.0).unwrap();
        assert_eq!(out, AgentState::new(1.0, 0.0, 1.0, 0.0).unwrap());

        let rest = AgentState::at_rest(0.0, 0.0);
        assert_eq!(propagate(&rest, &ControlInput::ZERO, 0.1).unwrap(), rest);

        let out = propagate(&s, &ControlInput::new(2.0, 0.0), 0.5).unwrap();
        assert_eq!(out, AgentState::new(0.75, 0.0, 2.0, 0.0).unwrap());
    }

    #[test]
    fn propagate_rejects_non_finite_and_bad_dt() {
        let s = AgentState {
            px: f64::NAN,
            py: 0.0,
            vx: 0.0,
            vy: 0.0,
        };
        match propagate(&s, &ControlInput::ZERO, 0.1) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "px"),
            other => panic!("unexpected {other:?}"),
        }
        let ok = AgentState::at_rest(0.0, 0.0);
        match propagate(&ok, &ControlInput::new(0.0, f64::INFINITY), 0.1) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "ay"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(propagate(&ok, &ControlInput::ZERO, 0.0).is_err());
    }

    #[test]
    fn dataset_row_examples() {
        let one = |a: AgentState| JointState::new(vec![a]).unwrap();
        assert_eq!(
            to_dataset_row(&one(AgentState::new(1.0, 2.0, 3.0, 0.0).unwrap())),
            vec![1.0, 2.0, 3.0, 0.0]
        );
        let row = to_dataset_row(&one(AgentState::new(0.0, 0.0, 0.0, 1.0).unwrap()));
        assert_eq!(row[2], 1.0);
        assert!((row[3] - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(
            to_dataset_row(&one(AgentState::at_rest(5.0, 5.0))),
            vec![5.0, 5.0, 0.0, 0.0]
        );

        let x = from_dataset_row(&[1.0, 2.0, 3.0, 0.0]).unwrap();
        assert_eq!(x.agents[0], AgentState::new(1.0, 2.0, 3.0, 0.0).unwrap());
        let x = from_dataset_row(&[0.0, 0.0, 1.0, FRAC_PI_2]).unwrap();
        assert!(x.agents[0].vx.abs() < 1e-12);
        assert!((x.agents[0].vy - 1.0).abs() < 1e-12);
        let x = from_dataset_row(&[0.0, 0.0, 0.0, 2.7]).unwrap();
        assert_eq!(x.agents[0], AgentState::at_rest(0.0, 0.0));
    }

    #[test]
    fn dataset_row_errors() {
        assert!(matches!(
            from_dataset_row(&[0.0, 0.0, -1.0, 0.0]),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            from_dataset_row(&[0.0, 0.0, 1.0]),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn heading_is_in_half_open_interval() {
        let a = AgentState::new(0.0, 0.0, -1.0, 0.0).unwrap();
        assert_eq!(a.heading(), std::f64::consts::PI);
        assert_eq!(normalize_angle(-std::f64::consts::PI), std::f64::consts::PI);
    }

    #[test]
    fn rollout_openloop_examples() {
        let x0 = JointState::new(vec![AgentState::at_rest(0.0, 0.0)]).unwrap();
        let spec = ScenarioSpec::new(x0.clone(), vec![[0.0, 0.0]], 1, 0.1).unwrap();
        let traj = rollout_openloop(&spec, &[vec![ControlInput::ZERO]]).unwrap();
        assert_eq!(traj.states.len(), 2);
        assert_eq!(traj.states[0], traj.states[1]);

        let spec = ScenarioSpec::new(x0, vec![[0.0, 0.0]], 2, 1.0).unwrap();
        let u = ControlInput::new(1.0, 0.0);
        let traj = rollout_openloop(&spec, &[vec![u, u]]).unwrap();
        let xs: Vec<f64> = traj.states.iter().map(|s| s.agents[0].px).collect();
        assert_eq!(xs, vec![0.0, 0.5, 2.0]);

        assert!(rollout_openloop(&spec, &[vec![u]]).is_err());
        assert!(rollout_openloop(&spec, &[]).is_err());
    }

    #[test]
    fn from_states_recovers_controls() {
        let x0 = JointState::new(vec![
            AgentState::new(0.0, 0.0, 1.0, 0.5).unwrap(),
            AgentState::new(2.0, -1.0, 0.0, 0.0).unwrap(),
        ])
        .unwrap();
        let spec = ScenarioSpec::new(x0, vec![[0.0; 2]; 2], 3, 0.1).unwrap();
        let controls = vec![
            vec![ControlInput::new(0.3, -0.2); 3],
            vec![ControlInput::new(-1.0, 2.0); 3],
        ];
        let traj = rollout_openloop(&spec, &controls).unwrap();
        let rebuilt = Trajectory::from_states(traj.states.clone(), 0.1).unwrap();
        for (a, b) in rebuilt.controls.iter().flatten().zip(controls.iter().flatten()) {
            assert!((a.ax - b.ax).abs() < 1e-12 && (a.ay - b.ay).abs() < 1e-12);
        }
    }

    fn finite() -> impl Strategy<Value = f64> {
        -50.0..50.0f64
    }

    proptest! {
        #[test]
        fn propagate_is_affine(
            s1 in (finite(), finite(), finite(), finite()),
            s2 in (finite(), finite(), finite(), finite()),
            u1 in (finite(), finite()),
            u2 in (finite(), finite()),
            alpha in -2.0..2.0f64,
            dt in 0.01..1.0f64,
        ) {
            let beta = 1.0 - alpha;
            let a = AgentState { px: s1.0, py: s1.1, vx: s1.2, vy: s1.3 };
            let b = AgentState { px: s2.0, py: s2.1, vx: s2.2, vy: s2.3 };
            let ua = ControlInput::new(u1.0, u1.1);
            let ub = ControlInput::new(u2.0, u2.1);
            let mix = AgentState {
                px: alpha * a.px + beta * b.px,
                py: alpha * a.py + beta * b.py,
                vx: alpha * a.vx + beta * b.vx,
                vy: alpha * a.vy + beta * b.vy,
            };
            let umix = ControlInput::new(alpha * ua.ax + beta * ub.ax, alpha * ua.ay + beta * ub.ay);
            let lhs = propagate(&mix, &umix, dt).unwrap();
            let pa = propagate(&a, &ua, dt).unwrap();
            let pb = propagate(&b, &ub, dt).unwrap();
            let tol = 1e-9;
            prop_assert!((lhs.px - (alpha * pa.px + beta * pb.px)).abs() < tol);
            prop_assert!((lhs.py - (alpha * pa.py + beta * pb.py)).abs() < tol);
            prop_assert!((lhs.vx - (alpha * pa.vx + beta * pb.vx)).abs() < tol);
            prop_assert!((lhs.vy - (alpha * pa.vy + beta * pb.vy)).abs() < tol);
        }

        #[test]
        fn dataset_row_round_trips(
            px in finite(), py in finite(),
            speed in 0.01..10.0f64,
            heading in -3.14159..3.14159f64,
        ) {
            let row = [px, py, speed, heading];
            let back = to_dataset_row(&from_dataset_row(&row).unwrap());
            for (a, b) in row.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let state = from_dataset_row(&row).unwrap();
            let again = from_dataset_row(&to_dataset_row(&state)).unwrap();
            prop_assert!((again.agents[0].vx - state.agents[0].vx).abs() < 1e-12);
            prop_assert!((again.agents[0].vy - state.agents[0].vy).abs() < 1e-12);
        }

        #[test]
        fn resimulation_reproduces_states(
            ax in -3.0..3.0f64, ay in -3.0..3.0f64, vx in -2.0..2.0f64, steps in 1usize..40,
        ) {
            let x0 = JointState::new(vec![AgentState { px: 0.0, py: 1.0, vx, vy: 0.0 }]).unwrap();
            let spec = ScenarioSpec::new(x0, vec![[0.0, 0.0]], steps, 0.1).unwrap();
            let controls = vec![(0..steps).map(|t| ControlInput::new(ax * (t as f64).sin(), ay)).collect::<Vec<_>>()];
            let traj = rollout_openloop(&spec, &controls).unwrap();
            let mut s = traj.states[0].agents[0];
            for t in 0..steps {
                s = propagate(&s, &traj.controls[0][t], traj.dt).unwrap();
                let r = traj.states[t + 1].agents[0];
                prop_assert!((s.px - r.px).abs() < 1e-9 && (s.vy - r.vy).abs() < 1e-9);
            }
        }
    }
}
