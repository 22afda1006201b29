//! Trajectory features and the linear per-agent cost built on them.
//!
//! The basis has three entries: squared distance to the goal, a Gaussian
//! proximity kernel summed over the other agents, and squared control
//! effort. State features average over the `T + 1` states, the effort
//! feature over the `T` controls.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::{ControlInput, Trajectory, STATE_DIM};

pub const NUM_FEATURES: usize = 3;
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = ["goal_dist", "proximity", "effort"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProximityConfig {
    pub sigma: f64,
}

impl Default for ProximityConfig {
    fn default() -> Self {
        Self { sigma: 1.5 }
    }
}

impl ProximityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::validation("sigma", format!("must be > 0, got {}", self.sigma)));
        }
        Ok(())
    }

    #[inline]
    pub fn kernel(&self, dx: f64, dy: f64) -> f64 {
        (-(dx * dx + dy * dy) / (self.sigma * self.sigma)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub goal_dist: f64,
    pub proximity: f64,
    pub effort: f64,
}

impl FeatureVector {
    pub fn from_array(a: [f64; NUM_FEATURES]) -> Self {
        Self {
            goal_dist: a[0],
            proximity: a[1],
            effort: a[2],
        }
    }

    pub fn to_array(&self) -> [f64; NUM_FEATURES] {
        [self.goal_dist, self.proximity, self.effort]
    }

    pub fn sub(&self, other: &Self) -> [f64; NUM_FEATURES] {
        let (a, b) = (self.to_array(), other.to_array());
        std::array::from_fn(|j| a[j] - b[j])
    }
}

/// Per-agent cost weights, one per feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub weights: [f64; NUM_FEATURES],
}

impl Default for CostParams {
    fn default() -> Self {
        Self::ones()
    }
}

impl CostParams {
    pub fn new(weights: [f64; NUM_FEATURES]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::validation("theta", format!("non-finite weights {weights:?}")));
        }
        Ok(Self { weights })
    }

    pub fn ones() -> Self {
        Self {
            weights: [1.0; NUM_FEATURES],
        }
    }

    pub fn goal(&self) -> f64 {
        self.weights[0]
    }

    pub fn proximity(&self) -> f64 {
        self.weights[1]
    }

    pub fn effort(&self) -> f64 {
        self.weights[2]
    }

    /// Projection onto the nonnegative orthant.
    pub fn project_nonneg(self) -> Self {
        Self {
            weights: self.weights.map(|w| w.max(0.0)),
        }
    }
}

pub fn cost(theta: &CostParams, phi: &FeatureVector) -> f64 {
    theta
        .weights
        .iter()
        .zip(phi.to_array())
        .map(|(w, f)| w * f)
        .sum()
}

/// Summed proximity kernel between agent `i` and every other agent in a
/// stacked joint state vector.
pub(crate) fn proximity_at(x: &[f64], i: usize, cfg: &ProximityConfig) -> f64 {
    let (pix, piy) = (x[STATE_DIM * i], x[STATE_DIM * i + 1]);
    x.chunks_exact(STATE_DIM)
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, c)| cfg.kernel(pix - c[0], piy - c[1]))
        .sum()
}

pub fn compute_features(
    traj: &Trajectory,
    i: usize,
    goal: [f64; 2],
    cfg: &ProximityConfig,
) -> Result<FeatureVector> {
    let k = traj.k();
    if i >= k {
        return Err(Error::AgentIndex { index: i, k });
    }
    let horizon = traj.horizon();
    if horizon < 1 {
        return Err(Error::validation("states", "trajectory needs T >= 1"));
    }
    let mut goal_dist = 0.0;
    let mut proximity = 0.0;
    for s in &traj.states {
        let me = &s.agents[i];
        let (dx, dy) = (me.px - goal[0], me.py - goal[1]);
        goal_dist += dx * dx + dy * dy;
        for (j, other) in s.agents.iter().enumerate() {
            if j != i {
                proximity += cfg.kernel(me.px - other.px, me.py - other.py);
            }
        }
    }
    let effort: f64 = traj.controls[i]
        .iter()
        .map(|u: &ControlInput| u.ax * u.ax + u.ay * u.ay)
        .sum();
    let n_states = (horizon + 1) as f64;
    Ok(FeatureVector {
        goal_dist: goal_dist / n_states,
        proximity: proximity / n_states,
        effort: effort / horizon as f64,
    })
}

pub fn expected_features(
    rollouts: &[Trajectory],
    i: usize,
    goal: [f64; 2],
    cfg: &ProximityConfig,
) -> Result<FeatureVector> {
    let first = rollouts.first().ok_or(Error::Empty("rollout set"))?;
    let (k, t) = (first.k(), first.horizon());
    let mut acc = [0.0; NUM_FEATURES];
    for r in rollouts {
        if r.k() != k || r.horizon() != t {
            return Err(Error::validation(
                "rollouts",
                "all trajectories must share agent count and horizon",
            ));
        }
        let phi = compute_features(r, i, goal, cfg)?.to_array();
        for (a, f) in acc.iter_mut().zip(phi) {
            *a += f;
        }
    }
    let n = rollouts.len() as f64;
    Ok(FeatureVector::from_array(acc.map(|a| a / n)))
}

/// Agent `i`'s cost `θᵀΦ` written as a sum of stage costs, so that the
/// solver optimizes exactly the quantity the features measure.
#[derive(Debug, Clone)]
pub struct AgentCostModel {
    pub agent: usize,
    pub goal: [f64; 2],
    pub theta: CostParams,
    pub proximity: ProximityConfig,
    pub horizon: usize,
}

impl AgentCostModel {
    fn state_weight(&self) -> f64 {
        1.0 / (self.horizon + 1) as f64
    }

    /// Coefficient `c` of the effort term `c‖u‖²` in one stage.
    pub fn control_weight(&self) -> f64 {
        self.theta.effort() / self.horizon as f64
    }

    /// State part of one stage cost at stacked joint state `x`.
    pub fn state_cost(&self, x: &[f64]) -> f64 {
        let i = self.agent;
        let (dx, dy) = (x[STATE_DIM * i] - self.goal[0], x[STATE_DIM * i + 1] - self.goal[1]);
        let goal_term = self.theta.goal() * (dx * dx + dy * dy);
        let prox_term = if self.theta.proximity() != 0.0 {
            self.theta.proximity() * proximity_at(x, i, &self.proximity)
        } else {
            0.0
        };
        self.state_weight() * (goal_term + prox_term)
    }

    /// Full stage cost for `t < T` over `(x, uⁱ)`, where `z = [x; uⁱ]`.
    pub fn stage_cost(&self, z: &[f64]) -> f64 {
        let n = z.len() - 2;
        let (ux, uy) = (z[n], z[n + 1]);
        self.state_cost(&z[..n]) + self.control_weight() * (ux * ux + uy * uy)
    }
}
