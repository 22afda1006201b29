use serde_json::json;

use super::interchange::{DemoHeader, DemoSet};
use crate::error::{Error, Result};
use crate::features::{CostParams, ProximityConfig};
use crate::game::{sample_rollouts, solve_game, SolverConfig};
use crate::rng::named_substream;
use crate::traj::{AgentState, JointState, ScenarioSpec, DEFAULT_DT};

pub const PRESETS: [&str; 2] = ["head-on", "intersection"];

const PRESET_HORIZON: usize = 30;

/// Built-in scenes: `head-on` (two pedestrians walking at each other) and
/// `intersection` (west-east, east-west and south-north walkers).
pub fn preset(name: &str) -> Result<ScenarioSpec> {
    let (agents, goals) = match name {
        "head-on" => (
            vec![
                AgentState::new(-2.0, 0.05, 1.2, 0.0)?,
                AgentState::new(2.0, -0.05, -1.2, 0.0)?,
            ],
            vec![[2.5, 0.0], [-2.5, 0.0]],
        ),
        "intersection" => (
            vec![
                AgentState::new(-2.5, 0.5, 1.2, 0.0)?,
                AgentState::new(2.5, -0.5, -1.2, 0.0)?,
                AgentState::new(0.3, -2.5, 0.0, 1.2)?,
            ],
            vec![[3.0, 0.5], [-3.0, -0.5], [0.3, 3.0]],
        ),
        other => {
            return Err(Error::validation(
                "preset",
                format!("unknown preset `{other}`; expected one of {}", PRESETS.join(", ")),
            ))
        }
    };
    ScenarioSpec::new(JointState::new(agents)?, goals, PRESET_HORIZON, DEFAULT_DT)
}

/// Solves the game at the ground-truth weights and samples `n_demos` noisy
/// rollouts, tagged with the weights and seed that produced them.
pub fn synth_generate(
    theta_star: &[CostParams],
    spec: &ScenarioSpec,
    n_demos: usize,
    seed: u64,
    solver: &SolverConfig,
    proximity: &ProximityConfig,
) -> Result<DemoSet> {
    let sol = solve_game(spec, theta_star, proximity, solver)?;
    let trajectories = if n_demos == 0 {
        Vec::new()
    } else {
        sample_rollouts(&sol.policies, spec, n_demos, named_substream(seed, "synth"))?
    };
    let provenance = json!({
        "source": "synth",
        "theta_star": theta_star.iter().map(|t| t.weights).collect::<Vec<_>>(),
        "seed": seed,
        "entropy_temp": solver.entropy_temp,
        "sigma": proximity.sigma,
    });
    Ok(DemoSet {
        header: DemoHeader {
            k: spec.k(),
            horizon: spec.horizon,
            dt: spec.dt,
            goals: Some(spec.goals.clone()),
            count: n_demos,
            provenance,
        },
        trajectories,
    })
}
