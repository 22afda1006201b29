//! Shared fixtures for the criterion benchmarks.

use crowd_irl::features::AgentCostModel;
use crowd_irl::game::{agent_cost_models, constant_velocity_nominal};
use crowd_irl::pipeline::preset;
use crowd_irl::{CostParams, ProximityConfig, ScenarioSpec, Trajectory};

/// The three-agent intersection scene with shared weights.
pub struct Fixture {
    pub spec: ScenarioSpec,
    pub thetas: Vec<CostParams>,
    pub proximity: ProximityConfig,
    pub models: Vec<AgentCostModel>,
    pub nominal: Trajectory,
}

pub fn intersection() -> Fixture {
    let spec = preset("intersection").expect("preset exists");
    let thetas = vec![CostParams::new([0.5, 2.0, 10.0]).expect("valid weights"); spec.k()];
    let proximity = ProximityConfig::default();
    let models = agent_cost_models(&spec, &thetas, &proximity).expect("consistent scene");
    let nominal = constant_velocity_nominal(&spec).expect("valid scene");
    Fixture {
        spec,
        thetas,
        proximity,
        models,
        nominal,
    }
}
