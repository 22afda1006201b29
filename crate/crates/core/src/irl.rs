//! Maximum-entropy IRL by feature matching.
//!
//! [`multi_agent_irl`] runs block coordinate descent with one weight block
//! per agent; [`single_agent_maxent_irl`] shares a single weight vector across
//! all agents. Both solve the LQ game at the current weights, sample `M`
//! rollouts, and move the weights along the feature gap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{expected_features, CostParams, FeatureVector, ProximityConfig, NUM_FEATURES};
use crate::game::{mean_rollout, sample_rollouts, solve_game, PolicySequence, SolverConfig};
use crate::rng::substream;
use crate::traj::{ScenarioSpec, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub beta: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub rollouts: usize,
    pub seed: u64,
    /// Features switched off here keep a zero weight and a zero gap.
    pub active: [bool; NUM_FEATURES],
    pub solver: SolverConfig,
    pub proximity: ProximityConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            beta: 3e-4,
            max_iters: 500,
            tol: 1e-3,
            rollouts: 32,
            seed: 0,
            active: [true; NUM_FEATURES],
            solver: SolverConfig::default(),
            proximity: ProximityConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::validation("beta", "must be > 0"));
        }
        if self.rollouts < 1 {
            return Err(Error::validation("rollouts", "M must be >= 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::validation("tol", "must be >= 0"));
        }
        self.solver.validate()?;
        self.proximity.validate()
    }

    fn initial_theta(&self) -> CostParams {
        CostParams {
            weights: std::array::from_fn(|j| if self.active[j] { 1.0 } else { 0.0 }),
        }
    }

    fn mask(&self, gap: [f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        std::array::from_fn(|j| if self.active[j] { gap[j] } else { 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Index of the weight block that was updated.
    pub agent: usize,
    pub theta_before: [f64; NUM_FEATURES],
    pub theta_after: [f64; NUM_FEATURES],
    pub gap: [f64; NUM_FEATURES],
    pub gap_norm: f64,
    pub conditioned_stages: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainingTrace {
    /// Aggregate gap per iteration: Euclidean norm over every block's gap.
    pub fn aggregate_gap_norms(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.records {
            if out.len() <= r.iteration {
                out.resize(r.iteration + 1, 0.0);
            }
            out[r.iteration] += r.gap_norm * r.gap_norm;
        }
        out.into_iter().map(f64::sqrt).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub thetas: Vec<CostParams>,
    pub trace: TrainingTrace,
    pub converged: bool,
    pub iterations: usize,
}

/// Gradient step on the MaxEnt negative log-likelihood of the demonstrations,
/// followed by projection onto `θ ≥ 0`.
///
/// With costs `θᵀΦ`, the gradient is `Φ_expert − 𝔼Φ_policy`, so a policy that
/// incurs more of a feature than the expert raises that feature's weight.
pub fn update_theta(
    theta: &CostParams,
    phi_policy: &FeatureVector,
    phi_expert: &FeatureVector,
    beta: f64,
) -> CostParams {
    let gap = phi_policy.sub(phi_expert);
    CostParams {
        weights: std::array::from_fn(|j| theta.weights[j] + beta * gap[j]),
    }
    .project_nonneg()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Checks that demonstrations match the scenario's agent count, horizon and
/// time step.
pub fn check_dataset(dataset: &[Trajectory], spec: &ScenarioSpec) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Empty("demonstration set"));
    }
    for (d, traj) in dataset.iter().enumerate() {
        traj.validate()?;
        if traj.k() != spec.k() || traj.horizon() != spec.horizon {
            return Err(Error::validation(
                "dataset",
                format!(
                    "demonstration {d} has {} agents × {} steps, scenario has {} × {}",
                    traj.k(),
                    traj.horizon(),
                    spec.k(),
                    spec.horizon
                ),
            ));
        }
        if (traj.dt - spec.dt).abs() > 1e-12 {
            return Err(Error::validation(
                "dataset",
                format!("demonstration {d} has dt={}, scenario dt={}", traj.dt, spec.dt),
            ));
        }
    }
    Ok(())
}

/// Per-agent goal estimate: the final demonstrated position, averaged over
/// demonstrations.
pub fn infer_goals(dataset: &[Trajectory]) -> Result<Vec<[f64; 2]>> {
    let first = dataset.first().ok_or(Error::Empty("demonstration set"))?;
    let k = first.k();
    let n = dataset.len() as f64;
    Ok((0..k)
        .map(|i| {
            let (sx, sy) = dataset.iter().fold((0.0, 0.0), |(sx, sy), d| {
                let last = d.states.last().expect("validated").agents[i];
                (sx + last.px, sy + last.py)
            });
            [sx / n, sy / n]
        })
        .collect())
}

/// Expected features of every demonstration, per agent.
pub fn expert_features(
    dataset: &[Trajectory],
    spec: &ScenarioSpec,
    proximity: &ProximityConfig,
) -> Result<Vec<FeatureVector>> {
    (0..spec.k())
        .map(|i| expected_features(dataset, i, spec.goals[i], proximity))
        .collect()
}

/// Feature gap `𝔼Φⁱ(policy) − 𝔼Φⁱ(demos)` for agent `i` and its norm.
pub fn feature_gap(
    dataset: &[Trajectory],
    policies: &PolicySequence,
    spec: &ScenarioSpec,
    i: usize,
    rollouts: usize,
    seed: u64,
    proximity: &ProximityConfig,
) -> Result<([f64; NUM_FEATURES], f64)> {
    check_dataset(dataset, spec)?;
    if i >= spec.k() {
        return Err(Error::AgentIndex { index: i, k: spec.k() });
    }
    let samples = sample_rollouts(policies, spec, rollouts, seed)?;
    let policy = expected_features(&samples, i, spec.goals[i], proximity)?;
    let expert = expected_features(dataset, i, spec.goals[i], proximity)?;
    let gap = policy.sub(&expert);
    Ok((gap, norm(&gap)))
}

fn wrap(iteration: usize, agent: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Training {
        iteration,
        agent,
        source: Box::new(e),
    }
}

/// Block coordinate descent: each sweep visits agents in ascending order,
/// re-solving the game with the latest weights before every block update.
pub fn multi_agent_irl(
    dataset: &[Trajectory],
    spec: &ScenarioSpec,
    cfg: &TrainingConfig,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    spec.validate()?;
    check_dataset(dataset, spec)?;
    let k = spec.k();
    let expert = expert_features(dataset, spec, &cfg.proximity)?;
    let mut thetas = vec![cfg.initial_theta(); k];
    let mut trace = TrainingTrace::default();
    let mut converged = false;
    let mut iterations = 0;

    for iteration in 0..cfg.max_iters {
        iterations = iteration + 1;
        let mut worst = 0.0f64;
        for i in 0..k {
            let sol = solve_game(spec, &thetas, &cfg.proximity, &cfg.solver)
                .map_err(wrap(iteration, i))?;
            let seed = substream(cfg.seed, &[(iteration * k + i) as u64]);
            let samples = sample_rollouts(&sol.policies, spec, cfg.rollouts, seed)
                .map_err(wrap(iteration, i))?;
            let phi = expected_features(&samples, i, spec.goals[i], &cfg.proximity)?;
            let gap = cfg.mask(phi.sub(&expert[i]));
            let gap_norm = norm(&gap);
            let before = thetas[i];
            thetas[i] = update_theta(
                &before,
                &FeatureVector::from_array(gap),
                &FeatureVector::default(),
                cfg.beta,
            );
            trace.records.push(TraceRecord {
                iteration,
                agent: i,
                theta_before: before.weights,
                theta_after: thetas[i].weights,
                gap,
                gap_norm,
                conditioned_stages: sol.diagnostics.conditioned_stages(),
            });
            worst = worst.max(gap_norm);
        }
        if worst < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("multi-agent IRL stopped after {iterations} iterations without converging");
    }
    Ok(TrainingOutcome {
        thetas,
        trace,
        converged,
        iterations,
    })
}

/// One weight vector shared by all agents; the gap is averaged over agents
/// before each update.
pub fn single_agent_maxent_irl(
    dataset: &[Trajectory],
    spec: &ScenarioSpec,
    cfg: &TrainingConfig,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    spec.validate()?;
    check_dataset(dataset, spec)?;
    let k = spec.k();
    let expert = expert_features(dataset, spec, &cfg.proximity)?;
    let mut theta = cfg.initial_theta();
    let mut trace = TrainingTrace::default();
    let mut converged = false;
    let mut iterations = 0;

    for iteration in 0..cfg.max_iters {
        iterations = iteration + 1;
        let thetas = vec![theta; k];
        let sol = solve_game(spec, &thetas, &cfg.proximity, &cfg.solver)
            .map_err(wrap(iteration, 0))?;
        let seed = substream(cfg.seed, &[iteration as u64]);
        let samples = sample_rollouts(&sol.policies, spec, cfg.rollouts, seed)
            .map_err(wrap(iteration, 0))?;
        let mut acc = [0.0; NUM_FEATURES];
        for (i, exp) in expert.iter().enumerate() {
            let phi = expected_features(&samples, i, spec.goals[i], &cfg.proximity)?;
            for (a, g) in acc.iter_mut().zip(phi.sub(exp)) {
                *a += g;
            }
        }
        let gap = cfg.mask(acc.map(|a| a / k as f64));
        let gap_norm = norm(&gap);
        let before = theta;
        theta = update_theta(
            &before,
            &FeatureVector::from_array(gap),
            &FeatureVector::default(),
            cfg.beta,
        );
        trace.records.push(TraceRecord {
            iteration,
            agent: 0,
            theta_before: before.weights,
            theta_after: theta.weights,
            gap,
            gap_norm,
            conditioned_stages: sol.diagnostics.conditioned_stages(),
        });
        if gap_norm < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("single-agent IRL stopped after {iterations} iterations without converging");
    }
    Ok(TrainingOutcome {
        thetas: vec![theta; k],
        trace,
        converged,
        iterations,
    })
}

/// Deterministic prediction of learned weights: the mean rollout of the
/// solved game.
pub fn predict_mean(
    thetas: &[CostParams],
    spec: &ScenarioSpec,
    cfg: &TrainingConfig,
) -> Result<Trajectory> {
    let sol = solve_game(spec, thetas, &cfg.proximity, &cfg.solver)?;
    mean_rollout(&sol.policies, spec)
}
