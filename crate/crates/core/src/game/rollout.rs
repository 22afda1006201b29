use nalgebra::{DVector, Vector2};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::PolicySequence;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::traj::{step, ControlInput, JointState, ScenarioSpec, Trajectory};

fn check_compatible(policies: &PolicySequence, spec: &ScenarioSpec) -> Result<()> {
    spec.validate()?;
    if policies.k() != spec.k() || policies.horizon() != spec.horizon {
        return Err(Error::validation(
            "policies",
            format!(
                "policy covers {} agents × {} steps, scenario has {} × {}",
                policies.k(),
                policies.horizon(),
                spec.k(),
                spec.horizon
            ),
        ));
    }
    Ok(())
}

/// Runs the closed loop from `spec.x0`. `noise(i, t)` returns the standard
/// normal draw for agent `i` at step `t`, or `None` for the mean control.
fn closed_loop<F>(policies: &PolicySequence, spec: &ScenarioSpec, mut noise: F) -> Result<Trajectory>
where
    F: FnMut(usize, usize) -> Option<Vector2<f64>>,
{
    let k = spec.k();
    let mut states = Vec::with_capacity(spec.horizon + 1);
    let mut controls = vec![Vec::with_capacity(spec.horizon); k];
    states.push(spec.x0.clone());
    for t in 0..spec.horizon {
        let x = states[t].to_vector();
        let mut next = Vec::with_capacity(k);
        for (i, agent_controls) in controls.iter_mut().enumerate() {
            let mut u: DVector<f64> = policies.mean_control(i, t, &x);
            if let Some(z) = noise(i, t) {
                let stage = &policies.stages[i][t];
                if let Some(l) = stage.cholesky() {
                    u += l * DVector::from_column_slice(z.as_slice());
                }
            }
            if !(u[0].is_finite() && u[1].is_finite()) {
                return Err(Error::Invariant(format!(
                    "non-finite control for agent {i} at t={t}"
                )));
            }
            let u = ControlInput::new(u[0], u[1]).clamped(spec.u_max);
            next.push(step(&states[t].agents[i], &u, spec.dt));
            agent_controls.push(u);
        }
        states.push(JointState { agents: next });
    }
    Ok(Trajectory {
        states,
        controls,
        dt: spec.dt,
    })
}

/// Draws `m` closed-loop rollouts. The draw for agent `i` at step `t` of
/// rollout `r` comes from the stream keyed by `(seed, r, t, i)`, so the
/// result does not depend on the thread pool.
pub fn sample_rollouts(
    policies: &PolicySequence,
    spec: &ScenarioSpec,
    m: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    check_compatible(policies, spec)?;
    if m < 1 {
        return Err(Error::validation("rollouts", "M must be >= 1"));
    }
    (0..m)
        .into_par_iter()
        .map(|r| {
            closed_loop(policies, spec, |i, t| {
                let mut rng = stream_rng(seed, &[r as u64, t as u64, i as u64]);
                Some(Vector2::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                ))
            })
        })
        .collect()
}

/// Deterministic rollout using the policy means.
pub fn mean_rollout(policies: &PolicySequence, spec: &ScenarioSpec) -> Result<Trajectory> {
    check_compatible(policies, spec)?;
    closed_loop(policies, spec, |_, _| None)
}
