//! Entropy-regularized linear-quadratic dynamic game.
//!
//! Each agent's cost is expanded to second order around a nominal joint
//! trajectory; a coupled backward Riccati recursion then yields the
//! feedback-Nash affine policy of every agent. Each policy is Gaussian: the
//! mean is the Nash control and the covariance is `temperature · (∂²Qⁱ/∂uⁱ²)⁻¹`,
//! conditioned to stay positive definite.

mod conditioning;
mod rollout;

pub use conditioning::{
    condition_covariance, min_eigenvalue, symmetric_pinv, Conditioned, DEFAULT_EPS_PSD,
};
pub use rollout::{mean_rollout, sample_rollouts};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{AgentCostModel, CostParams, ProximityConfig};
use crate::quad_approx::{
    expand_agent_cost, linearize_dynamics, symmetrize, AgentExpansion, LinearDynamics,
    DEFAULT_FD_STEP,
};
use crate::traj::{rollout_openloop, ControlInput, ScenarioSpec, Trajectory, CONTROL_DIM};

const MAX_CONDITION_NUMBER: f64 = 1e12;
const PINV_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub eps_psd: f64,
    /// Scale of the policy covariance. Zero gives deterministic policies.
    pub entropy_temp: f64,
    /// Number of expand-and-solve passes; passes after the first re-expand
    /// around the previous mean rollout.
    pub max_outer_iters: usize,
    pub line_tol: f64,
    pub fd_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_psd: DEFAULT_EPS_PSD,
            entropy_temp: 1.0,
            max_outer_iters: 1,
            line_tol: 1e-6,
            fd_step: DEFAULT_FD_STEP,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_psd > 0.0 && self.eps_psd.is_finite()) {
            return Err(Error::validation("eps_psd", "must be > 0"));
        }
        if !(self.entropy_temp >= 0.0 && self.entropy_temp.is_finite()) {
            return Err(Error::validation("entropy_temp", "must be >= 0"));
        }
        if self.max_outer_iters < 1 {
            return Err(Error::validation("max_outer_iters", "must be >= 1"));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::validation("fd_step", "must be > 0"));
        }
        Ok(())
    }
}

/// One agent's Gaussian feedback policy at one time step:
/// `uⁱ ~ N(ūⁱ + kff − K·(x − x̄), Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStage {
    pub gain: DMatrix<f64>,
    pub kff: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// Lower Cholesky factor of `sigma`; `None` for a deterministic policy.
    chol: Option<DMatrix<f64>>,
}

impl PolicyStage {
    /// Builds a stage, checking that a nonzero covariance is positive definite.
    pub fn new(gain: DMatrix<f64>, kff: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        if gain.nrows() != CONTROL_DIM || kff.len() != CONTROL_DIM || sigma.shape() != (2, 2) {
            return Err(Error::validation("policy", "stage dimensions must be 2×n, 2, 2×2"));
        }
        let chol = if sigma.iter().all(|v| *v == 0.0) {
            None
        } else {
            let c = sigma.clone().cholesky().ok_or_else(|| {
                Error::Invariant(format!("policy covariance is not positive definite: {sigma}"))
            })?;
            Some(c.l())
        };
        Ok(Self {
            gain,
            kff,
            sigma,
            chol,
        })
    }

    pub(crate) fn cholesky(&self) -> Option<&DMatrix<f64>> {
        self.chol.as_ref()
    }
}

/// Time-varying Gaussian policies of all agents, tied to the nominal
/// trajectory they were expanded around.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySequence {
    /// `stages[i][t]`.
    pub stages: Vec<Vec<PolicyStage>>,
    pub nominal: Trajectory,
}

impl PolicySequence {
    pub fn new(stages: Vec<Vec<PolicyStage>>, nominal: Trajectory) -> Result<Self> {
        nominal.validate()?;
        let (k, t) = (nominal.k(), nominal.horizon());
        if stages.len() != k || stages.iter().any(|s| s.len() != t) {
            return Err(Error::validation(
                "policy",
                format!("expected {k} agents × {t} stages"),
            ));
        }
        let n = 4 * k;
        if stages.iter().flatten().any(|s| s.gain.ncols() != n) {
            return Err(Error::validation("policy", format!("gains must have {n} columns")));
        }
        Ok(Self { stages, nominal })
    }

    pub fn k(&self) -> usize {
        self.stages.len()
    }

    pub fn horizon(&self) -> usize {
        self.nominal.horizon()
    }

    /// Mean control of agent `i` at step `t` for joint state `x`.
    pub fn mean_control(&self, i: usize, t: usize, x: &DVector<f64>) -> DVector<f64> {
        let stage = &self.stages[i][t];
        let dx = x - self.nominal.states[t].to_vector();
        let u = self.nominal.controls[i][t];
        DVector::from_vec(vec![u.ax, u.ay]) + &stage.kff - &stage.gain * dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningEvent {
    pub agent: usize,
    pub t: usize,
    /// Smallest eigenvalue of the control Hessian of the agent's Q-function.
    pub huu_min_eig: f64,
    pub shift: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub events: Vec<ConditioningEvent>,
    pub outer_iters: usize,
}

impl SolverDiagnostics {
    pub fn conditioned_stages(&self) -> usize {
        self.events.len()
    }
}

pub struct LqSolution {
    pub stages: Vec<Vec<PolicyStage>>,
    pub diagnostics: SolverDiagnostics,
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let (max, min) = (sv.max(), sv.min());
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Backward feedback-Nash recursion over the quadratic expansions of every
/// agent. `expansions[i]` holds agent `i`'s running and terminal stages.
pub fn solve_lq_game(
    dynamics: &LinearDynamics,
    expansions: &[AgentExpansion],
    cfg: &SolverConfig,
) -> Result<LqSolution> {
    cfg.validate()?;
    let k = dynamics.k();
    let n = dynamics.state_dim();
    let m = CONTROL_DIM;
    if expansions.len() != k {
        return Err(Error::validation(
            "expansions",
            format!("expected {k} agents, got {}", expansions.len()),
        ));
    }
    let horizon = expansions[0].stages.len();
    for (i, e) in expansions.iter().enumerate() {
        if e.stages.len() != horizon {
            return Err(Error::validation(
                "expansions",
                format!("agent {i} has {} stages, expected {horizon}", e.stages.len()),
            ));
        }
        if e.terminal.dim() != n || e.stages.iter().any(|s| s.dim() != n + m) {
            return Err(Error::validation(
                "expansions",
                format!("agent {i} stage dimensions do not match state dim {n}"),
            ));
        }
    }

    let a = &dynamics.a;
    let b = &dynamics.b;
    let mut value_h: Vec<DMatrix<f64>> = expansions.iter().map(|e| e.terminal.h.clone()).collect();
    let mut value_l: Vec<DVector<f64>> = expansions.iter().map(|e| e.terminal.l.clone()).collect();
    let mut stages: Vec<Vec<Option<PolicyStage>>> = vec![vec![None; horizon]; k];
    let mut diagnostics = SolverDiagnostics::default();

    for t in (0..horizon).rev() {
        // Coupled first-order conditions: S·[K¹;…;Kᵏ] = Y and S·[α¹;…;αᵏ] = y,
        // with δuⁱ = −Kⁱδx − αⁱ.
        let mut s = DMatrix::<f64>::zeros(k * m, k * m);
        let mut y_gain = DMatrix::<f64>::zeros(k * m, n);
        let mut y_ff = DVector::<f64>::zeros(k * m);
        let mut huu_q = Vec::with_capacity(k);
        for i in 0..k {
            let stage = &expansions[i].stages[t];
            let bt_p = b[i].transpose() * &value_h[i];
            for j in 0..k {
                let mut blk = &bt_p * &b[j];
                if i == j {
                    blk += stage.huu(n);
                    let mut q = blk.clone();
                    symmetrize(&mut q);
                    huu_q.push(q);
                }
                s.view_mut((i * m, j * m), (m, m)).copy_from(&blk);
            }
            y_gain
                .view_mut((i * m, 0), (m, n))
                .copy_from(&(&bt_p * a + stage.hux(n)));
            y_ff
                .rows_mut(i * m, m)
                .copy_from(&(b[i].transpose() * &value_l[i] + stage.lu(n)));
        }

        let cond = condition_number(&s);
        if !(cond <= MAX_CONDITION_NUMBER) {
            return Err(Error::SingularGainSystem { t, condition: cond });
        }
        let lu = s.lu();
        let gains_all = lu
            .solve(&y_gain)
            .ok_or(Error::SingularGainSystem { t, condition: cond })?;
        let alpha_all = lu
            .solve(&y_ff)
            .ok_or(Error::SingularGainSystem { t, condition: cond })?;

        let mut closed = a.clone();
        let mut drift = DVector::<f64>::zeros(n);
        for j in 0..k {
            let kj = gains_all.rows(j * m, m);
            let aj = alpha_all.rows(j * m, m);
            closed -= &b[j] * kj;
            drift -= &b[j] * aj;
        }

        for i in 0..k {
            let stage = &expansions[i].stages[t];
            let gain = gains_all.rows(i * m, m).into_owned();
            let alpha = alpha_all.rows(i * m, m).into_owned();
            let (hxx, hux, huu) = (stage.hxx(n), stage.hux(n), stage.huu(n));
            let (lx, lu_i) = (stage.lx(n), stage.lu(n));
            let gt = gain.transpose();
            let hxu = hux.transpose();

            let p_next = &value_h[i];
            let mut p = &hxx + &gt * &huu * &gain - &hxu * &gain - &gt * &hux
                + closed.transpose() * p_next * &closed;
            symmetrize(&mut p);
            let pl = &lx - &gt * &lu_i - &hxu * &alpha
                + &gt * &huu * &alpha
                + closed.transpose() * (p_next * &drift + &value_l[i]);

            let sigma = if cfg.entropy_temp == 0.0 {
                DMatrix::zeros(m, m)
            } else {
                let q = &huu_q[i];
                let raw = symmetric_pinv(q, PINV_CUTOFF) * cfg.entropy_temp;
                let conditioned = condition_covariance(&raw, cfg.eps_psd)?;
                let huu_min = min_eigenvalue(q)?;
                if huu_min < cfg.eps_psd || conditioned.shift > 0.0 {
                    diagnostics.events.push(ConditioningEvent {
                        agent: i,
                        t,
                        huu_min_eig: huu_min,
                        shift: conditioned.shift,
                    });
                }
                conditioned.sigma
            };
            stages[i][t] = Some(PolicyStage::new(gain, -alpha, sigma)?);
            value_h[i] = p;
            value_l[i] = pl;
        }
    }

    diagnostics
        .events
        .sort_by_key(|x| (x.agent, x.t));
    let stages = stages
        .into_iter()
        .map(|row| row.into_iter().map(|s| s.expect("every stage solved")).collect())
        .collect();
    Ok(LqSolution {
        stages,
        diagnostics,
    })
}

/// Constant-velocity nominal: zero controls from `spec.x0`.
pub fn constant_velocity_nominal(spec: &ScenarioSpec) -> Result<Trajectory> {
    rollout_openloop(spec, &vec![vec![ControlInput::ZERO; spec.horizon]; spec.k()])
}

pub fn agent_cost_models(
    spec: &ScenarioSpec,
    thetas: &[CostParams],
    proximity: &ProximityConfig,
) -> Result<Vec<AgentCostModel>> {
    if thetas.len() != spec.k() {
        return Err(Error::validation(
            "theta",
            format!("expected {} weight vectors, got {}", spec.k(), thetas.len()),
        ));
    }
    proximity.validate()?;
    Ok(thetas
        .iter()
        .enumerate()
        .map(|(i, theta)| AgentCostModel {
            agent: i,
            goal: spec.goals[i],
            theta: *theta,
            proximity: *proximity,
            horizon: spec.horizon,
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct GameSolution {
    pub policies: PolicySequence,
    pub diagnostics: SolverDiagnostics,
}

/// Expands every agent's feature cost around the constant-velocity nominal
/// and solves the resulting LQ game. With `max_outer_iters > 1` the
/// expansion is repeated around each new mean rollout until it moves less
/// than `line_tol`.
pub fn solve_game(
    spec: &ScenarioSpec,
    thetas: &[CostParams],
    proximity: &ProximityConfig,
    cfg: &SolverConfig,
) -> Result<GameSolution> {
    spec.validate()?;
    cfg.validate()?;
    let models = agent_cost_models(spec, thetas, proximity)?;
    let dynamics = linearize_dynamics(spec.k(), spec.dt);
    let mut nominal = constant_velocity_nominal(spec)?;
    let mut solution: Option<GameSolution> = None;

    for pass in 1..=cfg.max_outer_iters {
        let expansions = models
            .iter()
            .map(|model| expand_agent_cost(model, &nominal, cfg.fd_step))
            .collect::<Result<Vec<_>>>()?;
        let lq = solve_lq_game(&dynamics, &expansions, cfg)?;
        let policies = PolicySequence::new(lq.stages, nominal.clone())?;
        let mut diagnostics = lq.diagnostics;
        diagnostics.outer_iters = pass;
        let next = mean_rollout(&policies, spec)?;
        solution = Some(GameSolution {
            policies,
            diagnostics,
        });
        if pass == cfg.max_outer_iters {
            break;
        }
        let moved = next
            .states
            .iter()
            .zip(&nominal.states)
            .map(|(a, b)| (a.to_vector() - b.to_vector()).amax())
            .fold(0.0, f64::max);
        if moved < cfg.line_tol {
            break;
        }
        nominal = next;
    }
    Ok(solution.expect("at least one pass"))
}
