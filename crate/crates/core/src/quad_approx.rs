//! Quadratic Taylor expansion of stage costs by central finite differences,
//! plus the (exact) linear dynamics of the stacked double integrator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::AgentCostModel;
use crate::traj::{Trajectory, CONTROL_DIM, STATE_DIM};

pub const DEFAULT_FD_STEP: f64 = 1e-3;

/// Second-order model `c + lᵀδ + ½ δᵀHδ` of one stage cost.
///
/// For running stages `δ = [δx; δuⁱ]` (length 4k+2); for the terminal stage
/// `δ = δx` only.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticStage {
    pub h: DMatrix<f64>,
    pub l: DVector<f64>,
    pub c: f64,
}

impl QuadraticStage {
    pub fn dim(&self) -> usize {
        self.l.len()
    }

    pub fn hxx(&self, n: usize) -> DMatrix<f64> {
        self.h.view((0, 0), (n, n)).into_owned()
    }

    /// Control-state block `∂²/∂u∂x`, shape `m × n`.
    pub fn hux(&self, n: usize) -> DMatrix<f64> {
        let m = self.dim() - n;
        self.h.view((n, 0), (m, n)).into_owned()
    }

    pub fn huu(&self, n: usize) -> DMatrix<f64> {
        let m = self.dim() - n;
        self.h.view((n, n), (m, m)).into_owned()
    }

    pub fn lx(&self, n: usize) -> DVector<f64> {
        self.l.rows(0, n).into_owned()
    }

    pub fn lu(&self, n: usize) -> DVector<f64> {
        let m = self.dim() - n;
        self.l.rows(n, m).into_owned()
    }

    /// Evaluates the model at deviation `delta`.
    pub fn eval(&self, delta: &DVector<f64>) -> f64 {
        self.c + self.l.dot(delta) + 0.5 * delta.dot(&(&self.h * delta))
    }
}

/// `x' = A x + Σᵢ Bⁱ uⁱ` for k stacked double integrators.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
}

impl LinearDynamics {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn k(&self) -> usize {
        self.b.len()
    }
}

pub fn linearize_dynamics(k: usize, dt: f64) -> LinearDynamics {
    let n = STATE_DIM * k;
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = Vec::with_capacity(k);
    for i in 0..k {
        let o = STATE_DIM * i;
        a[(o, o + 2)] = dt;
        a[(o + 1, o + 3)] = dt;
        let mut bi = DMatrix::<f64>::zeros(n, CONTROL_DIM);
        bi[(o, 0)] = 0.5 * dt * dt;
        bi[(o + 1, 1)] = 0.5 * dt * dt;
        bi[(o + 2, 0)] = dt;
        bi[(o + 3, 1)] = dt;
        b.push(bi);
    }
    LinearDynamics { a, b }
}

fn eval_checked<F: Fn(&[f64]) -> f64>(f: &F, z: &[f64]) -> Result<f64> {
    let v = f(z);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteCost { point: z.to_vec() })
    }
}

/// Central-difference gradient and Hessian of `costfn` at `nominal`.
///
/// The step for coordinate `j` is `h · max(1, |z_j|)`. The Hessian is
/// symmetrized before returning.
pub fn taylor_expand<F>(costfn: F, nominal: &[f64], h: f64) -> Result<QuadraticStage>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::validation("fd_step", format!("must be > 0, got {h}")));
    }
    let n = nominal.len();
    let steps: Vec<f64> = nominal.iter().map(|z| h * z.abs().max(1.0)).collect();
    let mut z = nominal.to_vec();
    let f0 = eval_checked(&costfn, &z)?;

    let mut f_plus = vec![0.0; n];
    let mut f_minus = vec![0.0; n];
    for j in 0..n {
        z[j] = nominal[j] + steps[j];
        f_plus[j] = eval_checked(&costfn, &z)?;
        z[j] = nominal[j] - steps[j];
        f_minus[j] = eval_checked(&costfn, &z)?;
        z[j] = nominal[j];
    }

    let l = DVector::from_fn(n, |j, _| (f_plus[j] - f_minus[j]) / (2.0 * steps[j]));
    let mut hess = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        hess[(j, j)] = (f_plus[j] - 2.0 * f0 + f_minus[j]) / (steps[j] * steps[j]);
        for m in (j + 1)..n {
            let mut probe = |sj: f64, sm: f64| {
                z[j] = nominal[j] + sj * steps[j];
                z[m] = nominal[m] + sm * steps[m];
                let v = eval_checked(&costfn, &z);
                z[j] = nominal[j];
                z[m] = nominal[m];
                v
            };
            let fpp = probe(1.0, 1.0)?;
            let fpm = probe(1.0, -1.0)?;
            let fmp = probe(-1.0, 1.0)?;
            let fmm = probe(-1.0, -1.0)?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * steps[j] * steps[m]);
            hess[(j, m)] = v;
            hess[(m, j)] = v;
        }
    }
    symmetrize(&mut hess);
    Ok(QuadraticStage { h: hess, l, c: f0 })
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn stage_point(nominal: &Trajectory, agent: usize, t: usize) -> Vec<f64> {
    let mut z: Vec<f64> = nominal.states[t].to_vector().iter().copied().collect();
    let u = nominal.controls[agent][t];
    z.extend([u.ax, u.ay]);
    z
}

/// Expands `costfn` over `[x; uⁱ]` at every running stage `t = 0..T−1` of
/// the nominal trajectory.
pub fn expand_along<F>(
    costfn: F,
    nominal: &Trajectory,
    agent: usize,
    h: f64,
) -> Result<Vec<QuadraticStage>>
where
    F: Fn(usize, &[f64]) -> f64,
{
    nominal.validate()?;
    if agent >= nominal.k() {
        return Err(Error::AgentIndex {
            index: agent,
            k: nominal.k(),
        });
    }
    (0..nominal.horizon())
        .map(|t| taylor_expand(|z| costfn(t, z), &stage_point(nominal, agent, t), h))
        .collect()
}

/// Running stages plus the terminal (state-only) stage of one agent.
#[derive(Debug, Clone)]
pub struct AgentExpansion {
    pub stages: Vec<QuadraticStage>,
    pub terminal: QuadraticStage,
}

/// Expansion of a feature cost. Only the state part is differenced; the
/// effort term is exactly `c‖u‖²`, so its block is filled in analytically.
pub fn expand_agent_cost(
    model: &AgentCostModel,
    nominal: &Trajectory,
    h: f64,
) -> Result<AgentExpansion> {
    nominal.validate()?;
    let agent = model.agent;
    if agent >= nominal.k() {
        return Err(Error::AgentIndex {
            index: agent,
            k: nominal.k(),
        });
    }
    let n = STATE_DIM * nominal.k();
    let cw = model.control_weight();
    let state_expansion = |t: usize| -> Result<QuadraticStage> {
        let x: Vec<f64> = nominal.states[t].to_vector().iter().copied().collect();
        taylor_expand(|z| model.state_cost(z), &x, h)
    };

    let mut stages = Vec::with_capacity(nominal.horizon());
    for t in 0..nominal.horizon() {
        let sx = state_expansion(t)?;
        let u = nominal.controls[agent][t];
        let mut hfull = DMatrix::<f64>::zeros(n + CONTROL_DIM, n + CONTROL_DIM);
        hfull.view_mut((0, 0), (n, n)).copy_from(&sx.h);
        hfull[(n, n)] = 2.0 * cw;
        hfull[(n + 1, n + 1)] = 2.0 * cw;
        let mut l = DVector::<f64>::zeros(n + CONTROL_DIM);
        l.rows_mut(0, n).copy_from(&sx.l);
        l[n] = 2.0 * cw * u.ax;
        l[n + 1] = 2.0 * cw * u.ay;
        let c = sx.c + cw * (u.ax * u.ax + u.ay * u.ay);
        stages.push(QuadraticStage { h: hfull, l, c });
    }
    let terminal = state_expansion(nominal.horizon())?;
    Ok(AgentExpansion { stages, terminal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{CostParams, ProximityConfig};
    use crate::traj::{rollout_openloop, AgentState, ControlInput, JointState, ScenarioSpec};
    use proptest::prelude::*;

    #[test]
    fn dynamics_blocks() {
        let d = linearize_dynamics(1, 1.0);
        assert_eq!(d.a.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 1.0, 0.0]);
        let d = linearize_dynamics(2, 0.3);
        assert_eq!(d.a.shape(), (8, 8));
        assert_eq!(d.a.view((0, 0), (4, 4)), d.a.view((4, 4), (4, 4)));
        assert!(d.a.view((0, 4), (4, 4)).iter().all(|v| *v == 0.0));
        for o in [0, 4] {
            assert_eq!(d.a[(o + 2, o + 2)], 1.0);
            assert_eq!(d.a[(o + 3, o + 3)], 1.0);
            assert_eq!(d.a[(o + 2, o + 3)], 0.0);
        }
        assert!(d.b[0].rows(4, 4).iter().all(|v| *v == 0.0));
        assert!(d.b[1].rows(0, 4).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dynamics_match_propagate() {
        let d = linearize_dynamics(1, 0.25);
        let s = AgentState::new(1.0, -2.0, 0.5, 0.7).unwrap();
        let u = ControlInput::new(-0.4, 1.1);
        let next = crate::traj::propagate(&s, &u, 0.25).unwrap();
        let x = JointState::new(vec![s]).unwrap().to_vector();
        let y = &d.a * x + &d.b[0] * DVector::from_vec(vec![u.ax, u.ay]);
        let want = JointState::new(vec![next]).unwrap().to_vector();
        assert!((y - want).amax() < 1e-15);
    }

    #[test]
    fn expand_squared_norm() {
        let q = taylor_expand(|z| z.iter().map(|v| v * v).sum(), &[0.0; 5], 1e-3).unwrap();
        assert!((q.h.clone() - DMatrix::identity(5, 5) * 2.0).amax() < 1e-6);
        assert!(q.l.amax() < 1e-6);
        assert!(q.c.abs() < 1e-6);
    }

    #[test]
    fn expand_constant_and_linear() {
        let q = taylor_expand(|_| 7.5, &[1.0, -3.0, 2.0], 1e-3).unwrap();
        assert!(q.h.amax() == 0.0 && q.l.amax() == 0.0);
        assert_eq!(q.c, 7.5);

        let a = [0.5, -2.0, 3.0];
        let q = taylor_expand(
            |z| z.iter().zip(&a).map(|(x, w)| x * w).sum(),
            &[0.1, 0.2, -0.3],
            1e-3,
        )
        .unwrap();
        assert!(q.h.amax() < 1e-8);
        for j in 0..3 {
            assert!((q.l[j] - a[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn non_finite_cost_reports_probe() {
        let err = taylor_expand(|z| if z[0] > 0.0 { f64::NAN } else { 0.0 }, &[0.0], 1e-3)
            .unwrap_err();
        match err {
            Error::NonFiniteCost { point } => assert!(point[0] > 0.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(taylor_expand(|_| 0.0, &[0.0], 0.0).is_err());
    }

    fn two_agent_nominal(horizon: usize) -> Trajectory {
        let x0 = JointState::new(vec![
            AgentState::new(-2.0, 0.1, 1.0, 0.0).unwrap(),
            AgentState::new(2.0, -0.1, -1.0, 0.0).unwrap(),
        ])
        .unwrap();
        let spec = ScenarioSpec::new(x0, vec![[3.0, 0.0], [-3.0, 0.0]], horizon, 0.1).unwrap();
        rollout_openloop(&spec, &vec![vec![ControlInput::ZERO; horizon]; 2]).unwrap()
    }

    #[test]
    fn expand_along_shapes() {
        let nominal = two_agent_nominal(4);
        let quad = |_t: usize, z: &[f64]| z.iter().map(|v| 3.0 * v * v).sum::<f64>();
        let stages = expand_along(quad, &nominal, 0, 1e-3).unwrap();
        assert_eq!(stages.len(), 4);
        for s in &stages {
            assert!((&s.h - &stages[0].h).amax() < 1e-6);
        }
        let nominal1 = two_agent_nominal(1);
        assert_eq!(expand_along(quad, &nominal1, 1, 1e-3).unwrap().len(), 1);

        let state_only = |_t: usize, z: &[f64]| z[..8].iter().map(|v| v * v).sum::<f64>();
        let stages = expand_along(state_only, &nominal, 1, 1e-3).unwrap();
        for s in &stages {
            assert!(s.huu(8).amax() < 1e-8);
            assert!(s.hux(8).amax() < 1e-8);
        }
    }

    #[test]
    fn fast_path_matches_generic_expansion() {
        let nominal = two_agent_nominal(5);
        let model = AgentCostModel {
            agent: 0,
            goal: [3.0, 0.0],
            theta: CostParams::new([1.0, 2.0, 0.5]).unwrap(),
            proximity: ProximityConfig::default(),
            horizon: 5,
        };
        let fast = expand_agent_cost(&model, &nominal, 1e-3).unwrap();
        let generic = expand_along(|_, z| model.stage_cost(z), &nominal, 0, 1e-3).unwrap();
        for (a, b) in fast.stages.iter().zip(&generic) {
            assert!((&a.h - &b.h).amax() < 1e-6, "{}", (&a.h - &b.h).amax());
            assert!((&a.l - &b.l).amax() < 1e-8);
            assert!((a.c - b.c).abs() < 1e-12);
        }
        assert_eq!(fast.terminal.dim(), 8);
    }

    #[test]
    fn gradient_check_on_feature_cost() {
        let nominal = two_agent_nominal(3);
        let model = AgentCostModel {
            agent: 1,
            goal: [-3.0, 0.0],
            theta: CostParams::new([0.8, 1.5, 0.3]).unwrap(),
            proximity: ProximityConfig { sigma: 1.2 },
            horizon: 3,
        };
        let x: Vec<f64> = nominal.states[2].to_vector().iter().copied().collect();
        let h = 1e-4;
        let q = taylor_expand(|z| model.state_cost(z), &x, h).unwrap();
        for j in 0..x.len() {
            let step = h * x[j].abs().max(1.0);
            let mut p = x.clone();
            p[j] += step;
            let fp = model.state_cost(&p);
            p[j] -= 2.0 * step;
            let fm = model.state_cost(&p);
            assert!((q.l[j] - (fp - fm) / (2.0 * step)).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn recovers_exact_quadratic(
            entries in prop::collection::vec(-3.0..3.0f64, 16),
            lin in prop::collection::vec(-3.0..3.0f64, 4),
            at in prop::collection::vec(-5.0..5.0f64, 4),
            log_h in -4.0..-2.0f64,
        ) {
            let m = DMatrix::from_vec(4, 4, entries);
            let q = &m + m.transpose();
            let g = DVector::from_vec(lin);
            let f = |z: &[f64]| {
                let v = DVector::from_column_slice(z);
                0.5 * v.dot(&(&q * &v)) + g.dot(&v)
            };
            let h = 10f64.powf(log_h);
            let stage = taylor_expand(f, &at, h).unwrap();
            let x = DVector::from_vec(at.clone());
            let grad = &q * &x + &g;
            let scale = q.amax().max(1.0);
            prop_assert!((&stage.h - &q).amax() <= 1e-6 * scale);
            prop_assert!((&stage.l - &grad).amax() <= 1e-6 * grad.amax().max(1.0));
            prop_assert_eq!((&stage.h - stage.h.transpose()).amax(), 0.0);
        }
    }
}
