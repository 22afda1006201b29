//! Comparison methods: a Gaussian-mixture action model fitted by EM, an
//! energy-based policy with a quadratic energy, constant-velocity
//! extrapolation, and the [`Predictor`] interface used by evaluation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ade;
use crate::features::CostParams;
use crate::game::{mean_rollout, sample_rollouts, solve_game};
use crate::irl::TrainingConfig;
use crate::rng::{stream_rng, substream};
use crate::traj::{
    propagate, rollout_openloop, step, AgentState, ControlInput, JointState, ScenarioSpec, Trajectory,
};

pub const COVARIANCE_FLOOR: f64 = 1e-8;
pub const DEFAULT_RIDGE: f64 = 1e-6;
const LL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub components: Vec<GaussianComponent>,
}

impl GmmModel {
    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if self.components.is_empty() || (total - 1.0).abs() > 1e-9 {
            return Err(Error::validation("weights", format!("must sum to 1, got {total}")));
        }
        Ok(())
    }

    /// Weighted mean of the component means.
    pub fn mean(&self) -> DVector<f64> {
        self.components
            .iter()
            .fold(DVector::zeros(self.dim()), |acc, c| acc + &c.mean * c.weight)
    }
}

fn log_normal(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Invariant("component covariance is not positive definite".into()))?;
    let diff = x - mean;
    let z = chol.l().solve_lower_triangular(&diff).expect("nonsingular factor");
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let d = x.len() as f64;
    Ok(-0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + z.norm_squared()))
}

pub fn gmm_pdf(model: &GmmModel, x: &DVector<f64>) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::validation(
            "x",
            format!("dimension {} does not match model dimension {}", x.len(), model.dim()),
        ));
    }
    let mut p = 0.0;
    for c in &model.components {
        p += c.weight * log_normal(x, &c.mean, &c.cov)?.exp();
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmConfig {
    pub components: usize,
    pub max_em_iters: usize,
    pub tol: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            components: 3,
            max_em_iters: 200,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Total log-likelihood before each M-step.
    pub log_likelihoods: Vec<f64>,
    pub reseeded: usize,
}

fn floor_covariance(cov: DMatrix<f64>) -> DMatrix<f64> {
    let cov = (&cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(cov.clone());
    if eig.eigenvalues.min() >= COVARIANCE_FLOOR {
        return cov;
    }
    let floored = eig.eigenvalues.map(|l| l.max(COVARIANCE_FLOOR));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&floored) * v.transpose();
    (&out + out.transpose()) * 0.5
}

fn weighted_moments(samples: &[DVector<f64>], w: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let d = samples[0].len();
    let total: f64 = w.iter().sum();
    let mean = samples
        .iter()
        .zip(w)
        .fold(DVector::zeros(d), |acc, (x, &wi)| acc + x * wi)
        / total;
    let cov = samples.iter().zip(w).fold(DMatrix::zeros(d, d), |acc, (x, &wi)| {
        let diff = x - &mean;
        acc + &diff * diff.transpose() * wi
    }) / total;
    (mean, cov)
}

fn kmeans_pp(samples: &[DVector<f64>], k: usize, rng: &mut impl Rng) -> Vec<DVector<f64>> {
    let mut centers = vec![samples[rng.random_range(0..samples.len())].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = samples
            .iter()
            .map(|x| {
                centers
                    .iter()
                    .map(|c| (x - c).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut j = 0;
            while j + 1 < d2.len() && r >= d2[j] {
                r -= d2[j];
                j += 1;
            }
            j
        } else {
            rng.random_range(0..samples.len())
        };
        centers.push(samples[pick].clone());
    }
    centers
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// EM fit with k-means++ initialisation. Components whose responsibility
/// mass vanishes are re-seeded at the sample farthest from every mean.
pub fn gmm_fit(samples: &[DVector<f64>], seed: u64, cfg: &GmmConfig) -> Result<GmmFit> {
    let k = cfg.components;
    let first = samples.first().ok_or(Error::Empty("sample set"))?;
    let d = first.len();
    if k == 0 || d == 0 {
        return Err(Error::validation("components", "K and d must be >= 1"));
    }
    if samples.iter().any(|x| x.len() != d) {
        return Err(Error::validation("samples", "inconsistent dimensions"));
    }
    let needed = k * (d + 1);
    if samples.len() < needed {
        return Err(Error::TooFewSamples {
            needed,
            got: samples.len(),
        });
    }
    let n = samples.len();
    let mut rng = stream_rng(seed, &[]);
    let (_, global_cov) = weighted_moments(samples, &vec![1.0; n]);
    let global_cov = floor_covariance(global_cov);
    let mut comps: Vec<GaussianComponent> = kmeans_pp(samples, k, &mut rng)
        .into_iter()
        .map(|mean| GaussianComponent {
            weight: 1.0 / k as f64,
            mean,
            cov: global_cov.clone(),
        })
        .collect();

    let mut lls: Vec<f64> = Vec::new();
    let mut reseeded = 0;
    let mut reseeded_last = false;
    let mut resp = vec![vec![0.0; n]; k];
    for _ in 0..cfg.max_em_iters {
        let mut ll = 0.0;
        let mut logp = vec![0.0; k];
        for (s, x) in samples.iter().enumerate() {
            for (c, comp) in comps.iter().enumerate() {
                logp[c] = comp.weight.ln() + log_normal(x, &comp.mean, &comp.cov)?;
            }
            let lse = log_sum_exp(&logp);
            ll += lse;
            for c in 0..k {
                resp[c][s] = (logp[c] - lse).exp();
            }
        }
        if let Some(&prev) = lls.last() {
            if !reseeded_last && ll < prev - LL_SLACK * prev.abs().max(1.0) {
                return Err(Error::Invariant(format!(
                    "EM log-likelihood decreased from {prev} to {ll}"
                )));
            }
        }
        let converged = lls
            .last()
            .is_some_and(|&prev| (ll - prev).abs() <= cfg.tol * prev.abs().max(1.0));
        lls.push(ll);
        if converged {
            break;
        }

        reseeded_last = false;
        for c in 0..k {
            let mass: f64 = resp[c].iter().sum();
            if mass <= 1e-10 * n as f64 {
                let far = samples
                    .iter()
                    .enumerate()
                    .map(|(j, x)| {
                        let dmin = comps
                            .iter()
                            .map(|m| (x - &m.mean).norm_squared())
                            .fold(f64::INFINITY, f64::min);
                        (j, dmin)
                    })
                    .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
                    .0;
                log::warn!("GMM component {c} is empty, re-seeding at sample {far}");
                comps[c] = GaussianComponent {
                    weight: 1.0 / n as f64,
                    mean: samples[far].clone(),
                    cov: global_cov.clone(),
                };
                reseeded += 1;
                reseeded_last = true;
            } else {
                let (mean, cov) = weighted_moments(samples, &resp[c]);
                comps[c] = GaussianComponent {
                    weight: mass / n as f64,
                    mean,
                    cov: floor_covariance(cov),
                };
            }
        }
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        for comp in comps.iter_mut() {
            comp.weight /= total;
        }
    }
    Ok(GmmFit {
        model: GmmModel { components: comps },
        log_likelihoods: lls,
        reseeded,
    })
}

pub fn gmm_sample(model: &GmmModel, seed: u64) -> Result<DVector<f64>> {
    model.validate()?;
    let mut rng = stream_rng(seed, &[]);
    let r: f64 = rng.random();
    let mut acc = 0.0;
    let mut pick = model.components.len() - 1;
    for (c, comp) in model.components.iter().enumerate() {
        acc += comp.weight;
        if r < acc {
            pick = c;
            break;
        }
    }
    let comp = &model.components[pick];
    let l = comp
        .cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Invariant("component covariance is not positive definite".into()))?
        .l();
    let z = DVector::from_fn(comp.mean.len(), |_, _| StandardNormal.sample(&mut rng));
    Ok(&comp.mean + l * z)
}

/// Quadratic energy `½(u − (Lx + b))ᵀW(u − (Lx + b))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyParams {
    pub w: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl EnergyParams {
    /// The exact minimiser `Lx + b`.
    pub fn minimizer(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.l * x + &self.b
    }
}

pub fn ebm_energy(p: &EnergyParams, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let r = u - p.minimizer(x);
    0.5 * (r.transpose() * &p.w * &r)[(0, 0)]
}

/// Lowest-energy candidate and its index; the first of equal candidates wins.
pub fn ebm_argmin(p: &EnergyParams, x: &DVector<f64>, candidates: &[DVector<f64>]) -> Result<(usize, DVector<f64>)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, u) in candidates.iter().enumerate() {
        let e = ebm_energy(p, x, u);
        if best.is_none_or(|(_, b)| e < b) {
            best = Some((j, e));
        }
    }
    let (j, _) = best.ok_or(Error::Empty("candidate set"))?;
    Ok((j, candidates[j].clone()))
}

/// `n × n` grid of 2-D actions over `[−half, half]²`, row-major in `y`.
pub fn action_grid(half: f64, n: usize) -> Vec<DVector<f64>> {
    let coord = |j: usize| {
        if n == 1 {
            0.0
        } else {
            -half + 2.0 * half * j as f64 / (n - 1) as f64
        }
    };
    (0..n)
        .flat_map(|a| (0..n).map(move |b| DVector::from_vec(vec![coord(b), coord(a)])))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EbmFit {
    pub params: EnergyParams,
    /// Root mean squared regression residual.
    pub residual: f64,
    pub ridge_used: bool,
}

/// Least-squares fit of the energy minimiser to expert actions, `W = I`.
/// Rank-deficient designs fall back to ridge regression.
pub fn ebm_train(xs: &[DVector<f64>], us: &[DVector<f64>], ridge: f64) -> Result<EbmFit> {
    if xs.len() != us.len() {
        return Err(Error::validation("dataset", "state and action counts differ"));
    }
    let (x0, u0) = match (xs.first(), us.first()) {
        (Some(x), Some(u)) => (x, u),
        _ => return Err(Error::Empty("training pairs")),
    };
    let (dx, du, n) = (x0.len(), u0.len(), xs.len());
    if xs.iter().any(|x| x.len() != dx) || us.iter().any(|u| u.len() != du) {
        return Err(Error::validation("dataset", "inconsistent dimensions"));
    }
    let design = DMatrix::from_fn(n, dx + 1, |r, c| if c < dx { xs[r][c] } else { 1.0 });
    let target = DMatrix::from_fn(n, du, |r, c| us[r][c]);
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let full_rank = n > dx && smax > 0.0 && smin > 1e-12 * smax;
    let (coef, ridge_used) = if full_rank {
        let c = svd
            .solve(&target, 0.0)
            .map_err(|e| Error::Invariant(format!("least squares failed: {e}")))?;
        (c, false)
    } else {
        log::warn!("EBM regression is rank deficient, using ridge {ridge}");
        let gram = design.transpose() * &design + DMatrix::identity(dx + 1, dx + 1) * ridge;
        let rhs = design.transpose() * &target;
        let c = gram
            .cholesky()
            .ok_or_else(|| Error::Invariant("ridge system is not positive definite".into()))?
            .solve(&rhs);
        (c, true)
    };
    let resid = &design * &coef - &target;
    let residual = (resid.norm_squared() / (n * du) as f64).sqrt();
    let l = coef.rows(0, dx).transpose();
    let b = coef.row(dx).transpose();
    Ok(EbmFit {
        params: EnergyParams {
            w: DMatrix::identity(du, du),
            l,
            b,
        },
        residual,
        ridge_used,
    })
}

/// Extrapolates the last state with zero acceleration; returns the `horizon`
/// future positions.
pub fn constant_velocity_predict(history: &[AgentState], horizon: usize, dt: f64) -> Result<Vec<[f64; 2]>> {
    let mut s = *history.last().ok_or(Error::Empty("history"))?;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        s = propagate(&s, &ControlInput::ZERO, dt)?;
        out.push(s.position());
    }
    Ok(out)
}

/// A forecaster that rolls a scene forward from its initial state.
pub trait Predictor: Sync {
    fn name(&self) -> &str;

    fn predict(&self, spec: &ScenarioSpec) -> Result<Trajectory>;

    /// One stochastic forecast; deterministic methods return [`Self::predict`].
    fn sample(&self, spec: &ScenarioSpec, _seed: u64) -> Result<Trajectory> {
        self.predict(spec)
    }
}

/// Forecast with the lowest ADE against `gt` among `n` samples, or the
/// deterministic forecast when `n ≤ 1`.
pub fn best_of_n(p: &dyn Predictor, spec: &ScenarioSpec, gt: &Trajectory, n: usize, seed: u64) -> Result<Trajectory> {
    if n <= 1 {
        return p.predict(spec);
    }
    let mut best: Option<(f64, Trajectory)> = None;
    for j in 0..n {
        let t = p.sample(spec, substream(seed, &[j as u64]))?;
        let score = (0..gt.k())
            .map(|i| ade(&t.positions(i), &gt.positions(i)))
            .sum::<Result<f64>>()?;
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, t));
        }
    }
    Ok(best.expect("n >= 2").1)
}

pub struct ConstantVelocity;

impl Predictor for ConstantVelocity {
    fn name(&self) -> &str {
        "cv"
    }

    fn predict(&self, spec: &ScenarioSpec) -> Result<Trajectory> {
        rollout_openloop(spec, &vec![vec![ControlInput::ZERO; spec.horizon]; spec.k()])
    }
}

fn closed_loop<F>(spec: &ScenarioSpec, mut policy: F) -> Result<Trajectory>
where
    F: FnMut(usize, usize, &AgentState) -> Result<ControlInput>,
{
    spec.validate()?;
    let mut states = vec![spec.x0.clone()];
    let mut controls = vec![Vec::with_capacity(spec.horizon); spec.k()];
    for t in 0..spec.horizon {
        let mut next = Vec::with_capacity(spec.k());
        for (i, a) in states[t].agents.iter().enumerate() {
            let u = policy(t, i, a)?.clamped(spec.u_max);
            next.push(step(a, &u, spec.dt));
            controls[i].push(u);
        }
        states.push(JointState { agents: next });
    }
    Ok(Trajectory {
        states,
        controls,
        dt: spec.dt,
    })
}

/// Every demonstrated control of every agent, as 2-vectors.
pub fn demo_actions(demos: &[Trajectory]) -> Vec<DVector<f64>> {
    demos
        .iter()
        .flat_map(|d| d.controls.iter().flatten())
        .map(|u| DVector::from_vec(vec![u.ax, u.ay]))
        .collect()
}

/// Behaviour model that draws actions from a mixture fitted to
/// demonstrated actions, independent of state.
pub struct GmmPolicy {
    pub model: GmmModel,
}

impl GmmPolicy {
    pub fn fit(demos: &[Trajectory], seed: u64, cfg: &GmmConfig) -> Result<Self> {
        Ok(Self {
            model: gmm_fit(&demo_actions(demos), seed, cfg)?.model,
        })
    }
}

impl Predictor for GmmPolicy {
    fn name(&self) -> &str {
        "gmm"
    }

    fn predict(&self, spec: &ScenarioSpec) -> Result<Trajectory> {
        let m = self.model.mean();
        closed_loop(spec, |_, _, _| Ok(ControlInput::new(m[0], m[1])))
    }

    fn sample(&self, spec: &ScenarioSpec, seed: u64) -> Result<Trajectory> {
        closed_loop(spec, |t, i, _| {
            let u = gmm_sample(&self.model, substream(seed, &[t as u64, i as u64]))?;
            Ok(ControlInput::new(u[0], u[1]))
        })
    }
}

/// Per-agent observation for the energy model: offset to goal and velocity.
pub fn ebm_observation(s: &AgentState, goal: [f64; 2]) -> DVector<f64> {
    DVector::from_vec(vec![s.px - goal[0], s.py - goal[1], s.vx, s.vy])
}

/// Energy-based policy acting by argmin over a fixed action grid.
pub struct EbmPolicy {
    pub params: EnergyParams,
    pub grid: Vec<DVector<f64>>,
}

impl EbmPolicy {
    pub const GRID_POINTS: usize = 41;

    /// Fits on every (observation, action) pair; goals are per demonstration
    /// and agent.
    pub fn fit(demos: &[Trajectory], goals: &[Vec<[f64; 2]>], u_max: f64) -> Result<Self> {
        let mut xs = Vec::new();
        let mut us = Vec::new();
        for (d, g) in demos.iter().zip(goals) {
            for (i, ctrl) in d.controls.iter().enumerate() {
                for (t, u) in ctrl.iter().enumerate() {
                    xs.push(ebm_observation(&d.states[t].agents[i], g[i]));
                    us.push(DVector::from_vec(vec![u.ax, u.ay]));
                }
            }
        }
        Ok(Self {
            params: ebm_train(&xs, &us, DEFAULT_RIDGE)?.params,
            grid: action_grid(u_max, Self::GRID_POINTS),
        })
    }
}

impl Predictor for EbmPolicy {
    fn name(&self) -> &str {
        "ebm"
    }

    fn predict(&self, spec: &ScenarioSpec) -> Result<Trajectory> {
        closed_loop(spec, |_, i, a| {
            let (_, u) = ebm_argmin(&self.params, &ebm_observation(a, spec.goals[i]), &self.grid)?;
            Ok(ControlInput::new(u[0], u[1]))
        })
    }
}

/// Learned cost weights, forecasting by solving the game on each scene.
pub struct GamePolicy {
    pub label: String,
    pub thetas: Vec<CostParams>,
    pub cfg: TrainingConfig,
}

impl Predictor for GamePolicy {
    fn name(&self) -> &str {
        &self.label
    }

    fn predict(&self, spec: &ScenarioSpec) -> Result<Trajectory> {
        let sol = solve_game(spec, &self.thetas, &self.cfg.proximity, &self.cfg.solver)?;
        mean_rollout(&sol.policies, spec)
    }

    fn sample(&self, spec: &ScenarioSpec, seed: u64) -> Result<Trajectory> {
        let sol = solve_game(spec, &self.thetas, &self.cfg.proximity, &self.cfg.solver)?;
        Ok(sample_rollouts(&sol.policies, spec, 1, seed)?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn unit(mean: &[f64]) -> GaussianComponent {
        GaussianComponent {
            weight: 1.0,
            mean: v(mean),
            cov: DMatrix::identity(mean.len(), mean.len()),
        }
    }

    #[test]
    fn pdf_examples() {
        let one = GmmModel {
            components: vec![unit(&[0.0])],
        };
        let p = gmm_pdf(&one, &v(&[0.0])).unwrap();
        assert_relative_eq!(p, 1.0 / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-15);
        let mut half = unit(&[0.0]);
        half.weight = 0.5;
        let two = GmmModel {
            components: vec![half.clone(), half],
        };
        assert_relative_eq!(gmm_pdf(&two, &v(&[0.7])).unwrap(), gmm_pdf(&one, &v(&[0.7])).unwrap(), epsilon = 1e-15);
        let planar = GmmModel {
            components: vec![unit(&[0.0, 0.0])],
        };
        let p = gmm_pdf(&planar, &v(&[1.0, 1.0])).unwrap();
        assert_relative_eq!(p, (-1.0f64).exp() / (2.0 * std::f64::consts::PI), epsilon = 1e-15);
        assert!(gmm_pdf(&planar, &v(&[1.0])).is_err());
    }

    #[test]
    fn pdf_integrates_to_one() {
        let model = GmmModel {
            components: vec![
                GaussianComponent {
                    weight: 0.3,
                    mean: v(&[-1.0, 0.5]),
                    cov: DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.8]),
                },
                GaussianComponent {
                    weight: 0.7,
                    mean: v(&[1.5, -0.5]),
                    cov: DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 0.6]),
                },
            ],
        };
        // Midpoint rule on a 1000 × 1000 lattice over [−8, 8]².
        let n = 1000;
        let h = 16.0 / n as f64;
        let mut total = 0.0;
        for a in 0..n {
            for b in 0..n {
                let x = v(&[-8.0 + (a as f64 + 0.5) * h, -8.0 + (b as f64 + 0.5) * h]);
                total += gmm_pdf(&model, &x).unwrap() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 0.02, "{total}");
    }

    fn two_clusters(n: usize) -> Vec<DVector<f64>> {
        let mut rng = stream_rng(42, &[]);
        (0..n)
            .map(|j| {
                let c = if j % 2 == 0 { -5.0 } else { 5.0 };
                let z: f64 = StandardNormal.sample(&mut rng);
                v(&[c + z])
            })
            .collect()
    }

    #[test]
    fn em_recovers_separated_means() {
        let fit = gmm_fit(&two_clusters(2000), 1, &GmmConfig { components: 2, ..Default::default() }).unwrap();
        let mut means: Vec<f64> = fit.model.components.iter().map(|c| c.mean[0]).collect();
        means.sort_by(f64::total_cmp);
        assert!((means[0] + 5.0).abs() < 0.1 && (means[1] - 5.0).abs() < 0.1, "{means:?}");
        assert!(fit.log_likelihoods.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));
    }

    #[test]
    fn single_component_is_the_sample_moments() {
        let xs: Vec<DVector<f64>> = (0..50)
            .map(|j| {
                let t = j as f64;
                v(&[t.sin() * 2.0, (0.3 * t).cos() + 0.1 * t])
            })
            .collect();
        let fit = gmm_fit(&xs, 0, &GmmConfig { components: 1, ..Default::default() }).unwrap();
        let (mean, cov) = weighted_moments(&xs, &vec![1.0; xs.len()]);
        let c = &fit.model.components[0];
        assert_relative_eq!(c.mean, mean, epsilon = 1e-12);
        assert_relative_eq!(c.cov, cov, epsilon = 1e-12);
        assert_eq!(c.weight, 1.0);
    }

    #[test]
    fn identical_samples_hit_the_floor() {
        let xs = vec![v(&[2.0, -1.0]); 10];
        let fit = gmm_fit(&xs, 0, &GmmConfig { components: 1, ..Default::default() }).unwrap();
        let c = &fit.model.components[0];
        assert_relative_eq!(c.cov, DMatrix::identity(2, 2) * COVARIANCE_FLOOR, epsilon = 1e-20);
        let s = gmm_sample(&fit.model, 3).unwrap();
        assert!((s - v(&[2.0, -1.0])).norm() < 1e-3);
    }

    #[test]
    fn too_few_samples() {
        let err = gmm_fit(&vec![v(&[0.0, 0.0]); 5], 0, &GmmConfig { components: 2, ..Default::default() });
        assert!(matches!(err, Err(Error::TooFewSamples { needed: 6, got: 5 })));
    }

    #[test]
    fn sampling_is_seeded_and_matches_moments() {
        let model = GmmModel {
            components: vec![unit(&[0.0])],
        };
        assert_eq!(gmm_sample(&model, 9).unwrap(), gmm_sample(&model, 9).unwrap());
        let n = 10_000;
        let mean: f64 = (0..n).map(|s| gmm_sample(&model, s).unwrap()[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "{mean}");
    }

    fn energy(l: &[f64], b: &[f64]) -> EnergyParams {
        EnergyParams {
            w: DMatrix::identity(2, 2),
            l: DMatrix::from_row_slice(2, 2, l),
            b: v(b),
        }
    }

    #[test]
    fn energy_examples() {
        let p = energy(&[1.0, 0.0, 0.0, 1.0], &[0.5, 0.0]);
        let x = v(&[1.0, 2.0]);
        assert_eq!(ebm_energy(&p, &x, &p.minimizer(&x)), 0.0);
        assert_eq!(ebm_energy(&p, &x, &(p.minimizer(&x) + v(&[1.0, 0.0]))), 0.5);
        let mut p2 = p.clone();
        p2.w *= 2.0;
        let u = v(&[0.3, -0.4]);
        assert_relative_eq!(ebm_energy(&p2, &x, &u), 2.0 * ebm_energy(&p, &x, &u), epsilon = 1e-15);
    }

    #[test]
    fn argmin_examples() {
        let p = energy(&[0.0; 4], &[0.1, -0.2]);
        let x = v(&[0.0, 0.0]);
        let cands = vec![v(&[1.0, 1.0]), v(&[0.1, -0.2]), v(&[0.0, 0.0])];
        assert_eq!(ebm_argmin(&p, &x, &cands).unwrap().0, 1);
        let tied = vec![v(&[0.2, -0.2]), v(&[0.0, -0.2])];
        assert_eq!(ebm_argmin(&p, &x, &tied).unwrap().0, 0);
        let grid = action_grid(3.0, 21);
        let (_, u) = ebm_argmin(&p, &x, &grid).unwrap();
        assert!((u[0] - 0.1).abs() <= 0.15 + 1e-12 && (u[1] + 0.2).abs() <= 0.15 + 1e-12);
        assert!(ebm_argmin(&p, &x, &[]).is_err());
    }

    #[test]
    fn training_examples() {
        let truth = energy(&[0.5, -1.0, 2.0, 0.25], &[0.3, -0.7]);
        let xs: Vec<DVector<f64>> = (0..20).map(|j| v(&[(j as f64).sin(), (1.7 * j as f64).cos()])).collect();
        let us: Vec<DVector<f64>> = xs.iter().map(|x| truth.minimizer(x)).collect();
        let fit = ebm_train(&xs, &us, DEFAULT_RIDGE).unwrap();
        assert!(!fit.ridge_used);
        assert_relative_eq!(fit.params.l, truth.l, epsilon = 1e-8);
        assert_relative_eq!(fit.params.b, truth.b, epsilon = 1e-8);

        let constant: Vec<DVector<f64>> = xs.iter().map(|_| v(&[1.5, -2.0])).collect();
        let fit = ebm_train(&xs, &constant, DEFAULT_RIDGE).unwrap();
        assert_relative_eq!(fit.params.l, DMatrix::zeros(2, 2), epsilon = 1e-10);
        assert_relative_eq!(fit.params.b, v(&[1.5, -2.0]), epsilon = 1e-10);

        let fit = ebm_train(&xs[..1], &us[..1], DEFAULT_RIDGE).unwrap();
        assert!(fit.ridge_used);
        assert!(fit.params.l.iter().chain(fit.params.b.iter()).all(|c| c.is_finite()));
    }

    #[test]
    fn constant_velocity_examples() {
        let rest = constant_velocity_predict(&[AgentState::at_rest(1.0, 2.0)], 3, 0.1).unwrap();
        assert!(rest.iter().all(|p| *p == [1.0, 2.0]));
        let moving = constant_velocity_predict(&[AgentState::new(0.0, 0.0, 1.0, 0.0).unwrap()], 3, 1.0).unwrap();
        assert_eq!(moving, vec![[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]);

        let x0 = JointState::new(vec![AgentState::new(0.5, -1.0, 0.7, 0.2).unwrap()]).unwrap();
        let spec = ScenarioSpec::new(x0.clone(), vec![[0.0, 0.0]], 6, 0.1).unwrap();
        let rolled = ConstantVelocity.predict(&spec).unwrap();
        let direct = constant_velocity_predict(&x0.agents, 6, 0.1).unwrap();
        assert_eq!(&rolled.positions(0)[1..], direct.as_slice());
    }

    #[test]
    fn best_of_n_picks_the_closest_sample() {
        let model = GmmModel {
            components: vec![GaussianComponent {
                weight: 1.0,
                mean: v(&[0.0, 0.0]),
                cov: DMatrix::identity(2, 2),
            }],
        };
        let policy = GmmPolicy { model };
        let x0 = JointState::new(vec![AgentState::new(0.0, 0.0, 1.0, 0.0).unwrap()]).unwrap();
        let spec = ScenarioSpec::new(x0, vec![[3.0, 0.0]], 10, 0.1).unwrap();
        let gt = ConstantVelocity.predict(&spec).unwrap();
        let score = |t: &Trajectory| ade(&t.positions(0), &gt.positions(0)).unwrap();
        let one = best_of_n(&policy, &spec, &gt, 1, 5).unwrap();
        let many = best_of_n(&policy, &spec, &gt, 20, 5).unwrap();
        assert!(score(&many) <= score(&policy.sample(&spec, substream(5, &[0])).unwrap()));
        assert_eq!(one, policy.predict(&spec).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn em_log_likelihood_never_decreases(seed in 0u64..1000, k in 1usize..4) {
            let mut rng = stream_rng(seed, &[7]);
            let xs: Vec<DVector<f64>> = (0..120)
                .map(|j| {
                    let c = (j % 3) as f64 * 2.5;
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    v(&[c + a, -c + 0.5 * b])
                })
                .collect();
            let fit = gmm_fit(&xs, seed, &GmmConfig { components: k, ..Default::default() }).unwrap();
            for w in fit.log_likelihoods.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
            }
            let total: f64 = fit.model.components.iter().map(|c| c.weight).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn grid_argmin_error_shrinks_with_spacing(mx in -2.5..2.5f64, my in -2.5..2.5f64) {
            let p = energy(&[0.0; 4], &[mx, my]);
            let x = v(&[0.0, 0.0]);
            for n in [11usize, 21, 41, 81] {
                let spacing = 6.0 / (n - 1) as f64;
                let (_, u) = ebm_argmin(&p, &x, &action_grid(3.0, n)).unwrap();
                prop_assert!((u[0] - mx).abs() <= spacing / 2.0 + 1e-12);
                prop_assert!((u[1] - my).abs() <= spacing / 2.0 + 1e-12);
            }
        }
    }
}
