//! Large-deviation path cost.
//!
//! The cost of a path `phi` is `int sum_j g(c_j, beta_j(phi)) dt`, minimized
//! over nonnegative rate profiles with `sum_j c_j h_j = phi'`, where
//! `g(nu, omega) = nu log(nu/omega) - nu + omega`. The pointwise problem is
//! solved through its exponential-tilting dual: `c_j = beta_j e^{<theta, h_j>}`
//! with `theta` the root of `sum_j beta_j e^{<theta, h_j>} h_j = v`.
//!
//! Paths are piecewise linear. Each segment has a constant velocity and is
//! charged at its midpoint state, which keeps the quadrature away from the
//! absorbing boundary where rates vanish.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::deterministic::{rk4_step, uniform_grid, Trajectory, DEFAULT_DT};
use crate::error::{invalid, Error, Result};
use crate::model::{ModelKind, ModelParams, ReactionModel};
use crate::optimize::{minimize, LbfgsOptions, OptimizerDiagnostics};
use crate::quasipotential::{Provenance, QuasiPotential};

/// Newton iteration cap for the pointwise problem.
const NEWTON_MAX_ITERS: usize = 100;
/// Relative decrease over the last horizon step tolerated at the upper edge.
const EDGE_TOL: f64 = 1e-6;
/// Line-search contraction for the damped Newton steps.
const NEWTON_DAMPING: f64 = 0.5;

/// `g(nu, omega) = nu log(nu/omega) - nu + omega`, with `g(nu, 0) = inf`
/// for `nu > 0` and `0 log 0 = 0`.
pub fn g_cost(nu: f64, omega: f64) -> Result<f64> {
    if !(nu >= 0.0) || !(omega >= 0.0) {
        return Err(invalid("g", format!("rates must be >= 0, got ({nu}, {omega})")));
    }
    Ok(g_unchecked(nu, omega))
}

#[inline]
fn g_unchecked(nu: f64, omega: f64) -> f64 {
    if nu == 0.0 {
        omega
    } else if omega == 0.0 {
        f64::INFINITY
    } else {
        nu * (nu / omega).ln() - nu + omega
    }
}

/// Solution of the pointwise rate problem at state `z` and velocity `v`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalRates {
    /// Optimal `c_j`.
    pub rates: Vec<f64>,
    /// `sum_j g(c_j, beta_j(z))`.
    pub cost: f64,
    /// Dual variable; `c_j = beta_j exp(<theta, h_j>)` on the active face.
    pub theta: Vec<f64>,
    /// `|sum_j c_j h_j - v|_max`
    pub residual: f64,
    pub converged: bool,
}

/// Minimizes `sum_j g(c_j, beta_j(z))` over `c >= 0` with
/// `sum_j c_j h_j = v`.
pub fn optimal_rates(model: &ReactionModel, z: &[f64], v: &[f64]) -> Result<OptimalRates> {
    if z.len() != model.dim() || v.len() != model.dim() {
        return Err(invalid("z", "state and velocity must match the model dimension"));
    }
    let beta = model.rates(z);
    solve_inner(model, &beta, v, None).ok_or(Error::InfeasibleVelocity)
}

/// Face of the cone generated by the active jumps that contains `v` in its
/// relative interior. `None` when `v` is outside the cone.
fn active_face(model: &ReactionModel, beta: &[f64], v: &[f64]) -> Option<Vec<usize>> {
    let active: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] > 0.0).collect();
    if active.len() == beta.len() && positively_spanning(model) {
        return Some(active);
    }
    let gens: Vec<Vec<f64>> = active
        .iter()
        .map(|&j| model.jump(j).iter().map(|&h| h as f64).collect())
        .collect();
    if !in_cone(&gens, v) {
        return None;
    }
    let scale = 1e-6 * norm_inf(v).max(1.0);
    let face = active
        .iter()
        .zip(&gens)
        .filter(|(_, h)| {
            let hn = norm_inf(h);
            let probe: Vec<f64> = v.iter().zip(h.iter()).map(|(a, b)| a - scale / hn * b).collect();
            in_cone(&gens, &probe)
        })
        .map(|(&j, _)| j)
        .collect();
    Some(face)
}

/// Whether the jump vectors of `model` positively span the whole space.
fn positively_spanning(model: &ReactionModel) -> bool {
    let gens: Vec<Vec<f64>> = (0..model.num_reactions())
        .map(|j| model.jump(j).iter().map(|&h| h as f64).collect())
        .collect();
    (0..model.dim()).all(|i| {
        let mut e = vec![0.0; model.dim()];
        e[i] = 1.0;
        let plus = in_cone(&gens, &e);
        e[i] = -1.0;
        plus && in_cone(&gens, &e)
    })
}

/// Cone membership by Caratheodory: `v` is a nonnegative combination of at
/// most `d` linearly independent generators.
fn in_cone(gens: &[Vec<f64>], v: &[f64]) -> bool {
    let vn = norm_inf(v);
    if vn == 0.0 {
        return true;
    }
    let d = v.len();
    let m = gens.len();
    let tol = 1e-12 * vn.max(1.0);
    for mask in 1u32..(1u32 << m) {
        let cols: Vec<&Vec<f64>> = (0..m).filter(|i| mask & (1 << i) != 0).map(|i| &gens[i]).collect();
        if cols.len() > d {
            continue;
        }
        let s = cols.len();
        let mut normal = vec![0.0; s * s];
        let mut rhs = vec![0.0; s];
        for a in 0..s {
            for b in 0..s {
                normal[a * s + b] = dot(cols[a], cols[b]);
            }
            rhs[a] = dot(cols[a], v);
        }
        let Some(coef) = solve_dense(&mut normal, &mut rhs, s) else {
            continue;
        };
        if coef.iter().any(|c| *c < -tol) {
            continue;
        }
        let resid = (0..d)
            .map(|i| (cols.iter().zip(&coef).map(|(h, c)| h[i] * c).sum::<f64>() - v[i]).abs())
            .fold(0.0, f64::max);
        if resid <= tol {
            return true;
        }
    }
    false
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &k| a[i * n + col].abs().total_cmp(&a[k * n + col].abs()))?;
        if a[piv * n + col].abs() <= 1e-12 * scale {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    Some(x)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Orthonormal basis (rows) of the span of the given vectors.
fn orthonormal_basis(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        for q in &basis {
            let p = dot(q, &w);
            w.iter_mut().zip(q).for_each(|(x, y)| *x -= p * y);
        }
        let n = dot(&w, &w).sqrt();
        if n > 1e-10 {
            w.iter_mut().for_each(|x| *x /= n);
            basis.push(w);
        }
    }
    basis
}

/// Pointwise solve from rates `beta`, optionally warm-started at `theta0`.
fn solve_inner(model: &ReactionModel, beta: &[f64], v: &[f64], theta0: Option<&[f64]>) -> Option<OptimalRates> {
    let d = model.dim();
    let k = beta.len();
    let face = active_face(model, beta, v)?;
    let jumps: Vec<Vec<f64>> = face
        .iter()
        .map(|&j| model.jump(j).iter().map(|&h| h as f64).collect())
        .collect();
    let basis = orthonormal_basis(&jumps);
    let r = basis.len();
    // coordinates of the face jumps and of v in the basis
    let proj: Vec<Vec<f64>> = jumps.iter().map(|h| basis.iter().map(|q| dot(q, h)).collect()).collect();
    let w: Vec<f64> = basis.iter().map(|q| dot(q, v)).collect();
    let fb: Vec<f64> = face.iter().map(|&j| beta[j]).collect();

    let mut phi: Vec<f64> = match theta0 {
        Some(t) if t.len() == d => basis.iter().map(|q| dot(q, t)).collect(),
        _ => vec![0.0; r],
    };
    let dual = |phi: &[f64]| -> f64 {
        fb.iter()
            .zip(&proj)
            .map(|(b, p)| b * dot(phi, p).exp())
            .sum::<f64>()
            - dot(phi, &w)
    };
    let grad_tol = 1e-14 * (1.0 + norm_inf(v) + fb.iter().sum::<f64>());
    let mut converged = r == 0;
    let mut f_cur = dual(&phi);
    if !f_cur.is_finite() {
        phi = vec![0.0; r];
        f_cur = dual(&phi);
    }
    let mut grad = vec![0.0; r];
    let mut hess = vec![0.0; r * r];
    for _ in 0..NEWTON_MAX_ITERS {
        if r == 0 {
            break;
        }
        grad.iter_mut().for_each(|x| *x = 0.0);
        hess.iter_mut().for_each(|x| *x = 0.0);
        for (b, p) in fb.iter().zip(&proj) {
            let c = b * dot(&phi, p).exp();
            for a in 0..r {
                grad[a] += c * p[a];
                for e in 0..r {
                    hess[a * r + e] += c * p[a] * p[e];
                }
            }
        }
        for a in 0..r {
            grad[a] -= w[a];
        }
        if norm_inf(&grad) <= grad_tol {
            converged = true;
            break;
        }
        let mut rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut h = hess.clone();
        let Some(step) = solve_dense(&mut h, &mut rhs, r) else {
            break;
        };
        if norm_inf(&step) <= 1e-15 * (1.0 + norm_inf(&phi)) {
            converged = true;
            break;
        }
        let slope = dot(&step, &grad);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial: Vec<f64> = phi.iter().zip(&step).map(|(p, s)| p + t * s).collect();
            let f_trial = dual(&trial);
            if f_trial.is_finite() && f_trial <= f_cur + 1e-4 * t * slope + 1e-15 * f_cur.abs() {
                phi = trial;
                f_cur = f_trial;
                moved = true;
                break;
            }
            t *= NEWTON_DAMPING;
        }
        if !moved {
            // at round-off level already
            converged = norm_inf(&grad) <= 1e-9 * (1.0 + norm_inf(v));
            break;
        }
    }

    let theta: Vec<f64> = (0..d).map(|i| basis.iter().zip(&phi).map(|(q, p)| q[i] * p).sum()).collect();
    let mut rates = vec![0.0; k];
    for (idx, &j) in face.iter().enumerate() {
        rates[j] = fb[idx] * dot(&phi, &proj[idx]).exp();
    }
    let cost: f64 = rates.iter().zip(beta).map(|(&c, &b)| g_unchecked(c, b)).sum();
    let mut resid = v.to_vec();
    for j in 0..k {
        for (ri, &h) in resid.iter_mut().zip(model.jump(j)) {
            *ri -= rates[j] * h as f64;
        }
    }
    let residual = norm_inf(&resid);
    Some(OptimalRates {
        rates,
        cost,
        theta,
        residual,
        converged: (converged || r == 0 || residual <= 1e-12 * (1.0 + norm_inf(v))) && residual <= 1e-10 * (1.0 + norm_inf(v)),
    })
}

/// Rates realizing a path action, one row per segment midpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateProfile {
    pub times: Vec<f64>,
    pub rates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathAction {
    /// Action value; `inf` when some segment is infeasible.
    pub value: f64,
    pub profile: RateProfile,
    pub converged: bool,
    pub max_residual: f64,
}

/// Action of the piecewise-linear interpolation of `phi`.
pub fn path_action(model: &ReactionModel, phi: &Trajectory) -> Result<PathAction> {
    if phi.dim() != model.dim() {
        return Err(invalid("phi", format!("expected dimension {}", model.dim())));
    }
    let t = phi.times();
    let s = phi.states();
    let d = model.dim();
    let mut value = 0.0;
    let mut converged = true;
    let mut max_residual: f64 = 0.0;
    let mut profile = RateProfile {
        times: Vec::with_capacity(t.len() - 1),
        rates: Vec::with_capacity(t.len() - 1),
    };
    let mut mid = vec![0.0; d];
    let mut vel = vec![0.0; d];
    let mut theta: Option<Vec<f64>> = None;
    for i in 0..t.len() - 1 {
        let h = t[i + 1] - t[i];
        if !(h > 0.0) {
            return Err(Error::NotAbsolutelyContinuous(format!("zero-length segment at t={}", t[i])));
        }
        for k in 0..d {
            mid[k] = 0.5 * (s[i][k] + s[i + 1][k]);
            vel[k] = (s[i + 1][k] - s[i][k]) / h;
        }
        profile.times.push(0.5 * (t[i] + t[i + 1]));
        if !model.domain().contains(&mid, 0.0) {
            value = f64::INFINITY;
            profile.rates.push(vec![f64::NAN; model.num_reactions()]);
            continue;
        }
        let beta = model.rates(&mid);
        match solve_inner(model, &beta, &vel, theta.as_deref()) {
            Some(sol) => {
                value += h * sol.cost;
                converged &= sol.converged;
                max_residual = max_residual.max(sol.residual);
                theta = Some(sol.theta.clone());
                profile.rates.push(sol.rates);
            }
            None => {
                value = f64::INFINITY;
                profile.rates.push(vec![f64::NAN; model.num_reactions()]);
            }
        }
    }
    Ok(PathAction {
        value,
        profile,
        converged,
        max_residual,
    })
}

/// `log(lambda/gamma) - 1 + gamma/lambda`: SIS cost of full extinction from
/// the endemic equilibrium.
pub fn quasipotential_ld_sis(params: &ModelParams) -> Result<QuasiPotential> {
    params.validate(ModelKind::Sis)?;
    let (l, g) = (params.lambda, params.gamma);
    if l <= g {
        return Err(Error::NoEndemicEquilibrium(format!("SIS requires lambda > gamma ({l} <= {g})")));
    }
    let r = g / l;
    Ok(QuasiPotential::closed_form(-r.ln() - 1.0 + r))
}

/// SIS cost of moving from `z*` to `z* + a` along the time-reversed flow:
/// `a + (gamma/lambda - a) log(1 - a lambda/gamma)`, for `0 <= a < gamma/lambda`.
pub fn ld_exit_cost_sis(params: &ModelParams, a: f64) -> Result<f64> {
    params.validate(ModelKind::Sis)?;
    let r = params.gamma / params.lambda;
    if !(a >= 0.0 && a < r) {
        return Err(Error::DeviationOutOfRange { a, limit: r });
    }
    Ok(a + (r - a) * (-a / r).ln_1p())
}

/// Integrates `z' = -b(z)` from `from` until `component` reaches `level`.
/// The final step is cut so the last state sits on the level.
pub fn reversed_flow_to_level(
    model: &ReactionModel,
    from: &[f64],
    component: usize,
    level: f64,
    dt: f64,
    max_time: f64,
) -> Result<Trajectory> {
    if component >= model.dim() {
        return Err(invalid("component", "out of range"));
    }
    let sign = (level - from[component]).signum();
    let mut times = vec![0.0];
    let mut states = vec![from.to_vec()];
    let mut t = 0.0;
    while t < max_time {
        let z = states.last().unwrap().clone();
        let next = rk4_step(model, &z, dt, -1.0, t)?;
        if (next[component] - level) * sign >= 0.0 {
            // bisect on the step length
            let (mut lo, mut hi) = (0.0, dt);
            let mut best = next;
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let trial = rk4_step(model, &z, mid, -1.0, t)?;
                if (trial[component] - level) * sign >= 0.0 {
                    hi = mid;
                    best = trial;
                } else {
                    lo = mid;
                }
            }
            if hi > 1e-14 {
                best[component] = level;
                times.push(t + hi);
                states.push(best);
            } else if let Some(last) = states.last_mut() {
                last[component] = level;
            }
            return Trajectory::new(times, states);
        }
        t += dt;
        times.push(t);
        states.push(next);
    }
    Err(Error::Unsupported(format!(
        "reversed flow did not reach level {level} within t={max_time}"
    )))
}

/// Where a minimum-action path must end.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Point(Vec<f64>),
    /// `z[component] = level`; other coordinates free.
    Hyperplane { component: usize, level: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdOptions {
    pub horizons: Vec<f64>,
    /// Minimum number of interior nodes per horizon.
    pub interior_nodes: usize,
    /// Largest time step; long horizons get more nodes.
    pub max_step: f64,
    /// Size of the displacement from the equilibrium at which paths start.
    pub epsilon: f64,
    pub lbfgs: LbfgsOptions,
}

impl Default for LdOptions {
    fn default() -> Self {
        Self {
            horizons: log_grid(1.0, 100.0, 7),
            interior_nodes: 200,
            max_step: 0.1,
            epsilon: 1e-4,
            lbfgs: LbfgsOptions::default(),
        }
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Discretized action on a uniform grid with fixed start, as a function of
/// the free node coordinates.
struct DiscreteAction<'m> {
    model: &'m ReactionModel,
    start: Vec<f64>,
    target: Target,
    nodes: usize,
    h: f64,
}

impl DiscreteAction<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn free_tail(&self) -> usize {
        match self.target {
            Target::Point(_) => 0,
            Target::Hyperplane { .. } => self.dim() - 1,
        }
    }

    fn num_vars(&self) -> usize {
        self.nodes * self.dim() + self.free_tail()
    }

    /// Full node list `[start, interior.., end]`.
    fn unpack(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut pts = Vec::with_capacity(self.nodes + 2);
        pts.push(self.start.clone());
        for i in 0..self.nodes {
            pts.push(x[i * d..(i + 1) * d].to_vec());
        }
        pts.push(match &self.target {
            Target::Point(p) => p.clone(),
            Target::Hyperplane { component, level } => {
                let mut e = Vec::with_capacity(d);
                let mut free = x[self.nodes * d..].iter();
                for k in 0..d {
                    e.push(if k == *component { *level } else { *free.next().unwrap() });
                }
                e
            }
        });
        pts
    }

    fn pack(&self, pts: &[Vec<f64>]) -> Vec<f64> {
        let mut x: Vec<f64> = pts[1..=self.nodes].iter().flatten().copied().collect();
        if let Target::Hyperplane { component, .. } = self.target {
            let last = &pts[self.nodes + 1];
            x.extend((0..self.dim()).filter(|k| *k != component).map(|k| last[k]));
        }
        x
    }

    fn eval(&self, x: &[f64], grad: &mut [f64], thetas: &mut [Vec<f64>]) -> f64 {
        let d = self.dim();
        let pts = self.unpack(x);
        let mut node_grad = vec![vec![0.0; d]; pts.len()];
        let domain = self.model.domain();
        if pts.iter().any(|p| !domain.contains(p, 0.0)) {
            return f64::INFINITY;
        }
        let mut total = 0.0;
        let mut mid = vec![0.0; d];
        let mut vel = vec![0.0; d];
        let mut dz = vec![0.0; d];
        let mut rg = vec![0.0; d];
        let k = self.model.num_reactions();
        let mut beta = vec![0.0; k];
        for s in 0..pts.len() - 1 {
            for i in 0..d {
                mid[i] = 0.5 * (pts[s][i] + pts[s + 1][i]);
                vel[i] = (pts[s + 1][i] - pts[s][i]) / self.h;
            }
            self.model.rates_into(&mid, &mut beta);
            let warm = (!thetas[s].is_empty()).then(|| thetas[s].as_slice());
            let Some(sol) = solve_inner(self.model, &beta, &vel, warm) else {
                return f64::INFINITY;
            };
            if !sol.cost.is_finite() {
                return f64::INFINITY;
            }
            total += self.h * sol.cost;
            // dL/dz = sum_j grad beta_j (1 - c_j / beta_j), dL/dv = theta
            dz.iter_mut().for_each(|x| *x = 0.0);
            for j in 0..k {
                let factor = if beta[j] > 0.0 { 1.0 - sol.rates[j] / beta[j] } else { 1.0 };
                if factor != 0.0 {
                    self.model.rate_gradient(j, &mid, &mut rg);
                    for i in 0..d {
                        dz[i] += factor * rg[i];
                    }
                }
            }
            for i in 0..d {
                node_grad[s][i] += 0.5 * self.h * dz[i] - sol.theta[i];
                node_grad[s + 1][i] += 0.5 * self.h * dz[i] + sol.theta[i];
            }
            thetas[s] = sol.theta;
        }
        for n in 0..self.nodes {
            grad[n * d..(n + 1) * d].copy_from_slice(&node_grad[n + 1]);
        }
        if let Target::Hyperplane { component, .. } = self.target {
            let last = &node_grad[self.nodes + 1];
            for (slot, kk) in (0..d).filter(|kk| *kk != component).enumerate() {
                grad[self.nodes * d + slot] = last[kk];
            }
        }
        total
    }
}

impl DiscreteAction<'_> {
    /// Block index of path node `p`, if it carries free variables.
    fn block_of(&self, p: usize) -> Option<usize> {
        if p == 0 || (p == self.nodes + 1 && matches!(self.target, Target::Point(_))) {
            None
        } else {
            Some(p - 1)
        }
    }

    fn num_blocks(&self) -> usize {
        match self.target {
            Target::Point(_) => self.nodes,
            Target::Hyperplane { .. } => self.nodes + 1,
        }
    }

    /// Block-tridiagonal Hessian of the discrete action. Returns the diagonal
    /// blocks and the blocks coupling block `i` to `i + 1`.
    fn hessian_blocks(&self, x: &[f64], thetas: &[Vec<f64>]) -> Option<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
        let d = self.dim();
        let m = self.num_blocks();
        let pts = self.unpack(x);
        let mut diag = vec![DMatrix::zeros(d, d); m];
        let mut off = vec![DMatrix::zeros(d, d); m.saturating_sub(1)];
        let k = self.model.num_reactions();
        let jumps: Vec<DVector<f64>> = (0..k).map(|j| self.model.jump_vector(j)).collect();
        let mut beta = vec![0.0; k];
        let mut grads = vec![vec![0.0; d]; k];
        let mut gp = vec![0.0; d];
        let mut gm = vec![0.0; d];
        let fd = 1e-6;
        // maps (mid, v) to (x_a, x_b)
        let mut jac = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            jac[(i, i)] = 0.5;
            jac[(i, d + i)] = 0.5;
            jac[(d + i, i)] = -1.0 / self.h;
            jac[(d + i, d + i)] = 1.0 / self.h;
        }
        for s in 0..pts.len() - 1 {
            let mid: Vec<f64> = (0..d).map(|i| 0.5 * (pts[s][i] + pts[s + 1][i])).collect();
            let vel: Vec<f64> = (0..d).map(|i| (pts[s + 1][i] - pts[s][i]) / self.h).collect();
            self.model.rates_into(&mid, &mut beta);
            let warm = (!thetas[s].is_empty()).then(|| thetas[s].as_slice());
            let sol = solve_inner(self.model, &beta, &vel, warm)?;
            for j in 0..k {
                self.model.rate_gradient(j, &mid, &mut grads[j]);
            }
            let mut h_tt = DMatrix::zeros(d, d);
            let mut h_tz = DMatrix::zeros(d, d);
            let mut l_zz = DMatrix::zeros(d, d);
            for j in 0..k {
                let c = sol.rates[j];
                let on_face = c > 0.0;
                if on_face {
                    h_tt += &jumps[j] * jumps[j].transpose() * c;
                    let ratio = c / beta[j];
                    for a in 0..d {
                        for b in 0..d {
                            h_tz[(a, b)] += jumps[j][a] * ratio * grads[j][b];
                        }
                    }
                }
                // rate Hessian by central differences of the gradient
                let weight = if on_face { 1.0 - c / beta[j] } else { 1.0 };
                if weight != 0.0 {
                    let mut zp = mid.clone();
                    for b in 0..d {
                        zp[b] = mid[b] + fd;
                        self.model.rate_gradient(j, &zp, &mut gp);
                        zp[b] = mid[b] - fd;
                        self.model.rate_gradient(j, &zp, &mut gm);
                        zp[b] = mid[b];
                        for a in 0..d {
                            l_zz[(a, b)] += weight * (gp[a] - gm[a]) / (2.0 * fd);
                        }
                    }
                }
            }
            let ridge = 1e-12 * (1.0 + h_tt.trace());
            for i in 0..d {
                h_tt[(i, i)] += ridge;
            }
            let h_inv = h_tt.try_inverse()?;
            let l_vz = -(&h_inv * &h_tz);
            l_zz += h_tz.transpose() * &h_inv * &h_tz;
            let mut local = DMatrix::zeros(2 * d, 2 * d);
            local.view_mut((0, 0), (d, d)).copy_from(&(0.5 * (&l_zz + l_zz.transpose())));
            local.view_mut((d, 0), (d, d)).copy_from(&l_vz);
            local.view_mut((0, d), (d, d)).copy_from(&l_vz.transpose());
            local.view_mut((d, d), (d, d)).copy_from(&h_inv);
            let seg = jac.transpose() * local * &jac * self.h;
            let (ba, bb) = (self.block_of(s), self.block_of(s + 1));
            if let Some(a) = ba {
                diag[a] += seg.view((0, 0), (d, d));
            }
            if let Some(b) = bb {
                diag[b] += seg.view((d, d), (d, d));
            }
            if let (Some(a), Some(_)) = (ba, bb) {
                off[a] += seg.view((0, d), (d, d));
            }
        }
        Some((diag, off))
    }

    /// Block-vector layout of a flat variable vector, padding the pinned
    /// component of a free end point with zero.
    fn to_blocks(&self, flat: &[f64]) -> Vec<DVector<f64>> {
        let d = self.dim();
        let mut out: Vec<DVector<f64>> = (0..self.nodes)
            .map(|n| DVector::from_column_slice(&flat[n * d..(n + 1) * d]))
            .collect();
        if let Target::Hyperplane { component, .. } = self.target {
            let mut free = flat[self.nodes * d..].iter();
            out.push(DVector::from_iterator(
                d,
                (0..d).map(|k| if k == component { 0.0 } else { *free.next().unwrap() }),
            ));
        }
        out
    }

    fn from_blocks(&self, blocks: &[DVector<f64>]) -> Vec<f64> {
        let d = self.dim();
        let mut flat: Vec<f64> = blocks[..self.nodes].iter().flat_map(|b| b.iter().copied()).collect();
        if let Target::Hyperplane { component, .. } = self.target {
            flat.extend((0..d).filter(|k| *k != component).map(|k| blocks[self.nodes][k]));
        }
        flat
    }
}

/// Solves the block-tridiagonal system `(T + shift I) y = r`; `None` if the
/// shifted matrix is not positive definite.
fn block_tridiagonal_solve(
    diag: &[DMatrix<f64>],
    off: &[DMatrix<f64>],
    rhs: &[DVector<f64>],
    shift: f64,
    pinned: Option<usize>,
) -> Option<Vec<DVector<f64>>> {
    let m = diag.len();
    let d = diag[0].nrows();
    let mut chol = Vec::with_capacity(m);
    let mut y: Vec<DVector<f64>> = Vec::with_capacity(m);
    for i in 0..m {
        let mut c = diag[i].clone();
        let mut r = rhs[i].clone();
        if i + 1 == m {
            if let Some(p) = pinned {
                c.row_mut(p).fill(0.0);
                c.column_mut(p).fill(0.0);
                c[(p, p)] = 1.0;
                r[p] = 0.0;
            }
        }
        for k in 0..d {
            c[(k, k)] += shift;
        }
        if i > 0 {
            let mut e: DMatrix<f64> = off[i - 1].clone();
            if i + 1 == m {
                if let Some(p) = pinned {
                    e.column_mut(p).fill(0.0);
                }
            }
            let prev: &nalgebra::Cholesky<f64, nalgebra::Dyn> = &chol[i - 1];
            c -= e.transpose() * prev.solve(&e);
            r -= e.transpose() * prev.solve(&y[i - 1]);
        }
        let ch = c.cholesky()?;
        chol.push(ch);
        y.push(r);
    }
    let mut x = vec![DVector::zeros(d); m];
    for i in (0..m).rev() {
        let mut r = y[i].clone();
        if i + 1 < m {
            let mut e: DMatrix<f64> = off[i].clone();
            if i + 2 == m {
                if let Some(p) = pinned {
                    e.column_mut(p).fill(0.0);
                }
            }
            r -= e * &x[i + 1];
        }
        x[i] = chol[i].solve(&r);
    }
    Some(x)
}

/// Damped Newton on the discrete action with a Levenberg shift (which also
/// absorbs indefinite Hessians), falling back to L-BFGS if no Newton step
/// makes progress.
fn newton_minimize(
    problem: &DiscreteAction<'_>,
    x0: Vec<f64>,
    thetas: &mut [Vec<f64>],
    lbfgs: &LbfgsOptions,
) -> (Vec<f64>, f64, OptimizerDiagnostics) {
    const MAX_NEWTON: usize = 300;
    // stop once the last NEWTON_WINDOW iterations gained less than this
    const NEWTON_REL_TOL: f64 = 1e-7;
    const NEWTON_WINDOW: usize = 20;
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = problem.eval(&x, &mut g, thetas);
    let mut evaluations = 1;
    let pinned = match problem.target {
        Target::Hyperplane { component, .. } => Some(component),
        Target::Point(_) => None,
    };
    let diag = |iterations, evaluations, g: &[f64], converged, reason: &str| OptimizerDiagnostics {
        iterations,
        evaluations,
        grad_norm: norm_inf(g),
        converged,
        reason: reason.to_string(),
    };
    if !fx.is_finite() {
        return (x, fx, diag(0, evaluations, &g, false, "initial point infeasible"));
    }
    if n == 0 {
        return (x, fx, diag(0, evaluations, &g, true, "no free variables"));
    }
    let mut shift_scale = 1e-8;
    let mut recent = std::collections::VecDeque::with_capacity(NEWTON_WINDOW + 1);
    let mut g_new = vec![0.0; n];
    let mut finished = false;
    let mut iterations = 0;
    for iter in 0..MAX_NEWTON {
        iterations = iter;
        if norm_inf(&g) < lbfgs.grad_tol {
            return (x, fx, diag(iter, evaluations, &g, true, "gradient tolerance"));
        }
        let Some((hd, ho)) = problem.hessian_blocks(&x, thetas) else {
            break;
        };
        let scale = hd.iter().map(|b| b.diagonal().amax()).fold(0.0, f64::max).max(1e-300);
        let rhs: Vec<DVector<f64>> = problem.to_blocks(&g).into_iter().map(|b| -b).collect();
        let mut accepted = false;
        for _ in 0..12 {
            let Some(step) = block_tridiagonal_solve(&hd, &ho, &rhs, shift_scale * scale, pinned) else {
                shift_scale *= 10.0;
                continue;
            };
            let dir = problem.from_blocks(&step);
            let slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                shift_scale *= 10.0;
                continue;
            }
            let mut t = 1.0;
            for _ in 0..30 {
                let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
                let f_new = problem.eval(&trial, &mut g_new, thetas);
                evaluations += 1;
                if f_new.is_finite() && f_new <= fx + 1e-4 * t * slope {
                    x = trial;
                    fx = f_new;
                    std::mem::swap(&mut g, &mut g_new);
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if accepted {
                if t == 1.0 {
                    shift_scale = (shift_scale * 0.1).max(1e-12);
                }
                break;
            }
            shift_scale *= 100.0;
        }
        if !accepted {
            break;
        }
        recent.push_back(fx);
        if recent.len() > NEWTON_WINDOW {
            let old = recent.pop_front().unwrap();
            if (old - fx) <= NEWTON_REL_TOL * fx.abs() {
                return (x, fx, diag(iter + 1, evaluations, &g, true, "objective stalled"));
            }
        }
        finished = iter + 1 == MAX_NEWTON;
    }
    if finished {
        return (x, fx, diag(MAX_NEWTON, evaluations, &g, false, "iteration limit"));
    }
    // Newton stalled on the Hessian; continue with first-order steps
    let (xl, fl, mut dl) = minimize(|y, gr| problem.eval(y, gr, thetas), x, lbfgs);
    dl.iterations += iterations;
    dl.evaluations += evaluations;
    (xl, fl, dl)
}

/// Initial path for horizon `horizon`: the time-reversed flow from `start`
/// toward the target, padded at the start (or compressed) to fit the
/// horizon, with the end snapped onto the target.
fn reversed_flow_guess(model: &ReactionModel, start: &[f64], target: &Target, horizon: f64, steps: usize) -> Vec<Vec<f64>> {
    // Point targets are usually approached only asymptotically by the
    // reversed flow; stop short and finish with a straight segment.
    let (component, level, tail) = match target {
        Target::Point(p) => {
            let c = (0..p.len())
                .max_by(|&a, &b| (p[a] - start[a]).abs().total_cmp(&(p[b] - start[b]).abs()))
                .unwrap();
            (c, p[c] + 1e-2 * (start[c] - p[c]), (0.05 * horizon).min(1.0))
        }
        Target::Hyperplane { component, level } => (*component, *level, 0.0),
    };
    let body = horizon - tail;
    let dt = (horizon / steps as f64 / 20.0).min(DEFAULT_DT * 10.0);
    let flow = match reversed_flow_to_level(model, start, component, level, dt, body) {
        Ok(f) => f,
        Err(_) => {
            // did not arrive (or left the domain); keep whatever was integrated
            let mut times = vec![0.0];
            let mut states = vec![start.to_vec()];
            let mut t = 0.0;
            while t < body {
                match rk4_step(model, states.last().unwrap(), dt, -1.0, t) {
                    Ok(z) => {
                        t += dt;
                        times.push(t);
                        states.push(z);
                    }
                    Err(_) => break,
                }
            }
            Trajectory::new(times, states).expect("increasing grid")
        }
    };
    let duration = flow.horizon();
    let offset = (body - duration).max(0.0);
    let squeeze = if duration > body { duration / body } else { 1.0 };
    let end: Vec<f64> = match target {
        Target::Point(p) => p.clone(),
        Target::Hyperplane { component, level } => {
            let mut e = flow.final_state().to_vec();
            e[*component] = *level;
            e
        }
    };
    let reached = flow.final_state().to_vec();
    uniform_grid(horizon, steps)
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if i == steps {
                end.clone()
            } else if t > body {
                let w = (t - body) / tail;
                reached.iter().zip(&end).map(|(a, b)| a + w * (b - a)).collect()
            } else {
                interpolate(&flow, ((t - offset) * squeeze).max(0.0))
            }
        })
        .collect()
}

fn interpolate(traj: &Trajectory, t: f64) -> Vec<f64> {
    let times = traj.times();
    let states = traj.states();
    if t >= traj.horizon() {
        return traj.final_state().to_vec();
    }
    let i = times.partition_point(|&s| s <= t).saturating_sub(1);
    let w = (t - times[i]) / (times[i + 1] - times[i]);
    states[i]
        .iter()
        .zip(&states[i + 1])
        .map(|(a, b)| a + w * (b - a))
        .collect()
}

/// Minimum of the LD action from `from` (displaced by `epsilon` toward the
/// target) to `target`, over piecewise-linear paths and the horizons in
/// `opts.horizons`.
pub fn minimize_action_ld(model: &ReactionModel, from: &[f64], target: &Target, opts: &LdOptions) -> Result<QuasiPotential> {
    let d = model.dim();
    if from.len() != d {
        return Err(invalid("from", format!("expected {d} components")));
    }
    if opts.horizons.is_empty() || opts.horizons.iter().any(|t| !(*t > 0.0)) {
        return Err(invalid("horizons", "need at least one positive horizon"));
    }
    if !(opts.max_step > 0.0) {
        return Err(invalid("max_step", "must be positive"));
    }
    if opts.interior_nodes == 0 {
        return Err(invalid("interior_nodes", "must be at least 1"));
    }
    let reached = match target {
        Target::Point(p) => {
            if p.len() != d {
                return Err(invalid("target", format!("expected {d} components")));
            }
            p.iter().zip(from).all(|(a, b)| a == b)
        }
        Target::Hyperplane { component, level } => {
            if *component >= d {
                return Err(invalid("target", "component out of range"));
            }
            from[*component] == *level
        }
    };
    if reached {
        let mut q = QuasiPotential::closed_form(0.0);
        q.provenance = Provenance::Numerical;
        q.argmin = Some(from.to_vec());
        return Ok(q);
    }
    // unit direction toward the target
    let mut dir = vec![0.0; d];
    match target {
        Target::Point(p) => {
            let n = p.iter().zip(from).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            for i in 0..d {
                dir[i] = (p[i] - from[i]) / n;
            }
        }
        Target::Hyperplane { component, level } => dir[*component] = (level - from[*component]).signum(),
    }
    let start: Vec<f64> = from.iter().zip(&dir).map(|(z, u)| z + opts.epsilon * u).collect();
    if !model.domain().contains(&start, 0.0) {
        return Err(invalid("epsilon", "displaced start leaves the domain"));
    }
    // straight connection at unit speed over time epsilon
    let connection_bound = if opts.epsilon > 0.0 {
        let link = Trajectory::new(vec![0.0, opts.epsilon], vec![from.to_vec(), start.clone()])?;
        Some(path_action(model, &link)?.value)
    } else {
        None
    };

    let runs: Vec<_> = opts
        .horizons
        .par_iter()
        .map(|&horizon| {
            let steps = (opts.interior_nodes + 1).max((horizon / opts.max_step).ceil() as usize);
            let problem = DiscreteAction {
                model,
                start: start.clone(),
                target: target.clone(),
                nodes: steps - 1,
                h: horizon / steps as f64,
            };
            let guess = reversed_flow_guess(model, &start, target, horizon, steps);
            let x0 = problem.pack(&guess);
            let mut thetas = vec![Vec::new(); steps];
            let mut g0 = vec![0.0; problem.num_vars()];
            let x0 = if problem.eval(&x0, &mut g0, &mut thetas).is_finite() {
                x0
            } else {
                // straight line fallback
                let end = problem.unpack(&x0).pop().unwrap();
                let line: Vec<Vec<f64>> = (0..=steps)
                    .map(|i| {
                        let w = i as f64 / steps as f64;
                        start.iter().zip(&end).map(|(a, b)| a + w * (b - a)).collect()
                    })
                    .collect();
                problem.pack(&line)
            };
            let (x, value, diag) = newton_minimize(&problem, x0, &mut thetas, &opts.lbfgs);
            let pts = problem.unpack(&x);
            let path = Trajectory::new(uniform_grid(horizon, steps), pts).expect("uniform grid");
            (horizon, value, diag, path)
        })
        .collect();

    let scan: Vec<(f64, f64)> = runs.iter().map(|(t, v, _, _)| (*t, *v)).collect();
    let best = runs
        .into_iter()
        .filter(|r| r.1.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Unsupported("no horizon produced a finite action".into()))?;
    let (horizon, value, diag, path) = best;
    let mut warnings = Vec::new();
    if !diag.converged {
        warnings.push(format!("optimizer did not converge at horizon {horizon}: {}", diag.reason));
    }
    // the infimum over horizons may be approached as T grows; only flag an
    // upper edge that is still moving
    let n = scan.len();
    if n > 1 && horizon == scan[0].0 {
        warnings.push(format!("best horizon {horizon} sits at the lower edge of the horizon grid"));
    } else if n > 1 && horizon == scan[n - 1].0 && (scan[n - 2].1 - value) > EDGE_TOL * value.abs() {
        warnings.push(format!("action still decreasing at the largest horizon {horizon}; enlarge the grid"));
    }
    Ok(QuasiPotential {
        value,
        provenance: Provenance::Numerical,
        horizon: Some(horizon),
        argmin: Some(path.final_state().to_vec()),
        connection_bound,
        converged: diag.converged,
        diagnostics: Some(diag),
        scan,
        warnings,
        path: Some(path),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;
    use approx::assert_abs_diff_eq;

    fn sis(l: f64, g: f64) -> ReactionModel {
        build_model(ModelKind::Sis, ModelParams::sis(l, g)).unwrap()
    }

    #[test]
    fn g_values() {
        assert_eq!(g_cost(0.7, 0.7).unwrap(), 0.0);
        assert_eq!(g_cost(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(g_cost(0.0, 1.0).unwrap(), 1.0);
        assert_abs_diff_eq!(g_cost(2.0, 1.0).unwrap(), 2.0 * 2f64.ln() - 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g_cost(2.0, 1.0).unwrap(), 0.386_294_361_119_890_6, epsilon = 1e-15);
        assert_eq!(g_cost(1.0, 0.0).unwrap(), f64::INFINITY);
        assert!(g_cost(-1.0, 1.0).is_err());
        assert!(g_cost(1.0, -1.0).is_err());
    }

    #[test]
    fn zero_cost_along_drift() {
        let m = sis(2.0, 1.0);
        let z = [0.3];
        let b = m.drift(&z);
        let sol = optimal_rates(&m, &z, b.as_slice()).unwrap();
        assert_abs_diff_eq!(sol.cost, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sol.rates[0], m.rate(0, &z), epsilon = 1e-14);
    }

    #[test]
    fn two_reaction_closed_form() {
        // beta = (1, 1): e^theta - e^-theta = v
        let m = sis(4.0, 2.0);
        let z = [0.5];
        assert_eq!(m.rates(&z), vec![1.0, 1.0]);
        let sol = optimal_rates(&m, &z, &[0.5]).unwrap();
        let x = (0.5 + (0.25f64 + 4.0).sqrt()) / 2.0;
        assert_abs_diff_eq!(sol.rates[0], x, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.rates[1], 1.0 / x, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.rates[0], 1.280_776_406_404_415, epsilon = 1e-12);
        let cost = g_unchecked(x, 1.0) + g_unchecked(1.0 / x, 1.0);
        assert_abs_diff_eq!(sol.cost, cost, epsilon = 1e-13);
        assert_abs_diff_eq!(sol.cost, 0.062_180_4, epsilon = 1e-7);
    }

    #[test]
    fn boundary_infeasibility() {
        let m = sis(2.0, 1.0);
        assert_eq!(optimal_rates(&m, &[0.0], &[0.1]).unwrap_err(), Error::InfeasibleVelocity);
        let still = optimal_rates(&m, &[0.0], &[0.0]).unwrap();
        assert_eq!(still.cost, 0.0);
        // at z = 1 infection vanishes but recovery does not
        assert!(optimal_rates(&m, &[1.0], &[0.2]).is_err());
        assert!(optimal_rates(&m, &[1.0], &[-0.2]).is_ok());
    }

    #[test]
    fn sirs_face_at_zero_infectives() {
        let m = build_model(ModelKind::Sirs, ModelParams::sirs(2.0, 1.0, 1.0)).unwrap();
        let z = [0.0, 0.5];
        // only loss of immunity is active: the cone is the ray (0, t), t >= 0
        let sol = optimal_rates(&m, &z, &[0.0, 0.3]).unwrap();
        assert_abs_diff_eq!(sol.rates[2], 0.3, epsilon = 1e-12);
        assert!(sol.residual < 1e-12);
        assert!(optimal_rates(&m, &z, &[0.0, -0.3]).is_err());
        assert!(optimal_rates(&m, &z, &[0.1, 0.3]).is_err());
        let zero = optimal_rates(&m, &z, &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(zero.cost, m.rate(2, &z), epsilon = 1e-15);
    }

    #[test]
    fn sir_face_with_opposite_jumps() {
        let m = build_model(ModelKind::SirDemography, ModelParams::sir_demography(2.0, 1.0, 0.1)).unwrap();
        let sol = optimal_rates(&m, &[0.0, 0.5], &[0.0, 0.0]).unwrap();
        // births and deaths balanced at the geometric mean
        let geo = (m.rate(2, &[0.0, 0.5]) * m.rate(3, &[0.0, 0.5])).sqrt();
        assert_abs_diff_eq!(sol.rates[2], geo, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.rates[3], geo, epsilon = 1e-12);
    }

    #[test]
    fn lln_path_has_zero_action() {
        let m = sis(2.0, 1.0);
        let traj = crate::deterministic::solve_lln(&m, &[0.1], 10.0, 1e-3).unwrap();
        let a = path_action(&m, &traj).unwrap();
        assert!(a.value <= 1e-8, "{}", a.value);
        assert!(a.converged, "{}", a.max_residual);
    }

    #[test]
    fn infeasible_path_is_infinite() {
        let m = sis(2.0, 1.0);
        let traj = Trajectory::new(vec![0.0, 1.0], vec![vec![0.0], vec![0.0]]).unwrap();
        assert_eq!(path_action(&m, &traj).unwrap().value, 0.0);
        let out = Trajectory::new(vec![0.0, 1.0], vec![vec![-0.2], vec![-0.1]]).unwrap();
        assert_eq!(path_action(&m, &out).unwrap().value, f64::INFINITY);
    }

    #[test]
    fn sis_closed_forms() {
        let q = quasipotential_ld_sis(&ModelParams::sis(2.0, 1.0)).unwrap();
        assert_abs_diff_eq!(q.value, 2f64.ln() - 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(q.value, 0.193_147, epsilon = 1e-6);
        let q = quasipotential_ld_sis(&ModelParams::sis(1.5, 1.0)).unwrap();
        assert_abs_diff_eq!(q.value, 0.072_132, epsilon = 1e-6);
        let q = quasipotential_ld_sis(&ModelParams::sis(1.0 + 1e-6, 1.0)).unwrap();
        assert!(q.value < 1e-11);
        assert!(quasipotential_ld_sis(&ModelParams::sis(1.0, 1.0)).is_err());

        let p = ModelParams::sis(2.0, 1.0);
        assert_abs_diff_eq!(ld_exit_cost_sis(&p, 0.2).unwrap(), 0.2 + 0.3 * 0.6f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(ld_exit_cost_sis(&p, 0.2).unwrap(), 0.046_752, epsilon = 1e-6);
        assert!(ld_exit_cost_sis(&p, 0.5).is_err());
    }

    #[test]
    fn reversed_flow_hits_level() {
        let m = sis(2.0, 1.0);
        let f = reversed_flow_to_level(&m, &[0.5001], 0, 0.7, 1e-2, 100.0).unwrap();
        assert_eq!(f.final_state()[0], 0.7);
        assert!(f.states().windows(2).all(|w| w[1][0] > w[0][0]));
    }

    #[test]
    fn trivial_target() {
        let m = sis(2.0, 1.0);
        let q = minimize_action_ld(&m, &[0.5], &Target::Point(vec![0.5]), &LdOptions::default()).unwrap();
        assert_eq!(q.value, 0.0);
    }

    #[test]
    fn numerical_sis_quasipotential() {
        for (l, g) in [(2.0, 1.0), (1.5, 1.0), (3.0, 2.0)] {
            let m = sis(l, g);
            let z = 1.0 - g / l;
            let q = minimize_action_ld(&m, &[z], &Target::Point(vec![0.0]), &LdOptions::default()).unwrap();
            let exact = quasipotential_ld_sis(&ModelParams::sis(l, g)).unwrap().value;
            assert!((q.value - exact).abs() / exact < 1e-3);
        }
    }

    #[test]
    fn numerical_sis_exit_cost() {
        let m = sis(2.0, 1.0);
        let target = Target::Hyperplane { component: 0, level: 0.7 };
        let q = minimize_action_ld(&m, &[0.5], &target, &LdOptions::default()).unwrap();
        let exact = ld_exit_cost_sis(&ModelParams::sis(2.0, 1.0), 0.2).unwrap();
        assert!((q.value - exact).abs() / exact < 1e-3);
    }

    #[test]
    fn discrete_gradient_matches_differences() {
        let cases = [
            (sis(2.0, 1.0), vec![0.5], Target::Point(vec![0.0])),
            (
                build_model(ModelKind::Sirs, ModelParams::sirs(2.0, 1.0, 1.0)).unwrap(),
                vec![0.25, 0.5],
                Target::Hyperplane { component: 0, level: 0.05 },
            ),
        ];
        for (m, start, target) in cases {
            let problem = DiscreteAction { model: &m, start: start.clone(), target: target.clone(), nodes: 9, h: 0.5 };
            let mut x = problem.pack(&reversed_flow_guess(&m, &start, &target, 5.0, 10));
            for (i, v) in x.iter_mut().enumerate() {
                *v += 1e-3 * ((i as f64) * 1.7).sin();
            }
            let mut g = vec![0.0; x.len()];
            let mut th = vec![Vec::new(); 10];
            let f0 = problem.eval(&x, &mut g, &mut th);
            assert!(f0.is_finite());
            for i in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += 1e-6;
                xm[i] -= 1e-6;
                let mut scratch = vec![0.0; x.len()];
                let fd = (problem.eval(&xp, &mut scratch, &mut th) - problem.eval(&xm, &mut scratch, &mut th)) / 2e-6;
                assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn sirs_small_exit_matches_quadratic_cost() {
        let m = build_model(ModelKind::Sirs, ModelParams::sirs(2.0, 1.0, 1.0)).unwrap();
        let z = m.endemic_equilibrium().unwrap().z_star;
        let a = 0.02;
        let target = Target::Hyperplane { component: 0, level: z[0] - a };
        let opts = LdOptions { horizons: log_grid(2.0, 50.0, 4), ..LdOptions::default() };
        let q = minimize_action_ld(&m, &z, &target, &opts).unwrap();
        let quad = crate::action_md::quasipotential_md(&m, a).unwrap().value;
        assert!(q.converged);
        assert!((q.value / quad - 1.0).abs() < 0.05, "{} vs {quad}", q.value);
    }

    #[test]
    fn cone_membership() {
        let gens = vec![vec![1.0, -1.0], vec![-1.0, 0.0]];
        assert!(in_cone(&gens, &[0.0, -1.0]));
        assert!(in_cone(&gens, &[-3.0, 0.0]));
        assert!(!in_cone(&gens, &[0.0, 1.0]));
        assert!(!in_cone(&gens, &[1.0, 0.0]));
        assert!(in_cone(&gens, &[0.0, 0.0]));
    }
}
