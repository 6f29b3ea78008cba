//! Gaussian fluctuations around the endemic equilibrium.
//!
//! `sqrt(N)(Z^N - z*)` converges to the Ornstein-Uhlenbeck process
//! `dU = B U dt + sum_j h_j sqrt(beta_j(z*)) dW_j` with `B = grad b(z*)`.
//! Its stationary covariance `P` solves `B P + P B^T + A = 0` where
//! `A = sum_j beta_j(z*) h_j h_j^T`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::deterministic::{uniform_grid, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::linalg::{lyapunov_residual, psd_sqrt, solve_lyapunov};
use crate::model::{eigenvalues, ReactionModel, STABILITY_TOL};
use crate::rng::{stream_rng, tag};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OUSpec {
    pub z_star: Vec<f64>,
    /// Drift matrix `grad b(z*)`.
    #[serde(serialize_with = "serialize_matrix")]
    pub drift: DMatrix<f64>,
    /// Diffusion matrix `sum_j beta_j(z*) h_j h_j^T`.
    #[serde(serialize_with = "serialize_matrix")]
    pub diffusion: DMatrix<f64>,
    /// Stationary covariance.
    #[serde(serialize_with = "serialize_matrix")]
    pub covariance: DMatrix<f64>,
}

pub(crate) fn serialize_matrix<S: serde::Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    serde::Serialize::serialize(&rows, s)
}

impl OUSpec {
    /// Builds the spec from explicit matrices, solving for the covariance.
    pub fn from_matrices(drift: DMatrix<f64>, diffusion: DMatrix<f64>) -> Result<Self> {
        let max_real = eigenvalues(&drift)
            .iter()
            .map(|e| e.re)
            .fold(f64::NEG_INFINITY, f64::max);
        if max_real >= STABILITY_TOL {
            return Err(Error::NotHurwitz { max_real });
        }
        let covariance = solve_lyapunov(&drift, &diffusion)?;
        Ok(Self {
            z_star: vec![0.0; drift.nrows()],
            drift,
            diffusion,
            covariance,
        })
    }

    pub fn dim(&self) -> usize {
        self.drift.nrows()
    }

    /// `|B P + P B^T + A|_max`
    pub fn residual(&self) -> f64 {
        lyapunov_residual(&self.drift, &self.covariance, &self.diffusion)
    }
}

/// OU limit at the endemic equilibrium.
pub fn ou_spec(model: &ReactionModel) -> Result<OUSpec> {
    let z_star = model.endemic_equilibrium()?.z_star;
    let drift = model.jacobian(&z_star);
    let diffusion = model.diffusion_matrix(&z_star);
    let mut spec = OUSpec::from_matrices(drift, diffusion)?;
    spec.z_star = z_star;
    Ok(spec)
}

/// Chernoff bound `exp(-a^2 / (2 P_11))` on `P(U_1 >= a)` in the stationary
/// regime. `P_11` is the stationary variance of the infective component.
pub fn clt_tail_bound(model: &ReactionModel, a: f64) -> Result<f64> {
    if !(a >= 0.0) {
        return Err(invalid("a", format!("deviation must be >= 0, got {a}")));
    }
    let spec = ou_spec(model)?;
    Ok(gaussian_chernoff(a, spec.covariance[(0, 0)]))
}

pub(crate) fn gaussian_chernoff(a: f64, variance: f64) -> f64 {
    (-a * a / (2.0 * variance)).exp()
}

/// Euler-Maruyama path of the OU process from `u0` over `[0, horizon]`.
pub fn simulate_ou(spec: &OUSpec, u0: &[f64], horizon: f64, dt: f64, seed: u64) -> Result<Trajectory> {
    if !(dt > 0.0 && horizon > 0.0) {
        return Err(invalid("dt", format!("need dt > 0 and horizon > 0, got {dt}, {horizon}")));
    }
    if u0.len() != spec.dim() {
        return Err(invalid("u0", format!("expected {} components", spec.dim())));
    }
    let steps = (horizon / dt).round().max(1.0) as usize;
    let times = uniform_grid(horizon, steps);
    let h = horizon / steps as f64;
    let noise = psd_sqrt(&spec.diffusion) * h.sqrt();
    let mut rng = stream_rng(seed, tag::OU);
    let d = spec.dim();
    let mut u = DVector::from_column_slice(u0);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(u0.to_vec());
    let mut xi = DVector::zeros(d);
    for _ in 0..steps {
        for x in xi.iter_mut() {
            *x = StandardNormal.sample(&mut rng);
        }
        u = &u + &spec.drift * &u * h + &noise * &xi;
        states.push(u.as_slice().to_vec());
    }
    Trajectory::new(times, states)
}

/// Sample covariance of the grid states with `t >= burn_in`.
pub fn empirical_covariance(traj: &Trajectory, burn_in: f64) -> DMatrix<f64> {
    let d = traj.dim();
    let rows: Vec<&Vec<f64>> = traj
        .times()
        .iter()
        .zip(traj.states())
        .filter(|(t, _)| **t >= burn_in)
        .map(|(_, s)| s)
        .collect();
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(d);
    for s in &rows {
        mean += DVector::from_column_slice(s);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for s in &rows {
        let c = DVector::from_column_slice(s) - &mean;
        cov += &c * c.transpose();
    }
    cov / (n - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelKind, ModelParams};
    use approx::assert_abs_diff_eq;

    fn sis() -> ReactionModel {
        build_model(ModelKind::Sis, ModelParams::sis(2.0, 1.0)).unwrap()
    }

    #[test]
    fn sis_spec() {
        let s = ou_spec(&sis()).unwrap();
        assert_abs_diff_eq!(s.drift[(0, 0)], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.diffusion[(0, 0)], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.covariance[(0, 0)], 0.5, epsilon = 1e-14);
        // sigma^2(z*) = beta_1 + beta_2 = 2 (gamma/lambda)(lambda - gamma)
        let (l, g) = (3.0, 1.25);
        let m = build_model(ModelKind::Sis, ModelParams::sis(l, g)).unwrap();
        let s = ou_spec(&m).unwrap();
        assert_abs_diff_eq!(s.diffusion[(0, 0)], 2.0 * g / l * (l - g), epsilon = 1e-14);
        assert_abs_diff_eq!(s.covariance[(0, 0)], g / l, epsilon = 1e-14);
    }

    #[test]
    fn zero_noise_means_zero_covariance() {
        let s = OUSpec::from_matrices(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.5, -1.0]),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        assert_eq!(s.covariance.abs().max(), 0.0);
    }

    #[test]
    fn sirs_residual() {
        let m = build_model(ModelKind::Sirs, ModelParams::sirs(2.0, 1.0, 1.0)).unwrap();
        let s = ou_spec(&m).unwrap();
        assert!(s.residual() <= 1e-10);
        let eig = s.covariance.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn non_hurwitz_rejected() {
        let err = OUSpec::from_matrices(DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 1.0));
        assert!(matches!(err, Err(Error::NotHurwitz { .. })));
        let m = build_model(ModelKind::Sis, ModelParams::sis(1.0, 2.0)).unwrap();
        assert!(ou_spec(&m).is_err());
    }

    #[test]
    fn tail_bounds() {
        let m = sis();
        assert_abs_diff_eq!(clt_tail_bound(&m, 0.2).unwrap(), (-0.04f64).exp(), epsilon = 1e-15);
        assert_eq!(clt_tail_bound(&m, 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(clt_tail_bound(&m, 1.0).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        assert!(clt_tail_bound(&m, -0.1).is_err());
    }

    #[test]
    fn noiseless_ou_decays() {
        let s = OUSpec::from_matrices(DMatrix::from_element(1, 1, -1.0), DMatrix::zeros(1, 1)).unwrap();
        let dt = 1e-3;
        let traj = simulate_ou(&s, &[2.0], 1.0, dt, 0).unwrap();
        // Euler decay (1 - dt)^n against exp(-t)
        assert_abs_diff_eq!(traj.final_state()[0], 2.0 * (-1.0f64).exp(), epsilon = 2.0 * dt);
    }
}
