//! Moderate-deviation rate functionals.
//!
//! At scale `N^{-alpha}` around the endemic equilibrium (coordinates
//! translated so that `z* = 0`), paths obey a large-deviation principle with
//! speed `N^{1 - 2 alpha}` and quadratic rate
//! `1/2 int (phi' - B phi)^T A0^{-1} (phi' - B phi) dt`, where `B = grad b(z*)`
//! and `A0 = sum_j beta_j(z*) h_j h_j^T`. The cheapest way out to the
//! hyperplane `{x_1 = -a}` is a linear-quadratic control problem solved
//! through the controllability Gramian.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::clt::serialize_matrix;
use crate::deterministic::Trajectory;
use crate::error::{invalid, Error, Result};
use crate::linalg::expm;
use crate::model::{ModelKind, ReactionModel};
use crate::quasipotential::{Provenance, QuasiPotential};

/// Tolerance on `phi(0) = z`.
pub const START_TOL: f64 = 1e-12;

/// The noise covariance `A0` at the endemic equilibrium and its inverse.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseQuadratic {
    #[serde(serialize_with = "serialize_matrix")]
    pub a0: DMatrix<f64>,
    #[serde(serialize_with = "serialize_matrix")]
    pub a0_inv: DMatrix<f64>,
    pub det_a0: f64,
}

impl NoiseQuadratic {
    pub fn from_matrix(a0: DMatrix<f64>) -> Result<Self> {
        let det_a0 = a0.determinant();
        let scale = a0.abs().max().powi(a0.nrows() as i32);
        if !(det_a0.abs() > 1e-14 * scale) {
            return Err(Error::Singular(format!("noise covariance has determinant {det_a0:e}")));
        }
        let a0_inv = a0
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("noise covariance".into()))?;
        Ok(Self { a0, a0_inv, det_a0 })
    }

    /// `A0` of `model` at its endemic equilibrium.
    pub fn at_equilibrium(model: &ReactionModel) -> Result<Self> {
        let z = model.stable_equilibrium()?;
        Self::from_matrix(model.diffusion_matrix(&z))
    }

    /// `1/2 psi'^T A0^{-1} psi'`
    pub fn density(&self, psi_dot: &[f64]) -> f64 {
        let v = DVector::from_column_slice(psi_dot);
        0.5 * v.dot(&(&self.a0_inv * &v))
    }
}

/// MD cost density of the velocity `psi_dot` at the equilibrium of `model`.
pub fn md_rate_density(model: &ReactionModel, psi_dot: &[f64]) -> Result<f64> {
    if psi_dot.len() != model.dim() {
        return Err(invalid("psi_dot", format!("expected {} components", model.dim())));
    }
    Ok(NoiseQuadratic::at_equilibrium(model)?.density(psi_dot))
}

/// Coefficients of the MD density written out per model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum DensityCoefficients {
    /// `psi'^2 / (2 sigma2)`, `sigma2 = beta_1(z*) + beta_2(z*)`.
    Scalar { sigma2: f64 },
    /// `(a/2A)(psi_1' + psi_2')^2 + (c/2A) psi_1'^2 + (b/2A) psi_2'^2`
    /// with `A = ab + ac + bc`.
    Planar { a: f64, b: f64, c: f64 },
}

impl DensityCoefficients {
    pub fn density(&self, psi_dot: &[f64]) -> f64 {
        match *self {
            Self::Scalar { sigma2 } => psi_dot[0] * psi_dot[0] / (2.0 * sigma2),
            Self::Planar { a, b, c } => {
                let big = a * b + a * c + b * c;
                let (x, y) = (psi_dot[0], psi_dot[1]);
                (a * (x + y).powi(2) + c * x * x + b * y * y) / (2.0 * big)
            }
        }
    }

    /// `(a/2A, b/2A, c/2A)` for the planar form.
    pub fn scaled_triple(&self) -> Option<[f64; 3]> {
        match *self {
            Self::Planar { a, b, c } => {
                let big2 = 2.0 * (a * b + a * c + b * c);
                Some([a / big2, b / big2, c / big2])
            }
            Self::Scalar { .. } => None,
        }
    }
}

/// Per-model coefficients from the equilibrium rates: infection `a`,
/// removal `b` and the replenishment of susceptibles `c` (immunity loss,
/// or births plus deaths).
pub fn density_coefficients(model: &ReactionModel) -> Result<DensityCoefficients> {
    let kind = model
        .kind()
        .ok_or_else(|| Error::Unsupported("closed-form coefficients need a built-in model".into()))?;
    let z = model.stable_equilibrium()?;
    let beta = model.rates(&z);
    Ok(match kind {
        ModelKind::Sis => DensityCoefficients::Scalar { sigma2: beta[0] + beta[1] },
        ModelKind::Sirs => DensityCoefficients::Planar { a: beta[0], b: beta[1], c: beta[2] },
        ModelKind::SirDemography => DensityCoefficients::Planar {
            a: beta[0],
            b: beta[1],
            c: beta[2] + beta[3],
        },
    })
}

/// MD rate of the deviation path `phi` started at `z` (both in translated
/// coordinates). The rate is `+inf` unless `phi(0) = z`, which is reported
/// as [`Error::MismatchedStart`].
pub fn md_path_rate(model: &ReactionModel, z: &[f64], phi: &Trajectory) -> Result<f64> {
    let d = model.dim();
    if z.len() != d || phi.dim() != d {
        return Err(invalid("phi", format!("expected dimension {d}")));
    }
    let mismatch = z
        .iter()
        .zip(phi.initial_state())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if mismatch > START_TOL {
        return Err(Error::MismatchedStart { mismatch });
    }
    let z_star = model.stable_equilibrium()?;
    let b = model.jacobian(&z_star);
    let noise = NoiseQuadratic::from_matrix(model.diffusion_matrix(&z_star))?;
    let t = phi.times();
    let s = phi.states();
    let mut total = 0.0;
    for i in 0..t.len() - 1 {
        let h = t[i + 1] - t[i];
        let lo = DVector::from_column_slice(&s[i]);
        let hi = DVector::from_column_slice(&s[i + 1]);
        // increment of psi over the segment, trapezoidal in the integral term
        let dpsi = (&hi - &lo) - &b * (&lo + &hi) * (0.5 * h);
        total += h * noise.density((dpsi / h).as_slice());
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdOptions {
    /// Horizons at which the Gramian is evaluated, increasing.
    pub horizons: Vec<f64>,
    /// Relative tolerance of the adaptive Simpson quadrature.
    pub rel_tol: f64,
    /// Largest relative change of the cost over the last grid interval
    /// accepted as stationary.
    pub stationarity_tol: f64,
}

impl Default for MdOptions {
    fn default() -> Self {
        Self {
            horizons: crate::action_ld::log_grid(0.1, 1e3, 41),
            rel_tol: 1e-10,
            stationarity_tol: 1e-9,
        }
    }
}

/// `int_{lo}^{hi} e^{Bs} A0 e^{B^T s} ds` by adaptive Simpson.
fn gramian_piece(b: &DMatrix<f64>, a0: &DMatrix<f64>, lo: f64, hi: f64, rel_tol: f64) -> DMatrix<f64> {
    let f = |s: f64| {
        let e = expm(&(b * s));
        &e * a0 * e.transpose()
    };
    let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
    let whole = simpson(&fa, &fm, &fb, hi - lo);
    let tol = rel_tol * whole.abs().max().max(1e-300);
    adaptive(&f, lo, hi, fa, fm, fb, whole, tol, 50)
}

fn simpson(fa: &DMatrix<f64>, fm: &DMatrix<f64>, fb: &DMatrix<f64>, width: f64) -> DMatrix<f64> {
    (fa + fm * 4.0 + fb) * (width / 6.0)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &impl Fn(f64) -> DMatrix<f64>,
    lo: f64,
    hi: f64,
    fa: DMatrix<f64>,
    fm: DMatrix<f64>,
    fb: DMatrix<f64>,
    whole: DMatrix<f64>,
    tol: f64,
    depth: u32,
) -> DMatrix<f64> {
    let mid = 0.5 * (lo + hi);
    let (flm, frm) = (f(0.5 * (lo + mid)), f(0.5 * (mid + hi)));
    let left = simpson(&fa, &flm, &fm, mid - lo);
    let right = simpson(&fm, &frm, &fb, hi - mid);
    let refined = &left + &right;
    let err = (&refined - &whole).abs().max();
    if depth == 0 || err <= 15.0 * tol {
        return &refined + (&refined - &whole) / 15.0;
    }
    adaptive(f, lo, mid, fa, flm, fm.clone(), left, 0.5 * tol, depth - 1)
        + adaptive(f, mid, hi, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Controllability Gramians `G_T` for every horizon in `horizons`.
pub fn gramians(b: &DMatrix<f64>, a0: &DMatrix<f64>, horizons: &[f64], rel_tol: f64) -> Result<Vec<DMatrix<f64>>> {
    if horizons.is_empty() || horizons[0] <= 0.0 || horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("horizons", "must be positive and strictly increasing"));
    }
    let mut edges = vec![0.0];
    edges.extend_from_slice(horizons);
    let pieces: Vec<DMatrix<f64>> = edges
        .par_windows(2)
        .map(|w| gramian_piece(b, a0, w[0], w[1], rel_tol))
        .collect();
    let mut acc = DMatrix::zeros(b.nrows(), b.nrows());
    Ok(pieces
        .into_iter()
        .map(|p| {
            acc += p;
            acc.clone()
        })
        .collect())
}

/// MD quasi-potential `inf { V(0, x) : x_1 = -a }`. Closed form for SIS,
/// Gramian route otherwise.
pub fn quasipotential_md(model: &ReactionModel, a: f64) -> Result<QuasiPotential> {
    if model.kind() == Some(ModelKind::Sis) {
        if !(a >= 0.0) {
            return Err(invalid("a", format!("exit level must be >= 0, got {a}")));
        }
        let p = model.params().expect("built-in model");
        model.stable_equilibrium()?;
        let mut q = QuasiPotential::closed_form(p.lambda * a * a / (2.0 * p.gamma));
        q.argmin = Some(vec![-a]);
        return Ok(q);
    }
    quasipotential_md_gramian(model, a, &MdOptions::default())
}

/// Gramian route for any model: for each horizon, the minimum energy
/// `a^2 / (2 (G_T)_11)` to reach the hyperplane, attained at
/// `x = -a G_T e_1 / (G_T)_11`; then the infimum over horizons.
pub fn quasipotential_md_gramian(model: &ReactionModel, a: f64, opts: &MdOptions) -> Result<QuasiPotential> {
    if !(a >= 0.0) {
        return Err(invalid("a", format!("exit level must be >= 0, got {a}")));
    }
    let z = model.stable_equilibrium()?;
    let b = model.jacobian(&z);
    let noise = NoiseQuadratic::from_matrix(model.diffusion_matrix(&z))?;
    let grams = gramians(&b, &noise.a0, &opts.horizons, opts.rel_tol)?;
    let mut scan = Vec::with_capacity(grams.len());
    for (t, g) in opts.horizons.iter().zip(&grams) {
        let g11 = g[(0, 0)];
        if !(g11 > 0.0) {
            return Err(Error::Singular(format!("Gramian at T={t} has G_11={g11:e}")));
        }
        scan.push((*t, a * a / (2.0 * g11)));
    }
    let (best, &(horizon, value)) = scan
        .iter()
        .enumerate()
        .min_by(|x, y| x.1 .1.total_cmp(&y.1 .1))
        .expect("non-empty grid");
    let g = &grams[best];
    let argmin: Vec<f64> = (0..model.dim()).map(|i| -a * g[(i, 0)] / g[(0, 0)]).collect();
    let mut warnings = Vec::new();
    let n = scan.len();
    if n >= 2 {
        let (prev, last) = (scan[n - 2].1, scan[n - 1].1);
        if (prev - last).abs() > opts.stationarity_tol * last.abs() {
            warnings.push(format!(
                "cost still changing at the largest horizon {}; enlarge the horizon grid",
                scan[n - 1].0
            ));
        }
    }
    Ok(QuasiPotential {
        value,
        provenance: Provenance::Numerical,
        horizon: Some(horizon),
        argmin: Some(argmin),
        connection_bound: None,
        converged: warnings.is_empty(),
        diagnostics: None,
        scan,
        warnings,
        path: None,
    })
}

/// Predicted `log E(T)` for escape to `{x_1 = -a}` at scale `N^{-alpha}`:
/// `N^{1 - 2 alpha} V_a`.
pub fn md_extinction_exponent(model: &ReactionModel, pop_size: f64, alpha: f64, a: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(pop_size > 0.0) {
        return Err(invalid("pop_size", "must be positive"));
    }
    let v = quasipotential_md(model, a)?.value;
    Ok(pop_size.powf(1.0 - 2.0 * alpha) * v)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 0.5 {
        Ok(())
    } else {
        Err(Error::AlphaOutOfRange(alpha))
    }
}
