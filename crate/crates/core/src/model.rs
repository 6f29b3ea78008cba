//! Reaction-network encoding of the SIS, SIRS and SIR-with-demography models.
//!
//! A model is a list of reactions `(h_j, beta_j)`. Reaction `j` fires at rate
//! `N * beta_j(z)` and moves the proportion vector by `h_j / N`. The LLN drift
//! is `b(z) = sum_j beta_j(z) h_j`. For the SIRS and SIR-demography models the
//! state is `(i, s)`, infectives first.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Real part below which a Jacobian eigenvalue counts as stable.
pub const STABILITY_TOL: f64 = -1e-10;

/// Default population cap (proportion units) for the SIR-demography model.
pub const DEFAULT_POPULATION_CAP: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Sis,
    Sirs,
    SirDemography,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Sis => "sis",
            ModelKind::Sirs => "sirs",
            ModelKind::SirDemography => "sir-demography",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "sis" => Ok(ModelKind::Sis),
            "sirs" => Ok(ModelKind::Sirs),
            "sir-demography" | "sir" => Ok(ModelKind::SirDemography),
            other => Err(invalid("model", format!("unknown model `{other}`"))),
        }
    }
}

/// Rate constants, all per unit time. `rho` is only read by SIRS and `mu`
/// only by SIR-demography.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda: f64,
    pub gamma: f64,
    pub rho: Option<f64>,
    pub mu: Option<f64>,
}

impl ModelParams {
    pub fn sis(lambda: f64, gamma: f64) -> Self {
        Self {
            lambda,
            gamma,
            rho: None,
            mu: None,
        }
    }

    pub fn sirs(lambda: f64, gamma: f64, rho: f64) -> Self {
        Self {
            lambda,
            gamma,
            rho: Some(rho),
            mu: None,
        }
    }

    pub fn sir_demography(lambda: f64, gamma: f64, mu: f64) -> Self {
        Self {
            lambda,
            gamma,
            rho: None,
            mu: Some(mu),
        }
    }

    fn positive(name: &'static str, value: Option<f64>) -> Result<f64> {
        match value {
            None => Err(invalid(name, "required for this model")),
            Some(v) if !(v.is_finite() && v > 0.0) => {
                Err(invalid(name, format!("must be finite and > 0, got {v}")))
            }
            Some(v) => Ok(v),
        }
    }

    /// Checks that every rate the model reads is present and strictly positive.
    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        Self::positive("lambda", Some(self.lambda))?;
        Self::positive("gamma", Some(self.gamma))?;
        match kind {
            ModelKind::Sis => {}
            ModelKind::Sirs => {
                Self::positive("rho", self.rho)?;
            }
            ModelKind::SirDemography => {
                Self::positive("mu", self.mu)?;
            }
        }
        Ok(())
    }

    /// Whether the parameters put `kind` in its endemic regime.
    pub fn is_endemic(&self, kind: ModelKind) -> bool {
        match kind {
            ModelKind::Sis | ModelKind::Sirs => self.lambda > self.gamma,
            ModelKind::SirDemography => self.lambda > self.gamma + self.mu.unwrap_or(0.0),
        }
    }
}

/// `constant + coeffs . z`
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub constant: f64,
    pub coeffs: Vec<f64>,
}

impl Affine {
    pub fn new(constant: f64, coeffs: Vec<f64>) -> Self {
        Self { constant, coeffs }
    }

    /// The coordinate `z_i` in dimension `dim`.
    pub fn coordinate(dim: usize, i: usize) -> Self {
        let mut coeffs = vec![0.0; dim];
        coeffs[i] = 1.0;
        Self::new(0.0, coeffs)
    }

    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        self.constant
            + self
                .coeffs
                .iter()
                .zip(z)
                .map(|(c, x)| c * x)
                .sum::<f64>()
    }
}

pub type RateClosure = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Rate function `beta_j`. Built-in models use products of affine factors,
/// which have exact gradients; custom closures fall back to central
/// differences.
#[derive(Clone)]
pub enum Rate {
    Product { scale: f64, factors: Vec<Affine> },
    Custom(RateClosure),
}

impl fmt::Debug for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rate::Product { scale, factors } => f
                .debug_struct("Product")
                .field("scale", scale)
                .field("factors", factors)
                .finish(),
            Rate::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Rate {
    pub fn constant(value: f64) -> Self {
        Rate::Product {
            scale: value,
            factors: Vec::new(),
        }
    }

    pub fn product(scale: f64, factors: Vec<Affine>) -> Self {
        Rate::Product { scale, factors }
    }

    pub fn custom(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Rate::Custom(Arc::new(f))
    }

    /// Unclamped value.
    #[inline]
    pub fn raw(&self, z: &[f64]) -> f64 {
        match self {
            Rate::Product { scale, factors } => {
                factors.iter().fold(*scale, |acc, f| acc * f.eval(z))
            }
            Rate::Custom(f) => f(z),
        }
    }

    /// Gradient of the unclamped value, written into `out`.
    pub fn gradient(&self, z: &[f64], out: &mut [f64]) {
        match self {
            Rate::Product { scale, factors } => {
                out.iter_mut().for_each(|g| *g = 0.0);
                for (i, fi) in factors.iter().enumerate() {
                    let others: f64 = factors
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| *k != i)
                        .fold(*scale, |acc, (_, f)| acc * f.eval(z));
                    for (g, c) in out.iter_mut().zip(&fi.coeffs) {
                        *g += others * c;
                    }
                }
            }
            Rate::Custom(f) => {
                let h = 1e-6;
                let mut zp = z.to_vec();
                for (i, g) in out.iter_mut().enumerate() {
                    zp[i] = z[i] + h;
                    let up = f(&zp);
                    zp[i] = z[i] - h;
                    let down = f(&zp);
                    zp[i] = z[i];
                    *g = (up - down) / (2.0 * h);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reaction {
    pub label: String,
    pub jump: Vec<i64>,
    pub rate: Rate,
}

impl Reaction {
    pub fn new(label: impl Into<String>, jump: Vec<i64>, rate: Rate) -> Self {
        Self {
            label: label.into(),
            jump,
            rate,
        }
    }
}

/// Admissible region of proportion space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Domain {
    /// `z in [0, 1]`
    UnitInterval,
    /// `z_i >= 0`, `sum z_i <= 1`
    Simplex,
    /// `z in [0, cap]^d`
    Box { cap: f64 },
    /// Nonnegative orthant.
    Orthant,
}

impl Domain {
    /// Whether `z` lies in the domain, allowing a violation of `tol`.
    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        if z.iter().any(|x| !x.is_finite() || *x < -tol) {
            return false;
        }
        match *self {
            Domain::UnitInterval => z.iter().all(|x| *x <= 1.0 + tol),
            Domain::Simplex => z.iter().sum::<f64>() <= 1.0 + tol,
            Domain::Box { cap } => z.iter().all(|x| *x <= cap + tol),
            Domain::Orthant => true,
        }
    }
}

/// A density-dependent Markov jump process encoded by its reactions.
///
/// Immutable once built; share it across threads by reference.
#[derive(Debug, Clone)]
pub struct ReactionModel {
    dim: usize,
    reactions: Vec<Reaction>,
    domain: Domain,
    origin: Option<(ModelKind, ModelParams)>,
}

impl ReactionModel {
    /// Programmatic construction of an arbitrary network.
    pub fn new(dim: usize, reactions: Vec<Reaction>, domain: Domain) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        if reactions.is_empty() {
            return Err(invalid("reactions", "at least one reaction is required"));
        }
        for r in &reactions {
            if r.jump.len() != dim {
                return Err(invalid(
                    "reactions",
                    format!("jump of `{}` has length {} != {dim}", r.label, r.jump.len()),
                ));
            }
            if let Rate::Product { factors, .. } = &r.rate {
                if factors.iter().any(|f| f.coeffs.len() != dim) {
                    return Err(invalid(
                        "reactions",
                        format!("rate factor of `{}` has wrong dimension", r.label),
                    ));
                }
            }
        }
        Ok(Self {
            dim,
            reactions,
            domain,
            origin: None,
        })
    }

    /// The exact encoding of one of the three epidemic models.
    pub fn build(kind: ModelKind, params: ModelParams) -> Result<Self> {
        params.validate(kind)?;
        let ModelParams {
            lambda, gamma, rho, mu, ..
        } = params;
        let (dim, reactions, domain) = match kind {
            ModelKind::Sis => {
                let z = Affine::coordinate(1, 0);
                let s = Affine::new(1.0, vec![-1.0]);
                (
                    1,
                    vec![
                        Reaction::new("infection", vec![1], Rate::product(lambda, vec![z.clone(), s])),
                        Reaction::new("recovery", vec![-1], Rate::product(gamma, vec![z])),
                    ],
                    Domain::UnitInterval,
                )
            }
            ModelKind::Sirs => {
                let rho = rho.expect("validated");
                let i = Affine::coordinate(2, 0);
                let s = Affine::coordinate(2, 1);
                let r = Affine::new(1.0, vec![-1.0, -1.0]);
                (
                    2,
                    vec![
                        Reaction::new("infection", vec![1, -1], Rate::product(lambda, vec![i.clone(), s])),
                        Reaction::new("recovery", vec![-1, 0], Rate::product(gamma, vec![i])),
                        Reaction::new("loss-of-immunity", vec![0, 1], Rate::product(rho, vec![r])),
                    ],
                    Domain::Simplex,
                )
            }
            ModelKind::SirDemography => {
                let mu = mu.expect("validated");
                let i = Affine::coordinate(2, 0);
                let s = Affine::coordinate(2, 1);
                (
                    2,
                    vec![
                        Reaction::new("infection", vec![1, -1], Rate::product(lambda, vec![i.clone(), s.clone()])),
                        Reaction::new("removal", vec![-1, 0], Rate::product(gamma + mu, vec![i])),
                        Reaction::new("birth", vec![0, 1], Rate::constant(mu)),
                        Reaction::new("susceptible-death", vec![0, -1], Rate::product(mu, vec![s])),
                    ],
                    Domain::Box {
                        cap: DEFAULT_POPULATION_CAP,
                    },
                )
            }
        };
        Ok(Self {
            dim,
            reactions,
            domain,
            origin: Some((kind, params)),
        })
    }

    /// Overrides the population cap of a boxed domain.
    pub fn with_population_cap(mut self, cap: f64) -> Result<Self> {
        if !(cap.is_finite() && cap > 0.0) {
            return Err(invalid("population_cap", format!("must be > 0, got {cap}")));
        }
        match self.domain {
            Domain::Box { .. } => {
                self.domain = Domain::Box { cap };
                Ok(self)
            }
            _ => Err(invalid("population_cap", "model has a bounded population already")),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_reactions(&self) -> usize {
        self.reactions.len()
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn kind(&self) -> Option<ModelKind> {
        self.origin.map(|(k, _)| k)
    }

    pub fn params(&self) -> Option<ModelParams> {
        self.origin.map(|(_, p)| p)
    }

    /// `beta_j(z)`, clamped at zero.
    #[inline]
    pub fn rate(&self, j: usize, z: &[f64]) -> f64 {
        self.reactions[j].rate.raw(z).max(0.0)
    }

    /// All clamped rates into `out`; returns their sum.
    #[inline]
    pub fn rates_into(&self, z: &[f64], out: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for (o, r) in out.iter_mut().zip(&self.reactions) {
            *o = r.rate.raw(z).max(0.0);
            total += *o;
        }
        total
    }

    pub fn rates(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.reactions.len()];
        self.rates_into(z, &mut out);
        out
    }

    /// Gradient of `beta_j` at `z`. Zero where the clamp is active.
    pub fn rate_gradient(&self, j: usize, z: &[f64], out: &mut [f64]) {
        let r = &self.reactions[j].rate;
        if r.raw(z) < 0.0 {
            out.iter_mut().for_each(|g| *g = 0.0);
        } else {
            r.gradient(z, out);
        }
    }

    pub fn jump(&self, j: usize) -> &[i64] {
        &self.reactions[j].jump
    }

    /// `h_j` as a float vector.
    pub fn jump_vector(&self, j: usize) -> DVector<f64> {
        DVector::from_iterator(self.dim, self.reactions[j].jump.iter().map(|&h| h as f64))
    }

    /// `b(z) = sum_j beta_j(z) h_j`
    pub fn drift(&self, z: &[f64]) -> DVector<f64> {
        let mut b = DVector::zeros(self.dim);
        self.drift_into(z, b.as_mut_slice());
        b
    }

    pub fn drift_into(&self, z: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for r in &self.reactions {
            let beta = r.rate.raw(z).max(0.0);
            for (o, &h) in out.iter_mut().zip(&r.jump) {
                *o += beta * h as f64;
            }
        }
    }

    /// Jacobian `db_i/dz_k`.
    pub fn jacobian(&self, z: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        let mut jac = DMatrix::zeros(d, d);
        let mut grad = vec![0.0; d];
        for j in 0..self.reactions.len() {
            self.rate_gradient(j, z, &mut grad);
            for (i, &h) in self.reactions[j].jump.iter().enumerate() {
                if h != 0 {
                    for k in 0..d {
                        jac[(i, k)] += h as f64 * grad[k];
                    }
                }
            }
        }
        jac
    }

    /// `sum_j beta_j(z) h_j h_j^T`
    pub fn diffusion_matrix(&self, z: &[f64]) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.dim, self.dim);
        for j in 0..self.reactions.len() {
            let h = self.jump_vector(j);
            a += self.rate(j, z) * &h * h.transpose();
        }
        a
    }

    /// The LLN-stable endemic equilibrium, closed form per built-in model.
    pub fn endemic_equilibrium(&self) -> Result<Equilibrium> {
        let (kind, p) = self.origin.ok_or_else(|| {
            Error::Unsupported("closed-form equilibrium needs a built-in model".into())
        })?;
        if !p.is_endemic(kind) {
            let cond = match kind {
                ModelKind::SirDemography => "lambda > gamma + mu",
                _ => "lambda > gamma",
            };
            return Err(Error::NoEndemicEquilibrium(format!(
                "{kind} requires {cond} (lambda={}, gamma={})",
                p.lambda, p.gamma
            )));
        }
        let z_star = match kind {
            ModelKind::Sis => vec![1.0 - p.gamma / p.lambda],
            ModelKind::Sirs => {
                let rho = p.rho.expect("validated");
                vec![
                    rho / (p.gamma + rho) * (1.0 - p.gamma / p.lambda),
                    p.gamma / p.lambda,
                ]
            }
            ModelKind::SirDemography => {
                let mu = p.mu.expect("validated");
                vec![
                    mu / (p.gamma + mu) - mu / p.lambda,
                    (p.gamma + mu) / p.lambda,
                ]
            }
        };
        let eigenvalues = eigenvalues(&self.jacobian(&z_star));
        let stable = eigenvalues.iter().all(|e| e.re < STABILITY_TOL);
        Ok(Equilibrium {
            z_star,
            stable,
            eigenvalues,
        })
    }

    /// `z_star` of the endemic equilibrium, requiring it to be stable.
    pub(crate) fn stable_equilibrium(&self) -> Result<Vec<f64>> {
        let eq = self.endemic_equilibrium()?;
        if !eq.stable {
            let max_real = eq
                .eigenvalues
                .iter()
                .map(|e| e.re)
                .fold(f64::NEG_INFINITY, f64::max);
            return Err(Error::NotHurwitz { max_real });
        }
        Ok(eq.z_star)
    }
}

/// Build one of the three epidemic models.
pub fn build_model(kind: ModelKind, params: ModelParams) -> Result<ReactionModel> {
    ReactionModel::build(kind, params)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Equilibrium {
    pub z_star: Vec<f64>,
    pub stable: bool,
    #[serde(serialize_with = "serialize_complex")]
    pub eigenvalues: Vec<Complex<f64>>,
}

fn serialize_complex<S: serde::Serializer>(
    values: &[Complex<f64>],
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(values.len()))?;
    for v in values {
        seq.serialize_element(&[v.re, v.im])?;
    }
    seq.end()
}

/// Eigenvalues of a small real matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    match m.nrows() {
        1 => vec![Complex::new(m[(0, 0)], 0.0)],
        2 => {
            let tr = m[(0, 0)] + m[(1, 1)];
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            let disc = tr * tr / 4.0 - det;
            if disc >= 0.0 {
                let s = disc.sqrt();
                vec![Complex::new(tr / 2.0 + s, 0.0), Complex::new(tr / 2.0 - s, 0.0)]
            } else {
                let s = (-disc).sqrt();
                vec![Complex::new(tr / 2.0, s), Complex::new(tr / 2.0, -s)]
            }
        }
        _ => m.complex_eigenvalues().iter().copied().collect(),
    }
}

/// Basic reproduction number and infected-lifetime fraction of the
/// SIR-demography model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReproductionSummary {
    /// `lambda / (gamma + mu)`
    pub r0: f64,
    /// `mu / (gamma + mu)`
    pub epsilon: f64,
    /// `lambda / gamma`, valid when `mu << gamma`
    pub r0_approx: f64,
    /// `mu / gamma`, valid when `mu << gamma`
    pub epsilon_approx: f64,
}

/// `R0` and `epsilon`. A missing `mu` is read as zero (no demography).
pub fn r0_and_epsilon(params: &ModelParams) -> ReproductionSummary {
    let mu = params.mu.unwrap_or(0.0);
    ReproductionSummary {
        r0: params.lambda / (params.gamma + mu),
        epsilon: mu / (params.gamma + mu),
        r0_approx: params.lambda / params.gamma,
        epsilon_approx: mu / params.gamma,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sis() -> ReactionModel {
        build_model(ModelKind::Sis, ModelParams::sis(2.0, 1.0)).unwrap()
    }

    #[test]
    fn sis_encoding_and_rates() {
        let m = sis();
        assert_eq!(m.num_reactions(), 2);
        assert_eq!(m.jump(0), &[1]);
        assert_eq!(m.jump(1), &[-1]);
        assert_abs_diff_eq!(m.rate(0, &[0.5]), 0.5);
        assert_abs_diff_eq!(m.rate(1, &[0.5]), 0.5);
        assert_eq!(m.rates(&[0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn sirs_jumps() {
        let m = build_model(ModelKind::Sirs, ModelParams::sirs(2.0, 1.0, 1.0)).unwrap();
        assert_eq!(m.num_reactions(), 3);
        assert_eq!(m.jump(0), &[1, -1]);
        assert_eq!(m.jump(1), &[-1, 0]);
        assert_eq!(m.jump(2), &[0, 1]);
    }

    #[test]
    fn sir_demography_rates() {
        let m = build_model(ModelKind::SirDemography, ModelParams::sir_demography(2.0, 1.0, 0.1))
            .unwrap();
        assert_eq!(m.num_reactions(), 4);
        assert_eq!(m.jump(3), &[0, -1]);
        let r = m.rates(&[0.2, 0.5]);
        assert_abs_diff_eq!(r[0], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(r[1], 1.1 * 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(r[2], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(r[3], 0.05, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(build_model(ModelKind::Sis, ModelParams::sis(0.0, 1.0)).is_err());
        assert!(build_model(ModelKind::Sis, ModelParams::sis(2.0, -1.0)).is_err());
        assert!(build_model(ModelKind::Sirs, ModelParams::sis(2.0, 1.0)).is_err());
        assert!(build_model(ModelKind::SirDemography, ModelParams::sirs(2.0, 1.0, 1.0)).is_err());
        assert!(build_model(ModelKind::Sis, ModelParams::sis(f64::NAN, 1.0)).is_err());
    }

    #[test]
    fn drift_values() {
        let m = sis();
        assert_abs_diff_eq!(m.drift(&[0.5])[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.drift(&[0.0])[0], 0.0);
        assert_abs_diff_eq!(m.drift(&[0.25])[0], 0.125, epsilon = 1e-15);
    }

    #[test]
    fn sis_jacobian() {
        let m = sis();
        assert_abs_diff_eq!(m.jacobian(&[0.5])[(0, 0)], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.jacobian(&[0.0])[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn equilibria() {
        let eq = sis().endemic_equilibrium().unwrap();
        assert_abs_diff_eq!(eq.z_star[0], 0.5);
        assert!(eq.stable);

        let m = build_model(ModelKind::Sirs, ModelParams::sirs(2.0, 1.0, 1.0)).unwrap();
        let eq = m.endemic_equilibrium().unwrap();
        assert_abs_diff_eq!(eq.z_star[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(eq.z_star[1], 0.5, epsilon = 1e-15);
        assert!(eq.stable);

        let m = build_model(ModelKind::SirDemography, ModelParams::sir_demography(2.0, 1.0, 0.1))
            .unwrap();
        let eq = m.endemic_equilibrium().unwrap();
        assert_abs_diff_eq!(eq.z_star[0], 0.1 / 1.1 - 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(eq.z_star[0], 0.040_909_090_909_090_9, epsilon = 1e-14);
        assert_abs_diff_eq!(eq.z_star[1], 0.55, epsilon = 1e-15);
        assert!(eq.stable);
    }

    #[test]
    fn no_endemic_equilibrium() {
        let m = build_model(ModelKind::Sis, ModelParams::sis(1.0, 2.0)).unwrap();
        assert!(matches!(m.endemic_equilibrium(), Err(Error::NoEndemicEquilibrium(_))));
        let m = build_model(ModelKind::SirDemography, ModelParams::sir_demography(1.05, 1.0, 0.1))
            .unwrap();
        assert!(matches!(m.endemic_equilibrium(), Err(Error::NoEndemicEquilibrium(_))));
    }

    #[test]
    fn reproduction_numbers() {
        let s = r0_and_epsilon(&ModelParams::sir_demography(2.0, 1.0, 0.1));
        assert_abs_diff_eq!(s.r0, 2.0 / 1.1, epsilon = 1e-15);
        let s = r0_and_epsilon(&ModelParams::sis(2.0, 1.0));
        assert_eq!(s.epsilon, 0.0);
        // weekly infectious period, 75-year lifespan, time in years
        let (gamma, mu) = (52.0, 1.0 / 75.0);
        let s = r0_and_epsilon(&ModelParams::sir_demography(15.0 * (gamma + mu), gamma, mu));
        assert_abs_diff_eq!(s.r0, 15.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.epsilon, 1.0 / 3901.0, epsilon = 1e-15);
        // the commonly quoted 1/3750 rounds the year to 50 weeks
        assert!((s.epsilon * 3750.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn clamps_negative_rates() {
        let m = build_model(ModelKind::Sirs, ModelParams::sirs(2.0, 1.0, 1.0)).unwrap();
        // 1 - z1 - z2 = -1e-17 after rounding
        let z = [0.3, 0.7 + 1e-16];
        assert!(m.rate(2, &z) >= 0.0);
        let mut g = [1.0, 1.0];
        m.rate_gradient(2, &[0.5, 0.6], &mut g);
        assert_eq!(g, [0.0, 0.0]);
    }

    #[test]
    fn custom_model() {
        let m = ReactionModel::new(
            1,
            vec![Reaction::new("death", vec![-1], Rate::custom(|z| 3.0 * z[0]))],
            Domain::Orthant,
        )
        .unwrap();
        assert_abs_diff_eq!(m.jacobian(&[0.4])[(0, 0)], -3.0, epsilon = 1e-8);
        assert!(m.endemic_equilibrium().is_err());
        assert!(ReactionModel::new(2, vec![Reaction::new("x", vec![1], Rate::constant(1.0))], Domain::Orthant).is_err());
    }

    #[test]
    fn parse_kind() {
        assert_eq!("sir-demography".parse::<ModelKind>().unwrap(), ModelKind::SirDemography);
        assert_eq!("SIRS".parse::<ModelKind>().unwrap(), ModelKind::Sirs);
        assert!("seir".parse::<ModelKind>().is_err());
    }
}
