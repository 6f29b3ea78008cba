//! Extinction-time predictions, critical population sizes and the
//! comparison of the three tail regimes.
//!
//! Every prediction is an exponent: the theory fixes `log E(T)` up to an
//! additive `±eta` term times the speed, and says nothing about prefactors.

use serde::Serialize;

use crate::action_ld::{ld_exit_cost_sis, minimize_action_ld, quasipotential_ld_sis, LdOptions, Target};
use crate::action_md::{check_alpha, quasipotential_md};
use crate::error::{invalid, Error, Result};
use crate::model::{build_model, r0_and_epsilon, ModelKind, ModelParams, ReactionModel};
use crate::quasipotential::QuasiPotential;
use crate::simulate::ExtinctionStats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalSize {
    pub r0: f64,
    pub epsilon: f64,
    /// `1 / (eps^2 (1 - 1/R0)^2 R0)`
    pub full: f64,
    /// `1 / (eps^2 R0)`, dropping the `(1 - 1/R0)^2` factor.
    pub simplified: f64,
}

/// Population size below which Gaussian fluctuations alone reach
/// extinction, from `R0` and the infected-lifetime fraction `epsilon`.
pub fn critical_size(r0: f64, epsilon: f64) -> Result<CriticalSize> {
    if !(r0 > 1.0) || !r0.is_finite() {
        return Err(Error::NoEndemicEquilibrium(format!("R0 must exceed 1, got {r0}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid("epsilon", format!("must lie in (0, 1), got {epsilon}")));
    }
    let e2 = epsilon * epsilon;
    Ok(CriticalSize {
        r0,
        epsilon,
        full: 1.0 / (e2 * (1.0 - 1.0 / r0).powi(2) * r0),
        simplified: 1.0 / (e2 * r0),
    })
}

/// [`critical_size`] for SIR-demography parameters.
pub fn critical_size_clt(params: &ModelParams) -> Result<CriticalSize> {
    params.validate(ModelKind::SirDemography)?;
    let s = r0_and_epsilon(params);
    critical_size(s.r0, s.epsilon)
}

/// `(1/z_1*)^{1/alpha}`: the size at which fluctuations of order `N^{-alpha}`
/// match the endemic infective level.
pub fn critical_size_md(model: &ReactionModel, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let z1 = model.stable_equilibrium()?[0];
    Ok((1.0 / z1).powf(1.0 / alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "regime", rename_all = "kebab-case")]
pub enum Regime {
    /// Full extinction at speed `N`.
    Ld,
    /// Escape to `{x_1 = -a}` at scale `N^{-alpha}`, speed `N^{1 - 2 alpha}`.
    Md { alpha: f64, a: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtinctionPrediction {
    pub regime: Regime,
    pub pop_size: f64,
    /// `N` or `N^{1 - 2 alpha}`
    pub speed: f64,
    pub quasipotential: QuasiPotential,
    /// Predicted `log E(T)`.
    pub log_mean_time: f64,
    pub eta: f64,
    /// `speed (V - eta)` and `speed (V + eta)`.
    pub log_bounds: (f64, f64),
}

/// Cost of full extinction from the endemic equilibrium: closed form for
/// SIS, numerical minimization to `{z_1 = 0}` otherwise.
pub fn extinction_quasipotential(model: &ReactionModel) -> Result<QuasiPotential> {
    if let (Some(ModelKind::Sis), Some(p)) = (model.kind(), model.params()) {
        return quasipotential_ld_sis(&p);
    }
    let z = model.stable_equilibrium()?;
    minimize_action_ld(model, &z, &Target::Hyperplane { component: 0, level: 0.0 }, &LdOptions::default())
}

/// Predicted `log E(T)` in the given regime.
pub fn extinction_time_prediction(model: &ReactionModel, pop_size: f64, regime: Regime, eta: f64) -> Result<ExtinctionPrediction> {
    if !(pop_size > 0.0) {
        return Err(invalid("pop_size", "must be positive"));
    }
    if !(eta >= 0.0) {
        return Err(invalid("eta", "must be >= 0"));
    }
    let (speed, quasipotential) = match regime {
        Regime::Ld => (pop_size, extinction_quasipotential(model)?),
        Regime::Md { alpha, a } => {
            check_alpha(alpha)?;
            (pop_size.powf(1.0 - 2.0 * alpha), quasipotential_md(model, a)?)
        }
    };
    let v = quasipotential.value;
    Ok(ExtinctionPrediction {
        regime,
        pop_size,
        speed,
        log_mean_time: speed * v,
        eta,
        log_bounds: (speed * (v - eta), speed * (v + eta)),
        quasipotential,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundComparison {
    pub a: f64,
    pub pop_size: f64,
    pub alpha: f64,
    pub eta: f64,
    /// `lambda a^2 / (2 gamma)`
    pub clt: f64,
    /// `N^{1 - 2 alpha} lambda a^2 / (2 gamma)`
    pub md: f64,
    /// `N (a + (gamma/lambda - a) log(1 - a lambda/gamma))`; `None` when
    /// `a >= gamma/lambda`.
    pub ld: Option<f64>,
    pub ld_error: Option<String>,
    /// LD exponent over its quadratic approximation `N lambda a^2 / (2 gamma)`.
    pub ld_quadratic_ratio: Option<f64>,
    /// Second-order prediction of that ratio, `1 + a lambda / (3 gamma)`.
    pub ld_ratio_taylor: f64,
}

/// Exponents of the CLT, MD and LD tail bounds for an SIS deviation of
/// size `a` below equilibrium.
pub fn compare_bounds(params: &ModelParams, a: f64, pop_size: f64, alpha: f64, eta: f64) -> Result<BoundComparison> {
    params.validate(ModelKind::Sis)?;
    if !params.is_endemic(ModelKind::Sis) {
        return Err(Error::NoEndemicEquilibrium(format!(
            "SIS requires lambda > gamma ({} <= {})",
            params.lambda, params.gamma
        )));
    }
    if !(a > 0.0) {
        return Err(invalid("a", format!("deviation must be positive, got {a}")));
    }
    if !(pop_size >= 1.0) {
        return Err(invalid("pop_size", "must be >= 1"));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let (l, g) = (params.lambda, params.gamma);
    let quad = l * a * a / (2.0 * g);
    let (ld, ld_error) = match ld_exit_cost_sis(params, a) {
        Ok(v) => (Some(pop_size * v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(BoundComparison {
        a,
        pop_size,
        alpha,
        eta,
        clt: quad,
        md: pop_size.powf(1.0 - 2.0 * alpha) * quad,
        ld,
        ld_error,
        ld_quadratic_ratio: ld.map(|v| v / (pop_size * quad)),
        ld_ratio_taylor: 1.0 + a * l / (3.0 * g),
    })
}

/// Least-squares line through `(N, log mean T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_err: f64,
    pub points: usize,
}

/// Fits `log E(T) ~ intercept + slope N` to Monte Carlo summaries; the slope
/// estimates the quasi-potential.
pub fn fit_log_mean_time(stats: &[ExtinctionStats]) -> Result<ScalingFit> {
    let pts: Vec<(f64, f64)> = stats.iter().map(|s| (s.pop_size as f64, s.log_mean)).collect();
    fit_line(&pts)
}

pub(crate) fn fit_line(pts: &[(f64, f64)]) -> Result<ScalingFit> {
    let n = pts.len();
    if n < 2 {
        return Err(invalid("stats", "need at least two population sizes"));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(invalid("stats", "population sizes must differ"));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_std_err = if n > 2 {
        let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        (rss / (nf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(ScalingFit {
        slope,
        intercept,
        slope_std_err,
        points: n,
    })
}

/// Measles-like parameters: infectious period of one week, a 75-year life
/// expectancy and `R0 = 15`, with time in years.
pub fn measles_params() -> ModelParams {
    let gamma = 52.0;
    let mu = 1.0 / 75.0;
    ModelParams::sir_demography(15.0 * (gamma + mu), gamma, mu)
}

/// Convenience: build the model for `params` and report its critical sizes
/// in both regimes.
pub fn critical_sizes(kind: ModelKind, params: ModelParams, alpha: f64) -> Result<(Option<CriticalSize>, f64)> {
    let model = build_model(kind, params)?;
    let clt = match kind {
        ModelKind::SirDemography => Some(critical_size_clt(&params)?),
        _ => None,
    };
    Ok((clt, critical_size_md(&model, alpha)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn measles_critical_size() {
        let c = critical_size(15.0, 1.0 / 3750.0).unwrap();
        assert_eq!(c.simplified.round(), 937_500.0);
        assert!((c.simplified - 937_500.0).abs() < 1e-6);
        let oracle = 3750.0f64.powi(2) / 15.0 / (14.0f64 / 15.0).powi(2);
        assert_abs_diff_eq!(c.full, oracle, epsilon = 1e-6);
        assert!((c.full - 1.076e6).abs() < 1e3);
        assert!(critical_size(1.0, 0.01).is_err());
        assert!(critical_size(2.0, 0.0).is_err());
    }

    #[test]
    fn critical_size_decreases_in_r0() {
        let sizes: Vec<f64> = [2.5, 4.0, 8.0, 16.0].iter().map(|&r| critical_size(r, 1e-3).unwrap().full).collect();
        assert!(sizes.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn measles_preset() {
        let c = critical_size_clt(&measles_params()).unwrap();
        assert_abs_diff_eq!(c.r0, 15.0, epsilon = 1e-12);
        assert_abs_diff_eq!(1.0 / c.epsilon, 3901.0, epsilon = 1e-9);
    }

    #[test]
    fn md_critical_size() {
        let m = build_model(ModelKind::Sis, ModelParams::sis(2.0, 1.0)).unwrap();
        assert_abs_diff_eq!(critical_size_md(&m, 0.25).unwrap(), 16.0, epsilon = 1e-12);
        let half = critical_size_md(&m, 0.5).unwrap();
        for alpha in [0.1, 0.2, 0.3] {
            let v = critical_size_md(&m, alpha).unwrap();
            assert_abs_diff_eq!(v.ln(), half.ln() / (2.0 * alpha), epsilon = 1e-12);
        }
        assert!(critical_size_md(&m, 0.0).is_err());
    }

    #[test]
    fn predictions() {
        let m = build_model(ModelKind::Sis, ModelParams::sis(1.5, 1.0)).unwrap();
        let p = extinction_time_prediction(&m, 100.0, Regime::Ld, 0.0).unwrap();
        assert_abs_diff_eq!(p.log_mean_time, 7.2132, epsilon = 1e-4);
        let p1 = extinction_time_prediction(&m, 100.0, Regime::Md { alpha: 0.5, a: 0.1 }, 0.0).unwrap();
        let p2 = extinction_time_prediction(&m, 1e4, Regime::Md { alpha: 0.5, a: 0.1 }, 0.0).unwrap();
        assert_eq!(p1.log_mean_time, p2.log_mean_time);
        let q = extinction_time_prediction(&m, 100.0, Regime::Ld, 0.01).unwrap();
        assert_abs_diff_eq!(q.log_bounds.1 - q.log_bounds.0, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn bounds_example() {
        let b = compare_bounds(&ModelParams::sis(2.0, 1.0), 0.2, 100.0, 0.25, 0.0).unwrap();
        assert_abs_diff_eq!(b.clt, 0.04, epsilon = 1e-15);
        assert_abs_diff_eq!(b.md, 0.4, epsilon = 1e-14);
        assert_abs_diff_eq!(b.ld.unwrap(), 4.6752, epsilon = 1e-4);
        assert!(b.ld.unwrap() >= b.md && b.md >= b.clt);
        let edge = compare_bounds(&ModelParams::sis(2.0, 1.0), 0.5, 100.0, 0.25, 0.0).unwrap();
        assert!(edge.ld.is_none() && edge.ld_error.is_some());
        assert_abs_diff_eq!(edge.md, 10.0 * 0.25, epsilon = 1e-12);
    }

    #[test]
    fn small_a_ratio() {
        for a in [1e-2, 1e-3] {
            let b = compare_bounds(&ModelParams::sis(2.0, 1.0), a, 100.0, 0.25, 0.0).unwrap();
            let r = b.ld_quadratic_ratio.unwrap();
            assert!((r - 1.0).abs() < 0.05);
            assert!((r - b.ld_ratio_taylor).abs() < 10.0 * a * a);
        }
    }

    #[test]
    fn sirs_extinction_cost() {
        let m = build_model(ModelKind::Sirs, ModelParams::sirs(2.0, 1.0, 1.0)).unwrap();
        let q = extinction_quasipotential(&m).unwrap();
        assert!(q.value.is_finite() && q.value > 0.0);
        assert!(q.converged && q.warnings.is_empty(), "{:?}", q.warnings);
    }

    #[test]
    fn line_fit() {
        let pts = [(40.0, 1.0 + 0.07 * 40.0), (60.0, 1.0 + 0.07 * 60.0), (80.0, 1.0 + 0.07 * 80.0)];
        let f = fit_line(&pts).unwrap();
        assert_abs_diff_eq!(f.slope, 0.07, epsilon = 1e-12);
        assert_abs_diff_eq!(f.intercept, 1.0, epsilon = 1e-10);
        assert!(fit_line(&pts[..1]).is_err());
    }
}
