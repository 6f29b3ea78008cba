use serde::Serialize;

use crate::deterministic::Trajectory;
use crate::optimize::OptimizerDiagnostics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ClosedForm,
    Numerical,
}

/// A quasi-potential value with the horizon and path that realized it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuasiPotential {
    pub value: f64,
    pub provenance: Provenance,
    /// Horizon of the best path; `None` for closed forms and for infima
    /// attained only as the horizon grows without bound.
    pub horizon: Option<f64>,
    /// End point of the minimizing path (untranslated coordinates).
    pub argmin: Option<Vec<f64>>,
    /// Upper bound on the cost of connecting the equilibrium to the
    /// epsilon-displaced start actually used; not included in `value`.
    pub connection_bound: Option<f64>,
    pub converged: bool,
    pub diagnostics: Option<OptimizerDiagnostics>,
    /// Value for every horizon tried, in grid order.
    pub scan: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub path: Option<Trajectory>,
}

impl QuasiPotential {
    pub fn closed_form(value: f64) -> Self {
        Self {
            value,
            provenance: Provenance::ClosedForm,
            horizon: None,
            argmin: None,
            connection_bound: None,
            converged: true,
            diagnostics: None,
            scan: Vec::new(),
            warnings: Vec::new(),
            path: None,
        }
    }
}
