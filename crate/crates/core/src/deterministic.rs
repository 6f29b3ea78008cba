//! The LLN limit `z' = b(z)` and its linearization at the endemic equilibrium.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::linalg::expm;
use crate::model::ReactionModel;

/// Default RK4 step, in model time units.
pub const DEFAULT_DT: f64 = 1e-3;

/// How far an RK4 stage may leave the admissible domain before the step is
/// rejected.
const DOMAIN_SLACK: f64 = 1e-6;

/// A state sequence on a strictly increasing time grid starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() {
            return Err(Error::NotAbsolutelyContinuous(format!(
                "{} times for {} states",
                times.len(),
                states.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(Error::NotAbsolutelyContinuous(format!(
                "grid starts at {} instead of 0",
                times[0]
            )));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::NotAbsolutelyContinuous(format!(
                "times not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        let d = states[0].len();
        if states.iter().any(|s| s.len() != d) {
            return Err(Error::NotAbsolutelyContinuous("ragged state dimensions".into()));
        }
        Ok(Self { times, states })
    }

    /// Samples `f` on a uniform grid of `steps` intervals over `[0, t_end]`.
    pub fn sample(t_end: f64, steps: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let times = uniform_grid(t_end, steps);
        let states = times.iter().map(|&t| f(t)).collect();
        Self::new(times, states)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("non-empty")
    }

    /// Adds `offset` to every state.
    pub fn translated(&self, offset: &[f64]) -> Self {
        let states = self
            .states
            .iter()
            .map(|s| s.iter().zip(offset).map(|(x, o)| x + o).collect())
            .collect();
        Self {
            times: self.times.clone(),
            states,
        }
    }

    /// Multiplies every state by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            times: self.times.clone(),
            states: self
                .states
                .iter()
                .map(|s| s.iter().map(|x| c * x).collect())
                .collect(),
        }
    }

    /// Inserts the midpoint of every interval (piecewise-linear refinement).
    pub fn refined(&self) -> Self {
        let mut times = Vec::with_capacity(2 * self.len() - 1);
        let mut states = Vec::with_capacity(2 * self.len() - 1);
        for i in 0..self.len() - 1 {
            times.push(self.times[i]);
            states.push(self.states[i].clone());
            times.push(0.5 * (self.times[i] + self.times[i + 1]));
            states.push(
                self.states[i]
                    .iter()
                    .zip(&self.states[i + 1])
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect(),
            );
        }
        times.push(self.horizon());
        states.push(self.final_state().to_vec());
        Self { times, states }
    }
}

/// `steps + 1` points from 0 to `t_end`, endpoint exact.
pub fn uniform_grid(t_end: f64, steps: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=steps)
        .map(|i| t_end * i as f64 / steps as f64)
        .collect();
    if let Some(last) = g.last_mut() {
        *last = t_end;
    }
    g
}

fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(invalid("dt", format!("must be > 0, got {dt}")));
    }
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(invalid("t_end", format!("must be >= 0, got {t_end}")));
    }
    Ok(((t_end / dt) - 1e-9).ceil().max(0.0) as usize)
}

/// One classical RK4 step of `z' = sign * b(z)`. Stages are checked
/// against the domain.
pub(crate) fn rk4_step(
    model: &ReactionModel,
    z: &[f64],
    h: f64,
    sign: f64,
    t: f64,
) -> Result<Vec<f64>> {
    let d = model.dim();
    let domain = model.domain();
    let mut k = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut stage = z.to_vec();
    let weights = [0.5, 0.5, 1.0];
    for s in 0..4 {
        if !domain.contains(&stage, DOMAIN_SLACK) {
            return Err(Error::StepTooLarge {
                time: t,
                detail: format!("RK4 stage {s} at {stage:?}"),
            });
        }
        model.drift_into(&stage, &mut k[s]);
        k[s].iter_mut().for_each(|v| *v *= sign);
        if s < 3 {
            for i in 0..d {
                stage[i] = z[i] + weights[s] * h * k[s][i];
            }
        }
    }
    let next: Vec<f64> = (0..d)
        .map(|i| z[i] + h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]))
        .collect();
    if !domain.contains(&next, DOMAIN_SLACK) {
        return Err(Error::StepTooLarge {
            time: t + h,
            detail: format!("state {next:?}"),
        });
    }
    Ok(next)
}

/// Fixed-step RK4 integration of the LLN ODE over `[0, t_end]`. The last
/// step is shortened to land on `t_end`.
pub fn solve_lln(model: &ReactionModel, z0: &[f64], t_end: f64, dt: f64) -> Result<Trajectory> {
    integrate(model, z0, t_end, dt, 1.0)
}

/// Same as [`solve_lln`] for the time-reversed flow `z' = -b(z)`.
pub fn solve_reversed(model: &ReactionModel, z0: &[f64], t_end: f64, dt: f64) -> Result<Trajectory> {
    integrate(model, z0, t_end, dt, -1.0)
}

fn integrate(model: &ReactionModel, z0: &[f64], t_end: f64, dt: f64, sign: f64) -> Result<Trajectory> {
    if z0.len() != model.dim() {
        return Err(invalid("z0", format!("expected {} components", model.dim())));
    }
    if !model.domain().contains(z0, 0.0) {
        return Err(invalid("z0", format!("{z0:?} is outside the admissible domain")));
    }
    let n = step_count(t_end, dt)?;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(0.0);
    states.push(z0.to_vec());
    let mut t = 0.0;
    for i in 1..=n {
        let t_next = if i == n { t_end } else { i as f64 * dt };
        let z = rk4_step(model, states.last().unwrap(), t_next - t, sign, t)?;
        states.push(z);
        times.push(t_next);
        t = t_next;
    }
    Trajectory::new(times, states)
}

/// `exp(B t) z` with `B` the Jacobian at the endemic equilibrium, sampled
/// on the RK4 grid of step `dt`. Coordinates are deviations from `z*`.
pub fn solve_linearized(model: &ReactionModel, z: &[f64], t_end: f64, dt: f64) -> Result<Trajectory> {
    let z_star = model.endemic_equilibrium()?.z_star;
    if z.len() != model.dim() {
        return Err(invalid("z", format!("expected {} components", model.dim())));
    }
    let b = model.jacobian(&z_star);
    let n = step_count(t_end, dt)?;
    let times: Vec<f64> = (0..=n)
        .map(|i| if i == n { t_end } else { i as f64 * dt })
        .collect();
    let z0 = DVector::from_column_slice(z);
    let states = times
        .iter()
        .map(|&t| (expm(&(&b * t)) * &z0).as_slice().to_vec())
        .collect();
    Trajectory::new(times, states)
}
