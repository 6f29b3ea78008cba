//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! The objective may return `+inf` for infeasible points; the line search
//! treats those as failed trials and shrinks the step.

use std::collections::VecDeque;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the max-abs gradient drops below this.
    pub grad_tol: f64,
    /// Stop after `stall_iters` consecutive iterations whose relative
    /// decrease is below this.
    pub rel_tol: f64,
    pub stall_iters: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 12,
            max_iters: 20_000,
            grad_tol: 1e-10,
            rel_tol: 1e-15,
            stall_iters: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerDiagnostics {
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub reason: String,
}

/// Minimizes `f`, which writes its gradient into the second argument and
/// returns the value. Returns the best point found.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> (Vec<f64>, f64, OptimizerDiagnostics)
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    let diag = |iterations, evaluations, g: &[f64], converged, reason: &str| OptimizerDiagnostics {
        iterations,
        evaluations,
        grad_norm: max_abs(g),
        converged,
        reason: reason.to_string(),
    };
    if !fx.is_finite() {
        return (x, fx, diag(0, evaluations, &g, false, "initial point infeasible"));
    }
    if n == 0 {
        return (x, fx, diag(0, evaluations, &g, true, "no free variables"));
    }

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut stall = 0;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    for iter in 0..opts.max_iters {
        if max_abs(&g) < opts.grad_tol {
            return (x, fx, diag(iter, evaluations, &g, true, "gradient tolerance"));
        }
        let mut dir = two_loop(&g, &history);
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&dir, &g);
        }
        // first iterate without curvature information: keep the step small
        let mut step = if history.is_empty() {
            (1.0 / max_abs(&g).max(1e-300)).min(1.0) * 1e-2
        } else {
            1.0
        };
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            let f_new = f(&x_new, &mut g_new);
            evaluations += 1;
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                    if history.len() == opts.memory {
                        history.pop_front();
                    }
                    history.push_back((s, y, 1.0 / sy));
                }
                let rel = (fx - f_new) / fx.abs().max(1e-300);
                stall = if rel < opts.rel_tol { stall + 1 } else { 0 };
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                fx = f_new;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if history.is_empty() {
                return (x, fx, diag(iter, evaluations, &g, false, "line search failed"));
            }
            // retry from steepest descent
            history.clear();
            continue;
        }
        if stall >= opts.stall_iters {
            return (x, fx, diag(iter + 1, evaluations, &g, true, "objective stalled"));
        }
    }
    (x, fx, diag(opts.max_iters, evaluations, &g, false, "iteration limit"))
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let scale = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= scale);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
