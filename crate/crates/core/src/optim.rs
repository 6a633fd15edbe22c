//! Plain (projected) gradient descent with optional Armijo backtracking.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

/// Consecutive loss increases tolerated before declaring divergence.
const DIVERGENCE_PATIENCE: usize = 10;
const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    pub step: f64,
    pub max_iters: usize,
    /// Stop when the stationarity measure drops below `tol · (1 + ‖Z‖_F)`.
    pub tol: f64,
    pub backtracking: bool,
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return input(format!("step must be > 0, got {}", self.step));
        }
        if !(self.tol >= 0.0) {
            return input("tol must be >= 0");
        }
        Ok(())
    }
}

/// Objective values along the accepted iterates (index 0 is the start).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DescentTrace {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub best_value: f64,
    pub converged: bool,
}

pub trait Problem {
    fn value(&self, z: &DMatrix<f64>) -> Result<f64>;
    fn gradient(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>>;
    /// Size of the gradient relevant for stopping (the tangent part under constraints).
    fn stationarity(&self, _z: &DMatrix<f64>, grad: &DMatrix<f64>) -> f64 {
        grad.norm()
    }
}

/// Runs descent from `z0`, applying `project` after every step, and returns
/// the best iterate seen.
pub fn descend<P, F>(problem: &P, z0: DMatrix<f64>, cfg: &DescentConfig, project: F) -> Result<(DMatrix<f64>, DescentTrace)>
where
    P: Problem,
    F: Fn(DMatrix<f64>) -> DMatrix<f64>,
{
    cfg.validate()?;
    let mut z = z0;
    let mut f = problem.value(&z)?;
    if !f.is_finite() {
        return Err(Error::Optimization("objective is not finite at the initial point".into()));
    }
    let mut trace = DescentTrace { values: vec![f], iterations: 0, best_value: f, converged: false };
    let mut best = z.clone();
    let mut increases = 0;
    let mut last_step = cfg.step;

    for it in 0..cfg.max_iters {
        let g = problem.gradient(&z)?;
        if problem.stationarity(&z, &g) <= cfg.tol * (1.0 + z.norm()) {
            trace.converged = true;
            break;
        }
        let (next, f_next) = if cfg.backtracking {
            // warm start: never above the configured step
            let mut t = (2.0 * last_step).min(cfg.step);
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let cand = project(&z - &g * t);
                let f_cand = problem.value(&cand)?;
                let moved = (&cand - &z).norm_squared();
                if f_cand.is_finite() && f_cand <= f - ARMIJO_C * moved / t {
                    last_step = t;
                    accepted = Some((cand, f_cand));
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some(a) => a,
                None => {
                    // no decrease available at machine precision
                    trace.converged = true;
                    break;
                }
            }
        } else {
            let cand = project(&z - &g * cfg.step);
            let f_cand = problem.value(&cand)?;
            if !f_cand.is_finite() {
                return Err(Error::Optimization(format!(
                    "objective became non-finite at iteration {}; use a smaller step",
                    it + 1
                )));
            }
            if f_cand > f {
                increases += 1;
                if increases >= DIVERGENCE_PATIENCE {
                    return Err(Error::Optimization(format!(
                        "objective increased for {DIVERGENCE_PATIENCE} consecutive steps; use a smaller step"
                    )));
                }
            } else {
                increases = 0;
            }
            (cand, f_cand)
        };
        z = next;
        f = f_next;
        trace.values.push(f);
        trace.iterations = it + 1;
        if f < trace.best_value {
            trace.best_value = f;
            best.copy_from(&z);
        }
    }
    Ok((best, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic;
    impl Problem for Quadratic {
        fn value(&self, z: &DMatrix<f64>) -> Result<f64> {
            Ok(z.norm_squared())
        }
        fn gradient(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
            Ok(z * 2.0)
        }
    }

    #[test]
    fn converges_on_a_quadratic() {
        let cfg = DescentConfig { step: 0.25, max_iters: 200, tol: 1e-10, backtracking: true };
        let (z, trace) = descend(&Quadratic, DMatrix::from_element(2, 2, 1.0), &cfg, |z| z).unwrap();
        assert!(z.norm() < 1e-8);
        assert!(trace.converged);
        assert!(trace.values.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn large_fixed_step_diverges() {
        let cfg = DescentConfig { step: 1.5, max_iters: 100, tol: 0.0, backtracking: false };
        let r = descend(&Quadratic, DMatrix::from_element(1, 1, 1.0), &cfg, |z| z);
        assert!(matches!(r, Err(Error::Optimization(_))));
    }

    #[test]
    fn backtracking_rescues_large_step() {
        let cfg = DescentConfig { step: 10.0, max_iters: 100, tol: 1e-9, backtracking: true };
        let (z, _) = descend(&Quadratic, DMatrix::from_element(1, 1, 1.0), &cfg, |z| z).unwrap();
        assert!(z.norm() < 1e-6);
    }
}
