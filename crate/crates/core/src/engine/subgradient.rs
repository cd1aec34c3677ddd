//! Normalized subgradient descent with `c/√t` steps, tracking the best iterate.

use super::{Problem, RawSolution, RawStatus, SolverConfig};
use crate::error::{Error, Result};
use crate::matrix::norm;

pub(super) fn solve(p: &Problem<'_>, test: &[f64], cfg: &SolverConfig) -> Result<RawSolution> {
    let d = p.d();
    let mut theta = match &cfg.warm_start {
        Some(w) if w.len() == d => w.clone(),
        Some(w) => {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: w.len(),
            })
        }
        None => vec![0.0; d],
    };
    let a = p.alpha.value();
    let gamma = p.reg.gamma();
    let n1 = p.n1();
    let mut best = theta.clone();
    let mut best_value = p.objective(&theta, test);
    let mut iterations = 0;
    for t in 1..=cfg.max_iterations {
        iterations = t;
        let mut g: Vec<f64> = test.iter().map(|v| (1.0 - a) * v / n1).collect();
        for (s, loss) in p.samples.iter().zip(p.calib.losses()) {
            s.axpy((loss.eval(s.dot(&theta)) - a) / n1, &mut g);
        }
        for (gj, th) in g.iter_mut().zip(&theta) {
            *gj += gamma * th;
        }
        let gn = norm(&g);
        if gn == 0.0 {
            best = theta.clone();
            break;
        }
        let step = cfg.step_scale / (t as f64).sqrt() / gn;
        for (th, gj) in theta.iter_mut().zip(&g) {
            *th -= step * gj;
        }
        let value = p.objective(&theta, test);
        if value < best_value {
            best_value = value;
            best.clone_from(&theta);
        }
    }
    Ok(RawSolution {
        theta: best,
        status: RawStatus::IterationLimit,
        iterations,
        ray: None,
        multipliers: None,
        flat: false,
    })
}
