//! Dual coordinate ascent for the ridge-regularized problem.
//!
//! With `F(θ) = gᵀθ + Σₖ hₖ max(0, Aₖθ − bₖ) + Γ/2 ‖θ‖²` the dual variables
//! `δₖ ∈ [0, hₖ]` determine `θ = −(g + Σₖ δₖAₖ)/Γ`, and each coordinate has a
//! closed-form maximizer. A new test point only shifts `g`, so `δ` carries
//! over as a warm start.

use super::{Problem, RawSolution, RawStatus};

#[derive(Debug, Clone)]
pub struct RidgeState {
    delta: Vec<f64>,
    theta: Vec<f64>,
    test: Vec<f64>,
}

pub(super) fn solve(p: &Problem<'_>, test: &[f64], max_sweeps: usize, state: &mut super::SolverState) -> RawSolution {
    let gamma = p.gamma_scaled();
    let c = 1.0 - p.alpha.value();
    let mut st = match std::mem::take(state) {
        super::SolverState::Ridge(mut s) if s.delta.len() == p.n_steps() && s.theta.len() == p.d() => {
            for ((t, new), old) in s.theta.iter_mut().zip(test).zip(&s.test) {
                *t -= c * (new - old) / gamma;
            }
            s.test = test.to_vec();
            s
        }
        _ => {
            let theta = p.linear_term(test).into_iter().map(|v| -v / gamma).collect();
            RidgeState {
                delta: vec![0.0; p.n_steps()],
                theta,
                test: test.to_vec(),
            }
        }
    };

    let scale = 1.0 + p.step_b.iter().fold(0.0_f64, |m, b| m.max(b.abs()));
    let tol = 1e-12 * scale;
    let mut sweeps = 0;
    let mut status = RawStatus::IterationLimit;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut worst = 0.0_f64;
        for s in &p.samples {
            if s.norm2 == 0.0 {
                continue;
            }
            for k in s.steps.clone() {
                let grad = s.dot(&st.theta) - p.step_b[k];
                let old = st.delta[k];
                let h = p.step_h[k];
                let viol = if old <= 0.0 {
                    grad.max(0.0)
                } else if old >= h {
                    (-grad).max(0.0)
                } else {
                    grad.abs()
                };
                worst = worst.max(viol);
                let new = (old + gamma * grad / s.norm2).clamp(0.0, h);
                if new != old {
                    st.delta[k] = new;
                    s.axpy(-(new - old) / gamma, &mut st.theta);
                }
            }
        }
        if worst <= tol {
            status = RawStatus::Optimal;
            break;
        }
    }

    let a = p.alpha.value();
    let multipliers = p
        .samples
        .iter()
        .zip(p.calib.losses())
        .map(|(s, loss)| loss.lowest() - a + s.steps.clone().map(|k| st.delta[k]).sum::<f64>())
        .collect();
    let theta = st.theta.clone();
    *state = super::SolverState::Ridge(st);
    RawSolution {
        theta,
        status,
        iterations: sweeps,
        ray: None,
        multipliers: Some(multipliers),
        flat: false,
    }
}
