//! Exact solver for one-dimensional function classes.
//!
//! `F(θ) = (n+1)·J̃(θ)` is piecewise linear in θ with kinks at `bᵢⱼ/φᵢ`. Each
//! kink raises the slope by `|φᵢ|·hᵢⱼ`, so sorting the kinks and accumulating
//! slopes finds the minimizer in `O(K log K)`.

use super::{Problem, RawSolution, RawStatus};

pub(super) fn solve(p: &Problem<'_>, test: &[f64]) -> RawSolution {
    let a = p.alpha.value();
    let phi_t = test[0];
    let mut slope = (1.0 - a) * phi_t;
    let mut scale = phi_t.abs();
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(p.n_steps());
    for (s, loss) in p.samples.iter().zip(p.calib.losses()) {
        let phi = s.dot(&[1.0]);
        if phi == 0.0 {
            continue;
        }
        scale += phi.abs();
        // As θ → −∞, uᵢ = φθ tends to −∞ when φ > 0 and to +∞ otherwise.
        let v_left = if phi > 0.0 { loss.lowest() } else { loss.highest() };
        slope += phi * (v_left - a);
        for k in s.steps.clone() {
            events.push((p.step_b[k] / phi, phi.abs() * p.step_h[k]));
        }
    }
    events.sort_by(|x, y| x.0.total_cmp(&y.0));
    let tol = 1e-9 * scale.max(1e-300);
    let gamma = p.gamma_scaled();

    let mut groups = 0;
    let mut i = 0;
    if gamma > 0.0 {
        // Root of the strictly increasing derivative D(θ) + Γθ.
        loop {
            let next = events.get(i).map_or(f64::INFINITY, |e| e.0);
            let root = -slope / gamma;
            if root <= next {
                return optimal(root, groups);
            }
            let t = next;
            while i < events.len() && events[i].0 == t {
                slope += events[i].1;
                i += 1;
            }
            groups += 1;
            if slope + gamma * t >= 0.0 {
                return optimal(t, groups);
            }
        }
    }

    if slope > tol {
        return unbounded(-1.0, groups, false, 0.0);
    }
    while i < events.len() {
        let t = events[i].0;
        while i < events.len() && events[i].0 == t {
            slope += events[i].1;
            i += 1;
        }
        groups += 1;
        // Largest minimizer: the first kink after which the slope is positive.
        if slope > tol {
            return optimal(t, groups);
        }
    }
    // A flat tail keeps the infimum finite; report it at the last kink.
    let last = events.last().map_or(0.0, |e| e.0);
    unbounded(1.0, groups, slope >= -tol, last)
}

fn optimal(theta: f64, iterations: usize) -> RawSolution {
    RawSolution {
        theta: vec![theta],
        status: RawStatus::Optimal,
        iterations,
        ray: None,
        multipliers: None,
        flat: false,
    }
}

fn unbounded(direction: f64, iterations: usize, flat: bool, at: f64) -> RawSolution {
    RawSolution {
        theta: vec![at],
        status: RawStatus::Unbounded,
        iterations,
        ray: Some(vec![direction]),
        multipliers: None,
        flat,
    }
}
