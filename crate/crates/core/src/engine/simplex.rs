//! Bounded-variable dual simplex for the unregularized problem with `d > 1`.
//!
//! The primal `min_θ gᵀθ + Σₖ hₖ max(0, Aₖθ − bₖ)` has the LP dual
//!
//! ```text
//! min bᵀx  s.t.  Σₖ xₖ Aₖ = r,  0 ≤ x ≤ h,      r = −g
//! ```
//!
//! with one column per loss jump (`Aₖ = Φᵢ` of the owning sample). The simplex
//! multipliers of an optimal basis are a minimizer `θ̂`. `d` artificial columns
//! `eⱼ` fixed at zero give a trivially dual-feasible starting basis. A change
//! of test point only moves `r`, so the final basis of one solve is a dual
//! feasible start for the next.

use super::{Problem, RawSolution, RawStatus};
use crate::error::{Error, Result};

const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Lower,
    Upper,
    Basic,
}

#[derive(Debug, Clone)]
pub struct SimplexState {
    basis: Vec<usize>,
    status: Vec<Status>,
    /// Row-major `B⁻¹`.
    binv: Vec<f64>,
    xb: Vec<f64>,
    y: Vec<f64>,
    dj: Vec<f64>,
    rhs: Vec<f64>,
    since_refactor: usize,
    n_struct: usize,
}

impl SimplexState {
    fn cold(p: &Problem<'_>, rhs: Vec<f64>) -> Self {
        let d = p.d();
        let n = p.n_steps();
        let mut status = vec![Status::Lower; n + d];
        let mut dj = vec![0.0; n + d];
        let mut xb = rhs.clone();
        for k in 0..n {
            dj[k] = p.step_b[k];
            if p.step_b[k] < 0.0 {
                status[k] = Status::Upper;
                p.samples[p.step_sample[k]].axpy(-p.step_h[k], &mut xb);
            }
        }
        for s in &mut status[n..] {
            *s = Status::Basic;
        }
        let mut binv = vec![0.0; d * d];
        for j in 0..d {
            binv[j * d + j] = 1.0;
        }
        Self {
            basis: (n..n + d).collect(),
            status,
            binv,
            xb,
            y: vec![0.0; d],
            dj,
            rhs,
            since_refactor: 0,
            n_struct: n,
        }
    }

    fn fits(&self, p: &Problem<'_>) -> bool {
        self.n_struct == p.n_steps() && self.y.len() == p.d()
    }

    /// Moves to a new right-hand side; the basis stays dual feasible.
    fn set_rhs(&mut self, rhs: Vec<f64>) {
        let d = self.y.len();
        let delta: Vec<f64> = rhs.iter().zip(&self.rhs).map(|(a, b)| a - b).collect();
        for (j, &dj) in delta.iter().enumerate() {
            if dj != 0.0 {
                for r in 0..d {
                    self.xb[r] += self.binv[r * d + j] * dj;
                }
            }
        }
        self.rhs = rhs;
    }
}

fn upper(p: &Problem<'_>, k: usize) -> f64 {
    if k < p.n_steps() {
        p.step_h[k]
    } else {
        0.0
    }
}

fn cost(p: &Problem<'_>, k: usize) -> f64 {
    if k < p.n_steps() {
        p.step_b[k]
    } else {
        0.0
    }
}

fn column_axpy(p: &Problem<'_>, k: usize, scale: f64, out: &mut [f64]) {
    if k < p.n_steps() {
        p.samples[p.step_sample[k]].axpy(scale, out);
    } else {
        out[k - p.n_steps()] += scale;
    }
}

/// Rebuilds `B⁻¹`, the multipliers, reduced costs and basic values from scratch.
fn refactor(p: &Problem<'_>, st: &mut SimplexState) -> Result<()> {
    let d = p.d();
    // Columns of B laid out as rows of Bᵀ, then Gauss-Jordan on [B | I].
    let mut b = vec![0.0; d * d];
    let mut col = vec![0.0; d];
    for (pos, &k) in st.basis.iter().enumerate() {
        col.iter_mut().for_each(|v| *v = 0.0);
        column_axpy(p, k, 1.0, &mut col);
        for r in 0..d {
            b[r * d + pos] = col[r];
        }
    }
    let mut inv = vec![0.0; d * d];
    for j in 0..d {
        inv[j * d + j] = 1.0;
    }
    for c in 0..d {
        let piv = (c..d)
            .max_by(|&x, &y| b[x * d + c].abs().total_cmp(&b[y * d + c].abs()))
            .unwrap_or(c);
        if b[piv * d + c].abs() < 1e-12 {
            return Err(Error::Numerical("singular simplex basis".into()));
        }
        if piv != c {
            for j in 0..d {
                b.swap(piv * d + j, c * d + j);
                inv.swap(piv * d + j, c * d + j);
            }
        }
        let scale = 1.0 / b[c * d + c];
        for j in 0..d {
            b[c * d + j] *= scale;
            inv[c * d + j] *= scale;
        }
        for r in 0..d {
            if r != c {
                let f = b[r * d + c];
                if f != 0.0 {
                    for j in 0..d {
                        b[r * d + j] -= f * b[c * d + j];
                        inv[r * d + j] -= f * inv[c * d + j];
                    }
                }
            }
        }
    }
    st.binv = inv;

    st.y.iter_mut().for_each(|v| *v = 0.0);
    for (pos, &k) in st.basis.iter().enumerate() {
        let c = cost(p, k);
        if c != 0.0 {
            for j in 0..d {
                st.y[j] += c * st.binv[pos * d + j];
            }
        }
    }
    // Reduced costs, repairing any drifted sign with a bound flip.
    let n = p.n_steps();
    for s in &p.samples {
        let ay = s.dot(&st.y);
        for k in s.steps.clone() {
            let dk = p.step_b[k] - ay;
            st.dj[k] = dk;
            match st.status[k] {
                Status::Lower if dk < -DUAL_TOL => st.status[k] = Status::Upper,
                Status::Upper if dk > DUAL_TOL => st.status[k] = Status::Lower,
                _ => {}
            }
        }
    }
    for &k in &st.basis {
        st.dj[k] = 0.0;
    }
    let mut resid = st.rhs.clone();
    for k in 0..n {
        if st.status[k] == Status::Upper {
            column_axpy(p, k, -p.step_h[k], &mut resid);
        }
    }
    for r in 0..d {
        st.xb[r] = (0..d).map(|j| st.binv[r * d + j] * resid[j]).sum();
    }
    st.since_refactor = 0;
    Ok(())
}

pub(super) fn solve(
    p: &Problem<'_>,
    test: &[f64],
    max_iterations: usize,
    state: &mut super::SolverState,
) -> Result<RawSolution> {
    let rhs: Vec<f64> = p.linear_term(test).into_iter().map(|v| -v).collect();
    let mut st = match std::mem::take(state) {
        super::SolverState::Simplex(mut s) if s.fits(p) => {
            s.set_rhs(rhs);
            s
        }
        _ => Box::new(SimplexState::cold(p, rhs)),
    };
    let result = iterate(p, &mut st, max_iterations);
    *state = super::SolverState::Simplex(st);
    result
}

fn iterate(p: &Problem<'_>, st: &mut SimplexState, max_iterations: usize) -> Result<RawSolution> {
    let d = p.d();
    let n = p.n_steps();
    let mut alpha_s = vec![0.0; p.n()];
    let mut w = vec![0.0; d];
    let mut flip = vec![0.0; d];
    let mut candidates: Vec<(f64, f64, usize)> = Vec::new();
    let mut iterations = 0;
    loop {
        // Leaving row: largest bound violation.
        let mut leave = None;
        let mut worst = PRIMAL_TOL;
        for (r, &k) in st.basis.iter().enumerate() {
            let x = st.xb[r];
            let viol = if x < 0.0 { -x } else { x - upper(p, k) };
            if viol > worst {
                worst = viol;
                leave = Some(r);
            }
        }
        let Some(r) = leave else {
            if st.since_refactor > 0 {
                refactor(p, st)?;
                continue;
            }
            return Ok(finish(p, st, RawStatus::Optimal, iterations, None));
        };
        if iterations >= max_iterations {
            return Ok(finish(p, st, RawStatus::IterationLimit, iterations, None));
        }
        let below = st.xb[r] < 0.0;
        let rho: Vec<f64> = st.binv[r * d..(r + 1) * d].to_vec();
        for (a, s) in alpha_s.iter_mut().zip(&p.samples) {
            *a = s.dot(&rho);
        }

        // Bound-flipping ratio test. Walking the dual ray, each eligible
        // column contributes a breakpoint at |dⱼ|/|αⱼ|; passing it flips the
        // column to its other bound and lowers the dual slope by hⱼ|αⱼ|. The
        // column at which the slope turns nonpositive enters the basis.
        let eligible = |k: usize, a: f64| -> bool {
            match (st.status[k], below) {
                (Status::Lower, true) => a < -PIVOT_TOL,
                (Status::Upper, true) => a > PIVOT_TOL,
                (Status::Lower, false) => a > PIVOT_TOL,
                (Status::Upper, false) => a < -PIVOT_TOL,
                (Status::Basic, _) => false,
            }
        };
        candidates.clear();
        for (s, &a) in p.samples.iter().zip(&alpha_s) {
            if a.abs() <= PIVOT_TOL {
                continue;
            }
            for k in s.steps.clone() {
                if eligible(k, a) {
                    let dk = st.dj[k];
                    let right_side = if st.status[k] == Status::Lower {
                        dk >= 0.0
                    } else {
                        dk <= 0.0
                    };
                    // A reduced cost on the wrong side of zero counts as zero.
                    let ratio = if right_side { dk.abs() / a.abs() } else { 0.0 };
                    candidates.push((ratio, a.abs(), k));
                }
            }
        }
        // Only the smallest ratios are usually needed, so order the
        // candidates in doubling batches instead of sorting all of them.
        let order = |x: &(f64, f64, usize), y: &(f64, f64, usize)| {
            x.0.total_cmp(&y.0).then(y.1.total_cmp(&x.1)).then(x.2.cmp(&y.2))
        };
        let mut slope = worst;
        let mut passed = 0;
        let mut enter = None;
        let mut sorted = 0;
        let mut batch = 32;
        'walk: while sorted < candidates.len() {
            let end = (sorted + batch).min(candidates.len());
            if end < candidates.len() {
                candidates[sorted..].select_nth_unstable_by(end - sorted - 1, order);
            }
            candidates[sorted..end].sort_unstable_by(order);
            for (idx, &(_, a, k)) in candidates.iter().enumerate().take(end).skip(sorted) {
                let capacity = p.step_h[k] * a;
                if slope - capacity <= PRIMAL_TOL {
                    enter = Some(idx);
                    break 'walk;
                }
                slope -= capacity;
                passed = idx + 1;
            }
            sorted = end;
            batch *= 2;
        }
        let Some(enter_idx) = enter else {
            let sign = if below { -1.0 } else { 1.0 };
            let ray = rho.iter().map(|v| sign * v).collect();
            return Ok(finish(p, st, RawStatus::Unbounded, iterations, Some(ray)));
        };
        let q = candidates[enter_idx].2;
        let alpha_q = alpha_s[p.step_sample[q]];

        let dq = st.dj[q];
        let wrong_sign = match st.status[q] {
            Status::Lower => dq < 0.0,
            _ => dq > 0.0,
        };
        let theta_d = if wrong_sign { 0.0 } else { dq / alpha_q };
        if theta_d != 0.0 {
            for (s, &a) in p.samples.iter().zip(&alpha_s) {
                if a != 0.0 {
                    for k in s.steps.clone() {
                        if st.status[k] != Status::Basic {
                            st.dj[k] -= theta_d * a;
                        }
                    }
                }
            }
            for (yj, rj) in st.y.iter_mut().zip(&rho) {
                *yj += theta_d * rj;
            }
        }

        // Flip the passed columns and move the basic values accordingly.
        if passed > 0 {
            flip.iter_mut().for_each(|v| *v = 0.0);
            for &(_, _, k) in &candidates[..passed] {
                let (next, dx) = match st.status[k] {
                    Status::Lower => (Status::Upper, p.step_h[k]),
                    _ => (Status::Lower, -p.step_h[k]),
                };
                st.status[k] = next;
                column_axpy(p, k, dx, &mut flip);
            }
            for row in 0..d {
                let brow = &st.binv[row * d..(row + 1) * d];
                st.xb[row] -= brow.iter().zip(&flip).map(|(b, f)| b * f).sum::<f64>();
            }
        }
        let leaving = st.basis[r];
        st.dj[q] = 0.0;
        st.dj[leaving] = -theta_d;

        // Primal step.
        w.iter_mut().for_each(|v| *v = 0.0);
        {
            let s = &p.samples[p.step_sample[q]];
            for (row, wr) in w.iter_mut().enumerate() {
                *wr = s.dot(&st.binv[row * d..(row + 1) * d]);
            }
        }
        let target = if below { 0.0 } else { upper(p, leaving) };
        let theta_p = (st.xb[r] - target) / w[r];
        let xq = if st.status[q] == Status::Upper {
            p.step_h[q]
        } else {
            0.0
        };
        for (x, wi) in st.xb.iter_mut().zip(&w) {
            *x -= theta_p * wi;
        }
        st.xb[r] = xq + theta_p;
        st.status[leaving] = if below || leaving >= n {
            Status::Lower
        } else {
            Status::Upper
        };
        st.status[q] = Status::Basic;
        st.basis[r] = q;

        // Eta update of B⁻¹.
        let piv = w[r];
        for j in 0..d {
            st.binv[r * d + j] /= piv;
        }
        for (row, &f) in w.iter().enumerate() {
            if row != r && f != 0.0 {
                for j in 0..d {
                    st.binv[row * d + j] -= f * st.binv[r * d + j];
                }
            }
        }

        iterations += 1;
        st.since_refactor += 1;
        if st.since_refactor >= REFACTOR_EVERY {
            refactor(p, st)?;
        }
    }
}

fn finish(
    p: &Problem<'_>,
    st: &SimplexState,
    status: RawStatus,
    iterations: usize,
    ray: Option<Vec<f64>>,
) -> RawSolution {
    // Per-sample multipliers gᵢ = v₀ − α + Σ xₖ, which lie in ∂Iᵢ(Φᵢ·θ̂).
    let n = p.n_steps();
    let mut x = vec![0.0; n];
    for (k, xk) in x.iter_mut().enumerate() {
        if st.status[k] == Status::Upper {
            *xk = p.step_h[k];
        }
    }
    for (r, &k) in st.basis.iter().enumerate() {
        if k < n {
            x[k] = st.xb[r].clamp(0.0, p.step_h[k]);
        }
    }
    let a = p.alpha.value();
    let multipliers = p
        .samples
        .iter()
        .zip(p.calib.losses())
        .map(|(s, loss)| loss.lowest() - a + s.steps.clone().map(|k| x[k]).sum::<f64>())
        .collect();
    RawSolution {
        theta: st.y.clone(),
        status,
        iterations,
        ray,
        multipliers: Some(multipliers),
        flat: false,
    }
}
