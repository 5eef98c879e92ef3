//! Total-variation denoising,
//! `min_u 1/2 |u - u0|^2 + alpha * TV(u)`.
//!
//! [`rof_solve`] runs FISTA on the dual problem over the unit ball of the TV
//! dual norm; [`rof_solve_reference`] is an independent primal solver on the
//! smoothed energy used to cross-check it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{divergence_into, gradient_into, tv_of_slice, DualField, ScalarField, TvMode};

/// Lipschitz constant of `grad(div(.))` on the 2D grid.
const DUAL_LIPSCHITZ: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RofParams {
    /// Stop when the relative change of `u` between iterations drops below
    /// this.
    pub tol: f64,
    pub max_iter: usize,
    pub mode: TvMode,
}

impl Default for RofParams {
    fn default() -> Self {
        RofParams {
            tol: 1e-4,
            max_iter: 10_000,
            mode: TvMode::Isotropic,
        }
    }
}

impl RofParams {
    pub fn new(tol: f64, max_iter: usize, mode: TvMode) -> Result<Self> {
        let p = RofParams { tol, max_iter, mode };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::param(format!("solver tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::param("max_iter must be at least 1"));
        }
        Ok(())
    }

    pub fn with_mode(mut self, mode: TvMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }
}

#[derive(Clone, Debug)]
pub struct RofResult {
    pub u: ScalarField,
    /// Dual variable with `u = u0 - alpha * div(dual)`; empty (zeros) for the
    /// reference solver.
    pub dual: DualField,
    pub iterations: usize,
    pub final_energy: f64,
    pub converged: bool,
}

/// `1/2 sum (u - u0)^2 + alpha * TV(u)`.
pub fn rof_energy(u: &ScalarField, u0: &ScalarField, alpha: f64, mode: TvMode) -> Result<f64> {
    u.ensure_same_dims(u0.dims())?;
    if !(alpha > 0.0) {
        return Err(Error::param(format!("alpha must be positive, got {alpha}")));
    }
    Ok(energy_of_slice(u.values(), u0.values(), u.width(), u.height(), alpha, mode))
}

fn energy_of_slice(u: &[f64], u0: &[f64], w: usize, h: usize, alpha: f64, mode: TvMode) -> f64 {
    let fid: f64 = u.iter().zip(u0).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * fid + alpha * tv_of_slice(u, w, h, mode)
}

fn project_dual(px: &mut [f64], py: &mut [f64], mode: TvMode) {
    match mode {
        TvMode::Isotropic => {
            for (x, y) in px.iter_mut().zip(py.iter_mut()) {
                let n2 = *x * *x + *y * *y;
                if n2 > 1.0 {
                    let n = n2.sqrt();
                    *x /= n;
                    *y /= n;
                }
            }
        }
        TvMode::Anisotropic => {
            for v in px.iter_mut().chain(py.iter_mut()) {
                *v = v.clamp(-1.0, 1.0);
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// FISTA on the dual of the ROF problem.
///
/// Iterates `p <- proj(r + grad(div r - u0/alpha) / 8)` with Nesterov
/// momentum on `r`, and recovers `u = u0 - alpha * div p`. The returned `u`
/// always comes from a feasible dual iterate, so its mean equals the mean
/// of `u0`.
pub fn rof_solve(u0: &ScalarField, alpha: f64, params: &RofParams) -> Result<RofResult> {
    params.validate()?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param(format!("alpha must be positive, got {alpha}")));
    }
    let (w, h) = u0.dims();
    let n = w * h;
    let f = u0.values();
    let step = 1.0 / DUAL_LIPSCHITZ;
    let inv_alpha = 1.0 / alpha;

    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    let mut rx = vec![0.0; n];
    let mut ry = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut u = f.to_vec();
    let mut u_prev = f.to_vec();
    let mut t = 1.0f64;

    let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=params.max_iter {
        iterations = k;
        divergence_into(&rx, &ry, w, h, &mut d);
        for (dv, &fv) in d.iter_mut().zip(f) {
            *dv -= fv * inv_alpha;
        }
        gradient_into(&d, w, h, &mut gx, &mut gy);

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        // p_new = proj(r + step * g), stored in (gx, gy)
        for idx in 0..n {
            gx[idx] = rx[idx] + step * gx[idx];
            gy[idx] = ry[idx] + step * gy[idx];
        }
        project_dual(&mut gx, &mut gy, params.mode);
        for idx in 0..n {
            rx[idx] = gx[idx] + momentum * (gx[idx] - px[idx]);
            ry[idx] = gy[idx] + momentum * (gy[idx] - py[idx]);
        }
        std::mem::swap(&mut px, &mut gx);
        std::mem::swap(&mut py, &mut gy);
        t = t_next;

        std::mem::swap(&mut u, &mut u_prev);
        divergence_into(&px, &py, w, h, &mut u);
        for (uv, &fv) in u.iter_mut().zip(f) {
            *uv = fv - alpha * *uv;
        }

        let change = u.iter().zip(&u_prev).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if change <= params.tol * norm(&u).max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }

        let e = energy_of_slice(&u, f, w, h, alpha, params.mode);
        match &mut best {
            Some((be, bu, bx, by)) if e < *be => {
                *be = e;
                bu.copy_from_slice(&u);
                bx.copy_from_slice(&px);
                by.copy_from_slice(&py);
            }
            None => best = Some((e, u.clone(), px.clone(), py.clone())),
            _ => {}
        }
    }

    if !converged {
        if let Some((_, bu, bx, by)) = best {
            u = bu;
            px = bx;
            py = by;
        }
    }
    let final_energy = energy_of_slice(&u, f, w, h, alpha, params.mode);
    Ok(RofResult {
        u: ScalarField::new(w, h, u)?,
        dual: DualField::new(w, h, px, py)?,
        iterations,
        final_energy,
        converged,
    })
}

fn smoothed_energy_and_grad(
    u: &[f64],
    u0: &[f64],
    w: usize,
    h: usize,
    alpha: f64,
    beta: f64,
    mode: TvMode,
    grad: &mut [f64],
    scratch: (&mut [f64], &mut [f64]),
) -> f64 {
    let (gx, gy) = scratch;
    gradient_into(u, w, h, gx, gy);
    let b2 = beta * beta;
    let mut tv = 0.0;
    for (x, y) in gx.iter_mut().zip(gy.iter_mut()) {
        match mode {
            TvMode::Isotropic => {
                let m = (*x * *x + *y * *y + b2).sqrt();
                tv += m;
                *x /= m;
                *y /= m;
            }
            TvMode::Anisotropic => {
                let mx = (*x * *x + b2).sqrt();
                let my = (*y * *y + b2).sqrt();
                tv += mx + my;
                *x /= mx;
                *y /= my;
            }
        }
    }
    divergence_into(gx, gy, w, h, grad);
    let mut fid = 0.0;
    for ((g, &a), &b) in grad.iter_mut().zip(u).zip(u0) {
        fid += (a - b) * (a - b);
        *g = (a - b) - alpha * *g;
    }
    0.5 * fid + alpha * tv
}

/// Gradient descent with Armijo backtracking on the smoothed energy
/// `1/2 |u - u0|^2 + alpha * sum sqrt(|grad u|^2 + beta^2)`.
///
/// Trial steps come from the Barzilai-Borwein rule, and the smoothing is
/// continued from `beta = 1` down to the requested value with warm starts.
/// Each stage stops once the largest gradient entry falls below `params.tol`
/// times the stage's smoothing (the curvature scale of the smoothed TV).
/// `final_energy` is the unsmoothed ROF energy of the returned field.
pub fn rof_solve_reference(u0: &ScalarField, alpha: f64, beta: f64, params: &RofParams) -> Result<RofResult> {
    params.validate()?;
    if !(alpha > 0.0) {
        return Err(Error::param(format!("alpha must be positive, got {alpha}")));
    }
    if !(beta > 0.0) {
        return Err(Error::param(format!("smoothing beta must be positive, got {beta}")));
    }
    let (w, h) = u0.dims();
    let n = w * h;
    let f = u0.values();

    let mut stages = Vec::new();
    let mut b = 1.0f64.max(beta);
    while b > beta * (1.0 + 1e-12) {
        stages.push(b);
        b = (b * 0.1).max(beta);
    }
    stages.push(beta);

    let mut u = f.to_vec();
    let mut grad = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut sx = vec![0.0; n];
    let mut sy = vec![0.0; n];
    let mut iterations = 0usize;
    let mut converged = false;

    'stages: for (si, &stage_beta) in stages.iter().enumerate() {
        let last = si + 1 == stages.len();
        let mut e = smoothed_energy_and_grad(&u, f, w, h, alpha, stage_beta, params.mode, &mut grad, (&mut sx, &mut sy));
        // step bounded by the inverse Lipschitz constant of the smoothed energy
        let mut step = 1.0 / (1.0 + 8.0 * alpha / stage_beta);
        let gtol = params.tol * stage_beta.min(1.0);
        loop {
            let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if gmax <= gtol {
                if last {
                    converged = true;
                }
                break;
            }
            if iterations >= params.max_iter {
                break 'stages;
            }
            iterations += 1;

            let g2: f64 = grad.iter().map(|g| g * g).sum();
            let mut s = step;
            let mut accepted = false;
            for _ in 0..60 {
                for ((t, &a), &g) in trial.iter_mut().zip(&u).zip(&grad) {
                    *t = a - s * g;
                }
                let e_trial = smoothed_energy_and_grad(
                    &trial, f, w, h, alpha, stage_beta, params.mode, &mut trial_grad, (&mut sx, &mut sy),
                );
                if e_trial < e && e_trial <= e - 1e-4 * s * g2 {
                    // Barzilai-Borwein step for the next trial
                    let mut sy_dot = 0.0;
                    let mut yy = 0.0;
                    for k in 0..n {
                        let dy = trial_grad[k] - grad[k];
                        sy_dot += -s * grad[k] * dy;
                        yy += dy * dy;
                    }
                    step = if sy_dot > 0.0 && yy > 0.0 { sy_dot / yy } else { s * 2.0 };
                    std::mem::swap(&mut u, &mut trial);
                    std::mem::swap(&mut grad, &mut trial_grad);
                    e = e_trial;
                    accepted = true;
                    break;
                }
                s *= 0.5;
            }
            if !accepted {
                // no decrease representable at this precision
                if last {
                    converged = true;
                }
                break;
            }
        }
    }

    let final_energy = energy_of_slice(&u, f, w, h, alpha, params.mode);
    Ok(RofResult {
        u: ScalarField::new(w, h, u)?,
        dual: DualField::zeros(w, h),
        iterations,
        final_energy,
        converged,
    })
}
