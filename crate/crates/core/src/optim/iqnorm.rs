//! Unconstrained minimization of `‖r + η‖_{IQ-∞}` over a complex subspace.
//!
//! Stacking `u = [Re(r + η); Im(r + η)]`, the norm is `max_j max(u_j, -u_j)`:
//! a minimax over `±` unit forms with no box. The smoothed objective
//! `μ log Σ_j (e^{u_j/μ} + e^{-u_j/μ})` has a gradient in `u` that is
//! `1/μ`-Lipschitz, so the step is `μ` in `η`-coordinates after projecting
//! the gradient onto the subspace. `μ` is lowered by factors of 10 over the
//! configured continuation stages, warm-starting each stage.

use nalgebra::{DMatrix, DVector};

use super::{ApgParams, Momentum};
use crate::linalg::{iq_inf_norm, RightPinv};
use crate::{Error, Result, C64};

#[derive(Clone, Debug, PartialEq)]
pub struct IqNormReport {
    /// Basis coordinates, when an explicit basis was given.
    pub xi: Vec<C64>,
    /// Subspace component `η`.
    pub eta: Vec<C64>,
    /// `‖r + η‖_{IQ-∞}`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

enum Projector<'a> {
    Basis(&'a DMatrix<C64>),
    NullOf(&'a RightPinv),
}

impl Projector<'_> {
    fn project(&self, u: &mut [C64]) {
        match self {
            Projector::Basis(b) => {
                let coords = b.ad_mul(&DVector::from_column_slice(u));
                let p = *b * coords;
                u.copy_from_slice(p.as_slice());
            }
            Projector::NullOf(p) => p.project_null(u),
        }
    }
}

/// Minimize `‖r + Bξ‖_{IQ-∞}` over `ξ` for a basis `B` with orthonormal columns.
pub fn min_iq_inf_norm(r: &[C64], b: &DMatrix<C64>, params: &ApgParams) -> Result<IqNormReport> {
    if b.nrows() != r.len() {
        return Err(Error::LengthMismatch {
            expected: b.nrows(),
            got: r.len(),
        });
    }
    if b.ncols() == 0 {
        return Ok(IqNormReport {
            xi: Vec::new(),
            eta: vec![C64::new(0.0, 0.0); r.len()],
            objective: iq_inf_norm(r),
            iterations: 0,
            converged: true,
        });
    }
    let mut report = solve(r, &Projector::Basis(b), params)?;
    report.xi = b.ad_mul(&DVector::from_column_slice(&report.eta)).as_slice().to_vec();
    Ok(report)
}

/// Minimize `‖r + η‖_{IQ-∞}` over `η ∈ null(H)` using the implicit projector
/// `I - H^† H`; `xi` is left empty.
pub fn min_iq_inf_norm_nullspace(r: &[C64], pinv: &RightPinv, params: &ApgParams) -> Result<IqNormReport> {
    if pinv.n_cols() != r.len() {
        return Err(Error::LengthMismatch {
            expected: pinv.n_cols(),
            got: r.len(),
        });
    }
    if pinv.n_rows() == pinv.n_cols() {
        return Ok(IqNormReport {
            xi: Vec::new(),
            eta: vec![C64::new(0.0, 0.0); r.len()],
            objective: iq_inf_norm(r),
            iterations: 0,
            converged: true,
        });
    }
    solve(r, &Projector::NullOf(pinv), params)
}

/// Smoothed value of the stacked `±u` log-sum-exp and its gradient in `u`,
/// written back as complex entries.
fn smoothed(v: &[C64], mu: f64, grad: &mut [C64]) -> f64 {
    let m = iq_inf_norm(v);
    let mut total = 0.0;
    for (g, c) in grad.iter_mut().zip(v) {
        let (rp, rm) = (((c.re - m) / mu).exp(), ((-c.re - m) / mu).exp());
        let (ip, im) = (((c.im - m) / mu).exp(), ((-c.im - m) / mu).exp());
        total += rp + rm + ip + im;
        *g = C64::new(rp - rm, ip - im);
    }
    for g in grad.iter_mut() {
        *g /= total;
    }
    m + mu * total.ln()
}

fn solve(r: &[C64], proj: &Projector<'_>, params: &ApgParams) -> Result<IqNormReport> {
    params.validate()?;
    let n = r.len();
    let zero = C64::new(0.0, 0.0);
    let scale = iq_inf_norm(r);
    if scale == 0.0 {
        return Ok(IqNormReport {
            xi: Vec::new(),
            eta: vec![zero; n],
            objective: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let r: Vec<C64> = r.iter().map(|c| c / scale).collect();

    let mut eta = vec![zero; n];
    let mut eta_prev = eta.clone();
    let mut v = vec![zero; n];
    let mut grad = vec![zero; n];
    let mut iterations = 0;
    let mut converged;

    let mut mu = params.smoothing * 10f64.powi(params.continuation as i32);
    loop {
        let mut momentum = Momentum::new();
        let value = |eta: &[C64], v: &mut [C64], grad: &mut [C64]| {
            for ((vi, ri), ei) in v.iter_mut().zip(&r).zip(eta) {
                *vi = ri + ei;
            }
            smoothed(v, mu, grad)
        };
        let mut f_cur = value(&eta, &mut v, &mut grad);
        eta_prev.copy_from_slice(&eta);
        converged = false;
        let mut stage_iters = 0;
        while stage_iters < params.max_iters {
            stage_iters += 1;
            let gamma = momentum.next();
            let eta_ex: Vec<C64> = eta.iter().zip(&eta_prev).map(|(a, b)| a + (a - b) * gamma).collect();
            value(&eta_ex, &mut v, &mut grad);
            proj.project(&mut grad);
            let eta_new: Vec<C64> = eta_ex.iter().zip(&grad).map(|(e, g)| e - g * mu).collect();
            let f_new = value(&eta_new, &mut v, &mut grad);
            if params.restart && gamma > 0.0 && f_new > f_cur {
                momentum.reset();
                eta_prev.copy_from_slice(&eta);
                continue;
            }
            let step = eta_new
                .iter()
                .zip(&eta)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            eta_prev = std::mem::replace(&mut eta, eta_new);
            f_cur = f_new;
            if step <= params.tol {
                converged = true;
                break;
            }
        }
        iterations += stage_iters;
        if mu <= params.smoothing * 1.000_001 {
            break;
        }
        mu = (mu * 0.1).max(params.smoothing);
    }

    // Re-project to remove drift, then fall back to η = 0 if that is better.
    proj.project(&mut eta);
    let candidate: Vec<C64> = r.iter().zip(&eta).map(|(a, b)| a + b).collect();
    let mut objective = iq_inf_norm(&candidate);
    if objective > 1.0 {
        eta.iter_mut().for_each(|e| *e = zero);
        objective = 1.0;
    }
    Ok(IqNormReport {
        xi: Vec::new(),
        eta: eta.into_iter().map(|e| e * scale).collect(),
        objective: objective * scale,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::nullspace_basis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_h(rng: &mut ChaCha8Rng, k: usize, n: usize) -> DMatrix<C64> {
        DMatrix::from_fn(k, n, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn empty_basis() {
        let r = vec![C64::new(0.5, -2.0), C64::new(1.0, 0.0)];
        let out = min_iq_inf_norm(&r, &DMatrix::zeros(2, 0), &ApgParams::iq_norm()).unwrap();
        assert!(out.xi.is_empty());
        assert_eq!(out.objective, 2.0);
    }

    #[test]
    fn exact_cancellation_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let h = random_h(&mut rng, 3, 8);
        let b = nullspace_basis(&h).unwrap();
        let w = DVector::from_fn(5, |i, _| C64::new(i as f64 - 2.0, 0.5));
        let r = (&b * &w).as_slice().to_vec();
        let out = min_iq_inf_norm(&r, &b, &ApgParams::iq_norm()).unwrap();
        assert!(out.objective < 5e-3 * iq_inf_norm(&r), "{}", out.objective);
        for (x, wi) in out.xi.iter().zip(w.iter()) {
            assert!((x + wi).norm() < 0.05 * wi.norm().max(1.0));
        }
    }

    #[test]
    fn never_worse_than_zero_and_stays_in_subspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..5 {
            let h = random_h(&mut rng, 4, 24);
            let pinv = RightPinv::new(h.clone()).unwrap();
            let r: Vec<C64> = (0..24)
                .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let out = min_iq_inf_norm_nullspace(&r, &pinv, &ApgParams::iq_norm()).unwrap();
            assert!(out.objective <= iq_inf_norm(&r) + 1e-12);
            let he = pinv.forward(&out.eta);
            assert!(he.iter().all(|c| c.norm() < 1e-9));

            let b = nullspace_basis(&h).unwrap();
            let explicit = min_iq_inf_norm(&r, &b, &ApgParams::iq_norm()).unwrap();
            assert!((explicit.objective - out.objective).abs() < 1e-2 * out.objective);
        }
    }
}
