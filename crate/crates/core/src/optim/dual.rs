use nalgebra::DVector;

use super::{huber, huber_grad, project_simplex, spectral_norm_sq, ApgParams, MinimaxProblem, Momentum, SolveReport};
use crate::{Error, Result};

/// `g(λ) = -Σ_i φ_τ((Cλ)_i)`.
pub fn dual_value(problem: &MinimaxProblem, lambda: &[f64], tau: f64) -> f64 {
    let y = problem.c() * DVector::from_column_slice(lambda);
    -y.iter().map(|&v| huber(v, tau)).sum::<f64>()
}

/// `∇g(λ) = -C^T φ_τ'(Cλ)`.
pub fn dual_gradient(problem: &MinimaxProblem, lambda: &[f64], tau: f64) -> Vec<f64> {
    let y = problem.c() * DVector::from_column_slice(lambda);
    let d = y.map(|v| huber_grad(v, tau));
    (-problem.c().tr_mul(&d)).as_slice().to_vec()
}

/// Accelerated projected gradient ascent on the Huber dual of the
/// `τ/2 ‖x‖²`-regularized problem over the simplex, followed by the primal
/// recovery `x = clip(-Cλ/τ)`. Only the unit box is supported.
pub fn dual_apg(problem: &MinimaxProblem, params: &ApgParams) -> Result<SolveReport> {
    params.validate()?;
    if !problem.is_unit_box() {
        return Err(Error::invalid("the dual solver requires the unit box [-1, 1]"));
    }
    let c = problem.c();
    let tau = params.smoothing;
    let m = problem.n_forms();
    let norm_sq = spectral_norm_sq(c);
    let step = if norm_sq > 0.0 { tau / (1.02 * norm_sq) } else { 1.0 };

    let value_and_grad = |lam: &DVector<f64>| {
        let y = c * lam;
        let value = -y.iter().map(|&v| huber(v, tau)).sum::<f64>();
        let d = y.map(|v| huber_grad(v, tau));
        (value, -c.tr_mul(&d))
    };

    let mut lam = DVector::from_element(m, 1.0 / m as f64);
    let mut lam_prev = lam.clone();
    let mut g_cur = value_and_grad(&lam).0;
    let mut momentum = Momentum::new();
    let mut restarts = 0;
    let mut converged = false;
    let mut last_step = f64::INFINITY;
    let mut iterations = 0;

    while iterations < params.max_iters {
        iterations += 1;
        let gamma = momentum.next();
        let lam_ex = &lam + (&lam - &lam_prev) * gamma;
        let (_, grad) = value_and_grad(&lam_ex);
        let target = lam_ex + grad * step;
        let lam_new = DVector::from_vec(project_simplex(target.as_slice()));
        let g_new = value_and_grad(&lam_new).0;

        if params.restart && gamma > 0.0 && g_new < g_cur {
            momentum.reset();
            restarts += 1;
            lam_prev.copy_from(&lam);
            continue;
        }

        last_step = (&lam_new - &lam).norm();
        lam_prev = std::mem::replace(&mut lam, lam_new);
        g_cur = g_new;
        if last_step <= params.tol {
            converged = true;
            break;
        }
    }

    if !converged {
        log::debug!("dual APG hit the iteration cap ({iterations}), last step {last_step:.3e}");
    }
    let mut x = -(c * &lam) / tau;
    problem.clip(&mut x);
    let objective = problem.objective(x.as_slice());
    Ok(SolveReport {
        x: x.as_slice().to_vec(),
        lambda: Some(lam.as_slice().to_vec()),
        objective,
        surrogate: g_cur,
        iterations,
        restarts,
        converged,
        last_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_form_recovers_clip() {
        let c = DMatrix::from_column_slice(4, 1, &[0.001, -1.0, 0.002, 0.0]);
        let p = MinimaxProblem::unit_box(c).unwrap();
        let r = dual_apg(&p, &ApgParams::dual()).unwrap();
        assert_eq!(r.lambda.as_deref(), Some(&[1.0][..]));
        let expect = [-0.2, 1.0, -0.4, 0.0];
        for (a, b) in r.x.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dual_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let tau = 0.1;
        for _ in 0..10 {
            let c = DMatrix::from_fn(10, 5, |_, _| rng.random_range(-1.0..1.0));
            let p = MinimaxProblem::unit_box(c).unwrap();
            let lam: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            let g = dual_gradient(&p, &lam, tau);
            let h = 1e-7;
            for i in 0..5 {
                let mut lp = lam.clone();
                let mut lm = lam.clone();
                lp[i] += h;
                lm[i] -= h;
                let fd = (dual_value(&p, &lp, tau) - dual_value(&p, &lm, tau)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0), "{fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn rejects_non_unit_box() {
        let p = MinimaxProblem::new(DMatrix::identity(2, 2), -2.0, 2.0).unwrap();
        assert!(dual_apg(&p, &ApgParams::dual()).is_err());
    }

    #[test]
    fn weak_duality_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let tau = 0.005;
        for _ in 0..10 {
            let c = DMatrix::from_fn(16, 6, |_, _| rng.random_range(-1.0..1.0));
            let p = MinimaxProblem::unit_box(c).unwrap();
            let r = dual_apg(&p, &ApgParams::dual()).unwrap();
            let xn: f64 = r.x.iter().map(|v| v * v).sum();
            assert!(r.surrogate <= r.objective + tau / 2.0 * xn + 1e-9);
            let lam = r.lambda.unwrap();
            assert!((lam.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(lam.iter().all(|&v| v >= 0.0));
        }
    }
}
