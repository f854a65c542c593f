use nalgebra::DVector;

use super::{log_sum_exp, spectral_norm_sq, ApgParams, MinimaxProblem, Momentum, SolveReport};
use crate::Result;

/// Smoothed accelerated projected gradient from `x⁰ = 0`.
pub fn primal_apg(problem: &MinimaxProblem, params: &ApgParams) -> Result<SolveReport> {
    let x0 = vec![0.0_f64.clamp(problem.lower(), problem.upper()); problem.n_vars()];
    primal_apg_from(problem, params, &x0)
}

/// Smoothed accelerated projected gradient from a given start point.
///
/// Iterates `x^{k+1} = clip(x_ex - t ∇f̂(x_ex))` with `t = 1/L`,
/// `L = 1.02 ‖C‖²/μ`, and restarts the momentum whenever `f̂` would increase.
/// With `adaptive_step` the step `t ≥ 1/L` is found by backtracking. With continuation the
/// same iteration runs first at larger `μ`, each stage warm-starting the next.
/// The returned point is the iterate with the smallest unsmoothed objective.
pub fn primal_apg_from(problem: &MinimaxProblem, params: &ApgParams, x0: &[f64]) -> Result<SolveReport> {
    params.validate()?;
    if x0.len() != problem.n_vars() {
        return Err(crate::Error::LengthMismatch {
            expected: problem.n_vars(),
            got: x0.len(),
        });
    }
    let norm_sq = spectral_norm_sq(problem.c());
    let mut x = DVector::from_column_slice(x0);
    problem.clip(&mut x);
    let mut best = Best {
        objective: problem.objective(x.as_slice()),
        x: x.clone(),
    };

    // Intermediate stages share half the budget; the final stage gets the rest.
    let stages = params.continuation;
    let stage_budget = if stages == 0 {
        0
    } else {
        params.max_iters / (2 * stages as usize)
    };
    let mut total = Stage::default();
    for stage_idx in (0..=stages).rev() {
        let last = stage_idx == 0;
        let mu = params.smoothing * 10f64.powi(stage_idx as i32);
        let remaining = params.max_iters - total.iterations;
        let budget = if last { remaining } else { stage_budget.min(remaining) };
        let stage = run_stage(problem, params, mu, norm_sq, &mut x, &mut best, budget, last);
        total.iterations += stage.iterations;
        total.restarts += stage.restarts;
        total.converged = last && stage.converged;
        total.last_step = stage.last_step;
        total.surrogate = stage.surrogate;
    }

    if !total.converged {
        log::debug!(
            "primal APG hit the iteration cap ({}), last step {:.3e}",
            total.iterations,
            total.last_step
        );
    }
    Ok(SolveReport {
        x: best.x.as_slice().to_vec(),
        lambda: None,
        objective: best.objective,
        surrogate: total.surrogate,
        iterations: total.iterations,
        restarts: total.restarts,
        converged: total.converged,
        last_step: total.last_step,
    })
}

/// Iterate with the lowest unsmoothed objective seen so far, start included.
struct Best {
    objective: f64,
    x: DVector<f64>,
}

#[derive(Default)]
struct Stage {
    iterations: usize,
    restarts: usize,
    converged: bool,
    last_step: f64,
    surrogate: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    problem: &MinimaxProblem,
    params: &ApgParams,
    mu: f64,
    norm_sq: f64,
    x: &mut DVector<f64>,
    best: &mut Best,
    budget: usize,
    last: bool,
) -> Stage {
    let c = problem.c();
    // `1/L` from the global bound; with `adaptive_step` the step grows past it
    // and backtracks on the local quadratic model, never dropping below.
    let min_step = if norm_sq > 0.0 { mu / (1.02 * norm_sq) } else { 1.0 };
    let mut step = min_step;
    // Intermediate stages only need to get close.
    let tol = if last { params.tol } else { params.tol.max(1e-3) };
    let mut x_prev = x.clone();
    let mut z = c.tr_mul(x);
    let mut z_prev = z.clone();
    let mut w = vec![0.0; z.len()];
    let mut f_cur = log_sum_exp(z.as_slice(), mu, &mut w);

    let mut momentum = Momentum::new();
    let mut out = Stage {
        last_step: f64::INFINITY,
        ..Default::default()
    };
    while out.iterations < budget {
        out.iterations += 1;
        let gamma = momentum.next();
        let x_ex = &*x + (&*x - &x_prev) * gamma;
        let z_ex = &z + (&z - &z_prev) * gamma;
        let f_ex = log_sum_exp(z_ex.as_slice(), mu, &mut w);
        let grad = c * DVector::from_column_slice(&w);
        if params.adaptive_step {
            step *= 1.25;
        }
        let (x_new, z_new, f_new) = loop {
            let mut x_try = &x_ex - &grad * step;
            problem.clip(&mut x_try);
            let z_try = c.tr_mul(&x_try);
            let f_try = log_sum_exp(z_try.as_slice(), mu, &mut w);
            let d = &x_try - &x_ex;
            if step <= min_step || f_try <= f_ex + grad.dot(&d) + d.norm_squared() / (2.0 * step) {
                break (x_try, z_try, f_try);
            }
            step = (step * 0.5).max(min_step);
        };

        if params.restart && gamma > 0.0 && f_new > f_cur {
            momentum.reset();
            out.restarts += 1;
            x_prev.copy_from(x);
            z_prev.copy_from(&z);
            continue;
        }

        let f_true = z_new.max();
        if f_true < best.objective {
            best.objective = f_true;
            best.x.copy_from(&x_new);
        }
        out.last_step = (&x_new - &*x).norm();
        x_prev = std::mem::replace(x, x_new);
        z_prev = std::mem::replace(&mut z, z_new);
        f_cur = f_new;
        if out.last_step <= tol {
            out.converged = true;
            break;
        }
    }
    out.surrogate = f_cur;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_objective_goes_to_corner() {
        let c = DMatrix::from_column_slice(4, 1, &[0.5, -1.0, 2.0, -0.1]);
        let p = MinimaxProblem::unit_box(c).unwrap();
        let r = primal_apg(&p, &ApgParams::primal()).unwrap();
        assert!(r.converged);
        assert_eq!(r.x, vec![-1.0, 1.0, -1.0, 1.0]);
        assert!((r.objective + 3.6).abs() < 1e-12);
    }

    #[test]
    fn iterates_stay_in_box_and_descend() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..10 {
            let c = DMatrix::from_fn(20, 6, |_, _| rng.random_range(-1.0..1.0));
            let p = MinimaxProblem::unit_box(c).unwrap();
            let r = primal_apg(&p, &ApgParams::primal()).unwrap();
            assert!(r.x.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!(r.objective <= p.objective(&[0.0; 20]) + 1e-12);
        }
    }

    #[test]
    fn respects_iteration_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let c = DMatrix::from_fn(30, 8, |_, _| rng.random_range(-1.0..1.0));
        let p = MinimaxProblem::unit_box(c).unwrap();
        let params = ApgParams {
            max_iters: 3,
            tol: 0.0,
            ..ApgParams::primal()
        };
        let r = primal_apg(&p, &params).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }

    #[test]
    fn start_point_length_checked() {
        let p = MinimaxProblem::unit_box(DMatrix::identity(3, 2)).unwrap();
        assert!(primal_apg_from(&p, &ApgParams::primal(), &[0.0; 2]).is_err());
    }

    #[test]
    fn continuation_helps_on_badly_scaled_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let c = DMatrix::from_fn(256, 16, |_, _| rng.random_range(-3.0..3.0));
        let p = MinimaxProblem::unit_box(c).unwrap();
        let fixed = ApgParams {
            adaptive_step: false,
            ..ApgParams::primal()
        };
        let staged = primal_apg(&p, &fixed).unwrap();
        let flat = primal_apg(
            &p,
            &ApgParams {
                continuation: 0,
                ..fixed
            },
        )
        .unwrap();
        assert!(
            staged.objective <= flat.objective,
            "{} > {}",
            staged.objective,
            flat.objective
        );
    }

    #[test]
    fn adaptive_step_beats_fixed_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let c = DMatrix::from_fn(256, 16, |_, _| rng.random_range(-3.0..3.0));
        let p = MinimaxProblem::unit_box(c).unwrap();
        let params = ApgParams {
            max_iters: 300,
            ..ApgParams::primal()
        };
        let adaptive = primal_apg(&p, &params).unwrap();
        let fixed = primal_apg(
            &p,
            &ApgParams {
                adaptive_step: false,
                ..params
            },
        )
        .unwrap();
        assert!(
            adaptive.objective < fixed.objective,
            "{} >= {}",
            adaptive.objective,
            fixed.objective
        );
        assert!(adaptive.x.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
