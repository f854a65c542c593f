//! Convex solvers for the minimax problems behind symbol-level precoding and
//! the nullspace-assisted ZF search.
//!
//! All solvers work on the stacked-real convention `x = [Re x̄; Im x̄]` and a
//! constraint matrix `C` whose columns are the linear forms `c_i`. The common
//! problem is
//!
//! ```text
//! minimize  f(x) = max_i c_i^T x   subject to  lower <= x <= upper
//! ```

mod dual;
mod iqnorm;
mod primal;

pub use dual::{dual_apg, dual_gradient, dual_value};
pub use iqnorm::{min_iq_inf_norm, min_iq_inf_norm_nullspace, IqNormReport};
pub use primal::{primal_apg, primal_apg_from};

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MinimaxProblem {
    c: DMatrix<f64>,
    lower: f64,
    upper: f64,
}

impl MinimaxProblem {
    /// `c` is `2N × m` with one column per linear form.
    pub fn new(c: DMatrix<f64>, lower: f64, upper: f64) -> Result<Self> {
        if c.ncols() == 0 || c.nrows() == 0 {
            return Err(Error::invalid("constraint matrix must be nonempty"));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("constraint matrix has non-finite entries"));
        }
        if lower.is_nan() || upper.is_nan() || !(lower < upper) {
            return Err(Error::invalid(format!("invalid box [{lower}, {upper}]")));
        }
        Ok(Self { c, lower, upper })
    }

    /// Problem over the unit box `[-1, 1]^{2N}`.
    pub fn unit_box(c: DMatrix<f64>) -> Result<Self> {
        Self::new(c, -1.0, 1.0)
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn n_vars(&self) -> usize {
        self.c.nrows()
    }

    pub fn n_forms(&self) -> usize {
        self.c.ncols()
    }

    /// `f(x) = max_i c_i^T x`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let z = self.c.tr_mul(&DVector::from_column_slice(x));
        z.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn clip(&self, x: &mut DVector<f64>) {
        for v in x.iter_mut() {
            *v = v.clamp(self.lower, self.upper);
        }
    }

    pub(crate) fn is_unit_box(&self) -> bool {
        self.lower == -1.0 && self.upper == 1.0
    }
}

/// Smoothing (primal) or regularization (dual) weight, stopping rule and
/// iteration cap.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ApgParams {
    pub smoothing: f64,
    pub tol: f64,
    pub max_iters: usize,
    #[serde(default = "default_true")]
    pub restart: bool,
    /// Smoothing stages above the final one: the primal and IQ-norm solvers
    /// start at `smoothing · 10^continuation` and divide by 10 per stage,
    /// warm-starting each stage. Ignored by the dual solver.
    #[serde(default = "default_continuation")]
    pub continuation: u32,
    /// Backtracking step no shorter than `1/L`. Primal solver only.
    #[serde(default = "default_true")]
    pub adaptive_step: bool,
}

fn default_true() -> bool {
    true
}

fn default_continuation() -> u32 {
    2
}

impl ApgParams {
    /// `μ = 0.05`, `‖Δx‖ ≤ 1e-5`, at most 2000 iterations, reached from
    /// `μ = 5` in two stages.
    pub fn primal() -> Self {
        Self {
            smoothing: 0.05,
            tol: 1e-5,
            max_iters: 2000,
            restart: true,
            continuation: 2,
            adaptive_step: true,
        }
    }

    /// `τ = 0.005`, `‖Δλ‖ ≤ 1e-7`, at most 3000 iterations.
    pub fn dual() -> Self {
        Self {
            smoothing: 0.005,
            tol: 1e-7,
            max_iters: 3000,
            restart: true,
            continuation: 0,
            adaptive_step: false,
        }
    }

    /// Final smoothing `1e-3` for the unconstrained IQ-norm search, reached by
    /// continuation from `0.1`.
    pub fn iq_norm() -> Self {
        Self {
            smoothing: 1e-3,
            tol: 1e-6,
            max_iters: 2000,
            restart: true,
            continuation: 2,
            adaptive_step: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.smoothing > 0.0) || !self.smoothing.is_finite() {
            return Err(Error::invalid(format!(
                "smoothing parameter {} must be positive",
                self.smoothing
            )));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid(format!("tolerance {} must be >= 0", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if self.continuation > 12 {
            return Err(Error::invalid("at most 12 continuation stages"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    /// Final primal point (stacked real).
    pub x: Vec<f64>,
    /// Final dual point on the simplex, for the dual solver.
    pub lambda: Option<Vec<f64>>,
    /// Unsmoothed objective `f(x)`.
    pub objective: f64,
    /// Smoothed objective (primal) or dual value `g(λ)` (dual).
    pub surrogate: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub converged: bool,
    /// Norm of the last accepted step.
    pub last_step: f64,
}

/// Momentum sequence `ξ_k = (1 + √(1 + 4ξ_{k-1}²))/2`, `γ_k = (ξ_{k-1} - 1)/ξ_k`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Momentum {
    xi: f64,
}

impl Momentum {
    pub(crate) fn new() -> Self {
        Self { xi: 0.0 }
    }

    pub(crate) fn next(&mut self) -> f64 {
        let prev = self.xi;
        self.xi = (1.0 + (1.0 + 4.0 * prev * prev).sqrt()) / 2.0;
        ((prev - 1.0) / self.xi).max(0.0)
    }

    pub(crate) fn reset(&mut self) {
        self.xi = 0.0;
    }
}

/// Log-sum-exp of `z/μ` scaled by `μ`, with the softmax weights written into
/// `weights`.
pub(crate) fn log_sum_exp(z: &[f64], mu: f64, weights: &mut [f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (w, &v) in weights.iter_mut().zip(z) {
        *w = ((v - m) / mu).exp();
        total += *w;
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
    m + mu * total.ln()
}

/// `f̂(x) = μ log Σ exp(c_i^T x / μ)` and its gradient `C softmax(C^T x / μ)`.
pub fn smoothed_objective(c: &DMatrix<f64>, x: &[f64], mu: f64) -> (f64, Vec<f64>) {
    let z = c.tr_mul(&DVector::from_column_slice(x));
    let mut w = vec![0.0; z.len()];
    let value = log_sum_exp(z.as_slice(), mu, &mut w);
    let grad = c * DVector::from_vec(w);
    (value, grad.as_slice().to_vec())
}

/// Power-iteration estimate of `‖C‖₂²` from a fixed start vector.
pub fn spectral_norm_sq(c: &DMatrix<f64>) -> f64 {
    let gram = c.tr_mul(c);
    let m = gram.nrows();
    if m == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(m, |i, _| 1.0 + i as f64 / m as f64);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..500 {
        let w = &gram * &v;
        let rq = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (rq - estimate).abs() <= 1e-12 * rq.abs() {
            estimate = rq;
            break;
        }
        estimate = rq;
    }
    estimate
}

/// Huber function `φ_τ(y)`: `y²/(2τ)` for `|y| ≤ τ`, `|y| - τ/2` otherwise.
pub fn huber(y: f64, tau: f64) -> f64 {
    if y.abs() <= tau {
        y * y / (2.0 * tau)
    } else {
        y.abs() - tau / 2.0
    }
}

/// `φ_τ'(y) = clip(y/τ, -1, 1)`.
pub fn huber_grad(y: f64, tau: f64) -> f64 {
    (y / tau).clamp(-1.0, 1.0)
}

/// Euclidean projection onto the unit simplex by sorting and thresholding.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}
