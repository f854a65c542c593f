//! Small dense helpers shared by the precoders and solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result, C64};

/// `max_n max(|Re v_n|, |Im v_n|)`.
pub fn iq_inf_norm(v: &[C64]) -> f64 {
    v.iter().fold(0.0, |m, c| m.max(c.re.abs()).max(c.im.abs()))
}

/// Complex length-`N` vector to `[Re; Im]` of length `2N`.
pub fn stack(v: &[C64]) -> Vec<f64> {
    v.iter().map(|c| c.re).chain(v.iter().map(|c| c.im)).collect()
}

/// Inverse of [`stack`].
pub fn unstack(x: &[f64]) -> Vec<C64> {
    let n = x.len() / 2;
    (0..n).map(|i| C64::new(x[i], x[n + i])).collect()
}

/// `Σ a_n b_n` without conjugation.
pub fn dotu(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Right pseudo-inverse of a full-row-rank `K×N` matrix `H`, applied through
/// `H^† v = H^H (H H^H)^{-1} v = H^H R^{-1} v / N` with `R = H H^H / N`.
///
/// Only the `K×K` Gram matrix is factorized.
#[derive(Clone, Debug)]
pub struct RightPinv {
    h: DMatrix<C64>,
    chol: Cholesky<C64, Dyn>,
    gram: DMatrix<C64>,
}

impl RightPinv {
    pub fn new(h: DMatrix<C64>) -> Result<Self> {
        let (k, n) = h.shape();
        if k == 0 || k > n {
            return Err(Error::RankDeficient);
        }
        let gram = (&h * h.adjoint()).map(|c| c / n as f64);
        let chol = Cholesky::new(gram.clone()).ok_or(Error::RankDeficient)?;
        let l = chol.l_dirty();
        let diag_max = (0..k).map(|i| l[(i, i)].re).fold(0.0, f64::max);
        let diag_min = (0..k).map(|i| l[(i, i)].re).fold(f64::INFINITY, f64::min);
        if !(diag_min > 1e-7 * diag_max) {
            return Err(Error::RankDeficient);
        }
        Ok(Self { h, chol, gram })
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.h
    }

    /// `R = H H^H / N`.
    pub fn gram(&self) -> &DMatrix<C64> {
        &self.gram
    }

    pub fn n_rows(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.h.ncols()
    }

    /// `H^† v`.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let n = self.h.ncols() as f64;
        let w = self.chol.solve(&DVector::from_column_slice(v));
        let x = self.h.ad_mul(&w);
        x.iter().map(|c| c / n).collect()
    }

    /// `H u`.
    pub fn forward(&self, u: &[C64]) -> Vec<C64> {
        (&self.h * DVector::from_column_slice(u)).iter().copied().collect()
    }

    /// Orthogonal projection onto `null(H)`: `u - H^† H u`, in place.
    pub fn project_null(&self, u: &mut [C64]) {
        let p = self.apply(&self.forward(u));
        for (a, b) in u.iter_mut().zip(p) {
            *a -= b;
        }
    }

    /// Dense pseudo-inverse `H^H (H H^H)^{-1}` (`N×K`).
    pub fn to_matrix(&self) -> DMatrix<C64> {
        let n = self.h.ncols() as f64;
        let rinv_t = self.chol.solve(&DMatrix::identity(self.h.nrows(), self.h.nrows()));
        (self.h.adjoint() * rinv_t).map(|c| c / n)
    }
}

/// Orthonormal basis of `null(H)` for a full-row-rank `K×N` matrix, as an
/// `N×(N-K)` matrix. Built from a Householder QR of `H^H`.
pub fn nullspace_basis(h: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let (k, n) = h.shape();
    if k > n {
        return Err(Error::RankDeficient);
    }
    let qr = h.adjoint().qr();
    let r = qr.r();
    let scale = (0..k).map(|i| r[(i, i)].norm()).fold(0.0, f64::max);
    if (0..k).any(|i| !(r[(i, i)].norm() > 1e-10 * scale)) {
        return Err(Error::RankDeficient);
    }
    let mut qh = DMatrix::<C64>::identity(n, n);
    qr.q_tr_mul(&mut qh);
    Ok(qh.adjoint().columns(k, n - k).into_owned())
}
