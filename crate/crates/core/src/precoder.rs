//! Precoders producing the peak-limited modulator input `x̄`.
//!
//! `expected_gains[i]` is the noise-free, unquantized receive gain of user
//! `i` before the `√(P/2N)` amplitude, i.e. `h_i^T x̄ = g_i s_i` for the
//! linear schemes.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::user_noise;
use crate::channel::{array_response, ArrayGeometry, MultiUserScene, Path};
use crate::linalg::{dotu, iq_inf_norm, stack, unstack, RightPinv};
use crate::modulator::{no_overload_amplitude, no_overload_amplitudes_generalized};
use crate::optim::{
    dual_apg, min_iq_inf_norm_nullspace, primal_apg, ApgParams, IqNormReport, MinimaxProblem, SolveReport,
};
use crate::{Error, Result, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Mrt,
    MrtSteered,
    MrtGeneralized,
    Zf,
    ZfQam,
    NullspaceZf,
    SlpPrimal,
    SlpDual,
}

impl Scheme {
    pub fn is_multi_user(self) -> bool {
        matches!(
            self,
            Scheme::Zf | Scheme::ZfQam | Scheme::NullspaceZf | Scheme::SlpPrimal | Scheme::SlpDual
        )
    }
}

/// Declared IQ amplitude limit of a precoder output.
#[derive(Clone, Debug, PartialEq)]
pub enum IqBound {
    Uniform(f64),
    PerElement(Vec<f64>),
}

impl IqBound {
    pub fn at(&self, n: usize) -> f64 {
        match self {
            IqBound::Uniform(a) => *a,
            IqBound::PerElement(v) => v[n],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrecodeMetadata {
    /// ZF normalization `γ`.
    pub gamma: Option<f64>,
    /// Steering phase to pair with the angle-steered modulator.
    pub phi: Option<f64>,
    /// Elements rescaled to stay inside their IQ box.
    pub clamped: Vec<usize>,
    pub solver: Option<SolveReport>,
    pub nullspace: Option<IqNormReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrecodeOutput {
    pub scheme: Scheme,
    pub xbar: Vec<C64>,
    pub expected_gains: Vec<f64>,
    pub bound: IqBound,
    pub metadata: PrecodeMetadata,
}

impl PrecodeOutput {
    /// Whether every element respects the declared IQ bound within `tol`.
    pub fn within_bound(&self, tol: f64) -> bool {
        self.xbar
            .iter()
            .enumerate()
            .all(|(n, c)| c.re.abs().max(c.im.abs()) <= self.bound.at(n) + tol)
    }

    pub fn converged(&self) -> bool {
        let solver = self.metadata.solver.as_ref().is_none_or(|r| r.converged);
        let null = self.metadata.nullspace.as_ref().is_none_or(|r| r.converged);
        solver && null
    }
}

fn check_symbol(s: C64) -> Result<()> {
    if !(s.norm() <= 1.0 + 1e-12) {
        return Err(Error::invalid(format!("symbol {s} exceeds unit modulus")));
    }
    Ok(())
}

fn conj_beam(path: &Path, geometry: &ArrayGeometry, s: C64, amplitude: f64) -> Result<Vec<C64>> {
    check_symbol(s)?;
    let mag = path.gain.norm();
    if mag == 0.0 {
        return Err(Error::ZeroCoefficient { index: 0 });
    }
    let w = path.gain.conj() * s * amplitude / mag;
    Ok(array_response(geometry, path.angle)
        .into_iter()
        .map(|a| w * a.conj())
        .collect())
}

/// Conjugate beamforming `x̄ = (α* s / |α|) a*(θ)`; `h^T x̄ = N|α| s`.
pub fn mrt_single(path: &Path, geometry: &ArrayGeometry, s: C64) -> Result<PrecodeOutput> {
    let xbar = conj_beam(path, geometry, s, 1.0)?;
    Ok(PrecodeOutput {
        scheme: Scheme::Mrt,
        xbar,
        expected_gains: vec![geometry.n_antennas() as f64 * path.gain.norm()],
        bound: IqBound::Uniform(1.0),
        metadata: PrecodeMetadata::default(),
    })
}

/// Wraps an angle to `[-π, π]`.
pub fn wrap_phase(phi: f64) -> f64 {
    if (-PI..=PI).contains(&phi) {
        return phi;
    }
    let w = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI && phi > 0.0 {
        PI
    } else {
        w
    }
}

/// MRT scaled to the no-overload amplitude `A(φ)` of the angle-steered
/// modulator with `φ = 2π d sin θ`. Returns the output and `φ`.
pub fn mrt_angle_steered(path: &Path, geometry: &ArrayGeometry, s: C64) -> Result<(PrecodeOutput, f64)> {
    let phi = wrap_phase(geometry.spatial_frequency(path.angle));
    let amp = no_overload_amplitude(phi);
    let xbar = conj_beam(path, geometry, s, amp)?;
    let out = PrecodeOutput {
        scheme: Scheme::MrtSteered,
        xbar,
        expected_gains: vec![amp * geometry.n_antennas() as f64 * path.gain.norm()],
        bound: IqBound::Uniform(amp),
        metadata: PrecodeMetadata {
            phi: Some(phi),
            ..Default::default()
        },
    };
    Ok((out, phi))
}

/// `x̄_n = A_n h_n^* s / max(|Re h_n|, |Im h_n|)` for given amplitudes.
///
/// With `clamp`, an element whose IQ box is violated is rescaled by
/// `1 / (1 + min/max)` of `(|Re h_n|, |Im h_n|)` and recorded.
pub fn mrt_weighted(h: &[C64], s: C64, amplitudes: &[f64], clamp: bool) -> Result<PrecodeOutput> {
    check_symbol(s)?;
    if amplitudes.len() != h.len() {
        return Err(Error::LengthMismatch {
            expected: h.len(),
            got: amplitudes.len(),
        });
    }
    let mut xbar = Vec::with_capacity(h.len());
    let mut clamped = Vec::new();
    let mut gain = 0.0;
    for (n, (&hn, &a)) in h.iter().zip(amplitudes).enumerate() {
        let hi = hn.re.abs().max(hn.im.abs());
        if hi == 0.0 {
            return Err(Error::ZeroCoefficient { index: n });
        }
        let mut r = hn.conj() * (a / hi);
        let v = r * s;
        if clamp && v.re.abs().max(v.im.abs()) > a {
            r /= 1.0 + hn.re.abs().min(hn.im.abs()) / hi;
            clamped.push(n);
        }
        gain += (hn * r).re;
        xbar.push(r * s);
    }
    Ok(PrecodeOutput {
        scheme: Scheme::MrtGeneralized,
        xbar,
        expected_gains: vec![gain],
        bound: IqBound::PerElement(amplitudes.to_vec()),
        metadata: PrecodeMetadata {
            clamped,
            ..Default::default()
        },
    })
}

/// Generalized MRT for a canonical channel with the no-overload amplitudes
/// of the generalized modulator.
pub fn mrt_generalized(h: &[C64], s: C64, clamp: bool) -> Result<PrecodeOutput> {
    let amps = no_overload_amplitudes_generalized(h)?;
    mrt_weighted(h, s, &amps, clamp)
}

/// ZF design `r = H^† diag(σ_w) s` for a realized channel matrix.
#[derive(Clone, Debug)]
pub struct ZfDesign {
    pinv: RightPinv,
    weights: Vec<f64>,
}

impl ZfDesign {
    /// Uses each user's effective noise standard deviation as its weight.
    pub fn new(scene: &MultiUserScene) -> Result<Self> {
        let weights = (0..scene.n_users())
            .map(|i| user_noise(scene, i).sigma_w_sq().sqrt())
            .collect();
        Self::with_weights(scene.channel_matrix()?, weights)
    }

    pub fn with_weights(h: DMatrix<C64>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != h.nrows() {
            return Err(Error::LengthMismatch {
                expected: h.nrows(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("ZF weights must be positive"));
        }
        Ok(Self {
            pinv: RightPinv::new(h)?,
            weights,
        })
    }

    pub fn pinv(&self) -> &RightPinv {
        &self.pinv
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Unnormalized direction `H^† D s`.
    pub fn direction(&self, s: &[C64]) -> Result<Vec<C64>> {
        if s.len() != self.weights.len() {
            return Err(Error::LengthMismatch {
                expected: self.weights.len(),
                got: s.len(),
            });
        }
        let ds: Vec<C64> = s.iter().zip(&self.weights).map(|(s, w)| s * *w).collect();
        Ok(self.pinv.apply(&ds))
    }

    fn output(&self, scheme: Scheme, r: Vec<C64>, gamma: f64) -> PrecodeOutput {
        PrecodeOutput {
            scheme,
            xbar: r.into_iter().map(|c| c * gamma).collect(),
            expected_gains: self.weights.iter().map(|w| gamma * w).collect(),
            bound: IqBound::Uniform(1.0),
            metadata: PrecodeMetadata {
                gamma: Some(gamma),
                ..Default::default()
            },
        }
    }

    /// Per-symbol peak normalization `γ = 1/‖H^† D s‖_{IQ-∞}`.
    pub fn precode(&self, s: &[C64]) -> Result<PrecodeOutput> {
        let r = self.direction(s)?;
        let peak = iq_inf_norm(&r);
        if !(peak > 0.0) {
            return Err(Error::ZeroNormalization);
        }
        Ok(self.output(Scheme::Zf, r, 1.0 / peak))
    }

    /// One `γ` over a block: `1 / max_t ‖H^† D s_t‖_{IQ-∞}`.
    pub fn precode_block(&self, symbols: &[Vec<C64>]) -> Result<Vec<PrecodeOutput>> {
        let dirs = symbols
            .par_iter()
            .map(|s| self.direction(s))
            .collect::<Result<Vec<_>>>()?;
        let peak = dirs.iter().map(|r| iq_inf_norm(r)).fold(0.0, f64::max);
        if !(peak > 0.0) {
            return Err(Error::ZeroNormalization);
        }
        Ok(dirs
            .into_iter()
            .map(|r| self.output(Scheme::ZfQam, r, 1.0 / peak))
            .collect())
    }

    /// Nullspace-assisted block ZF: each `r_t` is shifted by the `η_t ∈
    /// null(H)` minimizing `‖r_t + η_t‖_{IQ-∞}`, then one `γ` is shared.
    pub fn precode_nullspace(&self, symbols: &[Vec<C64>], params: &ApgParams) -> Result<Vec<PrecodeOutput>> {
        let solved = symbols
            .par_iter()
            .map(|s| {
                let r = self.direction(s)?;
                let rep = min_iq_inf_norm_nullspace(&r, &self.pinv, params)?;
                let v: Vec<C64> = r.iter().zip(&rep.eta).map(|(a, b)| a + b).collect();
                Ok((v, rep))
            })
            .collect::<Result<Vec<_>>>()?;
        let peak = solved.iter().map(|(v, _)| iq_inf_norm(v)).fold(0.0, f64::max);
        if !(peak > 0.0) {
            return Err(Error::ZeroNormalization);
        }
        Ok(solved
            .into_iter()
            .map(|(v, rep)| {
                let mut out = self.output(Scheme::NullspaceZf, v, 1.0 / peak);
                out.metadata.nullspace = Some(rep);
                out
            })
            .collect())
    }

    /// Unquantized benchmark under an average power budget `E‖x‖² = 2N`,
    /// for symbols of mean energy `symbol_energy`.
    pub fn precode_average_power(&self, s: &[C64], symbol_energy: f64) -> Result<PrecodeOutput> {
        let r = self.direction(s)?;
        let n = self.pinv.n_cols() as f64;
        let pinv = self.pinv.to_matrix();
        let mean_power: f64 = self
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * w * pinv.column(i).norm_squared())
            .sum::<f64>()
            * symbol_energy;
        if !(mean_power > 0.0) {
            return Err(Error::ZeroNormalization);
        }
        let gamma = (2.0 * n / mean_power).sqrt();
        let mut out = self.output(Scheme::Zf, r, gamma);
        out.bound = IqBound::Uniform(f64::INFINITY);
        Ok(out)
    }
}

/// ZF with per-symbol normalization for a single-path scene.
pub fn zf_precode(scene: &MultiUserScene, s: &[C64]) -> Result<PrecodeOutput> {
    ZfDesign::new(scene)?.precode(s)
}

/// ZF over a block of `T` symbol vectors with a shared normalization.
pub fn zf_precode_qam_block(scene: &MultiUserScene, symbols: &[Vec<C64>]) -> Result<Vec<PrecodeOutput>> {
    if symbols.is_empty() {
        return Err(Error::invalid("block length must be at least 1"));
    }
    ZfDesign::new(scene)?.precode_block(symbols)
}

/// Nullspace-assisted ZF over a block.
pub fn nullspace_zf(scene: &MultiUserScene, symbols: &[Vec<C64>], params: &ApgParams) -> Result<Vec<PrecodeOutput>> {
    if symbols.is_empty() {
        return Err(Error::invalid("block length must be at least 1"));
    }
    ZfDesign::new(scene)?.precode_nullspace(symbols, params)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlpSolver {
    Primal,
    Dual,
}

/// Stacked-real constraint matrix `C = [c_1 … c_{2K}]` (`2N × 2K`) of the
/// PSK symbol-level design: with `v_i = s_i^* h_i`,
/// `b_i = [Re v_i; -Im v_i]/σ_i`, `r_i = cot(π/M) [Im v_i; Re v_i]/σ_i`,
/// `c_i = -b_i + r_i` and `c_{K+i} = -b_i - r_i`.
pub fn slp_constraint_matrix(h: &DMatrix<C64>, s: &[C64], m: usize, sigma_w: &[f64]) -> Result<DMatrix<f64>> {
    let (k, n) = h.shape();
    if s.len() != k || sigma_w.len() != k {
        return Err(Error::LengthMismatch {
            expected: k,
            got: s.len().min(sigma_w.len()),
        });
    }
    if m < 2 {
        return Err(Error::invalid("PSK order must be at least 2"));
    }
    let cot = 1.0 / (PI / m as f64).tan();
    let mut c = DMatrix::<f64>::zeros(2 * n, 2 * k);
    for i in 0..k {
        if !(sigma_w[i] > 0.0) {
            return Err(Error::invalid(format!("noise level of user {i} must be positive")));
        }
        let inv = 1.0 / sigma_w[i];
        for j in 0..n {
            let v = s[i].conj() * h[(i, j)];
            let (b_re, b_im) = (v.re * inv, -v.im * inv);
            let (r_re, r_im) = (cot * v.im * inv, cot * v.re * inv);
            c[(j, i)] = -b_re + r_re;
            c[(n + j, i)] = -b_im + r_im;
            c[(j, k + i)] = -b_re - r_re;
            c[(n + j, k + i)] = -b_im - r_im;
        }
    }
    Ok(c)
}

/// Symbol-level precoding for `M`-PSK over the unit IQ box.
pub fn slp_psk_weighted(
    h: &DMatrix<C64>,
    s: &[C64],
    m: usize,
    sigma_w: &[f64],
    solver: SlpSolver,
    params: &ApgParams,
) -> Result<PrecodeOutput> {
    let c = slp_constraint_matrix(h, s, m, sigma_w)?;
    let problem = MinimaxProblem::unit_box(c)?;
    let report = match solver {
        SlpSolver::Primal => primal_apg(&problem, params)?,
        SlpSolver::Dual => dual_apg(&problem, params)?,
    };
    let xbar = unstack(&report.x);
    let gains = (0..h.nrows())
        .map(|i| {
            let row: Vec<C64> = h.row(i).iter().copied().collect();
            (dotu(&row, &xbar) * s[i].conj()).re
        })
        .collect();
    Ok(PrecodeOutput {
        scheme: match solver {
            SlpSolver::Primal => Scheme::SlpPrimal,
            SlpSolver::Dual => Scheme::SlpDual,
        },
        xbar,
        expected_gains: gains,
        bound: IqBound::Uniform(1.0),
        metadata: PrecodeMetadata {
            solver: Some(report),
            ..Default::default()
        },
    })
}

/// Symbol-level precoding with the scene's effective noise levels.
pub fn slp_psk(
    scene: &MultiUserScene,
    s: &[C64],
    m: usize,
    solver: SlpSolver,
    params: &ApgParams,
) -> Result<PrecodeOutput> {
    let sigma: Vec<f64> = (0..scene.n_users())
        .map(|i| user_noise(scene, i).sigma_w_sq().sqrt())
        .collect();
    slp_psk_weighted(&scene.channel_matrix()?, s, m, &sigma, solver, params)
}

/// `max_i c_i^T x` of the SLP design at a complex point.
pub fn slp_objective(c: &DMatrix<f64>, xbar: &[C64]) -> f64 {
    let x = DVector::from_vec(stack(xbar));
    c.tr_mul(&x).max()
}
