//! Spatial first-order sigma-delta modulators.
//!
//! Every variant runs the recursion across the antenna index `n = 1..N` with
//! `b_0 = x_0 = q_0 = 0` and quantizes each rail with `sgn(0) = +1`:
//!
//! ```text
//! x_n = sgn(Re b_n) + j sgn(Im b_n)
//! b_n = r_n b_{n-1} + (xbar_n - r_n x_{n-1})
//! q_n = x_n - b_n
//! ```
//!
//! The feedback ratio `r_n` is `1` for the basic modulator, `e^{jφ}` for the
//! angle-steered one and `h_{n-1} / h_n` (with `h_0 = 0`) for the generalized
//! one. The resulting noise-shaping identity is
//! `x_n = xbar_n + q_n - r_n q_{n-1}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, C64};

/// Integrator magnitude (per rail) above which the quantizer is overloaded.
pub const OVERLOAD_LEVEL: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ModulationResult {
    /// One-bit output, entries in `{±1±j}`.
    pub output: Vec<C64>,
    /// `q_n = x_n - b_n`.
    pub quant_error: Vec<C64>,
    /// Quantizer input `b_n` (before dither).
    pub integrator: Vec<C64>,
    pub overloaded: bool,
    /// Largest per-rail integrator magnitude seen.
    pub max_integrator: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DitherSpec {
    pub level: f64,
    pub seed: u64,
}

impl DitherSpec {
    pub fn new(level: f64, seed: u64) -> Result<Self> {
        if !(level >= 0.0) || !level.is_finite() {
            return Err(Error::invalid(format!("dither level {level} must be >= 0")));
        }
        Ok(Self { level, seed })
    }
}

#[inline]
pub(crate) fn sgn(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn quantize(b: C64) -> C64 {
    C64::new(sgn(b.re), sgn(b.im))
}

enum Feedback<'a> {
    Unit,
    Rotation(C64),
    Ratios(&'a [C64]),
}

fn run<R: Rng + ?Sized>(xbar: &[C64], feedback: Feedback<'_>, mut dither: Option<(f64, &mut R)>) -> ModulationResult {
    let n = xbar.len();
    let mut output = Vec::with_capacity(n);
    let mut quant_error = Vec::with_capacity(n);
    let mut integrator = Vec::with_capacity(n);
    let mut b_prev = C64::new(0.0, 0.0);
    let mut x_prev = C64::new(0.0, 0.0);
    let mut max_integrator: f64 = 0.0;

    for (idx, &xb) in xbar.iter().enumerate() {
        let b = match feedback {
            Feedback::Unit => b_prev + (xb - x_prev),
            Feedback::Rotation(r) => r * b_prev + (xb - r * x_prev),
            Feedback::Ratios(r) => r[idx] * b_prev + (xb - r[idx] * x_prev),
        };
        let x = match dither.as_mut() {
            Some((level, rng)) if *level > 0.0 => {
                let ur = rng.random_range(-*level..=*level);
                let ui = rng.random_range(-*level..=*level);
                quantize(b + C64::new(ur, ui))
            }
            _ => quantize(b),
        };
        max_integrator = max_integrator.max(b.re.abs()).max(b.im.abs());
        output.push(x);
        quant_error.push(x - b);
        integrator.push(b);
        b_prev = b;
        x_prev = x;
    }

    ModulationResult {
        output,
        quant_error,
        integrator,
        overloaded: max_integrator > OVERLOAD_LEVEL,
        max_integrator,
    }
}

/// Basic spatial modulator: two independent real first-order loops.
pub fn sd_basic(xbar: &[C64]) -> ModulationResult {
    run::<ChaCha8Rng>(xbar, Feedback::Unit, None)
}

/// Basic modulator with uniform dither `u ~ U[-δ, δ]` added to each rail of
/// the quantizer input. Draws are consumed in `(Re, Im)` order per antenna.
pub fn sd_dithered(xbar: &[C64], dither: DitherSpec) -> ModulationResult {
    let mut rng = ChaCha8Rng::seed_from_u64(dither.seed);
    sd_dithered_with_rng(xbar, dither.level, &mut rng)
}

pub fn sd_dithered_with_rng<R: Rng + ?Sized>(xbar: &[C64], level: f64, rng: &mut R) -> ModulationResult {
    run(xbar, Feedback::Unit, Some((level, rng)))
}

/// Angle-steered modulator with feedback rotation `e^{jφ}`.
pub fn sd_angle_steered(xbar: &[C64], phi: f64) -> ModulationResult {
    run::<ChaCha8Rng>(xbar, Feedback::Rotation(C64::from_polar(1.0, phi)), None)
}

/// Feedback ratios `h_{n-1}/h_n` with `h_0 = 0`, after checking that `h` is
/// canonical (nonzero, sorted by nondecreasing magnitude).
pub fn feedback_ratios(h: &[C64]) -> Result<Vec<C64>> {
    if let Some(index) = h.iter().position(|c| c.norm() == 0.0) {
        return Err(Error::ZeroCoefficient { index });
    }
    if let Some(i) = h.windows(2).position(|w| w[0].norm() > w[1].norm()) {
        return Err(Error::NotCanonical { index: i + 1 });
    }
    let mut ratios = Vec::with_capacity(h.len());
    if !h.is_empty() {
        ratios.push(C64::new(0.0, 0.0));
    }
    ratios.extend(h.windows(2).map(|w| w[0] / w[1]));
    Ok(ratios)
}

/// Generalized angle-steered modulator for an arbitrary canonical channel:
/// all quantization errors but the last cancel in `h^T x`.
pub fn sd_generalized(xbar: &[C64], h: &[C64]) -> Result<ModulationResult> {
    if xbar.len() != h.len() {
        return Err(Error::LengthMismatch {
            expected: h.len(),
            got: xbar.len(),
        });
    }
    let ratios = feedback_ratios(h)?;
    Ok(run::<ChaCha8Rng>(xbar, Feedback::Ratios(&ratios), None))
}

/// Per-rail input amplitude that keeps the angle-steered loop out of overload:
/// `A = 2 - |cos φ| - |sin φ|`.
pub fn no_overload_amplitude(phi: f64) -> f64 {
    2.0 - phi.cos().abs() - phi.sin().abs()
}

/// Per-antenna no-overload amplitudes of the generalized modulator:
/// `A_1 = 2`, `A_n = 2 - |h_{n-1}/h_n| (|cos φ_n| + |sin φ_n|)`.
pub fn no_overload_amplitudes_generalized(h: &[C64]) -> Result<Vec<f64>> {
    Ok(feedback_ratios(h)?
        .into_iter()
        .map(|r| {
            let phi = r.arg();
            2.0 - r.norm() * (phi.cos().abs() + phi.sin().abs())
        })
        .collect())
}

/// Memoryless one-bit quantization `sgn(Re) + j sgn(Im)`.
pub fn direct_quantize(xbar: &[C64]) -> Vec<C64> {
    xbar.iter().map(|&v| quantize(v)).collect()
}
