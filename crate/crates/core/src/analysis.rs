//! Closed-form noise variances, effective SNRs, error-probability bounds and
//! angular spectra.
//!
//! Conventions: `d` is the spacing over wavelength, `z = e^{j 2π d sin θ}`,
//! `P` the total transmit power and `σ_v²` the thermal noise variance.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::channel::{array_response, ArrayGeometry, Channel, Constellation, ConstellationKind, MultiUserScene, Path};
use crate::{Error, Result, C64};

/// Power of a quantization error uniform on the unit IQ box.
pub const SIGMA_Q_SQ: f64 = 2.0 / 3.0;

/// Split of a user's effective noise into shaped quantization noise and
/// thermal noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub quantization: f64,
    pub thermal: f64,
}

impl NoiseModel {
    pub fn sigma_w_sq(&self) -> f64 {
        self.quantization + self.thermal
    }

    pub fn sigma_q_sq(&self) -> f64 {
        SIGMA_Q_SQ
    }
}

/// Gaussian tail `Q(x) = erfc(x/√2)/2`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

fn sin_sq(x: f64) -> f64 {
    let s = x.sin();
    s * s
}

/// Large-`N` noise variance of basic spatial modulation for a single-path
/// user: `(4|α|²P/3) sin²(π d sin θ) + σ_v²`.
pub fn noise_variance_single(alpha: C64, theta: f64, power: f64, noise_var: f64, d: f64) -> f64 {
    4.0 * alpha.norm_sqr() * power / 3.0 * sin_sq(PI * d * theta.sin()) + noise_var
}

/// Finite-`N` form `(|α|²P/3N)(|1 - z^{-1}|²(N-1) + 1) + σ_v²`.
pub fn noise_variance_single_exact(alpha: C64, theta: f64, power: f64, noise_var: f64, d: f64, n: usize) -> f64 {
    let diff_sq = 4.0 * sin_sq(PI * d * theta.sin());
    alpha.norm_sqr() * power / (3.0 * n as f64) * (diff_sq * (n as f64 - 1.0) + 1.0) + noise_var
}

/// Angle-steered modulator with rotation `φ`:
/// `(4|α|²P/3) sin²((φ - 2π d sin θ)/2) + σ_v²`.
pub fn noise_variance_steered(alpha: C64, theta: f64, phi: f64, power: f64, noise_var: f64, d: f64) -> f64 {
    4.0 * alpha.norm_sqr() * power / 3.0 * sin_sq((phi - 2.0 * PI * d * theta.sin()) / 2.0) + noise_var
}

/// Multi-path variance
/// `(P/3N) Σ_{n=0}^{N-1} |Σ_l α_l (z_l^{-n} - z_l^{-n-1})|² + σ_v²`.
pub fn noise_variance_multipath(paths: &[Path], power: f64, noise_var: f64, d: f64, n: usize) -> f64 {
    let steps: Vec<(C64, C64)> = paths
        .iter()
        .map(|p| {
            let zinv = C64::from_polar(1.0, -2.0 * PI * d * p.angle.sin());
            (p.gain * (C64::new(1.0, 0.0) - zinv), zinv)
        })
        .collect();
    let mut sum = 0.0;
    let mut powers = vec![C64::new(1.0, 0.0); steps.len()];
    for _ in 0..n {
        let mut acc = C64::new(0.0, 0.0);
        for ((coef, zinv), zp) in steps.iter().zip(powers.iter_mut()) {
            acc += coef * *zp;
            *zp *= zinv;
        }
        sum += acc.norm_sqr();
    }
    power / (3.0 * n as f64) * sum + noise_var
}

/// `N`-free upper bound `(4PL/3) Σ_l |α_l|² sin²(π d sin θ_l) + σ_v²`.
pub fn noise_variance_multipath_bound(paths: &[Path], power: f64, noise_var: f64, d: f64) -> f64 {
    let l = paths.len() as f64;
    let s: f64 = paths
        .iter()
        .map(|p| p.gain.norm_sqr() * sin_sq(PI * d * p.angle.sin()))
        .sum();
    4.0 * power * l / 3.0 * s + noise_var
}

/// Effective noise model of user `i` under basic spatial modulation, used
/// to weight the ZF and SLP designs. Arbitrary channels carry thermal
/// noise only.
pub fn user_noise(scene: &MultiUserScene, i: usize) -> NoiseModel {
    let p = scene.total_power;
    let nv = scene.noise_variance;
    let d = scene.geometry.spacing();
    let total = match &scene.channels[i] {
        Channel::SinglePath(path) => noise_variance_single(path.gain, path.angle, p, nv, d),
        Channel::MultiPath(paths) => noise_variance_multipath(paths, p, nv, d, scene.geometry.n_antennas()),
        Channel::Arbitrary(_) => nv,
    };
    NoiseModel {
        quantization: total - nv,
        thermal: nv,
    }
}

/// MRT under basic modulation:
/// `|α|²PN / ((8|α|²P/3) sin²(π d sin θ) + 2σ_v²)`.
pub fn effective_snr_mrt(alpha: C64, theta: f64, power: f64, noise_var: f64, d: f64, n: usize) -> Result<f64> {
    let a2 = alpha.norm_sqr();
    let den = 8.0 * a2 * power / 3.0 * sin_sq(PI * d * theta.sin()) + 2.0 * noise_var;
    if !(den > 0.0) {
        return Err(Error::invalid(
            "effective SNR is unbounded (no quantization or thermal noise)",
        ));
    }
    Ok(a2 * power * n as f64 / den)
}

/// High-power limit of [`effective_snr_mrt`]: `3N / (8 sin²(π d sin θ))`.
pub fn mrt_snr_saturation(theta: f64, d: f64, n: usize) -> f64 {
    3.0 * n as f64 / (8.0 * sin_sq(PI * d * theta.sin()))
}

/// Angle-steered MRT: `A²|α|²PN / (2σ_v²)`.
pub fn effective_snr_steered(amplitude: f64, alpha: C64, power: f64, noise_var: f64, n: usize) -> f64 {
    amplitude * amplitude * alpha.norm_sqr() * power * n as f64 / (2.0 * noise_var)
}

/// ZF: `(P/2N) γ²`.
pub fn effective_snr_zf(power: f64, n: usize, gamma: f64) -> f64 {
    power / (2.0 * n as f64) * gamma * gamma
}

/// `(β, χ)` of the union-type bound `β Q(χ √SNR)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SepBoundParams {
    pub beta: f64,
    pub chi: f64,
}

impl SepBoundParams {
    pub fn for_constellation(c: &Constellation) -> Self {
        let m = c.order() as f64;
        match c.kind() {
            ConstellationKind::Psk => Self {
                beta: 2.0,
                chi: std::f64::consts::SQRT_2 * (PI / m).sin(),
            },
            ConstellationKind::Qam => Self {
                beta: 4.0,
                chi: 1.0 / (m.sqrt() - 1.0),
            },
        }
    }
}

/// `min(1, β Q(χ √SNR))`.
pub fn sep_bound(snr_eff: f64, constellation: &Constellation) -> f64 {
    let p = SepBoundParams::for_constellation(constellation);
    (p.beta * q_function(p.chi * snr_eff.max(0.0).sqrt())).min(1.0)
}

/// PSK decision margin `Re(z s*) - |Im(z s*)| cot(π/M)`; positive iff `z`
/// lies strictly inside the decision sector of `s`.
pub fn lemma_psk_margin(z: C64, s: C64, m: usize) -> f64 {
    let w = z * s.conj();
    w.re - w.im.abs() / (PI / m as f64).tan()
}

/// `D_N(φ) = sin(Nφ) / (N sin φ)` with its continuous extension at `φ = kπ`.
pub fn digital_sinc(n: usize, phi: f64) -> f64 {
    let k = (phi / PI).round();
    let delta = phi - k * PI;
    let parity = if ((n as i64 - 1) * k as i64).rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    };
    if delta == 0.0 {
        return parity;
    }
    parity * (n as f64 * delta).sin() / (n as f64 * delta.sin())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZfSnrBound {
    /// Lower bound shared by every user's effective SNR.
    pub bound: f64,
    /// `λ_min(R)` with `R = A A^H / N`.
    pub lambda_min: f64,
    /// Largest pairwise `|D_N(π d (sin θ_i - sin θ_j))|`.
    pub rho: f64,
    /// Index `k = argmax σ_{w,i}/|α_i|`.
    pub worst_user: usize,
    /// Bound for exactly orthogonal steering vectors, `PN|α_k|²/(2Kσ_{w,k}²)`.
    pub orthogonal_bound: f64,
}

/// ZF effective-SNR lower bound for a single-path scene:
/// `PN|α_k|² λ_min²(R) / (2K³ σ_{w,k}²)`.
pub fn zf_snr_lower_bound(scene: &MultiUserScene) -> Result<ZfSnrBound> {
    let k_users = scene.n_users();
    let n = scene.n_antennas();
    let d = scene.geometry.spacing();
    let mut paths = Vec::with_capacity(k_users);
    for ch in &scene.channels {
        match ch {
            Channel::SinglePath(p) => paths.push(*p),
            _ => return Err(Error::invalid("the ZF bound needs single-path channels")),
        }
    }
    let a = DMatrix::from_fn(k_users, n, |i, m| {
        C64::from_polar(1.0, -(m as f64) * 2.0 * PI * d * paths[i].angle.sin())
    });
    let r = (&a * a.adjoint()).map(|c| c / n as f64);
    let lambda_min = SymmetricEigen::new(r).eigenvalues.min();

    let mut rho: f64 = 0.0;
    for i in 0..k_users {
        for j in (i + 1)..k_users {
            let arg = PI * d * (paths[i].angle.sin() - paths[j].angle.sin());
            rho = rho.max(digital_sinc(n, arg).abs());
        }
    }

    let sigma_sq: Vec<f64> = (0..k_users).map(|i| user_noise(scene, i).sigma_w_sq()).collect();
    let worst_user = (0..k_users)
        .max_by(|&i, &j| {
            let ri = sigma_sq[i] / paths[i].gain.norm_sqr();
            let rj = sigma_sq[j] / paths[j].gain.norm_sqr();
            ri.total_cmp(&rj)
        })
        .unwrap_or(0);
    let p = scene.total_power;
    let num = p * n as f64 * paths[worst_user].gain.norm_sqr();
    let kf = k_users as f64;
    Ok(ZfSnrBound {
        bound: num * lambda_min * lambda_min / (2.0 * kf.powi(3) * sigma_sq[worst_user]),
        lambda_min,
        rho,
        worst_user,
        orthogonal_bound: num / (2.0 * kf * sigma_sq[worst_user]),
    })
}

/// Monte Carlo estimate of `E|a(ϑ)^T x|²` on an angle grid. `source(t)`
/// returns the transmit vector of trial `t`; trials are summed in a fixed
/// chunk order so the result does not depend on the thread count.
pub fn angular_spectrum<F>(geometry: &ArrayGeometry, grid: &[f64], n_trials: usize, source: F) -> Vec<f64>
where
    F: Fn(u64) -> Vec<C64> + Sync,
{
    const CHUNK: usize = 32;
    let steering: Vec<Vec<C64>> = grid.iter().map(|&t| array_response(geometry, t)).collect();
    let chunks: Vec<Vec<f64>> = (0..n_trials.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; grid.len()];
            for t in (c * CHUNK)..((c + 1) * CHUNK).min(n_trials) {
                let x = source(t as u64);
                for (a, s) in acc.iter_mut().zip(&steering) {
                    *a += crate::linalg::dotu(s, &x).norm_sqr();
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; grid.len()];
    for chunk in chunks {
        for (t, c) in total.iter_mut().zip(chunk) {
            *t += c;
        }
    }
    total.iter().map(|v| v / n_trials.max(1) as f64).collect()
}

/// `10 log10(P(ϑ) / N²)`: the unquantized MRT mainlobe sits at 0 dB.
pub fn spectrum_db(spectrum: &[f64], n: usize) -> Vec<f64> {
    let ref_power = (n * n) as f64;
    spectrum.iter().map(|p| 10.0 * (p / ref_power).log10()).collect()
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &DMatrix<C64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Sample variance of the complex samples (mean removed).
pub fn sample_variance(samples: &[C64]) -> f64 {
    let n = samples.len() as f64;
    let mean: C64 = samples.iter().sum::<C64>() / n;
    samples.iter().map(|s| (s - mean).norm_sqr()).sum::<f64>() / (n - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn one() -> C64 {
        C64::new(1.0, 0.0)
    }

    #[test]
    fn single_path_variance() {
        assert_eq!(noise_variance_single(one(), 0.0, 10.0, 0.7, 0.125), 0.7);
        let v = noise_variance_single(one(), FRAC_PI_2, 3.0, 1.0, 0.5);
        assert!((v - 5.0).abs() < 1e-12);
        let theta = 0.4;
        let big = noise_variance_single(one(), theta, 2.0, 1.0, 0.125);
        let exact = noise_variance_single_exact(one(), theta, 2.0, 1.0, 0.125, 512);
        assert!(((exact - big) / big).abs() < 0.01);
    }

    #[test]
    fn steered_variance() {
        let a = C64::from_polar(0.8, 1.0);
        let (t, p, nv, d) = (0.7_f64, 4.0, 0.5, 0.5);
        let phi = 2.0 * PI * d * t.sin();
        assert!((noise_variance_steered(a, t, phi, p, nv, d) - nv).abs() < 1e-12);
        let basic = noise_variance_single(a, t, p, nv, d);
        assert!((noise_variance_steered(a, t, 0.0, p, nv, d) - basic).abs() < 1e-12);
        let worst = noise_variance_steered(a, t, phi + PI, p, nv, d);
        assert!((worst - (4.0 * a.norm_sqr() * p / 3.0 + nv)).abs() < 1e-12);
    }

    #[test]
    fn multipath_variance() {
        let flat = [Path {
            gain: one(),
            angle: 0.0,
        }];
        assert!((noise_variance_multipath(&flat, 5.0, 1.0, 0.125, 64) - 1.0).abs() < 1e-12);

        let n = 128;
        let p = [Path {
            gain: C64::from_polar(1.3, 0.2),
            angle: 0.5,
        }];
        let m = noise_variance_multipath(&p, 2.0, 1.0, 0.25, n);
        let e = noise_variance_single_exact(p[0].gain, 0.5, 2.0, 1.0, 0.25, n);
        assert!(((m - e) / e).abs() < 1.0 / n as f64);

        let paths = [
            Path {
                gain: C64::new(0.5, 0.1),
                angle: -0.3,
            },
            Path {
                gain: C64::new(-0.2, 0.7),
                angle: 0.6,
            },
            Path {
                gain: C64::new(0.9, -0.4),
                angle: 1.1,
            },
        ];
        let v = noise_variance_multipath(&paths, 3.0, 1.0, 0.125, 256);
        assert!(v <= noise_variance_multipath_bound(&paths, 3.0, 1.0, 0.125));
    }

    #[test]
    fn snr_formulas() {
        let snr = effective_snr_mrt(one(), 0.0, 10.0, 1.0, 0.125, 256).unwrap();
        assert!((snr - 10.0 * 256.0 / 2.0).abs() < 1e-9);
        assert!(effective_snr_mrt(one(), 0.0, 10.0, 0.0, 0.125, 256).is_err());
        let sat = mrt_snr_saturation(0.5, 0.125, 256);
        let high = effective_snr_mrt(one(), 0.5, 1e12, 1.0, 0.125, 256).unwrap();
        assert!(((high - sat) / sat).abs() < 1e-6);
        let loss = 10.0
            * (effective_snr_steered(1.0, one(), 1.0, 1.0, 8)
                / effective_snr_steered(2.0 - 2f64.sqrt(), one(), 1.0, 1.0, 8))
            .log10();
        assert!((loss - 4.64).abs() < 0.01);
        assert_eq!(effective_snr_zf(4.0, 2, 3.0), 9.0);
    }

    #[test]
    fn sep_bound_values() {
        let psk8 = Constellation::psk(8).unwrap();
        assert_eq!(sep_bound(0.0, &psk8), 1.0);
        let chi = SepBoundParams::for_constellation(&psk8).chi;
        assert!((chi - 0.541_196_100_1).abs() < 1e-9);
        let qam = SepBoundParams::for_constellation(&Constellation::qam(16).unwrap());
        assert_eq!((qam.beta, qam.chi), (4.0, 1.0 / 3.0));
        let mut prev = 1.0;
        for i in 0..50 {
            let v = sep_bound(i as f64, &psk8);
            assert!(v <= prev);
            prev = v;
        }
        assert!((q_function(0.0) - 0.5).abs() < 1e-16);
        assert!((q_function(3.0) - 1.349_898_031_630_094_6e-3).abs() < 1e-15);
    }

    #[test]
    fn lemma_margin() {
        let s = C64::from_polar(1.0, FRAC_PI_4);
        assert!((lemma_psk_margin(s * 2.5, s, 8) - 2.5).abs() < 1e-12);
        let edge = C64::from_polar(1.0, FRAC_PI_4 + PI / 8.0);
        assert!(lemma_psk_margin(edge, s, 8).abs() < 1e-12);
    }

    #[test]
    fn digital_sinc_values() {
        assert_eq!(digital_sinc(16, 0.0), 1.0);
        assert!(digital_sinc(4, FRAC_PI_4).abs() < 1e-15);
        assert_eq!(digital_sinc(4, PI), -1.0);
        assert_eq!(digital_sinc(5, PI), 1.0);
        assert!((digital_sinc(7, PI + 1e-9) - 1.0).abs() < 1e-12);
        for i in 0..=10_000 {
            let phi = -PI + i as f64 * 2.0 * PI / 10_000.0;
            assert!(digital_sinc(33, phi).abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn zf_bound_single_user() {
        let g = ArrayGeometry::new(32, 0.125).unwrap();
        let ch = Channel::single_path(C64::from_polar(0.7, 0.3), 0.2).unwrap();
        let scene = MultiUserScene::new(g, vec![ch], 10.0, 1.0).unwrap();
        let b = zf_snr_lower_bound(&scene).unwrap();
        assert!((b.lambda_min - 1.0).abs() < 1e-12);
        let sw = user_noise(&scene, 0).sigma_w_sq();
        assert!((b.bound - 10.0 * 32.0 * 0.49 / (2.0 * sw)).abs() < 1e-9);
        assert_eq!(b.rho, 0.0);
    }

    #[test]
    fn zf_bound_orthogonal_angles() {
        // sin θ_i = i / (N d) gives a_i^T a_j^* = 0.
        let (n, d) = (16, 0.5);
        let g = ArrayGeometry::new(n, d).unwrap();
        let chans = (0..4)
            .map(|i| Channel::single_path(one(), ((i as f64) / (n as f64 * d)).asin()).unwrap())
            .collect();
        let scene = MultiUserScene::new(g, chans, 1.0, 1.0).unwrap();
        let b = zf_snr_lower_bound(&scene).unwrap();
        assert!((b.lambda_min - 1.0).abs() < 1e-12);
        assert!(b.rho < 1e-12);
    }

    #[test]
    fn spectrum_of_matched_beam() {
        let g = ArrayGeometry::new(16, 0.5).unwrap();
        let theta = 0.3;
        let x: Vec<C64> = array_response(&g, theta).iter().map(|c| c.conj()).collect();
        let s = angular_spectrum(&g, &[theta, -0.2], 1, |_| x.clone());
        assert!((s[0] - 256.0).abs() < 1e-9);
        assert!(spectrum_db(&s, 16)[0].abs() < 1e-12);
    }
}
