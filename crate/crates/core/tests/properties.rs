#![allow(clippy::needless_range_loop)]

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::Config;

use sdprecode::analysis::{noise_variance_single, sep_bound, user_noise, zf_snr_lower_bound};
use sdprecode::channel::{
    array_response, ArrayGeometry, CanonicalChannel, Channel, Constellation, MultiUserScene, Path,
};
use sdprecode::linalg::{dotu, iq_inf_norm, stack, RightPinv};
use sdprecode::modulator::{
    no_overload_amplitude, no_overload_amplitudes_generalized, sd_angle_steered, sd_basic, sd_dithered, sd_generalized,
    DitherSpec,
};
use sdprecode::optim::{dual_value, huber, primal_apg, project_simplex, ApgParams, MinimaxProblem};
use sdprecode::precoder::{
    mrt_angle_steered, mrt_generalized, mrt_single, nullspace_zf, slp_constraint_matrix, slp_objective, slp_psk,
    zf_precode, zf_precode_qam_block, SlpSolver,
};
use sdprecode::C64;

fn complex_vec(len: std::ops::Range<usize>, mag: f64) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((-mag..mag, -mag..mag).prop_map(|(a, b)| C64::new(a, b)), len)
}

fn boxed(v: &[C64], a: f64) -> Vec<C64> {
    v.iter().map(|c| C64::new(c.re * a, c.im * a)).collect()
}

fn nonzero_channel(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((0.05f64..3.0, -PI..PI).prop_map(|(m, p)| C64::from_polar(m, p)), len)
}

fn prev(q: &[C64], k: usize) -> C64 {
    if k == 0 {
        C64::new(0.0, 0.0)
    } else {
        q[k - 1]
    }
}

fn psk_symbols(k: usize, m: usize, seed: u64) -> Vec<C64> {
    let c = Constellation::psk(m).unwrap();
    (0..k)
        .map(|i| c.point(((seed.wrapping_mul(2654435761) >> (i % 16)) as usize + 3 * i) % m))
        .collect()
}

fn scene_from(angles: &[f64], gains: &[f64], n: usize, d: f64, power: f64) -> Option<MultiUserScene> {
    let mut sorted = angles.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[1] - w[0] < 2f64.to_radians()) {
        return None;
    }
    let g = ArrayGeometry::new(n, d).unwrap();
    let chans = angles
        .iter()
        .zip(gains)
        .enumerate()
        .map(|(i, (&a, &m))| Channel::single_path(C64::from_polar(m, 0.7 * i as f64), a).unwrap())
        .collect();
    MultiUserScene::new(g, chans, power, 1.0).ok()
}

proptest! {
    #![proptest_config(Config::with_cases(64))]

    #[test]
    fn reconstruction_holds_even_when_overloaded(xbar in complex_vec(1..80, 4.0), phi in -PI..PI) {
        let m = sd_basic(&xbar);
        let s = sd_angle_steered(&xbar, phi);
        let rot = C64::from_polar(1.0, phi);
        for k in 0..xbar.len() {
            let e1 = m.output[k] - (xbar[k] + m.quant_error[k] - prev(&m.quant_error, k));
            let e2 = s.output[k] - (xbar[k] + s.quant_error[k] - rot * prev(&s.quant_error, k));
            prop_assert!(e1.norm() < 1e-10 && e2.norm() < 1e-10);
        }
    }

    #[test]
    fn generalized_identity(xbar in complex_vec(2..80, 3.0), h in nonzero_channel(2..80)) {
        let n = xbar.len().min(h.len());
        let h = CanonicalChannel::new(&h[..n]).unwrap().coefficients;
        let g = sd_generalized(&xbar[..n], &h).unwrap();
        let lhs = dotu(&h, &g.output);
        let rhs = dotu(&h, &xbar[..n]) + h[n - 1] * g.quant_error[n - 1];
        prop_assert!((lhs - rhs).norm() < 1e-9 * (1.0 + lhs.norm()));
    }

    #[test]
    fn no_overload_inside_boxes(unit in complex_vec(1..80, 1.0), phi in -PI..PI, h in nonzero_channel(1..80)) {
        let q_ok = |q: &[C64]| q.iter().all(|v| v.re.abs() <= 1.0 + 1e-12 && v.im.abs() <= 1.0 + 1e-12);
        let b = sd_basic(&unit);
        prop_assert!(q_ok(&b.quant_error) && !b.overloaded);

        let s = sd_angle_steered(&boxed(&unit, no_overload_amplitude(phi)), phi);
        prop_assert!(q_ok(&s.quant_error) && !s.overloaded);

        let n = unit.len().min(h.len());
        let h = CanonicalChannel::new(&h[..n]).unwrap().coefficients;
        let amps = no_overload_amplitudes_generalized(&h).unwrap();
        let xbar: Vec<C64> = unit[..n].iter().zip(&amps).map(|(u, a)| u * *a).collect();
        let g = sd_generalized(&xbar, &h).unwrap();
        prop_assert!(q_ok(&g.quant_error) && !g.overloaded);
    }

    #[test]
    fn steered_noise_telescopes_to_last_error(n in 2usize..128, d in 0.05f64..0.5, theta in -FRAC_PI_2..FRAC_PI_2, mag in 0.1f64..3.0, s_idx in 0usize..8) {
        let geometry = ArrayGeometry::new(n, d).unwrap();
        let path = Path { gain: C64::from_polar(mag, 0.4), angle: theta };
        let s = Constellation::psk(8).unwrap().point(s_idx);
        let (pre, phi) = mrt_angle_steered(&path, &geometry, s).unwrap();
        let out = sd_angle_steered(&pre.xbar, phi);
        let h = Channel::SinglePath(path).realize(&geometry).unwrap();
        let e: Vec<C64> = out.output.iter().zip(&pre.xbar).map(|(a, b)| a - b).collect();
        let lhs = dotu(&h, &e);
        let z = C64::from_polar(1.0, phi);
        let rhs = path.gain * z.powi(-(n as i32 - 1)) * out.quant_error[n - 1];
        prop_assert!((lhs - rhs).norm() < 1e-9 * (1.0 + lhs.norm()) * n as f64);
    }

    #[test]
    fn zero_rotation_is_basic(xbar in complex_vec(0..80, 3.0)) {
        prop_assert_eq!(sd_angle_steered(&xbar, 0.0), sd_basic(&xbar));
    }

    #[test]
    fn dither_is_deterministic(xbar in complex_vec(0..64, 1.0), level in 0.0f64..1.0, seed in any::<u64>()) {
        let spec = DitherSpec::new(level, seed).unwrap();
        prop_assert_eq!(sd_dithered(&xbar, spec), sd_dithered(&xbar, spec));
    }

    #[test]
    fn precoders_respect_declared_bounds(n in 2usize..64, d in 0.05f64..0.5, theta in -FRAC_PI_2..FRAC_PI_2, h in nonzero_channel(2..64), s_idx in 0usize..16) {
        let geometry = ArrayGeometry::new(n, d).unwrap();
        let path = Path { gain: C64::from_polar(1.3, -0.2), angle: theta };
        let s = Constellation::qam(16).unwrap().point(s_idx);
        prop_assert!(mrt_single(&path, &geometry, s).unwrap().within_bound(1e-9));
        prop_assert!(mrt_angle_steered(&path, &geometry, s).unwrap().0.within_bound(1e-9));
        let h = CanonicalChannel::new(&h).unwrap().coefficients;
        prop_assert!(mrt_generalized(&h, s, true).unwrap().within_bound(1e-9));
    }

    #[test]
    fn right_pinv_matches_svd(k in 1usize..6, extra in 0usize..20, seed in any::<u32>()) {
        let n = k + extra;
        let h = DMatrix::from_fn(k, n, |i, j| {
            let t = (seed as f64 * 1e-3) + (i * 31 + j * 7) as f64;
            C64::new(t.sin(), (1.7 * t).cos())
        });
        let Ok(p) = RightPinv::new(h.clone()) else { return Ok(()) };
        let Ok(oracle) = h.clone().pseudo_inverse(1e-12) else { return Ok(()) };
        let v: Vec<C64> = (0..k).map(|i| C64::new(i as f64 - 1.0, 0.5)).collect();
        let a = p.apply(&v);
        let b = &oracle * DVector::from_column_slice(&v);
        let scale = b.norm().max(1.0);
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).norm() < 1e-8 * scale);
        }
    }

    #[test]
    fn noise_variance_grows_with_angle(a in 0.0f64..FRAC_PI_2, b in 0.0f64..FRAC_PI_2, d in 0.01f64..0.5, p in 0.1f64..100.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let alpha = C64::new(0.8, 0.3);
        prop_assert!(noise_variance_single(alpha, lo, p, 1.0, d) <= noise_variance_single(alpha, hi, p, 1.0, d) + 1e-12);
        prop_assert!(noise_variance_single(alpha, -hi, p, 1.0, d) == noise_variance_single(alpha, hi, p, 1.0, d));
    }

    #[test]
    fn sep_bound_decreases(a in 0.0f64..1e3, b in 0.0f64..1e3, qam in any::<bool>()) {
        let c = if qam { Constellation::qam(16).unwrap() } else { Constellation::psk(8).unwrap() };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(sep_bound(hi, &c) <= sep_bound(lo, &c));
    }

    #[test]
    fn projection_is_idempotent(v in prop::collection::vec(-5.0f64..5.0, 1..20)) {
        let p = project_simplex(&v);
        let pp = project_simplex(&p);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in p.iter().zip(&pp) {
            prop_assert!((a - b).abs() < 1e-12 && *a >= 0.0);
        }
    }

    #[test]
    fn duality_sandwich(seed in any::<u32>(), tau in 0.01f64..1.0, xs in prop::collection::vec(-1.0f64..1.0, 8)) {
        let c = DMatrix::from_fn(8, 5, |i, j| ((seed as f64) * 1e-4 + (i * 5 + j) as f64 * 0.37).sin());
        let p = MinimaxProblem::unit_box(c.clone()).unwrap();
        let lam = project_simplex(&(0..5).map(|j| (seed as f64 * 1e-3 + j as f64).cos()).collect::<Vec<_>>());
        let g = dual_value(&p, &lam, tau);
        let cl = &c * DVector::from_column_slice(&lam);
        let lagrangian = |x: &[f64]| cl.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + 0.5 * tau * x.iter().map(|v| v * v).sum::<f64>();
        let best: Vec<f64> = cl.iter().map(|v| (-v / tau).clamp(-1.0, 1.0)).collect();
        prop_assert!((g - lagrangian(&best)).abs() < 1e-9 * (1.0 + g.abs()));
        prop_assert!(g <= lagrangian(&xs) + 1e-12);
    }

    #[test]
    fn primal_never_ends_above_start(seed in any::<u32>(), rows in 2usize..20, cols in 1usize..8) {
        let c = DMatrix::from_fn(rows, cols, |i, j| ((seed as f64) * 1e-3 + (i * cols + j) as f64 * 1.3).sin());
        let p = MinimaxProblem::unit_box(c).unwrap();
        let start = p.objective(&vec![0.0; rows]);
        let mut params = ApgParams::primal();
        params.max_iters = 300;
        let r = primal_apg(&p, &params).unwrap();
        prop_assert!(r.objective <= start + 1e-12);
    }
}

proptest! {
    #![proptest_config(Config::with_cases(16))]

    #[test]
    fn zf_nulls_interference(k in 1usize..6, seed in any::<u64>(), spread in 0.2f64..1.2) {
        let angles: Vec<f64> = (0..k).map(|i| -spread + 2.0 * spread * i as f64 / k as f64).collect();
        let gains: Vec<f64> = (0..k).map(|i| 0.5 + (seed >> i & 3) as f64 * 0.4).collect();
        let Some(scene) = scene_from(&angles, &gains, 48, 0.5, 10.0) else { return Ok(()) };
        let s = psk_symbols(k, 8, seed);
        let out = zf_precode(&scene, &s).unwrap();
        prop_assert!(out.within_bound(1e-9));
        let gamma = out.metadata.gamma.unwrap();
        let h = scene.channel_matrix().unwrap();
        for i in 0..k {
            let row: Vec<C64> = h.row(i).iter().copied().collect();
            let want = s[i] * gamma * user_noise(&scene, i).sigma_w_sq().sqrt();
            prop_assert!((dotu(&row, &out.xbar) - want).norm() < 1e-9 * (1.0 + want.norm()));
        }
        let b = zf_snr_lower_bound(&scene).unwrap();
        prop_assert!(b.lambda_min <= 1.0 + 1e-12 && b.lambda_min >= 1.0 - (k as f64 - 1.0) * b.rho - 1e-12);
    }

    #[test]
    fn slp_margin_beats_zf(k in 2usize..5, seed in any::<u64>()) {
        let angles: Vec<f64> = (0..k).map(|i| -0.5 + i as f64 * 0.3).collect();
        let gains = vec![1.0; k];
        let scene = scene_from(&angles, &gains, 32, 0.5, 10.0).unwrap();
        let s = psk_symbols(k, 8, seed);
        let sigma: Vec<f64> = (0..k).map(|i| user_noise(&scene, i).sigma_w_sq().sqrt()).collect();
        let c = slp_constraint_matrix(&scene.channel_matrix().unwrap(), &s, 8, &sigma).unwrap();
        let zf = zf_precode(&scene, &s).unwrap();
        for solver in [SlpSolver::Primal, SlpSolver::Dual] {
            let params = if solver == SlpSolver::Primal { ApgParams::primal() } else { ApgParams::dual() };
            let slp = slp_psk(&scene, &s, 8, solver, &params).unwrap();
            prop_assert!(slp.within_bound(1e-9));
            prop_assert!(slp_objective(&c, &slp.xbar) <= slp_objective(&c, &zf.xbar) + 1e-9);
        }
    }

    #[test]
    fn nullspace_never_shrinks_gamma(k in 1usize..4, seed in any::<u64>()) {
        let angles: Vec<f64> = (0..k).map(|i| -0.4 + i as f64 * 0.35).collect();
        let gains = vec![1.0; k];
        let scene = scene_from(&angles, &gains, 24, 0.5, 10.0).unwrap();
        let qam = Constellation::qam(16).unwrap();
        let block: Vec<Vec<C64>> = (0..4)
            .map(|t| (0..k).map(|i| qam.point(((seed >> (t * 4 + i)) as usize) % 16)).collect())
            .collect();
        let plain = zf_precode_qam_block(&scene, &block).unwrap()[0].metadata.gamma.unwrap();
        let mut params = ApgParams::iq_norm();
        params.max_iters = 400;
        let null = nullspace_zf(&scene, &block, &params).unwrap();
        let gamma = null[0].metadata.gamma.unwrap();
        prop_assert!(gamma >= plain * (1.0 - 1e-9));
        for out in &null {
            prop_assert!(iq_inf_norm(&out.xbar) <= 1.0 + 1e-9);
        }
    }
}

#[test]
fn huber_variational_identity_on_grid() {
    let lambdas: Vec<f64> = (0..=2000).map(|i| -1.0 + i as f64 * 1e-3).collect();
    for tau in [0.005, 0.1, 1.0] {
        for i in 0..=10_000 {
            let y = -5.0 + i as f64 * 1e-3;
            let sup = lambdas
                .iter()
                .map(|&l| l * y - 0.5 * tau * l * l)
                .fold(f64::NEG_INFINITY, f64::max);
            // Grid resolution 1e-3 bounds the gap by tau * 1e-6 / 8.
            let gap = huber(y, tau) - sup;
            assert!(
                (-1e-12..=tau * 1.25e-7 + 1e-12).contains(&gap),
                "y={y} tau={tau} gap={gap}"
            );
        }
    }
}

#[test]
fn array_response_at_broadside() {
    for (n, d) in [(1, 0.5), (17, 0.125), (64, 0.3)] {
        let g = ArrayGeometry::new(n, d).unwrap();
        assert!(array_response(&g, 0.0).iter().all(|a| *a == C64::new(1.0, 0.0)));
    }
}

#[test]
fn stacking_matches_real_form() {
    let v = [C64::new(1.0, 2.0), C64::new(-3.0, 0.5)];
    assert_eq!(stack(&v), vec![1.0, -3.0, 2.0, 0.5]);
}
