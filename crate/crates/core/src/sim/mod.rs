//! Monte Carlo error-rate curves, IQ scatter data and angular spectra.
//!
//! Every trial draws its randomness from counter-keyed ChaCha streams (see
//! [`trial_rng`]), trials run in parallel chunks and partial counts are summed
//! in a fixed order, so results are bit-identical for a given seed regardless
//! of the thread count.

mod config;
mod engine;

use std::io::Write;

use rand::Rng;
use serde::Serialize;

pub use config::{
    ArrayConfig, ConfigError, ConstellationConfig, GainModel, ModulatorKind, ScatterConfig, SchemeConfig, SimConfig,
    SpectrumConfig, UsersConfig,
};
pub use engine::{run_ser, trial_rng, Stream};

use crate::analysis::{angular_spectrum, spectrum_db};
use crate::channel::{ArrayGeometry, MultiUserScene};
use crate::linalg::dotu;
use crate::{Result, C64};
use engine::{transmit, Context, Tally};

/// Scene and first-slot symbols of `trial` at SNR point `point`, drawn from
/// the same streams the error-rate simulation uses.
pub fn draw_instance(cfg: &SimConfig, point: usize, trial: u64) -> Result<(MultiUserScene, Vec<C64>)> {
    let ctx = Context::new(cfg)?;
    let snr = *cfg
        .snr_db
        .get(point)
        .ok_or_else(|| crate::Error::invalid(format!("SNR point {point} out of range")))?;
    let power = 10f64.powf(snr / 10.0) * cfg.noise_variance;
    let key = ctx.point_key(point);
    let scene = ctx.draw_scene(&mut trial_rng(cfg.seed, key, trial, Stream::Scene), power)?;
    let symbols = ctx.draw_symbols(&mut trial_rng(cfg.seed, key, trial, Stream::Symbols));
    let s = symbols[0].iter().map(|&m| ctx.constellation.point(m)).collect();
    Ok((scene, s))
}

/// Element-wise one-bit quantization of an unquantized design.
pub fn direct_quantize(xbar: &[C64]) -> Vec<C64> {
    crate::modulator::direct_quantize(xbar)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SerPoint {
    pub snr_db: f64,
    pub ser: f64,
    pub ber: f64,
    /// Mean closed-form bound over the simulated scenes, if one applies.
    pub theory_ser: Option<f64>,
    /// 95% normal-approximation half-width of `ser`.
    pub ci_halfwidth: f64,
    pub trials: usize,
    pub symbols: usize,
    pub symbol_errors: usize,
    pub bit_errors: usize,
    /// Fraction of modulated vectors whose integrator left the no-overload box.
    pub overload_fraction: f64,
    /// Number of precoded vectors whose solver hit its iteration cap.
    pub unconverged: usize,
}

impl SerPoint {
    fn from_tally(snr_db: f64, t: &Tally) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let ser = ratio(t.symbol_errors, t.symbols);
        Self {
            snr_db,
            ser,
            ber: ratio(t.bit_errors, t.bits),
            theory_ser: (t.theory_count > 0).then(|| t.theory_sum / t.theory_count as f64),
            ci_halfwidth: if t.symbols == 0 {
                0.0
            } else {
                1.96 * (ser * (1.0 - ser) / t.symbols as f64).sqrt()
            },
            trials: t.trials,
            symbols: t.symbols,
            symbol_errors: t.symbol_errors,
            bit_errors: t.bit_errors,
            overload_fraction: ratio(t.overloaded, t.vectors),
            unconverged: t.unconverged,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SerCurve {
    pub points: Vec<SerPoint>,
}

impl SerCurve {
    pub fn snr_db(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.snr_db).collect()
    }

    pub fn ser(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.ser).collect()
    }

    pub fn ber(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.ber).collect()
    }

    /// Total precoded vectors whose solver did not converge.
    pub fn unconverged(&self) -> usize {
        self.points.iter().map(|p| p.unconverged).sum()
    }

    /// CSV with columns `snr_db, ser, ber, theory_ser, ci_halfwidth, trials`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["snr_db", "ser", "ber", "theory_ser", "ci_halfwidth", "trials"])?;
        for p in &self.points {
            w.write_record([
                p.snr_db.to_string(),
                p.ser.to_string(),
                p.ber.to_string(),
                p.theory_ser.map(|v| v.to_string()).unwrap_or_default(),
                p.ci_halfwidth.to_string(),
                p.trials.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScatterPoint {
    pub true_symbol: C64,
    /// Noise-free received sample divided by the receive gain.
    pub received: C64,
}

pub fn write_scatter_csv<W: Write>(points: &[ScatterPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["re_true", "im_true", "re_rx", "im_rx"])?;
    for p in points {
        w.write_record([
            p.true_symbol.re.to_string(),
            p.true_symbol.im.to_string(),
            p.received.re.to_string(),
            p.received.im.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Noise-free normalized receive points `h^T x / g` for a single-user scheme,
/// one per realization (scene, symbol and dither redrawn each time).
pub fn run_iq_scatter(cfg: &SimConfig, n_realizations: usize) -> Result<Vec<ScatterPoint>> {
    let ctx = Context::new(cfg)?;
    if cfg.users.count != 1 {
        return Err(crate::Error::invalid("IQ scatter needs a single-user scheme"));
    }
    use rayon::prelude::*;
    (0..n_realizations as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(cfg.seed, None, t, Stream::Scatter);
            let scene = ctx.draw_scene(&mut rng, cfg.noise_variance)?;
            let symbol = rng.random_range(0..ctx.constellation.order());
            let tx = transmit(&ctx, &scene, &[vec![symbol]], &mut rng)?;
            let h = scene.channels[0].realize(&scene.geometry)?;
            Ok(ScatterPoint {
                true_symbol: ctx.constellation.point(symbol),
                received: dotu(&h, &tx.x[0]) / tx.gains[0][0],
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub theta_deg: f64,
    pub value_db: f64,
}

pub fn write_spectrum_csv<W: Write>(rows: &[SpectrumRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["theta_deg", "value_db"])?;
    for r in rows {
        w.write_record([r.theta_deg.to_string(), r.value_db.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Angular power spectrum `10 log10(E|a(ϑ)^T x|² / N²)` of the transmitted
/// vectors on an inclusive grid (degrees).
pub fn run_spectrum(cfg: &SimConfig, grid_deg: &[f64]) -> Result<Vec<SpectrumRow>> {
    let ctx = Context::new(cfg)?;
    let trials = cfg.spectrum.as_ref().map_or(1000, |s| s.trials);
    let geometry: ArrayGeometry = ctx.geometry;
    let grid: Vec<f64> = grid_deg.iter().map(|d| d.to_radians()).collect();
    // Validate once up front so the per-trial closure cannot fail.
    {
        let mut rng = trial_rng(cfg.seed, None, 0, Stream::Spectrum);
        let scene = ctx.draw_scene(&mut rng, cfg.noise_variance)?;
        let syms = vec![vec![0; cfg.users.count]];
        transmit(&ctx, &scene, &syms, &mut rng)?;
    }
    let source = |t: u64| {
        let mut rng = trial_rng(cfg.seed, None, t, Stream::Spectrum);
        let scene = ctx.draw_scene(&mut rng, cfg.noise_variance).expect("scene validated");
        let m = ctx.constellation.order();
        let syms = vec![(0..cfg.users.count).map(|_| rng.random_range(0..m)).collect()];
        let tx = transmit(&ctx, &scene, &syms, &mut rng).expect("scheme validated");
        tx.x.into_iter().next().expect("one symbol time")
    };
    let spectrum = angular_spectrum(&geometry, &grid, trials, source);
    let db = spectrum_db(&spectrum, geometry.n_antennas());
    Ok(grid_deg
        .iter()
        .zip(db)
        .map(|(&theta_deg, value_db)| SpectrumRow { theta_deg, value_db })
        .collect())
}

/// `points` equally spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
snr_db = [0.0, 10.0]
trials = 200
max_errors = 0

[array]
antennas = 16
spacing = 0.125

[users]
count = 1
gain = "unit"
angles_deg = [0.0]

[constellation]
kind = "psk"
order = 8

[scheme]
precoder = "mrt"
modulator = "basic"
"#;

    fn cfg(src: &str) -> SimConfig {
        SimConfig::from_toml_str(src).unwrap()
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let c = cfg(MINIMAL);
        let a = run_ser(&c).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_ser(&c).unwrap());
        assert_eq!(a, b);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.write_csv(&mut buf_a).unwrap();
        b.write_csv(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
        let text = String::from_utf8(buf_a).unwrap();
        assert!(text.starts_with("snr_db,ser,ber,theory_ser,ci_halfwidth,trials\n"));
    }

    #[test]
    fn rates_and_accounting() {
        let curve = run_ser(&cfg(MINIMAL)).unwrap();
        for p in &curve.points {
            assert!((0.0..=1.0).contains(&p.ser) && (0.0..=1.0).contains(&p.ber));
            assert_eq!(p.trials, 200);
            assert_eq!(p.symbols, 200);
            assert!(p.theory_ser.is_some());
            assert!(p.ci_halfwidth >= 0.0);
        }
        assert!(curve.points[1].ser <= curve.points[0].ser);
    }

    #[test]
    fn unquantized_noiseless_is_error_free() {
        let src = MINIMAL
            .replace("modulator = \"basic\"", "modulator = \"none\"")
            .replace("snr_db = [0.0, 10.0]", "snr_db = [60.0]");
        let curve = run_ser(&cfg(&src)).unwrap();
        assert_eq!(curve.points[0].symbol_errors, 0);
    }

    #[test]
    fn early_stop_limits_trials() {
        let src = MINIMAL
            .replace("max_errors = 0", "max_errors = 5")
            .replace("snr_db = [0.0, 10.0]", "snr_db = [-20.0]")
            .replace("trials = 200", "trials = 10000");
        let p = &run_ser(&cfg(&src)).unwrap().points[0];
        assert!(p.symbol_errors >= 5);
        assert!(p.trials < 10000);
        assert_eq!(p.trials % 64, 0);
    }

    #[test]
    fn adding_trials_extends_prefix() {
        // With one chunk per wave, the first 64 trials are shared.
        let small = cfg(&MINIMAL.replace("trials = 200", "trials = 64"));
        let large = cfg(&MINIMAL.replace("trials = 200", "trials = 128"));
        let a = run_ser(&small).unwrap();
        let b = run_ser(&large).unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!(q.symbol_errors >= p.symbol_errors);
        }
    }

    #[test]
    fn scatter_unquantized_is_exact() {
        let src = MINIMAL.replace("modulator = \"basic\"", "modulator = \"none\"");
        let pts = run_iq_scatter(&cfg(&src), 50).unwrap();
        assert_eq!(pts.len(), 50);
        for p in pts {
            assert!((p.received - p.true_symbol).norm() < 1e-12);
        }
    }

    #[test]
    fn scatter_steered_residual_bound() {
        let n = 64.0_f64;
        let src = MINIMAL
            .replace("antennas = 16", "antennas = 64")
            .replace("precoder = \"mrt\"", "precoder = \"mrt-steered\"")
            .replace("modulator = \"basic\"", "modulator = \"steered\"")
            .replace("angles_deg = [0.0]", "angles_deg = [90.0]");
        let c = cfg(&src);
        let pts = run_iq_scatter(&c, 200).unwrap();
        for p in &pts {
            // The only residual is h_N q_N / g with |q_N| ≤ √2 and g = A N.
            let a = crate::modulator::no_overload_amplitude(std::f64::consts::PI * 0.25);
            let bound = 2f64.sqrt() / (a * n) + 1e-9;
            assert!((p.received - p.true_symbol).norm() <= bound, "{:?}", p);
        }
    }

    #[test]
    fn spectrum_unquantized_peaks_at_zero_db() {
        let src = MINIMAL
            .replace("modulator = \"basic\"", "modulator = \"none\"")
            .replace("angles_deg = [0.0]", "angles_deg = [20.0]");
        let c = cfg(&src);
        let rows = run_spectrum(&c, &[20.0, -40.0]).unwrap();
        assert!(rows[0].value_db.abs() < 1e-9);
        assert!(rows[1].value_db < -5.0);
    }

    #[test]
    fn direct_quantize_matches_first_sd_element() {
        let x = vec![C64::new(0.3, -0.2), C64::new(-0.7, 0.1)];
        assert_eq!(direct_quantize(&x)[0], crate::modulator::sd_basic(&x).output[0]);
    }

    #[test]
    fn linspace_inclusive() {
        assert_eq!(linspace(-90.0, 90.0, 3), vec![-90.0, 0.0, 90.0]);
    }
}
