//! Per-trial transmit chain and the chunked Monte Carlo driver.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::config::{GainModel, ModulatorKind, SimConfig};
use super::{SerCurve, SerPoint};
use crate::analysis::{effective_snr_mrt, effective_snr_steered, effective_snr_zf, sep_bound};
use crate::channel::{
    ArrayGeometry, CanonicalChannel, Channel, Constellation, ConstellationKind, MultiUserScene, Path,
};
use crate::linalg::dotu;
use crate::modulator::{direct_quantize, sd_angle_steered, sd_basic, sd_dithered_with_rng, sd_generalized};
use crate::optim::ApgParams;
use crate::precoder::{
    mrt_angle_steered, mrt_generalized, mrt_single, mrt_weighted, slp_psk, slp_psk_weighted, PrecodeOutput, Scheme,
    SlpSolver, ZfDesign,
};
use crate::{Error, Result, C64};

/// Independent random streams of one trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Scene = 1,
    Symbols = 2,
    Dither = 3,
    Noise = 4,
    Spectrum = 5,
    Scatter = 6,
}

/// Counter-based substream: the ChaCha key is `master ‖ trial ‖ stream ‖
/// point`, with `point = 0` when draws are shared across SNR points. Adding
/// trials never changes the draws of earlier ones.
pub fn trial_rng(master: u64, point: Option<usize>, trial: u64, stream: Stream) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&master.to_le_bytes());
    key[8..16].copy_from_slice(&trial.to_le_bytes());
    key[16..24].copy_from_slice(&(stream as u64).to_le_bytes());
    let p = point.map_or(0, |p| p as u64 + 1);
    key[24..32].copy_from_slice(&p.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

/// Everything fixed for one run: validated config, geometry, constellation.
pub(crate) struct Context {
    pub cfg: SimConfig,
    pub geometry: ArrayGeometry,
    pub constellation: Constellation,
    pub params: ApgParams,
}

impl Context {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            geometry: cfg.geometry()?,
            constellation: cfg.constellation()?,
            params: cfg.solver_params(),
            cfg: cfg.clone(),
        })
    }

    pub fn point_key(&self, point: usize) -> Option<usize> {
        if self.cfg.common_random_numbers {
            None
        } else {
            Some(point)
        }
    }

    fn sample_angles<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let users = &self.cfg.users;
        if let Some(a) = &users.angles_deg {
            return Ok(a.iter().map(|d| d.to_radians()).collect());
        }
        let [lo, hi] = users.angle_range_deg.expect("validated");
        let sep = users.min_separation_deg;
        let mut angles: Vec<f64> = Vec::with_capacity(users.count);
        let mut attempts = 0usize;
        while angles.len() < users.count {
            attempts += 1;
            if attempts > 100_000 * users.count {
                return Err(Error::invalid("could not place users with the requested separation"));
            }
            let a = if lo == hi { lo } else { rng.random_range(lo..=hi) };
            if angles.iter().all(|&b: &f64| (a - b).abs() >= sep) {
                angles.push(a);
            }
        }
        Ok(angles.iter().map(|d| d.to_radians()).collect())
    }

    /// Draw the scene of one trial at transmit power `power`.
    pub fn draw_scene<R: Rng + ?Sized>(&self, rng: &mut R, power: f64) -> Result<MultiUserScene> {
        let users = &self.cfg.users;
        let n = self.geometry.n_antennas();
        let channels = match users.gain {
            GainModel::IidGaussian => (0..users.count)
                .map(|_| Channel::arbitrary((0..n).map(|_| complex_normal(rng, 1.0)).collect()))
                .collect(),
            model => {
                let angles = self.sample_angles(rng)?;
                angles
                    .into_iter()
                    .map(|angle| {
                        let mag = match model {
                            GainModel::PathLoss => {
                                let [lo, hi] = users.distance_range;
                                let r = if lo == hi { lo } else { rng.random_range(lo..=hi) };
                                users.reference_distance / r
                            }
                            _ => 1.0,
                        };
                        let phase = rng.random_range(-PI..PI);
                        Channel::single_path(C64::from_polar(mag, phase), angle)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        MultiUserScene::new(self.geometry, channels, power, self.cfg.noise_variance)
    }

    pub fn draw_symbols<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<usize>> {
        let m = self.constellation.order();
        (0..self.cfg.block_length)
            .map(|_| (0..self.cfg.users.count).map(|_| rng.random_range(0..m)).collect())
            .collect()
    }
}

/// Transmitted one-bit (or unquantized) vectors of one trial with the
/// receive gains a genie receiver would use.
pub(crate) struct Transmission {
    /// Physical-order transmit vector per symbol time.
    pub x: Vec<Vec<C64>>,
    /// Per time, per user gain `g_i` with `h_i^T x̄ = g_i s_i`.
    pub gains: Vec<Vec<f64>>,
    /// Closed-form error-probability bound per time, where one exists.
    pub theory: Vec<Option<f64>>,
    pub overloaded: usize,
    pub unconverged: usize,
}

fn single_path(scene: &MultiUserScene) -> Result<Path> {
    match &scene.channels[0] {
        Channel::SinglePath(p) => Ok(*p),
        _ => Err(Error::invalid("scheme needs a single-path channel")),
    }
}

fn slp_solver(s: Scheme) -> SlpSolver {
    if s == Scheme::SlpDual {
        SlpSolver::Dual
    } else {
        SlpSolver::Primal
    }
}

pub(crate) fn transmit(
    ctx: &Context,
    scene: &MultiUserScene,
    symbols: &[Vec<usize>],
    dither_rng: &mut ChaCha8Rng,
) -> Result<Transmission> {
    let cfg = &ctx.cfg;
    let con = &ctx.constellation;
    let modk = cfg.scheme.modulator;
    let n = scene.n_antennas();
    let power = scene.total_power;
    let nv = scene.noise_variance;
    let sym: Vec<Vec<C64>> = symbols
        .iter()
        .map(|t| t.iter().map(|&i| con.point(i)).collect())
        .collect();
    let quantized_design = matches!(modk, ModulatorKind::Basic | ModulatorKind::Dithered);
    let qam = con.kind() == ConstellationKind::Qam;

    // Precode in the order the modulator expects, and remember how to map
    // back to physical antennas.
    let mut canonical: Option<CanonicalChannel> = None;
    let mut phi = None;
    let mut theory: Vec<Option<f64>> = vec![None; sym.len()];
    let outputs: Vec<PrecodeOutput> = match cfg.scheme.precoder {
        Scheme::Mrt => {
            let p = single_path(scene)?;
            let snr = match modk {
                ModulatorKind::Basic => Some(effective_snr_mrt(
                    p.gain,
                    p.angle,
                    power,
                    nv,
                    scene.geometry.spacing(),
                    n,
                )?),
                ModulatorKind::None => Some(p.gain.norm_sqr() * power * n as f64 / (2.0 * nv)),
                _ => None,
            };
            if let Some(snr) = snr {
                theory.fill(Some(sep_bound(snr, con)));
            }
            sym.iter()
                .map(|s| mrt_single(&p, &scene.geometry, s[0]))
                .collect::<Result<_>>()?
        }
        Scheme::MrtSteered => {
            let p = single_path(scene)?;
            let outs = sym
                .iter()
                .map(|s| mrt_angle_steered(&p, &scene.geometry, s[0]).map(|(o, _)| o))
                .collect::<Result<Vec<_>>>()?;
            phi = outs[0].metadata.phi;
            let amp = outs[0].bound.at(0);
            theory.fill(Some(sep_bound(effective_snr_steered(amp, p.gain, power, nv, n), con)));
            outs
        }
        Scheme::MrtGeneralized => {
            let h = match &scene.channels[0] {
                Channel::Arbitrary(h) => h.clone(),
                other => other.realize(&scene.geometry)?,
            };
            let can = CanonicalChannel::new(&h)?;
            let outs = sym
                .iter()
                .map(|s| match modk {
                    ModulatorKind::Generalized => mrt_generalized(&can.coefficients, s[0], cfg.scheme.clamp),
                    _ => mrt_weighted(&can.coefficients, s[0], &vec![1.0; n], false),
                })
                .collect::<Result<Vec<_>>>()?;
            if modk != ModulatorKind::Direct {
                // Only thermal noise survives (the last-element residual is ignored).
                for (th, o) in theory.iter_mut().zip(&outs) {
                    let g = o.expected_gains[0];
                    *th = Some(sep_bound(power / (2.0 * n as f64) * g * g / nv, con));
                }
            }
            canonical = Some(can);
            outs
        }
        Scheme::Zf | Scheme::ZfQam | Scheme::NullspaceZf => {
            let design = if quantized_design {
                ZfDesign::new(scene)?
            } else {
                ZfDesign::with_weights(scene.channel_matrix()?, vec![1.0; scene.n_users()])?
            };
            let outs = match (cfg.scheme.precoder, quantized_design) {
                (Scheme::NullspaceZf, _) => design.precode_nullspace(&sym, &ctx.params)?,
                (Scheme::ZfQam, true) => design.precode_block(&sym)?,
                (Scheme::Zf, true) => sym.iter().map(|s| design.precode(s)).collect::<Result<_>>()?,
                (_, false) => {
                    let es = con.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / con.order() as f64;
                    sym.iter()
                        .map(|s| design.precode_average_power(s, es))
                        .collect::<Result<_>>()?
                }
                _ => unreachable!("scheme set above"),
            };
            if modk == ModulatorKind::Basic
                || (modk == ModulatorKind::None && cfg.scheme.precoder == Scheme::NullspaceZf)
            {
                for (th, o) in theory.iter_mut().zip(&outs) {
                    let gamma = o.metadata.gamma.expect("ZF sets gamma");
                    let snr = if modk == ModulatorKind::None {
                        power / (2.0 * n as f64) * gamma * gamma / nv
                    } else {
                        effective_snr_zf(power, n, gamma)
                    };
                    *th = Some(sep_bound(snr, con));
                }
            }
            outs
        }
        Scheme::SlpPrimal | Scheme::SlpDual => {
            let solver = slp_solver(cfg.scheme.precoder);
            if qam {
                return Err(Error::invalid("symbol-level precoding supports PSK only"));
            }
            if quantized_design {
                sym.iter()
                    .map(|s| slp_psk(scene, s, con.order(), solver, &ctx.params))
                    .collect::<Result<_>>()?
            } else {
                let h = scene.channel_matrix()?;
                let sigma = vec![nv.sqrt(); scene.n_users()];
                sym.iter()
                    .map(|s| slp_psk_weighted(&h, s, con.order(), &sigma, solver, &ctx.params))
                    .collect::<Result<_>>()?
            }
        }
    };

    let mut overloaded = 0;
    let mut unconverged = 0;
    let mut xs = Vec::with_capacity(outputs.len());
    let mut gains = Vec::with_capacity(outputs.len());
    for out in &outputs {
        if !out.converged() {
            unconverged += 1;
        }
        let x = match modk {
            ModulatorKind::Basic => {
                let r = sd_basic(&out.xbar);
                overloaded += r.overloaded as usize;
                r.output
            }
            ModulatorKind::Dithered => {
                let r = sd_dithered_with_rng(&out.xbar, cfg.scheme.dither.unwrap_or(0.0), dither_rng);
                overloaded += r.overloaded as usize;
                r.output
            }
            ModulatorKind::Steered => {
                let r = sd_angle_steered(&out.xbar, phi.unwrap_or(0.0));
                overloaded += r.overloaded as usize;
                r.output
            }
            ModulatorKind::Generalized => {
                let can = canonical.as_ref().expect("generalized MRT sets the channel order");
                let r = sd_generalized(&out.xbar, &can.coefficients)?;
                overloaded += r.overloaded as usize;
                r.output
            }
            ModulatorKind::None => out.xbar.clone(),
            ModulatorKind::Direct => direct_quantize(&out.xbar),
        };
        let x = match &canonical {
            Some(can) => can.to_physical(&x),
            None => x,
        };
        xs.push(x);
        gains.push(out.expected_gains.clone());
    }
    Ok(Transmission {
        x: xs,
        gains,
        theory,
        overloaded,
        unconverged,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct Tally {
    pub trials: usize,
    pub symbols: usize,
    pub symbol_errors: usize,
    pub bits: usize,
    pub bit_errors: usize,
    pub theory_sum: f64,
    pub theory_count: usize,
    pub overloaded: usize,
    pub vectors: usize,
    pub unconverged: usize,
}

impl Tally {
    fn add(&mut self, o: &Tally) {
        self.trials += o.trials;
        self.symbols += o.symbols;
        self.symbol_errors += o.symbol_errors;
        self.bits += o.bits;
        self.bit_errors += o.bit_errors;
        self.theory_sum += o.theory_sum;
        self.theory_count += o.theory_count;
        self.overloaded += o.overloaded;
        self.vectors += o.vectors;
        self.unconverged += o.unconverged;
    }
}

pub(crate) fn run_trial(ctx: &Context, point: usize, power: f64, trial: u64) -> Result<Tally> {
    let seed = ctx.cfg.seed;
    let key = ctx.point_key(point);
    let scene = ctx.draw_scene(&mut trial_rng(seed, key, trial, Stream::Scene), power)?;
    let symbols = ctx.draw_symbols(&mut trial_rng(seed, key, trial, Stream::Symbols));
    let mut dither_rng = trial_rng(seed, key, trial, Stream::Dither);
    let mut noise_rng = trial_rng(seed, key, trial, Stream::Noise);
    let tx = transmit(ctx, &scene, &symbols, &mut dither_rng)?;

    let h = scene.channel_matrix()?;
    let amp = scene.amplitude();
    let con = &ctx.constellation;
    let psk = con.kind() == ConstellationKind::Psk;
    let mut tally = Tally {
        trials: 1,
        vectors: tx.x.len(),
        overloaded: tx.overloaded,
        unconverged: tx.unconverged,
        ..Default::default()
    };
    for (t, (x, g)) in tx.x.iter().zip(&tx.gains).enumerate() {
        for (i, &sent) in symbols[t].iter().enumerate() {
            let row: Vec<C64> = h.row(i).iter().copied().collect();
            let y = dotu(&row, x) * amp + complex_normal(&mut noise_rng, scene.noise_variance);
            let scale = if psk { 1.0 } else { amp * g[i] };
            let decided = con.decide(y, scale.max(f64::MIN_POSITIVE));
            tally.symbols += 1;
            tally.bits += con.bits_per_symbol() as usize;
            if decided != sent {
                tally.symbol_errors += 1;
                tally.bit_errors += con.bit_errors(sent, decided) as usize;
            }
        }
        if let Some(th) = tx.theory[t] {
            tally.theory_sum += th * symbols[t].len() as f64;
            tally.theory_count += symbols[t].len();
        }
    }
    Ok(tally)
}

/// Trials per parallel work item.
const CHUNK: usize = 8;
/// Work items per wave; the early-stop test runs between waves.
const WAVE_CHUNKS: usize = 8;

pub(crate) fn run_point(ctx: &Context, point: usize, snr_db: f64) -> Result<SerPoint> {
    let power = 10f64.powf(snr_db / 10.0) * ctx.cfg.noise_variance;
    let trials = ctx.cfg.trials;
    let mut total = Tally::default();
    let mut next = 0usize;
    while next < trials && (ctx.cfg.max_errors == 0 || total.symbol_errors < ctx.cfg.max_errors) {
        let end = (next + CHUNK * WAVE_CHUNKS).min(trials);
        let starts: Vec<usize> = (next..end).step_by(CHUNK).collect();
        let partial = starts
            .par_iter()
            .map(|&s| {
                let mut acc = Tally::default();
                for t in s..(s + CHUNK).min(end) {
                    acc.add(&run_trial(ctx, point, power, t as u64)?);
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        for p in &partial {
            total.add(p);
        }
        next = end;
    }
    Ok(SerPoint::from_tally(snr_db, &total))
}

/// Simulate symbol and bit error rates over the configured SNR grid.
pub fn run_ser(cfg: &SimConfig) -> Result<SerCurve> {
    let ctx = Context::new(cfg)?;
    let points = cfg
        .snr_db
        .iter()
        .enumerate()
        .map(|(i, &snr)| {
            let p = run_point(&ctx, i, snr)?;
            log::info!(
                "snr {snr:>6.2} dB: ser {:.3e} ber {:.3e} over {} trials",
                p.ser,
                p.ber,
                p.trials
            );
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SerCurve { points })
}
