//! C ABI over `sdprecode`.
//!
//! Conventions:
//! - complex vectors are arrays of [`SdpComplex`] with an explicit length;
//! - every fallible call returns an [`SdpStatus`], and on failure the message
//!   is available from [`sdp_last_error`] on the same thread until the next
//!   failing call;
//! - scenes and error-rate curves are opaque handles released with their
//!   `_free` function (passing NULL is allowed);
//! - panics are caught at the boundary and reported as `SDP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use num_complex::Complex64;
use sdprecode::analysis::sep_bound;
use sdprecode::channel::{ArrayGeometry, Channel, Constellation, ConstellationKind, MultiUserScene};
use sdprecode::modulator::{self, DitherSpec, ModulationResult};
use sdprecode::optim::ApgParams;
use sdprecode::precoder::{slp_psk, zf_precode, SlpSolver};
use sdprecode::sim::{run_ser, SerCurve, SimConfig};
use sdprecode::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SdpComplex {
    pub re: f64,
    pub im: f64,
}

impl From<SdpComplex> for Complex64 {
    fn from(c: SdpComplex) -> Self {
        Complex64::new(c.re, c.im)
    }
}

impl From<Complex64> for SdpComplex {
    fn from(c: Complex64) -> Self {
        SdpComplex { re: c.re, im: c.im }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    LengthMismatch = 3,
    ZeroCoefficient = 4,
    NotCanonical = 5,
    RankDeficient = 6,
    ZeroNormalization = 7,
    Config = 8,
    Io = 9,
    Unconverged = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdpConstellation {
    Psk = 0,
    Qam = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdpSlpSolver {
    Primal = 0,
    Dual = 1,
}

/// Opaque multi-user scene.
pub struct SdpScene {
    inner: MultiUserScene,
}

/// Opaque simulated error-rate curve.
pub struct SdpSerCurve {
    inner: SerCurve,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SdpStatus {
    match e {
        Error::InvalidArgument(_) => SdpStatus::InvalidArgument,
        Error::LengthMismatch { .. } => SdpStatus::LengthMismatch,
        Error::ZeroCoefficient { .. } => SdpStatus::ZeroCoefficient,
        Error::NotCanonical { .. } => SdpStatus::NotCanonical,
        Error::RankDeficient => SdpStatus::RankDeficient,
        Error::ZeroNormalization => SdpStatus::ZeroNormalization,
        Error::Config(_) => SdpStatus::Config,
        Error::Io(_) | Error::Csv(_) => SdpStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
    Status(SdpStatus, String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SdpStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is NULL"));
            SdpStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SdpStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(ptr: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a, T>(ptr: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

unsafe fn complex_vec(ptr: *const SdpComplex, len: usize, what: &'static str) -> Result<Vec<Complex64>, Fail> {
    Ok(input(ptr, len, what)?.iter().map(|&c| c.into()).collect())
}

unsafe fn write_complex(dst: *mut SdpComplex, src: &[Complex64], what: &'static str) -> Result<(), Fail> {
    let out = output(dst, src.len(), what)?;
    for (o, &v) in out.iter_mut().zip(src) {
        *o = v.into();
    }
    Ok(())
}

unsafe fn store<T>(ptr: *mut T, v: T) {
    if !ptr.is_null() {
        *ptr = v;
    }
}

unsafe fn emit_modulation(r: &ModulationResult, out: *mut SdpComplex, overloaded: *mut bool) -> Result<(), Fail> {
    write_complex(out, &r.output, "out")?;
    store(overloaded, r.overloaded);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sdp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sdp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Basic spatial sigma-delta modulator. `out` receives `n` one-bit samples.
///
/// # Safety
/// `xbar` and `out` must point to `n` elements; `overloaded` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn sdp_sd_basic(
    xbar: *const SdpComplex,
    n: usize,
    out: *mut SdpComplex,
    overloaded: *mut bool,
) -> SdpStatus {
    guard(|| {
        let x = complex_vec(xbar, n, "xbar")?;
        emit_modulation(&modulator::sd_basic(&x), out, overloaded)
    })
}

/// Basic modulator with uniform dither of half-width `level`, seeded by `seed`.
///
/// # Safety
/// Same as [`sdp_sd_basic`].
#[no_mangle]
pub unsafe extern "C" fn sdp_sd_dithered(
    xbar: *const SdpComplex,
    n: usize,
    level: f64,
    seed: u64,
    out: *mut SdpComplex,
    overloaded: *mut bool,
) -> SdpStatus {
    guard(|| {
        let x = complex_vec(xbar, n, "xbar")?;
        let spec = DitherSpec::new(level, seed)?;
        emit_modulation(&modulator::sd_dithered(&x, spec), out, overloaded)
    })
}

/// Angle-steered modulator with feedback rotation `phi` (radians).
///
/// # Safety
/// Same as [`sdp_sd_basic`].
#[no_mangle]
pub unsafe extern "C" fn sdp_sd_steered(
    xbar: *const SdpComplex,
    n: usize,
    phi: f64,
    out: *mut SdpComplex,
    overloaded: *mut bool,
) -> SdpStatus {
    guard(|| {
        let x = complex_vec(xbar, n, "xbar")?;
        emit_modulation(&modulator::sd_angle_steered(&x, phi), out, overloaded)
    })
}

/// Generalized modulator for a canonical channel `h` (nonzero entries sorted
/// by nondecreasing magnitude).
///
/// # Safety
/// `xbar`, `h` and `out` must point to `n` elements; `overloaded` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn sdp_sd_generalized(
    xbar: *const SdpComplex,
    h: *const SdpComplex,
    n: usize,
    out: *mut SdpComplex,
    overloaded: *mut bool,
) -> SdpStatus {
    guard(|| {
        let x = complex_vec(xbar, n, "xbar")?;
        let h = complex_vec(h, n, "h")?;
        emit_modulation(&modulator::sd_generalized(&x, &h)?, out, overloaded)
    })
}

/// No-overload input amplitude of the angle-steered modulator.
#[no_mangle]
pub extern "C" fn sdp_no_overload_amplitude(phi: f64) -> f64 {
    modulator::no_overload_amplitude(phi)
}

/// Symbol error probability bound for an effective SNR (linear).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdp_sep_bound(snr_eff: f64, kind: SdpConstellation, order: usize, out: *mut f64) -> SdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let kind = match kind {
            SdpConstellation::Psk => ConstellationKind::Psk,
            SdpConstellation::Qam => ConstellationKind::Qam,
        };
        let c = Constellation::new(kind, order)?;
        *out = sep_bound(snr_eff, &c);
        Ok(())
    })
}

/// Scene of `k` single-path users on an `n_antennas` ULA with spacing
/// `spacing` (in wavelengths). `angles` are in radians.
///
/// # Safety
/// `gains` and `angles` must point to `k` elements; `scene` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sdp_scene_new(
    n_antennas: usize,
    spacing: f64,
    k: usize,
    gains: *const SdpComplex,
    angles: *const f64,
    total_power: f64,
    noise_variance: f64,
    scene: *mut *mut SdpScene,
) -> SdpStatus {
    guard(|| {
        if scene.is_null() {
            return Err(Fail::Null("scene"));
        }
        *scene = std::ptr::null_mut();
        let g = complex_vec(gains, k, "gains")?;
        let a = input(angles, k, "angles")?;
        let geometry = ArrayGeometry::new(n_antennas, spacing)?;
        let channels = g
            .iter()
            .zip(a)
            .map(|(&g, &a)| Channel::single_path(g, a))
            .collect::<Result<Vec<_>, _>>()?;
        let inner = MultiUserScene::new(geometry, channels, total_power, noise_variance)?;
        *scene = Box::into_raw(Box::new(SdpScene { inner }));
        Ok(())
    })
}

/// Scene with arbitrary channel rows: `h` is `k × n_antennas`, row-major.
///
/// # Safety
/// `h` must point to `k * n_antennas` elements; `scene` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sdp_scene_new_arbitrary(
    n_antennas: usize,
    spacing: f64,
    k: usize,
    h: *const SdpComplex,
    total_power: f64,
    noise_variance: f64,
    scene: *mut *mut SdpScene,
) -> SdpStatus {
    guard(|| {
        if scene.is_null() {
            return Err(Fail::Null("scene"));
        }
        *scene = std::ptr::null_mut();
        let len = k
            .checked_mul(n_antennas)
            .ok_or_else(|| Fail::Status(SdpStatus::InvalidArgument, "scene too large".into()))?;
        let h = complex_vec(h, len, "h")?;
        let geometry = ArrayGeometry::new(n_antennas, spacing)?;
        let channels = h
            .chunks(n_antennas.max(1))
            .map(|r| Channel::arbitrary(r.to_vec()))
            .collect();
        let inner = MultiUserScene::new(geometry, channels, total_power, noise_variance)?;
        *scene = Box::into_raw(Box::new(SdpScene { inner }));
        Ok(())
    })
}

/// # Safety
/// `scene` must come from `sdp_scene_new*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sdp_scene_free(scene: *mut SdpScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// # Safety
/// `scene` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sdp_scene_users(scene: *const SdpScene) -> usize {
    scene.as_ref().map_or(0, |s| s.inner.n_users())
}

/// # Safety
/// `scene` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sdp_scene_antennas(scene: *const SdpScene) -> usize {
    scene.as_ref().map_or(0, |s| s.inner.n_antennas())
}

/// Zero-forcing precoder input for symbols `s` (length = users). Writes the
/// `n_antennas` unquantized entries to `xbar` and the normalization to `gamma`.
///
/// # Safety
/// `s` must hold `k` elements, `xbar` `n` elements; `gamma` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn sdp_zf_precode(
    scene: *const SdpScene,
    s: *const SdpComplex,
    k: usize,
    xbar: *mut SdpComplex,
    n: usize,
    gamma: *mut f64,
) -> SdpStatus {
    guard(|| {
        let scene = &scene.as_ref().ok_or(Fail::Null("scene"))?.inner;
        check_dims(scene, k, n)?;
        let s = complex_vec(s, k, "s")?;
        let out = zf_precode(scene, &s)?;
        write_complex(xbar, &out.xbar, "xbar")?;
        store(gamma, out.metadata.gamma.unwrap_or(f64::NAN));
        Ok(())
    })
}

/// Symbol-level precoding for `m`-PSK with default solver settings.
/// Returns `SDP_STATUS_UNCONVERGED` (with outputs written) when the solver
/// hits its iteration cap.
///
/// # Safety
/// `s` must hold `k` elements, `xbar` `n` elements; `objective` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn sdp_slp_precode(
    scene: *const SdpScene,
    s: *const SdpComplex,
    k: usize,
    m: usize,
    solver: SdpSlpSolver,
    xbar: *mut SdpComplex,
    n: usize,
    objective: *mut f64,
) -> SdpStatus {
    guard(|| {
        let scene = &scene.as_ref().ok_or(Fail::Null("scene"))?.inner;
        check_dims(scene, k, n)?;
        let s = complex_vec(s, k, "s")?;
        let (solver, params) = match solver {
            SdpSlpSolver::Primal => (SlpSolver::Primal, ApgParams::primal()),
            SdpSlpSolver::Dual => (SlpSolver::Dual, ApgParams::dual()),
        };
        let out = slp_psk(scene, &s, m, solver, &params)?;
        write_complex(xbar, &out.xbar, "xbar")?;
        let report = out.metadata.solver.as_ref();
        store(objective, report.map_or(f64::NAN, |r| r.objective));
        if out.converged() {
            Ok(())
        } else {
            Err(Fail::Status(
                SdpStatus::Unconverged,
                "solver reached its iteration cap".into(),
            ))
        }
    })
}

fn check_dims(scene: &MultiUserScene, k: usize, n: usize) -> Result<(), Fail> {
    if k != scene.n_users() {
        return Err(Error::LengthMismatch {
            expected: scene.n_users(),
            got: k,
        }
        .into());
    }
    if n != scene.n_antennas() {
        return Err(Error::LengthMismatch {
            expected: scene.n_antennas(),
            got: n,
        }
        .into());
    }
    Ok(())
}

/// Run an error-rate simulation described by a TOML document. A run whose
/// solver hit its iteration cap still yields a curve and returns
/// `SDP_STATUS_UNCONVERGED`.
///
/// # Safety
/// `config_toml` must be a NUL-terminated UTF-8 string; `curve` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sdp_ser_run(config_toml: *const c_char, curve: *mut *mut SdpSerCurve) -> SdpStatus {
    guard(|| {
        if curve.is_null() {
            return Err(Fail::Null("curve"));
        }
        *curve = std::ptr::null_mut();
        if config_toml.is_null() {
            return Err(Fail::Null("config_toml"));
        }
        let text = CStr::from_ptr(config_toml)
            .to_str()
            .map_err(|_| Fail::Status(SdpStatus::Config, "config is not valid UTF-8".into()))?;
        let cfg = SimConfig::from_toml_str(text).map_err(Error::from)?;
        let inner = run_ser(&cfg)?;
        let unconverged = inner.unconverged();
        *curve = Box::into_raw(Box::new(SdpSerCurve { inner }));
        if unconverged > 0 {
            return Err(Fail::Status(
                SdpStatus::Unconverged,
                format!("{unconverged} solver calls reached their iteration cap"),
            ));
        }
        Ok(())
    })
}

/// # Safety
/// `curve` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sdp_ser_len(curve: *const SdpSerCurve) -> usize {
    curve.as_ref().map_or(0, |c| c.inner.points.len())
}

/// Point `i` of the curve. `theory_ser` is NaN when no closed form applies.
///
/// # Safety
/// `curve` must be a live handle; output pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn sdp_ser_point(
    curve: *const SdpSerCurve,
    i: usize,
    snr_db: *mut f64,
    ser: *mut f64,
    ber: *mut f64,
    theory_ser: *mut f64,
) -> SdpStatus {
    guard(|| {
        let c = &curve.as_ref().ok_or(Fail::Null("curve"))?.inner;
        let p = c.points.get(i).ok_or_else(|| {
            Fail::Status(
                SdpStatus::InvalidArgument,
                format!("point {i} out of range ({} points)", c.points.len()),
            )
        })?;
        store(snr_db, p.snr_db);
        store(ser, p.ser);
        store(ber, p.ber);
        store(theory_ser, p.theory_ser.unwrap_or(f64::NAN));
        Ok(())
    })
}

/// # Safety
/// `curve` must come from [`sdp_ser_run`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sdp_ser_free(curve: *mut SdpSerCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}
