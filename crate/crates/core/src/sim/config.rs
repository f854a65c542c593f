//! Experiment configuration (TOML). Angles are in degrees here and radians
//! everywhere else.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::{ArrayGeometry, Constellation, ConstellationKind};
use crate::optim::ApgParams;
use crate::precoder::Scheme;

/// A configuration problem, optionally anchored to a key and source line.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub message: String,
    /// Dotted key path such as `users.angles_deg`.
    pub key: Option<String>,
    /// 1-based line in the source text.
    pub line: Option<usize>,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            key: Some(key.into()),
            line: None,
        }
    }

    pub fn general(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            key: None,
            line: None,
        }
    }

    /// Attach the line where `key` is assigned in `source`, if it can be found.
    pub fn locate(mut self, source: &str) -> Self {
        if self.line.is_none() {
            if let Some(key) = &self.key {
                self.line = find_key_line(source, key);
            }
        }
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(key) = &self.key {
            write!(f, "{key}: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

fn find_key_line(source: &str, key: &str) -> Option<usize> {
    let (table, leaf) = match key.rsplit_once('.') {
        Some((t, l)) => (t, l),
        None => ("", key),
    };
    let mut current = String::new();
    let mut table_line = None;
    for (idx, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == key {
                table_line = Some(idx + 1);
            }
            continue;
        }
        if current != table {
            continue;
        }
        if let Some((lhs, _)) = line.split_once('=') {
            if lhs.trim() == leaf {
                return Some(idx + 1);
            }
        }
    }
    table_line
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub antennas: usize,
    /// Spacing over wavelength `d/λ`.
    pub spacing: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainModel {
    /// `|α| = 1` with uniform phase.
    Unit,
    /// `|α| = r0/r`, `r ~ U[r_min, r_max]`, uniform phase.
    PathLoss,
    /// Arbitrary channel with i.i.d. `CN(0, 1)` coefficients.
    IidGaussian,
}

fn default_min_sep() -> f64 {
    1.0
}

fn default_r0() -> f64 {
    30.0
}

fn default_r_range() -> [f64; 2] {
    [20.0, 100.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UsersConfig {
    pub count: usize,
    pub gain: GainModel,
    /// Explicit user angles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles_deg: Option<Vec<f64>>,
    /// Range for random angles, redrawn every trial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_range_deg: Option<[f64; 2]>,
    #[serde(default = "default_min_sep")]
    pub min_separation_deg: f64,
    #[serde(default = "default_r0")]
    pub reference_distance: f64,
    #[serde(default = "default_r_range")]
    pub distance_range: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstellationConfig {
    pub kind: ConstellationKind,
    pub order: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModulatorKind {
    Basic,
    Dithered,
    Steered,
    Generalized,
    /// Unquantized benchmark.
    None,
    /// Memoryless one-bit quantization of the unquantized design.
    Direct,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub precoder: Scheme,
    pub modulator: ModulatorKind,
    /// Dither level `δ` for the dithered modulator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dither: Option<f64>,
    /// Rescale generalized-MRT elements that leave their IQ box.
    #[serde(default = "default_true")]
    pub clamp: bool,
}

fn default_trials() -> usize {
    100_000
}

fn default_max_errors() -> usize {
    500
}

fn default_block() -> usize {
    1
}

fn default_noise() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub seed: u64,
    /// SNR grid `P/σ_v²` in dB.
    pub snr_db: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Stop a point once this many symbol errors have accumulated (0 = never).
    #[serde(default = "default_max_errors")]
    pub max_errors: usize,
    /// Symbol times per channel realization.
    #[serde(default = "default_block")]
    pub block_length: usize,
    #[serde(default = "default_noise")]
    pub noise_variance: f64,
    /// Reuse channel, symbol, dither and noise draws across SNR points.
    #[serde(default = "default_true")]
    pub common_random_numbers: bool,
    pub array: ArrayConfig,
    pub users: UsersConfig,
    pub constellation: ConstellationConfig,
    pub scheme: SchemeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<ApgParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scatter: Option<ScatterConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    /// `[start, stop]` of the angle grid; `points` samples inclusive.
    pub grid_deg: [f64; 2],
    pub points: usize,
    #[serde(default = "default_spectrum_trials")]
    pub trials: usize,
}

fn default_spectrum_trials() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatterConfig {
    pub realizations: usize,
}

impl SimConfig {
    /// Parse and validate; errors carry the offending line when available.
    pub fn from_toml_str(source: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(source).map_err(|e| ConfigError {
            message: e.message().to_string(),
            key: None,
            line: e.span().map(|s| line_of_offset(source, s.start)),
        })?;
        cfg.validate().map_err(|e| e.locate(source))?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn geometry(&self) -> Result<ArrayGeometry, ConfigError> {
        ArrayGeometry::new(self.array.antennas, self.array.spacing)
            .map_err(|e| ConfigError::new("array", e.to_string()))
    }

    pub fn constellation(&self) -> Result<Constellation, ConfigError> {
        Constellation::new(self.constellation.kind, self.constellation.order)
            .map_err(|e| ConfigError::new("constellation.order", e.to_string()))
    }

    pub fn solver_params(&self) -> ApgParams {
        self.solver.unwrap_or(match self.scheme.precoder {
            Scheme::SlpDual => ApgParams::dual(),
            Scheme::NullspaceZf => ApgParams::iq_norm(),
            _ => ApgParams::primal(),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.geometry()?;
        let constellation = self.constellation()?;
        if self.snr_db.is_empty() {
            return Err(ConfigError::new("snr_db", "SNR grid is empty"));
        }
        if self.snr_db.iter().any(|v| !v.is_finite()) {
            return Err(ConfigError::new("snr_db", "SNR grid must be finite"));
        }
        if self.trials == 0 {
            return Err(ConfigError::new("trials", "at least one trial is required"));
        }
        if self.block_length == 0 {
            return Err(ConfigError::new("block_length", "block length must be at least 1"));
        }
        if !(self.noise_variance > 0.0) || !self.noise_variance.is_finite() {
            return Err(ConfigError::new("noise_variance", "noise variance must be positive"));
        }

        let users = &self.users;
        let k = users.count;
        if k == 0 {
            return Err(ConfigError::new("users.count", "at least one user is required"));
        }
        if k > self.array.antennas {
            return Err(ConfigError::new("users.count", "more users than antennas"));
        }
        let angular = users.gain != GainModel::IidGaussian;
        if angular {
            match (&users.angles_deg, &users.angle_range_deg) {
                (Some(_), Some(_)) => {
                    return Err(ConfigError::new(
                        "users.angles_deg",
                        "give either angles_deg or angle_range_deg, not both",
                    ))
                }
                (None, None) => {
                    return Err(ConfigError::new(
                        "users",
                        "angular channels need angles_deg or angle_range_deg",
                    ))
                }
                (Some(a), None) => {
                    if a.is_empty() {
                        return Err(ConfigError::new("users.angles_deg", "angle list is empty"));
                    }
                    if a.len() != k {
                        return Err(ConfigError::new(
                            "users.angles_deg",
                            format!("{} angles for {k} users", a.len()),
                        ));
                    }
                    if a.iter().any(|v| !(v.abs() <= 90.0)) {
                        return Err(ConfigError::new("users.angles_deg", "angles must lie in [-90, 90]"));
                    }
                }
                (None, Some([lo, hi])) => {
                    if !(lo <= hi) || !(lo.abs() <= 90.0) || !(hi.abs() <= 90.0) {
                        return Err(ConfigError::new(
                            "users.angle_range_deg",
                            "range must satisfy -90 <= lo <= hi <= 90",
                        ));
                    }
                    let sep = users.min_separation_deg;
                    if !(sep >= 0.0) || (k > 1 && (k - 1) as f64 * sep > hi - lo) {
                        return Err(ConfigError::new(
                            "users.min_separation_deg",
                            "users cannot be placed with this separation",
                        ));
                    }
                }
            }
        }
        if users.gain == GainModel::PathLoss {
            let [lo, hi] = users.distance_range;
            if !(lo > 0.0 && lo <= hi) || !(users.reference_distance > 0.0) {
                return Err(ConfigError::new("users.distance_range", "distances must be positive"));
            }
        }

        let scheme = &self.scheme;
        let p = scheme.precoder;
        let m = scheme.modulator;
        use ModulatorKind as Mk;
        let compatible = match p {
            Scheme::Mrt => matches!(m, Mk::Basic | Mk::Dithered | Mk::None | Mk::Direct),
            Scheme::MrtSteered => matches!(m, Mk::Steered),
            Scheme::MrtGeneralized => matches!(m, Mk::Generalized | Mk::None | Mk::Direct),
            _ => matches!(m, Mk::Basic | Mk::Dithered | Mk::None | Mk::Direct),
        };
        if !compatible {
            return Err(ConfigError::new(
                "scheme.modulator",
                format!("modulator {m:?} cannot be paired with precoder {p:?}"),
            ));
        }
        if !p.is_multi_user() && k != 1 {
            return Err(ConfigError::new("users.count", "MRT schemes serve a single user"));
        }
        match p {
            Scheme::Mrt
            | Scheme::MrtSteered
            | Scheme::Zf
            | Scheme::ZfQam
            | Scheme::NullspaceZf
            | Scheme::SlpPrimal
            | Scheme::SlpDual
                if !angular =>
            {
                return Err(ConfigError::new(
                    "users.gain",
                    "this scheme needs single-path angular channels",
                ))
            }
            Scheme::MrtGeneralized if angular => {
                return Err(ConfigError::new(
                    "users.gain",
                    "generalized MRT expects arbitrary (iid-gaussian) channels",
                ))
            }
            _ => {}
        }
        let qam = constellation.kind() == ConstellationKind::Qam;
        if qam && matches!(p, Scheme::Zf | Scheme::SlpPrimal | Scheme::SlpDual) {
            return Err(ConfigError::new(
                "scheme.precoder",
                "QAM needs a block-normalized scheme (zf-qam or nullspace-zf)",
            ));
        }
        if m == Mk::Dithered {
            match scheme.dither {
                Some(d) if d >= 0.0 && d.is_finite() => {}
                _ => {
                    return Err(ConfigError::new(
                        "scheme.dither",
                        "dithered modulator needs dither >= 0",
                    ))
                }
            }
        }
        if let Some(params) = &self.solver {
            params
                .validate()
                .map_err(|e| ConfigError::new("solver", e.to_string()))?;
        }
        if let Some(s) = &self.spectrum {
            let [lo, hi] = s.grid_deg;
            if !(lo < hi) || lo < -90.0 || hi > 90.0 || s.points < 2 || s.trials == 0 {
                return Err(ConfigError::new("spectrum.grid_deg", "invalid spectrum grid"));
            }
        }
        if let Some(s) = &self.scatter {
            if s.realizations == 0 {
                return Err(ConfigError::new(
                    "scatter.realizations",
                    "need at least one realization",
                ));
            }
        }
        Ok(())
    }
}
