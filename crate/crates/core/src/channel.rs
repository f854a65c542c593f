//! Uniform linear arrays, downlink channel models, symbol constellations and
//! the receiver's symbol decision.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

const ANGLE_SLACK: f64 = 1e-12;

/// Uniform linear array. Only the spacing-to-wavelength ratio matters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    n_antennas: usize,
    spacing: f64,
}

impl ArrayGeometry {
    pub fn new(n_antennas: usize, spacing_over_wavelength: f64) -> Result<Self> {
        if n_antennas == 0 {
            return Err(Error::invalid("array needs at least one antenna"));
        }
        if !(spacing_over_wavelength > 0.0 && spacing_over_wavelength <= 0.5) {
            return Err(Error::invalid(format!(
                "antenna spacing d/lambda = {spacing_over_wavelength} outside (0, 0.5]"
            )));
        }
        Ok(Self {
            n_antennas,
            spacing: spacing_over_wavelength,
        })
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Inter-element phase progression `2π (d/λ) sin θ` of a plane wave at `angle`.
    pub fn spatial_frequency(&self, angle: f64) -> f64 {
        2.0 * PI * self.spacing * angle.sin()
    }
}

/// Array response `a(θ)`: element `n` (0-based) is `exp(-j n 2π (d/λ) sin θ)`.
pub fn array_response(geometry: &ArrayGeometry, angle: f64) -> Vec<C64> {
    let step = geometry.spatial_frequency(angle);
    (0..geometry.n_antennas)
        .map(|n| C64::from_polar(1.0, -(n as f64) * step))
        .collect()
}

pub(crate) fn check_angle(angle: f64) -> Result<()> {
    if !angle.is_finite() || angle.abs() > FRAC_PI_2 + ANGLE_SLACK {
        return Err(Error::invalid(format!("angle {angle} rad outside [-pi/2, pi/2]")));
    }
    Ok(())
}

/// One propagation path: complex gain and angle of departure in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub gain: C64,
    pub angle: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Channel {
    SinglePath(Path),
    MultiPath(Vec<Path>),
    Arbitrary(Vec<C64>),
}

impl Channel {
    pub fn single_path(gain: C64, angle: f64) -> Result<Self> {
        check_angle(angle)?;
        Ok(Channel::SinglePath(Path { gain, angle }))
    }

    pub fn multi_path(paths: Vec<Path>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::invalid("multi-path channel needs at least one path"));
        }
        for p in &paths {
            check_angle(p.angle)?;
        }
        Ok(Channel::MultiPath(paths))
    }

    pub fn arbitrary(coefficients: Vec<C64>) -> Self {
        Channel::Arbitrary(coefficients)
    }

    /// The channel vector `h` seen by this user.
    pub fn realize(&self, geometry: &ArrayGeometry) -> Result<Vec<C64>> {
        let n = geometry.n_antennas();
        match self {
            Channel::SinglePath(p) => Ok(array_response(geometry, p.angle)
                .into_iter()
                .map(|a| p.gain * a)
                .collect()),
            Channel::MultiPath(paths) => {
                let mut h = vec![C64::new(0.0, 0.0); n];
                for p in paths {
                    for (hn, a) in h.iter_mut().zip(array_response(geometry, p.angle)) {
                        *hn += p.gain * a;
                    }
                }
                Ok(h)
            }
            Channel::Arbitrary(h) => {
                if h.len() != n {
                    return Err(Error::LengthMismatch {
                        expected: n,
                        got: h.len(),
                    });
                }
                Ok(h.clone())
            }
        }
    }
}

/// Channel vector reindexed so that `0 < |h_1| <= ... <= |h_N|`.
///
/// `permutation[k]` is the physical antenna index of canonical element `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalChannel {
    pub coefficients: Vec<C64>,
    pub permutation: Vec<usize>,
}

impl CanonicalChannel {
    pub fn new(h: &[C64]) -> Result<Self> {
        if h.is_empty() {
            return Err(Error::invalid("empty channel vector"));
        }
        if let Some(index) = h.iter().position(|c| c.norm() == 0.0) {
            return Err(Error::ZeroCoefficient { index });
        }
        let mut permutation: Vec<usize> = (0..h.len()).collect();
        permutation.sort_by(|&a, &b| h[a].norm().total_cmp(&h[b].norm()));
        let coefficients = permutation.iter().map(|&p| h[p]).collect();
        Ok(Self {
            coefficients,
            permutation,
        })
    }

    /// Map a vector indexed in canonical order back to physical antenna order.
    pub fn to_physical(&self, canonical: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); canonical.len()];
        for (k, &p) in self.permutation.iter().enumerate() {
            out[p] = canonical[k];
        }
        out
    }

    pub fn to_canonical(&self, physical: &[C64]) -> Vec<C64> {
        self.permutation.iter().map(|&p| physical[p]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstellationKind {
    Psk,
    Qam,
}

/// M-PSK or square M-QAM normalized to unit peak amplitude.
///
/// PSK points sit at `exp(j 2πk/M)`. QAM point `k = i_re * m + i_im` has
/// coordinates `(2 i - (m - 1)) / (√2 (m - 1))` on each rail with `m = √M`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constellation {
    kind: ConstellationKind,
    order: usize,
    points: Vec<C64>,
    labels: Vec<u32>,
    bits_per_symbol: u32,
}

fn gray(i: usize) -> u32 {
    (i ^ (i >> 1)) as u32
}

impl Constellation {
    pub fn new(kind: ConstellationKind, order: usize) -> Result<Self> {
        match kind {
            ConstellationKind::Psk => Self::psk(order),
            ConstellationKind::Qam => Self::qam(order),
        }
    }

    pub fn psk(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::invalid(format!("PSK order {order} < 2")));
        }
        let points = (0..order)
            .map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / order as f64))
            .collect();
        let labels = (0..order).map(gray).collect();
        Ok(Self {
            kind: ConstellationKind::Psk,
            order,
            points,
            labels,
            bits_per_symbol: usize::BITS - (order - 1).leading_zeros(),
        })
    }

    pub fn qam(order: usize) -> Result<Self> {
        let side = (order as f64).sqrt().round() as usize;
        if order < 4 || side * side != order || !side.is_power_of_two() {
            return Err(Error::invalid(format!("QAM order {order} is not a power of 4")));
        }
        let half_bits = side.trailing_zeros();
        let scale = qam_scale(side);
        let mut points = Vec::with_capacity(order);
        let mut labels = Vec::with_capacity(order);
        for i_re in 0..side {
            for i_im in 0..side {
                points.push(C64::new(qam_level(i_re, side) * scale, qam_level(i_im, side) * scale));
                labels.push((gray(i_re) << half_bits) | gray(i_im));
            }
        }
        Ok(Self {
            kind: ConstellationKind::Qam,
            order,
            points,
            labels,
            bits_per_symbol: 2 * half_bits,
        })
    }

    pub fn kind(&self) -> ConstellationKind {
        self.kind
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn point(&self, index: usize) -> C64 {
        self.points[index]
    }

    pub fn label(&self, index: usize) -> u32 {
        self.labels[index]
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.bits_per_symbol
    }

    /// Number of differing label bits between two symbol indices.
    pub fn bit_errors(&self, sent: usize, decided: usize) -> u32 {
        (self.labels[sent] ^ self.labels[decided]).count_ones()
    }

    /// Nearest constellation point to `y / scale`. PSK decisions use the
    /// phase only, so `scale` is irrelevant there.
    pub fn decide(&self, y: C64, scale: f64) -> usize {
        match self.kind {
            ConstellationKind::Psk => {
                let m = self.order as f64;
                let sector = (y.arg() * m / (2.0 * PI)).round() as i64;
                sector.rem_euclid(self.order as i64) as usize
            }
            ConstellationKind::Qam => {
                let side = (self.order as f64).sqrt().round() as usize;
                let z = y / (scale * qam_scale(side));
                let rail = |v: f64| -> usize {
                    let idx = ((v + (side - 1) as f64) / 2.0).round();
                    idx.clamp(0.0, (side - 1) as f64) as usize
                };
                rail(z.re) * side + rail(z.im)
            }
        }
    }
}

fn qam_level(i: usize, side: usize) -> f64 {
    2.0 * i as f64 - (side - 1) as f64
}

fn qam_scale(side: usize) -> f64 {
    1.0 / (std::f64::consts::SQRT_2 * (side - 1) as f64)
}

/// `K` users served by an `N`-antenna array.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiUserScene {
    pub geometry: ArrayGeometry,
    pub channels: Vec<Channel>,
    pub total_power: f64,
    pub noise_variance: f64,
}

impl MultiUserScene {
    pub fn new(geometry: ArrayGeometry, channels: Vec<Channel>, total_power: f64, noise_variance: f64) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("scene needs at least one user"));
        }
        if channels.len() > geometry.n_antennas() {
            return Err(Error::invalid(format!(
                "{} users exceed {} antennas",
                channels.len(),
                geometry.n_antennas()
            )));
        }
        if !(total_power > 0.0) || !(noise_variance >= 0.0) {
            return Err(Error::invalid("power must be positive and noise variance nonnegative"));
        }
        Ok(Self {
            geometry,
            channels,
            total_power,
            noise_variance,
        })
    }

    pub fn n_users(&self) -> usize {
        self.channels.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.geometry.n_antennas()
    }

    /// Rows are `h_i^T`.
    pub fn channel_matrix(&self) -> Result<DMatrix<C64>> {
        let n = self.n_antennas();
        let rows = self
            .channels
            .iter()
            .map(|c| c.realize(&self.geometry))
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
    }

    /// Receive amplitude factor `sqrt(P / 2N)`.
    pub fn amplitude(&self) -> f64 {
        (self.total_power / (2.0 * self.n_antennas() as f64)).sqrt()
    }
}
