//! Geometric multipath channel: image-source path tracing and CSI synthesis.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::geometry::Vec2;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Uniform linear array at the base station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub n_antennas: usize,
    /// Element spacing in meters.
    pub element_spacing: f64,
    /// Wavelength in meters.
    pub wavelength: f64,
    /// Carrier frequency in hertz, kept for reporting.
    pub carrier_frequency: f64,
}

impl ArrayConfig {
    /// Half-wavelength ULA at the given carrier.
    pub fn half_wavelength(n_antennas: usize, carrier_frequency: f64) -> Self {
        let wavelength = SPEED_OF_LIGHT / carrier_frequency;
        Self {
            n_antennas,
            element_spacing: wavelength / 2.0,
            wavelength,
            carrier_frequency,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_antennas == 0 {
            return Err(Error::Config("array needs at least one antenna".into()));
        }
        if !(self.element_spacing > 0.0 && self.wavelength > 0.0) {
            return Err(Error::Config(
                "element spacing and wavelength must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self::half_wavelength(16, 3.5e9)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmConfig {
    pub n_subcarriers: usize,
    /// Hertz.
    pub bandwidth: f64,
    /// Seconds; always `1 / bandwidth`.
    pub sample_duration: f64,
}

impl OfdmConfig {
    pub fn new(n_subcarriers: usize, bandwidth: f64) -> Self {
        Self {
            n_subcarriers,
            bandwidth,
            sample_duration: 1.0 / bandwidth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers == 0 {
            return Err(Error::Config("OFDM needs at least one subcarrier".into()));
        }
        if !(self.sample_duration > 0.0 && self.sample_duration.is_finite()) {
            return Err(Error::Config("sample duration must be positive".into()));
        }
        Ok(())
    }
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self::new(16, 150e6)
    }
}

/// One propagation path between the base station and the user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    /// Angle of arrival in radians, measured from the array axis.
    pub aoa: f64,
    /// Seconds.
    pub delay: f64,
    pub sampled_delay: usize,
    pub gain: Complex64,
    /// Meters.
    pub path_length: f64,
    /// 0 for the direct path, `1 + reflector index` for reflections; foreground
    /// paths injected by the dynamics module use `usize::MAX`.
    pub cluster_id: usize,
    pub is_los: bool,
}

/// Result of tracing one user position.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Resolvable paths, strongest first.
    pub paths: Vec<Path>,
    /// Paths dropped because their delay fell past the last subcarrier bin.
    pub truncated: usize,
}

/// Complex channel frequency response, antennas × subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiMatrix(pub Array2<Complex64>);

impl CsiMatrix {
    pub fn zeros(n_antennas: usize, n_subcarriers: usize) -> Self {
        Self(Array2::zeros((n_antennas, n_subcarriers)))
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// ULA steering vector; element `q` is `exp(-j 2π q d cos(aoa) / λ)`.
pub fn array_response(aoa: f64, cfg: &ArrayConfig) -> Vec<Complex64> {
    let step = -2.0 * PI * cfg.element_spacing * aoa.cos() / cfg.wavelength;
    (0..cfg.n_antennas)
        .map(|q| Complex64::from_polar(1.0, step * q as f64))
        .collect()
}

/// Nearest delay bin, ties to even.
pub fn quantize_delay(delay: f64, ofdm: &OfdmConfig) -> usize {
    debug_assert!(delay >= 0.0);
    (delay / ofdm.sample_duration).round_ties_even().max(0.0) as usize
}

/// Free-space gain of a path of the given length after bouncing off surfaces
/// with combined reflection coefficient `reflection`.
pub fn path_gain(path_length: f64, reflection: f64, wavelength: f64) -> Complex64 {
    let amplitude = reflection * wavelength / (4.0 * PI * path_length);
    Complex64::from_polar(amplitude, -2.0 * PI * path_length / wavelength)
}

fn angle_from_axis(axis: f64, direction: Vec2) -> f64 {
    let u = Vec2::new(axis.cos(), axis.sin());
    u.cross(direction).abs().atan2(u.dot(direction))
}

/// Traces the direct path and every first-order specular reflection from the
/// base station to `user`.
pub fn trace_paths(
    env: &Environment,
    user: Vec2,
    array: &ArrayConfig,
    ofdm: &OfdmConfig,
) -> Result<Trace> {
    let bs = env.bs_position;
    if user == bs {
        return Err(Error::ZeroDistance);
    }
    let unblocked = |a: Vec2, b: Vec2| !env.blockers.iter().any(|s| s.blocks(a, b));

    let mut paths = Vec::with_capacity(env.reflectors.len() + 1);
    let mut truncated = 0;
    let mut push = |length: f64, aoa: f64, reflection: f64, cluster_id: usize| {
        let delay = length / env.speed_of_light;
        let sampled_delay = quantize_delay(delay, ofdm);
        if sampled_delay >= ofdm.n_subcarriers {
            truncated += 1;
            return;
        }
        paths.push(Path {
            aoa,
            delay,
            sampled_delay,
            gain: path_gain(length, reflection, array.wavelength),
            path_length: length,
            cluster_id,
            is_los: cluster_id == 0,
        });
    };

    if unblocked(bs, user) {
        push(
            user.distance(bs),
            angle_from_axis(env.array_axis, user - bs),
            1.0,
            0,
        );
    }

    for (i, reflector) in env.reflectors.iter().enumerate() {
        let wall = &reflector.segment;
        // Specular reflection needs both endpoints strictly on the same side.
        if wall.side(bs) * wall.side(user) <= 0.0 {
            continue;
        }
        let image = wall.reflect(bs);
        let Some((specular, _)) = wall.intersect(image, user) else {
            continue;
        };
        if !(unblocked(bs, specular) && unblocked(specular, user)) {
            continue;
        }
        push(
            user.distance(image),
            angle_from_axis(env.array_axis, specular - bs),
            reflector.reflection_coefficient,
            i + 1,
        );
    }
    if truncated > 0 {
        log::debug!("{truncated} path(s) past the delay window at {user:?}");
    }

    paths.sort_by(|a, b| {
        b.gain
            .norm()
            .total_cmp(&a.gain.norm())
            .then(a.cluster_id.cmp(&b.cluster_id))
    });
    Ok(Trace { paths, truncated })
}

/// Channel frequency response of a path set: column `l` is
/// `Σ gain · e(aoa) · exp(-j 2π l n / N_c)`.
pub fn synthesize_csi(paths: &[Path], array: &ArrayConfig, ofdm: &OfdmConfig) -> Result<CsiMatrix> {
    let n_c = ofdm.n_subcarriers;
    let mut h = CsiMatrix::zeros(array.n_antennas, n_c);
    for path in paths {
        if path.sampled_delay >= n_c {
            return Err(Error::DelayOverflow {
                bin: path.sampled_delay,
                n_subcarriers: n_c,
            });
        }
        let steering = array_response(path.aoa, array);
        let phases: Vec<Complex64> = (0..n_c)
            .map(|l| {
                // Reduce the exponent modulo N_c before scaling to keep phases exact.
                let k = (l * path.sampled_delay) % n_c;
                Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n_c as f64)
            })
            .collect();
        for (q, e) in steering.iter().enumerate() {
            let ge = path.gain * e;
            for (l, ph) in phases.iter().enumerate() {
                h.0[(q, l)] += ge * ph;
            }
        }
    }
    Ok(h)
}
