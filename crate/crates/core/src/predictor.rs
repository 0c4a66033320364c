//! Next-frame prediction from a short history of accurate profiles.
//!
//! [`PeakTracker`] follows the dominant peaks with constant-velocity tracks
//! and renders a blob (array-response or Gaussian) at each extrapolated
//! position. [`ConvRecurrent`] is a small learned alternative: a
//! convolutional recurrent cell over the history, optionally predicting a
//! residual on the last frame.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adp::Adp;
use crate::dynamics::FrameSequence;
use crate::error::{Error, Result};
use crate::nn::{self, conv2d_backward, conv2d_forward, ConvGeometry, OptimizerState, Padding, Params, Shape, TrainConfig};
use crate::rng;

pub trait Predictor: Send + Sync {
    /// Predicts the frame following `history` (oldest first).
    fn predict_next(&self, history: &[Adp]) -> Result<Adp>;
}

/// The last `capacity` accurate frames, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameHistory {
    capacity: usize,
    frames: VecDeque<Adp>,
}

impl FrameHistory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "history needs room for one frame");
        Self {
            capacity,
            frames: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, adp: Adp) {
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back(adp);
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn last(&self) -> Option<&Adp> {
        self.frames.back()
    }

    pub fn to_vec(&self) -> Vec<Adp> {
        self.frames.iter().cloned().collect()
    }
}

/// A local maximum with its 3x3 intensity-centroid refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub angle_bin: usize,
    pub delay_bin: usize,
    pub amplitude: f64,
    pub angle_offset: f64,
    pub delay_offset: f64,
}

impl Peak {
    pub fn angle(&self) -> f64 {
        self.angle_bin as f64 + self.angle_offset
    }

    pub fn delay(&self) -> f64 {
        self.delay_bin as f64 + self.delay_offset
    }
}

fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Signed distance from `a` to `b` on a ring of length `n`, in (−n/2, n/2].
fn ring_delta(a: f64, b: f64, n: usize) -> f64 {
    let n = n as f64;
    let d = (b - a).rem_euclid(n);
    if d > n / 2.0 {
        d - n
    } else {
        d
    }
}

/// Up to `k_peaks` strict local maxima (8-neighborhood, both axes cyclic)
/// whose amplitude is at least `min_relative` of the frame maximum, strongest
/// first, ties by (angle bin, delay bin).
pub fn detect_peaks_with(adp: &Adp, k_peaks: usize, min_relative: f64) -> Vec<Peak> {
    let (n_t, n_c) = adp.dims();
    let px = &adp.pixels;
    let floor = adp.max() * min_relative;
    let mut peaks = Vec::new();
    for z in 0..n_t {
        for n in 0..n_c {
            let v = px[(z, n)];
            if v <= 0.0 || v < floor {
                continue;
            }
            let mut strict = true;
            let mut sum = 0.0;
            let (mut dz_acc, mut dn_acc) = (0.0, 0.0);
            for dz in -1isize..=1 {
                for dn in -1isize..=1 {
                    let u = px[(wrap(z as isize + dz, n_t), wrap(n as isize + dn, n_c))];
                    if (dz, dn) != (0, 0) && u >= v {
                        strict = false;
                    }
                    sum += u;
                    dz_acc += u * dz as f64;
                    dn_acc += u * dn as f64;
                }
            }
            if strict {
                peaks.push(Peak {
                    angle_bin: z,
                    delay_bin: n,
                    amplitude: v,
                    angle_offset: dz_acc / sum,
                    delay_offset: dn_acc / sum,
                });
            }
        }
    }
    peaks.sort_by(|a, b| {
        b.amplitude
            .total_cmp(&a.amplitude)
            .then(a.angle_bin.cmp(&b.angle_bin))
            .then(a.delay_bin.cmp(&b.delay_bin))
    });
    peaks.truncate(k_peaks);
    peaks
}

pub fn detect_peaks(adp: &Adp, k_peaks: usize) -> Vec<Peak> {
    detect_peaks_with(adp, k_peaks, PeakTrackingConfig::default().min_relative_amplitude)
}

/// Shape of the blob drawn for each extrapolated peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlobKernel {
    /// The separable Dirichlet magnitude a single path produces after the
    /// angle-delay transform. Peak positions are refined by fitting it.
    #[default]
    ArrayResponse,
    /// Isotropic Gaussian of width `kernel_sigma`, positions from the 3x3
    /// centroid.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeakTrackingConfig {
    pub k_peaks: usize,
    pub kernel: BlobKernel,
    /// Standard deviation of Gaussian blobs, in bins.
    pub kernel_sigma: f64,
    /// Association gate, in bins.
    pub gate: f64,
    /// Consecutive unmatched frames after which a track is dropped.
    pub max_misses: usize,
    /// Peaks below this fraction of the frame maximum are ignored.
    pub min_relative_amplitude: f64,
    /// Observations used for the velocity and amplitude fits.
    pub fit_window: usize,
}

impl Default for PeakTrackingConfig {
    fn default() -> Self {
        Self {
            k_peaks: 8,
            kernel: BlobKernel::ArrayResponse,
            kernel_sigma: 0.7,
            gate: 3.0,
            max_misses: 2,
            min_relative_amplitude: 0.05,
            fit_window: 3,
        }
    }
}

impl PeakTrackingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_peaks == 0 {
            return Err(Error::Config("k_peaks must be at least 1".into()));
        }
        if !(self.kernel_sigma > 0.0) || !(self.gate > 0.0) {
            return Err(Error::Config("kernel_sigma and gate must be positive".into()));
        }
        if self.max_misses == 0 || self.fit_window < 2 {
            return Err(Error::Config("max_misses ≥ 1 and fit_window ≥ 2 required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Track {
    /// (frame, unwrapped angle, unwrapped delay, amplitude)
    obs: Vec<(f64, f64, f64, f64)>,
    misses: usize,
}

impl Track {
    fn last(&self) -> (f64, f64, f64, f64) {
        *self.obs.last().expect("tracks start with one observation")
    }

    /// Least-squares line through the last `window` observations of one
    /// coordinate, evaluated at `t`.
    fn fit_at(&self, t: f64, window: usize, coord: impl Fn(&(f64, f64, f64, f64)) -> f64) -> f64 {
        let obs = &self.obs[self.obs.len().saturating_sub(window)..];
        if obs.len() < 2 {
            return coord(&obs[obs.len() - 1]);
        }
        let n = obs.len() as f64;
        let mt = obs.iter().map(|o| o.0).sum::<f64>() / n;
        let my = obs.iter().map(&coord).sum::<f64>() / n;
        let sxx: f64 = obs.iter().map(|o| (o.0 - mt).powi(2)).sum();
        let sxy: f64 = obs.iter().map(|o| (o.0 - mt) * (coord(o) - my)).sum();
        my + sxy / sxx * (t - mt)
    }
}

/// Normalized Dirichlet magnitude `|sin(πx) / (n sin(πx/n))|`, 1 at x = 0.
pub fn dirichlet(x: f64, n: usize) -> f64 {
    let n = n as f64;
    let den = n * (std::f64::consts::PI * x / n).sin();
    if den.abs() < 1e-12 {
        return 1.0;
    }
    ((std::f64::consts::PI * x).sin() / den).abs()
}

/// Sub-bin offset along one axis from the center value and its two
/// neighbors, assuming a Dirichlet main lobe. Returns (offset, center gain).
fn dirichlet_offset(center: f64, left: f64, right: f64, n: usize) -> (f64, f64) {
    let (side, neighbor) = if right >= left { (1.0, right) } else { (-1.0, left) };
    if center <= 0.0 || neighbor <= 0.0 {
        return (0.0, 1.0);
    }
    let ratio = (neighbor / center).min(1.0);
    // D(1 − δ) / D(δ) rises monotonically from 0 to 1 over δ ∈ [0, 1/2]
    let (mut lo, mut hi) = (0.0, 0.5);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if dirichlet(1.0 - mid, n) / dirichlet(mid, n) < ratio {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let delta = 0.5 * (lo + hi);
    (side * delta, dirichlet(delta, n))
}

/// Replaces a peak's centroid offsets and amplitude by a Dirichlet fit.
pub fn refine_array_response(adp: &Adp, peak: &Peak) -> Peak {
    let (n_t, n_c) = adp.dims();
    let px = &adp.pixels;
    let (z, n) = (peak.angle_bin as isize, peak.delay_bin as isize);
    let at = |dz: isize, dn: isize| px[(wrap(z + dz, n_t), wrap(n + dn, n_c))];
    let (da, ga) = dirichlet_offset(at(0, 0), at(-1, 0), at(1, 0), n_t);
    let (dd, gd) = dirichlet_offset(at(0, 0), at(0, -1), at(0, 1), n_c);
    Peak {
        angle_offset: da,
        delay_offset: dd,
        amplitude: peak.amplitude / (ga * gd),
        ..*peak
    }
}

/// Array-response blobs at the given (angle, delay, amplitude) positions.
pub fn render_array_response(dims: (usize, usize), blobs: &[(f64, f64, f64)]) -> Adp {
    let (n_t, n_c) = dims;
    let mut out = vec![0.0; n_t * n_c];
    for &(a, d, amp) in blobs {
        if amp <= 0.0 {
            continue;
        }
        let row: Vec<f64> = (0..n_c).map(|n| dirichlet(n as f64 - d, n_c)).collect();
        for z in 0..n_t {
            let gz = amp * dirichlet(z as f64 - a, n_t);
            for (o, r) in out[z * n_c..(z + 1) * n_c].iter_mut().zip(&row) {
                *o += gz * r;
            }
        }
    }
    Adp::from_vec(n_t, n_c, out).expect("finite nonnegative blobs")
}

/// Gaussian blobs at the given (angle, delay, amplitude) positions, cyclic
/// in both axes.
pub fn render_blobs(dims: (usize, usize), blobs: &[(f64, f64, f64)], sigma: f64) -> Adp {
    let (n_t, n_c) = dims;
    let mut out = vec![0.0; n_t * n_c];
    let s2 = 2.0 * sigma * sigma;
    for &(a, d, amp) in blobs {
        if amp <= 0.0 {
            continue;
        }
        for z in 0..n_t {
            let dz = ring_delta(a, z as f64, n_t);
            let gz = (-dz * dz / s2).exp();
            for n in 0..n_c {
                let dn = ring_delta(d, n as f64, n_c);
                out[z * n_c + n] += amp * gz * (-dn * dn / s2).exp();
            }
        }
    }
    Adp::from_vec(n_t, n_c, out).expect("finite nonnegative blobs")
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakTracker {
    pub config: PeakTrackingConfig,
}

impl PeakTracker {
    pub fn new(config: PeakTrackingConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Detected peaks with the refinement matching the blob kernel.
    pub fn peaks(&self, frame: &Adp) -> Vec<Peak> {
        let cfg = &self.config;
        let peaks = detect_peaks_with(frame, cfg.k_peaks, cfg.min_relative_amplitude);
        match cfg.kernel {
            BlobKernel::Gaussian => peaks,
            BlobKernel::ArrayResponse => peaks.iter().map(|p| refine_array_response(frame, p)).collect(),
        }
    }

    pub fn render(&self, dims: (usize, usize), blobs: &[(f64, f64, f64)]) -> Adp {
        match self.config.kernel {
            BlobKernel::Gaussian => render_blobs(dims, blobs, self.config.kernel_sigma),
            BlobKernel::ArrayResponse => render_array_response(dims, blobs),
        }
    }

    fn tracks(&self, history: &[Adp]) -> Vec<Track> {
        let cfg = &self.config;
        let (n_t, n_c) = history[0].dims();
        let mut tracks: Vec<Track> = Vec::new();
        for (t, frame) in history.iter().enumerate() {
            let t = t as f64;
            let peaks = self.peaks(frame);
            let mut pairs = Vec::new();
            for (ti, track) in tracks.iter().enumerate() {
                let ea = track.fit_at(t, cfg.fit_window, |o| o.1);
                let ed = track.fit_at(t, cfg.fit_window, |o| o.2);
                for (pi, p) in peaks.iter().enumerate() {
                    let da = ring_delta(ea, p.angle(), n_t);
                    let dd = ring_delta(ed, p.delay(), n_c);
                    let dist = da.hypot(dd);
                    if dist <= cfg.gate {
                        pairs.push((dist, ti, pi));
                    }
                }
            }
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut track_taken = vec![false; tracks.len()];
            let mut peak_taken = vec![false; peaks.len()];
            for (_, ti, pi) in pairs {
                if track_taken[ti] || peak_taken[pi] {
                    continue;
                }
                track_taken[ti] = true;
                peak_taken[pi] = true;
                let (_, la, ld, _) = tracks[ti].last();
                let p = &peaks[pi];
                // unwrap onto the track's own continuous coordinates
                let a = la + ring_delta(la, p.angle(), n_t);
                let d = ld + ring_delta(ld, p.delay(), n_c);
                tracks[ti].obs.push((t, a, d, p.amplitude));
                tracks[ti].misses = 0;
            }
            for (ti, track) in tracks.iter_mut().enumerate() {
                if !track_taken[ti] {
                    track.misses += 1;
                }
            }
            tracks.retain(|tr| tr.misses < cfg.max_misses);
            for (pi, p) in peaks.iter().enumerate() {
                if !peak_taken[pi] {
                    tracks.push(Track {
                        obs: vec![(t, p.angle(), p.delay(), p.amplitude)],
                        misses: 0,
                    });
                }
            }
        }
        tracks
    }

    /// Extrapolated (angle, delay, amplitude) of every track seen in the
    /// last history frame.
    pub fn extrapolate(&self, history: &[Adp]) -> Result<Vec<(f64, f64, f64)>> {
        check_history(history)?;
        let (n_t, n_c) = history[0].dims();
        let next = history.len() as f64;
        let w = self.config.fit_window;
        Ok(self
            .tracks(history)
            .into_iter()
            .filter(|tr| tr.misses == 0)
            .map(|tr| {
                let a = tr.fit_at(next, w, |o| o.1).rem_euclid(n_t as f64);
                let d = tr.fit_at(next, w, |o| o.2).rem_euclid(n_c as f64);
                (a, d, tr.fit_at(next, w, |o| o.3).max(0.0))
            })
            .collect())
    }
}

fn check_history(history: &[Adp]) -> Result<()> {
    let first = history.first().ok_or(Error::EmptyHistory)?;
    if let Some(bad) = history.iter().find(|a| a.dims() != first.dims()) {
        return Err(Error::dims(format!("{:?}", first.dims()), format!("{:?}", bad.dims())));
    }
    Ok(())
}

impl Predictor for PeakTracker {
    fn predict_next(&self, history: &[Adp]) -> Result<Adp> {
        let blobs = self.extrapolate(history)?;
        Ok(self.render(history[0].dims(), &blobs).quantized())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvRecurrentConfig {
    pub hidden_channels: usize,
    pub kernel: usize,
    /// History length fed to the cell.
    pub frames: usize,
    /// Add the last input frame to the output, so the cell learns a
    /// correction to persistence.
    pub residual: bool,
}

impl Default for ConvRecurrentConfig {
    fn default() -> Self {
        Self {
            hidden_channels: 6,
            kernel: 5,
            frames: 10,
            residual: false,
        }
    }
}

/// `h_t = tanh(Wx ⋆ x_t + Wh ⋆ h_{t−1} + b)`, output `Wo ⋆ h_T + bo`
/// (plus `x_T` in residual mode), with frames scaled by the history maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvRecurrent {
    pub config: ConvRecurrentConfig,
    pub dims: (usize, usize),
    /// [Wx, Wh, b, Wo, bo]
    pub params: Params,
}

struct Unrolled {
    inputs: Vec<Vec<f64>>,
    /// hidden states h_0 (zeros) through h_T
    hidden: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ConvRecurrent {
    pub fn new(config: ConvRecurrentConfig, dims: (usize, usize), seed: u64) -> Result<Self> {
        use rand::Rng;
        if config.hidden_channels == 0 || config.kernel.is_multiple_of(2) || config.frames == 0 {
            return Err(Error::Config("conv-recurrent needs channels ≥ 1, an odd kernel and frames ≥ 1".into()));
        }
        let c = config.hidden_channels;
        let kk = config.kernel * config.kernel;
        let mut rng = rng::stream(seed, rng::TAG_INIT, 1);
        let mut init = |n: usize, fan_in: usize| -> Vec<f64> {
            let s = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-s..=s)).collect()
        };
        let params = vec![
            init(c * kk, kk),
            init(c * c * kk, c * kk),
            vec![0.0; c],
            init(c * kk, c * kk),
            vec![0.0; 1],
        ];
        Ok(Self { config, dims, params })
    }

    fn geometry(&self, in_c: usize, out_c: usize) -> ConvGeometry {
        ConvGeometry {
            input: Shape::new(in_c, self.dims.0, self.dims.1),
            filters: out_c,
            kernel: (self.config.kernel, self.config.kernel),
            padding: Padding::Same,
        }
    }

    fn plane(&self) -> usize {
        self.dims.0 * self.dims.1
    }

    fn unroll(&self, inputs: Vec<Vec<f64>>) -> Unrolled {
        let c = self.config.hidden_channels;
        let gx = self.geometry(1, c);
        let gh = self.geometry(c, c);
        let go = self.geometry(c, 1);
        let p = &self.params;
        let mut hidden = vec![vec![0.0; c * self.plane()]];
        for x in &inputs {
            let mut a = conv2d_forward(&gx, x, &p[0], Some(&p[2]));
            let rec = conv2d_forward(&gh, hidden.last().expect("h0"), &p[1], None);
            for (a, r) in a.iter_mut().zip(rec) {
                *a = (*a + r).tanh();
            }
            hidden.push(a);
        }
        let mut output = conv2d_forward(&go, hidden.last().expect("h_T"), &p[3], Some(&p[4]));
        if self.config.residual {
            for (o, x) in output.iter_mut().zip(inputs.last().expect("nonempty")) {
                *o += x;
            }
        }
        Unrolled { inputs, hidden, output }
    }

    /// Scaled inputs for the last `frames` of `history` and the scale used.
    fn prepare(&self, history: &[Adp]) -> (Vec<Vec<f64>>, f64) {
        let window = &history[history.len().saturating_sub(self.config.frames)..];
        let max = window.iter().map(Adp::max).fold(0.0, f64::max);
        let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
        let inputs = window
            .iter()
            .map(|a| a.as_slice().iter().map(|v| v * scale).collect())
            .collect();
        (inputs, max)
    }

    fn loss_and_gradient(&self, history: &[Adp], target: &Adp, grads: &mut Params) -> Result<f64> {
        let (inputs, max) = self.prepare(history);
        let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
        let run = self.unroll(inputs);
        let n = run.output.len() as f64;
        let mut loss = 0.0;
        let dy: Vec<f64> = run
            .output
            .iter()
            .zip(target.as_slice())
            .map(|(y, t)| {
                let r = y - t * scale;
                loss += r * r;
                2.0 * r / n
            })
            .collect();
        let c = self.config.hidden_channels;
        let (gx, gh, go) = (self.geometry(1, c), self.geometry(c, c), self.geometry(c, 1));
        let p = &self.params;
        let [g_wx, g_wh, g_b, g_wo, g_bo] = grads.as_mut_slice() else {
            unreachable!("five parameter blobs")
        };
        let t_len = run.inputs.len();
        let mut dh = conv2d_backward(&go, &run.hidden[t_len], &p[3], &dy, g_wo, Some(g_bo));
        for t in (1..=t_len).rev() {
            let h = &run.hidden[t];
            let da: Vec<f64> = dh.iter().zip(h).map(|(g, h)| g * (1.0 - h * h)).collect();
            conv2d_backward(&gx, &run.inputs[t - 1], &p[0], &da, g_wx, Some(g_b));
            dh = conv2d_backward(&gh, &run.hidden[t - 1], &p[1], &da, g_wh, None);
        }
        Ok(loss / n)
    }

    pub fn round_params_to_f32(&mut self) {
        for v in self.params.iter_mut().flatten() {
            *v = *v as f32 as f64;
        }
    }
}

impl Predictor for ConvRecurrent {
    fn predict_next(&self, history: &[Adp]) -> Result<Adp> {
        check_history(history)?;
        if history[0].dims() != self.dims {
            return Err(Error::dims(format!("{:?}", self.dims), format!("{:?}", history[0].dims())));
        }
        let (inputs, max) = self.prepare(history);
        if max == 0.0 {
            return Ok(Adp::zeros(self.dims.0, self.dims.1));
        }
        let out = self.unroll(inputs).output;
        let pixels = out.into_iter().map(|v| (v * max).max(0.0)).collect();
        Ok(Adp::from_vec(self.dims.0, self.dims.1, pixels)?.quantized())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorReport {
    pub loss_curve: Vec<f64>,
    pub train_loss: f64,
    /// Mean loss on the held-out tenth of the sequences.
    pub validation_loss: f64,
}

/// Trains on (first `frames` frames → next frame) of every sequence; a
/// seeded tenth of the sequences is held out for validation.
pub fn train_conv_recurrent(
    sequences: &[FrameSequence],
    config: ConvRecurrentConfig,
    cfg: &TrainConfig,
) -> Result<(ConvRecurrent, PredictorReport)> {
    cfg.validate()?;
    let f = config.frames;
    let samples: Vec<(Vec<Adp>, Adp)> = sequences
        .iter()
        .map(|s| {
            if s.len() < f + 1 {
                return Err(Error::Config(format!("sequence {} shorter than {} frames", s.id, f + 1)));
            }
            Ok((s.frames[..f].iter().map(|fr| fr.adp.clone()).collect(), s.frames[f].adp.clone()))
        })
        .collect::<Result<_>>()?;
    let first = samples.first().ok_or_else(|| Error::Config("no training sequences".into()))?;
    let dims = first.1.dims();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng::stream(cfg.seed, rng::TAG_SHUFFLE, u64::MAX));
    let n_val = if samples.len() >= 10 { samples.len() / 10 } else { 0 };
    let (val, mut train) = (order[..n_val].to_vec(), order[n_val..].to_vec());

    let mut model = ConvRecurrent::new(config, dims, cfg.seed)?;
    let mut opt = OptimizerState::new(cfg.optimizer, &model.params);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            train.shuffle(&mut rng::stream(cfg.seed, rng::TAG_SHUFFLE, epoch as u64));
        }
        let lr = cfg.learning_rate_at(epoch);
        let mut total = 0.0;
        for batch in train.chunks(cfg.batch_size) {
            let (loss, grads) = nn::batch_gradient(&model.params, batch.len(), |i, g| {
                let (h, t) = &samples[batch[i]];
                model.loss_and_gradient(h, t, g)
            })?;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            opt.step(&mut model.params, &grads, lr);
            total += loss * batch.len() as f64;
        }
        let mean = total / train.len() as f64;
        if !mean.is_finite() || model.params.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::DivergedLoss { epoch });
        }
        log::debug!("predictor epoch {epoch}: loss {mean:.6e}");
        loss_curve.push(mean);
    }
    model.round_params_to_f32();
    let mean_loss = |idx: &[usize]| -> Result<f64> {
        if idx.is_empty() {
            return Ok(f64::NAN);
        }
        let mut scratch: Params = model.params.iter().map(|p| vec![0.0; p.len()]).collect();
        let mut sum = 0.0;
        for &i in idx {
            sum += model.loss_and_gradient(&samples[i].0, &samples[i].1, &mut scratch)?;
        }
        Ok(sum / idx.len() as f64)
    };
    let report = PredictorReport {
        loss_curve,
        train_loss: mean_loss(&train)?,
        validation_loss: mean_loss(&val)?,
    };
    Ok((model, report))
}

const KIND_CONV_RECURRENT: &str = "predictor-conv-recurrent";

#[derive(Serialize, Deserialize)]
struct ConvRecurrentMeta {
    config: ConvRecurrentConfig,
    dims: (usize, usize),
}

impl ConvRecurrent {
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let meta = serde_json::to_value(ConvRecurrentMeta {
            config: self.config,
            dims: self.dims,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
        nn::write_checkpoint(w, KIND_CONV_RECURRENT, meta, &self.params)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let (header, blobs) = nn::read_checkpoint(r)?;
        if header.kind != KIND_CONV_RECURRENT {
            return Err(Error::Format(format!("checkpoint holds a {}, not a predictor", header.kind)));
        }
        let meta: ConvRecurrentMeta = serde_json::from_value(header.meta).map_err(|e| Error::Format(e.to_string()))?;
        let model = ConvRecurrent::new(meta.config, meta.dims, 0)?;
        if blobs.len() != model.params.len() || blobs.iter().zip(&model.params).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Format("checkpoint parameters do not match architecture".into()));
        }
        if blobs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite checkpoint parameters".into()));
        }
        Ok(Self { params: blobs, ..model })
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Either predictor, selected by configuration.
#[derive(Debug, Clone)]
pub enum PredictorKind {
    PeakTracking(PeakTracker),
    ConvRecurrent(ConvRecurrent),
}

impl Predictor for PredictorKind {
    fn predict_next(&self, history: &[Adp]) -> Result<Adp> {
        match self {
            PredictorKind::PeakTracking(p) => p.predict_next(history),
            PredictorKind::ConvRecurrent(p) => p.predict_next(history),
        }
    }
}
