//! Foreground dynamics: random-walk trajectories, path-level distortion
//! (blockage and addition) and frame-sequence generation.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adp::Adp;
use crate::channel::{OfdmConfig, Path, SPEED_OF_LIGHT};
use crate::container::{AdpContainer, AdpRecord, WalkTag};
use crate::error::{Error, Result};
use crate::fingerprint::GridSpec;
use crate::geometry::Vec2;
use crate::rng::{self, SimRng};
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WalkMode {
    /// Keep the first direction; turn randomly only at the boundary.
    Mode1,
    /// Pick a fresh direction every step.
    Mode2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Neighborhood {
    #[default]
    Four,
    Eight,
}

impl Neighborhood {
    fn moves(self) -> &'static [(isize, isize)] {
        // (d_row, d_col)
        const FOUR: [(isize, isize); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];
        const EIGHT: [(isize, isize); 8] = [
            (0, 1),
            (1, 1),
            (1, 0),
            (1, -1),
            (0, -1),
            (-1, -1),
            (-1, 0),
            (-1, 1),
        ];
        match self {
            Neighborhood::Four => &FOUR,
            Neighborhood::Eight => &EIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Walk {
    pub mode: WalkMode,
    /// Visited grid cells as (row, col).
    pub cells: Vec<(usize, usize)>,
    pub positions: Vec<Vec2>,
}

impl Walk {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

fn step(grid: &GridSpec, cell: (usize, usize), mv: (isize, isize)) -> Option<(usize, usize)> {
    let r = cell.0.checked_add_signed(mv.0)?;
    let c = cell.1.checked_add_signed(mv.1)?;
    (r < grid.n_rows && c < grid.n_cols).then_some((r, c))
}

pub fn random_walk(grid: &GridSpec, mode: WalkMode, length: usize, seed: u64) -> Walk {
    random_walk_with(grid, mode, length, seed, Neighborhood::Four)
}

pub fn random_walk_with(
    grid: &GridSpec,
    mode: WalkMode,
    length: usize,
    seed: u64,
    neighborhood: Neighborhood,
) -> Walk {
    let mut rng = rng::rng_from_seed(seed);
    let moves = neighborhood.moves();
    let mut cell = (
        rng.random_range(0..grid.n_rows),
        rng.random_range(0..grid.n_cols),
    );
    let feasible = |cell: (usize, usize)| -> Vec<usize> {
        (0..moves.len())
            .filter(|&k| step(grid, cell, moves[k]).is_some())
            .collect()
    };
    let pick = |rng: &mut SimRng, options: &[usize]| -> Option<usize> {
        (!options.is_empty()).then(|| options[rng.random_range(0..options.len())])
    };

    let mut cells = Vec::with_capacity(length);
    let mut heading = None;
    for t in 0..length {
        if t > 0 {
            let options = feasible(cell);
            let next = match mode {
                WalkMode::Mode2 => pick(&mut rng, &options),
                WalkMode::Mode1 => match heading {
                    Some(h) if options.contains(&h) => Some(h),
                    Some(h) => {
                        let others: Vec<usize> = options.iter().copied().filter(|&k| k != h).collect();
                        pick(&mut rng, &others)
                    }
                    None => pick(&mut rng, &options),
                },
            };
            if let Some(k) = next {
                heading = Some(k);
                cell = step(grid, cell, moves[k]).expect("feasible move");
            }
        }
        cells.push(cell);
    }
    Walk {
        mode,
        positions: cells.iter().map(|&(r, c)| grid.point(r, c)).collect(),
        cells,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistortionKind {
    /// The strongest path disappears.
    LosBlockage,
    /// The second strongest path disappears.
    NlosBlockage,
    /// A foreground reflector adds one path below the strongest one.
    NlosAddition,
}

impl DistortionKind {
    pub fn name(self) -> &'static str {
        match self {
            DistortionKind::LosBlockage => "los-block",
            DistortionKind::NlosBlockage => "nlos-block",
            DistortionKind::NlosAddition => "nlos-add",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionScenario {
    pub kind: DistortionKind,
    /// Level of an added path relative to the strongest path, in dB (< 0).
    pub addition_level_db: f64,
    pub rng_seed: u64,
    /// Keep one added path for the whole sequence instead of redrawing it
    /// every frame.
    pub persistent_foreground: bool,
    /// Edit the profile image directly instead of the path list.
    pub pixel_mask: bool,
}

impl DistortionScenario {
    pub fn new(kind: DistortionKind, rng_seed: u64) -> Self {
        Self {
            kind,
            addition_level_db: -6.0,
            rng_seed,
            persistent_foreground: true,
            pixel_mask: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.addition_level_db < 0.0) {
            return Err(Error::Config("addition level must be below 0 dB".into()));
        }
        Ok(())
    }

    /// The same scenario with an independent seed for sequence `index`.
    pub fn for_sequence(&self, index: u64) -> Self {
        Self {
            rng_seed: rng::derive_seed(self.rng_seed, rng::TAG_SEQUENCE, index),
            ..*self
        }
    }
}

fn ranked_by_gain(paths: &[Path]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..paths.len()).collect();
    order.sort_by(|&a, &b| paths[b].gain.norm().total_cmp(&paths[a].gain.norm()).then(a.cmp(&b)));
    order
}

/// The injected foreground path for `frame_index`, scaled against
/// `reference_gain` (the strongest background path).
pub fn foreground_path(
    scenario: &DistortionScenario,
    reference_gain: f64,
    ofdm: &OfdmConfig,
    frame_index: u64,
) -> Path {
    let mut rng = rng::stream(scenario.rng_seed, rng::TAG_FOREGROUND, frame_index);
    let aoa = loop {
        let a = rng.random_range(0.0..PI);
        if a > 0.0 {
            break a;
        }
    };
    let sampled_delay = rng.random_range(0..ofdm.n_subcarriers);
    let phase = rng.random_range(0.0..2.0 * PI);
    let magnitude = 10f64.powf(scenario.addition_level_db / 20.0) * reference_gain;
    let delay = sampled_delay as f64 * ofdm.sample_duration;
    Path {
        aoa,
        delay,
        sampled_delay,
        gain: Complex64::from_polar(magnitude, phase),
        path_length: delay * SPEED_OF_LIGHT,
        cluster_id: usize::MAX,
        is_los: false,
    }
}

fn max_gain(paths: &[Path]) -> f64 {
    paths.iter().map(|p| p.gain.norm()).fold(0.0, f64::max)
}

/// Applies the scenario to a path set. The input is never modified.
pub fn distort_paths(
    paths: &[Path],
    scenario: &DistortionScenario,
    ofdm: &OfdmConfig,
    frame_index: u64,
) -> Result<Vec<Path>> {
    let remove = |rank: usize, kind: &'static str| -> Result<Vec<Path>> {
        let order = ranked_by_gain(paths);
        let Some(&victim) = order.get(rank) else {
            return Err(Error::NotEnoughPaths {
                kind,
                needed: rank + 1,
                available: paths.len(),
            });
        };
        Ok(paths
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != victim)
            .map(|(_, p)| *p)
            .collect())
    };
    match scenario.kind {
        DistortionKind::LosBlockage => remove(0, "LOS blockage"),
        DistortionKind::NlosBlockage => remove(1, "NLOS blockage"),
        DistortionKind::NlosAddition => {
            let mut out = paths.to_vec();
            out.push(foreground_path(scenario, max_gain(paths), ofdm, frame_index));
            Ok(out)
        }
    }
}

/// One time step of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub true_position: Vec2,
    pub cell: (usize, usize),
    /// Background paths before any distortion.
    pub paths: Vec<Path>,
    pub distorted: bool,
    /// The measured profile is all zero: no path reached the array.
    pub lost_link: bool,
    pub adp: Adp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub id: u32,
    pub mode: WalkMode,
    pub frames: Vec<Frame>,
    /// Distorted frames where the scenario had no path to remove.
    pub unblockable_frames: usize,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Pixels where a single path's own profile is at least half its peak.
fn main_lobe(adp: &Adp) -> Vec<bool> {
    let peak = adp.max();
    adp.as_slice().iter().map(|p| peak > 0.0 && *p >= 0.5 * peak).collect()
}

fn pixel_edit(scene: &Scene, background: &[Path], distorted: &[Path]) -> Result<Adp> {
    let full = scene.adp_of(background)?;
    let (n_t, n_c) = full.dims();
    let mut pixels = full.as_slice().to_vec();
    for removed in background.iter().filter(|p| !distorted.contains(p)) {
        let lobe = main_lobe(&scene.adp_of(std::slice::from_ref(removed))?);
        for (px, masked) in pixels.iter_mut().zip(lobe) {
            if masked {
                *px = 0.0;
            }
        }
    }
    for added in distorted.iter().filter(|p| !background.contains(p)) {
        let extra = scene.adp_of(std::slice::from_ref(added))?;
        for (px, e) in pixels.iter_mut().zip(extra.as_slice()) {
            *px += e;
        }
    }
    Ok(Adp::from_vec(n_t, n_c, pixels)?.quantized())
}

/// Traces every walk position, distorts frames from `distort_from` onward
/// when a scenario is given, and computes the measured profiles.
pub fn generate_sequence(
    scene: &Scene,
    walk: &Walk,
    scenario: Option<&DistortionScenario>,
    distort_from: usize,
    id: u32,
) -> Result<FrameSequence> {
    if distort_from > walk.len() {
        return Err(Error::Config(format!(
            "distort_from {distort_from} past sequence length {}",
            walk.len()
        )));
    }
    if let Some(s) = scenario {
        s.validate()?;
    }
    let mut frames = Vec::with_capacity(walk.len());
    let mut foreground: Option<Path> = None;
    let mut unblockable_frames = 0;
    for (t, (&position, &cell)) in walk.positions.iter().zip(&walk.cells).enumerate() {
        let paths = scene.trace(position)?.paths;
        let active = scenario.filter(|_| t >= distort_from);
        let measured = match active {
            None => paths.clone(),
            Some(s) if s.kind == DistortionKind::NlosAddition && s.persistent_foreground => {
                let fg = *foreground.get_or_insert_with(|| {
                    foreground_path(s, max_gain(&paths), &scene.ofdm, distort_from as u64)
                });
                let mut out = paths.clone();
                out.push(fg);
                out
            }
            Some(s) => match distort_paths(&paths, s, &scene.ofdm, t as u64) {
                Ok(out) => out,
                Err(Error::NotEnoughPaths { .. }) => {
                    unblockable_frames += 1;
                    paths.clone()
                }
                Err(e) => return Err(e),
            },
        };
        let adp = match active {
            Some(s) if s.pixel_mask => pixel_edit(scene, &paths, &measured)?,
            _ => scene.adp_of(&measured)?,
        };
        frames.push(Frame {
            true_position: position,
            cell,
            paths,
            distorted: active.is_some(),
            lost_link: adp.is_zero(),
            adp,
        });
    }
    Ok(FrameSequence {
        id,
        mode: walk.mode,
        frames,
        unblockable_frames,
    })
}

/// Undistorted Mode-1 sequences for training a frame predictor.
pub fn build_training_set(
    scene: &Scene,
    grid: &GridSpec,
    n_sequences: usize,
    length: usize,
    seed: u64,
) -> Result<Vec<FrameSequence>> {
    (0..n_sequences)
        .into_par_iter()
        .map(|i| {
            let walk = random_walk(
                grid,
                WalkMode::Mode1,
                length,
                rng::derive_seed(seed, rng::TAG_WALK, i as u64),
            );
            generate_sequence(scene, &walk, None, length, i as u32)
        })
        .collect()
}

/// Evaluation sequences: the first half Mode 1, the rest Mode 2, each
/// distorted from `distort_from` onward under its own derived scenario seed.
pub fn build_test_set(
    scene: &Scene,
    grid: &GridSpec,
    n_sequences: usize,
    length: usize,
    distort_from: usize,
    scenario: Option<&DistortionScenario>,
    seed: u64,
) -> Result<Vec<FrameSequence>> {
    let n_mode1 = n_sequences.div_ceil(2);
    (0..n_sequences)
        .into_par_iter()
        .map(|i| {
            let mode = if i < n_mode1 { WalkMode::Mode1 } else { WalkMode::Mode2 };
            let walk = random_walk(
                grid,
                mode,
                length,
                rng::derive_seed(seed, rng::TAG_WALK ^ 0xFFFF, i as u64),
            );
            let scenario = scenario.map(|s| s.for_sequence(i as u64));
            generate_sequence(scene, &walk, scenario.as_ref(), distort_from, i as u32)
        })
        .collect()
}

pub fn sequences_to_container(sequences: &[FrameSequence], dims: (usize, usize)) -> AdpContainer {
    let mut c = AdpContainer::new(dims.0, dims.1);
    for seq in sequences {
        for (t, f) in seq.frames.iter().enumerate() {
            c.records.push(AdpRecord {
                position: f.true_position,
                adp: f.adp.clone(),
                walk: Some(WalkTag {
                    sequence_id: seq.id,
                    frame_index: t as u16,
                    distorted: f.distorted,
                }),
            });
        }
    }
    c
}

/// A sequence read back from an `ADPF` file; paths and walk mode are not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSequence {
    pub id: u32,
    pub positions: Vec<Vec2>,
    pub adps: Vec<Adp>,
    pub distorted: Vec<bool>,
}

pub fn sequences_from_container(c: AdpContainer) -> Result<Vec<StoredSequence>> {
    let mut out: Vec<StoredSequence> = Vec::new();
    for record in c.records {
        let tag = record
            .walk
            .ok_or_else(|| Error::Format("sequence records need walk metadata".into()))?;
        let start_new = out.last().is_none_or(|s| s.id != tag.sequence_id);
        if start_new {
            if tag.frame_index != 0 {
                return Err(Error::Format(format!(
                    "sequence {} starts at frame {}",
                    tag.sequence_id, tag.frame_index
                )));
            }
            out.push(StoredSequence {
                id: tag.sequence_id,
                positions: vec![],
                adps: vec![],
                distorted: vec![],
            });
        }
        let seq = out.last_mut().expect("pushed above");
        if tag.frame_index as usize != seq.positions.len() {
            return Err(Error::Format(format!(
                "sequence {} frames out of order",
                tag.sequence_id
            )));
        }
        seq.positions.push(record.position);
        seq.adps.push(record.adp);
        seq.distorted.push(tag.distorted);
    }
    Ok(out)
}
