//! Browser demo over the core library: angle-delay profiles at a clicked
//! position, the fingerprint similarity landscape around it, and a tracked
//! walk through a blockage.
//!
//! [`DemoCore`] holds the logic and is usable natively; [`Demo`] is the thin
//! wasm-bindgen wrapper the page talks to.

use std::sync::Arc;

use wasm_bindgen::prelude::*;

use dyloc::adp::{similarity, Adp};
use dyloc::channel::{ArrayConfig, OfdmConfig};
use dyloc::dynamics::{build_test_set, DistortionScenario};
use dyloc::environment::Environment;
use dyloc::fingerprint::{build_db_in, FingerprintDb, GridSpec};
use dyloc::geometry::Vec2;
use dyloc::harness::Scenario;
use dyloc::localize::{FingerprintKnn, Localizer};
use dyloc::pipeline::{calibrate_thr2, Pipeline, PipelineConfig, Thresholds, Verdict};
use dyloc::predictor::{PeakTracker, PeakTrackingConfig};
use dyloc::scene::Scene;
use dyloc::{Error, Result};

const K: usize = 3;
const WALK_LENGTH: usize = 20;
const DISTORT_FROM: usize = 10;

/// One frame of a tracked walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedFrame {
    pub truth: Vec2,
    pub tracked: Vec2,
    /// The fingerprint matcher alone, or `None` on a lost link.
    pub plain: Option<Vec2>,
    pub verdict: Verdict,
}

pub struct DemoCore {
    scene: Scene,
    grid: GridSpec,
    db: Arc<FingerprintDb>,
    knn: FingerprintKnn,
    tracker: PeakTracker,
    thresholds: Thresholds,
}

impl DemoCore {
    /// `environment` is `sparse` or `rich`.
    pub fn new(environment: &str) -> Result<Self> {
        let env = match environment {
            "sparse" => Environment::sparse(),
            "rich" => Environment::rich(),
            other => return Err(Error::Config(format!("unknown environment {other:?}"))),
        };
        let scene = Scene::new(env, ArrayConfig::default(), OfdmConfig::default())?;
        let grid = GridSpec::default();
        let db = Arc::new(build_db_in(&scene, &grid)?);
        let thr1 = 3.0 * grid.spacing;
        let thresholds = Thresholds::for_spacing(grid.spacing, calibrate_thr2(&db, thr1)?);
        Ok(Self {
            knn: FingerprintKnn::new(db.clone(), K),
            tracker: PeakTracker::new(PeakTrackingConfig::default())?,
            scene,
            grid,
            db,
            thresholds,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn adp_dims(&self) -> (usize, usize) {
        self.scene.adp_dims()
    }

    pub fn thresholds(&self) -> Thresholds {
        self.thresholds
    }

    pub fn adp_at(&self, p: Vec2) -> Result<Adp> {
        self.scene.adp_at(p)
    }

    /// Similarity of the profile at `p` to every fingerprint, in grid
    /// (row-major) order. Lost links score 0.
    pub fn similarity_map(&self, p: Vec2) -> Result<Vec<f64>> {
        let adp = self.scene.adp_at(p)?;
        self.db
            .entries
            .iter()
            .map(|e| {
                if adp.is_zero() || e.adp.is_zero() {
                    Ok(0.0)
                } else {
                    similarity(&adp, &e.adp)
                }
            })
            .collect()
    }

    /// Walks `WALK_LENGTH` frames, distorted from frame `DISTORT_FROM` on
    /// under `scenario`, and tracks them with and without recovery.
    pub fn track(&self, scenario: &str, seed: u64) -> Result<Vec<TrackedFrame>> {
        let scenario: Scenario = scenario.parse()?;
        let distortion = scenario.kind().map(|kind| DistortionScenario::new(kind, seed));
        let sequence = build_test_set(
            &self.scene,
            &self.grid,
            1,
            WALK_LENGTH,
            DISTORT_FROM,
            distortion.as_ref(),
            seed,
        )?
        .remove(0);
        let pipeline = Pipeline::new(&self.db, &self.knn, &self.tracker, PipelineConfig::new(self.thresholds))?;
        let adps: Vec<Adp> = sequence.frames.iter().map(|f| f.adp.clone()).collect();
        let estimates = pipeline.run_sequence(&adps)?;
        sequence
            .frames
            .iter()
            .zip(estimates)
            .map(|(frame, est)| {
                let plain = if frame.adp.is_zero() { None } else { Some(self.knn.locate(&frame.adp)?) };
                Ok(TrackedFrame {
                    truth: frame.true_position,
                    tracked: est.position,
                    plain,
                    verdict: est.verdict,
                })
            })
            .collect()
    }
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    core: DemoCore,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(environment: &str) -> std::result::Result<Demo, JsError> {
        DemoCore::new(environment).map(|core| Demo { core }).map_err(js)
    }

    /// `[origin_x, origin_y, spacing, n_rows, n_cols]`
    pub fn grid(&self) -> Vec<f64> {
        let g = self.core.grid();
        vec![g.origin.x, g.origin.y, g.spacing, g.n_rows as f64, g.n_cols as f64]
    }

    /// `[angle bins, delay bins]`
    pub fn adp_dims(&self) -> Vec<u32> {
        let (a, d) = self.core.adp_dims();
        vec![a as u32, d as u32]
    }

    /// `[thr1, thr2, thr3]`
    pub fn thresholds(&self) -> Vec<f64> {
        let t = self.core.thresholds();
        vec![t.thr1, t.thr2, t.thr3]
    }

    /// Row-major profile pixels, angle bins by delay bins.
    pub fn adp_at(&self, x: f64, y: f64) -> std::result::Result<Vec<f64>, JsError> {
        Ok(self.core.adp_at(Vec2::new(x, y)).map_err(js)?.as_slice().to_vec())
    }

    pub fn similarity_map(&self, x: f64, y: f64) -> std::result::Result<Vec<f64>, JsError> {
        self.core.similarity_map(Vec2::new(x, y)).map_err(js)
    }

    /// Seven numbers per frame: truth x/y, tracked x/y, plain x/y (NaN on a
    /// lost link) and the verdict (0 accurate, 1 distorted, 2 lost link).
    pub fn track(&self, scenario: &str, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
        let frames = self.core.track(scenario, seed as u64).map_err(js)?;
        Ok(frames
            .iter()
            .flat_map(|f| {
                let plain = f.plain.unwrap_or(Vec2::new(f64::NAN, f64::NAN));
                let verdict = match f.verdict {
                    Verdict::Accurate => 0.0,
                    Verdict::Distorted => 1.0,
                    Verdict::LostLink => 2.0,
                };
                [f.truth.x, f.truth.y, f.tracked.x, f.tracked.y, plain.x, plain.y, verdict]
            })
            .collect())
    }
}
