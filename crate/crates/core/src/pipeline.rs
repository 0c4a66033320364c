//! The tracking loop: flag distorted measurements against the fingerprint
//! neighborhood of the static estimate, and recover distorted frames by
//! fusing a predicted frame with nearby fingerprints.

use serde::{Deserialize, Serialize};

use crate::adp::{similarity, Adp};
use crate::error::{Error, Result};
use crate::fingerprint::FingerprintDb;
use crate::geometry::Vec2;
use crate::localize::{normalized_weights, weighted_centroid, Localizer};
use crate::predictor::{FrameHistory, Predictor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Neighbor radius around the static estimate when checking a frame, m.
    pub thr1: f64,
    /// A frame is accurate when some neighbor is more similar than this.
    pub thr2: f64,
    /// Neighbor radius around the previous estimate during recovery, m.
    pub thr3: f64,
}

impl Thresholds {
    /// Radii of three and two grid spacings.
    pub fn for_spacing(spacing: f64, thr2: f64) -> Self {
        Self {
            thr1: 3.0 * spacing,
            thr2,
            thr3: 2.0 * spacing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.thr1 > 0.0 && self.thr3 > 0.0) {
            return Err(Error::Config("thr1 and thr3 must be positive".into()));
        }
        if !(self.thr2 > 0.0 && self.thr2 < 1.0) {
            return Err(Error::Config("thr2 must lie strictly between 0 and 1".into()));
        }
        Ok(())
    }
}

/// For every usable fingerprint, the best similarity to another fingerprint
/// within `radius`; ascending.
pub fn neighborhood_similarities(db: &FingerprintDb, radius: f64) -> Result<Vec<f64>> {
    let mut best = Vec::with_capacity(db.len());
    for (i, e) in db.entries.iter().enumerate() {
        if e.lost_link {
            continue;
        }
        let mut top: Option<f64> = None;
        for n in db.neighbors_within(e.position, radius) {
            if n.index == i || n.entry.lost_link {
                continue;
            }
            let s = similarity(&e.adp, &n.entry.adp)?;
            top = Some(top.map_or(s, |t| t.max(s)));
        }
        best.extend(top);
    }
    best.sort_by(f64::total_cmp);
    Ok(best)
}

/// Nearest-rank percentile (`q` in [0, 100]) of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((q / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// 5th percentile of the neighborhood similarities, kept inside (0, 1).
pub fn calibrate_thr2(db: &FingerprintDb, thr1: f64) -> Result<f64> {
    let sims = neighborhood_similarities(db, thr1)?;
    let p = percentile(&sims, 5.0).ok_or_else(|| {
        Error::Config("calibration needs at least two usable fingerprints within thr1".into())
    })?;
    Ok(p.clamp(1e-9, 1.0 - 1e-9))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accurate,
    Distorted,
    LostLink,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub verdict: Verdict,
    /// Static localizer output, absent for a lost link.
    pub estimate: Option<Vec2>,
    pub best_similarity: Option<f64>,
    pub neighbor_count: usize,
}

/// Flags a measurement as accurate when some fingerprint within `thr1` of
/// the static estimate is more similar than `thr2`.
pub fn detect_distorted(adp: &Adp, localizer: &dyn Localizer, db: &FingerprintDb, thr: &Thresholds) -> Result<Detection> {
    if adp.is_zero() {
        return Ok(Detection {
            verdict: Verdict::LostLink,
            estimate: None,
            best_similarity: None,
            neighbor_count: 0,
        });
    }
    let x = localizer.locate(adp)?;
    let mut best: Option<f64> = None;
    let mut count = 0;
    for n in db.neighbors_within(x, thr.thr1) {
        if n.entry.lost_link {
            continue;
        }
        count += 1;
        let s = similarity(adp, &n.entry.adp)?;
        best = Some(best.map_or(s, |b| b.max(s)));
    }
    let verdict = if best.is_some_and(|s| s > thr.thr2) {
        Verdict::Accurate
    } else {
        Verdict::Distorted
    };
    Ok(Detection {
        verdict,
        estimate: Some(x),
        best_similarity: best,
        neighbor_count: count,
    })
}

/// What the recovery step contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recovery {
    /// Similarity-weighted fusion of nearby fingerprints and the prediction.
    #[default]
    Fusion,
    /// The static localizer applied to the predicted frame alone.
    PredictionOnly,
}

/// Which frame enters the history after a recovered frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feedback {
    #[default]
    Recovered,
    Predicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub thresholds: Thresholds,
    /// History length f.
    pub history: usize,
    pub recovery: Recovery,
    pub feedback: Feedback,
}

impl PipelineConfig {
    pub fn new(thresholds: Thresholds) -> Self {
        Self {
            thresholds,
            history: 10,
            recovery: Recovery::Fusion,
            feedback: Feedback::Recovered,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if self.history == 0 {
            return Err(Error::Config("history length must be at least 1".into()));
        }
        Ok(())
    }
}

/// How a recovered position was obtained when the regular path did not apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Nothing to fuse yet; the static estimate of the measurement was used.
    StaticEstimate,
    /// Lost link without a usable prediction; the previous position was kept.
    HoldPosition,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Best neighbor similarity found by the detector.
    pub best_similarity: Option<f64>,
    /// Members fused during recovery, predicted member included.
    pub neighbor_count: usize,
    /// Fusion weights; the predicted member, when present, comes last.
    pub weights: Vec<f64>,
    /// Weight carried by the predicted member.
    pub predicted_weight: Option<f64>,
    /// Static estimate of the predicted frame.
    pub predicted_position: Option<Vec2>,
    pub fallback: Option<Fallback>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEstimate {
    pub position: Vec2,
    /// The accepted measurement, or the recovered frame.
    pub recovered_adp: Adp,
    pub predicted_adp: Option<Adp>,
    pub verdict: Verdict,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineState {
    pub history: FrameHistory,
    pub prev_position: Option<Vec2>,
    pub frame_index: usize,
}

impl PipelineState {
    pub fn new(history: usize) -> Self {
        Self {
            history: FrameHistory::new(history),
            prev_position: None,
            frame_index: 0,
        }
    }
}

/// Shared, read-only parts of the loop.
pub struct Pipeline<'a> {
    pub db: &'a FingerprintDb,
    pub localizer: &'a dyn Localizer,
    pub predictor: &'a dyn Predictor,
    pub config: PipelineConfig,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        db: &'a FingerprintDb,
        localizer: &'a dyn Localizer,
        predictor: &'a dyn Predictor,
        config: PipelineConfig,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            db,
            localizer,
            predictor,
            config,
        })
    }

    pub fn detect(&self, adp: &Adp) -> Result<Detection> {
        detect_distorted(adp, self.localizer, self.db, &self.config.thresholds)
    }

    /// Processes one measurement and advances the state.
    pub fn step(&self, state: &mut PipelineState, adp: &Adp) -> Result<FrameEstimate> {
        let detection = self.detect(adp)?;
        let estimate = match detection.verdict {
            Verdict::Accurate => {
                let position = detection.estimate.expect("accurate frames are localized");
                state.history.push(adp.clone());
                FrameEstimate {
                    position,
                    recovered_adp: adp.clone(),
                    predicted_adp: None,
                    verdict: Verdict::Accurate,
                    diagnostics: Diagnostics {
                        best_similarity: detection.best_similarity,
                        ..Diagnostics::default()
                    },
                }
            }
            verdict => {
                let mut est = self.recover_and_locate(state, adp, detection.estimate)?;
                est.verdict = verdict;
                est.diagnostics.best_similarity = detection.best_similarity;
                est
            }
        };
        state.prev_position = Some(estimate.position);
        state.frame_index += 1;
        Ok(estimate)
    }

    /// Recovery for a frame already judged distorted (or lost). Updates the
    /// history; the caller records the position.
    pub fn recover_and_locate(
        &self,
        state: &mut PipelineState,
        adp: &Adp,
        static_estimate: Option<Vec2>,
    ) -> Result<FrameEstimate> {
        let lost = adp.is_zero();
        let predicted = if state.history.is_empty() {
            None
        } else {
            Some(self.predictor.predict_next(&state.history.to_vec())?)
        };
        let predicted = predicted.filter(|p| !p.is_zero());
        let predicted_position = match &predicted {
            Some(p) => Some(self.localizer.locate(p)?),
            None => None,
        };
        let mut diagnostics = Diagnostics {
            predicted_position,
            ..Diagnostics::default()
        };

        let (position, recovered) = if lost || self.config.recovery == Recovery::PredictionOnly {
            match (predicted_position, &predicted) {
                (Some(x), Some(p)) => (x, p.clone()),
                _ => match (lost, state.prev_position, static_estimate) {
                    (false, _, Some(x)) => {
                        diagnostics.fallback = Some(Fallback::StaticEstimate);
                        (x, adp.clone())
                    }
                    (true, Some(prev), _) if !state.history.is_empty() => {
                        diagnostics.fallback = Some(Fallback::HoldPosition);
                        (prev, adp.clone())
                    }
                    _ => return Err(Error::EmptyNeighborhood),
                },
            }
        } else {
            let mut points = Vec::new();
            let mut members: Vec<&Adp> = Vec::new();
            if let Some(prev) = state.prev_position {
                for n in self.db.neighbors_within(prev, self.config.thresholds.thr3) {
                    if !n.entry.lost_link {
                        points.push(n.position);
                        members.push(&n.entry.adp);
                    }
                }
            }
            if let (Some(x), Some(p)) = (predicted_position, &predicted) {
                points.push(x);
                members.push(p);
            }
            if members.is_empty() {
                let x = static_estimate.ok_or(Error::EmptyNeighborhood)?;
                diagnostics.fallback = Some(Fallback::StaticEstimate);
                (x, adp.clone())
            } else {
                let scores = members
                    .iter()
                    .map(|m| similarity(adp, m))
                    .collect::<Result<Vec<f64>>>()?;
                let weights = normalized_weights(&scores);
                let position = weighted_centroid(&points, &weights);
                let recovered = blend(&members, &weights);
                diagnostics.neighbor_count = members.len();
                if predicted.is_some() {
                    diagnostics.predicted_weight = weights.last().copied();
                }
                diagnostics.weights = weights;
                (position, recovered)
            }
        };

        let feedback = match (self.config.feedback, &predicted) {
            (Feedback::Predicted, Some(p)) => Some(p.clone()),
            (Feedback::Predicted, None) => None,
            (Feedback::Recovered, _) => Some(recovered.clone()).filter(|r| !r.is_zero()),
        };
        if let Some(f) = feedback {
            state.history.push(f);
        }
        Ok(FrameEstimate {
            position,
            recovered_adp: recovered,
            predicted_adp: predicted,
            verdict: if lost { Verdict::LostLink } else { Verdict::Distorted },
            diagnostics,
        })
    }

    /// Runs the loop over a whole sequence of measurements.
    pub fn run_sequence(&self, adps: &[Adp]) -> Result<Vec<FrameEstimate>> {
        let mut state = PipelineState::new(self.config.history);
        adps.iter().map(|a| self.step(&mut state, a)).collect()
    }
}

/// Pixelwise convex combination of the member profiles.
fn blend(members: &[&Adp], weights: &[f64]) -> Adp {
    let (n_t, n_c) = members[0].dims();
    let mut out = vec![0.0; n_t * n_c];
    for (m, w) in members.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(m.as_slice()) {
            *o += w * v;
        }
    }
    Adp::from_vec(n_t, n_c, out).expect("convex combination of valid profiles")
}

pub const ESTIMATE_SCHEMA_VERSION: u32 = 1;

/// One line of the JSON-lines estimate stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub schema: u32,
    pub sequence: u32,
    pub frame: usize,
    pub position: Vec2,
    pub truth: Option<Vec2>,
    pub verdict: Verdict,
    pub diagnostics: Diagnostics,
}

impl EstimateRecord {
    pub fn new(sequence: u32, frame: usize, estimate: &FrameEstimate, truth: Option<Vec2>) -> Self {
        Self {
            schema: ESTIMATE_SCHEMA_VERSION,
            sequence,
            frame,
            position: estimate.position,
            truth,
            verdict: estimate.verdict,
            diagnostics: estimate.diagnostics.clone(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("serializable record")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ArrayConfig, OfdmConfig};
    use crate::dynamics::{generate_sequence, random_walk, DistortionKind, DistortionScenario, WalkMode};
    use crate::environment::Environment;
    use crate::fingerprint::{build_db, GridSpec};
    use crate::localize::FingerprintKnn;
    use crate::predictor::PeakTracker;
    use crate::scene::Scene;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn grid(n: usize) -> GridSpec {
        GridSpec {
            origin: Vec2::new(2.0, -4.875),
            spacing: 0.25,
            n_rows: n,
            n_cols: n,
        }
    }

    fn db(n: usize) -> Arc<FingerprintDb> {
        Arc::new(build_db(&Environment::sparse(), &grid(n), &ArrayConfig::default(), &OfdmConfig::default()).unwrap())
    }

    fn thresholds(db: &FingerprintDb) -> Thresholds {
        let thr1 = 0.75;
        Thresholds::for_spacing(db.grid.spacing, calibrate_thr2(db, thr1).unwrap())
    }

    /// Returns a fixed position regardless of input.
    struct Fixed(Vec2);
    impl Localizer for Fixed {
        fn locate(&self, _: &Adp) -> Result<Vec2> {
            Ok(self.0)
        }
    }

    /// Predicts a fixed frame.
    struct Constant(Adp);
    impl Predictor for Constant {
        fn predict_next(&self, _: &[Adp]) -> Result<Adp> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn percentile_is_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 5.0), Some(1.0));
        assert_eq!(percentile(&v, 50.0), Some(10.0));
        assert_eq!(percentile(&v, 100.0), Some(20.0));
        assert_eq!(percentile(&[], 5.0), None);
    }

    #[test]
    fn calibrated_thr2_is_strictly_inside_unit_interval() {
        let d = db(10);
        let t = calibrate_thr2(&d, 0.75).unwrap();
        assert!(t > 0.0 && t < 1.0);
        let sims = neighborhood_similarities(&d, 0.75).unwrap();
        assert!(sims.iter().filter(|s| **s < t).count() as f64 <= 0.05 * sims.len() as f64);
    }

    #[test]
    fn database_profiles_are_accurate_and_zero_is_lost() {
        let d = db(8);
        let knn = FingerprintKnn::new(d.clone(), 3);
        let thr = thresholds(&d);
        for e in d.entries.iter().step_by(5) {
            assert_eq!(detect_distorted(&e.adp, &knn, &d, &thr).unwrap().verdict, Verdict::Accurate);
        }
        let zero = Adp::zeros(16, 16);
        assert_eq!(detect_distorted(&zero, &knn, &d, &thr).unwrap().verdict, Verdict::LostLink);
    }

    #[test]
    fn verdict_is_scale_invariant_for_scale_free_localizers() {
        let d = db(8);
        let knn = FingerprintKnn::new(d.clone(), 3);
        let thr = thresholds(&d);
        let scene = Scene::new(Environment::sparse(), ArrayConfig::default(), OfdmConfig::default()).unwrap();
        let s = DistortionScenario::new(DistortionKind::LosBlockage, 3);
        let walk = random_walk(&grid(8), WalkMode::Mode2, 6, 1);
        let seq = generate_sequence(&scene, &walk, Some(&s), 3, 0).unwrap();
        for f in &seq.frames {
            let a = detect_distorted(&f.adp, &knn, &d, &thr).unwrap().verdict;
            let b = detect_distorted(&f.adp.scaled(7.5), &knn, &d, &thr).unwrap().verdict;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn equal_similarities_recover_the_centroid() {
        let mut d = (*db(3)).clone();
        let flat = Adp::from_vec(16, 16, vec![1.0; 256]).unwrap();
        for e in &mut d.entries {
            e.adp = flat.clone();
        }
        let loc = Fixed(Vec2::new(100.0, 100.0));
        let pred = Constant(Adp::zeros(16, 16));
        let cfg = PipelineConfig::new(Thresholds::for_spacing(0.25, 0.5));
        let p = Pipeline::new(&d, &loc, &pred, cfg).unwrap();
        let mut state = PipelineState::new(10);
        state.history.push(flat.clone());
        let center = d.grid.point(1, 1);
        state.prev_position = Some(center);
        let est = p.recover_and_locate(&mut state, &flat, None).unwrap();
        // thr3 = 0.5 m around the center reaches the 3x3 block minus nothing
        assert_eq!(est.diagnostics.neighbor_count, 9);
        assert!(est.position.distance(center) < 1e-12);
        assert!((est.diagnostics.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unrelated_prediction_leaves_the_single_neighbor() {
        let mut d = (*db(3)).clone();
        let loc = Fixed(Vec2::new(50.0, 50.0));
        // a prediction orthogonal to the measurement gets zero weight
        let mut a = vec![0.0; 256];
        a[0] = 1.0;
        let mut b = vec![0.0; 256];
        b[255] = 1.0;
        let measured = Adp::from_vec(16, 16, a).unwrap();
        d.entries[4].adp = measured.clone().scaled(0.5);
        let pred = Constant(Adp::from_vec(16, 16, b).unwrap());
        let thr = Thresholds { thr1: 0.75, thr2: 0.5, thr3: 0.1 };
        let p = Pipeline::new(&d, &loc, &pred, PipelineConfig::new(thr)).unwrap();
        let mut state = PipelineState::new(10);
        state.history.push(measured.clone());
        state.prev_position = Some(d.entries[4].position);
        let est = p.recover_and_locate(&mut state, &measured, None).unwrap();
        let s = similarity(&measured, &d.entries[4].adp).unwrap();
        assert!(s > 0.0);
        assert_eq!(est.diagnostics.predicted_weight, Some(0.0));
        assert_eq!(est.position, d.entries[4].position);
    }

    #[test]
    fn lost_link_uses_the_prediction_alone() {
        let d = db(4);
        let x_hat = Vec2::new(3.3, -0.4);
        let loc = Fixed(x_hat);
        let pred_frame = d.entries[2].adp.clone();
        let pred = Constant(pred_frame.clone());
        let p = Pipeline::new(&d, &loc, &pred, PipelineConfig::new(thresholds(&d))).unwrap();
        let mut state = PipelineState::new(10);
        state.history.push(d.entries[0].adp.clone());
        state.prev_position = Some(d.entries[0].position);
        let est = p.step(&mut state, &Adp::zeros(16, 16)).unwrap();
        assert_eq!(est.verdict, Verdict::LostLink);
        assert_eq!(est.position, x_hat);
        assert_eq!(est.recovered_adp, pred_frame);
        assert_eq!(state.prev_position, Some(x_hat));
    }

    #[test]
    fn lost_link_with_no_history_is_unrecoverable() {
        let d = db(3);
        let loc = Fixed(Vec2::new(0.0, 0.0));
        let pred = Constant(Adp::zeros(16, 16));
        let p = Pipeline::new(&d, &loc, &pred, PipelineConfig::new(thresholds(&d))).unwrap();
        let err = p.run_sequence(&[Adp::zeros(16, 16)]).unwrap_err();
        assert!(matches!(err, Error::EmptyNeighborhood));
    }

    #[test]
    fn accurate_sequence_passes_straight_through() {
        let d = db(12);
        let knn = FingerprintKnn::new(d.clone(), 3);
        let tracker = PeakTracker::default();
        let p = Pipeline::new(&d, &knn, &tracker, PipelineConfig::new(thresholds(&d))).unwrap();
        let scene = Scene::new(Environment::sparse(), ArrayConfig::default(), OfdmConfig::default()).unwrap();
        let walk = random_walk(&grid(12), WalkMode::Mode1, 15, 4);
        let seq = generate_sequence(&scene, &walk, None, 15, 0).unwrap();
        let adps: Vec<Adp> = seq.frames.iter().map(|f| f.adp.clone()).collect();
        let out = p.run_sequence(&adps).unwrap();
        for (e, a) in out.iter().zip(&adps) {
            assert_eq!(e.verdict, Verdict::Accurate);
            assert_eq!(e.position, knn.locate(a).unwrap());
        }
    }

    #[test]
    fn blocked_suffix_is_flagged_and_recovered_in_the_hull() {
        let d = db(16);
        let knn = FingerprintKnn::new(d.clone(), 3);
        let tracker = PeakTracker::default();
        let p = Pipeline::new(&d, &knn, &tracker, PipelineConfig::new(thresholds(&d))).unwrap();
        let scene = Scene::new(Environment::sparse(), ArrayConfig::default(), OfdmConfig::default()).unwrap();
        let s = DistortionScenario::new(DistortionKind::LosBlockage, 9);
        let walk = random_walk(&grid(16), WalkMode::Mode1, 12, 21);
        let seq = generate_sequence(&scene, &walk, Some(&s), 6, 0).unwrap();
        let adps: Vec<Adp> = seq.frames.iter().map(|f| f.adp.clone()).collect();
        let out = p.run_sequence(&adps).unwrap();
        let flagged = out.iter().zip(&seq.frames).filter(|(e, f)| (e.verdict != Verdict::Accurate) == f.distorted).count();
        assert!(flagged >= 10, "{flagged}/12 verdicts match");
        for e in out.iter().filter(|e| e.verdict == Verdict::Distorted) {
            assert!((e.diagnostics.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(e.recovered_adp.as_slice().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn estimate_records_round_trip_as_json() {
        let est = FrameEstimate {
            position: Vec2::new(1.0, 2.0),
            recovered_adp: Adp::zeros(2, 2),
            predicted_adp: None,
            verdict: Verdict::Distorted,
            diagnostics: Diagnostics {
                weights: vec![0.25, 0.75],
                predicted_weight: Some(0.75),
                ..Diagnostics::default()
            },
        };
        let rec = EstimateRecord::new(3, 7, &est, Some(Vec2::new(1.5, 2.0)));
        let line = rec.to_json_line();
        assert!(!line.contains('\n'));
        assert_eq!(serde_json::from_str::<EstimateRecord>(&line).unwrap(), rec);
    }

    proptest! {
        #[test]
        fn fusion_is_convex(scores in proptest::collection::vec(0.0f64..1.0, 1..8), seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = crate::rng::rng_from_seed(seed);
            let points: Vec<Vec2> = scores.iter().map(|_| Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))).collect();
            let w = normalized_weights(&scores);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let x = weighted_centroid(&points, &w);
            let (lo_x, hi_x) = points.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.x), a.1.max(p.x)));
            let (lo_y, hi_y) = points.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.y), a.1.max(p.y)));
            prop_assert!(x.x >= lo_x - 1e-9 && x.x <= hi_x + 1e-9 && x.y >= lo_y - 1e-9 && x.y <= hi_y + 1e-9);
        }
    }
}
