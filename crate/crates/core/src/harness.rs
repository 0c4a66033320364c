//! Experiment orchestration: configuration, artifact reuse, the four-method
//! comparison over seeded test sequences, metrics and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adp::Adp;
use crate::channel::{ArrayConfig, OfdmConfig};
use crate::dynamics::{build_test_set, build_training_set, DistortionKind, DistortionScenario, FrameSequence, WalkMode};
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::fingerprint::{build_db_in, load_db, save_db, FingerprintDb, GridSpec};
use crate::geometry::Vec2;
use crate::localize::{
    train_classifier, train_regressor, ClassifierGrid, ClassifierLocalizer, Localizer, NetworkConfig,
    RegressorLocalizer, TrainedLocalizer,
};
use crate::nn::{Optimizer, TrainConfig};
use crate::pipeline::{
    calibrate_thr2, EstimateRecord, Feedback, Pipeline, PipelineConfig, Recovery, Thresholds, Verdict,
};
use crate::predictor::{
    train_conv_recurrent, ConvRecurrent, ConvRecurrentConfig, PeakTracker, PeakTrackingConfig, PredictorKind,
    PredictorReport,
};
use crate::rng;
use crate::scene::Scene;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    None,
    #[default]
    LosBlock,
    NlosBlock,
    NlosAdd,
}

impl Scenario {
    pub const DISTORTING: [Scenario; 3] = [Scenario::LosBlock, Scenario::NlosBlock, Scenario::NlosAdd];

    pub fn kind(self) -> Option<DistortionKind> {
        match self {
            Scenario::None => None,
            Scenario::LosBlock => Some(DistortionKind::LosBlockage),
            Scenario::NlosBlock => Some(DistortionKind::NlosBlockage),
            Scenario::NlosAdd => Some(DistortionKind::NlosAddition),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::None => "none",
            Scenario::LosBlock => "los-block",
            Scenario::NlosBlock => "nlos-block",
            Scenario::NlosAdd => "nlos-add",
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Scenario::None),
            "los-block" => Ok(Scenario::LosBlock),
            "nlos-block" => Ok(Scenario::NlosBlock),
            "nlos-add" => Ok(Scenario::NlosAdd),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

/// The static localizer used inside the tracking loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalizerChoice {
    #[default]
    Regressor,
    ClassifierWknn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorChoice {
    #[default]
    PeakTrack,
    ConvRecurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thr1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thr2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thr3: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSettings {
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        Self { rows: 8, cols: 8, k: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorTraining {
    /// Undistorted Mode-1 sequences generated for training.
    pub n_sequences: usize,
    pub train: TrainConfig,
}

impl Default for PredictorTraining {
    fn default() -> Self {
        Self {
            n_sequences: 200,
            train: TrainConfig {
                epochs: 20,
                learning_rate: 0.005,
                batch_size: 16,
                seed: 0,
                optimizer: adam(),
                final_lr_fraction: 0.1,
                shuffle: true,
            },
        }
    }
}

fn adam() -> Optimizer {
    Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
    }
}

/// Default training schedule for both localizer heads.
pub fn default_localizer_training() -> TrainConfig {
    TrainConfig {
        epochs: 100,
        learning_rate: 0.01,
        batch_size: 32,
        seed: 0,
        optimizer: adam(),
        final_lr_fraction: 0.05,
        shuffle: true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Preset name (`sparse`, `rich`, `free-space`) or path to an
    /// environment TOML file.
    pub environment: String,
    pub grid: GridSpec,
    pub array: ArrayConfig,
    pub ofdm: OfdmConfig,
    pub scenario: Scenario,
    pub addition_level_db: f64,
    pub persistent_foreground: bool,
    pub pixel_mask: bool,
    pub n_sequences: usize,
    pub sequence_length: usize,
    pub distort_from: usize,
    pub history: usize,
    pub thresholds: ThresholdOverrides,
    pub feedback: Feedback,
    pub localizer: LocalizerChoice,
    pub predictor: PredictorChoice,
    pub network: NetworkConfig,
    pub localizer_training: TrainConfig,
    pub classifier: ClassifierSettings,
    pub classifier_training: TrainConfig,
    pub peak_tracking: PeakTrackingConfig,
    pub conv_recurrent: ConvRecurrentConfig,
    pub predictor_training: PredictorTraining,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            environment: "sparse".into(),
            grid: GridSpec::default(),
            array: ArrayConfig::default(),
            ofdm: OfdmConfig::default(),
            scenario: Scenario::LosBlock,
            addition_level_db: -6.0,
            persistent_foreground: true,
            pixel_mask: false,
            n_sequences: 200,
            sequence_length: 20,
            distort_from: 10,
            history: 10,
            thresholds: ThresholdOverrides::default(),
            feedback: Feedback::Recovered,
            localizer: LocalizerChoice::Regressor,
            predictor: PredictorChoice::PeakTrack,
            network: NetworkConfig::default(),
            localizer_training: default_localizer_training(),
            classifier: ClassifierSettings::default(),
            classifier_training: default_localizer_training(),
            peak_tracking: PeakTrackingConfig::default(),
            conv_recurrent: ConvRecurrentConfig::default(),
            predictor_training: PredictorTraining::default(),
            seed: 7,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

const PRESETS: [&str; 3] = ["sparse", "rich", "free-space"];

impl ExperimentConfig {
    /// Parses a config; keys missing at any depth keep their default value.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge_tables(&mut merged, user);
        merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; a relative environment path is taken relative
    /// to the config file's directory.
    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if !PRESETS.contains(&cfg.environment.as_str()) {
            let env_path = PathBuf::from(&cfg.environment);
            if env_path.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.environment = dir.join(env_path).to_string_lossy().into_owned();
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        self.grid.validate()?;
        self.array.validate()?;
        self.ofdm.validate()?;
        if self.n_sequences == 0 || self.sequence_length == 0 {
            return fail("n_sequences and sequence_length must be at least 1");
        }
        if self.distort_from > self.sequence_length {
            return fail("distort_from must not exceed sequence_length");
        }
        if self.history == 0 {
            return fail("history must be at least 1");
        }
        if !(self.addition_level_db < 0.0) {
            return fail("addition_level_db must be negative");
        }
        if self.classifier.rows == 0 || self.classifier.cols == 0 || self.classifier.k == 0 {
            return fail("classifier rows, cols and k must be at least 1");
        }
        if self.predictor == PredictorChoice::ConvRecurrent && self.predictor_training.n_sequences == 0 {
            return fail("predictor_training.n_sequences must be at least 1");
        }
        self.localizer_training.validate()?;
        self.classifier_training.validate()?;
        self.predictor_training.train.validate()?;
        self.peak_tracking.validate()?;
        let t = &self.thresholds;
        if t.thr1.is_some_and(|v| !(v > 0.0)) || t.thr3.is_some_and(|v| !(v > 0.0)) {
            return fail("thr1 and thr3 must be positive");
        }
        if t.thr2.is_some_and(|v| !(v > 0.0 && v < 1.0)) {
            return fail("thr2 must lie strictly between 0 and 1");
        }
        Ok(())
    }

    pub fn resolve_environment(&self) -> Result<Environment> {
        if PRESETS.contains(&self.environment.as_str()) {
            return Environment::preset(&self.environment);
        }
        Environment::load(&self.environment).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("cannot read environment {}: {io}", self.environment)),
            other => other,
        })
    }

    pub fn scene(&self) -> Result<Scene> {
        Scene::new(self.resolve_environment()?, self.array, self.ofdm)
    }

    pub fn seeds(&self) -> DerivedSeeds {
        let d = |k: u64, extra: u64| rng::derive_seed(self.seed, TAG_EXPERIMENT ^ extra, k);
        DerivedSeeds {
            master: self.seed,
            localizer: d(1, self.localizer_training.seed),
            classifier: d(2, self.classifier_training.seed),
            predictor_data: d(3, 0),
            predictor_training: d(4, self.predictor_training.train.seed),
            sequences: d(5, 0),
            scenario: d(6, 0),
        }
    }

    pub fn distortion(&self, scenario: Scenario) -> Option<DistortionScenario> {
        scenario.kind().map(|kind| DistortionScenario {
            kind,
            addition_level_db: self.addition_level_db,
            rng_seed: self.seeds().scenario,
            persistent_foreground: self.persistent_foreground,
            pixel_mask: self.pixel_mask,
        })
    }
}

const TAG_EXPERIMENT: u64 = 0x4558_5052;

/// Every seed the experiment uses, derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedSeeds {
    pub master: u64,
    pub localizer: u64,
    pub classifier: u64,
    pub predictor_data: u64,
    pub predictor_training: u64,
    pub sequences: u64,
    pub scenario: u64,
}

/// 64-bit FNV-1a, used to tag cached artifacts with the config they came from.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn digest<T: Serialize>(parts: &T) -> String {
    let json = serde_json::to_vec(parts).expect("serializable config");
    format!("{:016x}", fnv1a64(&json))
}

/// Directory of reusable artifacts. Each artifact has a `.digest` file
/// holding the digest of the configuration it was built from; a mismatch
/// forces a rebuild.
#[derive(Debug, Clone)]
pub struct ArtifactStore {
    pub dir: PathBuf,
}

pub const DB_FILE: &str = "fingerprints.adpf";
pub const REGRESSOR_FILE: &str = "localizer-regressor.ckpt";
pub const CLASSIFIER_FILE: &str = "localizer-classifier.ckpt";
pub const PREDICTOR_FILE: &str = "predictor-conv-recurrent.ckpt";
pub const THRESHOLDS_FILE: &str = "thresholds.toml";

impl ArtifactStore {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn digest_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.digest"))
    }

    fn matches(&self, name: &str, digest: &str) -> bool {
        self.path(name).exists() && fs::read_to_string(self.digest_path(name)).is_ok_and(|d| d.trim() == digest)
    }

    fn cached<T>(
        &self,
        name: &str,
        digest: &str,
        load: impl FnOnce(&FsPath) -> Result<T>,
        build: impl FnOnce() -> Result<T>,
        save: impl FnOnce(&T, &FsPath) -> Result<()>,
    ) -> Result<(T, bool)> {
        if self.matches(name, digest) {
            match load(&self.path(name)) {
                Ok(v) => return Ok((v, true)),
                Err(e) => log::warn!("ignoring unreadable {name}: {e}"),
            }
        }
        let v = build()?;
        save(&v, &self.path(name))?;
        fs::write(self.digest_path(name), format!("{digest}\n"))?;
        Ok((v, false))
    }
}

/// Digest of everything the fingerprint database depends on.
pub fn db_digest(cfg: &ExperimentConfig, env: &Environment) -> String {
    digest(&(env, &cfg.grid, &cfg.array, &cfg.ofdm))
}

fn timed<T>(timings: &mut Vec<StageTime>, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    timings.push(StageTime {
        stage: stage.to_string(),
        seconds: start.elapsed().as_secs_f64(),
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub thresholds: Thresholds,
    /// thr2 from the database calibration, whether or not overridden.
    pub thr2_calibrated: f64,
    pub thr2_overridden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub regressor_loss: Option<f64>,
    pub classifier_loss: Option<f64>,
    pub predictor: Option<PredictorReport>,
    /// Artifacts loaded from the store instead of rebuilt.
    pub reused: Vec<String>,
}

/// Everything the comparison needs, built once and shared across scenarios.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub scene: Scene,
    pub db: Arc<FingerprintDb>,
    pub regressor: RegressorLocalizer,
    pub classifier: ClassifierLocalizer,
    pub predictor: PredictorKind,
    pub calibration: Calibration,
    pub training: TrainingSummary,
    pub timings: Vec<StageTime>,
}

pub fn obtain_db(cfg: &ExperimentConfig, scene: &Scene, store: Option<&ArtifactStore>) -> Result<(FingerprintDb, bool)> {
    let build = || {
        let mut db = build_db_in(scene, &cfg.grid)?;
        db.meta.seed = cfg.seed;
        Ok(db)
    };
    match store {
        Some(s) => s.cached(
            DB_FILE,
            &db_digest(cfg, &scene.env),
            |p| load_db(p),
            build,
            |db, p| save_db(db, p),
        ),
        None => Ok((build()?, false)),
    }
}

pub fn calibrate(cfg: &ExperimentConfig, db: &FingerprintDb) -> Result<Calibration> {
    let spacing = cfg.grid.spacing;
    let thr1 = cfg.thresholds.thr1.unwrap_or(3.0 * spacing);
    let thr3 = cfg.thresholds.thr3.unwrap_or(2.0 * spacing);
    let thr2_calibrated = calibrate_thr2(db, thr1)?;
    let thresholds = Thresholds {
        thr1,
        thr2: cfg.thresholds.thr2.unwrap_or(thr2_calibrated),
        thr3,
    };
    thresholds.validate()?;
    Ok(Calibration {
        thresholds,
        thr2_calibrated,
        thr2_overridden: cfg.thresholds.thr2.is_some(),
    })
}

fn seeded(train: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..*train }
}

/// Trains (or loads) the regression localizer.
pub fn obtain_regressor(
    cfg: &ExperimentConfig,
    db: &Arc<FingerprintDb>,
    db_tag: &str,
    store: Option<&ArtifactStore>,
) -> Result<(RegressorLocalizer, Option<f64>, bool)> {
    let train = seeded(&cfg.localizer_training, cfg.seeds().localizer);
    let mut loss = None;
    let mut build = || {
        let (r, report) = train_regressor(db, &cfg.network, &train)?;
        loss = Some(report.final_loss);
        Ok(TrainedLocalizer::Regressor(r))
    };
    let (trained, reused) = match store {
        Some(s) => s.cached(
            REGRESSOR_FILE,
            &digest(&(db_tag, &cfg.network, &train)),
            |p| TrainedLocalizer::load(p, db.clone()),
            build,
            |m, p| m.save(p),
        )?,
        None => (build()?, false),
    };
    match trained {
        TrainedLocalizer::Regressor(r) => Ok((r, loss, reused)),
        TrainedLocalizer::Classifier(_) => Err(Error::Format(format!("{REGRESSOR_FILE} holds a classifier"))),
    }
}

/// Trains (or loads) the cell classifier with its WKNN refinement.
pub fn obtain_classifier(
    cfg: &ExperimentConfig,
    db: &Arc<FingerprintDb>,
    db_tag: &str,
    store: Option<&ArtifactStore>,
) -> Result<(ClassifierLocalizer, Option<f64>, bool)> {
    let train = seeded(&cfg.classifier_training, cfg.seeds().classifier);
    let cells = ClassifierGrid::covering(&cfg.grid, cfg.classifier.rows, cfg.classifier.cols)?;
    let mut loss = None;
    let mut build = || {
        let (c, report) = train_classifier(db.clone(), &cfg.network, cells, cfg.classifier.k, &train)?;
        loss = Some(report.final_loss);
        Ok(TrainedLocalizer::Classifier(c))
    };
    let (trained, reused) = match store {
        Some(s) => s.cached(
            CLASSIFIER_FILE,
            &digest(&(db_tag, &cfg.network, &train, &cfg.classifier)),
            |p| TrainedLocalizer::load(p, db.clone()),
            build,
            |m, p| m.save(p),
        )?,
        None => (build()?, false),
    };
    match trained {
        TrainedLocalizer::Classifier(c) => Ok((c, loss, reused)),
        TrainedLocalizer::Regressor(_) => Err(Error::Format(format!("{CLASSIFIER_FILE} holds a regressor"))),
    }
}

/// Training sequences for the learned predictor.
pub fn predictor_training_set(cfg: &ExperimentConfig, scene: &Scene) -> Result<Vec<FrameSequence>> {
    build_training_set(
        scene,
        &cfg.grid,
        cfg.predictor_training.n_sequences,
        cfg.conv_recurrent.frames + 1,
        cfg.seeds().predictor_data,
    )
}

/// Builds the configured predictor, training the learned one if needed.
pub fn obtain_predictor(
    cfg: &ExperimentConfig,
    scene: &Scene,
    db_tag: &str,
    store: Option<&ArtifactStore>,
) -> Result<(PredictorKind, Option<PredictorReport>, bool)> {
    match cfg.predictor {
        PredictorChoice::PeakTrack => Ok((PredictorKind::PeakTracking(PeakTracker::new(cfg.peak_tracking)?), None, false)),
        PredictorChoice::ConvRecurrent => {
            let train = seeded(&cfg.predictor_training.train, cfg.seeds().predictor_training);
            let mut report = None;
            let mut build = || {
                let data = predictor_training_set(cfg, scene)?;
                let (m, r) = train_conv_recurrent(&data, cfg.conv_recurrent, &train)?;
                report = Some(r);
                Ok(m)
            };
            let (model, reused) = match store {
                Some(s) => s.cached(
                    PREDICTOR_FILE,
                    &digest(&(db_tag, &cfg.conv_recurrent, &train, cfg.predictor_training.n_sequences, cfg.seeds())),
                    |p| ConvRecurrent::load(p),
                    build,
                    |m, p| m.save(p),
                )?,
                None => (build()?, false),
            };
            Ok((PredictorKind::ConvRecurrent(model), report, reused))
        }
    }
}

/// The seeded evaluation sequences; every scenario walks the same paths.
pub fn test_sequences(cfg: &ExperimentConfig, scene: &Scene, scenario: Scenario) -> Result<Vec<FrameSequence>> {
    build_test_set(
        scene,
        &cfg.grid,
        cfg.n_sequences,
        cfg.sequence_length,
        cfg.distort_from,
        cfg.distortion(scenario).as_ref(),
        cfg.seeds().sequences,
    )
}

impl Experiment {
    /// Builds or loads every artifact the comparison needs.
    pub fn prepare(config: ExperimentConfig, store: Option<&ArtifactStore>) -> Result<Self> {
        config.validate()?;
        let mut timings = Vec::new();
        let mut reused = Vec::new();
        let scene = config.scene()?;
        let db_tag = db_digest(&config, &scene.env);
        let (db, r) = timed(&mut timings, "fingerprints", || obtain_db(&config, &scene, store))?;
        if r {
            reused.push(DB_FILE.to_string());
        }
        let db = Arc::new(db);
        let calibration = timed(&mut timings, "calibration", || calibrate(&config, &db))?;
        let (regressor, regressor_loss, r) =
            timed(&mut timings, "regressor", || obtain_regressor(&config, &db, &db_tag, store))?;
        if r {
            reused.push(REGRESSOR_FILE.to_string());
        }
        let (classifier, classifier_loss, r) =
            timed(&mut timings, "classifier", || obtain_classifier(&config, &db, &db_tag, store))?;
        if r {
            reused.push(CLASSIFIER_FILE.to_string());
        }
        let (predictor, predictor_report, r) =
            timed(&mut timings, "predictor", || obtain_predictor(&config, &scene, &db_tag, store))?;
        if r {
            reused.push(PREDICTOR_FILE.to_string());
        }
        Ok(Self {
            config,
            scene,
            db,
            regressor,
            classifier,
            predictor,
            calibration,
            training: TrainingSummary {
                regressor_loss,
                classifier_loss,
                predictor: predictor_report,
                reused,
            },
            timings,
        })
    }

    /// The localizer the tracking loop uses.
    pub fn tracking_localizer(&self) -> &dyn Localizer {
        match self.config.localizer {
            LocalizerChoice::Regressor => &self.regressor,
            LocalizerChoice::ClassifierWknn => &self.classifier,
        }
    }

    pub fn pipeline_config(&self, recovery: Recovery) -> PipelineConfig {
        PipelineConfig {
            thresholds: self.calibration.thresholds,
            history: self.config.history,
            recovery,
            feedback: self.config.feedback,
        }
    }

    pub fn test_sequences(&self, scenario: Scenario) -> Result<Vec<FrameSequence>> {
        test_sequences(&self.config, &self.scene, scenario)
    }

    /// Runs all four methods on the same seeded sequences.
    pub fn evaluate(&self, scenario: Scenario) -> Result<RunOutput> {
        let start = Instant::now();
        let sequences = self.test_sequences(scenario)?;
        let generated = start.elapsed().as_secs_f64();
        let localizer = self.tracking_localizer();
        let fusion = Pipeline::new(&self.db, localizer, &self.predictor, self.pipeline_config(Recovery::Fusion))?;
        let prediction_only = Pipeline::new(
            &self.db,
            localizer,
            &self.predictor,
            self.pipeline_config(Recovery::PredictionOnly),
        )?;
        let results: Vec<SequenceResult> = sequences
            .par_iter()
            .map(|seq| {
                let adps: Vec<Adp> = seq.frames.iter().map(|f| f.adp.clone()).collect();
                let dyloc = fusion.run_sequence(&adps)?;
                let pred = prediction_only.run_sequence(&adps)?;
                let dcnn = adps.iter().map(|a| self.regressor.locate(a)).collect::<Result<Vec<_>>>()?;
                let wknn = adps.iter().map(|a| self.classifier.locate(a)).collect::<Result<Vec<_>>>()?;
                let truths: Vec<Vec2> = seq.frames.iter().map(|f| f.true_position).collect();
                let records = dyloc
                    .iter()
                    .enumerate()
                    .map(|(t, e)| EstimateRecord::new(seq.id, t, e, Some(truths[t])))
                    .collect();
                Ok(SequenceResult {
                    mode: seq.mode,
                    distorted: seq.frames.iter().map(|f| f.distorted).collect(),
                    verdicts: dyloc.iter().map(|e| e.verdict).collect(),
                    predicted_weights: dyloc.iter().filter_map(|e| e.diagnostics.predicted_weight).collect(),
                    positions: [
                        dyloc.iter().map(|e| e.position).collect(),
                        pred.iter().map(|e| e.position).collect(),
                        dcnn,
                        wknn,
                    ],
                    truths,
                    records,
                    unblockable: seq.unblockable_frames,
                })
            })
            .collect::<Result<_>>()?;
        let mut output = self.assemble(scenario, &results)?;
        output.runtime.push(StageTime {
            stage: "sequences".into(),
            seconds: generated,
        });
        output.runtime.push(StageTime {
            stage: "evaluation".into(),
            seconds: start.elapsed().as_secs_f64() - generated,
        });
        Ok(output)
    }

    fn assemble(&self, scenario: Scenario, results: &[SequenceResult]) -> Result<RunOutput> {
        let c = &self.config;
        let truths: Vec<Vec<Vec2>> = results.iter().map(|r| r.truths.clone()).collect();
        let mut methods = Vec::new();
        let mut cdf = Vec::new();
        for (m, method) in Method::ALL.iter().enumerate() {
            let est: Vec<Vec<Vec2>> = results.iter().map(|r| r.positions[m].clone()).collect();
            let per_frame = rmse_per_frame(&est, &truths)?;
            let per_mode = [WalkMode::Mode1, WalkMode::Mode2]
                .into_iter()
                .filter_map(|mode| {
                    let idx: Vec<usize> = (0..results.len()).filter(|&i| results[i].mode == mode).collect();
                    if idx.is_empty() {
                        return None;
                    }
                    let e: Vec<Vec<Vec2>> = idx.iter().map(|&i| est[i].clone()).collect();
                    let t: Vec<Vec<Vec2>> = idx.iter().map(|&i| truths[i].clone()).collect();
                    Some(rmse_per_frame(&e, &t).map(|per_frame_rmse| ModeRmse { mode, per_frame_rmse }))
                })
                .collect::<Result<Vec<_>>>()?;
            let accurate = pooled_rmse(&est, &truths, 0..c.distort_from);
            let distorted = pooled_rmse(&est, &truths, c.distort_from..c.sequence_length);
            let mut errors: Vec<f64> = est
                .iter()
                .zip(&truths)
                .flat_map(|(e, t)| (c.distort_from..c.sequence_length).map(move |k| e[k].distance(t[k])))
                .collect();
            errors.sort_by(f64::total_cmp);
            cdf.push(MethodErrors { method: *method, errors });
            methods.push(MethodResult {
                method: *method,
                median_distorted_frame_rmse: median(&per_frame[c.distort_from..]),
                per_frame_rmse: per_frame,
                accurate_rmse: accurate,
                distorted_rmse: distorted,
                per_mode,
            });
        }
        let mut det = DetectionStats::default();
        for r in results {
            for (v, d) in r.verdicts.iter().zip(&r.distorted) {
                let flagged = *v != Verdict::Accurate;
                match (flagged, *d) {
                    (true, true) => det.true_positives += 1,
                    (true, false) => det.false_positives += 1,
                    (false, false) => det.true_negatives += 1,
                    (false, true) => det.false_negatives += 1,
                }
                if *v == Verdict::LostLink {
                    det.lost_link += 1;
                }
            }
        }
        det.finish();
        let weights: Vec<f64> = results.iter().flat_map(|r| r.predicted_weights.iter().copied()).collect();
        let report = Report {
            schema: REPORT_SCHEMA_VERSION,
            scenario,
            config: ExperimentConfig {
                out_dir: PathBuf::new(),
                ..c.clone()
            },
            seeds: c.seeds(),
            calibration: self.calibration.clone(),
            training: TrainingSummary {
                reused: Vec::new(),
                ..self.training.clone()
            },
            truncated_paths: self.db.meta.truncated_paths,
            n_sequences: results.len(),
            evaluated_frames: (c.distort_from, c.sequence_length),
            methods,
            detection: det,
            mean_predicted_weight: (!weights.is_empty()).then(|| weights.iter().sum::<f64>() / weights.len() as f64),
            unblockable_frames: results.iter().map(|r| r.unblockable).sum(),
        };
        let mut runtime = self.timings.clone();
        runtime.retain(|t| !t.stage.is_empty());
        Ok(RunOutput {
            report,
            cdf,
            estimates: results.iter().flat_map(|r| r.records.iter().cloned()).collect(),
            runtime,
        })
    }
}

struct SequenceResult {
    mode: WalkMode,
    distorted: Vec<bool>,
    verdicts: Vec<Verdict>,
    predicted_weights: Vec<f64>,
    /// Indexed like [`Method::ALL`].
    positions: [Vec<Vec2>; 4],
    truths: Vec<Vec2>,
    records: Vec<EstimateRecord>,
    unblockable: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Detection, prediction and fingerprint fusion.
    Dyloc,
    /// The static localizer applied to the predicted frame.
    PredictorOnly,
    /// The regression network alone.
    Dcnn,
    /// The cell classifier with WKNN refinement.
    DcnnWknn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Dyloc, Method::PredictorOnly, Method::Dcnn, Method::DcnnWknn];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dyloc => "dyloc",
            Method::PredictorOnly => "predictor_only",
            Method::Dcnn => "dcnn",
            Method::DcnnWknn => "dcnn_wknn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRmse {
    pub mode: WalkMode,
    pub per_frame_rmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// RMSE of every frame, first frame at index 0.
    pub per_frame_rmse: Vec<f64>,
    /// Pooled over the frames before distortion starts.
    pub accurate_rmse: Option<f64>,
    /// Pooled over the distorted frames.
    pub distorted_rmse: Option<f64>,
    pub median_distorted_frame_rmse: Option<f64>,
    pub per_mode: Vec<ModeRmse>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionStats {
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
    pub lost_link: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

impl DetectionStats {
    fn finish(&mut self) {
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        self.precision = ratio(self.true_positives, self.true_positives + self.false_positives);
        self.recall = ratio(self.true_positives, self.true_positives + self.false_negatives);
    }
}

/// Everything deterministic about one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub scenario: Scenario,
    /// Echo of the run's configuration with `out_dir` left empty, so the
    /// body does not depend on where it was written.
    pub config: ExperimentConfig,
    pub seeds: DerivedSeeds,
    pub calibration: Calibration,
    pub training: TrainingSummary,
    pub truncated_paths: usize,
    pub n_sequences: usize,
    /// Half-open frame range [from, to) of the distorted suffix.
    pub evaluated_frames: (usize, usize),
    pub methods: Vec<MethodResult>,
    pub detection: DetectionStats,
    pub mean_predicted_weight: Option<f64>,
    pub unblockable_frames: usize,
}

impl Report {
    pub fn method(&self, m: Method) -> &MethodResult {
        self.methods.iter().find(|r| r.method == m).expect("every method is evaluated")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodErrors {
    pub method: Method,
    /// Distorted-frame errors in meters, ascending.
    pub errors: Vec<f64>,
}

pub struct RunOutput {
    pub report: Report,
    pub cdf: Vec<MethodErrors>,
    pub estimates: Vec<EstimateRecord>,
    /// Wall-clock seconds per stage; kept out of the report body.
    pub runtime: Vec<StageTime>,
}

/// Prepares and evaluates the configured scenario.
pub fn run_experiment(cfg: &ExperimentConfig, store: Option<&ArtifactStore>) -> Result<RunOutput> {
    Experiment::prepare(cfg.clone(), store)?.evaluate(cfg.scenario)
}

fn check_aligned(estimates: &[Vec<Vec2>], truths: &[Vec<Vec2>]) -> Result<usize> {
    if estimates.len() != truths.len() {
        return Err(Error::LengthMismatch(format!(
            "{} estimate sequences, {} truth sequences",
            estimates.len(),
            truths.len()
        )));
    }
    let len = truths.first().map_or(0, Vec::len);
    for (i, (e, t)) in estimates.iter().zip(truths).enumerate() {
        if e.len() != t.len() || t.len() != len {
            return Err(Error::LengthMismatch(format!(
                "sequence {i}: {} estimates, {} truths, expected {len}",
                e.len(),
                t.len()
            )));
        }
    }
    Ok(len)
}

/// Per-frame RMSE over sequences: `sqrt(mean_s |x̂_s,k − x_s,k|²)`.
pub fn rmse_per_frame(estimates: &[Vec<Vec2>], truths: &[Vec<Vec2>]) -> Result<Vec<f64>> {
    let len = check_aligned(estimates, truths)?;
    if estimates.is_empty() {
        return Ok(Vec::new());
    }
    Ok((0..len)
        .map(|k| {
            let sum: f64 = estimates.iter().zip(truths).map(|(e, t)| e[k].distance(t[k]).powi(2)).sum();
            (sum / estimates.len() as f64).sqrt()
        })
        .collect())
}

fn pooled_rmse(estimates: &[Vec<Vec2>], truths: &[Vec<Vec2>], frames: std::ops::Range<usize>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (e, t) in estimates.iter().zip(truths) {
        for k in frames.clone() {
            sum += e[k].distance(t[k]).powi(2);
            n += 1;
        }
    }
    (n > 0).then(|| (sum / n as f64).sqrt())
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Kendall rank correlation, tau-b (tie corrected).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mut concordant, mut discordant, mut ties_x, mut ties_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = (x[i] - x[j]).signum() as i64 * ((x[i] != x[j]) as i64);
            let dy = (y[i] - y[j]).signum() as i64 * ((y[i] != y[j]) as i64);
            match (dx, dy) {
                (0, 0) => {}
                (0, _) => ties_x += 1,
                (_, 0) => ties_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n1 = (concordant + discordant + ties_x) as f64;
    let n2 = (concordant + discordant + ties_y) as f64;
    (n1 > 0.0 && n2 > 0.0).then(|| (concordant - discordant) as f64 / (n1 * n2).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

pub const RMSE_CSV: &str = "rmse.csv";
pub const RMSE_BY_MODE_CSV: &str = "rmse_by_mode.csv";
pub const REPORT_JSON: &str = "report.json";
pub const CDF_CSV: &str = "cdf.csv";
pub const ESTIMATES_JSONL: &str = "estimates.jsonl";
pub const RUNTIME_JSON: &str = "runtime.json";

/// `method,frame,rmse_m` over the distorted frames; frames are numbered
/// from 1.
pub fn rmse_csv(report: &Report) -> String {
    let (from, to) = report.evaluated_frames;
    let mut out = String::from("method,frame,rmse_m\n");
    for m in &report.methods {
        for k in from..to {
            let _ = writeln!(out, "{},{},{}", m.method.name(), k + 1, m.per_frame_rmse[k]);
        }
    }
    out
}

pub fn rmse_by_mode_csv(report: &Report) -> String {
    let (from, to) = report.evaluated_frames;
    let mut out = String::from("mode,method,frame,rmse_m\n");
    for m in &report.methods {
        for pm in &m.per_mode {
            let mode = match pm.mode {
                WalkMode::Mode1 => "mode1",
                WalkMode::Mode2 => "mode2",
            };
            for k in from..to {
                let _ = writeln!(out, "{mode},{},{},{}", m.method.name(), k + 1, pm.per_frame_rmse[k]);
            }
        }
    }
    out
}

pub fn cdf_csv(cdf: &[MethodErrors]) -> String {
    let mut out = String::from("method,error_m\n");
    for m in cdf {
        for e in &m.errors {
            let _ = writeln!(out, "{},{e}", m.method.name());
        }
    }
    out
}

pub fn report_json(report: &Report) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))
}

pub fn parse_report_json(text: &str) -> Result<Report> {
    serde_json::from_str(text).map_err(|e| Error::Format(format!("bad report: {e}")))
}

/// Writes the CSV tables, JSON report, CDF samples, estimate stream and
/// runtime stats into `dir`; returns the written paths.
pub fn emit_report(output: &RunOutput, dir: &FsPath) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut estimates = String::new();
    for r in &output.estimates {
        estimates.push_str(&r.to_json_line());
        estimates.push('\n');
    }
    let runtime = serde_json::to_string_pretty(&output.runtime).map_err(|e| Error::Format(e.to_string()))?;
    let files = [
        (RMSE_CSV, rmse_csv(&output.report)),
        (RMSE_BY_MODE_CSV, rmse_by_mode_csv(&output.report)),
        (REPORT_JSON, report_json(&output.report)?),
        (CDF_CSV, cdf_csv(&output.cdf)),
        (ESTIMATES_JSONL, estimates),
        (RUNTIME_JSON, runtime),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

/// Plain-text summary: per-frame RMSE of the distorted frames plus totals.
pub fn render_table(report: &Report) -> String {
    let (from, to) = report.evaluated_frames;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "scenario {} | {} sequences | thr1 {:.3} m, thr2 {:.4}, thr3 {:.3} m",
        report.scenario.name(),
        report.n_sequences,
        report.calibration.thresholds.thr1,
        report.calibration.thresholds.thr2,
        report.calibration.thresholds.thr3
    );
    let _ = write!(out, "{:<16}", "method \\ frame");
    for k in from..to {
        let _ = write!(out, "{:>8}", k + 1);
    }
    let _ = writeln!(out, "{:>10}{:>10}", "accurate", "median");
    for m in &report.methods {
        let _ = write!(out, "{:<16}", m.method.name());
        for k in from..to {
            let _ = write!(out, "{:>8.3}", m.per_frame_rmse[k]);
        }
        let _ = writeln!(out, "{:>10}{:>10}", fmt_opt(m.accurate_rmse), fmt_opt(m.median_distorted_frame_rmse));
    }
    let d = &report.detection;
    let _ = writeln!(
        out,
        "detection: precision {} recall {} (tp {} fp {} tn {} fn {}, lost link {})",
        fmt_opt(d.precision),
        fmt_opt(d.recall),
        d.true_positives,
        d.false_positives,
        d.true_negatives,
        d.false_negatives,
        d.lost_link
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(points: &[&[(f64, f64)]]) -> Vec<Vec<Vec2>> {
        points.iter().map(|s| s.iter().map(|&(x, y)| Vec2::new(x, y)).collect()).collect()
    }

    #[test]
    fn rmse_examples() {
        let truth = seqs(&[&[(0.0, 0.0), (1.0, 1.0)]]);
        assert_eq!(rmse_per_frame(&truth, &truth).unwrap(), vec![0.0, 0.0]);
        let est = seqs(&[&[(3.0, 4.0), (1.0, 1.0)]]);
        assert_eq!(rmse_per_frame(&est, &truth).unwrap()[0], 5.0);
        let est2 = seqs(&[&[(0.0, 0.0)], &[(3.0, 4.0)]]);
        let truth2 = seqs(&[&[(0.0, 0.0)], &[(0.0, 0.0)]]);
        assert!((rmse_per_frame(&est2, &truth2).unwrap()[0] - 3.5355).abs() < 1e-4);
        assert!(matches!(rmse_per_frame(&est2, &truth), Err(Error::LengthMismatch(_))));
        let short = seqs(&[&[(0.0, 0.0)]]);
        assert!(matches!(rmse_per_frame(&short, &truth), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn rank_statistics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&x, &[1.0, 2.0, 3.0, 4.0]), Some(1.0));
        assert_eq!(kendall_tau(&x, &[4.0, 3.0, 2.0, 1.0]), Some(-1.0));
        assert!((spearman(&x, &[10.0, 20.0, 30.0, 40.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[1.0, 1.0, 2.0, 2.0]).unwrap() - 0.894427191).abs() < 1e-6);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig {
            thresholds: ThresholdOverrides {
                thr2: Some(0.9),
                ..Default::default()
            },
            ..ExperimentConfig::default()
        };
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        assert!(ExperimentConfig::from_toml_str("n_sequencez = 3").is_err());
        let partial = ExperimentConfig::from_toml_str("n_sequences = 3\nscenario = \"nlos-add\"").unwrap();
        assert_eq!(partial.n_sequences, 3);
        assert_eq!(partial.scenario, Scenario::NlosAdd);
        let nested = ExperimentConfig::from_toml_str("[predictor_training.train]\nepochs = 4").unwrap();
        assert_eq!(nested.predictor_training.train.epochs, 4);
        assert_eq!(nested.predictor_training.train.learning_rate, 0.005);
        assert!(ExperimentConfig::from_toml_str("[grid]\nn_rowz = 4").is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            ExperimentConfig { n_sequences: 0, ..Default::default() },
            ExperimentConfig { distort_from: 30, ..Default::default() },
            ExperimentConfig {
                thresholds: ThresholdOverrides { thr2: Some(1.0), ..Default::default() },
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
        let missing = ExperimentConfig { environment: "/nonexistent/env.toml".into(), ..Default::default() };
        assert!(matches!(missing.resolve_environment(), Err(Error::Config(_))));
    }

    #[test]
    fn fnv_matches_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
