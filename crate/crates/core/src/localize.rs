//! Static localizers: profile in, position out.
//!
//! * [`RegressorLocalizer`] regresses coordinates directly with a CNN.
//! * [`ClassifierLocalizer`] classifies the coarse cell, then refines with
//!   similarity-weighted k nearest fingerprints inside that cell.
//! * [`FingerprintKnn`] skips the network and searches the whole database.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adp::{similarity, Adp};
use crate::error::{Error, Result};
use crate::fingerprint::{FingerprintDb, GridSpec};
use crate::geometry::Vec2;
use crate::nn::{self, Head, LayerSpec, Model, Padding, Shape, TrainConfig, TrainReport};

pub trait Localizer: Send + Sync {
    fn locate(&self, adp: &Adp) -> Result<Vec2>;
}

/// How profile pixels are scaled into network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    /// Multiplier applied to every pixel (one over the database maximum).
    pub scale: f64,
    /// Divide each frame by its own maximum instead.
    pub per_frame_max: bool,
}

impl InputScaling {
    pub fn for_db(db: &FingerprintDb, per_frame_max: bool) -> Self {
        let max = db.entries.iter().map(|e| e.adp.max()).fold(0.0, f64::max);
        Self {
            scale: if max > 0.0 { 1.0 / max } else { 1.0 },
            per_frame_max,
        }
    }

    pub fn apply(&self, adp: &Adp) -> Vec<f64> {
        let factor = if self.per_frame_max {
            let m = adp.max();
            if m > 0.0 {
                1.0 / m
            } else {
                0.0
            }
        } else {
            self.scale
        };
        adp.as_slice().iter().map(|v| v * factor).collect()
    }
}

/// Affine map between positions and the unit square used as regression
/// target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetNormalization {
    pub origin: Vec2,
    pub extent: Vec2,
}

impl TargetNormalization {
    pub fn for_grid(grid: &GridSpec) -> Self {
        let (lo, hi) = grid.bounds();
        let span = |d: f64| if d > 0.0 { d } else { 1.0 };
        Self {
            origin: lo,
            extent: Vec2::new(span(hi.x - lo.x), span(hi.y - lo.y)),
        }
    }

    pub fn normalize(&self, p: Vec2) -> [f64; 2] {
        [(p.x - self.origin.x) / self.extent.x, (p.y - self.origin.y) / self.extent.y]
    }

    pub fn denormalize(&self, v: &[f64]) -> Vec2 {
        Vec2::new(self.origin.x + v[0] * self.extent.x, self.origin.y + v[1] * self.extent.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
    #[serde(default)]
    pub pool: bool,
}

/// Convolutional trunk plus dense layers; the head is appended per use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub conv: Vec<ConvBlock>,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub padding: Padding,
    #[serde(default)]
    pub per_frame_max: bool,
}

impl Default for NetworkConfig {
    /// Two convolution blocks on the 16x16 profile, one hidden layer.
    fn default() -> Self {
        Self {
            conv: vec![
                ConvBlock {
                    filters: 8,
                    kernel: 3,
                    pool: true,
                },
                ConvBlock {
                    filters: 16,
                    kernel: 3,
                    pool: false,
                },
            ],
            hidden: vec![64],
            padding: Padding::Valid,
            per_frame_max: false,
        }
    }
}

impl NetworkConfig {
    pub fn layers(&self, head: Head) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        for block in &self.conv {
            layers.push(LayerSpec::Conv2d {
                filters: block.filters,
                kernel: (block.kernel, block.kernel),
                padding: self.padding,
                bias: true,
            });
            layers.push(LayerSpec::Relu);
            if block.pool {
                layers.push(LayerSpec::MaxPool2x2);
            }
        }
        layers.push(LayerSpec::Flatten);
        for &units in &self.hidden {
            layers.push(LayerSpec::dense(units));
            layers.push(LayerSpec::Relu);
        }
        match head {
            Head::Regression2d => layers.push(LayerSpec::dense(2)),
            Head::Classification(n) => {
                layers.push(LayerSpec::dense(n));
                layers.push(LayerSpec::Softmax);
            }
        }
        layers
    }
}

fn input_shape(db: &FingerprintDb) -> Shape {
    let (n_t, n_c) = db.adp_dims();
    Shape::new(1, n_t, n_c)
}

fn usable(db: &FingerprintDb) -> impl Iterator<Item = usize> + '_ {
    (0..db.len()).filter(|&i| !db.entries[i].lost_link)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorLocalizer {
    pub model: Model,
    pub scaling: InputScaling,
    pub target: TargetNormalization,
}

impl Localizer for RegressorLocalizer {
    fn locate(&self, adp: &Adp) -> Result<Vec2> {
        let out = self.model.forward(&self.scaling.apply(adp))?;
        Ok(self.target.denormalize(&out))
    }
}

pub fn train_regressor(
    db: &FingerprintDb,
    net: &NetworkConfig,
    cfg: &TrainConfig,
) -> Result<(RegressorLocalizer, TrainReport)> {
    let scaling = InputScaling::for_db(db, net.per_frame_max);
    let target = TargetNormalization::for_grid(&db.grid);
    let idx: Vec<usize> = usable(db).collect();
    if idx.is_empty() {
        return Err(Error::Config("database has no usable fingerprints".into()));
    }
    let inputs: Vec<Vec<f64>> = idx.iter().map(|&i| scaling.apply(&db.entries[i].adp)).collect();
    let targets: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| target.normalize(db.entries[i].position).to_vec())
        .collect();
    let mut model = Model::new(input_shape(db), net.layers(Head::Regression2d), Head::Regression2d, cfg.seed)?;
    let report = nn::fit(&mut model, &inputs, &targets, cfg)?;
    Ok((
        RegressorLocalizer {
            model,
            scaling,
            target,
        },
        report,
    ))
}

/// Coarse cells laid over the fingerprint grid for the classification head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierGrid {
    pub rows: usize,
    pub cols: usize,
    pub lower: Vec2,
    pub upper: Vec2,
}

impl ClassifierGrid {
    pub fn covering(grid: &GridSpec, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config("classifier grid needs at least one cell".into()));
        }
        let (lower, upper) = grid.bounds();
        Ok(Self {
            rows,
            cols,
            lower,
            upper,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Row-major cell index; points on an inner boundary go to the upper
    /// cell, the outer boundary is clamped inside.
    pub fn cell_of(&self, p: Vec2) -> usize {
        let bin = |v: f64, lo: f64, hi: f64, n: usize| -> usize {
            if hi <= lo {
                return 0;
            }
            let k = ((v - lo) / (hi - lo) * n as f64).floor();
            (k.max(0.0) as usize).min(n - 1)
        };
        bin(p.y, self.lower.y, self.upper.y, self.rows) * self.cols + bin(p.x, self.lower.x, self.upper.x, self.cols)
    }

    /// Database indices belonging to every cell.
    pub fn members(&self, db: &FingerprintDb) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new(); self.n_cells()];
        for i in usable(db) {
            cells[self.cell_of(db.entries[i].position)].push(i);
        }
        cells
    }
}

/// Result of a similarity-weighted k-nearest-fingerprint search.
#[derive(Debug, Clone, PartialEq)]
pub struct WknnEstimate {
    pub position: Vec2,
    /// (database index, weight) of the chosen neighbors, weights summing to 1.
    pub neighbors: Vec<(usize, f64)>,
    /// The classified cell had no fingerprints and the whole database was
    /// searched instead.
    pub fell_back: bool,
}

/// Normalized weights proportional to `scores`; uniform when they sum to 0.
pub fn normalized_weights(scores: &[f64]) -> Vec<f64> {
    let total: f64 = scores.iter().sum();
    if total > 0.0 {
        scores.iter().map(|s| s / total).collect()
    } else {
        vec![1.0 / scores.len() as f64; scores.len()]
    }
}

pub fn weighted_centroid(points: &[Vec2], weights: &[f64]) -> Vec2 {
    points
        .iter()
        .zip(weights)
        .fold(Vec2::new(0.0, 0.0), |acc, (p, w)| acc + *p * *w)
}

/// The `k` candidates most similar to `adp` (ties to the lower index),
/// combined by similarity weights. An exact fingerprint match returns that
/// fingerprint alone; an all-zero query scores every candidate 0.
pub fn wknn(adp: &Adp, db: &FingerprintDb, candidates: &[usize], k: usize) -> Result<WknnEstimate> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if candidates.is_empty() {
        return Err(Error::EmptyNeighborhood);
    }
    if let Some(&i) = candidates.iter().find(|&&i| db.entries[i].adp == *adp) {
        return Ok(WknnEstimate {
            position: db.entries[i].position,
            neighbors: vec![(i, 1.0)],
            fell_back: false,
        });
    }
    let mut scored = candidates
        .iter()
        .map(|&i| {
            let s = if adp.is_zero() { 0.0 } else { similarity(adp, &db.entries[i].adp)? };
            Ok((i, s))
        })
        .collect::<Result<Vec<(usize, f64)>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    let scores: Vec<f64> = scored.iter().map(|s| s.1).collect();
    let weights = normalized_weights(&scores);
    let points: Vec<Vec2> = scored.iter().map(|s| db.entries[s.0].position).collect();
    Ok(WknnEstimate {
        position: weighted_centroid(&points, &weights),
        neighbors: scored.iter().map(|s| s.0).zip(weights).collect(),
        fell_back: false,
    })
}

#[derive(Debug, Clone)]
pub struct ClassifierLocalizer {
    pub model: Model,
    pub scaling: InputScaling,
    pub cells: ClassifierGrid,
    pub k: usize,
    db: Arc<FingerprintDb>,
    members: Vec<Vec<usize>>,
}

impl ClassifierLocalizer {
    pub fn new(model: Model, scaling: InputScaling, cells: ClassifierGrid, k: usize, db: Arc<FingerprintDb>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if model.head != Head::Classification(cells.n_cells()) {
            return Err(Error::Config(format!(
                "model head {:?} does not match {} cells",
                model.head,
                cells.n_cells()
            )));
        }
        let members = cells.members(&db);
        Ok(Self {
            model,
            scaling,
            cells,
            k,
            db,
            members,
        })
    }

    pub fn db(&self) -> &Arc<FingerprintDb> {
        &self.db
    }

    pub fn classify(&self, adp: &Adp) -> Result<usize> {
        let probs = self.model.forward(&self.scaling.apply(adp))?;
        Ok(argmax_first(&probs))
    }

    pub fn locate_detailed(&self, adp: &Adp) -> Result<WknnEstimate> {
        let cell = self.classify(adp)?;
        let members = &self.members[cell];
        if !members.is_empty() {
            return wknn(adp, &self.db, members, self.k);
        }
        let all: Vec<usize> = usable(&self.db).collect();
        let mut est = wknn(adp, &self.db, &all, self.k)?;
        est.fell_back = true;
        Ok(est)
    }
}

impl Localizer for ClassifierLocalizer {
    fn locate(&self, adp: &Adp) -> Result<Vec2> {
        Ok(self.locate_detailed(adp)?.position)
    }
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn train_classifier(
    db: Arc<FingerprintDb>,
    net: &NetworkConfig,
    cells: ClassifierGrid,
    k: usize,
    cfg: &TrainConfig,
) -> Result<(ClassifierLocalizer, TrainReport)> {
    let scaling = InputScaling::for_db(&db, net.per_frame_max);
    let idx: Vec<usize> = usable(&db).collect();
    if idx.is_empty() {
        return Err(Error::Config("database has no usable fingerprints".into()));
    }
    let n = cells.n_cells();
    let inputs: Vec<Vec<f64>> = idx.iter().map(|&i| scaling.apply(&db.entries[i].adp)).collect();
    let targets: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| {
            let mut t = vec![0.0; n];
            t[cells.cell_of(db.entries[i].position)] = 1.0;
            t
        })
        .collect();
    let head = Head::Classification(n);
    let mut model = Model::new(input_shape(&db), net.layers(head), head, cfg.seed)?;
    let report = nn::fit(&mut model, &inputs, &targets, cfg)?;
    Ok((ClassifierLocalizer::new(model, scaling, cells, k, db)?, report))
}

/// Similarity-weighted k nearest fingerprints over the whole database.
#[derive(Debug, Clone)]
pub struct FingerprintKnn {
    pub db: Arc<FingerprintDb>,
    pub k: usize,
    candidates: Vec<usize>,
}

impl FingerprintKnn {
    pub fn new(db: Arc<FingerprintDb>, k: usize) -> Self {
        let candidates = usable(&db).collect();
        Self { db, k, candidates }
    }
}

impl Localizer for FingerprintKnn {
    fn locate(&self, adp: &Adp) -> Result<Vec2> {
        Ok(wknn(adp, &self.db, &self.candidates, self.k)?.position)
    }
}

const KIND_REGRESSOR: &str = "localizer-regressor";
const KIND_CLASSIFIER: &str = "localizer-classifier";

#[derive(Serialize, Deserialize)]
struct RegressorMeta {
    architecture: serde_json::Value,
    scaling: InputScaling,
    target: TargetNormalization,
}

#[derive(Serialize, Deserialize)]
struct ClassifierMeta {
    architecture: serde_json::Value,
    scaling: InputScaling,
    cells: ClassifierGrid,
    k: usize,
}

/// Either trained network localizer, as stored in a checkpoint.
#[derive(Debug, Clone)]
pub enum TrainedLocalizer {
    Regressor(RegressorLocalizer),
    Classifier(ClassifierLocalizer),
}

impl Localizer for TrainedLocalizer {
    fn locate(&self, adp: &Adp) -> Result<Vec2> {
        match self {
            TrainedLocalizer::Regressor(r) => r.locate(adp),
            TrainedLocalizer::Classifier(c) => c.locate(adp),
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Format(e.to_string()))
}

fn from_json<T: for<'de> Deserialize<'de>>(v: serde_json::Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Format(e.to_string()))
}

impl TrainedLocalizer {
    pub fn model(&self) -> &Model {
        match self {
            TrainedLocalizer::Regressor(r) => &r.model,
            TrainedLocalizer::Classifier(c) => &c.model,
        }
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let (kind, meta) = match self {
            TrainedLocalizer::Regressor(r) => (
                KIND_REGRESSOR,
                to_json(&RegressorMeta {
                    architecture: r.model.architecture(),
                    scaling: r.scaling,
                    target: r.target,
                })?,
            ),
            TrainedLocalizer::Classifier(c) => (
                KIND_CLASSIFIER,
                to_json(&ClassifierMeta {
                    architecture: c.model.architecture(),
                    scaling: c.scaling,
                    cells: c.cells,
                    k: c.k,
                })?,
            ),
        };
        nn::write_checkpoint(w, kind, meta, &self.model().params)
    }

    /// Reads a checkpoint; classifiers are bound to `db` for their WKNN step.
    pub fn read_from<R: Read>(r: R, db: Arc<FingerprintDb>) -> Result<Self> {
        let (header, blobs) = nn::read_checkpoint(r)?;
        match header.kind.as_str() {
            KIND_REGRESSOR => {
                let meta: RegressorMeta = from_json(header.meta)?;
                Ok(TrainedLocalizer::Regressor(RegressorLocalizer {
                    model: Model::from_architecture(&meta.architecture, blobs)?,
                    scaling: meta.scaling,
                    target: meta.target,
                }))
            }
            KIND_CLASSIFIER => {
                let meta: ClassifierMeta = from_json(header.meta)?;
                let model = Model::from_architecture(&meta.architecture, blobs)?;
                Ok(TrainedLocalizer::Classifier(ClassifierLocalizer::new(
                    model,
                    meta.scaling,
                    meta.cells,
                    meta.k,
                    db,
                )?))
            }
            other => Err(Error::Format(format!("checkpoint holds a {other}, not a localizer"))),
        }
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<FsPath>, db: Arc<FingerprintDb>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?), db)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ArrayConfig, OfdmConfig};
    use crate::environment::Environment;
    use crate::fingerprint::build_db;
    use proptest::prelude::*;

    fn small_db(n: usize) -> Arc<FingerprintDb> {
        let grid = GridSpec {
            origin: Vec2::new(3.0, -1.0),
            spacing: 0.25,
            n_rows: n,
            n_cols: n,
        };
        Arc::new(build_db(&Environment::sparse(), &grid, &ArrayConfig::default(), &OfdmConfig::default()).unwrap())
    }

    #[test]
    fn exact_fingerprint_returns_its_position() {
        let db = small_db(4);
        let all: Vec<usize> = (0..db.len()).collect();
        for i in [0, 5, 15] {
            let est = wknn(&db.entries[i].adp, &db, &all, 3).unwrap();
            assert_eq!(est.position, db.entries[i].position);
        }
    }

    #[test]
    fn equal_similarities_give_the_mean() {
        let mut db = (*small_db(2)).clone();
        let adp = db.entries[0].adp.clone();
        for e in &mut db.entries {
            e.adp = adp.scaled(2.0);
        }
        let est = wknn(&adp, &db, &[0, 1, 3], 3).unwrap();
        let mean = (db.entries[0].position + db.entries[1].position + db.entries[3].position) * (1.0 / 3.0);
        assert!(est.position.distance(mean) < 1e-12);
    }

    #[test]
    fn k_is_clamped_to_the_candidate_count() {
        let db = small_db(3);
        let query = db.entries[4].adp.scaled(1.5);
        let est = wknn(&query, &db, &[7], 3).unwrap();
        assert_eq!(est.position, db.entries[7].position);
        assert_eq!(est.neighbors, vec![(7, 1.0)]);
    }

    #[test]
    fn zero_scores_fall_back_to_uniform_weights() {
        assert_eq!(normalized_weights(&[0.0, 0.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn classifier_cells_partition_the_grid() {
        let db = small_db(6);
        let cells = ClassifierGrid::covering(&db.grid, 2, 3).unwrap();
        let members = cells.members(&db);
        assert_eq!(members.iter().map(Vec::len).sum::<usize>(), db.len());
        assert!(members.iter().all(|m| m.len() == 6));
    }

    #[test]
    fn empty_cell_falls_back_to_the_whole_database() {
        let db = small_db(2);
        // 4 points spread over 16 cells leaves most cells empty
        let cells = ClassifierGrid::covering(&db.grid, 4, 4).unwrap();
        let head = Head::Classification(16);
        let mut model = Model::zeroed(Shape::new(1, 16, 16), NetworkConfig::default().layers(head), head).unwrap();
        // bias the final dense layer towards an empty middle cell
        let last_dense = model.params.len() - 2;
        let n = model.params[last_dense].len();
        model.params[last_dense][n - 16 + 5] = 10.0;
        let loc = ClassifierLocalizer::new(model, InputScaling::for_db(&db, false), cells, 3, db.clone()).unwrap();
        assert!(loc.members[5].is_empty());
        let est = loc.locate_detailed(&db.entries[2].adp).unwrap();
        assert!(est.fell_back);
        assert_eq!(est.position, db.entries[2].position);
    }

    #[test]
    fn regressor_overfits_a_small_database() {
        let db = small_db(4);
        let cfg = TrainConfig {
            epochs: 400,
            learning_rate: 0.003,
            batch_size: 4,
            seed: 3,
            optimizer: nn::Optimizer::Adam { beta1: 0.9, beta2: 0.999 },
            ..TrainConfig::default()
        };
        let (loc, report) = train_regressor(&db, &NetworkConfig::default(), &cfg).unwrap();
        let mse: f64 = db
            .entries
            .iter()
            .map(|e| loc.locate(&e.adp).unwrap().distance(e.position).powi(2))
            .sum::<f64>()
            / db.len() as f64;
        assert!(mse.sqrt() < db.grid.spacing / 4.0, "rmse {}", mse.sqrt());
        assert!(report.final_loss < report.loss_curve[0]);
    }

    #[test]
    fn checkpoints_round_trip_for_both_heads() {
        let db = small_db(4);
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 0.01,
            batch_size: 4,
            seed: 1,
            ..TrainConfig::default()
        };
        let (reg, _) = train_regressor(&db, &NetworkConfig::default(), &cfg).unwrap();
        let cells = ClassifierGrid::covering(&db.grid, 2, 2).unwrap();
        let (cls, _) = train_classifier(db.clone(), &NetworkConfig::default(), cells, 3, &cfg).unwrap();
        for trained in [TrainedLocalizer::Regressor(reg), TrainedLocalizer::Classifier(cls)] {
            let mut bytes = Vec::new();
            trained.write_to(&mut bytes).unwrap();
            let back = TrainedLocalizer::read_from(&bytes[..], db.clone()).unwrap();
            assert_eq!(back.model(), trained.model());
            let mut again = Vec::new();
            back.write_to(&mut again).unwrap();
            assert_eq!(bytes, again);
            for e in &db.entries {
                assert_eq!(back.locate(&e.adp).unwrap(), trained.locate(&e.adp).unwrap());
            }
        }
    }

    proptest! {
        #[test]
        fn weights_are_convex(scores in proptest::collection::vec(0.0f64..1.0, 1..6)) {
            let w = normalized_weights(&scores);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|v| *v >= 0.0));
        }
    }
}
