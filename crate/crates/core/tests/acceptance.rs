//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! Exits 0 regardless of outcome so the workspace test run stays green;
//! set `DYLOC_ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

use std::f64::consts::PI;
use std::fs;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;

use dyloc::adp::{similarity, DftPair};
use dyloc::channel::{quantize_delay, synthesize_csi, ArrayConfig, CsiMatrix, OfdmConfig, Path};
use dyloc::fingerprint::{load_db, save_db, GridSpec};
use dyloc::geometry::Vec2;
use dyloc::harness::{
    emit_report, kendall_tau, spearman, ArtifactStore, Experiment, ExperimentConfig, Method, PredictorChoice,
    Report, Scenario, CDF_CSV, CLASSIFIER_FILE, DB_FILE, ESTIMATES_JSONL, PREDICTOR_FILE, REGRESSOR_FILE,
    REPORT_JSON, RMSE_BY_MODE_CSV, RMSE_CSV,
};
use dyloc::localize::{normalized_weights, weighted_centroid, wknn, Localizer, TrainedLocalizer};
use dyloc::nn::{Head, LayerSpec, Model, Padding, Shape};
use dyloc::predictor::{ConvRecurrent, PredictorKind};
use dyloc::rng::rng_from_seed;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
    budget: f64,
}

impl Outcome {
    fn print(&self) {
        let within = self.seconds <= self.budget;
        let verdict = if self.pass && within { "PASS" } else { "FAIL" };
        println!(
            "{verdict} criterion {:>2} {:<34} {:.1}s/{:.0}s  {}{}",
            self.id,
            self.name,
            self.seconds,
            self.budget,
            self.detail,
            if within { "" } else { "  [over time budget]" }
        );
    }

    fn ok(&self) -> bool {
        self.pass && self.seconds <= self.budget
    }
}

fn criterion(id: u32, name: &'static str, budget: f64, shared: f64, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = f();
    let out = Outcome {
        id,
        name,
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64() + shared,
        budget,
    };
    out.print();
    out
}

fn random_complex(rng: &mut impl Rng) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn unitarity() -> (bool, String) {
    let dft = DftPair::new(16, 16);
    let mut rng = rng_from_seed(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut h = CsiMatrix::zeros(16, 16);
        h.0.mapv_inplace(|_| random_complex(&mut rng));
        let g = dft.transform(&h).unwrap();
        let norm_g = g.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        worst = worst.max((norm_g - h.frobenius_norm()).abs() / h.frobenius_norm());
    }
    (worst < 1e-9, format!("max relative error {worst:.2e}"))
}

/// Angle-delay magnitudes straight from the defining double sum.
fn direct_profile(h: &CsiMatrix) -> Vec<Vec<f64>> {
    let (nt, nc) = h.dims();
    let v = |z: usize, q: usize| {
        Complex64::from_polar(1.0 / (nt as f64).sqrt(), -2.0 * PI * z as f64 * (q as f64 - nt as f64 / 2.0) / nt as f64)
    };
    let f = |z: usize, q: usize| Complex64::from_polar(1.0 / (nc as f64).sqrt(), 2.0 * PI * (z * q) as f64 / nc as f64);
    (0..nt)
        .map(|a| {
            (0..nc)
                .map(|d| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for n in 0..nt {
                        for k in 0..nc {
                            acc += v(n, a).conj() * h.0[[n, k]] * f(k, d);
                        }
                    }
                    acc.norm()
                })
                .collect()
        })
        .collect()
}

fn first_argmax(rows: &[Vec<f64>]) -> (usize, usize) {
    let mut best = (0, 0);
    for (a, row) in rows.iter().enumerate() {
        for (d, v) in row.iter().enumerate() {
            if *v > rows[best.0][best.1] {
                best = (a, d);
            }
        }
    }
    best
}

fn peak_oracle() -> (bool, String) {
    let array = ArrayConfig::default();
    let ofdm = OfdmConfig::default();
    let dft = DftPair::new(array.n_antennas, ofdm.n_subcarriers);
    let mut rng = rng_from_seed(2);
    let mut argmax_hits = 0;
    let mut delay_hits = 0;
    for _ in 0..50 {
        let delay = rng.random_range(0.0..(ofdm.n_subcarriers as f64 - 0.5) * ofdm.sample_duration);
        let path = Path {
            aoa: rng.random_range(0.05..PI - 0.05),
            delay,
            sampled_delay: quantize_delay(delay, &ofdm),
            gain: Complex64::from_polar(rng.random_range(0.1..1.0), rng.random_range(0.0..2.0 * PI)),
            path_length: delay * 3e8,
            cluster_id: 0,
            is_los: true,
        };
        let h = synthesize_csi(&[path], &array, &ofdm).unwrap();
        let adp = dyloc::adp::adp_from_csi(&h, &dft).unwrap();
        let fast = adp.argmax();
        let brute = first_argmax(&direct_profile(&h));
        argmax_hits += (fast == brute) as usize;
        delay_hits += (fast.1 == path.sampled_delay) as usize;
    }
    (
        argmax_hits == 50 && delay_hits == 50,
        format!("argmax agreement {argmax_hits}/50, delay column = sampled delay {delay_hits}/50"),
    )
}

fn similarity_monotonicity(exp: &Experiment) -> (bool, String) {
    let db = &exp.db;
    let width = db.grid.spacing;
    let bins = 12;
    let mut sums = vec![(0.0, 0usize); bins];
    for i in (0..db.len()).step_by(7) {
        if db.entries[i].lost_link {
            continue;
        }
        for n in db.neighbors_within(db.entries[i].position, width * (bins as f64 - 0.5)) {
            if n.index == i || n.entry.lost_link {
                continue;
            }
            let b = ((n.distance / width).round() as usize).min(bins - 1);
            sums[b].0 += similarity(&db.entries[i].adp, &n.entry.adp).unwrap();
            sums[b].1 += 1;
        }
    }
    let (dist, mean): (Vec<f64>, Vec<f64>) = sums
        .iter()
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(b, (s, n))| (b as f64 * width, s / *n as f64))
        .unzip();
    let rho = spearman(&dist, &mean).unwrap_or(0.0);
    let curve: Vec<String> = mean.iter().take(6).map(|m| format!("{m:.2}")).collect();
    (rho < -0.8, format!("Spearman {rho:.3} over {} bins, mean S {} ...", dist.len(), curve.join(" ")))
}

fn max_gradient_error(model: &Model, x: &[f64], target: &[f64]) -> f64 {
    let h = 1e-5;
    let (_, grads) = model.backward(x, target).unwrap();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for l in 0..model.params.len() {
        for k in 0..model.params[l].len() {
            let orig = probe.params[l][k];
            probe.params[l][k] = orig + h;
            let up = probe.loss(x, target).unwrap();
            probe.params[l][k] = orig - h;
            let down = probe.loss(x, target).unwrap();
            probe.params[l][k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (numeric - grads[l][k]).abs() / numeric.abs().max(grads[l][k].abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

fn gradient_checks() -> (bool, String) {
    let conv = |filters, kernel, padding| LayerSpec::Conv2d {
        filters,
        kernel: (kernel, kernel),
        padding,
        bias: true,
    };
    let stacks: Vec<(&str, Shape, Vec<LayerSpec>, Head)> = vec![
        ("conv-valid", Shape::new(2, 5, 5), vec![conv(3, 3, Padding::Valid), LayerSpec::Flatten, LayerSpec::dense(2)], Head::Regression2d),
        ("conv-same", Shape::new(1, 5, 4), vec![conv(2, 3, Padding::Same), LayerSpec::Flatten, LayerSpec::dense(2)], Head::Regression2d),
        ("maxpool", Shape::new(1, 4, 4), vec![conv(2, 1, Padding::Valid), LayerSpec::MaxPool2x2, LayerSpec::Flatten, LayerSpec::dense(2)], Head::Regression2d),
        ("relu", Shape::new(6, 1, 1), vec![LayerSpec::dense(4), LayerSpec::Relu, LayerSpec::dense(2)], Head::Regression2d),
        ("tanh", Shape::new(6, 1, 1), vec![LayerSpec::dense(4), LayerSpec::Tanh, LayerSpec::dense(2)], Head::Regression2d),
        ("dense+softmax", Shape::new(6, 1, 1), vec![LayerSpec::dense(5), LayerSpec::Softmax], Head::Classification(5)),
        (
            "reduced localizer stack",
            Shape::new(1, 16, 16),
            vec![
                conv(4, 3, Padding::Valid),
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                conv(4, 3, Padding::Valid),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::dense(8),
                LayerSpec::Tanh,
                LayerSpec::dense(2),
            ],
            Head::Regression2d,
        ),
    ];
    let mut worst: (f64, &str) = (0.0, "");
    for (i, (name, shape, layers, head)) in stacks.into_iter().enumerate() {
        let model = Model::new(shape, layers, head, 40 + i as u64).unwrap();
        let mut rng = rng_from_seed(90 + i as u64);
        let x: Vec<f64> = (0..shape.len()).map(|_| rng.random_range(0.05..1.0)).collect();
        let target = match head {
            Head::Regression2d => vec![0.3, 0.8],
            Head::Classification(n) => (0..n).map(|k| (k == 1) as u8 as f64).collect(),
        };
        let err = max_gradient_error(&model, &x, &target);
        if err > worst.0 {
            worst = (err, name);
        }
    }
    (worst.0 < 1e-4, format!("worst relative error {:.2e} ({})", worst.0, worst.1))
}

fn static_localizer(exp: &Experiment) -> (bool, String) {
    let db = &exp.db;
    let rmse = |pairs: &[(Vec2, Vec2)]| {
        (pairs.iter().map(|(a, b)| a.distance(*b).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt()
    };
    let in_sample: Vec<(Vec2, Vec2)> = db
        .entries
        .iter()
        .filter(|e| !e.lost_link)
        .map(|e| (exp.regressor.locate(&e.adp).unwrap(), e.position))
        .collect();
    let g = &db.grid;
    let mut held_out = Vec::new();
    for r in (0..g.n_rows - 1).step_by(2) {
        for c in (0..g.n_cols - 1).step_by(2) {
            let p = g.point(r, c) + Vec2::new(0.5 * g.spacing, 0.5 * g.spacing);
            let adp = exp.scene.adp_at(p).unwrap();
            if !adp.is_zero() {
                held_out.push((exp.regressor.locate(&adp).unwrap(), p));
            }
        }
    }
    let (a, b) = (rmse(&in_sample), rmse(&held_out));
    (
        a <= 0.5 * g.spacing && b <= 2.0 * g.spacing,
        format!(
            "in-sample {a:.3} m (limit {:.3}), held-out midpoints {b:.3} m over {} points (limit {:.3})",
            0.5 * g.spacing,
            held_out.len(),
            2.0 * g.spacing
        ),
    )
}

fn max_paths(exp: &Experiment, stride: usize) -> (usize, f64) {
    let counts: Vec<usize> = (0..exp.db.len())
        .step_by(stride)
        .map(|i| exp.scene.trace(exp.db.entries[i].position).unwrap().paths.len())
        .collect();
    let max = counts.iter().copied().max().unwrap_or(0);
    (max, counts.iter().sum::<usize>() as f64 / counts.len() as f64)
}

fn detection(exp: &Experiment, los: &Report) -> (bool, String) {
    let (max, _) = max_paths(exp, 3);
    let d = &los.detection;
    let (p, r) = (d.precision.unwrap_or(0.0), d.recall.unwrap_or(0.0));
    (
        p >= 0.9 && r >= 0.9 && max <= 3 && los.n_sequences == 200,
        format!(
            "precision {p:.4} recall {r:.4} (tp {} fp {} tn {} fn {}) over {} sequences, at most {max} paths",
            d.true_positives, d.false_positives, d.true_negatives, d.false_negatives, los.n_sequences
        ),
    )
}

fn ordering(reports: &[Report]) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in reports {
        let m = |k| r.method(k).median_distorted_frame_rmse.unwrap_or(f64::INFINITY);
        let (dy, po, dc, wk) = (m(Method::Dyloc), m(Method::PredictorOnly), m(Method::Dcnn), m(Method::DcnnWknn));
        let ok = dy < po && dy < dc && dc < wk;
        pass &= ok;
        parts.push(format!(
            "{}: dyloc {dy:.3} pred {po:.3} dcnn {dc:.3} wknn {wk:.3}{}",
            r.scenario.name(),
            if ok { "" } else { " (violated)" }
        ));
    }
    (pass, parts.join("; "))
}

fn error_growth(los: &Report) -> (bool, String) {
    let (from, to) = los.evaluated_frames;
    let rmse = &los.method(Method::Dyloc).per_frame_rmse[from..to];
    let idx: Vec<f64> = (from..to).map(|k| k as f64).collect();
    let tau = kendall_tau(&idx, rmse).unwrap_or(0.0);
    (
        tau > 0.5,
        format!("Kendall tau {tau:.3}, RMSE {:.3} m at frame {} to {:.3} m at frame {to}", rmse[0], from + 1, rmse[rmse.len() - 1]),
    )
}

fn degradation(r: &Report) -> f64 {
    let d = r.method(Method::Dyloc);
    d.distorted_rmse.unwrap_or(f64::INFINITY) / d.accurate_rmse.unwrap_or(f64::NAN)
}

fn richness(rich: &Experiment, sparse: &[Report], rich_reports: &[Report]) -> (bool, String) {
    let (max, mean) = max_paths(rich, 5);
    let mut pass = mean >= 8.0;
    let mut parts = vec![format!("rich env {mean:.1} paths on average (max {max})")];
    for (s, r) in sparse.iter().zip(rich_reports) {
        let (ds, dr) = (degradation(s), degradation(r));
        pass &= dr < ds;
        parts.push(format!("{}: rich {dr:.2} vs sparse {ds:.2}", s.scenario.name()));
    }
    (pass, parts.join("; "))
}

fn wknn_exactness(exp: &Experiment) -> (bool, String) {
    let mut rng = rng_from_seed(10);
    let mut worst_sum: f64 = 0.0;
    let mut outside = 0;
    for trial in 0..1000 {
        let (points, weights, fused) = if trial % 2 == 0 {
            let m = rng.random_range(1..16);
            let points: Vec<Vec2> = (0..m).map(|_| Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))).collect();
            let scores: Vec<f64> = (0..m).map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..1.0) }).collect();
            let w = normalized_weights(&scores);
            let fused = weighted_centroid(&points, &w);
            (points, w, fused)
        } else {
            let db = &exp.db;
            let base = rng.random_range(0..db.len());
            let noisy = db.entries[base].adp.as_slice().iter().map(|v| v * rng.random_range(0.5..1.5)).collect();
            let (nt, nc) = db.adp_dims();
            let query = dyloc::adp::Adp::from_vec(nt, nc, noisy).unwrap();
            let candidates: Vec<usize> = db.neighbors_within(db.entries[base].position, 1.0).iter().map(|n| n.index).collect();
            let est = wknn(&query, db, &candidates, rng.random_range(1..8)).unwrap();
            let points = est.neighbors.iter().map(|(i, _)| db.entries[*i].position).collect();
            let w = est.neighbors.iter().map(|(_, w)| *w).collect();
            (points, w, est.position)
        };
        worst_sum = worst_sum.max((weights.iter().sum::<f64>() - 1.0).abs());
        outside += !in_convex_hull(&points, fused) as usize;
    }
    (
        worst_sum <= 1e-12 && outside == 0,
        format!("max |sum w - 1| {worst_sum:.1e}, {outside}/1000 fused positions outside the hull"),
    )
}

fn cross(o: Vec2, a: Vec2, b: Vec2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Monotone-chain hull, then a containment test with a small tolerance;
/// degenerate hulls fall back to a segment test.
fn in_convex_hull(points: &[Vec2], p: Vec2) -> bool {
    let tol = 1e-9;
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() == 1 {
        return pts[0].distance(p) < tol;
    }
    let mut hull: Vec<Vec2> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vec2>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &q in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        let (a, b) = (pts[0], pts[pts.len() - 1]);
        let len = a.distance(b);
        return cross(a, b, p).abs() / len < tol && a.distance(p) + p.distance(b) <= len + tol;
    }
    (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= -tol)
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        grid: GridSpec {
            n_rows: 12,
            n_cols: 12,
            ..GridSpec::default()
        },
        n_sequences: 16,
        predictor: PredictorChoice::ConvRecurrent,
        ..ExperimentConfig::default()
    };
    cfg.localizer_training.epochs = 8;
    cfg.classifier_training.epochs = 8;
    cfg.classifier.rows = 3;
    cfg.classifier.cols = 3;
    cfg.predictor_training.n_sequences = 12;
    cfg.predictor_training.train.epochs = 2;
    cfg
}

fn bits(params: &[Vec<f64>]) -> Vec<u64> {
    params.iter().flatten().map(|v| v.to_bits()).collect()
}

fn determinism() -> (bool, String) {
    let cfg = small_config();
    let root = tempfile::tempdir().unwrap();
    let mut bodies = Vec::new();
    let mut problems = Vec::new();
    for run in 0..2 {
        let store = ArtifactStore::new(root.path().join(format!("artifacts{run}"))).unwrap();
        let exp = Experiment::prepare(cfg.clone(), Some(&store)).unwrap();
        let out_dir = root.path().join(format!("out{run}"));
        emit_report(&exp.evaluate(cfg.scenario).unwrap(), &out_dir).unwrap();
        let files = [RMSE_CSV, RMSE_BY_MODE_CSV, CDF_CSV, REPORT_JSON, ESTIMATES_JSONL];
        bodies.push(files.map(|f| fs::read(out_dir.join(f)).unwrap()));
        if run > 0 {
            continue;
        }
        // persistence: reload every artifact and compare bit for bit
        let db = load_db(store.path(DB_FILE)).unwrap();
        if db != *exp.db {
            problems.push("database differs after reload");
        }
        let copy = root.path().join("copy.adpf");
        save_db(&db, &copy).unwrap();
        if fs::read(&copy).unwrap() != fs::read(store.path(DB_FILE)).unwrap() {
            problems.push("database bytes differ after re-save");
        }
        let db = Arc::new(db);
        match TrainedLocalizer::load(store.path(REGRESSOR_FILE), db.clone()).unwrap() {
            TrainedLocalizer::Regressor(r) if bits(&r.model.params) == bits(&exp.regressor.model.params) => {}
            _ => problems.push("regressor checkpoint differs"),
        }
        match TrainedLocalizer::load(store.path(CLASSIFIER_FILE), db).unwrap() {
            TrainedLocalizer::Classifier(c) if bits(&c.model.params) == bits(&exp.classifier.model.params) => {}
            _ => problems.push("classifier checkpoint differs"),
        }
        let reloaded = ConvRecurrent::load(store.path(PREDICTOR_FILE)).unwrap();
        match &exp.predictor {
            PredictorKind::ConvRecurrent(m) if bits(&m.params) == bits(&reloaded.params) => {}
            _ => problems.push("predictor checkpoint differs"),
        }
        // a second prepare on the same store must reuse everything
        let again = Experiment::prepare(cfg.clone(), Some(&store)).unwrap();
        if again.training.reused.len() != 4 {
            problems.push("artifacts were rebuilt instead of reused");
        }
    }
    let identical = bodies[0] == bodies[1];
    if !identical {
        problems.push("report bodies differ between runs");
    }
    let detail = if problems.is_empty() {
        "two fresh runs byte-identical; database and three checkpoints round-trip bit-exactly".to_string()
    } else {
        problems.join("; ")
    };
    (problems.is_empty(), detail)
}

fn main() {
    let mut outcomes = Vec::new();
    outcomes.push(criterion(1, "unitarity", 1.0, 0.0, unitarity));
    outcomes.push(criterion(2, "single-path peak oracle", 5.0, 0.0, peak_oracle));
    outcomes.push(criterion(4, "gradient checks", 30.0, 0.0, gradient_checks));

    let start = Instant::now();
    let sparse = Experiment::prepare(ExperimentConfig::default(), None).expect("sparse experiment");
    let sparse_prep = start.elapsed().as_secs_f64();
    let db_time = sparse.timings.iter().find(|t| t.stage == "fingerprints").map_or(0.0, |t| t.seconds);
    let regressor_time = sparse.timings.iter().find(|t| t.stage == "regressor").map_or(0.0, |t| t.seconds);
    println!(
        "      sparse preparation {sparse_prep:.1}s ({})",
        sparse.timings.iter().map(|t| format!("{} {:.1}s", t.stage, t.seconds)).collect::<Vec<_>>().join(", ")
    );

    outcomes.push(criterion(3, "similarity vs distance", 30.0, db_time, || similarity_monotonicity(&sparse)));
    outcomes.push(criterion(5, "static localizer sanity", 300.0, db_time + regressor_time, || static_localizer(&sparse)));
    outcomes.push(criterion(10, "WKNN exactness", 1.0, 0.0, || wknn_exactness(&sparse)));

    let start = Instant::now();
    let los = sparse.evaluate(Scenario::LosBlock).expect("los evaluation").report;
    let los_time = start.elapsed().as_secs_f64();
    outcomes.push(criterion(6, "detection quality", 180.0, sparse_prep + los_time, || detection(&sparse, &los)));
    let start = Instant::now();
    let mut sparse_reports = vec![los];
    for sc in [Scenario::NlosBlock, Scenario::NlosAdd] {
        sparse_reports.push(sparse.evaluate(sc).expect("evaluation").report);
    }
    let eval_time = los_time + start.elapsed().as_secs_f64();
    outcomes.push(criterion(7, "ordering across methods", 600.0, sparse_prep + eval_time, || ordering(&sparse_reports)));
    outcomes.push(criterion(8, "error growth", 600.0, sparse_prep + eval_time, || error_growth(&sparse_reports[0])));

    let start = Instant::now();
    let rich_cfg = ExperimentConfig {
        environment: "rich".into(),
        ..ExperimentConfig::default()
    };
    let rich = Experiment::prepare(rich_cfg, None).expect("rich experiment");
    let rich_reports: Vec<Report> =
        Scenario::DISTORTING.iter().map(|&sc| rich.evaluate(sc).expect("evaluation").report).collect();
    let rich_time = start.elapsed().as_secs_f64();
    outcomes.push(criterion(9, "richness robustness", 600.0, rich_time + sparse_prep + eval_time, || {
        richness(&rich, &sparse_reports, &rich_reports)
    }));

    outcomes.push(criterion(11, "determinism and persistence", 600.0, 0.0, determinism));

    outcomes.sort_by_key(|o| o.id);
    let passed = outcomes.iter().filter(|o| o.ok()).count();
    println!("\nsummary ({passed}/{} passed):", outcomes.len());
    for o in &outcomes {
        o.print();
    }
    if passed < outcomes.len() && std::env::var_os("DYLOC_ACCEPTANCE_STRICT").is_some_and(|v| v != "0") {
        std::process::exit(1);
    }
}
