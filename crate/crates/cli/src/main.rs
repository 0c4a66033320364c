use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use dyloc::container::AdpContainer;
use dyloc::dynamics::{sequences_from_container, sequences_to_container};
use dyloc::harness::{
    self, calibrate, emit_report, obtain_classifier, obtain_db, obtain_predictor, obtain_regressor,
    parse_report_json, render_table, ArtifactStore, Experiment, ExperimentConfig, LocalizerChoice,
    PredictorChoice, Scenario, REPORT_JSON, THRESHOLDS_FILE,
};
use dyloc::Error;

#[derive(Parser)]
#[command(name = "dyloc", version, about = "Fingerprint localization under dynamic multipath")]
struct Cli {
    /// Experiment configuration (TOML); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact and report directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    scenario: Option<ScenarioArg>,
    #[arg(long, global = true, value_enum)]
    localizer: Option<LocalizerArg>,
    #[arg(long, global = true, value_enum)]
    predictor: Option<PredictorArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trace and transform every grid point into the fingerprint database.
    BuildDb,
    /// Train the selected static localizer.
    TrainLocalizer,
    /// Train the learned frame predictor (peak tracking needs no training).
    TrainPredictor,
    /// Generate the seeded test sequences for the selected scenario.
    GenSequences,
    /// Calibrate the detection and recovery thresholds.
    CalibrateThresholds,
    /// Run the four-method comparison and write the report files.
    Run,
    /// Print a saved report as a table.
    Report {
        /// Report file; defaults to report.json in the output directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    LosBlock,
    NlosBlock,
    NlosAdd,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum LocalizerArg {
    Regressor,
    ClassifierWknn,
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorArg {
    PeakTrack,
    ConvRecurrent,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::LosBlock => Scenario::LosBlock,
            ScenarioArg::NlosBlock => Scenario::NlosBlock,
            ScenarioArg::NlosAdd => Scenario::NlosAdd,
            ScenarioArg::None => Scenario::None,
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(s) = cli.scenario {
        cfg.scenario = s.into();
    }
    if let Some(l) = cli.localizer {
        cfg.localizer = match l {
            LocalizerArg::Regressor => LocalizerChoice::Regressor,
            LocalizerArg::ClassifierWknn => LocalizerChoice::ClassifierWknn,
        };
    }
    if let Some(p) = cli.predictor {
        cfg.predictor = match p {
            PredictorArg::PeakTrack => PredictorChoice::PeakTrack,
            PredictorArg::ConvRecurrent => PredictorChoice::ConvRecurrent,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn db_tag(cfg: &ExperimentConfig) -> Result<String, Error> {
    let env = cfg.resolve_environment()?;
    Ok(harness::db_digest(cfg, &env))
}

fn reuse_note(reused: bool) -> &'static str {
    if reused {
        " (reused)"
    } else {
        ""
    }
}

fn execute(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    if let Command::Report { input } = &cli.command {
        let path = input.clone().unwrap_or_else(|| cfg.out_dir.join(REPORT_JSON));
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read report {}: {e}", path.display())))?;
        print!("{}", render_table(&parse_report_json(&text)?));
        return Ok(());
    }
    let store = ArtifactStore::new(&cfg.out_dir)?;
    let scene = cfg.scene()?;
    match &cli.command {
        Command::BuildDb => {
            let (db, reused) = obtain_db(&cfg, &scene, Some(&store))?;
            println!(
                "{} fingerprints ({} lost links, {} truncated paths) -> {}{}",
                db.len(),
                db.entries.iter().filter(|e| e.lost_link).count(),
                db.meta.truncated_paths,
                store.path(harness::DB_FILE).display(),
                reuse_note(reused)
            );
        }
        Command::TrainLocalizer => {
            let db = Arc::new(obtain_db(&cfg, &scene, Some(&store))?.0);
            let tag = db_tag(&cfg)?;
            let (file, loss, reused) = match cfg.localizer {
                LocalizerChoice::Regressor => {
                    let (_, loss, reused) = obtain_regressor(&cfg, &db, &tag, Some(&store))?;
                    (harness::REGRESSOR_FILE, loss, reused)
                }
                LocalizerChoice::ClassifierWknn => {
                    let (_, loss, reused) = obtain_classifier(&cfg, &db, &tag, Some(&store))?;
                    (harness::CLASSIFIER_FILE, loss, reused)
                }
            };
            let loss = loss.map_or_else(String::new, |l| format!("final loss {l:.6}, "));
            println!("{loss}checkpoint {}{}", store.path(file).display(), reuse_note(reused));
        }
        Command::TrainPredictor => {
            let (_, report, reused) = obtain_predictor(&cfg, &scene, &db_tag(&cfg)?, Some(&store))?;
            match cfg.predictor {
                PredictorChoice::PeakTrack => println!("peak tracking has no trainable parameters"),
                PredictorChoice::ConvRecurrent => {
                    if let Some(r) = report {
                        println!("train loss {:.6}, validation loss {:?}", r.train_loss, r.validation_loss);
                    }
                    println!("checkpoint {}{}", store.path(harness::PREDICTOR_FILE).display(), reuse_note(reused));
                }
            }
        }
        Command::GenSequences => {
            let sequences = harness::test_sequences(&cfg, &scene, cfg.scenario)?;
            let path = store.path(&format!("sequences-{}.adpf", cfg.scenario.name()));
            let mut w = BufWriter::new(File::create(&path)?);
            sequences_to_container(&sequences, scene.adp_dims()).write_to(&mut w)?;
            w.flush()?;
            // read back so a broken file fails here rather than later
            let stored = sequences_from_container(AdpContainer::read_from(BufReader::new(File::open(&path)?))?)?;
            println!("{} sequences of {} frames -> {}", stored.len(), cfg.sequence_length, path.display());
        }
        Command::CalibrateThresholds => {
            let (db, _) = obtain_db(&cfg, &scene, Some(&store))?;
            let cal = calibrate(&cfg, &db)?;
            let text = toml::to_string(&cal).map_err(|e| Error::Format(e.to_string()))?;
            let path = store.path(THRESHOLDS_FILE);
            fs::write(&path, &text)?;
            print!("{text}");
            println!("-> {}", path.display());
        }
        Command::Run => {
            let exp = Experiment::prepare(cfg.clone(), Some(&store))?;
            let output = exp.evaluate(cfg.scenario)?;
            let written = emit_report(&output, &cfg.out_dir)?;
            print!("{}", render_table(&output.report));
            for p in written {
                println!("wrote {}", p.display());
            }
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
