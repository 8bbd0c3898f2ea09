//! `synthad` command-line interface.
//!
//! Subcommands mirror the pipeline stages and are runnable standalone on
//! the artifacts a previous stage persisted into the run directory.
//! Exit codes: 0 success, 1 stage error, 2 configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use synthad_core::dataset::{self, FeatureMatrix};
use synthad_core::detector;
use synthad_core::generation::{CandidateSet, Provenance};
use synthad_core::metrics;
use synthad_core::pipeline::{self, PipelineConfig, Strategy, SynthParams};
use synthad_core::rarity;
use synthad_core::{classifier, Error};

#[derive(Parser)]
#[command(name = "synthad", version, about = "Synthetic-anomaly augmentation for tabular anomaly detection")]
struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the config's run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write report.json.
    Pipeline,
    /// Run several generation strategies over shared pseudo-labels and
    /// seeds, averaging metrics across runs.
    Compare {
        /// Comma-separated strategy list (defaults to run.strategies).
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<Strategy>>,
    },
    /// Score the test set with the configured detector (writes scores.txt).
    Score,
    /// Select pseudo-anomalies from persisted scores (writes pseudo.csv).
    Pseudo,
    /// Generate candidate anomalies from persisted pseudo rows
    /// (writes candidates.csv).
    Generate,
    /// Run two-stage selection on persisted candidates (writes
    /// accepted.csv, selected.csv, selection_report.json).
    Select,
    /// Train the classifier on persisted selected anomalies
    /// (writes model.json).
    Train,
    /// Evaluate a persisted model on the test set (writes eval.json).
    Eval,
    /// Write the built-in synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 2000)]
        n_normal: usize,
        #[arg(long, default_value_t = 900)]
        n_test_normal: usize,
        #[arg(long, default_value_t = 100)]
        n_test_anomaly: usize,
        #[arg(long, default_value_t = 6)]
        m: usize,
        #[arg(long, default_value_t = 4.0)]
        shift: f64,
        /// Output path for the training CSV.
        #[arg(long, default_value = "train.csv")]
        train_out: PathBuf,
        /// Output path for the test CSV.
        #[arg(long, default_value = "test.csv")]
        test_out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <path> is required for this command".into()))?;
    let mut config = PipelineConfig::load(path)?;
    if let Some(out) = &cli.out {
        config.run.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    Ok(config)
}

struct LoadedData {
    schema: dataset::DatasetSchema,
    train: FeatureMatrix,
    test: FeatureMatrix,
    test_labels: Vec<u8>,
}

fn load_data(config: &PipelineConfig) -> Result<LoadedData, Error> {
    let label = config.dataset.label_column.as_deref();
    let train_loaded = dataset::load_csv(&config.dataset.train, label)?;
    let test_loaded = dataset::load_csv(&config.dataset.test, label)?;
    let normal_idx: Vec<usize> = train_loaded
        .data
        .labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == 0)
        .map(|(i, _)| i)
        .collect();
    Ok(LoadedData {
        schema: train_loaded.schema,
        train: train_loaded.data.matrix.select_rows(&normal_idx),
        test: test_loaded.data.matrix,
        test_labels: test_loaded.data.labels,
    })
}

fn print_metric(name: &str, value: f64) {
    println!("{name}: {value:.6}");
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Pipeline => {
            let config = load_config(&cli)?;
            let report = pipeline::run_pipeline(&config)?;
            println!(
                "pipeline done: strategy={} seed={} pseudo={} candidates={} accepted={} selected={}",
                report.strategy,
                report.seed,
                report.pseudo_count,
                report.candidate_count,
                report.accepted_count,
                report.selected_count,
            );
            print_metric("auc_roc", report.eval.auc_roc);
            print_metric("auc_pr", report.eval.auc_pr);
            print_metric("f1", report.eval.f1);
            print_metric("f1_topk", report.eval.f1_topk);
            println!("report: {}", config.run.out_dir.join("report.json").display());
            Ok(())
        }
        Command::Compare { strategies } => {
            let config = load_config(&cli)?;
            let list = strategies
                .clone()
                .unwrap_or_else(|| config.run.strategies.clone());
            let report = pipeline::run_compare(&config, &list)?;
            for s in &report.summaries {
                println!(
                    "{}: ok={} failed={} mean_auc_roc={} mean_auc_pr={} mean_f1={}",
                    s.strategy,
                    s.runs_ok,
                    s.runs_failed,
                    fmt_mean(s.mean_auc_roc),
                    fmt_mean(s.mean_auc_pr),
                    fmt_mean(s.mean_f1),
                );
            }
            println!(
                "table: {}",
                config.run.out_dir.join("compare.csv").display()
            );
            Ok(())
        }
        Command::Score => {
            let config = load_config(&cli)?;
            let data = load_data(&config)?;
            let det = config.detector.to_config()?;
            let scores = detector::fit_score(&det, &data.train, &data.test)?;
            std::fs::create_dir_all(&config.run.out_dir)
                .map_err(|e| Error::Config(format!("cannot create out dir: {e}")))?;
            let text: String = scores
                .scores
                .iter()
                .map(|s| format!("{}\n", dataset::format_float(*s)))
                .collect();
            let path = config.run.out_dir.join("scores.txt");
            std::fs::write(&path, text).map_err(|e| Error::Config(format!("write failed: {e}")))?;
            println!("wrote {} scores to {}", scores.len(), path.display());
            Ok(())
        }
        Command::Pseudo => {
            let config = load_config(&cli)?;
            let data = load_data(&config)?;
            let scores = detector::load_external_scores(
                &config.run.out_dir.join("scores.txt"),
                data.test.n_rows(),
            )?;
            let pseudo = detector::select_pseudo(&scores, &data.test, config.detector.p1)?;
            let path = config.run.out_dir.join("pseudo.csv");
            dataset::write_csv(&path, &data.schema, &pseudo.rows, None)?;
            println!("wrote {} pseudo-anomalies to {}", pseudo.len(), path.display());
            Ok(())
        }
        Command::Generate => {
            let config = load_config(&cli)?;
            let data = load_data(&config)?;
            let pseudo = load_pseudo(&config)?;
            let (ecdf, range) = fit_rarity(&config, &data, &pseudo)?;
            let count = config
                .generation
                .count
                .unwrap_or(if data.train.n_rows() + data.test.n_rows() > 3000 {
                    200
                } else {
                    100
                });
            let candidates = pipeline::generate_candidates(
                &config,
                &data.schema,
                &data.train,
                &pseudo,
                &ecdf,
                range,
                count,
                config.run.seed,
                &config.run.out_dir,
                &synthad_core::generation::HttpTransport,
            )?;
            let path = config.run.out_dir.join("candidates.csv");
            dataset::write_csv(&path, &data.schema, &candidates.rows, None)?;
            println!(
                "wrote {} candidates (strategy {}) to {}",
                candidates.rows.n_rows(),
                candidates.provenance,
                path.display()
            );
            Ok(())
        }
        Command::Select => {
            let config = load_config(&cli)?;
            let data = load_data(&config)?;
            let pseudo = load_pseudo(&config)?;
            let loaded =
                dataset::load_csv(&config.run.out_dir.join("candidates.csv"), None)?;
            let candidates = CandidateSet {
                rows: loaded.data.matrix,
                provenance: provenance_of(config.generation.strategy),
            };
            let outcome = pipeline::run_selection(
                &config,
                &data.schema,
                Some(&candidates),
                &pseudo,
                &data.train,
                &config.run.out_dir,
            )?;
            println!(
                "accepted {} candidates, selected {}",
                outcome.accepted_count,
                outcome.selected.map_or(0, |s| s.n_rows())
            );
            Ok(())
        }
        Command::Train => {
            let config = load_config(&cli)?;
            let data = load_data(&config)?;
            let selected =
                dataset::load_csv(&config.run.out_dir.join("selected.csv"), None)?;
            let mlp = classifier::MlpConfig {
                hidden_sizes: config.classifier.hidden_sizes.clone(),
                seed: config.run.seed.wrapping_add(2),
            };
            let train_cfg = classifier::TrainConfig {
                epochs: config.classifier.epochs,
                batch_size: config.classifier.batch_size,
                learning_rate: config.classifier.learning_rate,
                focal_alpha: config.classifier.focal_alpha,
                focal_gamma: config.classifier.focal_gamma,
                shuffle_seed: config.run.seed.wrapping_add(3),
            };
            let model =
                classifier::train(&data.train, &selected.data.matrix, &mlp, &train_cfg)?;
            let path = config.run.out_dir.join("model.json");
            model.save(&path)?;
            println!(
                "trained on {} normals + {} anomalies; final loss {:.6}; model at {}",
                data.train.n_rows(),
                selected.data.matrix.n_rows(),
                model.final_loss,
                path.display()
            );
            Ok(())
        }
        Command::Eval => {
            let config = load_config(&cli)?;
            let data = load_data(&config)?;
            let model = classifier::MlpModel::load(&config.run.out_dir.join("model.json"))?;
            let probs = model.predict(&data.test)?;
            let report = metrics::evaluate(&probs.0, &data.test_labels, config.metrics.threshold)?;
            let path = config.run.out_dir.join("eval.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report)?)
                .map_err(|e| Error::Config(format!("write failed: {e}")))?;
            print_metric("auc_roc", report.auc_roc);
            print_metric("auc_pr", report.auc_pr);
            print_metric("f1", report.f1);
            print_metric("f1_topk", report.f1_topk);
            Ok(())
        }
        Command::Synth {
            n_normal,
            n_test_normal,
            n_test_anomaly,
            m,
            shift,
            train_out,
            test_out,
        } => {
            let params = SynthParams {
                seed: cli.seed.unwrap_or(0),
                n_normal: *n_normal,
                n_test_normal: *n_test_normal,
                n_test_anomaly: *n_test_anomaly,
                m: *m,
                shift: *shift,
            };
            pipeline::make_synthetic_dataset(&params, train_out, test_out)?;
            println!(
                "wrote {} train rows to {} and {} test rows to {}",
                n_normal,
                train_out.display(),
                n_test_normal + n_test_anomaly,
                test_out.display()
            );
            Ok(())
        }
    }
}

fn fmt_mean(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into())
}

fn provenance_of(strategy: Strategy) -> Provenance {
    match strategy {
        Strategy::Llm => Provenance::Llm,
        Strategy::Mock => Provenance::Mock,
        Strategy::GaussianNoise => Provenance::GaussianNoise,
        Strategy::Cutout => Provenance::Cutout,
        Strategy::Cutmix => Provenance::Cutmix,
    }
}

fn load_pseudo(config: &PipelineConfig) -> Result<detector::PseudoAnomalySet, Error> {
    let loaded = dataset::load_csv(&config.run.out_dir.join("pseudo.csv"), None)?;
    let n = loaded.data.matrix.n_rows();
    detector::PseudoAnomalySet::new((0..n).collect(), loaded.data.matrix)
}

fn fit_rarity(
    config: &PipelineConfig,
    data: &LoadedData,
    pseudo: &detector::PseudoAnomalySet,
) -> Result<(rarity::EcdfModel, rarity::ScoreRange), Error> {
    let fit_matrix = match config.rarity.fit_population {
        pipeline::FitPopulation::TrainTest => {
            FeatureMatrix::vstack(&[&data.train, &data.test])?
        }
        pipeline::FitPopulation::TrainOnly => data.train.clone(),
    };
    let ecdf = rarity::fit_ecdf(&fit_matrix)?;
    let range = rarity::pseudo_score_range(&ecdf, pseudo, config.rarity.p2)?;
    Ok((ecdf, range))
}
