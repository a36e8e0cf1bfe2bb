use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use shrinknet::data::{gen_synthetic, split, NoiseKind, NoiseSpec, CHANNELS, NUM_CLASSES};
use shrinknet::error::{Error, Result};
use shrinknet::experiments::{
    emit_report, run_table1, run_table2, run_table3, ExperimentConfig, ExperimentReport,
};
use shrinknet::gradcheck::grad_check_model;
use shrinknet::model::{build_drsn, load_checkpoint, save_checkpoint, ModelConfig};
use shrinknet::nn::ThresholdMode;
use shrinknet::report::{write_confusion_csv, write_line_chart, write_manifest, write_metrics_csv};
use shrinknet::tensor::Tensor;
use shrinknet::train::{evaluate, train_loop, Metrics, OptimizerKind};

/// Residual shrinkage networks for 8-channel gesture classification, with
/// classical baselines and a reproducible experiment harness.
#[derive(Parser)]
#[command(name = "shrinknet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Dataset root (`<root>/<subject>/<label>.txt`); falls back to the
    /// SHRINKNET_DATA_ROOT environment variable.
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,

    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Threshold mode: `cs` (one threshold per sample) or `cw` (one per
    /// channel per sample).
    #[arg(long, global = true, default_value = "cs")]
    mode: String,

    /// Use the generated synthetic dataset even if a data root is set.
    #[arg(long, global = true)]
    synthetic: bool,

    /// Signal-to-noise ratio in dB for noise injection.
    #[arg(long, global = true, default_value_t = 5.0)]
    snr_db: f64,

    /// Restrict real data to the first N subjects.
    #[arg(long, global = true)]
    subjects: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Load (or generate) the dataset, split it, and record a manifest.
    Prepare,
    /// Train a shrinkage network and save a checkpoint plus metrics.
    Train {
        #[arg(long, default_value_t = 18)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        /// `adam` or `sgd`.
        #[arg(long, default_value = "adam")]
        optimizer: String,
        /// Inject Gaussian noise at --snr-db into the data before training.
        #[arg(long)]
        noisy: bool,
    },
    /// Evaluate a saved checkpoint on the held-out split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Verify analytic gradients of a small network against finite
    /// differences.
    Gradcheck,
    /// Compare logistic regression, random forest, plain CNN, and the
    /// shrinkage network on one shared split.
    Table1 {
        #[arg(long, default_value_t = 18)]
        epochs: usize,
    },
    /// Train the shrinkage network at several epoch budgets.
    Table2 {
        #[arg(long, value_delimiter = ',', default_values_t = [18usize, 31])]
        epoch_list: Vec<usize>,
    },
    /// Clean vs noise-injected training over several seeds.
    Table3 {
        #[arg(long, default_value_t = 3)]
        spread_seeds: usize,
        #[arg(long, default_value_t = 18)]
        epochs: usize,
    },
    /// Write a synthetic dataset to disk in the on-disk recording layout.
    Synth {
        #[arg(long, default_value_t = 3)]
        num_subjects: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn experiment_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mode = ThresholdMode::parse(&cli.mode)?;
    let data_root = cli
        .data_root
        .clone()
        .or_else(|| std::env::var_os("SHRINKNET_DATA_ROOT").map(PathBuf::from));
    Ok(ExperimentConfig {
        data_root,
        synthetic: cli.synthetic,
        seed: cli.seed,
        mode,
        snr_db: cli.snr_db,
        subjects: cli.subjects.or(Some(9)),
        ..ExperimentConfig::default()
    })
}

fn print_and_emit(report: &ExperimentReport, out: &Path) -> Result<()> {
    let paths = emit_report(report, out)?;
    let table_txt = out.join("table.txt");
    if let Ok(text) = fs::read_to_string(&table_txt) {
        print!("{text}");
    }
    println!("wrote {} files to {}", paths.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = experiment_config(&cli)?;
    match &cli.command {
        Command::Prepare => {
            let samples = config.samples(config.seed)?;
            let data_split = split(&samples, 0.8, config.seed)?;
            let mut counts_train = vec![0usize; NUM_CLASSES];
            let mut counts_test = vec![0usize; NUM_CLASSES];
            for s in &data_split.train {
                counts_train[s.label] += 1;
            }
            for s in &data_split.test {
                counts_test[s.label] += 1;
            }
            let mut manifest = BTreeMap::new();
            manifest.insert("seed".to_string(), serde_json::json!(config.seed));
            manifest.insert(
                "train_counts_per_class".to_string(),
                serde_json::json!(counts_train),
            );
            manifest.insert(
                "test_counts_per_class".to_string(),
                serde_json::json!(counts_test),
            );
            manifest.insert(
                "normalization_mean".to_string(),
                serde_json::json!(data_split.normalization_stats.mean.to_vec()),
            );
            manifest.insert(
                "normalization_std".to_string(),
                serde_json::json!(data_split.normalization_stats.std.to_vec()),
            );
            let path = write_manifest(&cli.out.join("manifest.json"), &manifest)?;
            println!(
                "prepared {} train / {} test samples; manifest at {}",
                data_split.train.len(),
                data_split.test.len(),
                path.display()
            );
            Ok(())
        }
        Command::Train {
            epochs,
            batch_size,
            learning_rate,
            optimizer,
            noisy,
        } => {
            let optimizer = OptimizerKind::parse(optimizer)
                .ok_or_else(|| Error::config("optimizer", "expected `adam` or `sgd`"))?;
            let config = ExperimentConfig {
                epochs: *epochs,
                batch_size: *batch_size,
                learning_rate: *learning_rate,
                optimizer,
                ..config
            };
            let samples = config.samples(config.seed)?;
            let data_split = split(&samples, 0.8, config.seed)?;
            let noise = noisy.then_some(NoiseSpec {
                kind: NoiseKind::Gaussian,
                snr_db: config.snr_db,
                seed: config.seed,
            });
            let mut train_cfg = config.train_config(config.seed, noise);
            train_cfg.divergence_checkpoint = Some(cli.out.join("last_good.ckpt"));
            let mut model = build_drsn(config.model_config(config.seed))?;
            let metrics = train_loop(&mut model, &data_split, &train_cfg)?;
            fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
            let ckpt = cli.out.join("model.ckpt");
            save_checkpoint(&model, &ckpt)?;
            emit_training_artifacts(&cli.out, "drsn", &metrics)?;
            println!(
                "trained {} epochs: train accuracy {:.1}%, validation accuracy {:.1}%",
                epochs,
                metrics.final_train_accuracy() * 100.0,
                metrics.final_val_accuracy() * 100.0
            );
            println!("checkpoint at {}", ckpt.display());
            Ok(())
        }
        Command::Eval { checkpoint } => {
            let mut model = load_checkpoint(checkpoint)?;
            let samples = config.samples(config.seed)?;
            let data_split = split(&samples, 0.8, config.seed)?;
            let test: Vec<_> = data_split
                .test
                .iter()
                .map(|s| shrinknet::data::normalize(s, &data_split.normalization_stats))
                .collect();
            let eval = evaluate(&mut model, &test)?;
            let metrics = Metrics {
                train_loss: vec![],
                train_accuracy: vec![],
                val_loss: vec![eval.loss],
                val_accuracy: vec![eval.accuracy],
                confusion: eval.confusion,
                steps: 0,
                wall_seconds: 0.0,
            };
            write_confusion_csv(
                &cli.out.join("confusion.csv"),
                &[("checkpoint".to_string(), metrics)],
            )?;
            println!(
                "validation accuracy {:.1}% (loss {:.4}) on {} samples",
                eval.accuracy * 100.0,
                eval.loss,
                test.len()
            );
            Ok(())
        }
        Command::Gradcheck => {
            let model_config = ModelConfig::toy(config.mode, config.seed);
            let mut model = build_drsn(model_config.clone())?;
            use rand::prelude::*;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed ^ 0x6772_6164);
            let n = 4;
            let data: Vec<f64> = (0..n * model_config.input_channels * model_config.input_width)
                .map(|_| rng.gen_range(-1.5..1.5))
                .collect();
            let x = Tensor::new(
                vec![n, model_config.input_channels, model_config.input_width],
                data,
            )?;
            let labels: Vec<usize> = (0..n).map(|i| i % model_config.num_classes).collect();
            let report = grad_check_model(&mut model, &x, &labels, 1e-5);
            println!(
                "checked {} parameter coordinates ({} masked near kinks); max relative error {:.3e}",
                report.checked,
                report.masked.len(),
                report.max_relative_error
            );
            if report.max_relative_error < 1e-4 {
                println!("gradient check passed");
                Ok(())
            } else {
                Err(Error::contract(format!(
                    "gradient check failed: max relative error {:.3e} >= 1e-4",
                    report.max_relative_error
                )))
            }
        }
        Command::Table1 { epochs } => {
            let config = ExperimentConfig {
                epochs: *epochs,
                ..config
            };
            let report = run_table1(&config)?;
            print_and_emit(&report, &cli.out)
        }
        Command::Table2 { epoch_list } => {
            let report = run_table2(&config, epoch_list)?;
            print_and_emit(&report, &cli.out)
        }
        Command::Table3 {
            spread_seeds,
            epochs,
        } => {
            let config = ExperimentConfig {
                spread_seeds: *spread_seeds,
                epochs: *epochs,
                ..config
            };
            let report = run_table3(&config)?;
            print_and_emit(&report, &cli.out)
        }
        Command::Synth { num_subjects } => {
            if *num_subjects == 0 {
                return Err(Error::config("num_subjects", "must be at least 1"));
            }
            let window = 1200;
            let windows_per_recording = shrinknet::data::RECORDING_TIMESTEPS / window;
            for subject in 0..*num_subjects {
                let samples = gen_synthetic(
                    NUM_CLASSES,
                    windows_per_recording,
                    window,
                    config.seed.wrapping_add(subject as u64),
                )?;
                let dir = cli.out.join(format!("{subject}"));
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for label in 0..NUM_CLASSES {
                    let mut text = String::new();
                    for s in samples.iter().filter(|s| s.label == label) {
                        for t in 0..s.width {
                            let row: Vec<String> = (0..CHANNELS)
                                .map(|c| format!("{:.6}", s.channel(c)[t]))
                                .collect();
                            text.push_str(&row.join(" "));
                            text.push('\n');
                        }
                    }
                    let path = dir.join(format!("{label}.txt"));
                    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                }
            }
            println!(
                "wrote synthetic recordings for {} subjects under {}",
                num_subjects,
                cli.out.display()
            );
            Ok(())
        }
    }
}

fn emit_training_artifacts(out: &Path, name: &str, metrics: &Metrics) -> Result<()> {
    let runs = vec![(name.to_string(), metrics.clone())];
    write_metrics_csv(&out.join("metrics.csv"), &runs)?;
    write_confusion_csv(&out.join("confusion.csv"), &runs)?;
    write_line_chart(
        &out.join("curve_accuracy.svg"),
        "accuracy",
        "accuracy",
        &[
            ("train".to_string(), metrics.train_accuracy.clone()),
            ("validation".to_string(), metrics.val_accuracy.clone()),
        ],
    )?;
    write_line_chart(
        &out.join("curve_loss.svg"),
        "loss",
        "loss",
        &[
            ("train".to_string(), metrics.train_loss.clone()),
            ("validation".to_string(), metrics.val_loss.clone()),
        ],
    )?;
    Ok(())
}
