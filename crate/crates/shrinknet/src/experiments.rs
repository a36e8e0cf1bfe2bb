//! The three reported experiments — model comparison, epoch-count
//! comparison, and noise robustness — plus artifact emission.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::baselines::{extract_features, lr_train, rf_train, BaselineModel, FeatureMode};
use crate::data::{gen_synthetic, load_dataset, split, DatasetSplit, GestureSample, NoiseKind, NoiseSpec, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::model::{build_cnn_baseline, build_drsn, ModelConfig};
use crate::nn::ThresholdMode;
use crate::report::{
    write_confusion_csv, write_line_chart, write_manifest, write_metrics_csv, write_table_csv,
    write_table_txt, Table,
};
use crate::train::{train_loop, Metrics, OptimizerKind, TrainConfig};

/// Window width of the generated dataset (1 s at the recording rate);
/// keeps the full pipeline fast enough for unattended runs.
pub const SYNTHETIC_WIDTH: usize = 200;
pub const SYNTHETIC_SAMPLES_PER_CLASS: usize = 50;

const TRAIN_RATIO: f64 = 0.8;
const SAMPLES_PER_RECORDING: usize = 10;

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub data_root: Option<PathBuf>,
    pub synthetic: bool,
    pub seed: u64,
    pub mode: ThresholdMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Restrict real data to the first N subjects.
    pub subjects: Option<usize>,
    pub snr_db: f64,
    /// Seeds used for the mean ± spread of the noise experiment.
    pub spread_seeds: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data_root: None,
            synthetic: false,
            seed: 0,
            mode: ThresholdMode::ChannelShared,
            epochs: 18,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            subjects: Some(9),
            snr_db: 5.0,
            spread_seeds: 3,
        }
    }
}

impl ExperimentConfig {
    pub fn use_synthetic(&self) -> bool {
        self.synthetic || self.data_root.is_none()
    }

    pub fn samples(&self, seed: u64) -> Result<Vec<GestureSample>> {
        if self.use_synthetic() {
            gen_synthetic(NUM_CLASSES, SYNTHETIC_SAMPLES_PER_CLASS, SYNTHETIC_WIDTH, seed)
        } else {
            let root = self.data_root.as_deref().expect("checked by use_synthetic");
            load_dataset(root, self.subjects, SAMPLES_PER_RECORDING)
        }
    }

    pub fn model_config(&self, seed: u64) -> ModelConfig {
        if self.use_synthetic() {
            ModelConfig {
                input_channels: crate::data::CHANNELS,
                input_width: SYNTHETIC_WIDTH,
                stage_channels: vec![4, 8],
                blocks_per_stage: vec![1, 1],
                fc_hidden: None,
                num_classes: NUM_CLASSES,
                mode: self.mode,
                seed,
            }
        } else {
            ModelConfig::desk_default(self.mode, seed)
        }
    }

    pub fn train_config(&self, seed: u64, noise: Option<NoiseSpec>) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            noise,
            divergence_checkpoint: None,
        }
    }

    fn source_label(&self) -> String {
        if self.use_synthetic() {
            "synthetic".to_string()
        } else {
            format!(
                "{} (subjects: {})",
                self.data_root.as_ref().unwrap().display(),
                self.subjects.map_or("all".to_string(), |n| n.to_string())
            )
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub experiment: String,
    pub configs: BTreeMap<String, serde_json::Value>,
    pub runs: Vec<(String, Metrics)>,
    pub table: Table,
}

fn pct(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

fn baseline_metrics(
    model: &BaselineModel,
    train: &[(Vec<f64>, usize)],
    test: &[(Vec<f64>, usize)],
) -> Result<Metrics> {
    let eval = |set: &[(Vec<f64>, usize)]| -> Result<(f64, Vec<Vec<usize>>)> {
        let mut confusion = vec![vec![0usize; NUM_CLASSES]; NUM_CLASSES];
        for (x, y) in set {
            confusion[*y][model.predict(x)?] += 1;
        }
        let trace: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
        Ok((trace as f64 / set.len() as f64, confusion))
    };
    let (train_acc, _) = eval(train)?;
    let (val_acc, confusion) = eval(test)?;
    Ok(Metrics {
        train_loss: vec![f64::NAN],
        train_accuracy: vec![train_acc],
        val_loss: vec![f64::NAN],
        val_accuracy: vec![val_acc],
        confusion,
        steps: 0,
        wall_seconds: 0.0,
    })
}

/// Labeled feature vectors, one per sample.
type FeatureSet = Vec<(Vec<f64>, usize)>;

fn feature_sets(split: &DatasetSplit) -> (FeatureSet, FeatureSet) {
    let stats = &split.normalization_stats;
    let prep = |samples: &[GestureSample]| {
        samples
            .iter()
            .map(|s| {
                let normalized = crate::data::normalize(s, stats);
                let f = extract_features(&normalized, FeatureMode::TimeDomain);
                (f.values, f.label)
            })
            .collect::<Vec<_>>()
    };
    (prep(&split.train), prep(&split.test))
}

/// Train the two classical baselines, the plain CNN, and the shrinkage
/// network on one shared split and tabulate their accuracies.
pub fn run_table1(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let samples = config.samples(config.seed)?;
    let data_split = split(&samples, TRAIN_RATIO, config.seed)?;
    let (train_feats, test_feats) = feature_sets(&data_split);
    let fx: Vec<Vec<f64>> = train_feats.iter().map(|(x, _)| x.clone()).collect();
    let fy: Vec<usize> = train_feats.iter().map(|(_, y)| *y).collect();

    let lr = BaselineModel::Lr(lr_train(&fx, &fy, NUM_CLASSES, 0.1, 500, 0.0)?);
    let rf = BaselineModel::Rf(rf_train(&fx, &fy, NUM_CLASSES, 100, 12, config.seed)?);
    let mut runs = vec![
        (
            "logistic-regression".to_string(),
            baseline_metrics(&lr, &train_feats, &test_feats)?,
        ),
        (
            "random-forest".to_string(),
            baseline_metrics(&rf, &train_feats, &test_feats)?,
        ),
    ];

    let train_cfg = config.train_config(config.seed, None);
    let mut cnn = build_cnn_baseline(config.model_config(config.seed))?;
    runs.push(("cnn".to_string(), train_loop(&mut cnn, &data_split, &train_cfg)?));
    let mut drsn = build_drsn(config.model_config(config.seed))?;
    runs.push(("drsn".to_string(), train_loop(&mut drsn, &data_split, &train_cfg)?));

    let table = Table {
        headers: vec![
            "model".to_string(),
            "train_accuracy".to_string(),
            "val_accuracy".to_string(),
        ],
        rows: runs
            .iter()
            .map(|(name, m)| {
                vec![
                    name.clone(),
                    pct(m.final_train_accuracy()),
                    pct(m.final_val_accuracy()),
                ]
            })
            .collect(),
    };
    Ok(ExperimentReport {
        experiment: "table1".to_string(),
        configs: base_config_record(config),
        runs,
        table,
    })
}

/// Train the shrinkage network once per epoch budget on the same split.
pub fn run_table2(config: &ExperimentConfig, epoch_list: &[usize]) -> Result<ExperimentReport> {
    if epoch_list.is_empty() {
        return Err(Error::config("epoch_list", "must not be empty"));
    }
    let samples = config.samples(config.seed)?;
    let data_split = split(&samples, TRAIN_RATIO, config.seed)?;
    let mut runs = Vec::new();
    for &epochs in epoch_list {
        let mut model = build_drsn(config.model_config(config.seed))?;
        let train_cfg = TrainConfig {
            epochs,
            ..config.train_config(config.seed, None)
        };
        let metrics = train_loop(&mut model, &data_split, &train_cfg)?;
        runs.push((format!("drsn-{epochs}ep"), metrics));
    }
    let table = Table {
        headers: vec![
            "epochs".to_string(),
            "train_accuracy".to_string(),
            "val_accuracy".to_string(),
        ],
        rows: epoch_list
            .iter()
            .zip(&runs)
            .map(|(&epochs, (_, m))| {
                vec![
                    epochs.to_string(),
                    pct(m.final_train_accuracy()),
                    pct(m.final_val_accuracy()),
                ]
            })
            .collect(),
    };
    let mut configs = base_config_record(config);
    configs.insert("epoch_list".to_string(), serde_json::json!(epoch_list));
    Ok(ExperimentReport {
        experiment: "table2".to_string(),
        configs,
        runs,
        table,
    })
}

fn mean_spread(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Clean vs noise-injected training over several seeds, reported as
/// mean ± spread (population standard deviation across seeds).
pub fn run_table3(config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.spread_seeds == 0 {
        return Err(Error::config("spread_seeds", "must be at least 1"));
    }
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for (condition, noisy) in [("no-noise", false), ("with-noise", true)] {
        let mut train_accs = Vec::new();
        let mut val_accs = Vec::new();
        for k in 0..config.spread_seeds {
            let seed = config.seed + k as u64;
            let samples = config.samples(seed)?;
            let data_split = split(&samples, TRAIN_RATIO, seed)?;
            let noise = noisy.then_some(NoiseSpec {
                kind: NoiseKind::Gaussian,
                snr_db: config.snr_db,
                seed,
            });
            let mut model = build_drsn(config.model_config(seed))?;
            let metrics = train_loop(&mut model, &data_split, &config.train_config(seed, noise))?;
            train_accs.push(metrics.final_train_accuracy());
            val_accs.push(metrics.final_val_accuracy());
            runs.push((format!("drsn-{condition}-seed{seed}"), metrics));
        }
        let (tm, ts) = mean_spread(&train_accs);
        let (vm, vs) = mean_spread(&val_accs);
        rows.push(vec![
            condition.to_string(),
            format!("{} ± {}", pct(tm), pct(ts)),
            format!("{} ± {}", pct(vm), pct(vs)),
        ]);
    }
    let table = Table {
        headers: vec![
            "condition".to_string(),
            "train_accuracy".to_string(),
            "val_accuracy".to_string(),
        ],
        rows,
    };
    let mut configs = base_config_record(config);
    configs.insert("snr_db".to_string(), serde_json::json!(config.snr_db));
    configs.insert(
        "spread_seeds".to_string(),
        serde_json::json!(config.spread_seeds),
    );
    Ok(ExperimentReport {
        experiment: "table3".to_string(),
        configs,
        runs,
        table,
    })
}

fn base_config_record(config: &ExperimentConfig) -> BTreeMap<String, serde_json::Value> {
    let mut out = BTreeMap::new();
    out.insert("data_source".to_string(), serde_json::json!(config.source_label()));
    out.insert("seed".to_string(), serde_json::json!(config.seed));
    out.insert("threshold_mode".to_string(), serde_json::json!(config.mode.as_str()));
    out.insert("optimizer".to_string(), serde_json::json!(config.optimizer.as_str()));
    out.insert("learning_rate".to_string(), serde_json::json!(config.learning_rate));
    out.insert("batch_size".to_string(), serde_json::json!(config.batch_size));
    out.insert("epochs".to_string(), serde_json::json!(config.epochs));
    out.insert("train_ratio".to_string(), serde_json::json!(TRAIN_RATIO));
    out.insert(
        "validation_set".to_string(),
        serde_json::json!("the held-out 20% test split"),
    );
    out
}

/// Write every artifact for a report into `out_dir` and return the paths.
/// Wall-clock timings go only into the manifest so the other files are
/// byte-stable across reruns.
pub fn emit_report(report: &ExperimentReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = vec![
        write_metrics_csv(&out_dir.join("metrics.csv"), &report.runs)?,
        write_table_csv(&out_dir.join("table.csv"), &report.table)?,
        write_table_txt(&out_dir.join("table.txt"), &report.table)?,
        write_confusion_csv(&out_dir.join("confusion.csv"), &report.runs)?,
    ];

    let acc_series: Vec<(String, Vec<f64>)> = report
        .runs
        .iter()
        .filter(|(_, m)| m.steps > 0)
        .flat_map(|(name, m)| {
            [
                (format!("{name} train"), m.train_accuracy.clone()),
                (format!("{name} validation"), m.val_accuracy.clone()),
            ]
        })
        .collect();
    let loss_series: Vec<(String, Vec<f64>)> = report
        .runs
        .iter()
        .filter(|(_, m)| m.steps > 0)
        .flat_map(|(name, m)| {
            [
                (format!("{name} train"), m.train_loss.clone()),
                (format!("{name} validation"), m.val_loss.clone()),
            ]
        })
        .collect();
    paths.push(write_line_chart(
        &out_dir.join("curve_accuracy.svg"),
        &format!("{}: accuracy", report.experiment),
        "accuracy",
        &acc_series,
    )?);
    paths.push(write_line_chart(
        &out_dir.join("curve_loss.svg"),
        &format!("{}: loss", report.experiment),
        "loss",
        &loss_series,
    )?);

    let mut manifest = report.configs.clone();
    manifest.insert(
        "experiment".to_string(),
        serde_json::json!(report.experiment),
    );
    manifest.insert(
        "files".to_string(),
        serde_json::json!(paths
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect::<Vec<_>>()),
    );
    let timings: BTreeMap<String, f64> = report
        .runs
        .iter()
        .map(|(name, m)| (name.clone(), m.wall_seconds))
        .collect();
    manifest.insert("wall_seconds".to_string(), serde_json::json!(timings));
    let results: BTreeMap<String, serde_json::Value> = report
        .runs
        .iter()
        .map(|(name, m)| {
            (
                name.clone(),
                serde_json::json!({
                    "train_accuracy": m.final_train_accuracy(),
                    "val_accuracy": m.final_val_accuracy(),
                }),
            )
        })
        .collect();
    manifest.insert("results".to_string(), serde_json::json!(results));
    paths.push(write_manifest(&out_dir.join("manifest.json"), &manifest)?);
    Ok(paths)
}
