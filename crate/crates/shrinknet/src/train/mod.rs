//! Optimizers, the mini-batch training loop, and evaluation metrics.

use std::path::PathBuf;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::baselines::splitmix64;
use crate::data::{add_noise, batch_tensor, normalize, DatasetSplit, GestureSample, NoiseSpec};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, ShrinkNet};
use crate::params::ParamStore;
use crate::tape::{Gradients, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptimizerKind::Sgd),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub noise: Option<NoiseSpec>,
    /// Where to write the last-good checkpoint if training diverges.
    pub divergence_checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 18,
            seed: 0,
            noise: None,
            divergence_checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config(
                "batch_size",
                "must be at least 2 (batch statistics need more than one sample)",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// Final confusion matrix on the held-out set; `confusion[truth][pred]`.
    pub confusion: Vec<Vec<usize>>,
    pub steps: usize,
    pub wall_seconds: f64,
}

impl Metrics {
    pub fn final_val_accuracy(&self) -> f64 {
        self.val_accuracy.last().copied().unwrap_or(0.0)
    }

    pub fn final_train_accuracy(&self) -> f64 {
        self.train_accuracy.last().copied().unwrap_or(0.0)
    }
}

/// First/second-moment state for [`adam_step`], one slot per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let m = store
            .iter()
            .map(|(_, p)| vec![0.0; p.value.data().len()])
            .collect::<Vec<_>>();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One Adam update with bias correction.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for pid in ids {
        let Some(g) = grads.param(pid) else { continue };
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite gradient for parameter '{}' (element {i})",
                store.name(pid)
            )));
        }
        let m = &mut state.m[pid.0];
        let v = &mut state.v[pid.0];
        let w = store.value_mut(pid).data_mut();
        for i in 0..g.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            w[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Plain gradient descent update.
pub fn sgd_step(store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for pid in ids {
        let Some(g) = grads.param(pid) else { continue };
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite gradient for parameter '{}' (element {i})",
                store.name(pid)
            )));
        }
        let w = store.value_mut(pid).data_mut();
        for i in 0..g.len() {
            w[i] -= lr * g[i];
        }
    }
    Ok(())
}

fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
}

/// Eval-mode forward over the samples: mean loss, accuracy, and the
/// confusion matrix (`confusion[truth][pred]`).
pub fn evaluate(model: &mut ShrinkNet, samples: &[GestureSample]) -> Result<EvalResult> {
    if samples.is_empty() {
        return Err(Error::contract("evaluate requires at least one sample"));
    }
    let classes = model.config.num_classes;
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut loss_sum = 0.0;
    for chunk in samples.chunks(64) {
        let refs: Vec<&GestureSample> = chunk.iter().collect();
        let (batch, labels) = batch_tensor(&refs)?;
        let mut tape = Tape::new();
        let x = tape.leaf(batch);
        let logits = model.forward(&mut tape, x, false)?;
        let loss = tape.softmax_cross_entropy(logits, &labels)?;
        loss_sum += tape.value(loss).item() * chunk.len() as f64;
        let out = tape.value(logits);
        for (row, &truth) in labels.iter().enumerate() {
            let scores: Vec<f64> = (0..classes).map(|c| out.at2(row, c)).collect();
            confusion[truth][argmax_row(&scores)] += 1;
        }
    }
    let total: usize = confusion.iter().flatten().sum();
    let trace: usize = (0..classes).map(|c| confusion[c][c]).sum();
    Ok(EvalResult {
        loss: loss_sum / samples.len() as f64,
        accuracy: trace as f64 / total as f64,
        confusion,
    })
}

/// Batch boundaries over `n` samples. The count is always ⌈n/batch⌉; a
/// trailing singleton borrows one sample from the previous batch so every
/// batch satisfies the batch-statistics minimum.
fn batch_ranges(n: usize, batch: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        out.push((start, end));
        start = end;
    }
    let len = out.len();
    if len >= 2 && out[len - 1].1 - out[len - 1].0 == 1 {
        if out[len - 2].1 - out[len - 2].0 > 2 {
            out[len - 2].1 -= 1;
            out[len - 1].0 -= 1;
        } else {
            // batch size 2 with odd n: absorb the straggler instead
            out[len - 2].1 = n;
            out.pop();
        }
    }
    out
}

fn apply_noise(samples: &mut [GestureSample], spec: &NoiseSpec, salt: u64) {
    for (i, s) in samples.iter_mut().enumerate() {
        let per_sample = NoiseSpec {
            seed: splitmix64(spec.seed ^ salt ^ (i as u64)),
            ..*spec
        };
        *s = add_noise(s, &per_sample);
    }
}

/// Mini-batch training with per-epoch seeded shuffling and per-epoch
/// held-out evaluation. Training data is z-scored with the split's train
/// statistics; if noise is configured it is injected into both portions
/// before normalization.
pub fn train_loop(
    model: &mut ShrinkNet,
    split: &DatasetSplit,
    config: &TrainConfig,
) -> Result<Metrics> {
    config.validate()?;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::Data(
            "train_loop requires non-empty train and test portions".into(),
        ));
    }
    let started = Instant::now();

    let mut train: Vec<GestureSample> = split.train.clone();
    let mut test: Vec<GestureSample> = split.test.clone();
    if let Some(spec) = &config.noise {
        apply_noise(&mut train, spec, 0x7261_696e);
        apply_noise(&mut test, spec, 0x7465_7374);
    }
    let stats = &split.normalization_stats;
    for s in train.iter_mut() {
        *s = normalize(s, stats);
    }
    for s in test.iter_mut() {
        *s = normalize(s, stats);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(&model.store);
    let mut metrics = Metrics {
        train_loss: Vec::new(),
        train_accuracy: Vec::new(),
        val_loss: Vec::new(),
        val_accuracy: Vec::new(),
        confusion: Vec::new(),
        steps: 0,
        wall_seconds: 0.0,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut last_good = model.state_tensors();
    let mut last_good_epoch: Option<usize> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for &(lo, hi) in &batch_ranges(train.len(), config.batch_size) {
            let refs: Vec<&GestureSample> = order[lo..hi].iter().map(|&i| &train[i]).collect();
            let labels_expected: Vec<usize> = refs.iter().map(|s| s.label).collect();
            let (batch, labels) = batch_tensor(&refs)?;
            debug_assert_eq!(labels, labels_expected);

            let mut tape = Tape::new();
            let x = tape.leaf(batch);
            let logits = model.forward(&mut tape, x, true)?;
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                let checkpoint_note = match (&config.divergence_checkpoint, last_good_epoch) {
                    (Some(path), Some(good)) => {
                        model.load_state(&last_good)?;
                        save_checkpoint(model, path)?;
                        format!("; epoch {good} checkpoint saved to {}", path.display())
                    }
                    _ => String::new(),
                };
                return Err(Error::Divergence(format!(
                    "loss became non-finite at epoch {epoch}{checkpoint_note}"
                )));
            }
            loss_sum += loss_value * refs.len() as f64;
            let out = tape.value(logits);
            for (row, &truth) in labels.iter().enumerate() {
                let scores: Vec<f64> =
                    (0..model.config.num_classes).map(|c| out.at2(row, c)).collect();
                if argmax_row(&scores) == truth {
                    correct += 1;
                }
            }

            let grads = tape.backward(loss)?;
            match config.optimizer {
                OptimizerKind::Adam => adam_step(
                    &mut model.store,
                    &grads,
                    &mut adam,
                    config.learning_rate,
                    0.9,
                    0.999,
                    1e-8,
                )?,
                OptimizerKind::Sgd => sgd_step(&mut model.store, &grads, config.learning_rate)?,
            }
            metrics.steps += 1;
        }

        metrics.train_loss.push(loss_sum / train.len() as f64);
        metrics
            .train_accuracy
            .push(correct as f64 / train.len() as f64);
        let eval = evaluate(model, &test)?;
        metrics.val_loss.push(eval.loss);
        metrics.val_accuracy.push(eval.accuracy);
        metrics.confusion = eval.confusion;
        last_good = model.state_tensors();
        last_good_epoch = Some(epoch);
    }

    metrics.wall_seconds = started.elapsed().as_secs_f64();
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use crate::data::split;
    use crate::model::{build_drsn, ModelConfig};
    use crate::nn::ThresholdMode;
    use crate::tensor::Tensor;

    fn toy_store() -> (ParamStore, crate::params::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(vec![1.0, -2.0, 3.0]));
        (store, id)
    }

    fn grads_for(store: &ParamStore, pid: crate::params::ParamId, g: Vec<f64>) -> Gradients {
        // run a tiny tape so the gradient is attributed to the parameter
        let mut tape = Tape::new();
        let w = tape.param(store, pid);
        let gt = tape.leaf(Tensor::from_vec(g));
        let prod = tape.mul(w, gt).unwrap();
        let loss = tape.reduce_mean(prod, &[0]).unwrap();
        let n = store.value(pid).data().len() as f64;
        let scale = tape.scalar(n);
        let loss = tape.mul(loss, scale).unwrap();
        tape.backward(loss).unwrap()
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let (mut store, pid) = toy_store();
        let before = store.value(pid).data().to_vec();
        let grads = grads_for(&store, pid, vec![0.0, 0.0, 0.0]);
        let mut state = AdamState::new(&store);
        adam_step(&mut store, &grads, &mut state, 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(store.value(pid).data(), &before[..]);
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        let (mut store, pid) = toy_store();
        let mut state = AdamState::new(&store);
        let lr = 0.01;
        let mut prev = store.value(pid).data()[0];
        let mut last_step = 0.0;
        for _ in 0..500 {
            let grads = grads_for(&store, pid, vec![2.0, 2.0, 2.0]);
            adam_step(&mut store, &grads, &mut state, lr, 0.9, 0.999, 1e-8).unwrap();
            let cur = store.value(pid).data()[0];
            last_step = prev - cur;
            prev = cur;
        }
        assert!((last_step - lr).abs() < 1e-4, "step {last_step}");
    }

    #[test]
    fn adam_runs_are_bitwise_identical() {
        let run = || {
            let (mut store, pid) = toy_store();
            let mut state = AdamState::new(&store);
            for k in 0..20 {
                let g = vec![0.1 * k as f64, -0.3, 0.7];
                let grads = grads_for(&store, pid, g);
                adam_step(&mut store, &grads, &mut state, 0.05, 0.9, 0.999, 1e-8).unwrap();
            }
            store.value(pid).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        // sqrt has an infinite derivative at zero, so a zero-valued weight
        // drives its gradient to infinity without any non-finite forward value
        let mut store = ParamStore::new();
        let pid = store.add("w", Tensor::from_vec(vec![1.0, 0.0, 4.0]));
        let mut tape = Tape::new();
        let w = tape.param(&store, pid);
        let r = tape.sqrt(w);
        let loss = tape.reduce_mean(r, &[0]).unwrap();
        let grads = tape.backward(loss).unwrap();
        let mut state = AdamState::new(&store);
        let err = adam_step(&mut store, &grads, &mut state, 0.1, 0.9, 0.999, 1e-8).unwrap_err();
        assert!(err.to_string().contains("'w'"), "{err}");
        let err = sgd_step(&mut store, &grads, 0.1).unwrap_err();
        assert!(err.to_string().contains("'w'"), "{err}");
    }

    #[test]
    fn sgd_is_exactly_descent() {
        let (mut store, pid) = toy_store();
        let grads = grads_for(&store, pid, vec![1.0, 2.0, -1.0]);
        sgd_step(&mut store, &grads, 0.5).unwrap();
        assert_eq!(store.value(pid).data(), &[0.5, -3.0, 3.5]);
    }

    #[test]
    fn batch_ranges_count_is_ceiling_and_no_singletons() {
        for (n, b) in [(10, 4), (64, 32), (65, 32), (33, 32), (9, 4)] {
            let ranges = batch_ranges(n, b);
            assert_eq!(ranges.len(), n.div_ceil(b), "n={n} b={b}");
            assert_eq!(ranges.iter().map(|(lo, hi)| hi - lo).sum::<usize>(), n);
            for &(lo, hi) in &ranges {
                assert!(hi - lo >= 2 || ranges.len() == 1, "n={n} b={b}");
            }
        }
        // batch size 2 with odd n cannot keep the step count and still
        // avoid singletons; the straggler joins the final batch
        let ranges = batch_ranges(7, 2);
        assert_eq!(ranges, vec![(0, 2), (2, 4), (4, 7)]);
    }

    fn tiny_split(seed: u64) -> DatasetSplit {
        let samples = gen_synthetic(4, 10, 48, seed).unwrap();
        split(&samples, 0.8, seed).unwrap()
    }

    fn tiny_model(seed: u64) -> ShrinkNet {
        let config = ModelConfig {
            input_channels: 8,
            input_width: 48,
            stage_channels: vec![4],
            blocks_per_stage: vec![1],
            fc_hidden: None,
            num_classes: 4,
            mode: ThresholdMode::ChannelShared,
            seed,
        };
        build_drsn(config).unwrap()
    }

    #[test]
    fn zero_epochs_rejected() {
        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let mut model = tiny_model(1);
        let err = train_loop(&mut model, &tiny_split(1), &config).unwrap_err();
        assert!(err.to_string().contains("epochs"), "{err}");
    }

    #[test]
    fn one_epoch_takes_ceiling_n_over_batch_steps() {
        let split = tiny_split(2);
        let config = TrainConfig {
            epochs: 1,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let mut model = tiny_model(2);
        let metrics = train_loop(&mut model, &split, &config).unwrap();
        assert_eq!(metrics.steps, split.train.len().div_ceil(16));
        assert_eq!(metrics.train_loss.len(), 1);
        assert_eq!(metrics.val_accuracy.len(), 1);
    }

    #[test]
    fn identical_configs_give_identical_metrics() {
        let run = || {
            let split = tiny_split(3);
            let config = TrainConfig {
                epochs: 2,
                batch_size: 8,
                ..TrainConfig::default()
            };
            let mut model = tiny_model(3);
            let mut m = train_loop(&mut model, &split, &config).unwrap();
            m.wall_seconds = 0.0; // the only timing-dependent field
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn accuracy_equals_confusion_trace_over_total() {
        let split = tiny_split(4);
        let mut model = tiny_model(4);
        let eval = evaluate(&mut model, &split.test).unwrap();
        let total: usize = eval.confusion.iter().flatten().sum();
        let trace: usize = (0..4).map(|c| eval.confusion[c][c]).sum();
        assert_eq!(total, split.test.len());
        assert!((eval.accuracy - trace as f64 / total as f64).abs() < 1e-15);
        assert!((0.0..=1.0).contains(&eval.accuracy));
    }

    #[test]
    fn training_reduces_loss_on_synthetic_data() {
        let split = tiny_split(5);
        let mut model = tiny_model(5);
        let config = TrainConfig {
            epochs: 6,
            batch_size: 8,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        let metrics = train_loop(&mut model, &split, &config).unwrap();
        assert!(
            metrics.train_loss.last().unwrap() < metrics.train_loss.first().unwrap(),
            "{:?}",
            metrics.train_loss
        );
    }
}
