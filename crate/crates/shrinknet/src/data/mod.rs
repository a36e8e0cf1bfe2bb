//! Dataset ingestion, segmentation, splitting, normalization, noise
//! injection, and the synthetic generator used for dataset-free runs.

use std::fs;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 8;
pub const SAMPLE_RATE_HZ: f64 = 200.0;
/// One minute at 200 Hz.
pub const RECORDING_TIMESTEPS: usize = 12_000;
pub const NUM_CLASSES: usize = 8;

pub const GESTURE_NAMES: [&str; 8] = [
    "hibernation",
    "flexion",
    "extension",
    "radial_deviation",
    "ulnar_deviation",
    "pronation",
    "supination",
    "fist",
];

/// One full recording: 8 channels over one minute, channel-major.
#[derive(Debug, Clone)]
pub struct Recording {
    /// `CHANNELS * timesteps` values, channel-major.
    pub data: Vec<f64>,
    pub timesteps: usize,
    pub subject_id: usize,
    pub gesture_label: usize,
    /// Set when the file was shorter than a full minute and truncation was
    /// explicitly allowed.
    pub truncated: bool,
}

impl Recording {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.timesteps..(c + 1) * self.timesteps]
    }
}

/// One labeled window of 8-channel signal, channel-major.
#[derive(Debug, Clone)]
pub struct GestureSample {
    pub window: Vec<f64>,
    pub width: usize,
    pub label: usize,
    pub subject_id: usize,
}

impl GestureSample {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.window[c * self.width..(c + 1) * self.width]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, CHANNELS, self.width], self.window.clone()).unwrap()
    }
}

/// Batch several samples into an `[N, 8, W]` tensor plus labels.
pub fn batch_tensor(samples: &[&GestureSample]) -> Result<(Tensor, Vec<usize>)> {
    let width = samples
        .first()
        .ok_or_else(|| Error::contract("empty batch"))?
        .width;
    let mut data = Vec::with_capacity(samples.len() * CHANNELS * width);
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        if s.width != width {
            return Err(Error::contract("mixed window widths in a batch"));
        }
        data.extend_from_slice(&s.window);
        labels.push(s.label);
    }
    Ok((
        Tensor::new(vec![samples.len(), CHANNELS, width], data)?,
        labels,
    ))
}

/// Per-channel z-score statistics, computed on the training portion only.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<GestureSample>,
    pub test: Vec<GestureSample>,
    pub normalization_stats: NormalizationStats,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub snr_db: f64,
    pub seed: u64,
}

/// Parse a whitespace- or comma-separated numeric text file with 8 values
/// per line into a [`Recording`].
pub fn load_recording(
    path: impl AsRef<Path>,
    subject_id: usize,
    gesture_label: usize,
    allow_truncated: bool,
) -> Result<Recording> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); CHANNELS];
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.len() != CHANNELS {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason: format!("expected {CHANNELS} columns, got {}", tokens.len()),
            });
        }
        for (c, tok) in tokens.iter().enumerate() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason: format!("non-numeric token `{tok}`"),
            })?;
            columns[c].push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            reason: "empty file".into(),
        });
    }
    let truncated = rows != RECORDING_TIMESTEPS;
    if truncated && !allow_truncated {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: rows,
            reason: format!("expected {RECORDING_TIMESTEPS} lines, got {rows}"),
        });
    }
    let mut data = Vec::with_capacity(CHANNELS * rows);
    for col in columns {
        data.extend(col);
    }
    Ok(Recording {
        data,
        timesteps: rows,
        subject_id,
        gesture_label,
        truncated,
    })
}

/// Cut a recording into `samples_per_recording` contiguous, non-overlapping
/// windows, all inheriting the recording's label.
pub fn segment(recording: &Recording, samples_per_recording: usize) -> Result<Vec<GestureSample>> {
    if samples_per_recording == 0 {
        return Err(Error::contract("samples_per_recording must be positive"));
    }
    if !recording.timesteps.is_multiple_of(samples_per_recording) && !recording.truncated {
        return Err(Error::contract(format!(
            "recording length {} not divisible into {} windows",
            recording.timesteps, samples_per_recording
        )));
    }
    let width = recording.timesteps / samples_per_recording;
    if width == 0 {
        return Err(Error::contract("recording too short to segment"));
    }
    let mut out = Vec::with_capacity(samples_per_recording);
    for i in 0..samples_per_recording {
        let mut window = Vec::with_capacity(CHANNELS * width);
        for c in 0..CHANNELS {
            let ch = recording.channel(c);
            window.extend_from_slice(&ch[i * width..(i + 1) * width]);
        }
        out.push(GestureSample {
            window,
            width,
            label: recording.gesture_label,
            subject_id: recording.subject_id,
        });
    }
    Ok(out)
}

/// Alternative segmenter: pick the `samples_per_recording` highest-energy
/// non-overlapping windows instead of an even partition.
pub fn segment_by_energy(
    recording: &Recording,
    samples_per_recording: usize,
    width: usize,
) -> Result<Vec<GestureSample>> {
    if width == 0 || width * samples_per_recording > recording.timesteps {
        return Err(Error::contract(
            "energy segmenter: window size times count exceeds recording length",
        ));
    }
    let hop = width / 4;
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    let mut start = 0;
    while start + width <= recording.timesteps {
        let mut energy = 0.0;
        for c in 0..CHANNELS {
            for &v in &recording.channel(c)[start..start + width] {
                energy += v * v;
            }
        }
        candidates.push((start, energy));
        start += hop.max(1);
    }
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = Vec::new();
    for (s, _) in &candidates {
        let s = *s;
        if chosen.iter().all(|&c| s + width <= c || c + width <= s) {
            chosen.push(s);
            if chosen.len() == samples_per_recording {
                break;
            }
        }
    }
    if chosen.len() < samples_per_recording {
        // greedy packing came up short; fall back to the disjoint aligned grid
        let mut aligned: Vec<(usize, f64)> = candidates
            .into_iter()
            .filter(|(s, _)| s % width == 0)
            .collect();
        aligned.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        if aligned.len() < samples_per_recording {
            return Err(Error::contract(
                "energy segmenter: could not place enough non-overlapping windows",
            ));
        }
        chosen = aligned
            .into_iter()
            .take(samples_per_recording)
            .map(|(s, _)| s)
            .collect();
    }
    chosen.sort_unstable();
    let mut out = Vec::new();
    for s in chosen {
        let mut window = Vec::with_capacity(CHANNELS * width);
        for c in 0..CHANNELS {
            window.extend_from_slice(&recording.channel(c)[s..s + width]);
        }
        out.push(GestureSample {
            window,
            width,
            label: recording.gesture_label,
            subject_id: recording.subject_id,
        });
    }
    Ok(out)
}

fn train_stats(train: &[GestureSample]) -> NormalizationStats {
    let mut mean = [0.0; CHANNELS];
    let mut std = [0.0; CHANNELS];
    let mut count = 0usize;
    for s in train {
        count += s.width;
        for c in 0..CHANNELS {
            for &v in s.channel(c) {
                mean[c] += v;
            }
        }
    }
    let count = count.max(1) as f64;
    for m in &mut mean {
        *m /= count;
    }
    for s in train {
        for c in 0..CHANNELS {
            for &v in s.channel(c) {
                std[c] += (v - mean[c]).powi(2);
            }
        }
    }
    for s in &mut std {
        *s = (*s / count).sqrt().max(1e-8);
    }
    NormalizationStats { mean, std }
}

/// Seeded, label-stratified train/test split. Normalization statistics are
/// computed from the training portion only.
pub fn split(samples: &[GestureSample], ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::contract("split ratio must be in (0, 1)"));
    }
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, s) in samples.iter().enumerate() {
        if s.label >= NUM_CLASSES {
            return Err(Error::contract(format!("label {} out of range", s.label)));
        }
        by_label[s.label].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for group in by_label.iter_mut() {
        if group.is_empty() {
            continue;
        }
        group.shuffle(&mut rng);
        let n_train = ((group.len() as f64) * ratio).round() as usize;
        if n_train == 0 {
            return Err(Error::Data(format!(
                "stratification failed: a class would have no training samples (group size {})",
                group.len()
            )));
        }
        for (k, &idx) in group.iter().enumerate() {
            if k < n_train {
                train.push(samples[idx].clone());
            } else {
                test.push(samples[idx].clone());
            }
        }
    }
    let normalization_stats = train_stats(&train);
    Ok(DatasetSplit {
        train,
        test,
        normalization_stats,
        seed,
    })
}

/// Per-channel z-score with the std floored at 1e-8.
pub fn normalize(sample: &GestureSample, stats: &NormalizationStats) -> GestureSample {
    let mut out = sample.clone();
    for c in 0..CHANNELS {
        let (m, s) = (stats.mean[c], stats.std[c]);
        for v in &mut out.window[c * out.width..(c + 1) * out.width] {
            *v = (*v - m) / s;
        }
    }
    out
}

/// Add seeded Gaussian noise at the requested per-channel SNR. The drawn
/// noise is rescaled to the exact target power, so the realized SNR matches
/// the request.
pub fn add_noise(sample: &GestureSample, spec: &NoiseSpec) -> GestureSample {
    let NoiseKind::Gaussian = spec.kind;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let width = sample.width;
    let whole_power = sample.window.iter().map(|v| v * v).sum::<f64>() / sample.window.len() as f64;
    let mut out = sample.clone();
    let ratio = 10f64.powf(spec.snr_db / 10.0);
    for c in 0..CHANNELS {
        let ch = sample.channel(c);
        let mut power = ch.iter().map(|v| v * v).sum::<f64>() / width as f64;
        if power == 0.0 {
            power = whole_power;
        }
        let target = power / ratio;
        let noise: Vec<f64> = (0..width).map(|_| normal.sample(&mut rng)).collect();
        let actual = noise.iter().map(|v| v * v).sum::<f64>() / width as f64;
        let scale = if actual > 0.0 {
            (target / actual).sqrt()
        } else {
            0.0
        };
        for (v, n) in out.window[c * width..(c + 1) * width].iter_mut().zip(&noise) {
            *v += scale * n;
        }
    }
    out
}

/// Synthetic 8-channel gesture-like dataset: each class is a mixture of
/// band-limited sinusoids (20-100 Hz at 200 Hz sampling) with a
/// class-dependent per-channel amplitude pattern, plus mild noise. Classes
/// are separable in per-channel spectral energy.
pub fn gen_synthetic(
    num_classes: usize,
    samples_per_class: usize,
    width: usize,
    seed: u64,
) -> Result<Vec<GestureSample>> {
    if num_classes == 0 || samples_per_class == 0 || width == 0 {
        return Err(Error::contract("gen_synthetic parameters must be positive"));
    }
    if num_classes > NUM_CLASSES {
        return Err(Error::contract(format!(
            "at most {NUM_CLASSES} classes supported"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.25).unwrap();
    let mut out = Vec::with_capacity(num_classes * samples_per_class);
    for class in 0..num_classes {
        // class-dependent carrier in the 20-100 Hz band
        let freq = 25.0 + 9.0 * class as f64;
        for sample_idx in 0..samples_per_class {
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let jitter: f64 = rng.gen_range(0.97..1.03);
            let mut window = Vec::with_capacity(CHANNELS * width);
            for c in 0..CHANNELS {
                // per-channel amplitude pattern rotates with the class
                let amp = 0.35 + 0.9 * (((c + class) % CHANNELS) as f64) / (CHANNELS - 1) as f64;
                let f2 = 20.0 + 10.0 * (((c + 2 * class) % CHANNELS) as f64);
                for t in 0..width {
                    let time = t as f64 / SAMPLE_RATE_HZ;
                    let v = amp
                        * (std::f64::consts::TAU * freq * jitter * time + phase).sin()
                        + 0.3 * (std::f64::consts::TAU * f2 * time + phase * 0.5).sin()
                        + normal.sample(&mut rng);
                    window.push(v);
                }
            }
            out.push(GestureSample {
                window,
                width,
                label: class,
                subject_id: 1000 + sample_idx,
            });
        }
    }
    Ok(out)
}

/// Expected dataset layout on disk: `<root>/<subject>/<label>.txt`.
pub fn dataset_layout_help(root: &Path) -> String {
    format!(
        "expected dataset layout: {}/<subject>/<gesture_label>.txt with {} whitespace- or comma-separated columns per line",
        root.display(),
        CHANNELS
    )
}

/// Discover `<root>/<subject>/<label>.txt` recordings, sorted by subject id
/// then label.
pub fn discover_recordings(root: &Path) -> Result<Vec<(PathBuf, usize, usize)>> {
    let mut found = Vec::new();
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let subject_dir = entry.path();
        if !subject_dir.is_dir() {
            continue;
        }
        let Some(subject_id) = subject_dir
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.parse::<usize>().ok())
        else {
            continue;
        };
        let files = fs::read_dir(&subject_dir).map_err(|e| Error::io(&subject_dir, e))?;
        for file in files {
            let file = file.map_err(|e| Error::io(&subject_dir, e))?;
            let path = file.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(label) = path
                .file_stem()
                .and_then(|n| n.to_str())
                .and_then(|n| n.parse::<usize>().ok())
            else {
                continue;
            };
            if label < NUM_CLASSES {
                found.push((path, subject_id, label));
            }
        }
    }
    if found.is_empty() {
        return Err(Error::Data(format!(
            "no recordings found under {}; {}",
            root.display(),
            dataset_layout_help(root)
        )));
    }
    found.sort_by_key(|a| (a.1, a.2));
    Ok(found)
}

/// Load, segment, and pool samples for a subject subset (first `n` subject
/// ids in sorted order when `subjects` is set).
pub fn load_dataset(
    root: &Path,
    subjects: Option<usize>,
    samples_per_recording: usize,
) -> Result<Vec<GestureSample>> {
    let mut recordings = discover_recordings(root)?;
    if let Some(n) = subjects {
        let mut ids: Vec<usize> = recordings.iter().map(|r| r.1).collect();
        ids.sort_unstable();
        ids.dedup();
        let keep: Vec<usize> = ids.into_iter().take(n).collect();
        recordings.retain(|r| keep.contains(&r.1));
    }
    let mut samples = Vec::new();
    for (path, subject, label) in recordings {
        let rec = load_recording(&path, subject, label, false)?;
        samples.extend(segment(&rec, samples_per_recording)?);
    }
    Ok(samples)
}
