use crate::data::{GestureSample, CHANNELS};

/// Input representation for the classical baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// Decimate the width by 8, then flatten all channels.
    FlattenDecim,
    /// Per channel: MAV, RMS, waveform length, zero crossings (32 dims).
    TimeDomain,
}

impl FeatureMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "flatten_decim" => Some(FeatureMode::FlattenDecim),
            "timedomain" => Some(FeatureMode::TimeDomain),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub label: usize,
}

const DECIMATION: usize = 8;

/// Extract a fixed-length feature vector from a sample.
pub fn extract_features(sample: &GestureSample, mode: FeatureMode) -> FeatureVector {
    let values = match mode {
        FeatureMode::FlattenDecim => {
            let mut out = Vec::with_capacity(CHANNELS * sample.width.div_ceil(DECIMATION));
            for c in 0..CHANNELS {
                let ch = sample.channel(c);
                out.extend(ch.iter().step_by(DECIMATION));
            }
            out
        }
        FeatureMode::TimeDomain => {
            let mut out = Vec::with_capacity(CHANNELS * 4);
            for c in 0..CHANNELS {
                let ch = sample.channel(c);
                let n = ch.len() as f64;
                let mav = ch.iter().map(|v| v.abs()).sum::<f64>() / n;
                let rms = (ch.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
                let wl: f64 = ch.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
                let zc = ch
                    .windows(2)
                    .filter(|w| (w[0] > 0.0 && w[1] < 0.0) || (w[0] < 0.0 && w[1] > 0.0))
                    .count() as f64;
                out.extend([mav, rms, wl, zc]);
            }
            out
        }
    };
    FeatureVector {
        values,
        label: sample.label,
    }
}
