use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Dense;
use crate::params::ParamStore;
use crate::tape::{NodeId, Tape};

/// Threshold granularity: one threshold per sample, or one per channel
/// per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    ChannelShared,
    ChannelWise,
}

impl ThresholdMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ThresholdMode::ChannelShared => "cs",
            ThresholdMode::ChannelWise => "cw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cs" => Ok(ThresholdMode::ChannelShared),
            "cw" => Ok(ThresholdMode::ChannelWise),
            other => Err(Error::config("mode", format!("expected cs|cw, got {other}"))),
        }
    }
}

/// Threshold nodes produced by [`ThresholdSubnet::compute_threshold`]:
/// `tau = alpha * mean_abs` elementwise, with `alpha` in (0, 1) from the
/// sigmoid head and `mean_abs` the pooled absolute feature value.
///
/// Shapes are `[N]` for channel-shared mode and `[N, C]` for channel-wise.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdResult {
    pub tau: NodeId,
    pub alpha: NodeId,
    pub mean_abs: NodeId,
}

/// Small sigmoid-terminated FC stack that scales the pooled absolute
/// feature value into an adaptive soft threshold.
#[derive(Debug, Clone)]
pub struct ThresholdSubnet {
    pub mode: ThresholdMode,
    pub fc1: Dense,
    pub fc2: Dense,
    pub channels: usize,
    pub hidden: usize,
}

impl ThresholdSubnet {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        mode: ThresholdMode,
        channels: usize,
        hidden: usize,
    ) -> Self {
        let out = match mode {
            ThresholdMode::ChannelShared => 1,
            ThresholdMode::ChannelWise => channels,
        };
        let fc1 = Dense::new(store, rng, &format!("{name}.fc1"), channels, hidden);
        let fc2 = Dense::new(store, rng, &format!("{name}.fc2"), hidden, out);
        ThresholdSubnet {
            mode,
            fc1,
            fc2,
            channels,
            hidden,
        }
    }

    /// Compute `tau`, `alpha` and the pooled `mean_abs` for `x: [N, C, W]`.
    pub fn compute_threshold(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        x: NodeId,
    ) -> Result<ThresholdResult> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 3 || shape[1] != self.channels {
            return Err(Error::dimension(
                format!("threshold subnet expects [N, {}, W]", self.channels),
                &shape,
                &[self.channels],
            ));
        }
        let n = shape[0];
        let absx = tape.abs(x);
        // width-GAP of |x| feeds the FC path in both modes
        let pooled = tape.reduce_mean(absx, &[2])?;
        let h1 = self.fc1.forward(store, tape, pooled)?;
        let h1 = tape.relu(h1);
        let logits = self.fc2.forward(store, tape, h1)?;
        let alpha = tape.sigmoid(logits);

        match self.mode {
            ThresholdMode::ChannelShared => {
                let mean_abs = tape.reduce_mean(absx, &[1, 2])?;
                let alpha = tape.reshape(alpha, vec![n])?;
                let tau = tape.mul(alpha, mean_abs)?;
                Ok(ThresholdResult {
                    tau,
                    alpha,
                    mean_abs,
                })
            }
            ThresholdMode::ChannelWise => {
                let tau = tape.mul(alpha, pooled)?;
                Ok(ThresholdResult {
                    tau,
                    alpha,
                    mean_abs: pooled,
                })
            }
        }
    }
}
