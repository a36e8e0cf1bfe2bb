//! Residual shrinkage building units, the full network stack, and the
//! plain-CNN ablation that removes the shrinkage path.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{gap, BatchNorm1d, Conv1d, Dense, GapOver, ThresholdMode, ThresholdSubnet};
use crate::params::ParamStore;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Architecture and initialization hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub input_width: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    /// Hidden width M of each threshold subnet; `None` means M = C per block.
    pub fc_hidden: Option<usize>,
    pub num_classes: usize,
    pub mode: ThresholdMode,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale default: trains in minutes on a CPU.
    pub fn desk_default(mode: ThresholdMode, seed: u64) -> Self {
        ModelConfig {
            input_channels: 8,
            input_width: 1200,
            stage_channels: vec![4, 8, 16],
            blocks_per_stage: vec![2, 2, 2],
            fc_hidden: None,
            num_classes: 8,
            mode,
            seed,
        }
    }

    /// Tiny two-stage configuration for gradient checking.
    pub fn toy(mode: ThresholdMode, seed: u64) -> Self {
        ModelConfig {
            input_channels: 2,
            input_width: 12,
            stage_channels: vec![2, 3],
            blocks_per_stage: vec![1, 1],
            fc_hidden: None,
            num_classes: 4,
            mode,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::config("input_channels", "must be positive"));
        }
        if self.input_width == 0 {
            return Err(Error::config("input_width", "must be positive"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("num_classes", "must be positive"));
        }
        if self.stage_channels.is_empty() {
            return Err(Error::config("stage_channels", "must be non-empty"));
        }
        if self.stage_channels.len() != self.blocks_per_stage.len() {
            return Err(Error::config(
                "blocks_per_stage",
                format!(
                    "length {} does not match stage_channels length {}",
                    self.blocks_per_stage.len(),
                    self.stage_channels.len()
                ),
            ));
        }
        if let Some(&c) = self.stage_channels.iter().find(|&&c| c == 0) {
            return Err(Error::config("stage_channels", format!("extent {c} must be positive")));
        }
        if self.blocks_per_stage.contains(&0) {
            return Err(Error::config("blocks_per_stage", "every stage needs >= 1 block"));
        }
        if self.fc_hidden == Some(0) {
            return Err(Error::config("fc_hidden", "must be positive when set"));
        }
        Ok(())
    }
}

/// Residual shrinkage building unit. With `shrink: None` it degrades to a
/// plain pre-activation residual block.
#[derive(Debug, Clone)]
pub struct Rsbu {
    pub name: String,
    pub bn1: BatchNorm1d,
    pub bn2: BatchNorm1d,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub shrink: Option<ThresholdSubnet>,
    pub downsample: Option<Conv1d>,
}

impl Rsbu {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: String,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        shrinkage: Option<(ThresholdMode, usize)>,
    ) -> Self {
        let bn1 = BatchNorm1d::new(store, &format!("{name}.bn1"), in_channels);
        let conv1 = Conv1d::new(
            store,
            rng,
            &format!("{name}.conv1"),
            in_channels,
            out_channels,
            3,
            stride,
            1,
        );
        let bn2 = BatchNorm1d::new(store, &format!("{name}.bn2"), out_channels);
        let conv2 = Conv1d::new(
            store,
            rng,
            &format!("{name}.conv2"),
            out_channels,
            out_channels,
            3,
            1,
            1,
        );
        let shrink = shrinkage.map(|(mode, hidden)| {
            ThresholdSubnet::new(
                store,
                rng,
                &format!("{name}.shrink"),
                mode,
                out_channels,
                hidden,
            )
        });
        let downsample = (stride != 1 || in_channels != out_channels).then(|| {
            Conv1d::new(
                store,
                rng,
                &format!("{name}.down"),
                in_channels,
                out_channels,
                1,
                stride,
                0,
            )
        });
        Rsbu {
            name,
            bn1,
            bn2,
            conv1,
            conv2,
            shrink,
            downsample,
        }
    }

    /// Pre-activation main path, adaptive soft thresholding, shortcut add.
    /// Returns the output node and the threshold values applied (if any).
    pub fn forward(
        &mut self,
        store: &ParamStore,
        tape: &mut Tape,
        x: NodeId,
        train: bool,
        force_zero_tau: bool,
    ) -> Result<(NodeId, Option<Tensor>)> {
        let h = self.bn1.forward(store, tape, x, train)?;
        let h = tape.relu(h);
        let h = self.conv1.forward(store, tape, h)?;
        let h = self.bn2.forward(store, tape, h, train)?;
        let h = tape.relu(h);
        let h = self.conv2.forward(store, tape, h)?;

        let (h, tau) = match (&self.shrink, force_zero_tau) {
            (Some(subnet), false) => {
                let r = subnet.compute_threshold(store, tape, h)?;
                let tau_values = tape.value(r.tau).clone();
                (tape.soft_threshold(h, r.tau)?, Some(tau_values))
            }
            (Some(subnet), true) => {
                let shape = tape.value(h).shape().to_vec();
                let tau_shape = match subnet.mode {
                    ThresholdMode::ChannelShared => vec![shape[0]],
                    ThresholdMode::ChannelWise => vec![shape[0], shape[1]],
                };
                let zeros = Tensor::zeros(tau_shape);
                let tau = tape.leaf(zeros.clone());
                (tape.soft_threshold(h, tau)?, Some(zeros))
            }
            (None, _) => (h, None),
        };

        let shortcut = match &self.downsample {
            Some(down) => down.forward(store, tape, x)?,
            None => x,
        };
        let out = tape.add(h, shortcut)?;
        Ok((out, tau))
    }
}

/// The full network: input conv, stacked residual (shrinkage) units, final
/// BN + ReLU + width-GAP, dense classification head.
#[derive(Debug, Clone)]
pub struct ShrinkNet {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub input_conv: Conv1d,
    pub blocks: Vec<Rsbu>,
    pub final_bn: BatchNorm1d,
    pub head: Dense,
    /// False for the plain-CNN ablation (no threshold subnetworks).
    pub shrinkage: bool,
    /// Test hook: clamp every threshold to exactly zero.
    pub force_zero_tau: bool,
}

/// Build the deep residual shrinkage network for a configuration.
pub fn build_drsn(config: ModelConfig) -> Result<ShrinkNet> {
    ShrinkNet::build(config, true)
}

/// Identical topology with every shrinkage subnetwork removed.
pub fn build_cnn_baseline(config: ModelConfig) -> Result<ShrinkNet> {
    ShrinkNet::build(config, false)
}

impl ShrinkNet {
    fn build(config: ModelConfig, shrinkage: bool) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();

        let c0 = config.stage_channels[0];
        let input_conv = Conv1d::new(
            &mut store,
            &mut rng,
            "input_conv",
            config.input_channels,
            c0,
            3,
            1,
            1,
        );
        let mut width = input_conv.out_width(config.input_width)?;

        let mut blocks = Vec::new();
        let mut in_channels = c0;
        for (stage, (&channels, &count)) in config
            .stage_channels
            .iter()
            .zip(&config.blocks_per_stage)
            .enumerate()
        {
            for b in 0..count {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                let hidden = config.fc_hidden.unwrap_or(channels);
                let block = Rsbu::new(
                    &mut store,
                    &mut rng,
                    format!("stage{stage}.block{b}"),
                    in_channels,
                    channels,
                    stride,
                    shrinkage.then_some((config.mode, hidden)),
                );
                width = block.conv1.out_width(width)?;
                width = block.conv2.out_width(width)?;
                in_channels = channels;
                blocks.push(block);
            }
        }

        let final_bn = BatchNorm1d::new(&mut store, "final_bn", in_channels);
        let head = Dense::new(&mut store, &mut rng, "head", in_channels, config.num_classes);

        Ok(ShrinkNet {
            config,
            store,
            input_conv,
            blocks,
            final_bn,
            head,
            shrinkage,
            force_zero_tau: false,
        })
    }

    /// Forward to logits; also returns the per-block threshold tensors when
    /// shrinkage is active.
    pub fn forward_traced(
        &mut self,
        tape: &mut Tape,
        x: NodeId,
        train: bool,
    ) -> Result<(NodeId, Vec<Tensor>)> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 3 || shape[1] != self.config.input_channels {
            return Err(Error::dimension(
                format!("model expects [N, {}, W]", self.config.input_channels),
                &shape,
                &[self.config.input_channels],
            ));
        }
        let store = &self.store;
        let mut h = self.input_conv.forward(store, tape, x)?;
        let mut thresholds = Vec::new();
        let force = self.force_zero_tau;
        for block in &mut self.blocks {
            let (out, tau) = block.forward(store, tape, h, train, force)?;
            h = out;
            if let Some(tau) = tau {
                thresholds.push(tau);
            }
        }
        let h = self.final_bn.forward(store, tape, h, train)?;
        let h = tape.relu(h);
        let pooled = gap(tape, h, GapOver::Width)?;
        let logits = self.head.forward(store, tape, pooled)?;
        Ok((logits, thresholds))
    }

    pub fn forward(&mut self, tape: &mut Tape, x: NodeId, train: bool) -> Result<NodeId> {
        self.forward_traced(tape, x, train).map(|(logits, _)| logits)
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.store.numel()
    }

    /// Build the plain-CNN ablation and copy every shared weight and
    /// running statistic from this model into it.
    pub fn to_cnn_with_shared_weights(&self) -> Result<ShrinkNet> {
        let mut cnn = build_cnn_baseline(self.config.clone())?;
        for (_, p) in self.store.iter() {
            if cnn.store.find(&p.name).is_some() {
                cnn.store.set_by_name(&p.name, p.value.clone())?;
            }
        }
        for (src, dst) in self.blocks.iter().zip(cnn.blocks.iter_mut()) {
            dst.bn1.running_mean = src.bn1.running_mean.clone();
            dst.bn1.running_var = src.bn1.running_var.clone();
            dst.bn2.running_mean = src.bn2.running_mean.clone();
            dst.bn2.running_var = src.bn2.running_var.clone();
        }
        cnn.final_bn.running_mean = self.final_bn.running_mean.clone();
        cnn.final_bn.running_var = self.final_bn.running_var.clone();
        Ok(cnn)
    }

    /// All persistent tensors (parameters, then batch-norm running stats)
    /// in a fixed documented order.
    pub fn state_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out: Vec<(String, Vec<usize>, Vec<f64>)> = self
            .store
            .iter()
            .map(|(_, p)| {
                (
                    p.name.clone(),
                    p.value.shape().to_vec(),
                    p.value.data().to_vec(),
                )
            })
            .collect();
        let push_bn = |name: &str, bn: &BatchNorm1d, out: &mut Vec<_>| {
            out.push((
                format!("{name}.running_mean"),
                vec![bn.channels],
                bn.running_mean.clone(),
            ));
            out.push((
                format!("{name}.running_var"),
                vec![bn.channels],
                bn.running_var.clone(),
            ));
        };
        for block in &self.blocks {
            push_bn(&format!("{}.bn1", block.name), &block.bn1, &mut out);
            push_bn(&format!("{}.bn2", block.name), &block.bn2, &mut out);
        }
        push_bn("final_bn", &self.final_bn, &mut out);
        out
    }

    /// Overwrite state from named tensors, validating every shape.
    pub fn load_state(&mut self, entries: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        for (name, shape, data) in entries {
            if let Some(bn_field) = name
                .strip_suffix(".running_mean")
                .map(|p| (p.to_string(), true))
                .or_else(|| name.strip_suffix(".running_var").map(|p| (p.to_string(), false)))
            {
                let (prefix, is_mean) = bn_field;
                let bn = self.find_bn_mut(&prefix).ok_or_else(|| {
                    Error::Checkpoint(format!("unknown batchnorm buffer `{name}`"))
                })?;
                if shape != &[bn.channels] {
                    return Err(Error::Checkpoint(format!(
                        "shape mismatch for tensor `{name}`: expected [{}], got {shape:?}",
                        bn.channels
                    )));
                }
                if is_mean {
                    bn.running_mean = data.clone();
                } else {
                    bn.running_var = data.clone();
                }
            } else {
                self.store
                    .set_by_name(name, Tensor::new(shape.clone(), data.clone())?)?;
            }
        }
        Ok(())
    }

    fn find_bn_mut(&mut self, prefix: &str) -> Option<&mut BatchNorm1d> {
        if prefix == "final_bn" {
            return Some(&mut self.final_bn);
        }
        for block in &mut self.blocks {
            if prefix == format!("{}.bn1", block.name) {
                return Some(&mut block.bn1);
            }
            if prefix == format!("{}.bn2", block.name) {
                return Some(&mut block.bn2);
            }
        }
        None
    }
}
