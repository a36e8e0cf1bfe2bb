use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Batch normalization over the channel axis of `[N, C, W]` maps.
///
/// Train mode normalizes with batch statistics and folds them into the
/// running estimates; eval mode uses the running estimates only.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
    pub channels: usize,
}

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(vec![channels], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(vec![channels]));
        BatchNorm1d {
            gamma,
            beta,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
            momentum: 0.1,
            channels,
        }
    }

    pub fn forward(
        &mut self,
        store: &ParamStore,
        tape: &mut Tape,
        x: NodeId,
        train: bool,
    ) -> Result<NodeId> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 3 || shape[1] != self.channels {
            return Err(Error::dimension(
                format!("batchnorm expects [N, {}, W]", self.channels),
                &shape,
                &[self.channels],
            ));
        }
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);

        let norm = if train {
            if shape[0] < 2 {
                return Err(Error::contract(
                    "batchnorm train mode requires batch size >= 2",
                ));
            }
            let mean = tape.reduce_mean(x, &[0, 2])?;
            let centered = tape.sub(x, mean)?;
            let sq = tape.square(centered);
            let var = tape.reduce_mean(sq, &[0, 2])?;
            let eps = tape.scalar(self.eps);
            let var_eps = tape.add(var, eps)?;
            let std = tape.sqrt(var_eps);

            let m = self.momentum;
            let batch_mean = tape.value(mean).data().to_vec();
            let batch_var = tape.value(var).data().to_vec();
            for c in 0..self.channels {
                self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * batch_mean[c];
                self.running_var[c] = (1.0 - m) * self.running_var[c] + m * batch_var[c];
            }

            tape.div(centered, std)?
        } else {
            let rm = tape.leaf(Tensor::from_vec(self.running_mean.clone()));
            let denom: Vec<f64> = self
                .running_var
                .iter()
                .map(|&v| (v + self.eps).sqrt())
                .collect();
            let std = tape.leaf(Tensor::from_vec(denom));
            let centered = tape.sub(x, rm)?;
            tape.div(centered, std)?
        };

        let scaled = tape.mul(norm, gamma)?;
        tape.add(scaled, beta)
    }
}
