use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Fully connected layer, weights `[out_features, in_features]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weights: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Dense {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_features: usize,
        out_features: usize,
    ) -> Self {
        let normal = Normal::new(0.0, (2.0 / in_features as f64).sqrt()).unwrap();
        let w: Vec<f64> = (0..out_features * in_features)
            .map(|_| normal.sample(rng))
            .collect();
        let weights = store.add(
            format!("{name}.w"),
            Tensor::new(vec![out_features, in_features], w).unwrap(),
        );
        let bias = store.add(format!("{name}.b"), Tensor::zeros(vec![out_features]));
        Dense {
            weights,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, store: &ParamStore, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let w = tape.param(store, self.weights);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, b)
    }
}
