use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// 1-D convolution (cross-correlation, no kernel flip) with zero padding.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weights: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    /// He fan-in initialization for the kernel, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1);
        let fan_in = (in_channels * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
        let w: Vec<f64> = (0..out_channels * in_channels * kernel)
            .map(|_| normal.sample(rng))
            .collect();
        let weights = store.add(
            format!("{name}.w"),
            Tensor::new(vec![out_channels, in_channels, kernel], w).unwrap(),
        );
        let bias = store.add(format!("{name}.b"), Tensor::zeros(vec![out_channels]));
        Conv1d {
            weights,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn out_width(&self, in_width: usize) -> Result<usize> {
        let padded = in_width + 2 * self.padding;
        if padded < self.kernel {
            return Err(Error::dimension(
                format!(
                    "input width {in_width} too small for kernel {} (padding {})",
                    self.kernel, self.padding
                ),
                &[in_width],
                &[self.kernel],
            ));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    pub fn forward(&self, store: &ParamStore, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let w = tape.param(store, self.weights);
        let b = tape.param(store, self.bias);
        tape.conv1d(x, w, b, self.stride, self.padding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixed_conv(w: Vec<f64>, b: Vec<f64>, shape: Vec<usize>, stride: usize) -> (ParamStore, Conv1d) {
        let mut store = ParamStore::new();
        let (out_c, in_c, k) = (shape[0], shape[1], shape[2]);
        let weights = store.add("c.w", Tensor::new(shape, w).unwrap());
        let bias = store.add("c.b", Tensor::from_vec(b));
        (
            store,
            Conv1d {
                weights,
                bias,
                in_channels: in_c,
                out_channels: out_c,
                kernel: k,
                stride,
                padding: 0,
            },
        )
    }

    #[test]
    fn identity_kernel_passes_signal_through() {
        let (store, conv) = fixed_conv(vec![1.0], vec![0.0], vec![1, 1, 1], 1);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = conv.forward(&store, &mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn strided_sum_kernel() {
        let (store, conv) = fixed_conv(vec![1.0, 1.0], vec![0.0], vec![1, 1, 2], 2);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 1, 4], vec![1.0, 1.0, 1.0, 1.0]).unwrap());
        let y = conv.forward(&store, &mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 2.0]);
    }

    #[test]
    fn width_too_small_is_an_error() {
        let (store, conv) = fixed_conv(vec![1.0, 1.0, 1.0], vec![0.0], vec![1, 1, 3], 1);
        assert!(conv.out_width(2).is_err());
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 1, 2]));
        assert!(conv.forward(&store, &mut tape, x).is_err());
    }

    /// Direct sliding-dot-product oracle, independent of the tape kernel.
    fn conv_oracle(
        x: &Tensor,
        w: &Tensor,
        b: &[f64],
        stride: usize,
        padding: usize,
    ) -> Vec<f64> {
        let (n, c_in, width) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (c_out, k) = (w.shape()[0], w.shape()[2]);
        let w_out = (width + 2 * padding - k) / stride + 1;
        let mut out = vec![0.0; n * c_out * w_out];
        for s in 0..n {
            for co in 0..c_out {
                for ow in 0..w_out {
                    let mut acc = b[co];
                    for ci in 0..c_in {
                        for t in 0..k {
                            let pos = (ow * stride + t) as isize - padding as isize;
                            if pos >= 0 && (pos as usize) < width {
                                acc += x.at3(s, ci, pos as usize) * w.at3(co, ci, t);
                            }
                        }
                    }
                    out[(s * c_out + co) * w_out + ow] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn random_cases_match_sliding_dot_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..30 {
            let in_c = rng.gen_range(1..4);
            let out_c = rng.gen_range(1..4);
            let k = rng.gen_range(1..5);
            let stride = rng.gen_range(1..3);
            let padding = rng.gen_range(0..3);
            let width = rng.gen_range(k + 2..20);
            let n = rng.gen_range(1..3);
            let mut store = ParamStore::new();
            let conv = Conv1d::new(&mut store, &mut rng, "c", in_c, out_c, k, stride, padding);
            let xdata: Vec<f64> = (0..n * in_c * width).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let x = Tensor::new(vec![n, in_c, width], xdata).unwrap();
            let mut tape = Tape::new();
            let xid = tape.leaf(x.clone());
            let y = conv.forward(&store, &mut tape, xid).unwrap();
            let expect = conv_oracle(
                &x,
                store.value(conv.weights),
                store.value(conv.bias).data(),
                stride,
                padding,
            );
            assert_eq!(tape.value(y).numel(), expect.len(), "case {case}");
            for (got, want) in tape.value(y).data().iter().zip(&expect) {
                assert!((got - want).abs() < 1e-12, "case {case}");
            }
        }
    }
}
