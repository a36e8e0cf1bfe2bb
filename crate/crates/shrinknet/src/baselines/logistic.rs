use crate::baselines::{argmax, check_dim};
use crate::error::{Error, Result};

/// Multinomial logistic regression trained by full-batch gradient descent
/// on softmax cross-entropy.
#[derive(Debug, Clone)]
pub struct LogisticRegressionModel {
    /// `[num_classes, dim]`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub num_classes: usize,
    pub dim: usize,
}

impl LogisticRegressionModel {
    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, features.len())?;
        let mut out = self.bias.clone();
        for (k, o) in out.iter_mut().enumerate() {
            for (j, &x) in features.iter().enumerate() {
                *o += self.weights[k * self.dim + j] * x;
            }
        }
        Ok(out)
    }

    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(features)?))
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        denom += *v;
    }
    for v in row.iter_mut() {
        *v /= denom;
    }
}

/// Mean cross-entropy loss and gradients for the current parameters.
fn loss_and_grads(
    model: &LogisticRegressionModel,
    features: &[Vec<f64>],
    labels: &[usize],
    l2: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (k, d, n) = (model.num_classes, model.dim, features.len());
    let mut gw = vec![0.0; k * d];
    let mut gb = vec![0.0; k];
    let mut loss = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let mut p = model.logits(x)?;
        softmax_in_place(&mut p);
        loss -= p[y].max(1e-300).ln();
        for c in 0..k {
            let delta = p[c] - if c == y { 1.0 } else { 0.0 };
            gb[c] += delta;
            for (j, &xj) in x.iter().enumerate() {
                gw[c * d + j] += delta * xj;
            }
        }
    }
    let nf = n as f64;
    loss /= nf;
    for g in gw.iter_mut() {
        *g /= nf;
    }
    for g in gb.iter_mut() {
        *g /= nf;
    }
    if l2 > 0.0 {
        for (g, &w) in gw.iter_mut().zip(&model.weights) {
            *g += l2 * w;
            loss += 0.5 * l2 * w * w / nf;
        }
    }
    Ok((loss, gw, gb))
}

/// Train by deterministic full-batch gradient descent from zero weights.
pub fn lr_train(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    lr: f64,
    epochs: usize,
    l2: f64,
) -> Result<LogisticRegressionModel> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::contract("lr_train: empty or mismatched dataset"));
    }
    let distinct = {
        let mut seen = vec![false; num_classes];
        for &l in labels {
            if l >= num_classes {
                return Err(Error::contract(format!("label {l} out of range")));
            }
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::contract("lr_train requires at least 2 classes"));
    }
    let dim = features[0].len();
    let mut model = LogisticRegressionModel {
        weights: vec![0.0; num_classes * dim],
        bias: vec![0.0; num_classes],
        num_classes,
        dim,
    };
    for epoch in 0..epochs {
        let (loss, gw, gb) = loss_and_grads(&model, features, labels, l2)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "logistic regression loss became non-finite at epoch {epoch}; try a smaller learning rate"
            )));
        }
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= lr * g;
        }
        for (b, g) in model.bias.iter_mut().zip(&gb) {
            *b -= lr * g;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..10 {
            let off = i as f64 * 0.05;
            xs.push(vec![2.0 + off, 2.0 - off]);
            ys.push(0);
            xs.push(vec![-2.0 - off, -2.0 + off]);
            ys.push(1);
        }
        (xs, ys)
    }

    #[test]
    fn separable_blobs_reach_perfect_train_accuracy() {
        let (xs, ys) = blobs();
        let model = lr_train(&xs, &ys, 2, 0.5, 200, 0.0).unwrap();
        let correct = xs
            .iter()
            .zip(&ys)
            .filter(|(x, &y)| model.predict(x).unwrap() == y)
            .count();
        assert_eq!(correct, xs.len());
    }

    #[test]
    fn loss_non_increasing_for_small_lr() {
        let (xs, ys) = blobs();
        let mut model = LogisticRegressionModel {
            weights: vec![0.0; 4],
            bias: vec![0.0; 2],
            num_classes: 2,
            dim: 2,
        };
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let (loss, gw, gb) = loss_and_grads(&model, &xs, &ys, 0.0).unwrap();
            assert!(loss <= last + 1e-12);
            last = loss;
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= 0.05 * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= 0.05 * g;
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let xs = vec![vec![0.3, -1.2], vec![1.1, 0.4], vec![-0.7, 0.9]];
        let ys = vec![0, 2, 1];
        let mut model = LogisticRegressionModel {
            weights: vec![0.1, -0.2, 0.3, 0.05, -0.15, 0.25],
            bias: vec![0.01, -0.02, 0.03],
            num_classes: 3,
            dim: 2,
        };
        let (_, gw, gb) = loss_and_grads(&model, &xs, &ys, 0.0).unwrap();
        let eps = 1e-6;
        for i in 0..model.weights.len() {
            let orig = model.weights[i];
            model.weights[i] = orig + eps;
            let (lp, _, _) = loss_and_grads(&model, &xs, &ys, 0.0).unwrap();
            model.weights[i] = orig - eps;
            let (lm, _, _) = loss_and_grads(&model, &xs, &ys, 0.0).unwrap();
            model.weights[i] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            assert!((numeric - gw[i]).abs() < 1e-6, "w[{i}]");
        }
        for i in 0..model.bias.len() {
            let orig = model.bias[i];
            model.bias[i] = orig + eps;
            let (lp, _, _) = loss_and_grads(&model, &xs, &ys, 0.0).unwrap();
            model.bias[i] = orig - eps;
            let (lm, _, _) = loss_and_grads(&model, &xs, &ys, 0.0).unwrap();
            model.bias[i] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            assert!((numeric - gb[i]).abs() < 1e-6, "b[{i}]");
        }
    }

    #[test]
    fn zero_weights_predict_class_zero() {
        let model = LogisticRegressionModel {
            weights: vec![0.0; 16],
            bias: vec![0.0; 8],
            num_classes: 8,
            dim: 2,
        };
        assert_eq!(model.predict(&[1.0, -1.0]).unwrap(), 0);
    }

    #[test]
    fn argmax_invariant_to_constant_logit_shift() {
        let model = LogisticRegressionModel {
            weights: vec![0.3, -0.1, 0.2, 0.4],
            bias: vec![0.0, 0.0],
            num_classes: 2,
            dim: 2,
        };
        let mut shifted = model.clone();
        for b in shifted.bias.iter_mut() {
            *b += 5.0;
        }
        for x in [[0.5, 0.7], [-1.0, 0.2], [0.0, 0.0]] {
            assert_eq!(model.predict(&x).unwrap(), shifted.predict(&x).unwrap());
        }
    }

    #[test]
    fn single_class_data_rejected() {
        let xs = vec![vec![1.0], vec![2.0]];
        let ys = vec![0, 0];
        assert!(lr_train(&xs, &ys, 8, 0.1, 10, 0.0).is_err());
    }
}
