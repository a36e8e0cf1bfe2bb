//! Finite-difference verification of reverse-mode gradients.

use crate::model::ShrinkNet;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error over all unmasked coordinates.
    pub max_relative_error: f64,
    /// Coordinates excluded because an evaluation came too close to a kink.
    pub masked: Vec<usize>,
    pub checked: usize,
}

/// Relative disagreement with a 1e-6 denominator floor: gradients that are
/// both below roundoff scale count as agreeing. (Some directions have an
/// exactly-zero gradient — e.g. the bias of a convolution feeding a batch
/// norm — where the difference quotient is pure floating-point noise.)
fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if analytic.is_nan() || numeric.is_nan() {
        return f64::INFINITY;
    }
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compare the analytic gradient of a scalar-valued function against central
/// finite differences, coordinate by coordinate.
///
/// `f` builds the scalar loss on the given tape from the input leaf node.
/// Coordinates whose nominal or perturbed evaluation passes within
/// `10 * eps` of a `relu`/`abs`/`soft_threshold` kink are excluded from the
/// comparison. A NaN in either gradient reports as `+inf`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> GradCheckReport
where
    F: Fn(&mut Tape, NodeId) -> NodeId,
{
    let eval = |point: &Tensor| -> (f64, f64) {
        let mut tape = Tape::new();
        let leaf = tape.leaf(point.clone());
        let loss = f(&mut tape, leaf);
        (tape.value(loss).item(), tape.kink_margin())
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let loss = f(&mut tape, leaf);
    let nominal_margin = tape.kink_margin();
    let analytic: Vec<f64> = tape
        .backward(loss)
        .map(|g| g.node(leaf).to_vec())
        .unwrap_or_else(|_| vec![f64::NAN; x.numel()]);

    let mut max_err: f64 = 0.0;
    let mut masked = Vec::new();
    let mut checked = 0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let (fp, mp) = eval(&plus);
        let (fm, mm) = eval(&minus);
        if nominal_margin.min(mp).min(mm) <= 10.0 * eps {
            masked.push(i);
            continue;
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        let err = relative_error(a, numeric);
        max_err = max_err.max(err);
        checked += 1;
    }

    GradCheckReport {
        max_relative_error: max_err,
        masked,
        checked,
    }
}

/// Finite-difference check of the classification loss gradient with respect
/// to every model parameter (train-mode forward, so batch statistics are
/// differentiated through). Masking follows the same kink-margin rule as
/// [`grad_check`]; masked entries are global coordinate indices in parameter
/// iteration order.
pub fn grad_check_model(
    model: &mut ShrinkNet,
    x: &Tensor,
    labels: &[usize],
    eps: f64,
) -> GradCheckReport {
    fn run(model: &mut ShrinkNet, x: &Tensor, labels: &[usize]) -> (f64, f64, Tape, NodeId) {
        let mut tape = Tape::new();
        let leaf = tape.leaf(x.clone());
        let out = model.forward(&mut tape, leaf, true).expect("forward");
        let loss = tape.softmax_cross_entropy(out, labels).expect("loss");
        (tape.value(loss).item(), tape.kink_margin(), tape, loss)
    }

    let (_, nominal_margin, tape, loss) = run(model, x, labels);
    let grads = tape.backward(loss).expect("backward");
    let pids: Vec<_> = model.store.iter().map(|(pid, _)| pid).collect();

    let mut max_err: f64 = 0.0;
    let mut masked = Vec::new();
    let mut checked = 0;
    let mut offset = 0;
    for pid in pids {
        let analytic: Vec<f64> = grads
            .param(pid)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; model.store.value(pid).numel()]);
        for i in 0..analytic.len() {
            let orig = model.store.value(pid).data()[i];
            model.store.value_mut(pid).data_mut()[i] = orig + eps;
            let (fp, mp, _, _) = run(model, x, labels);
            model.store.value_mut(pid).data_mut()[i] = orig - eps;
            let (fm, mm, _, _) = run(model, x, labels);
            model.store.value_mut(pid).data_mut()[i] = orig;
            if nominal_margin.min(mp).min(mm) <= 10.0 * eps {
                masked.push(offset + i);
                continue;
            }
            let numeric = (fp - fm) / (2.0 * eps);
            let err = relative_error(analytic[i], numeric);
            max_err = max_err.max(err);
            checked += 1;
        }
        offset += analytic.len();
    }
    GradCheckReport {
        max_relative_error: max_err,
        masked,
        checked,
    }
}
