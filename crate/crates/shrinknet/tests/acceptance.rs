//! Acceptance gate: one test per release criterion, each printing a
//! pass/fail line. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines for passing criteria too.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use shrinknet::data::{gen_synthetic, normalize, split};
use shrinknet::experiments::{emit_report, run_table1, run_table3, ExperimentConfig};
use shrinknet::gradcheck::{grad_check, grad_check_model};
use shrinknet::model::{build_drsn, ModelConfig};
use shrinknet::nn::{BatchNorm1d, ThresholdMode, ThresholdSubnet};
use shrinknet::params::ParamStore;
use shrinknet::tape::Tape;
use shrinknet::tensor::Tensor;
use shrinknet::train::{evaluate, train_loop};

fn pass(n: usize, name: &str, detail: String) {
    println!("criterion {n} ({name}): PASS — {detail}");
}

/// Apply soft thresholding through the tape to a batch of scalar samples
/// with one threshold each, returning the outputs.
fn soft_threshold_batch(xs: &[f64], taus: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![n, 1, 1], xs.to_vec()).unwrap());
    let t = tape.leaf(Tensor::from_vec(taus.to_vec()));
    let y = tape.soft_threshold(x, t).unwrap();
    tape.value(y).data().to_vec()
}

#[test]
fn criterion_01_soft_threshold_properties() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let n = 10_000;
    let x1: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let x2: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let taus: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
    let neg_x1: Vec<f64> = x1.iter().map(|v| -v).collect();
    let zeros = vec![0.0; n];

    let y1 = soft_threshold_batch(&x1, &taus);
    let y2 = soft_threshold_batch(&x2, &taus);
    let y_neg = soft_threshold_batch(&neg_x1, &taus);
    let y_tau0 = soft_threshold_batch(&x1, &zeros);

    for i in 0..n {
        let (x, tau, y) = (x1[i], taus[i], y1[i]);
        assert_eq!(y_neg[i], -y, "oddness at {i}");
        assert_eq!(y.abs(), (x.abs() - tau).max(0.0), "shrinkage bound at {i}");
        assert_eq!(y == 0.0, x.abs() <= tau, "dead zone at {i}");
        assert_eq!(y_tau0[i], x, "tau=0 identity at {i}");
        assert!(
            (x2[i] - x) * (y2[i] - y) >= 0.0,
            "monotonicity at {i}: ({x}, {}) -> ({y}, {})",
            x2[i],
            y2[i]
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    pass(
        1,
        "soft-threshold properties",
        format!("{n} pairs exact in {elapsed:?}"),
    );
}

#[test]
fn criterion_02_derivative_gate_and_finite_differences() {
    // analytic derivative is exactly 0 or 1 at every sampled point
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut zeros = 0usize;
    let mut ones = 0usize;
    for _ in 0..2000 {
        let x = rng.gen_range(-3.0..3.0);
        let tau = rng.gen_range(0.0..2.0);
        let mut tape = Tape::new();
        let leaf = tape.leaf(Tensor::new(vec![1, 1, 1], vec![x]).unwrap());
        let t = tape.leaf(Tensor::from_vec(vec![tau]));
        let y = tape.soft_threshold(leaf, t).unwrap();
        let loss = tape.reduce_mean(y, &[0, 1, 2]).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = grads.node(leaf)[0];
        assert!(g == 0.0 || g == 1.0, "gate {g} at x={x}, tau={tau}");
        if g == 0.0 {
            zeros += 1;
        } else {
            ones += 1;
        }
    }
    assert!(zeros > 0 && ones > 0, "sampling covered only one branch");

    // matches central finite differences away from the kinks
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for case in 0..20 {
        let taus: Vec<f64> = (0..4).map(|_| rng.gen_range(0.1..1.5)).collect();
        let data: Vec<f64> = (0..4 * 8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x = Tensor::new(vec![4, 1, 8], data).unwrap();
        let taus_clone = taus.clone();
        let report = grad_check(
            move |tape, leaf| {
                let t = tape.leaf(Tensor::from_vec(taus_clone.clone()));
                let y = tape.soft_threshold(leaf, t).unwrap();
                let sq = tape.square(y);
                tape.reduce_mean(sq, &[0, 1, 2]).unwrap()
            },
            &x,
            1e-5,
        );
        assert!(
            report.max_relative_error < 1e-4,
            "case {case}: {report:?}"
        );
        worst = worst.max(report.max_relative_error);
        checked += report.checked;
    }
    pass(
        2,
        "derivative gate",
        format!("2000 gates in {{0,1}}, {zeros} zero / {ones} one; FD max error {worst:.2e} over {checked} coords"),
    );
}

#[test]
fn criterion_03_threshold_conditions() {
    let (n, c, w) = (1000usize, 4usize, 16usize);
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let data: Vec<f64> = (0..n * c * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let x = Tensor::new(vec![n, c, w], data).unwrap();
    let max_abs: Vec<f64> = (0..n)
        .map(|i| {
            x.data()[i * c * w..(i + 1) * c * w]
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
        })
        .collect();

    for mode in [ThresholdMode::ChannelShared, ThresholdMode::ChannelWise] {
        let mut store = ParamStore::new();
        let mut init_rng = ChaCha8Rng::seed_from_u64(17);
        let subnet = ThresholdSubnet::new(&mut store, &mut init_rng, "shrink", mode, c, c);
        let mut tape = Tape::new();
        let leaf = tape.leaf(x.clone());
        let result = subnet.compute_threshold(&store, &mut tape, leaf).unwrap();
        let tau = tape.value(result.tau).clone();
        let per_sample = match mode {
            ThresholdMode::ChannelShared => {
                assert_eq!(tau.shape(), &[n], "CS yields one threshold per sample");
                1
            }
            ThresholdMode::ChannelWise => {
                assert_eq!(tau.shape(), &[n, c], "CW yields C thresholds per sample");
                c
            }
        };
        for (i, &cap) in max_abs.iter().enumerate() {
            for j in 0..per_sample {
                let t = tau.data()[i * per_sample + j];
                assert!(
                    t > 0.0 && t < cap,
                    "{}: sample {i} tau {t} vs max|x| {cap}",
                    mode.as_str()
                );
            }
        }
        let mut keys: Vec<Vec<u64>> = (0..n)
            .map(|i| {
                tau.data()[i * per_sample..(i + 1) * per_sample]
                    .iter()
                    .map(|v| v.to_bits())
                    .collect()
            })
            .collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), n, "{}: distinct inputs gave equal tau", mode.as_str());
    }
    pass(
        3,
        "threshold conditions",
        format!("{n} maps per mode: 0 < tau < max|x|, counts and distinctness hold"),
    );
}

#[test]
fn criterion_04_end_to_end_gradient_check() {
    let started = Instant::now();
    let mut detail = String::new();
    for (mode, seed) in [(ThresholdMode::ChannelShared, 3), (ThresholdMode::ChannelWise, 3)] {
        let config = ModelConfig::toy(mode, seed);
        let mut model = build_drsn(config.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
        let n = 4;
        let data: Vec<f64> = (0..n * config.input_channels * config.input_width)
            .map(|_| rng.gen_range(-1.5..1.5))
            .collect();
        let x = Tensor::new(vec![n, config.input_channels, config.input_width], data).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % config.num_classes).collect();
        let report = grad_check_model(&mut model, &x, &labels, 1e-5);
        assert!(report.checked > 0, "{}: everything masked", mode.as_str());
        assert!(
            report.max_relative_error < 1e-4,
            "{}: {report:?}",
            mode.as_str()
        );
        detail.push_str(&format!(
            "{}: {} coords, max {:.2e}; ",
            mode.as_str(),
            report.checked,
            report.max_relative_error
        ));
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    pass(4, "end-to-end gradient check", format!("{detail}in {elapsed:?}"));
}

#[test]
fn criterion_05_shrinkage_ablation_equivalence() {
    let config = ModelConfig::toy(ThresholdMode::ChannelWise, 9);
    let mut drsn = build_drsn(config.clone()).unwrap();
    let mut cnn = drsn.to_cnn_with_shared_weights().unwrap();
    drsn.force_zero_tau = true;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let data: Vec<f64> = (0..6 * config.input_channels * config.input_width)
        .map(|_| rng.gen_range(-2.0..2.0))
        .collect();
    let x = Tensor::new(vec![6, config.input_channels, config.input_width], data).unwrap();

    let logits = |model: &mut shrinknet::model::ShrinkNet| {
        let mut tape = Tape::new();
        let leaf = tape.leaf(x.clone());
        let out = model.forward(&mut tape, leaf, false).unwrap();
        tape.value(out).data().to_vec()
    };
    let a = logits(&mut drsn);
    let b = logits(&mut cnn);
    let mut worst: f64 = 0.0;
    for (va, vb) in a.iter().zip(&b) {
        worst = worst.max((va - vb).abs());
        assert!((va - vb).abs() <= 1e-12, "{va} vs {vb}");
    }
    pass(
        5,
        "shrinkage ablation",
        format!("zero-threshold network matches plain CNN; max |diff| {worst:.1e}"),
    );
}

#[test]
fn criterion_06_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let cases = 100;

    // conv1d vs sliding dot product
    for _ in 0..cases {
        let (n, ci, co) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
        let k = rng.gen_range(1..4);
        let stride = rng.gen_range(1..3);
        let padding = rng.gen_range(0..3);
        let w_in = rng.gen_range(k..k + 8);
        let xd: Vec<f64> = (0..n * ci * w_in).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let wd: Vec<f64> = (0..co * ci * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let bd: Vec<f64> = (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::new(vec![n, ci, w_in], xd.clone()).unwrap();
        let w = Tensor::new(vec![co, ci, k], wd.clone()).unwrap();
        let b = Tensor::from_vec(bd.clone());
        let mut tape = Tape::new();
        let (xi, wi, bi) = (tape.leaf(x), tape.leaf(w), tape.leaf(b));
        let y = tape.conv1d(xi, wi, bi, stride, padding).unwrap();
        let out = tape.value(y).clone();
        let w_out = out.shape()[2];
        for s in 0..n {
            for o in 0..co {
                for p in 0..w_out {
                    let mut acc = bd[o];
                    for c in 0..ci {
                        for t in 0..k {
                            let src = (p * stride + t) as isize - padding as isize;
                            if src >= 0 && (src as usize) < w_in {
                                acc += xd[(s * ci + c) * w_in + src as usize]
                                    * wd[(o * ci + c) * k + t];
                            }
                        }
                    }
                    assert!((out.at3(s, o, p) - acc).abs() <= 1e-12);
                }
            }
        }
    }

    // matmul vs triple loop
    for _ in 0..cases {
        let (m, k, p) = (
            rng.gen_range(1..6),
            rng.gen_range(1..6),
            rng.gen_range(1..6),
        );
        let ad: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let bd: Vec<f64> = (0..k * p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![m, k], ad.clone()).unwrap());
        let b = tape.leaf(Tensor::new(vec![k, p], bd.clone()).unwrap());
        let c = tape.matmul(a, b).unwrap();
        let out = tape.value(c).clone();
        for i in 0..m {
            for j in 0..p {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += ad[i * k + t] * bd[t * p + j];
                }
                assert!((out.at2(i, j) - acc).abs() <= 1e-12);
            }
        }
    }

    // batchnorm eval path vs closed form
    for _ in 0..cases {
        let (n, c, w) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..6));
        let mut store = ParamStore::new();
        let mut bn = BatchNorm1d::new(&mut store, "bn", c);
        let gamma: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..1.5)).collect();
        let beta: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        store.value_mut(bn.gamma).data_mut().copy_from_slice(&gamma);
        store.value_mut(bn.beta).data_mut().copy_from_slice(&beta);
        for i in 0..c {
            bn.running_mean[i] = rng.gen_range(-1.0..1.0);
            bn.running_var[i] = rng.gen_range(0.1..2.0);
        }
        let xd: Vec<f64> = (0..n * c * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = Tensor::new(vec![n, c, w], xd.clone()).unwrap();
        let mut tape = Tape::new();
        let leaf = tape.leaf(x);
        let y = bn.forward(&store, &mut tape, leaf, false).unwrap();
        let out = tape.value(y).clone();
        for s in 0..n {
            for ch in 0..c {
                for p in 0..w {
                    let v = xd[(s * c + ch) * w + p];
                    let expect = (v - bn.running_mean[ch]) / (bn.running_var[ch] + bn.eps).sqrt()
                        * gamma[ch]
                        + beta[ch];
                    assert!((out.at3(s, ch, p) - expect).abs() <= 1e-12);
                }
            }
        }
    }

    // per-channel mean of absolute values vs naive loops
    for _ in 0..cases {
        let (n, c, w) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..8));
        let xd: Vec<f64> = (0..n * c * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = Tensor::new(vec![n, c, w], xd.clone()).unwrap();
        let mut tape = Tape::new();
        let leaf = tape.leaf(x);
        let a = tape.abs(leaf);
        let pooled = tape.reduce_mean(a, &[2]).unwrap();
        let out = tape.value(pooled).clone();
        for s in 0..n {
            for ch in 0..c {
                let mut acc = 0.0;
                for p in 0..w {
                    acc += xd[(s * c + ch) * w + p].abs();
                }
                assert!((out.at2(s, ch) - acc / w as f64).abs() <= 1e-12);
            }
        }
    }
    pass(
        6,
        "oracle equivalence",
        format!("conv1d, matmul, batchnorm-eval, mean-abs: {cases} cases each within 1e-12"),
    );
}

#[test]
fn criterion_07_synthetic_end_to_end() {
    let started = Instant::now();
    let config = ExperimentConfig {
        synthetic: true,
        seed: 1,
        epochs: 50,
        learning_rate: 2e-3,
        ..ExperimentConfig::default()
    };
    let samples = gen_synthetic(8, 50, shrinknet::experiments::SYNTHETIC_WIDTH, 1).unwrap();
    let ds = split(&samples, 0.8, 1).unwrap();
    let mut model = build_drsn(config.model_config(1)).unwrap();
    train_loop(&mut model, &ds, &config.train_config(1, None)).unwrap();
    let norm = |set: &[shrinknet::data::GestureSample]| -> Vec<_> {
        set.iter()
            .map(|s| normalize(s, &ds.normalization_stats))
            .collect()
    };
    let train_eval = evaluate(&mut model, &norm(&ds.train)).unwrap();
    let test_eval = evaluate(&mut model, &norm(&ds.test)).unwrap();
    let elapsed = started.elapsed();
    assert!(
        train_eval.accuracy >= 0.95,
        "train accuracy {:.3}",
        train_eval.accuracy
    );
    assert!(
        test_eval.accuracy >= 0.85,
        "test accuracy {:.3}",
        test_eval.accuracy
    );
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}");
    pass(
        7,
        "synthetic end-to-end",
        format!(
            "train {:.1}%, test {:.1}% in {elapsed:?}",
            train_eval.accuracy * 100.0,
            test_eval.accuracy * 100.0
        ),
    );
}

#[test]
fn criterion_08_dataset_replication() {
    let Some(root) = std::env::var_os("SHRINKNET_DATA_ROOT").map(std::path::PathBuf::from) else {
        println!(
            "criterion 8 (dataset replication): SKIP — set SHRINKNET_DATA_ROOT to the \
             recording directory (<root>/<subject>/<label>.txt) to run it"
        );
        return;
    };
    if !root.is_dir() {
        println!(
            "criterion 8 (dataset replication): SKIP — {} is not a directory",
            root.display()
        );
        return;
    }
    let started = Instant::now();
    let config = ExperimentConfig {
        data_root: Some(root),
        subjects: Some(9),
        seed: 1,
        ..ExperimentConfig::default()
    };
    let report = run_table1(&config).unwrap();
    let acc = |name: &str| {
        report
            .runs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m.final_val_accuracy())
            .unwrap()
    };
    let (lr, rf, drsn) = (acc("logistic-regression"), acc("random-forest"), acc("drsn"));
    let elapsed = started.elapsed();
    assert!(drsn >= 0.65, "drsn accuracy {drsn:.3}");
    assert!(rf >= 0.70, "random forest accuracy {rf:.3}");
    assert!(lr < 0.30, "logistic regression accuracy {lr:.3}");
    assert!(drsn > lr, "ordering drsn > lr violated");
    assert!((drsn - rf).abs() <= 0.20, "drsn {drsn:.3} vs rf {rf:.3}");
    assert!(elapsed.as_secs_f64() < 600.0, "took {elapsed:?}");
    pass(
        8,
        "dataset replication",
        format!(
            "lr {:.1}%, rf {:.1}%, drsn {:.1}% in {elapsed:?}",
            lr * 100.0,
            rf * 100.0,
            drsn * 100.0
        ),
    );
}

#[test]
fn criterion_09_noise_replication() {
    let config = ExperimentConfig {
        synthetic: true,
        seed: 1,
        epochs: 18,
        spread_seeds: 3,
        snr_db: 5.0,
        ..ExperimentConfig::default()
    };
    let report = run_table3(&config).unwrap();
    let acc = |name: &str| {
        report
            .runs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m.final_val_accuracy())
            .unwrap()
    };
    let mut gaps = Vec::new();
    for seed in 1..=3u64 {
        let clean = acc(&format!("drsn-no-noise-seed{seed}"));
        let noisy = acc(&format!("drsn-with-noise-seed{seed}"));
        assert!(
            clean > noisy,
            "seed {seed}: clean {clean:.3} vs noisy {noisy:.3}"
        );
        gaps.push(clean - noisy);
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!(
        mean_gap >= 0.05,
        "mean matched-seed gap {mean_gap:.3} (gaps {gaps:?})"
    );
    pass(
        9,
        "noise replication",
        format!(
            "clean beats 5 dB noise on every seed; mean gap {:.1} points",
            mean_gap * 100.0
        ),
    );
}

#[test]
fn criterion_10_determinism() {
    let config = ExperimentConfig {
        synthetic: true,
        seed: 1,
        epochs: 3,
        ..ExperimentConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    emit_report(&run_table1(&config).unwrap(), &a).unwrap();
    emit_report(&run_table1(&config).unwrap(), &b).unwrap();
    for file in [
        "table.csv",
        "metrics.csv",
        "curve_accuracy.svg",
        "curve_loss.svg",
    ] {
        let fa = std::fs::read(a.join(file)).unwrap();
        let fb = std::fs::read(b.join(file)).unwrap();
        assert_eq!(fa, fb, "{file} differs between identical runs");
    }
    pass(
        10,
        "determinism",
        "two identically-seeded comparison runs emit byte-identical tables, metrics, and charts"
            .to_string(),
    );
}
