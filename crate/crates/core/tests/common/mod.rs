//! Independent brute-force references shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinyhr::nn::{Activation, LayerSpec, Loss, Model};

fn clamped(x: &[f64], i: isize) -> f64 {
    x[i.clamp(0, x.len() as isize - 1) as usize]
}

pub fn median_oracle(x: &[f64], window: usize) -> Vec<f64> {
    let half = (window / 2) as isize;
    (0..x.len() as isize)
        .map(|i| {
            let mut w: Vec<f64> = (-half..=half).map(|d| clamped(x, i + d)).collect();
            w.sort_by(f64::total_cmp);
            w[w.len() / 2]
        })
        .collect()
}

pub fn fir_oracle(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let c = ((taps.len() - 1) / 2) as isize;
    (0..x.len() as isize)
        .map(|i| {
            let mut acc = 0.0;
            for (k, &h) in taps.iter().enumerate() {
                acc += h * clamped(x, i + c - k as isize);
            }
            acc
        })
        .collect()
}

pub fn moving_average_oracle(x: &[f64], window: usize) -> Vec<f64> {
    let half = (window / 2) as isize;
    (0..x.len() as isize)
        .map(|i| {
            let mut acc = 0.0;
            for d in -half..=half {
                acc += clamped(x, i + d) / window as f64;
            }
            acc
        })
        .collect()
}

pub fn interp_oracle(x: &[f64], factor: usize) -> Vec<f64> {
    (0..=factor * (x.len() - 1))
        .map(|j| {
            let (i, r) = (j / factor, j % factor);
            if r == 0 {
                x[i]
            } else {
                x[i] + (x[i + 1] - x[i]) * (r as f64 / factor as f64)
            }
        })
        .collect()
}

/// Least-squares slope and intercept from the 2×2 normal equations.
pub fn line_fit(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let (mut st, mut stt, mut sy, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for (i, &v) in y.iter().enumerate() {
        let t = i as f64;
        st += t;
        stt += t * t;
        sy += v;
        sty += t * v;
    }
    let det = n * stt - st * st;
    let slope = (n * sty - st * sy) / det;
    let intercept = (stt * sy - st * sty) / det;
    (slope, intercept)
}

/// `out[o][t] = b[o] + Σ_c Σ_k w[o][c][k] · x[c][t + k]`.
pub fn conv1d_oracle(
    x: &[f64],
    weights: &[f64],
    biases: &[f64],
    in_channels: usize,
    kernel: usize,
) -> Vec<f64> {
    let len = x.len() / in_channels;
    let out_len = len - kernel + 1;
    let mut out = Vec::new();
    for (o, &b) in biases.iter().enumerate() {
        for t in 0..out_len {
            let mut acc = b;
            for c in 0..in_channels {
                for k in 0..kernel {
                    acc += weights[(o * in_channels + c) * kernel + k] * x[c * len + t + k];
                }
            }
            out.push(acc);
        }
    }
    out
}

/// Strict interior maxima of a densely sampled clean waveform.
pub fn brute_force_maxima(x: &[f64]) -> Vec<usize> {
    (1..x.len() - 1)
        .filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1])
        .collect()
}

/// Rate from the first and last of a set of maxima sampled at `rate_hz`.
pub fn rate_from_maxima(maxima: &[usize], rate_hz: f64) -> Option<f64> {
    if maxima.len() < 2 {
        return None;
    }
    let span = (maxima[maxima.len() - 1] - maxima[0]) as f64 / rate_hz;
    Some(60.0 * (maxima.len() - 1) as f64 / span)
}

pub fn mae_oracle(p: &[f64], t: &[f64]) -> f64 {
    p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64
}

pub fn rmse_oracle(p: &[f64], t: &[f64]) -> f64 {
    (p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64).sqrt()
}

/// (f1, accuracy) with `true` as the positive class.
pub fn f1_accuracy_oracle(pred: &[bool], truth: &[bool]) -> (f64, f64) {
    let count = |p: bool, t: bool| {
        pred.iter()
            .zip(truth)
            .filter(|&(&a, &b)| a == p && b == t)
            .count() as f64
    };
    let (tp, fp, fn_, tn) = (
        count(true, true),
        count(true, false),
        count(false, true),
        count(false, false),
    );
    let f1 = if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    };
    (f1, (tp + tn) / pred.len() as f64)
}

pub const ACTIVATIONS: [Activation; 3] = [Activation::ReLU, Activation::Sine, Activation::Sigmoid];

/// A small random model whose first layer is dense or a convolution.
/// BCE models end in a sigmoid so the loss is defined.
pub fn small_model(conv: bool, activation: Activation, loss: Loss, rng: &mut ChaCha8Rng) -> Model {
    let out_act = match loss {
        Loss::Bce => Activation::Sigmoid,
        Loss::Mse => activation,
    };
    let outputs = if loss == Loss::Bce {
        1
    } else {
        rng.random_range(1..=3)
    };
    let first = if conv {
        let in_channels = rng.random_range(1..=2);
        let kernel = rng.random_range(2..=3);
        let len = rng.random_range(kernel + 2..=8);
        LayerSpec::conv1d(
            in_channels,
            rng.random_range(1..=3),
            kernel,
            len,
            activation,
        )
    } else {
        LayerSpec::dense(rng.random_range(2..=6), rng.random_range(2..=5), activation)
    };
    let specs = [
        first,
        LayerSpec::dense(first.output_len(), outputs, out_act),
    ];
    let mut model = Model::init(&specs, rng.random()).expect("composable specs");
    for block in model.blocks_mut() {
        for v in block.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    model
}

/// Largest relative error between analytic and central-difference gradients.
pub fn gradient_check(model: &Model, input: &[f64], target: &[f64], loss: Loss, h: f64) -> f64 {
    let (_, grads) = model.backward(input, target, loss).expect("valid shapes");
    let analytic: Vec<f64> = grads.blocks().flatten().copied().collect();
    let eval = |m: &Model| {
        let out = m.forward(input).expect("valid shapes");
        tinyhr::nn::loss_eval(loss, &out, target).expect("valid shapes")
    };
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    let mut idx = 0;
    let sizes: Vec<usize> = probe.blocks_mut().map(|b| b.len()).collect();
    for (b, &size) in sizes.iter().enumerate() {
        for j in 0..size {
            let orig = probe.blocks_mut().nth(b).unwrap()[j];
            probe.blocks_mut().nth(b).unwrap()[j] = orig + h;
            let up = eval(&probe);
            probe.blocks_mut().nth(b).unwrap()[j] = orig - h;
            let down = eval(&probe);
            probe.blocks_mut().nth(b).unwrap()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[idx];
            let denom = (a.abs() + numeric.abs()).max(1e-7);
            worst = worst.max((a - numeric).abs() / denom);
            idx += 1;
        }
    }
    worst
}

/// Random input/target pair for `model`; BCE targets are 0/1.
pub fn random_example(model: &Model, loss: Loss, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let input = (0..model.input_len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let target = (0..model.output_len())
        .map(|_| match loss {
            Loss::Bce => f64::from(rng.random_bool(0.5)),
            Loss::Mse => rng.random_range(-1.0..1.0),
        })
        .collect();
    (input, target)
}

/// Runs 108 gradient checks over dense/conv × activation × loss and
/// returns the worst relative error.
pub fn gradient_suite(seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for rep in 0..9 {
        for conv in [false, true] {
            for act in ACTIVATIONS {
                for loss in [Loss::Mse, Loss::Bce] {
                    let model = small_model(conv, act, loss, &mut rng);
                    let (x, y) = random_example(&model, loss, &mut rng);
                    let err = gradient_check(&model, &x, &y, loss, 1e-5);
                    assert!(err.is_finite(), "rep {rep}: non-finite gradient error");
                    worst = worst.max(err);
                    n += 1;
                }
            }
        }
    }
    (n, worst)
}

pub fn random_signal(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-10.0..10.0)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
