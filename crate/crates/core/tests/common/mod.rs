//! Helpers shared by the integration and acceptance targets.
#![allow(dead_code)]

pub mod props;

use spikedistill::autodiff::Tape;
use spikedistill::data::Batch;
use spikedistill::distill::DistillConfig;
use spikedistill::model::{build_network, Mode, Network, NetworkSpec};
use spikedistill::spiking::LifConfig;
use spikedistill::train::{train_step, MomentumState, TrainConfig};
use spikedistill::Tensor;

pub fn small_spec(channels: usize, size: usize, classes: usize) -> NetworkSpec {
    NetworkSpec::vgg_mini(channels, size, classes).narrowed(16)
}

/// A seeded batch of `n` random `[1, 8, 8]` images with cycling labels.
pub fn random_batch(n: usize, classes: usize, seed: u64) -> Batch<f64> {
    let mut g = spikedistill::rng::seeded(seed);
    let data: Vec<f64> = (0..n * 64).map(|_| rand::Rng::random_range(&mut g, 0.0..1.5)).collect();
    Batch {
        input: spikedistill::model::Input::Static(Tensor::<f64>::from_f64(&[n, 1, 8, 8], &data).unwrap()),
        labels: (0..n).map(|i| i % classes).collect(),
    }
}

/// Parameters after one plain SGD step on the per-timestep cross-entropy,
/// composed directly from tape primitives with a hand-written update.
pub fn vanilla_step(net: &Network<f64>, batch: &Batch<f64>, steps: usize, tcfg: &TrainConfig) -> Vec<Vec<f64>> {
    let mut net = net.clone();
    let mut tape = Tape::new();
    let rec = net.forward(&mut tape, &batch.input, steps, Mode::Train).unwrap();
    let mut loss = None;
    for t in 0..steps {
        let logits = tape.select0(rec.final_logits, t).unwrap();
        let ce = tape.softmax_cross_entropy(logits, &batch.labels).unwrap();
        loss = Some(match loss {
            None => ce,
            Some(acc) => tape.add(acc, ce).unwrap(),
        });
    }
    tape.backward(loss.unwrap(), net.params_mut()).unwrap();
    net.params()
        .iter()
        .map(|(_, _, e)| {
            let wd = if e.decay { tcfg.weight_decay } else { 0.0 };
            let grad = e.tensor.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; e.tensor.len()]);
            // fresh velocity: v = g + wd * p
            e.tensor
                .data()
                .iter()
                .zip(&grad)
                .map(|(&p, &g)| p - tcfg.lr * (g + wd * p))
                .collect()
        })
        .collect()
}

/// Largest absolute parameter difference between one baseline
/// `train_step` and [`vanilla_step`].
pub fn baseline_reduction_gap(seed: u64, steps: usize) -> f64 {
    let net = build_network::<f64>(&small_spec(1, 8, 3), &LifConfig::default(), seed).unwrap();
    let batch = random_batch(6, 3, seed + 100);
    let tcfg = TrainConfig::default();
    let expected = vanilla_step(&net, &batch, steps, &tcfg);
    let mut net = net;
    let mut state = MomentumState::new(net.params());
    let dcfg = DistillConfig::baseline(steps);
    train_step(&mut net, &batch, &dcfg, &tcfg, &mut state, tcfg.lr).unwrap();
    net.params()
        .iter()
        .zip(&expected)
        .flat_map(|((_, _, e), want)| e.tensor.data().iter().zip(want).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

/// Orientation of an image's intensity distribution from its second
/// central moments, in `[0, pi)`.
pub fn moment_orientation(img: &[f32], size: usize) -> f64 {
    let (mut m, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for y in 0..size {
        for x in 0..size {
            let v = img[y * size + x] as f64;
            m += v;
            sx += v * x as f64;
            sy += v * y as f64;
        }
    }
    let (cx, cy) = (sx / m, sy / m);
    let (mut mu20, mut mu02, mut mu11) = (0.0, 0.0, 0.0);
    for y in 0..size {
        for x in 0..size {
            let v = img[y * size + x] as f64;
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            mu20 += v * dx * dx;
            mu02 += v * dy * dy;
            mu11 += v * dx * dy;
        }
    }
    (0.5 * (2.0 * mu11).atan2(mu20 - mu02)).rem_euclid(std::f64::consts::PI)
}

/// Nearest of `classes` evenly spaced orientations, wrapping at pi.
pub fn orientation_class(angle: f64, classes: usize) -> usize {
    let step = std::f64::consts::PI / classes as f64;
    ((angle / step).round() as usize) % classes
}
