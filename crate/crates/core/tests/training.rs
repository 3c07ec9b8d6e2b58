//! End-to-end behaviour of data, training, checkpoints and analysis.

mod common;

use common::{baseline_reduction_gap, moment_orientation, orientation_class, random_batch, small_spec};
use spikedistill::analysis::risk::{variance_experiment, ToyDistribution};
use spikedistill::analysis::{early_exit_eval, sfr_map};
use spikedistill::autodiff::Tape;
use spikedistill::data::synth::{bars, BarsConfig};
use spikedistill::data::Dataset;
use spikedistill::distill::DistillConfig;
use spikedistill::model::{build_network, Input, Mode, Network};
use spikedistill::spiking::LifConfig;
use spikedistill::train::{evaluate, fit, train_step, MomentumState, TrainConfig};
use spikedistill::Tensor;

#[test]
fn noise_free_bars_match_orientation_oracle() {
    for classes in [4, 8] {
        let cfg = BarsConfig { classes, size: 16 };
        let ds = bars(3 * classes, 0.0, 9, &cfg).unwrap();
        for i in 0..ds.len() {
            let angle = moment_orientation(ds.image(i), 16);
            assert_eq!(orientation_class(angle, classes), ds.label(i), "sample {i}, angle {angle}");
        }
    }
}

#[test]
fn baseline_step_equals_vanilla_cross_entropy_step() {
    for (seed, steps) in [(1, 1), (2, 2), (3, 4)] {
        let gap = baseline_reduction_gap(seed, steps);
        assert!(gap <= 1e-9, "T={steps}: {gap}");
    }
}

#[test]
fn overfits_a_single_batch() {
    let mut net = build_network::<f64>(&small_spec(1, 8, 3), &LifConfig::default(), 4).unwrap();
    let batch = random_batch(8, 3, 40);
    let tcfg = TrainConfig {
        lr: 0.01,
        ..Default::default()
    };
    let dcfg = DistillConfig::default();
    let mut state = MomentumState::new(net.params());
    let losses: Vec<f64> = (0..50)
        .map(|_| train_step(&mut net, &batch, &dcfg, &tcfg, &mut state, tcfg.lr).unwrap().losses.total)
        .collect();
    let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = losses[40..].iter().sum::<f64>() / 10.0;
    assert!(losses[49] < losses[0], "{losses:?}");
    assert!(tail < head, "{losses:?}");
}

fn trained_bars() -> (Network<f32>, spikedistill::data::ImageDataset) {
    let cfg = BarsConfig { classes: 4, size: 8 };
    let train = bars(64, 0.2, 1, &cfg).unwrap();
    let test = bars(24, 0.2, 2, &cfg).unwrap();
    let mut net = build_network::<f32>(&small_spec(1, 8, 4), &LifConfig::default(), 3).unwrap();
    let tcfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        ..Default::default()
    };
    fit(&mut net, &train, &test, &DistillConfig::default(), &tcfg, |_| Ok(())).unwrap();
    (net, test)
}

#[test]
fn checkpoint_round_trip_preserves_accuracy_bitwise() {
    let (mut net, test) = trained_bars();
    let before = evaluate(&mut net, &test, 2, 16).unwrap();
    let dir = tempfile::tempdir().unwrap();
    net.save(dir.path()).unwrap();
    let mut loaded = Network::<f32>::load(dir.path()).unwrap();
    let after = evaluate(&mut loaded, &test, 2, 16).unwrap();
    assert_eq!(before.accuracy.to_bits(), after.accuracy.to_bits());
    assert_eq!(before.task_loss.to_bits(), after.task_loss.to_bits());
    let a: Vec<_> = net.named_tensors().iter().map(|(n, t)| (n.to_string(), t.data().to_vec())).collect();
    let b: Vec<_> = loaded.named_tensors().iter().map(|(n, t)| (n.to_string(), t.data().to_vec())).collect();
    assert_eq!(a, b);
}

#[test]
fn evaluation_runs_exactly_student_steps() {
    let (mut net, test) = trained_bars();
    let start = net.timesteps_run();
    let batches = test.len().div_ceil(16) as u64;
    evaluate(&mut net, &test, 3, 16).unwrap();
    assert_eq!(net.timesteps_run() - start, 3 * batches);
}

#[test]
fn stripped_network_agrees_with_full() {
    let (mut net, test) = trained_bars();
    let full = evaluate(&mut net, &test, 2, 16).unwrap();
    assert!(full.weak_accuracy.is_some());
    let mut stripped = net.clone().strip_weak_classifier();
    let bare = evaluate(&mut stripped, &test, 2, 16).unwrap();
    assert_eq!(full.accuracy.to_bits(), bare.accuracy.to_bits());
    assert_eq!(bare.weak_accuracy, None);

    let batch = test.batch::<f32>(&[0, 1, 2, 3], None).unwrap();
    let logits = |n: &mut Network<f32>| {
        let mut tape = Tape::new();
        let r = n.forward(&mut tape, &batch.input, 2, Mode::Eval).unwrap();
        tape.value(r.final_logits).unwrap().data().to_vec()
    };
    assert_eq!(logits(&mut net), logits(&mut stripped));

    let dir_full = tempfile::tempdir().unwrap();
    let dir_bare = tempfile::tempdir().unwrap();
    net.save(dir_full.path()).unwrap();
    stripped.save(dir_bare.path()).unwrap();
    let size = |d: &std::path::Path| std::fs::metadata(d.join("tensors.bin")).unwrap().len();
    let weak_bytes: usize = net
        .named_tensors()
        .iter()
        .filter(|(n, _)| n.starts_with("weak"))
        .map(|(_, t)| t.len() * 4)
        .sum();
    assert_eq!(size(dir_full.path()) - size(dir_bare.path()), weak_bytes as u64);
}

#[test]
fn sfr_map_ignores_batch_order() {
    let (mut net, test) = trained_bars();
    let order = [0usize, 1, 2, 3, 4, 5];
    let reversed: Vec<usize> = order.iter().rev().copied().collect();
    let a = sfr_map(&mut net, &test.batch::<f32>(&order, None).unwrap().input, 2, 1).unwrap();
    let b = sfr_map(&mut net, &test.batch::<f32>(&reversed, None).unwrap().input, 2, 1).unwrap();
    assert_eq!(a, b);
    assert!(a.map.data().iter().all(|&r| (0.0..=1.0).contains(&r)));
    assert_eq!(a.map.shape(), &[8, 8]);
    let zero = Input::Static(Tensor::<f32>::zeros(&[1, 1, 8, 8]));
    assert!(sfr_map(&mut net, &zero, 2, 9).is_err());
}

#[test]
fn early_exit_thresholds_bracket_the_heads() {
    let (mut net, test) = trained_bars();
    let all = early_exit_eval(&mut net, &test, 2, Some(0.0), 8).unwrap();
    assert_eq!(all.exit_fraction, 1.0);
    assert_eq!(all.blended_accuracy, Some(all.weak_accuracy));
    let none = early_exit_eval(&mut net, &test, 2, Some(1.5), 8).unwrap();
    assert_eq!(none.exit_fraction, 0.0);
    assert_eq!(none.blended_accuracy, Some(none.full_accuracy));
    let mut last = 1.0;
    for th in [0.3, 0.5, 0.7, 0.9, 0.99] {
        let r = early_exit_eval(&mut net, &test, 2, Some(th), 8).unwrap();
        assert!(r.exit_fraction <= last);
        last = r.exit_fraction;
    }
    let stripped = &mut net.clone().strip_weak_classifier();
    assert!(early_exit_eval(stripped, &test, 2, Some(0.9), 8).is_err());
}

#[test]
fn risk_estimators_agree_on_the_population_risk() {
    let dist = ToyDistribution::toy2();
    let losses = ToyDistribution::toy2_losses();
    let r = variance_experiment(&dist, &losses, 50, 4000, 3).unwrap();
    assert_eq!(r.population_risk, 0.75);
    assert!((r.empirical_mean - 0.75).abs() < 3.0 * r.empirical_stderr());
    assert!((r.distilled_mean - 0.75).abs() < 3.0 * r.distilled_stderr());
    assert!(r.variance_ratio < 0.9);

    // deterministic labels: the two estimators coincide
    let det = ToyDistribution::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.5, 0.5]).unwrap();
    let r = variance_experiment(&det, &losses, 20, 500, 3).unwrap();
    assert!(r.degenerate);
    assert!((r.empirical_var - r.distilled_var).abs() < 1e-12);
}
