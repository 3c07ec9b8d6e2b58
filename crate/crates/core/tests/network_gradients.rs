//! Whole-network gradients against central finite differences, with the
//! spike nonlinearity replaced by the identity so the network is smooth.

use spikedistill::autodiff::{relative_error, Tape};
use spikedistill::distill::{objective, DistillConfig};
use spikedistill::model::{build_network, ForwardOptions, Input, Mode, Network, NetworkSpec, StageSpec};
use spikedistill::spiking::{LifConfig, SpikeFn};
use spikedistill::Tensor;

fn spec() -> NetworkSpec {
    NetworkSpec {
        input_channels: 2,
        input_size: 4,
        num_classes: 3,
        stages: vec![
            StageSpec::new(&[3], false),
            StageSpec::new(&[3], true),
            StageSpec::new(&[4], false),
        ],
        attach_stage: 1,
        weak_channels: Some(2),
    }
}

fn input() -> Input<f64> {
    let data: Vec<f64> = (0..2 * 2 * 4 * 4).map(|i| ((i * 37 % 23) as f64 / 23.0) - 0.3).collect();
    Input::Static(Tensor::from_f64(&[2, 2, 4, 4], &data).unwrap())
}

fn loss(net: &mut Network<f64>, cfg: &DistillConfig) -> (Tape<f64>, spikedistill::autodiff::Var) {
    let mut tape = Tape::new();
    let opts = ForwardOptions {
        record_spikes: false,
        spike_fn: SpikeFn::Identity,
    };
    let run = net.forward_with(&mut tape, &input(), cfg.teacher_steps, Mode::Train, opts).unwrap();
    let obj = objective(&mut tape, &run, None, &[0, 2], cfg).unwrap();
    (tape, obj.loss)
}

fn worst_error(cfg: &DistillConfig) -> f64 {
    let lif = LifConfig::new(2.0, 0.5, 1.0).unwrap();
    let mut net = build_network::<f64>(&spec(), &lif, 11).unwrap();
    let (mut tape, l) = loss(&mut net, cfg);
    tape.backward(l, net.params_mut()).unwrap();
    let names: Vec<String> = net.params().iter().map(|(_, n, _)| n.to_string()).collect();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for name in names {
        let id = net.params().id(&name).unwrap();
        let grad = net.params().get(id).tensor.grad().unwrap().to_vec();
        let len = grad.len();
        // a spread of elements keeps the test fast
        for j in (0..len).step_by((len / 6).max(1)) {
            let orig = net.params().get(id).tensor.data()[j];
            let eval = |v: f64| {
                let mut probe = net.clone();
                probe.params_mut().get_mut(id).tensor.data_mut()[j] = v;
                let (tape, l) = loss(&mut probe, cfg);
                tape.value(l).unwrap().item().unwrap()
            };
            let numeric = (eval(orig + eps) - eval(orig - eps)) / (2.0 * eps);
            let err = relative_error(grad[j], numeric);
            assert!(err < 1e-3, "{name}[{j}]: analytic {} numeric {numeric}", grad[j]);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn full_objective_matches_finite_differences() {
    let cfg = DistillConfig {
        student_steps: 2,
        teacher_steps: 3,
        alpha: 1.0,
        beta: 1.0,
        // a stop-gradient is not the derivative of the loss value
        detach_ssd_teacher: false,
        ..Default::default()
    };
    assert!(worst_error(&cfg) < 1e-3);
}

#[test]
fn weak_task_loss_matches_finite_differences() {
    let cfg = DistillConfig {
        student_steps: 1,
        teacher_steps: 2,
        alpha: 0.5,
        beta: 2.0,
        detach_ssd_teacher: false,
        weak_task_loss: true,
        ..Default::default()
    };
    assert!(worst_error(&cfg) < 1e-3);
}
