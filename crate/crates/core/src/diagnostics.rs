//! Finite-difference checks of every differentiable primitive and of a
//! small spike-free network, in double precision.

use rand::Rng as _;

use crate::autodiff::{gradcheck, relative_error, BnMode, Tape, Var};
use crate::distill::{objective, DistillConfig};
use crate::error::Result;
use crate::model::{build_network, ForwardOptions, Input, Mode, Network, NetworkSpec, StageSpec};
use crate::rng;
use crate::spiking::{lif_layer, LifConfig, SpikeFn};
use crate::tensor::Tensor;

/// Tolerance for everything except train-mode batch normalization.
pub const TOLERANCE: f64 = 1e-4;
/// Train-mode batch normalization couples every element of a channel.
pub const BATCHNORM_TRAIN_TOLERANCE: f64 = 1e-3;

const EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

fn random(shape: &[usize], g: &mut rng::Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| g.random_range(-1.0..1.0)).collect()).expect("non-empty shape")
}

/// `sum(y * r)` for a fixed random `r`, so every output element carries a
/// distinct weight.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y)?.to_vec();
    let r = tape.constant(random(&shape, &mut rng::seeded(seed)))?;
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

type Graph = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

fn primitive_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Graph, f64)> {
    vec![
        ("add_sub_mul_scale", vec![vec![2, 3], vec![2, 3]], |t, v| {
            let a = t.add(v[0], v[1])?;
            let b = t.sub(a, v[1])?;
            let c = t.mul(b, v[1])?;
            let d = t.scale(c, 1.7)?;
            weighted_sum(t, d, 1)
        }, TOLERANCE),
        ("reshape_select_narrow_stack", vec![vec![3, 2, 2]], |t, v| {
            let s = t.select0(v[0], 1)?;
            let n = t.narrow0(v[0], 1, 2)?;
            let r = t.reshape(n, &[2, 2, 2])?;
            let r0 = t.select0(r, 0)?;
            let st = t.stack(&[s, r0])?;
            weighted_sum(t, st, 2)
        }, TOLERANCE),
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y, 3)
        }, TOLERANCE),
        ("linear", vec![vec![3, 4], vec![2, 4], vec![2]], |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            weighted_sum(t, y, 4)
        }, TOLERANCE),
        ("conv2d", vec![vec![2, 2, 5, 4], vec![3, 2, 3, 3], vec![3]], |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]))?;
            weighted_sum(t, y, 5)
        }, TOLERANCE),
        ("avgpool2d", vec![vec![2, 2, 5, 4]], |t, v| {
            let y = t.avgpool2d(v[0])?;
            weighted_sum(t, y, 6)
        }, TOLERANCE),
        ("global_avgpool", vec![vec![2, 3, 3, 2]], |t, v| {
            let y = t.global_avgpool(v[0])?;
            weighted_sum(t, y, 7)
        }, TOLERANCE),
        ("batchnorm_infer", vec![vec![3, 2, 2, 2], vec![2], vec![2]], |t, v| {
            let mode = BnMode::Infer {
                mean: &[0.1, -0.2],
                var: &[0.5, 1.5],
            };
            let (y, _) = t.batchnorm(v[0], v[1], v[2], mode, 1e-5)?;
            weighted_sum(t, y, 8)
        }, TOLERANCE),
        ("batchnorm_train", vec![vec![3, 2, 2, 2], vec![2], vec![2]], |t, v| {
            let (y, _) = t.batchnorm(v[0], v[1], v[2], BnMode::Train, 1e-5)?;
            weighted_sum(t, y, 9)
        }, BATCHNORM_TRAIN_TOLERANCE),
        ("softmax_cross_entropy", vec![vec![3, 4]], |t, v| t.softmax_cross_entropy(v[0], &[0, 3, 1]), TOLERANCE),
        ("lif_identity", vec![vec![3 * 2, 3]], |t, v| {
            let cfg = LifConfig::new(2.0, 0.5, 1.0)?;
            let s = lif_layer(t, v[0], 3, &cfg, SpikeFn::Identity)?;
            weighted_sum(t, s, 10)
        }, TOLERANCE),
    ]
}

/// Check every primitive; inputs are drawn from `seed`.
pub fn primitive_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut g = rng::stream(seed, rng::streams::INIT);
    primitive_cases()
        .into_iter()
        .map(|(name, shapes, graph, tolerance)| {
            let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random(s, &mut g)).collect();
            Ok(CheckResult {
                name,
                max_relative_error: gradcheck(&inputs, EPS, graph)?,
                tolerance,
            })
        })
        .collect()
}

fn tiny_spec() -> NetworkSpec {
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

fn network_loss(net: &mut Network<f64>, input: &Input<f64>, cfg: &DistillConfig) -> Result<(Tape<f64>, Var)> {
    let mut tape = Tape::new();
    let opts = ForwardOptions {
        record_spikes: false,
        spike_fn: SpikeFn::Identity,
    };
    let run = net.forward_with(&mut tape, input, cfg.teacher_steps, Mode::Train, opts)?;
    let obj = objective(&mut tape, &run, None, &[0, 2], cfg)?;
    Ok((tape, obj.loss))
}

/// Full objective (task, temporal and undetached spatial terms) of a
/// small network with identity spikes and train-mode batch norm, checked
/// on every parameter element.
pub fn network_check(seed: u64) -> Result<CheckResult> {
    let lif = LifConfig::new(2.0, 0.5, 1.0)?;
    let mut net = build_network::<f64>(&tiny_spec(), &lif, seed)?;
    let mut g = rng::stream(seed, rng::streams::DATA);
    let input = Input::Static(random(&[2, 2, 4, 4], &mut g));
    let cfg = DistillConfig {
        student_steps: 2,
        teacher_steps: 3,
        alpha: 1.0,
        beta: 1.0,
        detach_ssd_teacher: false,
        ..Default::default()
    };
    let (mut tape, loss) = network_loss(&mut net, &input, &cfg)?;
    tape.backward(loss, net.params_mut())?;
    let ids: Vec<_> = net.params().iter().map(|(id, _, _)| id).collect();
    let mut worst = 0.0f64;
    for id in ids {
        let grad = net.params().get(id).tensor.grad().map(<[f64]>::to_vec).unwrap_or_default();
        for (j, &analytic) in grad.iter().enumerate() {
            let orig = net.params().get(id).tensor.data()[j];
            let eval = |v: f64| -> Result<f64> {
                let mut probe = net.clone();
                probe.params_mut().get_mut(id).tensor.data_mut()[j] = v;
                let (tape, l) = network_loss(&mut probe, &input, &cfg)?;
                tape.value(l)?.item()
            };
            let numeric = (eval(orig + EPS)? - eval(orig - EPS)?) / (2.0 * EPS);
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    Ok(CheckResult {
        name: "network",
        max_relative_error: worst,
        tolerance: BATCHNORM_TRAIN_TOLERANCE,
    })
}

/// Primitives followed by the network check.
pub fn gradient_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = primitive_checks(seed)?;
    out.push(network_check(seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for r in gradient_suite(0).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }
}
