//! Property checks shared by the `properties` and `acceptance` targets.
//! Each runs a fixed number of generated cases with a deterministic runner.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use spikedistill::autodiff::Tape;
use spikedistill::checkpoint;
use spikedistill::data::events::{integrate_events, Event, EventStream};
use spikedistill::data::synth::{bars, BarsConfig};
use spikedistill::distill::DistillConfig;
use spikedistill::model::{build_network, Input, Mode};
use spikedistill::spiking::{lif_sequence, lif_step, LifConfig, LifState};
use spikedistill::train::{fit, TrainConfig};
use spikedistill::Tensor;

use super::small_spec;

pub type Outcome = Result<(), String>;

fn runner(cases: u32) -> TestRunner {
    let seed = [7u8; 32];
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::from_seed(RngAlgorithm::ChaCha, &seed),
    )
}

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Outcome
where
    S::Value: std::fmt::Debug,
{
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn lif_cfg() -> impl Strategy<Value = LifConfig> {
    (1.0f64..8.0, 0.1f64..3.0, 0.1f64..2.0).prop_map(|(tau, th, a)| LifConfig::new(tau, th, a).unwrap())
}

pub fn spikes_are_binary(cases: u32) -> Outcome {
    run(cases, (lif_cfg(), -10.0f64..10.0, -10.0f64..10.0), |(cfg, h, i)| {
        let state = LifState { membrane: Tensor::<f64>::from_f64(&[1], &[h]).unwrap() };
        let (s, _) = lif_step(&state, &Tensor::<f64>::from_f64(&[1], &[i]).unwrap(), &cfg).unwrap();
        let v = s.data()[0];
        prop_assert!(v == 0.0 || v == 1.0);
        Ok(())
    })
}

pub fn soft_reset_arithmetic(cases: u32) -> Outcome {
    let strategy = (
        lif_cfg(),
        prop::collection::vec(-5.0f64..5.0, 1..32),
        prop::collection::vec(-5.0f64..5.0, 32),
    );
    run(cases, strategy, |(cfg, h, current)| {
        let n = h.len();
        let state = LifState { membrane: Tensor::<f64>::from_f64(&[n], &h).unwrap() };
        let input = Tensor::<f64>::from_f64(&[n], &current[..n]).unwrap();
        let (s, next) = lif_step(&state, &input, &cfg).unwrap();
        for k in 0..n {
            let charged = (1.0 - 1.0 / cfg.tau) * h[k] + current[k];
            let fired = charged >= cfg.threshold;
            prop_assert_eq!(s.data()[k] == 1.0, fired);
            let expect = if fired { charged - cfg.threshold } else { charged };
            prop_assert!((next.membrane.data()[k] - expect).abs() <= 1e-12);
        }
        Ok(())
    })
}

pub fn sequence_prefix_is_stable(cases: u32) -> Outcome {
    run(cases, (lif_cfg(), prop::collection::vec(-3.0f64..3.0, 6 * 5)), |(cfg, currents)| {
        let full = lif_sequence(&Tensor::<f64>::from_f64(&[6, 5], &currents).unwrap(), &cfg, None).unwrap();
        let short = lif_sequence(&Tensor::<f64>::from_f64(&[3, 5], &currents[..15]).unwrap(), &cfg, None).unwrap();
        prop_assert_eq!(&full.tensor().data()[..15], short.tensor().data());
        Ok(())
    })
}

pub fn integration_conserves_events(cases: u32) -> Outcome {
    let strategy = (
        prop::collection::vec((0u32..95_000, 0u16..24, 0u16..18, 0u8..2), 0..200),
        1.0f64..40.0,
        prop::option::of((1usize..=18, 1usize..=24)),
    );
    run(cases, strategy, |(raw, window, target)| {
        let mut events: Vec<Event> = raw.iter().map(|&(t_us, x, y, p)| Event { t_us, x, y, p }).collect();
        events.sort_by_key(|e| e.t_us);
        let n = events.len();
        let stream = EventStream::new(events, 24, 18, 0).unwrap();
        let ft = integrate_events(&stream, window, target).unwrap();
        let total: f64 = ft.frames.data().iter().map(|&v| v as f64).sum();
        prop_assert_eq!(total, n as f64);
        Ok(())
    })
}

pub fn checkpoint_round_trip(cases: u32) -> Outcome {
    let strategy = (
        prop::collection::vec(any::<f32>(), 1..40),
        prop::collection::vec(-1e300f64..1e300, 1..40),
    );
    run(cases, strategy, |(a, b)| {
        let dir = tempfile::tempdir().unwrap();
        let ta = Tensor::<f32>::new(&[a.len()], a.clone()).unwrap();
        checkpoint::save(dir.path(), &[("a", &ta)]).unwrap();
        let back = checkpoint::load::<f32>(dir.path()).unwrap();
        prop_assert_eq!(back.len(), 1);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(back[0].1.data()), bits(&a));

        let tb = Tensor::<f64>::new(&[b.len(), 1], b.clone()).unwrap();
        checkpoint::save(dir.path(), &[("b", &tb)]).unwrap();
        let back = checkpoint::load::<f64>(dir.path()).unwrap();
        prop_assert_eq!(back[0].1.shape(), &[b.len(), 1][..]);
        prop_assert_eq!(back[0].1.data(), &b[..]);
        Ok(())
    })
}

pub fn inference_prefix(cases: u32) -> Outcome {
    run(cases, (0u64..1000, 1usize..4), |(seed, short)| {
        let mut net = build_network::<f64>(&small_spec(1, 8, 3), &LifConfig::default(), seed).unwrap();
        let mut g = spikedistill::rng::seeded(seed);
        let data: Vec<f64> = (0..2 * 64).map(|_| rand::Rng::random_range(&mut g, 0.0..2.0)).collect();
        let input = Input::Static(Tensor::<f64>::from_f64(&[2, 1, 8, 8], &data).unwrap());
        let mut logits = |steps| {
            let mut tape = Tape::new();
            let r = net.forward(&mut tape, &input, steps, Mode::Eval).unwrap();
            let weak = tape.value(r.weak_logits.unwrap()).unwrap().data().to_vec();
            (tape.value(r.final_logits).unwrap().data().to_vec(), weak)
        };
        let (full, weak_full) = logits(4);
        let (part, weak_part) = logits(short);
        prop_assert_eq!(&full[..part.len()], &part[..]);
        prop_assert_eq!(&weak_full[..weak_part.len()], &weak_part[..]);
        Ok(())
    })
}

/// Two fits with one seed give bitwise-equal metrics and parameters; a
/// different seed gives different parameters.
pub fn seed_determinism() -> Outcome {
    let cfg = BarsConfig { classes: 4, size: 8 };
    let train = bars(48, 0.3, 1, &cfg).map_err(|e| e.to_string())?;
    let test = bars(16, 0.3, 2, &cfg).map_err(|e| e.to_string())?;
    let dcfg = DistillConfig::default();
    let fit_once = |seed| {
        let tcfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            seed,
            augment: true,
            ..Default::default()
        };
        let mut net = build_network::<f32>(&small_spec(1, 8, 4), &LifConfig::default(), seed).unwrap();
        let report = fit(&mut net, &train, &test, &dcfg, &tcfg, |_| Ok(())).unwrap();
        let params: Vec<u32> = net.named_tensors().iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect();
        (report.rows, params)
    };
    let (rows_a, params_a) = fit_once(5);
    let (rows_b, params_b) = fit_once(5);
    if rows_a.len() != rows_b.len() || !rows_a.iter().zip(&rows_b).all(|(a, b)| a.same_metrics(b)) {
        return Err("metrics differ between identical runs".into());
    }
    if params_a != params_b {
        return Err("parameters differ between identical runs".into());
    }
    let (_, params_c) = fit_once(6);
    if params_a == params_c {
        return Err("a different seed gave identical parameters".into());
    }
    Ok(())
}

/// Every suite with its case count, in the order they are reported.
pub fn all() -> Vec<(&'static str, Box<dyn Fn() -> Outcome>)> {
    vec![
        ("spike binarity", Box::new(|| spikes_are_binary(10_000))),
        ("soft reset arithmetic", Box::new(|| soft_reset_arithmetic(512))),
        ("sequence prefix", Box::new(|| sequence_prefix_is_stable(512))),
        ("event count conservation", Box::new(|| integration_conserves_events(512))),
        ("checkpoint round trip", Box::new(|| checkpoint_round_trip(256))),
        ("inference prefix", Box::new(|| inference_prefix(16))),
        ("seed determinism", Box::new(seed_determinism)),
    ]
}
