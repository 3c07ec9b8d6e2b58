//! Training loop: unrolled forward over `T_t` steps, the three-term
//! objective, backpropagation, momentum SGD with a step schedule, and
//! evaluation at `T_s` steps.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::autodiff::{ParamSet, Tape};
use crate::data::Dataset;
use crate::distill::{self, DistillConfig, LossBreakdown};
use crate::error::{Error, Result};
use crate::model::{Mode, Network};
use crate::rng;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs between learning-rate decays.
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub seed: u64,
    /// Random flips and crops on image datasets.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 100,
            batch_size: 64,
            lr_step: 30,
            lr_gamma: 0.1,
            seed: 0,
            augment: false,
        }
    }
}

impl TrainConfig {
    /// Defaults for event data, which use stronger weight decay.
    pub fn for_events() -> Self {
        Self {
            weight_decay: 1e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return fail(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.epochs == 0 || self.lr_step == 0 {
            return fail("epochs and lr_step must be >= 1".into());
        }
        if !(self.lr_gamma > 0.0) {
            return fail(format!("lr_gamma must be positive, got {}", self.lr_gamma));
        }
        Ok(())
    }
}

/// `lr * gamma^floor(epoch / lr_step)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr * cfg.lr_gamma.powi((epoch / cfg.lr_step.max(1)) as i32)
}

/// Velocity buffers, one per parameter in [`ParamSet`] order.
#[derive(Clone, Debug)]
pub struct MomentumState<F> {
    velocity: Vec<Vec<F>>,
}

impl<F: Real> MomentumState<F> {
    pub fn new(params: &ParamSet<F>) -> Self {
        Self {
            velocity: params.iter().map(|(_, _, e)| vec![F::zero(); e.tensor.len()]).collect(),
        }
    }

    pub fn velocity(&self, index: usize) -> &[F] {
        &self.velocity[index]
    }
}

/// `v <- momentum * v + grad + wd * p; p <- p - lr * v`. Parameters
/// flagged without decay skip the `wd * p` term; a missing gradient counts
/// as zero.
pub fn sgd_update<F: Real>(
    params: &mut ParamSet<F>,
    state: &mut MomentumState<F>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if state.velocity.len() != params.len() {
        return Err(Error::shape("sgd_update", &[params.len()], &[state.velocity.len()]));
    }
    let (lr, mu) = (F::of(lr), F::of(momentum));
    for ((_, name, entry), v) in params.iter_mut().zip(&mut state.velocity) {
        if v.len() != entry.tensor.len() {
            return Err(Error::invalid(
                "sgd_update",
                format!("velocity for `{name}` has {} values, parameter has {}", v.len(), entry.tensor.len()),
            ));
        }
        let wd = F::of(if entry.decay { weight_decay } else { 0.0 });
        let grad = entry.tensor.grad().map(<[F]>::to_vec);
        let data = entry.tensor.data_mut();
        for i in 0..data.len() {
            let g = grad.as_ref().map_or(F::zero(), |g| g[i]);
            v[i] = mu * v[i] + g + wd * data[i];
            data[i] -= lr * v[i];
        }
    }
    Ok(())
}

/// Row-wise argmax of `[rows, cols]`; ties go to the lower index.
pub fn argmax_rows<F: Real>(t: &Tensor<F>) -> Vec<usize> {
    let cols = *t.shape().last().unwrap_or(&1);
    t.data()
        .chunks_exact(cols)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, row[0]), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

fn count_correct(pred: &[usize], labels: &[usize]) -> usize {
    pred.iter().zip(labels).filter(|(p, l)| p == l).count()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub losses: LossBreakdown,
    /// Correct student predictions (argmax of the `T_s` average).
    pub correct: usize,
    pub weak_correct: Option<usize>,
    pub batch: usize,
}

/// One optimization step on `batch` at learning rate `lr`.
pub fn train_step<F: Real>(
    net: &mut Network<F>,
    batch: &crate::data::Batch<F>,
    dcfg: &DistillConfig,
    tcfg: &TrainConfig,
    state: &mut MomentumState<F>,
    lr: f64,
) -> Result<StepOutcome> {
    dcfg.validate()?;
    let mut tape = Tape::new();
    let steps = if dcfg.separate_teacher_pass { dcfg.student_steps } else { dcfg.teacher_steps };
    let run = net.forward(&mut tape, &batch.input, steps, Mode::Train)?;
    let teacher = if dcfg.separate_teacher_pass {
        Some(net.forward(&mut tape, &batch.input, dcfg.teacher_steps, Mode::Train)?)
    } else {
        None
    };
    let obj = distill::objective(&mut tape, &run, teacher.as_ref(), &batch.labels, dcfg)?;
    let l = obj.breakdown;
    if ![l.task, l.tsd, l.ssd, l.total].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "training loss (task={} tsd={} ssd={} total={})",
            l.task, l.tsd, l.ssd, l.total
        )));
    }
    let correct = count_correct(&argmax_rows(tape.value(obj.student_avg)?), &batch.labels);
    let weak_correct = match obj.weak_avg {
        Some(w) => Some(count_correct(&argmax_rows(tape.value(w)?), &batch.labels)),
        None => None,
    };
    tape.backward(obj.loss, net.params_mut())?;
    sgd_update(net.params_mut(), state, lr, tcfg.momentum, tcfg.weight_decay)?;
    if let Some((_, name, _)) = net.params().iter().find(|(_, _, e)| !e.tensor.all_finite()) {
        return Err(Error::NonFinite(format!("parameter `{name}` after update")));
    }
    Ok(StepOutcome {
        losses: l,
        correct,
        weak_correct,
        batch: batch.labels.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Present while the weak classifier is attached.
    pub weak_accuracy: Option<f64>,
    /// Task loss summed over the `T_s` steps, averaged over samples.
    pub task_loss: f64,
    pub ssd_loss: f64,
    pub samples: usize,
}

/// Inference-mode accuracy of the `steps`-averaged final logits. Runs
/// exactly `steps` timesteps per batch.
pub fn evaluate<F: Real, D: Dataset>(net: &mut Network<F>, data: &D, steps: usize, batch_size: usize) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::invalid("evaluate", "empty dataset"));
    }
    let (mut correct, mut weak_correct) = (0usize, 0usize);
    let (mut task, mut ssd) = (0.0, 0.0);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = data.batch::<F>(chunk, None)?;
        let mut tape = Tape::new();
        let rec = net.forward(&mut tape, &batch.input, steps, Mode::Eval)?;
        let avg = distill::average_logits(&mut tape, rec.final_logits, steps)?;
        correct += count_correct(&argmax_rows(tape.value(avg)?), &batch.labels);
        let t = distill::task_loss(&mut tape, rec.final_logits, &batch.labels, steps)?;
        task += tape.value(t)?.item()?.to_f64().unwrap_or(f64::NAN) * chunk.len() as f64;
        if let Some(w) = rec.weak_logits {
            let wavg = distill::average_logits(&mut tape, w, steps)?;
            weak_correct += count_correct(&argmax_rows(tape.value(wavg)?), &batch.labels);
            let s = distill::ssd_loss(&mut tape, w, avg, steps)?;
            ssd += tape.value(s)?.item()?.to_f64().unwrap_or(f64::NAN) * chunk.len() as f64;
        }
    }
    let n = data.len() as f64;
    Ok(EvalReport {
        accuracy: correct as f64 / n,
        weak_accuracy: net.has_weak_head().then(|| weak_correct as f64 / n),
        task_loss: task / n,
        ssd_loss: ssd / n,
        samples: data.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: Split,
    pub task_loss: f64,
    pub tsd_loss: f64,
    pub ssd_loss: f64,
    pub total_loss: f64,
    pub accuracy: f64,
    pub weak_accuracy: Option<f64>,
    pub wall_seconds: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str =
        "epoch,split,task_loss,tsd_loss,ssd_loss,total_loss,accuracy,weak_accuracy,wall_seconds";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.3}",
            self.epoch,
            self.split,
            self.task_loss,
            self.tsd_loss,
            self.ssd_loss,
            self.total_loss,
            self.accuracy,
            self.weak_accuracy.map(|w| w.to_string()).unwrap_or_default(),
            self.wall_seconds
        )
    }

    /// Equality of everything except the wall clock.
    pub fn same_metrics(&self, other: &MetricsRow) -> bool {
        MetricsRow {
            wall_seconds: 0.0,
            ..*self
        } == MetricsRow {
            wall_seconds: 0.0,
            ..*other
        }
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(MetricsRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// State handed to the per-epoch observer.
pub struct EpochEnd<'a, F: Real> {
    pub epoch: usize,
    pub train: MetricsRow,
    pub test: MetricsRow,
    /// Test accuracy is a new maximum (first epoch included).
    pub is_best: bool,
    pub network: &'a Network<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub rows: Vec<MetricsRow>,
    pub best_accuracy: f64,
    pub best_epoch: usize,
    pub final_accuracy: f64,
    pub final_weak_accuracy: Option<f64>,
}

/// Train for `tcfg.epochs` epochs, evaluating on `test` at `T_s` after
/// each. The shuffle order of epoch `e` depends only on `(seed, e)`.
/// Trailing batches smaller than two samples are skipped.
pub fn fit<F: Real, D: Dataset, E: Dataset>(
    net: &mut Network<F>,
    train: &D,
    test: &E,
    dcfg: &DistillConfig,
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochEnd<'_, F>) -> Result<()>,
) -> Result<FitReport> {
    dcfg.validate()?;
    tcfg.validate()?;
    if train.len() < 2 {
        return Err(Error::invalid("fit", "training set needs at least 2 samples"));
    }
    let start = Instant::now();
    let mut state = MomentumState::new(net.params());
    let shuffle_seed = rng::derive_seed(tcfg.seed, rng::streams::SHUFFLE);
    let augment_seed = rng::derive_seed(tcfg.seed, rng::streams::AUGMENT);
    let mut rows = Vec::with_capacity(2 * tcfg.epochs);
    let (mut best_accuracy, mut best_epoch) = (f64::NEG_INFINITY, 0);
    let mut last = None;
    for epoch in 0..tcfg.epochs {
        let lr = lr_at(epoch, tcfg);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::stream(shuffle_seed, epoch as u64));
        let mut aug_rng = rng::stream(augment_seed, epoch as u64);
        let mut sums = [0.0f64; 4];
        let (mut seen, mut correct, mut weak_correct) = (0usize, 0usize, None::<usize>);
        for chunk in order.chunks(tcfg.batch_size).filter(|c| c.len() >= 2) {
            let batch = train.batch::<F>(chunk, tcfg.augment.then_some(&mut aug_rng))?;
            let out = train_step(net, &batch, dcfg, tcfg, &mut state, lr).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("{msg} at epoch {epoch}, sample {seen}")),
                other => other,
            })?;
            let b = out.batch as f64;
            let l = out.losses;
            for (s, v) in sums.iter_mut().zip([l.task, l.tsd, l.ssd, l.total]) {
                *s += v * b;
            }
            seen += out.batch;
            correct += out.correct;
            if let Some(w) = out.weak_correct {
                *weak_correct.get_or_insert(0) += w;
            }
        }
        let n = seen as f64;
        let train_row = MetricsRow {
            epoch,
            split: Split::Train,
            task_loss: sums[0] / n,
            tsd_loss: sums[1] / n,
            ssd_loss: sums[2] / n,
            total_loss: sums[3] / n,
            accuracy: correct as f64 / n,
            weak_accuracy: weak_correct.map(|w| w as f64 / n),
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        let report = evaluate(net, test, dcfg.student_steps, tcfg.batch_size)?;
        let losses = distill::total_loss(report.task_loss, 0.0, report.ssd_loss, dcfg);
        let test_row = MetricsRow {
            epoch,
            split: Split::Test,
            task_loss: losses.task,
            tsd_loss: losses.tsd,
            ssd_loss: losses.ssd,
            total_loss: losses.total,
            accuracy: report.accuracy,
            weak_accuracy: report.weak_accuracy,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        let is_best = report.accuracy > best_accuracy;
        if is_best {
            best_accuracy = report.accuracy;
            best_epoch = epoch;
        }
        rows.push(train_row);
        rows.push(test_row);
        on_epoch(&EpochEnd {
            epoch,
            train: train_row,
            test: test_row,
            is_best,
            network: net,
        })?;
        last = Some(report);
    }
    let last = last.expect("at least one epoch");
    Ok(FitReport {
        rows,
        best_accuracy,
        best_epoch,
        final_accuracy: last.accuracy,
        final_weak_accuracy: last.weak_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamGroup;

    fn one_param(value: f64, grad: f64, decay: bool) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        let id = ps.insert("p", Tensor::from_f64(&[1], &[value]).unwrap(), decay, ParamGroup::Main).unwrap();
        ps.get_mut(id).tensor.set_grad(vec![grad]).unwrap();
        ps
    }

    #[test]
    fn schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 0.1);
        assert!((lr_at(30, &cfg) - 0.01).abs() < 1e-15);
        assert!((lr_at(65, &cfg) - 0.001).abs() < 1e-15);
        assert_eq!(lr_at(29, &cfg), 0.1);
    }

    #[test]
    fn plain_gradient_descent() {
        let mut ps = one_param(1.0, 0.5, true);
        let mut st = MomentumState::new(&ps);
        sgd_update(&mut ps, &mut st, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(ps.by_name("p").unwrap().tensor.data()[0], 1.0 - 0.05);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut ps = one_param(2.0, 0.0, true);
        let mut st = MomentumState::new(&ps);
        sgd_update(&mut ps, &mut st, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(ps.by_name("p").unwrap().tensor.data()[0], 2.0);
    }

    #[test]
    fn decay_respects_flag() {
        for (decay, expected) in [(true, 1.0 - 0.1 * 0.5), (false, 1.0)] {
            let mut ps = one_param(1.0, 0.0, decay);
            let mut st = MomentumState::new(&ps);
            sgd_update(&mut ps, &mut st, 0.1, 0.9, 0.5).unwrap();
            assert_eq!(ps.by_name("p").unwrap().tensor.data()[0], expected);
        }
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut ps = one_param(1.0, 0.0, true);
        let mut st = MomentumState::new(&ParamSet::<f64>::new());
        assert!(sgd_update(&mut ps, &mut st, 0.1, 0.9, 0.0).is_err());
    }

    #[test]
    fn argmax_prefers_first_tie() {
        let t = Tensor::<f64>::from_f64(&[2, 3], &[1.0, 3.0, 3.0, 0.0, -1.0, -2.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0]);
    }

    #[test]
    fn csv_layout() {
        let row = MetricsRow {
            epoch: 3,
            split: Split::Test,
            task_loss: 1.5,
            tsd_loss: 0.0,
            ssd_loss: 0.25,
            total_loss: 1.75,
            accuracy: 0.5,
            weak_accuracy: None,
            wall_seconds: 2.0,
        };
        assert_eq!(row.to_csv(), "3,test,1.5,0,0.25,1.75,0.5,,2.000");
        let csv = metrics_csv(&[row]);
        assert_eq!(csv.lines().next().unwrap(), MetricsRow::CSV_HEADER);
        assert!(row.same_metrics(&MetricsRow { wall_seconds: 9.0, ..row }));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { momentum: 1.0, ..Default::default() },
            TrainConfig { batch_size: 1, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
