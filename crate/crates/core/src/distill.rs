//! Task and self-distillation losses.
//!
//! All per-timestep logits are `[T, batch, classes]`. Distances are squared
//! L2 on raw logits, summed over classes and averaged over the batch.
//!
//! - task: per-timestep softmax cross-entropy summed over the first `T_s`
//!   steps of the final head.
//! - temporal (tsd): `|| mean_{t<T_s} f_t - mean_{t<T_t} f_t ||^2`, both
//!   averages taken from the same unrolled run.
//! - spatial (ssd): `sum_{t<T_s} || w_t - mean_{t<T_s} f_t ||^2` where `w_t`
//!   are the weak classifier's logits; the target is detached by default.
//! - total: `task + alpha * tsd + beta * ssd`.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::ForwardRecord;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillConfig {
    /// Inference (student) timesteps `T_s`.
    pub student_steps: usize,
    /// Training (teacher) timesteps `T_t >= T_s`.
    pub teacher_steps: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Stop gradients into the temporal teacher average.
    pub detach_tsd_teacher: bool,
    /// Stop gradients into the spatial teacher average.
    pub detach_ssd_teacher: bool,
    /// Also train the weak head on the task loss.
    pub weak_task_loss: bool,
    /// Guide the weak head with the `T_t` average instead of the `T_s` one.
    pub ssd_full_teacher: bool,
    /// Obtain the teacher from a second forward pass of `T_t` steps instead
    /// of the prefix-sharing single run.
    pub separate_teacher_pass: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            student_steps: 2,
            teacher_steps: 4,
            alpha: 1.0,
            beta: 1.0,
            detach_tsd_teacher: false,
            detach_ssd_teacher: true,
            weak_task_loss: false,
            ssd_full_teacher: false,
            separate_teacher_pass: false,
        }
    }
}

impl DistillConfig {
    /// Plain per-timestep cross-entropy training at `steps` timesteps.
    pub fn baseline(steps: usize) -> Self {
        Self {
            student_steps: steps,
            teacher_steps: steps,
            alpha: 0.0,
            beta: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.student_steps == 0 || self.teacher_steps < self.student_steps {
            return Err(Error::Config(format!(
                "need 1 <= T_s <= T_t, got T_s={} T_t={}",
                self.student_steps, self.teacher_steps
            )));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "alpha and beta must be >= 0, got {} and {}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Scalar values of the loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub task: f64,
    pub tsd: f64,
    pub ssd: f64,
    pub total: f64,
}

/// Weighted combination `task + alpha * tsd + beta * ssd`.
pub fn total_loss(task: f64, tsd: f64, ssd: f64, cfg: &DistillConfig) -> LossBreakdown {
    LossBreakdown {
        task,
        tsd,
        ssd,
        total: task + cfg.alpha * tsd + cfg.beta * ssd,
    }
}

fn time_dims<F: Real>(tape: &Tape<F>, per_step: Var, op: &'static str) -> Result<(usize, usize, usize)> {
    match *tape.shape(per_step)? {
        [t, b, c] => Ok((t, b, c)),
        ref s => Err(Error::shape(op, s, &[0, 0, 0])),
    }
}

/// Mean of the first `over` timestep slices of `[T, batch, classes]`.
pub fn average_logits<F: Real>(tape: &mut Tape<F>, per_step: Var, over: usize) -> Result<Var> {
    let (t, _, _) = time_dims(tape, per_step, "average_logits")?;
    if over == 0 || over > t {
        return Err(Error::invalid("average_logits", format!("cannot average {over} of {t} timesteps")));
    }
    let mut acc = tape.select0(per_step, 0)?;
    for k in 1..over {
        let slice = tape.select0(per_step, k)?;
        acc = tape.add(acc, slice)?;
    }
    if over == 1 {
        return Ok(acc);
    }
    tape.scale(acc, F::one() / F::of(over as f64))
}

/// Cross-entropy summed over the first `steps` timesteps, each averaged
/// over the batch.
pub fn task_loss<F: Real>(tape: &mut Tape<F>, per_step: Var, labels: &[usize], steps: usize) -> Result<Var> {
    let (t, _, _) = time_dims(tape, per_step, "task_loss")?;
    if steps == 0 || steps > t {
        return Err(Error::invalid("task_loss", format!("cannot sum {steps} of {t} timesteps")));
    }
    let mut total: Option<Var> = None;
    for k in 0..steps {
        let logits = tape.select0(per_step, k)?;
        let ce = tape.softmax_cross_entropy(logits, labels)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, ce)?,
            None => ce,
        });
    }
    Ok(total.expect("at least one step"))
}

fn batch_sq_distance<F: Real>(tape: &mut Tape<F>, a: Var, b: Var, op: &'static str) -> Result<Var> {
    let sa = tape.shape(a)?.to_vec();
    let sb = tape.shape(b)?.to_vec();
    if sa != sb || sa.len() != 2 {
        return Err(Error::shape(op, &sa, &sb));
    }
    let d = tape.sub(a, b)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum(sq)?;
    tape.scale(s, F::one() / F::of(sa[0] as f64))
}

/// Squared L2 distance between the student and teacher averages
/// `[batch, classes]`; class-sum, batch-mean.
pub fn tsd_loss<F: Real>(tape: &mut Tape<F>, student_avg: Var, teacher_avg: Var) -> Result<Var> {
    batch_sq_distance(tape, student_avg, teacher_avg, "tsd_loss")
}

/// Sum over the first `steps` weak-head timesteps of the squared L2
/// distance to `target` `[batch, classes]`.
pub fn ssd_loss<F: Real>(tape: &mut Tape<F>, weak_per_step: Var, target: Var, steps: usize) -> Result<Var> {
    let (t, b, c) = time_dims(tape, weak_per_step, "ssd_loss")?;
    let st = tape.shape(target)?.to_vec();
    if st != [b, c] {
        return Err(Error::shape("ssd_loss", &[b, c], &st));
    }
    if steps == 0 || steps > t {
        return Err(Error::invalid("ssd_loss", format!("cannot sum {steps} of {t} timesteps")));
    }
    let mut total: Option<Var> = None;
    for k in 0..steps {
        let w = tape.select0(weak_per_step, k)?;
        let d = batch_sq_distance(tape, w, target, "ssd_loss")?;
        total = Some(match total {
            Some(acc) => tape.add(acc, d)?,
            None => d,
        });
    }
    Ok(total.expect("at least one step"))
}

/// Recorded training objective and its per-term values.
#[derive(Debug)]
pub struct Objective {
    pub loss: Var,
    pub breakdown: LossBreakdown,
    /// `[batch, classes]` student average, for accuracy bookkeeping.
    pub student_avg: Var,
    pub weak_avg: Option<Var>,
}

/// Compose the full objective from a forward run of `T_t` steps. When
/// `teacher` is given it supplies the temporal teacher instead of `run`
/// (separate-pass mode); otherwise the teacher is the `T_t` average of
/// `run` itself.
pub fn objective<F: Real>(
    tape: &mut Tape<F>,
    run: &ForwardRecord<F>,
    teacher: Option<&ForwardRecord<F>>,
    labels: &[usize],
    cfg: &DistillConfig,
) -> Result<Objective> {
    cfg.validate()?;
    let ts = cfg.student_steps;
    let teacher_run = teacher.unwrap_or(run);
    if run.steps < ts || teacher_run.steps < cfg.teacher_steps {
        return Err(Error::invalid(
            "objective",
            format!(
                "forward ran {} (teacher {}) steps, config needs T_s={} T_t={}",
                run.steps, teacher_run.steps, ts, cfg.teacher_steps
            ),
        ));
    }
    let student_avg = average_logits(tape, run.final_logits, ts)?;
    let mut task = task_loss(tape, run.final_logits, labels, ts)?;
    if cfg.weak_task_loss {
        if let Some(weak) = run.weak_logits {
            let wt = task_loss(tape, weak, labels, ts)?;
            task = tape.add(task, wt)?;
        }
    }

    let teacher_avg = average_logits(tape, teacher_run.final_logits, cfg.teacher_steps)?;
    let teacher_avg = if cfg.detach_tsd_teacher {
        tape.detach(teacher_avg)?
    } else {
        teacher_avg
    };
    let tsd = tsd_loss(tape, student_avg, teacher_avg)?;

    let (ssd, weak_avg) = match run.weak_logits {
        Some(weak) => {
            let target = if cfg.ssd_full_teacher {
                average_logits(tape, teacher_run.final_logits, cfg.teacher_steps)?
            } else {
                student_avg
            };
            let target = if cfg.detach_ssd_teacher { tape.detach(target)? } else { target };
            (Some(ssd_loss(tape, weak, target, ts)?), Some(average_logits(tape, weak, ts)?))
        }
        None if cfg.beta > 0.0 => {
            return Err(Error::invalid("objective", "beta > 0 needs the weak classifier"));
        }
        None => (None, None),
    };

    let value = |tape: &Tape<F>, v: Var| -> Result<f64> { Ok(tape.value(v)?.item()?.to_f64().unwrap_or(f64::NAN)) };
    let breakdown = total_loss(
        value(tape, task)?,
        value(tape, tsd)?,
        ssd.map(|v| value(tape, v)).transpose()?.unwrap_or(0.0),
        cfg,
    );

    let mut loss = task;
    if cfg.alpha > 0.0 {
        let term = tape.scale(tsd, F::of(cfg.alpha))?;
        loss = tape.add(loss, term)?;
    }
    if let (Some(ssd), true) = (ssd, cfg.beta > 0.0) {
        let term = tape.scale(ssd, F::of(cfg.beta))?;
        loss = tape.add(loss, term)?;
    }
    Ok(Objective {
        loss,
        breakdown,
        student_avg,
        weak_avg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn per_step(tape: &mut Tape<f64>, shape: &[usize], v: &[f64]) -> Var {
        tape.variable(Tensor::from_f64(shape, v).unwrap()).unwrap()
    }

    #[test]
    fn averaging() {
        let mut tape = Tape::new();
        let x = per_step(&mut tape, &[2, 1, 2], &[2.0, 0.0, 0.0, 2.0]);
        let avg = average_logits(&mut tape, x, 2).unwrap();
        assert_eq!(tape.value(avg).unwrap().data(), &[1.0, 1.0]);
        let first = average_logits(&mut tape, x, 1).unwrap();
        assert_eq!(tape.value(first).unwrap().data(), &[2.0, 0.0]);
        assert!(average_logits(&mut tape, x, 3).is_err());
        assert!(average_logits(&mut tape, x, 0).is_err());
    }

    #[test]
    fn task_loss_rejects_bad_label() {
        let mut tape = Tape::new();
        let x = per_step(&mut tape, &[1, 1, 2], &[0.0, 0.0]);
        assert!(task_loss(&mut tape, x, &[2], 1).is_err());
    }

    #[test]
    fn distances() {
        let mut tape = Tape::new();
        let a = per_step(&mut tape, &[1, 2], &[1.0, 0.0]);
        let b = per_step(&mut tape, &[1, 2], &[0.0, 1.0]);
        let d = tsd_loss(&mut tape, a, b).unwrap();
        assert_eq!(tape.value(d).unwrap().item().unwrap(), 2.0);
        let c = per_step(&mut tape, &[1, 3], &[0.0, 1.0, 2.0]);
        assert!(tsd_loss(&mut tape, a, c).is_err());
    }

    #[test]
    fn weighted_total() {
        let cfg = DistillConfig {
            alpha: 1.0,
            beta: 1.0,
            ..Default::default()
        };
        assert_eq!(total_loss(1.0, 0.5, 0.25, &cfg).total, 1.75);
        let base = DistillConfig::baseline(2);
        assert_eq!(total_loss(1.3, 0.5, 0.25, &base).total, 1.3);
    }

    #[test]
    fn config_validation() {
        let mut cfg = DistillConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.teacher_steps = 1;
        assert!(cfg.validate().is_err());
        cfg = DistillConfig {
            alpha: -1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
