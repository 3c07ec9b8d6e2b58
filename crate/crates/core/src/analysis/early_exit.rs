//! Early exit through the weak classifier.
//!
//! A sample exits at the weak head when the largest softmax probability
//! of its `T_s`-averaged weak logits reaches the threshold; otherwise the
//! final head decides.

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::distill::average_logits;
use crate::error::{Error, Result};
use crate::model::{Mode, Network};
use crate::tensor::Real;
use crate::train::argmax_rows;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyExitReport {
    pub full_accuracy: f64,
    pub weak_accuracy: f64,
    /// Accuracy of the exit rule; absent without a threshold.
    pub blended_accuracy: Option<f64>,
    pub exit_fraction: f64,
    pub samples: usize,
}

fn max_softmax(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
    1.0 / z
}

pub fn early_exit_eval<F: Real, D: Dataset>(
    net: &mut Network<F>,
    data: &D,
    steps: usize,
    threshold: Option<f64>,
    batch_size: usize,
) -> Result<EarlyExitReport> {
    if !net.has_weak_head() {
        return Err(Error::invalid("early_exit_eval", "the network has no weak classifier"));
    }
    if data.is_empty() {
        return Err(Error::invalid("early_exit_eval", "empty dataset"));
    }
    let (mut full, mut weak, mut blended, mut exits) = (0usize, 0usize, 0usize, 0usize);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = data.batch::<F>(chunk, None)?;
        let mut tape = Tape::new();
        let rec = net.forward(&mut tape, &batch.input, steps, Mode::Eval)?;
        let fa = average_logits(&mut tape, rec.final_logits, steps)?;
        let wa = average_logits(&mut tape, rec.weak_logits.expect("weak head checked"), steps)?;
        let fpred = argmax_rows(tape.value(fa)?);
        let wvals = tape.value(wa)?;
        let wpred = argmax_rows(wvals);
        let classes = wvals.shape()[1];
        for (i, row) in wvals.to_f64_vec().chunks_exact(classes).enumerate() {
            let y = batch.labels[i];
            full += (fpred[i] == y) as usize;
            weak += (wpred[i] == y) as usize;
            let exit = threshold.is_some_and(|th| max_softmax(row) >= th);
            exits += exit as usize;
            blended += (if exit { wpred[i] } else { fpred[i] } == y) as usize;
        }
    }
    let n = data.len() as f64;
    Ok(EarlyExitReport {
        full_accuracy: full as f64 / n,
        weak_accuracy: weak as f64 / n,
        blended_accuracy: threshold.map(|_| blended as f64 / n),
        exit_fraction: exits as f64 / n,
        samples: data.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_peak() {
        assert!((max_softmax(&[0.0, 0.0]) - 0.5).abs() < 1e-15);
        assert!(max_softmax(&[100.0, 0.0, 0.0]) > 0.999);
    }
}
