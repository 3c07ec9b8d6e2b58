//! Leaky integrate-and-fire neurons over discrete timesteps.
//!
//! Per step and per neuron:
//!
//! ```text
//! H  = (1 - 1/tau) * H_prev + I      charge
//! S  = 1 if H >= threshold else 0    fire (ties fire)
//! H' = H - S * threshold             soft reset
//! ```
//!
//! The spike's backward rule is a rectangle of height `1/a` and width `a`
//! centred on the threshold. The reset subtracts the *value* of the spike,
//! so no gradient flows through the indicator on that path.

use crate::autodiff::{BackwardRule, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifConfig {
    pub tau: f64,
    pub threshold: f64,
    /// Width `a` of the rectangular surrogate window.
    pub surrogate_width: f64,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            threshold: 1.0,
            surrogate_width: 1.0,
        }
    }
}

impl LifConfig {
    pub fn new(tau: f64, threshold: f64, surrogate_width: f64) -> Result<Self> {
        let cfg = Self {
            tau,
            threshold,
            surrogate_width,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `tau = 1` is accepted: it is the memoryless limit with zero leak.
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 1.0 && self.tau.is_finite()) {
            return Err(Error::invalid("lif_config", format!("tau must be >= 1, got {}", self.tau)));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::invalid("lif_config", format!("threshold must be > 0, got {}", self.threshold)));
        }
        if !(self.surrogate_width > 0.0 && self.surrogate_width.is_finite()) {
            return Err(Error::invalid(
                "lif_config",
                format!("surrogate width must be > 0, got {}", self.surrogate_width),
            ));
        }
        Ok(())
    }

    /// Multiplicative leak `1 - 1/tau` applied to the previous membrane.
    pub fn leak(&self) -> f64 {
        1.0 - 1.0 / self.tau
    }

    /// Surrogate derivative of the spike w.r.t. the pre-reset membrane.
    #[inline]
    pub fn surrogate(&self, membrane: f64) -> f64 {
        if (membrane - self.threshold).abs() < self.surrogate_width / 2.0 {
            1.0 / self.surrogate_width
        } else {
            0.0
        }
    }
}

/// Membrane potentials of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LifState<F> {
    pub membrane: Tensor<F>,
}

impl<F: Real> LifState<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            membrane: Tensor::zeros(shape),
        }
    }
}

/// `[T, ...]` tensor whose elements are exactly 0 or 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTrain<F>(Tensor<F>);

impl<F: Real> SpikeTrain<F> {
    pub fn tensor(&self) -> &Tensor<F> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<F> {
        self.0
    }

    pub fn steps(&self) -> usize {
        self.0.shape()[0]
    }

    /// Fraction of ones.
    pub fn rate(&self) -> f64 {
        let ones = self.0.data().iter().filter(|&&v| v == F::one()).count();
        ones as f64 / self.0.len() as f64
    }
}

/// Advance a layer by one timestep.
pub fn lif_step<F: Real>(state: &LifState<F>, current: &Tensor<F>, cfg: &LifConfig) -> Result<(Tensor<F>, LifState<F>)> {
    if current.shape() != state.membrane.shape() {
        return Err(Error::shape("lif_step", state.membrane.shape(), current.shape()));
    }
    if !current.all_finite() {
        return Err(Error::NonFinite("lif_step input current".into()));
    }
    let leak = F::of(cfg.leak());
    let theta = F::of(cfg.threshold);
    let mut spikes = Vec::with_capacity(current.len());
    let mut membrane = Vec::with_capacity(current.len());
    for (&h_prev, &i) in state.membrane.data().iter().zip(current.data()) {
        let h = leak * h_prev + i;
        let s = if h >= theta { F::one() } else { F::zero() };
        spikes.push(s);
        membrane.push(h - s * theta);
    }
    let shape = current.shape().to_vec();
    Ok((
        Tensor::from_parts(shape.clone(), spikes),
        LifState {
            membrane: Tensor::from_parts(shape, membrane),
        },
    ))
}

/// Elementwise surrogate gradient `1/a` inside `|H - threshold| < a/2`,
/// zero outside. `membrane` is the pre-reset potential.
pub fn spike_backward<F: Real>(membrane: &Tensor<F>, cfg: &LifConfig) -> Tensor<F> {
    let data = membrane
        .data()
        .iter()
        .map(|&h| F::of(cfg.surrogate(h.to_f64().unwrap_or(f64::NAN))))
        .collect();
    Tensor::from_parts(membrane.shape().to_vec(), data)
}

/// Run a layer over `currents[T, ...]` starting from `initial` (zeros when
/// `None`).
pub fn lif_sequence<F: Real>(
    currents: &Tensor<F>,
    cfg: &LifConfig,
    initial: Option<LifState<F>>,
) -> Result<SpikeTrain<F>> {
    let steps = *currents.shape().first().unwrap_or(&0);
    if steps == 0 || currents.shape().len() < 2 {
        return Err(Error::invalid("lif_sequence", "need at least one timestep on the leading axis"));
    }
    let step_shape = &currents.shape()[1..];
    let mut state = initial.unwrap_or_else(|| LifState::zeros(step_shape));
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let (s, next) = lif_step(&state, &currents.select0(t)?, cfg)?;
        out.push(s);
        state = next;
    }
    Ok(SpikeTrain(Tensor::stack(&out)?))
}

/// Forward nonlinearity used inside a recorded layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SpikeFn {
    /// Threshold firing with the rectangular surrogate on the way back.
    #[default]
    Heaviside,
    /// `S = H`, exactly differentiable. Only for checking the leak and
    /// reset paths against finite differences.
    Identity,
}

struct LifRule<F> {
    steps: usize,
    leak: F,
    threshold: F,
    cfg: LifConfig,
    spike_fn: SpikeFn,
    pre_reset: Vec<F>,
}

impl<F: Real> BackwardRule<F> for LifRule<F> {
    fn name(&self) -> &'static str {
        "lif_sequence"
    }

    fn backward(&self, _inputs: &[&Tensor<F>], _output: &Tensor<F>, grad_output: &[F]) -> Vec<Option<Vec<F>>> {
        let block = grad_output.len() / self.steps;
        let mut d_current = vec![F::zero(); grad_output.len()];
        // gradient arriving at the post-reset membrane of step t from step t+1
        let mut carry = vec![F::zero(); block];
        let reset_factor = match self.spike_fn {
            SpikeFn::Heaviside => F::one(),
            SpikeFn::Identity => F::one() - self.threshold,
        };
        for t in (0..self.steps).rev() {
            let range = t * block..(t + 1) * block;
            let gs = &grad_output[range.clone()];
            let h = &self.pre_reset[range.clone()];
            let dc = &mut d_current[range];
            for j in 0..block {
                let ds_dh = match self.spike_fn {
                    SpikeFn::Heaviside => F::of(self.cfg.surrogate(h[j].to_f64().unwrap_or(f64::NAN))),
                    SpikeFn::Identity => F::one(),
                };
                let dh = gs[j] * ds_dh + carry[j] * reset_factor;
                dc[j] = dh;
                carry[j] = self.leak * dh;
            }
        }
        vec![Some(d_current)]
    }
}

/// Record a LIF layer on the tape. `currents` has leading axis `steps * n`
/// laid out time-major; each of the `steps` blocks is one timestep. The
/// membrane starts at zero. Returns spikes of the same shape.
pub fn lif_layer<F: Real>(tape: &mut Tape<F>, currents: Var, steps: usize, cfg: &LifConfig, spike_fn: SpikeFn) -> Result<Var> {
    let value = tape.value(currents)?;
    let lead = *value.shape().first().unwrap_or(&0);
    if steps == 0 || lead % steps != 0 {
        return Err(Error::invalid(
            "lif_sequence",
            format!("leading dim {lead} is not a positive multiple of {steps} timesteps"),
        ));
    }
    if !value.all_finite() {
        return Err(Error::NonFinite("lif_sequence input current".into()));
    }
    let block = value.len() / steps;
    let leak = F::of(cfg.leak());
    let theta = F::of(cfg.threshold);
    let input = value.data();
    let mut pre_reset = vec![F::zero(); input.len()];
    let mut spikes = vec![F::zero(); input.len()];
    let mut membrane = vec![F::zero(); block];
    for t in 0..steps {
        for j in 0..block {
            let k = t * block + j;
            let h = leak * membrane[j] + input[k];
            let s = match spike_fn {
                SpikeFn::Heaviside => {
                    if h >= theta {
                        F::one()
                    } else {
                        F::zero()
                    }
                }
                SpikeFn::Identity => h,
            };
            pre_reset[k] = h;
            spikes[k] = s;
            membrane[j] = h - s * theta;
        }
    }
    let out = Tensor::from_parts(value.shape().to_vec(), spikes);
    let rule = LifRule {
        steps,
        leak,
        threshold: theta,
        cfg: *cfg,
        spike_fn,
        pre_reset,
    };
    tape.custom(&[currents], out, Box::new(rule))
}

struct SpikeRule {
    cfg: LifConfig,
}

impl<F: Real> BackwardRule<F> for SpikeRule {
    fn name(&self) -> &'static str {
        "spike"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _output: &Tensor<F>, grad_output: &[F]) -> Vec<Option<Vec<F>>> {
        let h = inputs[0].data();
        let d = grad_output
            .iter()
            .zip(h)
            .map(|(&g, &hv)| g * F::of(self.cfg.surrogate(hv.to_f64().unwrap_or(f64::NAN))))
            .collect();
        vec![Some(d)]
    }
}

/// Stateless threshold nonlinearity with the surrogate backward rule.
pub fn spike<F: Real>(tape: &mut Tape<F>, membrane: Var, cfg: &LifConfig) -> Result<Var> {
    let value = tape.value(membrane)?;
    let theta = F::of(cfg.threshold);
    let data = value
        .data()
        .iter()
        .map(|&h| if h >= theta { F::one() } else { F::zero() })
        .collect();
    let out = Tensor::from_parts(value.shape().to_vec(), data);
    tape.custom(&[membrane], out, Box::new(SpikeRule { cfg: *cfg }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: f64) -> Tensor<f64> {
        Tensor::from_f64(&[1], &[v]).unwrap()
    }

    #[test]
    fn step_fires_and_soft_resets() {
        let cfg = LifConfig::default();
        let (s, st) = lif_step(&LifState::zeros(&[1]), &t1(1.2), &cfg).unwrap();
        assert_eq!(s.data(), &[1.0]);
        assert!((st.membrane.data()[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn step_with_zero_input_is_silent() {
        let cfg = LifConfig::default();
        let (s, st) = lif_step(&LifState::zeros(&[1]), &t1(0.0), &cfg).unwrap();
        assert_eq!(s.data(), &[0.0]);
        assert_eq!(st.membrane.data(), &[0.0]);
    }

    #[test]
    fn subthreshold_accumulation() {
        let cfg = LifConfig::default();
        let (s1, st1) = lif_step(&LifState::zeros(&[1]), &t1(0.4), &cfg).unwrap();
        let (s2, st2) = lif_step(&st1, &t1(0.4), &cfg).unwrap();
        assert_eq!((s1.data()[0], s2.data()[0]), (0.0, 0.0));
        assert!((st1.membrane.data()[0] - 0.4).abs() < 1e-12);
        assert!((st2.membrane.data()[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn tie_at_threshold_fires() {
        let cfg = LifConfig::default();
        let (s, st) = lif_step(&LifState::zeros(&[1]), &t1(1.0), &cfg).unwrap();
        assert_eq!(s.data(), &[1.0]);
        assert_eq!(st.membrane.data(), &[0.0]);
    }

    #[test]
    fn step_rejects_bad_current() {
        let cfg = LifConfig::default();
        let err = lif_step(&LifState::zeros(&[2]), &t1(0.0), &cfg).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { op: "lif_step", .. }));
        let err = lif_step(&LifState::zeros(&[1]), &t1(f64::NAN), &cfg).unwrap_err();
        assert!(err.is_numeric());
    }

    #[test]
    fn surrogate_window_is_strict() {
        let cfg = LifConfig::default();
        let h = Tensor::<f64>::from_f64(&[3], &[1.0, 1.5, -3.0]).unwrap();
        assert_eq!(spike_backward(&h, &cfg).data(), &[1.0, 0.0, 0.0]);
        let h = Tensor::<f64>::from_f64(&[2], &[0.5000001, 0.5]).unwrap();
        assert_eq!(spike_backward(&h, &cfg).data(), &[1.0, 0.0]);
    }

    #[test]
    fn sequence_crossing_pattern() {
        let cfg = LifConfig::default();
        let currents = Tensor::<f64>::from_f64(&[4, 1], &[0.6; 4]).unwrap();
        let train = lif_sequence(&currents, &cfg, None).unwrap();
        // H: 0.6, 0.9, 1.05 -> fire, reset to 0.05; then 0.625
        assert_eq!(train.tensor().data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn sequence_rejects_empty() {
        let cfg = LifConfig::default();
        let currents = Tensor::<f64>::from_f64(&[3], &[0.0; 3]).unwrap();
        assert!(lif_sequence(&currents, &cfg, None).is_err());
    }

    #[test]
    fn recorded_layer_matches_stepwise() {
        let cfg = LifConfig::default();
        let vals: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 * 0.37).collect();
        let currents = Tensor::<f64>::from_f64(&[3, 4], &vals).unwrap();
        let reference = lif_sequence(&currents, &cfg, None).unwrap();
        let mut tape = Tape::new();
        let c = tape.constant(currents).unwrap();
        let s = lif_layer(&mut tape, c, 3, &cfg, SpikeFn::Heaviside).unwrap();
        assert_eq!(tape.value(s).unwrap().data(), reference.tensor().data());
    }

    #[test]
    fn config_validation() {
        assert!(LifConfig::new(0.5, 1.0, 1.0).is_err());
        assert!(LifConfig::new(2.0, 0.0, 1.0).is_err());
        assert!(LifConfig::new(2.0, 1.0, -1.0).is_err());
        assert!(LifConfig::new(1.0, 1.0, 1.0).is_ok());
    }
}
