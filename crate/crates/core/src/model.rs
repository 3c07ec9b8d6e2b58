//! Staged convolutional spiking networks with a weak classifier tap.
//!
//! A network is a list of stages. Each stage is a list of
//! `conv3x3 -> batchnorm -> LIF` blocks; a pooling stage averages the last
//! block's normalized currents (2x2, stride 2) before its neurons, so every
//! stage emits binary spikes. The head is global average pooling followed
//! by a fully connected layer, applied per timestep.
//!
//! The weak classifier (`conv3x3 -> batchnorm -> LIF -> GAP -> fc`) reads
//! the spikes of one interior stage. It is a pure tap: it never feeds back
//! into the main path, and [`Network::strip_weak_classifier`] removes it.
//!
//! The forward pass is unrolled layer by layer over all timesteps: every
//! activation is laid out `[T * batch, ...]`, time-major. Batch norm in
//! train mode therefore normalizes over all timesteps of the batch at once.

use std::path::Path;

use indexmap::IndexMap;
use rand::Rng as _;

use crate::autodiff::{BnMode, ParamGroup, ParamId, ParamSet, Tape, Var};
use crate::checkpoint;
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::spiking::{lif_layer, LifConfig, SpikeFn};
use crate::tensor::{Real, Tensor};

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;
const KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageSpec {
    /// Output channels of each conv block.
    pub channels: Vec<usize>,
    /// Halve the spatial size at the end of the stage.
    pub pool: bool,
}

impl StageSpec {
    pub fn new(channels: &[usize], pool: bool) -> Self {
        Self {
            channels: channels.to_vec(),
            pool,
        }
    }

    pub fn out_channels(&self) -> usize {
        *self.channels.last().unwrap_or(&0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_channels: usize,
    /// Side of the square input.
    pub input_size: usize,
    pub num_classes: usize,
    pub stages: Vec<StageSpec>,
    /// Index of the stage whose output spikes feed the weak classifier.
    pub attach_stage: usize,
    /// Conv width of the weak classifier; defaults to the tapped stage's
    /// channel count.
    pub weak_channels: Option<usize>,
}

impl NetworkSpec {
    /// Four-stage VGG-style network: `[64] [128] [128, pool] [256, pool]`
    /// with the weak classifier after the third stage.
    pub fn vgg_mini(input_channels: usize, input_size: usize, num_classes: usize) -> Self {
        Self {
            input_channels,
            input_size,
            num_classes,
            stages: vec![
                StageSpec::new(&[64], false),
                StageSpec::new(&[128], false),
                StageSpec::new(&[128], true),
                StageSpec::new(&[256], true),
            ],
            attach_stage: 2,
            weak_channels: None,
        }
    }

    /// Divide every channel width by `divisor` (at least one channel).
    pub fn narrowed(mut self, divisor: usize) -> Self {
        let d = divisor.max(1);
        for stage in &mut self.stages {
            for c in &mut stage.channels {
                *c = (*c / d).max(1);
            }
        }
        if let Some(w) = self.weak_channels.as_mut() {
            *w = (*w / d).max(1);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.stages.is_empty() {
            return bad("network needs at least one stage".into());
        }
        if self.input_channels == 0 || self.input_size == 0 {
            return bad("input channels and size must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.attach_stage == 0 || self.attach_stage + 1 >= self.stages.len() {
            return bad(format!(
                "attach_stage {} must be strictly interior to {} stages",
                self.attach_stage,
                self.stages.len()
            ));
        }
        if self.weak_channels == Some(0) {
            return bad("weak classifier channels must be positive".into());
        }
        let mut size = self.input_size;
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.channels.is_empty() || stage.channels.contains(&0) {
                return bad(format!("stage {i} needs positive channel counts, got {:?}", stage.channels));
            }
            if stage.pool {
                if size < 2 {
                    return bad(format!("stage {i} pools a {size}x{size} map"));
                }
                size /= 2;
            }
        }
        Ok(())
    }

    /// Spatial side of stage `index`'s output.
    pub fn stage_size(&self, index: usize) -> usize {
        self.stages[..=index]
            .iter()
            .fold(self.input_size, |s, st| if st.pool { s / 2 } else { s })
    }

    pub fn to_config(&self, cfg: &mut KvConfig) {
        cfg.set("network.input_channels", self.input_channels);
        cfg.set("network.input_size", self.input_size);
        cfg.set("network.num_classes", self.num_classes);
        cfg.set("network.stages", format_stages(&self.stages));
        cfg.set("network.attach_stage", self.attach_stage);
        if let Some(w) = self.weak_channels {
            cfg.set("network.weak_channels", w);
        }
    }

    /// Read `network.*` keys; missing keys fall back to `defaults`.
    pub fn from_config(cfg: &KvConfig, defaults: &NetworkSpec) -> Result<Self> {
        let stages = match cfg.get_str("network.stages") {
            Some(s) => parse_stages(s)?,
            None => defaults.stages.clone(),
        };
        let spec = Self {
            input_channels: cfg.get_or("network.input_channels", defaults.input_channels)?,
            input_size: cfg.get_or("network.input_size", defaults.input_size)?,
            num_classes: cfg.get_or("network.num_classes", defaults.num_classes)?,
            stages,
            attach_stage: cfg.get_or("network.attach_stage", defaults.attach_stage)?,
            weak_channels: cfg.get_opt("network.weak_channels")?.or(defaults.weak_channels),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// `64;128;128,pool;256,pool`: stages separated by `;`, channel counts by
/// `,`, with an optional trailing `pool`.
pub fn parse_stages(text: &str) -> Result<Vec<StageSpec>> {
    text.split(';')
        .map(|stage| {
            let mut channels = Vec::new();
            let mut pool = false;
            for tok in stage.split(',').map(str::trim) {
                if tok == "pool" {
                    pool = true;
                } else if pool {
                    return Err(Error::Config(format!("`pool` must end the stage in `{stage}`")));
                } else {
                    channels.push(
                        tok.parse::<usize>()
                            .map_err(|_| Error::Config(format!("bad channel count `{tok}` in stages")))?,
                    );
                }
            }
            Ok(StageSpec { channels, pool })
        })
        .collect()
}

pub fn format_stages(stages: &[StageSpec]) -> String {
    stages
        .iter()
        .map(|s| {
            let mut parts: Vec<String> = s.channels.iter().map(usize::to_string).collect();
            if s.pool {
                parts.push("pool".into());
            }
            parts.join(",")
        })
        .collect::<Vec<_>>()
        .join(";")
}

/// Network input for one batch.
#[derive(Clone, Debug)]
pub enum Input<F> {
    /// `[batch, C, H, W]` analog images, presented at every timestep.
    Static(Tensor<F>),
    /// `[frames, batch, C, H, W]` per-timestep frames; the first `T` are used.
    Frames(Tensor<F>),
}

impl<F: Real> Input<F> {
    pub fn batch(&self) -> usize {
        match self {
            Input::Static(t) => t.shape()[0],
            Input::Frames(t) => t.shape()[1],
        }
    }

    fn sample_shape(&self) -> &[usize] {
        match self {
            Input::Static(t) => &t.shape()[1..],
            Input::Frames(t) => &t.shape()[2..],
        }
    }

    /// `[steps * batch, C, H, W]`, time-major.
    fn unroll(&self, steps: usize) -> Result<Tensor<F>> {
        match self {
            Input::Static(t) => {
                let mut shape = t.shape().to_vec();
                let mut data = Vec::with_capacity(t.len() * steps);
                for _ in 0..steps {
                    data.extend_from_slice(t.data());
                }
                shape[0] *= steps;
                Tensor::new(&shape, data)
            }
            Input::Frames(t) => {
                let available = t.shape()[0];
                if available < steps {
                    return Err(Error::invalid(
                        "forward",
                        format!("event input has {available} frames but {steps} timesteps are required"),
                    ));
                }
                let mut shape = t.shape()[1..].to_vec();
                shape[0] *= steps;
                t.narrow0(0, steps)?.reshape(&shape)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; nothing is mutated except the step counter.
    Eval,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Keep a copy of every stage's spike output.
    pub record_spikes: bool,
    pub spike_fn: SpikeFn,
}

/// Result of one unrolled forward pass.
#[derive(Debug)]
pub struct ForwardRecord<F> {
    /// `[T, batch, classes]`.
    pub final_logits: Var,
    /// `[T, batch, classes]`; absent once the weak head is stripped.
    pub weak_logits: Option<Var>,
    /// Per-stage spikes `[T, batch, C, H, W]` when requested.
    pub stage_spikes: Vec<Tensor<F>>,
    pub steps: usize,
    pub batch: usize,
}

#[derive(Clone, Debug)]
struct BatchNormLayer {
    gamma: ParamId,
    beta: ParamId,
    running_mean: usize,
    running_var: usize,
}

#[derive(Clone, Debug)]
struct ConvBlock {
    weight: ParamId,
    bn: BatchNormLayer,
    pool: bool,
}

#[derive(Clone, Debug)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct WeakHead {
    conv: ConvBlock,
    fc: Dense,
}

#[derive(Clone, Debug)]
pub struct Network<F: Real> {
    spec: NetworkSpec,
    lif: LifConfig,
    params: ParamSet<F>,
    buffers: IndexMap<String, Tensor<F>>,
    stages: Vec<Vec<ConvBlock>>,
    head: Dense,
    weak: Option<WeakHead>,
    timesteps_run: u64,
}

struct Builder<'a, F: Real> {
    params: ParamSet<F>,
    buffers: IndexMap<String, Tensor<F>>,
    rng: &'a mut rng::Rng,
}

impl<F: Real> Builder<'_, F> {
    fn kaiming(&mut self, name: &str, shape: &[usize], fan_in: usize, group: ParamGroup) -> Result<ParamId> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| F::of(self.rng.random_range(-bound..bound))).collect();
        self.params.insert(name, Tensor::new(shape, data)?, true, group)
    }

    fn batchnorm(&mut self, prefix: &str, channels: usize, group: ParamGroup) -> Result<BatchNormLayer> {
        let gamma = self
            .params
            .insert(&format!("{prefix}.weight"), Tensor::full(&[channels], F::one()), true, group)?;
        // no weight decay on the shift
        let beta = self
            .params
            .insert(&format!("{prefix}.bias"), Tensor::zeros(&[channels]), false, group)?;
        let (running_mean, _) = self
            .buffers
            .insert_full(format!("{prefix}.running_mean"), Tensor::zeros(&[channels]));
        let (running_var, _) = self
            .buffers
            .insert_full(format!("{prefix}.running_var"), Tensor::full(&[channels], F::one()));
        Ok(BatchNormLayer {
            gamma,
            beta,
            running_mean,
            running_var,
        })
    }

    fn conv_block(&mut self, prefix: &str, cin: usize, cout: usize, pool: bool, group: ParamGroup) -> Result<ConvBlock> {
        let weight = self.kaiming(
            &format!("{prefix}.conv.weight"),
            &[cout, cin, KERNEL, KERNEL],
            cin * KERNEL * KERNEL,
            group,
        )?;
        let bn = self.batchnorm(&format!("{prefix}.bn"), cout, group)?;
        Ok(ConvBlock { weight, bn, pool })
    }

    fn dense(&mut self, prefix: &str, fin: usize, fout: usize, group: ParamGroup) -> Result<Dense> {
        let weight = self.kaiming(&format!("{prefix}.weight"), &[fout, fin], fin, group)?;
        let bias = self
            .params
            .insert(&format!("{prefix}.bias"), Tensor::zeros(&[fout]), true, group)?;
        Ok(Dense { weight, bias })
    }
}

/// Build a network with deterministic initialization: Kaiming-uniform
/// (fan-in) conv and fc weights, zero fc bias, unit BN scale, zero BN shift.
pub fn build_network<F: Real>(spec: &NetworkSpec, lif: &LifConfig, seed: u64) -> Result<Network<F>> {
    spec.validate()?;
    lif.validate()?;
    let mut rng = rng::stream(seed, rng::streams::INIT);
    let mut b = Builder {
        params: ParamSet::new(),
        buffers: IndexMap::new(),
        rng: &mut rng,
    };
    let mut cin = spec.input_channels;
    let mut stages = Vec::with_capacity(spec.stages.len());
    for (s, stage) in spec.stages.iter().enumerate() {
        let mut blocks = Vec::with_capacity(stage.channels.len());
        for (k, &cout) in stage.channels.iter().enumerate() {
            let pool = stage.pool && k + 1 == stage.channels.len();
            blocks.push(b.conv_block(&format!("stage{s}.block{k}"), cin, cout, pool, ParamGroup::Main)?);
            cin = cout;
        }
        stages.push(blocks);
    }
    let head = b.dense("head.fc", cin, spec.num_classes, ParamGroup::Main)?;
    // weak parameters come last so stripping them keeps the main ids valid
    let tap_ch = spec.stages[spec.attach_stage].out_channels();
    let weak_ch = spec.weak_channels.unwrap_or(tap_ch);
    let weak = WeakHead {
        conv: b.conv_block("weak", tap_ch, weak_ch, false, ParamGroup::Weak)?,
        fc: b.dense("weak.fc", weak_ch, spec.num_classes, ParamGroup::Weak)?,
    };
    Ok(Network {
        spec: spec.clone(),
        lif: *lif,
        params: b.params,
        buffers: b.buffers,
        stages,
        head,
        weak: Some(weak),
        timesteps_run: 0,
    })
}

impl<F: Real> Network<F> {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn lif(&self) -> &LifConfig {
        &self.lif
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    pub fn buffers(&self) -> &IndexMap<String, Tensor<F>> {
        &self.buffers
    }

    pub fn has_weak_head(&self) -> bool {
        self.weak.is_some()
    }

    /// Total timesteps simulated by this instance.
    pub fn timesteps_run(&self) -> u64 {
        self.timesteps_run
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Drop the weak classifier and its parameters and buffers.
    pub fn strip_weak_classifier(mut self) -> Self {
        self.params.remove_group(ParamGroup::Weak);
        self.buffers.retain(|k, _| !k.starts_with("weak."));
        self.weak = None;
        self
    }

    pub fn forward(&mut self, tape: &mut Tape<F>, input: &Input<F>, steps: usize, mode: Mode) -> Result<ForwardRecord<F>> {
        self.forward_with(tape, input, steps, mode, ForwardOptions::default())
    }

    pub fn forward_with(
        &mut self,
        tape: &mut Tape<F>,
        input: &Input<F>,
        steps: usize,
        mode: Mode,
        opts: ForwardOptions,
    ) -> Result<ForwardRecord<F>> {
        if steps == 0 {
            return Err(Error::invalid("forward", "need at least one timestep"));
        }
        let expected = [self.spec.input_channels, self.spec.input_size, self.spec.input_size];
        if input.sample_shape() != expected {
            return Err(Error::shape("forward", &expected, input.sample_shape()));
        }
        let batch = input.batch();
        let mut x = tape.constant(input.unroll(steps)?)?;
        let mut stage_spikes = Vec::new();
        let mut weak_logits = None;
        for s in 0..self.stages.len() {
            for k in 0..self.stages[s].len() {
                let block = self.stages[s][k].clone();
                x = self.conv_block(tape, x, &block, steps, mode, opts.spike_fn)?;
            }
            if opts.record_spikes {
                let v = tape.value(x)?;
                let mut shape = vec![steps, batch];
                shape.extend_from_slice(&v.shape()[1..]);
                stage_spikes.push(v.clone().reshape(&shape)?);
            }
            if s == self.spec.attach_stage {
                if let Some(weak) = self.weak.clone() {
                    let h = self.conv_block(tape, x, &weak.conv, steps, mode, opts.spike_fn)?;
                    let pooled = tape.global_avgpool(h)?;
                    weak_logits = Some(self.dense(tape, pooled, &weak.fc, steps, batch)?);
                }
            }
        }
        let pooled = tape.global_avgpool(x)?;
        let head = self.head.clone();
        let final_logits = self.dense(tape, pooled, &head, steps, batch)?;
        self.timesteps_run += steps as u64;
        Ok(ForwardRecord {
            final_logits,
            weak_logits,
            stage_spikes,
            steps,
            batch,
        })
    }

    fn conv_block(
        &mut self,
        tape: &mut Tape<F>,
        x: Var,
        block: &ConvBlock,
        steps: usize,
        mode: Mode,
        spike_fn: SpikeFn,
    ) -> Result<Var> {
        let w = tape.param(&self.params, block.weight)?;
        let y = tape.conv2d(x, w, None)?;
        let mut y = self.batchnorm(tape, y, &block.bn, mode)?;
        if block.pool {
            y = tape.avgpool2d(y)?;
        }
        lif_layer(tape, y, steps, &self.lif, spike_fn)
    }

    fn batchnorm(&mut self, tape: &mut Tape<F>, x: Var, bn: &BatchNormLayer, mode: Mode) -> Result<Var> {
        let gamma = tape.param(&self.params, bn.gamma)?;
        let beta = tape.param(&self.params, bn.beta)?;
        let eps = F::of(BN_EPS);
        match mode {
            Mode::Train => {
                let (y, stats) = tape.batchnorm(x, gamma, beta, BnMode::Train, eps)?;
                let stats = stats.expect("train mode returns batch statistics");
                let m = F::of(BN_MOMENTUM);
                let unbias = F::of(stats.count as f64 / (stats.count.max(2) - 1) as f64);
                let (_, mean) = self.buffers.get_index_mut(bn.running_mean).expect("running mean");
                for (r, &b) in mean.data_mut().iter_mut().zip(&stats.mean) {
                    *r = (F::one() - m) * *r + m * b;
                }
                let (_, var) = self.buffers.get_index_mut(bn.running_var).expect("running var");
                for (r, &b) in var.data_mut().iter_mut().zip(&stats.var) {
                    *r = (F::one() - m) * *r + m * b * unbias;
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = self.buffers[bn.running_mean].data();
                let var = self.buffers[bn.running_var].data();
                let (y, _) = tape.batchnorm(x, gamma, beta, BnMode::Infer { mean, var }, eps)?;
                Ok(y)
            }
        }
    }

    fn dense(&self, tape: &mut Tape<F>, x: Var, fc: &Dense, steps: usize, batch: usize) -> Result<Var> {
        let w = tape.param(&self.params, fc.weight)?;
        let b = tape.param(&self.params, fc.bias)?;
        let y = tape.linear(x, w, Some(b))?;
        tape.reshape(y, &[steps, batch, self.spec.num_classes])
    }

    /// Every tensor that makes up the network state, in checkpoint order:
    /// parameters first, then running statistics.
    pub fn named_tensors(&self) -> Vec<(&str, &Tensor<F>)> {
        self.params
            .iter()
            .map(|(_, name, e)| (name, &e.tensor))
            .chain(self.buffers.iter().map(|(k, t)| (k.as_str(), t)))
            .collect()
    }

    /// Write `network.cfg`, `manifest.txt` and `tensors.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut cfg = KvConfig::default();
        self.spec.to_config(&mut cfg);
        cfg.set("neuron.tau", self.lif.tau);
        cfg.set("neuron.threshold", self.lif.threshold);
        cfg.set("neuron.surrogate_width", self.lif.surrogate_width);
        cfg.set("network.weak_head", self.weak.is_some());
        let cfg_path = dir.join("network.cfg");
        std::fs::write(&cfg_path, cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
        checkpoint::save(dir, &self.named_tensors())
    }

    /// Inverse of [`Network::save`]. Tensors stored at another precision
    /// are converted.
    pub fn load(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join("network.cfg");
        let cfg = KvConfig::load(&cfg_path)?;
        let defaults = NetworkSpec::vgg_mini(1, 1, 2);
        let spec = NetworkSpec::from_config(&cfg, &defaults)?;
        let dl = LifConfig::default();
        let lif = LifConfig::new(
            cfg.get_or("neuron.tau", dl.tau)?,
            cfg.get_or("neuron.threshold", dl.threshold)?,
            cfg.get_or("neuron.surrogate_width", dl.surrogate_width)?,
        )?;
        let mut net = build_network::<F>(&spec, &lif, 0)?;
        if !cfg.get_or("network.weak_head", true)? {
            net = net.strip_weak_classifier();
        }
        let stored = checkpoint::load::<F>(dir)?;
        let expected: Vec<String> = net.named_tensors().iter().map(|(n, _)| n.to_string()).collect();
        let found: Vec<&str> = stored.iter().map(|(n, _)| n.as_str()).collect();
        if expected.iter().map(String::as_str).ne(found.iter().copied()) {
            return Err(Error::format(
                dir.join("manifest.txt"),
                format!("tensor names {found:?} do not match the network {expected:?}"),
            ));
        }
        for (name, tensor) in stored {
            let slot = if let Some(id) = net.params.id(&name) {
                &mut net.params.get_mut(id).tensor
            } else {
                net.buffers.get_mut(&name).expect("name checked above")
            };
            if slot.shape() != tensor.shape() {
                return Err(Error::format(
                    dir.join("manifest.txt"),
                    format!("`{name}` has shape {:?}, network expects {:?}", tensor.shape(), slot.shape()),
                ));
            }
            *slot = tensor;
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            input_channels: 2,
            input_size: 8,
            num_classes: 3,
            stages: vec![
                StageSpec::new(&[4], false),
                StageSpec::new(&[4], true),
                StageSpec::new(&[6], true),
            ],
            attach_stage: 1,
            weak_channels: None,
        }
    }

    #[test]
    fn attach_stage_must_be_interior() {
        let mut spec = tiny_spec();
        spec.attach_stage = 0;
        assert!(build_network::<f64>(&spec, &LifConfig::default(), 0).is_err());
        spec.attach_stage = 2;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn stage_text_round_trip() {
        let stages = NetworkSpec::vgg_mini(2, 34, 10).stages;
        let text = format_stages(&stages);
        assert_eq!(text, "64;128;128,pool;256,pool");
        assert_eq!(parse_stages(&text).unwrap(), stages);
        assert!(parse_stages("64,pool,32").is_err());
        assert!(parse_stages("x").is_err());
    }

    #[test]
    fn forward_shapes() {
        let mut net = build_network::<f64>(&tiny_spec(), &LifConfig::default(), 3).unwrap();
        let mut tape = Tape::new();
        let input = Input::Static(Tensor::full(&[2, 2, 8, 8], 0.7));
        let opts = ForwardOptions {
            record_spikes: true,
            ..Default::default()
        };
        let rec = net.forward_with(&mut tape, &input, 3, Mode::Train, opts).unwrap();
        assert_eq!(tape.shape(rec.final_logits).unwrap(), &[3, 2, 3]);
        assert_eq!(tape.shape(rec.weak_logits.unwrap()).unwrap(), &[3, 2, 3]);
        assert_eq!(rec.stage_spikes[0].shape(), &[3, 2, 4, 8, 8]);
        assert_eq!(rec.stage_spikes[2].shape(), &[3, 2, 6, 2, 2]);
        assert_eq!(net.timesteps_run(), 3);
    }

    #[test]
    fn frames_must_cover_steps() {
        let mut net = build_network::<f64>(&tiny_spec(), &LifConfig::default(), 3).unwrap();
        let mut tape = Tape::new();
        let input = Input::Frames(Tensor::zeros(&[2, 2, 2, 8, 8]));
        let err = net.forward(&mut tape, &input, 4, Mode::Eval).unwrap_err();
        assert!(err.to_string().contains("2 frames but 4"), "{err}");
    }

    #[test]
    fn stripping_removes_weak_suffix() {
        let net = build_network::<f32>(&tiny_spec(), &LifConfig::default(), 1).unwrap();
        let main = net.params().numel_in(ParamGroup::Main);
        let stripped = net.strip_weak_classifier();
        assert_eq!(stripped.params().numel(), main);
        assert!(stripped.buffers().keys().all(|k| !k.starts_with("weak.")));
    }
}
