//! The merged run configuration: config file, then `--set` overrides,
//! then named flags.

use std::path::{Path, PathBuf};

use spikedistill::config::KvConfig;
use spikedistill::distill::DistillConfig;
use spikedistill::model::{format_stages, parse_stages, NetworkSpec, StageSpec};
use spikedistill::spiking::LifConfig;
use spikedistill::train::TrainConfig;
use spikedistill::{Error, Result};

pub const KNOWN_KEYS: &[&str] = &[
    "data.kind",
    "data.train_images",
    "data.train_labels",
    "data.test_images",
    "data.test_labels",
    "data.train_dir",
    "data.test_dir",
    "data.window_ms",
    "data.size",
    "data.num_classes",
    "data.train_n",
    "data.test_n",
    "data.noise",
    "data.seed",
    "data.split_seed",
    "network.stages",
    "network.attach_stage",
    "network.weak_channels",
    "network.width_divisor",
    "neuron.tau",
    "neuron.threshold",
    "neuron.surrogate_width",
    "distill.student_steps",
    "distill.teacher_steps",
    "distill.alpha",
    "distill.beta",
    "distill.detach_tsd_teacher",
    "distill.detach_ssd_teacher",
    "distill.weak_task_loss",
    "distill.ssd_full_teacher",
    "distill.separate_teacher_pass",
    "train.lr",
    "train.momentum",
    "train.weight_decay",
    "train.epochs",
    "train.batch_size",
    "train.lr_step",
    "train.lr_gamma",
    "train.seed",
    "train.augment",
    "output.dir",
];

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// IDX image and label archives; without a test pair the training
    /// archive is split 9:1.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test: Option<(PathBuf, PathBuf)>,
    },
    /// Directories of `.evst` streams; without a test directory the
    /// training streams are split 9:1.
    Evst { train_dir: PathBuf, test_dir: Option<PathBuf> },
    Bars { train_n: usize, test_n: usize, noise: f64, seed: u64 },
    MovingBar { train_n: usize, test_n: usize, noise: f64, seed: u64 },
}

impl DataSource {
    pub fn is_events(&self) -> bool {
        matches!(self, DataSource::Evst { .. } | DataSource::MovingBar { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub window_ms: f64,
    /// Square side frames or bars are rendered at; images keep their size.
    pub size: Option<usize>,
    pub num_classes: Option<usize>,
    pub split_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkOptions {
    pub stages: Vec<StageSpec>,
    pub attach_stage: usize,
    pub weak_channels: Option<usize>,
    pub width_divisor: usize,
}

impl NetworkOptions {
    /// The network for inputs of `[channels, size, size]` and `classes`.
    pub fn spec(&self, channels: usize, size: usize, classes: usize) -> Result<NetworkSpec> {
        let spec = NetworkSpec {
            input_channels: channels,
            input_size: size,
            num_classes: classes,
            stages: self.stages.clone(),
            attach_stage: self.attach_stage,
            weak_channels: self.weak_channels,
        }
        .narrowed(self.width_divisor);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub network: NetworkOptions,
    pub neuron: LifConfig,
    pub distill: DistillConfig,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

fn required_path(cfg: &KvConfig, key: &str) -> Result<PathBuf> {
    cfg.get_str(key)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config(format!("`{key}` is required for data.kind={}", cfg.get_str("data.kind").unwrap_or(""))))
}

fn opt_path(cfg: &KvConfig, key: &str) -> Option<PathBuf> {
    cfg.get_str(key).map(PathBuf::from)
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

impl RunConfig {
    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        cfg.reject_unknown(KNOWN_KEYS)?;
        let kind = cfg.get_str("data.kind").unwrap_or("moving-bar");
        let data_seed = cfg.get_or("data.seed", 1u64)?;
        let noise = cfg.get_or("data.noise", 1.0f64)?;
        let source = match kind {
            "idx" => DataSource::Idx {
                train_images: required_path(cfg, "data.train_images")?,
                train_labels: required_path(cfg, "data.train_labels")?,
                test: match (opt_path(cfg, "data.test_images"), opt_path(cfg, "data.test_labels")) {
                    (Some(i), Some(l)) => Some((i, l)),
                    (None, None) => None,
                    _ => {
                        return Err(Error::Config(
                            "data.test_images and data.test_labels must be given together".into(),
                        ))
                    }
                },
            },
            "evst" => DataSource::Evst {
                train_dir: required_path(cfg, "data.train_dir")?,
                test_dir: opt_path(cfg, "data.test_dir"),
            },
            "bars" => DataSource::Bars {
                train_n: cfg.get_or("data.train_n", 2000)?,
                test_n: cfg.get_or("data.test_n", 400)?,
                noise,
                seed: data_seed,
            },
            "moving-bar" => DataSource::MovingBar {
                train_n: cfg.get_or("data.train_n", 2000)?,
                test_n: cfg.get_or("data.test_n", 400)?,
                noise,
                seed: data_seed,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown data.kind `{other}` (expected idx, evst, bars or moving-bar)"
                )))
            }
        };
        let default_size = match source {
            DataSource::Bars { .. } | DataSource::MovingBar { .. } => Some(16),
            _ => None,
        };
        let data = DataConfig {
            window_ms: cfg.get_or("data.window_ms", 10.0)?,
            size: cfg.get_opt("data.size")?.or(default_size),
            num_classes: cfg.get_opt("data.num_classes")?,
            split_seed: cfg.get_or("data.split_seed", 0)?,
            source,
        };
        if !(data.window_ms > 0.0 && data.window_ms.is_finite()) {
            return Err(Error::Config(format!("data.window_ms must be positive, got {}", data.window_ms)));
        }
        if data.size == Some(0) {
            return Err(Error::Config("data.size must be positive".into()));
        }

        let preset = NetworkSpec::vgg_mini(1, 1, 2);
        let network = NetworkOptions {
            stages: match cfg.get_str("network.stages") {
                Some(s) => parse_stages(s)?,
                None => preset.stages,
            },
            attach_stage: cfg.get_or("network.attach_stage", preset.attach_stage)?,
            weak_channels: cfg.get_opt("network.weak_channels")?,
            width_divisor: cfg.get_or("network.width_divisor", 1)?,
        };
        if network.width_divisor == 0 {
            return Err(Error::Config("network.width_divisor must be positive".into()));
        }

        let dl = LifConfig::default();
        let neuron = LifConfig::new(
            cfg.get_or("neuron.tau", dl.tau)?,
            cfg.get_or("neuron.threshold", dl.threshold)?,
            cfg.get_or("neuron.surrogate_width", dl.surrogate_width)?,
        )?;

        let dd = DistillConfig::default();
        let distill = DistillConfig {
            student_steps: cfg.get_or("distill.student_steps", dd.student_steps)?,
            teacher_steps: cfg.get_or("distill.teacher_steps", dd.teacher_steps)?,
            alpha: cfg.get_or("distill.alpha", dd.alpha)?,
            beta: cfg.get_or("distill.beta", dd.beta)?,
            detach_tsd_teacher: cfg.get_or("distill.detach_tsd_teacher", dd.detach_tsd_teacher)?,
            detach_ssd_teacher: cfg.get_or("distill.detach_ssd_teacher", dd.detach_ssd_teacher)?,
            weak_task_loss: cfg.get_or("distill.weak_task_loss", dd.weak_task_loss)?,
            ssd_full_teacher: cfg.get_or("distill.ssd_full_teacher", dd.ssd_full_teacher)?,
            separate_teacher_pass: cfg.get_or("distill.separate_teacher_pass", dd.separate_teacher_pass)?,
        };
        distill.validate()?;

        let dt = if data.source.is_events() { TrainConfig::for_events() } else { TrainConfig::default() };
        let train = TrainConfig {
            lr: cfg.get_or("train.lr", dt.lr)?,
            momentum: cfg.get_or("train.momentum", dt.momentum)?,
            weight_decay: cfg.get_or("train.weight_decay", dt.weight_decay)?,
            epochs: cfg.get_or("train.epochs", dt.epochs)?,
            batch_size: cfg.get_or("train.batch_size", dt.batch_size)?,
            lr_step: cfg.get_or("train.lr_step", dt.lr_step)?,
            lr_gamma: cfg.get_or("train.lr_gamma", dt.lr_gamma)?,
            seed: cfg.get_or("train.seed", dt.seed)?,
            augment: cfg.get_or("train.augment", dt.augment)?,
        };
        train.validate()?;

        Ok(Self {
            data,
            network,
            neuron,
            distill,
            train,
            out_dir: cfg.get_str("output.dir").map_or_else(|| PathBuf::from("run"), PathBuf::from),
        })
    }

    /// Every effective setting, with paths made absolute, in a form
    /// [`RunConfig::from_kv`] reads back unchanged.
    pub fn to_kv(&self) -> KvConfig {
        let mut c = KvConfig::default();
        let d = &self.data;
        let path = |p: &Path| absolute(p).display().to_string();
        match &d.source {
            DataSource::Idx {
                train_images,
                train_labels,
                test,
            } => {
                c.set("data.kind", "idx");
                c.set("data.train_images", path(train_images));
                c.set("data.train_labels", path(train_labels));
                if let Some((i, l)) = test {
                    c.set("data.test_images", path(i));
                    c.set("data.test_labels", path(l));
                }
            }
            DataSource::Evst { train_dir, test_dir } => {
                c.set("data.kind", "evst");
                c.set("data.train_dir", path(train_dir));
                if let Some(t) = test_dir {
                    c.set("data.test_dir", path(t));
                }
            }
            DataSource::Bars {
                train_n,
                test_n,
                noise,
                seed,
            }
            | DataSource::MovingBar {
                train_n,
                test_n,
                noise,
                seed,
            } => {
                let kind = if matches!(d.source, DataSource::Bars { .. }) { "bars" } else { "moving-bar" };
                c.set("data.kind", kind);
                c.set("data.train_n", train_n);
                c.set("data.test_n", test_n);
                c.set("data.noise", noise);
                c.set("data.seed", seed);
            }
        }
        c.set("data.window_ms", d.window_ms);
        if let Some(s) = d.size {
            c.set("data.size", s);
        }
        if let Some(k) = d.num_classes {
            c.set("data.num_classes", k);
        }
        c.set("data.split_seed", d.split_seed);

        c.set("network.stages", format_stages(&self.network.stages));
        c.set("network.attach_stage", self.network.attach_stage);
        if let Some(w) = self.network.weak_channels {
            c.set("network.weak_channels", w);
        }
        c.set("network.width_divisor", self.network.width_divisor);

        c.set("neuron.tau", self.neuron.tau);
        c.set("neuron.threshold", self.neuron.threshold);
        c.set("neuron.surrogate_width", self.neuron.surrogate_width);

        let s = &self.distill;
        c.set("distill.student_steps", s.student_steps);
        c.set("distill.teacher_steps", s.teacher_steps);
        c.set("distill.alpha", s.alpha);
        c.set("distill.beta", s.beta);
        c.set("distill.detach_tsd_teacher", s.detach_tsd_teacher);
        c.set("distill.detach_ssd_teacher", s.detach_ssd_teacher);
        c.set("distill.weak_task_loss", s.weak_task_loss);
        c.set("distill.ssd_full_teacher", s.ssd_full_teacher);
        c.set("distill.separate_teacher_pass", s.separate_teacher_pass);

        let t = &self.train;
        c.set("train.lr", t.lr);
        c.set("train.momentum", t.momentum);
        c.set("train.weight_decay", t.weight_decay);
        c.set("train.epochs", t.epochs);
        c.set("train.batch_size", t.batch_size);
        c.set("train.lr_step", t.lr_step);
        c.set("train.lr_gamma", t.lr_gamma);
        c.set("train.seed", t.seed);
        c.set("train.augment", t.augment);

        c.set("output.dir", path(&self.out_dir));
        c
    }
}

/// Parse `key=value` pairs from repeated `--set` flags.
pub fn parse_overrides(pairs: &[String]) -> Result<KvConfig> {
    KvConfig::parse(&pairs.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let rc = RunConfig::from_kv(&KvConfig::default()).unwrap();
        assert!(matches!(rc.data.source, DataSource::MovingBar { .. }));
        assert_eq!(rc.train.weight_decay, TrainConfig::for_events().weight_decay);
        let again = RunConfig::from_kv(&rc.to_kv()).unwrap();
        assert_eq!(again.to_kv(), rc.to_kv());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let cfg = KvConfig::parse("distill.gamma=1").unwrap();
        let err = RunConfig::from_kv(&cfg).unwrap_err().to_string();
        assert!(err.contains("distill.gamma"), "{err}");
    }

    #[test]
    fn idx_requires_paths() {
        let cfg = KvConfig::parse("data.kind=idx").unwrap();
        let err = RunConfig::from_kv(&cfg).unwrap_err().to_string();
        assert!(err.contains("data.train_images"), "{err}");
    }

    #[test]
    fn invariants_checked_after_merge() {
        let cfg = KvConfig::parse("distill.student_steps=4\ndistill.teacher_steps=2").unwrap();
        assert!(RunConfig::from_kv(&cfg).is_err());
        let cfg = KvConfig::parse("neuron.threshold=-1").unwrap();
        assert!(RunConfig::from_kv(&cfg).is_err());
    }

    #[test]
    fn network_options_build_spec() {
        let cfg = KvConfig::parse("network.width_divisor=16").unwrap();
        let rc = RunConfig::from_kv(&cfg).unwrap();
        let spec = rc.network.spec(2, 16, 4).unwrap();
        assert_eq!(spec.stages[0].channels, vec![4]);
        assert_eq!(spec.num_classes, 4);
    }
}
