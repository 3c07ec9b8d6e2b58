//! Materialise the train and test splits named by a [`DataConfig`].

use std::path::{Path, PathBuf};

use spikedistill::data::events::{read_evst, EventStream};
use spikedistill::data::idx::load_idx;
use spikedistill::data::synth::{bars, moving_bar, BarsConfig, MovingBarConfig, MOVING_BAR_CLASSES};
use spikedistill::data::{split_indices, Dataset, FrameDataset, ImageDataset};
use spikedistill::rng::derive_seed;
use spikedistill::{Error, Result};

use crate::run_config::{DataConfig, DataSource};

pub enum Splits {
    Images { train: ImageDataset, test: ImageDataset },
    Frames { train: FrameDataset, test: FrameDataset },
}

/// Run `$body` with `$train` and `$test` bound to the concrete datasets.
macro_rules! with_splits {
    ($splits:expr, |$train:ident, $test:ident| $body:expr) => {
        match $splits {
            $crate::datasets::Splits::Images { train: $train, test: $test } => $body,
            $crate::datasets::Splits::Frames { train: $train, test: $test } => $body,
        }
    };
}
pub(crate) use with_splits;

impl Splits {
    /// `[C, H, W]` of one sample and the class count.
    pub fn geometry(&self) -> ([usize; 3], usize) {
        with_splits!(self, |train, _test| (train.sample_shape(), train.num_classes()))
    }

    /// Frames available per event sample, if the data are events.
    pub fn frames_available(&self) -> Option<usize> {
        match self {
            Splits::Images { .. } => None,
            Splits::Frames { train, test } => Some(train.min_frames().min(test.min_frames())),
        }
    }
}

fn not_found(path: &Path) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
    }
}

fn read_stream_dir(dir: &Path) -> Result<Vec<EventStream>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "evst"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("{}: no .evst files", dir.display())));
    }
    paths.iter().map(|p| read_evst(p)).collect()
}

fn max_label_plus_one(labels: impl Iterator<Item = usize>) -> usize {
    labels.max().map_or(0, |m| m + 1)
}

fn frames(streams: &[EventStream], cfg: &DataConfig, classes: usize) -> Result<FrameDataset> {
    let first = &streams[0];
    let target = match cfg.size {
        Some(s) => (s, s),
        None if first.width() == first.height() => (first.height() as usize, first.width() as usize),
        None => {
            return Err(Error::Config(format!(
                "sensor is {}x{}; set data.size to integrate onto a square grid",
                first.width(),
                first.height()
            )))
        }
    };
    FrameDataset::from_streams(streams, cfg.window_ms, Some(target), classes)
}

pub fn load(cfg: &DataConfig) -> Result<Splits> {
    match &cfg.source {
        DataSource::Idx {
            train_images,
            train_labels,
            test,
        } => {
            for p in [Some(train_images), Some(train_labels), test.as_ref().map(|t| &t.0), test.as_ref().map(|t| &t.1)]
                .into_iter()
                .flatten()
            {
                if !p.exists() {
                    return Err(not_found(p));
                }
            }
            let full = load_idx(train_images, train_labels, cfg.num_classes)?;
            let (train, test) = match test {
                Some((i, l)) => {
                    let test = load_idx(i, l, Some(cfg.num_classes.unwrap_or(full.num_classes())))?;
                    (full, test)
                }
                None => {
                    let (tr, te) = split_indices(full.len(), cfg.split_seed);
                    (full.subset(&tr)?, full.subset(&te)?)
                }
            };
            if let Some(s) = cfg.size {
                let [_, h, w] = train.sample_shape();
                if (h, w) != (s, s) {
                    return Err(Error::Config(format!("data.size={s} but images are {h}x{w}")));
                }
            }
            Ok(Splits::Images { train, test })
        }
        DataSource::Evst { train_dir, test_dir } => {
            for p in [Some(train_dir), test_dir.as_ref()].into_iter().flatten() {
                if !p.is_dir() {
                    return Err(not_found(p));
                }
            }
            let train_streams = read_stream_dir(train_dir)?;
            let test_streams = match test_dir {
                Some(d) => Some(read_stream_dir(d)?),
                None => None,
            };
            let classes = cfg.num_classes.unwrap_or_else(|| {
                max_label_plus_one(
                    train_streams
                        .iter()
                        .chain(test_streams.iter().flatten())
                        .map(|s| s.label() as usize),
                )
            });
            let all = frames(&train_streams, cfg, classes)?;
            let (train, test) = match test_streams {
                Some(t) => (all, frames(&t, cfg, classes)?),
                None => {
                    let (tr, te) = split_indices(all.len(), cfg.split_seed);
                    (all.subset(&tr)?, all.subset(&te)?)
                }
            };
            Ok(Splits::Frames { train, test })
        }
        &DataSource::Bars {
            train_n,
            test_n,
            noise,
            seed,
        } => {
            let bc = BarsConfig {
                classes: cfg.num_classes.unwrap_or(BarsConfig::default().classes),
                size: cfg.size.unwrap_or(BarsConfig::default().size),
            };
            Ok(Splits::Images {
                train: bars(train_n, noise, derive_seed(seed, 1), &bc)?,
                test: bars(test_n, noise, derive_seed(seed, 2), &bc)?,
            })
        }
        &DataSource::MovingBar {
            train_n,
            test_n,
            noise,
            seed,
        } => {
            if cfg.num_classes.is_some_and(|k| k != MOVING_BAR_CLASSES) {
                return Err(Error::Config(format!("moving-bar has exactly {MOVING_BAR_CLASSES} classes")));
            }
            let mc = MovingBarConfig::default();
            let train = moving_bar(train_n, noise, derive_seed(seed, 1), &mc)?;
            let test = moving_bar(test_n, noise, derive_seed(seed, 2), &mc)?;
            Ok(Splits::Frames {
                train: frames(&train, cfg, MOVING_BAR_CLASSES)?,
                test: frames(&test, cfg, MOVING_BAR_CLASSES)?,
            })
        }
    }
}
