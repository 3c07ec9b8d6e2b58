//! Deterministic synthetic datasets.
//!
//! - `bars`: one-channel images of a centered bar at angle `k * pi / L` for
//!   class `k`. Noise jitters position, angle and contrast and adds
//!   Gaussian pixel noise; at noise 0 every image of a class is identical.
//! - `moving-bar`: event streams of a bar sweeping across the sensor; the
//!   class is the direction (right, left, down, up). The polarity of the
//!   leading edge is drawn per sample, so a single frame does not reveal
//!   the direction and the order of frames must be used. Noise adds
//!   uniformly scattered events.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::data::events::{Event, EventStream};
use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    Bars,
    MovingBar,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bars" => Ok(Self::Bars),
            "moving-bar" => Ok(Self::MovingBar),
            other => Err(Error::Config(format!(
                "unknown synthetic dataset `{other}` (expected `bars` or `moving-bar`)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarsConfig {
    pub classes: usize,
    pub size: usize,
}

impl Default for BarsConfig {
    fn default() -> Self {
        Self { classes: 8, size: 16 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MovingBarConfig {
    pub sensor: u16,
    pub duration_ms: u32,
    /// Rows covered by the bar.
    pub bar_length: usize,
    /// Per-pixel, per-millisecond probability of an edge event.
    pub edge_prob: f64,
    /// Speed range in sensor pixels per millisecond.
    pub speed: (f64, f64),
}

impl Default for MovingBarConfig {
    fn default() -> Self {
        Self {
            sensor: 32,
            duration_ms: 80,
            bar_length: 12,
            edge_prob: 0.3,
            speed: (0.08, 0.15),
        }
    }
}

pub const MOVING_BAR_CLASSES: usize = 4;

/// Noise-free intensity of a bar at `angle` through `(cy, cx)`.
pub fn render_bar(size: usize, angle: f64, cy: f64, cx: f64, out: &mut [f32], amplitude: f32) {
    let (s, c) = angle.sin_cos();
    let half_len = 0.35 * size as f64;
    for y in 0..size {
        for x in 0..size {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let along = dx * c + dy * s;
            let across = (-dx * s + dy * c).abs();
            let v = if along.abs() <= half_len { (1.5 - across).clamp(0.0, 1.0) } else { 0.0 };
            out[y * size + x] = amplitude * v as f32;
        }
    }
}

pub fn bars(n: usize, noise: f64, seed: u64, cfg: &BarsConfig) -> Result<ImageDataset> {
    if n == 0 {
        return Err(Error::invalid("synth", "need at least one sample"));
    }
    if !(2..=16).contains(&cfg.classes) || cfg.size < 4 {
        return Err(Error::invalid(
            "synth",
            format!("bars needs 2..=16 classes and size >= 4, got {} and {}", cfg.classes, cfg.size),
        ));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid("synth", format!("noise must be >= 0, got {noise}")));
    }
    let mut rng = rng::stream(seed, rng::streams::DATA);
    let size = cfg.size;
    let pixel = Normal::new(0.0, noise.max(1e-12)).expect("positive std");
    let centre = (size as f64 - 1.0) / 2.0;
    let mut data = vec![0f32; n * size * size];
    let mut labels = Vec::with_capacity(n);
    for (i, img) in data.chunks_exact_mut(size * size).enumerate() {
        let label = i % cfg.classes;
        let mut angle = label as f64 * PI / cfg.classes as f64;
        let (mut cy, mut cx, mut amp) = (centre, centre, 1.0f32);
        if noise > 0.0 {
            let shift = noise * size as f64 / 4.0;
            cy += rng.random_range(-shift..=shift);
            cx += rng.random_range(-shift..=shift);
            let tilt = noise * PI / cfg.classes as f64 / 4.0;
            angle += rng.random_range(-tilt..=tilt);
            amp = rng.random_range(0.4..=1.0);
        }
        render_bar(size, angle, cy, cx, img, amp);
        if noise > 0.0 {
            for v in img.iter_mut() {
                *v = (*v + pixel.sample(&mut rng) as f32).clamp(0.0, 1.0);
            }
        }
        labels.push(label);
    }
    ImageDataset::new(Tensor::new(&[n, 1, size, size], data)?, labels, cfg.classes)
}

fn moving_bar_one(label: usize, noise: f64, cfg: &MovingBarConfig, rng: &mut Rng) -> Result<EventStream> {
    let s = cfg.sensor as f64;
    let dur = cfg.duration_ms as f64;
    let speed = rng.random_range(cfg.speed.0..=cfg.speed.1);
    let travel = speed * dur;
    let lo = 2.0;
    let hi = (s - 3.0 - travel).max(lo);
    let start = rng.random_range(lo..=hi);
    let half = cfg.bar_length as f64 / 2.0;
    let orth = rng.random_range(half + 1.0..=(s - half - 1.0).max(half + 1.0));
    let forward = label % 2 == 0;
    let leading_on = rng.random_bool(0.5);
    let sensor = cfg.sensor as usize;
    let clamp = |v: f64| (v.round().max(0.0) as usize).min(sensor - 1);

    let mut events = Vec::new();
    for k in 0..cfg.duration_ms {
        let progress = speed * (k as f64 + 0.5);
        let (pos, dir) = if forward { (start + progress, 1.0) } else { (start + travel - progress, -1.0) };
        let lead = clamp(pos + dir);
        let trail = clamp(pos - dir);
        let first_row = (orth - half).round() as usize;
        for j in first_row..first_row + cfg.bar_length {
            let j = j.min(sensor - 1);
            for (m, on) in [(lead, leading_on), (trail, !leading_on)] {
                if rng.random_bool(cfg.edge_prob) {
                    let (x, y) = if label < 2 { (m, j) } else { (j, m) };
                    events.push(Event {
                        t_us: k * 1000 + rng.random_range(0..1000),
                        x: x as u16,
                        y: y as u16,
                        p: on as u8,
                    });
                }
            }
        }
    }
    let extra = (noise * events.len() as f64).round() as usize;
    for _ in 0..extra {
        events.push(Event {
            t_us: rng.random_range(0..cfg.duration_ms * 1000),
            x: rng.random_range(0..cfg.sensor),
            y: rng.random_range(0..cfg.sensor),
            p: rng.random_range(0..2),
        });
    }
    events.sort_by_key(|e| e.t_us);
    EventStream::new(events, cfg.sensor, cfg.sensor, label as u16)
}

/// `n` balanced moving-bar streams; class `k` is direction
/// right, left, down, up for `k = 0..4`.
pub fn moving_bar(n: usize, noise: f64, seed: u64, cfg: &MovingBarConfig) -> Result<Vec<EventStream>> {
    if n == 0 {
        return Err(Error::invalid("synth", "need at least one sample"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid("synth", format!("noise must be >= 0, got {noise}")));
    }
    if cfg.sensor < 8 || cfg.bar_length + 4 > cfg.sensor as usize || cfg.duration_ms == 0 {
        return Err(Error::invalid("synth", "moving-bar sensor too small for the bar"));
    }
    let mut rng = rng::stream(seed, rng::streams::DATA);
    (0..n)
        .map(|i| moving_bar_one(i % MOVING_BAR_CLASSES, noise, cfg, &mut rng))
        .collect()
}

#[derive(Clone, Debug)]
pub enum SynthData {
    Images(ImageDataset),
    Events(Vec<EventStream>),
}

/// Either dataset with default geometry.
pub fn synth_dataset(kind: SynthKind, n: usize, noise: f64, seed: u64) -> Result<SynthData> {
    Ok(match kind {
        SynthKind::Bars => SynthData::Images(bars(n, noise, seed, &BarsConfig::default())?),
        SynthKind::MovingBar => SynthData::Events(moving_bar(n, noise, seed, &MovingBarConfig::default())?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::events::integrate_events;
    use crate::data::Dataset;

    #[test]
    fn unknown_kind_is_rejected() {
        assert!("spirals".parse::<SynthKind>().is_err());
        assert_eq!("moving-bar".parse::<SynthKind>().unwrap(), SynthKind::MovingBar);
    }

    #[test]
    fn bars_are_deterministic_and_balanced() {
        let cfg = BarsConfig::default();
        let a = bars(64, 0.3, 5, &cfg).unwrap();
        let b = bars(64, 0.3, 5, &cfg).unwrap();
        assert_eq!(a.images(), b.images());
        let c = bars(64, 0.3, 6, &cfg).unwrap();
        assert_ne!(a.images(), c.images());
        for k in 0..cfg.classes {
            assert_eq!(a.labels().iter().filter(|&&l| l == k).count(), 8);
        }
        assert!(a.images().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    fn centroid_x(frame: &[f32], h: usize, w: usize) -> f64 {
        let (mut m, mut sx) = (0.0, 0.0);
        for p in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    let v = frame[(p * h + y) * w + x] as f64;
                    m += v;
                    sx += v * x as f64;
                }
            }
        }
        sx / m
    }

    #[test]
    fn rightward_centroid_increases() {
        let streams = moving_bar(12, 0.0, 3, &MovingBarConfig::default()).unwrap();
        for s in streams.iter().filter(|s| s.label() == 0) {
            let f = integrate_events(s, 10.0, None).unwrap();
            let [t, _, h, w] = f.frames.shape()[..] else { unreachable!() };
            let cs: Vec<f64> = (0..t)
                .map(|k| centroid_x(&f.frames.data()[k * 2 * h * w..(k + 1) * 2 * h * w], h, w))
                .collect();
            assert!(cs.windows(2).all(|p| p[1] > p[0]), "{cs:?}");
        }
        assert!(streams.iter().all(|s| s.duration_us() > 70_000));
    }

    #[test]
    fn moving_bar_balanced() {
        let streams = moving_bar(40, 0.5, 1, &MovingBarConfig::default()).unwrap();
        for k in 0..4u16 {
            assert_eq!(streams.iter().filter(|s| s.label() == k).count(), 10);
        }
        let ds = crate::data::FrameDataset::from_streams(&streams, 10.0, Some((16, 16)), 4).unwrap();
        assert_eq!(ds.min_frames(), 8);
        assert_eq!(ds.sample_shape(), [2, 16, 16]);
    }
}
