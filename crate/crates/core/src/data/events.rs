//! Event streams, the EVST container and windowed frame integration.
//!
//! EVST layout, little-endian:
//!
//! ```text
//! header (16 bytes): b"EVST" | version u16 | width u16 | height u16 | label u16 | count u32
//! record ( 9 bytes): t_us u32 | x u16 | y u16 | p u8
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"EVST";
pub const VERSION: u16 = 1;
const HEADER: usize = 16;
const RECORD: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub t_us: u32,
    pub x: u16,
    pub y: u16,
    /// 0 or 1.
    pub p: u8,
}

/// Time-ordered events of one sample. Timestamps are non-decreasing and
/// every event lies on the sensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    events: Vec<Event>,
    width: u16,
    height: u16,
    label: u16,
}

impl EventStream {
    pub fn new(events: Vec<Event>, width: u16, height: u16, label: u16) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("event_stream", "sensor dimensions must be positive"));
        }
        for (i, e) in events.iter().enumerate() {
            if e.x >= width || e.y >= height {
                return Err(Error::invalid(
                    "event_stream",
                    format!("event {i} at ({}, {}) is outside the {width}x{height} sensor", e.x, e.y),
                ));
            }
            if e.p > 1 {
                return Err(Error::invalid("event_stream", format!("event {i} has polarity {}", e.p)));
            }
            if i > 0 && e.t_us < events[i - 1].t_us {
                return Err(Error::invalid("event_stream", format!("timestamps decrease at event {i}")));
            }
        }
        Ok(Self {
            events,
            width,
            height,
            label,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn label(&self) -> u16 {
        self.label
    }

    /// Time from 0 to just past the last event, in microseconds.
    pub fn duration_us(&self) -> u64 {
        self.events.last().map_or(0, |e| e.t_us as u64 + 1)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + RECORD * self.events.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.label.to_le_bytes());
        out.extend_from_slice(&(self.events.len() as u32).to_le_bytes());
        for e in &self.events {
            out.extend_from_slice(&e.t_us.to_le_bytes());
            out.extend_from_slice(&e.x.to_le_bytes());
            out.extend_from_slice(&e.y.to_le_bytes());
            out.push(e.p);
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < HEADER {
            return Err(Error::format(path, format!("truncated: {} bytes, header needs {HEADER}", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::format(path, "missing EVST magic"));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let version = u16_at(4);
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let expected = HEADER + RECORD * count;
        if bytes.len() != expected {
            return Err(Error::format(
                path,
                format!("{count} events need {expected} bytes, file has {}", bytes.len()),
            ));
        }
        let events = bytes[HEADER..]
            .chunks_exact(RECORD)
            .map(|r| Event {
                t_us: u32::from_le_bytes(r[..4].try_into().expect("4 bytes")),
                x: u16::from_le_bytes([r[4], r[5]]),
                y: u16::from_le_bytes([r[6], r[7]]),
                p: r[8],
            })
            .collect();
        Self::new(events, u16_at(6), u16_at(8), u16_at(10)).map_err(|e| Error::format(path, e.to_string()))
    }
}

pub fn write_evst(path: &Path, stream: &EventStream) -> Result<()> {
    std::fs::write(path, stream.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_evst(path: &Path) -> Result<EventStream> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EventStream::decode(&bytes, path)
}

/// Integrated event counts `[T, 2, H, W]`; channel is polarity.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTensor {
    pub frames: Tensor<f32>,
    pub window_ms: f64,
    /// Sensor pixels per output bin along (y, x); fractional when the
    /// target does not divide the sensor.
    pub downsample: (f64, f64),
}

/// Bin events into `window_ms` time slices and, when `target_hw` is given,
/// into a `(height, width)` grid by summing counts. Frame `k` covers
/// `[k * window, (k + 1) * window)` from time 0; there are
/// `max(1, ceil(duration / window))` frames.
pub fn integrate_events(stream: &EventStream, window_ms: f64, target_hw: Option<(usize, usize)>) -> Result<FrameTensor> {
    if !(window_ms > 0.0 && window_ms.is_finite()) {
        return Err(Error::invalid("integrate_events", format!("window must be positive, got {window_ms} ms")));
    }
    let (sh, sw) = (stream.height as usize, stream.width as usize);
    let (th, tw) = target_hw.unwrap_or((sh, sw));
    if th == 0 || tw == 0 || th > sh || tw > sw {
        return Err(Error::invalid(
            "integrate_events",
            format!("target {th}x{tw} must be non-empty and no larger than the {sh}x{sw} sensor"),
        ));
    }
    let window_us = window_ms * 1000.0;
    let steps = ((stream.duration_us() as f64 / window_us).ceil() as usize).max(1);
    let mut counts = vec![0f32; steps * 2 * th * tw];
    for e in &stream.events {
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= sw || y >= sh {
            return Err(Error::invalid("integrate_events", format!("event at ({x}, {y}) is off the sensor")));
        }
        let t = ((e.t_us as f64 / window_us).floor() as usize).min(steps - 1);
        let (by, bx) = (y * th / sh, x * tw / sw);
        counts[((t * 2 + e.p as usize) * th + by) * tw + bx] += 1.0;
    }
    Ok(FrameTensor {
        frames: Tensor::new(&[steps, 2, th, tw], counts)?,
        window_ms,
        downsample: (sh as f64 / th as f64, sw as f64 / tw as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t_us: u32, x: u16, y: u16, p: u8) -> Event {
        Event { t_us, x, y, p }
    }

    #[test]
    fn hundred_ms_makes_ten_frames() {
        let s = EventStream::new(vec![ev(0, 0, 0, 0), ev(99_999, 1, 1, 1)], 4, 4, 0).unwrap();
        let f = integrate_events(&s, 10.0, None).unwrap();
        assert_eq!(f.frames.shape(), &[10, 2, 4, 4]);
    }

    #[test]
    fn single_event_lands_in_its_bin() {
        let s = EventStream::new(vec![ev(5_000, 3, 4, 1)], 8, 8, 0).unwrap();
        let f = integrate_events(&s, 10.0, None).unwrap();
        let d = f.frames.data();
        // [t=0][p=1][y=4][x=3]
        let at = (8 + 4) * 8 + 3;
        assert_eq!(d[at], 1.0);
        assert_eq!(d.iter().sum::<f32>(), 1.0);
    }

    #[test]
    fn empty_stream_gives_one_zero_frame() {
        let s = EventStream::new(vec![], 6, 4, 2).unwrap();
        let f = integrate_events(&s, 10.0, Some((2, 3))).unwrap();
        assert_eq!(f.frames.shape(), &[1, 2, 2, 3]);
        assert!(f.frames.data().iter().all(|&v| v == 0.0));
        assert_eq!(f.downsample, (2.0, 2.0));
    }

    #[test]
    fn rejects_off_sensor_and_unordered() {
        assert!(EventStream::new(vec![ev(0, 4, 0, 0)], 4, 4, 0).is_err());
        assert!(EventStream::new(vec![ev(5, 0, 0, 0), ev(4, 0, 0, 0)], 4, 4, 0).is_err());
        assert!(EventStream::new(vec![ev(0, 0, 0, 2)], 4, 4, 0).is_err());
    }

    #[test]
    fn evst_round_trip_and_truncation() {
        let s = EventStream::new(vec![ev(7, 1, 2, 1), ev(70_000, 3, 0, 0)], 4, 3, 9).unwrap();
        let bytes = s.encode();
        assert_eq!(bytes.len(), 16 + 2 * 9);
        let p = Path::new("s.evst");
        assert_eq!(EventStream::decode(&bytes, p).unwrap(), s);
        assert!(EventStream::decode(&bytes[..bytes.len() - 1], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(EventStream::decode(&bad, p).is_err());
    }
}
