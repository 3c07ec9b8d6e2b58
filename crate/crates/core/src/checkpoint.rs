//! Tensor archives: a text manifest plus one little-endian binary blob.
//!
//! `manifest.txt` has one line per tensor, `name dtype shape offset`, where
//! `shape` is `x`-separated (`scalar` for rank 0) and `offset` is the byte
//! offset into `tensors.bin`. Tensors are stored contiguously in manifest
//! order as IEEE-754 little-endian values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{numel, Real, Tensor};

pub const MANIFEST: &str = "manifest.txt";
pub const BLOB: &str = "tensors.bin";

fn format_shape(shape: &[usize]) -> String {
    if shape.is_empty() {
        "scalar".into()
    } else {
        shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }
}

fn parse_shape(text: &str) -> Option<Vec<usize>> {
    if text == "scalar" {
        return Some(Vec::new());
    }
    text.split('x').map(|d| d.parse().ok().filter(|&d| d > 0)).collect()
}

pub fn save<F: Real>(dir: &Path, tensors: &[(&str, &Tensor<F>)]) -> Result<()> {
    let mut manifest = String::new();
    let mut blob = Vec::new();
    for (name, t) in tensors {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::invalid("checkpoint", format!("tensor name `{name}` is empty or has whitespace")));
        }
        manifest.push_str(&format!("{name} {} {} {}\n", F::DTYPE, format_shape(t.shape()), blob.len()));
        for &v in t.data() {
            v.write_le(&mut blob);
        }
    }
    let mp = dir.join(MANIFEST);
    std::fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))?;
    let bp = dir.join(BLOB);
    std::fs::write(&bp, blob).map_err(|e| Error::io(&bp, e))
}

fn decode<G: Real, F: Real>(bytes: &[u8]) -> Vec<F> {
    bytes
        .chunks_exact(G::BYTES)
        .map(|c| F::of(G::read_le(c).to_f64().unwrap_or(f64::NAN)))
        .collect()
}

/// Read every tensor, converting to `F` when stored at another precision.
pub fn load<F: Real>(dir: &Path) -> Result<Vec<(String, Tensor<F>)>> {
    let mp = dir.join(MANIFEST);
    let bp = dir.join(BLOB);
    let manifest = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let blob = std::fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    let mut out = Vec::new();
    let mut expected_offset = 0usize;
    for (lineno, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::format(&mp, format!("line {}: {msg}", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, dtype, shape, offset] = fields[..] else {
            return Err(bad(format!("expected 4 fields, got {}", fields.len())));
        };
        let shape = parse_shape(shape).ok_or_else(|| bad(format!("bad shape `{shape}`")))?;
        let offset: usize = offset.parse().map_err(|_| bad(format!("bad offset `{offset}`")))?;
        if offset != expected_offset {
            return Err(bad(format!("offset {offset} does not follow previous tensor (expected {expected_offset})")));
        }
        let width = match dtype {
            "f32" => 4,
            "f64" => 8,
            other => return Err(bad(format!("unsupported dtype `{other}`"))),
        };
        let bytes = numel(&shape) * width;
        let end = offset + bytes;
        if end > blob.len() {
            return Err(Error::format(
                &bp,
                format!("blob has {} bytes, `{name}` needs bytes {offset}..{end}", blob.len()),
            ));
        }
        let raw = &blob[offset..end];
        let data = if width == 4 {
            decode::<f32, F>(raw)
        } else {
            decode::<f64, F>(raw)
        };
        out.push((name.to_string(), Tensor::new(&shape, data)?));
        expected_offset = end;
    }
    if expected_offset != blob.len() {
        return Err(Error::format(
            &bp,
            format!("blob has {} bytes but the manifest describes {expected_offset}", blob.len()),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_conversion() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::<f32>::from_f64(&[2, 3], &[1.0, -2.5, 3.25, 0.0, 1e-3, 7.0]).unwrap();
        let b = Tensor::<f32>::scalar(4.0);
        save(dir.path(), &[("a", &a), ("b", &b)]).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert_eq!(manifest, "a f32 2x3 0\nb f32 scalar 24\n");
        let back = load::<f32>(dir.path()).unwrap();
        assert_eq!(back[0].1, a);
        assert_eq!(back[1].1, b);
        let wide = load::<f64>(dir.path()).unwrap();
        assert_eq!(wide[0].1.data()[1], -2.5);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::<f64>::zeros(&[4]);
        save(dir.path(), &[("a", &a)]).unwrap();
        let bp = dir.path().join(BLOB);
        let mut bytes = std::fs::read(&bp).unwrap();
        bytes.truncate(20);
        std::fs::write(&bp, &bytes).unwrap();
        assert!(matches!(load::<f64>(dir.path()), Err(Error::Format { .. })));
        bytes.extend_from_slice(&[0; 20]);
        std::fs::write(&bp, &bytes).unwrap();
        assert!(matches!(load::<f64>(dir.path()), Err(Error::Format { .. })));
    }
}
