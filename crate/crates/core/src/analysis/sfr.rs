//! Spike-firing-rate maps: per-location mean of a stage's spikes over
//! timesteps, batch and channels.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{ForwardOptions, Input, Mode, Network};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SfrMap {
    /// `[H, W]`, entries in `[0, 1]`.
    pub map: Tensor<f64>,
    /// Mean over the whole spike tensor.
    pub mean: f64,
}

/// Rates of stage `stage` over a `steps`-step inference run. Spikes are
/// counted exactly, so the map does not depend on batch order.
pub fn sfr_map<F: Real>(net: &mut Network<F>, input: &Input<F>, steps: usize, stage: usize) -> Result<SfrMap> {
    if stage >= net.num_stages() {
        return Err(Error::invalid(
            "sfr_map",
            format!("stage {stage} does not exist; the network has {}", net.num_stages()),
        ));
    }
    let mut tape = Tape::new();
    let opts = ForwardOptions {
        record_spikes: true,
        ..Default::default()
    };
    let rec = net.forward_with(&mut tape, input, steps, Mode::Eval, opts)?;
    let spikes = &rec.stage_spikes[stage];
    let [t, b, c, h, w] = spikes.shape()[..] else {
        return Err(Error::invalid("sfr_map", format!("unexpected spike shape {:?}", spikes.shape())));
    };
    let mut counts = vec![0u64; h * w];
    for plane in spikes.data().chunks_exact(h * w) {
        for (n, &s) in counts.iter_mut().zip(plane) {
            *n += (s > F::zero()) as u64;
        }
    }
    let per_location = (t * b * c) as f64;
    let total: u64 = counts.iter().sum();
    Ok(SfrMap {
        map: Tensor::new(&[h, w], counts.iter().map(|&n| n as f64 / per_location).collect())?,
        mean: total as f64 / (per_location * (h * w) as f64),
    })
}

/// Binary PGM (P5), 8-bit, scaled so the largest rate maps to 255.
pub fn encode_pgm(map: &Tensor<f64>) -> Vec<u8> {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let max = map.data().iter().cloned().fold(0.0, f64::max);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|&v| if max > 0.0 { (v / max * 255.0).round() as u8 } else { 0 }));
    out
}

/// One CSV row per image row of raw rates.
pub fn encode_csv(map: &Tensor<f64>) -> String {
    let w = map.shape()[1];
    let mut out = String::new();
    for row in map.data().chunks_exact(w) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

/// Write `<stem>.pgm` and `<stem>.csv` next to each other.
pub fn write_sfr(dir: &Path, stem: &str, sfr: &SfrMap) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let pgm = dir.join(format!("{stem}.pgm"));
    std::fs::write(&pgm, encode_pgm(&sfr.map)).map_err(|e| Error::io(&pgm, e))?;
    let csv = dir.join(format!("{stem}.csv"));
    std::fs::write(&csv, encode_csv(&sfr.map)).map_err(|e| Error::io(&csv, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_is_max_normalized() {
        let m = Tensor::from_f64(&[1, 3], &[0.0, 0.25, 0.5]).unwrap();
        let bytes = encode_pgm(&m);
        let header = b"P5\n3 1\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 128, 255]);
        let zero = encode_pgm(&Tensor::zeros(&[2, 2]));
        assert!(zero.ends_with(&[0, 0, 0, 0]));
    }

    #[test]
    fn csv_rows() {
        let m = Tensor::from_f64(&[2, 2], &[0.0, 0.5, 1.0, 0.25]).unwrap();
        assert_eq!(encode_csv(&m), "0,0.5\n1,0.25\n");
    }
}
