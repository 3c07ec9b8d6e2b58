//! Training-time image augmentation: random horizontal flip and
//! reflect-padded random crop. Images are `[C, H, W]` row-major.

use rand::Rng as _;

use crate::rng::Rng;

/// Padding used by the random crop.
pub const CROP_PAD: usize = 4;

pub fn hflip(image: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(image.len());
    for row in image[..c * h * w].chunks_exact(w) {
        out.extend(row.iter().rev());
    }
    out
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * (n - 1).max(1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Crop an `h x w` window at offset `(dy, dx)` from the image reflect-padded
/// by `pad` on every side; `dy = dx = pad` is the identity.
pub fn pad_crop(image: &[f32], c: usize, h: usize, w: usize, pad: usize, dy: usize, dx: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let plane = &image[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let sy = reflect(y as isize + dy as isize - pad as isize, h);
            for x in 0..w {
                let sx = reflect(x as isize + dx as isize - pad as isize, w);
                out.push(plane[sy * w + sx]);
            }
        }
    }
    out
}

/// Flip with probability 1/2, then crop at a uniform offset in
/// `[0, 2 * pad]^2`. The padding shrinks for images smaller than it.
pub fn augment(image: &[f32], c: usize, h: usize, w: usize, rng: &mut Rng) -> Vec<f32> {
    let flipped;
    let src = if rng.random_bool(0.5) {
        flipped = hflip(image, c, h, w);
        &flipped[..]
    } else {
        image
    };
    let pad = CROP_PAD.min(h.min(w).saturating_sub(1));
    let dy = rng.random_range(0..=2 * pad);
    let dx = rng.random_range(0..=2 * pad);
    pad_crop(src, c, h, w, pad, dy, dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_swaps_columns() {
        assert_eq!(hflip(&[1.0, 2.0, 3.0, 4.0], 1, 2, 2), vec![2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn centered_crop_is_identity() {
        let img: Vec<f32> = (0..2 * 5 * 6).map(|v| v as f32).collect();
        assert_eq!(pad_crop(&img, 2, 5, 6, 4, 4, 4), img);
    }

    #[test]
    fn reflection_does_not_repeat_edge() {
        // row [a b c] padded by 2 reads [c b a b c b a]
        let row = [1.0, 2.0, 3.0];
        assert_eq!(pad_crop(&row, 1, 1, 3, 2, 2, 0), vec![3.0, 2.0, 1.0]);
        assert_eq!(pad_crop(&row, 1, 1, 3, 2, 2, 4), vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn constant_image_keeps_its_mass() {
        let img = vec![0.5f32; 3 * 8 * 8];
        let mut rng = crate::rng::seeded(4);
        for _ in 0..20 {
            let out = augment(&img, 3, 8, 8, &mut rng);
            assert_eq!(out.len(), img.len());
            assert_eq!(out.iter().sum::<f32>(), img.iter().sum::<f32>());
        }
    }
}
