//! Datasets and batch assembly.
//!
//! Samples are stored as `f32` and converted to the training precision
//! when a batch is built.

pub mod augment;
pub mod events;
pub mod idx;
pub mod synth;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::Input;
use crate::rng::{self, Rng};
use crate::tensor::{Real, Tensor};

/// One minibatch: network input plus labels.
#[derive(Clone, Debug)]
pub struct Batch<F> {
    pub input: Input<F>,
    pub labels: Vec<usize>,
}

pub trait Dataset: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn num_classes(&self) -> usize;

    fn label(&self, index: usize) -> usize;

    /// `[C, H, W]` of one frame or image.
    fn sample_shape(&self) -> [usize; 3];

    /// Assemble the samples at `indices`. `augment` is used by datasets
    /// that support augmentation and ignored otherwise.
    fn batch<F: Real>(&self, indices: &[usize], augment: Option<&mut Rng>) -> Result<Batch<F>>;
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    if num_classes < 2 {
        return Err(Error::invalid("dataset", format!("need at least 2 classes, got {num_classes}")));
    }
    match labels.iter().position(|&l| l >= num_classes) {
        Some(i) => Err(Error::invalid(
            "dataset",
            format!("label {} of sample {i} is not below {num_classes}", labels[i]),
        )),
        None => Ok(()),
    }
}

fn check_indices(indices: &[usize], len: usize) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::invalid("batch", "empty index list"));
    }
    match indices.iter().find(|&&i| i >= len) {
        Some(i) => Err(Error::invalid("batch", format!("index {i} out of range for {len} samples"))),
        None => Ok(()),
    }
}

/// Static images `[N, C, H, W]` in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct ImageDataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl ImageDataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::invalid("dataset", format!("images must be [N,C,H,W], got {:?}", images.shape())));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::invalid(
                "dataset",
                format!("{} images but {} labels", images.shape()[0], labels.len()),
            ));
        }
        check_labels(&labels, num_classes)?;
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, index: usize) -> &[f32] {
        let n = self.images.len() / self.labels.len();
        &self.images.data()[index * n..(index + 1) * n]
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        check_indices(indices, self.len())?;
        let n = self.images.len() / self.labels.len();
        let mut data = Vec::with_capacity(n * indices.len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Self::new(
            Tensor::new(&shape, data)?,
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
        )
    }
}

impl Dataset for ImageDataset {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    fn batch<F: Real>(&self, indices: &[usize], mut augment: Option<&mut Rng>) -> Result<Batch<F>> {
        check_indices(indices, self.len())?;
        let [c, h, w] = self.sample_shape();
        let mut data = Vec::with_capacity(c * h * w * indices.len());
        for &i in indices {
            let img = self.image(i);
            match augment.as_deref_mut() {
                Some(rng) => data.extend(augment::augment(img, c, h, w, rng).into_iter().map(|v| F::of(v as f64))),
                None => data.extend(img.iter().map(|&v| F::of(v as f64))),
            }
        }
        Ok(Batch {
            input: Input::Static(Tensor::new(&[indices.len(), c, h, w], data)?),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

/// Event samples already integrated into frames `[T, 2, H, W]`.
#[derive(Clone, Debug)]
pub struct FrameDataset {
    frames: Vec<Tensor<f32>>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl FrameDataset {
    pub fn new(frames: Vec<Tensor<f32>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if frames.len() != labels.len() {
            return Err(Error::invalid(
                "dataset",
                format!("{} samples but {} labels", frames.len(), labels.len()),
            ));
        }
        if let Some(first) = frames.first() {
            if first.shape().len() != 4 {
                return Err(Error::invalid("dataset", format!("frames must be [T,C,H,W], got {:?}", first.shape())));
            }
            if let Some(bad) = frames.iter().find(|f| f.shape()[1..] != first.shape()[1..]) {
                return Err(Error::shape("dataset", &first.shape()[1..], &bad.shape()[1..]));
            }
        }
        check_labels(&labels, num_classes)?;
        Ok(Self {
            frames,
            labels,
            num_classes,
        })
    }

    /// Integrate every stream with the same window and target size.
    pub fn from_streams(
        streams: &[events::EventStream],
        window_ms: f64,
        target_hw: Option<(usize, usize)>,
        num_classes: usize,
    ) -> Result<Self> {
        let mut frames = Vec::with_capacity(streams.len());
        for s in streams {
            frames.push(events::integrate_events(s, window_ms, target_hw)?.frames);
        }
        Self::new(frames, streams.iter().map(|s| s.label() as usize).collect(), num_classes)
    }

    pub fn frames(&self, index: usize) -> &Tensor<f32> {
        &self.frames[index]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Smallest frame count over all samples.
    pub fn min_frames(&self) -> usize {
        self.frames.iter().map(|f| f.shape()[0]).min().unwrap_or(0)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        check_indices(indices, self.len())?;
        Self::new(
            indices.iter().map(|&i| self.frames[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
        )
    }
}

impl Dataset for FrameDataset {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn sample_shape(&self) -> [usize; 3] {
        match self.frames.first() {
            Some(f) => [f.shape()[1], f.shape()[2], f.shape()[3]],
            None => [0, 0, 0],
        }
    }

    /// `[T, batch, C, H, W]`, truncated to the shortest sample.
    fn batch<F: Real>(&self, indices: &[usize], _augment: Option<&mut Rng>) -> Result<Batch<F>> {
        check_indices(indices, self.len())?;
        let steps = indices.iter().map(|&i| self.frames[i].shape()[0]).min().expect("non-empty");
        let [c, h, w] = self.sample_shape();
        let frame = c * h * w;
        let b = indices.len();
        let mut data = vec![F::zero(); steps * b * frame];
        for (j, &i) in indices.iter().enumerate() {
            let src = self.frames[i].data();
            for t in 0..steps {
                let dst = &mut data[(t * b + j) * frame..(t * b + j + 1) * frame];
                for (d, &s) in dst.iter_mut().zip(&src[t * frame..(t + 1) * frame]) {
                    *d = F::of(s as f64);
                }
            }
        }
        Ok(Batch {
            input: Input::Frames(Tensor::new(&[steps, b, c, h, w], data)?),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

/// Seeded 9:1 train/test split of `0..n`. Both parts are sorted.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    split_indices_ratio(n, 0.9, seed)
}

/// Seeded split with `train_fraction` of the samples (rounded) in the
/// first part.
pub fn split_indices_ratio(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, rng::streams::SPLIT));
    let cut = ((n as f64 * train_fraction).round() as usize).min(n);
    let mut train = order[..cut].to_vec();
    let mut test = order[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let (train, test) = split_indices(103, 9);
        assert_eq!(train.len(), 93);
        assert_eq!(test.len(), 10);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        assert_eq!(split_indices(103, 9), (train, test));
    }

    #[test]
    fn image_batches() {
        let images = Tensor::new(&[3, 1, 2, 2], (0..12).map(|v| v as f32).collect()).unwrap();
        let ds = ImageDataset::new(images, vec![0, 1, 1], 2).unwrap();
        let b: Batch<f64> = ds.batch(&[2, 0], None).unwrap();
        assert_eq!(b.labels, vec![1, 0]);
        match b.input {
            Input::Static(t) => assert_eq!(t.data(), &[8.0, 9.0, 10.0, 11.0, 0.0, 1.0, 2.0, 3.0]),
            Input::Frames(_) => panic!("expected static input"),
        }
        assert!(ds.batch::<f64>(&[3], None).is_err());
        assert!(ImageDataset::new(Tensor::zeros(&[2, 1, 1, 1]), vec![0, 2], 2).is_err());
    }

    #[test]
    fn frame_batches_are_time_major() {
        let a = Tensor::new(&[2, 1, 1, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[3, 1, 1, 1], vec![3.0, 4.0, 5.0]).unwrap();
        let ds = FrameDataset::new(vec![a, b], vec![0, 1], 2).unwrap();
        let batch: Batch<f32> = ds.batch(&[0, 1], None).unwrap();
        match batch.input {
            Input::Frames(t) => {
                assert_eq!(t.shape(), &[2, 2, 1, 1, 1]);
                assert_eq!(t.data(), &[1.0, 3.0, 2.0, 4.0]);
            }
            Input::Static(_) => panic!("expected frames"),
        }
    }
}
