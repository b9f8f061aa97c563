//! In-memory datasets, toy-data generators, and corruption transforms.
//!
//! Image datasets carry `[n, h, w]` tensors with pixels in `[0, 1]`; the toy
//! ring carries raw 2-d points. File ingestion and serialization live in the
//! companion crate; everything here is pure.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use core::f64::consts::TAU;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::Streams;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("images must be [n, h, w], got shape {0:?}")]
    NotImages(Vec<usize>),
    #[error("pixel {value} at flat index {index} outside [0, 1]")]
    PixelRange { index: usize, value: f64 },
    #[error("{actual} labels for {expected} examples")]
    LabelCount { expected: usize, actual: usize },
    #[error("label {label} at index {index} outside [0, {num_classes})")]
    LabelRange {
        index: usize,
        label: u8,
        num_classes: usize,
    },
    #[error("rotation requires square images, got {h}x{w}")]
    NotSquare { h: usize, w: usize },
    #[error("corruption fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("need n >= modes, got n={n} modes={modes}")]
    TooFewPoints { n: usize, modes: usize },
    #[error("invalid toy-ring parameter: {0}")]
    BadRingParameter(&'static str),
    #[error("split fractions must sum to 1, got {0}")]
    FractionsSum(f64),
    #[error("split part {part} would be empty")]
    EmptySplit { part: usize },
    #[error("expected {expected}x{expected} images, got {h}x{w}")]
    WrongResolution { expected: usize, h: usize, w: usize },
}

/// Whether pixel values are constrained to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Image,
    Raw,
}

/// An in-memory dataset: `[n, h, w]` features plus optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    images: Tensor,
    labels: Option<Vec<u8>>,
    num_classes: usize,
    kind: DatasetKind,
}

impl Dataset {
    pub fn new_images(
        name: &str,
        images: Tensor,
        labels: Option<Vec<u8>>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        Self::build(name, images, labels, num_classes, DatasetKind::Image)
    }

    pub fn new_raw(
        name: &str,
        features: Tensor,
        labels: Option<Vec<u8>>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        Self::build(name, features, labels, num_classes, DatasetKind::Raw)
    }

    fn build(
        name: &str,
        images: Tensor,
        labels: Option<Vec<u8>>,
        num_classes: usize,
        kind: DatasetKind,
    ) -> Result<Self, DataError> {
        if images.shape().len() != 3 {
            return Err(DataError::NotImages(images.shape().to_vec()));
        }
        if kind == DatasetKind::Image {
            for (index, &value) in images.data().iter().enumerate() {
                if !(0.0..=1.0).contains(&value) {
                    return Err(DataError::PixelRange { index, value });
                }
            }
        }
        let n = images.shape()[0];
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(DataError::LabelCount {
                    expected: n,
                    actual: labels.len(),
                });
            }
            for (index, &label) in labels.iter().enumerate() {
                if (label as usize) >= num_classes {
                    return Err(DataError::LabelRange {
                        index,
                        label,
                        num_classes,
                    });
                }
            }
        }
        Ok(Self {
            name: String::from(name),
            images,
            labels,
            num_classes,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.images.shape()[1], self.images.shape()[2])
    }

    pub fn feature_dim(&self) -> usize {
        let (h, w) = self.image_dims();
        h * w
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Features flattened to `[n, h*w]` for the network kernel.
    pub fn features(&self) -> Tensor {
        let (n, d) = self.images.as_matrix();
        self.images
            .clone()
            .reshape(vec![n, d])
            .expect("same volume")
    }

    /// Class ids as a `[n]` tensor, for the softmax loss.
    pub fn label_tensor(&self) -> Option<Tensor> {
        self.labels.as_ref().map(|l| {
            Tensor::new(vec![l.len()], l.iter().map(|&v| v as f64).collect())
                .expect("labels are finite")
        })
    }

    /// New dataset containing the given rows, in order.
    pub fn subset(&self, indices: &[usize], name: &str) -> Self {
        let (h, w) = self.image_dims();
        let d = h * w;
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.images.row(i));
        }
        let images = Tensor::new(vec![indices.len(), h, w], data).expect("rows are finite");
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self {
            name: String::from(name),
            images,
            labels,
            num_classes: self.num_classes,
            kind: self.kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    /// Rotate the image 90° counter-clockwise.
    Rotate90,
    /// Invert pixel intensities, `p → 1 − p`.
    Invert,
}

impl CorruptionKind {
    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::Rotate90 => "rotate90",
            CorruptionKind::Invert => "invert",
        }
    }
}

/// Independent per-image corruption with probability `fraction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub fraction: f64,
    pub seed: u64,
}

/// Rotate a square `side x side` image 90° counter-clockwise (a pixel
/// permutation: the rightmost column becomes the top row).
pub fn rotate90_ccw(pixels: &[f64], side: usize) -> Vec<f64> {
    let mut out = vec![0.0; pixels.len()];
    for r in 0..side {
        for c in 0..side {
            out[r * side + c] = pixels[c * side + (side - 1 - r)];
        }
    }
    out
}

/// Apply `spec` to a copy of the dataset; returns the altered dataset and
/// the sorted indices of altered images. Labels are carried through
/// unchanged.
pub fn corrupt(
    dataset: &Dataset,
    spec: &CorruptionSpec,
) -> Result<(Dataset, Vec<usize>), DataError> {
    if !(0.0..=1.0).contains(&spec.fraction) {
        return Err(DataError::BadFraction(spec.fraction));
    }
    let (h, w) = dataset.image_dims();
    if spec.kind == CorruptionKind::Rotate90 && h != w {
        return Err(DataError::NotSquare { h, w });
    }
    let mut rng = Streams::new(spec.seed).stream("corrupt");
    let mut images = dataset.images.clone();
    let mut mask = Vec::new();
    let d = h * w;
    for i in 0..dataset.len() {
        if rng.random::<f64>() >= spec.fraction {
            continue;
        }
        mask.push(i);
        let row = &mut images.data_mut()[i * d..(i + 1) * d];
        match spec.kind {
            CorruptionKind::Rotate90 => {
                let rotated = rotate90_ccw(row, h);
                row.copy_from_slice(&rotated);
            }
            CorruptionKind::Invert => {
                for p in row.iter_mut() {
                    *p = 1.0 - *p;
                }
            }
        }
    }
    let corrupted = Dataset {
        name: dataset.name.clone(),
        images,
        labels: dataset.labels.clone(),
        num_classes: dataset.num_classes,
        kind: dataset.kind,
    };
    Ok((corrupted, mask))
}

/// Centers of a regular `modes`-gon of the given radius.
pub fn ring_centers(modes: usize, radius: f64) -> Vec<(f64, f64)> {
    (0..modes)
        .map(|j| {
            let angle = TAU * j as f64 / modes as f64;
            (radius * angle.cos(), radius * angle.sin())
        })
        .collect()
}

/// 2-d ring-of-Gaussians toy dataset: `n` points, each drawn from an
/// isotropic Gaussian centered on a uniformly chosen mode; the label is the
/// mode index. Points are stored as `[n, 1, 2]` raw features.
pub fn toy_ring(
    n: usize,
    modes: usize,
    radius: f64,
    std: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if modes == 0 || modes > 256 {
        return Err(DataError::BadRingParameter("modes must lie in 1..=256"));
    }
    if n < modes {
        return Err(DataError::TooFewPoints { n, modes });
    }
    if !(std > 0.0) || !std.is_finite() {
        return Err(DataError::BadRingParameter("std must be positive"));
    }
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(DataError::BadRingParameter("radius must be nonnegative"));
    }
    let centers = ring_centers(modes, radius);
    let mut rng = Streams::new(seed).stream("toy-ring");
    let mut points = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mode = (rng.random::<u64>() % modes as u64) as usize;
        let (cx, cy) = centers[mode];
        let zx: f64 = rng.sample(StandardNormal);
        let zy: f64 = rng.sample(StandardNormal);
        points.push(cx + std * zx);
        points.push(cy + std * zy);
        labels.push(mode as u8);
    }
    Dataset::new_raw(
        "toy_ring",
        Tensor::new(vec![n, 1, 2], points)?,
        Some(labels),
        modes,
    )
}

/// Deterministic disjoint split by shuffled assignment. Part sizes are the
/// rounded cumulative fractions; every part must be nonempty.
pub fn split(dataset: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>, DataError> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(DataError::FractionsSum(total));
    }
    let n = dataset.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = Streams::new(seed).stream("split");
    for i in (1..n).rev() {
        let j = (rng.random::<u64>() % (i as u64 + 1)) as usize;
        indices.swap(i, j);
    }
    let mut parts = Vec::with_capacity(fractions.len());
    let mut cumulative = 0.0;
    let mut start = 0usize;
    for (part, &f) in fractions.iter().enumerate() {
        cumulative += f;
        let end = if part + 1 == fractions.len() {
            n
        } else {
            (cumulative * n as f64).round() as usize
        };
        if end <= start || end > n {
            return Err(DataError::EmptySplit { part });
        }
        let mut name = dataset.name.clone();
        name.push_str("/part");
        parts.push(dataset.subset(&indices[start..end], &name));
        start = end;
    }
    Ok(parts)
}

/// Desk-scale reduction of 28x28 images: 4x4 block mean down to 7x7, then
/// zero-padded (right and bottom) to 8x8.
pub fn downsample_28_to_8(dataset: &Dataset) -> Result<Dataset, DataError> {
    let (h, w) = dataset.image_dims();
    if h != 28 || w != 28 {
        return Err(DataError::WrongResolution { expected: 28, h, w });
    }
    let n = dataset.len();
    let mut data = vec![0.0; n * 64];
    for i in 0..n {
        let src = dataset.images.row(i);
        for br in 0..7 {
            for bc in 0..7 {
                let mut acc = 0.0;
                for r in 0..4 {
                    for c in 0..4 {
                        acc += src[(br * 4 + r) * 28 + bc * 4 + c];
                    }
                }
                data[i * 64 + br * 8 + bc] = acc / 16.0;
            }
        }
    }
    let mut out = dataset.clone();
    out.images = Tensor::new(vec![n, 8, 8], data)?;
    out.name.push_str("/8x8");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_images(n: usize, side: usize, seed: u64) -> Dataset {
        let mut rng = Streams::new(seed).stream("tiny");
        let data: Vec<f64> = (0..n * side * side).map(|_| rng.random::<f64>()).collect();
        Dataset::new_images(
            "tiny",
            Tensor::new(vec![n, side, side], data).unwrap(),
            Some((0..n).map(|i| (i % 4) as u8).collect()),
            4,
        )
        .unwrap()
    }

    #[test]
    fn dataset_validates_pixels_and_labels() {
        let bad = Tensor::new(vec![1, 1, 2], vec![0.5, 1.5]).unwrap();
        assert!(matches!(
            Dataset::new_images("x", bad, None, 1),
            Err(DataError::PixelRange { index: 1, .. })
        ));
        let ok = Tensor::new(vec![2, 1, 1], vec![0.1, 0.9]).unwrap();
        assert!(matches!(
            Dataset::new_images("x", ok, Some(vec![0, 10]), 10),
            Err(DataError::LabelRange { index: 1, label: 10, .. })
        ));
    }

    #[test]
    fn zero_fraction_changes_nothing() {
        let ds = tiny_images(20, 4, 1);
        let spec = CorruptionSpec {
            kind: CorruptionKind::Rotate90,
            fraction: 0.0,
            seed: 9,
        };
        let (out, mask) = corrupt(&ds, &spec).unwrap();
        assert!(mask.is_empty());
        assert_eq!(out.images().data(), ds.images().data());
    }

    #[test]
    fn four_rotations_restore_the_image() {
        let img: Vec<f64> = (0..25).map(|i| i as f64 / 24.0).collect();
        let mut cur = img.clone();
        for _ in 0..4 {
            cur = rotate90_ccw(&cur, 5);
        }
        assert_eq!(cur, img);
        // One rotation moves the rightmost column to the top row.
        let once = rotate90_ccw(&img, 5);
        assert_eq!(once[0], img[4]);
        assert_eq!(once[4], img[24]);
    }

    #[test]
    fn rotation_preserves_pixel_multiset_and_only_masked_rows_change() {
        let ds = tiny_images(50, 6, 2);
        let spec = CorruptionSpec {
            kind: CorruptionKind::Rotate90,
            fraction: 0.4,
            seed: 11,
        };
        let (out, mask) = corrupt(&ds, &spec).unwrap();
        assert_eq!(out.len(), ds.len());
        assert_eq!(out.labels(), ds.labels());
        for i in 0..ds.len() {
            let before = ds.images().row(i);
            let after = out.images().row(i);
            if mask.binary_search(&i).is_ok() {
                assert_ne!(before, after);
                let mut a = before.to_vec();
                let mut b = after.to_vec();
                a.sort_by(f64::total_cmp);
                b.sort_by(f64::total_cmp);
                assert_eq!(a, b);
            } else {
                assert_eq!(before, after);
            }
        }
    }

    #[test]
    fn invert_maps_p_to_one_minus_p() {
        let ds = tiny_images(10, 3, 3);
        let spec = CorruptionSpec {
            kind: CorruptionKind::Invert,
            fraction: 1.0,
            seed: 0,
        };
        let (out, mask) = corrupt(&ds, &spec).unwrap();
        assert_eq!(mask.len(), 10);
        for (a, b) in ds.images().data().iter().zip(out.images().data()) {
            assert!((a + b - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn corruption_mask_size_is_binomial() {
        let ds = tiny_images(10_000, 2, 4);
        let spec = CorruptionSpec {
            kind: CorruptionKind::Invert,
            fraction: 0.3,
            seed: 1234,
        };
        let (_, mask) = corrupt(&ds, &spec).unwrap();
        let sd = (10_000.0f64 * 0.3 * 0.7).sqrt();
        assert!(
            (mask.len() as f64 - 3000.0).abs() <= 3.0 * sd,
            "{}",
            mask.len()
        );
    }

    #[test]
    fn rotation_rejects_non_square() {
        let images = Tensor::zeros(vec![1, 2, 3]).unwrap();
        let ds = Dataset::new_images("x", images, None, 1).unwrap();
        let spec = CorruptionSpec {
            kind: CorruptionKind::Rotate90,
            fraction: 1.0,
            seed: 0,
        };
        assert!(matches!(corrupt(&ds, &spec), Err(DataError::NotSquare { .. })));
    }

    #[test]
    fn toy_ring_degenerate_parameters() {
        // Vanishing spread pins every point to its center.
        let ds = toy_ring(200, 8, 2.0, 1e-12, 5).unwrap();
        let centers = ring_centers(8, 2.0);
        for i in 0..ds.len() {
            let p = ds.images().row(i);
            let (cx, cy) = centers[ds.labels().unwrap()[i] as usize];
            let dist = ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt();
            assert!(dist <= 1e-9);
        }
        // Zero radius collapses all centers to the origin.
        let ds = toy_ring(50, 8, 0.0, 1e-12, 5).unwrap();
        for i in 0..ds.len() {
            let p = ds.images().row(i);
            assert!(p[0].abs() <= 1e-9 && p[1].abs() <= 1e-9);
        }
        assert!(matches!(
            toy_ring(4, 8, 1.0, 0.1, 0),
            Err(DataError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn toy_ring_mode_histogram_is_roughly_uniform() {
        let n = 16_000usize;
        let modes = 8usize;
        let ds = toy_ring(n, modes, 2.0, 0.1, 7).unwrap();
        let mut counts = vec![0usize; modes];
        for &l in ds.labels().unwrap() {
            counts[l as usize] += 1;
        }
        let expected = n as f64 / modes as f64;
        let sd = (expected * (1.0 - 1.0 / modes as f64)).sqrt();
        for (mode, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() <= 4.0 * sd,
                "mode {mode}: {c} vs {expected}"
            );
        }
    }

    #[test]
    fn split_identity_and_halves() {
        let ds = tiny_images(2000, 2, 8);
        let whole = split(&ds, &[1.0], 3).unwrap();
        assert_eq!(whole.len(), 1);
        assert_eq!(whole[0].len(), 2000);

        let parts = split(&ds, &[0.5, 0.5], 3).unwrap();
        assert_eq!(parts[0].len(), 1000);
        assert_eq!(parts[1].len(), 1000);

        // Disjoint cover: pixel sums agree.
        let total: f64 = ds.images().data().iter().sum();
        let sum: f64 = parts.iter().flat_map(|p| p.images().data().iter()).sum();
        assert!((total - sum).abs() <= 1e-9 * total.abs());

        let again = split(&ds, &[0.5, 0.5], 3).unwrap();
        assert_eq!(again[0].images().data(), parts[0].images().data());

        assert!(matches!(
            split(&ds, &[0.9, 0.2], 3),
            Err(DataError::FractionsSum(_))
        ));
    }

    #[test]
    fn downsample_shapes_and_padding() {
        let images = Tensor::new(vec![1, 28, 28], vec![0.5; 28 * 28]).unwrap();
        let ds = Dataset::new_images("m", images, None, 1).unwrap();
        let out = downsample_28_to_8(&ds).unwrap();
        assert_eq!(out.image_dims(), (8, 8));
        let row = out.images().row(0);
        for r in 0..8 {
            for c in 0..8 {
                let v = row[r * 8 + c];
                if r < 7 && c < 7 {
                    assert!((v - 0.5).abs() <= 1e-12);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }
}
