//! MNIST-style inputs: IDX parsing, 28×28 → 6×6 average pooling, and the
//! four point categories the experiments query (train, test, two random
//! baselines), plus a file-free Gaussian fixture.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

pub const MNIST_SIDE: usize = 28;
pub const POOLED_SIDE: usize = 6;
pub const POOLED_DIM: usize = POOLED_SIDE * POOLED_SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Train,
    Test,
    Random1,
    Random2,
    Synthetic,
}

impl Category {
    pub const EXPERIMENT: [Category; 4] = [Category::Train, Category::Test, Category::Random1, Category::Random2];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Train => "train",
            Category::Test => "test",
            Category::Random1 => "random1",
            Category::Random2 => "random2",
            Category::Synthetic => "synthetic",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => Category::Train,
            "test" => Category::Test,
            "random1" => Category::Random1,
            "random2" => Category::Random2,
            "synthetic" => Category::Synthetic,
            _ => return Err(Error::InvalidArgument(format!("unknown category {s:?}"))),
        })
    }
}

/// Points with optional binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub points: Vec<Vec<f64>>,
    pub labels: Option<Vec<u8>>,
    pub category: Category,
}

impl LabeledSet {
    pub fn new(points: Vec<Vec<f64>>, labels: Option<Vec<u8>>, category: Category) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::InvalidArgument(format!("{} points but {} labels", points.len(), l.len())));
            }
        }
        if let Some(first) = points.first() {
            if points.iter().any(|p| p.len() != first.len()) {
                return Err(Error::InvalidArgument("points have differing dimensions".into()));
            }
        }
        if points.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("coordinates must lie in [0, 1]".into()));
        }
        Ok(LabeledSet { points, labels, category })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn with_category(mut self, category: Category) -> Self {
        self.category = category;
        self
    }

    /// First `n` points (all if fewer).
    pub fn truncated(&self, n: usize) -> LabeledSet {
        LabeledSet {
            points: self.points.iter().take(n).cloned().collect(),
            labels: self.labels.as_ref().map(|l| l.iter().take(n).copied().collect()),
            category: self.category,
        }
    }
}

/// Raw IDX image tensor: `count × rows × cols` bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn be_u32(bytes: &[u8], offset: usize, context: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::parse(context, bytes.len(), "truncated header"))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let ctx = "idx images";
    let magic = be_u32(bytes, 0, ctx)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::parse(ctx, 0, format!("magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4, ctx)? as usize;
    let rows = be_u32(bytes, 8, ctx)? as usize;
    let cols = be_u32(bytes, 12, ctx)? as usize;
    let need = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() != need {
        return Err(Error::parse(
            ctx,
            16 + payload.len().min(need),
            format!("payload holds {} bytes, header declares {need}", payload.len()),
        ));
    }
    Ok(IdxImages { count, rows, cols, pixels: payload.to_vec() })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let ctx = "idx labels";
    let magic = be_u32(bytes, 0, ctx)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::parse(ctx, 0, format!("magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4, ctx)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::parse(
            ctx,
            8 + payload.len().min(count),
            format!("payload holds {} bytes, header declares {count}", payload.len()),
        ));
    }
    Ok(payload.to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IDX_IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend(v.to_be_bytes());
    }
    out.extend(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(IDX_LABELS_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    out
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    let path = path.as_ref();
    parse_idx_images(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    parse_idx_labels(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Adaptive average pooling of a row-major `in_side × in_side` image to
/// `out_side × out_side`. Output bin `a` covers input rows
/// `[floor(a·in/out), floor((a+1)·in/out))`.
pub fn adaptive_avg_pool_square(image: &[f64], in_side: usize, out_side: usize) -> Result<Vec<f64>> {
    if image.len() != in_side * in_side || out_side == 0 || out_side > in_side {
        return Err(Error::InvalidArgument(format!(
            "cannot pool {} values as {in_side}x{in_side} to {out_side}x{out_side}",
            image.len()
        )));
    }
    let edges: Vec<usize> = (0..=out_side).map(|a| a * in_side / out_side).collect();
    let mut out = Vec::with_capacity(out_side * out_side);
    for rb in edges.windows(2) {
        for cb in edges.windows(2) {
            let mut sum = 0.0;
            for r in rb[0]..rb[1] {
                sum += image[r * in_side + cb[0]..r * in_side + cb[1]].iter().sum::<f64>();
            }
            out.push(sum / ((rb[1] - rb[0]) * (cb[1] - cb[0])) as f64);
        }
    }
    Ok(out)
}

/// 28×28 → 6×6 with bin edges {0, 4, 9, 14, 18, 23, 28}.
pub fn adaptive_avg_pool(image: &[f64]) -> Result<Vec<f64>> {
    adaptive_avg_pool_square(image, MNIST_SIDE, POOLED_SIDE)
}

/// Scales bytes to [0, 1] and pools to 6×6.
pub fn pool_image_bytes(pixels: &[u8]) -> Result<Vec<f64>> {
    let scaled: Vec<f64> = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    adaptive_avg_pool(&scaled)
}

/// Seeded subsample of `per_class` images of each digit. `digit_a` maps to
/// class 0 and `digit_b` to class 1. Indices in `exclude` are skipped, so a
/// disjoint second draw from the same file is possible.
pub fn build_binary_dataset(
    images: &IdxImages,
    labels: &[u8],
    digits: (u8, u8),
    per_class: usize,
    seed: u64,
) -> Result<LabeledSet> {
    build_binary_dataset_excluding(images, labels, digits, per_class, seed, &[]).map(|(s, _)| s)
}

pub fn build_binary_dataset_excluding(
    images: &IdxImages,
    labels: &[u8],
    (digit_a, digit_b): (u8, u8),
    per_class: usize,
    seed: u64,
    exclude: &[usize],
) -> Result<(LabeledSet, Vec<usize>)> {
    if images.rows != MNIST_SIDE || images.cols != MNIST_SIDE {
        return Err(Error::InvalidArgument(format!("expected 28x28 images, got {}x{}", images.rows, images.cols)));
    }
    if labels.len() != images.count {
        return Err(Error::InvalidArgument(format!("{} images but {} labels", images.count, labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let excluded: std::collections::HashSet<usize> = exclude.iter().copied().collect();
    let mut points = Vec::with_capacity(2 * per_class);
    let mut out_labels = Vec::with_capacity(2 * per_class);
    let mut used = Vec::with_capacity(2 * per_class);
    for (class, digit) in [(0u8, digit_a), (1u8, digit_b)] {
        let mut idx: Vec<usize> = (0..images.count).filter(|i| labels[*i] == digit && !excluded.contains(i)).collect();
        if idx.len() < per_class {
            return Err(Error::InvalidArgument(format!(
                "digit {digit} has {} available images, {per_class} requested",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        idx.truncate(per_class);
        idx.sort_unstable();
        for i in idx {
            points.push(pool_image_bytes(images.image(i))?);
            out_labels.push(class);
            used.push(i);
        }
    }
    Ok((LabeledSet::new(points, Some(out_labels), Category::Train)?, used))
}

/// Uniform points inside the per-coordinate `[min, max]` envelope of `train`.
pub fn make_random_dataset_1(train: &LabeledSet, n: usize, seed: u64) -> Result<LabeledSet> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let dim = train.dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in &train.points {
        for (i, &v) in p.iter().enumerate() {
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| lo.iter().zip(&hi).map(|(&l, &h)| if h > l { l + (h - l) * rng.random::<f64>() } else { l }).collect())
        .collect();
    LabeledSet::new(points, None, Category::Random1)
}

/// Uniform points over the full normalized grayscale cube `[0, 1]^dim`.
pub fn make_random_dataset_2(n: usize, dim: usize, seed: u64) -> Result<LabeledSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
    LabeledSet::new(points, None, Category::Random2)
}

pub const BLOB_STDDEV: f64 = 0.1;

/// Two Gaussian clusters with per-coordinate means `0.5 ∓ separation/2`
/// (so the mean difference is `separation` times the all-ones vector),
/// stddev 0.1, clipped to `[0, 1]`. Classes alternate 0, 1, 0, 1, ...
pub fn synthetic_blobs(n: usize, dim: usize, separation: f64, seed: u64) -> Result<LabeledSet> {
    if !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("synthetic_blobs needs an even n, got {n}")));
    }
    let noise = Normal::new(0.0, BLOB_STDDEV).expect("valid stddev");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % 2) as u8;
        let mean = 0.5 + if class == 0 { -separation / 2.0 } else { separation / 2.0 };
        points.push((0..dim).map(|_| (mean + noise.sample(&mut rng)).clamp(0.0, 1.0)).collect());
        labels.push(class);
    }
    LabeledSet::new(points, Some(labels), Category::Synthetic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fake_mnist(per_digit: usize) -> (IdxImages, Vec<u8>) {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for i in 0..per_digit * 10 {
            let d = (i % 10) as u8;
            labels.push(d);
            pixels.extend((0..784).map(|p| ((p * 7 + i * 13 + d as usize) % 256) as u8));
        }
        (IdxImages { count: labels.len(), rows: 28, cols: 28, pixels }, labels)
    }

    #[test]
    fn idx_header_arithmetic() {
        let imgs = IdxImages { count: 2, rows: 28, cols: 28, pixels: vec![7; 1568] };
        let bytes = encode_idx_images(&imgs);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        let back = parse_idx_images(&bytes).unwrap();
        assert_eq!(back.count, 2);
        assert_eq!(back, imgs);
    }

    #[test]
    fn idx_errors() {
        let labels = encode_idx_labels(&[1, 2, 3]);
        assert!(matches!(parse_idx_images(&labels), Err(Error::Parse { offset: 0, .. })));
        let imgs = encode_idx_images(&IdxImages { count: 2, rows: 28, cols: 28, pixels: vec![0; 1568] });
        assert!(matches!(parse_idx_images(&imgs[..1000]), Err(Error::Parse { offset: 1000, .. })));
        assert!(parse_idx_images(&imgs[..10]).is_err());
        assert!(parse_idx_labels(&labels[..9]).is_err());
        assert_eq!(parse_idx_labels(&labels).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn pooling_bins() {
        let v = 0.37;
        assert!(adaptive_avg_pool(&[v; 784]).unwrap().iter().all(|&x| (x - v).abs() < 1e-15));
        let mut img = vec![0.0; 784];
        img[..4 * 28].fill(1.0);
        let out = adaptive_avg_pool(&img).unwrap();
        assert!(out[..6].iter().all(|&x| x == 1.0));
        assert!(out[6..].iter().all(|&x| x == 0.0));
        assert!(adaptive_avg_pool(&[0.0; 784]).unwrap().iter().all(|&x| x == 0.0));
        assert!(adaptive_avg_pool(&[0.0; 100]).is_err());
        // row 4 belongs to bin 1
        let mut img = vec![0.0; 784];
        img[4 * 28..5 * 28].fill(1.0);
        let out = adaptive_avg_pool(&img).unwrap();
        assert!(out[..6].iter().all(|&x| x == 0.0));
        assert!((out[6] - 0.2 * 1.0).abs() < 1e-15, "{}", out[6]);
    }

    #[test]
    fn binary_dataset() {
        let (imgs, labels) = fake_mnist(600);
        let a = build_binary_dataset(&imgs, &labels, (0, 4), 500, 3).unwrap();
        assert_eq!(a.len(), 1000);
        assert_eq!(a.dim(), 36);
        assert_eq!(a.labels.as_ref().unwrap().iter().filter(|&&l| l == 1).count(), 500);
        assert_eq!(a, build_binary_dataset(&imgs, &labels, (0, 4), 500, 3).unwrap());
        assert!(build_binary_dataset(&imgs, &labels, (0, 4), 601, 3).is_err());
        let (train, used) = build_binary_dataset_excluding(&imgs, &labels, (0, 4), 300, 3, &[]).unwrap();
        let (_, used2) = build_binary_dataset_excluding(&imgs, &labels, (0, 4), 300, 4, &used).unwrap();
        assert!(used2.iter().all(|i| !used.contains(i)));
        assert_eq!(train.len(), 600);
    }

    #[test]
    fn random_sets() {
        let train =
            LabeledSet::new(vec![vec![0.2, 0.5, 0.1], vec![0.4, 0.5, 0.9]], Some(vec![0, 1]), Category::Train).unwrap();
        let r1 = make_random_dataset_1(&train, 1000, 1).unwrap();
        assert_eq!((r1.len(), r1.dim(), r1.labels.is_none()), (1000, 3, true));
        for p in &r1.points {
            assert!((0.2..=0.4).contains(&p[0]));
            assert_eq!(p[1], 0.5);
            assert!((0.1..=0.9).contains(&p[2]));
        }
        let empty = LabeledSet::new(vec![], None, Category::Train).unwrap();
        assert!(make_random_dataset_1(&empty, 10, 1).is_err());

        let r2 = make_random_dataset_2(10_000, 36, 4).unwrap();
        assert_eq!(r2, make_random_dataset_2(10_000, 36, 4).unwrap());
        for i in 0..36 {
            let m = r2.points.iter().map(|p| p[i]).sum::<f64>() / 10_000.0;
            assert!((m - 0.5).abs() < 0.02, "coordinate {i}: {m}");
        }
    }

    #[test]
    fn blobs() {
        let b = synthetic_blobs(1000, 36, 0.5, 2).unwrap();
        let labels = b.labels.as_ref().unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 500);
        assert!(b.points.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert!(synthetic_blobs(3, 2, 0.5, 1).is_err());
    }

    /// Fits a perceptron on the all-ones projection plus bias; the fixture is
    /// meant to be separable with a clear margin.
    #[test]
    fn blobs_are_linearly_separable() {
        let mut separable = 0;
        for seed in 0..20 {
            let b = synthetic_blobs(1000, 36, 0.5, seed).unwrap();
            let labels = b.labels.as_ref().unwrap();
            let mut w = vec![0.0; 37];
            for _ in 0..50 {
                for (p, &l) in b.points.iter().zip(labels) {
                    let y = if l == 1 { 1.0 } else { -1.0 };
                    let s: f64 = p.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + w[36];
                    if y * s <= 0.0 {
                        p.iter().enumerate().for_each(|(i, v)| w[i] += y * v);
                        w[36] += y;
                    }
                }
            }
            let norm = w[..36].iter().map(|v| v * v).sum::<f64>().sqrt();
            let margin = b
                .points
                .iter()
                .zip(labels)
                .map(|(p, &l)| {
                    let y = if l == 1 { 1.0 } else { -1.0 };
                    y * (p.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + w[36]) / norm
                })
                .fold(f64::INFINITY, f64::min);
            if margin > 0.0 {
                separable += 1;
            }
        }
        assert!(separable >= 19, "separable in {separable}/20 seeds");
    }

    proptest! {
        #[test]
        fn pooling_is_linear_and_range_preserving(
            x in prop::collection::vec(0.0f64..1.0, 784),
            y in prop::collection::vec(0.0f64..1.0, 784),
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
        ) {
            let px = adaptive_avg_pool(&x).unwrap();
            let py = adaptive_avg_pool(&y).unwrap();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
            for ((m, a), b) in adaptive_avg_pool(&mix).unwrap().iter().zip(&px).zip(&py) {
                prop_assert!((m - (alpha * a + beta * b)).abs() < 1e-12);
            }
            let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            prop_assert!(px.iter().all(|&v| v >= lo - 1e-15 && v <= hi + 1e-15));
        }

        #[test]
        fn idx_round_trip(pixels in prop::collection::vec(any::<u8>(), 0..50), labels in prop::collection::vec(any::<u8>(), 0..50)) {
            let n = pixels.len();
            let img = IdxImages { count: n, rows: 1, cols: 1, pixels };
            let bytes = encode_idx_images(&img);
            prop_assert_eq!(encode_idx_images(&parse_idx_images(&bytes).unwrap()), bytes);
            let lb = encode_idx_labels(&labels);
            prop_assert_eq!(encode_idx_labels(&parse_idx_labels(&lb).unwrap()), lb);
        }
    }
}
