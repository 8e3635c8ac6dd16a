//! Synthetic datasets, IDX image loading, and train/test splits.
//!
//! Three bundled generators: `two_moons` (the standard interleaved
//! half-circles), `blobs` (Gaussian clusters on a circle), and `rings`
//! (small grayscale images of concentric rings, one radius per class) as a
//! synthetic stand-in for digit-style image tasks. External grayscale data
//! enters through the classic IDX binary format. All sampling is
//! deterministic given the seed; 2-D features are standardized, image
//! pixels live in [0, 1].

use std::io::Read as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::rng::{self, stream};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed dataset {path}: {detail}")]
    MalformedDataset { path: String, detail: String },
    #[error("dataset has fewer than two classes")]
    Degenerate,
    #[error("sample count {0} too small for the requested split")]
    TooSmall(usize),
    #[error("invalid dataset parameter {name} = {value}")]
    BadParam { name: &'static str, value: f64 },
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Spatial interpretation of feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataLayout {
    /// Plain feature vector of the given width.
    Vector { dim: usize },
    /// Row-major grayscale image.
    Image { height: usize, width: usize },
}

impl DataLayout {
    pub fn dim(&self) -> usize {
        match *self {
            DataLayout::Vector { dim } => dim,
            DataLayout::Image { height, width } => height * width,
        }
    }
}

/// Labeled feature matrix with a fixed layout.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<f32>,
    labels: Vec<usize>,
    layout: DataLayout,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f32>,
        labels: Vec<usize>,
        layout: DataLayout,
        num_classes: usize,
    ) -> Result<Self> {
        let dim = layout.dim();
        if dim == 0 || labels.is_empty() || features.len() != labels.len() * dim {
            return Err(DataError::MalformedDataset {
                path: "<memory>".into(),
                detail: format!(
                    "features {} vs {} labels x dim {}",
                    features.len(),
                    labels.len(),
                    dim
                ),
            });
        }
        Ok(Self {
            features,
            labels,
            layout,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn layout(&self) -> DataLayout {
        self.layout
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.features[i * d..(i + 1) * d]
    }

    /// Count of distinct labels present.
    pub fn distinct_labels(&self) -> usize {
        let mut seen = vec![false; self.num_classes];
        for &l in &self.labels {
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }

    /// Per-dimension (min, max) over all rows.
    pub fn bounding_box(&self) -> (Vec<f32>, Vec<f32>) {
        let d = self.dim();
        let mut lo = vec![f32::INFINITY; d];
        let mut hi = vec![f32::NEG_INFINITY; d];
        for i in 0..self.len() {
            for (j, &v) in self.row(i).iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        (lo, hi)
    }
}

/// Train/test partition of one dataset.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
}

/// Declarative dataset request, the unit stored in run configs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    TwoMoons {
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    Blobs {
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
        #[serde(default = "default_blob_classes")]
        classes: usize,
        #[serde(default = "default_spread")]
        spread: f64,
    },
    Rings {
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
        #[serde(default = "default_ring_classes")]
        classes: usize,
        #[serde(default = "default_side")]
        side: usize,
    },
    IdxImages {
        train_images: String,
        train_labels: String,
        test_images: String,
        test_labels: String,
    },
}

fn default_n_train() -> usize {
    1000
}
fn default_n_test() -> usize {
    500
}
fn default_noise() -> f64 {
    0.1
}
fn default_blob_classes() -> usize {
    3
}
fn default_spread() -> f64 {
    0.6
}
fn default_ring_classes() -> usize {
    3
}
fn default_side() -> usize {
    10
}

/// Materializes a dataset spec into deterministic train/test splits.
pub fn load_dataset(spec: &DatasetSpec, master_seed: u64) -> Result<SplitDataset> {
    let mut rng = rng::stream_rng(master_seed, stream::DATASET);
    match spec {
        DatasetSpec::TwoMoons {
            n_train,
            n_test,
            noise,
        } => two_moons(*n_train, *n_test, *noise, &mut rng),
        DatasetSpec::Blobs {
            n_train,
            n_test,
            classes,
            spread,
        } => blobs(*n_train, *n_test, *classes, *spread, &mut rng),
        DatasetSpec::Rings {
            n_train,
            n_test,
            classes,
            side,
        } => rings(*n_train, *n_test, *classes, *side, &mut rng),
        DatasetSpec::IdxImages {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => Ok(SplitDataset {
            train: load_idx_pair(train_images, train_labels)?,
            test: load_idx_pair(test_images, test_labels)?,
        }),
    }
}

/// Standardizes each column to zero mean and unit variance in place,
/// using statistics of the whole array.
fn standardize(features: &mut [f32], dim: usize) {
    let n = features.len() / dim;
    for j in 0..dim {
        let mut mean = 0.0f64;
        for i in 0..n {
            mean += features[i * dim + j] as f64;
        }
        mean /= n as f64;
        let mut var = 0.0f64;
        for i in 0..n {
            let d = features[i * dim + j] as f64 - mean;
            var += d * d;
        }
        var /= n as f64;
        let std = var.sqrt().max(1e-12);
        for i in 0..n {
            let v = &mut features[i * dim + j];
            *v = ((*v as f64 - mean) / std) as f32;
        }
    }
}

fn shuffled_split(
    mut features: Vec<f32>,
    mut labels: Vec<usize>,
    dim: usize,
    n_train: usize,
    layout: DataLayout,
    num_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SplitDataset> {
    let n = labels.len();
    if n_train == 0 || n_train >= n {
        return Err(DataError::TooSmall(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut f = vec![0.0f32; features.len()];
    let mut l = vec![0usize; n];
    for (dst, &src) in order.iter().enumerate() {
        f[dst * dim..(dst + 1) * dim].copy_from_slice(&features[src * dim..(src + 1) * dim]);
        l[dst] = labels[src];
    }
    features = f;
    labels = l;
    let test_f = features.split_off(n_train * dim);
    let test_l = labels.split_off(n_train);
    Ok(SplitDataset {
        train: Dataset::new(features, labels, layout, num_classes)?,
        test: Dataset::new(test_f, test_l, layout, num_classes)?,
    })
}

/// Two interleaved half-circles with Gaussian noise, standardized.
pub fn two_moons(
    n_train: usize,
    n_test: usize,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SplitDataset> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(DataError::BadParam {
            name: "noise",
            value: noise,
        });
    }
    let n = n_train + n_test;
    if n < 4 {
        return Err(DataError::TooSmall(n));
    }
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let gauss = Normal::new(0.0, noise.max(1e-12)).expect("positive sigma");
    let mut features = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n_outer {
        let t = std::f64::consts::PI * i as f64 / (n_outer - 1).max(1) as f64;
        features.push((t.cos() + gauss.sample(rng)) as f32);
        features.push((t.sin() + gauss.sample(rng)) as f32);
        labels.push(0);
    }
    for i in 0..n_inner {
        let t = std::f64::consts::PI * i as f64 / (n_inner - 1).max(1) as f64;
        features.push((1.0 - t.cos() + gauss.sample(rng)) as f32);
        features.push((1.0 - t.sin() - 0.5 + gauss.sample(rng)) as f32);
        labels.push(1);
    }
    standardize(&mut features, 2);
    shuffled_split(
        features,
        labels,
        2,
        n_train,
        DataLayout::Vector { dim: 2 },
        2,
        rng,
    )
}

/// Gaussian clusters centered on a circle, one per class, standardized.
pub fn blobs(
    n_train: usize,
    n_test: usize,
    classes: usize,
    spread: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SplitDataset> {
    if classes < 2 {
        return Err(DataError::Degenerate);
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(DataError::BadParam {
            name: "spread",
            value: spread,
        });
    }
    let n = n_train + n_test;
    if n < 2 * classes {
        return Err(DataError::TooSmall(n));
    }
    let gauss = Normal::new(0.0, spread).expect("positive sigma");
    let mut features = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
        features.push((3.0 * angle.cos() + gauss.sample(rng)) as f32);
        features.push((3.0 * angle.sin() + gauss.sample(rng)) as f32);
        labels.push(c);
    }
    standardize(&mut features, 2);
    shuffled_split(
        features,
        labels,
        2,
        n_train,
        DataLayout::Vector { dim: 2 },
        classes,
        rng,
    )
}

/// Grayscale images of one concentric ring per class; the ring radius is
/// the class signature. Pixel values lie in [0, 1]; the image center sits
/// at (side-1)/2 so axis flips preserve every pixel's radius exactly.
pub fn rings(
    n_train: usize,
    n_test: usize,
    classes: usize,
    side: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SplitDataset> {
    if classes < 2 {
        return Err(DataError::Degenerate);
    }
    if side < 6 {
        return Err(DataError::BadParam {
            name: "side",
            value: side as f64,
        });
    }
    let n = n_train + n_test;
    if n < 2 * classes {
        return Err(DataError::TooSmall(n));
    }
    let center = (side as f64 - 1.0) / 2.0;
    let r_max = center - 0.5;
    let pixel_noise = Normal::new(0.0, 0.02).expect("positive sigma");
    let mut features = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        // radii spread over (0, r_max], well separated between classes
        let radius = r_max * (c as f64 + 1.0) / classes as f64;
        let amplitude = rng.gen_range(0.75..1.0);
        let thickness = 0.6 + rng.gen_range(-0.05..0.05);
        for py in 0..side {
            for px in 0..side {
                let dy = py as f64 - center;
                let dx = px as f64 - center;
                let dist = (dx * dx + dy * dy).sqrt();
                let z = (dist - radius) / thickness;
                let v = amplitude * (-0.5 * z * z).exp() + pixel_noise.sample(rng);
                features.push(v.clamp(0.0, 1.0) as f32);
            }
        }
        labels.push(c);
    }
    shuffled_split(
        features,
        labels,
        side * side,
        n_train,
        DataLayout::Image {
            height: side,
            width: side,
        },
        classes,
        rng,
    )
}

const IDX_MAGIC_LABELS: u32 = 0x0000_0801;
const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;

fn read_file(path: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(Path::new(path))
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| DataError::Io {
            path: path.to_string(),
            source,
        })?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::MalformedDataset {
            path: path.to_string(),
            detail: format!("header truncated at byte {offset}"),
        })
}

/// Loads an IDX image file (magic 0x00000803) as rows of [0, 1] pixels.
pub fn load_idx_images(path: &str) -> Result<(Vec<f32>, usize, usize, usize)> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IDX_MAGIC_IMAGES {
        return Err(DataError::MalformedDataset {
            path: path.to_string(),
            detail: format!("magic {magic:#010x}, expected {IDX_MAGIC_IMAGES:#010x}"),
        });
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let height = be_u32(&bytes, 8, path)? as usize;
    let width = be_u32(&bytes, 12, path)? as usize;
    let expected = 16 + count * height * width;
    if bytes.len() != expected {
        return Err(DataError::MalformedDataset {
            path: path.to_string(),
            detail: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    let features = bytes[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Ok((features, count, height, width))
}

/// Loads an IDX label file (magic 0x00000801).
pub fn load_idx_labels(path: &str) -> Result<Vec<usize>> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IDX_MAGIC_LABELS {
        return Err(DataError::MalformedDataset {
            path: path.to_string(),
            detail: format!("magic {magic:#010x}, expected {IDX_MAGIC_LABELS:#010x}"),
        });
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(DataError::MalformedDataset {
            path: path.to_string(),
            detail: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Joins an IDX image file and its label file into one dataset.
pub fn load_idx_pair(images_path: &str, labels_path: &str) -> Result<Dataset> {
    let (features, count, height, width) = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if labels.len() != count {
        return Err(DataError::MalformedDataset {
            path: labels_path.to_string(),
            detail: format!("{} labels for {count} images", labels.len()),
        });
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(
        features,
        labels,
        DataLayout::Image { height, width },
        num_classes,
    )
}

/// Serializes images to IDX bytes (inverse of [`load_idx_images`]).
pub fn idx_image_bytes(features: &[f32], count: usize, height: usize, width: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + count * height * width);
    out.extend_from_slice(&IDX_MAGIC_IMAGES.to_be_bytes());
    out.extend_from_slice(&(count as u32).to_be_bytes());
    out.extend_from_slice(&(height as u32).to_be_bytes());
    out.extend_from_slice(&(width as u32).to_be_bytes());
    out.extend(
        features
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

/// Serializes labels to IDX bytes (inverse of [`load_idx_labels`]).
pub fn idx_label_bytes(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_MAGIC_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}

/// Uniform `per_axis x per_axis` grid over a slightly expanded 2-D bounding
/// box; the standard probe set for consistency on planar tasks.
pub fn probe_grid_2d(lo: &[f32], hi: &[f32], per_axis: usize) -> Vec<f32> {
    debug_assert_eq!(lo.len(), 2);
    let margin = 0.25f32;
    let mut probes = Vec::with_capacity(per_axis * per_axis * 2);
    for iy in 0..per_axis {
        for ix in 0..per_axis {
            let fx = ix as f32 / (per_axis - 1).max(1) as f32;
            let fy = iy as f32 / (per_axis - 1).max(1) as f32;
            probes.push(lo[0] - margin + (hi[0] - lo[0] + 2.0 * margin) * fx);
            probes.push(lo[1] - margin + (hi[1] - lo[1] + 2.0 * margin) * fy);
        }
    }
    probes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn two_moons_deterministic() {
        let spec = DatasetSpec::TwoMoons {
            n_train: 100,
            n_test: 50,
            noise: 0.1,
        };
        let a = load_dataset(&spec, 3).unwrap();
        let b = load_dataset(&spec, 3).unwrap();
        assert_eq!(a.train.features(), b.train.features());
        assert_eq!(a.test.labels(), b.test.labels());
        let c = load_dataset(&spec, 4).unwrap();
        assert_ne!(a.train.features(), c.train.features());
    }

    #[test]
    fn two_moons_standardized_and_balanced() {
        let split = load_dataset(
            &DatasetSpec::TwoMoons {
                n_train: 800,
                n_test: 200,
                noise: 0.1,
            },
            7,
        )
        .unwrap();
        let all: Vec<f32> = split
            .train
            .features()
            .iter()
            .chain(split.test.features())
            .copied()
            .collect();
        let n = all.len() / 2;
        for j in 0..2 {
            let mean: f32 = (0..n).map(|i| all[i * 2 + j]).sum::<f32>() / n as f32;
            assert!(mean.abs() < 1e-3, "axis {j} mean {mean}");
        }
        assert_eq!(split.train.len(), 800);
        assert_eq!(split.test.len(), 200);
        assert_eq!(split.train.distinct_labels(), 2);
    }

    #[test]
    fn blobs_have_k_classes() {
        let split = load_dataset(
            &DatasetSpec::Blobs {
                n_train: 300,
                n_test: 100,
                classes: 4,
                spread: 0.5,
            },
            1,
        )
        .unwrap();
        assert_eq!(split.train.num_classes(), 4);
        assert_eq!(split.train.distinct_labels(), 4);
    }

    #[test]
    fn rings_pixels_in_unit_range() {
        let mut rng = stream_rng(5, stream::DATASET);
        let split = rings(60, 30, 3, 10, &mut rng).unwrap();
        assert_eq!(split.train.dim(), 100);
        assert!(split
            .train
            .features()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(
            split.train.layout(),
            DataLayout::Image {
                height: 10,
                width: 10
            }
        );
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("img.idx");
        let lab_path = dir.path().join("lab.idx");
        let pixels: Vec<f32> = (0..2 * 4 * 3).map(|i| (i % 256) as f32 / 255.0).collect();
        std::fs::write(&img_path, idx_image_bytes(&pixels, 2, 4, 3)).unwrap();
        std::fs::write(&lab_path, idx_label_bytes(&[1, 0])).unwrap();
        let ds = load_idx_pair(
            img_path.to_str().unwrap(),
            lab_path.to_str().unwrap(),
        )
        .unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 12);
        assert_eq!(ds.labels(), &[1, 0]);
        assert!(ds.features().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn idx_truncation_names_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("img.idx");
        let mut bytes = idx_image_bytes(&vec![0.5; 24], 2, 4, 3);
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&img_path, bytes).unwrap();
        let err = load_idx_images(img_path.to_str().unwrap()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 40 bytes"), "{msg}");
        assert!(msg.contains("found 35"), "{msg}");
    }

    #[test]
    fn idx_bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.idx");
        std::fs::write(&path, 0x12345678u32.to_be_bytes()).unwrap();
        assert!(load_idx_images(path.to_str().unwrap()).is_err());
        assert!(load_idx_labels(path.to_str().unwrap()).is_err());
    }

    #[test]
    fn probe_grid_covers_box() {
        let probes = probe_grid_2d(&[-1.0, -2.0], &[1.0, 2.0], 8);
        assert_eq!(probes.len(), 8 * 8 * 2);
        let xs: Vec<f32> = probes.iter().step_by(2).copied().collect();
        assert!(xs.iter().cloned().fold(f32::INFINITY, f32::min) <= -1.0);
        assert!(xs.iter().cloned().fold(f32::NEG_INFINITY, f32::max) >= 1.0);
    }

    #[test]
    fn bounding_box_is_tight() {
        let ds = Dataset::new(
            vec![0.0, 5.0, -1.0, 2.0],
            vec![0, 1],
            DataLayout::Vector { dim: 2 },
            2,
        )
        .unwrap();
        let (lo, hi) = ds.bounding_box();
        assert_eq!(lo, vec![-1.0, 2.0]);
        assert_eq!(hi, vec![0.0, 5.0]);
    }
}
