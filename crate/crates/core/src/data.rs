//! MNIST IDX loading, IDX writing, and synthetic blob datasets for fast
//! tests.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// A labelled classification dataset. Images are stored flat, row-major,
/// scaled to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
    pub feature_dim: usize,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// Gather rows by index into one contiguous batch buffer.
    pub fn gather(&self, indices: &[usize], out: &mut Vec<f32>, labels: &mut Vec<u8>) {
        out.clear();
        labels.clear();
        for &i in indices {
            out.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
    }
}

fn read_u32_be(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

/// Loads an image/label IDX pair. Bytes are scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let mut img = BufReader::new(File::open(images_path)?);
    let magic = read_u32_be(&mut img)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad images magic {:#010x} in {} (expected {:#010x})",
            magic,
            images_path.display(),
            IDX_IMAGES_MAGIC
        )));
    }
    let n = read_u32_be(&mut img)? as usize;
    let rows = read_u32_be(&mut img)? as usize;
    let cols = read_u32_be(&mut img)? as usize;
    let feature_dim = rows * cols;
    let mut raw = vec![0u8; n * feature_dim];
    img.read_exact(&mut raw)?;

    let mut lab = BufReader::new(File::open(labels_path)?);
    let magic = read_u32_be(&mut lab)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad labels magic {:#010x} in {} (expected {:#010x})",
            magic,
            labels_path.display(),
            IDX_LABELS_MAGIC
        )));
    }
    let n_labels = read_u32_be(&mut lab)? as usize;
    if n_labels != n {
        return Err(Error::Consistency(format!(
            "images file has {} items but labels file has {}",
            n, n_labels
        )));
    }
    let mut labels = vec![0u8; n_labels];
    lab.read_exact(&mut labels)?;

    let images = raw.iter().map(|&b| b as f32 / 255.0).collect();
    let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(1);
    Ok(Dataset {
        images,
        labels,
        feature_dim,
        classes,
        split,
    })
}

/// Writes a dataset back to an IDX pair. Pixels are rounded to bytes,
/// which is exact for data that came from `load_idx`.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path, rows: usize, cols: usize) -> Result<()> {
    if rows * cols != ds.feature_dim {
        return Err(Error::Config(format!(
            "rows {} x cols {} != feature dim {}",
            rows, cols, ds.feature_dim
        )));
    }
    let mut img = BufWriter::new(File::create(images_path)?);
    img.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    img.write_all(&(ds.len() as u32).to_be_bytes())?;
    img.write_all(&(rows as u32).to_be_bytes())?;
    img.write_all(&(cols as u32).to_be_bytes())?;
    let bytes: Vec<u8> = ds
        .images
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    img.write_all(&bytes)?;

    let mut lab = BufWriter::new(File::create(labels_path)?);
    lab.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    lab.write_all(&(ds.len() as u32).to_be_bytes())?;
    lab.write_all(&ds.labels)?;
    Ok(())
}

/// Loads the standard MNIST file names from one directory.
pub fn load_mnist(data_dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx(
        &data_dir.join("train-images-idx3-ubyte"),
        &data_dir.join("train-labels-idx1-ubyte"),
        Split::Train,
    )?;
    let test = load_idx(
        &data_dir.join("t10k-images-idx3-ubyte"),
        &data_dir.join("t10k-labels-idx1-ubyte"),
        Split::Test,
    )?;
    Ok((train, test))
}

/// Deterministic Gaussian blob dataset: one cluster per class, means laid
/// out on a circle in the first two feature dimensions (a line when
/// dim == 1), clamped to [0, 1]. Linearly separable at the default spread.
pub fn synthetic_blobs(n: usize, classes: usize, dim: usize, seed: u64) -> Result<Dataset> {
    synthetic_blobs_with_spread(n, classes, dim, seed, 0.02)
}

pub fn synthetic_blobs_with_spread(
    n: usize,
    classes: usize,
    dim: usize,
    seed: u64,
    spread: f32,
) -> Result<Dataset> {
    if classes < 1 || dim < 1 {
        return Err(Error::Input("classes and dim must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = vec![vec![0.5f32; dim]; classes];
    for (c, mean) in means.iter_mut().enumerate() {
        let angle = 2.0 * std::f32::consts::PI * c as f32 / classes as f32;
        if dim == 1 {
            mean[0] = (c as f32 + 0.5) / classes as f32;
        } else {
            mean[0] = 0.5 + 0.35 * angle.cos();
            mean[1] = 0.5 + 0.35 * angle.sin();
        }
    }
    let mut images = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for d in 0..dim {
            let g = gaussian(&mut rng);
            images.push((means[c][d] + spread * g).clamp(0.0, 1.0));
        }
        labels.push(c as u8);
    }
    Ok(Dataset {
        images,
        labels,
        feature_dim: dim,
        classes,
        split: Split::Train,
    })
}

/// Box-Muller from two uniforms; deterministic per rng state.
fn gaussian(rng: &mut ChaCha8Rng) -> f32 {
    let u1: f32 = rng.random_range(f32::EPSILON..1.0);
    let u2: f32 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos()
}

/// Seeded Fisher-Yates permutation of 0..n.
pub fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
