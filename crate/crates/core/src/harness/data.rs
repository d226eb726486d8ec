//! Dataset loading (MNIST IDX, CIFAR-10 binary), synthetic shapes, and batching.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MNIST_MEAN: f32 = 0.1307;
pub const MNIST_STD: f32 = 0.3081;
pub const CIFAR_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "KAGN_DATA_DIR";

/// `$KAGN_DATA_DIR`, or `./data` when unset.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels { labels: Vec<usize>, num_classes: usize },
    /// Binary masks, `[N, 1, H, W]` flattened.
    Masks(Vec<f32>),
}

/// Normalized images `[N, C, H, W]` with labels or masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub images: Vec<f32>,
    pub targets: Targets,
}

/// One mini-batch converted to the model's element type.
#[derive(Debug, Clone)]
pub struct Batch<T: Real> {
    pub images: Tensor<T>,
    pub target: BatchTarget<T>,
}

#[derive(Debug, Clone)]
pub enum BatchTarget<T: Real> {
    Labels(Vec<usize>),
    Masks(Tensor<T>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len() / self.image_len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Labels { num_classes, .. } => Some(*num_classes),
            Targets::Masks(_) => None,
        }
    }

    /// First `n` samples (all if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        self.slice(0, n.min(self.len()))
    }

    /// Samples `start..start + n`.
    pub fn slice(&self, start: usize, n: usize) -> Dataset {
        let il = self.image_len();
        let ml = self.height * self.width;
        let targets = match &self.targets {
            Targets::Labels { labels, num_classes } => Targets::Labels {
                labels: labels[start..start + n].to_vec(),
                num_classes: *num_classes,
            },
            Targets::Masks(m) => Targets::Masks(m[start * ml..(start + n) * ml].to_vec()),
        };
        Dataset {
            name: self.name.clone(),
            channels: self.channels,
            height: self.height,
            width: self.width,
            images: self.images[start * il..(start + n) * il].to_vec(),
            targets,
        }
    }

    /// Gathers `indices` into a batch; `flip` mirrors each image (and mask)
    /// horizontally with probability 1/2.
    pub fn batch<T: Real>(&self, indices: &[usize], flip: bool, rng: &mut ChaCha8Rng) -> Result<Batch<T>> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (c, h, w) = (self.channels, self.height, self.width);
        let il = self.image_len();
        let mut imgs = Vec::with_capacity(indices.len() * il);
        let mut masks = Vec::new();
        for &i in indices {
            let mirror = flip && rng.random::<bool>();
            let src = self.image(i);
            push_image(&mut imgs, src, c, h, w, mirror);
            if let Targets::Masks(m) = &self.targets {
                push_image(&mut masks, &m[i * h * w..(i + 1) * h * w], 1, h, w, mirror);
            }
        }
        let b = indices.len();
        let images = Tensor::new(imgs.into_iter().map(|v| T::lit(v as f64)).collect(), &[b, c, h, w])?;
        let target = match &self.targets {
            Targets::Labels { labels, .. } => BatchTarget::Labels(indices.iter().map(|&i| labels[i]).collect()),
            Targets::Masks(_) => BatchTarget::Masks(Tensor::new(
                masks.into_iter().map(|v| T::lit(v as f64)).collect(),
                &[b, 1, h, w],
            )?),
        };
        Ok(Batch { images, target })
    }

    /// Index order for one epoch.
    pub fn epoch_order(&self, shuffle: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        if shuffle {
            idx.shuffle(rng);
        }
        idx
    }
}

fn push_image(out: &mut Vec<f32>, src: &[f32], c: usize, h: usize, w: usize, mirror: bool) {
    if !mirror {
        out.extend_from_slice(src);
        return;
    }
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
            out.extend(row.iter().rev());
        }
    }
}

fn read_u32_be(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Corrupt(format!("{}: truncated header", path.display())))
}

/// Raw pixel bytes and (count, rows, cols) of an IDX image file.
pub fn read_idx_images(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let bytes = fs::read(path)?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != 0x0000_0803 {
        return Err(Error::Format(format!(
            "{}: expected IDX image magic 0x00000803, found {magic:#010x}",
            path.display()
        )));
    }
    let n = read_u32_be(&bytes, 4, path)? as usize;
    let rows = read_u32_be(&bytes, 8, path)? as usize;
    let cols = read_u32_be(&bytes, 12, path)? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(Error::Corrupt(format!(
            "{}: {} bytes, header promises {need}",
            path.display(),
            bytes.len()
        )));
    }
    Ok((bytes[16..need].to_vec(), n, rows, cols))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != 0x0000_0801 {
        return Err(Error::Format(format!(
            "{}: expected IDX label magic 0x00000801, found {magic:#010x}",
            path.display()
        )));
    }
    let n = read_u32_be(&bytes, 4, path)? as usize;
    if bytes.len() < 8 + n {
        return Err(Error::Corrupt(format!("{}: truncated labels", path.display())));
    }
    Ok(bytes[8..8 + n].to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Loads MNIST from `dir` (`train-*` / `t10k-*` IDX files), normalized with
/// the dataset mean and standard deviation.
pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let (pixels, n, rows, cols) = read_idx_images(&dir.join(format!("{prefix}-images-idx3-ubyte")))?;
    let labels = read_idx_labels(&dir.join(format!("{prefix}-labels-idx1-ubyte")))?;
    if labels.len() != n {
        return Err(Error::Format(format!("{n} images but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Format(format!("MNIST label {bad} out of range")));
    }
    let images = pixels
        .iter()
        .map(|&p| (p as f32 / 255.0 - MNIST_MEAN) / MNIST_STD)
        .collect();
    Ok(Dataset {
        name: "mnist".into(),
        channels: 1,
        height: rows,
        width: cols,
        images,
        targets: Targets::Labels {
            labels: labels.into_iter().map(usize::from).collect(),
            num_classes: 10,
        },
    })
}

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Loads and concatenates CIFAR-10 binary batch files.
pub fn load_cifar(paths: &[PathBuf]) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = fs::read(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Corrupt(format!(
                "{}: {} bytes is not a whole number of {CIFAR_RECORD}-byte records",
                path.display(),
                bytes.len()
            )));
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            if rec[0] > 9 {
                return Err(Error::Format(format!("{}: label {} out of range", path.display(), rec[0])));
            }
            labels.push(rec[0] as usize);
            for (i, &p) in rec[1..].iter().enumerate() {
                let c = i / 1024;
                images.push((p as f32 / 255.0 - CIFAR_MEAN[c]) / CIFAR_STD[c]);
            }
        }
    }
    Ok(Dataset {
        name: "cifar10".into(),
        channels: 3,
        height: 32,
        width: 32,
        images,
        targets: Targets::Labels {
            labels,
            num_classes: 10,
        },
    })
}

/// CIFAR-10 split from a directory of `data_batch_{1..5}.bin` / `test_batch.bin`.
pub fn load_cifar_dir(dir: &Path, split: Split) -> Result<Dataset> {
    let files: Vec<PathBuf> = match split {
        Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    load_cifar(&files)
}

/// Grayscale images of 1–3 random ellipses and rectangles on a dark
/// background with Gaussian pixel noise, plus their binary masks.
pub fn synth_shapes(n: usize, size: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n * size * size);
    let mut masks = Vec::with_capacity(n * size * size);
    let s = size as f64;
    for _ in 0..n {
        let mut img = vec![0.0f64; size * size];
        let mut mask = vec![0.0f32; size * size];
        let shapes = rng.random_range(1..=3);
        for _ in 0..shapes {
            let ellipse = rng.random::<bool>();
            let cx = rng.random_range(0.2..0.8) * s;
            let cy = rng.random_range(0.2..0.8) * s;
            let rx = rng.random_range(0.1..0.25) * s;
            let ry = rng.random_range(0.1..0.25) * s;
            let level = rng.random_range(0.6..1.0);
            for y in 0..size {
                for x in 0..size {
                    let dx = (x as f64 + 0.5 - cx) / rx;
                    let dy = (y as f64 + 0.5 - cy) / ry;
                    let inside = if ellipse {
                        dx * dx + dy * dy <= 1.0
                    } else {
                        dx.abs() <= 1.0 && dy.abs() <= 1.0
                    };
                    if inside {
                        img[y * size + x] = level;
                        mask[y * size + x] = 1.0;
                    }
                }
            }
        }
        for v in img {
            let noise: f64 = rng.sample(StandardNormal);
            images.push((v + 0.1 * noise) as f32);
        }
        masks.extend(mask);
    }
    Dataset {
        name: "synth_shapes".into(),
        channels: 1,
        height: size,
        width: size,
        images,
        targets: Targets::Masks(masks),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_is_seeded_and_binary() {
        let a = synth_shapes(20, 16, 3);
        let b = synth_shapes(20, 16, 3);
        assert_eq!(a, b);
        let Targets::Masks(m) = &a.targets else { panic!() };
        assert!(m.iter().all(|&v| v == 0.0 || v == 1.0));
        assert_ne!(a, synth_shapes(20, 16, 4));
    }

    #[test]
    fn flip_mirrors_rows() {
        let d = Dataset {
            name: "t".into(),
            channels: 1,
            height: 1,
            width: 3,
            images: vec![1.0, 2.0, 3.0],
            targets: Targets::Labels { labels: vec![0], num_classes: 2 },
        };
        let mut out = Vec::new();
        push_image(&mut out, d.image(0), 1, 1, 3, true);
        assert_eq!(out, vec![3.0, 2.0, 1.0]);
    }
}
