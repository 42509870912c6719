//! MNIST IDX loading, pixel scaling and seeded batching.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, Tensor};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const CLASSES: usize = 10;

/// Environment variable naming the directory with the four MNIST files.
pub const MNIST_DIR_ENV: &str = "GCNN_MNIST_DIR";
pub const DEFAULT_MNIST_DIR: &str = "data/mnist";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Reads a file, gunzipping it when the name ends in `.gz`.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = fs::read(path).map_err(io_err)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io_err)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    if bytes.len() < 16 {
        return Err(format_err(path, format!("truncated header: expected 16 bytes, got {}", bytes.len())));
    }
    if be_u32(bytes, 0) != IMAGE_MAGIC {
        return Err(format_err(path, "not an IDX image file"));
    }
    let (count, rows, cols) = (be_u32(bytes, 4) as usize, be_u32(bytes, 8) as usize, be_u32(bytes, 12) as usize);
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(format_err(
            path,
            format!("expected {expected} bytes for {count}x{rows}x{cols} images, got {}", bytes.len()),
        ));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    if bytes.len() < 8 {
        return Err(format_err(path, format!("truncated header: expected 8 bytes, got {}", bytes.len())));
    }
    if be_u32(bytes, 0) != LABEL_MAGIC {
        return Err(format_err(path, "not an IDX label file"));
    }
    let count = be_u32(bytes, 4) as usize;
    if bytes.len() != 8 + count {
        return Err(format_err(
            path,
            format!("expected {} bytes for {count} labels, got {}", 8 + count, bytes.len()),
        ));
    }
    let labels = bytes[8..].to_vec();
    if let Some(pos) = labels.iter().position(|&l| l as usize >= CLASSES) {
        return Err(format_err(path, format!("label {} at index {pos} is not a digit", labels[pos])));
    }
    Ok(labels)
}

pub fn load_idx_images(path: &Path) -> Result<IdxImages> {
    parse_idx_images(&read_maybe_gz(path)?, path)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&read_maybe_gz(path)?, path)
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Images as an N×1×H×W tensor with values `byte / 256`, plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl Dataset {
    pub fn from_idx(images: IdxImages, labels: &[u8], split: Split) -> Result<Dataset> {
        if images.count != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.count,
                labels.len()
            )));
        }
        let data = images.pixels.iter().map(|&b| f64::from(b) / 256.0).collect();
        Ok(Dataset {
            images: Tensor::new(vec![images.count, 1, images.rows, images.cols], data)?,
            labels: labels.iter().map(|&l| l as usize).collect(),
            split,
        })
    }

    pub fn load(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
        Dataset::from_idx(load_idx_images(images)?, &load_idx_labels(labels)?, split)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Channels, height, width of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.images.select(indices)?;
        Ok((x, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    /// The first `n` samples.
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        let (images, labels) = self.batch(&idx)?;
        Ok(Dataset {
            images,
            labels,
            split: self.split,
        })
    }
}

/// Paths of the four MNIST files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistPaths {
    /// Standard file names inside `dir`, preferring uncompressed files and
    /// falling back to `.gz` (also accepts the `name.idx3-ubyte` spelling).
    pub fn in_dir(dir: &Path) -> MnistPaths {
        let pick = |stem: &str, alt: &str| {
            let candidates = [
                dir.join(stem),
                dir.join(format!("{stem}.gz")),
                dir.join(alt),
                dir.join(format!("{alt}.gz")),
            ];
            candidates.iter().find(|p| p.is_file()).cloned().unwrap_or_else(|| candidates[0].clone())
        };
        MnistPaths {
            train_images: pick("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
            train_labels: pick("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
            test_images: pick("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
            test_labels: pick("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
        }
    }

    pub fn all_exist(&self) -> bool {
        [&self.train_images, &self.train_labels, &self.test_images, &self.test_labels]
            .iter()
            .all(|p| p.is_file())
    }

    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        let train = Dataset::load(&self.train_images, &self.train_labels, Split::Train)?;
        let test = Dataset::load(&self.test_images, &self.test_labels, Split::Test)?;
        Ok((train, test))
    }
}

/// `$GCNN_MNIST_DIR`, or `data/mnist`.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os(MNIST_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_MNIST_DIR))
}

pub fn epoch_permutation(n: usize, epoch_seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    idx
}

/// Mini-batches over one seeded permutation; the last batch may be short.
pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        Some(self.ds.batch(idx).expect("permutation indices are in range"))
    }
}

pub fn make_batches(ds: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<Batches<'_>> {
    if batch_size == 0 || batch_size > ds.len() {
        return Err(Error::invalid(format!(
            "batch size {batch_size} must be in 1..={}",
            ds.len()
        )));
    }
    Ok(Batches {
        ds,
        order: epoch_permutation(ds.len(), epoch_seed),
        batch_size,
        pos: 0,
    })
}

/// A deterministic 10-class stand-in for MNIST: each class is a fixed set of
/// thick strokes on a 28×28 canvas, drawn with a random shift, stroke
/// intensity jitter and pixel noise, then quantized to bytes.
pub fn synthetic(count: usize, seed: u64, split: Split) -> Dataset {
    const SIDE: usize = 28;
    let mut proto_rng = ChaCha8Rng::seed_from_u64(0x5eed_d1617);
    let strokes: Vec<Vec<[f64; 4]>> = (0..CLASSES)
        .map(|_| {
            (0..3)
                .map(|_| {
                    [
                        proto_rng.random_range(7.0..21.0),
                        proto_rng.random_range(7.0..21.0),
                        proto_rng.random_range(7.0..21.0),
                        proto_rng.random_range(7.0..21.0),
                    ]
                })
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(count * SIDE * SIDE);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let label = rng.random_range(0..CLASSES);
        let (dx, dy) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let gain = rng.random_range(0.7..1.0);
        for i in 0..SIDE {
            for j in 0..SIDE {
                let (y, x) = (i as f64 - dy, j as f64 - dx);
                let d = strokes[label]
                    .iter()
                    .map(|&[y0, x0, y1, x1]| segment_distance(y, x, y0, x0, y1, x1))
                    .fold(f64::INFINITY, f64::min);
                let ink = gain * (1.0 - (d / 2.0).powi(2)).max(0.0) + rng.random_range(0.0..0.15);
                pixels.push((ink.min(1.0) * 255.0) as u8);
            }
        }
        labels.push(label as u8);
    }
    let images = IdxImages {
        count,
        rows: SIDE,
        cols: SIDE,
        pixels,
    };
    Dataset::from_idx(images, &labels, split).expect("consistent synthetic data")
}

fn segment_distance(y: f64, x: f64, y0: f64, x0: f64, y1: f64, x1: f64) -> f64 {
    let (vy, vx) = (y1 - y0, x1 - x0);
    let len2 = vy * vy + vx * vx;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((y - y0) * vy + (x - x0) * vx) / len2).clamp(0.0, 1.0)
    };
    let (py, px) = (y0 + t * vy - y, x0 + t * vx - x);
    (py * py + px * px).sqrt()
}
