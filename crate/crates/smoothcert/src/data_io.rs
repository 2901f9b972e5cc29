//! Dataset ingestion: MNIST IDX files, the synthetic three-class plane task,
//! and deterministic train/test splits.

use crate::error::{AppError, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use smoothcert_core::sampling::{normal_matrix, rotation_2d, stream_rng};
use smoothcert_core::{LabeledDataset, Sample};
use std::fs;
use std::path::Path;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw contents of an IDX image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `count · rows · cols` bytes, image after image, row-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| AppError::Format("IDX header is truncated".into()))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(AppError::Format(format!("bad IDX image magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let len = count * rows * cols;
    let body = &bytes[16..];
    if body.len() != len {
        return Err(AppError::Format(format!("IDX image payload has {} bytes, header promises {len}", body.len())));
    }
    Ok(IdxImages { rows, cols, pixels: body.to_vec() })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(AppError::Format(format!("bad IDX label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(AppError::Format(format!("IDX label payload has {} bytes, header promises {count}", body.len())));
    }
    Ok(body.to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count() as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| AppError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

/// Builds a dataset from parsed IDX contents; pixels are scaled to `[0, 1]`.
pub fn dataset_from_idx(name: &str, images: &IdxImages, labels: &[u8]) -> Result<LabeledDataset> {
    if images.count() != labels.len() {
        return Err(AppError::Mismatch { images: images.count(), labels: labels.len() });
    }
    let dim = images.rows * images.cols;
    let samples = images
        .pixels
        .chunks(dim.max(1))
        .zip(labels)
        .map(|(px, &l)| Sample { x: px.iter().map(|&p| p as f64 / 255.0).collect(), label: l as usize })
        .collect();
    let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0).max(10);
    Ok(LabeledDataset::new(name, dim, classes, samples)?)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = parse_idx_images(&read(images_path)?)?;
    let labels = parse_idx_labels(&read(labels_path)?)?;
    dataset_from_idx("mnist", &images, &labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Loads the standard MNIST file pair from `dir` and average-pools by `pool`
/// (1 keeps the full 28×28 resolution).
pub fn load_mnist(dir: &Path, split: Split, pool: usize) -> Result<LabeledDataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let ds = load_idx(&dir.join(format!("{prefix}-images-idx3-ubyte")), &dir.join(format!("{prefix}-labels-idx1-ubyte")))?;
    if pool <= 1 {
        return Ok(ds);
    }
    let side = (ds.dim as f64).sqrt().round() as usize;
    avg_pool(&ds, side, pool)
}

/// Average pooling of square `side × side` images over `factor × factor` cells.
pub fn avg_pool(ds: &LabeledDataset, side: usize, factor: usize) -> Result<LabeledDataset> {
    if side * side != ds.dim || factor == 0 || !side.is_multiple_of(factor) {
        return Err(AppError::Config(format!("cannot pool {}-pixel images of side {side} by {factor}", ds.dim)));
    }
    let out = side / factor;
    let norm = (factor * factor) as f64;
    let samples = ds
        .samples
        .iter()
        .map(|s| {
            let mut x = vec![0.0; out * out];
            for r in 0..side {
                for c in 0..side {
                    x[(r / factor) * out + c / factor] += s.x[r * side + c] / norm;
                }
            }
            Sample { x, label: s.label }
        })
        .collect();
    Ok(LabeledDataset::new(ds.name.clone(), out * out, ds.num_classes, samples)?)
}

/// Synthetic plane task: elongated Gaussian blobs, one per class, rotated about the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toy2DConfig {
    pub num_per_class: usize,
    pub class_centers: Vec<[f64; 2]>,
    /// Standard deviation across the blob, before rotation.
    pub spread: f64,
    /// Standard deviation along the first axis divided by `spread`.
    pub elongation: f64,
    pub rotation_deg: f64,
    pub seed: u64,
}

impl Default for Toy2DConfig {
    /// Three parallel stripes along the first axis, turned by 45°.
    fn default() -> Self {
        Self {
            num_per_class: 200,
            class_centers: vec![[0.0, -2.0], [0.0, 0.0], [0.0, 2.0]],
            spread: 0.35,
            elongation: 6.0,
            rotation_deg: 45.0,
            seed: 0,
        }
    }
}

impl Toy2DConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_centers.len() < 2 {
            return Err(AppError::Config("toy2d needs at least two class centers".into()));
        }
        for (i, a) in self.class_centers.iter().enumerate() {
            if self.class_centers[..i].contains(a) {
                return Err(AppError::Config("toy2d class centers must be distinct".into()));
            }
        }
        if !(self.spread > 0.0 && self.elongation > 0.0) || self.num_per_class == 0 {
            return Err(AppError::Config("toy2d spread, elongation and num_per_class must be positive".into()));
        }
        Ok(())
    }
}

pub fn gen_toy2d(cfg: &Toy2DConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let rot = rotation_2d(cfg.rotation_deg);
    let mut samples = Vec::with_capacity(cfg.num_per_class * cfg.class_centers.len());
    for (k, c) in cfg.class_centers.iter().enumerate() {
        let z = normal_matrix(&mut stream_rng(cfg.seed, k as u64), cfg.num_per_class, 2);
        for i in 0..cfg.num_per_class {
            let u = c[0] + cfg.spread * cfg.elongation * z[(i, 0)];
            let v = c[1] + cfg.spread * z[(i, 1)];
            let x = vec![rot[(0, 0)] * u + rot[(0, 1)] * v, rot[(1, 0)] * u + rot[(1, 1)] * v];
            samples.push(Sample { x, label: k });
        }
    }
    Ok(LabeledDataset::new("toy2d", 2, cfg.class_centers.len(), samples)?)
}

/// Shuffled split into `(train, test)` with `round(fraction · n)` training samples.
pub fn train_test_split(ds: &LabeledDataset, fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(AppError::Config(format!("split fraction must be in (0,1), got {fraction}")));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let n_train = (fraction * ds.len() as f64).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| ds.samples[i].clone()).collect::<Vec<_>>();
    let train = LabeledDataset::new(ds.name.clone(), ds.dim, ds.num_classes, pick(&order[..n_train]))?;
    let test = LabeledDataset::new(ds.name.clone(), ds.dim, ds.num_classes, pick(&order[n_train..]))?;
    Ok((train, test))
}

/// Writes a 2-D dataset as `x1,x2,label` rows.
pub fn write_toy_csv(path: &Path, ds: &LabeledDataset) -> Result<()> {
    if ds.dim != 2 {
        return Err(AppError::Dim(ds.dim));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    let fail = |e: csv::Error| AppError::Data(format!("{}: {e}", path.display()));
    w.write_record(["x1", "x2", "label"]).map_err(fail)?;
    for s in &ds.samples {
        w.write_record([s.x[0].to_string(), s.x[1].to_string(), s.label.to_string()]).map_err(fail)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}
