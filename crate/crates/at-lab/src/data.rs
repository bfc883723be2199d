//! Datasets (synthetic blobs and IDX files) and metric persistence.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diagnostics::MetricsRecord;
use crate::error::{Error, Result};
use crate::seeds::{self, Purpose};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled classification data with features in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub classes: usize,
    pub name: String,
    pub split: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.shape()[1]
    }

    /// Gathers the rows at `indices` into a contiguous batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.x.data()[i * d..(i + 1) * d]);
            labels.push(self.y[i]);
        }
        (
            Tensor::matrix(indices.len(), d, data).expect("gather preserves shape"),
            labels,
        )
    }

    /// First `n` samples (or all of them, if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let indices: Vec<usize> = (0..n).collect();
        let (x, y) = self.batch(&indices);
        Dataset {
            x,
            y,
            classes: self.classes,
            name: self.name.clone(),
            split: self.split.clone(),
        }
    }
}

/// Gaussian class clusters around seeded random centers in `[0.2, 0.8]^d`,
/// clipped to the `[0, 1]` box.
pub fn gen_blobs(
    n_per_class: usize,
    dim: usize,
    classes: usize,
    spread: f64,
    seed: u64,
    split: &str,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "blobs need >= 2 classes, got {classes}"
        )));
    }
    if spread <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "spread must be > 0, got {spread}"
        )));
    }
    // Centers depend only on (seed, class); train/test splits share them.
    let mut center_rng = seeds::stream(seed, Purpose::Data, 0, 0);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| 0.2 + 0.6 * center_rng.gen::<f64>()).collect())
        .collect();

    let split_tag = match split {
        "train" => 1,
        "test" => 2,
        _ => 3,
    };
    let mut rng = seeds::stream(seed, Purpose::Data, split_tag, 0);
    let n = n_per_class * classes;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        for _ in 0..n_per_class {
            for j in 0..dim {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push((centers[c][j] + spread * noise).clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    Ok(Dataset {
        x: Tensor::matrix(n, dim, data)?,
        y: labels,
        classes,
        name: "blobs".into(),
        split: split.into(),
    })
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    let slice = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| Error::IdxTruncated {
            path: path.into(),
            expected: offset + 4,
            got: bytes.len(),
        })?;
    Ok(u32::from_be_bytes(slice.try_into().unwrap()))
}

/// Parses an IDX image/label file pair (the MNIST container format).
/// Pixels are scaled to `[0, 1]` by dividing by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_name = images_path.display().to_string();
    let lab_name = labels_path.display().to_string();
    let img = std::fs::read(images_path).map_err(|e| Error::io(&*img_name, e))?;
    let lab = std::fs::read(labels_path).map_err(|e| Error::io(&*lab_name, e))?;

    let magic = read_u32_be(&img, 0, &img_name)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxBadMagic {
            path: img_name,
            expected: IDX_IMAGES_MAGIC,
            got: magic,
        });
    }
    let n = read_u32_be(&img, 4, &img_name)? as usize;
    let rows = read_u32_be(&img, 8, &img_name)? as usize;
    let cols = read_u32_be(&img, 12, &img_name)? as usize;
    let dim = rows * cols;
    let payload = &img[16..];
    if payload.len() < n * dim {
        return Err(Error::IdxTruncated {
            path: img_name,
            expected: n * dim,
            got: payload.len(),
        });
    }

    let magic = read_u32_be(&lab, 0, &lab_name)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxBadMagic {
            path: lab_name,
            expected: IDX_LABELS_MAGIC,
            got: magic,
        });
    }
    let n_lab = read_u32_be(&lab, 4, &lab_name)? as usize;
    if n_lab != n {
        return Err(Error::IdxCountMismatch {
            images: n,
            labels: n_lab,
        });
    }
    let lab_payload = &lab[8..];
    if lab_payload.len() < n {
        return Err(Error::IdxTruncated {
            path: lab_name,
            expected: n,
            got: lab_payload.len(),
        });
    }

    let data: Vec<f64> = payload[..n * dim].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = lab_payload[..n].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Ok(Dataset {
        x: Tensor::matrix(n, dim, data)?,
        y: labels,
        classes,
        name: "idx".into(),
        split: String::new(),
    })
}

/// Renders with 10 significant digits, the fixed precision of all metric
/// files.
pub fn fmt_sig10(v: f64) -> String {
    if v == 0.0 {
        return "0.0".into();
    }
    format!("{v:.9e}")
}

pub const METRICS_CSV_HEADER: &str =
    "epoch,nat_train,nat_test,rob_train,rob_test,gap,lambda,lr,gnorm_ce,gnorm_cons";

pub fn metrics_csv(history: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.epoch,
            fmt_sig10(r.nat_train),
            fmt_sig10(r.nat_test),
            fmt_sig10(r.rob_train),
            fmt_sig10(r.rob_test),
            fmt_sig10(r.robust_gap),
            fmt_sig10(r.lambda),
            fmt_sig10(r.lr),
            fmt_sig10(r.grad_norm_ce),
            fmt_sig10(r.grad_norm_cons),
        ));
    }
    out
}

pub fn write_metrics_csv(history: &[MetricsRecord], path: &Path) -> Result<()> {
    if history.is_empty() {
        return Err(Error::InvalidConfig("empty metrics history".into()));
    }
    std::fs::write(path, metrics_csv(history)).map_err(|e| Error::io(path.display().to_string(), e))
}

/// JSON mirror of the metrics history plus an echo of the run config.
pub fn metrics_json(
    history: &[MetricsRecord],
    config_echo: &serde_json::Value,
) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "config": config_echo,
        "history": history,
    }))
}

pub fn write_metrics_json(
    history: &[MetricsRecord],
    config_echo: &serde_json::Value,
    path: &Path,
) -> Result<()> {
    if history.is_empty() {
        return Err(Error::InvalidConfig("empty metrics history".into()));
    }
    let value = metrics_json(history, config_echo)?;
    let text = serde_json::to_string_pretty(&value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Builds an in-memory IDX image/label byte pair; the inverse of
/// [`load_idx`], mainly for fixtures and tests.
pub fn idx_bytes(images: &[Vec<u8>], rows: usize, cols: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lab = Vec::new();
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}
