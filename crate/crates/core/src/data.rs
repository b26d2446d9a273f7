//! Datasets: synthetic Gaussian blobs for desk-scale A/B experiments, the
//! big-endian IDX image/label format, CSV import/export, and seeded epoch
//! batching.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SilaError};
use crate::rng::{derive_seed, seeded_rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Validation => write!(f, "validation"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Immutable labelled feature matrix.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Vec<f64>,
    rows: usize,
    cols: usize,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        cols: usize,
        labels: Vec<usize>,
        classes: usize,
        split: Split,
    ) -> Result<Self> {
        if cols == 0 || labels.is_empty() || features.len() != labels.len() * cols {
            return Err(SilaError::InvalidSpec(format!(
                "dataset with {} features, {} labels and {} columns is inconsistent",
                features.len(),
                labels.len(),
                cols
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(SilaError::NonFinite {
                context: "dataset features".into(),
            });
        }
        for &y in &labels {
            if y >= classes {
                return Err(SilaError::InvalidLabel { label: y, classes });
            }
        }
        Ok(Self {
            rows: labels.len(),
            features,
            cols,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.cols
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.cols..(i + 1) * self.cols]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Copy the given rows into a flat `[indices.len() * dim]` matrix plus
    /// labels, for feeding one batch to a tape.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut feats = Vec::with_capacity(indices.len() * self.cols);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            feats.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        (feats, labels)
    }

    /// Write `f0,..,f{D-1},label` rows with a header.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for j in 0..self.cols {
            out.push_str(&format!("f{j},"));
        }
        out.push_str("label\n");
        for i in 0..self.rows {
            for v in self.row(i) {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{}\n", self.labels[i]));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Read a file written by [`Dataset::to_csv`]. When `classes` is `None`
    /// the class count is inferred as `max label + 1`.
    pub fn from_csv(path: &Path, classes: Option<usize>, split: Split) -> Result<Dataset> {
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| SilaError::Parse {
            file: file.clone(),
            line: 1,
            message: "empty file".into(),
        })?;
        let cols = header.split(',').count().saturating_sub(1);
        if cols == 0 || !header.ends_with("label") {
            return Err(SilaError::Parse {
                file,
                line: 1,
                message: "expected feature columns and a trailing label column".into(),
            });
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols + 1 {
                return Err(SilaError::Parse {
                    file,
                    line: idx + 1,
                    message: format!("expected {} fields, got {}", cols + 1, fields.len()),
                });
            }
            for f in &fields[..cols] {
                features.push(f.parse::<f64>().map_err(|e| SilaError::Parse {
                    file: file.clone(),
                    line: idx + 1,
                    message: e.to_string(),
                })?);
            }
            labels.push(fields[cols].parse::<usize>().map_err(|e| SilaError::Parse {
                file: file.clone(),
                line: idx + 1,
                message: e.to_string(),
            })?);
        }
        let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
        Dataset::new(features, cols, labels, classes, split)
    }
}

/// Synthetic Gaussian mixture: one isotropic cluster per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    /// Stddev of the class-center draw.
    pub center_spread: f64,
    /// Within-class stddev; 0 collapses every class onto its center.
    pub noise_std: f64,
    pub dim: usize,
    pub seed: u64,
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.per_class == 0 || self.dim == 0 {
            return Err(SilaError::InvalidSpec(
                "blob spec needs >=2 classes, >=1 sample per class, dim >= 1".into(),
            ));
        }
        if self.center_spread <= 0.0 || self.center_spread.is_nan() || self.noise_std < 0.0 {
            return Err(SilaError::InvalidSpec(
                "blob spec needs positive center spread and nonnegative noise".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic class-balanced blobs split 70/15/15 into train /
/// validation / test.
pub fn generate_blobs(spec: &BlobSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let center_dist = Normal::new(0.0, spec.center_spread)
        .map_err(|e| SilaError::InvalidSpec(e.to_string()))?;
    let centers: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..spec.dim).map(|_| center_dist.sample(&mut rng)).collect())
        .collect();

    let n = spec.per_class;
    let n_train = n * 70 / 100;
    let n_val = n * 15 / 100;
    let n_test = n - n_train - n_val;
    if n_train == 0 || n_test == 0 {
        return Err(SilaError::InvalidSpec(format!(
            "per_class = {n} is too small to split 70/15/15"
        )));
    }

    let mut parts = [
        (Split::Train, Vec::new(), Vec::new()),
        (Split::Validation, Vec::new(), Vec::new()),
        (Split::Test, Vec::new(), Vec::new()),
    ];
    for (class, center) in centers.iter().enumerate() {
        for i in 0..n {
            let slot = if i < n_train {
                0
            } else if i < n_train + n_val {
                1
            } else {
                2
            };
            let (_, feats, labels) = &mut parts[slot];
            for &coord in center {
                let noise = if spec.noise_std > 0.0 {
                    spec.noise_std * rng.sample::<f64, _>(rand_distr::StandardNormal)
                } else {
                    0.0
                };
                feats.push(coord + noise);
            }
            labels.push(class);
        }
    }
    let [train, val, test] = parts;
    let build = |(split, feats, labels): (Split, Vec<f64>, Vec<usize>)| {
        Dataset::new(feats, spec.dim, labels, spec.classes, split)
    };
    Ok((build(train)?, build(val)?, build(test)?))
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize, file: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(SilaError::IdxTruncated {
            file: file.to_string(),
            needed: end,
            got: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Load an IDX image/label file pair: features scaled to `[0, 1]` by
/// dividing raw bytes by 255, ten classes.
pub fn load_mnist_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let image_name = images.display().to_string();
    let label_name = labels.display().to_string();
    let image_bytes = std::fs::read(images)?;
    let label_bytes = std::fs::read(labels)?;

    let magic = read_be_u32(&image_bytes, 0, &image_name)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(SilaError::IdxBadMagic {
            file: image_name,
            found: magic,
            expected: IDX_IMAGE_MAGIC,
        });
    }
    let count = read_be_u32(&image_bytes, 4, &image_name)? as usize;
    let rows = read_be_u32(&image_bytes, 8, &image_name)? as usize;
    let cols = read_be_u32(&image_bytes, 12, &image_name)? as usize;
    let payload = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| SilaError::Parse {
            file: image_name.clone(),
            line: 0,
            message: "image dimensions overflow".into(),
        })?;
    if image_bytes.len() != 16 + payload {
        return Err(SilaError::IdxTruncated {
            file: image_name,
            needed: 16 + payload,
            got: image_bytes.len(),
        });
    }

    let magic = read_be_u32(&label_bytes, 0, &label_name)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(SilaError::IdxBadMagic {
            file: label_name,
            found: magic,
            expected: IDX_LABEL_MAGIC,
        });
    }
    let label_count = read_be_u32(&label_bytes, 4, &label_name)? as usize;
    if label_bytes.len() != 8 + label_count {
        return Err(SilaError::IdxTruncated {
            file: label_name,
            needed: 8 + label_count,
            got: label_bytes.len(),
        });
    }
    if count != label_count {
        return Err(SilaError::IdxCountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let features: Vec<f64> = image_bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = label_bytes[8..].iter().map(|&b| b as usize).collect();
    Dataset::new(features, rows * cols, labels, 10, split)
}

/// Seeded permutation of `0..len(data)` chunked into batches; each `(seed,
/// epoch)` pair gives its own order, every index appears exactly once, and
/// the final short batch is kept.
pub fn batches(data: &Dataset, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut rng = seeded_rng(derive_seed(seed, epoch as u64));
    indices.shuffle(&mut rng);
    indices.chunks(batch_size).map(|c| c.to_vec()).collect()
}
