//! Desk-scale dataset generation and ingestion with deterministic splits.
//!
//! Classification labels are one-hot rows; regression and signed-binary
//! labels are single reals. All generators are pure functions of their seed.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{self, DetRng};

/// An immutable feature/label table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// N rows of d features.
    pub features: Vec<Vec<f64>>,
    /// N label rows: length C one-hot for classification, length 1 otherwise.
    pub labels: Vec<Vec<f64>>,
    /// C for one-hot labels; 1 for regression or signed-binary labels.
    pub class_count: usize,
    pub name: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Checks the one-hot invariant on classification labels.
    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::contract("dataset must be nonempty"));
        }
        let d = self.feature_dim();
        if d == 0 {
            return Err(Error::contract("feature dim must be positive"));
        }
        for (i, row) in self.features.iter().enumerate() {
            if row.len() != d {
                return Err(Error::contract(format!(
                    "feature row {i} has {} values, expected {d}",
                    row.len()
                )));
            }
        }
        for (i, row) in self.labels.iter().enumerate() {
            if self.class_count >= 2 {
                if row.len() != self.class_count {
                    return Err(Error::contract(format!(
                        "label row {i} has length {}, expected {}",
                        row.len(),
                        self.class_count
                    )));
                }
                let ones = row.iter().filter(|&&v| v == 1.0).count();
                let zeros = row.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || ones + zeros != row.len() {
                    return Err(Error::contract(format!("label row {i} is not one-hot")));
                }
            } else if row.len() != 1 {
                return Err(Error::contract(format!(
                    "label row {i} must hold a single value"
                )));
            }
        }
        Ok(())
    }

    /// Converts a two-class one-hot dataset into signed binary labels for
    /// the C = 1 losses: class 1 maps to +1, class 0 to -1.
    pub fn to_signed_binary(&self) -> Result<Dataset> {
        if self.class_count != 2 {
            return Err(Error::contract(format!(
                "signed-binary conversion needs exactly 2 classes, got {}",
                self.class_count
            )));
        }
        let labels = self
            .labels
            .iter()
            .map(|row| vec![if row[1] == 1.0 { 1.0 } else { -1.0 }])
            .collect();
        Ok(Dataset {
            features: self.features.clone(),
            labels,
            class_count: 1,
            name: format!("{}-signed", self.name),
        })
    }
}

/// One-hot encoding of class `c` among `class_count` classes.
pub fn one_hot(c: usize, class_count: usize) -> Result<Vec<f64>> {
    if c >= class_count {
        return Err(Error::contract(format!(
            "class {c} out of range for {class_count} classes"
        )));
    }
    let mut v = vec![0.0; class_count];
    v[c] = 1.0;
    Ok(v)
}

/// Gaussian blobs: one seeded cluster center per class, points scattered
/// around it with standard deviation `spread`.
pub fn gen_blobs(
    seed: u64,
    n_per_class: usize,
    classes: usize,
    dims: usize,
    spread: f64,
) -> Result<Dataset> {
    if n_per_class == 0 || classes == 0 || dims == 0 {
        return Err(Error::contract("blob sizes must be positive"));
    }
    if spread < 0.0 {
        return Err(Error::contract("spread must be nonnegative"));
    }
    let mut rng = DetRng::derived(seed, &[rng::tag::DATA, 1]);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dims).map(|_| 3.0 * rng.normal()).collect())
        .collect();
    let mut features = Vec::with_capacity(n_per_class * classes);
    let mut labels = Vec::with_capacity(n_per_class * classes);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            let point: Vec<f64> = center.iter().map(|&m| m + spread * rng.normal()).collect();
            features.push(point);
            labels.push(one_hot(c, classes)?);
        }
    }
    Ok(Dataset {
        features,
        labels,
        class_count: classes,
        name: "blobs".into(),
    })
}

/// Interleaved 2-d spirals, one arm per class. Radii stay in `(0, 1]` so the
/// arms never meet at the origin; with zero noise the classes are disjoint.
pub fn gen_spirals(seed: u64, n_per_class: usize, classes: usize, noise: f64) -> Result<Dataset> {
    if n_per_class == 0 || classes == 0 {
        return Err(Error::contract("spiral sizes must be positive"));
    }
    if noise < 0.0 {
        return Err(Error::contract("noise must be nonnegative"));
    }
    let mut rng = DetRng::derived(seed, &[rng::tag::DATA, 2]);
    let mut features = Vec::with_capacity(n_per_class * classes);
    let mut labels = Vec::with_capacity(n_per_class * classes);
    let swirl = 2.5 * std::f64::consts::PI;
    for c in 0..classes {
        let offset = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
        for k in 0..n_per_class {
            let t = (k + 1) as f64 / n_per_class as f64;
            let r = t;
            let theta = offset + swirl * t;
            let x = r * theta.cos() + noise * rng.normal();
            let y = r * theta.sin() + noise * rng.normal();
            features.push(vec![x, y]);
            labels.push(one_hot(c, classes)?);
        }
    }
    Ok(Dataset {
        features,
        labels,
        class_count: classes,
        name: "spirals".into(),
    })
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format {
            path: path.to_string(),
            reason: format!("truncated: no u32 at offset {offset}"),
        })
}

/// Loads an IDX image/label pair: pixels scaled to `[0, 1]`, rows flattened,
/// labels one-hot with C = 10.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_name = images_path.display().to_string();
    let lbl_name = labels_path.display().to_string();
    let img_bytes = fs::read(images_path)?;
    let lbl_bytes = fs::read(labels_path)?;

    let img_magic = read_be_u32(&img_bytes, 0, &img_name)?;
    if img_magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format {
            path: img_name,
            reason: format!("expected image magic {IDX_IMAGE_MAGIC:#010x}, found {img_magic:#010x}"),
        });
    }
    let lbl_magic = read_be_u32(&lbl_bytes, 0, &lbl_name)?;
    if lbl_magic != IDX_LABEL_MAGIC {
        return Err(Error::Format {
            path: lbl_name,
            reason: format!("expected label magic {IDX_LABEL_MAGIC:#010x}, found {lbl_magic:#010x}"),
        });
    }
    let n_images = read_be_u32(&img_bytes, 4, &img_name)? as usize;
    let rows = read_be_u32(&img_bytes, 8, &img_name)? as usize;
    let cols = read_be_u32(&img_bytes, 12, &img_name)? as usize;
    let n_labels = read_be_u32(&lbl_bytes, 4, &lbl_name)? as usize;
    if n_images != n_labels {
        return Err(Error::Format {
            path: lbl_name,
            reason: format!(
                "label count {n_labels} does not match image count {n_images} in {img_name}"
            ),
        });
    }
    let pixel_count = n_images * rows * cols;
    if img_bytes.len() != 16 + pixel_count {
        return Err(Error::Format {
            path: img_name,
            reason: format!(
                "expected {} pixel bytes, found {}",
                pixel_count,
                img_bytes.len().saturating_sub(16)
            ),
        });
    }
    if lbl_bytes.len() != 8 + n_labels {
        return Err(Error::Format {
            path: lbl_name,
            reason: format!(
                "expected {} label bytes, found {}",
                n_labels,
                lbl_bytes.len().saturating_sub(8)
            ),
        });
    }
    let d = rows * cols;
    let mut features = Vec::with_capacity(n_images);
    let mut labels = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let start = 16 + i * d;
        features.push(
            img_bytes[start..start + d]
                .iter()
                .map(|&p| p as f64 / 255.0)
                .collect(),
        );
        let class = lbl_bytes[8 + i] as usize;
        if class > 9 {
            return Err(Error::Format {
                path: lbl_name,
                reason: format!("label {class} at index {i} exceeds 9"),
            });
        }
        labels.push(one_hot(class, 10)?);
    }
    Ok(Dataset {
        features,
        labels,
        class_count: 10,
        name: "idx".into(),
    })
}

/// Writes an IDX image file (synthetic data, tests, exports).
pub fn write_idx_images(path: &Path, images: &[Vec<u8>], rows: usize, cols: usize) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + images.len() * rows * cols);
    bytes.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::contract("image size does not match rows*cols"));
        }
        bytes.extend_from_slice(img);
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Writes an IDX label file.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    fs::write(path, bytes)?;
    Ok(())
}

/// Loads a rectangular numeric CSV. The label column holds integer class
/// ids, re-indexed densely in sorted order; remaining columns are features.
pub fn load_csv(path: &Path, label_column: usize, has_header: bool) -> Result<Dataset> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut width: Option<usize> = None;
    let mut raw_labels: Vec<i64> = Vec::new();
    let mut features: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let row = idx + 1;
        if has_header && idx == 0 {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match width {
            None => {
                if label_column >= fields.len() {
                    return Err(Error::Parse {
                        path: name,
                        row,
                        reason: format!(
                            "label column {label_column} out of range for {} fields",
                            fields.len()
                        ),
                    });
                }
                width = Some(fields.len());
            }
            Some(w) if fields.len() != w => {
                return Err(Error::Parse {
                    path: name,
                    row,
                    reason: format!("ragged row: {} fields, expected {w}", fields.len()),
                });
            }
            _ => {}
        }
        let mut feat = Vec::with_capacity(fields.len() - 1);
        for (col, field) in fields.iter().enumerate() {
            let trimmed = field.trim();
            let value: f64 = trimmed.parse().map_err(|_| Error::Parse {
                path: name.clone(),
                row,
                reason: format!("invalid number {trimmed:?} in column {col}"),
            })?;
            if col == label_column {
                if value.fract() != 0.0 {
                    return Err(Error::Parse {
                        path: name.clone(),
                        row,
                        reason: format!("label {trimmed:?} is not an integer class id"),
                    });
                }
                raw_labels.push(value as i64);
            } else {
                feat.push(value);
            }
        }
        features.push(feat);
    }
    if features.is_empty() {
        return Err(Error::Format {
            path: name,
            reason: "no data rows".into(),
        });
    }
    let mut distinct: Vec<i64> = raw_labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let class_count = distinct.len();
    let labels = raw_labels
        .iter()
        .map(|id| {
            let dense = distinct.binary_search(id).expect("id came from the list");
            one_hot(dense, class_count)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        features,
        labels,
        class_count,
        name: "csv".into(),
    })
}

/// Exports a dataset to CSV with the class id (or raw value for C = 1
/// labels) in the last column.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (feat, label) in dataset.features.iter().zip(&dataset.labels) {
        for v in feat {
            out.push_str(&format!("{v},"));
        }
        if dataset.class_count >= 2 {
            let class = label.iter().position(|&v| v == 1.0).unwrap_or(0);
            out.push_str(&format!("{class}\n"));
        } else {
            out.push_str(&format!("{}\n", label[0]));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Seeded permutation split. The two parts partition the input exactly.
pub fn train_test_split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::contract(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    dataset.validate()?;
    let n = dataset.len();
    let mut indices: Vec<usize> = (0..n).collect();
    DetRng::derived(seed, &[rng::tag::SPLIT]).shuffle(&mut indices);
    let test_n = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let take = |ids: &[usize], suffix: &str| Dataset {
        features: ids.iter().map(|&i| dataset.features[i].clone()).collect(),
        labels: ids.iter().map(|&i| dataset.labels[i].clone()).collect(),
        class_count: dataset.class_count,
        name: format!("{}-{suffix}", dataset.name),
    };
    let (train_ids, test_ids) = indices.split_at(n - test_n);
    Ok((take(train_ids, "train"), take(test_ids, "test")))
}

/// Per-feature standardization statistics (population mean and std).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Standardizes features to zero mean and unit variance, returning the
/// statistics so test data can reuse them. Zero-variance features map to 0.
pub fn normalize(dataset: &Dataset) -> Result<(Dataset, FeatureStats)> {
    dataset.validate()?;
    let n = dataset.len() as f64;
    let d = dataset.feature_dim();
    let mut mean = vec![0.0; d];
    for row in &dataset.features {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; d];
    for row in &dataset.features {
        for j in 0..d {
            let diff = row[j] - mean[j];
            var[j] += diff * diff;
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
    let stats = FeatureStats { mean, std };
    Ok((apply_normalization(dataset, &stats)?, stats))
}

/// Applies previously computed statistics (train stats onto test data).
pub fn apply_normalization(dataset: &Dataset, stats: &FeatureStats) -> Result<Dataset> {
    let d = dataset.feature_dim();
    if stats.mean.len() != d || stats.std.len() != d {
        return Err(Error::shape(format!(
            "stats dimension {} does not match feature dim {d}",
            stats.mean.len()
        )));
    }
    let features = dataset
        .features
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &v)| {
                    if stats.std[j] == 0.0 {
                        0.0
                    } else {
                        (v - stats.mean[j]) / stats.std[j]
                    }
                })
                .collect()
        })
        .collect();
    Ok(Dataset {
        features,
        labels: dataset.labels.clone(),
        class_count: dataset.class_count,
        name: dataset.name.clone(),
    })
}
