use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::idx::{load_idx_images, load_idx_labels};
use super::HarnessError;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Distance of each blob centre from the origin.
pub const BLOB_SCALE: f64 = 3.0;
/// Fraction of the training subset held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self, HarnessError> {
        let (rows, _) = inputs
            .dims2("dataset")
            .map_err(|e| HarnessError::Data(e.to_string()))?;
        if rows != labels.len() {
            return Err(HarnessError::Data(format!(
                "{rows} inputs but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(HarnessError::Data(format!(
                "label {bad} outside {classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let idx: Vec<usize> = (start..end).collect();
        Dataset {
            inputs: self.inputs.gather_rows(&idx),
            labels: self.labels[start..end].to_vec(),
            classes: self.classes,
        }
    }

    /// Writes `x0..x{d-1},label` rows with a header.
    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let io = |e: csv::Error| HarnessError::Io(std::io::Error::other(e));
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(io)?;
        for (row, label) in self.inputs.rows().zip(&self.labels) {
            let mut r: Vec<String> = row.iter().map(f64::to_string).collect();
            r.push(label.to_string());
            w.write_record(&r).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Splits off the last `fraction` of rows, keeping order.
    pub fn split_tail(&self, fraction: f64) -> (Dataset, Dataset) {
        let n = self.len();
        let held = ((n as f64) * fraction).round() as usize;
        (self.slice(0, n - held), self.slice(n - held, n))
    }
}

fn check_blobs(classes: usize, dim: usize, sigma: f64) -> Result<(), HarnessError> {
    if classes < 2 {
        return Err(HarnessError::Config(format!(
            "blobs need at least 2 classes, got {classes}"
        )));
    }
    if classes > 2 * dim {
        return Err(HarnessError::Config(format!(
            "{classes} classes do not fit on the axes of dimension {dim}"
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(HarnessError::Config(format!(
            "blob sigma must be non-negative, got {sigma}"
        )));
    }
    Ok(())
}

/// Gaussian blobs: class `c` is centred at `±BLOB_SCALE · e_{c mod dim}`
/// (sign flips once classes wrap around the axes) and points are assigned to
/// classes round-robin.
pub fn make_blobs(
    classes: usize,
    dim: usize,
    count: usize,
    sigma: f64,
    rng: &mut Rng,
) -> Result<Dataset, HarnessError> {
    check_blobs(classes, dim, sigma)?;
    if count == 0 {
        return Err(HarnessError::Config("blobs count must be positive".into()));
    }
    let mut data = Vec::with_capacity(count * dim);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let c = i % classes;
        let sign = if c < dim { 1.0 } else { -1.0 };
        let noise = rng.gaussian_vec(dim, sigma);
        data.extend(noise.iter().enumerate().map(|(j, z)| {
            let mean = if j == c % dim { sign * BLOB_SCALE } else { 0.0 };
            mean + z
        }));
        labels.push(c);
    }
    let inputs =
        Tensor::new(vec![count, dim], data).map_err(|e| HarnessError::Config(e.to_string()))?;
    Dataset::new(inputs, labels, classes)
}

/// Subset of MNIST-format IDX files in a directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistSubset {
    pub path: PathBuf,
    /// Leading training rows used; the last fifth becomes validation.
    pub train_count: usize,
    pub test_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBlobs {
    pub classes: usize,
    pub dim: usize,
    /// Training points before the validation split.
    pub count: usize,
    pub sigma: f64,
    /// Seed for the data alone, so repeats share a dataset.
    #[serde(default)]
    pub data_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Mnist(MnistSubset),
    Blobs(SyntheticBlobs),
}

/// Train, validation and test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

fn find_idx(dir: &Path, stem: &str) -> Result<PathBuf, HarnessError> {
    let candidates = [dir.join(stem), dir.join(format!("{stem}.gz"))];
    candidates
        .iter()
        .find(|p| p.is_file())
        .cloned()
        .ok_or_else(|| {
            HarnessError::Data(format!(
                "{} not found (plain or .gz)",
                dir.join(stem).display()
            ))
        })
}

fn load_mnist_pair(
    dir: &Path,
    images: &str,
    labels: &str,
    count: usize,
) -> Result<Dataset, HarnessError> {
    let x = load_idx_images(&find_idx(dir, images)?)?;
    let y = load_idx_labels(&find_idx(dir, labels)?)?;
    let all = Dataset::new(x, y, 10)?;
    if count > all.len() {
        return Err(HarnessError::Data(format!(
            "requested {count} rows from {} but it holds {}",
            dir.join(images).display(),
            all.len()
        )));
    }
    Ok(all.slice(0, count))
}

impl DatasetConfig {
    /// Input width and class count without loading any data.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            DatasetConfig::Mnist(_) => (784, 10),
            DatasetConfig::Blobs(b) => (b.dim, b.classes),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        match self {
            DatasetConfig::Mnist(m) => {
                if m.train_count < 5 || m.test_count == 0 {
                    return Err(HarnessError::Config(
                        "mnist train_count must be at least 5 and test_count positive".into(),
                    ));
                }
            }
            DatasetConfig::Blobs(b) => {
                if b.count < 5 {
                    return Err(HarnessError::Config(
                        "blobs count must be at least 5".into(),
                    ));
                }
                check_blobs(b.classes, b.dim, b.sigma)?;
            }
        }
        Ok(())
    }

    /// Loads the splits. Relative MNIST paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Splits, HarnessError> {
        self.validate()?;
        match self {
            DatasetConfig::Mnist(m) => {
                let dir = base.join(&m.path);
                let train = load_mnist_pair(&dir, MNIST_FILES[0], MNIST_FILES[1], m.train_count)?;
                let test = load_mnist_pair(&dir, MNIST_FILES[2], MNIST_FILES[3], m.test_count)?;
                let (train, validation) = train.split_tail(VALIDATION_FRACTION);
                Ok(Splits {
                    train,
                    validation,
                    test,
                })
            }
            DatasetConfig::Blobs(b) => {
                let root = Rng::new(b.data_seed);
                let all = make_blobs(b.classes, b.dim, b.count, b.sigma, &mut root.stream(0))?;
                let test = make_blobs(b.classes, b.dim, b.count, b.sigma, &mut root.stream(1))?;
                let (train, validation) = all.split_tail(VALIDATION_FRACTION);
                Ok(Splits {
                    train,
                    validation,
                    test,
                })
            }
        }
    }
}
