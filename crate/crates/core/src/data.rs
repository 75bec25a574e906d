//! Datasets: seeded Gaussian blobs and IDX image/label files.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Flattened inputs in `[0, 1]` with labels below `num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Tensor>,
    labels: Vec<usize>,
    num_classes: usize,
    pub name: String,
    /// `(rows, cols)` of the source images, when loaded from IDX.
    pub image_dims: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, inputs: Vec<Tensor>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Consistency("dataset has no samples".into()));
        }
        if inputs.len() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let dim = inputs[0].len();
        for (i, (x, &y)) in inputs.iter().zip(&labels).enumerate() {
            if x.len() != dim {
                return Err(Error::Consistency(format!("sample {i} has {} features, expected {dim}", x.len())));
            }
            if !x.in_unit_box() {
                return Err(Error::Consistency(format!("sample {i} has values outside [0, 1]")));
            }
            if y >= num_classes {
                return Err(Error::Consistency(format!(
                    "sample {i} has label {y} but num_classes is {num_classes}"
                )));
            }
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            name: name.into(),
            image_dims: None,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tensor, usize)> {
        self.inputs.iter().zip(self.labels.iter().copied())
    }

    pub fn get(&self, i: usize) -> (&Tensor, usize) {
        (&self.inputs[i], self.labels[i])
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let inputs = indices.iter().map(|&i| self.inputs[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let mut d = Dataset::new(self.name.clone(), inputs, labels, self.num_classes)?;
        d.image_dims = self.image_dims;
        Ok(d)
    }

    /// First `n` samples (all of them if `n >= len`).
    pub fn truncated(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}

/// Isotropic Gaussian clusters around seeded centers in `[0.2, 0.8]^dim`.
///
/// Center coordinates are `0.5 + 0.3 * center_spread * u` with `u` uniform in
/// `[-1, 1)`, clamped to `[0.2, 0.8]`. Samples are clamped to `[0, 1]` and
/// stored class by class.
pub fn generate_blobs(
    num_classes: usize,
    dim: usize,
    samples_per_class: usize,
    center_spread: f64,
    noise_std: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || dim == 0 || samples_per_class == 0 {
        return Err(Error::Argument("blob counts and dimension must be positive".into()));
    }
    if !(center_spread > 0.0) || !(noise_std >= 0.0) {
        return Err(Error::Argument(format!(
            "center_spread must be positive and noise_std nonnegative, got {center_spread} and {noise_std}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let centers: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let u: f64 = rng.random_range(-1.0..1.0);
                    (0.5 + 0.3 * center_spread * u).clamp(0.2, 0.8)
                })
                .collect()
        })
        .collect();
    let mut inputs = Vec::with_capacity(num_classes * samples_per_class);
    let mut labels = Vec::with_capacity(num_classes * samples_per_class);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..samples_per_class {
            let point = center
                .iter()
                .map(|&c| {
                    let z: f64 = rng.sample(StandardNormal);
                    (c + noise_std * z).clamp(0.0, 1.0)
                })
                .collect();
            inputs.push(Tensor::from_vec(point));
            labels.push(class);
        }
    }
    Dataset::new("blobs", inputs, labels, num_classes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    what: &'static str,
}

impl Reader<'_> {
    fn u32_be(&mut self) -> Result<u32> {
        let slice = self.take(4)?;
        Ok(u32::from_be_bytes(slice.try_into().expect("4 bytes")))
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.offset < n {
            return Err(Error::Format {
                offset: self.bytes.len(),
                message: format!(
                    "{} truncated: needed {n} bytes at offset {}, file has {}",
                    self.what,
                    self.offset,
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }
}

/// Parses IDX image bytes into `(rows, cols, flattened images in [0, 1])`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<Tensor>)> {
    let mut r = Reader {
        bytes,
        offset: 0,
        what: "image file",
    };
    let magic = r.u32_be()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("image file magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        });
    }
    let count = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format {
            offset: 8,
            message: format!("image dimensions {rows}x{cols} must be positive"),
        });
    }
    let pixels = r.take(count * rows * cols)?;
    let images = pixels
        .chunks_exact(rows * cols)
        .map(|img| Tensor::from_vec(img.iter().map(|&p| f64::from(p) / 255.0).collect()))
        .collect();
    Ok((rows, cols, images))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut r = Reader {
        bytes,
        offset: 0,
        what: "label file",
    };
    let magic = r.u32_be()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("label file magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        });
    }
    let count = r.u32_be()? as usize;
    Ok(r.take(count)?.iter().map(|&b| b as usize).collect())
}

/// Loads an IDX image/label pair. `num_classes` is one past the largest label.
pub fn load_idx_pair(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (rows, cols, images) = parse_idx_images(&fs::read(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&fs::read(labels_path.as_ref())?)?;
    if images.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let name = images_path
        .as_ref()
        .file_stem()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    let mut d = Dataset::new(name, images, labels, num_classes)?;
    d.image_dims = Some((rows, cols));
    Ok(d)
}

/// Encodes a dataset as IDX bytes `(images, labels)`. Values are rounded to
/// the nearest byte, so only multiples of 1/255 survive exactly.
pub fn encode_idx(dataset: &Dataset, rows: usize, cols: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    if rows * cols != dataset.dim() {
        return Err(Error::Argument(format!(
            "{rows}x{cols} does not match input dimension {}",
            dataset.dim()
        )));
    }
    if dataset.num_classes() > 256 {
        return Err(Error::Argument("IDX labels hold at most 256 classes".into()));
    }
    let n = dataset.len() as u32;
    let mut images = Vec::with_capacity(16 + dataset.len() * dataset.dim());
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [n, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    for x in dataset.inputs() {
        images.extend(x.data().iter().map(|&v| (v * 255.0).round() as u8));
    }
    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    labels.extend(dataset.labels().iter().map(|&y| y as u8));
    Ok((images, labels))
}

pub fn write_idx_pair(
    dataset: &Dataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (images, labels) = encode_idx(dataset, rows, cols)?;
    fs::write(images_path, images)?;
    fs::write(labels_path, labels)?;
    Ok(())
}

/// Seeded shuffle, then the first `round(train_fraction * n)` rows go to train.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = dataset.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Argument(format!(
            "train_fraction {train_fraction} leaves an empty side for {n} samples"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    Ok((dataset.select(&idx[..n_train])?, dataset.select(&idx[n_train..])?))
}
