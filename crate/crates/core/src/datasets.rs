//! MNIST (IDX) and CIFAR-10 (binary batch) loaders, writers for test fixtures, and a
//! Gaussian blob generator. Samples are columns.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{LpomError, Result};
use crate::tensor::Matrix;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_PIXELS: usize = 3072;
const CIFAR_RECORD: usize = CIFAR_PIXELS + 1;
const CIFAR_CLASSES: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    /// `n₁ × N`.
    pub features: Matrix,
    /// `c × N`, one-hot columns.
    pub labels_onehot: Matrix,
    pub labels_index: Vec<usize>,
    pub class_count: usize,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels_index: Vec<usize>, class_count: usize) -> Result<Self> {
        if labels_index.len() != features.cols() {
            return Err(LpomError::DimensionMismatch {
                op: "LabeledDataset::new",
                left: features.shape(),
                right: (1, labels_index.len()),
            });
        }
        if let Some(&bad) = labels_index.iter().find(|&&l| l >= class_count) {
            return Err(LpomError::Domain {
                what: format!("label index with {class_count} classes"),
                value: bad as f64,
            });
        }
        let labels_onehot = one_hot(&labels_index, class_count)?;
        Ok(LabeledDataset {
            features,
            labels_onehot,
            labels_index,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels_index.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.rows()
    }

    /// The samples at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<LabeledDataset> {
        if idx.is_empty() {
            return Err(LpomError::Empty("dataset subset"));
        }
        LabeledDataset::new(
            self.features.select_columns(idx),
            idx.iter().map(|&i| self.labels_index[i]).collect(),
            self.class_count,
        )
    }

    /// The first `n` samples (all of them if `n` exceeds the size).
    pub fn head(&self, n: usize) -> Result<LabeledDataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// `c × N` matrix with a single 1 per column.
pub fn one_hot(labels: &[usize], class_count: usize) -> Result<Matrix> {
    if labels.is_empty() || class_count == 0 {
        return Err(LpomError::Empty("label set"));
    }
    let mut data = vec![0.0; class_count * labels.len()];
    for (j, &l) in labels.iter().enumerate() {
        data[l * labels.len() + j] = 1.0;
    }
    Matrix::new(class_count, labels.len(), data)
}

fn be_u32(bytes: &[u8], at: usize, format: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| LpomError::format(format, "truncated header"))
}

/// Decoded IDX image file: `count` images of `rows × cols` bytes each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    const F: &str = "IDX images";
    let magic = be_u32(bytes, 0, F)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(LpomError::format(F, format!("bad magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, F)? as usize;
    let rows = be_u32(bytes, 8, F)? as usize;
    let cols = be_u32(bytes, 12, F)? as usize;
    let expected = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() != expected {
        return Err(LpomError::format(
            F,
            format!("payload has {} bytes, header promises {expected}", payload.len()),
        ));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: payload.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    const F: &str = "IDX labels";
    let magic = be_u32(bytes, 0, F)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(LpomError::format(F, format!("bad magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, F)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(LpomError::format(
            F,
            format!("payload has {} bytes, header promises {count}", payload.len()),
        ));
    }
    Ok(payload.to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [
        IDX_IMAGES_MAGIC,
        images.count as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn pixels_to_features(pixels: &[u8], dim: usize, count: usize) -> Result<Matrix> {
    // Column-major samples: entry (r, j) is pixel r of image j.
    Matrix::from_fn(dim, count, |r, j| pixels[j * dim + r] as f64 / 255.0)
}

/// Pixels scaled to `[0, 1]` by `/255`, one column per image, ten classes.
pub fn load_mnist(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    mnist_from_parts(&images, &labels)
}

pub fn mnist_from_parts(images: &IdxImages, labels: &[u8]) -> Result<LabeledDataset> {
    if images.count != labels.len() {
        return Err(LpomError::format(
            "IDX",
            format!("{} images but {} labels", images.count, labels.len()),
        ));
    }
    if images.count == 0 {
        return Err(LpomError::Empty("IDX image file"));
    }
    let dim = images.rows * images.cols;
    let features = pixels_to_features(&images.pixels, dim, images.count)?;
    LabeledDataset::new(features, labels.iter().map(|&l| l as usize).collect(), 10)
}

/// Writes `data` as an IDX image/label pair with images of `rows × cols`.
///
/// Features must be exact multiples of `1/255` in `[0, 1]` so that reloading gives the
/// same bits back.
pub fn write_mnist(
    data: &LabeledDataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let dim = rows * cols;
    if dim != data.feature_dim() {
        return Err(LpomError::DimensionMismatch {
            op: "write_mnist",
            left: (rows, cols),
            right: data.features.shape(),
        });
    }
    let mut pixels = Vec::with_capacity(dim * data.len());
    for j in 0..data.len() {
        for r in 0..dim {
            let v = data.features.get(r, j);
            let byte = (v * 255.0).round();
            if !(0.0..=255.0).contains(&byte) || byte / 255.0 != v {
                return Err(LpomError::Domain {
                    what: "pixel value not representable as byte/255".into(),
                    value: v,
                });
            }
            pixels.push(byte as u8);
        }
    }
    let labels = data
        .labels_index
        .iter()
        .map(|&l| {
            u8::try_from(l).map_err(|_| LpomError::Domain {
                what: "label does not fit a byte".into(),
                value: l as f64,
            })
        })
        .collect::<Result<Vec<u8>>>()?;
    let images = IdxImages {
        count: data.len(),
        rows,
        cols,
        pixels,
    };
    fs::write(images_path, encode_idx_images(&images))?;
    fs::write(labels_path, encode_idx_labels(&labels))?;
    Ok(())
}

/// Raw CIFAR-10 records: label bytes and channel-major `3072`-byte images.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CifarRecords {
    pub labels: Vec<u8>,
    pub pixels: Vec<u8>,
}

impl CifarRecords {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn parse_cifar_batch(bytes: &[u8], into: &mut CifarRecords) -> Result<()> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(LpomError::format(
            "CIFAR-10 batch",
            format!("length {} is not a multiple of {CIFAR_RECORD}", bytes.len()),
        ));
    }
    for record in bytes.chunks_exact(CIFAR_RECORD) {
        if record[0] as usize >= CIFAR_CLASSES {
            return Err(LpomError::format("CIFAR-10 batch", format!("label byte {}", record[0])));
        }
        into.labels.push(record[0]);
        into.pixels.extend_from_slice(&record[1..]);
    }
    Ok(())
}

pub fn read_cifar_batches<P: AsRef<Path>>(paths: &[P]) -> Result<CifarRecords> {
    let mut records = CifarRecords::default();
    for p in paths {
        parse_cifar_batch(&fs::read(p)?, &mut records)?;
    }
    if records.is_empty() {
        return Err(LpomError::Empty("CIFAR-10 batches"));
    }
    Ok(records)
}

pub fn encode_cifar_batch(records: &CifarRecords) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * CIFAR_RECORD);
    for (label, image) in records.labels.iter().zip(records.pixels.chunks_exact(CIFAR_PIXELS)) {
        out.push(*label);
        out.extend_from_slice(image);
    }
    out
}

/// Mean of each colour channel over all records, on the `[0, 1]` pixel scale.
pub fn channel_means(records: &CifarRecords) -> [f64; 3] {
    let plane = CIFAR_PIXELS / 3;
    let mut sums = [0.0f64; 3];
    for image in records.pixels.chunks_exact(CIFAR_PIXELS) {
        for (c, sum) in sums.iter_mut().enumerate() {
            *sum += image[c * plane..(c + 1) * plane].iter().map(|&p| p as f64).sum::<f64>();
        }
    }
    let n = (records.len() * plane) as f64 * 255.0;
    sums.map(|s| s / n)
}

/// Pixels scaled by `/255` with the given channel means subtracted.
pub fn cifar_dataset(records: &CifarRecords, means: [f64; 3]) -> Result<LabeledDataset> {
    if records.is_empty() {
        return Err(LpomError::Empty("CIFAR-10 records"));
    }
    let plane = CIFAR_PIXELS / 3;
    let pixels = &records.pixels;
    let features = Matrix::from_fn(CIFAR_PIXELS, records.len(), |r, j| {
        pixels[j * CIFAR_PIXELS + r] as f64 / 255.0 - means[r / plane]
    })?;
    LabeledDataset::new(
        features,
        records.labels.iter().map(|&l| l as usize).collect(),
        CIFAR_CLASSES,
    )
}

/// Train and test splits centred with the training split's channel means, which are
/// returned as well.
pub fn load_cifar10<P: AsRef<Path>, Q: AsRef<Path>>(
    train_paths: &[P],
    test_paths: &[Q],
) -> Result<(LabeledDataset, LabeledDataset, [f64; 3])> {
    let train = read_cifar_batches(train_paths)?;
    let test = read_cifar_batches(test_paths)?;
    let means = channel_means(&train);
    Ok((cifar_dataset(&train, means)?, cifar_dataset(&test, means)?, means))
}

/// `n_classes` isotropic unit-variance Gaussian blobs in `dim` dimensions, class-major
/// order. Centres sit at `separation/√2 · e_k`, so any two are `separation` apart.
pub fn synth_blobs(
    n_classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_classes == 0 || per_class == 0 {
        return Err(LpomError::Empty("blob dataset"));
    }
    if dim < n_classes {
        return Err(LpomError::Config(format!(
            "blob dimension {dim} is smaller than the class count {n_classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_classes * per_class;
    let offset = separation / std::f64::consts::SQRT_2;
    let mut data = vec![0.0; dim * n];
    let mut labels = Vec::with_capacity(n);
    for j in 0..n {
        let class = j / per_class;
        labels.push(class);
        for r in 0..dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data[r * n + j] = noise + if r == class { offset } else { 0.0 };
        }
    }
    LabeledDataset::new(Matrix::new(dim, n, data)?, labels, n_classes)
}
