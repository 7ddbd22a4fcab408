use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use lpom::datasets::{load_cifar10, load_mnist, synth_blobs};
use lpom::LabeledDataset;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    /// Gaussian blobs sized from the architecture; needs no files.
    Blobs,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFile {
    pub path: String,
    pub sha256: String,
}

pub struct Splits {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub files: Vec<DataFile>,
}

const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];
const CIFAR_TRAIN: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const CIFAR_TEST: &str = "test_batch.bin";

pub struct BlobShape {
    pub dim: usize,
    pub classes: usize,
    pub separation: f64,
    pub seed: u64,
}

pub fn load(kind: DatasetKind, dir: Option<&Path>, blobs: BlobShape) -> Result<Splits, CliError> {
    match kind {
        DatasetKind::Blobs => {
            let train = synth_blobs(blobs.classes, 100, blobs.dim, blobs.separation, blobs.seed)?;
            let test = synth_blobs(
                blobs.classes,
                50,
                blobs.dim,
                blobs.separation,
                blobs.seed.wrapping_add(1),
            )?;
            Ok(Splits {
                train,
                test,
                files: Vec::new(),
            })
        }
        DatasetKind::Mnist => {
            let paths = existing(dir, &MNIST_FILES)?;
            Ok(Splits {
                train: load_mnist(&paths[0], &paths[1])?,
                test: load_mnist(&paths[2], &paths[3])?,
                files: checksums(&paths)?,
            })
        }
        DatasetKind::Cifar10 => {
            let mut names = CIFAR_TRAIN.to_vec();
            names.push(CIFAR_TEST);
            let paths = existing(dir, &names)?;
            let (train, test, means) = load_cifar10(&paths[..5], &paths[5..])?;
            log::info!("CIFAR-10 channel means {means:?}");
            Ok(Splits {
                train,
                test,
                files: checksums(&paths)?,
            })
        }
    }
}

fn existing(dir: Option<&Path>, names: &[&str]) -> Result<Vec<PathBuf>, CliError> {
    let dir = dir.ok_or_else(|| CliError::Config("this dataset needs --data-dir".into()))?;
    names
        .iter()
        .map(|n| {
            let p = dir.join(n);
            if p.is_file() {
                Ok(p)
            } else {
                Err(CliError::Config(format!("dataset file {} not found", p.display())))
            }
        })
        .collect()
}

fn checksums(paths: &[PathBuf]) -> Result<Vec<DataFile>, CliError> {
    paths
        .iter()
        .map(|p| {
            Ok(DataFile {
                path: p.display().to_string(),
                sha256: sha256_hex(&fs::read(p).map_err(lpom::LpomError::from)?),
            })
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_abc() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn missing_directory_is_a_config_error() {
        let err = load(
            DatasetKind::Mnist,
            Some(Path::new("/nonexistent")),
            BlobShape {
                dim: 2,
                classes: 2,
                separation: 1.0,
                seed: 0,
            },
        );
        assert!(matches!(err, Err(CliError::Config(_))));
    }
}
