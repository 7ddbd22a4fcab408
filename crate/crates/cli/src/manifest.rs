use std::fs;
use std::path::Path;

use lpom::apg::Ridge;
use lpom::sgd::SgdConfig;
use lpom::{TrainConfig, XUpdateMode};
use serde::{Deserialize, Serialize};

use crate::data::{DataFile, DatasetKind};
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub layer_sizes: Vec<usize>,
    pub activation: String,
    pub mu: Vec<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub k1: usize,
    pub k2: usize,
    pub seed: u64,
    pub x_mode: String,
    pub x_sweeps: usize,
    pub safeguard_damping: bool,
    /// `relative:<scale>` or `absolute:<value>`.
    pub ridge: String,
    pub bias: bool,
    pub parallel: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdSnapshot {
    pub learning_rate: f64,
    pub momentum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub method: String,
    pub config: ConfigSnapshot,
    pub sgd: Option<SgdSnapshot>,
    pub dataset: DatasetKind,
    pub files: Vec<DataFile>,
    /// Training and test examples actually used, after any limits.
    pub examples: [usize; 2],
    pub epochs_completed: usize,
    pub wall_seconds: f64,
}

impl RunManifest {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        method: String,
        config: &TrainConfig,
        sgd: Option<&SgdConfig>,
        dataset: DatasetKind,
        files: Vec<DataFile>,
        examples: [usize; 2],
        epochs_completed: usize,
        wall_seconds: f64,
    ) -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            method,
            config: ConfigSnapshot {
                layer_sizes: config.layer_sizes.clone(),
                activation: config.activation.to_string(),
                mu: config.mu.clone(),
                batch_size: config.batch_size,
                epochs: config.epochs,
                k1: config.k1,
                k2: config.k2,
                seed: config.seed,
                x_mode: match config.x_mode {
                    XUpdateMode::Serial => "serial",
                    XUpdateMode::Jacobi => "jacobi",
                }
                .to_string(),
                x_sweeps: config.x_sweeps,
                safeguard_damping: config.safeguard_damping,
                ridge: match config.ridge {
                    Ridge::Relative(s) => format!("relative:{s}"),
                    Ridge::Absolute(v) => format!("absolute:{v}"),
                },
                bias: config.bias,
                parallel: config.parallelism.is_parallel(),
            },
            sgd: sgd.map(|s| SgdSnapshot {
                learning_rate: s.learning_rate,
                momentum: s.momentum,
            }),
            dataset,
            files,
            examples,
            epochs_completed,
            wall_seconds,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    #[cfg(test)]
    pub fn parse(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_json() {
        let m = RunManifest::new(
            "lpom".into(),
            &TrainConfig::default(),
            Some(&SgdConfig::default()),
            DatasetKind::Mnist,
            vec![DataFile {
                path: "a".into(),
                sha256: "00".into(),
            }],
            [600, 100],
            3,
            1.25,
        );
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(RunManifest::parse(&text).unwrap(), m);
    }
}
