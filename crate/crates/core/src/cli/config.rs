use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{SplitSpec, WindowSpec};
use crate::error::{Error, Result};
use crate::layers::{BatchStats, NormKind, NormPlacement};
use crate::models::{Family, Head, ModelConfig};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// CSV file with a header row.
    pub path: PathBuf,
    /// TOML sidecar mapping columns to roles.
    pub schema: PathBuf,
    /// Standardize every column with training-partition statistics.
    #[serde(default = "yes")]
    pub standardize: bool,
}

fn yes() -> bool {
    true
}

fn default_hidden() -> usize {
    64
}

fn default_blocks() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: Family,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormKind>,
    #[serde(default)]
    pub batch_stats: BatchStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<NormPlacement>,
    #[serde(default)]
    pub head: Head,
    #[serde(default)]
    pub rev_in: bool,
    #[serde(default)]
    pub mean_scale: bool,
}

/// Top-level `train` configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSpec,
    pub window: WindowSpec,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("run")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: default_out(),
            data: DataSection {
                path: "data.csv".into(),
                schema: "data.schema.toml".into(),
                standardize: true,
            },
            split: SplitSpec::default(),
            window: WindowSpec {
                lookback: 48,
                horizon: 12,
                stride: 1,
            },
            model: ModelSection {
                family: Family::Tsmixer,
                hidden: default_hidden(),
                blocks: default_blocks(),
                dropout: 0.1,
                norm: None,
                batch_stats: BatchStats::Joint,
                placement: None,
                head: Head::Point,
                rev_in: false,
                mean_scale: false,
            },
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.to_string().replace('\n', " ")))
    }

    /// Reads a config; relative data paths resolve against its directory and
    /// are stored absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.path, &mut cfg.data.schema] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            *p = std::path::absolute(&*p).map_err(|e| Error::io(&*p, e))?;
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Model configuration for a dataset with the given role counts.
    pub fn model_config(&self, targets: usize, historical: usize, future: usize, statics: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            family: m.family,
            lookback: self.window.lookback,
            horizon: self.window.horizon,
            targets,
            historical,
            future,
            statics,
            hidden: m.hidden,
            blocks: m.blocks,
            dropout: m.dropout,
            norm: m.norm,
            batch_stats: m.batch_stats,
            placement: m.placement,
            head: m.head,
            rev_in: m.rev_in,
            mean_scale: m.mean_scale,
        }
    }

    /// Copy with defaulted model choices written out.
    pub fn resolved(&self, model: &ModelConfig) -> Self {
        let mut out = self.clone();
        out.model.norm = Some(model.norm_kind());
        out.model.placement = Some(model.norm_placement());
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.train.validate()?;
        // Column counts are not known before the data loads; this catches the
        // data-independent model errors early.
        self.model_config(1, 0, 0, 0).validate()?;
        if self.model.head == Head::NegativeBinomial && self.data.standardize {
            return Err(Error::config(
                "data.standardize",
                "the negative binomial head needs raw counts; set standardize = false",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_field_rejected() {
        let mut text = ExperimentConfig::default().to_toml_string();
        text.push_str("\n[extra]\nx = 1\n");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn range_split_parses() {
        let cfg = ExperimentConfig {
            split: SplitSpec::Ranges {
                train: [0, 10],
                val: [10, 20],
                test: [20, 30],
            },
            ..ExperimentConfig::default()
        };
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back.split, cfg.split);
    }
}
