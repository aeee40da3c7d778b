//! Model checkpoints: `model.toml` (configuration, column names, scaler) and
//! `params.bin` (parameter container).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Forecast, Model, ModelConfig, ModelInput};
use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::params::{read_container, write_container};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "model.toml";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnNames {
    pub targets: Vec<String>,
    #[serde(default)]
    pub historical: Vec<String>,
    #[serde(default)]
    pub future: Vec<String>,
    #[serde(default)]
    pub statics: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    seed: u64,
    model: ModelConfig,
    columns: ColumnNames,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scaler: Option<Scaler>,
}

/// A trained model with what is needed to apply it to raw data.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub columns: ColumnNames,
    pub scaler: Option<Scaler>,
    pub seed: u64,
}

pub fn provenance(seed: u64) -> String {
    format!("tsmixer {} seed={seed}", env!("CARGO_PKG_VERSION"))
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest {
            format: 1,
            seed: self.seed,
            model: self.model.config().resolved(),
            columns: self.columns.clone(),
            scaler: self.scaler.clone(),
        };
        let body = toml::to_string(&manifest).map_err(|e| Error::Container(e.to_string()))?;
        let text = format!("# {}\n{body}", provenance(self.seed));
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        let entries = self.model.params().iter().chain(self.model.buffers().iter());
        write_container(&dir.join(PARAMS_FILE), &provenance(self.seed), entries)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            toml::from_str(&text).map_err(|e| Error::Container(format!("{}: {e}", path.display())))?;
        if manifest.format != 1 {
            return Err(Error::Container(format!(
                "unsupported checkpoint format {}",
                manifest.format
            )));
        }
        let cols = &manifest.columns;
        let cfg = &manifest.model;
        let counts = [
            (cols.targets.len(), cfg.targets, "target"),
            (cols.historical.len(), cfg.historical, "historical"),
            (cols.future.len(), cfg.future, "future"),
            (cols.statics.len(), cfg.statics, "static"),
        ];
        for (names, expected, role) in counts {
            if names != expected {
                return Err(Error::Container(format!(
                    "{names} {role} column names for a model with {expected} {role} inputs"
                )));
            }
        }
        let mut model = Model::new(manifest.model, manifest.seed)?;
        let (_, entries) = read_container(&dir.join(PARAMS_FILE))?;
        model.params_mut().load_from(&entries)?;
        model.buffers_mut().load_from(&entries)?;
        Ok(Self {
            model,
            columns: manifest.columns,
            scaler: manifest.scaler,
            seed: manifest.seed,
        })
    }

    /// Forecasts one horizon from inputs in original units: `history` is
    /// `[L, C + C_x]`, `future` is `[T, C_z]`, and `statics` holds `C_s`
    /// values. Point forecasts are returned in original units.
    pub fn forecast(&self, history: &Tensor, future: Option<&Tensor>, statics: Option<&[f64]>) -> Result<Forecast> {
        let cfg = self.model.config();
        let (l, t, hw) = (cfg.lookback, cfg.horizon, cfg.history_width());
        if history.shape() != [l, hw] {
            return Err(Error::dim("Checkpoint::forecast history", &[l, hw], history.shape()));
        }
        let scale = |x: &Tensor, offset: usize| match &self.scaler {
            Some(s) => s.apply_leading(x, offset),
            None => Ok(x.clone()),
        };
        let future = match (cfg.future, future) {
            (0, None) => None,
            (0, Some(_)) => {
                return Err(Error::config("future", "model takes no future covariates"));
            }
            (cz, Some(z)) => {
                if z.shape() != [t, cz] {
                    return Err(Error::dim("Checkpoint::forecast future", &[t, cz], z.shape()));
                }
                Some(scale(z, hw)?.reshape(&[1, t, cz])?)
            }
            (cz, None) => {
                return Err(Error::config(
                    "future",
                    format!("model needs {cz} future covariate columns"),
                ));
            }
        };
        let statics = match (cfg.statics, statics) {
            (0, None) => None,
            (cs, Some(v)) if v.len() == cs => Some(Tensor::new(&[1, 1, cs], v.to_vec())?),
            (cs, given) => {
                return Err(Error::config(
                    "statics",
                    format!("model needs {cs} static values, got {}", given.map_or(0, <[f64]>::len)),
                ));
            }
        };
        let input = ModelInput {
            history: scale(history, 0)?.reshape(&[1, l, hw])?,
            future,
            statics,
        };
        match self.model.predict(&input)? {
            Forecast::Point(y) => Ok(Forecast::Point(match &self.scaler {
                Some(s) => s.invert_leading(&y)?,
                None => y,
            })),
            nb => Ok(nb),
        }
    }
}
