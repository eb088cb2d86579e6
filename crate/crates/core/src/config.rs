//! JSON config files. Every config carries a `schema_version`; files with a
//! different version are rejected rather than guessed at.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub trait JsonConfig: Serialize + DeserializeOwned {
    fn schema_version(&self) -> u32;
    fn validate(&self) -> Result<()>;

    fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        if cfg.schema_version() != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version()
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

impl JsonConfig for crate::models::ModelConfig {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }

    fn validate(&self) -> Result<()> {
        crate::models::ModelConfig::validate(self)
    }
}

impl JsonConfig for crate::preprocess::PreprocessConfig {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }

    fn validate(&self) -> Result<()> {
        crate::preprocess::PreprocessConfig::validate(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelConfig;

    #[test]
    fn round_trip_and_version_check() {
        let cfg = ModelConfig::default();
        assert_eq!(ModelConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let bad = cfg.to_json().replace("\"schema_version\": 1", "\"schema_version\": 7");
        assert!(matches!(ModelConfig::from_json(&bad), Err(Error::Config(_))));
        assert!(ModelConfig::from_json("{\"n_layerz\": 2}").is_err());
        let partial = ModelConfig::from_json("{\"n_layers\": 2}").unwrap();
        assert_eq!(partial.n_layers, 2);
        assert_eq!(partial.d_model, 64);
    }
}
