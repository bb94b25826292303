//! TOML configuration for fitting and evaluating on CSV datasets.
//!
//! ```toml
//! seed = 7
//! standardize = false
//!
//! [target]
//! path = "target.csv"
//!
//! [cv]
//! folds = 5
//!
//! [[sources]]
//! path = "source1.csv"
//! estimator = "lasso-cv"   # or "ols", "ridge(0.1)"; omit for the automatic rule
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::estimator::{PtlConfig, SourceEstimator};
use crate::lasso::LassoOptions;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataRef {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceEntry {
    pub path: PathBuf,
    #[serde(default)]
    pub estimator: Option<SourceEstimator>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvSection {
    #[serde(default = "default_folds")]
    pub folds: usize,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection {
            folds: default_folds(),
        }
    }
}

fn default_folds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default)]
    pub seed: u64,
    pub target: DataRef,
    pub sources: Vec<SourceEntry>,
    #[serde(default)]
    pub cv: CvSection,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub lasso: LassoOptions,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl FitConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = FitConfig::from_toml(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: FitConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        if cfg.sources.is_empty() {
            return Err(Error::config("at least one `[[sources]]` entry is required"));
        }
        if cfg.cv.folds < 2 {
            return Err(Error::config("cv.folds must be at least 2"));
        }
        cfg.lasso.validate()?;
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_target(&self) -> Result<DataSet> {
        DataSet::read_csv(self.resolve(&self.target.path))
    }

    pub fn load_sources(&self) -> Result<Vec<DataSet>> {
        self.sources
            .iter()
            .map(|s| DataSet::read_csv(self.resolve(&s.path)))
            .collect()
    }

    pub fn ptl_config(&self) -> PtlConfig {
        PtlConfig {
            folds: self.cv.folds,
            lasso: self.lasso,
            seed: self.seed,
            source_estimators: self.source_estimators(),
        }
    }

    pub fn source_estimators(&self) -> Vec<Option<SourceEstimator>> {
        self.sources.iter().map(|s| s.estimator).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_defaults() {
        let cfg = FitConfig::from_toml(
            r#"
            seed = 3
            [target]
            path = "t.csv"
            [[sources]]
            path = "a.csv"
            estimator = "ols"
            [[sources]]
            path = "b.csv"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.cv.folds, 5);
        assert_eq!(cfg.source_estimators(), vec![Some(SourceEstimator::Ols), None]);
        assert!(!cfg.standardize);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(FitConfig::from_toml("[target]\npath = \"t.csv\"\nsources = []\n").is_err());
        let bad_estimator = "[target]\npath = \"t\"\n[[sources]]\npath = \"s\"\nestimator = \"svm\"\n";
        assert!(FitConfig::from_toml(bad_estimator).is_err());
        let bad_folds = "[target]\npath = \"t\"\n[cv]\nfolds = 1\n[[sources]]\npath = \"s\"\n";
        assert!(FitConfig::from_toml(bad_folds).is_err());
    }
}
