//! Run configuration: every hyperparameter of every command, loaded from
//! JSON, overridden by flags, validated before anything runs, and written
//! next to every output.

use std::fs;
use std::path::Path;

use hicd_core::baseline::BrConfig;
use hicd_core::classifier::ClassifierConfig;
use hicd_core::synthetic::SyntheticConfig;
use hicd_core::tagger::TaggerConfig;
use hicd_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const RUN_CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Seed of the train/validation/test split.
    pub seed: u64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    /// Codes carried by fewer training reports are dropped everywhere.
    pub min_label_count: usize,
    /// Dimension of randomly initialized embeddings, used when no table
    /// is supplied.
    pub embedding_dim: usize,
    pub tagger: TaggerConfig,
    pub classifier: ClassifierConfig,
    pub baseline: BrConfig,
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: RUN_CONFIG_SCHEMA_VERSION,
            seed: 0,
            split: [0.70, 0.15, 0.15],
            min_label_count: 10,
            embedding_dim: 100,
            tagger: TaggerConfig::default(),
            classifier: ClassifierConfig::default(),
            baseline: BrConfig::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(RUN_CONFIG_SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(Error::Config(format!(
                    "unsupported config schema_version {v} (expected {RUN_CONFIG_SCHEMA_VERSION})"
                )))
            }
            None => return Err(Error::Config("config lacks an integer schema_version".into())),
        }
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads `path` when given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    /// One seed for the split and every model.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.tagger.seed = seed;
        self.classifier.seed = seed;
        self.baseline.seed = seed;
        self.synthetic.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != RUN_CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported config schema_version {}",
                self.schema_version
            )));
        }
        if self.split.iter().any(|r| !(0.0..=1.0).contains(r))
            || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "split ratios {:?} must lie in [0, 1] and sum to 1",
                self.split
            )));
        }
        if self.split[0] == 0.0 {
            return Err(Error::Config("the training fraction must be positive".into()));
        }
        if self.min_label_count == 0 {
            return Err(Error::Config("min_label_count must be at least 1".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        self.tagger.validate().map_err(as_config)?;
        self.classifier.validate().map_err(as_config)?;
        self.baseline.validate().map_err(as_config)?;
        self.synthetic.validate().map_err(as_config)?;
        Ok(())
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_json(&c.to_pretty_json()).unwrap(), c);
        assert_eq!(c.tagger.hidden, 256);
        assert_eq!(c.classifier.attention, 128);
        assert_eq!(c.classifier.lambda, 100.0);
        assert_eq!((c.tagger.epochs, c.classifier.epochs), (100, 30));
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = RunConfig::from_json(r#"{"schema_version": 1, "classifier": {"lambda": 0.1}}"#).unwrap();
        assert_eq!(c.classifier.lambda, 0.1);
        assert_eq!(c.classifier.hidden, 256);
    }

    #[test]
    fn rejects_bad_files() {
        for text in [
            "{}",
            r#"{"schema_version": 2}"#,
            r#"{"schema_version": 1, "bogus": 3}"#,
            r#"{"schema_version": 1, "classifier": {"variant": "nope"}}"#,
            "not json",
        ] {
            assert!(RunConfig::from_json(text).unwrap_err().is_config(), "{text}");
        }
    }

    #[test]
    fn validation_is_a_config_error() {
        let mut c = RunConfig::default();
        c.split = [0.5, 0.2, 0.2];
        assert!(c.validate().unwrap_err().is_config());
        let mut c = RunConfig::default();
        c.tagger.lr = -1.0;
        assert!(c.validate().unwrap_err().is_config());
        let mut c = RunConfig::default();
        c.classifier.lambda = f64::NAN;
        assert!(c.validate().unwrap_err().is_config());
    }
}
