//! Run configuration: flat dotted keys read from a TOML file, then `--set`
//! overrides, then the `CCCVAE_SEED` environment variable.

use std::path::Path;

use cccvae::data::PreprocessConfig;
use cccvae::model::{TrainConfig, TRAIN_KEYS};

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "CCCVAE_SEED";

/// Keys handled here rather than by [`TrainConfig`].
pub const RUN_KEYS: &[&str] = &["preprocess.hvg_count", "preprocess.normalize", "eval.k"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    /// Number of k-means clusters; `None` uses the number of label classes.
    pub eval_k: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { train: TrainConfig::default(), preprocess: PreprocessConfig::default(), eval_k: None }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Core(cccvae::Error::Config(msg.into()))
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, String)>) -> CliResult<()> {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let text = match v {
            toml::Value::Table(t) => {
                flatten(&key, t, out)?;
                continue;
            }
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            other => return Err(config_err(format!("`{key}`: unsupported value {other}"))),
        };
        out.push((key, text));
    }
    Ok(())
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let bad = || config_err(format!("`{key}`: cannot parse `{value}`"));
        match key {
            "preprocess.hvg_count" => self.preprocess.hvg_count = value.trim().parse().map_err(|_| bad())?,
            "preprocess.normalize" => self.preprocess.normalize = value.trim().parse().map_err(|_| bad())?,
            "eval.k" => {
                self.eval_k = match value.trim() {
                    "auto" => None,
                    v => Some(v.parse().map_err(|_| bad())?),
                }
            }
            _ => self.train.set(key, value)?,
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err(e.message().to_string()))?;
        let mut pairs = Vec::new();
        flatten("", &table, &mut pairs)?;
        let mut cfg = Self::default();
        for (k, v) in pairs {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    /// Applies `key=value` strings in order.
    pub fn apply_overrides(&mut self, sets: &[String]) -> CliResult<()> {
        for s in sets {
            let (k, v) =
                s.split_once('=').ok_or_else(|| CliError::usage(format!("--set expects key=value, got `{s}`")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> CliResult<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.train.seed = v.trim().parse().map_err(|_| config_err(format!("{SEED_ENV}: cannot parse `{v}`")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        if self.preprocess.hvg_count == 0 {
            return Err(config_err("preprocess.hvg_count must be positive"));
        }
        if self.eval_k == Some(0) {
            return Err(config_err("eval.k must be positive"));
        }
        Ok(())
    }

    /// Every key with its value; feeding these back through [`Self::set`]
    /// reproduces the configuration.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> =
            self.train.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        out.push(("preprocess.hvg_count".into(), self.preprocess.hvg_count.to_string()));
        out.push(("preprocess.normalize".into(), self.preprocess.normalize.to_string()));
        out.push(("eval.k".into(), self.eval_k.map_or("auto".into(), |k| k.to_string())));
        out
    }

    pub fn all_keys() -> impl Iterator<Item = &'static str> {
        TRAIN_KEYS.iter().chain(RUN_KEYS).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_and_dotted_tables_agree() {
        let a = RunConfig::from_toml_str("lr = 0.01\n[latent]\nd_total = 16\nl_ccc = 4\n[kernel]\nbeta_comm = 0.3\n")
            .unwrap();
        let b =
            RunConfig::from_toml_str("lr = 1e-2\nlatent.d_total = 16\nlatent.l_ccc = 4\n\"kernel.beta_comm\" = 0.3\n")
                .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.latent.d_total, 16);
        assert_eq!(a.train.kernel.beta_comm, 0.3);
    }

    #[test]
    fn pairs_round_trip() {
        let mut c = RunConfig::default();
        c.apply_overrides(&["eval.k=5".into(), "seed=9".into(), "preprocess.normalize=false".into()]).unwrap();
        let mut d = RunConfig::default();
        for (k, v) in c.to_pairs() {
            d.set(&k, &v).unwrap();
        }
        assert_eq!(c, d);
        assert_eq!(c.to_pairs().len(), RunConfig::all_keys().count());
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(RunConfig::from_toml_str("nonsense = 1").is_err());
        assert!(RunConfig::from_toml_str("lr = [1, 2]").is_err());
        assert!(RunConfig::from_toml_str("lr = ").is_err());
        let mut c = RunConfig::default();
        assert!(c.apply_overrides(&["lr".into()]).is_err());
    }
}
