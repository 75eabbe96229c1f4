//! Run configuration read from a TOML file with `[task]`, `[data]`, `[train]`,
//! `[eval]` and `[run]` sections. Every section and key is optional.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SyntheticTask;
use crate::error::{Error, Result};
use crate::training::{Method, TrainConfig};
use crate::verify::VerifySettings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_count: 2000,
            test_count: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            methods: Method::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Worker threads; `None` uses all cores.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: SyntheticTask,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub verify: VerifySettings,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.train.validate()?;
        if self.data.train_count == 0 || self.data.test_count == 0 {
            return Err(Error::Config("data counts must be positive".into()));
        }
        if self.eval.seeds.is_empty() || self.eval.methods.is_empty() {
            return Err(Error::Config("eval needs at least one seed and one method".into()));
        }
        if self.verify.fd_step <= 0.0 || self.verify.descent_group_size == 0 || self.verify.mc_draws < 2 {
            return Err(Error::Config("verify needs fd_step > 0, descent_group_size >= 1, mc_draws >= 2".into()));
        }
        if self.run.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }

    /// Points every random stream at `seed`: data, training, verification, and
    /// evaluation seeds `seed, seed + 1, ...`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.train.seed = seed;
        self.verify.seed = seed;
        let n = self.eval.seeds.len() as u64;
        self.eval.seeds = (seed..seed + n).collect();
        self
    }

    /// SHA-256 of the canonical serialization, excluding the thread count.
    pub fn digest(&self) -> String {
        let canonical = RunConfig {
            run: RunSection::default(),
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("configuration serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.group_size, 4);
        assert_eq!(cfg.train.rollout_batch, 256);
        assert_eq!(cfg.train.train_batch, 32);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.data.train_count, 2000);
    }

    #[test]
    fn toml_round_trip_and_digest() {
        let mut cfg = RunConfig::default();
        cfg.train.clip_epsilon = 0.3;
        cfg.eval.methods = vec![Method::Dwrl, Method::Bt];
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
        let mut threaded = cfg.clone();
        threaded.run.threads = Some(3);
        assert_eq!(threaded.digest(), cfg.digest());
        assert_ne!(RunConfig::default().digest(), cfg.digest());
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(RunConfig::from_toml_str("[train]\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[train]\nclip_epsilon = 0.0\n").is_err());
        assert!(RunConfig::from_toml_str("[eval]\nmethods = [\"nope\"]\n").is_err());
        let cfg = RunConfig::from_toml_str("[eval]\nmethods = [\"grpo-pair\", \"no-misalign\"]\n").unwrap();
        assert_eq!(cfg.eval.methods, vec![Method::GrpoPair, Method::NoMisalign]);
    }
}
