use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::trainer::{Hyperparameters, ModelConfig};
use crate::wsa::Wsa;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Schednet,
    Idqn,
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Schednet => "schednet",
            Algo::Idqn => "idqn",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "schednet" => Ok(Algo::Schednet),
            "idqn" => Ok(Algo::Idqn),
            other => Err(Error::config("algo", format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Hidden-layer widths. Unset widths fall back to the environment defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSizes {
    pub actor_hidden: Option<usize>,
    pub critic_hidden: Option<usize>,
    /// Tell receivers which agents sent the broadcast (off by default).
    pub sender_ids: bool,
}

/// One experiment: an algorithm on an environment, trained once per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    #[serde(default = "default_algo")]
    pub algo: Algo,
    #[serde(default = "default_wsa")]
    pub wsa: Wsa,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_l")]
    pub l: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub network: NetworkSizes,
    pub output_dir: PathBuf,
}

fn default_algo() -> Algo {
    Algo::Schednet
}

fn default_wsa() -> Wsa {
    Wsa::TopK
}

fn default_k() -> usize {
    1
}

fn default_l() -> usize {
    2
}

impl ExperimentConfig {
    pub fn new(env: EnvConfig, algo: Algo, wsa: Wsa, k: usize, l: usize, seeds: Vec<u64>, output_dir: PathBuf) -> Self {
        Self {
            env,
            algo,
            wsa,
            k,
            l,
            seeds,
            hyperparameters: Hyperparameters::default(),
            network: NetworkSizes::default(),
            output_dir,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let path = e.span().map(|s| format!("byte {}..{}", s.start, s.end)).unwrap_or_default();
            Error::config(path, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match &self.env {
            EnvConfig::Pp(c) => c.validate()?,
            EnvConfig::Ccn(c) => c.validate()?,
        }
        let n = self.env.n_agents();
        if self.k == 0 || self.k > n {
            return Err(Error::config("k", format!("k = {} must satisfy 1 <= k <= n = {n}", self.k)));
        }
        if self.l == 0 {
            return Err(Error::config("l", "must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        if self.hyperparameters.eval_interval == 0 {
            return Err(Error::config("hyperparameters.eval_interval", "must be >= 1"));
        }
        if self.network.actor_hidden == Some(0) || self.network.critic_hidden == Some(0) {
            return Err(Error::config("network", "hidden widths must be >= 1"));
        }
        self.hyperparameters.validate()
    }

    pub fn actor_hidden(&self) -> usize {
        self.network.actor_hidden.unwrap_or(match self.env {
            EnvConfig::Pp(_) => 32,
            EnvConfig::Ccn(_) => 8,
        })
    }

    pub fn critic_hidden(&self) -> usize {
        self.network.critic_hidden.unwrap_or(match self.env {
            EnvConfig::Pp(_) => 64,
            EnvConfig::Ccn(_) => 16,
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let env = self.env.build()?;
        let mut cfg =
            ModelConfig::for_env(env.as_ref(), self.wsa, self.k, self.l, self.actor_hidden(), self.critic_hidden())?;
        cfg.sender_ids = self.network.sender_ids;
        Ok(cfg)
    }

    /// Short label such as `schednet-top_k-k1-l2` or `idqn`.
    pub fn label(&self) -> String {
        match self.algo {
            Algo::Idqn => "idqn".into(),
            Algo::Schednet => format!("schednet-{}-k{}-l{}", self.wsa, self.k, self.l),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
algo = "schednet"
wsa = "top_k"
k = 1
l = 2
seeds = [1, 2]
output_dir = "runs/pp"

[env]
kind = "pp"
grid_size = 7

[hyperparameters]
training_steps = 1000
batch_size = 32
"#;

    #[test]
    fn parses_and_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.hyperparameters.training_steps, 1000);
        assert_eq!(cfg.hyperparameters.gamma, 0.9);
        assert_eq!(cfg.actor_hidden(), 32);
        assert_eq!(cfg.critic_hidden(), 64);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_k_above_n() {
        let text = SAMPLE.replace("k = 1", "k = 5");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "k"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_and_bad_fields() {
        assert!(ExperimentConfig::from_toml_str(&SAMPLE.replace("grid_size", "grid_sise")).is_err());
        assert!(ExperimentConfig::from_toml_str(&SAMPLE.replace("[1, 2]", "[]")).is_err());
        assert!(ExperimentConfig::from_toml_str(&SAMPLE.replace("l = 2", "l = 0")).is_err());
        assert!(ExperimentConfig::from_toml_str(&SAMPLE.replace("top_k", "top_z")).is_err());
        match ExperimentConfig::from_toml_str(&SAMPLE.replace("batch_size = 32", "batch_size = 0")) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "hyperparameters.batch_size"),
            other => panic!("{other:?}"),
        }
    }
}
