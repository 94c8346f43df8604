use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use camforge_core::forge::{Effect, ForgeConfig, SceneStyle};
use camforge_core::net::{default_adapter_blocks, ModelConfig, OptimConfig};
use camforge_core::PyramidPlan;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeSection {
    pub effect: Effect,
    /// Number of conditions for a one-shot plan; the pyramid is used when absent.
    pub one_shot: Option<usize>,
    pub scenes_per_layer: usize,
    pub canvas: usize,
    pub style: SceneStyle,
}

impl Default for ForgeSection {
    fn default() -> Self {
        Self {
            effect: Effect::Shutter,
            one_shot: None,
            scenes_per_layer: 6,
            canvas: 512,
            style: SceneStyle::Primitives,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: u64,
    pub batch_size: usize,
    /// Steps between FEP probes and checkpoint saves; 0 disables both.
    pub cadence: u64,
    pub caption: String,
    /// Dataset directory; defaults to the run directory.
    pub dataset: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 4,
            cadence: 50,
            caption: "a video".into(),
            dataset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FepSection {
    pub latent_seed: u64,
    pub baseline_seeds: Vec<u64>,
    /// Prompt file, one per line; the built-in 64-prompt set when absent.
    pub prompts: Option<PathBuf>,
    pub codec_seed: u64,
}

impl Default for FepSection {
    fn default() -> Self {
        Self {
            latent_seed: 0,
            baseline_seeds: vec![0, 1],
            prompts: None,
            codec_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives the condition plan and the training noise draws.
    pub seed: u64,
    pub forge: ForgeSection,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub train: TrainSection,
    pub fep: FepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            forge: ForgeSection::default(),
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            train: TrainSection::default(),
            fep: FepSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text)?;
        let mut cfg: RunConfig = toml::from_str(text)?;
        let has_blocks = raw
            .get("model")
            .and_then(|m| m.as_table())
            .is_some_and(|m| m.contains_key("adapter_blocks"));
        if !has_blocks {
            cfg.model.adapter_blocks = default_adapter_blocks(cfg.model.n_blocks);
        }
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn forge_config(&self) -> ForgeConfig {
        let f = &self.forge;
        let mut c = ForgeConfig::new(f.effect);
        match f.one_shot {
            Some(n) => {
                c.plan = PyramidPlan::one_shot(n, self.seed);
                c.scenes_per_layer = 1;
            }
            None => {
                c.plan.rng_seed = self.seed;
                c.scenes_per_layer = f.scenes_per_layer;
            }
        }
        c.canvas = (f.canvas, f.canvas);
        c.style = f.style;
        c
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.train.dataset, &self.fep.prompts].into_iter().flatten() {
            if !p.exists() {
                return Err(camforge_core::Error::Io {
                    path: p.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "configured path does not exist"),
                }
                .into());
            }
        }
        self.model.validate()?;
        self.optim.validate()?;
        self.forge_config().validate()?;
        anyhow::ensure!(self.train.batch_size > 0, "train.batch_size must be positive");
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::parse("seed = 4\n[model]\nn_blocks = 6\n[optim]\nlr = 0.001\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.model.adapter_blocks, vec![4, 5]);
        assert_eq!(c.model.model_dim, 64);
        assert_eq!(c.optim.lr, 1e-3);
        assert_eq!(c.optim.warmup_steps, 100);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sed = 4\n").is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml().unwrap()).unwrap(), c);
    }
}
