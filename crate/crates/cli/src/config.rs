//! The run configuration file (TOML).

use std::path::{Path, PathBuf};

use pmoe_core::env::EnvConfig;
use pmoe_core::physics::{CharacterModel, SimConfig, World};
use pmoe_core::policy::PolicyConfig;
use pmoe_core::trainer::TrainerConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a training run needs. Missing keys take their defaults and
/// unknown keys are rejected. `trainer.seed` seeds the whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Character model file (JSON). The built-in planar humanoid when absent.
    pub model: Option<PathBuf>,
    /// Clip files to train on. Empty means the bundled suite, generated in
    /// memory.
    pub clips: Vec<PathBuf>,
    /// Where checkpoints and `curves.csv` go.
    pub output_dir: PathBuf,
    /// Total training iterations (a resumed run stops at the same count).
    pub iterations: usize,
    /// Write `latest.pmoe` every this many iterations (0 disables).
    pub checkpoint_every: usize,
    pub sim: SimConfig,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub trainer: TrainerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: None,
            clips: Vec::new(),
            output_dir: PathBuf::from("runs/default"),
            iterations: 200,
            checkpoint_every: 10,
            sim: SimConfig::default(),
            env: EnvConfig::default(),
            policy: PolicyConfig::default(),
            trainer: TrainerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(m) = cfg.model.as_mut() {
            rebase(m);
        }
        cfg.clips.iter_mut().for_each(rebase);
        rebase(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: pmoe_core::Error| CliError::Usage(format!("config: {e}"));
        self.sim.validate().map_err(usage)?;
        self.env.validate().map_err(usage)?;
        self.policy.validate().map_err(usage)?;
        self.trainer.validate().map_err(usage)?;
        if self.iterations == 0 {
            return Err(CliError::Usage("config: iterations must be positive".into()));
        }
        Ok(())
    }

    pub fn world(&self) -> Result<World, CliError> {
        let model = load_model(self.model.as_deref())?;
        Ok(World::new(model, self.sim.clone())?)
    }
}

/// Loads a JSON character model, or returns the built-in one.
pub fn load_model(path: Option<&Path>) -> Result<CharacterModel, CliError> {
    match path {
        None => Ok(CharacterModel::planar_humanoid()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(pmoe_core::Error::from)?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("model {}: {e}", p.display())))
        }
    }
}
