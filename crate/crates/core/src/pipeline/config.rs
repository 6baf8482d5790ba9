use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agnostic::{AgnosticConfig, LabelTable};
use crate::error::{Error, Result};
use crate::flowtrack::TrackConfig;
use crate::mpdt::MpdtConfig;
use crate::objectives::{AdamConfig, TryOnLossConfig};
use crate::warpfit::WarpLossConfig;

use super::synth::{Motion, SynthScene};

/// Optimizer budgets of the two warp fits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub tps_steps: usize,
    pub tps_lr: f64,
    pub tps_grid: (usize, usize),
    /// Steps per pyramid scale.
    pub flow_steps: usize,
    pub flow_lr: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tps_steps: 150,
            tps_lr: 0.1,
            tps_grid: crate::warpfit::DEFAULT_GRID,
            flow_steps: 60,
            flow_lr: 0.05,
        }
    }
}

/// The train-toy overfitting loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub scene: SynthScene,
    pub steps: usize,
    pub lr: f64,
    pub mpdt: MpdtConfig,
    /// Adversarial weight during the loop.
    pub adversarial_weight: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            scene: SynthScene {
                seed: 3,
                frames: 2,
                height: 16,
                width: 16,
                motion: Motion::Translation {
                    velocity: (0.5, 0.0),
                },
                occluder: None,
                flow_noise: 0.0,
            },
            steps: 500,
            lr: 2e-4,
            mpdt: MpdtConfig {
                channels: 16,
                blocks: 2,
                heads: 2,
                patch_sizes: vec![(2, 2), (1, 1)],
                downsample: 2,
                ..MpdtConfig::default()
            },
            adversarial_weight: 0.0,
        }
    }
}

/// Everything a CLI run needs; every section has defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    /// Label-table file; the built-in table matches the synthetic scenes.
    pub label_table: Option<PathBuf>,
    pub scene: SynthScene,
    pub agnostic: AgnosticConfig,
    pub warp: WarpLossConfig,
    pub fit: FitConfig,
    pub track: TrackConfig,
    pub mpdt: MpdtConfig,
    /// Reduced generator preset, for reference and quick runs.
    pub mpdt_tiny: MpdtConfig,
    pub loss: TryOnLossConfig,
    pub adam: AdamConfig,
    pub toy: ToyConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            label_table: None,
            scene: SynthScene::default(),
            agnostic: AgnosticConfig::default(),
            warp: WarpLossConfig::default(),
            fit: FitConfig::default(),
            track: TrackConfig::default(),
            mpdt: MpdtConfig::default(),
            mpdt_tiny: MpdtConfig::tiny(),
            loss: TryOnLossConfig::default(),
            adam: AdamConfig::default(),
            toy: ToyConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.warp.validate()?;
        self.track.validate()?;
        self.mpdt.validate()?;
        self.toy.mpdt.validate()?;
        self.loss.validate()?;
        if self.fit.tps_steps == 0 || self.fit.flow_steps == 0 {
            return Err(Error::Config("fit steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn labels(&self) -> Result<LabelTable> {
        match &self.label_table {
            Some(p) => LabelTable::load(p),
            None => Ok(LabelTable::default()),
        }
    }
}
