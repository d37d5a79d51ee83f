//! The one config file every command reads.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use face2scene_core::datagen::{DatasetConfig, DegradationSource, SceneParams};
use face2scene_core::degrade::{Preset, SpecSpace};
use face2scene_core::evalkit::{SsimMode, SsimOptions};
use face2scene_core::facegeom::DEFAULT_CANONICAL;
use face2scene_core::refsim::QualityLevel;
use face2scene_models::fadex::FadexConfig;
use face2scene_models::mapnet::{MapnetConfig, TokenMode};
use face2scene_models::restorer::RestorerConfig;
use serde::{Deserialize, Serialize};

pub const DATA_ENV: &str = "FACE2SCENE_DATA";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub data: DataSection,
    pub degrade: DegradeSection,
    pub fadex: FadexSection,
    pub mapnet: MapnetSection,
    pub restorer: RestorerConfig,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    pub root: PathBuf,
    pub n: usize,
    pub variants: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub canonical: usize,
    pub scene: SceneParams,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            root: PathBuf::from("data/toy"),
            n: d.n,
            variants: d.variants,
            train_frac: d.train_frac,
            val_frac: d.val_frac,
            canonical: DEFAULT_CANONICAL,
            scene: d.scene,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradeSection {
    pub presets: Vec<String>,
    /// Draw a fresh spec per variant instead of cycling presets.
    pub sampled: bool,
    pub space: SpecSpace,
}

impl Default for DegradeSection {
    fn default() -> Self {
        Self {
            presets: Preset::ALL.iter().map(|p| p.id().to_string()).collect(),
            sampled: false,
            space: SpecSpace::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FadexSection {
    #[serde(flatten)]
    pub model: FadexConfig,
    /// Reference quality used for the HQ face of each training pair.
    pub hq_level: QualityLevel,
}

impl Default for FadexSection {
    fn default() -> Self {
        Self {
            model: FadexConfig::default(),
            hq_level: QualityLevel::Gt,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MapnetSection {
    #[serde(flatten)]
    pub model: MapnetConfig,
    /// 21, 5 or 1.
    pub tokens: usize,
}

impl Default for MapnetSection {
    fn default() -> Self {
        Self {
            model: MapnetConfig::default(),
            tokens: 21,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub refq: QualityLevel,
    pub cfg_scale: f64,
    /// gt-face-inserted, face-only or full.
    pub protocol: String,
    pub ssim_mode: SsimMode,
    /// Held-out images for the extractor analysis.
    pub images: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            refq: QualityLevel::Gt,
            cfg_scale: 1.10,
            protocol: "gt-face-inserted".into(),
            ssim_mode: SsimMode::Gray,
            images: 10,
        }
    }
}

impl EvalSection {
    pub fn ssim(&self) -> SsimOptions {
        SsimOptions {
            mode: self.ssim_mode,
            ..SsimOptions::default()
        }
    }
}

pub fn token_mode(n: usize) -> anyhow::Result<TokenMode> {
    Ok(match n {
        21 => TokenMode::All,
        5 => TokenMode::GlobalIntermediate,
        1 => TokenMode::Global,
        _ => bail!("token count must be 1, 5 or 21, got {n}"),
    })
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Config> {
        let cfg: Config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => Config::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.fadex.model.validate()?;
        self.mapnet.model.validate()?;
        self.restorer.validate()?;
        token_mode(self.mapnet.tokens)?;
        if self.fadex.model.channels != self.mapnet.model.in_channels {
            bail!(
                "fadex.channels ({}) must equal mapnet.in_channels ({})",
                self.fadex.model.channels,
                self.mapnet.model.in_channels
            );
        }
        if self.mapnet.model.token_dim != self.restorer.token_dim {
            bail!("mapnet.token_dim and restorer.token_dim differ");
        }
        if !["gt-face-inserted", "face-only", "full"].contains(&self.eval.protocol.as_str()) {
            bail!("unknown eval protocol {:?}", self.eval.protocol);
        }
        for p in &self.degrade.presets {
            p.parse::<Preset>()?;
        }
        Ok(())
    }

    /// Data root: the environment variable wins over the config.
    pub fn data_root(&self) -> PathBuf {
        std::env::var_os(DATA_ENV).map(PathBuf::from).unwrap_or_else(|| self.data.root.clone())
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            n: self.data.n,
            scene: self.data.scene.clone(),
            variants: self.data.variants,
            train_frac: self.data.train_frac,
            val_frac: self.data.val_frac,
            degradations: if self.degrade.sampled {
                DegradationSource::Sampled {
                    space: self.degrade.space.clone(),
                }
            } else {
                DegradationSource::Presets {
                    ids: self.degrade.presets.clone(),
                }
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_fills_defaults() {
        let c: Config = toml::from_str("[fadex]\nepochs = 3\ntemperature = 0.2\n[mapnet]\ntokens = 5\n").unwrap();
        assert_eq!(c.fadex.model.epochs, 3);
        assert_eq!(c.fadex.model.batch_size, 20);
        assert_eq!(c.restorer.lambda_cfg, 1.10);
        assert_eq!(token_mode(c.mapnet.tokens).unwrap().count(), 5);
        c.validate().unwrap();
    }

    #[test]
    fn mismatched_widths_rejected() {
        let c: Config = toml::from_str("[fadex]\nchannels = 16\n").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn shipped_toy_config_parses() {
        let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml");
        Config::load(Some(&p)).unwrap();
    }
}
