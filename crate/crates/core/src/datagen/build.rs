use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{write_specs, Manifest, ManifestRecord, Source, Split, Variant, MANIFEST_FILE, SPECS_FILE};
use super::scene::{gen_scene, SceneParams};
use crate::degrade::{apply_pipeline, preset, sample_spec, DegradationSpec, DegradeSeed, Preset, SpecSpace};
use crate::error::{param, Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum DegradationSource {
    /// Variants cycle through the listed presets.
    Presets { ids: Vec<String> },
    /// Every variant gets a freshly sampled spec.
    Sampled { space: SpecSpace },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n: usize,
    pub scene: SceneParams,
    pub variants: usize,
    /// Train and val fractions; test takes the rest.
    pub train_frac: f64,
    pub val_frac: f64,
    pub degradations: DegradationSource,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n: 16,
            scene: SceneParams::default(),
            variants: 5,
            train_frac: 0.8,
            val_frac: 0.1,
            degradations: DegradationSource::Presets {
                ids: Preset::ALL.iter().map(|p| p.id().to_string()).collect(),
            },
        }
    }
}

fn split_of(i: usize, n: usize, cfg: &DatasetConfig) -> Split {
    let n_train = (n as f64 * cfg.train_frac).round() as usize;
    let n_val = (n as f64 * cfg.val_frac).round() as usize;
    if i < n_train {
        Split::Train
    } else if i < n_train + n_val {
        Split::Val
    } else {
        Split::Test
    }
}

pub fn scene_id(i: usize) -> String {
    format!("scene_{i:05}")
}

/// Generate `cfg.n` scenes with `cfg.variants` degraded copies each under
/// `out`. Output is a pure function of (cfg, seed).
pub fn build_dataset(cfg: &DatasetConfig, out: &Path, seed: u64) -> Result<Manifest> {
    if cfg.variants == 0 {
        return param("at least one degraded variant per scene is required");
    }
    if !(0.0..=1.0).contains(&cfg.train_frac) || !(0.0..=1.0).contains(&cfg.val_frac) || cfg.train_frac + cfg.val_frac > 1.0 {
        return param("split fractions must be non-negative and sum to at most 1");
    }
    let presets: Vec<Preset> = match &cfg.degradations {
        DegradationSource::Presets { ids } if ids.is_empty() => return param("empty preset list"),
        DegradationSource::Presets { ids } => ids.iter().map(|s| s.parse()).collect::<Result<_>>()?,
        DegradationSource::Sampled { .. } => Vec::new(),
    };
    let mut specs: BTreeMap<String, DegradationSpec> = BTreeMap::new();
    let mut manifest = Manifest::default();
    for i in 0..cfg.n {
        let id = scene_id(i);
        let mut scene_rng = rng::stream(seed, &[rng::hash_str("scene"), i as u64]);
        let (hq, ann) = gen_scene(&mut scene_rng, &cfg.scene)?;
        let hq = hq.quantize_u8();
        let scene_path = format!("scenes/{id}.png");
        hq.save_png(&out.join(&scene_path))?;
        let mut variants = Vec::with_capacity(cfg.variants);
        for v in 0..cfg.variants {
            let spec = match &cfg.degradations {
                DegradationSource::Presets { .. } => preset(presets[v % presets.len()]),
                DegradationSource::Sampled { space } => {
                    let mut r = rng::stream(seed, &[rng::hash_str("spec"), i as u64, v as u64]);
                    sample_spec(&mut r, space)?
                }
            };
            let spec_id = match &cfg.degradations {
                DegradationSource::Presets { .. } => presets[v % presets.len()].id().to_string(),
                DegradationSource::Sampled { .. } => format!("s{:x}", spec.label),
            };
            if let Some(prev) = specs.get(&spec_id) {
                if prev != &spec {
                    return Err(Error::Data(format!("spec label collision on {spec_id}")));
                }
            }
            let vseed = rng::stream_id(&[seed, i as u64, v as u64]);
            let lq = apply_pipeline(&hq, &spec, DegradeSeed::new(vseed, &id))?.quantize_u8();
            let path = format!("lq/{spec_id}/{id}_v{v}.png");
            lq.save_png(&out.join(&path))?;
            specs.insert(spec_id.clone(), spec);
            variants.push(Variant {
                spec_id,
                seed: vseed,
                path,
            });
        }
        manifest.records.push(ManifestRecord {
            id,
            scene_path,
            annotation: ann,
            split: split_of(i, cfg.n, cfg),
            degradations: variants,
            source: Source::Toy,
        });
    }
    std::fs::create_dir_all(out).map_err(crate::error::io_err(out))?;
    manifest.write(&out.join(MANIFEST_FILE))?;
    write_specs(&out.join(SPECS_FILE), &specs)?;
    Ok(manifest)
}
