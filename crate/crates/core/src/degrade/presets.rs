//! The four fixed presets, loaded from the bundled `presets.v1` table.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::Deserialize;

use super::DegradationSpec;
use crate::error::{Error, Result};

pub const PRESETS_V1: &str = include_str!("../../assets/presets.v1.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Preset {
    D1,
    D2,
    D3,
    D4,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::D1, Preset::D2, Preset::D3, Preset::D4];

    pub fn id(self) -> &'static str {
        match self {
            Preset::D1 => "d1",
            Preset::D2 => "d2",
            Preset::D3 => "d3",
            Preset::D4 => "d4",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "d1" => Ok(Preset::D1),
            "d2" => Ok(Preset::D2),
            "d3" => Ok(Preset::D3),
            "d4" => Ok(Preset::D4),
            other => Err(Error::Param(format!("unknown preset {other:?}"))),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Deserialize)]
struct PresetFile {
    version: u32,
    presets: BTreeMap<String, DegradationSpec>,
}

/// Parse and validate a preset table in the `presets.v1` format.
pub fn presets_from_toml(text: &str) -> Result<BTreeMap<String, DegradationSpec>> {
    let f: PresetFile =
        toml::from_str(text).map_err(|e| Error::Param(format!("preset table: {e}")))?;
    if f.version != 1 {
        return Err(Error::Param(format!("unsupported preset version {}", f.version)));
    }
    for (id, d) in &f.presets {
        d.stage1
            .validate()
            .and_then(|_| d.stage2.validate())
            .map_err(|e| Error::Param(format!("preset {id}: {e}")))?;
    }
    Ok(f.presets)
}

/// The bundled table.
pub fn presets() -> &'static BTreeMap<String, DegradationSpec> {
    static TABLE: OnceLock<BTreeMap<String, DegradationSpec>> = OnceLock::new();
    TABLE.get_or_init(|| presets_from_toml(PRESETS_V1).expect("bundled preset table is valid"))
}

pub fn preset(p: Preset) -> DegradationSpec {
    presets()[p.id()].clone()
}

pub fn preset_ids() -> Vec<&'static str> {
    Preset::ALL.iter().map(|p| p.id()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{BlurFamily, ResizeFilter};

    #[test]
    fn bundled_table_has_four_labelled_presets() {
        let t = presets();
        assert_eq!(t.len(), 4);
        for (i, p) in Preset::ALL.iter().enumerate() {
            assert_eq!(preset(*p).label, i as u64 + 1);
        }
    }

    #[test]
    fn d1_shape() {
        let d = preset(Preset::D1);
        assert!(d.stage1.resize_scale <= 0.25);
        assert_eq!(d.stage1.blur.family, BlurFamily::IsotropicGaussian);
        assert!(d.stage1.gaussian_noise.gray && d.stage1.gaussian_noise.sigma > 0.0);
        assert!(d.stage1.poisson_noise.scale > 0.0);
        assert!(d.stage1.jpeg_quality.unwrap() >= 90);
        assert_eq!(d.stage2.resize_scale, 1.0);
        assert!(d.stage2.blur.sigma_x < d.stage1.blur.sigma_x);
        assert!(d.stage2.jpeg_quality.unwrap() > d.stage1.jpeg_quality.unwrap());
        assert_eq!(d.stage2.final_sinc.as_ref().unwrap().family, BlurFamily::Sinc);
    }

    #[test]
    fn d2_shape() {
        let d = preset(Preset::D2);
        assert!(d.stage1.resize_scale > 1.0);
        assert!(d.stage1.jpeg_quality.unwrap() <= 30);
        assert!(d.stage1.poisson_noise.color);
        assert_eq!(d.stage1.blur.family, BlurFamily::AnisotropicGaussian);
        assert!(d.stage2.resize_scale < 1.0);
        assert_eq!(d.stage2.blur.family, BlurFamily::AnisotropicGaussian);
        assert!(d.stage2.final_sinc.is_none());
    }

    #[test]
    fn d3_shape() {
        let d = preset(Preset::D3);
        for s in [&d.stage1, &d.stage2] {
            assert_eq!(s.resize_scale, 1.0);
            assert_eq!(s.jpeg_quality, Some(100));
        }
        assert_eq!(d.stage1.blur.family, BlurFamily::Sinc);
        assert_eq!(d.stage1.gaussian_noise.sigma, 0.0);
        assert!(d.stage1.poisson_noise.scale <= 0.1);
        assert!(d.stage2.gaussian_noise.sigma <= 0.01);
        assert_eq!(d.stage2.final_sinc.as_ref().unwrap().family, BlurFamily::Sinc);
    }

    #[test]
    fn d4_shape() {
        let d = preset(Preset::D4);
        assert!(d.stage1.resize_scale < 1.0 && d.stage1.resize_scale >= 0.5);
        assert_eq!(d.stage1.blur.family, BlurFamily::PlateauAnisotropic);
        assert!(d.stage1.jpeg_quality.unwrap() <= 25);
        assert!(d.stage2.resize_scale > 1.0);
        assert_ne!(d.stage2.resize_filter, ResizeFilter::Area);
        assert_eq!(d.stage2.blur.family, BlurFamily::PlateauAnisotropic);
        assert!(d.stage2.final_sinc.is_some());
    }

    #[test]
    fn unknown_id_is_rejected() {
        assert!("d5".parse::<Preset>().is_err());
        assert_eq!("d3".parse::<Preset>().unwrap(), Preset::D3);
    }

    #[test]
    fn bad_tables_are_rejected() {
        assert!(presets_from_toml("version = 2\n[presets]\n").is_err());
        let bad = PRESETS_V1.replace("jpeg_quality = 90", "jpeg_quality = 0");
        assert!(presets_from_toml(&bad).is_err());
    }
}
