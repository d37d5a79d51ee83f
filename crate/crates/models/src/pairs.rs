//! Scene-level HQ/LQ pairs and the aligned face crops derived from them.

use std::collections::BTreeMap;
use std::ops::Range;

use face2scene_core::datagen::{gen_scene, scene_id, Dataset, SceneParams, Split};
use face2scene_core::degrade::{apply_pipeline, preset, DegradeSeed, Preset};
use face2scene_core::facegeom::{align_face, FaceAnnotation};
use face2scene_core::refsim::{oracle_restore, OracleQuality, QualityLevel};
use face2scene_core::{rng, Error as CoreError, Image};

use crate::error::Result;
use crate::fadex::{FaceSet, FadexSample};

#[derive(Debug, Clone)]
pub struct ScenePair {
    /// Unique per pair: scene id plus variant.
    pub id: String,
    /// Source scene index.
    pub image: usize,
    pub hq: Image,
    pub lq: Image,
    pub ann: FaceAnnotation,
    pub label: u64,
    pub spec_id: String,
}

/// In-memory toy pairs, one per (scene, preset), generated the same way as
/// the on-disk dataset builder.
pub fn toy_pairs(images: Range<usize>, scene: &SceneParams, presets: &[Preset], seed: u64) -> Result<Vec<ScenePair>> {
    let mut out = Vec::new();
    for i in images {
        let id = scene_id(i);
        let mut r = rng::stream(seed, &[rng::hash_str("scene"), i as u64]);
        let (hq, ann) = gen_scene(&mut r, scene)?;
        let hq = hq.quantize_u8();
        for (v, &p) in presets.iter().enumerate() {
            let spec = preset(p);
            let vseed = rng::stream_id(&[seed, i as u64, v as u64]);
            let lq = apply_pipeline(&hq, &spec, DegradeSeed::new(vseed, &id))?.quantize_u8();
            out.push(ScenePair {
                id: format!("{id}_v{v}"),
                image: i,
                hq: hq.clone(),
                lq,
                ann: ann.clone(),
                label: spec.label,
                spec_id: p.id().to_string(),
            });
        }
    }
    Ok(out)
}

/// Every (record, variant) of a split, images loaded from disk.
pub fn load_pairs(ds: &Dataset, split: Option<Split>) -> Result<Vec<ScenePair>> {
    let mut out = Vec::new();
    for (i, rec) in ds.manifest.records.iter().enumerate() {
        if split.is_some_and(|s| s != rec.split) {
            continue;
        }
        let hq = Image::load_png(&ds.path(&rec.scene_path))?;
        rec.annotation.validate(hq.width(), hq.height())?;
        for (v, var) in rec.degradations.iter().enumerate() {
            let spec = ds
                .specs
                .get(&var.spec_id)
                .ok_or_else(|| CoreError::Data(format!("{}: unknown spec {}", rec.id, var.spec_id)))?;
            let lq = Image::load_png(&ds.path(&var.path))?;
            hq.same_shape(&lq)?;
            out.push(ScenePair {
                id: format!("{}_v{v}", rec.id),
                image: i,
                hq: hq.clone(),
                lq,
                ann: rec.annotation.clone(),
                label: spec.label,
                spec_id: var.spec_id.clone(),
            });
        }
    }
    Ok(out)
}

/// Oracle-restored HQ face for a pair; deterministic in (seed, id, level).
pub fn oracle_face(gt_face: &Image, level: QualityLevel, id: &str, seed: u64) -> Image {
    let mut r = rng::stream(seed, &[rng::hash_str("oracle"), rng::hash_str(id), level as u64]);
    oracle_restore(gt_face, &OracleQuality::for_level(level), &mut r)
}

/// Aligned (oracle HQ, LQ) face crops with labels.
pub fn fadex_samples(pairs: &[ScenePair], canonical: usize, hq_level: QualityLevel, seed: u64) -> Result<Vec<FadexSample>> {
    pairs
        .iter()
        .map(|p| {
            let (gt_face, warp) = align_face(&p.hq, &p.ann, canonical)?;
            let lq = face2scene_core::facegeom::warp_to_canonical(&p.lq, &warp);
            Ok(FadexSample {
                hq: oracle_face(&gt_face, hq_level, &p.id, seed),
                lq,
                label: p.label,
                image: p.image,
            })
        })
        .collect()
}

/// Group aligned samples by source image, LQ crops ordered by label. Images
/// missing any label are dropped.
pub fn face_sets(samples: &[FadexSample]) -> Vec<FaceSet> {
    let labels: std::collections::BTreeSet<u64> = samples.iter().map(|s| s.label).collect();
    let mut by_image: BTreeMap<usize, BTreeMap<u64, &FadexSample>> = BTreeMap::new();
    for s in samples {
        by_image.entry(s.image).or_default().insert(s.label, s);
    }
    by_image
        .into_values()
        .filter(|m| m.len() == labels.len())
        .map(|m| {
            let first = m.values().next().expect("non-empty");
            FaceSet {
                hq: first.hq.clone(),
                lq: m.values().map(|s| s.lq.clone()).collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_pairs_layout() {
        let p = toy_pairs(3..5, &SceneParams::default(), &[Preset::D1, Preset::D3], 7).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p[0].hq, p[1].hq);
        assert_ne!(p[0].lq, p[1].lq);
        assert_eq!((p[2].image, p[3].label), (4, 3));
        let again = toy_pairs(4..5, &SceneParams::default(), &[Preset::D1, Preset::D3], 7).unwrap();
        assert_eq!(again[1].lq, p[3].lq);
        let s = fadex_samples(&p, 32, QualityLevel::Gt, 0).unwrap();
        assert_eq!(s[0].hq.dims(), (32, 32));
        let sets = face_sets(&s);
        assert_eq!((sets.len(), sets[0].lq.len()), (2, 2));
    }

    #[test]
    fn oracle_face_depends_on_level() {
        let face = Image::from_fn(32, 32, |x, y| [((x ^ y) & 1) as f64, 0.5, 0.2]);
        assert_eq!(oracle_face(&face, QualityLevel::Gt, "a", 1), face);
        let bad = oracle_face(&face, QualityLevel::Bad, "a", 1);
        assert_eq!(bad, oracle_face(&face, QualityLevel::Bad, "a", 1));
        assert_ne!(bad, oracle_face(&face, QualityLevel::Good, "a", 1));
    }
}
