use std::path::Path;

use face2scene_core::datagen::{
    build_dataset, curate, iqa_filters, sample_layout, Dataset, DatasetConfig, FilterSpec, Manifest,
    ManifestRecord, SceneParams, Source, Split, MANIFEST_FILE,
};
use face2scene_core::degrade::{apply_pipeline, DegradeSeed};
use face2scene_core::evalkit::{ExternalScorer, ScorerRegistry};
use face2scene_core::facegeom::{BBox, FaceAnnotation, Landmarks};
use face2scene_core::rng::stream;
use face2scene_core::{Image, Result};

fn small_cfg(n: usize) -> DatasetConfig {
    DatasetConfig {
        n,
        ..DatasetConfig::default()
    }
}

fn files_under(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn counts_and_layout() {
    let dir = tempfile::tempdir().unwrap();
    let m = build_dataset(&small_cfg(4), dir.path(), 3).unwrap();
    assert_eq!(m.records.len(), 4);
    let pngs: Vec<_> = files_under(dir.path())
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    let lq = pngs.iter().filter(|p| p.to_string_lossy().contains("/lq/")).count();
    assert_eq!(pngs.len() - lq, 4);
    assert_eq!(lq, 20);
    assert!(dir.path().join("lq/d1").is_dir());
    assert_eq!(m.records[0].degradations.len(), 5);
    assert_eq!(m.split(Split::Train).len() + m.split(Split::Val).len() + m.split(Split::Test).len(), 4);
}

#[test]
fn rebuild_is_bit_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build_dataset(&small_cfg(3), a.path(), 11).unwrap();
    build_dataset(&small_cfg(3), b.path(), 11).unwrap();
    let fa = files_under(a.path());
    let fb = files_under(b.path());
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(a.path()).unwrap(), y.strip_prefix(b.path()).unwrap());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn manifest_roundtrip_and_variant_replay() {
    let dir = tempfile::tempdir().unwrap();
    build_dataset(&small_cfg(3), dir.path(), 5).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let m = Manifest::read(&path, dir.path()).unwrap();
    let again = dir.path().join("again.jsonl");
    m.write(&again).unwrap();
    assert_eq!(std::fs::read_to_string(&again).unwrap(), text);

    let ds = Dataset::open(dir.path()).unwrap();
    for r in &ds.manifest.records {
        let hq = Image::load_png(&ds.path(&r.scene_path)).unwrap();
        for v in &r.degradations {
            let stored = Image::load_png(&ds.path(&v.path)).unwrap();
            let replay = apply_pipeline(&hq, &ds.specs[&v.spec_id], DegradeSeed::new(v.seed, &r.id))
                .unwrap()
                .quantize_u8();
            assert_eq!(replay, stored, "{} {}", r.id, v.spec_id);
        }
    }
}

#[test]
fn missing_file_or_duplicate_id_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = build_dataset(&small_cfg(2), dir.path(), 1).unwrap();
    std::fs::remove_file(dir.path().join(&m.records[1].scene_path)).unwrap();
    assert!(Manifest::read(&dir.path().join(MANIFEST_FILE), dir.path()).is_err());
    let mut dup = m.clone();
    dup.records.push(m.records[0].clone());
    assert!(dup.write(&dir.path().join("dup.jsonl")).is_err());
}

/// Two-sided KS p-value from the asymptotic Kolmogorov series.
fn ks_pvalue(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = (x - lo) / (hi - lo);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    let lam = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lam * lam).exp()
        })
        .sum();
    p.clamp(0.0, 1.0)
}

#[test]
fn face_side_is_uniform() {
    let p = SceneParams {
        size: 96,
        ..SceneParams::default()
    };
    let mut r = stream(2024, &[]);
    let sides: Vec<f64> = (0..1000).map(|_| sample_layout(&mut r, &p).unwrap().side).collect();
    let pv = ks_pvalue(sides, 16.0, 48.0);
    assert!(pv > 0.01, "p = {pv}");
}

fn write_record(dir: &Path, id: &str, size: usize, bbox: BBox) -> ManifestRecord {
    let img = Image::from_fn(size, size, |x, y| {
        let v = if (x / 3 + y / 3) % 2 == 0 { 0.2 } else { 0.8 };
        [v; 3]
    });
    let rel = format!("scenes/{id}.png");
    img.save_png(&dir.join(&rel)).unwrap();
    let c = (bbox.x as f64 + bbox.w as f64 / 2.0, bbox.y as f64 + bbox.h as f64 / 2.0);
    let s = bbox.w as f64;
    ManifestRecord {
        id: id.into(),
        scene_path: rel,
        annotation: FaceAnnotation {
            bbox,
            landmarks: Landmarks {
                left_eye: (c.0 - 0.15 * s, c.1 - 0.1 * s),
                right_eye: (c.0 + 0.15 * s, c.1 - 0.1 * s),
                mouth: (c.0, c.1 + 0.25 * s),
            },
        },
        split: Split::Train,
        degradations: vec![],
        source: Source::External,
    }
}

struct Const(&'static str, f64);

impl ExternalScorer for Const {
    fn name(&self) -> &str {
        self.0
    }
    fn score(&self, images: &[Image]) -> Result<Vec<f64>> {
        Ok(vec![self.1; images.len()])
    }
}

#[test]
fn curation_filters() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = write_record(dir.path(), "tiny", 256, BBox { x: 100, y: 100, w: 18, h: 18 });
    let ok = write_record(dir.path(), "ok", 256, BBox { x: 50, y: 50, w: 64, h: 64 });
    let small = write_record(dir.path(), "small", 64, BBox { x: 10, y: 10, w: 30, h: 30 });
    let m = Manifest {
        records: vec![tiny, ok, small],
    };
    let reg = ScorerRegistry::default();
    let (same, log) = curate(&m, dir.path(), &[], &reg).unwrap();
    assert_eq!(same, m);
    assert!(log.is_empty());

    let filters = [
        FilterSpec::new("min-short-side", 128.0),
        FilterSpec::new("face-present", 0.0),
        FilterSpec::new("face-area", 0.01),
        FilterSpec::new("blur", 1e-3),
    ];
    let (kept, log) = curate(&m, dir.path(), &filters, &reg).unwrap();
    assert_eq!(kept.records.len(), 1);
    assert_eq!(kept.records[0].id, "ok");
    let stage = |id: &str| log.iter().find(|r| r.id == id).unwrap().stage.clone();
    assert_eq!(stage("tiny"), "face-area");
    assert_eq!(stage("small"), "min-short-side");

    assert!(curate(&m, dir.path(), &[FilterSpec::new("sharpness", 1.0)], &reg).is_err());
    assert!(curate(&m, dir.path(), &[FilterSpec::new("scorer:musiq", 1.0)], &reg).is_err());

    let mut reg = ScorerRegistry::default();
    reg.register(Box::new(Const("clipiqa", 0.7)));
    reg.register(Box::new(Const("musiq", 60.0)));
    let iqa = iqa_filters(&reg);
    assert_eq!(iqa.len(), 2);
    let (kept, log) = curate(&m, dir.path(), &iqa, &reg).unwrap();
    assert!(kept.records.is_empty());
    assert!(log.iter().all(|r| r.stage == "scorer:musiq"));
}
