use face2scene_core::datagen::{gen_scene, SceneParams};
use face2scene_core::facegeom::{align_face, blend_insert, invert_warp, soft_mask, BBox, DEFAULT_CANONICAL};
use face2scene_core::refsim::{oracle_restore, OracleQuality, QualityLevel};
use face2scene_core::rng::stream;
use face2scene_core::{Image, Mask};
use proptest::prelude::*;

fn psnr(a: &Image, b: &Image) -> f64 {
    face2scene_core::evalkit::psnr(a, b).unwrap()
}

#[test]
fn align_then_invert_roundtrip() {
    let p = SceneParams::default();
    for i in 0..10 {
        let (scene, ann) = gen_scene(&mut stream(31, &[i]), &p).unwrap();
        let (face, warp) = align_face(&scene, &ann, DEFAULT_CANONICAL).unwrap();
        assert_eq!(face.dims(), (DEFAULT_CANONICAL, DEFAULT_CANONICAL));
        let (patch, mask) = invert_warp(&face, &warp, scene.width(), scene.height());
        let b = ann.bbox;
        let (mut err, mut n) = (0.0, 0usize);
        for y in b.y + 1..b.y + b.h - 1 {
            for x in b.x + 1..b.x + b.w - 1 {
                if mask.get(x, y) < 1.0 {
                    continue;
                }
                for c in 0..3 {
                    err += (patch.get(x, y, c) - scene.get(x, y, c)).abs();
                }
                n += 3;
            }
        }
        assert!(n > 0);
        let mae = err / n as f64;
        assert!(mae <= 0.02, "scene {i}: mae {mae}");
        for q in ann.landmarks.points() {
            let back = warp.inverse(warp.forward(q));
            assert!((back.0 - q.0).abs() < 1e-6 && (back.1 - q.1).abs() < 1e-6);
        }
        let (l, r) = (warp.forward(ann.landmarks.left_eye), warp.forward(ann.landmarks.right_eye));
        assert!((r.1 - l.1).atan2(r.0 - l.0).to_degrees().abs() < 0.5);
    }
}

#[test]
fn blend_is_exact_outside_and_inside() {
    let (gt, ann) = gen_scene(&mut stream(2, &[]), &SceneParams::default()).unwrap();
    let pred = gt.map(|v| 1.0 - v);
    let m = soft_mask(&ann.bbox, 64, 64, 2).unwrap();
    let out = blend_insert(&pred, &gt, &m).unwrap();
    for y in 0..64 {
        for x in 0..64 {
            let want = if !ann.bbox.contains_pixel(x, y) {
                Some(pred.pixel(x, y))
            } else if m.get(x, y) == 1.0 {
                Some(gt.pixel(x, y))
            } else {
                None
            };
            if let Some(w) = want {
                assert_eq!(out.pixel(x, y), w);
            }
        }
    }
    assert_eq!(blend_insert(&gt, &gt, &m).unwrap(), gt);
}

#[test]
fn soft_mask_half_point() {
    let b = BBox { x: 4, y: 4, w: 40, h: 40 };
    for f in [2usize, 4, 8] {
        let m = soft_mask(&b, 48, 48, f).unwrap();
        let v = m.get(4 + f / 2, 24);
        assert!((v - 0.5).abs() <= 1.0 / f as f64);
    }
    let all = soft_mask(&BBox { x: 0, y: 0, w: 9, h: 7 }, 9, 7, 0).unwrap();
    assert_eq!(all, Mask::filled(9, 7, 1.0));
}

#[test]
fn oracle_levels_behave() {
    let (scene, ann) = gen_scene(&mut stream(4, &[]), &SceneParams::default()).unwrap();
    let (face, _) = align_face(&scene, &ann, DEFAULT_CANONICAL).unwrap();
    let lvl = |l| OracleQuality::for_level(l);
    let good = oracle_restore(&face, &lvl(QualityLevel::Good), &mut stream(1, &[]));
    let bad = oracle_restore(&face, &lvl(QualityLevel::Bad), &mut stream(1, &[]));
    assert!(psnr(&bad, &face) < psnr(&good, &face));
    let a = oracle_restore(&face, &lvl(QualityLevel::Medium), &mut stream(1, &[]));
    let b = oracle_restore(&face, &lvl(QualityLevel::Medium), &mut stream(2, &[]));
    assert_ne!(a, b);
    let mean = |s0: u64| {
        (s0..s0 + 20)
            .map(|s| psnr(&oracle_restore(&face, &lvl(QualityLevel::Medium), &mut stream(s, &[])), &face))
            .sum::<f64>()
            / 20.0
    };
    assert!((mean(0) - mean(1000)).abs() < 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn aligned_crop_always_canonical(seed in any::<u64>(), size in 64usize..128) {
        let p = SceneParams { size, ..SceneParams::default() };
        let (scene, ann) = gen_scene(&mut stream(seed, &[]), &p).unwrap();
        let (face, warp) = align_face(&scene, &ann, DEFAULT_CANONICAL).unwrap();
        prop_assert_eq!(face.dims(), (DEFAULT_CANONICAL, DEFAULT_CANONICAL));
        for q in ann.landmarks.points() {
            let back = warp.inverse(warp.forward(q));
            prop_assert!((back.0 - q.0).abs() < 1e-6 && (back.1 - q.1).abs() < 1e-6);
        }
    }
}
