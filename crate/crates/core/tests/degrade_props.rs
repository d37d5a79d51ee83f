use face2scene_core::degrade::{
    apply_pipeline, apply_spatial_blur, apply_stage, build_kernel, convolve, preset, sample_spec,
    BlurKernelSpec, BlurProfile, DegradationSpec, DegradeSeed, GaussianNoise, Preset, SpatialBlurField,
    SpecSpace, StageSpec,
};
use face2scene_core::datagen::{gen_scene, SceneParams};
use face2scene_core::evalkit::{laplacian_blur_score, psnr};
use face2scene_core::rng::stream;
use face2scene_core::Image;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy(i: u64) -> Image {
    gen_scene(&mut stream(77, &[i]), &SceneParams::default()).unwrap().0.quantize_u8()
}

fn noise_image(n: usize, seed: u64) -> Image {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(n, n, |_, _| [r.random(), r.random(), r.random()])
}

fn noise_free(mut d: DegradationSpec) -> DegradationSpec {
    for s in [&mut d.stage1, &mut d.stage2] {
        s.gaussian_noise.sigma = 0.0;
        s.poisson_noise.scale = 0.0;
        s.jpeg_quality = None;
    }
    d
}

#[test]
fn presets_are_deterministic_and_in_range() {
    let img = toy(0);
    for p in Preset::ALL {
        let d = preset(p);
        let a = apply_pipeline(&img, &d, DegradeSeed::new(5, "img")).unwrap();
        let b = apply_pipeline(&img, &d, DegradeSeed::new(5, "img")).unwrap();
        assert_eq!(a, b, "{p}");
        assert!(a.in_unit_range() && a.is_finite());
        assert_eq!(a.dims(), img.dims());
    }
}

#[test]
fn identity_stages_compose_to_identity() {
    let img = toy(1);
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let once = apply_stage(&img, &StageSpec::identity(), &mut r).unwrap();
    let twice = apply_stage(&once, &StageSpec::identity(), &mut r).unwrap();
    assert_eq!(twice, img);
}

#[test]
fn noise_free_presets_commute_with_half_turn() {
    let img = noise_image(64, 3);
    for p in Preset::ALL {
        let d = noise_free(preset(p));
        let seed = DegradeSeed::new(1, "h");
        let direct = apply_pipeline(&img, &d, seed).unwrap();
        let turned = apply_pipeline(&img.rotate180(), &d, seed).unwrap().rotate180();
        let r = d.stage1.max_radius().max(d.stage2.max_radius());
        let mut worst = 0.0f64;
        for y in r..64 - r {
            for x in r..64 - r {
                for c in 0..3 {
                    worst = worst.max((direct.get(x, y, c) - turned.get(x, y, c)).abs());
                }
            }
        }
        assert!(worst < 1e-9, "{p}: {worst}");
    }
}

#[test]
fn gaussian_noise_severity_is_monotone() {
    let img = toy(2);
    let mut last = f64::INFINITY;
    for sigma in [0.01, 0.03, 0.06, 0.1] {
        let s = StageSpec {
            gaussian_noise: GaussianNoise { sigma, gray: false },
            ..StageSpec::identity()
        };
        let mean = (0..20)
            .map(|k| psnr(&apply_stage(&img, &s, &mut stream(k, &[9])).unwrap(), &img).unwrap())
            .sum::<f64>()
            / 20.0;
        assert!(mean < last, "sigma {sigma}: {mean} !< {last}");
        last = mean;
    }
}

#[test]
fn d3_is_gentler_than_d1() {
    let (d1, d3) = (preset(Preset::D1), preset(Preset::D3));
    for i in 0..10 {
        let img = toy(100 + i);
        let id = format!("toy{i}");
        let p1 = psnr(&apply_pipeline(&img, &d1, DegradeSeed::new(0, &id)).unwrap(), &img).unwrap();
        let p3 = psnr(&apply_pipeline(&img, &d3, DegradeSeed::new(0, &id)).unwrap(), &img).unwrap();
        assert!(p3 > p1, "image {i}: d3 {p3} vs d1 {p1}");
    }
}

#[test]
fn spatial_blur_is_sharper_at_the_centre() {
    let img = noise_image(96, 8);
    let f = SpatialBlurField {
        sigma_center: 0.3,
        sigma_corner: 2.5,
        profile: BlurProfile::RadialQuadratic,
    };
    let out = apply_spatial_blur(&img, &f).unwrap();
    let centre = out.crop(32, 32, 32, 32).unwrap();
    let corner = out.crop(0, 0, 24, 24).unwrap();
    assert!(laplacian_blur_score(&centre) > laplacian_blur_score(&corner));
}

#[test]
fn gaussian_kernel_matches_closed_form() {
    let k = build_kernel(&BlurKernelSpec::isotropic(5, 1.0)).unwrap();
    let raw: Vec<f64> = (0..25)
        .map(|i| {
            let (x, y) = ((i % 5) as f64 - 2.0, (i / 5) as f64 - 2.0);
            (-(x * x + y * y) / 2.0).exp()
        })
        .collect();
    let z: f64 = raw.iter().sum();
    for (a, b) in k.weights.iter().zip(&raw) {
        assert!((a - b / z).abs() < 1e-15);
    }
    for rot in [0.0, 0.7, -2.0] {
        let an = build_kernel(&BlurKernelSpec::anisotropic(5, 1.3, 1.3, rot)).unwrap();
        let iso = build_kernel(&BlurKernelSpec::isotropic(5, 1.3)).unwrap();
        for (a, b) in an.weights.iter().zip(&iso.weights) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}

#[test]
fn sampled_specs_get_distinct_labels() {
    let space = SpecSpace::default();
    let a = sample_spec(&mut stream(1, &[1]), &space).unwrap();
    let b = sample_spec(&mut stream(1, &[2]), &space).unwrap();
    assert_ne!(a.label, b.label);
    let img = toy(3);
    let out = apply_pipeline(&img, &a, DegradeSeed::new(2, "s")).unwrap();
    assert!(out.in_unit_range());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_pipelines_stay_in_range(seed in any::<u64>(), img_seed in 0u64..1000) {
        let d = sample_spec(&mut stream(seed, &[0]), &SpecSpace::default()).unwrap();
        let img = noise_image(40, img_seed);
        let out = apply_pipeline(&img, &d, DegradeSeed::new(seed, "p")).unwrap();
        prop_assert!(out.is_finite() && out.in_unit_range());
        prop_assert_eq!(out.dims(), (40, 40));
        let again = apply_pipeline(&img, &d, DegradeSeed::new(seed, "p")).unwrap();
        prop_assert_eq!(out, again);
    }

    #[test]
    fn blur_preserves_mean_of_constant(v in 0.0f64..1.0, sigma in 0.2f64..3.0) {
        let img = Image::filled(12, 9, [v; 3]);
        let k = build_kernel(&BlurKernelSpec::isotropic(7, sigma)).unwrap();
        for o in convolve(&img, &k).data() {
            prop_assert!((o - v).abs() < 1e-12);
        }
    }
}
