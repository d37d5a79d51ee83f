//! Synthetic two-stage degradation operators.
//!
//! A stage runs, in order: resize, blur, Gaussian noise, Poisson noise,
//! JPEG round trip, final sinc. A pipeline runs two stages, then resamples
//! back to the source resolution so LQ and HQ stay pixel aligned.

mod jpeg;
mod kernel;
mod presets;
mod resize;
mod sample;
mod spatial;

pub use jpeg::{jpeg_roundtrip, quant_table};
pub use kernel::{bessel_j1, build_kernel, convolve, reflect101, BlurFamily, BlurKernelSpec, Kernel};
pub use presets::{preset, preset_ids, presets, presets_from_toml, Preset, PRESETS_V1};
pub use resize::{resize_by, resize_to, scaled_len, ResizeFilter};
pub use sample::{sample_spec, Range, SpecSpace, StageSpace};
pub use spatial::{apply_spatial_blur, BlurProfile, SpatialBlurField};

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::image::{Image, LUMA};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianNoise {
    pub sigma: f64,
    #[serde(default)]
    pub gray: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonNoise {
    pub scale: f64,
    #[serde(default)]
    pub color: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    #[serde(default = "unit")]
    pub resize_scale: f64,
    #[serde(default = "area")]
    pub resize_filter: ResizeFilter,
    #[serde(default = "BlurKernelSpec::none")]
    pub blur: BlurKernelSpec,
    #[serde(default = "no_gauss")]
    pub gaussian_noise: GaussianNoise,
    #[serde(default = "no_poisson")]
    pub poisson_noise: PoissonNoise,
    #[serde(default)]
    pub jpeg_quality: Option<u8>,
    #[serde(default)]
    pub final_sinc: Option<BlurKernelSpec>,
}

fn unit() -> f64 {
    1.0
}
fn area() -> ResizeFilter {
    ResizeFilter::Area
}
fn no_gauss() -> GaussianNoise {
    GaussianNoise {
        sigma: 0.0,
        gray: false,
    }
}
fn no_poisson() -> PoissonNoise {
    PoissonNoise {
        scale: 0.0,
        color: false,
    }
}

impl StageSpec {
    pub fn identity() -> Self {
        Self {
            resize_scale: 1.0,
            resize_filter: ResizeFilter::Area,
            blur: BlurKernelSpec::none(),
            gaussian_noise: no_gauss(),
            poisson_noise: no_poisson(),
            jpeg_quality: None,
            final_sinc: None,
        }
    }

    /// Largest kernel radius used by the stage.
    pub fn max_radius(&self) -> usize {
        self.blur
            .radius()
            .max(self.final_sinc.as_ref().map_or(0, |k| k.radius()))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.resize_scale.is_finite() || self.resize_scale <= 0.0 {
            return param(format!("resize_scale must be > 0, got {}", self.resize_scale));
        }
        build_kernel(&self.blur)?;
        if let Some(k) = &self.final_sinc {
            build_kernel(k)?;
        }
        let g = self.gaussian_noise.sigma;
        if !(0.0..=1.0).contains(&g) {
            return param(format!("gaussian sigma must lie in [0,1], got {g}"));
        }
        let p = self.poisson_noise.scale;
        if !p.is_finite() || p < 0.0 {
            return param(format!("poisson scale must be >= 0, got {p}"));
        }
        if let Some(q) = self.jpeg_quality {
            if !(1..=100).contains(&q) {
                return param(format!("jpeg quality must be in 1..=100, got {q}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub stage1: StageSpec,
    pub stage2: StageSpec,
    pub label: u64,
}

impl DegradationSpec {
    pub fn identity(label: u64) -> Self {
        Self {
            stage1: StageSpec::identity(),
            stage2: StageSpec::identity(),
            label,
        }
    }
}

/// Coordinates of the random streams used for one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegradeSeed {
    pub seed: u64,
    pub image_id: u64,
}

impl DegradeSeed {
    pub fn new(seed: u64, image_id: &str) -> Self {
        Self {
            seed,
            image_id: rng::hash_str(image_id),
        }
    }

    pub fn stage_rng(&self, label: u64, stage: u64) -> rand_chacha::ChaCha8Rng {
        rng::stream(self.seed, &[self.image_id, label, stage])
    }
}

pub fn add_gaussian_noise(img: &Image, n: &GaussianNoise, rng: &mut impl Rng) -> Image {
    if n.sigma == 0.0 {
        return img.clone();
    }
    let dist = Normal::new(0.0, n.sigma).expect("validated sigma");
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        if n.gray {
            let e = dist.sample(rng);
            px.iter_mut().for_each(|v| *v += e);
        } else {
            px.iter_mut().for_each(|v| *v += dist.sample(rng));
        }
    }
    out
}

fn poisson_draw(v: f64, lam: f64, rng: &mut impl Rng) -> f64 {
    let mean = v.max(0.0) * lam;
    if mean <= 0.0 {
        return 0.0;
    }
    let p: f64 = Poisson::new(mean).expect("positive mean").sample(rng);
    p / lam
}

/// Shot noise: out = Poisson(in * lam) / lam with lam = 255 / scale. The gray
/// variant draws on luma and adds the same residual to every channel.
pub fn add_poisson_noise(img: &Image, n: &PoissonNoise, rng: &mut impl Rng) -> Image {
    if n.scale == 0.0 {
        return img.clone();
    }
    let lam = 255.0 / n.scale;
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        if n.color {
            for v in px.iter_mut() {
                *v = poisson_draw(*v, lam, rng);
            }
        } else {
            let y = LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2];
            let e = poisson_draw(y, lam, rng) - y.max(0.0);
            px.iter_mut().for_each(|v| *v += e);
        }
    }
    out
}

pub fn apply_stage(img: &Image, s: &StageSpec, rng: &mut impl Rng) -> Result<Image> {
    s.validate()?;
    let mut x = img.clone();
    if s.resize_scale != 1.0 {
        x = resize_by(&x, s.resize_scale, s.resize_filter)?.clip();
    }
    if !s.blur.is_identity() {
        x = convolve(&x, &build_kernel(&s.blur)?).clip();
    }
    if s.gaussian_noise.sigma > 0.0 {
        x = add_gaussian_noise(&x, &s.gaussian_noise, rng).clip();
    }
    if s.poisson_noise.scale > 0.0 {
        x = add_poisson_noise(&x, &s.poisson_noise, rng).clip();
    }
    if let Some(q) = s.jpeg_quality {
        x = jpeg_roundtrip(&x, q)?;
    }
    if let Some(k) = &s.final_sinc {
        if !k.is_identity() {
            x = convolve(&x, &build_kernel(k)?);
        }
    }
    Ok(x.clip())
}

/// Run both stages with their named streams and resample back to the
/// source size with bicubic interpolation.
pub fn apply_pipeline(img: &Image, d: &DegradationSpec, seed: DegradeSeed) -> Result<Image> {
    let a = apply_stage(img, &d.stage1, &mut seed.stage_rng(d.label, 1))?;
    finish(img, a, d, seed)
}

/// As [`apply_pipeline`], with the spatially varying field standing in for
/// the stage-one blur.
pub fn apply_pipeline_spatial(
    img: &Image,
    d: &DegradationSpec,
    field: &SpatialBlurField,
    seed: DegradeSeed,
) -> Result<Image> {
    let mut s1 = d.stage1.clone();
    s1.validate()?;
    let mut x = img.clone();
    if s1.resize_scale != 1.0 {
        x = resize_by(&x, s1.resize_scale, s1.resize_filter)?.clip();
    }
    x = apply_spatial_blur(&x, field)?;
    s1.resize_scale = 1.0;
    s1.blur = BlurKernelSpec::none();
    let a = apply_stage(&x, &s1, &mut seed.stage_rng(d.label, 1))?;
    finish(img, a, d, seed)
}

fn finish(src: &Image, a: Image, d: &DegradationSpec, seed: DegradeSeed) -> Result<Image> {
    let b = apply_stage(&a, &d.stage2, &mut seed.stage_rng(d.label, 2))?;
    if b.dims() == src.dims() {
        return Ok(b);
    }
    Ok(resize_to(&b, src.width(), src.height(), ResizeFilter::Bicubic).clip())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn textured(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            let v = ((x * 31 + y * 17) % 23) as f64 / 22.0;
            [v, (x as f64 / w as f64), 1.0 - v]
        })
    }

    #[test]
    fn identity_stage_is_exact() {
        let img = textured(20, 12);
        let mut r = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(apply_stage(&img, &StageSpec::identity(), &mut r).unwrap(), img);
        let d = DegradationSpec::identity(9);
        assert_eq!(apply_pipeline(&img, &d, DegradeSeed::new(3, "a")).unwrap(), img);
    }

    #[test]
    fn gray_gaussian_noise_std() {
        let img = Image::filled(256, 256, [0.5; 3]);
        let s = StageSpec {
            gaussian_noise: GaussianNoise {
                sigma: 0.1,
                gray: true,
            },
            ..StageSpec::identity()
        };
        let out = apply_stage(&img, &s, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let r = out.channel(0);
        let m = r.iter().sum::<f64>() / r.len() as f64;
        let sd = (r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / r.len() as f64).sqrt();
        assert!((0.095..=0.105).contains(&sd), "std {sd}");
        // gray: identical across channels
        assert_eq!(out.channel(0), out.channel(2));
    }

    #[test]
    fn poisson_noise_keeps_mean() {
        let img = Image::filled(256, 256, [0.4, 0.5, 0.6]);
        for (scale, color) in [(1.0, true), (3.0, false), (0.05, true)] {
            let s = StageSpec {
                poisson_noise: PoissonNoise { scale, color },
                ..StageSpec::identity()
            };
            let out = apply_stage(&img, &s, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
            assert!((out.mean() - img.mean()).abs() < 0.01 * img.mean());
            assert_ne!(out, img);
        }
    }

    #[test]
    fn resize_below_one_pixel_is_an_error() {
        let s = StageSpec {
            resize_scale: 0.01,
            ..StageSpec::identity()
        };
        assert!(apply_stage(&textured(10, 10), &s, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn pipeline_restores_source_size() {
        let d = DegradationSpec {
            stage1: StageSpec {
                resize_scale: 0.5,
                ..StageSpec::identity()
            },
            stage2: StageSpec {
                resize_scale: 1.7,
                resize_filter: ResizeFilter::Bilinear,
                ..StageSpec::identity()
            },
            label: 1,
        };
        let out = apply_pipeline(&textured(30, 22), &d, DegradeSeed::new(0, "x")).unwrap();
        assert_eq!(out.dims(), (30, 22));
    }
}
