//! Random degradation specs for training-data diversity.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    BlurFamily, BlurKernelSpec, DegradationSpec, GaussianNoise, PoissonNoise, ResizeFilter,
    StageSpec,
};
use crate::error::{param, Result};

/// Closed interval; `min == max` is a fixed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { min: v, max: v }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max {
            return param(format!("range {name} is empty: [{}, {}]", self.min, self.max));
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        self.min <= v && v <= self.max
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpace {
    pub resize_scale: Range,
    pub resize_filters: Vec<ResizeFilter>,
    pub blur_families: Vec<BlurFamily>,
    /// Odd kernel sizes to choose from.
    pub blur_sizes: Vec<usize>,
    pub blur_sigma: Range,
    pub blur_rotation: Range,
    pub plateau_beta: Range,
    pub sinc_cutoff: Range,
    pub gaussian_sigma: Range,
    pub gray_prob: f64,
    pub poisson_scale: Range,
    pub poisson_color_prob: f64,
    /// Integer qualities, inclusive.
    pub jpeg_quality: Range,
    pub final_sinc_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecSpace {
    pub stage1: StageSpace,
    pub stage2: StageSpace,
}

impl Default for SpecSpace {
    fn default() -> Self {
        let families = vec![
            BlurFamily::IsotropicGaussian,
            BlurFamily::AnisotropicGaussian,
            BlurFamily::PlateauAnisotropic,
            BlurFamily::Sinc,
        ];
        let stage1 = StageSpace {
            resize_scale: Range::new(0.3, 1.5),
            resize_filters: vec![ResizeFilter::Area, ResizeFilter::Bilinear, ResizeFilter::Bicubic],
            blur_families: families.clone(),
            blur_sizes: vec![5, 7, 9],
            blur_sigma: Range::new(0.2, 2.5),
            blur_rotation: Range::new(-std::f64::consts::PI, std::f64::consts::PI),
            plateau_beta: Range::new(1.0, 2.0),
            sinc_cutoff: Range::new(std::f64::consts::PI / 3.0, std::f64::consts::PI),
            gaussian_sigma: Range::new(0.0, 0.06),
            gray_prob: 0.4,
            poisson_scale: Range::new(0.0, 1.5),
            poisson_color_prob: 0.5,
            jpeg_quality: Range::new(30.0, 95.0),
            final_sinc_prob: 0.0,
        };
        let stage2 = StageSpace {
            resize_scale: Range::new(0.6, 1.2),
            blur_sigma: Range::new(0.2, 1.5),
            gaussian_sigma: Range::new(0.0, 0.04),
            poisson_scale: Range::new(0.0, 1.0),
            final_sinc_prob: 0.5,
            blur_families: families,
            ..stage1.clone()
        };
        Self { stage1, stage2 }
    }
}

impl StageSpace {
    fn validate(&self, tag: &str) -> Result<()> {
        let ranges = [
            ("resize_scale", self.resize_scale),
            ("blur_sigma", self.blur_sigma),
            ("blur_rotation", self.blur_rotation),
            ("plateau_beta", self.plateau_beta),
            ("sinc_cutoff", self.sinc_cutoff),
            ("gaussian_sigma", self.gaussian_sigma),
            ("poisson_scale", self.poisson_scale),
            ("jpeg_quality", self.jpeg_quality),
        ];
        for (name, r) in ranges {
            r.check(&format!("{tag}.{name}"))?;
        }
        if self.resize_scale.min <= 0.0 || self.blur_sigma.min <= 0.0 || self.plateau_beta.min <= 0.0 {
            return param(format!("{tag}: scales, sigmas and beta must be > 0"));
        }
        if self.sinc_cutoff.min <= 0.0 || self.sinc_cutoff.max > std::f64::consts::PI {
            return param(format!("{tag}: sinc cutoff must lie in (0, pi]"));
        }
        if self.gaussian_sigma.min < 0.0 || self.gaussian_sigma.max > 1.0 || self.poisson_scale.min < 0.0 {
            return param(format!("{tag}: noise ranges out of bounds"));
        }
        let q = self.jpeg_quality;
        if q.min < 1.0 || q.max > 100.0 || q.min.ceil() > q.max.floor() {
            return param(format!("{tag}: jpeg quality range must hold an integer in 1..=100"));
        }
        if self.resize_filters.is_empty() || self.blur_families.is_empty() || self.blur_sizes.is_empty() {
            return param(format!("{tag}: empty choice list"));
        }
        if self.blur_sizes.iter().any(|s| s % 2 == 0) {
            return param(format!("{tag}: blur sizes must be odd"));
        }
        for p in [self.gray_prob, self.poisson_color_prob, self.final_sinc_prob] {
            if !(0.0..=1.0).contains(&p) {
                return param(format!("{tag}: probabilities must lie in [0,1]"));
            }
        }
        Ok(())
    }

    fn draw_kernel(&self, family: BlurFamily, rng: &mut impl Rng) -> BlurKernelSpec {
        let size = *self.blur_sizes.choose(rng).expect("validated non-empty");
        match family {
            BlurFamily::IsotropicGaussian => BlurKernelSpec::isotropic(size, self.blur_sigma.draw(rng)),
            BlurFamily::AnisotropicGaussian => BlurKernelSpec::anisotropic(
                size,
                self.blur_sigma.draw(rng),
                self.blur_sigma.draw(rng),
                self.blur_rotation.draw(rng),
            ),
            BlurFamily::PlateauAnisotropic => BlurKernelSpec::plateau(
                size,
                self.blur_sigma.draw(rng),
                self.blur_sigma.draw(rng),
                self.blur_rotation.draw(rng),
                self.plateau_beta.draw(rng),
            ),
            BlurFamily::Sinc => BlurKernelSpec::sinc(size, self.sinc_cutoff.draw(rng)),
            BlurFamily::None => BlurKernelSpec::none(),
        }
    }

    fn draw(&self, rng: &mut impl Rng) -> StageSpec {
        let resize_scale = self.resize_scale.draw(rng);
        let resize_filter = *self.resize_filters.choose(rng).expect("validated non-empty");
        let family = *self.blur_families.choose(rng).expect("validated non-empty");
        let blur = self.draw_kernel(family, rng);
        let gaussian_noise = GaussianNoise {
            sigma: self.gaussian_sigma.draw(rng),
            gray: rng.random::<f64>() < self.gray_prob,
        };
        let poisson_noise = PoissonNoise {
            scale: self.poisson_scale.draw(rng),
            color: rng.random::<f64>() < self.poisson_color_prob,
        };
        let (lo, hi) = (self.jpeg_quality.min.ceil() as u8, self.jpeg_quality.max.floor() as u8);
        let jpeg_quality = Some(if lo == hi { lo } else { rng.random_range(lo..=hi) });
        let final_sinc = (rng.random::<f64>() < self.final_sinc_prob)
            .then(|| self.draw_kernel(BlurFamily::Sinc, rng));
        StageSpec {
            resize_scale,
            resize_filter,
            blur,
            gaussian_noise,
            poisson_noise,
            jpeg_quality,
            final_sinc,
        }
    }
}

/// Labels below this are reserved for the fixed presets.
pub const SAMPLED_LABEL_BASE: u64 = 1 << 16;

/// Draw a spec from `space`. Every draw carries a fresh random label above
/// [`SAMPLED_LABEL_BASE`]; uniqueness within a manifest is checked by the
/// dataset builder.
pub fn sample_spec(rng: &mut impl Rng, space: &SpecSpace) -> Result<DegradationSpec> {
    space.stage1.validate("stage1")?;
    space.stage2.validate("stage2")?;
    let stage1 = space.stage1.draw(rng);
    let stage2 = space.stage2.draw(rng);
    let label = rng.random_range(SAMPLED_LABEL_BASE..(1u64 << 53));
    Ok(DegradationSpec {
        stage1,
        stage2,
        label,
    })
}
