//! Oracle stand-in for reference-based face restoration: the ground-truth
//! face, optionally softened and noised by a fixed quality table.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::degrade::{add_gaussian_noise, build_kernel, convolve, BlurKernelSpec, GaussianNoise};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityLevel {
    Gt,
    Good,
    Medium,
    Bad,
}

impl QualityLevel {
    pub const ALL: [QualityLevel; 4] = [
        QualityLevel::Gt,
        QualityLevel::Good,
        QualityLevel::Medium,
        QualityLevel::Bad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QualityLevel::Gt => "gt",
            QualityLevel::Good => "good",
            QualityLevel::Medium => "medium",
            QualityLevel::Bad => "bad",
        }
    }
}

impl FromStr for QualityLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        QualityLevel::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Param(format!("unknown quality level {s:?}")))
    }
}

impl std::fmt::Display for QualityLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleQuality {
    pub level: QualityLevel,
    pub perturb_sigma: f64,
    pub perturb_blur: f64,
}

impl OracleQuality {
    /// Perturbation table (noise sigma, blur sigma).
    pub fn for_level(level: QualityLevel) -> Self {
        let (perturb_sigma, perturb_blur) = match level {
            QualityLevel::Gt => (0.0, 0.0),
            QualityLevel::Good => (0.01, 0.3),
            QualityLevel::Medium => (0.03, 0.6),
            QualityLevel::Bad => (0.08, 1.2),
        };
        Self {
            level,
            perturb_sigma,
            perturb_blur,
        }
    }
}

pub fn oracle_restore(gt_face: &Image, q: &OracleQuality, rng: &mut impl Rng) -> Image {
    if q.level == QualityLevel::Gt {
        return gt_face.clone();
    }
    let mut out = gt_face.clone();
    if q.perturb_blur > 0.0 {
        let size = 2 * (3.0 * q.perturb_blur).ceil() as usize + 1;
        let k = build_kernel(&BlurKernelSpec::isotropic(size, q.perturb_blur)).expect("positive sigma");
        out = convolve(&out, &k);
    }
    if q.perturb_sigma > 0.0 {
        let n = GaussianNoise {
            sigma: q.perturb_sigma,
            gray: false,
        };
        out = add_gaussian_noise(&out, &n, rng);
    }
    out.clip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn face() -> Image {
        Image::from_fn(32, 32, |x, y| {
            let v = 0.5 + 0.4 * ((x as f64) * 0.6).sin() * ((y as f64) * 0.5).cos();
            [v, 1.0 - v, 0.5]
        })
    }

    fn psnr(a: &Image, b: &Image) -> f64 {
        let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            / a.data().len() as f64;
        -10.0 * mse.log10()
    }

    #[test]
    fn gt_is_untouched() {
        let f = face();
        let q = OracleQuality::for_level(QualityLevel::Gt);
        assert_eq!(oracle_restore(&f, &q, &mut stream(1, &[])), f);
    }

    #[test]
    fn fidelity_drops_with_level() {
        let f = face();
        let mut last = f64::INFINITY;
        for level in [QualityLevel::Good, QualityLevel::Medium, QualityLevel::Bad] {
            let q = OracleQuality::for_level(level);
            let mean: f64 = (0..10)
                .map(|s| psnr(&oracle_restore(&f, &q, &mut stream(s, &[])), &f))
                .sum::<f64>()
                / 10.0;
            assert!(mean < last, "{level}: {mean} !< {last}");
            last = mean;
        }
    }

    #[test]
    fn seeds_differ_but_quality_is_stable() {
        let f = face();
        let q = OracleQuality::for_level(QualityLevel::Medium);
        let a = oracle_restore(&f, &q, &mut stream(1, &[]));
        let b = oracle_restore(&f, &q, &mut stream(2, &[]));
        assert_ne!(a, b);
        let ps: Vec<f64> = (0..20)
            .map(|s| psnr(&oracle_restore(&f, &q, &mut stream(100 + s, &[])), &f))
            .collect();
        let (h1, h2) = ps.split_at(10);
        let m1 = h1.iter().sum::<f64>() / 10.0;
        let m2 = h2.iter().sum::<f64>() / 10.0;
        assert!((m1 - m2).abs() < 0.5);
    }

    #[test]
    fn parse_levels() {
        assert_eq!("bad".parse::<QualityLevel>().unwrap(), QualityLevel::Bad);
        assert!("great".parse::<QualityLevel>().is_err());
    }
}
