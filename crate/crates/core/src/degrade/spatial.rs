//! Position-dependent Gaussian blur: milder near the centre, stronger
//! towards the corners.

use serde::{Deserialize, Serialize};

use super::kernel::reflect101;
use crate::error::{param, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlurProfile {
    RadialLinear,
    RadialQuadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialBlurField {
    pub sigma_center: f64,
    pub sigma_corner: f64,
    pub profile: BlurProfile,
}

impl SpatialBlurField {
    pub fn validate(&self) -> Result<()> {
        let (c, k) = (self.sigma_center, self.sigma_corner);
        if !c.is_finite() || !k.is_finite() || c < 0.0 || k < c {
            return param(format!("need 0 <= sigma_center <= sigma_corner, got {c}, {k}"));
        }
        Ok(())
    }

    /// Sigma at normalized radius r in [0, 1] (1 = corner).
    pub fn sigma_at(&self, r: f64) -> f64 {
        let rho = match self.profile {
            BlurProfile::RadialLinear => r,
            BlurProfile::RadialQuadratic => r * r,
        };
        self.sigma_center + (self.sigma_corner - self.sigma_center) * rho
    }

    /// Kernel radius shared by every pixel: ceil(3 sigma_max).
    pub fn radius(&self) -> usize {
        (3.0 * self.sigma_corner).ceil() as usize
    }
}

/// Below this sigma the kernel is a delta.
const SIGMA_EPS: f64 = 1e-12;

pub fn apply_spatial_blur(img: &Image, f: &SpatialBlurField) -> Result<Image> {
    f.validate()?;
    let (w, h) = img.dims();
    let r = f.radius() as isize;
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let rmax = (cx * cx + cy * cy).sqrt().max(f64::MIN_POSITIVE);
    let src = img.data();
    let mut out = vec![0.0; src.len()];
    let n = (2 * r + 1) as usize;
    let mut wts = vec![0.0; n * n];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let s = f.sigma_at(((dx * dx + dy * dy).sqrt() / rmax).min(1.0));
            let o = (y * w + x) * 3;
            if s < SIGMA_EPS {
                out[o..o + 3].copy_from_slice(&src[o..o + 3]);
                continue;
            }
            let inv = 1.0 / (2.0 * s * s);
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let (u, v) = (j as f64 - r as f64, i as f64 - r as f64);
                    let e = (-(u * u + v * v) * inv).exp();
                    wts[i * n + j] = e;
                    total += e;
                }
            }
            let mut acc = [0.0; 3];
            for i in 0..n {
                let sy = reflect101(y as isize + i as isize - r, h);
                for j in 0..n {
                    let sx = reflect101(x as isize + j as isize - r, w);
                    let wgt = wts[i * n + j] / total;
                    let p = (sy * w + sx) * 3;
                    acc[0] += wgt * src[p];
                    acc[1] += wgt * src[p + 1];
                    acc[2] += wgt * src[p + 2];
                }
            }
            out[o..o + 3].copy_from_slice(&acc);
        }
    }
    Image::new(w, h, out)
}
