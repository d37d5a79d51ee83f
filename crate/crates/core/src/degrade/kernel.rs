//! Blur kernels and reflect-padded convolution.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlurFamily {
    IsotropicGaussian,
    AnisotropicGaussian,
    PlateauAnisotropic,
    Sinc,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlurKernelSpec {
    pub family: BlurFamily,
    #[serde(default = "one")]
    pub size: usize,
    #[serde(default = "one_f")]
    pub sigma_x: f64,
    #[serde(default = "one_f")]
    pub sigma_y: f64,
    #[serde(default)]
    pub rotation: f64,
    #[serde(default = "one_f")]
    pub plateau_beta: f64,
    #[serde(default = "pi")]
    pub cutoff: f64,
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn pi() -> f64 {
    std::f64::consts::PI
}

impl BlurKernelSpec {
    pub fn none() -> Self {
        Self {
            family: BlurFamily::None,
            size: 1,
            sigma_x: 1.0,
            sigma_y: 1.0,
            rotation: 0.0,
            plateau_beta: 1.0,
            cutoff: pi(),
        }
    }

    pub fn isotropic(size: usize, sigma: f64) -> Self {
        Self {
            family: BlurFamily::IsotropicGaussian,
            size,
            sigma_x: sigma,
            sigma_y: sigma,
            ..Self::none()
        }
    }

    pub fn anisotropic(size: usize, sigma_x: f64, sigma_y: f64, rotation: f64) -> Self {
        Self {
            family: BlurFamily::AnisotropicGaussian,
            size,
            sigma_x,
            sigma_y,
            rotation,
            ..Self::none()
        }
    }

    pub fn plateau(size: usize, sigma_x: f64, sigma_y: f64, rotation: f64, beta: f64) -> Self {
        Self {
            family: BlurFamily::PlateauAnisotropic,
            size,
            sigma_x,
            sigma_y,
            rotation,
            plateau_beta: beta,
            ..Self::none()
        }
    }

    pub fn sinc(size: usize, cutoff: f64) -> Self {
        Self {
            family: BlurFamily::Sinc,
            size,
            cutoff,
            ..Self::none()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.family == BlurFamily::None
    }

    pub fn radius(&self) -> usize {
        if self.is_identity() {
            0
        } else {
            self.size / 2
        }
    }
}

/// Square, odd-sized, row-major kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub size: usize,
    pub weights: Vec<f64>,
}

impl Kernel {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn normalized(size: usize, mut weights: Vec<f64>) -> Kernel {
        let s: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= s;
        }
        Kernel { size, weights }
    }

    fn from_fn(size: usize, f: impl Fn(f64, f64) -> f64) -> Kernel {
        let r = (size / 2) as f64;
        let mut w = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                w.push(f(j as f64 - r, i as f64 - r));
            }
        }
        Kernel::normalized(size, w)
    }
}

fn check_sigma(name: &str, s: f64) -> Result<()> {
    if !s.is_finite() || s <= 0.0 {
        return param(format!("{name} must be finite and > 0, got {s}"));
    }
    Ok(())
}

/// Inverse covariance entries (a, b, c) of R diag(sx^2, sy^2) R^T, so that
/// the quadratic form is a x^2 + 2 b x y + c y^2.
fn inv_cov(sx: f64, sy: f64, theta: f64) -> (f64, f64, f64) {
    let (s, c) = theta.sin_cos();
    let (ix, iy) = (1.0 / (sx * sx), 1.0 / (sy * sy));
    (c * c * ix + s * s * iy, c * s * (ix - iy), s * s * ix + c * c * iy)
}

pub fn build_kernel(spec: &BlurKernelSpec) -> Result<Kernel> {
    if spec.family == BlurFamily::None {
        return Ok(Kernel {
            size: 1,
            weights: vec![1.0],
        });
    }
    if spec.size % 2 == 0 {
        return param(format!("kernel size must be odd, got {}", spec.size));
    }
    if !spec.rotation.is_finite() {
        return param("rotation must be finite");
    }
    let k = match spec.family {
        BlurFamily::IsotropicGaussian => {
            check_sigma("sigma", spec.sigma_x)?;
            let s2 = spec.sigma_x * spec.sigma_x;
            Kernel::from_fn(spec.size, |x, y| (-(x * x + y * y) / (2.0 * s2)).exp())
        }
        BlurFamily::AnisotropicGaussian => {
            check_sigma("sigma_x", spec.sigma_x)?;
            check_sigma("sigma_y", spec.sigma_y)?;
            let (a, b, c) = inv_cov(spec.sigma_x, spec.sigma_y, spec.rotation);
            Kernel::from_fn(spec.size, |x, y| {
                (-0.5 * (a * x * x + 2.0 * b * x * y + c * y * y)).exp()
            })
        }
        BlurFamily::PlateauAnisotropic => {
            check_sigma("sigma_x", spec.sigma_x)?;
            check_sigma("sigma_y", spec.sigma_y)?;
            check_sigma("plateau_beta", spec.plateau_beta)?;
            let (a, b, c) = inv_cov(spec.sigma_x, spec.sigma_y, spec.rotation);
            let beta = spec.plateau_beta;
            Kernel::from_fn(spec.size, |x, y| {
                let q: f64 = a * x * x + 2.0 * b * x * y + c * y * y;
                1.0 / (1.0 + q.powf(beta))
            })
        }
        BlurFamily::Sinc => {
            let wc = spec.cutoff;
            if !wc.is_finite() || wc <= 0.0 || wc > std::f64::consts::PI {
                return param(format!("sinc cutoff must lie in (0, pi], got {wc}"));
            }
            Kernel::from_fn(spec.size, |x, y| {
                let r = (x * x + y * y).sqrt();
                if r == 0.0 {
                    wc * wc / (4.0 * std::f64::consts::PI)
                } else {
                    wc * bessel_j1(wc * r) / (2.0 * std::f64::consts::PI * r)
                }
            })
        }
        BlurFamily::None => unreachable!(),
    };
    Ok(k)
}

/// J1 from its integral form, J1(x) = (1/2pi) \int_0^{2pi} cos(t - x sin t) dt.
/// The integrand is periodic and smooth, so the trapezoid rule converges
/// geometrically; 128 nodes are exact to rounding for |x| < 40.
pub fn bessel_j1(x: f64) -> f64 {
    const N: usize = 128;
    let h = 2.0 * std::f64::consts::PI / N as f64;
    let s: f64 = (0..N)
        .map(|i| {
            let t = i as f64 * h;
            (t - x * t.sin()).cos()
        })
        .sum();
    s / N as f64
}

/// Reflect-101 index (edge pixel not repeated), valid for any offset.
#[inline]
pub fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Correlate every channel with `k`, reflect-101 borders.
pub fn convolve(img: &Image, k: &Kernel) -> Image {
    if k.size == 1 {
        return img.map(|v| v * k.weights[0]);
    }
    let (w, h) = img.dims();
    let r = (k.size / 2) as isize;
    let xs: Vec<Vec<usize>> = (0..w)
        .map(|x| (0..k.size).map(|j| reflect101(x as isize + j as isize - r, w)).collect())
        .collect();
    let src = img.data();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for i in 0..k.size {
            let sy = reflect101(y as isize + i as isize - r, h);
            let row = &src[sy * w * 3..(sy + 1) * w * 3];
            let krow = &k.weights[i * k.size..(i + 1) * k.size];
            let orow = &mut out[y * w * 3..(y + 1) * w * 3];
            for x in 0..w {
                let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
                for (kw, &sx) in krow.iter().zip(&xs[x]) {
                    a += kw * row[sx * 3];
                    b += kw * row[sx * 3 + 1];
                    c += kw * row[sx * 3 + 2];
                }
                orow[x * 3] += a;
                orow[x * 3 + 1] += b;
                orow[x * 3 + 2] += c;
            }
        }
    }
    Image::new(w, h, out).expect("same dims")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect101_indices() {
        let got: Vec<usize> = (-3..8).map(|i| reflect101(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect101(-7, 1), 0);
        assert_eq!(reflect101(9, 2), 1);
    }

    #[test]
    fn j1_known_values() {
        // Abramowitz & Stegun table values
        assert!((bessel_j1(1.0) - 0.440_050_585_744_933_5).abs() < 1e-14);
        assert!((bessel_j1(3.0) - 0.339_058_958_525_936_5).abs() < 1e-14);
        assert!((bessel_j1(10.0) - 0.043_472_746_168_861_44).abs() < 1e-14);
        assert!(bessel_j1(3.831_705_970_207_512).abs() < 1e-12);
    }

    #[test]
    fn delta_kernel_is_identity_under_convolution() {
        let img = Image::from_fn(6, 5, |x, y| [x as f64 * 0.1, y as f64 * 0.2, 0.5]);
        let k = build_kernel(&BlurKernelSpec::isotropic(5, 1e-9)).unwrap();
        assert_eq!(convolve(&img, &k), img);
    }

    #[test]
    fn convolution_preserves_constants() {
        let img = Image::filled(7, 9, [0.25, 0.5, 0.75]);
        let k = build_kernel(&BlurKernelSpec::plateau(7, 1.5, 0.7, 0.3, 1.5)).unwrap();
        for (a, b) in convolve(&img, &k).data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_errors() {
        assert!(build_kernel(&BlurKernelSpec::isotropic(4, 1.0)).is_err());
        assert!(build_kernel(&BlurKernelSpec::isotropic(5, f64::NAN)).is_err());
        assert!(build_kernel(&BlurKernelSpec::isotropic(5, 0.0)).is_err());
        assert!(build_kernel(&BlurKernelSpec::anisotropic(5, 1.0, f64::INFINITY, 0.0)).is_err());
        assert!(build_kernel(&BlurKernelSpec::sinc(7, 4.0)).is_err());
        assert!(build_kernel(&BlurKernelSpec::sinc(7, 0.0)).is_err());
    }
}
