use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const PSNR_CAP: f64 = 100.0;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.data().len().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// Peak 1.0; capped at 100 dB when MSE < 1e-10.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m < 1e-10 { PSNR_CAP } else { 10.0 * (1.0 / m).log10() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SsimMode {
    #[default]
    Gray,
    ChannelMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimOptions {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub mode: SsimMode,
}

impl Default for SsimOptions {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            mode: SsimMode::Gray,
        }
    }
}

fn gauss_window(n: usize, sigma: f64) -> Vec<f64> {
    let r = (n / 2) as f64;
    let w: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable filter over the valid region only.
fn filter_valid(p: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, o: &SsimOptions) -> f64 {
    // shrink the window for crops smaller than it
    let mut n = o.window.min(w).min(h);
    if n % 2 == 0 {
        n -= 1;
    }
    let k = gauss_window(n.max(1), o.sigma);
    let (c1, c2) = ((o.k1).powi(2), (o.k2).powi(2));
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let (mu_a, ow, oh) = filter_valid(a, w, h, &k);
    let (mu_b, _, _) = filter_valid(b, w, h, &k);
    let (aa, _, _) = filter_valid(&prod(a, a), w, h, &k);
    let (bb, _, _) = filter_valid(&prod(b, b), w, h, &k);
    let (ab, _, _) = filter_valid(&prod(a, b), w, h, &k);
    let mut total = 0.0;
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / (ow * oh) as f64
}

/// Mean local SSIM with a Gaussian window (valid region, peak 1).
pub fn ssim(a: &Image, b: &Image, o: &SsimOptions) -> Result<f64> {
    a.same_shape(b)?;
    if o.window == 0 || o.sigma <= 0.0 {
        return Err(Error::Param("ssim window and sigma must be positive".into()));
    }
    let (w, h) = a.dims();
    Ok(match o.mode {
        SsimMode::Gray => ssim_plane(&a.gray(), &b.gray(), w, h, o),
        SsimMode::ChannelMean => {
            (0..3)
                .map(|c| ssim_plane(&a.channel(c), &b.channel(c), w, h, o))
                .sum::<f64>()
                / 3.0
        }
    })
}

/// Variance of the 4-neighbour Laplacian of the luma plane, interior pixels.
pub fn laplacian_blur_score(img: &Image) -> f64 {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return 0.0;
    }
    let g = img.gray();
    let mut vals = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = g[y * w + x];
            vals.push(g[y * w + x - 1] + g[y * w + x + 1] + g[(y - 1) * w + x] + g[(y + 1) * w + x] - 4.0 * c);
        }
    }
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64
}
