//! Separable resampling with half-pixel centres.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResizeFilter {
    Area,
    Bilinear,
    Bicubic,
}

/// Output side for a scale factor; errors when it collapses below 1 px.
pub fn scaled_len(n: usize, scale: f64) -> Result<usize> {
    if !scale.is_finite() || scale <= 0.0 {
        return param(format!("resize scale must be finite and > 0, got {scale}"));
    }
    let m = (n as f64 * scale).round();
    if m < 1.0 {
        return param(format!("resize of {n} px by {scale} leaves no pixels"));
    }
    Ok(m as usize)
}

pub fn resize_by(img: &Image, scale: f64, filter: ResizeFilter) -> Result<Image> {
    let w = scaled_len(img.width(), scale)?;
    let h = scaled_len(img.height(), scale)?;
    Ok(resize_to(img, w, h, filter))
}

/// Per output index: first source index and weights.
struct Taps {
    start: Vec<usize>,
    weights: Vec<Vec<f64>>,
}

fn cubic(t: f64) -> f64 {
    // Keys, a = -0.5
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

fn taps(n_in: usize, n_out: usize, filter: ResizeFilter) -> Taps {
    let ratio = n_in as f64 / n_out as f64;
    let mut start = Vec::with_capacity(n_out);
    let mut weights = Vec::with_capacity(n_out);
    let last = n_in as isize - 1;
    for i in 0..n_out {
        match filter {
            ResizeFilter::Area => {
                let lo = i as f64 * ratio;
                let hi = (i + 1) as f64 * ratio;
                let first = lo.floor() as usize;
                let end = (hi.ceil() as usize).min(n_in);
                let ws: Vec<f64> = (first..end)
                    .map(|j| (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0) / ratio)
                    .collect();
                start.push(first);
                weights.push(ws);
            }
            ResizeFilter::Bilinear | ResizeFilter::Bicubic => {
                let src = (i as f64 + 0.5) * ratio - 0.5;
                let (radius, f): (isize, fn(f64) -> f64) = if filter == ResizeFilter::Bilinear {
                    (1, |t: f64| (1.0 - t.abs()).max(0.0))
                } else {
                    (2, cubic)
                };
                let base = src.floor() as isize;
                // taps clamp to the border, so fold them into a dense window
                let lo = (base - radius + 1).clamp(0, last);
                let hi = (base + radius).clamp(0, last);
                let mut ws = vec![0.0; (hi - lo + 1) as usize];
                for j in base - radius + 1..=base + radius {
                    let wj = f(src - j as f64);
                    ws[(j.clamp(0, last) - lo) as usize] += wj;
                }
                let s: f64 = ws.iter().sum();
                for w in &mut ws {
                    *w /= s;
                }
                start.push(lo as usize);
                weights.push(ws);
            }
        }
    }
    Taps { start, weights }
}

pub fn resize_to(img: &Image, w: usize, h: usize, filter: ResizeFilter) -> Image {
    let (iw, ih) = img.dims();
    if (iw, ih) == (w, h) {
        return img.clone();
    }
    let tx = taps(iw, w, filter);
    let ty = taps(ih, h, filter);
    let src = img.data();
    // horizontal pass
    let mut mid = vec![0.0; w * ih * 3];
    for y in 0..ih {
        for x in 0..w {
            let s0 = tx.start[x];
            let mut acc = [0.0; 3];
            for (k, wk) in tx.weights[x].iter().enumerate() {
                let p = (y * iw + s0 + k) * 3;
                acc[0] += wk * src[p];
                acc[1] += wk * src[p + 1];
                acc[2] += wk * src[p + 2];
            }
            mid[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    let mut out = vec![0.0; w * h * 3];
    for y in 0..h {
        let s0 = ty.start[y];
        for (k, wk) in ty.weights[y].iter().enumerate() {
            let row = &mid[(s0 + k) * w * 3..(s0 + k + 1) * w * 3];
            let orow = &mut out[y * w * 3..(y + 1) * w * 3];
            for (o, r) in orow.iter_mut().zip(row) {
                *o += wk * r;
            }
        }
    }
    Image::new(w, h, out).expect("dims match")
}
