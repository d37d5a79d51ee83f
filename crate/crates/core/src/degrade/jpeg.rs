//! Baseline JPEG round trip in integer arithmetic.
//!
//! Only the lossy stages are modelled: 8-bit JFIF YCbCr conversion, 4:2:0
//! chroma subsampling, 8x8 DCT, quantization with IJG-scaled standard
//! tables, and the inverse path. Huffman coding is lossless and skipped.
//! Everything after the u8 conversion is exact integer math, so the output
//! does not depend on the platform's floating point.

use crate::error::{param, Result};
use crate::image::Image;

/// round(2^13 * c(u) * cos((2x+1) u pi / 16)), c(0) = sqrt(1/8), else 1/2.
const BASIS: [[i64; 8]; 8] = [
    [2896, 2896, 2896, 2896, 2896, 2896, 2896, 2896],
    [4017, 3406, 2276, 799, -799, -2276, -3406, -4017],
    [3784, 1567, -1567, -3784, -3784, -1567, 1567, 3784],
    [3406, -799, -4017, -2276, 2276, 4017, 799, -3406],
    [2896, -2896, -2896, 2896, 2896, -2896, -2896, 2896],
    [2276, -4017, 799, 3406, -3406, -799, 4017, -2276],
    [1567, -3784, 3784, -1567, -1567, 3784, -3784, 1567],
    [799, -2276, 3406, -4017, 4017, -3406, 2276, -799],
];
const SHIFT: u32 = 26;

const LUMA_Q: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113,
    92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99,
];

const CHROMA_Q: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
];

/// IJG quality scaling of a base table.
pub fn quant_table(base: &[u16; 64], quality: u8) -> [i64; 64] {
    let q = quality.clamp(1, 100) as i64;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut t = [0i64; 64];
    for (o, &b) in t.iter_mut().zip(base) {
        *o = ((b as i64 * scale + 50) / 100).clamp(1, 255);
    }
    t
}

fn div_round(n: i64, d: i64) -> i64 {
    // half away from zero, d > 0
    if n >= 0 {
        (n + d / 2) / d
    } else {
        -((-n + d / 2) / d)
    }
}

/// Quantize and reconstruct one 8x8 block of level-shifted samples in place.
fn code_block(block: &mut [i64; 64], q: &[i64; 64]) {
    let mut tmp = [0i64; 64];
    // forward: rows then columns
    for y in 0..8 {
        for v in 0..8 {
            tmp[y * 8 + v] = (0..8).map(|x| BASIS[v][x] * block[y * 8 + x]).sum();
        }
    }
    let mut coef = [0i64; 64];
    for u in 0..8 {
        for v in 0..8 {
            let f: i64 = (0..8).map(|y| BASIS[u][y] * tmp[y * 8 + v]).sum();
            let qi = div_round(f, q[u * 8 + v] << SHIFT);
            coef[u * 8 + v] = qi * q[u * 8 + v];
        }
    }
    // inverse
    for u in 0..8 {
        for x in 0..8 {
            tmp[u * 8 + x] = (0..8).map(|v| BASIS[v][x] * coef[u * 8 + v]).sum();
        }
    }
    for y in 0..8 {
        for x in 0..8 {
            let s: i64 = (0..8).map(|u| BASIS[u][y] * tmp[u * 8 + x]).sum();
            block[y * 8 + x] = (div_round(s, 1 << SHIFT) + 128).clamp(0, 255);
        }
    }
}

fn code_plane(plane: &mut [i64], w: usize, h: usize, q: &[i64; 64]) {
    debug_assert!(w % 8 == 0 && h % 8 == 0);
    let mut block = [0i64; 64];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = plane[(by + y) * w + bx + x] - 128;
                }
            }
            code_block(&mut block, q);
            for y in 0..8 {
                for x in 0..8 {
                    plane[(by + y) * w + bx + x] = block[y * 8 + x];
                }
            }
        }
    }
}

// JFIF colour conversion in 16-bit fixed point
const fn fix(x: f64) -> i64 {
    (x * 65536.0 + 0.5) as i64
}
const HALF: i64 = 1 << 15;

fn rgb_to_ycc(r: i64, g: i64, b: i64) -> (i64, i64, i64) {
    let y = (fix(0.299) * r + fix(0.587) * g + fix(0.114) * b + HALF) >> 16;
    let cb = ((-fix(0.168_735_92) * r - fix(0.331_264_08) * g + fix(0.5) * b + HALF) >> 16) + 128;
    let cr = ((fix(0.5) * r - fix(0.418_687_59) * g - fix(0.081_312_41) * b + HALF) >> 16) + 128;
    (y.clamp(0, 255), cb.clamp(0, 255), cr.clamp(0, 255))
}

fn ycc_to_rgb(y: i64, cb: i64, cr: i64) -> (i64, i64, i64) {
    let (cb, cr) = (cb - 128, cr - 128);
    let r = y + ((fix(1.402) * cr + HALF) >> 16);
    let g = y + ((-fix(0.344_136_29) * cb - fix(0.714_136_29) * cr + HALF) >> 16);
    let b = y + ((fix(1.772) * cb + HALF) >> 16);
    (r.clamp(0, 255), g.clamp(0, 255), b.clamp(0, 255))
}

/// Compress and decompress at `quality` (1..=100).
pub fn jpeg_roundtrip(img: &Image, quality: u8) -> Result<Image> {
    if !(1..=100).contains(&quality) {
        return param(format!("jpeg quality must be in 1..=100, got {quality}"));
    }
    let (w, h) = img.dims();
    let pw = w.div_ceil(16) * 16;
    let ph = h.div_ceil(16) * 16;
    let bytes = img.to_u8();
    let mut yp = vec![0i64; pw * ph];
    let mut cbf = vec![0i64; pw * ph];
    let mut crf = vec![0i64; pw * ph];
    for y in 0..ph {
        let sy = y.min(h - 1);
        for x in 0..pw {
            let sx = x.min(w - 1);
            let p = (sy * w + sx) * 3;
            let (yy, cb, cr) =
                rgb_to_ycc(bytes[p] as i64, bytes[p + 1] as i64, bytes[p + 2] as i64);
            yp[y * pw + x] = yy;
            cbf[y * pw + x] = cb;
            crf[y * pw + x] = cr;
        }
    }
    let (cw, ch) = (pw / 2, ph / 2);
    let sub = |full: &[i64]| -> Vec<i64> {
        let mut out = vec![0i64; cw * ch];
        for y in 0..ch {
            for x in 0..cw {
                let s = full[2 * y * pw + 2 * x]
                    + full[2 * y * pw + 2 * x + 1]
                    + full[(2 * y + 1) * pw + 2 * x]
                    + full[(2 * y + 1) * pw + 2 * x + 1];
                out[y * cw + x] = (s + 2) >> 2;
            }
        }
        out
    };
    let mut cbp = sub(&cbf);
    let mut crp = sub(&crf);
    let ql = quant_table(&LUMA_Q, quality);
    let qc = quant_table(&CHROMA_Q, quality);
    code_plane(&mut yp, pw, ph, &ql);
    code_plane(&mut cbp, cw, ch, &qc);
    code_plane(&mut crp, cw, ch, &qc);
    let mut out = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let ci = (y / 2) * cw + x / 2;
            let (r, g, b) = ycc_to_rgb(yp[y * pw + x], cbp[ci], crp[ci]);
            out.extend([r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0]);
        }
    }
    Image::new(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_matches_cosine_formula() {
        for (u, row) in BASIS.iter().enumerate() {
            let c = if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
            for (x, &b) in row.iter().enumerate() {
                let v = 8192.0 * c * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
                assert_eq!(b, v.round() as i64);
            }
        }
    }

    #[test]
    fn ijg_scaling() {
        assert_eq!(quant_table(&LUMA_Q, 50)[0], 16);
        assert!(quant_table(&LUMA_Q, 100).iter().all(|&v| v == 1));
        // q=10 -> scale 500: 16*5 = 80
        assert_eq!(quant_table(&LUMA_Q, 10)[0], 80);
        assert_eq!(quant_table(&CHROMA_Q, 1)[63], 255);
    }

    #[test]
    fn flat_gray_survives_any_quality() {
        let img = Image::filled(19, 11, [0.5, 0.5, 0.5]).quantize_u8();
        for q in [1, 20, 50, 95, 100] {
            assert_eq!(jpeg_roundtrip(&img, q).unwrap(), img, "quality {q}");
        }
    }

    #[test]
    fn error_grows_as_quality_drops() {
        // gray texture, so chroma subsampling contributes nothing
        let img = Image::from_fn(48, 40, |x, y| {
            let v = 0.5 + 0.3 * (x as f64 * 0.7).sin() * (y as f64 * 0.45).cos()
                + 0.1 * ((x * y) as f64 * 0.05).sin();
            [v; 3]
        })
        .quantize_u8();
        let mse = |q| {
            let o = jpeg_roundtrip(&img, q).unwrap();
            o.data().iter().zip(img.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        };
        let errs: Vec<f64> = [100, 90, 70, 50, 30, 10].iter().map(|&q| mse(q)).collect();
        for w in errs.windows(2) {
            assert!(w[0] < w[1], "{errs:?}");
        }
    }

    #[test]
    fn integer_dct_matches_float_reference() {
        // at quality 100 every step is 1, so reconstruction error is pure rounding
        let mut block = [0i64; 64];
        let src: Vec<i64> = (0..64).map(|i| ((i * 37 + 11) % 256) as i64 - 128).collect();
        block.copy_from_slice(&src);
        code_block(&mut block, &[1; 64]);
        for (o, s) in block.iter().zip(&src) {
            assert!((o - 128 - s).abs() <= 1, "{o} vs {s}");
        }
        // float DCT-II DC coefficient of a constant block is 8 * value
        let mut flat = [0i64; 64];
        flat.iter_mut().for_each(|v| *v = 40);
        let dc: i64 = (0..8)
            .map(|y| BASIS[0][y] * (0..8).map(|x| BASIS[0][x] * flat[y * 8 + x]).sum::<i64>())
            .sum();
        assert_eq!(div_round(dc, 1 << SHIFT), 320);
    }

    #[test]
    fn rejects_bad_quality() {
        let img = Image::filled(8, 8, [0.0; 3]);
        assert!(jpeg_roundtrip(&img, 0).is_err());
        assert!(jpeg_roundtrip(&img, 101).is_err());
    }
}
