//! Minimal raster plots written as PNG. No text is drawn; callers keep the
//! numbers in the results table next to the figure.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

const PALETTE: [[f64; 3]; 6] = [
    [0.12, 0.47, 0.71],
    [1.0, 0.5, 0.05],
    [0.17, 0.63, 0.17],
    [0.84, 0.15, 0.16],
    [0.58, 0.4, 0.74],
    [0.55, 0.34, 0.29],
];
const MARGIN: usize = 12;

pub struct Canvas {
    img: Image,
}

impl Canvas {
    pub fn new(w: usize, h: usize) -> Canvas {
        Canvas {
            img: Image::filled(w, h, [1.0; 3]),
        }
    }

    fn put(&mut self, x: isize, y: isize, c: [f64; 3]) {
        let (w, h) = self.img.dims();
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            for (k, v) in c.iter().enumerate() {
                self.img.set(x as usize, y as usize, k, *v);
            }
        }
    }

    pub fn line(&mut self, (x0, y0): (isize, isize), (x1, y1): (isize, isize), c: [f64; 3]) {
        // Bresenham
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn rect(&mut self, x0: isize, y0: isize, x1: isize, y1: isize, c: [f64; 3]) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.put(x, y, c);
            }
        }
    }

    pub fn into_image(self) -> Image {
        self.img
    }
}

fn bounds<'a>(vals: impl Iterator<Item = &'a f64>) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in vals {
        if !v.is_finite() {
            return Err(Error::Data("non-finite value in plot data".into()));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return Err(Error::Data("nothing to plot".into()));
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    Ok((lo, hi))
}

fn axes(c: &mut Canvas, w: usize, h: usize) {
    let k = [0.0; 3];
    let (l, b) = (MARGIN as isize, (h - MARGIN) as isize);
    c.line((l, MARGIN as isize), (l, b), k);
    c.line((l, b), ((w - MARGIN) as isize, b), k);
}

/// One polyline per series, x = index.
pub fn line_plot(series: &[Vec<f64>], w: usize, h: usize) -> Result<Image> {
    let (lo, hi) = bounds(series.iter().flatten())?;
    let n = series.iter().map(Vec::len).max().unwrap_or(0).max(2);
    let mut c = Canvas::new(w, h);
    axes(&mut c, w, h);
    let pw = (w - 2 * MARGIN) as f64;
    let ph = (h - 2 * MARGIN) as f64;
    let to_px = |i: usize, v: f64| {
        (
            (MARGIN as f64 + pw * i as f64 / (n - 1) as f64).round() as isize,
            (MARGIN as f64 + ph * (1.0 - (v - lo) / (hi - lo))).round() as isize,
        )
    };
    for (s, ys) in series.iter().enumerate() {
        let col = PALETTE[s % PALETTE.len()];
        for i in 1..ys.len() {
            c.line(to_px(i - 1, ys[i - 1]), to_px(i, ys[i]), col);
        }
        if ys.len() == 1 {
            let p = to_px(0, ys[0]);
            c.rect(p.0 - 1, p.1 - 1, p.0 + 1, p.1 + 1, col);
        }
    }
    Ok(c.into_image())
}

/// Grouped bars from a zero baseline; `groups[g][k]` is bar k of group g.
pub fn bar_plot(groups: &[Vec<f64>], w: usize, h: usize) -> Result<Image> {
    let (lo, hi) = bounds(groups.iter().flatten().chain([0.0f64].iter()))?;
    let mut c = Canvas::new(w, h);
    axes(&mut c, w, h);
    let ph = (h - 2 * MARGIN) as f64;
    let y_of = |v: f64| (MARGIN as f64 + ph * (1.0 - (v - lo) / (hi - lo))).round() as isize;
    let slots: usize = groups.iter().map(|g| g.len() + 1).sum::<usize>().max(1);
    let bw = (w - 2 * MARGIN) as f64 / slots as f64;
    let mut slot = 0usize;
    for g in groups {
        for (k, &v) in g.iter().enumerate() {
            let x0 = (MARGIN as f64 + bw * (slot as f64 + 0.5)) as isize;
            let x1 = (MARGIN as f64 + bw * (slot as f64 + 1.5)) as isize - 1;
            c.rect(x0, y_of(0.0), x1.max(x0), y_of(v), PALETTE[k % PALETTE.len()]);
            slot += 1;
        }
        slot += 1;
    }
    c.line(
        (MARGIN as isize, y_of(0.0)),
        ((w - MARGIN) as isize, y_of(0.0)),
        [0.3; 3],
    );
    Ok(c.into_image())
}

pub fn save_line_plot(series: &[Vec<f64>], path: &Path) -> Result<()> {
    line_plot(series, 480, 320)?.save_png(path)
}

pub fn save_bar_plot(groups: &[Vec<f64>], path: &Path) -> Result<()> {
    bar_plot(groups, 480, 320)?.save_png(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_draw_something() {
        let img = line_plot(&[vec![3.0, 2.0, 1.5, 1.2], vec![1.0]], 100, 60).unwrap();
        assert!(img.data().iter().any(|&v| v < 0.9));
        let bars = bar_plot(&[vec![0.9, 0.2], vec![-0.3, 0.5]], 100, 60).unwrap();
        assert_eq!(bars.dims(), (100, 60));
        assert!(line_plot(&[vec![f64::NAN]], 50, 50).is_err());
        assert!(line_plot(&[], 50, 50).is_err());
    }
}
