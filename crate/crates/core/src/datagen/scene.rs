//! Procedural scenes with one parametric face glyph.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::facegeom::{BBox, FaceAnnotation, Landmarks, MIN_FACE};
use crate::image::Image;

pub const MIN_SCENE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub size: usize,
    pub face_min: f64,
    /// Defaults to half the scene side.
    #[serde(default)]
    pub face_max: Option<f64>,
    /// Degrees; rotations are drawn from the open interval (-max, max).
    pub max_rotation: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            size: 64,
            face_min: MIN_FACE as f64,
            face_max: None,
            max_rotation: 45.0,
        }
    }
}

impl SceneParams {
    pub fn face_range(&self) -> Result<(f64, f64)> {
        if self.size < MIN_SCENE {
            return param(format!("scene size {} below {MIN_SCENE}", self.size));
        }
        let hi = self.face_max.unwrap_or(self.size as f64 / 2.0);
        let lo = self.face_min;
        if !(lo.is_finite() && hi.is_finite()) || lo < MIN_FACE as f64 || hi > self.size as f64 / 2.0 || lo > hi {
            return param(format!(
                "face side range [{lo}, {hi}] must lie within [{MIN_FACE}, {}]",
                self.size / 2
            ));
        }
        if !(0.0..=45.0).contains(&self.max_rotation) {
            return param(format!("max_rotation must lie in [0, 45], got {}", self.max_rotation));
        }
        Ok((lo, hi))
    }
}

/// Where the glyph goes, before rasterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceLayout {
    /// Continuous side length drawn uniformly from the configured range.
    pub side: f64,
    pub bbox: BBox,
    /// Radians.
    pub angle: f64,
}

impl FaceLayout {
    pub fn centre(&self) -> (f64, f64) {
        let b = self.bbox;
        (b.x as f64 + (b.w as f64 - 1.0) / 2.0, b.y as f64 + (b.h as f64 - 1.0) / 2.0)
    }

    /// Glyph-local offsets in units of the box side; they line up with the
    /// canonical template once the box is mapped to the crop.
    pub fn landmarks(&self) -> Landmarks {
        let s = self.bbox.w as f64;
        let (c, sn) = (self.angle.cos(), self.angle.sin());
        let (cx, cy) = self.centre();
        let place = |dx: f64, dy: f64| (cx + s * (c * dx - sn * dy), cy + s * (sn * dx + c * dy));
        Landmarks {
            left_eye: place(-0.15, -0.10),
            right_eye: place(0.15, -0.10),
            mouth: place(0.0, 0.25),
        }
    }
}

pub fn sample_layout(rng: &mut impl Rng, p: &SceneParams) -> Result<FaceLayout> {
    let (lo, hi) = p.face_range()?;
    let side = if lo == hi { lo } else { rng.random_range(lo..hi) };
    let w = (side.round() as usize).clamp(MIN_FACE, p.size / 2);
    let x = rng.random_range(0..=p.size - w);
    let y = rng.random_range(0..=p.size - w);
    let max = p.max_rotation.to_radians();
    let angle = if max == 0.0 { 0.0 } else { rng.random_range(-max..max) };
    Ok(FaceLayout {
        side,
        bbox: BBox { x, y, w, h: w },
        angle,
    })
}

fn rand_rgb(rng: &mut impl Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn background(rng: &mut impl Rng, n: usize) -> Image {
    let (a, b) = (rand_rgb(rng), rand_rgb(rng));
    let kind = rng.random_range(0..4u8);
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    let period: f64 = rng.random_range(14.0..32.0);
    let nf = n as f64;
    match kind {
        0 => Image::from_fn(n, n, |x, y| {
            let t = ((x as f64 * dx + y as f64 * dy) / nf / 2.0 + 0.5).clamp(0.0, 1.0);
            lerp(a, b, t)
        }),
        1 => Image::from_fn(n, n, |x, y| {
            let u = (x as f64 * dx + y as f64 * dy) / period;
            lerp(a, b, 0.5 + 0.5 * (u * std::f64::consts::TAU).sin())
        }),
        2 => {
            // square wave with ramps about two pixels wide
            let k = period / (2.0 * std::f64::consts::PI);
            let sq = |t: f64| (k * (t * std::f64::consts::PI / period).sin()).clamp(-1.0, 1.0);
            Image::from_fn(n, n, |x, y| lerp(a, b, 0.5 + 0.5 * sq(x as f64) * sq(y as f64)))
        }
        _ => {
            // value noise on a coarse lattice, smoothstep interpolated
            let g = (nf / period).ceil() as usize + 2;
            let lattice: Vec<f64> = (0..g * g).map(|_| rng.random()).collect();
            Image::from_fn(n, n, |x, y| {
                let (fx, fy) = (x as f64 / period, y as f64 / period);
                let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
                let s = |t: f64| t * t * (3.0 - 2.0 * t);
                let (tx, ty) = (s(fx - ix as f64), s(fy - iy as f64));
                let v = |i: usize, j: usize| lattice[j * g + i];
                let top = v(ix, iy) * (1.0 - tx) + v(ix + 1, iy) * tx;
                let bot = v(ix, iy + 1) * (1.0 - tx) + v(ix + 1, iy + 1) * tx;
                lerp(a, b, top * (1.0 - ty) + bot * ty)
            })
        }
    }
}

/// Soft coverage from a signed distance in pixels (negative inside), with a
/// transition about three pixels wide so resampling stays well behaved.
fn coverage(sd: f64) -> f64 {
    let t = (0.5 - sd / 3.0).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    lerp(a, b, t)
}

/// Draw the glyph for `layout` onto `img`. Shapes are placed in a local
/// frame measured in box sides and composited back to front.
pub fn draw_face(img: &mut Image, layout: &FaceLayout, skin: [f64; 3], dark: [f64; 3]) {
    let s = layout.bbox.w as f64;
    let (cx, cy) = layout.centre();
    let (c, sn) = (layout.angle.cos(), layout.angle.sin());
    let b = layout.bbox;
    let lips = [0.7 * skin[0], 0.3 * skin[1], 0.3 * skin[2]];
    let ring = (0.08 * s).max(1.5);
    for y in b.y..b.y + b.h {
        for x in b.x..b.x + b.w {
            let (px, py) = (x as f64 - cx, y as f64 - cy);
            // inverse rotation into the glyph frame
            let u = (c * px + sn * py) / s;
            let v = (-sn * px + c * py) / s;
            let head = (((u / 0.36).powi(2) + (v / 0.45).powi(2)).sqrt() - 1.0) * 0.40 * s;
            let eye = |ex: f64| (((u - ex).powi(2) + (v + 0.10).powi(2)).sqrt() - 0.06) * s;
            let mouth = (((u / 0.12).powi(2) + ((v - 0.25) / 0.04).powi(2)).sqrt() - 1.0) * 0.06 * s;
            let mut col = img.pixel(x, y);
            col = mix(col, dark, coverage(head));
            col = mix(col, skin, coverage(head + ring));
            col = mix(col, dark, coverage(eye(-0.15).min(eye(0.15))));
            col = mix(col, lips, coverage(mouth));
            for (k, v) in col.iter().enumerate() {
                img.set(x, y, k, *v);
            }
        }
    }
}

pub fn gen_scene(rng: &mut impl Rng, p: &SceneParams) -> Result<(Image, FaceAnnotation)> {
    let layout = sample_layout(rng, p)?;
    let mut img = background(rng, p.size);
    let skin = [
        rng.random_range(0.6..0.95),
        rng.random_range(0.45..0.8),
        rng.random_range(0.3..0.7),
    ];
    let dark = [
        rng.random_range(0.0..0.25),
        rng.random_range(0.0..0.2),
        rng.random_range(0.0..0.2),
    ];
    draw_face(&mut img, &layout, skin, dark);
    let ann = FaceAnnotation {
        bbox: layout.bbox,
        landmarks: layout.landmarks(),
    };
    ann.validate(p.size, p.size)?;
    Ok((img, ann))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_seed_same_scene() {
        let p = SceneParams::default();
        let a = gen_scene(&mut ChaCha8Rng::seed_from_u64(4), &p).unwrap();
        let b = gen_scene(&mut ChaCha8Rng::seed_from_u64(4), &p).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = gen_scene(&mut ChaCha8Rng::seed_from_u64(5), &p).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn landmarks_inside_and_ordered() {
        let p = SceneParams {
            size: 96,
            ..SceneParams::default()
        };
        let mut r = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..300 {
            let (img, ann) = gen_scene(&mut r, &p).unwrap();
            assert!(img.in_unit_range());
            for q in ann.landmarks.points() {
                assert!(ann.bbox.contains(q.0, q.1), "{q:?} {:?}", ann.bbox);
            }
            assert!(ann.landmarks.left_eye.0 < ann.landmarks.right_eye.0);
            assert!(ann.landmarks.mouth.1 > ann.landmarks.left_eye.1.min(ann.landmarks.right_eye.1));
        }
    }

    #[test]
    fn parameter_errors() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let small = SceneParams {
            size: 48,
            ..SceneParams::default()
        };
        assert!(gen_scene(&mut r, &small).is_err());
        let too_big = SceneParams {
            face_max: Some(40.0),
            ..SceneParams::default()
        };
        assert!(gen_scene(&mut r, &too_big).is_err());
        let too_small = SceneParams {
            face_min: 12.0,
            ..SceneParams::default()
        };
        assert!(gen_scene(&mut r, &too_small).is_err());
    }
}
