//! Face alignment to a canonical frame and back.
//!
//! A [`RigidWarp`] maps scene coordinates to canonical coordinates,
//! `c = s R p + t`, with pixel centres at integer coordinates. It is fitted
//! by least squares from the annotated landmarks to a fixed template.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

/// Smallest canonical crop the models accept.
pub const MIN_FACE: usize = 16;
pub const DEFAULT_CANONICAL: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x as f64
            && py >= self.y as f64
            && px <= (self.x + self.w) as f64 - 1.0
            && py <= (self.y + self.h) as f64 - 1.0
    }

    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.w && y < self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmarks {
    pub left_eye: (f64, f64),
    pub right_eye: (f64, f64),
    pub mouth: (f64, f64),
}

impl Landmarks {
    pub fn points(&self) -> [(f64, f64); 3] {
        [self.left_eye, self.right_eye, self.mouth]
    }

    /// Template positions for a canonical side `s`.
    pub fn template(s: usize) -> Landmarks {
        let s = s as f64;
        Landmarks {
            left_eye: (0.35 * s, 0.40 * s),
            right_eye: (0.65 * s, 0.40 * s),
            mouth: (0.50 * s, 0.75 * s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceAnnotation {
    pub bbox: BBox,
    pub landmarks: Landmarks,
}

impl FaceAnnotation {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let b = &self.bbox;
        if b.w == 0 || b.h == 0 || b.x + b.w > width || b.y + b.h > height {
            return Err(Error::Annotation(format!(
                "bbox {b:?} outside {width}x{height} image"
            )));
        }
        for (x, y) in self.landmarks.points() {
            if !x.is_finite() || !y.is_finite() || !b.contains(x, y) {
                return Err(Error::Annotation(format!("landmark ({x}, {y}) outside bbox {b:?}")));
            }
        }
        if self.landmarks.left_eye.0 >= self.landmarks.right_eye.0 {
            return Err(Error::Annotation("left eye must be left of right eye".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidWarp {
    pub rotation: f64,
    pub translation: (f64, f64),
    pub scale: f64,
    pub canonical_size: usize,
}

impl RigidWarp {
    pub fn identity(canonical_size: usize) -> Self {
        Self {
            rotation: 0.0,
            translation: (0.0, 0.0),
            scale: 1.0,
            canonical_size,
        }
    }

    /// Scene -> canonical.
    pub fn forward(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        (
            self.scale * (c * p.0 - s * p.1) + self.translation.0,
            self.scale * (s * p.0 + c * p.1) + self.translation.1,
        )
    }

    /// Canonical -> scene.
    pub fn inverse(&self, q: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        let (x, y) = (
            (q.0 - self.translation.0) / self.scale,
            (q.1 - self.translation.1) / self.scale,
        );
        (c * x + s * y, -s * x + c * y)
    }

    /// Least-squares similarity transform taking `src[i]` onto `dst[i]`.
    pub fn fit(src: &[(f64, f64)], dst: &[(f64, f64)], canonical_size: usize) -> Result<Self> {
        assert_eq!(src.len(), dst.len());
        let n = src.len() as f64;
        let mean = |pts: &[(f64, f64)]| {
            let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
            (sx / n, sy / n)
        };
        let (ms, md) = (mean(src), mean(dst));
        // closed form for c = a p + b p_perp + t with a = s cos, b = s sin
        let (mut num_a, mut num_b, mut den) = (0.0, 0.0, 0.0);
        for (p, q) in src.iter().zip(dst) {
            let (px, py) = (p.0 - ms.0, p.1 - ms.1);
            let (qx, qy) = (q.0 - md.0, q.1 - md.1);
            num_a += px * qx + py * qy;
            num_b += px * qy - py * qx;
            den += px * px + py * py;
        }
        if den < 1e-12 {
            return Err(Error::Annotation("landmarks are degenerate".into()));
        }
        let (a, b) = (num_a / den, num_b / den);
        let scale = (a * a + b * b).sqrt();
        if scale < 1e-12 {
            return Err(Error::Annotation("degenerate landmark fit".into()));
        }
        let rotation = b.atan2(a);
        let tx = md.0 - (a * ms.0 - b * ms.1);
        let ty = md.1 - (b * ms.0 + a * ms.1);
        Ok(Self {
            rotation,
            translation: (tx, ty),
            scale,
            canonical_size,
        })
    }
}

/// Bilinear sample with edge clamping.
pub fn sample_bilinear(img: &Image, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = img.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = img.get(x0, y0, c) * (1.0 - fx) + img.get(x1, y0, c) * fx;
        let bot = img.get(x0, y1, c) * (1.0 - fx) + img.get(x1, y1, c) * fx;
        *o = top * (1.0 - fy) + bot * fy;
    }
    out
}

pub fn align_face(scene: &Image, ann: &FaceAnnotation, canonical_size: usize) -> Result<(Image, RigidWarp)> {
    if canonical_size < MIN_FACE {
        return Err(Error::TooSmallFace {
            side: canonical_size,
            min: MIN_FACE,
        });
    }
    ann.validate(scene.width(), scene.height())?;
    let tpl = Landmarks::template(canonical_size).points();
    let warp = RigidWarp::fit(&ann.landmarks.points(), &tpl, canonical_size)?;
    Ok((warp_to_canonical(scene, &warp), warp))
}

/// Resample the canonical crop for an already fitted warp.
pub fn warp_to_canonical(scene: &Image, warp: &RigidWarp) -> Image {
    let s = warp.canonical_size;
    Image::from_fn(s, s, |x, y| {
        let (px, py) = warp.inverse((x as f64, y as f64));
        sample_bilinear(scene, px, py)
    })
}

/// Place a canonical face back into scene coordinates. The mask is 1 where
/// the scene pixel maps inside the canonical square.
pub fn invert_warp(face: &Image, warp: &RigidWarp, scene_w: usize, scene_h: usize) -> (Image, Mask) {
    let s = (warp.canonical_size - 1) as f64;
    let tol = 1e-9;
    let mut mask = Mask::filled(scene_w, scene_h, 0.0);
    let patch = Image::from_fn(scene_w, scene_h, |x, y| {
        let (cx, cy) = warp.forward((x as f64, y as f64));
        if cx >= -tol && cy >= -tol && cx <= s + tol && cy <= s + tol {
            mask.data[y * scene_w + x] = 1.0;
            sample_bilinear(face, cx, cy)
        } else {
            [0.0; 3]
        }
    });
    (patch, mask)
}

/// Feathered box mask: 1 in the interior, ramping linearly to 0 at the bbox
/// edge over `feather` pixels, 0 outside.
pub fn soft_mask(bbox: &BBox, width: usize, height: usize, feather: usize) -> Result<Mask> {
    if bbox.x + bbox.w > width || bbox.y + bbox.h > height {
        return Err(Error::Annotation(format!("bbox {bbox:?} outside {width}x{height}")));
    }
    if 2 * feather >= bbox.w.min(bbox.h) && feather > 0 {
        return Err(Error::Param(format!(
            "feather {feather} too large for a {}x{} box",
            bbox.w, bbox.h
        )));
    }
    let mut m = Mask::filled(width, height, 0.0);
    for y in bbox.y..bbox.y + bbox.h {
        for x in bbox.x..bbox.x + bbox.w {
            let d = (x - bbox.x)
                .min(bbox.x + bbox.w - 1 - x)
                .min(y - bbox.y)
                .min(bbox.y + bbox.h - 1 - y);
            m.data[y * width + x] = if feather == 0 {
                1.0
            } else {
                (d as f64 / feather as f64).min(1.0)
            };
        }
    }
    Ok(m)
}

/// Default feather: 10% of the shorter bbox side.
pub fn default_feather(bbox: &BBox) -> usize {
    let f = bbox.w.min(bbox.h) / 10;
    if 2 * f >= bbox.w.min(bbox.h) {
        0
    } else {
        f
    }
}

/// M * gt + (1 - M) * pred, per pixel and channel.
pub fn blend_insert(pred: &Image, gt: &Image, m: &Mask) -> Result<Image> {
    pred.same_shape(gt)?;
    if (m.width, m.height) != pred.dims() {
        return Err(Error::Shape(format!(
            "mask {}x{} vs image {}x{}",
            m.width,
            m.height,
            pred.width(),
            pred.height()
        )));
    }
    let mut out = pred.clone();
    for (i, px) in out.data_mut().chunks_exact_mut(3).enumerate() {
        let a = m.data[i];
        for (c, v) in px.iter_mut().enumerate() {
            *v = a * gt.data()[i * 3 + c] + (1.0 - a) * *v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> Image {
        Image::from_fn(64, 64, |x, y| {
            let v = ((x as f64 * 0.3).sin() * (y as f64 * 0.2).cos() + 1.0) / 2.0;
            [v, x as f64 / 63.0, y as f64 / 63.0]
        })
    }

    fn ann_at(x0: f64, y0: f64, s: f64, theta: f64) -> FaceAnnotation {
        // template at side s, rotated about its centre, offset by (x0, y0)
        let t = Landmarks::template(1);
        let rot = |p: (f64, f64)| {
            let (u, v) = ((p.0 - 0.5) * s, (p.1 - 0.5) * s);
            let (sn, c) = theta.sin_cos();
            (x0 + s / 2.0 + c * u - sn * v, y0 + s / 2.0 + sn * u + c * v)
        };
        FaceAnnotation {
            bbox: BBox {
                x: x0 as usize,
                y: y0 as usize,
                w: s as usize,
                h: s as usize,
            },
            landmarks: Landmarks {
                left_eye: rot(t.left_eye),
                right_eye: rot(t.right_eye),
                mouth: rot(t.mouth),
            },
        }
    }

    #[test]
    fn canonical_face_is_pure_translation_and_a_crop() {
        let img = scene();
        let ann = ann_at(10.0, 20.0, 32.0, 0.0);
        let (face, warp) = align_face(&img, &ann, 32).unwrap();
        assert!(warp.rotation.abs() < 1e-12 && (warp.scale - 1.0).abs() < 1e-12);
        assert!((warp.translation.0 + 10.0).abs() < 1e-9 && (warp.translation.1 + 20.0).abs() < 1e-9);
        let crop = img.crop(10, 20, 32, 32).unwrap();
        for (a, b) in face.data().iter().zip(crop.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rotated_face_aligns_eyes_horizontally() {
        let ann = ann_at(16.0, 16.0, 28.0, 0.4);
        let (_, warp) = align_face(&scene(), &ann, 32).unwrap();
        let l = warp.forward(ann.landmarks.left_eye);
        let r = warp.forward(ann.landmarks.right_eye);
        let angle = (r.1 - l.1).atan2(r.0 - l.0).to_degrees();
        assert!(angle.abs() < 0.5);
        assert!((warp.rotation + 0.4).abs() < 1e-9);
    }

    #[test]
    fn landmark_roundtrip_is_exact() {
        let w = RigidWarp {
            rotation: 0.7,
            translation: (-3.2, 11.0),
            scale: 1.37,
            canonical_size: 32,
        };
        for p in [(0.0, 0.0), (13.5, -2.25), (63.0, 40.0)] {
            let q = w.inverse(w.forward(p));
            assert!((q.0 - p.0).abs() < 1e-9 && (q.1 - p.1).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_warp_inverts_to_same_face() {
        let face = scene().crop(0, 0, 32, 32).unwrap();
        let (patch, mask) = invert_warp(&face, &RigidWarp::identity(32), 32, 32);
        assert_eq!(patch, face);
        assert!(mask.data.iter().all(|&m| m == 1.0));
        let (_, mask) = invert_warp(&face, &RigidWarp::identity(32), 40, 40);
        assert_eq!(mask.get(35, 35), 0.0);
    }

    #[test]
    fn annotation_errors() {
        let mut ann = ann_at(40.0, 40.0, 32.0, 0.0);
        assert!(matches!(align_face(&scene(), &ann, 32), Err(Error::Annotation(_))));
        ann = ann_at(0.0, 0.0, 32.0, 0.0);
        assert!(matches!(align_face(&scene(), &ann, 15), Err(Error::TooSmallFace { .. })));
        ann.landmarks.left_eye.0 = 30.0;
        assert!(ann.validate(64, 64).is_err());
    }

    #[test]
    fn soft_mask_ramp() {
        let b = BBox { x: 2, y: 3, w: 20, h: 20 };
        let m = soft_mask(&b, 30, 30, 8).unwrap();
        assert_eq!(m.get(1, 10), 0.0);
        assert_eq!(m.get(12, 12), 1.0);
        // distance 4 = f/2 from the left edge
        assert!((m.get(6, 12) - 0.5).abs() < 1.0 / 8.0);
        assert!(soft_mask(&b, 30, 30, 10).is_err());
        let full = soft_mask(&BBox { x: 0, y: 0, w: 30, h: 30 }, 30, 30, 0).unwrap();
        assert!(full.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn blend_limits() {
        let a = scene();
        let b = a.map(|v| 1.0 - v);
        let one = Mask::filled(64, 64, 1.0);
        let zero = Mask::filled(64, 64, 0.0);
        let half = Mask::filled(64, 64, 0.5);
        assert_eq!(blend_insert(&a, &b, &one).unwrap(), b);
        assert_eq!(blend_insert(&a, &b, &zero).unwrap(), a);
        let m = blend_insert(&a, &b, &half).unwrap();
        for ((x, p), g) in m.data().iter().zip(a.data()).zip(b.data()) {
            assert!((x - (p + g) / 2.0).abs() < 1e-15);
        }
        assert!(blend_insert(&a, &a.crop(0, 0, 10, 10).unwrap(), &one).is_err());
    }
}
