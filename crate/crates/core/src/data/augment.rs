//! Crop/resize, horizontal flip, rotation and Gaussian blur, applied to an
//! image and its landmarks together.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::pts::FaceBox;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::landmarks::{LandmarkSet, Point, FLIP_PERMUTATION, NUM_LANDMARKS};

pub const BLUR_SIZE: usize = 9;
pub const BLUR_SIGMA: f64 = 1.8;

/// Maps `landmarks` from `bbox` to a `size × size` frame:
/// `x' = (x − box.x) · size / box.w`, likewise for `y`.
pub fn crop_resize(image: &Image, bbox: &FaceBox, landmarks: &LandmarkSet, size: usize) -> Result<(Image, LandmarkSet)> {
    if size == 0 {
        return Err(Error::InvalidArgument("output size must be nonzero".into()));
    }
    if bbox.x < 0.0
        || bbox.y < 0.0
        || bbox.x + bbox.w > image.width() as f64
        || bbox.y + bbox.h > image.height() as f64
    {
        return Err(Error::InvalidArgument(format!(
            "face box {bbox:?} exceeds the {}x{} image",
            image.width(),
            image.height()
        )));
    }
    if let Some(i) = landmarks.points.iter().position(|p| !bbox.contains(*p)) {
        return Err(Error::InvalidArgument(format!("landmark {i} lies outside the face box")));
    }
    let sx = size as f64 / bbox.w;
    let sy = size as f64 / bbox.h;
    let points = landmarks.points.map(|p| [(p[0] - bbox.x) * sx, (p[1] - bbox.y) * sy]);
    let mut out = Image::new(size, size);
    for c in 0..3 {
        for y in 0..size {
            let src_y = bbox.y + (y as f64 + 0.5) / sy;
            for x in 0..size {
                let src_x = bbox.x + (x as f64 + 0.5) / sx;
                out.set(c, x, y, image.sample_bilinear_clamped(c, src_x, src_y));
            }
        }
    }
    Ok((out, LandmarkSet::unchecked(points, size, size)))
}

/// Mirrors pixels and maps `x' = w − x`, then permutes indices so each
/// slot keeps its semantic identity.
pub fn hflip(image: &Image, landmarks: &LandmarkSet) -> (Image, LandmarkSet) {
    let (w, h) = (image.width(), image.height());
    let mut out = Image::new(w, h);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out.set(c, x, y, image.get(c, w - 1 - x, y));
            }
        }
    }
    let fw = landmarks.width as f64;
    let mut points = [[0.0; 2]; NUM_LANDMARKS];
    for (i, p) in landmarks.points.iter().enumerate() {
        points[FLIP_PERMUTATION[i]] = [fw - p[0], p[1]];
    }
    (out, LandmarkSet::unchecked(points, landmarks.width, landmarks.height))
}

/// `x' = x cosθ + y sinθ + xo`, `y' = −x sinθ + y cosθ + yo`.
pub fn rotate_point(p: Point, theta: f64, offset: Point) -> Point {
    let (s, c) = theta.sin_cos();
    [p[0] * c + p[1] * s + offset[0], -p[0] * s + p[1] * c + offset[1]]
}

/// Offsets that keep `centre` fixed under [`rotate_point`].
pub fn centre_offset(theta: f64, centre: Point) -> Point {
    let r = rotate_point(centre, theta, [0.0, 0.0]);
    [centre[0] - r[0], centre[1] - r[1]]
}

/// Rotates about the frame centre by `degrees`. Uncovered pixels are black;
/// landmarks may leave the frame and are not checked here.
pub fn rotate(image: &Image, landmarks: &LandmarkSet, degrees: f64) -> (Image, LandmarkSet) {
    let theta = degrees.to_radians();
    let (w, h) = (image.width(), image.height());
    let centre = [w as f64 / 2.0, h as f64 / 2.0];
    let off = centre_offset(theta, centre);
    let inv_off = centre_offset(-theta, centre);
    let mut out = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let src = rotate_point([x as f64 + 0.5, y as f64 + 0.5], -theta, inv_off);
            for c in 0..3 {
                out.set(c, x, y, image.sample_bilinear(c, src[0], src[1]));
            }
        }
    }
    let lc = [landmarks.width as f64 / 2.0, landmarks.height as f64 / 2.0];
    let loff = if lc == centre { off } else { centre_offset(theta, lc) };
    let points = landmarks.points.map(|p| rotate_point(p, theta, loff));
    (out, LandmarkSet::unchecked(points, landmarks.width, landmarks.height))
}

/// `exp(−(x² + y²) / (2 σx σy))` on the 9×9 grid centred at zero, before
/// normalization.
pub fn blur_kernel_raw() -> [[f64; BLUR_SIZE]; BLUR_SIZE] {
    let r = (BLUR_SIZE / 2) as i64;
    let mut k = [[0.0; BLUR_SIZE]; BLUR_SIZE];
    for (j, row) in k.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            let (x, y) = ((i as i64 - r) as f64, (j as i64 - r) as f64);
            *v = (-(x * x + y * y) / (2.0 * BLUR_SIGMA * BLUR_SIGMA)).exp();
        }
    }
    k
}

/// The blur kernel scaled to unit sum.
pub fn blur_kernel() -> [[f64; BLUR_SIZE]; BLUR_SIZE] {
    let mut k = blur_kernel_raw();
    let total: f64 = k.iter().flatten().sum();
    for v in k.iter_mut().flatten() {
        *v /= total;
    }
    k
}

/// 9×9 Gaussian blur with replicated borders.
pub fn gaussian_blur(image: &Image) -> Image {
    let k = blur_kernel();
    let r = (BLUR_SIZE / 2) as i64;
    let (w, h) = (image.width() as i64, image.height() as i64);
    let mut out = Image::new(image.width(), image.height());
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, row) in k.iter().enumerate() {
                    let sy = (y + j as i64 - r).clamp(0, h - 1) as usize;
                    for (i, kv) in row.iter().enumerate() {
                        let sx = (x + i as i64 - r).clamp(0, w - 1) as usize;
                        acc += kv * image.get(c, sx, sy);
                    }
                }
                out.set(c, x as usize, y as usize, acc);
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AugmentTag {
    Original,
    Hflip,
    /// Rotation in whole degrees.
    Rot(i32),
    Blur,
}

impl fmt::Display for AugmentTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentTag::Original => f.write_str("original"),
            AugmentTag::Hflip => f.write_str("hflip"),
            AugmentTag::Rot(d) => write!(f, "rot{d:+}"),
            AugmentTag::Blur => f.write_str("blur"),
        }
    }
}

impl FromStr for AugmentTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(AugmentTag::Original),
            "hflip" => Ok(AugmentTag::Hflip),
            "blur" => Ok(AugmentTag::Blur),
            _ => s
                .strip_prefix("rot")
                .filter(|d| d.starts_with(['+', '-']))
                .and_then(|d| d.parse().ok())
                .map(AugmentTag::Rot)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown augmentation tag `{s}`"))),
        }
    }
}

impl Serialize for AugmentTag {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AugmentTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub hflip: bool,
    /// Whole-degree rotation angles.
    pub rotations: Vec<i32>,
    pub blur: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip: true,
            rotations: vec![5, -5, 10, -10],
            blur: true,
        }
    }
}

/// One augmented copy of a sample.
#[derive(Clone, Debug)]
pub struct Augmented {
    pub tag: AugmentTag,
    pub image: Image,
    pub landmarks: LandmarkSet,
}

/// The original plus every enabled augmentation, minus copies whose
/// landmarks leave the frame. Dropped tags are returned alongside.
pub fn augment(image: &Image, landmarks: &LandmarkSet, cfg: &AugmentConfig) -> (Vec<Augmented>, Vec<AugmentTag>) {
    let mut all = vec![Augmented {
        tag: AugmentTag::Original,
        image: image.clone(),
        landmarks: landmarks.clone(),
    }];
    if cfg.hflip {
        let (image, landmarks) = hflip(image, landmarks);
        all.push(Augmented {
            tag: AugmentTag::Hflip,
            image,
            landmarks,
        });
    }
    for &d in &cfg.rotations {
        let (image, landmarks) = rotate(image, landmarks, d as f64);
        all.push(Augmented {
            tag: AugmentTag::Rot(d),
            image,
            landmarks,
        });
    }
    if cfg.blur {
        all.push(Augmented {
            tag: AugmentTag::Blur,
            image: gaussian_blur(image),
            landmarks: landmarks.clone(),
        });
    }
    let (kept, dropped): (Vec<_>, Vec<_>) = all.into_iter().partition(|a| a.landmarks.in_frame());
    (kept, dropped.into_iter().map(|a| a.tag).collect())
}
