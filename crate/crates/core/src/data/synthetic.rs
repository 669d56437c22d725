//! Procedurally drawn faces with exact 68-point ground truth.
//!
//! Faces are laid out in a canonical frame (unit ≈ image extent, origin at
//! the face centre) and mapped to pixels by a random scale, tilt and shift.
//! Eye landmarks sit on the eyelid ellipse at parameter angles
//! `π, 2π/3, π/3, 0, −π/3, −2π/3`, which yields the 68-point ordering for
//! both eyes.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pts::{select_eyes, write_pts, FaceBox, PtsAnnotation, NUM_POINTS};
use crate::error::Result;
use crate::image::Image;
use crate::landmarks::{LandmarkSet, Point};
use crate::train::Sample;

const SUPERSAMPLE: usize = 3;

#[derive(Clone, Debug)]
struct Eye {
    centre: Point,
    a: f64,
    b: f64,
    iris: Point,
    iris_r: f64,
}

impl Eye {
    fn contour(&self, t: f64) -> Point {
        [self.centre[0] + self.a * t.cos(), self.centre[1] - self.b * t.sin()]
    }

    /// Normalized radial coordinate; `< 1` inside the eyelids.
    fn radial(&self, p: Point) -> f64 {
        let dx = (p[0] - self.centre[0]) / self.a;
        let dy = (p[1] - self.centre[1]) / self.b;
        (dx * dx + dy * dy).sqrt()
    }
}

#[derive(Clone, Debug)]
struct Face {
    // canonical -> pixel
    centre: Point,
    scale: f64,
    cos: f64,
    sin: f64,
    face_r: [f64; 2],
    eyes: [Eye; 2],
    mouth: (Point, f64, f64),
    skin: [f64; 3],
    background: [[f64; 3]; 2],
    iris_colour: [f64; 3],
    brow: f64,
}

impl Face {
    fn random(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Self {
        let ext = w.min(h) as f64;
        let scale = ext * rng.gen_range(0.85..1.05);
        let tilt = rng.gen_range(-8.0f64..8.0).to_radians();
        let centre = [
            w as f64 / 2.0 + ext * rng.gen_range(-0.05..0.05),
            h as f64 / 2.0 + ext * rng.gen_range(-0.05..0.05),
        ];
        let eye_dx = rng.gen_range(0.17..0.21);
        let eye_y = rng.gen_range(-0.1..-0.06);
        let eye = |side: f64, rng: &mut ChaCha8Rng| {
            let a = rng.gen_range(0.085..0.11);
            let b = rng.gen_range(0.03..0.055);
            let c = [side * eye_dx, eye_y + rng.gen_range(-0.008..0.008)];
            let iris_r = b * rng.gen_range(0.8..1.1);
            let iris = [c[0] + a * rng.gen_range(-0.35..0.35), c[1] + b * rng.gen_range(-0.2..0.2)];
            Eye {
                centre: c,
                a,
                b,
                iris,
                iris_r,
            }
        };
        let left = eye(-1.0, rng);
        let right = eye(1.0, rng);
        let tone = rng.gen_range(0.35..0.9);
        let bg = |rng: &mut ChaCha8Rng| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let background = [bg(rng), bg(rng)];
        Self {
            centre,
            scale,
            cos: tilt.cos(),
            sin: tilt.sin(),
            face_r: [rng.gen_range(0.36..0.44), rng.gen_range(0.46..0.54)],
            eyes: [left, right],
            mouth: ([0.0, rng.gen_range(0.22..0.28)], rng.gen_range(0.1..0.15), rng.gen_range(0.03..0.06)),
            skin: [tone, tone * rng.gen_range(0.7..0.85), tone * rng.gen_range(0.55..0.7)],
            background,
            iris_colour: [rng.gen_range(0.05..0.4), rng.gen_range(0.05..0.35), rng.gen_range(0.05..0.3)],
            brow: rng.gen_range(-0.19..-0.15),
        }
    }

    /// Upright, horizontally centred, with the right eye mirroring the left.
    fn symmetrize(&mut self, w: usize) {
        self.cos = 1.0;
        self.sin = 0.0;
        self.centre[0] = w as f64 / 2.0;
        self.background[1] = self.background[0];
        let l = &self.eyes[0];
        self.eyes[1] = Eye {
            centre: [-l.centre[0], l.centre[1]],
            iris: [-l.iris[0], l.iris[1]],
            ..l.clone()
        };
    }

    fn to_pixel(&self, p: Point) -> Point {
        let (x, y) = (p[0] * self.scale, p[1] * self.scale);
        [
            self.centre[0] + self.cos * x - self.sin * y,
            self.centre[1] + self.sin * x + self.cos * y,
        ]
    }

    fn to_canonical(&self, q: Point) -> Point {
        let (x, y) = (q[0] - self.centre[0], q[1] - self.centre[1]);
        [
            (self.cos * x + self.sin * y) / self.scale,
            (-self.sin * x + self.cos * y) / self.scale,
        ]
    }

    fn brow_points(&self, side: f64) -> [Point; 5] {
        let xs: [f64; 5] = [0.32, 0.26, 0.2, 0.14, 0.08];
        let mut out = [[0.0; 2]; 5];
        for (i, x) in xs.iter().enumerate() {
            let arch = 0.03 * (1.0 - ((x - 0.2) / 0.12).powi(2));
            let x = if side < 0.0 { -x } else { xs[4 - i] };
            out[i] = [x, self.brow - arch];
        }
        out
    }

    /// Canonical-frame 68-point markup.
    fn markup(&self) -> [Point; NUM_POINTS] {
        let mut p = [[0.0; 2]; NUM_POINTS];
        let [rx, ry] = self.face_r;
        for (k, q) in p[0..17].iter_mut().enumerate() {
            let t = k as f64 * PI / 16.0;
            *q = [-rx * t.cos(), 0.02 + ry * t.sin()];
        }
        p[17..22].copy_from_slice(&self.brow_points(-1.0));
        p[22..27].copy_from_slice(&self.brow_points(1.0));
        for k in 0..4 {
            p[27 + k] = [0.0, -0.06 + 0.05 * k as f64];
        }
        for k in 0..5 {
            p[31 + k] = [-0.05 + 0.025 * k as f64, 0.12 + 0.01 * (1.0 - (k as f64 - 2.0).abs() / 2.0)];
        }
        let ts = [PI, 2.0 * PI / 3.0, PI / 3.0, 0.0, -PI / 3.0, -2.0 * PI / 3.0];
        for (e, eye) in self.eyes.iter().enumerate() {
            for (k, t) in ts.iter().enumerate() {
                p[36 + 6 * e + k] = eye.contour(*t);
            }
        }
        let (mc, ma, mb) = self.mouth;
        for k in 0..12 {
            let t = PI - k as f64 * 2.0 * PI / 12.0;
            p[48 + k] = [mc[0] + ma * t.cos(), mc[1] - mb * t.sin()];
        }
        for k in 0..8 {
            let t = PI - k as f64 * 2.0 * PI / 8.0;
            p[60 + k] = [mc[0] + 0.7 * ma * t.cos(), mc[1] - 0.4 * mb * t.sin()];
        }
        p
    }

    fn colour(&self, q: Point, w: f64) -> [f64; 3] {
        let c = self.to_canonical(q);
        let bg_t = (q[0] / w).clamp(0.0, 1.0);
        let mut col = lerp(self.background[0], self.background[1], bg_t);
        let [rx, ry] = self.face_r;
        if (c[0] / rx).powi(2) + ((c[1] - 0.02) / ry).powi(2) < 1.0 {
            col = self.skin;
        } else {
            return col;
        }
        let dark = [self.skin[0] * 0.35, self.skin[1] * 0.3, self.skin[2] * 0.3];
        for side in [-1.0, 1.0] {
            let b = self.brow_points(side);
            if b.windows(2).any(|s| segment_distance(c, s[0], s[1]) < 0.014) {
                col = dark;
            }
        }
        if segment_distance(c, [0.0, -0.02], [0.0, 0.11]) < 0.008 {
            col = lerp(self.skin, dark, 0.4);
        }
        let (mc, ma, mb) = self.mouth;
        if ((c[0] - mc[0]) / ma).powi(2) + ((c[1] - mc[1]) / mb).powi(2) < 1.0 {
            col = [0.6 * self.skin[0] + 0.25, 0.35 * self.skin[1], 0.35 * self.skin[2]];
        }
        for eye in &self.eyes {
            let r = eye.radial(c);
            if r < 1.0 {
                col = [0.93, 0.92, 0.9];
                let d = ((c[0] - eye.iris[0]).powi(2) + (c[1] - eye.iris[1]).powi(2)).sqrt();
                if d < eye.iris_r {
                    col = if d < 0.45 * eye.iris_r { [0.02, 0.02, 0.02] } else { self.iris_colour };
                }
            }
            if (r - 1.0).abs() < 0.09 {
                col = lerp(col, [0.08, 0.05, 0.05], 0.8);
            }
        }
        col
    }
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

/// A rendered face and its pixel-space 68-point markup.
#[derive(Clone, Debug)]
pub struct SyntheticFace {
    pub image: Image,
    pub annotation: PtsAnnotation,
}

impl SyntheticFace {
    pub fn eyes(&self) -> LandmarkSet {
        select_eyes(&self.annotation, self.image.width(), self.image.height())
    }
}

/// Renders face number `index` of the stream identified by `seed`.
pub fn render_face(width: usize, height: usize, seed: u64, index: u64) -> SyntheticFace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let face = Face::random(width, height, &mut rng);
    render(&face, width, height, &mut rng)
}

/// As [`render_face`], but upright and mirror-symmetric about the vertical
/// centre line (up to pixel noise).
pub fn render_symmetric_face(width: usize, height: usize, seed: u64, index: u64) -> SyntheticFace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut face = Face::random(width, height, &mut rng);
    face.symmetrize(width);
    render(&face, width, height, &mut rng)
}

fn render(face: &Face, width: usize, height: usize, rng: &mut ChaCha8Rng) -> SyntheticFace {
    let mut image = Image::new(width, height);
    let ss = SUPERSAMPLE as f64;
    for y in 0..height {
        for x in 0..width {
            let mut acc = [0.0; 3];
            for v in 0..SUPERSAMPLE {
                for u in 0..SUPERSAMPLE {
                    let q = [x as f64 + (u as f64 + 0.5) / ss, y as f64 + (v as f64 + 0.5) / ss];
                    let c = face.colour(q, width as f64);
                    for i in 0..3 {
                        acc[i] += c[i];
                    }
                }
            }
            for (i, a) in acc.iter().enumerate() {
                let noise = rng.gen_range(-0.03..0.03);
                image.set(i, x, y, (a / (ss * ss) + noise).clamp(0.0, 1.0));
            }
        }
    }
    let points = face.markup().map(|p| face.to_pixel(p));
    SyntheticFace {
        image,
        annotation: PtsAnnotation {
            version: "1".into(),
            points,
        },
    }
}

/// In-memory training samples of `size × size` faces.
pub fn samples(n: usize, size: usize, seed: u64) -> Result<Vec<Sample>> {
    (0..n as u64)
        .map(|i| {
            let f = render_face(size, size, seed, i);
            Ok(Sample {
                landmarks: LandmarkSet::new(f.eyes().points, size, size)?,
                image: f.image.to_tensor(),
            })
        })
        .collect()
}

/// Writes `n` faces as `face_NNN.png` with `.pts` and `.box` sidecars. The
/// box is a square around the markup with a random margin, clipped to the
/// image.
pub fn write_fixture(dir: &Path, n: usize, size: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb0c5);
    for i in 0..n {
        let f = render_face(size, size, seed, i as u64);
        let stem = dir.join(format!("face_{i:03}"));
        f.image.save(&stem.with_extension("png"))?;
        fs::write(stem.with_extension("pts"), write_pts(&f.annotation))?;
        let pts = &f.annotation.points;
        let (lo_x, hi_x) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p[0]), b.max(p[0])));
        let (lo_y, hi_y) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p[1]), b.max(p[1])));
        let side = (hi_x - lo_x).max(hi_y - lo_y) * rng.gen_range(1.05..1.2);
        let cx = (lo_x + hi_x) / 2.0;
        let cy = (lo_y + hi_y) / 2.0;
        let x0 = (cx - side / 2.0).floor().max(0.0);
        let y0 = (cy - side / 2.0).floor().max(0.0);
        let b = FaceBox {
            x: x0,
            y: y0,
            w: (cx + side / 2.0).ceil().min(size as f64) - x0,
            h: (cy + side / 2.0).ceil().min(size as f64) - y0,
        };
        fs::write(stem.with_extension("box"), b.to_sidecar())?;
    }
    Ok(())
}
