//! 68-point `.pts` annotations and `.box` face-rectangle sidecars.
//!
//! ```text
//! version: 1
//! n_points: 68
//! {
//! x y
//! ...
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::{LandmarkSet, Point, FIRST_EYE_INDEX, NUM_LANDMARKS};

pub const NUM_POINTS: usize = 68;

#[derive(Clone, Debug, PartialEq)]
pub struct PtsAnnotation {
    pub version: String,
    pub points: [Point; NUM_POINTS],
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses `.pts` text; `path` only labels errors.
pub fn parse_pts(text: &str, path: &Path) -> Result<PtsAnnotation> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| parse_err(path, text.lines().count().max(1), format!("unexpected end of file, expected {what}")))
    };

    let (ln, l) = next("version header")?;
    let version = l
        .strip_prefix("version:")
        .ok_or_else(|| parse_err(path, ln, format!("expected `version:` header, found `{l}`")))?
        .trim()
        .to_string();
    let (ln, l) = next("n_points header")?;
    let count: usize = l
        .strip_prefix("n_points:")
        .ok_or_else(|| parse_err(path, ln, format!("expected `n_points:` header, found `{l}`")))?
        .trim()
        .parse()
        .map_err(|_| parse_err(path, ln, format!("invalid point count in `{l}`")))?;
    if count != NUM_POINTS {
        return Err(parse_err(path, ln, format!("expected {NUM_POINTS} points, header declares {count}")));
    }
    let (ln, l) = next("`{`")?;
    if l != "{" {
        return Err(parse_err(path, ln, format!("expected `{{`, found `{l}`")));
    }
    let mut points = Vec::with_capacity(NUM_POINTS);
    loop {
        let (ln, l) = next("`}`")?;
        if l == "}" {
            if points.len() != count {
                return Err(parse_err(
                    path,
                    ln,
                    format!("header declares {count} points, found {}", points.len()),
                ));
            }
            break;
        }
        let mut tok = l.split_whitespace();
        let mut coord = || -> Result<f64> {
            let t = tok.next().ok_or_else(|| parse_err(path, ln, "expected two coordinates"))?;
            let v: f64 = t
                .parse()
                .map_err(|_| parse_err(path, ln, format!("non-numeric coordinate `{t}`")))?;
            if !v.is_finite() {
                return Err(parse_err(path, ln, format!("non-finite coordinate `{t}`")));
            }
            Ok(v)
        };
        let p = [coord()?, coord()?];
        if tok.next().is_some() {
            return Err(parse_err(path, ln, "expected exactly two coordinates"));
        }
        if points.len() == count {
            return Err(parse_err(path, ln, format!("more than the declared {count} points")));
        }
        points.push(p);
    }
    if let Some((ln, l)) = lines.next() {
        return Err(parse_err(path, ln, format!("unexpected content after `}}`: `{l}`")));
    }
    Ok(PtsAnnotation {
        version,
        points: points.try_into().expect("count checked"),
    })
}

pub fn read_pts(path: &Path) -> Result<PtsAnnotation> {
    parse_pts(&fs::read_to_string(path)?, path)
}

/// Serializes with six decimal places.
pub fn write_pts(ann: &PtsAnnotation) -> String {
    let mut s = format!("version: {}\nn_points: {}\n{{\n", ann.version, NUM_POINTS);
    for p in &ann.points {
        s.push_str(&format!("{:.6} {:.6}\n", p[0], p[1]));
    }
    s.push_str("}\n");
    s
}

/// 68-point indices 37–48 become local indices 0–11. The set is not
/// frame-checked.
pub fn select_eyes(ann: &PtsAnnotation, width: usize, height: usize) -> LandmarkSet {
    let first = FIRST_EYE_INDEX - 1;
    let mut pts = [[0.0; 2]; NUM_LANDMARKS];
    pts.copy_from_slice(&ann.points[first..first + NUM_LANDMARKS]);
    LandmarkSet::unchecked(pts, width, height)
}

/// Axis-aligned face rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl FaceBox {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            w: width as f64,
            h: height as f64,
        }
    }

    /// Parses the sidecar text `x y w h`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let v: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(path, 1, format!("non-numeric box value `{t}`"))))
            .collect::<Result<_>>()?;
        match v[..] {
            [x, y, w, h] if v.iter().all(|t| t.is_finite()) && w > 0.0 && h > 0.0 => Ok(Self { x, y, w, h }),
            _ => Err(parse_err(path, 1, "expected `x y w h` with positive extent")),
        }
    }

    pub fn to_sidecar(&self) -> String {
        format!("{} {} {} {}\n", self.x, self.y, self.w, self.h)
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x && p[1] >= self.y && p[0] < self.x + self.w && p[1] < self.y + self.h
    }
}

pub fn read_box(path: &Path) -> Result<FaceBox> {
    FaceBox::parse(&fs::read_to_string(path)?, path)
}

/// `.pts` and `.box` paths next to an image.
pub fn sidecars(image: &Path) -> (PathBuf, PathBuf) {
    (image.with_extension("pts"), image.with_extension("box"))
}
