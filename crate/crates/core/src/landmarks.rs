//! The 12-point eye landmark subset of the 68-point face markup.
//!
//! Local index `i` corresponds to 1-based 68-point index `37 + i`:
//! 0–5 trace the image-left eye starting at its outer corner, 6–11 the
//! image-right eye starting at its inner corner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_LANDMARKS: usize = 12;

/// First eye landmark in the 68-point scheme, 1-based.
pub const FIRST_EYE_INDEX: usize = 37;

/// Outer eye corners (68-point indices 37 and 46), used for inter-ocular distance.
pub const OUTER_CORNERS: (usize, usize) = (0, 9);

/// Mirror-symmetric partner of each local index under a horizontal flip.
pub const FLIP_PERMUTATION: [usize; NUM_LANDMARKS] = [9, 8, 7, 6, 11, 10, 3, 2, 1, 0, 5, 4];

pub type Point = [f64; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: [Point; NUM_LANDMARKS],
    pub width: usize,
    pub height: usize,
}

impl LandmarkSet {
    /// Builds a set, rejecting points outside `[0, width) × [0, height)`.
    pub fn new(points: [Point; NUM_LANDMARKS], width: usize, height: usize) -> Result<Self> {
        let s = Self::unchecked(points, width, height);
        if let Some(i) = s.first_out_of_frame() {
            return Err(Error::InvalidArgument(format!(
                "landmark {i} at ({}, {}) lies outside the {width}x{height} frame",
                s.points[i][0], s.points[i][1]
            )));
        }
        Ok(s)
    }

    pub fn unchecked(points: [Point; NUM_LANDMARKS], width: usize, height: usize) -> Self {
        Self { points, width, height }
    }

    pub fn first_out_of_frame(&self) -> Option<usize> {
        self.points.iter().position(|p| {
            !(p[0].is_finite()
                && p[1].is_finite()
                && p[0] >= 0.0
                && p[1] >= 0.0
                && p[0] < self.width as f64
                && p[1] < self.height as f64)
        })
    }

    pub fn in_frame(&self) -> bool {
        self.first_out_of_frame().is_none()
    }

    /// True if any point is closer than `margin` pixels to the frame border.
    pub fn near_border(&self, margin: f64) -> bool {
        self.points.iter().any(|p| {
            p[0] < margin
                || p[1] < margin
                || p[0] > self.width as f64 - 1.0 - margin
                || p[1] > self.height as f64 - 1.0 - margin
        })
    }

    pub fn inter_ocular_distance(&self) -> f64 {
        let (a, b) = OUTER_CORNERS;
        distance(self.points[a], self.points[b])
    }

    /// Coordinates divided by the frame extent.
    pub fn normalized(&self) -> [Point; NUM_LANDMARKS] {
        self.points
            .map(|p| [p[0] / self.width as f64, p[1] / self.height as f64])
    }

    pub fn from_normalized(coords: &[f64], width: usize, height: usize) -> Result<Self> {
        if coords.len() != 2 * NUM_LANDMARKS {
            return Err(Error::InvalidArgument(format!(
                "expected {} coordinates, got {}",
                2 * NUM_LANDMARKS,
                coords.len()
            )));
        }
        let mut points = [[0.0; 2]; NUM_LANDMARKS];
        for (i, p) in points.iter_mut().enumerate() {
            *p = [coords[2 * i] * width as f64, coords[2 * i + 1] * height as f64];
        }
        Ok(Self::unchecked(points, width, height))
    }
}

pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
