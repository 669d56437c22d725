//! Landmark ↔ heatmap conversion.
//!
//! Ground truth is one unnormalized Gaussian per landmark (peak 1.0 at the
//! landmark's heatmap cell). Decoding is a soft-argmax: a spatial softmax
//! followed by the expectation of the column and row index, each divided by
//! the map extent, so decoded coordinates lie in `[0, 1)`.

use std::path::Path;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::landmarks::{LandmarkSet, NUM_LANDMARKS};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    /// `[12, Hm, Wm]`.
    pub maps: Tensor,
}

impl HeatmapStack {
    pub fn resolution(&self) -> (usize, usize) {
        (self.maps.shape()[1], self.maps.shape()[2])
    }
}

/// Landmark position in heatmap cells, rounded to the nearest cell.
pub fn landmark_cell(p: [f64; 2], frame: (usize, usize), res: (usize, usize)) -> (usize, usize) {
    let (w, h) = frame;
    let (hm, wm) = res;
    let cx = (p[0] * wm as f64 / w as f64).round().clamp(0.0, (wm - 1) as f64);
    let cy = (p[1] * hm as f64 / h as f64).round().clamp(0.0, (hm - 1) as f64);
    (cx as usize, cy as usize)
}

/// Gaussian ground-truth maps; `sigma` is in heatmap cells.
pub fn encode_gt(landmarks: &LandmarkSet, hm: usize, wm: usize, sigma: f64) -> Result<HeatmapStack> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if hm == 0 || wm == 0 {
        return Err(Error::InvalidArgument("heatmap resolution must be nonzero".into()));
    }
    if let Some(i) = landmarks.first_out_of_frame() {
        return Err(Error::InvalidArgument(format!("landmark {i} outside frame")));
    }
    let frame = (landmarks.width, landmarks.height);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut maps = Tensor::zeros(vec![NUM_LANDMARKS, hm, wm]);
    for (k, p) in landmarks.points.iter().enumerate() {
        let (cx, cy) = landmark_cell(*p, frame, (hm, wm));
        let slice = &mut maps.data_mut()[k * hm * wm..(k + 1) * hm * wm];
        for y in 0..hm {
            let dy = y as f64 - cy as f64;
            for x in 0..wm {
                let dx = x as f64 - cx as f64;
                slice[y * wm + x] = (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    Ok(HeatmapStack { maps })
}

/// `[H·W, 2]` table of `(x / W, y / H)` per cell in row-major order.
fn coordinate_grid(h: usize, w: usize) -> Tensor {
    let mut t = Tensor::zeros(vec![h * w, 2]);
    let d = t.data_mut();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            d[2 * i] = x as f64 / w as f64;
            d[2 * i + 1] = y as f64 / h as f64;
        }
    }
    t
}

/// Soft-argmax on the graph: `[N, K, H, W]` logits → `[N, K, 2]` coordinates.
pub fn soft_argmax(g: &mut Graph, logits: Var) -> Result<Var> {
    let (p, _) = soft_argmax_with_probs(g, logits)?;
    Ok(p)
}

/// As [`soft_argmax`], also returning the spatial probability maps.
pub fn soft_argmax_with_probs(g: &mut Graph, logits: Var) -> Result<(Var, Var)> {
    let [n, k, h, w] = g.value(logits).dims4("soft_argmax")?;
    let probs = g.spatial_softmax(logits)?;
    let flat = g.reshape(probs, vec![n * k, h * w])?;
    let grid = g.constant(coordinate_grid(h, w));
    let coords = g.matmul(flat, grid)?;
    Ok((g.reshape(coords, vec![n, k, 2])?, probs))
}

/// Decodes a logits tensor without recording gradients.
pub fn soft_argmax_decode(logits: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let c = soft_argmax(&mut g, l)?;
    Ok(g.value(c).clone())
}

/// Decodes `logit_scale · maps` for a `[12, Hm, Wm]` stack into pixel
/// coordinates of a `width × height` frame.
pub fn decode_stack(stack: &HeatmapStack, logit_scale: f64, width: usize, height: usize) -> Result<LandmarkSet> {
    let (hm, wm) = stack.resolution();
    let mut logits = stack.maps.reshape(vec![1, NUM_LANDMARKS, hm, wm])?;
    for v in logits.data_mut() {
        *v *= logit_scale;
    }
    let coords = soft_argmax_decode(&logits)?;
    LandmarkSet::from_normalized(coords.data(), width, height)
}

fn hot(h: f64) -> [f64; 3] {
    [1.0, h, h * h]
}

/// Blends the per-pixel maximum over all maps onto a grayscale copy of
/// `image`. Maps are `[K, Hm, Wm]` with values in `[0, 1]` and are sampled
/// nearest-neighbour at image resolution.
pub fn overlay(image: &Image, maps: &Tensor) -> Result<Image> {
    let (k, hm, wm) = match maps.shape() {
        &[k, hm, wm] => (k, hm, wm),
        s => {
            return Err(Error::InvalidShape {
                op: "overlay",
                detail: format!("expected [K, Hm, Wm], got {s:?}"),
            })
        }
    };
    let (w, h) = (image.width(), image.height());
    let mut out = Image::new(w, h);
    for y in 0..h {
        let my = (y * hm / h).min(hm - 1);
        for x in 0..w {
            let mx = (x * wm / w).min(wm - 1);
            let heat = (0..k)
                .map(|i| maps.data()[(i * hm + my) * wm + mx])
                .fold(0.0, f64::max)
                .clamp(0.0, 1.0);
            let gray = image.luminance(x, y);
            let col = hot(heat);
            for c in 0..3 {
                out.set(c, x, y, gray * (1.0 - heat) + col[c] * heat);
            }
        }
    }
    Ok(out)
}

/// Writes [`overlay`] as an 8-bit RGB PNG.
pub fn render_overlay(image: &Image, maps: &Tensor, out_path: &Path) -> Result<()> {
    overlay(image, maps)?.save(out_path)
}
