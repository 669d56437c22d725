//! Minimal raster line chart for the cumulative error distribution.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::metrics::EvalReport;

const W: u32 = 480;
const H: u32 = 360;
const MARGIN: u32 = 40;

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if (0..W as i64).contains(&x) && (0..H as i64).contains(&y) {
            img.put_pixel(x as u32, y as u32, c);
        }
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

/// Draws fraction-of-samples against NME on `[0, threshold]` with ten
/// ticks per axis.
pub fn ced_plot(report: &EvalReport) -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let (x0, y0) = (MARGIN as i64, (H - MARGIN) as i64);
    let (pw, ph) = ((W - 2 * MARGIN) as f64, (H - 2 * MARGIN) as f64);
    let to_px = |t: f64, f: f64| -> (i64, i64) {
        (
            x0 + (t / report.threshold * pw).round() as i64,
            y0 - (f * ph).round() as i64,
        )
    };
    let grid = Rgb([225, 225, 225]);
    let axis = Rgb([0, 0, 0]);
    for i in 1..=10 {
        let f = i as f64 / 10.0;
        line(&mut img, to_px(0.0, f), to_px(report.threshold, f), grid);
        let t = report.threshold * f;
        line(&mut img, to_px(t, 0.0), to_px(t, 1.0), grid);
        let (tx, ty) = to_px(t, 0.0);
        line(&mut img, (tx, ty), (tx, ty + 4), axis);
        let (fx, fy) = to_px(0.0, f);
        line(&mut img, (fx - 4, fy), (fx, fy), axis);
    }
    line(&mut img, to_px(0.0, 0.0), to_px(report.threshold, 0.0), axis);
    line(&mut img, to_px(0.0, 0.0), to_px(0.0, 1.0), axis);
    let curve = Rgb([200, 30, 30]);
    for w in report.ced.windows(2) {
        let a = to_px(w[0][0], w[0][1]);
        let b = to_px(w[1][0], w[1][1]);
        for off in 0..2 {
            line(&mut img, (a.0, a.1 - off), (b.0, b.1 - off), curve);
        }
    }
    img
}

pub fn save_ced_plot(report: &EvalReport, path: &Path) -> Result<()> {
    ced_plot(report).save(path)?;
    Ok(())
}
