//! Planar RGB image with `f64` samples in `[0, 1]`.
//!
//! Pixel `(i, j)` covers the square `[i, i+1) × [j, j+1)`, so its centre sits
//! at `(i + 0.5, j + 0.5)` in continuous coordinates. Landmarks use the same
//! continuous frame.

use std::path::Path;

use image::RgbImage;

use crate::error::{invalid_shape, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut im = Self::new(width, height);
        for c in 0..3 {
            im.plane_mut(c).fill(rgb[c]);
        }
        im
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn luminance(&self, x: usize, y: usize) -> f64 {
        0.299 * self.get(0, x, y) + 0.587 * self.get(1, x, y) + 0.114 * self.get(2, x, y)
    }

    /// Bilinear sample at a continuous coordinate; zero outside the frame.
    pub fn sample_bilinear(&self, c: usize, x: f64, y: f64) -> f64 {
        self.bilinear(c, x, y, false)
    }

    /// Bilinear sample with the border pixels extended outwards.
    pub fn sample_bilinear_clamped(&self, c: usize, x: f64, y: f64) -> f64 {
        self.bilinear(c, x, y, true)
    }

    /// Bilinear resampling to `width × height` with replicated borders.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        let (sx, sy) = (self.width as f64 / width as f64, self.height as f64 / height as f64);
        let mut out = Image::new(width, height);
        for c in 0..3 {
            for y in 0..height {
                let src_y = (y as f64 + 0.5) * sy;
                for x in 0..width {
                    out.set(c, x, y, self.bilinear(c, (x as f64 + 0.5) * sx, src_y, true));
                }
            }
        }
        out
    }

    fn bilinear(&self, c: usize, x: f64, y: f64, clamp: bool) -> f64 {
        // continuous -> pixel-centre index space
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let (wm, hm) = (self.width as f64 - 1.0, self.height as f64 - 1.0);
        let at = |xi: f64, yi: f64| -> f64 {
            if clamp {
                self.get(c, xi.clamp(0.0, wm) as usize, yi.clamp(0.0, hm) as usize)
            } else if xi < 0.0 || yi < 0.0 || xi > wm || yi > hm {
                0.0
            } else {
                self.get(c, xi as usize, yi as usize)
            }
        };
        let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1.0, y0) * tx;
        let bottom = at(x0, y0 + 1.0) * (1.0 - tx) + at(x0 + 1.0, y0 + 1.0) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Self::new(w, h);
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, x as usize, y as usize, p.0[c] as f64 / 255.0);
            }
        }
        out
    }

    pub fn to_rgb(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let q = |c| (self.get(c, x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
            image::Rgb([q(0), q(1), q(2)])
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_rgb(&image::open(path)?.to_rgb8()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_rgb().save(path)?;
        Ok(())
    }

    /// `[3, H, W]` tensor of the samples.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![3, self.height, self.width], self.data.clone()).expect("image extent")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            &[3, h, w] => Ok(Self {
                width: w,
                height: h,
                data: t.data().to_vec(),
            }),
            s => Err(invalid_shape("image", format!("expected [3, H, W], got {s:?}"))),
        }
    }
}
