//! Landmark prediction on images of any size: each image is resized to the
//! network input, and predictions are mapped back to its own frame.

use crate::error::Result;
use crate::image::Image;
use crate::landmarks::{LandmarkSet, NUM_LANDMARKS};
use crate::model::Model;
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Inference {
    /// Landmarks in the source image frame, clamped inside it.
    pub landmarks: LandmarkSet,
    /// The network input the prediction was made on.
    pub input: Image,
    /// `[12, h, w]` spatial probabilities, each map scaled to a maximum of 1.
    pub heat: Tensor,
}

/// Clamps `v` into `[0, extent)`.
pub fn clamp_into(v: f64, extent: usize) -> f64 {
    if v.is_nan() {
        return 0.0;
    }
    v.clamp(0.0, (extent as f64).next_down())
}

fn max_normalized(maps: &[f64], shape: Vec<usize>, plane: usize) -> Result<Tensor> {
    let mut data = maps.to_vec();
    for m in data.chunks_mut(plane) {
        let peak = m.iter().copied().fold(0.0, f64::max);
        if peak > 0.0 {
            m.iter_mut().for_each(|v| *v /= peak);
        }
    }
    Tensor::new(shape, data)
}

pub fn predict_images(model: &Model, store: &ParamStore, images: &[Image], size: usize, batch_size: usize) -> Result<Vec<Inference>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let inputs: Vec<Image> = chunk
            .iter()
            .map(|im| if im.width() == size && im.height() == size { im.clone() } else { im.resize(size, size) })
            .collect();
        let mut data = Vec::with_capacity(inputs.len() * 3 * size * size);
        for im in &inputs {
            data.extend_from_slice(im.data());
        }
        let batch = Tensor::new(vec![inputs.len(), 3, size, size], data)?;
        let pred = model.predict(store, &batch)?;
        let [_, k, h, w] = pred.probs.dims4("predict")?;
        let per = k * h * w;
        for (i, (src, input)) in chunk.iter().zip(inputs).enumerate() {
            let c = &pred.coords.data()[i * 2 * NUM_LANDMARKS..(i + 1) * 2 * NUM_LANDMARKS];
            let mut lm = LandmarkSet::from_normalized(c, src.width(), src.height())?;
            for p in lm.points.iter_mut() {
                *p = [clamp_into(p[0], src.width()), clamp_into(p[1], src.height())];
            }
            let heat = max_normalized(&pred.probs.data()[i * per..(i + 1) * per], vec![k, h, w], h * w)?;
            out.push(Inference { landmarks: lm, input, heat });
        }
    }
    Ok(out)
}
