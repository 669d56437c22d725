//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates the forward pass, so it is
//! independent of every backward kernel it validates.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor for the relative error, so that near-zero
    /// gradients are compared in absolute terms.
    pub floor: f64,
    /// Check at most this many coordinates per input tensor; `None` checks all.
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_coords_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` where the worst error occurred.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates whose stencil crossed a relu/pool/piecewise boundary.
    pub skipped_kinks: usize,
}

/// Compares analytic gradients of `build` against central differences.
///
/// `build` receives a fresh graph and one input leaf per tensor in `inputs`
/// and must return a scalar node.
pub fn check_gradients<F>(inputs: &[Tensor], build: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok((g.value(out).item()?, g.kink_signature()))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let base_sig = g.kink_signature();
    let grads = g.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        let coords: Vec<usize> = match opts.max_coords_per_input {
            Some(k) if k < input.len() => {
                let mut c = sample(&mut rng, input.len(), k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..input.len()).collect(),
        };
        for j in coords {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + opts.step;
            let (fp, sp) = eval(&work)?;
            work[i].data_mut()[j] = orig - opts.step;
            let (fm, sm) = eval(&work)?;
            work[i].data_mut()[j] = orig;
            if sp != base_sig || sm != base_sig {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * opts.step);
            let a = analytic.data()[j];
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

/// A fixed random linear functional of a node, reduced to a scalar. Used to
/// turn tensor-valued outputs into generic scalar losses for checking.
pub fn random_projection(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let shape = g.value(v).shape().to_vec();
    let w = Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let w = g.constant(w);
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}
