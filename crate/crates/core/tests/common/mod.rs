#![allow(dead_code)]

pub mod oracles;

use eyemark::autodiff::gradcheck::{check_gradients, random_projection, GradCheckOptions, GradCheckReport};
use eyemark::autodiff::{Graph, Var};
use eyemark::nn::{Mode, ParamStore, Session, Specs};
use eyemark::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Initializes `specs` and perturbs scales and shifts away from 1 and 0 so
/// that every parameter is generic.
pub fn generic_store(specs: &Specs, seed: u64) -> ParamStore {
    let mut store = ParamStore::initialize(specs, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let names: Vec<String> = store.params().keys().cloned().collect();
    for n in names {
        if n.ends_with(".scale") || n.ends_with(".shift") {
            for v in store.get_mut(&n).unwrap().data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
    }
    store
}

/// Checks gradients with respect to `inputs` and every parameter of
/// `store`, through a random projection of `forward`'s output.
pub fn check_block<F>(
    store: &ParamStore,
    inputs: Vec<Tensor>,
    mode: Mode,
    batchnorm: bool,
    seed: u64,
    opts: &GradCheckOptions,
    forward: F,
) -> GradCheckReport
where
    F: Fn(&mut Session, &[Var]) -> Result<Var>,
{
    let names: Vec<String> = store.params().keys().cloned().collect();
    let k = inputs.len();
    let mut all = inputs;
    all.extend(names.iter().map(|n| store.get(n).unwrap().clone()));
    check_gradients(
        &all,
        |g: &mut Graph, vars: &[Var]| {
            let mut sess = Session::new(g, store, mode, batchnorm);
            for (n, v) in names.iter().zip(&vars[k..]) {
                sess.bind(n.clone(), *v);
            }
            let out = forward(&mut sess, &vars[..k])?;
            random_projection(&mut *sess.graph, out, seed)
        },
        opts,
    )
    .unwrap()
}

/// Runs `forward` once and returns the gradient of a random projection
/// with respect to every bound parameter.
pub fn param_gradients<F>(store: &ParamStore, inputs: Vec<Tensor>, batchnorm: bool, seed: u64, forward: F) -> Vec<(String, Tensor)>
where
    F: Fn(&mut Session, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.into_iter().map(|t| g.constant(t)).collect();
    let mut sess = Session::new(&mut g, store, Mode::Train, batchnorm);
    let out = forward(&mut sess, &vars).unwrap();
    let loss = random_projection(&mut *sess.graph, out, seed).unwrap();
    let bound = sess.bound().clone();
    let grads = g.backward(loss).unwrap();
    let mut out: Vec<(String, Tensor)> = bound
        .into_iter()
        .map(|(n, v)| {
            let t = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(store.get(&n).unwrap().shape().to_vec()));
            (n, t)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}
