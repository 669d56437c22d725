//! Named parameters, their initialization, and the per-forward session that
//! binds them onto an autodiff graph.

pub mod blocks;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BatchStats, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

/// Weight kept on the old running statistic per training step.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±1/√fan_in`.
    Uniform { fan_in: usize },
    Ones,
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Buffers are persisted but never receive gradients.
    pub buffer: bool,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Collects parameter declarations from blocks.
#[derive(Clone, Debug, Default)]
pub struct Specs {
    pub batchnorm: bool,
    pub list: Vec<ParamSpec>,
}

impl Specs {
    pub fn new(batchnorm: bool) -> Self {
        Self {
            batchnorm,
            list: Vec::new(),
        }
    }

    fn push(&mut self, name: String, shape: Vec<usize>, init: Init, buffer: bool) {
        self.list.push(ParamSpec {
            name,
            shape,
            init,
            buffer,
        });
    }

    /// `[cout, cin, k, k]` kernel at `{prefix}.kernel`.
    pub fn kernel(&mut self, prefix: &str, cout: usize, cin: usize, k: usize) {
        let fan_in = cin * k * k;
        self.push(format!("{prefix}.kernel"), vec![cout, cin, k, k], Init::Uniform { fan_in }, false);
    }

    pub fn depthwise(&mut self, prefix: &str, c: usize, k: usize) {
        self.push(format!("{prefix}.kernel"), vec![c, 1, k, k], Init::Uniform { fan_in: k * k }, false);
    }

    /// Per-channel scale and shift, plus running statistics under batchnorm.
    pub fn norm(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}.scale"), vec![c], Init::Ones, false);
        self.push(format!("{prefix}.shift"), vec![c], Init::Zeros, false);
        if self.batchnorm {
            self.push(format!("{prefix}.running_mean"), vec![c], Init::Zeros, true);
            self.push(format!("{prefix}.running_var"), vec![c], Init::Ones, true);
        }
    }

    /// Number of learnable scalars (buffers excluded).
    pub fn param_count(&self) -> usize {
        self.list.iter().filter(|s| !s.buffer).map(ParamSpec::numel).sum()
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Each parameter draws from its own stream keyed by `(seed, name)`, so
/// adding or removing a block leaves every other initialization unchanged.
fn init_tensor(spec: &ParamSpec, seed: u64) -> Tensor {
    match spec.init {
        Init::Ones => Tensor::ones(spec.shape.clone()),
        Init::Zeros => Tensor::zeros(spec.shape.clone()),
        Init::Uniform { fan_in } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&spec.name));
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            Tensor::from_fn(spec.shape.clone(), |_| rng.gen_range(-bound..bound))
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn initialize(specs: &Specs, seed: u64) -> Result<Self> {
        let mut store = Self::default();
        for spec in &specs.list {
            let t = init_tensor(spec, seed);
            let slot = if spec.buffer { &mut store.buffers } else { &mut store.params };
            if slot.insert(spec.name.clone(), t).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate parameter {}", spec.name)));
            }
        }
        Ok(store)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name).ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params.get_mut(name).ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers.get(name).ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.buffers.get_mut(name).ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn insert_param(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor) {
        self.buffers.insert(name.into(), t);
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor> {
        &self.buffers
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Rejects stores that do not hold exactly the declared entries.
    pub fn check_against(&self, specs: &Specs) -> Result<()> {
        let (mut np, mut nb) = (0, 0);
        for spec in &specs.list {
            let t = if spec.buffer {
                nb += 1;
                self.buffer(&spec.name)?
            } else {
                np += 1;
                self.get(&spec.name)?
            };
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {} has shape {:?}, configuration expects {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        if np != self.params.len() || nb != self.buffers.len() {
            return Err(Error::Config(format!(
                "parameter set holds {} tensors and {} buffers, configuration declares {np} and {nb}",
                self.params.len(),
                self.buffers.len()
            )));
        }
        Ok(())
    }

    /// Folds training-batch statistics into the running buffers.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats)]) -> Result<()> {
        for (prefix, s) in stats {
            let m = self.buffer_mut(&format!("{prefix}.running_mean"))?;
            for (r, b) in m.data_mut().iter_mut().zip(&s.mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
            let v = self.buffer_mut(&format!("{prefix}.running_var"))?;
            for (r, b) in v.data_mut().iter_mut().zip(&s.var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, recorded for the running buffers.
    Train,
    /// Running statistics.
    Eval,
}

/// One forward pass: parameters are bound to graph leaves on first use.
pub struct Session<'a> {
    pub graph: &'a mut Graph,
    store: &'a ParamStore,
    mode: Mode,
    batchnorm: bool,
    grads: bool,
    bound: BTreeMap<String, Var>,
    stats: Vec<(String, BatchStats)>,
}

impl<'a> Session<'a> {
    pub fn new(graph: &'a mut Graph, store: &'a ParamStore, mode: Mode, batchnorm: bool) -> Self {
        Self {
            graph,
            store,
            mode,
            batchnorm,
            grads: mode == Mode::Train,
            bound: BTreeMap::new(),
            stats: Vec::new(),
        }
    }

    /// Whether lazily bound parameters receive gradients.
    pub fn with_grads(mut self, grads: bool) -> Self {
        self.grads = grads;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Uses `var` for parameter `name` instead of binding a fresh leaf.
    pub fn bind(&mut self, name: impl Into<String>, var: Var) {
        self.bound.insert(name.into(), var);
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let t = self.store.get(name)?.clone();
        let v = if self.grads {
            self.graph.input(t)
        } else {
            self.graph.constant(t)
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound(&self) -> &BTreeMap<String, Var> {
        &self.bound
    }

    pub fn take_stats(&mut self) -> Vec<(String, BatchStats)> {
        std::mem::take(&mut self.stats)
    }

    pub fn conv(&mut self, prefix: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
        let k = self.param(&format!("{prefix}.kernel"))?;
        self.graph.conv2d(x, k, stride, pad)
    }

    pub fn depthwise(&mut self, prefix: &str, x: Var, pad: usize) -> Result<Var> {
        let k = self.param(&format!("{prefix}.kernel"))?;
        self.graph.depthwise_conv2d(x, k, 1, pad)
    }

    /// Batch normalization, or a plain per-channel affine when disabled.
    pub fn norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let scale = self.param(&format!("{prefix}.scale"))?;
        let shift = self.param(&format!("{prefix}.shift"))?;
        if !self.batchnorm {
            return self.graph.channel_affine(x, scale, shift);
        }
        match self.mode {
            Mode::Train => {
                let (y, s) = self.graph.batch_norm(x, scale, shift, BN_EPS)?;
                self.stats.push((prefix.to_string(), s));
                Ok(y)
            }
            Mode::Eval => {
                let mean = self.store.buffer(&format!("{prefix}.running_mean"))?;
                let var = self.store.buffer(&format!("{prefix}.running_var"))?;
                self.graph
                    .batch_norm_inference(x, scale, shift, mean.data(), var.data(), BN_EPS)
            }
        }
    }
}
