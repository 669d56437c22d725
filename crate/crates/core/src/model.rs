//! The full localizer: stem, then per stage an hourglass followed by either
//! the attention block or a plain 1×1 head, each stage decoded by
//! soft-argmax. Stages after the first take the previous stage's 12-channel
//! output remapped to `C` channels by a 1×1 conv.

use serde::{Deserialize, Serialize};

use crate::attention::Attention;
use crate::autodiff::{Graph, Var};
use crate::error::{invalid_shape, Error, Result};
use crate::heatmap::soft_argmax_with_probs;
use crate::landmarks::NUM_LANDMARKS;
use crate::loss::LossConfig;
use crate::nn::blocks::{Hourglass, HourglassConfig, SkipKind, Stem};
use crate::nn::{Mode, ParamStore, Session, Specs};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub stages: usize,
    pub depth: usize,
    pub width: usize,
    pub skip: SkipKind,
    pub attention: bool,
    pub batchnorm: bool,
    /// Embedding width of the attention similarity; `width / 2` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_channels: Option<usize>,
    /// Replaces learned attention weights with a uniform map.
    pub uniform_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stages: 3,
            depth: 4,
            width: 64,
            skip: SkipKind::Dlau,
            attention: true,
            batchnorm: true,
            embed_channels: None,
            uniform_attention: false,
        }
    }
}

impl ModelConfig {
    pub fn hourglass(&self) -> HourglassConfig {
        HourglassConfig {
            depth: self.depth,
            width: self.width,
            skip: self.skip,
        }
    }

    pub fn embed(&self) -> usize {
        self.embed_channels.unwrap_or(self.width / 2)
    }

    /// Input extents must be multiples of this.
    pub fn input_unit(&self) -> usize {
        4 << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::Config("model.stages must be at least 1".into()));
        }
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::Config(format!("model.depth must be in 1..=8, got {}", self.depth)));
        }
        if self.width < 2 {
            return Err(Error::Config(format!("model.width must be at least 2, got {}", self.width)));
        }
        if self.embed() == 0 {
            return Err(Error::Config("model.embed_channels must be nonzero".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Head {
    Attention(Attention),
    Linear(String),
}

#[derive(Clone, Debug)]
struct Stage {
    hourglass: Hourglass,
    head: Head,
    remap: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    stem: Stem,
    stages: Vec<Stage>,
}

/// Graph handles produced by [`Model::forward`].
#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// Per stage, `[N, 12, 2]` normalized coordinates.
    pub coords: Vec<Var>,
    /// Final stage `[N, 12, h, w]` logits.
    pub logits: Var,
    /// Final stage spatial probabilities.
    pub probs: Var,
}

/// Detached evaluation-mode results.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// `[N, 12, 2]` normalized coordinates of the final stage.
    pub coords: Tensor,
    /// `[N, 12, h, w]` final-stage spatial probabilities.
    pub probs: Tensor,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.width;
        let mut stages = Vec::with_capacity(cfg.stages);
        for i in 0..cfg.stages {
            let hourglass = Hourglass::new(format!("stage{i}.hourglass"), cfg.hourglass())?;
            let head = if cfg.attention {
                let mut a = Attention::new(format!("stage{i}.attention"), c, cfg.embed())?;
                a.uniform_similarity = cfg.uniform_attention;
                Head::Attention(a)
            } else {
                Head::Linear(format!("stage{i}.head"))
            };
            let remap = (i + 1 < cfg.stages).then(|| format!("stage{i}.remap"));
            stages.push(Stage { hourglass, head, remap });
        }
        Ok(Self {
            stem: Stem::new("stem", c),
            stages,
            cfg,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn specs(&self) -> Specs {
        let mut s = Specs::new(self.cfg.batchnorm);
        self.stem.declare(&mut s);
        for st in &self.stages {
            st.hourglass.declare(&mut s);
            match &st.head {
                Head::Attention(a) => a.declare(&mut s),
                Head::Linear(p) => s.kernel(p, NUM_LANDMARKS, self.cfg.width, 1),
            }
            if let Some(p) = &st.remap {
                s.kernel(p, self.cfg.width, NUM_LANDMARKS, 1);
            }
        }
        s
    }

    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        ParamStore::initialize(&self.specs(), seed)
    }

    pub fn session<'a>(&self, graph: &'a mut Graph, store: &'a ParamStore, mode: Mode) -> Session<'a> {
        Session::new(graph, store, mode, self.cfg.batchnorm)
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let unit = self.cfg.input_unit();
        match shape {
            &[n, 3, h, w] if n > 0 && h > 0 && w > 0 && h % unit == 0 && w % unit == 0 => Ok(()),
            s => Err(invalid_shape(
                "model",
                format!("expected [N, 3, H, W] with H and W multiples of {unit}, got {s:?}"),
            )),
        }
    }

    pub fn forward(&self, sess: &mut Session, images: Var) -> Result<ModelOutput> {
        self.check_input(sess.graph.value(images).shape())?;
        let mut x = self.stem.forward(sess, images)?;
        let mut coords = Vec::with_capacity(self.stages.len());
        let mut last = None;
        for st in &self.stages {
            let h = st.hourglass.forward(sess, x)?;
            let logits = match &st.head {
                Head::Attention(a) => a.forward(sess, h)?,
                Head::Linear(p) => sess.conv(p, h, 1, 0)?,
            };
            let (c, probs) = soft_argmax_with_probs(sess.graph, logits)?;
            coords.push(c);
            last = Some((logits, probs));
            if let Some(p) = &st.remap {
                x = sess.conv(p, logits, 1, 0)?;
            }
        }
        let (logits, probs) = last.expect("at least one stage");
        Ok(ModelOutput { coords, logits, probs })
    }

    /// Unweighted mean over stages of the coordinate loss against `gt`.
    pub fn loss(&self, sess: &mut Session, out: &ModelOutput, gt: Var, loss: &LossConfig) -> Result<Var> {
        let mut total: Option<Var> = None;
        for &c in &out.coords {
            let l = loss.record(sess.graph, gt, c)?;
            total = Some(match total {
                None => l,
                Some(t) => sess.graph.add(t, l)?,
            });
        }
        let total = total.expect("at least one stage");
        Ok(sess.graph.scale(total, 1.0 / out.coords.len() as f64))
    }

    /// Evaluation-mode forward without gradient tracking.
    pub fn predict(&self, store: &ParamStore, images: &Tensor) -> Result<Prediction> {
        let mut g = Graph::new();
        let mut sess = self.session(&mut g, store, Mode::Eval).with_grads(false);
        let x = sess.graph.constant(images.clone());
        let out = self.forward(&mut sess, x)?;
        let coords = g.value(*out.coords.last().expect("at least one stage")).clone();
        let probs = g.value(out.probs).clone();
        Ok(Prediction { coords, probs })
    }
}
