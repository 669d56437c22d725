//! Inter-stage attention: a residual refinement, a 12-channel coarse
//! prediction gated by its own spatial probabilities, and an
//! embedded-Gaussian non-local aggregation over all positions.
//!
//! ```text
//! Fr   = ResBlock(F)
//! Frc  = conv1x1(Fr) -> 12 channels
//! Map1 = spatial_softmax(Frc) ⊙ conv1x1(Fr) -> 12 channels
//! A    = softmax_j(φ(Frc)_i · θ(Frc)_j)          [N, HW, HW]
//! S_i  = Σ_j A_ij g(Frc)_j
//! F'   = W(S) + Frc + Map1
//! ```

use crate::autodiff::Var;
use crate::error::{invalid_shape, Error, Result};
use crate::landmarks::NUM_LANDMARKS;
use crate::nn::blocks::ResBlock;
use crate::nn::{Session, Specs};
use crate::tensor::Tensor;

/// Largest spatial extent `H·W` the pairwise similarity is built for.
pub const DEFAULT_MAX_POSITIONS: usize = 4096;

#[derive(Clone, Debug)]
pub struct Attention {
    pub prefix: String,
    pub c: usize,
    pub embed: usize,
    pub max_positions: usize,
    /// Replaces the learned similarity with uniform weights `1/HW`.
    pub uniform_similarity: bool,
}

/// Intermediate values of one attention pass.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub refined: Var,
    pub coarse: Var,
    pub weights: Var,
    pub aggregated: Var,
    pub attended: Var,
    pub output: Var,
}

impl Attention {
    pub fn new(prefix: impl Into<String>, c: usize, embed: usize) -> Result<Self> {
        if c < 2 || embed == 0 {
            return Err(Error::Config(format!(
                "attention needs width >= 2 and a nonzero embedding, got width {c}, embedding {embed}"
            )));
        }
        Ok(Self {
            prefix: prefix.into(),
            c,
            embed,
            max_positions: DEFAULT_MAX_POSITIONS,
            uniform_similarity: false,
        })
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    fn residual(&self) -> ResBlock {
        ResBlock::new(self.name("residual"), self.c)
    }

    pub fn declare(&self, s: &mut Specs) {
        let k = NUM_LANDMARKS;
        self.residual().declare(s);
        s.kernel(&self.name("coarse"), k, self.c, 1);
        s.kernel(&self.name("proj"), k, self.c, 1);
        s.kernel(&self.name("phi"), self.embed, k, 1);
        s.kernel(&self.name("theta"), self.embed, k, 1);
        s.kernel(&self.name("g"), self.embed, k, 1);
        s.kernel(&self.name("w"), k, self.embed, 1);
    }

    /// Row-stochastic `[N, HW, HW]` weights from 12-channel features.
    pub fn pairwise_similarity(&self, sess: &mut Session, coarse: Var) -> Result<Var> {
        let [n, _, h, w] = sess.graph.value(coarse).dims4("attention")?;
        let hw = h * w;
        self.check_positions(hw)?;
        if self.uniform_similarity {
            return Ok(sess.graph.constant(Tensor::full(vec![n, hw, hw], 1.0 / hw as f64)));
        }
        let phi = self.embed_positions(sess, "phi", coarse)?;
        let theta = sess.conv(&self.name("theta"), coarse, 1, 0)?;
        let theta = sess.graph.reshape(theta, vec![n, self.embed, hw])?;
        let logits = sess.graph.matmul(phi, theta)?;
        sess.graph.softmax_rows(logits, hw)
    }

    fn check_positions(&self, hw: usize) -> Result<()> {
        if hw > self.max_positions {
            return Err(invalid_shape(
                "attention",
                format!(
                    "{hw} positions exceed the cap of {}; lower the attention resolution (smaller input size or deeper stem)",
                    self.max_positions
                ),
            ));
        }
        Ok(())
    }

    /// `[N, HW, E]` embedding of every position.
    fn embed_positions(&self, sess: &mut Session, part: &str, x: Var) -> Result<Var> {
        let [n, _, h, w] = sess.graph.value(x).dims4("attention")?;
        let e = sess.conv(&self.name(part), x, 1, 0)?;
        let e = sess.graph.reshape(e, vec![n, self.embed, h * w])?;
        sess.graph.transpose_last2(e)
    }

    pub fn forward(&self, sess: &mut Session, features: Var) -> Result<Var> {
        Ok(self.forward_detailed(sess, features)?.output)
    }

    pub fn forward_detailed(&self, sess: &mut Session, features: Var) -> Result<AttentionVars> {
        let [n, c, h, w] = sess.graph.value(features).dims4("attention")?;
        if c != self.c {
            return Err(invalid_shape("attention", format!("expected {} channels, got {c}", self.c)));
        }
        self.check_positions(h * w)?;
        let refined = self.residual().forward(sess, features)?;
        let coarse = sess.conv(&self.name("coarse"), refined, 1, 0)?;
        let map = sess.graph.spatial_softmax(coarse)?;
        let proj = sess.conv(&self.name("proj"), refined, 1, 0)?;
        let map1 = sess.graph.mul(map, proj)?;

        let weights = self.pairwise_similarity(sess, coarse)?;
        let g = self.embed_positions(sess, "g", coarse)?;
        let s = sess.graph.matmul(weights, g)?;
        let s = sess.graph.transpose_last2(s)?;
        let aggregated = sess.graph.reshape(s, vec![n, self.embed, h, w])?;
        let transformed = sess.conv(&self.name("w"), aggregated, 1, 0)?;
        let attended = sess.graph.add(transformed, coarse)?;
        let output = sess.graph.add(attended, map1)?;
        Ok(AttentionVars {
            refined,
            coarse,
            weights,
            aggregated,
            attended,
            output,
        })
    }
}
