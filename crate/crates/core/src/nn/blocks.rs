//! Backbone building blocks: stem, conv/residual blocks, the deep layer
//! aggregation unit and the recursive hourglass.
//!
//! Convolutions carry no bias; every conv is followed by a norm whose shift
//! plays that role.

use serde::{Deserialize, Serialize};

use super::{Session, Specs};
use crate::autodiff::Var;
use crate::error::{invalid_shape, shape_mismatch, Error, Result};

/// `relu(norm(conv_k(x)))`.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub prefix: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvBlock {
    pub fn new(prefix: impl Into<String>, cin: usize, cout: usize, k: usize) -> Self {
        Self {
            prefix: prefix.into(),
            cin,
            cout,
            k,
        }
    }

    pub fn declare(&self, s: &mut Specs) {
        s.kernel(&format!("{}.conv", self.prefix), self.cout, self.cin, self.k);
        s.norm(&format!("{}.norm", self.prefix), self.cout);
    }

    pub fn forward(&self, sess: &mut Session, x: Var) -> Result<Var> {
        let y = sess.conv(&format!("{}.conv", self.prefix), x, 1, self.k / 2)?;
        let y = sess.norm(&format!("{}.norm", self.prefix), y)?;
        Ok(sess.graph.relu(y))
    }
}

/// Bottleneck residual block: `relu(x + norm(1×1(relu(norm(3×3(relu(norm(1×1(x)))))))))`
/// with a `C/2` inner width.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub prefix: String,
    pub c: usize,
}

impl ResBlock {
    pub fn new(prefix: impl Into<String>, c: usize) -> Self {
        Self { prefix: prefix.into(), c }
    }

    fn inner(&self) -> usize {
        (self.c / 2).max(1)
    }

    pub fn declare(&self, s: &mut Specs) {
        let (p, c, h) = (&self.prefix, self.c, self.inner());
        s.kernel(&format!("{p}.reduce"), h, c, 1);
        s.norm(&format!("{p}.reduce_norm"), h);
        s.kernel(&format!("{p}.spatial"), h, h, 3);
        s.norm(&format!("{p}.spatial_norm"), h);
        s.kernel(&format!("{p}.expand"), c, h, 1);
        s.norm(&format!("{p}.expand_norm"), c);
    }

    pub fn forward(&self, sess: &mut Session, x: Var) -> Result<Var> {
        let p = &self.prefix;
        let mut y = x;
        for (conv, pad) in [("reduce", 0), ("spatial", 1)] {
            y = sess.conv(&format!("{p}.{conv}"), y, 1, pad)?;
            y = sess.norm(&format!("{p}.{conv}_norm"), y)?;
            y = sess.graph.relu(y);
        }
        y = sess.conv(&format!("{p}.expand"), y, 1, 0)?;
        y = sess.norm(&format!("{p}.expand_norm"), y)?;
        let sum = sess.graph.add(x, y)?;
        Ok(sess.graph.relu(sum))
    }
}

/// Deep layer aggregation unit: the deep branch is depthwise-convolved,
/// concatenated after the shallow branch, and merged by a pointwise conv.
#[derive(Clone, Debug)]
pub struct Dlau {
    pub prefix: String,
    pub c: usize,
}

impl Dlau {
    pub fn new(prefix: impl Into<String>, c: usize) -> Self {
        Self { prefix: prefix.into(), c }
    }

    pub fn declare(&self, s: &mut Specs) {
        let (p, c) = (&self.prefix, self.c);
        s.depthwise(&format!("{p}.depthwise"), c, 3);
        s.kernel(&format!("{p}.merge"), c, 2 * c, 1);
        s.norm(&format!("{p}.norm"), c);
    }

    pub fn forward(&self, sess: &mut Session, shallow: Var, deep: Var) -> Result<Var> {
        let (a, b) = (sess.graph.value(shallow).shape(), sess.graph.value(deep).shape());
        if a != b {
            return Err(shape_mismatch("dlau", a, b));
        }
        let p = &self.prefix;
        let d = sess.depthwise(&format!("{p}.depthwise"), deep, 1)?;
        let cat = sess.graph.concat_channels(&[shallow, d])?;
        let y = sess.conv(&format!("{p}.merge"), cat, 1, 0)?;
        let y = sess.norm(&format!("{p}.norm"), y)?;
        Ok(sess.graph.relu(y))
    }
}

/// `7×7/2 conv → norm → relu → 2×2 max-pool → 3×3 conv`: a quarter-resolution
/// `C`-channel feature map from an RGB image.
#[derive(Clone, Debug)]
pub struct Stem {
    pub prefix: String,
    pub c: usize,
}

impl Stem {
    pub fn new(prefix: impl Into<String>, c: usize) -> Self {
        Self { prefix: prefix.into(), c }
    }

    pub fn declare(&self, s: &mut Specs) {
        let p = &self.prefix;
        s.kernel(&format!("{p}.conv7"), self.c, 3, 7);
        s.norm(&format!("{p}.norm"), self.c);
        s.kernel(&format!("{p}.conv3"), self.c, self.c, 3);
    }

    pub fn forward(&self, sess: &mut Session, image: Var) -> Result<Var> {
        let [_, ch, h, w] = sess.graph.value(image).dims4("stem")?;
        if ch != 3 || h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(invalid_shape(
                "stem",
                format!("expected [N, 3, H, W] with H and W multiples of 4, got [_, {ch}, {h}, {w}]"),
            ));
        }
        let p = &self.prefix;
        let y = sess.conv(&format!("{p}.conv7"), image, 2, 3)?;
        let y = sess.norm(&format!("{p}.norm"), y)?;
        let y = sess.graph.relu(y);
        let y = sess.graph.maxpool2x2(y)?;
        sess.conv(&format!("{p}.conv3"), y, 1, 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipKind {
    Residual,
    Dlau,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HourglassConfig {
    pub depth: usize,
    pub width: usize,
    pub skip: SkipKind,
}

impl Default for HourglassConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            width: 64,
            skip: SkipKind::Dlau,
        }
    }
}

/// Recursive encoder-decoder. Each level pools, refines, recurses and
/// upsamples, then joins the upsampled path with its skip input:
/// `ResBlock(skip) + up` for [`SkipKind::Residual`], `DLAU(skip, up)` for
/// [`SkipKind::Dlau`]. The dlau kind also merges the bottleneck block with
/// its own input through one more DLAU.
#[derive(Clone, Debug)]
pub struct Hourglass {
    pub prefix: String,
    pub cfg: HourglassConfig,
}

impl Hourglass {
    pub fn new(prefix: impl Into<String>, cfg: HourglassConfig) -> Result<Self> {
        if cfg.depth == 0 {
            return Err(Error::Config("hourglass depth must be at least 1".into()));
        }
        if cfg.width < 2 {
            return Err(Error::Config("hourglass width must be at least 2".into()));
        }
        Ok(Self {
            prefix: prefix.into(),
            cfg,
        })
    }

    fn level_prefix(&self, d: usize) -> String {
        format!("{}.level{d}", self.prefix)
    }

    fn res(&self, d: usize, name: &str) -> ResBlock {
        ResBlock::new(format!("{}.{name}", self.level_prefix(d)), self.cfg.width)
    }

    fn bottleneck(&self) -> ConvBlock {
        let c = self.cfg.width;
        ConvBlock::new(format!("{}.bottleneck", self.prefix), c, c, 3)
    }

    fn bottleneck_merge(&self) -> Dlau {
        Dlau::new(format!("{}.bottleneck_merge", self.prefix), self.cfg.width)
    }

    fn skip_dlau(&self, d: usize) -> Dlau {
        Dlau::new(format!("{}.skip", self.level_prefix(d)), self.cfg.width)
    }

    pub fn declare(&self, s: &mut Specs) {
        for d in (1..=self.cfg.depth).rev() {
            match self.cfg.skip {
                SkipKind::Residual => self.res(d, "skip").declare(s),
                SkipKind::Dlau => self.skip_dlau(d).declare(s),
            }
            self.res(d, "down").declare(s);
            self.res(d, "up").declare(s);
        }
        self.bottleneck().declare(s);
        if self.cfg.skip == SkipKind::Dlau {
            self.bottleneck_merge().declare(s);
        }
    }

    pub fn forward(&self, sess: &mut Session, x: Var) -> Result<Var> {
        let [_, c, h, w] = sess.graph.value(x).dims4("hourglass")?;
        let unit = 1usize << self.cfg.depth;
        if c != self.cfg.width || h % unit != 0 || w % unit != 0 || h == 0 || w == 0 {
            return Err(invalid_shape(
                "hourglass",
                format!(
                    "expected {} channels and extents divisible by {unit}, got [_, {c}, {h}, {w}]",
                    self.cfg.width
                ),
            ));
        }
        self.level(sess, x, self.cfg.depth)
    }

    fn level(&self, sess: &mut Session, x: Var, d: usize) -> Result<Var> {
        let pooled = sess.graph.maxpool2x2(x)?;
        let low1 = self.res(d, "down").forward(sess, pooled)?;
        let inner = if d > 1 {
            self.level(sess, low1, d - 1)?
        } else {
            let b = self.bottleneck().forward(sess, low1)?;
            match self.cfg.skip {
                SkipKind::Residual => b,
                SkipKind::Dlau => self.bottleneck_merge().forward(sess, low1, b)?,
            }
        };
        let low3 = self.res(d, "up").forward(sess, inner)?;
        let up = sess.graph.upsample2x(low3)?;
        match self.cfg.skip {
            SkipKind::Residual => {
                let skip = self.res(d, "skip").forward(sess, x)?;
                sess.graph.add(skip, up)
            }
            SkipKind::Dlau => self.skip_dlau(d).forward(sess, x, up),
        }
    }
}
