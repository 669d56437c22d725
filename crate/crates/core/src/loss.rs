//! Coordinate regression losses: MSE, Huber and Wing.
//!
//! All three act elementwise on the error `d = gt − pr` and are averaged
//! over every coordinate entry.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ScalarFn, Var};
use crate::error::{shape_mismatch, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Huber,
    Wing,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Mse, LossKind::Huber, LossKind::Wing];

    pub fn label(self) -> &'static str {
        match self {
            LossKind::Mse => "MSE loss",
            LossKind::Huber => "Huber loss",
            LossKind::Wing => "Wing loss",
        }
    }
}

/// Loss selection. Defaults for `delta`, `w` and `epsilon` are expressed in
/// normalized coordinates: `w = 10/64`, `epsilon = 2/64`, `delta = 2/64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    pub delta: f64,
    pub w: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Mse,
            delta: 2.0 / 64.0,
            w: 10.0 / 64.0,
            epsilon: 2.0 / 64.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("loss.{name} must be positive, got {v}")))
            }
        };
        match self.kind {
            LossKind::Mse => Ok(()),
            LossKind::Huber => positive("delta", self.delta),
            LossKind::Wing => {
                positive("w", self.w)?;
                positive("epsilon", self.epsilon)
            }
        }
    }

    pub fn elementwise(&self) -> Result<Arc<dyn ScalarFn>> {
        self.validate()?;
        Ok(match self.kind {
            LossKind::Mse => Arc::new(Square),
            LossKind::Huber => Arc::new(Huber::new(self.delta)?),
            LossKind::Wing => Arc::new(Wing::new(self.w, self.epsilon)?),
        })
    }

    /// Loss between two equal-shape coordinate tensors.
    pub fn evaluate(&self, gt: &Tensor, pr: &Tensor) -> Result<f64> {
        if gt.shape() != pr.shape() {
            return Err(shape_mismatch("loss", gt.shape(), pr.shape()));
        }
        let f = self.elementwise()?;
        let n = gt.len().max(1) as f64;
        Ok(gt.data().iter().zip(pr.data()).map(|(a, b)| f.value(a - b)).sum::<f64>() / n)
    }

    /// Records the loss on the graph; `gt` and `pr` must share a shape.
    pub fn record(&self, g: &mut Graph, gt: Var, pr: Var) -> Result<Var> {
        let f = self.elementwise()?;
        let d = g.sub(gt, pr)?;
        let per = g.map(d, f);
        Ok(g.mean(per))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Square;

impl ScalarFn for Square {
    fn value(&self, d: f64) -> f64 {
        d * d
    }

    fn derivative(&self, d: f64) -> f64 {
        2.0 * d
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Huber {
    delta: f64,
}

impl Huber {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("huber delta must be positive, got {delta}")));
        }
        Ok(Self { delta })
    }

    pub fn quadratic(&self, d: f64) -> f64 {
        0.5 * d * d
    }

    pub fn linear(&self, d: f64) -> f64 {
        self.delta * (d.abs() - 0.5 * self.delta)
    }
}

impl ScalarFn for Huber {
    fn value(&self, d: f64) -> f64 {
        if d.abs() <= self.delta {
            self.quadratic(d)
        } else {
            self.linear(d)
        }
    }

    fn derivative(&self, d: f64) -> f64 {
        if d.abs() <= self.delta {
            d
        } else {
            self.delta * d.signum()
        }
    }

    fn piece(&self, d: f64) -> u8 {
        (d.abs() <= self.delta) as u8
    }
}

/// Offset joining the two Wing branches: `C = w − w·ln(1 + w/ε)`.
pub fn wing_constant(w: f64, epsilon: f64) -> f64 {
    w - w * (w / epsilon).ln_1p()
}

/// Logarithmic for `|d| < w`, linear `|d| − C` beyond.
#[derive(Debug, Clone, Copy)]
pub struct Wing {
    w: f64,
    epsilon: f64,
    c: f64,
}

impl Wing {
    pub fn new(w: f64, epsilon: f64) -> Result<Self> {
        if !(w > 0.0 && w.is_finite() && epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "wing parameters must be positive, got w={w} epsilon={epsilon}"
            )));
        }
        Ok(Self {
            w,
            epsilon,
            c: wing_constant(w, epsilon),
        })
    }

    pub fn constant(&self) -> f64 {
        self.c
    }

    pub fn log_branch(&self, d: f64) -> f64 {
        self.w * (d.abs() / self.epsilon).ln_1p()
    }

    pub fn linear_branch(&self, d: f64) -> f64 {
        d.abs() - self.c
    }
}

impl ScalarFn for Wing {
    fn value(&self, d: f64) -> f64 {
        if d.abs() < self.w {
            self.log_branch(d)
        } else {
            self.linear_branch(d)
        }
    }

    fn derivative(&self, d: f64) -> f64 {
        if d == 0.0 {
            0.0
        } else if d.abs() < self.w {
            self.w * d.signum() / (self.epsilon + d.abs())
        } else {
            d.signum()
        }
    }

    fn piece(&self, d: f64) -> u8 {
        ((d.abs() < self.w) as u8) << 1 | (d > 0.0) as u8
    }
}
