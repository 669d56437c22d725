//! Skip-kind × attention ablation over a set of losses.

use std::fmt::Write as _;

use serde::Serialize;

use crate::config::Config;
use crate::error::Result;
use crate::loss::LossKind;
use crate::metrics;
use crate::model::Model;
use crate::nn::blocks::SkipKind;
use crate::train::{predict_samples, Sample, Trainer};

/// Row label, skip kind and attention flag of each configuration.
pub const VARIANTS: [(&str, SkipKind, bool); 4] = [
    ("Stacked Hourglass model", SkipKind::Residual, false),
    ("Stacked Hourglass with DLAU", SkipKind::Dlau, false),
    ("Stacked Hourglass with attention", SkipKind::Residual, true),
    ("Stacked Hourglass with DLAU and attention", SkipKind::Dlau, true),
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub nme: f64,
    pub auc: f64,
    pub final_loss: f64,
    /// Why training stopped early, if it did.
    pub halted: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub label: String,
    pub cells: Vec<Cell>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub losses: Vec<LossKind>,
    pub rows: Vec<Row>,
}

impl AblationReport {
    /// Every run finished with finite losses and metrics.
    pub fn all_finite(&self) -> bool {
        self.rows.iter().flat_map(|r| &r.cells).all(|c| {
            c.halted.is_none() && c.nme.is_finite() && c.auc.is_finite() && c.final_loss.is_finite()
        })
    }

    /// Methodology rows against NME/AUC column pairs per loss.
    pub fn table(&self) -> String {
        let mut head = vec!["Methodology".to_string()];
        let mut sub = vec![String::new()];
        for k in &self.losses {
            head.extend([k.label().to_string(), String::new()]);
            sub.extend(["NME".to_string(), "AUC".to_string()]);
        }
        let mut rows = vec![head, sub];
        for r in &self.rows {
            let mut line = vec![r.label.clone()];
            for c in &r.cells {
                line.extend([format!("{:.4}", c.nme), format!("{:.4}", c.auc)]);
            }
            rows.push(line);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for (n, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(s, "{}", cells.join(" | ").trim_end());
            if n == 1 {
                let _ = writeln!(s, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-"));
            }
        }
        s
    }
}

/// Trains every variant with every loss from `base`, scoring on `val`.
pub fn run(base: &Config, losses: &[LossKind], train: &[Sample], val: &[Sample]) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(VARIANTS.len());
    for (label, skip, attention) in VARIANTS {
        let mut cells = Vec::with_capacity(losses.len());
        for &kind in losses {
            let mut cfg = base.clone();
            cfg.model.skip = skip;
            cfg.model.attention = attention;
            cfg.loss.kind = kind;
            let model = Model::new(cfg.model.clone())?;
            let trainer = Trainer {
                model: &model,
                loss: &cfg.loss,
                cfg: &cfg.train,
                seed: cfg.seed,
            };
            let out = trainer.run(model.init(cfg.seed)?, train, &[], |_, _| {})?;
            let preds = predict_samples(&model, &out.store, val, cfg.train.batch_size)?;
            let pairs: Vec<_> = val.iter().map(|s| s.landmarks.clone()).zip(preds).collect();
            let report = metrics::evaluate(&pairs, cfg.eval.threshold)?;
            cells.push(Cell {
                nme: report.nme_mean,
                auc: report.auc_0_05,
                final_loss: out.log.last().map_or(f64::NAN, |e| e.loss),
                halted: out.halted.map(|e| e.to_string()),
            });
        }
        rows.push(Row {
            label: label.to_string(),
            cells,
        });
    }
    Ok(AblationReport {
        losses: losses.to_vec(),
        rows,
    })
}
