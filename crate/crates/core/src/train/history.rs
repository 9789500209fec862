//! Per-epoch metrics, one JSON object per line. Records carry no wall-clock
//! data so seeded runs produce identical files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AdjacencySource;
use crate::objectives::LossReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate at the last step of the epoch.
    pub lr: f64,
    pub steps: usize,
    pub skipped_steps: usize,
    /// Mean of each loss term over the epoch's applied steps.
    pub loss: LossReport,
    pub pseudo_accept_rate: f64,
    pub pseudo_mean_confidence: f64,
    pub pseudo_mean_margin: f64,
    /// Accuracy of accepted pseudo-labels against the hidden labels.
    pub pseudo_precision: Option<f64>,
    pub pseudo_accepted: usize,
    pub graph_source: Option<AdjacencySource>,
    pub global_graph_edges: Option<usize>,
    /// Accuracy of the propagated labels on unlabeled nodes against the
    /// hidden labels, from the latest global graph.
    pub propagation_accuracy: Option<f64>,
    pub val_macro_f1: Option<f64>,
    pub best_val_macro_f1: Option<f64>,
}

pub fn write_history(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Store(e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Store(format!("history line {}: {e}", i + 1))))
        .collect()
}

/// Fixed-width table of the per-epoch loss terms and diagnostics.
pub fn render_history(records: &[EpochRecord]) -> String {
    let mut out = format!(
        "{:>5} {:>9} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>6} {:>6} {:>6} {:>6} {:>7}\n",
        "epoch", "total", "ctr", "proto", "smooth", "nbr", "pseudo", "cons", "w_p", "w_c", "acc", "prec", "val_f1"
    );
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    for r in records {
        let l = &r.loss;
        out.push_str(&format!(
            "{:>5} {:>9.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>6.3} {:>6.3} {:>6.3} {:>6} {:>7}\n",
            r.epoch,
            l.total,
            l.ctr,
            l.proto,
            l.smooth,
            l.nbr,
            l.pseudo,
            l.cons,
            l.w_p,
            l.w_c,
            r.pseudo_accept_rate,
            opt(r.pseudo_precision),
            opt(r.val_macro_f1)
        ));
    }
    out
}
