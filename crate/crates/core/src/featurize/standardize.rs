use serde::{Deserialize, Serialize};

use super::sequence::{DualView, SEQ_CHANNELS};
use super::stats::FEATURE_DIM;
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-6;

/// Per-feature mean/std of the statistical view and a per-channel RMS scale
/// for the motion sequence, fit on training views only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub seq_scale: Vec<f64>,
}

/// Population statistics over `views`, with every spread floored at
/// [`STD_FLOOR`].
pub fn fit_standardizer(views: &[&DualView]) -> Result<Standardizer> {
    if views.len() < 2 {
        return Err(Error::invalid(
            "fit_standardizer",
            format!("{} views, need at least 2", views.len()),
        ));
    }
    let n = views.len() as f64;
    let mut mean = vec![0.0; FEATURE_DIM];
    for v in views {
        for (m, x) in mean.iter_mut().zip(&v.f) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; FEATURE_DIM];
    for v in views {
        for ((s, x), m) in var.iter_mut().zip(&v.f).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();

    let mut sq = [0.0; SEQ_CHANNELS];
    let mut rows = 0usize;
    for v in views {
        for (row, &m) in v.seq.iter().zip(&v.mask) {
            if m {
                rows += 1;
                for c in 0..SEQ_CHANNELS {
                    sq[c] += row[c] * row[c];
                }
            }
        }
    }
    let seq_scale = sq
        .iter()
        .map(|s| (s / rows.max(1) as f64).sqrt().max(STD_FLOOR))
        .collect();
    Ok(Standardizer { mean, std, seq_scale })
}

impl Standardizer {
    pub fn identity() -> Self {
        Standardizer {
            mean: vec![0.0; FEATURE_DIM],
            std: vec![1.0; FEATURE_DIM],
            seq_scale: vec![1.0; SEQ_CHANNELS],
        }
    }

    pub fn features(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn seq_row(&self, row: &[f64; SEQ_CHANNELS]) -> [f64; SEQ_CHANNELS] {
        let mut out = [0.0; SEQ_CHANNELS];
        for c in 0..SEQ_CHANNELS {
            out[c] = row[c] / self.seq_scale[c];
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.mean.len() == FEATURE_DIM && self.std.len() == FEATURE_DIM && self.seq_scale.len() == SEQ_CHANNELS
    }
}
