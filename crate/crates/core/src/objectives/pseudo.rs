use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::prototypes::argmax;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoLabelConfig {
    /// Weight of the prototype distribution in the fusion; the remainder
    /// goes to label propagation.
    pub beta: f64,
    pub tau_conf: f64,
    pub tau_margin: f64,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        PseudoLabelConfig {
            beta: 0.5,
            tau_conf: 0.8,
            tau_margin: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel {
    pub q: Vec<f64>,
    pub label: usize,
    /// Top probability of `q`.
    pub confidence: f64,
    /// Top minus second probability of `q`.
    pub margin: f64,
    pub accepted: bool,
}

impl PseudoLabel {
    /// Accepted iff `confidence > tau_conf` and `margin > tau_margin`.
    pub fn from_distribution(q: Vec<f64>, tau_conf: f64, tau_margin: f64) -> Self {
        let label = argmax(&q);
        let confidence = q[label];
        let second = q
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != label)
            .map(|(_, &v)| v)
            .fold(0.0, f64::max);
        let margin = confidence - second;
        PseudoLabel {
            accepted: confidence > tau_conf && margin > tau_margin,
            q,
            label,
            confidence,
            margin,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PseudoLabelBatch {
    pub labels: Vec<PseudoLabel>,
}

impl PseudoLabelBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn accepted_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i].accepted).collect()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.accepted_indices().len() as f64 / self.len() as f64
    }
}

/// `beta * proto + (1 - beta) * prop`, row by row.
pub fn fuse(proto: &[f64], prop: &[f64], beta: f64) -> Vec<f64> {
    proto
        .iter()
        .zip(prop)
        .map(|(a, b)| beta * a + (1.0 - beta) * b)
        .collect()
}

/// Fuses prototype and propagation distributions and applies the
/// confidence and margin filters.
pub fn pseudo_label(
    proto: &[Vec<f64>],
    propagation: &[Vec<f64>],
    config: &PseudoLabelConfig,
) -> Result<PseudoLabelBatch> {
    if proto.len() != propagation.len() {
        return Err(Error::invalid(
            "pseudo_label",
            format!("{} prototype rows, {} propagation rows", proto.len(), propagation.len()),
        ));
    }
    if !(0.0..=1.0).contains(&config.beta) {
        return Err(Error::invalid(
            "pseudo_label",
            format!("beta {} outside [0, 1]", config.beta),
        ));
    }
    let labels = proto
        .iter()
        .zip(propagation)
        .map(|(p, s)| {
            if p.len() != s.len() {
                return Err(Error::invalid("pseudo_label", "class counts differ"));
            }
            Ok(PseudoLabel::from_distribution(
                fuse(p, s, config.beta),
                config.tau_conf,
                config.tau_margin,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(PseudoLabelBatch { labels })
}
