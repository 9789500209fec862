//! Classification metrics over predicted and true class indices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mode::Mode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Unweighted mean of the defined per-class F1 scores.
    pub macro_f1: f64,
    /// `None` for classes with no true samples.
    pub per_class_f1: Vec<Option<f64>>,
    /// Row-normalized confusion matrix in percent; rows are true classes.
    pub confusion: Vec<Vec<f64>>,
    pub support: Vec<usize>,
    pub accuracy: f64,
}

impl EvalReport {
    pub fn from_predictions(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::invalid(
                "evaluate",
                format!("{} labels, {} predictions", truth.len(), pred.len()),
            ));
        }
        if truth.is_empty() {
            return Err(Error::invalid("evaluate", "no samples"));
        }
        let k = num_classes;
        let mut counts = vec![vec![0usize; k]; k];
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= k || p >= k {
                return Err(Error::invalid(
                    "evaluate",
                    format!("class index out of range ({t}, {p})"),
                ));
            }
            counts[t][p] += 1;
        }
        let support: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
        let predicted: Vec<usize> = (0..k).map(|c| counts.iter().map(|r| r[c]).sum()).collect();
        let per_class_f1: Vec<Option<f64>> = (0..k)
            .map(|c| {
                if support[c] == 0 {
                    return None;
                }
                let tp = counts[c][c] as f64;
                // F1 = 2 tp / (support + predicted).
                Some(2.0 * tp / (support[c] + predicted[c]) as f64)
            })
            .collect();
        let defined: Vec<f64> = per_class_f1.iter().flatten().copied().collect();
        let absent: Vec<&str> = (0..k)
            .filter(|&c| support[c] == 0)
            .map(|c| Mode::from_index(c).map_or("?", Mode::name))
            .collect();
        if !absent.is_empty() {
            log::warn!("no test samples for {}; excluded from macro F1", absent.join(", "));
        }
        let macro_f1 = defined.iter().sum::<f64>() / defined.len() as f64;
        let confusion = counts
            .iter()
            .zip(&support)
            .map(|(row, &s)| {
                row.iter()
                    .map(|&n| if s == 0 { 0.0 } else { 100.0 * n as f64 / s as f64 })
                    .collect()
            })
            .collect();
        let correct: usize = (0..k).map(|c| counts[c][c]).sum();
        Ok(EvalReport {
            macro_f1,
            per_class_f1,
            confusion,
            support,
            accuracy: correct as f64 / truth.len() as f64,
        })
    }

    /// Plain-text table of per-class F1 and the confusion matrix.
    pub fn render(&self) -> String {
        let name = |c: usize| Mode::from_index(c).map_or("?", Mode::name);
        let mut out = format!("macro F1 {:.4}  accuracy {:.4}\n\n", self.macro_f1, self.accuracy);
        out.push_str(&format!("{:<8} {:>8} {:>8}\n", "class", "f1", "support"));
        for (c, f) in self.per_class_f1.iter().enumerate() {
            let f = f.map_or("-".to_string(), |v| format!("{v:.4}"));
            out.push_str(&format!("{:<8} {:>8} {:>8}\n", name(c), f, self.support[c]));
        }
        out.push_str("\nconfusion (% of true class)\n");
        out.push_str(&format!("{:<8}", ""));
        for c in 0..self.confusion.len() {
            out.push_str(&format!(" {:>7}", name(c)));
        }
        out.push('\n');
        for (c, row) in self.confusion.iter().enumerate() {
            out.push_str(&format!("{:<8}", name(c)));
            for v in row {
                out.push_str(&format!(" {v:>7.1}"));
            }
            out.push('\n');
        }
        out
    }
}
