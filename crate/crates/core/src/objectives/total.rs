use serde::{Deserialize, Serialize};
use stproc_autodiff::{Real, Tape, Var};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the view-contrastive term; 1 in the full objective.
    pub lambda_ctr: f64,
    pub lambda_p: f64,
    pub lambda_s: f64,
    pub lambda_n: f64,
    /// Ceiling of the ramped pseudo-label weight.
    pub lambda_pseudo_max: f64,
    /// Ceiling of the ramped consistency weight.
    pub lambda_cons_max: f64,
    pub tau_c: f64,
    pub tau_n: f64,
    pub tau_p: f64,
    pub ramp_length_epochs: u32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_ctr: 1.0,
            lambda_p: 1.0,
            lambda_s: 0.05,
            lambda_n: 0.10,
            lambda_pseudo_max: 0.5,
            lambda_cons_max: 0.2,
            tau_c: 0.1,
            tau_n: 0.2,
            tau_p: 0.1,
            ramp_length_epochs: 30,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            ("lambda_ctr", self.lambda_ctr),
            ("lambda_p", self.lambda_p),
            ("lambda_s", self.lambda_s),
            ("lambda_n", self.lambda_n),
            ("lambda_pseudo_max", self.lambda_pseudo_max),
            ("lambda_cons_max", self.lambda_cons_max),
        ];
        for (name, v) in lambdas {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be a nonnegative number")));
            }
        }
        for (name, v) in [("tau_c", self.tau_c), ("tau_n", self.tau_n), ("tau_p", self.tau_p)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    /// `(w_p, w_c)` at `epoch`.
    pub fn ramps(&self, epoch: f64) -> (f64, f64) {
        let r = self.ramp_length_epochs as f64;
        (
            ramp_weight(epoch, self.lambda_pseudo_max, r),
            ramp_weight(epoch, self.lambda_cons_max, r),
        )
    }
}

/// `max_value * exp(-5 (1 - min(epoch / ramp_length, 1))^2)`; a zero ramp
/// length is already at the ceiling.
pub fn ramp_weight(epoch: f64, max_value: f64, ramp_length: f64) -> f64 {
    if ramp_length <= 0.0 {
        return max_value;
    }
    let t = (epoch.max(0.0) / ramp_length).min(1.0);
    max_value * (-5.0 * (1.0 - t) * (1.0 - t)).exp()
}

/// Per-batch loss terms on one tape.
#[derive(Clone, Copy, Debug)]
pub struct LossComponents {
    pub ctr: Var,
    pub proto: Var,
    pub smooth: Var,
    pub nbr: Var,
    pub pseudo: Var,
    pub cons: Var,
}

/// Scalar values of every term, the ramped weights and the total.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ctr: f64,
    pub proto: f64,
    pub smooth: f64,
    pub nbr: f64,
    pub pseudo: f64,
    pub cons: f64,
    pub w_p: f64,
    pub w_c: f64,
    pub total: f64,
}

/// Weighted sum of all six terms with the pseudo-label and consistency
/// weights ramped by `epoch`. Fails naming the first non-finite term.
pub fn loss_total<T: Real>(
    tape: &mut Tape<T>,
    c: &LossComponents,
    weights: &LossWeights,
    epoch: f64,
) -> Result<(Var, LossReport)> {
    let (w_p, w_c) = weights.ramps(epoch);
    let terms = [
        ("ctr", c.ctr, weights.lambda_ctr),
        ("proto", c.proto, weights.lambda_p),
        ("smooth", c.smooth, weights.lambda_s),
        ("nbr", c.nbr, weights.lambda_n),
        ("pseudo", c.pseudo, w_p),
        ("cons", c.cons, w_c),
    ];
    let mut values = [0.0; 6];
    for (slot, (name, v, _)) in values.iter_mut().zip(&terms) {
        let x = tape.value(*v).item().as_f64();
        if !x.is_finite() {
            return Err(Error::NonFinite {
                component: name,
                value: x,
            });
        }
        *slot = x;
    }
    let mut total = tape.scale(terms[0].1, T::lit(terms[0].2));
    for &(_, v, w) in &terms[1..] {
        let t = tape.scale(v, T::lit(w));
        total = tape.add(total, t)?;
    }
    let report = LossReport {
        ctr: values[0],
        proto: values[1],
        smooth: values[2],
        nbr: values[3],
        pseudo: values[4],
        cons: values[5],
        w_p,
        w_c,
        total: tape.value(total).item().as_f64(),
    };
    Ok((total, report))
}
