use rand::Rng;
use rand_distr::StandardNormal;
use stproc_autodiff::{ParamSet, Real, Tape, Tensor, Var};

use crate::embeddings::Embeddings;
use crate::error::{Error, Result};

pub const PROTOTYPE_PARAM: &str = "prototypes";

/// `K` unit-norm class prototypes, stored as a single `[K, D]` parameter so
/// they can be trained on the tape alongside the encoder.
#[derive(Clone, Debug)]
pub struct PrototypeBank<T: Real> {
    pub params: ParamSet<T>,
    pub tau_p: f64,
    pub ema_alpha: f64,
    pub conf_threshold_for_update: f64,
}

impl<T: Real> PrototypeBank<T> {
    /// Random directions on the unit sphere.
    pub fn random<R: Rng + ?Sized>(k: usize, dim: usize, tau_p: f64, ema_alpha: f64, conf: f64, rng: &mut R) -> Self {
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        Self::from_rows(&rows, tau_p, ema_alpha, conf).expect("random rows are nonzero")
    }

    /// Normalizes each row; zero rows are rejected.
    pub fn from_rows(rows: &[Vec<f64>], tau_p: f64, ema_alpha: f64, conf: f64) -> Result<Self> {
        let mut bank = PrototypeBank {
            params: ParamSet::new(),
            tau_p,
            ema_alpha,
            conf_threshold_for_update: conf,
        };
        let t = Tensor::from_rows(rows).map_err(Error::from)?;
        bank.params.push(PROTOTYPE_PARAM, t.cast());
        if rows.iter().any(|r| r.iter().all(|&x| x == 0.0)) {
            return Err(Error::invalid("prototypes", "zero prototype row"));
        }
        bank.renormalize();
        Ok(bank)
    }

    pub fn num_classes(&self) -> usize {
        self.params.get(0).shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.params.get(0).shape()[1]
    }

    pub fn row(&self, k: usize) -> Vec<f64> {
        self.params.get(0).row(k).iter().map(|x| x.as_f64()).collect()
    }

    pub fn set_row(&mut self, k: usize, v: &[f64]) {
        let d = self.dim();
        let data = self.params.get_mut(0).data_mut();
        for (dst, &x) in data[k * d..(k + 1) * d].iter_mut().zip(v) {
            *dst = T::lit(x);
        }
    }

    /// Rescales every row to unit norm.
    pub fn renormalize(&mut self) {
        let d = self.dim();
        for row in self.params.get_mut(0).data_mut().chunks_mut(d) {
            let n = row.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x = T::lit(x.as_f64() / n));
            }
        }
    }

    /// Puts the prototype matrix on `tape`, trainable or constant.
    pub fn attach(&self, tape: &mut Tape<T>, trainable: bool) -> Var {
        self.params.attach(tape, trainable)[0]
    }

    /// Row-softmax of `z P^T / tau_p`, computed in f64 off the tape.
    pub fn probs(&self, z: &Embeddings) -> Vec<Vec<f64>> {
        let k = self.num_classes();
        let protos: Vec<Vec<f64>> = (0..k).map(|c| self.row(c)).collect();
        (0..z.len())
            .map(|i| {
                let zi = z.row(i);
                let logits: Vec<f64> = protos
                    .iter()
                    .map(|p| p.iter().zip(zi).map(|(a, b)| a * b).sum::<f64>() / self.tau_p)
                    .collect();
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|x| x / s).collect()
            })
            .collect()
    }

    /// Argmax prototype per row.
    pub fn predict(&self, z: &Embeddings) -> Vec<usize> {
        self.probs(z).iter().map(|p| argmax(p)).collect()
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// EMA step toward the mean of each class's contributors, followed by
/// renormalization. Ground-truth rows (`confidence = None`) always
/// contribute; pseudo-labeled rows only when their confidence exceeds the
/// bank's update threshold. Classes without contributors are untouched.
pub fn update_prototypes<T: Real>(
    bank: &mut PrototypeBank<T>,
    z: &Embeddings,
    labels: &[usize],
    confidences: &[Option<f64>],
) -> Result<()> {
    if labels.len() != z.len() || confidences.len() != z.len() {
        return Err(Error::invalid(
            "update_prototypes",
            "labels, confidences and rows differ in length",
        ));
    }
    if z.len() > 0 && z.dim() != bank.dim() {
        return Err(Error::invalid(
            "update_prototypes",
            "embedding width differs from prototypes",
        ));
    }
    let (k, d) = (bank.num_classes(), bank.dim());
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for i in 0..z.len() {
        let keep = confidences[i].is_none_or(|c| c > bank.conf_threshold_for_update);
        if !keep {
            continue;
        }
        let c = labels[i];
        if c >= k {
            return Err(Error::invalid("update_prototypes", format!("class {c} out of range")));
        }
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(z.row(i)) {
            *s += x;
        }
    }
    let a = bank.ema_alpha;
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        let old = bank.row(c);
        let mut new: Vec<f64> = old
            .iter()
            .zip(&sums[c])
            .map(|(p, s)| a * p + (1.0 - a) * s / counts[c] as f64)
            .collect();
        let n = new.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            new.iter_mut().for_each(|x| *x /= n);
            bank.set_row(c, &new);
        }
    }
    Ok(())
}
