use stproc_autodiff::{Real, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::graph::{BatchAdjacency, GraphLaplacian};

use super::pseudo::PseudoLabelBatch;

/// A loss value plus whether any sample contributed to it. Inactive terms
/// hold a constant zero.
#[derive(Clone, Copy, Debug)]
pub struct Term {
    pub value: Var,
    pub active: bool,
}

impl Term {
    fn inactive<T: Real>(tape: &mut Tape<T>) -> Term {
        Term {
            value: tape.constant(Tensor::scalar(T::zero())),
            active: false,
        }
    }
}

fn rows<T: Real>(tape: &Tape<T>, z: Var, op: &'static str) -> Result<(usize, usize)> {
    match tape.shape(z) {
        [b, d] => Ok((*b, *d)),
        s => Err(Error::invalid(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

/// `Z Z^T / tau`.
fn similarity<T: Real>(tape: &mut Tape<T>, z: Var, tau: f64) -> Result<Var> {
    let zt = tape.transpose(z)?;
    let s = tape.matmul(z, zt)?;
    Ok(tape.scale(s, T::lit(1.0 / tau)))
}

/// NT-Xent over the `2B` stacked views, averaged over all anchors.
pub fn loss_contrastive<T: Real>(tape: &mut Tape<T>, z1: Var, z2: Var, tau_c: f64) -> Result<Var> {
    let (b, _) = rows(tape, z1, "loss_contrastive")?;
    if tape.shape(z1) != tape.shape(z2) {
        return Err(Error::invalid("loss_contrastive", "view shapes differ"));
    }
    if b < 2 {
        return Err(Error::invalid(
            "loss_contrastive",
            format!("batch of {b}; need at least 2"),
        ));
    }
    let n = 2 * b;
    let z = tape.concat(&[z1, z2], 0)?;
    let s = similarity(tape, z, tau_c)?;
    let mask: Vec<bool> = (0..n * n).map(|e| e / n != e % n).collect();
    let lse = tape.logsumexp(s, Some(&mask))?;
    let partner: Vec<usize> = (0..n).map(|i| (i + b) % n).collect();
    let pos = tape.pick(s, &partner)?;
    let per = tape.sub(lse, pos)?;
    Ok(tape.mean(per))
}

/// `Z P^T / tau_p`.
pub fn proto_logits<T: Real>(tape: &mut Tape<T>, z: Var, prototypes: Var, tau_p: f64) -> Result<Var> {
    if !(tau_p > 0.0) {
        return Err(Error::invalid("proto_logits", "tau_p must be positive"));
    }
    let pt = tape.transpose(prototypes)?;
    let l = tape.matmul(z, pt)?;
    Ok(tape.scale(l, T::lit(1.0 / tau_p)))
}

/// Row-softmax of `Z P^T / tau_p`.
pub fn proto_probs<T: Real>(tape: &mut Tape<T>, z: Var, prototypes: Var, tau_p: f64) -> Result<Var> {
    let l = proto_logits(tape, z, prototypes, 1.0)?;
    Ok(tape.softmax(l, T::lit(tau_p))?)
}

/// Mean cross-entropy of `logits` rows against `targets`, each row weighted
/// by `weights` when given.
fn cross_entropy<T: Real>(tape: &mut Tape<T>, logits: Var, targets: &[usize], weights: Option<&[f64]>) -> Result<Var> {
    let lse = tape.logsumexp(logits, None)?;
    let picked = tape.pick(logits, targets)?;
    let nll = tape.sub(lse, picked)?;
    match weights {
        None => Ok(tape.mean(nll)),
        Some(w) => {
            let c = tape.constant(Tensor::from_vec(w.iter().map(|&x| T::lit(x)).collect()));
            let wn = tape.mul(nll, c)?;
            let s = tape.sum(wn);
            Ok(tape.scale(s, T::lit(1.0 / targets.len() as f64)))
        }
    }
}

/// Mean negative log prototype probability of each labeled row's class.
pub fn loss_proto<T: Real>(
    tape: &mut Tape<T>,
    z_labeled: Var,
    labels: &[usize],
    prototypes: Var,
    tau_p: f64,
) -> Result<Term> {
    let (b, _) = rows(tape, z_labeled, "loss_proto")?;
    if b != labels.len() {
        return Err(Error::invalid(
            "loss_proto",
            format!("{} labels for {b} rows", labels.len()),
        ));
    }
    if b == 0 {
        return Ok(Term::inactive(tape));
    }
    let logits = proto_logits(tape, z_labeled, prototypes, tau_p)?;
    Ok(Term {
        value: cross_entropy(tape, logits, labels, None)?,
        active: true,
    })
}

/// `Tr(Z^T L Z) / B`.
pub fn loss_graph_smooth<T: Real>(tape: &mut Tape<T>, z: Var, laplacian: &GraphLaplacian) -> Result<Var> {
    let (b, _) = rows(tape, z, "loss_graph_smooth")?;
    if laplacian.len() != b {
        return Err(Error::invalid(
            "loss_graph_smooth",
            format!("laplacian of {} for {b} rows", laplacian.len()),
        ));
    }
    let l = tape.constant(Tensor::new(
        vec![b, b],
        laplacian.data().iter().map(|&x| T::lit(x)).collect(),
    )?);
    let lz = tape.matmul(l, z)?;
    let zlz = tape.mul(z, lz)?;
    let tr = tape.sum(zlz);
    Ok(tape.scale(tr, T::lit(1.0 / b as f64)))
}

/// Neighbor contrast: for each anchor with at least one neighbor in `adj`,
/// `-log(sum_{j in N(i)} e^{s_ij} / sum_{k != i} e^{s_ik})` with
/// `s = z_i . z_j / tau_n`, averaged over those anchors.
pub fn loss_neighbor_contrast<T: Real>(tape: &mut Tape<T>, z: Var, adj: &BatchAdjacency, tau_n: f64) -> Result<Term> {
    let (b, _) = rows(tape, z, "loss_neighbor_contrast")?;
    if adj.len() != b {
        return Err(Error::invalid(
            "loss_neighbor_contrast",
            format!("adjacency of {} for {b} rows", adj.len()),
        ));
    }
    let anchors: Vec<usize> = (0..b).filter(|&i| (0..b).any(|j| adj.get(i, j) > 0.0)).collect();
    if anchors.is_empty() {
        return Ok(Term::inactive(tape));
    }
    let s = similarity(tape, z, tau_n)?;
    let s = tape.gather_rows(s, &anchors)?;
    let mut num = Vec::with_capacity(anchors.len() * b);
    let mut den = Vec::with_capacity(anchors.len() * b);
    for &i in &anchors {
        for j in 0..b {
            num.push(adj.get(i, j) > 0.0);
            den.push(j != i);
        }
    }
    let lse_num = tape.logsumexp(s, Some(&num))?;
    let lse_den = tape.logsumexp(s, Some(&den))?;
    let per = tape.sub(lse_den, lse_num)?;
    Ok(Term {
        value: tape.mean(per),
        active: true,
    })
}

/// Confidence-weighted cross-entropy on the accepted pseudo-labels, divided
/// by the number accepted.
pub fn loss_pseudo<T: Real>(
    tape: &mut Tape<T>,
    z_unlabeled: Var,
    pseudo: &PseudoLabelBatch,
    prototypes: Var,
    tau_p: f64,
) -> Result<Term> {
    let (b, _) = rows(tape, z_unlabeled, "loss_pseudo")?;
    if pseudo.len() != b {
        return Err(Error::invalid(
            "loss_pseudo",
            format!("{} pseudo-labels for {b} rows", pseudo.len()),
        ));
    }
    let idx = pseudo.accepted_indices();
    if idx.is_empty() {
        return Ok(Term::inactive(tape));
    }
    let targets: Vec<usize> = idx.iter().map(|&i| pseudo.labels[i].label).collect();
    let conf: Vec<f64> = idx.iter().map(|&i| pseudo.labels[i].confidence).collect();
    let za = tape.gather_rows(z_unlabeled, &idx)?;
    let logits = proto_logits(tape, za, prototypes, tau_p)?;
    Ok(Term {
        value: cross_entropy(tape, logits, &targets, Some(&conf))?,
        active: true,
    })
}

/// Mean squared distance between paired student and teacher rows.
pub fn loss_consistency<T: Real>(tape: &mut Tape<T>, z_student: Var, z_teacher: Var) -> Result<Var> {
    let (b, _) = rows(tape, z_student, "loss_consistency")?;
    if tape.shape(z_student) != tape.shape(z_teacher) {
        return Err(Error::invalid(
            "loss_consistency",
            format!("shapes {:?} and {:?}", tape.shape(z_student), tape.shape(z_teacher)),
        ));
    }
    let d = tape.sub(z_student, z_teacher)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum(sq);
    Ok(tape.scale(s, T::lit(1.0 / b.max(1) as f64)))
}
