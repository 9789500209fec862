//! Balanced batch composition.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

const MAX_RESAMPLES: usize = 1000;

/// Indices of one batch. `unlabeled` indexes the unlabeled pool, or the
/// labeled pool when `unlabeled_from_labeled` is set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub unlabeled_from_labeled: bool,
}

/// Draws `ceil(B/2)` labeled samples with replacement, weighted inversely
/// to class frequency and deduplicated, plus up to `floor(B/2)` unlabeled
/// samples from a per-epoch shuffled cycle. Without unlabeled data the
/// second half is drawn from the labeled pool instead.
#[derive(Clone, Debug)]
pub struct BatchComposer {
    labels: Vec<usize>,
    sampler: WeightedIndex<f64>,
    n_unlabeled: usize,
    half_labeled: usize,
    half_unlabeled: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchComposer {
    pub fn new(labels: &[usize], n_unlabeled: usize, batch_size: usize) -> Result<Self> {
        let mut counts = std::collections::BTreeMap::new();
        for &y in labels {
            *counts.entry(y).or_insert(0usize) += 1;
        }
        if counts.len() < 2 {
            return Err(Error::invalid(
                "compose_batch",
                format!("labeled pool spans {} class(es); need at least 2", counts.len()),
            ));
        }
        if batch_size < 4 {
            return Err(Error::invalid(
                "compose_batch",
                format!("batch size {batch_size} below 4"),
            ));
        }
        let weights: Vec<f64> = labels.iter().map(|y| 1.0 / counts[y] as f64).collect();
        let sampler = WeightedIndex::new(&weights).map_err(|e| Error::invalid("compose_batch", e.to_string()))?;
        let pool = if n_unlabeled == 0 { labels.len() } else { n_unlabeled };
        Ok(BatchComposer {
            labels: labels.to_vec(),
            sampler,
            n_unlabeled,
            half_labeled: batch_size.div_ceil(2),
            half_unlabeled: batch_size / 2,
            order: (0..pool).collect(),
            cursor: pool,
        })
    }

    pub fn unlabeled_from_labeled(&self) -> bool {
        self.n_unlabeled == 0
    }

    /// Reshuffles the unlabeled cycle.
    pub fn start_epoch<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.order.shuffle(rng);
        self.cursor = 0;
    }

    /// One inverse-frequency draw from the labeled pool.
    pub fn sample_labeled<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }

    fn draw_labeled<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<usize>> {
        for _ in 0..MAX_RESAMPLES {
            let mut picks: Vec<usize> = (0..self.half_labeled).map(|_| self.sample_labeled(rng)).collect();
            picks.sort_unstable();
            picks.dedup();
            let first = self.labels[picks[0]];
            if picks.len() >= 2 && picks.iter().any(|&i| self.labels[i] != first) {
                return Ok(picks);
            }
        }
        Err(Error::invalid(
            "compose_batch",
            "could not draw two labeled samples from two classes",
        ))
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<BatchPlan> {
        let labeled = self.draw_labeled(rng)?;
        let mut unlabeled = Vec::with_capacity(self.half_unlabeled);
        // One pass over the cycle at most, so a small pool cannot spin.
        let mut scanned = 0;
        while unlabeled.len() < self.half_unlabeled && scanned < self.order.len() {
            if self.cursor >= self.order.len() {
                self.start_epoch(rng);
            }
            let i = self.order[self.cursor];
            self.cursor += 1;
            scanned += 1;
            // A wrap reshuffles the cycle, so an index can come round again.
            if (self.unlabeled_from_labeled() && labeled.binary_search(&i).is_ok()) || unlabeled.contains(&i) {
                continue;
            }
            unlabeled.push(i);
        }
        Ok(BatchPlan {
            labeled,
            unlabeled,
            unlabeled_from_labeled: self.unlabeled_from_labeled(),
        })
    }
}
