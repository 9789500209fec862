use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Segment;
use crate::error::{Error, Result};
use crate::mode::{Mode, NUM_CLASSES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub label_ratio: f64,
    pub min_labeled_per_class: usize,
    /// Fraction of each class's labeled pool held out for validation before
    /// masking.
    pub validation_fraction: f64,
    /// Fraction of users whose segments form the test split.
    pub test_user_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            label_ratio: 0.05,
            min_labeled_per_class: 15,
            validation_fraction: 0.1,
            test_user_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub labeled: Vec<Segment>,
    /// Training segments whose labels are hidden (`label` is `None`).
    pub unlabeled: Vec<Segment>,
    /// True labels of `unlabeled`, only for pseudo-label diagnostics.
    pub unlabeled_truth: Vec<Option<Mode>>,
    pub validation: Vec<Segment>,
    pub test: Vec<Segment>,
}

/// Splits segments by user: a seeded `ceil(fraction * users)` of the users
/// (at least one when there are two or more) go to the test side.
pub fn split_by_user(segments: Vec<Segment>, test_fraction: f64, seed: u64) -> (Vec<Segment>, Vec<Segment>) {
    let mut users: Vec<String> = segments.iter().map(|s| s.user_id.clone()).collect();
    users.sort();
    users.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    users.shuffle(&mut rng);
    let mut n_test = ceil_ratio(test_fraction, users.len());
    if users.len() >= 2 {
        n_test = n_test.clamp(1, users.len() - 1);
    }
    let test_users = &users[..n_test.min(users.len())];
    segments.into_iter().partition(|s| !test_users.contains(&s.user_id))
}

/// Seeded stratified split of the training pool.
///
/// Per class, a validation share is carved off first; of the remainder
/// `max(ceil(ratio * n), floor)` segments keep their labels and the rest are
/// hidden. Pool segments without ground truth are left out. Classes absent
/// from the pool are allowed; a present class with fewer than the floor is a
/// configuration error.
pub fn make_split(pool: Vec<Segment>, test: Vec<Segment>, config: &SplitConfig, seed: u64) -> Result<DatasetSplit> {
    if !(config.label_ratio > 0.0 && config.label_ratio <= 1.0) {
        return Err(Error::Config(format!(
            "label ratio {} outside (0, 1]",
            config.label_ratio
        )));
    }
    if !(0.0..1.0).contains(&config.validation_fraction) {
        return Err(Error::Config(format!(
            "validation fraction {} outside [0, 1)",
            config.validation_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: [Vec<usize>; NUM_CLASSES] = Default::default();
    let mut unknown = 0;
    for (i, s) in pool.iter().enumerate() {
        match s.label {
            Some(m) => by_class[m.index()].push(i),
            None => unknown += 1,
        }
    }
    if unknown > 0 {
        log::info!("{unknown} pool segments without ground truth left out of the split");
    }

    let mut role = vec![Role::Excluded; pool.len()];
    for (k, idx) in by_class.iter_mut().enumerate() {
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let n_val = (config.validation_fraction * idx.len() as f64).round() as usize;
        let rest = idx.len() - n_val;
        let mode = Mode::from_index(k).expect("class index");
        if rest < config.min_labeled_per_class {
            return Err(Error::Config(format!(
                "class {mode} has {rest} labeled training segments, fewer than the required {}",
                config.min_labeled_per_class
            )));
        }
        let keep = ceil_ratio(config.label_ratio, rest)
            .max(config.min_labeled_per_class)
            .min(rest);
        for (j, &i) in idx.iter().enumerate() {
            role[i] = if j < n_val {
                Role::Validation
            } else if j < n_val + keep {
                Role::Labeled
            } else {
                Role::Unlabeled
            };
        }
    }

    let mut split = DatasetSplit {
        labeled: Vec::new(),
        unlabeled: Vec::new(),
        unlabeled_truth: Vec::new(),
        validation: Vec::new(),
        test,
    };
    for (s, r) in pool.into_iter().zip(role) {
        match r {
            Role::Labeled => split.labeled.push(s),
            Role::Validation => split.validation.push(s),
            Role::Unlabeled => {
                split.unlabeled_truth.push(s.label);
                split.unlabeled.push(Segment { label: None, ..s });
            }
            Role::Excluded => {}
        }
    }
    Ok(split)
}

#[derive(Clone, Copy, PartialEq)]
enum Role {
    Excluded,
    Labeled,
    Unlabeled,
    Validation,
}

/// `ceil(ratio * n)` tolerant to the rounding in products like `0.05 * 1000`.
fn ceil_ratio(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 - 1e-9).ceil().max(0.0) as usize
}
