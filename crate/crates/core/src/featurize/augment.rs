use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sequence::{forward_velocities, DualView};
use super::stats::stat_features;
use crate::error::Result;
use crate::ingest::TrackPoint;

/// Fewest fixes an augmented view keeps (or all of them, if fewer exist).
pub const MIN_SURVIVORS: usize = 8;
const MASK_ATTEMPTS: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub mask_prob: f64,
    /// Standard deviation of the positional noise, meters.
    pub jitter_sigma: f64,
    /// Timestamps are stretched by a factor drawn from `1 +- time_warp_scale`.
    pub time_warp_scale: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            mask_prob: 0.15,
            jitter_sigma: 3.0,
            time_warp_scale: 0.0,
        }
    }
}

impl AugmentationPolicy {
    pub fn identity() -> Self {
        AugmentationPolicy {
            mask_prob: 0.0,
            jitter_sigma: 0.0,
            time_warp_scale: 0.0,
        }
    }

    /// The teacher's weak variant: same jitter, no masking or warping.
    pub fn weak(&self) -> Self {
        AugmentationPolicy {
            jitter_sigma: self.jitter_sigma,
            ..Self::identity()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.mask_prob == 0.0 && self.jitter_sigma == 0.0 && self.time_warp_scale == 0.0
    }
}

/// Masks fixes, jitters positions and optionally warps time, then
/// re-derives the sequence (masked rows zeroed and flagged) and the feature
/// vector from the surviving fixes.
pub fn augment<R: Rng + ?Sized>(view: &DualView, policy: &AugmentationPolicy, rng: &mut R) -> Result<DualView> {
    if policy.is_identity() {
        return Ok(view.clone());
    }
    let n = view.points.len();
    let mut points: Vec<TrackPoint> = view.points.clone();

    if policy.time_warp_scale > 0.0 && n > 0 {
        let s = 1.0 + rng.random_range(-policy.time_warp_scale..=policy.time_warp_scale);
        let t0 = points[0].t;
        for p in &mut points {
            p.t = t0 + (p.t - t0) * s;
        }
    }

    let mut keep = vec![true; n];
    if policy.mask_prob > 0.0 {
        let need = MIN_SURVIVORS.min(n);
        let mut ok = false;
        for _ in 0..MASK_ATTEMPTS {
            for (k, m) in keep.iter_mut().zip(&view.mask) {
                *k = *m && rng.random::<f64>() >= policy.mask_prob;
            }
            if keep.iter().filter(|&&k| k).count() >= need {
                ok = true;
                break;
            }
        }
        if !ok {
            // Top up with randomly chosen previously valid rows.
            let mut candidates: Vec<usize> = (0..n).filter(|&i| view.mask[i] && !keep[i]).collect();
            while keep.iter().filter(|&&k| k).count() < need && !candidates.is_empty() {
                let j = rng.random_range(0..candidates.len());
                keep[candidates.swap_remove(j)] = true;
            }
        }
    } else {
        keep.copy_from_slice(&view.mask);
    }

    if policy.jitter_sigma > 0.0 {
        let noise = Normal::new(0.0, policy.jitter_sigma).expect("finite sigma");
        for p in &mut points {
            p.x += noise.sample(rng);
            p.y += noise.sample(rng);
        }
    }

    let alive_n = keep.iter().filter(|&&k| k).count() as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for (p, _) in points.iter().zip(&keep).filter(|(_, &k)| k) {
        mx += p.x;
        my += p.y;
    }
    for p in &mut points {
        p.x -= mx / alive_n;
        p.y -= my / alive_n;
    }
    let alive: Vec<TrackPoint> = points.iter().zip(&keep).filter(|(_, &k)| k).map(|(p, _)| *p).collect();
    let vel = forward_velocities(&alive);
    let mut seq = vec![[0.0; 4]; n];
    let mut j = 0;
    for (i, row) in seq.iter_mut().enumerate() {
        if keep[i] {
            *row = [alive[j].x, alive[j].y, vel[j].0, vel[j].1];
            j += 1;
        }
    }
    let f = stat_features(&alive)?;
    Ok(DualView {
        f,
        seq,
        mask: keep,
        points,
    })
}
