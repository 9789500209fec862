//! The pseudo-label filter: exact acceptance rule and threshold monotonicity.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use stproc::objectives::{fuse, pseudo_label, PseudoLabel, PseudoLabelConfig};

const K: usize = 5;

/// Uniform point on the probability simplex.
fn simplex(rng: &mut impl Rng) -> Vec<f64> {
    let e: Vec<f64> = (0..K).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Top-1 index (first on ties), top-1 and top-2 values by a full sort.
fn reference(q: &[f64]) -> (usize, f64, f64) {
    let mut idx: Vec<usize> = (0..q.len()).collect();
    idx.sort_by(|&a, &b| q[b].partial_cmp(&q[a]).unwrap().then(a.cmp(&b)));
    (idx[0], q[idx[0]], q[idx[1]])
}

#[test]
fn acceptance_rule_is_exact_on_random_simplex_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100_000 {
        let q = simplex(&mut rng);
        let (tc, tm) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let p = PseudoLabel::from_distribution(q.clone(), tc, tm);
        let (top, c1, c2) = reference(&q);
        assert_eq!(p.label, top);
        assert_eq!(p.confidence, c1);
        assert_eq!(p.margin, c1 - c2);
        assert_eq!(p.accepted, c1 > tc && c1 - c2 > tm, "{q:?} tc={tc} tm={tm}");
    }
}

#[test]
fn acceptance_is_monotone_on_random_simplex_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100_000 {
        let q = simplex(&mut rng);
        let (tc, tm) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let (dc, dm) = (rng.random_range(0.0..0.3), rng.random_range(0.0..0.3));
        let loose = PseudoLabel::from_distribution(q.clone(), tc, tm).accepted;
        let tight_c = PseudoLabel::from_distribution(q.clone(), tc + dc, tm).accepted;
        let tight_m = PseudoLabel::from_distribution(q, tc, tm + dm).accepted;
        assert!(!tight_c || loose);
        assert!(!tight_m || loose);
    }
}

#[test]
fn worked_examples() {
    let p = PseudoLabel::from_distribution(vec![0.90, 0.05, 0.03, 0.01, 0.01], 0.8, 0.15);
    assert!(p.accepted);
    assert_eq!(p.label, 0);
    assert!((p.margin - 0.85).abs() < 1e-12);
    let p = PseudoLabel::from_distribution(vec![0.50, 0.45, 0.03, 0.01, 0.01], 0.4, 0.15);
    assert!(!p.accepted);
}

fn distribution() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, K).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn raising_thresholds_never_admits(
        q in distribution(),
        tc in 0.0f64..1.0,
        tm in 0.0f64..1.0,
        dc in 0.0f64..0.5,
        dm in 0.0f64..0.5,
    ) {
        let loose = PseudoLabel::from_distribution(q.clone(), tc, tm).accepted;
        let tight = PseudoLabel::from_distribution(q, tc + dc, tm + dm).accepted;
        prop_assert!(!tight || loose);
    }

    #[test]
    fn fusion_stays_on_the_simplex(a in distribution(), b in distribution(), beta in 0.0f64..=1.0) {
        let f = fuse(&a, &b, beta);
        prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(f.iter().all(|&x| x >= 0.0));
        for c in 0..K {
            prop_assert!((f[c] - (beta * a[c] + (1.0 - beta) * b[c])).abs() < 1e-15);
        }
    }

    #[test]
    fn batch_acceptance_rate_counts_accepted(rows in prop::collection::vec(distribution(), 1..40)) {
        let uniform = vec![vec![1.0 / K as f64; K]; rows.len()];
        let cfg = PseudoLabelConfig::default();
        let batch = pseudo_label(&rows, &uniform, &cfg).unwrap();
        let accepted = batch.labels.iter().filter(|p| p.accepted).count();
        prop_assert_eq!(batch.accepted_indices().len(), accepted);
        prop_assert!((batch.acceptance_rate() - accepted as f64 / rows.len() as f64).abs() < 1e-12);
    }
}
