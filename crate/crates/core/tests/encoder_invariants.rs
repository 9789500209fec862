//! Encoder behaviour that must hold for any weights: batch independence,
//! permutation equivariance, padding and masking invariance, gradients.

mod common;

use common::{gaussian, FD_FLOOR, FD_STEP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stproc::encoder::{Encoder, EncoderBatch, EncoderConfig};
use stproc::featurize::{fit_standardizer, DualView, Standardizer};
use stproc::ingest::{Segment, TrackPoint};
use stproc_autodiff::gradcheck::check_with_floor;
use stproc_autodiff::Tape;

fn micro() -> EncoderConfig {
    EncoderConfig {
        d_model: 8,
        n_attn_layers: 1,
        n_heads: 2,
        d_stat_hidden: 8,
        embed_dim: 4,
        t_max: 12,
        ..EncoderConfig::default()
    }
}

/// Random-walk segment with `n` fixes two seconds apart.
fn view(rng: &mut impl Rng, n: usize, t_max: usize) -> DualView {
    let (mut x, mut y) = (0.0, 0.0);
    let points = (0..n)
        .map(|i| {
            x += rng.random_range(0.0..15.0);
            y += rng.random_range(-4.0..4.0);
            TrackPoint {
                x,
                y,
                t: 2.0 * i as f64,
            }
        })
        .collect();
    let seg = Segment {
        points,
        label: None,
        user_id: "u".into(),
        segment_id: "s".into(),
    };
    DualView::from_segment(&seg, t_max).unwrap()
}

fn setup(seed: u64) -> (Encoder<f64>, Vec<DualView>, Standardizer) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = micro();
    let enc = Encoder::new(cfg.clone(), &mut rng).unwrap();
    let views: Vec<DualView> = (0..6)
        .map(|_| {
            let n = rng.random_range(4..=20);
            view(&mut rng, n, cfg.t_max)
        })
        .collect();
    let std = fit_standardizer(&views.iter().collect::<Vec<_>>()).unwrap();
    (enc, views, std)
}

fn rows(enc: &Encoder<f64>, views: &[&DualView], std: &Standardizer) -> Vec<Vec<f64>> {
    let z = enc.embed(views, std, 64).unwrap();
    (0..views.len()).map(|i| z.row(i).to_vec()).collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn embedding_does_not_depend_on_batch_mates() {
    for seed in 0..5 {
        let (enc, views, std) = setup(seed);
        let refs: Vec<&DualView> = views.iter().collect();
        let together = rows(&enc, &refs, &std);
        for (i, v) in views.iter().enumerate() {
            let alone = rows(&enc, &[v], &std);
            assert!(close(&alone[0], &together[i], 1e-9), "seed {seed} view {i}");
        }
    }
}

#[test]
fn permuting_the_batch_permutes_the_embeddings() {
    let (enc, views, std) = setup(7);
    let refs: Vec<&DualView> = views.iter().collect();
    let base = rows(&enc, &refs, &std);
    let perm = [3, 0, 5, 1, 4, 2];
    let shuffled: Vec<&DualView> = perm.iter().map(|&i| &views[i]).collect();
    let out = rows(&enc, &shuffled, &std);
    for (k, &i) in perm.iter().enumerate() {
        assert!(close(&out[k], &base[i], 1e-9));
    }
}

#[test]
fn masked_rows_carry_no_information() {
    let (enc, views, std) = setup(8);
    let mut v = views.iter().find(|v| v.valid_len() >= 8).unwrap().clone();
    v.mask[2] = false;
    v.mask[5] = false;
    let before = rows(&enc, &[&v], &std);
    v.seq[2] = [1e3, -1e3, 50.0, 50.0];
    v.seq[5] = [-7.0, 7.0, -3.0, 9.0];
    let after = rows(&enc, &[&v], &std);
    assert!(close(&before[0], &after[0], 1e-9));
}

#[test]
fn initialization_is_seeded() {
    let a: Encoder<f64> = Encoder::new(micro(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b: Encoder<f64> = Encoder::new(micro(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let c: Encoder<f64> = Encoder::new(micro(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, c.params);
}

#[test]
fn parameter_gradients_match_finite_differences() {
    for seed in 0..3 {
        let (enc, views, std) = setup(20 + seed);
        let refs: Vec<&DualView> = views.iter().take(3).collect();
        let batch = EncoderBatch::<f64>::from_views(&refs, &std).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = gaussian(&mut rng, &[refs.len(), enc.config.embed_dim]);
        let inputs = enc.params.tensors().to_vec();
        let r = check_with_floor(&inputs, FD_STEP, FD_FLOOR, |tape: &mut Tape<f64>, v| {
            let z = enc.forward(tape, v, &batch, None).unwrap().z;
            let t = tape.constant(target.clone());
            let p = tape.mul(z, t)?;
            Ok(tape.sum(p))
        })
        .unwrap();
        assert!(
            r.max_rel_err < 1e-3,
            "seed {seed}: rel err {:e} at {:?}",
            r.max_rel_err,
            r.worst
        );
    }
}
