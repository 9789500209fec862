//! Randomized finite-difference checks for every registered operator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stproc_autodiff::gradcheck::check;
use stproc_autodiff::{Tape, Tensor, Var};

const TOL: f64 = 1e-4;
const H: f64 = 1e-5;
const SEEDS: u64 = 20;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.5..1.5))
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Reduces an arbitrary tensor to a scalar through a random weighting so
/// every output element gets a distinct upstream gradient.
fn weigh(tape: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = tape.shape(x).to_vec();
    let w = tape.constant(Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0)));
    let p = tape.mul(x, w).unwrap();
    tape.sum(p)
}

fn run(name: &str, mut case: impl FnMut(&mut ChaCha8Rng, u64) -> f64) {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + 13);
        let err = case(&mut rng, seed);
        assert!(err < TOL, "{name}: seed {seed} rel err {err:e}");
    }
}

#[test]
fn matmul_and_transpose() {
    run("matmul", |rng, seed| {
        let (m, k, n) = (dims(rng, 1, 5), dims(rng, 1, 5), dims(rng, 1, 5));
        let a = rand_t(rng, &[m, k]);
        let b = rand_t(rng, &[k, n]);
        check(&[a, b], H, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            Ok(weigh(t, y, seed))
        })
        .unwrap()
        .max_rel_err
    });
    run("matmul-3d", |rng, seed| {
        let (b0, m, k, n) = (dims(rng, 1, 3), dims(rng, 1, 4), dims(rng, 1, 4), dims(rng, 1, 4));
        let a = rand_t(rng, &[b0, m, k]);
        let b = rand_t(rng, &[k, n]);
        check(&[a, b], H, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            Ok(weigh(t, y, seed))
        })
        .unwrap()
        .max_rel_err
    });
    run("transpose", |rng, seed| {
        let a = {
            let s = [dims(rng, 1, 5), dims(rng, 1, 5)];
            rand_t(rng, &s)
        };
        check(&[a], H, |t, v| {
            let y = t.transpose(v[0])?;
            Ok(weigh(t, y, seed))
        })
        .unwrap()
        .max_rel_err
    });
}

#[test]
fn broadcasting_binary_ops() {
    run("add/sub/mul", |rng, seed| {
        let (m, n) = (dims(rng, 1, 4), dims(rng, 1, 4));
        let shapes: [(Vec<usize>, Vec<usize>); 4] = [
            (vec![m, n], vec![m, n]),
            (vec![m, n], vec![n]),
            (vec![n], vec![m, n]),
            (vec![m, n], vec![m, 1]),
        ];
        let (sa, sb) = &shapes[(seed % 4) as usize];
        let a = rand_t(rng, sa);
        let b = rand_t(rng, sb);
        check(&[a, b], H, |t, v| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(s, v[1])?;
            let p = t.mul(d, v[1])?;
            let q = t.sub(p, v[0])?;
            Ok(weigh(t, q, seed))
        })
        .unwrap()
        .max_rel_err
    });
}

#[test]
fn unary_ops() {
    run("unary", |rng, seed| {
        let shape = [dims(rng, 1, 4), dims(rng, 1, 4)];
        let a = rand_t(rng, &shape);
        let pos = Tensor::from_fn(&shape, |_| rng.random_range(0.2..2.0));
        check(&[a, pos], H, |t, v| {
            let x = t.scale(v[0], 1.7);
            let x = t.add_scalar(x, 0.3);
            let r = t.relu(x);
            let th = t.tanh(x);
            let sg = t.sigmoid(x);
            let e = t.exp(x);
            let l = t.log(v[1]);
            let om = t.one_minus(sg);
            let mut acc = t.add(r, th)?;
            for y in [sg, e, l, om] {
                acc = t.add(acc, y)?;
            }
            Ok(weigh(t, acc, seed))
        })
        .unwrap()
        .max_rel_err
    });
}

#[test]
fn softmax_logsumexp_and_reductions() {
    run("softmax", |rng, seed| {
        let a = {
            let s = [dims(rng, 1, 4), dims(rng, 2, 5)];
            rand_t(rng, &s)
        };
        let tau = rng.random_range(0.1..2.0);
        check(&[a], H, |t, v| {
            let y = t.softmax(v[0], tau)?;
            Ok(weigh(t, y, seed))
        })
        .unwrap()
        .max_rel_err
    });
    run("logsumexp-masked", |rng, seed| {
        let (m, n) = (dims(rng, 1, 4), dims(rng, 2, 5));
        let a = rand_t(rng, &[m, n]);
        let mask: Vec<bool> = (0..m * n).map(|i| i % n == 0 || rng.random_bool(0.6)).collect();
        check(&[a], H, |t, v| {
            let y = t.logsumexp(v[0], Some(&mask))?;
            let z = t.logsumexp(v[0], None)?;
            let s = t.add(y, z)?;
            Ok(weigh(t, s, seed))
        })
        .unwrap()
        .max_rel_err
    });
    run("sum/mean/sum_last", |rng, seed| {
        let a = {
            let s = [dims(rng, 1, 4), dims(rng, 1, 4)];
            rand_t(rng, &s)
        };
        check(&[a], H, |t, v| {
            let sl = t.sum_last(v[0]);
            let w = weigh(t, sl, seed);
            let m = t.mean(v[0]);
            let sq = t.mul(v[0], v[0])?;
            let s = t.sum(sq);
            let a1 = t.add(w, m)?;
            t.add(a1, s)
        })
        .unwrap()
        .max_rel_err
    });
}

#[test]
fn l2_normalize() {
    run("l2_normalize", |rng, seed| {
        let a = {
            let s = [dims(rng, 1, 5), dims(rng, 2, 6)];
            rand_t(rng, &s)
        };
        check(&[a], H, |t, v| {
            let y = t.l2_normalize(v[0]);
            Ok(weigh(t, y, seed))
        })
        .unwrap()
        .max_rel_err
    });
}

#[test]
fn structural_ops() {
    run("concat/slice/select/stack/reshape", |rng, seed| {
        let (m, n) = (dims(rng, 2, 4), dims(rng, 2, 4));
        let a = rand_t(rng, &[m, n]);
        let b = {
            let s = [m, dims(rng, 1, 3)];
            rand_t(rng, &s)
        };
        let c = rand_t(rng, &[m, n]);
        check(&[a, b, c], H, |t, v| {
            let cat = t.concat(&[v[0], v[1]], 1)?;
            let cat0 = t.concat(&[v[0], v[2]], 0)?;
            let sl = t.slice(cat, 1, 1, n)?;
            let sel = t.select(cat0, 0, 1)?;
            let st = t.stack(&[v[0], v[2]], 1)?;
            let rs = t.reshape(st, vec![2 * m * n])?;
            let x1 = weigh(t, sl, seed);
            let x2 = weigh(t, sel, seed + 1);
            let x3 = weigh(t, rs, seed + 2);
            let s = t.add(x1, x2)?;
            t.add(s, x3)
        })
        .unwrap()
        .max_rel_err
    });
    run("gather/pick", |rng, seed| {
        let (m, n) = (dims(rng, 2, 5), dims(rng, 2, 5));
        let a = rand_t(rng, &[m, n]);
        let idx: Vec<usize> = (0..dims(rng, 1, 6)).map(|_| rng.random_range(0..m)).collect();
        let pk: Vec<usize> = (0..idx.len()).map(|_| rng.random_range(0..n)).collect();
        check(&[a], H, |t, v| {
            let g = t.gather_rows(v[0], &idx)?;
            let p = t.pick(g, &pk)?;
            let x = weigh(t, g, seed);
            let y = weigh(t, p, seed + 3);
            t.add(x, y)
        })
        .unwrap()
        .max_rel_err
    });
}

#[test]
fn masked_mean_and_layer_norm() {
    run("masked_mean", |rng, seed| {
        let (b, tl, d) = (dims(rng, 1, 3), dims(rng, 1, 5), dims(rng, 1, 4));
        let a = rand_t(rng, &[b, tl, d]);
        let mask: Vec<bool> = (0..b * tl).map(|i| i % tl == 0 || rng.random_bool(0.5)).collect();
        check(&[a], H, |t, v| {
            let y = t.masked_mean(v[0], &mask)?;
            Ok(weigh(t, y, seed))
        })
        .unwrap()
        .max_rel_err
    });
    run("layer_norm", |rng, seed| {
        let (m, d) = (dims(rng, 1, 4), dims(rng, 2, 6));
        let a = rand_t(rng, &[m, d]);
        let g = rand_t(rng, &[d]);
        let b = rand_t(rng, &[d]);
        check(&[a, g, b], H, |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            Ok(weigh(t, y, seed))
        })
        .unwrap()
        .max_rel_err
    });
}

#[test]
fn attention_with_padding() {
    run("attention", |rng, seed| {
        let heads = dims(rng, 1, 2);
        let (b, tl, d) = (dims(rng, 1, 3), dims(rng, 1, 5), heads * dims(rng, 1, 3));
        let q = rand_t(rng, &[b, tl, d]);
        let k = rand_t(rng, &[b, tl, d]);
        let v = rand_t(rng, &[b, tl, d]);
        let mask: Vec<bool> = (0..b * tl).map(|i| i % tl == 0 || rng.random_bool(0.7)).collect();
        check(&[q, k, v], H, |t, x| {
            let y = t.attention(x[0], x[1], x[2], heads, &mask)?;
            Ok(weigh(t, y, seed))
        })
        .unwrap()
        .max_rel_err
    });
}

#[test]
fn gru_cell_step() {
    run("gru_cell", |rng, seed| {
        let (b, h) = (dims(rng, 1, 4), dims(rng, 1, 4));
        let xp = rand_t(rng, &[b, 3 * h]);
        let h0 = rand_t(rng, &[b, h]);
        let w = rand_t(rng, &[h, 3 * h]);
        let bias = rand_t(rng, &[3 * h]);
        let mask: Vec<bool> = (0..b).map(|i| i == 0 || rng.random_bool(0.7)).collect();
        check(&[xp, h0, w, bias], H, |t, v| {
            let h1 = t.gru_cell(v[0], v[1], v[2], v[3], &mask)?;
            // Second step exercises the recurrent path through h1.
            let h2 = t.gru_cell(v[0], h1, v[2], v[3], &mask)?;
            Ok(weigh(t, h2, seed))
        })
        .unwrap()
        .max_rel_err
    });
}

#[test]
fn dropout_is_a_constant_mask() {
    run("dropout", |rng, seed| {
        let a = rand_t(rng, &[3, 4]);
        let keep: Vec<bool> = (0..12).map(|_| rng.random_bool(0.5)).collect();
        check(&[a], H, |t, v| {
            let y = t.dropout(v[0], 0.25, &keep)?;
            Ok(weigh(t, y, seed))
        })
        .unwrap()
        .max_rel_err
    });
}

#[test]
fn documented_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap(), false);
    let y = t.l2_normalize(x);
    let v = t.value(y).data();
    assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);

    for tau in [0.05, 1.0, 7.0] {
        let x = t.constant(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
        let s = t.softmax(x, tau).unwrap();
        assert_eq!(t.value(s).data(), &[0.5, 0.5]);
    }

    let xm = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let i = t.constant(Tensor::identity(2));
    let xv = t.constant(xm.clone());
    let p = t.matmul(i, xv).unwrap();
    assert_eq!(t.value(p), &xm);

    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
    let c = t.leaf(Tensor::from_vec(vec![5.0, 5.0]), false);
    let sq = t.mul(x, x).unwrap();
    let sc = t.mul(sq, c).unwrap();
    let a = t.add(sq, sc).unwrap();
    let _ = a;
    let loss = t.sum(sq);
    let g = t.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    assert!(g.get(c).is_none(), "no gradient for requires_grad=false");
}

#[test]
fn l2_chain_against_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let a = rand_t(&mut rng, &[4, 5]);
    let w = rand_t(&mut rng, &[5, 5]);
    let r = check(&[a, w], 1e-4, |t, v| {
        let y = t.matmul(v[0], v[1])?;
        let z = t.l2_normalize(y);
        let s = t.tanh(z);
        Ok(weigh(t, s, 1))
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn shape_errors_name_the_op() {
    let mut t = Tape::<f64>::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[2, 3]));
    let e = t.matmul(a, b).unwrap_err().to_string();
    assert!(e.contains("matmul") && e.contains("[2, 3]"), "{e}");
    let c = t.constant(Tensor::zeros(&[4]));
    let e = t.add(a, c).unwrap_err().to_string();
    assert!(e.starts_with("add"), "{e}");
    assert!(t.backward(a).is_err(), "non-scalar backward must fail");
}
