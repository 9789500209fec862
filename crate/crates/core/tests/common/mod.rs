//! Shared builders for the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use stproc::embeddings::Embeddings;
use stproc::graph::{laplacian, AdjacencySource, BatchAdjacency, GraphLaplacian, SemanticGraph};
use stproc::ingest::{Segment, TrackPoint};
use stproc::objectives::{
    loss_consistency, loss_contrastive, loss_graph_smooth, loss_neighbor_contrast, loss_proto, loss_pseudo, loss_total,
    LossComponents, LossWeights, PseudoLabel, PseudoLabelBatch,
};
use stproc::Mode;
use stproc_autodiff::gradcheck::{check_with_floor, GradCheckReport};
use stproc_autodiff::{Tape, Tensor, Var};

pub const K: usize = 5;
pub const FD_STEP: f64 = 1e-5;
/// Gradient entries below this are compared in absolute terms; the losses
/// are O(10), so the difference quotient carries ~1e-10 of rounding noise.
pub const FD_FLOOR: f64 = 1e-5;

pub fn gaussian(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// Random unit rows.
pub fn unit_embeddings(rng: &mut impl Rng, n: usize, d: usize) -> Embeddings {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect();
    Embeddings::from_rows(&rows)
}

/// Symmetric nonnegative weights with an empty diagonal; each pair is an
/// edge with probability `density`.
pub fn random_adjacency(rng: &mut impl Rng, n: usize, density: f64) -> BatchAdjacency {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < density {
                let w = rng.random_range(0.05..1.0);
                a[i * n + j] = w;
                a[j * n + i] = w;
            }
        }
    }
    BatchAdjacency::from_dense(n, a, AdjacencySource::InBatch).unwrap()
}

/// Which objective a finite-difference case differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Contrastive,
    Prototype,
    GraphSmooth,
    NeighborContrast,
    Pseudo,
    Consistency,
    Composite,
}

impl Objective {
    pub const ALL: [Objective; 7] = [
        Objective::Contrastive,
        Objective::Prototype,
        Objective::GraphSmooth,
        Objective::NeighborContrast,
        Objective::Pseudo,
        Objective::Consistency,
        Objective::Composite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Contrastive => "view contrastive",
            Objective::Prototype => "prototype cross-entropy",
            Objective::GraphSmooth => "graph smoothness",
            Objective::NeighborContrast => "neighbour contrastive",
            Objective::Pseudo => "pseudo-label",
            Objective::Consistency => "teacher consistency",
            Objective::Composite => "composite",
        }
    }
}

/// A random micro instance: raw (unnormalized) student views, a teacher
/// target, prototypes, labels, a batch graph and pseudo-labels.
pub struct Micro {
    pub b: usize,
    pub d: usize,
    pub z1: Tensor<f64>,
    pub z2: Tensor<f64>,
    pub zt: Tensor<f64>,
    pub protos: Tensor<f64>,
    pub labels: Vec<usize>,
    pub adj: BatchAdjacency,
    pub lap: GraphLaplacian,
    pub pseudo: PseudoLabelBatch,
}

pub fn micro(seed: u64, max_b: usize, max_d: usize) -> Micro {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.random_range(2..=max_b);
    let d = rng.random_range(2..=max_d);
    let adj = loop {
        let a = random_adjacency(&mut rng, b, 0.6);
        if a.has_edges() {
            break a;
        }
    };
    let lap = laplacian(&adj).unwrap();
    // Every other row is confidently pseudo-labeled.
    let pseudo = PseudoLabelBatch {
        labels: (0..b)
            .map(|i| {
                let top = rng.random_range(0..K);
                let peak = if i % 2 == 0 { rng.random_range(0.85..0.95) } else { 0.3 };
                let mut q = vec![(1.0 - peak) / (K - 1) as f64; K];
                q[top] = peak;
                PseudoLabel::from_distribution(q, 0.8, 0.15)
            })
            .collect(),
    };
    Micro {
        b,
        d,
        z1: gaussian(&mut rng, &[b, d]),
        z2: gaussian(&mut rng, &[b, d]),
        zt: gaussian(&mut rng, &[b, d]),
        protos: gaussian(&mut rng, &[K, d]),
        labels: (0..b).map(|_| rng.random_range(0..K)).collect(),
        adj,
        lap,
        pseudo,
    }
}

/// Builds the objective on normalized embeddings; inputs are
/// `[z1, z2, prototypes]`, the teacher target is a constant.
pub fn objective(tape: &mut Tape<f64>, v: &[Var], m: &Micro, which: Objective, w: &LossWeights) -> Var {
    let z1 = tape.l2_normalize(v[0]);
    let z2 = tape.l2_normalize(v[1]);
    let p = tape.l2_normalize(v[2]);
    let zt_raw = tape.constant(m.zt.clone());
    let zt = tape.l2_normalize(zt_raw);
    match which {
        Objective::Contrastive => loss_contrastive(tape, z1, z2, w.tau_c).unwrap(),
        Objective::Prototype => loss_proto(tape, z1, &m.labels, p, w.tau_p).unwrap().value,
        Objective::GraphSmooth => loss_graph_smooth(tape, z1, &m.lap).unwrap(),
        Objective::NeighborContrast => loss_neighbor_contrast(tape, z1, &m.adj, w.tau_n).unwrap().value,
        Objective::Pseudo => loss_pseudo(tape, z2, &m.pseudo, p, w.tau_p).unwrap().value,
        Objective::Consistency => loss_consistency(tape, z1, zt).unwrap(),
        Objective::Composite => {
            let comps = LossComponents {
                ctr: loss_contrastive(tape, z1, z2, w.tau_c).unwrap(),
                proto: loss_proto(tape, z1, &m.labels, p, w.tau_p).unwrap().value,
                smooth: loss_graph_smooth(tape, z1, &m.lap).unwrap(),
                nbr: loss_neighbor_contrast(tape, z1, &m.adj, w.tau_n).unwrap().value,
                pseudo: loss_pseudo(tape, z2, &m.pseudo, p, w.tau_p).unwrap().value,
                cons: loss_consistency(tape, z1, zt).unwrap(),
            };
            // Mid-ramp, so both ramped weights are strictly inside (0, max).
            loss_total(tape, &comps, w, 12.5).unwrap().0
        }
    }
}

pub fn fd_check(m: &Micro, which: Objective) -> GradCheckReport {
    let w = LossWeights::default();
    let inputs = [m.z1.clone(), m.z2.clone(), m.protos.clone()];
    check_with_floor(&inputs, FD_STEP, FD_FLOOR, |tape, v| {
        Ok(objective(tape, v, m, which, &w))
    })
    .unwrap()
}

/// Straight-line constant-speed segment with `n` fixes.
pub fn line_segment(n: usize, speed: f64, label: Option<Mode>, user: &str, id: &str) -> Segment {
    Segment {
        points: (0..n)
            .map(|i| TrackPoint {
                x: speed * 2.0 * i as f64,
                y: 0.0,
                t: 1.0e9 + 2.0 * i as f64,
            })
            .collect(),
        label,
        user_id: user.into(),
        segment_id: id.into(),
    }
}

/// A small model and schedule that trains in well under a second per epoch.
pub fn tiny_config(epochs: usize, seed: u64) -> stproc::train::TrainConfig {
    let mut c = stproc::train::TrainConfig::default();
    c.run.batch_size = 16;
    c.run.epochs = epochs;
    c.run.patience = epochs;
    c.run.seed = seed;
    c.encoder.d_model = 8;
    c.encoder.n_attn_layers = 1;
    c.encoder.n_heads = 2;
    c.encoder.d_stat_hidden = 16;
    c.encoder.embed_dim = 8;
    c.encoder.t_max = 16;
    c.graph.k = 4;
    c.graph.warmup_epochs = 1;
    c.graph.rebuild_every = 1;
    c.optimizer.lr_max = 3e-3;
    c.optimizer.warmup_epochs = 1.0;
    c
}

/// The bundled generator shrunk to `per_class` short segments per mode.
pub fn tiny_synthetic(per_class: usize, seed: u64) -> Vec<Segment> {
    let cfg = stproc::synthetic::SyntheticConfig {
        per_class,
        users: 5,
        min_len: 24,
        max_len: 32,
        ..Default::default()
    };
    stproc::synthetic::generate(&cfg, seed).unwrap()
}

/// Top-k ids by cosine, ties to the lower id, computed by full sort.
pub fn brute_knn(z: &Embeddings, k: usize) -> Vec<Vec<usize>> {
    (0..z.len())
        .map(|i| {
            let mut c: Vec<(usize, f64)> = (0..z.len()).filter(|&j| j != i).map(|j| (j, z.dot(i, j))).collect();
            c.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            c.into_iter().take(k).map(|(j, _)| j).collect()
        })
        .collect()
}

/// Row-normalized propagation operator with self-loops on isolated nodes.
pub fn propagation_operator(g: &SemanticGraph) -> DMatrix<f64> {
    let n = g.len();
    let a = DMatrix::from_fn(n, n, |i, j| g.weight(i, j));
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        if deg[i] == 0.0 || deg[j] == 0.0 {
            if i == j {
                1.0
            } else {
                0.0
            }
        } else {
            a[(i, j)] / (deg[i] * deg[j]).sqrt()
        }
    })
}

/// (1 - alpha) (I - alpha S)^-1 Y.
pub fn propagation_closed_form(g: &SemanticGraph, seeds: &[Option<usize>], k: usize, alpha: f64) -> DMatrix<f64> {
    let n = g.len();
    let s = propagation_operator(g);
    let y = DMatrix::from_fn(n, k, |i, c| if seeds[i] == Some(c) { 1.0 } else { 0.0 });
    let m = DMatrix::identity(n, n) - s * alpha;
    m.lu().solve(&y).unwrap() * (1.0 - alpha)
}
