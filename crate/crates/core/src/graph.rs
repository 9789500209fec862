//! Cosine k-NN graphs over embeddings, batch adjacencies, the graph
//! Laplacian and label propagation.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embeddings::Embeddings;
use crate::error::{Error, Result};

/// Symmetrized k-NN graph.
///
/// Node `i` selects its `k` most similar nodes (ties to the lower id); an
/// undirected edge exists when either endpoint selected the other, weighted
/// `max(0, sim)`, and zero-weight edges are dropped. A node all of whose
/// selections have non-positive similarity can therefore end up isolated.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticGraph {
    k: usize,
    knn: Vec<Vec<(usize, f64)>>,
    adj: Vec<Vec<(usize, f64)>>,
}

impl SemanticGraph {
    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// The `k` selected neighbors of `i` with raw similarities, most similar
    /// first.
    pub fn knn(&self, i: usize) -> &[(usize, f64)] {
        &self.knn[i]
    }

    /// Symmetrized edges of `i`, sorted by neighbor id.
    pub fn edges(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adj[i]
            .binary_search_by(|e| e.0.cmp(&j))
            .map_or(0.0, |p| self.adj[i][p].1)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// One `i\tj\tweight` line per undirected edge with `i < j`.
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for (i, row) in self.adj.iter().enumerate() {
            for &(j, w) in row {
                if i < j {
                    writeln!(out, "{i}\t{j}\t{w}").expect("writing to a String");
                }
            }
        }
        out
    }

    /// Dense symmetric adjacency of the whole graph.
    pub fn dense(&self) -> BatchAdjacency {
        let ids: Vec<usize> = (0..self.len()).collect();
        clip_subgraph(self, &ids).expect("identity clip has unique ids")
    }
}

fn by_similarity(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

fn knn_lists(z: &Embeddings, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = z.len();
    let mut out = Vec::with_capacity(n);
    let mut cand: Vec<(usize, f64)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i).map(|j| (j, z.dot(i, j).clamp(-1.0, 1.0))));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by_similarity);
            cand.truncate(k);
        }
        cand.sort_by(by_similarity);
        out.push(cand.clone());
    }
    out
}

fn symmetrize(knn: Vec<Vec<(usize, f64)>>, k: usize) -> SemanticGraph {
    let n = knn.len();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, row) in knn.iter().enumerate() {
        for &(j, s) in row {
            if s > 0.0 {
                adj[i].push((j, s));
                adj[j].push((i, s));
            }
        }
    }
    for row in &mut adj {
        row.sort_by(|a, b| a.0.cmp(&b.0));
        row.dedup_by(|a, b| a.0 == b.0);
    }
    SemanticGraph { k, knn, adj }
}

/// Exact cosine k-NN graph over unit-norm rows.
pub fn build_global_knn(z: &Embeddings, k: usize) -> Result<SemanticGraph> {
    if z.len() <= k {
        return Err(Error::invalid(
            "build_global_knn",
            format!("{} nodes for k = {k}", z.len()),
        ));
    }
    Ok(symmetrize(knn_lists(z, k), k))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjacencySource {
    GlobalClip,
    InBatch,
}

/// Dense symmetric batch adjacency with zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchAdjacency {
    n: usize,
    data: Vec<f64>,
    pub source: AdjacencySource,
}

impl BatchAdjacency {
    pub fn from_dense(n: usize, data: Vec<f64>, source: AdjacencySource) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::invalid(
                "adjacency",
                format!("{} entries for {n} nodes", data.len()),
            ));
        }
        Ok(BatchAdjacency { n, data, source })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn has_edges(&self) -> bool {
        self.data.iter().any(|&w| w > 0.0)
    }
}

/// Restriction of the global graph to `ids`, in batch order.
pub fn clip_subgraph(graph: &SemanticGraph, ids: &[usize]) -> Result<BatchAdjacency> {
    let n = ids.len();
    let mut pos = std::collections::HashMap::with_capacity(n);
    for (b, &id) in ids.iter().enumerate() {
        if id >= graph.len() {
            return Err(Error::invalid(
                "clip_subgraph",
                format!("node {id} outside graph of {}", graph.len()),
            ));
        }
        if pos.insert(id, b).is_some() {
            return Err(Error::invalid("clip_subgraph", format!("node {id} appears twice")));
        }
    }
    let mut data = vec![0.0; n * n];
    for (b, &id) in ids.iter().enumerate() {
        for &(j, w) in graph.edges(id) {
            if let Some(&c) = pos.get(&j) {
                data[b * n + c] = w;
            }
        }
    }
    Ok(BatchAdjacency {
        n,
        data,
        source: AdjacencySource::GlobalClip,
    })
}

/// In-batch k-NN graph; `k` is lowered to `B - 1` when the batch is too
/// small.
pub fn dynamic_batch_knn(z: &Embeddings, k: usize) -> BatchAdjacency {
    let n = z.len();
    let k = if n <= k {
        let lowered = n.saturating_sub(1);
        log::warn!("dynamic_batch_knn: batch of {n} too small for k = {k}, using {lowered}");
        lowered
    } else {
        k
    };
    let g = symmetrize(knn_lists(z, k), k);
    BatchAdjacency {
        source: AdjacencySource::InBatch,
        ..g.dense()
    }
}

/// Unnormalized Laplacian `Deg - A`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphLaplacian {
    n: usize,
    data: Vec<f64>,
}

impl GraphLaplacian {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

pub fn laplacian(a: &BatchAdjacency) -> Result<GraphLaplacian> {
    let n = a.len();
    for i in 0..n {
        if a.get(i, i) != 0.0 {
            return Err(Error::invalid("laplacian", format!("nonzero diagonal at {i}")));
        }
        for j in 0..i {
            if a.get(i, j) != a.get(j, i) {
                return Err(Error::invalid("laplacian", format!("asymmetric entry ({i}, {j})")));
            }
        }
    }
    let mut data: Vec<f64> = a.data().iter().map(|w| -w).collect();
    for i in 0..n {
        data[i * n + i] = a.data()[i * n..(i + 1) * n].iter().sum();
    }
    Ok(GraphLaplacian { n, data })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationConfig {
    pub alpha: f64,
    pub iters: usize,
    /// Reset seed rows to their one-hot labels after every iteration.
    pub clamp_seeds: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            alpha: 0.99,
            iters: 20,
            clamp_seeds: true,
        }
    }
}

/// Class scores before row normalization: `iters` rounds of
/// `F <- alpha * S * F + (1 - alpha) * Y` from `F = Y`, where
/// `S = D^-1/2 A D^-1/2` and isolated nodes carry a unit self-loop.
pub fn label_propagate_raw(
    graph: &SemanticGraph,
    seeds: &[Option<usize>],
    num_classes: usize,
    config: &PropagationConfig,
) -> Result<Vec<Vec<f64>>> {
    let n = graph.len();
    if seeds.len() != n {
        return Err(Error::invalid(
            "label_propagate",
            format!("{} seeds for {n} nodes", seeds.len()),
        ));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::invalid(
            "label_propagate",
            format!("alpha {} outside (0, 1)", config.alpha),
        ));
    }
    if seeds.iter().all(Option::is_none) {
        return Err(Error::invalid("label_propagate", "no seed labels"));
    }
    let mut y = vec![vec![0.0; num_classes]; n];
    for (i, s) in seeds.iter().enumerate() {
        if let Some(c) = *s {
            if c >= num_classes {
                return Err(Error::invalid(
                    "label_propagate",
                    format!("seed class {c} out of range"),
                ));
            }
            y[i][c] = 1.0;
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| graph.edges(i).iter().map(|e| e.1).sum()).collect();
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 1.0 })
        .collect();

    let a = config.alpha;
    let mut f = y.clone();
    let mut next = vec![vec![0.0; num_classes]; n];
    for _ in 0..config.iters {
        for i in 0..n {
            let row = &mut next[i];
            row.iter_mut().for_each(|v| *v = 0.0);
            if deg[i] > 0.0 {
                for &(j, w) in graph.edges(i) {
                    let s = w * inv_sqrt[i] * inv_sqrt[j];
                    for (r, fj) in row.iter_mut().zip(&f[j]) {
                        *r += s * fj;
                    }
                }
            } else {
                row.copy_from_slice(&f[i]);
            }
            for (r, yi) in row.iter_mut().zip(&y[i]) {
                *r = a * *r + (1.0 - a) * yi;
            }
            if config.clamp_seeds && seeds[i].is_some() {
                row.copy_from_slice(&y[i]);
            }
        }
        std::mem::swap(&mut f, &mut next);
    }
    Ok(f)
}

/// [`label_propagate_raw`] with rows normalized to sum 1; rows that
/// received no mass become uniform.
pub fn label_propagate(
    graph: &SemanticGraph,
    seeds: &[Option<usize>],
    num_classes: usize,
    config: &PropagationConfig,
) -> Result<Vec<Vec<f64>>> {
    let mut f = label_propagate_raw(graph, seeds, num_classes, config)?;
    for row in &mut f {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        } else {
            row.iter_mut().for_each(|v| *v = 1.0 / num_classes as f64);
        }
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(rows: &[&[f64]]) -> Embeddings {
        let rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                r.iter().map(|x| x / n).collect()
            })
            .collect();
        Embeddings::from_rows(&rows)
    }

    #[test]
    fn identical_points_form_complete_graph() {
        let z = unit(&[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]]);
        let g = build_global_knn(&z, 2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g.weight(i, j), if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn too_few_nodes() {
        let z = unit(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(build_global_knn(&z, 2).is_err());
    }

    #[test]
    fn negative_similarity_edge_is_dropped() {
        let z = unit(&[&[1.0, 0.0], &[-1.0, 0.1]]);
        let g = build_global_knn(&z, 1).unwrap();
        assert_eq!(g.num_edges(), 0);
        assert_eq!(g.knn(0)[0].0, 1);
        assert!(g.knn(0)[0].1 < 0.0);
    }

    #[test]
    fn clip_rules() {
        let z = unit(&[&[1.0, 0.0], &[1.0, 0.1], &[0.0, 1.0], &[0.1, 1.0]]);
        let g = build_global_knn(&z, 1).unwrap();
        let one = clip_subgraph(&g, &[2]).unwrap();
        assert_eq!(one.data(), &[0.0]);
        let apart = clip_subgraph(&g, &[0, 2]).unwrap();
        assert!(!apart.has_edges());
        assert!(clip_subgraph(&g, &[1, 1]).is_err());
        let full = g.dense();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(full.get(i, j), g.weight(i, j));
            }
        }
    }

    #[test]
    fn two_node_batch_graph_and_laplacian() {
        let z = unit(&[&[1.0, 0.0], &[0.6, 0.8]]);
        let a = dynamic_batch_knn(&z, 10);
        assert_eq!(a.source, AdjacencySource::InBatch);
        assert!((a.get(0, 1) - 0.6).abs() < 1e-15);
        let l = laplacian(&a).unwrap();
        assert_eq!(l.get(0, 0), a.get(0, 1));
        assert_eq!(l.get(0, 1), -a.get(0, 1));
        let zero = BatchAdjacency::from_dense(2, vec![0.0; 4], AdjacencySource::InBatch).unwrap();
        assert!(laplacian(&zero).unwrap().data().iter().all(|&v| v == 0.0));
        let asym = BatchAdjacency::from_dense(2, vec![0.0, 1.0, 0.5, 0.0], AdjacencySource::InBatch).unwrap();
        assert!(laplacian(&asym).is_err());
    }

    #[test]
    fn propagation_seed_rules() {
        let z = unit(&[&[1.0, 0.0], &[1.0, 0.1], &[0.9, 0.2], &[-1.0, -0.05]]);
        let g = build_global_knn(&z, 1).unwrap();
        let cfg = PropagationConfig::default();
        assert!(label_propagate(&g, &[None; 4], 5, &cfg).is_err());
        let all = [Some(0), Some(1), Some(2), Some(3)];
        let f = label_propagate(&g, &all, 5, &cfg).unwrap();
        for (i, row) in f.iter().enumerate() {
            assert_eq!(row[i], 1.0);
        }
        // Node 3 only links to a negative-similarity neighbor: isolated.
        assert_eq!(g.degree(3), 0);
        let f = label_propagate(&g, &[Some(1), None, None, None], 5, &cfg).unwrap();
        assert!(f[3].iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert!(f[2][1] > 0.99);
    }
}
