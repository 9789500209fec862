/// Row-major `n x dim` matrix of embeddings, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Embeddings {
    /// Panics when `data.len() != n * dim`.
    pub fn new(n: usize, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * dim, "embedding buffer does not match {n} x {dim}");
        Embeddings { n, dim, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Embeddings::new(rows.len(), dim, data)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn dot(&self, i: usize, j: usize) -> f64 {
        self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b).sum()
    }

    pub fn select(&self, idx: &[usize]) -> Embeddings {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Embeddings::new(idx.len(), self.dim, data)
    }

    pub fn concat(&self, other: &Embeddings) -> Embeddings {
        assert_eq!(self.dim, other.dim, "embedding widths differ");
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Embeddings::new(self.n + other.n, self.dim, data)
    }
}
