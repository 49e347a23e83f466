//! k-nearest-neighbour graph over scene points and its random-walk Laplacian.

use nalgebra::DMatrix;

use super::cloud::Vec3;
use super::kdtree::KdTree;
use crate::error::{Error, Result};

pub const NEGLIGIBLE_EDGE: f64 = 1e-12;

/// Symmetric weighted adjacency in compressed-row form.
#[derive(Debug, Clone)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
    degree: Vec<f64>,
}

impl Graph {
    /// Builds a graph from an explicit undirected edge list `(p, q, weight)`.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(p, q, w) in edges {
            if p != q {
                adj[p].push((q, w));
                adj[q].push((p, w));
            }
        }
        Self::from_adjacency(adj)
    }

    fn from_adjacency(mut adj: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = vec![0];
        let mut neighbors = Vec::new();
        let mut weights = Vec::new();
        let mut degree = Vec::with_capacity(adj.len());
        for list in &mut adj {
            list.sort_by(|a, b| a.0.cmp(&b.0));
            list.dedup_by_key(|e| e.0);
            let mut deg = 0.0;
            for &(q, w) in list.iter() {
                neighbors.push(q);
                weights.push(w);
                deg += w;
            }
            degree.push(deg);
            offsets.push(neighbors.len());
        }
        Graph {
            offsets,
            neighbors,
            weights,
            degree,
        }
    }

    pub fn len(&self) -> usize {
        self.degree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degree.is_empty()
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn neighbors(&self, p: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[p]..self.offsets[p + 1];
        self.neighbors[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// Component id per node, numbered in order of first appearance. Edges
    /// lighter than `NEGLIGIBLE_EDGE` times the smaller endpoint degree do not
    /// connect: across them the spectrum is numerically that of a cut.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let n = self.len();
        let mut comp = vec![usize::MAX; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = count;
            stack.push(s);
            while let Some(p) = stack.pop() {
                for (q, w) in self.neighbors(p) {
                    let floor = NEGLIGIBLE_EDGE * self.degree[p].min(self.degree[q]);
                    if w > floor && comp[q] == usize::MAX {
                        comp[q] = count;
                        stack.push(q);
                    }
                }
            }
            count += 1;
        }
        (comp, count)
    }

    /// `y = D^{-1/2} W D^{-1/2} x`.
    pub fn normalized_adjacency_apply(&self, x: &[f64], y: &mut [f64]) {
        for p in 0..self.len() {
            let mut acc = 0.0;
            for (q, w) in self.neighbors(p) {
                acc += w * x[q] / self.degree[q].sqrt();
            }
            y[p] = acc / self.degree[p].sqrt();
        }
    }
}

/// Connects every point to its `k` nearest neighbours (the relation is made
/// symmetric by union) with Gaussian weights `exp(-d^2 / 2 sigma^2)`.
pub fn build_knn_graph(points: &[Vec3], k: usize, sigma: f64) -> Result<Graph> {
    let n = points.len();
    if n <= k {
        return Err(Error::TooFewPoints { n, k });
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree = KdTree::new(&raw);
    let two_s2 = 2.0 * sigma * sigma;
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(2 * k); n];
    for p in 0..n {
        let hits = tree.knn(&raw[p], k + 1);
        for (q, d2) in hits.into_iter().filter(|&(q, _)| q != p).take(k) {
            let w = (-d2 / two_s2).exp();
            adj[p].push((q, w));
            adj[q].push((p, w));
        }
    }
    Ok(Graph::from_adjacency(adj))
}

/// `L = I - D^{-1} W` stored as `diag - A` with `A = D^{-1} W`.
///
/// The diagonal holds the row sum of `A` accumulated in storage order, and
/// [`LaplacianOperator::apply`] subtracts the off-diagonal sum computed the
/// same way, so `L 1 = 0` holds without rounding error.
#[derive(Debug, Clone)]
pub struct LaplacianOperator {
    diag: Vec<f64>,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

pub fn laplacian(graph: &Graph) -> Result<LaplacianOperator> {
    let n = graph.len();
    let mut diag = Vec::with_capacity(n);
    let mut cols = Vec::with_capacity(graph.neighbors.len());
    let mut vals = Vec::with_capacity(graph.neighbors.len());
    for p in 0..n {
        let d = graph.degree[p];
        if !(d > 0.0) {
            return Err(Error::IsolatedNode(p));
        }
        let mut row = 0.0;
        for (q, w) in graph.neighbors(p) {
            let a = w / d;
            cols.push(q);
            vals.push(a);
            row += a;
        }
        diag.push(row);
    }
    Ok(LaplacianOperator {
        diag,
        offsets: graph.offsets.clone(),
        cols,
        vals,
    })
}

impl LaplacianOperator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for p in 0..self.len() {
            let mut off = 0.0;
            for k in self.offsets[p]..self.offsets[p + 1] {
                off += self.vals[k] * x[self.cols[k]];
            }
            y[p] = self.diag[p] * x[p] - off;
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.len()];
        self.apply(x, &mut y);
        y
    }

    /// `x^T L y` summed as `sum_p x_p (L y)_p`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ly = self.apply_vec(y);
        x.iter().zip(&ly).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for p in 0..n {
            m[(p, p)] += self.diag[p];
            for k in self.offsets[p]..self.offsets[p + 1] {
                m[(p, self.cols[k])] -= self.vals[k];
            }
        }
        m
    }

    /// `L X` for a dense block of column vectors.
    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        let mut buf = vec![0.0; self.len()];
        for (j, col) in x.column_iter().enumerate() {
            self.apply(col.as_slice(), &mut buf);
            out.column_mut(j).copy_from_slice(&buf);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect()
    }

    #[test]
    fn two_points_single_edge() {
        let pts = vec![Vec3::zeros(), Vec3::new(0.3, 0.4, 0.0)];
        let g = build_knn_graph(&pts, 1, 5.0).unwrap();
        assert_eq!(g.edge_count(), 1);
        let w: Vec<_> = g.neighbors(0).collect();
        assert_eq!(w, vec![(1, (-0.25f64 / 50.0).exp())]);
        let l = laplacian(&g).unwrap().to_dense();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn neighbour_sets_match_brute_force() {
        let pts = random_points(50, 7);
        let k = 6;
        let g = build_knn_graph(&pts, k, 0.5).unwrap();
        let mut expected: Vec<Vec<usize>> = vec![Vec::new(); pts.len()];
        for p in 0..pts.len() {
            let mut order: Vec<usize> = (0..pts.len()).filter(|&q| q != p).collect();
            order.sort_by(|&a, &b| (pts[a] - pts[p]).norm_squared().total_cmp(&(pts[b] - pts[p]).norm_squared()));
            for &q in &order[..k] {
                expected[p].push(q);
                expected[q].push(p);
            }
        }
        for (p, e) in expected.iter_mut().enumerate() {
            e.sort_unstable();
            e.dedup();
            let got: Vec<usize> = g.neighbors(p).map(|(q, _)| q).collect();
            assert_eq!(&got, e);
            for (_, w) in g.neighbors(p) {
                assert!(w > 0.0 && w <= 1.0);
            }
        }
    }

    #[test]
    fn rows_sum_to_zero_exactly() {
        let pts = random_points(200, 3);
        let g = build_knn_graph(&pts, 10, 0.2).unwrap();
        let l = laplacian(&g).unwrap();
        let y = l.apply_vec(&vec![1.0; pts.len()]);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_few_points_and_isolated_node() {
        let pts = random_points(5, 1);
        assert!(matches!(build_knn_graph(&pts, 5, 1.0), Err(Error::TooFewPoints { .. })));
        let g = Graph::from_edges(3, &[(0, 1, 1.0)]);
        assert!(matches!(laplacian(&g), Err(Error::IsolatedNode(2))));
    }
}
