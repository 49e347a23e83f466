//! Static 3-d tree for nearest-neighbour queries.
//!
//! Ties in distance are broken by the smaller original index so that query
//! results never depend on build order.

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[[f64; 3]]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn from_vectors(points: &[nalgebra::Vector3<f64>]) -> Self {
        let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Self::new(&raw)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> [f64; 3] {
        self.points[index]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap_or(0);
        if hi[axis] <= lo[axis] {
            // all points coincide
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Split {
            axis,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        if let Node::Split { left: l, right: r, .. } = &mut self.nodes[id] {
            *l = left;
            *r = right;
        }
        id
    }

    /// Nearest point to `q`: `(index, squared distance)`.
    pub fn nearest(&self, q: &[f64; 3]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(0, q, &mut best);
        Some(best)
    }

    /// Nearest point with squared distance at most `max_d2`.
    pub fn nearest_within(&self, q: &[f64; 3], max_d2: f64) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, max_d2);
        if !self.points.is_empty() {
            self.nearest_rec(0, q, &mut best);
        }
        (best.0 != usize::MAX).then_some(best)
    }

    fn nearest_rec(&self, node: usize, q: &[f64; 3], best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(&self.points[i], q);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                if diff * diff <= best.1 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points sorted by `(squared distance, index)`.
    pub fn knn(&self, q: &[f64; 3], k: usize) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k == 0 || self.points.is_empty() {
            return out;
        }
        self.knn_rec(0, q, k, &mut out);
        out
    }

    fn knn_rec(&self, node: usize, q: &[f64; 3], k: usize, out: &mut Vec<(usize, f64)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(&self.points[i], q);
                    if out.len() == k {
                        let (wi, wd) = out[k - 1];
                        if d > wd || (d == wd && i > wi) {
                            continue;
                        }
                        out.pop();
                    }
                    let pos = out.iter().position(|&(j, e)| d < e || (d == e && i < j)).unwrap_or(out.len());
                    out.insert(pos, (i, d));
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, out);
                if out.len() < k || diff * diff <= out[k - 1].1 {
                    self.knn_rec(far, q, k, out);
                }
            }
        }
    }

    /// All points within `radius` of `q`, in index order.
    pub fn within(&self, q: &[f64; 3], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.within_rec(0, q, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn within_rec(&self, node: usize, q: &[f64; 3], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(self.order[start..end].iter().copied().filter(|&i| dist2(&self.points[i], q) <= r2));
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.within_rec(near, q, r2, out);
                if diff * diff <= r2 {
                    self.within_rec(far, q, r2, out);
                }
            }
        }
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect()
    }

    #[test]
    fn nearest_matches_scan() {
        let pts = random_points(500, 1);
        let tree = KdTree::new(&pts);
        for q in random_points(200, 2) {
            let (i, d) = tree.nearest(&q).unwrap();
            let (bi, bd) = pts
                .iter()
                .enumerate()
                .map(|(j, p)| (j, dist2(p, &q)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .unwrap();
            assert_eq!((i, d), (bi, bd));
        }
    }

    #[test]
    fn bounded_nearest_agrees_inside_reach() {
        let pts = random_points(400, 5);
        let tree = KdTree::new(&pts);
        for q in random_points(300, 6) {
            let q = [q[0] * 2.0 - 0.5, q[1] * 2.0 - 0.5, q[2] * 2.0 - 0.5];
            let full = tree.nearest(&q).unwrap();
            for reach in [0.0, 0.001, 0.01, full.1, 1.0] {
                let got = tree.nearest_within(&q, reach);
                assert_eq!(got, (full.1 <= reach).then_some(full));
            }
        }
        assert_eq!(KdTree::new(&[]).nearest_within(&[0.0; 3], 1.0), None);
    }

    #[test]
    fn knn_matches_sort() {
        let pts = random_points(300, 3);
        let tree = KdTree::new(&pts);
        for q in random_points(50, 4) {
            let got = tree.knn(&q, 7);
            let mut all: Vec<(usize, f64)> = pts.iter().enumerate().map(|(j, p)| (j, dist2(p, &q))).collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            assert_eq!(got, all[..7].to_vec());
        }
    }

    #[test]
    fn duplicates_and_radius() {
        let mut pts = vec![[0.5, 0.5, 0.5]; 40];
        pts.push([2.0, 0.0, 0.0]);
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest(&[0.5, 0.5, 0.5]).unwrap(), (0, 0.0));
        assert_eq!(tree.within(&[0.5, 0.5, 0.5], 0.1).len(), 40);
        assert_eq!(tree.knn(&[2.0, 0.0, 0.0], 2)[0].0, 40);
    }
}
