//! Greedy tree growth by Shannon information gain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::CellFeatures;
use super::split::{sample_split_kind, SplitFunction};
use super::{Forest, ForestConfig};
use crate::error::{Error, Result};
use crate::rng::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "kebab-case")]
pub enum Node {
    Split {
        split: SplitFunction,
        /// Child taken when the split is false.
        left: usize,
        right: usize,
        gain: f64,
        /// Seed of the rng that produced this node's candidate pool.
        seed: u64,
    },
    Leaf {
        distribution: Vec<f64>,
        samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf<C: CellFeatures + ?Sized>(&self, cell: &C) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { split, left, right, .. } => {
                    i = if split.eval(cell) { *right } else { *left };
                }
                Node::Leaf { distribution, .. } => return distribution,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

/// Shannon entropy in nats of a histogram with total `n`.
pub fn entropy(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Gain of partitioning `labels` by `goes_right`.
pub fn information_gain(labels: &[u32], goes_right: &[bool], n_labels: usize) -> f64 {
    let mut all = vec![0; n_labels];
    let mut right = vec![0; n_labels];
    let mut n_right = 0;
    for (&l, &r) in labels.iter().zip(goes_right) {
        all[l as usize] += 1;
        if r {
            right[l as usize] += 1;
            n_right += 1;
        }
    }
    let n = labels.len();
    let left: Vec<usize> = all.iter().zip(&right).map(|(a, b)| a - b).collect();
    gain_from_counts(&all, &left, &right, n, n - n_right, n_right)
}

fn gain_from_counts(all: &[usize], left: &[usize], right: &[usize], n: usize, nl: usize, nr: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    entropy(all, n) - (nl as f64 / nf) * entropy(left, nl) - (nr as f64 / nf) * entropy(right, nr)
}

struct Builder<'a, C> {
    cells: &'a [C],
    labels: &'a [u32],
    n_labels: usize,
    config: &'a ForestConfig,
    tree_seed: u64,
    nodes: Vec<Node>,
    responses: Vec<f64>,
}

impl<C: CellFeatures> Builder<'_, C> {
    fn histogram(&self, idx: &[usize]) -> Vec<usize> {
        let mut h = vec![0; self.n_labels];
        for &i in idx {
            h[self.labels[i] as usize] += 1;
        }
        h
    }

    fn leaf(&mut self, idx: &[usize]) -> usize {
        let h = self.histogram(idx);
        let n = idx.len().max(1) as f64;
        self.nodes.push(Node::Leaf {
            distribution: h.iter().map(|&c| c as f64 / n).collect(),
            samples: idx.len(),
        });
        self.nodes.len() - 1
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, path: u64) -> usize {
        let hist = self.histogram(idx);
        let n = idx.len();
        if n < self.config.min_samples || depth >= self.config.max_depth || hist.iter().filter(|&&c| c > 0).count() < 2 {
            return self.leaf(idx);
        }
        let seed = mix_seed(self.tree_seed, path);
        let Some((split, gain)) = self.best_split(idx, &hist, seed) else {
            return self.leaf(idx);
        };
        if gain < self.config.min_gain {
            return self.leaf(idx);
        }
        // stable partition: false first
        let mut flags: Vec<bool> = idx.iter().map(|&i| split.eval(&self.cells[i])).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&k| flags[k]);
        let permuted: Vec<usize> = order.iter().map(|&k| idx[k]).collect();
        idx.copy_from_slice(&permuted);
        flags.sort();
        let n_left = flags.iter().filter(|&&f| !f).count();
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf {
            distribution: Vec::new(),
            samples: 0,
        });
        let (l_idx, r_idx) = idx.split_at_mut(n_left);
        let left = self.grow(l_idx, depth + 1, 2 * path);
        let right = self.grow(r_idx, depth + 1, 2 * path + 1);
        self.nodes[me] = Node::Split {
            split,
            left,
            right,
            gain,
            seed,
        };
        me
    }

    /// The pool's best candidate; ties keep the earliest.
    fn best_split(&mut self, idx: &[usize], hist: &[usize], seed: u64) -> Option<(SplitFunction, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.config.m;
        let n = idx.len();
        let mut best: Option<(SplitFunction, f64)> = None;
        let mut right = vec![0usize; self.n_labels];
        let mut left = vec![0usize; self.n_labels];
        for _ in 0..self.config.pool_size {
            let kind = sample_split_kind(&mut rng, m, &self.config.channels);
            self.responses.clear();
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in idx {
                let r = kind.response(&self.cells[i]);
                lo = lo.min(r);
                hi = hi.max(r);
                self.responses.push(r);
            }
            let tau = if lo < hi { rng.random_range(lo..=hi) } else { lo };
            right.iter_mut().for_each(|c| *c = 0);
            let mut nr = 0;
            for (k, &i) in idx.iter().enumerate() {
                if self.responses[k] > tau {
                    right[self.labels[i] as usize] += 1;
                    nr += 1;
                }
            }
            for c in 0..self.n_labels {
                left[c] = hist[c] - right[c];
            }
            let gain = gain_from_counts(hist, &left, &right, n, n - nr, nr);
            if best.as_ref().is_none_or(|b| gain > b.1) {
                best = Some((SplitFunction { kind, tau }, gain));
            }
        }
        best
    }
}

/// Per-tree training sample. Balanced sampling draws a label uniformly and
/// then a cell of that label, so sparse object classes are not drowned by
/// clutter.
fn tree_sample(labels: &[u32], n_labels: usize, config: &ForestConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = labels.len();
    let size = config.cells_per_tree.min(n).max(1);
    if config.balanced {
        let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); n_labels];
        for (i, &l) in labels.iter().enumerate() {
            by_label[l as usize].push(i);
        }
        let present: Vec<&Vec<usize>> = by_label.iter().filter(|v| !v.is_empty()).collect();
        (0..size)
            .map(|_| {
                let group = present[rng.random_range(0..present.len())];
                group[rng.random_range(0..group.len())]
            })
            .collect()
    } else {
        (0..size).map(|_| rng.random_range(0..n)).collect()
    }
}

/// Trains a forest on labelled cells; label 0 is clutter.
pub fn train_forest<C: CellFeatures>(cells: &[C], labels: &[u32], config: &ForestConfig) -> Result<Forest> {
    config.validate()?;
    if cells.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "{} cells but {} labels",
            cells.len(),
            labels.len()
        )));
    }
    if let Some(c) = cells.iter().find(|c| c.m() != config.m) {
        return Err(Error::InvalidParameter(format!(
            "cell side {} but config expects {}",
            c.m(),
            config.m
        )));
    }
    let mut distinct: Vec<u32> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::DegenerateTrainingSet(format!(
            "need at least two distinct labels, found {}",
            distinct.len()
        )));
    }
    let n_labels = config.n_labels.max(*distinct.last().unwrap() as usize + 1);
    let mut trees = Vec::with_capacity(config.n_trees);
    for t in 0..config.n_trees {
        let tree_seed = mix_seed(config.seed, t as u64 + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
        let mut idx = tree_sample(labels, n_labels, config, &mut rng);
        let mut b = Builder {
            cells,
            labels,
            n_labels,
            config,
            tree_seed,
            nodes: Vec::new(),
            responses: Vec::with_capacity(idx.len()),
        };
        b.grow(&mut idx, 0, 1);
        trees.push(Tree { nodes: b.nodes });
    }
    Ok(Forest {
        version: super::FOREST_FORMAT_VERSION,
        m: config.m,
        channels: config.channels.clone(),
        n_labels,
        voxel_size: None,
        config: config.clone(),
        trees,
    })
}

/// Replays a split node's candidate pool on the samples that reached it and
/// returns every candidate's gain in draw order.
pub fn replay_pool<C: CellFeatures>(
    cells: &[C],
    labels: &[u32],
    idx: &[usize],
    n_labels: usize,
    seed: u64,
    config: &ForestConfig,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lab: Vec<u32> = idx.iter().map(|&i| labels[i]).collect();
    (0..config.pool_size)
        .map(|_| {
            let kind = sample_split_kind(&mut rng, config.m, &config.channels);
            let r: Vec<f64> = idx.iter().map(|&i| kind.response(&cells[i])).collect();
            let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tau = if lo < hi { rng.random_range(lo..=hi) } else { lo };
            let flags: Vec<bool> = r.iter().map(|&x| x > tau).collect();
            information_gain(&lab, &flags, n_labels)
        })
        .collect()
}
