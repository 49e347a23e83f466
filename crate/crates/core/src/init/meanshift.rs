use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanShiftOptions {
    /// Bins per bandwidth used to compress the weighted samples.
    pub bins_per_bandwidth: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the step, as a fraction of the bandwidth.
    pub step_tolerance: f64,
    /// Modes closer than this many bandwidths are merged.
    pub merge_factor: f64,
    /// Modes below this fraction of the total weight are dropped.
    pub min_weight_fraction: f64,
}

impl Default for MeanShiftOptions {
    fn default() -> Self {
        MeanShiftOptions {
            bins_per_bandwidth: 8.0,
            max_iterations: 100,
            step_tolerance: 1e-3,
            merge_factor: 1.5,
            min_weight_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub position: [f64; 2],
    pub weight: f64,
}

/// Weighted 2-d samples with a Gaussian kernel density.
#[derive(Debug, Clone)]
pub struct Kde {
    samples: Vec<([f64; 2], f64)>,
    bandwidth: f64,
}

impl Kde {
    /// Samples with zero weight are discarded.
    pub fn new(samples: Vec<([f64; 2], f64)>, bandwidth: f64) -> Self {
        Kde {
            samples: samples.into_iter().filter(|s| s.1 > 0.0).collect(),
            bandwidth,
        }
    }

    /// Compresses points into square bins of side `bandwidth / bins_per_bandwidth`;
    /// each bin becomes one sample at its weighted centroid.
    pub fn binned(points: &[Vec3], weights: &[f64], bandwidth: f64, bins_per_bandwidth: f64) -> Self {
        let h = bandwidth / bins_per_bandwidth;
        let mut bins: BTreeMap<(i64, i64), [f64; 3]> = BTreeMap::new();
        for (p, &w) in points.iter().zip(weights) {
            if w <= 0.0 {
                continue;
            }
            let key = ((p.x / h).floor() as i64, (p.y / h).floor() as i64);
            let b = bins.entry(key).or_insert([0.0; 3]);
            b[0] += w;
            b[1] += w * p.x;
            b[2] += w * p.y;
        }
        let samples = bins.values().map(|b| ([b[1] / b[0], b[2] / b[0]], b[0])).collect();
        Kde::new(samples, bandwidth)
    }

    pub fn samples(&self) -> &[([f64; 2], f64)] {
        &self.samples
    }

    pub fn total_weight(&self) -> f64 {
        self.samples.iter().map(|s| s.1).sum()
    }

    #[inline]
    fn kernel(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        (-(dx * dx + dy * dy) / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }

    /// Unnormalized density.
    pub fn density(&self, x: [f64; 2]) -> f64 {
        self.samples.iter().map(|&(s, w)| w * self.kernel(x, s)).sum()
    }

    /// One mean-shift update; `None` when every kernel value underflows.
    pub fn shift(&self, x: [f64; 2]) -> Option<[f64; 2]> {
        let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for &(s, w) in &self.samples {
            let k = w * self.kernel(x, s);
            sw += k;
            sx += k * s[0];
            sy += k * s[1];
        }
        (sw > 0.0).then(|| [sx / sw, sy / sw])
    }

    /// Follows mean-shift updates from `x` and returns the visited points.
    pub fn ascend(&self, x: [f64; 2], max_iterations: usize, tolerance: f64) -> Vec<[f64; 2]> {
        let mut path = vec![x];
        let mut cur = x;
        for _ in 0..max_iterations {
            let Some(next) = self.shift(cur) else { break };
            let step = ((next[0] - cur[0]).powi(2) + (next[1] - cur[1]).powi(2)).sqrt();
            cur = next;
            path.push(cur);
            if step < tolerance {
                break;
            }
        }
        path
    }
}

/// Seeds one ascent per occupied bandwidth-sized cell, then merges and prunes
/// the converged points. Empty when the weights are all zero.
pub fn weighted_mean_shift(points: &[Vec3], weights: &[f64], bandwidth: f64, opts: &MeanShiftOptions) -> Vec<Mode> {
    let kde = Kde::binned(points, weights, bandwidth, opts.bins_per_bandwidth);
    let total = kde.total_weight();
    if !(total > 0.0) {
        return Vec::new();
    }
    let mut seeds: BTreeMap<(i64, i64), [f64; 3]> = BTreeMap::new();
    for &(s, w) in kde.samples() {
        let key = ((s[0] / bandwidth).floor() as i64, (s[1] / bandwidth).floor() as i64);
        let e = seeds.entry(key).or_insert([0.0; 3]);
        e[0] += w;
        e[1] += w * s[0];
        e[2] += w * s[1];
    }
    let tol = opts.step_tolerance * bandwidth;
    let modes: Vec<Mode> = seeds
        .values()
        .map(|e| {
            let start = [e[1] / e[0], e[2] / e[0]];
            let path = kde.ascend(start, opts.max_iterations, tol);
            Mode {
                position: *path.last().unwrap(),
                weight: e[0],
            }
        })
        .collect();
    let merged = merge_modes(&modes, opts.merge_factor * bandwidth);
    let floor = opts.min_weight_fraction * total;
    merged.into_iter().filter(|m| m.weight >= floor).collect()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Greedy agglomeration: the heaviest remaining mode absorbs every mode
/// closer than `radius`, at the weighted mean. Repeats until all modes are at
/// least `radius` apart.
pub fn merge_modes(modes: &[Mode], radius: f64) -> Vec<Mode> {
    let mut cur: Vec<Mode> = modes.to_vec();
    loop {
        let mut order: Vec<usize> = (0..cur.len()).collect();
        order.sort_by(|&a, &b| cur[b].weight.total_cmp(&cur[a].weight));
        let mut taken = vec![false; cur.len()];
        let mut next = Vec::with_capacity(cur.len());
        for &i in &order {
            if taken[i] {
                continue;
            }
            taken[i] = true;
            let (mut w, mut x, mut y) = (
                cur[i].weight,
                cur[i].weight * cur[i].position[0],
                cur[i].weight * cur[i].position[1],
            );
            for &j in &order {
                if !taken[j] && dist(cur[i].position, cur[j].position) < radius {
                    taken[j] = true;
                    w += cur[j].weight;
                    x += cur[j].weight * cur[j].position[0];
                    y += cur[j].weight * cur[j].position[1];
                }
            }
            let position = if w > 0.0 { [x / w, y / w] } else { cur[i].position };
            next.push(Mode { position, weight: w });
        }
        let done = next.len() == cur.len();
        cur = next;
        if done {
            return cur;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blob(rng: &mut ChaCha8Rng, cx: f64, cy: f64, sd: f64, n: usize) -> Vec<Vec3> {
        let nx = Normal::new(cx, sd).unwrap();
        let ny = Normal::new(cy, sd).unwrap();
        (0..n).map(|_| Vec3::new(nx.sample(rng), ny.sample(rng), 0.3)).collect()
    }

    #[test]
    fn single_blob_single_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = blob(&mut rng, 2.0, -1.0, 0.2, 2000);
        let w = vec![1.0; pts.len()];
        let modes = weighted_mean_shift(&pts, &w, 0.5, &MeanShiftOptions::default());
        assert_eq!(modes.len(), 1);
        let n = pts.len() as f64;
        let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
        let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
        assert!(dist(modes[0].position, [cx, cy]) < 0.05 * 0.5);
    }

    #[test]
    fn two_blobs_two_modes_match_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bw = 0.3;
        let mut pts = blob(&mut rng, 0.0, 0.0, 0.1, 800);
        pts.extend(blob(&mut rng, 3.0, 0.0, 0.1, 800));
        let w = vec![1.0; pts.len()];
        let opts = MeanShiftOptions::default();
        let modes = weighted_mean_shift(&pts, &w, bw, &opts);
        assert_eq!(modes.len(), 2);
        // grid-search maxima of the same density in each half
        let kde = Kde::binned(&pts, &w, bw, opts.bins_per_bandwidth);
        for half in [(-1.0, 1.0), (2.0, 4.0)] {
            let mut best = ([0.0, 0.0], f64::MIN);
            for i in 0..=200 {
                for j in 0..=100 {
                    let x = [half.0 + (half.1 - half.0) * i as f64 / 200.0, -0.5 + j as f64 / 100.0];
                    let d = kde.density(x);
                    if d > best.1 {
                        best = (x, d);
                    }
                }
            }
            assert!(modes.iter().any(|m| dist(m.position, best.0) < 0.02), "{best:?} {modes:?}");
        }
    }

    #[test]
    fn weight_on_one_blob() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = blob(&mut rng, 0.0, 0.0, 0.1, 500);
        pts.extend(blob(&mut rng, 3.0, 0.0, 0.1, 500));
        let w: Vec<f64> = (0..pts.len()).map(|i| if i < 500 { 1.0 } else { 0.0 }).collect();
        let modes = weighted_mean_shift(&pts, &w, 0.3, &MeanShiftOptions::default());
        assert_eq!(modes.len(), 1);
        assert!(modes[0].position[0].abs() < 0.05);
        assert!(weighted_mean_shift(&pts, &vec![0.0; pts.len()], 0.3, &MeanShiftOptions::default()).is_empty());
    }

    #[test]
    fn ascent_never_decreases_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pts = blob(&mut rng, 0.0, 0.0, 0.4, 600);
        pts.extend(blob(&mut rng, 1.0, 0.5, 0.2, 300));
        let w: Vec<f64> = (0..pts.len()).map(|i| 0.1 + (i % 7) as f64).collect();
        let kde = Kde::binned(&pts, &w, 0.25, 8.0);
        for s in 0..20 {
            let start = [-1.0 + 0.1 * s as f64, 1.0 - 0.07 * s as f64];
            let path = kde.ascend(start, 100, 1e-6);
            for pair in path.windows(2) {
                let (a, b) = (kde.density(pair[0]), kde.density(pair[1]));
                assert!(b >= a - 1e-12 * a.abs().max(1.0), "{a} -> {b}");
            }
        }
    }

    #[test]
    fn merge_threshold() {
        let a = Mode {
            position: [0.0, 0.0],
            weight: 2.0,
        };
        let b = Mode {
            position: [1.4, 0.0],
            weight: 1.0,
        };
        let merged = merge_modes(&[a, b], 1.5);
        assert_eq!(merged.len(), 1);
        assert!((merged[0].position[0] - 1.4 / 3.0).abs() < 1e-12);
        assert_eq!(merged[0].weight, 3.0);
        let c = Mode {
            position: [1.6, 0.0],
            weight: 1.0,
        };
        assert_eq!(merge_modes(&[a, c], 1.5), vec![a, c]);
    }
}
