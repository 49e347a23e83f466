//! Partitioning around medoids over a precomputed distance matrix.

/// Result of a k-medoids run. `history[0]` is the cost after BUILD and each
/// later entry the cost after one accepted swap.
#[derive(Debug, Clone, PartialEq)]
pub struct Medoids {
    pub medoids: Vec<usize>,
    pub assignment: Vec<usize>,
    pub cost: f64,
    pub history: Vec<f64>,
}

pub const MAX_SWAP_ROUNDS: usize = 100;
/// Instances with at most this many medoid subsets are solved exactly.
pub const EXACT_SUBSET_LIMIT: u64 = 5000;

/// Sum over points of the distance to the nearest medoid.
pub fn medoid_cost(dist: &[Vec<f64>], medoids: &[usize]) -> f64 {
    (0..dist.len())
        .map(|i| medoids.iter().map(|&m| dist[i][m]).fold(f64::INFINITY, f64::min))
        .sum()
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k) as u64;
    let mut r = 1u64;
    for i in 0..k {
        r = r.saturating_mul(n as u64 - i) / (i + 1);
    }
    r
}

/// Optimal medoids when the subset count is small enough to enumerate,
/// PAM otherwise.
pub fn k_medoids(dist: &[Vec<f64>], k: usize) -> Medoids {
    let n = dist.len();
    assert!(k >= 1 && k <= n, "k = {k} must be in 1..={n}");
    if binomial(n, k) <= EXACT_SUBSET_LIMIT {
        exact(dist, k)
    } else {
        pam(dist, k)
    }
}

/// Lexicographically first subset of minimal cost.
fn exact(dist: &[Vec<f64>], k: usize) -> Medoids {
    let n = dist.len();
    let mut set: Vec<usize> = (0..k).collect();
    let mut best = (medoid_cost(dist, &set), set.clone());
    loop {
        let Some(i) = (0..k).rev().find(|&i| set[i] < n - k + i) else {
            break;
        };
        set[i] += 1;
        for j in i + 1..k {
            set[j] = set[j - 1] + 1;
        }
        let c = medoid_cost(dist, &set);
        if c < best.0 {
            best = (c, set.clone());
        }
    }
    finish(dist, best.1, vec![best.0])
}

/// Deterministic BUILD followed by best-improvement SWAP. Ties are broken
/// toward the smaller index, so the result depends only on `dist` and `k`.
pub fn pam(dist: &[Vec<f64>], k: usize) -> Medoids {
    let n = dist.len();
    assert!(k >= 1 && k <= n, "k = {k} must be in 1..={n}");
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut nearest = vec![f64::INFINITY; n];
    while medoids.len() < k {
        let mut best = (f64::INFINITY, usize::MAX);
        for c in 0..n {
            if medoids.contains(&c) {
                continue;
            }
            let cost: f64 = (0..n).map(|i| nearest[i].min(dist[i][c])).sum();
            if cost < best.0 {
                best = (cost, c);
            }
        }
        medoids.push(best.1);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist[i][best.1]);
        }
    }
    let mut cost = medoid_cost(dist, &medoids);
    let mut history = vec![cost];
    for _ in 0..MAX_SWAP_ROUNDS {
        let mut best = (cost, usize::MAX, usize::MAX);
        for slot in 0..k {
            for cand in 0..n {
                if medoids.contains(&cand) {
                    continue;
                }
                let mut trial = medoids.clone();
                trial[slot] = cand;
                let c = medoid_cost(dist, &trial);
                if c < best.0 - 1e-12 * best.0.abs().max(1.0) {
                    best = (c, slot, cand);
                }
            }
        }
        if best.1 == usize::MAX {
            break;
        }
        medoids[best.1] = best.2;
        cost = best.0;
        history.push(cost);
    }
    finish(dist, medoids, history)
}

fn finish(dist: &[Vec<f64>], mut medoids: Vec<usize>, history: Vec<f64>) -> Medoids {
    let n = dist.len();
    let k = medoids.len();
    medoids.sort_unstable();
    let assignment = (0..n)
        .map(|i| {
            let mut b = 0;
            for j in 1..k {
                if dist[i][medoids[j]] < dist[i][medoids[b]] {
                    b = j;
                }
            }
            b
        })
        .collect();
    Medoids {
        cost: medoid_cost(dist, &medoids),
        medoids,
        assignment,
        history,
    }
}
