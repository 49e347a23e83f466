//! Seeded inputs shared by the benchmarks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenerep_core::geometry::{build_knn_graph, laplacian, spectral_basis, LaplacianOperator, SpectralBasis};
use scenerep_core::init::init_weights;
use scenerep_core::Vec3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` points on a noisy 4 m × 4 m floor slab.
pub fn slab(n: usize, seed: u64) -> Vec<Vec3> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| Vec3::new(4.0 * r.random::<f64>(), 4.0 * r.random::<f64>(), 0.05 * r.random::<f64>()))
        .collect()
}

/// Everything a segmentation solve needs, for `n_p` points and `n_e` candidates.
pub struct SegmentationFixture {
    pub lap: LaplacianOperator,
    pub basis: SpectralBasis,
    pub f: DMatrix<f64>,
    pub row_class: Vec<u32>,
    pub d: DMatrix<f64>,
    pub v: Vec<f64>,
    pub w0: DMatrix<f64>,
}

impl SegmentationFixture {
    pub fn new(n_p: usize, n_e: usize, n_b: usize, seed: u64) -> Self {
        let points = slab(n_p, seed);
        let graph = build_knn_graph(&points, 8, 0.15).expect("graph");
        let lap = laplacian(&graph).expect("laplacian");
        let basis = spectral_basis(&lap, &graph, n_b).expect("basis");
        let mut r = rng(seed ^ 0x5eed);
        let n_c = 4;
        let f = DMatrix::from_fn(n_c, n_p, |_, _| r.random::<f64>());
        let f = DMatrix::from_fn(n_c, n_p, |c, p| f[(c, p)] / f.column(p).sum());
        let classes: Vec<u32> = (0..n_e).map(|e| 1 + (e % (n_c - 1)) as u32).collect();
        let mut row_class = vec![0];
        row_class.extend(&classes);
        let d = DMatrix::from_fn(n_e + 1, n_p, |e, _| if e == 0 { 4.0 } else { 16.0 * r.random::<f64>() });
        let w0 = init_weights(&f, &classes);
        SegmentationFixture {
            lap,
            basis,
            f,
            row_class,
            d,
            v: vec![1.0; n_e],
            w0,
        }
    }
}

/// Symmetric nonnegative overlap matrix with zero diagonal and roughly half the
/// pairs overlapping, plus per-candidate masses.
pub fn voting_instance(n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if r.random::<f64>() < 0.5 {
                let x = 50.0 * r.random::<f64>();
                q[(i, j)] = x;
                q[(j, i)] = x;
            }
        }
    }
    let mass = (0..n).map(|_| 100.0 * r.random::<f64>() - 20.0).collect();
    (q, mass)
}
