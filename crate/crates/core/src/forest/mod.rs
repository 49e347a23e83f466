//! Random-forest cell classification and per-point class scores.

pub mod features;
pub mod split;
pub mod train;

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use features::{extract_cell, Cell, CellFeatures, Channel, FeatureVolume, VolumeCell};
pub use split::{eval_split, sample_split, Family, SplitFunction, SplitKind};
pub use train::{train_forest, Node, Tree};

use crate::error::{Error, Result};
use crate::geometry::{KdTree, PointCloud, VoxelGrid};

pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub pool_size: usize,
    pub min_gain: f64,
    pub min_samples: usize,
    pub cells_per_tree: usize,
    pub m: usize,
    pub channels: Vec<Channel>,
    /// Lower bound on the label count; the training labels may raise it.
    pub n_labels: usize,
    /// Draw each tree's sample uniformly over labels first.
    pub balanced: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 9,
            max_depth: 10,
            pool_size: 1000,
            min_gain: 0.05,
            min_samples: 30,
            cells_per_tree: 20_000,
            m: 9,
            channels: Channel::ALL.to_vec(),
            n_labels: 0,
            balanced: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.m == 0 || self.m % 2 == 0 {
            return bad(format!("forest.m must be odd, got {}", self.m));
        }
        if self.n_trees == 0 || self.pool_size == 0 || self.cells_per_tree == 0 {
            return bad("forest.n_trees, pool_size and cells_per_tree must be positive".into());
        }
        if self.channels.is_empty() {
            return bad("forest.channels must not be empty".into());
        }
        if !(self.min_gain >= 0.0) {
            return bad(format!("forest.min_gain must be nonnegative, got {}", self.min_gain));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub version: u32,
    pub m: usize,
    pub channels: Vec<Channel>,
    /// `n_c + 1`, clutter included.
    pub n_labels: usize,
    /// Voxel size of the training grids, when known.
    pub voxel_size: Option<f64>,
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
}

/// Class scores, one column per point, `n_c + 1` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PointScores {
    pub f: DMatrix<f64>,
}

impl PointScores {
    pub fn n_labels(&self) -> usize {
        self.f.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.f.ncols()
    }

    /// Label with the largest score at point `p`; the smallest label on ties.
    pub fn argmax(&self, p: usize) -> u32 {
        let col = self.f.column(p);
        let mut best = 0;
        for c in 1..col.len() {
            if col[c] > col[best] {
                best = c;
            }
        }
        best as u32
    }
}

impl Forest {
    /// Mean of the trees' leaf distributions.
    pub fn predict<C: CellFeatures + ?Sized>(&self, cell: &C) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_labels];
        for t in &self.trees {
            for (a, d) in acc.iter_mut().zip(t.leaf(cell)) {
                *a += d;
            }
        }
        let k = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        acc
    }

    pub fn check_compatible(&self, m: usize, channels: &[Channel]) -> Result<()> {
        if self.version != FOREST_FORMAT_VERSION {
            return Err(Error::IncompatibleForest(format!(
                "format version {} (expected {FOREST_FORMAT_VERSION})",
                self.version
            )));
        }
        if self.m != m {
            return Err(Error::IncompatibleForest(format!("cell side {} (expected {m})", self.m)));
        }
        let mut a = self.channels.clone();
        let mut b = channels.to_vec();
        a.sort();
        b.sort();
        if a != b {
            return Err(Error::IncompatibleForest(format!(
                "channels {:?} (expected {:?})",
                self.channels, channels
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: Forest = serde_json::from_str(text)?;
        f.check_compatible(f.m, &f.channels.clone())?;
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Loads a forest and rejects it unless it was trained with cell side `m`
    /// and exactly the given channels.
    pub fn load(path: &Path, m: usize, channels: &[Channel]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f = Forest::from_json(&text)?;
        f.check_compatible(m, channels)?;
        Ok(f)
    }
}

/// Label of each occupied voxel: the label of the nearest object point if
/// it lies within 1.5 voxels of the centre, clutter otherwise.
pub fn label_cells(grid: &VoxelGrid, cloud: &PointCloud) -> Vec<([usize; 3], u32)> {
    let objects: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.label(i) > 0).collect();
    let pts: Vec<[f64; 3]> = objects
        .iter()
        .map(|&i| {
            let p = cloud.points[i];
            [p.x, p.y, p.z]
        })
        .collect();
    let tree = KdTree::new(&pts);
    let reach2 = (1.5 * grid.voxel_size).powi(2);
    grid.occupied_voxels()
        .into_iter()
        .map(|v| {
            let c = grid.center(v);
            let label = match tree.nearest(&[c.x, c.y, c.z]) {
                Some((k, d2)) if d2 <= reach2 => cloud.label(objects[k]),
                _ => 0,
            };
            (v, label)
        })
        .collect()
}

/// Trains on every occupied voxel of the given labelled scenes.
pub fn train_forest_on_scenes(scenes: &[(VoxelGrid, PointCloud)], config: &ForestConfig) -> Result<Forest> {
    config.validate()?;
    let voxel_size = scenes.first().map(|s| s.0.voxel_size);
    let volumes: Vec<FeatureVolume> = scenes.iter().map(|(g, _)| FeatureVolume::new(g, config.m)).collect::<Result<_>>()?;
    let mut cells = Vec::new();
    let mut labels = Vec::new();
    for ((grid, cloud), vol) in scenes.iter().zip(&volumes) {
        for (v, l) in label_cells(grid, cloud) {
            cells.push(vol.cell(v));
            labels.push(l);
        }
    }
    let mut forest = train_forest(&cells, &labels, config)?;
    forest.voxel_size = voxel_size;
    Ok(forest)
}

/// Per-point scores: each point takes the prediction of its own voxel, or of
/// the nearest occupied voxel centre when its voxel is empty or off-grid.
pub fn classify_points(forest: &Forest, grid: &VoxelGrid, cloud: &PointCloud) -> Result<PointScores> {
    let vol = FeatureVolume::new(grid, forest.m)?;
    let occupied = grid.occupied_voxels();
    let centers: Vec<[f64; 3]> = occupied
        .iter()
        .map(|&v| {
            let c = grid.center(v);
            [c.x, c.y, c.z]
        })
        .collect();
    let tree = KdTree::new(&centers);
    let mut slot_of = vec![usize::MAX; grid.len()];
    for (k, &v) in occupied.iter().enumerate() {
        slot_of[grid.index(v)] = k;
    }
    let mut cache: Vec<Option<Vec<f64>>> = vec![None; occupied.len()];
    let mut f = DMatrix::zeros(forest.n_labels, cloud.len());
    for (p, x) in cloud.points.iter().enumerate() {
        let own = grid.voxel_of(x).map(|v| slot_of[grid.index(v)]).filter(|&k| k != usize::MAX);
        let k = match own {
            Some(k) => k,
            None => tree.nearest(&[x.x, x.y, x.z]).map(|(k, _)| k).ok_or(Error::EmptyCloud)?,
        };
        let scores = cache[k].get_or_insert_with(|| forest.predict(&vol.cell(occupied[k])));
        f.column_mut(p).copy_from_slice(scores);
    }
    Ok(PointScores { f })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cell(rng: &mut ChaCha8Rng, height: f64) -> Cell {
        Cell {
            center: [4; 3],
            m: 9,
            occupancy: (0..729).map(|_| rng.random_bool(0.3)).collect(),
            distance: (0..729).map(|_| rng.random_range(0.0..0.75)).collect(),
            height,
        }
    }

    fn small_config() -> ForestConfig {
        ForestConfig {
            n_trees: 3,
            pool_size: 60,
            cells_per_tree: 400,
            ..ForestConfig::default()
        }
    }

    fn height_separable(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Cell>, Vec<u32>) {
        let mut cells = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = (i % 2) as u32;
            let h = if label == 1 {
                rng.random_range(0.8..1.2)
            } else {
                rng.random_range(0.0..0.4)
            };
            cells.push(random_cell(rng, h));
            labels.push(label);
        }
        (cells, labels)
    }

    #[test]
    fn default_hyperparameters() {
        let c = ForestConfig::default();
        assert_eq!((c.n_trees, c.max_depth, c.pool_size, c.min_samples, c.m), (9, 10, 1000, 30, 9));
        assert_eq!(c.min_gain, 0.05);
    }

    #[test]
    fn separable_by_height_is_perfect_on_held_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (cells, labels) = height_separable(&mut rng, 300);
        let forest = train_forest(&cells, &labels, &small_config()).unwrap();
        let (test, truth) = height_separable(&mut rng, 200);
        for (c, &l) in test.iter().zip(&truth) {
            let p = forest.predict(c);
            assert_eq!(if p[1] > p[0] { 1 } else { 0 }, l);
        }
        for t in &forest.trees {
            assert!(t.depth() <= forest.config.max_depth);
            for n in &t.nodes {
                if let Node::Leaf { distribution, .. } = n {
                    assert!((distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(distribution.iter().all(|&d| d >= 0.0));
                }
            }
        }
    }

    #[test]
    fn single_label_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cells: Vec<Cell> = (0..50).map(|_| random_cell(&mut rng, 0.5)).collect();
        let labels = vec![2; 50];
        assert!(matches!(
            train_forest(&cells, &labels, &small_config()),
            Err(Error::DegenerateTrainingSet(_))
        ));
    }

    #[test]
    fn accepted_nodes_beat_their_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cells: Vec<Cell> = (0..200)
            .map(|_| {
                let h = rng.random_range(0.0..1.0);
                random_cell(&mut rng, h)
            })
            .collect();
        let labels: Vec<u32> = cells
            .iter()
            .map(|c| u32::from(c.occupancy[364]) + u32::from(c.height > 0.5))
            .collect();
        let config = ForestConfig {
            balanced: false,
            ..small_config()
        };
        let forest = train_forest(&cells, &labels, &config).unwrap();
        // Re-derive the root sample of tree 0 and replay its pool.
        let tree_seed = crate::rng::mix_seed(config.seed, 1);
        let mut trng = ChaCha8Rng::seed_from_u64(tree_seed);
        let idx: Vec<usize> = (0..config.cells_per_tree.min(cells.len()))
            .map(|_| trng.random_range(0..cells.len()))
            .collect();
        let Node::Split { gain, seed, .. } = &forest.trees[0].nodes[0] else {
            panic!("root should split");
        };
        assert!(*gain >= config.min_gain);
        let pool = train::replay_pool(&cells, &labels, &idx, forest.n_labels, *seed, &config);
        let best = pool.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((best - gain).abs() < 1e-12);
        assert!(pool.iter().all(|&g| g <= *gain + 1e-12));
    }

    #[test]
    fn root_leaf_forest_returns_its_distribution() {
        let d = vec![0.25, 0.5, 0.25];
        let forest = Forest {
            version: FOREST_FORMAT_VERSION,
            m: 9,
            channels: Channel::ALL.to_vec(),
            n_labels: 3,
            voxel_size: None,
            config: ForestConfig::default(),
            trees: vec![Tree {
                nodes: vec![Node::Leaf {
                    distribution: d.clone(),
                    samples: 1,
                }],
            }],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..100).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let cloud = PointCloud::new(pts).unwrap();
        let grid = VoxelGrid::from_cloud(&cloud, 0.1).unwrap();
        let s = classify_points(&forest, &grid, &cloud).unwrap();
        for p in 0..cloud.len() {
            assert_eq!(s.f.column(p).as_slice(), &d[..]);
        }
    }

    fn labelled_scene(rng: &mut ChaCha8Rng) -> (VoxelGrid, PointCloud) {
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..1500 {
            pts.push(Vec3::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), 0.0));
            labels.push(0);
        }
        for _ in 0..600 {
            pts.push(Vec3::new(
                rng.random_range(0.5..1.0),
                rng.random_range(0.5..1.0),
                rng.random_range(0.0..0.8),
            ));
            labels.push(1);
        }
        let cloud = PointCloud::with_labels(pts, Some(labels)).unwrap();
        (VoxelGrid::from_cloud(&cloud, 0.1).unwrap(), cloud)
    }

    #[test]
    fn scores_are_distributions_and_coincident_points_inherit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scene = labelled_scene(&mut rng);
        let forest = train_forest_on_scenes(std::slice::from_ref(&scene), &small_config()).unwrap();
        let (grid, cloud) = &scene;
        let s = classify_points(&forest, grid, cloud).unwrap();
        for p in 0..cloud.len() {
            assert!((s.f.column(p).sum() - 1.0).abs() < 1e-12);
        }
        let v = grid.occupied_voxels()[7];
        let probe = PointCloud::new(vec![grid.center(v)]).unwrap();
        let sp = classify_points(&forest, grid, &probe).unwrap();
        let direct = forest.predict(&extract_cell(grid, v, 9).unwrap());
        for (a, b) in sp.f.column(0).iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_and_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (cells, labels) = height_separable(&mut rng, 100);
        let forest = train_forest(&cells, &labels, &small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("forest.json");
        forest.save(&path).unwrap();
        let back = Forest::load(&path, 9, &Channel::ALL).unwrap();
        assert_eq!(back, forest);
        assert!(matches!(Forest::load(&path, 7, &Channel::ALL), Err(Error::IncompatibleForest(_))));
        assert!(matches!(
            Forest::load(&path, 9, &[Channel::Occupancy]),
            Err(Error::IncompatibleForest(_))
        ));
    }
}
