use super::cloud::{PointCloud, Vec3};
use super::kdtree::KdTree;
use crate::error::{Error, Result};

/// Distances saturate at this many voxel sizes.
pub const DISTANCE_CAP_VOXELS: f64 = 10.0;

/// Regular occupancy grid aligned to the lattice `floor(x / voxel_size)`,
/// with a one-voxel margin around the cloud's extent.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub occupancy: Vec<bool>,
    pub distance: Vec<f64>,
    pub cap_distance: f64,
    lattice_min: [i64; 3],
    degenerate: bool,
}

pub fn lattice_coord(p: &Vec3, voxel_size: f64) -> [i64; 3] {
    [
        (p.x / voxel_size).floor() as i64,
        (p.y / voxel_size).floor() as i64,
        (p.z / voxel_size).floor() as i64,
    ]
}

impl VoxelGrid {
    /// Occupancy plus the distance channel in one go.
    pub fn from_cloud(cloud: &PointCloud, voxel_size: f64) -> Result<Self> {
        let mut grid = voxelize(cloud, voxel_size)?;
        distance_transform(&mut grid, cloud);
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when every input point fell into a single lattice cell.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    #[inline]
    pub fn index(&self, v: [usize; 3]) -> usize {
        (v[2] * self.dims[1] + v[1]) * self.dims[0] + v[0]
    }

    pub fn unindex(&self, i: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    /// Signed voxel coordinates so that out-of-grid neighbours can be expressed.
    #[inline]
    pub fn in_bounds(&self, v: [i64; 3]) -> Option<[usize; 3]> {
        if (0..3).all(|a| v[a] >= 0 && (v[a] as usize) < self.dims[a]) {
            Some([v[0] as usize, v[1] as usize, v[2] as usize])
        } else {
            None
        }
    }

    pub fn voxel_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        let q = lattice_coord(p, self.voxel_size);
        self.in_bounds([q[0] - self.lattice_min[0], q[1] - self.lattice_min[1], q[2] - self.lattice_min[2]])
    }

    pub fn center(&self, v: [usize; 3]) -> Vec3 {
        Vec3::new(
            (self.lattice_min[0] + v[0] as i64) as f64 + 0.5,
            (self.lattice_min[1] + v[1] as i64) as f64 + 0.5,
            (self.lattice_min[2] + v[2] as i64) as f64 + 0.5,
        ) * self.voxel_size
    }

    pub fn is_occupied(&self, v: [usize; 3]) -> bool {
        self.occupancy[self.index(v)]
    }

    pub fn occupied_voxels(&self) -> Vec<[usize; 3]> {
        (0..self.len()).filter(|&i| self.occupancy[i]).map(|i| self.unindex(i)).collect()
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }
}

pub fn voxelize(cloud: &PointCloud, voxel_size: f64) -> Result<VoxelGrid> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::InvalidParameter(format!("voxel size must be positive, got {voxel_size}")));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let coords: Vec<[i64; 3]> = cloud.points.iter().map(|p| lattice_coord(p, voxel_size)).collect();
    let mut lo = coords[0];
    let mut hi = coords[0];
    for c in &coords {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let lattice_min = [lo[0] - 1, lo[1] - 1, lo[2] - 1];
    let dims = [
        (hi[0] - lo[0] + 3) as usize,
        (hi[1] - lo[1] + 3) as usize,
        (hi[2] - lo[2] + 3) as usize,
    ];
    let n = dims[0] * dims[1] * dims[2];
    let cap = DISTANCE_CAP_VOXELS * voxel_size;
    let mut grid = VoxelGrid {
        origin: Vec3::new(lattice_min[0] as f64, lattice_min[1] as f64, lattice_min[2] as f64) * voxel_size,
        voxel_size,
        dims,
        occupancy: vec![false; n],
        distance: vec![cap; n],
        cap_distance: cap,
        lattice_min,
        degenerate: lo == hi,
    };
    for c in coords {
        let v = [
            (c[0] - lattice_min[0]) as usize,
            (c[1] - lattice_min[1]) as usize,
            (c[2] - lattice_min[2]) as usize,
        ];
        let i = grid.index(v);
        grid.occupancy[i] = true;
        grid.distance[i] = 0.0;
    }
    Ok(grid)
}

/// Fills the distance channel: zero on occupied voxels, otherwise the exact
/// Euclidean distance from the voxel center to the nearest cloud point,
/// saturated at `cap_distance`.
pub fn distance_transform(grid: &mut VoxelGrid, cloud: &PointCloud) {
    let tree = KdTree::new(&cloud.as_arrays());
    for i in 0..grid.len() {
        if grid.occupancy[i] {
            grid.distance[i] = 0.0;
            continue;
        }
        let c = grid.center(grid.unindex(i));
        let d = tree.nearest(&[c.x, c.y, c.z]).map_or(f64::INFINITY, |(_, d2)| d2.sqrt());
        grid.distance[i] = d.min(grid.cap_distance);
    }
}
