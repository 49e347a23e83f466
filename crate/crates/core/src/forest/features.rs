//! Base features of a cell and the two ways of reading them.
//!
//! [`Cell`] copies the `m^3` patch out of the grid and answers every query by
//! direct summation. [`VolumeCell`] reads the same values through summed-area
//! tables over a padded copy of the whole grid; it is what training and
//! inference use, and [`Cell`] is its oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::VoxelGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    Occupancy,
    Distance,
    Height,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Occupancy, Channel::Distance, Channel::Height];

    pub fn is_field(self) -> bool {
        !matches!(self, Channel::Height)
    }

    fn field_slot(self) -> usize {
        match self {
            Channel::Occupancy => 0,
            Channel::Distance => 1,
            Channel::Height => panic!("height is a scalar channel"),
        }
    }
}

/// Number of radius bins of the rotation-invariant profile.
pub fn ring_bins(m: usize) -> usize {
    m.div_ceil(2)
}

/// Radius bin of the column at cell coordinates `(x, y)`.
pub fn ring_of(m: usize, x: usize, y: usize) -> usize {
    let h = (m / 2) as f64;
    let dx = x as f64 - h;
    let dy = y as f64 - h;
    ((dx * dx + dy * dy).sqrt().round() as usize).min(ring_bins(m) - 1)
}

/// Read access to a cell's base features. Coordinates are cell-local,
/// `0..m` on each axis with the centre voxel at `m / 2`.
pub trait CellFeatures {
    fn m(&self) -> usize;
    /// Height of the centre voxel in meters.
    fn height(&self) -> f64;
    fn value(&self, ch: Channel, v: [usize; 3]) -> f64;
    /// Sum over the inclusive box `lo..=hi`.
    fn box_sum(&self, ch: Channel, lo: [usize; 3], hi: [usize; 3]) -> f64;
    /// Sum over the voxels at slice `z` whose column lies in radius bin `r`.
    fn ring_sum(&self, ch: Channel, r: usize, z: usize) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub center: [usize; 3],
    pub m: usize,
    pub occupancy: Vec<bool>,
    pub distance: Vec<f64>,
    pub height: f64,
}

impl Cell {
    #[inline]
    pub fn local_index(&self, v: [usize; 3]) -> usize {
        (v[2] * self.m + v[1]) * self.m + v[0]
    }

    fn field(&self, ch: Channel, i: usize) -> f64 {
        match ch {
            Channel::Occupancy => f64::from(u8::from(self.occupancy[i])),
            Channel::Distance => self.distance[i],
            Channel::Height => self.height,
        }
    }
}

impl CellFeatures for Cell {
    fn m(&self) -> usize {
        self.m
    }

    fn height(&self) -> f64 {
        self.height
    }

    fn value(&self, ch: Channel, v: [usize; 3]) -> f64 {
        self.field(ch, self.local_index(v))
    }

    fn box_sum(&self, ch: Channel, lo: [usize; 3], hi: [usize; 3]) -> f64 {
        let mut s = 0.0;
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    s += self.value(ch, [x, y, z]);
                }
            }
        }
        s
    }

    fn ring_sum(&self, ch: Channel, r: usize, z: usize) -> f64 {
        let mut s = 0.0;
        for y in 0..self.m {
            for x in 0..self.m {
                if ring_of(self.m, x, y) == r {
                    s += self.value(ch, [x, y, z]);
                }
            }
        }
        s
    }
}

/// Copies the `m^3` patch centred on an occupied voxel. Voxels outside the
/// grid read as unoccupied at the capped distance.
pub fn extract_cell(grid: &VoxelGrid, center: [usize; 3], m: usize) -> Result<Cell> {
    if m % 2 == 0 || m == 0 {
        return Err(Error::InvalidParameter(format!("cell side must be odd, got {m}")));
    }
    if grid.in_bounds(center.map(|c| c as i64)).is_none() || !grid.is_occupied(center) {
        return Err(Error::CenterNotOccupied(center));
    }
    let h = (m / 2) as i64;
    let mut occupancy = Vec::with_capacity(m * m * m);
    let mut distance = Vec::with_capacity(m * m * m);
    for dz in -h..=h {
        for dy in -h..=h {
            for dx in -h..=h {
                let v = [center[0] as i64 + dx, center[1] as i64 + dy, center[2] as i64 + dz];
                match grid.in_bounds(v) {
                    Some(u) => {
                        let i = grid.index(u);
                        occupancy.push(grid.occupancy[i]);
                        distance.push(grid.distance[i]);
                    }
                    None => {
                        occupancy.push(false);
                        distance.push(grid.cap_distance);
                    }
                }
            }
        }
    }
    Ok(Cell {
        center,
        m,
        occupancy,
        distance,
        height: grid.center(center).z,
    })
}

/// A grid padded by `m / 2` voxels with inclusive-prefix sums of both field
/// channels.
#[derive(Debug, Clone)]
pub struct FeatureVolume {
    m: usize,
    dims: [usize; 3],
    fields: [Vec<f64>; 2],
    sat: [Vec<f64>; 2],
    /// Centre height of each grid slice.
    heights: Vec<f64>,
    lattice_dims: [usize; 3],
}

impl FeatureVolume {
    pub fn new(grid: &VoxelGrid, m: usize) -> Result<Self> {
        if m % 2 == 0 || m == 0 {
            return Err(Error::InvalidParameter(format!("cell side must be odd, got {m}")));
        }
        let pad = m / 2;
        let dims = grid.dims.map(|d| d + 2 * pad);
        let n = dims[0] * dims[1] * dims[2];
        let mut occ = vec![0.0; n];
        let mut dist = vec![grid.cap_distance; n];
        for z in 0..grid.dims[2] {
            for y in 0..grid.dims[1] {
                for x in 0..grid.dims[0] {
                    let g = grid.index([x, y, z]);
                    let p = ((z + pad) * dims[1] + y + pad) * dims[0] + x + pad;
                    occ[p] = f64::from(u8::from(grid.occupancy[g]));
                    dist[p] = grid.distance[g];
                }
            }
        }
        let sat = [prefix_sums(&occ, dims), prefix_sums(&dist, dims)];
        Ok(FeatureVolume {
            m,
            dims,
            fields: [occ, dist],
            sat,
            heights: (0..grid.dims[2]).map(|z| grid.center([0, 0, z]).z).collect(),
            lattice_dims: grid.dims,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Accessor for the cell centred on grid voxel `center`, with its ring
    /// sums computed eagerly.
    pub fn cell(&self, center: [usize; 3]) -> VolumeCell<'_> {
        let rings = self.rings(center);
        self.cell_with_rings(center, rings)
    }

    pub fn cell_with_rings(&self, center: [usize; 3], rings: Vec<f64>) -> VolumeCell<'_> {
        debug_assert!((0..3).all(|a| center[a] < self.lattice_dims[a]));
        VolumeCell {
            vol: self,
            corner: center,
            height: self.heights[center[2]],
            rings,
        }
    }

    /// Ring sums laid out as `[channel][z][r]`.
    pub fn rings(&self, center: [usize; 3]) -> Vec<f64> {
        let m = self.m;
        let r_bins = ring_bins(m);
        let mut out = vec![0.0; 2 * m * r_bins];
        for (slot, field) in self.fields.iter().enumerate() {
            for z in 0..m {
                for y in 0..m {
                    let row = ((center[2] + z) * self.dims[1] + center[1] + y) * self.dims[0] + center[0];
                    for x in 0..m {
                        out[(slot * m + z) * r_bins + ring_of(m, x, y)] += field[row + x];
                    }
                }
            }
        }
        out
    }

    #[inline]
    fn sat_at(&self, slot: usize, x: usize, y: usize, z: usize) -> f64 {
        let (sx, sy) = (self.dims[0] + 1, self.dims[1] + 1);
        self.sat[slot][(z * sy + y) * sx + x]
    }
}

fn prefix_sums(field: &[f64], dims: [usize; 3]) -> Vec<f64> {
    let (sx, sy, sz) = (dims[0] + 1, dims[1] + 1, dims[2] + 1);
    let mut s = vec![0.0; sx * sy * sz];
    for z in 1..sz {
        for y in 1..sy {
            let mut row = 0.0;
            for x in 1..sx {
                row += field[((z - 1) * dims[1] + y - 1) * dims[0] + x - 1];
                let i = (z * sy + y) * sx + x;
                s[i] = row + s[i - sx] + s[i - sx * sy] - s[i - sx - sx * sy];
            }
        }
    }
    s
}

/// A cell read through a [`FeatureVolume`]. `corner` is the cell's low
/// corner in padded coordinates, which equals the centre in grid coordinates.
#[derive(Debug, Clone)]
pub struct VolumeCell<'a> {
    vol: &'a FeatureVolume,
    corner: [usize; 3],
    height: f64,
    rings: Vec<f64>,
}

impl VolumeCell<'_> {
    pub fn center(&self) -> [usize; 3] {
        self.corner
    }
}

impl CellFeatures for VolumeCell<'_> {
    fn m(&self) -> usize {
        self.vol.m
    }

    fn height(&self) -> f64 {
        self.height
    }

    fn value(&self, ch: Channel, v: [usize; 3]) -> f64 {
        if ch == Channel::Height {
            return self.height;
        }
        let d = self.vol.dims;
        let i = ((self.corner[2] + v[2]) * d[1] + self.corner[1] + v[1]) * d[0] + self.corner[0] + v[0];
        self.vol.fields[ch.field_slot()][i]
    }

    fn box_sum(&self, ch: Channel, lo: [usize; 3], hi: [usize; 3]) -> f64 {
        if ch == Channel::Height {
            let n = (0..3).map(|a| hi[a] + 1 - lo[a]).product::<usize>();
            return self.height * n as f64;
        }
        let s = ch.field_slot();
        let c = self.corner;
        let (x0, y0, z0) = (c[0] + lo[0], c[1] + lo[1], c[2] + lo[2]);
        let (x1, y1, z1) = (c[0] + hi[0] + 1, c[1] + hi[1] + 1, c[2] + hi[2] + 1);
        let v = &self.vol;
        v.sat_at(s, x1, y1, z1) - v.sat_at(s, x0, y1, z1) - v.sat_at(s, x1, y0, z1) - v.sat_at(s, x1, y1, z0)
            + v.sat_at(s, x0, y0, z1)
            + v.sat_at(s, x0, y1, z0)
            + v.sat_at(s, x1, y0, z0)
            - v.sat_at(s, x0, y0, z0)
    }

    fn ring_sum(&self, ch: Channel, r: usize, z: usize) -> f64 {
        let m = self.vol.m;
        self.rings[(ch.field_slot() * m + z) * ring_bins(m) + r]
    }
}
