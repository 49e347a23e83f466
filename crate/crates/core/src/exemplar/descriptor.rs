//! Coarse shape descriptor: occupancy of a 16^3 grid over the model's
//! bounding box scaled uniformly into the unit cube.

use sha2::{Digest, Sha256};

use crate::geometry::Vec3;

pub const DESCRIPTOR_RES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDescriptor {
    pub cells: Vec<f64>,
}

impl ShapeDescriptor {
    pub fn from_points(points: &[Vec3]) -> Self {
        let r = DESCRIPTOR_RES;
        let mut cells = vec![0.0; r * r * r];
        let Some(first) = points.first() else {
            return ShapeDescriptor { cells };
        };
        let (lo, hi) = points.iter().fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        let extent = (hi - lo).max();
        let scale = if extent > 0.0 { 1.0 / extent } else { 0.0 };
        for p in points {
            let q = (p - lo) * scale;
            let idx = |v: f64| ((v * r as f64) as usize).min(r - 1);
            cells[(idx(q.z) * r + idx(q.y)) * r + idx(q.x)] = 1.0;
        }
        ShapeDescriptor { cells }
    }

    pub fn distance(&self, other: &ShapeDescriptor) -> f64 {
        self.cells
            .iter()
            .zip(&other.cells)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn sha256_hex(&self) -> String {
        let bits: Vec<u8> = self.cells.iter().map(|&c| u8::from(c > 0.0)).collect();
        hex::encode(Sha256::digest(&bits))
    }
}
