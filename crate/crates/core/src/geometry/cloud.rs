use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Scene points in meters with optional ground-truth class per point
/// (0 means clutter / unlabeled).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub labels: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        Self::with_labels(points, None)
    }

    pub fn with_labels(points: Vec<Vec3>, labels: Option<Vec<u32>>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidParameter(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::InvalidParameter(format!("{} labels for {} points", l.len(), points.len())));
            }
        }
        Ok(PointCloud { points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels.as_ref().map_or(0, |l| l[i])
    }

    pub fn as_arrays(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| [p.x, p.y, p.z]).collect()
    }

    /// Axis-aligned bounds `(min, max)`, or `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }

    pub fn extend(&mut self, other: &PointCloud) {
        let n = self.points.len();
        self.points.extend_from_slice(&other.points);
        match (&mut self.labels, &other.labels) {
            (Some(a), Some(b)) => a.extend_from_slice(b),
            (Some(a), None) => a.extend(std::iter::repeat_n(0, other.len())),
            (None, Some(b)) => {
                let mut l = vec![0; n];
                l.extend_from_slice(b);
                self.labels = Some(l);
            }
            (None, None) => {}
        }
    }
}
