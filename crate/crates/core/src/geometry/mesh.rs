use rand::Rng;

use super::cloud::Vec3;

/// Triangle mesh in meters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }

    pub fn translate(&mut self, offset: &Vec3) {
        for v in &mut self.vertices {
            *v += offset;
        }
    }

    /// Appends the 12 triangles of an axis-aligned box.
    pub fn add_box(&mut self, lo: Vec3, hi: Vec3) {
        let base = self.vertices.len();
        for i in 0..8 {
            self.vertices.push(Vec3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            ));
        }
        const FACES: [[usize; 4]; 6] = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
        for f in FACES {
            self.triangles.push([base + f[0], base + f[1], base + f[2]]);
            self.triangles.push([base + f[0], base + f[2], base + f[3]]);
        }
    }

    /// `n` points distributed uniformly over the surface area.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec3> {
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            total += self.triangle_area(t);
            cumulative.push(total);
        }
        if total <= 0.0 {
            return Vec::new();
        }
        (0..n)
            .map(|_| {
                let u = rng.random::<f64>() * total;
                let t = cumulative.partition_point(|&c| c <= u).min(self.triangles.len() - 1);
                let [a, b, c] = self.triangles[t];
                let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
                let r1 = rng.random::<f64>().sqrt();
                let r2 = rng.random::<f64>();
                let p = a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2);
                // rounding must not push the sample off the triangle's box
                p.sup(&a.inf(&b).inf(&c)).inf(&a.sup(&b).sup(&c))
            })
            .collect()
    }
}
