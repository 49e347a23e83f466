//! Exemplar database: ingestion, two-stage medoid selection and the
//! class-membership matrix.

pub mod descriptor;
pub mod kmedoids;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use descriptor::ShapeDescriptor;
pub use kmedoids::{k_medoids, Medoids};

use crate::error::{Error, Result};
use crate::geometry::io::{read_off, read_ply, write_off, write_ply, PlyFormat};
use crate::geometry::{Mesh, PointCloud, Vec3};
use crate::rng::mix_seed;

pub const DEFAULT_SAMPLES: usize = 2000;
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarModel {
    pub id: String,
    pub class: u32,
    pub mesh: Mesh,
    /// Canonical pose: z up, lowest point at z = 0.
    pub points: Vec<Vec3>,
    pub bbox_min: Vec3,
    pub bbox_max: Vec3,
}

impl ExemplarModel {
    /// Re-bases the mesh to z = 0 and samples `n` surface points from a
    /// generator seeded with `seed` alone.
    pub fn from_mesh(id: impl Into<String>, class: u32, mut mesh: Mesh, n: usize, seed: u64) -> Result<Self> {
        let id = id.into();
        if class == 0 {
            return Err(Error::InvalidParameter(format!("model {id}: class 0 is reserved for clutter")));
        }
        let (lo, _) = mesh
            .bounds()
            .ok_or_else(|| Error::InvalidParameter(format!("model {id} has no vertices")))?;
        mesh.translate(&Vec3::new(0.0, 0.0, -lo.z));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = mesh.sample_surface(n, &mut rng);
        if points.is_empty() {
            return Err(Error::InvalidParameter(format!("model {id} has zero surface area")));
        }
        Ok(Self::from_points(id, class, mesh, points))
    }

    fn from_points(id: String, class: u32, mesh: Mesh, points: Vec<Vec3>) -> Self {
        let (bbox_min, bbox_max) = points.iter().fold((points[0], points[0]), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        ExemplarModel {
            id,
            class,
            mesh,
            points,
            bbox_min,
            bbox_max,
        }
    }

    pub fn extent(&self) -> Vec3 {
        self.bbox_max - self.bbox_min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn xy_diagonal(&self) -> f64 {
        let e = self.extent();
        (e.x * e.x + e.y * e.y).sqrt()
    }

    /// Centre of the bounding box footprint at floor level.
    pub fn footprint_center(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.bbox_min.x + self.bbox_max.x),
            0.5 * (self.bbox_min.y + self.bbox_max.y),
            self.bbox_min.z,
        )
    }

    pub fn descriptor(&self) -> ShapeDescriptor {
        ShapeDescriptor::from_points(&self.points)
    }
}

/// Stable per-id stream so that sampling does not depend on directory order.
fn id_stream(id: &str) -> u64 {
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Samples in-memory meshes; ids must be unique.
pub fn ingest_meshes(meshes: Vec<(String, u32, Mesh)>, n_sample: usize, seed: u64) -> Result<Vec<ExemplarModel>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(meshes.len());
    for (id, class, mesh) in meshes {
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateModel(id));
        }
        let s = mix_seed(seed, id_stream(&id));
        out.push(ExemplarModel::from_mesh(id, class, mesh, n_sample, s)?);
    }
    Ok(out)
}

/// Reads every `.off` file in `dir`; each must appear in `manifest`
/// (file name to class id). Models are returned sorted by id.
pub fn ingest_models(dir: &Path, manifest: &BTreeMap<String, u32>, n_sample: usize, seed: u64) -> Result<Vec<ExemplarModel>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("off"))
        {
            files.push(path);
        }
    }
    files.sort();
    let mut meshes = Vec::with_capacity(files.len());
    for path in files {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let class = *manifest.get(&name).ok_or_else(|| Error::UnlabeledModel(name.clone()))?;
        let id = path.file_stem().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        meshes.push((id, class, read_off(&path)?));
    }
    ingest_meshes(meshes, n_sample, seed)
}

/// Exemplars indexed from 1; index 0 is the geometry-free clutter slot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExemplarSet {
    pub exemplars: Vec<ExemplarModel>,
}

impl ExemplarSet {
    pub fn new(exemplars: Vec<ExemplarModel>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &exemplars {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateModel(e.id.clone()));
            }
            if e.class == 0 {
                return Err(Error::InvalidParameter(format!("exemplar {} has clutter class", e.id)));
            }
        }
        Ok(ExemplarSet { exemplars })
    }

    pub fn n_exemplars(&self) -> usize {
        self.exemplars.len()
    }

    /// `e` counts from 1.
    pub fn get(&self, e: usize) -> &ExemplarModel {
        &self.exemplars[e - 1]
    }

    pub fn n_classes(&self) -> usize {
        self.exemplars.iter().map(|e| e.class as usize).max().unwrap_or(0)
    }

    pub fn class_of(&self, e: usize) -> u32 {
        if e == 0 {
            0
        } else {
            self.get(e).class
        }
    }

    /// Exemplar indices (from 1) of class `c`.
    pub fn of_class(&self, c: u32) -> Vec<usize> {
        (1..=self.n_exemplars()).filter(|&e| self.get(e).class == c).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.exemplars.len());
        for e in &self.exemplars {
            let cloud_file = format!("{}.ply", e.id);
            let mesh_file = format!("{}.off", e.id);
            write_ply(
                dir.join(&cloud_file),
                &PointCloud::new(e.points.clone())?,
                PlyFormat::BinaryLittleEndian,
            )?;
            write_off(dir.join(&mesh_file), &e.mesh)?;
            entries.push(IndexEntry {
                id: e.id.clone(),
                class: e.class,
                cloud: cloud_file,
                mesh: mesh_file,
                bbox_min: [e.bbox_min.x, e.bbox_min.y, e.bbox_min.z],
                bbox_max: [e.bbox_max.x, e.bbox_max.y, e.bbox_max.z],
                descriptor_sha256: e.descriptor().sha256_hex(),
            });
        }
        let index = Index {
            version: INDEX_VERSION,
            exemplars: entries,
        };
        let path = dir.join("index.json");
        std::fs::write(&path, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("index.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: Index = serde_json::from_str(&text)?;
        if index.version != INDEX_VERSION {
            return Err(Error::InvalidConfig(format!("exemplar index version {}", index.version)));
        }
        let mut exemplars = Vec::with_capacity(index.exemplars.len());
        for entry in index.exemplars {
            let cloud = read_ply(dir.join(&entry.cloud))?;
            let mesh = read_off(dir.join(&entry.mesh))?;
            let model = ExemplarModel::from_points(entry.id, entry.class, mesh, cloud.points);
            if model.descriptor().sha256_hex() != entry.descriptor_sha256 {
                return Err(Error::InvalidConfig(format!(
                    "exemplar {} does not match its descriptor hash",
                    model.id
                )));
            }
            exemplars.push(model);
        }
        ExemplarSet::new(exemplars)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Index {
    version: u32,
    exemplars: Vec<IndexEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    id: String,
    class: u32,
    cloud: String,
    mesh: String,
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
    descriptor_sha256: String,
}

/// Splits `k` over groups in proportion to their sizes (largest remainder,
/// at least one per group and never more than a group holds).
fn allocate(k: usize, sizes: &[usize]) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| (k * s / total).clamp(1, s)).collect();
    let mut given: usize = alloc.iter().sum();
    while given < k {
        let g = (0..sizes.len())
            .filter(|&g| alloc[g] < sizes[g])
            .max_by(|&a, &b| {
                let ra = (k * sizes[a]) as f64 / total as f64 - alloc[a] as f64;
                let rb = (k * sizes[b]) as f64 / total as f64 - alloc[b] as f64;
                ra.total_cmp(&rb).then(b.cmp(&a))
            })
            .expect("k never exceeds the number of models");
        alloc[g] += 1;
        given += 1;
    }
    while given > k {
        let g = (0..sizes.len())
            .filter(|&g| alloc[g] > 1)
            .max_by_key(|&g| (alloc[g], std::cmp::Reverse(g)))
            .unwrap();
        alloc[g] -= 1;
        given -= 1;
    }
    alloc
}

fn distance_matrix<T>(items: &[T], d: impl Fn(&T, &T) -> f64) -> Vec<Vec<f64>> {
    items.iter().map(|a| items.iter().map(|b| d(a, b)).collect()).collect()
}

/// Picks `per_class_count[c]` exemplars of each class: medoids by bounding
/// box diagonal first (`scale_groups` clusters, default one per exemplar),
/// then medoids by shape descriptor within each scale cluster.
pub fn cluster_exemplars(
    models: &[ExemplarModel],
    per_class_count: &BTreeMap<u32, usize>,
    scale_groups: Option<usize>,
) -> Result<ExemplarSet> {
    let mut chosen = Vec::new();
    for (&class, &k) in per_class_count {
        let members: Vec<&ExemplarModel> = models.iter().filter(|m| m.class == class).collect();
        if members.is_empty() {
            return Err(Error::ClassWithNoModels(class));
        }
        if k == 0 {
            continue;
        }
        if k > members.len() {
            return Err(Error::InvalidParameter(format!(
                "class {class} asks for {k} exemplars but has {} models",
                members.len()
            )));
        }
        let diags: Vec<f64> = members.iter().map(|m| m.diagonal()).collect();
        let k1 = scale_groups.unwrap_or(k).clamp(1, k);
        let stage1 = k_medoids(&distance_matrix(&diags, |a, b| (a - b).abs()), k1);
        let groups: Vec<Vec<usize>> = (0..k1)
            .map(|g| (0..members.len()).filter(|&i| stage1.assignment[i] == g).collect())
            .collect();
        let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
        let alloc = allocate(k, &sizes);
        for (group, &kg) in groups.iter().zip(&alloc) {
            let descs: Vec<ShapeDescriptor> = group.iter().map(|&i| members[i].descriptor()).collect();
            let stage2 = k_medoids(&distance_matrix(&descs, |a, b| a.distance(b)), kg);
            for m in stage2.medoids {
                chosen.push(members[group[m]].clone());
            }
        }
    }
    ExemplarSet::new(chosen)
}

/// `A[c - 1][e - 1] = 1` iff exemplar `e` has class `c`; clutter has no row
/// or column.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMatrix {
    pub a: DMatrix<f64>,
}

impl ClassMatrix {
    pub fn n_classes(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_exemplars(&self) -> usize {
        self.a.ncols()
    }

    /// Class of exemplar `e` (from 1).
    pub fn class_of(&self, e: usize) -> u32 {
        let col = self.a.column(e - 1);
        (0..col.len()).find(|&c| col[c] == 1.0).map_or(0, |c| c as u32 + 1)
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        (0..self.n_classes()).map(|c| self.a.row(c).sum() as usize).collect()
    }
}

/// Membership matrix with `n_classes` rows (at least the largest class id).
pub fn class_matrix(set: &ExemplarSet, n_classes: usize) -> ClassMatrix {
    let n_c = n_classes.max(set.n_classes());
    let mut a = DMatrix::zeros(n_c, set.n_exemplars());
    for (j, e) in set.exemplars.iter().enumerate() {
        a[(e.class as usize - 1, j)] = 1.0;
    }
    ClassMatrix { a }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cube(size: f64) -> Mesh {
        let mut m = Mesh::default();
        m.add_box(Vec3::zeros(), Vec3::repeat(size));
        m
    }

    #[test]
    fn unit_cube_samples_stay_inside() {
        let m = ExemplarModel::from_mesh("cube", 1, cube(1.0), DEFAULT_SAMPLES, 7).unwrap();
        assert_eq!(m.points.len(), 2000);
        assert!(m.points.iter().all(|p| p.iter().all(|&c| (0.0..=1.0).contains(&c))));
    }

    #[test]
    fn sampling_density_follows_area() {
        let mut mesh = Mesh::default();
        mesh.vertices = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(3.0, 0.0, 0.0),
            Vec3::new(3.0, 2.0, 0.0),
        ];
        mesh.triangles = vec![[0, 1, 2], [1, 3, 4]];
        let areas = [mesh.triangle_area(0), mesh.triangle_area(1)];
        let total = areas[0] + areas[1];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = mesh.sample_surface(100_000, &mut rng);
        let in_first = pts.iter().filter(|p| p.x + p.y <= 1.0 + 1e-12 && p.x <= 1.0).count() as f64;
        let expected = 100_000.0 * areas[0] / total;
        assert!((in_first - expected).abs() / expected < 0.05);
    }

    #[test]
    fn reproducible_and_duplicate_ids_rejected() {
        let a = ExemplarModel::from_mesh("a", 1, cube(0.5), 100, 9).unwrap();
        let b = ExemplarModel::from_mesh("a", 1, cube(0.5), 100, 9).unwrap();
        assert_eq!(a.points, b.points);
        let err = ingest_meshes(vec![("x".into(), 1, cube(1.0)), ("x".into(), 2, cube(2.0))], 10, 0);
        assert!(matches!(err, Err(Error::DuplicateModel(_))));
    }

    #[test]
    fn single_model_becomes_the_exemplar() {
        let models = ingest_meshes(vec![("t".into(), 1, cube(1.0)), ("c".into(), 2, cube(0.5))], 200, 0).unwrap();
        let counts = BTreeMap::from([(1, 1), (2, 1)]);
        let set = cluster_exemplars(&models, &counts, None).unwrap();
        let ids: Vec<&str> = set.exemplars.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["t", "c"]);
    }

    #[test]
    fn one_medoid_per_scale_group() {
        let mut meshes = Vec::new();
        for i in 0..3 {
            meshes.push((format!("small{i}"), 1, cube(1.0)));
            meshes.push((format!("large{i}"), 1, cube(2.0)));
        }
        let models = ingest_meshes(meshes, 300, 1).unwrap();
        let set = cluster_exemplars(&models, &BTreeMap::from([(1, 2)]), Some(2)).unwrap();
        let mut diags: Vec<f64> = set.exemplars.iter().map(|e| e.diagonal()).collect();
        diags.sort_by(f64::total_cmp);
        assert!(diags[0] < 2.0 && diags[1] > 2.5);
    }

    #[test]
    fn missing_class_is_an_error() {
        let models = ingest_meshes(vec![("t".into(), 1, cube(1.0))], 50, 0).unwrap();
        let r = cluster_exemplars(&models, &BTreeMap::from([(1, 1), (2, 1)]), None);
        assert!(matches!(r, Err(Error::ClassWithNoModels(2))));
    }

    #[test]
    fn class_matrix_columns_are_one_hot() {
        let models = ingest_meshes(
            vec![("a".into(), 1, cube(1.0)), ("b".into(), 1, cube(1.1)), ("c".into(), 2, cube(0.3))],
            50,
            0,
        )
        .unwrap();
        let set = ExemplarSet::new(models.clone()).unwrap();
        let a = class_matrix(&set, 2);
        for j in 0..a.n_exemplars() {
            assert_eq!(a.a.column(j).sum(), 1.0);
        }
        assert_eq!(a.class_sizes(), vec![2, 1]);
        let mut rev = models;
        rev.reverse();
        let b = class_matrix(&ExemplarSet::new(rev).unwrap(), 2);
        for j in 0..3 {
            assert_eq!(a.a.column(j), b.a.column(2 - j));
        }
    }

    #[test]
    fn class_counts_match_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.random_range(1..12);
            let classes: Vec<u32> = (0..n).map(|_| rng.random_range(1..5)).collect();
            let models = classes
                .iter()
                .enumerate()
                .map(|(i, &c)| ExemplarModel::from_mesh(format!("m{i}"), c, cube(1.0), 10, 0).unwrap())
                .collect();
            let a = class_matrix(&ExemplarSet::new(models).unwrap(), 4);
            let sizes = a.class_sizes();
            for c in 1..=4u32 {
                assert_eq!(sizes[c as usize - 1], classes.iter().filter(|&&x| x == c).count());
            }
        }
    }

    #[test]
    fn directory_round_trip() {
        let models = ingest_meshes(vec![("a".into(), 1, cube(1.0)), ("b".into(), 2, cube(0.4))], 80, 0).unwrap();
        let set = ExemplarSet::new(models).unwrap();
        let dir = tempfile::tempdir().unwrap();
        set.save(dir.path()).unwrap();
        let back = ExemplarSet::load(dir.path()).unwrap();
        assert_eq!(back.exemplars.len(), 2);
        for (x, y) in back.exemplars.iter().zip(&set.exemplars) {
            assert_eq!(x.points, y.points);
            assert_eq!((x.bbox_min, x.bbox_max), (y.bbox_min, y.bbox_max));
        }
    }

    #[test]
    fn unlabeled_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_off(dir.path().join("chair.off"), &cube(1.0)).unwrap();
        write_off(dir.path().join("table.off"), &cube(2.0)).unwrap();
        let manifest = BTreeMap::from([("chair.off".to_string(), 1)]);
        assert!(matches!(ingest_models(dir.path(), &manifest, 10, 0), Err(Error::UnlabeledModel(_))));
        let manifest = BTreeMap::from([("chair.off".to_string(), 1), ("table.off".to_string(), 2)]);
        assert_eq!(ingest_models(dir.path(), &manifest, 10, 0).unwrap().len(), 2);
    }
}
