//! Procedural furniture models and synthetic labelled scenes.
//!
//! Classes: 1 table, 2 chair, 3 cabinet. Every model is asymmetric under
//! half turns so that poses are identifiable.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{footprints_overlap, AnnotatedObject, OrientedBox, SceneAnnotation};
use crate::exemplar::{ingest_meshes, ExemplarModel, ExemplarSet};
use crate::geometry::{Mesh, PointCloud, RigidTransform, Vec3};
use crate::pipeline::BenchmarkOptions;
use crate::rng::mix_seed;

pub const TABLE: u32 = 1;
pub const CHAIR: u32 = 2;
pub const CABINET: u32 = 3;
pub const CLASSES: [u32; 3] = [TABLE, CHAIR, CABINET];

pub fn class_name(c: u32) -> &'static str {
    match c {
        0 => "clutter",
        TABLE => "table",
        CHAIR => "chair",
        CABINET => "cabinet",
        _ => "unknown",
    }
}

fn table<R: Rng>(rng: &mut R) -> Mesh {
    let l = rng.random_range(0.9..1.5);
    let w = rng.random_range(0.6..0.9);
    let h = rng.random_range(0.70..0.78);
    let (top, leg) = (0.04, 0.05);
    let mut m = Mesh::default();
    m.add_box(Vec3::new(0.0, 0.0, h - top), Vec3::new(l, w, h));
    for (x, y) in [(0.0, 0.0), (l - leg, 0.0), (0.0, w - leg), (l - leg, w - leg)] {
        m.add_box(Vec3::new(x, y, 0.0), Vec3::new(x + leg, y + leg, h - top));
    }
    // drawer block hanging under one end
    let dw = rng.random_range(0.3..0.4);
    m.add_box(Vec3::new(l - leg - dw, leg, h - top - 0.18), Vec3::new(l - leg, w - leg, h - top));
    m
}

fn chair<R: Rng>(rng: &mut R) -> Mesh {
    let sw = rng.random_range(0.42..0.5);
    let sd = rng.random_range(0.42..0.5);
    let sh = rng.random_range(0.42..0.48);
    let bh = rng.random_range(0.35..0.5);
    let (seat, leg) = (0.04, 0.04);
    let mut m = Mesh::default();
    m.add_box(Vec3::new(0.0, 0.0, sh - seat), Vec3::new(sw, sd, sh));
    for (x, y) in [(0.0, 0.0), (sw - leg, 0.0), (0.0, sd - leg), (sw - leg, sd - leg)] {
        m.add_box(Vec3::new(x, y, 0.0), Vec3::new(x + leg, y + leg, sh - seat));
    }
    m.add_box(Vec3::new(0.0, sd - 0.04, sh), Vec3::new(sw, sd, sh + bh));
    m
}

fn cabinet<R: Rng>(rng: &mut R) -> Mesh {
    let w = rng.random_range(0.5..1.0);
    let d = rng.random_range(0.4..0.6);
    let h = rng.random_range(0.8..1.3);
    let t = 0.02;
    let mut m = Mesh::default();
    // open front at y = 0
    m.add_box(Vec3::new(0.0, d - t, 0.0), Vec3::new(w, d, h));
    m.add_box(Vec3::new(0.0, 0.0, 0.0), Vec3::new(t, d - t, h));
    m.add_box(Vec3::new(w - t, 0.0, 0.0), Vec3::new(w, d - t, h));
    m.add_box(Vec3::new(t, 0.0, h - t), Vec3::new(w - t, d - t, h));
    m.add_box(Vec3::new(t, 0.0, 0.0), Vec3::new(w - t, d - t, 0.08));
    let shelves = rng.random_range(1..=2);
    for s in 1..=shelves {
        let z = h * s as f64 / (shelves + 1) as f64;
        m.add_box(Vec3::new(t, 0.0, z - t / 2.0), Vec3::new(w - t, d - t, z + t / 2.0));
    }
    m
}

pub fn procedural_mesh<R: Rng>(class: u32, rng: &mut R) -> Result<Mesh> {
    match class {
        TABLE => Ok(table(rng)),
        CHAIR => Ok(chair(rng)),
        CABINET => Ok(cabinet(rng)),
        _ => Err(Error::InvalidParameter(format!("no procedural generator for class {class}"))),
    }
}

/// Disjoint model pools drawn from independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Training,
    Database,
    Benchmark,
}

impl Split {
    fn tag(self) -> (&'static str, u64) {
        match self {
            Split::Training => ("train", 1),
            Split::Database => ("db", 2),
            Split::Benchmark => ("bench", 3),
        }
    }
}

/// `count` meshes per class with ids `<split>-<class>-<k>`.
pub fn procedural_meshes(split: Split, classes: &[u32], count: usize, seed: u64) -> Result<Vec<(String, u32, Mesh)>> {
    let (name, stream) = split.tag();
    let mut out = Vec::new();
    for &c in classes {
        for k in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, stream), (c as u64) << 32 | k as u64));
            out.push((format!("{name}-{}-{k}", class_name(c)), c, procedural_mesh(c, &mut rng)?));
        }
    }
    Ok(out)
}

pub fn procedural_models(split: Split, classes: &[u32], count: usize, n_sample: usize, seed: u64) -> Result<Vec<ExemplarModel>> {
    ingest_meshes(procedural_meshes(split, classes, count, seed)?, n_sample, seed)
}

/// A labelled point cloud with its ground-truth boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Point labels are classes; clutter is 0.
    pub cloud: PointCloud,
    pub annotation: SceneAnnotation,
}

fn clutter_mesh<R: Rng>(rng: &mut R) -> Mesh {
    let mut m = Mesh::default();
    let s = Vec3::new(rng.random_range(0.1..0.3), rng.random_range(0.1..0.3), rng.random_range(0.05..0.3));
    m.add_box(Vec3::zeros(), s);
    m
}

struct Item<'a> {
    mesh: &'a Mesh,
    class: u32,
    id: String,
    lo: Vec3,
    hi: Vec3,
}

/// Places every item at a random yaw and position with box footprints at
/// least `clearance` apart, inside a square floor sized so the footprints
/// cover at most `max_footprint_fraction` of it.
fn place<R: Rng>(items: &[Item], opts: &BenchmarkOptions, rng: &mut R) -> Result<Vec<RigidTransform>> {
    let area: f64 = items.iter().map(|it| (it.hi.x - it.lo.x) * (it.hi.y - it.lo.y)).sum();
    let side = (area / opts.max_footprint_fraction).sqrt();
    let mut placed: Vec<OrientedBox> = Vec::new();
    let mut out = Vec::new();
    for it in items {
        let mut ok = None;
        for _ in 0..opts.max_attempts {
            let yaw = rng.random_range(0.0..std::f64::consts::TAU);
            let x = rng.random_range(0.0..side);
            let y = rng.random_range(0.0..side);
            let fc = Vec3::new(0.5 * (it.lo.x + it.hi.x), 0.5 * (it.lo.y + it.hi.y), it.lo.z);
            let t =
                RigidTransform::from_yaw(yaw, Vector3::new(x, y, 0.0)).compose(&RigidTransform::new(nalgebra::Matrix3::identity(), -fc));
            let b = OrientedBox::from_canonical(&it.lo, &it.hi, &t);
            let (lo, hi) = b.aabb();
            if lo[0] < 0.0 || lo[1] < 0.0 || hi[0] > side || hi[1] > side {
                continue;
            }
            if placed.iter().any(|p| footprints_overlap(p, &b, 0.5 * opts.clearance)) {
                continue;
            }
            ok = Some((t, b));
            break;
        }
        let (t, b) = ok.ok_or(Error::PlacementFailure(opts.max_attempts))?;
        placed.push(b);
        out.push(t);
    }
    Ok(out)
}

fn sample_items<R: Rng>(items: &[Item], transforms: &[RigidTransform], opts: &BenchmarkOptions, rng: &mut R) -> PointCloud {
    let areas: Vec<f64> = items.iter().map(|it| it.mesh.area()).collect();
    let wanted: f64 = areas.iter().sum::<f64>() * opts.density;
    let scale = if wanted > opts.max_points as f64 {
        opts.max_points as f64 / wanted
    } else {
        1.0
    };
    let noise = (opts.noise_sigma > 0.0).then(|| Normal::new(0.0, opts.noise_sigma).unwrap());
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for ((it, t), a) in items.iter().zip(transforms).zip(&areas) {
        let n = ((a * opts.density * scale).floor() as usize).max(1);
        for p in it.mesh.sample_surface(n, rng) {
            let mut q = t.apply(&p);
            if let Some(nd) = &noise {
                q += Vec3::new(nd.sample(rng), nd.sample(rng), nd.sample(rng));
            }
            points.push(q);
            labels.push(it.class);
        }
    }
    PointCloud::with_labels(points, Some(labels)).expect("labels match points")
}

/// One scene from the given models: `min..=max` objects of each class drawn
/// uniformly, plus clutter boxes. Regenerates the layout when placement fails.
pub fn generate_scene<R: Rng>(models: &[ExemplarModel], classes: &[u32], opts: &BenchmarkOptions, rng: &mut R) -> Result<Scene> {
    let clutter: Vec<Mesh> = (0..opts.clutter_boxes).map(|_| clutter_mesh(rng)).collect();
    let mut items = Vec::new();
    for &c in classes {
        let pool: Vec<&ExemplarModel> = models.iter().filter(|m| m.class == c).collect();
        if pool.is_empty() {
            return Err(Error::ClassWithNoModels(c));
        }
        let count = rng.random_range(opts.min_per_class..=opts.max_per_class);
        for _ in 0..count {
            let m = pool[rng.random_range(0..pool.len())];
            let (lo, hi) = m.mesh.bounds().expect("ingested meshes have vertices");
            items.push(Item {
                mesh: &m.mesh,
                class: c,
                id: m.id.clone(),
                lo,
                hi,
            });
        }
    }
    for (k, mesh) in clutter.iter().enumerate() {
        let (lo, hi) = mesh.bounds().unwrap();
        items.push(Item {
            mesh,
            class: 0,
            id: format!("clutter-{k}"),
            lo,
            hi,
        });
    }
    let mut last = Error::PlacementFailure(opts.max_attempts);
    for _ in 0..10 {
        match place(&items, opts, rng) {
            Ok(transforms) => {
                let cloud = sample_items(&items, &transforms, opts, rng);
                let objects = items
                    .iter()
                    .zip(&transforms)
                    .filter(|(it, _)| it.class != 0)
                    .map(|(it, t)| AnnotatedObject {
                        class: it.class,
                        bbox: OrientedBox::from_canonical(&it.lo, &it.hi, t),
                        model_id: it.id.clone(),
                    })
                    .collect();
                return Ok(Scene {
                    cloud,
                    annotation: SceneAnnotation { objects },
                });
            }
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// `n_scenes` scenes from a held-out model set, each from its own stream.
pub fn gen_benchmark(set: &ExemplarSet, n_scenes: usize, classes: &[u32], opts: &BenchmarkOptions, seed: u64) -> Result<Vec<Scene>> {
    (0..n_scenes)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, k as u64));
            generate_scene(&set.exemplars, classes, opts, &mut rng)
        })
        .collect()
}
