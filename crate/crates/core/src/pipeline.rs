//! Configuration and the full alternating minimization for one scene.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exemplar::ExemplarSet;
use crate::experiment::ExperimentOptions;
use crate::forest::{classify_points, Forest, ForestConfig};
use crate::geometry::{build_knn_graph, laplacian, spectral_basis, KdTree, PointCloud, RigidTransform, VoxelGrid};
use crate::init::{init_weights, propose_candidates, Candidate, ClassModes, InitOptions, SceneIndex};
use crate::optim::{
    collision_matrix, exemplar_distances, segmentation_step, total_energy, voting_step, weighted_icp_with_tree, EnergyCoefficients,
    EnergyTerms, IcpOptions, IrlsRound, SegmentationInputs, Subspace, VotingOptions, VotingOutcome,
};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphOptions {
    pub k: usize,
    /// Gaussian edge scale in voxels.
    pub sigma_voxels: f64,
    pub n_basis: usize,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            k: 10,
            sigma_voxels: 5.0,
            n_basis: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExemplarOptions {
    pub samples: usize,
    pub per_class: usize,
    /// Size-group count for the first clustering stage; derived when absent.
    pub scale_groups: Option<usize>,
}

impl Default for ExemplarOptions {
    fn default() -> Self {
        ExemplarOptions {
            samples: crate::exemplar::DEFAULT_SAMPLES,
            per_class: 3,
            scale_groups: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkOptions {
    pub n_scenes: usize,
    pub min_per_class: usize,
    pub max_per_class: usize,
    /// Points per square meter of model surface.
    pub density: f64,
    pub noise_sigma: f64,
    /// Upper bound on the object footprint share of the floor.
    pub max_footprint_fraction: f64,
    /// Minimum gap between object boxes, in meters.
    pub clearance: f64,
    pub clutter_boxes: usize,
    pub max_attempts: usize,
    pub max_points: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            n_scenes: 10,
            min_per_class: 1,
            max_per_class: 2,
            density: 600.0,
            noise_sigma: 0.0,
            max_footprint_fraction: 0.3,
            clearance: 0.25,
            clutter_boxes: 2,
            max_attempts: 1000,
            max_points: 20_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub forest: Option<PathBuf>,
    pub exemplars: Option<PathBuf>,
    pub models: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub scenes: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub voxel_size: f64,
    pub energy: EnergyCoefficients,
    pub n_out: usize,
    pub n_in: usize,
    pub n_irls: usize,
    pub output_threshold: f64,
    pub graph: GraphOptions,
    pub forest: ForestConfig,
    pub init: InitOptions,
    pub registration: IcpOptions,
    pub voting: VotingOptions,
    pub exemplars: ExemplarOptions,
    pub benchmark: BenchmarkOptions,
    /// Model and scene counts of the procedural splits.
    pub synthetic: ExperimentOptions,
    pub seed: u64,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            version: CONFIG_VERSION,
            voxel_size: 0.075,
            energy: EnergyCoefficients::default(),
            n_out: 5,
            n_in: 2,
            n_irls: 5,
            output_threshold: 0.1,
            graph: GraphOptions::default(),
            forest: ForestConfig::default(),
            init: InitOptions::default(),
            registration: IcpOptions {
                relative_tolerance: 1e-4,
                min_relative_weight: 1e-4,
                ..IcpOptions::default()
            },
            voting: VotingOptions::default(),
            exemplars: ExemplarOptions::default(),
            benchmark: BenchmarkOptions::default(),
            synthetic: ExperimentOptions::default(),
            seed: 0,
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Replaces the outer iteration count and the non-collision schedule.
    pub fn with_outer_iterations(mut self, n_out: usize) -> Self {
        self.n_out = n_out;
        self.energy.lambda6_schedule = crate::optim::default_schedule(n_out);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {}", self.version));
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return bad(format!("voxel_size must be positive, got {}", self.voxel_size));
        }
        self.energy.validate()?;
        if self.n_out == 0 {
            return bad("n_out must be positive".into());
        }
        if self.energy.lambda6_schedule.len() != self.n_out {
            return bad(format!(
                "lambda6_schedule has {} values but n_out is {}",
                self.energy.lambda6_schedule.len(),
                self.n_out
            ));
        }
        if !(self.output_threshold >= 0.0) {
            return bad("output_threshold must be non-negative".into());
        }
        if self.graph.k == 0 || self.graph.n_basis == 0 || !(self.graph.sigma_voxels > 0.0) {
            return bad("graph.k, graph.n_basis and graph.sigma_voxels must be positive".into());
        }
        self.forest.validate()?;
        let i = &self.init;
        if !(i.bandwidth_scale > 0.0) || i.yaw_starts == 0 || !(i.reject_voxels > 0.0) || !(0.0..=100.0).contains(&i.floor_percentile) {
            return bad("init options out of range".into());
        }
        let ms = &i.mean_shift;
        if !(ms.bins_per_bandwidth > 0.0) || !(ms.merge_factor >= 0.0) || !(0.0..1.0).contains(&ms.min_weight_fraction) {
            return bad("mean shift options out of range".into());
        }
        if !(self.registration.relative_tolerance >= 0.0) || !(self.registration.min_relative_weight >= 0.0) {
            return bad("registration options out of range".into());
        }
        if self.exemplars.per_class == 0 || self.exemplars.samples == 0 {
            return bad("exemplars.per_class and exemplars.samples must be positive".into());
        }
        let b = &self.benchmark;
        if b.min_per_class > b.max_per_class || b.max_per_class == 0 || !(b.density > 0.0) || !(b.noise_sigma >= 0.0) {
            return bad("benchmark options out of range".into());
        }
        if !(b.max_footprint_fraction > 0.0 && b.max_footprint_fraction <= 1.0) || !(b.clearance >= 0.0) {
            return bad("benchmark footprint fraction and clearance out of range".into());
        }
        let x = &self.synthetic;
        if x.training_models_per_class == 0 || x.training_scenes == 0 || x.benchmark_models_per_class == 0 {
            return bad("synthetic model and scene counts must be positive".into());
        }
        if x.database_models_per_class < self.exemplars.per_class {
            return bad("synthetic.database_models_per_class is below exemplars.per_class".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: PipelineConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// One inserted exemplar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub exemplar_id: String,
    pub class: u32,
    /// Homogeneous 4x4, row major.
    pub transform: [f64; 16],
    pub vote: f64,
    pub weight_mass: f64,
}

impl Placement {
    pub fn rigid(&self) -> RigidTransform {
        RigidTransform::from_row_major(&self.transform)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Init,
    Registration,
    Segmentation,
    Voting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub outer: usize,
    pub inner: usize,
    pub phase: Phase,
    pub lambda6: f64,
    pub energy: EnergyTerms,
    /// Candidates that would currently pass the output filter.
    pub active: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub icp: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub irls: Vec<IrlsRound>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub voting: Option<VotingOutcome>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub placements: Vec<Placement>,
    pub candidates: Vec<Candidate>,
    pub modes: Vec<ClassModes>,
    pub votes: Vec<f64>,
    /// Final weights, row 0 clutter.
    pub weights: Option<DMatrix<f64>>,
    pub trace: Trace,
}

fn row_masses(w: &DMatrix<f64>) -> Vec<f64> {
    (1..w.nrows()).map(|e| w.row(e).sum()).collect()
}

/// Runs initialization, then `n_out` rounds of (`n_in` × registration and
/// reweighted segmentation) followed by voting, and keeps candidates with a
/// positive vote and enough weight mass.
pub fn run_pipeline(cloud: &PointCloud, exemplars: &ExemplarSet, forest: &Forest, config: &PipelineConfig) -> Result<RunOutput> {
    config.validate()?;
    if cloud.is_empty() {
        return Ok(RunOutput::default());
    }
    if let Some(c) = exemplars.exemplars.iter().map(|e| e.class).find(|&c| c as usize >= forest.n_labels) {
        return Err(Error::IncompatibleForest(format!(
            "exemplar class {c} has no forest label (forest knows {} labels)",
            forest.n_labels
        )));
    }
    let vs = config.voxel_size;
    let coeffs = &config.energy;
    let points = &cloud.points;
    let grid = VoxelGrid::from_cloud(cloud, vs)?;
    let scores = classify_points(forest, &grid, cloud)?;
    let scene = SceneIndex::new(points);
    let (modes, candidates) = propose_candidates(exemplars, &scores, &scene, vs, &config.init);
    if candidates.is_empty() {
        return Ok(RunOutput {
            modes,
            ..RunOutput::default()
        });
    }
    let graph = build_knn_graph(points, config.graph.k, config.graph.sigma_voxels * vs)?;
    let lap = laplacian(&graph)?;
    let basis = spectral_basis(&lap, &graph, config.graph.n_basis)?;
    let sub = Subspace::new(&basis, &lap);

    let f = &scores.f;
    let n_e = candidates.len();
    let classes: Vec<u32> = candidates.iter().map(|c| c.class).collect();
    let row_class: Vec<u32> = std::iter::once(0).chain(classes.iter().copied()).collect();
    let mut trees: BTreeMap<usize, KdTree> = BTreeMap::new();
    for c in &candidates {
        trees
            .entry(c.exemplar)
            .or_insert_with(|| KdTree::from_vectors(&exemplars.get(c.exemplar).points));
    }
    let tree_refs: Vec<&KdTree> = candidates.iter().map(|c| &trees[&c.exemplar]).collect();
    let point_sets: Vec<&[crate::geometry::Vec3]> = candidates.iter().map(|c| exemplars.get(c.exemplar).points.as_slice()).collect();
    let mut transforms: Vec<RigidTransform> = candidates.iter().map(|c| c.transform).collect();

    let mut alpha = sub.project(&init_weights(f, &classes));
    let mut w = sub.expand(&alpha);
    let mut v = vec![1.0; n_e];
    let mut d = exemplar_distances(points, &tree_refs, &transforms, vs, coeffs.d_clutter, coeffs.d_cap());
    let reg_opts = IcpOptions {
        trim_sq: coeffs.d_cap() * vs * vs,
        ..config.registration
    };
    let threshold = config.output_threshold;
    let active = |w: &DMatrix<f64>, v: &[f64]| row_masses(w).iter().zip(v).filter(|(m, x)| **x > 0.0 && **m >= threshold).count();

    let mut trace = Trace::default();
    let log = |outer, inner, phase, lambda6, w: &DMatrix<f64>, v: &[f64], d: &DMatrix<f64>, ts: &[RigidTransform]| {
        let q = collision_matrix(&point_sets, ts, vs);
        TraceStep {
            outer,
            inner,
            phase,
            lambda6,
            energy: total_energy(w, v, coeffs, lambda6, f, &row_class, &lap, d, &q),
            active: active(w, v),
            icp: Vec::new(),
            irls: Vec::new(),
            voting: None,
        }
    };
    trace
        .steps
        .push(log(0, 0, Phase::Init, coeffs.lambda6_schedule[0], &w, &v, &d, &transforms));

    for (i, &lambda6) in coeffs.lambda6_schedule.iter().enumerate() {
        for j in 0..config.n_in {
            let mut icp = Vec::with_capacity(n_e);
            for e in 0..n_e {
                let weights: Vec<f64> = w.row(e + 1).iter().map(|x| x * x).collect();
                let r = weighted_icp_with_tree(points, &weights, tree_refs[e], &transforms[e], &reg_opts);
                transforms[e] = r.transform;
                icp.push(r.history);
            }
            d = exemplar_distances(points, &tree_refs, &transforms, vs, coeffs.d_clutter, coeffs.d_cap());
            let mut step = log(i, j, Phase::Registration, lambda6, &w, &v, &d, &transforms);
            step.icp = icp;
            trace.steps.push(step);

            let inputs = SegmentationInputs {
                f,
                row_class: &row_class,
                d: &d,
                v: &v,
                lap: &lap,
            };
            let seg = segmentation_step(&sub, &inputs, coeffs, &alpha, config.n_irls)?;
            alpha = seg.alpha;
            w = seg.w;
            let mut step = log(i, j, Phase::Segmentation, lambda6, &w, &v, &d, &transforms);
            step.irls = seg.rounds;
            trace.steps.push(step);
        }
        let q = collision_matrix(&point_sets, &transforms, vs);
        let vote = voting_step(&q, &row_masses(&w), &v, coeffs.lambda5, lambda6, &config.voting);
        v = vote.v.clone();
        let mut step = log(i, config.n_in, Phase::Voting, lambda6, &w, &v, &d, &transforms);
        step.voting = Some(vote);
        trace.steps.push(step);
    }

    let masses = row_masses(&w);
    let placements = (0..n_e)
        .filter(|&e| v[e] > 0.0 && masses[e] >= threshold)
        .map(|e| Placement {
            exemplar_id: exemplars.get(candidates[e].exemplar).id.clone(),
            class: candidates[e].class,
            transform: transforms[e].to_row_major(),
            vote: v[e],
            weight_mass: masses[e],
        })
        .collect();
    let mut final_candidates = candidates;
    for (c, t) in final_candidates.iter_mut().zip(&transforms) {
        c.transform = *t;
    }
    Ok(RunOutput {
        placements,
        candidates: final_candidates,
        modes,
        votes: v,
        weights: Some(w),
        trace,
    })
}

pub fn placements_to_json(placements: &[Placement]) -> Result<String> {
    Ok(serde_json::to_string_pretty(placements)?)
}

pub fn placements_from_json(text: &str) -> Result<Vec<Placement>> {
    Ok(serde_json::from_str(text)?)
}
