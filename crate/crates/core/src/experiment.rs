//! End-to-end synthetic experiment: train a forest on procedural training
//! scenes, pick exemplars from a database split, run the pipeline on a
//! held-out benchmark and score the result.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{evaluate, Detection, EvaluationReport, OrientedBox, SceneAnnotation, IOU_THRESHOLD};
use crate::exemplar::{cluster_exemplars, ExemplarSet};
use crate::forest::{train_forest_on_scenes, Forest};
use crate::geometry::VoxelGrid;
use crate::pipeline::{run_pipeline, PipelineConfig, Placement, RunOutput};
use crate::rng::mix_seed;
use crate::synth::{gen_benchmark, generate_scene, procedural_models, Scene, Split, CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentOptions {
    pub training_models_per_class: usize,
    pub training_scenes: usize,
    pub database_models_per_class: usize,
    pub benchmark_models_per_class: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            training_models_per_class: 6,
            training_scenes: 6,
            database_models_per_class: 5,
            benchmark_models_per_class: 3,
        }
    }
}

pub fn training_scenes(config: &PipelineConfig) -> Result<Vec<Scene>> {
    let opts = &config.synthetic;
    let models = procedural_models(
        Split::Training,
        &CLASSES,
        opts.training_models_per_class,
        config.exemplars.samples,
        config.seed,
    )?;
    (0..opts.training_scenes)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(config.seed, 0x7261), k as u64));
            generate_scene(&models, &CLASSES, &config.benchmark, &mut rng)
        })
        .collect()
}

pub fn train_on_scenes(scenes: &[Scene], config: &PipelineConfig) -> Result<Forest> {
    let data = scenes
        .iter()
        .map(|s| Ok((VoxelGrid::from_cloud(&s.cloud, config.voxel_size)?, s.cloud.clone())))
        .collect::<Result<Vec<_>>>()?;
    train_forest_on_scenes(&data, &config.forest)
}

pub fn database_exemplars(config: &PipelineConfig) -> Result<ExemplarSet> {
    let models = procedural_models(
        Split::Database,
        &CLASSES,
        config.synthetic.database_models_per_class,
        config.exemplars.samples,
        config.seed,
    )?;
    let per_class: BTreeMap<u32, usize> = CLASSES.iter().map(|&c| (c, config.exemplars.per_class)).collect();
    cluster_exemplars(&models, &per_class, config.exemplars.scale_groups)
}

pub fn benchmark_scenes(config: &PipelineConfig) -> Result<Vec<Scene>> {
    let models = procedural_models(
        Split::Benchmark,
        &CLASSES,
        config.synthetic.benchmark_models_per_class,
        config.exemplars.samples,
        config.seed,
    )?;
    let set = ExemplarSet::new(models)?;
    gen_benchmark(
        &set,
        config.benchmark.n_scenes,
        &CLASSES,
        &config.benchmark,
        mix_seed(config.seed, 0x6265),
    )
}

pub struct Experiment {
    pub forest: Forest,
    pub exemplars: ExemplarSet,
    pub scenes: Vec<Scene>,
}

pub fn prepare(config: &PipelineConfig) -> Result<Experiment> {
    let forest = train_on_scenes(&training_scenes(config)?, config)?;
    Ok(Experiment {
        forest,
        exemplars: database_exemplars(config)?,
        scenes: benchmark_scenes(config)?,
    })
}

/// Boxes of the placed exemplars. Placements naming unknown exemplars are skipped.
pub fn detections(placements: &[Placement], exemplars: &ExemplarSet) -> Vec<Detection> {
    placements
        .iter()
        .filter_map(|p| {
            let model = exemplars.exemplars.iter().find(|m| m.id == p.exemplar_id)?;
            Some(Detection {
                class: p.class,
                bbox: OrientedBox::of_placement(p, model),
            })
        })
        .collect()
}

pub struct SceneRun {
    pub output: RunOutput,
    pub seconds: f64,
}

pub struct BenchmarkRun {
    pub runs: Vec<SceneRun>,
    pub report: EvaluationReport,
}

pub fn run_benchmark(exp: &Experiment, config: &PipelineConfig) -> Result<BenchmarkRun> {
    let mut runs = Vec::with_capacity(exp.scenes.len());
    let mut scored: Vec<(Vec<Detection>, SceneAnnotation)> = Vec::with_capacity(exp.scenes.len());
    for s in &exp.scenes {
        let start = Instant::now();
        let output = run_pipeline(&s.cloud, &exp.exemplars, &exp.forest, config)?;
        let seconds = start.elapsed().as_secs_f64();
        scored.push((detections(&output.placements, &exp.exemplars), s.annotation.clone()));
        runs.push(SceneRun { output, seconds });
    }
    let report = evaluate(&scored, IOU_THRESHOLD, config.seed);
    Ok(BenchmarkRun { runs, report })
}
