use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use scenerep_core::eval::{evaluate as score, EvaluationReport, SceneAnnotation, IOU_THRESHOLD};
use scenerep_core::exemplar::{cluster_exemplars, ingest_models};
use scenerep_core::experiment::{benchmark_scenes, database_exemplars, detections, train_on_scenes, training_scenes};
use scenerep_core::geometry::io::{read_ply, write_ply};
use scenerep_core::geometry::PlyFormat;
use scenerep_core::pipeline::{placements_from_json, placements_to_json, Trace};
use scenerep_core::rng::mix_seed;
use scenerep_core::synth::{gen_benchmark as generate, Scene};
use scenerep_core::{run_pipeline, ExemplarSet, Forest, PipelineConfig};

use crate::plots;
use crate::Common;

pub fn print_error(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut config = match &c.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = c.seed {
        config.seed = seed;
        config.forest.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(c: &Common) -> Result<&Path> {
    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    Ok(&c.out)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

fn pick(flag: Option<&Path>, configured: &Option<PathBuf>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf).or_else(|| configured.clone())
}

/// Files of `dir` ending in `suffix`, sorted by name.
fn files_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if path.is_file() && name.ends_with(suffix) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem_of(path: &Path, suffix: &str) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    name.strip_suffix(suffix).unwrap_or(name).to_string()
}

fn read_manifest(path: &Path) -> Result<BTreeMap<String, u32>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
}

fn ingested(config: &PipelineConfig, models: Option<&Path>, manifest: Option<&Path>) -> Result<Option<Vec<scenerep_core::ExemplarModel>>> {
    let models = pick(models, &config.paths.models);
    let manifest = pick(manifest, &config.paths.manifest);
    match (models, manifest) {
        (None, None) => Ok(None),
        (Some(dir), Some(manifest)) => Ok(Some(ingest_models(
            &dir,
            &read_manifest(&manifest)?,
            config.exemplars.samples,
            config.seed,
        )?)),
        _ => bail!("--models and --manifest must be given together"),
    }
}

pub fn train_forest(c: &Common, scenes: Option<&Path>) -> Result<()> {
    let config = load_config(c)?;
    let scenes = match pick(scenes, &config.paths.scenes) {
        Some(dir) => {
            let files = files_with_suffix(&dir, ".ply")?;
            if files.is_empty() {
                bail!("no PLY scenes in {}", dir.display());
            }
            files
                .iter()
                .map(|f| {
                    let cloud = read_ply(f)?;
                    if cloud.labels.is_none() {
                        bail!("{} has no per-point labels", f.display());
                    }
                    Ok(Scene {
                        cloud,
                        annotation: SceneAnnotation::default(),
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => training_scenes(&config)?,
    };
    let forest = train_on_scenes(&scenes, &config)?;
    let path = out_dir(c)?.join("forest.json");
    forest.save(&path)?;
    println!("{}", json!({ "forest": path, "scenes": scenes.len(), "trees": forest.trees.len() }));
    Ok(())
}

pub fn build_exemplars(c: &Common, models: Option<&Path>, manifest: Option<&Path>) -> Result<()> {
    let config = load_config(c)?;
    let set = match ingested(&config, models, manifest)? {
        Some(models) => {
            let per_class: BTreeMap<u32, usize> = models.iter().map(|m| (m.class, config.exemplars.per_class)).collect();
            cluster_exemplars(&models, &per_class, config.exemplars.scale_groups)?
        }
        None => database_exemplars(&config)?,
    };
    let dir = out_dir(c)?.join("exemplars");
    set.save(&dir)?;
    println!("{}", json!({ "exemplars": dir, "count": set.n_exemplars() }));
    Ok(())
}

pub fn gen_benchmark(c: &Common, models: Option<&Path>, manifest: Option<&Path>) -> Result<()> {
    let config = load_config(c)?;
    let scenes = match ingested(&config, models, manifest)? {
        Some(models) => {
            let mut classes: Vec<u32> = models.iter().map(|m| m.class).collect();
            classes.sort_unstable();
            classes.dedup();
            let set = ExemplarSet::new(models)?;
            generate(
                &set,
                config.benchmark.n_scenes,
                &classes,
                &config.benchmark,
                mix_seed(config.seed, 0x6265),
            )?
        }
        None => benchmark_scenes(&config)?,
    };
    let out = out_dir(c)?;
    for (k, s) in scenes.iter().enumerate() {
        write_ply(out.join(format!("scene_{k:03}.ply")), &s.cloud, PlyFormat::BinaryLittleEndian)?;
        write_json(&out.join(format!("scene_{k:03}.json")), &s.annotation)?;
    }
    println!("{}", json!({ "scenes": scenes.len(), "out": out }));
    Ok(())
}

pub fn transform(c: &Common, input: &Path, forest: Option<&Path>, exemplars: Option<&Path>) -> Result<()> {
    let config = load_config(c)?;
    let forest_path = pick(forest, &config.paths.forest).ok_or_else(|| anyhow!("no forest given (--forest or paths.forest)"))?;
    let exemplar_dir =
        pick(exemplars, &config.paths.exemplars).ok_or_else(|| anyhow!("no exemplar set given (--exemplars or paths.exemplars)"))?;
    let forest = Forest::load(&forest_path, config.forest.m, &config.forest.channels)?;
    let set = ExemplarSet::load(&exemplar_dir)?;
    let inputs = if input.is_dir() {
        files_with_suffix(input, ".ply")?
    } else {
        vec![input.to_path_buf()]
    };
    if inputs.is_empty() {
        bail!("no PLY scenes in {}", input.display());
    }
    let out = out_dir(c)?;
    for path in &inputs {
        let cloud = read_ply(path)?;
        let run = run_pipeline(&cloud, &set, &forest, &config).with_context(|| format!("transforming {}", path.display()))?;
        let stem = stem_of(path, ".ply");
        write(
            &out.join(format!("{stem}.placements.json")),
            placements_to_json(&run.placements)? + "\n",
        )?;
        write_json(&out.join(format!("{stem}.trace.json")), &run.trace)?;
        write_json(
            &out.join(format!("{stem}.init.json")),
            &json!({ "modes": run.modes, "candidates": run.candidates, "votes": run.votes }),
        )?;
        println!("{}", json!({ "scene": stem, "placements": run.placements.len() }));
    }
    Ok(())
}

pub fn evaluate(c: &Common, scenes: &Path, placements: &Path, exemplars: Option<&Path>) -> Result<()> {
    let config = load_config(c)?;
    let exemplar_dir =
        pick(exemplars, &config.paths.exemplars).ok_or_else(|| anyhow!("no exemplar set given (--exemplars or paths.exemplars)"))?;
    let set = ExemplarSet::load(&exemplar_dir)?;
    let mut names = Vec::new();
    let mut scored = Vec::new();
    for ann_path in files_with_suffix(scenes, ".json")? {
        let stem = stem_of(&ann_path, ".json");
        if stem.contains('.') {
            // placements, traces and init dumps share the directory
            continue;
        }
        let annotation: SceneAnnotation =
            serde_json::from_str(&fs::read_to_string(&ann_path)?).with_context(|| format!("parsing annotation {}", ann_path.display()))?;
        let p_path = placements.join(format!("{stem}.placements.json"));
        let text = fs::read_to_string(&p_path).with_context(|| format!("reading {}", p_path.display()))?;
        let placed = placements_from_json(&text)?;
        if let Some(p) = placed.iter().find(|p| !set.exemplars.iter().any(|m| m.id == p.exemplar_id)) {
            bail!("{} names unknown exemplar {:?}", p_path.display(), p.exemplar_id);
        }
        scored.push((detections(&placed, &set), annotation));
        names.push(stem);
    }
    if scored.is_empty() {
        bail!("no scene annotations in {}", scenes.display());
    }
    let report = score(&scored, IOU_THRESHOLD, config.seed);
    let out = out_dir(c)?;
    write_json(
        &out.join("evaluation.json"),
        &json!({ "scenes": names, "iou_threshold": IOU_THRESHOLD, "report": report }),
    )?;
    write(&out.join("metrics.csv"), report.to_csv())?;
    println!(
        "{}",
        json!({
            "scenes": names.len(),
            "semantic_f1": report.semantic.f1,
            "geometric_f1": report.geometric.f1,
            "mean_class_recall": report.mean_class_recall(),
        })
    );
    Ok(())
}

pub fn report(c: &Common, evaluation: Option<&Path>, traces: Option<&Path>) -> Result<()> {
    if evaluation.is_none() && traces.is_none() {
        bail!("nothing to report: give --evaluation and/or --traces");
    }
    // validates --config even though rendering needs none of it
    load_config(c)?;
    let out = out_dir(c)?;
    let mut written: Vec<PathBuf> = Vec::new();
    if let Some(path) = evaluation {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let report: EvaluationReport = serde_json::from_value(value.get("report").cloned().unwrap_or(value))
            .with_context(|| format!("parsing evaluation {}", path.display()))?;
        let csv = out.join("metrics.csv");
        write(&csv, report.to_csv())?;
        let svg = out.join("metrics.svg");
        plots::metrics_chart(&report, &svg)?;
        written.extend([csv, svg]);
    }
    if let Some(dir) = traces {
        let files = files_with_suffix(dir, ".trace.json")?;
        if files.is_empty() {
            bail!("no trace files in {}", dir.display());
        }
        let mut series = Vec::with_capacity(files.len());
        for f in &files {
            let trace: Trace = serde_json::from_str(&fs::read_to_string(f)?).with_context(|| format!("parsing trace {}", f.display()))?;
            series.push((stem_of(f, ".trace.json"), trace));
        }
        let csv = out.join("energy_trace.csv");
        write(&csv, plots::trace_csv(&series))?;
        let svg = out.join("energy_trace.svg");
        plots::energy_chart(&series, &svg)?;
        written.extend([csv, svg]);
    }
    println!("{}", json!({ "written": written }));
    Ok(())
}
