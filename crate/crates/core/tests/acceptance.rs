//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Run with `cargo test -p scenerep-core --test acceptance`.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenerep_core::experiment::{prepare, run_benchmark, BenchmarkRun};
use scenerep_core::geometry::transform::wrap_angle;
use scenerep_core::geometry::{build_knn_graph, laplacian, spectral_basis};
use scenerep_core::init::{class_bandwidth, init_pose, init_weights, weighted_mean_shift, InitOptions, SceneIndex};
use scenerep_core::optim::energy::{irls_weights, segmentation_energy};
use scenerep_core::optim::reference::segmentation_step_reference;
use scenerep_core::optim::segmentation::{segmentation_step, solve_surrogate, SegmentationInputs, Subspace};
use scenerep_core::optim::voting::{voting_objective, voting_step, VotingOptions};
use scenerep_core::optim::weighted_icp;
use scenerep_core::pipeline::placements_to_json;
use scenerep_core::{EnergyCoefficients, PipelineConfig, RigidTransform, Vec3};

const MONOTONE_TOL: f64 = 1e-8;
const SIMPLEX_TOL: f64 = 1e-8;

/// Evidence gathered for the monotonicity criterion while the others run.
#[derive(Default)]
struct Monotonicity {
    irls_rounds: usize,
    irls_violations: usize,
    icp_steps: usize,
    icp_violations: usize,
    simplex_columns: usize,
    simplex_worst: f64,
}

impl Monotonicity {
    fn irls(&mut self, before: f64, after: f64) {
        self.irls_rounds += 1;
        if after > before + MONOTONE_TOL * before.abs().max(1.0) {
            self.irls_violations += 1;
        }
    }

    fn icp(&mut self, history: &[f64]) {
        for w in history.windows(2) {
            self.icp_steps += 1;
            if w[1] > w[0] + MONOTONE_TOL * w[0].abs().max(1.0) {
                self.icp_violations += 1;
            }
        }
    }

    fn simplex(&mut self, w: &DMatrix<f64>) {
        for col in w.column_iter() {
            self.simplex_columns += 1;
            self.simplex_worst = self.simplex_worst.max((col.sum() - 1.0).abs());
        }
    }
}

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: usize, name: &str, ok: bool, elapsed: Duration, budget: Option<Duration>, detail: String) {
        let in_time = budget.is_none_or(|b| elapsed <= b);
        let pass = ok && in_time;
        if !pass {
            self.failures += 1;
        }
        let budget = budget.map_or(String::new(), |b| format!(" (budget {:.0}s)", b.as_secs_f64()));
        println!(
            "criterion {id} {:<24} {}  {detail}; {:.1}s{budget}",
            name,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(rng.random::<f64>() * 2.0, rng.random(), 0.2 * rng.random::<f64>()))
        .collect()
}

fn criterion1(report: &mut Report) {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut graphs = 0;
    let mut connected = true;
    for &n in &[10usize, 100, 1000] {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let pts = random_cloud(&mut rng, n);
            let k = 8.min(n - 1);
            let g = build_knn_graph(&pts, k, 1.0).unwrap();
            connected &= g.components().1 == 1;
            let l = laplacian(&g).unwrap();
            let b = spectral_basis(&l, &g, 30.min(n)).unwrap();
            worst = worst.max(b.feasibility_residual());
            graphs += 1;
        }
    }
    report.line(
        1,
        "feasibility identity",
        connected && worst <= 1e-8,
        start.elapsed(),
        Some(Duration::from_secs(10)),
        format!("{graphs} connected graphs, max |Phi beta - 1| = {worst:.2e} (tol 1e-8)"),
    );
}

struct SegInstance {
    lap: scenerep_core::geometry::LaplacianOperator,
    basis: scenerep_core::geometry::SpectralBasis,
    f: DMatrix<f64>,
    row_class: Vec<u32>,
    d: DMatrix<f64>,
    v: Vec<f64>,
    eta: DMatrix<f64>,
    w0: DMatrix<f64>,
}

fn seg_instance(rng: &mut ChaCha8Rng, coeffs: &EnergyCoefficients) -> SegInstance {
    let n_p = rng.random_range(8..=50);
    let n_e = rng.random_range(1..=4);
    let pts = random_cloud(rng, n_p);
    let g = build_knn_graph(&pts, 6.min(n_p - 1), 0.5).unwrap();
    let lap = laplacian(&g).unwrap();
    let basis = spectral_basis(&lap, &g, n_p).unwrap();
    let n_c = 3;
    let f = DMatrix::from_fn(n_c, n_p, |_, _| rng.random::<f64>() + 0.05);
    let f = DMatrix::from_fn(n_c, n_p, |c, p| f[(c, p)] / f.column(p).sum());
    let row_class: Vec<u32> = std::iter::once(0)
        .chain((0..n_e).map(|_| rng.random_range(1..n_c as u32)))
        .collect();
    let d = DMatrix::from_fn(n_e + 1, n_p, |e, _| {
        if e == 0 {
            coeffs.d_clutter
        } else {
            rng.random::<f64>() * coeffs.d_cap()
        }
    });
    let v: Vec<f64> = (0..n_e)
        .map(|_| if rng.random::<f64>() < 0.8 { 1.0 } else { rng.random() })
        .collect();
    let w0 = init_weights(&f, &row_class[1..]);
    let eta = irls_weights(&w0, coeffs.ell, coeffs.irls_epsilon);
    SegInstance {
        lap,
        basis,
        f,
        row_class,
        d,
        v,
        eta,
        w0,
    }
}

fn criterion2(report: &mut Report, mono: &mut Monotonicity) {
    let start = Instant::now();
    let coeffs = EnergyCoefficients::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut accepted, mut drawn) = (0, 0);
    let mut worst: f64 = 0.0;
    while accepted < 50 && drawn < 5000 {
        drawn += 1;
        let inst = seg_instance(&mut rng, &coeffs);
        let inputs = SegmentationInputs {
            f: &inst.f,
            row_class: &inst.row_class,
            d: &inst.d,
            v: &inst.v,
            lap: &inst.lap,
        };
        let reference = segmentation_step_reference(&inputs, &coeffs, &inst.eta).unwrap();
        // only instances whose nonnegativity constraints are inactive
        if reference.w.min() <= 1e-6 {
            continue;
        }
        accepted += 1;
        let sub = Subspace::new(&inst.basis, &inst.lap);
        let (alpha, _) = solve_surrogate(&sub, &inputs, &coeffs, &inst.eta).unwrap();
        let w = sub.expand(&alpha);
        let energy =
            |w: &DMatrix<f64>| segmentation_energy(w, &inst.v, &coeffs, &inst.f, &inst.row_class, &inst.lap, &inst.d, Some(&inst.eta));
        let (ea, er) = (energy(&w), energy(&reference.w));
        worst = worst.max((ea - er).abs() / er.abs().max(1e-300));
        mono.simplex(&w);

        let outcome = segmentation_step(&sub, &inputs, &coeffs, &sub.project(&inst.w0), 5).unwrap();
        for r in &outcome.rounds {
            mono.irls(r.surrogate_before, r.surrogate_after);
            mono.irls(r.true_before, r.true_after);
        }
        mono.simplex(&outcome.w);
    }
    report.line(
        2,
        "oracle equivalence",
        accepted == 50 && worst <= 1e-6,
        start.elapsed(),
        Some(Duration::from_secs(60)),
        format!("{accepted} instances ({drawn} drawn), max relative energy gap {worst:.2e} (tol 1e-6)"),
    );
}

fn criterion3(report: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (l5, l6) = (1.0, 1e9);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..50 {
        let n = rng.random_range(1..=10);
        let density = rng.random_range(0.1..0.6);
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < density {
                    let x = rng.random_range(1.0..50.0f64).round();
                    q[(i, j)] = x;
                    q[(j, i)] = x;
                }
            }
        }
        let mass: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..300.0)).collect();
        let v0: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let out = voting_step(&q, &mass, &v0, l5, l6, &VotingOptions::default());
        let mut best = f64::INFINITY;
        for bits in 0u32..(1 << n) {
            let v: Vec<f64> = (0..n).map(|i| ((bits >> i) & 1) as f64).collect();
            best = best.min(voting_objective(&v, &q, &mass, l5, l6));
        }
        worst = worst.max(out.objective - best);
    }
    report.line(
        3,
        "voting correctness",
        worst <= 1e-6,
        start.elapsed(),
        Some(Duration::from_secs(30)),
        format!("50 instances, max (voting - exhaustive corner minimum) = {worst:.2e} (tol 1e-6)"),
    );
}

fn criterion4(report: &mut Report, mono: &mut Monotonicity, config: &PipelineConfig) {
    let start = Instant::now();
    let set = scenerep_core::experiment::database_exemplars(config).unwrap();
    let vs = config.voxel_size;
    let init = InitOptions::default();
    let reg = scenerep_core::optim::IcpOptions {
        trim_sq: config.energy.d_cap() * vs * vs,
        ..config.registration
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut good = 0;
    let mut worst_rmse: f64 = 0.0;
    let mut worst_yaw: f64 = 0.0;
    for trial in 0..100 {
        let ex = set.get(1 + trial % set.n_exemplars());
        let truth = RigidTransform::from_yaw(
            rng.random_range(0.0..std::f64::consts::TAU),
            Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0),
        );
        let scene = truth.apply_all(&ex.mesh.sample_surface(ex.points.len(), &mut rng));
        let bw = class_bandwidth(&set, ex.class, init.bandwidth_scale).unwrap();
        let modes = weighted_mean_shift(&scene, &vec![1.0; scene.len()], bw, &init.mean_shift);
        let Some(mode) = modes.iter().max_by(|a, b| a.weight.total_cmp(&b.weight)) else {
            continue;
        };
        let index = SceneIndex::new(&scene);
        let Some(fit) = init_pose(ex, mode.position, &index, vs, bw, &init) else {
            worst_rmse = f64::INFINITY;
            continue;
        };
        let r = weighted_icp(&scene, &vec![1.0; scene.len()], &ex.points, &fit.transform, &reg);
        mono.icp(&r.history);
        let est = r.transform;
        let rmse = (ex
            .points
            .iter()
            .map(|p| (est.apply(p) - truth.apply(p)).norm_squared())
            .sum::<f64>()
            / ex.points.len() as f64)
            .sqrt();
        let yaw = wrap_angle(est.yaw() - truth.yaw()).abs().to_degrees();
        worst_rmse = worst_rmse.max(rmse);
        worst_yaw = worst_yaw.max(yaw);
        if rmse <= 0.5 * vs && yaw <= 5.0 {
            good += 1;
        }
    }
    report.line(
        4,
        "pose recovery",
        good >= 95,
        start.elapsed(),
        Some(Duration::from_secs(300)),
        format!(
            "{good}/100 within 0.5 voxel RMSE and 5 deg (need 95); worst RMSE {:.3} voxel, worst yaw {worst_yaw:.2} deg",
            worst_rmse / vs
        ),
    );
}

fn criterion5(report: &mut Report, mono: &Monotonicity, elapsed: Duration) {
    let ok = mono.irls_violations == 0 && mono.icp_violations == 0 && mono.simplex_worst <= SIMPLEX_TOL;
    report.line(
        5,
        "monotonicity suites",
        ok,
        elapsed,
        None,
        format!(
            "IRLS {}/{} rounds non-increasing, ICP {}/{} steps non-increasing, max simplex error {:.2e} over {} columns",
            mono.irls_rounds - mono.irls_violations,
            mono.irls_rounds,
            mono.icp_steps - mono.icp_violations,
            mono.icp_steps,
            mono.simplex_worst,
            mono.simplex_columns
        ),
    );
}

fn record_traces(mono: &mut Monotonicity, run: &BenchmarkRun) {
    for r in &run.runs {
        for step in &r.output.trace.steps {
            for h in &step.icp {
                mono.icp(h);
            }
            for round in &step.irls {
                mono.irls(round.surrogate_before, round.surrogate_after);
                mono.irls(round.true_before, round.true_after);
            }
        }
        if let Some(w) = &r.output.weights {
            mono.simplex(w);
        }
    }
}

fn main() {
    let mut report = Report { failures: 0 };
    let mut mono = Monotonicity::default();
    let config = PipelineConfig::default();

    let t5 = Instant::now();
    criterion1(&mut report);
    criterion2(&mut report, &mut mono);
    criterion3(&mut report);
    criterion4(&mut report, &mut mono, &config);

    let start = Instant::now();
    let exp = prepare(&config).expect("experiment setup");
    let setup = start.elapsed();
    let full = run_benchmark(&exp, &config).expect("benchmark run");
    record_traces(&mut mono, &full);
    criterion5(&mut report, &mono, t5.elapsed());

    let slowest = full.runs.iter().map(|r| r.seconds).fold(0.0, f64::max);
    let max_points = exp.scenes.iter().map(|s| s.cloud.len()).max().unwrap_or(0);
    let (sem, geo) = (full.report.semantic, full.report.geometric);
    report.line(
        6,
        "desk-scale benchmark",
        geo.f1 >= 0.90 && sem.f1 >= 0.80 && slowest <= 120.0 && max_points <= 20_000,
        start.elapsed(),
        None,
        format!(
            "{} scenes, geometric F1 {:.3} (need 0.90), semantic F1 {:.3} (need 0.80), slowest scene {slowest:.1}s of 120s at {max_points} points max, setup {:.1}s",
            exp.scenes.len(),
            geo.f1,
            sem.f1,
            setup.as_secs_f64()
        ),
    );

    let start = Instant::now();
    let single = run_benchmark(&exp, &config.clone().with_outer_iterations(1)).expect("ablation run");
    let (r5, r1) = (full.report.mean_class_recall(), single.report.mean_class_recall());
    report.line(
        7,
        "outer-iteration ablation",
        r5 >= r1,
        start.elapsed(),
        None,
        format!(
            "mean class recall N_out=5 {r5:.3} vs N_out=1 {r1:.3}, gap {:+.3} (need >= 0)",
            r5 - r1
        ),
    );

    let start = Instant::now();
    let mut again_config = config.clone();
    again_config.benchmark.n_scenes = 2;
    let again_exp = prepare(&again_config).expect("second setup");
    let again = run_benchmark(&again_exp, &again_config).expect("second run");
    let identical = again.runs.iter().zip(&full.runs).all(|(a, b)| {
        placements_to_json(&a.output.placements).unwrap().as_bytes() == placements_to_json(&b.output.placements).unwrap().as_bytes()
    });
    report.line(
        8,
        "determinism",
        identical && again.runs.len() == 2,
        start.elapsed(),
        None,
        "placements JSON of an independent rerun (fresh forest, exemplars and scenes) compared byte-for-byte on 2 scenes".to_string(),
    );

    println!("{} of 8 criteria failed", report.failures);
    if report.failures > 0 {
        std::process::exit(1);
    }
}
