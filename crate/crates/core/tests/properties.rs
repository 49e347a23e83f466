use nalgebra::{DMatrix, Vector3};
use proptest::prelude::*;

use scenerep_core::eval::{
    evaluate, footprints_overlap, greedy_match, iou_table, oriented_iou, AnnotatedObject, Detection, OrientedBox, SceneAnnotation,
    IOU_SAMPLES,
};
use scenerep_core::geometry::io::{encode_ply, parse_ply};
use scenerep_core::geometry::{build_knn_graph, laplacian, spectral_basis, PlyFormat};
use scenerep_core::init::init_weights;
use scenerep_core::init::meanshift::{merge_modes, Mode};
use scenerep_core::optim::energy::{irls_weights, smoothed_penalty};
use scenerep_core::optim::segmentation::Subspace;
use scenerep_core::optim::voting::{voting_objective, voting_step, VotingOptions};
use scenerep_core::rng::mix_seed;
use scenerep_core::{PointCloud, RigidTransform, Vec3};

fn rigid() -> impl Strategy<Value = RigidTransform> {
    (-4.0..4.0f64, -5.0..5.0f64, -5.0..5.0f64, -1.0..1.0f64).prop_map(|(yaw, x, y, z)| RigidTransform::from_yaw(yaw, Vector3::new(x, y, z)))
}

fn oriented_box() -> impl Strategy<Value = OrientedBox> {
    (
        (-2.0..2.0f64, -2.0..2.0f64, 0.0..1.0f64),
        (0.05..1.0f64, 0.05..1.0f64, 0.05..1.0f64),
        -4.0..4.0f64,
    )
        .prop_map(|((x, y, z), (a, b, c), yaw)| OrientedBox {
            center: [x, y, z],
            half_extents: [a, b, c],
            yaw,
        })
}

/// Brute force over every one-to-one assignment: the matching whose pairs,
/// sorted best first by (IoU desc, detection asc, object asc), form the
/// lexicographically greatest sequence. Returns its size.
fn best_sequence_matching(iou: &[Vec<f64>], thr: f64, allowed: &dyn Fn(usize, usize) -> bool) -> usize {
    fn key_cmp(a: &(f64, usize, usize), b: &(f64, usize, usize)) -> std::cmp::Ordering {
        b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    }
    fn rec(
        i: usize,
        iou: &[Vec<f64>],
        thr: f64,
        allowed: &dyn Fn(usize, usize) -> bool,
        used: &mut Vec<bool>,
        cur: &mut Vec<(f64, usize, usize)>,
        best: &mut Vec<(f64, usize, usize)>,
    ) {
        if i == iou.len() {
            let mut seq = cur.clone();
            seq.sort_by(key_cmp);
            // earlier keys are better; a strict prefix is worse
            let better = seq
                .iter()
                .zip(best.iter())
                .map(|(a, b)| key_cmp(a, b))
                .find(|o| o.is_ne())
                .map_or(seq.len() > best.len(), |o| o.is_lt());
            if better {
                *best = seq;
            }
            return;
        }
        rec(i + 1, iou, thr, allowed, used, cur, best);
        for j in 0..used.len() {
            if !used[j] && iou[i][j] > thr && allowed(i, j) {
                used[j] = true;
                cur.push((iou[i][j], i, j));
                rec(i + 1, iou, thr, allowed, used, cur, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let n_obj = iou.first().map_or(0, Vec::len);
    let mut best = Vec::new();
    rec(0, iou, thr, allowed, &mut vec![false; n_obj], &mut Vec::new(), &mut best);
    best.len()
}

fn grid_box() -> impl Strategy<Value = (u32, OrientedBox)> {
    (1u32..4, 0..3i32, 0..3i32, prop::sample::select(vec![0.0, 0.4, 1.2])).prop_map(|(class, x, y, yaw)| {
        (
            class,
            OrientedBox {
                center: [0.35 * x as f64, 0.35 * y as f64, 0.5],
                half_extents: [0.5, 0.4, 0.5],
                yaw,
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scores_agree_with_brute_force_matching(
        dets in prop::collection::vec(grid_box(), 0..5),
        objs in prop::collection::vec(grid_box(), 0..7),
        thr in prop::sample::select(vec![0.25, 0.5]),
        seed in 0u64..1000,
    ) {
        let detections: Vec<Detection> = dets.iter().map(|&(class, bbox)| Detection { class, bbox }).collect();
        let objects: Vec<AnnotatedObject> =
            objs.iter().map(|&(class, bbox)| AnnotatedObject { class, bbox, model_id: String::new() }).collect();
        let annotation = SceneAnnotation { objects: objects.clone() };
        let report = evaluate(&[(detections.clone(), annotation)], thr, seed);
        let iou = iou_table(&detections, &objects, IOU_SAMPLES, mix_seed(seed, 0));
        let geo = best_sequence_matching(&iou, thr, &|_, _| true);
        let sem = best_sequence_matching(&iou, thr, &|i, j| detections[i].class == objects[j].class);
        prop_assert_eq!(report.geometric.true_positives, geo);
        prop_assert_eq!(report.semantic.true_positives, sem);
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        prop_assert_eq!(report.geometric.precision, ratio(geo, detections.len()));
        prop_assert_eq!(report.geometric.recall, ratio(geo, objects.len()));
        prop_assert_eq!(report.semantic.precision, ratio(sem, detections.len()));
        prop_assert_eq!(report.semantic.recall, ratio(sem, objects.len()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transform_inverse_round_trips(t in rigid(), u in rigid(), p in prop::array::uniform3(-3.0..3.0f64)) {
        let p = Vec3::new(p[0], p[1], p[2]);
        let back = t.inverse().apply(&t.apply(&p));
        prop_assert!((back - p).norm() < 1e-12);
        let tu = t.compose(&u);
        prop_assert!((tu.apply(&p) - t.apply(&u.apply(&p))).norm() < 1e-12);
        prop_assert_eq!(RigidTransform::from_row_major(&t.to_row_major()), t);
    }

    #[test]
    fn merged_modes_are_separated(
        raw in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, 0.01..5.0f64), 1..25),
        radius in 0.1..1.5f64,
    ) {
        let modes: Vec<Mode> = raw.iter().map(|&(x, y, w)| Mode { position: [x, y], weight: w }).collect();
        let merged = merge_modes(&modes, radius);
        let total: f64 = modes.iter().map(|m| m.weight).sum();
        let kept: f64 = merged.iter().map(|m| m.weight).sum();
        prop_assert!((total - kept).abs() <= 1e-9 * total);
        for i in 0..merged.len() {
            for j in (i + 1)..merged.len() {
                let (a, b) = (merged[i].position, merged[j].position);
                prop_assert!(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() >= radius);
            }
        }
    }

    #[test]
    fn initial_weights_lie_on_the_simplex(
        cols in prop::collection::vec(prop::array::uniform4(0.0..1.0f64), 1..20),
        classes in prop::collection::vec(1u32..4, 0..6),
    ) {
        let f = DMatrix::from_fn(4, cols.len(), |c, p| cols[p][c] / cols[p].iter().sum::<f64>().max(1e-12));
        let w = init_weights(&f, &classes);
        prop_assert_eq!(w.nrows(), classes.len() + 1);
        for p in 0..w.ncols() {
            let s: f64 = w.column(p).sum();
            let fs: f64 = f.column(p).sum();
            prop_assert!((s - fs).abs() < 1e-12);
            prop_assert!(w.column(p).iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn projected_weights_sum_to_one(seed in 0u64..1000, n_e in 1usize..4) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec3> = (0..80).map(|_| Vec3::new(rng.random(), rng.random(), 0.1 * rng.random::<f64>())).collect();
        let g = build_knn_graph(&pts, 8, 0.3).unwrap();
        let l = laplacian(&g).unwrap();
        let basis = spectral_basis(&l, &g, 10).unwrap();
        let sub = Subspace::new(&basis, &l);
        let w = DMatrix::from_fn(n_e + 1, pts.len(), |_, _| rng.random::<f64>());
        let w = sub.expand(&sub.project(&w));
        for p in 0..w.ncols() {
            prop_assert!((w.column(p).sum() - 1.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn penalty_is_majorized_by_its_reweighted_quadratic(t0 in 0.0..2.0f64, t in 0.0..2.0f64, ell in 0.05..0.95f64) {
        let eps = 1e-4;
        let eta = irls_weights(&DMatrix::from_element(1, 1, t0), ell, eps)[(0, 0)];
        let g = |x: f64| smoothed_penalty(x, ell, eps);
        let bound = g(t0) + eta * (t * t - t0 * t0);
        prop_assert!(g(t) <= bound + 1e-12 * (1.0 + bound.abs()));
    }

    #[test]
    fn voting_returns_a_one_flip_optimal_vertex(
        n in 1usize..9,
        entries in prop::collection::vec(0.0..1.0f64, 81),
        mass in prop::collection::vec(-1.0..5.0f64, 9),
        lambda6 in prop::sample::select(vec![0.0, 1.0, 10.0, 1e3, 1e9]),
    ) {
        let q = DMatrix::from_fn(n, n, |i, j| {
            let x = entries[i.min(j) * 9 + i.max(j)];
            if i == j || x < 0.5 { 0.0 } else { x }
        });
        let mass = &mass[..n];
        let out = voting_step(&q, mass, &vec![1.0; n], 1.0, lambda6, &VotingOptions::default());
        prop_assert!(out.v.iter().all(|&x| x == 0.0 || x == 1.0));
        prop_assert!(out.objective <= out.pg_objective + 1e-9 * (1.0 + out.pg_objective.abs()));
        for i in 0..n {
            let mut flip = out.v.clone();
            flip[i] = 1.0 - flip[i];
            prop_assert!(voting_objective(&flip, &q, mass, 1.0, lambda6) >= out.objective - 1e-9 * (1.0 + out.objective.abs()));
        }
    }

    #[test]
    fn greedy_matches_are_unique_and_maximal(
        rows in 0usize..6,
        cols in 0usize..6,
        vals in prop::collection::vec(0.0..1.0f64, 36),
        thr in 0.0..0.8f64,
    ) {
        let iou: Vec<Vec<f64>> = (0..rows).map(|i| (0..cols).map(|j| vals[i * 6 + j]).collect()).collect();
        let m = greedy_match(&iou, thr, |_, _| true);
        let mut used_d = vec![false; rows];
        let mut used_o = vec![false; cols];
        for x in &m {
            prop_assert!(!used_d[x.detection] && !used_o[x.object]);
            used_d[x.detection] = true;
            used_o[x.object] = true;
            prop_assert!(x.iou > thr);
            prop_assert_eq!(x.iou, iou[x.detection][x.object]);
        }
        for i in 0..rows {
            for j in 0..cols {
                prop_assert!(used_d[i] || used_o[j] || iou[i][j] <= thr);
            }
        }
        if let Some(first) = m.first() {
            let best = iou.iter().flatten().copied().fold(0.0, f64::max);
            prop_assert_eq!(first.iou, best);
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in oriented_box(), b in oriented_box()) {
        let ab = oriented_iou(&a, &b, 4000, 1).iou;
        let ba = oriented_iou(&b, &a, 4000, 1).iou;
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 0.1);
        prop_assert_eq!(oriented_iou(&a, &a, 4000, 2).iou, 1.0);
        prop_assert_eq!(footprints_overlap(&a, &b, 0.0), footprints_overlap(&b, &a, 0.0));
        if !footprints_overlap(&a, &b, 0.0) {
            prop_assert_eq!(ab, 0.0);
        }
    }

    #[test]
    fn ply_round_trips(
        pts in prop::collection::vec(prop::array::uniform3(-100.0..100.0f64), 1..40),
        labelled in any::<bool>(),
        binary in any::<bool>(),
    ) {
        let points: Vec<Vec3> = pts.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect();
        let labels = labelled.then(|| (0..points.len() as u32).map(|i| i % 4).collect());
        let cloud = PointCloud::with_labels(points, labels).unwrap();
        let format = if binary { PlyFormat::BinaryLittleEndian } else { PlyFormat::Ascii };
        let back = parse_ply(&encode_ply(&cloud, format)).unwrap();
        prop_assert_eq!(back, cloud);
    }
}
