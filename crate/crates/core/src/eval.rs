//! Oriented-box overlap and detection metrics.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exemplar::ExemplarModel;
use crate::geometry::{RigidTransform, Vec3};
use crate::pipeline::Placement;
use crate::rng::mix_seed;

pub const IOU_SAMPLES: usize = 200_000;
pub const IOU_THRESHOLD: f64 = 0.25;

/// Box rotated about +z by `yaw` around its center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    pub yaw: f64,
}

impl OrientedBox {
    /// Axis-aligned box `[lo, hi]` carried by an upright transform.
    pub fn from_canonical(lo: &Vec3, hi: &Vec3, t: &RigidTransform) -> Self {
        let c = t.apply(&((lo + hi) * 0.5));
        let h = (hi - lo) * 0.5;
        OrientedBox {
            center: [c.x, c.y, c.z],
            half_extents: [h.x, h.y, h.z],
            yaw: t.yaw(),
        }
    }

    pub fn of_placement(p: &Placement, exemplar: &ExemplarModel) -> Self {
        Self::from_canonical(&exemplar.bbox_min, &exemplar.bbox_max, &p.rigid())
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.iter().product::<f64>()
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        let lz = p[2] - self.center[2];
        lx.abs() <= self.half_extents[0] && ly.abs() <= self.half_extents[1] && lz.abs() <= self.half_extents[2]
    }

    /// Footprint corners in counter-clockwise order.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let [hx, hy, _] = self.half_extents;
        let corner = |a: f64, b: f64| [self.center[0] + c * a - s * b, self.center[1] + s * a + c * b];
        [corner(-hx, -hy), corner(hx, -hy), corner(hx, hy), corner(-hx, hy)]
    }

    pub fn aabb(&self) -> ([f64; 3], [f64; 3]) {
        let (s, c) = self.yaw.sin_cos();
        let ex = c.abs() * self.half_extents[0] + s.abs() * self.half_extents[1];
        let ey = s.abs() * self.half_extents[0] + c.abs() * self.half_extents[1];
        let e = [ex, ey, self.half_extents[2]];
        (
            [self.center[0] - e[0], self.center[1] - e[1], self.center[2] - e[2]],
            [self.center[0] + e[0], self.center[1] + e[1], self.center[2] + e[2]],
        )
    }

    pub fn is_valid(&self) -> bool {
        self.half_extents.iter().all(|h| *h > 0.0 && h.is_finite()) && self.center.iter().all(|c| c.is_finite()) && self.yaw.is_finite()
    }
}

/// Separating-axis test on the two footprints, each grown by `margin`.
pub fn footprints_overlap(a: &OrientedBox, b: &OrientedBox, margin: f64) -> bool {
    let grow = |o: &OrientedBox| OrientedBox {
        half_extents: [o.half_extents[0] + margin, o.half_extents[1] + margin, o.half_extents[2]],
        ..*o
    };
    let (pa, pb) = (grow(a).footprint(), grow(b).footprint());
    for poly in [&pa, &pb] {
        for i in 0..4 {
            let (p, q) = (poly[i], poly[(i + 1) % 4]);
            let axis = [q[1] - p[1], p[0] - q[0]];
            let proj = |pts: &[[f64; 2]; 4]| {
                pts.iter()
                    .map(|x| x[0] * axis[0] + x[1] * axis[1])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
            };
            let (alo, ahi) = proj(&pa);
            let (blo, bhi) = proj(&pb);
            if ahi < blo || bhi < alo {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouEstimate {
    pub iou: f64,
    pub std_error: f64,
}

/// Monte Carlo IoU from `n` uniform samples of the union's bounding box.
/// Boxes whose bounding boxes are disjoint give exactly zero.
pub fn oriented_iou(a: &OrientedBox, b: &OrientedBox, n: usize, seed: u64) -> IouEstimate {
    let (alo, ahi) = a.aabb();
    let (blo, bhi) = b.aabb();
    if (0..3).any(|k| ahi[k] < blo[k] || bhi[k] < alo[k]) {
        return IouEstimate { iou: 0.0, std_error: 0.0 };
    }
    let lo = [alo[0].min(blo[0]), alo[1].min(blo[1]), alo[2].min(blo[2])];
    let hi = [ahi[0].max(bhi[0]), ahi[1].max(bhi[1]), ahi[2].max(bhi[2])];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut both, mut union) = (0usize, 0usize);
    for _ in 0..n {
        let p = [
            rng.random_range(lo[0]..=hi[0]),
            rng.random_range(lo[1]..=hi[1]),
            rng.random_range(lo[2]..=hi[2]),
        ];
        let (ia, ib) = (a.contains(p), b.contains(p));
        if ia || ib {
            union += 1;
        }
        if ia && ib {
            both += 1;
        }
    }
    if union == 0 {
        return IouEstimate { iou: 0.0, std_error: 0.0 };
    }
    let iou = both as f64 / union as f64;
    IouEstimate {
        iou,
        std_error: (iou * (1.0 - iou) / union as f64).sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedObject {
    pub class: u32,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    pub model_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneAnnotation {
    pub objects: Vec<AnnotatedObject>,
}

/// Predicted object for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: u32,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub detection: usize,
    pub object: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneMatches {
    pub semantic: Vec<Match>,
    pub geometric: Vec<Match>,
    pub detection_classes: Vec<u32>,
    pub object_classes: Vec<u32>,
}

/// Pairwise IoU, detections by rows.
pub fn iou_table(detections: &[Detection], objects: &[AnnotatedObject], n_samples: usize, seed: u64) -> Vec<Vec<f64>> {
    detections
        .iter()
        .enumerate()
        .map(|(i, d)| {
            objects
                .iter()
                .enumerate()
                .map(|(j, o)| oriented_iou(&d.bbox, &o.bbox, n_samples, mix_seed(seed, (i * 1_000_003 + j) as u64)).iou)
                .collect()
        })
        .collect()
}

/// One-to-one greedy matching by descending IoU over pairs above `threshold`
/// that satisfy `allowed`; ties go to the lower (detection, object) index.
pub fn greedy_match(iou: &[Vec<f64>], threshold: f64, allowed: impl Fn(usize, usize) -> bool) -> Vec<Match> {
    let mut pairs: Vec<Match> = Vec::new();
    for (i, row) in iou.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > threshold && allowed(i, j) {
                pairs.push(Match {
                    detection: i,
                    object: j,
                    iou: v,
                });
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(a.detection.cmp(&b.detection))
            .then(a.object.cmp(&b.object))
    });
    let n_det = iou.len();
    let n_obj = iou.first().map_or(0, Vec::len);
    let (mut used_d, mut used_o) = (vec![false; n_det], vec![false; n_obj]);
    let mut out = Vec::new();
    for m in pairs {
        if !used_d[m.detection] && !used_o[m.object] {
            used_d[m.detection] = true;
            used_o[m.object] = true;
            out.push(m);
        }
    }
    out
}

pub fn match_scene(detections: &[Detection], annotation: &SceneAnnotation, threshold: f64, n_samples: usize, seed: u64) -> SceneMatches {
    let objects = &annotation.objects;
    let iou = iou_table(detections, objects, n_samples, seed);
    SceneMatches {
        semantic: greedy_match(&iou, threshold, |i, j| detections[i].class == objects[j].class),
        geometric: greedy_match(&iou, threshold, |_, _| true),
        detection_classes: detections.iter().map(|d| d.class).collect(),
        object_classes: objects.iter().map(|o| o.class).collect(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub detections: usize,
    pub objects: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Metrics {
    pub fn from_counts(true_positives: usize, detections: usize, objects: usize) -> Self {
        let precision = ratio(true_positives, detections);
        let recall = ratio(true_positives, objects);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            precision,
            recall,
            f1,
            true_positives,
            detections,
            objects,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Class-aware matching, per class.
    pub per_class: BTreeMap<u32, Metrics>,
    pub semantic: Metrics,
    pub geometric: Metrics,
    pub scenes: Vec<SceneMatches>,
}

impl EvaluationReport {
    /// Unweighted mean of the per-class recalls.
    pub fn mean_class_recall(&self) -> f64 {
        if self.per_class.is_empty() {
            return 0.0;
        }
        self.per_class.values().map(|m| m.recall).sum::<f64>() / self.per_class.len() as f64
    }

    /// `class,precision,recall,f1` rows plus `semantic` and `geometric` totals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,precision,recall,f1\n");
        for (c, m) in &self.per_class {
            s.push_str(&format!("{c},{:.6},{:.6},{:.6}\n", m.precision, m.recall, m.f1));
        }
        for (name, m) in [("semantic", &self.semantic), ("geometric", &self.geometric)] {
            s.push_str(&format!("{name},{:.6},{:.6},{:.6}\n", m.precision, m.recall, m.f1));
        }
        s
    }
}

/// Aggregates matches over scenes.
pub fn summarize(scenes: Vec<SceneMatches>) -> EvaluationReport {
    let mut counts: BTreeMap<u32, [usize; 3]> = BTreeMap::new();
    let (mut sem, mut geo, mut det, mut obj) = (0, 0, 0, 0);
    for s in &scenes {
        for &c in &s.detection_classes {
            counts.entry(c).or_default()[1] += 1;
        }
        for &c in &s.object_classes {
            counts.entry(c).or_default()[2] += 1;
        }
        for m in &s.semantic {
            counts.entry(s.object_classes[m.object]).or_default()[0] += 1;
        }
        sem += s.semantic.len();
        geo += s.geometric.len();
        det += s.detection_classes.len();
        obj += s.object_classes.len();
    }
    EvaluationReport {
        per_class: counts
            .into_iter()
            .map(|(c, [tp, d, o])| (c, Metrics::from_counts(tp, d, o)))
            .collect(),
        semantic: Metrics::from_counts(sem, det, obj),
        geometric: Metrics::from_counts(geo, det, obj),
        scenes,
    }
}

/// Matches every scene's detections to its annotation and aggregates.
pub fn evaluate(scenes: &[(Vec<Detection>, SceneAnnotation)], threshold: f64, seed: u64) -> EvaluationReport {
    summarize(
        scenes
            .iter()
            .enumerate()
            .map(|(k, (d, a))| match_scene(d, a, threshold, IOU_SAMPLES, mix_seed(seed, k as u64)))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(x: f64, y: f64, yaw: f64) -> OrientedBox {
        OrientedBox {
            center: [x, y, 0.5],
            half_extents: [0.5; 3],
            yaw,
        }
    }

    #[test]
    fn iou_reference_values() {
        let a = unit(0.0, 0.0, 0.3);
        let same = oriented_iou(&a, &a, IOU_SAMPLES, 1);
        assert!((same.iou - 1.0).abs() <= 0.005);
        let far = oriented_iou(&a, &unit(5.0, 0.0, 1.0), IOU_SAMPLES, 1);
        assert_eq!(far.iou, 0.0);
        let half = oriented_iou(&unit(0.0, 0.0, 0.0), &unit(0.5, 0.0, 0.0), IOU_SAMPLES, 2);
        assert!((half.iou - 1.0 / 3.0).abs() <= 0.01, "{half:?}");
        assert!(half.std_error < 0.002);
    }

    #[test]
    fn rotated_square_overlap() {
        // a unit square and its 45° copy share the inscribed octagon: 2(√2 − 1)
        let inter: f64 = 2.0 * (2f64.sqrt() - 1.0);
        let expect = inter / (2.0 - inter);
        let est = oriented_iou(&unit(0.0, 0.0, 0.0), &unit(0.0, 0.0, std::f64::consts::FRAC_PI_4), IOU_SAMPLES, 3);
        assert!((est.iou - expect).abs() < 0.01, "{} vs {expect}", est.iou);
    }

    #[test]
    fn footprint_separation() {
        assert!(footprints_overlap(&unit(0.0, 0.0, 0.0), &unit(0.9, 0.0, 0.0), 0.0));
        assert!(!footprints_overlap(&unit(0.0, 0.0, 0.0), &unit(1.1, 0.0, 0.0), 0.0));
        assert!(footprints_overlap(&unit(0.0, 0.0, 0.0), &unit(1.1, 0.0, 0.0), 0.06));
        let diamond = std::f64::consts::FRAC_PI_4;
        assert!(!footprints_overlap(&unit(0.0, 0.0, 0.0), &unit(1.25, 0.0, diamond), 0.0));
        assert!(footprints_overlap(&unit(0.0, 0.0, 0.0), &unit(1.15, 0.0, diamond), 0.0));
    }

    #[test]
    fn perfect_detections_score_one() {
        let objects: Vec<AnnotatedObject> = (0..4)
            .map(|i| AnnotatedObject {
                class: 1 + (i % 2),
                bbox: unit(2.0 * i as f64, 0.0, 0.1 * i as f64),
                model_id: format!("m{i}"),
            })
            .collect();
        let dets: Vec<Detection> = objects
            .iter()
            .map(|o| Detection {
                class: o.class,
                bbox: o.bbox,
            })
            .collect();
        let r = evaluate(&[(dets, SceneAnnotation { objects })], IOU_THRESHOLD, 0);
        assert_eq!(r.geometric.f1, 1.0);
        assert_eq!(r.semantic.f1, 1.0);
        assert!(r.per_class.values().all(|m| m.f1 == 1.0));
    }

    #[test]
    fn wrong_class_counts_only_geometrically() {
        let objects = vec![AnnotatedObject {
            class: 1,
            bbox: unit(0.0, 0.0, 0.0),
            model_id: "a".into(),
        }];
        let dets = vec![Detection {
            class: 2,
            bbox: unit(0.1, 0.0, 0.0),
        }];
        let r = evaluate(&[(dets, SceneAnnotation { objects })], IOU_THRESHOLD, 0);
        assert_eq!(r.geometric.f1, 1.0);
        assert_eq!(r.semantic.f1, 0.0);
        assert_eq!(r.per_class[&1].recall, 0.0);
        assert_eq!(r.per_class[&2].precision, 0.0);
        assert!(r.to_csv().starts_with("class,precision,recall,f1\n1,"));
    }
}
