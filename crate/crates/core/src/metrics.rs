//! Occupancy evaluation: per-class IoU, mIoU, geometric IoU, RayIoU and the
//! visibility-masked cross-entropy.
//!
//! Ratios whose denominator is zero are reported as `None` ("excluded"):
//! a class with no support in either grid, or a metric with nothing to
//! compare.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scene::{CameraModel, ClassId, ClassTable, RigidTransform};
use crate::traversal::RayWalk;
use crate::voxelize::{VisibilityGrid, VoxelGrid};

pub const DEFAULT_RAY_THRESHOLDS: [f64; 3] = [1.0, 2.0, 4.0];

const CELL_CHUNK: usize = 1 << 14;

/// Sum with a fixed binary split, so the result does not depend on how the
/// work is scheduled.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 1024;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    let (x, y) = rayon::join(|| pairwise_sum(a), || pairwise_sum(b));
    x + y
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.into_iter().collect();
    (!v.is_empty()).then(|| pairwise_sum(&v) / v.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IouReport {
    pub per_class_iou: BTreeMap<ClassId, f64>,
    pub miou: Option<f64>,
    pub geometric_iou: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
struct IouCounts {
    inter: u64,
    union: u64,
}

fn check_spec(pred: &VoxelGrid, gt: &VoxelGrid) -> Result<()> {
    if pred.spec != gt.spec {
        return Err(Error::SpecMismatch(format!(
            "pred {:?} vs gt {:?}",
            pred.spec, gt.spec
        )));
    }
    Ok(())
}

/// IoU over cells the mask marks as observed.
pub fn grid_iou(
    pred: &VoxelGrid,
    gt: &VoxelGrid,
    mask: &VisibilityGrid,
    classes: &ClassTable,
) -> Result<IouReport> {
    check_spec(pred, gt)?;
    if mask.spec != gt.spec {
        return Err(Error::SpecMismatch("visibility mask differs from grid".into()));
    }
    let n = classes.len();
    let empty = classes.empty();
    let (per_class, geo) = pred
        .labels
        .par_chunks(CELL_CHUNK)
        .zip(gt.labels.par_chunks(CELL_CHUNK))
        .zip(mask.state.par_chunks(CELL_CHUNK))
        .map(|((p, g), m)| {
            let mut per = vec![IouCounts::default(); n];
            let mut geo = IouCounts::default();
            for ((&p, &g), m) in p.iter().zip(g).zip(m) {
                if !m.observed() {
                    continue;
                }
                if classes.is_semantic(p) || classes.is_semantic(g) {
                    if p == g {
                        per[p as usize].inter += 1;
                        per[p as usize].union += 1;
                    } else {
                        if classes.is_semantic(p) {
                            per[p as usize].union += 1;
                        }
                        if classes.is_semantic(g) {
                            per[g as usize].union += 1;
                        }
                    }
                }
                let (po, go) = (p != empty, g != empty);
                if po && go {
                    geo.inter += 1;
                }
                if po || go {
                    geo.union += 1;
                }
            }
            (per, geo)
        })
        .reduce(
            || (vec![IouCounts::default(); n], IouCounts::default()),
            |(mut a, mut ga), (b, gb)| {
                for (x, y) in a.iter_mut().zip(b) {
                    x.inter += y.inter;
                    x.union += y.union;
                }
                ga.inter += gb.inter;
                ga.union += gb.union;
                (a, ga)
            },
        );
    let per_class_iou: BTreeMap<ClassId, f64> = classes
        .semantic_ids()
        .filter_map(|c| ratio(per_class[c as usize].inter, per_class[c as usize].union).map(|v| (c, v)))
        .collect();
    Ok(IouReport {
        miou: mean(per_class_iou.values().copied()),
        per_class_iou,
        geometric_iou: ratio(geo.inter, geo.union),
    })
}

/// Mean IoU restricted to a subset of classes (those with support).
pub fn subset_miou(report: &IouReport, subset: impl Fn(ClassId) -> bool) -> Option<f64> {
    mean(
        report
            .per_class_iou
            .iter()
            .filter(|(c, _)| subset(**c))
            .map(|(_, v)| *v),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub dir: Vector3<f64>,
}

/// First occupied cell along a ray: class and metric distance from the
/// origin to where the ray enters it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstHit {
    pub class: ClassId,
    pub distance: f64,
}

pub fn first_hit(grid: &VoxelGrid, ray: &Ray, empty: ClassId) -> Option<FirstHit> {
    let norm = ray.dir.norm();
    RayWalk::ray(&ray.origin, &ray.dir, &grid.spec)
        .find(|x| grid.get(x.voxel) != empty)
        .map(|x| FirstHit {
            class: grid.get(x.voxel),
            distance: x.t_enter * norm,
        })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RayCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RayIouReport {
    /// (threshold in meters, mean class score or `None` when no class has
    /// any ray support).
    pub per_threshold: Vec<(f64, Option<f64>)>,
    pub mean_ray_iou: Option<f64>,
}

/// Classifies one ray for one threshold, adding to per-class counts.
///
/// TP for class c: both hit c within `tau` of each other. Otherwise a pred
/// hit is an FP for its class and a gt hit an FN for its class.
pub fn score_ray(pred: Option<FirstHit>, gt: Option<FirstHit>, tau: f64, counts: &mut [RayCounts]) {
    match (pred, gt) {
        (Some(p), Some(g)) if p.class == g.class && (p.distance - g.distance).abs() <= tau => {
            counts[p.class as usize].tp += 1;
        }
        (p, g) => {
            if let Some(p) = p {
                counts[p.class as usize].fp += 1;
            }
            if let Some(g) = g {
                counts[g.class as usize].fn_ += 1;
            }
        }
    }
}

/// RayIoU at each distance threshold and their mean.
pub fn ray_iou(
    pred: &VoxelGrid,
    gt: &VoxelGrid,
    rays: &[Ray],
    thresholds: &[f64],
    classes: &ClassTable,
) -> Result<RayIouReport> {
    check_spec(pred, gt)?;
    if rays.is_empty() {
        return Err(Error::Invalid("empty ray set".into()));
    }
    if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Invalid(format!("thresholds must be positive: {thresholds:?}")));
    }
    let empty = classes.empty();
    let hits: Vec<(Option<FirstHit>, Option<FirstHit>)> = rays
        .par_iter()
        .map(|r| (first_hit(pred, r, empty), first_hit(gt, r, empty)))
        .collect();
    let n = classes.len();
    let per_threshold: Vec<(f64, Option<f64>)> = thresholds
        .iter()
        .map(|&tau| {
            let mut counts = vec![RayCounts::default(); n];
            for (p, g) in &hits {
                score_ray(*p, *g, tau, &mut counts);
            }
            let score = mean(counts.iter().filter_map(|c| ratio(c.tp, c.tp + c.fp + c.fn_)));
            (tau, score)
        })
        .collect();
    let mean_ray_iou = if per_threshold.iter().all(|(_, s)| s.is_some()) {
        mean(per_threshold.iter().filter_map(|(_, s)| *s))
    } else {
        None
    };
    Ok(RayIouReport {
        per_threshold,
        mean_ray_iou,
    })
}

/// Pixel rays of `cameras` (world frame) expressed in the ego frame.
pub fn camera_rays(cameras: &[CameraModel], ego_to_world: &RigidTransform, stride: u32) -> Vec<Ray> {
    let stride = stride.max(1) as usize;
    let world_to_ego = ego_to_world.inverse();
    let mut rays = Vec::new();
    for cam in cameras {
        let local = cam.reframed(&world_to_ego);
        let origin = local.center();
        for v in (0..cam.height()).step_by(stride) {
            for u in (0..cam.width()).step_by(stride) {
                rays.push(Ray {
                    origin,
                    dir: local.pixel_ray_world(u as f64, v as f64),
                });
            }
        }
    }
    rays
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaskedLoss {
    pub value: f64,
    /// Set when no cell is observed; `value` is then 0.
    pub empty_mask: bool,
    pub cells: usize,
}

/// Mean `-ln p(label)` over observed cells. `probs` holds one
/// `num_classes`-vector per cell in the grid's linear order.
pub fn masked_cross_entropy(
    probs: &[f64],
    num_classes: usize,
    labels: &VoxelGrid,
    mask: &VisibilityGrid,
) -> Result<MaskedLoss> {
    let cells = labels.spec.num_cells();
    if num_classes == 0 || probs.len() != cells * num_classes {
        return Err(Error::DimensionMismatch(format!(
            "expected {cells}x{num_classes} probabilities, got {}",
            probs.len()
        )));
    }
    if mask.spec != labels.spec {
        return Err(Error::SpecMismatch("visibility mask differs from grid".into()));
    }
    if let Some((i, s)) = probs
        .par_chunks(num_classes)
        .map(|p| p.iter().sum::<f64>())
        .enumerate()
        .find_any(|(_, s)| (s - 1.0).abs() > 1e-6)
    {
        return Err(Error::Invalid(format!(
            "probabilities of cell {i} sum to {s}, not 1"
        )));
    }
    let terms: Vec<f64> = probs
        .par_chunks(num_classes)
        .zip(labels.labels.par_iter())
        .zip(mask.state.par_iter())
        .filter(|(_, m)| m.observed())
        .map(|((p, &l), _)| p.get(l as usize).map_or(f64::INFINITY, |x| -x.ln()))
        .collect();
    if terms.is_empty() {
        return Ok(MaskedLoss {
            value: 0.0,
            empty_mask: true,
            cells: 0,
        });
    }
    Ok(MaskedLoss {
        value: pairwise_sum(&terms) / terms.len() as f64,
        empty_mask: false,
        cells: terms.len(),
    })
}

/// Full evaluation result for one frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_class_iou: BTreeMap<String, f64>,
    pub miou: Option<f64>,
    pub geometric_iou: Option<f64>,
    pub ray_iou: BTreeMap<String, Option<f64>>,
    pub mean_ray_iou: Option<f64>,
}

impl EvalReport {
    pub fn new(iou: &IouReport, rays: Option<&RayIouReport>, classes: &ClassTable) -> Self {
        Self {
            per_class_iou: iou
                .per_class_iou
                .iter()
                .map(|(c, v)| (classes.name(*c).to_string(), *v))
                .collect(),
            miou: iou.miou,
            geometric_iou: iou.geometric_iou,
            ray_iou: rays
                .map(|r| {
                    r.per_threshold
                        .iter()
                        .map(|(t, s)| (format!("{t}m"), *s))
                        .collect()
                })
                .unwrap_or_default(),
            mean_ray_iou: rays.and_then(|r| r.mean_ray_iou),
        }
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        fn f(v: Option<f64>) -> String {
            v.map_or_else(|| "     -".into(), |x| format!("{:6.2}", 100.0 * x))
        }
        let mut s = String::new();
        s.push_str(&format!("{:<24}{:>8}\n", "metric", "value"));
        s.push_str(&format!("{:<24}{:>8}\n", "mIoU", f(self.miou)));
        s.push_str(&format!("{:<24}{:>8}\n", "geometric IoU", f(self.geometric_iou)));
        for (k, v) in &self.ray_iou {
            s.push_str(&format!("{:<24}{:>8}\n", format!("RayIoU@{k}"), f(*v)));
        }
        if !self.ray_iou.is_empty() {
            s.push_str(&format!("{:<24}{:>8}\n", "RayIoU (mean)", f(self.mean_ray_iou)));
        }
        for (k, v) in &self.per_class_iou {
            s.push_str(&format!("{:<24}{:>8}\n", format!("  {k}"), f(Some(*v))));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GridSpec;
    use crate::voxelize::Visibility;

    fn spec() -> GridSpec {
        GridSpec::new([0.0; 3], 1.0, [3, 1, 1]).unwrap()
    }

    #[test]
    fn one_third() {
        let t = ClassTable::default();
        let e = t.empty();
        let pred = VoxelGrid::from_labels(spec(), vec![13, 13, e]).unwrap();
        let gt = VoxelGrid::from_labels(spec(), vec![e, 13, 13]).unwrap();
        let mask = VisibilityGrid::all_visible(&gt, e);
        let r = grid_iou(&pred, &gt, &mask, &t).unwrap();
        assert_eq!(r.per_class_iou[&13], 1.0 / 3.0);
        assert_eq!(r.miou, Some(1.0 / 3.0));
        assert_eq!(r.geometric_iou, Some(1.0 / 3.0));
    }

    #[test]
    fn identical_and_disjoint() {
        let t = ClassTable::default();
        let e = t.empty();
        let g = VoxelGrid::from_labels(spec(), vec![13, 4, e]).unwrap();
        let mask = VisibilityGrid::all_visible(&g, e);
        let r = grid_iou(&g, &g, &mask, &t).unwrap();
        assert!(r.per_class_iou.values().all(|&v| v == 1.0));
        assert_eq!(r.geometric_iou, Some(1.0));

        let other = VoxelGrid::from_labels(spec(), vec![e, e, 13]).unwrap();
        let r = grid_iou(&g, &other, &mask, &t).unwrap();
        assert_eq!(r.geometric_iou, Some(0.0));
    }

    #[test]
    fn unobserved_cells_ignored_and_absent_classes_excluded() {
        let t = ClassTable::default();
        let e = t.empty();
        let pred = VoxelGrid::from_labels(spec(), vec![13, 4, e]).unwrap();
        let gt = VoxelGrid::from_labels(spec(), vec![13, e, e]).unwrap();
        let mut mask = VisibilityGrid::all_visible(&gt, e);
        mask.state[1] = Visibility::Unobserved;
        let r = grid_iou(&pred, &gt, &mask, &t).unwrap();
        assert_eq!(r.per_class_iou.len(), 1);
        assert_eq!(r.miou, Some(1.0));
        assert!(!r.per_class_iou.contains_key(&4));
    }

    #[test]
    fn spec_mismatch() {
        let t = ClassTable::default();
        let a = VoxelGrid::filled(spec(), t.empty());
        let b = VoxelGrid::filled(GridSpec::new([0.0; 3], 1.0, [1, 3, 1]).unwrap(), t.empty());
        let m = VisibilityGrid::all_visible(&a, t.empty());
        assert!(matches!(grid_iou(&a, &b, &m, &t), Err(Error::SpecMismatch(_))));
    }

    #[test]
    fn single_ray_tp_rule() {
        let hit = |d| Some(FirstHit { class: 4, distance: d });
        for tau in DEFAULT_RAY_THRESHOLDS {
            let mut c = vec![RayCounts::default(); 17];
            score_ray(hit(10.6), hit(10.0), tau, &mut c);
            assert_eq!(c[4], RayCounts { tp: 1, fp: 0, fn_: 0 });
        }
        let mut c = vec![RayCounts::default(); 17];
        score_ray(hit(15.0), hit(10.0), 1.0, &mut c);
        assert_eq!(c[4], RayCounts { tp: 0, fp: 1, fn_: 1 });
        let mut c = vec![RayCounts::default(); 17];
        score_ray(None, Some(FirstHit { class: 2, distance: 1.0 }), 1.0, &mut c);
        assert_eq!(c[2].fn_, 1);
    }

    #[test]
    fn ray_iou_identity_and_empty_pred() {
        let t = ClassTable::default();
        let e = t.empty();
        let s = GridSpec::new([0.0; 3], 1.0, [8, 1, 1]).unwrap();
        let mut gt = VoxelGrid::filled(s, e);
        gt.set([5, 0, 0], 13);
        let rays = vec![Ray { origin: Vector3::new(0.5, 0.5, 0.5), dir: Vector3::x() }];
        let r = ray_iou(&gt, &gt, &rays, &DEFAULT_RAY_THRESHOLDS, &t).unwrap();
        assert!(r.per_threshold.iter().all(|(_, v)| *v == Some(1.0)));
        assert_eq!(r.mean_ray_iou, Some(1.0));

        let pred = VoxelGrid::filled(s, e);
        let r = ray_iou(&pred, &gt, &rays, &DEFAULT_RAY_THRESHOLDS, &t).unwrap();
        assert!(r.per_threshold.iter().all(|(_, v)| *v == Some(0.0)));

        assert!(ray_iou(&gt, &gt, &[], &[1.0], &t).is_err());
        assert!(ray_iou(&gt, &gt, &rays, &[0.0], &t).is_err());
    }

    #[test]
    fn first_hit_distance() {
        let t = ClassTable::default();
        let s = GridSpec::new([0.0; 3], 0.5, [8, 1, 1]).unwrap();
        let mut g = VoxelGrid::filled(s, t.empty());
        g.set([5, 0, 0], 13);
        let h = first_hit(&g, &Ray { origin: Vector3::new(0.25, 0.25, 0.25), dir: Vector3::x() * 3.0 }, t.empty()).unwrap();
        assert!((h.distance - 2.25).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_cases() {
        let t = ClassTable::default();
        let s = GridSpec::new([0.0; 3], 1.0, [2, 2, 1]).unwrap();
        let labels = VoxelGrid::from_labels(s, vec![0, 3, t.empty(), 4]).unwrap();
        let mask = VisibilityGrid::all_visible(&labels, t.empty());
        let c = t.len();

        let uniform = vec![1.0 / c as f64; 4 * c];
        let l = masked_cross_entropy(&uniform, c, &labels, &mask).unwrap();
        assert!((l.value - (c as f64).ln()).abs() < 1e-12);

        let mut onehot = vec![0.0; 4 * c];
        for (i, &lab) in labels.labels.iter().enumerate() {
            onehot[i * c + lab as usize] = 1.0;
        }
        assert_eq!(masked_cross_entropy(&onehot, c, &labels, &mask).unwrap().value, 0.0);

        let none = VisibilityGrid::unobserved(s);
        let l = masked_cross_entropy(&uniform, c, &labels, &none).unwrap();
        assert!(l.empty_mask);
        assert_eq!(l.value, 0.0);

        let mut bad = uniform.clone();
        bad[0] += 0.01;
        assert!(masked_cross_entropy(&bad, c, &labels, &mask).is_err());
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let xs: Vec<f64> = (0..10_000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 49_995_000.0);
    }
}
