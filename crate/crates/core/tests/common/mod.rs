//! Scenes and brute-force reference implementations shared by the
//! integration targets.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::Vector3;
use occlabel::metrics::Ray;
use occlabel::scene::{ClassId, ClassTable, GridSpec, VoxelIndex};
use occlabel::synth::{build_world, ActorSpec, ScenarioSpec, SyntheticWorld};
use occlabel::{VisibilityGrid, VoxelGrid};
use rand::Rng;

pub const SCENE_SEED: u64 = 7;

pub fn car() -> ActorSpec {
    ActorSpec {
        class: 3,
        size: [1.6, 0.8, 1.2],
        start: [3.0, 0.0, 0.0],
        velocity: [0.8, 0.0, 0.0],
        yaw: 0.0,
    }
}

pub fn static_world() -> SyntheticWorld {
    build_world(&ScenarioSpec::default(), SCENE_SEED).unwrap()
}

pub fn actor_world() -> SyntheticWorld {
    let spec = ScenarioSpec {
        actors: vec![car()],
        ..Default::default()
    };
    build_world(&spec, SCENE_SEED).unwrap()
}

// ---- traversal ------------------------------------------------------------

fn lattice_cell(p: &Vector3<f64>, g: &GridSpec) -> [i64; 3] {
    [0, 1, 2].map(|a| ((p[a] - g.origin[a]) / g.resolution).floor() as i64)
}

fn at(o: &Vector3<f64>, e: &Vector3<f64>, t: f64) -> Vector3<f64> {
    if t == 0.0 {
        *o
    } else if t == 1.0 {
        *e
    } else {
        o + (e - o) * t
    }
}

fn refine(
    o: &Vector3<f64>,
    e: &Vector3<f64>,
    g: &GridSpec,
    (ta, ca): (f64, [i64; 3]),
    (tb, cb): (f64, [i64; 3]),
    out: &mut Vec<[i64; 3]>,
) {
    if ca == cb {
        return;
    }
    let moved: i64 = (0..3).map(|a| (ca[a] - cb[a]).abs()).sum();
    if moved == 1 {
        out.push(cb);
        return;
    }
    let mid = 0.5 * (ta + tb);
    if mid <= ta || mid >= tb || tb - ta < 1e-14 {
        // Several boundaries crossed in an interval too short to split:
        // order them by their exact crossing parameter, x before y before z.
        let d = e - o;
        let mut crossings: Vec<(f64, usize)> = (0..3)
            .filter(|&a| ca[a] != cb[a])
            .map(|a| {
                let up = cb[a] > ca[a];
                let plane = g.origin[a] + (ca[a] + i64::from(up)) as f64 * g.resolution;
                ((plane - o[a]) / d[a], a)
            })
            .collect();
        crossings.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut c = ca;
        for (_, a) in crossings {
            c[a] += (cb[a] - ca[a]).signum();
            out.push(c);
        }
        return;
    }
    let cm = lattice_cell(&at(o, e, mid), g);
    refine(o, e, g, (ta, ca), (mid, cm), out);
    refine(o, e, g, (mid, cm), (tb, cb), out);
}

/// Cells of the segment found by dense sampling of the parameter, with
/// bisection wherever two consecutive samples are not face neighbours.
pub fn sampled_cells(o: &Vector3<f64>, e: &Vector3<f64>, g: &GridSpec) -> Vec<VoxelIndex> {
    let len = (e - o).norm();
    let n = ((len / (g.resolution / 50.0)).ceil() as usize).max(1);
    let mut seq = vec![lattice_cell(o, g)];
    let mut prev = (0.0, seq[0]);
    for i in 1..=n {
        let t = if i == n { 1.0 } else { i as f64 / n as f64 };
        let c = lattice_cell(&at(o, e, t), g);
        refine(o, e, g, prev, (t, c), &mut seq);
        prev = (t, c);
    }
    seq.into_iter().filter_map(|c| g.in_bounds(c)).collect()
}

// ---- metrics --------------------------------------------------------------

pub struct BruteIou {
    pub per_class: BTreeMap<ClassId, f64>,
    pub miou: Option<f64>,
    pub geometric: Option<f64>,
}

pub fn brute_grid_iou(pred: &VoxelGrid, gt: &VoxelGrid, mask: &VisibilityGrid, classes: &ClassTable) -> BruteIou {
    let empty = classes.empty();
    let observed: Vec<usize> = (0..gt.labels.len()).filter(|&i| mask.state[i].observed()).collect();
    let mut per_class = BTreeMap::new();
    for c in classes.semantic_ids() {
        let inter = observed.iter().filter(|&&i| pred.labels[i] == c && gt.labels[i] == c).count();
        let union = observed.iter().filter(|&&i| pred.labels[i] == c || gt.labels[i] == c).count();
        if union > 0 {
            per_class.insert(c, inter as f64 / union as f64);
        }
    }
    let miou = (!per_class.is_empty()).then(|| per_class.values().sum::<f64>() / per_class.len() as f64);
    let inter = observed
        .iter()
        .filter(|&&i| pred.labels[i] != empty && gt.labels[i] != empty)
        .count();
    let union = observed
        .iter()
        .filter(|&&i| pred.labels[i] != empty || gt.labels[i] != empty)
        .count();
    BruteIou {
        per_class,
        miou,
        geometric: (union > 0).then(|| inter as f64 / union as f64),
    }
}

/// Parameter interval where the ray overlaps a half-open box, if any.
fn slab(ray: &Ray, lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        let (o, d) = (ray.origin[a], ray.dir[a]);
        if d == 0.0 {
            if o < lo[a] || o >= hi[a] {
                return None;
            }
        } else {
            let (x, y) = ((lo[a] - o) / d, (hi[a] - o) / d);
            t0 = t0.max(x.min(y));
            t1 = t1.min(x.max(y));
        }
    }
    (t0 < t1).then_some((t0, t1))
}

/// Nearest occupied cell the ray passes through, by testing every cell.
pub fn brute_first_hit(grid: &VoxelGrid, ray: &Ray, empty: ClassId) -> Option<(ClassId, f64)> {
    let g = &grid.spec;
    let mut best: Option<(f64, ClassId)> = None;
    for i in 0..grid.labels.len() {
        let l = grid.labels[i];
        if l == empty {
            continue;
        }
        let v = g.unlinear(i);
        let lo = [0, 1, 2].map(|a| g.origin[a] + v[a] as f64 * g.resolution);
        let hi = [0, 1, 2].map(|a| g.origin[a] + (v[a] + 1) as f64 * g.resolution);
        if let Some((t0, _)) = slab(ray, lo, hi) {
            if best.is_none_or(|(b, _)| t0 < b) {
                best = Some((t0, l));
            }
        }
    }
    best.map(|(t, l)| (l, t * ray.dir.norm()))
}

pub fn brute_ray_iou(
    pred: &VoxelGrid,
    gt: &VoxelGrid,
    rays: &[Ray],
    thresholds: &[f64],
    classes: &ClassTable,
) -> Vec<Option<f64>> {
    let empty = classes.empty();
    let hits: Vec<_> = rays
        .iter()
        .map(|r| (brute_first_hit(pred, r, empty), brute_first_hit(gt, r, empty)))
        .collect();
    thresholds
        .iter()
        .map(|&tau| {
            let n = classes.len();
            let (mut tp, mut fp, mut fn_) = (vec![0u64; n], vec![0u64; n], vec![0u64; n]);
            for (p, g) in &hits {
                match (p, g) {
                    (Some((pc, pd)), Some((gc, gd))) if pc == gc && (pd - gd).abs() <= tau => {
                        tp[*pc as usize] += 1
                    }
                    _ => {
                        if let Some((pc, _)) = p {
                            fp[*pc as usize] += 1;
                        }
                        if let Some((gc, _)) = g {
                            fn_[*gc as usize] += 1;
                        }
                    }
                }
            }
            let scores: Vec<f64> = (0..n)
                .filter(|&c| tp[c] + fp[c] + fn_[c] > 0)
                .map(|c| tp[c] as f64 / (tp[c] + fp[c] + fn_[c]) as f64)
                .collect();
            (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
        })
        .collect()
}

/// Random labels drawn from a few semantic classes, `unlabeled` and mostly
/// `empty`.
pub fn random_grid(rng: &mut impl Rng, spec: GridSpec, classes: &ClassTable) -> VoxelGrid {
    let palette = [0, 3, 10, 13, 14, classes.unlabeled()];
    let labels = (0..spec.num_cells())
        .map(|_| {
            if rng.random_bool(0.55) {
                classes.empty()
            } else {
                palette[rng.random_range(0..palette.len())]
            }
        })
        .collect();
    VoxelGrid::from_labels(spec, labels).unwrap()
}

pub fn random_mask(rng: &mut impl Rng, grid: &VoxelGrid, empty: ClassId) -> VisibilityGrid {
    let mut mask = VisibilityGrid::all_visible(grid, empty);
    for s in mask.state.iter_mut() {
        if rng.random_bool(0.3) {
            *s = occlabel::Visibility::Unobserved;
        }
    }
    mask
}

pub fn random_rays(rng: &mut impl Rng, spec: &GridSpec, n: usize) -> Vec<Ray> {
    let max = spec.max_corner();
    (0..n)
        .map(|_| {
            let origin = Vector3::from_fn(|a, _| {
                let (lo, hi) = (spec.origin[a], max[a]);
                let pad = 0.25 * (hi - lo);
                rng.random_range(lo - pad..hi + pad)
            });
            let dir = loop {
                let d = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                if d.norm() > 0.1 {
                    break d;
                }
            };
            Ray { origin, dir }
        })
        .collect()
}
