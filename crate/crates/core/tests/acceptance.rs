//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use occlabel::filter::{consistency_keep, density_keep, ray_cell_stats, CellCounts, RaySample};
use occlabel::io::gridfile::encode_grid;
use occlabel::metrics::{grid_iou, masked_cross_entropy, ray_iou, subset_miou, IouReport};
use occlabel::pipeline::{evaluate_frame, FrameInput};
use occlabel::scene::{load_manifest, look_along, CameraModel, ClassTable, GridSpec, RigidTransform};
use occlabel::synth::{render_sequence, write_synth_sequence, DepthNoise, SemanticsFormat, SyntheticWorld};
use occlabel::traversal::traverse_ray;
use occlabel::unproject::{LabeledPoint, LabeledPointCloud};
use occlabel::voxelize::visibility_mask;
use occlabel::{run_frames, run_pipeline, PipelineConfig, PipelineMode, Visibility, VoxelGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn config(mode: PipelineMode, world: &SyntheticWorld) -> PipelineConfig {
    PipelineConfig {
        mode,
        grid: world.spec.ego_grid,
        ..Default::default()
    }
}

fn frame_reports(world: &SyntheticWorld, inputs: &[FrameInput], cfg: &PipelineConfig) -> Vec<IouReport> {
    let run = run_frames(inputs, cfg, &world.classes).unwrap();
    (0..world.frames())
        .map(|t| {
            let (gt, mask) = world.ground_truth(t).unwrap();
            let cams = world.cameras(t).unwrap();
            evaluate_frame(&run.frames[t].grid, &gt, &mask, &cams, &world.ego_poses[t], 4, &[], &world.classes)
                .unwrap()
                .0
        })
        .collect()
}

fn fmt(xs: &[f64]) -> String {
    let v: Vec<String> = xs.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", v.join(", "))
}

fn static_round_trip() -> Check {
    let world = common::static_world();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let reports = pool.install(|| {
        let inputs = render_sequence(&world, None).unwrap();
        let cfg = PipelineConfig {
            workers: 1,
            ..config(PipelineMode::Full, &world)
        };
        frame_reports(&world, &inputs, &cfg)
    });
    let elapsed = start.elapsed();
    let geo: Vec<f64> = reports.iter().map(|r| r.geometric_iou.unwrap_or(0.0)).collect();
    let miou: Vec<f64> = reports.iter().map(|r| r.miou.unwrap_or(0.0)).collect();
    let detail = format!("geometric {} mIoU {} in {:.1?}", fmt(&geo), fmt(&miou), elapsed);
    ensure(world.frames() == 3 && world.spec.rig.yaws.len() == 2, || "scene shape".into())?;
    ensure(geo.iter().all(|g| *g >= 0.95), || detail.clone())?;
    ensure(miou.iter().all(|m| *m >= 0.90), || detail.clone())?;
    ensure(elapsed < Duration::from_secs(60), || detail.clone())?;
    Ok(detail)
}

fn ablation() -> (Check, Check) {
    let world = common::actor_world();
    let inputs = render_sequence(&world, None).unwrap();
    let per_frame = frame_reports(&world, &inputs, &config(PipelineMode::PerFrame, &world));
    let aggregate = frame_reports(&world, &inputs, &config(PipelineMode::AggregateNoDynamics, &world));
    let full = frame_reports(&world, &inputs, &config(PipelineMode::Full, &world));
    let car = common::car().class;

    let stat = |r: &IouReport| subset_miou(r, |c| !world.classes.is_dynamic(c)).unwrap_or(0.0);
    let sp: Vec<f64> = per_frame.iter().map(stat).collect();
    let sa: Vec<f64> = aggregate.iter().map(stat).collect();
    let detail = format!("static mIoU per_frame {} aggregate {}", fmt(&sp), fmt(&sa));
    let statics = if sp.iter().zip(&sa).all(|(p, a)| p < a) {
        Ok(detail)
    } else {
        Err(detail)
    };

    let actor = |r: &IouReport| r.per_class_iou.get(&car).copied().unwrap_or(0.0);
    let af: Vec<f64> = full.iter().map(actor).collect();
    let aa: Vec<f64> = aggregate.iter().map(actor).collect();
    let detail = format!("car IoU full {} aggregate {}", fmt(&af), fmt(&aa));
    let dynamics = if af.iter().zip(&aa).all(|(f, a)| f > a) {
        Ok(detail)
    } else {
        Err(detail)
    };
    (statics, dynamics)
}

fn confidence_filter_trend() -> Check {
    let world = common::static_world();
    let noise = DepthNoise {
        outlier_fraction: 0.1,
        magnitude: 3.0,
        seed: 5,
    };
    let inputs = render_sequence(&world, Some(noise)).unwrap();
    let on = config(PipelineMode::Full, &world);
    let off = PipelineConfig {
        ray_consistency: false,
        min_points: 0,
        ..on.clone()
    };
    let geo = |cfg| -> Vec<f64> {
        frame_reports(&world, &inputs, cfg)
            .iter()
            .map(|r| r.geometric_iou.unwrap_or(0.0))
            .collect()
    };
    let (with, without) = (geo(&on), geo(&off));
    let detail = format!("geometric with filters {} without {}", fmt(&with), fmt(&without));
    ensure(with.iter().zip(&without).all(|(a, b)| a > b), || detail.clone())?;
    Ok(detail)
}

fn point(p: Vector3<f64>) -> LabeledPoint {
    LabeledPoint {
        position: p,
        class: 13,
        frame: 0,
        camera: 0,
        pixel: [0, 0],
    }
}

/// Points and their rays from a common origin left of a 1-wide row of cells.
fn row_cloud(endpoints: &[f64]) -> (LabeledPointCloud, Vec<RaySample>) {
    let origin = Vector3::new(-0.5, 0.5, 0.5);
    let cloud: LabeledPointCloud = endpoints.iter().map(|&x| point(Vector3::new(x, 0.5, 0.5))).collect();
    let rays = cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| RaySample {
            origin,
            endpoint: p.position,
            point_index: i,
        })
        .collect();
    (cloud, rays)
}

fn filter_rules() -> Check {
    ensure(!CellCounts { hit: 2, pass: 5, points: 2 }.is_consistent(), || "hit 2 pass 5 kept".into())?;
    ensure(CellCounts { hit: 3, pass: 2, points: 3 }.is_consistent(), || "hit 3 pass 2 discarded".into())?;

    // Same cases produced by real rays through cell 5 of a row grid.
    let g = GridSpec::new([0.0; 3], 1.0, [10, 1, 1]).unwrap();
    let (cloud, rays) = row_cloud(&[5.5, 5.5, 7.5, 7.5, 7.5, 7.5, 7.5]);
    let s = ray_cell_stats(&rays, &g).get([5, 0, 0]);
    ensure(s.hit == 2 && s.pass == 5, || format!("counted {s:?}"))?;
    let keep = consistency_keep(&cloud, &rays, &g).unwrap();
    ensure(keep == [false, false, true, true, true, true, true], || format!("keep {keep:?}"))?;

    let (cloud, rays) = row_cloud(&[5.5, 5.5, 5.5, 7.5, 7.5]);
    let s = ray_cell_stats(&rays, &g).get([5, 0, 0]);
    ensure(s.hit == 3 && s.pass == 2, || format!("counted {s:?}"))?;
    let keep = consistency_keep(&cloud, &rays, &g).unwrap();
    ensure(keep.iter().all(|k| *k), || format!("keep {keep:?}"))?;

    let (cloud, _) = row_cloud(&[2.1, 2.5, 2.9]);
    ensure(density_keep(&cloud, &g, 4) == [false; 3], || "3 points kept at min_points 4".into())?;
    ensure(density_keep(&cloud, &g, 3) == [true; 3], || "3 points dropped at min_points 3".into())?;
    Ok("(2,5) discard, (3,2) keep, 3 points < 4 discard".into())
}

fn corridor_visibility() -> Check {
    let classes = ClassTable::occupancy_default();
    let (empty, solid) = (classes.empty(), classes.by_name("manmade").unwrap());
    let g = GridSpec::new([0.0; 3], 1.0, [24, 5, 5]).unwrap();
    let wall_x = 15;
    let mut grid = VoxelGrid::filled(g, solid);
    for x in 0..wall_x {
        grid.set([x, 2, 2], empty);
    }
    let pose = look_along(Vector3::new(0.5, 2.5, 2.5), Vector3::x(), Vector3::z()).unwrap();
    let cam = CameraModel::pinhole(2000.0, 3.0, 3.0, pose, 7, 7).unwrap();
    let vis = visibility_mask(&grid, &[cam], &RigidTransform::identity(), 1, empty);

    let mut got = (Vec::new(), Vec::new(), 0usize);
    for i in 0..g.num_cells() {
        let v = g.unlinear(i);
        match vis.state[i] {
            Visibility::FreeVisible => got.0.push(v),
            Visibility::OccupiedVisible => got.1.push(v),
            Visibility::Unobserved => got.2 += 1,
        }
    }
    let free: Vec<_> = (0..wall_x).map(|x| [x, 2, 2]).collect();
    let occupied = vec![[wall_x, 2, 2]];
    let unobserved = g.num_cells() - free.len() - 1;
    ensure(got.0 == free, || format!("free {:?}", got.0))?;
    ensure(got.1 == occupied, || format!("occupied {:?}", got.1))?;
    ensure(got.2 == unobserved, || format!("{} unobserved, expected {unobserved}", got.2))?;
    Ok(format!("{} free, 1 occupied, {} unobserved", free.len(), unobserved))
}

fn metric_oracles() -> Check {
    let classes = ClassTable::occupancy_default();
    let spec = GridSpec::new([0.0; 3], 1.0, [8, 8, 4]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let thresholds = [0.5, 1.0, 2.0, 4.0];
    let sweep: Vec<f64> = (1..=32).map(|i| i as f64 * 0.25).collect();
    let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
        (None, None) => true,
        _ => false,
    };
    let mut worst_ce = 0.0f64;
    for pair in 0..50 {
        let pred = common::random_grid(&mut rng, spec, &classes);
        let gt = common::random_grid(&mut rng, spec, &classes);
        let mask = common::random_mask(&mut rng, &gt, classes.empty());

        let got = grid_iou(&pred, &gt, &mask, &classes).unwrap();
        let want = common::brute_grid_iou(&pred, &gt, &mask, &classes);
        ensure(got.per_class_iou.keys().eq(want.per_class.keys()), || format!("pair {pair}: class support"))?;
        for (c, v) in &got.per_class_iou {
            ensure((v - want.per_class[c]).abs() <= 1e-12, || format!("pair {pair}: class {c} IoU"))?;
        }
        ensure(close(got.miou, want.miou), || format!("pair {pair}: mIoU {:?} vs {:?}", got.miou, want.miou))?;
        ensure(close(got.geometric_iou, want.geometric), || format!("pair {pair}: geometric IoU"))?;

        let rays = common::random_rays(&mut rng, &spec, 64);
        let got = ray_iou(&pred, &gt, &rays, &thresholds, &classes).unwrap();
        let want = common::brute_ray_iou(&pred, &gt, &rays, &thresholds, &classes);
        for ((tau, g), w) in got.per_threshold.iter().zip(&want) {
            ensure(close(*g, *w), || format!("pair {pair}: RayIoU@{tau} {g:?} vs {w:?}"))?;
        }

        let swept = ray_iou(&pred, &gt, &rays, &sweep, &classes).unwrap();
        let scores: Vec<f64> = swept.per_threshold.iter().filter_map(|(_, s)| *s).collect();
        ensure(scores.windows(2).all(|w| w[0] <= w[1]), || format!("pair {pair}: not monotone {scores:?}"))?;

        let c = classes.len();
        let uniform = vec![1.0 / c as f64; spec.num_cells() * c];
        let loss = masked_cross_entropy(&uniform, c, &gt, &mask).unwrap();
        worst_ce = worst_ce.max((loss.value - (c as f64).ln()).abs());
    }
    ensure(worst_ce <= 1e-12, || format!("uniform cross-entropy off by {worst_ce:e}"))?;
    Ok(format!("50 pairs; uniform cross-entropy error {worst_ce:.1e}"))
}

fn traversal_oracle() -> Check {
    let g = GridSpec::new([-3.2, -2.0, -1.0], 0.4, [16, 10, 8]).unwrap();
    let max = g.max_corner();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut cells = 0;
    for i in 0..1000 {
        let mut sample = || {
            Vector3::from_fn(|a, _| {
                let pad = 1.5;
                rng.random_range(g.origin[a] - pad..max[a] + pad)
            })
        };
        let (o, e) = (sample(), sample());
        let got = traverse_ray(&o, &e, &g);
        let want = common::sampled_cells(&o, &e, &g);
        ensure(got == want, || format!("segment {i} {o:?} -> {e:?}: {got:?} vs {want:?}"))?;
        cells += got.len();
    }
    Ok(format!("1000 segments, {cells} cells"))
}

fn determinism() -> Check {
    let world = common::actor_world();
    let dir = tempfile::tempdir().unwrap();
    let path = write_synth_sequence(&world, dir.path(), None, SemanticsFormat::Detections).unwrap();
    let manifest = load_manifest(&path).unwrap();
    let encoded = |workers| -> Vec<Vec<u8>> {
        let cfg = PipelineConfig {
            workers,
            ..config(PipelineMode::Full, &world)
        };
        run_pipeline(&manifest, &cfg, &world.classes)
            .unwrap()
            .frames
            .iter()
            .map(|f| encode_grid(&f.grid, &f.visibility).unwrap())
            .collect()
    };
    let reference = encoded(1);
    for (label, workers) in [("4 workers", 4), ("8 workers", 8), ("repeat", 1)] {
        ensure(encoded(workers) == reference, || format!("{label} differs"))?;
    }
    let bytes: usize = reference.iter().map(Vec::len).sum();
    Ok(format!("{} frames, {bytes} bytes identical over 1/4/8 workers and a rerun", reference.len()))
}

fn grid_defaults() -> Check {
    let g = GridSpec::default();
    ensure(g.dims == [200, 200, 16], || format!("dims {:?}", g.dims))?;
    ensure(g.origin == [-40.0, -40.0, -1.0] && g.resolution == 0.4, || format!("{g:?}"))?;
    Ok(format!("dims {:?}", g.dims))
}

fn run(name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    report(name, out, start.elapsed())
}

fn report(name: &str, out: Check, elapsed: Duration) -> bool {
    let (tag, detail, ok) = match out {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("{tag} {name:<28} {detail} ({:.2}s)", elapsed.as_secs_f64());
    ok
}

fn main() {
    // libtest-style flags (e.g. --nocapture, filters) are accepted and ignored.
    let mut ok = Vec::new();
    ok.push(run("static_round_trip", static_round_trip));
    let start = Instant::now();
    let (statics, dynamics) = catch_unwind(ablation)
        .unwrap_or_else(|_| (Err("panicked".into()), Err("panicked".into())));
    let elapsed = start.elapsed();
    ok.push(report("ablation_static_classes", statics, elapsed));
    ok.push(report("ablation_dynamic_class", dynamics, elapsed));
    ok.push(run("confidence_filter_trend", confidence_filter_trend));
    ok.push(run("filter_rules", filter_rules));
    ok.push(run("corridor_visibility", corridor_visibility));
    ok.push(run("metric_oracles", metric_oracles));
    ok.push(run("traversal_oracle", traversal_oracle));
    ok.push(run("determinism", determinism));
    ok.push(run("grid_defaults", grid_defaults));
    let passed = ok.iter().filter(|x| **x).count();
    println!("acceptance: {passed}/{} criteria passed", ok.len());
    if passed != ok.len() {
        std::process::exit(1);
    }
}
