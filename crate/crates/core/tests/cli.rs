use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use occlabel::fusion::{BinaryMask, DetectionClass, DetectionMask, DetectionSetFile};
use occlabel::io::{raster, read_grid};
use occlabel::pipeline::frame_file_name;
use tempfile::TempDir;

const SMALL_GRID: &str = r#"
[pipeline]
grid = { origin = [-10.0, -10.0, -1.0], resolution = 0.4, dims = [50, 50, 10] }
"#;

fn occlabel(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_occlabel"));
    cmd.args(args).env_remove("OCCLABEL_WORKERS").env_remove("RUST_LOG");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Config file plus a synthetic sequence written through the CLI.
fn synth_sequence(extra_config: &str, semantics: &str) -> (TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("occlabel.toml");
    fs::write(&cfg, format!("{SMALL_GRID}{extra_config}")).unwrap();
    let seq = dir.path().join("seq");
    let out = run(occlabel(&["synth", "--config", s(&cfg), "--out", s(&seq), "--semantics", semantics]).arg("--seed").arg("7"));
    assert!(out.status.success());
    let manifest = seq.join("manifest.json");
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), s(&manifest));
    (dir, cfg, manifest)
}

#[test]
fn synth_generate_eval_round_trip() {
    let (dir, cfg, manifest) = synth_sequence("", "detections");
    let pred = dir.path().join("pred");
    let cloud = dir.path().join("cloud.ply");
    let out = run(occlabel(&["generate", "--config", s(&cfg), "--manifest", s(&manifest), "--out", s(&pred)])
        .args(["--cloud-ply", s(&cloud)]));
    assert!(out.status.success());
    for i in 0..3 {
        assert!(pred.join(frame_file_name(i)).is_file());
    }
    assert!(fs::read_to_string(&cloud).unwrap().starts_with("ply\n"));

    let report = dir.path().join("eval.json");
    let out = run(occlabel(&["eval", "--config", s(&cfg), "--pred", s(&pred), "--manifest", s(&manifest)])
        .args(["--json", s(&report), "--ray-stride", "4"]));
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("mean over 3 frames"), "{table}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["frames"].as_array().unwrap().len(), 3);
    assert!(json["mean_geometric_iou"].as_f64().unwrap() >= 0.95);
    assert!(json["mean_miou"].as_f64().unwrap() >= 0.90);
    assert!(json["mean_ray_iou"].as_f64().is_some());
}

#[test]
fn eval_json_to_stdout() {
    let (dir, _, manifest) = synth_sequence("", "mask");
    let gt = manifest.parent().unwrap().join("gt").join(frame_file_name(0));
    let out = run(&mut occlabel(&["eval", "--pred", s(&gt), "--gt", s(&gt), "--json", "-"]));
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["mean_miou"].as_f64(), Some(1.0));
    assert_eq!(json["mean_geometric_iou"].as_f64(), Some(1.0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mean over 1 frames"));
    drop(dir);
}

#[test]
fn flags_override_config_file() {
    let filters_off = "ray_consistency = false\nmin_points = 0\n";
    let (dir, cfg, manifest) = synth_sequence(filters_off, "mask");
    let stats = dir.path().join("stats.txt");
    let generate = |extra: &[&str], out: &str| {
        let pred = dir.path().join(out);
        run(occlabel(&["generate", "--config", s(&cfg), "--manifest", s(&manifest), "--out", s(&pred)])
            .args(["--stats-dump", s(&stats)])
            .args(extra))
    };

    // Filters disabled by the file: no statistics exist.
    assert!(generate(&[], "a").status.success());
    assert!(!stats.exists());

    // Flags turn them back on.
    assert!(generate(&["--ray-consistency", "true", "--min-points", "4"], "b").status.success());
    let dump = fs::read(&stats).unwrap();
    assert_eq!(&dump[..8], b"OCCSTATS");
    let records = u32::from_le_bytes(dump[8..12].try_into().unwrap()) as usize;
    assert!(records > 0);
    assert_eq!(dump.len(), 12 + 24 * records);
}

#[test]
fn grid_flags_replace_config_grid() {
    let (dir, cfg, manifest) = synth_sequence("", "mask");
    let pred = dir.path().join("pred");
    let out = run(occlabel(&["generate", "--config", s(&cfg), "--manifest", s(&manifest), "--out", s(&pred)])
        .args(["--grid-dims", "25,25,10", "--grid-resolution", "0.8"]));
    assert!(out.status.success());
    let (grid, _) = read_grid(&pred.join(frame_file_name(0))).unwrap();
    assert_eq!(grid.spec.dims, [25, 25, 10]);
    assert_eq!(grid.spec.resolution, 0.8);
    assert_eq!(grid.spec.origin, [-10.0, -10.0, -1.0]);
}

#[test]
fn workers_from_environment() {
    let (dir, cfg, manifest) = synth_sequence("", "mask");
    let generate = |out: &str, env: Option<&str>, flag: Option<&str>| {
        let pred = dir.path().join(out);
        let mut cmd = occlabel(&["generate", "--config", s(&cfg), "--manifest", s(&manifest), "--out", s(&pred)]);
        if let Some(v) = env {
            cmd.env("OCCLABEL_WORKERS", v);
        }
        if let Some(v) = flag {
            cmd.args(["--workers", v]);
        }
        (run(&mut cmd), pred)
    };
    let (bad, _) = generate("x", Some("many"), None);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("many"));

    let (flag_wins, _) = generate("y", Some("many"), Some("1"));
    assert!(flag_wins.status.success());

    let (one, a) = generate("one", Some("1"), None);
    let (three, b) = generate("three", Some("3"), None);
    assert!(one.status.success() && three.status.success());
    for i in 0..3 {
        let name = frame_file_name(i);
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn fuse_masks_writes_raster() {
    let dir = tempfile::tempdir().unwrap();
    let (w, h) = (6, 4);
    let dets = vec![
        DetectionMask {
            class: DetectionClass::Class(13),
            logit: 0.9,
            mask: BinaryMask::from_fn(w, h, |u, _| u < 3),
        },
        DetectionMask {
            class: DetectionClass::Class(3),
            logit: 0.1,
            mask: BinaryMask::from_fn(w, h, |_, _| true),
        },
    ];
    let det = dir.path().join("det.json");
    DetectionSetFile::from_detections(w, h, &dets).write(&det).unwrap();
    let out_path = dir.path().join("mask.bin");
    let out = run(&mut occlabel(&["fuse-masks", "--detections", s(&det), "--out", s(&out_path)]));
    assert!(out.status.success());
    let mask = raster::read_mask(&out_path).unwrap();
    assert_eq!(mask.class_at(0, 0), 13);
    // The low-logit car detection is dropped at the default threshold.
    assert_eq!(mask.class_at(5, 3), 16);

    let out = run(&mut occlabel(&["fuse-masks", "--detections", s(&det), "--out", s(&out_path), "--logit-threshold", "0.05"]));
    assert!(out.status.success());
    assert_eq!(raster::read_mask(&out_path).unwrap().class_at(5, 3), 3);
}

#[test]
fn export_ply_counts_occupied_cells() {
    let (_dir, _, manifest) = synth_sequence("", "mask");
    let gt = manifest.parent().unwrap().join("gt").join(frame_file_name(1));
    let ply = manifest.parent().unwrap().join("gt.ply");
    assert!(run(&mut occlabel(&["export-ply", "--grid", s(&gt), "--out", s(&ply)])).status.success());
    let (grid, _) = read_grid(&gt).unwrap();
    let text = fs::read_to_string(&ply).unwrap();
    let occupied = grid.labels.iter().filter(|&&l| l != 15).count();
    assert!(text.contains(&format!("element vertex {occupied}\n")), "{}", &text[..200]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = run(&mut occlabel(&["generate", "--manifest", s(&missing), "--out", s(dir.path())]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{ not json").unwrap();
    let out = run(&mut occlabel(&["generate", "--manifest", s(&broken), "--out", s(dir.path())]));
    assert_eq!(out.status.code(), Some(1));

    let out = run(&mut occlabel(&["generate", "--manifest", s(&broken), "--out", s(dir.path()), "--mode", "sometimes"]));
    assert_eq!(out.status.code(), Some(1));

    // Flag validation happens before any file is touched.
    let out = run(&mut occlabel(&["generate", "--manifest", s(&missing), "--out", s(dir.path()), "--grid-dims", "4,4"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--grid-dims"));
    let out = run(&mut occlabel(&["generate", "--manifest", s(&missing), "--out", s(dir.path()), "--grid-resolution=-1"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("resolution"));

    let bad_cfg = dir.path().join("bad.toml");
    fs::write(&bad_cfg, "[pipeline]\nworkerz = 2\n").unwrap();
    let out = run(&mut occlabel(&["synth", "--config", s(&bad_cfg), "--out", s(dir.path())]));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("workerz"));

    assert_eq!(run(&mut occlabel(&["--help"])).status.code(), Some(0));
    assert_eq!(run(&mut occlabel(&["--version"])).status.code(), Some(0));
    assert_eq!(run(&mut occlabel(&[])).status.code(), Some(1));
}
