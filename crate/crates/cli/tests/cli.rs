#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use floc_core::evaluation::{write_trajectory, TrajectoryPoint};
use floc_core::floorplan::{load_floorplan, save_floorplan, synth_floorplan, two_rooms_tour, GridFormat, SceneSpec};
use floc_core::nalgebra::DMatrix;
use floc_core::observation::{write_scans, LikelihoodParams, RayTable, ScanRecord};
use floc_core::style::{
    build_constraints, distance_matrix, refine, write_features_text, EpisodeMeta, FeatureRecord, WeightedGraph,
};
use floc_core::{Pose, PoseGridSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run(args: &[&str]) -> Result<(), floc_cli::CliError> {
    let mut full = vec!["floc"];
    full.extend_from_slice(args);
    floc_cli::run(full)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_file() {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
        }
    }
    out
}

/// Runs the binary; returns exit code and stderr.
fn floc_bin(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_floc")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stderr).unwrap())
}

fn assert_error_line(stderr: &str, kind: &str) {
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {stderr}");
    let v: Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(v["error"], kind);
}

/// Random scene plus one GT scan at a pose no other pose reproduces.
fn unique_scan_case(dir: &Path, seed: u64) -> (Pose, std::path::PathBuf, std::path::PathBuf) {
    let grid = synth_floorplan(&SceneSpec::random(seed, 4.0, 0.1)).unwrap();
    let spec = PoseGridSpec::covering(&grid, 0.1, 16).unwrap();
    let p = LikelihoodParams::default();
    let table = RayTable::build(&grid, &spec, &p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = loop {
        let i = rng.random_range(0..spec.len());
        let (r, c, k) = spec.unindex(i);
        let Some(rays) = table.rays(r, c, k) else { continue };
        let unique = (0..spec.len()).all(|j| {
            let (r2, c2, k2) = spec.unindex(j);
            j == i || table.rays(r2, c2, k2).is_none_or(|o| o != rays)
        });
        if unique {
            break spec.pose_at(r, c, k);
        }
    };
    let plan = dir.join("plan.txt");
    save_floorplan(&grid, &plan, GridFormat::Text).unwrap();
    let scans = dir.join("scans.jsonl");
    let scan = grid.gt_scan(&pose, p.l, p.fov, p.max_range).unwrap();
    write_scans(&scans, &[ScanRecord::from_scan(0, &scan)]).unwrap();
    (pose, plan, scans)
}

#[test]
fn localize_recovers_unique_pose() {
    let dir = tempfile::tempdir().unwrap();
    let (truth, plan, scans) = unique_scan_case(dir.path(), 2);
    let out = dir.path().join("out");
    run(&["localize", "--floorplan", s(&plan), "--scans", s(&scans), "--out", s(&out)]).unwrap();
    let poses = json(&out.join("poses.json"));
    let got = &poses[0];
    assert!((got["x_m"].as_f64().unwrap() - truth.x).abs() <= 0.05);
    assert!((got["y_m"].as_f64().unwrap() - truth.y).abs() <= 0.05);
    assert!(out.join("frame_0000.probmap").exists());
    assert!(out.join("frame_0000.pgm").exists());
    assert!(out.join("config.toml").exists());
}

#[test]
fn localize_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (_, plan, scans) = unique_scan_case(dir.path(), 3);
    let out = dir.path().join("out");
    let args = ["localize", "--floorplan", s(&plan), "--scans", s(&scans), "--out", s(&out)];
    run(&args).unwrap();
    let first = snapshot(&out);
    run(&args).unwrap();
    assert_eq!(first, snapshot(&out));
}

#[test]
fn wrong_ray_count_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, plan, scans) = unique_scan_case(dir.path(), 4);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[observation]\nl = 20\n").unwrap();
    let out = dir.path().join("out");
    let (code, err) = floc_bin(&[
        "localize", "--config", s(&cfg), "--floorplan", s(&plan), "--scans", s(&scans), "--out", s(&out),
    ]);
    assert_eq!(code, 2);
    assert_error_line(&err, "validation");
    assert!(err.contains("l = 40"));
}

#[test]
fn bad_flags_and_missing_inputs_exit_2() {
    let (code, err) = floc_bin(&["localize", "--bogus"]);
    assert_eq!(code, 2);
    assert_error_line(&err, "validation");
    let (code, err) = floc_bin(&["track", "--out", "/nonexistent/x"]);
    assert_eq!(code, 2);
    assert_error_line(&err, "validation");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[style]\nteleport = 2.0\n").unwrap();
    let (code, _) = floc_bin(&["synth", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code, 2);
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let (code, err) = floc_bin(&["synth", "--out", s(&blocker.join("sub"))]);
    assert_eq!(code, 3);
    assert_error_line(&err, "runtime");
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let from_cfg = dir.path().join("cfg_out");
    let from_flag = dir.path().join("flag_out");
    fs::write(&cfg, format!("seed = 1\nout = {:?}\n", s(&from_cfg))).unwrap();
    run(&["synth", "--config", s(&cfg), "--out", s(&from_flag), "--seed", "9"]).unwrap();
    assert!(!from_cfg.exists());
    let resolved = fs::read_to_string(from_flag.join("config.toml")).unwrap();
    assert!(resolved.contains("seed = 9"));
    // The copied config reproduces the run on its own.
    let again = dir.path().join("again");
    run(&["synth", "--config", s(&from_flag.join("config.toml")), "--out", s(&again)]).unwrap();
    assert_eq!(
        fs::read(from_flag.join("scans.jsonl")).unwrap(),
        fs::read(again.join("scans.jsonl")).unwrap()
    );
}

#[test]
fn synth_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "seed = 5\n[synth]\nscene = \"random\"\ntrajectory = \"random_walk\"\nsteps = 15\ndepth_noise_m = 0.02\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    run(&["synth", "--config", s(&cfg), "--out", s(&out)]).unwrap();
    let first = snapshot(&out);
    run(&["synth", "--config", s(&cfg), "--out", s(&out)]).unwrap();
    assert_eq!(first, snapshot(&out));
    run(&["synth", "--config", s(&cfg), "--out", s(&out), "--seed", "6"]).unwrap();
    assert_ne!(first["scans.jsonl"], snapshot(&out)["scans.jsonl"]);
}

#[test]
fn two_room_synth_has_mirrored_scans() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    run(&["synth", "--out", s(&out)]).unwrap();
    let grid = load_floorplan(&out.join("floorplan.txt")).unwrap();
    let p = LikelihoodParams::default();
    for pose in two_rooms_tour().iter().take(5) {
        let mirror = Pose::new(pose.x + 5.0, pose.y, pose.theta);
        let a = grid.gt_scan(pose, p.l, p.fov, p.max_range).unwrap();
        let b = grid.gt_scan(&mirror, p.l, p.fov, p.max_range).unwrap();
        for (da, db) in a.depths.iter().zip(&b.depths) {
            assert!((da - db).abs() < 1e-9, "{da} vs {db}");
        }
    }
}

#[test]
fn zero_noise_synth_then_track_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "seed = 3\n[synth]\nscene = \"random\"\nextent_m = 5.0\ntrajectory = \"random_walk\"\nsteps = 12\nstep_m = 0.3\n",
    )
    .unwrap();
    let data = dir.path().join("data");
    run(&["synth", "--config", s(&cfg), "--out", s(&data)]).unwrap();
    let out = dir.path().join("track");
    run(&[
        "track",
        "--floorplan",
        s(&data.join("floorplan.txt")),
        "--scans",
        s(&data.join("scans.jsonl")),
        "--motions",
        s(&data.join("motions.jsonl")),
        "--truth",
        s(&data.join("truth.csv")),
        "--out",
        s(&out),
    ])
    .unwrap();
    let report = json(&out.join("report.json"));
    assert_eq!(report["aggregate"]["r_at"]["0.1"], 100.0);
    assert!(fs::read_to_string(out.join("trajectory.csv")).unwrap().starts_with("step,x_m,y_m,theta_rad\n"));
}

#[test]
fn two_room_track_flags_bimodal_steps() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    run(&["synth", "--out", s(&data)]).unwrap();
    let out = dir.path().join("track");
    run(&[
        "track",
        "--floorplan",
        s(&data.join("floorplan.txt")),
        "--scans",
        s(&data.join("scans.jsonl")),
        "--motions",
        s(&data.join("motions.jsonl")),
        "--out",
        s(&out),
    ])
    .unwrap();
    let steps: Vec<Value> = fs::read_to_string(out.join("steps.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(steps.len(), two_rooms_tour().len());
    for st in &steps[..5] {
        assert_eq!(st["bimodal"], true, "{st}");
    }
    let last = steps.last().unwrap();
    assert_eq!(last["bimodal"], false, "{last}");
    assert!(!out.join("report.json").exists());
}

#[test]
fn empty_motions_with_two_scans_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (_, plan, _) = unique_scan_case(dir.path(), 6);
    let grid = load_floorplan(&plan).unwrap();
    let p = LikelihoodParams::default();
    let (x, y) = (0..grid.height() * grid.width())
        .map(|i| grid.cell_center(i / grid.width(), i % grid.width()))
        .find(|&(x, y)| grid.is_free_at(x, y))
        .unwrap();
    let scan = grid.gt_scan(&Pose::new(x, y, 0.0), p.l, p.fov, p.max_range).unwrap();
    let scans = dir.path().join("two.jsonl");
    write_scans(&scans, &[ScanRecord::from_scan(0, &scan), ScanRecord::from_scan(1, &scan)]).unwrap();
    let motions = dir.path().join("motions.jsonl");
    fs::write(&motions, "").unwrap();
    let (code, err) = floc_bin(&[
        "track",
        "--floorplan",
        s(&plan),
        "--scans",
        s(&scans),
        "--motions",
        s(&motions),
        "--out",
        s(&dir.path().join("out")),
    ]);
    assert_eq!(code, 2);
    assert_error_line(&err, "validation");
}

#[test]
fn evaluate_crafted_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let truth: Vec<TrajectoryPoint> =
        (0..10).map(|i| TrajectoryPoint { step: i, pose: Pose::new(i as f64, 0.0, 0.0) }).collect();
    let pred: Vec<TrajectoryPoint> = truth
        .iter()
        .map(|t| TrajectoryPoint {
            step: t.step,
            pose: Pose::new(t.pose.x + if t.step < 3 { 0.05 } else { 0.7 }, 0.0, 0.0),
        })
        .collect();
    let (tp, pp) = (dir.path().join("truth.csv"), dir.path().join("pred.csv"));
    write_trajectory(&tp, &truth).unwrap();
    write_trajectory(&pp, &pred).unwrap();
    let out = dir.path().join("out");
    run(&["evaluate", "--truth", s(&tp), "--pred", s(&pp), "--out", s(&out)]).unwrap();
    let r = json(&out.join("report.json"));
    assert_eq!(r["aggregate"]["r_at"]["0.1"], 30.0);
    assert_eq!(r["aggregate"]["r_at"]["1"], 100.0);
    assert!(fs::read_to_string(out.join("report.txt")).unwrap().contains("pred"));
}

/// Two tight bundles along e1 and e2. The e1 bundle spans scenes s1 and s2,
/// four images each; the e2 bundle is eight images of scene s3.
fn bundle_inputs(dir: &Path) -> (Vec<FeatureRecord>, Vec<EpisodeMeta>) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut feats = Vec::new();
    let mut metas = Vec::new();
    for (axis, scene) in [(0, "s1"), (0, "s2"), (1, "s3"), (1, "s3")] {
        for _ in 0..4 {
            let n = feats.len();
            let mut v = vec![0.0; 4];
            v[axis] = 1.0;
            for x in v.iter_mut() {
                *x += rng.random_range(-0.01..0.01);
            }
            feats.push(FeatureRecord::new(format!("i{n}"), v).unwrap());
            metas.push(EpisodeMeta {
                image_id: format!("i{n}"),
                scene: scene.into(),
                episode: format!("e{n}"),
                difficulty: floc_core::style::Difficulty::Medium,
                position_tag: format!("p{n}"),
                object_count: 5,
            });
        }
    }
    write_features_text(&dir.join("feats.txt"), &feats).unwrap();
    let lines: String = metas.iter().map(|m| serde_json::to_string(m).unwrap() + "\n").collect();
    fs::write(dir.join("meta.jsonl"), lines).unwrap();
    (feats, metas)
}

fn cluster_with(dir: &Path, lambda: f64, tag: &str) -> (Value, Vec<usize>) {
    let cfg = dir.join(format!("{tag}.toml"));
    fs::write(&cfg, format!("[style]\nlambda = {lambda}\nknn = 5\n")).unwrap();
    let out = dir.join(tag);
    run(&[
        "cluster",
        "--config",
        s(&cfg),
        "--features",
        s(&dir.join("feats.txt")),
        "--meta",
        s(&dir.join("meta.jsonl")),
        "--out",
        s(&out),
    ])
    .unwrap();
    let labels = fs::read_to_string(out.join("labels.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    (json(&out.join("cluster_report.json")), labels)
}

#[test]
fn unconstrained_bundles_give_two_clusters() {
    let dir = tempfile::tempdir().unwrap();
    bundle_inputs(dir.path());
    let (report, labels) = cluster_with(dir.path(), 0.0, "plain");
    assert_eq!(report["k"], 2);
    assert!(labels[..8].iter().all(|l| *l == labels[0]));
    assert!(labels[8..].iter().all(|l| *l == labels[8]));
}

#[test]
fn scene_constraints_split_a_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let (feats, metas) = bundle_inputs(dir.path());
    let (report, labels) = cluster_with(dir.path(), 0.5, "constrained");
    assert!(report["k"].as_u64().unwrap() >= 3, "{report}");
    // Scenes s1 and s2 never share a cluster.
    for i in 0..4 {
        for j in 4..8 {
            assert_ne!(labels[i], labels[j]);
        }
    }
    // The reported code length is the map equation of the returned labels,
    // and beats the bundle-only and single-module partitions.
    let refined = refine(
        &distance_matrix(&feats).unwrap(),
        &build_constraints(&metas).unwrap(),
        0.5,
    )
    .unwrap();
    let graph = WeightedGraph::mutual_knn(&refined, 5).unwrap();
    let n = feats.len();
    let mut w = DMatrix::zeros(n, n);
    for a in 0..n {
        for &(b, wt) in graph.neighbors(a) {
            w[(a, b)] = wt;
        }
    }
    let g = support::google_matrix(&w, 0.15);
    let p = support::stationary(&g);
    let got = support::map_equation_dense(&g, &p, &labels);
    assert!((got - report["codelength_bits"].as_f64().unwrap()).abs() < 1e-9);
    let bundles: Vec<usize> = (0..n).map(|i| usize::from(i >= 8)).collect();
    assert!(got < support::map_equation_dense(&g, &p, &bundles));
    assert!(got < support::map_equation_dense(&g, &p, &vec![0; n]));
}

#[test]
fn single_image_is_one_cluster_with_zero_loss() {
    let dir = tempfile::tempdir().unwrap();
    let f = FeatureRecord::new("only", vec![0.3, 0.4]).unwrap();
    write_features_text(&dir.path().join("feats.txt"), &[f]).unwrap();
    fs::write(
        dir.path().join("meta.jsonl"),
        "{\"image_id\":\"only\",\"scene\":\"s\",\"episode\":\"e\",\"difficulty\":\"easy\",\"position_tag\":\"p\",\"object_count\":3}\n",
    )
    .unwrap();
    let (report, labels) = cluster_with(dir.path(), 0.25, "one");
    assert_eq!(report["k"], 1);
    assert_eq!(labels, vec![0]);
    assert_eq!(report["loss_c"], 0.0);
}

#[test]
fn cluster_reports_pair_loss_when_given_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    bundle_inputs(dir.path());
    fs::write(dir.path().join("probs.csv"), "image_a,image_b,prob\ni0,i1,0.9\ni0,i9,0.2\nzz,i1,0.5\n").unwrap();
    let out = dir.path().join("out");
    run(&[
        "cluster",
        "--features",
        s(&dir.path().join("feats.txt")),
        "--meta",
        s(&dir.path().join("meta.jsonl")),
        "--probs",
        s(&dir.path().join("probs.csv")),
        "--out",
        s(&out),
    ])
    .unwrap();
    let r = json(&out.join("cluster_report.json"));
    assert_eq!(r["pairs_used"], 2);
    let want = -(0.9f64.ln()) - (0.8f64.ln());
    assert!((r["loss_pred"].as_f64().unwrap() - want).abs() < 1e-12);
    let total = r["loss_c"].as_f64().unwrap() + want;
    assert!((r["loss_total"].as_f64().unwrap() - total).abs() < 1e-12);
}
