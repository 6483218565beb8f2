//! Subcommand implementations. Each writes into the configured output
//! directory, starting with a copy of the resolved config.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use floc_core::evaluation::{self, pair_by_step, read_trajectory, write_trajectory, TrajectoryPoint};
use floc_core::filter::{read_motions, write_motions, MotionRecord, MotionStep, TrackParams, Tracker};
use floc_core::floorplan::{
    load_floorplan, random_walk, save_floorplan, save_pgm, synth_floorplan, two_rooms_tour, GridFormat, SceneSpec,
};
use floc_core::observation::{read_scans, write_scans, RayTable, ScanRecord};
use floc_core::style::{
    build_constraints, distance_matrix, filter_blank, infomap_cluster, read_features, read_features_binary,
    read_metas, read_pair_probs, refine, style_pair_loss, total_loss, write_labels, ClusterModel, FeatureRecord,
    InfomapOptions,
};
use floc_core::{DepthRayScan, Pose, PoseGridSpec, ProbMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::config::{existing, require, RunConfig, ScenePreset, TrajectoryKind};
use crate::error::CliError;
use crate::Command;

pub const CONFIG_FILE: &str = "config.toml";

/// Runs one command inside a pool sized by `cfg.threads`.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    pool.install(|| match command {
        Command::Localize => localize(cfg),
        Command::Track => track(cfg),
        Command::Cluster => cluster(cfg),
        Command::Evaluate => evaluate(cfg),
        Command::Synth => synth(cfg),
    })
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn prepare_out(cfg: &RunConfig) -> Result<&Path, CliError> {
    let out = cfg.out_dir()?;
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml())?;
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Scans checked against the configured ray count, field of view and range.
fn load_scans(cfg: &RunConfig) -> Result<Vec<(u64, DepthRayScan)>, CliError> {
    let path = require(&cfg.paths.scans, "scans")?;
    let records = read_scans(&path)?;
    if records.is_empty() {
        return Err(invalid(format!("{}: no scans", path.display())));
    }
    let o = &cfg.observation;
    records
        .iter()
        .map(|r| {
            if r.l != o.l {
                return Err(invalid(format!(
                    "scan frame {} has l = {}, config expects {}",
                    r.frame_id, r.l, o.l
                )));
            }
            if (r.fov_deg - o.fov_deg).abs() > 1e-6 || (r.max_range_m - o.max_range).abs() > 1e-9 {
                return Err(invalid(format!(
                    "scan frame {} has fov {} deg / range {} m, config expects {} / {}",
                    r.frame_id, r.fov_deg, r.max_range_m, o.fov_deg, o.max_range
                )));
            }
            Ok((r.frame_id, r.to_scan()?))
        })
        .collect()
}

fn save_map(map: &ProbMap, dir: &Path, stem: &str) -> Result<(), CliError> {
    map.save(&dir.join(format!("{stem}.probmap")))?;
    fs::write(dir.join(format!("{stem}.pgm")), map.heatmap_pgm())?;
    Ok(())
}

#[derive(Serialize)]
struct PoseRecord {
    frame_id: u64,
    x_m: f64,
    y_m: f64,
    theta_rad: f64,
    prob: f64,
}

fn localize(cfg: &RunConfig) -> Result<(), CliError> {
    let grid = load_floorplan(&require(&cfg.paths.floorplan, "floorplan")?)?;
    let scans = load_scans(cfg)?;
    let mut seen = HashSet::new();
    if let Some((id, _)) = scans.iter().find(|(id, _)| !seen.insert(*id)) {
        return Err(invalid(format!("duplicate scan frame_id {id}")));
    }
    let out = prepare_out(cfg)?;
    let spec = PoseGridSpec::covering(&grid, cfg.grid.cell_size, cfg.grid.o_bins)?;
    let params = cfg.observation.params();
    let table = RayTable::build(&grid, &spec, &params);
    let mut poses = Vec::with_capacity(scans.len());
    for (id, scan) in &scans {
        let map = table.likelihood(scan, params.sigma)?;
        let best = map.argmax_index()?;
        let pose = map.argmax_pose()?;
        save_map(&map, out, &format!("frame_{id:04}"))?;
        poses.push(PoseRecord {
            frame_id: *id,
            x_m: pose.x,
            y_m: pose.y,
            theta_rad: pose.theta,
            prob: map.values()[best],
        });
    }
    write_json(&out.join("poses.json"), &poses)
}

/// Masses of the two largest posterior modes. The first mode is the disc of
/// `radius` around the most probable cell (orientation marginalized); the
/// second is the disc around the most probable cell outside it, excluding
/// the first disc.
pub fn mode_masses(map: &ProbMap, radius: f64) -> (f64, f64) {
    let spec = map.spec();
    let marginal = map.sum_over_bins();
    let center = |i: usize| spec.cell_center(i / spec.w_cells, i % spec.w_cells);
    let near = |i: usize, c: (f64, f64)| {
        let (x, y) = center(i);
        (x - c.0).hypot(y - c.1) <= radius + 1e-9
    };
    let argmax = |skip: &dyn Fn(usize) -> bool| {
        (0..marginal.len())
            .filter(|&i| !skip(i))
            .fold(None::<usize>, |b, i| match b {
                Some(j) if marginal[j] >= marginal[i] => Some(j),
                _ => Some(i),
            })
    };
    let Some(a) = argmax(&|_| false) else { return (0.0, 0.0) };
    let ca = center(a);
    let m1: f64 = (0..marginal.len()).filter(|&i| near(i, ca)).map(|i| marginal[i]).sum();
    let m2 = match argmax(&|i| near(i, ca)) {
        Some(b) => {
            let cb = center(b);
            (0..marginal.len())
                .filter(|&i| near(i, cb) && !near(i, ca))
                .map(|i| marginal[i])
                .sum()
        }
        None => 0.0,
    };
    (m1, m2)
}

#[derive(Serialize)]
struct StepRecord {
    step: usize,
    frame_id: u64,
    x_m: f64,
    y_m: f64,
    theta_rad: f64,
    mode_mass: [f64; 2],
    mode_share: f64,
    bimodal: bool,
}

fn track(cfg: &RunConfig) -> Result<(), CliError> {
    let grid = load_floorplan(&require(&cfg.paths.floorplan, "floorplan")?)?;
    let scans = load_scans(cfg)?;
    let motions = read_motions(&require(&cfg.paths.motions, "motions")?)?;
    if motions.len() + 1 != scans.len() {
        return Err(invalid(format!(
            "{} scans need {} motions, found {}",
            scans.len(),
            scans.len() - 1,
            motions.len()
        )));
    }
    if let Some((i, m)) = motions.iter().enumerate().find(|(i, m)| m.step != *i) {
        return Err(invalid(format!("motion record {i} has step {}, expected {i}", m.step)));
    }
    let truth = match &cfg.paths.truth {
        Some(p) => {
            existing(p, "truth")?;
            Some(read_trajectory(p)?)
        }
        None => None,
    };
    let out = prepare_out(cfg)?;
    let maps_dir = out.join("maps");
    if cfg.filter.dump_maps {
        fs::create_dir_all(&maps_dir)?;
    }
    let spec = PoseGridSpec::covering(&grid, cfg.grid.cell_size, cfg.grid.o_bins)?;
    let fp = cfg.filter.params();
    let mut tracker = Tracker::new(
        &grid,
        spec,
        TrackParams {
            likelihood: cfg.observation.params(),
            filter: fp,
        },
    )?;
    let mut trajectory = Vec::with_capacity(scans.len());
    let mut lines = String::new();
    for (t, (id, scan)) in scans.iter().enumerate() {
        let motion = (t > 0).then(|| {
            let m = &motions[t - 1];
            MotionStep::new(m.dx_m, m.dy_m, m.dtheta_rad, &fp)
        });
        let s = tracker.step(scan, motion.as_ref())?;
        let (m1, m2) = mode_masses(&s.posterior, cfg.filter.mode_radius_m);
        let share = if m1 + m2 > 0.0 { m1 / (m1 + m2) } else { 1.0 };
        let rec = StepRecord {
            step: t,
            frame_id: *id,
            x_m: s.pose.x,
            y_m: s.pose.y,
            theta_rad: s.pose.theta,
            mode_mass: [m1, m2],
            mode_share: share,
            bimodal: share <= cfg.filter.bimodal_share,
        };
        lines.push_str(&serde_json::to_string(&rec).map_err(|e| CliError::Runtime(e.to_string()))?);
        lines.push('\n');
        if cfg.filter.dump_maps {
            save_map(&s.posterior, &maps_dir, &format!("step_{t:04}"))?;
        }
        trajectory.push(TrajectoryPoint { step: t, pose: s.pose });
    }
    write_trajectory(&out.join("trajectory.csv"), &trajectory)?;
    fs::write(out.join("steps.jsonl"), lines)?;
    if let Some(truth) = truth {
        let pairs = pair_by_step(&trajectory, &truth)?;
        write_report(out, "track", cfg, vec![pairs])?;
    }
    Ok(())
}

fn write_report(
    out: &Path,
    name: &str,
    cfg: &RunConfig,
    sequences: Vec<Vec<evaluation::PosePair>>,
) -> Result<(), CliError> {
    let run = evaluation::Run {
        name: name.to_string(),
        config: cfg.metrics.clone(),
        sequences,
    };
    let report = evaluation::report(&[run])?;
    fs::write(out.join("report.json"), report.to_json())?;
    fs::write(out.join("report.txt"), report.to_table())?;
    Ok(())
}

fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let pred_path = require(&cfg.paths.pred, "pred")?;
    let pred = read_trajectory(&pred_path)?;
    let truth = read_trajectory(&require(&cfg.paths.truth, "truth")?)?;
    let pairs = pair_by_step(&pred, &truth)?;
    let out = prepare_out(cfg)?;
    let name = pred_path
        .file_stem()
        .map_or_else(|| "pred".to_string(), |s| s.to_string_lossy().into_owned());
    write_report(out, &name, cfg, vec![pairs])
}

#[derive(Serialize)]
struct ClusterReport {
    images: usize,
    dropped_blank: usize,
    k: usize,
    sizes: Vec<usize>,
    codelength_bits: f64,
    loss_c: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss_pred: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pairs_used: Option<usize>,
}

fn cluster(cfg: &RunConfig) -> Result<(), CliError> {
    let metas = read_metas(&require(&cfg.paths.metadata, "metadata")?)?;
    let feat_path = require(&cfg.paths.features, "features")?;
    let features = if feat_path.extension().is_some_and(|e| e == "bin") {
        read_features_binary(&feat_path)?
    } else {
        read_features(&feat_path)?
    };
    let mut by_id: HashMap<&str, &FeatureRecord> = HashMap::with_capacity(features.len());
    for f in &features {
        if by_id.insert(f.image_id(), f).is_some() {
            return Err(invalid(format!("duplicate feature id {:?}", f.image_id())));
        }
    }
    let s = &cfg.style;
    let total = metas.len();
    let kept: HashSet<String> = filter_blank(&metas, s.min_objects).into_iter().collect();
    let metas: Vec<_> = metas.into_iter().filter(|m| kept.contains(&m.image_id)).collect();
    if metas.is_empty() {
        return Err(invalid(format!("no image has at least {} objects", s.min_objects)));
    }
    let feats = metas
        .iter()
        .map(|m| {
            by_id
                .get(m.image_id.as_str())
                .map(|f| (*f).clone())
                .ok_or_else(|| invalid(format!("no feature for image {:?}", m.image_id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let probs = match &cfg.paths.pair_probs {
        Some(p) => {
            existing(p, "pair_probs")?;
            Some(read_pair_probs(p)?)
        }
        None => None,
    };
    let out = prepare_out(cfg)?;

    let d = distance_matrix(&feats)?;
    let m = build_constraints(&metas)?;
    let refined = refine(&d, &m, s.lambda)?;
    let clustering = infomap_cluster(
        &refined,
        &InfomapOptions {
            knn: s.knn,
            teleport: s.teleport,
            seed: cfg.seed,
            trials: s.trials,
        },
    )?;
    let model = ClusterModel::new(&feats, clustering.labels.clone(), s.tau, s.lambda, s.gamma)?;
    let loss_c = model.mean_contrastive_loss(&feats)?;
    let mut sizes = vec![0; model.k()];
    for &l in &model.labels {
        sizes[l] += 1;
    }

    let (loss_pred, pairs_used) = match probs {
        Some(pairs) => {
            let index: HashMap<&str, usize> = metas
                .iter()
                .enumerate()
                .map(|(i, m)| (m.image_id.as_str(), i))
                .collect();
            let (p, y): (Vec<f64>, Vec<bool>) = pairs
                .iter()
                .filter_map(|pp| {
                    let (a, b) = (index.get(pp.a.as_str())?, index.get(pp.b.as_str())?);
                    Some((pp.prob, model.labels[*a] == model.labels[*b]))
                })
                .unzip();
            (Some(style_pair_loss(&p, &y)?.loss), Some(p.len()))
        }
        None => (None, None),
    };
    let ids: Vec<&str> = metas.iter().map(|m| m.image_id.as_str()).collect();
    write_labels(&out.join("labels.csv"), &ids, &model.labels)?;
    write_json(
        &out.join("cluster_report.json"),
        &ClusterReport {
            images: feats.len(),
            dropped_blank: total - feats.len(),
            k: model.k(),
            sizes,
            codelength_bits: clustering.codelength,
            loss_c,
            loss_pred,
            loss_total: loss_pred.map(|lp| total_loss(loss_c, lp, s.gamma)),
            pairs_used,
        },
    )
}

fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let y = &cfg.synth;
    let (scene, is_two_rooms) = match &cfg.paths.scene {
        Some(p) => {
            existing(p, "scene")?;
            let text = fs::read_to_string(p)?;
            let spec: SceneSpec = serde_json::from_str(&text)
                .map_err(|e| invalid(format!("scene {}: {e}", p.display())))?;
            (spec, false)
        }
        None => match y.scene {
            ScenePreset::TwoRooms => (SceneSpec::two_rooms(y.resolution), true),
            ScenePreset::SingleRoom => (SceneSpec::single_room(y.extent_m, y.extent_m, y.resolution), false),
            ScenePreset::Random => (SceneSpec::random(cfg.seed, y.extent_m, y.resolution), false),
        },
    };
    let grid = synth_floorplan(&scene)?;
    let poses: Vec<Pose> = match y.trajectory {
        TrajectoryKind::Tour if is_two_rooms => two_rooms_tour(),
        TrajectoryKind::Tour => return Err(invalid("the tour trajectory needs the two_rooms scene")),
        TrajectoryKind::RandomWalk => random_walk(
            &grid,
            cfg.seed,
            y.steps,
            y.step_m,
            y.turn_deg.to_radians(),
            y.clearance_m,
        )?,
    };
    let o = cfg.observation.params();
    let noise = Normal::new(0.0, y.depth_noise_m).map_err(|e| invalid(format!("depth noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut scans = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let mut scan = grid.gt_scan(pose, o.l, o.fov, o.max_range)?;
        if y.depth_noise_m > 0.0 {
            for d in &mut scan.depths {
                *d = (*d + noise.sample(&mut rng)).clamp(0.0, o.max_range);
            }
        }
        scans.push(ScanRecord::from_scan(i as u64, &scan));
    }
    let fp = cfg.filter.params();
    let motions: Vec<MotionRecord> = poses
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let m = MotionStep::between(&w[0], &w[1], &fp);
            MotionRecord {
                step: i,
                dx_m: m.dx,
                dy_m: m.dy,
                dtheta_rad: m.dtheta,
            }
        })
        .collect();
    let truth: Vec<TrajectoryPoint> = poses
        .iter()
        .enumerate()
        .map(|(step, pose)| TrajectoryPoint { step, pose: *pose })
        .collect();

    let out = prepare_out(cfg)?;
    save_floorplan(&grid, &out.join("floorplan.txt"), GridFormat::Text)?;
    save_pgm(&grid, &out.join("floorplan.pgm"))?;
    write_json(&out.join("scene.json"), &scene)?;
    write_scans(&out.join("scans.jsonl"), &scans)?;
    write_motions(&out.join("motions.jsonl"), &motions)?;
    write_trajectory(&out.join("truth.csv"), &truth)?;
    Ok(())
}
