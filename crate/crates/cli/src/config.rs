//! Run configuration: a TOML file whose keys every command-line flag can
//! override. The resolved config is copied into each output directory.

use std::path::{Path, PathBuf};

use floc_core::evaluation::MetricConfig;
use floc_core::filter::FilterParams;
use floc_core::observation::{LikelihoodParams, SINGLE_FRAME_RAYS};
use floc_core::posespace::DEFAULT_O_BINS;
use floc_core::style::{DEFAULT_GAMMA, DEFAULT_LAMBDA, DEFAULT_TAU};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub floorplan: Option<PathBuf>,
    pub scans: Option<PathBuf>,
    pub motions: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    /// Same-room probabilities, CSV `image_a,image_b,prob`.
    pub pair_probs: Option<PathBuf>,
    /// Ground-truth trajectory CSV.
    pub truth: Option<PathBuf>,
    /// Predicted trajectory CSV (evaluate only).
    pub pred: Option<PathBuf>,
    /// JSON scene spec for `synth`; overrides `synth.scene`.
    pub scene: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub cell_size: f64,
    pub o_bins: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            cell_size: 0.1,
            o_bins: DEFAULT_O_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    pub sigma: f64,
    pub l: usize,
    pub fov_deg: f64,
    pub max_range: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        let p = LikelihoodParams::default();
        ObservationConfig {
            sigma: p.sigma,
            l: SINGLE_FRAME_RAYS,
            fov_deg: 108.0,
            max_range: p.max_range,
        }
    }
}

impl ObservationConfig {
    pub fn params(&self) -> LikelihoodParams {
        LikelihoodParams {
            sigma: self.sigma,
            l: self.l,
            fov: self.fov_deg.to_radians(),
            max_range: self.max_range,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub sigma_trans: f64,
    pub sigma_rot: f64,
    pub floor_prob: f64,
    /// Radius around a mode whose mass counts toward it, meters.
    pub mode_radius_m: f64,
    /// A step is flagged bimodal when the main mode holds at most this share
    /// of the two largest modes' mass.
    pub bimodal_share: f64,
    /// Write a PROBMAP and heatmap per step.
    pub dump_maps: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let p = FilterParams::default();
        FilterConfig {
            sigma_trans: p.sigma_trans,
            sigma_rot: p.sigma_rot,
            floor_prob: p.floor_prob,
            mode_radius_m: 1.0,
            bimodal_share: 0.7,
            dump_maps: false,
        }
    }
}

impl FilterConfig {
    pub fn params(&self) -> FilterParams {
        FilterParams {
            sigma_trans: self.sigma_trans,
            sigma_rot: self.sigma_rot,
            floor_prob: self.floor_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleConfig {
    pub lambda: f64,
    pub tau: f64,
    pub gamma: f64,
    pub knn: usize,
    pub teleport: f64,
    pub trials: usize,
    /// Images with fewer objects are dropped before clustering.
    pub min_objects: u32,
}

impl Default for StyleConfig {
    fn default() -> Self {
        StyleConfig {
            lambda: DEFAULT_LAMBDA,
            tau: DEFAULT_TAU,
            gamma: DEFAULT_GAMMA,
            knn: 10,
            teleport: 0.15,
            trials: 8,
            min_objects: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenePreset {
    TwoRooms,
    SingleRoom,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Fixed tour of the two-room scene.
    Tour,
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scene: ScenePreset,
    pub resolution: f64,
    /// Side length for `random`, width and height for `single_room`.
    pub extent_m: f64,
    pub trajectory: TrajectoryKind,
    pub steps: usize,
    pub step_m: f64,
    pub turn_deg: f64,
    pub clearance_m: f64,
    /// Standard deviation of additive depth noise, meters.
    pub depth_noise_m: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scene: ScenePreset::TwoRooms,
            resolution: 0.1,
            extent_m: 8.0,
            trajectory: TrajectoryKind::Tour,
            steps: 30,
            step_m: 0.5,
            turn_deg: 90.0,
            clearance_m: 0.3,
            depth_noise_m: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub out: Option<PathBuf>,
    pub paths: Paths,
    pub grid: GridConfig,
    pub observation: ObservationConfig,
    pub filter: FilterConfig,
    pub style: StyleConfig,
    pub metrics: MetricConfig,
    pub synth: SynthConfig,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(invalid(msg()))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| invalid(format!("config {}: {}", path.display(), e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or_else(|| invalid("no output directory (use --out)"))
    }

    /// Range checks on every numeric parameter.
    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.grid;
        check(g.cell_size > 0.0 && g.cell_size.is_finite(), || {
            format!("grid.cell_size must be positive, got {}", g.cell_size)
        })?;
        check(g.o_bins >= 1, || "grid.o_bins must be >= 1".into())?;
        self.observation.params().validate()?;
        check(self.observation.fov_deg <= 360.0, || "observation.fov_deg must be <= 360".into())?;
        let f = &self.filter;
        f.params().validate()?;
        check(f.mode_radius_m > 0.0, || "filter.mode_radius_m must be positive".into())?;
        check((0.5..=1.0).contains(&f.bimodal_share), || {
            "filter.bimodal_share must lie in [0.5, 1]".into()
        })?;
        let s = &self.style;
        check(s.lambda >= 0.0 && s.lambda.is_finite(), || format!("style.lambda must be >= 0, got {}", s.lambda))?;
        check(s.tau > 0.0, || format!("style.tau must be positive, got {}", s.tau))?;
        check(s.gamma >= 0.0, || format!("style.gamma must be >= 0, got {}", s.gamma))?;
        check(s.knn >= 1, || "style.knn must be >= 1".into())?;
        check(s.teleport > 0.0 && s.teleport < 1.0, || {
            format!("style.teleport must lie in (0, 1), got {}", s.teleport)
        })?;
        check(s.trials >= 1, || "style.trials must be >= 1".into())?;
        let m = &self.metrics;
        check(!m.thresholds_m.is_empty() && m.thresholds_m.iter().all(|t| *t > 0.0), || {
            "metrics.thresholds_m must be a non-empty list of positive values".into()
        })?;
        check(m.angle_bound_deg > 0.0 && m.angle_bound_deg <= 180.0, || {
            "metrics.angle_bound_deg must lie in (0, 180]".into()
        })?;
        check(m.angle_bound_at_m > 0.0 && m.success_m > 0.0, || {
            "metrics distances must be positive".into()
        })?;
        let y = &self.synth;
        check(y.resolution > 0.0, || "synth.resolution must be positive".into())?;
        check(y.extent_m > 0.0, || "synth.extent_m must be positive".into())?;
        check(y.steps >= 1, || "synth.steps must be >= 1".into())?;
        check(y.step_m > 0.0 && y.turn_deg > 0.0 && y.clearance_m >= 0.0, || {
            "synth step, turn and clearance must be positive".into()
        })?;
        check(y.depth_noise_m >= 0.0, || "synth.depth_noise_m must be >= 0".into())?;
        Ok(())
    }
}

/// Returns the path or a validation error naming the missing key; the file
/// must exist.
pub fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
    let p = path
        .clone()
        .ok_or_else(|| invalid(format!("missing input: {key}")))?;
    existing(&p, key)?;
    Ok(p)
}

pub fn existing(p: &Path, key: &str) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(invalid(format!("{key}: {} does not exist", p.display())))
    }
}
