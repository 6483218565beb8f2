//! Histogram Bayes filter over the pose grid.
//!
//! Prediction shifts each orientation slice by the body-frame displacement
//! rotated into that slice's heading (bilinear mass splitting), rotates the
//! headings by `dtheta` (linear splitting between bins), then blurs with a
//! separable Gaussian truncated at 3 sigma. Mass that lands off the map or on
//! an occupied cell is handed back to free cells in proportion to what they
//! already hold. The measurement update multiplies by a likelihood map with a
//! small floor on the prior.

use std::f64::consts::TAU;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floorplan::{DepthRayScan, FloorplanGrid, Pose};
use crate::observation::{read_jsonl, write_jsonl, LikelihoodParams, RayTable};
use crate::posespace::{PoseGridSpec, ProbMap};

pub const DEFAULT_FLOOR_PROB: f64 = 1e-9;

/// Shifts closer than this to an integer are treated as exact cell moves.
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub sigma_trans: f64,
    pub sigma_rot: f64,
    pub floor_prob: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            sigma_trans: 0.05,
            sigma_rot: 0.05,
            floor_prob: DEFAULT_FLOOR_PROB,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_trans >= 0.0 && self.sigma_rot >= 0.0) {
            return Err(Error::InvalidArgument("motion sigmas must be >= 0".into()));
        }
        if !(self.floor_prob > 0.0 && self.floor_prob <= 1e-3) {
            return Err(Error::InvalidArgument(format!(
                "floor_prob must lie in (0, 1e-3], got {}",
                self.floor_prob
            )));
        }
        Ok(())
    }
}

/// Body-frame odometry with Gaussian process noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionStep {
    /// Forward displacement, meters.
    pub dx: f64,
    /// Leftward displacement, meters.
    pub dy: f64,
    pub dtheta: f64,
    pub sigma_trans: f64,
    pub sigma_rot: f64,
}

impl MotionStep {
    pub fn new(dx: f64, dy: f64, dtheta: f64, params: &FilterParams) -> Self {
        MotionStep {
            dx,
            dy,
            dtheta,
            sigma_trans: params.sigma_trans,
            sigma_rot: params.sigma_rot,
        }
    }

    /// Body-frame motion taking `from` to `to` (translate, then rotate).
    pub fn between(from: &Pose, to: &Pose, params: &FilterParams) -> Self {
        let (s, c) = from.theta.sin_cos();
        let (wx, wy) = (to.x - from.x, to.y - from.y);
        let dtheta = crate::floorplan::normalize_angle(to.theta - from.theta);
        let dtheta = if dtheta > std::f64::consts::PI { dtheta - TAU } else { dtheta };
        MotionStep::new(c * wx + s * wy, -s * wx + c * wy, dtheta, params)
    }
}

/// One line of a motion JSON-lines file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionRecord {
    pub step: usize,
    pub dx_m: f64,
    pub dy_m: f64,
    pub dtheta_rad: f64,
}

pub fn read_motions(path: &Path) -> Result<Vec<MotionRecord>> {
    read_jsonl(path)
}

pub fn write_motions(path: &Path, records: &[MotionRecord]) -> Result<()> {
    write_jsonl(path, records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub posterior: ProbMap,
    pub step_index: usize,
    pub floor_prob: f64,
}

/// Discrete Gaussian on integer offsets `-r..=r`, `r = ceil(3 sigma)`,
/// normalized to sum one. Zero sigma gives the identity kernel.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if !(sigma > 0.0) {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

fn snap(s: f64) -> f64 {
    let r = s.round();
    if (s - r).abs() < SNAP {
        r
    } else {
        s
    }
}

/// Histogram filter bound to one pose grid and its free-space mask.
#[derive(Debug, Clone)]
pub struct HistogramFilter {
    spec: PoseGridSpec,
    /// Per pose-grid position (`h x w`): true if the cell center is free.
    free: Vec<bool>,
}

impl HistogramFilter {
    pub fn new(spec: PoseGridSpec, free: Vec<bool>) -> Result<Self> {
        if free.len() != spec.positions() {
            return Err(Error::LengthMismatch {
                expected: spec.positions(),
                found: free.len(),
            });
        }
        if !free.iter().any(|&f| f) {
            return Err(Error::AllZero);
        }
        Ok(HistogramFilter { spec, free })
    }

    pub fn from_grid(grid: &FloorplanGrid, spec: PoseGridSpec) -> Result<Self> {
        let free = (0..spec.h_cells)
            .flat_map(|r| (0..spec.w_cells).map(move |c| (r, c)))
            .map(|(r, c)| {
                let (x, y) = spec.cell_center(r, c);
                grid.is_free_at(x, y)
            })
            .collect();
        Self::new(spec, free)
    }

    pub fn spec(&self) -> &PoseGridSpec {
        &self.spec
    }

    pub fn free_mask(&self) -> &[bool] {
        &self.free
    }

    /// Uniform posterior over free poses.
    pub fn initial_state(&self, floor_prob: f64) -> TrackState {
        let o = self.spec.o_bins;
        let n_free = self.free.iter().filter(|&&f| f).count() * o;
        let p = 1.0 / n_free as f64;
        let values = self
            .free
            .iter()
            .flat_map(|&f| std::iter::repeat_n(if f { p } else { 0.0 }, o))
            .collect();
        TrackState {
            posterior: ProbMap::from_raw(self.spec, values, true),
            step_index: 0,
            floor_prob,
        }
    }

    /// Applies the motion kernel without any masking. Mass pushed past the
    /// map edge is dropped, so `sum(out) <= sum(values)` with equality when
    /// everything stays on the map.
    pub fn propagate(&self, values: &[f64], motion: &MotionStep) -> Vec<f64> {
        let PoseGridSpec {
            h_cells: h,
            w_cells: w,
            o_bins: o,
            cell_size,
            ..
        } = self.spec;
        let plane = h * w;

        // Spatial shift of each source-heading slice.
        let shifted: Vec<Vec<f64>> = (0..o)
            .into_par_iter()
            .map(|k| {
                let (s, c) = self.spec.bin_heading(k).sin_cos();
                let sx = snap((motion.dx * c - motion.dy * s) / cell_size);
                let sy = snap((motion.dx * s + motion.dy * c) / cell_size);
                let mut out = vec![0.0; plane];
                shift_plane(values, k, o, h, w, sx, sy, &mut out);
                out
            })
            .collect();

        // Heading shift, accumulated in source-bin order.
        let so = snap(motion.dtheta / self.spec.bin_width());
        let (io, fo) = (so.floor(), so - so.floor());
        let mut rotated = vec![vec![0.0; plane]; o];
        for (k, slice) in shifted.iter().enumerate() {
            let k0 = (k as i64 + io as i64).rem_euclid(o as i64) as usize;
            for (dst, weight) in [(k0, 1.0 - fo), ((k0 + 1) % o, fo)] {
                if weight == 0.0 {
                    continue;
                }
                for (d, v) in rotated[dst].iter_mut().zip(slice) {
                    *d += weight * v;
                }
            }
        }

        // Spatial blur per slice.
        let spatial = gaussian_kernel(motion.sigma_trans / cell_size);
        if spatial.len() > 1 {
            rotated
                .par_iter_mut()
                .for_each(|slice| blur_plane(slice, h, w, &spatial));
        }

        // Interleave back to (row, col, bin) and blur over headings.
        let angular = gaussian_kernel(motion.sigma_rot / self.spec.bin_width());
        let radius = (angular.len() / 2) as i64;
        let mut out = vec![0.0; plane * o];
        out.par_chunks_mut(o).enumerate().for_each(|(pos, cell)| {
            if angular.len() == 1 {
                for (k, v) in cell.iter_mut().enumerate() {
                    *v = rotated[k][pos];
                }
                return;
            }
            for (k, v) in cell.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (i, wgt) in angular.iter().enumerate() {
                    let src = (k as i64 - (i as i64 - radius)).rem_euclid(o as i64) as usize;
                    acc += wgt * rotated[src][pos];
                }
                *v = acc;
            }
        });
        out
    }

    /// Motion update. Output is normalized and zero on occupied poses.
    pub fn predict(&self, state: &TrackState, motion: &MotionStep) -> TrackState {
        let mut values = self.propagate(state.posterior.values(), motion);
        let o = self.spec.o_bins;
        for (cell, &free) in values.chunks_mut(o).zip(&self.free) {
            if !free {
                cell.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let free_mass: f64 = values.iter().sum();
        let posterior = if free_mass > 0.0 {
            values.iter_mut().for_each(|v| *v /= free_mass);
            ProbMap::from_raw(self.spec, values, true)
        } else {
            self.initial_state(state.floor_prob).posterior
        };
        TrackState {
            posterior,
            step_index: state.step_index,
            floor_prob: state.floor_prob,
        }
    }

    /// Measurement update: `max(prior, floor / n) * likelihood`, normalized.
    pub fn update(&self, state: &TrackState, likelihood: &ProbMap) -> Result<TrackState> {
        update_posterior(state, likelihood)
    }
}

/// Measurement update on its own; needs only matching dimensions.
pub fn update_posterior(state: &TrackState, likelihood: &ProbMap) -> Result<TrackState> {
    let spec = state.posterior.spec();
    if !spec.same_shape(likelihood.spec()) {
        return Err(Error::DimensionMismatch(format!(
            "posterior is {}x{}x{}, likelihood is {}x{}x{}",
            spec.h_cells,
            spec.w_cells,
            spec.o_bins,
            likelihood.spec().h_cells,
            likelihood.spec().w_cells,
            likelihood.spec().o_bins
        )));
    }
    let floor = state.floor_prob / spec.len() as f64;
    let mut values: Vec<f64> = state
        .posterior
        .values()
        .iter()
        .zip(likelihood.values())
        .map(|(p, l)| p.max(floor) * l)
        .collect();
    let sum: f64 = values.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::AllZero);
    }
    values.iter_mut().for_each(|v| *v /= sum);
    Ok(TrackState {
        posterior: ProbMap::from_raw(*spec, values, true),
        step_index: state.step_index,
        floor_prob: state.floor_prob,
    })
}

/// Moves bin `k` of the interleaved map by `(sx, sy)` cells into `out`.
#[allow(clippy::too_many_arguments)]
fn shift_plane(values: &[f64], k: usize, o: usize, h: usize, w: usize, sx: f64, sy: f64, out: &mut [f64]) {
    let (ix, fx) = (sx.floor() as i64, sx - sx.floor());
    let (iy, fy) = (sy.floor() as i64, sy - sy.floor());
    let taps = [
        (0i64, 0i64, (1.0 - fy) * (1.0 - fx)),
        (0, 1, (1.0 - fy) * fx),
        (1, 0, fy * (1.0 - fx)),
        (1, 1, fy * fx),
    ];
    for r in 0..h {
        for c in 0..w {
            let v = values[(r * w + c) * o + k];
            if v == 0.0 {
                continue;
            }
            for &(dr, dc, wgt) in &taps {
                if wgt == 0.0 {
                    continue;
                }
                let nr = r as i64 + iy + dr;
                let nc = c as i64 + ix + dc;
                if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                    continue;
                }
                out[nr as usize * w + nc as usize] += wgt * v;
            }
        }
    }
}

/// Separable truncated blur; mass pushed past the edge is dropped.
fn blur_plane(plane: &mut [f64], h: usize, w: usize, kernel: &[f64]) {
    let radius = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; plane.len()];
    for r in 0..h {
        for c in 0..w {
            let v = plane[r * w + c];
            if v == 0.0 {
                continue;
            }
            for (i, wgt) in kernel.iter().enumerate() {
                let nc = c as i64 + i as i64 - radius;
                if nc >= 0 && nc < w as i64 {
                    tmp[r * w + nc as usize] += wgt * v;
                }
            }
        }
    }
    plane.iter_mut().for_each(|v| *v = 0.0);
    for r in 0..h {
        for c in 0..w {
            let v = tmp[r * w + c];
            if v == 0.0 {
                continue;
            }
            for (i, wgt) in kernel.iter().enumerate() {
                let nr = r as i64 + i as i64 - radius;
                if nr >= 0 && nr < h as i64 {
                    plane[nr as usize * w + c] += wgt * v;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackParams {
    pub likelihood: LikelihoodParams,
    pub filter: FilterParams,
}

/// Posterior and point estimate after one measurement update.
#[derive(Debug, Clone)]
pub struct TrackStep {
    pub step: usize,
    pub pose: Pose,
    pub posterior: ProbMap,
}

/// Streaming tracker: call [`Tracker::step`] once per scan.
pub struct Tracker {
    table: RayTable,
    filter: HistogramFilter,
    params: TrackParams,
    state: Option<TrackState>,
}

impl Tracker {
    pub fn new(grid: &FloorplanGrid, spec: PoseGridSpec, params: TrackParams) -> Result<Self> {
        params.likelihood.validate()?;
        params.filter.validate()?;
        let table = RayTable::build(grid, &spec, &params.likelihood);
        let filter = HistogramFilter::new(spec, table.free_mask())?;
        Ok(Tracker {
            table,
            filter,
            params,
            state: None,
        })
    }

    pub fn filter(&self) -> &HistogramFilter {
        &self.filter
    }

    pub fn table(&self) -> &RayTable {
        &self.table
    }

    /// Predicts with `motion` (ignored on the first step), then updates with
    /// the scan's likelihood map.
    pub fn step(&mut self, scan: &DepthRayScan, motion: Option<&MotionStep>) -> Result<TrackStep> {
        let step = self.state.as_ref().map_or(0, |s| s.step_index + 1);
        let run = || -> Result<TrackStep> {
            let prior = match (&self.state, motion) {
                (None, _) => self.filter.initial_state(self.params.filter.floor_prob),
                (Some(s), Some(m)) => self.filter.predict(s, m),
                (Some(s), None) => s.clone(),
            };
            let likelihood = self.table.likelihood(scan, self.params.likelihood.sigma)?;
            let mut next = self.filter.update(&prior, &likelihood)?;
            next.step_index = step;
            let pose = next.posterior.argmax_pose()?;
            Ok(TrackStep {
                step,
                pose,
                posterior: next.posterior,
            })
        };
        let out = run().map_err(|e| e.at_step(step))?;
        self.state = Some(TrackState {
            posterior: out.posterior.clone(),
            step_index: step,
            floor_prob: self.params.filter.floor_prob,
        });
        Ok(out)
    }
}

/// Runs the filter over a scan sequence; `motions[t]` moves from scan `t` to
/// scan `t + 1`.
pub fn track(
    grid: &FloorplanGrid,
    scans: &[DepthRayScan],
    motions: &[MotionStep],
    spec: PoseGridSpec,
    params: TrackParams,
) -> Result<Vec<TrackStep>> {
    if scans.is_empty() {
        return Err(Error::EmptyInput);
    }
    if motions.len() + 1 != scans.len() {
        return Err(Error::LengthMismatch {
            expected: scans.len() - 1,
            found: motions.len(),
        });
    }
    let mut tracker = Tracker::new(grid, spec, params)?;
    scans
        .iter()
        .enumerate()
        .map(|(t, scan)| tracker.step(scan, if t == 0 { None } else { Some(&motions[t - 1]) }))
        .collect()
}
