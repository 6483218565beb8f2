//! Depth-ray observation model: per-pose likelihood maps, single/multi-frame
//! map fusion and the ray regression loss used to train ray predictors.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floorplan::{DepthRayScan, FloorplanGrid, DEFAULT_MAX_RANGE};
use crate::posespace::{PoseGridSpec, ProbMap};

/// Rays per single-frame scan.
pub const SINGLE_FRAME_RAYS: usize = 40;
/// Rays per multi-frame scan.
pub const MULTI_FRAME_RAYS: usize = 160;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodParams {
    /// Kernel scale on the mean absolute ray residual, meters.
    pub sigma: f64,
    pub l: usize,
    /// Horizontal field of view, radians.
    pub fov: f64,
    pub max_range: f64,
}

impl Default for LikelihoodParams {
    fn default() -> Self {
        LikelihoodParams {
            sigma: 0.1,
            l: SINGLE_FRAME_RAYS,
            fov: 108f64.to_radians(),
            max_range: DEFAULT_MAX_RANGE,
        }
    }
}

impl LikelihoodParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.l == 0 {
            return Err(Error::InvalidArgument("l must be >= 1".into()));
        }
        if !(self.fov > 0.0 && self.fov <= std::f64::consts::TAU) {
            return Err(Error::InvalidArgument(format!("bad fov {}", self.fov)));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "max_range must be positive, got {}",
                self.max_range
            )));
        }
        Ok(())
    }

    fn check_scan(&self, scan: &DepthRayScan) -> Result<()> {
        if scan.len() != self.l {
            return Err(Error::LengthMismatch {
                expected: self.l,
                found: scan.len(),
            });
        }
        if (scan.fov - self.fov).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "scan fov {} differs from configured {}",
                scan.fov, self.fov
            )));
        }
        Ok(())
    }
}

/// Precomputed ground-truth scans for every free pose of a pose grid.
///
/// Scoring a scan is then a pass of absolute differences; the table is built
/// once per (floorplan, pose grid, ray layout).
#[derive(Debug, Clone)]
pub struct RayTable {
    spec: PoseGridSpec,
    l: usize,
    fov: f64,
    max_range: f64,
    /// Per position: slot into `depths`, or `None` for occupied / off-map.
    slots: Vec<Option<u32>>,
    /// Per free position: `o_bins * l` depths, bin-major.
    depths: Vec<f64>,
}

impl RayTable {
    pub fn build(grid: &FloorplanGrid, spec: &PoseGridSpec, params: &LikelihoodParams) -> Self {
        let mut slots = Vec::with_capacity(spec.positions());
        let mut free_positions = Vec::new();
        for r in 0..spec.h_cells {
            for c in 0..spec.w_cells {
                let (x, y) = spec.cell_center(r, c);
                if grid.is_free_at(x, y) {
                    slots.push(Some(free_positions.len() as u32));
                    free_positions.push((r, c));
                } else {
                    slots.push(None);
                }
            }
        }
        let stride = spec.o_bins * params.l;
        let mut depths = vec![0.0; free_positions.len() * stride];
        depths
            .par_chunks_mut(stride.max(1))
            .zip(free_positions.par_iter())
            .for_each(|(chunk, &(r, c))| {
                for (k, rays) in chunk.chunks_mut(params.l).enumerate() {
                    let pose = spec.pose_at(r, c, k);
                    grid.scan_into(&pose, params.fov, params.max_range, rays);
                }
            });
        RayTable {
            spec: *spec,
            l: params.l,
            fov: params.fov,
            max_range: params.max_range,
            slots,
            depths,
        }
    }

    pub fn spec(&self) -> &PoseGridSpec {
        &self.spec
    }

    /// Pose-grid positions (`h x w`) whose center lies in free space.
    pub fn free_mask(&self) -> Vec<bool> {
        self.slots.iter().map(Option::is_some).collect()
    }

    pub fn free_positions(&self) -> usize {
        self.depths.len() / (self.spec.o_bins * self.l).max(1)
    }

    /// Stored rays for a pose, if the pose is free.
    pub fn rays(&self, row: usize, col: usize, bin: usize) -> Option<&[f64]> {
        let slot = self.slots[row * self.spec.w_cells + col]? as usize;
        let start = (slot * self.spec.o_bins + bin) * self.l;
        Some(&self.depths[start..start + self.l])
    }

    /// Likelihood map of a scan. Per-pose scores are computed in parallel;
    /// the normalizer is summed sequentially in index order, so the result
    /// does not depend on the thread count.
    pub fn likelihood(&self, scan: &DepthRayScan, sigma: f64) -> Result<ProbMap> {
        if scan.len() != self.l {
            return Err(Error::LengthMismatch {
                expected: self.l,
                found: scan.len(),
            });
        }
        if (scan.fov - self.fov).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "scan fov {} differs from table fov {}",
                scan.fov, self.fov
            )));
        }
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        let o = self.spec.o_bins;
        let scale = 1.0 / (sigma * self.l as f64);
        // Log-likelihoods first, shifted by their maximum before exp so
        // poorly matching scans do not underflow to an all-zero map.
        let mut values = vec![f64::NEG_INFINITY; self.spec.len()];
        values
            .par_chunks_mut(o)
            .zip(self.slots.par_iter())
            .for_each(|(cell, slot)| {
                let Some(slot) = slot else { return };
                let base = *slot as usize * o * self.l;
                for (k, v) in cell.iter_mut().enumerate() {
                    let rays = &self.depths[base + k * self.l..base + (k + 1) * self.l];
                    let residual: f64 = rays
                        .iter()
                        .zip(&scan.depths)
                        .map(|(a, b)| (a - b).abs())
                        .sum();
                    *v = -residual * scale;
                }
            });
        let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if peak == f64::NEG_INFINITY {
            return Err(Error::AllZero);
        }
        values.par_iter_mut().for_each(|v| *v = (*v - peak).exp());
        let sum: f64 = values.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::AllZero);
        }
        values.iter_mut().for_each(|v| *v /= sum);
        Ok(ProbMap::from_raw(self.spec, values, true))
    }

    pub fn max_range(&self) -> f64 {
        self.max_range
    }
}

/// Likelihood map `exp(-|scan - gt(S)|_1 / (sigma * l))` over the pose grid,
/// zero at occupied or off-map poses, normalized to sum one.
pub fn likelihood_map(
    grid: &FloorplanGrid,
    scan: &DepthRayScan,
    spec: &PoseGridSpec,
    params: &LikelihoodParams,
) -> Result<ProbMap> {
    params.validate()?;
    params.check_scan(scan)?;
    RayTable::build(grid, spec, params).likelihood(scan, params.sigma)
}

/// Mixing weight between the single- and multi-frame maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeight(f64);

impl FusionWeight {
    pub fn new(omega: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&omega) {
            Ok(FusionWeight(omega))
        } else {
            Err(Error::InvalidArgument(format!("omega must lie in [0, 1], got {omega}")))
        }
    }

    pub fn omega(self) -> f64 {
        self.0
    }
}

/// `omega * upsample(single) + (1 - omega) * multi`, normalized.
pub fn fuse_maps(single: &ProbMap, multi: &ProbMap, w: FusionWeight, factor: usize) -> Result<ProbMap> {
    let up = single.upsample(factor)?;
    let up_normalized = up.is_normalized();
    let (a, b) = (up.spec(), multi.spec());
    if !a.same_shape(b) || (a.cell_size - b.cell_size).abs() > 1e-9 * b.cell_size {
        return Err(Error::DimensionMismatch(format!(
            "upsampled single map is {}x{}x{} @ {}, multi map is {}x{}x{} @ {}",
            a.h_cells, a.w_cells, a.o_bins, a.cell_size, b.h_cells, b.w_cells, b.o_bins, b.cell_size
        )));
    }
    // The endpoints return an input unchanged rather than a re-normalized copy.
    let pick = |m: ProbMap| if m.is_normalized() { Ok(m) } else { m.normalize() };
    if w.omega() == 1.0 {
        return pick(ProbMap::from_raw(*b, up.into_values(), up_normalized));
    }
    if w.omega() == 0.0 {
        return pick(multi.clone());
    }
    let fused = fuse_unnormalized(up.values(), multi.values(), w.omega());
    ProbMap::from_raw(*b, fused, false).normalize()
}

/// Entrywise convex combination before normalization.
pub fn fuse_unnormalized(a: &[f64], b: &[f64], omega: f64) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| omega * x + (1.0 - omega) * y)
        .collect()
}

/// Value and gradient of the ray regression loss.
#[derive(Debug, Clone, PartialEq)]
pub struct FlocLoss {
    pub loss: f64,
    pub l1: f64,
    /// `1 - cos(pred, gt)`, with the norm product floored at epsilon.
    pub shape: f64,
    /// Gradient of `loss` with respect to the predicted depths.
    pub grad: Vec<f64>,
}

/// L1 distance plus a cosine shape term between predicted and true rays.
/// The L1 subgradient is taken as 0 where a prediction equals its target.
pub fn floc_loss(pred: &DepthRayScan, gt: &DepthRayScan, epsilon: f64) -> Result<FlocLoss> {
    floc_loss_slices(&pred.depths, &gt.depths, epsilon)
}

pub fn floc_loss_slices(d: &[f64], target: &[f64], epsilon: f64) -> Result<FlocLoss> {
    if d.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            found: d.len(),
        });
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let l1: f64 = d.iter().zip(target).map(|(a, b)| (a - b).abs()).sum();
    let dot: f64 = d.iter().zip(target).map(|(a, b)| a * b).sum();
    let nd = d.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nt = target.iter().map(|b| b * b).sum::<f64>().sqrt();
    let norm = nd * nt;
    let (cos, grad_cos): (f64, Vec<f64>) = if norm > epsilon {
        let cos = dot / norm;
        let g = d
            .iter()
            .zip(target)
            .map(|(a, b)| b / norm - cos * a / (nd * nd))
            .collect();
        (cos, g)
    } else {
        (dot / epsilon, target.iter().map(|b| b / epsilon).collect())
    };
    let grad = d
        .iter()
        .zip(target)
        .zip(&grad_cos)
        .map(|((a, b), gc)| {
            let s = if a > b {
                1.0
            } else if a < b {
                -1.0
            } else {
                0.0
            };
            s - gc
        })
        .collect();
    let shape = 1.0 - cos;
    Ok(FlocLoss {
        loss: l1 + shape,
        l1,
        shape,
        grad,
    })
}

/// One line of a scan JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub frame_id: u64,
    pub l: usize,
    pub fov_deg: f64,
    pub max_range_m: f64,
    pub depths: Vec<f64>,
}

impl ScanRecord {
    pub fn from_scan(frame_id: u64, scan: &DepthRayScan) -> Self {
        ScanRecord {
            frame_id,
            l: scan.len(),
            fov_deg: scan.fov.to_degrees(),
            max_range_m: scan.max_range,
            depths: scan.depths.clone(),
        }
    }

    pub fn to_scan(&self) -> Result<DepthRayScan> {
        if self.depths.len() != self.l {
            return Err(Error::LengthMismatch {
                expected: self.l,
                found: self.depths.len(),
            });
        }
        DepthRayScan::new(self.depths.clone(), self.fov_deg.to_radians(), self.max_range_m)
    }
}

pub fn read_scans(path: &Path) -> Result<Vec<ScanRecord>> {
    read_jsonl(path)
}

pub fn write_scans(path: &Path, records: &[ScanRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::parse(format!("{}:{}", path.display(), i + 1), e.to_string())
        })?);
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writeln!(file, "{line}")?;
    }
    file.flush()?;
    Ok(())
}
