//! Discretized pose-space probability maps.
//!
//! Values are stored row-major as `(row, col, bin)`: row `i` spans `y`,
//! column `j` spans `x`, and bin `k` is centered on heading `2πk/O`.

use std::f64::consts::TAU;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floorplan::{FloorplanGrid, Pose};

/// Default number of orientation bins.
pub const DEFAULT_O_BINS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseGridSpec {
    pub h_cells: usize,
    pub w_cells: usize,
    pub o_bins: usize,
    pub cell_size: f64,
    pub origin: (f64, f64),
}

impl PoseGridSpec {
    pub fn new(
        h_cells: usize,
        w_cells: usize,
        o_bins: usize,
        cell_size: f64,
        origin: (f64, f64),
    ) -> Result<Self> {
        let spec = PoseGridSpec {
            h_cells,
            w_cells,
            o_bins,
            cell_size,
            origin,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Pose grid covering a floorplan's extent at `cell_size`.
    pub fn covering(grid: &FloorplanGrid, cell_size: f64, o_bins: usize) -> Result<Self> {
        if !(cell_size > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cell_size must be positive, got {cell_size}"
            )));
        }
        let cells = |n: usize| {
            let extent = n as f64 * grid.resolution() / cell_size;
            // Snap away representation noise before rounding up.
            let r = extent.round();
            if (extent - r).abs() < 1e-9 {
                r as usize
            } else {
                extent.ceil() as usize
            }
        };
        Self::new(
            cells(grid.height()),
            cells(grid.width()),
            o_bins,
            cell_size,
            grid.origin(),
        )
    }

    fn validate(&self) -> Result<()> {
        if self.h_cells == 0 || self.w_cells == 0 || self.o_bins == 0 {
            return Err(Error::InvalidArgument(format!(
                "pose grid counts must be >= 1, got {}x{}x{}",
                self.h_cells, self.w_cells, self.o_bins
            )));
        }
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "cell_size must be positive, got {}",
                self.cell_size
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.h_cells * self.w_cells * self.o_bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn positions(&self) -> usize {
        self.h_cells * self.w_cells
    }

    pub fn index(&self, row: usize, col: usize, bin: usize) -> usize {
        (row * self.w_cells + col) * self.o_bins + bin
    }

    /// Inverse of [`index`](Self::index).
    pub fn unindex(&self, idx: usize) -> (usize, usize, usize) {
        let bin = idx % self.o_bins;
        let pos = idx / self.o_bins;
        (pos / self.w_cells, pos % self.w_cells, bin)
    }

    pub fn bin_width(&self) -> f64 {
        TAU / self.o_bins as f64
    }

    pub fn bin_heading(&self, bin: usize) -> f64 {
        TAU * bin as f64 / self.o_bins as f64
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin.0 + (col as f64 + 0.5) * self.cell_size,
            self.origin.1 + (row as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn pose_at(&self, row: usize, col: usize, bin: usize) -> Pose {
        let (x, y) = self.cell_center(row, col);
        Pose::new(x, y, self.bin_heading(bin))
    }

    /// Pose-grid cell containing a world point.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.origin.0) / self.cell_size).floor();
        let r = ((y - self.origin.1) / self.cell_size).floor();
        if !(c >= 0.0 && r >= 0.0) || c >= self.w_cells as f64 || r >= self.h_cells as f64 {
            return None;
        }
        Some((r as usize, c as usize))
    }

    /// Nearest orientation bin to a heading.
    pub fn bin_of(&self, theta: f64) -> usize {
        let b = (crate::floorplan::normalize_angle(theta) / self.bin_width()).round() as usize;
        b % self.o_bins
    }

    pub fn same_shape(&self, other: &PoseGridSpec) -> bool {
        self.h_cells == other.h_cells && self.w_cells == other.w_cells && self.o_bins == other.o_bins
    }
}

/// Non-negative tensor over the pose grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    spec: PoseGridSpec,
    values: Vec<f64>,
    normalized: bool,
}

impl ProbMap {
    pub fn from_values(spec: PoseGridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(Error::LengthMismatch {
                expected: spec.len(),
                found: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "probability map entries must be finite and >= 0, found {v}"
            )));
        }
        Ok(ProbMap {
            spec,
            values,
            normalized: false,
        })
    }

    pub fn zeros(spec: PoseGridSpec) -> Self {
        ProbMap {
            spec,
            values: vec![0.0; spec.len()],
            normalized: false,
        }
    }

    pub fn uniform(spec: PoseGridSpec) -> Self {
        ProbMap {
            spec,
            values: vec![1.0 / spec.len() as f64; spec.len()],
            normalized: true,
        }
    }

    pub(crate) fn from_raw(spec: PoseGridSpec, values: Vec<f64>, normalized: bool) -> Self {
        debug_assert_eq!(values.len(), spec.len());
        ProbMap {
            spec,
            values,
            normalized,
        }
    }

    pub fn spec(&self) -> &PoseGridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn get(&self, row: usize, col: usize, bin: usize) -> f64 {
        self.values[self.spec.index(row, col, bin)]
    }

    /// Sum in index order; fixed order keeps results reproducible.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Scales entries to sum to one.
    pub fn normalize(&self) -> Result<ProbMap> {
        let sum = self.total();
        if !(sum > 0.0) {
            return Err(Error::AllZero);
        }
        Ok(ProbMap {
            spec: self.spec,
            values: self.values.iter().map(|v| v / sum).collect(),
            normalized: true,
        })
    }

    /// Index of the maximal entry; ties resolve to the lowest index.
    pub fn argmax_index(&self) -> Result<usize> {
        let mut best = 0;
        let mut best_val = self.values[0];
        for (i, &v) in self.values.iter().enumerate().skip(1) {
            if v > best_val {
                best = i;
                best_val = v;
            }
        }
        if best_val > 0.0 {
            Ok(best)
        } else {
            Err(Error::AllZero)
        }
    }

    /// Cell-center pose of the maximal entry.
    pub fn argmax_pose(&self) -> Result<Pose> {
        let (r, c, k) = self.spec.unindex(self.argmax_index()?);
        Ok(self.spec.pose_at(r, c, k))
    }

    /// Nearest-neighbor spatial upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> Result<ProbMap> {
        if factor == 0 {
            return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let src = &self.spec;
        let spec = PoseGridSpec {
            h_cells: src.h_cells * factor,
            w_cells: src.w_cells * factor,
            o_bins: src.o_bins,
            cell_size: src.cell_size / factor as f64,
            origin: src.origin,
        };
        let o = src.o_bins;
        let mut values = Vec::with_capacity(spec.len());
        for r in 0..spec.h_cells {
            for c in 0..spec.w_cells {
                let base = src.index(r / factor, c / factor, 0);
                values.extend_from_slice(&self.values[base..base + o]);
            }
        }
        let out = ProbMap {
            spec,
            values,
            normalized: false,
        };
        if self.normalized {
            out.normalize()
        } else {
            Ok(out)
        }
    }

    /// Per-position maximum over orientation bins, row-major `h x w`.
    pub fn max_over_bins(&self) -> Vec<f64> {
        self.values
            .chunks(self.spec.o_bins)
            .map(|c| c.iter().copied().fold(0.0, f64::max))
            .collect()
    }

    /// Per-position sum over orientation bins, row-major `h x w`.
    pub fn sum_over_bins(&self) -> Vec<f64> {
        self.values
            .chunks(self.spec.o_bins)
            .map(|c| c.iter().sum())
            .collect()
    }

    /// `PROBMAP v1` header line followed by little-endian f64 payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.spec;
        let mut out = format!(
            "PROBMAP v1 {} {} {} {} {} {}\n",
            s.h_cells, s.w_cells, s.o_bins, s.cell_size, s.origin.0, s.origin.1
        )
        .into_bytes();
        out.reserve(self.values.len() * 8);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ProbMap> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse("byte 0", "missing PROBMAP header line"))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::parse("byte 0", "header is not UTF-8"))?;
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 8 || f[0] != "PROBMAP" || f[1] != "v1" {
            return Err(Error::parse(
                "byte 0",
                "expected `PROBMAP v1 <H> <W> <O> <cell_size> <origin_x> <origin_y>`",
            ));
        }
        let bad = |what: &str| Error::parse("byte 0", format!("bad {what} in header"));
        let h: usize = f[2].parse().map_err(|_| bad("H"))?;
        let w: usize = f[3].parse().map_err(|_| bad("W"))?;
        let o: usize = f[4].parse().map_err(|_| bad("O"))?;
        let cell: f64 = f[5].parse().map_err(|_| bad("cell_size"))?;
        let ox: f64 = f[6].parse().map_err(|_| bad("origin_x"))?;
        let oy: f64 = f[7].parse().map_err(|_| bad("origin_y"))?;
        let spec = PoseGridSpec::new(h, w, o, cell, (ox, oy))
            .map_err(|e| Error::parse("byte 0", e.to_string()))?;
        let payload = &bytes[nl + 1..];
        if payload.len() != spec.len() * 8 {
            return Err(Error::parse(
                format!("byte {}", nl + 1),
                format!(
                    "payload holds {} bytes, expected {}",
                    payload.len(),
                    spec.len() * 8
                ),
            ));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        ProbMap::from_values(spec, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ProbMap> {
        ProbMap::from_bytes(&fs::read(path)?)
    }

    /// 8-bit grayscale heatmap of the per-cell orientation maximum, scaled
    /// linearly from `[0, max]`. Row 0 of the map is the first image row.
    pub fn heatmap_pgm(&self) -> Vec<u8> {
        let (pixels, w, h) = self.heat_pixels();
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        out.extend(pixels);
        out
    }

    /// Color heatmap (black, red, yellow, white ramp) of the same projection.
    pub fn heatmap_ppm(&self) -> Vec<u8> {
        let (pixels, w, h) = self.heat_pixels();
        let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
        for p in pixels {
            let t = p as u32 * 3;
            let r = t.min(255) as u8;
            let g = t.saturating_sub(255).min(255) as u8;
            let b = t.saturating_sub(510).min(255) as u8;
            out.extend([r, g, b]);
        }
        out
    }

    fn heat_pixels(&self) -> (Vec<u8>, usize, usize) {
        let proj = self.max_over_bins();
        let max = proj.iter().copied().fold(0.0, f64::max);
        let pixels = proj
            .iter()
            .map(|&v| {
                if max > 0.0 {
                    (v / max * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
            .collect();
        (pixels, self.spec.w_cells, self.spec.h_cells)
    }
}
