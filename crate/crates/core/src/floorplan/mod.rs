//! Occupancy-grid floorplans and exact ray casting against them.
//!
//! World frame: `x` runs along columns, `y` along rows, `theta = 0` points
//! toward `+x` and angles grow counter-clockwise. Cell `(row, col)` covers
//! `[ox + col*res, ox + (col+1)*res) x [oy + row*res, oy + (row+1)*res)`.

mod io;
mod synth;

use std::collections::VecDeque;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_floorplan, load_pgm, save_floorplan, save_pgm, GridFormat};
pub use synth::{
    random_walk, synth_floorplan, two_rooms_tour, CorridorSpec, RectSpec, SceneSpec, TOUR_EXIT_STEP,
};

/// Default cap on ray length, meters.
pub const DEFAULT_MAX_RANGE: f64 = 10.0;

/// Planar camera pose. `theta` is kept in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Absolute angular difference wrapped into `[0, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = normalize_angle(a - b);
    if d > std::f64::consts::PI {
        TAU - d
    } else {
        d
    }
}

/// Binary occupancy grid with metric resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FloorplanGrid {
    height: usize,
    width: usize,
    resolution: f64,
    origin: (f64, f64),
    occupied: Vec<bool>,
}

impl FloorplanGrid {
    /// An all-free grid.
    pub fn new(height: usize, width: usize, resolution: f64, origin: (f64, f64)) -> Result<Self> {
        Self::from_cells(height, width, resolution, origin, vec![false; height * width])
    }

    /// Builds a grid from row-major occupancy flags (`true` = occupied).
    pub fn from_cells(
        height: usize,
        width: usize,
        resolution: f64,
        origin: (f64, f64),
        occupied: Vec<bool>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid must be at least 1x1, got {height}x{width}"
            )));
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if !origin.0.is_finite() || !origin.1.is_finite() {
            return Err(Error::InvalidArgument("origin must be finite".into()));
        }
        if occupied.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                found: occupied.len(),
            });
        }
        Ok(FloorplanGrid {
            height,
            width,
            resolution,
            origin,
            occupied,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn cells(&self) -> &[bool] {
        &self.occupied
    }

    /// Same cells at a different world offset.
    pub fn with_origin(&self, origin: (f64, f64)) -> Self {
        FloorplanGrid {
            origin,
            ..self.clone()
        }
    }

    pub fn is_occupied(&self, row: usize, col: usize) -> bool {
        self.occupied[row * self.width + col]
    }

    pub fn set_occupied(&mut self, row: usize, col: usize, occupied: bool) {
        self.occupied[row * self.width + col] = occupied;
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    pub fn free_count(&self) -> usize {
        self.occupied.len() - self.occupied_count()
    }

    /// Cell containing a world point; points on an edge go to the cell with
    /// index `floor(coord / res)`.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let cx = ((x - self.origin.0) / self.resolution).floor();
        let cy = ((y - self.origin.1) / self.resolution).floor();
        if !(cx >= 0.0 && cy >= 0.0) || cx >= self.width as f64 || cy >= self.height as f64 {
            return None;
        }
        Some((cy as usize, cx as usize))
    }

    /// World coordinates of a cell center.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin.0 + (col as f64 + 0.5) * self.resolution,
            self.origin.1 + (row as f64 + 0.5) * self.resolution,
        )
    }

    /// World coordinates of a cell's lower-left corner.
    pub fn cell_corner(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin.0 + col as f64 * self.resolution,
            self.origin.1 + row as f64 * self.resolution,
        )
    }

    /// True if the point falls in an in-bounds free cell.
    pub fn is_free_at(&self, x: f64, y: f64) -> bool {
        self.cell_of(x, y)
            .is_some_and(|(r, c)| !self.is_occupied(r, c))
    }

    /// Labels 4-connected components of free space. Occupied cells get `None`.
    pub fn free_components(&self) -> (Vec<Option<usize>>, usize) {
        let mut labels = vec![None; self.occupied.len()];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for start in 0..self.occupied.len() {
            if self.occupied[start] || labels[start].is_some() {
                continue;
            }
            labels[start] = Some(count);
            queue.push_back(start);
            while let Some(idx) = queue.pop_front() {
                let (r, c) = (idx / self.width, idx % self.width);
                let mut visit = |nr: usize, nc: usize| {
                    let n = nr * self.width + nc;
                    if !self.occupied[n] && labels[n].is_none() {
                        labels[n] = Some(count);
                        queue.push_back(n);
                    }
                };
                if r > 0 {
                    visit(r - 1, c);
                }
                if r + 1 < self.height {
                    visit(r + 1, c);
                }
                if c > 0 {
                    visit(r, c - 1);
                }
                if c + 1 < self.width {
                    visit(r, c + 1);
                }
            }
            count += 1;
        }
        (labels, count)
    }

    /// Distance from `origin` along `bearing` to the first occupied cell face.
    ///
    /// Walks the grid cell by cell (Amanatides-Woo), so the result is exact up
    /// to floating point. Leaving the grid counts as hitting a wall at the grid
    /// boundary. Returns `max_range` when nothing is hit within range.
    pub fn cast_ray(&self, origin: &Pose, bearing: f64, max_range: f64) -> Result<f64> {
        let (x, y) = (origin.x, origin.y);
        let (row, col) = self
            .cell_of(x, y)
            .ok_or(Error::OriginOutOfBounds { x, y })?;
        if self.is_occupied(row, col) {
            return Err(Error::OriginOccupied { x, y });
        }
        if !(max_range > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "max_range must be positive, got {max_range}"
            )));
        }
        let px = (x - self.origin.0) / self.resolution;
        let py = (y - self.origin.1) / self.resolution;
        Ok(self.traverse(px, py, col as i64, row as i64, bearing, max_range))
    }

    fn traverse(&self, px: f64, py: f64, col: i64, row: i64, bearing: f64, max_range: f64) -> f64 {
        let (dy, dx) = bearing.sin_cos();
        let max_t = max_range / self.resolution;
        let (mut col, mut row) = (col, row);
        let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
        let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
        // Boundary ahead of cell c is c + 1 going up, c going down.
        let ahead_x = i64::from(dx > 0.0);
        let ahead_y = i64::from(dy > 0.0);
        let (inv_x, inv_y) = (1.0 / dx, 1.0 / dy);
        // Parametric distance (in cells) to the next vertical / horizontal boundary.
        let next_x = |c: i64| if dx == 0.0 { f64::INFINITY } else { ((c + ahead_x) as f64 - px) * inv_x };
        let next_y = |r: i64| if dy == 0.0 { f64::INFINITY } else { ((r + ahead_y) as f64 - py) * inv_y };
        let (w, h) = (self.width as i64, self.height as i64);
        let (mut tx, mut ty) = (next_x(col), next_y(row));
        loop {
            let t = if tx <= ty {
                col += step_x;
                let t = tx;
                tx = next_x(col);
                t
            } else {
                row += step_y;
                let t = ty;
                ty = next_y(row);
                t
            };
            if t >= max_t {
                return max_range;
            }
            if col < 0 || row < 0 || col >= w || row >= h {
                return t * self.resolution;
            }
            if self.occupied[row as usize * self.width + col as usize] {
                return t * self.resolution;
            }
        }
    }

    /// Ground-truth depth scan of `l` equiangular rays centered on the pose heading.
    pub fn gt_scan(&self, pose: &Pose, l: usize, fov: f64, max_range: f64) -> Result<DepthRayScan> {
        validate_scan_shape(l, fov)?;
        let depths = ray_bearings(pose.theta, l, fov)
            .map(|b| self.cast_ray(pose, b, max_range))
            .collect::<Result<Vec<_>>>()?;
        Ok(DepthRayScan {
            depths,
            fov,
            max_range,
        })
    }

    /// Writes `l` ray depths for `pose` into `out`; the pose must be validated
    /// by the caller (in-bounds, free).
    pub(crate) fn scan_into(&self, pose: &Pose, fov: f64, max_range: f64, out: &mut [f64]) {
        let (row, col) = self.cell_of(pose.x, pose.y).expect("pose checked by caller");
        let px = (pose.x - self.origin.0) / self.resolution;
        let py = (pose.y - self.origin.1) / self.resolution;
        let n = out.len();
        for (slot, bearing) in out.iter_mut().zip(ray_bearings(pose.theta, n, fov)) {
            *slot = self.traverse(px, py, col as i64, row as i64, bearing, max_range);
        }
    }
}

fn validate_scan_shape(l: usize, fov: f64) -> Result<()> {
    if l == 0 {
        return Err(Error::InvalidArgument("scan needs at least one ray".into()));
    }
    if !(fov > 0.0 && fov <= TAU) {
        return Err(Error::InvalidArgument(format!(
            "fov must lie in (0, 2π], got {fov}"
        )));
    }
    Ok(())
}

/// Bearing offset of ray `k` out of `l`, relative to the heading.
/// Ray 0 sits at `-fov/2` (clockwise edge), ray `l-1` at `+fov/2`.
pub fn ray_offset(k: usize, l: usize, fov: f64) -> f64 {
    if l <= 1 {
        0.0
    } else {
        -fov / 2.0 + k as f64 * fov / (l - 1) as f64
    }
}

/// Absolute bearings of an `l`-ray scan at heading `theta`.
pub fn ray_bearings(theta: f64, l: usize, fov: f64) -> impl Iterator<Item = f64> {
    (0..l).map(move |k| theta + ray_offset(k, l, fov))
}

/// A fixed-length vector of equiangular planar depths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRayScan {
    pub depths: Vec<f64>,
    /// Horizontal angular span, radians.
    pub fov: f64,
    pub max_range: f64,
}

impl DepthRayScan {
    pub fn new(depths: Vec<f64>, fov: f64, max_range: f64) -> Result<Self> {
        validate_scan_shape(depths.len(), fov)?;
        if let Some(bad) = depths
            .iter()
            .find(|d| !(**d >= 0.0 && **d <= max_range))
        {
            return Err(Error::InvalidArgument(format!(
                "depth {bad} outside [0, {max_range}]"
            )));
        }
        Ok(DepthRayScan {
            depths,
            fov,
            max_range,
        })
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }
}
