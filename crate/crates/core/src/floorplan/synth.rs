//! Synthetic floorplans built from rectangular rooms, corridors and clutter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FloorplanGrid, Pose};
use crate::error::{Error, Result};

/// Axis-aligned rectangle in meters; `(x, y)` is the lower-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectSpec {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

/// L-shaped corridor: horizontal leg from `from` to `(to.x, from.y)`, then a
/// vertical leg to `to`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorridorSpec {
    pub from: [f64; 2],
    pub to: [f64; 2],
    pub width: f64,
}

/// Scene description consumed by [`synth_floorplan`].
///
/// Room rectangles are free interiors; the grid is padded with a one-cell wall
/// around the bounding box of all rooms and corridors, so the grid origin sits
/// one cell below-left of the smallest coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub resolution: f64,
    pub rooms: Vec<RectSpec>,
    #[serde(default)]
    pub corridors: Vec<CorridorSpec>,
    /// Occupied blocks stamped after carving.
    #[serde(default)]
    pub pillars: Vec<RectSpec>,
    /// Number of random clutter blocks to place in free space.
    #[serde(default)]
    pub clutter: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn single_room(width: f64, height: f64, resolution: f64) -> Self {
        SceneSpec {
            resolution,
            rooms: vec![RectSpec {
                x: 0.0,
                y: 0.0,
                width,
                height,
            }],
            corridors: vec![],
            pillars: vec![],
            clutter: 0,
            seed: 0,
        }
    }

    /// Two identical square rooms side by side, each opening north into its
    /// own corridor that reaches a shared hall. Only the left room's corridor
    /// has a side alcove, so the rooms are indistinguishable from inside but
    /// not from their exits.
    ///
    /// Room interiors: left `[0, 3] x [0, 3]`, right `[5, 8] x [0, 3]`.
    pub fn two_rooms(resolution: f64) -> Self {
        let room = |x: f64| RectSpec {
            x,
            y: 0.0,
            width: 3.0,
            height: 3.0,
        };
        let corridor = |x: f64| CorridorSpec {
            from: [x, 2.9],
            to: [x, 5.2],
            width: 0.8,
        };
        SceneSpec {
            resolution,
            rooms: vec![
                room(0.0),
                room(5.0),
                // shared hall
                RectSpec {
                    x: -0.5,
                    y: 5.0,
                    width: 9.0,
                    height: 1.2,
                },
                // alcove off the left corridor
                RectSpec {
                    x: 1.9,
                    y: 3.8,
                    width: 0.7,
                    height: 0.6,
                },
            ],
            corridors: vec![corridor(1.5), corridor(6.5)],
            pillars: vec![],
            clutter: 0,
            seed: 0,
        }
    }

    /// Random building: a `cols x rows` block of rooms filling roughly
    /// `extent x extent` meters, neighbors joined by doors, plus clutter.
    pub fn random(seed: u64, extent: f64, resolution: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols = rng.random_range(1..=3usize);
        let rows = rng.random_range(1..=2usize);
        let wall = 2.0 * resolution;
        let cell_w = (extent + wall) / cols as f64;
        let cell_h = (extent + wall) / rows as f64;
        let mut rooms = Vec::new();
        let mut corridors = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                rooms.push(RectSpec {
                    x: c as f64 * cell_w,
                    y: r as f64 * cell_h,
                    width: cell_w - wall,
                    height: cell_h - wall,
                });
            }
        }
        let door = 0.8f64.min(cell_w.min(cell_h) * 0.5);
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    let y = r as f64 * cell_h
                        + rng.random_range(door..(cell_h - wall - door).max(door + 1e-6));
                    corridors.push(CorridorSpec {
                        from: [(c + 1) as f64 * cell_w - wall - resolution, y],
                        to: [(c + 1) as f64 * cell_w + resolution, y],
                        width: door,
                    });
                }
                if r + 1 < rows {
                    let x = c as f64 * cell_w
                        + rng.random_range(door..(cell_w - wall - door).max(door + 1e-6));
                    corridors.push(CorridorSpec {
                        from: [x, (r + 1) as f64 * cell_h - wall - resolution],
                        to: [x, (r + 1) as f64 * cell_h + resolution],
                        width: door,
                    });
                }
            }
        }
        SceneSpec {
            resolution,
            rooms,
            corridors,
            pillars: vec![],
            clutter: rng.random_range(4..=10),
            seed: rng.random(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0) || !self.resolution.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "resolution must be positive, got {}",
                self.resolution
            )));
        }
        if self.rooms.is_empty() {
            return Err(Error::InvalidSpec("scene has no rooms".into()));
        }
        for r in self.rooms.iter().chain(&self.pillars) {
            if !(r.width > 0.0 && r.height > 0.0) || !r.x.is_finite() || !r.y.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "rectangle needs positive finite dimensions: {r:?}"
                )));
            }
        }
        for c in &self.corridors {
            if !(c.width > 0.0) || c.from.iter().chain(&c.to).any(|v| !v.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "corridor needs positive width and finite ends: {c:?}"
                )));
            }
        }
        Ok(())
    }
}

impl CorridorSpec {
    fn legs(&self) -> [RectSpec; 2] {
        let h = self.width / 2.0;
        let [fx, fy] = self.from;
        let [tx, ty] = self.to;
        [
            RectSpec {
                x: fx.min(tx) - h,
                y: fy - h,
                width: (fx - tx).abs() + self.width,
                height: self.width,
            },
            RectSpec {
                x: tx - h,
                y: fy.min(ty) - h,
                width: self.width,
                height: (fy - ty).abs() + self.width,
            },
        ]
    }
}

struct CellFrame {
    min_x: f64,
    min_y: f64,
    res: f64,
}

impl CellFrame {
    /// Half-open cell span `[start, end)` covered by a rectangle (grid has a
    /// one-cell pad, hence the `+ 1`).
    fn span(&self, rect: &RectSpec) -> (usize, usize, usize, usize) {
        let c0 = ((rect.x - self.min_x) / self.res).round() as usize + 1;
        let c1 = ((rect.x + rect.width - self.min_x) / self.res).round() as usize + 1;
        let r0 = ((rect.y - self.min_y) / self.res).round() as usize + 1;
        let r1 = ((rect.y + rect.height - self.min_y) / self.res).round() as usize + 1;
        (r0, r1, c0, c1)
    }
}

/// Rasterizes a scene description. Free space must end up non-empty and
/// 4-connected, otherwise the spec is rejected.
pub fn synth_floorplan(spec: &SceneSpec) -> Result<FloorplanGrid> {
    spec.validate()?;
    let res = spec.resolution;
    let carved: Vec<RectSpec> = spec
        .rooms
        .iter()
        .copied()
        .chain(spec.corridors.iter().flat_map(|c| c.legs()))
        .collect();
    let min_x = carved.iter().map(|r| r.x).fold(f64::INFINITY, f64::min);
    let min_y = carved.iter().map(|r| r.y).fold(f64::INFINITY, f64::min);
    let frame = CellFrame { min_x, min_y, res };
    let (mut height, mut width) = (0, 0);
    for rect in &carved {
        let (r0, r1, c0, c1) = frame.span(rect);
        if r1 <= r0 || c1 <= c0 {
            return Err(Error::InvalidSpec(format!(
                "rectangle {rect:?} is thinner than one cell"
            )));
        }
        height = height.max(r1 + 1);
        width = width.max(c1 + 1);
    }
    let origin = (min_x - res, min_y - res);
    let mut grid = FloorplanGrid::from_cells(height, width, res, origin, vec![true; height * width])?;
    for rect in &carved {
        let (r0, r1, c0, c1) = frame.span(rect);
        for r in r0..r1 {
            for c in c0..c1 {
                grid.set_occupied(r, c, false);
            }
        }
    }
    for pillar in &spec.pillars {
        let (r0, r1, c0, c1) = frame.span(pillar);
        for r in r0.min(height)..r1.min(height) {
            for c in c0.min(width)..c1.min(width) {
                grid.set_occupied(r, c, true);
            }
        }
    }
    if grid.free_count() == 0 {
        return Err(Error::InvalidSpec("scene has no free interior".into()));
    }
    if grid.free_components().1 != 1 {
        return Err(Error::InvalidSpec("free space is not connected".into()));
    }
    place_clutter(&mut grid, spec.clutter, spec.seed);
    Ok(grid)
}

/// Drops up to `count` small occupied blocks into free space, skipping any
/// placement that would disconnect the free space or touch an existing wall.
fn place_clutter(grid: &mut FloorplanGrid, count: usize, seed: u64) {
    if count == 0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (grid.height(), grid.width());
    let mut placed = 0;
    for _ in 0..count * 50 {
        if placed == count {
            break;
        }
        let bh = rng.random_range(1..=4usize);
        let bw = rng.random_range(1..=4usize);
        if h < bh + 4 || w < bw + 4 {
            continue;
        }
        let r0 = rng.random_range(2..=h - bh - 2);
        let c0 = rng.random_range(2..=w - bw - 2);
        // Require a one-cell free margin so blocks stay free-standing.
        let clear = (r0 - 1..r0 + bh + 1)
            .all(|r| (c0 - 1..c0 + bw + 1).all(|c| !grid.is_occupied(r, c)));
        if !clear {
            continue;
        }
        let mut trial = grid.clone();
        for r in r0..r0 + bh {
            for c in c0..c0 + bw {
                trial.set_occupied(r, c, true);
            }
        }
        if trial.free_components().1 == 1 {
            *grid = trial;
            placed += 1;
        }
    }
}

/// Step at which [`two_rooms_tour`] first stands outside the left room.
pub const TOUR_EXIT_STEP: usize = 9;

/// Scripted walk through [`SceneSpec::two_rooms`]: a few moves and turns
/// inside the left room, then north through its door and up the corridor
/// past the alcove. Every pose sits on a 0.1 m cell center with a heading
/// that is a multiple of 90 degrees.
pub fn two_rooms_tour() -> Vec<Pose> {
    use std::f64::consts::{FRAC_PI_2, PI};
    let mut poses = vec![
        Pose::new(1.05, 1.05, 0.0),
        Pose::new(1.55, 1.05, 0.0),
        Pose::new(2.05, 1.05, 0.0),
        Pose::new(2.05, 1.05, PI),
        Pose::new(1.55, 1.05, PI),
        Pose::new(1.55, 1.05, FRAC_PI_2),
    ];
    poses.extend((1..=7).map(|i| Pose::new(1.55, 1.05 + 0.5 * i as f64, FRAC_PI_2)));
    poses
}

/// Seeded random walk over free space. Each step either moves `step_m`
/// forward, when the straight path keeps `clearance_m` from every wall, or
/// turns in place by a random multiple of `turn_rad`.
pub fn random_walk(
    grid: &FloorplanGrid,
    seed: u64,
    steps: usize,
    step_m: f64,
    turn_rad: f64,
    clearance_m: f64,
) -> Result<Vec<Pose>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clear = |x: f64, y: f64| {
        let r = clearance_m;
        [(0.0, 0.0), (r, 0.0), (-r, 0.0), (0.0, r), (0.0, -r)]
            .iter()
            .all(|(dx, dy)| grid.is_free_at(x + dx, y + dy))
    };
    let free: Vec<(usize, usize)> = (0..grid.height())
        .flat_map(|r| (0..grid.width()).map(move |c| (r, c)))
        .filter(|&(r, c)| {
            let (x, y) = grid.cell_center(r, c);
            clear(x, y)
        })
        .collect();
    if free.is_empty() {
        return Err(Error::InvalidSpec("no free cell with the requested clearance".into()));
    }
    let (r, c) = free[rng.random_range(0..free.len())];
    let (x, y) = grid.cell_center(r, c);
    let turns = (std::f64::consts::TAU / turn_rad).round().max(1.0) as i64;
    let mut pose = Pose::new(x, y, turn_rad * rng.random_range(0..turns) as f64);
    let mut out = vec![pose];
    while out.len() < steps {
        let (s, c) = pose.theta.sin_cos();
        let samples = (step_m / (0.5 * grid.resolution())).ceil().max(1.0) as usize;
        let path_clear = (1..=samples).all(|i| {
            let t = step_m * i as f64 / samples as f64;
            clear(pose.x + t * c, pose.y + t * s)
        });
        if path_clear && rng.random_bool(0.8) {
            pose = Pose::new(pose.x + step_m * c, pose.y + step_m * s, pose.theta);
        } else {
            let k = rng.random_range(1..turns.max(2));
            pose = Pose::new(pose.x, pose.y, pose.theta + turn_rad * k as f64);
        }
        out.push(pose);
    }
    Ok(out)
}
