//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use floc_core::filter::MotionStep;
use floc_core::nalgebra::{DMatrix, DVector};
use floc_core::{FloorplanGrid, PoseGridSpec};
use rand::Rng;

/// Random occupancy grid. With `border`, the outer ring is occupied.
pub fn random_grid<R: Rng>(rng: &mut R, h: usize, w: usize, density: f64, res: f64, border: bool) -> FloorplanGrid {
    let origin = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
    let cells = (0..h * w)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            (border && (r == 0 || c == 0 || r == h - 1 || c == w - 1)) || rng.random_bool(density)
        })
        .collect();
    FloorplanGrid::from_cells(h, w, res, origin, cells).unwrap()
}

/// Fixed-step ray march. Returns the distance of the first sample that lies
/// in an occupied cell or outside the grid, or `max_range`. When two samples
/// land in diagonal neighbors, the ray clipped a third cell's corner in
/// between; that cell is found by bisection so short clips are not skipped.
pub fn march(grid: &FloorplanGrid, x: f64, y: f64, bearing: f64, max_range: f64, step: f64) -> f64 {
    let (dx, dy) = (bearing.cos(), bearing.sin());
    let (ox, oy) = grid.origin();
    let res = grid.resolution();
    let cell = |t: f64| {
        (
            ((x + t * dx - ox) / res).floor() as i64,
            ((y + t * dy - oy) / res).floor() as i64,
        )
    };
    let blocked = |(cx, cy): (i64, i64)| {
        cx < 0 || cy < 0 || cx >= grid.width() as i64 || cy >= grid.height() as i64 || grid.is_occupied(cy as usize, cx as usize)
    };
    let mut prev = (0.0, cell(0.0));
    let mut i = 1u64;
    loop {
        let t = i as f64 * step;
        if t >= max_range {
            return max_range;
        }
        let c = cell(t);
        if c.0 != prev.1 .0 && c.1 != prev.1 .1 {
            let (mut lo, mut hi) = (prev.0, t);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let m = cell(mid);
                if m == prev.1 {
                    lo = mid;
                } else if m == c {
                    hi = mid;
                } else {
                    if blocked(m) {
                        return mid;
                    }
                    break;
                }
            }
        }
        if blocked(c) {
            return t;
        }
        prev = (t, c);
        i += 1;
    }
}

/// Visit rates of the teleporting walk, solved directly from the dense
/// Google matrix. Nodes without links teleport with probability one.
pub fn google_matrix(w: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let n = w.nrows();
    let mut g = DMatrix::zeros(n, n);
    for a in 0..n {
        let s: f64 = (0..n).filter(|&b| b != a).map(|b| w[(a, b)]).sum();
        for b in 0..n {
            g[(a, b)] = if s > 0.0 {
                tau / n as f64 + if a != b { (1.0 - tau) * w[(a, b)] / s } else { 0.0 }
            } else {
                1.0 / n as f64
            };
        }
    }
    g
}

pub fn stationary(g: &DMatrix<f64>) -> DVector<f64> {
    let n = g.nrows();
    // p^T (G - I) = 0 with sum(p) = 1: replace the last equation.
    let mut a = g.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    a.lu().solve(&rhs).expect("stationary distribution")
}

fn plogp(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

fn entropy(ps: &[f64]) -> f64 {
    let z: f64 = ps.iter().sum();
    if z <= 0.0 {
        return 0.0;
    }
    -ps.iter().map(|p| plogp(p / z)).sum::<f64>()
}

/// Map equation in its textbook form `q H(Q) + sum_m p_m H(P_m)`, with
/// `q_m` the total flow along Google-matrix transitions leaving module `m`.
pub fn map_equation_dense(g: &DMatrix<f64>, p: &DVector<f64>, labels: &[usize]) -> f64 {
    let n = p.len();
    let k = labels.iter().max().unwrap() + 1;
    let mut exit = vec![0.0; k];
    for a in 0..n {
        for b in 0..n {
            if labels[a] != labels[b] {
                exit[labels[a]] += p[a] * g[(a, b)];
            }
        }
    }
    let q: f64 = exit.iter().sum();
    let mut l = q * entropy(&exit);
    for m in 0..k {
        let mut code = vec![exit[m]];
        code.extend((0..n).filter(|&a| labels[a] == m).map(|a| p[a]));
        let pm: f64 = code.iter().sum();
        if pm > 0.0 {
            l += pm * entropy(&code);
        }
    }
    l
}

/// Every set partition of `0..n` as a restricted growth string.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(i: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for l in 0..=max + 1 {
            cur[i] = l;
            rec(i + 1, max.max(l), cur, out);
        }
    }
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    let mut cur = vec![0; n];
    rec(1, 0, &mut cur, &mut out);
    out
}

/// Truncated Gaussian weight at integer offset `d`.
pub fn gauss_weight(d: i64, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return if d == 0 { 1.0 } else { 0.0 };
    }
    let r = (3.0 * sigma).ceil() as i64;
    if d.abs() > r {
        return 0.0;
    }
    let f = |e: i64| (-((e * e) as f64) / (2.0 * sigma * sigma)).exp();
    f(d) / (-r..=r).map(f).sum::<f64>()
}

/// Dense motion transition matrix, entry `[dst, src]`, built independently
/// for each source pose from the shift, rotate and blur definitions.
pub fn transition_matrix(spec: &PoseGridSpec, m: &MotionStep) -> DMatrix<f64> {
    let (h, w, o) = (spec.h_cells, spec.w_cells, spec.o_bins);
    let n = h * w * o;
    let idx = |r: usize, c: usize, k: usize| (r * w + c) * o + k;
    let bw = std::f64::consts::TAU / o as f64;
    let st = m.sigma_trans / spec.cell_size;
    let sr = m.sigma_rot / bw;
    let mut t = DMatrix::zeros(n, n);
    for r in 0..h {
        for c in 0..w {
            for k in 0..o {
                let th = bw * k as f64;
                let fx = (m.dx * th.cos() - m.dy * th.sin()) / spec.cell_size;
                let fy = (m.dx * th.sin() + m.dy * th.cos()) / spec.cell_size;
                let fk = m.dtheta / bw;
                let mut spatial = Vec::new();
                for (ry, wy) in [(fy.floor(), 1.0 - (fy - fy.floor())), (fy.floor() + 1.0, fy - fy.floor())] {
                    for (rx, wx) in [(fx.floor(), 1.0 - (fx - fx.floor())), (fx.floor() + 1.0, fx - fx.floor())] {
                        let (tr, tc) = (r as i64 + ry as i64, c as i64 + rx as i64);
                        if wy * wx > 0.0 && tr >= 0 && tc >= 0 && tr < h as i64 && tc < w as i64 {
                            spatial.push((tr, tc, wy * wx));
                        }
                    }
                }
                let kb = [(fk.floor(), 1.0 - (fk - fk.floor())), (fk.floor() + 1.0, fk - fk.floor())];
                for r2 in 0..h {
                    for c2 in 0..w {
                        let ws: f64 = spatial
                            .iter()
                            .map(|&(tr, tc, wt)| wt * gauss_weight(r2 as i64 - tr, st) * gauss_weight(c2 as i64 - tc, st))
                            .sum();
                        if ws == 0.0 {
                            continue;
                        }
                        for k2 in 0..o {
                            let mut wo = 0.0;
                            for &(sk, wk) in &kb {
                                if wk == 0.0 {
                                    continue;
                                }
                                let base = k as i64 + sk as i64;
                                let rad = if sr > 0.0 { (3.0 * sr).ceil() as i64 } else { 0 };
                                for d in -rad..=rad {
                                    if (base + d).rem_euclid(o as i64) == k2 as i64 {
                                        wo += wk * gauss_weight(d, sr);
                                    }
                                }
                            }
                            t[(idx(r2, c2, k2), idx(r, c, k))] += ws * wo;
                        }
                    }
                }
            }
        }
    }
    t
}

/// Central finite-difference gradient.
pub fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let up = f(&xp);
            xp[i] = orig - h;
            let down = f(&xp);
            xp[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(max_i |b_i|, 1e-8)`.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Random unit vector.
pub fn unit<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Posterior masses measured along the scripted two-room walk.
pub struct TwoRoomOutcome {
    /// Per step: mass inside the left and right room interiors.
    pub rooms: Vec<(f64, f64)>,
    /// Per step: mass on the left room together with its corridor.
    pub true_side: Vec<f64>,
    /// Per step: the same room masses for the single-frame likelihood map.
    pub single_frame: Vec<(f64, f64)>,
    pub errors: Vec<f64>,
}

pub fn two_room_walk() -> TwoRoomOutcome {
    use floc_core::filter::{FilterParams, MotionStep, TrackParams, Tracker};
    use floc_core::floorplan::{synth_floorplan, two_rooms_tour, SceneSpec};
    use floc_core::observation::LikelihoodParams;

    let grid = synth_floorplan(&SceneSpec::two_rooms(0.1)).unwrap();
    let spec = PoseGridSpec::covering(&grid, 0.1, 16).unwrap();
    let params = TrackParams {
        likelihood: LikelihoodParams::default(),
        filter: FilterParams::default(),
    };
    let lp = params.likelihood;
    let mut tracker = Tracker::new(&grid, spec, params).unwrap();
    let tour = two_rooms_tour();
    let in_box = |x: f64, y: f64, x0: f64, x1: f64, y0: f64, y1: f64| x > x0 && x < x1 && y > y0 && y < y1;
    let masses = |values: &[f64]| {
        let (mut a, mut b, mut side) = (0.0, 0.0, 0.0);
        for (i, v) in values.iter().enumerate() {
            let (r, c, _) = spec.unindex(i);
            let (x, y) = spec.cell_center(r, c);
            if in_box(x, y, 0.0, 3.0, 0.0, 3.0) {
                a += v;
            }
            if in_box(x, y, 5.0, 8.0, 0.0, 3.0) {
                b += v;
            }
            if in_box(x, y, -1.0, 4.0, -1.0, 5.0) {
                side += v;
            }
        }
        (a, b, side)
    };
    let mut out = TwoRoomOutcome {
        rooms: vec![],
        true_side: vec![],
        single_frame: vec![],
        errors: vec![],
    };
    for (t, pose) in tour.iter().enumerate() {
        let scan = grid.gt_scan(pose, lp.l, lp.fov, lp.max_range).unwrap();
        let motion = (t > 0).then(|| MotionStep::between(&tour[t - 1], pose, &params.filter));
        let step = tracker.step(&scan, motion.as_ref()).unwrap();
        let (a, b, side) = masses(step.posterior.values());
        out.rooms.push((a, b));
        out.true_side.push(side);
        let single = tracker.table().likelihood(&scan, lp.sigma).unwrap();
        let (sa, sb, _) = masses(single.values());
        out.single_frame.push((sa, sb));
        out.errors.push((step.pose.x - pose.x).hypot(step.pose.y - pose.y));
    }
    out
}
