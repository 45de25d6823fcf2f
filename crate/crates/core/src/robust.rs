//! Pose noise, the local box detector, and pairwise relative-pose correction
//! from matched box centers.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::eval::Detection;
use crate::geometry::Pose;
use crate::voxel::GridSpec;

pub const DEFAULT_GATE_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_xy: f64,
    pub sigma_yaw: f64,
    pub seed: u64,
}

/// Gaussian offsets on planar translation and yaw; height, roll and pitch
/// are untouched. Zero sigmas return the input unchanged.
pub fn perturb_pose<R: Rng + ?Sized>(pose: &Pose, noise: &NoiseModel, rng: &mut R) -> Pose {
    let mut out = *pose;
    if noise.sigma_xy > 0.0 {
        let n = Normal::new(0.0, noise.sigma_xy).expect("finite sigma");
        let dx = n.sample(rng);
        let dy = n.sample(rng);
        out = Pose::translation(dx, dy, 0.0).compose(&out);
    }
    if noise.sigma_yaw > 0.0 {
        let dyaw = Normal::new(0.0, noise.sigma_yaw).expect("finite sigma").sample(rng);
        // spin about the agent's own vertical axis
        out = Pose::from_rotation_translation(Pose::yaw(dyaw).rotation() * out.rotation(), out.translation_vector());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Cells strictly above this value are occupied.
    pub threshold: f64,
    /// Components smaller than this are discarded.
    pub min_cells: usize,
    /// Typical `(length, width)`. When set, rectangles smaller than this
    /// are grown to it.
    pub prior_extent: Option<[f64; 2]>,
    pub grow: Grow,
}

/// Where a partial rectangle grows when completed to the prior size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grow {
    /// Away from the observing sensor, which only sees the near faces.
    #[default]
    AwayFromSensor,
    /// Evenly about the observed center.
    Centered,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            threshold: 0.0,
            min_cells: 3,
            prior_extent: None,
            grow: Grow::AwayFromSensor,
        }
    }
}

/// Grows a partially observed rectangle to the prior size. `sensor` is the
/// viewpoint the rectangle was observed from.
pub fn complete_extent(
    center: [f64; 2],
    yaw: f64,
    extent: [f64; 2],
    prior: [f64; 2],
    grow: Grow,
    sensor: [f64; 2],
) -> ([f64; 2], [f64; 2]) {
    // a long side shorter than the mean of the prior sides is an end face
    let target = if extent[0] > 0.5 * (prior[0] + prior[1]) {
        prior
    } else {
        [prior[1], prior[0]]
    };
    let (s, c) = yaw.sin_cos();
    let axes = [[c, s], [-s, c]];
    let mut center = center;
    let mut out = extent;
    for k in 0..2 {
        let gap = target[k] - extent[k];
        if gap <= 0.0 {
            continue;
        }
        let (rx, ry) = (center[0] - sensor[0], center[1] - sensor[1]);
        let away = match grow {
            Grow::Centered => 0.0,
            Grow::AwayFromSensor if rx * axes[k][0] + ry * axes[k][1] >= 0.0 => 1.0,
            Grow::AwayFromSensor => -1.0,
        };
        center = [center[0] + away * 0.5 * gap * axes[k][0], center[1] + away * 0.5 * gap * axes[k][1]];
        out[k] = target[k];
    }
    (center, out)
}

/// Per-column occupancy from the first (log point count) channel of a
/// LiDAR grid.
pub fn column_occupancy(grid: &crate::voxel::VoxelGrid) -> Vec<f64> {
    let spec = &grid.spec;
    (0..spec.n_columns())
        .map(|col| (0..spec.nz).map(|iz| grid.cell(col * spec.nz + iz)[0]).sum())
        .collect()
}

fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

type Rect = ([f64; 2], f64, [f64; 2]);

/// One bounding rectangle per convex-hull edge direction, as
/// `(center, yaw, [l, w])` with `l >= w` and yaw folded into `(-pi/2, pi/2]`.
fn edge_rects(pts: &[[f64; 2]]) -> Vec<Rect> {
    let hull = convex_hull(pts.to_vec());
    if hull.len() < 3 {
        return Vec::new();
    }
    let pi = std::f64::consts::PI;
    (0..hull.len())
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
            let theta = (b[1] - a[1]).atan2(b[0] - a[0]);
            let (s, c) = theta.sin_cos();
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for p in &hull {
                let u = c * p[0] + s * p[1];
                let v = -s * p[0] + c * p[1];
                lo = [lo[0].min(u), lo[1].min(v)];
                hi = [hi[0].max(u), hi[1].max(v)];
            }
            let (mu, mv) = ((lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0);
            let center = [c * mu - s * mv, s * mu + c * mv];
            let (mut yaw, mut ext) = (theta, [hi[0] - lo[0], hi[1] - lo[1]]);
            if ext[1] > ext[0] {
                ext = [ext[1], ext[0]];
                yaw += std::f64::consts::FRAC_PI_2;
            }
            while yaw > pi / 2.0 {
                yaw -= pi;
            }
            while yaw <= -pi / 2.0 {
                yaw += pi;
            }
            (center, yaw, ext)
        })
        .collect()
}

fn first_min_by(rects: Vec<Rect>, key: impl Fn(&Rect) -> f64) -> Option<Rect> {
    let mut best: Option<(f64, Rect)> = None;
    for r in rects {
        let k = key(&r);
        if best.is_none_or(|b| k < b.0 - 1e-12) {
            best = Some((k, r));
        }
    }
    best.map(|b| b.1)
}

/// Smallest-area rectangle containing the points, as `(center, yaw, [l, w])`
/// with `l >= w` and yaw folded into `(-pi/2, pi/2]`.
pub fn min_area_rect(pts: &[[f64; 2]]) -> Option<([f64; 2], f64, [f64; 2])> {
    first_min_by(edge_rects(pts), |r| r.2[0] * r.2[1])
}

/// Candidates within this fraction of the smallest area compete on edge fit.
pub const AREA_SLACK: f64 = 0.25;

/// Mean distance from the points to the nearest edge of the rectangle.
fn edge_distance(pts: &[[f64; 2]], rect: &Rect) -> f64 {
    let (center, yaw, ext) = *rect;
    let (s, c) = yaw.sin_cos();
    let total: f64 = pts
        .iter()
        .map(|p| {
            let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
            let (u, v) = ((c * dx + s * dy).abs(), (-s * dx + c * dy).abs());
            (0.5 * ext[0] - u).abs().min((0.5 * ext[1] - v).abs())
        })
        .sum();
    total / pts.len() as f64
}

/// Rectangle for a surface scan: among the near-minimal-area candidates, the
/// one whose edges the points hug. A partially seen box (an L of two faces)
/// has a triangular hull whose hypotenuse rectangle ties on area with the
/// true one but leaves the points inside.
pub fn surface_rect(pts: &[[f64; 2]]) -> Option<([f64; 2], f64, [f64; 2])> {
    let rects = edge_rects(pts);
    let min_area = rects.iter().map(|r| r.2[0] * r.2[1]).fold(f64::INFINITY, f64::min);
    let near: Vec<Rect> = rects
        .into_iter()
        .filter(|r| r.2[0] * r.2[1] <= min_area * (1.0 + AREA_SLACK) + 1e-12)
        .collect();
    first_min_by(near, |r| edge_distance(pts, r))
}

/// Cells above the threshold grouped 8-connected; groups smaller than
/// `min_cells` are dropped. Each group lists column indices.
pub fn components(values: &[f64], spec: &GridSpec, cfg: &DetectorConfig) -> Vec<Vec<usize>> {
    let (nx, ny) = (spec.nx, spec.ny);
    assert_eq!(values.len(), nx * ny, "one value per column");
    let occupied: Vec<bool> = values.iter().map(|&v| v > cfg.threshold).collect();
    let mut seen = vec![false; nx * ny];
    let mut groups = Vec::new();
    for start in 0..nx * ny {
        if !occupied[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut members = Vec::new();
        while let Some(i) = stack.pop() {
            members.push(i);
            let (ix, iy) = ((i / ny) as isize, (i % ny) as isize);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    let (jx, jy) = (ix + dx, iy + dy);
                    if jx < 0 || jy < 0 || jx >= nx as isize || jy >= ny as isize {
                        continue;
                    }
                    let j = jx as usize * ny + jy as usize;
                    if occupied[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if members.len() >= cfg.min_cells.max(1) {
            groups.push(members);
        }
    }
    groups
}

/// Oriented rectangle over the cell centers of one group, completed to the
/// prior size when configured. Score is `1 - exp(-mean value)`.
pub fn fit_component(
    values: &[f64],
    members: &[usize],
    spec: &GridSpec,
    cfg: &DetectorConfig,
    sensor: [f64; 2],
) -> Option<Detection> {
    let ny = spec.ny;
    let [sx, sy, _] = spec.cell_size();
    let centers: Vec<[f64; 2]> = members
        .iter()
        .map(|&i| {
            let c = spec.cell_center(i / ny, i % ny, 0);
            [c.x, c.y]
        })
        .collect();
    // strips one cell wide have a degenerate hull; fall back to corners
    let (mut center, yaw, mut extent) = surface_rect(&centers).or_else(|| {
        let (hx, hy) = (sx / 2.0, sy / 2.0);
        let corners: Vec<[f64; 2]> = centers
            .iter()
            .flat_map(|c| [[c[0] - hx, c[1] - hy], [c[0] + hx, c[1] - hy], [c[0] - hx, c[1] + hy], [c[0] + hx, c[1] + hy]])
            .collect();
        surface_rect(&corners)
    })?;
    if let Some(prior) = cfg.prior_extent {
        (center, extent) = complete_extent(center, yaw, extent, prior, cfg.grow, sensor);
    }
    let mean = members.iter().map(|&i| values[i]).sum::<f64>() / members.len() as f64;
    Some(Detection::new(center, yaw, extent, 1.0 - (-mean).exp()))
}

/// Detector for a map observed from the frame origin.
pub fn detect_local(values: &[f64], spec: &GridSpec, cfg: &DetectorConfig) -> Vec<Detection> {
    components(values, spec, cfg)
        .iter()
        .filter_map(|m| fit_component(values, m, spec, cfg, [0.0, 0.0]))
        .collect()
}

/// Re-expresses detections through a planar transform.
pub fn transform_detections(dets: &[Detection], pose: &Pose) -> Vec<Detection> {
    let (tx, ty, yaw) = pose.planar();
    let (s, c) = yaw.sin_cos();
    dets.iter()
        .map(|d| Detection {
            center: [c * d.center[0] - s * d.center[1] + tx, s * d.center[0] + c * d.center[1] + ty],
            yaw: d.yaw + yaw,
            ..*d
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoxMatchSet {
    /// `(ego center, neighbor center)` pairs.
    pub pairs: Vec<([f64; 2], [f64; 2])>,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Neighbor detections, best score first, each take the nearest free ego
/// detection inside the gate.
pub fn match_boxes(ego: &[Detection], neighbor: &[Detection], gate_radius: f64) -> BoxMatchSet {
    let mut order: Vec<usize> = (0..neighbor.len()).collect();
    order.sort_by(|&i, &j| neighbor[j].score.total_cmp(&neighbor[i].score));
    let mut taken = vec![false; ego.len()];
    let mut pairs = Vec::new();
    for j in order {
        let nc = neighbor[j].center;
        let best = ego
            .iter()
            .enumerate()
            .filter(|(i, e)| !taken[*i] && dist(e.center, nc) <= gate_radius)
            .min_by(|a, b| dist(a.1.center, nc).total_cmp(&dist(b.1.center, nc)));
        if let Some((i, e)) = best {
            taken[i] = true;
            pairs.push((e.center, nc));
        }
    }
    BoxMatchSet { pairs }
}

/// Planar rigid transform `(theta, tx, ty)` minimising
/// `sum |R(theta) n + t - e|^2` over the pairs.
pub fn align_planar(set: &BoxMatchSet) -> Option<(f64, f64, f64)> {
    let n = set.pairs.len();
    if n < 2 {
        return None;
    }
    let inv = 1.0 / n as f64;
    let (mut ce, mut cn) = ([0.0; 2], [0.0; 2]);
    for (e, nb) in &set.pairs {
        ce = [ce[0] + e[0] * inv, ce[1] + e[1] * inv];
        cn = [cn[0] + nb[0] * inv, cn[1] + nb[1] * inv];
    }
    // the 2x2 cross-covariance reduces to its rotation-relevant dot and cross sums
    let (mut dot, mut crs) = (0.0, 0.0);
    for (e, nb) in &set.pairs {
        let a = [nb[0] - cn[0], nb[1] - cn[1]];
        let b = [e[0] - ce[0], e[1] - ce[1]];
        dot += a[0] * b[0] + a[1] * b[1];
        crs += a[0] * b[1] - a[1] * b[0];
    }
    let theta = if dot == 0.0 && crs == 0.0 { 0.0 } else { crs.atan2(dot) };
    let (s, c) = theta.sin_cos();
    let tx = ce[0] - (c * cn[0] - s * cn[1]);
    let ty = ce[1] - (s * cn[0] + c * cn[1]);
    Some((theta, tx, ty))
}

pub fn alignment_residual(set: &BoxMatchSet, theta: f64, tx: f64, ty: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    set.pairs
        .iter()
        .map(|(e, n)| {
            let x = c * n[0] - s * n[1] + tx - e[0];
            let y = s * n[0] + c * n[1] + ty - e[1];
            x * x + y * y
        })
        .sum()
}

/// Refines `init_rel` (ego from neighbor) by aligning neighbor detections,
/// already mapped through `init_rel`, onto the ego's own detections.
pub fn correct_relative_pose(
    init_rel: &Pose,
    ego_dets: &[Detection],
    neighbor_dets_in_ego: &[Detection],
    gate_radius: f64,
) -> Pose {
    let set = match_boxes(ego_dets, neighbor_dets_in_ego, gate_radius);
    match align_planar(&set) {
        Some((theta, tx, ty)) => Pose::from_planar(tx, ty, theta).compose(init_rel),
        None => *init_rel,
    }
}
