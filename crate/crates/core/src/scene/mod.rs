//! Seeded synthetic worlds and the ray-cast LiDAR / camera simulators.

mod raycast;
mod sensors;

pub use raycast::{ray_box, ray_ground, ray_wall, Hit, Surface, World};
pub use sensors::{
    simulate_camera, simulate_lidar, simulate_lidar_labeled, CameraFrame, DepthImage,
    FeatureImage, LidarReturn, IMAGE_FEATURE_CHANNELS,
};

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{body_from_camera_rotation, CameraIntrinsics, Pose};
use crate::rng::{stream_rng, Stream};
use crate::robust::{perturb_pose, NoiseModel};

/// Attempts allowed across all rejection-sampling loops of one scene.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Radius of the free disc an agent needs around its origin.
pub const AGENT_RADIUS: f64 = 2.5;

const CLEARANCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxObject {
    pub id: u32,
    /// Footprint center `(x, y)` in meters.
    pub center: [f64; 2],
    pub yaw: f64,
    /// `(length, width, height)`.
    pub extent: [f64; 3],
}

impl BoxObject {
    pub fn footprint_radius(&self) -> f64 {
        0.5 * self.extent[0].hypot(self.extent[1])
    }

    /// Footprint corners, counter-clockwise.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.extent[0];
        let hw = 0.5 * self.extent[1];
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(a, b)| {
            [
                self.center[0] + c * a - s * b,
                self.center[1] + s * a + c * b,
            ]
        })
    }

    /// The same box expressed in the frame of `frame` (frame_from_world given
    /// as `frame.inverse()`); only the planar part of `frame` is used.
    pub fn in_frame(&self, frame: &Pose) -> BoxObject {
        let (fx, fy, fyaw) = frame.planar();
        let (s, c) = fyaw.sin_cos();
        let dx = self.center[0] - fx;
        let dy = self.center[1] - fy;
        BoxObject {
            center: [c * dx + s * dy, -s * dx + c * dy],
            yaw: self.yaw - fyaw,
            ..self.clone()
        }
    }
}

/// Opaque vertical rectangle from `start` to `end`, standing on the ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub height: f64,
}

impl Wall {
    fn distance_to(&self, p: [f64; 2]) -> f64 {
        let ex = self.end[0] - self.start[0];
        let ey = self.end[1] - self.start[1];
        let len2 = ex * ex + ey * ey;
        let s = if len2 > 0.0 {
            (((p[0] - self.start[0]) * ex + (p[1] - self.start[1]) * ey) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (p[0] - self.start[0] - s * ex).hypot(p[1] - self.start[1] - s * ey)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarSpec {
    pub n_azimuth: u32,
    /// Ring elevations in radians.
    pub elevation_angles: Vec<f64>,
    pub max_range: f64,
    pub range_noise_sigma: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        let rings = 16;
        let (lo, hi) = (-15f64.to_radians(), 1f64.to_radians());
        Self {
            n_azimuth: 720,
            elevation_angles: (0..rings)
                .map(|i| lo + (hi - lo) * i as f64 / (rings - 1) as f64)
                .collect(),
            max_range: 50.0,
            range_noise_sigma: 0.02,
        }
    }
}

/// Sensor mounting relative to the agent body frame (x forward, y left,
/// z up, origin on the ground).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorRig {
    pub lidar_mount: [f64; 3],
    pub camera_mount: [f64; 3],
    /// Camera heading relative to the body x axis.
    pub camera_yaw: f64,
}

impl Default for SensorRig {
    fn default() -> Self {
        Self {
            lidar_mount: [0.0, 0.0, 1.5],
            camera_mount: [0.0, 0.0, 1.5],
            camera_yaw: 0.0,
        }
    }
}

impl SensorRig {
    /// body_from_lidar
    pub fn lidar_pose(&self) -> Pose {
        let [x, y, z] = self.lidar_mount;
        Pose::translation(x, y, z)
    }

    /// body_from_camera, with the camera's optical axis along the rotated
    /// body x axis.
    pub fn camera_pose(&self) -> Pose {
        let [x, y, z] = self.camera_mount;
        Pose::from_xyz_yaw(x, y, z, self.camera_yaw).compose(&Pose::from_rotation_translation(
            body_from_camera_rotation(),
            Vector3::zeros(),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sensor {
    Lidar,
    Camera,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub agent: usize,
    pub absent: Vec<Sensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_agents: usize,
    /// `(x_min, x_max, y_min, y_max)` in meters.
    pub area: [f64; 4],
    /// Number of randomly placed objects, in addition to `objects`.
    pub n_objects: usize,
    pub occluders: Vec<Wall>,
    pub lidar: LidarSpec,
    pub camera: CameraIntrinsics,
    pub rig: SensorRig,
    pub comm_range: f64,
    pub dropout: Vec<Dropout>,
    pub pose_noise_sigma_xy: f64,
    pub pose_noise_sigma_yaw: f64,
    /// Fixed agent placements; agents beyond this list are placed randomly.
    pub agents: Vec<Placement>,
    /// Fixed objects, always present.
    pub objects: Vec<BoxObject>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_agents: 2,
            area: [-20.0, 20.0, -20.0, 20.0],
            n_objects: 10,
            occluders: Vec::new(),
            lidar: LidarSpec::default(),
            camera: CameraIntrinsics::default(),
            rig: SensorRig::default(),
            comm_range: 40.0,
            dropout: Vec::new(),
            pose_noise_sigma_xy: 0.0,
            pose_noise_sigma_yaw: 0.0,
            agents: Vec::new(),
            objects: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 1 {
            return Err(Error::config("scenario.n_agents", "must be at least 1"));
        }
        if self.agents.len() > self.n_agents {
            return Err(Error::config("scenario.agents", "more placements than n_agents"));
        }
        let [x0, x1, y0, y1] = self.area;
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::config("scenario.area", "degenerate area"));
        }
        if !(self.comm_range > 0.0) {
            return Err(Error::config("scenario.comm_range", "must be positive"));
        }
        if self.lidar.n_azimuth < 4 {
            return Err(Error::config("scenario.lidar.n_azimuth", "must be at least 4"));
        }
        if !(self.lidar.max_range > 0.0) {
            return Err(Error::config("scenario.lidar.max_range", "must be positive"));
        }
        if self.lidar.range_noise_sigma < 0.0 {
            return Err(Error::config("scenario.lidar.range_noise_sigma", "must be non-negative"));
        }
        if !self.camera.is_valid() {
            return Err(Error::config("scenario.camera", "invalid intrinsics"));
        }
        if self.pose_noise_sigma_xy < 0.0 || self.pose_noise_sigma_yaw < 0.0 {
            return Err(Error::config("scenario.pose_noise_sigma", "must be non-negative"));
        }
        for (i, obj) in self.objects.iter().enumerate() {
            if obj.extent.iter().any(|&e| !(e > 0.0)) {
                return Err(Error::config(format!("scenario.objects[{i}].extent"), "must be positive"));
            }
        }
        for (i, d) in self.dropout.iter().enumerate() {
            if d.agent >= self.n_agents {
                return Err(Error::config(format!("scenario.dropout[{i}].agent"), "no such agent"));
            }
            if d.absent.contains(&Sensor::Lidar) && d.absent.contains(&Sensor::Camera) {
                return Err(Error::config(
                    format!("scenario.dropout[{i}].absent"),
                    "an agent needs at least one sensor",
                ));
            }
        }
        Ok(())
    }

    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel {
            sigma_xy: self.pose_noise_sigma_xy,
            sigma_yaw: self.pose_noise_sigma_yaw,
            seed: self.seed,
        }
    }

    pub fn sensors_for(&self, agent: usize) -> SensorSet {
        let mut set = SensorSet::default();
        for d in self.dropout.iter().filter(|d| d.agent == agent) {
            for s in &d.absent {
                match s {
                    Sensor::Lidar => set.lidar = false,
                    Sensor::Camera => set.camera = false,
                }
            }
        }
        set
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorSet {
    pub lidar: bool,
    pub camera: bool,
}

impl Default for SensorSet {
    fn default() -> Self {
        Self {
            lidar: true,
            camera: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: usize,
    /// world_from_body
    pub true_pose: Pose,
    /// world_from_body as the agent believes it, after localization noise.
    pub believed_pose: Pose,
    pub sensors: SensorSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub agents: Vec<AgentState>,
    pub objects: Vec<BoxObject>,
    pub occluders: Vec<Wall>,
}

impl Scene {
    pub fn world(&self) -> World<'_> {
        World::new(&self.objects, &self.occluders)
    }
}

fn sample_in(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        0.5 * (lo + hi)
    }
}

pub fn generate_scene(cfg: &ScenarioConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, 0, Stream::Scene);
    let [x0, x1, y0, y1] = cfg.area;
    let mut attempts = 0usize;

    let mut objects = cfg.objects.clone();
    let mut next_id = objects.iter().map(|o| o.id + 1).max().unwrap_or(0);
    while objects.len() < cfg.objects.len() + cfg.n_objects {
        attempts += 1;
        if attempts > MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::GenerationFailure { attempts: attempts - 1 });
        }
        let extent = [
            rng.random_range(3.8..4.8),
            rng.random_range(1.7..2.1),
            rng.random_range(1.4..1.8),
        ];
        let candidate = BoxObject {
            id: next_id,
            center: [sample_in(&mut rng, x0 + 1.0, x1 - 1.0), sample_in(&mut rng, y0 + 1.0, y1 - 1.0)],
            yaw: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            extent,
        };
        let r = candidate.footprint_radius();
        let clear_objects = objects.iter().all(|o| {
            dist(o.center, candidate.center) >= o.footprint_radius() + r + CLEARANCE
        });
        let clear_walls = cfg
            .occluders
            .iter()
            .all(|w| w.distance_to(candidate.center) >= r + CLEARANCE);
        let clear_agents = cfg
            .agents
            .iter()
            .all(|a| dist([a.x, a.y], candidate.center) >= r + AGENT_RADIUS + CLEARANCE);
        if clear_objects && clear_walls && clear_agents {
            objects.push(candidate);
            next_id += 1;
        }
    }

    let mut placements = cfg.agents.clone();
    while placements.len() < cfg.n_agents {
        attempts += 1;
        if attempts > MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::GenerationFailure { attempts: attempts - 1 });
        }
        let p = Placement {
            x: sample_in(&mut rng, x0 + AGENT_RADIUS, x1 - AGENT_RADIUS),
            y: sample_in(&mut rng, y0 + AGENT_RADIUS, y1 - AGENT_RADIUS),
            yaw: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        };
        let free = objects
            .iter()
            .all(|o| dist(o.center, [p.x, p.y]) >= o.footprint_radius() + AGENT_RADIUS + CLEARANCE)
            && cfg
                .occluders
                .iter()
                .all(|w| w.distance_to([p.x, p.y]) >= AGENT_RADIUS + CLEARANCE)
            && placements
                .iter()
                .all(|q| dist([q.x, q.y], [p.x, p.y]) >= 2.0 * AGENT_RADIUS);
        if free {
            placements.push(p);
        }
    }

    let noise = cfg.noise_model();
    let agents = placements
        .iter()
        .enumerate()
        .map(|(id, p)| {
            let true_pose = Pose::from_planar(p.x, p.y, p.yaw);
            let mut noise_rng = stream_rng(cfg.seed, id as u64, Stream::PoseNoise);
            AgentState {
                id,
                true_pose,
                believed_pose: perturb_pose(&true_pose, &noise, &mut noise_rng),
                sensors: cfg.sensors_for(id),
            }
        })
        .collect();

    Ok(Scene {
        agents,
        objects,
        occluders: cfg.occluders.clone(),
    })
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
