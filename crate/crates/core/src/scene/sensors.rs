use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::raycast::{Surface, World};
use super::{AgentState, LidarSpec, SensorRig};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Point3};

/// Channels of the synthetic image feature that carry information:
/// ground / wall / object one-hot, normalized inverse depth, bias.
pub const IMAGE_FEATURE_CHANNELS: usize = 5;

const CAMERA_MAX_RANGE: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarReturn {
    /// Point in the LiDAR frame.
    pub point: Point3,
    pub surface: Surface,
}

pub fn simulate_lidar_labeled(
    agent: &AgentState,
    world: &World<'_>,
    spec: &LidarSpec,
    rig: &SensorRig,
    rng: &mut impl Rng,
) -> Result<Vec<LidarReturn>> {
    if !agent.sensors.lidar {
        return Err(Error::SensorAbsent {
            agent: agent.id,
            sensor: "lidar",
        });
    }
    let world_from_lidar = agent.true_pose.compose(&rig.lidar_pose());
    let origin = world_from_lidar.translation_vector();
    let noise = (spec.range_noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.range_noise_sigma).expect("finite sigma"));

    let mut out = Vec::new();
    for i in 0..spec.n_azimuth {
        let az = std::f64::consts::TAU * f64::from(i) / f64::from(spec.n_azimuth);
        let (saz, caz) = az.sin_cos();
        for &el in &spec.elevation_angles {
            let (sel, cel) = el.sin_cos();
            let local = Vector3::new(cel * caz, cel * saz, sel);
            let dir = world_from_lidar.transform_vector(&local);
            let Some(hit) = world.cast(&origin, &dir, spec.max_range) else {
                continue;
            };
            let range = match &noise {
                Some(n) => hit.t + n.sample(rng),
                None => hit.t,
            };
            if range <= 0.0 {
                continue;
            }
            out.push(LidarReturn {
                point: Point3::from(local * range),
                surface: hit.surface,
            });
        }
    }
    Ok(out)
}

/// Ray-cast LiDAR scan; points are returned in the LiDAR frame.
pub fn simulate_lidar(
    agent: &AgentState,
    world: &World<'_>,
    spec: &LidarSpec,
    rig: &SensorRig,
    rng: &mut impl Rng,
) -> Result<Vec<Point3>> {
    Ok(simulate_lidar_labeled(agent, world, spec, rig, rng)?
        .into_iter()
        .map(|r| r.point)
        .collect())
}

/// Per-pixel z-depth; `f64::INFINITY` where the ray hits nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f64>,
}

impl DepthImage {
    pub fn at(&self, u: u32, v: u32) -> f64 {
        self.depth[v as usize * self.width as usize + u as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    /// Pixel-major, `channels` values per pixel.
    pub data: Vec<f64>,
}

impl FeatureImage {
    pub fn zeros(width: u32, height: u32, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width as usize * height as usize * channels],
        }
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub depth: DepthImage,
    pub features: FeatureImage,
    pub surfaces: Vec<Option<Surface>>,
}

/// Renders the first-hit depth image and the synthetic feature image.
/// `channels` must be at least [`IMAGE_FEATURE_CHANNELS`]; extra channels
/// are zero.
pub fn simulate_camera(
    agent: &AgentState,
    world: &World<'_>,
    intr: &CameraIntrinsics,
    rig: &SensorRig,
    channels: usize,
) -> Result<CameraFrame> {
    if !agent.sensors.camera {
        return Err(Error::SensorAbsent {
            agent: agent.id,
            sensor: "camera",
        });
    }
    assert!(channels >= IMAGE_FEATURE_CHANNELS, "feature image needs {IMAGE_FEATURE_CHANNELS} channels");
    let world_from_cam = agent.true_pose.compose(&rig.camera_pose());
    let origin = world_from_cam.translation_vector();
    let n = intr.pixel_count();
    let mut depth = vec![f64::INFINITY; n];
    let mut surfaces = vec![None; n];
    let mut features = FeatureImage::zeros(intr.width, intr.height, channels);

    for v in 0..intr.height {
        for u in 0..intr.width {
            let idx = intr.index(u, v);
            let ray = Vector3::new(
                (f64::from(u) - intr.u0) / intr.fx,
                (f64::from(v) - intr.v0) / intr.fy,
                1.0,
            );
            let len = ray.norm();
            let dir = world_from_cam.transform_vector(&(ray / len));
            let f = &mut features.data[idx * channels..(idx + 1) * channels];
            f[4] = 1.0;
            if let Some(hit) = world.cast(&origin, &dir, CAMERA_MAX_RANGE) {
                let d = hit.t / len;
                depth[idx] = d;
                surfaces[idx] = Some(hit.surface);
                let class = match hit.surface {
                    Surface::Ground => 0,
                    Surface::Wall(_) => 1,
                    Surface::Object(_) => 2,
                };
                f[class] = 1.0;
                f[3] = (1.0 / d).min(1.0);
            }
        }
    }

    Ok(CameraFrame {
        depth: DepthImage {
            width: intr.width,
            height: intr.height,
            depth,
        },
        features,
        surfaces,
    })
}
