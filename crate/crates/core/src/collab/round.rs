//! One synchronous collaboration round over a scene.
//!
//! Phase 1 exchanges poses, local detections and depth payloads; every
//! agent then runs cooperative depth, fusion and masking. Phase 2 exchanges
//! masked BEV features; every agent warps, aggregates and decodes.

use serde::{Deserialize, Serialize};

use super::{
    aggregate_with, build_comm_graph, comm_volume_log, confidence_mask, downsample_cloud, empty_response,
    importance_scores, pack_message, preference_map, warp_with_relative, AggregatorParams, CollabStrategy,
    ConfidenceMask, EdgeVolume, Message, PreferenceMap, VolumeLedger,
};
use crate::depth::{
    finalize_distribution, merge_cooperative, predict_depth, project_cloud_to_depthmap, DepthBins, DepthMap,
    PredictorMode,
};
use crate::error::Result;
use crate::eval::Detection;
use crate::fusion::{fuse_modalities, FusionParams, FusionStrategy};
use crate::geometry::{transform_points, Point3, Pose};
use crate::rng::{stream_rng, Stream};
use crate::robust::{
    column_occupancy, components, correct_relative_pose, detect_local, fit_component, Grow, transform_detections, DetectorConfig,
    DEFAULT_GATE_RADIUS,
};
use crate::scene::{simulate_camera, simulate_lidar, AgentState, ScenarioConfig, Scene, SensorSet};
use crate::voxel::{categorize, collapse, lift_camera, voxelize_points, BevFeature, GridSpec, VoxelGrid};

/// Footprint the local detector completes partial views to, the middle of
/// the generated object sizes.
pub const LOCAL_PRIOR_EXTENT: [f64; 2] = [4.3, 1.9];

/// Which LiDAR depths seed the camera depth map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthProjection {
    NoProj,
    EgoProj,
    #[default]
    AllProj,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub grid: GridSpec,
    pub bins: DepthBins,
    pub predictor: PredictorMode,
    /// Minimum lifted probability mass for a camera cell to survive.
    pub mass_threshold: f64,
    pub fusion: FusionStrategy,
    pub depth: DepthProjection,
    pub collab: CollabStrategy,
    /// Correct relative poses from matched local detections.
    pub robust: bool,
    pub gate_radius: f64,
    /// Edge of the dedup cube applied to shared clouds.
    pub payload_cube: f64,
    pub local_detector: DetectorConfig,
    /// Detector applied to the aggregated evidence map.
    pub decoder: DetectorConfig,
    /// Send every nonzero cell instead of the masked subset.
    pub full_broadcast: bool,
    /// Seed of the frozen fusion and aggregation weights.
    pub model_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            bins: DepthBins::default(),
            predictor: PredictorMode::default(),
            mass_threshold: 0.05,
            fusion: FusionStrategy::default(),
            depth: DepthProjection::default(),
            collab: CollabStrategy::default(),
            robust: false,
            gate_radius: DEFAULT_GATE_RADIUS,
            payload_cube: 0.5,
            local_detector: DetectorConfig {
                threshold: 0.0,
                min_cells: 2,
                prior_extent: Some(LOCAL_PRIOR_EXTENT),
                grow: Grow::AwayFromSensor,
            },
            decoder: DetectorConfig {
                threshold: 0.3,
                min_cells: 2,
                prior_extent: Some(LOCAL_PRIOR_EXTENT),
                grow: Grow::AwayFromSensor,
            },
            full_broadcast: false,
            model_seed: 7,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        self.grid.validate()?;
        self.bins.validate()?;
        if !(self.mass_threshold >= 0.0) {
            return Err(Error::config("pipeline.mass_threshold", "must be non-negative"));
        }
        if !(self.gate_radius > 0.0) {
            return Err(Error::config("pipeline.gate_radius", "must be positive"));
        }
        if !(self.payload_cube > 0.0) {
            return Err(Error::config("pipeline.payload_cube", "must be positive"));
        }
        Ok(())
    }
}

/// Frozen weights shared by every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub fusion: FusionParams,
    pub aggregator: AggregatorParams,
}

impl Models {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Self {
            fusion: FusionParams::init_seeded(cfg.grid.channels, cfg.model_seed),
            aggregator: AggregatorParams::init_seeded(cfg.grid.bev_dim(), cfg.model_seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Depth,
    Feature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub phase: Phase,
    pub sender: usize,
    pub receiver: usize,
    pub elements: usize,
    pub log_volume: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseErrorRecord {
    pub receiver: usize,
    pub sender: usize,
    /// Translation error of the relative pose from believed poses.
    pub before: f64,
    /// Same, after correction (equal to `before` when correction is off).
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutput {
    pub id: usize,
    pub sensors: SensorSet,
    /// Camera depth map after projection, before prediction fills the gaps.
    pub depth_map: Option<DepthMap>,
    pub fused: VoxelGrid,
    pub bev: BevFeature,
    pub preference: PreferenceMap,
    pub mask: ConfidenceMask,
    pub aggregated: BevFeature,
    /// Per-column distance of the aggregate from the empty-cell response.
    pub evidence: Vec<f64>,
    /// Decoded boxes in this agent's body frame.
    pub detections: Vec<Detection>,
    /// LiDAR-only boxes used for pose correction.
    pub local_detections: Vec<Detection>,
    pub warp_collisions: usize,
    /// Reasons this agent ran a reduced pipeline.
    pub degraded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput {
    pub agents: Vec<AgentOutput>,
    pub ledger: VolumeLedger,
    pub messages: Vec<MessageRecord>,
    pub pose_errors: Vec<PoseErrorRecord>,
}

impl RoundOutput {
    pub fn mean_pose_error(&self) -> (f64, f64) {
        if self.pose_errors.is_empty() {
            return (0.0, 0.0);
        }
        let n = self.pose_errors.len() as f64;
        (
            self.pose_errors.iter().map(|e| e.before).sum::<f64>() / n,
            self.pose_errors.iter().map(|e| e.after).sum::<f64>() / n,
        )
    }
}

struct Sensed {
    /// LiDAR cloud in the body frame.
    cloud: Option<Vec<Point3>>,
    local_detections: Vec<Detection>,
    lidar_grid: VoxelGrid,
    degraded: Vec<String>,
}

fn sense(agent: &AgentState, scene: &Scene, scenario: &ScenarioConfig, cfg: &PipelineConfig) -> Sensed {
    let mut degraded = Vec::new();
    let mut rng = stream_rng(scenario.seed, agent.id as u64, Stream::Lidar);
    let cloud = match simulate_lidar(agent, &scene.world(), &scenario.lidar, &scenario.rig, &mut rng) {
        Ok(pts) => Some(transform_points(&scenario.rig.lidar_pose(), &pts)),
        Err(e) => {
            degraded.push(e.to_string());
            None
        }
    };
    let lidar_grid = match &cloud {
        Some(pts) => voxelize_points(pts, &cfg.grid),
        None => VoxelGrid::empty(cfg.grid),
    };
    let local_detections = if cloud.is_some() {
        detect_local(&column_occupancy(&lidar_grid), &cfg.grid, &cfg.local_detector)
    } else {
        Vec::new()
    };
    Sensed {
        cloud,
        local_detections,
        lidar_grid,
        degraded,
    }
}

fn translation_error(a: &Pose, b: &Pose) -> f64 {
    (a.translation_vector() - b.translation_vector()).norm()
}

/// Camera branch: cooperative depth, prediction and lifting. `None` when the
/// camera is absent, unused, or fails.
fn camera_grid(
    agent: &AgentState,
    scene: &Scene,
    scenario: &ScenarioConfig,
    cfg: &PipelineConfig,
    own_cloud: Option<&[Point3]>,
    neighbor_clouds: Vec<(Pose, Vec<Point3>)>,
    degraded: &mut Vec<String>,
) -> Option<(VoxelGrid, DepthMap)> {
    if cfg.fusion == FusionStrategy::LidarOnly {
        return None;
    }
    let frame = match simulate_camera(agent, &scene.world(), &scenario.camera, &scenario.rig, cfg.grid.channels) {
        Ok(f) => f,
        Err(e) => {
            degraded.push(e.to_string());
            return None;
        }
    };
    let intr = &scenario.camera;
    let cam_from_body = scenario.rig.camera_pose().inverse();
    let ego_map = match (cfg.depth, own_cloud) {
        (DepthProjection::NoProj, _) | (_, None) => DepthMap::empty(intr.width, intr.height),
        (_, Some(cloud)) => {
            project_cloud_to_depthmap(&transform_points(&cam_from_body, cloud), intr, &cfg.bins)
        }
    };
    let map = if cfg.depth == DepthProjection::AllProj {
        let shifted: Vec<(Pose, Vec<Point3>)> = neighbor_clouds
            .into_iter()
            .map(|(rel, cloud)| (cam_from_body.compose(&rel), cloud))
            .collect();
        merge_cooperative(&ego_map, &shifted, intr, &cfg.bins)
    } else {
        ego_map
    };
    let predicted = predict_depth(&frame.depth, cfg.predictor, &cfg.bins);
    let lifted = finalize_distribution(&map, &predicted).and_then(|dist| {
        lift_camera(
            &frame.features,
            &dist,
            intr,
            &cfg.bins,
            &scenario.rig.camera_pose(),
            &cfg.grid,
            cfg.mass_threshold,
        )
    });
    match lifted {
        Ok((grid, _)) => Some((grid, map)),
        Err(e) => {
            degraded.push(e.to_string());
            None
        }
    }
}

fn record(messages: &mut Vec<MessageRecord>, phase: Phase, sender: usize, receiver: usize, elements: usize) {
    messages.push(MessageRecord {
        phase,
        sender,
        receiver,
        elements,
        log_volume: comm_volume_log(elements),
    });
}

pub fn run_round(scene: &Scene, scenario: &ScenarioConfig, cfg: &PipelineConfig, models: &Models) -> RoundOutput {
    let n = scene.agents.len();
    let graph = build_comm_graph(&scene.agents, scenario.comm_range);
    let sensed: Vec<Sensed> = scene.agents.iter().map(|a| sense(a, scene, scenario, cfg)).collect();

    // phase 1: poses, detections and depth payloads
    let payloads: Vec<Option<Vec<Point3>>> = sensed
        .iter()
        .map(|s| match (&s.cloud, cfg.depth) {
            (Some(cloud), DepthProjection::AllProj) => Some(downsample_cloud(cloud, cfg.payload_cube)),
            _ => None,
        })
        .collect();
    let mut messages = Vec::new();
    let mut depth_charge = vec![vec![0usize; n]; n];
    let mut pose_errors = Vec::new();
    // rel[i][j]: receiver i's estimate of body_i from body_j
    let mut rel = vec![vec![Pose::identity(); n]; n];
    for i in 0..n {
        for &j in &graph.neighbors[i] {
            if let Some(p) = &payloads[j] {
                depth_charge[j][i] = 3 * p.len();
                record(&mut messages, Phase::Depth, j, i, 3 * p.len());
            }
            let (ai, aj) = (&scene.agents[i], &scene.agents[j]);
            let init = ai.believed_pose.inverse().compose(&aj.believed_pose);
            let est = if cfg.robust {
                let theirs = transform_detections(&sensed[j].local_detections, &init);
                correct_relative_pose(&init, &sensed[i].local_detections, &theirs, cfg.gate_radius)
            } else {
                init
            };
            let truth = ai.true_pose.inverse().compose(&aj.true_pose);
            pose_errors.push(PoseErrorRecord {
                receiver: i,
                sender: j,
                before: translation_error(&init, &truth),
                after: translation_error(&est, &truth),
            });
            rel[i][j] = est;
        }
    }

    struct Local {
        depth_map: Option<DepthMap>,
        fused: VoxelGrid,
        bev: BevFeature,
        preference: PreferenceMap,
        mask: ConfidenceMask,
        message: Message,
        degraded: Vec<String>,
    }
    let mut locals = Vec::with_capacity(n);
    for (i, agent) in scene.agents.iter().enumerate() {
        let s = &sensed[i];
        let mut degraded = s.degraded.clone();
        let neighbor_clouds = graph.neighbors[i]
            .iter()
            .filter_map(|&j| payloads[j].as_ref().map(|p| (rel[i][j], p.clone())))
            .collect();
        let camera = camera_grid(agent, scene, scenario, cfg, s.cloud.as_deref(), neighbor_clouds, &mut degraded);
        let (camera_grid, depth_map) = match camera {
            Some((g, m)) => (g, Some(m)),
            None => (VoxelGrid::empty(cfg.grid), None),
        };
        let fused = match categorize(&s.lidar_grid, &camera_grid) {
            Ok(grid) => fuse_modalities(&models.fusion, &grid, cfg.fusion),
            Err(e) => {
                degraded.push(e.to_string());
                s.lidar_grid.clone()
            }
        };
        let bev = collapse(&fused);
        let preference = preference_map(&fused);
        let mask = if cfg.full_broadcast {
            ConfidenceMask::full(bev.nx, bev.ny)
        } else {
            confidence_mask(&importance_scores(&bev), &preference).expect("scores and preference share the grid")
        };
        let message =
            pack_message(agent.id, &bev, &mask, &agent.believed_pose, None).expect("mask and BEV share the grid");
        locals.push(Local {
            depth_map,
            fused,
            bev,
            preference,
            mask,
            message,
            degraded,
        });
    }

    // phase 2: masked features, warp, aggregate, decode
    let dim = cfg.grid.bev_dim();
    let empty = empty_response(cfg.collab, &models.aggregator, dim);
    let mut ledger = VolumeLedger::default();
    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let mut senders = graph.neighbors[i].clone();
        senders.sort_by_key(|&j| scene.agents[j].id);
        let mut warped = Vec::with_capacity(senders.len());
        let mut collisions = 0;
        for &j in &senders {
            let msg = &locals[j].message;
            record(&mut messages, Phase::Feature, j, i, msg.volume_elements);
            ledger.edges.push(EdgeVolume {
                sender: j,
                receiver: i,
                feature_elements: msg.feature_elements(),
                depth_elements: depth_charge[j][i],
            });
            let w = warp_with_relative(msg, &rel[i][j], &cfg.grid);
            collisions += w.collisions;
            warped.push(w.bev);
        }
        let local = &locals[i];
        let aggregated =
            aggregate_with(cfg.collab, &models.aggregator, &local.bev, &warped).expect("warped BEVs share the grid");
        let evidence: Vec<f64> = (0..aggregated.n_cells())
            .map(|c| {
                aggregated
                    .cell(c)
                    .iter()
                    .zip(&empty)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        // each box grows away from the viewpoint that saw most of its cells
        let viewpoints: Vec<[f64; 2]> = std::iter::once([0.0, 0.0])
            .chain(senders.iter().map(|&j| {
                let t = rel[i][j].translation_vector();
                [t.x, t.y]
            }))
            .collect();
        let sources: Vec<&BevFeature> = std::iter::once(&local.bev).chain(&warped).collect();
        let detections = components(&evidence, &cfg.grid, &cfg.decoder)
            .iter()
            .filter_map(|members| {
                let seen_by = |src: &&BevFeature| members.iter().filter(|&&c| src.cell(c).iter().any(|&v| v != 0.0)).count();
                let best = (0..sources.len()).max_by_key(|&k| (seen_by(&sources[k]), std::cmp::Reverse(k)))?;
                fit_component(&evidence, members, &cfg.grid, &cfg.decoder, viewpoints[best])
            })
            .collect();
        agents.push(AgentOutput {
            id: scene.agents[i].id,
            sensors: scene.agents[i].sensors,
            depth_map: local.depth_map.clone(),
            fused: local.fused.clone(),
            bev: local.bev.clone(),
            preference: local.preference.clone(),
            mask: local.mask.clone(),
            aggregated,
            evidence,
            detections,
            local_detections: sensed[i].local_detections.clone(),
            warp_collisions: collisions,
            degraded: local.degraded.clone(),
        });
    }
    RoundOutput {
        agents,
        ledger,
        messages,
        pose_errors,
    }
}
