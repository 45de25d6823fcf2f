//! Multi-agent LiDAR-camera collaborative perception at desk scale:
//! synthetic sensing, cooperative depth, LiDAR-guided voxel fusion and
//! masked BEV feature sharing.

pub mod collab;
pub mod depth;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod nnkit;
pub mod rng;
pub mod robust;
pub mod scene;
pub mod voxel;

pub use collab::{run_round, CollabStrategy, DepthProjection, Message, Models, PipelineConfig, RoundOutput};
pub use depth::{DepthBins, DepthMap, PredictorMode};
pub use error::{Error, Result};
pub use eval::Detection;
pub use fusion::FusionStrategy;
pub use geometry::{CameraIntrinsics, Point3, Pose};
pub use robust::NoiseModel;
pub use scene::{generate_scene, ScenarioConfig, Scene};
pub use voxel::{BevFeature, Category, GridSpec, VoxelGrid};
