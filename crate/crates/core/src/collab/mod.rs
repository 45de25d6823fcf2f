//! Modality-guided collaboration: which BEV cells an agent shares, how the
//! shared cells are packed and warped, and how the receiver aggregates them.

mod round;

pub use round::{
    run_round, AgentOutput, DepthProjection, MessageRecord, Models, Phase, PipelineConfig, PoseErrorRecord,
    RoundOutput,
};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Pose};
use crate::nnkit::{mha, LinearMap, MhaParams};
use crate::scene::AgentState;
use crate::voxel::{BevFeature, Category, GridSpec, VoxelGrid};

/// Transmission threshold for columns whose preferred voxel is hybrid.
pub const HYBRID_THRESHOLD: f64 = 0.0;
/// Transmission threshold for every other column.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub const SCORE_ALPHA: f64 = 4.0;
pub const SCORE_BETA: f64 = 1.0;

/// Scalars charged per transmitted depth point.
pub const SCALARS_PER_POINT: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    pub neighbors: Vec<Vec<usize>>,
}

impl CommGraph {
    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Agents are linked when their believed positions are within `comm_range`.
pub fn build_comm_graph(agents: &[AgentState], comm_range: f64) -> CommGraph {
    let pos: Vec<(f64, f64)> = agents
        .iter()
        .map(|a| {
            let (x, y, _) = a.believed_pose.planar();
            (x, y)
        })
        .collect();
    let neighbors = (0..agents.len())
        .map(|i| {
            (0..agents.len())
                .filter(|&j| j != i && (pos[i].0 - pos[j].0).hypot(pos[i].1 - pos[j].1) <= comm_range)
                .collect()
        })
        .collect();
    CommGraph { neighbors }
}

/// Rank in the preference order hybrid > LiDAR > camera > normal.
fn preference_rank(c: Category) -> u8 {
    match c {
        Category::Hybrid => 3,
        Category::Lidar => 2,
        Category::Camera => 1,
        Category::Normal => 0,
    }
}

pub fn preferred_category(column: &[Category]) -> Category {
    column
        .iter()
        .copied()
        .max_by_key(|&c| preference_rank(c))
        .unwrap_or(Category::Normal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceMap {
    pub nx: usize,
    pub ny: usize,
    pub thresholds: Vec<f64>,
}

pub fn preference_map(fused: &VoxelGrid) -> PreferenceMap {
    let spec = &fused.spec;
    let thresholds = fused
        .category
        .chunks_exact(spec.nz)
        .map(|column| {
            if preferred_category(column) == Category::Hybrid {
                HYBRID_THRESHOLD
            } else {
                DEFAULT_THRESHOLD
            }
        })
        .collect();
    PreferenceMap {
        nx: spec.nx,
        ny: spec.ny,
        thresholds,
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Importance per BEV cell, `sigmoid(4 * |f| / sqrt(dim) - 1)`.
pub fn importance_scores(bev: &BevFeature) -> Vec<f64> {
    let norm_scale = 1.0 / (bev.dim as f64).sqrt();
    (0..bev.n_cells())
        .map(|i| {
            let n = bev.cell(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            logistic(SCORE_ALPHA * n * norm_scale - SCORE_BETA)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfidenceMask {
    pub nx: usize,
    pub ny: usize,
    pub bits: Vec<bool>,
}

impl ConfidenceMask {
    pub fn full(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            bits: vec![true; nx * ny],
        }
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// A cell is shared iff its score is strictly above its threshold.
pub fn confidence_mask(scores: &[f64], pref: &PreferenceMap) -> Result<ConfidenceMask> {
    if scores.len() != pref.thresholds.len() {
        return Err(Error::SpecMismatch);
    }
    Ok(ConfidenceMask {
        nx: pref.nx,
        ny: pref.ny,
        bits: scores.iter().zip(&pref.thresholds).map(|(s, t)| s > t).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCell {
    pub x: usize,
    pub y: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sender_id: usize,
    pub sender_believed_pose: Pose,
    pub sparse_feature: Vec<SparseCell>,
    /// Down-sampled cloud in the sender's body frame.
    pub depth_payload: Option<Vec<Point3>>,
    pub volume_elements: usize,
}

impl Message {
    pub fn feature_elements(&self) -> usize {
        self.sparse_feature
            .iter()
            .map(|c| c.values.iter().filter(|&&v| v != 0.0).count())
            .sum()
    }

    pub fn depth_elements(&self) -> usize {
        self.depth_payload.as_ref().map_or(0, |p| SCALARS_PER_POINT * p.len())
    }
}

pub fn pack_message(
    sender_id: usize,
    bev: &BevFeature,
    mask: &ConfidenceMask,
    pose: &Pose,
    depth_payload: Option<Vec<Point3>>,
) -> Result<Message> {
    if mask.bits.len() != bev.n_cells() {
        return Err(Error::SpecMismatch);
    }
    let mut sparse_feature = Vec::new();
    for x in 0..bev.nx {
        for y in 0..bev.ny {
            let i = x * bev.ny + y;
            let values = bev.cell(i);
            if mask.bits[i] && values.iter().any(|&v| v != 0.0) {
                sparse_feature.push(SparseCell {
                    x,
                    y,
                    values: values.to_vec(),
                });
            }
        }
    }
    let mut msg = Message {
        sender_id,
        sender_believed_pose: *pose,
        sparse_feature,
        depth_payload,
        volume_elements: 0,
    };
    msg.volume_elements = msg.feature_elements() + msg.depth_elements();
    Ok(msg)
}

/// `log2(n)`, with `0` for an empty transmission.
pub fn comm_volume_log(total_elements: usize) -> f64 {
    if total_elements == 0 {
        0.0
    } else {
        (total_elements as f64).log2()
    }
}

/// Keeps the first point falling in each `cube`-sized voxel.
pub fn downsample_cloud(cloud: &[Point3], cube: f64) -> Vec<Point3> {
    let mut seen = HashSet::new();
    cloud
        .iter()
        .filter(|p| {
            let key = (
                (p.x / cube).floor() as i64,
                (p.y / cube).floor() as i64,
                (p.z / cube).floor() as i64,
            );
            seen.insert(key)
        })
        .copied()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    pub bev: BevFeature,
    /// Sparse cells that landed on an already written cell.
    pub collisions: usize,
    /// Sparse cells that left the grid.
    pub dropped: usize,
}

/// Moves sparse cells into the ego grid through the planar part of
/// `ego_from_sender`; later cells overwrite earlier ones.
pub fn warp_with_relative(msg: &Message, ego_from_sender: &Pose, spec: &GridSpec) -> Warped {
    let mut bev = BevFeature::for_spec(spec);
    let mut written = vec![false; spec.n_columns()];
    let (tx, ty, yaw) = ego_from_sender.planar();
    let (s, c) = yaw.sin_cos();
    let (mut collisions, mut dropped) = (0, 0);
    for cell in &msg.sparse_feature {
        let center = spec.cell_center(cell.x, cell.y, 0);
        let x = c * center.x - s * center.y + tx;
        let y = s * center.x + c * center.y + ty;
        let Some((ix, iy)) = spec.column_of(x, y) else {
            dropped += 1;
            continue;
        };
        let dst = spec.column_index(ix, iy);
        if written[dst] {
            collisions += 1;
        }
        written[dst] = true;
        bev.cell_mut(dst).copy_from_slice(&cell.values);
    }
    Warped {
        bev,
        collisions,
        dropped,
    }
}

pub fn warp_to_ego(msg: &Message, ego_pose: &Pose, spec: &GridSpec) -> Warped {
    warp_with_relative(msg, &ego_pose.inverse().compose(&msg.sender_believed_pose), spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollabStrategy {
    /// Element-wise max over the token stack.
    Max,
    /// `linear([ego, mean(neighbors)])`.
    Concat,
    #[default]
    Attention,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorParams {
    pub attention: MhaParams,
    pub concat: LinearMap,
}

impl AggregatorParams {
    pub fn init_seeded(dim: usize, seed: u64) -> Self {
        let heads = [4, 2, 1].into_iter().find(|h| dim.is_multiple_of(*h)).unwrap_or(1);
        Self {
            attention: MhaParams::init_seeded(dim, heads, seed ^ 0x21),
            concat: LinearMap::init_seeded(dim, 2 * dim, seed ^ 0x22),
        }
    }
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|&x| x == 0.0)
}

fn fuse_stack(strategy: CollabStrategy, params: &AggregatorParams, ego: &[f64], others: &[&[f64]]) -> Vec<f64> {
    match strategy {
        CollabStrategy::Attention => {
            let mut tokens = Vec::with_capacity(1 + others.len());
            tokens.push(ego.to_vec());
            tokens.extend(others.iter().map(|o| o.to_vec()));
            let out = mha(&params.attention, &tokens[..1], &tokens, &tokens).expect("stack holds the ego token");
            out.outputs.into_iter().next().expect("one query")
        }
        CollabStrategy::Max => {
            let mut acc = ego.to_vec();
            for o in others {
                for (a, &b) in acc.iter_mut().zip(o.iter()) {
                    *a = a.max(b);
                }
            }
            acc
        }
        CollabStrategy::Concat => {
            let mut stacked = ego.to_vec();
            let mut mean = vec![0.0; ego.len()];
            for o in others {
                for (m, &b) in mean.iter_mut().zip(o.iter()) {
                    *m += b / others.len() as f64;
                }
            }
            stacked.extend(mean);
            params.concat.apply(&stacked)
        }
    }
}

/// Aggregator output for a zero ego cell with no neighbor input.
pub fn empty_response(strategy: CollabStrategy, params: &AggregatorParams, dim: usize) -> Vec<f64> {
    fuse_stack(strategy, params, &vec![0.0; dim], &[])
}

/// Per-cell fusion of the ego BEV with warped neighbor BEVs. All-zero
/// neighbor cells are left out of the stack; the stack is ordered as given.
pub fn aggregate_with(
    strategy: CollabStrategy,
    params: &AggregatorParams,
    ego: &BevFeature,
    warped: &[BevFeature],
) -> Result<BevFeature> {
    if warped.iter().any(|w| !w.same_shape(ego)) {
        return Err(Error::SpecMismatch);
    }
    let mut out = BevFeature::zeros(ego.nx, ego.ny, ego.dim);
    let empty = empty_response(strategy, params, ego.dim);
    for i in 0..ego.n_cells() {
        let own = ego.cell(i);
        let others: Vec<&[f64]> = warped.iter().map(|w| w.cell(i)).filter(|c| !is_zero(c)).collect();
        if others.is_empty() && is_zero(own) {
            out.cell_mut(i).copy_from_slice(&empty);
            continue;
        }
        let fused = fuse_stack(strategy, params, own, &others);
        out.cell_mut(i).copy_from_slice(&fused);
    }
    Ok(out)
}

/// Attention aggregation: the ego token's output over `[ego, neighbors]`.
pub fn aggregate(params: &AggregatorParams, ego: &BevFeature, warped: &[BevFeature]) -> Result<BevFeature> {
    aggregate_with(CollabStrategy::Attention, params, ego, warped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeVolume {
    pub sender: usize,
    pub receiver: usize,
    pub feature_elements: usize,
    pub depth_elements: usize,
}

impl EdgeVolume {
    pub fn total(&self) -> usize {
        self.feature_elements + self.depth_elements
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VolumeLedger {
    pub edges: Vec<EdgeVolume>,
}

impl VolumeLedger {
    pub fn feature_elements(&self) -> usize {
        self.edges.iter().map(|e| e.feature_elements).sum()
    }

    pub fn depth_elements(&self) -> usize {
        self.edges.iter().map(|e| e.depth_elements).sum()
    }

    pub fn total_elements(&self) -> usize {
        self.edges.iter().map(EdgeVolume::total).sum()
    }

    pub fn total_log2(&self) -> f64 {
        comm_volume_log(self.total_elements())
    }

    pub fn mean_edge_elements(&self) -> f64 {
        if self.edges.is_empty() {
            0.0
        } else {
            self.total_elements() as f64 / self.edges.len() as f64
        }
    }
}
