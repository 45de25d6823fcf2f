//! LiDAR-guided fusion of the categorized voxel grid.
//!
//! Hybrid cells are fused with a LiDAR-conditioned gate, camera-only cells
//! survive only where attention from the LiDAR cells points at them, and
//! LiDAR / normal cells pass through unchanged. When one modality is absent
//! the surviving cells take the identity path.

use serde::{Deserialize, Serialize};

use crate::nnkit::{mha, relu, LinearMap, MhaParams};
use crate::voxel::{Category, CategorizedGrid, VoxelGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    /// C -> C, applied to the LiDAR cell to form the gate.
    pub lin1: LinearMap,
    /// 2C -> C, applied to `[gate * v_C, v_L]`.
    pub lin2: LinearMap,
    /// 2C -> C, the symmetric `[v_L, v_C]` map used by equal fusion.
    pub equal: LinearMap,
    pub guidance_mha: MhaParams,
    pub guidance_threshold: f64,
    /// Cap on LiDAR queries in the guidance attention.
    pub max_tokens: usize,
}

impl FusionParams {
    pub fn init_seeded(channels: usize, seed: u64) -> Self {
        let heads = if channels.is_multiple_of(2) { 2 } else { 1 };
        Self {
            lin1: LinearMap::init_seeded(channels, channels, seed ^ 0x11),
            lin2: LinearMap::init_seeded(channels, 2 * channels, seed ^ 0x12),
            equal: LinearMap::init_seeded(channels, 2 * channels, seed ^ 0x13),
            guidance_mha: MhaParams::init_seeded(channels, heads, seed ^ 0x14),
            guidance_threshold: 0.5,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    /// No modal fusion: the camera branch is ignored.
    #[serde(alias = "none")]
    LidarOnly,
    /// Symmetric concat + linear on hybrid cells, camera cells kept as-is.
    Equal,
    #[default]
    Biased,
}

/// `lin2([relu(lin1(v_L)) * v_C, v_L])`
pub fn fuse_hybrid_cell(params: &FusionParams, v_l: &[f64], v_c: &[f64]) -> Vec<f64> {
    let gate = relu(&params.lin1.apply(v_l));
    let mut stacked: Vec<f64> = gate.iter().zip(v_c).map(|(g, c)| g * c).collect();
    stacked.extend_from_slice(v_l);
    params.lin2.apply(&stacked)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceMask {
    /// Max-normalized attention score per camera cell, in `(0, 1]`.
    pub scores: Vec<f64>,
    pub keep: Vec<bool>,
}

/// `keep = score > threshold`
pub fn threshold_scores(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s > threshold).collect()
}

/// Evenly spaced subsample of at most `cap` indices out of `n`.
fn stride_sample(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    (0..cap).map(|i| i * n / cap).collect()
}

/// LiDAR cells attend over camera cells; each camera cell scores the
/// largest head-mean weight any query gives it, normalized by the largest
/// score overall. With no LiDAR cells every camera cell is kept.
pub fn compute_guidance(params: &FusionParams, lidar_cells: &[Vec<f64>], camera_cells: &[Vec<f64>]) -> GuidanceMask {
    if camera_cells.is_empty() {
        return GuidanceMask {
            scores: Vec::new(),
            keep: Vec::new(),
        };
    }
    if lidar_cells.is_empty() {
        return GuidanceMask {
            scores: vec![1.0; camera_cells.len()],
            keep: vec![true; camera_cells.len()],
        };
    }
    let queries: Vec<Vec<f64>> = stride_sample(lidar_cells.len(), params.max_tokens)
        .into_iter()
        .map(|i| lidar_cells[i].clone())
        .collect();
    let out = mha(&params.guidance_mha, &queries, camera_cells, camera_cells).expect("camera cells are non-empty");
    let mut raw = vec![0.0f64; camera_cells.len()];
    for row in &out.attn {
        for (r, &w) in raw.iter_mut().zip(row) {
            *r = r.max(w);
        }
    }
    let top = raw.iter().copied().fold(0.0, f64::max);
    let scores: Vec<f64> = raw.iter().map(|&r| r / top).collect();
    let keep = threshold_scores(&scores, params.guidance_threshold);
    GuidanceMask { scores, keep }
}

pub fn fuse_modalities(params: &FusionParams, grid: &CategorizedGrid, strategy: FusionStrategy) -> VoxelGrid {
    let spec = grid.spec;
    let mut out = VoxelGrid::empty(spec);

    let camera_idx: Vec<usize> = (0..spec.n_cells())
        .filter(|&i| grid.category[i] == Category::Camera)
        .collect();
    let keep_camera: Vec<bool> = match strategy {
        FusionStrategy::LidarOnly => vec![false; camera_idx.len()],
        FusionStrategy::Equal => vec![true; camera_idx.len()],
        FusionStrategy::Biased if camera_idx.is_empty() => Vec::new(),
        FusionStrategy::Biased => {
            let lidar_cells: Vec<Vec<f64>> = (0..spec.n_cells())
                .filter(|&i| matches!(grid.category[i], Category::Lidar | Category::Hybrid))
                .map(|i| grid.lidar_cell(i).to_vec())
                .collect();
            let camera_cells: Vec<Vec<f64>> = camera_idx.iter().map(|&i| grid.camera_cell(i).to_vec()).collect();
            compute_guidance(params, &lidar_cells, &camera_cells).keep
        }
    };

    for (&i, &keep) in camera_idx.iter().zip(&keep_camera) {
        if keep {
            out.cell_mut(i).copy_from_slice(grid.camera_cell(i));
            out.category[i] = Category::Camera;
        }
    }
    for i in 0..spec.n_cells() {
        match grid.category[i] {
            Category::Lidar => {
                out.cell_mut(i).copy_from_slice(grid.lidar_cell(i));
                out.category[i] = Category::Lidar;
            }
            Category::Hybrid => {
                let (v_l, v_c) = (grid.lidar_cell(i), grid.camera_cell(i));
                let (fused, cat) = match strategy {
                    FusionStrategy::LidarOnly => (v_l.to_vec(), Category::Lidar),
                    FusionStrategy::Equal => {
                        let stacked: Vec<f64> = v_l.iter().chain(v_c).copied().collect();
                        (params.equal.apply(&stacked), Category::Hybrid)
                    }
                    FusionStrategy::Biased => (fuse_hybrid_cell(params, v_l, v_c), Category::Hybrid),
                };
                out.cell_mut(i).copy_from_slice(&fused);
                out.category[i] = cat;
            }
            Category::Normal | Category::Camera => {}
        }
    }
    out
}
