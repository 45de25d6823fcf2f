//! Voxel grids in the ego body frame: LiDAR voxelization, camera feature
//! lifting, modality categorization and the collapse to a BEV feature map.

use serde::{Deserialize, Serialize};

use crate::depth::{DepthBins, DepthDistribution};
use crate::error::{Error, Result};
use crate::geometry::{unproject, CameraIntrinsics, PixelDepth, Point3, Pose};
use crate::scene::FeatureImage;

/// Upper bound on `nx * ny * nz * channels`.
pub const MAX_GRID_SCALARS: usize = 1 << 26;

/// Channels written by [`voxelize_points`]: log count, mean offset (3),
/// mean height.
pub const LIDAR_FEATURE_CHANNELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub z_range: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub channels: usize,
}

impl Default for GridSpec {
    /// 64 x 64 x 8 cells over 40 m x 40 m x 4 m. The vertical range starts
    /// just above the ground so that ground returns fall outside the grid.
    fn default() -> Self {
        Self {
            x_range: [-20.0, 20.0],
            y_range: [-20.0, 20.0],
            z_range: [0.3, 4.3],
            nx: 64,
            ny: 64,
            nz: 8,
            channels: 8,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |r: [f64; 2]| r[1] > r[0];
        if !(positive(self.x_range) && positive(self.y_range) && positive(self.z_range)) {
            return Err(Error::config("grid", "ranges must have positive extent"));
        }
        if self.nx == 0 || self.ny == 0 || self.nz == 0 || self.channels == 0 {
            return Err(Error::config("grid", "cell counts must be positive"));
        }
        if self.channels < LIDAR_FEATURE_CHANNELS {
            return Err(Error::config("grid.channels", "need at least 5 channels"));
        }
        let scalars = self
            .nx
            .checked_mul(self.ny)
            .and_then(|v| v.checked_mul(self.nz))
            .and_then(|v| v.checked_mul(self.channels));
        if scalars.is_none_or(|s| s > MAX_GRID_SCALARS) {
            return Err(Error::config("grid", "grid too large"));
        }
        Ok(())
    }

    pub fn cell_size(&self) -> [f64; 3] {
        [
            (self.x_range[1] - self.x_range[0]) / self.nx as f64,
            (self.y_range[1] - self.y_range[0]) / self.ny as f64,
            (self.z_range[1] - self.z_range[0]) / self.nz as f64,
        ]
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn n_columns(&self) -> usize {
        self.nx * self.ny
    }

    pub fn bev_dim(&self) -> usize {
        self.channels * self.nz
    }

    /// Linear cell index; z varies fastest.
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.ny + iy) * self.nz + iz
    }

    pub fn column_index(&self, ix: usize, iy: usize) -> usize {
        ix * self.ny + iy
    }

    pub fn cell_of(&self, p: &Point3) -> Option<(usize, usize, usize)> {
        let s = self.cell_size();
        let f = |v: f64, r: [f64; 2], size: f64, n: usize| {
            if !(v >= r[0] && v < r[1]) {
                return None;
            }
            Some((((v - r[0]) / size) as usize).min(n - 1))
        };
        Some((
            f(p.x, self.x_range, s[0], self.nx)?,
            f(p.y, self.y_range, s[1], self.ny)?,
            f(p.z, self.z_range, s[2], self.nz)?,
        ))
    }

    /// Planar column containing `(x, y)`.
    pub fn column_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (ix, iy, _) = self.cell_of(&Point3::new(x, y, self.z_range[0]))?;
        Some((ix, iy))
    }

    pub fn cell_center(&self, ix: usize, iy: usize, iz: usize) -> Point3 {
        let s = self.cell_size();
        Point3::new(
            self.x_range[0] + (ix as f64 + 0.5) * s[0],
            self.y_range[0] + (iy as f64 + 0.5) * s[1],
            self.z_range[0] + (iz as f64 + 0.5) * s[2],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Normal,
    Lidar,
    Camera,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    /// `channels` values per cell, cells in [`GridSpec::index`] order.
    pub features: Vec<f64>,
    pub category: Vec<Category>,
}

impl VoxelGrid {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            spec,
            features: vec![0.0; spec.n_cells() * spec.channels],
            category: vec![Category::Normal; spec.n_cells()],
        }
    }

    pub fn cell(&self, index: usize) -> &[f64] {
        let c = self.spec.channels;
        &self.features[index * c..(index + 1) * c]
    }

    pub fn cell_mut(&mut self, index: usize) -> &mut [f64] {
        let c = self.spec.channels;
        &mut self.features[index * c..(index + 1) * c]
    }

    pub fn count(&self, cat: Category) -> usize {
        self.category.iter().filter(|&&c| c == cat).count()
    }
}

/// Pillar-style analytic encoding per occupied cell:
/// `[ln(1 + n), mean offset from cell center (x, y, z), mean height, 0...]`.
pub fn voxelize_points(cloud: &[Point3], spec: &GridSpec) -> VoxelGrid {
    let mut grid = VoxelGrid::empty(*spec);
    let mut counts = vec![0u32; spec.n_cells()];
    let mut sums = vec![[0.0f64; 3]; spec.n_cells()];
    for p in cloud {
        let Some((ix, iy, iz)) = spec.cell_of(p) else { continue };
        let i = spec.index(ix, iy, iz);
        counts[i] += 1;
        sums[i][0] += p.x;
        sums[i][1] += p.y;
        sums[i][2] += p.z;
    }
    for ix in 0..spec.nx {
        for iy in 0..spec.ny {
            for iz in 0..spec.nz {
                let i = spec.index(ix, iy, iz);
                let n = counts[i];
                if n == 0 {
                    continue;
                }
                let nf = f64::from(n);
                let mean = [sums[i][0] / nf, sums[i][1] / nf, sums[i][2] / nf];
                let c = spec.cell_center(ix, iy, iz);
                let f = grid.cell_mut(i);
                f[0] = (1.0 + nf).ln();
                f[1] = mean[0] - c.x;
                f[2] = mean[1] - c.y;
                f[3] = mean[2] - c.z;
                f[4] = mean[2];
                grid.category[i] = Category::Lidar;
            }
        }
    }
    grid
}

/// Probability-mass accounting of a camera lift.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LiftStats {
    /// Mass of all (pixel, bin) pairs with non-zero probability.
    pub total_mass: f64,
    /// Mass splatted into cells of the grid.
    pub inside_mass: f64,
}

impl LiftStats {
    pub fn outside_mass(&self) -> f64 {
        self.total_mass - self.inside_mass
    }
}

/// Lifts image features into the grid: every (pixel, bin) pair with mass
/// `p` lands, at the bin-center depth, in its nearest cell with weight `p`.
/// Cells reaching `mass_threshold` become `Camera`; the rest stay zero.
pub fn lift_camera(
    features: &FeatureImage,
    dist: &DepthDistribution,
    intr: &CameraIntrinsics,
    bins: &DepthBins,
    cam_pose_in_ego: &Pose,
    spec: &GridSpec,
    mass_threshold: f64,
) -> Result<(VoxelGrid, LiftStats)> {
    if features.width != dist.width
        || features.height != dist.height
        || dist.n_bins != bins.n_bins
        || features.width != intr.width
        || features.height != intr.height
        || features.channels != spec.channels
    {
        return Err(Error::SpecMismatch);
    }
    let mut grid = VoxelGrid::empty(*spec);
    let mut mass = vec![0.0f64; spec.n_cells()];
    let mut stats = LiftStats::default();
    let c = spec.channels;
    for v in 0..intr.height {
        for u in 0..intr.width {
            let idx = intr.index(u, v);
            let probs = dist.pixel(idx);
            let feat = features.pixel(idx);
            for (bin, &p) in probs.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                stats.total_mass += p;
                let cam_pt = unproject(intr, &PixelDepth { u, v, d: bins.center(bin) });
                let ego_pt = cam_pose_in_ego.transform_point(&cam_pt);
                let Some((ix, iy, iz)) = spec.cell_of(&ego_pt) else { continue };
                let cell = spec.index(ix, iy, iz);
                stats.inside_mass += p;
                mass[cell] += p;
                for (dst, &f) in grid.features[cell * c..(cell + 1) * c].iter_mut().zip(feat) {
                    *dst += p * f;
                }
            }
        }
    }
    for (cell, &m) in mass.iter().enumerate() {
        if m > 0.0 && m >= mass_threshold {
            grid.category[cell] = Category::Camera;
        } else {
            grid.cell_mut(cell).iter_mut().for_each(|x| *x = 0.0);
        }
    }
    Ok((grid, stats))
}

/// LiDAR and camera grids side by side, with the per-cell modality tag.
#[derive(Debug, Clone, PartialEq)]
pub struct CategorizedGrid {
    pub spec: GridSpec,
    pub lidar: Vec<f64>,
    pub camera: Vec<f64>,
    pub category: Vec<Category>,
}

impl CategorizedGrid {
    pub fn lidar_cell(&self, index: usize) -> &[f64] {
        let c = self.spec.channels;
        &self.lidar[index * c..(index + 1) * c]
    }

    pub fn camera_cell(&self, index: usize) -> &[f64] {
        let c = self.spec.channels;
        &self.camera[index * c..(index + 1) * c]
    }

    pub fn count(&self, cat: Category) -> usize {
        self.category.iter().filter(|&&c| c == cat).count()
    }
}

pub fn categorize(lidar: &VoxelGrid, camera: &VoxelGrid) -> Result<CategorizedGrid> {
    if lidar.spec != camera.spec {
        return Err(Error::SpecMismatch);
    }
    let category = lidar
        .category
        .iter()
        .zip(&camera.category)
        .map(|(&l, &c)| match (l != Category::Normal, c != Category::Normal) {
            (true, true) => Category::Hybrid,
            (true, false) => Category::Lidar,
            (false, true) => Category::Camera,
            (false, false) => Category::Normal,
        })
        .collect();
    Ok(CategorizedGrid {
        spec: lidar.spec,
        lidar: lidar.features.clone(),
        camera: camera.features.clone(),
        category,
    })
}

/// Top-down feature map: one `channels * nz` vector per column.
#[derive(Debug, Clone, PartialEq)]
pub struct BevFeature {
    pub nx: usize,
    pub ny: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl BevFeature {
    pub fn zeros(nx: usize, ny: usize, dim: usize) -> Self {
        Self {
            nx,
            ny,
            dim,
            data: vec![0.0; nx * ny * dim],
        }
    }

    pub fn for_spec(spec: &GridSpec) -> Self {
        Self::zeros(spec.nx, spec.ny, spec.bev_dim())
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn cell_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn same_shape(&self, other: &BevFeature) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.dim == other.dim
    }

    /// Number of non-zero scalars.
    pub fn l0(&self) -> usize {
        self.data.iter().filter(|&&x| x != 0.0).count()
    }
}

/// Stacks the z cells of each column, lowest first, into the channel axis.
pub fn collapse(grid: &VoxelGrid) -> BevFeature {
    // with z fastest in the cell index, column-major voxel storage already
    // is the collapsed layout
    let spec = &grid.spec;
    BevFeature {
        nx: spec.nx,
        ny: spec.ny,
        dim: spec.bev_dim(),
        data: grid.features.clone(),
    }
}

/// Inverse of [`collapse`] for the feature values.
pub fn uncollapse(bev: &BevFeature, spec: &GridSpec) -> Result<Vec<f64>> {
    if bev.nx != spec.nx || bev.ny != spec.ny || bev.dim != spec.bev_dim() {
        return Err(Error::SpecMismatch);
    }
    Ok(bev.data.clone())
}
