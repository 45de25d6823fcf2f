//! Cooperative depth generation: projection of ego and neighbor point clouds
//! into the ego image, a surrogate depth predictor, and the per-pixel hybrid
//! of the two as a categorical distribution over depth bins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, CameraIntrinsics, Point3, Pose};
use crate::scene::DepthImage;

/// Linear depth discretization: bin `k` covers
/// `[d_min + k * width, d_min + (k + 1) * width)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthBins {
    pub d_min: f64,
    pub d_max: f64,
    pub n_bins: usize,
}

impl Default for DepthBins {
    fn default() -> Self {
        Self {
            d_min: 1.0,
            d_max: 33.0,
            n_bins: 16,
        }
    }
}

impl DepthBins {
    pub fn new(d_min: f64, d_max: f64, n_bins: usize) -> Result<Self> {
        let bins = Self { d_min, d_max, n_bins };
        bins.validate()?;
        Ok(bins)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_min > 0.0 && self.d_max > self.d_min) {
            return Err(Error::config("depth.bins", "need 0 < d_min < d_max"));
        }
        if self.n_bins < 2 {
            return Err(Error::config("depth.bins.n_bins", "need at least 2 bins"));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        (self.d_max - self.d_min) / self.n_bins as f64
    }

    /// Bin of a metric depth. Depths below `d_min` clamp into bin 0; depths
    /// at or beyond `d_max` (and non-finite ones) have no bin.
    pub fn bin_of(&self, d: f64) -> Option<usize> {
        if !d.is_finite() || d >= self.d_max {
            return None;
        }
        if d < self.d_min {
            return Some(0);
        }
        Some((((d - self.d_min) / self.width()).floor() as usize).min(self.n_bins - 1))
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.d_min + (bin as f64 + 0.5) * self.width()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DepthSource {
    Predicted,
    EgoProjected,
    NeighborProjected,
}

impl DepthSource {
    pub fn is_projected(self) -> bool {
        !matches!(self, DepthSource::Predicted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthPixel {
    pub bin: usize,
    /// Metric depth the bin was taken from.
    pub depth: f64,
    pub source: DepthSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Option<DepthPixel>>,
}

impl DepthMap {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            pixels: vec![None; width as usize * height as usize],
        }
    }

    pub fn at(&self, u: u32, v: u32) -> Option<DepthPixel> {
        self.pixels[v as usize * self.width as usize + u as usize]
    }

    pub fn count(&self, source: DepthSource) -> usize {
        self.pixels
            .iter()
            .filter(|p| p.is_some_and(|p| p.source == source))
            .count()
    }

    pub fn projected_count(&self) -> usize {
        self.pixels
            .iter()
            .filter(|p| p.is_some_and(|p| p.source.is_projected()))
            .count()
    }

    /// Tags every pixel without a projected depth with the predictor's most
    /// likely bin.
    pub fn fill_predicted(&mut self, predicted: &DepthDistribution, bins: &DepthBins) {
        for (i, px) in self.pixels.iter_mut().enumerate() {
            if px.is_none() {
                let bin = argmax(predicted.pixel(i));
                *px = Some(DepthPixel {
                    bin,
                    depth: bins.center(bin),
                    source: DepthSource::Predicted,
                });
            }
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-pixel categorical distribution over depth bins, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthDistribution {
    pub width: u32,
    pub height: u32,
    pub n_bins: usize,
    pub probs: Vec<f64>,
}

impl DepthDistribution {
    pub fn uniform(width: u32, height: u32, n_bins: usize) -> Self {
        Self {
            width,
            height,
            n_bins,
            probs: vec![1.0 / n_bins as f64; width as usize * height as usize * n_bins],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.probs[index * self.n_bins..(index + 1) * self.n_bins]
    }

    pub fn pixel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.probs[index * self.n_bins..(index + 1) * self.n_bins]
    }

    /// Shannon entropy (nats) of one pixel.
    pub fn entropy(&self, index: usize) -> f64 {
        self.pixel(index)
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }
}

/// Writes `candidate` at `idx` if the pixel is empty or holds a larger
/// depth. Returns whether it was written.
fn write_min(pixels: &mut [Option<DepthPixel>], idx: usize, candidate: DepthPixel) -> bool {
    match &mut pixels[idx] {
        Some(p) if p.source == candidate.source && p.depth <= candidate.depth => false,
        slot => {
            *slot = Some(candidate);
            true
        }
    }
}

/// Projects a camera-frame cloud into the image. Pixels hit by several
/// points keep the nearest depth.
pub fn project_cloud_to_depthmap(cloud: &[Point3], intr: &CameraIntrinsics, bins: &DepthBins) -> DepthMap {
    let mut map = DepthMap::empty(intr.width, intr.height);
    for p in cloud {
        let Some(px) = project(intr, p) else { continue };
        let Some(bin) = bins.bin_of(px.d) else { continue };
        write_min(
            &mut map.pixels,
            intr.index(px.u, px.v),
            DepthPixel {
                bin,
                depth: px.d,
                source: DepthSource::EgoProjected,
            },
        );
    }
    map
}

/// Adds neighbor clouds to an ego depth map. Each entry pairs
/// camera_from_neighbor with the neighbor's cloud. Neighbor depths only fill
/// pixels that are empty or predicted; among neighbors the nearest depth
/// wins.
pub fn merge_cooperative(
    ego_map: &DepthMap,
    neighbor_clouds: &[(Pose, Vec<Point3>)],
    intr: &CameraIntrinsics,
    bins: &DepthBins,
) -> DepthMap {
    let mut map = ego_map.clone();
    for (cam_from_neighbor, cloud) in neighbor_clouds {
        for p in cloud {
            let c = cam_from_neighbor.transform_point(p);
            let Some(px) = project(intr, &c) else { continue };
            let Some(bin) = bins.bin_of(px.d) else { continue };
            let idx = intr.index(px.u, px.v);
            if map.pixels[idx].is_some_and(|p| p.source == DepthSource::EgoProjected) {
                continue;
            }
            write_min(
                &mut map.pixels,
                idx,
                DepthPixel {
                    bin,
                    depth: px.d,
                    source: DepthSource::NeighborProjected,
                },
            );
        }
    }
    map
}

/// Stand-in for a learned depth head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorMode {
    /// Every pixel gets `1/D` on each bin.
    Uniform,
    /// One-hot at the true bin, box-blurred over `blur_radius` pixels and
    /// then smoothed across bins by a discrete Gaussian of width
    /// `sigma_bins`.
    NoisyOracle { sigma_bins: f64, blur_radius: usize },
}

impl Default for PredictorMode {
    fn default() -> Self {
        PredictorMode::NoisyOracle {
            sigma_bins: 1.0,
            blur_radius: 1,
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let reach = (3.0 * sigma).ceil() as i64;
    (-reach..=reach)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Predicted depth distribution from the ground-truth depth image. Pixels
/// that see nothing within range count as the far bin.
pub fn predict_depth(truth: &DepthImage, mode: PredictorMode, bins: &DepthBins) -> DepthDistribution {
    let (w, h) = (truth.width, truth.height);
    let d = bins.n_bins;
    let PredictorMode::NoisyOracle { sigma_bins, blur_radius } = mode else {
        return DepthDistribution::uniform(w, h, d);
    };

    let true_bins: Vec<Option<usize>> = truth
        .depth
        .iter()
        .map(|&z| bins.bin_of(z).or((z >= bins.d_max).then_some(d - 1)))
        .collect();
    let mut dist = DepthDistribution {
        width: w,
        height: h,
        n_bins: d,
        probs: vec![0.0; w as usize * h as usize * d],
    };
    let r = blur_radius as i64;
    let kernel = (sigma_bins > 0.0).then(|| gaussian_kernel(sigma_bins));
    let mut blurred = vec![0.0; d];
    for v in 0..h as i64 {
        for u in 0..w as i64 {
            blurred.iter_mut().for_each(|x| *x = 0.0);
            for dv in -r..=r {
                for du in -r..=r {
                    let (uu, vv) = (u + du, v + dv);
                    if uu < 0 || vv < 0 || uu >= w as i64 || vv >= h as i64 {
                        continue;
                    }
                    if let Some(b) = true_bins[(vv * w as i64 + uu) as usize] {
                        blurred[b] += 1.0;
                    }
                }
            }
            let out = dist.pixel_mut((v * w as i64 + u) as usize);
            match &kernel {
                Some(k) => {
                    let reach = (k.len() / 2) as i64;
                    for (src, &m) in blurred.iter().enumerate() {
                        if m == 0.0 {
                            continue;
                        }
                        for (j, &kv) in k.iter().enumerate() {
                            let dst = src as i64 + j as i64 - reach;
                            if (0..d as i64).contains(&dst) {
                                out[dst as usize] += m * kv;
                            }
                        }
                    }
                }
                None => out.copy_from_slice(&blurred),
            }
            let total: f64 = out.iter().sum();
            if total > 0.0 {
                out.iter_mut().for_each(|x| *x /= total);
            } else {
                out.iter_mut().for_each(|x| *x = 1.0 / d as f64);
            }
        }
    }
    dist
}

/// Projected pixels become one-hot at their bin; everything else keeps the
/// predicted distribution.
pub fn finalize_distribution(map: &DepthMap, predicted: &DepthDistribution) -> Result<DepthDistribution> {
    if map.width != predicted.width || map.height != predicted.height {
        return Err(Error::SpecMismatch);
    }
    let mut out = predicted.clone();
    for (i, px) in map.pixels.iter().enumerate() {
        let Some(px) = px.filter(|p| p.source.is_projected()) else {
            continue;
        };
        let slot = out.pixel_mut(i);
        slot.iter_mut().for_each(|x| *x = 0.0);
        slot[px.bin] = 1.0;
    }
    Ok(out)
}

/// 16-bit gray level used when exporting depth maps: 0 for pixels without a
/// depth, otherwise `(bin + 1) * floor(65535 / D)`.
pub fn gray_level(bin: Option<usize>, n_bins: usize) -> u16 {
    match bin {
        None => 0,
        Some(b) => ((b as u32 + 1) * (65_535 / n_bins as u32)) as u16,
    }
}
