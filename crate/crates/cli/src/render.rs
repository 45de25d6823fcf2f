//! Portable graymap / pixmap writers and the trial renders built on them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use coperc_core::collab::AgentOutput;
use coperc_core::depth::{gray_level, DepthMap};
use coperc_core::{Detection, GridSpec};

/// Pixels per BEV cell in the pixmap renders.
pub const BEV_SCALE: usize = 4;

pub const BACKGROUND: [u8; 3] = [16, 16, 24];
const OCCUPIED: [u8; 3] = [150, 150, 150];
const TRUTH: [u8; 3] = [40, 220, 60];
const PREDICTED: [u8; 3] = [235, 60, 40];

#[derive(Debug, thiserror::Error)]
#[error("{path}: {source}")]
pub struct RenderError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

fn write_with(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), RenderError> {
    let wrap = |source| RenderError {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(wrap)?);
    body(&mut out).and_then(|_| out.flush()).map_err(wrap)
}

/// Binary 16-bit graymap, samples big-endian.
pub fn write_pgm16(path: &Path, width: usize, height: usize, data: &[u16]) -> Result<(), RenderError> {
    assert_eq!(data.len(), width * height);
    write_with(path, |out| {
        write!(out, "P5\n{width} {height}\n65535\n")?;
        for v in data {
            out.write_all(&v.to_be_bytes())?;
        }
        Ok(())
    })
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[[u8; 3]]) -> Result<(), RenderError> {
    assert_eq!(rgb.len(), width * height);
    write_with(path, |out| {
        write!(out, "P6\n{width} {height}\n255\n")?;
        for px in rgb {
            out.write_all(px)?;
        }
        Ok(())
    })
}

pub fn depth_gray(map: &DepthMap, n_bins: usize) -> Vec<u16> {
    map.pixels.iter().map(|p| gray_level(p.map(|p| p.bin), n_bins)).collect()
}

/// Top-down raster, forward (+x) up and left (+y) to the left.
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
    spec: GridSpec,
}

impl Canvas {
    pub fn new(spec: &GridSpec) -> Self {
        let (width, height) = (spec.ny * BEV_SCALE, spec.nx * BEV_SCALE);
        Self {
            width,
            height,
            pixels: vec![BACKGROUND; width * height],
            spec: *spec,
        }
    }

    pub fn fill_cell(&mut self, ix: usize, iy: usize, color: [u8; 3]) {
        let (row0, col0) = ((self.spec.nx - 1 - ix) * BEV_SCALE, (self.spec.ny - 1 - iy) * BEV_SCALE);
        for r in row0..row0 + BEV_SCALE {
            for c in col0..col0 + BEV_SCALE {
                self.pixels[r * self.width + c] = color;
            }
        }
    }

    fn plot(&mut self, x: f64, y: f64, color: [u8; 3]) {
        let s = &self.spec;
        let row = (s.x_range[1] - x) / (s.x_range[1] - s.x_range[0]) * self.height as f64;
        let col = (s.y_range[1] - y) / (s.y_range[1] - s.y_range[0]) * self.width as f64;
        if row >= 0.0 && col >= 0.0 && (row as usize) < self.height && (col as usize) < self.width {
            self.pixels[row as usize * self.width + col as usize] = color;
        }
    }

    pub fn outline(&mut self, det: &Detection, color: [u8; 3]) {
        let corners = det.corners();
        for k in 0..4 {
            let (a, b) = (corners[k], corners[(k + 1) % 4]);
            let steps = 4 * BEV_SCALE * (1 + ((a[0] - b[0]).hypot(a[1] - b[1]) * 4.0) as usize);
            for i in 0..=steps {
                let t = i as f64 / steps as f64;
                self.plot(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), color);
            }
        }
    }
}

/// Occupied fused columns in gray, ground truth in green, detections in red.
pub fn bev_canvas(agent: &AgentOutput, truth: &[Detection]) -> Canvas {
    let spec = agent.fused.spec;
    let mut canvas = Canvas::new(&spec);
    for ix in 0..spec.nx {
        for iy in 0..spec.ny {
            if agent.bev.cell(spec.column_index(ix, iy)).iter().any(|&v| v != 0.0) {
                canvas.fill_cell(ix, iy, OCCUPIED);
            }
        }
    }
    for gt in truth {
        canvas.outline(gt, TRUTH);
    }
    for det in &agent.detections {
        canvas.outline(det, PREDICTED);
    }
    canvas
}

pub fn mask_canvas(agent: &AgentOutput) -> Canvas {
    let spec = agent.fused.spec;
    let mut canvas = Canvas::new(&spec);
    for ix in 0..spec.nx {
        for iy in 0..spec.ny {
            if agent.mask.bits[spec.column_index(ix, iy)] {
                canvas.fill_cell(ix, iy, [255, 255, 255]);
            }
        }
    }
    canvas
}

/// Writes `agent{id}_depth.pgm` (when the agent had a camera),
/// `agent{id}_bev.ppm` and `agent{id}_mask.ppm`; returns the paths.
pub fn render_agent(
    dir: &Path,
    agent: &AgentOutput,
    truth: &[Detection],
    n_bins: usize,
) -> Result<Vec<PathBuf>, RenderError> {
    let mut written = Vec::new();
    if let Some(map) = &agent.depth_map {
        let path = dir.join(format!("agent{}_depth.pgm", agent.id));
        write_pgm16(&path, map.width as usize, map.height as usize, &depth_gray(map, n_bins))?;
        written.push(path);
    }
    let bev = bev_canvas(agent, truth);
    let path = dir.join(format!("agent{}_bev.ppm", agent.id));
    write_ppm(&path, bev.width, bev.height, &bev.pixels)?;
    written.push(path);
    let mask = mask_canvas(agent);
    let path = dir.join(format!("agent{}_mask.ppm", agent.id));
    write_ppm(&path, mask.width, mask.height, &mask.pixels)?;
    written.push(path);
    Ok(written)
}
