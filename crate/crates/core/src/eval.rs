//! BEV box metrics: rotated IoU, greedy matching and all-point AP.

use serde::{Deserialize, Serialize};

use crate::scene::BoxObject;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub center: [f64; 2],
    pub yaw: f64,
    /// Length along the heading, width across it.
    pub extent: [f64; 2],
    pub score: f64,
}

impl Detection {
    pub fn new(center: [f64; 2], yaw: f64, extent: [f64; 2], score: f64) -> Self {
        Self {
            center,
            yaw,
            extent,
            score,
        }
    }

    pub fn from_box(b: &BoxObject) -> Self {
        Self::new(b.center, b.yaw, [b.extent[0], b.extent[1]], 1.0)
    }

    pub fn area(&self) -> f64 {
        self.extent[0] * self.extent[1]
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.extent[0] / 2.0, self.extent[1] / 2.0);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(a, b)| {
            [
                self.center[0] + c * a - s * b,
                self.center[1] + s * a + c * b,
            ]
        })
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum();
    twice.abs() / 2.0
}

/// Clips `subject` against each edge of the convex counter-clockwise `clip`.
pub fn clip_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (dc, dp) = (cross(a, b, cur), cross(a, b, prev));
            if dc >= 0.0 {
                if dp < 0.0 {
                    out.push(intersect(prev, cur, dp, dc));
                }
                out.push(cur);
            } else if dp >= 0.0 {
                out.push(intersect(prev, cur, dp, dc));
            }
        }
    }
    out
}

fn intersect(p: [f64; 2], q: [f64; 2], dp: f64, dq: f64) -> [f64; 2] {
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

pub fn rotated_iou(a: &Detection, b: &Detection) -> f64 {
    let reach = (a.extent[0].hypot(a.extent[1]) + b.extent[0].hypot(b.extent[1])) / 2.0;
    if (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1]) > reach {
        return 0.0;
    }
    let inter = polygon_area(&clip_polygon(&a.corners(), &b.corners()));
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrCurve {
    /// `(recall, precision)` after each detection, best score first.
    pub points: Vec<(f64, f64)>,
    pub n_gt: usize,
    pub true_positives: usize,
}

/// Greedy matching in descending score order; ties keep insertion order.
/// Each detection takes the unmatched ground truth of highest IoU.
pub fn match_detections(dets: &[Detection], gts: &[Detection], iou_thresh: f64) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score));
    let mut taken = vec![false; gts.len()];
    let mut assignment = vec![None; dets.len()];
    for i in order {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(g, _)| !taken[*g])
            .map(|(g, gt)| (g, rotated_iou(&dets[i], gt)))
            .filter(|&(_, iou)| iou >= iou_thresh)
            .fold(None, |acc: Option<(usize, f64)>, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            });
        if let Some((g, _)) = best {
            taken[g] = true;
            assignment[i] = Some(g);
        }
    }
    assignment
}

pub fn pr_curve(dets: &[Detection], gts: &[Detection], iou_thresh: f64) -> PrCurve {
    let assignment = match_detections(dets, gts, iou_thresh);
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score));
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(dets.len());
    for (k, &i) in order.iter().enumerate() {
        if assignment[i].is_some() {
            tp += 1;
        }
        let recall = if gts.is_empty() { 0.0 } else { tp as f64 / gts.len() as f64 };
        points.push((recall, tp as f64 / (k + 1) as f64));
    }
    PrCurve {
        points,
        n_gt: gts.len(),
        true_positives: tp,
    }
}

/// Area under the monotone precision envelope. Zero without ground truth.
pub fn average_precision(dets: &[Detection], gts: &[Detection], iou_thresh: f64) -> f64 {
    let curve = pr_curve(dets, gts, iou_thresh);
    if curve.n_gt == 0 {
        return 0.0;
    }
    let mut envelope: Vec<f64> = curve.points.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (&(r, _), &p) in curve.points.iter().zip(&envelope) {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    ap.clamp(0.0, 1.0)
}

pub fn recall(dets: &[Detection], gts: &[Detection], iou_thresh: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let hit = match_detections(dets, gts, iou_thresh).iter().filter(|a| a.is_some()).count();
    hit as f64 / gts.len() as f64
}
