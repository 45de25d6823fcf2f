//! First-hit ray casting against oriented boxes, vertical walls and the
//! ground plane `z = 0`.

use nalgebra::Vector3;

use super::{BoxObject, Wall};

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Ground,
    Wall(usize),
    Object(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Distance along the (unit) ray direction.
    pub t: f64,
    pub surface: Surface,
}

/// Slab test in the box frame. Boxes stand on the ground, spanning
/// `z in [0, height]`. Returns the entry distance, or `None` if the ray
/// misses or starts inside the box.
pub fn ray_box(origin: &Vector3<f64>, dir: &Vector3<f64>, obj: &BoxObject) -> Option<f64> {
    let (s, c) = obj.yaw.sin_cos();
    let half = [obj.extent[0] * 0.5, obj.extent[1] * 0.5, obj.extent[2] * 0.5];
    let dx = origin.x - obj.center[0];
    let dy = origin.y - obj.center[1];
    // rotate by -yaw into the box frame
    let o = [c * dx + s * dy, -s * dx + c * dy, origin.z - half[2]];
    let d = [c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z];

    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for axis in 0..3 {
        if d[axis].abs() < EPS {
            if o[axis].abs() > half[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[axis];
        let mut t0 = (-half[axis] - o[axis]) * inv;
        let mut t1 = (half[axis] - o[axis]) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    (t_near > EPS).then_some(t_near)
}

/// Intersection with an opaque vertical rectangle standing on the ground.
pub fn ray_wall(origin: &Vector3<f64>, dir: &Vector3<f64>, wall: &Wall) -> Option<f64> {
    let ax = wall.start[0];
    let ay = wall.start[1];
    let ex = wall.end[0] - ax;
    let ey = wall.end[1] - ay;
    let len2 = ex * ex + ey * ey;
    if len2 < EPS {
        return None;
    }
    // horizontal normal of the wall plane
    let (nx, ny) = (-ey, ex);
    let denom = nx * dir.x + ny * dir.y;
    if denom.abs() < EPS {
        return None;
    }
    let t = (nx * (ax - origin.x) + ny * (ay - origin.y)) / denom;
    if t <= EPS {
        return None;
    }
    let px = origin.x + t * dir.x;
    let py = origin.y + t * dir.y;
    let pz = origin.z + t * dir.z;
    let s = ((px - ax) * ex + (py - ay) * ey) / len2;
    ((0.0..=1.0).contains(&s) && (0.0..=wall.height).contains(&pz)).then_some(t)
}

pub fn ray_ground(origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    if dir.z < -EPS && origin.z > 0.0 {
        Some(-origin.z / dir.z)
    } else {
        None
    }
}

/// Static geometry shared by all sensors.
#[derive(Debug, Clone, Copy)]
pub struct World<'a> {
    pub objects: &'a [BoxObject],
    pub walls: &'a [Wall],
}

impl<'a> World<'a> {
    pub fn new(objects: &'a [BoxObject], walls: &'a [Wall]) -> Self {
        Self { objects, walls }
    }

    /// Closest surface along a unit-direction ray within `max_t`.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, max_t: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut consider = |t: f64, surface: Surface| {
            if t <= max_t && best.is_none_or(|b| t < b.t) {
                best = Some(Hit { t, surface });
            }
        };
        for obj in self.objects {
            if let Some(t) = ray_box(origin, dir, obj) {
                consider(t, Surface::Object(obj.id));
            }
        }
        for (i, wall) in self.walls.iter().enumerate() {
            if let Some(t) = ray_wall(origin, dir, wall) {
                consider(t, Surface::Wall(i));
            }
        }
        if let Some(t) = ray_ground(origin, dir) {
            consider(t, Surface::Ground);
        }
        best
    }
}
