//! Rigid transforms and the pinhole projection stack.
//!
//! Camera frames use z forward, x right, y down. Body and LiDAR frames use
//! x forward, y left, z up.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

pub type Point3 = nalgebra::Point3<f64>;

const POSE_TOL: f64 = 1e-9;

/// A 4x4 homogeneous rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    matrix: Matrix4<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix4::identity(),
        }
    }

    pub fn from_rotation_translation(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let mut matrix = Matrix4::identity();
        matrix.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        matrix.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self { matrix }
    }

    /// Builds a pose from a raw matrix, returning `None` if it is not a proper
    /// rigid transform.
    pub fn from_matrix(matrix: Matrix4<f64>) -> Option<Self> {
        let pose = Self { matrix };
        pose.is_valid().then_some(pose)
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Self::from_rotation_translation(Matrix3::identity(), Vector3::new(x, y, z))
    }

    /// Rotation about +z by `yaw` radians.
    pub fn yaw(yaw: f64) -> Self {
        Self::from_rotation_translation(
            *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            Vector3::zeros(),
        )
    }

    /// Planar pose: translation (x, y, z) and heading `yaw` about +z.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        let mut pose = Self::yaw(yaw);
        pose.matrix[(0, 3)] = x;
        pose.matrix[(1, 3)] = y;
        pose.matrix[(2, 3)] = z;
        pose
    }

    pub fn from_planar(x: f64, y: f64, yaw: f64) -> Self {
        Self::from_xyz_yaw(x, y, 0.0, yaw)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Planar part `(x, y, yaw)`; yaw is read from the rotated x axis.
    pub fn planar(&self) -> (f64, f64, f64) {
        let m = &self.matrix;
        (m[(0, 3)], m[(1, 3)], m[(1, 0)].atan2(m[(0, 0)]))
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            matrix: self.matrix * other.matrix,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation_vector());
        Pose::from_rotation_translation(rt, t)
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        let r = self.matrix.fixed_view::<3, 3>(0, 0);
        let t = self.matrix.fixed_view::<3, 1>(0, 3);
        Point3::from(r * p.coords + t)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0) * v
    }

    pub fn is_valid(&self) -> bool {
        let m = &self.matrix;
        if !m.iter().all(|v| v.is_finite()) {
            return false;
        }
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return false;
        }
        let r = self.rotation();
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        ortho <= POSE_TOL && (r.determinant() - 1.0).abs() <= POSE_TOL
    }

    /// Largest absolute entry-wise difference between two poses.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        (self.matrix - other.matrix).abs().max()
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn transform_points(pose: &Pose, pts: &[Point3]) -> Vec<Point3> {
    pts.iter().map(|p| pose.transform_point(p)).collect()
}

/// Rotation taking camera coordinates (z forward, x right, y down) into a
/// body-style frame (x forward, y left, z up).
pub fn body_from_camera_rotation() -> Matrix3<f64> {
    Matrix3::new(
        0.0, 0.0, 1.0, //
        -1.0, 0.0, 0.0, //
        0.0, -1.0, 0.0,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn is_valid(&self) -> bool {
        self.fx > 0.0 && self.fy > 0.0 && self.width >= 1 && self.height >= 1
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Row-major pixel index.
    pub fn index(&self, u: u32, v: u32) -> usize {
        v as usize * self.width as usize + u as usize
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 80.0,
            fy: 80.0,
            u0: 80.0,
            v0: 48.0,
            width: 160,
            height: 96,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelDepth {
    pub u: u32,
    pub v: u32,
    pub d: f64,
}

/// Pinhole projection of a camera-frame point. Pixels round half away from
/// zero; points behind the camera or outside the image give `None`.
pub fn project(intr: &CameraIntrinsics, cam_pt: &Point3) -> Option<PixelDepth> {
    if !(cam_pt.z > 0.0) {
        return None;
    }
    let u = (intr.fx * cam_pt.x / cam_pt.z + intr.u0).round();
    let v = (intr.fy * cam_pt.y / cam_pt.z + intr.v0).round();
    if u < 0.0 || v < 0.0 || u >= f64::from(intr.width) || v >= f64::from(intr.height) {
        return None;
    }
    Some(PixelDepth {
        u: u as u32,
        v: v as u32,
        d: cam_pt.z,
    })
}

pub fn unproject(intr: &CameraIntrinsics, px: &PixelDepth) -> Point3 {
    Point3::new(
        (f64::from(px.u) - intr.u0) * px.d / intr.fx,
        (f64::from(px.v) - intr.v0) * px.d / intr.fy,
        px.d,
    )
}
