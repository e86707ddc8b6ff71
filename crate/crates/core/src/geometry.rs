//! Pinhole camera model and rigid object-to-camera transforms.
//!
//! Camera axes follow the KITTI camera convention: x right, y down, z forward.

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Pt3 = Point3<f64>;
pub type Pt2 = Point2<f64>;
pub type Mat3 = Matrix3<f64>;

/// Points with depth at or below this value are treated as behind the camera.
pub const EPS_DEPTH: f64 = 1e-6;

/// Wrap an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = a - two_pi * ((a + PI) / two_pi).floor();
    // floor can land exactly on the upper edge through rounding
    if w >= PI {
        w -= two_pi;
    }
    if w < -PI {
        w += two_pi;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = CameraIntrinsics { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidIntrinsics("non-finite entry".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pixel coordinates to the normalized image plane.
    pub fn normalize_pixel(&self, p: &Pt2) -> (f64, f64) {
        ((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy)
    }

    pub fn denormalize(&self, un: f64, vn: f64) -> Pt2 {
        Pt2::new(un * self.fx + self.cx, vn * self.fy + self.cy)
    }

    /// Project a camera-frame point. Returns the pixel and the projective depth.
    pub fn project(&self, p_cam: &Pt3) -> Result<(Pt2, f64)> {
        if p_cam.z.is_nan() || p_cam.z <= EPS_DEPTH {
            return Err(Error::PointBehindCamera { depth: p_cam.z });
        }
        let u = self.fx * p_cam.x / p_cam.z + self.cx;
        let v = self.fy * p_cam.y / p_cam.z + self.cy;
        Ok((Pt2::new(u, v), p_cam.z))
    }
}

/// Object extents: `l` along the object x axis, `h` along y, `w` along z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub l: f64,
    pub w: f64,
    pub h: f64,
}

impl Dims {
    pub fn new(l: f64, w: f64, h: f64) -> Result<Self> {
        let d = Dims { l, w, h };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.l > 0.0 && self.w > 0.0 && self.h > 0.0 && self.as_axes().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonPositiveDimension([self.l, self.w, self.h]))
        }
    }

    /// Extents ordered by object axis: `(l, h, w)` for `(x, y, z)`.
    pub fn as_axes(&self) -> Vec3 {
        Vec3::new(self.l, self.h, self.w)
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }
}

/// Object pose in the camera frame. Rotation is `R_yaw · R_pitch · R_roll`
/// (about y, x and z respectively), so a pose with zero pitch and roll is the
/// usual single-angle vehicle pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub t: Vec3,
}

impl Pose {
    pub fn from_yaw(yaw: f64, t: Vec3) -> Self {
        Pose {
            yaw: wrap_angle(yaw),
            pitch: 0.0,
            roll: 0.0,
            t,
        }
    }

    pub fn new(yaw: f64, pitch: f64, roll: f64, t: Vec3) -> Self {
        Pose {
            yaw: wrap_angle(yaw),
            pitch,
            roll,
            t,
        }
    }

    pub fn rotation(&self) -> Mat3 {
        rotation_matrix_euler(self.yaw, self.pitch, self.roll)
    }

    pub fn transform(&self, p: &Pt3) -> Pt3 {
        transform_object_to_camera(p, self)
    }
}

/// Rotation about the camera y axis.
pub fn rotation_matrix_yaw(ry: f64) -> Mat3 {
    let (s, c) = ry.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rotation_matrix_pitch(rx: f64) -> Mat3 {
    let (s, c) = rx.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rotation_matrix_roll(rz: f64) -> Mat3 {
    let (s, c) = rz.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn rotation_matrix_euler(yaw: f64, pitch: f64, roll: f64) -> Mat3 {
    rotation_matrix_yaw(yaw) * rotation_matrix_pitch(pitch) * rotation_matrix_roll(roll)
}

/// Partial derivatives of [`rotation_matrix_euler`] with respect to
/// `(yaw, pitch, roll)`.
pub fn rotation_euler_derivatives(yaw: f64, pitch: f64, roll: f64) -> [Mat3; 3] {
    let (ry, rx, rz) = (
        rotation_matrix_yaw(yaw),
        rotation_matrix_pitch(pitch),
        rotation_matrix_roll(roll),
    );
    let (sy, cy) = yaw.sin_cos();
    let (sx, cx) = pitch.sin_cos();
    let (sz, cz) = roll.sin_cos();
    let dry = Mat3::new(-sy, 0.0, cy, 0.0, 0.0, 0.0, -cy, 0.0, -sy);
    let drx = Mat3::new(0.0, 0.0, 0.0, 0.0, -sx, -cx, 0.0, cx, -sx);
    let drz = Mat3::new(-sz, -cz, 0.0, cz, -sz, 0.0, 0.0, 0.0, 0.0);
    [dry * rx * rz, ry * drx * rz, ry * rx * drz]
}

pub fn transform_object_to_camera(p: &Pt3, pose: &Pose) -> Pt3 {
    pose.rotation() * p + pose.t
}

pub fn project(p_cam: &Pt3, k: &CameraIntrinsics) -> Result<(Pt2, f64)> {
    k.project(p_cam)
}

pub fn normalize_pixel(k: &CameraIntrinsics, p: &Pt2) -> (f64, f64) {
    k.normalize_pixel(p)
}
