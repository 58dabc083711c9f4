//! Pinhole camera with signed image coordinates measured from the principal point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{Mat3, Pose, Vec3};

/// Minimum camera-frame depth for a point to count as in front of the lens.
pub const MIN_DEPTH: f64 = 1e-6;

/// Image point in pixels, signed, relative to the principal point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
}

impl ImagePoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Intrinsics {
    /// Focal length (m).
    pub focal_length: f64,
    /// Sensor scale along u (pixels per metre).
    pub alpha_x: f64,
    /// Sensor scale along v (pixels per metre).
    pub alpha_y: f64,
    pub width: u32,
    pub height: u32,
    /// Principal point in raster pixels.
    pub principal_u: f64,
    pub principal_v: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            focal_length: 0.01,
            alpha_x: 22_400.0,
            alpha_y: 22_400.0,
            width: 224,
            height: 224,
            principal_u: 112.0,
            principal_v: 112.0,
        }
    }
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.focal_length > 0.0
            && self.alpha_x > 0.0
            && self.alpha_y > 0.0
            && self.width > 0
            && self.height > 0
            && (0.0..=self.width as f64).contains(&self.principal_u)
            && (0.0..=self.height as f64).contains(&self.principal_v);
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!("camera intrinsics out of range: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    /// Camera-to-world pose; the optical axis is the camera +z.
    pub pose: Pose,
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        Self { intrinsics, pose }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.pose.rotation
    }

    pub fn position(&self) -> &Vec3 {
        &self.pose.position
    }

    /// Metric camera-frame vector `[u/αx, v/αy, f]` for an image point.
    pub fn camera_vector(&self, pt: &ImagePoint) -> Vec3 {
        let k = &self.intrinsics;
        Vec3::new(pt.u / k.alpha_x, pt.v / k.alpha_y, k.focal_length)
    }

    /// Unit world-frame direction of the ray through `pt`.
    pub fn backproject_ray(&self, pt: &ImagePoint) -> Vec3 {
        (self.pose.rotation * self.camera_vector(pt)).normalize()
    }

    pub fn project_point(&self, p_world: &Vec3) -> Result<ImagePoint> {
        let p_cam = self.pose.rotation.transpose() * (p_world - self.pose.position);
        if p_cam.z <= MIN_DEPTH {
            return Err(Error::PointBehindCamera { depth: p_cam.z });
        }
        let k = &self.intrinsics;
        let s = k.focal_length / p_cam.z;
        Ok(ImagePoint::new(p_cam.x * s * k.alpha_x, p_cam.y * s * k.alpha_y))
    }

    /// Half extents of the image in signed pixel coordinates.
    pub fn half_extent(&self) -> (f64, f64) {
        (self.intrinsics.width as f64 * 0.5, self.intrinsics.height as f64 * 0.5)
    }

    pub fn to_raster(&self, pt: &ImagePoint) -> (f64, f64) {
        (pt.u + self.intrinsics.principal_u, pt.v + self.intrinsics.principal_v)
    }

    pub fn from_raster(&self, col: f64, row: f64) -> ImagePoint {
        ImagePoint::new(col - self.intrinsics.principal_u, row - self.intrinsics.principal_v)
    }
}

/// Camera rotation whose optical axis points from `eye` toward `target`, with
/// image +u kept horizontal (perpendicular to `up`).
pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Mat3 {
    let z = (target - eye).normalize();
    let mut x = z.cross(up);
    if x.norm() < 1e-9 {
        x = z.cross(&Vec3::x());
    }
    let x = x.normalize();
    let y = z.cross(&x);
    Mat3::from_columns(&[x, y, z])
}
