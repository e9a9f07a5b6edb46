//! Calibrated stereo camera model and the simulated frame it produces.
//!
//! Camera optical frame: x right, y down, z forward (depth). Pixels follow
//! the pinhole model `u = f*X/Z + cx`, `v = f*Y/Z + cy`; the right camera is
//! displaced along +x by the baseline, so `disparity = f*b/Z`.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::RigidTransform;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("disparity {disparity:.4} px below threshold {threshold:.4} px (far-point rejection)")]
    DisparityBelowThreshold { disparity: f64, threshold: f64 },
    #[error("point at or behind the camera plane (z = {0:.4})")]
    BehindCamera(f64),
}

/// Intrinsics and noise model of the simulated stereo head.
///
/// Defaults mirror a small 672x376 stereo camera with a 0.12 m baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StereoCameraModel {
    /// Focal length in pixels (identical for both axes).
    pub focal_px: f64,
    /// Principal point (pixels).
    pub principal_point: [f64; 2],
    /// Stereo baseline (metres).
    pub baseline_m: f64,
    /// Image size (pixels), width x height.
    pub image_size: [u32; 2],
    /// Per-axis Gaussian pixel noise sigma.
    pub pixel_noise_sigma: f64,
    /// Depth at which feature detection starts to fall off (metres).
    pub detection_range_full: f64,
    /// Depth beyond which nothing is detected (metres).
    pub detection_range_max: f64,
    /// Minimum depth (metres).
    pub min_depth: f64,
    /// Disparity threshold below which a record is rejected as a far point.
    pub disparity_epsilon: f64,
}

impl Default for StereoCameraModel {
    fn default() -> Self {
        Self {
            focal_px: 350.0,
            principal_point: [336.0, 188.0],
            baseline_m: 0.12,
            image_size: [672, 376],
            pixel_noise_sigma: 0.5,
            detection_range_full: 22.0,
            detection_range_max: 45.0,
            min_depth: 1.0,
            disparity_epsilon: 0.25,
        }
    }
}

impl StereoCameraModel {
    /// Horizontal field of view (radians), derived from the intrinsics.
    pub fn horizontal_fov(&self) -> f64 {
        2.0 * (self.image_size[0] as f64 / 2.0 / self.focal_px).atan()
    }

    /// Vertical field of view (radians).
    pub fn vertical_fov(&self) -> f64 {
        2.0 * (self.image_size[1] as f64 / 2.0 / self.focal_px).atan()
    }

    /// Project a camera-frame point to the left image.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, CameraError> {
        if p.z <= 1e-9 {
            return Err(CameraError::BehindCamera(p.z));
        }
        Ok(Vector2::new(
            self.focal_px * p.x / p.z + self.principal_point[0],
            self.focal_px * p.y / p.z + self.principal_point[1],
        ))
    }

    /// Disparity of a camera-frame point: `f*b/Z`.
    pub fn disparity(&self, p: &Vector3<f64>) -> Result<f64, CameraError> {
        if p.z <= 1e-9 {
            return Err(CameraError::BehindCamera(p.z));
        }
        Ok(self.focal_px * self.baseline_m / p.z)
    }

    /// True when the left-image pixel lies inside the image bounds.
    pub fn in_image(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0
            && px.x <= self.image_size[0] as f64
            && px.y >= 0.0
            && px.y <= self.image_size[1] as f64
    }

    /// True when the point projects inside both images of the stereo pair.
    pub fn in_stereo_frustum(&self, p: &Vector3<f64>) -> bool {
        let Ok(left) = self.project(p) else {
            return false;
        };
        if !self.in_image(&left) {
            return false;
        }
        let right = Vector2::new(
            self.focal_px * (p.x - self.baseline_m) / p.z + self.principal_point[0],
            left.y,
        );
        self.in_image(&right)
    }

    /// Back-project a pixel + disparity record into the camera frame.
    ///
    /// Rejects disparities at or below the configured epsilon; those points
    /// would triangulate to extremely large depths.
    pub fn triangulate(&self, record: &ObservationRecord) -> Result<Vector3<f64>, CameraError> {
        if record.disparity < self.disparity_epsilon {
            return Err(CameraError::DisparityBelowThreshold {
                disparity: record.disparity,
                threshold: self.disparity_epsilon,
            });
        }
        let depth = self.focal_px * self.baseline_m / record.disparity;
        Ok(Vector3::new(
            (record.pixel[0] - self.principal_point[0]) * depth / self.focal_px,
            (record.pixel[1] - self.principal_point[1]) * depth / self.focal_px,
            depth,
        ))
    }
}

/// One detected feature: left-image pixel, stereo disparity and the
/// identity-based descriptor the simulator stands in for SURF with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationRecord {
    pub descriptor_id: u64,
    /// Left-image pixel (u, v).
    pub pixel: [f64; 2],
    /// Stereo disparity in pixels; always positive.
    pub disparity: f64,
}

/// A simulated stereo capture.
///
/// `camera_pose` is the ground-truth world-from-camera transform at capture
/// time. It exists for test oracles and debugging only; the navigation
/// pipeline never reads it.
#[derive(Debug, Clone)]
pub struct ObservationFrame {
    pub timestamp: f64,
    pub records: Vec<ObservationRecord>,
    pub camera_pose: RigidTransform,
}

impl ObservationFrame {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn descriptor_ids(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.descriptor_id).collect()
    }
}
