//! Pinhole camera model: intrinsics, world-to-camera extrinsics, pixel rays.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A posed pinhole camera. Extrinsics map world points into camera space
/// (`x_cam = R x_world + t`) with +z looking into the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

impl CameraView {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = CameraView {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking toward `target` with `up` as the up hint.
    pub fn look_at(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let fwd = (target - eye).normalize();
        let right = fwd.cross(&up).normalize();
        let down = fwd.cross(&right);
        // Rows of R are the camera axes expressed in world coordinates.
        let rotation = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            fwd.transpose(),
        ]);
        let translation = -rotation * eye;
        CameraView::new(fx, fy, cx, cy, rotation, translation, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "non-positive focal lengths ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("zero image dimension".into()));
        }
        let dev = (self.rotation * self.rotation.transpose() - Matrix3::identity()).norm();
        if dev > 1e-6 {
            return Err(Error::InvalidCamera(format!(
                "rotation block not orthonormal (deviation {dev:.2e})"
            )));
        }
        for v in self.translation.iter().chain(self.rotation.iter()) {
            if !v.is_finite() {
                return Err(Error::InvalidCamera("nonfinite extrinsics".into()));
            }
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -self.rotation.transpose() * self.translation
    }

    #[inline]
    pub fn world_to_cam(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Unit ray direction (world space, camera toward scene) through the
    /// center of pixel (x, y).
    #[inline]
    pub fn pixel_ray(&self, x: usize, y: usize) -> Vector3<f64> {
        self.pixel_ray_at(x as f64 + 0.5, y as f64 + 0.5)
    }

    /// Unit ray through an arbitrary continuous pixel coordinate.
    #[inline]
    pub fn pixel_ray_at(&self, px: f64, py: f64) -> Vector3<f64> {
        let dir_cam = Vector3::new((px - self.cx) / self.fx, (py - self.cy) / self.fy, 1.0);
        (self.rotation.transpose() * dir_cam).normalize()
    }

    /// Projects a world point to continuous pixel coordinates and camera
    /// depth; `None` when the point is at or behind the camera plane.
    pub fn project_point(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let t = self.world_to_cam(p);
        if t.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * t.x / t.z + self.cx,
            self.fy * t.y / t.z + self.cy,
            t.z,
        ))
    }
}

/// Serialization mirror with plain arrays, used for JSON camera files.
#[derive(Serialize, Deserialize)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    /// Row-major 3x3 world-to-camera rotation.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    width: usize,
    height: usize,
}

pub fn save_camera(path: &Path, cam: &CameraView) -> Result<()> {
    let mut rotation = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            rotation[r][c] = cam.rotation[(r, c)];
        }
    }
    let rec = CameraRecord {
        fx: cam.fx,
        fy: cam.fy,
        cx: cam.cx,
        cy: cam.cy,
        rotation,
        translation: [cam.translation.x, cam.translation.y, cam.translation.z],
        width: cam.width,
        height: cam.height,
    };
    let text = serde_json::to_string_pretty(&rec).expect("camera record serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_camera(path: &Path) -> Result<CameraView> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rec: CameraRecord = serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
        what: "camera",
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let rotation = Matrix3::from_fn(|r, c| rec.rotation[r][c]);
    CameraView::new(
        rec.fx,
        rec.fy,
        rec.cx,
        rec.cy,
        rotation,
        Vector3::from_column_slice(&rec.translation),
        rec.width,
        rec.height,
    )
}
