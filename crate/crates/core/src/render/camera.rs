use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Pinhole camera with OpenCV axes (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vector3<f64>,
    pub near: f64,
    pub far: f64,
    /// Normalized timestamp.
    pub time: f64,
}

pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 100.0;

impl Camera {
    /// Camera at the origin looking down +z with the principal point centered.
    pub fn centered(width: usize, height: usize, focal: f64) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
            time: 0.0,
        }
    }

    /// Places the camera at `eye` looking at `target`; `down` is the world
    /// direction that should map to +y in the image.
    pub fn look_at(mut self, eye: Vector3<f64>, target: Vector3<f64>, down: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let x = down.cross(&z).normalize();
        let y = z.cross(&x);
        self.rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        self.translation = -(self.rotation * eye);
        self
    }

    pub fn at_time(mut self, t: f64) -> Self {
        self.time = t;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if !(ortho < 1e-6) {
            return Err(Error::InvalidCamera(format!(
                "rotation is not orthonormal (error {ortho:e})"
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(Error::InvalidCamera(format!(
                "clip range ({}, {}) is invalid",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("image size must be nonzero".into()));
        }
        if !self.translation.iter().all(|v| v.is_finite()) || !self.time.is_finite() {
            return Err(Error::InvalidCamera("non-finite pose or timestamp".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn project_point(&self, p_cam: &Vector3<f64>) -> [f64; 2] {
        [
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ]
    }

    /// Camera-space ray through the center of pixel `(u, v)`, scaled to `z = 1`.
    pub fn pixel_ray(&self, u: usize, v: usize) -> Vector3<f64> {
        Vector3::new(
            (u as f64 + 0.5 - self.cx) / self.fx,
            (v as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
    }
}
