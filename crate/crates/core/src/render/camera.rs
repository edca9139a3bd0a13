use serde::{Deserialize, Serialize};

use crate::linalg::{Mat3, Vec3};
use crate::real::{lit, Real};

/// Pinhole camera. Camera space is x right, y down, z forward; pixel `(i, j)`
/// (row, column) has its center at `(j + 0.5, i + 0.5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

impl Camera {
    /// Camera at `eye` looking at `target`, with `up` mapped to image-up.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], focal: f64, width: usize, height: usize) -> Self {
        let eye = Vec3::from_array(eye);
        let z = (Vec3::from_array(target) - eye).normalized();
        let up = Vec3::from_array(up);
        let y = -(up - z * up.dot(z)).normalized();
        let x = y.cross(z);
        let r = Mat3::from_rows(x, y, z);
        let t = -r.mul_vec(eye);
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 * 0.5,
            cy: height as f64 * 0.5,
            rotation: r.m,
            translation: t.to_array(),
            width,
            height,
            near: 0.01,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.fx > 0.0 && self.fy > 0.0 && self.width >= 1 && self.height >= 1 && self.near >= 0.0
    }

    pub fn rotation<T: Real>(&self) -> Mat3<T> {
        Mat3 { m: self.rotation }.cast()
    }

    pub fn translation<T: Real>(&self) -> Vec3<T> {
        Vec3::from_f64(self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center<T: Real>(&self) -> Vec3<T> {
        let r = self.rotation::<T>();
        -r.tmul_vec(self.translation())
    }

    pub fn world_to_camera<T: Real>(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation::<T>().mul_vec(p) + self.translation()
    }

    /// Pixel coordinates of a camera-space point in front of the camera.
    pub fn project<T: Real>(&self, pc: Vec3<T>) -> [T; 2] {
        [lit::<T>(self.fx) * pc.x / pc.z + lit(self.cx), lit::<T>(self.fy) * pc.y / pc.z + lit(self.cy)]
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_projects_target_to_center() {
        let cam = Camera::look_at([0.3, 0.1, 0.5], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 100.0, 64, 48);
        let pc = cam.world_to_camera(Vec3::new(0.0f64, 0.0, 0.0));
        assert!(pc.z > 0.0);
        let p = cam.project(pc);
        assert!((p[0] - 32.0).abs() < 1e-12 && (p[1] - 24.0).abs() < 1e-12);
        let c = cam.center::<f64>();
        assert!((c - Vec3::new(0.3, 0.1, 0.5)).max_abs() < 1e-12);
        // world up appears above the target
        let above = cam.project(cam.world_to_camera(Vec3::new(0.0f64, 0.05, 0.0)));
        assert!(above[1] < 24.0);
        let r = cam.rotation::<f64>();
        assert!((r.det() - 1.0).abs() < 1e-12);
    }
}
