//! EWA projection of world Gaussians and its reverse-mode gradient.

use crate::linalg::{Mat3, Vec3};
use crate::real::{lit, Real};

use super::camera::Camera;

/// Screen-space dilation added to both diagonal entries of every 2D
/// covariance, in px².
pub const COV_DILATION: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection<T> {
    /// Pixel coordinates of the projected center.
    pub mean: [T; 2],
    /// Dilated 2D covariance `(xx, xy, yy)`.
    pub cov: [T; 3],
    /// Camera-space z.
    pub depth: T,
    pub camera_point: Vec3<T>,
}

/// Shortest axis of a Gaussian, flipped to face the camera.
///
/// Returns the normal, the rotation column it was taken from, and the sign
/// applied to that column. Ties pick the lowest axis.
pub fn gaussian_world_normal<T: Real>(
    rotation: &Mat3<T>,
    scale: Vec3<T>,
    camera_center: Vec3<T>,
    position: Vec3<T>,
) -> (Vec3<T>, usize, T) {
    let mut axis = 0;
    for k in 1..3 {
        if scale[k] < scale[axis] {
            axis = k;
        }
    }
    let n = rotation.col(axis);
    if n.dot(position - camera_center) > T::zero() {
        (-n, axis, -T::one())
    } else {
        (n, axis, T::one())
    }
}

#[inline]
fn jacobian<T: Real>(camera: &Camera, p: Vec3<T>) -> [[T; 3]; 2] {
    let fx = lit::<T>(camera.fx);
    let fy = lit::<T>(camera.fy);
    let iz = T::one() / p.z;
    [[fx * iz, T::zero(), -fx * p.x * iz * iz], [T::zero(), fy * iz, -fy * p.y * iz * iz]]
}

/// `J·W·R·diag(s)`: the 2×3 factor whose outer product is the undilated
/// screen covariance.
#[inline]
fn screen_factor<T: Real>(j: &[[T; 3]; 2], n: &Mat3<T>) -> [[T; 3]; 2] {
    let mut out = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            out[r][c] = j[r][0] * n.m[0][c] + j[r][1] * n.m[1][c] + j[r][2] * n.m[2][c];
        }
    }
    out
}

#[inline]
fn scaled_rotation<T: Real>(rotation: &Mat3<T>, scale: Vec3<T>) -> Mat3<T> {
    let mut m = *rotation;
    for r in 0..3 {
        for c in 0..3 {
            m.m[r][c] *= scale[c];
        }
    }
    m
}

/// Project a world Gaussian; `None` when its center is not beyond the near
/// plane.
pub fn project_gaussian<T: Real>(
    position: Vec3<T>,
    rotation: &Mat3<T>,
    scale: Vec3<T>,
    camera: &Camera,
) -> Option<Projection<T>> {
    let w = camera.rotation::<T>();
    let p = w.mul_vec(position) + camera.translation();
    if !(p.z > lit(camera.near)) {
        return None;
    }
    let j = jacobian(camera, p);
    let n = w * scaled_rotation(rotation, scale);
    let f = screen_factor(&j, &n);
    let eps = lit::<T>(COV_DILATION);
    let dot = |a: &[T; 3], b: &[T; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cov = [dot(&f[0], &f[0]) + eps, dot(&f[0], &f[1]), dot(&f[1], &f[1]) + eps];
    Some(Projection { mean: camera.project(p), cov, depth: p.z, camera_point: p })
}

/// Inverse of a symmetric 2×2 matrix stored as `(xx, xy, yy)`.
#[inline]
pub fn conic<T: Real>(cov: &[T; 3]) -> [T; 3] {
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    let inv = T::one() / det;
    [cov[2] * inv, -cov[1] * inv, cov[0] * inv]
}

/// Backward of [`conic`]; the off-diagonal entry is treated as one scalar on
/// both sides.
#[inline]
pub fn conic_backward<T: Real>(cov: &[T; 3], g: &[T; 3]) -> [T; 3] {
    let [a, b, c] = *cov;
    let d = a * c - b * b;
    let id = T::one() / d;
    let id2 = id * id;
    let two = lit::<T>(2.0);
    let ga = g[0] * (-c * c * id2) + g[1] * (b * c * id2) + g[2] * (id - a * c * id2);
    let gb = g[0] * (two * b * c * id2) + g[1] * (-id - two * b * b * id2) + g[2] * (two * a * b * id2);
    let gc = g[0] * (id - a * c * id2) + g[1] * (a * b * id2) + g[2] * (-a * a * id2);
    [ga, gb, gc]
}

/// Gradients of [`project_gaussian`] with respect to world position,
/// rotation and scale, given gradients on the mean and dilated covariance.
pub fn project_backward<T: Real>(
    position: Vec3<T>,
    rotation: &Mat3<T>,
    scale: Vec3<T>,
    camera: &Camera,
    grad_mean: [T; 2],
    grad_cov: [T; 3],
) -> (Vec3<T>, Mat3<T>, Vec3<T>) {
    let w = camera.rotation::<T>();
    let p = w.mul_vec(position) + camera.translation();
    let j = jacobian(camera, p);
    let n = w * scaled_rotation(rotation, scale);
    let f = screen_factor(&j, &n);
    let half = lit::<T>(0.5);
    let g2 = [[grad_cov[0], grad_cov[1] * half], [grad_cov[1] * half, grad_cov[2]]];
    let two = lit::<T>(2.0);
    // d/dF of F·Fᵀ
    let mut gf = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            gf[r][c] = two * (g2[r][0] * f[0][c] + g2[r][1] * f[1][c]);
        }
    }
    let mut gj = [[T::zero(); 3]; 2];
    let mut gn = Mat3::zero();
    for r in 0..2 {
        for k in 0..3 {
            let mut s = T::zero();
            for c in 0..3 {
                s += gf[r][c] * n.m[k][c];
                gn.m[k][c] += j[r][k] * gf[r][c];
            }
            gj[r][k] = s;
        }
    }
    let gm = w.transpose() * gn;
    let mut grot = Mat3::zero();
    let mut gscale = Vec3::zero();
    for r in 0..3 {
        for c in 0..3 {
            grot.m[r][c] = gm.m[r][c] * scale[c];
            gscale[c] += gm.m[r][c] * rotation.m[r][c];
        }
    }

    let fx = lit::<T>(camera.fx);
    let fy = lit::<T>(camera.fy);
    let iz = T::one() / p.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut gp = Vec3::new(
        grad_mean[0] * fx * iz,
        grad_mean[1] * fy * iz,
        -grad_mean[0] * fx * p.x * iz2 - grad_mean[1] * fy * p.y * iz2,
    );
    gp.x += -gj[0][2] * fx * iz2;
    gp.y += -gj[1][2] * fy * iz2;
    gp.z += -gj[0][0] * fx * iz2 + gj[0][2] * two * fx * p.x * iz3 - gj[1][1] * fy * iz2
        + gj[1][2] * two * fy * p.y * iz3;
    (w.tmul_vec(gp), grot, gscale)
}
