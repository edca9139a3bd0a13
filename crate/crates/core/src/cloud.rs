//! Gaussians bound to mesh triangles.
//!
//! Every Gaussian lives in the local frame of its parent triangle: the frame
//! rotation has columns (normalized first edge, triangle normal, their cross
//! product), its origin is the centroid and its scale the mean edge length.
//! Promotion to world space follows the mesh as it deforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::GeometryError;
use crate::linalg::{
    cross_backward, normalize_backward, quat_identity, quat_normalize, quat_normalize_backward, quat_to_mat,
    quat_to_mat_backward, Mat3, Quat, Vec3,
};
use crate::real::{lit, logit, Real};

/// Triangles with a smaller area are treated as degenerate.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianCloud<T> {
    pub parent_face: Vec<u32>,
    /// Offset from the centroid in units of the frame scale.
    pub local_position: Vec<Vec3<T>>,
    /// Unnormalized quaternion `[w, x, y, z]`; normalized before use.
    pub local_rotation: Vec<Quat<T>>,
    pub local_log_scale: Vec<Vec3<T>>,
    pub opacity_logit: Vec<T>,
    /// Pre-sigmoid RGB.
    pub color_logit: Vec<Vec3<T>>,
}

impl<T: Real> GaussianCloud<T> {
    pub fn len(&self) -> usize {
        self.parent_face.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent_face.is_empty()
    }

    pub fn push(&mut self, face: u32, mu: Vec3<T>, q: Quat<T>, log_scale: Vec3<T>, opacity_logit: T, color_logit: Vec3<T>) {
        self.parent_face.push(face);
        self.local_position.push(mu);
        self.local_rotation.push(q);
        self.local_log_scale.push(log_scale);
        self.opacity_logit.push(opacity_logit);
        self.color_logit.push(color_logit);
    }

    /// Keep only the Gaussians whose flag is set.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        fn filter<X: Clone>(v: &mut Vec<X>, keep: &[bool]) {
            let mut it = keep.iter();
            v.retain(|_| *it.next().unwrap_or(&false));
        }
        filter(&mut self.parent_face, keep);
        filter(&mut self.local_position, keep);
        filter(&mut self.local_rotation, keep);
        filter(&mut self.local_log_scale, keep);
        filter(&mut self.opacity_logit, keep);
        filter(&mut self.color_logit, keep);
    }

    pub fn check_faces(&self, num_faces: usize) -> Result<(), GeometryError> {
        match self.parent_face.iter().find(|f| **f as usize >= num_faces) {
            Some(f) => Err(GeometryError::FaceOutOfRange { face: *f as usize, faces: num_faces }),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangleFrame<T> {
    pub rotation: Mat3<T>,
    pub origin: Vec3<T>,
    pub scale: T,
}

/// Gradient with respect to the outputs of [`triangle_frame`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameGrad<T> {
    pub rotation: Mat3<T>,
    pub origin: Vec3<T>,
    pub scale: T,
}

impl<T: Real> FrameGrad<T> {
    pub fn zero() -> Self {
        Self { rotation: Mat3::zero(), origin: Vec3::zero(), scale: T::zero() }
    }
}

pub fn triangle_area<T: Real>(a: Vec3<T>, b: Vec3<T>, c: Vec3<T>) -> T {
    (b - a).cross(c - a).norm() * lit(0.5)
}

pub fn triangle_frame<T: Real>(a: Vec3<T>, b: Vec3<T>, c: Vec3<T>) -> Result<TriangleFrame<T>, GeometryError> {
    let e1 = b - a;
    let e2 = c - a;
    let n = e1.cross(e2);
    let area = n.norm() * lit(0.5);
    if !(area >= lit(MIN_TRIANGLE_AREA)) {
        return Err(GeometryError::DegenerateTriangle(area.to_f64_lossy()));
    }
    let t = e1.normalized();
    let nn = n.normalized();
    let rotation = Mat3::from_cols(t, nn, t.cross(nn));
    let origin = (a + b + c) * (T::one() / lit(3.0));
    let scale = (e1.norm() + (c - b).norm() + e2.norm()) / lit(3.0);
    Ok(TriangleFrame { rotation, origin, scale })
}

/// Reverse-mode gradient of [`triangle_frame`] with respect to its vertices.
pub fn triangle_frame_backward<T: Real>(a: Vec3<T>, b: Vec3<T>, c: Vec3<T>, g: &FrameGrad<T>) -> [Vec3<T>; 3] {
    let e1 = b - a;
    let e2 = c - a;
    let e3 = c - b;
    let n = e1.cross(e2);
    let t = e1.normalized();
    let nn = n.normalized();
    let g_t0 = g.rotation.col(0);
    let g_n0 = g.rotation.col(1);
    let g_m = g.rotation.col(2);
    // m = t × nn
    let (g_t_m, g_n_m) = cross_backward(t, nn, g_m);
    let g_t = g_t0 + g_t_m;
    let g_n = g_n0 + g_n_m;
    let mut g_e1 = normalize_backward(e1, g_t);
    let g_cross = normalize_backward(n, g_n);
    let (g_e1_c, mut g_e2) = cross_backward(e1, e2, g_cross);
    g_e1 += g_e1_c;

    let third = T::one() / lit(3.0);
    let s = g.scale * third;
    g_e1 += e1.normalized() * s;
    g_e2 += e2.normalized() * s;
    let g_e3 = e3.normalized() * s;

    let go = g.origin * third;
    let ga = go - g_e1 - g_e2;
    let gb = go + g_e1 - g_e3;
    let gc = go + g_e2 + g_e3;
    [ga, gb, gc]
}

/// Initial cloud: `per_triangle` Gaussians on every non-degenerate face,
/// flattened along the triangle normal so that it is their shortest axis.
///
/// Returns the cloud and the indices of skipped (degenerate) faces.
pub fn init_cloud<T: Real>(
    vertices: &[Vec3<T>],
    faces: &[[u32; 3]],
    per_triangle: usize,
    seed: u64,
) -> (GaussianCloud<T>, Vec<u32>) {
    let per_triangle = per_triangle.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = GaussianCloud::default();
    let mut skipped = Vec::new();
    let log_scale = Vec3::new(lit::<T>(0.5f64.ln()), lit(0.1f64.ln()), lit(0.5f64.ln()));
    let half_logit = logit(lit::<T>(0.5));
    for (fi, f) in faces.iter().enumerate() {
        let [a, b, c] = f.map(|i| vertices[i as usize]);
        if triangle_frame(a, b, c).is_err() {
            skipped.push(fi as u32);
            continue;
        }
        for _ in 0..per_triangle {
            let mu = if per_triangle > 1 {
                Vec3::new(lit(rng.random_range(-0.3..0.3)), T::zero(), lit(rng.random_range(-0.3..0.3)))
            } else {
                Vec3::zero()
            };
            cloud.push(fi as u32, mu, quat_identity(), log_scale, half_logit, Vec3::zero());
        }
    }
    (cloud, skipped)
}

/// World-space Gaussians for one frame. Opacity and color stay in logit space.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorldGaussians<T> {
    pub position: Vec<Vec3<T>>,
    pub rotation: Vec<Mat3<T>>,
    pub scale: Vec<Vec3<T>>,
    pub opacity_logit: Vec<T>,
    pub color_logit: Vec<Vec3<T>>,
    /// False when the parent triangle is degenerate at this pose.
    pub active: Vec<bool>,
}

impl<T: Real> WorldGaussians<T> {
    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorldGrad<T> {
    pub position: Vec<Vec3<T>>,
    pub rotation: Vec<Mat3<T>>,
    pub scale: Vec<Vec3<T>>,
    pub opacity_logit: Vec<T>,
    pub color_logit: Vec<Vec3<T>>,
}

impl<T: Real> WorldGrad<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            position: vec![Vec3::zero(); n],
            rotation: vec![Mat3::zero(); n],
            scale: vec![Vec3::zero(); n],
            opacity_logit: vec![T::zero(); n],
            color_logit: vec![Vec3::zero(); n],
        }
    }
}

/// Gradient with respect to every cloud parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CloudGrad<T> {
    pub local_position: Vec<Vec3<T>>,
    pub local_rotation: Vec<Quat<T>>,
    pub local_log_scale: Vec<Vec3<T>>,
    pub opacity_logit: Vec<T>,
    pub color_logit: Vec<Vec3<T>>,
}

impl<T: Real> CloudGrad<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            local_position: vec![Vec3::zero(); n],
            local_rotation: vec![[T::zero(); 4]; n],
            local_log_scale: vec![Vec3::zero(); n],
            opacity_logit: vec![T::zero(); n],
            color_logit: vec![Vec3::zero(); n],
        }
    }
}

/// Forward values kept for [`promote_backward`].
#[derive(Clone, Debug)]
pub struct PromoteCache<T> {
    frames: Vec<Option<TriangleFrame<T>>>,
}

impl<T: Real> PromoteCache<T> {
    pub fn frame(&self, face: usize) -> Option<&TriangleFrame<T>> {
        self.frames[face].as_ref()
    }
}

/// Per-face frames of a mesh; `None` for degenerate faces.
pub fn face_frames<T: Real>(vertices: &[Vec3<T>], faces: &[[u32; 3]]) -> Vec<Option<TriangleFrame<T>>> {
    faces
        .iter()
        .map(|f| {
            let [a, b, c] = f.map(|i| vertices[i as usize]);
            triangle_frame(a, b, c).ok()
        })
        .collect()
}

/// `position = origin + scale·R·μ`, `rotation = R·rot(q)`,
/// `scale = frame_scale·exp(s)`.
pub fn promote_to_world<T: Real>(
    cloud: &GaussianCloud<T>,
    vertices: &[Vec3<T>],
    faces: &[[u32; 3]],
) -> Result<(WorldGaussians<T>, PromoteCache<T>), GeometryError> {
    cloud.check_faces(faces.len())?;
    let frames = face_frames(vertices, faces);
    let n = cloud.len();
    let mut w = WorldGaussians {
        position: Vec::with_capacity(n),
        rotation: Vec::with_capacity(n),
        scale: Vec::with_capacity(n),
        opacity_logit: cloud.opacity_logit.clone(),
        color_logit: cloud.color_logit.clone(),
        active: Vec::with_capacity(n),
    };
    for i in 0..n {
        match &frames[cloud.parent_face[i] as usize] {
            Some(fr) => {
                w.position.push(fr.origin + fr.rotation.mul_vec(cloud.local_position[i]) * fr.scale);
                w.rotation.push(fr.rotation * quat_to_mat(&quat_normalize(&cloud.local_rotation[i])));
                w.scale.push(cloud.local_log_scale[i].map(|s| s.exp()) * fr.scale);
                w.active.push(true);
            }
            None => {
                w.position.push(Vec3::zero());
                w.rotation.push(Mat3::identity());
                w.scale.push(Vec3::zero());
                w.active.push(false);
            }
        }
    }
    Ok((w, PromoteCache { frames }))
}

/// Reverse-mode gradient of [`promote_to_world`]. Returns cloud gradients and
/// per-vertex gradients.
pub fn promote_backward<T: Real>(
    cloud: &GaussianCloud<T>,
    vertices: &[Vec3<T>],
    faces: &[[u32; 3]],
    cache: &PromoteCache<T>,
    grad: &WorldGrad<T>,
) -> (CloudGrad<T>, Vec<Vec3<T>>) {
    let n = cloud.len();
    let mut out = CloudGrad::zeros(n);
    let mut face_grads: Vec<FrameGrad<T>> = vec![FrameGrad::zero(); faces.len()];
    let mut touched = vec![false; faces.len()];
    for i in 0..n {
        let f = cloud.parent_face[i] as usize;
        let Some(fr) = &cache.frames[f] else { continue };
        let mu = cloud.local_position[i];
        let gp = grad.position[i];
        let fg = &mut face_grads[f];
        touched[f] = true;

        // position
        fg.origin += gp;
        let rmu = fr.rotation.mul_vec(mu);
        fg.scale += gp.dot(rmu);
        fg.rotation += Mat3::outer(gp * fr.scale, mu);
        out.local_position[i] = fr.rotation.tmul_vec(gp) * fr.scale;

        // rotation
        let q = cloud.local_rotation[i];
        let qn = quat_normalize(&q);
        let rq = quat_to_mat(&qn);
        let gr = grad.rotation[i];
        fg.rotation += gr * rq.transpose();
        let g_rq = fr.rotation.transpose() * gr;
        out.local_rotation[i] = quat_normalize_backward(&q, &quat_to_mat_backward(&qn, &g_rq));

        // scale
        let es = cloud.local_log_scale[i].map(|s| s.exp());
        let gs = grad.scale[i];
        fg.scale += gs.dot(es);
        out.local_log_scale[i] = gs.mul_elem(es) * fr.scale;

        out.opacity_logit[i] = grad.opacity_logit[i];
        out.color_logit[i] = grad.color_logit[i];
    }
    let mut gv = vec![Vec3::zero(); vertices.len()];
    for (f, fg) in face_grads.iter().enumerate() {
        if !touched[f] {
            continue;
        }
        let idx = faces[f];
        let [a, b, c] = idx.map(|i| vertices[i as usize]);
        let g = triangle_frame_backward(a, b, c, fg);
        for k in 0..3 {
            gv[idx[k] as usize] += g[k];
        }
    }
    (out, gv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::axis_angle_to_mat;

    #[test]
    fn equilateral_frame() {
        let s3 = 3f64.sqrt();
        let (a, b, c) = (Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0), Vec3::new(1.0, s3, 0.0));
        let f = triangle_frame(a, b, c).unwrap();
        assert!((f.rotation.col(1) - Vec3::new(0.0, 0.0, 1.0)).max_abs() < 1e-12);
        assert!((f.scale - 2.0).abs() < 1e-12);
        assert!((f.rotation * f.rotation.transpose()).max_abs_diff(&Mat3::identity()) < 1e-12);
        assert!((f.origin - Vec3::new(1.0, s3 / 3.0, 0.0)).max_abs() < 1e-12);
    }

    #[test]
    fn frame_is_rigid_equivariant_and_scale_homogeneous() {
        let (a, b, c) = (Vec3::new(0.1f64, 0.2, -0.3), Vec3::new(1.0, 0.4, 0.2), Vec3::new(0.3, 1.2, 0.5));
        let f = triangle_frame(a, b, c).unwrap();
        let r = axis_angle_to_mat(Vec3::new(0.4, -0.9, 0.3));
        let t = Vec3::new(1.0, -2.0, 0.5);
        let g = triangle_frame(r.mul_vec(a) + t, r.mul_vec(b) + t, r.mul_vec(c) + t).unwrap();
        assert!(g.rotation.max_abs_diff(&(r * f.rotation)) < 1e-12);
        assert!((g.origin - (r.mul_vec(f.origin) + t)).max_abs() < 1e-12);
        assert!((g.scale - f.scale).abs() < 1e-12);
        let k = 2.5f64;
        let h = triangle_frame(a * k, b * k, c * k).unwrap();
        assert!((h.scale - k * f.scale).abs() < 1e-12);
        assert!(h.rotation.max_abs_diff(&f.rotation) < 1e-12);
    }

    #[test]
    fn degenerate_triangle_is_rejected() {
        let a = Vec3::new(0.0f64, 0.0, 0.0);
        assert!(matches!(
            triangle_frame(a, Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)),
            Err(GeometryError::DegenerateTriangle(_))
        ));
    }

    #[test]
    fn init_counts_and_skips() {
        let v = vec![
            Vec3::new(0.0f64, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
        ];
        let faces = vec![[0, 1, 2], [0, 1, 3]];
        let (c, skipped) = init_cloud(&v, &faces, 1, 0);
        assert_eq!(c.len(), 1);
        assert_eq!(skipped, vec![1]);
        let (c3, _) = init_cloud(&v, &faces, 3, 5);
        assert_eq!(c3.len(), 3);
        assert_eq!(c3, init_cloud(&v, &faces, 3, 5).0);
    }

    #[test]
    fn degenerate_parent_marks_gaussian_inactive() {
        let v = vec![Vec3::new(0.0f64, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let (cloud, _) = init_cloud(&v, &[[0, 1, 2]], 1, 0);
        let flat = vec![v[0], v[1], Vec3::new(2.0, 0.0, 0.0)];
        let (w, _) = promote_to_world(&cloud, &flat, &[[0, 1, 2]]).unwrap();
        assert_eq!(w.active, vec![false]);
    }
}
