//! Parametric head model: template mesh, linear shape and expression
//! blendshapes, and linear blend skinning over a small joint hierarchy.

mod normals;
mod pose;
mod toy;

pub use normals::{vertex_normals, VertexNormals};
pub use pose::{
    canonical_expression_mesh, pose_mesh, pose_vertices, pose_vertices_backward, pose_vertices_with_cache,
    PoseCache, PoseGrad,
};
pub use toy::{make_toy_model, ToyModelOptions};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::linalg::Vec3;
use crate::real::Real;

/// Linear blendshape head model with skeletal skinning.
///
/// Blendshape bases are stored flat with layout `[vertex][axis][coefficient]`,
/// the joint regressor as `[joint][vertex]` and the skin weights as
/// `[vertex][joint]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadModel<T> {
    pub template_vertices: Vec<Vec3<T>>,
    pub faces: Vec<[u32; 3]>,
    pub uv_coords: Vec<[T; 2]>,
    pub uv_faces: Vec<[u32; 3]>,
    pub num_shape: usize,
    pub num_expr: usize,
    pub shape_basis: Vec<T>,
    pub expr_basis: Vec<T>,
    pub joint_rest: Vec<Vec3<T>>,
    /// Parent joint index, `-1` for the root.
    pub joint_parents: Vec<i32>,
    pub joint_regressor: Vec<T>,
    pub skin_weights: Vec<T>,
}

impl<T: Real> HeadModel<T> {
    pub fn num_vertices(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn num_joints(&self) -> usize {
        self.joint_parents.len()
    }

    #[inline]
    pub fn shape_offset(&self, v: usize, axis: usize, k: usize) -> T {
        self.shape_basis[(v * 3 + axis) * self.num_shape + k]
    }

    #[inline]
    pub fn expr_offset(&self, v: usize, axis: usize, k: usize) -> T {
        self.expr_basis[(v * 3 + axis) * self.num_expr + k]
    }

    #[inline]
    pub fn skin_weight(&self, v: usize, j: usize) -> T {
        self.skin_weights[v * self.num_joints() + j]
    }

    /// Check every structural invariant of the model.
    pub fn validate(&self) -> Result<(), ModelError> {
        let nv = self.num_vertices();
        let nf = self.num_faces();
        let nj = self.num_joints();
        let nvt = self.uv_coords.len();
        if self.uv_faces.len() != nf {
            return Err(ModelError::Length { what: "uv_faces", expected: nf, got: self.uv_faces.len() });
        }
        for f in &self.faces {
            for &i in f {
                if i as usize >= nv {
                    return Err(ModelError::IndexOutOfRange { what: "faces", index: i as usize, bound: nv });
                }
            }
        }
        for f in &self.uv_faces {
            for &i in f {
                if i as usize >= nvt {
                    return Err(ModelError::IndexOutOfRange { what: "uv_faces", index: i as usize, bound: nvt });
                }
            }
        }
        let lens: [(&'static str, usize, usize); 4] = [
            ("shape_basis", self.shape_basis.len(), nv * 3 * self.num_shape),
            ("expr_basis", self.expr_basis.len(), nv * 3 * self.num_expr),
            ("joint_regressor", self.joint_regressor.len(), nj * nv),
            ("skin_weights", self.skin_weights.len(), nv * nj),
        ];
        for (what, got, expected) in lens {
            if got != expected {
                return Err(ModelError::Length { what, expected, got });
            }
        }
        if self.joint_rest.len() != nj {
            return Err(ModelError::Length { what: "joint_rest", expected: nj, got: self.joint_rest.len() });
        }
        if nj == 0 {
            return Err(ModelError::Length { what: "joints", expected: 1, got: 0 });
        }
        for (j, &p) in self.joint_parents.iter().enumerate() {
            let ok = if j == 0 { p == -1 } else { p >= 0 && (p as usize) < j };
            if !ok {
                return Err(ModelError::JointOrder { joint: j, parent: p as i64 });
            }
        }
        if !self.template_vertices.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite("template_vertices"));
        }
        if !self.shape_basis.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite("shape_basis"));
        }
        if !self.expr_basis.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite("expr_basis"));
        }
        if !self.joint_regressor.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite("joint_regressor"));
        }
        for v in 0..nv {
            let row = &self.skin_weights[v * nj..(v + 1) * nj];
            let sum: f64 = row.iter().map(|w| w.to_f64_lossy()).sum();
            if row.iter().any(|w| !(*w >= T::zero()) || !w.is_finite()) || (sum - 1.0).abs() > 1e-6 {
                return Err(ModelError::SkinWeights { vertex: v, sum });
            }
        }
        check_manifold(&self.faces)?;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> HeadModel<U> {
        let c = |v: &[T]| v.iter().map(|x| U::lit(x.to_f64_lossy())).collect::<Vec<U>>();
        HeadModel {
            template_vertices: self.template_vertices.iter().map(|v| v.cast()).collect(),
            faces: self.faces.clone(),
            uv_coords: self
                .uv_coords
                .iter()
                .map(|uv| [U::lit(uv[0].to_f64_lossy()), U::lit(uv[1].to_f64_lossy())])
                .collect(),
            uv_faces: self.uv_faces.clone(),
            num_shape: self.num_shape,
            num_expr: self.num_expr,
            shape_basis: c(&self.shape_basis),
            expr_basis: c(&self.expr_basis),
            joint_rest: self.joint_rest.iter().map(|v| v.cast()).collect(),
            joint_parents: self.joint_parents.clone(),
            joint_regressor: c(&self.joint_regressor),
            skin_weights: c(&self.skin_weights),
        }
    }
}

/// Fails if any undirected edge is shared by more than two faces.
pub fn check_manifold(faces: &[[u32; 3]]) -> Result<(), ModelError> {
    let mut counts: HashMap<(u32, u32), usize> = HashMap::with_capacity(faces.len() * 2);
    for f in faces {
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            *counts.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    let mut bad: Vec<_> = counts.into_iter().filter(|(_, c)| *c > 2).collect();
    bad.sort();
    match bad.first() {
        Some(&((a, b), c)) => Err(ModelError::NonManifold(a, b, c)),
        None => Ok(()),
    }
}

/// Pose of one frame: expression coefficients, per-joint axis-angle rotations,
/// and the global rigid transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct FramePose<T> {
    pub expression: Vec<T>,
    pub joints: Vec<Vec3<T>>,
    pub rotation: Vec3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> FramePose<T> {
    pub fn zeros(num_expr: usize, num_joints: usize) -> Self {
        Self {
            expression: vec![T::zero(); num_expr],
            joints: vec![Vec3::zero(); num_joints],
            rotation: Vec3::zero(),
            translation: Vec3::zero(),
        }
    }

    /// Element-wise `self + residual`, returning tracked values unchanged
    /// (bit for bit) wherever the residual is zero.
    pub fn plus(&self, residual: &Self) -> Self {
        Self {
            expression: add_slices(&self.expression, &residual.expression),
            joints: self.joints.iter().zip(&residual.joints).map(|(a, b)| add_vec(*a, *b)).collect(),
            rotation: add_vec(self.rotation, residual.rotation),
            translation: add_vec(self.translation, residual.translation),
        }
    }
}

#[inline]
pub(crate) fn add_residual<T: Real>(tracked: T, residual: T) -> T {
    if residual == T::zero() {
        tracked
    } else {
        tracked + residual
    }
}

fn add_vec<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    Vec3::new(add_residual(a.x, b.x), add_residual(a.y, b.y), add_residual(a.z, b.z))
}

pub(crate) fn add_slices<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(x, r)| add_residual(*x, *r)).collect()
}

/// Tracked parameters of a sequence together with their learnable residuals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct AvatarParams<T> {
    pub shape: Vec<T>,
    pub frames: Vec<FramePose<T>>,
    pub shape_residual: Vec<T>,
    pub frame_residuals: Vec<FramePose<T>>,
}

impl<T: Real> AvatarParams<T> {
    /// Wrap tracked values with zero residuals.
    pub fn new(shape: Vec<T>, frames: Vec<FramePose<T>>) -> Self {
        let shape_residual = vec![T::zero(); shape.len()];
        let frame_residuals = frames
            .iter()
            .map(|f| FramePose::zeros(f.expression.len(), f.joints.len()))
            .collect();
        Self { shape, frames, shape_residual, frame_residuals }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn effective_shape(&self) -> Vec<T> {
        add_slices(&self.shape, &self.shape_residual)
    }

    pub fn effective_frame(&self, frame: usize) -> FramePose<T> {
        self.frames[frame].plus(&self.frame_residuals[frame])
    }

    pub fn check_lengths(&self, model: &HeadModel<T>) -> Result<(), ModelError> {
        if self.shape.len() != model.num_shape || self.shape_residual.len() != model.num_shape {
            return Err(ModelError::Length { what: "shape", expected: model.num_shape, got: self.shape.len() });
        }
        for f in self.frames.iter().chain(&self.frame_residuals) {
            check_frame_lengths(model, f)?;
        }
        if self.frame_residuals.len() != self.frames.len() {
            return Err(ModelError::Length {
                what: "frame_residuals",
                expected: self.frames.len(),
                got: self.frame_residuals.len(),
            });
        }
        Ok(())
    }
}

pub(crate) fn check_frame_lengths<T: Real>(model: &HeadModel<T>, f: &FramePose<T>) -> Result<(), ModelError> {
    if f.expression.len() != model.num_expr {
        return Err(ModelError::Length { what: "expression", expected: model.num_expr, got: f.expression.len() });
    }
    if f.joints.len() != model.num_joints() {
        return Err(ModelError::Length { what: "joints", expected: model.num_joints(), got: f.joints.len() });
    }
    Ok(())
}
