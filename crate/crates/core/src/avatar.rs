//! A reconstructed avatar: the triangle-bound cloud, the tracked parameters
//! with their residuals, and the optional refinement fields. [`Avatar::pose`]
//! runs the full forward chain for one frame.

use crate::cloud::GaussianCloud;
use crate::error::{ModelError, TrainError};
use crate::fields::{apply_residuals, DeformCache, DeformationField, DynamicsCache, DynamicsField, Residual};
use crate::head::{canonical_expression_mesh, pose_vertices_with_cache, AvatarParams, FramePose, HeadModel, PoseCache};
use crate::linalg::Vec3;
use crate::real::Real;
use crate::remesh::UvRemesh;
use crate::render::{render, Background, Camera, RenderOutput, RenderRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct Avatar<T> {
    pub cloud: GaussianCloud<T>,
    pub params: AvatarParams<T>,
    pub deformation: Option<DeformationField<T>>,
    pub dynamics: Option<DynamicsField<T>>,
}

/// Intermediate values of one posed frame, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct PosedAvatar<T> {
    pub pose: FramePose<T>,
    pub shape: Vec<T>,
    pub pose_cache: PoseCache<T>,
    /// Remeshed vertices after the deformation offsets.
    pub vertices: Vec<Vec3<T>>,
    pub offsets: Option<(Vec<Vec3<T>>, DeformCache<T>)>,
    pub residuals: Option<(Vec<Residual<T>>, DynamicsCache<T>)>,
    /// Cloud with dynamics residuals applied.
    pub cloud: GaussianCloud<T>,
}

impl<T: Real> Avatar<T> {
    /// Pose `frame` with effective parameters. `latent` is the normalized
    /// expression latent and is only read by the fields.
    pub fn pose(
        &self,
        model: &HeadModel<T>,
        remesh: &UvRemesh<T>,
        frame: usize,
        latent: &[T],
    ) -> Result<PosedAvatar<T>, TrainError> {
        let shape = self.params.effective_shape();
        if frame >= self.params.num_frames() {
            return Err(ModelError::IndexOutOfRange { what: "frame", index: frame, bound: self.params.num_frames() }.into());
        }
        let pose = self.params.effective_frame(frame);
        let (mesh, pose_cache) = pose_vertices_with_cache(model, &shape, &pose)?;
        let mut vertices = remesh.interpolate(&mesh, &model.faces);
        let offsets = match &self.deformation {
            Some(field) => {
                let canonical = canonical_expression_mesh(model, &shape, &pose.expression)?;
                let canonical = remesh.interpolate(&canonical, &model.faces);
                let (off, cache) = field.deform(&canonical, latent)?;
                for (v, o) in vertices.iter_mut().zip(&off) {
                    *v += *o;
                }
                Some((off, cache))
            }
            None => None,
        };
        let (cloud, residuals) = match &self.dynamics {
            Some(field) => {
                let (res, cache) = field.residuals(latent)?;
                (apply_residuals(&self.cloud, &res), Some((res, cache)))
            }
            None => (self.cloud.clone(), None),
        };
        Ok(PosedAvatar { pose, shape, pose_cache, vertices, offsets, residuals, cloud })
    }

    /// Pose and render `frame` from `camera`.
    pub fn render_frame(
        &self,
        model: &HeadModel<T>,
        remesh: &UvRemesh<T>,
        frame: usize,
        latent: &[T],
        camera: &Camera,
        background: &Background<T>,
    ) -> Result<(RenderOutput<T>, PosedAvatar<T>, RenderRecord<T>), TrainError> {
        let posed = self.pose(model, remesh, frame, latent)?;
        let (out, rec) = render(&posed.cloud, &posed.vertices, &remesh.faces, camera, background)?;
        Ok((out, posed, rec))
    }
}
