use crate::error::ModelError;
use crate::linalg::{axis_angle_to_mat, axis_angle_to_mat_backward, Mat3, Vec3};
use crate::real::Real;

use super::{check_frame_lengths, AvatarParams, FramePose, HeadModel};

/// Intermediate values of the forward pass needed by [`pose_vertices_backward`].
#[derive(Clone, Debug)]
pub struct PoseCache<T> {
    shaped: Vec<Vec3<T>>,
    joints: Vec<Vec3<T>>,
    local_rot: Vec<Mat3<T>>,
    global_rot: Vec<Mat3<T>>,
    skinned: Vec<Vec3<T>>,
    root_rot: Mat3<T>,
}

/// Gradients of a scalar loss with respect to the effective pose parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseGrad<T> {
    pub shape: Vec<T>,
    pub expression: Vec<T>,
    pub joints: Vec<Vec3<T>>,
    pub rotation: Vec3<T>,
    pub translation: Vec3<T>,
}

fn blend<T: Real>(model: &HeadModel<T>, shape: &[T], expression: &[T]) -> Vec<Vec3<T>> {
    let ns = model.num_shape;
    let ne = model.num_expr;
    model
        .template_vertices
        .iter()
        .enumerate()
        .map(|(v, t)| {
            let mut p = *t;
            for axis in 0..3 {
                let sb = &model.shape_basis[(v * 3 + axis) * ns..(v * 3 + axis + 1) * ns];
                let eb = &model.expr_basis[(v * 3 + axis) * ne..(v * 3 + axis + 1) * ne];
                let mut acc = T::zero();
                for (b, c) in sb.iter().zip(shape) {
                    acc += *b * *c;
                }
                for (b, c) in eb.iter().zip(expression) {
                    acc += *b * *c;
                }
                p[axis] += acc;
            }
            p
        })
        .collect()
}

/// Canonical mesh animated by expression only: template plus shape and
/// expression offsets, identity pose, no global transform.
///
/// `shape` may be empty (no shape offset) or of length `num_shape`.
pub fn canonical_expression_mesh<T: Real>(
    model: &HeadModel<T>,
    shape: &[T],
    expression: &[T],
) -> Result<Vec<Vec3<T>>, ModelError> {
    if expression.len() != model.num_expr {
        return Err(ModelError::Length { what: "expression", expected: model.num_expr, got: expression.len() });
    }
    if !shape.is_empty() && shape.len() != model.num_shape {
        return Err(ModelError::Length { what: "shape", expected: model.num_shape, got: shape.len() });
    }
    Ok(blend(model, shape, expression))
}

/// Posed vertices of `frame` using effective (tracked + residual) parameters.
pub fn pose_mesh<T: Real>(
    model: &HeadModel<T>,
    params: &AvatarParams<T>,
    frame: usize,
) -> Result<Vec<Vec3<T>>, ModelError> {
    if frame >= params.num_frames() {
        return Err(ModelError::IndexOutOfRange { what: "frame", index: frame, bound: params.num_frames() });
    }
    pose_vertices(model, &params.effective_shape(), &params.effective_frame(frame))
}

pub fn pose_vertices<T: Real>(
    model: &HeadModel<T>,
    shape: &[T],
    pose: &FramePose<T>,
) -> Result<Vec<Vec3<T>>, ModelError> {
    pose_vertices_with_cache(model, shape, pose).map(|(v, _)| v)
}

/// Blendshapes, joint regression, linear blend skinning, then the global
/// rotation and translation.
pub fn pose_vertices_with_cache<T: Real>(
    model: &HeadModel<T>,
    shape: &[T],
    pose: &FramePose<T>,
) -> Result<(Vec<Vec3<T>>, PoseCache<T>), ModelError> {
    if shape.len() != model.num_shape {
        return Err(ModelError::Length { what: "shape", expected: model.num_shape, got: shape.len() });
    }
    check_frame_lengths(model, pose)?;
    let nv = model.num_vertices();
    let nj = model.num_joints();
    let shaped = blend(model, shape, &pose.expression);

    let joints: Vec<Vec3<T>> = (0..nj)
        .map(|j| {
            let row = &model.joint_regressor[j * nv..(j + 1) * nv];
            let mut acc = Vec3::zero();
            for (w, p) in row.iter().zip(&shaped) {
                if *w != T::zero() {
                    acc += *p * *w;
                }
            }
            acc
        })
        .collect();

    let local_rot: Vec<Mat3<T>> = pose.joints.iter().map(|v| axis_angle_to_mat(*v)).collect();
    // skinning transform per joint: x -> Rg x + off, with
    // off_j = off_parent + Rg_parent (J_j − Rl_j J_j)
    let mut global_rot: Vec<Mat3<T>> = Vec::with_capacity(nj);
    let mut offsets: Vec<Vec3<T>> = Vec::with_capacity(nj);
    for j in 0..nj {
        let u = joints[j] - local_rot[j].mul_vec(joints[j]);
        let p = model.joint_parents[j];
        if p < 0 {
            global_rot.push(local_rot[j]);
            offsets.push(u);
        } else {
            let p = p as usize;
            let rp = global_rot[p];
            global_rot.push(rp * local_rot[j]);
            offsets.push(offsets[p] + rp.mul_vec(u));
        }
    }

    let root_rot = axis_angle_to_mat(pose.rotation);
    let mut skinned = Vec::with_capacity(nv);
    let mut out = Vec::with_capacity(nv);
    for v in 0..nv {
        // x + Σ w (Rg x + off − x), exact at the rest pose since Σ w = 1
        let x = shaped[v];
        let mut p = x;
        for j in 0..nj {
            let w = model.skin_weight(v, j);
            if w != T::zero() {
                p += (global_rot[j].mul_vec(x) - x + offsets[j]) * w;
            }
        }
        skinned.push(p);
        out.push(root_rot.mul_vec(p) + pose.translation);
    }
    Ok((out, PoseCache { shaped, joints, local_rot, global_rot, skinned, root_rot }))
}

/// Reverse-mode gradient of [`pose_vertices`] given `dL/dvertices`.
pub fn pose_vertices_backward<T: Real>(
    model: &HeadModel<T>,
    pose: &FramePose<T>,
    cache: &PoseCache<T>,
    grad_vertices: &[Vec3<T>],
) -> PoseGrad<T> {
    let nv = model.num_vertices();
    let nj = model.num_joints();

    let mut grad_translation = Vec3::zero();
    let mut grad_root = Mat3::zero();
    let mut grad_skinned = Vec::with_capacity(nv);
    for v in 0..nv {
        let g = grad_vertices[v];
        grad_translation += g;
        grad_root += Mat3::outer(g, cache.skinned[v]);
        grad_skinned.push(cache.root_rot.tmul_vec(g));
    }
    let grad_rotation = axis_angle_to_mat_backward(pose.rotation, &grad_root);

    let mut grad_shaped = vec![Vec3::zero(); nv];
    let mut grad_grot = vec![Mat3::zero(); nj];
    let mut grad_offset = vec![Vec3::zero(); nj];
    for v in 0..nv {
        let g = grad_skinned[v];
        let mut m = Mat3::zero();
        for j in 0..nj {
            let w = model.skin_weight(v, j);
            if w != T::zero() {
                m += cache.global_rot[j].scale(w);
                let gw = g * w;
                grad_grot[j] += Mat3::outer(gw, cache.shaped[v]);
                grad_offset[j] += gw;
            }
        }
        grad_shaped[v] = m.tmul_vec(g);
    }

    let mut grad_joints = vec![Vec3::zero(); nj];
    let mut grad_local = vec![Mat3::zero(); nj];
    for j in (0..nj).rev() {
        let jt = cache.joints[j];
        let rl = cache.local_rot[j];
        let p = model.joint_parents[j];
        let g_u = if p < 0 {
            grad_local[j] += grad_grot[j];
            grad_offset[j]
        } else {
            let p = p as usize;
            let rp = cache.global_rot[p];
            let go = grad_offset[j];
            grad_offset[p] += go;
            grad_grot[p] += Mat3::outer(go, jt - rl.mul_vec(jt));
            let gr = grad_grot[j];
            grad_grot[p] += gr * rl.transpose();
            grad_local[j] += rp.transpose() * gr;
            rp.tmul_vec(go)
        };
        // u = J − Rl J
        grad_joints[j] += g_u - rl.tmul_vec(g_u);
        grad_local[j] += Mat3::outer(-g_u, jt);
    }
    let grad_joint_rot: Vec<Vec3<T>> =
        (0..nj).map(|j| axis_angle_to_mat_backward(pose.joints[j], &grad_local[j])).collect();

    for j in 0..nj {
        let row = &model.joint_regressor[j * nv..(j + 1) * nv];
        let gj = grad_joints[j];
        for (v, w) in row.iter().enumerate() {
            if *w != T::zero() {
                grad_shaped[v] += gj * *w;
            }
        }
    }

    let ns = model.num_shape;
    let ne = model.num_expr;
    let mut grad_shape = vec![T::zero(); ns];
    let mut grad_expr = vec![T::zero(); ne];
    for v in 0..nv {
        for axis in 0..3 {
            let g = grad_shaped[v][axis];
            if g == T::zero() {
                continue;
            }
            let sb = &model.shape_basis[(v * 3 + axis) * ns..(v * 3 + axis + 1) * ns];
            for (acc, b) in grad_shape.iter_mut().zip(sb) {
                *acc += g * *b;
            }
            let eb = &model.expr_basis[(v * 3 + axis) * ne..(v * 3 + axis + 1) * ne];
            for (acc, b) in grad_expr.iter_mut().zip(eb) {
                *acc += g * *b;
            }
        }
    }

    PoseGrad {
        shape: grad_shape,
        expression: grad_expr,
        joints: grad_joint_rot,
        rotation: grad_rotation,
        translation: grad_translation,
    }
}
