//! Head-pose maps: camera-space vertex normals of the expression-free posed
//! mesh, rasterized with a z-buffer.

use rayon::prelude::*;

use crate::error::ModelError;
use crate::head::{pose_vertices, vertex_normals, AvatarParams, HeadModel};
use crate::imagebuf::Image;
use crate::linalg::Vec3;
use crate::real::{lit, Real};
use crate::render::Camera;

struct ScreenTriangle<T> {
    p: [[f64; 2]; 3],
    inv_z: [f64; 3],
    normals: [Vec3<T>; 3],
    rows: (usize, usize),
    cols: (usize, usize),
}

/// Render the pose map of `frame`. Expression coefficients (tracked and
/// residual) are replaced by zeros; shape, joint rotations and the global
/// transform are kept. Background pixels are `(0, 0, 0)`.
pub fn render_pose_map<T: Real>(
    model: &HeadModel<T>,
    params: &AvatarParams<T>,
    frame: usize,
    camera: &Camera,
) -> Result<Image<T>, ModelError> {
    if frame >= params.num_frames() {
        return Err(ModelError::IndexOutOfRange { what: "frame", index: frame, bound: params.num_frames() });
    }
    let mut pose = params.effective_frame(frame);
    pose.expression = vec![T::zero(); model.num_expr];
    let verts = pose_vertices(model, &params.effective_shape(), &pose)?;
    Ok(rasterize_normals(&verts, &model.faces, camera))
}

/// Z-buffered rasterization of camera-space vertex normals with
/// perspective-correct interpolation. Depth ties keep the lower face index.
pub fn rasterize_normals<T: Real>(vertices: &[Vec3<T>], faces: &[[u32; 3]], camera: &Camera) -> Image<T> {
    let (w, h) = (camera.width, camera.height);
    let rot = camera.rotation::<T>();
    let normals = vertex_normals(vertices, faces).normals;
    let cam_pts: Vec<Vec3<f64>> = vertices.iter().map(|v| camera.world_to_camera(*v).cast()).collect();

    let mut tris = Vec::new();
    for f in faces {
        let pc = f.map(|i| cam_pts[i as usize]);
        if pc.iter().any(|p| !(p.z > camera.near)) {
            continue;
        }
        let p = pc.map(|q| camera.project(q));
        let min_x = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
        let max_x = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
        let max_y = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
        let c0 = (min_x - 0.5).ceil().max(0.0);
        let c1 = (max_x - 0.5).floor().min(w as f64 - 1.0);
        let r0 = (min_y - 0.5).ceil().max(0.0);
        let r1 = (max_y - 0.5).floor().min(h as f64 - 1.0);
        if !(c0 <= c1 && r0 <= r1) {
            continue;
        }
        tris.push(ScreenTriangle {
            p,
            inv_z: pc.map(|q| 1.0 / q.z),
            normals: f.map(|i| rot.mul_vec(normals[i as usize])),
            rows: (r0 as usize, r1 as usize),
            cols: (c0 as usize, c1 as usize),
        });
    }

    let mut rows_tris: Vec<Vec<usize>> = vec![Vec::new(); h];
    for (k, t) in tris.iter().enumerate() {
        for r in t.rows.0..=t.rows.1 {
            rows_tris[r].push(k);
        }
    }

    let rows: Vec<Vec<T>> = rows_tris
        .par_iter()
        .enumerate()
        .map(|(row, list)| {
            let mut line = vec![T::zero(); 3 * w];
            let mut depth = vec![f64::INFINITY; w];
            let py = row as f64 + 0.5;
            for &k in list {
                let t = &tris[k];
                let [a, b, c] = t.p;
                let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
                if area == 0.0 {
                    continue;
                }
                for col in t.cols.0..=t.cols.1 {
                    let px = col as f64 + 0.5;
                    let e0 = ((c[0] - b[0]) * (py - b[1]) - (c[1] - b[1]) * (px - b[0])) / area;
                    let e1 = ((a[0] - c[0]) * (py - c[1]) - (a[1] - c[1]) * (px - c[0])) / area;
                    let e2 = 1.0 - e0 - e1;
                    if e0 < 0.0 || e1 < 0.0 || e2 < 0.0 {
                        continue;
                    }
                    let iz = e0 * t.inv_z[0] + e1 * t.inv_z[1] + e2 * t.inv_z[2];
                    let z = 1.0 / iz;
                    // triangles arrive in face order, so the strict test
                    // keeps the lower face index on ties
                    if !(z < depth[col]) {
                        continue;
                    }
                    depth[col] = z;
                    let wts = [e0 * t.inv_z[0] * z, e1 * t.inv_z[1] * z, e2 * t.inv_z[2] * z].map(lit::<T>);
                    let n = t.normals[0] * wts[0] + t.normals[1] * wts[1] + t.normals[2] * wts[2];
                    line[3 * col..3 * col + 3].copy_from_slice(&n.to_array());
                }
            }
            line
        })
        .collect();
    Image::from_data(w, h, 3, rows.concat())
}
