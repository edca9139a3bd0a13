//! Head models in the GDHM container.

use std::path::Path;

use crate::error::ModelError;
use crate::head::HeadModel;
use crate::linalg::Vec3;
use crate::real::Real;

use super::container::{Container, Tensor};

const CHUNKS: [&str; 10] = [
    "template_vertices",
    "faces",
    "uv_coords",
    "uv_faces",
    "shape_basis",
    "expr_basis",
    "joint_rest",
    "joint_parents",
    "joint_regressor",
    "skin_weights",
];

fn flat3<T: Real>(v: &[Vec3<T>]) -> Vec<T> {
    v.iter().flat_map(|p| p.to_array()).collect()
}

fn tri_ints(f: &[[u32; 3]]) -> Vec<i32> {
    f.iter().flat_map(|t| t.map(|i| i as i32)).collect()
}

pub fn model_to_container<T: Real>(m: &HeadModel<T>) -> Container {
    let (nv, nf, nj) = (m.num_vertices(), m.num_faces(), m.num_joints());
    let mut c = Container::new();
    let mut put = |name: &str, t: Tensor| c.push(name, t).expect("fixed chunk names are unique");
    put("template_vertices", Tensor::real(vec![nv, 3], &flat3(&m.template_vertices)));
    put("faces", Tensor::int(vec![nf, 3], tri_ints(&m.faces)));
    put("uv_coords", Tensor::real(vec![m.uv_coords.len(), 2], &m.uv_coords.iter().flatten().copied().collect::<Vec<T>>()));
    put("uv_faces", Tensor::int(vec![m.uv_faces.len(), 3], tri_ints(&m.uv_faces)));
    put("shape_basis", Tensor::real(vec![nv, 3, m.num_shape], &m.shape_basis));
    put("expr_basis", Tensor::real(vec![nv, 3, m.num_expr], &m.expr_basis));
    put("joint_rest", Tensor::real(vec![nj, 3], &flat3(&m.joint_rest)));
    put("joint_parents", Tensor::int(vec![nj], m.joint_parents.clone()));
    put("joint_regressor", Tensor::real(vec![nj, nv], &m.joint_regressor));
    put("skin_weights", Tensor::real(vec![nv, nj], &m.skin_weights));
    c
}

pub fn save_model<T: Real>(m: &HeadModel<T>, path: &Path) -> Result<(), ModelError> {
    model_to_container(m).write(path)?;
    Ok(())
}

pub(crate) fn chunk<'a>(c: &'a Container, name: &str) -> Result<&'a Tensor, ModelError> {
    c.get(name).ok_or_else(|| ModelError::MissingChunk(name.to_string()))
}

pub(crate) fn real<T: Real>(c: &Container, name: &str, rank: usize) -> Result<(Vec<usize>, Vec<T>), ModelError> {
    let t = chunk(c, name)?;
    if t.dims.len() != rank {
        return Err(ModelError::ShapeMismatch { name: name.into(), found: t.dims.clone(), expected: format!("rank {rank}") });
    }
    let v = t.to_real().ok_or_else(|| ModelError::DTypeMismatch { name: name.into(), found: t.element(), expected: "float".into() })?;
    Ok((t.dims.clone(), v))
}

pub(crate) fn ints(c: &Container, name: &str, rank: usize) -> Result<(Vec<usize>, Vec<i32>), ModelError> {
    let t = chunk(c, name)?;
    if t.dims.len() != rank {
        return Err(ModelError::ShapeMismatch { name: name.into(), found: t.dims.clone(), expected: format!("rank {rank}") });
    }
    let v = t.as_int().ok_or_else(|| ModelError::DTypeMismatch { name: name.into(), found: t.element(), expected: "i32".into() })?;
    Ok((t.dims.clone(), v.to_vec()))
}

pub(crate) fn expect_dims(name: &str, found: &[usize], expected: &[usize]) -> Result<(), ModelError> {
    if found != expected {
        return Err(ModelError::ShapeMismatch { name: name.into(), found: found.to_vec(), expected: format!("{expected:?}") });
    }
    Ok(())
}

fn triangles(name: &'static str, v: &[i32]) -> Result<Vec<[u32; 3]>, ModelError> {
    v.chunks(3)
        .map(|t| {
            let mut out = [0u32; 3];
            for k in 0..3 {
                out[k] = u32::try_from(t[k]).map_err(|_| ModelError::IndexOutOfRange { what: name, index: 0, bound: 0 })?;
            }
            Ok(out)
        })
        .collect()
}

/// Decode and validate a model. Unknown chunks are skipped with a warning.
pub fn model_from_container<T: Real>(c: &Container) -> Result<HeadModel<T>, ModelError> {
    for (name, _) in &c.chunks {
        if !CHUNKS.contains(&name.as_str()) {
            log::warn!("skipping unknown model chunk `{name}`");
        }
    }
    let (dv, tv) = real::<T>(c, "template_vertices", 2)?;
    let nv = dv[0];
    expect_dims("template_vertices", &dv, &[nv, 3])?;
    let (df, fv) = ints(c, "faces", 2)?;
    let nf = df[0];
    expect_dims("faces", &df, &[nf, 3])?;
    let (duv, uv) = real::<T>(c, "uv_coords", 2)?;
    expect_dims("uv_coords", &duv, &[duv[0], 2])?;
    let (duf, uf) = ints(c, "uv_faces", 2)?;
    expect_dims("uv_faces", &duf, &[nf, 3])?;
    let (ds, sb) = real::<T>(c, "shape_basis", 3)?;
    expect_dims("shape_basis", &ds, &[nv, 3, ds[2]])?;
    let (de, eb) = real::<T>(c, "expr_basis", 3)?;
    expect_dims("expr_basis", &de, &[nv, 3, de[2]])?;
    let (dj, jr) = real::<T>(c, "joint_rest", 2)?;
    let nj = dj[0];
    expect_dims("joint_rest", &dj, &[nj, 3])?;
    let (dp, parents) = ints(c, "joint_parents", 1)?;
    expect_dims("joint_parents", &dp, &[nj])?;
    let (dr, reg) = real::<T>(c, "joint_regressor", 2)?;
    expect_dims("joint_regressor", &dr, &[nj, nv])?;
    let (dw, sw) = real::<T>(c, "skin_weights", 2)?;
    expect_dims("skin_weights", &dw, &[nv, nj])?;

    let v3 = |v: &[T]| v.chunks(3).map(|p| Vec3::new(p[0], p[1], p[2])).collect::<Vec<_>>();
    let m = HeadModel {
        template_vertices: v3(&tv),
        faces: triangles("faces", &fv)?,
        uv_coords: uv.chunks(2).map(|p| [p[0], p[1]]).collect(),
        uv_faces: triangles("uv_faces", &uf)?,
        num_shape: ds[2],
        num_expr: de[2],
        shape_basis: sb,
        expr_basis: eb,
        joint_rest: v3(&jr),
        joint_parents: parents,
        joint_regressor: reg,
        skin_weights: sw,
    };
    m.validate()?;
    Ok(m)
}

pub fn load_model<T: Real>(path: &Path) -> Result<HeadModel<T>, ModelError> {
    let c = Container::read(path)?;
    model_from_container(&c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{make_toy_model, ToyModelOptions};
    use crate::error::ContainerError;

    fn toy() -> HeadModel<f64> {
        make_toy_model(&ToyModelOptions { target_vertices: 100, num_shape: 3, num_expr: 2, ..Default::default() })
    }

    #[test]
    fn round_trip_and_truncation() {
        let m = toy();
        let c = model_to_container(&m);
        let bytes = c.to_bytes();
        let back: HeadModel<f64> = model_from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, m);
        let bounds = c.chunk_boundaries();
        for (k, b) in bounds[..bounds.len() - 1].iter().enumerate() {
            let parsed = Container::from_bytes(&bytes[..*b]).unwrap();
            match model_from_container::<f64>(&parsed) {
                Err(ModelError::MissingChunk(name)) => assert_eq!(name, CHUNKS[k]),
                other => panic!("cut at {b}: {other:?}"),
            }
        }
        // a cut inside a chunk names that chunk
        match Container::from_bytes(&bytes[..bounds[3] + 20]) {
            Err(ContainerError::Truncated(name)) => assert_eq!(name, CHUNKS[3]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_skin_weights_fail_validation() {
        let mut m = toy();
        let nj = m.num_joints();
        for j in 0..nj {
            m.skin_weights[j] = 0.5 / nj as f64;
        }
        let c = model_to_container(&m);
        assert!(matches!(model_from_container::<f64>(&c), Err(ModelError::SkinWeights { vertex: 0, .. })));
    }

    #[test]
    fn unknown_chunks_are_skipped() {
        let m = toy();
        let mut c = model_to_container(&m);
        c.push("extra", Tensor::int(vec![1], vec![3])).unwrap();
        assert_eq!(model_from_container::<f64>(&c).unwrap(), m);
    }
}
