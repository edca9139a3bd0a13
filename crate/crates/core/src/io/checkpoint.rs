//! Avatars and optimizer state in the GDHM container. Values are stored in
//! the native precision of the scalar type, so write → read → write is
//! byte-identical.

use std::path::Path;

use crate::avatar::Avatar;
use crate::cloud::GaussianCloud;
use crate::error::ModelError;
use crate::fields::{Dense, DeformationField, DynamicsField, Mlp};
use crate::head::{AvatarParams, FramePose};
use crate::linalg::Vec3;
use crate::real::Real;
use crate::train::AdamState;

use super::container::{Container, Tensor};
use super::model::{chunk, expect_dims, ints, real};

/// Training state at the end of an iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub iteration: usize,
    pub config_hash: [u8; 32],
    pub avatar: Avatar<T>,
    /// Optimizer moments keyed by parameter-group name.
    pub optimizer: Vec<(String, AdamState<T>)>,
}

fn put(c: &mut Container, name: &str, t: Tensor) {
    c.push(name, t).expect("checkpoint chunk names are unique");
}

fn flat3<T: Real>(v: &[Vec3<T>]) -> Vec<T> {
    v.iter().flat_map(|p| p.to_array()).collect()
}

fn unflat3<T: Real>(v: &[T]) -> Vec<Vec3<T>> {
    v.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

fn count(x: usize) -> Result<i32, ModelError> {
    i32::try_from(x).map_err(|_| ModelError::IndexOutOfRange { what: "count", index: x, bound: i32::MAX as usize })
}

fn scalar_int(c: &Container, name: &str) -> Result<usize, ModelError> {
    let (d, v) = ints(c, name, 1)?;
    expect_dims(name, &d, &[1])?;
    usize::try_from(v[0]).map_err(|_| ModelError::IndexOutOfRange { what: "count", index: 0, bound: 0 })
}

fn real_dims<T: Real>(c: &Container, name: &str, dims: &[usize]) -> Result<Vec<T>, ModelError> {
    let (d, v) = real(c, name, dims.len())?;
    expect_dims(name, &d, dims)?;
    Ok(v)
}

pub fn cloud_to_container<T: Real>(c: &mut Container, prefix: &str, cloud: &GaussianCloud<T>) {
    let n = cloud.len();
    put(c, &format!("{prefix}.parent_face"), Tensor::int(vec![n], cloud.parent_face.iter().map(|f| *f as i32).collect()));
    put(c, &format!("{prefix}.position"), Tensor::real(vec![n, 3], &flat3(&cloud.local_position)));
    let q: Vec<T> = cloud.local_rotation.iter().flatten().copied().collect();
    put(c, &format!("{prefix}.rotation"), Tensor::real(vec![n, 4], &q));
    put(c, &format!("{prefix}.log_scale"), Tensor::real(vec![n, 3], &flat3(&cloud.local_log_scale)));
    put(c, &format!("{prefix}.opacity_logit"), Tensor::real(vec![n], &cloud.opacity_logit));
    put(c, &format!("{prefix}.color_logit"), Tensor::real(vec![n, 3], &flat3(&cloud.color_logit)));
}

pub fn cloud_from_container<T: Real>(c: &Container, prefix: &str) -> Result<GaussianCloud<T>, ModelError> {
    let name = format!("{prefix}.parent_face");
    let (d, faces) = ints(c, &name, 1)?;
    let n = d[0];
    let parent_face = faces
        .iter()
        .map(|f| u32::try_from(*f).map_err(|_| ModelError::IndexOutOfRange { what: "parent_face", index: 0, bound: 0 }))
        .collect::<Result<_, _>>()?;
    let q = real_dims::<T>(c, &format!("{prefix}.rotation"), &[n, 4])?;
    Ok(GaussianCloud {
        parent_face,
        local_position: unflat3(&real_dims(c, &format!("{prefix}.position"), &[n, 3])?),
        local_rotation: q.chunks(4).map(|r| [r[0], r[1], r[2], r[3]]).collect(),
        local_log_scale: unflat3(&real_dims(c, &format!("{prefix}.log_scale"), &[n, 3])?),
        opacity_logit: real_dims(c, &format!("{prefix}.opacity_logit"), &[n])?,
        color_logit: unflat3(&real_dims(c, &format!("{prefix}.color_logit"), &[n, 3])?),
    })
}

fn frames_to_container<T: Real>(c: &mut Container, prefix: &str, frames: &[FramePose<T>]) {
    let nf = frames.len();
    let ne = frames.first().map_or(0, |f| f.expression.len());
    let nj = frames.first().map_or(0, |f| f.joints.len());
    let expr: Vec<T> = frames.iter().flat_map(|f| f.expression.iter().copied()).collect();
    let joints: Vec<T> = frames.iter().flat_map(|f| flat3(&f.joints)).collect();
    let rot: Vec<T> = frames.iter().flat_map(|f| f.rotation.to_array()).collect();
    let tr: Vec<T> = frames.iter().flat_map(|f| f.translation.to_array()).collect();
    put(c, &format!("{prefix}.expression"), Tensor::real(vec![nf, ne], &expr));
    put(c, &format!("{prefix}.joints"), Tensor::real(vec![nf, nj, 3], &joints));
    put(c, &format!("{prefix}.rotation"), Tensor::real(vec![nf, 3], &rot));
    put(c, &format!("{prefix}.translation"), Tensor::real(vec![nf, 3], &tr));
}

fn frames_from_container<T: Real>(c: &Container, prefix: &str) -> Result<Vec<FramePose<T>>, ModelError> {
    let (d, expr) = real::<T>(c, &format!("{prefix}.expression"), 2)?;
    let (nf, ne) = (d[0], d[1]);
    let (dj, joints) = real::<T>(c, &format!("{prefix}.joints"), 3)?;
    expect_dims(&format!("{prefix}.joints"), &dj[..1], &[nf])?;
    let nj = dj[1];
    let rot = real_dims::<T>(c, &format!("{prefix}.rotation"), &[nf, 3])?;
    let tr = real_dims::<T>(c, &format!("{prefix}.translation"), &[nf, 3])?;
    Ok((0..nf)
        .map(|f| FramePose {
            expression: expr[f * ne..(f + 1) * ne].to_vec(),
            joints: unflat3(&joints[f * nj * 3..(f + 1) * nj * 3]),
            rotation: Vec3::new(rot[3 * f], rot[3 * f + 1], rot[3 * f + 2]),
            translation: Vec3::new(tr[3 * f], tr[3 * f + 1], tr[3 * f + 2]),
        })
        .collect())
}

pub fn params_to_container<T: Real>(c: &mut Container, prefix: &str, p: &AvatarParams<T>) {
    put(c, &format!("{prefix}.shape"), Tensor::real(vec![p.shape.len()], &p.shape));
    put(c, &format!("{prefix}.shape_residual"), Tensor::real(vec![p.shape_residual.len()], &p.shape_residual));
    frames_to_container(c, &format!("{prefix}.tracked"), &p.frames);
    frames_to_container(c, &format!("{prefix}.residual"), &p.frame_residuals);
}

pub fn params_from_container<T: Real>(c: &Container, prefix: &str) -> Result<AvatarParams<T>, ModelError> {
    let (_, shape) = real(c, &format!("{prefix}.shape"), 1)?;
    let shape_residual = real_dims(c, &format!("{prefix}.shape_residual"), &[shape.len()])?;
    Ok(AvatarParams {
        shape,
        shape_residual,
        frames: frames_from_container(c, &format!("{prefix}.tracked"))?,
        frame_residuals: frames_from_container(c, &format!("{prefix}.residual"))?,
    })
}

fn mlp_to_container<T: Real>(c: &mut Container, prefix: &str, mlp: &Mlp<T>) {
    put(c, &format!("{prefix}.layers"), Tensor::int(vec![1], vec![mlp.layers.len() as i32]));
    for (k, l) in mlp.layers.iter().enumerate() {
        put(c, &format!("{prefix}.{k}.weight"), Tensor::real(vec![l.outputs, l.inputs], &l.weight));
        put(c, &format!("{prefix}.{k}.bias"), Tensor::real(vec![l.outputs], &l.bias));
    }
}

fn mlp_from_container<T: Real>(c: &Container, prefix: &str) -> Result<Mlp<T>, ModelError> {
    let n = scalar_int(c, &format!("{prefix}.layers"))?;
    let mut layers = Vec::with_capacity(n);
    for k in 0..n {
        let (d, weight) = real::<T>(c, &format!("{prefix}.{k}.weight"), 2)?;
        let bias = real_dims(c, &format!("{prefix}.{k}.bias"), &[d[0]])?;
        layers.push(Dense { inputs: d[1], outputs: d[0], weight, bias });
    }
    Ok(Mlp { layers })
}

pub fn avatar_to_container<T: Real>(c: &mut Container, a: &Avatar<T>) {
    cloud_to_container(c, "cloud", &a.cloud);
    params_to_container(c, "params", &a.params);
    if let Some(f) = &a.deformation {
        mlp_to_container(c, "deform.mlp", &f.mlp);
        put(c, "deform.gain", Tensor::real(vec![1], &[f.gain]));
        put(c, "deform.position_scale", Tensor::real(vec![1], &[f.position_scale]));
        put(c, "deform.latent_dim", Tensor::int(vec![1], vec![f.latent_dim as i32]));
    }
    if let Some(f) = &a.dynamics {
        mlp_to_container(c, "dynamics.mlp", &f.mlp);
        put(c, "dynamics.codes", Tensor::real(vec![f.num_gaussians(), f.code_dim], &f.codes));
        put(c, "dynamics.latent_dim", Tensor::int(vec![1], vec![f.latent_dim as i32]));
    }
}

pub fn avatar_from_container<T: Real>(c: &Container) -> Result<Avatar<T>, ModelError> {
    let deformation = match c.get("deform.gain") {
        Some(_) => Some(DeformationField {
            mlp: mlp_from_container(c, "deform.mlp")?,
            gain: real_dims(c, "deform.gain", &[1])?[0],
            position_scale: real_dims(c, "deform.position_scale", &[1])?[0],
            latent_dim: scalar_int(c, "deform.latent_dim")?,
        }),
        None => None,
    };
    let dynamics = match c.get("dynamics.codes") {
        Some(t) if t.dims.len() == 2 => Some(DynamicsField {
            mlp: mlp_from_container(c, "dynamics.mlp")?,
            codes: real_dims(c, "dynamics.codes", &t.dims.clone())?,
            code_dim: t.dims[1],
            latent_dim: scalar_int(c, "dynamics.latent_dim")?,
        }),
        Some(t) => {
            return Err(ModelError::ShapeMismatch { name: "dynamics.codes".into(), found: t.dims.clone(), expected: "rank 2".into() })
        }
        None => None,
    };
    Ok(Avatar {
        cloud: cloud_from_container(c, "cloud")?,
        params: params_from_container(c, "params")?,
        deformation,
        dynamics,
    })
}

impl<T: Real> Checkpoint<T> {
    pub fn to_container(&self) -> Result<Container, ModelError> {
        let mut c = Container::new();
        put(&mut c, "meta.iteration", Tensor::int(vec![1], vec![count(self.iteration)?]));
        let hash = self.config_hash.chunks(4).map(|w| i32::from_le_bytes(w.try_into().unwrap())).collect();
        put(&mut c, "meta.config_hash", Tensor::int(vec![8], hash));
        avatar_to_container(&mut c, &self.avatar);
        for (name, s) in &self.optimizer {
            put(&mut c, &format!("adam.{name}.row_len"), Tensor::int(vec![1], vec![count(s.row_len)?]));
            put(&mut c, &format!("adam.{name}.m"), Tensor::real(vec![s.m.len()], &s.m));
            put(&mut c, &format!("adam.{name}.v"), Tensor::real(vec![s.v.len()], &s.v));
            let steps = s.steps.iter().map(|t| count(*t as usize)).collect::<Result<_, _>>()?;
            put(&mut c, &format!("adam.{name}.steps"), Tensor::int(vec![s.steps.len()], steps));
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self, ModelError> {
        let iteration = scalar_int(c, "meta.iteration")?;
        let (d, h) = ints(c, "meta.config_hash", 1)?;
        expect_dims("meta.config_hash", &d, &[8])?;
        let mut config_hash = [0u8; 32];
        for (k, w) in h.iter().enumerate() {
            config_hash[4 * k..4 * k + 4].copy_from_slice(&w.to_le_bytes());
        }
        let mut optimizer = Vec::new();
        for (name, _) in &c.chunks {
            let Some(group) = name.strip_prefix("adam.").and_then(|r| r.strip_suffix(".row_len")) else { continue };
            let row_len = scalar_int(c, name)?;
            let (_, m) = real::<T>(c, &format!("adam.{group}.m"), 1)?;
            let v = real_dims(c, &format!("adam.{group}.v"), &[m.len()])?;
            let (_, steps) = ints(c, &format!("adam.{group}.steps"), 1)?;
            let steps = steps.iter().map(|s| *s as u64).collect();
            optimizer.push((group.to_string(), AdamState { row_len, m, v, steps }));
        }
        Ok(Self { iteration, config_hash, avatar: avatar_from_container(c)?, optimizer })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        Ok(self.to_container()?.to_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        self.to_container()?.write(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_container(&Container::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        Self::from_container(&Container::from_bytes(bytes).map_err(ModelError::from)?)
    }
}

/// Missing-chunk check used by loaders that need a specific chunk.
pub fn require(c: &Container, name: &str) -> Result<(), ModelError> {
    chunk(c, name).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{DeformationConfig, DynamicsConfig};

    fn sample_avatar() -> Avatar<f64> {
        let mut cloud = GaussianCloud::default();
        for i in 0..5u32 {
            let x = i as f64 * 0.1;
            cloud.push(i, Vec3::new(x, -x, 0.3), [0.9, 0.1, x, -0.2], Vec3::new(-1.0, x, 0.5), x - 0.3, Vec3::new(x, 2.0 * x, -x));
        }
        let frames = (0..3)
            .map(|f| {
                let mut p = FramePose::zeros(4, 2);
                p.expression[1] = f as f64 * 0.7;
                p.rotation = Vec3::new(0.01 * f as f64, 0.0, -0.02);
                p
            })
            .collect();
        let mut params = AvatarParams::new(vec![0.1, -0.2, 0.3], frames);
        params.frame_residuals[2].translation = Vec3::new(1e-3, 0.0, 0.0);
        Avatar {
            deformation: Some(DeformationField::new(6, &DeformationConfig { hidden: 8, ..Default::default() }, 1)),
            dynamics: Some(DynamicsField::new(5, 6, &DynamicsConfig { hidden: 8, code_dim: 4, code_init_std: 0.1 }, 2)),
            cloud,
            params,
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut adam = AdamState::<f64>::new(10, 2);
        adam.step(&mut vec![0.0; 10], &(0..10).map(|k| k as f64 * 0.37 - 1.0).collect::<Vec<_>>(), 0.01);
        let ck = Checkpoint { iteration: 17, config_hash: [7u8; 32], avatar: sample_avatar(), optimizer: vec![("cloud".into(), adam)] };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn f32_round_trip_and_missing_fields() {
        let a = sample_avatar();
        let a32 = Avatar::<f32> {
            cloud: GaussianCloud {
                parent_face: a.cloud.parent_face.clone(),
                local_position: a.cloud.local_position.iter().map(|v| v.cast()).collect(),
                local_rotation: a.cloud.local_rotation.iter().map(|q| q.map(|x| x as f32)).collect(),
                local_log_scale: a.cloud.local_log_scale.iter().map(|v| v.cast()).collect(),
                opacity_logit: a.cloud.opacity_logit.iter().map(|x| *x as f32).collect(),
                color_logit: a.cloud.color_logit.iter().map(|v| v.cast()).collect(),
            },
            params: AvatarParams::new(vec![0.5f32; 2], vec![FramePose::zeros(3, 1)]),
            deformation: None,
            dynamics: None,
        };
        let mut c = Container::new();
        avatar_to_container(&mut c, &a32);
        let back: Avatar<f32> = avatar_from_container(&Container::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, a32);
        assert!(matches!(require(&c, "deform.gain"), Err(ModelError::MissingChunk(_))));
    }
}
