//! Synthetic oracle scenes: a known avatar rendered into a dataset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::avatar::Avatar;
use crate::cloud::{triangle_frame, GaussianCloud};
use crate::error::DatasetError;
use crate::head::{make_toy_model, AvatarParams, FramePose, HeadModel, ToyModelOptions};
use crate::imagebuf::Image;
use crate::linalg::Vec3;
use crate::posemap::render_pose_map;
use crate::real::logit;
use crate::remesh::{remesh_uv, UvRemesh};
use crate::render::{Background, Camera};

use super::{quantize_normal16, quantize_unit8, Dataset, GroundTruth, Sample, SceneInfo, Tracks};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CameraRig {
    /// Evenly spaced around the vertical axis.
    Ring,
    /// Evenly spaced yaw in `[-max_yaw_degrees, max_yaw_degrees]` facing the
    /// front of the head.
    Arc { max_yaw_degrees: f64 },
}

/// Gaussian noise added to the written tracks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackNoise {
    /// Axis-angle noise on the global rotation (radians).
    pub rotation: f64,
    pub expression: f64,
}

impl Default for TrackNoise {
    fn default() -> Self {
        Self { rotation: 0.02, expression: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub views: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub rig: CameraRig,
    pub camera_distance: f64,
    /// Focal length in pixels; framed to the head when absent.
    pub focal: Option<f64>,
    pub model: ToyModelOptions,
    pub latent_dim: usize,
    pub remesh_resolution: usize,
    pub max_hops: usize,
    /// Amplitude of the expression coefficients.
    pub expression_scale: f64,
    /// Amplitude of the global head rotation (radians).
    pub head_rotation_scale: f64,
    /// Amplitude of the jaw rotation (radians).
    pub jaw_scale: f64,
    pub noise: Option<TrackNoise>,
    pub background: [f64; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            views: 12,
            frames: 40,
            width: 128,
            height: 128,
            rig: CameraRig::Ring,
            camera_distance: 0.5,
            focal: None,
            model: ToyModelOptions { seed: 0, target_vertices: 1000, num_shape: 10, num_expr: 10 },
            latent_dim: 32,
            remesh_resolution: 20,
            max_hops: 5,
            expression_scale: 1.0,
            head_rotation_scale: 0.15,
            jaw_scale: 0.15,
            noise: None,
            background: [0.0; 3],
        }
    }
}

impl SynthConfig {
    pub fn focal(&self) -> f64 {
        // the toy head is about 0.24 m tall; fill 80% of the shorter side
        self.focal.unwrap_or(0.8 * self.width.min(self.height) as f64 * self.camera_distance / 0.24)
    }

    pub fn cameras(&self) -> Vec<Camera> {
        (0..self.views)
            .map(|i| {
                let yaw = match self.rig {
                    CameraRig::Ring => std::f64::consts::TAU * i as f64 / self.views as f64,
                    CameraRig::Arc { max_yaw_degrees } if self.views > 1 => {
                        (-max_yaw_degrees + 2.0 * max_yaw_degrees * i as f64 / (self.views - 1) as f64).to_radians()
                    }
                    CameraRig::Arc { .. } => 0.0,
                };
                let d = self.camera_distance;
                Camera::look_at([d * yaw.sin(), 0.0, d * yaw.cos()], [0.0; 3], [0.0, 1.0, 0.0], self.focal(), self.width, self.height)
            })
            .collect()
    }
}

/// Smooth per-frame parameters: a few sinusoids per coefficient.
fn true_tracks(cfg: &SynthConfig, model: &HeadModel<f64>, rng: &mut ChaCha8Rng) -> AvatarParams<f64> {
    let nf = cfg.frames;
    let mut wave = |amp: f64| {
        let a = amp * rng.random_range(0.5..1.0);
        let cycles = rng.random_range(0.5..2.0);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        move |t: usize| a * (std::f64::consts::TAU * cycles * t as f64 / nf.max(1) as f64 + phase).sin()
    };
    let expr: Vec<_> = (0..model.num_expr).map(|_| wave(cfg.expression_scale)).collect();
    let rot: Vec<_> = [1.0, 1.0, 0.5].iter().map(|s| wave(cfg.head_rotation_scale * s)).collect();
    let trans: Vec<_> = (0..3).map(|_| wave(0.005)).collect();
    let jaw = wave(cfg.jaw_scale);
    let shape: Vec<f64> = (0..model.num_shape).map(|_| rng.random_range(-1.0..1.0)).collect();
    let frames = (0..nf)
        .map(|t| {
            let mut f = FramePose::zeros(model.num_expr, model.num_joints());
            f.expression = expr.iter().map(|w| w(t)).collect();
            f.rotation = Vec3::new(rot[0](t), rot[1](t), rot[2](t));
            f.translation = Vec3::new(trans[0](t), trans[1](t), trans[2](t));
            if model.num_joints() > 1 {
                f.joints[1] = Vec3::new(0.5 * cfg.jaw_scale + 0.5 * jaw(t), 0.0, 0.0);
            }
            f
        })
        .collect();
    AvatarParams::new(shape, frames)
}

/// One flat, opaque, colored Gaussian per remeshed triangle.
fn true_cloud(remesh: &UvRemesh<f64>, rng: &mut ChaCha8Rng) -> GaussianCloud<f64> {
    let noise = Normal::new(0.0, 0.6).expect("finite std");
    let waves: Vec<(Vec3<f64>, f64, f64)> = (0..3)
        .map(|_| {
            let k = Vec3::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0));
            (k, rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.8..1.6))
        })
        .collect();
    let mut cloud = GaussianCloud::default();
    for (fi, f) in remesh.faces.iter().enumerate() {
        let [a, b, c] = f.map(|i| remesh.vertices[i as usize]);
        if triangle_frame(a, b, c).is_err() {
            continue;
        }
        let centroid = (a + b + c) * (1.0 / 3.0);
        let color = Vec3::from_array(std::array::from_fn(|ch| {
            let (k, phase, amp) = waves[ch];
            amp * (k.dot(centroid) + phase).sin() + noise.sample(rng)
        }));
        let theta: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let q = [(0.5 * theta).cos(), 0.0, (0.5 * theta).sin(), 0.0];
        let mu = Vec3::new(rng.random_range(-0.15..0.15), 0.0, rng.random_range(-0.15..0.15));
        let s = Vec3::new(rng.random_range(0.4f64..0.6).ln(), 0.08f64.ln(), rng.random_range(0.4f64..0.6).ln());
        cloud.push(fi as u32, mu, q, s, logit(rng.random_range(0.85..0.97)), color);
    }
    cloud
}

fn perturb(params: &AvatarParams<f64>, noise: &TrackNoise, rng: &mut ChaCha8Rng) -> AvatarParams<f64> {
    let rot = Normal::new(0.0, noise.rotation).expect("finite std");
    let expr = Normal::new(0.0, noise.expression).expect("finite std");
    let mut out = params.clone();
    for f in &mut out.frames {
        f.rotation += Vec3::new(rot.sample(rng), rot.sample(rng), rot.sample(rng));
        for e in &mut f.expression {
            *e += expr.sample(rng);
        }
    }
    out
}

/// Fail when any sample has an empty foreground mask.
fn check_coverage(samples: &[Sample], pairs: &[(usize, usize)]) -> Result<(), DatasetError> {
    if let Some(i) = samples.iter().position(|s| s.mask.data.iter().all(|m| *m == 0.0)) {
        log::warn!("view {} frame {} has no foreground pixels", pairs[i].0, pairs[i].1);
        return Err(DatasetError::NoCoverage(samples[i].mask.width.min(samples[i].mask.height)));
    }
    Ok(())
}

/// Render a known avatar into a dataset. The returned ground truth holds the
/// source cloud and the noise-free tracks.
pub fn generate_oracle_scene(cfg: &SynthConfig) -> Result<(Dataset, GroundTruth), DatasetError> {
    if cfg.views == 0 || cfg.frames == 0 {
        return Err(DatasetError::Inconsistent("views and frames must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model: HeadModel<f64> = make_toy_model(&ToyModelOptions { seed: cfg.seed, ..cfg.model.clone() });
    let remesh = remesh_uv(&model, cfg.remesh_resolution, cfg.max_hops)
        .map_err(|e| DatasetError::Inconsistent(format!("remesh: {e}")))?;
    let truth_params = true_tracks(cfg, &model, &mut rng);
    let cloud = true_cloud(&remesh, &mut rng);

    // latent = fixed random linear map of the true expression
    let map_std = Normal::new(0.0, 1.0 / (model.num_expr.max(1) as f64).sqrt()).expect("finite std");
    let map: Vec<f64> = (0..cfg.latent_dim * model.num_expr).map(|_| map_std.sample(&mut rng)).collect();
    let latents: Vec<Vec<f64>> = truth_params
        .frames
        .iter()
        .map(|f| {
            (0..cfg.latent_dim)
                .map(|r| (0..model.num_expr).map(|c| map[r * model.num_expr + c] * f.expression[c]).sum())
                .collect()
        })
        .collect();
    let written = match &cfg.noise {
        Some(n) => perturb(&truth_params, n, &mut rng),
        None => truth_params.clone(),
    };

    let cameras = cfg.cameras();
    let avatar = Avatar { cloud: cloud.clone(), params: truth_params.clone(), deformation: None, dynamics: None };
    let background = Background::new(Vec3::from_array(cfg.background));
    let pairs: Vec<(usize, usize)> = (0..cfg.views).flat_map(|v| (0..cfg.frames).map(move |f| (v, f))).collect();
    let samples: Vec<Result<Sample, DatasetError>> = pairs
        .par_iter()
        .map(|&(v, f)| {
            let (out, _, _) = avatar
                .render_frame(&model, &remesh, f, &[], &cameras[v], &background)
                .map_err(|e| DatasetError::Inconsistent(e.to_string()))?;
            let (w, h) = (cfg.width, cfg.height);
            let rgb = Image::from_data(w, h, 3, out.rgb.clone());
            let alpha = &out.alpha;
            let normal = Image::from_data(
                w,
                h,
                3,
                (0..w * h)
                    .flat_map(|p| {
                        let a = alpha[p];
                        (0..3).map(move |c| (p, c, a))
                    })
                    .map(|(p, c, a)| if a > 0.0 { out.normal[3 * p + c] / a } else { 0.0 })
                    .collect(),
            );
            let mask = Image::from_data(w, h, 1, alpha.iter().map(|a| if *a > 0.5 { 1.0f32 } else { 0.0 }).collect());
            let pose_map = render_pose_map(&model, &written, f, &cameras[v])?;
            Ok(Sample { rgb: quantize_unit8(&rgb), normal: quantize_normal16(&normal), mask, pose_map: quantize_normal16(&pose_map) })
        })
        .collect();
    let samples = samples.into_iter().collect::<Result<Vec<_>, _>>()?;
    check_coverage(&samples, &pairs)?;
    let scene = SceneInfo {
        width: cfg.width,
        height: cfg.height,
        remesh_resolution: cfg.remesh_resolution,
        max_hops: cfg.max_hops,
        background: cfg.background,
    };
    let dataset = Dataset { scene, model, cameras, tracks: Tracks::from_params(&written, &latents), samples };
    let truth = GroundTruth { cloud, tracks: Tracks::from_params(&truth_params, &latents) };
    Ok((dataset, truth))
}
