//! Multi-view sequence datasets: the in-memory form consumed by the trainer
//! and the on-disk bundle.
//!
//! Bundle layout (all paths relative to the bundle root):
//!
//! ```text
//! manifest.json            counts, scene settings, sha256 of every file below
//! cameras.json             list of cameras, one per view
//! tracks.json              shape, per-frame pose/expression and latent, latent stats
//! model.gdhm               head model
//! rgb/vVV_fFFF.png         8-bit rgb
//! normal/vVV_fFFF.png      16-bit world-space normals
//! mask/vVV_fFFF.png        8-bit foreground mask (0 or 255)
//! posemap/vVV_fFFF.png     16-bit camera-space pose map
//! ground_truth/            optional; avatar.gdhm and tracks.json of the source avatar
//! ```
//!
//! The manifest is written last, so a bundle without one is incomplete.

pub mod sampler;
pub mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::GaussianCloud;
use crate::error::DatasetError;
use crate::fields::LatentStats;
use crate::head::{AvatarParams, FramePose, HeadModel};
use crate::imagebuf::Image;
use crate::io::checkpoint::{cloud_from_container, cloud_to_container};
use crate::io::container::Container;
use crate::io::model::{load_model, save_model};
use crate::io::png;
use crate::linalg::Vec3;
use crate::real::{lit, Real};
use crate::render::Camera;

pub use sampler::{draw_sample, sampler_probabilities, SamplerWeights};
pub use synth::{generate_oracle_scene, CameraRig, SynthConfig, TrackNoise};

pub const BUNDLE_FORMAT: &str = "headsplat-bundle";
pub const BUNDLE_VERSION: u32 = 1;
pub const MODALITIES: [&str; 4] = ["rgb", "normal", "mask", "posemap"];

/// Per-frame tracked parameters and expression latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub expression: Vec<f64>,
    pub joints: Vec<[f64; 3]>,
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
    pub latent: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tracks {
    pub shape: Vec<f64>,
    pub frames: Vec<TrackFrame>,
    pub latent_stats: LatentStats,
}

impl Tracks {
    pub fn from_params(params: &AvatarParams<f64>, latents: &[Vec<f64>]) -> Self {
        let frames = params
            .frames
            .iter()
            .zip(latents)
            .map(|(f, l)| TrackFrame {
                expression: f.expression.clone(),
                joints: f.joints.iter().map(|j| j.to_array()).collect(),
                rotation: f.rotation.to_array(),
                translation: f.translation.to_array(),
                latent: l.clone(),
            })
            .collect();
        Self { shape: params.shape.clone(), frames, latent_stats: LatentStats::from_latents(latents) }
    }

    /// Tracked values with zero residuals.
    pub fn to_params<T: Real>(&self) -> AvatarParams<T> {
        let frames = self
            .frames
            .iter()
            .map(|f| FramePose {
                expression: f.expression.iter().map(|x| lit(*x)).collect(),
                joints: f.joints.iter().map(|j| Vec3::from_f64(*j)).collect(),
                rotation: Vec3::from_f64(f.rotation),
                translation: Vec3::from_f64(f.translation),
            })
            .collect();
        AvatarParams::new(self.shape.iter().map(|x| lit(*x)).collect(), frames)
    }

    /// Normalized latent of `frame`.
    pub fn latent<T: Real>(&self, frame: usize) -> Vec<T> {
        self.latent_stats.normalize(&self.frames[frame].latent)
    }

    pub fn latent_dim(&self) -> usize {
        self.frames.first().map_or(0, |f| f.latent.len())
    }
}

/// Settings shared by the generator and the reconstructor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneInfo {
    pub width: usize,
    pub height: usize,
    pub remesh_resolution: usize,
    pub max_hops: usize,
    pub background: [f64; 3],
}

/// One (view, frame) pair. Values are exactly what the PNG codecs decode.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub rgb: Image<f32>,
    pub normal: Image<f32>,
    pub mask: Image<f32>,
    pub pose_map: Image<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub scene: SceneInfo,
    pub model: HeadModel<f64>,
    pub cameras: Vec<Camera>,
    pub tracks: Tracks,
    /// Indexed `view * num_frames + frame`.
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn num_views(&self) -> usize {
        self.cameras.len()
    }

    pub fn num_frames(&self) -> usize {
        self.tracks.frames.len()
    }

    pub fn sample(&self, view: usize, frame: usize) -> &Sample {
        &self.samples[view * self.num_frames() + frame]
    }

    /// Structural consistency of counts and image sizes.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let (w, h) = (self.scene.width, self.scene.height);
        if self.samples.len() != self.num_views() * self.num_frames() {
            return Err(DatasetError::Inconsistent(format!(
                "{} samples for {} views × {} frames",
                self.samples.len(),
                self.num_views(),
                self.num_frames()
            )));
        }
        for c in &self.cameras {
            if c.width != w || c.height != h || !c.is_valid() {
                return Err(DatasetError::Inconsistent("camera does not match the image size".into()));
            }
        }
        for s in &self.samples {
            for (img, ch) in [(&s.rgb, 3), (&s.normal, 3), (&s.mask, 1), (&s.pose_map, 3)] {
                if img.shape() != (h, w, ch) {
                    return Err(DatasetError::Inconsistent(format!("image of shape {:?}", img.shape())));
                }
            }
        }
        Ok(())
    }
}

/// The avatar a synthetic bundle was rendered from.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub cloud: GaussianCloud<f64>,
    pub tracks: Tracks,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub views: usize,
    pub frames: usize,
    pub scene: SceneInfo,
    /// Relative path → lowercase hex sha256.
    pub files: BTreeMap<String, String>,
}

pub fn sample_file(modality: &str, view: usize, frame: usize) -> String {
    format!("{modality}/v{view:02}_f{frame:03}.png")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Quantize as the 8-bit codec would.
pub fn quantize_unit8(img: &Image<f64>) -> Image<f32> {
    Image::from_data(img.width, img.height, img.channels, img.data.iter().map(|v| (png::encode_unit8(*v) as f64 / 255.0) as f32).collect())
}

/// Quantize as the 16-bit normal codec would.
pub fn quantize_normal16(img: &Image<f64>) -> Image<f32> {
    Image::from_data(
        img.width,
        img.height,
        img.channels,
        img.data.iter().map(|v| png::decode_normal16(png::encode_normal16(*v)) as f32).collect(),
    )
}

/// Write `dataset` (and optionally its ground truth) under `dir`.
pub fn save_bundle(dir: &Path, dataset: &Dataset, truth: Option<&GroundTruth>) -> Result<(), DatasetError> {
    dataset.validate()?;
    for m in MODALITIES {
        std::fs::create_dir_all(dir.join(m))?;
    }
    let _ = std::fs::remove_file(dir.join("manifest.json"));
    let mut names = vec!["cameras.json".to_string(), "tracks.json".to_string(), "model.gdhm".to_string()];
    std::fs::write(dir.join("cameras.json"), serde_json::to_vec_pretty(&dataset.cameras)?)?;
    std::fs::write(dir.join("tracks.json"), serde_json::to_vec_pretty(&dataset.tracks)?)?;
    save_model(&dataset.model, &dir.join("model.gdhm"))?;
    for v in 0..dataset.num_views() {
        for f in 0..dataset.num_frames() {
            let s = dataset.sample(v, f);
            png::write_rgb8(&dir.join(sample_file("rgb", v, f)), &s.rgb)?;
            png::write_normal16(&dir.join(sample_file("normal", v, f)), &s.normal)?;
            png::write_mask8(&dir.join(sample_file("mask", v, f)), &s.mask)?;
            png::write_normal16(&dir.join(sample_file("posemap", v, f)), &s.pose_map)?;
            names.extend(MODALITIES.iter().map(|m| sample_file(m, v, f)));
        }
    }
    if let Some(gt) = truth {
        let g = dir.join("ground_truth");
        std::fs::create_dir_all(&g)?;
        let mut c = Container::new();
        cloud_to_container(&mut c, "cloud", &gt.cloud);
        c.write(&g.join("avatar.gdhm")).map_err(|e| DatasetError::Model(e.into()))?;
        std::fs::write(g.join("tracks.json"), serde_json::to_vec_pretty(&gt.tracks)?)?;
    }
    let mut files = BTreeMap::new();
    for n in names {
        files.insert(n.clone(), sha256_hex(&std::fs::read(dir.join(&n))?));
    }
    let manifest = Manifest {
        format: BUNDLE_FORMAT.into(),
        version: BUNDLE_VERSION,
        views: dataset.num_views(),
        frames: dataset.num_frames(),
        scene: dataset.scene.clone(),
        files,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

/// Check that every expected file exists and matches its recorded hash.
pub fn check_bundle(dir: &Path) -> Result<Manifest, DatasetError> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Err(DatasetError::Inconsistent(format!("{} is missing", path.display())));
    }
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(&path)?)?;
    if manifest.format != BUNDLE_FORMAT || manifest.version != BUNDLE_VERSION {
        return Err(DatasetError::Inconsistent(format!("unsupported bundle {} v{}", manifest.format, manifest.version)));
    }
    for v in 0..manifest.views {
        for f in 0..manifest.frames {
            for m in MODALITIES {
                let name = sample_file(m, v, f);
                if !manifest.files.contains_key(&name) || !dir.join(&name).is_file() {
                    return Err(DatasetError::MissingModality { modality: m, view: v, frame: f });
                }
            }
        }
    }
    for name in ["cameras.json", "tracks.json", "model.gdhm"] {
        if !manifest.files.contains_key(name) {
            return Err(DatasetError::Inconsistent(format!("manifest does not list {name}")));
        }
    }
    for (name, hash) in &manifest.files {
        let p: PathBuf = dir.join(name);
        let bytes = std::fs::read(&p).map_err(|_| DatasetError::Hash(name.clone()))?;
        if &sha256_hex(&bytes) != hash {
            return Err(DatasetError::Hash(name.clone()));
        }
    }
    Ok(manifest)
}

/// Verify and load a bundle.
pub fn load_bundle(dir: &Path) -> Result<Dataset, DatasetError> {
    let manifest = check_bundle(dir)?;
    let cameras: Vec<Camera> = serde_json::from_slice(&std::fs::read(dir.join("cameras.json"))?)?;
    let tracks: Tracks = serde_json::from_slice(&std::fs::read(dir.join("tracks.json"))?)?;
    let model = load_model(&dir.join("model.gdhm"))?;
    if cameras.len() != manifest.views || tracks.frames.len() != manifest.frames {
        return Err(DatasetError::Inconsistent("manifest counts disagree with cameras/tracks".into()));
    }
    let mut samples = Vec::with_capacity(manifest.views * manifest.frames);
    for v in 0..manifest.views {
        for f in 0..manifest.frames {
            samples.push(Sample {
                rgb: png::read_rgb8(&dir.join(sample_file("rgb", v, f)))?,
                normal: png::read_normal16(&dir.join(sample_file("normal", v, f)))?,
                mask: png::read_mask8(&dir.join(sample_file("mask", v, f)))?,
                pose_map: png::read_normal16(&dir.join(sample_file("posemap", v, f)))?,
            });
        }
    }
    let ds = Dataset { scene: manifest.scene, model, cameras, tracks, samples };
    ds.validate()?;
    Ok(ds)
}

pub fn load_ground_truth(dir: &Path) -> Result<GroundTruth, DatasetError> {
    let g = dir.join("ground_truth");
    let c = Container::read(&g.join("avatar.gdhm")).map_err(|e| DatasetError::Model(e.into()))?;
    let cloud = cloud_from_container(&c, "cloud")?;
    let tracks: Tracks = serde_json::from_slice(&std::fs::read(g.join("tracks.json"))?)?;
    Ok(GroundTruth { cloud, tracks })
}
