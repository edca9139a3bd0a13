//! Triangle-bound 3D Gaussian head avatars.
//!
//! The numeric core is generic over the scalar type (`f32` or `f64`, see
//! [`Real`]); the aliases at the bottom of this file pin the common choices.

pub mod avatar;
pub mod cloud;
pub mod data;
pub mod error;
pub mod fields;
pub mod gradsuite;
pub mod head;
pub mod imagebuf;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod posemap;
pub mod real;
pub mod render;
pub mod remesh;
pub mod train;

pub use error::*;
pub use head::{AvatarParams, FramePose, HeadModel};
pub use linalg::{Mat3, Vec3};
pub use real::Real;

pub type HeadModelF32 = head::HeadModel<f32>;
pub type HeadModelF64 = head::HeadModel<f64>;
pub type AvatarParamsF32 = head::AvatarParams<f32>;
pub type AvatarParamsF64 = head::AvatarParams<f64>;
pub type GaussianCloudF32 = cloud::GaussianCloud<f32>;
pub type GaussianCloudF64 = cloud::GaussianCloud<f64>;
pub type WorldGaussiansF32 = cloud::WorldGaussians<f32>;
pub type WorldGaussiansF64 = cloud::WorldGaussians<f64>;
pub type UvRemeshF32 = remesh::UvRemesh<f32>;
pub type UvRemeshF64 = remesh::UvRemesh<f64>;
pub type AvatarF32 = avatar::Avatar<f32>;
pub type AvatarF64 = avatar::Avatar<f64>;
pub type CheckpointF32 = io::Checkpoint<f32>;
pub type CheckpointF64 = io::Checkpoint<f64>;
pub type TrainerF32<'a> = train::Trainer<'a, f32>;
pub type TrainerF64<'a> = train::Trainer<'a, f64>;
pub type ImageF32 = imagebuf::Image<f32>;
pub type ImageF64 = imagebuf::Image<f64>;
