//! File formats: the GDHM tensor container, model files, checkpoints, PLY
//! export and PNG codecs.

pub mod checkpoint;
pub mod container;
pub mod model;
pub mod ply;
pub mod png;

pub use container::{Container, Tensor, TensorData};
pub use model::{load_model, model_from_container, model_to_container, save_model};
pub use ply::{export_ply, parse_ply, ply_bytes, PlyGaussian, PLY_PROPERTIES, SH_C0};
pub use checkpoint::Checkpoint;
