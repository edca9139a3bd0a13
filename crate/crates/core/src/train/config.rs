//! Reconstruction settings, loadable from JSON with dotted-path overrides.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fields::{DeformationConfig, DynamicsConfig};

use super::losses::LossWeights;
use super::schedule::ScheduleSpec;

/// Learning-rate schedule of every parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupRates {
    pub position: ScheduleSpec,
    pub rotation: ScheduleSpec,
    pub scale: ScheduleSpec,
    pub opacity: ScheduleSpec,
    pub color: ScheduleSpec,
    pub deformation: ScheduleSpec,
    pub dynamics: ScheduleSpec,
    pub codes: ScheduleSpec,
    pub shape: ScheduleSpec,
    pub expression: ScheduleSpec,
    /// Global rotation, translation and joint rotations.
    pub pose: ScheduleSpec,
}

impl Default for GroupRates {
    fn default() -> Self {
        Self {
            position: ScheduleSpec::constant(1e-4),
            rotation: ScheduleSpec::constant(5e-3),
            scale: ScheduleSpec::constant(1e-2),
            opacity: ScheduleSpec::constant(2e-2),
            color: ScheduleSpec::constant(2e-2),
            deformation: ScheduleSpec::constant(1e-3),
            dynamics: ScheduleSpec::constant(1e-3),
            codes: ScheduleSpec::constant(1e-3),
            shape: ScheduleSpec::three_phase(1e-10, 1e-5),
            expression: ScheduleSpec::three_phase(1e-10, 1e-4),
            pose: ScheduleSpec::three_phase(1e-10, 1e-5),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub total_iters: usize,
    pub seed: u64,
    pub gaussians_per_triangle: usize,
    /// Views never sampled for training.
    pub holdout_views: Vec<usize>,
    /// Train on this `(view, frame)` pair only.
    pub fixed_sample: Option<(usize, usize)>,
    pub learn_residuals: bool,
    /// Length (metres) in which the optimizer measures translation residuals,
    /// so the pose group's rate applies to `t / translation_unit`.
    pub translation_unit: f64,
    pub deformation_field: bool,
    pub dynamics_field: bool,
    /// Opacity pruning cadence; 0 disables pruning.
    pub prune_interval: usize,
    pub prune_threshold: f64,
    /// Checkpoint cadence; 0 writes only the final checkpoint.
    pub checkpoint_interval: usize,
    pub log_interval: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            total_iters: 2000,
            seed: 0,
            gaussians_per_triangle: 1,
            holdout_views: Vec::new(),
            fixed_sample: None,
            learn_residuals: false,
            translation_unit: 1.0,
            deformation_field: true,
            dynamics_field: true,
            prune_interval: 0,
            prune_threshold: 0.005,
            checkpoint_interval: 0,
            log_interval: 100,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub trainer: TrainerConfig,
    pub loss: LossWeights,
    pub rates: GroupRates,
    pub deformation: DeformationConfig,
    pub dynamics: DynamicsConfig,
}

impl TrainConfig {
    /// sha256 of the canonical JSON encoding.
    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }
}

/// Apply a `dotted.path=value` override to a JSON document. The value is
/// parsed as JSON when possible and taken as a string otherwise. Missing
/// intermediate objects are created.
pub fn apply_override(doc: &mut serde_json::Value, assignment: &str) -> Result<(), String> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| format!("`{assignment}` is not key=value"))?;
    let value: serde_json::Value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(format!("bad key `{path}`"));
    }
    for (i, k) in keys.iter().enumerate() {
        if !cur.is_object() {
            if cur.is_null() {
                *cur = serde_json::Value::Object(Default::default());
            } else {
                return Err(format!("`{}` is not an object", keys[..i].join(".")));
            }
        }
        let obj = cur.as_object_mut().expect("checked above");
        if i + 1 == keys.len() {
            obj.insert(k.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(k.to_string()).or_insert(serde_json::Value::Null);
    }
    unreachable!("path has at least one key")
}

/// Decode `T` from an optional base document with overrides applied; fields
/// absent from the document take their defaults.
pub fn load_with_overrides<T: serde::de::DeserializeOwned>(
    base: Option<serde_json::Value>,
    overrides: &[String],
) -> Result<T, String> {
    let mut doc = base.unwrap_or_else(|| serde_json::Value::Object(Default::default()));
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    serde_json::from_value(doc).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_take_precedence() {
        let base = serde_json::json!({"trainer": {"total_iters": 50, "seed": 3}});
        let cfg: TrainConfig = load_with_overrides(Some(base), &["trainer.total_iters=10".into(), "loss.normal=0".into()]).unwrap();
        assert_eq!(cfg.trainer.total_iters, 10);
        assert_eq!(cfg.trainer.seed, 3);
        assert_eq!(cfg.loss.normal, 0.0);
        assert_eq!(cfg.loss.rgb, LossWeights::default().rgb);
    }

    #[test]
    fn bad_overrides_are_reported() {
        assert!(load_with_overrides::<TrainConfig>(None, &["trainer.total_iters".into()]).is_err());
        assert!(load_with_overrides::<TrainConfig>(None, &["trainer.total_iters=abc".into()]).is_err());
        assert!(load_with_overrides::<TrainConfig>(None, &["trainer.total_iters.x=1".into()]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.trainer.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
