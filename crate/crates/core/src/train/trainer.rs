//! The reconstruction loop.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::avatar::Avatar;
use crate::cloud::{init_cloud, CloudGrad};
use crate::data::{Dataset, Tracks};
use crate::error::TrainError;
use crate::fields::{apply_residuals_backward, DeformationField, DynamicsField, MlpGrad};
use crate::head::HeadModel;
use crate::imagebuf::Image;
use crate::io::Checkpoint;
use crate::linalg::{axis_angle_to_mat, rotation_angle_between, Vec3};
use crate::metrics::{masked_normal_error, psnr, ssim};
use crate::real::{lit, sigmoid, Real};
use crate::remesh::{remesh_uv, UvRemesh};
use crate::render::{render, render_backward, Background, RenderOutput};

use super::adam::AdamState;
use super::config::TrainConfig;
use super::losses::{dynamics_regularizer, normal_loss, photometric_loss, position_regularizer, scale_regularizer};
use super::schedule::{schedule_rate, ScheduleSpec};

pub const GROUP_POSITION: &str = "cloud.position";
pub const GROUP_ROTATION: &str = "cloud.rotation";
pub const GROUP_SCALE: &str = "cloud.scale";
pub const GROUP_OPACITY: &str = "cloud.opacity";
pub const GROUP_COLOR: &str = "cloud.color";
pub const GROUP_DEFORMATION: &str = "deformation";
pub const GROUP_DYNAMICS: &str = "dynamics";
pub const GROUP_CODES: &str = "dynamics.codes";
pub const GROUP_SHAPE: &str = "residual.shape";
pub const GROUP_EXPRESSION: &str = "residual.expression";
pub const GROUP_POSE: &str = "residual.pose";

/// Loss components of one iteration; `total` is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub ssim: f64,
    pub photometric: f64,
    pub normal: f64,
    pub position: f64,
    pub scale: f64,
    pub dynamics: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn component_sum(&self) -> f64 {
        self.photometric + self.normal + self.position + self.scale + self.dynamics
    }
}

/// One JSON training-log line.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub total_iters: usize,
    pub view: usize,
    pub frame: usize,
    pub gaussians: usize,
    pub loss: LossBreakdown,
    pub rates: Vec<(String, f64)>,
}

/// Mutable training state: what a checkpoint stores.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub iteration: usize,
    pub avatar: Avatar<T>,
    pub optimizer: Vec<(String, AdamState<T>)>,
}

fn flat3<T: Real>(v: &[Vec3<T>]) -> Vec<T> {
    v.iter().flat_map(|p| p.to_array()).collect()
}

fn write3<T: Real>(dst: &mut [Vec3<T>], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src.chunks(3)) {
        *d = Vec3::new(s[0], s[1], s[2]);
    }
}

fn mlp_params<T: Real>(mlp: &crate::fields::Mlp<T>) -> Vec<T> {
    mlp.flatten()
}

fn all_finite<T: Real>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Learning rates of every group at `iteration`.
pub fn group_rates(config: &TrainConfig, iteration: usize) -> Result<Vec<(String, f64)>, TrainError> {
    let r = &config.rates;
    let total = config.trainer.total_iters;
    let specs: [(&str, &ScheduleSpec); 11] = [
        (GROUP_POSITION, &r.position),
        (GROUP_ROTATION, &r.rotation),
        (GROUP_SCALE, &r.scale),
        (GROUP_OPACITY, &r.opacity),
        (GROUP_COLOR, &r.color),
        (GROUP_DEFORMATION, &r.deformation),
        (GROUP_DYNAMICS, &r.dynamics),
        (GROUP_CODES, &r.codes),
        (GROUP_SHAPE, &r.shape),
        (GROUP_EXPRESSION, &r.expression),
        (GROUP_POSE, &r.pose),
    ];
    specs.iter().map(|(n, s)| Ok((n.to_string(), schedule_rate(s, iteration.min(total), total)?))).collect()
}

fn rate(rates: &[(String, f64)], name: &str) -> f64 {
    rates.iter().find(|(n, _)| n == name).map_or(0.0, |(_, r)| *r)
}

/// Everything needed to run the loop on one dataset.
pub struct Trainer<'a, T> {
    pub dataset: &'a Dataset,
    pub config: TrainConfig,
    pub model: HeadModel<T>,
    pub remesh: UvRemesh<T>,
    pub state: TrainState<T>,
    pub history: Vec<LogRecord>,
    pub out_dir: Option<PathBuf>,
    background: Background<T>,
    latents: Vec<Vec<T>>,
    train_views: Vec<usize>,
}

impl<'a, T: Real> Trainer<'a, T> {
    /// Fresh state: one cloud per remeshed triangle, zero residuals, fields
    /// at their zero-output initialization.
    pub fn new(dataset: &'a Dataset, config: TrainConfig) -> Result<Self, TrainError> {
        dataset.validate()?;
        let model: HeadModel<T> = dataset.model.cast();
        let remesh = remesh_uv(&model, dataset.scene.remesh_resolution, dataset.scene.max_hops)?;
        let tc = &config.trainer;
        let (cloud, skipped) = init_cloud(&remesh.vertices, &remesh.faces, tc.gaussians_per_triangle, tc.seed);
        if !skipped.is_empty() {
            log::warn!("{} degenerate remeshed triangles carry no Gaussians", skipped.len());
        }
        let d = dataset.tracks.latent_dim();
        let params = dataset.tracks.to_params::<T>();
        params.check_lengths(&model)?;
        let n = cloud.len();
        let avatar = Avatar {
            deformation: tc.deformation_field.then(|| DeformationField::new(d, &config.deformation, tc.seed.wrapping_add(1))),
            dynamics: tc.dynamics_field.then(|| DynamicsField::new(n, d, &config.dynamics, tc.seed.wrapping_add(2))),
            cloud,
            params,
        };
        let optimizer = fresh_optimizer(&avatar, &model);
        let state = TrainState { iteration: 0, avatar, optimizer };
        Self::with_state(dataset, config, model, remesh, state)
    }

    /// Continue from a checkpoint.
    pub fn resume(dataset: &'a Dataset, config: TrainConfig, checkpoint: Checkpoint<T>) -> Result<Self, TrainError> {
        if checkpoint.config_hash != config.hash() {
            log::warn!("resuming with a configuration that differs from the checkpoint's");
        }
        let model: HeadModel<T> = dataset.model.cast();
        let remesh = remesh_uv(&model, dataset.scene.remesh_resolution, dataset.scene.max_hops)?;
        checkpoint.avatar.cloud.check_faces(remesh.num_faces())?;
        let mut state = TrainState { iteration: checkpoint.iteration, avatar: checkpoint.avatar, optimizer: checkpoint.optimizer };
        for (name, fresh) in fresh_optimizer(&state.avatar, &model) {
            if !state.optimizer.iter().any(|(n, _)| *n == name) {
                state.optimizer.push((name, fresh));
            }
        }
        Self::with_state(dataset, config, model, remesh, state)
    }

    fn with_state(
        dataset: &'a Dataset,
        config: TrainConfig,
        model: HeadModel<T>,
        remesh: UvRemesh<T>,
        state: TrainState<T>,
    ) -> Result<Self, TrainError> {
        let nv = dataset.num_views();
        let train_views: Vec<usize> = (0..nv).filter(|v| !config.trainer.holdout_views.contains(v)).collect();
        if train_views.is_empty() {
            return Err(crate::error::DatasetError::Inconsistent("every view is held out".into()).into());
        }
        let unit = config.trainer.translation_unit;
        if !(unit.is_finite() && unit > 0.0) {
            return Err(crate::error::ScheduleError::Invalid(format!("translation_unit {unit} must be positive")).into());
        }
        if let Some((v, f)) = config.trainer.fixed_sample {
            if v >= nv || f >= dataset.num_frames() {
                return Err(crate::error::DatasetError::Inconsistent(format!("fixed sample ({v}, {f}) is out of range")).into());
            }
        }
        let latents = (0..dataset.num_frames()).map(|f| dataset.tracks.latent(f)).collect();
        let background = Background::new(Vec3::from_f64(dataset.scene.background));
        Ok(Self { dataset, config, model, remesh, state, history: Vec::new(), out_dir: None, background, latents, train_views })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            iteration: self.state.iteration,
            config_hash: self.config.hash(),
            avatar: self.state.avatar.clone(),
            optimizer: self.state.optimizer.clone(),
        }
    }

    /// The `(view, frame)` trained on at `iteration`.
    pub fn sample_at(&self, iteration: usize) -> (usize, usize) {
        if let Some(s) = self.config.trainer.fixed_sample {
            return s;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.trainer.seed);
        rng.set_stream(iteration as u64);
        let view = self.train_views[rng.random_range(0..self.train_views.len())];
        let frame = rng.random_range(0..self.dataset.num_frames());
        (view, frame)
    }

    fn targets(&self, view: usize, frame: usize) -> (Image<T>, Image<T>, Image<T>) {
        let s = self.dataset.sample(view, frame);
        (s.rgb.cast(), s.normal.cast(), s.mask.cast())
    }

    /// Losses and gradients at the current state without updating it.
    pub fn loss_at(&self, view: usize, frame: usize) -> Result<LossBreakdown, TrainError> {
        Ok(self.forward_backward(view, frame)?.0)
    }

    fn forward_backward(&self, view: usize, frame: usize) -> Result<(LossBreakdown, Gradients<T>), TrainError> {
        let avatar = &self.state.avatar;
        let w = &self.config.loss;
        let camera = &self.dataset.cameras[view];
        let posed = avatar.pose(&self.model, &self.remesh, frame, &self.latents[frame])?;
        let (out, rec) = render(&posed.cloud, &posed.vertices, &self.remesh.faces, camera, &self.background)?;
        let (rgb_t, normal_t, mask_t) = self.targets(view, frame);
        let rendered_rgb = Image::from_data(out.width, out.height, 3, out.rgb.clone());
        let rendered_n = Image::from_data(out.width, out.height, 3, out.normal.clone());
        let (photo, g_rgb) = photometric_loss(&rendered_rgb, &rgb_t, lit(w.rgb), lit(w.ssim))?;
        let (nl, g_n) = normal_loss(&rendered_n, &normal_t, &mask_t, lit(w.normal))?;
        let mut upstream = RenderOutput::zeros(out.width, out.height);
        upstream.rgb = g_rgb.data;
        upstream.normal = g_n.data;
        let (mut cg, vg) = render_backward(&posed.cloud, &posed.vertices, &self.remesh.faces, &rec, &upstream)?;
        let pos = position_regularizer(&posed.cloud, lit(w.position_threshold), lit(w.position), &mut cg);
        let scale = scale_regularizer(&posed.cloud, lit(w.scale_threshold), lit(w.scale), &mut cg);

        let empty_res = Vec::new();
        let empty_off = Vec::new();
        let residuals = posed.residuals.as_ref().map_or(&empty_res, |(r, _)| r);
        let offsets = posed.offsets.as_ref().map_or(&empty_off, |(o, _)| o);
        let (base_grad, mut res_grad) = match &posed.residuals {
            Some((res, _)) => apply_residuals_backward(&avatar.cloud, res, &cg),
            None => (cg, Vec::new()),
        };
        let mut off_grad = vg.clone();
        let dynamics_loss = dynamics_regularizer(residuals, offsets, lit(w.dynamics), &mut res_grad, &mut off_grad);

        let dynamics = match (&avatar.dynamics, &posed.residuals) {
            (Some(field), Some((_, cache))) => {
                let g = field.residuals_backward(cache, &res_grad);
                Some((g.mlp, g.codes))
            }
            _ => None,
        };
        let deformation = match (&avatar.deformation, &posed.offsets) {
            (Some(field), Some((_, cache))) => {
                let g = field.deform_backward(cache, &off_grad);
                Some((g.mlp, g.gain))
            }
            _ => None,
        };
        let template = self.remesh.interpolate_backward(&vg, &self.model.faces, self.model.num_vertices());
        let pose = crate::head::pose_vertices_backward(&self.model, &posed.pose, &posed.pose_cache, &template);

        let f = |x: T| x.to_f64_lossy();
        let mut loss = LossBreakdown {
            l1: f(photo.l1),
            ssim: f(photo.ssim),
            photometric: f(photo.total),
            normal: f(nl),
            position: f(pos),
            scale: f(scale),
            dynamics: f(dynamics_loss),
            total: 0.0,
        };
        loss.total = loss.component_sum();
        Ok((loss, Gradients { cloud: base_grad, dynamics, deformation, pose }))
    }

    /// One optimization step.
    pub fn step(&mut self) -> Result<LogRecord, TrainError> {
        let it = self.state.iteration;
        let (view, frame) = self.sample_at(it);
        let rates = group_rates(&self.config, it)?;
        let (loss, grads) = self.forward_backward(view, frame)?;
        if let Some(detail) = non_finite(&loss, &grads) {
            self.dump_diagnostics(it, view, frame, &loss, &detail);
            return Err(TrainError::NonFinite { iteration: it, detail });
        }
        self.apply(&grads, &rates, frame);
        let tc = &self.config.trainer;
        if tc.prune_interval > 0 && (it + 1) % tc.prune_interval == 0 {
            self.prune();
        }
        self.state.iteration += 1;
        let record = LogRecord {
            iteration: it,
            total_iters: self.config.trainer.total_iters,
            view,
            frame,
            gaussians: self.state.avatar.cloud.len(),
            loss,
            rates,
        };
        Ok(record)
    }

    fn apply(&mut self, g: &Gradients<T>, rates: &[(String, f64)], frame: usize) {
        let learn_residuals = self.config.trainer.learn_residuals;
        let st = &mut self.state;
        let cloud = &mut st.avatar.cloud;
        {
            let mut p = flat3(&cloud.local_position);
            let adam = &mut st.optimizer.iter_mut().find(|(n, _)| n == GROUP_POSITION).expect("group").1;
            adam.step(&mut p, &flat3(&g.cloud.local_position), rate(rates, GROUP_POSITION));
            write3(&mut cloud.local_position, &p);
        }
        {
            let mut p: Vec<T> = cloud.local_rotation.iter().flatten().copied().collect();
            let gq: Vec<T> = g.cloud.local_rotation.iter().flatten().copied().collect();
            let adam = &mut st.optimizer.iter_mut().find(|(n, _)| n == GROUP_ROTATION).expect("group").1;
            adam.step(&mut p, &gq, rate(rates, GROUP_ROTATION));
            for (q, s) in cloud.local_rotation.iter_mut().zip(p.chunks(4)) {
                *q = [s[0], s[1], s[2], s[3]];
            }
        }
        {
            let mut p = flat3(&cloud.local_log_scale);
            let adam = &mut st.optimizer.iter_mut().find(|(n, _)| n == GROUP_SCALE).expect("group").1;
            adam.step(&mut p, &flat3(&g.cloud.local_log_scale), rate(rates, GROUP_SCALE));
            write3(&mut cloud.local_log_scale, &p);
        }
        {
            let adam = &mut st.optimizer.iter_mut().find(|(n, _)| n == GROUP_OPACITY).expect("group").1;
            adam.step(&mut cloud.opacity_logit, &g.cloud.opacity_logit, rate(rates, GROUP_OPACITY));
        }
        {
            let mut p = flat3(&cloud.color_logit);
            let adam = &mut st.optimizer.iter_mut().find(|(n, _)| n == GROUP_COLOR).expect("group").1;
            adam.step(&mut p, &flat3(&g.cloud.color_logit), rate(rates, GROUP_COLOR));
            write3(&mut cloud.color_logit, &p);
        }
        if let (Some(field), Some((mg, gain))) = (&mut st.avatar.deformation, &g.deformation) {
            let mut p = mlp_params(&field.mlp);
            p.push(field.gain);
            let mut gr = mg.flatten();
            gr.push(*gain);
            let adam = &mut st.optimizer.iter_mut().find(|(n, _)| n == GROUP_DEFORMATION).expect("group").1;
            adam.step(&mut p, &gr, rate(rates, GROUP_DEFORMATION));
            field.gain = p.pop().expect("gain entry");
            field.mlp.unflatten(&p);
        }
        if let (Some(field), Some((mg, codes))) = (&mut st.avatar.dynamics, &g.dynamics) {
            let mut p = mlp_params(&field.mlp);
            let adam = &mut st.optimizer.iter_mut().find(|(n, _)| n == GROUP_DYNAMICS).expect("group").1;
            adam.step(&mut p, &mg.flatten(), rate(rates, GROUP_DYNAMICS));
            field.mlp.unflatten(&p);
            let adam = &mut st.optimizer.iter_mut().find(|(n, _)| n == GROUP_CODES).expect("group").1;
            adam.step(&mut field.codes, codes, rate(rates, GROUP_CODES));
        }
        if learn_residuals {
            let params = &mut st.avatar.params;
            let adam = &mut st.optimizer.iter_mut().find(|(n, _)| n == GROUP_SHAPE).expect("group").1;
            adam.step(&mut params.shape_residual, &g.pose.shape, rate(rates, GROUP_SHAPE));

            let res = &mut params.frame_residuals[frame];
            let ne = res.expression.len();
            let mut expr = vec![T::zero(); ne * params.frames.len()];
            let mut gexpr = vec![T::zero(); expr.len()];
            expr[frame * ne..(frame + 1) * ne].copy_from_slice(&res.expression);
            gexpr[frame * ne..(frame + 1) * ne].copy_from_slice(&g.pose.expression);
            let adam = &mut st.optimizer.iter_mut().find(|(n, _)| n == GROUP_EXPRESSION).expect("group").1;
            adam.step_row(&mut expr, &gexpr, rate(rates, GROUP_EXPRESSION), frame);
            res.expression.copy_from_slice(&expr[frame * ne..(frame + 1) * ne]);

            let unit: T = lit(self.config.trainer.translation_unit);
            let row = pose_row(res.rotation, res.translation.map(|x| x / unit), &res.joints);
            let grow = pose_row(g.pose.rotation, g.pose.translation * unit, &g.pose.joints);
            let rl = row.len();
            let mut p = vec![T::zero(); rl * params.frames.len()];
            let mut gp = vec![T::zero(); p.len()];
            p[frame * rl..(frame + 1) * rl].copy_from_slice(&row);
            gp[frame * rl..(frame + 1) * rl].copy_from_slice(&grow);
            let adam = &mut st.optimizer.iter_mut().find(|(n, _)| n == GROUP_POSE).expect("group").1;
            adam.step_row(&mut p, &gp, rate(rates, GROUP_POSE), frame);
            let r = &p[frame * rl..(frame + 1) * rl];
            res.rotation = Vec3::new(r[0], r[1], r[2]);
            res.translation = Vec3::new(r[3], r[4], r[5]) * unit;
            write3(&mut res.joints, &r[6..]);
        }
    }

    /// Drop Gaussians whose activated opacity is below the threshold, along
    /// with their optimizer rows and dynamics codes.
    pub fn prune(&mut self) -> usize {
        let thr = self.config.trainer.prune_threshold;
        let keep: Vec<bool> =
            self.state.avatar.cloud.opacity_logit.iter().map(|o| sigmoid(*o).to_f64_lossy() >= thr).collect();
        let removed = keep.iter().filter(|k| !**k).count();
        if removed == 0 {
            return 0;
        }
        self.state.avatar.cloud.retain_mask(&keep);
        if let Some(d) = &mut self.state.avatar.dynamics {
            d.retain_mask(&keep);
        }
        for name in [GROUP_POSITION, GROUP_ROTATION, GROUP_SCALE, GROUP_OPACITY, GROUP_COLOR, GROUP_CODES] {
            if let Some((_, a)) = self.state.optimizer.iter_mut().find(|(n, _)| n == name) {
                a.retain_rows(&keep);
            }
        }
        removed
    }

    fn dump_diagnostics(&self, iteration: usize, view: usize, frame: usize, loss: &LossBreakdown, detail: &str) {
        let Some(dir) = &self.out_dir else { return };
        let dump = serde_json::json!({
            "iteration": iteration,
            "view": view,
            "frame": frame,
            "loss": loss,
            "detail": detail,
            "config": self.config,
        });
        let path = dir.join(format!("nonfinite_{iteration:06}.json"));
        if let Err(e) = std::fs::write(&path, serde_json::to_vec_pretty(&dump).unwrap_or_default()) {
            log::error!("could not write {}: {e}", path.display());
        }
        if let Err(e) = self.checkpoint().save(&dir.join(format!("nonfinite_{iteration:06}.gdhm"))) {
            log::error!("could not write the diagnostic checkpoint: {e}");
        }
    }

    /// Run until `total_iters`. With an output directory, log lines go to
    /// `train_log.jsonl` and checkpoints to `checkpoint_IIIIII.gdhm` plus
    /// `checkpoint_final.gdhm`.
    pub fn run(&mut self) -> Result<(), TrainError> {
        let total = self.config.trainer.total_iters;
        let mut log_file = match &self.out_dir {
            Some(d) => {
                std::fs::create_dir_all(d)?;
                Some(std::fs::OpenOptions::new().create(true).append(true).open(d.join("train_log.jsonl"))?)
            }
            None => None,
        };
        while self.state.iteration < total {
            let record = self.step()?;
            let tc = &self.config.trainer;
            let done = self.state.iteration;
            if tc.log_interval > 0 && (record.iteration % tc.log_interval == 0 || done == total) {
                let line = serde_json::to_string(&record).expect("log record serializes");
                log::info!("{line}");
                if let Some(f) = &mut log_file {
                    writeln!(f, "{line}")?;
                }
            }
            if let Some(d) = &self.out_dir {
                if tc.checkpoint_interval > 0 && done % tc.checkpoint_interval == 0 {
                    self.checkpoint().save(&d.join(format!("checkpoint_{done:06}.gdhm")))?;
                }
            }
            self.history.push(record);
        }
        if let Some(d) = &self.out_dir {
            self.checkpoint().save(&d.join("checkpoint_final.gdhm"))?;
        }
        Ok(())
    }
}

fn pose_row<T: Real>(rotation: Vec3<T>, translation: Vec3<T>, joints: &[Vec3<T>]) -> Vec<T> {
    let mut r = Vec::with_capacity(6 + 3 * joints.len());
    r.extend(rotation.to_array());
    r.extend(translation.to_array());
    r.extend(flat3(joints));
    r
}

fn fresh_optimizer<T: Real>(avatar: &Avatar<T>, model: &HeadModel<T>) -> Vec<(String, AdamState<T>)> {
    let n = avatar.cloud.len();
    let nf = avatar.params.num_frames();
    let mut o = vec![
        (GROUP_POSITION.to_string(), AdamState::new(3 * n, 3)),
        (GROUP_ROTATION.to_string(), AdamState::new(4 * n, 4)),
        (GROUP_SCALE.to_string(), AdamState::new(3 * n, 3)),
        (GROUP_OPACITY.to_string(), AdamState::new(n, 1)),
        (GROUP_COLOR.to_string(), AdamState::new(3 * n, 3)),
        (GROUP_SHAPE.to_string(), AdamState::new(model.num_shape, model.num_shape)),
        (GROUP_EXPRESSION.to_string(), AdamState::new(model.num_expr * nf, model.num_expr)),
        (GROUP_POSE.to_string(), AdamState::new((6 + 3 * model.num_joints()) * nf, 6 + 3 * model.num_joints())),
    ];
    if let Some(f) = &avatar.deformation {
        let len = f.mlp.num_params() + 1;
        o.push((GROUP_DEFORMATION.to_string(), AdamState::new(len, len)));
    }
    if let Some(f) = &avatar.dynamics {
        let len = f.mlp.num_params();
        o.push((GROUP_DYNAMICS.to_string(), AdamState::new(len, len)));
        o.push((GROUP_CODES.to_string(), AdamState::new(f.codes.len(), f.code_dim)));
    }
    o
}

struct Gradients<T> {
    cloud: CloudGrad<T>,
    dynamics: Option<(MlpGrad<T>, Vec<T>)>,
    deformation: Option<(MlpGrad<T>, T)>,
    pose: crate::head::PoseGrad<T>,
}

fn non_finite<T: Real>(loss: &LossBreakdown, g: &Gradients<T>) -> Option<String> {
    if !loss.total.is_finite() {
        return Some(format!("loss {loss:?}"));
    }
    let c = &g.cloud;
    let checks: [(&str, bool); 5] = [
        ("position gradient", c.local_position.iter().all(|v| v.is_finite())),
        ("rotation gradient", c.local_rotation.iter().all(|q| all_finite(q))),
        ("scale gradient", c.local_log_scale.iter().all(|v| v.is_finite())),
        ("opacity gradient", all_finite(&c.opacity_logit)),
        ("color gradient", c.color_logit.iter().all(|v| v.is_finite())),
    ];
    if let Some((name, _)) = checks.iter().find(|(_, ok)| !ok) {
        return Some(format!("non-finite {name}"));
    }
    let p = &g.pose;
    if !(all_finite(&p.shape) && all_finite(&p.expression) && p.rotation.is_finite() && p.translation.is_finite()) {
        return Some("non-finite parameter-residual gradient".into());
    }
    if g.deformation.as_ref().is_some_and(|(m, gain)| !gain.is_finite() || !all_finite(&m.flatten())) {
        return Some("non-finite deformation gradient".into());
    }
    if g.dynamics.as_ref().is_some_and(|(m, codes)| !all_finite(codes) || !all_finite(&m.flatten())) {
        return Some("non-finite dynamics gradient".into());
    }
    None
}

/// Train from scratch. Checkpoints and logs go to `out_dir` when given.
pub fn reconstruct<T: Real>(
    dataset: &Dataset,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(Avatar<T>, Vec<LogRecord>), TrainError> {
    let mut t = Trainer::<T>::new(dataset, config.clone())?;
    t.out_dir = out_dir.map(Path::to_path_buf);
    t.run()?;
    Ok((t.state.avatar, t.history))
}

/// Image metrics of one rendered sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleMetrics {
    pub view: usize,
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Degrees, over the target mask; absent for an empty mask.
    pub normal_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: Vec<SampleMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_normal_error: Option<f64>,
}

/// Render `avatar` at every `(view, frame)` pair and compare with the
/// dataset.
pub fn evaluate<T: Real>(
    dataset: &Dataset,
    model: &HeadModel<T>,
    remesh: &UvRemesh<T>,
    avatar: &Avatar<T>,
    views: &[usize],
    frames: &[usize],
) -> Result<EvalReport, TrainError> {
    let background = Background::new(Vec3::from_f64(dataset.scene.background));
    let mut samples = Vec::new();
    for &v in views {
        for &f in frames {
            let latent = dataset.tracks.latent::<T>(f);
            let (out, _, _) = avatar.render_frame(model, remesh, f, &latent, &dataset.cameras[v], &background)?;
            let s = dataset.sample(v, f);
            let rgb: Image<T> = s.rgb.cast();
            let rendered = Image::from_data(out.width, out.height, 3, out.rgb);
            let normal = Image::from_data(out.width, out.height, 3, out.normal);
            samples.push(SampleMetrics {
                view: v,
                frame: f,
                psnr: psnr(&rendered, &rgb)?,
                ssim: ssim(&rendered, &rgb)?.to_f64_lossy(),
                normal_error: masked_normal_error(&normal, &s.normal.cast::<T>(), &s.mask.cast::<T>())?,
            });
        }
    }
    let n = samples.len().max(1) as f64;
    let errs: Vec<f64> = samples.iter().filter_map(|s| s.normal_error).collect();
    Ok(EvalReport {
        mean_psnr: samples.iter().map(|s| s.psnr).sum::<f64>() / n,
        mean_ssim: samples.iter().map(|s| s.ssim).sum::<f64>() / n,
        mean_normal_error: (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64),
        samples,
    })
}

/// Mean geodesic angle (radians) between the effective global rotation of
/// each frame and the reference tracks.
pub fn rotation_error<T: Real>(params: &crate::head::AvatarParams<T>, reference: &Tracks) -> f64 {
    let n = params.num_frames().min(reference.frames.len());
    let mut sum = 0.0;
    for f in 0..n {
        let a = axis_angle_to_mat(params.effective_frame(f).rotation.cast::<f64>());
        let b = axis_angle_to_mat(Vec3::from_f64(reference.frames[f].rotation));
        sum += rotation_angle_between(&a, &b);
    }
    sum / n.max(1) as f64
}
