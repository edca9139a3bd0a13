//! `headsplat` command-line interface.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical abort.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use headsplat::data::{self, Dataset, SynthConfig};
use headsplat::gradsuite::run_gradient_suite;
use headsplat::imagebuf::Image;
use headsplat::io::{self, Checkpoint};
use headsplat::posemap::render_pose_map;
use headsplat::remesh::{remesh_uv, UvRemesh};
use headsplat::render::{Background, Camera};
use headsplat::train::trainer::{evaluate, rotation_error, Trainer};
use headsplat::train::{load_with_overrides, TrainConfig};
use headsplat::{HeadModel, TrainError, Vec3};

#[derive(Parser, Debug)]
#[command(name = "headsplat", version, about = "Triangle-bound Gaussian head avatars")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration flags shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `trainer.total_iters=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an oracle bundle with ground truth.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct an avatar from a bundle.
    Reconstruct {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint instead of initializing.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render frames of a checkpoint along a camera path.
    Render {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON list of camera records.
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics of a checkpoint against a bundle.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit the remesh validity rule on a model.
    RemeshCheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// GDHM model file; the toy model when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render pose maps of a bundle's tracks.
    Posemap {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Numeric(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Numeric(e) => e,
        }
    }
}

fn data<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Data(e.into())
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::NonFinite { .. } => Failure::Numeric(e.into()),
        other => Failure::Data(other.into()),
    }
}

type Outcome = Result<(), Failure>;

fn load_config<T: DeserializeOwned + Serialize + Default>(args: &ConfigArgs) -> Result<T, Failure> {
    let base = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(Failure::Usage)?;
            Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display())).map_err(Failure::Usage)?)
        }
        None => None,
    };
    load_with_overrides::<T>(base, &args.set).map_err(|e| Failure::Usage(anyhow::anyhow!(e)))
}

fn write_json<S: Serialize>(value: &S, out: Option<&Path>) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(data)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())).map_err(data),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

/// Model and remesh of a loaded bundle.
fn scene_geometry(ds: &Dataset) -> Result<(HeadModel<f64>, UvRemesh<f64>), Failure> {
    let remesh = remesh_uv(&ds.model, ds.scene.remesh_resolution, ds.scene.max_hops).map_err(data)?;
    Ok((ds.model.clone(), remesh))
}

fn synth(cfg: &ConfigArgs, out: &Path) -> Outcome {
    let c: SynthConfig = load_config(cfg)?;
    let (ds, gt) = data::generate_oracle_scene(&c).map_err(data)?;
    data::save_bundle(out, &ds, Some(&gt)).map_err(data)?;
    log::info!("wrote {} views × {} frames to {}", ds.num_views(), ds.num_frames(), out.display());
    Ok(())
}

fn reconstruct(cfg: &ConfigArgs, data_dir: &Path, out: &Path, resume: Option<&Path>) -> Outcome {
    let c: TrainConfig = load_config(cfg)?;
    let ds = data::load_bundle(data_dir).map_err(data)?;
    std::fs::create_dir_all(out).map_err(data)?;
    write_json(&c, Some(&out.join("config.json")))?;
    let mut trainer = match resume {
        Some(p) => {
            let ck = Checkpoint::<f64>::load(p).map_err(data)?;
            if ck.config_hash != c.hash() {
                log::warn!("checkpoint was written under a different configuration");
            }
            Trainer::resume(&ds, c, ck).map_err(train_failure)?
        }
        None => Trainer::<f64>::new(&ds, c).map_err(train_failure)?,
    };
    trainer.out_dir = Some(out.to_path_buf());
    trainer.run().map_err(train_failure)?;
    let avatar = &trainer.state.avatar;
    let posed = avatar
        .pose(&trainer.model, &trainer.remesh, 0, &ds.tracks.latent::<f64>(0))
        .map_err(train_failure)?;
    io::export_ply(&posed.cloud, &posed.vertices, &trainer.remesh.faces, &out.join("frame_000.ply")).map_err(data)?;
    Ok(())
}

/// Options of `render`; configurable through `--config`/`--set`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct RenderOptions {
    /// Frame whose pose drives the avatar.
    frame: usize,
    /// Write normals alongside colors.
    normals: bool,
}

fn render_path(cfg: &ConfigArgs, data_dir: &Path, checkpoint: &Path, cameras: &Path, out: &Path) -> Outcome {
    let opts: RenderOptions = load_config(cfg)?;
    let ds = data::load_bundle(data_dir).map_err(data)?;
    let ck = Checkpoint::<f64>::load(checkpoint).map_err(data)?;
    let text = std::fs::read_to_string(cameras).with_context(|| format!("reading {}", cameras.display())).map_err(data)?;
    let path: Vec<Camera> = serde_json::from_str(&text).context("parsing the camera path").map_err(data)?;
    if let Some(i) = path.iter().position(|c| !c.is_valid()) {
        return Err(Failure::Data(anyhow::anyhow!("camera {i} is invalid")));
    }
    if opts.frame >= ds.num_frames() {
        return Err(Failure::Usage(anyhow::anyhow!("frame {} out of range ({} frames)", opts.frame, ds.num_frames())));
    }
    let (model, remesh) = scene_geometry(&ds)?;
    let bg = Background::new(Vec3::from_f64(ds.scene.background));
    let latent = ds.tracks.latent::<f64>(opts.frame);
    std::fs::create_dir_all(out).map_err(data)?;
    for (i, cam) in path.iter().enumerate() {
        let (img, _, _) = ck.avatar.render_frame(&model, &remesh, opts.frame, &latent, cam, &bg).map_err(train_failure)?;
        io::png::write_rgb8(&out.join(format!("rgb_{i:04}.png")), &Image::from_data(img.width, img.height, 3, img.rgb.clone())).map_err(data)?;
        if opts.normals {
            io::png::write_normal16(&out.join(format!("normal_{i:04}.png")), &Image::from_data(img.width, img.height, 3, img.normal))
                .map_err(data)?;
        }
    }
    Ok(())
}

/// Options of `eval`; empty selections mean every view or frame.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct EvalOptions {
    views: Vec<usize>,
    frames: Vec<usize>,
}

#[derive(Serialize)]
struct EvalOutput {
    #[serde(flatten)]
    report: headsplat::train::trainer::EvalReport,
    /// Mean rotation error (radians) against the ground-truth tracks, when
    /// the bundle carries them.
    rotation_error: Option<f64>,
}

fn eval(cfg: &ConfigArgs, data_dir: &Path, checkpoint: &Path, out: Option<&Path>) -> Outcome {
    let opts: EvalOptions = load_config(cfg)?;
    let ds = data::load_bundle(data_dir).map_err(data)?;
    let ck = Checkpoint::<f64>::load(checkpoint).map_err(data)?;
    let (model, remesh) = scene_geometry(&ds)?;
    let pick = |sel: &[usize], n: usize| if sel.is_empty() { (0..n).collect::<Vec<_>>() } else { sel.to_vec() };
    let views = pick(&opts.views, ds.num_views());
    let frames = pick(&opts.frames, ds.num_frames());
    if views.iter().any(|v| *v >= ds.num_views()) || frames.iter().any(|f| *f >= ds.num_frames()) {
        return Err(Failure::Usage(anyhow::anyhow!("view or frame selection out of range")));
    }
    let report = evaluate(&ds, &model, &remesh, &ck.avatar, &views, &frames).map_err(train_failure)?;
    let rotation_error = data::load_ground_truth(data_dir).ok().map(|gt| rotation_error(&ck.avatar.params, &gt.tracks));
    write_json(&EvalOutput { report, rotation_error }, out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
struct RemeshOptions {
    resolutions: Vec<usize>,
    max_hops: usize,
    /// Toy model settings used without `--model`.
    toy: headsplat::head::ToyModelOptions,
}

impl Default for RemeshOptions {
    fn default() -> Self {
        Self { resolutions: vec![16, 32, 64], max_hops: 5, toy: Default::default() }
    }
}

#[derive(Serialize)]
struct RemeshReport {
    stats: headsplat::remesh::RemeshStats,
    /// Retained faces whose source faces are farther apart than the bound.
    violations: usize,
}

fn remesh_check(cfg: &ConfigArgs, model: Option<&Path>, out: Option<&Path>) -> Outcome {
    let opts: RemeshOptions = load_config(cfg)?;
    let m: HeadModel<f64> = match model {
        Some(p) => io::load_model(p).map_err(data)?,
        None => headsplat::head::make_toy_model(&opts.toy),
    };
    let graph = headsplat::remesh::cached_face_adjacency(&m.faces).map_err(data)?;
    let mut reports = Vec::new();
    for &res in &opts.resolutions {
        let r = remesh_uv(&m, res, opts.max_hops).map_err(data)?;
        let violations = r
            .candidates
            .iter()
            .filter(|c| c.validity.retained())
            .filter(|c| {
                let s = c.source_faces;
                [(0, 1), (1, 2), (0, 2)]
                    .iter()
                    .any(|&(a, b)| graph.hop_distance(s[a] as usize, s[b] as usize, opts.max_hops).is_none())
            })
            .count();
        reports.push(RemeshReport { stats: r.stats.clone(), violations });
    }
    write_json(&reports, out)?;
    if reports.iter().any(|r| r.violations > 0) {
        return Err(Failure::Numeric(anyhow::anyhow!("remesh audit found violations")));
    }
    Ok(())
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct PosemapOptions {
    /// Frames to render; every frame when empty.
    frames: Vec<usize>,
    /// Views to render; every view when empty.
    views: Vec<usize>,
}

fn posemap(cfg: &ConfigArgs, data_dir: &Path, out: &Path) -> Outcome {
    let opts: PosemapOptions = load_config(cfg)?;
    let ds = data::load_bundle(data_dir).map_err(data)?;
    let params = ds.tracks.to_params::<f64>();
    let pick = |sel: &[usize], n: usize| if sel.is_empty() { (0..n).collect::<Vec<_>>() } else { sel.to_vec() };
    std::fs::create_dir_all(out).map_err(data)?;
    for v in pick(&opts.views, ds.num_views()) {
        let cam = ds.cameras.get(v).ok_or_else(|| Failure::Usage(anyhow::anyhow!("view {v} out of range")))?;
        for f in pick(&opts.frames, ds.num_frames()) {
            let map = render_pose_map(&ds.model, &params, f, cam).map_err(data)?;
            io::png::write_normal16(&out.join(data::sample_file("posemap", v, f).replace("posemap/", "")), &map).map_err(data)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
struct GradcheckOptions {
    seeds: Vec<u64>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { seeds: (0..20).collect() }
    }
}

fn gradcheck(cfg: &ConfigArgs, out: Option<&Path>) -> Outcome {
    let opts: GradcheckOptions = load_config(cfg)?;
    let entries: Vec<_> = opts.seeds.iter().flat_map(|s| run_gradient_suite(*s)).collect();
    write_json(&entries, out)?;
    let failed = entries.iter().filter(|e| !e.passed()).count();
    if failed > 0 {
        return Err(Failure::Numeric(anyhow::anyhow!("{failed} of {} gradient checks failed", entries.len())));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome {
    match &cli.command {
        Command::Synth { cfg, out } => synth(cfg, out),
        Command::Reconstruct { cfg, data, out, resume } => reconstruct(cfg, data, out, resume.as_deref()),
        Command::Render { cfg, data, checkpoint, cameras, out } => render_path(cfg, data, checkpoint, cameras, out),
        Command::Eval { cfg, data, checkpoint, out } => eval(cfg, data, checkpoint, out.as_deref()),
        Command::RemeshCheck { cfg, model, out } => remesh_check(cfg, model.as_deref(), out.as_deref()),
        Command::Posemap { cfg, data, out } => posemap(cfg, data, out),
        Command::Gradcheck { cfg, out } => gradcheck(cfg, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let benign = matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion);
            let _ = e.print();
            return ExitCode::from(if benign { 0 } else { 1 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_options_default_to_first_frame() {
        assert_eq!(RenderOptions::default().frame, 0);
    }

    #[test]
    fn camera_rig_parses_from_set() {
        let c: SynthConfig = load_config(&ConfigArgs { config: None, set: vec!["rig.kind=\"ring\"".into()] }).unwrap();
        assert!(matches!(c.rig, headsplat::data::CameraRig::Ring));
    }

    #[test]
    fn bad_override_is_usage() {
        let r: Result<SynthConfig, _> = load_config(&ConfigArgs { config: None, set: vec!["nonsense".into()] });
        assert_eq!(r.unwrap_err().code(), 1);
    }
}
