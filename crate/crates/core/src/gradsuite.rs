//! Finite-difference audit of every hand-written backward pass.
//!
//! Each check contracts the operation's output with a random probe, so the
//! scalar `⟨f(x), g⟩` has gradient equal to the backward pass fed with `g`.
//! Parameter blocks are checked separately (see [`grad_check`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cloud::{promote_backward, promote_to_world, triangle_frame, triangle_frame_backward, FrameGrad, GaussianCloud, WorldGrad};
use crate::fields::{apply_residuals, apply_residuals_backward, DeformationConfig, DeformationField, DynamicsConfig, DynamicsField, Residual};
use crate::head::{pose_vertices, pose_vertices_backward, pose_vertices_with_cache};
use crate::head::{make_toy_model, ToyModelOptions};
use crate::head::FramePose;
use crate::imagebuf::Image;
use crate::linalg::{axis_angle_to_mat, Mat3, Vec3};
use crate::metrics::grad_check;
use crate::render::{render, render_backward, Background, Camera, RenderOutput};
use crate::train::losses::{dynamics_regularizer, normal_loss, photometric_loss, position_regularizer, scale_regularizer};
use crate::cloud::CloudGrad;

/// Tolerance on the block-normalized error for the renderer.
pub const RENDER_TOLERANCE: f64 = 1e-3;
/// Tolerance for every other operation.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradEntry {
    pub op: &'static str,
    pub block: &'static str,
    pub seed: u64,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

fn flat3(v: &[Vec3<f64>]) -> Vec<f64> {
    v.iter().flat_map(|p| p.to_array()).collect()
}

fn unflat3(d: &[f64]) -> Vec<Vec3<f64>> {
    d.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

fn flat4(v: &[[f64; 4]]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

fn unflat4(d: &[f64]) -> Vec<[f64; 4]> {
    d.chunks(4).map(|c| [c[0], c[1], c[2], c[3]]).collect()
}

fn rvec(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vec3<f64> {
    Vec3::new(r.random_range(lo..hi), r.random_range(lo..hi), r.random_range(lo..hi))
}

fn rmat(r: &mut ChaCha8Rng) -> Mat3<f64> {
    Mat3::from_cols(rvec(r, -1.0, 1.0), rvec(r, -1.0, 1.0), rvec(r, -1.0, 1.0))
}

struct Suite {
    seed: u64,
    out: Vec<GradEntry>,
}

impl Suite {
    fn check(&mut self, op: &'static str, block: &'static str, tol: f64, f: impl FnMut(&[f64]) -> f64, x: &[f64], g: &[f64], h: f64) {
        let err = match grad_check(f, x, g, h) {
            Ok(r) => r.max_rel_error,
            Err(_) => f64::INFINITY,
        };
        self.out.push(GradEntry { op, block, seed: self.seed, max_rel_error: err, tolerance: tol });
    }
}

/// Run every check at one seed.
pub fn run_gradient_suite(seed: u64) -> Vec<GradEntry> {
    let mut s = Suite { seed, out: Vec::new() };
    pose_checks(&mut s);
    frame_checks(&mut s);
    promote_checks(&mut s);
    render_checks(&mut s);
    field_checks(&mut s);
    loss_checks(&mut s);
    s.out
}

fn pose_checks(s: &mut Suite) {
    let mut r = ChaCha8Rng::seed_from_u64(s.seed ^ 0x9053);
    let m = make_toy_model::<f64>(&ToyModelOptions { seed: s.seed, target_vertices: 80, num_shape: 4, num_expr: 4 });
    let shape: Vec<f64> = (0..m.num_shape).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut pose = FramePose::zeros(m.num_expr, m.num_joints());
    pose.expression = (0..m.num_expr).map(|_| r.random_range(-1.0..1.0)).collect();
    pose.joints = (0..m.num_joints()).map(|_| rvec(&mut r, -0.4, 0.4)).collect();
    pose.rotation = rvec(&mut r, -0.4, 0.4);
    pose.translation = rvec(&mut r, -0.02, 0.02);
    let probe: Vec<Vec3<f64>> = (0..m.num_vertices()).map(|_| rvec(&mut r, -1.0, 1.0)).collect();
    let (_, cache) = pose_vertices_with_cache(&m, &shape, &pose).expect("valid pose");
    let g = pose_vertices_backward(&m, &pose, &cache, &probe);
    let loss = |sh: &[f64], p: &FramePose<f64>| -> f64 {
        pose_vertices(&m, sh, p).expect("valid pose").iter().zip(&probe).map(|(a, b)| a.dot(*b)).sum()
    };
    let t = DEFAULT_TOLERANCE;
    s.check("pose_mesh", "shape", t, |d| loss(d, &pose), &shape, &g.shape, 1e-5);
    s.check("pose_mesh", "expression", t, |d| loss(&shape, &FramePose { expression: d.to_vec(), ..pose.clone() }), &pose.expression, &g.expression, 1e-5);
    s.check("pose_mesh", "joints", t, |d| loss(&shape, &FramePose { joints: unflat3(d), ..pose.clone() }), &flat3(&pose.joints), &flat3(&g.joints), 1e-5);
    s.check(
        "pose_mesh",
        "rotation",
        t,
        |d| loss(&shape, &FramePose { rotation: Vec3::new(d[0], d[1], d[2]), ..pose.clone() }),
        &pose.rotation.to_array(),
        &g.rotation.to_array(),
        1e-5,
    );
    s.check(
        "pose_mesh",
        "translation",
        t,
        |d| loss(&shape, &FramePose { translation: Vec3::new(d[0], d[1], d[2]), ..pose.clone() }),
        &pose.translation.to_array(),
        &g.translation.to_array(),
        1e-5,
    );
}

fn frame_checks(s: &mut Suite) {
    let mut r = ChaCha8Rng::seed_from_u64(s.seed ^ 0xf4a3);
    let v = [rvec(&mut r, -1.0, 1.0), rvec(&mut r, -1.0, 1.0), rvec(&mut r, -1.0, 1.0)];
    let g = FrameGrad { rotation: rmat(&mut r), origin: rvec(&mut r, -1.0, 1.0), scale: r.random_range(-1.0..1.0) };
    let loss = |d: &[f64]| {
        let p = unflat3(d);
        let f = triangle_frame(p[0], p[1], p[2]).expect("non-degenerate");
        f.rotation.frob_dot(&g.rotation) + f.origin.dot(g.origin) + f.scale * g.scale
    };
    let an = triangle_frame_backward(v[0], v[1], v[2], &g);
    s.check("triangle_frame", "vertices", DEFAULT_TOLERANCE, loss, &flat3(&v), &flat3(&an), 1e-6);
}

/// Jittered grid mesh in the z = 0 plane with one Gaussian per face.
fn grid_scene(seed: u64, grid: usize, extent: f64) -> (Vec<Vec3<f64>>, Vec<[u32; 3]>, GaussianCloud<f64>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut verts = Vec::new();
    let cell = 2.0 * extent / grid as f64;
    for i in 0..=grid {
        for j in 0..=grid {
            let x = -extent + cell * j as f64 + r.random_range(-0.1..0.1) * cell;
            let y = -extent + cell * i as f64 + r.random_range(-0.1..0.1) * cell;
            verts.push(Vec3::new(x, y, r.random_range(-0.2..0.2) * extent));
        }
    }
    let id = |i: usize, j: usize| (i * (grid + 1) + j) as u32;
    let mut faces = Vec::new();
    for i in 0..grid {
        for j in 0..grid {
            faces.push([id(i, j), id(i, j + 1), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i + 1, j)]);
        }
    }
    let mut cloud = GaussianCloud::default();
    for f in 0..faces.len() {
        let q = [1.0 + r.random_range(-0.3..0.3), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)];
        cloud.push(
            f as u32,
            Vec3::new(r.random_range(-0.3..0.3), r.random_range(-0.1..0.1), r.random_range(-0.3..0.3)),
            q,
            Vec3::new(r.random_range(-1.0..0.0), r.random_range(-2.5..-1.5), r.random_range(-1.0..0.0)),
            r.random_range(-1.5..0.5),
            rvec(&mut r, -2.0, 2.0),
        );
    }
    (verts, faces, cloud)
}

/// Check every cloud block and the vertices of `loss(cloud, vertices)`.
fn cloud_blocks(
    s: &mut Suite,
    op: &'static str,
    tol: f64,
    cloud: &GaussianCloud<f64>,
    verts: &[Vec3<f64>],
    cg: &CloudGrad<f64>,
    vg: &[Vec3<f64>],
    loss: impl Fn(&GaussianCloud<f64>, &[Vec3<f64>]) -> f64,
) {
    let h = 1e-5;
    s.check(op, "position", tol, |d| loss(&GaussianCloud { local_position: unflat3(d), ..cloud.clone() }, verts), &flat3(&cloud.local_position), &flat3(&cg.local_position), h);
    s.check(op, "rotation", tol, |d| loss(&GaussianCloud { local_rotation: unflat4(d), ..cloud.clone() }, verts), &flat4(&cloud.local_rotation), &flat4(&cg.local_rotation), h);
    s.check(op, "scale", tol, |d| loss(&GaussianCloud { local_log_scale: unflat3(d), ..cloud.clone() }, verts), &flat3(&cloud.local_log_scale), &flat3(&cg.local_log_scale), h);
    s.check(op, "opacity", tol, |d| loss(&GaussianCloud { opacity_logit: d.to_vec(), ..cloud.clone() }, verts), &cloud.opacity_logit, &cg.opacity_logit, h);
    s.check(op, "color", tol, |d| loss(&GaussianCloud { color_logit: unflat3(d), ..cloud.clone() }, verts), &flat3(&cloud.color_logit), &flat3(&cg.color_logit), h);
    s.check(op, "vertices", tol, |d| loss(cloud, &unflat3(d)), &flat3(verts), &flat3(vg), 1e-7);
}

fn promote_checks(s: &mut Suite) {
    let (v, f, cloud) = grid_scene(s.seed ^ 0x7077, 2, 0.06);
    let mut r = ChaCha8Rng::seed_from_u64(s.seed ^ 0x11);
    let n = cloud.len();
    let g = WorldGrad {
        position: (0..n).map(|_| rvec(&mut r, -1.0, 1.0)).collect(),
        rotation: (0..n).map(|_| rmat(&mut r)).collect(),
        scale: (0..n).map(|_| rvec(&mut r, -1.0, 1.0)).collect(),
        opacity_logit: (0..n).map(|_| r.random_range(-1.0..1.0)).collect(),
        color_logit: (0..n).map(|_| rvec(&mut r, -1.0, 1.0)).collect(),
    };
    let (_, cache) = promote_to_world(&cloud, &v, &f).expect("valid scene");
    let (cg, vg) = promote_backward(&cloud, &v, &f, &cache, &g);
    let loss = |c: &GaussianCloud<f64>, vv: &[Vec3<f64>]| {
        let (w, _) = promote_to_world(c, vv, &f).expect("valid scene");
        (0..n)
            .map(|i| {
                w.position[i].dot(g.position[i])
                    + w.rotation[i].frob_dot(&g.rotation[i])
                    + w.scale[i].dot(g.scale[i])
                    + w.opacity_logit[i] * g.opacity_logit[i]
                    + w.color_logit[i].dot(g.color_logit[i])
            })
            .sum::<f64>()
    };
    cloud_blocks(s, "promote_to_world", DEFAULT_TOLERANCE, &cloud, &v, &cg, &vg, loss);
}

fn suite_camera(w: usize, h: usize) -> Camera {
    Camera::look_at([0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 110.0, w, h)
}

fn random_output(w: usize, h: usize, r: &mut ChaCha8Rng) -> RenderOutput<f64> {
    let mut g = RenderOutput::zeros(w, h);
    for v in g.rgb.iter_mut().chain(g.normal.iter_mut()).chain(g.alpha.iter_mut()) {
        *v = r.random_range(-1.0..1.0);
    }
    g
}

fn dot_output(a: &RenderOutput<f64>, g: &RenderOutput<f64>) -> f64 {
    let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    d(&a.rgb, &g.rgb) + d(&a.normal, &g.normal) + d(&a.alpha, &g.alpha)
}

fn render_checks(s: &mut Suite) {
    let (v, f, cloud) = grid_scene(s.seed, 2, 0.06);
    let cam = suite_camera(12, 12);
    let mut r = ChaCha8Rng::seed_from_u64(s.seed ^ 0x2e4d);
    let bg = Background::new(rvec(&mut r, 0.0, 1.0));
    let g = random_output(12, 12, &mut r);
    let (_, rec) = render(&cloud, &v, &f, &cam, &bg).expect("valid scene");
    let Ok((cg, vg)) = render_backward(&cloud, &v, &f, &rec, &g) else {
        s.out.push(GradEntry { op: "render", block: "backward", seed: s.seed, max_rel_error: f64::INFINITY, tolerance: RENDER_TOLERANCE });
        return;
    };
    let loss = |c: &GaussianCloud<f64>, vv: &[Vec3<f64>]| dot_output(&render(c, vv, &f, &cam, &bg).expect("valid scene").0, &g);
    cloud_blocks(s, "render", RENDER_TOLERANCE, &cloud, &v, &cg, &vg, loss);
}

fn field_checks(s: &mut Suite) {
    let mut r = ChaCha8Rng::seed_from_u64(s.seed ^ 0xf1e1d);
    let latent_dim = 5;
    let latent: Vec<f64> = (0..latent_dim).map(|_| r.random_range(-1.0..1.0)).collect();
    let t = DEFAULT_TOLERANCE;

    let mut field = DeformationField::<f64>::new(latent_dim, &DeformationConfig { hidden: 12, position_scale: 10.0, initial_gain: 0.5 }, s.seed);
    // A zero last layer would hide every upstream gradient.
    let mut p = field.mlp.flatten();
    p.iter_mut().for_each(|x| *x += r.random_range(-0.3..0.3));
    field.mlp.unflatten(&p);
    let pos: Vec<Vec3<f64>> = (0..8).map(|_| rvec(&mut r, -0.1, 0.1)).collect();
    let probe: Vec<Vec3<f64>> = (0..8).map(|_| rvec(&mut r, -1.0, 1.0)).collect();
    let (_, cache) = field.deform(&pos, &latent).expect("latent size");
    let g = field.deform_backward(&cache, &probe);
    let loss = |f: &DeformationField<f64>, l: &[f64]| f.deform(&pos, l).expect("latent size").0.iter().zip(&probe).map(|(a, b)| a.dot(*b)).sum::<f64>();
    let mut wg = g.mlp.flatten();
    wg.push(g.gain);
    let mut w = field.mlp.flatten();
    w.push(field.gain);
    s.check(
        "deformation_field",
        "weights",
        t,
        |d| {
            let mut f = field.clone();
            f.mlp.unflatten(&d[..d.len() - 1]);
            f.gain = d[d.len() - 1];
            loss(&f, &latent)
        },
        &w,
        &wg,
        1e-5,
    );
    s.check("deformation_field", "latent", t, |d| loss(&field, d), &latent, &g.latent, 1e-5);

    let n = 6;
    let mut dynf = DynamicsField::<f64>::new(n, latent_dim, &DynamicsConfig { hidden: 12, code_dim: 4, code_init_std: 0.5 }, s.seed);
    let mut p = dynf.mlp.flatten();
    p.iter_mut().for_each(|x| *x += r.random_range(-0.3..0.3));
    dynf.mlp.unflatten(&p);
    let probe: Vec<Residual<f64>> = (0..n).map(|_| Residual::from_slice(&(0..14).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<_>>())).collect();
    let (_, cache) = dynf.residuals(&latent).expect("latent size");
    let g = dynf.residuals_backward(&cache, &probe);
    let loss = |f: &DynamicsField<f64>, l: &[f64]| {
        f.residuals(l).expect("latent size").0.iter().zip(&probe).map(|(a, b)| a.to_array().iter().zip(b.to_array()).map(|(x, y)| x * y).sum::<f64>()).sum::<f64>()
    };
    s.check(
        "dynamics_field",
        "weights",
        t,
        |d| {
            let mut f = dynf.clone();
            f.mlp.unflatten(d);
            loss(&f, &latent)
        },
        &dynf.mlp.flatten(),
        &g.mlp.flatten(),
        1e-5,
    );
    s.check(
        "dynamics_field",
        "codes",
        t,
        |d| {
            let mut f = dynf.clone();
            f.codes = d.to_vec();
            loss(&f, &latent)
        },
        &dynf.codes,
        &g.codes,
        1e-5,
    );
    s.check("dynamics_field", "latent", t, |d| loss(&dynf, d), &latent, &g.latent, 1e-5);

    // Residual application onto a cloud.
    let (_, _, cloud) = grid_scene(s.seed ^ 0xa991, 2, 0.06);
    let m = cloud.len();
    let res: Vec<Residual<f64>> = (0..m).map(|_| Residual::from_slice(&(0..14).map(|_| r.random_range(-0.3..0.3)).collect::<Vec<_>>())).collect();
    let gc = CloudGrad {
        local_position: (0..m).map(|_| rvec(&mut r, -1.0, 1.0)).collect(),
        local_rotation: (0..m).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect(),
        local_log_scale: (0..m).map(|_| rvec(&mut r, -1.0, 1.0)).collect(),
        opacity_logit: (0..m).map(|_| r.random_range(-1.0..1.0)).collect(),
        color_logit: (0..m).map(|_| rvec(&mut r, -1.0, 1.0)).collect(),
    };
    let contract = |c: &GaussianCloud<f64>| {
        (0..m)
            .map(|i| {
                c.local_position[i].dot(gc.local_position[i])
                    + c.local_rotation[i].iter().zip(&gc.local_rotation[i]).map(|(a, b)| a * b).sum::<f64>()
                    + c.local_log_scale[i].dot(gc.local_log_scale[i])
                    + c.opacity_logit[i] * gc.opacity_logit[i]
                    + c.color_logit[i].dot(gc.color_logit[i])
            })
            .sum::<f64>()
    };
    let (gbase, gres) = apply_residuals_backward(&cloud, &res, &gc);
    let flat_res = |v: &[Residual<f64>]| v.iter().flat_map(|x| x.to_array()).collect::<Vec<f64>>();
    s.check(
        "dynamics_field",
        "apply_residuals",
        t,
        |d| contract(&apply_residuals(&cloud, &d.chunks(14).map(Residual::from_slice).collect::<Vec<_>>())),
        &flat_res(&res),
        &flat_res(&gres),
        1e-6,
    );
    s.check(
        "dynamics_field",
        "apply_base_rotation",
        t,
        |d| contract(&apply_residuals(&GaussianCloud { local_rotation: unflat4(d), ..cloud.clone() }, &res)),
        &flat4(&cloud.local_rotation),
        &flat4(&gbase.local_rotation),
        1e-6,
    );
}

fn random_image(w: usize, h: usize, c: usize, lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Image<f64> {
    Image::from_data(w, h, c, (0..w * h * c).map(|_| r.random_range(lo..hi)).collect())
}

fn loss_checks(s: &mut Suite) {
    let mut r = ChaCha8Rng::seed_from_u64(s.seed ^ 0x1055);
    let t = DEFAULT_TOLERANCE;
    let (w, h) = (13, 12);
    let x = random_image(w, h, 3, 0.0, 1.0, &mut r);
    let y = random_image(w, h, 3, 0.0, 1.0, &mut r);
    let (_, g) = photometric_loss(&x, &y, 0.8, 0.2).expect("same shape");
    let img = |d: &[f64]| Image::from_data(w, h, 3, d.to_vec());
    s.check("photometric_loss", "rendered", t, |d| photometric_loss(&img(d), &y, 0.8, 0.2).expect("same shape").0.total, &x.data, &g.data, 1e-7);

    let n = random_image(w, h, 3, -1.0, 1.0, &mut r);
    let tgt = random_image(w, h, 3, -1.0, 1.0, &mut r);
    let mask = random_image(w, h, 1, 0.0, 1.0, &mut r);
    let (_, g) = normal_loss(&n, &tgt, &mask, 0.1).expect("same shape");
    s.check("normal_loss", "rendered", t, |d| normal_loss(&img(d), &tgt, &mask, 0.1).expect("same shape").0, &n.data, &g.data, 1e-7);

    let (_, _, mut cloud) = grid_scene(s.seed ^ 0x5ca1e, 3, 0.06);
    for (mu, ls) in cloud.local_position.iter_mut().zip(cloud.local_log_scale.iter_mut()) {
        *mu = rvec(&mut r, -1.2, 1.2);
        *ls = rvec(&mut r, -1.5, 0.5);
    }
    let mut g = CloudGrad::zeros(cloud.len());
    position_regularizer(&cloud, 1.0, 0.3, &mut g);
    s.check(
        "position_regularizer",
        "position",
        t,
        |d| position_regularizer(&GaussianCloud { local_position: unflat3(d), ..cloud.clone() }, 1.0, 0.3, &mut CloudGrad::zeros(cloud.len())),
        &flat3(&cloud.local_position),
        &flat3(&g.local_position),
        1e-7,
    );
    let mut g = CloudGrad::zeros(cloud.len());
    scale_regularizer(&cloud, 0.6, 0.7, &mut g);
    s.check(
        "scale_regularizer",
        "scale",
        t,
        |d| scale_regularizer(&GaussianCloud { local_log_scale: unflat3(d), ..cloud.clone() }, 0.6, 0.7, &mut CloudGrad::zeros(cloud.len())),
        &flat3(&cloud.local_log_scale),
        &flat3(&g.local_log_scale),
        1e-7,
    );

    let res: Vec<Residual<f64>> = (0..5).map(|_| Residual::from_slice(&(0..14).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<_>>())).collect();
    let off: Vec<Vec3<f64>> = (0..7).map(|_| rvec(&mut r, -1.0, 1.0)).collect();
    let mut gr = vec![Residual::default(); res.len()];
    let mut go = vec![Vec3::zero(); off.len()];
    dynamics_regularizer(&res, &off, 0.4, &mut gr, &mut go);
    let mut x: Vec<f64> = res.iter().flat_map(|v| v.to_array()).collect();
    let split = x.len();
    x.extend(flat3(&off));
    let mut ga: Vec<f64> = gr.iter().flat_map(|v| v.to_array()).collect();
    ga.extend(flat3(&go));
    s.check(
        "dynamics_regularizer",
        "residuals_and_offsets",
        t,
        |d| {
            let rr: Vec<Residual<f64>> = d[..split].chunks(14).map(Residual::from_slice).collect();
            let oo = unflat3(&d[split..]);
            dynamics_regularizer(&rr, &oo, 0.4, &mut vec![Residual::default(); rr.len()], &mut vec![Vec3::zero(); oo.len()])
        },
        &x,
        &ga,
        1e-6,
    );
    let _ = axis_angle_to_mat::<f64>;
}
