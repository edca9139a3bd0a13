#![allow(dead_code)]

use headsplat::cloud::{GaussianCloud, WorldGaussians};
use headsplat::linalg::{axis_angle_to_mat, Mat3, Vec3};
use headsplat::render::{Background, Camera, RenderOutput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn front_camera(w: usize, h: usize, focal: f64) -> Camera {
    Camera::look_at([0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], focal, w, h)
}

pub fn random_rotation(r: &mut ChaCha8Rng) -> Mat3<f64> {
    let v = Vec3::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
    axis_angle_to_mat(v)
}

/// Random world Gaussians in front of [`front_camera`].
pub fn random_world(seed: u64, n: usize) -> WorldGaussians<f64> {
    let mut r = rng(seed);
    let mut w = WorldGaussians::default();
    for _ in 0..n {
        w.position.push(Vec3::new(r.random_range(-0.15..0.15), r.random_range(-0.15..0.15), r.random_range(-0.2..0.2)));
        w.rotation.push(random_rotation(&mut r));
        w.scale.push(Vec3::new(r.random_range(0.005..0.05), r.random_range(0.005..0.05), r.random_range(0.001..0.05)));
        w.opacity_logit.push(r.random_range(-2.0..4.0));
        w.color_logit.push(Vec3::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)));
        w.active.push(true);
    }
    w
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-pixel reference renderer: every pixel walks all Gaussians in depth
/// order with no binning.
pub fn brute_force_render(w: &WorldGaussians<f64>, cam: &Camera, bg: &Background<f64>) -> RenderOutput<f64> {
    let rc = cam.rotation;
    let tc = cam.translation;
    let center = {
        let mut c = [0.0; 3];
        for i in 0..3 {
            for k in 0..3 {
                c[i] -= rc[k][i] * tc[k];
            }
        }
        c
    };
    struct P {
        idx: usize,
        depth: f64,
        u: f64,
        v: f64,
        inv: [f64; 3],
        op: f64,
        feat: [f64; 6],
    }
    let mut ps = Vec::new();
    for i in 0..w.len() {
        if !w.active[i] {
            continue;
        }
        let x = w.position[i].to_array();
        let mut pc = [0.0; 3];
        for a in 0..3 {
            pc[a] = tc[a] + (0..3).map(|k| rc[a][k] * x[k]).sum::<f64>();
        }
        if pc[2] <= cam.near {
            continue;
        }
        let rw = w.rotation[i].m;
        let s = w.scale[i].to_array();
        // Σ = R S² Rᵀ
        let mut sig = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                sig[a][b] = (0..3).map(|k| rw[a][k] * s[k] * s[k] * rw[b][k]).sum();
            }
        }
        // Σc = Rc Σ Rcᵀ
        let mut sc = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        acc += rc[a][k] * sig[k][l] * rc[b][l];
                    }
                }
                sc[a][b] = acc;
            }
        }
        let z = pc[2];
        let j = [[cam.fx / z, 0.0, -cam.fx * pc[0] / (z * z)], [0.0, cam.fy / z, -cam.fy * pc[1] / (z * z)]];
        let mut c2 = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                let mut acc = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        acc += j[a][k] * sc[k][l] * j[b][l];
                    }
                }
                c2[a][b] = acc;
            }
        }
        c2[0][0] += 0.3;
        c2[1][1] += 0.3;
        let det = c2[0][0] * c2[1][1] - c2[0][1] * c2[1][0];
        let inv = [c2[1][1] / det, -c2[0][1] / det, c2[0][0] / det];
        let mut axis = 0;
        for k in 1..3 {
            if s[k] < s[axis] {
                axis = k;
            }
        }
        let mut n = [rw[0][axis], rw[1][axis], rw[2][axis]];
        let view: f64 = (0..3).map(|k| n[k] * (x[k] - center[k])).sum();
        if view > 0.0 {
            n = n.map(|v| -v);
        }
        let c = w.color_logit[i].to_array().map(sigmoid);
        ps.push(P {
            idx: i,
            depth: z,
            u: cam.fx * pc[0] / z + cam.cx,
            v: cam.fy * pc[1] / z + cam.cy,
            inv,
            op: sigmoid(w.opacity_logit[i]),
            feat: [c[0], c[1], c[2], n[0], n[1], n[2]],
        });
    }
    ps.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.idx.cmp(&b.idx)));
    let floor = (-4.5f64).exp();
    let bgf = [bg.rgb.x, bg.rgb.y, bg.rgb.z, bg.normal.x, bg.normal.y, bg.normal.z];
    let mut out = RenderOutput::zeros(cam.width, cam.height);
    for row in 0..cam.height {
        for col in 0..cam.width {
            let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
            let mut t = 1.0;
            let mut acc = [0.0; 6];
            for p in &ps {
                if t < 1e-4 {
                    break;
                }
                let (dx, dy) = (px - p.u, py - p.v);
                let d2 = p.inv[0] * dx * dx + 2.0 * p.inv[1] * dx * dy + p.inv[2] * dy * dy;
                if d2 >= 9.0 {
                    continue;
                }
                let a = p.op * ((-0.5 * d2).exp() - floor) / (1.0 - floor);
                for k in 0..6 {
                    acc[k] += a * t * p.feat[k];
                }
                t *= 1.0 - a;
            }
            let pix = row * cam.width + col;
            for k in 0..3 {
                out.rgb[3 * pix + k] = acc[k] + t * bgf[k];
                out.normal[3 * pix + k] = acc[3 + k] + t * bgf[3 + k];
            }
            out.alpha[pix] = 1.0 - t;
        }
    }
    out
}

/// A small bumpy triangle mesh facing [`front_camera`], with one random
/// Gaussian per face.
pub fn random_mesh_scene(seed: u64, grid: usize, extent: f64) -> (Vec<Vec3<f64>>, Vec<[u32; 3]>, GaussianCloud<f64>) {
    let mut r = rng(seed);
    let mut verts = Vec::new();
    for i in 0..=grid {
        for j in 0..=grid {
            let x = -extent + 2.0 * extent * j as f64 / grid as f64 + r.random_range(-0.1..0.1) * extent / grid as f64;
            let y = -extent + 2.0 * extent * i as f64 / grid as f64 + r.random_range(-0.1..0.1) * extent / grid as f64;
            verts.push(Vec3::new(x, y, r.random_range(-0.2..0.2) * extent));
        }
    }
    let mut faces = Vec::new();
    let id = |i: usize, j: usize| (i * (grid + 1) + j) as u32;
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
            Vec3::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)),
        );
    }
    (verts, faces, cloud)
}

pub fn random_grads(w: usize, h: usize, seed: u64) -> RenderOutput<f64> {
    let mut r = rng(seed);
    let mut g = RenderOutput::zeros(w, h);
    for v in g.rgb.iter_mut().chain(g.normal.iter_mut()).chain(g.alpha.iter_mut()) {
        *v = r.random_range(-1.0..1.0);
    }
    g
}

pub fn dot_output(a: &RenderOutput<f64>, g: &RenderOutput<f64>) -> f64 {
    let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    d(&a.rgb, &g.rgb) + d(&a.normal, &g.normal) + d(&a.alpha, &g.alpha)
}
