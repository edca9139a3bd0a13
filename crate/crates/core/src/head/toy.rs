//! Procedural stand-in for a real head model: a bumpy latitude/longitude
//! ellipsoid with band-limited blendshape bases, a root and a jaw joint, and a
//! two-chart UV atlas (north and south hemispheres, the south chart rotated by
//! half a turn so that its border faces the far side of the north chart).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::Vec3;
use crate::real::{lit, Real};

use super::HeadModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyModelOptions {
    pub seed: u64,
    pub target_vertices: usize,
    pub num_shape: usize,
    pub num_expr: usize,
}

impl Default for ToyModelOptions {
    fn default() -> Self {
        Self { seed: 0, target_vertices: 1000, num_shape: 100, num_expr: 50 }
    }
}

const RADII: [f64; 3] = [0.075, 0.1, 0.09];

struct Wave {
    freq: [f64; 3],
    phase: f64,
    dir: [f64; 3],
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n2: f64 = v.iter().map(|x| x * x).sum();
        if n2 > 1e-4 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn random_waves(rng: &mut ChaCha8Rng, count: usize) -> Vec<Wave> {
    (0..count)
        .map(|_| {
            let d = random_unit(rng);
            let f = rng.random_range(0.5..2.5);
            Wave { freq: [d[0] * f, d[1] * f, d[2] * f], phase: rng.random_range(0.0..std::f64::consts::TAU), dir: random_unit(rng) }
        })
        .collect()
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Build a deterministic toy head model.
///
/// Vertex counts below 12 are raised to 12. The mesh is a closed genus-0
/// surface.
pub fn make_toy_model<T: Real>(opts: &ToyModelOptions) -> HeadModel<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let target = opts.target_vertices.max(12);
    let rings = (((target - 2) as f64 / 2.0).sqrt().round() as usize).max(2);
    let segs = (((target - 2) as f64 / rings as f64).round() as usize).max(5);
    let nv = rings * segs + 2;
    let north = 0usize;
    let south = nv - 1;
    let ring_vertex = |i: usize, j: usize| 1 + (i - 1) * segs + (j % segs);

    // directions on the unit sphere, +y up, +z facing forward
    let mut dirs = vec![[0.0, 1.0, 0.0]; nv];
    dirs[south] = [0.0, -1.0, 0.0];
    for i in 1..=rings {
        let phi = std::f64::consts::PI * i as f64 / (rings + 1) as f64;
        for j in 0..segs {
            let lam = std::f64::consts::TAU * j as f64 / segs as f64;
            dirs[ring_vertex(i, j)] = [phi.sin() * lam.sin(), phi.cos(), phi.sin() * lam.cos()];
        }
    }

    let bumps = random_waves(&mut rng, 4);
    let amp: Vec<f64> = (0..bumps.len()).map(|_| rng.random_range(0.01..0.03)).collect();
    let positions: Vec<[f64; 3]> = dirs
        .iter()
        .map(|d| {
            let mut rho = 1.0;
            for (w, a) in bumps.iter().zip(&amp) {
                rho += a * (w.freq[0] * d[0] + w.freq[1] * d[1] + w.freq[2] * d[2] + w.phase).sin();
            }
            let nose = [0.0, -0.05, 1.0];
            let dn: f64 = (0..3).map(|k| (d[k] - nose[k]).powi(2)).sum();
            rho += 0.08 * (-dn / 0.03).exp();
            [RADII[0] * d[0] * rho, RADII[1] * d[1] * rho, RADII[2] * d[2] * rho]
        })
        .collect();

    // faces and UV atlas are generated together so indices correspond
    let split = (rings + 1) / 2;
    let u_of = |k: usize| 0.01 + 0.98 * k as f64 / segs as f64;
    let v_north = |i: usize| 0.02 + 0.46 * i as f64 / split as f64;
    let v_south = |i: usize| 0.52 + 0.46 * (i - split) as f64 / (rings + 1 - split) as f64;
    let mut faces: Vec<[u32; 3]> = Vec::with_capacity(2 * rings * segs);
    let mut uv_faces: Vec<[u32; 3]> = Vec::with_capacity(faces.capacity());
    let mut uvs: Vec<[f64; 2]> = Vec::new();

    // north chart: rings 1..=split, longitude index k == j
    let north_uv = |i: usize, k: usize| (i - 1) * (segs + 1) + k;
    for i in 1..=split {
        for k in 0..=segs {
            uvs.push([u_of(k), v_north(i)]);
        }
    }
    for k in 0..segs {
        let pole_uv = uvs.len();
        uvs.push([0.01 + 0.98 * (k as f64 + 0.5) / segs as f64, v_north(0)]);
        faces.push([north as u32, ring_vertex(1, k) as u32, ring_vertex(1, k + 1) as u32]);
        uv_faces.push([pole_uv as u32, north_uv(1, k) as u32, north_uv(1, k + 1) as u32]);
    }
    for i in 1..split {
        for k in 0..segs {
            let (a, b, c, d) = (ring_vertex(i, k), ring_vertex(i + 1, k), ring_vertex(i + 1, k + 1), ring_vertex(i, k + 1));
            let (ua, ub, uc, ud) = (north_uv(i, k), north_uv(i + 1, k), north_uv(i + 1, k + 1), north_uv(i, k + 1));
            faces.push([a as u32, b as u32, c as u32]);
            uv_faces.push([ua as u32, ub as u32, uc as u32]);
            faces.push([a as u32, c as u32, d as u32]);
            uv_faces.push([ua as u32, uc as u32, ud as u32]);
        }
    }

    // south chart: rings split..=rings, longitude j = (j0 + k) mod segs
    let j0 = segs / 2;
    let south_base = uvs.len();
    let south_uv = |i: usize, k: usize| south_base + (i - split) * (segs + 1) + k;
    for i in split..=rings {
        for k in 0..=segs {
            uvs.push([u_of(k), v_south(i)]);
        }
    }
    for i in split..rings {
        for k in 0..segs {
            let (a, b, c, d) =
                (ring_vertex(i, j0 + k), ring_vertex(i + 1, j0 + k), ring_vertex(i + 1, j0 + k + 1), ring_vertex(i, j0 + k + 1));
            let (ua, ub, uc, ud) = (south_uv(i, k), south_uv(i + 1, k), south_uv(i + 1, k + 1), south_uv(i, k + 1));
            faces.push([a as u32, b as u32, c as u32]);
            uv_faces.push([ua as u32, ub as u32, uc as u32]);
            faces.push([a as u32, c as u32, d as u32]);
            uv_faces.push([ua as u32, uc as u32, ud as u32]);
        }
    }
    for k in 0..segs {
        let pole_uv = uvs.len();
        uvs.push([0.01 + 0.98 * (k as f64 + 0.5) / segs as f64, v_south(rings + 1)]);
        faces.push([ring_vertex(rings, j0 + k) as u32, south as u32, ring_vertex(rings, j0 + k + 1) as u32]);
        uv_faces.push([south_uv(rings, k) as u32, pole_uv as u32, south_uv(rings, k + 1) as u32]);
    }

    // skinning: root + jaw (front-lower region)
    let jaw_weight: Vec<f64> =
        dirs.iter().map(|d| smoothstep((d[2] - 0.2) / 0.4) * smoothstep((-d[1] - 0.15) / 0.35)).collect();
    let mut skin = Vec::with_capacity(nv * 2);
    for w in &jaw_weight {
        skin.push(1.0 - w);
        skin.push(*w);
    }

    // joint regressor: root = mean of the lowest vertices, jaw = mean of the
    // vertices nearest to two hinge points below the ears
    let k = (nv / 20).max(1);
    let mut order: Vec<usize> = (0..nv).collect();
    order.sort_by(|&a, &b| positions[a][1].total_cmp(&positions[b][1]).then(a.cmp(&b)));
    let root_set: Vec<usize> = order[..k].to_vec();
    let nearest = |target: [f64; 3], count: usize| {
        let mut idx: Vec<usize> = (0..nv).collect();
        let dist = |i: usize| (0..3).map(|c| (positions[i][c] - target[c]).powi(2)).sum::<f64>();
        idx.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
        idx.truncate(count);
        idx
    };
    let half = (k / 2).max(1);
    let mut jaw_set = nearest([0.85 * RADII[0], -0.3 * RADII[1], 0.0], half);
    jaw_set.extend(nearest([-0.85 * RADII[0], -0.3 * RADII[1], 0.0], half));
    let mut regressor = vec![0.0f64; 2 * nv];
    for &v in &root_set {
        regressor[v] += 1.0 / root_set.len() as f64;
    }
    for &v in &jaw_set {
        regressor[nv + v] += 1.0 / jaw_set.len() as f64;
    }
    let joint_rest: Vec<[f64; 3]> = (0..2)
        .map(|j| {
            let mut acc = [0.0; 3];
            for v in 0..nv {
                for c in 0..3 {
                    acc[c] += regressor[j * nv + v] * positions[v][c];
                }
            }
            acc
        })
        .collect();

    let basis = |rng: &mut ChaCha8Rng, count: usize, amplitude: f64, mask: &dyn Fn(&[f64; 3]) -> f64| {
        let amp = amplitude / (count.max(1) as f64).sqrt();
        let waves: Vec<Vec<Wave>> = (0..count).map(|_| random_waves(rng, 3)).collect();
        let mut out = vec![0.0f64; nv * 3 * count];
        for (v, d) in dirs.iter().enumerate() {
            let m = mask(d);
            for (c, ws) in waves.iter().enumerate() {
                let mut off = [0.0; 3];
                for w in ws {
                    let s = (w.freq[0] * d[0] + w.freq[1] * d[1] + w.freq[2] * d[2] + w.phase).sin();
                    for a in 0..3 {
                        off[a] += s * w.dir[a];
                    }
                }
                for a in 0..3 {
                    out[(v * 3 + a) * count + c] = amp * m * off[a];
                }
            }
        }
        out
    };
    let shape_basis = basis(&mut rng, opts.num_shape, 0.01, &|_| 1.0);
    let expr_basis = basis(&mut rng, opts.num_expr, 0.015, &|d| smoothstep((d[2] + 0.1) / 0.6));

    let cv = |v: &[f64]| v.iter().map(|x| lit::<T>(*x)).collect::<Vec<T>>();
    HeadModel {
        template_vertices: positions.iter().map(|p| Vec3::from_f64(*p)).collect(),
        faces,
        uv_coords: uvs.iter().map(|uv| [lit(uv[0]), lit(uv[1])]).collect(),
        uv_faces,
        num_shape: opts.num_shape,
        num_expr: opts.num_expr,
        shape_basis: cv(&shape_basis),
        expr_basis: cv(&expr_basis),
        joint_rest: joint_rest.iter().map(|p| Vec3::from_f64(*p)).collect(),
        joint_parents: vec![-1, 0],
        joint_regressor: cv(&regressor),
        skin_weights: cv(&skin),
    }
}
