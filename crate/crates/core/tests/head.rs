use headsplat::head::{make_toy_model, pose_mesh, pose_vertices, AvatarParams, FramePose, HeadModel, ToyModelOptions};
use headsplat::Vec3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M4 = [[f64; 4]; 4];

fn rodrigues(v: [f64; 3]) -> [[f64; 3]; 3] {
    let th = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if th < 1e-300 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let k = [v[0] / th, v[1] / th, v[2] / th];
    let (s, c) = th.sin_cos();
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (1.0 - c) * k[i] * k[j] + if i == j { c } else { 0.0 };
        }
    }
    r[0][1] -= s * k[2];
    r[0][2] += s * k[1];
    r[1][0] += s * k[2];
    r[1][2] -= s * k[0];
    r[2][0] -= s * k[1];
    r[2][1] += s * k[0];
    r
}

fn affine(r: [[f64; 3]; 3], t: [f64; 3]) -> M4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&r[i]);
        m[i][3] = t[i];
    }
    m[3][3] = 1.0;
    m
}

fn mul(a: &M4, b: &M4) -> M4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

/// Textbook linear blend skinning with homogeneous joint transforms
/// `G_j = G_parent · T(J_j) · R_j · T(−J_j)`, applied per vertex as
/// `Σ_j w_j G_j x`, followed by the global rigid transform.
fn lbs_oracle(m: &HeadModel<f64>, shape: &[f64], pose: &FramePose<f64>) -> Vec<[f64; 3]> {
    let nv = m.num_vertices();
    let nj = m.num_joints();
    let mut shaped = vec![[0.0; 3]; nv];
    for v in 0..nv {
        for a in 0..3 {
            let mut x = m.template_vertices[v][a];
            for k in 0..m.num_shape {
                x += m.shape_offset(v, a, k) * shape[k];
            }
            for k in 0..m.num_expr {
                x += m.expr_offset(v, a, k) * pose.expression[k];
            }
            shaped[v][a] = x;
        }
    }
    let mut joints = vec![[0.0; 3]; nj];
    for j in 0..nj {
        for v in 0..nv {
            let w = m.joint_regressor[j * nv + v];
            for a in 0..3 {
                joints[j][a] += w * shaped[v][a];
            }
        }
    }
    let mut g: Vec<M4> = Vec::with_capacity(nj);
    for j in 0..nj {
        let jj = joints[j];
        let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let local = mul(
            &mul(&affine(eye, jj), &affine(rodrigues(pose.joints[j].to_array()), [0.0; 3])),
            &affine(eye, [-jj[0], -jj[1], -jj[2]]),
        );
        let p = m.joint_parents[j];
        g.push(if p < 0 { local } else { mul(&g[p as usize], &local) });
    }
    let root = affine(rodrigues(pose.rotation.to_array()), pose.translation.to_array());
    (0..nv)
        .map(|v| {
            let x = [shaped[v][0], shaped[v][1], shaped[v][2], 1.0];
            let mut blended = [0.0; 4];
            for j in 0..nj {
                let w = m.skin_weight(v, j);
                for i in 0..4 {
                    blended[i] += w * (0..4).map(|k| g[j][i][k] * x[k]).sum::<f64>();
                }
            }
            let mut out = [0.0; 3];
            for i in 0..3 {
                out[i] = (0..4).map(|k| root[i][k] * blended[k]).sum();
            }
            out
        })
        .collect()
}

fn small_model(seed: u64) -> HeadModel<f64> {
    make_toy_model(&ToyModelOptions { seed, target_vertices: 200, num_shape: 6, num_expr: 5 })
}

fn random_pose(m: &HeadModel<f64>, r: &mut ChaCha8Rng, amp: f64) -> (Vec<f64>, FramePose<f64>) {
    let rv = |r: &mut ChaCha8Rng| Vec3::new(r.random_range(-amp..amp), r.random_range(-amp..amp), r.random_range(-amp..amp));
    let shape = (0..m.num_shape).map(|_| r.random_range(-2.0..2.0)).collect();
    let mut p = FramePose::zeros(m.num_expr, m.num_joints());
    p.expression = (0..m.num_expr).map(|_| r.random_range(-2.0..2.0)).collect();
    p.joints = (0..m.num_joints()).map(|_| rv(r)).collect();
    p.rotation = rv(r);
    p.translation = rv(r) * 0.1;
    (shape, p)
}

#[test]
fn posed_vertices_match_homogeneous_skinning() {
    for seed in 0..5 {
        let m = small_model(seed);
        let mut r = ChaCha8Rng::seed_from_u64(100 + seed);
        let (shape, pose) = random_pose(&m, &mut r, 0.6);
        let got = pose_vertices(&m, &shape, &pose).unwrap();
        let want = lbs_oracle(&m, &shape, &pose);
        for (g, w) in got.iter().zip(&want) {
            for a in 0..3 {
                assert!((g[a] - w[a]).abs() < 1e-12, "seed {seed}: {g:?} vs {w:?}");
            }
        }
    }
}

#[test]
fn rest_pose_is_linear_in_coefficients() {
    let m = small_model(3);
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let rest = |shape: &[f64], expr: &[f64]| {
        let mut p = FramePose::zeros(m.num_expr, m.num_joints());
        p.expression = expr.to_vec();
        pose_vertices(&m, shape, &p).unwrap()
    };
    let a: Vec<f64> = (0..m.num_shape).map(|_| r.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..m.num_shape).map(|_| r.random_range(-1.0..1.0)).collect();
    let e: Vec<f64> = (0..m.num_expr).map(|_| r.random_range(-1.0..1.0)).collect();
    let f: Vec<f64> = (0..m.num_expr).map(|_| r.random_range(-1.0..1.0)).collect();
    let (al, be) = (0.7, -1.3);
    let mix = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| al * p + be * q).collect::<Vec<_>>();
    let zs = vec![0.0; m.num_shape];
    let ze = vec![0.0; m.num_expr];
    let t = rest(&zs, &ze);
    let combined = rest(&mix(&a, &b), &mix(&e, &f));
    let (va, vb, ve, vf) = (rest(&a, &ze), rest(&b, &ze), rest(&zs, &e), rest(&zs, &f));
    for i in 0..t.len() {
        let lin = t[i] + (va[i] - t[i]) * al + (vb[i] - t[i]) * be + (ve[i] - t[i]) * al + (vf[i] - t[i]) * be;
        assert!((combined[i] - lin).max_abs() < 1e-13);
    }
}

#[test]
fn zero_residuals_reproduce_tracked_pose_bit_exactly() {
    let m = small_model(5);
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let frames: Vec<FramePose<f64>> = (0..3).map(|_| random_pose(&m, &mut r, 0.4).1).collect();
    let (shape, _) = random_pose(&m, &mut r, 0.4);
    let params = AvatarParams::new(shape.clone(), frames.clone());
    for (f, p) in frames.iter().enumerate() {
        assert_eq!(pose_mesh(&m, &params, f).unwrap(), pose_vertices(&m, &shape, p).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn global_transform_is_rigid(
        seed in 0u64..1000,
        rx in -3.0f64..3.0, ry in -3.0f64..3.0, rz in -3.0f64..3.0,
        tx in -1.0f64..1.0, ty in -1.0f64..1.0, tz in -1.0f64..1.0,
    ) {
        let m = make_toy_model::<f64>(&ToyModelOptions { seed: 1, target_vertices: 60, num_shape: 3, num_expr: 3 });
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (shape, mut pose) = random_pose(&m, &mut r, 0.5);
        pose.rotation = Vec3::zero();
        pose.translation = Vec3::zero();
        let base = pose_vertices(&m, &shape, &pose).unwrap();
        pose.rotation = Vec3::new(rx, ry, rz);
        pose.translation = Vec3::new(tx, ty, tz);
        let moved = pose_vertices(&m, &shape, &pose).unwrap();
        let rot = rodrigues([rx, ry, rz]);
        for (b, v) in base.iter().zip(&moved) {
            for i in 0..3 {
                let want = (0..3).map(|k| rot[i][k] * b[k]).sum::<f64>() + [tx, ty, tz][i];
                prop_assert!((v[i] - want).abs() < 1e-12);
            }
        }
    }
}
