mod common;

use common::*;
use headsplat::cloud::{GaussianCloud, WorldGaussians};
use headsplat::linalg::{Mat3, Vec3};
use headsplat::metrics::grad_check;
use headsplat::real::logit;
use headsplat::render::{render, render_backward, render_world, render_world_backward, Background, RenderOutput};
use rand::Rng;

#[test]
fn tiled_renderer_matches_brute_force() {
    for seed in 0..50u64 {
        let mut r = rng(1000 + seed);
        let n = r.random_range(1..=64);
        let world = random_world(seed, n);
        let mut cam = front_camera(32, 32, r.random_range(40.0..120.0));
        cam.cx += r.random_range(-3.0..3.0);
        let bg = Background { rgb: Vec3::new(r.random(), r.random(), r.random()), normal: Vec3::zero() };
        let (tiled, _) = render_world(&world, &cam, &bg);
        let brute = brute_force_render(&world, &cam, &bg);
        let diff = tiled
            .rgb
            .iter()
            .zip(&brute.rgb)
            .chain(tiled.normal.iter().zip(&brute.normal))
            .chain(tiled.alpha.iter().zip(&brute.alpha))
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff <= 1e-5, "seed {seed}: {diff}");
    }
}

fn axis_gaussian(z: f64, opacity: f64, rgb: f64) -> (Vec3<f64>, Mat3<f64>, Vec3<f64>, f64, Vec3<f64>) {
    (Vec3::new(0.0, 0.0, z), Mat3::identity(), Vec3::new(0.01, 0.01, 0.001), logit(opacity), Vec3::splat(logit(rgb)))
}

#[test]
fn two_stacked_half_weights_composite_by_hand() {
    let mut cam = front_camera(16, 16, 100.0);
    // put the optical axis through the center of pixel (8, 8)
    cam.cx = 8.5;
    cam.cy = 8.5;
    let mut w = WorldGaussians::default();
    for (z, c) in [(0.1, 0.8), (-0.1, 0.2)] {
        let (p, r, s, o, col) = axis_gaussian(z, 0.5, c);
        w.position.push(p);
        w.rotation.push(r);
        w.scale.push(s);
        w.opacity_logit.push(o);
        w.color_logit.push(col);
        w.active.push(true);
    }
    let bg = Background::new(Vec3::splat(0.6));
    let (out, _) = render_world(&w, &cam, &bg);
    let expect = 0.5 * 0.8 + 0.25 * 0.2 + 0.25 * 0.6;
    assert!((out.rgb_at(8, 8) - Vec3::splat(expect)).max_abs() < 1e-12);
    assert!((out.alpha_at(8, 8) - 0.75).abs() < 1e-12);
    // both normals face the camera on +z
    assert!((out.normal_at(8, 8) - Vec3::new(0.0, 0.0, 0.75)).max_abs() < 1e-12);
}

#[test]
fn conservation_range_and_background_invariance() {
    for seed in 0..10u64 {
        let world = random_world(500 + seed, 40);
        let cam = front_camera(48, 40, 80.0);
        let bg = Background { rgb: Vec3::new(0.3, 0.7, 0.1), normal: Vec3::zero() };
        let (out, rec) = render_world(&world, &cam, &bg);
        let brute = brute_force_render(&world, &cam, &bg);
        let mut touched = vec![false; cam.num_pixels()];
        for s in &rec.raster.splats {
            if let Some([c0, c1, r0, r1]) = s.pixels {
                for r in r0..=r1 {
                    for c in c0..=c1 {
                        let (d2, _, _) = s.distance(r, c);
                        if d2 < 9.0 {
                            touched[r * cam.width + c] = true;
                        }
                    }
                }
            }
        }
        for p in 0..cam.num_pixels() {
            let a = out.alpha[p];
            assert!((0.0..=1.0).contains(&a));
            // alpha + final transmittance, with transmittance from the oracle
            assert!((a + (1.0 - brute.alpha[p]) - 1.0).abs() < 1e-6);
            for k in 0..3 {
                assert!(out.normal[3 * p + k].abs() <= 1.0 + 1e-12);
            }
            if !touched[p] {
                assert_eq!(out.rgb_at(p / cam.width, p % cam.width), bg.rgb);
                assert_eq!(out.normal_at(p / cam.width, p % cam.width), bg.normal);
                assert_eq!(a, 0.0);
            }
        }
    }
}

#[test]
fn identical_across_thread_counts() {
    let (v, f, cloud) = random_mesh_scene(3, 6, 0.12);
    let cam = front_camera(40, 40, 150.0);
    let bg = Background::new(Vec3::splat(0.5));
    let g = random_grads(40, 40, 8);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let (out, rec) = render(&cloud, &v, &f, &cam, &bg).unwrap();
            let grads = render_backward(&cloud, &v, &f, &rec, &g).unwrap();
            (out, grads)
        })
    };
    let (o1, g1) = run(1);
    for t in [2, 3, 4] {
        let (o2, g2) = run(t);
        assert_eq!(o1, o2);
        assert_eq!(g1, g2);
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let (v, f, cloud) = random_mesh_scene(1, 4, 0.1);
    let cam = front_camera(24, 24, 120.0);
    let (_, rec) = render(&cloud, &v, &f, &cam, &Background::default()).unwrap();
    let (cg, vg) = render_backward(&cloud, &v, &f, &rec, &RenderOutput::zeros(24, 24)).unwrap();
    assert!(vg.iter().all(|x| x.max_abs() == 0.0));
    assert!(cg.local_position.iter().all(|x| x.max_abs() == 0.0));
    assert!(cg.opacity_logit.iter().all(|x| *x == 0.0));
}

#[test]
fn gradient_size_mismatch_is_rejected() {
    let (v, f, cloud) = random_mesh_scene(1, 2, 0.1);
    let cam = front_camera(24, 24, 120.0);
    let (_, rec) = render(&cloud, &v, &f, &cam, &Background::default()).unwrap();
    assert!(render_backward(&cloud, &v, &f, &rec, &RenderOutput::zeros(23, 24)).is_err());
}

/// Loss `⟨render, g⟩` as a function of one flattened parameter class.
pub fn check_render_gradients(seed: u64) -> Vec<(&'static str, f64)> {
    let (v, f, cloud) = random_mesh_scene(seed, 2, 0.06);
    let cam = front_camera(12, 12, 110.0);
    let bg = Background::new(Vec3::new(0.2, 0.5, 0.8));
    let g = random_grads(12, 12, seed + 77);
    let (_, rec) = render(&cloud, &v, &f, &cam, &bg).unwrap();
    let (cg, vg) = render_backward(&cloud, &v, &f, &rec, &g).unwrap();
    let loss = |c: &GaussianCloud<f64>, vv: &[Vec3<f64>]| dot_output(&render(c, vv, &f, &cam, &bg).unwrap().0, &g);

    let flat3 = |x: &[Vec3<f64>]| x.iter().flat_map(|p| p.to_array()).collect::<Vec<f64>>();
    let unflat3 = |d: &[f64]| d.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect::<Vec<_>>();
    let mut out = Vec::new();
    let h = 1e-5;

    let r = grad_check(
        |d| loss(&GaussianCloud { local_position: unflat3(d), ..cloud.clone() }, &v),
        &flat3(&cloud.local_position),
        &flat3(&cg.local_position),
        h,
    )
    .unwrap();
    out.push(("position", r.max_rel_error));

    let fq: Vec<f64> = cloud.local_rotation.iter().flatten().copied().collect();
    let gq: Vec<f64> = cg.local_rotation.iter().flatten().copied().collect();
    let r = grad_check(
        |d| {
            let q = d.chunks(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
            loss(&GaussianCloud { local_rotation: q, ..cloud.clone() }, &v)
        },
        &fq,
        &gq,
        h,
    )
    .unwrap();
    out.push(("rotation", r.max_rel_error));

    let r = grad_check(
        |d| loss(&GaussianCloud { local_log_scale: unflat3(d), ..cloud.clone() }, &v),
        &flat3(&cloud.local_log_scale),
        &flat3(&cg.local_log_scale),
        h,
    )
    .unwrap();
    out.push(("scale", r.max_rel_error));

    let r = grad_check(
        |d| loss(&GaussianCloud { opacity_logit: d.to_vec(), ..cloud.clone() }, &v),
        &cloud.opacity_logit,
        &cg.opacity_logit,
        h,
    )
    .unwrap();
    out.push(("opacity", r.max_rel_error));

    let r = grad_check(
        |d| loss(&GaussianCloud { color_logit: unflat3(d), ..cloud.clone() }, &v),
        &flat3(&cloud.color_logit),
        &flat3(&cg.color_logit),
        h,
    )
    .unwrap();
    out.push(("color", r.max_rel_error));

    let r = grad_check(|d| loss(&cloud, &unflat3(d)), &flat3(&v), &flat3(&vg), 1e-7).unwrap();
    out.push(("vertices", r.max_rel_error));
    out
}

#[test]
fn render_gradients_match_finite_differences() {
    for seed in 0..5 {
        for (name, err) in check_render_gradients(seed) {
            assert!(err < 1e-3, "seed {seed} {name}: {err}");
        }
    }
}

#[test]
fn world_backward_rejects_wrong_size() {
    let world = random_world(1, 3);
    let cam = front_camera(16, 16, 80.0);
    let (_, rec) = render_world(&world, &cam, &Background::default());
    assert!(render_world_backward(&world, &rec, &RenderOutput::zeros(16, 15)).is_err());
}

