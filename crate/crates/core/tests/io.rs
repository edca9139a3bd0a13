use headsplat::cloud::WorldGaussians;
use headsplat::head::{make_toy_model, ToyModelOptions};
use headsplat::io::{model_to_container, parse_ply, ply_bytes, Container, Tensor, PLY_PROPERTIES, SH_C0};
use headsplat::linalg::{quat_normalize, quat_to_mat};
use headsplat::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * b.abs().max(1.0)
}

#[test]
fn ply_round_trip_within_single_precision() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let n = 200;
    let mut w = WorldGaussians::<f64> {
        position: Vec::new(),
        rotation: Vec::new(),
        scale: Vec::new(),
        opacity_logit: Vec::new(),
        color_logit: Vec::new(),
        active: Vec::new(),
    };
    for i in 0..n {
        let q = quat_normalize(&[r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]);
        w.position.push(Vec3::new(r.random_range(-0.2..0.2), r.random_range(-0.2..0.2), r.random_range(-0.2..0.2)));
        w.rotation.push(quat_to_mat(&q));
        w.scale.push(Vec3::new(r.random_range(1e-4..1e-2), r.random_range(1e-4..1e-2), r.random_range(1e-4..1e-2)));
        w.opacity_logit.push(r.random_range(-4.0..4.0));
        w.color_logit.push(Vec3::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)));
        w.active.push(i % 7 != 3);
    }
    let (props, recs) = parse_ply(&ply_bytes(&w)).unwrap();
    assert_eq!(props, PLY_PROPERTIES.map(String::from).to_vec());
    let active: Vec<usize> = (0..n).filter(|i| w.active[*i]).collect();
    assert_eq!(recs.len(), active.len());
    for (rec, &i) in recs.iter().zip(&active) {
        for k in 0..3 {
            assert!(close(rec.position[k] as f64, w.position[i][k]));
            assert!(close(rec.log_scale[k] as f64, w.scale[i][k].ln()));
            let rgb = 1.0 / (1.0 + (-w.color_logit[i][k]).exp());
            assert!(close(0.5 + SH_C0 * rec.f_dc[k] as f64, rgb));
        }
        assert!(close(rec.opacity_logit as f64, w.opacity_logit[i]));
        let qn = quat_normalize(&rec.rotation.map(|x| x as f64));
        assert!(quat_to_mat(&qn).max_abs_diff(&w.rotation[i]) <= 1e-6);
    }
}

#[test]
fn container_rewrite_is_byte_identical() {
    let m = make_toy_model::<f64>(&ToyModelOptions { seed: 3, target_vertices: 150, num_shape: 3, num_expr: 2 });
    let mut c = model_to_container(&m);
    c.push("extra/f32", Tensor { dims: vec![2, 3], data: headsplat::io::TensorData::F32(vec![0.5, -1.0, 3.25, f32::MIN_POSITIVE, 1e30, -0.0]) })
        .unwrap();
    c.push("extra/i32", Tensor::int(vec![4], vec![i32::MIN, -1, 0, i32::MAX])).unwrap();
    c.push("extra/empty", Tensor::real::<f64>(vec![0, 5], &[])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.gdhm"), dir.path().join("b.gdhm"));
    c.write(&a).unwrap();
    let back = Container::read(&a).unwrap();
    assert_eq!(back, c);
    back.write(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(*c.chunk_boundaries().last().unwrap(), std::fs::read(&a).unwrap().len());
}
