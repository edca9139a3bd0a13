use headsplat::data::{
    check_bundle, draw_sample, generate_oracle_scene, load_bundle, load_ground_truth, sample_file, sampler_probabilities,
    save_bundle, SynthConfig,
};
use headsplat::head::ToyModelOptions;
use headsplat::imagebuf::Image;
use headsplat::io::png::{decode_normal16, encode_normal16, read_normal16, write_normal16};
use headsplat::DatasetError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> SynthConfig {
    SynthConfig {
        views: 2,
        frames: 3,
        width: 40,
        height: 32,
        model: ToyModelOptions { seed: 1, target_vertices: 300, num_shape: 3, num_expr: 4 },
        latent_dim: 5,
        remesh_resolution: 10,
        ..Default::default()
    }
}

#[test]
fn bundle_round_trip_is_exact() {
    let (ds, gt) = generate_oracle_scene(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_bundle(dir.path(), &ds, Some(&gt)).unwrap();
    let back = load_bundle(dir.path()).unwrap();
    assert_eq!(back, ds);
    assert_eq!(load_ground_truth(dir.path()).unwrap(), gt);
}

#[test]
fn missing_modality_is_named() {
    let (ds, _) = generate_oracle_scene(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_bundle(dir.path(), &ds, None).unwrap();
    std::fs::remove_file(dir.path().join(sample_file("normal", 1, 2))).unwrap();
    match load_bundle(dir.path()) {
        Err(DatasetError::MissingModality { modality, view, frame }) => assert_eq!((modality, view, frame), ("normal", 1, 2)),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn tampered_file_fails_hash_check() {
    let (ds, _) = generate_oracle_scene(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_bundle(dir.path(), &ds, None).unwrap();
    check_bundle(dir.path()).unwrap();
    let p = dir.path().join("tracks.json");
    let mut bytes = std::fs::read(&p).unwrap();
    bytes.push(b'\n');
    std::fs::write(&p, bytes).unwrap();
    assert!(matches!(load_bundle(dir.path()), Err(DatasetError::Hash(n)) if n == "tracks.json"));
}

#[test]
fn bundle_without_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_bundle(dir.path()), Err(DatasetError::Inconsistent(_))));
}

#[test]
fn sampler_frequencies_match_probabilities() {
    let sets = [(1.0, 100), (2.0, 50), (0.5, 400), (0.0, 1000), (3.0, 20)];
    let w = sampler_probabilities(&sets).unwrap();
    let total: f64 = sets.iter().map(|(p, n)| p * *n as f64).sum();
    let mut counts = [0usize; 5];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 100_000;
    for _ in 0..n {
        counts[draw_sample(&w, &mut rng)] += 1;
    }
    assert_eq!(counts[3], 0);
    for (i, (p, size)) in sets.iter().enumerate() {
        let want = p * *size as f64 / total;
        assert!((w.probabilities[i] - want).abs() < 1e-15);
        assert!((counts[i] as f64 / n as f64 - want).abs() < 0.01, "{i}: {counts:?}");
    }
}

#[test]
fn normal_codec_sweep() {
    for v in 0..=u16::MAX {
        assert_eq!(encode_normal16(decode_normal16(v)), v);
    }
    let half_step = 1.0 / 65535.0;
    for i in 0..=200_000 {
        let n = -1.0 + 2.0 * i as f64 / 200_000.0;
        assert!((decode_normal16(encode_normal16(n)) - n).abs() <= half_step * (1.0 + 1e-9));
    }
    let w = 37;
    let data: Vec<f64> = (0..w * 3).map(|i| (i as f64 * 0.731).sin()).collect();
    let img = Image::from_data(w, 1, 3, data.clone());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("n.png");
    write_normal16(&p, &img).unwrap();
    let back: Image<f64> = read_normal16(&p).unwrap();
    for (a, b) in back.data.iter().zip(&data) {
        assert!((a - b).abs() <= half_step * (1.0 + 1e-9));
    }
}
