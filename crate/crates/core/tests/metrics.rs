use headsplat::imagebuf::Image;
use headsplat::metrics::{masked_normal_error, psnr, ssim, ssim_with_grad, SSIM_C1, SSIM_C2};
use headsplat::MetricError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    width: usize,
    height: usize,
    channels: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    psnr: f64,
    ssim: f64,
}

#[derive(Deserialize)]
struct Fixtures {
    cases: Vec<Case>,
}

fn random_image(w: usize, h: usize, c: usize, rng: &mut ChaCha8Rng) -> Image<f64> {
    Image::from_data(w, h, c, (0..w * h * c).map(|_| rng.random::<f64>()).collect())
}

/// Direct 2D-window SSIM without separable filtering.
fn scalar_ssim(a: &Image<f64>, b: &Image<f64>) -> f64 {
    let r = 5i64;
    let mut win = vec![0.0; 121];
    for i in -r..=r {
        for j in -r..=r {
            win[((i + r) * 11 + j + r) as usize] = (-((i * i + j * j) as f64) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|w| *w /= s);
    let mut total = 0.0;
    let mut n = 0;
    for ch in 0..a.channels {
        for i in 0..=a.height - 11 {
            for j in 0..=a.width - 11 {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for di in 0..11 {
                    for dj in 0..11 {
                        let w = win[di * 11 + dj];
                        let x = a.at(i + di, j + dj, ch);
                        let y = b.at(i + di, j + dj, ch);
                        mx += w * x;
                        my += w * y;
                        xx += w * x * x;
                        yy += w * y * y;
                        xy += w * x * y;
                    }
                }
                let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                total += (2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2)
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                n += 1;
            }
        }
    }
    total / n as f64
}

#[test]
fn frozen_fixtures_match_reference_implementation() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/metrics_fixtures.json")).unwrap();
    let fx: Fixtures = serde_json::from_str(&text).unwrap();
    assert!(!fx.cases.is_empty());
    for c in &fx.cases {
        let a = Image::from_data(c.width, c.height, c.channels, c.a.clone());
        let b = Image::from_data(c.width, c.height, c.channels, c.b.clone());
        assert!((psnr(&a, &b).unwrap() - c.psnr).abs() < 1e-9);
        assert!((ssim(&a, &b).unwrap() - c.ssim).abs() < 1e-9, "{} vs {}", ssim(&a, &b).unwrap(), c.ssim);
    }
}

#[test]
fn ssim_matches_scalar_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let a = random_image(16, 16, 3, &mut rng);
        let b = random_image(16, 16, 3, &mut rng);
        assert!((ssim(&a, &b).unwrap() - scalar_ssim(&a, &b)).abs() < 1e-6);
    }
}

#[test]
fn ssim_rejects_images_smaller_than_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random_image(8, 8, 3, &mut rng);
    assert!(matches!(ssim(&a, &a), Err(MetricError::TooSmall(8, 8, 11))));
}

#[test]
fn metrics_invariant_under_channel_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_image(14, 13, 3, &mut rng);
    let b = random_image(14, 13, 3, &mut rng);
    let m = Image::from_data(14, 13, 1, (0..14 * 13).map(|_| rng.random::<f64>()).collect());
    let p = [2, 0, 1];
    let (ap, bp) = (a.permute_channels(&p), b.permute_channels(&p));
    assert!((psnr(&a, &b).unwrap() - psnr(&ap, &bp).unwrap()).abs() < 1e-12);
    assert!((ssim(&a, &b).unwrap() - ssim(&ap, &bp).unwrap()).abs() < 1e-12);
    // normal error compares vectors, so permuting both consistently preserves it
    let e0 = masked_normal_error(&a, &b, &m).unwrap().unwrap();
    let e1 = masked_normal_error(&ap, &bp, &m).unwrap().unwrap();
    assert!((e0 - e1).abs() < 1e-9);
}

#[test]
fn normal_error_matches_scalar_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let unit = |rng: &mut ChaCha8Rng| {
        let v: [f64; 3] = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v.map(|x| x / n)
    };
    let (w, h) = (9, 7);
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut m = Vec::new();
    let mut expect = 0.0;
    let mut count = 0;
    for _ in 0..w * h {
        let (x, y) = (unit(&mut rng), unit(&mut rng));
        let mask: f64 = rng.random();
        if mask > 0.5 {
            let d: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
            expect += d.clamp(-1.0, 1.0).acos() * 180.0 / std::f64::consts::PI;
            count += 1;
        }
        a.extend(x);
        b.extend(y);
        m.push(mask);
    }
    let got = masked_normal_error(&Image::from_data(w, h, 3, a), &Image::from_data(w, h, 3, b), &Image::from_data(w, h, 1, m))
        .unwrap()
        .unwrap();
    assert!((got - expect / count as f64).abs() < 1e-6);
}

#[test]
fn ssim_gradient_is_zero_at_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_image(12, 12, 1, &mut rng);
    let (s, g) = ssim_with_grad(&a, &a, true).unwrap();
    assert!((s - 1.0).abs() < 1e-12);
    assert!(g.unwrap().data.iter().all(|v| v.abs() < 1e-9));
}
