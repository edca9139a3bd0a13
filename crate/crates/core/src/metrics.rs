//! Image-quality metrics and the finite-difference gradient checker.

use crate::error::MetricError;
use crate::imagebuf::Image;
use crate::real::{lit, Real};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_shape<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<(), MetricError> {
    if a.shape() != b.shape() {
        return Err(MetricError::Shape(a.shape(), b.shape()));
    }
    Ok(())
}

/// Peak signal-to-noise ratio for unit dynamic range. Identical images give
/// `f64::INFINITY`.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64, MetricError> {
    check_shape(a, b)?;
    let mut sum = 0.0;
    for (i, (x, y)) in a.data.iter().zip(&b.data).enumerate() {
        let d = x.to_f64_lossy() - y.to_f64_lossy();
        if !d.is_finite() {
            return Err(MetricError::NonFinite(i));
        }
        sum += d * d;
    }
    let mse = sum / a.data.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (k, v) in w.iter_mut().enumerate() {
        let x = k as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode filtering of a `w×h` plane.
fn filter_valid<T: Real>(src: &[T], w: usize, h: usize, taps: &[T; SSIM_WINDOW]) -> Vec<T> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![T::zero(); ow * h];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for c in 0..ow {
            let mut s = T::zero();
            for k in 0..SSIM_WINDOW {
                s += taps[k] * row[c + k];
            }
            tmp[r * ow + c] = s;
        }
    }
    let mut out = vec![T::zero(); ow * oh];
    for r in 0..oh {
        for k in 0..SSIM_WINDOW {
            let t = taps[k];
            let src_row = &tmp[(r + k) * ow..(r + k + 1) * ow];
            let dst = &mut out[r * ow..(r + 1) * ow];
            for c in 0..ow {
                dst[c] += t * src_row[c];
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`].
fn filter_valid_adjoint<T: Real>(g: &[T], w: usize, h: usize, taps: &[T; SSIM_WINDOW]) -> Vec<T> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![T::zero(); ow * h];
    for r in 0..oh {
        for k in 0..SSIM_WINDOW {
            let t = taps[k];
            for c in 0..ow {
                tmp[(r + k) * ow + c] += t * g[r * ow + c];
            }
        }
    }
    let mut out = vec![T::zero(); w * h];
    for r in 0..h {
        for c in 0..ow {
            let v = tmp[r * ow + c];
            for k in 0..SSIM_WINDOW {
                out[r * w + c + k] += taps[k] * v;
            }
        }
    }
    out
}

/// Mean SSIM and, on request, its gradient with respect to `x`.
pub fn ssim_with_grad<T: Real>(x: &Image<T>, y: &Image<T>, want_grad: bool) -> Result<(T, Option<Image<T>>), MetricError> {
    check_shape(x, y)?;
    let (w, h, nc) = (x.width, x.height, x.channels);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall(w, h, SSIM_WINDOW));
    }
    let taps = ssim_taps().map(lit::<T>);
    let c1 = lit::<T>(SSIM_C1);
    let c2 = lit::<T>(SSIM_C2);
    let two = lit::<T>(2.0);
    let count = (w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW);
    let inv_n = T::one() / T::from_usize(count * nc).unwrap();
    let mut total = T::zero();
    let mut grad = want_grad.then(|| Image::new(w, h, nc));
    for ch in 0..nc {
        let xs: Vec<T> = x.data.iter().skip(ch).step_by(nc).copied().collect();
        let ys: Vec<T> = y.data.iter().skip(ch).step_by(nc).copied().collect();
        let prod = |a: &[T], b: &[T]| a.iter().zip(b).map(|(p, q)| *p * *q).collect::<Vec<T>>();
        let mx = filter_valid(&xs, w, h, &taps);
        let my = filter_valid(&ys, w, h, &taps);
        let sxx = filter_valid(&prod(&xs, &xs), w, h, &taps);
        let syy = filter_valid(&prod(&ys, &ys), w, h, &taps);
        let sxy = filter_valid(&prod(&xs, &ys), w, h, &taps);
        let mut g_mu = vec![T::zero(); count];
        let mut g_xx = vec![T::zero(); count];
        let mut g_xy = vec![T::zero(); count];
        for p in 0..count {
            let (ux, uy) = (mx[p], my[p]);
            let vx = sxx[p] - ux * ux;
            let vy = syy[p] - uy * uy;
            let cxy = sxy[p] - ux * uy;
            let a1 = two * ux * uy + c1;
            let a2 = two * cxy + c2;
            let b1 = ux * ux + uy * uy + c1;
            let b2 = vx + vy + c2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                g_mu[p] = s * (two * uy / a1 - two * uy / a2 - two * ux / b1 + two * ux / b2) * inv_n;
                g_xx[p] = -s / b2 * inv_n;
                g_xy[p] = s * two / a2 * inv_n;
            }
        }
        if let Some(gimg) = grad.as_mut() {
            let a = filter_valid_adjoint(&g_mu, w, h, &taps);
            let b = filter_valid_adjoint(&g_xx, w, h, &taps);
            let c = filter_valid_adjoint(&g_xy, w, h, &taps);
            for p in 0..w * h {
                gimg.data[p * nc + ch] = a[p] + two * xs[p] * b[p] + ys[p] * c[p];
            }
        }
    }
    Ok((total * inv_n, grad))
}

/// Mean SSIM over valid window positions and channels.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<T, MetricError> {
    Ok(ssim_with_grad(a, b, false)?.0)
}

/// Mean angle in degrees between `pred` and `target` over pixels with
/// `mask > 0.5`. Zero vectors count as orthogonal to everything. `None` for
/// an empty mask.
pub fn masked_normal_error<T: Real>(pred: &Image<T>, target: &Image<T>, mask: &Image<T>) -> Result<Option<f64>, MetricError> {
    check_shape(pred, target)?;
    if (mask.width, mask.height) != (pred.width, pred.height) {
        return Err(MetricError::Shape(pred.shape(), mask.shape()));
    }
    let unit = |img: &Image<T>, p: usize| {
        let v: Vec<f64> = (0..3).map(|c| img.data[p * img.channels + c].to_f64_lossy()).collect();
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n < 1e-12 {
            [0.0; 3]
        } else {
            [v[0] / n, v[1] / n, v[2] / n]
        }
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in 0..pred.width * pred.height {
        if mask.data[p * mask.channels].to_f64_lossy() <= 0.5 {
            continue;
        }
        let (a, b) = (unit(pred, p), unit(target, p));
        let d = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
        if !d.is_finite() {
            return Err(MetricError::NonFinite(p));
        }
        sum += d.acos().to_degrees();
        count += 1;
    }
    Ok((count > 0).then(|| sum / count as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max_i |analytic_i − numeric_i| / max(‖analytic‖∞, ‖numeric‖∞)`,
    /// the denominator guarded at 1e-12.
    pub max_rel_error: f64,
    /// Coordinate attaining the maximum.
    pub worst: usize,
    pub numeric: Vec<f64>,
}

/// Compare an analytic gradient with central differences of `f` at `x`.
///
/// Errors are normalized by the largest gradient magnitude of the block, so
/// components that are tiny relative to the rest are not judged by their own
/// (noise-dominated) scale. Check parameter groups separately.
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    step: f64,
) -> Result<GradCheck, MetricError> {
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let mut xs = x.to_vec();
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        xs[i] = x[i] + step;
        let fp = f(&xs);
        xs[i] = x[i] - step;
        let fm = f(&xs);
        xs[i] = x[i];
        let d = (fp - fm) / (2.0 * step);
        if !d.is_finite() {
            return Err(MetricError::NonFinite(i));
        }
        numeric.push(d);
    }
    if let Some(i) = analytic.iter().position(|a| !a.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let denom = inf(analytic).max(inf(&numeric)).max(1e-12);
    let (worst, err) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / denom)
        .enumerate()
        .fold((0, 0.0), |(bi, be), (i, e)| if e > be { (i, e) } else { (bi, be) });
    Ok(GradCheck { max_rel_error: err, worst, numeric })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, c: usize, seed: u64) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_data(w, h, c, (0..w * h * c).map(|_| rng.random::<f64>()).collect())
    }

    #[test]
    fn psnr_cases() {
        let a = Image::filled(4, 4, 3, 0.5f64);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = Image::filled(4, 4, 3, 0.6f64);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let (x, y) = (random_image(5, 4, 3, 1), random_image(5, 4, 3, 2));
        assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
        assert!(psnr(&x, &random_image(4, 5, 3, 2)).is_err());
    }

    #[test]
    fn ssim_cases() {
        let x = random_image(16, 16, 3, 3);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&x, &x.map(|v| 1.0 - v)).unwrap() < 1.0);
        assert!(matches!(ssim(&random_image(10, 16, 1, 0), &random_image(10, 16, 1, 1)), Err(MetricError::TooSmall(..))));
    }

    #[test]
    fn ssim_gradient_matches_fd() {
        let x = random_image(13, 12, 2, 4);
        let y = random_image(13, 12, 2, 5);
        let (_, g) = ssim_with_grad(&x, &y, true).unwrap();
        let g = g.unwrap();
        let r = grad_check(
            |d| ssim(&Image::from_data(13, 12, 2, d.to_vec()), &y).unwrap(),
            &x.data,
            &g.data,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn normal_error_cases() {
        let n = Image::from_data(2, 1, 3, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0f64]);
        let m = Image::filled(2, 1, 1, 1.0f64);
        assert_eq!(masked_normal_error(&n, &n, &m).unwrap(), Some(0.0));
        let o = Image::from_data(2, 1, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0f64]);
        assert!((masked_normal_error(&n, &o, &m).unwrap().unwrap() - 90.0).abs() < 1e-12);
        assert_eq!(masked_normal_error(&n, &o, &Image::filled(2, 1, 1, 0.0)).unwrap(), None);
    }

    #[test]
    fn grad_check_quadratic_and_fault_injection() {
        let x = [0.3, -1.2, 2.5, 0.7];
        let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let f = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        assert!(grad_check(f, &x, &g, 1e-4).unwrap().max_rel_error < 1e-8);
        let wrong: Vec<f64> = g.iter().map(|v| 2.0 * v).collect();
        let r = grad_check(f, &x, &wrong, 1e-4).unwrap();
        assert!((r.max_rel_error - 0.5).abs() < 1e-6);
        assert!(grad_check(|_| f64::NAN, &x, &g, 1e-4).is_err());
    }
}
