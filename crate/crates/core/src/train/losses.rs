//! Training objectives. Every loss returns its value and the gradient with
//! respect to the rendered input.

use serde::{Deserialize, Serialize};

use crate::cloud::{CloudGrad, GaussianCloud};
use crate::error::MetricError;
use crate::fields::Residual;
use crate::imagebuf::Image;
use crate::linalg::Vec3;
use crate::metrics::ssim_with_grad;
use crate::real::{lit, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub rgb: f64,
    pub ssim: f64,
    pub normal: f64,
    pub position: f64,
    pub scale: f64,
    pub dynamics: f64,
    /// Local offsets beyond this norm (triangle units) are penalized.
    pub position_threshold: f64,
    /// Local activated scales beyond this value are penalized.
    pub scale_threshold: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { rgb: 0.8, ssim: 0.2, normal: 0.1, position: 0.01, scale: 1.0, dynamics: 1e-3, position_threshold: 1.0, scale_threshold: 0.6 }
    }
}

fn same_shape<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<(), MetricError> {
    if a.shape() != b.shape() {
        return Err(MetricError::Shape(a.shape(), b.shape()));
    }
    Ok(())
}

#[inline]
fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `weight · mean over pixels of Σ_c |n̂ − α·n|`.
pub fn normal_loss<T: Real>(
    rendered: &Image<T>,
    target: &Image<T>,
    mask: &Image<T>,
    weight: T,
) -> Result<(T, Image<T>), MetricError> {
    same_shape(rendered, target)?;
    if (mask.width, mask.height) != (rendered.width, rendered.height) {
        return Err(MetricError::Shape(rendered.shape(), mask.shape()));
    }
    let np = rendered.width * rendered.height;
    let scale = weight / T::from_usize(np.max(1)).unwrap();
    let mut grad = Image::new(rendered.width, rendered.height, rendered.channels);
    let mut sum = T::zero();
    for p in 0..np {
        let a = mask.data[p * mask.channels];
        for c in 0..rendered.channels {
            let k = p * rendered.channels + c;
            let d = rendered.data[k] - a * target.data[k];
            sum += d.abs();
            grad.data[k] = sign(d) * scale;
        }
    }
    Ok((sum * scale, grad))
}

/// Components of the photometric term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Photometric<T> {
    pub l1: T,
    pub ssim: T,
    pub total: T,
}

/// `w_rgb · L1 + w_ssim · (1 − SSIM)`, L1 averaged over all elements.
pub fn photometric_loss<T: Real>(
    rendered: &Image<T>,
    target: &Image<T>,
    w_rgb: T,
    w_ssim: T,
) -> Result<(Photometric<T>, Image<T>), MetricError> {
    same_shape(rendered, target)?;
    let n = T::from_usize(rendered.data.len().max(1)).unwrap();
    let mut grad = Image::new(rendered.width, rendered.height, rendered.channels);
    let mut l1 = T::zero();
    for (k, (a, b)) in rendered.data.iter().zip(&target.data).enumerate() {
        let d = *a - *b;
        l1 += d.abs();
        grad.data[k] = sign(d) * w_rgb / n;
    }
    l1 /= n;
    let (s, sg) = if w_ssim != T::zero() {
        let (s, g) = ssim_with_grad(rendered, target, true)?;
        (s, g)
    } else {
        (T::one(), None)
    };
    if let Some(sg) = sg {
        for (g, s) in grad.data.iter_mut().zip(&sg.data) {
            *g -= w_ssim * *s;
        }
    }
    let total = w_rgb * l1 + w_ssim * (T::one() - s);
    Ok((Photometric { l1, ssim: s, total }, grad))
}

/// `weight · mean_i max(‖μ_i‖ − threshold, 0)`; gradient added into `grad`.
pub fn position_regularizer<T: Real>(cloud: &GaussianCloud<T>, threshold: T, weight: T, grad: &mut CloudGrad<T>) -> T {
    let n = cloud.len();
    if n == 0 {
        return T::zero();
    }
    let scale = weight / T::from_usize(n).unwrap();
    let mut sum = T::zero();
    for (mu, g) in cloud.local_position.iter().zip(grad.local_position.iter_mut()) {
        let r = mu.norm();
        if r > threshold {
            sum += r - threshold;
            *g += *mu * (scale / r);
        }
    }
    sum * scale
}

/// `weight · mean over Gaussians and axes of max(exp(s) − threshold, 0)`.
pub fn scale_regularizer<T: Real>(cloud: &GaussianCloud<T>, threshold: T, weight: T, grad: &mut CloudGrad<T>) -> T {
    let n = cloud.len() * 3;
    if n == 0 {
        return T::zero();
    }
    let scale = weight / T::from_usize(n).unwrap();
    let mut sum = T::zero();
    for (s, g) in cloud.local_log_scale.iter().zip(grad.local_log_scale.iter_mut()) {
        for k in 0..3 {
            let e = s[k].exp();
            if e > threshold {
                sum += e - threshold;
                g[k] += e * scale;
            }
        }
    }
    sum * scale
}

/// `weight · (mean r² over residual entries + mean o² over offset entries)`;
/// empty inputs contribute nothing.
pub fn dynamics_regularizer<T: Real>(
    residuals: &[Residual<T>],
    offsets: &[Vec3<T>],
    weight: T,
    grad_res: &mut [Residual<T>],
    grad_off: &mut [Vec3<T>],
) -> T {
    let mut total = T::zero();
    let two = lit::<T>(2.0);
    if !residuals.is_empty() {
        let n = T::from_usize(residuals.len() * crate::fields::RESIDUAL_DIM).unwrap();
        let mut sum = T::zero();
        for (r, g) in residuals.iter().zip(grad_res.iter_mut()) {
            let a = r.to_array();
            let mut ga = g.to_array();
            for k in 0..a.len() {
                sum += a[k] * a[k];
                ga[k] += two * a[k] * weight / n;
            }
            *g = Residual::from_slice(&ga);
        }
        total += weight * sum / n;
    }
    if !offsets.is_empty() {
        let n = T::from_usize(offsets.len() * 3).unwrap();
        let mut sum = T::zero();
        for (o, g) in offsets.iter().zip(grad_off.iter_mut()) {
            sum += o.norm_squared();
            *g += *o * (two * weight / n);
        }
        total += weight * sum / n;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_img(w: usize, h: usize, c: usize, rng: &mut ChaCha8Rng) -> Image<f64> {
        Image::from_data(w, h, c, (0..w * h * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn normal_loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = rand_img(5, 4, 3, &mut rng);
        let a = rand_img(5, 4, 1, &mut rng).map(|v| v.abs());
        let mut an = n.clone();
        for p in 0..20 {
            for c in 0..3 {
                an.data[p * 3 + c] *= a.data[p];
            }
        }
        assert_eq!(normal_loss(&an, &n, &a, 0.1).unwrap().0, 0.0);
        let z = Image::new(5, 4, 3);
        assert_eq!(normal_loss(&z, &n, &Image::new(5, 4, 1), 0.1).unwrap().0, 0.0);
        let r = rand_img(5, 4, 3, &mut rng);
        let (v, _) = normal_loss(&r, &n, &a, 0.1).unwrap();
        let mut expect = 0.0;
        for p in 0..20 {
            for c in 0..3 {
                expect += (r.data[p * 3 + c] - a.data[p] * n.data[p * 3 + c]).abs();
            }
        }
        assert!((v - 0.1 * expect / 20.0).abs() < 1e-12);
        assert!(normal_loss(&r, &rand_img(4, 5, 3, &mut rng), &a, 0.1).is_err());
    }

    #[test]
    fn photometric_cases_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_img(14, 12, 3, &mut rng).map(|v| v.abs());
        assert_eq!(photometric_loss(&x, &x, 0.8, 0.2).unwrap().0.total, 0.0);
        assert!(photometric_loss(&x, &x.map(|v| 1.0 - v), 0.8, 0.2).unwrap().0.total > 0.0);
        let y = rand_img(14, 12, 3, &mut rng).map(|v| v.abs());
        let (_, g) = photometric_loss(&x, &y, 0.0, 1.0).unwrap();
        let r = grad_check(
            |d| photometric_loss(&Image::from_data(14, 12, 3, d.to_vec()), &y, 0.0, 1.0).unwrap().0.total,
            &x.data,
            &g.data,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6);
    }
}
