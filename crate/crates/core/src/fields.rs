//! Expression-conditioned refinement fields: a per-vertex deformation field
//! over canonical positions and a per-Gaussian dynamics residual field.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{CloudGrad, GaussianCloud};
use crate::error::FieldError;
use crate::linalg::{quat_mul, quat_mul_backward, quat_normalize, quat_normalize_backward, Quat, Vec3};
use crate::real::{lit, sigmoid, Real};

/// Samples per parallel chunk; partial gradients are reduced in chunk order.
const CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Feedforward network with SiLU between layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrad<T> {
    pub weight: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

impl<T: Real> MlpGrad<T> {
    pub fn zeros(mlp: &Mlp<T>) -> Self {
        Self {
            weight: mlp.layers.iter().map(|l| vec![T::zero(); l.weight.len()]).collect(),
            bias: mlp.layers.iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
        }
    }

    fn add(&mut self, o: &Self) {
        for (a, b) in self.weight.iter_mut().zip(&o.weight).chain(self.bias.iter_mut().zip(&o.bias)) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }
}

#[inline]
fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
fn silu_derivative<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// Forward values of a batch, one pre-activation buffer per layer.
#[derive(Clone, Debug)]
pub struct MlpCache<T> {
    n: usize,
    inputs: Vec<T>,
    pre: Vec<Vec<T>>,
}

impl<T: Real> Mlp<T> {
    /// Uniform `±1/√fan_in` initialization; the last layer is zero when
    /// `zero_last` is set.
    pub fn new(sizes: &[usize], rng: &mut ChaCha8Rng, zero_last: bool) -> Self {
        let mut layers = Vec::new();
        for k in 0..sizes.len() - 1 {
            let (i, o) = (sizes[k], sizes[k + 1]);
            let last = k + 2 == sizes.len();
            let bound = 1.0 / (i as f64).sqrt();
            let mut draw = |n: usize| -> Vec<T> {
                (0..n).map(|_| if last && zero_last { T::zero() } else { lit(rng.random_range(-bound..bound)) }).collect()
            };
            let weight = draw(i * o);
            let bias = draw(o);
            layers.push(Dense { inputs: i, outputs: o, weight, bias });
        }
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn forward_one(&self, x: &[T], pre: &mut [Vec<T>], out: &mut [T]) {
        let mut act: Vec<T> = x.to_vec();
        for (k, l) in self.layers.iter().enumerate() {
            let z = &mut pre[k];
            for o in 0..l.outputs {
                let row = &l.weight[o * l.inputs..(o + 1) * l.inputs];
                let mut s = l.bias[o];
                for (w, a) in row.iter().zip(&act) {
                    s += *w * *a;
                }
                z[o] = s;
            }
            if k + 1 < self.layers.len() {
                act = z.iter().map(|v| silu(*v)).collect();
            } else {
                out.copy_from_slice(z);
            }
        }
    }

    /// Evaluate `n` inputs stored contiguously.
    pub fn forward_batch(&self, inputs: &[T], n: usize) -> (Vec<T>, MlpCache<T>) {
        let din = self.input_dim();
        let dout = self.output_dim();
        assert_eq!(inputs.len(), n * din, "mlp input length");
        let widths: Vec<usize> = self.layers.iter().map(|l| l.outputs).collect();
        let results: Vec<(Vec<T>, Vec<Vec<T>>)> = (0..n)
            .into_par_iter()
            .map(|s| {
                let mut pre: Vec<Vec<T>> = widths.iter().map(|w| vec![T::zero(); *w]).collect();
                let mut out = vec![T::zero(); dout];
                self.forward_one(&inputs[s * din..(s + 1) * din], &mut pre, &mut out);
                (out, pre)
            })
            .collect();
        let mut out = Vec::with_capacity(n * dout);
        let mut pre: Vec<Vec<T>> = widths.iter().map(|w| Vec::with_capacity(n * w)).collect();
        for (o, p) in results {
            out.extend(o);
            for (dst, src) in pre.iter_mut().zip(p) {
                dst.extend(src);
            }
        }
        (out, MlpCache { n, inputs: inputs.to_vec(), pre })
    }

    /// Parameter gradients and input gradients for upstream `grad_out`.
    pub fn backward_batch(&self, cache: &MlpCache<T>, grad_out: &[T]) -> (MlpGrad<T>, Vec<T>) {
        let n = cache.n;
        let din = self.input_dim();
        let nl = self.layers.len();
        let chunks: Vec<(MlpGrad<T>, Vec<T>)> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut g = MlpGrad::zeros(self);
                let mut gin = Vec::with_capacity(CHUNK * din);
                for s in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    let dout = self.output_dim();
                    let mut delta: Vec<T> = grad_out[s * dout..(s + 1) * dout].to_vec();
                    for k in (0..nl).rev() {
                        let l = &self.layers[k];
                        let input: Vec<T> = if k == 0 {
                            cache.inputs[s * din..(s + 1) * din].to_vec()
                        } else {
                            let w = self.layers[k - 1].outputs;
                            cache.pre[k - 1][s * w..(s + 1) * w].iter().map(|v| silu(*v)).collect()
                        };
                        let mut gx = vec![T::zero(); l.inputs];
                        for o in 0..l.outputs {
                            let d = delta[o];
                            if d == T::zero() {
                                continue;
                            }
                            g.bias[k][o] += d;
                            let row = &l.weight[o * l.inputs..(o + 1) * l.inputs];
                            let grow = &mut g.weight[k][o * l.inputs..(o + 1) * l.inputs];
                            for i in 0..l.inputs {
                                grow[i] += d * input[i];
                                gx[i] += d * row[i];
                            }
                        }
                        if k > 0 {
                            let w = self.layers[k - 1].outputs;
                            let pre = &cache.pre[k - 1][s * w..(s + 1) * w];
                            delta = gx.iter().zip(pre).map(|(g, z)| *g * silu_derivative(*z)).collect();
                        } else {
                            gin.extend(gx);
                        }
                    }
                }
                (g, gin)
            })
            .collect();
        let mut grad = MlpGrad::zeros(self);
        let mut gin = Vec::with_capacity(n * din);
        for (g, gi) in chunks {
            grad.add(&g);
            gin.extend(gi);
        }
        (grad, gin)
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias).copied()).collect()
    }

    pub fn unflatten(&mut self, p: &[T]) {
        let mut k = 0;
        for l in &mut self.layers {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = p[k];
                k += 1;
            }
        }
    }
}

impl<T: Real> MlpGrad<T> {
    pub fn flatten(&self) -> Vec<T> {
        self.weight.iter().zip(&self.bias).flat_map(|(w, b)| w.iter().chain(b).copied()).collect()
    }
}

/// Per-sequence normalization of expression latents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentStats {
    /// Per-dimension mean and standard deviation; near-constant dimensions get
    /// unit deviation.
    pub fn from_latents(latents: &[Vec<f64>]) -> Self {
        let d = latents.first().map_or(0, |l| l.len());
        let n = latents.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for l in latents {
            for (m, v) in mean.iter_mut().zip(l) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for l in latents {
            for ((s, v), m) in std.iter_mut().zip(l).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = std.into_iter().map(|v| if v.sqrt() > 1e-8 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, std }
    }

    pub fn normalize<T: Real>(&self, latent: &[f64]) -> Vec<T> {
        latent.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| lit((v - m) / s)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeformationConfig {
    pub hidden: usize,
    /// Canonical positions are multiplied by this before entering the
    /// network.
    pub position_scale: f64,
    pub initial_gain: f64,
}

impl Default for DeformationConfig {
    fn default() -> Self {
        Self { hidden: 64, position_scale: 10.0, initial_gain: 1e-3 }
    }
}

/// Maps (canonical position, latent) to a vertex offset in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField<T> {
    pub mlp: Mlp<T>,
    pub gain: T,
    pub position_scale: T,
    pub latent_dim: usize,
}

#[derive(Clone, Debug)]
pub struct DeformCache<T> {
    mlp: MlpCache<T>,
    raw: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeformGrad<T> {
    pub mlp: MlpGrad<T>,
    pub gain: T,
    pub latent: Vec<T>,
}

impl<T: Real> DeformationField<T> {
    pub fn new(latent_dim: usize, cfg: &DeformationConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            mlp: Mlp::new(&[3 + latent_dim, cfg.hidden, cfg.hidden, 3], &mut rng, true),
            gain: lit(cfg.initial_gain),
            position_scale: lit(cfg.position_scale),
            latent_dim,
        }
    }

    fn inputs(&self, positions: &[Vec3<T>], latent: &[T]) -> Result<Vec<T>, FieldError> {
        if latent.len() != self.latent_dim {
            return Err(FieldError::Dimension { what: "latent", expected: self.latent_dim, got: latent.len() });
        }
        let mut x = Vec::with_capacity(positions.len() * (3 + self.latent_dim));
        for p in positions {
            x.extend((*p * self.position_scale).to_array());
            x.extend_from_slice(latent);
        }
        Ok(x)
    }

    /// Offsets at each canonical position.
    pub fn deform(&self, positions: &[Vec3<T>], latent: &[T]) -> Result<(Vec<Vec3<T>>, DeformCache<T>), FieldError> {
        let x = self.inputs(positions, latent)?;
        let (raw, mlp) = self.mlp.forward_batch(&x, positions.len());
        let out = raw.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2]) * self.gain).collect();
        Ok((out, DeformCache { mlp, raw }))
    }

    pub fn deform_backward(&self, cache: &DeformCache<T>, grad: &[Vec3<T>]) -> DeformGrad<T> {
        let mut graw = Vec::with_capacity(grad.len() * 3);
        let mut ggain = T::zero();
        for (g, r) in grad.iter().zip(cache.raw.chunks(3)) {
            ggain += g.x * r[0] + g.y * r[1] + g.z * r[2];
            graw.extend((*g * self.gain).to_array());
        }
        let (mlp, gin) = self.mlp.backward_batch(&cache.mlp, &graw);
        let d = 3 + self.latent_dim;
        let mut latent = vec![T::zero(); self.latent_dim];
        for row in gin.chunks(d) {
            for (l, g) in latent.iter_mut().zip(&row[3..]) {
                *l += *g;
            }
        }
        DeformGrad { mlp, gain: ggain, latent }
    }
}

/// Per-Gaussian output layout of the dynamics field.
pub const RESIDUAL_DIM: usize = 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    pub hidden: usize,
    pub code_dim: usize,
    pub code_init_std: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { hidden: 32, code_dim: 16, code_init_std: 0.1 }
    }
}

/// Residuals for one Gaussian.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Residual<T> {
    pub position: Vec3<T>,
    /// Added to the identity quaternion, normalized, then composed on the
    /// right of the Gaussian's rotation.
    pub rotation: Quat<T>,
    pub log_scale: Vec3<T>,
    pub opacity: T,
    pub color: Vec3<T>,
}

impl<T: Real> Residual<T> {
    pub fn from_slice(r: &[T]) -> Self {
        Self {
            position: Vec3::new(r[0], r[1], r[2]),
            rotation: [r[3], r[4], r[5], r[6]],
            log_scale: Vec3::new(r[7], r[8], r[9]),
            opacity: r[10],
            color: Vec3::new(r[11], r[12], r[13]),
        }
    }

    pub fn to_array(&self) -> [T; RESIDUAL_DIM] {
        let (p, q, s, c) = (self.position, self.rotation, self.log_scale, self.color);
        [p.x, p.y, p.z, q[0], q[1], q[2], q[3], s.x, s.y, s.z, self.opacity, c.x, c.y, c.z]
    }
}

/// Maps (per-Gaussian code, latent) to attribute residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsField<T> {
    pub mlp: Mlp<T>,
    /// `num_gaussians × code_dim`.
    pub codes: Vec<T>,
    pub code_dim: usize,
    pub latent_dim: usize,
}

#[derive(Clone, Debug)]
pub struct DynamicsCache<T> {
    mlp: MlpCache<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsGrad<T> {
    pub mlp: MlpGrad<T>,
    pub codes: Vec<T>,
    pub latent: Vec<T>,
}

impl<T: Real> DynamicsField<T> {
    pub fn new(num_gaussians: usize, latent_dim: usize, cfg: &DynamicsConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = Mlp::new(&[cfg.code_dim + latent_dim, cfg.hidden, cfg.hidden, RESIDUAL_DIM], &mut rng, true);
        let normal = Normal::new(0.0, cfg.code_init_std).expect("finite code std");
        let codes = (0..num_gaussians * cfg.code_dim).map(|_| lit(normal.sample(&mut rng))).collect();
        Self { mlp, codes, code_dim: cfg.code_dim, latent_dim }
    }

    pub fn num_gaussians(&self) -> usize {
        self.codes.len() / self.code_dim.max(1)
    }

    pub fn retain_mask(&mut self, keep: &[bool]) {
        let d = self.code_dim;
        let mut out = Vec::with_capacity(self.codes.len());
        for (i, k) in keep.iter().enumerate() {
            if *k {
                out.extend_from_slice(&self.codes[i * d..(i + 1) * d]);
            }
        }
        self.codes = out;
    }

    pub fn residuals(&self, latent: &[T]) -> Result<(Vec<Residual<T>>, DynamicsCache<T>), FieldError> {
        if latent.len() != self.latent_dim {
            return Err(FieldError::Dimension { what: "latent", expected: self.latent_dim, got: latent.len() });
        }
        let n = self.num_gaussians();
        let mut x = Vec::with_capacity(n * (self.code_dim + self.latent_dim));
        for code in self.codes.chunks(self.code_dim) {
            x.extend_from_slice(code);
            x.extend_from_slice(latent);
        }
        let (raw, mlp) = self.mlp.forward_batch(&x, n);
        Ok((raw.chunks(RESIDUAL_DIM).map(Residual::from_slice).collect(), DynamicsCache { mlp }))
    }

    pub fn residuals_backward(&self, cache: &DynamicsCache<T>, grad: &[Residual<T>]) -> DynamicsGrad<T> {
        let flat: Vec<T> = grad.iter().flat_map(|r| r.to_array()).collect();
        let (mlp, gin) = self.mlp.backward_batch(&cache.mlp, &flat);
        let d = self.code_dim + self.latent_dim;
        let mut codes = Vec::with_capacity(self.codes.len());
        let mut latent = vec![T::zero(); self.latent_dim];
        for row in gin.chunks(d) {
            codes.extend_from_slice(&row[..self.code_dim]);
            for (l, g) in latent.iter_mut().zip(&row[self.code_dim..]) {
                *l += *g;
            }
        }
        DynamicsGrad { mlp, codes, latent }
    }
}

/// Apply residuals: additive on position, log-scale, opacity and color
/// logits; the rotation is composed with a normalized identity perturbation.
pub fn apply_residuals<T: Real>(cloud: &GaussianCloud<T>, res: &[Residual<T>]) -> GaussianCloud<T> {
    let mut out = cloud.clone();
    for (i, r) in res.iter().enumerate() {
        out.local_position[i] += r.position;
        out.local_log_scale[i] += r.log_scale;
        out.opacity_logit[i] += r.opacity;
        out.color_logit[i] += r.color;
        out.local_rotation[i] = quat_mul(&cloud.local_rotation[i], &quat_normalize(&perturbation(&r.rotation)));
    }
    out
}

#[inline]
fn perturbation<T: Real>(dq: &Quat<T>) -> Quat<T> {
    [T::one() + dq[0], dq[1], dq[2], dq[3]]
}

/// Backward of [`apply_residuals`]: returns gradients on the base cloud and
/// on the residuals.
pub fn apply_residuals_backward<T: Real>(
    cloud: &GaussianCloud<T>,
    res: &[Residual<T>],
    grad: &CloudGrad<T>,
) -> (CloudGrad<T>, Vec<Residual<T>>) {
    let mut base = grad.clone();
    let mut gres = Vec::with_capacity(res.len());
    for (i, r) in res.iter().enumerate() {
        let p = perturbation(&r.rotation);
        let u = quat_normalize(&p);
        let (gq, gu) = quat_mul_backward(&cloud.local_rotation[i], &u, &grad.local_rotation[i]);
        base.local_rotation[i] = gq;
        gres.push(Residual {
            position: grad.local_position[i],
            rotation: quat_normalize_backward(&p, &gu),
            log_scale: grad.local_log_scale[i],
            opacity: grad.opacity_logit[i],
            color: grad.color_logit[i],
        });
    }
    (base, gres)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::grad_check;

    #[test]
    fn fresh_fields_output_zero() {
        let f = DeformationField::<f64>::new(8, &DeformationConfig::default(), 1);
        let pos = vec![Vec3::new(0.01, 0.02, 0.03), Vec3::new(-0.05, 0.0, 0.07)];
        let (off, _) = f.deform(&pos, &[0.5; 8]).unwrap();
        assert!(off.iter().all(|o| *o == Vec3::zero()));
        let d = DynamicsField::<f64>::new(5, 8, &DynamicsConfig::default(), 2);
        let (r, _) = d.residuals(&[0.3; 8]).unwrap();
        assert!(r.iter().all(|x| *x == Residual::default()));
        assert!(matches!(d.residuals(&[0.0; 7]), Err(FieldError::Dimension { .. })));
    }

    #[test]
    fn zero_residuals_leave_cloud_bit_identical() {
        let mut c = GaussianCloud::<f64>::default();
        c.push(0, Vec3::new(0.1, -0.2, 0.3), [0.9, 0.1, -0.3, 0.2], Vec3::new(-1.0, -2.0, -0.5), 0.4, Vec3::new(0.1, 0.2, -0.3));
        let out = apply_residuals(&c, &[Residual::default()]);
        assert_eq!(out, c);
    }

    #[test]
    fn mlp_backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::<f64>::new(&[5, 7, 6, 4], &mut rng, false);
        let n = 70;
        let x: Vec<f64> = (0..n * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, cache) = mlp.forward_batch(&x, n);
        let (grad, gin) = mlp.backward_batch(&cache, &g);
        let loss = |m: &Mlp<f64>, x: &[f64]| m.forward_batch(x, n).0.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        let r = grad_check(
            |p| {
                let mut m = mlp.clone();
                m.unflatten(p);
                loss(&m, &x)
            },
            &mlp.flatten(),
            &grad.flatten(),
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        let r = grad_check(|xx| loss(&mlp, xx), &x, &gin, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
