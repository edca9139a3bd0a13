//! Tile-binned front-to-back compositing and its exact reverse pass.
//!
//! Each pixel composites the splats of its tile in global (depth, index)
//! order. Splats are binned to every tile touched by the bounding box of
//! their `d² ≤ 9` ellipse, which contains every pixel with a nonzero weight,
//! so binning never changes the result.

use rayon::prelude::*;

use crate::linalg::Vec3;
use crate::real::{lit, Real};

pub const TILE_SIZE: usize = 16;
/// Compositing stops once transmittance drops below this value.
pub const TRANSMITTANCE_EPS: f64 = 1e-4;
/// Squared Mahalanobis radius of the kernel support.
pub const KERNEL_CUTOFF_SQ: f64 = 9.0;

/// Number of composited feature channels besides alpha: rgb then normal.
pub const FEATURES: usize = 6;

/// Truncated Gaussian kernel, shifted so it reaches zero continuously at the
/// support boundary and rescaled to 1 at the center.
#[inline]
pub fn kernel<T: Real>(d2: T) -> T {
    if d2 >= lit(KERNEL_CUTOFF_SQ) {
        return T::zero();
    }
    let floor = lit::<T>((-0.5 * KERNEL_CUTOFF_SQ).exp());
    ((d2 * lit(-0.5)).exp() - floor) / (T::one() - floor)
}

/// Derivative of [`kernel`] with respect to `d²` inside the support.
#[inline]
pub fn kernel_derivative<T: Real>(d2: T) -> T {
    let floor = lit::<T>((-0.5 * KERNEL_CUTOFF_SQ).exp());
    (d2 * lit(-0.5)).exp() * lit(-0.5) / (T::one() - floor)
}

/// Screen-space Gaussian ready for compositing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat<T> {
    /// Index into the world Gaussian arrays.
    pub gaussian: usize,
    pub mean: [T; 2],
    pub cov: [T; 3],
    pub conic: [T; 3],
    pub depth: T,
    /// Activated opacity in (0, 1).
    pub opacity: T,
    pub features: [T; FEATURES],
    /// Inclusive pixel range `[col0, col1, row0, row1]`; `None` if offscreen.
    pub pixels: Option<[usize; 4]>,
}

impl<T: Real> Splat<T> {
    /// Squared Mahalanobis distance and offset from the center of pixel
    /// `(row, col)`.
    #[inline]
    pub fn distance(&self, row: usize, col: usize) -> (T, T, T) {
        let half = lit::<T>(0.5);
        let dx = T::from_usize(col).unwrap() + half - self.mean[0];
        let dy = T::from_usize(row).unwrap() + half - self.mean[1];
        let [a, b, c] = self.conic;
        (a * dx * dx + lit::<T>(2.0) * b * dx * dy + c * dy * dy, dx, dy)
    }
}

/// Inclusive pixel range covered by the `d² ≤ 9` bounding box.
pub fn pixel_bounds<T: Real>(mean: [T; 2], cov: &[T; 3], width: usize, height: usize) -> Option<[usize; 4]> {
    let r = KERNEL_CUTOFF_SQ.sqrt();
    let hx = r * cov[0].to_f64_lossy().sqrt();
    let hy = r * cov[2].to_f64_lossy().sqrt();
    let (u, v) = (mean[0].to_f64_lossy(), mean[1].to_f64_lossy());
    let lo = |c: f64, h: f64| (c - h - 0.5).ceil();
    let hi = |c: f64, h: f64| (c + h - 0.5).floor();
    let (c0, c1) = (lo(u, hx).max(0.0), hi(u, hx).min(width as f64 - 1.0));
    let (r0, r1) = (lo(v, hy).max(0.0), hi(v, hy).min(height as f64 - 1.0));
    if !(c0 <= c1 && r0 <= r1) {
        return None;
    }
    Some([c0 as usize, c1 as usize, r0 as usize, r1 as usize])
}

/// Composited images. Layout is row-major, channels last.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<T> {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<T>,
    pub normal: Vec<T>,
    pub alpha: Vec<T>,
}

impl<T: Real> RenderOutput<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self { width, height, rgb: vec![T::zero(); 3 * n], normal: vec![T::zero(); 3 * n], alpha: vec![T::zero(); n] }
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn rgb_at(&self, row: usize, col: usize) -> Vec3<T> {
        let k = 3 * (row * self.width + col);
        Vec3::new(self.rgb[k], self.rgb[k + 1], self.rgb[k + 2])
    }

    pub fn normal_at(&self, row: usize, col: usize) -> Vec3<T> {
        let k = 3 * (row * self.width + col);
        Vec3::new(self.normal[k], self.normal[k + 1], self.normal[k + 2])
    }

    pub fn alpha_at(&self, row: usize, col: usize) -> T {
        self.alpha[row * self.width + col]
    }
}

/// Gradients on a splat's screen-space parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatGrad<T> {
    pub mean: [T; 2],
    pub conic: [T; 3],
    pub opacity: T,
    pub features: [T; FEATURES],
}

impl<T: Real> SplatGrad<T> {
    fn add(&mut self, o: &Self) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
        }
        self.opacity += o.opacity;
        for k in 0..FEATURES {
            self.features[k] += o.features[k];
        }
    }
}

/// Everything the reverse pass needs from a forward call.
#[derive(Clone, Debug)]
pub struct RasterState<T> {
    pub width: usize,
    pub height: usize,
    /// Splats in compositing order.
    pub splats: Vec<Splat<T>>,
    /// Per tile, indices into `splats` in compositing order.
    pub tiles: Vec<Vec<u32>>,
    /// Per pixel, number of tile-list entries visited before termination.
    pub visited: Vec<u32>,
    pub background: [T; FEATURES],
}

impl<T: Real> RasterState<T> {
    pub fn tiles_x(&self) -> usize {
        self.width.div_ceil(TILE_SIZE)
    }
}

fn tile_pixels(width: usize, height: usize, tiles_x: usize, tile: usize) -> (usize, usize, usize, usize) {
    let (tx, ty) = (tile % tiles_x, tile / tiles_x);
    let c0 = tx * TILE_SIZE;
    let r0 = ty * TILE_SIZE;
    (r0, (r0 + TILE_SIZE).min(height), c0, (c0 + TILE_SIZE).min(width))
}

/// Sort splats by `(depth, gaussian)` and bin them to tiles.
pub fn bin_splats<T: Real>(mut splats: Vec<Splat<T>>, width: usize, height: usize) -> (Vec<Splat<T>>, Vec<Vec<u32>>) {
    splats.sort_by(|a, b| {
        a.depth.to_f64_lossy().total_cmp(&b.depth.to_f64_lossy()).then(a.gaussian.cmp(&b.gaussian))
    });
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (i, s) in splats.iter().enumerate() {
        let Some([c0, c1, r0, r1]) = s.pixels else { continue };
        for ty in r0 / TILE_SIZE..=r1 / TILE_SIZE {
            for tx in c0 / TILE_SIZE..=c1 / TILE_SIZE {
                tiles[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    (splats, tiles)
}

struct TileImage<T> {
    color: Vec<T>,
    alpha: Vec<T>,
    visited: Vec<u32>,
}

/// Composite the splats into images.
pub fn rasterize<T: Real>(
    splats: Vec<Splat<T>>,
    width: usize,
    height: usize,
    background: [T; FEATURES],
) -> (RenderOutput<T>, RasterState<T>) {
    let (splats, tiles) = bin_splats(splats, width, height);
    let tiles_x = width.div_ceil(TILE_SIZE);
    let eps = lit::<T>(TRANSMITTANCE_EPS);
    let per_tile: Vec<TileImage<T>> = tiles
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let (r0, r1, c0, c1) = tile_pixels(width, height, tiles_x, t);
            let n = (r1 - r0) * (c1 - c0);
            let mut img = TileImage { color: Vec::with_capacity(n * FEATURES), alpha: Vec::with_capacity(n), visited: Vec::with_capacity(n) };
            for row in r0..r1 {
                for col in c0..c1 {
                    let mut trans = T::one();
                    let mut acc = [T::zero(); FEATURES];
                    let mut visited = 0u32;
                    for &si in list {
                        if trans < eps {
                            break;
                        }
                        visited += 1;
                        let s = &splats[si as usize];
                        let (d2, _, _) = s.distance(row, col);
                        if d2 >= lit(KERNEL_CUTOFF_SQ) {
                            continue;
                        }
                        let a = s.opacity * kernel(d2);
                        let w = a * trans;
                        for k in 0..FEATURES {
                            acc[k] += w * s.features[k];
                        }
                        trans *= T::one() - a;
                    }
                    for k in 0..FEATURES {
                        img.color.push(acc[k] + trans * background[k]);
                    }
                    img.alpha.push(T::one() - trans);
                    img.visited.push(visited);
                }
            }
            img
        })
        .collect();

    let mut out = RenderOutput::zeros(width, height);
    let mut visited = vec![0u32; width * height];
    for (t, img) in per_tile.iter().enumerate() {
        let (r0, r1, c0, c1) = tile_pixels(width, height, tiles_x, t);
        let mut k = 0;
        for row in r0..r1 {
            for col in c0..c1 {
                let p = row * width + col;
                for c in 0..3 {
                    out.rgb[3 * p + c] = img.color[FEATURES * k + c];
                    out.normal[3 * p + c] = img.color[FEATURES * k + 3 + c];
                }
                out.alpha[p] = img.alpha[k];
                visited[p] = img.visited[k];
                k += 1;
            }
        }
    }
    (out, RasterState { width, height, splats, tiles, visited, background })
}

struct Contribution<T> {
    splat: usize,
    alpha: T,
    trans: T,
    d2: T,
    dx: T,
    dy: T,
}

/// Exact gradients of the composited images with respect to every splat,
/// indexed like `state.splats`. Per-tile partial sums are reduced in tile
/// order.
pub fn rasterize_backward<T: Real>(state: &RasterState<T>, grad: &RenderOutput<T>) -> Vec<SplatGrad<T>> {
    let (width, height) = (state.width, state.height);
    let tiles_x = state.tiles_x();
    let splats = &state.splats;
    let partials: Vec<Vec<SplatGrad<T>>> = state
        .tiles
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let mut acc = vec![SplatGrad::default(); list.len()];
            if list.is_empty() {
                return acc;
            }
            let (r0, r1, c0, c1) = tile_pixels(width, height, tiles_x, t);
            let mut contrib: Vec<Contribution<T>> = Vec::new();
            for row in r0..r1 {
                for col in c0..c1 {
                    let p = row * width + col;
                    let mut g = [T::zero(); FEATURES + 1];
                    for c in 0..3 {
                        g[c] = grad.rgb[3 * p + c];
                        g[3 + c] = grad.normal[3 * p + c];
                    }
                    g[FEATURES] = grad.alpha[p];
                    if g.iter().all(|x| *x == T::zero()) {
                        continue;
                    }
                    contrib.clear();
                    let mut trans = T::one();
                    for (pos, &si) in list[..state.visited[p] as usize].iter().enumerate() {
                        let s = &splats[si as usize];
                        let (d2, dx, dy) = s.distance(row, col);
                        if d2 >= lit(KERNEL_CUTOFF_SQ) {
                            continue;
                        }
                        let a = s.opacity * kernel(d2);
                        contrib.push(Contribution { splat: pos, alpha: a, trans, d2, dx, dy });
                        trans *= T::one() - a;
                    }
                    // composite of everything behind the current splat
                    let mut behind = [T::zero(); FEATURES + 1];
                    behind[..FEATURES].copy_from_slice(&state.background);
                    for c in contrib.iter().rev() {
                        let s = &splats[list[c.splat] as usize];
                        let mut f = [T::one(); FEATURES + 1];
                        f[..FEATURES].copy_from_slice(&s.features);
                        let mut g_alpha = T::zero();
                        let w = c.alpha * c.trans;
                        let slot = &mut acc[c.splat];
                        for k in 0..=FEATURES {
                            g_alpha += g[k] * c.trans * (f[k] - behind[k]);
                            if k < FEATURES {
                                slot.features[k] += g[k] * w;
                            }
                            behind[k] = c.alpha * f[k] + (T::one() - c.alpha) * behind[k];
                        }
                        slot.opacity += g_alpha * kernel(c.d2);
                        let g_d2 = g_alpha * s.opacity * kernel_derivative(c.d2);
                        let [ca, cb, cc] = s.conic;
                        let two = lit::<T>(2.0);
                        slot.conic[0] += g_d2 * c.dx * c.dx;
                        slot.conic[1] += g_d2 * two * c.dx * c.dy;
                        slot.conic[2] += g_d2 * c.dy * c.dy;
                        slot.mean[0] -= g_d2 * two * (ca * c.dx + cb * c.dy);
                        slot.mean[1] -= g_d2 * two * (cb * c.dx + cc * c.dy);
                    }
                }
            }
            acc
        })
        .collect();

    let mut out = vec![SplatGrad::default(); splats.len()];
    for (list, part) in state.tiles.iter().zip(&partials) {
        for (&si, g) in list.iter().zip(part) {
            out[si as usize].add(g);
        }
    }
    out
}
