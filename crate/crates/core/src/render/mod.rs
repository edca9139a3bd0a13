//! Differentiable splatting of world Gaussians into rgb, normal and alpha
//! images.

mod camera;
mod project;
mod raster;

pub use camera::Camera;
pub use project::{conic, conic_backward, gaussian_world_normal, project_backward, project_gaussian, Projection, COV_DILATION};
pub use raster::{
    bin_splats, kernel, kernel_derivative, pixel_bounds, rasterize, rasterize_backward, RasterState, RenderOutput,
    Splat, SplatGrad, FEATURES, KERNEL_CUTOFF_SQ, TILE_SIZE, TRANSMITTANCE_EPS,
};

use rayon::prelude::*;

use crate::cloud::{promote_backward, promote_to_world, CloudGrad, GaussianCloud, PromoteCache, WorldGaussians, WorldGrad};
use crate::error::{GeometryError, RenderError};
use crate::linalg::Vec3;
use crate::real::{sigmoid, Real};

/// Values composited where no Gaussian remains.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Background<T> {
    pub rgb: Vec3<T>,
    pub normal: Vec3<T>,
}

impl<T: Real> Background<T> {
    pub fn new(rgb: Vec3<T>) -> Self {
        Self { rgb, normal: Vec3::zero() }
    }

    fn features(&self) -> [T; FEATURES] {
        [self.rgb.x, self.rgb.y, self.rgb.z, self.normal.x, self.normal.y, self.normal.z]
    }
}

impl<T: Real> Default for Background<T> {
    fn default() -> Self {
        Self::new(Vec3::zero())
    }
}

/// Upstream gradients share the layout of the images they differentiate.
pub type RenderGrads<T> = RenderOutput<T>;

/// Forward state of [`render_world`].
#[derive(Clone, Debug)]
pub struct WorldRecord<T> {
    pub camera: Camera,
    pub raster: RasterState<T>,
    /// Per splat (in compositing order): rotation column used as the normal
    /// and its sign.
    normal_axis: Vec<(usize, T)>,
}

impl<T: Real> WorldRecord<T> {
    /// World-Gaussian indices that passed projection, in compositing order.
    pub fn visible(&self) -> impl Iterator<Item = usize> + '_ {
        self.raster.splats.iter().map(|s| s.gaussian)
    }
}

/// Project every active Gaussian into a splat.
pub fn make_splats<T: Real>(world: &WorldGaussians<T>, camera: &Camera) -> (Vec<Splat<T>>, Vec<(usize, T)>) {
    let center = camera.center::<T>();
    let out: Vec<Option<(Splat<T>, (usize, T))>> = (0..world.len())
        .into_par_iter()
        .map(|i| {
            if !world.active[i] {
                return None;
            }
            let p = project_gaussian(world.position[i], &world.rotation[i], world.scale[i], camera)?;
            let (n, axis, sign) = gaussian_world_normal(&world.rotation[i], world.scale[i], center, world.position[i]);
            let rgb = world.color_logit[i].map(sigmoid);
            let splat = Splat {
                gaussian: i,
                mean: p.mean,
                cov: p.cov,
                conic: conic(&p.cov),
                depth: p.depth,
                opacity: sigmoid(world.opacity_logit[i]),
                features: [rgb.x, rgb.y, rgb.z, n.x, n.y, n.z],
                pixels: pixel_bounds(p.mean, &p.cov, camera.width, camera.height),
            };
            Some((splat, (axis, sign)))
        })
        .collect();
    out.into_iter().flatten().unzip()
}

/// Render world-space Gaussians.
pub fn render_world<T: Real>(
    world: &WorldGaussians<T>,
    camera: &Camera,
    background: &Background<T>,
) -> (RenderOutput<T>, WorldRecord<T>) {
    let (splats, axes) = make_splats(world, camera);
    // rasterize reorders splats; carry the axis alongside via the index
    let mut axis_of = vec![(0usize, T::one()); world.len()];
    for (s, a) in splats.iter().zip(axes) {
        axis_of[s.gaussian] = a;
    }
    let (out, raster) = rasterize(splats, camera.width, camera.height, background.features());
    let normal_axis = raster.splats.iter().map(|s| axis_of[s.gaussian]).collect();
    (out, WorldRecord { camera: camera.clone(), raster, normal_axis })
}

/// Reverse pass of [`render_world`].
pub fn render_world_backward<T: Real>(
    world: &WorldGaussians<T>,
    record: &WorldRecord<T>,
    grad: &RenderGrads<T>,
) -> Result<WorldGrad<T>, RenderError> {
    let (w, h) = (record.raster.width, record.raster.height);
    let n = w * h;
    if grad.width != w || grad.height != h || grad.rgb.len() != 3 * n || grad.normal.len() != 3 * n || grad.alpha.len() != n {
        return Err(RenderError::Size { expected: n, got: grad.alpha.len() });
    }
    let sg = rasterize_backward(&record.raster, grad);
    let camera = &record.camera;
    let per: Vec<_> = record
        .raster
        .splats
        .par_iter()
        .zip(sg.par_iter())
        .zip(record.normal_axis.par_iter())
        .map(|((s, g), &(axis, sign))| {
            let i = s.gaussian;
            let g_cov = conic_backward(&s.cov, &g.conic);
            let (gp, mut gr, gs) = project_backward(world.position[i], &world.rotation[i], world.scale[i], camera, g.mean, g_cov);
            for r in 0..3 {
                gr.m[r][axis] += sign * g.features[3 + r];
            }
            let go = g.opacity * s.opacity * (T::one() - s.opacity);
            let mut gc = Vec3::zero();
            for k in 0..3 {
                let c = s.features[k];
                gc[k] = g.features[k] * c * (T::one() - c);
            }
            (i, gp, gr, gs, go, gc)
        })
        .collect();
    let mut out = WorldGrad::zeros(world.len());
    for (i, gp, gr, gs, go, gc) in per {
        out.position[i] = gp;
        out.rotation[i] = gr;
        out.scale[i] = gs;
        out.opacity_logit[i] = go;
        out.color_logit[i] = gc;
    }
    Ok(out)
}

/// Forward state of [`render`].
#[derive(Clone, Debug)]
pub struct RenderRecord<T> {
    pub world: WorldGaussians<T>,
    pub promote: PromoteCache<T>,
    pub inner: WorldRecord<T>,
}

/// Promote the cloud onto the posed mesh and render it.
pub fn render<T: Real>(
    cloud: &GaussianCloud<T>,
    vertices: &[Vec3<T>],
    faces: &[[u32; 3]],
    camera: &Camera,
    background: &Background<T>,
) -> Result<(RenderOutput<T>, RenderRecord<T>), GeometryError> {
    let (world, promote) = promote_to_world(cloud, vertices, faces)?;
    let (out, inner) = render_world(&world, camera, background);
    Ok((out, RenderRecord { world, promote, inner }))
}

/// Reverse pass of [`render`]: cloud-parameter and posed-vertex gradients.
pub fn render_backward<T: Real>(
    cloud: &GaussianCloud<T>,
    vertices: &[Vec3<T>],
    faces: &[[u32; 3]],
    record: &RenderRecord<T>,
    grad: &RenderGrads<T>,
) -> Result<(CloudGrad<T>, Vec<Vec3<T>>), RenderError> {
    if record.world.len() != cloud.len() {
        return Err(RenderError::NoForward("record was produced for a different cloud"));
    }
    let wg = render_world_backward(&record.world, &record.inner, grad)?;
    Ok(promote_backward(cloud, vertices, faces, &record.promote, &wg))
}

/// Holds the most recent forward pass so gradients can be requested later.
#[derive(Debug, Default)]
pub struct SplatRenderer<T> {
    last: Option<RenderRecord<T>>,
}

impl<T: Real> SplatRenderer<T> {
    pub fn new() -> Self {
        Self { last: None }
    }

    pub fn forward(
        &mut self,
        cloud: &GaussianCloud<T>,
        vertices: &[Vec3<T>],
        faces: &[[u32; 3]],
        camera: &Camera,
        background: &Background<T>,
    ) -> Result<RenderOutput<T>, GeometryError> {
        let (out, rec) = render(cloud, vertices, faces, camera, background)?;
        self.last = Some(rec);
        Ok(out)
    }

    pub fn backward(
        &self,
        cloud: &GaussianCloud<T>,
        vertices: &[Vec3<T>],
        faces: &[[u32; 3]],
        grad: &RenderGrads<T>,
    ) -> Result<(CloudGrad<T>, Vec<Vec3<T>>), RenderError> {
        let rec = self.last.as_ref().ok_or(RenderError::NoForward("no forward pass recorded"))?;
        render_backward(cloud, vertices, faces, rec, grad)
    }
}
