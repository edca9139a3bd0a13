//! Dense UV-grid remeshing of the head template with topology validation.
//!
//! Every texel center of a `resolution × resolution` grid is mapped to the
//! template triangle that contains it in UV space. Adjacent texel centers are
//! joined into two triangles per grid cell; a candidate triangle is kept only
//! when its three source faces coincide or are pairwise within `max_hops`
//! steps of each other in the face-adjacency graph. This rejects triangles
//! that bridge UV charts whose borders are far apart on the surface.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::RemeshError;
use crate::head::{canonical_expression_mesh, HeadModel};
use crate::linalg::Vec3;
use crate::real::{lit, Real};

/// Paper-faithful default for the hop bound.
pub const DEFAULT_MAX_HOPS: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaceAdjacencyGraph {
    adjacency: Vec<Vec<u32>>,
}

impl FaceAdjacencyGraph {
    pub fn num_faces(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, face: usize) -> &[u32] {
        &self.adjacency[face]
    }

    /// Breadth-first shortest hop count between two faces, or `None` when it
    /// exceeds `max_hops` (or the faces are disconnected).
    pub fn hop_distance(&self, from: usize, to: usize, max_hops: usize) -> Option<usize> {
        if from == to {
            return Some(0);
        }
        let mut seen = vec![false; self.adjacency.len()];
        seen[from] = true;
        let mut frontier = vec![from as u32];
        let mut next = Vec::new();
        for depth in 1..=max_hops {
            for &f in &frontier {
                for &n in &self.adjacency[f as usize] {
                    if n as usize == to {
                        return Some(depth);
                    }
                    if !seen[n as usize] {
                        seen[n as usize] = true;
                        next.push(n);
                    }
                }
            }
            if next.is_empty() {
                return None;
            }
            std::mem::swap(&mut frontier, &mut next);
            next.clear();
        }
        None
    }
}

/// Faces are adjacent iff they share an undirected edge.
pub fn build_face_adjacency(faces: &[[u32; 3]]) -> Result<FaceAdjacencyGraph, RemeshError> {
    let mut edges: HashMap<(u32, u32), Vec<u32>> = HashMap::with_capacity(faces.len() * 2);
    for (fi, f) in faces.iter().enumerate() {
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            edges.entry((a.min(b), a.max(b))).or_default().push(fi as u32);
        }
    }
    let mut adjacency = vec![Vec::new(); faces.len()];
    let mut sorted: Vec<_> = edges.into_iter().collect();
    sorted.sort_unstable_by_key(|(e, _)| *e);
    for ((a, b), fs) in sorted {
        if fs.len() > 2 {
            return Err(RemeshError::NonManifold(a, b, fs.len()));
        }
        if let [x, y] = fs[..] {
            if x != y {
                adjacency[x as usize].push(y);
                adjacency[y as usize].push(x);
            }
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }
    Ok(FaceAdjacencyGraph { adjacency })
}

fn faces_hash(faces: &[[u32; 3]]) -> u64 {
    let mut h = DefaultHasher::new();
    faces.hash(&mut h);
    h.finish()
}

/// [`build_face_adjacency`] memoized per face list.
pub fn cached_face_adjacency(faces: &[[u32; 3]]) -> Result<Arc<FaceAdjacencyGraph>, RemeshError> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<FaceAdjacencyGraph>>>> = OnceLock::new();
    let key = faces_hash(faces);
    let cache = CACHE.get_or_init(Default::default);
    if let Some(g) = cache.lock().expect("adjacency cache poisoned").get(&key) {
        if g.num_faces() == faces.len() {
            return Ok(Arc::clone(g));
        }
    }
    let g = Arc::new(build_face_adjacency(faces)?);
    cache.lock().expect("adjacency cache poisoned").insert(key, Arc::clone(&g));
    Ok(g)
}

/// A point on the template surface: source face and barycentric weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceSample<T> {
    pub face: u32,
    pub bary: [T; 3],
}

impl<T: Real> SurfaceSample<T> {
    pub fn interpolate(&self, vertices: &[Vec3<T>], faces: &[[u32; 3]]) -> Vec3<T> {
        let f = faces[self.face as usize];
        vertices[f[0] as usize] * self.bary[0] + vertices[f[1] as usize] * self.bary[1] + vertices[f[2] as usize] * self.bary[2]
    }
}

/// Texel-center UV rasterization of the template. Row `i` covers
/// `v ∈ [i/res, (i+1)/res)`, column `j` covers `u ∈ [j/res, (j+1)/res)`.
#[derive(Clone, Debug)]
pub struct UvRaster<T> {
    pub resolution: usize,
    pub texels: Vec<Option<SurfaceSample<T>>>,
}

impl<T: Real> UvRaster<T> {
    pub fn get(&self, row: usize, col: usize) -> Option<&SurfaceSample<T>> {
        self.texels[row * self.resolution + col].as_ref()
    }

    pub fn filled(&self) -> usize {
        self.texels.iter().filter(|t| t.is_some()).count()
    }
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Barycentric coordinates of `p` in the 2D triangle, `None` for degenerate
/// triangles.
fn barycentric2(p: [f64; 2], t: [[f64; 2]; 3]) -> Option<[f64; 3]> {
    let e1 = [t[1][0] - t[0][0], t[1][1] - t[0][1]];
    let e2 = [t[2][0] - t[0][0], t[2][1] - t[0][1]];
    let d = cross2(e1, e2);
    if d.abs() < 1e-18 {
        return None;
    }
    let r = [p[0] - t[0][0], p[1] - t[0][1]];
    let l1 = cross2(r, e2) / d;
    let l2 = cross2(e1, r) / d;
    Some([1.0 - l1 - l2, l1, l2])
}

const INSIDE_TOL: f64 = 1e-10;
const STRICT_TOL: f64 = 1e-9;

/// Map every texel center to the UV triangle containing it.
pub fn rasterize_uv_grid<T: Real>(model: &HeadModel<T>, resolution: usize) -> Result<UvRaster<T>, RemeshError> {
    if resolution < 1 {
        return Err(RemeshError::Resolution(resolution));
    }
    for (i, uv) in model.uv_coords.iter().enumerate() {
        let (u, v) = (uv[0].to_f64_lossy(), uv[1].to_f64_lossy());
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
            return Err(RemeshError::UvOutOfRange(i));
        }
    }
    let res = resolution as f64;
    let tris: Vec<[[f64; 2]; 3]> = model
        .uv_faces
        .iter()
        .map(|f| f.map(|i| {
            let uv = model.uv_coords[i as usize];
            [uv[0].to_f64_lossy(), uv[1].to_f64_lossy()]
        }))
        .collect();
    // bucket faces by the texel rows their bounding box spans
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); resolution];
    for (fi, t) in tris.iter().enumerate() {
        let vmin = t.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let vmax = t.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let r0 = ((vmin * res - 0.5).floor().max(0.0)) as usize;
        let r1 = ((vmax * res - 0.5).ceil().min(res - 1.0).max(0.0)) as usize;
        for row in rows.iter_mut().take(r1 + 1).skip(r0) {
            row.push(fi as u32);
        }
    }

    let per_row: Vec<(Vec<Option<SurfaceSample<T>>>, Vec<(u32, u32)>)> = rows
        .par_iter()
        .enumerate()
        .map(|(i, faces)| {
            let v = (i as f64 + 0.5) / res;
            let mut out = vec![None; resolution];
            let mut overlaps = Vec::new();
            for j in 0..resolution {
                let p = [(j as f64 + 0.5) / res, v];
                let mut best: Option<(u32, [f64; 3])> = None;
                let mut strict: Vec<u32> = Vec::new();
                for &fi in faces {
                    let t = tris[fi as usize];
                    let Some(b) = barycentric2(p, t) else { continue };
                    if b.iter().all(|x| *x >= -INSIDE_TOL) {
                        if b.iter().all(|x| *x > STRICT_TOL) {
                            strict.push(fi);
                        }
                        if best.map_or(true, |(f, _)| fi < f) {
                            best = Some((fi, b));
                        }
                    }
                }
                for a in 0..strict.len() {
                    for b in a + 1..strict.len() {
                        overlaps.push((strict[a].min(strict[b]), strict[a].max(strict[b])));
                    }
                }
                out[j] = best.map(|(face, b)| {
                    let c = [b[0].max(0.0), b[1].max(0.0), b[2].max(0.0)];
                    let s = c[0] + c[1] + c[2];
                    SurfaceSample { face, bary: [lit(c[0] / s), lit(c[1] / s), lit(c[2] / s)] }
                });
            }
            (out, overlaps)
        })
        .collect();

    let mut overlaps: Vec<(u32, u32)> = per_row.iter().flat_map(|(_, o)| o.iter().copied()).collect();
    if !overlaps.is_empty() {
        overlaps.sort_unstable();
        overlaps.dedup();
        return Err(RemeshError::OverlappingUv(overlaps));
    }
    let texels = per_row.into_iter().flat_map(|(t, _)| t).collect();
    Ok(UvRaster { resolution, texels })
}

/// Outcome of validating one candidate triangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FaceValidity {
    /// All three vertices sample the same source face.
    SameFace,
    /// Distinct source faces, pairwise within the hop bound; `max_hops` is
    /// the largest pairwise distance found.
    Connected { max_hops: usize },
    /// Some pair of source faces is farther apart than the bound.
    TooFar { face_a: u32, face_b: u32 },
}

impl FaceValidity {
    pub fn retained(&self) -> bool {
        !matches!(self, FaceValidity::TooFar { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateFace {
    /// Flat texel indices (`row * res + col`) of the three corners.
    pub texels: [usize; 3],
    pub source_faces: [u32; 3],
    pub validity: FaceValidity,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RemeshStats {
    pub resolution: usize,
    pub max_hops: usize,
    pub candidates: usize,
    pub retained: usize,
    pub dropped: usize,
    pub retained_same_face: usize,
    pub retained_connected: usize,
    pub dropped_too_far: usize,
    pub vertices: usize,
}

/// Remeshed surface. Vertices carry their template provenance, so any
/// deformation of the template carries over by barycentric interpolation.
#[derive(Clone, Debug)]
pub struct UvRemesh<T> {
    pub resolution: usize,
    pub max_hops: usize,
    /// Rest positions (template interpolated at the provenance).
    pub vertices: Vec<Vec3<T>>,
    pub provenance: Vec<SurfaceSample<T>>,
    /// Flat texel index of every vertex.
    pub vertex_texels: Vec<usize>,
    pub faces: Vec<[u32; 3]>,
    /// Every candidate triangle, retained or not.
    pub candidates: Vec<CandidateFace>,
    pub stats: RemeshStats,
}

/// Validate a triangle whose corners sample `sources`.
pub fn validate_face(graph: &FaceAdjacencyGraph, sources: [u32; 3], max_hops: usize) -> FaceValidity {
    validate_face_memo(graph, sources, max_hops, &mut HashMap::new())
}

fn validate_face_memo(
    graph: &FaceAdjacencyGraph,
    sources: [u32; 3],
    max_hops: usize,
    memo: &mut HashMap<(u32, u32), Option<usize>>,
) -> FaceValidity {
    if sources[0] == sources[1] && sources[1] == sources[2] {
        return FaceValidity::SameFace;
    }
    let mut worst = 0;
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let (x, y) = (sources[a].min(sources[b]), sources[a].max(sources[b]));
        let d = *memo
            .entry((x, y))
            .or_insert_with(|| graph.hop_distance(x as usize, y as usize, max_hops));
        match d {
            Some(d) => worst = worst.max(d),
            None => return FaceValidity::TooFar { face_a: x, face_b: y },
        }
    }
    FaceValidity::Connected { max_hops: worst }
}

/// Remesh the template into a UV grid of `resolution × resolution` texels.
pub fn remesh_uv<T: Real>(model: &HeadModel<T>, resolution: usize, max_hops: usize) -> Result<UvRemesh<T>, RemeshError> {
    if resolution < 2 {
        return Err(RemeshError::Resolution(resolution));
    }
    let graph = cached_face_adjacency(&model.faces)?;
    let raster = rasterize_uv_grid(model, resolution)?;
    remesh_from_raster(model, &raster, &graph, max_hops)
}

/// Remesh from an existing rasterization and adjacency graph.
pub fn remesh_from_raster<T: Real>(
    model: &HeadModel<T>,
    raster: &UvRaster<T>,
    graph: &FaceAdjacencyGraph,
    max_hops: usize,
) -> Result<UvRemesh<T>, RemeshError> {
    let res = raster.resolution;
    if res < 2 {
        return Err(RemeshError::Resolution(res));
    }
    let mut memo = HashMap::new();
    let mut candidates = Vec::new();
    for i in 0..res - 1 {
        for j in 0..res - 1 {
            let a = i * res + j;
            let b = (i + 1) * res + j;
            let c = (i + 1) * res + j + 1;
            let d = i * res + j + 1;
            for tri in [[a, b, c], [a, c, d]] {
                let samples: Vec<&SurfaceSample<T>> = tri.iter().filter_map(|&t| raster.texels[t].as_ref()).collect();
                if samples.len() < 3 {
                    continue;
                }
                let sources = [samples[0].face, samples[1].face, samples[2].face];
                let validity = validate_face_memo(graph, sources, max_hops, &mut memo);
                candidates.push(CandidateFace { texels: tri, source_faces: sources, validity });
            }
        }
    }

    let template_normals: Vec<Vec3<T>> = model
        .faces
        .iter()
        .map(|f| {
            let [p0, p1, p2] = f.map(|i| model.template_vertices[i as usize]);
            (p1 - p0).cross(p2 - p0)
        })
        .collect();

    let mut vertex_of_texel: HashMap<usize, u32> = HashMap::new();
    let mut vertex_texels = Vec::new();
    let mut provenance = Vec::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut stats = RemeshStats { resolution: res, max_hops, candidates: candidates.len(), ..Default::default() };
    for cand in &candidates {
        match cand.validity {
            FaceValidity::SameFace => stats.retained_same_face += 1,
            FaceValidity::Connected { .. } => stats.retained_connected += 1,
            FaceValidity::TooFar { .. } => {
                stats.dropped_too_far += 1;
                continue;
            }
        }
        let mut ids = [0u32; 3];
        for (k, &t) in cand.texels.iter().enumerate() {
            ids[k] = *vertex_of_texel.entry(t).or_insert_with(|| {
                let s = raster.texels[t].expect("candidate texels are filled");
                vertex_texels.push(t);
                provenance.push(s);
                vertices.push(s.interpolate(&model.template_vertices, &model.faces));
                (vertices.len() - 1) as u32
            });
        }
        // orient like the underlying template surface
        let [p0, p1, p2] = ids.map(|i| vertices[i as usize]);
        let n = (p1 - p0).cross(p2 - p0);
        let reference = cand
            .source_faces
            .iter()
            .fold(Vec3::zero(), |acc, &f| acc + template_normals[f as usize]);
        if n.dot(reference) < T::zero() {
            ids.swap(1, 2);
        }
        faces.push(ids);
    }
    stats.retained = stats.retained_same_face + stats.retained_connected;
    stats.dropped = stats.dropped_too_far;
    stats.vertices = vertices.len();
    Ok(UvRemesh { resolution: res, max_hops, vertices, provenance, vertex_texels, faces, candidates, stats })
}

impl<T: Real> UvRemesh<T> {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Carry a deformation of the template over to the remeshed vertices.
    pub fn interpolate(&self, source_vertices: &[Vec3<T>], source_faces: &[[u32; 3]]) -> Vec<Vec3<T>> {
        self.provenance.iter().map(|s| s.interpolate(source_vertices, source_faces)).collect()
    }

    /// Adjoint of [`UvRemesh::interpolate`]: scatter remeshed-vertex gradients
    /// back onto the template vertices.
    pub fn interpolate_backward(
        &self,
        grad: &[Vec3<T>],
        source_faces: &[[u32; 3]],
        num_source_vertices: usize,
    ) -> Vec<Vec3<T>> {
        let mut out = vec![Vec3::zero(); num_source_vertices];
        for (s, g) in self.provenance.iter().zip(grad) {
            let f = source_faces[s.face as usize];
            for k in 0..3 {
                out[f[k] as usize] += *g * s.bary[k];
            }
        }
        out
    }
}

/// Canonical-space positions sampled on the UV grid. Empty texels are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionMap<T> {
    pub resolution: usize,
    pub texels: Vec<Option<Vec3<T>>>,
}

impl<T: Real> PositionMap<T> {
    pub fn get(&self, row: usize, col: usize) -> Option<Vec3<T>> {
        self.texels[row * self.resolution + col]
    }
}

/// Position map of the mesh animated by `expression` only (plus the
/// sequence's `shape`, which may be empty).
pub fn render_position_map<T: Real>(
    model: &HeadModel<T>,
    shape: &[T],
    expression: &[T],
    resolution: usize,
) -> Result<PositionMap<T>, RemeshError> {
    let raster = rasterize_uv_grid(model, resolution)?;
    position_map_from_raster(model, &raster, shape, expression)
}

pub fn position_map_from_raster<T: Real>(
    model: &HeadModel<T>,
    raster: &UvRaster<T>,
    shape: &[T],
    expression: &[T],
) -> Result<PositionMap<T>, RemeshError> {
    let canonical = canonical_expression_mesh(model, shape, expression)?;
    let texels = raster
        .texels
        .iter()
        .map(|t| t.map(|s| s.interpolate(&canonical, &model.faces)))
        .collect();
    Ok(PositionMap { resolution: raster.resolution, texels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{make_toy_model, ToyModelOptions};

    fn strip(n: usize) -> Vec<[u32; 3]> {
        // triangle strip over vertices 0..n+2
        (0..n as u32).map(|i| if i % 2 == 0 { [i, i + 1, i + 2] } else { [i + 1, i, i + 2] }).collect()
    }

    #[test]
    fn two_triangles_are_mutual_neighbors() {
        let g = build_face_adjacency(&[[0, 1, 2], [2, 1, 3]]).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        let single = build_face_adjacency(&[[0, 1, 2]]).unwrap();
        assert!(single.neighbors(0).is_empty());
    }

    #[test]
    fn non_manifold_edge_is_an_error() {
        let err = build_face_adjacency(&[[0, 1, 2], [1, 0, 3], [0, 1, 4]]).unwrap_err();
        assert!(matches!(err, RemeshError::NonManifold(0, 1, 3)));
    }

    #[test]
    fn seven_triangle_strip_ends_exceed_five_hops() {
        let g = build_face_adjacency(&strip(7)).unwrap();
        assert_eq!(g.hop_distance(0, 6, 5), None);
        assert_eq!(g.hop_distance(0, 6, 6), Some(6));
        assert_eq!(g.hop_distance(0, 5, 5), Some(5));
        assert_eq!(g.hop_distance(3, 3, 0), Some(0));
    }

    #[test]
    fn validity_rules() {
        let g = build_face_adjacency(&strip(7)).unwrap();
        assert_eq!(validate_face(&g, [2, 2, 2], 5), FaceValidity::SameFace);
        assert_eq!(validate_face(&g, [0, 1, 3], 5), FaceValidity::Connected { max_hops: 3 });
        assert_eq!(validate_face(&g, [0, 6, 3], 5), FaceValidity::TooFar { face_a: 0, face_b: 6 });
        assert!(validate_face(&g, [0, 6, 3], 6).retained());
    }

    #[test]
    fn cache_returns_same_graph() {
        let faces = strip(5);
        let a = cached_face_adjacency(&faces).unwrap();
        let b = cached_face_adjacency(&faces).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }

    fn single_triangle_model() -> HeadModel<f64> {
        HeadModel {
            template_vertices: vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            faces: vec![[0, 1, 2]],
            uv_coords: vec![[0.0, 0.0], [0.6, 0.0], [0.0, 0.6]],
            uv_faces: vec![[0, 1, 2]],
            num_shape: 0,
            num_expr: 1,
            shape_basis: vec![],
            expr_basis: vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0],
            joint_rest: vec![Vec3::zero()],
            joint_parents: vec![-1],
            joint_regressor: vec![1.0, 0.0, 0.0],
            skin_weights: vec![1.0, 1.0, 1.0],
        }
    }

    #[test]
    fn texel_inside_and_outside_single_triangle() {
        let m = single_triangle_model();
        let r = rasterize_uv_grid(&m, 4).unwrap();
        // texel (0,0) center (0.125, 0.125) inside
        let s = r.get(0, 0).unwrap();
        assert_eq!(s.face, 0);
        assert!((s.bary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // texel (3,3) center (0.875, 0.875) outside
        assert!(r.get(3, 3).is_none());
    }

    #[test]
    fn overlapping_uv_is_reported() {
        let mut m = single_triangle_model();
        m.template_vertices.push(Vec3::new(1.0, 1.0, 0.0));
        m.faces.push([1, 3, 2]);
        m.uv_faces.push([0, 1, 2]);
        match rasterize_uv_grid(&m, 8) {
            Err(RemeshError::OverlappingUv(pairs)) => assert_eq!(pairs, vec![(0, 1)]),
            other => panic!("expected overlap error, got {other:?}"),
        }
    }

    #[test]
    fn position_map_of_unit_expression_adds_basis_column() {
        let m = single_triangle_model();
        let zero = render_position_map(&m, &[], &[0.0], 8).unwrap();
        let one = render_position_map(&m, &[], &[1.0], 8).unwrap();
        for (a, b) in zero.texels.iter().zip(&one.texels) {
            match (a, b) {
                (Some(a), Some(b)) => assert!((*b - *a - Vec3::new(0.0, 0.0, 1.0)).max_abs() < 1e-12),
                (None, None) => {}
                _ => panic!("coverage changed"),
            }
        }
        assert!(render_position_map(&m, &[], &[0.0, 1.0], 8).is_err());
    }

    #[test]
    fn resolution_below_two_is_rejected() {
        let m = single_triangle_model();
        assert!(matches!(remesh_uv(&m, 1, 5), Err(RemeshError::Resolution(1))));
    }

    #[test]
    fn toy_model_remesh_keeps_provenance_normalized() {
        let m = make_toy_model::<f64>(&ToyModelOptions { seed: 1, target_vertices: 400, num_shape: 2, num_expr: 2 });
        let r = remesh_uv(&m, 24, DEFAULT_MAX_HOPS).unwrap();
        assert!(r.stats.retained > 0);
        assert!(r.stats.dropped > 0, "chart border should produce invalid candidates");
        for s in &r.provenance {
            assert!(s.bary.iter().all(|b| *b >= 0.0));
            assert!((s.bary.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(r.stats.retained, r.faces.len());
    }
}
