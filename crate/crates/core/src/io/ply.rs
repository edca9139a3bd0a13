//! Binary little-endian PLY export of world Gaussians in the common splat
//! layout: position, opacity logit, log scales, rotation quaternion (w first)
//! and degree-0 color coefficients.

use std::path::Path;

use crate::cloud::{promote_to_world, GaussianCloud, WorldGaussians};
use crate::error::{DatasetError, GeometryError};
use crate::linalg::{mat_to_quat, Vec3};
use crate::real::{sigmoid, Real};

/// Zeroth-order spherical-harmonic basis constant.
pub const SH_C0: f64 = 0.28209479177387814;

pub const PLY_PROPERTIES: [&str; 14] = [
    "x", "y", "z", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "f_dc_0", "f_dc_1", "f_dc_2",
];

/// One parsed PLY record.
#[derive(Clone, Debug, PartialEq)]
pub struct PlyGaussian {
    pub position: [f32; 3],
    pub opacity_logit: f32,
    pub log_scale: [f32; 3],
    pub rotation: [f32; 4],
    pub f_dc: [f32; 3],
}

/// Encode the active Gaussians of `world`.
pub fn ply_bytes<T: Real>(world: &WorldGaussians<T>) -> Vec<u8> {
    let active: Vec<usize> = (0..world.len()).filter(|i| world.active[*i]).collect();
    let mut out = Vec::new();
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", active.len());
    for p in PLY_PROPERTIES {
        header.push_str(&format!("property float {p}\n"));
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());
    for i in active {
        let q = mat_to_quat(&world.rotation[i]);
        let rgb = world.color_logit[i].map(sigmoid);
        let mut rec = Vec::with_capacity(14);
        rec.extend(world.position[i].to_array());
        rec.push(world.opacity_logit[i]);
        rec.extend(world.scale[i].map(|s| s.ln()).to_array());
        rec.extend(q);
        rec.extend(rgb.map(|c| (c - T::lit(0.5)) / T::lit(SH_C0)).to_array());
        for v in rec {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    out
}

/// Promote `cloud` onto `vertices` and write it to `path`.
pub fn export_ply<T: Real>(
    cloud: &GaussianCloud<T>,
    vertices: &[Vec3<T>],
    faces: &[[u32; 3]],
    path: &Path,
) -> Result<(), DatasetError> {
    let (world, _) = promote_to_world(cloud, vertices, faces).map_err(|e: GeometryError| DatasetError::Inconsistent(e.to_string()))?;
    std::fs::write(path, ply_bytes(&world))?;
    Ok(())
}

/// Parse a file produced by [`ply_bytes`]; float properties only.
pub fn parse_ply(bytes: &[u8]) -> Result<(Vec<String>, Vec<PlyGaussian>), DatasetError> {
    let bad = |m: &str| DatasetError::Inconsistent(format!("ply: {m}"));
    let end = b"end_header\n";
    let pos = bytes.windows(end.len()).position(|w| w == end).ok_or_else(|| bad("no end_header"))?;
    let header = std::str::from_utf8(&bytes[..pos]).map_err(|_| bad("header is not UTF-8"))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") || lines.next() != Some("format binary_little_endian 1.0") {
        return Err(bad("unsupported format"));
    }
    let mut count = None;
    let mut props = Vec::new();
    for l in lines {
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| bad("vertex count"))?),
            ["property", "float", name] => props.push(name.to_string()),
            _ => return Err(bad(&format!("unexpected header line `{l}`"))),
        }
    }
    let count = count.ok_or_else(|| bad("missing vertex element"))?;
    let body = &bytes[pos + end.len()..];
    if body.len() != count * props.len() * 4 {
        return Err(bad("body length does not match header"));
    }
    let idx = |name: &str| props.iter().position(|p| p == name).ok_or_else(|| bad(&format!("missing property {name}")));
    let cols: Vec<usize> = PLY_PROPERTIES.iter().map(|p| idx(p)).collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(count);
    for rec in body.chunks_exact(props.len() * 4) {
        let f = |k: usize| f32::from_le_bytes(rec[4 * cols[k]..4 * cols[k] + 4].try_into().unwrap());
        out.push(PlyGaussian {
            position: [f(0), f(1), f(2)],
            opacity_logit: f(3),
            log_scale: [f(4), f(5), f(6)],
            rotation: [f(7), f(8), f(9), f(10)],
            f_dc: [f(11), f(12), f(13)],
        });
    }
    Ok((props, out))
}
