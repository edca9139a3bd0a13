use crate::linalg::Vec3;
use crate::real::Real;

/// Unit vertex normals plus the vertices whose incident faces all have zero
/// area (their normal is set to +z).
#[derive(Clone, Debug, PartialEq)]
pub struct VertexNormals<T> {
    pub normals: Vec<Vec3<T>>,
    pub degenerate: Vec<usize>,
}

/// Area-weighted average of incident face normals, normalized.
pub fn vertex_normals<T: Real>(vertices: &[Vec3<T>], faces: &[[u32; 3]]) -> VertexNormals<T> {
    let mut acc = vec![Vec3::zero(); vertices.len()];
    for f in faces {
        let [a, b, c] = f.map(|i| vertices[i as usize]);
        // |cross| is twice the area, so the sum is area weighted
        let n = (b - a).cross(c - a);
        for &i in f {
            acc[i as usize] += n;
        }
    }
    let mut degenerate = Vec::new();
    let normals = acc
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len > T::zero() && len.is_finite() {
                n * (T::one() / len)
            } else {
                degenerate.push(i);
                Vec3::unit(2)
            }
        })
        .collect();
    VertexNormals { normals, degenerate }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_corner_is_diagonal() {
        // unit cube, every face split along the diagonal through vertex 0 or 7
        let v: Vec<Vec3<f64>> = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        let faces = vec![
            [0, 2, 3], [0, 3, 1], // z = 0
            [4, 5, 7], [4, 7, 6], // z = 1
            [0, 1, 5], [0, 5, 4], // y = 0
            [2, 6, 7], [2, 7, 3], // y = 1
            [0, 4, 6], [0, 6, 2], // x = 0
            [1, 3, 7], [1, 7, 5], // x = 1
        ];
        let n = vertex_normals(&v, &faces);
        assert!(n.degenerate.is_empty());
        // vertex 0 touches both triangles of its three faces: each face
        // contributes area 1 along its outward axis
        let s = 1.0 / 3f64.sqrt();
        assert!((n.normals[0] - Vec3::new(-s, -s, -s)).max_abs() < 1e-12);
        assert!((n.normals[7] - Vec3::new(s, s, s)).max_abs() < 1e-12);
    }

    #[test]
    fn planar_fan_points_up_and_normals_are_unit() {
        let mut v = vec![Vec3::new(0.0f64, 0.0, 0.0)];
        for k in 0..6 {
            let a = k as f64 * std::f64::consts::TAU / 6.0;
            v.push(Vec3::new(a.cos(), a.sin(), 0.0));
        }
        let faces: Vec<[u32; 3]> = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
        let n = vertex_normals(&v, &faces);
        for p in &n.normals {
            assert!((*p - Vec3::new(0.0, 0.0, 1.0)).max_abs() < 1e-12);
            assert!((p.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_area_only_vertex_is_flagged() {
        let v = vec![Vec3::new(0.0f64, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)];
        let n = vertex_normals(&v, &[[0, 1, 2]]);
        assert_eq!(n.degenerate, vec![0, 1, 2]);
        assert_eq!(n.normals[1], Vec3::new(0.0, 0.0, 1.0));
    }
}
