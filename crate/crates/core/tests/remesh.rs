use std::collections::{HashMap, VecDeque};

use headsplat::head::{make_toy_model, HeadModel, ToyModelOptions};
use headsplat::remesh::{build_face_adjacency, remesh_uv, validate_face, FaceValidity};

/// Face adjacency through shared edges, built without the library.
fn adjacency(faces: &[[u32; 3]]) -> Vec<Vec<usize>> {
    let mut by_edge: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (i, f) in faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            by_edge.entry((a.min(b), a.max(b))).or_default().push(i);
        }
    }
    let mut adj = vec![Vec::new(); faces.len()];
    for fs in by_edge.values() {
        for &a in fs {
            for &b in fs {
                if a != b && !adj[a].contains(&b) {
                    adj[a].push(b);
                }
            }
        }
    }
    adj
}

fn bfs(adj: &[Vec<usize>], src: usize) -> Vec<usize> {
    let mut d = vec![usize::MAX; adj.len()];
    d[src] = 0;
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if d[v] == usize::MAX {
                d[v] = d[u] + 1;
                q.push_back(v);
            }
        }
    }
    d
}

fn toy() -> HeadModel<f64> {
    make_toy_model(&ToyModelOptions { seed: 0, target_vertices: 1000, num_shape: 4, num_expr: 4 })
}

#[test]
fn exhaustive_audit_at_16_32_64() {
    let m = toy();
    let adj = adjacency(&m.faces);
    let mut dist: HashMap<usize, Vec<usize>> = HashMap::new();
    for res in [16, 32, 64] {
        let r = remesh_uv(&m, res, 5).unwrap();
        let mut retained = 0;
        for c in &r.candidates {
            let s = c.source_faces.map(|f| f as usize);
            let mut worst = 0;
            for (a, b) in [(0, 1), (1, 2), (0, 2)] {
                let d = dist.entry(s[a]).or_insert_with(|| bfs(&adj, s[a]))[s[b]];
                worst = worst.max(d);
            }
            let ok = worst <= 5;
            assert_eq!(c.validity.retained(), ok, "res {res}: {c:?} worst {worst}");
            if ok {
                retained += 1;
            }
        }
        assert_eq!(retained, r.faces.len());
        assert_eq!(r.stats.retained + r.stats.dropped, r.stats.candidates);
    }
}

#[test]
fn hop_distances_match_floyd_warshall() {
    let m = make_toy_model::<f64>(&ToyModelOptions { seed: 4, target_vertices: 120, num_shape: 1, num_expr: 1 });
    let n = m.faces.len();
    let adj = adjacency(&m.faces);
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        for &j in &adj[i] {
            d[i][j] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    let g = build_face_adjacency(&m.faces).unwrap();
    for i in 0..n {
        for j in 0..n {
            for bound in [3, 5] {
                let want = (d[i][j] <= bound).then_some(d[i][j]);
                assert_eq!(g.hop_distance(i, j, bound), want, "{i} {j}");
            }
        }
    }
}

#[test]
fn seven_triangle_strip_is_rejected() {
    // faces 0..7 in a strip: the ends are six hops apart
    let strip: Vec<[u32; 3]> = (0..7u32).map(|i| if i % 2 == 0 { [i, i + 1, i + 2] } else { [i + 1, i, i + 2] }).collect();
    let g = build_face_adjacency(&strip).unwrap();
    assert_eq!(validate_face(&g, [0, 3, 6], 5), FaceValidity::TooFar { face_a: 0, face_b: 6 });
    assert!(!validate_face(&g, [0, 3, 6], 5).retained());
    assert!(validate_face(&g, [0, 3, 5], 5).retained());
}
