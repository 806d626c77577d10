//! Uniform vertex-clustering decimation toward a target vertex count.

use super::marching::RawMesh;
use nalgebra::Vector3;
use std::collections::HashMap;

/// Clusters vertices on a uniform lattice of cell size `h`; each occupied
/// cell becomes one output vertex at the mean of its members.
fn cluster(mesh: &RawMesh, h: f64) -> (Vec<usize>, usize) {
    let mut cell_of: HashMap<(i64, i64, i64), usize> = HashMap::new();
    let mut assign = vec![0usize; mesh.vertices.len()];
    let mut next = 0usize;
    for (vi, p) in mesh.vertices.iter().enumerate() {
        let key = (
            (p.x / h).floor() as i64,
            (p.y / h).floor() as i64,
            (p.z / h).floor() as i64,
        );
        let id = *cell_of.entry(key).or_insert_with(|| {
            let id = next;
            next += 1;
            id
        });
        assign[vi] = id;
    }
    (assign, next)
}

/// Decimates to approximately `target` vertices (within a few percent) by
/// bisecting the clustering cell size. Degenerate triangles collapse away;
/// vertices that end up without triangles are dropped.
pub fn decimate_to(mesh: &RawMesh, target: usize) -> RawMesh {
    if mesh.vertices.len() <= target {
        return RawMesh {
            vertices: mesh.vertices.clone(),
            triangles: mesh.triangles.clone(),
        };
    }
    // bracket the cell size
    let bbox_diag = bbox_diagonal(&mesh.vertices);
    let mut lo = bbox_diag * 1e-4; // fine: many clusters
    let mut hi = bbox_diag; // coarse: few clusters
    let mut best_assign = None;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let (assign, count) = cluster(mesh, mid);
        if count > target {
            lo = mid;
        } else {
            hi = mid;
        }
        let err = (count as f64 - target as f64).abs() / target as f64;
        let best_err = best_assign
            .as_ref()
            .map(|&(_, c, _): &(Vec<usize>, usize, f64)| {
                ((c as f64 - target as f64) / target as f64).abs()
            })
            .unwrap_or(f64::INFINITY);
        if err < best_err {
            best_assign = Some((assign, count, mid));
        }
        if err < 0.02 {
            break;
        }
    }
    let (assign, count, _) = best_assign.unwrap();

    // mean position per cluster
    let mut pos = vec![Vector3::zeros(); count];
    let mut cnt = vec![0usize; count];
    for (vi, &c) in assign.iter().enumerate() {
        pos[c] += mesh.vertices[vi];
        cnt[c] += 1;
    }
    for (p, &c) in pos.iter_mut().zip(&cnt) {
        if c > 0 {
            *p /= c as f64;
        }
    }

    // remap triangles, dropping collapsed ones and duplicate faces
    let mut seen = std::collections::HashSet::new();
    let mut triangles = Vec::new();
    for t in &mesh.triangles {
        let a = assign[t[0]];
        let b = assign[t[1]];
        let c = assign[t[2]];
        if a == b || b == c || a == c {
            continue;
        }
        let mut key = [a, b, c];
        key.sort_unstable();
        if seen.insert(key) {
            triangles.push([a, b, c]);
        }
    }

    // drop unreferenced clusters
    let mut used = vec![false; count];
    for t in &triangles {
        for &v in t {
            used[v] = true;
        }
    }
    let mut remap = vec![usize::MAX; count];
    let mut vertices = Vec::new();
    for (c, &u) in used.iter().enumerate() {
        if u {
            remap[c] = vertices.len();
            vertices.push(pos[c]);
        }
    }
    for t in &mut triangles {
        for v in t.iter_mut() {
            *v = remap[*v];
        }
    }
    RawMesh { vertices, triangles }
}

pub fn bbox_diagonal(points: &[Vector3<f64>]) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}
