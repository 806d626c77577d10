//! Discrete surface representation: extraction from level sets, vertex
//! neighborhoods, and surface sampling.

mod decimate;
mod marching;
mod mc_table;

pub use decimate::bbox_diagonal;
pub use marching::GridSpec;

use crate::error::{Error, Result};
use crate::generator::Shape;
use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Triangle mesh with per-vertex 1-ring neighborhoods (each including the
/// vertex itself).
#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    neighborhoods: Vec<Vec<usize>>,
    /// True when extraction detected non-manifold edges (kept, with warning).
    pub non_manifold: bool,
}

impl SurfaceMesh {
    /// Builds a mesh and its neighborhoods, dropping vertices that have fewer
    /// than two distinct neighbors until the invariant holds.
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mut vertices = vertices;
        let mut triangles = triangles;
        loop {
            let n = vertices.len();
            for t in &triangles {
                for &v in t {
                    if v >= n {
                        return Err(Error::IndexOutOfRange { index: v, len: n });
                    }
                }
            }
            let nbrs = build_neighborhoods(n, &triangles);
            let weak: Vec<usize> = (0..n).filter(|&i| nbrs[i].len() < 3).collect();
            if weak.is_empty() {
                let non_manifold = has_non_manifold_edges(n, &triangles);
                return Ok(SurfaceMesh {
                    vertices,
                    triangles,
                    neighborhoods: nbrs,
                    non_manifold,
                });
            }
            if weak.len() == n {
                return Err(Error::IsolatedVertex(weak[0]));
            }
            // drop weak vertices and their triangles, then retry
            let mut keep = vec![true; n];
            for &w in &weak {
                keep[w] = false;
            }
            let mut remap = vec![usize::MAX; n];
            let mut new_vertices = Vec::with_capacity(n - weak.len());
            for (i, k) in keep.iter().enumerate() {
                if *k {
                    remap[i] = new_vertices.len();
                    new_vertices.push(vertices[i]);
                }
            }
            let new_triangles: Vec<[usize; 3]> = triangles
                .iter()
                .filter(|t| t.iter().all(|&v| keep[v]))
                .map(|t| [remap[t[0]], remap[t[1]], remap[t[2]]])
                .collect();
            if new_triangles.is_empty() {
                return Err(Error::IsolatedVertex(0));
            }
            vertices = new_vertices;
            triangles = new_triangles;
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// 1-ring of vertex `i` including `i` itself, sorted ascending.
    pub fn neighborhood(&self, i: usize) -> &[usize] {
        &self.neighborhoods[i]
    }

    pub fn neighborhoods(&self) -> &[Vec<usize>] {
        &self.neighborhoods
    }

    /// Directed edges `(i, j)` with `j` in `N_i \ {i}`, in deterministic
    /// order. Each undirected edge appears twice, matching the energy's
    /// double-counted stencil sum.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.vertex_count() {
            for &j in self.neighborhood(i) {
                if j != i {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Undirected edge list (i < j), deterministic order.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.vertex_count() {
            for &j in self.neighborhood(i) {
                if j > i {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = self.undirected_edges();
        if edges.is_empty() {
            return 0.0;
        }
        edges
            .iter()
            .map(|&(i, j)| (self.vertices[i] - self.vertices[j]).norm())
            .sum::<f64>()
            / edges.len() as f64
    }

    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(&self.vertices)
    }

    pub fn triangle_area(&self, t: &[usize; 3]) -> f64 {
        let a = self.vertices[t[0]];
        let b = self.vertices[t[1]];
        let c = self.vertices[t[2]];
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }

    /// Connected components over the edge graph; returns per-vertex ids and
    /// the component count.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let n = self.vertex_count();
        let mut comp = vec![usize::MAX; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = count;
            stack.push(s);
            while let Some(v) = stack.pop() {
                for &u in self.neighborhood(v) {
                    if comp[u] == usize::MAX {
                        comp[u] = count;
                        stack.push(u);
                    }
                }
            }
            count += 1;
        }
        (comp, count)
    }

    /// Per-component Euler characteristic V - E + F.
    pub fn euler_characteristics(&self) -> Vec<i64> {
        let (comp, count) = self.components();
        let mut v = vec![0i64; count];
        let mut e = vec![0i64; count];
        let mut f = vec![0i64; count];
        for c in comp.iter() {
            v[*c] += 1;
        }
        for (i, j) in self.undirected_edges() {
            debug_assert_eq!(comp[i], comp[j]);
            e[comp[i]] += 1;
        }
        for t in &self.triangles {
            f[comp[t[0]]] += 1;
        }
        (0..count).map(|c| v[c] - e[c] + f[c]).collect()
    }

    /// Graph shortest-path distances (Dijkstra over edge lengths) from a
    /// source vertex.
    pub fn graph_distances(&self, source: usize) -> Vec<f64> {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;
        let n = self.vertex_count();
        let mut dist = vec![f64::INFINITY; n];
        let mut heap: BinaryHeap<Reverse<(ordered::F64, usize)>> = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Reverse((ordered::F64(0.0), source)));
        while let Some(Reverse((ordered::F64(d), v))) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &u in self.neighborhood(v) {
                if u == v {
                    continue;
                }
                let w = (self.vertices[u] - self.vertices[v]).norm();
                let nd = d + w;
                if nd < dist[u] {
                    dist[u] = nd;
                    heap.push(Reverse((ordered::F64(nd), u)));
                }
            }
        }
        dist
    }

    /// Hop distance (edge count) from a set of seed vertices.
    pub fn hop_distances(&self, seeds: &[usize]) -> Vec<usize> {
        let n = self.vertex_count();
        let mut dist = vec![usize::MAX; n];
        let mut queue = std::collections::VecDeque::new();
        for &s in seeds {
            dist[s] = 0;
            queue.push_back(s);
        }
        while let Some(v) = queue.pop_front() {
            for &u in self.neighborhood(v) {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        dist
    }
}

mod ordered {
    /// Total order on finite f64 for the Dijkstra heap.
    #[derive(PartialEq, PartialOrd)]
    pub struct F64(pub f64);
    impl Eq for F64 {}
    #[allow(clippy::derive_ord_xor_partial_ord)]
    impl Ord for F64 {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.partial_cmp(other).unwrap()
        }
    }
}

fn build_neighborhoods(n: usize, triangles: &[[usize; 3]]) -> Vec<Vec<usize>> {
    let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for t in triangles {
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    nbrs[t[a]].push(t[b]);
                }
            }
        }
    }
    for (i, l) in nbrs.iter_mut().enumerate() {
        l.push(i);
        l.sort_unstable();
        l.dedup();
    }
    nbrs
}

fn has_non_manifold_edges(_n: usize, triangles: &[[usize; 3]]) -> bool {
    let mut count: std::collections::HashMap<(usize, usize), usize> = std::collections::HashMap::new();
    for t in triangles {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            let key = (a.min(b), a.max(b));
            *count.entry(key).or_insert(0) += 1;
        }
    }
    count.values().any(|&c| c > 2)
}

/// Per-vertex 1-ring adjacency (plus self) of an arbitrary mesh; errors on
/// isolated vertices.
pub fn neighborhoods(vertices: usize, triangles: &[[usize; 3]]) -> Result<Vec<Vec<usize>>> {
    let nbrs = build_neighborhoods(vertices, triangles);
    for (i, l) in nbrs.iter().enumerate() {
        if l.len() <= 1 {
            return Err(Error::IsolatedVertex(i));
        }
    }
    Ok(nbrs)
}

/// Extracts the zero level set of a frozen shape; when `target_vertices` is
/// given, the mesh is decimated toward that count. All vertices end projected
/// to `|g| < tol` by Newton steps along the spatial gradient.
pub fn extract_mesh(
    shape: &Shape<'_>,
    grid: &GridSpec,
    target_vertices: Option<usize>,
    projection_tol: f64,
) -> Result<SurfaceMesh> {
    let raw = marching::marching_cubes(shape, grid)?;
    let raw = match target_vertices {
        Some(t) => decimate::decimate_to(&raw, t),
        None => raw,
    };
    let mut vertices = raw.vertices;
    for p in &mut vertices {
        *p = shape.project_newton(p, projection_tol, 60);
    }
    SurfaceMesh::new(vertices, raw.triangles)
}

/// Points sampled on a surface, optionally carrying part labels.
#[derive(Debug, Clone)]
pub struct SamplePointSet {
    pub points: Vec<Vector3<f64>>,
    pub labels: Option<Vec<u32>>,
}

/// Area-weighted uniform surface samples, deterministic under `seed`.
pub fn sample_surface(mesh: &SurfaceMesh, count: usize, seed: u64) -> Result<SamplePointSet> {
    if mesh.triangles.is_empty() {
        return Err(Error::ZeroArea);
    }
    let areas: Vec<f64> = mesh.triangles.iter().map(|t| mesh.triangle_area(t)).collect();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroArea);
    }
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let u = rng.random::<f64>() * total;
        let ti = cdf.partition_point(|&c| c < u).min(areas.len() - 1);
        let t = &mesh.triangles[ti];
        let (a, b, c) = (mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
        let r1: f64 = rng.random::<f64>();
        let r2: f64 = rng.random::<f64>();
        let s = r1.sqrt();
        let p = a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2);
        points.push(p);
    }
    Ok(SamplePointSet { points, labels: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::family::builtin;
    use crate::generator::{ImplicitGenerator, LatentCode, PartSpec, PrimitiveKind};

    fn sphere_gen() -> ImplicitGenerator {
        ImplicitGenerator::new(
            vec![PartSpec {
                kind: PrimitiveKind::Capsule,
                half_extents: [1.0, 1.0, 0.0],
                rotation: [1.0, 0.0, 0.0, 0.0],
                translation: [0.0, 0.0, 0.0],
                label: 0,
            }],
            vec![],
            0.0,
            1,
        )
        .unwrap()
    }

    #[test]
    fn sphere_extraction_radius() {
        let gen = sphere_gen();
        let z = LatentCode::zeros(1);
        let shape = gen.at(&z).unwrap();
        let grid = GridSpec::cube(64, 1.3);
        let mesh = extract_mesh(&shape, &grid, None, 1e-5).unwrap();
        assert!(mesh.vertex_count() > 500);
        for v in &mesh.vertices {
            assert!((v.norm() - 1.0).abs() < 1e-2, "radius {}", v.norm());
        }
        // projected vertices satisfy the tolerance exactly
        for v in &mesh.vertices {
            assert!(shape.value(v).abs() < 1e-5);
        }
    }

    #[test]
    fn empty_field_is_error() {
        let gen = sphere_gen();
        let z = LatentCode::zeros(1);
        let shape = gen.at(&z).unwrap();
        // box entirely inside the sphere: no crossing
        let grid = GridSpec::cube(16, 0.3);
        assert!(matches!(
            extract_mesh(&shape, &grid, None, 1e-5),
            Err(Error::EmptyLevelSet)
        ));
    }

    #[test]
    fn two_disjoint_boxes_topology() {
        let fam = builtin::two_box_affine();
        let shape = fam.generator.at(&fam.instances[0]).unwrap();
        let grid = GridSpec::cube(72, 1.1);
        let mesh = extract_mesh(&shape, &grid, None, 1e-5).unwrap();
        let (_, count) = mesh.components();
        assert_eq!(count, 2);
        for chi in mesh.euler_characteristics() {
            assert_eq!(chi, 2);
        }
    }

    #[test]
    fn decimation_hits_target() {
        let gen = sphere_gen();
        let z = LatentCode::zeros(1);
        let shape = gen.at(&z).unwrap();
        let grid = GridSpec::cube(80, 1.3);
        let mesh = extract_mesh(&shape, &grid, Some(800), 1e-5).unwrap();
        let n = mesh.vertex_count() as f64;
        assert!((n - 800.0).abs() / 800.0 < 0.15, "got {n} vertices");
        for v in &mesh.vertices {
            assert!(shape.value(v).abs() < 1e-5);
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let fam = builtin::two_box_attached();
        let shape = fam.generator.at(&fam.instances[1]).unwrap();
        let grid = GridSpec::cube(48, 1.1);
        let a = extract_mesh(&shape, &grid, Some(500), 1e-5).unwrap();
        let b = extract_mesh(&shape, &grid, Some(500), 1e-5).unwrap();
        assert_eq!(a.vertex_count(), b.vertex_count());
        assert_eq!(a.triangles, b.triangles);
        for (x, y) in a.vertices.iter().zip(&b.vertices) {
            assert_eq!(x, y); // bit-identical
        }
    }

    #[test]
    fn neighborhood_small_meshes() {
        // single triangle
        let nbrs = neighborhoods(3, &[[0, 1, 2]]).unwrap();
        for l in &nbrs {
            assert_eq!(l.len(), 3);
        }
        // tetrahedron
        let tets = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
        let nbrs = neighborhoods(4, &tets).unwrap();
        for l in &nbrs {
            assert_eq!(l.len(), 4);
        }
        // isolated vertex
        assert!(matches!(
            neighborhoods(4, &[[0, 1, 2]]),
            Err(Error::IsolatedVertex(3))
        ));
    }

    #[test]
    fn neighborhood_symmetry_on_extracted_mesh() {
        let fam = builtin::two_box_attached();
        let shape = fam.generator.at(&fam.instances[0]).unwrap();
        let mesh = extract_mesh(&shape, &GridSpec::cube(40, 1.1), Some(300), 1e-5).unwrap();
        for i in 0..mesh.vertex_count() {
            for &j in mesh.neighborhood(i) {
                if j != i {
                    assert!(mesh.neighborhood(j).contains(&i));
                }
            }
        }
    }

    #[test]
    fn sampling_single_triangle() {
        let mesh = SurfaceMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let s = sample_surface(&mesh, 100, 7).unwrap();
        assert_eq!(s.points.len(), 100);
        for p in &s.points {
            assert!(p.x >= -1e-12 && p.y >= -1e-12 && p.x + p.y <= 1.0 + 1e-12);
            assert!(p.z.abs() < 1e-12);
        }
        let s2 = sample_surface(&mesh, 100, 7).unwrap();
        assert_eq!(s.points, s2.points);
    }

    #[test]
    fn sampling_density_proportional_to_area() {
        // two triangles with area ratio 4:1
        let mesh = SurfaceMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(2.0, 0.0, 0.0),
                Vector3::new(0.0, 2.0, 0.0),
                Vector3::new(3.0, 0.0, 0.0),
                Vector3::new(4.0, 0.0, 0.0),
                Vector3::new(3.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let n = 4000;
        let s = sample_surface(&mesh, n, 11).unwrap();
        let in_big = s.points.iter().filter(|p| p.x <= 2.5).count();
        let p = 0.8;
        let mean = p * n as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (in_big as f64 - mean).abs() < 3.0 * sd,
            "count {in_big} outside 3 sigma of {mean}"
        );
    }
}
