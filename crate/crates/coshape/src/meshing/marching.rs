//! Level-set surface extraction on a uniform grid.

use super::mc_table::TRIANGLE_TABLE;
use crate::error::{Error, Result};
use crate::generator::Shape;
use nalgebra::Vector3;
use std::collections::HashMap;

/// Sampling lattice for extraction.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    /// Grid corners per axis (cells per axis = resolution - 1).
    pub resolution: usize,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl GridSpec {
    pub fn cube(resolution: usize, half: f64) -> Self {
        GridSpec {
            resolution,
            min: [-half; 3],
            max: [half; 3],
        }
    }

    fn point(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let n = (self.resolution - 1) as f64;
        Vector3::new(
            self.min[0] + (self.max[0] - self.min[0]) * i as f64 / n,
            self.min[1] + (self.max[1] - self.min[1]) * j as f64 / n,
            self.min[2] + (self.max[2] - self.min[2]) * k as f64 / n,
        )
    }
}

/// Raw extraction output: welded vertices and triangles.
pub struct RawMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

// corner offsets in the table's numbering
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Canonical grid key of an edge: its lower corner plus the axis it runs
/// along, so that shared edges weld to one vertex.
fn edge_key(cell: [usize; 3], e: usize) -> (usize, usize, usize, u8) {
    let a = CORNERS[EDGES[e][0]];
    let b = CORNERS[EDGES[e][1]];
    let lo = [
        cell[0] + a[0].min(b[0]),
        cell[1] + a[1].min(b[1]),
        cell[2] + a[2].min(b[2]),
    ];
    let axis = if a[0] != b[0] {
        0
    } else if a[1] != b[1] {
        1
    } else {
        2
    };
    (lo[0], lo[1], lo[2], axis)
}

/// Marching cubes over the grid. Returns an error when the level set does not
/// intersect the sampling box.
pub fn marching_cubes(shape: &Shape<'_>, grid: &GridSpec) -> Result<RawMesh> {
    let r = grid.resolution;
    assert!(r >= 2, "grid resolution must be at least 2");
    let mut values = vec![0.0f64; r * r * r];
    let idx = |i: usize, j: usize, k: usize| (k * r + j) * r + i;
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                values[idx(i, j, k)] = shape.value(&grid.point(i, j, k));
            }
        }
    }

    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let mut edge_cache: HashMap<(usize, usize, usize, u8), usize> = HashMap::new();

    for k in 0..r - 1 {
        for j in 0..r - 1 {
            for i in 0..r - 1 {
                let mut cube = 0usize;
                let mut corner_vals = [0.0f64; 8];
                for (c, off) in CORNERS.iter().enumerate() {
                    let v = values[idx(i + off[0], j + off[1], k + off[2])];
                    corner_vals[c] = v;
                    if v < 0.0 {
                        cube |= 1 << c;
                    }
                }
                if cube == 0 || cube == 255 {
                    continue;
                }
                let tris = &TRIANGLE_TABLE[cube];
                let mut t = 0;
                while t < 16 && tris[t] >= 0 {
                    let mut ids = [0usize; 3];
                    for (slot, &e) in tris[t..t + 3].iter().enumerate() {
                        let e = e as usize;
                        let key = edge_key([i, j, k], e);
                        let id = *edge_cache.entry(key).or_insert_with(|| {
                            let (c0, c1) = (EDGES[e][0], EDGES[e][1]);
                            let (v0, v1) = (corner_vals[c0], corner_vals[c1]);
                            let p0 = grid.point(i + CORNERS[c0][0], j + CORNERS[c0][1], k + CORNERS[c0][2]);
                            let p1 = grid.point(i + CORNERS[c1][0], j + CORNERS[c1][1], k + CORNERS[c1][2]);
                            let t = if (v1 - v0).abs() < 1e-300 {
                                0.5
                            } else {
                                (-v0 / (v1 - v0)).clamp(0.0, 1.0)
                            };
                            vertices.push(p0 + (p1 - p0) * t);
                            vertices.len() - 1
                        });
                        ids[slot] = id;
                    }
                    if ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2] {
                        triangles.push(ids);
                    }
                    t += 3;
                }
            }
        }
    }

    if vertices.is_empty() {
        return Err(Error::EmptyLevelSet);
    }
    Ok(RawMesh { vertices, triangles })
}
