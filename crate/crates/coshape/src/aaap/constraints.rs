//! Level-set linearization constraints.
//!
//! Differentiating `g(p_i + d_i, z + v) = 0` to first order ties each
//! vertex displacement to the latent direction:
//! `grad_x(p_i)^T d_i + grad_z(p_i)^T v = 0`, i.e. `C d = -F v` with one row
//! per vertex. Rows whose spatial gradient nearly vanishes are dropped; the
//! energy then carries those vertices along with their neighbors.

use crate::generator::Shape;
use nalgebra::{DMatrix, Vector3};

/// One scalar constraint row acting on a single vertex.
#[derive(Debug, Clone)]
pub struct ConstraintRow {
    pub vertex: usize,
    pub grad: Vector3<f64>,
}

/// The constraint system `C d = rhs` with `C` one row per retained vertex.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub rows: Vec<ConstraintRow>,
    /// Vertices whose rows were dropped for a near-zero normal.
    pub dropped: Vec<usize>,
}

impl ConstraintSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Per-row residual `C d - rhs`.
    pub fn residuals(&self, d: &[f64], rhs: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(rhs)
            .map(|(row, b)| {
                let i = row.vertex;
                row.grad.x * d[3 * i] + row.grad.y * d[3 * i + 1] + row.grad.z * d[3 * i + 2] - b
            })
            .collect()
    }
}

/// Latent-direction constraint data: rows of `C` plus the matrix `F` whose
/// row `i` holds `grad_z(p_i)^T`, so that the right-hand side is `-F v`.
#[derive(Debug, Clone)]
pub struct LatentConstraints {
    pub set: ConstraintSet,
    /// `len(rows) x q`.
    pub f_mat: DMatrix<f64>,
}

impl LatentConstraints {
    /// Right-hand side `-F v` for a latent direction.
    pub fn rhs_for(&self, v: &[f64]) -> Vec<f64> {
        let q = self.f_mat.ncols();
        assert_eq!(v.len(), q, "latent direction dimension mismatch");
        (0..self.f_mat.nrows())
            .map(|r| {
                let mut acc = 0.0;
                for c in 0..q {
                    acc += self.f_mat[(r, c)] * v[c];
                }
                -acc
            })
            .collect()
    }
}

/// Builds `C` and `F` at the given vertex positions on a frozen shape.
pub fn constraint_matrices(
    shape: &Shape<'_>,
    positions: &[Vector3<f64>],
    drop_tol: f64,
) -> LatentConstraints {
    let q = shape.generator().latent_dim();
    let mut rows = Vec::with_capacity(positions.len());
    let mut dropped = Vec::new();
    let mut grads_z = Vec::new();
    for (i, p) in positions.iter().enumerate() {
        let s = shape.sample(p);
        if s.grad_x.norm() < drop_tol {
            dropped.push(i);
            continue;
        }
        rows.push(ConstraintRow {
            vertex: i,
            grad: s.grad_x,
        });
        grads_z.push(s.grad_z);
    }
    let mut f_mat = DMatrix::zeros(rows.len(), q);
    for (r, gz) in grads_z.iter().enumerate() {
        for c in 0..q {
            f_mat[(r, c)] = gz[c];
        }
    }
    LatentConstraints {
        set: ConstraintSet { rows, dropped },
        f_mat,
    }
}

/// Builds per-point on-surface projection constraints: row `i` demands
/// `grad_x(p_i)^T d_i = -g(p_i)`. Returns the set plus the right-hand side.
pub fn projection_constraints(
    shape: &Shape<'_>,
    positions: &[Vector3<f64>],
    drop_tol: f64,
) -> (ConstraintSet, Vec<f64>) {
    let mut rows = Vec::with_capacity(positions.len());
    let mut rhs = Vec::with_capacity(positions.len());
    let mut dropped = Vec::new();
    for (i, p) in positions.iter().enumerate() {
        let s = shape.sample(p);
        if s.grad_x.norm() < drop_tol {
            dropped.push(i);
            continue;
        }
        rows.push(ConstraintRow {
            vertex: i,
            grad: s.grad_x,
        });
        rhs.push(-s.value);
    }
    (ConstraintSet { rows, dropped }, rhs)
}
