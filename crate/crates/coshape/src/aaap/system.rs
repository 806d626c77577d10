//! Assembly of the deformation energy and its Schur complement.
//!
//! The energy couples a displacement field `d` with per-vertex transform
//! coefficients `y`:
//!
//! ```text
//! e(p, d) = min_y  sum_i ( sum_{j in N_i} w_ij || S_ij y_i - (d_i - d_j) ||^2
//!                          + mu_r s_i^2 + mu_s ||a_i||^2 )
//! ```
//!
//! with `S_ij = ((p_i - p_j)^T (x) I_3) J`. Writing the joint quadratic as
//! `[K E; E^T G]`, eliminating `y` gives `e = d^T L d` with
//! `L = K - E G^{-1} E^T` and the optimal coefficients `y* = -G^{-1} E^T d`.
//! `G` is block diagonal, so the elimination is per vertex.
//!
//! The neighbor sum runs over directed stencil pairs, so each undirected edge
//! is counted from both endpoints; halving it would only rescale `L`.

use super::basis::{AffineParams, ConformalBasis, TransformModel, TRANSFORM_DIM};
use crate::sparse::Csr;
use nalgebra::{DMatrix, DVector, Vector3};
use serde::Serialize;

/// Regularization weights of the transform coefficients.
///
/// The weights are dimensionless: the per-vertex penalty block is scaled by
/// the mean squared stencil edge length, so the bias they introduce is
/// independent of mesh resolution and model scale.
#[derive(Debug, Clone, Copy)]
pub struct EnergyParams {
    /// Weight on the uniform scaling coefficient `s`.
    pub mu_r: f64,
    /// Weight on the anisotropic coefficients `a`.
    pub mu_s: f64,
    pub model: TransformModel,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            mu_r: 0.003,
            mu_s: 0.003,
            model: TransformModel::Aaap,
        }
    }
}

/// Assembled quadratic deformation system on a fixed stencil geometry.
pub struct DeformationSystem {
    n: usize,
    params: EnergyParams,
    basis: ConformalBasis,
    positions: Vec<Vector3<f64>>,
    neighborhoods: Vec<Vec<usize>>,
    /// Optional per-directed-edge weights in `directed_edges` order.
    edge_weights: Option<Vec<f64>>,
    k_mat: Csr,
    l_mat: Csr,
    g_inv: Vec<DMatrix<f64>>,
    /// Column block `i` of `E`: rows `(vertex, 3 x t block)`.
    e_blocks: Vec<Vec<(usize, DMatrix<f64>)>>,
}

/// Condition diagnostics exported alongside solves.
#[derive(Debug, Clone, Serialize)]
pub struct SystemDiagnostics {
    pub vertices: usize,
    pub l_nnz: usize,
    pub mean_l_diagonal: f64,
    pub min_g_diagonal: f64,
    pub model: String,
}

impl DeformationSystem {
    /// Assembles `K`, `E`, `G` and the Schur complement `L` on the given
    /// geometry. `edge_weights`, when present, scale each directed stencil
    /// term (used by the robust-norm reweighting).
    pub fn assemble(
        positions: &[Vector3<f64>],
        neighborhoods: &[Vec<usize>],
        params: EnergyParams,
        edge_weights: Option<Vec<f64>>,
    ) -> Self {
        let n = positions.len();
        assert_eq!(neighborhoods.len(), n);
        let basis = ConformalBasis::build();
        let t = params.model.dim();
        let j_t = basis.j_bar_truncated(params.model);

        if let Some(w) = &edge_weights {
            let count: usize = neighborhoods.iter().map(|l| l.len() - 1).sum();
            assert_eq!(w.len(), count, "edge weight count mismatch");
        }

        let mut k_trips: Vec<(usize, usize, f64)> = Vec::new();
        let mut l_trips: Vec<(usize, usize, f64)> = Vec::new();
        let mut g_inv = Vec::with_capacity(n);
        let mut e_blocks: Vec<Vec<(usize, DMatrix<f64>)>> = Vec::with_capacity(n);

        let mut edge_cursor = 0usize;
        for i in 0..n {
            let scale = stencil_scale(positions, &neighborhoods[i], i);
            let mut g_ii = DMatrix::zeros(t, t);
            g_ii[(0, 0)] = params.mu_r * scale;
            for k in 4..t {
                g_ii[(k, k)] = params.mu_s * scale;
            }
            // accumulate E column block i: map vertex -> 3 x t block
            let mut rows: Vec<(usize, DMatrix<f64>)> = Vec::new();
            let mut block_of = |rows: &mut Vec<(usize, DMatrix<f64>)>, v: usize| -> usize {
                match rows.iter().position(|(r, _)| *r == v) {
                    Some(k) => k,
                    None => {
                        rows.push((v, DMatrix::zeros(3, t)));
                        rows.len() - 1
                    }
                }
            };
            // self block first for deterministic layout
            block_of(&mut rows, i);

            for &j in &neighborhoods[i] {
                if j == i {
                    continue;
                }
                let w = match &edge_weights {
                    Some(ws) => {
                        let w = ws[edge_cursor];
                        edge_cursor += 1;
                        w
                    }
                    None => 1.0,
                };
                let e_ij = positions[i] - positions[j];
                // S_ij = (e^T (x) I_3) J_t, row-block structure [e_x I | e_y I | e_z I]
                let mut s_ij = DMatrix::zeros(3, t);
                for c in 0..t {
                    for r in 0..3 {
                        let mut acc = 0.0;
                        for axis in 0..3 {
                            acc += e_ij[axis] * j_t[(3 * axis + r, c)];
                        }
                        s_ij[(r, c)] = acc;
                    }
                }

                // K contributions of w * ||d_i - d_j||^2
                for a in 0..3 {
                    k_trips.push((3 * i + a, 3 * i + a, w));
                    k_trips.push((3 * j + a, 3 * j + a, w));
                    k_trips.push((3 * i + a, 3 * j + a, -w));
                    k_trips.push((3 * j + a, 3 * i + a, -w));
                }

                // G_ii += w S^T S
                g_ii.syrk_update(&s_ij, w);

                // E column i: block (i, i) -= w S; block (j, i) += w S
                let ki = block_of(&mut rows, i);
                rows[ki].1 -= &s_ij * w;
                let kj = block_of(&mut rows, j);
                rows[kj].1 += &s_ij * w;
            }

            let g_ii_inv = g_ii
                .clone()
                .cholesky()
                .map(|c| c.inverse())
                .unwrap_or_else(|| {
                    g_ii.lu().try_inverse().expect("G block is singular despite regularization")
                });

            // L -= W_i G_ii^{-1} W_i^T over this column block
            for (j1, b1) in &rows {
                let left = b1 * &g_ii_inv;
                for (j2, b2) in &rows {
                    let contrib = &left * b2.transpose();
                    for a in 0..3 {
                        for b in 0..3 {
                            let v = contrib[(a, b)];
                            if v != 0.0 {
                                l_trips.push((3 * j1 + a, 3 * j2 + b, -v));
                            }
                        }
                    }
                }
            }

            g_inv.push(g_ii_inv);
            e_blocks.push(rows);
        }

        let k_mat = Csr::from_triplets(3 * n, 3 * n, &k_trips);
        l_trips.extend(k_mat.upper_triplets().iter().flat_map(|&(r, c, v)| {
            if r == c {
                vec![(r, c, v)]
            } else {
                vec![(r, c, v), (c, r, v)]
            }
        }));
        let l_mat = Csr::from_triplets(3 * n, 3 * n, &l_trips);

        DeformationSystem {
            n,
            params,
            basis,
            positions: positions.to_vec(),
            neighborhoods: neighborhoods.to_vec(),
            edge_weights,
            k_mat,
            l_mat,
            g_inv,
            e_blocks,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn params(&self) -> &EnergyParams {
        &self.params
    }

    pub fn basis(&self) -> &ConformalBasis {
        &self.basis
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn neighborhoods(&self) -> &[Vec<usize>] {
        &self.neighborhoods
    }

    /// The Schur complement `L` (3n x 3n).
    pub fn l_matrix(&self) -> &Csr {
        &self.l_mat
    }

    pub fn k_matrix(&self) -> &Csr {
        &self.k_mat
    }

    /// Energy `d^T L d`.
    pub fn energy(&self, d: &[f64]) -> f64 {
        assert_eq!(d.len(), 3 * self.n, "displacement length mismatch");
        self.l_mat.quad_form(d)
    }

    /// Optimal transform coefficients `y* = -G^{-1} E^T d`, padded to the
    /// full 9-coefficient layout when the conformal-only model is active.
    pub fn recover_transforms(&self, d: &[f64]) -> AffineParams {
        assert_eq!(d.len(), 3 * self.n, "displacement length mismatch");
        let t = self.params.model.dim();
        let mut out = vec![0.0; TRANSFORM_DIM * self.n];
        for i in 0..self.n {
            let mut rhs = DVector::zeros(t);
            for (j, block) in &self.e_blocks[i] {
                let dj = Vector3::new(d[3 * j], d[3 * j + 1], d[3 * j + 2]);
                for c in 0..t {
                    rhs[c] += block[(0, c)] * dj.x + block[(1, c)] * dj.y + block[(2, c)] * dj.z;
                }
            }
            let y = -(&self.g_inv[i] * rhs);
            for c in 0..t {
                out[TRANSFORM_DIM * i + c] = y[c];
            }
        }
        AffineParams::from_flat(out)
    }

    /// Direct evaluation of the joint objective at explicit `(d, y)`; equals
    /// `energy(d)` when `y = recover_transforms(d)`.
    pub fn objective_at(&self, d: &[f64], y: &AffineParams) -> f64 {
        let residuals = self.edge_residuals(d, y);
        let mut total = 0.0;
        let mut cursor = 0usize;
        for i in 0..self.n {
            for &j in &self.neighborhoods[i] {
                if j == i {
                    continue;
                }
                let w = self.edge_weights.as_ref().map_or(1.0, |ws| ws[cursor]);
                let r = residuals[cursor];
                total += w * r * r;
                cursor += 1;
            }
            let scale = stencil_scale(&self.positions, &self.neighborhoods[i], i);
            let s = y.scale(i);
            let a = y.anisotropic(i);
            total += scale * (self.params.mu_r * s * s + self.params.mu_s * a.norm_squared());
        }
        total
    }

    /// Unweighted per-directed-edge residual norms
    /// `r_ij = || A_i (p_i - p_j) - (d_i - d_j) ||` in `directed_edges` order.
    pub fn edge_residuals(&self, d: &[f64], y: &AffineParams) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..self.n {
            let a_i = y.matrix(&self.basis, i);
            let di = Vector3::new(d[3 * i], d[3 * i + 1], d[3 * i + 2]);
            for &j in &self.neighborhoods[i] {
                if j == i {
                    continue;
                }
                let dj = Vector3::new(d[3 * j], d[3 * j + 1], d[3 * j + 2]);
                let e_ij = self.positions[i] - self.positions[j];
                let r = a_i * e_ij - (di - dj);
                out.push(r.norm());
            }
        }
        out
    }

    pub fn diagnostics(&self) -> SystemDiagnostics {
        let diag = self.l_mat.diag();
        let mean = diag.iter().sum::<f64>() / diag.len().max(1) as f64;
        let min_g = self
            .g_inv
            .iter()
            .map(|g| (0..g.nrows()).map(|k| g[(k, k)]).fold(f64::INFINITY, f64::min))
            .fold(f64::INFINITY, f64::min);
        SystemDiagnostics {
            vertices: self.n,
            l_nnz: self.l_mat.nnz(),
            mean_l_diagonal: mean,
            min_g_diagonal: min_g,
            model: format!("{:?}", self.params.model),
        }
    }
}

/// Mean squared stencil edge length at vertex `i`; the nondimensionalizing
/// factor of the coefficient penalty.
pub fn stencil_scale(positions: &[Vector3<f64>], neighborhood: &[usize], i: usize) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for &j in neighborhood {
        if j != i {
            acc += (positions[i] - positions[j]).norm_squared();
            count += 1;
        }
    }
    if count == 0 {
        1.0
    } else {
        (acc / count as f64).max(1e-300)
    }
}

trait SyrkExt {
    fn syrk_update(&mut self, s: &DMatrix<f64>, w: f64);
}

impl SyrkExt for DMatrix<f64> {
    /// self += w * s^T s
    fn syrk_update(&mut self, s: &DMatrix<f64>, w: f64) {
        let t = s.ncols();
        for a in 0..t {
            for b in 0..t {
                let mut acc = 0.0;
                for r in 0..s.nrows() {
                    acc += s[(r, a)] * s[(r, b)];
                }
                self[(a, b)] += w * acc;
            }
        }
    }
}
