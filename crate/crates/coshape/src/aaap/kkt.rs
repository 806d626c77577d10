//! Sparse saddle-point solver for the constrained displacement problem
//!
//! ```text
//! min_d  d^T L d + mu ||d||^2   s.t.  C d = rhs
//! ```
//!
//! via the symmetric indefinite KKT system
//!
//! ```text
//! [ L + mu I   C^T ] [ d      ]   [ 0   ]
//! [ C          0   ] [ lambda ] = [ rhs ]
//! ```
//!
//! factored once per geometry and reused across right-hand sides. The
//! factorization is a sign-regularized sparse LDL^T with fill-reducing
//! ordering; the symbolic analysis is shared between systems with the same
//! pattern. Two rounds of iterative refinement against the exact KKT matrix
//! push constraint residuals to solver precision.

use super::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::sparse::Csr;
use faer::dyn_stack::{MemBuffer, MemStack, StackReq};
use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Par, Side};
use std::sync::Arc;

/// Shared symbolic factorization, reusable across systems with an identical
/// sparsity pattern (same mesh, same retained constraint rows).
#[derive(Clone)]
pub struct KktSymbolic {
    inner: Arc<SymbolicCholesky<usize>>,
    /// Pattern key: (3n, constrained vertices).
    key: (usize, Vec<usize>),
}

/// Factored KKT system.
pub struct KktSolver {
    nd: usize,
    nc: usize,
    symbolic: KktSymbolic,
    l_values: Vec<f64>,
    /// Exact KKT in CSR form for residual computation and refinement.
    kkt: Csr,
    /// Regularization weight `mu` actually added to the displacement block.
    pub mu: f64,
}

fn pattern_key(nd: usize, constraints: &ConstraintSet) -> (usize, Vec<usize>) {
    (nd, constraints.rows.iter().map(|r| r.vertex).collect())
}

impl KktSolver {
    /// Factors the KKT matrix for the given Schur complement and constraint
    /// rows. `mu_rel` scales the mean diagonal of `L` into the ridge term.
    /// Pass a previous solver's [`KktSymbolic`] to skip the symbolic phase
    /// when the pattern is unchanged.
    pub fn factor(
        l_mat: &Csr,
        constraints: &ConstraintSet,
        mu_rel: f64,
        reuse: Option<&KktSymbolic>,
    ) -> Result<Self> {
        let nd = l_mat.nrows();
        let nc = constraints.len();
        let dim = nd + nc;
        let diag = l_mat.diag();
        let mean_diag = diag.iter().sum::<f64>() / diag.len().max(1) as f64;
        let mu = mu_rel * mean_diag.max(1e-300);

        // exact KKT (full storage) for refinement
        let mut trips: Vec<(usize, usize, f64)> = Vec::new();
        for r in 0..nd {
            let (cols, vals) = l_mat.row(r);
            for (c, v) in cols.iter().zip(vals) {
                trips.push((r, *c, *v));
            }
            trips.push((r, r, mu));
        }
        for (k, row) in constraints.rows.iter().enumerate() {
            let cr = nd + k;
            for a in 0..3 {
                let col = 3 * row.vertex + a;
                trips.push((cr, col, row.grad[a]));
                trips.push((col, cr, row.grad[a]));
            }
        }
        let kkt = Csr::from_triplets(dim, dim, &trips);

        // upper triangle for the symmetric factorization (explicit zero
        // diagonal in the constraint block keeps the pattern square)
        let mut upper: Vec<Triplet<usize, usize, f64>> = Vec::new();
        for (r, c, v) in kkt.upper_triplets() {
            upper.push(Triplet::new(r, c, v));
        }
        for k in 0..nc {
            upper.push(Triplet::new(nd + k, nd + k, 0.0));
        }
        let a_upper = SparseColMat::<usize, f64>::try_new_from_triplets(dim, dim, &upper)
            .map_err(|e| Error::Factorization {
                vertex: 0,
                msg: format!("assembly: {e:?}"),
            })?;

        let key = pattern_key(nd, constraints);
        let symbolic = match reuse {
            Some(s) if s.key == key => s.clone(),
            _ => {
                let sym = factorize_symbolic_cholesky(
                    a_upper.symbolic(),
                    Side::Upper,
                    SymmetricOrdering::Amd,
                    CholeskySymbolicParams::default(),
                )
                .map_err(|e| Error::Factorization {
                    vertex: 0,
                    msg: format!("symbolic: {e:?}"),
                })?;
                KktSymbolic {
                    inner: Arc::new(sym),
                    key,
                }
            }
        };

        let signs: Vec<i8> = (0..dim).map(|i| if i < nd { 1 } else { -1 }).collect();
        let scale = diag.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let reg = LdltRegularization {
            dynamic_regularization_signs: Some(&signs),
            dynamic_regularization_delta: 1e-13 * scale,
            dynamic_regularization_epsilon: 1e-13 * scale,
        };
        let mut l_values = vec![0.0f64; symbolic.inner.len_val()];
        let par = Par::Seq;
        let mut mem = MemBuffer::try_new(StackReq::any_of(&[
            symbolic
                .inner
                .factorize_numeric_ldlt_scratch::<f64>(par, Default::default()),
            symbolic.inner.solve_in_place_scratch::<f64>(dim, par),
        ]))
        .map_err(|e| Error::Factorization {
            vertex: 0,
            msg: format!("workspace: {e:?}"),
        })?;
        let stack = MemStack::new(&mut mem);
        symbolic
            .inner
            .factorize_numeric_ldlt(
                &mut l_values,
                a_upper.as_ref(),
                Side::Upper,
                reg,
                par,
                stack,
                Default::default(),
            )
            .map_err(|e| {
                // name the worst-conditioned vertex in the error
                let vertex = constraints
                    .rows
                    .iter()
                    .min_by(|a, b| {
                        a.grad
                            .norm()
                            .partial_cmp(&b.grad.norm())
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .map(|r| r.vertex)
                    .unwrap_or(0);
                Error::Factorization {
                    vertex,
                    msg: format!("numeric LDLT: {e:?}"),
                }
            })?;

        Ok(KktSolver {
            nd,
            nc,
            symbolic,
            l_values,
            kkt,
            mu,
        })
    }

    pub fn symbolic(&self) -> &KktSymbolic {
        &self.symbolic
    }

    pub fn constraint_count(&self) -> usize {
        self.nc
    }

    fn solve_once(&self, rhs: &[f64]) -> Vec<f64> {
        let dim = self.nd + self.nc;
        let ldlt = faer::sparse::linalg::cholesky::LdltRef::new(&self.symbolic.inner, &self.l_values);
        let mut x = faer::Mat::<f64>::zeros(dim, 1);
        for i in 0..dim {
            x[(i, 0)] = rhs[i];
        }
        let par = Par::Seq;
        let mut mem = MemBuffer::new(self.symbolic.inner.solve_in_place_scratch::<f64>(dim, par));
        let stack = MemStack::new(&mut mem);
        ldlt.solve_in_place_with_conj(Conj::No, x.as_mut(), par, stack);
        (0..dim).map(|i| x[(i, 0)]).collect()
    }

    /// Solves the KKT system for the constraint right-hand side `rhs_c`,
    /// returning the displacement block of the solution.
    pub fn solve(&self, rhs_c: &[f64]) -> Vec<f64> {
        assert_eq!(rhs_c.len(), self.nc, "constraint rhs length mismatch");
        let dim = self.nd + self.nc;
        let mut rhs = vec![0.0; dim];
        rhs[self.nd..].copy_from_slice(rhs_c);

        let mut x = self.solve_once(&rhs);
        // iterative refinement against the exact KKT matrix
        for _ in 0..2 {
            let ax = self.kkt.mul_vec(&x);
            let mut r = vec![0.0; dim];
            let mut worst = 0.0f64;
            for i in 0..dim {
                r[i] = rhs[i] - ax[i];
                worst = worst.max(r[i].abs());
            }
            if worst < 1e-13 {
                break;
            }
            let dx = self.solve_once(&r);
            for i in 0..dim {
                x[i] += dx[i];
            }
        }
        x.truncate(self.nd);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::super::constraints::ConstraintRow;
    use super::*;
    use nalgebra::{DMatrix, DVector, Vector3};
    use rand::prelude::*;

    /// Dense KKT oracle: assembles the full bordered matrix and solves with a
    /// pivoted LU.
    fn dense_solve(l: &Csr, rows: &[ConstraintRow], mu: f64, rhs_c: &[f64]) -> Vec<f64> {
        let nd = l.nrows();
        let nc = rows.len();
        let dim = nd + nc;
        let mut m = DMatrix::zeros(dim, dim);
        let ld = l.to_dense();
        for r in 0..nd {
            for c in 0..nd {
                m[(r, c)] = ld[(r, c)];
            }
            m[(r, r)] += mu;
        }
        for (k, row) in rows.iter().enumerate() {
            for a in 0..3 {
                m[(nd + k, 3 * row.vertex + a)] = row.grad[a];
                m[(3 * row.vertex + a, nd + k)] = row.grad[a];
            }
        }
        let mut b = DVector::zeros(dim);
        for k in 0..nc {
            b[nd + k] = rhs_c[k];
        }
        let x = m.full_piv_lu().solve(&b).expect("dense solve");
        (0..nd).map(|i| x[i]).collect()
    }

    #[test]
    fn kkt_matches_dense_oracle() {
        // small SPD-ish L from a random ring system
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let n = 50;
        let mut trips = Vec::new();
        for i in 0..n {
            for a in 0..3 {
                trips.push((3 * i + a, 3 * i + a, 4.0));
            }
            let j = (i + 1) % n;
            for a in 0..3 {
                trips.push((3 * i + a, 3 * j + a, -1.0));
                trips.push((3 * j + a, 3 * i + a, -1.0));
            }
        }
        let l = Csr::from_triplets(3 * n, 3 * n, &trips);
        let rows: Vec<ConstraintRow> = (0..n)
            .map(|i| ConstraintRow {
                vertex: i,
                grad: Vector3::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() + 0.5,
                ),
            })
            .collect();
        let set = ConstraintSet {
            rows: rows.clone(),
            dropped: vec![],
        };
        let solver = KktSolver::factor(&l, &set, 1e-6, None).unwrap();
        let rhs_c: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let d = solver.solve(&rhs_c);
        let oracle = dense_solve(&l, &rows, solver.mu, &rhs_c);
        let mut max_err = 0.0f64;
        for i in 0..3 * n {
            max_err = max_err.max((d[i] - oracle[i]).abs());
        }
        assert!(max_err < 1e-7, "kkt vs dense mismatch {max_err}");

        // constraint residuals at solver precision
        let res = set.residuals(&d, &rhs_c);
        let worst = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        assert!(worst < 1e-8, "constraint residual {worst}");
    }

    #[test]
    fn symbolic_reuse_gives_same_solution() {
        let n = 30;
        let mut trips = Vec::new();
        for i in 0..n {
            for a in 0..3 {
                trips.push((3 * i + a, 3 * i + a, 3.0));
            }
            let j = (i + 1) % n;
            for a in 0..3 {
                trips.push((3 * i + a, 3 * j + a, -0.5));
                trips.push((3 * j + a, 3 * i + a, -0.5));
            }
        }
        let l = Csr::from_triplets(3 * n, 3 * n, &trips);
        let rows: Vec<ConstraintRow> = (0..n)
            .map(|i| ConstraintRow {
                vertex: i,
                grad: Vector3::new(0.1, 0.2, 1.0),
            })
            .collect();
        let set = ConstraintSet {
            rows,
            dropped: vec![],
        };
        let s1 = KktSolver::factor(&l, &set, 1e-6, None).unwrap();
        let s2 = KktSolver::factor(&l, &set, 1e-6, Some(s1.symbolic())).unwrap();
        let rhs: Vec<f64> = (0..n).map(|k| (k as f64).sin()).collect();
        let d1 = s1.solve(&rhs);
        let d2 = s2.solve(&rhs);
        for (a, b) in d1.iter().zip(&d2) {
            assert_eq!(a, b);
        }
    }
}
