//! Tangent-space shape-variation analysis: eigenmodes of the reduced energy
//! `H = M^T L M`, per-vertex affine fits of the mode fields, and the
//! part-aware sample distance matrix.

use crate::aaap::ShapeOperator;
use crate::error::Result;
use crate::meshing::SurfaceMesh;
use nalgebra::{DMatrix, Matrix3, Vector3};
use rayon::prelude::*;

/// Floor applied to eigenvalues (relative to the largest) before weighting,
/// so near-null rigid modes cannot dominate the distances.
pub const EIGENVALUE_FLOOR_REL: f64 = 1e-10;

/// Eigenmodes of the tangent-space deformation energy.
#[derive(Debug, Clone)]
pub struct VariationModes {
    /// Ascending eigenvalues of `H`, after clamping to the latent dimension.
    pub eigenvalues: Vec<f64>,
    /// Latent-space eigenvectors (columns, one per mode).
    pub directions: DMatrix<f64>,
    /// Vertex vector fields `u_l = M v_l`, one column of length `3n` per mode.
    pub fields: DMatrix<f64>,
    /// Mode weights `lambda_1 / lambda_l` after flooring, in (0, 1].
    pub weights: Vec<f64>,
    /// True when the requested mode count exceeded the latent dimension.
    pub clamped: bool,
}

/// Dense symmetric eigendecomposition of `H = M^T L M`, modes ascending.
pub fn compute_modes(op: &ShapeOperator, n_modes: usize) -> VariationModes {
    let m = op.materialize_m();
    let q = m.ncols();
    let clamped = n_modes > q;
    let n_modes = n_modes.min(q);

    // H is q x q: form L M columnwise, then M^T (L M)
    let n3 = m.nrows();
    let mut lm = DMatrix::zeros(n3, q);
    for c in 0..q {
        let col: Vec<f64> = (0..n3).map(|r| m[(r, c)]).collect();
        let lcol = op.system.l_matrix().mul_vec(&col);
        for r in 0..n3 {
            lm[(r, c)] = lcol[r];
        }
    }
    let h = m.transpose() * &lm;
    // symmetrize against roundoff
    let h = (&h + h.transpose()) * 0.5;

    let eig = nalgebra::SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());

    let mut eigenvalues = Vec::with_capacity(n_modes);
    let mut directions = DMatrix::zeros(q, n_modes);
    for (out, &i) in order.iter().take(n_modes).enumerate() {
        eigenvalues.push(eig.eigenvalues[i]);
        directions.set_column(out, &eig.eigenvectors.column(i));
    }
    let fields = &m * &directions;

    let lambda_max = order
        .last()
        .map(|&i| eig.eigenvalues[i].abs())
        .unwrap_or(0.0)
        .max(1e-300);
    let floor = EIGENVALUE_FLOOR_REL * lambda_max;
    let floored: Vec<f64> = eigenvalues.iter().map(|&l| l.max(floor)).collect();
    let weights: Vec<f64> = floored.iter().map(|&l| floored[0] / l).collect();

    VariationModes {
        eigenvalues,
        directions,
        fields,
        weights,
        clamped,
    }
}

/// Reconstruction of `H` from the computed eigenpairs (diagnostic identity).
pub fn reconstruct_h(modes: &VariationModes) -> DMatrix<f64> {
    let q = modes.directions.nrows();
    let mut h = DMatrix::zeros(q, q);
    for (k, &l) in modes.eigenvalues.iter().enumerate() {
        let v = modes.directions.column(k);
        h += v * v.transpose() * l;
    }
    h
}

/// An affine fit `(A, b)` of a vector field over one vertex stencil.
#[derive(Debug, Clone)]
pub struct LocalAffineFit {
    pub linear: Matrix3<f64>,
    pub offset: Vector3<f64>,
    /// True when the stencil was too small for a well-posed 12-parameter fit
    /// and the Tikhonov term carried the solve.
    pub underdetermined: bool,
}

impl LocalAffineFit {
    pub fn eval(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.linear * p + self.offset
    }
}

/// Relative eigenvalue cutoff of the stencil Gram matrix; directions below
/// it are treated as unobservable and resolved by the completion rule.
pub const FIT_RANK_FLOOR_REL: f64 = 1e-8;

/// Least-squares affine fit of field values over the 1-ring of vertex `i`.
///
/// Observable directions of the 12-parameter system are solved exactly; the
/// Gram matrix's deficient directions (cutoff `1e-8` relative, covering
/// planar rings and tiny stencils) are completed by minimizing the conformal
/// penalty on the decoded transform (scaling and anisotropic coefficients),
/// so rigid fields complete to rotations rather than biased truncations.
pub fn local_affine_fit(
    mesh: &SurfaceMesh,
    field: impl Fn(usize) -> Vector3<f64>,
    i: usize,
) -> LocalAffineFit {
    use crate::aaap::basis::ConformalBasis;
    let stencil = mesh.neighborhood(i);
    let underdetermined = stencil.len() < 4;
    let anchor = mesh.vertices[i];

    // unknowns x = (vec(A); b') over centered positions: u ~ A (p - p0) + b'
    let mut ata = nalgebra::SMatrix::<f64, 12, 12>::zeros();
    let mut atb = nalgebra::SVector::<f64, 12>::zeros();
    for &j in stencil {
        let p = mesh.vertices[j] - anchor;
        let u = field(j);
        // row for output coordinate c: A[(c, :)] . p + b'[c]
        for c in 0..3 {
            let mut row = nalgebra::SVector::<f64, 12>::zeros();
            // vec(A) is column-stacked: entry (c, k) sits at 3k + c
            for k in 0..3 {
                row[3 * k + c] = p[k];
            }
            row[9 + c] = 1.0;
            ata += row * row.transpose();
            atb += row * u[c];
        }
    }

    let eig = nalgebra::SymmetricEigen::new(ata);
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = FIT_RANK_FLOOR_REL * lambda_max.max(1e-300);

    // particular solution over observable directions
    let mut x0 = nalgebra::SVector::<f64, 12>::zeros();
    let mut null_dirs: Vec<nalgebra::SVector<f64, 12>> = Vec::new();
    for k in 0..12 {
        let lambda = eig.eigenvalues[k];
        let v = eig.eigenvectors.column(k).clone_owned();
        if lambda > floor {
            x0 += v * (v.dot(&atb) / lambda);
        } else {
            null_dirs.push(v);
        }
    }

    // completion: minimize the conformal penalty s^2 + ||a||^2 of the decoded
    // transform over the unobservable subspace (min-norm tie-break)
    if !null_dirs.is_empty() {
        let basis = ConformalBasis::build();
        // penalty matrix on vec(A): P = J diag(1, 0,0,0, I_5) J^{-1} mapped
        // through encode; work directly in coefficient space instead
        let m = null_dirs.len();
        let mut h = DMatrix::zeros(m, m);
        let mut g = nalgebra::DVector::zeros(m);
        let pen = |x: &nalgebra::SVector<f64, 12>| -> nalgebra::SVector<f64, 9> {
            let a = Matrix3::from_iterator(x.fixed_rows::<9>(0).iter().copied());
            let y = basis.encode(&a);
            let mut p = y;
            // zero out the rotation coefficients: they are penalty-free
            p[1] = 0.0;
            p[2] = 0.0;
            p[3] = 0.0;
            p
        };
        let p0 = pen(&x0);
        let pn: Vec<nalgebra::SVector<f64, 9>> = null_dirs.iter().map(&pen).collect();
        for r in 0..m {
            for c in 0..m {
                h[(r, c)] = pn[r].dot(&pn[c]);
            }
            h[(r, r)] += 1e-12;
            g[r] = -pn[r].dot(&p0);
        }
        let w = h.lu().solve(&g).expect("completion solve");
        for (k, v) in null_dirs.iter().enumerate() {
            x0 += v * w[k];
        }
    }

    let linear = Matrix3::from_iterator(x0.fixed_rows::<9>(0).iter().copied());
    let b_centered = Vector3::new(x0[9], x0[10], x0[11]);
    LocalAffineFit {
        linear,
        offset: b_centered - linear * anchor,
        underdetermined,
    }
}

/// Symmetric part-aware distance matrix over the mesh vertices.
///
/// Entry `(i, j)` aggregates, over the variation modes, how badly the affine
/// fit anchored at `i` extrapolates to `j`, weighted toward low-energy modes;
/// the raw asymmetric matrix is averaged with its transpose.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    pub n: usize,
    /// Row-major `n x n`, symmetric, zero diagonal.
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

pub fn distance_matrix(mesh: &SurfaceMesh, modes: &VariationModes) -> Result<DistanceMatrix> {
    let n = mesh.vertex_count();
    let n_modes = modes.eigenvalues.len();

    // per-mode, per-vertex affine fits
    let fits: Vec<Vec<LocalAffineFit>> = (0..n_modes)
        .map(|l| {
            let field = modes.fields.column(l);
            (0..n)
                .into_par_iter()
                .map(|i| {
                    local_affine_fit(
                        mesh,
                        |j| Vector3::new(field[3 * j], field[3 * j + 1], field[3 * j + 2]),
                        i,
                    )
                })
                .collect()
        })
        .collect();

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            for l in 0..n_modes {
                let w = modes.weights[l];
                let fit = &fits[l][i];
                let field = modes.fields.column(l);
                for j in 0..n {
                    let u_j = Vector3::new(field[3 * j], field[3 * j + 1], field[3 * j + 2]);
                    let eps = (fit.eval(&mesh.vertices[j]) - u_j).norm_squared();
                    row[j] += w * eps;
                }
            }
            for v in row.iter_mut() {
                *v = v.sqrt();
            }
            row[i] = 0.0;
            row
        })
        .collect();

    // symmetrize
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            values[i * n + j] = 0.5 * (rows[i][j] + rows[j][i]);
        }
    }
    for i in 0..n {
        values[i * n + i] = 0.0;
    }
    Ok(DistanceMatrix { n, values })
}
