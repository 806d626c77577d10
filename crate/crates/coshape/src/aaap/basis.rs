//! Parameterization of per-vertex local transforms.
//!
//! Each vertex carries a deviation-from-identity transform
//! `A = s I + c? + R(a)` split into a uniform scaling coefficient `s`, a
//! rotation coefficient vector `c` (entering through the cross-product matrix
//! `c?`), and a 5-vector `a` of coefficients over an orthonormal basis of the
//! traceless symmetric matrices, the complement of the conformal matrices.
//!
//! The 9x9 matrix [`ConformalBasis::j_bar`] maps stacked coefficients
//! `y = (s; c; a)` to `vec(A)` in column-stacking order.

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3};

/// Number of coefficients of the full transform model per vertex.
pub const TRANSFORM_DIM: usize = 9;
/// Coefficients kept when the anisotropic part is frozen at zero.
pub const CONFORMAL_DIM: usize = 4;

/// Whether per-vertex transforms carry the anisotropic component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformModel {
    /// Full model: scaling + rotation + traceless-symmetric part.
    Aaap,
    /// Conformal-only model: the `a` coefficients are frozen at zero.
    Acap,
}

impl TransformModel {
    /// Active coefficient count per vertex.
    pub fn dim(self) -> usize {
        match self {
            TransformModel::Aaap => TRANSFORM_DIM,
            TransformModel::Acap => CONFORMAL_DIM,
        }
    }
}

/// Column-stacked vectorization of a 3x3 matrix.
pub fn vec3x3(m: &Matrix3<f64>) -> SVector<f64, 9> {
    SVector::<f64, 9>::from_iterator(m.iter().copied())
}

fn unvec3x3(v: &SVector<f64, 9>) -> Matrix3<f64> {
    Matrix3::from_iterator(v.iter().copied())
}

/// Cross-product matrix: `cross_matrix(c) * v == c x v`.
pub fn cross_matrix(c: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -c.z, c.y, c.z, 0.0, -c.x, -c.y, c.x, 0.0)
}

/// The fixed coefficient-to-matrix map for per-vertex transforms.
#[derive(Debug, Clone)]
pub struct ConformalBasis {
    j_bar: SMatrix<f64, 9, 9>,
}

impl ConformalBasis {
    /// Builds the basis by Gram-Schmidt over the scaling direction, the three
    /// skew generators, and five traceless symmetric seeds, then arranges the
    /// columns into the (s, c, a) layout.
    ///
    /// Columns 1-4 are left unnormalized so that decoding is literal:
    /// `(1;0;0)` decodes to the identity and `(0;c;0)` to `c?`. Columns 5-9
    /// form an orthonormal set orthogonal to every conformal matrix.
    pub fn build() -> Self {
        let mut j = SMatrix::<f64, 9, 9>::zeros();

        // column 0: vec(I)
        j.set_column(0, &vec3x3(&Matrix3::identity()));
        // columns 1..3: skew generators d(c x)/dc_k
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = 1.0;
            j.set_column(1 + k, &vec3x3(&cross_matrix(&e)));
        }
        // columns 4..8: traceless symmetric seeds, orthonormalized against the
        // conformal columns and each other under the Frobenius inner product
        let seeds = [
            Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 0.0)),
            Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -2.0)),
            sym_pair(0, 1),
            sym_pair(0, 2),
            sym_pair(1, 2),
        ];
        let mut ortho: Vec<SVector<f64, 9>> = Vec::new();
        // normalized copies of the conformal columns for projection
        for k in 0..4 {
            let col = j.column(k).clone_owned();
            ortho.push(col.clone() / col.norm());
        }
        let mut a_col = 4;
        for seed in seeds {
            let mut v = vec3x3(&seed);
            for _ in 0..2 {
                for q in &ortho {
                    let proj = q.dot(&v);
                    v -= q * proj;
                }
            }
            let n = v.norm();
            assert!(n > 1e-9, "degenerate seed in conformal basis construction");
            let v = v / n;
            ortho.push(v);
            j.set_column(a_col, &v);
            a_col += 1;
        }
        ConformalBasis { j_bar: j }
    }

    /// The 9x9 coefficient-to-vec(A) map.
    pub fn j_bar(&self) -> &SMatrix<f64, 9, 9> {
        &self.j_bar
    }

    /// First `dim` columns as a dynamic matrix, for the reduced conformal model.
    pub fn j_bar_truncated(&self, model: TransformModel) -> DMatrix<f64> {
        let d = model.dim();
        let mut m = DMatrix::zeros(9, d);
        for c in 0..d {
            for r in 0..9 {
                m[(r, c)] = self.j_bar[(r, c)];
            }
        }
        m
    }

    /// Decodes coefficients `(s; c; a)` into the transform deviation `A`.
    pub fn decode(&self, y: &SVector<f64, 9>) -> Matrix3<f64> {
        unvec3x3(&(self.j_bar * y))
    }

    /// Projects a matrix onto coefficients; exact whenever the matrix lies in
    /// the span (it always does: the nine columns span all of R^{3x3}).
    pub fn encode(&self, a: &Matrix3<f64>) -> SVector<f64, 9> {
        self.j_bar
            .lu()
            .solve(&vec3x3(a))
            .expect("conformal basis is full rank")
    }
}

fn sym_pair(i: usize, j: usize) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    m[(i, j)] = 1.0;
    m[(j, i)] = 1.0;
    m
}

/// Per-vertex transform coefficients for a whole mesh, stored as
/// `(s_i; c_i; a_i)` stacked into a flat vector of length `9 n`
/// (`a` entries zero under the conformal-only model).
#[derive(Debug, Clone)]
pub struct AffineParams {
    coeffs: Vec<f64>,
}

impl AffineParams {
    pub fn from_flat(coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len() % TRANSFORM_DIM, 0);
        AffineParams { coeffs }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len() / TRANSFORM_DIM
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs(&self, i: usize) -> SVector<f64, 9> {
        SVector::<f64, 9>::from_column_slice(
            &self.coeffs[i * TRANSFORM_DIM..(i + 1) * TRANSFORM_DIM],
        )
    }

    pub fn scale(&self, i: usize) -> f64 {
        self.coeffs[i * TRANSFORM_DIM]
    }

    pub fn rotation(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.coeffs[i * TRANSFORM_DIM + 1..i * TRANSFORM_DIM + 4])
    }

    pub fn anisotropic(&self, i: usize) -> nalgebra::SVector<f64, 5> {
        nalgebra::SVector::<f64, 5>::from_column_slice(
            &self.coeffs[i * TRANSFORM_DIM + 4..i * TRANSFORM_DIM + 9],
        )
    }

    /// Decoded transform deviation at vertex `i`.
    pub fn matrix(&self, basis: &ConformalBasis, i: usize) -> Matrix3<f64> {
        basis.decode(&self.coeffs(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;

    #[test]
    fn decode_identity() {
        let basis = ConformalBasis::build();
        let mut y = SVector::<f64, 9>::zeros();
        y[0] = 1.0;
        let a = basis.decode(&y);
        assert_relative_eq!(a, Matrix3::identity(), epsilon = 1e-14);
    }

    #[test]
    fn decode_rotation_about_z() {
        let basis = ConformalBasis::build();
        let mut y = SVector::<f64, 9>::zeros();
        y[3] = 1.0; // c = e3
        let a = basis.decode(&y);
        // row 1, col 2 = -1; row 2, col 1 = +1 (1-based indexing)
        assert_relative_eq!(a[(0, 1)], -1.0, epsilon = 1e-14);
        assert_relative_eq!(a[(1, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(a[(2, 2)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn a_columns_orthonormal_and_orthogonal_to_conformal() {
        let basis = ConformalBasis::build();
        let j = basis.j_bar();
        for i in 4..9 {
            for k in 4..9 {
                let dot = j.column(i).dot(&j.column(k));
                let want = if i == k { 1.0 } else { 0.0 };
                assert_relative_eq!(dot, want, epsilon = 1e-12);
            }
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let s: f64 = rng.random::<f64>() - 0.5;
            let c = Vector3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            );
            let conf = vec3x3(&(Matrix3::identity() * s + cross_matrix(&c)));
            for k in 4..9 {
                assert!(j.column(k).dot(&conf).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encode_roundtrip_random() {
        let basis = ConformalBasis::build();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let m = Matrix3::from_fn(|_, _| rng.random::<f64>() - 0.5);
            let y = basis.encode(&m);
            let back = basis.decode(&y);
            assert_relative_eq!(m, back, epsilon = 1e-12);
        }
    }

    /// The coefficient matrix as printed in the source derivation, kept as a
    /// rejected candidate: its fifth column is not orthogonal to vec(I), so it
    /// cannot satisfy the orthogonality property the parameterization needs.
    #[test]
    fn printed_candidate_basis_is_not_orthogonal() {
        let s2 = 1.0 / 2.0_f64.sqrt();
        let s6 = 1.0 / 6.0_f64.sqrt();
        #[rustfmt::skip]
        let printed = SMatrix::<f64, 9, 9>::from_row_slice(&[
            1.0, 0.0, 0.0,  0.0,  s2,       -s6,      0.0, 0.0, 0.0,
            0.0, 0.0, 0.0,  1.0,  0.0,       0.0,     1.0, 0.0, 0.0,
            0.0, 0.0,-1.0,  0.0,  0.0,       0.0,     0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, -1.0,  0.0,       0.0,     1.0, 0.0, 0.0,
            1.0, 0.0, 0.0,  0.0,  0.0,       2.0*s6,  0.0, 0.0, 0.0,
            0.0, 1.0, 0.0,  0.0,  0.0,       0.0,     0.0, 0.0, 1.0,
            0.0, 0.0, 1.0,  0.0,  0.0,       0.0,     0.0, 1.0, 0.0,
            0.0,-1.0, 0.0,  0.0,  0.0,       0.0,     0.0, 0.0, 1.0,
            1.0, 0.0, 0.0,  0.0, -s6,       -s6,      0.0, 0.0, 0.0,
        ]);
        let identity_dir = vec3x3(&Matrix3::identity());
        let col5 = printed.column(4).clone_owned();
        // trace of the decoded column-5 matrix: 1/sqrt(2) - 1/sqrt(6) != 0
        assert!(col5.dot(&identity_dir).abs() > 0.2);
    }

    #[test]
    fn truncated_basis_matches_leading_columns() {
        let basis = ConformalBasis::build();
        let t = basis.j_bar_truncated(TransformModel::Acap);
        assert_eq!(t.ncols(), 4);
        for c in 0..4 {
            for r in 0..9 {
                assert_eq!(t[(r, c)], basis.j_bar()[(r, c)]);
            }
        }
    }
}
