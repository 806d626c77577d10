//! Minimal sparse matrix support: CSR storage, triplet assembly, and a
//! symmetric Lanczos eigensolver used by the spectral clustering stages.

use nalgebra::{DMatrix, DVector};

/// Compressed sparse row matrix with `f64` values.
#[derive(Debug, Clone)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_unstable_by_key(|&k| (triplets[k].0, triplets[k].1));

        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut prev: Option<(usize, usize)> = None;
        for &k in &order {
            let (r, c, v) = triplets[k];
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds");
            if prev == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                prev = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Csr {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Row `r` as parallel (column, value) slices.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[r] = acc;
        }
        y
    }

    /// x^T A x for square A.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn diag(&self) -> Vec<f64> {
        let n = self.nrows.min(self.ncols);
        let mut d = vec![0.0; n];
        for (r, dr) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            if let Ok(k) = cols.binary_search(&r) {
                *dr = vals[k];
            }
        }
        d
    }

    /// Dense copy, for oracles and small instances.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                m[(r, *c)] = *v;
            }
        }
        m
    }

    /// Upper triangle (r <= c) as triplets; used to feed symmetric solvers.
    pub fn upper_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::new();
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                if r <= *c {
                    t.push((r, *c, *v));
                }
            }
        }
        t
    }
}

/// Result of a partial symmetric eigendecomposition.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    /// Eigenvalues, sorted by the requested criterion.
    pub values: Vec<f64>,
    /// Eigenvectors as columns, matching `values`.
    pub vectors: DMatrix<f64>,
}

/// Which end of the spectrum to approximate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extremal {
    Largest,
    Smallest,
}

/// Lanczos with full reorthogonalization for the `k` extremal eigenpairs of a
/// symmetric matrix given by its CSR storage.
///
/// For the graph sizes used here (n up to a few thousand, k up to ~64) full
/// reorthogonalization is cheap and avoids ghost eigenvalues.
pub fn lanczos(a: &Csr, k: usize, which: Extremal, seed: u64) -> EigenPairs {
    use rand::prelude::*;
    assert_eq!(a.nrows(), a.ncols());
    let n = a.nrows();
    let k = k.min(n);
    if n == 0 || k == 0 {
        return EigenPairs {
            values: Vec::new(),
            vectors: DMatrix::zeros(n, 0),
        };
    }
    // moderate problems: dense is exact and handles eigenvalue multiplicity
    // (duplicated shapes, disconnected graphs) without restart heuristics
    if n <= 4 * k + 32 || n <= 1400 {
        return dense_eigen(&a.to_dense(), k, which);
    }

    let max_iter = (8 * k + 160).min(n);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<DVector<f64>> = Vec::with_capacity(max_iter);
    let mut alpha = Vec::new();
    let mut beta = Vec::new();

    let mut v = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    v /= v.norm();
    q.push(v);

    for j in 0..max_iter {
        let qj = q[j].clone();
        let mut w = DVector::from_vec(a.mul_vec(qj.as_slice()));
        let aj = qj.dot(&w);
        alpha.push(aj);
        w -= &qj * aj;
        if j > 0 {
            let b = beta[j - 1];
            w -= &q[j - 1] * b;
        }
        // full reorthogonalization, twice for stability
        for _ in 0..2 {
            for qi in &q {
                let c = qi.dot(&w);
                w -= qi * c;
            }
        }
        let scale = alpha.iter().fold(1e-300f64, |m, a: &f64| m.max(a.abs()));
        let b = w.norm();
        if b < 1e-10 * scale {
            // invariant subspace found; restart with a fresh random direction
            let mut r = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
            for qi in &q {
                let c = qi.dot(&r);
                r -= qi * c;
            }
            let rn = r.norm();
            if rn < 1e-12 || q.len() == n {
                beta.push(0.0);
                break;
            }
            beta.push(0.0);
            q.push(r / rn);
            continue;
        }
        beta.push(b);
        if j + 1 == max_iter {
            break;
        }
        q.push(w / b);
    }

    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m && beta[i] != 0.0 {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let tri = nalgebra::SymmetricEigen::new(t);
    let mut idx: Vec<usize> = (0..m).collect();
    match which {
        Extremal::Largest => {
            idx.sort_by(|&a, &b| tri.eigenvalues[b].partial_cmp(&tri.eigenvalues[a]).unwrap())
        }
        Extremal::Smallest => {
            idx.sort_by(|&a, &b| tri.eigenvalues[a].partial_cmp(&tri.eigenvalues[b]).unwrap())
        }
    }
    let k = k.min(m);
    let mut values = Vec::with_capacity(k);
    let mut vectors = DMatrix::zeros(n, k);
    for (out, &i) in idx.iter().take(k).enumerate() {
        values.push(tri.eigenvalues[i]);
        let mut col = DVector::zeros(n);
        for (jj, qj) in q.iter().enumerate().take(m) {
            col += qj * tri.eigenvectors[(jj, i)];
        }
        let nn = col.norm();
        if nn > 0.0 {
            col /= nn;
        }
        vectors.set_column(out, &col);
    }
    EigenPairs { values, vectors }
}

fn dense_eigen(a: &DMatrix<f64>, k: usize, which: Extremal) -> EigenPairs {
    let n = a.nrows();
    let sym = nalgebra::SymmetricEigen::new(a.clone());
    let mut idx: Vec<usize> = (0..n).collect();
    match which {
        Extremal::Largest => {
            idx.sort_by(|&x, &y| sym.eigenvalues[y].partial_cmp(&sym.eigenvalues[x]).unwrap())
        }
        Extremal::Smallest => {
            idx.sort_by(|&x, &y| sym.eigenvalues[x].partial_cmp(&sym.eigenvalues[y]).unwrap())
        }
    }
    let k = k.min(n);
    let mut values = Vec::with_capacity(k);
    let mut vectors = DMatrix::zeros(n, k);
    for (out, &i) in idx.iter().take(k).enumerate() {
        values.push(sym.eigenvalues[i]);
        vectors.set_column(out, &sym.eigenvectors.column(i));
    }
    EigenPairs { values, vectors }
}
