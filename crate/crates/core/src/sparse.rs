//! Sparse storage for assembled stiffness blocks: a symmetric skyline
//! (variable-band) matrix with an in-place LDL^T factorization, and a
//! fixed-pattern CSR matrix for the rectangular coupling blocks.
//!
//! Row-major node numbering on a structured grid already gives a band of
//! width `~2 (nx + 2)`, so the skyline profile is close to optimal there and
//! the factorization has no fill outside the envelope.

use std::collections::BTreeSet;

/// Lower triangle (with diagonal) of a symmetric matrix in skyline storage.
/// Row `i` stores columns `first[i]..=i` contiguously.
#[derive(Debug, Clone)]
pub struct SkylineMatrix {
    n: usize,
    first: Vec<usize>,
    start: Vec<usize>,
    values: Vec<f64>,
}

impl SkylineMatrix {
    /// `first[i]` is the smallest column index coupled to row `i` (`<= i`).
    pub fn with_profile(first: Vec<usize>) -> Self {
        let n = first.len();
        let mut start = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            assert!(f <= i, "profile must be lower triangular");
            start.push(acc);
            acc += i - f + 1;
        }
        start.push(acc);
        Self {
            n,
            first,
            start,
            values: vec![0.0; acc],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_stored(&self) -> usize {
        self.values.len()
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    /// Adds `v` at `(i, j)`; only `j <= i` is stored, callers add the lower half.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && j >= self.first[i]);
        self.values[self.start[i] + j - self.first[i]] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if j < self.first[i] {
            0.0
        } else {
            self.values[self.start[i] + j - self.first[i]]
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.values[self.start[i]..self.start[i + 1]]
    }

    /// `y = A x` using symmetry.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let f = self.first[i];
            let row = self.row(i);
            let (off, diag) = row.split_at(row.len() - 1);
            let mut acc = diag[0] * x[i];
            for (k, &a) in off.iter().enumerate() {
                acc += a * x[f + k];
                y[f + k] += a * x[i];
            }
            y[i] += acc;
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.get(i, j);
            }
        }
        d
    }

    /// In-place `L D L^T` factorization without pivoting.
    ///
    /// With `require_positive`, any pivot `<= tol * max|diag|` is rejected;
    /// otherwise only pivots with magnitude below that threshold are.
    /// On failure returns the offending row and pivot value.
    pub fn factorize(self, require_positive: bool) -> Result<LdlFactor, (usize, f64)> {
        self.factor_impl(require_positive)
    }

    /// Positive definite factor of `A + tau * |diag(A)|`, with the smallest
    /// `tau` in `tau0 * 10^k` that makes the shifted matrix positive
    /// definite. Returns the factor and the shift used.
    pub fn factorize_shifted(&self, tau0: f64) -> Option<(LdlFactor, f64)> {
        let mut tau = tau0;
        for _ in 0..40 {
            let mut m = self.clone();
            for i in 0..m.n {
                let k = m.start[i + 1] - 1;
                m.values[k] += tau * m.values[k].abs().max(f64::MIN_POSITIVE);
            }
            if let Ok(f) = m.factorize(true) {
                return Some((f, tau));
            }
            tau *= 10.0;
        }
        None
    }

    fn factor_impl(mut self, require_positive: bool) -> Result<LdlFactor, (usize, f64)> {
        let n = self.n;
        let max_diag = (0..n)
            .map(|i| self.values[self.start[i + 1] - 1].abs())
            .fold(0.0f64, f64::max);
        let tol = 1e-13 * max_diag.max(f64::MIN_POSITIVE);
        let mut diag = vec![0.0; n];
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            // u_ij = a_ij - sum_k u_ik l_jk, for j in fi..i  (u_ij = l_ij d_j)
            for j in fi..i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let sj = self.start[j];
                let mut acc = 0.0;
                if k0 < j {
                    let ri = &self.values[si + (k0 - fi)..si + (j - fi)];
                    let rj = &self.values[sj + (k0 - fj)..sj + (j - fj)];
                    acc = dot(ri, rj);
                }
                self.values[si + (j - fi)] -= acc;
            }
            let a_ii = self.values[si + (i - fi)];
            let mut d = a_ii;
            for j in fi..i {
                let u = self.values[si + (j - fi)];
                let l = u / diag[j];
                d -= u * l;
                self.values[si + (j - fi)] = l;
            }
            let bad = if require_positive {
                !(d > tol)
            } else {
                !(d.abs() > tol)
            };
            if bad {
                return Err((i, d));
            }
            diag[i] = d;
            self.values[si + (i - fi)] = d;
        }
        let negative_pivots = diag.iter().filter(|&&d| d < 0.0).count();
        Ok(LdlFactor {
            lower: self,
            diag,
            negative_pivots,
        })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        s[0] += a[k] * b[k];
        s[1] += a[k + 1] * b[k + 1];
        s[2] += a[k + 2] * b[k + 2];
        s[3] += a[k + 3] * b[k + 3];
    }
    let mut acc = (s[0] + s[1]) + (s[2] + s[3]);
    for k in 4 * chunks..a.len() {
        acc += a[k] * b[k];
    }
    acc
}

/// Factorized symmetric matrix `L D L^T`.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    lower: SkylineMatrix,
    diag: Vec<f64>,
    negative_pivots: usize,
}

impl LdlFactor {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Number of negative pivots (the matrix inertia's negative count).
    pub fn negative_pivots(&self) -> usize {
        self.negative_pivots
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.dim();
        assert_eq!(x.len(), n);
        let m = &self.lower;
        for i in 0..n {
            let f = m.first[i];
            let row = m.row(i);
            x[i] -= dot(&row[..row.len() - 1], &x[f..i]);
        }
        for i in 0..n {
            x[i] /= self.diag[i];
        }
        for i in (0..n).rev() {
            let f = m.first[i];
            let row = m.row(i);
            let xi = x[i];
            for (k, &l) in row[..row.len() - 1].iter().enumerate() {
                x[f + k] -= l * xi;
            }
        }
    }
}

/// Compressed sparse row matrix with a pattern fixed at construction.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_pattern(ncols: usize, rows: &[BTreeSet<usize>]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in rows {
            col_idx.extend(r.iter().copied());
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        Self {
            nrows: rows.len(),
            ncols,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        cols.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self
            .position(i, j)
            .expect("entry outside the assembled sparsity pattern");
        self.values[p] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .map(|p| self.values[p] * x[self.col_idx[p]])
                    .sum()
            })
            .collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut rows = vec![BTreeSet::new(); self.ncols];
        for i in 0..self.nrows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                rows[self.col_idx[p]].insert(i);
            }
        }
        let mut t = CsrMatrix::from_pattern(self.nrows, &rows);
        for i in 0..self.nrows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                t.add(self.col_idx[p], i, self.values[p]);
            }
        }
        t
    }
}
