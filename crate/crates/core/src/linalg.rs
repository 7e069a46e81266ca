//! Sparse row storage for constraint Jacobians and a symmetric banded
//! matrix with an in-place Cholesky factorization.
//!
//! A dense matrix is the special case whose bandwidth is `n - 1`, so the
//! solver needs only this one factorization.

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRows {
    ncols: usize,
    ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl SparseRows {
    pub fn new(ncols: usize) -> Self {
        Self {
            ncols,
            ptr: vec![0],
            idx: Vec::new(),
            val: Vec::new(),
        }
    }

    pub fn with_capacity(ncols: usize, rows: usize, nnz: usize) -> Self {
        let mut ptr = Vec::with_capacity(rows + 1);
        ptr.push(0);
        Self {
            ncols,
            ptr,
            idx: Vec::with_capacity(nnz),
            val: Vec::with_capacity(nnz),
        }
    }

    /// Appends a row given as `(column, value)` pairs.
    pub fn push_row(&mut self, entries: &[(usize, f64)]) {
        for &(j, v) in entries {
            debug_assert!(j < self.ncols, "column {j} out of range");
            self.idx.push(j);
            self.val.push(v);
        }
        self.ptr.push(self.idx.len());
    }

    pub fn nrows(&self) -> usize {
        self.ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.ptr[i], self.ptr[i + 1]);
        (&self.idx[a..b], &self.val[a..b])
    }

    /// Appends every row of `other`.
    pub fn extend(&mut self, other: &SparseRows) {
        debug_assert_eq!(self.ncols, other.ncols);
        for i in 0..other.nrows() {
            let (idx, val) = other.row(i);
            self.idx.extend_from_slice(idx);
            self.val.extend_from_slice(val);
            self.ptr.push(self.idx.len());
        }
    }

    /// `out += J^T w`.
    pub fn add_transpose_mul(&self, w: &[f64], out: &mut [f64]) {
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            let (idx, val) = self.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                out[j] += wi * v;
            }
        }
    }

    /// `J x`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows())
            .map(|i| {
                let (idx, val) = self.row(i);
                idx.iter().zip(val).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }

    /// Dense copy, mainly for tests.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows()];
        for (i, row) in d.iter_mut().enumerate() {
            let (idx, val) = self.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                row[j] += v;
            }
        }
        d
    }

    /// Largest column distance between two entries of the same row.
    pub fn bandwidth(&self) -> usize {
        (0..self.nrows())
            .map(|i| {
                let (idx, _) = self.row(i);
                match (idx.iter().min(), idx.iter().max()) {
                    (Some(lo), Some(hi)) => hi - lo,
                    _ => 0,
                }
            })
            .max()
            .unwrap_or(0)
    }
}

/// Symmetric matrix with lower bandwidth `b`, stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    b: usize,
    /// Entry `(i, j)` with `i - b <= j <= i` lives at `i * (b + 1) + (b - (i - j))`.
    data: Vec<f64>,
}

/// Returned when a matrix is not numerically positive definite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub pivot: usize,
}

impl BandMatrix {
    pub fn zeros(n: usize, b: usize) -> Self {
        let b = b.min(n.saturating_sub(1));
        Self {
            n,
            b,
            data: vec![0.0; n * (b + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.b
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.b, "({i}, {j}) outside the band");
        i * (self.b + 1) + self.b - (i - j)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.b {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Adds `v` to entries `(i, j)` and `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            let s = self.slot(i, i);
            self.data[s] += v;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.data[self.slot(i, i)]).collect()
    }

    /// Adds `c * a a^T` for a sparse vector `a` with distinct indices.
    pub fn add_outer(&mut self, idx: &[usize], val: &[f64], c: f64) {
        for (p, (&i, &vi)) in idx.iter().zip(val).enumerate() {
            for (&j, &vj) in idx[..=p].iter().zip(&val[..=p]) {
                self.add(i, j, c * vi * vj);
            }
        }
    }

    /// Adds `scale * other`, which must not be wider than `self`.
    pub fn add_scaled(&mut self, other: &BandMatrix, scale: f64) {
        assert_eq!(self.n, other.n);
        assert!(other.b <= self.b);
        for i in 0..self.n {
            for j in i.saturating_sub(other.b)..=i {
                let v = other.data[other.slot(i, j)];
                if v != 0.0 {
                    let s = self.slot(i, j);
                    self.data[s] += scale * v;
                }
            }
        }
    }

    /// `A x`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            for j in i.saturating_sub(self.b)..=i {
                let v = self.data[self.slot(i, j)];
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    /// Cholesky factorization `A = L L^T` in place.
    pub fn cholesky(mut self) -> Result<BandCholesky, NotPositiveDefinite> {
        let (n, b) = (self.n, self.b);
        for i in 0..n {
            let j0 = i.saturating_sub(b);
            for j in j0..=i {
                let mut sum = self.data[self.slot(i, j)];
                let k0 = j0.max(j.saturating_sub(b));
                for k in k0..j {
                    sum -= self.data[self.slot(i, k)] * self.data[self.slot(j, k)];
                }
                let s = self.slot(i, j);
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(NotPositiveDefinite { pivot: i });
                    }
                    self.data[s] = sum.sqrt();
                } else {
                    self.data[s] = sum / self.data[self.slot(j, j)];
                }
            }
        }
        Ok(BandCholesky { l: self })
    }
}

/// Lower-triangular banded Cholesky factor.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    l: BandMatrix,
}

impl BandCholesky {
    /// Solves `A x = rhs` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let l = &self.l;
        let (n, b) = (l.n, l.b);
        for i in 0..n {
            let mut sum = x[i];
            for k in i.saturating_sub(b)..i {
                sum -= l.data[l.slot(i, k)] * x[k];
            }
            x[i] = sum / l.data[l.slot(i, i)];
        }
        for i in (0..n).rev() {
            let mut sum = x[i];
            for k in i + 1..(i + b + 1).min(n) {
                sum -= l.data[l.slot(k, i)] * x[k];
            }
            x[i] = sum / l.data[l.slot(i, i)];
        }
    }
}
