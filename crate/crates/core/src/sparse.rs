//! Compressed sparse row matrices.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for CsrMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CsrMatrix({}x{}, nnz={})", self.nrows, self.ncols, self.nnz())
    }
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), data: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut m = Self::identity(d.len());
        m.data.copy_from_slice(d);
        m
    }

    /// Builds from raw CSR arrays; column indices in each row must be sorted
    /// and unique.
    pub fn from_raw(nrows: usize, ncols: usize, indptr: Vec<usize>, indices: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(indptr.len(), nrows + 1);
        assert_eq!(indices.len(), data.len());
        debug_assert!(indices.iter().all(|&c| c < ncols));
        CsrMatrix { nrows, ncols, indptr, indices, data }
    }

    /// Sums duplicates in the order the triplets are given.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut count = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of {nrows}x{ncols}");
            count[r + 1] += 1;
        }
        for i in 0..nrows {
            count[i + 1] += count[i];
        }
        let mut order = vec![0usize; triplets.len()];
        let mut next = count.clone();
        for (k, &(r, _, _)) in triplets.iter().enumerate() {
            order[next[r]] = k;
            next[r] += 1;
        }
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        let mut row: Vec<(usize, usize)> = Vec::new();
        for r in 0..nrows {
            row.clear();
            row.extend(order[count[r]..count[r + 1]].iter().map(|&k| (triplets[k].1, k)));
            row.sort_by_key(|&(c, k)| (c, k));
            let mut i = 0;
            while i < row.len() {
                let c = row[i].0;
                let mut v = 0.0;
                while i < row.len() && row[i].0 == c {
                    v += triplets[row[i].1].2;
                    i += 1;
                }
                indices.push(c);
                data.push(v);
            }
            indptr[r + 1] = indices.len();
        }
        CsrMatrix { nrows, ncols, indptr, indices, data }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }
    pub fn ncols(&self) -> usize {
        self.ncols
    }
    pub fn nnz(&self) -> usize {
        self.data.len()
    }
    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.data[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let mut s = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.data[k] * x[self.indices[k]];
            }
            y[i] = s;
        }
    }

    /// `y = A^T x`
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for k in self.indptr[i]..self.indptr[i + 1] {
                y[self.indices[k]] += self.data[k] * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut count = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            count[c + 1] += 1;
        }
        for j in 0..self.ncols {
            count[j + 1] += count[j];
        }
        let mut next = count.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut data = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                let c = self.indices[k];
                indices[next[c]] = i;
                data[next[c]] = self.data[k];
                next[c] += 1;
            }
        }
        CsrMatrix { nrows: self.ncols, ncols: self.nrows, indptr: count, indices, data }
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows);
        let n = other.ncols;
        let mut acc = vec![0.0; n];
        let mut mark = vec![usize::MAX; n];
        let mut cols: Vec<usize> = Vec::new();
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::new();
        let mut data = Vec::new();
        for i in 0..self.nrows {
            cols.clear();
            for k in self.indptr[i]..self.indptr[i + 1] {
                let a = self.data[k];
                let r = self.indices[k];
                for kk in other.indptr[r]..other.indptr[r + 1] {
                    let c = other.indices[kk];
                    if mark[c] != i {
                        mark[c] = i;
                        acc[c] = 0.0;
                        cols.push(c);
                    }
                    acc[c] += a * other.data[kk];
                }
            }
            cols.sort_unstable();
            for &c in &cols {
                indices.push(c);
                data.push(acc[c]);
            }
            indptr[i + 1] = indices.len();
        }
        CsrMatrix { nrows: self.nrows, ncols: n, indptr, indices, data }
    }

    /// `alpha * self + beta * other`, same shape.
    pub fn add_scaled(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut data = Vec::with_capacity(self.nnz().max(other.nnz()));
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                if q == cb.len() || (p < ca.len() && ca[p] < cb[q]) {
                    indices.push(ca[p]);
                    data.push(alpha * va[p]);
                    p += 1;
                } else if p == ca.len() || cb[q] < ca[p] {
                    indices.push(cb[q]);
                    data.push(beta * vb[q]);
                    q += 1;
                } else {
                    indices.push(ca[p]);
                    data.push(alpha * va[p] + beta * vb[q]);
                    p += 1;
                    q += 1;
                }
            }
            indptr[i + 1] = indices.len();
        }
        CsrMatrix { nrows: self.nrows, ncols: self.ncols, indptr, indices, data }
    }

    /// Extracts the rows/columns selected by `row_map`/`col_map`, which map a
    /// full index to its reduced index (or `None` to drop it).
    pub fn submatrix(&self, row_map: &[Option<usize>], nr: usize, col_map: &[Option<usize>], nc: usize) -> CsrMatrix {
        assert_eq!(row_map.len(), self.nrows);
        assert_eq!(col_map.len(), self.ncols);
        let mut rows: Vec<(usize, usize)> = row_map
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.map(|r| (r, i)))
            .collect();
        rows.sort_unstable();
        assert_eq!(rows.len(), nr);
        let mut indptr = vec![0usize; nr + 1];
        let mut indices = Vec::new();
        let mut data = Vec::new();
        let mut buf: Vec<(usize, f64)> = Vec::new();
        for (r, i) in rows {
            buf.clear();
            for k in self.indptr[i]..self.indptr[i + 1] {
                if let Some(c) = col_map[self.indices[k]] {
                    buf.push((c, self.data[k]));
                }
            }
            buf.sort_by_key(|&(c, _)| c);
            for &(c, v) in &buf {
                indices.push(c);
                data.push(v);
            }
            indptr[r + 1] = indices.len();
        }
        CsrMatrix { nrows: nr, ncols: nc, indptr, indices, data }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A - A^T|`.
    pub fn asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let t = self.transpose();
        self.add_scaled(1.0, &t, -1.0).max_abs()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                d[i][self.indices[k]] += self.data[k];
            }
        }
        d
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                t.push((i, self.indices[k], self.data[k]));
            }
        }
        t
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
