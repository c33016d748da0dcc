//! Compressed sparse row storage for symmetric operators.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::solver::CholeskyFactor;

/// Square sparse matrix in CSR form with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn identity(dim: usize) -> Self {
        CsrMatrix {
            dim,
            row_ptr: (0..=dim).collect(),
            col_idx: (0..dim).collect(),
            values: vec![1.0; dim],
        }
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; dim + 1];
        for &(r, _, _) in triplets {
            counts[r + 1] += 1;
        }
        for i in 0..dim {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            assert!(r < dim && c < dim, "triplet ({r}, {c}) out of bounds for dim {dim}");
            cols[fill[r]] = c;
            vals[fill[r]] = v;
            fill[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..dim {
            scratch.clear();
            scratch.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_by_key(|&(c, _)| c);
            for &(c, v) in &scratch {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            dim,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Builds from rows already sorted by column.
    pub(crate) fn from_sorted_rows(dim: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            dim,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |k| vals[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for (r, yr) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            *yr = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `a * self + b * other`, over the union of both sparsity patterns.
    pub fn linear_combination(&self, a: f64, other: &CsrMatrix, b: f64) -> CsrMatrix {
        assert_eq!(self.dim, other.dim);
        let rows = (0..self.dim)
            .map(|r| {
                let (c1, v1) = self.row(r);
                let (c2, v2) = other.row(r);
                let mut out = Vec::with_capacity(c1.len().max(c2.len()));
                let (mut p, mut q) = (0, 0);
                while p < c1.len() || q < c2.len() {
                    let next1 = c1.get(p).copied().unwrap_or(usize::MAX);
                    let next2 = c2.get(q).copied().unwrap_or(usize::MAX);
                    if next1 == next2 {
                        out.push((next1, a * v1[p] + b * v2[q]));
                        p += 1;
                        q += 1;
                    } else if next1 < next2 {
                        out.push((next1, a * v1[p]));
                        p += 1;
                    } else {
                        out.push((next2, b * v2[q]));
                        q += 1;
                    }
                }
                out
            })
            .collect();
        CsrMatrix::from_sorted_rows(self.dim, rows)
    }

    pub fn scaled(&self, a: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= a);
        out
    }

    /// Keeps the rows and columns listed in `keep` (in that order).
    pub fn submatrix(&self, keep: &[usize]) -> CsrMatrix {
        let mut new_index = vec![usize::MAX; self.dim];
        for (k, &old) in keep.iter().enumerate() {
            new_index[old] = k;
        }
        let rows = keep
            .iter()
            .map(|&r| {
                let (cols, vals) = self.row(r);
                let mut row: Vec<(usize, f64)> = cols
                    .iter()
                    .zip(vals)
                    .filter(|(&c, _)| new_index[c] != usize::MAX)
                    .map(|(&c, &v)| (new_index[c], v))
                    .collect();
                row.sort_by_key(|&(c, _)| c);
                row
            })
            .collect();
        CsrMatrix::from_sorted_rows(keep.len(), rows)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |a_ij − a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        self.iter()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|r| self.get(r, r)).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.dim]; self.dim];
        for (r, c, v) in self.iter() {
            out[r][c] += v;
        }
        out
    }
}

/// Symmetric operator with an optional cached Cholesky factorization.
#[derive(Debug)]
pub struct SparseOperator {
    matrix: CsrMatrix,
    factor: OnceLock<Arc<CholeskyFactor>>,
}

impl Clone for SparseOperator {
    fn clone(&self) -> Self {
        let factor = OnceLock::new();
        if let Some(f) = self.factor.get() {
            let _ = factor.set(Arc::clone(f));
        }
        SparseOperator {
            matrix: self.matrix.clone(),
            factor,
        }
    }
}

impl From<CsrMatrix> for SparseOperator {
    fn from(matrix: CsrMatrix) -> Self {
        SparseOperator {
            matrix,
            factor: OnceLock::new(),
        }
    }
}

impl SparseOperator {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(x)
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.mul_vec_into(x, y)
    }

    /// `xᵀ A y`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.apply(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    /// Cholesky factorization, computed once and shared afterwards.
    pub fn factor(&self) -> Result<Arc<CholeskyFactor>> {
        if let Some(f) = self.factor.get() {
            return Ok(Arc::clone(f));
        }
        let f = Arc::new(CholeskyFactor::new(&self.matrix)?);
        Ok(Arc::clone(self.factor.get_or_init(|| f)))
    }

    pub fn is_factored(&self) -> bool {
        self.factor.get().is_some()
    }

    /// Coordinate text: one `row col value` line per stored entry.
    pub fn to_coordinate_text(&self) -> String {
        coordinate_text(self.matrix.iter())
    }

    pub fn write_coordinate(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_coordinate_text()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn coordinate_text(entries: impl Iterator<Item = (usize, usize, f64)>) -> String {
    let mut out = String::new();
    for (r, c, v) in entries {
        writeln!(out, "{r} {c} {v:?}").unwrap();
    }
    out
}

/// Parses `row col value` lines back into triplets.
pub fn parse_coordinate_text(text: &str) -> Result<Vec<(usize, usize, f64)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let mut it = line.split_whitespace();
            let mut next = || {
                it.next()
                    .ok_or_else(|| Error::parse("coordinate matrix", format!("short line {line:?}")))
            };
            let r = next()?;
            let c = next()?;
            let v = next()?;
            let bad = |e: &dyn std::fmt::Display| Error::parse("coordinate matrix", format!("{line:?}: {e}"));
            Ok((
                r.parse().map_err(|e| bad(&e))?,
                c.parse().map_err(|e| bad(&e))?,
                v.parse().map_err(|e| bad(&e))?,
            ))
        })
        .collect()
}

/// Sparse column with sorted row indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseColumn {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseColumn {
    pub fn dot(&self, v: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, &x)| x * v[i]).sum()
    }
}

/// Tall sparse matrix stored by columns, e.g. the multiscale basis `Φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    nrows: usize,
    columns: Vec<SparseColumn>,
}

impl BasisMatrix {
    pub fn new(nrows: usize, columns: Vec<SparseColumn>) -> Self {
        debug_assert!(columns.iter().all(|c| c.indices.windows(2).all(|w| w[0] < w[1])));
        debug_assert!(columns.iter().all(|c| c.indices.last().map_or(true, |&i| i < nrows)));
        BasisMatrix { nrows, columns }
    }

    /// Dense row-major `nrows × ncols` input.
    pub fn from_dense(nrows: usize, ncols: usize, data: &[f64]) -> Self {
        let columns = (0..ncols)
            .map(|c| {
                let (indices, values) = (0..nrows)
                    .filter(|&r| data[r * ncols + c] != 0.0)
                    .map(|r| (r, data[r * ncols + c]))
                    .unzip();
                SparseColumn { indices, values }
            })
            .collect();
        BasisMatrix { nrows, columns }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, c: usize) -> &SparseColumn {
        &self.columns[c]
    }

    pub fn columns(&self) -> &[SparseColumn] {
        &self.columns
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(|c| c.indices.len()).sum()
    }

    /// `Φ · c`.
    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.ncols());
        let mut out = vec![0.0; self.nrows];
        for (col, &a) in self.columns.iter().zip(coeffs) {
            if a != 0.0 {
                for (&i, &v) in col.indices.iter().zip(&col.values) {
                    out[i] += a * v;
                }
            }
        }
        out
    }

    /// `Φᵀ · v`.
    pub fn transpose_apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.nrows);
        self.columns.iter().map(|c| c.dot(v)).collect()
    }

    pub fn select(&self, keep: &[usize]) -> BasisMatrix {
        BasisMatrix {
            nrows: self.nrows,
            columns: keep.iter().map(|&k| self.columns[k].clone()).collect(),
        }
    }

    /// Re-indexes rows through `map` into a matrix with `nrows` rows.
    pub fn remap_rows(&self, nrows: usize, map: impl Fn(usize) -> usize) -> BasisMatrix {
        let columns = self
            .columns
            .iter()
            .map(|c| {
                let mut pairs: Vec<(usize, f64)> = c.indices.iter().map(|&i| map(i)).zip(c.values.iter().copied()).collect();
                pairs.sort_by_key(|&(i, _)| i);
                let (indices, values) = pairs.into_iter().unzip();
                SparseColumn { indices, values }
            })
            .collect();
        BasisMatrix { nrows, columns }
    }

    /// `op · Φ` for a square `op` with `op.dim() == nrows`.
    pub fn left_multiply(&self, op: &CsrMatrix) -> BasisMatrix {
        assert_eq!(op.dim(), self.nrows);
        let mut acc = vec![0.0; self.nrows];
        let mut mark = vec![false; self.nrows];
        let mut touched = Vec::new();
        let columns = self
            .columns
            .iter()
            .map(|col| {
                touched.clear();
                // op is symmetric in every use here, so row p equals column p.
                for (&p, &v) in col.indices.iter().zip(&col.values) {
                    let (cols, vals) = op.row(p);
                    for (&q, &a) in cols.iter().zip(vals) {
                        if !mark[q] {
                            mark[q] = true;
                            touched.push(q);
                        }
                        acc[q] += a * v;
                    }
                }
                touched.sort_unstable();
                let mut out = SparseColumn::default();
                for &q in &touched {
                    out.indices.push(q);
                    out.values.push(acc[q]);
                    acc[q] = 0.0;
                    mark[q] = false;
                }
                out
            })
            .collect();
        BasisMatrix {
            nrows: self.nrows,
            columns,
        }
    }

    /// Row-wise view: for every row, the `(column, value)` entries.
    fn rows(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows = vec![Vec::new(); self.nrows];
        for (c, col) in self.columns.iter().enumerate() {
            for (&i, &v) in col.indices.iter().zip(&col.values) {
                rows[i].push((c, v));
            }
        }
        rows
    }

    /// Galerkin products `Φᵀ op_k Φ` for several symmetric operators at once,
    /// all sharing the same sparsity pattern.
    pub fn galerkin(&self, ops: &[&CsrMatrix]) -> Vec<CsrMatrix> {
        let n = self.ncols();
        let rows = self.rows();
        let products: Vec<BasisMatrix> = ops.iter().map(|op| self.left_multiply(op)).collect();
        let mut accs: Vec<Vec<f64>> = vec![vec![0.0; n]; ops.len()];
        let mut mark = vec![false; n];
        let mut touched = Vec::new();
        let mut out_rows: Vec<Vec<Vec<(usize, f64)>>> = vec![Vec::with_capacity(n); ops.len()];
        for j in 0..n {
            touched.clear();
            for (k, prod) in products.iter().enumerate() {
                let col = &prod.columns[j];
                for (&p, &y) in col.indices.iter().zip(&col.values) {
                    for &(i, phi) in &rows[p] {
                        if !mark[i] {
                            mark[i] = true;
                            touched.push(i);
                        }
                        accs[k][i] += phi * y;
                    }
                }
            }
            touched.sort_unstable();
            for (k, acc) in accs.iter_mut().enumerate() {
                out_rows[k].push(touched.iter().map(|&i| (i, acc[i])).collect());
            }
            for &i in &touched {
                mark[i] = false;
                for acc in accs.iter_mut() {
                    acc[i] = 0.0;
                }
            }
        }
        // Column j of ΦᵀAΦ is row j by symmetry.
        out_rows.into_iter().map(|r| CsrMatrix::from_sorted_rows(n, r)).collect()
    }

    /// Coordinate text of the matrix entries.
    pub fn to_coordinate_text(&self) -> String {
        coordinate_text(self.columns.iter().enumerate().flat_map(|(c, col)| {
            col.indices.iter().zip(&col.values).map(move |(&r, &v)| (r, c, v))
        }))
    }
}
