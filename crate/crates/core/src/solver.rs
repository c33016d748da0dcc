//! Symmetric positive definite solvers: envelope (skyline) Cholesky for the
//! banded systems produced by row-major structured grids, and Jacobi
//! preconditioned conjugate gradients as a fallback.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, SparseOperator};

/// Cholesky factor `L` stored row by row over each row's envelope
/// `first[i]..=i`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    first: Vec<usize>,
    offset: Vec<usize>,
    values: Vec<f64>,
    dropped: Vec<bool>,
}

impl CholeskyFactor {
    /// Factorizes an SPD matrix; fails on the first non-positive pivot.
    pub fn new(matrix: &CsrMatrix) -> Result<Self> {
        Self::factorize(matrix, None)
    }

    /// Factorizes while discarding rows whose pivot falls below
    /// `rel_tol * a_ii`. The dropped rows/columns behave as if removed from
    /// the matrix: their solution components are zero.
    pub fn with_dropping(matrix: &CsrMatrix, rel_tol: f64) -> Result<Self> {
        Self::factorize(matrix, Some(rel_tol))
    }

    fn factorize(matrix: &CsrMatrix, drop_tol: Option<f64>) -> Result<Self> {
        let n = matrix.dim();
        let mut first = Vec::with_capacity(n);
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            let (cols, _) = matrix.row(i);
            let f = cols.first().copied().unwrap_or(i).min(i);
            first.push(f);
            offset.push(offset[i] + i - f + 1);
        }
        let mut values = vec![0.0; offset[n]];
        let mut dropped = vec![false; n];

        for i in 0..n {
            let fi = first[i];
            let base = offset[i];
            let (cols, vals) = matrix.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                if c <= i {
                    values[base + c - fi] = v;
                }
            }
            let diag = values[base + i - fi];
            for j in fi..i {
                let idx = base + j - fi;
                if dropped[j] {
                    values[idx] = 0.0;
                    continue;
                }
                let fj = first[j];
                let start = fi.max(fj);
                let row_i = &values[base + start - fi..base + j - fi];
                let row_j = &values[offset[j] + start - fj..offset[j] + j - fj];
                let dot: f64 = row_i.iter().zip(row_j).map(|(a, b)| a * b).sum();
                let ljj = values[offset[j + 1] - 1];
                values[idx] = (values[idx] - dot) / ljj;
            }
            let sq: f64 = values[base..base + i - fi].iter().map(|v| v * v).sum();
            let pivot = diag - sq;
            match drop_tol {
                Some(tol) if !(pivot > tol * diag.abs()) => {
                    dropped[i] = true;
                    values[base..base + i - fi].iter_mut().for_each(|v| *v = 0.0);
                    values[base + i - fi] = 1.0;
                }
                None if !(pivot > 0.0) || !pivot.is_finite() => {
                    return Err(Error::NotPositiveDefinite { row: i, pivot });
                }
                _ => values[base + i - fi] = pivot.sqrt(),
            }
        }
        Ok(CholeskyFactor {
            first,
            offset,
            values,
            dropped,
        })
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    /// Indices of rows discarded during factorization.
    pub fn dropped(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.dropped[i]).collect()
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.dim();
        assert_eq!(x.len(), n);
        for i in 0..n {
            if self.dropped[i] {
                x[i] = 0.0;
                continue;
            }
            let fi = self.first[i];
            let row = &self.values[self.offset[i]..self.offset[i + 1]];
            let dot: f64 = row[..i - fi].iter().zip(&x[fi..i]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - dot) / row[i - fi];
        }
        for i in (0..n).rev() {
            if self.dropped[i] {
                x[i] = 0.0;
                continue;
            }
            let fi = self.first[i];
            let row = &self.values[self.offset[i]..self.offset[i + 1]];
            x[i] /= row[i - fi];
            let xi = x[i];
            for (xp, l) in x[fi..i].iter_mut().zip(&row[..i - fi]) {
                *xp -= l * xi;
            }
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    Direct,
    ConjugateGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSolveConfig {
    pub method: SolveMethod,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for LinearSolveConfig {
    fn default() -> Self {
        LinearSolveConfig {
            method: SolveMethod::Direct,
            rel_tol: 1e-12,
            max_iter: 10_000,
        }
    }
}

impl LinearSolveConfig {
    pub fn cg() -> Self {
        LinearSolveConfig {
            method: SolveMethod::ConjugateGradient,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-6) {
            return Err(Error::InvalidSolverConfig(format!(
                "relative tolerance {} outside (0, 1e-6]",
                self.rel_tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidSolverConfig("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Factorizations of `M + τA`, keyed by the exact bits of `τ`.
#[derive(Debug, Default)]
pub struct FactorCache {
    entries: Mutex<Vec<(u64, Arc<CholeskyFactor>)>>,
}

impl FactorCache {
    pub fn get_or_factor(&self, tau: f64, mass: &CsrMatrix, stiffness: &CsrMatrix) -> Result<Arc<CholeskyFactor>> {
        let key = tau.to_bits();
        if let Some(f) = self.lookup(key) {
            return Ok(f);
        }
        let matrix = if tau == 0.0 {
            mass.clone()
        } else {
            mass.linear_combination(1.0, stiffness, tau)
        };
        let factor = Arc::new(CholeskyFactor::new(&matrix)?);
        let mut entries = self.entries.lock().unwrap();
        if let Some((_, f)) = entries.iter().find(|(k, _)| *k == key) {
            return Ok(f.clone());
        }
        entries.push((key, factor.clone()));
        Ok(factor)
    }

    fn lookup(&self, key: u64) -> Option<Arc<CholeskyFactor>> {
        let entries = self.entries.lock().unwrap();
        entries.iter().find(|(k, _)| *k == key).map(|(_, f)| f.clone())
    }

    /// Step sizes in insertion order.
    pub fn keys(&self) -> Vec<f64> {
        self.entries.lock().unwrap().iter().map(|(k, _)| f64::from_bits(*k)).collect()
    }
}

/// Columns kept by a diagonally pivoted Cholesky factorization of an SPSD
/// matrix: elimination stops once every remaining Schur diagonal falls below
/// `rel_tol` times its original value. Returned in increasing order.
pub fn pivoted_rank_columns(matrix: &CsrMatrix, rel_tol: f64) -> Vec<usize> {
    let n = matrix.dim();
    let orig = matrix.diagonal();
    let mut d = orig.clone();
    let mut chosen = vec![false; n];
    let mut factor_cols: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    let ratio = |i: usize, d: &[f64]| if orig[i] > 0.0 { d[i] / orig[i] } else { 0.0 };
    loop {
        let Some(p) = (0..n)
            .filter(|&i| !chosen[i])
            .max_by(|&a, &b| ratio(a, &d).total_cmp(&ratio(b, &d)).then(b.cmp(&a)))
        else {
            break;
        };
        if !(ratio(p, &d) > rel_tol) {
            break;
        }
        chosen[p] = true;
        kept.push(p);
        let mut col = vec![0.0; n];
        let (cols, vals) = matrix.row(p);
        for (&c, &v) in cols.iter().zip(vals) {
            col[c] = v;
        }
        for l in &factor_cols {
            let lp = l[p];
            if lp != 0.0 {
                col.iter_mut().zip(l).for_each(|(c, x)| *c -= lp * x);
            }
        }
        let pivot = d[p].sqrt();
        for i in 0..n {
            if chosen[i] && i != p {
                col[i] = 0.0;
            } else {
                col[i] /= pivot;
            }
        }
        for i in (0..n).filter(|&i| !chosen[i]) {
            d[i] -= col[i] * col[i];
        }
        d[p] = 0.0;
        factor_cols.push(col);
    }
    kept.sort_unstable();
    kept
}

/// Estimate of the smallest eigenvalue of the SPD matrix factored in
/// `factor`, by inverse iteration.
pub fn smallest_eigenvalue(matrix: &CsrMatrix, factor: &CholeskyFactor, iterations: usize) -> f64 {
    let n = matrix.dim();
    if n == 0 {
        return f64::INFINITY;
    }
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0).collect();
    let mut rayleigh = f64::INFINITY;
    for _ in 0..iterations {
        let nx = norm(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let y = factor.solve(&x);
        let ny = norm(&y);
        let ay = matrix.mul_vec(&y);
        rayleigh = y.iter().zip(&ay).map(|(a, b)| a * b).sum::<f64>() / (ny * ny);
        x = y;
    }
    rayleigh
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn residual(op: &CsrMatrix, x: &[f64], rhs: &[f64]) -> Vec<f64> {
    let ax = op.mul_vec(x);
    rhs.iter().zip(&ax).map(|(b, a)| b - a).collect()
}

/// Solves `op · x = rhs`.
pub fn solve(op: &SparseOperator, rhs: &[f64], cfg: &LinearSolveConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if rhs.len() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            actual: rhs.len(),
        });
    }
    if let Some((i, v)) = rhs.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidConfig(format!("right-hand side entry {i} is {v}")));
    }
    let bnorm = norm(rhs);
    if bnorm == 0.0 {
        return Ok(vec![0.0; rhs.len()]);
    }
    match cfg.method {
        SolveMethod::Direct => {
            let factor = op.factor()?;
            let mut x = factor.solve(rhs);
            // A couple of refinement sweeps recover the tolerance on
            // ill-conditioned high-contrast systems.
            for _ in 0..2 {
                let r = residual(op.matrix(), &x, rhs);
                if norm(&r) <= cfg.rel_tol * bnorm {
                    break;
                }
                let dx = factor.solve(&r);
                x.iter_mut().zip(&dx).for_each(|(a, d)| *a += d);
            }
            Ok(x)
        }
        SolveMethod::ConjugateGradient => conjugate_gradient(op.matrix(), rhs, cfg),
    }
}

fn conjugate_gradient(a: &CsrMatrix, rhs: &[f64], cfg: &LinearSolveConfig) -> Result<Vec<f64>> {
    let n = a.dim();
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let bnorm = norm(rhs);
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for it in 0..cfg.max_iter {
        let rnorm = norm(&r);
        if rnorm <= cfg.rel_tol * bnorm {
            return Ok(x);
        }
        a.mul_vec_into(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::NotPositiveDefinite { row: it, pivot: pap });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = norm(&residual(a, &x, rhs)) / bnorm;
    if res <= cfg.rel_tol {
        Ok(x)
    } else {
        Err(Error::NoConvergence {
            iterations: cfg.max_iter,
            residual: res,
        })
    }
}
