//! Compressed sparse row operators and the linear solvers used on them.

use std::fmt::Write as _;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLlt, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{MatMut, Side};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real sparse matrix in CSR form with sorted, duplicate-free column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    /// Set when the operator was assembled from a symmetric form.
    pub symmetric: bool,
}

impl SparseOperator {
    /// Builds a CSR matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseOperator { nrows, ncols, row_ptr, col_idx, values, symmetric: false }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// Position of entry `(i, j)` in the value array, if stored.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.col_idx[start..self.row_ptr[i + 1]].binary_search(&j).ok().map(|p| start + p)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows) {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    /// Applies the real operator to real and imaginary parts independently.
    pub fn apply_complex(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.nrows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).fold(Complex64::new(0.0, 0.0), |acc, (&j, &v)| acc + x[j] * v)
            })
            .collect()
    }

    /// `v^H A u`, i.e. the sesquilinear form `(A u, v)`.
    pub fn form(&self, u: &[Complex64], v: &[Complex64]) -> Complex64 {
        self.apply_complex(u).iter().zip(v).map(|(au, v)| au * v.conj()).sum()
    }

    pub fn transpose(&self) -> SparseOperator {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            triplets.extend(cols.iter().zip(vals).map(|(&j, &v)| (j, i, v)));
        }
        let mut t = SparseOperator::from_triplets(self.ncols, self.nrows, triplets);
        t.symmetric = self.symmetric;
        t
    }

    /// `max |A - A^T|` over all entries.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows).map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in dense.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] = v;
            }
        }
        dense
    }

    /// Coordinate text export: one `i j value` line per stored entry.
    pub fn to_coordinate_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let _ = writeln!(out, "{i} {j} {v:e}");
            }
        }
        out
    }

    fn as_faer(&self) -> SparseColMatRef<'_, usize, f64> {
        // CSR storage of A is CSC storage of A^T.
        let sym = SymbolicSparseColMatRef::new_checked(self.ncols, self.nrows, &self.row_ptr, None, &self.col_idx);
        SparseColMatRef::new(sym, &self.values)
    }
}

/// Which linear solver backs the implicit solves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LinearSolverKind {
    /// Sparse LU with partial pivoting.
    #[default]
    Direct,
    /// Jacobi-preconditioned BiCGSTAB.
    Iterative { tol: f64, max_iter: usize },
}

/// Backward-error target for direct solves.
pub const DIRECT_SOLVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Linear solver for a sequence of operators sharing one sparsity pattern.
///
/// The direct variant keeps its last LU factorization and uses it to
/// precondition GMRES on later operators, refactorizing only when that stops
/// converging quickly. Every solve meets the same backward-error target.
pub struct LinearSolver {
    kind: LinearSolverKind,
    pattern: Option<(Vec<usize>, Vec<usize>)>,
    symbolic: Option<SymbolicLu<usize>>,
    lu: Option<Lu<usize, f64>>,
    factorizations: usize,
}

impl std::fmt::Debug for LinearSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearSolver")
            .field("kind", &self.kind)
            .field("factorizations", &self.factorizations)
            .finish_non_exhaustive()
    }
}

/// Krylov iterations allowed on a reused factorization before refactorizing.
const REUSE_MAX_ITER: usize = 20;
/// Krylov iterations allowed right after a fresh factorization.
const FRESH_MAX_ITER: usize = 40;

impl LinearSolver {
    pub fn new(kind: LinearSolverKind) -> Self {
        LinearSolver { kind, pattern: None, symbolic: None, lu: None, factorizations: 0 }
    }

    pub fn kind(&self) -> LinearSolverKind {
        self.kind
    }

    /// Numeric factorizations computed so far.
    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    /// Computes a fresh LU factorization of `a`.
    pub fn factorize(&mut self, a: &SparseOperator) -> Result<()> {
        let same = self.pattern.as_ref().is_some_and(|(rp, ci)| rp == &a.row_ptr && ci == &a.col_idx);
        if !same || self.symbolic.is_none() {
            let symbolic = SymbolicLu::try_new(a.as_faer().symbolic())
                .map_err(|e| Error::LinearSolveFailed(format!("symbolic LU: {e:?}")))?;
            self.symbolic = Some(symbolic);
            self.pattern = Some((a.row_ptr.clone(), a.col_idx.clone()));
        }
        let symbolic = self.symbolic.clone().expect("symbolic factorization cached");
        self.lu = None;
        let lu = Lu::try_new_with_symbolic(symbolic, a.as_faer())
            .map_err(|e| Error::LinearSolveFailed(format!("numeric LU: {e:?}")))?;
        self.lu = Some(lu);
        self.factorizations += 1;
        Ok(())
    }

    pub fn solve(&mut self, a: &SparseOperator, b: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
        match self.kind {
            LinearSolverKind::Direct => self.direct_solve(a, b),
            LinearSolverKind::Iterative { tol, max_iter } => bicgstab(a, b, tol, max_iter),
        }
    }

    fn direct_solve(&mut self, a: &SparseOperator, b: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
        let reusable =
            self.lu.is_some() && self.pattern.as_ref().is_some_and(|(rp, ci)| rp == &a.row_ptr && ci == &a.col_idx);
        if reusable {
            let lu = self.lu.as_ref().expect("factorization present");
            if let Some(out) = gmres(a, b, |v| lu_solve(lu, v), REUSE_MAX_ITER) {
                return Ok(out);
            }
            log::debug!("factorization reuse stalled; refactorizing");
        }
        self.factorize(a)?;
        let lu = self.lu.as_ref().expect("factorization present");
        gmres(a, b, |v| lu_solve(lu, v), FRESH_MAX_ITER).ok_or_else(|| {
            Error::LinearSolveFailed(format!(
                "backward error above {DIRECT_SOLVE_TOL:e} after {FRESH_MAX_ITER} refinement iterations"
            ))
        })
    }
}

fn lu_solve(lu: &Lu<usize, f64>, x: &mut [f64]) {
    let n = x.len();
    lu.solve_transpose_in_place(MatMut::from_column_major_slice_mut(x, n, 1));
}

/// Normwise backward error `‖b - Ax‖∞ / (‖A‖∞ ‖x‖∞ + ‖b‖∞)`.
pub fn backward_error(a: &SparseOperator, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.apply(x);
    let rn = b.iter().zip(&ax).fold(0.0f64, |m, (b, ax)| m.max((b - ax).abs()));
    if rn == 0.0 {
        return 0.0;
    }
    rn / (a.norm_inf() * inf_norm(x) + inf_norm(b)).max(f64::MIN_POSITIVE)
}

/// Right-preconditioned restarted GMRES started from `x = P⁻¹b`, run until
/// the normwise backward error is below [`DIRECT_SOLVE_TOL`]. Returns `None`
/// when `max_iter` iterations do not suffice.
fn gmres<P>(a: &SparseOperator, b: &[f64], precond: P, max_iter: usize) -> Option<(Vec<f64>, SolveStats)>
where
    P: Fn(&mut [f64]),
{
    let n = b.len();
    let a_norm = a.norm_inf();
    let b_norm = inf_norm(b);
    let mut x = b.to_vec();
    precond(&mut x);
    let mut iterations = 0;
    loop {
        let ax = a.apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
        let denom = (a_norm * inf_norm(&x) + b_norm).max(f64::MIN_POSITIVE);
        let backward = inf_norm(&r) / denom;
        if !backward.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return None;
        }
        if backward <= DIRECT_SOLVE_TOL {
            return Some((x, SolveStats { iterations, relative_residual: backward }));
        }
        if iterations >= max_iter {
            return None;
        }
        let target = 0.5 * DIRECT_SOLVE_TOL * denom;
        let beta = l2(&r);
        let m = max_iter - iterations;
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h: Vec<Vec<f64>> = Vec::new();
        let (mut cs, mut sn): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
        let mut g = vec![beta];
        for j in 0..m {
            let mut z = basis[j].clone();
            precond(&mut z);
            let mut w = a.apply(&z);
            let mut col = vec![0.0; j + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij = dotr(&w, v);
                col[i] = hij;
                for (w, v) in w.iter_mut().zip(v) {
                    *w -= hij * v;
                }
            }
            let wn = l2(&w);
            col[j + 1] = wn;
            for i in 0..j {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let rho = col[j].hypot(col[j + 1]);
            let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (col[j] / rho, col[j + 1] / rho) };
            col[j] = rho;
            col[j + 1] = 0.0;
            cs.push(c);
            sn.push(s);
            g.push(-s * g[j]);
            g[j] *= c;
            h.push(col);
            iterations += 1;
            let done = g[j + 1].abs() <= target || wn == 0.0;
            if !done && j + 1 < m {
                basis.push(w.iter().map(|v| v / wn).collect());
                continue;
            }
            let k = j + 1;
            let mut y = vec![0.0; k];
            for i in (0..k).rev() {
                let tail: f64 = (i + 1..k).map(|l| h[l][i] * y[l]).sum();
                y[i] = (g[i] - tail) / h[i][i];
            }
            let mut update = vec![0.0; n];
            for (v, yi) in basis.iter().zip(&y) {
                for (u, v) in update.iter_mut().zip(v) {
                    *u += yi * v;
                }
            }
            precond(&mut update);
            for (x, u) in x.iter_mut().zip(&update) {
                *x += u;
            }
            break;
        }
    }
}

/// Sparse Cholesky solve for symmetric positive definite operators.
pub fn solve_spd(a: &SparseOperator, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mat = a.as_faer();
    let symbolic = SymbolicLlt::try_new(mat.symbolic(), Side::Lower)
        .map_err(|e| Error::LinearSolveFailed(format!("symbolic Cholesky: {e:?}")))?;
    let llt = Llt::try_new_with_symbolic(symbolic, mat, Side::Lower).map_err(|e| {
        Error::LinearSolveFailed(format!("operator is not positive definite ({e:?}); penalty too small?"))
    })?;
    let scale = a.norm_inf();
    rhs.iter()
        .map(|b| {
            let mut x = b.clone();
            let solve = |x: &mut [f64]| {
                let n = x.len();
                llt.solve_in_place(MatMut::from_column_major_slice_mut(x, n, 1));
            };
            solve(&mut x);
            for _ in 0..3 {
                let ax = a.apply(&x);
                let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
                let backward = inf_norm(&r) / (scale * inf_norm(&x) + inf_norm(b)).max(f64::MIN_POSITIVE);
                if backward <= DIRECT_SOLVE_TOL {
                    break;
                }
                solve(&mut r);
                for (x, d) in x.iter_mut().zip(&r) {
                    *x += d;
                }
            }
            if x.iter().all(|v| v.is_finite()) {
                Ok(x)
            } else {
                Err(Error::LinearSolveFailed("non-finite Cholesky solution".into()))
            }
        })
        .collect()
}

/// Jacobi-preconditioned BiCGSTAB to relative residual `tol`.
pub fn bicgstab(a: &SparseOperator, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let inv_diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = a.get(i, i);
            if d != 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&inv_diag).map(|(v, d)| v * d).collect() };
    let bnorm = l2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, SolveStats::default()));
    }
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dotr(&r_hat, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y = precond(&p);
        v = a.apply(&y);
        alpha = rho / dotr(&r_hat, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(r, v)| r - alpha * v).collect();
        if l2(&s) <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok((x, SolveStats { iterations: it, relative_residual: l2(&s) / bnorm }));
        }
        let z = precond(&s);
        let t = a.apply(&z);
        let tt = dotr(&t, &t);
        omega = if tt > 0.0 { dotr(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        let rel = l2(&r) / bnorm;
        if rel <= tol {
            return Ok((x, SolveStats { iterations: it, relative_residual: rel }));
        }
        if omega == 0.0 || !rel.is_finite() {
            break;
        }
    }
    Err(Error::LinearSolveFailed(format!("BiCGSTAB did not reach relative residual {tol:e} in {max_iter} iterations")))
}

fn dotr(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

fn l2(a: &[f64]) -> f64 {
    dotr(a, a).sqrt()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> SparseOperator {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        let mut a = SparseOperator::from_triplets(n, n, t);
        a.symmetric = true;
        a
    }

    #[test]
    fn duplicates_are_summed() {
        let a = SparseOperator::from_triplets(2, 2, vec![(1, 0, 1.0), (0, 0, 2.0), (1, 0, 3.0)]);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.get(1, 0), 4.0);
        assert_eq!(a.get(0, 1), 0.0);
    }

    #[test]
    fn direct_solves_nonsymmetric() {
        let a = SparseOperator::from_triplets(
            3,
            3,
            vec![(0, 0, 4.0), (0, 1, 1.0), (1, 0, -2.0), (1, 1, 3.0), (2, 2, 1.0), (2, 0, 5.0)],
        );
        let x_true = [1.0, -2.0, 0.5];
        let b = a.apply(&x_true);
        let (x, _) = LinearSolver::new(LinearSolverKind::Direct).solve(&a, &b).unwrap();
        for (x, t) in x.iter().zip(x_true) {
            assert!((x - t).abs() < 1e-13);
        }
    }

    #[test]
    fn iterative_and_cholesky_agree_with_direct() {
        let a = laplace_1d(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let (xd, _) = LinearSolver::new(LinearSolverKind::Direct).solve(&a, &b).unwrap();
        let (xi, stats) = bicgstab(&a, &b, 1e-12, 1000).unwrap();
        assert!(stats.relative_residual <= 1e-12);
        let xc = solve_spd(&a, std::slice::from_ref(&b)).unwrap().remove(0);
        for i in 0..50 {
            assert!((xd[i] - xi[i]).abs() < 1e-8);
            assert!((xd[i] - xc[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = laplace_1d(4);
        a.values.iter_mut().for_each(|v| *v = -*v);
        assert!(matches!(solve_spd(&a, &[vec![1.0; 4]]), Err(Error::LinearSolveFailed(_))));
    }

    #[test]
    fn coordinate_export() {
        let a = laplace_1d(2);
        assert_eq!(a.to_coordinate_text(), "0 0 2e0\n0 1 -1e0\n1 0 -1e0\n1 1 2e0\n");
        assert_eq!(a.max_asymmetry(), 0.0);
    }
}
