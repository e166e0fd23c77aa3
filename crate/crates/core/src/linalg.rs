//! Dense/sparse operator actions and the small linear solvers built on them.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows per rayon task in sparse products; keeps small problems serial.
const PAR_ROWS: usize = 2048;

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed,
    /// columns sorted within each row, exact zeros kept.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::InvalidArgument(format!(
                    "triplet ({r}, {c}) outside {nrows}x{ncols}"
                )));
            }
            per_row[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        indptr.push(0);
        for row in per_row.iter_mut() {
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut acc = 0.0;
                while k < row.len() && row[k].0 == c {
                    acc += row[k].1;
                    k += 1;
                }
                indices.push(c);
                data.push(acc);
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
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

    /// Iterator over `(col, value)` of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        self.indices[a..b]
            .iter()
            .copied()
            .zip(self.data[a..b].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        match self.indices[a..b].binary_search(&c) {
            Ok(k) => self.data[a + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.nrows);
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        assert_eq!(x.len(), self.ncols, "sparse matvec: length mismatch");
        assert_eq!(y.len(), self.nrows, "sparse matvec: output length mismatch");
        let xs = x.as_slice();
        let row_dot = |r: usize| -> f64 {
            let (a, b) = (self.indptr[r], self.indptr[r + 1]);
            let mut acc = 0.0;
            for k in a..b {
                acc += self.data[k] * xs[self.indices[k]];
            }
            acc
        };
        let ys = y.as_mut_slice();
        if self.nrows >= 2 * PAR_ROWS {
            ys.par_chunks_mut(PAR_ROWS)
                .enumerate()
                .for_each(|(chunk, out)| {
                    let base = chunk * PAR_ROWS;
                    for (k, slot) in out.iter_mut().enumerate() {
                        *slot = row_dot(base + k);
                    }
                });
        } else {
            for (r, slot) in ys.iter_mut().enumerate() {
                *slot = row_dot(r);
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let mut trips = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                trips.push((c, r, v));
            }
        }
        Self::from_triplets(self.ncols, self.nrows, &trips).expect("indices in range")
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `diag(left) * self * diag(right)`.
    pub fn diag_scaled(&self, left: &[f64], right: &[f64]) -> Self {
        assert_eq!(left.len(), self.nrows);
        assert_eq!(right.len(), self.ncols);
        let mut out = self.clone();
        for r in 0..self.nrows {
            for k in out.indptr[r]..out.indptr[r + 1] {
                out.data[k] *= left[r] * right[out.indices[k]];
            }
        }
        out
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &Self) -> Self {
        assert_eq!(self.nrows, other.nrows);
        assert_eq!(self.ncols, other.ncols);
        let mut trips = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.nrows {
            trips.extend(self.row(r).map(|(c, v)| (r, c, v)));
            trips.extend(other.row(r).map(|(c, v)| (r, c, s * v)));
        }
        Self::from_triplets(self.nrows, self.ncols, &trips).expect("indices in range")
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// The ambient rule `u -> Mu` of an operator.
#[derive(Clone, Debug)]
pub enum Action {
    Dense(DMatrix<f64>),
    Sparse(CsrMatrix),
}

impl Action {
    pub fn dim(&self) -> usize {
        match self {
            Action::Dense(m) => m.nrows(),
            Action::Sparse(m) => m.nrows(),
        }
    }

    pub fn is_square(&self) -> bool {
        match self {
            Action::Dense(m) => m.is_square(),
            Action::Sparse(m) => m.nrows() == m.ncols(),
        }
    }

    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        match self {
            Action::Dense(m) => m * u,
            Action::Sparse(m) => m.matvec(u),
        }
    }

    pub fn apply_into(&self, u: &DVector<f64>, out: &mut DVector<f64>) {
        match self {
            Action::Dense(m) => m.mul_to(u, out),
            Action::Sparse(m) => m.matvec_into(u, out),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Action::Dense(m) => m.clone(),
            Action::Sparse(m) => m.to_dense(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        match self {
            Action::Dense(m) => Action::Dense(m * s),
            Action::Sparse(m) => Action::Sparse(m.scaled(s)),
        }
    }

    /// Adjoint with respect to `diag(w)`: `W^{-1} M^T W`.
    pub fn weighted_adjoint(&self, w: &[f64]) -> Self {
        let inv: Vec<f64> = w.iter().map(|x| 1.0 / x).collect();
        match self {
            Action::Dense(m) => {
                let mut t = m.transpose();
                for r in 0..t.nrows() {
                    for c in 0..t.ncols() {
                        t[(r, c)] *= inv[r] * w[c];
                    }
                }
                Action::Dense(t)
            }
            Action::Sparse(m) => Action::Sparse(m.transpose().diag_scaled(&inv, w)),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Action::Sparse(_))
    }
}

/// Matrix exponential by scaling and squaring with Pade approximation.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().exp()
}

/// Sign of the determinant computed from an LU factorization, or `None`
/// if a pivot is exactly zero.
pub fn det_sign(m: &DMatrix<f64>) -> Option<f64> {
    assert!(m.is_square());
    let lu = m.clone().lu();
    let mut sign = lu.p().determinant::<f64>();
    let u = lu.u();
    for k in 0..u.nrows() {
        let d = u[(k, k)];
        if d == 0.0 {
            return None;
        }
        if d < 0.0 {
            sign = -sign;
        }
    }
    Some(sign)
}

/// Outcome of a GMRES solve.
#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Restarted GMRES with modified Gram-Schmidt Arnoldi and Givens rotations.
///
/// Converges when `||b - A x|| <= tol * ||b||`. If the iteration budget
/// runs out, the best iterate is accepted when its residual is within
/// `100 * tol`; otherwise [`Error::SolverStalled`] is returned.
pub fn gmres<F>(
    apply: F,
    b: &DVector<f64>,
    x0: DVector<f64>,
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<GmresOutcome>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = b.len();
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return Ok(GmresOutcome {
            x: DVector::zeros(n),
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let restart = restart.clamp(1, n.max(1));
    let mut x = x0;
    let mut total = 0;
    let mut rel;
    loop {
        let r = b - apply(&x);
        let beta = r.norm();
        rel = beta / bnorm;
        if rel <= tol || total >= max_iter {
            break;
        }
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(restart + 1);
        basis.push(r / beta);
        let mut h = DMatrix::<f64>::zeros(restart + 1, restart);
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            let mut w = apply(&basis[k]);
            for (i, q) in basis.iter().enumerate() {
                let hik = w.dot(q);
                h[(i, k)] = hik;
                w.axpy(-hik, q, 1.0);
            }
            // One reorthogonalization pass keeps the basis clean near round-off.
            for (i, q) in basis.iter().enumerate() {
                let c = w.dot(q);
                h[(i, k)] += c;
                w.axpy(-c, q, 1.0);
            }
            let wn = w.norm();
            h[(k + 1, k)] = wn;
            for i in 0..k {
                let t = cs[i] * h[(i, k)] + sn[i] * h[(i + 1, k)];
                h[(i + 1, k)] = -sn[i] * h[(i, k)] + cs[i] * h[(i + 1, k)];
                h[(i, k)] = t;
            }
            let (a, bb) = (h[(k, k)], h[(k + 1, k)]);
            let d = a.hypot(bb);
            if d == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = a / d;
                sn[k] = bb / d;
            }
            h[(k, k)] = d;
            h[(k + 1, k)] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            total += 1;
            if wn == 0.0 || g[k + 1].abs() <= 0.1 * tol * bnorm || total >= max_iter {
                break;
            }
            basis.push(w / wn);
        }
        // Back substitution for the small triangular system.
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut acc = g[i];
            for j in i + 1..k_used {
                acc -= h[(i, j)] * y[j];
            }
            y[i] = if h[(i, i)] != 0.0 { acc / h[(i, i)] } else { 0.0 };
        }
        for (j, yj) in y.iter().enumerate() {
            x.axpy(*yj, &basis[j], 1.0);
        }
    }
    if rel <= 100.0 * tol {
        Ok(GmresOutcome {
            x,
            iterations: total,
            relative_residual: rel,
        })
    } else {
        Err(Error::SolverStalled {
            residual: rel,
            iterations: total,
        })
    }
}
