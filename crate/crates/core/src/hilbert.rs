//! Weighted inner-product spaces and subspace utilities.
//!
//! A [`Space`] is `R^n` with a diagonal Gram matrix `diag(w)`, so that
//! `inner(u, v) = sum_i w_i u_i v_i`. The weights are quadrature or cell
//! weights of a discretized `L^2`. Every routine in this module works with
//! respect to that inner product.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Default relative rank tolerance for complements and deficiency indices.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Space {
    weights: Vec<f64>,
    label: String,
}

impl Space {
    pub fn new(weights: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidSpace("dimension must be positive".into()));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::InvalidSpace(format!(
                "gram weight {i} is {w}; weights must be finite and positive"
            )));
        }
        Ok(Self {
            weights,
            label: label.into(),
        })
    }

    /// `dim` copies of the same weight.
    pub fn uniform(dim: usize, weight: f64, label: impl Into<String>) -> Result<Self> {
        Self::new(vec![weight; dim], label)
    }

    /// Trapezoid weights for `nodes` equispaced nodes on `[a, b]`.
    pub fn trapezoid(nodes: usize, a: f64, b: f64, label: impl Into<String>) -> Result<Self> {
        if nodes < 2 || !(b > a) {
            return Err(Error::InvalidSpace(
                "trapezoid rule needs at least two nodes on a non-empty interval".into(),
            ));
        }
        let h = (b - a) / (nodes - 1) as f64;
        let mut w = vec![h; nodes];
        w[0] = 0.5 * h;
        w[nodes - 1] = 0.5 * h;
        Self::new(w, label)
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Sum of the weights (the measure of the discretized domain).
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Checked weighted inner product.
    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        check_len(self.dim(), u.len())?;
        check_len(self.dim(), v.len())?;
        Ok(self.dot(u, v))
    }

    /// Unchecked weighted inner product; panics on length mismatch.
    pub fn dot(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        assert_eq!(u.len(), self.dim(), "vector length does not match space");
        assert_eq!(v.len(), self.dim(), "vector length does not match space");
        self.weights
            .iter()
            .zip(u.iter().zip(v.iter()))
            .map(|(w, (a, b))| w * (a * b))
            .sum()
    }

    pub fn norm(&self, u: &DVector<f64>) -> f64 {
        self.dot(u, u).sqrt()
    }

    /// Distance `||u - v||`.
    pub fn distance(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        assert_eq!(u.len(), v.len());
        self.weights
            .iter()
            .zip(u.iter().zip(v.iter()))
            .map(|(w, (a, b))| w * (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Unsigned angle between two nonzero vectors, in radians.
    pub fn angle(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let c = self.dot(u, v) / (self.norm(u) * self.norm(v));
        c.abs().min(1.0).acos()
    }

    pub(crate) fn sqrt_weights(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.weights.iter().map(|w| w.sqrt()))
    }
}

/// A finite list of vectors in a [`Space`].
#[derive(Clone, Debug)]
pub struct SubspaceBasis {
    space: Arc<Space>,
    vectors: Vec<DVector<f64>>,
    orthonormal: bool,
}

impl SubspaceBasis {
    /// Wraps `vectors` without orthonormalizing them.
    pub fn new(space: Arc<Space>, vectors: Vec<DVector<f64>>) -> Result<Self> {
        for v in &vectors {
            check_len(space.dim(), v.len())?;
        }
        Ok(Self {
            space,
            vectors,
            orthonormal: false,
        })
    }

    pub fn empty(space: Arc<Space>) -> Self {
        Self {
            space,
            vectors: Vec::new(),
            orthonormal: true,
        }
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn vectors(&self) -> &[DVector<f64>] {
        &self.vectors
    }

    pub fn into_vectors(self) -> Vec<DVector<f64>> {
        self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    /// Columns are the basis vectors.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.space.dim();
        let mut m = DMatrix::zeros(n, self.vectors.len());
        for (j, v) in self.vectors.iter().enumerate() {
            m.set_column(j, v);
        }
        m
    }

    /// `max_ij |inner(b_i, b_j) - delta_ij|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.vectors.iter().enumerate() {
            for (j, b) in self.vectors.iter().enumerate().skip(i) {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((self.space.dot(a, b) - target).abs());
            }
        }
        worst
    }

    pub(crate) fn flip(&mut self, k: usize) {
        self.vectors[k].neg_mut();
    }
}

/// Modified Gram-Schmidt with one reorthogonalization pass.
///
/// Input order is preserved. A vector whose residual norm after
/// projection is at most `tol` times its input norm is dropped.
pub fn orthonormalize(basis: &SubspaceBasis, tol: f64) -> SubspaceBasis {
    let space = basis.space.clone();
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(basis.len());
    for v in &basis.vectors {
        let input_norm = space.norm(v);
        if input_norm == 0.0 {
            continue;
        }
        let mut r = v.clone();
        for _ in 0..2 {
            for q in &out {
                let c = space.dot(q, &r);
                r.axpy(-c, q, 1.0);
            }
        }
        let rn = space.norm(&r);
        if rn <= tol * input_norm {
            continue;
        }
        r /= rn;
        out.push(r);
    }
    SubspaceBasis {
        space,
        vectors: out,
        orthonormal: true,
    }
}

/// Orthogonal complement together with the singular values that decided
/// its dimension.
#[derive(Clone, Debug)]
pub struct Complement {
    pub basis: SubspaceBasis,
    /// Singular values of the weighted image matrix, descending, padded
    /// with zeros up to the space dimension.
    pub singular_values: Vec<f64>,
    pub rank: usize,
}

impl Complement {
    /// Smallest distance, as a multiplicative factor, between a singular
    /// value and the rank cut `tol * sigma_max`. Large means a clean gap.
    pub fn gap_factor(&self, tol: f64) -> f64 {
        let smax = self.singular_values.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return f64::INFINITY;
        }
        let cut = tol * smax;
        self.singular_values
            .iter()
            .map(|&s| {
                if s <= 0.0 {
                    f64::INFINITY
                } else if s >= cut {
                    s / cut
                } else {
                    cut / s
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Orthonormal basis of the orthogonal complement of `span(image)`.
///
/// Rank is decided by singular values of `W^{1/2} [image]` relative to
/// `tol` times the largest one. An empty image yields the whole space.
pub fn complement_basis(space: &Arc<Space>, image: &[DVector<f64>], tol: f64) -> SubspaceBasis {
    complement_with_spectrum(space, image, tol).basis
}

pub fn complement_with_spectrum(
    space: &Arc<Space>,
    image: &[DVector<f64>],
    tol: f64,
) -> Complement {
    let n = space.dim();
    let sw = space.sqrt_weights();
    // Pad to at least n columns so the thin SVD returns a full U.
    let cols = image.len().max(n);
    let mut y = DMatrix::<f64>::zeros(n, cols);
    for (j, v) in image.iter().enumerate() {
        assert_eq!(v.len(), n, "image vector length does not match space");
        y.set_column(j, &v.component_mul(&sw));
    }
    let svd = y.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let sigmas: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let smax = sigmas.first().copied().unwrap_or(0.0);
    let rank = if smax == 0.0 {
        0
    } else {
        sigmas.iter().filter(|&&s| s > tol * smax).count()
    };
    let mut vectors = Vec::with_capacity(n - rank);
    for &k in order.iter().skip(rank).take(n - rank) {
        let col = u.column(k);
        let v = DVector::from_iterator(n, col.iter().zip(sw.iter()).map(|(a, s)| a / s));
        vectors.push(v);
    }
    // Re-orthonormalize in the weighted inner product to clean rounding.
    let raw = SubspaceBasis {
        space: space.clone(),
        vectors,
        orthonormal: false,
    };
    let basis = orthonormalize(&raw, 1e-12);
    Complement {
        basis,
        singular_values: sigmas,
        rank,
    }
}

/// Numerical rank of a list of vectors in the weighted inner product.
pub fn rank(space: &Arc<Space>, vectors: &[DVector<f64>], tol: f64) -> usize {
    space.dim() - complement_with_spectrum(space, vectors, tol).basis.len()
}
