//! Restricted operators, deficiency data, Cayley transform and extensions.
//!
//! An operator is an ambient action `M` on the whole space together with a
//! domain subspace on which it is meant to act. Adjoint statements are only
//! ever evaluated weakly, through inner-product defects over domain vectors.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::hilbert::{complement_with_spectrum, orthonormalize, rank, Space, SubspaceBasis};
use crate::linalg::{det_sign, Action, CsrMatrix};

/// Rank cut used for `Im(E - hB)` in the m-dissipativity check.
const RANGE_RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub enum Domain {
    /// The whole space.
    Full,
    /// Span of the listed coordinate axes (sorted, unique).
    Coordinates(Vec<usize>),
    /// Span of explicit, linearly independent vectors.
    Span(SubspaceBasis),
}

impl Domain {
    pub fn dim(&self, n: usize) -> usize {
        match self {
            Domain::Full => n,
            Domain::Coordinates(c) => c.len(),
            Domain::Span(b) => b.len(),
        }
    }

    pub fn is_full(&self, n: usize) -> bool {
        self.dim(n) == n
    }

    /// Coordinate list when the domain is spanned by axes.
    pub fn coordinates(&self, n: usize) -> Option<Vec<usize>> {
        match self {
            Domain::Full => Some((0..n).collect()),
            Domain::Coordinates(c) => Some(c.clone()),
            Domain::Span(_) => None,
        }
    }

    pub fn vector(&self, k: usize, n: usize) -> DVector<f64> {
        match self {
            Domain::Full => unit(n, k),
            Domain::Coordinates(c) => unit(n, c[k]),
            Domain::Span(b) => b.vectors()[k].clone(),
        }
    }

    pub fn vectors(&self, n: usize) -> Vec<DVector<f64>> {
        (0..self.dim(n)).map(|k| self.vector(k, n)).collect()
    }

    /// Basis orthonormal in the weighted inner product.
    pub fn orthonormal_vectors(&self, space: &Arc<Space>) -> Vec<DVector<f64>> {
        let n = space.dim();
        match self {
            Domain::Span(b) if b.is_orthonormal() => b.vectors().to_vec(),
            Domain::Span(b) => orthonormalize(b, 1e-12).into_vectors(),
            _ => self
                .coordinates(n)
                .unwrap()
                .into_iter()
                .map(|i| unit(n, i) / space.weights()[i].sqrt())
                .collect(),
        }
    }

    /// Whether `v` lies in the domain up to `tol * ||v||`.
    pub fn contains(&self, space: &Arc<Space>, v: &DVector<f64>, tol: f64) -> bool {
        let n = space.dim();
        let vn = space.norm(v);
        match self {
            Domain::Full => true,
            Domain::Coordinates(c) => {
                let mut inside = vec![false; n];
                c.iter().for_each(|&i| inside[i] = true);
                let outside: f64 = (0..n)
                    .filter(|&i| !inside[i])
                    .map(|i| space.weights()[i] * v[i] * v[i])
                    .sum();
                outside.sqrt() <= tol * vn
            }
            Domain::Span(_) => {
                let mut r = v.clone();
                for q in self.orthonormal_vectors(space) {
                    let c = space.dot(&q, &r);
                    r.axpy(-c, &q, 1.0);
                }
                space.norm(&r) <= tol * vn
            }
        }
    }

    pub fn describe(&self, n: usize) -> String {
        match self {
            Domain::Full => format!("full ({n})"),
            Domain::Coordinates(c) => format!("coordinates ({} of {n})", c.len()),
            Domain::Span(b) => format!("span ({} of {n})", b.len()),
        }
    }
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = 1.0;
    e
}

fn columns(vectors: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        m.set_column(j, v);
    }
    m
}

/// Ambient action plus domain: the discrete `A` with `D(A)`.
#[derive(Clone, Debug)]
pub struct RestrictedOperator {
    space: Arc<Space>,
    action: Action,
    domain: Domain,
    label: String,
}

impl RestrictedOperator {
    pub fn new(
        space: Arc<Space>,
        action: Action,
        domain: Domain,
        label: impl Into<String>,
    ) -> Result<Self> {
        let n = space.dim();
        check_len(n, action.dim())?;
        if !action.is_square() {
            return Err(Error::InvalidArgument("action must be square".into()));
        }
        let domain = match domain {
            Domain::Coordinates(mut c) => {
                c.sort_unstable();
                c.dedup();
                if let Some(&bad) = c.iter().find(|&&i| i >= n) {
                    return Err(Error::InvalidArgument(format!(
                        "domain coordinate {bad} outside dimension {n}"
                    )));
                }
                if c.len() == n {
                    Domain::Full
                } else {
                    Domain::Coordinates(c)
                }
            }
            Domain::Span(b) => {
                for v in b.vectors() {
                    check_len(n, v.len())?;
                }
                let r = rank(&space, b.vectors(), 1e-10);
                if r < b.len() {
                    return Err(Error::DependentDomain {
                        rank: r,
                        count: b.len(),
                    });
                }
                Domain::Span(b)
            }
            Domain::Full => Domain::Full,
        };
        Ok(Self {
            space,
            action,
            domain,
            label: label.into(),
        })
    }

    /// Operator given by a dense matrix on the whole space.
    pub fn full_dense(space: Arc<Space>, m: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        Self::new(space, Action::Dense(m), Domain::Full, label)
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn action(&self) -> &Action {
        &self.action
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn domain_dim(&self) -> usize {
        self.domain.dim(self.dim())
    }

    pub fn is_full_domain(&self) -> bool {
        self.domain.is_full(self.dim())
    }

    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        self.action.apply(u)
    }

    pub fn domain_vectors(&self) -> Vec<DVector<f64>> {
        self.domain.vectors(self.dim())
    }

    /// Same action on a different domain.
    pub fn with_domain(&self, domain: Domain) -> Result<Self> {
        Self::new(self.space.clone(), self.action.clone(), domain, self.label.clone())
    }
}

/// Result of a weak pairing check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DefectReport {
    pub max_defect: f64,
    pub tol: f64,
    pub pass: bool,
}

/// `max |(B u, v) - (u, M v)| / (||u|| ||v||)` over domain basis pairs.
fn weak_defect(
    space: &Arc<Space>,
    b: &Action,
    b_domain: &Domain,
    m: &Action,
    m_domain: &Domain,
) -> f64 {
    let n = space.dim();
    let w = space.weights();
    if let (Action::Sparse(bs), Action::Sparse(ms), Some(bc), Some(mc)) = (
        b,
        m,
        b_domain.coordinates(n),
        m_domain.coordinates(n),
    ) {
        // (B e_j, e_i) - (e_j, M e_i) = w_i B_ij - w_j M_ji
        let ones = vec![1.0; n];
        let wb = bs.diag_scaled(w, &ones);
        let wm_t = ms.diag_scaled(w, &ones).transpose();
        let c = wb.add_scaled(-1.0, &wm_t);
        let mut in_m = vec![false; n];
        mc.iter().for_each(|&i| in_m[i] = true);
        let mut in_b = vec![false; n];
        bc.iter().for_each(|&j| in_b[j] = true);
        let mut worst: f64 = 0.0;
        for i in 0..n {
            if !in_m[i] {
                continue;
            }
            for (j, v) in c.row(i) {
                if in_b[j] {
                    worst = worst.max(v.abs() / (w[i] * w[j]).sqrt());
                }
            }
        }
        return worst;
    }
    let u = b_domain.vectors(n);
    let v = m_domain.vectors(n);
    if u.is_empty() || v.is_empty() {
        return 0.0;
    }
    let um = columns(&u, n);
    let vm = columns(&v, n);
    let bu = columns(&u.iter().map(|x| b.apply(x)).collect::<Vec<_>>(), n);
    let mv = columns(&v.iter().map(|x| m.apply(x)).collect::<Vec<_>>(), n);
    let wd = DVector::from_column_slice(w);
    let wvm = DMatrix::from_fn(n, v.len(), |r, c| wd[r] * vm[(r, c)]);
    let wmv = DMatrix::from_fn(n, v.len(), |r, c| wd[r] * mv[(r, c)]);
    let g1 = wvm.transpose() * bu;
    let g2 = wmv.transpose() * um;
    let un: Vec<f64> = u.iter().map(|x| space.norm(x)).collect();
    let vn: Vec<f64> = v.iter().map(|x| space.norm(x)).collect();
    let mut worst: f64 = 0.0;
    for i in 0..v.len() {
        for j in 0..u.len() {
            worst = worst.max((g1[(i, j)] - g2[(i, j)]).abs() / (un[j] * vn[i]));
        }
    }
    worst
}

/// Skew-symmetry on the domain: `|(Mu, v) + (u, Mv)| <= tol ||u|| ||v||`
/// for all domain basis pairs, including `u = v`.
pub fn check_skew_symmetry(op: &RestrictedOperator, tol: f64) -> DefectReport {
    let neg = op.action.scaled(-1.0);
    let max_defect = weak_defect(&op.space, &neg, &op.domain, &op.action, &op.domain);
    DefectReport {
        max_defect,
        tol,
        pass: max_defect <= tol,
    }
}

#[derive(Clone, Debug)]
pub struct DeficiencyData {
    pub d_plus: usize,
    pub d_minus: usize,
    /// Orthonormal basis of `(Im(E + A))^perp = ker(E + A*)`.
    pub n_plus_basis: SubspaceBasis,
    /// Orthonormal basis of `(Im(E - A))^perp = ker(E - A*)`.
    pub n_minus_basis: SubspaceBasis,
    pub tol_used: f64,
    /// `-1` when the last `n_plus` vector was flipped so that the coupling
    /// `V = +1` yields a full-domain extension; `+1` otherwise.
    pub orientation: f64,
    pub plus_spectrum: Vec<f64>,
    pub minus_spectrum: Vec<f64>,
}

fn check_gap(spectrum: &[f64], tol: f64) -> Result<()> {
    let smax = spectrum.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(());
    }
    let cut = tol * smax;
    for &s in spectrum {
        if s > cut / 10.0 && s < cut * 10.0 {
            return Err(Error::IllConditionedDeficiency {
                ratio: s / smax,
                tol,
            });
        }
    }
    Ok(())
}

/// Largest-magnitude component positive; ties go to the first index.
fn orient(space: &Space, v: &mut DVector<f64>) {
    let _ = space;
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Deficiency indices and subspaces.
///
/// Images of an orthonormalized domain basis under `E + M` and `E - M` are
/// complemented with [`complement_with_spectrum`]. Fails with
/// [`Error::IllConditionedDeficiency`] when a singular value sits within a
/// factor 10 of the rank cut.
pub fn deficiency(op: &RestrictedOperator, tol: f64) -> Result<DeficiencyData> {
    let space = op.space.clone();
    let n = space.dim();
    if op.is_full_domain() {
        return Ok(DeficiencyData {
            d_plus: 0,
            d_minus: 0,
            n_plus_basis: SubspaceBasis::empty(space.clone()),
            n_minus_basis: SubspaceBasis::empty(space),
            tol_used: tol,
            orientation: 1.0,
            plus_spectrum: Vec::new(),
            minus_spectrum: Vec::new(),
        });
    }
    let q = op.domain.orthonormal_vectors(&space);
    let mq: Vec<DVector<f64>> = q.iter().map(|u| op.apply(u)).collect();
    let plus: Vec<DVector<f64>> = q.iter().zip(&mq).map(|(u, a)| u + a).collect();
    let minus: Vec<DVector<f64>> = q.iter().zip(&mq).map(|(u, a)| u - a).collect();
    let cp = complement_with_spectrum(&space, &plus, tol);
    let cm = complement_with_spectrum(&space, &minus, tol);
    check_gap(&cp.singular_values, tol)?;
    check_gap(&cm.singular_values, tol)?;
    let mut np = cp.basis;
    let mut nm = cm.basis;
    let mut np_vecs = np.vectors().to_vec();
    let mut nm_vecs = nm.vectors().to_vec();
    np_vecs.iter_mut().for_each(|v| orient(&space, v));
    nm_vecs.iter_mut().for_each(|v| orient(&space, v));
    np = orthonormalize(&SubspaceBasis::new(space.clone(), np_vecs)?, 1e-12);
    nm = orthonormalize(&SubspaceBasis::new(space.clone(), nm_vecs)?, 1e-12);
    let mut orientation = 1.0;
    if !np.is_empty() && np.len() == nm.len() && q.len() + np.len() == n {
        // det of the inverse Cayley map R = Q^{-1} (+) I must be +1.
        let mut xp = plus.clone();
        xp.extend(np.vectors().iter().cloned());
        let mut ym = minus.clone();
        ym.extend(nm.vectors().iter().cloned());
        let sx = det_sign(&columns(&xp, n));
        let sy = det_sign(&columns(&ym, n));
        if let (Some(sx), Some(sy)) = (sx, sy) {
            if sx * sy < 0.0 {
                let last = np.len() - 1;
                np.flip(last);
                orientation = -1.0;
            }
        }
    }
    Ok(DeficiencyData {
        d_plus: np.len(),
        d_minus: nm.len(),
        n_plus_basis: np,
        n_minus_basis: nm,
        tol_used: tol,
        orientation,
        plus_spectrum: cp.singular_values,
        minus_spectrum: cm.singular_values,
    })
}

/// Pairwise representation of the Cayley transform `Q = (E+A)(E-A)^{-1}`.
#[derive(Clone, Debug)]
pub struct CayleyData {
    /// Orthonormalized `Im(E - A)`.
    pub h_minus_basis: SubspaceBasis,
    /// `q_images[k] = Q h_minus_basis[k]`, built from the same domain
    /// combinations as `h_minus_basis[k]`.
    pub q_images: Vec<DVector<f64>>,
}

impl CayleyData {
    /// `Q x` for `x` in `Im(E - A)`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let space = self.h_minus_basis.space();
        let mut out = DVector::zeros(space.dim());
        for (h, q) in self.h_minus_basis.vectors().iter().zip(&self.q_images) {
            out.axpy(space.dot(h, x), q, 1.0);
        }
        out
    }

    /// `max_k | ||q_k|| - 1 |`.
    pub fn isometry_defect(&self) -> f64 {
        let space = self.h_minus_basis.space();
        self.q_images
            .iter()
            .map(|q| (space.norm(q) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Paired Gram-Schmidt over `(E - M)u` with the same coefficients applied
/// to `(E + M)u`.
pub fn cayley(op: &RestrictedOperator) -> CayleyData {
    let space = op.space.clone();
    let domain = op.domain_vectors();
    let mut hs: Vec<DVector<f64>> = Vec::with_capacity(domain.len());
    let mut qs: Vec<DVector<f64>> = Vec::with_capacity(domain.len());
    for u in &domain {
        let mu = op.apply(u);
        let mut h = u - &mu;
        let mut q = u + &mu;
        let input = space.norm(&h);
        for _ in 0..2 {
            for (hk, qk) in hs.iter().zip(&qs) {
                let c = space.dot(hk, &h);
                h.axpy(-c, hk, 1.0);
                q.axpy(-c, qk, 1.0);
            }
        }
        let hn = space.norm(&h);
        if hn <= 1e-12 * input {
            continue;
        }
        hs.push(h / hn);
        qs.push(q / hn);
    }
    let h_minus_basis = orthonormalize(&SubspaceBasis::new(space, hs).expect("lengths match"), 0.0);
    CayleyData {
        h_minus_basis,
        q_images: qs,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtensionKind {
    SkewSymmetric,
    DissipativeContraction,
}

/// Coupling between deficiency subspaces.
///
/// `v` is `d_minus x d_plus`: column `j` gives the `n_minus` coordinates
/// paired with the `j`-th `n_plus` vector.
#[derive(Clone, Debug)]
pub struct ExtensionSpec {
    pub v: DMatrix<f64>,
    pub kind: ExtensionKind,
}

impl ExtensionSpec {
    pub fn new(v: DMatrix<f64>, kind: ExtensionKind) -> Result<Self> {
        match kind {
            ExtensionKind::SkewSymmetric => {
                if !v.is_square() {
                    return Err(Error::InvalidCoupling(format!(
                        "skew-symmetric extension needs a square coupling, got {}x{}",
                        v.nrows(),
                        v.ncols()
                    )));
                }
                let defect = (v.transpose() * &v - DMatrix::identity(v.ncols(), v.ncols())).amax();
                if defect > 1e-12 {
                    return Err(Error::InvalidCoupling(format!(
                        "coupling is not orthogonal (|V^T V - E| = {defect:e})"
                    )));
                }
            }
            ExtensionKind::DissipativeContraction => {
                if v.nrows() > 0 && v.ncols() > 0 {
                    let smax = v.singular_values().max();
                    if smax > 1.0 + 1e-12 {
                        return Err(Error::InvalidCoupling(format!(
                            "coupling norm {smax} exceeds 1"
                        )));
                    }
                }
            }
        }
        Ok(Self { v, kind })
    }

    /// One-dimensional coupling: orthogonal for `|v| = 1`, contraction otherwise.
    pub fn scalar(v: f64) -> Result<Self> {
        if !v.is_finite() || v.abs() > 1.0 {
            return Err(Error::InvalidCoupling(format!("scalar coupling {v} outside [-1, 1]")));
        }
        let kind = if v.abs() == 1.0 {
            ExtensionKind::SkewSymmetric
        } else {
            ExtensionKind::DissipativeContraction
        };
        Self::new(DMatrix::from_element(1, 1, v), kind)
    }

    pub fn empty() -> Self {
        Self {
            v: DMatrix::zeros(0, 0),
            kind: ExtensionKind::SkewSymmetric,
        }
    }
}

/// `count` random domain vectors: domain basis combinations with
/// coefficients uniform in `[-1, 1]`, reproducible from `seed`.
pub fn probe_vectors(op: &RestrictedOperator, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = op.domain_vectors();
    (0..count)
        .map(|_| {
            let mut u = DVector::zeros(op.dim());
            for d in &basis {
                u.axpy(rng.random_range(-1.0..=1.0), d, 1.0);
            }
            u
        })
        .collect()
}

/// `max | ||u + Mu|| - ||u - Mu|| | / ||u||` over `probes`.
pub fn isometry_defect(op: &RestrictedOperator, probes: &[DVector<f64>]) -> f64 {
    let space = op.space();
    probes
        .iter()
        .map(|u| {
            let mu = op.apply(u);
            (space.norm(&(u + &mu)) - space.norm(&(u - &mu))).abs() / space.norm(u)
        })
        .fold(0.0, f64::max)
}

/// Extension through the inverse Cayley transform, computing deficiency data
/// with rank tolerance `tol`.
pub fn extend(op: &RestrictedOperator, spec: &ExtensionSpec, tol: f64) -> Result<RestrictedOperator> {
    let defi = deficiency(op, tol)?;
    extend_with(op, &defi, spec, tol)
}

/// Extension for precomputed deficiency data.
///
/// The extended map is `Q^{-1} (+) V : Im(E+A) (+) N_+ -> Im(E-A) (+) N_-`,
/// and `A~ = (E - R)(E + R)^{-1}` on `Im(R + E)`. A contraction `V` makes
/// `-A~` dissipative; an orthogonal `V` makes `A~` skew.
pub fn extend_with(
    op: &RestrictedOperator,
    defi: &DeficiencyData,
    spec: &ExtensionSpec,
    tol: f64,
) -> Result<RestrictedOperator> {
    let n = op.dim();
    if spec.v.nrows() != defi.d_minus || spec.v.ncols() != defi.d_plus {
        return Err(Error::InvalidCoupling(format!(
            "coupling is {}x{}, deficiency needs {}x{}",
            spec.v.nrows(),
            spec.v.ncols(),
            defi.d_minus,
            defi.d_plus
        )));
    }
    if defi.d_plus == 0 && defi.d_minus == 0 {
        return Ok(op.clone());
    }
    let space = op.space.clone();
    let q = op.domain.orthonormal_vectors(&space);
    let mut xs: Vec<DVector<f64>> = q.clone();
    let mut ys: Vec<DVector<f64>> = q.iter().map(|u| op.apply(u)).collect();
    let np = defi.n_plus_basis.vectors();
    let nm = defi.n_minus_basis.vectors();
    for j in 0..defi.d_plus {
        let mut coupled = DVector::zeros(n);
        for i in 0..defi.d_minus {
            coupled.axpy(spec.v[(i, j)], &nm[i], 1.0);
        }
        xs.push(&np[j] + &coupled);
        ys.push(&np[j] - &coupled);
    }
    let sw = space.sqrt_weights();
    let xw = DMatrix::from_fn(n, xs.len(), |r, c| sw[r] * xs[c][r]);
    let sv = xw.singular_values();
    let smax = sv.max();
    let r = sv.iter().filter(|&&s| s > tol * smax).count();
    if xs.len() != n || r < n {
        return Err(Error::ExtensionDomainNotDense { rank: r, dim: n });
    }
    let x = columns(&xs, n);
    let y = columns(&ys, n);
    let at = x
        .transpose()
        .lu()
        .solve(&y.transpose())
        .ok_or(Error::ExtensionDomainNotDense { rank: r, dim: n })?;
    // With x = d + sum_j c_j (n+_j + V n-_j), the form is (A~x, x) = c^T (E - V^T V) c
    // exactly; c = L x for the coupled rows L of X^{-1}. Keep the computed
    // skew part and rebuild the symmetric part from that identity.
    let xinv = x
        .clone()
        .try_inverse()
        .ok_or(Error::ExtensionDomainNotDense { rank: r, dim: n })?;
    let k0 = q.len();
    let lc = DMatrix::from_fn(defi.d_plus, n, |j, c| xinv[(k0 + j, c)] / sw[c]);
    let g = DMatrix::identity(defi.d_plus, defi.d_plus) - spec.v.transpose() * &spec.v;
    let sym = lc.transpose() * g * &lc;
    let a = at.transpose();
    let ac = DMatrix::from_fn(n, n, |i, j| sw[i] * a[(i, j)] / sw[j]);
    let ac = (&ac - ac.transpose()) * 0.5 + (&sym + sym.transpose()) * 0.5;
    let a = DMatrix::from_fn(n, n, |i, j| ac[(i, j)] * sw[j] / sw[i]);
    let label = format!("{} extended ({:?}, V={:?})", op.label, spec.kind, spec.v.as_slice());
    RestrictedOperator::new(space, Action::Dense(a), Domain::Full, label)
}

/// Generator `B` of a semigroup `e^{tB}`.
#[derive(Clone, Debug)]
pub struct Generator {
    space: Arc<Space>,
    action: Action,
    domain: Domain,
    provenance: String,
}

impl Generator {
    pub fn new(
        space: Arc<Space>,
        action: Action,
        domain: Domain,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let op = RestrictedOperator::new(space, action, domain, "")?;
        Ok(Self {
            space: op.space,
            action: op.action,
            domain: op.domain,
            provenance: provenance.into(),
        })
    }

    /// `B = -A` on the domain of `op`.
    pub fn negated(op: &RestrictedOperator) -> Self {
        Self {
            space: op.space.clone(),
            action: op.action.scaled(-1.0),
            domain: op.domain.clone(),
            provenance: format!("-({})", op.label),
        }
    }

    /// `B = -A~` for an extension `A~`.
    pub fn from_extension(ext: &RestrictedOperator) -> Self {
        Self::negated(ext)
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn action(&self) -> &Action {
        &self.action
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn is_full_domain(&self) -> bool {
        self.domain.is_full(self.dim())
    }

    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        self.action.apply(u)
    }

    /// Dense matrix of the action.
    pub fn matrix(&self) -> DMatrix<f64> {
        self.action.to_dense()
    }

    /// Adds a dense matrix to the action, keeping the domain.
    pub fn perturbed(&self, delta: &DMatrix<f64>, note: &str) -> Result<Self> {
        check_len(self.dim(), delta.nrows())?;
        let m = self.action.to_dense() + delta;
        Ok(Self {
            space: self.space.clone(),
            action: Action::Dense(m),
            domain: self.domain.clone(),
            provenance: format!("{} + {note}", self.provenance),
        })
    }

    /// Weighted adjoint `B* = W^{-1} B^T W`; requires a full domain.
    pub fn adjoint(&self) -> Result<Self> {
        if !self.is_full_domain() {
            return Err(Error::NotFullDomain {
                domain: self.domain.dim(self.dim()),
                dim: self.dim(),
            });
        }
        Ok(Self {
            space: self.space.clone(),
            action: self.action.weighted_adjoint(self.space.weights()),
            domain: Domain::Full,
            provenance: format!("adjoint of {}", self.provenance),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DissipativityReport {
    /// Largest value of `(Bu, u) / ||u||^2` over the domain (an upper bound
    /// for large sparse generators).
    pub max_form: f64,
    pub h: Vec<f64>,
    /// Rank of `(E - hB)` on the domain, one per `h`.
    pub ranks: Vec<usize>,
    pub dim: usize,
    pub tol: f64,
    pub pass: bool,
}

/// Quadratic-form and range test for m-dissipativity.
pub fn check_m_dissipative(gen: &Generator, h_list: &[f64], tol: f64) -> DissipativityReport {
    let space = &gen.space;
    let n = space.dim();
    let k = gen.domain.dim(n);
    let (max_form, ranks) = match (&gen.action, gen.domain.coordinates(n)) {
        (Action::Sparse(b), Some(coords)) => {
            let bound = gershgorin_form_bound(space, b, &coords);
            // ||(E - hB)u|| ||u|| >= (1 - h * bound) ||u||^2
            let ranks = h_list
                .iter()
                .map(|&h| if 1.0 - h * bound.max(0.0) > 0.0 { k } else { 0 })
                .collect();
            (bound, ranks)
        }
        _ => {
            let q = gen.domain.orthonormal_vectors(space);
            let bq: Vec<DVector<f64>> = q.iter().map(|u| gen.apply(u)).collect();
            let w = space.weights();
            let qm = columns(&q, n);
            let bqm = columns(&bq, n);
            let wq = DMatrix::from_fn(n, q.len(), |r, c| w[r] * qm[(r, c)]);
            let s = wq.transpose() * &bqm;
            let sym = (&s + s.transpose()) * 0.5;
            let max_form = if q.is_empty() {
                f64::NEG_INFINITY
            } else {
                SymmetricEigen::new(sym).eigenvalues.max()
            };
            let sw = space.sqrt_weights();
            let ranks = h_list
                .iter()
                .map(|&h| {
                    let m = DMatrix::from_fn(n, q.len(), |r, c| {
                        sw[r] * (qm[(r, c)] - h * bqm[(r, c)])
                    });
                    if q.is_empty() {
                        return 0;
                    }
                    let sv = m.singular_values();
                    let smax = sv.max();
                    sv.iter().filter(|&&s| s > RANGE_RANK_TOL * smax).count()
                })
                .collect();
            (max_form, ranks)
        }
    };
    let ranks: Vec<usize> = ranks;
    let pass = max_form <= tol && ranks.iter().all(|&r| r == n);
    DissipativityReport {
        max_form,
        h: h_list.to_vec(),
        ranks,
        dim: n,
        tol,
        pass,
    }
}

/// Gershgorin bound on the largest eigenvalue of the symmetric part of the
/// compressed form `S_ij = sqrt(w_i / w_j) B_ij` over `coords`.
fn gershgorin_form_bound(space: &Space, b: &CsrMatrix, coords: &[usize]) -> f64 {
    let n = space.dim();
    let w = space.weights();
    let mut inside = vec![false; n];
    coords.iter().for_each(|&i| inside[i] = true);
    let bt = b.transpose();
    let mut bound = f64::NEG_INFINITY;
    for &i in coords {
        let mut row: Vec<(usize, f64)> = Vec::new();
        for (j, v) in b.row(i) {
            if inside[j] {
                row.push((j, 0.5 * (w[i] / w[j]).sqrt() * v));
            }
        }
        for (j, v) in bt.row(i) {
            if inside[j] {
                // (B^T)_ij = B_ji, compressed with sqrt(w_j / w_i)
                row.push((j, 0.5 * (w[j] / w[i]).sqrt() * v));
            }
        }
        row.sort_by_key(|&(j, _)| j);
        let mut diag = 0.0;
        let mut off = 0.0;
        let mut k = 0;
        while k < row.len() {
            let j = row[k].0;
            let mut acc = 0.0;
            while k < row.len() && row[k].0 == j {
                acc += row[k].1;
                k += 1;
            }
            if j == i {
                diag += acc;
            } else {
                off += acc.abs();
            }
        }
        bound = bound.max(diag + off);
    }
    bound
}

/// Weak form of `B ⊂ A*`: `max |(Bu, v) - (u, Mv)| / (||u|| ||v||)` over
/// `u` in the generator's domain basis and `v` in the operator's.
pub fn check_inclusion_in_adjoint(gen: &Generator, op: &RestrictedOperator, tol: f64) -> DefectReport {
    let max_defect = weak_defect(&gen.space, &gen.action, &gen.domain, &op.action, &op.domain);
    DefectReport {
        max_defect,
        tol,
        pass: max_defect <= tol,
    }
}

/// `max_j ||B d_j + M d_j|| / ||d_j||` over the operator's domain basis:
/// how far `B` restricted to `D(A)` is from `-A`.
pub fn restriction_defect(gen: &Generator, op: &RestrictedOperator) -> f64 {
    let space = op.space();
    op.domain_vectors()
        .iter()
        .map(|d| {
            let r = gen.apply(d) + op.apply(d);
            let scale = space.norm(&op.apply(d)).max(space.norm(d));
            space.norm(&r) / scale
        })
        .fold(0.0, f64::max)
}

/// `max_j ||A~ d_j - M d_j|| / ||M d_j||` over the base domain basis.
pub fn agreement_defect(ext: &RestrictedOperator, op: &RestrictedOperator) -> f64 {
    let space = op.space();
    op.domain_vectors()
        .iter()
        .map(|d| {
            let md = op.apply(d);
            let scale = space.norm(&md).max(space.norm(d));
            space.distance(&ext.apply(d), &md) / scale
        })
        .fold(0.0, f64::max)
}
