//! Closed-form ground truth for the derivative operator `A u = -u'`.
//!
//! On `(0, 1)` the minimal operator has deficiency `(1, 1)` with
//! `ker(E - A*) = span{e^x}` and `ker(E + A*) = span{e^{-x}}`. Its maximal
//! extensions are the boundary couplings `u(1) = theta u(0)`, whose flow is
//! a left shift with re-entry at `x = 1` scaled by `theta`. On half-lines
//! only one exponential is square integrable, giving one-sided indices.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{Space, SubspaceBasis};
use crate::linalg::Action;
use crate::operator::{Domain, RestrictedOperator};

/// Box-scheme discretization of `A u = -u'` on `[0, 1]` with `n` nodes.
///
/// States are the `n - 1` cell averages, with cell-width Gram weights. The
/// domain is the set of averages of continuous piecewise-linear functions
/// vanishing at both end nodes, spanned by `d_j = (e_{j-1} + e_j) / 2`.
/// On it, `A d_j = (e_j - e_{j-1}) / h` is the exact average of `-w'`.
/// The ambient matrix extends this by zero on the orthogonal complement of
/// the domain, so it is exactly skew on the domain.
pub fn minimal_derivative_operator(n: usize) -> Result<RestrictedOperator> {
    if n < 8 {
        return Err(Error::InvalidArgument(format!(
            "minimal derivative operator needs at least 8 nodes, got {n}"
        )));
    }
    let m = n - 1;
    let h = 1.0 / m as f64;
    let space = Arc::new(Space::uniform(m, h, format!("L2(0,1), {m} cells"))?);
    let mut basis = Vec::with_capacity(m - 1);
    let mut x = DMatrix::<f64>::zeros(m, m);
    let mut y = DMatrix::<f64>::zeros(m, m);
    for j in 1..m {
        let mut d = DVector::zeros(m);
        d[j - 1] = 0.5;
        d[j] = 0.5;
        x.set_column(j - 1, &d);
        y[(j - 1, j - 1)] = -1.0 / h;
        y[(j, j - 1)] = 1.0 / h;
        basis.push(d);
    }
    // The alternating vector, scaled by W^{-1}, is orthogonal to the domain.
    for i in 0..m {
        x[(i, m - 1)] = if i % 2 == 0 { 1.0 } else { -1.0 } / h;
    }
    let mt = x
        .transpose()
        .lu()
        .solve(&y.transpose())
        .ok_or_else(|| Error::InvalidArgument("singular domain frame".into()))?;
    let action = Action::Dense(mt.transpose());
    let domain = Domain::Span(SubspaceBasis::new(space.clone(), basis)?);
    RestrictedOperator::new(space, action, domain, format!("minimal -d/dx, {n} nodes"))
}

/// Cell centers of the `n`-node grid on `[0, 1]`.
pub fn cell_centers(n: usize) -> Vec<f64> {
    let m = n - 1;
    (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect()
}

/// Samples `f` at the cell centers of the `n`-node grid.
pub fn sample_cells(n: usize, f: impl Fn(f64) -> f64) -> DVector<f64> {
    let xs = cell_centers(n);
    DVector::from_iterator(xs.len(), xs.into_iter().map(f))
}

/// Interior Gaussian `exp(-((x - c)/width)^2)`.
pub fn gaussian(center: f64, width: f64) -> impl Fn(f64) -> f64 {
    move |x| (-((x - center) / width).powi(2)).exp()
}

/// Value at `x` of the `theta`-boundary flow at time `t >= 0` started from `f`.
///
/// `u(t, x) = theta^k f(s - k)` with `s = x + t`, `k = floor(s)`.
pub fn interval_shift_profile(theta: f64, t: f64, x: f64, f: impl Fn(f64) -> f64) -> f64 {
    let s = x + t;
    let k = s.floor();
    theta.powi(k as i32) * f(s - k)
}

/// The `theta`-boundary flow applied to cell-centered samples.
///
/// Samples are read as the `theta`-quasi-periodic sequence
/// `U_{j + m} = theta U_j` and linearly interpolated at `x + t`.
pub fn interval_shift_semigroup(theta: f64, t: f64, u0: &DVector<f64>) -> Result<DVector<f64>> {
    if !(theta.abs() <= 1.0) {
        return Err(Error::InvalidCoupling(format!("theta {theta} outside [-1, 1]")));
    }
    if t < 0.0 {
        return Err(Error::InvalidArgument("time must be non-negative".into()));
    }
    let m = u0.len();
    let h = 1.0 / m as f64;
    let extended = |j: usize| -> f64 {
        let q = (j / m) as i32;
        theta.powi(q) * u0[j % m]
    };
    Ok(DVector::from_fn(m, |i, _| {
        let y = i as f64 + t / h;
        let j = y.floor();
        let a = y - j;
        let j = j as usize;
        if a == 0.0 {
            extended(j)
        } else {
            (1.0 - a) * extended(j) + a * extended(j + 1)
        }
    }))
}

/// Boundary parameter of the extension with scalar coupling `v`.
///
/// `orientation` is [`crate::DeficiencyData::orientation`]. The map sends
/// `v = 0` to `theta = e^{-1}` and `|v| = 1` to `|theta| = 1`.
pub fn coupling_to_theta(v: f64, orientation: f64) -> f64 {
    let e = (-1.0f64).exp();
    let sv = orientation * v;
    (e + sv) / (1.0 + sv * e)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HalfLine {
    /// `(0, infinity)`
    Right,
    /// `(-infinity, 0)`
    Left,
}

/// Closed-form description of a model derivative operator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum OracleCase {
    IntervalMinimal,
    IntervalTheta { theta: f64 },
    HalflineRight,
    HalflineLeft,
}

impl OracleCase {
    /// `(d_plus, d_minus)`.
    pub fn deficiency(&self) -> (usize, usize) {
        match self {
            OracleCase::IntervalMinimal => (1, 1),
            OracleCase::IntervalTheta { .. } => (0, 0),
            OracleCase::HalflineRight => (1, 0),
            OracleCase::HalflineLeft => (0, 1),
        }
    }

    /// Unit-norm `n_plus` vector (spanning `ker(E + A*)`), if any.
    pub fn n_plus(&self, x: f64) -> Option<f64> {
        match self {
            OracleCase::IntervalMinimal => {
                let c = (2.0 / (1.0 - (-2.0f64).exp())).sqrt();
                Some(c * (-x).exp())
            }
            OracleCase::HalflineRight => Some(std::f64::consts::SQRT_2 * (-x).exp()),
            _ => None,
        }
    }

    /// Unit-norm `n_minus` vector (spanning `ker(E - A*)`), if any.
    pub fn n_minus(&self, x: f64) -> Option<f64> {
        match self {
            OracleCase::IntervalMinimal => {
                let c = (2.0 / (2.0f64.exp() - 1.0)).sqrt();
                Some(c * x.exp())
            }
            OracleCase::HalflineLeft => Some(std::f64::consts::SQRT_2 * x.exp()),
            _ => None,
        }
    }

    /// Contractive flow at `(t, x)` from initial profile `f`.
    ///
    /// Half-lines use the left shift `f(x + t)`, with zero where `x + t`
    /// leaves the half-line. On the right half-line mass leaves through the
    /// origin (contraction); on the left one zeros enter (isometry).
    pub fn flow(&self, t: f64, x: f64, f: impl Fn(f64) -> f64) -> Option<f64> {
        match *self {
            OracleCase::IntervalMinimal => None,
            OracleCase::IntervalTheta { theta } => Some(interval_shift_profile(theta, t, x, f)),
            OracleCase::HalflineRight => Some(if x > 0.0 { f(x + t) } else { 0.0 }),
            OracleCase::HalflineLeft => Some(if x + t < 0.0 { f(x + t) } else { 0.0 }),
        }
    }

    pub fn is_isometric(&self) -> bool {
        match *self {
            OracleCase::IntervalTheta { theta } => theta.abs() == 1.0,
            OracleCase::HalflineLeft => true,
            _ => false,
        }
    }
}

pub fn halfline_case(side: HalfLine) -> OracleCase {
    match side {
        HalfLine::Right => OracleCase::HalflineRight,
        HalfLine::Left => OracleCase::HalflineLeft,
    }
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
pub fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let c = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += c * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

type Profile = Box<dyn Fn(f64) -> f64>;

/// Weak-identity check for the left half-line witness `e^t sqrt(2) e^x`.
///
/// For separable test functions `f(t, x) = phi(t) psi(x)` with `psi`
/// compactly supported in `(-infinity, 0)` this evaluates
/// `int int u (f_t - f_x) dx dt + int u0 f(0, x) dx`
/// by Simpson quadrature, normalized by `||u0|| ||psi||_graph int(|phi| + |phi'|)`.
/// Returns the largest normalized residual over a fixed family.
pub fn halfline_witness_residual(horizon: f64, panels: usize) -> f64 {
    let u0 = |x: f64| std::f64::consts::SQRT_2 * x.exp();
    let phis: Vec<(Profile, Profile)> = vec![
        (
            Box::new(move |t: f64| (1.0 - t / horizon).powi(3)),
            Box::new(move |t: f64| -3.0 * (1.0 - t / horizon).powi(2) / horizon),
        ),
        (
            Box::new(move |t: f64| (1.0 - t / horizon).powi(3) * (t / horizon)),
            Box::new(move |t: f64| {
                let s = t / horizon;
                ((1.0 - s).powi(3) - 3.0 * s * (1.0 - s).powi(2)) / horizon
            }),
        ),
    ];
    let bumps = [(-1.0, 0.5), (-0.4, 0.3), (-2.0, 1.5)];
    let mut worst: f64 = 0.0;
    for (phi, dphi) in &phis {
        let et_dphi = simpson(0.0, horizon, panels, |t| t.exp() * dphi(t));
        let et_phi = simpson(0.0, horizon, panels, |t| t.exp() * phi(t));
        let abs_phi = simpson(0.0, horizon, panels, |t| phi(t).abs() + dphi(t).abs());
        for &(c, r) in &bumps {
            let psi = move |x: f64| {
                let q = (x - c) / r;
                if q.abs() < 1.0 {
                    (1.0 - q * q).powi(4)
                } else {
                    0.0
                }
            };
            let dpsi = move |x: f64| {
                let q = (x - c) / r;
                if q.abs() < 1.0 {
                    -8.0 * q * (1.0 - q * q).powi(3) / r
                } else {
                    0.0
                }
            };
            let (a, b) = (c - r, c + r);
            let u_psi = simpson(a, b, panels, |x| u0(x) * psi(x));
            let u_dpsi = simpson(a, b, panels, |x| u0(x) * dpsi(x));
            let graph = simpson(a, b, panels, |x| psi(x).powi(2) + dpsi(x).powi(2)).sqrt();
            let residual = et_dphi * u_psi - et_phi * u_dpsi + phi(0.0) * u_psi;
            worst = worst.max(residual.abs() / (graph * abs_phi));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::check_skew_symmetry;

    #[test]
    fn minimal_operator_shape() {
        let op = minimal_derivative_operator(16).unwrap();
        assert_eq!(op.dim(), 15);
        assert_eq!(op.domain_dim(), 14);
        assert!(check_skew_symmetry(&op, 1e-12).pass);
        assert!(minimal_derivative_operator(7).is_err());
    }

    #[test]
    fn minimal_operator_differentiates_hats() {
        let op = minimal_derivative_operator(11).unwrap();
        let h = 0.1;
        for d in op.domain_vectors() {
            let md = op.apply(&d);
            let j = (0..10).find(|&i| d[i] != 0.0).unwrap();
            assert!((md[j] + 1.0 / h).abs() < 1e-12);
            assert!((md[j + 1] - 1.0 / h).abs() < 1e-12);
            assert!(md.iter().enumerate().all(|(i, v)| i == j || i == j + 1 || v.abs() < 1e-12));
        }
    }

    #[test]
    fn shift_profile_examples() {
        let f = gaussian(0.5, 0.1);
        for x in [0.05, 0.3, 0.77] {
            assert!((interval_shift_profile(1.0, 1.0, x, &f) - f(x)).abs() < 1e-15);
            assert!((interval_shift_profile(-1.0, 1.0, x, &f) + f(x)).abs() < 1e-15);
            assert_eq!(interval_shift_profile(0.0, 1.0, x, &f), 0.0);
        }
    }

    #[test]
    fn shift_semigroup_examples() {
        let u0 = sample_cells(33, gaussian(0.5, 0.1));
        let back = interval_shift_semigroup(1.0, 1.0, &u0).unwrap();
        assert!((back - &u0).amax() < 1e-12);
        let flip = interval_shift_semigroup(-1.0, 1.0, &u0).unwrap();
        assert!((flip + &u0).amax() < 1e-12);
        let gone = interval_shift_semigroup(0.0, 1.0, &u0).unwrap();
        assert!(gone.amax() < 1e-12);
        assert!(interval_shift_semigroup(1.5, 0.1, &u0).is_err());
    }

    #[test]
    fn shift_semigroup_composes() {
        let u0 = sample_cells(41, |x| (3.0 * x).sin() + x);
        let h = 1.0 / 40.0;
        let (t1, t2) = (7.0 * h, 19.0 * h);
        let a = interval_shift_semigroup(0.6, t1 + t2, &u0).unwrap();
        let b = interval_shift_semigroup(0.6, t2, &interval_shift_semigroup(0.6, t1, &u0).unwrap())
            .unwrap();
        assert!((a - b).amax() < 1e-14);
    }

    #[test]
    fn theta_map_endpoints() {
        assert!((coupling_to_theta(1.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((coupling_to_theta(1.0, -1.0) + 1.0).abs() < 1e-15);
        assert!((coupling_to_theta(0.0, 1.0) - (-1.0f64).exp()).abs() < 1e-15);
        for v in [-0.9, -0.3, 0.2, 0.8] {
            assert!(coupling_to_theta(v, 1.0).abs() < 1.0);
        }
    }

    #[test]
    fn halfline_data() {
        assert_eq!(halfline_case(HalfLine::Right).deficiency(), (1, 0));
        assert_eq!(halfline_case(HalfLine::Left).deficiency(), (0, 1));
        let left = halfline_case(HalfLine::Left);
        let norm2 = simpson(-40.0, 0.0, 40000, |x| left.n_minus(x).unwrap().powi(2));
        assert!((norm2 - 1.0).abs() < 1e-10);
        assert!(halfline_witness_residual(1.0, 2000) < 1e-6);
    }

    #[test]
    fn right_halfline_shift_loses_mass_after_contact() {
        let case = halfline_case(HalfLine::Right);
        let f = |x: f64| {
            let q = (x - 1.0) / 0.5;
            if q.abs() < 1.0 {
                (1.0 - q * q).powi(2)
            } else {
                0.0
            }
        };
        let norm = |t: f64| simpson(0.0, 3.0, 6000, |x| case.flow(t, x, f).unwrap().powi(2));
        let n0 = norm(0.0);
        assert!((norm(0.4) - n0).abs() < 1e-9);
        assert!(norm(0.8) < n0 - 1e-3);
    }
}
