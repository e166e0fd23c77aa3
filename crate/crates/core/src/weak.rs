//! Weak-identity verification and the non-uniqueness constructions.
//!
//! A candidate `u` is a generalized solution of `u' = A*u` when
//! `int_0^T (u, f' + A f) dt + (u0, f(0)) = 0` for test functions
//! `f(t) = v phi(t)` with `v` in the operator domain and `phi(T) = 0`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::hilbert::Space;
use crate::linalg::expm;
use crate::operator::{
    check_inclusion_in_adjoint, deficiency, extend_with, ExtensionKind, ExtensionSpec, Generator,
    RestrictedOperator,
};
use crate::semigroup::{evolve_cayley, Trajectory};

/// Scalar time profile of a test function, vanishing for `t >= end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TemporalProfile {
    /// `(1 - t/end)^3 (t/end)^power` on `[0, end]`, zero afterwards (C^2).
    PolySpline { power: u32, end: f64 },
    /// `theta_nu(t) = int_t^inf beta_nu(s) ds` with
    /// `beta_nu(s) = nu beta(nu (s - t0))`, `beta(r) = 30 r^2 (1 + r)^2` on `[-1, 0]`.
    /// Equal to 1 for `t <= t0 - 1/nu` and 0 for `t >= t0`.
    MollifiedCutoff { nu: f64, t0: f64 },
}

impl TemporalProfile {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            TemporalProfile::PolySpline { power, end } => {
                let s = t / end;
                if s >= 1.0 {
                    0.0
                } else {
                    (1.0 - s).powi(3) * s.powi(power as i32)
                }
            }
            TemporalProfile::MollifiedCutoff { nu, t0 } => {
                let q = (-nu * (t - t0)).clamp(0.0, 1.0);
                q * q * q * (10.0 - 15.0 * q + 6.0 * q * q)
            }
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            TemporalProfile::PolySpline { power, end } => {
                let s = t / end;
                if s >= 1.0 {
                    return 0.0;
                }
                let p = power as i32;
                let lead = -3.0 * (1.0 - s).powi(2) * s.powi(p);
                let tail = if p > 0 {
                    p as f64 * (1.0 - s).powi(3) * s.powi(p - 1)
                } else {
                    0.0
                };
                (lead + tail) / end
            }
            TemporalProfile::MollifiedCutoff { nu, t0 } => {
                let q = -nu * (t - t0);
                if q <= 0.0 || q >= 1.0 {
                    0.0
                } else {
                    -nu * 30.0 * q * q * (1.0 - q) * (1.0 - q)
                }
            }
        }
    }

    /// Time after which the profile vanishes identically.
    pub fn support_end(&self) -> f64 {
        match *self {
            TemporalProfile::PolySpline { end, .. } => end,
            TemporalProfile::MollifiedCutoff { t0, .. } => t0,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            TemporalProfile::PolySpline { power, end } => format!("spline(p={power}, T={end})"),
            TemporalProfile::MollifiedCutoff { nu, t0 } => format!("cutoff(nu={nu}, t0={t0})"),
        }
    }
}

/// Five splines and the cutoffs with `nu in {4, 16, 64} / T`, `t0 = T`.
pub fn default_profiles(horizon: f64) -> Vec<TemporalProfile> {
    let mut out: Vec<TemporalProfile> = (0..5)
        .map(|power| TemporalProfile::PolySpline { power, end: horizon })
        .collect();
    for nu in [4.0, 16.0, 64.0] {
        out.push(TemporalProfile::MollifiedCutoff {
            nu: nu / horizon,
            t0: horizon,
        });
    }
    out
}

/// Spatial vectors, their images, temporal profiles and a trapezoid grid.
#[derive(Clone, Debug)]
pub struct TestFunctionFamily {
    spatial: Vec<DVector<f64>>,
    images: Vec<DVector<f64>>,
    profiles: Vec<TemporalProfile>,
    horizon: f64,
    n_t: usize,
}

impl TestFunctionFamily {
    /// Fails if a spatial vector is outside the domain or a profile does
    /// not vanish by `horizon`.
    pub fn new(
        op: &RestrictedOperator,
        spatial: Vec<DVector<f64>>,
        profiles: Vec<TemporalProfile>,
        horizon: f64,
        n_t: usize,
    ) -> Result<Self> {
        if !(horizon > 0.0) || n_t < 3 {
            return Err(Error::InvalidArgument(
                "test family needs a positive horizon and at least 3 nodes".into(),
            ));
        }
        for v in &spatial {
            check_len(op.dim(), v.len())?;
            if !op.domain().contains(op.space(), v, 1e-8) {
                return Err(Error::InvalidArgument(
                    "spatial test vector is not in the operator domain".into(),
                ));
            }
        }
        if let Some(p) = profiles.iter().find(|p| p.support_end() > horizon * (1.0 + 1e-12)) {
            return Err(Error::InvalidArgument(format!(
                "profile {} does not vanish by T = {horizon}",
                p.label()
            )));
        }
        let images = spatial.iter().map(|v| op.apply(v)).collect();
        Ok(Self {
            spatial,
            images,
            profiles,
            horizon,
            n_t,
        })
    }

    /// `count` domain basis vectors spread over the basis, with
    /// [`default_profiles`].
    pub fn standard(op: &RestrictedOperator, horizon: f64, n_t: usize, count: usize) -> Result<Self> {
        let k = op.domain_dim();
        let count = count.min(k).max(1);
        let picks: Vec<usize> = (0..count).map(|i| ((i + 1) * k) / (count + 1)).collect();
        let n = op.dim();
        let spatial = picks.iter().map(|&i| op.domain().vector(i, n)).collect();
        Self::new(op, spatial, default_profiles(horizon), horizon, n_t)
    }

    pub fn spatial(&self) -> &[DVector<f64>] {
        &self.spatial
    }

    pub fn profiles(&self) -> &[TemporalProfile] {
        &self.profiles
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn with_n_t(mut self, n_t: usize) -> Self {
        self.n_t = n_t.max(3);
        self
    }
}

/// Inner products of a candidate against probe vectors on a uniform grid.
#[derive(Clone, Debug)]
pub struct Probe {
    /// `values[p][i] = (u(i * step), probe_p)`.
    pub values: Vec<Vec<f64>>,
    /// Same series from a higher-order interpolant, when the candidate is
    /// interpolated; the difference estimates interpolation error.
    pub refined: Option<Vec<Vec<f64>>>,
}

/// Anything that can be evaluated as a function of time.
pub trait Sampler: Sync {
    fn dim(&self) -> usize;

    /// Largest time at which the sampler is defined.
    fn horizon(&self) -> f64;

    fn sample(&self, t: f64) -> DVector<f64>;

    /// Calls `visit(i, u(i * step))` for `i < count`, in order.
    fn visit_uniform(&self, step: f64, count: usize, visit: &mut dyn FnMut(usize, &DVector<f64>)) {
        for i in 0..count {
            visit(i, &self.sample(i as f64 * step));
        }
    }

    fn probe_uniform(&self, space: &Space, probes: &[DVector<f64>], step: f64, count: usize) -> Probe {
        let mut values = vec![vec![0.0; count]; probes.len()];
        self.visit_uniform(step, count, &mut |i, u| {
            for (p, row) in probes.iter().zip(values.iter_mut()) {
                row[i] = space.dot(u, p);
            }
        });
        Probe {
            values,
            refined: None,
        }
    }
}

impl Sampler for Trajectory {
    fn dim(&self) -> usize {
        self.space().dim()
    }

    fn horizon(&self) -> f64 {
        self.final_time()
    }

    /// Linear interpolation between stored states.
    fn sample(&self, t: f64) -> DVector<f64> {
        let times = self.times();
        let states = self.states();
        if times.len() == 1 {
            return states[0].clone();
        }
        let t = t.clamp(0.0, self.final_time());
        let k = match times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(k) => return states[k].clone(),
            Err(k) => k.clamp(1, times.len() - 1) - 1,
        };
        let a = (t - times[k]) / (times[k + 1] - times[k]);
        &states[k] * (1.0 - a) + &states[k + 1] * a
    }

    fn probe_uniform(&self, space: &Space, probes: &[DVector<f64>], step: f64, count: usize) -> Probe {
        let times = self.times();
        let states = self.states();
        let node_series: Vec<Vec<f64>> = probes
            .par_iter()
            .map(|p| states.iter().map(|s| space.dot(s, p)).collect())
            .collect();
        let m = times.len();
        let end = self.final_time();
        let mut aligned = true;
        // For each quadrature node: interval index and local coordinate.
        let mut locs: Vec<(usize, f64)> = Vec::with_capacity(count);
        let mut k = 0;
        for i in 0..count {
            let t = (i as f64 * step).min(end);
            while k + 2 < m && times[k + 1] <= t {
                k += 1;
            }
            if m == 1 {
                locs.push((0, 0.0));
                continue;
            }
            let width = times[k + 1] - times[k];
            let mut a = (t - times[k]) / width;
            if a.abs() <= 1e-9 {
                a = 0.0;
            } else if (a - 1.0).abs() <= 1e-9 {
                a = 1.0;
            } else {
                aligned = false;
            }
            locs.push((k, a));
        }
        let linear = |g: &[f64]| -> Vec<f64> {
            locs.iter()
                .map(|&(k, a)| {
                    if m == 1 || a == 0.0 {
                        g[k]
                    } else if a == 1.0 {
                        g[k + 1]
                    } else {
                        (1.0 - a) * g[k] + a * g[k + 1]
                    }
                })
                .collect()
        };
        let values: Vec<Vec<f64>> = node_series.iter().map(|g| linear(g)).collect();
        let refined = if aligned || m < 4 {
            None
        } else {
            let cubic = |g: &[f64]| -> Vec<f64> {
                locs.iter()
                    .map(|&(k, a)| {
                        if a == 0.0 {
                            return g[k];
                        }
                        if a == 1.0 {
                            return g[k + 1];
                        }
                        let lo = k.saturating_sub(1).min(m - 4);
                        let t = times[k] + a * (times[k + 1] - times[k]);
                        lagrange4(&times[lo..lo + 4], &g[lo..lo + 4], t)
                    })
                    .collect()
            };
            Some(node_series.iter().map(|g| cubic(g)).collect())
        };
        Probe { values, refined }
    }
}

fn lagrange4(x: &[f64], y: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..4 {
        let mut l = 1.0;
        for j in 0..4 {
            if i != j {
                l *= (t - x[j]) / (x[i] - x[j]);
            }
        }
        acc += l * y[i];
    }
    acc
}

/// `e^t u0`.
#[derive(Clone, Debug)]
pub struct ExponentialSampler {
    pub u0: DVector<f64>,
}

impl Sampler for ExponentialSampler {
    fn dim(&self) -> usize {
        self.u0.len()
    }

    fn horizon(&self) -> f64 {
        f64::INFINITY
    }

    fn sample(&self, t: f64) -> DVector<f64> {
        &self.u0 * t.exp()
    }
}

/// `e^t u0` up to `t0`, then `e^{t0} e^{(t - t0)B} u0`.
///
/// With `t0 = 0` this is the semigroup solution itself.
#[derive(Clone, Debug)]
pub struct SpliceSampler {
    u0: DVector<f64>,
    b: DMatrix<f64>,
    t0: f64,
}

impl SpliceSampler {
    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Pure semigroup `e^{tB} u0` for a full-domain generator.
    pub fn semigroup(gen: &Generator, u0: &DVector<f64>) -> Result<Self> {
        if !gen.is_full_domain() {
            return Err(Error::NotFullDomain {
                domain: gen.domain().dim(gen.dim()),
                dim: gen.dim(),
            });
        }
        check_len(gen.dim(), u0.len())?;
        Ok(Self {
            u0: u0.clone(),
            b: gen.matrix(),
            t0: 0.0,
        })
    }
}

impl Sampler for SpliceSampler {
    fn dim(&self) -> usize {
        self.u0.len()
    }

    fn horizon(&self) -> f64 {
        f64::INFINITY
    }

    fn sample(&self, t: f64) -> DVector<f64> {
        if t <= self.t0 {
            &self.u0 * t.exp()
        } else {
            expm(&(&self.b * (t - self.t0))) * &self.u0 * self.t0.exp()
        }
    }

    fn visit_uniform(&self, step: f64, count: usize, visit: &mut dyn FnMut(usize, &DVector<f64>)) {
        let e = expm(&(&self.b * step));
        let mut state: Option<DVector<f64>> = None;
        for i in 0..count {
            let t = i as f64 * step;
            if t <= self.t0 {
                visit(i, &(&self.u0 * t.exp()));
                continue;
            }
            let next = match state.take() {
                Some(s) => &e * s,
                None => self.sample(t),
            };
            visit(i, &next);
            state = Some(next);
        }
    }
}

/// Weak-residual statistics over a test family.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GsReport {
    /// Row per spatial vector, column per temporal profile.
    pub residuals: Vec<Vec<f64>>,
    pub max_residual: f64,
    /// Quadrature (Richardson) plus interpolation estimate.
    pub quadrature_error_estimate: f64,
    pub interpolation_estimate: f64,
    pub pass: bool,
    pub tol: f64,
    pub n_t: usize,
    pub horizon: f64,
    pub profiles: Vec<String>,
}

fn trapezoid_weights(step: f64, count: usize) -> Vec<f64> {
    let mut w = vec![step; count];
    w[0] *= 0.5;
    w[count - 1] *= 0.5;
    w
}

struct ProfileGrid {
    weights: Vec<f64>,
    phi: Vec<Vec<f64>>,
    dphi: Vec<Vec<f64>>,
}

fn profile_grid(profiles: &[TemporalProfile], step: f64, count: usize) -> ProfileGrid {
    let ts: Vec<f64> = (0..count).map(|i| i as f64 * step).collect();
    ProfileGrid {
        weights: trapezoid_weights(step, count),
        phi: profiles.iter().map(|p| ts.iter().map(|&t| p.value(t)).collect()).collect(),
        dphi: profiles
            .iter()
            .map(|p| ts.iter().map(|&t| p.derivative(t)).collect())
            .collect(),
    }
}

/// Unnormalized residual and the `int (|phi| + |phi'|)` factor.
fn raw_residual(grid: &ProfileGrid, j: usize, g: &[f64], h: &[f64], u0v: f64) -> (f64, f64) {
    let (phi, dphi) = (&grid.phi[j], &grid.dphi[j]);
    let mut r = 0.0;
    let mut mass = 0.0;
    for i in 0..grid.weights.len() {
        let w = grid.weights[i];
        r += w * h[i] * phi[i];
        mass += w * (phi[i].abs() + dphi[i].abs());
    }
    // Product rule on each cell: telescopes exactly for constant `g`.
    for i in 1..phi.len() {
        r += 0.5 * (g[i - 1] + g[i]) * (phi[i] - phi[i - 1]);
    }
    (r + u0v * phi[0], mass)
}

/// Weak residual of `candidate` with initial datum `u0` against `family`.
///
/// Entry `(i, j)` is `|int (u, v_i) phi_j' + int (u, M v_i) phi_j + (u0, v_i) phi_j(0)|`
/// divided by `||u0|| ||v_i||_graph int (|phi_j| + |phi_j'|)`, on `n_t`
/// nodes: trapezoid rule for the `phi` term, cellwise
/// `(g_k + g_{k+1}) / 2 * (phi_{k+1} - phi_k)` for the `phi'` term. The error estimate is the Richardson
/// difference against the rule on every other node, plus the gap between
/// linear and cubic interpolation for gridded candidates.
pub fn gs_residual(
    candidate: &dyn Sampler,
    u0: &DVector<f64>,
    op: &RestrictedOperator,
    family: &TestFunctionFamily,
    tol: f64,
) -> Result<GsReport> {
    let space = op.space();
    check_len(op.dim(), candidate.dim())?;
    check_len(op.dim(), u0.len())?;
    let horizon = family.horizon;
    if horizon > candidate.horizon() * (1.0 + 1e-12) {
        return Err(Error::HorizonExceeded {
            family: horizon,
            candidate: candidate.horizon(),
        });
    }
    let p = family.spatial.len();
    let mut probes = family.spatial.clone();
    probes.extend(family.images.iter().cloned());
    let n_t = family.n_t;
    let step = horizon / (n_t - 1) as f64;
    let fine = candidate.probe_uniform(space, &probes, step, n_t);
    let (coarse_count, coarse_values, ratio) = if n_t % 2 == 1 {
        let c: Vec<Vec<f64>> = fine
            .values
            .iter()
            .map(|row| row.iter().step_by(2).copied().collect())
            .collect();
        ((n_t - 1) / 2 + 1, c, 2.0)
    } else {
        let nc = n_t / 2 + 1;
        let sc = horizon / (nc - 1) as f64;
        let probe = candidate.probe_uniform(space, &probes, sc, nc);
        (nc, probe.values, sc / step)
    };
    let fine_grid = profile_grid(&family.profiles, step, n_t);
    let coarse_grid = profile_grid(
        &family.profiles,
        horizon / (coarse_count - 1) as f64,
        coarse_count,
    );
    let u0n = space.norm(u0);
    let rows: Vec<(Vec<f64>, f64, f64)> = (0..p)
        .into_par_iter()
        .map(|i| {
            let v = &family.spatial[i];
            let mv = &family.images[i];
            let graph = (space.dot(v, v) + space.dot(mv, mv)).sqrt();
            let u0v = space.dot(u0, v);
            let mut row = Vec::with_capacity(family.profiles.len());
            let mut quad: f64 = 0.0;
            let mut interp: f64 = 0.0;
            for j in 0..family.profiles.len() {
                let (r, mass) = raw_residual(&fine_grid, j, &fine.values[i], &fine.values[p + i], u0v);
                let norm = u0n * graph * mass;
                let scale = if norm > 0.0 { norm } else { 1.0 };
                let (rc, _) =
                    raw_residual(&coarse_grid, j, &coarse_values[i], &coarse_values[p + i], u0v);
                quad = quad.max((r - rc).abs() / (ratio * ratio - 1.0) / scale);
                if let Some(refined) = &fine.refined {
                    let (rr, _) = raw_residual(&fine_grid, j, &refined[i], &refined[p + i], u0v);
                    interp = interp.max((r - rr).abs() / scale);
                }
                row.push(r.abs() / scale);
            }
            (row, quad, interp)
        })
        .collect();
    let mut residuals = Vec::with_capacity(p);
    let mut max_residual: f64 = 0.0;
    let mut quad: f64 = 0.0;
    let mut interp: f64 = 0.0;
    for (row, q, it) in rows {
        max_residual = row.iter().copied().fold(max_residual, f64::max);
        quad = quad.max(q);
        interp = interp.max(it);
        residuals.push(row);
    }
    let estimate = quad + interp;
    Ok(GsReport {
        residuals,
        max_residual,
        quadrature_error_estimate: estimate,
        interpolation_estimate: interp,
        pass: max_residual <= tol + estimate,
        tol,
        n_t,
        horizon,
        profiles: family.profiles.iter().map(|p| p.label()).collect(),
    })
}

/// Unit vector of `ker(E - A*)` and the growing solution `e^t u0`.
#[derive(Clone, Debug)]
pub struct Witness {
    pub u0: DVector<f64>,
    space: Arc<Space>,
}

impl Witness {
    pub fn exp_solution(&self) -> ExponentialSampler {
        ExponentialSampler { u0: self.u0.clone() }
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }
}

/// Takes the first `n_minus` vector as initial datum.
pub fn witness_nonuniqueness(op: &RestrictedOperator, tol: f64) -> Result<Witness> {
    let defi = deficiency(op, tol)?;
    if defi.d_minus == 0 {
        return Err(Error::ForwardProblemUnique);
    }
    Ok(Witness {
        u0: defi.n_minus_basis.vectors()[0].clone(),
        space: op.space().clone(),
    })
}

/// `max_v |(u0, v - Mv)| / (||u0|| ||v||_graph)` over the domain basis.
pub fn witness_identity_defect(op: &RestrictedOperator, u0: &DVector<f64>) -> f64 {
    let space = op.space();
    let un = space.norm(u0);
    op.domain_vectors()
        .iter()
        .map(|v| {
            let mv = op.apply(v);
            let graph = (space.dot(v, v) + space.dot(&mv, &mv)).sqrt();
            space.dot(u0, &(v - &mv)).abs() / (un * graph)
        })
        .fold(0.0, f64::max)
}

/// Splices the witness with the semigroup of `gen` at `t0`.
///
/// Requires `gen` to be full-domain and to pass the weak inclusion
/// `gen ⊂ op*` at `tol`.
pub fn splice(witness: &Witness, gen: &Generator, op: &RestrictedOperator, t0: f64, tol: f64) -> Result<SpliceSampler> {
    if !(t0 >= 0.0) || !t0.is_finite() {
        return Err(Error::InvalidArgument(format!("splice time must be non-negative, got {t0}")));
    }
    let inc = check_inclusion_in_adjoint(gen, op, tol);
    if !inc.pass {
        return Err(Error::InclusionFailed {
            defect: inc.max_defect,
            tol,
        });
    }
    let mut s = SpliceSampler::semigroup(gen, &witness.u0)?;
    s.t0 = t0;
    Ok(s)
}

/// Two contractive semigroups of generalized solutions from one datum.
#[derive(Clone, Debug)]
pub struct MultiplicityDemo {
    pub traj1: Trajectory,
    pub traj2: Trajectory,
    pub gen1: Generator,
    pub gen2: Generator,
    pub couplings: (f64, f64),
    /// `max_k ||u1(t_k) - u2(t_k)||`.
    pub separation: f64,
}

/// Coupling with `c` in the first deficiency direction and `+1` elsewhere.
fn coupling_matrix(c: f64, d_minus: usize, d_plus: usize) -> Result<ExtensionSpec> {
    let mut v = DMatrix::zeros(d_minus, d_plus);
    for k in 0..d_minus.min(d_plus) {
        v[(k, k)] = 1.0;
    }
    v[(0, 0)] = c;
    let kind = if c.abs() == 1.0 && d_minus == d_plus {
        ExtensionKind::SkewSymmetric
    } else {
        ExtensionKind::DissipativeContraction
    };
    ExtensionSpec::new(v, kind)
}

/// Extends `op` with two couplings of the first deficiency direction and
/// evolves `u0` under both with the Cayley stepper.
pub fn semigroup_multiplicity_demo(
    op: &RestrictedOperator,
    u0: &DVector<f64>,
    couplings: (f64, f64),
    dt: f64,
    horizon: f64,
    rank_tol: f64,
) -> Result<MultiplicityDemo> {
    let defi = deficiency(op, rank_tol)?;
    if defi.d_plus == 0 || defi.d_minus == 0 {
        return Err(Error::SemigroupUnique);
    }
    let nsteps = (horizon / dt).round() as usize;
    let build = |c: f64| -> Result<(Generator, Trajectory)> {
        let spec = coupling_matrix(c, defi.d_minus, defi.d_plus)?;
        let ext = extend_with(op, &defi, &spec, rank_tol)?;
        let gen = Generator::from_extension(&ext);
        let traj = evolve_cayley(&gen, u0, dt, nsteps)?;
        Ok((gen, traj))
    };
    let (gen1, traj1) = build(couplings.0)?;
    let (gen2, traj2) = build(couplings.1)?;
    let space = op.space();
    let separation = traj1
        .states()
        .iter()
        .zip(traj2.states())
        .map(|(a, b)| space.distance(a, b))
        .fold(0.0, f64::max);
    Ok(MultiplicityDemo {
        traj1,
        traj2,
        gen1,
        gen2,
        couplings,
        separation,
    })
}

/// `||a(t) - b(t)||` at each time.
pub fn compare_solutions(a: &dyn Sampler, b: &dyn Sampler, space: &Space, times: &[f64]) -> Vec<f64> {
    times
        .iter()
        .map(|&t| space.distance(&a.sample(t), &b.sample(t)))
        .collect()
}
