//! Evolution `u(t) = e^{tB} u0` for full-domain generators.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::hilbert::Space;
use crate::linalg::{expm, gmres, Action};
use crate::operator::Generator;

/// Dense matrices above this size are not exponentiated.
pub const MAX_DENSE_DIM: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMethod {
    ExactExponential,
    CayleyStep,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StepperMeta {
    pub method: StepMethod,
    pub dt: f64,
    pub solver_tol: f64,
}

/// Time-stamped states.
///
/// `step_norms` holds the norm after every step even when only every
/// `stride`-th state is stored.
#[derive(Clone, Debug)]
pub struct Trajectory {
    space: Arc<Space>,
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    step_norms: Vec<f64>,
    meta: StepperMeta,
}

impl Trajectory {
    pub fn new(
        space: Arc<Space>,
        times: Vec<f64>,
        states: Vec<DVector<f64>>,
        meta: StepperMeta,
    ) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() {
            return Err(Error::InvalidArgument(
                "trajectory needs matching, non-empty times and states".into(),
            ));
        }
        if times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "trajectory times must start at 0 and increase strictly".into(),
            ));
        }
        for s in &states {
            check_len(space.dim(), s.len())?;
        }
        let step_norms = states.iter().map(|s| space.norm(s)).collect();
        Ok(Self {
            space,
            times,
            states,
            step_norms,
            meta,
        })
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn meta(&self) -> &StepperMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("non-empty")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    /// Norms of the stored states.
    pub fn norms(&self) -> Vec<f64> {
        self.states.iter().map(|s| self.space.norm(s)).collect()
    }

    /// Norm after every step, including unstored ones.
    pub fn step_norms(&self) -> &[f64] {
        &self.step_norms
    }

    /// Largest relative per-step norm increase, `max(|u_{k+1}|/|u_k| - 1)`.
    pub fn max_norm_growth(&self) -> f64 {
        self.step_norms
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0] - 1.0)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max_k | |u_k| - |u_0| | / |u_0|`.
    pub fn energy_drift(&self) -> f64 {
        let n0 = self.step_norms[0];
        self.step_norms
            .iter()
            .map(|n| (n - n0).abs() / n0)
            .fold(0.0, f64::max)
    }

    /// Every `stride`-th stored state plus the last one; step norms are kept.
    pub fn thinned(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let last = self.states.len() - 1;
        let keep: Vec<usize> = (0..=last).filter(|k| k % stride == 0 || *k == last).collect();
        Self {
            space: self.space.clone(),
            times: keep.iter().map(|&k| self.times[k]).collect(),
            states: keep.iter().map(|&k| self.states[k].clone()).collect(),
            step_norms: self.step_norms.clone(),
            meta: self.meta,
        }
    }

    /// Copy with states replaced by `states[max(k - lag, 0)]`.
    pub fn lagged(&self, lag: usize) -> Self {
        let states: Vec<DVector<f64>> = (0..self.states.len())
            .map(|k| self.states[k.saturating_sub(lag)].clone())
            .collect();
        let step_norms = states.iter().map(|s| self.space.norm(s)).collect();
        Self {
            space: self.space.clone(),
            times: self.times.clone(),
            states,
            step_norms,
            meta: self.meta,
        }
    }
}

fn require_full(gen: &Generator) -> Result<()> {
    if gen.is_full_domain() {
        Ok(())
    } else {
        Err(Error::NotFullDomain {
            domain: gen.domain().dim(gen.dim()),
            dim: gen.dim(),
        })
    }
}

fn dense_matrix(gen: &Generator) -> Result<DMatrix<f64>> {
    if gen.dim() > MAX_DENSE_DIM {
        return Err(Error::InvalidArgument(format!(
            "exact exponential limited to dimension {MAX_DENSE_DIM}, got {}",
            gen.dim()
        )));
    }
    Ok(gen.matrix())
}

/// `states[k] = exp(times[k] B) u0` by dense matrix exponentials of the
/// time increments. A leading `0` is inserted if `times` lacks one.
pub fn evolve_exact(gen: &Generator, u0: &DVector<f64>, times: &[f64]) -> Result<Trajectory> {
    require_full(gen)?;
    check_len(gen.dim(), u0.len())?;
    let mut ts: Vec<f64> = Vec::with_capacity(times.len() + 1);
    if times.first().is_none_or(|&t| t != 0.0) {
        ts.push(0.0);
    }
    ts.extend_from_slice(times);
    if ts.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("times must be positive and increasing".into()));
    }
    let b = dense_matrix(gen)?;
    let mut states = Vec::with_capacity(ts.len());
    states.push(u0.clone());
    let mut cached: Option<(f64, DMatrix<f64>)> = None;
    for w in ts.windows(2) {
        let dt = w[1] - w[0];
        let reuse = matches!(&cached, Some((c, _)) if ((c - dt) / dt).abs() < 1e-12);
        if !reuse {
            cached = Some((dt, expm(&(&b * dt))));
        }
        let e = &cached.as_ref().unwrap().1;
        let next = e * states.last().unwrap();
        states.push(next);
    }
    let dt = if ts.len() > 1 { ts[1] - ts[0] } else { 0.0 };
    Trajectory::new(
        gen.space().clone(),
        ts,
        states,
        StepperMeta {
            method: StepMethod::ExactExponential,
            dt,
            solver_tol: 0.0,
        },
    )
}

/// Options for [`evolve_cayley_with`].
#[derive(Clone, Copy, Debug)]
pub struct CayleyOptions {
    /// Keep every `stride`-th state (the final state is always kept).
    pub stride: usize,
    /// Relative residual for the iterative solver used with sparse actions.
    pub solver_tol: f64,
    pub restart: usize,
}

impl Default for CayleyOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            solver_tol: 1e-14,
            restart: 40,
        }
    }
}

/// Trapezoidal (Cayley) stepping `u_{k+1} = (E - dt/2 B)^{-1}(E + dt/2 B) u_k`.
pub fn evolve_cayley(gen: &Generator, u0: &DVector<f64>, dt: f64, nsteps: usize) -> Result<Trajectory> {
    evolve_cayley_with(gen, u0, dt, nsteps, CayleyOptions::default())
}

pub fn evolve_cayley_with(
    gen: &Generator,
    u0: &DVector<f64>,
    dt: f64,
    nsteps: usize,
    opts: CayleyOptions,
) -> Result<Trajectory> {
    require_full(gen)?;
    check_len(gen.dim(), u0.len())?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let stride = opts.stride.max(1);
    let space = gen.space().clone();
    let half = 0.5 * dt;
    let mut times = vec![0.0];
    let mut states = vec![u0.clone()];
    let mut step_norms = Vec::with_capacity(nsteps + 1);
    step_norms.push(space.norm(u0));
    let keep = |k: usize, u: &DVector<f64>, times: &mut Vec<f64>, states: &mut Vec<DVector<f64>>| {
        if k.is_multiple_of(stride) || k == nsteps {
            times.push(k as f64 * dt);
            states.push(u.clone());
        }
    };
    let solver_tol;
    match gen.action() {
        Action::Dense(b) => {
            let n = b.nrows();
            let left = DMatrix::<f64>::identity(n, n) - b * half;
            let right = DMatrix::<f64>::identity(n, n) + b * half;
            let lu = left.lu();
            let u_diag = lu.u().diagonal();
            let scale = u_diag.amax();
            if u_diag.iter().any(|d| d.abs() <= 1e-14 * scale) {
                return Err(Error::SingularStep);
            }
            let mut u = u0.clone();
            for k in 1..=nsteps {
                u = lu.solve(&(&right * &u)).ok_or(Error::SingularStep)?;
                step_norms.push(space.norm(&u));
                keep(k, &u, &mut times, &mut states);
            }
            solver_tol = 0.0;
        }
        Action::Sparse(b) => {
            let mut u = u0.clone();
            for k in 1..=nsteps {
                let bu = b.matvec(&u);
                let rhs = &u + &bu * half;
                let guess = &rhs + b.matvec(&rhs) * half;
                let out = gmres(
                    |x| x - b.matvec(x) * half,
                    &rhs,
                    guess,
                    opts.solver_tol,
                    opts.restart,
                    20 * opts.restart,
                )?;
                u = out.x;
                step_norms.push(space.norm(&u));
                keep(k, &u, &mut times, &mut states);
            }
            solver_tol = opts.solver_tol;
        }
    }
    let meta = StepperMeta {
        method: StepMethod::CayleyStep,
        dt,
        solver_tol,
    };
    let mut traj = Trajectory::new(space, times, states, meta)?;
    traj.step_norms = step_norms;
    Ok(traj)
}

/// Evolution under the weighted adjoint `B*`.
pub fn adjoint_trajectory(gen: &Generator, u0: &DVector<f64>, times: &[f64]) -> Result<Trajectory> {
    require_full(gen)?;
    evolve_exact(&gen.adjoint()?, u0, times)
}

/// `nsteps + 1` equispaced times on `[0, nsteps * dt]`.
pub fn uniform_times(dt: f64, nsteps: usize) -> Vec<f64> {
    (0..=nsteps).map(|k| k as f64 * dt).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::Domain;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rot() -> Generator {
        let s = Arc::new(Space::uniform(2, 1.0, "R2").unwrap());
        Generator::new(
            s,
            Action::Dense(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])),
            Domain::Full,
            "J",
        )
        .unwrap()
    }

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_column_slice(&[a, b])
    }

    #[test]
    fn exact_rotation_quarter_turn() {
        let t = evolve_exact(&rot(), &v2(1.0, 0.0), &[FRAC_PI_2]).unwrap();
        assert_eq!(t.times(), &[0.0, FRAC_PI_2]);
        assert!((t.last() - v2(0.0, 1.0)).amax() < 1e-10);
    }

    #[test]
    fn zero_generator_is_identity() {
        let s = Arc::new(Space::uniform(3, 1.0, "R3").unwrap());
        let g = Generator::new(s, Action::Dense(DMatrix::zeros(3, 3)), Domain::Full, "0").unwrap();
        let u0 = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let t = evolve_exact(&g, &u0, &[0.3, 7.0]).unwrap();
        assert!(t.states().iter().all(|s| (s - &u0).amax() == 0.0));
    }

    #[test]
    fn cayley_rotation() {
        let t = evolve_cayley(&rot(), &v2(1.0, 0.0), 1e-3, 1571).unwrap();
        assert_eq!(t.len(), 1572);
        // 1571 steps end at t = 1.571, just past pi/2.
        let exact = evolve_exact(&rot(), &v2(1.0, 0.0), &[1.571]).unwrap();
        assert!((t.last() - exact.last()).amax() < 2e-6);
        assert!((t.last() - v2(0.0, 1.0)).amax() < 2.1e-4);
        assert!(t.step_norms().iter().all(|n| (n - 1.0).abs() < 1e-12));
    }

    #[test]
    fn cayley_damping_ratio() {
        let s = Arc::new(Space::uniform(2, 1.0, "R2").unwrap());
        let g = Generator::new(s, Action::Dense(-DMatrix::identity(2, 2)), Domain::Full, "-E").unwrap();
        let dt = 0.01;
        let t = evolve_cayley(&g, &v2(3.0, -1.0), dt, 50).unwrap();
        let want = (1.0 - dt / 2.0) / (1.0 + dt / 2.0);
        for w in t.step_norms().windows(2) {
            assert!(w[1] < w[0]);
            assert!((w[1] / w[0] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn non_full_domain_rejected() {
        let op = crate::oracles::minimal_derivative_operator(10).unwrap();
        let g = Generator::negated(&op);
        let u0 = DVector::zeros(9);
        assert!(matches!(evolve_exact(&g, &u0, &[1.0]), Err(Error::NotFullDomain { .. })));
        assert!(matches!(evolve_cayley(&g, &u0, 0.1, 3), Err(Error::NotFullDomain { .. })));
    }

    #[test]
    fn singular_step_detected() {
        let s = Arc::new(Space::uniform(1, 1.0, "R").unwrap());
        let g = Generator::new(s, Action::Dense(DMatrix::from_element(1, 1, 2.0)), Domain::Full, "2").unwrap();
        let u0 = DVector::from_element(1, 1.0);
        assert!(matches!(evolve_cayley(&g, &u0, 1.0, 1), Err(Error::SingularStep)));
    }

    #[test]
    fn sparse_and_dense_cayley_agree() {
        let n = 12;
        let mut trips = Vec::new();
        for i in 0..n {
            trips.push((i, (i + 1) % n, 0.5));
            trips.push(((i + 1) % n, i, -0.5));
        }
        let sp = crate::linalg::CsrMatrix::from_triplets(n, n, &trips).unwrap();
        let s = Arc::new(Space::uniform(n, 1.0, "ring").unwrap());
        let gs = Generator::new(s.clone(), Action::Sparse(sp.clone()), Domain::Full, "s").unwrap();
        let gd = Generator::new(s, Action::Dense(sp.to_dense()), Domain::Full, "d").unwrap();
        let u0 = DVector::from_fn(n, |i, _| (i as f64).cos());
        let a = evolve_cayley(&gs, &u0, 0.05, 40).unwrap();
        let b = evolve_cayley(&gd, &u0, 0.05, 40).unwrap();
        assert!((a.last() - b.last()).amax() < 1e-12);
    }

    #[test]
    fn adjoint_of_skew_runs_backwards() {
        let u0 = v2(0.6, 0.8);
        let fwd = evolve_exact(&rot(), &u0, &[PI / 3.0]).unwrap();
        let adj = adjoint_trajectory(&rot(), fwd.last(), &[PI / 3.0]).unwrap();
        assert!((adj.last() - u0).amax() < 1e-12);
    }

    #[test]
    fn strided_storage_keeps_all_norms() {
        let t = evolve_cayley_with(
            &rot(),
            &v2(1.0, 0.0),
            0.01,
            25,
            CayleyOptions {
                stride: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(t.times().len(), 4);
        assert!((t.final_time() - 0.25).abs() < 1e-15);
        assert_eq!(t.step_norms().len(), 26);
    }

    #[test]
    fn lagged_trajectory_repeats_initial_state() {
        let t = evolve_cayley(&rot(), &v2(1.0, 0.0), 0.1, 5).unwrap();
        let l = t.lagged(2);
        assert_eq!(l.states()[2], t.states()[0]);
        assert_eq!(l.states()[5], t.states()[3]);
    }

    #[test]
    fn thinning_keeps_last_state_and_step_norms() {
        let t = evolve_cayley(&rot(), &v2(1.0, 0.0), 0.1, 7).unwrap();
        let th = t.thinned(3);
        assert_eq!(th.len(), 4);
        assert_eq!(th.times()[3], t.final_time());
        assert_eq!(th.last(), t.last());
        assert_eq!(th.step_norms().len(), 8);
    }
}
