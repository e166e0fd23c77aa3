//! One function per subcommand. Each returns a report and a verdict; the
//! caller writes files and picks the exit code.

use anyhow::{anyhow, bail, Result};
use serde::Serialize;
use serde_json::{json, Value};
use skewflow::operator::{
    agreement_defect, extend_with, isometry_defect, probe_vectors, restriction_defect,
};
use skewflow::oracles::{
    coupling_to_theta, halfline_case, halfline_witness_residual, interval_shift_semigroup,
    minimal_derivative_operator, HalfLine,
};
use skewflow::semigroup::{evolve_cayley_with, uniform_times, CayleyOptions};
use skewflow::transport::{transport_family, TransportMode};
use skewflow::{
    check_inclusion_in_adjoint, check_m_dissipative, check_skew_symmetry, compare_solutions,
    deficiency, evolve_exact, gs_residual, semigroup_multiplicity_demo, splice,
    witness_nonuniqueness, Error, ExtensionKind, ExtensionSpec, Generator, GsReport, Matrix,
    RestrictedOperator, TestFunctionFamily, Trajectory, Vector,
};

use crate::spec::{Loaded, Model};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Cayley,
}

#[derive(Clone, Debug, Serialize)]
pub struct Tolerances {
    pub rank_tol: f64,
    pub skew_tol: f64,
    pub form_tol: f64,
    pub gs_tol: Option<f64>,
    pub solver_tol: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Evolution {
    pub method: Method,
    pub dt: f64,
    pub horizon: f64,
    pub stride: usize,
    pub n_t: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Settings {
    pub tol: Tolerances,
    pub evolution: Evolution,
    pub seed: u64,
    pub theta: Option<f64>,
    pub t0: Option<f64>,
}

impl Settings {
    fn gs_tol(&self, default: f64) -> f64 {
        self.tol.gs_tol.unwrap_or(default)
    }

    fn steps(&self) -> usize {
        (self.evolution.horizon / self.evolution.dt).round().max(1.0) as usize
    }
}

/// A residual table destined for `residuals.csv`.
pub struct ResidualTable {
    pub label: String,
    pub report: GsReport,
}

pub struct Outcome {
    pub report: Value,
    pub pass: bool,
    /// Printed to stderr on failure.
    pub message: Option<String>,
    pub trajectory: Option<Trajectory>,
    pub residuals: Vec<ResidualTable>,
}

impl Outcome {
    fn new(report: Value, pass: bool) -> Self {
        Self {
            report,
            pass,
            message: None,
            trajectory: None,
            residuals: Vec::new(),
        }
    }

    fn failed(report: Value, message: String) -> Self {
        Self {
            message: Some(message),
            ..Self::new(report, false)
        }
    }
}

fn operator_summary(model: &Model) -> Value {
    let op = model.operator();
    let mut v = json!({
        "label": op.label(),
        "kind": model.kind(),
        "dim": op.dim(),
        "domain_dim": op.domain_dim(),
        "domain": op.domain().describe(op.dim()),
    });
    if let Model::Transport(t) = model {
        let g = t.grid();
        v["grid"] = json!({"nx": g.nx, "ny": g.ny, "lx": g.lx, "ly": g.ly});
        v["mode"] = json!(t.mode());
    }
    v
}

fn coupling_spec(theta: f64, d_minus: usize, d_plus: usize) -> Result<ExtensionSpec> {
    let mut v = Matrix::zeros(d_minus, d_plus);
    for k in 0..d_minus.min(d_plus) {
        v[(k, k)] = theta;
    }
    let kind = if d_minus == d_plus && theta.abs() == 1.0 {
        ExtensionKind::SkewSymmetric
    } else {
        ExtensionKind::DissipativeContraction
    };
    Ok(ExtensionSpec::new(v, kind)?)
}

/// `B = -A` for a full-domain operator, `B = -A~` of the `theta`
/// extension otherwise.
fn generator(op: &RestrictedOperator, theta: f64, rank_tol: f64) -> Result<(Generator, Option<RestrictedOperator>)> {
    if op.is_full_domain() {
        return Ok((Generator::negated(op), None));
    }
    let defi = deficiency(op, rank_tol)?;
    if defi.d_plus == 0 && defi.d_minus == 0 {
        bail!("operator has zero deficiency but a proper domain; nothing to extend");
    }
    let spec = coupling_spec(theta, defi.d_minus, defi.d_plus)?;
    let ext = extend_with(op, &defi, &spec, rank_tol)?;
    Ok((Generator::from_extension(&ext), Some(ext)))
}

fn evolve(gen: &Generator, u0: &Vector, s: &Settings, stride: usize) -> Result<Trajectory> {
    let steps = s.steps();
    let dt = s.evolution.horizon / steps as f64;
    Ok(match s.evolution.method {
        Method::Cayley => evolve_cayley_with(
            gen,
            u0,
            dt,
            steps,
            CayleyOptions {
                stride,
                solver_tol: s.tol.solver_tol,
                ..Default::default()
            },
        )?,
        Method::Exact => {
            let mut times: Vec<f64> = uniform_times(dt, steps).into_iter().step_by(stride.max(1)).collect();
            if times.last() != Some(&(steps as f64 * dt)) {
                times.push(steps as f64 * dt);
            }
            evolve_exact(gen, u0, &times)?
        }
    })
}

fn trajectory_summary(traj: &Trajectory, s: &Settings) -> Value {
    let norms = traj.step_norms();
    json!({
        "method": s.evolution.method,
        "dt": s.evolution.horizon / s.steps() as f64,
        "steps": s.steps(),
        "horizon": traj.final_time(),
        "initial_norm": norms[0],
        "final_norm": norms[norms.len() - 1],
        "energy_drift": traj.energy_drift(),
        "max_norm_growth": traj.max_norm_growth(),
    })
}

fn family_for(model: &Model, horizon: f64, n_t: usize) -> skewflow::Result<TestFunctionFamily> {
    match model {
        Model::Transport(t) => transport_family(t, horizon, n_t),
        Model::Plain(op) => TestFunctionFamily::standard(op, horizon, n_t, 4),
    }
}

pub fn analyze(l: &Loaded, s: &Settings) -> Result<Outcome> {
    let op = l.model.operator();
    let skew = check_skew_symmetry(op, s.tol.skew_tol);
    let probes = probe_vectors(op, 100, s.seed);
    let iso = isometry_defect(op, &probes);
    let defi = deficiency(op, s.tol.rank_tol)?;
    let pass = skew.pass && iso <= s.tol.skew_tol;
    let report = json!({
        "command": "analyze",
        "operator": operator_summary(&l.model),
        "d_plus": defi.d_plus,
        "d_minus": defi.d_minus,
        "deficiency": {
            "rank_tol": defi.tol_used,
            "orientation": defi.orientation,
            "plus_spectrum_tail": tail(&defi.plus_spectrum),
            "minus_spectrum_tail": tail(&defi.minus_spectrum),
        },
        "skew": skew,
        "isometry": {"probes": probes.len(), "seed": s.seed, "max_defect": iso},
        "maximal": defi.d_plus == 0 || defi.d_minus == 0,
        "skew_adjoint": defi.d_plus == 0 && defi.d_minus == 0,
        "pass": pass,
    });
    let mut out = Outcome::new(report, pass);
    if !pass {
        out.message = Some(format!(
            "operator is not skew-symmetric within {:e} (defect {:e}, isometry {:e})",
            s.tol.skew_tol, skew.max_defect, iso
        ));
    }
    Ok(out)
}

/// Smallest singular values, the ones that decide the deficiency.
fn tail(spectrum: &[f64]) -> Vec<f64> {
    spectrum.iter().rev().take(4).rev().copied().collect()
}

pub fn extend(l: &Loaded, s: &Settings) -> Result<Outcome> {
    let op = l.model.operator();
    let theta = s.theta.unwrap_or(1.0);
    let defi = deficiency(op, s.tol.rank_tol)?;
    let base = json!({
        "command": "extend",
        "operator": operator_summary(&l.model),
        "d_plus": defi.d_plus,
        "d_minus": defi.d_minus,
        "theta": theta,
    });
    let spec = coupling_spec(theta, defi.d_minus, defi.d_plus)?;
    let ext = match extend_with(op, &defi, &spec, s.tol.rank_tol) {
        Ok(ext) => ext,
        Err(e @ Error::ExtensionDomainNotDense { .. }) => {
            let mut r = base;
            r["error"] = json!(e.to_string());
            r["pass"] = json!(false);
            return Ok(Outcome::failed(r, e.to_string()));
        }
        Err(e) => return Err(e.into()),
    };
    let gen = Generator::from_extension(&ext);
    let diss = check_m_dissipative(&gen, &[0.5, 1.0, 2.0], s.tol.form_tol);
    let inc = check_inclusion_in_adjoint(&gen, op, s.tol.skew_tol);
    let restr = restriction_defect(&gen, op);
    let agree = agreement_defect(&ext, op);
    let skew = (spec.kind == ExtensionKind::SkewSymmetric).then(|| check_skew_symmetry(&ext, s.tol.skew_tol));
    let pass = diss.pass
        && inc.pass
        && restr <= s.tol.skew_tol
        && skew.as_ref().is_none_or(|r| r.pass);
    let mut report = base;
    report["extension"] = json!({
        "kind": spec.kind,
        "full_domain": ext.is_full_domain(),
        "skew": skew,
        "restriction_defect": restr,
        "agreement_defect": agree,
    });
    report["generator"] = json!({
        "dissipativity": diss,
        "inclusion_in_adjoint": inc,
    });
    report["pass"] = json!(pass);
    let mut out = Outcome::new(report, pass);
    if !pass {
        out.message = Some("extension checks failed; see report.json".into());
    }
    Ok(out)
}

pub fn evolve_cmd(l: &Loaded, s: &Settings) -> Result<Outcome> {
    let op = l.model.operator();
    let (gen, _) = generator(op, s.theta.unwrap_or(1.0), s.tol.rank_tol)?;
    let traj = evolve(&gen, &l.initial, s, s.evolution.stride)?;
    let growth = traj.max_norm_growth();
    let pass = growth <= 1e-12;
    let mut report = json!({
        "command": "evolve",
        "operator": operator_summary(&l.model),
        "generator": gen.provenance(),
        "trajectory": trajectory_summary(&traj, s),
        "contractive": pass,
        "pass": pass,
    });
    if let Some(theta) = s.theta {
        report["theta"] = json!(theta);
    }
    let mut out = Outcome::new(report, pass);
    if !pass {
        out.message = Some(format!("norm grew by a relative {growth:e} in one step"));
    }
    out.trajectory = Some(traj);
    Ok(out)
}

pub fn verify(l: &Loaded, s: &Settings) -> Result<Outcome> {
    let op = l.model.operator();
    let (gen, _) = generator(op, s.theta.unwrap_or(1.0), s.tol.rank_tol)?;
    let traj = evolve(&gen, &l.initial, s, 1)?;
    let n_t = s.evolution.n_t.unwrap_or(s.steps() + 1);
    let fam = family_for(&l.model, traj.final_time(), n_t)?;
    let tol = s.gs_tol(if l.model.kind() == "transport" { 1e-4 } else { 1e-5 });
    let gs = gs_residual(&traj, &l.initial, op, &fam, tol)?;
    let pass = gs.pass;
    let report = json!({
        "command": "verify",
        "operator": operator_summary(&l.model),
        "generator": gen.provenance(),
        "trajectory": trajectory_summary(&traj, s),
        "gs": gs,
        "pass": pass,
    });
    let mut out = Outcome::new(report, pass);
    if !pass {
        out.message = Some(format!(
            "weak residual {:e} exceeds tolerance {tol:e}",
            gs.max_residual
        ));
    }
    out.residuals.push(ResidualTable {
        label: "semigroup".into(),
        report: gs,
    });
    out.trajectory = Some(traj.thinned(s.evolution.stride));
    Ok(out)
}

pub fn witness(l: &Loaded, s: &Settings) -> Result<Outcome> {
    let op = l.model.operator();
    let wit = match witness_nonuniqueness(op, s.tol.rank_tol) {
        Ok(w) => w,
        Err(Error::ForwardProblemUnique) => {
            let msg = "forward problem unique (d_minus = 0)".to_string();
            let report = json!({
                "command": "witness",
                "operator": operator_summary(&l.model),
                "d_minus": 0,
                "forward_unique": true,
                "message": msg,
                "pass": false,
            });
            return Ok(Outcome::failed(report, msg));
        }
        Err(e) => return Err(e.into()),
    };
    let horizon = s.evolution.horizon;
    let n_t = s
        .evolution
        .n_t
        .unwrap_or((10_000.0 * horizon).round() as usize + 1);
    let tol = s.gs_tol(1e-5);
    let fam = TestFunctionFamily::standard(op, horizon, n_t, 4)?;
    let space = op.space();
    let u0n = space.norm(&wit.u0);
    let exp = wit.exp_solution();
    let r_exp = gs_residual(&exp, &wit.u0, op, &fam, tol)?;
    let (gen, _) = generator(op, s.theta.unwrap_or(1.0), s.tol.rank_tol)?;
    let t0 = s.t0.unwrap_or(0.0);
    let semi = splice(&wit, &gen, op, t0, s.tol.skew_tol)?;
    let r_semi = gs_residual(&semi, &wit.u0, op, &fam, tol)?;
    let t_cmp = horizon.min(1.0);
    let dist = compare_solutions(&exp, &semi, space, &[t_cmp])[0] / u0n;
    let pass = r_exp.pass && r_semi.pass;
    let report = json!({
        "command": "witness",
        "operator": operator_summary(&l.model),
        "u0_norm": u0n,
        "identity_defect": skewflow::weak::witness_identity_defect(op, &wit.u0),
        "exp_solution": {"max_residual": r_exp.max_residual, "pass": r_exp.pass},
        "semigroup_solution": {"t0": t0, "max_residual": r_semi.max_residual, "pass": r_semi.pass},
        "distance": {"t": t_cmp, "relative": dist},
        "pass": pass,
    });
    let mut out = Outcome::new(report, pass);
    if !pass {
        out.message = Some("a witness candidate failed the weak residual check".into());
    }
    out.residuals.push(ResidualTable {
        label: "exp".into(),
        report: r_exp,
    });
    out.residuals.push(ResidualTable {
        label: format!("splice_t0={t0}"),
        report: r_semi,
    });
    Ok(out)
}

pub fn multiplicity(l: &Loaded, s: &Settings) -> Result<Outcome> {
    let op = l.model.operator();
    let second = s.theta.unwrap_or(0.0);
    let couplings = (1.0, second);
    let base = json!({
        "command": "multiplicity",
        "operator": operator_summary(&l.model),
        "couplings": [couplings.0, couplings.1],
    });
    let demo = match semigroup_multiplicity_demo(
        op,
        &l.initial,
        couplings,
        s.evolution.dt,
        s.evolution.horizon,
        s.tol.rank_tol,
    ) {
        Ok(d) => d,
        Err(e @ (Error::ExtensionDomainNotDense { .. } | Error::SemigroupUnique)) => {
            let mut r = base;
            r["error"] = json!(e.to_string());
            r["pass"] = json!(false);
            return Ok(Outcome::failed(r, e.to_string()));
        }
        Err(e) => return Err(e.into()),
    };
    let n0 = op.space().norm(&l.initial);
    let tol = s.gs_tol(1e-5);
    let mut residuals = Vec::new();
    let mut entries = Vec::new();
    for (v, traj) in [(couplings.0, &demo.traj1), (couplings.1, &demo.traj2)] {
        let n_t = s.evolution.n_t.unwrap_or(traj.len());
        let fam = TestFunctionFamily::standard(op, traj.final_time(), n_t, 4)?;
        let gs = gs_residual(traj, &l.initial, op, &fam, tol)?;
        entries.push(json!({
            "coupling": v,
            "final_norm": traj.step_norms()[traj.step_norms().len() - 1],
            "max_residual": gs.max_residual,
            "pass": gs.pass,
        }));
        residuals.push(ResidualTable {
            label: format!("V={v}"),
            report: gs,
        });
    }
    let sep = demo.separation / n0;
    let pass = sep >= 0.1 && residuals.iter().all(|r| r.report.pass);
    let mut report = base;
    report["separation"] = json!(sep);
    report["solutions"] = Value::Array(entries);
    report["pass"] = json!(pass);
    let mut out = Outcome::new(report, pass);
    if !pass {
        out.message = Some(format!("separation {sep:.4} or a residual check failed"));
    }
    out.residuals = residuals;
    out.trajectory = Some(demo.traj1.thinned(s.evolution.stride));
    Ok(out)
}

pub fn transport_run(l: &Loaded, s: &Settings) -> Result<Outcome> {
    let Model::Transport(top) = &l.model else {
        bail!("transport-run needs an operator of kind \"transport\"");
    };
    let op = top.operator();
    let (gen, _) = generator(op, s.theta.unwrap_or(1.0), s.tol.rank_tol)?;
    let traj = evolve(&gen, &l.initial, s, 1)?;
    let space = op.space();
    let u0 = &l.initial;
    let u_t = traj.last();
    let n0 = space.norm(u0);
    let area = top.grid().area();
    let mass0: f64 = u0.iter().sum::<f64>() * area;
    let mass_abs: f64 = u0.iter().map(|v| v.abs()).sum::<f64>() * area;
    let mass_t: f64 = u_t.iter().sum::<f64>() * area;
    let field = top.field();
    let amax = field.max_speed();
    let div = field.max_divergence();
    let n_t = s.evolution.n_t.unwrap_or(traj.len());
    let tol = s.gs_tol(1e-4);
    let gs = match family_for(&l.model, traj.final_time(), n_t) {
        Ok(fam) => Some(gs_residual(&traj, u0, op, &fam, tol)?),
        // Bumps outside an interior domain: skip the weak check.
        Err(skewflow::Error::InvalidArgument(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let drift = traj.energy_drift();
    let conservative = top.mode() == TransportMode::PeriodicFull || s.theta.unwrap_or(1.0).abs() == 1.0;
    let energy_ok = if conservative { drift <= s.tol.skew_tol } else { traj.max_norm_growth() <= 1e-12 };
    let div_ok = div <= 1e-13 * amax.max(f64::MIN_POSITIVE) || div == 0.0;
    let pass = energy_ok && div_ok && gs.as_ref().is_none_or(|g| g.pass);
    let report = json!({
        "command": "transport-run",
        "operator": operator_summary(&l.model),
        "field": {"max_speed": amax, "max_divergence": div},
        "trajectory": trajectory_summary(&traj, s),
        "mass_drift": (mass_t - mass0).abs() / mass_abs.max(f64::MIN_POSITIVE),
        "return_error": space.distance(u_t, u0) / n0,
        "gs": gs,
        "pass": pass,
    });
    let mut out = Outcome::new(report, pass);
    if !pass {
        out.message = Some(format!(
            "transport checks failed: energy ok {energy_ok}, divergence ok {div_ok}"
        ));
    }
    if let Some(g) = gs {
        out.residuals.push(ResidualTable {
            label: "transport".into(),
            report: g,
        });
    }
    out.trajectory = Some(traj.thinned(s.evolution.stride));
    Ok(out)
}

/// Discrete interval flows against the closed-form boundary shifts, and the
/// half-line deficiency pairs and witness.
pub fn oracle_check(l: Option<&Loaded>, s: &Settings) -> Result<Outcome> {
    let n = match l {
        None => 128,
        Some(l) => l
            .interval_cells
            .map(|c| c + 1)
            .ok_or_else(|| anyhow!("oracle-check needs a minimal_derivative spec or no --input"))?,
    };
    let op = minimal_derivative_operator(n)?;
    let u0 = match l {
        Some(l) => l.initial.clone(),
        None => skewflow::oracles::sample_cells(n, skewflow::oracles::gaussian(0.5, 0.1)),
    };
    let defi = deficiency(&op, s.tol.rank_tol)?;
    let space = op.space();
    let n0 = space.norm(&u0);
    let mut couplings = vec![1.0, 0.0];
    if let Some(t) = s.theta {
        if !couplings.contains(&t) {
            couplings.push(t);
        }
    }
    let mut interval = Vec::new();
    let mut pass = true;
    for v in couplings {
        let theta = coupling_to_theta(v, defi.orientation);
        let entry = match generator(&op, v, s.tol.rank_tol) {
            Ok((gen, _)) => {
                let traj = evolve(&gen, &u0, s, s.evolution.stride)?;
                let err = traj
                    .times()
                    .iter()
                    .zip(traj.states())
                    .map(|(&t, st)| Ok(space.distance(st, &interval_shift_semigroup(theta, t, &u0)?) / n0))
                    .collect::<Result<Vec<f64>>>()?
                    .into_iter()
                    .fold(0.0, f64::max);
                pass &= err <= 0.05;
                json!({"coupling": v, "theta": theta, "max_relative_error": err, "pass": err <= 0.05})
            }
            Err(e) => {
                pass = false;
                json!({"coupling": v, "theta": theta, "error": e.to_string(), "pass": false})
            }
        };
        interval.push(entry);
    }
    let right = halfline_case(HalfLine::Right).deficiency();
    let left = halfline_case(HalfLine::Left).deficiency();
    let wres = halfline_witness_residual(1.0, 2000);
    pass &= right == (1, 0) && left == (0, 1) && wres <= 1e-6;
    let report = json!({
        "command": "oracle-check",
        "n": n,
        "interval": interval,
        "halfline": {
            "right": {"d_plus": right.0, "d_minus": right.1, "forward_unique": right.1 == 0},
            "left": {"d_plus": left.0, "d_minus": left.1, "forward_unique": left.1 == 0},
            "left_witness_residual": wres,
        },
        "pass": pass,
    });
    let mut out = Outcome::new(report, pass);
    if !pass {
        out.message = Some("an oracle comparison failed; see report.json".into());
    }
    Ok(out)
}
