//! Cross-module examples: extensions, evolution, weak residuals, transport.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use skewflow::operator::{agreement_defect, extend_with, restriction_defect};
use skewflow::oracles::{
    coupling_to_theta, gaussian, interval_shift_semigroup, minimal_derivative_operator, sample_cells,
    OracleCase,
};
use skewflow::semigroup::uniform_times;
use skewflow::transport::{
    build_transport_operator, rotation_setup, transport_family, transport_gs_residual, Grid,
    SolenoidalField, TransportMode,
};
use skewflow::weak::{witness_identity_defect, SpliceSampler};
use skewflow::{
    adjoint_trajectory, check_inclusion_in_adjoint, check_m_dissipative, check_skew_symmetry,
    complement_basis, compare_solutions, deficiency, evolve_cayley, evolve_exact, extend, gs_residual,
    semigroup_multiplicity_demo, splice, witness_nonuniqueness, Action, Domain, Error, ExtensionKind,
    ExtensionSpec, Generator, RestrictedOperator, Sampler, Space, TestFunctionFamily,
};

fn minimal(n: usize) -> RestrictedOperator {
    minimal_derivative_operator(n).unwrap()
}

fn extension(op: &RestrictedOperator, v: f64) -> RestrictedOperator {
    extend(op, &ExtensionSpec::scalar(v).unwrap(), 1e-8).unwrap()
}

fn plane() -> Arc<Space> {
    Arc::new(Space::uniform(2, 1.0, "R2").unwrap())
}

fn j_op() -> RestrictedOperator {
    RestrictedOperator::full_dense(plane(), DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]), "J").unwrap()
}

#[test]
fn complement_of_e_minus_a_is_exponential() {
    let op = minimal(128);
    let space = op.space();
    let image: Vec<DVector<f64>> = op.domain_vectors().iter().map(|u| u - op.apply(u)).collect();
    let c = complement_basis(space, &image, 1e-8);
    assert_eq!(c.len(), 1);
    let ex = sample_cells(128, f64::exp);
    assert!(space.angle(&c.vectors()[0], &ex) <= 0.1);
    for v in &image {
        assert!(space.dot(&c.vectors()[0], v).abs() <= 1e-10 * space.norm(v));
    }
}

#[test]
fn empty_coupling_returns_operator_unchanged() {
    let j = j_op();
    let e = extend(&j, &ExtensionSpec::empty(), 1e-8).unwrap();
    assert_eq!(e.action().to_dense(), j.action().to_dense());
}

#[test]
fn orthogonal_coupling_gives_skew_full_extension() {
    let op = minimal(64);
    let ext = extension(&op, 1.0);
    assert!(ext.is_full_domain());
    assert!(check_skew_symmetry(&ext, 1e-10).pass);
    assert!(agreement_defect(&ext, &op) <= 1e-10);
}

#[test]
fn opposite_orthogonal_coupling_hits_the_determinant_obstruction() {
    for n in [32, 33, 64] {
        let op = minimal(n);
        let err = extend(&op, &ExtensionSpec::scalar(-1.0).unwrap(), 1e-8).unwrap_err();
        assert!(matches!(err, Error::ExtensionDomainNotDense { .. }), "{err}");
        assert!(err.to_string().contains("extension domain not dense"));
    }
}

#[test]
fn distinct_couplings_give_distinct_extensions() {
    let op = minimal(64);
    let a1 = extension(&op, 1.0).action().to_dense();
    let a0 = extension(&op, 0.0).action().to_dense();
    let a5 = extension(&op, 0.5).action().to_dense();
    assert!((&a1 - &a0).amax() > 1.0);
    assert!((&a0 - &a5).amax() > 1.0);
}

#[test]
fn extension_generator_is_m_dissipative_and_in_adjoint() {
    let op = minimal(64);
    let gen = Generator::from_extension(&extension(&op, 1.0));
    assert!(check_m_dissipative(&gen, &[0.5, 1.0, 2.0], 1e-10).pass);
    assert!(check_inclusion_in_adjoint(&gen, &op, 1e-10).pass);
    assert!(restriction_defect(&gen, &op) <= 1e-10);
}

#[test]
fn negated_operator_is_in_its_own_adjoint() {
    let op = minimal(32);
    assert!(check_inclusion_in_adjoint(&Generator::negated(&op), &op, 1e-10).pass);
}

#[test]
fn perturbed_generator_leaves_the_adjoint() {
    let op = minimal(64);
    let gen = Generator::from_extension(&extension(&op, 1.0));
    let space = op.space();
    let mut w = sample_cells(64, gaussian(0.5, 0.08));
    w /= space.norm(&w);
    let weights = DVector::from_column_slice(space.weights());
    let delta = 0.1 * &w * w.component_mul(&weights).transpose();
    let bad = gen.perturbed(&delta, "rank-one").unwrap();
    let r = check_inclusion_in_adjoint(&bad, &op, 1e-10);
    assert!(!r.pass);
    assert!(r.max_defect >= 0.01, "{}", r.max_defect);
}

#[test]
fn skew_extension_conserves_energy_exactly() {
    let op = minimal(64);
    let gen = Generator::from_extension(&extension(&op, 1.0));
    let u0 = sample_cells(64, gaussian(0.5, 0.1));
    let n0 = op.space().norm(&u0);
    let t = evolve_exact(&gen, &u0, &[0.1, 1.0, 10.0]).unwrap();
    for s in t.states() {
        assert!((op.space().norm(s) - n0).abs() <= 1e-10 * n0);
    }
    let adj = adjoint_trajectory(&gen, &u0, &[0.1, 1.0, 10.0]).unwrap();
    for s in adj.states() {
        assert!((op.space().norm(s) - n0).abs() <= 1e-10 * n0);
    }
}

#[test]
fn contraction_extension_loses_energy() {
    let op = minimal(64);
    let gen = Generator::from_extension(&extension(&op, 0.0));
    let u0 = sample_cells(64, gaussian(0.5, 0.1));
    let t = evolve_cayley(&gen, &u0, 1e-3, 1500).unwrap();
    assert!(t.max_norm_growth() <= 1e-12);
    let norms = t.norms();
    assert!(norms[norms.len() - 1] < 0.9 * norms[0]);
}

#[test]
fn cayley_converges_at_second_order() {
    let op = minimal(32);
    let gen = Generator::from_extension(&extension(&op, 1.0));
    let u0 = sample_cells(32, gaussian(0.5, 0.15));
    let exact = evolve_exact(&gen, &u0, &[0.5]).unwrap();
    let err = |dt: f64| {
        let t = evolve_cayley(&gen, &u0, dt, (0.5 / dt).round() as usize).unwrap();
        (t.last() - exact.last()).amax()
    };
    let (e1, e2, e3) = (err(1e-2), err(5e-3), err(2.5e-3));
    for r in [e1 / e2, e2 / e3] {
        assert!((3.5..=4.5).contains(&r), "{e1} {e2} {e3}");
    }
}

#[test]
fn exact_exponential_has_semigroup_property() {
    let op = minimal(32);
    let gen = Generator::from_extension(&extension(&op, 0.3));
    let u0 = sample_cells(32, gaussian(0.3, 0.1));
    let whole = evolve_exact(&gen, &u0, &[0.7]).unwrap();
    let half = evolve_exact(&gen, &u0, &[0.3]).unwrap();
    let rest = evolve_exact(&gen, half.last(), &[0.4]).unwrap();
    assert!((whole.last() - rest.last()).amax() <= 1e-10);
}

#[test]
fn skew_full_domain_solutions_agree_across_steppers() {
    let j = j_op();
    assert!(matches!(witness_nonuniqueness(&j, 1e-8), Err(Error::ForwardProblemUnique)));
    let gen = Generator::negated(&j);
    let u0 = DVector::from_column_slice(&[0.6, -0.8]);
    let dt = 1e-3;
    let c = evolve_cayley(&gen, &u0, dt, 2000).unwrap();
    let e = evolve_exact(&gen, &u0, &uniform_times(dt, 2000)).unwrap();
    let gap = c.states().iter().zip(e.states()).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
    assert!(gap <= 2.0 * dt * dt);
}

#[test]
fn theta_extensions_match_the_shift_oracle() {
    let errs: Vec<f64> = [(64, 2e-3), (128, 1e-3)]
        .iter()
        .map(|&(n, dt)| {
            let op = minimal(n);
            let orientation = deficiency(&op, 1e-8).unwrap().orientation;
            let u0 = sample_cells(n, gaussian(0.5, 0.1));
            let mut worst: f64 = 0.0;
            for v in [1.0, 0.0] {
                let gen = Generator::from_extension(&extension(&op, v));
                let t = evolve_cayley(&gen, &u0, dt, (1.0 / dt) as usize).unwrap();
                let oracle = interval_shift_semigroup(coupling_to_theta(v, orientation), t.final_time(), &u0).unwrap();
                worst = worst.max(op.space().distance(t.last(), &oracle) / op.space().norm(&u0));
            }
            worst
        })
        .collect();
    assert!(errs[1] <= 0.05, "{errs:?}");
    assert!(errs[0] / errs[1] >= 3.0, "{errs:?}");
}

#[test]
fn witness_examples() {
    let op = minimal(64);
    let wit = witness_nonuniqueness(&op, 1e-8).unwrap();
    let space = op.space();
    assert!((space.norm(&wit.u0) - 1.0).abs() < 1e-12);
    let ex = sample_cells(64, |x| OracleCase::IntervalMinimal.n_minus(x).unwrap());
    assert!(space.angle(&wit.u0, &ex) < 1e-3);
    assert!(witness_identity_defect(&op, &wit.u0) <= 1e-9);
    let exp = wit.exp_solution();
    assert!((space.norm(&exp.sample(1.0)) - std::f64::consts::E).abs() < 1e-12);
    let fam = TestFunctionFamily::standard(&op, 1.0, 4001, 4).unwrap();
    assert!(gs_residual(&exp, &wit.u0, &op, &fam, 1e-6).unwrap().pass);
}

#[test]
fn splices_and_distances() {
    let op = minimal(64);
    let gen = Generator::from_extension(&extension(&op, 1.0));
    let wit = witness_nonuniqueness(&op, 1e-8).unwrap();
    let space = op.space();
    let s0 = splice(&wit, &gen, &op, 0.0, 1e-10).unwrap();
    let semi = SpliceSampler::semigroup(&gen, &wit.u0).unwrap();
    assert!((s0.sample(0.7) - semi.sample(0.7)).amax() < 1e-14);
    let a = splice(&wit, &gen, &op, 0.5, 1e-10).unwrap();
    let b = splice(&wit, &gen, &op, 1.0, 1e-10).unwrap();
    assert!(compare_solutions(&a, &b, space, &[1.0])[0] >= 0.1);
    let d = compare_solutions(&wit.exp_solution(), &semi, space, &[1.0])[0];
    assert!(d >= std::f64::consts::E - 1.0 - 0.2);
    let fam = TestFunctionFamily::standard(&op, 2.0, 8001, 4).unwrap();
    for s in [&s0, &a, &b] {
        assert!(gs_residual(s, &wit.u0, &op, &fam, 1e-5).unwrap().pass);
    }
}

#[test]
fn splice_rejects_generators_outside_the_adjoint() {
    let op = minimal(32);
    let wit = witness_nonuniqueness(&op, 1e-8).unwrap();
    let n = op.dim();
    let damp = Generator::new(op.space().clone(), Action::Dense(-DMatrix::identity(n, n)), Domain::Full, "-E").unwrap();
    assert!(matches!(splice(&wit, &damp, &op, 0.5, 1e-10), Err(Error::InclusionFailed { .. })));
}

#[test]
fn multiplicity_demo_with_realizable_couplings() {
    let n = 64;
    let op = minimal(n);
    let u0 = sample_cells(n, gaussian(0.5, 0.1));
    let demo = semigroup_multiplicity_demo(&op, &u0, (1.0, 0.0), 1e-3, 2.0, 1e-8).unwrap();
    assert!(demo.separation >= 0.1 * op.space().norm(&u0));
    let fam = TestFunctionFamily::standard(&op, 2.0, 2001, 4).unwrap();
    for t in [&demo.traj1, &demo.traj2] {
        assert!(gs_residual(t, &u0, &op, &fam, 1e-5).unwrap().pass);
    }
    assert!(matches!(
        semigroup_multiplicity_demo(&j_op(), &DVector::from_column_slice(&[1.0, 0.0]), (1.0, -1.0), 1e-2, 1.0, 1e-8),
        Err(Error::SemigroupUnique)
    ));
}

#[test]
fn contraction_spec_validation() {
    assert!(ExtensionSpec::scalar(1.5).is_err());
    let v = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    assert!(ExtensionSpec::new(v.clone(), ExtensionKind::SkewSymmetric).is_ok());
    assert!(ExtensionSpec::new(v * 0.5, ExtensionKind::SkewSymmetric).is_err());
    let op = minimal(32);
    let defi = deficiency(&op, 1e-8).unwrap();
    let wrong = ExtensionSpec::new(DMatrix::identity(2, 2), ExtensionKind::SkewSymmetric).unwrap();
    assert!(matches!(extend_with(&op, &defi, &wrong, 1e-8), Err(Error::InvalidCoupling(_))));
}

#[test]
fn transport_residual_examples() {
    let (top, u0) = rotation_setup(48).unwrap();
    let traj = evolve_cayley(&top.generator(), &u0, 2e-3, 500).unwrap();
    let fam = transport_family(&top, 1.0, 501).unwrap();
    let good = transport_gs_residual(&traj, &u0, &top, &fam, 1e-4).unwrap();
    assert!(good.pass, "{}", good.max_residual);
    let lagged = traj.lagged(10);
    let bad = transport_gs_residual(&lagged, &u0, &top, &fam, 1e-4).unwrap();
    assert!(!bad.pass);
    assert!(bad.max_residual >= 1e-3, "{}", bad.max_residual);

    let still = build_transport_operator(SolenoidalField::zero(*top.grid()), TransportMode::PeriodicFull).unwrap();
    let flat = evolve_cayley(&still.generator(), &u0, 2e-3, 500).unwrap();
    let fam0 = transport_family(&still, 1.0, 501).unwrap();
    let r = transport_gs_residual(&flat, &u0, &still, &fam0, 1e-12).unwrap();
    assert!(r.max_residual < 1e-15, "{}", r.max_residual);
}

#[test]
fn interior_transport_family_lives_in_the_domain() {
    let (top, _) = rotation_setup(32).unwrap();
    let inner = build_transport_operator(top.field().clone(), TransportMode::InteriorDomain).unwrap();
    assert!(transport_family(&inner, 1.0, 11).is_ok());
    assert!(Grid::new(2, 8, 1.0, 1.0).is_err());
}
