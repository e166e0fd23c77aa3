//! Benchmark fixtures.
//!
//! Everything here is deterministic so that timings compare like with like.

use skewflow::oracles::{gaussian, minimal_derivative_operator, sample_cells};
use skewflow::transport::{rotation_benchmark, rotation_setup, RotationReport, TransportOperator};
use skewflow::{extend, ExtensionSpec, Generator, RestrictedOperator, Result, Vector};

/// Interval operator, its `V = +1` generator and a centered Gaussian.
pub struct IntervalFixture {
    pub op: RestrictedOperator,
    pub gen: Generator,
    pub u0: Vector,
}

pub fn interval(n: usize) -> Result<IntervalFixture> {
    let op = minimal_derivative_operator(n)?;
    let ext = extend(&op, &ExtensionSpec::scalar(1.0)?, skewflow::hilbert::DEFAULT_RANK_TOL)?;
    Ok(IntervalFixture {
        gen: Generator::from_extension(&ext),
        u0: sample_cells(n, gaussian(0.5, 0.1)),
        op,
    })
}

pub struct TransportFixture {
    pub top: TransportOperator,
    pub gen: Generator,
    pub u0: Vector,
}

pub fn rotation(n: usize) -> Result<TransportFixture> {
    let (top, u0) = rotation_setup(n)?;
    Ok(TransportFixture {
        gen: top.generator(),
        top,
        u0,
    })
}

/// One revolution per grid size, `dt = 2 pi / (2000 n / 64)`.
pub fn rotation_reports(sizes: &[usize]) -> Result<Vec<RotationReport>> {
    let period = 2.0 * std::f64::consts::PI;
    sizes
        .iter()
        .map(|&n| rotation_benchmark(n, period / (2000.0 * n as f64 / 64.0)))
        .collect()
}

pub fn rotation_reports_json(sizes: &[usize]) -> Result<String> {
    skewflow::report::to_json_string(&rotation_reports(sizes)?)
}
