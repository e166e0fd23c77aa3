//! Periodic 2-D transport `u_t + a . grad u = 0` with divergence-free `a`.
//!
//! Cells `(i, j)` are indexed `i * ny + j`; stream-function nodes `(i, j)`
//! sit at `(i dx, j dy)` with the same indexing. Face fluxes are exact
//! differences of node values, so the discrete divergence telescopes to
//! zero and the centered flux stencil is exactly skew.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::hilbert::Space;
use crate::linalg::{Action, CsrMatrix};
use crate::operator::{Domain, Generator, RestrictedOperator};
use crate::semigroup::{evolve_cayley_with, CayleyOptions, Trajectory};
use crate::weak::{default_profiles, gs_residual, GsReport, TestFunctionFamily};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 3 || ny < 3 || !(lx > 0.0) || !(ly > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "grid needs nx, ny >= 3 and positive lengths, got {nx}x{ny} on {lx}x{ly}"
            )));
        }
        Ok(Self { nx, ny, lx, ly })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0, 1.0)
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn area(&self) -> f64 {
        self.dx() * self.dy()
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        (i % self.nx) * self.ny + (j % self.ny)
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx(), (j as f64 + 0.5) * self.dy())
    }

    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.dx(), j as f64 * self.dy())
    }

    pub fn space(&self) -> Result<Space> {
        Space::uniform(self.cells(), self.area(), format!("L2 periodic {}x{}", self.nx, self.ny))
    }

    /// Samples `f(x, y)` at the nodes.
    pub fn sample_nodes(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.cells());
        for i in 0..self.nx {
            for j in 0..self.ny {
                let (x, y) = self.node(i, j);
                out.push(f(x, y));
            }
        }
        out
    }

    /// Samples `f(x, y)` at the cell centers.
    pub fn sample_cells(&self, f: impl Fn(f64, f64) -> f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.cells());
        for i in 0..self.nx {
            for j in 0..self.ny {
                let (x, y) = self.cell_center(i, j);
                out[self.index(i, j)] = f(x, y);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldProvenance {
    StreamFunction,
    Direct,
}

/// Staggered velocity field stored as face fluxes.
///
/// `flux_x[i * ny + j]` crosses the x-face at `x = i dx`, `y in [j dy, (j+1) dy]`
/// in the `+x` direction; `flux_y[i * ny + j]` crosses the y-face at
/// `y = j dy`, `x in [i dx, (i+1) dx]` in the `+y` direction.
#[derive(Clone, Debug)]
pub struct SolenoidalField {
    pub grid: Grid,
    flux_x: Vec<f64>,
    flux_y: Vec<f64>,
    pub provenance: FieldProvenance,
}

impl SolenoidalField {
    /// Field from face fluxes given directly (not necessarily divergence-free).
    pub fn from_fluxes(grid: Grid, flux_x: Vec<f64>, flux_y: Vec<f64>) -> Result<Self> {
        check_len(grid.cells(), flux_x.len())?;
        check_len(grid.cells(), flux_y.len())?;
        Ok(Self {
            grid,
            flux_x,
            flux_y,
            provenance: FieldProvenance::Direct,
        })
    }

    pub fn zero(grid: Grid) -> Self {
        Self {
            grid,
            flux_x: vec![0.0; grid.cells()],
            flux_y: vec![0.0; grid.cells()],
            provenance: FieldProvenance::StreamFunction,
        }
    }

    /// Velocity `a_x` on x-faces.
    pub fn ax(&self) -> Vec<f64> {
        let dy = self.grid.dy();
        self.flux_x.iter().map(|f| f / dy).collect()
    }

    /// Velocity `a_y` on y-faces.
    pub fn ay(&self) -> Vec<f64> {
        let dx = self.grid.dx();
        self.flux_y.iter().map(|f| f / dx).collect()
    }

    pub fn max_speed(&self) -> f64 {
        self.ax()
            .iter()
            .chain(self.ay().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete divergence per cell.
    pub fn divergence(&self) -> Vec<f64> {
        let g = self.grid;
        let area = g.area();
        let mut out = Vec::with_capacity(g.cells());
        for i in 0..g.nx {
            for j in 0..g.ny {
                let net = self.flux_x[g.index(i + 1, j)] - self.flux_x[g.index(i, j)]
                    + self.flux_y[g.index(i, j + 1)]
                    - self.flux_y[g.index(i, j)];
                out.push(net / area);
            }
        }
        out
    }

    pub fn max_divergence(&self) -> f64 {
        self.divergence().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Field from periodic stream-function node samples.
pub fn field_from_stream(grid: Grid, psi: &[f64]) -> Result<SolenoidalField> {
    field_from_stream_with_jumps(grid, psi, 0.0, 0.0)
}

/// Field from a stream function that increases by `jump_x` across the box
/// in `x` and by `jump_y` in `y` (`psi = y` has `jump_y = ly`). Jumps carry
/// the mean flow of a periodic field.
pub fn field_from_stream_with_jumps(
    grid: Grid,
    psi: &[f64],
    jump_x: f64,
    jump_y: f64,
) -> Result<SolenoidalField> {
    check_len(grid.cells(), psi.len())?;
    let lifted = |i: usize, j: usize| -> f64 {
        let mut v = psi[grid.index(i, j)];
        if i >= grid.nx {
            v += jump_x;
        }
        if j >= grid.ny {
            v += jump_y;
        }
        v
    };
    let mut flux_x = Vec::with_capacity(grid.cells());
    let mut flux_y = Vec::with_capacity(grid.cells());
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            // a_x = d psi / dy,  a_y = -d psi / dx
            flux_x.push(lifted(i, j + 1) - lifted(i, j));
            flux_y.push(-(lifted(i + 1, j) - lifted(i, j)));
        }
    }
    Ok(SolenoidalField {
        grid,
        flux_x,
        flux_y,
        provenance: FieldProvenance::StreamFunction,
    })
}

/// `psi = -r^2 / 2` about the box center: counter-clockwise rotation with
/// unit angular velocity. Not periodic; the seam carries a shear layer.
pub fn solid_rotation_stream(grid: &Grid) -> Vec<f64> {
    let (cx, cy) = (grid.lx / 2.0, grid.ly / 2.0);
    grid.sample_nodes(|x, y| -((x - cx).powi(2) + (y - cy).powi(2)) / 2.0)
}

/// `psi = sin(2 pi x / lx) sin(2 pi y / ly)`.
pub fn cellular_stream(grid: &Grid) -> Vec<f64> {
    let tau = 2.0 * std::f64::consts::PI;
    let (lx, ly) = (grid.lx, grid.ly);
    grid.sample_nodes(|x, y| (tau * x / lx).sin() * (tau * y / ly).sin())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    /// Whole periodic space as domain.
    PeriodicFull,
    /// Cells at distance at least 2 from the outer ring of the box.
    InteriorDomain,
}

/// `A u = a . grad u` as a sparse, exactly skew restricted operator.
#[derive(Clone, Debug)]
pub struct TransportOperator {
    field: SolenoidalField,
    mode: TransportMode,
    op: RestrictedOperator,
}

impl TransportOperator {
    pub fn field(&self) -> &SolenoidalField {
        &self.field
    }

    pub fn grid(&self) -> &Grid {
        &self.field.grid
    }

    pub fn mode(&self) -> TransportMode {
        self.mode
    }

    pub fn operator(&self) -> &RestrictedOperator {
        &self.op
    }

    /// `B = -A`, the generator of `u_t = -a . grad u`, on the operator domain.
    pub fn generator(&self) -> Generator {
        Generator::negated(&self.op)
    }
}

/// `(Mu)_c = (1 / area) sum_faces outward_flux * u_neighbor / 2`.
///
/// The diagonal `div a / 2` is dropped, which is exact for stream-function
/// fields and makes `M` antisymmetric entry by entry.
pub fn build_transport_operator(field: SolenoidalField, mode: TransportMode) -> Result<TransportOperator> {
    let g = field.grid;
    let scale = 0.5 / g.area();
    let mut trips = Vec::with_capacity(4 * g.cells());
    for i in 0..g.nx {
        for j in 0..g.ny {
            let c = g.index(i, j);
            let faces = [
                (g.index(i + 1, j), field.flux_x[g.index(i + 1, j)]),
                (g.index(i + g.nx - 1, j), -field.flux_x[c]),
                (g.index(i, j + 1), field.flux_y[g.index(i, j + 1)]),
                (g.index(i, j + g.ny - 1), -field.flux_y[c]),
            ];
            for (nb, flux) in faces {
                if flux != 0.0 {
                    trips.push((c, nb, scale * flux));
                }
            }
        }
    }
    let m = CsrMatrix::from_triplets(g.cells(), g.cells(), &trips)?;
    let space = Arc::new(g.space()?);
    let domain = match mode {
        TransportMode::PeriodicFull => Domain::Full,
        TransportMode::InteriorDomain => {
            if g.nx < 5 || g.ny < 5 {
                return Err(Error::InvalidArgument(
                    "interior domain needs at least 5 cells per direction".into(),
                ));
            }
            let mut coords = Vec::new();
            for i in 2..g.nx - 2 {
                for j in 2..g.ny - 2 {
                    coords.push(g.index(i, j));
                }
            }
            Domain::Coordinates(coords)
        }
    };
    let label = format!("transport {}x{} ({:?})", g.nx, g.ny, mode);
    let op = RestrictedOperator::new(space, Action::Sparse(m), domain, label)?;
    Ok(TransportOperator { field, mode, op })
}

/// Compact bump `(1 - r^2/rho^2)^4` at cell centers.
pub fn interior_bump(grid: &Grid, cx: f64, cy: f64, rho: f64) -> DVector<f64> {
    grid.sample_cells(|x, y| {
        let q = ((x - cx).powi(2) + (y - cy).powi(2)) / (rho * rho);
        if q < 1.0 {
            (1.0 - q).powi(4)
        } else {
            0.0
        }
    })
}

/// Gaussian `exp(-r^2 / sigma^2)` at cell centers.
pub fn gaussian_blob(grid: &Grid, cx: f64, cy: f64, sigma: f64) -> DVector<f64> {
    grid.sample_cells(|x, y| (-((x - cx).powi(2) + (y - cy).powi(2)) / (sigma * sigma)).exp())
}

/// Four bumps around the box center at radius [`BLOB_OFFSET`], the orbit
/// of the rotation benchmark blob.
pub fn standard_bumps(grid: &Grid) -> Vec<DVector<f64>> {
    let (cx, cy) = (grid.lx / 2.0, grid.ly / 2.0);
    let r = BLOB_OFFSET * grid.lx.min(grid.ly);
    let rho = 0.1 * grid.lx.min(grid.ly);
    [(r, 0.0), (0.0, r), (-r, 0.0), (0.0, -r)]
        .iter()
        .map(|(ox, oy)| interior_bump(grid, cx + ox, cy + oy, rho))
        .collect()
}

/// Weak residual of a transport trajectory against bump test functions.
pub fn transport_gs_residual(
    traj: &Trajectory,
    u0: &DVector<f64>,
    top: &TransportOperator,
    family: &TestFunctionFamily,
    tol: f64,
) -> Result<GsReport> {
    gs_residual(traj, u0, top.operator(), family, tol)
}

/// Bump family on the trajectory's own time grid.
pub fn transport_family(top: &TransportOperator, horizon: f64, n_t: usize) -> Result<TestFunctionFamily> {
    TestFunctionFamily::new(
        top.operator(),
        standard_bumps(top.grid()),
        default_profiles(horizon),
        horizon,
        n_t,
    )
}

/// Offset and width of the rotation benchmark blob.
pub const BLOB_OFFSET: f64 = 0.1;
pub const BLOB_WIDTH: f64 = 0.15;

/// Solid rotation on the unit box and a Gaussian blob off the center.
pub fn rotation_setup(n: usize) -> Result<(TransportOperator, DVector<f64>)> {
    let grid = Grid::square(n)?;
    let field = field_from_stream(grid, &solid_rotation_stream(&grid))?;
    let top = build_transport_operator(field, TransportMode::PeriodicFull)?;
    let u0 = gaussian_blob(&grid, 0.5 + BLOB_OFFSET, 0.5, BLOB_WIDTH);
    Ok((top, u0))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RotationReport {
    pub n: usize,
    pub dt: f64,
    pub steps: usize,
    /// `||u(T) - u0|| / ||u0||` after one revolution.
    pub final_error: f64,
    /// `| ||u(T)|| - ||u0|| | / ||u0||`.
    pub energy_drift: f64,
    /// Largest relative norm deviation over all steps.
    pub max_energy_drift: f64,
    /// `| sum area u(T) - sum area u0 | / sum area |u0|`.
    pub mass_drift: f64,
    pub max_divergence: f64,
}

/// One full revolution of the solid-rotation field with the Cayley stepper.
pub fn rotation_benchmark(n: usize, dt: f64) -> Result<RotationReport> {
    rotation_benchmark_with(n, dt, false)
}

/// As [`rotation_benchmark`]; `zero_field` replaces the velocity by zero.
pub fn rotation_benchmark_with(n: usize, dt: f64, zero_field: bool) -> Result<RotationReport> {
    let (mut top, u0) = rotation_setup(n)?;
    if zero_field {
        top = build_transport_operator(SolenoidalField::zero(*top.grid()), TransportMode::PeriodicFull)?;
    }
    let period = 2.0 * std::f64::consts::PI;
    let steps = (period / dt).round().max(1.0) as usize;
    let dt = period / steps as f64;
    let traj = evolve_cayley_with(
        &top.generator(),
        &u0,
        dt,
        steps,
        CayleyOptions {
            stride: steps,
            ..Default::default()
        },
    )?;
    let space = top.operator().space();
    let n0 = space.norm(&u0);
    let u_t = traj.last();
    let area = top.grid().area();
    let mass0: f64 = u0.iter().sum::<f64>() * area;
    let mass_abs: f64 = u0.iter().map(|v| v.abs()).sum::<f64>() * area;
    let mass_t: f64 = u_t.iter().sum::<f64>() * area;
    Ok(RotationReport {
        n,
        dt,
        steps,
        final_error: space.distance(u_t, &u0) / n0,
        energy_drift: (space.norm(u_t) - n0).abs() / n0,
        max_energy_drift: traj.energy_drift(),
        mass_drift: (mass_t - mass0).abs() / mass_abs,
        max_divergence: top.field().max_divergence(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFormat {
    Csv,
    F64le,
}

/// JSON header of a stream-function file.
///
/// `samples` names the data file, relative to the header's directory. CSV
/// data has `nx` lines of `ny` comma-separated values (line `i`, column `j`
/// is node `(i, j)`). Binary data is `nx * ny` little-endian IEEE-754
/// doubles in the same row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub samples: String,
    #[serde(default = "default_format")]
    pub format: SampleFormat,
    #[serde(default)]
    pub jump_x: f64,
    #[serde(default)]
    pub jump_y: f64,
}

fn default_format() -> SampleFormat {
    SampleFormat::Csv
}

/// Reads a stream-function header and its samples.
pub fn read_stream_file(path: &Path) -> Result<(StreamHeader, Grid, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let header: StreamHeader = serde_json::from_str(&text)
        .map_err(|e| Error::FieldFormat(format!("{}: {e}", path.display())))?;
    let (grid, psi) = read_stream_samples(&header, path.parent().unwrap_or_else(|| Path::new(".")))?;
    Ok((header, grid, psi))
}

/// Reads the samples named by `header`, resolved against `dir`.
pub fn read_stream_samples(header: &StreamHeader, dir: &Path) -> Result<(Grid, Vec<f64>)> {
    let grid = Grid::new(header.nx, header.ny, header.lx, header.ly)?;
    let data_path: PathBuf = dir.join(&header.samples);
    let psi = match header.format {
        SampleFormat::Csv => parse_csv(&fs::read_to_string(&data_path)?, &grid, &data_path)?,
        SampleFormat::F64le => {
            let bytes = fs::read(&data_path)?;
            if bytes.len() != 8 * grid.cells() {
                return Err(Error::FieldFormat(format!(
                    "{}: expected {} bytes, found {}",
                    data_path.display(),
                    8 * grid.cells(),
                    bytes.len()
                )));
            }
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect()
        }
    };
    if let Some(k) = psi.iter().position(|v| !v.is_finite()) {
        return Err(Error::FieldFormat(format!(
            "{}: non-finite sample at node ({}, {})",
            data_path.display(),
            k / grid.ny,
            k % grid.ny
        )));
    }
    Ok((grid, psi))
}

fn parse_csv(text: &str, grid: &Grid, path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(grid.cells());
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| {
            Error::FieldFormat(format!("{} line {}: {e}", path.display(), lineno + 1))
        })?;
        if vals.len() != grid.ny {
            return Err(Error::FieldFormat(format!(
                "{} line {}: expected {} values, found {}",
                path.display(),
                lineno + 1,
                grid.ny,
                vals.len()
            )));
        }
        out.extend(vals);
        rows += 1;
    }
    if rows != grid.nx {
        return Err(Error::FieldFormat(format!(
            "{}: expected {} rows, found {rows}",
            path.display(),
            grid.nx
        )));
    }
    Ok(out)
}

/// Writes `header_path` and its sample file next to it.
pub fn write_stream_file(
    header_path: &Path,
    grid: &Grid,
    psi: &[f64],
    format: SampleFormat,
) -> Result<()> {
    check_len(grid.cells(), psi.len())?;
    let stem = header_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("stream");
    let samples = match format {
        SampleFormat::Csv => format!("{stem}.csv"),
        SampleFormat::F64le => format!("{stem}.bin"),
    };
    let dir = header_path.parent().unwrap_or_else(|| Path::new("."));
    let mut f = fs::File::create(dir.join(&samples))?;
    match format {
        SampleFormat::Csv => {
            for i in 0..grid.nx {
                let row: Vec<String> = (0..grid.ny)
                    .map(|j| format!("{:e}", psi[grid.index(i, j)]))
                    .collect();
                writeln!(f, "{}", row.join(","))?;
            }
        }
        SampleFormat::F64le => {
            for v in psi {
                f.write_all(&v.to_le_bytes())?;
            }
        }
    }
    let header = StreamHeader {
        nx: grid.nx,
        ny: grid.ny,
        lx: grid.lx,
        ly: grid.ly,
        samples,
        format,
        jump_x: 0.0,
        jump_y: 0.0,
    };
    fs::write(header_path, serde_json::to_string_pretty(&header)?)?;
    Ok(())
}
