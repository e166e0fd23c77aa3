//! Operator spec files.
//!
//! Syntax and type errors come from serde with their line and column.
//! Semantic errors point at the line of the offending key.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use skewflow::oracles::{gaussian, minimal_derivative_operator, sample_cells};
use skewflow::transport::{
    build_transport_operator, cellular_stream, field_from_stream_with_jumps, gaussian_blob,
    read_stream_file, read_stream_samples, solid_rotation_stream, Grid, SampleFormat,
    StreamHeader, TransportMode, TransportOperator, BLOB_OFFSET, BLOB_WIDTH,
};
use skewflow::{Domain, Matrix, RestrictedOperator, Space, SubspaceBasis, Vector};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    #[serde(default)]
    pub space: Option<SpaceSpec>,
    pub operator: OperatorSpec,
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    #[serde(default)]
    pub initial: Option<InitialSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceSpec {
    Weights {
        weights: Vec<f64>,
    },
    Uniform {
        dim: usize,
        #[serde(default = "one")]
        weight: f64,
    },
    Trapezoid {
        nodes: usize,
        #[serde(default)]
        a: f64,
        #[serde(default = "one")]
        b: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    /// Row-major entries; `rows` and `cols` are checked when present.
    Matrix {
        data: Vec<Vec<f64>>,
        #[serde(default)]
        rows: Option<usize>,
        #[serde(default)]
        cols: Option<usize>,
    },
    MinimalDerivative {
        n: usize,
    },
    Transport {
        /// Header JSON, or a bare `.csv` / `.bin` sample file with the grid
        /// given inline.
        #[serde(default)]
        stream: Option<String>,
        /// Built-in stream: `solid_rotation` or `cellular`.
        #[serde(default)]
        field: Option<String>,
        #[serde(default)]
        n: Option<usize>,
        #[serde(default)]
        nx: Option<usize>,
        #[serde(default)]
        ny: Option<usize>,
        #[serde(default = "one")]
        lx: f64,
        #[serde(default = "one")]
        ly: f64,
        #[serde(default)]
        jump_x: f64,
        #[serde(default)]
        jump_y: f64,
        #[serde(default)]
        mode: Option<TransportMode>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Full,
    Coordinates { indices: Vec<usize> },
    Span { vectors: Vec<Vec<f64>> },
    /// Built-in domain of the operator kind.
    Default,
    PeriodicFull,
    InteriorDomain,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Values { values: Vec<f64> },
    /// Interval Gaussian, or a blob on a transport grid.
    Gaussian {
        center: Vec<f64>,
        width: f64,
    },
}

/// What a spec describes.
pub enum Model {
    Plain(RestrictedOperator),
    Transport(TransportOperator),
}

impl Model {
    pub fn operator(&self) -> &RestrictedOperator {
        match self {
            Model::Plain(op) => op,
            Model::Transport(t) => t.operator(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Plain(_) => "plain",
            Model::Transport(_) => "transport",
        }
    }
}

pub struct Loaded {
    pub model: Model,
    pub initial: Vector,
    /// `n` of a minimal-derivative spec, for oracle comparisons.
    pub interval_cells: Option<usize>,
}

/// 1-based line of the first occurrence of `"key"` in `text`.
fn line_of(text: &str, key: &str) -> usize {
    let needle = format!("\"{key}\"");
    text.lines()
        .position(|l| l.contains(&needle))
        .map(|i| i + 1)
        .unwrap_or(1)
}

fn at(path: &Path, text: &str, key: &str, msg: impl std::fmt::Display) -> anyhow::Error {
    anyhow!("{}:{}: {msg}", path.display(), line_of(text, key))
}

pub fn load(path: &Path) -> Result<Loaded> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: SpecFile = serde_json::from_str(&text).map_err(|e| {
        anyhow!(
            "{}:{}:{}: schema error: {e}",
            path.display(),
            e.line(),
            e.column()
        )
    })?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    build(&spec, path, &text, &dir)
}

fn build(spec: &SpecFile, path: &Path, text: &str, dir: &Path) -> Result<Loaded> {
    let mut interval_cells = None;
    let model = match &spec.operator {
        OperatorSpec::Matrix { data, rows, cols } => {
            let n = data.len();
            if n == 0 {
                return Err(at(path, text, "data", "matrix has no rows"));
            }
            if let Some((i, r)) = data.iter().enumerate().find(|(_, r)| r.len() != n) {
                return Err(at(
                    path,
                    text,
                    "data",
                    format!("matrix must be square: row {i} has {} entries, expected {n}", r.len()),
                ));
            }
            if rows.is_some_and(|r| r != n) || cols.is_some_and(|c| c != n) {
                return Err(at(
                    path,
                    text,
                    "data",
                    format!("declared dims {rows:?}x{cols:?} do not match data {n}x{n}"),
                ));
            }
            let flat: Vec<f64> = data.iter().flatten().copied().collect();
            let m = Matrix::from_row_slice(n, n, &flat);
            let space = Arc::new(space_for(spec.space.as_ref(), n, path, text)?);
            let domain = match &spec.domain {
                None | Some(DomainSpec::Full) | Some(DomainSpec::Default) => Domain::Full,
                Some(DomainSpec::Coordinates { indices }) => Domain::Coordinates(indices.clone()),
                Some(DomainSpec::Span { vectors }) => {
                    let vs = vectors.iter().map(|v| Vector::from_column_slice(v)).collect();
                    Domain::Span(
                        SubspaceBasis::new(space.clone(), vs).map_err(|e| at(path, text, "vectors", e))?,
                    )
                }
                Some(other) => {
                    return Err(at(path, text, "mode", format!("domain {other:?} needs a transport operator")))
                }
            };
            let op = RestrictedOperator::new(space, skewflow::Action::Dense(m), domain, "matrix")
                .map_err(|e| at(path, text, "domain", e))?;
            Model::Plain(op)
        }
        OperatorSpec::MinimalDerivative { n } => {
            if spec.space.is_some() {
                return Err(at(path, text, "space", "minimal_derivative builds its own space"));
            }
            if let Some(d) = &spec.domain {
                if !matches!(d, DomainSpec::Default) {
                    return Err(at(path, text, "mode", "minimal_derivative uses its built-in domain"));
                }
            }
            if *n < 8 {
                return Err(at(path, text, "n", format!("n must be at least 8, got {n}")));
            }
            interval_cells = Some(n - 1);
            Model::Plain(minimal_derivative_operator(*n).map_err(|e| at(path, text, "n", e))?)
        }
        OperatorSpec::Transport {
            stream,
            field,
            n,
            nx,
            ny,
            lx,
            ly,
            jump_x,
            jump_y,
            mode,
        } => {
            let mode = transport_mode(*mode, spec.domain.as_ref(), path, text)?;
            let (grid, psi, jx, jy) = match (stream, field) {
                (Some(_), Some(_)) => {
                    return Err(at(path, text, "stream", "give either \"stream\" or \"field\", not both"))
                }
                (None, None) => return Err(at(path, text, "kind", "transport needs \"stream\" or \"field\"")),
                (Some(s), None) => {
                    let p = dir.join(s);
                    if s.ends_with(".json") {
                        let (h, grid, psi) = read_stream_file(&p).map_err(|e| at(path, text, "stream", e))?;
                        (grid, psi, h.jump_x, h.jump_y)
                    } else {
                        let (nx, ny) = match (nx.or(*n), ny.or(*n)) {
                            (Some(a), Some(b)) => (a, b),
                            _ => {
                                return Err(at(
                                    path,
                                    text,
                                    "stream",
                                    "a bare sample file needs \"nx\" and \"ny\" (or \"n\")",
                                ))
                            }
                        };
                        let format = if s.ends_with(".bin") { SampleFormat::F64le } else { SampleFormat::Csv };
                        let header = StreamHeader {
                            nx,
                            ny,
                            lx: *lx,
                            ly: *ly,
                            samples: s.clone(),
                            format,
                            jump_x: *jump_x,
                            jump_y: *jump_y,
                        };
                        let (grid, psi) = read_stream_samples(&header, dir).map_err(|e| at(path, text, "stream", e))?;
                        (grid, psi, *jump_x, *jump_y)
                    }
                }
                (None, Some(name)) => {
                    let nx = nx.or(*n).unwrap_or(32);
                    let ny = ny.or(*n).unwrap_or(nx);
                    let grid = Grid::new(nx, ny, *lx, *ly).map_err(|e| at(path, text, "n", e))?;
                    let psi = match name.as_str() {
                        "solid_rotation" => solid_rotation_stream(&grid),
                        "cellular" => cellular_stream(&grid),
                        other => {
                            return Err(at(
                                path,
                                text,
                                "field",
                                format!("unknown field {other:?}; expected solid_rotation or cellular"),
                            ))
                        }
                    };
                    (grid, psi, *jump_x, *jump_y)
                }
            };
            let f = field_from_stream_with_jumps(grid, &psi, jx, jy).map_err(|e| at(path, text, "stream", e))?;
            Model::Transport(build_transport_operator(f, mode).map_err(|e| at(path, text, "mode", e))?)
        }
    };
    let initial = initial_state(&model, spec.initial.as_ref(), interval_cells, path, text)?;
    Ok(Loaded {
        model,
        initial,
        interval_cells,
    })
}

fn transport_mode(
    inline: Option<TransportMode>,
    domain: Option<&DomainSpec>,
    path: &Path,
    text: &str,
) -> Result<TransportMode> {
    let from_domain = match domain {
        None | Some(DomainSpec::Default) => None,
        Some(DomainSpec::PeriodicFull) | Some(DomainSpec::Full) => Some(TransportMode::PeriodicFull),
        Some(DomainSpec::InteriorDomain) => Some(TransportMode::InteriorDomain),
        Some(other) => return Err(at(path, text, "mode", format!("domain {other:?} is not a transport mode"))),
    };
    match (inline, from_domain) {
        (Some(a), Some(b)) if a != b => Err(at(path, text, "mode", "operator and domain modes disagree")),
        (a, b) => Ok(a.or(b).unwrap_or(TransportMode::PeriodicFull)),
    }
}

fn space_for(spec: Option<&SpaceSpec>, n: usize, path: &Path, text: &str) -> Result<Space> {
    let space = match spec {
        None => Space::uniform(n, 1.0, "euclidean"),
        Some(SpaceSpec::Weights { weights }) => Space::new(weights.clone(), "weights"),
        Some(SpaceSpec::Uniform { dim, weight }) => Space::uniform(*dim, *weight, "uniform"),
        Some(SpaceSpec::Trapezoid { nodes, a, b }) => Space::trapezoid(*nodes, *a, *b, "trapezoid"),
    }
    .map_err(|e| at(path, text, "space", e))?;
    if space.dim() != n {
        return Err(at(
            path,
            text,
            "space",
            format!("space has dimension {} but the operator has {n}", space.dim()),
        ));
    }
    Ok(space)
}

fn initial_state(
    model: &Model,
    spec: Option<&InitialSpec>,
    interval_cells: Option<usize>,
    path: &Path,
    text: &str,
) -> Result<Vector> {
    let n = model.operator().dim();
    let u0 = match (spec, model) {
        (Some(InitialSpec::Values { values }), _) => {
            if values.len() != n {
                return Err(at(
                    path,
                    text,
                    "values",
                    format!("initial state has {} entries, expected {n}", values.len()),
                ));
            }
            Vector::from_column_slice(values)
        }
        (Some(InitialSpec::Gaussian { center, width }), Model::Transport(t)) => {
            if center.len() != 2 {
                return Err(at(path, text, "center", "transport blob center needs two coordinates"));
            }
            gaussian_blob(t.grid(), center[0], center[1], *width)
        }
        (Some(InitialSpec::Gaussian { center, width }), Model::Plain(_)) => {
            let cells = interval_cells
                .ok_or_else(|| at(path, text, "initial", "gaussian initial data needs an interval operator"))?;
            if center.len() != 1 {
                return Err(at(path, text, "center", "interval gaussian center needs one coordinate"));
            }
            sample_cells(cells + 1, gaussian(center[0], *width))
        }
        (None, Model::Transport(t)) => {
            let g = t.grid();
            gaussian_blob(g, g.lx / 2.0 + BLOB_OFFSET * g.lx, g.ly / 2.0, BLOB_WIDTH * g.lx.min(g.ly))
        }
        (None, Model::Plain(_)) => match interval_cells {
            Some(cells) => sample_cells(cells + 1, gaussian(0.5, 0.1)),
            None => {
                let mut e = Vector::zeros(n);
                e[0] = 1.0;
                e
            }
        },
    };
    if u0.iter().any(|v| !v.is_finite()) {
        bail!("{}: initial state has non-finite entries", path.display());
    }
    Ok(u0)
}
