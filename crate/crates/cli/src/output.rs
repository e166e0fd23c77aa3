//! report.json, trajectory.csv and residuals.csv.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::json;
use skewflow::Trajectory;

use crate::commands::{Outcome, ResidualTable, Settings};

pub fn write_all(dir: &Path, command: &str, settings: &Settings, outcome: &Outcome) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut report = outcome.report.clone();
    report["config"] = json!({"command": command, "settings": settings});
    let text = skewflow::report::to_json_string(&report)?;
    fs::write(dir.join("report.json"), text)?;
    if let Some(traj) = &outcome.trajectory {
        write_trajectory(&dir.join("trajectory.csv"), traj)?;
    }
    if !outcome.residuals.is_empty() {
        write_residuals(&dir.join("residuals.csv"), &outcome.residuals)?;
    }
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Columns `t, norm, u0, u1, ...`.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let dim = traj.states()[0].len();
    let mut header = vec!["t".to_string(), "norm".to_string()];
    header.extend((0..dim).map(|i| format!("u{i}")));
    w.write_record(&header)?;
    for ((t, s), n) in traj.times().iter().zip(traj.states()).zip(traj.norms()) {
        let mut row = vec![num(*t), num(n)];
        row.extend(s.iter().map(|v| num(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `solution, spatial, profile, residual`.
pub fn write_residuals(path: &Path, tables: &[ResidualTable]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["solution", "spatial", "profile", "residual"])?;
    for t in tables {
        for (i, row) in t.report.residuals.iter().enumerate() {
            for (j, r) in row.iter().enumerate() {
                w.write_record([t.label.clone(), i.to_string(), t.report.profiles[j].clone(), num(*r)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
