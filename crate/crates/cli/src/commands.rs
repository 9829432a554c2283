//! The five subcommands. Each returns whether its checks passed; errors are
//! reserved for configuration, output and numeric failures.

use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use qtransport::cost::{self, BallGrid, LowerHemisphere};
use qtransport::estimates::{bounds_report, DiagnosticsReport};
use qtransport::solver::{self, continuation_run, Grid, GridField, Problem};
use qtransport::verify::run_suites;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::output::OutputDir;
use crate::CliError;

fn numeric(e: qtransport::error::Error) -> CliError {
    CliError::Numeric(e.to_string())
}

/// One row of the field table written by `solve` and read by `diagnose`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub r_index: usize,
    pub theta_index: usize,
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub u_x: f64,
    pub u_y: f64,
    pub lambda_min_w: f64,
    pub residual: f64,
}

/// One row of the boundary table.
#[derive(Clone, Debug, PartialEq, Serialize)]
struct BoundaryRow {
    node: usize,
    theta: f64,
    x: f64,
    y: f64,
    image_x: f64,
    image_y: f64,
    beta_x: f64,
    beta_y: f64,
    gamma_x: f64,
    gamma_y: f64,
    beta_dot_gamma: f64,
    chi: Option<f64>,
    min_eig_w: f64,
}

/// One row of the `transform` output.
#[derive(Clone, Debug, PartialEq, Serialize)]
struct TransformRow {
    r_index: usize,
    theta_index: usize,
    x: f64,
    y: f64,
    u0: f64,
    image_x: f64,
    image_y: f64,
}

fn write_boundary(out: &mut OutputDir, report: &DiagnosticsReport) -> Result<(), CliError> {
    let rows: Vec<BoundaryRow> = report
        .boundary
        .iter()
        .map(|b| BoundaryRow {
            node: b.node,
            theta: b.theta,
            x: b.x[0],
            y: b.x[1],
            image_x: b.y[0],
            image_y: b.y[1],
            beta_x: b.beta[0],
            beta_y: b.beta[1],
            gamma_x: b.gamma[0],
            gamma_y: b.gamma[1],
            beta_dot_gamma: b.beta_dot_gamma,
            chi: b.chi,
            min_eig_w: b.min_eig_w,
        })
        .collect();
    out.write_csv("boundary.csv", &rows)
}

pub fn verify(cfg: &RunConfig, out: &mut OutputDir) -> Result<bool, CliError> {
    let start = Instant::now();
    let mut vc = cfg.verify.clone();
    vc.seed = cfg.seed;
    let suites = run_suites(&vc).map_err(numeric)?;
    let pass = suites.iter().all(|s| s.pass);
    let failing: Vec<&str> = suites.iter().filter(|s| !s.pass).map(|s| s.suite.as_str()).collect();
    for s in &suites {
        println!(
            "{:<22} {:>6} samples  worst {:>12.4e}  margin {:>12.4e}  {}",
            s.suite,
            s.samples,
            s.worst_value,
            s.worst_margin,
            if s.pass { "pass" } else { "FAIL" }
        );
    }
    out.write_summary(&json!({
        "command": "verify",
        "seed": cfg.seed,
        "pass": pass,
        "failing": failing,
        "suites": suites,
        "elapsed_seconds": start.elapsed().as_secs_f64(),
    }))?;
    Ok(pass)
}

pub fn classify(cfg: &RunConfig, out: &mut OutputDir) -> Result<bool, CliError> {
    let start = Instant::now();
    let model = cfg.model()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let report =
        cost::classify_a3(&model, cfg.classify.budget, &model.x_box, &model.y_box, &mut rng).map_err(numeric)?;
    println!("classification: {} (min {:.6e})", report.classification, report.min_value);
    out.write_json("classification.json", &report)?;
    out.write_summary(&json!({
        "command": "classify",
        "seed": cfg.seed,
        "pass": true,
        "classification": report.classification,
        "min_value": report.min_value,
        "samples": report.samples,
        "elapsed_seconds": start.elapsed().as_secs_f64(),
    }))?;
    Ok(true)
}

fn field_rows(u: &GridField, report: &DiagnosticsReport, residual: &GridField) -> Vec<FieldRow> {
    report
        .nodes
        .iter()
        .map(|n| FieldRow {
            r_index: n.r_index,
            theta_index: n.theta_index,
            x: n.x,
            y: n.y,
            u: u.values[n.node],
            u_x: n.u_x,
            u_y: n.u_y,
            lambda_min_w: n.lambda_min_w,
            residual: residual.values[n.node],
        })
        .collect()
}

pub fn solve(cfg: &RunConfig, out: &mut OutputDir) -> Result<bool, CliError> {
    let start = Instant::now();
    let problem = cfg.problem()?;
    let size = problem.grid.size;
    let run = match continuation_run(&problem) {
        Ok(run) => run,
        Err(failure) => {
            eprintln!("solve failed at t = {} in stage {}: {}", failure.t, failure.stage, failure.error);
            out.write_summary(&json!({
                "command": "solve",
                "seed": cfg.seed,
                "grid": [size.n_r, size.n_theta],
                "status": "failed",
                "stage": failure.stage,
                "t": failure.t,
                "error": failure.error.to_string(),
                "steps": failure.history,
                "pass": false,
                "elapsed_seconds": start.elapsed().as_secs_f64(),
            }))?;
            return Ok(false);
        }
    };
    let u = run.field();
    let report = bounds_report(u, &problem, &cfg.thresholds).map_err(numeric)?;
    let residual = solver::residual(&run.state, &problem).map_err(numeric)?;
    out.write_csv("fields.csv", &field_rows(u, &report, &residual))?;
    write_boundary(out, &report)?;
    out.write_json("diagnostics.json", &report)?;
    let pass = report.hard_pass();
    println!(
        "converged: t = 1 after {} Newton iterations, residual {:.3e}; obliqueness min {:.6}, diagnostics {}",
        run.newton_total(),
        run.final_residual,
        report.obliqueness_min,
        if pass { "pass" } else { "FAIL" }
    );
    out.write_summary(&json!({
        "command": "solve",
        "seed": cfg.seed,
        "grid": [size.n_r, size.n_theta],
        "h": problem.grid.h,
        "status": "converged",
        "t": run.state.t,
        "final_residual": run.final_residual,
        "newton_iterations": run.newton_total(),
        "accepted_steps": run.state.accepted_ts(),
        "max_jacobian_error": run.max_jacobian_error(),
        "jacobian_checks": run.jacobian_checks,
        "steps": run.state.history,
        "diagnostics_pass": pass,
        "pass": pass,
        "elapsed_seconds": start.elapsed().as_secs_f64(),
    }))?;
    Ok(pass)
}

pub fn transform(cfg: &RunConfig, out: &mut OutputDir) -> Result<bool, CliError> {
    let start = Instant::now();
    let model = cfg.model()?;
    let source = cfg.source()?;
    let target = cfg.target()?;
    let grid = Grid::new(source, cfg.grid()?).map_err(|e| CliError::Config(e.to_string()))?;
    let t = &cfg.transform;
    let center = DVector::from_column_slice(&target.center);
    let radius = t.radius_fraction * target.rho_range().0;
    let psi = LowerHemisphere {
        center: center.clone(),
        radius,
    };
    let ball = BallGrid::polar(center.clone(), radius, t.n_radial, t.n_angular);
    let mut rows = Vec::with_capacity(grid.len());
    let mut max_offset: f64 = 0.0;
    for node in &grid.nodes {
        let x = DVector::from_column_slice(node.x.as_slice());
        let ct = cost::c_transform(&model, &psi, &ball, &x).map_err(numeric)?;
        max_offset = max_offset.max((&ct.argmax - &center).norm());
        rows.push(TransformRow {
            r_index: node.i,
            theta_index: node.j,
            x: node.x.x,
            y: node.x.y,
            u0: ct.value,
            image_x: ct.argmax[0],
            image_y: ct.argmax[1],
        });
    }
    let pass = max_offset <= radius * (1.0 + 1e-9);
    println!("c-transform on {} nodes: images within {:.6} of the center (radius {radius})", rows.len(), max_offset);
    out.write_csv("transform.csv", &rows)?;
    out.write_summary(&json!({
        "command": "transform",
        "seed": cfg.seed,
        "grid": [grid.size.n_r, grid.size.n_theta],
        "radius": radius,
        "center": target.center,
        "max_image_offset": max_offset,
        "pass": pass,
        "elapsed_seconds": start.elapsed().as_secs_f64(),
    }))?;
    Ok(pass)
}

/// Reads a field table into a grid field on `problem`'s grid.
pub fn read_field(path: &Path, problem: &Problem) -> Result<GridField, CliError> {
    let bad = |m: String| CliError::Config(format!("{}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let grid = &problem.grid;
    let mut values = vec![f64::NAN; grid.len()];
    for row in reader.deserialize::<FieldRow>() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        if row.r_index >= grid.size.n_r || row.theta_index >= grid.size.n_theta {
            return Err(bad(format!("node ({}, {}) is outside the grid", row.r_index, row.theta_index)));
        }
        let k = grid.index(row.r_index, row.theta_index as isize);
        let x = grid.nodes[k].x;
        if (x.x - row.x).abs() > 1e-9 || (x.y - row.y).abs() > 1e-9 {
            return Err(bad(format!(
                "node ({}, {}) lies at ({}, {}) but the configured grid puts it at ({}, {})",
                row.r_index, row.theta_index, row.x, row.y, x.x, x.y
            )));
        }
        values[k] = row.u;
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(bad(format!("no finite value for node {k}")));
    }
    Ok(GridField { values })
}

pub fn diagnose(cfg: &RunConfig, out: &mut OutputDir) -> Result<bool, CliError> {
    let start = Instant::now();
    let problem = cfg.problem()?;
    let path = &cfg
        .diagnose
        .as_ref()
        .ok_or_else(|| CliError::Config("missing `diagnose` block with the field path".into()))?
        .field;
    let u = read_field(path, &problem)?;
    let report = bounds_report(&u, &problem, &cfg.thresholds).map_err(numeric)?;
    write_boundary(out, &report)?;
    out.write_csv("nodes.csv", &report.nodes)?;
    out.write_json("diagnostics.json", &report)?;
    let pass = report.hard_pass();
    for c in &report.checks {
        println!(
            "{:<16} {:>12.4e} (limit {:.4e}) {}{}",
            c.name,
            c.value,
            c.limit,
            if c.pass { "pass" } else { "FAIL" },
            if c.hard { "" } else { " [soft]" }
        );
    }
    out.write_summary(&json!({
        "command": "diagnose",
        "seed": cfg.seed,
        "field": path,
        "pass": pass,
        "obliqueness_min": report.obliqueness_min,
        "urbas_residual_max": report.urbas_residual_max,
        "image_hausdorff": report.image_hausdorff,
        "elapsed_seconds": start.elapsed().as_secs_f64(),
    }))?;
    Ok(pass)
}
