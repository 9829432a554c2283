//! Discrete residual, its linearization, and the damped Newton iteration.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use serde::Serialize;

use super::grid::{GridField, NodeKind, DX, DXX, DXY, DY, DYY};
use super::{ContinuationState, Problem};
use crate::cost;
use crate::error::{Error, Result};
use crate::geometry::{self, DomainSpec};
use crate::operator::{self, ModifiedHessian};

/// Per-node linearization: the residual row is
/// `Σ_q coeffs[q] · (stencil slot q) + diag · v_k`.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct RowLinearization {
    coeffs: [f64; 5],
    diag: f64,
}

/// Residual and pointwise data from one sweep over the grid.
#[derive(Clone, Debug)]
pub(crate) struct Sweep {
    pub residual: Vec<f64>,
    /// Smallest eigenvalue of `w` at interior nodes (`+∞` on the boundary).
    pub min_eig: Vec<f64>,
    pub rows: Option<Vec<RowLinearization>>,
}

impl Sweep {
    pub fn norm(&self) -> f64 {
        self.residual.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eig.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Homotopy data for one value of `t`.
pub(crate) struct StageData<'a> {
    pub t: f64,
    pub target: DomainSpec,
    pub seed_values: &'a [f64],
    pub seed_f: &'a [f64],
}

impl Problem {
    pub(crate) fn stage<'a>(&self, state: &'a ContinuationState) -> StageData<'a> {
        StageData {
            t: state.t,
            target: self.target_at(&state.seed.target_shape, state.t),
            seed_values: &state.seed.field.values,
            seed_f: &state.seed.f0,
        }
    }

    pub(crate) fn sweep(&self, stage: &StageData<'_>, u: &GridField, linearize: bool) -> Result<Sweep> {
        let n = self.grid.len();
        let mut residual = vec![0.0; n];
        let mut min_eig = vec![f64::INFINITY; n];
        let mut rows = linearize.then(|| vec![RowLinearization::default(); n]);
        for k in 0..n {
            let node = self.grid.nodes[k];
            let (du, d2u) = u.derivatives(&self.grid, k);
            let x = DVector::from_column_slice(node.x.as_slice());
            let p = DVector::from_column_slice(du.as_slice());
            let y = cost::y_map(&self.spec.model, &x, &p, None)?;
            if node.kind == NodeKind::Boundary {
                let d = geometry::signed_distance(&stage.target, &Vector2::new(y[0], y[1]));
                residual[k] = d.value;
                if let Some(rows) = rows.as_mut() {
                    let (_, inv) = self.spec.model.mixed_inverse(&x, &y)?;
                    let beta = inv.transpose() * DVector::from_column_slice(d.gradient.as_slice());
                    rows[k].coeffs[DX] = beta[0];
                    rows[k].coeffs[DY] = beta[1];
                }
                continue;
            }
            let a = self.spec.model.cost.hess_xx(&x, &y);
            let w = DMatrix::from_fn(2, 2, |i, j| d2u[(i, j)] - a[(i, j)]);
            let mh = ModifiedHessian::new(w)?;
            let eval = operator::evaluate(&mh, self.spec.quotient).map_err(|e| match e {
                Error::NotAdmissible { min_eigenvalue, .. } => Error::NotAdmissible {
                    min_eigenvalue,
                    node: Some(k),
                },
                other => other,
            })?;
            min_eig[k] = *eval.eigenvalues.last().expect("2x2");
            let uk = u.values[k];
            let (b, bz) = self.spec.rhs.eval(&node.x, uk);
            let damp = (uk - stage.seed_values[k]).exp() * stage.seed_f[k];
            residual[k] = eval.value - (stage.t * b + (1.0 - stage.t) * damp);
            if let Some(rows) = rows.as_mut() {
                let f = &eval.linearization;
                let dpa = cost::a_matrix_dp(&self.spec.model, &x, &y)?;
                let row = &mut rows[k];
                for (kk, m) in dpa.iter().enumerate() {
                    row.coeffs[kk] = -(0..2)
                        .flat_map(|i| (0..2).map(move |j| (i, j)))
                        .map(|(i, j)| f[(i, j)] * m[(i, j)])
                        .sum::<f64>();
                }
                row.coeffs[DXX] = f[(0, 0)];
                row.coeffs[DXY] = f[(0, 1)] + f[(1, 0)];
                row.coeffs[DYY] = f[(1, 1)];
                row.diag = -(stage.t * bz + (1.0 - stage.t) * damp);
            }
        }
        Ok(Sweep {
            residual,
            min_eig,
            rows,
        })
    }

    /// `J v` from the row linearizations.
    pub(crate) fn apply_rows(&self, rows: &[RowLinearization], v: &[f64]) -> Vec<f64> {
        (0..self.grid.len())
            .map(|k| {
                let row = rows[k];
                let mut acc = row.diag * v[k];
                for (node, ws) in &self.grid.stencils[k].entries {
                    let c: f64 = (0..5).map(|q| row.coeffs[q] * ws[q]).sum();
                    acc += c * v[*node];
                }
                acc
            })
            .collect()
    }

    /// Assembled sparse Jacobian.
    pub(crate) fn assemble(&self, rows: &[RowLinearization]) -> Result<SparseColMat<usize, f64>> {
        let n = self.grid.len();
        let mut triplets = Vec::with_capacity(n * 10);
        for (k, row) in rows.iter().enumerate() {
            let mut diag_done = false;
            for (node, ws) in &self.grid.stencils[k].entries {
                let mut c: f64 = (0..5).map(|q| row.coeffs[q] * ws[q]).sum();
                if *node == k {
                    c += row.diag;
                    diag_done = true;
                }
                triplets.push(Triplet::new(k, *node, c));
            }
            if !diag_done && row.diag != 0.0 {
                triplets.push(Triplet::new(k, k, row.diag));
            }
        }
        SparseColMat::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::LinearSolve(format!("{e:?}")))
    }

    fn solve_linear(&self, rows: &[RowLinearization], rhs: &[f64]) -> Result<Vec<f64>> {
        let mat = self.assemble(rows)?;
        let lu = mat.sp_lu().map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
        let b = faer::Col::<f64>::from_fn(rhs.len(), |i| rhs[i]);
        let x = lu.solve(&b);
        let out: Vec<f64> = (0..rhs.len()).map(|i| x[i]).collect();
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::LinearSolve("non-finite Newton direction".into()))
        }
    }
}

/// Discrete residual: `F[D²u - A] - RHS_t` at interior nodes and the signed
/// distance of `Y(x, Du)` to the current target at boundary nodes.
pub fn residual(state: &ContinuationState, problem: &Problem) -> Result<GridField> {
    let stage = problem.stage(state);
    let sweep = problem.sweep(&stage, &state.field, false)?;
    Ok(GridField {
        values: sweep.residual,
    })
}

/// Matrix-free application of the residual's linearization to `v`.
pub fn jacobian_apply(state: &ContinuationState, problem: &Problem, v: &GridField) -> Result<GridField> {
    let stage = problem.stage(state);
    let sweep = problem.sweep(&stage, &state.field, true)?;
    let rows = sweep.rows.expect("linearized sweep");
    Ok(GridField {
        values: problem.apply_rows(&rows, &v.values),
    })
}

/// Central-difference check of [`jacobian_apply`] along a random direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JacobianCheck {
    pub t: f64,
    pub step: f64,
    /// `‖FD - Jv‖_∞ / ‖Jv‖_∞`.
    pub relative_error: f64,
}

pub const JACOBIAN_CHECK_STEP: f64 = 1e-5;

/// Plane waves summed into a random direction.
const CHECK_WAVES: usize = 6;

/// Random smooth direction `v = Σ a_m cos(ω_m·x + φ_m)` with `|a_m| ≤ 1`
/// and `|ω_m| ≤ 3`. Smoothness keeps `D²v` bounded independently of the
/// mesh, so the check measures the linearization rather than stencil
/// amplification of nodal noise.
pub fn random_direction<R: Rng + ?Sized>(problem: &Problem, rng: &mut R) -> GridField {
    let waves: Vec<(f64, Vector2<f64>, f64)> = (0..CHECK_WAVES)
        .map(|_| {
            let amp = rng.random_range(-1.0..1.0);
            let omega = Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (amp, omega, phase)
        })
        .collect();
    GridField::from_fn(&problem.grid, |x| {
        waves.iter().map(|(a, w, ph)| a * (w.dot(x) + ph).cos()).sum()
    })
}

/// Compares `jacobian_apply(v)` with `(R(u + hv) - R(u - hv)) / 2h` for a
/// [`random_direction`] `v`.
pub fn jacobian_consistency<R: Rng + ?Sized>(
    state: &ContinuationState,
    problem: &Problem,
    rng: &mut R,
) -> Result<JacobianCheck> {
    let h = JACOBIAN_CHECK_STEP;
    let v = random_direction(problem, rng);
    let jv = jacobian_apply(state, problem, &v)?;
    let shifted = |s: f64| {
        let mut st = state.clone();
        for (a, b) in st.field.values.iter_mut().zip(&v.values) {
            *a += s * b;
        }
        residual(&st, problem)
    };
    let plus = shifted(h)?;
    let minus = shifted(-h)?;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for k in 0..jv.values.len() {
        let fd = (plus.values[k] - minus.values[k]) / (2.0 * h);
        num = num.max((fd - jv.values[k]).abs());
        den = den.max(jv.values[k].abs());
    }
    Ok(JacobianCheck {
        t: state.t,
        step: h,
        relative_error: num / den.max(f64::MIN_POSITIVE),
    })
}

/// Outcome of a converged Newton solve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual_norms: Vec<f64>,
    pub step_lengths: Vec<f64>,
    pub min_eigenvalue: f64,
}

/// Number of step halvings tried before declaring a line-search stall.
pub const MAX_HALVINGS: usize = 10;

/// Damped Newton iteration at the state's `t`.
///
/// A step is accepted when the residual sup-norm decreases and every
/// interior node keeps `λ_min(w) ≥` the admissibility floor.
pub fn newton_solve(state: &ContinuationState, problem: &Problem) -> Result<(ContinuationState, NewtonReport)> {
    let tol = &problem.spec.tolerances;
    let stage = problem.stage(state);
    let mut u = state.field.clone();
    if !u.is_finite() {
        return Err(Error::NoConvergence("non-finite iterate".into()));
    }
    let mut sweep = problem.sweep(&stage, &u, true)?;
    let mut report = NewtonReport {
        iterations: 0,
        residual_norms: vec![sweep.norm()],
        step_lengths: Vec::new(),
        min_eigenvalue: sweep.min_eigenvalue(),
    };
    loop {
        let norm = sweep.norm();
        if norm <= tol.newton {
            break;
        }
        if report.iterations >= tol.max_newton_iterations {
            return Err(Error::MaxIterations(tol.max_newton_iterations));
        }
        let rows = sweep.rows.as_ref().expect("linearized sweep");
        let neg: Vec<f64> = sweep.residual.iter().map(|r| -r).collect();
        let delta = problem.solve_linear(rows, &neg)?;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = GridField {
                values: u.values.iter().zip(&delta).map(|(a, d)| a + alpha * d).collect(),
            };
            if let Ok(s) = problem.sweep(&stage, &trial, true) {
                if s.norm() < norm && s.min_eigenvalue() >= tol.admissibility_floor {
                    accepted = Some((trial, s));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, s)) = accepted else {
            return Err(Error::LineSearchStall(MAX_HALVINGS));
        };
        u = trial;
        sweep = s;
        report.iterations += 1;
        report.residual_norms.push(sweep.norm());
        report.step_lengths.push(alpha);
        report.min_eigenvalue = sweep.min_eigenvalue();
    }
    let mut next = state.clone();
    next.field = u;
    Ok((next, report))
}

/// Per-node discrete data used by the diagnostics and the CSV export.
#[derive(Clone, Debug)]
pub struct NodeData {
    pub du: Vector2<f64>,
    pub d2u: Matrix2<f64>,
    pub y: Vector2<f64>,
    /// `w = D²u - A(x, Du)`.
    pub w: Matrix2<f64>,
    pub min_eig_w: f64,
}

/// Evaluates `Du`, `D²u`, `T_u` and `w` at every node.
pub fn node_data(problem: &Problem, u: &GridField) -> Result<Vec<NodeData>> {
    (0..problem.grid.len())
        .map(|k| {
            let node = problem.grid.nodes[k];
            let (du, d2u) = u.derivatives(&problem.grid, k);
            let x = DVector::from_column_slice(node.x.as_slice());
            let p = DVector::from_column_slice(du.as_slice());
            let y = cost::y_map(&problem.spec.model, &x, &p, None)?;
            let a = problem.spec.model.cost.hess_xx(&x, &y);
            let w = Matrix2::new(
                d2u[(0, 0)] - a[(0, 0)],
                d2u[(0, 1)] - a[(0, 1)],
                d2u[(1, 0)] - a[(1, 0)],
                d2u[(1, 1)] - a[(1, 1)],
            );
            let min_eig_w = w.symmetric_eigenvalues().min();
            Ok(NodeData {
                du,
                d2u,
                y: Vector2::new(y[0], y[1]),
                w,
                min_eig_w,
            })
        })
        .collect()
}
