//! Finite-difference discretization of the second boundary value problem on
//! a polar grid and the continuation driver
//!
//! ```text
//! F[u_t] = t B(·, u_t) + (1 - t) e^{u_t - u₀} F[u₀],   T_{u_t}(Ω⁻) = Ω⁺_t,
//! ```
//!
//! where `Ω⁺_t` blends the radial profile of the seed image `T_{u₀}(Ω⁻)`
//! into that of `Ω⁺`.

mod discrete;
mod grid;
mod rhs;

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector2};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

pub use discrete::{
    jacobian_apply, jacobian_consistency, newton_solve, random_direction, node_data, residual, JacobianCheck, NewtonReport, NodeData,
    JACOBIAN_CHECK_STEP, MAX_HALVINGS,
};
pub use grid::{Grid, GridField, GridSize, Node, NodeKind, Stencil};
pub use rhs::BExpr;

use crate::cost::{self, BallGrid, CostModel, LowerHemisphere};
use crate::error::{Error, Result};
use crate::geometry::{DomainSpec, Shape};
use crate::operator::{self, ModifiedHessian};
use crate::symfun::QuotientParams;

/// Newton and continuation controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Newton stops when the residual sup-norm is at most this.
    pub newton: f64,
    pub max_newton_iterations: usize,
    /// Smallest eigenvalue of `w` every accepted iterate must keep.
    pub admissibility_floor: f64,
    pub dt_initial: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Newton counts at or below this grow the next step by 1.5.
    pub fast_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            newton: 1e-9,
            max_newton_iterations: 25,
            admissibility_floor: 1e-8,
            dt_initial: 0.25,
            dt_min: 1e-3,
            dt_max: 0.25,
            fast_iterations: 3,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let ok = self.newton > 0.0
            && self.max_newton_iterations > 0
            && self.admissibility_floor > 0.0
            && self.dt_min > 0.0
            && self.dt_min <= self.dt_initial
            && self.dt_initial <= self.dt_max
            && self.dt_max <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidProblem(format!("inconsistent tolerances {self:?}")))
        }
    }
}

/// How the `t = 0` function `u₀` is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SeedKind {
    /// `u₀ = ½(1 + k)|x - c⁻|² + (c⁻ - c⁺)·x`, so `T_{u₀}(x) = c⁺ - k(x - c⁻)`
    /// with `k = shrink · min ρ⁺ / max ρ⁻`. Quadratic cost only.
    Quadratic {
        #[serde(default = "default_shrink")]
        shrink: f64,
    },
    /// c-transform of the lower hemisphere over `B_r(c⁺)` with
    /// `r = radius_fraction · min ρ⁺`.
    CTransform {
        #[serde(default = "default_radius_fraction")]
        radius_fraction: f64,
        #[serde(default = "default_ball_nodes")]
        n_radial: usize,
        #[serde(default = "default_ball_nodes")]
        n_angular: usize,
    },
}

fn default_shrink() -> f64 {
    0.8
}

fn default_radius_fraction() -> f64 {
    0.5
}

fn default_ball_nodes() -> usize {
    64
}

impl Default for SeedKind {
    fn default() -> Self {
        SeedKind::Quadratic { shrink: default_shrink() }
    }
}

/// Everything defining one solve.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub model: CostModel,
    pub source: DomainSpec,
    pub target: DomainSpec,
    pub rhs: BExpr,
    pub quotient: QuotientParams,
    pub grid: GridSize,
    pub tolerances: Tolerances,
    pub seed: SeedKind,
    /// Seed for the random directions of the Jacobian consistency checks.
    pub check_seed: u64,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.model.dim() != 2 {
            return Err(Error::InvalidProblem(format!(
                "the PDE solver is planar; cost dimension is {}",
                self.model.dim()
            )));
        }
        if self.quotient.n() != 2 || self.quotient.l() > 1 {
            return Err(Error::InvalidProblem(format!(
                "the PDE solver needs n = 2 and l in {{0, 1}} (got n = {}, l = {})",
                self.quotient.n(),
                self.quotient.l()
            )));
        }
        self.source.validate()?;
        self.target.validate()?;
        self.grid.validate()?;
        self.tolerances.validate()?;
        self.rhs.validate(&self.source)?;
        for (dom, bx, side) in [
            (&self.source, &self.model.x_box, "source"),
            (&self.target, &self.model.y_box, "target"),
        ] {
            for (_, p) in dom.boundary_nodes() {
                if !bx.contains(&DVector::from_column_slice(p.as_slice())) {
                    return Err(Error::InvalidProblem(format!(
                        "{side} domain leaves the cost bounding box at ({}, {})",
                        p.x, p.y
                    )));
                }
            }
        }
        match &self.seed {
            SeedKind::Quadratic { shrink } => {
                if !self.model.cost.is_quadratic() {
                    return Err(Error::InvalidProblem(
                        "the quadratic seed needs the quadratic cost; use the c-transform seed".into(),
                    ));
                }
                if !(*shrink > 0.0 && *shrink < 1.0) {
                    return Err(Error::InvalidProblem(format!("seed shrink {shrink} outside (0, 1)")));
                }
            }
            SeedKind::CTransform {
                radius_fraction,
                n_radial,
                n_angular,
            } => {
                if !(*radius_fraction > 0.0 && *radius_fraction < 1.0) || *n_radial < 2 || *n_angular < 8 {
                    return Err(Error::InvalidProblem("invalid c-transform seed parameters".into()));
                }
            }
        }
        Ok(())
    }
}

/// A validated problem with its grid.
#[derive(Clone, Debug)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub grid: Grid,
}

impl Problem {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        spec.validate()?;
        let grid = Grid::new(&spec.source, spec.grid)?;
        Ok(Self { spec, grid })
    }

    /// Same problem on another grid.
    pub fn with_grid(&self, size: GridSize) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.grid = size;
        Self::new(spec)
    }

    /// `Ω⁺_t`: radial blend about the target center.
    pub fn target_at(&self, seed_shape: &Shape, t: f64) -> DomainSpec {
        DomainSpec {
            center: self.spec.target.center,
            shape: Shape::Blend {
                from: Box::new(seed_shape.clone()),
                to: Box::new(self.spec.target.shape.clone()),
                t,
            },
            resolution: self.spec.target.resolution,
        }
    }

    /// Builds `u₀`, the discrete `F[u₀]` at every interior node, and the
    /// radial profile of `T_{u₀}(Ω⁻)` about the target center.
    pub fn build_seed(&self) -> Result<Seed> {
        let src = &self.spec.source;
        let tgt = &self.spec.target;
        let (field, target_shape) = match &self.spec.seed {
            SeedKind::Quadratic { shrink } => {
                let k = shrink * tgt.rho_range().0 / src.rho_range().1;
                let cm = src.center();
                let shift = cm - tgt.center();
                let field = GridField::from_fn(&self.grid, |x| 0.5 * (1.0 + k) * (x - cm).norm_squared() + shift.dot(x));
                let shape = Shape::Transformed {
                    base: Box::new(src.shape.clone()),
                    scale: k,
                    phase: PI,
                };
                (field, shape)
            }
            SeedKind::CTransform {
                radius_fraction,
                n_radial,
                n_angular,
            } => {
                let center = DVector::from_column_slice(&tgt.center);
                let radius = radius_fraction * tgt.rho_range().0;
                let psi = LowerHemisphere {
                    center: center.clone(),
                    radius,
                };
                let ball = BallGrid::polar(center, radius, *n_radial, *n_angular);
                let values = self
                    .grid
                    .nodes
                    .iter()
                    .map(|n| {
                        let x = DVector::from_column_slice(n.x.as_slice());
                        cost::c_transform(&self.spec.model, &psi, &ball, &x).map(|t| t.value)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let shape = c_transform_image(&self.spec.model, &psi, &ball, src, tgt)?;
                (GridField { values }, shape)
            }
        };
        let mut f0 = vec![0.0; self.grid.len()];
        for (k, node) in self.grid.nodes.iter().enumerate() {
            if node.kind == NodeKind::Boundary {
                continue;
            }
            let (du, d2u) = field.derivatives(&self.grid, k);
            let x = DVector::from_column_slice(node.x.as_slice());
            let a = cost::a_matrix(&self.spec.model, &x, &DVector::from_column_slice(du.as_slice()), None)?;
            let w = DMatrix::from_fn(2, 2, |i, j| d2u[(i, j)] - a[(i, j)]);
            f0[k] = operator::eval_f(&ModifiedHessian::new(w)?, self.spec.quotient).map_err(|e| match e {
                Error::NotAdmissible { min_eigenvalue, .. } => Error::NotAdmissible {
                    min_eigenvalue,
                    node: Some(k),
                },
                other => other,
            })?;
        }
        Ok(Seed {
            kind: self.spec.seed.clone(),
            field,
            f0,
            target_shape,
        })
    }

    /// State at `t = 0` holding the seed.
    pub fn initial_state(&self) -> Result<ContinuationState> {
        let seed = Arc::new(self.build_seed()?);
        Ok(ContinuationState {
            t: 0.0,
            field: seed.field.clone(),
            seed,
            history: Vec::new(),
            status: Status::Running,
        })
    }
}

/// Number of Fourier modes fitted to the c-transform seed image.
const IMAGE_MODES: usize = 12;
/// Boundary samples used for that fit.
const IMAGE_SAMPLES: usize = 256;

/// Radial profile about `tgt.center` of `T_{u₀}(∂Ω⁻)` for the c-transform
/// seed, as a least-squares Fourier series.
fn c_transform_image(
    model: &CostModel,
    psi: &LowerHemisphere,
    ball: &BallGrid,
    src: &DomainSpec,
    tgt: &DomainSpec,
) -> Result<Shape> {
    let c = tgt.center();
    let mut design = DMatrix::zeros(IMAGE_SAMPLES, 1 + 2 * IMAGE_MODES);
    let mut rhs = DVector::zeros(IMAGE_SAMPLES);
    for s in 0..IMAGE_SAMPLES {
        let th = TAU * s as f64 / IMAGE_SAMPLES as f64;
        let x = src.point(th);
        let t = cost::c_transform(model, psi, ball, &DVector::from_column_slice(x.as_slice()))?;
        let d = Vector2::new(t.argmax[0], t.argmax[1]) - c;
        let phi = d.y.atan2(d.x);
        design[(s, 0)] = 1.0;
        for m in 1..=IMAGE_MODES {
            let (sn, cs) = (m as f64 * phi).sin_cos();
            design[(s, 2 * m - 1)] = cs;
            design[(s, 2 * m)] = sn;
        }
        rhs[s] = d.norm();
    }
    let coef = design
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::InvalidProblem(format!("seed image fit failed: {e}")))?;
    Ok(Shape::RadialFourier {
        r0: coef[0],
        cos: (1..=IMAGE_MODES).map(|m| coef[2 * m - 1]).collect(),
        sin: (1..=IMAGE_MODES).map(|m| coef[2 * m]).collect(),
    })
}

/// The `t = 0` data of the homotopy.
#[derive(Clone, Debug)]
pub struct Seed {
    pub kind: SeedKind,
    pub field: GridField,
    /// Discrete `F[u₀]` per node (zero on the boundary ring).
    pub f0: Vec<f64>,
    /// Radial profile of `Ω⁺_0 = T_{u₀}(Ω⁻)` about the target center.
    pub target_shape: Shape,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Converged,
    Failed,
}

/// One attempted continuation step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub accepted: bool,
    pub newton_iterations: usize,
    pub residual_norms: Vec<f64>,
    pub min_eigenvalue: f64,
    pub jacobian_check: Option<f64>,
    pub failure: Option<String>,
}

/// Current `t`, iterate, seed and step history of a continuation run.
#[derive(Clone, Debug)]
pub struct ContinuationState {
    pub t: f64,
    pub field: GridField,
    pub seed: Arc<Seed>,
    pub history: Vec<StepRecord>,
    pub status: Status,
}

impl ContinuationState {
    /// `t` values of accepted steps, in order.
    pub fn accepted_ts(&self) -> Vec<f64> {
        self.history.iter().filter(|r| r.accepted).map(|r| r.t).collect()
    }
}

/// Where a run failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureStage {
    Seed,
    Newton,
    Continuation,
}

impl fmt::Display for FailureStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureStage::Seed => "seed",
            FailureStage::Newton => "newton",
            FailureStage::Continuation => "continuation",
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunFailure {
    pub stage: FailureStage,
    pub t: f64,
    pub error: Error,
    pub history: Vec<StepRecord>,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed at t = {}: {}", self.stage, self.t, self.error)
    }
}

impl std::error::Error for RunFailure {}

/// Converged run at `t = 1`.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub state: ContinuationState,
    pub final_residual: f64,
    pub jacobian_checks: Vec<JacobianCheck>,
}

impl RunOutput {
    pub fn field(&self) -> &GridField {
        &self.state.field
    }

    pub fn newton_total(&self) -> usize {
        self.state.history.iter().map(|r| r.newton_iterations).sum()
    }

    pub fn max_jacobian_error(&self) -> f64 {
        self.jacobian_checks.iter().map(|c| c.relative_error).fold(0.0, f64::max)
    }
}

fn record(t: f64, dt: f64, report: &NewtonReport, check: Option<f64>) -> StepRecord {
    StepRecord {
        t,
        dt,
        accepted: true,
        newton_iterations: report.iterations,
        residual_norms: report.residual_norms.clone(),
        min_eigenvalue: report.min_eigenvalue,
        jacobian_check: check,
        failure: None,
    }
}

/// Advances `t` from 0 to 1.
///
/// The seed is first corrected by Newton at `t = 0`; each later step tries
/// `t + Δt`, halving `Δt` on Newton failure and growing it by 1.5 after fast
/// convergence, within `[dt_min, dt_max]`. Every accepted state gets a
/// central-difference check of the Jacobian along a random direction.
pub fn continuation_run(problem: &Problem) -> std::result::Result<RunOutput, RunFailure> {
    let tol = problem.spec.tolerances;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(problem.spec.check_seed);
    let mut history = Vec::new();
    let fail = |stage, t, error, history: &Vec<StepRecord>| RunFailure {
        stage,
        t,
        error,
        history: history.clone(),
    };

    let mut state = problem
        .initial_state()
        .map_err(|e| fail(FailureStage::Seed, 0.0, e, &history))?;
    let (mut state_next, report) =
        newton_solve(&state, problem).map_err(|e| fail(FailureStage::Newton, 0.0, e, &history))?;
    let mut checks = Vec::new();
    let check = jacobian_consistency(&state_next, problem, &mut rng)
        .map_err(|e| fail(FailureStage::Newton, 0.0, e, &history))?;
    checks.push(check);
    history.push(record(0.0, 0.0, &report, Some(check.relative_error)));
    state = {
        state_next.history.clone_from(&history);
        state_next
    };

    let mut dt = tol.dt_initial;
    while state.t < 1.0 {
        let t_next = (state.t + dt).min(1.0);
        let mut trial = state.clone();
        trial.t = t_next;
        match newton_solve(&trial, problem) {
            Ok((next, report)) => {
                let check = jacobian_consistency(&next, problem, &mut rng)
                    .map_err(|e| fail(FailureStage::Newton, t_next, e, &history))?;
                checks.push(check);
                history.push(record(t_next, t_next - state.t, &report, Some(check.relative_error)));
                state = next;
                if report.iterations <= tol.fast_iterations {
                    dt = (dt * 1.5).min(tol.dt_max);
                }
            }
            Err(e) => {
                history.push(StepRecord {
                    t: t_next,
                    dt: t_next - state.t,
                    accepted: false,
                    newton_iterations: 0,
                    residual_norms: Vec::new(),
                    min_eigenvalue: f64::NAN,
                    jacobian_check: None,
                    failure: Some(e.to_string()),
                });
                dt *= 0.5;
                if dt < tol.dt_min {
                    return Err(fail(
                        FailureStage::Continuation,
                        state.t,
                        Error::ContinuationStall { t: state.t, step: dt },
                        &history,
                    ));
                }
            }
        }
    }
    state.history = history;
    state.status = Status::Converged;
    let final_residual = residual(&state, problem)
        .map(|r| r.max_abs())
        .map_err(|e| fail(FailureStage::Newton, 1.0, e, &state.history))?;
    Ok(RunOutput {
        state,
        final_residual,
        jacobian_checks: checks,
    })
}
