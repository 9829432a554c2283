//! Post-hoc diagnostics on computed solutions: obliqueness of the boundary
//! operator, the Urbas-type boundary identity, sup bounds on `u` and `D²u`,
//! and the distance between the image of the source boundary and the target
//! boundary.
//!
//! Nothing here feeds back into the solver; a failing diagnostic is reported,
//! never corrected.

use nalgebra::{DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{boundary_frame, DomainSpec};
use crate::solver::{node_data, GridField, NodeData, NodeKind, Problem};

/// Smallest `|λ(w)|`, relative to `max(1, ‖w‖)`, for which `w` is treated
/// as invertible.
const SINGULAR_W_TOL: f64 = 1e-10;

/// Oblique boundary quantities at one boundary node.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryNode {
    /// Grid index of the node.
    pub node: usize,
    pub theta: f64,
    pub x: [f64; 2],
    /// Image `T_u(x)`.
    pub y: [f64; 2],
    /// `β_k = φ⁺_i c^{i,k}` evaluated at `(x, T_u(x))`.
    pub beta: [f64; 2],
    /// Outer unit normal of the source domain at `x`.
    pub gamma: [f64; 2],
    /// `β·γ`.
    pub beta_dot_gamma: f64,
    /// `(w β)·γ`; `None` where `w` is singular.
    pub chi: Option<f64>,
    pub min_eig_w: f64,
}

/// Obliqueness of the boundary operator over all boundary nodes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObliquenessReport {
    /// Minimum of `β·γ`, recorded even when negative.
    pub min: f64,
    pub nodes: Vec<BoundaryNode>,
    /// Boundary nodes at which `w` is singular.
    pub singular_w: Vec<usize>,
}

/// Residual of the Urbas-type identity at one boundary node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UrbasNode {
    pub node: usize,
    /// `(β·γ)²`.
    pub lhs: f64,
    /// `(w^{ij} γ_i γ_j)(w_{kl} β_k β_l)`.
    pub rhs: f64,
    /// `|lhs - rhs| / |lhs|`.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UrbasReport {
    pub max_residual: f64,
    pub nodes: Vec<UrbasNode>,
}

/// Extremes of `u`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct C0Bounds {
    pub sup: f64,
    pub inf: f64,
    pub sup_abs: f64,
}

/// Sup of the spectral norm of `D²u` in the interior and on the boundary,
/// and the ratio `interior / (1 + boundary)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct C2Bounds {
    pub interior: f64,
    pub boundary: f64,
    pub ratio: f64,
}

/// Limits the report is compared against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Hard limit: `β·γ` must exceed this at every boundary node.
    pub obliqueness_min: f64,
    /// Soft limit on the Urbas residual.
    pub urbas_residual_max: f64,
    /// Soft limit on the image Hausdorff distance, in units of `h`.
    pub hausdorff_factor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            obliqueness_min: 0.0,
            urbas_residual_max: 1.0,
            hausdorff_factor: 5.0,
        }
    }
}

/// One threshold comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
    /// Hard checks decide the exit status of a solve.
    pub hard: bool,
}

/// Per-node values exported as a CSV table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeRow {
    pub node: usize,
    pub r_index: usize,
    pub theta_index: usize,
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub u_x: f64,
    pub u_y: f64,
    pub d2u_norm: f64,
    pub lambda_min_w: f64,
}

/// All diagnostics of one computed field.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub grid: [usize; 2],
    pub h: f64,
    pub obliqueness_min: f64,
    /// `None` when `w` is singular at some boundary node.
    pub urbas_residual_max: Option<f64>,
    pub c0_bounds: C0Bounds,
    pub c2_bounds: C2Bounds,
    pub image_hausdorff: f64,
    pub min_eig_w: f64,
    pub checks: Vec<Check>,
    /// Per-boundary-node table, exported separately as CSV.
    #[serde(skip)]
    pub boundary: Vec<BoundaryNode>,
    /// Per-node table, exported separately as CSV.
    #[serde(skip)]
    pub nodes: Vec<NodeRow>,
}

impl DiagnosticsReport {
    /// True when every hard check passes.
    pub fn hard_pass(&self) -> bool {
        self.checks.iter().filter(|c| c.hard).all(|c| c.pass)
    }
}

/// Relative change of each bound between consecutive refinement levels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefinementDrift {
    pub levels: Vec<f64>,
    pub sup_u: Vec<f64>,
    pub inf_u: Vec<f64>,
    pub c2_interior: Vec<f64>,
    pub c2_boundary: Vec<f64>,
    /// Largest entry of the four drift sequences.
    pub max: f64,
    /// Ratios of consecutive Urbas residuals.
    pub urbas_ratios: Vec<f64>,
}

/// Both sides of the Urbas-type identity for given `β`, `γ` and `w`.
///
/// Returns `None` when `w` is singular.
pub fn urbas_terms(beta: &Vector2<f64>, gamma: &Vector2<f64>, w: &Matrix2<f64>) -> Option<(f64, f64)> {
    if is_singular(w) {
        return None;
    }
    let w_inv = w.try_inverse()?;
    let lhs = beta.dot(gamma).powi(2);
    let rhs = gamma.dot(&(w_inv * gamma)) * beta.dot(&(w * beta));
    Some((lhs, rhs))
}

fn is_singular(w: &Matrix2<f64>) -> bool {
    let eig = w.symmetric_eigenvalues();
    !(eig.amin() > SINGULAR_W_TOL * eig.amax().max(1.0))
}

fn boundary_quantities(problem: &Problem, data: &[NodeData]) -> Result<ObliquenessReport> {
    let grid = &problem.grid;
    let spec = &problem.spec;
    let mut nodes = Vec::new();
    let mut singular_w = Vec::new();
    for k in grid.boundary_indices() {
        let node = grid.nodes[k];
        let d = &data[k];
        let theta = grid.theta(node.j);
        let gamma = boundary_frame(&spec.source, theta).normal;
        let x = DVector::from_column_slice(node.x.as_slice());
        let y = DVector::from_column_slice(d.y.as_slice());
        let (_, inv) = spec.model.mixed_inverse(&x, &y)?;
        let (_, grad_phi) = spec.target.defining_function(&d.y);
        let beta = Vector2::new(
            grad_phi[0] * inv[(0, 0)] + grad_phi[1] * inv[(1, 0)],
            grad_phi[0] * inv[(0, 1)] + grad_phi[1] * inv[(1, 1)],
        );
        let singular = is_singular(&d.w);
        if singular {
            singular_w.push(k);
        }
        nodes.push(BoundaryNode {
            node: k,
            theta,
            x: [node.x.x, node.x.y],
            y: [d.y.x, d.y.y],
            beta: [beta.x, beta.y],
            gamma: [gamma.x, gamma.y],
            beta_dot_gamma: beta.dot(&gamma),
            chi: (!singular).then(|| (d.w * beta).dot(&gamma)),
            min_eig_w: d.min_eig_w,
        });
    }
    let min = nodes.iter().map(|n| n.beta_dot_gamma).fold(f64::INFINITY, f64::min);
    Ok(ObliquenessReport { min, nodes, singular_w })
}

/// `β·γ` at every boundary node and its minimum.
pub fn obliqueness_report(u: &GridField, problem: &Problem) -> Result<ObliquenessReport> {
    let data = node_data(problem, u)?;
    boundary_quantities(problem, &data)
}

fn urbas_from(report: &ObliquenessReport, data: &[NodeData]) -> Result<UrbasReport> {
    let mut nodes = Vec::with_capacity(report.nodes.len());
    for b in &report.nodes {
        let beta = Vector2::from(b.beta);
        let gamma = Vector2::from(b.gamma);
        let (lhs, rhs) = urbas_terms(&beta, &gamma, &data[b.node].w).ok_or(Error::SingularW(b.node))?;
        let residual = (lhs - rhs).abs() / lhs.abs().max(f64::MIN_POSITIVE);
        nodes.push(UrbasNode {
            node: b.node,
            lhs,
            rhs,
            residual,
        });
    }
    let max_residual = nodes.iter().map(|n| n.residual).fold(0.0, f64::max);
    Ok(UrbasReport { max_residual, nodes })
}

/// Evaluates both sides of the Urbas-type identity with the discrete `D²u`
/// at every boundary node.
pub fn urbas_identity_check(u: &GridField, problem: &Problem) -> Result<UrbasReport> {
    let data = node_data(problem, u)?;
    let report = boundary_quantities(problem, &data)?;
    urbas_from(&report, &data)
}

/// Distance from `p` to the closed polyline through `pts`.
fn distance_to_polyline(p: &Vector2<f64>, pts: &[Vector2<f64>]) -> f64 {
    let n = pts.len();
    (0..n)
        .map(|k| {
            let a = pts[k];
            let b = pts[(k + 1) % n];
            let ab = b - a;
            let len2 = ab.norm_squared();
            let s = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
            (p - (a + s * ab)).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric Hausdorff distance between two closed polylines.
pub fn polyline_hausdorff(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> f64 {
    let ab = a.iter().map(|p| distance_to_polyline(p, b)).fold(0.0, f64::max);
    let ba = b.iter().map(|p| distance_to_polyline(p, a)).fold(0.0, f64::max);
    ab.max(ba)
}

/// Hausdorff distance between the images of the source boundary nodes and
/// the target boundary.
pub fn image_hausdorff(images: &[Vector2<f64>], target: &DomainSpec) -> f64 {
    let curve: Vec<_> = target.boundary_nodes().into_iter().map(|(_, p)| p).collect();
    polyline_hausdorff(images, &curve)
}

/// Computes every diagnostic of `u` and compares against `thresholds`.
///
/// A singular `w` at a boundary node leaves the Urbas residual unset and
/// fails its check; it is not an error.
pub fn bounds_report(u: &GridField, problem: &Problem, thresholds: &Thresholds) -> Result<DiagnosticsReport> {
    let grid = &problem.grid;
    let data = node_data(problem, u)?;
    let oblique = boundary_quantities(problem, &data)?;
    let urbas = urbas_from(&oblique, &data).ok().map(|r| r.max_residual);

    let sup = u.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inf = u.values.iter().copied().fold(f64::INFINITY, f64::min);
    let c0 = C0Bounds {
        sup,
        inf,
        sup_abs: sup.abs().max(inf.abs()),
    };

    let mut interior = 0.0f64;
    let mut boundary = 0.0f64;
    let mut nodes = Vec::with_capacity(grid.len());
    for (k, (node, d)) in grid.nodes.iter().zip(&data).enumerate() {
        let norm = d.d2u.symmetric_eigenvalues().amax();
        if node.kind == NodeKind::Boundary {
            boundary = boundary.max(norm);
        } else {
            interior = interior.max(norm);
        }
        nodes.push(NodeRow {
            node: k,
            r_index: node.i,
            theta_index: node.j,
            x: node.x.x,
            y: node.x.y,
            u: u.values[k],
            u_x: d.du.x,
            u_y: d.du.y,
            d2u_norm: norm,
            lambda_min_w: d.min_eig_w,
        });
    }
    let c2 = C2Bounds {
        interior,
        boundary,
        ratio: interior / (1.0 + boundary),
    };

    let images: Vec<_> = oblique.nodes.iter().map(|b| Vector2::from(b.y)).collect();
    let hausdorff = image_hausdorff(&images, &problem.spec.target);
    let min_eig_w = data.iter().map(|d| d.min_eig_w).fold(f64::INFINITY, f64::min);

    let checks = vec![
        Check {
            name: "admissibility".into(),
            value: min_eig_w,
            limit: problem.spec.tolerances.admissibility_floor,
            pass: min_eig_w >= problem.spec.tolerances.admissibility_floor,
            hard: true,
        },
        Check {
            name: "obliqueness".into(),
            value: oblique.min,
            limit: thresholds.obliqueness_min,
            pass: oblique.min > thresholds.obliqueness_min,
            hard: true,
        },
        Check {
            name: "urbas-identity".into(),
            value: urbas.unwrap_or(f64::NAN),
            limit: thresholds.urbas_residual_max,
            pass: urbas.is_some_and(|r| r <= thresholds.urbas_residual_max),
            hard: false,
        },
        Check {
            name: "image-hausdorff".into(),
            value: hausdorff,
            limit: thresholds.hausdorff_factor * grid.h,
            pass: hausdorff <= thresholds.hausdorff_factor * grid.h,
            hard: false,
        },
    ];

    Ok(DiagnosticsReport {
        grid: [grid.size.n_r, grid.size.n_theta],
        h: grid.h,
        obliqueness_min: oblique.min,
        urbas_residual_max: urbas,
        c0_bounds: c0,
        c2_bounds: c2,
        image_hausdorff: hausdorff,
        min_eig_w,
        checks,
        boundary: oblique.nodes,
        nodes,
    })
}

fn relative_changes(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let v: Vec<f64> = values.collect();
    v.windows(2)
        .map(|w| (w[1] - w[0]).abs() / w[0].abs().max(f64::MIN_POSITIVE))
        .collect()
}

/// Relative drift of the bounds across reports ordered from coarse to fine.
pub fn refinement_drift(reports: &[DiagnosticsReport]) -> RefinementDrift {
    let sup_u = relative_changes(reports.iter().map(|r| r.c0_bounds.sup));
    let inf_u = relative_changes(reports.iter().map(|r| r.c0_bounds.inf));
    let c2_interior = relative_changes(reports.iter().map(|r| r.c2_bounds.interior));
    let c2_boundary = relative_changes(reports.iter().map(|r| r.c2_bounds.boundary));
    let max = sup_u
        .iter()
        .chain(&inf_u)
        .chain(&c2_interior)
        .chain(&c2_boundary)
        .copied()
        .fold(0.0, f64::max);
    let urbas: Vec<f64> = reports.iter().map(|r| r.urbas_residual_max.unwrap_or(f64::NAN)).collect();
    RefinementDrift {
        levels: reports.iter().map(|r| r.h).collect(),
        sup_u,
        inf_u,
        c2_interior,
        c2_boundary,
        max,
        urbas_ratios: urbas.windows(2).map(|w| w[1] / w[0]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::CostModel;
    use crate::solver::{BExpr, GridSize, ProblemSpec, SeedKind, Tolerances};
    use crate::symfun::QuotientParams;

    fn problem(target: DomainSpec, size: GridSize) -> Problem {
        Problem::new(ProblemSpec {
            model: CostModel::quadratic(2, 4.0),
            source: DomainSpec::disc([0.0, 0.0], 1.0).unwrap(),
            target,
            rhs: BExpr::ExpZ {},
            quotient: QuotientParams::new(2, 1).unwrap(),
            grid: size,
            tolerances: Tolerances::default(),
            seed: SeedKind::default(),
            check_seed: 1,
        })
        .unwrap()
    }

    fn disc() -> DomainSpec {
        DomainSpec::disc([0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn manufactured_obliqueness_is_two() {
        let p = problem(disc(), GridSize::new(17, 32));
        let u = GridField::from_fn(&p.grid, |x| x.norm_squared());
        let r = obliqueness_report(&u, &p).unwrap();
        assert_eq!(r.nodes.len(), 32);
        assert!(r.singular_w.is_empty());
        for b in &r.nodes {
            assert!((b.beta[0] - 2.0 * b.x[0]).abs() < 1e-10 && (b.beta[1] - 2.0 * b.x[1]).abs() < 1e-10);
            assert!((b.beta_dot_gamma - 2.0).abs() < 1e-10);
            assert!((b.chi.unwrap() - 2.0).abs() < 1e-10);
        }
        assert!((r.min - 2.0).abs() < 1e-10);
    }

    #[test]
    fn identity_on_boundary_gives_gradient_norm() {
        // Scaling the defining function by the target radius: `u = |x|²` maps
        // the unit disc onto itself by `-x`, and `|∇φ⁺| = 2/R` for a disc of
        // radius R, here R = 1.
        let p = problem(disc(), GridSize::new(9, 16));
        let u = GridField::from_fn(&p.grid, |x| x.norm_squared());
        let r = obliqueness_report(&u, &p).unwrap();
        for b in &r.nodes {
            let (_, g) = p.spec.target.defining_function(&Vector2::from(b.y));
            assert!((b.beta_dot_gamma - g.norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_w_is_flagged_not_fatal() {
        let p = problem(disc(), GridSize::new(9, 16));
        // `A = I` for the quadratic cost, so this field has `w = 0`.
        let u = GridField::from_fn(&p.grid, |x| 0.5 * x.norm_squared());
        let r = obliqueness_report(&u, &p).unwrap();
        assert_eq!(r.singular_w.len(), r.nodes.len());
        assert!(r.nodes.iter().all(|b| b.chi.is_none()));
        assert!(matches!(urbas_identity_check(&u, &p), Err(Error::SingularW(_))));
        let d = bounds_report(&u, &p, &Thresholds::default()).unwrap();
        assert!(d.urbas_residual_max.is_none());
        assert!(!d.checks.iter().find(|c| c.name == "urbas-identity").unwrap().pass);
    }

    #[test]
    fn urbas_terms_closed_form() {
        let w = Matrix2::identity();
        for k in 0..16 {
            let th = 0.4 * k as f64;
            let x = Vector2::new(th.cos(), th.sin());
            let (lhs, rhs) = urbas_terms(&(2.0 * x), &x, &w).unwrap();
            assert!((lhs - 4.0).abs() < 1e-12);
            assert!((lhs - rhs).abs() <= 1e-10 * lhs);
        }
        assert!(urbas_terms(&Vector2::x(), &Vector2::x(), &Matrix2::new(1.0, 0.0, 0.0, 0.0)).is_none());
    }

    #[test]
    fn manufactured_urbas_residual_is_small() {
        let p = problem(disc(), GridSize::new(17, 32));
        let u = GridField::from_fn(&p.grid, |x| x.norm_squared());
        let r = urbas_identity_check(&u, &p).unwrap();
        assert!(r.max_residual <= 5.0 * p.grid.h, "{}", r.max_residual);
    }

    #[test]
    fn urbas_residual_on_ellipse_exact_solution_shrinks() {
        // `u = x² + 0.8 y²` satisfies the boundary condition for the
        // (1, 0.6) ellipse exactly; the residual is discretisation error.
        let target = DomainSpec::ellipse([0.0, 0.0], 1.0, 0.6).unwrap();
        let mut prev = f64::INFINITY;
        for size in [GridSize::new(17, 32), GridSize::new(33, 64), GridSize::new(65, 128)] {
            let p = problem(target.clone(), size);
            let u = GridField::from_fn(&p.grid, |x| x.x * x.x + 0.8 * x.y * x.y);
            let r = urbas_identity_check(&u, &p).unwrap().max_residual;
            assert!(r < 1e-9 || r <= 0.6 * prev, "{r:e} after {prev:e}");
            prev = r;
        }
    }

    #[test]
    fn manufactured_bounds() {
        let p = problem(disc(), GridSize::new(17, 32));
        let u = GridField::from_fn(&p.grid, |x| x.norm_squared());
        let d = bounds_report(&u, &p, &Thresholds::default()).unwrap();
        assert!((d.c2_bounds.interior - 2.0).abs() < 1e-8);
        assert!((d.c2_bounds.boundary - 2.0).abs() < 1e-8);
        assert!((d.c2_bounds.ratio - 2.0 / 3.0).abs() < 1e-8);
        assert!((d.c0_bounds.sup - 1.0).abs() < 1e-12 && d.c0_bounds.inf.abs() < 1e-12);
        assert!(d.image_hausdorff <= p.grid.h, "{} vs {}", d.image_hausdorff, p.grid.h);
        assert!(d.hard_pass());
        assert!(d.checks.iter().all(|c| c.pass));
        assert_eq!(d.nodes.len(), p.grid.len());
    }

    #[test]
    fn manufactured_bounds_are_stable_under_refinement() {
        let reports: Vec<_> = [GridSize::new(9, 16), GridSize::new(17, 32), GridSize::new(33, 64)]
            .into_iter()
            .map(|s| {
                let p = problem(disc(), s);
                let u = GridField::from_fn(&p.grid, |x| x.norm_squared());
                bounds_report(&u, &p, &Thresholds::default()).unwrap()
            })
            .collect();
        let drift = refinement_drift(&reports);
        assert_eq!(drift.sup_u.len(), 2);
        assert!(drift.max <= 0.1, "{drift:?}");
    }

    #[test]
    fn hausdorff_of_offset_circles() {
        let a: Vec<_> = (0..200)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / 200.0;
                Vector2::new(t.cos(), t.sin())
            })
            .collect();
        let b: Vec<_> = a.iter().map(|p| p * 1.1).collect();
        assert!((polyline_hausdorff(&a, &b) - 0.1).abs() < 1e-3);
        assert_eq!(polyline_hausdorff(&a, &a), 0.0);
    }
}
