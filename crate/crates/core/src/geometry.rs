//! Star-shaped planar domains `x = center + ρ(θ)(cos θ, sin θ)`, their
//! boundary frames, signed distance, and the relative c-convexity and
//! barrier-condition checks.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{self, CostModel, Point};
use crate::error::{Error, Result};

/// Radial profile `ρ(θ)` of a star-shaped boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Shape {
    /// Circle of the given radius.
    Disc { radius: f64 },
    /// Axis-aligned ellipse with semi-axes `a` (along x) and `b` (along y).
    Ellipse { a: f64, b: f64 },
    /// `ρ = r0 + Σ_k cos[k-1]·cos kθ + sin[k-1]·sin kθ`.
    RadialFourier {
        r0: f64,
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
    /// `ρ(θ) = scale · base(θ + phase)`.
    Transformed {
        base: Box<Shape>,
        scale: f64,
        phase: f64,
    },
    /// `ρ = (1 - t)·from + t·to`.
    Blend {
        from: Box<Shape>,
        to: Box<Shape>,
        t: f64,
    },
}

impl Shape {
    /// `(ρ, ρ', ρ'')` at `theta`.
    pub fn radial(&self, theta: f64) -> (f64, f64, f64) {
        match self {
            Shape::Disc { radius } => (*radius, 0.0, 0.0),
            Shape::Ellipse { a, b } => {
                let (s, c) = theta.sin_cos();
                let (s2, c2) = (2.0 * theta).sin_cos();
                let g = b * b * c * c + a * a * s * s;
                let dg = (a * a - b * b) * s2;
                let ddg = 2.0 * (a * a - b * b) * c2;
                let ab = a * b;
                let rho = ab * g.powf(-0.5);
                let d1 = -0.5 * ab * g.powf(-1.5) * dg;
                let d2 = ab * (0.75 * g.powf(-2.5) * dg * dg - 0.5 * g.powf(-1.5) * ddg);
                (rho, d1, d2)
            }
            Shape::RadialFourier { r0, cos, sin } => {
                let (mut r, mut d1, mut d2) = (*r0, 0.0, 0.0);
                for (k, a) in cos.iter().enumerate() {
                    let kf = (k + 1) as f64;
                    let (s, c) = (kf * theta).sin_cos();
                    r += a * c;
                    d1 -= a * kf * s;
                    d2 -= a * kf * kf * c;
                }
                for (k, b) in sin.iter().enumerate() {
                    let kf = (k + 1) as f64;
                    let (s, c) = (kf * theta).sin_cos();
                    r += b * s;
                    d1 += b * kf * c;
                    d2 -= b * kf * kf * s;
                }
                (r, d1, d2)
            }
            Shape::Transformed { base, scale, phase } => {
                let (r, d1, d2) = base.radial(theta + phase);
                (scale * r, scale * d1, scale * d2)
            }
            Shape::Blend { from, to, t } => {
                let a = from.radial(theta);
                let b = to.radial(theta);
                (
                    (1.0 - t) * a.0 + t * b.0,
                    (1.0 - t) * a.1 + t * b.1,
                    (1.0 - t) * a.2 + t * b.2,
                )
            }
        }
    }
}

/// Default number of boundary nodes.
pub const DEFAULT_RESOLUTION: usize = 512;

/// A star-shaped domain with its boundary sampling resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub center: [f64; 2],
    pub shape: Shape,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

/// Boundary point with unit outward normal `γ`, unit tangent `τ`
/// (counter-clockwise) and signed curvature `κ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub point: Vector2<f64>,
    pub normal: Vector2<f64>,
    pub tangent: Vector2<f64>,
    pub curvature: f64,
}

/// Signed distance with the outward normal at the foot point, which is the
/// gradient of the distance away from the medial axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Distance {
    pub value: f64,
    pub gradient: Vector2<f64>,
    pub foot_theta: f64,
}

impl DomainSpec {
    /// Validates that `ρ` is finite and bounded below by a positive constant
    /// on the boundary nodes and that the second differences are bounded.
    pub fn new(center: [f64; 2], shape: Shape, resolution: usize) -> Result<Self> {
        let dom = Self {
            center,
            shape,
            resolution,
        };
        dom.validate()?;
        Ok(dom)
    }

    pub fn disc(center: [f64; 2], radius: f64) -> Result<Self> {
        Self::new(center, Shape::Disc { radius }, DEFAULT_RESOLUTION)
    }

    pub fn ellipse(center: [f64; 2], a: f64, b: f64) -> Result<Self> {
        Self::new(center, Shape::Ellipse { a, b }, DEFAULT_RESOLUTION)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 {
            return Err(Error::InvalidProblem(format!(
                "boundary resolution {} below 8",
                self.resolution
            )));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidProblem("domain center is not finite".into()));
        }
        let dth = TAU / self.resolution as f64;
        for k in 0..self.resolution {
            let (r, d1, d2) = self.shape.radial(k as f64 * dth);
            if !(r > 0.0) || !d1.is_finite() || !d2.is_finite() {
                return Err(Error::InvalidProblem(format!(
                    "radial function must be positive and finite (ρ = {r} at node {k})"
                )));
            }
        }
        Ok(())
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(self.center[0], self.center[1])
    }

    pub fn radial(&self, theta: f64) -> (f64, f64, f64) {
        self.shape.radial(theta)
    }

    pub fn rho(&self, theta: f64) -> f64 {
        self.shape.radial(theta).0
    }

    /// Minimum and maximum of `ρ` over the boundary nodes.
    pub fn rho_range(&self) -> (f64, f64) {
        let dth = TAU / self.resolution as f64;
        (0..self.resolution).fold((f64::INFINITY, 0.0f64), |(lo, hi), k| {
            let r = self.rho(k as f64 * dth);
            (lo.min(r), hi.max(r))
        })
    }

    pub fn point(&self, theta: f64) -> Vector2<f64> {
        let (s, c) = theta.sin_cos();
        self.center() + self.rho(theta) * Vector2::new(c, s)
    }

    /// Spacing between consecutive boundary nodes (maximum over the curve).
    pub fn node_spacing(&self) -> f64 {
        let dth = TAU / self.resolution as f64;
        (0..self.resolution)
            .map(|k| (self.point((k + 1) as f64 * dth) - self.point(k as f64 * dth)).norm())
            .fold(0.0, f64::max)
    }

    pub fn boundary_nodes(&self) -> Vec<(f64, Vector2<f64>)> {
        let dth = TAU / self.resolution as f64;
        (0..self.resolution)
            .map(|k| {
                let th = k as f64 * dth;
                (th, self.point(th))
            })
            .collect()
    }

    /// `P'(θ)` and `P''(θ)`.
    fn derivatives(&self, theta: f64) -> (Vector2<f64>, Vector2<f64>) {
        let (r, d1, d2) = self.radial(theta);
        let (s, c) = theta.sin_cos();
        let e = Vector2::new(c, s);
        let ep = Vector2::new(-s, c);
        (d1 * e + r * ep, (d2 - r) * e + 2.0 * d1 * ep)
    }

    /// Polar angle of `x` about the center.
    pub fn angle_of(&self, x: &Vector2<f64>) -> f64 {
        let d = x - self.center();
        d.y.atan2(d.x).rem_euclid(TAU)
    }

    /// Star-shaped containment: `|x - c| < ρ(θ_x)`.
    pub fn contains(&self, x: &Vector2<f64>) -> bool {
        (x - self.center()).norm() < self.rho(self.angle_of(x))
    }

    /// Radial quadratic defining function `φ(y) = |y - c|² / ρ(θ_y)² - 1`
    /// and its gradient. Negative inside, zero on the boundary, with the
    /// gradient along the outer normal there.
    pub fn defining_function(&self, y: &Vector2<f64>) -> (f64, Vector2<f64>) {
        let d = y - self.center();
        let r2 = d.norm_squared();
        let theta = d.y.atan2(d.x);
        let (rho, rho_p, _) = self.radial(theta);
        let (s, c) = theta.sin_cos();
        let e_r = Vector2::new(c, s);
        let e_t = Vector2::new(-s, c);
        let r = r2.sqrt();
        let value = r2 / (rho * rho) - 1.0;
        let grad = (2.0 * r / (rho * rho)) * (e_r - (rho_p / rho) * e_t);
        (value, grad)
    }

    /// Uniform-in-angle interior sample with area-weighted radius.
    pub fn sample_interior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector2<f64> {
        let th = TAU * rng.random::<f64>();
        let r = self.rho(th) * rng.random::<f64>().sqrt();
        self.center() + r * Vector2::new(th.cos(), th.sin())
    }

    /// Center plus `n_radial - 1` interior rings of `n_angular` points.
    pub fn interior_grid(&self, n_radial: usize, n_angular: usize) -> Vec<Vector2<f64>> {
        let mut out = vec![self.center()];
        for i in 1..n_radial {
            let s = i as f64 / n_radial as f64;
            for j in 0..n_angular {
                let th = TAU * j as f64 / n_angular as f64;
                out.push(self.center() + s * self.rho(th) * Vector2::new(th.cos(), th.sin()));
            }
        }
        out
    }

    /// Axis-aligned box containing the domain, padded by `pad`.
    pub fn bounding_box(&self, pad: f64) -> cost::BoundingBox {
        let (_, hi) = self.rho_range();
        let half = 1.05 * hi + pad;
        cost::BoundingBox::around(&self.center, half)
    }
}

/// Boundary point, outward normal, tangent and curvature at `theta`.
pub fn boundary_frame(dom: &DomainSpec, theta: f64) -> Frame {
    let (p1, p2) = dom.derivatives(theta);
    let speed = p1.norm();
    let tangent = p1 / speed;
    let normal = Vector2::new(tangent.y, -tangent.x);
    let curvature = (p1.x * p2.y - p1.y * p2.x) / (speed * speed * speed);
    Frame {
        point: dom.point(theta),
        normal,
        tangent,
        curvature,
    }
}

/// Distance to the boundary, negative inside.
///
/// The nearest boundary node is refined by Newton iterations on
/// `(P(θ) - x)·P'(θ) = 0` within one node spacing, so the result is exact
/// up to roundoff for smooth boundaries away from the medial axis.
pub fn signed_distance(dom: &DomainSpec, x: &Vector2<f64>) -> Distance {
    let dth = TAU / dom.resolution as f64;
    let mut best = (0.0, f64::INFINITY);
    for k in 0..dom.resolution {
        let th = k as f64 * dth;
        let d2 = (dom.point(th) - x).norm_squared();
        if d2 < best.1 {
            best = (th, d2);
        }
    }
    let th0 = best.0;
    let mut th = th0;
    for _ in 0..20 {
        let (p1, p2) = dom.derivatives(th);
        let diff = dom.point(th) - x;
        let g = diff.dot(&p1);
        let dg = p1.norm_squared() + diff.dot(&p2);
        if !(dg > 0.0) {
            break;
        }
        let step = g / dg;
        let next = (th - step).clamp(th0 - dth, th0 + dth);
        let converged = (next - th).abs() < 1e-15;
        th = next;
        if converged {
            break;
        }
    }
    let foot = dom.point(th);
    let mut dist = (foot - x).norm();
    if dist * dist > best.1 {
        th = th0;
        dist = best.1.sqrt();
    }
    let sign = if dom.contains(x) { -1.0 } else { 1.0 };
    let frame = boundary_frame(dom, th);
    Distance {
        value: sign * dist,
        gradient: frame.normal,
        foot_theta: th.rem_euclid(TAU),
    }
}

/// Coefficients of the quadratic barrier `φ = a d² - b d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierParams {
    a: f64,
    b: f64,
}

impl BarrierParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::InvalidProblem(format!(
                "barrier coefficients must be positive (a = {a}, b = {b})"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn value(&self, d: f64) -> f64 {
        self.a * d * d - self.b * d
    }

    pub fn derivative(&self, d: f64) -> f64 {
        2.0 * self.a * d - self.b
    }

    /// Barrier of the signed distance of `x` to `dom`.
    pub fn at(&self, dom: &DomainSpec, x: &Vector2<f64>) -> f64 {
        self.value(signed_distance(dom, x).value)
    }
}

/// Which cost the convexity form is taken relative to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvexityRole {
    /// `∂domA` in the `x` slot of `c`.
    C,
    /// `∂domA` in the `x` slot of `c*(x, y) = c(y, x)`.
    CStar,
}

/// Minimum of the relative c-convexity form and where it is attained.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub delta0: f64,
    pub witness_theta: f64,
    pub witness_x: [f64; 2],
    pub witness_y: [f64; 2],
}

/// Interior rings used for the `y` samples of [`relative_c_convexity`].
const CONVEXITY_Y_GRID: (usize, usize) = (6, 16);

/// `δ₀ = min [D_iγ_j - c^{l,k} c_{ij,l} γ_k] τ_i τ_j` over boundary nodes
/// `x ∈ ∂domA` and interior grid points `y ∈ domB`.
///
/// On the boundary `D_iγ_j τ_i τ_j` is the curvature.
pub fn relative_c_convexity(
    dom_a: &DomainSpec,
    dom_b: &DomainSpec,
    model: &CostModel,
    role: ConvexityRole,
) -> Result<ConvexityReport> {
    let dual;
    let m = match role {
        ConvexityRole::C => model,
        ConvexityRole::CStar => {
            dual = model.dual();
            &dual
        }
    };
    let ys = dom_b.interior_grid(CONVEXITY_Y_GRID.0, CONVEXITY_Y_GRID.1);
    let mut report = ConvexityReport {
        delta0: f64::INFINITY,
        witness_theta: 0.0,
        witness_x: [0.0; 2],
        witness_y: [0.0; 2],
    };
    for (theta, _) in dom_a.boundary_nodes() {
        let fr = boundary_frame(dom_a, theta);
        let x = DVector::from_column_slice(fr.point.as_slice());
        for yv in &ys {
            let y = DVector::from_column_slice(yv.as_slice());
            let (_, inv) = m.mixed_inverse(&x, &y)?;
            let t3 = m.cost.d3_xxy(&x, &y);
            let mut correction = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    for l in 0..2 {
                        for k in 0..2 {
                            correction += inv[(l, k)]
                                * t3.get(i, j, l)
                                * fr.normal[k]
                                * fr.tangent[i]
                                * fr.tangent[j];
                        }
                    }
                }
            }
            let form = fr.curvature - correction;
            if form < report.delta0 {
                report = ConvexityReport {
                    delta0: form,
                    witness_theta: theta,
                    witness_x: [fr.point.x, fr.point.y],
                    witness_y: [yv.x, yv.y],
                };
            }
        }
    }
    Ok(report)
}

/// A scalar field on the plane, evaluated pointwise.
pub trait ScalarField {
    fn value(&self, x: &Vector2<f64>) -> f64;
}

impl<F: Fn(&Vector2<f64>) -> f64> ScalarField for F {
    fn value(&self, x: &Vector2<f64>) -> f64 {
        self(x)
    }
}

/// Finite-difference step for the derivatives of the barrier field.
const BARRIER_FD_STEP: f64 = 1e-4;

/// Minimum, over sampled `(x, p)` and unit `ξ`, of
/// `[D_ij φ̃ - D_{p_k}A_ij D_k φ̃] ξ_i ξ_j`, with `x` in `dom` and
/// `p = c_x(x, y)` for `y` in `dom_target`.
pub fn barrier_condition_check<F: ScalarField + ?Sized, R: Rng + ?Sized>(
    dom: &DomainSpec,
    dom_target: &DomainSpec,
    model: &CostModel,
    phi_tilde: &F,
    sample_budget: usize,
    rng: &mut R,
) -> Result<f64> {
    if sample_budget == 0 {
        return Err(Error::EmptySampleSet);
    }
    let h = BARRIER_FD_STEP;
    let mut delta = f64::INFINITY;
    for _ in 0..sample_budget {
        let xv = dom.sample_interior(rng);
        let yv = dom_target.sample_interior(rng);
        let f = |dx: f64, dy: f64| phi_tilde.value(&(xv + Vector2::new(dx, dy)));
        let f0 = f(0.0, 0.0);
        let grad = [(f(h, 0.0) - f(-h, 0.0)) / (2.0 * h), (f(0.0, h) - f(0.0, -h)) / (2.0 * h)];
        let hxx = (f(h, 0.0) - 2.0 * f0 + f(-h, 0.0)) / (h * h);
        let hyy = (f(0.0, h) - 2.0 * f0 + f(0.0, -h)) / (h * h);
        let hxy = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
        let x = DVector::from_column_slice(xv.as_slice());
        let y = DVector::from_column_slice(yv.as_slice());
        let dpa = cost::a_matrix_dp(model, &x, &y)?;
        let mut mat = DMatrix::from_row_slice(2, 2, &[hxx, hxy, hxy, hyy]);
        for (k, g) in grad.iter().enumerate() {
            mat -= &dpa[k] * *g;
        }
        let sym = (&mat + mat.transpose()) * 0.5;
        let min_eig = sym.symmetric_eigenvalues().min();
        delta = delta.min(min_eig);
    }
    Ok(delta)
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    theta.rem_euclid(TAU)
}

/// Angle shifted by half a turn, wrapped.
pub fn opposite_angle(theta: f64) -> f64 {
    wrap_angle(theta + PI)
}

/// Convenience conversion for callers holding `DVector` points.
pub fn to_vec2(p: &Point) -> Vector2<f64> {
    Vector2::new(p[0], p[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{BoundingBox, PerturbedQuadratic};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn unit_disc() -> DomainSpec {
        DomainSpec::disc([0.0, 0.0], 1.0).unwrap()
    }

    fn trefoil() -> DomainSpec {
        DomainSpec::new(
            [0.0, 0.0],
            Shape::RadialFourier {
                r0: 1.0,
                cos: vec![0.0, 0.0, 0.5],
                sin: vec![],
            },
            512,
        )
        .unwrap()
    }

    #[test]
    fn unit_disc_frame() {
        let f = boundary_frame(&unit_disc(), 0.0);
        assert!((f.point - Vector2::new(1.0, 0.0)).norm() < 1e-15);
        assert!((f.normal - Vector2::new(1.0, 0.0)).norm() < 1e-15);
        assert!((f.tangent - Vector2::new(0.0, 1.0)).norm() < 1e-15);
        assert!((f.curvature - 1.0).abs() < 1e-15);
        let r = DomainSpec::disc([0.3, -1.0], 2.5).unwrap();
        for k in 0..37 {
            let f = boundary_frame(&r, 0.17 * k as f64);
            assert!((f.curvature - 0.4).abs() < 1e-8);
            assert!(f.normal.dot(&f.tangent).abs() < 1e-15);
        }
    }

    /// Curvature of `(a cos t, b sin t)` at the parameter `t` hitting polar
    /// angle `θ`.
    fn ellipse_curvature_oracle(a: f64, b: f64, theta: f64) -> f64 {
        let t = (a * theta.sin()).atan2(b * theta.cos());
        let (s, c) = t.sin_cos();
        a * b / (a * a * s * s + b * b * c * c).powf(1.5)
    }

    #[test]
    fn ellipse_curvature_matches_parametric_form() {
        let e = DomainSpec::ellipse([0.0, 0.0], 2.0, 1.0).unwrap();
        let k0 = boundary_frame(&e, 0.0).curvature;
        assert!((k0 - 2.0).abs() <= 1e-8 * 2.0);
        for k in 0..50 {
            let th = 0.123 * k as f64;
            let got = boundary_frame(&e, th).curvature;
            let want = ellipse_curvature_oracle(2.0, 1.0, th);
            assert!((got - want).abs() <= 1e-8 * want, "θ={th}: {got} vs {want}");
        }
    }

    #[test]
    fn frames_are_orthonormal_and_outward() {
        for dom in [trefoil(), DomainSpec::ellipse([1.0, 2.0], 1.5, 0.7).unwrap()] {
            for (th, p) in dom.boundary_nodes() {
                let f = boundary_frame(&dom, th);
                assert!((f.normal.norm() - 1.0).abs() < 1e-14);
                assert!((f.tangent.norm() - 1.0).abs() < 1e-14);
                assert!(f.normal.dot(&f.tangent).abs() < 1e-14);
                assert!(!dom.contains(&(p + 1e-6 * f.normal)));
                assert!(dom.contains(&(p - 1e-6 * f.normal)));
            }
        }
    }

    #[test]
    fn defining_function_gradient_and_normal() {
        let e = DomainSpec::ellipse([0.2, -0.1], 1.0, 0.6).unwrap();
        let h = 1e-6;
        for k in 0..24 {
            let th = 0.27 * k as f64 + 0.05;
            let fr = boundary_frame(&e, th);
            let (v, g) = e.defining_function(&fr.point);
            assert!(v.abs() < 1e-12);
            assert!((g.normalize() - fr.normal).norm() < 1e-10);
            let y = e.center() + 0.7 * (fr.point - e.center()) + Vector2::new(0.01, 0.02);
            let (_, g) = e.defining_function(&y);
            for i in 0..2 {
                let mut dy = Vector2::zeros();
                dy[i] = h;
                let fd = (e.defining_function(&(y + dy)).0 - e.defining_function(&(y - dy)).0) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-7);
            }
        }
        let (v, g) = unit_disc().defining_function(&Vector2::new(0.3, -0.4));
        assert!((v + 0.75).abs() < 1e-15);
        assert!((g - Vector2::new(0.6, -0.8)).norm() < 1e-15);
    }

    #[test]
    fn signed_distance_examples() {
        let d = unit_disc();
        assert!((signed_distance(&d, &Vector2::zeros()).value + 1.0).abs() < 1e-14);
        let spacing = d.node_spacing();
        for k in 0..20 {
            let th = 0.31 * k as f64 + 0.01;
            assert!(signed_distance(&d, &d.point(th)).value.abs() <= spacing);
        }
        let out = signed_distance(&d, &Vector2::new(0.0, 3.0));
        assert!((out.value - 2.0).abs() < 1e-12);
        assert!((out.gradient - Vector2::new(0.0, 1.0)).norm() < 1e-12);
        let ins = signed_distance(&d, &Vector2::new(0.3, -0.4));
        assert!((ins.value + 0.5).abs() < 1e-12);
    }

    #[test]
    fn signed_distance_on_ellipse_is_orthogonal_projection() {
        let e = DomainSpec::ellipse([0.2, 0.1], 1.0, 0.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x = Vector2::new(rng.random_range(-0.4..0.8), rng.random_range(-0.3..0.5));
            let d = signed_distance(&e, &x);
            let foot = e.point(d.foot_theta);
            assert!(((x - foot).norm() - d.value.abs()).abs() < 1e-12);
            let t = boundary_frame(&e, d.foot_theta).tangent;
            assert!((x - foot).dot(&t).abs() < 1e-10);
        }
    }

    #[test]
    fn signed_distance_is_lipschitz() {
        let dom = trefoil();
        let slack = dom.node_spacing();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let a = Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let b = Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let da = signed_distance(&dom, &a).value;
            let db = signed_distance(&dom, &b).value;
            assert!((da - db).abs() <= (a - b).norm() + slack);
        }
    }

    #[test]
    fn barrier_polynomial() {
        let b = BarrierParams::new(2.0, 3.0).unwrap();
        assert_eq!(b.value(0.0), 0.0);
        assert_eq!(b.derivative(0.0), -3.0);
        assert!(BarrierParams::new(0.0, 1.0).is_err());
        assert!(BarrierParams::new(1.0, -1.0).is_err());
    }

    #[test]
    fn relative_convexity_quadratic_is_curvature() {
        let m = CostModel::quadratic(2, 10.0);
        let r = relative_c_convexity(&unit_disc(), &unit_disc(), &m, ConvexityRole::C).unwrap();
        assert!((r.delta0 - 1.0).abs() < 1e-6);
        let big = DomainSpec::disc([0.0, 0.0], 2.0).unwrap();
        let r = relative_c_convexity(&big, &unit_disc(), &m, ConvexityRole::CStar).unwrap();
        assert!((r.delta0 - 0.5).abs() < 1e-6);

        let t = trefoil();
        let r = relative_c_convexity(&t, &unit_disc(), &m, ConvexityRole::C).unwrap();
        let min_curv = t
            .boundary_nodes()
            .iter()
            .map(|(th, _)| boundary_frame(&t, *th).curvature)
            .fold(f64::INFINITY, f64::min);
        assert!(r.delta0 < 0.0);
        assert!((r.delta0 - min_curv).abs() <= 1e-6 * min_curv.abs());
        let at_witness = boundary_frame(&t, r.witness_theta).curvature;
        assert_eq!(at_witness, r.delta0);
    }

    #[test]
    fn barrier_condition_examples() {
        let m = CostModel::quadratic(2, 10.0);
        let d = unit_disc();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let half = |x: &Vector2<f64>| 0.5 * x.norm_squared();
        let delta = barrier_condition_check(&d, &d, &m, &half, 50, &mut rng).unwrap();
        assert!((delta - 1.0).abs() < 1e-6);
        let linear = |x: &Vector2<f64>| 2.0 * x.x - x.y;
        let delta = barrier_condition_check(&d, &d, &m, &linear, 50, &mut rng).unwrap();
        assert!(delta.abs() < 1e-6);

        let pm = CostModel::new(
            Arc::new(PerturbedQuadratic { dim: 2, epsilon: 1e-2 }),
            BoundingBox::around(&[0.0, 0.0], 3.0),
            BoundingBox::around(&[0.0, 0.0], 3.0),
        );
        let delta = barrier_condition_check(&d, &d, &pm, &half, 50, &mut rng).unwrap();
        assert!((delta - 1.0).abs() < 0.2, "δ̃ = {delta}");
    }

    #[test]
    fn invalid_domains_rejected() {
        assert!(DomainSpec::disc([0.0, 0.0], -1.0).is_err());
        let bad = Shape::RadialFourier {
            r0: 0.4,
            cos: vec![0.5],
            sin: vec![],
        };
        assert!(DomainSpec::new([0.0, 0.0], bad, 64).is_err());
    }

    #[test]
    fn shape_json_round_trip() {
        let s = Shape::Ellipse { a: 1.0, b: 0.6 };
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"kind":"ellipse","a":1.0,"b":0.6}"#);
        let back: Shape = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
    }
}
