//! Cost functions `c(x, y)` and the transport machinery built on them.
//!
//! Index convention throughout: in `c_{ij,k}` the indices before the comma
//! are `x` derivatives and those after it are `y` derivatives. `[c^{i,j}]` is
//! the inverse of the mixed Hessian `[c_{i,j}]`, so its first index pairs
//! with a `y` slot and its second with an `x` slot.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};

pub type Point = DVector<f64>;

/// Finite-difference step multipliers (times the cost's length scale) for
/// first, second, third and fourth derivatives.
pub const FD_STEPS: [f64; 4] = [1e-6, 1e-4, 1e-3, 5e-3];

/// Determinant floor below which the mixed Hessian is treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;

/// Dense third-order tensor with `n³` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    n: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.n + j) * self.n + k] = v;
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Dense fourth-order tensor with `n⁴` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    n: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n * n],
        }
    }

    fn offset(&self, i: usize, j: usize, s: usize, t: usize) -> usize {
        ((i * self.n + j) * self.n + s) * self.n + t
    }

    pub fn get(&self, i: usize, j: usize, s: usize, t: usize) -> f64 {
        self.data[self.offset(i, j, s, t)]
    }

    pub fn set(&mut self, i: usize, j: usize, s: usize, t: usize, v: f64) {
        let o = self.offset(i, j, s, t);
        self.data[o] = v;
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// A variable slot for finite differencing: the `i`-th coordinate of `x` or `y`.
#[derive(Clone, Copy, Debug)]
enum Var {
    X(usize),
    Y(usize),
}

/// Mixed partial derivative along `vars` by the tensor product of central
/// first differences with step `h`.
fn mixed_partial<C: CostFunction + ?Sized>(c: &C, x: &Point, y: &Point, vars: &[Var], h: f64) -> f64 {
    let m = vars.len();
    let mut total = 0.0;
    let mut xs = x.clone();
    let mut ys = y.clone();
    for mask in 0u32..(1 << m) {
        xs.copy_from(x);
        ys.copy_from(y);
        let mut sign = 1.0;
        for (b, var) in vars.iter().enumerate() {
            let s = if mask & (1 << b) != 0 { 1.0 } else { -1.0 };
            sign *= s;
            match *var {
                Var::X(i) => xs[i] += s * h,
                Var::Y(i) => ys[i] += s * h,
            }
        }
        total += sign * c.value(&xs, &ys);
    }
    total / (2.0 * h).powi(m as i32)
}

/// A cost function on `ℝⁿ × ℝⁿ`.
///
/// Only [`value`](CostFunction::value) and [`dim`](CostFunction::dim) are
/// required; every derivative defaults to nested central differences with
/// steps [`FD_STEPS`] times [`fd_scale`](CostFunction::fd_scale). Built-in
/// costs override them with analytic expressions.
pub trait CostFunction: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &Point, y: &Point) -> f64;

    fn fd_scale(&self) -> f64 {
        1.0
    }

    /// True only for `½|x - y|²`, which admits an explicit solver seed.
    fn is_quadratic(&self) -> bool {
        false
    }

    /// `D_x c`.
    fn grad_x(&self, x: &Point, y: &Point) -> DVector<f64> {
        let h = FD_STEPS[0] * self.fd_scale();
        DVector::from_fn(self.dim(), |i, _| mixed_partial(self, x, y, &[Var::X(i)], h))
    }

    /// `D_y c`.
    fn grad_y(&self, x: &Point, y: &Point) -> DVector<f64> {
        let h = FD_STEPS[0] * self.fd_scale();
        DVector::from_fn(self.dim(), |i, _| mixed_partial(self, x, y, &[Var::Y(i)], h))
    }

    /// `c_ij = ∂²c/∂x_i∂x_j`.
    fn hess_xx(&self, x: &Point, y: &Point) -> DMatrix<f64> {
        let h = FD_STEPS[1] * self.fd_scale();
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| {
            mixed_partial(self, x, y, &[Var::X(i), Var::X(j)], h)
        })
    }

    /// `c_{i,j} = ∂²c/∂x_i∂y_j`.
    fn hess_xy(&self, x: &Point, y: &Point) -> DMatrix<f64> {
        let h = FD_STEPS[1] * self.fd_scale();
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| {
            mixed_partial(self, x, y, &[Var::X(i), Var::Y(j)], h)
        })
    }

    /// `c_{,ij} = ∂²c/∂y_i∂y_j`.
    fn hess_yy(&self, x: &Point, y: &Point) -> DMatrix<f64> {
        let h = FD_STEPS[1] * self.fd_scale();
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| {
            mixed_partial(self, x, y, &[Var::Y(i), Var::Y(j)], h)
        })
    }

    /// `c_{ij,k}`, stored at `(i, j, k)`.
    fn d3_xxy(&self, x: &Point, y: &Point) -> Tensor3 {
        let h = FD_STEPS[2] * self.fd_scale();
        let n = self.dim();
        let mut t = Tensor3::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    t.set(i, j, k, mixed_partial(self, x, y, &[Var::X(i), Var::X(j), Var::Y(k)], h));
                }
            }
        }
        t
    }

    /// `c_{k,ij}`, stored at `(k, i, j)`.
    fn d3_xyy(&self, x: &Point, y: &Point) -> Tensor3 {
        let h = FD_STEPS[2] * self.fd_scale();
        let n = self.dim();
        let mut t = Tensor3::zeros(n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    t.set(k, i, j, mixed_partial(self, x, y, &[Var::X(k), Var::Y(i), Var::Y(j)], h));
                }
            }
        }
        t
    }

    /// `c_{ij,st}`, stored at `(i, j, s, t)`.
    fn d4_xxyy(&self, x: &Point, y: &Point) -> Tensor4 {
        let h = FD_STEPS[3] * self.fd_scale();
        let n = self.dim();
        let mut t4 = Tensor4::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for s in 0..n {
                    for t in 0..n {
                        let v = mixed_partial(
                            self,
                            x,
                            y,
                            &[Var::X(i), Var::X(j), Var::Y(s), Var::Y(t)],
                            h,
                        );
                        t4.set(i, j, s, t, v);
                    }
                }
            }
        }
        t4
    }
}

/// `c(x, y) = ½|x - y|²`.
#[derive(Clone, Copy, Debug)]
pub struct Quadratic {
    pub dim: usize,
}

impl CostFunction for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &Point, y: &Point) -> f64 {
        0.5 * (x - y).norm_squared()
    }

    fn is_quadratic(&self) -> bool {
        true
    }

    fn grad_x(&self, x: &Point, y: &Point) -> DVector<f64> {
        x - y
    }

    fn grad_y(&self, x: &Point, y: &Point) -> DVector<f64> {
        y - x
    }

    fn hess_xx(&self, _: &Point, _: &Point) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim)
    }

    fn hess_xy(&self, _: &Point, _: &Point) -> DMatrix<f64> {
        -DMatrix::identity(self.dim, self.dim)
    }

    fn hess_yy(&self, _: &Point, _: &Point) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim)
    }

    fn d3_xxy(&self, _: &Point, _: &Point) -> Tensor3 {
        Tensor3::zeros(self.dim)
    }

    fn d3_xyy(&self, _: &Point, _: &Point) -> Tensor3 {
        Tensor3::zeros(self.dim)
    }

    fn d4_xxyy(&self, _: &Point, _: &Point) -> Tensor4 {
        Tensor4::zeros(self.dim)
    }
}

/// `c(x, y) = ½|x - y|² + ε (x·y)³`.
#[derive(Clone, Copy, Debug)]
pub struct PerturbedQuadratic {
    pub dim: usize,
    pub epsilon: f64,
}

fn kd(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

impl CostFunction for PerturbedQuadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &Point, y: &Point) -> f64 {
        let s = x.dot(y);
        0.5 * (x - y).norm_squared() + self.epsilon * s * s * s
    }

    fn grad_x(&self, x: &Point, y: &Point) -> DVector<f64> {
        let s = x.dot(y);
        x - y + y * (3.0 * self.epsilon * s * s)
    }

    fn grad_y(&self, x: &Point, y: &Point) -> DVector<f64> {
        let s = x.dot(y);
        y - x + x * (3.0 * self.epsilon * s * s)
    }

    fn hess_xx(&self, x: &Point, y: &Point) -> DMatrix<f64> {
        let s = x.dot(y);
        let e = self.epsilon;
        DMatrix::from_fn(self.dim, self.dim, |i, j| kd(i, j) + 6.0 * e * s * y[i] * y[j])
    }

    fn hess_xy(&self, x: &Point, y: &Point) -> DMatrix<f64> {
        let s = x.dot(y);
        let e = self.epsilon;
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            -kd(i, j) + 3.0 * e * s * s * kd(i, j) + 6.0 * e * s * y[i] * x[j]
        })
    }

    fn hess_yy(&self, x: &Point, y: &Point) -> DMatrix<f64> {
        let s = x.dot(y);
        let e = self.epsilon;
        DMatrix::from_fn(self.dim, self.dim, |i, j| kd(i, j) + 6.0 * e * s * x[i] * x[j])
    }

    fn d3_xxy(&self, x: &Point, y: &Point) -> Tensor3 {
        let s = x.dot(y);
        let e6 = 6.0 * self.epsilon;
        let n = self.dim;
        let mut t = Tensor3::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let v = x[k] * y[i] * y[j] + s * kd(i, k) * y[j] + s * y[i] * kd(j, k);
                    t.set(i, j, k, e6 * v);
                }
            }
        }
        t
    }

    fn d3_xyy(&self, x: &Point, y: &Point) -> Tensor3 {
        let s = x.dot(y);
        let e6 = 6.0 * self.epsilon;
        let n = self.dim;
        let mut t = Tensor3::zeros(n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let v = y[k] * x[i] * x[j] + s * kd(i, k) * x[j] + s * x[i] * kd(j, k);
                    t.set(k, i, j, e6 * v);
                }
            }
        }
        t
    }

    fn d4_xxyy(&self, x: &Point, y: &Point) -> Tensor4 {
        let s = x.dot(y);
        let e6 = 6.0 * self.epsilon;
        let n = self.dim;
        let mut t4 = Tensor4::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        // ∂_{y_a} ∂_{y_b} of 6ε s y_i y_j
                        let v = x[b] * (kd(i, a) * y[j] + y[i] * kd(j, a))
                            + x[a] * kd(i, b) * y[j]
                            + s * kd(i, b) * kd(j, a)
                            + x[a] * y[i] * kd(j, b)
                            + s * kd(i, a) * kd(j, b);
                        t4.set(i, j, a, b, e6 * v);
                    }
                }
            }
        }
        t4
    }
}

/// A user cost given only as a scalar function; all derivatives are finite
/// differences.
pub struct ScalarCost<F> {
    pub dim: usize,
    pub scale: f64,
    pub f: F,
}

impl<F> fmt::Debug for ScalarCost<F> {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("ScalarCost")
            .field("dim", &self.dim)
            .field("scale", &self.scale)
            .finish()
    }
}

impl<F> CostFunction for ScalarCost<F>
where
    F: Fn(&Point, &Point) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &Point, y: &Point) -> f64 {
        (self.f)(x, y)
    }

    fn fd_scale(&self) -> f64 {
        self.scale
    }
}

/// Evaluates every derivative of the wrapped cost by finite differences,
/// ignoring any analytic overrides.
#[derive(Debug)]
pub struct FiniteDifference<C>(pub C);

impl<C: CostFunction> CostFunction for FiniteDifference<C> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn value(&self, x: &Point, y: &Point) -> f64 {
        self.0.value(x, y)
    }

    fn fd_scale(&self) -> f64 {
        self.0.fd_scale()
    }
}

/// The dual cost `c*(x, y) = c(y, x)`.
#[derive(Debug)]
pub struct Swapped(pub Arc<dyn CostFunction>);

impl CostFunction for Swapped {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn value(&self, x: &Point, y: &Point) -> f64 {
        self.0.value(y, x)
    }

    fn fd_scale(&self) -> f64 {
        self.0.fd_scale()
    }

    fn grad_x(&self, x: &Point, y: &Point) -> DVector<f64> {
        self.0.grad_y(y, x)
    }

    fn grad_y(&self, x: &Point, y: &Point) -> DVector<f64> {
        self.0.grad_x(y, x)
    }

    fn hess_xx(&self, x: &Point, y: &Point) -> DMatrix<f64> {
        self.0.hess_yy(y, x)
    }

    fn hess_xy(&self, x: &Point, y: &Point) -> DMatrix<f64> {
        self.0.hess_xy(y, x).transpose()
    }

    fn hess_yy(&self, x: &Point, y: &Point) -> DMatrix<f64> {
        self.0.hess_xx(y, x)
    }

    fn d3_xxy(&self, x: &Point, y: &Point) -> Tensor3 {
        let src = self.0.d3_xyy(y, x);
        let n = self.dim();
        let mut t = Tensor3::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    t.set(i, j, k, src.get(k, i, j));
                }
            }
        }
        t
    }

    fn d3_xyy(&self, x: &Point, y: &Point) -> Tensor3 {
        let src = self.0.d3_xxy(y, x);
        let n = self.dim();
        let mut t = Tensor3::zeros(n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    t.set(k, i, j, src.get(i, j, k));
                }
            }
        }
        t
    }

    fn d4_xxyy(&self, x: &Point, y: &Point) -> Tensor4 {
        let src = self.0.d4_xxyy(y, x);
        let n = self.dim();
        let mut t4 = Tensor4::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for s in 0..n {
                    for t in 0..n {
                        t4.set(i, j, s, t, src.get(s, t, i, j));
                    }
                }
            }
        }
        t4
    }
}

/// Axis-aligned box in `ℝⁿ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        Self { lo, hi }
    }

    /// The cube `[-half, half]ⁿ` around `center`.
    pub fn around(center: &[f64], half: f64) -> Self {
        Self {
            lo: center.iter().map(|c| c - half).collect(),
            hi: center.iter().map(|c| c + half).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        DVector::from_fn(self.dim(), |i, _| {
            self.lo[i] + (self.hi[i] - self.lo[i]) * rng.random::<f64>()
        })
    }
}

/// A cost function with the bounding boxes `U ⊇ Ω⁻ × Ω⁺` on which it may be
/// evaluated.
#[derive(Clone, Debug)]
pub struct CostModel {
    pub cost: Arc<dyn CostFunction>,
    pub x_box: BoundingBox,
    pub y_box: BoundingBox,
}

impl CostModel {
    pub fn new(cost: Arc<dyn CostFunction>, x_box: BoundingBox, y_box: BoundingBox) -> Self {
        Self { cost, x_box, y_box }
    }

    pub fn quadratic(dim: usize, half_width: f64) -> Self {
        let origin = vec![0.0; dim];
        Self::new(
            Arc::new(Quadratic { dim }),
            BoundingBox::around(&origin, half_width),
            BoundingBox::around(&origin, half_width),
        )
    }

    pub fn dim(&self) -> usize {
        self.cost.dim()
    }

    /// The model for `c*(x, y) = c(y, x)`, with the boxes exchanged.
    pub fn dual(&self) -> Self {
        Self {
            cost: Arc::new(Swapped(self.cost.clone())),
            x_box: self.y_box.clone(),
            y_box: self.x_box.clone(),
        }
    }

    /// `c_{i,j}` and its inverse `c^{i,j}`, failing when `|det| < SINGULAR_DET`.
    pub fn mixed_inverse(&self, x: &Point, y: &Point) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let cxy = self.cost.hess_xy(x, y);
        let det = cxy.determinant();
        if !(det.abs() >= SINGULAR_DET) {
            return Err(Error::SingularJacobian(det.abs()));
        }
        let inv = cxy
            .clone()
            .try_inverse()
            .ok_or(Error::SingularJacobian(det.abs()))?;
        Ok((cxy, inv))
    }
}

const Y_MAP_MAX_ITER: usize = 50;
const Y_MAP_TOL: f64 = 1e-10;

/// Solves `c_x(x, Y) = p` for `Y` by Newton's method on `y ↦ c_x(x, y)`.
///
/// The iteration starts from `guess` (or `x - p`, exact for the quadratic
/// cost) and fails with `NoConvergence` if it leaves the `y` box or exceeds
/// 50 iterations.
pub fn y_map(model: &CostModel, x: &Point, p: &DVector<f64>, guess: Option<&Point>) -> Result<Point> {
    let mut y = guess.cloned().unwrap_or_else(|| x - p);
    let scale = 1.0 + p.amax();
    for _ in 0..Y_MAP_MAX_ITER {
        let r = model.cost.grad_x(x, &y) - p;
        if r.amax() <= 1e-2 * Y_MAP_TOL * scale {
            return check_in_box(model, y);
        }
        let (_, inv) = model.mixed_inverse(x, &y)?;
        y -= inv * r;
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NoConvergence("y_map produced a non-finite iterate".into()));
        }
    }
    let r = model.cost.grad_x(x, &y) - p;
    if r.amax() <= Y_MAP_TOL * scale {
        return check_in_box(model, y);
    }
    Err(Error::NoConvergence(format!(
        "y_map: residual {:e} after {Y_MAP_MAX_ITER} iterations",
        r.amax()
    )))
}

fn check_in_box(model: &CostModel, y: Point) -> Result<Point> {
    if model.y_box.contains(&y) {
        Ok(y)
    } else {
        Err(Error::NoConvergence(format!(
            "y_map: solution {:?} leaves the target bounding box",
            y.as_slice()
        )))
    }
}

/// `A(x, p) = D²_x c(x, Y(x, p))`.
pub fn a_matrix(model: &CostModel, x: &Point, p: &DVector<f64>, guess: Option<&Point>) -> Result<DMatrix<f64>> {
    let y = y_map(model, x, p, guess)?;
    Ok(model.cost.hess_xx(x, &y))
}

/// `D_{p_k} A_ij = c_{ij,q} c^{q,k}` at `(x, y)` with `y = Y(x, p)`; entry
/// `k` of the result is the matrix `[D_{p_k} A_ij]`.
pub fn a_matrix_dp(model: &CostModel, x: &Point, y: &Point) -> Result<Vec<DMatrix<f64>>> {
    let (_, inv) = model.mixed_inverse(x, y)?;
    let t = model.cost.d3_xxy(x, y);
    let n = model.dim();
    Ok((0..n)
        .map(|k| {
            DMatrix::from_fn(n, n, |i, j| (0..n).map(|q| t.get(i, j, q) * inv[(q, k)]).sum())
        })
        .collect())
}

/// A point pair with an orthonormal direction pair `ξ ⊥ η`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MtwSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
}

impl MtwSample {
    pub fn new(x: Vec<f64>, y: Vec<f64>, xi: Vec<f64>, eta: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if y.len() != n || xi.len() != n || eta.len() != n {
            return Err(Error::InvalidDimension(n));
        }
        let dot: f64 = xi.iter().zip(&eta).map(|(a, b)| a * b).sum();
        let nx: f64 = xi.iter().map(|a| a * a).sum::<f64>().sqrt();
        let ne: f64 = eta.iter().map(|a| a * a).sum::<f64>().sqrt();
        if dot.abs() > 1e-10 || (nx - 1.0).abs() > 1e-12 || (ne - 1.0).abs() > 1e-12 {
            return Err(Error::NotOrthogonal(dot));
        }
        Ok(Self { x, y, xi, eta })
    }

    /// Random sample with `x`, `y` uniform in the boxes and a random
    /// orthonormal pair.
    pub fn random<R: Rng + ?Sized>(x_box: &BoundingBox, y_box: &BoundingBox, rng: &mut R) -> Self {
        let n = x_box.dim();
        let x = x_box.sample(rng);
        let y = y_box.sample(rng);
        let gauss = |rng: &mut R| -> DVector<f64> { DVector::from_fn(n, |_, _| rng.sample(StandardNormal)) };
        let xi = gauss(rng).normalize();
        let mut eta = gauss(rng);
        eta -= &xi * xi.dot(&eta);
        let eta = eta.normalize();
        Self {
            x: x.as_slice().to_vec(),
            y: y.as_slice().to_vec(),
            xi: xi.as_slice().to_vec(),
            eta: eta.as_slice().to_vec(),
        }
    }
}

/// `(c_{ij,st} - c^{q,r} c_{ij,q} c_{r,st}) c^{s,k} c^{t,l} ξ_i ξ_j η_k η_l`.
pub fn mtw_contraction(model: &CostModel, s: &MtwSample) -> Result<f64> {
    let checked = MtwSample::new(s.x.clone(), s.y.clone(), s.xi.clone(), s.eta.clone())?;
    let x = DVector::from_vec(checked.x);
    let y = DVector::from_vec(checked.y);
    let n = model.dim();
    let (_, inv) = model.mixed_inverse(&x, &y)?;
    let c4 = model.cost.d4_xxyy(&x, &y);
    let c3x = model.cost.d3_xxy(&x, &y);
    let c3y = model.cost.d3_xyy(&x, &y);

    // ζ_s = c^{s,k} η_k maps η into y-index space
    let eta = DVector::from_column_slice(&s.eta);
    let zeta = &inv * &eta;
    let xi = &s.xi;

    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let wij = xi[i] * xi[j];
            if wij == 0.0 {
                continue;
            }
            for a in 0..n {
                for b in 0..n {
                    let mut correction = 0.0;
                    for q in 0..n {
                        for r in 0..n {
                            correction += inv[(q, r)] * c3x.get(i, j, q) * c3y.get(r, a, b);
                        }
                    }
                    total += wij * (c4.get(i, j, a, b) - correction) * zeta[a] * zeta[b];
                }
            }
        }
    }
    Ok(total)
}

/// Outcome of [`classify_a3`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum A3Class {
    #[serde(rename = "A3")]
    A3,
    #[serde(rename = "A3w-only")]
    A3wOnly,
    #[serde(rename = "violated")]
    Violated,
}

impl fmt::Display for A3Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            A3Class::A3 => "A3",
            A3Class::A3wOnly => "A3w-only",
            A3Class::Violated => "violated",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct A3Classification {
    pub classification: A3Class,
    pub min_value: f64,
    /// Lower bound `c₀` when the classification is `A3`.
    pub c0: Option<f64>,
    pub witness: MtwSample,
    pub samples: usize,
}

/// Tolerance separating `A3`, `A3w-only` and `violated`.
pub const A3_TOL: f64 = 1e-8;

/// Samples the MTW contraction over `x_box × y_box` and classifies the cost
/// by the minimum. Every sample is first checked for (A2) and (A1) (the
/// `y_map` round trip from `p = c_x(x, y)`).
pub fn classify_a3<R: Rng + ?Sized>(
    model: &CostModel,
    sample_budget: usize,
    x_box: &BoundingBox,
    y_box: &BoundingBox,
    rng: &mut R,
) -> Result<A3Classification> {
    if sample_budget == 0 {
        return Err(Error::EmptySampleSet);
    }
    let mut worst: Option<(f64, MtwSample)> = None;
    for _ in 0..sample_budget {
        let s = MtwSample::random(x_box, y_box, rng);
        let x = DVector::from_column_slice(&s.x);
        let y = DVector::from_column_slice(&s.y);
        model.mixed_inverse(&x, &y)?;
        let p = model.cost.grad_x(&x, &y);
        y_map(model, &x, &p, Some(&y))?;
        let v = mtw_contraction(model, &s)?;
        if worst.as_ref().is_none_or(|(m, _)| v < *m) {
            worst = Some((v, s));
        }
    }
    let (min_value, witness) = worst.expect("nonempty");
    let classification = if min_value > A3_TOL {
        A3Class::A3
    } else if min_value >= -A3_TOL {
        A3Class::A3wOnly
    } else {
        A3Class::Violated
    };
    Ok(A3Classification {
        classification,
        min_value,
        c0: (classification == A3Class::A3).then_some(min_value),
        witness,
        samples: sample_budget,
    })
}

/// A potential `ψ` on the target side with first and second derivatives.
pub trait Potential {
    fn value(&self, y: &Point) -> f64;
    fn gradient(&self, y: &Point) -> DVector<f64>;
    fn hessian(&self, y: &Point) -> DMatrix<f64>;
}

/// `ψ(y) = -sqrt(r² - |y - y₀|²)` on the ball `B_r(y₀)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerHemisphere {
    pub center: Point,
    pub radius: f64,
}

impl Potential for LowerHemisphere {
    fn value(&self, y: &Point) -> f64 {
        -(self.radius * self.radius - (y - &self.center).norm_squared())
            .max(0.0)
            .sqrt()
    }

    fn gradient(&self, y: &Point) -> DVector<f64> {
        let d = y - &self.center;
        let root = (self.radius * self.radius - d.norm_squared()).max(f64::MIN_POSITIVE).sqrt();
        d / root
    }

    fn hessian(&self, y: &Point) -> DMatrix<f64> {
        let d = y - &self.center;
        let q = (self.radius * self.radius - d.norm_squared()).max(f64::MIN_POSITIVE);
        let root = q.sqrt();
        let n = d.len();
        DMatrix::identity(n, n) / root + &d * d.transpose() / (q * root)
    }
}

/// Planar sample set on a ball: the center plus a tensor-product polar grid.
#[derive(Clone, Debug)]
pub struct BallGrid {
    pub center: Point,
    pub radius: f64,
    pub n_radial: usize,
    pub n_angular: usize,
    pub nodes: Vec<Point>,
}

impl BallGrid {
    /// Radii `r·i/n_radial` for `i = 1..n_radial` (the closed ball minus
    /// its rim, where `ψ` has unbounded slope) and `n_angular` angles.
    pub fn polar(center: Point, radius: f64, n_radial: usize, n_angular: usize) -> Self {
        assert_eq!(center.len(), 2, "ball grids are planar");
        let mut nodes = Vec::with_capacity(1 + n_radial.saturating_sub(1) * n_angular);
        if n_radial > 0 && n_angular > 0 {
            nodes.push(center.clone());
            for i in 1..n_radial {
                let r = radius * i as f64 / n_radial as f64;
                for j in 0..n_angular {
                    let th = std::f64::consts::TAU * j as f64 / n_angular as f64;
                    nodes.push(DVector::from_vec(vec![
                        center[0] + r * th.cos(),
                        center[1] + r * th.sin(),
                    ]));
                }
            }
        }
        Self {
            center,
            radius,
            n_radial,
            n_angular,
            nodes,
        }
    }

    pub fn contains(&self, y: &Point) -> bool {
        (y - &self.center).norm() <= self.radius
    }
}

/// Value and contact point of a c-transform evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct CTransform {
    pub value: f64,
    pub argmax: Point,
    /// Maximum over the raw sample nodes, before refinement.
    pub grid_value: f64,
}

/// `u₀(x) = sup_{y ∈ S} [c(x, y) - ψ(y)]` over the ball sample set.
///
/// The best node is refined by one local quadratic fit through its nearest
/// neighbours and then polished by damped Newton steps on
/// `c_y(x, y) = Dψ(y)`; refinements are only kept when they stay inside the
/// ball and increase the objective.
pub fn c_transform<P: Potential>(model: &CostModel, psi: &P, samples: &BallGrid, x: &Point) -> Result<CTransform> {
    let objective = |y: &Point| model.cost.value(x, y) - psi.value(y);
    let (best_idx, grid_value) = samples
        .nodes
        .iter()
        .enumerate()
        .map(|(k, y)| (k, objective(y)))
        .fold(None, |acc: Option<(usize, f64)>, (k, v)| match acc {
            Some((_, bv)) if bv >= v => acc,
            _ => Some((k, v)),
        })
        .ok_or(Error::EmptySampleSet)?;

    let mut y = samples.nodes[best_idx].clone();
    let mut value = grid_value;

    if let Some(fit) = quadratic_fit_peak(&samples.nodes, &objective, best_idx) {
        if samples.contains(&fit) {
            let v = objective(&fit);
            if v > value {
                y = fit;
                value = v;
            }
        }
    }

    // Newton polish on the first-order condition.
    for _ in 0..30 {
        let g = model.cost.grad_y(x, &y) - psi.gradient(&y);
        if g.amax() < 1e-14 {
            break;
        }
        let h = model.cost.hess_yy(x, &y) - psi.hessian(&y);
        let Some(step) = h.lu().solve(&g) else { break };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &y - &step * alpha;
            if samples.contains(&trial) {
                let v = objective(&trial);
                if v >= value {
                    y = trial;
                    value = v;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    Ok(CTransform {
        value,
        argmax: y,
        grid_value,
    })
}

/// Peak of the least-squares quadratic through the node `center` and its
/// nearest neighbours, if the fit is concave.
fn quadratic_fit_peak(nodes: &[Point], objective: &dyn Fn(&Point) -> f64, center: usize) -> Option<Point> {
    let c = &nodes[center];
    let mut by_dist: Vec<(f64, usize)> = nodes
        .iter()
        .enumerate()
        .map(|(k, y)| ((y - c).norm_squared(), k))
        .collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
    let take = by_dist.len().min(12);
    if take < 6 {
        return None;
    }
    // q(d) = a + g·d + ½ dᵀ H d with H = [[h0, h1], [h1, h2]]
    let mut design = DMatrix::zeros(take, 6);
    let mut rhs = DVector::zeros(take);
    for (row, &(_, k)) in by_dist[..take].iter().enumerate() {
        let d = &nodes[k] - c;
        design[(row, 0)] = 1.0;
        design[(row, 1)] = d[0];
        design[(row, 2)] = d[1];
        design[(row, 3)] = 0.5 * d[0] * d[0];
        design[(row, 4)] = d[0] * d[1];
        design[(row, 5)] = 0.5 * d[1] * d[1];
        rhs[row] = objective(&nodes[k]);
    }
    let coef = design.svd(true, true).solve(&rhs, 1e-12).ok()?;
    let h = DMatrix::from_row_slice(2, 2, &[coef[3], coef[4], coef[4], coef[5]]);
    let g = DVector::from_vec(vec![coef[1], coef[2]]);
    if !(h.determinant() > 0.0 && h[(0, 0)] < 0.0) {
        return None;
    }
    let d = h.lu().solve(&(-g))?;
    Some(c + d)
}

/// Which mixed gradient a segment straightens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentRole {
    /// Solve `D_y c(x, anchor) = z` for `x`.
    C,
    /// Solve `D_x c(anchor, y) = z` for `y`.
    CStar,
}

/// c-segment through `anchor`: the preimage of the straight segment
/// `[z0, z1]` (sampled at `steps` points) under the mixed gradient map.
pub fn c_segment(
    model: &CostModel,
    anchor: &Point,
    z0: &DVector<f64>,
    z1: &DVector<f64>,
    steps: usize,
    role: SegmentRole,
    guess: Option<&Point>,
) -> Result<Vec<Point>> {
    if steps < 2 {
        return Err(Error::InvalidProblem("a c-segment needs at least 2 steps".into()));
    }
    let dual;
    let (m, guess_default) = match role {
        SegmentRole::C => {
            dual = model.dual();
            (&dual, anchor - z0)
        }
        SegmentRole::CStar => (model, anchor - z0),
    };
    let mut current = guess.cloned().unwrap_or(guess_default);
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        let s = k as f64 / (steps - 1) as f64;
        let z = z0 * (1.0 - s) + z1 * s;
        // In the dual model the roles of x and y are exchanged, so solving
        // c*_x(anchor, w) = z is D_y c(w, anchor) = z.
        current = y_map(m, anchor, &z, Some(&current))?;
        out.push(current.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(a: &[f64]) -> Point {
        DVector::from_column_slice(a)
    }

    fn perturbed(eps: f64) -> CostModel {
        CostModel::new(
            Arc::new(PerturbedQuadratic { dim: 2, epsilon: eps }),
            BoundingBox::around(&[0.0, 0.0], 3.0),
            BoundingBox::around(&[0.0, 0.0], 3.0),
        )
    }

    #[test]
    fn y_map_quadratic() {
        let m = CostModel::quadratic(2, 10.0);
        let x = v(&[0.3, -0.2]);
        let p = v(&[0.1, 0.4]);
        let y = y_map(&m, &x, &p, None).unwrap();
        assert!((y - (&x - &p)).amax() < 1e-15);
        // u = |x|²: Du = 2x, T_u(x) = -x
        let t = y_map(&m, &x, &(&x * 2.0), None).unwrap();
        assert!((t + &x).amax() < 1e-15);
        let err = y_map(&m, &x, &v(&[1e3, 0.0]), None).unwrap_err();
        assert!(matches!(err, Error::NoConvergence(_)));
    }

    #[test]
    fn y_map_round_trip_perturbed() {
        let m = perturbed(0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = BoundingBox::around(&[0.0, 0.0], 1.0);
        for _ in 0..50 {
            let x = b.sample(&mut rng);
            let y = b.sample(&mut rng);
            let p = m.cost.grad_x(&x, &y);
            let got = y_map(&m, &x, &p, None).unwrap();
            assert!((m.cost.grad_x(&x, &got) - &p).amax() <= 1e-10);
            assert!((got - y).amax() < 1e-8);
        }
    }

    #[test]
    fn a_matrix_quadratic_is_identity() {
        let m = CostModel::quadratic(3, 10.0);
        let a = a_matrix(&m, &v(&[0.1, 0.2, 0.3]), &v(&[1.0, -1.0, 0.5]), None).unwrap();
        assert_eq!(a, DMatrix::identity(3, 3));
    }

    #[test]
    fn a_matrix_dp_matches_finite_differences() {
        let m = perturbed(0.1);
        let x = v(&[0.4, -0.3]);
        let p = v(&[0.2, 0.5]);
        let y = y_map(&m, &x, &p, None).unwrap();
        let analytic = a_matrix_dp(&m, &x, &y).unwrap();
        let h = 1e-5;
        for k in 0..2 {
            let mut pp = p.clone();
            pp[k] += h;
            let mut pm = p.clone();
            pm[k] -= h;
            let fd = (a_matrix(&m, &x, &pp, None).unwrap() - a_matrix(&m, &x, &pm, None).unwrap()) / (2.0 * h);
            let err = (&fd - &analytic[k]).amax();
            assert!(err <= 1e-5 * analytic[k].amax().max(1e-3), "k={k} err={err}");
            let sym = (&analytic[k] - analytic[k].transpose()).amax();
            assert!(sym <= 1e-12);
        }
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let c = PerturbedQuadratic { dim: 2, epsilon: 0.07 };
        let fd = FiniteDifference(c);
        let x = v(&[0.6, -0.4]);
        let y = v(&[-0.3, 0.8]);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        for (a, b) in c.grad_x(&x, &y).iter().zip(fd.grad_x(&x, &y).iter()) {
            assert!(rel(*a, *b) < 1e-5);
        }
        for (a, b) in c.grad_y(&x, &y).iter().zip(fd.grad_y(&x, &y).iter()) {
            assert!(rel(*a, *b) < 1e-5);
        }
        assert!((c.hess_xx(&x, &y) - fd.hess_xx(&x, &y)).amax() < 1e-5);
        assert!((c.hess_xy(&x, &y) - fd.hess_xy(&x, &y)).amax() < 1e-5);
        assert!((c.hess_yy(&x, &y) - fd.hess_yy(&x, &y)).amax() < 1e-5);
        assert!(c.d3_xxy(&x, &y).max_abs_diff(&fd.d3_xxy(&x, &y)) < 1e-5);
        assert!(c.d3_xyy(&x, &y).max_abs_diff(&fd.d3_xyy(&x, &y)) < 1e-5);
        assert!(c.d4_xxyy(&x, &y).max_abs_diff(&fd.d4_xxyy(&x, &y)) < 1e-5);
    }

    #[test]
    fn swapped_cost_derivatives() {
        let base: Arc<dyn CostFunction> = Arc::new(PerturbedQuadratic { dim: 2, epsilon: 0.2 });
        let sw = Swapped(base.clone());
        let fd = FiniteDifference(Swapped(base));
        let x = v(&[0.2, 0.9]);
        let y = v(&[-0.5, 0.1]);
        assert!((sw.hess_xy(&x, &y) - fd.hess_xy(&x, &y)).amax() < 1e-5);
        assert!(sw.d3_xxy(&x, &y).max_abs_diff(&fd.d3_xxy(&x, &y)) < 1e-5);
        assert!(sw.d3_xyy(&x, &y).max_abs_diff(&fd.d3_xyy(&x, &y)) < 1e-5);
        assert!(sw.d4_xxyy(&x, &y).max_abs_diff(&fd.d4_xxyy(&x, &y)) < 1e-5);
    }

    #[test]
    fn mtw_quadratic_vanishes_and_validates() {
        let m = CostModel::quadratic(2, 5.0);
        let s = MtwSample::new(vec![0.1, 0.2], vec![0.3, -0.1], vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        assert!(mtw_contraction(&m, &s).unwrap().abs() <= 1e-10);
        let err = MtwSample::new(vec![0.0; 2], vec![0.0; 2], vec![1.0, 0.0], vec![1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NotOrthogonal(_)));
        let bad = MtwSample {
            x: vec![0.0; 2],
            y: vec![0.0; 2],
            xi: vec![1.0, 0.0],
            eta: vec![1.0, 0.0],
        };
        assert!(matches!(mtw_contraction(&m, &bad), Err(Error::NotOrthogonal(_))));
    }

    /// Independent evaluation of the MTW expression: every tensor factor by
    /// finite differences of the scalar cost, contracted in the order written.
    fn mtw_oracle(c: &dyn CostFunction, s: &MtwSample) -> f64 {
        let fd = FiniteDifference(ScalarCost {
            dim: 2,
            scale: 1.0,
            f: |x: &Point, y: &Point| c.value(x, y),
        });
        let x = v(&s.x);
        let y = v(&s.y);
        let inv = fd.hess_xy(&x, &y).try_inverse().unwrap();
        let c4 = fd.d4_xxyy(&x, &y);
        let c3x = fd.d3_xxy(&x, &y);
        let c3y = fd.d3_xyy(&x, &y);
        let mut total = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                for st in 0..4 {
                    let (ss, t) = (st / 2, st % 2);
                    for k in 0..2 {
                        for l in 0..2 {
                            let mut inner = c4.get(i, j, ss, t);
                            for q in 0..2 {
                                for r in 0..2 {
                                    inner -= inv[(q, r)] * c3x.get(i, j, q) * c3y.get(r, ss, t);
                                }
                            }
                            total += inner * inv[(ss, k)] * inv[(t, l)] * s.xi[i] * s.xi[j] * s.eta[k] * s.eta[l];
                        }
                    }
                }
            }
        }
        total
    }

    #[test]
    fn mtw_perturbed_matches_fd_oracle() {
        let eps = 1e-2;
        let m = perturbed(eps);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = BoundingBox::around(&[0.0, 0.0], 1.0);
        for _ in 0..10 {
            let s = MtwSample::random(&b, &b, &mut rng);
            let got = mtw_contraction(&m, &s).unwrap();
            let want = mtw_oracle(m.cost.as_ref(), &s);
            assert!((got - want).abs() <= 1e-4 * want.abs().max(1e-3), "{got} vs {want}");
            // ξ → -ξ, η → -η
            let flipped = MtwSample {
                xi: s.xi.iter().map(|a| -a).collect(),
                eta: s.eta.iter().map(|a| -a).collect(),
                ..s.clone()
            };
            let f = mtw_contraction(&m, &flipped).unwrap();
            assert!((f - got).abs() <= 1e-12 * got.abs().max(1e-300));
        }
    }

    #[test]
    fn classify_quadratic_and_errors() {
        let m = CostModel::quadratic(2, 5.0);
        let b = BoundingBox::around(&[0.0, 0.0], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = classify_a3(&m, 100, &b, &b, &mut rng).unwrap();
        assert_eq!(c.classification, A3Class::A3wOnly);
        assert!(c.min_value.abs() < 1e-10);
        assert_eq!(classify_a3(&m, 0, &b, &b, &mut rng), Err(Error::EmptySampleSet));
    }

    #[test]
    fn classify_perturbed_is_deterministic() {
        let b = BoundingBox::around(&[0.0, 0.0], 1.0);
        let run = |eps: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            classify_a3(&perturbed(eps), 200, &b, &b, &mut rng).unwrap()
        };
        let a = run(1e-2);
        let b2 = run(1e-2);
        assert_eq!(a, b2);
        if a.classification == A3Class::Violated {
            assert!(a.min_value < 0.0);
            let w = &a.witness;
            let again = mtw_contraction(&perturbed(1e-2), w).unwrap();
            assert_eq!(again, a.min_value);
        }
    }

    #[test]
    fn c_transform_at_center() {
        let m = CostModel::quadratic(2, 5.0);
        let y0 = v(&[0.2, -0.1]);
        let psi = LowerHemisphere {
            center: y0.clone(),
            radius: 0.5,
        };
        let grid = BallGrid::polar(y0.clone(), 0.5, 64, 64);
        let t = c_transform(&m, &psi, &grid, &y0).unwrap();
        assert!((t.value - 0.5).abs() <= 1e-3);
        for y in &grid.nodes {
            assert!(t.value >= m.cost.value(&y0, y) - psi.value(y));
        }
        assert!(grid.contains(&t.argmax));
        let empty = BallGrid::polar(y0.clone(), 0.5, 0, 0);
        assert_eq!(c_transform(&m, &psi, &empty, &y0), Err(Error::EmptySampleSet));
    }

    #[test]
    fn c_transform_contact_point_is_the_transport_image() {
        // Du₀(x) = c_x(x, y*), so y* is T_{u₀}(x); for the quadratic cost and
        // this ψ, y* solves y - x = -(y - y0)/sqrt(r² - |y - y0|²)... check the
        // first-order condition directly.
        let m = CostModel::quadratic(2, 5.0);
        let y0 = v(&[0.0, 0.0]);
        let psi = LowerHemisphere {
            center: y0.clone(),
            radius: 0.3,
        };
        let grid = BallGrid::polar(y0, 0.3, 64, 64);
        let x = v(&[0.5, -0.25]);
        let t = c_transform(&m, &psi, &grid, &x).unwrap();
        let g = m.cost.grad_y(&x, &t.argmax) - psi.gradient(&t.argmax);
        assert!(g.amax() < 1e-10);
        assert!(t.value >= t.grid_value);
    }

    #[test]
    fn c_segment_quadratic_is_straight() {
        let m = CostModel::quadratic(2, 10.0);
        let anchor = v(&[0.1, 0.2]);
        let z0 = v(&[0.0, 0.0]);
        let z1 = v(&[1.0, 0.5]);
        let seg = c_segment(&m, &anchor, &z0, &z1, 5, SegmentRole::C, None).unwrap();
        // D_y c(x, y) = y - x = z  =>  x = y - z
        for (k, x) in seg.iter().enumerate() {
            let s = k as f64 / 4.0;
            let z = &z0 * (1.0 - s) + &z1 * s;
            assert!((x - (&anchor - z)).amax() < 1e-12);
        }
        let two = c_segment(&m, &anchor, &z0, &z1, 2, SegmentRole::C, None).unwrap();
        assert_eq!(two.len(), 2);
        assert!((m.cost.grad_y(&two[1], &anchor) - &z1).amax() <= 1e-10);
        assert!(c_segment(&m, &anchor, &z0, &z1, 1, SegmentRole::C, None).is_err());
        let star = c_segment(&m, &anchor, &z0, &z1, 3, SegmentRole::CStar, None).unwrap();
        assert!((m.cost.grad_x(&anchor, &star[2]) - &z1).amax() <= 1e-10);
    }

    #[test]
    fn c_segment_perturbed_endpoints() {
        let m = perturbed(0.05);
        let anchor = v(&[0.3, -0.2]);
        let z0 = v(&[0.1, 0.0]);
        let z1 = v(&[-0.2, 0.4]);
        let seg = c_segment(&m, &anchor, &z0, &z1, 7, SegmentRole::C, None).unwrap();
        assert!((m.cost.grad_y(&seg[0], &anchor) - &z0).amax() <= 1e-10);
        assert!((m.cost.grad_y(&seg[6], &anchor) - &z1).amax() <= 1e-10);
    }
}
