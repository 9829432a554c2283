//! Boundary-fitted polar grid over a star-shaped domain and the linear
//! finite-difference stencils for `Du` and `D²u` on it.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DomainSpec;

/// Radial × angular node counts; the radial count includes the pole and
/// the boundary ring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSize {
    pub n_r: usize,
    pub n_theta: usize,
}

impl GridSize {
    pub fn new(n_r: usize, n_theta: usize) -> Self {
        Self { n_r, n_theta }
    }

    /// Same shape with the mesh spacing halved.
    pub fn refined(&self) -> Self {
        Self {
            n_r: 2 * self.n_r - 1,
            n_theta: 2 * self.n_theta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_r < 4 {
            return Err(Error::InvalidProblem(format!(
                "grid needs at least 4 radial nodes (got {})",
                self.n_r
            )));
        }
        if self.n_theta < 8 || !self.n_theta.is_multiple_of(2) {
            return Err(Error::InvalidProblem(format!(
                "angular node count must be even and at least 8 (got {})",
                self.n_theta
            )));
        }
        Ok(())
    }

    pub fn unknowns(&self) -> usize {
        1 + (self.n_r - 1) * self.n_theta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Pole,
    Interior,
    Boundary,
}

/// Derivative slots carried by a stencil entry.
pub const DX: usize = 0;
pub const DY: usize = 1;
pub const DXX: usize = 2;
pub const DXY: usize = 3;
pub const DYY: usize = 4;

/// Linear stencil: `Σ weights[q] · u[node]` gives derivative slot `q`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stencil {
    pub entries: Vec<(usize, [f64; 5])>,
}

impl Stencil {
    fn from_forms(forms: [LinForm; 5]) -> Self {
        let mut entries: Vec<(usize, [f64; 5])> = Vec::new();
        for (q, form) in forms.iter().enumerate() {
            for &(node, w) in &form.0 {
                match entries.iter_mut().find(|(n, _)| *n == node) {
                    Some((_, ws)) => ws[q] += w,
                    None => {
                        let mut ws = [0.0; 5];
                        ws[q] = w;
                        entries.push((node, ws));
                    }
                }
            }
        }
        entries.sort_by_key(|(n, _)| *n);
        Self { entries }
    }

    pub fn apply(&self, values: &[f64]) -> (Vector2<f64>, Matrix2<f64>) {
        let mut acc = [0.0; 5];
        for (node, ws) in &self.entries {
            let v = values[*node];
            for q in 0..5 {
                acc[q] += ws[q] * v;
            }
        }
        (
            Vector2::new(acc[DX], acc[DY]),
            Matrix2::new(acc[DXX], acc[DXY], acc[DXY], acc[DYY]),
        )
    }
}

/// Sparse linear combination of nodal values.
#[derive(Clone, Debug, Default)]
struct LinForm(Vec<(usize, f64)>);

impl LinForm {
    fn add(&mut self, node: usize, w: f64) {
        self.0.push((node, w));
    }

    fn axpy(&mut self, a: f64, other: &LinForm) {
        for &(n, w) in &other.0 {
            self.0.push((n, a * w));
        }
    }

    fn scaled(&self, a: f64) -> LinForm {
        LinForm(self.0.iter().map(|&(n, w)| (n, a * w)).collect())
    }
}

/// Per-node geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    pub i: usize,
    pub j: usize,
    pub x: Vector2<f64>,
}

/// Polar mesh `x(r, θ) = center + r ρ(θ) (cos θ, sin θ)` with
/// `r_i = i/(N_r - 1)` and `θ_j = 2πj/N_θ`; the pole `r = 0` is a single
/// node (index 0).
#[derive(Clone, Debug)]
pub struct Grid {
    pub size: GridSize,
    pub domain: DomainSpec,
    pub nodes: Vec<Node>,
    pub stencils: Vec<Stencil>,
    /// Largest physical distance between neighbouring nodes.
    pub h: f64,
}

impl Grid {
    pub fn new(domain: &DomainSpec, size: GridSize) -> Result<Self> {
        size.validate()?;
        domain.validate()?;
        let mut grid = Self {
            size,
            domain: domain.clone(),
            nodes: Vec::with_capacity(size.unknowns()),
            stencils: Vec::new(),
            h: 0.0,
        };
        grid.nodes.push(Node {
            kind: NodeKind::Pole,
            i: 0,
            j: 0,
            x: domain.center(),
        });
        for i in 1..size.n_r {
            for j in 0..size.n_theta {
                let kind = if i == size.n_r - 1 {
                    NodeKind::Boundary
                } else {
                    NodeKind::Interior
                };
                let x = grid.map(grid.r(i), grid.theta(j));
                grid.nodes.push(Node { kind, i, j, x });
            }
        }
        grid.h = grid.max_spacing();
        let stencils = (0..grid.nodes.len())
            .map(|k| grid.build_stencil(k))
            .collect::<Result<Vec<_>>>()?;
        grid.stencils = stencils;
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dr(&self) -> f64 {
        1.0 / (self.size.n_r - 1) as f64
    }

    pub fn dtheta(&self) -> f64 {
        TAU / self.size.n_theta as f64
    }

    pub fn r(&self, i: usize) -> f64 {
        i as f64 * self.dr()
    }

    pub fn theta(&self, j: usize) -> f64 {
        j as f64 * self.dtheta()
    }

    /// Node index of `(i, j)`; `j` wraps periodically and every `j` at
    /// `i = 0` is the pole.
    pub fn index(&self, i: usize, j: isize) -> usize {
        if i == 0 {
            return 0;
        }
        let nt = self.size.n_theta as isize;
        1 + (i - 1) * self.size.n_theta + j.rem_euclid(nt) as usize
    }

    pub fn boundary_indices(&self) -> impl Iterator<Item = usize> + '_ {
        let i = self.size.n_r - 1;
        (0..self.size.n_theta).map(move |j| self.index(i, j as isize))
    }

    pub fn map(&self, r: f64, theta: f64) -> Vector2<f64> {
        let (s, c) = theta.sin_cos();
        self.domain.center() + r * self.domain.rho(theta) * Vector2::new(c, s)
    }

    fn max_spacing(&self) -> f64 {
        let mut h: f64 = 0.0;
        for i in 1..self.size.n_r {
            for j in 0..self.size.n_theta {
                let here = self.nodes[self.index(i, j as isize)].x;
                let inner = self.nodes[self.index(i - 1, j as isize)].x;
                let next = self.nodes[self.index(i, j as isize + 1)].x;
                h = h.max((here - inner).norm()).max((here - next).norm());
            }
        }
        h
    }

    /// `J = [X_r X_θ]` and the Cartesian components of the second
    /// derivatives `X_rr = 0`, `X_rθ`, `X_θθ`.
    fn metric(&self, r: f64, theta: f64) -> (Matrix2<f64>, [Matrix2<f64>; 2]) {
        let (rho, d1, d2) = self.domain.radial(theta);
        let (s, c) = theta.sin_cos();
        let e = Vector2::new(c, s);
        let ep = Vector2::new(-s, c);
        let xr = rho * e;
        let xt = r * (d1 * e + rho * ep);
        let xrt = d1 * e + rho * ep;
        let xtt = r * ((d2 - rho) * e + 2.0 * d1 * ep);
        let jac = Matrix2::from_columns(&[xr, xt]);
        let second = [
            Matrix2::new(0.0, xrt.x, xrt.x, xtt.x),
            Matrix2::new(0.0, xrt.y, xrt.y, xtt.y),
        ];
        (jac, second)
    }

    fn build_stencil(&self, k: usize) -> Result<Stencil> {
        let node = self.nodes[k];
        match node.kind {
            NodeKind::Pole => self.pole_stencil(),
            _ => self.ring_stencil(node),
        }
    }

    /// Least-squares quadratic through the pole and the first ring.
    fn pole_stencil(&self) -> Result<Stencil> {
        let nt = self.size.n_theta;
        let c = self.domain.center();
        let mut design = DMatrix::zeros(nt, 5);
        for j in 0..nt {
            let d = self.nodes[self.index(1, j as isize)].x - c;
            design[(j, 0)] = d.x;
            design[(j, 1)] = d.y;
            design[(j, 2)] = 0.5 * d.x * d.x;
            design[(j, 3)] = d.x * d.y;
            design[(j, 4)] = 0.5 * d.y * d.y;
        }
        let normal = design.transpose() * &design;
        let inv = normal
            .try_inverse()
            .ok_or_else(|| Error::InvalidProblem("pole fit is singular".into()))?;
        let proj = inv * design.transpose();
        let mut forms: [LinForm; 5] = Default::default();
        for (q, form) in forms.iter_mut().enumerate() {
            let mut total = 0.0;
            for j in 0..nt {
                let w = proj[(q, j)];
                form.add(self.index(1, j as isize), w);
                total += w;
            }
            form.add(0, -total);
        }
        Ok(Stencil::from_forms(forms))
    }

    fn ring_stencil(&self, node: Node) -> Result<Stencil> {
        let (i, j) = (node.i, node.j as isize);
        let dr = self.dr();
        let dt = self.dtheta();
        let r = self.r(i);
        let (jac, second) = self.metric(r, self.theta(node.j));
        let det = jac.determinant();
        if !(det > 0.0) {
            return Err(Error::InvalidProblem(format!(
                "grid map Jacobian {det:e} is not positive at node ({i}, {j})"
            )));
        }
        let jinv = jac.try_inverse().expect("positive determinant");

        // u_θ on ring `ii` by central differences.
        let u_theta = |ii: usize| {
            let mut f = LinForm::default();
            f.add(self.index(ii, j + 1), 1.0 / (2.0 * dt));
            f.add(self.index(ii, j - 1), -1.0 / (2.0 * dt));
            f
        };
        let at = |ii: usize| self.index(ii, j);

        let mut ur = LinForm::default();
        let mut urr = LinForm::default();
        let mut urt = LinForm::default();
        let ut = u_theta(i);
        let mut utt = LinForm::default();
        utt.add(self.index(i, j + 1), 1.0 / (dt * dt));
        utt.add(at(i), -2.0 / (dt * dt));
        utt.add(self.index(i, j - 1), 1.0 / (dt * dt));

        if node.kind == NodeKind::Boundary {
            ur.add(at(i), 3.0 / (2.0 * dr));
            ur.add(at(i - 1), -4.0 / (2.0 * dr));
            ur.add(at(i - 2), 1.0 / (2.0 * dr));
            let h2 = dr * dr;
            urr.add(at(i), 2.0 / h2);
            urr.add(at(i - 1), -5.0 / h2);
            urr.add(at(i - 2), 4.0 / h2);
            urr.add(at(i - 3), -1.0 / h2);
            urt.axpy(3.0 / (2.0 * dr), &ut);
            urt.axpy(-4.0 / (2.0 * dr), &u_theta(i - 1));
            urt.axpy(1.0 / (2.0 * dr), &u_theta(i - 2));
        } else {
            ur.add(at(i + 1), 1.0 / (2.0 * dr));
            ur.add(at(i - 1), -1.0 / (2.0 * dr));
            urr.add(at(i + 1), 1.0 / (dr * dr));
            urr.add(at(i), -2.0 / (dr * dr));
            urr.add(at(i - 1), 1.0 / (dr * dr));
            urt.axpy(1.0 / (2.0 * dr), &u_theta(i + 1));
            urt.axpy(-1.0 / (2.0 * dr), &u_theta(i - 1));
        }

        // Du_k = Σ_a (J⁻¹)_{ak} u_a
        let grad: [LinForm; 2] = std::array::from_fn(|k| {
            let mut f = ur.scaled(jinv[(0, k)]);
            f.axpy(jinv[(1, k)], &ut);
            f
        });
        // M_ab = U_ab - Σ_k Du_k X_{k,ab};  D²u = J⁻ᵀ M J⁻¹
        let u2 = [[&urr, &urt], [&urt, &utt]];
        let m_ab = |a: usize, b: usize| {
            let mut f = u2[a][b].clone();
            for (k, g) in grad.iter().enumerate() {
                f.axpy(-second[k][(a, b)], g);
            }
            f
        };
        let m = [[m_ab(0, 0), m_ab(0, 1)], [m_ab(1, 0), m_ab(1, 1)]];
        let hess = |k: usize, l: usize| {
            let mut f = LinForm::default();
            for a in 0..2 {
                for b in 0..2 {
                    f.axpy(jinv[(a, k)] * jinv[(b, l)], &m[a][b]);
                }
            }
            f
        };
        let [gx, gy] = grad;
        Ok(Stencil::from_forms([gx, gy, hess(0, 0), hess(0, 1), hess(1, 1)]))
    }
}

/// Nodal values on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&Vector2<f64>) -> f64) -> Self {
        Self {
            values: grid.nodes.iter().map(|n| f(&n.x)).collect(),
        }
    }

    /// Discrete `(Du, D²u)` at node `k`.
    pub fn derivatives(&self, grid: &Grid, k: usize) -> (Vector2<f64>, Matrix2<f64>) {
        grid.stencils[k].apply(&self.values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(x: &Vector2<f64>) -> f64 {
        1.0 + 0.5 * x.x - 2.0 * x.y + 1.5 * x.x * x.x + 0.7 * x.x * x.y - 0.4 * x.y * x.y
    }

    #[test]
    fn pole_fit_is_exact_for_quadratics() {
        for dom in [
            DomainSpec::disc([0.0, 0.0], 1.0).unwrap(),
            DomainSpec::ellipse([0.3, -0.2], 1.0, 0.6).unwrap(),
        ] {
            let grid = Grid::new(&dom, GridSize::new(9, 16)).unwrap();
            let u = GridField::from_fn(&grid, quad);
            let c = dom.center();
            let (g, h) = u.derivatives(&grid, 0);
            let want_g = Vector2::new(0.5 + 3.0 * c.x + 0.7 * c.y, -2.0 + 0.7 * c.x - 0.8 * c.y);
            assert!((g - want_g).norm() < 1e-10, "{g} vs {want_g}");
            assert!((h - Matrix2::new(3.0, 0.7, 0.7, -0.8)).norm() < 1e-9, "{h}");
        }
    }

    #[test]
    fn radial_quadratic_is_exact_everywhere_on_a_disc() {
        let dom = DomainSpec::disc([0.0, 0.0], 1.0).unwrap();
        let grid = Grid::new(&dom, GridSize::new(9, 16)).unwrap();
        let u = GridField::from_fn(&grid, |x| x.norm_squared());
        for k in 0..grid.len() {
            let (g, h) = u.derivatives(&grid, k);
            assert!((g - 2.0 * grid.nodes[k].x).norm() < 1e-11);
            assert!((h - Matrix2::identity() * 2.0).norm() < 1e-9, "node {k}: {h}");
        }
    }

    #[test]
    fn stencils_are_second_order_away_from_the_pole() {
        let dom = DomainSpec::ellipse([0.1, 0.0], 1.0, 0.7).unwrap();
        let f = |x: &Vector2<f64>| (1.3 * x.x).sin() * (0.8 * x.y).cos() + x.x * x.y * x.y;
        let hess = |x: &Vector2<f64>| {
            let (sx, cx) = (1.3 * x.x).sin_cos();
            let (sy, cy) = (0.8 * x.y).sin_cos();
            Matrix2::new(
                -1.69 * sx * cy,
                -1.04 * cx * sy + 2.0 * x.y,
                -1.04 * cx * sy + 2.0 * x.y,
                -0.64 * sx * cy + 2.0 * x.x,
            )
        };
        let err = |size: GridSize| {
            let grid = Grid::new(&dom, size).unwrap();
            let u = GridField::from_fn(&grid, f);
            (0..grid.len())
                .filter(|&k| grid.nodes[k].kind == NodeKind::Interior && grid.r(grid.nodes[k].i) >= 0.25)
                .map(|k| (u.derivatives(&grid, k).1 - hess(&grid.nodes[k].x)).amax())
                .fold(0.0, f64::max)
        };
        let coarse = err(GridSize::new(17, 32));
        let fine = err(GridSize::new(33, 64));
        let order = (coarse / fine).log2();
        assert!(order > 1.7, "order {order} ({coarse:e} -> {fine:e})");
    }

    #[test]
    fn constants_have_zero_derivatives() {
        let dom = DomainSpec::ellipse([0.0, 0.0], 1.2, 0.8).unwrap();
        let grid = Grid::new(&dom, GridSize::new(6, 12)).unwrap();
        for s in &grid.stencils {
            for q in 0..5 {
                let total: f64 = s.entries.iter().map(|(_, w)| w[q]).sum();
                assert!(total.abs() < 1e-8, "{total}");
            }
        }
    }

    #[test]
    fn invalid_sizes() {
        let dom = DomainSpec::disc([0.0, 0.0], 1.0).unwrap();
        assert!(Grid::new(&dom, GridSize::new(3, 16)).is_err());
        assert!(Grid::new(&dom, GridSize::new(9, 15)).is_err());
        assert_eq!(GridSize::new(17, 32).refined(), GridSize::new(33, 64));
    }
}
