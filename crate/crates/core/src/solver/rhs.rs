//! Right-hand sides `B(x, z)` from a small whitelist of expressions.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DomainSpec;

/// Whitelisted inhomogeneity `B(x, z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BExpr {
    /// A positive constant.
    Constant { value: f64 },
    /// `e^z`.
    ExpZ {},
    /// `e^{z - |x|²}`.
    ExpZMinusNorm2 {},
    /// `e^{z - a x₁² - b x₂²}`.
    ExpZMinusQuadratic { a: f64, b: f64 },
    /// Product of the factors.
    Product { factors: Vec<BExpr> },
}

/// z values at which growth and monotonicity are checked.
const Z_LADDER: [f64; 9] = [-100.0, -30.0, -10.0, -1.0, 0.0, 1.0, 10.0, 30.0, 100.0];

impl BExpr {
    /// `(B, ∂B/∂z)` at `(x, z)`.
    pub fn eval(&self, x: &Vector2<f64>, z: f64) -> (f64, f64) {
        match self {
            BExpr::Constant { value } => (*value, 0.0),
            BExpr::ExpZ {} => {
                let e = z.exp();
                (e, e)
            }
            BExpr::ExpZMinusNorm2 {} => {
                let e = (z - x.norm_squared()).exp();
                (e, e)
            }
            BExpr::ExpZMinusQuadratic { a, b } => {
                let e = (z - a * x.x * x.x - b * x.y * x.y).exp();
                (e, e)
            }
            BExpr::Product { factors } => {
                let mut value = 1.0;
                let mut dz = 0.0;
                for f in factors {
                    let (v, d) = f.eval(x, z);
                    dz = dz * v + value * d;
                    value *= v;
                }
                (value, dz)
            }
        }
    }

    pub fn value(&self, x: &Vector2<f64>, z: f64) -> f64 {
        self.eval(x, z).0
    }

    /// Checks `B > 0`, `B_z > 0`, monotone growth in `z`, and the limits
    /// `B → ∞` as `z → ∞` and `B → 0` as `z → -∞` on a z ladder at interior
    /// grid points of `dom`.
    pub fn validate(&self, dom: &DomainSpec) -> Result<()> {
        if let BExpr::Product { factors } = self {
            if factors.is_empty() {
                return Err(Error::InvalidProblem("B product has no factors".into()));
            }
        }
        for x in dom.interior_grid(4, 12) {
            let mut prev = 0.0;
            for &z in &Z_LADDER {
                let (b, bz) = self.eval(&x, z);
                if !(b > 0.0 && b.is_finite()) {
                    return Err(Error::InvalidProblem(format!(
                        "B must be positive and finite (B = {b:e} at x = ({}, {}), z = {z})",
                        x.x, x.y
                    )));
                }
                if !(bz > 0.0) {
                    return Err(Error::InvalidProblem(format!(
                        "B must be strictly increasing in z (B_z = {bz:e} at z = {z})"
                    )));
                }
                if b <= prev {
                    return Err(Error::InvalidProblem(format!("B is not increasing in z at z = {z}")));
                }
                prev = b;
            }
            let b0 = self.value(&x, 0.0);
            if self.value(&x, 100.0) < 1e6 * b0 {
                return Err(Error::InvalidProblem("B does not grow without bound as z → ∞".into()));
            }
            if self.value(&x, -100.0) > 1e-6 * b0 {
                return Err(Error::InvalidProblem("B does not decay to 0 as z → -∞".into()));
            }
        }
        Ok(())
    }
}
