//! The matrix operator `F[M] = σ_{n,l}(eig M)` and its derivatives.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::symfun::{self, QuotientParams, Spectrum};

/// Relative asymmetry tolerated when constructing a [`ModifiedHessian`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Symmetric matrix `w = D²u - A`, the argument of `F`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModifiedHessian {
    entries: DMatrix<f64>,
}

impl ModifiedHessian {
    /// Symmetrizes `m` after checking that its asymmetry is at most
    /// `SYMMETRY_TOL * ‖m‖`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidDimension(m.nrows()));
        }
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * m.amax() || asym.is_nan() {
            return Err(Error::NotSymmetric(asym));
        }
        let entries = (&m + m.transpose()) * 0.5;
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn decompose(&self) -> Result<SpectralDecomposition> {
        SpectralDecomposition::of(self)
    }
}

/// Eigen-decomposition `M = Q Λ Qᵀ`, eigenvalues sorted descending.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn of(m: &ModifiedHessian) -> Result<Self> {
        let eig = m.entries.clone().symmetric_eigen();
        let n = m.n();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let eigenvectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn min_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().unwrap_or(&f64::NAN)
    }

    /// The spectrum as a [`Spectrum`], rejecting non-admissible matrices.
    pub fn spectrum(&self) -> Result<Spectrum> {
        let s = Spectrum::new(self.eigenvalues.clone())?;
        s.check_positive_cone().map_err(|_| Error::NotAdmissible {
            min_eigenvalue: self.min_eigenvalue(),
            node: None,
        })?;
        Ok(s)
    }

    /// `Q diag(d) Qᵀ`.
    pub fn reconstruct_with(&self, diag: &[f64]) -> DMatrix<f64> {
        let q = &self.eigenvectors;
        let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |r, c| q[(r, c)] * diag[c]);
        scaled * q.transpose()
    }
}

/// `F[M] = σ_{n,l}(eig M)`.
pub fn eval_f(m: &ModifiedHessian, p: QuotientParams) -> Result<f64> {
    let spectrum = m.decompose()?.spectrum()?;
    symfun::sigma_quotient(&spectrum, p)
}

/// `F^{ij} = ∂F/∂M_ij = Q diag(f_1, ..., f_n) Qᵀ`.
pub fn linearization(m: &ModifiedHessian, p: QuotientParams) -> Result<DMatrix<f64>> {
    let dec = m.decompose()?;
    let grad = symfun::sigma_grad(&dec.spectrum()?, p)?;
    Ok(dec.reconstruct_with(&grad))
}

/// Value, linearization and spectrum of `F` at `m` in one eigen-solve.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub value: f64,
    pub linearization: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

pub fn evaluate(m: &ModifiedHessian, p: QuotientParams) -> Result<Evaluation> {
    let dec = m.decompose()?;
    let spectrum = dec.spectrum()?;
    let value = symfun::sigma_quotient(&spectrum, p)?;
    let grad = symfun::sigma_grad(&spectrum, p)?;
    Ok(Evaluation {
        value,
        linearization: dec.reconstruct_with(&grad),
        eigenvalues: dec.eigenvalues,
    })
}

/// `F^{ij,kl} Ξ_ij Ξ_kl`, evaluated in the eigenbasis of `m` as
/// `Σ f_ij Ξ_ii Ξ_jj + Σ_{i≠j} (f_i - f_j)/(λ_i - λ_j) Ξ_ij²`.
///
/// Coincident eigenvalues use the limit `f_ii - f_ij` of the divided
/// difference.
pub fn second_contraction(
    m: &ModifiedHessian,
    p: QuotientParams,
    xi: &DMatrix<f64>,
) -> Result<f64> {
    let dec = m.decompose()?;
    let spectrum = dec.spectrum()?;
    let grad = symfun::sigma_grad(&spectrum, p)?;
    let hess = symfun::sigma_hess(&spectrum, p)?;
    let q = &dec.eigenvectors;
    let rotated = q.transpose() * xi * q;
    let values = spectrum.values();
    let n = values.len();

    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += hess[(i, j)] * rotated[(i, i)] * rotated[(j, j)];
            if i != j {
                let (dd, _) = symfun::divided_difference(values, &grad, &hess, i, j);
                total += dd * rotated[(i, j)] * rotated[(i, j)];
            }
        }
    }
    Ok(total)
}
