//! Elementary symmetric functions and the Hessian quotient `σ_{n,l}`.
//!
//! All `S_k` values are produced by the prefix recurrence
//! `S_k^{(m)} = S_k^{(m-1)} + λ_m S_{k-1}^{(m-1)}`. Restricted functions
//! `S_{k;i}`, `S_{k;ij}` rerun the recurrence with the omitted entries set to
//! zero. Out-of-range orders follow the convention `S_k = 0` for `k < 0` or
//! `k > n`, and `S_0 = 1`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest supported dimension.
pub const MAX_DIM: usize = 12;

/// Relative tolerance below which an eigenvalue counts as on the cone boundary.
pub const CONE_TOL: f64 = 1e-14;

/// Relative gap below which two eigenvalues are treated as coincident and
/// divided differences are replaced by their analytic limit.
pub const DEGENERATE_GAP: f64 = 1e-8;

/// Ordered eigenvalue vector, the argument of `f`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
}

impl Spectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 || values.len() > MAX_DIM {
            return Err(Error::InvalidDimension(values.len()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Euclidean norm `|λ|`.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Rejects spectra with an entry `λ_i <= CONE_TOL * max|λ|` (or NaN).
    pub fn check_positive_cone(&self) -> Result<()> {
        let floor = CONE_TOL * self.max_abs();
        for (index, &value) in self.values.iter().enumerate() {
            if !(value > floor) {
                return Err(Error::ConeViolation { index, value });
            }
        }
        Ok(())
    }

    pub fn sorted_descending(&self) -> Spectrum {
        let mut values = self.values.clone();
        values.sort_by(|a, b| b.total_cmp(a));
        Spectrum { values }
    }

    pub fn scaled(&self, t: f64) -> Spectrum {
        Spectrum {
            values: self.values.iter().map(|v| v * t).collect(),
        }
    }
}

/// Parameters of `σ_{n,l}`; `l = 0` gives the `n`-th root of the determinant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "QuotientFields")]
pub struct QuotientParams {
    n: usize,
    l: usize,
}

/// Unvalidated form of [`QuotientParams`] read from configuration files.
#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct QuotientFields {
    n: usize,
    l: usize,
}

impl TryFrom<QuotientFields> for QuotientParams {
    type Error = Error;

    fn try_from(f: QuotientFields) -> Result<Self> {
        Self::new(f.n, f.l)
    }
}

impl QuotientParams {
    pub fn new(n: usize, l: usize) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&n) || l >= n {
            return Err(Error::InvalidQuotient { n, l });
        }
        Ok(Self { n, l })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// The exponent `1/(n-l)`.
    pub fn exponent(&self) -> f64 {
        1.0 / (self.n - self.l) as f64
    }

    fn check(&self, lambda: &Spectrum) -> Result<()> {
        if lambda.n() != self.n {
            return Err(Error::InvalidQuotient {
                n: lambda.n(),
                l: self.l,
            });
        }
        lambda.check_positive_cone()
    }
}

/// Level band `Γ_{μ1,μ2} = {μ1 <= f <= μ2}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConeBand {
    pub mu1: f64,
    pub mu2: f64,
}

impl ConeBand {
    pub fn new(mu1: f64, mu2: f64) -> Result<Self> {
        if !(mu1 > 0.0 && mu1 <= mu2 && mu2.is_finite()) {
            return Err(Error::InvalidConeBand { mu1, mu2 });
        }
        Ok(Self { mu1, mu2 })
    }

    pub fn contains(&self, value: f64) -> bool {
        self.mu1 <= value && value <= self.mu2
    }
}

/// All of `S_0, ..., S_n` of `values` by the prefix recurrence.
pub fn elem_sym_all(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut s = vec![0.0; n + 1];
    s[0] = 1.0;
    for (m, &lam) in values.iter().enumerate() {
        for k in (1..=m + 1).rev() {
            s[k] += lam * s[k - 1];
        }
    }
    s
}

/// Reads `S_k` from a table produced by [`elem_sym_all`], honouring the
/// out-of-range convention.
#[inline]
fn at(table: &[f64], k: i64) -> f64 {
    if k < 0 || k as usize >= table.len() {
        0.0
    } else {
        table[k as usize]
    }
}

/// `S_k(λ)`.
pub fn elem_sym(lambda: &Spectrum, k: i64) -> f64 {
    at(&elem_sym_all(lambda.values()), k)
}

/// `S_k` of `λ` with the entries listed in `omit` (0-based) set to zero.
pub fn elem_sym_restricted(lambda: &Spectrum, k: i64, omit: &[usize]) -> Result<f64> {
    let n = lambda.n();
    for (pos, &i) in omit.iter().enumerate() {
        if i >= n || omit[..pos].contains(&i) {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
    }
    Ok(at(&restricted_table(lambda.values(), omit), k))
}

fn restricted_table(values: &[f64], omit: &[usize]) -> Vec<f64> {
    let zeroed: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| if omit.contains(&i) { 0.0 } else { v })
        .collect();
    elem_sym_all(&zeroed)
}

/// Cached symmetric-function tables for one spectrum.
struct Tables {
    n: usize,
    l: i64,
    full: Vec<f64>,
    single: Vec<Vec<f64>>,
}

impl Tables {
    fn new(values: &[f64], l: usize) -> Self {
        let n = values.len();
        Self {
            n,
            l: l as i64,
            full: elem_sym_all(values),
            single: (0..n).map(|i| restricted_table(values, &[i])).collect(),
        }
    }

    fn s(&self, k: i64) -> f64 {
        at(&self.full, k)
    }

    fn s1(&self, k: i64, i: usize) -> f64 {
        at(&self.single[i], k)
    }

    /// `S_n / S_l`.
    fn ratio(&self) -> f64 {
        self.s(self.n as i64) / self.s(self.l)
    }

    /// The bracket of the gradient formula:
    /// `S_{n-1;i}/S_l - S_n S_{l-1;i}/S_l^2`.
    fn grad_bracket(&self, i: usize) -> f64 {
        let n = self.n as i64;
        let sl = self.s(self.l);
        self.s1(n - 1, i) / sl - self.s(n) * self.s1(self.l - 1, i) / (sl * sl)
    }
}

/// `σ_{n,l}(λ) = (S_n/S_l)^{1/(n-l)}`.
pub fn sigma_quotient(lambda: &Spectrum, p: QuotientParams) -> Result<f64> {
    p.check(lambda)?;
    let table = elem_sym_all(lambda.values());
    Ok((table[p.n] / table[p.l]).powf(p.exponent()))
}

/// First derivatives `f_i = ∂σ_{n,l}/∂λ_i`.
pub fn sigma_grad(lambda: &Spectrum, p: QuotientParams) -> Result<Vec<f64>> {
    p.check(lambda)?;
    Ok(grad_from_tables(&Tables::new(lambda.values(), p.l), p))
}

fn grad_from_tables(t: &Tables, p: QuotientParams) -> Vec<f64> {
    let a = p.exponent();
    let pre = a * t.ratio().powf(a - 1.0);
    (0..t.n).map(|i| pre * t.grad_bracket(i)).collect()
}

/// Full Hessian `f_ij` of `σ_{n,l}`.
///
/// Off-diagonal entries use the mixed-derivative formula built from the
/// doubly restricted functions `S_{k;ij}`; the diagonal comes from
/// differentiating the gradient formula once more in `λ_i`.
pub fn sigma_hess(lambda: &Spectrum, p: QuotientParams) -> Result<DMatrix<f64>> {
    p.check(lambda)?;
    let values = lambda.values();
    let t = Tables::new(values, p.l);
    let n = t.n as i64;
    let l = t.l;
    let a = p.exponent();
    let q = t.ratio();
    let sl = t.s(l);
    let sn = t.s(n);
    let outer = (a - 1.0) * a * q.powf(a - 2.0);
    let inner = a * q.powf(a - 1.0);

    let mut h = DMatrix::zeros(t.n, t.n);
    for i in 0..t.n {
        let bi = t.grad_bracket(i);
        // (S_l S_{n-1;i} - S_{l-1;i} S_n) / S_l^2 equals the gradient bracket.
        let sli = t.s1(l - 1, i);
        let diag = outer * bi * bi
            + 2.0 * inner * (sli * sli * sn - sl * sli * t.s1(n - 1, i)) / (sl * sl * sl);
        h[(i, i)] = diag;
        for j in (i + 1)..t.n {
            let pair = restricted_table(values, &[i, j]);
            let bj = t.grad_bracket(j);
            let slj = t.s1(l - 1, j);
            let second = at(&pair, n - 2) / sl
                - t.s1(n - 1, i) * slj / (sl * sl)
                - t.s1(n - 1, j) * sli / (sl * sl)
                - sn * at(&pair, l - 2) / (sl * sl)
                + 2.0 * sn * sli * slj / (sl * sl * sl);
            let v = outer * bi * bj + inner * second;
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// `(f_i - f_j)/(λ_i - λ_j)`, or its limit `f_ii - f_ij` when the two
/// eigenvalues coincide to relative accuracy [`DEGENERATE_GAP`].
pub(crate) fn divided_difference(
    values: &[f64],
    grad: &[f64],
    hess: &DMatrix<f64>,
    i: usize,
    j: usize,
) -> (f64, bool) {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gap = values[i] - values[j];
    if gap.abs() <= DEGENERATE_GAP * scale {
        (hess[(i, i)] - hess[(i, j)], true)
    } else {
        ((grad[i] - grad[j]) / gap, false)
    }
}

/// Residuals of the structural identities satisfied by `S_k` and `σ_{n,l}`.
///
/// Each residual is `|lhs - rhs| / max(1, |lhs| + |rhs|)`, which is the plain
/// absolute residual whenever the terms are of unit size or smaller.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct IdentityResiduals {
    /// `Σ_i S_{k;i} = (n-k) S_k`, worst over `k = 0..=n`.
    pub restricted_sum: f64,
    /// `S_k = S_{k-1;i} λ_i + S_{k;i}`, worst over `i` and `k`.
    pub restricted_split: f64,
    /// `Σ_i S_{k-1;i} λ_i = k S_k`, worst over `k`.
    pub weighted_sum: f64,
    /// `Σ_i f_i λ_i^2 = (l+1)/(n-l) σ S_{l+1}/S_l`.
    pub weighted_square: f64,
    /// `Σ_i f_i` against its closed form.
    pub trace: f64,
    /// Euler identity `Σ_i f_i λ_i = σ`.
    pub euler: f64,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        [
            self.restricted_sum,
            self.restricted_split,
            self.weighted_sum,
            self.weighted_square,
            self.trace,
            self.euler,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn residual(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / (lhs.abs() + rhs.abs()).max(1.0)
}

pub fn verify_identities(lambda: &Spectrum, p: QuotientParams) -> Result<IdentityResiduals> {
    p.check(lambda)?;
    let values = lambda.values();
    let t = Tables::new(values, p.l);
    let n = t.n;
    let mut out = IdentityResiduals::default();

    for k in 0..=(n as i64) {
        let sum: f64 = (0..n).map(|i| t.s1(k, i)).sum();
        out.restricted_sum = out
            .restricted_sum
            .max(residual(sum, (n as i64 - k) as f64 * t.s(k)));

        let weighted: f64 = (0..n).map(|i| t.s1(k - 1, i) * values[i]).sum();
        out.weighted_sum = out.weighted_sum.max(residual(weighted, k as f64 * t.s(k)));

        for (i, &lam) in values.iter().enumerate() {
            out.restricted_split = out
                .restricted_split
                .max(residual(t.s(k), t.s1(k - 1, i) * lam + t.s1(k, i)));
        }
    }

    let grad = grad_from_tables(&t, p);
    let a = p.exponent();
    let q = t.ratio();
    let sigma = q.powf(a);
    let (nn, l) = (n as i64, p.l as i64);
    let sl = t.s(l);

    let sq: f64 = grad.iter().zip(values).map(|(g, v)| g * v * v).sum();
    let sq_rhs = (l + 1) as f64 / (nn - l) as f64 * sigma * t.s(l + 1) / sl;
    out.weighted_square = residual(sq, sq_rhs);

    let trace: f64 = grad.iter().sum();
    let trace_rhs = a
        * q.powf(a - 1.0)
        * (t.s(nn - 1) * sl - (nn - l + 1) as f64 * t.s(nn) * t.s(l - 1))
        / (sl * sl);
    out.trace = residual(trace, trace_rhs);

    let euler: f64 = grad.iter().zip(values).map(|(g, v)| g * v).sum();
    out.euler = residual(euler, sigma);
    Ok(out)
}

/// Signed margins of the inequalities satisfied by `σ_{n,l}` on the positive
/// cone, oriented so that a margin `>= 0` is a pass.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct InequalityMargins {
    /// Newton inequality at `k = n`, as `1 - lhs/rhs` (`l >= 1` only).
    pub newton: Option<f64>,
    /// `Σ f_i` minus its lower bound `(1/n) σ S_{n-1}/S_n`.
    pub trace_lower: f64,
    /// Upper bound `(1/(n-l)) σ S_{n-1}/S_n` minus `Σ f_i`.
    pub trace_upper: f64,
    /// `-λ_1 f_11 - f_1` for descending `λ` (`l >= 1` only).
    pub leading_curvature: Option<f64>,
    /// `-2 λ_1 (f_1 - f_r)/(λ_1 - λ_r) - f_r`, for `r = 2..=n`.
    pub leading_quotient: Vec<f64>,
    /// `-(f_i - f_j)/(λ_i - λ_j)` for every pair `i < j`.
    pub divided_differences: Vec<f64>,
    /// Set when some pair of eigenvalues coincided and a limit was used.
    pub degenerate: bool,
}

impl InequalityMargins {
    pub fn min_margin(&self) -> f64 {
        let mut m = self.trace_lower.min(self.trace_upper);
        for v in self
            .newton
            .iter()
            .chain(self.leading_curvature.iter())
            .chain(self.leading_quotient.iter())
            .chain(self.divided_differences.iter())
        {
            m = m.min(*v);
        }
        m
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn verify_inequalities(lambda: &Spectrum, p: QuotientParams) -> Result<InequalityMargins> {
    p.check(lambda)?;
    let sorted = lambda.sorted_descending();
    let values = sorted.values();
    let t = Tables::new(values, p.l);
    let grad = grad_from_tables(&t, p);
    let hess = sigma_hess(&sorted, p)?;
    let n = t.n;
    let (nn, l) = (n as i64, p.l as i64);
    let sigma = t.ratio().powf(p.exponent());
    let mut out = InequalityMargins::default();

    if p.l >= 1 {
        let lhs = t.s(nn) * t.s(l - 1) / binomial(n, p.l - 1);
        let rhs = t.s(nn - 1) / binomial(n, n - 1) * t.s(l) / binomial(n, p.l);
        out.newton = Some(1.0 - lhs / rhs);
    }

    let trace: f64 = grad.iter().sum();
    let base = sigma * t.s(nn - 1) / t.s(nn);
    out.trace_lower = trace - base / n as f64;
    out.trace_upper = base / (n - p.l) as f64 - trace;

    if p.l >= 1 {
        out.leading_curvature = Some(-values[0] * hess[(0, 0)] - grad[0]);
    }
    for r in 1..n {
        let (dd, degenerate) = divided_difference(values, &grad, &hess, 0, r);
        out.degenerate |= degenerate;
        out.leading_quotient.push(-2.0 * values[0] * dd - grad[r]);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let (dd, degenerate) = divided_difference(values, &grad, &hess, i, j);
            out.degenerate |= degenerate;
            out.divided_differences.push(-dd);
        }
    }
    Ok(out)
}
