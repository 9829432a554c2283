//! Randomized property suites over the symmetric-function, operator, cost and
//! geometry modules.
//!
//! Every suite draws from its own stream of one seeded generator, records the
//! sample that produced its worst margin, and passes when that margin is
//! nonnegative.

use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Rotation2};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{classify_a3, mtw_contraction, A3Class, CostModel, MtwSample, PerturbedQuadratic};
use crate::error::{Error, Result};
use crate::geometry::{boundary_frame, DomainSpec, Shape};
use crate::operator::{eval_f, second_contraction, ModifiedHessian};
use crate::symfun::{
    elem_sym_all, sigma_grad, sigma_hess, sigma_quotient, verify_identities, verify_inequalities, QuotientParams,
    Spectrum, MAX_DIM,
};

/// Identity residual limit.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Relative error limit of the gradient and Hessian against central differences.
pub const DERIVATIVE_TOL: f64 = 1e-6;
/// Largest admissible Hessian eigenvalue.
pub const CONCAVITY_TOL: f64 = 1e-10;
/// Lowest admissible inequality margin.
pub const INEQUALITY_TOL: f64 = 1e-12;
/// Relative error limit of the second contraction against differences of `F`.
pub const CONTRACTION_TOL: f64 = 1e-5;
/// Relative tolerance of exact invariances.
pub const INVARIANCE_TOL: f64 = 1e-12;
/// MTW contraction limit for the quadratic cost.
pub const MTW_TOL: f64 = 1e-10;
/// Growth factor allowed over the ray family.
pub const GROWTH_FACTOR: f64 = 10.0;
/// Tolerance of the frame covariance check.
pub const FRAME_TOL: f64 = 1e-10;

/// Sample counts and ranges of the suites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Set by the caller rather than read from configuration files, so one
    /// seed drives every random stream of a run.
    #[serde(skip)]
    pub seed: u64,
    /// Smallest dimension `n` sampled.
    pub n_min: usize,
    /// Largest dimension `n` sampled.
    pub n_max: usize,
    pub identity_samples: usize,
    pub derivative_samples: usize,
    pub inequality_samples: usize,
    pub contraction_samples: usize,
    pub invariance_samples: usize,
    pub growth_points: usize,
    pub mtw_samples: usize,
    pub classify_budget: usize,
    pub frame_samples: usize,
    /// Harness self-test: flips the sign of one term of the Euler identity.
    pub inject_fault: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_min: 2,
            n_max: 8,
            identity_samples: 10_000,
            derivative_samples: 1_000,
            inequality_samples: 10_000,
            contraction_samples: 500,
            invariance_samples: 1_000,
            growth_points: 64,
            mtw_samples: 1_000,
            classify_budget: 2_000,
            frame_samples: 200,
            inject_fault: false,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_min < 2 || self.n_max > MAX_DIM || self.n_min > self.n_max {
            return Err(Error::InvalidProblem(format!(
                "dimension range must satisfy 2 <= n_min <= n_max <= {MAX_DIM} (got {}..={})",
                self.n_min, self.n_max
            )));
        }
        let counts = [
            ("identity_samples", self.identity_samples),
            ("derivative_samples", self.derivative_samples),
            ("inequality_samples", self.inequality_samples),
            ("contraction_samples", self.contraction_samples),
            ("invariance_samples", self.invariance_samples),
            ("growth_points", self.growth_points),
            ("mtw_samples", self.mtw_samples),
            ("classify_budget", self.classify_budget),
            ("frame_samples", self.frame_samples),
        ];
        for (name, count) in counts {
            if count == 0 {
                return Err(Error::InvalidProblem(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Outcome of one suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub suite: String,
    pub samples: usize,
    /// Worst observed quantity (residual, error or margin, per suite).
    pub worst_value: f64,
    pub tolerance: f64,
    /// Distance to failure; the suite passes when this is nonnegative.
    pub worst_margin: f64,
    pub pass: bool,
    /// Data of the worst sample, enough to replay it.
    pub worst_sample: Vec<f64>,
    pub detail: Option<String>,
}

/// Tracks the worst sample of a suite in which smaller values are better.
struct Worst {
    value: f64,
    sample: Vec<f64>,
}

impl Worst {
    fn new() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            sample: Vec::new(),
        }
    }

    fn update(&mut self, value: f64, sample: impl FnOnce() -> Vec<f64>) {
        if value > self.value || value.is_nan() {
            self.value = if value.is_nan() { f64::INFINITY } else { value };
            self.sample = sample();
        }
    }

    /// Result of an upper-bound suite: pass iff `value <= tolerance`.
    fn upper(self, suite: &str, samples: usize, tolerance: f64) -> SuiteResult {
        let margin = tolerance - self.value;
        SuiteResult {
            suite: suite.into(),
            samples,
            worst_value: self.value,
            tolerance,
            worst_margin: margin,
            pass: margin >= 0.0,
            worst_sample: self.sample,
            detail: None,
        }
    }
}

fn stream(cfg: &VerifyConfig, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    rng
}

fn random_params<R: Rng + ?Sized>(cfg: &VerifyConfig, rng: &mut R) -> QuotientParams {
    let n = rng.random_range(cfg.n_min..=cfg.n_max);
    let l = rng.random_range(0..n);
    QuotientParams::new(n, l).expect("valid range")
}

fn uniform_spectrum<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.1..10.0)).collect()
}

fn replay(p: QuotientParams, lambda: &[f64]) -> Vec<f64> {
    let mut v = vec![p.n() as f64, p.l() as f64];
    v.extend_from_slice(lambda);
    v
}

fn identities(cfg: &VerifyConfig) -> Result<SuiteResult> {
    let mut rng = stream(cfg, 0);
    let mut worst = Worst::new();
    for _ in 0..cfg.identity_samples {
        let p = random_params(cfg, &mut rng);
        let values = uniform_spectrum(p.n(), &mut rng);
        let lambda = Spectrum::new(values.clone())?;
        let mut r = verify_identities(&lambda, p)?.max();
        // Euler identity recomputed term by term; the fault flips one term.
        let grad = sigma_grad(&lambda, p)?;
        let sigma = sigma_quotient(&lambda, p)?;
        let euler: f64 = grad
            .iter()
            .zip(&values)
            .enumerate()
            .map(|(i, (g, v))| if cfg.inject_fault && i == 0 { -g * v } else { g * v })
            .sum();
        r = r.max((euler - sigma).abs() / sigma.abs().max(1.0));
        worst.update(r, || replay(p, &values));
    }
    Ok(worst.upper("identities", cfg.identity_samples, IDENTITY_TOL))
}

fn gradient(cfg: &VerifyConfig) -> Result<SuiteResult> {
    let mut rng = stream(cfg, 1);
    let mut worst = Worst::new();
    for _ in 0..cfg.derivative_samples {
        let p = random_params(cfg, &mut rng);
        let values = uniform_spectrum(p.n(), &mut rng);
        let g = sigma_grad(&Spectrum::new(values.clone())?, p)?;
        let mut err: f64 = 0.0;
        for i in 0..values.len() {
            let h = 1e-5 * values[i];
            let mut plus = values.clone();
            let mut minus = values.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (sigma_quotient(&Spectrum::new(plus)?, p)? - sigma_quotient(&Spectrum::new(minus)?, p)?)
                / (2.0 * h);
            err = err.max((fd - g[i]).abs());
        }
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst.update(err / scale, || replay(p, &values));
    }
    Ok(worst.upper("gradient", cfg.derivative_samples, DERIVATIVE_TOL))
}

fn hessian(cfg: &VerifyConfig) -> Result<SuiteResult> {
    let mut rng = stream(cfg, 2);
    let mut worst = Worst::new();
    for _ in 0..cfg.derivative_samples {
        let p = random_params(cfg, &mut rng);
        let values = uniform_spectrum(p.n(), &mut rng);
        let hess = sigma_hess(&Spectrum::new(values.clone())?, p)?;
        let mut err: f64 = 0.0;
        for j in 0..values.len() {
            let h = 1e-5 * values[j];
            let mut plus = values.clone();
            let mut minus = values.clone();
            plus[j] += h;
            minus[j] -= h;
            let gp = sigma_grad(&Spectrum::new(plus)?, p)?;
            let gm = sigma_grad(&Spectrum::new(minus)?, p)?;
            for i in 0..values.len() {
                err = err.max(((gp[i] - gm[i]) / (2.0 * h) - hess[(i, j)]).abs());
            }
        }
        worst.update(err / hess.amax(), || replay(p, &values));
    }
    Ok(worst.upper("hessian", cfg.derivative_samples, DERIVATIVE_TOL))
}

fn concavity(cfg: &VerifyConfig) -> Result<SuiteResult> {
    let mut rng = stream(cfg, 3);
    let mut worst = Worst::new();
    for _ in 0..cfg.derivative_samples {
        let p = random_params(cfg, &mut rng);
        let values = uniform_spectrum(p.n(), &mut rng);
        let hess = sigma_hess(&Spectrum::new(values.clone())?, p)?;
        let top = hess.symmetric_eigenvalues().max();
        worst.update(top, || replay(p, &values));
    }
    Ok(worst.upper("concavity", cfg.derivative_samples, CONCAVITY_TOL))
}

fn inequalities(cfg: &VerifyConfig) -> Result<SuiteResult> {
    let mut rng = stream(cfg, 4);
    let mut worst = Worst::new();
    let mut degenerate = 0usize;
    for k in 0..cfg.inequality_samples {
        let p = random_params(cfg, &mut rng);
        let mut values = uniform_spectrum(p.n(), &mut rng);
        // Every tenth sample repeats an eigenvalue to exercise the limit rule.
        if k % 10 == 0 {
            values[1] = values[0];
        }
        values.sort_by(|a, b| b.total_cmp(a));
        let m = verify_inequalities(&Spectrum::new(values.clone())?, p)?;
        degenerate += m.degenerate as usize;
        worst.update(-m.min_margin(), || replay(p, &values));
    }
    let mut r = worst.upper("inequalities", cfg.inequality_samples, INEQUALITY_TOL);
    r.worst_value = -r.worst_value;
    r.detail = Some(format!("{degenerate} samples used the coincident-eigenvalue limit"));
    Ok(r)
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    g.qr().q()
}

fn random_symmetric<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    (&g + g.transpose()) * 0.5
}

/// Spectrum in `[0.5, 5]` with one pair split by a gap between `1e-7` and
/// `1e-2`, or made equal, on two thirds of the samples.
fn clustered_spectrum<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let mut values: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..5.0)).collect();
    match k % 3 {
        0 => values[1] = values[0] + 10f64.powf(rng.random_range(-7.0..-2.0)),
        1 => values[1] = values[0],
        _ => {}
    }
    values
}

/// Second difference of `F` along `xi`, Richardson-extrapolated.
fn second_difference(m: &DMatrix<f64>, xi: &DMatrix<f64>, p: QuotientParams, h: f64) -> Result<f64> {
    let f = |s: f64| -> Result<f64> { eval_f(&ModifiedHessian::new(m + xi * s)?, p) };
    let f0 = f(0.0)?;
    let d = |h: f64| -> Result<f64> { Ok((f(h)? - 2.0 * f0 + f(-h)?) / (h * h)) };
    Ok((4.0 * d(0.5 * h)? - d(h)?) / 3.0)
}

fn contraction(cfg: &VerifyConfig) -> Result<(SuiteResult, SuiteResult)> {
    let mut rng = stream(cfg, 5);
    let mut accuracy = Worst::new();
    let mut sign = Worst::new();
    let n_max = cfg.n_max.min(5);
    for k in 0..cfg.contraction_samples {
        let n = rng.random_range(cfg.n_min..=n_max);
        let p = QuotientParams::new(n, rng.random_range(0..n))?;
        let values = clustered_spectrum(n, k, &mut rng);
        let q = random_orthogonal(n, &mut rng);
        let m = &q * DMatrix::from_diagonal(&DVector::from_vec(values.clone())) * q.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let xi = random_symmetric(n, &mut rng);
        let xi_norm2 = xi.norm_squared();
        let exact = second_contraction(&ModifiedHessian::new(m.clone())?, p, &xi)?;
        let min_value = values.iter().copied().fold(f64::INFINITY, f64::min);
        let h = 0.02 * min_value / xi.norm();
        let fd = second_difference(&m, &xi, p, h)?;
        let rel = (exact - fd).abs() / exact.abs().max(fd.abs()).max(f64::MIN_POSITIVE);
        let sample = || {
            let mut v = replay(p, &values);
            v.extend(xi.iter());
            v
        };
        accuracy.update(rel, sample);
        sign.update(exact / xi_norm2, sample);
    }
    Ok((
        accuracy.upper("contraction", cfg.contraction_samples, CONTRACTION_TOL),
        sign.upper("contraction-concavity", cfg.contraction_samples, CONCAVITY_TOL),
    ))
}

fn invariances(cfg: &VerifyConfig) -> Result<(SuiteResult, SuiteResult)> {
    let mut rng = stream(cfg, 6);
    let mut perm = Worst::new();
    let mut homog = Worst::new();
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    for _ in 0..cfg.invariance_samples {
        let p = random_params(cfg, &mut rng);
        let values = uniform_spectrum(p.n(), &mut rng);
        let lambda = Spectrum::new(values.clone())?;
        let sigma = sigma_quotient(&lambda, p)?;
        let grad = sigma_grad(&lambda, p)?;
        let s = elem_sym_all(&values);

        let mut order: Vec<usize> = (0..values.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let permuted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        let lp = Spectrum::new(permuted.clone())?;
        let mut e = rel(sigma, sigma_quotient(&lp, p)?);
        let gp = sigma_grad(&lp, p)?;
        for (k, &i) in order.iter().enumerate() {
            e = e.max(rel(grad[i], gp[k]));
        }
        for (a, b) in s.iter().zip(elem_sym_all(&permuted)) {
            e = e.max(rel(*a, b));
        }
        perm.update(e, || replay(p, &values));

        let t = 10f64.powf(rng.random_range(-2.0..2.0));
        let scaled = sigma_quotient(&lambda.scaled(t), p)?;
        homog.update(rel(scaled, t * sigma), || {
            let mut v = replay(p, &values);
            v.push(t);
            v
        });
    }
    Ok((
        perm.upper("permutation", cfg.invariance_samples, INVARIANCE_TOL),
        homog.upper("homogeneity", cfg.invariance_samples, INVARIANCE_TOL),
    ))
}

/// `(Σ f_i λ_i²) / (Σ f_i · |λ|)` on the ray `(s, 1, …, 1)`, normalised to
/// `σ = 1`.
fn growth_ratio(n: usize, p: QuotientParams, s: f64) -> Result<f64> {
    let mut values = vec![1.0; n];
    values[0] = s;
    let lambda = Spectrum::new(values)?;
    let lambda = lambda.scaled(1.0 / sigma_quotient(&lambda, p)?);
    let grad = sigma_grad(&lambda, p)?;
    let sq: f64 = grad.iter().zip(lambda.values()).map(|(f, v)| f * v * v).sum();
    let tr: f64 = grad.iter().sum();
    Ok(sq / (tr * lambda.norm()))
}

fn growth(cfg: &VerifyConfig) -> Result<SuiteResult> {
    let mut worst = Worst::new();
    let mut samples = 0;
    for n in cfg.n_min..=cfg.n_max {
        for l in 0..n {
            let p = QuotientParams::new(n, l)?;
            let base = growth_ratio(n, p, 1.0)?;
            for k in 0..cfg.growth_points {
                let s = 10f64.powf(3.0 * k as f64 / (cfg.growth_points.max(2) - 1) as f64);
                let r = growth_ratio(n, p, s)? / base;
                samples += 1;
                worst.update(r, || vec![n as f64, l as f64, s]);
            }
        }
    }
    Ok(worst.upper("growth", samples, GROWTH_FACTOR))
}

fn mtw_quadratic(cfg: &VerifyConfig) -> Result<SuiteResult> {
    let mut rng = stream(cfg, 7);
    let mut worst = Worst::new();
    for k in 0..cfg.mtw_samples {
        let model = CostModel::quadratic(2 + k % 2, 2.0);
        let s = MtwSample::random(&model.x_box, &model.y_box, &mut rng);
        let v = mtw_contraction(&model, &s)?;
        worst.update(v.abs(), || [s.x.clone(), s.y.clone(), s.xi.clone(), s.eta.clone()].concat());
    }
    Ok(worst.upper("mtw-quadratic", cfg.mtw_samples, MTW_TOL))
}

fn a3_classification(cfg: &VerifyConfig) -> Result<SuiteResult> {
    let quad = CostModel::quadratic(2, 2.0);
    let q = classify_a3(&quad, cfg.classify_budget, &quad.x_box, &quad.y_box, &mut stream(cfg, 8))?;
    // The unit box keeps `c_xy` of the perturbed cost well conditioned.
    let unit = CostModel::quadratic(2, 1.0);
    let perturbed = CostModel::new(
        Arc::new(PerturbedQuadratic { dim: 2, epsilon: 1e-2 }),
        unit.x_box.clone(),
        unit.y_box.clone(),
    );
    let run = || classify_a3(&perturbed, cfg.classify_budget, &unit.x_box, &unit.y_box, &mut stream(cfg, 9));
    let first = run()?;
    let second = run()?;
    let deterministic = first == second;
    let value = q.min_value.abs();
    let margin = crate::cost::A3_TOL - value;
    Ok(SuiteResult {
        suite: "a3-classification".into(),
        samples: cfg.classify_budget,
        worst_value: value,
        tolerance: crate::cost::A3_TOL,
        worst_margin: margin,
        pass: margin >= 0.0 && q.classification == A3Class::A3wOnly && deterministic,
        worst_sample: [q.witness.x, q.witness.y, q.witness.xi, q.witness.eta].concat(),
        detail: Some(format!(
            "quadratic: {}; perturbed (epsilon = 0.01): {} with min {:.6e}; repeat run identical: {deterministic}",
            q.classification, first.classification, first.min_value
        )),
    })
}

fn frame_covariance(cfg: &VerifyConfig) -> Result<SuiteResult> {
    let mut rng = stream(cfg, 10);
    let mut worst = Worst::new();
    for _ in 0..cfg.frame_samples {
        let cos: Vec<f64> = (0..3).map(|_| rng.random_range(-0.08..0.08)).collect();
        let sin: Vec<f64> = (0..3).map(|_| rng.random_range(-0.08..0.08)).collect();
        let base = Shape::RadialFourier { r0: 1.0, cos, sin };
        let c0 = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
        let c1 = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
        let phase = rng.random_range(0.0..TAU);
        let scale = rng.random_range(0.5..2.0);
        let a = DomainSpec::new(c0, base.clone(), 64)?;
        let b = DomainSpec::new(
            c1,
            Shape::Transformed {
                base: Box::new(base),
                scale,
                phase,
            },
            64,
        )?;
        let theta = rng.random_range(0.0..TAU);
        let fa = boundary_frame(&a, theta);
        let fb = boundary_frame(&b, theta - phase);
        let rot = Rotation2::new(-phase);
        let point = b.center() + scale * (rot * (fa.point - a.center()));
        let err = [
            (fb.point - point).norm(),
            (fb.normal - rot * fa.normal).norm(),
            (fb.tangent - rot * fa.tangent).norm(),
            (fb.curvature - fa.curvature / scale).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        worst.update(err, || vec![c0[0], c0[1], c1[0], c1[1], phase, scale, theta]);
    }
    Ok(worst.upper("frame-covariance", cfg.frame_samples, FRAME_TOL))
}

/// Runs every suite in a fixed order.
pub fn run_suites(cfg: &VerifyConfig) -> Result<Vec<SuiteResult>> {
    cfg.validate()?;
    let (contraction, contraction_sign) = contraction(cfg)?;
    let (permutation, homogeneity) = invariances(cfg)?;
    Ok(vec![
        identities(cfg)?,
        gradient(cfg)?,
        hessian(cfg)?,
        concavity(cfg)?,
        inequalities(cfg)?,
        contraction,
        contraction_sign,
        permutation,
        homogeneity,
        growth(cfg)?,
        mtw_quadratic(cfg)?,
        a3_classification(cfg)?,
        frame_covariance(cfg)?,
    ])
}
