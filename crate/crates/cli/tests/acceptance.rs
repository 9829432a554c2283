//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use qtransport::cost::{
    self, classify_a3, A3Class, BallGrid, BoundingBox, CostModel, LowerHemisphere, PerturbedQuadratic,
};
use qtransport::estimates::{bounds_report, DiagnosticsReport, Thresholds};
use qtransport::geometry::{relative_c_convexity, ConvexityRole, DomainSpec, Shape};
use qtransport::solver::{
    continuation_run, BExpr, Grid, GridSize, Problem, ProblemSpec, RunOutput, SeedKind, Tolerances,
};
use qtransport::symfun::QuotientParams;
use qtransport::verify::{run_suites, SuiteResult, VerifyConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 7;

struct Ledger {
    lines: Vec<(usize, bool, String)>,
}

impl Ledger {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        println!("criterion {id:>2}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((id, pass, detail));
    }
}

fn suite<'a>(suites: &'a [SuiteResult], name: &str) -> &'a SuiteResult {
    suites.iter().find(|s| s.suite == name).unwrap_or_else(|| panic!("suite {name} missing"))
}

fn describe(s: &SuiteResult) -> String {
    format!("{} worst {:.3e} (tol {:.0e}, {} samples)", s.suite, s.worst_value, s.tolerance, s.samples)
}

fn unit_disc() -> DomainSpec {
    DomainSpec::disc([0.0, 0.0], 1.0).unwrap()
}

fn problem(target: DomainSpec, rhs: BExpr, size: GridSize) -> Problem {
    Problem::new(ProblemSpec {
        model: CostModel::quadratic(2, 4.0),
        source: unit_disc(),
        target,
        rhs,
        quotient: QuotientParams::new(2, 1).unwrap(),
        grid: size,
        tolerances: Tolerances::default(),
        seed: SeedKind::default(),
        check_seed: SEED,
    })
    .unwrap()
}

/// `u* = |x|²` maps the unit disc onto itself with `w = I`.
fn disc_problem(size: GridSize) -> Problem {
    let rhs = BExpr::Product {
        factors: vec![BExpr::Constant { value: 0.5 }, BExpr::ExpZMinusNorm2 {}],
    };
    problem(unit_disc(), rhs, size)
}

/// `u* = x² + 0.8 y²` maps the unit disc onto the (1, 0.6) ellipse with
/// `w = diag(1, 0.6)`.
fn ellipse_problem(size: GridSize) -> Problem {
    let rhs = BExpr::Product {
        factors: vec![
            BExpr::Constant { value: 0.375 },
            BExpr::ExpZMinusQuadratic { a: 1.0, b: 0.8 },
        ],
    };
    problem(DomainSpec::ellipse([0.0, 0.0], 1.0, 0.6).unwrap(), rhs, size)
}

struct Solved {
    size: GridSize,
    h: f64,
    run: RunOutput,
    error: f64,
    report: DiagnosticsReport,
}

fn solve(p: &Problem, exact: impl Fn(f64, f64) -> f64) -> Result<Solved, String> {
    let run = continuation_run(p).map_err(|f| format!("failed at t = {} in {}: {}", f.t, f.stage, f.error))?;
    let error = run
        .field()
        .values
        .iter()
        .zip(&p.grid.nodes)
        .map(|(u, n)| (u - exact(n.x.x, n.x.y)).abs())
        .fold(0.0, f64::max);
    let report = bounds_report(run.field(), p, &Thresholds::default()).map_err(|e| e.to_string())?;
    Ok(Solved {
        size: p.grid.size,
        h: p.grid.h,
        run,
        error,
        report,
    })
}

fn sizes() -> [GridSize; 3] {
    [GridSize::new(17, 32), GridSize::new(33, 64), GridSize::new(65, 128)]
}

#[test]
fn acceptance() {
    let mut ledger = Ledger { lines: Vec::new() };

    // Criteria 1 to 4 share one full-budget verification run; its total
    // runtime bounds each suite's runtime.
    let cfg = VerifyConfig {
        seed: SEED,
        ..VerifyConfig::default()
    };
    let start = Instant::now();
    let suites = run_suites(&cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let s = suite(&suites, "identities");
    ledger.record(
        1,
        s.pass && s.samples >= 10_000 && s.tolerance == 1e-10 && elapsed <= 10.0,
        format!("{}; {elapsed:.2} s", describe(s)),
    );

    let g = suite(&suites, "gradient");
    let h = suite(&suites, "hessian");
    let c = suite(&suites, "concavity");
    let ok = [g, h, c].iter().all(|s| s.pass && s.samples >= 1_000)
        && g.tolerance == 1e-6
        && h.tolerance == 1e-6
        && c.tolerance == 1e-10
        && elapsed <= 30.0;
    ledger.record(2, ok, format!("{}; {}; {}", describe(g), describe(h), describe(c)));

    let s = suite(&suites, "inequalities");
    ledger.record(
        3,
        s.pass && s.samples >= 10_000 && s.tolerance == 1e-12 && elapsed <= 20.0,
        format!("{} (worst is the most negative margin)", describe(s)),
    );

    let a = suite(&suites, "contraction");
    let b = suite(&suites, "contraction-concavity");
    ledger.record(
        4,
        a.pass && b.pass && a.samples >= 500 && a.tolerance == 1e-5 && b.tolerance == 1e-10,
        format!("{}; {}", describe(a), describe(b)),
    );

    // Criterion 5: MTW on the quadratic cost, its classification, and a
    // reproducible classification of the perturbed cost.
    let mtw = suite(&suites, "mtw-quadratic");
    let quad = CostModel::quadratic(2, 4.0);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let quad_class = classify_a3(&quad, 2_000, &quad.x_box, &quad.y_box, &mut rng).unwrap();
    let unit = BoundingBox::around(&[0.0, 0.0], 1.0);
    let perturbed = CostModel::new(
        Arc::new(PerturbedQuadratic { dim: 2, epsilon: 1e-2 }),
        unit.clone(),
        unit.clone(),
    );
    let classify_perturbed = || {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        classify_a3(&perturbed, 2_000, &unit, &unit, &mut rng).unwrap()
    };
    let (p1, p2) = (classify_perturbed(), classify_perturbed());
    let witness_ok = [&p1.witness.x, &p1.witness.y, &p1.witness.xi, &p1.witness.eta]
        .iter()
        .all(|v| v.len() == 2 && v.iter().all(|c| c.is_finite()));
    ledger.record(
        5,
        mtw.pass
            && mtw.samples >= 1_000
            && mtw.tolerance == 1e-10
            && quad_class.classification == A3Class::A3wOnly
            && p1 == p2
            && witness_ok,
        format!(
            "{}; quadratic {}; perturbed {} (min {:.3e}) twice identical: {}",
            describe(mtw),
            quad_class.classification,
            p1.classification,
            p1.min_value,
            p1 == p2
        ),
    );

    // Criterion 6: c-transform of the lower hemisphere over B_½(0).
    let r = 0.5;
    let y0 = DVector::from_vec(vec![0.0, 0.0]);
    let psi = LowerHemisphere {
        center: y0.clone(),
        radius: r,
    };
    let ball = BallGrid::polar(y0.clone(), r, 64, 64);
    let at_center = cost::c_transform(&quad, &psi, &ball, &y0).unwrap().value;
    let grid = Grid::new(&unit_disc(), GridSize::new(33, 64)).unwrap();
    let mut worst_offset: f64 = 0.0;
    for node in &grid.nodes {
        let x = DVector::from_column_slice(node.x.as_slice());
        let ct = cost::c_transform(&quad, &psi, &ball, &x).unwrap();
        worst_offset = worst_offset.max((&ct.argmax - &y0).norm());
    }
    ledger.record(
        6,
        (at_center - r).abs() <= 1e-3 && worst_offset <= r,
        format!(
            "u0(y0) = {at_center:.6} (error {:.2e}); max |T(x) - y0| = {worst_offset:.6} on {} nodes",
            (at_center - r).abs(),
            grid.len()
        ),
    );

    // Criterion 7: relative c-convexity of discs and of a three-lobed domain.
    let discs = relative_c_convexity(&unit_disc(), &unit_disc(), &quad, ConvexityRole::C).unwrap();
    let lobes = DomainSpec::new(
        [0.0, 0.0],
        Shape::RadialFourier {
            r0: 1.0,
            cos: vec![0.0, 0.0, 0.5],
            sin: vec![],
        },
        512,
    )
    .unwrap();
    let lobed = relative_c_convexity(&lobes, &unit_disc(), &quad, ConvexityRole::C).unwrap();
    ledger.record(
        7,
        (0.99..=1.01).contains(&discs.delta0) && lobed.delta0 < 0.0 && lobed.witness_x.iter().all(|v| v.is_finite()),
        format!(
            "discs delta0 = {:.6}; three lobes delta0 = {:.4} at ({:.4}, {:.4})",
            discs.delta0, lobed.delta0, lobed.witness_x[0], lobed.witness_x[1]
        ),
    );

    // Criterion 8: the shipped manufactured config through the binary, the
    // disc problem against u* = |x|², and the convergence order on the
    // ellipse companion, whose discretization error is not at roundoff.
    let start = Instant::now();
    let out = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/manufactured.json");
    let status = Command::new(env!("CARGO_BIN_EXE_qtransport"))
        .args(["solve", "--config", config.to_str().unwrap(), "--out"])
        .arg(out.path())
        .output()
        .unwrap()
        .status;
    let disc: Vec<Result<Solved, String>> =
        sizes().iter().map(|&s| solve(&disc_problem(s), |x, y| x * x + y * y)).collect();
    let ellipse: Vec<Result<Solved, String>> =
        sizes().iter().map(|&s| solve(&ellipse_problem(s), |x, y| x * x + 0.8 * y * y)).collect();
    let total = start.elapsed().as_secs_f64();
    let disc_ok = disc.iter().all(|d| d.as_ref().is_ok_and(|d| d.run.state.t == 1.0 && d.error <= d.h * d.h));
    let disc_err = disc.iter().flatten().map(|d| d.error).fold(0.0, f64::max);
    let orders: Vec<f64> = match ellipse.iter().map(Result::as_ref).collect::<Result<Vec<_>, _>>() {
        Ok(e) => e.windows(2).map(|w| (w[0].error / w[1].error).log2()).collect(),
        Err(_) => Vec::new(),
    };
    let errors: Vec<String> = ellipse
        .iter()
        .map(|e| match e {
            Ok(e) => format!("{}x{}: {:.3e}", e.size.n_r, e.size.n_theta, e.error),
            Err(m) => m.clone(),
        })
        .collect();
    ledger.record(
        8,
        status.code() == Some(0)
            && disc_ok
            && orders.len() == 2
            && orders.iter().all(|o| (1.7..=2.3).contains(o))
            && total <= 300.0,
        format!(
            "shipped config exit {:?}; disc max error {disc_err:.2e}; ellipse errors [{}] orders {:?}; {total:.1} s",
            status.code(),
            errors.join(", "),
            orders.iter().map(|o| format!("{o:.3}")).collect::<Vec<_>>()
        ),
    );

    // Criterion 9: diagnostics of the disc runs, with the Urbas decay
    // measured on the ellipse companion where it is above roundoff.
    let reports: Vec<&DiagnosticsReport> = disc.iter().flatten().map(|d| &d.report).collect();
    let oblique = reports.iter().map(|r| r.obliqueness_min).fold(f64::INFINITY, f64::min);
    let hausdorff_ok = disc.iter().flatten().all(|d| d.report.image_hausdorff <= 5.0 * d.h);
    let urbas: Vec<f64> = ellipse
        .iter()
        .flatten()
        .map(|e| e.report.urbas_residual_max.unwrap_or(f64::NAN))
        .collect();
    let ratios: Vec<f64> = urbas.windows(2).map(|w| w[1] / w[0]).collect();
    ledger.record(
        9,
        reports.len() == 3 && oblique >= 1.9 && hausdorff_ok && ratios.len() == 2 && ratios.iter().all(|q| *q <= 0.6),
        format!(
            "obliqueness min {oblique:.6}; hausdorff/h {:?}; urbas {:?} ratios {:?}",
            disc.iter()
                .flatten()
                .map(|d| format!("{:.3}", d.report.image_hausdorff / d.h))
                .collect::<Vec<_>>(),
            urbas.iter().map(|u| format!("{u:.3e}")).collect::<Vec<_>>(),
            ratios.iter().map(|q| format!("{q:.3}")).collect::<Vec<_>>()
        ),
    );

    // Criterion 10: every solve above checked its Jacobian.
    let runs: Vec<&RunOutput> = disc.iter().chain(&ellipse).flatten().map(|s| &s.run).collect();
    let worst_jacobian = runs.iter().map(|r| r.max_jacobian_error()).fold(0.0, f64::max);
    ledger.record(
        10,
        runs.len() == 6 && runs.iter().all(|r| !r.jacobian_checks.is_empty()) && worst_jacobian <= 1e-4,
        format!("{} solves, worst relative error {worst_jacobian:.3e}", runs.len()),
    );

    let failed: Vec<usize> = ledger.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
