//! Acceptance suite: one line per criterion, nonzero exit on any failure.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semilab::experiments::{
    blowup_sweep, check_sup_identity, run_exhaustion, scaling_bound_check, ExhaustionParams,
    GrowthVerdict,
};
use semilab::field::Field;
use semilab::geometry::{DomainMask, ExhaustionSequence, Grid};
use semilab::linalg::LinearSolverParams;
use semilab::nonlinearity::{MajorantPhi, Phi};
use semilab::operator::{assemble, check_m_matrix, AssembledOperator, CoefficientSet, SchemeOptions, SpatialFn};
use semilab::potential::{kato_norm_estimate, DirichletSolver};
use semilab::solver::{solve_semilinear_dirichlet, SemilinearParams};

const SEED: u64 = 20_240_917;

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(id: usize, name: &str, limit: Duration, run: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = run();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let ok = out.passed && in_time;
    println!(
        "{} [{id}] {name}: {} ({:.2} s, limit {} s{})",
        if ok { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        limit.as_secs(),
        if in_time { "" } else { ", over time" }
    );
    ok
}

fn unit_interval(n: usize) -> AssembledOperator {
    let g = Arc::new(Grid::cube(1, n, 0.0, 1.0).unwrap());
    let m = Arc::new(DomainMask::full(g).unwrap());
    assemble(m, &CoefficientSet::laplacian(1), SchemeOptions::default()).unwrap()
}

fn linear_oracle() -> Outcome {
    let op = unit_interval(129);
    let f = Field::constant(op.mask().clone(), 1.0);
    let phi = Phi::linear(SpatialFn::Const(1.0));
    let (u, _) = solve_semilinear_dirichlet(&op, &phi, &f, &SemilinearParams::default()).unwrap();
    let grid = op.mask().grid().clone();
    let err = u
        .interior_values()
        .map(|(i, v)| {
            let x = grid.coords(i)[0];
            (v - (x - 0.5).cosh() / 0.5f64.cosh()).abs()
        })
        .fold(0.0, f64::max);
    let h = 1.0 / 128.0;
    let bound = 5.0 * h * h;
    Outcome {
        passed: err <= bound,
        detail: format!("max error {err:.3e} (bound {bound:.3e})"),
    }
}

/// Random coefficients whose seven-point discretization is an M-matrix on a
/// uniform grid.
fn random_coefficients(rng: &mut ChaCha8Rng, dim: usize) -> CoefficientSet {
    let diag: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5..2.0)).collect();
    let amin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut a = vec![0.0; dim * dim];
    for i in 0..dim {
        a[i * dim + i] = diag[i];
    }
    let cap = if dim > 1 { 0.9 * amin / (dim - 1) as f64 } else { 0.0 };
    for i in 0..dim {
        for j in i + 1..dim {
            let v = rng.gen_range(-cap..cap);
            a[i * dim + j] = v;
            a[j * dim + i] = v;
        }
    }
    let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let c = -rng.gen_range(0.0..1.0);
    CoefficientSet::constant(&a, &b, c).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Arc<DomainMask> {
    let g = Arc::new(Grid::cube(dim, n, -1.0, 1.0).unwrap());
    if rng.gen_bool(0.5) {
        Arc::new(DomainMask::full(g).unwrap())
    } else {
        Arc::new(DomainMask::from_predicate(g, |x| x.iter().map(|v| v * v).sum::<f64>() < 0.9).unwrap())
    }
}

fn random_density(rng: &mut ChaCha8Rng, mask: &Arc<DomainMask>) -> Field {
    let scale = rng.gen_range(0.5..5.0);
    let k: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..3.0)).collect();
    Field::from_fn(mask.clone(), |_, x| {
        scale * (1.0 + x.iter().zip(&k).map(|(v, k)| (k * v).sin()).sum::<f64>().abs())
    })
}

fn random_boundary(rng: &mut ChaCha8Rng, mask: &Arc<DomainMask>) -> Field {
    let base = rng.gen_range(0.1..3.0);
    let mut vals = vec![f64::NAN; mask.grid().len()];
    for i in mask.closure_indices() {
        vals[i] = base * rng.gen_range(0.2..1.0);
    }
    Field::from_values(mask.clone(), vals).unwrap()
}

fn identity_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    let mut m_failures = 0;
    for inst in 0..20 {
        let dim = if inst % 2 == 0 { 2 } else { 3 };
        let n = if dim == 2 { rng.gen_range(9..=17) } else { rng.gen_range(7..=13) };
        let mask = random_mask(&mut rng, dim, n);
        let coeffs = random_coefficients(&mut rng, dim);
        let op = assemble(mask.clone(), &coeffs, SchemeOptions::default()).unwrap();
        if !check_m_matrix(&op).passed {
            m_failures += 1;
        }
        let p = random_density(&mut rng, &mask);
        let phi = match inst % 3 {
            0 => Phi::power(SpatialFn::sampled(&p), 0.5),
            1 => Phi::linear(SpatialFn::sampled(&p)),
            _ => MajorantPhi::build_default(&Phi::power(SpatialFn::sampled(&p), 0.5), &p)
                .unwrap()
                .into_phi(),
        };
        let f = random_boundary(&mut rng, &mask);
        let (_, rep) = solve_semilinear_dirichlet(&op, &phi, &f, &SemilinearParams::default()).unwrap();
        worst = worst.max(rep.identity_residual);
    }
    Outcome {
        passed: worst <= 1e-7 && m_failures == 0,
        detail: format!("20 instances, worst identity residual {worst:.3e} (bound 1e-7), {m_failures} non-M-matrix"),
    }
}

fn solve(op: &AssembledOperator, phi: &Phi, f: &Field) -> Field {
    solve_semilinear_dirichlet(op, phi, f, &SemilinearParams::default()).unwrap().0
}

/// `max (a − b)` over the closure of `a`'s mask restricted to `on`.
fn max_excess(a: &Field, b: &Field, on: &DomainMask) -> f64 {
    on.closure_indices()
        .map(|i| a.get(i) - b.get(i))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn order_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let tol = 1e-8;
    let mut checks = 0;
    let mut violations = 0;
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut record = |excess: f64, checks: &mut usize, violations: &mut usize| {
        *checks += 1;
        worst = worst.max(excess);
        if excess > tol {
            *violations += 1;
        }
    };
    while checks < 100 {
        let dim = rng.gen_range(2..=3);
        let n = if dim == 2 { rng.gen_range(9..=13) } else { rng.gen_range(7..=9) };
        let mask = random_mask(&mut rng, dim, n);
        let coeffs = random_coefficients(&mut rng, dim);
        let op = assemble(mask.clone(), &coeffs, SchemeOptions::default()).unwrap();
        let p = random_density(&mut rng, &mask);
        let phi = if rng.gen_bool(0.5) {
            Phi::power(SpatialFn::sampled(&p), rng.gen_range(0.3..1.0))
        } else {
            Phi::min_one(SpatialFn::sampled(&p))
        };
        let f = random_boundary(&mut rng, &mask);
        let g = f.map(|v| v + rng.gen_range(0.0..1.0));
        let uf = solve(&op, &phi, &f);
        let ug = solve(&op, &phi, &g);
        // Monotonicity in the boundary data.
        record(max_excess(&uf, &ug, &mask), &mut checks, &mut violations);

        // Supersolution bound: u = U f + G ξ, ξ ≥ 0, is a supersolution.
        let dir = DirichletSolver::new(&op, LinearSolverParams::default()).unwrap();
        let xi = random_density(&mut rng, &mask);
        let gxi = dir.green_apply(&xi).unwrap();
        let sup = uf.axpy(1.0, &gxi).unwrap();
        let from_sup = solve(&op, &phi, &sup);
        record(max_excess(&from_sup, &sup, &mask), &mut checks, &mut violations);
        // Subsolution bound: u = U f − G ξ.
        let sub = gxi.axpy(-1.0, &uf).unwrap();
        let from_sub = solve(&op, &phi, &sub);
        record(max_excess(&sub, &from_sub, &mask), &mut checks, &mut violations);

        // Domain monotonicity on a shrunken subdomain.
        let inner_flags: Vec<bool> = (0..mask.grid().len())
            .map(|i| {
                mask.is_interior(i)
                    && mask.grid().coords(i)[..dim].iter().all(|v| v.abs() < 0.55)
            })
            .collect();
        if let Ok(inner) = DomainMask::from_interior(mask.grid().clone(), &inner_flags) {
            let inner = Arc::new(inner);
            let inner_op = assemble(inner.clone(), &coeffs, SchemeOptions::default()).unwrap();
            let data = sup.restrict_to(inner.clone()).unwrap();
            let u_inner = solve(&inner_op, &phi, &data);
            let u_outer = solve(&op, &phi, &sup);
            record(max_excess(&u_outer, &u_inner, &inner), &mut checks, &mut violations);
        }

        // Convexity (concave φ).
        for lambda in [0.25, 0.5, 0.75] {
            let mix = f.scale(lambda).axpy(1.0, &g.scale(1.0 - lambda)).unwrap();
            let umix = solve(&op, &phi, &mix);
            let bound = uf.scale(lambda).axpy(1.0, &ug.scale(1.0 - lambda)).unwrap();
            record(max_excess(&umix, &bound, &mask), &mut checks, &mut violations);
        }
        // α-scaling.
        for alpha in [2.0, 10.0] {
            let ua = solve(&op, &phi, &f.scale(alpha));
            record(max_excess(&uf.scale(alpha), &ua, &mask), &mut checks, &mut violations);
        }
    }
    Outcome {
        passed: violations == 0,
        detail: format!("{checks} checks, {violations} violations, worst excess {worst:.3e} (tolerance 1e-8)"),
    }
}

fn majorant_suite() -> Outcome {
    let g = Arc::new(Grid::cube(2, 9, -1.0, 1.0).unwrap());
    let mask = Arc::new(DomainMask::full(g).unwrap());
    let p = Field::from_fn(mask.clone(), |_, x| 1.0 + x[0] * x[0] + 0.5 * x[1]);
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, phi) in [
        ("t^0.5", Phi::power(SpatialFn::sampled(&p), 0.5)),
        ("t^0.9", Phi::power(SpatialFn::sampled(&p), 0.9)),
        ("min(t,1)", Phi::min_one(SpatialFn::sampled(&p))),
    ] {
        match MajorantPhi::build_default(&phi, &p) {
            Ok(m) => {
                let r = m.report();
                let pass = r.domination_margin >= -1e-12
                    && r.concavity_margin >= -1e-9
                    && r.value_at_zero == 0.0
                    && r.constant_c.is_finite();
                ok &= pass;
                parts.push(format!(
                    "{name}: margin {:.2e}, concavity {:.2e}, C {:.3}",
                    r.domination_margin, r.concavity_margin, r.constant_c
                ));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    Outcome {
        passed: ok,
        detail: parts.join("; "),
    }
}

fn truncation_sequence(half_width: f64, spacing: f64, levels: &[f64]) -> ExhaustionSequence {
    let g = Arc::new(Grid::centered_cube(3, half_width, spacing).unwrap());
    let omega = Arc::new(DomainMask::full(g).unwrap());
    ExhaustionSequence::concentric_cubes(omega, &[0.0; 3], levels).unwrap()
}

/// Semilinear parameters with the preconditioned iterative linear solver.
fn iterative() -> SemilinearParams {
    SemilinearParams {
        linear: LinearSolverParams::iterative(1e-12),
        ..SemilinearParams::default()
    }
}

fn exhaustion_dichotomy() -> Outcome {
    let seq = truncation_sequence(8.0, 0.5, &[2.0, 4.0, 8.0]);
    let lap = CoefficientSet::laplacian(3);
    let params = ExhaustionParams {
        solver: iterative(),
        ..ExhaustionParams::default()
    };
    let decaying = Phi::power(SpatialFn::parse("(1+r)^(-3)").unwrap(), 0.5);
    let run = run_exhaustion(&seq, &lap, &decaying, 1.0, &[0.0; 3], &params).unwrap();
    let sups: Vec<f64> = run.levels.iter().map(|l| l.sup).collect();
    let increasing = sups.windows(2).all(|w| w[1] >= w[0]);
    let first = run.decreasing_ok && run.sup_estimate >= 0.9 && increasing;
    let flat = Phi::power(SpatialFn::Const(1.0), 0.5);
    let run1 = run_exhaustion(&seq, &lap, &flat, 1.0, &[0.0; 3], &params).unwrap();
    let origin: Vec<f64> = run1.levels.iter().map(|l| l.probe_value).collect();
    let decays = origin.windows(2).all(|w| w[1] <= 0.7 * w[0]);
    let verdict = check_sup_identity(&run1, &params).verdict;
    Outcome {
        passed: first && decays && run1.decreasing_ok,
        detail: format!(
            "decaying p: sups {:?}, decreasing {}; p = 1: v_c(0) {:?} ({:?})",
            sups.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            run.decreasing_ok,
            origin.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>(),
            verdict
        ),
    }
}

fn unit_ball(spacing: f64) -> AssembledOperator {
    let g = Arc::new(Grid::centered_cube(3, 1.0 + spacing, spacing).unwrap());
    let m = Arc::new(
        DomainMask::from_predicate(g, |x| x.iter().map(|v| v * v).sum::<f64>() < 1.0).unwrap(),
    );
    assemble(m, &CoefficientSet::laplacian(3), SchemeOptions::default()).unwrap()
}

fn blowup() -> Outcome {
    let op = unit_ball(0.0625);
    let ms = [1.0, 1e2, 1e4, 1e6, 1e7, 1e8];
    let params = iterative();
    let sub = blowup_sweep(
        &op,
        &Phi::power(SpatialFn::Const(1.0), 0.5),
        &ms,
        &[vec![0.0; 3]],
        &params,
    )
    .unwrap();
    let ratio = sub.min_ratio();
    let control = blowup_sweep(
        &op,
        &Phi::power(SpatialFn::Const(1.0), 3.0),
        &ms,
        &[vec![0.0; 3]],
        &params,
    )
    .unwrap();
    let inc = control.last_decade_increment[0];
    Outcome {
        passed: ratio >= 0.5
            && sub.verdict == GrowthVerdict::Diverges
            && control.verdict == GrowthVerdict::Saturates
            && inc < 0.01,
        detail: format!(
            "sublinear min u_m/m {ratio:.3} (≥ 0.5); cubic control last-decade increment {inc:.2e} (< 1e-2)"
        ),
    }
}

fn scaling() -> Outcome {
    let seq = truncation_sequence(4.0, 0.5, &[1.0, 2.0, 4.0]);
    let lap = CoefficientSet::laplacian(3);
    let params = ExhaustionParams::default();
    let phi = Phi::power(SpatialFn::parse("(1+r)^(-3)").unwrap(), 0.5);
    let base = run_exhaustion(&seq, &lap, &phi, 1.0, &[0.0; 3], &params).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for ratio in [1.0, 2.0, 4.0] {
        let run = run_exhaustion(&seq, &lap, &phi, ratio, &[0.0; 3], &params).unwrap();
        let r = scaling_bound_check(&run, &base, true).unwrap();
        ok &= r.passed;
        parts.push(format!("λ/λ₁ = {ratio}: min margin {:.3e}", r.min_margin));
    }
    Outcome {
        passed: ok,
        detail: parts.join("; "),
    }
}

fn kato() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for alpha in [0.125, 0.25] {
        let h = alpha / 8.0;
        let g = Arc::new(Grid::centered_cube(3, alpha + 2.0 * h, h).unwrap());
        let full = Arc::new(DomainMask::full(g.clone()).unwrap());
        let window = DomainMask::from_predicate(g, |x| x.iter().all(|v| v.abs() < 0.5 * h)).unwrap();
        let p = Field::constant(full, 1.0);
        let est = kato_norm_estimate(&p, alpha, &window).unwrap();
        let exact = 2.0 * std::f64::consts::PI * alpha * alpha;
        let rel = (est - exact).abs() / exact;
        ok &= rel <= 0.1;
        parts.push(format!("α = {alpha}: {est:.5} vs {exact:.5} ({:.2}%)", 100.0 * rel));
    }
    Outcome {
        passed: ok,
        detail: parts.join("; "),
    }
}

fn main() {
    let s = Duration::from_secs;
    let results = [
        report(1, "linear oracle (cosh profile)", s(1), linear_oracle),
        report(2, "identity suite", s(120), identity_suite),
        report(3, "order-theoretic suite", s(300), order_suite),
        report(4, "majorant suite", s(30), majorant_suite),
        report(5, "exhaustion dichotomy", s(600), exhaustion_dichotomy),
        report(6, "blow-up sweep", s(120), blowup),
        report(7, "scaling inequality", s(120), scaling),
        report(8, "Kato estimator", s(30), kato),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
