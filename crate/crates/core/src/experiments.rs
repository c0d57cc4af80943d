//! Exhaustion limits `v_c`, blow-up sweeps, Green-potential diagnostics and
//! the bounded-versus-large dichotomy report.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{fmt_f64, Field};
use crate::geometry::{DomainMask, ExhaustionSequence};
use crate::linalg::LinearSolverParams;
use crate::nonlinearity::{check_hypotheses, default_t_grid, mask_samples, HypothesisReport, Phi};
use crate::operator::{assemble, AssembledOperator, CoefficientSet, SchemeOptions, SpatialFn};
use crate::potential::DirichletSolver;
use crate::solver::{solve_semilinear_dirichlet, SemilinearParams};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExhaustionParams {
    pub solver: SemilinearParams,
    pub scheme: SchemeOptions,
    /// A run is trivial when the core sup is at most `trivial_fraction·c`.
    pub trivial_fraction: f64,
    /// A run saturates when its sup is at least `(1 − saturation_band)·c`.
    pub saturation_band: f64,
    /// Pointwise tolerance for the decreasing-levels check.
    pub monotonicity_tolerance: f64,
}

impl Default for ExhaustionParams {
    fn default() -> Self {
        Self {
            solver: SemilinearParams::default(),
            scheme: SchemeOptions::default(),
            trivial_fraction: 0.05,
            saturation_band: 0.1,
            monotonicity_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelSummary {
    pub level: usize,
    pub n_interior: usize,
    /// `sup` of `U_{D_n} c` over the interior of `D_n`.
    pub sup: f64,
    /// `sup` of `U_{D_n} c` over the interior of `D_1`.
    pub core_sup: f64,
    /// `U_{D_n} c` at the probe point.
    pub probe_value: f64,
    pub iterations: usize,
    pub identity_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExhaustionRun {
    pub c: f64,
    pub probe: Vec<f64>,
    pub levels: Vec<LevelSummary>,
    /// `U_{D_{n+1}} c ≤ U_{D_n} c` on the closure of `D_n` for every `n`.
    pub decreasing_ok: bool,
    /// Largest violation of the decreasing check.
    pub max_increase: f64,
    /// Sup of the last-level solution over the last level.
    pub sup_estimate: f64,
    /// Sup of the last-level solution over `D_1`.
    pub core_sup: f64,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub solutions: Vec<Field>,
}

impl ExhaustionRun {
    /// The estimate of `v_c`: the solution on the last level.
    pub fn v_c(&self) -> &Field {
        self.solutions.last().expect("at least one level")
    }

    /// Level solutions restricted to the closure of `D_1`.
    pub fn per_level_on_core(&self) -> Result<Vec<Field>> {
        let core = self.solutions[0].mask().clone();
        self.solutions
            .iter()
            .map(|u| u.restrict_to(core.clone()))
            .collect()
    }

    pub fn levels_csv(&self) -> String {
        let mut s =
            String::from("level,n_interior,sup,core_sup,probe_value,iterations,identity_residual\n");
        for l in &self.levels {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                l.level,
                l.n_interior,
                fmt_f64(l.sup),
                fmt_f64(l.core_sup),
                fmt_f64(l.probe_value),
                l.iterations,
                fmt_f64(l.identity_residual)
            );
        }
        s
    }
}

fn sup_over(u: &Field, mask: &DomainMask) -> f64 {
    mask.interior_indices()
        .map(|i| u.get(i))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn probe_index(mask: &DomainMask, x: &[f64]) -> Result<usize> {
    let idx = mask
        .grid()
        .nearest(x)
        .ok_or_else(|| Error::InvalidArgument(format!("probe {x:?} lies outside the grid")))?;
    if !mask.is_interior(idx) {
        return Err(Error::NotInterior(idx));
    }
    Ok(idx)
}

/// Solves `U_{D_n}^φ c` on every level of `sequence`.
pub fn run_exhaustion(
    sequence: &ExhaustionSequence,
    coeffs: &CoefficientSet,
    phi: &Phi,
    c: f64,
    probe: &[f64],
    params: &ExhaustionParams,
) -> Result<ExhaustionRun> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("boundary constant c = {c} must be positive")));
    }
    let core = sequence.levels()[0].clone();
    let probe_idx = probe_index(&core, probe)?;
    let mut solutions: Vec<Field> = Vec::new();
    let mut levels = Vec::new();
    let mut notes = Vec::new();
    let mut decreasing_ok = true;
    let mut max_increase: f64 = 0.0;
    for (n, mask) in sequence.levels().iter().enumerate() {
        let op = assemble(mask.clone(), coeffs, params.scheme)?;
        let f = Field::constant(mask.clone(), c);
        let (u, report) = solve_semilinear_dirichlet(&op, phi, &f, &params.solver)?;
        for w in &report.warnings {
            notes.push(format!("level {}: {w}", n + 1));
        }
        if let Some(prev) = solutions.last() {
            for i in prev.mask().closure_indices() {
                let inc = u.get(i) - prev.get(i);
                max_increase = max_increase.max(inc);
                if inc > params.monotonicity_tolerance {
                    decreasing_ok = false;
                }
            }
        }
        levels.push(LevelSummary {
            level: n + 1,
            n_interior: mask.n_interior(),
            sup: sup_over(&u, mask),
            core_sup: sup_over(&u, &core),
            probe_value: u.get(probe_idx),
            iterations: report.iterations,
            identity_residual: report.identity_residual,
        });
        solutions.push(u);
    }
    let last = levels.last().expect("nonempty exhaustion");
    if levels.len() >= 2 {
        let prev = &levels[levels.len() - 2];
        let change = (last.sup - prev.sup).abs() / c;
        notes.push(format!(
            "sup changed by {:.3e}·c between the last two levels; the limit is estimated by the last level",
            change
        ));
    }
    Ok(ExhaustionRun {
        c,
        probe: probe.to_vec(),
        sup_estimate: last.sup,
        core_sup: last.core_sup,
        levels,
        decreasing_ok,
        max_increase,
        notes,
        solutions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SupVerdict {
    Trivial,
    Saturating,
    Intermediate,
}

#[derive(Debug, Clone, Serialize)]
pub struct SupIdentityReport {
    pub per_level: Vec<SupVerdict>,
    pub verdict: SupVerdict,
    pub sup_estimate: f64,
    pub core_sup: f64,
    /// Saturating at the top two levels with relative sup change below 5%.
    pub bounded_solution_indicated: bool,
    pub notes: Vec<String>,
}

fn classify_level(l: &LevelSummary, c: f64, params: &ExhaustionParams) -> SupVerdict {
    if l.core_sup <= params.trivial_fraction * c {
        SupVerdict::Trivial
    } else if l.sup >= c * (1.0 - params.saturation_band) {
        SupVerdict::Saturating
    } else {
        SupVerdict::Intermediate
    }
}

/// Classifies each level as trivial (the core sup vanishes), saturating (the
/// sup reaches `c`) or intermediate, a truncation artifact.
pub fn check_sup_identity(run: &ExhaustionRun, params: &ExhaustionParams) -> SupIdentityReport {
    let per_level: Vec<SupVerdict> = run
        .levels
        .iter()
        .map(|l| classify_level(l, run.c, params))
        .collect();
    let verdict = *per_level.last().expect("nonempty");
    let n = per_level.len();
    let bounded = n >= 2
        && per_level[n - 1] == SupVerdict::Saturating
        && per_level[n - 2] == SupVerdict::Saturating
        && {
            let (a, b) = (run.levels[n - 2].sup, run.levels[n - 1].sup);
            (b - a).abs() / b.abs().max(f64::MIN_POSITIVE) < 0.05
        };
    let mut notes = Vec::new();
    if verdict == SupVerdict::Intermediate {
        notes.push("intermediate sup at the largest truncation; likely a truncation artifact".into());
    }
    SupIdentityReport {
        per_level,
        verdict,
        sup_estimate: run.sup_estimate,
        core_sup: run.core_sup,
        bounded_solution_indicated: bounded,
        notes,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub ratio: f64,
    /// `min (v_λ − (λ/λ₁) v_{λ₁})` over the common level.
    pub min_margin: f64,
    pub passed: bool,
    pub skipped: bool,
    pub warning: Option<String>,
}

/// Checks `v_λ ≥ (λ/λ₁) v_{λ₁} − 1e−8` on the last level of two runs with
/// boundary constants `λ ≥ λ₁`. Skipped unless `φ` is concave (H4).
pub fn scaling_bound_check(
    run_lambda: &ExhaustionRun,
    run_lambda1: &ExhaustionRun,
    phi_is_concave: bool,
) -> Result<ScalingReport> {
    let (a, b) = (run_lambda.v_c(), run_lambda1.v_c());
    if !a.same_mask(b) {
        return Err(Error::MaskMismatch);
    }
    let ratio = run_lambda.c / run_lambda1.c;
    if ratio < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "λ/λ₁ = {ratio} must be at least 1"
        )));
    }
    if !phi_is_concave {
        return Ok(ScalingReport {
            ratio,
            min_margin: f64::NAN,
            passed: false,
            skipped: true,
            warning: Some("φ is not concave (H4); the scaling bound does not apply".into()),
        });
    }
    let min_margin = a
        .mask()
        .closure_indices()
        .map(|i| a.get(i) - ratio * b.get(i))
        .fold(f64::INFINITY, f64::min);
    Ok(ScalingReport {
        ratio,
        min_margin,
        passed: min_margin >= -1e-8,
        skipped: false,
        warning: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthVerdict {
    Diverges,
    Saturates,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlowupSweep {
    pub m_values: Vec<f64>,
    pub probes: Vec<Vec<f64>>,
    /// `values[j][q] = u_{m_j}(x_q)`; rows after a failed solve are absent.
    pub values: Vec<Vec<f64>>,
    /// Relative increment of `u_m(x_q)` over the last decade of `m`.
    pub last_decade_increment: Vec<f64>,
    pub verdicts: Vec<GrowthVerdict>,
    pub verdict: GrowthVerdict,
    /// `u_m(x_q)` is nondecreasing in `m` for every probe.
    pub monotone_in_m: bool,
    pub failure: Option<String>,
}

impl BlowupSweep {
    /// `min_m u_m(x_q)/m` over the sweep and all probes.
    pub fn min_ratio(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.m_values)
            .flat_map(|(row, m)| row.iter().map(move |v| v / m))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("m");
        for q in 0..self.probes.len() {
            let _ = write!(s, ",u_probe{}", q + 1);
        }
        s.push('\n');
        for (m, row) in self.m_values.iter().zip(&self.values) {
            s.push_str(&fmt_f64(*m));
            for v in row {
                s.push(',');
                s.push_str(&fmt_f64(*v));
            }
            s.push('\n');
        }
        s
    }
}

/// Solves `U_D^φ m` for each `m` and tracks `u_m` at the probes. Saturation
/// means the relative increment over the last decade of `m` is below 1%.
pub fn blowup_sweep(
    op: &AssembledOperator,
    phi: &Phi,
    m_values: &[f64],
    probes: &[Vec<f64>],
    params: &SemilinearParams,
) -> Result<BlowupSweep> {
    if m_values.len() < 4 {
        return Err(Error::InvalidArgument("a sweep needs at least 4 values of m".into()));
    }
    if m_values.windows(2).any(|w| !(w[1] > w[0])) || !(m_values[0] > 0.0) {
        return Err(Error::InvalidArgument("m values must be positive and increasing".into()));
    }
    let last = *m_values.last().expect("nonempty");
    if last / m_values[0] < 100.0 * (1.0 - 1e-12) {
        return Err(Error::InvalidArgument("m values must span at least two decades".into()));
    }
    let idx = probes
        .iter()
        .map(|x| probe_index(op.mask(), x))
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<Result<Vec<f64>>> = m_values
        .par_iter()
        .map(|&m| {
            let f = Field::constant(op.mask().clone(), m);
            let (u, _) = solve_semilinear_dirichlet(op, phi, &f, params)?;
            Ok(idx.iter().map(|&i| u.get(i)).collect())
        })
        .collect();
    let mut values = Vec::new();
    let mut failure = None;
    for (m, r) in m_values.iter().zip(results) {
        match r {
            Ok(row) => values.push(row),
            Err(e) => {
                failure = Some(format!("solve failed at m = {m}: {e}"));
                break;
            }
        }
    }
    let done = &m_values[..values.len()];
    let monotone_in_m = values
        .windows(2)
        .all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| *b >= *a - 1e-9 * a.abs().max(1.0)));
    let mut last_decade_increment = Vec::new();
    let mut verdicts = Vec::new();
    if let Some(m_last) = done.last().copied() {
        let j_last = done.len() - 1;
        let j_ref = done
            .iter()
            .position(|&m| m >= m_last / 10.0 * (1.0 - 1e-12))
            .unwrap_or(0)
            .min(j_last.saturating_sub(1));
        for q in 0..idx.len() {
            let (a, b) = (values[j_ref][q], values[j_last][q]);
            let inc = (b - a) / b.abs().max(f64::MIN_POSITIVE);
            last_decade_increment.push(inc);
            verdicts.push(if inc < 0.01 {
                GrowthVerdict::Saturates
            } else {
                GrowthVerdict::Diverges
            });
        }
    }
    let verdict = if !verdicts.is_empty() && verdicts.iter().all(|v| *v == GrowthVerdict::Saturates)
    {
        GrowthVerdict::Saturates
    } else {
        GrowthVerdict::Diverges
    };
    Ok(BlowupSweep {
        m_values: done.to_vec(),
        probes: probes.to_vec(),
        values,
        last_decade_increment,
        verdicts,
        verdict,
        monotone_in_m,
        failure,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialVerdict {
    ApparentlyFinite,
    ApparentlyDivergent,
}

#[derive(Debug, Clone, Serialize)]
pub struct PotentialDiagnostic {
    pub radii: Vec<f64>,
    pub probe: Vec<f64>,
    /// `Σ_{y ∈ D_R ∖ A} G_{D_R}(x₀, y) p(y) h^d` per truncation.
    pub values: Vec<f64>,
    pub increments: Vec<f64>,
    /// Power-law exponent of the last two increments in `R`.
    pub growth_exponent: Option<f64>,
    pub verdict: PotentialVerdict,
    pub nondecreasing: bool,
    pub thin_set_points: usize,
}

impl PotentialDiagnostic {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("radius,partial_sum\n");
        for (r, v) in self.radii.iter().zip(&self.values) {
            let _ = writeln!(s, "{},{}", fmt_f64(*r), fmt_f64(*v));
        }
        s
    }
}

/// Green-potential partial sums of `p·1_{D_R∖A}` at `x₀` over increasing
/// truncations `D_R` (zero Dirichlet data on each). `thin_set` flags grid
/// points of `A`.
pub fn green_potential_diagnostic(
    truncations: &[(f64, Arc<DomainMask>)],
    coeffs: &CoefficientSet,
    p: &SpatialFn,
    thin_set: Option<&[bool]>,
    probe: &[f64],
    scheme: SchemeOptions,
    linear: LinearSolverParams,
) -> Result<PotentialDiagnostic> {
    if truncations.len() < 2 {
        return Err(Error::InvalidArgument("the diagnostic needs at least two truncations".into()));
    }
    if truncations.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::InvalidArgument("truncation radii must increase".into()));
    }
    let mut values = Vec::new();
    let mut thin_count = 0;
    for (_, mask) in truncations {
        let grid = mask.grid();
        let d = grid.dim();
        if let Some(a) = thin_set {
            if a.len() != grid.len() {
                return Err(Error::MaskMismatch);
            }
        }
        let op = assemble(mask.clone(), coeffs, scheme)?;
        let x0 = probe_index(mask, probe)?;
        let mut src = vec![f64::NAN; grid.len()];
        let mut excluded = 0;
        for i in mask.closure_indices() {
            let in_a = thin_set.is_some_and(|a| a[i]);
            if in_a && mask.is_interior(i) {
                excluded += 1;
            }
            let pv = if in_a { 0.0 } else { p.eval(i, &grid.coords(i)[..d])? };
            if pv < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "density p is negative at grid point {i}"
                )));
            }
            src[i] = pv;
        }
        thin_count = excluded;
        let source = Field::from_values(mask.clone(), src)?;
        let g = DirichletSolver::new(&op, linear)?.green_apply(&source)?;
        values.push(g.get(x0));
    }
    let increments: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let nondecreasing = increments
        .iter()
        .zip(&values)
        .all(|(inc, v)| *inc >= -1e-10 * v.abs().max(1.0));
    let radii: Vec<f64> = truncations.iter().map(|(r, _)| *r).collect();
    let n = radii.len();
    let growth_exponent = if increments.len() >= 2 {
        let (d1, d2) = (increments[n - 3], increments[n - 2]);
        (d1 > 0.0 && d2 > 0.0).then(|| (d2 / d1).ln() / (radii[n - 1] / radii[n - 2]).ln())
    } else {
        None
    };
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let verdict = if scale == 0.0 {
        PotentialVerdict::ApparentlyFinite
    } else {
        match growth_exponent {
            Some(beta) if beta >= 0.0 => PotentialVerdict::ApparentlyDivergent,
            Some(_) => PotentialVerdict::ApparentlyFinite,
            None => {
                let last = *increments.last().expect("two truncations");
                if last <= 1e-12 * scale {
                    PotentialVerdict::ApparentlyFinite
                } else {
                    PotentialVerdict::ApparentlyDivergent
                }
            }
        }
    };
    Ok(PotentialDiagnostic {
        radii,
        probe: probe.to_vec(),
        values,
        increments,
        growth_exponent,
        verdict,
        nondecreasing,
        thin_set_points: thin_count,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ThinWitnessReport {
    pub nonnegative: bool,
    /// `A s ≤ 0` on the interior.
    pub superharmonic: bool,
    /// `s ≥ 1` on `A`.
    pub dominates_on_set: bool,
    pub value_at_probe: f64,
    pub passed: bool,
}

/// Verifies the inequalities a thinness witness `s` for `A` must satisfy:
/// `s ≥ 0`, `A s ≤ 0`, `s ≥ 1` on `A` and `s(x₀) < 1`.
pub fn check_thin_witness(
    op: &AssembledOperator,
    s: &Field,
    thin_set: &[bool],
    probe: &[f64],
    tolerance: f64,
) -> Result<ThinWitnessReport> {
    let mask = op.mask();
    if thin_set.len() != mask.grid().len() {
        return Err(Error::MaskMismatch);
    }
    let nonnegative = mask.closure_indices().all(|i| s.get(i) >= -tolerance);
    let superharmonic = op.apply_interior(s.values()).iter().all(|v| *v <= tolerance);
    let dominates_on_set = mask
        .closure_indices()
        .filter(|&i| thin_set[i])
        .all(|i| s.get(i) >= 1.0 - tolerance);
    let x0 = probe_index(mask, probe)?;
    let value_at_probe = s.get(x0);
    Ok(ThinWitnessReport {
        nonnegative,
        superharmonic,
        dominates_on_set,
        value_at_probe,
        passed: nonnegative && superharmonic && dominates_on_set && value_at_probe < 1.0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PotentialProxyLevel {
    pub n_interior: usize,
    /// `max_{x ∈ D'} H_{D'}(G(·,y)|∂D')(x) / G(x, y)`.
    pub max_ratio: f64,
    /// The same ratio at `y`.
    pub ratio_at_pole: f64,
}

/// For the kernel column `G_D(·, y)` and subdomains `D' ∋ y`, the ratio of
/// the harmonic extension of `G_D(·,y)|∂D'` to `G_D(·,y)`. Report only.
pub fn potential_proxy(
    op: &AssembledOperator,
    y: usize,
    subdomains: &[Arc<DomainMask>],
    coeffs: &CoefficientSet,
    linear: LinearSolverParams,
) -> Result<Vec<PotentialProxyLevel>> {
    let g = DirichletSolver::new(op, linear)?.green_kernel_column(y)?;
    subdomains
        .iter()
        .map(|sub| {
            if !sub.is_interior(y) {
                return Err(Error::NotInterior(y));
            }
            if sub.closure_indices().any(|i| !op.mask().is_interior(i)) {
                return Err(Error::InvalidArgument(
                    "subdomain closure must lie in the interior of D".into(),
                ));
            }
            let sub_op = assemble(sub.clone(), coeffs, *op.options())?;
            let data = g.restrict_to(sub.clone())?;
            let h = DirichletSolver::new(&sub_op, linear)?.harmonic_extension(&data)?;
            let max_ratio = sub
                .interior_indices()
                .map(|i| h.get(i) / g.get(i))
                .fold(0.0, f64::max);
            Ok(PotentialProxyLevel {
                n_interior: sub.n_interior(),
                max_ratio,
                ratio_at_pole: h.get(y) / g.get(y),
            })
        })
        .collect()
}

/// Inputs of the composite dichotomy experiment.
pub struct DichotomySetup<'a> {
    pub exhaustion: &'a ExhaustionSequence,
    pub coeffs: &'a CoefficientSet,
    pub phi: &'a Phi,
    /// Density for SH1 and the potential diagnostic.
    pub p: Option<SpatialFn>,
    pub c: f64,
    pub probe: Vec<f64>,
    /// Bounded domain of the blow-up sweep.
    pub sweep_operator: &'a AssembledOperator,
    pub m_values: Vec<f64>,
    pub sweep_probes: Vec<Vec<f64>>,
    /// Truncations of the potential diagnostic (radius, mask).
    pub truncations: Vec<(f64, Arc<DomainMask>)>,
    pub thin_set: Option<Vec<bool>>,
    pub params: ExhaustionParams,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub hypotheses: HypothesisReport,
    pub hypotheses_satisfied: bool,
    pub exhaustion: ExhaustionRun,
    pub sup_identity: SupIdentityReport,
    pub sweep: BlowupSweep,
    pub potential: Option<PotentialDiagnostic>,
    pub bounded_solution_indicated: bool,
    pub large_solution_indicated: bool,
    /// Both a bounded and a large solution indicated under the checked
    /// hypotheses; never expected.
    pub contradiction: bool,
}

impl ExperimentReport {
    pub fn verdict_table(&self) -> String {
        let yn = |b: bool| if b { "yes" } else { "no" };
        let mut s = String::from("hypotheses,bounded_solution,large_solution\n");
        let _ = writeln!(
            s,
            "{},{},{}",
            if self.hypotheses_satisfied { "satisfied" } else { "violated" },
            yn(self.bounded_solution_indicated),
            yn(self.large_solution_indicated)
        );
        s
    }
}

pub fn dichotomy_report(setup: &DichotomySetup) -> Result<ExperimentReport> {
    let omega = setup.exhaustion.omega();
    let samples = mask_samples(omega, 512);
    let hypotheses = check_hypotheses(setup.phi, setup.p.as_ref(), &samples, &default_t_grid())?;
    let hypotheses_satisfied = [&hypotheses.sh1, &hypotheses.h2, &hypotheses.h3]
        .iter()
        .all(|h| h.passed == Some(true));
    let exhaustion = run_exhaustion(
        setup.exhaustion,
        setup.coeffs,
        setup.phi,
        setup.c,
        &setup.probe,
        &setup.params,
    )?;
    let sup_identity = check_sup_identity(&exhaustion, &setup.params);
    let sweep = blowup_sweep(
        setup.sweep_operator,
        setup.phi,
        &setup.m_values,
        &setup.sweep_probes,
        &setup.params.solver,
    )?;
    let potential = match (&setup.p, setup.truncations.len() >= 2) {
        (Some(p), true) => Some(green_potential_diagnostic(
            &setup.truncations,
            setup.coeffs,
            p,
            setup.thin_set.as_deref(),
            &setup.probe,
            setup.params.scheme,
            setup.params.solver.linear,
        )?),
        _ => None,
    };
    let bounded = sup_identity.bounded_solution_indicated;
    let large = sweep.verdict == GrowthVerdict::Saturates;
    Ok(ExperimentReport {
        contradiction: hypotheses_satisfied && bounded && large,
        hypotheses,
        hypotheses_satisfied,
        exhaustion,
        sup_identity,
        sweep,
        potential,
        bounded_solution_indicated: bounded,
        large_solution_indicated: large,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Grid;

    fn cube_sequence(dim: usize) -> ExhaustionSequence {
        let g = Arc::new(Grid::centered_cube(dim, 4.0, 0.5).unwrap());
        let omega = Arc::new(DomainMask::full(g).unwrap());
        ExhaustionSequence::concentric_cubes(omega, &vec![0.0; dim], &[1.0, 2.0, 4.0]).unwrap()
    }

    #[test]
    fn zero_phi_saturates_exactly() {
        let seq = cube_sequence(2);
        let params = ExhaustionParams::default();
        let run = run_exhaustion(
            &seq,
            &CoefficientSet::laplacian(2),
            &Phi::zero(),
            1.0,
            &[0.0, 0.0],
            &params,
        )
        .unwrap();
        assert!(run.decreasing_ok);
        assert!((run.sup_estimate - 1.0).abs() < 1e-12);
        let rep = check_sup_identity(&run, &params);
        assert_eq!(rep.verdict, SupVerdict::Saturating);
        assert!(rep.bounded_solution_indicated);
    }

    #[test]
    fn levels_decrease_and_stay_below_c() {
        let seq = cube_sequence(2);
        let phi = Phi::power(SpatialFn::Const(1.0), 0.5);
        let run = run_exhaustion(
            &seq,
            &CoefficientSet::laplacian(2),
            &phi,
            1.0,
            &[0.0, 0.0],
            &ExhaustionParams::default(),
        )
        .unwrap();
        assert!(run.decreasing_ok, "{}", run.max_increase);
        assert!(run.v_c().interior_max() <= 1.0);
        let probes: Vec<f64> = run.levels.iter().map(|l| l.probe_value).collect();
        assert!(probes.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(run.per_level_on_core().unwrap().len(), 3);
    }

    #[test]
    fn scaling_bound_and_skip() {
        let seq = cube_sequence(2);
        let phi = Phi::power(SpatialFn::Const(1.0), 0.5);
        let params = ExhaustionParams::default();
        let lap = CoefficientSet::laplacian(2);
        let r1 = run_exhaustion(&seq, &lap, &phi, 1.0, &[0.0, 0.0], &params).unwrap();
        let r2 = run_exhaustion(&seq, &lap, &phi, 2.0, &[0.0, 0.0], &params).unwrap();
        let same = scaling_bound_check(&r1, &r1, true).unwrap();
        assert!(same.passed && same.min_margin.abs() < 1e-15);
        let rep = scaling_bound_check(&r2, &r1, true).unwrap();
        assert!(rep.passed, "{rep:?}");
        let skipped = scaling_bound_check(&r2, &r1, false).unwrap();
        assert!(skipped.skipped && skipped.warning.is_some());
    }

    #[test]
    fn harmonic_sweep_diverges() {
        let g = Arc::new(Grid::cube(2, 9, -1.0, 1.0).unwrap());
        let m = Arc::new(DomainMask::full(g).unwrap());
        let op = assemble(m, &CoefficientSet::laplacian(2), SchemeOptions::default()).unwrap();
        let ms = [1.0, 10.0, 100.0, 1000.0];
        let s = blowup_sweep(&op, &Phi::zero(), &ms, &[vec![0.0, 0.0]], &SemilinearParams::default())
            .unwrap();
        for (m, row) in s.m_values.iter().zip(&s.values) {
            assert!((row[0] - m).abs() < 1e-9 * m);
        }
        assert_eq!(s.verdict, GrowthVerdict::Diverges);
        assert!(s.monotone_in_m);
        assert!(blowup_sweep(&op, &Phi::zero(), &ms[..3], &[vec![0.0, 0.0]], &SemilinearParams::default()).is_err());
        assert!(blowup_sweep(&op, &Phi::zero(), &[1.0, 2.0, 3.0, 4.0], &[vec![0.0, 0.0]], &SemilinearParams::default()).is_err());
    }

    #[test]
    fn zero_density_is_finite() {
        let seq = cube_sequence(2);
        let truncs: Vec<(f64, Arc<DomainMask>)> = [1.0, 2.0, 4.0]
            .into_iter()
            .zip(seq.levels().iter().cloned())
            .collect();
        let d = green_potential_diagnostic(
            &truncs,
            &CoefficientSet::laplacian(2),
            &SpatialFn::Const(0.0),
            None,
            &[0.0, 0.0],
            SchemeOptions::default(),
            LinearSolverParams::default(),
        )
        .unwrap();
        assert!(d.values.iter().all(|v| *v == 0.0));
        assert_eq!(d.verdict, PotentialVerdict::ApparentlyFinite);
    }

    #[test]
    fn thin_witness_checks() {
        let g = Arc::new(Grid::cube(1, 9, 0.0, 1.0).unwrap());
        let m = Arc::new(DomainMask::full(g.clone()).unwrap());
        let op = assemble(m.clone(), &CoefficientSet::laplacian(1), SchemeOptions::default())
            .unwrap();
        // s(x) = x is harmonic, ≥ 1 only at x = 1.
        let s = Field::from_fn(m, |_, x| x[0]);
        let mut a = vec![false; g.len()];
        a[8] = true;
        let r = check_thin_witness(&op, &s, &a, &[0.25], 1e-12).unwrap();
        assert!(r.passed);
        a[4] = true;
        let r = check_thin_witness(&op, &s, &a, &[0.25], 1e-12).unwrap();
        assert!(!r.dominates_on_set && !r.passed);
    }

    #[test]
    fn proxy_ratios_below_one() {
        let g = Arc::new(Grid::cube(2, 13, -1.0, 1.0).unwrap());
        let m = Arc::new(DomainMask::full(g.clone()).unwrap());
        let lap = CoefficientSet::laplacian(2);
        let op = assemble(m, &lap, SchemeOptions::default()).unwrap();
        let y = g.nearest(&[0.0, 0.0]).unwrap();
        let subs: Vec<Arc<DomainMask>> = [0.6, 0.4]
            .into_iter()
            .map(|r| {
                Arc::new(
                    DomainMask::from_predicate(g.clone(), move |x| {
                        x.iter().all(|v| v.abs() < r + 1e-9)
                    })
                    .unwrap(),
                )
            })
            .collect();
        let rep = potential_proxy(&op, y, &subs, &lap, LinearSolverParams::default()).unwrap();
        for l in rep {
            assert!(l.ratio_at_pole < 1.0 && l.max_ratio <= 1.0 + 1e-12);
        }
    }
}
