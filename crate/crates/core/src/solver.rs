//! The semilinear Dirichlet solver `u = U_D^φ f`: `A u = φ(·, u)` on the
//! interior, `u = f` on the boundary.
//!
//! Writing the interior system as `F(u) = M u − b + φ(u) = 0` with `M = −A`
//! and `b` the boundary coupling, every iteration takes the shifted step
//! `(M + Λ) δ = −F(u_k)`, `u_{k+1} = u_k + δ`, starting from the
//! supersolution `u_0 = H_D f`.
//!
//! In [`ShiftMode::Adaptive`] the diagonal shift `Λ` is chosen per point and
//! every step is accepted only if `u_{k+1}` is again a supersolution
//! (`F(u_{k+1}) ≥ 0`), which holds exactly when `Λ_i` dominates the secant of
//! `φ(x_i, ·)` over `[u_{k+1}, u_k]`. Rejected points get a larger shift and
//! the step is recomputed. The iterates then decrease monotonically to the
//! solution. The fixed modes use one uniform shift and reuse a single
//! factorization.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::linalg::{CsrMatrix, LinearSolver, LinearSolverParams};
use crate::nonlinearity::Phi;
use crate::operator::{check_m_matrix, AssembledOperator};
use crate::potential::DirichletSolver;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "lambda")]
pub enum ShiftMode {
    /// Per-point shift, refreshed every iteration and safeguarded so that
    /// each iterate stays a supersolution.
    Adaptive,
    /// Uniform shift `1.1 ×` the sampled Lipschitz bound of `φ` on `[0, max f]`.
    Auto,
    /// A user-given uniform shift `λ ≥ 0`.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SemilinearParams {
    pub shift: ShiftMode,
    /// Sup-norm increment threshold; the interior residual must also fall
    /// below ten times this value.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub record_history: bool,
    pub linear: LinearSolverParams,
}

impl Default for SemilinearParams {
    fn default() -> Self {
        Self {
            shift: ShiftMode::Adaptive,
            tolerance: 1e-10,
            max_iterations: 500,
            record_history: false,
            linear: LinearSolverParams::default(),
        }
    }
}

impl SemilinearParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if let ShiftMode::Fixed(l) = self.shift {
            if !(l >= 0.0) {
                return Err(Error::InvalidArgument(format!("shift λ = {l} must be ≥ 0")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be ≥ 1".into()));
        }
        self.linear.validate()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub increment: f64,
    pub residual: f64,
    pub max_shift: f64,
    pub rejected_points: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    /// Sup norm of the last update.
    pub final_increment: f64,
    /// `sup |A u − φ(·, u)|` over the interior.
    pub residual: f64,
    /// `sup |H_D f − u − G_D φ(·, u)|`.
    pub identity_residual: f64,
    /// Every iterate was pointwise below its predecessor.
    pub monotone_history: bool,
    pub factorizations: usize,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<IterationRecord>>,
}

struct Problem<'a> {
    op: &'a AssembledOperator,
    phi: Phi,
    coords: Vec<[f64; 3]>,
    dim: usize,
    m: CsrMatrix,
    b: Vec<f64>,
}

impl Problem<'_> {
    fn phi_at(&self, k: usize, t: f64) -> Result<f64> {
        let i = self.op.interior()[k];
        self.phi.eval(i, &self.coords[k][..self.dim], t)
    }

    fn phi_vec(&self, u: &[f64]) -> Result<Vec<f64>> {
        (0..u.len()).map(|k| self.phi_at(k, u[k])).collect()
    }

    /// `F(u) = M u − b + φ(u)`.
    /// Size of the terms of row `k` in units of `u`, at least 1. Keeps the
    /// stopping test above the floating-point floor when data are large.
    fn row_scale(&self, k: usize, u: &[f64], phi_k: f64) -> f64 {
        let terms: f64 = self.m.row(k).map(|(j, a)| (a * u[j]).abs()).sum::<f64>()
            + self.b[k].abs()
            + phi_k.abs();
        (terms / self.m.diag(k)).max(1.0)
    }

    fn defect(&self, u: &[f64], phi_u: &[f64]) -> Vec<f64> {
        let mut r = self.m.mul(u);
        for k in 0..r.len() {
            r[k] += phi_u[k] - self.b[k];
        }
        r
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

fn secant(lo: f64, hi: f64, f_lo: f64, f_hi: f64) -> f64 {
    if hi > lo {
        ((f_hi - f_lo) / (hi - lo)).max(0.0)
    } else {
        0.0
    }
}

/// Computes `U_D^φ f`. `f` supplies the boundary values; its interior
/// values are ignored.
pub fn solve_semilinear_dirichlet(
    op: &AssembledOperator,
    phi: &Phi,
    f: &Field,
    params: &SemilinearParams,
) -> Result<(Field, SolveReport)> {
    params.validate()?;
    let mask = op.mask().clone();
    let grid = mask.grid().clone();
    let dim = grid.dim();
    let mut warnings = Vec::new();
    let fmin = f.boundary_min();
    if !(fmin >= 0.0) || !f.boundary_max().is_finite() {
        return Err(Error::InvalidArgument(format!(
            "boundary data must be finite and nonnegative (min {fmin})"
        )));
    }
    let mm = check_m_matrix(op);
    if !mm.passed {
        warnings.push(format!(
            "discretization is not an M-matrix ({}); comparison and uniqueness are not guaranteed",
            mm.summary()
        ));
    }
    let claims = phi.claims();
    if !(claims.h2 && claims.h3) {
        warnings.push("φ does not claim H2 and H3; monotone convergence is not guaranteed".into());
    }
    let phi = phi.prepared(&mask)?;
    let dirichlet = DirichletSolver::new(op, params.linear)?;
    let h = dirichlet.harmonic_extension(f)?;
    let problem = Problem {
        op,
        phi,
        coords: op.interior().iter().map(|&i| grid.coords(i)).collect(),
        dim,
        m: op.system_matrix()?,
        b: op.boundary_coupling(f.values()),
    };
    let n = op.n_unknowns();
    let mut u = op.gather(&h);
    let mut phi_u = problem.phi_vec(&u)?;
    let mut defect = problem.defect(&u, &phi_u);

    let tol = params.tolerance;
    let mut history = params.record_history.then(Vec::new);
    let mut monotone = true;
    let mut converged = false;
    let mut iterations = 0;
    let mut increment = f64::INFINITY;
    let mut residual = sup(&defect);
    let mut factorizations = 0;

    let fixed_shift = match params.shift {
        ShiftMode::Adaptive => None,
        ShiftMode::Fixed(l) => Some(l),
        ShiftMode::Auto => Some(1.1 * lipschitz_bound(&problem, f.boundary_max())?),
    };
    let mut solver: Option<LinearSolver> = match fixed_shift {
        Some(l) => {
            factorizations += 1;
            Some(LinearSolver::new(&problem.m.shifted_uniform(l), params.linear)?)
        }
        None => None,
    };
    let mut shift = vec![fixed_shift.unwrap_or(0.0); n];

    while iterations < params.max_iterations {
        iterations += 1;
        let rhs: Vec<f64> = defect.iter().map(|v| -v).collect();
        let mut rejected_total = 0;
        let (next, phi_next) = if fixed_shift.is_some() {
            let delta = solver
                .as_ref()
                .expect("fixed-shift factorization")
                .solve(&rhs, None)?;
            let next: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + d).collect();
            let phi_next = problem.phi_vec(&next)?;
            (next, phi_next)
        } else {
            for k in 0..n {
                shift[k] = initial_shift(&problem, k, u[k], phi_u[k])?;
            }
            let mut attempts = 0;
            loop {
                attempts += 1;
                let shifted = problem.m.shifted(&shift);
                match solver.as_mut() {
                    Some(s) => s.refactor(&shifted)?,
                    None => solver = Some(LinearSolver::new(&shifted, params.linear)?),
                }
                factorizations += 1;
                let delta = solver.as_ref().expect("factorized").solve(&rhs, None)?;
                let next: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + d).collect();
                let phi_next = problem.phi_vec(&next)?;
                let mut rejected = 0;
                for k in 0..n {
                    let (lo, hi) = (next[k].min(u[k]), next[k].max(u[k]));
                    let (f_lo, f_hi) = if next[k] <= u[k] {
                        (phi_next[k], phi_u[k])
                    } else {
                        (phi_u[k], phi_next[k])
                    };
                    let s = secant(lo, hi, f_lo, f_hi);
                    // Rounding in φ makes secants over tiny steps unreliable.
                    let noise = 8.0 * f64::EPSILON * f_lo.abs().max(f_hi.abs()) / (hi - lo).max(f64::MIN_POSITIVE);
                    let slack = 1e-12 * (1.0 + shift[k]) + noise;
                    if s > shift[k] + slack {
                        shift[k] = (2.0 * shift[k]).max(1.1 * s);
                        rejected += 1;
                    }
                }
                rejected_total += rejected;
                if rejected == 0 {
                    break (next, phi_next);
                }
                if attempts >= 60 {
                    return Err(Error::NonConvergence {
                        iterations,
                        increment,
                        residual,
                    });
                }
            }
        };
        let mut step: f64 = 0.0;
        let mut scaled_step: f64 = 0.0;
        for k in 0..n {
            let d = next[k] - u[k];
            step = step.max(d.abs());
            let s = u[k].abs().max(1.0);
            scaled_step = scaled_step.max(d.abs() / s);
            if d > tol * s {
                monotone = false;
            }
        }
        if let Some((k, &v)) = next
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
        {
            if v < -10.0 * tol {
                return Err(Error::NegativeIterate {
                    index: op.interior()[k],
                    value: v,
                });
            }
        }
        u = next;
        phi_u = phi_next;
        defect = problem.defect(&u, &phi_u);
        increment = step;
        residual = sup(&defect);
        if let Some(hist) = history.as_mut() {
            hist.push(IterationRecord {
                increment,
                residual,
                max_shift: shift.iter().cloned().fold(0.0, f64::max),
                rejected_points: rejected_total,
            });
        }
        let scaled_residual = (0..n)
            .map(|k| defect[k].abs() / problem.row_scale(k, &u, phi_u[k]))
            .fold(0.0, f64::max);
        if scaled_step <= tol && scaled_residual <= 10.0 * tol {
            converged = true;
            break;
        }
    }
    if !monotone {
        warnings.push("iterates were not monotonically decreasing".into());
    }
    let solution = op.scatter(&u, f);
    let green = dirichlet.solve_interior(&phi_u)?;
    let identity_residual = (0..n)
        .map(|k| (h.get(op.interior()[k]) - u[k] - green[k]).abs())
        .fold(0.0, f64::max);
    let report = SolveReport {
        iterations,
        converged,
        final_increment: increment,
        residual,
        identity_residual,
        monotone_history: monotone,
        factorizations,
        warnings,
        history,
    };
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            increment,
            residual,
        });
    }
    Ok((solution, report))
}

/// `1.1 × max(φ(u)/u, backward difference of φ at u)`, an upper bound for
/// the secant over `[v, u]` when `φ(x, ·)` is concave or convex there.
fn initial_shift(problem: &Problem, k: usize, u: f64, phi_u: f64) -> Result<f64> {
    const EPS: f64 = 1e-8;
    if u <= 0.0 {
        let p = problem.phi_at(k, EPS)?;
        return Ok(1.1 * p / EPS);
    }
    let chord = phi_u / u;
    let step = 1e-6 * u.max(EPS);
    let back = (phi_u - problem.phi_at(k, u - step)?) / step;
    Ok(1.1 * chord.max(back).max(0.0))
}

/// Largest slope of `φ(x, ·)` over interior points between consecutive
/// nodes of a grid on `[0, t_max]` that includes `1e-8`.
fn lipschitz_bound(problem: &Problem, t_max: f64) -> Result<f64> {
    const EPS_T: f64 = 1e-8;
    let t_max = t_max.max(2.0 * EPS_T);
    let mut nodes = vec![0.0, EPS_T];
    let ratio = t_max / EPS_T;
    nodes.extend((1..=128).map(|j| EPS_T * ratio.powf(j as f64 / 128.0)));
    nodes.extend((1..=128).map(|j| t_max * j as f64 / 128.0));
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    let mut lip: f64 = 0.0;
    for k in 0..problem.op.n_unknowns() {
        let vals = nodes
            .iter()
            .map(|&t| problem.phi_at(k, t))
            .collect::<Result<Vec<_>>>()?;
        for j in 1..nodes.len() {
            lip = lip.max((vals[j] - vals[j - 1]).abs() / (nodes[j] - nodes[j - 1]));
        }
    }
    Ok(lip)
}

/// Solves `A u = p·u` on the interior with `u = f` on the boundary, by one
/// linear solve of the shifted system `(M + diag p) u = b`.
pub fn solve_linear_reaction(
    op: &AssembledOperator,
    p: &Field,
    f: &Field,
    linear: LinearSolverParams,
) -> Result<Field> {
    let pv = op.gather(p);
    if let Some(k) = pv.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "reaction density must be nonnegative (grid point {})",
            op.interior()[k]
        )));
    }
    let m = op.system_matrix()?.shifted(&pv);
    let b = op.boundary_coupling(f.values());
    let u = LinearSolver::new(&m, linear)?.solve(&b, None)?;
    Ok(op.scatter(&u, f))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolutionClass {
    Solution,
    Supersolution,
    Subsolution,
    Neither,
}

/// Default band for [`classify_super_sub`].
pub const CLASSIFY_BAND: f64 = 1e-9;

/// Sign of `A u − φ(·, u)` on the interior: `≤ 0` is a supersolution,
/// `≥ 0` a subsolution, both within `band` a solution.
pub fn classify_super_sub(op: &AssembledOperator, phi: &Phi, u: &Field) -> Result<SolutionClass> {
    classify_with_band(op, phi, u, CLASSIFY_BAND)
}

pub fn classify_with_band(
    op: &AssembledOperator,
    phi: &Phi,
    u: &Field,
    band: f64,
) -> Result<SolutionClass> {
    let grid = op.mask().grid();
    let d = grid.dim();
    for i in op.mask().closure_indices() {
        if !u.get(i).is_finite() {
            return Err(Error::InvalidArgument(format!("u is not finite at grid point {i}")));
        }
    }
    let au = op.apply_interior(u.values());
    let mut above = false;
    let mut below = false;
    for (k, &i) in op.interior().iter().enumerate() {
        let r = au[k] - phi.eval(i, &grid.coords(i)[..d], u.get(i))?;
        if r > band {
            above = true;
        }
        if r < -band {
            below = true;
        }
    }
    Ok(match (above, below) {
        (false, false) => SolutionClass::Solution,
        (false, true) => SolutionClass::Supersolution,
        (true, false) => SolutionClass::Subsolution,
        (true, true) => SolutionClass::Neither,
    })
}
