//! Sparse interior systems and their solvers.
//!
//! Direct solves go through faer's sparse LU with the symbolic analysis kept
//! so that diagonally shifted systems refactor cheaply. The iterative path is
//! right-preconditioned BiCGSTAB with an ILU(0) preconditioner.

use faer::prelude::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Systems with more unknowns than this go to the iterative solver under
/// [`SolverMethod::Auto`].
pub const DIRECT_LIMIT: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    #[default]
    Auto,
    Direct,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSolverParams {
    pub method: SolverMethod,
    /// Relative residual target of the iterative solver.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LinearSolverParams {
    fn default() -> Self {
        Self {
            method: SolverMethod::Auto,
            tolerance: 1e-10,
            max_iterations: 20_000,
        }
    }
}

impl LinearSolverParams {
    pub fn direct() -> Self {
        Self {
            method: SolverMethod::Direct,
            ..Self::default()
        }
    }

    pub fn iterative(tolerance: f64) -> Self {
        Self {
            method: SolverMethod::Iterative,
            tolerance,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "linear solver tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }

    fn use_direct(&self, n: usize) -> bool {
        match self.method {
            SolverMethod::Direct => true,
            SolverMethod::Iterative => false,
            SolverMethod::Auto => n <= DIRECT_LIMIT,
        }
    }
}

/// Square CSR matrix with sorted columns and a stored diagonal in every row.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag_pos: Vec<usize>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists. Duplicates are summed and a
    /// zero diagonal entry is inserted where missing.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut diag_pos = Vec::with_capacity(n);
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.push((i, 0.0));
            row.sort_by_key(|&(j, _)| j);
            let start = cols.len();
            for (j, v) in row {
                if j >= n {
                    return Err(Error::InvalidArgument(format!(
                        "column {j} out of range in a {n}×{n} matrix"
                    )));
                }
                if cols.len() > start && *cols.last().unwrap() == j {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(j);
                    vals.push(v);
                }
            }
            let d = start
                + cols[start..]
                    .binary_search(&i)
                    .expect("diagonal inserted above");
            diag_pos.push(d);
            row_ptr.push(cols.len());
        }
        Ok(Self {
            n,
            row_ptr,
            cols,
            vals,
            diag_pos,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.vals[self.diag_pos[i]]
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// `self + diag(shift)`.
    pub fn shifted(&self, shift: &[f64]) -> CsrMatrix {
        let mut out = self.clone();
        for (i, s) in shift.iter().enumerate() {
            out.vals[out.diag_pos[i]] += s;
        }
        out
    }

    /// `self + s·I`.
    pub fn shifted_uniform(&self, s: f64) -> CsrMatrix {
        let mut out = self.clone();
        for i in 0..self.n {
            out.vals[out.diag_pos[i]] += s;
        }
        out
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let triplets: Vec<Triplet<usize, usize, f64>> = (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| Triplet::new(i, j, v)))
            .collect();
        SparseColMat::try_new_from_triplets(self.n, self.n, &triplets)
            .map_err(|e| Error::LinearSolve(format!("cannot build sparse matrix: {e:?}")))
    }
}

/// Incomplete LU with the sparsity pattern of the matrix itself.
#[derive(Debug, Clone)]
struct Ilu0 {
    lu: CsrMatrix,
}

impl Ilu0 {
    fn new(a: &CsrMatrix) -> Result<Self> {
        let mut lu = a.clone();
        let n = lu.n;
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for k in start..end {
                pos[lu.cols[k]] = k;
            }
            for kk in start..lu.diag_pos[i] {
                let k = lu.cols[kk];
                let pivot = lu.vals[lu.diag_pos[k]];
                lu.vals[kk] /= pivot;
                let lik = lu.vals[kk];
                for jj in lu.diag_pos[k] + 1..lu.row_ptr[k + 1] {
                    let p = pos[lu.cols[jj]];
                    if p != usize::MAX {
                        lu.vals[p] -= lik * lu.vals[jj];
                    }
                }
            }
            if lu.vals[lu.diag_pos[i]] == 0.0 || !lu.vals[lu.diag_pos[i]].is_finite() {
                return Err(Error::LinearSolve(format!(
                    "zero pivot in ILU(0) at row {i}"
                )));
            }
            for k in start..end {
                pos[lu.cols[k]] = usize::MAX;
            }
        }
        Ok(Self { lu })
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut s = r[i];
            for k in lu.row_ptr[i]..lu.diag_pos[i] {
                s -= lu.vals[k] * z[lu.cols[k]];
            }
            z[i] = s;
        }
        for i in (0..lu.n).rev() {
            let mut s = z[i];
            for k in lu.diag_pos[i] + 1..lu.row_ptr[i + 1] {
                s -= lu.vals[k] * z[lu.cols[k]];
            }
            z[i] = s / lu.vals[lu.diag_pos[i]];
        }
    }
}

enum Backend {
    Direct {
        symbolic: SymbolicLu<usize>,
        lu: Lu<usize, f64>,
    },
    Iterative {
        matrix: CsrMatrix,
        ilu: Ilu0,
    },
}

/// Factorized (or preconditioned) interior system ready for repeated solves.
pub struct LinearSolver {
    backend: Backend,
    params: LinearSolverParams,
    n: usize,
}

impl std::fmt::Debug for LinearSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearSolver")
            .field("n", &self.n)
            .field("direct", &self.is_direct())
            .finish()
    }
}

impl LinearSolver {
    pub fn new(matrix: &CsrMatrix, params: LinearSolverParams) -> Result<Self> {
        params.validate()?;
        let n = matrix.n();
        let backend = if params.use_direct(n) {
            let a = matrix.to_faer()?;
            let symbolic = SymbolicLu::try_new(a.symbolic())
                .map_err(|e| Error::LinearSolve(format!("symbolic LU failed: {e:?}")))?;
            let lu = Lu::try_new_with_symbolic(symbolic.clone(), a.as_ref())
                .map_err(|e| Error::LinearSolve(format!("LU factorization failed: {e:?}")))?;
            Backend::Direct { symbolic, lu }
        } else {
            Backend::Iterative {
                matrix: matrix.clone(),
                ilu: Ilu0::new(matrix)?,
            }
        };
        Ok(Self { backend, params, n })
    }

    pub fn is_direct(&self) -> bool {
        matches!(self.backend, Backend::Direct { .. })
    }

    /// Replaces the matrix by one with the same sparsity pattern.
    pub fn refactor(&mut self, matrix: &CsrMatrix) -> Result<()> {
        if matrix.n() != self.n {
            return Err(Error::InvalidArgument("refactor with a different size".into()));
        }
        match &mut self.backend {
            Backend::Direct { symbolic, lu } => {
                let a = matrix.to_faer()?;
                *lu = Lu::try_new_with_symbolic(symbolic.clone(), a.as_ref())
                    .map_err(|e| Error::LinearSolve(format!("LU factorization failed: {e:?}")))?;
            }
            Backend::Iterative { matrix: m, ilu } => {
                *ilu = Ilu0::new(matrix)?;
                *m = matrix.clone();
            }
        }
        Ok(())
    }

    /// Solves `A x = rhs`, optionally warm-starting the iterative solver.
    pub fn solve(&self, rhs: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        if rhs.len() != self.n {
            return Err(Error::InvalidArgument(format!(
                "right-hand side has length {}, system has {}",
                rhs.len(),
                self.n
            )));
        }
        let x = match &self.backend {
            Backend::Direct { lu, .. } => {
                let b = faer::col::Col::<f64>::from_fn(self.n, |i| rhs[i]);
                let x = lu.solve(&b);
                (0..self.n).map(|i| x[i]).collect::<Vec<f64>>()
            }
            Backend::Iterative { matrix, ilu } => bicgstab(matrix, ilu, rhs, guess, &self.params)?,
        };
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::LinearSolve(format!(
                "non-finite solution component at unknown {i} (singular system?)"
            )));
        }
        Ok(x)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn bicgstab(
    a: &CsrMatrix,
    precond: &Ilu0,
    b: &[f64],
    guess: Option<&[f64]>,
    params: &LinearSolverParams,
) -> Result<Vec<f64>> {
    let n = a.n();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let target = params.tolerance * bnorm;
    let mut x = guess.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
    let mut r = a.mul(&x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if norm(&r) <= target {
        return Ok(x);
    }
    let mut r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    for _ in 0..params.max_iterations {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 {
            // Breakdown: restart the shadow residual.
            r_hat.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond.apply(&p, &mut p_hat);
        a.matvec(&p_hat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 {
            return Err(Error::LinearSolve("BiCGSTAB breakdown (r̂·v = 0)".into()));
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= target {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            return Ok(x);
        }
        precond.apply(&s, &mut s_hat);
        a.matvec(&s_hat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) <= target {
            return Ok(x);
        }
        if omega == 0.0 {
            return Err(Error::LinearSolve("BiCGSTAB stagnated (ω = 0)".into()));
        }
    }
    Err(Error::LinearSolve(format!(
        "BiCGSTAB did not reach relative residual {:e} in {} iterations",
        params.tolerance, params.max_iterations
    )))
}
