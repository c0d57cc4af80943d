//! Discretization of `L = Σ a_ij ∂_i∂_j + Σ b_i ∂_i + c` on a domain mask.
//!
//! Second derivatives use centered differences. Mixed derivatives use the
//! sign-adapted seven-point stencil: for `a_ij > 0` the corners `(+i,+j)` and
//! `(−i,−j)`, for `a_ij < 0` the other diagonal. It is exact on quadratics and
//! keeps nonnegative off-diagonal entries whenever
//! `a_ii/h_i ≥ Σ_{j≠i} |a_ij|/h_j`. Drift is upwinded by default.
//!
//! The assembled operator `A` acts on grid functions; at interior points
//! `(A u)(x)` approximates `(L u)(x)`, and boundary rows are the identity.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::Field;
use crate::geometry::{DomainMask, MAX_DIM};
use crate::linalg::CsrMatrix;

/// A real function on the grid: constant, sampled per grid point, a closure
/// of the coordinates, or a parsed expression in `x1..x3, r`.
#[derive(Clone)]
pub enum SpatialFn {
    Const(f64),
    Sampled(Arc<Vec<f64>>),
    Func(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
    Expr(Arc<Expr>),
}

impl fmt::Debug for SpatialFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpatialFn::Const(c) => write!(f, "Const({c})"),
            SpatialFn::Sampled(v) => write!(f, "Sampled({} values)", v.len()),
            SpatialFn::Func(_) => write!(f, "Func(..)"),
            SpatialFn::Expr(e) => write!(f, "Expr({e})"),
        }
    }
}

impl From<f64> for SpatialFn {
    fn from(c: f64) -> Self {
        SpatialFn::Const(c)
    }
}

impl SpatialFn {
    pub fn func(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        SpatialFn::Func(Arc::new(f))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let e = Expr::parse(text)?;
        if e.uses_t() {
            return Err(Error::InvalidArgument(format!(
                "spatial expression `{text}` must not depend on t"
            )));
        }
        Ok(SpatialFn::Expr(Arc::new(e)))
    }

    pub fn sampled(field: &Field) -> Self {
        SpatialFn::Sampled(Arc::new(field.values().to_vec()))
    }

    pub fn eval(&self, idx: usize, x: &[f64]) -> Result<f64> {
        match self {
            SpatialFn::Const(c) => Ok(*c),
            SpatialFn::Sampled(v) => {
                let val = *v.get(idx).ok_or_else(|| {
                    Error::InvalidArgument(format!("sampled field has no entry {idx}"))
                })?;
                if val.is_finite() {
                    Ok(val)
                } else {
                    Err(Error::InvalidArgument(format!(
                        "sampled field is undefined at grid point {idx}"
                    )))
                }
            }
            SpatialFn::Func(f) => Ok(f(x)),
            SpatialFn::Expr(e) => Ok(e.eval(x, None)?),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, SpatialFn::Const(c) if *c == 0.0)
    }

    /// Samples onto a mask.
    pub fn to_field(&self, mask: Arc<DomainMask>) -> Result<Field> {
        let grid = mask.grid().clone();
        let dim = grid.dim();
        let mut values = vec![f64::NAN; grid.len()];
        for i in mask.closure_indices() {
            values[i] = self.eval(i, &grid.coords(i)[..dim])?;
        }
        Field::from_values(mask, values)
    }
}

/// Coefficients of `L`: `a` is `d×d` (row-major), `b` has `d` entries, `c ≤ 0`.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    dim: usize,
    a: Vec<SpatialFn>,
    b: Vec<SpatialFn>,
    c: Option<SpatialFn>,
}

#[derive(Debug, Clone, Copy, Default)]
struct PointCoefficients {
    a: [[f64; MAX_DIM]; MAX_DIM],
    b: [f64; MAX_DIM],
    c: f64,
}

impl CoefficientSet {
    pub fn new(
        dim: usize,
        a: Vec<SpatialFn>,
        b: Vec<SpatialFn>,
        c: Option<SpatialFn>,
    ) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidArgument(format!("unsupported dimension {dim}")));
        }
        if a.len() != dim * dim {
            return Err(Error::InvalidArgument(format!(
                "a must have {} entries, got {}",
                dim * dim,
                a.len()
            )));
        }
        if b.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "b must have {dim} entries, got {}",
                b.len()
            )));
        }
        Ok(Self { dim, a, b, c })
    }

    /// `a = I`, `b = 0`, `c = 0`: the Laplacian.
    pub fn laplacian(dim: usize) -> Self {
        let a = (0..dim * dim)
            .map(|k| SpatialFn::Const(if k / dim == k % dim { 1.0 } else { 0.0 }))
            .collect();
        let b = vec![SpatialFn::Const(0.0); dim];
        Self { dim, a, b, c: None }
    }

    /// Constant coefficients.
    pub fn constant(a: &[f64], b: &[f64], c: f64) -> Result<Self> {
        let dim = b.len();
        Self::new(
            dim,
            a.iter().map(|&v| SpatialFn::Const(v)).collect(),
            b.iter().map(|&v| SpatialFn::Const(v)).collect(),
            (c != 0.0).then_some(SpatialFn::Const(c)),
        )
    }

    pub fn with_drift(mut self, b: Vec<SpatialFn>) -> Result<Self> {
        if b.len() != self.dim {
            return Err(Error::InvalidArgument(format!("b must have {} entries", self.dim)));
        }
        self.b = b;
        Ok(self)
    }

    pub fn with_reaction(mut self, c: SpatialFn) -> Self {
        self.c = Some(c);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, idx: usize, x: &[f64]) -> Result<PointCoefficients> {
        let d = self.dim;
        let mut out = PointCoefficients::default();
        for i in 0..d {
            for j in 0..d {
                out.a[i][j] = self.a[i * d + j].eval(idx, x)?;
            }
            out.b[i] = self.b[i].eval(idx, x)?;
        }
        if let Some(c) = &self.c {
            out.c = c.eval(idx, x)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DriftScheme {
    #[default]
    Upwind,
    Centered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeOptions {
    pub drift: DriftScheme,
    /// Fail assembly when the M-matrix check does not pass.
    pub require_m_matrix: bool,
    /// Ratio `λ_min/λ_max` of `a` below which ellipticity passes with a warning.
    pub conditioning_threshold: f64,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        Self {
            drift: DriftScheme::Upwind,
            require_m_matrix: false,
            conditioning_threshold: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EllipticityReport {
    pub passed: bool,
    /// Smallest eigenvalue of the symmetric part of `a` over interior points.
    pub min_eigenvalue: f64,
    /// Grid index where the minimum is attained.
    pub worst_index: Option<usize>,
    pub worst_coords: Vec<f64>,
    /// `a` equals its transpose at every sampled point.
    pub symmetric: bool,
    /// Points whose eigenvalue ratio falls below the conditioning threshold.
    pub ill_conditioned_points: usize,
    pub warnings: Vec<String>,
    /// Per-point minimum eigenvalue (`NaN` off the interior).
    #[serde(skip)]
    pub per_point: Vec<f64>,
}

fn symmetric_eigen_range(a: &[[f64; MAX_DIM]; MAX_DIM], d: usize) -> (f64, f64) {
    let m = nalgebra::DMatrix::from_fn(d, d, |i, j| 0.5 * (a[i][j] + a[j][i]));
    let ev = m.symmetric_eigenvalues();
    let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Minimum eigenvalue of the symmetric part of `a` at every interior point.
pub fn check_ellipticity(
    coeffs: &CoefficientSet,
    mask: &DomainMask,
    conditioning_threshold: f64,
) -> Result<EllipticityReport> {
    let grid = mask.grid();
    let d = grid.dim();
    if coeffs.dim != d {
        return Err(Error::InvalidArgument(format!(
            "coefficients are {}-dimensional, grid is {d}-dimensional",
            coeffs.dim
        )));
    }
    let mut per_point = vec![f64::NAN; grid.len()];
    let mut min_eigenvalue = f64::INFINITY;
    let mut worst_index = None;
    let mut symmetric = true;
    let mut ill = 0;
    for i in mask.interior_indices() {
        let x = grid.coords(i);
        let pc = coeffs.sample(i, &x[..d])?;
        for r in 0..d {
            for s in 0..r {
                let (p, q) = (pc.a[r][s], pc.a[s][r]);
                if (p - q).abs() > 1e-14 * (1.0 + p.abs().max(q.abs())) {
                    symmetric = false;
                }
            }
        }
        let (lo, hi) = symmetric_eigen_range(&pc.a, d);
        per_point[i] = lo;
        if lo > 0.0 && lo < conditioning_threshold * hi {
            ill += 1;
        }
        if lo < min_eigenvalue {
            min_eigenvalue = lo;
            worst_index = Some(i);
        }
    }
    let passed = min_eigenvalue > 0.0;
    let mut warnings = Vec::new();
    if !symmetric {
        warnings.push("a is not symmetric; its symmetric part is used".into());
    }
    if ill > 0 {
        warnings.push(format!(
            "{ill} point(s) have eigenvalue ratio below {conditioning_threshold:e}"
        ));
    }
    let worst_coords = worst_index
        .map(|i| grid.coords(i)[..d].to_vec())
        .unwrap_or_default();
    Ok(EllipticityReport {
        passed,
        min_eigenvalue,
        worst_index,
        worst_coords,
        symmetric,
        ill_conditioned_points: ill,
        warnings,
        per_point,
    })
}

/// Discrete operator on a mask. Rows are stored for interior points only;
/// column indices are grid indices.
#[derive(Debug, Clone)]
pub struct AssembledOperator {
    mask: Arc<DomainMask>,
    interior: Vec<usize>,
    local: Vec<usize>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
    options: SchemeOptions,
    ellipticity: EllipticityReport,
}

const NOT_INTERIOR: usize = usize::MAX;

/// Assembles `A` on `mask`.
pub fn assemble(
    mask: Arc<DomainMask>,
    coeffs: &CoefficientSet,
    options: SchemeOptions,
) -> Result<AssembledOperator> {
    let grid = mask.grid().clone();
    let d = grid.dim();
    let ellipticity = check_ellipticity(coeffs, &mask, options.conditioning_threshold)?;
    if !ellipticity.passed {
        let index = ellipticity.worst_index.unwrap_or(0);
        return Err(Error::Ellipticity {
            index,
            coords: ellipticity.worst_coords.clone(),
            min_eigenvalue: ellipticity.min_eigenvalue,
        });
    }
    let h = grid.spacing().to_vec();
    let interior: Vec<usize> = mask.interior_indices().collect();
    let mut local = vec![NOT_INTERIOR; grid.len()];
    for (k, &i) in interior.iter().enumerate() {
        local[i] = k;
    }

    let rows: Vec<(f64, Vec<(usize, f64)>)> = interior
        .par_iter()
        .map(|&i| {
            let x = grid.coords(i);
            let pc = coeffs.sample(i, &x[..d])?;
            if pc.c > 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "zero-order coefficient c = {} > 0 at grid point {i}",
                    pc.c
                )));
            }
            let mut entries: Vec<(usize, f64)> = Vec::with_capacity(2 * d + 4 * d * d);
            let mut diag = pc.c;
            let push = |off: &[isize; MAX_DIM], v: f64, entries: &mut Vec<(usize, f64)>| {
                let j = grid
                    .offset(i, &off[..d])
                    .expect("stencil stays on the grid for interior points");
                debug_assert!(mask.in_closure(j));
                entries.push((j, v));
            };
            for k in 0..d {
                let akk = pc.a[k][k];
                let mut plus = [0isize; MAX_DIM];
                plus[k] = 1;
                let mut minus = [0isize; MAX_DIM];
                minus[k] = -1;
                let w = akk / (h[k] * h[k]);
                push(&plus, w, &mut entries);
                push(&minus, w, &mut entries);
                diag -= 2.0 * w;

                let bk = pc.b[k];
                if bk != 0.0 {
                    match options.drift {
                        DriftScheme::Upwind => {
                            let w = bk.abs() / h[k];
                            push(if bk > 0.0 { &plus } else { &minus }, w, &mut entries);
                            diag -= w;
                        }
                        DriftScheme::Centered => {
                            let w = bk / (2.0 * h[k]);
                            push(&plus, w, &mut entries);
                            push(&minus, -w, &mut entries);
                        }
                    }
                }
            }
            for k in 0..d {
                for l in k + 1..d {
                    let akl = 0.5 * (pc.a[k][l] + pc.a[l][k]);
                    if akl == 0.0 {
                        continue;
                    }
                    // 2·a_kl·∂_k∂_l u with the seven-point stencil.
                    let s = akl.abs() / (h[k] * h[l]);
                    let sign: isize = if akl > 0.0 { 1 } else { -1 };
                    let mut c1 = [0isize; MAX_DIM];
                    c1[k] = 1;
                    c1[l] = sign;
                    let mut c2 = [0isize; MAX_DIM];
                    c2[k] = -1;
                    c2[l] = -sign;
                    push(&c1, s, &mut entries);
                    push(&c2, s, &mut entries);
                    for axis in [k, l] {
                        for step in [-1isize, 1] {
                            let mut off = [0isize; MAX_DIM];
                            off[axis] = step;
                            push(&off, -s, &mut entries);
                        }
                    }
                    diag += 2.0 * s;
                }
            }
            entries.sort_by_key(|&(j, _)| j);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
            for (j, v) in entries {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => merged.push((j, v)),
                }
            }
            Ok((diag, merged))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut row_ptr = Vec::with_capacity(interior.len() + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut diag = Vec::with_capacity(interior.len());
    row_ptr.push(0);
    for (dg, entries) in rows {
        diag.push(dg);
        for (j, v) in entries {
            cols.push(j);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    let op = AssembledOperator {
        mask,
        interior,
        local,
        row_ptr,
        cols,
        vals,
        diag,
        options,
        ellipticity,
    };
    if options.require_m_matrix {
        let report = check_m_matrix(&op);
        if !report.passed {
            return Err(Error::MMatrix(report.summary()));
        }
    }
    Ok(op)
}

impl AssembledOperator {
    pub fn mask(&self) -> &Arc<DomainMask> {
        &self.mask
    }

    pub fn options(&self) -> &SchemeOptions {
        &self.options
    }

    pub fn ellipticity(&self) -> &EllipticityReport {
        &self.ellipticity
    }

    /// Grid indices of the interior unknowns, in unknown order.
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn n_unknowns(&self) -> usize {
        self.interior.len()
    }

    /// Unknown number of a grid point, if interior.
    pub fn local_index(&self, idx: usize) -> Option<usize> {
        match self.local[idx] {
            NOT_INTERIOR => None,
            k => Some(k),
        }
    }

    /// Off-diagonal entries `(grid index, coefficient)` of the row for unknown `k`.
    pub fn row(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[k]..self.row_ptr[k + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    /// Coefficient of `u(x)` in `(A u)(x)` for unknown `k`.
    pub fn diag(&self, k: usize) -> f64 {
        self.diag[k]
    }

    /// Row sum of `A` for unknown `k`; equals `c(x)` for a consistent stencil.
    pub fn row_sum(&self, k: usize) -> f64 {
        self.diag[k] + self.row(k).map(|(_, v)| v).sum::<f64>()
    }

    /// `(A u)` at every interior unknown, `u` given on the grid.
    pub fn apply_interior(&self, u: &[f64]) -> Vec<f64> {
        (0..self.interior.len())
            .map(|k| self.apply_at(k, u))
            .collect()
    }

    pub(crate) fn apply_at(&self, k: usize, u: &[f64]) -> f64 {
        let mut s = self.diag[k] * u[self.interior[k]];
        for p in self.row_ptr[k]..self.row_ptr[k + 1] {
            s += self.vals[p] * u[self.cols[p]];
        }
        s
    }

    /// `A u` as a field: `(A u)(x)` on the interior, `u` itself on the boundary.
    pub fn apply(&self, u: &Field) -> Result<Field> {
        if !(Arc::ptr_eq(u.mask(), &self.mask) || **u.mask() == *self.mask) {
            return Err(Error::MaskMismatch);
        }
        let mut values = u.values().to_vec();
        for (k, v) in self.apply_interior(u.values()).into_iter().enumerate() {
            values[self.interior[k]] = v;
        }
        Ok(Field::from_raw(self.mask.clone(), values))
    }

    /// Interior system matrix `M = −A` restricted to interior unknowns.
    pub fn system_matrix(&self) -> Result<CsrMatrix> {
        let rows = (0..self.interior.len())
            .map(|k| {
                let mut r: Vec<(usize, f64)> = self
                    .row(k)
                    .filter_map(|(j, v)| self.local_index(j).map(|l| (l, -v)))
                    .collect();
                r.push((k, -self.diag[k]));
                r
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    /// `Σ_{j ∈ boundary} A_kj f_j` for every unknown `k`: the boundary data
    /// moved to the right-hand side of `M u = …`.
    pub fn boundary_coupling(&self, f: &[f64]) -> Vec<f64> {
        (0..self.interior.len())
            .map(|k| {
                self.row(k)
                    .filter(|&(j, _)| self.local[j] == NOT_INTERIOR)
                    .map(|(j, v)| v * f[j])
                    .sum()
            })
            .collect()
    }

    /// Assembles a field from interior unknowns and boundary values of `f`.
    pub fn scatter(&self, interior_values: &[f64], boundary: &Field) -> Field {
        let mut values = vec![f64::NAN; self.mask.grid().len()];
        for i in self.mask.boundary_indices() {
            values[i] = boundary.get(i);
        }
        for (k, &i) in self.interior.iter().enumerate() {
            values[i] = interior_values[k];
        }
        Field::from_raw(self.mask.clone(), values)
    }

    pub fn gather(&self, u: &Field) -> Vec<f64> {
        self.interior.iter().map(|&i| u.get(i)).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MMatrixReport {
    pub passed: bool,
    pub positive_diagonal: bool,
    pub nonpositive_offdiagonal: bool,
    pub weakly_diagonally_dominant: bool,
    /// Every row reaches a strictly dominant row through the matrix graph.
    pub chained_dominant: bool,
    pub violations: usize,
    pub first_violation: Option<usize>,
    pub suggestion: Option<String>,
}

impl MMatrixReport {
    pub fn summary(&self) -> String {
        let mut parts = Vec::new();
        if !self.positive_diagonal {
            parts.push("non-positive diagonal".to_string());
        }
        if !self.nonpositive_offdiagonal {
            parts.push(format!("{} positive off-diagonal entries", self.violations));
        }
        if !self.weakly_diagonally_dominant {
            parts.push("rows not diagonally dominant".into());
        }
        if !self.chained_dominant {
            parts.push("some rows never reach a strictly dominant row".into());
        }
        if let Some(s) = &self.suggestion {
            parts.push(s.clone());
        }
        if parts.is_empty() {
            "ok".into()
        } else {
            parts.join("; ")
        }
    }
}

/// Checks that `−A` (boundary columns included) has a positive diagonal,
/// nonpositive off-diagonals and is weakly chained diagonally dominant, which
/// makes the interior system a nonsingular M-matrix.
pub fn check_m_matrix(op: &AssembledOperator) -> MMatrixReport {
    let n = op.interior.len();
    let mut positive_diagonal = true;
    let mut nonpositive_offdiagonal = true;
    let mut weak = true;
    let mut violations = 0;
    let mut first_violation = None;
    let mut strict = vec![false; n];
    for k in 0..n {
        let dg = -op.diag[k];
        let scale = dg.abs().max(1e-300);
        if !(dg > 0.0) {
            positive_diagonal = false;
            violations += 1;
            first_violation.get_or_insert(op.interior[k]);
        }
        let mut off_all = 0.0;
        let mut off_interior = 0.0;
        for (j, v) in op.row(k) {
            let m = -v;
            if m > 1e-12 * scale {
                nonpositive_offdiagonal = false;
                violations += 1;
                first_violation.get_or_insert(op.interior[k]);
            }
            off_all += m.abs();
            if op.local[j] != NOT_INTERIOR {
                off_interior += m.abs();
            }
        }
        if dg < off_all * (1.0 - 1e-12) {
            weak = false;
            first_violation.get_or_insert(op.interior[k]);
        }
        strict[k] = dg > off_interior * (1.0 + 1e-12);
    }
    // Rows that reach a strictly dominant row: breadth-first search backwards
    // along the dependency graph.
    let mut reach = strict.clone();
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    for k in 0..n {
        for (j, v) in op.row(k) {
            if v != 0.0 {
                if let Some(l) = op.local_index(j) {
                    incoming[l].push(k);
                }
            }
        }
    }
    let mut queue: std::collections::VecDeque<usize> = (0..n).filter(|&k| strict[k]).collect();
    while let Some(l) = queue.pop_front() {
        for &k in &incoming[l] {
            if !reach[k] {
                reach[k] = true;
                queue.push_back(k);
            }
        }
    }
    let chained_dominant = reach.iter().all(|&r| r);
    let passed = positive_diagonal && nonpositive_offdiagonal && weak && chained_dominant;
    let suggestion = if nonpositive_offdiagonal {
        None
    } else if op.options.drift == DriftScheme::Centered {
        Some("centered drift dominates diffusion on this mesh; use upwind drift or refine".into())
    } else {
        Some("mixed coefficients are not diagonally dominant (a_ii/h_i < Σ|a_ij|/h_j)".into())
    };
    MMatrixReport {
        passed,
        positive_diagonal,
        nonpositive_offdiagonal,
        weakly_diagonally_dominant: weak,
        chained_dominant,
        violations,
        first_violation,
        suggestion,
    }
}
