//! Harmonic extension `H_D f`, Green potential `G_D g`, kernel columns and
//! the Kato-norm estimator.
//!
//! Sign convention: `G_D g` solves `A u = −g` on the interior with `u = 0` on
//! the boundary, so `G_D g ≥ 0` for `g ≥ 0` when `−A` is an M-matrix.

use std::num::NonZeroUsize;
use std::sync::{Arc, OnceLock};

use gauss_quad::legendre::GaussLegendre;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::geometry::DomainMask;
use crate::linalg::{LinearSolver, LinearSolverParams};
use crate::operator::AssembledOperator;

/// A factorized interior system `M = −A`, reusable across right-hand sides.
pub struct DirichletSolver<'a> {
    op: &'a AssembledOperator,
    solver: LinearSolver,
}

impl<'a> DirichletSolver<'a> {
    pub fn new(op: &'a AssembledOperator, params: LinearSolverParams) -> Result<Self> {
        params.validate()?;
        let m = op.system_matrix()?;
        let solver = LinearSolver::new(&m, params)?;
        Ok(Self { op, solver })
    }

    pub fn operator(&self) -> &AssembledOperator {
        self.op
    }

    /// Solves `M u = rhs` for the interior unknowns.
    pub fn solve_interior(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solver.solve(rhs, None)
    }

    pub fn harmonic_extension(&self, f: &Field) -> Result<Field> {
        check_mask(self.op, f)?;
        for (i, v) in f.boundary_values() {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "boundary data is not finite at grid point {i}"
                )));
            }
        }
        let rhs = self.op.boundary_coupling(f.values());
        let u = self.solve_interior(&rhs)?;
        Ok(self.op.scatter(&u, f))
    }

    pub fn green_apply(&self, source: &Field) -> Result<Field> {
        check_mask(self.op, source)?;
        let rhs = self.op.gather(source);
        if let Some(k) = rhs.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "source is not finite at grid point {}",
                self.op.interior()[k]
            )));
        }
        let u = self.solve_interior(&rhs)?;
        Ok(self.op.scatter(&u, &Field::zeros(self.op.mask().clone())))
    }

    /// `G_D(·, y)` for the interior grid point `y`, normalized so that
    /// `Σ_y G_D(x,y) g(y) h^d = (G_D g)(x)`.
    pub fn green_kernel_column(&self, y: usize) -> Result<Field> {
        let k = self.op.local_index(y).ok_or(Error::NotInterior(y))?;
        let mut rhs = vec![0.0; self.op.n_unknowns()];
        rhs[k] = 1.0 / self.op.mask().grid().cell_volume();
        let u = self.solve_interior(&rhs)?;
        Ok(self.op.scatter(&u, &Field::zeros(self.op.mask().clone())))
    }
}

fn check_mask(op: &AssembledOperator, f: &Field) -> Result<()> {
    if Arc::ptr_eq(f.mask(), op.mask()) || **f.mask() == **op.mask() {
        Ok(())
    } else {
        Err(Error::MaskMismatch)
    }
}

/// `H_D f`: `A h = 0` on the interior, `h = f` on the boundary.
pub fn harmonic_extension(
    op: &AssembledOperator,
    f: &Field,
    params: LinearSolverParams,
) -> Result<Field> {
    DirichletSolver::new(op, params)?.harmonic_extension(f)
}

/// `G_D g`: `A u = −g` on the interior, `u = 0` on the boundary.
pub fn green_apply(
    op: &AssembledOperator,
    source: &Field,
    params: LinearSolverParams,
) -> Result<Field> {
    DirichletSolver::new(op, params)?.green_apply(source)
}

pub fn green_kernel_column(
    op: &AssembledOperator,
    y: usize,
    params: LinearSolverParams,
) -> Result<Field> {
    DirichletSolver::new(op, params)?.green_kernel_column(y)
}

fn gauss_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(64).expect("nonzero")))
}

/// `∫_{[−½,½]³} |z|^{−1} dz`, by splitting the cube into six pyramids with
/// apex at the origin.
pub fn unit_cell_inverse_distance() -> f64 {
    static VALUE: OnceLock<f64> = OnceLock::new();
    *VALUE.get_or_init(|| {
        let q = gauss_rule();
        let face = q.integrate(-0.5, 0.5, |y| {
            q.integrate(-0.5, 0.5, |w| 1.0 / (0.25 + y * y + w * w).sqrt())
        });
        6.0 * 0.25 * face
    })
}

/// `−∫_{[−½,½]²} log|z| dz`, by splitting the square into four triangles.
pub fn unit_cell_negative_log() -> f64 {
    static VALUE: OnceLock<f64> = OnceLock::new();
    *VALUE.get_or_init(|| {
        let a = 0.5;
        let q = gauss_rule();
        4.0 * q.integrate(-a, a, |y| a * (0.25 - 0.5 * (a * a + y * y).sqrt().ln()))
    })
}

/// Windowed Kato-norm estimate
/// `sup_{x ∈ window} Σ_{|x−y| ≤ α} |p(y)| k(|x−y|) h^d` with
/// `k(r) = r^{2−d}` for `d = 3` and `k(r) = log(α/r)` for `d = 2`. The
/// `y = x` term is the exact kernel integral over the cell around `x`.
pub fn kato_norm_estimate(p: &Field, alpha: f64, window: &DomainMask) -> Result<f64> {
    let grid = p.grid();
    let d = grid.dim();
    if !(2..=3).contains(&d) {
        return Err(Error::InvalidArgument(format!(
            "the Kato estimator needs d = 2 or 3, got {d}"
        )));
    }
    if !p.mask().same_grid(window) {
        return Err(Error::MaskMismatch);
    }
    let h = grid.spacing();
    let hmax = h[..d].iter().cloned().fold(0.0, f64::max);
    if !(alpha >= hmax) {
        return Err(Error::InvalidArgument(format!(
            "alpha = {alpha} is below the mesh width {hmax}"
        )));
    }
    let vol = grid.cell_volume();
    let hcell = vol.powf(1.0 / d as f64);
    let self_factor = match d {
        3 => hcell * hcell * unit_cell_inverse_distance(),
        _ => hcell * hcell * ((alpha / hcell).ln() + unit_cell_negative_log()),
    };
    // Lattice offsets inside the ball, with their kernel weights.
    let reach: Vec<isize> = (0..d).map(|k| (alpha / h[k]).floor() as isize).collect();
    let mut stencil: Vec<([isize; 3], f64)> = Vec::new();
    let r2 = if d == 3 { reach[2] } else { 0 };
    for i in -reach[0]..=reach[0] {
        for j in -reach[1]..=reach[1] {
            for k in -r2..=r2 {
                let off = [i, j, k];
                let r = (0..d)
                    .map(|a| (off[a] as f64 * h[a]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if r > 0.0 && r <= alpha * (1.0 + 1e-12) {
                    let kernel = if d == 3 { 1.0 / r } else { (alpha / r).ln() };
                    stencil.push((off, kernel * vol));
                }
            }
        }
    }
    let values = p.values();
    let points: Vec<usize> = window.interior_indices().collect();
    let estimate = points
        .par_iter()
        .map(|&x| {
            let mut s = if p.mask().in_closure(x) {
                values[x].abs() * self_factor
            } else {
                0.0
            };
            for (off, w) in &stencil {
                if let Some(y) = grid.offset(x, &off[..d]) {
                    if p.mask().in_closure(y) {
                        s += values[y].abs() * w;
                    }
                }
            }
            s
        })
        .reduce(|| 0.0, f64::max);
    Ok(estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Grid;
    use crate::operator::{assemble, CoefficientSet, SchemeOptions};

    fn laplace(dim: usize, n: usize) -> AssembledOperator {
        let g = Arc::new(Grid::cube(dim, n, 0.0, 1.0).unwrap());
        let m = Arc::new(DomainMask::full(g).unwrap());
        assemble(m, &CoefficientSet::laplacian(dim), SchemeOptions::default()).unwrap()
    }

    #[test]
    fn linear_boundary_data_extends_linearly() {
        let op = laplace(1, 11);
        let f = Field::from_fn(op.mask().clone(), |_, x| x[0]);
        let h = harmonic_extension(&op, &f, LinearSolverParams::default()).unwrap();
        assert!(h.max_abs_diff(&f).unwrap() < 1e-12);
    }

    #[test]
    fn constants_are_harmonic() {
        let op = laplace(2, 7);
        let f = Field::constant(op.mask().clone(), 3.5);
        let h = harmonic_extension(&op, &f, LinearSolverParams::default()).unwrap();
        assert!(h.max_abs_diff(&f).unwrap() < 1e-12);
    }

    #[test]
    fn harmonic_quadratic_reproduced() {
        let op = laplace(2, 9);
        let exact = Field::from_fn(op.mask().clone(), |_, x| x[0] * x[0] - x[1] * x[1]);
        let h = harmonic_extension(&op, &exact, LinearSolverParams::default()).unwrap();
        assert!(h.max_abs_diff(&exact).unwrap() < 1e-10);
    }

    #[test]
    fn green_of_unit_source_is_parabola() {
        let op = laplace(1, 129);
        let one = Field::constant(op.mask().clone(), 1.0);
        let u = green_apply(&op, &one, LinearSolverParams::default()).unwrap();
        assert!((u.at(&[0.5]).unwrap() - 0.125).abs() < 1e-12);
        let exact = Field::from_fn(op.mask().clone(), |_, x| x[0] * (1.0 - x[0]) / 2.0);
        assert!(u.max_abs_diff(&exact).unwrap() < 1e-12);
    }

    #[test]
    fn green_sign_follows_source() {
        let op = laplace(1, 9);
        let zero = Field::zeros(op.mask().clone());
        let u = green_apply(&op, &zero, LinearSolverParams::default()).unwrap();
        assert_eq!(u.interior_max(), 0.0);
        let neg = Field::constant(op.mask().clone(), -2.0);
        let u = green_apply(&op, &neg, LinearSolverParams::default()).unwrap();
        assert!(u.interior_max() <= 0.0);
    }

    #[test]
    fn kernel_column_one_dimension() {
        let op = laplace(1, 9);
        let y = op.mask().grid().nearest(&[0.5]).unwrap();
        let g = green_kernel_column(&op, y, LinearSolverParams::default()).unwrap();
        // G(x, y) = x(1 − y) for x ≤ y.
        assert!((g.at(&[0.25]).unwrap() - 0.125).abs() < 1e-12);
        let edge = op.mask().grid().nearest(&[0.0]).unwrap();
        assert!(matches!(
            green_kernel_column(&op, edge, LinearSolverParams::default()),
            Err(Error::NotInterior(_))
        ));
    }

    #[test]
    fn kernel_symmetric_for_laplacian() {
        let op = laplace(2, 7);
        let s = DirichletSolver::new(&op, LinearSolverParams::default()).unwrap();
        let pts: Vec<usize> = op.interior().to_vec();
        for &a in &pts[..5] {
            let ga = s.green_kernel_column(a).unwrap();
            for &b in &pts {
                let gb = s.green_kernel_column(b).unwrap();
                assert!((ga.get(b) - gb.get(a)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cell_integrals_match_closed_forms() {
        // Independent midpoint rule for ∫_{[−½,½]²} log|z| dz.
        let n = 2000;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = -0.5 + (i as f64 + 0.5) / n as f64;
                let y = -0.5 + (j as f64 + 0.5) / n as f64;
                s += 0.5 * (x * x + y * y).ln();
            }
        }
        s /= (n * n) as f64;
        assert!((unit_cell_negative_log() + s).abs() < 1e-5, "{}", unit_cell_negative_log());
        // Known value of ∫_{[−½,½]³} |z|^{-1} dz ≈ 2.3800772.
        assert!((unit_cell_inverse_distance() - 2.380077).abs() < 1e-5);
    }

    #[test]
    fn kato_basic_properties() {
        let g = Arc::new(Grid::cube(3, 17, -1.0, 1.0).unwrap());
        let m = Arc::new(DomainMask::full(g.clone()).unwrap());
        let window = DomainMask::from_predicate(g, |x| x.iter().all(|v| v.abs() < 0.3)).unwrap();
        let zero = Field::zeros(m.clone());
        assert_eq!(kato_norm_estimate(&zero, 0.5, &window).unwrap(), 0.0);
        let one = Field::constant(m.clone(), 1.0);
        let two = Field::constant(m.clone(), 2.0);
        let e1 = kato_norm_estimate(&one, 0.5, &window).unwrap();
        let e2 = kato_norm_estimate(&two, 0.5, &window).unwrap();
        assert!((e2 - 2.0 * e1).abs() < 1e-12 * e1);
        let e3 = kato_norm_estimate(&one, 0.625, &window).unwrap();
        assert!(e3 >= e1);
        assert!(kato_norm_estimate(&one, 0.05, &window).is_err());
    }
}
