//! Lattice grids, domain masks and regular exhaustions.
//!
//! A [`Grid`] is a tensor lattice in dimension 1 to 3. A [`DomainMask`]
//! labels every lattice point as interior, boundary or exterior; it is the
//! discrete stand-in for a bounded regular domain `D` together with its
//! boundary `∂D`. An [`ExhaustionSequence`] is a strictly nested family of
//! masks `D_1 ⊂ D_2 ⊂ … ⊂ D_N` whose closures are compactly contained in the
//! next level and whose last level fills the ambient domain.
//!
//! Interior connectivity uses axis neighbors only. The boundary of a mask is
//! every non-interior point within Chebyshev distance one of the interior, so
//! that the corner points touched by cross-derivative stencils always carry
//! Dirichlet data.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 3;

/// Coordinates of a lattice point; entries past the grid dimension are zero.
pub type Point = [f64; MAX_DIM];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    dim: usize,
    shape: Vec<usize>,
    bounds: Vec<(f64, f64)>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

impl Grid {
    /// Uniform tensor grid with `shape[k]` points on `bounds[k]` along axis `k`.
    pub fn new(dim: usize, shape: &[usize], bounds: &[(f64, f64)]) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidGrid(format!(
                "dimension {dim} outside 1..={MAX_DIM}"
            )));
        }
        if shape.len() != dim || bounds.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} shape entries and bounds, got {} and {}",
                shape.len(),
                bounds.len()
            )));
        }
        if let Some(n) = shape.iter().find(|&&n| n < 3) {
            return Err(Error::InvalidGrid(format!(
                "every axis needs at least 3 points, got {n}"
            )));
        }
        for &(lo, hi) in bounds {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidGrid(format!(
                    "degenerate bounds [{lo}, {hi}]"
                )));
            }
        }
        let spacing: Vec<f64> = shape
            .iter()
            .zip(bounds)
            .map(|(&n, &(lo, hi))| (hi - lo) / (n - 1) as f64)
            .collect();
        let mut strides = vec![1; dim];
        for k in (0..dim.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * shape[k + 1];
        }
        let len = shape.iter().product();
        Ok(Self {
            dim,
            shape: shape.to_vec(),
            bounds: bounds.to_vec(),
            spacing,
            strides,
            len,
        })
    }

    /// Cube `[lo, hi]^dim` with `n` points per axis.
    pub fn cube(dim: usize, n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(dim, &vec![n; dim], &vec![(lo, hi); dim])
    }

    /// Cube `[-half_width, half_width]^dim` with the given mesh width.
    ///
    /// `2 * half_width / spacing` must be an integer (up to rounding).
    pub fn centered_cube(dim: usize, half_width: f64, spacing: f64) -> Result<Self> {
        let cells = 2.0 * half_width / spacing;
        let rounded = cells.round();
        if !(spacing > 0.0) || (cells - rounded).abs() > 1e-9 * cells.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "half-width {half_width} is not a multiple of spacing {spacing}/2"
            )));
        }
        Self::cube(dim, rounded as usize + 1, -half_width, half_width)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Total number of lattice points.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Volume of one lattice cell, `Π h_k`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.strides)
            .map(|(&i, &s)| i * s)
            .sum()
    }

    pub fn multi_index(&self, idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        let mut rem = idx;
        for k in 0..self.dim {
            out[k] = rem / self.strides[k];
            rem %= self.strides[k];
        }
        out
    }

    /// Coordinate of lattice index `i` along `axis`: `lo + i·h`.
    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        self.bounds[axis].0 + i as f64 * self.spacing[axis]
    }

    pub fn coords(&self, idx: usize) -> Point {
        let multi = self.multi_index(idx);
        let mut x = [0.0; MAX_DIM];
        for k in 0..self.dim {
            x[k] = self.coordinate(k, multi[k]);
        }
        x
    }

    /// Index of the point displaced by `offsets` (one entry per axis), if on the grid.
    pub fn offset(&self, idx: usize, offsets: &[isize]) -> Option<usize> {
        let multi = self.multi_index(idx);
        let mut out = 0;
        for k in 0..self.dim {
            let j = multi[k] as isize + offsets[k];
            if j < 0 || j >= self.shape[k] as isize {
                return None;
            }
            out += j as usize * self.strides[k];
        }
        Some(out)
    }

    pub fn neighbor(&self, idx: usize, axis: usize, step: isize) -> Option<usize> {
        let i = (idx / self.strides[axis]) % self.shape[axis];
        let j = i as isize + step;
        if j < 0 || j >= self.shape[axis] as isize {
            None
        } else {
            Some((idx as isize + step * self.strides[axis] as isize) as usize)
        }
    }

    /// True when the point lies on the outer face of the lattice.
    pub fn on_edge(&self, idx: usize) -> bool {
        let multi = self.multi_index(idx);
        (0..self.dim).any(|k| multi[k] == 0 || multi[k] + 1 == self.shape[k])
    }

    /// Lattice point nearest to `x`, or `None` when `x` lies outside the bounds
    /// by more than half a cell.
    pub fn nearest(&self, x: &[f64]) -> Option<usize> {
        if x.len() < self.dim {
            return None;
        }
        let mut multi = [0usize; MAX_DIM];
        for k in 0..self.dim {
            let s = (x[k] - self.bounds[k].0) / self.spacing[k];
            let r = s.round();
            if !(r >= 0.0 && r <= (self.shape[k] - 1) as f64) {
                return None;
            }
            multi[k] = r as usize;
        }
        Some(self.index(&multi[..self.dim]))
    }

    /// All offset vectors in `{-1, 0, 1}^dim` except zero.
    pub(crate) fn chebyshev_offsets(&self) -> Vec<[isize; MAX_DIM]> {
        let mut out = Vec::new();
        let count = 3usize.pow(self.dim as u32);
        for code in 0..count {
            let mut off = [0isize; MAX_DIM];
            let mut c = code;
            for o in off.iter_mut().take(self.dim) {
                *o = (c % 3) as isize - 1;
                c /= 3;
            }
            if off.iter().any(|&o| o != 0) {
                out.push(off);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PointClass {
    Interior,
    Boundary,
    Exterior,
}

impl PointClass {
    fn symbol(self) -> char {
        match self {
            PointClass::Interior => 'I',
            PointClass::Boundary => 'B',
            PointClass::Exterior => '.',
        }
    }

    fn from_symbol(c: char) -> Option<Self> {
        match c {
            'I' => Some(PointClass::Interior),
            'B' => Some(PointClass::Boundary),
            '.' => Some(PointClass::Exterior),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DomainMask {
    grid: Arc<Grid>,
    class: Vec<PointClass>,
    n_interior: usize,
    n_boundary: usize,
}

impl PartialEq for DomainMask {
    fn eq(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid)
            && self.class == other.class
    }
}

impl DomainMask {
    /// Mask whose interior is every non-edge lattice point where `inside` holds.
    pub fn from_predicate(grid: Arc<Grid>, inside: impl Fn(&[f64]) -> bool) -> Result<Self> {
        let dim = grid.dim();
        let flags: Vec<bool> = (0..grid.len())
            .map(|i| inside(&grid.coords(i)[..dim]))
            .collect();
        Self::from_interior(grid, &flags)
    }

    /// Every non-edge point is interior; the outer faces are the boundary.
    pub fn full(grid: Arc<Grid>) -> Result<Self> {
        let flags = vec![true; grid.len()];
        Self::from_interior(grid, &flags)
    }

    /// Builds a mask from a candidate interior set. Edge points are never interior.
    pub fn from_interior(grid: Arc<Grid>, flags: &[bool]) -> Result<Self> {
        if flags.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "interior flags have length {}, grid has {} points",
                flags.len(),
                grid.len()
            )));
        }
        let mut class = vec![PointClass::Exterior; grid.len()];
        let mut n_interior = 0;
        for (i, c) in class.iter_mut().enumerate() {
            if flags[i] && !grid.on_edge(i) {
                *c = PointClass::Interior;
                n_interior += 1;
            }
        }
        if n_interior == 0 {
            return Err(Error::EmptyInterior);
        }
        let offsets = grid.chebyshev_offsets();
        let mut n_boundary = 0;
        for i in 0..grid.len() {
            if class[i] != PointClass::Interior {
                continue;
            }
            for off in &offsets {
                if let Some(j) = grid.offset(i, &off[..grid.dim()]) {
                    if class[j] == PointClass::Exterior {
                        class[j] = PointClass::Boundary;
                        n_boundary += 1;
                    }
                }
            }
        }
        let mask = Self {
            grid,
            class,
            n_interior,
            n_boundary,
        };
        let components = mask.interior_components();
        if components != 1 {
            return Err(Error::Disconnected { components });
        }
        Ok(mask)
    }

    fn interior_components(&self) -> usize {
        let mut seen = vec![false; self.class.len()];
        let mut components = 0;
        let mut queue = VecDeque::new();
        for start in self.interior_indices() {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                for axis in 0..self.grid.dim() {
                    for step in [-1, 1] {
                        if let Some(j) = self.grid.neighbor(i, axis, step) {
                            if !seen[j] && self.class[j] == PointClass::Interior {
                                seen[j] = true;
                                queue.push_back(j);
                            }
                        }
                    }
                }
            }
        }
        components
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn class(&self, idx: usize) -> PointClass {
        self.class[idx]
    }

    pub fn classes(&self) -> &[PointClass] {
        &self.class
    }

    pub fn is_interior(&self, idx: usize) -> bool {
        self.class[idx] == PointClass::Interior
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        self.class[idx] == PointClass::Boundary
    }

    /// Interior or boundary.
    pub fn in_closure(&self, idx: usize) -> bool {
        self.class[idx] != PointClass::Exterior
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn n_boundary(&self) -> usize {
        self.n_boundary
    }

    pub fn interior_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices_of(PointClass::Interior)
    }

    pub fn boundary_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices_of(PointClass::Boundary)
    }

    pub fn closure_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.class.len()).filter(move |&i| self.class[i] != PointClass::Exterior)
    }

    fn indices_of(&self, which: PointClass) -> impl Iterator<Item = usize> + '_ {
        (0..self.class.len()).filter(move |&i| self.class[i] == which)
    }

    /// True when both masks live on the same grid.
    pub fn same_grid(&self, other: &DomainMask) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    /// Line-oriented text form: a header followed by one class character per
    /// point in row-major order (`I` interior, `B` boundary, `.` exterior),
    /// one line per run of the last axis.
    pub fn to_text(&self) -> String {
        let g = &self.grid;
        let mut out = String::new();
        let _ = writeln!(out, "semilab-mask 1");
        let _ = writeln!(out, "dim {}", g.dim());
        let shape: Vec<String> = g.shape().iter().map(|n| n.to_string()).collect();
        let _ = writeln!(out, "shape {}", shape.join(" "));
        let bounds: Vec<String> = g
            .bounds()
            .iter()
            .flat_map(|&(lo, hi)| [format!("{lo:?}"), format!("{hi:?}")])
            .collect();
        let _ = writeln!(out, "bounds {}", bounds.join(" "));
        let row = g.shape()[g.dim() - 1];
        for chunk in self.class.chunks(row) {
            out.extend(chunk.iter().map(|c| c.symbol()));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<Vec<String>> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("missing `{key}` line")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(Error::Format(format!("expected `{key}`, got `{line}`")));
            }
            Ok(parts.map(str::to_owned).collect())
        };
        let version = header("semilab-mask")?;
        if version != ["1"] {
            return Err(Error::Format(format!("unsupported mask version {version:?}")));
        }
        let parse_usize = |s: &String| {
            s.parse::<usize>()
                .map_err(|e| Error::Format(format!("bad integer `{s}`: {e}")))
        };
        let parse_f64 = |s: &String| {
            s.parse::<f64>()
                .map_err(|e| Error::Format(format!("bad number `{s}`: {e}")))
        };
        let dim = header("dim")?
            .first()
            .map(parse_usize)
            .transpose()?
            .ok_or_else(|| Error::Format("empty dim".into()))?;
        let shape = header("shape")?
            .iter()
            .map(parse_usize)
            .collect::<Result<Vec<_>>>()?;
        let flat = header("bounds")?
            .iter()
            .map(parse_f64)
            .collect::<Result<Vec<_>>>()?;
        if flat.len() != 2 * dim {
            return Err(Error::Format("bounds need two numbers per axis".into()));
        }
        let bounds: Vec<(f64, f64)> = flat.chunks(2).map(|c| (c[0], c[1])).collect();
        let grid = Arc::new(Grid::new(dim, &shape, &bounds)?);
        let body: String = lines.collect::<Vec<_>>().concat();
        let class = body
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| {
                PointClass::from_symbol(c)
                    .ok_or_else(|| Error::Format(format!("unknown class character `{c}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if class.len() != grid.len() {
            return Err(Error::Format(format!(
                "expected {} class characters, found {}",
                grid.len(),
                class.len()
            )));
        }
        let flags: Vec<bool> = class.iter().map(|&c| c == PointClass::Interior).collect();
        let mask = Self::from_interior(grid, &flags)?;
        if mask.class != class {
            return Err(Error::Format(
                "boundary labels are inconsistent with the interior set".into(),
            ));
        }
        Ok(mask)
    }
}

/// Nested masks `D_1 ⊂ … ⊂ D_N` on the grid of `omega`.
#[derive(Debug, Clone)]
pub struct ExhaustionSequence {
    omega: Arc<DomainMask>,
    levels: Vec<Arc<DomainMask>>,
}

impl ExhaustionSequence {
    /// Validates a user-supplied family of levels.
    pub fn from_levels(omega: Arc<DomainMask>, levels: Vec<Arc<DomainMask>>) -> Result<Self> {
        let seq = Self { omega, levels };
        seq.validate()?;
        Ok(seq)
    }

    /// Erodes `omega` into `n_levels` concentric levels.
    ///
    /// Level `n` keeps the interior points whose Euclidean distance to the
    /// complement of `omega`'s interior exceeds `ρ_max·(N − n)/N`, so cubes
    /// shrink to concentric cubes and balls to concentric balls.
    pub fn build(omega: Arc<DomainMask>, n_levels: usize) -> Result<Self> {
        if n_levels < 2 {
            return Err(Error::CannotNest(format!(
                "need at least 2 levels, got {n_levels}"
            )));
        }
        let grid = omega.grid().clone();
        let dim = grid.dim();
        let interior: Vec<usize> = omega.interior_indices().collect();
        let boundary: Vec<Point> = omega.boundary_indices().map(|j| grid.coords(j)).collect();
        let dist: Vec<f64> = interior
            .iter()
            .map(|&i| {
                let x = grid.coords(i);
                boundary
                    .iter()
                    .map(|y| (0..dim).map(|k| (x[k] - y[k]).powi(2)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .collect();
        let rho_max = dist.iter().cloned().fold(0.0, f64::max);
        let mut levels = Vec::with_capacity(n_levels);
        for n in 1..=n_levels {
            if n == n_levels {
                levels.push(omega.clone());
                break;
            }
            let rho = rho_max * (n_levels - n) as f64 / n_levels as f64;
            let mut flags = vec![false; grid.len()];
            for (&i, &d) in interior.iter().zip(&dist) {
                flags[i] = d > rho + 1e-12 * rho_max;
            }
            let level = DomainMask::from_interior(grid.clone(), &flags).map_err(|e| match e {
                Error::EmptyInterior => {
                    Error::CannotNest(format!("level {n} of {n_levels} is empty"))
                }
                Error::Disconnected { components } => Error::CannotNest(format!(
                    "level {n} of {n_levels} splits into {components} components"
                )),
                other => other,
            })?;
            levels.push(Arc::new(level));
        }
        Self::from_levels(omega, levels)
    }

    /// Levels are the cubes `|x − center|_∞ < w_n` intersected with `omega`'s
    /// interior; the last half-width should reach `omega`'s boundary.
    pub fn concentric_cubes(
        omega: Arc<DomainMask>,
        center: &[f64],
        half_widths: &[f64],
    ) -> Result<Self> {
        let grid = omega.grid().clone();
        let dim = grid.dim();
        let hmin = grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
        let mut levels = Vec::with_capacity(half_widths.len());
        for &w in half_widths {
            let flags: Vec<bool> = (0..grid.len())
                .map(|i| {
                    let x = grid.coords(i);
                    omega.is_interior(i)
                        && (0..dim).all(|k| (x[k] - center[k]).abs() < w - 1e-9 * hmin)
                })
                .collect();
            let level = DomainMask::from_interior(grid.clone(), &flags)
                .map_err(|e| Error::CannotNest(format!("cube of half-width {w}: {e}")))?;
            levels.push(Arc::new(level));
        }
        Self::from_levels(omega, levels)
    }

    fn validate(&self) -> Result<()> {
        if self.levels.len() < 2 {
            return Err(Error::CannotNest("need at least 2 levels".into()));
        }
        for (n, level) in self.levels.iter().enumerate() {
            if !level.same_grid(&self.omega) {
                return Err(Error::CannotNest(format!(
                    "level {} lives on a different grid",
                    n + 1
                )));
            }
            if let Some(i) = level
                .interior_indices()
                .find(|&i| !self.omega.is_interior(i))
            {
                return Err(Error::CannotNest(format!(
                    "level {} has interior point {i} outside omega",
                    n + 1
                )));
            }
        }
        for (n, pair) in self.levels.windows(2).enumerate() {
            let (inner, outer) = (&pair[0], &pair[1]);
            if let Some(i) = inner.closure_indices().find(|&i| !outer.is_interior(i)) {
                return Err(Error::CannotNest(format!(
                    "closure of level {} is not inside the interior of level {} (point {i})",
                    n + 1,
                    n + 2
                )));
            }
        }
        let last = self.levels.last().expect("at least two levels");
        if last.n_interior() != self.omega.n_interior()
            || self.omega.interior_indices().any(|i| !last.is_interior(i))
        {
            return Err(Error::CannotNest(
                "last level does not fill the interior of omega".into(),
            ));
        }
        Ok(())
    }

    pub fn omega(&self) -> &Arc<DomainMask> {
        &self.omega
    }

    pub fn levels(&self) -> &[Arc<DomainMask>] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_partition() {
        let g = Grid::new(1, &[5], &[(0.0, 1.0)]).unwrap();
        assert_eq!(g.spacing(), &[0.25]);
        let pts: Vec<f64> = (0..5).map(|i| g.coords(i)[0]).collect();
        assert_eq!(pts, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn cube_spacing() {
        let g = Grid::cube(3, 9, -1.0, 1.0).unwrap();
        assert_eq!(g.spacing(), &[0.25, 0.25, 0.25]);
        assert_eq!(g.len(), 729);
    }

    #[test]
    fn rejects_small_or_degenerate() {
        assert!(matches!(
            Grid::new(2, &[2, 5], &[(0.0, 1.0), (0.0, 1.0)]),
            Err(Error::InvalidGrid(_))
        ));
        assert!(matches!(
            Grid::new(1, &[5], &[(1.0, 1.0)]),
            Err(Error::InvalidGrid(_))
        ));
        assert!(Grid::new(4, &[3; 4], &[(0.0, 1.0); 4]).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let g = Grid::new(3, &[3, 4, 5], &[(0.0, 1.0); 3]).unwrap();
        for i in 0..g.len() {
            let m = g.multi_index(i);
            assert_eq!(g.index(&m[..3]), i);
        }
        assert_eq!(g.neighbor(0, 2, 1), Some(1));
        assert_eq!(g.neighbor(0, 0, 1), Some(20));
        assert_eq!(g.neighbor(0, 1, -1), None);
    }

    #[test]
    fn box_mask_faces_are_boundary() {
        let g = Arc::new(Grid::cube(3, 5, 0.0, 1.0).unwrap());
        let m = DomainMask::full(g.clone()).unwrap();
        for i in 0..g.len() {
            let expected = if g.on_edge(i) {
                PointClass::Boundary
            } else {
                PointClass::Interior
            };
            assert_eq!(m.class(i), expected);
        }
        assert_eq!(m.n_interior(), 27);
        assert_eq!(m.n_boundary(), 125 - 27);
    }

    #[test]
    fn ball_boundary_touches_interior() {
        let g = Arc::new(Grid::cube(3, 17, -1.0, 1.0).unwrap());
        let m = DomainMask::from_predicate(g.clone(), |x| {
            x.iter().map(|v| v * v).sum::<f64>() < 0.64
        })
        .unwrap();
        let offsets = g.chebyshev_offsets();
        for b in m.boundary_indices() {
            let x = g.coords(b);
            assert!(x.iter().map(|v| v * v).sum::<f64>() >= 0.64);
            assert!(offsets
                .iter()
                .filter_map(|o| g.offset(b, o))
                .any(|j| m.is_interior(j)));
        }
    }

    #[test]
    fn empty_interior_is_an_error() {
        let g = Arc::new(Grid::cube(2, 5, 0.0, 1.0).unwrap());
        assert!(matches!(
            DomainMask::from_predicate(g, |_| false),
            Err(Error::EmptyInterior)
        ));
    }

    #[test]
    fn disconnected_interior_is_an_error() {
        let g = Arc::new(Grid::cube(1, 9, 0.0, 1.0).unwrap());
        let r = DomainMask::from_predicate(g, |x| (x[0] - 0.5).abs() > 0.2);
        assert!(matches!(r, Err(Error::Disconnected { components: 2 })));
    }

    #[test]
    fn remasking_is_idempotent() {
        let g = Arc::new(Grid::cube(2, 13, -1.0, 1.0).unwrap());
        let m = DomainMask::from_predicate(g.clone(), |x| x[0] * x[0] + 2.0 * x[1] * x[1] < 0.7)
            .unwrap();
        let again = DomainMask::from_predicate(g.clone(), |x| {
            m.is_interior(g.nearest(x).unwrap())
        })
        .unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn text_roundtrip() {
        let g = Arc::new(Grid::new(2, &[6, 7], &[(-1.0, 1.0), (0.0, 0.3)]).unwrap());
        let m = DomainMask::from_predicate(g, |x| x[0] > -0.5).unwrap();
        let back = DomainMask::from_text(&m.to_text()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn text_rejects_inconsistent_labels() {
        let g = Arc::new(Grid::cube(1, 5, 0.0, 1.0).unwrap());
        let m = DomainMask::full(g).unwrap();
        let text = m.to_text().replace("BIIIB", "BIII.");
        assert!(DomainMask::from_text(&text).is_err());
    }

    #[test]
    fn cube_exhaustion_is_concentric() {
        let g = Arc::new(Grid::cube(3, 13, -1.0, 1.0).unwrap());
        let omega = Arc::new(DomainMask::full(g.clone()).unwrap());
        let seq = ExhaustionSequence::build(omega.clone(), 3).unwrap();
        assert_eq!(seq.len(), 3);
        let half_width = |m: &DomainMask| {
            m.interior_indices()
                .map(|i| g.coords(i).iter().map(|v| v.abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max)
        };
        // Interior half-widths snap to the lattice below 1/3, 2/3 and 1.
        let hw: Vec<f64> = seq.levels().iter().map(|m| half_width(m)).collect();
        let h = 1.0 / 6.0;
        assert!((hw[0] - (1.0 / 3.0 - h / 2.0)).abs() < h, "{hw:?}");
        assert!((hw[1] - (2.0 / 3.0 - h / 2.0)).abs() < h, "{hw:?}");
        assert!((hw[2] - (1.0 - h)).abs() < 1e-12, "{hw:?}");
    }

    #[test]
    fn ball_exhaustion_two_levels() {
        let g = Arc::new(Grid::cube(3, 21, -1.0, 1.0).unwrap());
        let omega = Arc::new(
            DomainMask::from_predicate(g.clone(), |x| {
                x.iter().map(|v| v * v).sum::<f64>() < 0.81
            })
            .unwrap(),
        );
        let seq = ExhaustionSequence::build(omega, 2).unwrap();
        let inner = &seq.levels()[0];
        let r_max = inner
            .interior_indices()
            .map(|i| g.coords(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        assert!(r_max < 0.55 && r_max > 0.3, "inner radius {r_max}");
    }

    #[test]
    fn tiny_grid_cannot_nest() {
        let g = Arc::new(Grid::cube(1, 5, 0.0, 1.0).unwrap());
        let omega = Arc::new(DomainMask::full(g).unwrap());
        assert!(matches!(
            ExhaustionSequence::build(omega, 4),
            Err(Error::CannotNest(_))
        ));
    }

    #[test]
    fn truncation_cubes() {
        let g = Arc::new(Grid::centered_cube(3, 8.0, 1.0).unwrap());
        let omega = Arc::new(DomainMask::full(g).unwrap());
        let seq = ExhaustionSequence::concentric_cubes(omega, &[0.0; 3], &[2.0, 4.0, 8.0]).unwrap();
        let sizes: Vec<usize> = seq.levels().iter().map(|m| m.n_interior()).collect();
        assert_eq!(sizes, vec![27, 343, 15 * 15 * 15]);
    }

    #[test]
    fn from_levels_rejects_touching_levels() {
        let g = Arc::new(Grid::cube(1, 9, 0.0, 1.0).unwrap());
        let omega = Arc::new(DomainMask::full(g.clone()).unwrap());
        let inner = Arc::new(DomainMask::from_predicate(g, |x| x[0] < 0.8).unwrap());
        assert!(ExhaustionSequence::from_levels(omega.clone(), vec![inner, omega]).is_err());
    }
}
