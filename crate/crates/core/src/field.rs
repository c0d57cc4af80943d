//! Grid-aligned scalar functions.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{DomainMask, Grid};

/// One value per grid point; exterior points hold `NaN`.
#[derive(Debug, Clone)]
pub struct Field {
    mask: Arc<DomainMask>,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(mask: Arc<DomainMask>) -> Self {
        Self::constant(mask, 0.0)
    }

    pub fn constant(mask: Arc<DomainMask>, c: f64) -> Self {
        let values = (0..mask.grid().len())
            .map(|i| if mask.in_closure(i) { c } else { f64::NAN })
            .collect();
        Self { mask, values }
    }

    /// Samples `f(index, x)` on interior and boundary points.
    pub fn from_fn(mask: Arc<DomainMask>, mut f: impl FnMut(usize, &[f64]) -> f64) -> Self {
        let grid = mask.grid().clone();
        let dim = grid.dim();
        let values = (0..grid.len())
            .map(|i| {
                if mask.in_closure(i) {
                    f(i, &grid.coords(i)[..dim])
                } else {
                    f64::NAN
                }
            })
            .collect();
        Self { mask, values }
    }

    /// Wraps raw grid-sized values; interior and boundary entries must be finite.
    pub fn from_values(mask: Arc<DomainMask>, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != mask.grid().len() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values, grid has {} points",
                values.len(),
                mask.grid().len()
            )));
        }
        for (i, v) in values.iter_mut().enumerate() {
            if mask.in_closure(i) {
                if !v.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "non-finite value {v} at grid point {i}"
                    )));
                }
            } else {
                *v = f64::NAN;
            }
        }
        Ok(Self { mask, values })
    }

    pub(crate) fn from_raw(mask: Arc<DomainMask>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), mask.grid().len());
        Self { mask, values }
    }

    pub fn mask(&self) -> &Arc<DomainMask> {
        &self.mask
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.mask.grid()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn set(&mut self, idx: usize, v: f64) {
        self.values[idx] = v;
    }

    /// Value at the lattice point nearest to `x`.
    pub fn at(&self, x: &[f64]) -> Option<f64> {
        self.grid().nearest(x).map(|i| self.values[i])
    }

    pub fn same_mask(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.mask, &other.mask) || *self.mask == *other.mask
    }

    pub fn ensure_same_mask(&self, other: &Field) -> Result<()> {
        if self.same_mask(other) {
            Ok(())
        } else {
            Err(Error::MaskMismatch)
        }
    }

    pub fn interior_values(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.mask.interior_indices().map(move |i| (i, self.values[i]))
    }

    pub fn boundary_values(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.mask.boundary_indices().map(move |i| (i, self.values[i]))
    }

    pub fn interior_max(&self) -> f64 {
        self.interior_values().map(|(_, v)| v).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn interior_min(&self) -> f64 {
        self.interior_values().map(|(_, v)| v).fold(f64::INFINITY, f64::min)
    }

    pub fn boundary_max(&self) -> f64 {
        self.boundary_values().map(|(_, v)| v).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn boundary_min(&self) -> f64 {
        self.boundary_values().map(|(_, v)| v).fold(f64::INFINITY, f64::min)
    }

    /// `sup |self − other|` over interior and boundary points.
    pub fn max_abs_diff(&self, other: &Field) -> Result<f64> {
        self.ensure_same_mask(other)?;
        Ok(self
            .mask
            .closure_indices()
            .map(|i| (self.values[i] - other.values[i]).abs())
            .fold(0.0, f64::max))
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Field {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| if self.mask.in_closure(i) { f(v) } else { f64::NAN })
            .collect();
        Field::from_raw(self.mask.clone(), values)
    }

    /// `alpha·self + other`.
    pub fn axpy(&self, alpha: f64, other: &Field) -> Result<Field> {
        self.ensure_same_mask(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| alpha * a + b)
            .collect();
        Ok(Field::from_raw(self.mask.clone(), values))
    }

    pub fn scale(&self, alpha: f64) -> Field {
        self.map(|v| alpha * v)
    }

    /// Re-attaches the values to another mask on the same grid. Every interior
    /// and boundary point of `mask` must carry a finite value here.
    pub fn restrict_to(&self, mask: Arc<DomainMask>) -> Result<Field> {
        if !mask.same_grid(&self.mask) {
            return Err(Error::MaskMismatch);
        }
        let mut values = vec![f64::NAN; self.values.len()];
        for i in mask.closure_indices() {
            let v = self.values[i];
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "no value at grid point {i} of the target mask"
                )));
            }
            values[i] = v;
        }
        Ok(Field::from_raw(mask, values))
    }

    /// CSV with columns `i1..id, x1..xd, value` for every interior and
    /// boundary point in row-major order. Values carry 17 significant digits
    /// so they re-read bit-identically.
    pub fn to_csv(&self) -> String {
        let grid = self.grid();
        let dim = grid.dim();
        let mut out = String::new();
        let mut header: Vec<String> = (1..=dim).map(|k| format!("i{k}")).collect();
        header.extend((1..=dim).map(|k| format!("x{k}")));
        header.push("value".into());
        let _ = writeln!(out, "{}", header.join(","));
        for i in self.mask.closure_indices() {
            let m = grid.multi_index(i);
            let x = grid.coords(i);
            for k in 0..dim {
                let _ = write!(out, "{},", m[k]);
            }
            for xk in x.iter().take(dim) {
                let _ = write!(out, "{},", fmt_f64(*xk));
            }
            let _ = writeln!(out, "{}", fmt_f64(self.values[i]));
        }
        out
    }

    pub fn from_csv(mask: Arc<DomainMask>, text: &str) -> Result<Field> {
        let grid = mask.grid().clone();
        let dim = grid.dim();
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty field CSV".into()))?;
        let ncol = header.split(',').count();
        if ncol != 2 * dim + 1 {
            return Err(Error::Format(format!(
                "expected {} columns for a {dim}-d field, header has {ncol}",
                2 * dim + 1
            )));
        }
        let mut values = vec![f64::NAN; grid.len()];
        let mut multi = [0usize; crate::geometry::MAX_DIM];
        for (lineno, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != ncol {
                return Err(Error::Format(format!(
                    "row {} has {} columns",
                    lineno + 2,
                    cols.len()
                )));
            }
            for k in 0..dim {
                multi[k] = cols[k]
                    .parse()
                    .map_err(|e| Error::Format(format!("row {}: {e}", lineno + 2)))?;
                if multi[k] >= grid.shape()[k] {
                    return Err(Error::Format(format!(
                        "row {}: index out of range",
                        lineno + 2
                    )));
                }
            }
            let v: f64 = cols[ncol - 1]
                .parse()
                .map_err(|e| Error::Format(format!("row {}: {e}", lineno + 2)))?;
            values[grid.index(&multi[..dim])] = v;
        }
        Field::from_values(mask, values)
    }

    /// Binary form: magic `SLFD`, u32 version, u32 dim, u64 shape per axis,
    /// f64 bounds per axis, then every grid value as a little-endian f64 in
    /// row-major order (`NaN` on exterior points).
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        let grid = self.grid();
        w.write_all(b"SLFD")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(grid.dim() as u32).to_le_bytes())?;
        for &n in grid.shape() {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for &(lo, hi) in grid.bounds() {
            w.write_all(&lo.to_le_bytes())?;
            w.write_all(&hi.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mask: Arc<DomainMask>, mut r: impl Read) -> Result<Field> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"SLFD" {
            return Err(Error::Format("not a binary field (bad magic)".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != 1 {
            return Err(Error::Format("unsupported binary field version".into()));
        }
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        let grid = mask.grid();
        if dim != grid.dim() {
            return Err(Error::Format(format!(
                "binary field has dimension {dim}, mask has {}",
                grid.dim()
            )));
        }
        let mut shape = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut b8)?;
            shape.push(u64::from_le_bytes(b8) as usize);
        }
        let mut bounds = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut b8)?;
            let lo = f64::from_le_bytes(b8);
            r.read_exact(&mut b8)?;
            bounds.push((lo, f64::from_le_bytes(b8)));
        }
        if shape != grid.shape() || bounds != grid.bounds() {
            return Err(Error::Format("binary field grid does not match the mask".into()));
        }
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        Field::from_values(mask, values)
    }
}

/// Shortest decimal that is guaranteed to re-read identically (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
