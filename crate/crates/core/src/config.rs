//! Run configuration: a TOML file with `[geometry]`, `[operator]`, `[phi]`,
//! `[solver]`, `[experiment]` and `[output]` sections, turned into the
//! library's domain objects.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::ExhaustionParams;
use crate::expr::Expr;
use crate::field::Field;
use crate::geometry::{DomainMask, ExhaustionSequence, Grid};
use crate::linalg::{LinearSolverParams, SolverMethod};
use crate::nonlinearity::{MajorantPhi, Phi, PhiTable};
use crate::operator::{CoefficientSet, DriftScheme, SchemeOptions, SpatialFn};
use crate::solver::{SemilinearParams, ShiftMode};

/// Seed used when neither the config nor the command line sets one.
pub const DEFAULT_SEED: u64 = 20_240_917;

/// A scalar given as a number, an expression string, or `{ csv = "path" }`
/// naming a grid-sampled field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Expr(String),
    Csv { csv: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShiftSetting {
    Named(String),
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub dim: usize,
    /// Points per axis; with `bounds` this fixes the grid.
    pub shape: Option<Vec<usize>>,
    pub bounds: Option<Vec<[f64; 2]>>,
    /// Alternative to `shape`/`bounds`: a cube `[−half_width, half_width]^d`
    /// with this spacing.
    pub spacing: Option<f64>,
    pub half_width: Option<f64>,
    /// Interior is where this expression is positive; the whole box if absent.
    pub mask: Option<String>,
    /// Half-widths of concentric exhaustion cubes.
    pub levels: Option<Vec<f64>>,
    /// Number of eroded levels when `levels` is absent.
    pub n_levels: Option<usize>,
    pub center: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    /// `d×d` entries, row-major; the identity when absent.
    pub a: Option<Vec<Scalar>>,
    pub b: Option<Vec<Scalar>>,
    pub c: Option<Scalar>,
    pub drift: Option<DriftScheme>,
    pub require_m_matrix: Option<bool>,
    pub conditioning_threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiConfig {
    /// `zero`, `power`, `linear`, `min_one`, `affine`, `product`, `expr` or `tabulated`.
    pub family: String,
    pub p: Option<Scalar>,
    pub gamma: Option<f64>,
    pub slope: Option<f64>,
    pub offset: Option<f64>,
    /// `ψ(t)` of the `product` family.
    pub psi: Option<String>,
    /// `φ(x, t)` of the `expr` family.
    pub expr: Option<String>,
    /// Table of the `tabulated` family.
    pub csv: Option<String>,
    /// Replace `φ` by its concave majorant `φ₁`.
    #[serde(default)]
    pub majorant: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub shift: Option<ShiftSetting>,
    pub linear_method: Option<SolverMethod>,
    pub linear_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Boundary constant of exhaustion runs.
    pub c: Option<f64>,
    /// Boundary data of `solve`; defaults to the constant `c`.
    pub boundary: Option<Scalar>,
    pub probe: Option<Vec<f64>>,
    pub probes: Option<Vec<Vec<f64>>>,
    pub m_values: Option<Vec<f64>>,
    /// Bounded domain of the blow-up sweep in `dichotomy`; the first level otherwise.
    pub sweep_mask: Option<String>,
    /// Points where this expression is positive form the thin set `A`.
    pub thin_set: Option<String>,
    /// Optional thinness witness `s(x)`.
    pub thin_witness: Option<String>,
    pub lambda_ratios: Option<Vec<f64>>,
    pub trivial_fraction: Option<f64>,
    pub saturation_band: Option<f64>,
    pub check_samples: Option<usize>,
    pub t_max: Option<f64>,
    pub t_points: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub operator: OperatorConfig,
    pub phi: PhiConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim
    }

    /// Structural checks that need no grid: dimensions, parsable
    /// expressions, referenced files.
    pub fn validate(&self) -> Result<()> {
        let d = self.geometry.dim;
        if d == 0 || d > crate::geometry::MAX_DIM {
            return Err(config_err(format!("geometry.dim must be 1, 2 or 3, got {d}")));
        }
        let g = &self.geometry;
        let explicit = g.shape.is_some() || g.bounds.is_some();
        let cube = g.spacing.is_some() || g.half_width.is_some();
        if explicit == cube {
            return Err(config_err(
                "geometry needs either shape + bounds or spacing + half_width",
            ));
        }
        if let Some(s) = &g.shape {
            if s.len() != d {
                return Err(config_err(format!("geometry.shape must have {d} entries")));
            }
        }
        if let Some(b) = &g.bounds {
            if b.len() != d {
                return Err(config_err(format!("geometry.bounds must have {d} entries")));
            }
        }
        for v in [&g.center, &self.experiment.probe].into_iter().flatten() {
            if v.len() != d {
                return Err(config_err(format!("points must have {d} coordinates")));
            }
        }
        for p in self.experiment.probes.iter().flatten() {
            if p.len() != d {
                return Err(config_err(format!("probes must have {d} coordinates")));
            }
        }
        if let Some(a) = &self.operator.a {
            if a.len() != d * d {
                return Err(config_err(format!("operator.a must have {} entries", d * d)));
            }
        }
        if let Some(b) = &self.operator.b {
            if b.len() != d {
                return Err(config_err(format!("operator.b must have {d} entries")));
            }
        }
        let spatial = [
            g.mask.as_deref(),
            self.experiment.sweep_mask.as_deref(),
            self.experiment.thin_set.as_deref(),
            self.experiment.thin_witness.as_deref(),
        ];
        for text in spatial.into_iter().flatten() {
            check_spatial(text, d)?;
        }
        let scalars = self
            .operator
            .a
            .iter()
            .flatten()
            .chain(self.operator.b.iter().flatten())
            .chain(&self.operator.c)
            .chain(&self.phi.p)
            .chain(&self.experiment.boundary);
        for s in scalars {
            match s {
                Scalar::Number(v) if !v.is_finite() => {
                    return Err(config_err("coefficients must be finite"))
                }
                Scalar::Expr(text) => check_spatial(text, d)?,
                Scalar::Csv { csv } => {
                    self.existing(csv)?;
                }
                _ => {}
            }
        }
        if let Some(csv) = &self.phi.csv {
            self.existing(csv)?;
        }
        if let Some(e) = &self.phi.expr {
            Expr::parse(e)?;
        }
        if let Some(e) = &self.phi.psi {
            Expr::parse(e)?;
        }
        Ok(())
    }

    fn existing(&self, rel: &str) -> Result<PathBuf> {
        let path = self.base_dir.join(rel);
        if path.is_file() {
            Ok(path)
        } else {
            Err(config_err(format!("referenced file {} does not exist", path.display())))
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        let g = &self.geometry;
        let grid = match (&g.shape, &g.bounds, g.spacing, g.half_width) {
            (Some(shape), Some(bounds), None, None) => {
                let b: Vec<(f64, f64)> = bounds.iter().map(|v| (v[0], v[1])).collect();
                Grid::new(g.dim, shape, &b)?
            }
            (None, None, Some(h), Some(w)) => Grid::centered_cube(g.dim, w, h)?,
            _ => {
                return Err(config_err(
                    "geometry needs either shape + bounds or spacing + half_width",
                ))
            }
        };
        Ok(Arc::new(grid))
    }

    /// Grid points where `text` evaluates positive.
    fn positive_set(grid: &Grid, text: &str) -> Result<Vec<bool>> {
        let e = Expr::parse(text)?;
        let dim = grid.dim();
        (0..grid.len())
            .map(|i| Ok(e.eval(&grid.coords(i)[..dim], None)? > 0.0))
            .collect()
    }

    fn predicate_mask(grid: &Arc<Grid>, text: &str) -> Result<DomainMask> {
        DomainMask::from_interior(grid.clone(), &Self::positive_set(grid, text)?)
    }

    /// The domain `Ω`: the mask predicate on the grid, or the full box.
    pub fn omega(&self) -> Result<Arc<DomainMask>> {
        let grid = self.grid()?;
        let mask = match &self.geometry.mask {
            Some(text) => Self::predicate_mask(&grid, text)?,
            None => DomainMask::full(grid)?,
        };
        Ok(Arc::new(mask))
    }

    pub fn center(&self) -> Vec<f64> {
        self.geometry.center.clone().unwrap_or_else(|| vec![0.0; self.dim()])
    }

    pub fn exhaustion(&self, omega: Arc<DomainMask>) -> Result<ExhaustionSequence> {
        match (&self.geometry.levels, self.geometry.n_levels) {
            (Some(w), _) => ExhaustionSequence::concentric_cubes(omega, &self.center(), w),
            (None, Some(n)) => ExhaustionSequence::build(omega, n),
            (None, None) => Err(config_err("geometry needs `levels` or `n_levels`")),
        }
    }

    /// Truncations `(radius, mask)` for the potential diagnostic: the cube
    /// levels paired with their half-widths.
    pub fn truncations(&self, seq: &ExhaustionSequence) -> Result<Vec<(f64, Arc<DomainMask>)>> {
        let radii = self
            .geometry
            .levels
            .clone()
            .ok_or_else(|| config_err("the potential diagnostic needs geometry.levels"))?;
        Ok(radii.into_iter().zip(seq.levels().iter().cloned()).collect())
    }

    pub fn sweep_mask(&self, seq: &ExhaustionSequence) -> Result<Arc<DomainMask>> {
        match &self.experiment.sweep_mask {
            Some(text) => Ok(Arc::new(Self::predicate_mask(seq.omega().grid(), text)?)),
            None => Ok(seq.levels()[0].clone()),
        }
    }

    /// Grid flags of the thin set `A`.
    pub fn thin_set(&self, grid: &Grid) -> Result<Option<Vec<bool>>> {
        self.experiment
            .thin_set
            .as_deref()
            .map(|text| Self::positive_set(grid, text))
            .transpose()
    }

    pub fn spatial(&self, s: &Scalar, omega: &Arc<DomainMask>) -> Result<SpatialFn> {
        Ok(match s {
            Scalar::Number(v) => SpatialFn::Const(*v),
            Scalar::Expr(text) => SpatialFn::parse(text)?,
            Scalar::Csv { csv } => {
                let path = self.existing(csv)?;
                let text = std::fs::read_to_string(&path)?;
                SpatialFn::sampled(&Field::from_csv(omega.clone(), &text)?)
            }
        })
    }

    pub fn coefficients(&self, omega: &Arc<DomainMask>) -> Result<CoefficientSet> {
        let d = self.dim();
        let op = &self.operator;
        let mut coeffs = CoefficientSet::laplacian(d);
        if let Some(a) = &op.a {
            let a = a.iter().map(|s| self.spatial(s, omega)).collect::<Result<Vec<_>>>()?;
            coeffs = CoefficientSet::new(d, a, vec![SpatialFn::Const(0.0); d], None)?;
        }
        if let Some(b) = &op.b {
            let b = b.iter().map(|s| self.spatial(s, omega)).collect::<Result<Vec<_>>>()?;
            coeffs = coeffs.with_drift(b)?;
        }
        if let Some(c) = &op.c {
            coeffs = coeffs.with_reaction(self.spatial(c, omega)?);
        }
        Ok(coeffs)
    }

    pub fn scheme(&self) -> SchemeOptions {
        let d = SchemeOptions::default();
        SchemeOptions {
            drift: self.operator.drift.unwrap_or(d.drift),
            require_m_matrix: self.operator.require_m_matrix.unwrap_or(d.require_m_matrix),
            conditioning_threshold: self
                .operator
                .conditioning_threshold
                .unwrap_or(d.conditioning_threshold),
        }
    }

    /// The density `p` of the nonlinearity, when it has one.
    pub fn density(&self, omega: &Arc<DomainMask>) -> Result<Option<SpatialFn>> {
        self.phi.p.as_ref().map(|s| self.spatial(s, omega)).transpose()
    }

    /// `φ` as configured, before any majorant replacement.
    pub fn base_phi(&self, omega: &Arc<DomainMask>) -> Result<Phi> {
        let ph = &self.phi;
        let p = || -> Result<SpatialFn> {
            Ok(self.density(omega)?.unwrap_or(SpatialFn::Const(1.0)))
        };
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| config_err(format!("phi family `{}` needs `{name}`", ph.family)))
        };
        Ok(match ph.family.as_str() {
            "zero" => Phi::zero(),
            "power" => Phi::power(p()?, need(ph.gamma, "gamma")?),
            "linear" => Phi::linear(p()?),
            "min_one" => Phi::min_one(p()?),
            "affine" => Phi::affine(
                p()?,
                need(ph.slope, "slope")?,
                need(ph.offset, "offset")?,
            ),
            "product" => {
                let psi = ph
                    .psi
                    .as_deref()
                    .ok_or_else(|| config_err("phi family `product` needs `psi`"))?;
                Phi::product_expr(p()?, Expr::parse(psi)?)
            }
            "expr" => {
                let e = ph
                    .expr
                    .as_deref()
                    .ok_or_else(|| config_err("phi family `expr` needs `expr`"))?;
                Phi::expr(Expr::parse(e)?)
            }
            "tabulated" => {
                let csv = ph
                    .csv
                    .as_deref()
                    .ok_or_else(|| config_err("phi family `tabulated` needs `csv`"))?;
                let text = std::fs::read_to_string(self.existing(csv)?)?;
                Phi::tabulated(PhiTable::from_csv(omega.grid().len(), &text)?)
            }
            other => return Err(config_err(format!("unknown phi family `{other}`"))),
        })
    }

    /// `φ`, replaced by its majorant when `phi.majorant` is set.
    pub fn phi(&self, omega: &Arc<DomainMask>) -> Result<Phi> {
        let base = self.base_phi(omega)?;
        if !self.phi.majorant {
            return Ok(base);
        }
        Ok(self.majorant(&base, omega)?.into_phi())
    }

    pub fn majorant(&self, base: &Phi, omega: &Arc<DomainMask>) -> Result<MajorantPhi> {
        let p = self
            .density(omega)?
            .ok_or_else(|| config_err("the majorant needs a density `phi.p`"))?;
        MajorantPhi::build_default(base, &p.to_field(omega.clone())?)
    }

    pub fn solver_params(&self) -> Result<SemilinearParams> {
        let s = &self.solver;
        let d = SemilinearParams::default();
        let shift = match &s.shift {
            None => d.shift,
            Some(ShiftSetting::Fixed(l)) => ShiftMode::Fixed(*l),
            Some(ShiftSetting::Named(n)) => match n.as_str() {
                "adaptive" => ShiftMode::Adaptive,
                "auto" => ShiftMode::Auto,
                other => return Err(config_err(format!("unknown shift mode `{other}`"))),
            },
        };
        let mut linear = LinearSolverParams::default();
        if let Some(m) = s.linear_method {
            linear.method = m;
        }
        if let Some(t) = s.linear_tolerance {
            linear.tolerance = t;
        }
        let params = SemilinearParams {
            shift,
            tolerance: s.tolerance.unwrap_or(d.tolerance),
            max_iterations: s.max_iterations.unwrap_or(d.max_iterations),
            record_history: false,
            linear,
        };
        params.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(params)
    }

    pub fn exhaustion_params(&self) -> Result<ExhaustionParams> {
        let d = ExhaustionParams::default();
        Ok(ExhaustionParams {
            solver: self.solver_params()?,
            scheme: self.scheme(),
            trivial_fraction: self.experiment.trivial_fraction.unwrap_or(d.trivial_fraction),
            saturation_band: self.experiment.saturation_band.unwrap_or(d.saturation_band),
            monotonicity_tolerance: d.monotonicity_tolerance,
        })
    }

    pub fn c(&self) -> f64 {
        self.experiment.c.unwrap_or(1.0)
    }

    pub fn probe(&self) -> Vec<f64> {
        self.experiment.probe.clone().unwrap_or_else(|| self.center())
    }

    pub fn probes(&self) -> Vec<Vec<f64>> {
        self.experiment.probes.clone().unwrap_or_else(|| vec![self.probe()])
    }

    pub fn m_values(&self) -> Result<Vec<f64>> {
        self.experiment
            .m_values
            .clone()
            .ok_or_else(|| config_err("experiment.m_values is required"))
    }

    pub fn boundary_field(&self, omega: &Arc<DomainMask>) -> Result<Field> {
        match &self.experiment.boundary {
            Some(s) => self.spatial(s, omega)?.to_field(omega.clone()),
            None => Ok(Field::constant(omega.clone(), self.c())),
        }
    }
}

fn check_spatial(text: &str, dim: usize) -> Result<()> {
    let e = Expr::parse(text)?;
    if e.uses_t() {
        return Err(config_err(format!("spatial expression `{text}` must not use t")));
    }
    if e.max_coordinate() > dim {
        return Err(config_err(format!(
            "expression `{text}` uses x{} in dimension {dim}",
            e.max_coordinate()
        )));
    }
    Ok(())
}
