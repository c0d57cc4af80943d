//! Nonlinearities `φ(x, t)`, hypothesis checks and the concave majorant.
//!
//! Every `φ` vanishes for `t ≤ 0`. Evaluation takes the grid index of `x`
//! alongside its coordinates so that sampled densities and tables resolve in
//! constant time.

use std::fmt;
use std::num::NonZeroUsize;
use std::sync::{Arc, OnceLock};

use gauss_quad::legendre::GaussLegendre;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::Field;
use crate::geometry::DomainMask;
use crate::operator::SpatialFn;

/// The `t`-profile of a product nonlinearity `p(x)·ψ(t)`, for `t > 0`.
#[derive(Clone)]
pub enum Psi {
    /// `t^γ`
    Power(f64),
    /// `t`
    Linear,
    /// `min(t, 1)`
    MinOne,
    /// An expression in `t`.
    Expr(Arc<Expr>),
}

impl fmt::Debug for Psi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psi::Power(g) => write!(f, "t^{g}"),
            Psi::Linear => write!(f, "t"),
            Psi::MinOne => write!(f, "min(t, 1)"),
            Psi::Expr(e) => write!(f, "{e}"),
        }
    }
}

impl Psi {
    fn eval(&self, t: f64) -> Result<f64> {
        Ok(match self {
            Psi::Power(g) => t.powf(*g),
            Psi::Linear => t,
            Psi::MinOne => t.min(1.0),
            Psi::Expr(e) => e.eval(&[], Some(t))?,
        })
    }
}

/// Hypothesis flags a nonlinearity claims. They are informational;
/// [`check_hypotheses`] verifies them on samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Claims {
    pub sh1: bool,
    pub h1: bool,
    pub h2: bool,
    pub h3: bool,
    pub h4: bool,
}

impl Claims {
    pub const ALL: Claims = Claims {
        sh1: true,
        h1: true,
        h2: true,
        h3: true,
        h4: true,
    };
    pub const NONE: Claims = Claims {
        sh1: false,
        h1: false,
        h2: false,
        h3: false,
        h4: false,
    };
}

/// Per-point table `φ(x, t_j)` with linear interpolation in `t`.
#[derive(Debug, Clone)]
pub struct PhiTable {
    t_grid: Vec<f64>,
    /// `n_grid × t_grid.len()`, `NaN` rows for points without data.
    values: Vec<f64>,
}

impl PhiTable {
    pub fn new(n_grid: usize, t_grid: Vec<f64>, rows: Vec<(usize, Vec<f64>)>) -> Result<Self> {
        if t_grid.len() < 2 || t_grid[0] != 0.0 {
            return Err(Error::InvalidArgument(
                "a tabulated nonlinearity needs a t-grid starting at 0 with at least 2 nodes".into(),
            ));
        }
        if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("t-grid must be strictly increasing".into()));
        }
        let nt = t_grid.len();
        let mut values = vec![f64::NAN; n_grid * nt];
        for (idx, row) in rows {
            if idx >= n_grid {
                return Err(Error::InvalidArgument(format!("table row for unknown grid point {idx}")));
            }
            if row.len() != nt {
                return Err(Error::InvalidArgument(format!(
                    "table row for grid point {idx} has {} values, expected {nt}",
                    row.len()
                )));
            }
            values[idx * nt..(idx + 1) * nt].copy_from_slice(&row);
        }
        Ok(Self { t_grid, values })
    }

    /// Reads `index,<t_0>,<t_1>,…` followed by one row per grid point.
    pub fn from_csv(n_grid: usize, text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty table".into()))?;
        let mut cells = header.split(',').map(str::trim);
        if cells.next() != Some("index") {
            return Err(Error::Format("table header must start with `index`".into()));
        }
        let t_grid = cells
            .map(|c| c.parse::<f64>().map_err(|_| Error::Format(format!("bad t value `{c}`"))))
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let mut cells = line.split(',').map(str::trim);
            let idx = cells
                .next()
                .and_then(|c| c.parse::<usize>().ok())
                .ok_or_else(|| Error::Format(format!("row {}: bad grid index", n + 2)))?;
            let row = cells
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| Error::Format(format!("row {}: bad value `{c}`", n + 2)))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((idx, row));
        }
        Self::new(n_grid, t_grid, rows)
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    fn eval(&self, idx: usize, t: f64) -> Result<f64> {
        let nt = self.t_grid.len();
        let row = self
            .values
            .get(idx * nt..(idx + 1) * nt)
            .filter(|r| r[0].is_finite())
            .ok_or_else(|| Error::InvalidArgument(format!("no table row for grid point {idx}")))?;
        let g = &self.t_grid;
        let j = match g.partition_point(|&s| s <= t) {
            0 => 0,
            j if j >= nt => nt - 2,
            j => j - 1,
        };
        let w = (t - g[j]) / (g[j + 1] - g[j]);
        Ok(row[j] + w * (row[j + 1] - row[j]))
    }
}

#[derive(Clone, Debug)]
pub enum PhiKind {
    Zero,
    /// `p(x)·ψ(t)`
    Product { p: SpatialFn, psi: Psi },
    /// `p(x)·(slope·t + offset)`
    Affine {
        p: SpatialFn,
        slope: f64,
        offset: f64,
    },
    Tabulated(Arc<PhiTable>),
    /// An expression in `x1..xd, r, t`.
    Expr(Arc<Expr>),
    Majorant(Arc<MajorantPhi>),
}

/// A nonlinearity `φ(x, t)` with the hypotheses it claims.
#[derive(Clone, Debug)]
pub struct Phi {
    kind: PhiKind,
    claims: Claims,
}

impl Phi {
    pub fn new(kind: PhiKind, claims: Claims) -> Self {
        Self { kind, claims }
    }

    pub fn zero() -> Self {
        Self::new(PhiKind::Zero, Claims::ALL)
    }

    /// `p(x)·t^γ`; claims every hypothesis when `0 < γ ≤ 1`.
    pub fn power(p: SpatialFn, gamma: f64) -> Self {
        let sublinear = gamma > 0.0 && gamma <= 1.0;
        let claims = Claims {
            sh1: sublinear,
            h1: true,
            h2: gamma >= 0.0,
            h3: true,
            h4: sublinear,
        };
        let psi = if gamma == 1.0 { Psi::Linear } else { Psi::Power(gamma) };
        Self::new(PhiKind::Product { p, psi }, claims)
    }

    pub fn linear(p: SpatialFn) -> Self {
        Self::power(p, 1.0)
    }

    pub fn min_one(p: SpatialFn) -> Self {
        Self::new(
            PhiKind::Product {
                p,
                psi: Psi::MinOne,
            },
            Claims::ALL,
        )
    }

    pub fn product_expr(p: SpatialFn, psi: Expr) -> Self {
        Self::new(
            PhiKind::Product {
                p,
                psi: Psi::Expr(Arc::new(psi)),
            },
            Claims::NONE,
        )
    }

    pub fn affine(p: SpatialFn, slope: f64, offset: f64) -> Self {
        let claims = Claims {
            sh1: (0.0..=1.0).contains(&slope) && (0.0..=1.0).contains(&offset),
            h1: true,
            h2: slope >= 0.0 && offset == 0.0,
            h3: true,
            h4: slope >= 0.0,
        };
        Self::new(PhiKind::Affine { p, slope, offset }, claims)
    }

    pub fn expr(e: Expr) -> Self {
        Self::new(PhiKind::Expr(Arc::new(e)), Claims::NONE)
    }

    pub fn tabulated(table: PhiTable) -> Self {
        Self::new(PhiKind::Tabulated(Arc::new(table)), Claims::NONE)
    }

    pub fn kind(&self) -> &PhiKind {
        &self.kind
    }

    pub fn claims(&self) -> Claims {
        self.claims
    }

    pub fn with_claims(mut self, claims: Claims) -> Self {
        self.claims = claims;
        self
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            PhiKind::Zero => true,
            PhiKind::Product { p, .. } | PhiKind::Affine { p, .. } => p.is_zero(),
            _ => false,
        }
    }

    /// The density `p` of product, affine and majorant kinds.
    pub fn density(&self) -> Option<SpatialFn> {
        match &self.kind {
            PhiKind::Product { p, .. } | PhiKind::Affine { p, .. } => Some(p.clone()),
            PhiKind::Majorant(m) => Some(SpatialFn::Sampled(m.p.clone())),
            _ => None,
        }
    }

    /// `φ(x, t)` at the grid point `idx` with coordinates `x`.
    pub fn eval(&self, idx: usize, x: &[f64], t: f64) -> Result<f64> {
        if !(t > 0.0) {
            if t.is_nan() {
                return Err(Error::InvalidArgument("φ evaluated at t = NaN".into()));
            }
            return Ok(0.0);
        }
        match &self.kind {
            PhiKind::Zero => Ok(0.0),
            PhiKind::Product { p, psi } => {
                let pv = p.eval(idx, x)?;
                if pv == 0.0 {
                    return Ok(0.0);
                }
                Ok(pv * psi.eval(t)?)
            }
            PhiKind::Affine { p, slope, offset } => Ok(p.eval(idx, x)? * (slope * t + offset)),
            PhiKind::Tabulated(table) => table.eval(idx, t),
            PhiKind::Expr(e) => Ok(e.eval(x, Some(t))?),
            PhiKind::Majorant(m) => m.eval(idx, x, t),
        }
    }

    /// Samples spatial densities on `mask` so that evaluation no longer
    /// parses or calls back per point.
    pub fn prepared(&self, mask: &Arc<DomainMask>) -> Result<Phi> {
        let sample = |p: &SpatialFn| -> Result<SpatialFn> {
            Ok(match p {
                SpatialFn::Expr(_) | SpatialFn::Func(_) => {
                    SpatialFn::sampled(&p.to_field(mask.clone())?)
                }
                other => other.clone(),
            })
        };
        let kind = match &self.kind {
            PhiKind::Product { p, psi } => PhiKind::Product {
                p: sample(p)?,
                psi: psi.clone(),
            },
            PhiKind::Affine { p, slope, offset } => PhiKind::Affine {
                p: sample(p)?,
                slope: *slope,
                offset: *offset,
            },
            other => other.clone(),
        };
        Ok(Phi::new(kind, self.claims))
    }

    /// `φ(·, u(·))` on the closure of `u`'s mask.
    pub fn apply(&self, u: &Field) -> Result<Field> {
        let grid = u.grid().clone();
        let d = grid.dim();
        let mut values = vec![f64::NAN; grid.len()];
        for i in u.mask().closure_indices() {
            values[i] = self.eval(i, &grid.coords(i)[..d], u.get(i))?;
        }
        Field::from_values(u.mask().clone(), values)
    }
}

/// A sample location `(grid index, coordinates)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub index: usize,
    pub x: Vec<f64>,
    pub t: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisResult {
    /// `None` when the hypothesis could not be tested.
    pub passed: Option<bool>,
    pub witness: Option<Witness>,
}

impl HypothesisResult {
    fn pass() -> Self {
        Self {
            passed: Some(true),
            witness: None,
        }
    }

    fn from_witness(witness: Option<Witness>) -> Self {
        Self {
            passed: Some(witness.is_none()),
            witness,
        }
    }

    pub fn failed(&self) -> bool {
        self.passed == Some(false)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    /// `φ(x,t) ≤ p(x)(t+1)`.
    pub sh1: HypothesisResult,
    /// Smallest `K` with `φ ≤ K·p(t+1)` on the samples.
    pub sh1_multiplier: Option<f64>,
    /// Finite, nonnegative values.
    pub h1: HypothesisResult,
    /// Nondecreasing in `t`.
    pub h2: HypothesisResult,
    /// Zero for `t ≤ 0`.
    pub h3: HypothesisResult,
    /// Concave in `t` on `[0, ∞)`.
    pub h4: HypothesisResult,
    pub claims: Claims,
    /// Claimed hypotheses that failed on the samples.
    pub contradicted_claims: Vec<String>,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        [&self.sh1, &self.h1, &self.h2, &self.h3, &self.h4]
            .iter()
            .all(|h| !h.failed())
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (name, h) in [
            ("SH1", &self.sh1),
            ("H1", &self.h1),
            ("H2", &self.h2),
            ("H3", &self.h3),
            ("H4", &self.h4),
        ] {
            if h.failed() {
                out.push(name);
            }
        }
        out
    }
}

/// `n` uniform nodes on `[0, t_max]`.
pub fn uniform_t_grid(t_max: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect()
}

/// 257 uniform nodes on `[0, 2]`, with `t = 1` a node.
pub fn default_t_grid() -> Vec<f64> {
    uniform_t_grid(2.0, 257)
}

/// Checks the hypotheses on `samples × t_grid`. `p` defaults to the
/// nonlinearity's own density; without one, SH1 is not tested.
pub fn check_hypotheses(
    phi: &Phi,
    p: Option<&SpatialFn>,
    samples: &[(usize, Vec<f64>)],
    t_grid: &[f64],
) -> Result<HypothesisReport> {
    if t_grid.len() < 3 || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "t-grid must be strictly increasing with at least 3 nodes".into(),
        ));
    }
    let density = p.cloned().or_else(|| phi.density());
    let positive: Vec<f64> = t_grid.iter().copied().filter(|&t| t >= 0.0).collect();
    let mut negative: Vec<f64> = t_grid.iter().copied().filter(|&t| t <= 0.0).collect();
    negative.extend([-1.0, -1e-3, 0.0]);

    let witness = |idx: usize, x: &[f64], t: f64, detail: String| Witness {
        index: idx,
        x: x.to_vec(),
        t,
        detail,
    };

    let mut multiplier: f64 = 0.0;
    let mut sh1_w = None;
    let mut h1_w = None;
    let mut h2_w = None;
    let mut h3_w = None;
    let mut h4_w = None;
    for (idx, x) in samples {
        let (idx, x) = (*idx, x.as_slice());
        let vals = positive
            .iter()
            .map(|&t| phi.eval(idx, x, t))
            .collect::<Result<Vec<_>>>()?;
        let scale = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-12 * scale;
        for (&t, &v) in positive.iter().zip(&vals) {
            if h1_w.is_none() && !(v.is_finite() && v >= 0.0) {
                h1_w = Some(witness(idx, x, t, format!("φ = {v}")));
            }
        }
        if let Some(pf) = &density {
            let pv = pf.eval(idx, x)?;
            for (&t, &v) in positive.iter().zip(&vals) {
                let ratio = if v <= 0.0 {
                    0.0
                } else if pv > 0.0 {
                    v / (pv * (t + 1.0))
                } else {
                    f64::INFINITY
                };
                if ratio > multiplier {
                    multiplier = ratio;
                }
                if sh1_w.is_none() && ratio > 1.0 + 1e-12 {
                    sh1_w = Some(witness(
                        idx,
                        x,
                        t,
                        format!("φ/(p(t+1)) = {ratio}"),
                    ));
                }
            }
        }
        for k in 1..vals.len() {
            if h2_w.is_none() && vals[k] < vals[k - 1] - tol {
                h2_w = Some(witness(
                    idx,
                    x,
                    positive[k],
                    format!("φ decreases from {} to {}", vals[k - 1], vals[k]),
                ));
            }
        }
        for k in 1..vals.len().saturating_sub(1) {
            let s0 = (vals[k] - vals[k - 1]) / (positive[k] - positive[k - 1]);
            let s1 = (vals[k + 1] - vals[k]) / (positive[k + 1] - positive[k]);
            let stol = 1e-9 * (1.0 + s0.abs().max(s1.abs()));
            if h4_w.is_none() && s1 > s0 + stol {
                h4_w = Some(witness(
                    idx,
                    x,
                    positive[k],
                    format!("slope increases from {s0} to {s1}"),
                ));
            }
        }
        for &t in &negative {
            let v = phi.eval(idx, x, t)?;
            if h3_w.is_none() && v != 0.0 {
                h3_w = Some(witness(idx, x, t, format!("φ = {v}")));
            }
        }
    }
    let (sh1, sh1_multiplier) = if density.is_some() {
        (HypothesisResult::from_witness(sh1_w), Some(multiplier))
    } else {
        (
            HypothesisResult {
                passed: None,
                witness: None,
            },
            None,
        )
    };
    let mut report = HypothesisReport {
        sh1,
        sh1_multiplier,
        h1: HypothesisResult::from_witness(h1_w),
        h2: HypothesisResult::from_witness(h2_w),
        h3: HypothesisResult::from_witness(h3_w),
        h4: HypothesisResult::from_witness(h4_w),
        claims: phi.claims(),
        contradicted_claims: Vec::new(),
    };
    let c = phi.claims();
    for (name, claimed, h) in [
        ("SH1", c.sh1, &report.sh1),
        ("H1", c.h1, &report.h1),
        ("H2", c.h2, &report.h2),
        ("H3", c.h3, &report.h3),
        ("H4", c.h4, &report.h4),
    ] {
        if claimed && h.failed() {
            report.contradicted_claims.push(name.to_string());
        }
    }
    if samples.is_empty() {
        report.h1 = HypothesisResult::pass();
    }
    Ok(report)
}

/// Closure points of `mask`, every `stride`-th, as hypothesis samples.
pub fn mask_samples(mask: &DomainMask, max_samples: usize) -> Vec<(usize, Vec<f64>)> {
    let grid = mask.grid();
    let d = grid.dim();
    let all: Vec<usize> = mask.closure_indices().collect();
    let stride = all.len().div_ceil(max_samples.max(1)).max(1);
    all.into_iter()
        .step_by(stride)
        .map(|i| (i, grid.coords(i)[..d].to_vec()))
        .collect()
}

fn gauss_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(64).expect("nonzero")))
}

/// The normalized bump `η(s) ∝ exp(−1/(1−s²))` on `(−1, 1)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Mollifier {
    norm: f64,
    /// `∫|η′|`
    pub abs_derivative_integral: f64,
    /// `4·∫|η′|`
    pub c1: f64,
}

fn raw_bump(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (-1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

impl Mollifier {
    pub fn standard() -> Self {
        let q = gauss_rule();
        let norm = 2.0 * q.integrate(0.0, 1.0, raw_bump);
        let derivative = |s: f64| {
            let w = 1.0 - s * s;
            raw_bump(s) * 2.0 * s / (w * w) / norm
        };
        let abs_derivative_integral = 2.0 * q.integrate(0.0, 1.0, |s| derivative(s).abs());
        Self {
            norm,
            abs_derivative_integral,
            c1: 4.0 * abs_derivative_integral,
        }
    }

    pub fn eta(&self, s: f64) -> f64 {
        raw_bump(s) / self.norm
    }

    /// `∫_{−1}^{1} η`, by the same rule.
    pub fn mass(&self) -> f64 {
        gauss_rule().integrate(-1.0, 0.0, |s| self.eta(s))
            + gauss_rule().integrate(0.0, 1.0, |s| self.eta(s))
    }

    /// `(f ∗ η_δ)(t) = ∫_{−1}^{1} f(t − δs) η(s) ds` for `f` vanishing on
    /// `(−∞, 0]`; the integral is split where `t − δs` crosses 0.
    pub fn convolve(&self, f: impl Fn(f64) -> Result<f64>, t: f64, delta: f64) -> Result<f64> {
        let q = gauss_rule();
        let hi = (t / delta).min(1.0);
        if hi <= -1.0 {
            return Ok(0.0);
        }
        let mut err = None;
        let mut integrand = |s: f64| match f(t - delta * s) {
            Ok(v) => v * self.eta(s),
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        };
        let v = if hi > 0.0 {
            q.integrate(-1.0, 0.0, &mut integrand) + q.integrate(0.0, hi, &mut integrand)
        } else {
            q.integrate(-1.0, hi, &mut integrand)
        };
        match err {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }
}

/// `(φ_x ∗ η_δ)(0) = ∫_0^1 φ(x, δs) η(s) ds`.
pub fn mollified_at_zero(
    phi: &Phi,
    idx: usize,
    x: &[f64],
    delta: f64,
    mollifier: &Mollifier,
) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!("delta = {delta} outside (0, 1]")));
    }
    let mut err = None;
    let v = gauss_rule().integrate(0.0, 1.0, |s| match phi.eval(idx, x, delta * s) {
        Ok(v) => v * mollifier.eta(s),
        Err(e) => {
            err.get_or_insert(e);
            0.0
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// `δ_k = 2^{−k}` for `k = 0..=12`.
pub fn default_delta_grid() -> Vec<f64> {
    (0..=12).map(|k| 0.5f64.powi(k)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct MajorantReport {
    pub sh1_multiplier: f64,
    pub c1: f64,
    /// `min (φ₁ − φ)` over the sampled lattice.
    pub domination_margin: f64,
    /// `min [φ₁((t+s)/2) − (φ₁(t) + φ₁(s))/2]` over sampled pairs.
    pub concavity_margin: f64,
    /// `min [2(φ ∗ η_δ)(t) − φ(t)]` over sampled points, `t ∈ [0, 2]` and the δ-grid.
    pub convolution_margin: f64,
    /// `max_x φ₁(x, 0)`, zero by construction.
    pub value_at_zero: f64,
    /// Measured `C` in `φ₁ ≤ C·p(t+1)`.
    pub constant_c: f64,
    pub samples: usize,
}

/// Number of extra pieces below the smallest grid δ, halving each time.
const TAIL_PIECES: i32 = 100;

/// The concave majorant `φ₁(x,t) = 2p(x)t + ψ(x, min(t,1))`, `t > 0`, with
/// `ψ(x,t) = min_δ [(2c₁/δ)p(x)t + 2(φ_x ∗ η_δ)(0)]` over the δ-grid.
///
/// A finite δ-grid leaves `ψ(x, 0+) = 2(φ_x ∗ η_δmin)(0) > 0`. To keep `φ₁`
/// continuous at 0 the minimum also runs over `δ = δ_min 2^{−j}`, where the
/// mollified value is replaced by its upper bound `sup_{[0,δ]} φ_x`. These
/// pieces lie above the exact ones, so domination is preserved.
pub struct MajorantPhi {
    base: Phi,
    mask: Arc<DomainMask>,
    p: Arc<Vec<f64>>,
    mollifier: Mollifier,
    delta_grid: Vec<f64>,
    /// The δ-grid followed by the tail deltas.
    piece_deltas: Vec<f64>,
    t_grid: Vec<f64>,
    /// Offset of each piece per grid point and piece, row-major.
    m: Vec<f64>,
    report: MajorantReport,
}

impl fmt::Debug for MajorantPhi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MajorantPhi")
            .field("base", &self.base)
            .field("delta_grid", &self.delta_grid)
            .field("report", &self.report)
            .finish()
    }
}

impl MajorantPhi {
    /// Builds `φ₁` on the closure of `p`'s mask. Fails when SH1 does not
    /// hold with density `p`, or when a sampled invariant is violated.
    pub fn build(
        phi: &Phi,
        p: &Field,
        mollifier: Mollifier,
        delta_grid: Vec<f64>,
        t_grid: Vec<f64>,
    ) -> Result<Self> {
        if delta_grid.is_empty() || delta_grid.iter().any(|&d| !(d > 0.0 && d <= 1.0)) {
            return Err(Error::InvalidArgument("δ-grid must be a nonempty subset of (0, 1]".into()));
        }
        if t_grid.len() < 3
            || t_grid[0] != 0.0
            || t_grid.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::InvalidArgument(
                "t-grid must start at 0 and be strictly increasing with at least 3 nodes".into(),
            ));
        }
        if p.values().iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidArgument("density p must be nonnegative".into()));
        }
        let mask = p.mask().clone();
        let grid = mask.grid().clone();
        let d = grid.dim();
        let phi = phi.prepared(&mask)?;
        let p_fn = SpatialFn::Sampled(Arc::new(p.values().to_vec()));
        let samples = mask_samples(&mask, 4096);
        let hyp = check_hypotheses(&phi, Some(&p_fn), &samples, &t_grid)?;
        if hyp.sh1.failed() {
            return Err(Error::Hypothesis(format!(
                "SH1 fails: φ ≤ K·p(t+1) needs K = {:.6}",
                hyp.sh1_multiplier.unwrap_or(f64::INFINITY)
            )));
        }
        let delta_min = delta_grid.iter().cloned().fold(f64::INFINITY, f64::min);
        let tail: Vec<f64> = (1..=TAIL_PIECES).map(|j| delta_min * 0.5f64.powi(j)).collect();
        let piece_deltas: Vec<f64> = delta_grid.iter().chain(&tail).cloned().collect();
        let nd = piece_deltas.len();
        let closure: Vec<usize> = mask.closure_indices().collect();
        let rows = closure
            .par_iter()
            .map(|&i| {
                let x = grid.coords(i);
                let mut row = delta_grid
                    .iter()
                    .map(|&delta| Ok(2.0 * mollified_at_zero(&phi, i, &x[..d], delta, &mollifier)?))
                    .collect::<Result<Vec<f64>>>()?;
                // 2(φ ∗ η_δ)(0) ≤ sup_{[0,δ]} φ since η_δ is even with unit mass.
                let mut sup: f64 = 0.0;
                let mut bounds = tail
                    .iter()
                    .rev()
                    .map(|&delta| {
                        sup = sup.max(phi.eval(i, &x[..d], delta)?);
                        Ok(sup)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                bounds.reverse();
                row.extend(bounds);
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut m = vec![f64::NAN; grid.len() * nd];
        for (&i, row) in closure.iter().zip(rows) {
            m[i * nd..(i + 1) * nd].copy_from_slice(&row);
        }
        let mut out = Self {
            base: phi,
            mask,
            p: Arc::new(p.values().to_vec()),
            mollifier,
            delta_grid,
            piece_deltas,
            t_grid,
            m,
            report: MajorantReport {
                sh1_multiplier: hyp.sh1_multiplier.unwrap_or(0.0),
                c1: mollifier.c1,
                domination_margin: f64::INFINITY,
                concavity_margin: f64::INFINITY,
                convolution_margin: f64::INFINITY,
                value_at_zero: 0.0,
                constant_c: 0.0,
                samples: samples.len(),
            },
        };
        out.report = out.verify(&samples)?;
        if out.report.concavity_margin < -1e-9 {
            return Err(Error::Hypothesis(format!(
                "majorant is not concave on the t-grid (defect {:e}); refine the δ-grid",
                -out.report.concavity_margin
            )));
        }
        if out.report.domination_margin < -1e-12 {
            return Err(Error::Hypothesis(format!(
                "majorant fails to dominate φ (margin {:e})",
                out.report.domination_margin
            )));
        }
        Ok(out)
    }

    /// Builds with the standard mollifier and default grids.
    pub fn build_default(phi: &Phi, p: &Field) -> Result<Self> {
        Self::build(
            phi,
            p,
            Mollifier::standard(),
            default_delta_grid(),
            default_t_grid(),
        )
    }

    fn verify(&self, samples: &[(usize, Vec<f64>)]) -> Result<MajorantReport> {
        let t = &self.t_grid;
        let pair_stride = (samples.len() / 32).max(1);
        let per_sample = samples
            .par_iter()
            .enumerate()
            .map(|(n, (i, x))| {
                let i = *i;
                let f1 = t
                    .iter()
                    .map(|&s| self.eval(i, x, s))
                    .collect::<Result<Vec<_>>>()?;
                let mut dom = f64::INFINITY;
                let mut conc = f64::INFINITY;
                let mut conv = f64::INFINITY;
                let mut cmax: f64 = 0.0;
                for (k, &s) in t.iter().enumerate() {
                    let base = self.base.eval(i, x, s)?;
                    dom = dom.min(f1[k] - base);
                    let pv = self.p[i];
                    if pv > 0.0 {
                        cmax = cmax.max(f1[k] / (pv * (s + 1.0)));
                    }
                }
                // Discrete concavity at every sample; exact midpoints on a subset.
                for k in 1..t.len() - 1 {
                    let s0 = (f1[k] - f1[k - 1]) / (t[k] - t[k - 1]);
                    let s1 = (f1[k + 1] - f1[k]) / (t[k + 1] - t[k]);
                    conc = conc.min((s0 - s1) * (t[k + 1] - t[k - 1]) / 4.0);
                }
                if n % pair_stride == 0 {
                    for a in 0..t.len() {
                        for b in a + 1..t.len() {
                            let mid = self.eval(i, x, 0.5 * (t[a] + t[b]))?;
                            conc = conc.min(mid - 0.5 * (f1[a] + f1[b]));
                        }
                    }
                    let stride = (t.len() / 16).max(1);
                    for &delta in &self.delta_grid {
                        for &s in t.iter().step_by(stride) {
                            let c = self
                                .mollifier
                                .convolve(|r| self.base.eval(i, x, r), s, delta)?;
                            conv = conv.min(2.0 * c - self.base.eval(i, x, s)?);
                        }
                    }
                }
                Ok((dom, conc, conv, cmax, self.eval(i, x, 0.0)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut r = self.report.clone();
        for (dom, conc, conv, cmax, zero) in per_sample {
            r.domination_margin = r.domination_margin.min(dom);
            r.concavity_margin = r.concavity_margin.min(conc);
            r.convolution_margin = r.convolution_margin.min(conv);
            r.constant_c = r.constant_c.max(cmax);
            r.value_at_zero = r.value_at_zero.max(zero.abs());
        }
        Ok(r)
    }

    pub fn report(&self) -> &MajorantReport {
        &self.report
    }

    pub fn base(&self) -> &Phi {
        &self.base
    }

    pub fn mask(&self) -> &Arc<DomainMask> {
        &self.mask
    }

    pub fn delta_grid(&self) -> &[f64] {
        &self.delta_grid
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn mollifier(&self) -> &Mollifier {
        &self.mollifier
    }

    pub fn constant_c(&self) -> f64 {
        self.report.constant_c
    }

    fn row(&self, idx: usize) -> Result<&[f64]> {
        let nd = self.piece_deltas.len();
        self.m
            .get(idx * nd..(idx + 1) * nd)
            .filter(|r| r[0].is_finite())
            .ok_or_else(|| Error::InvalidArgument(format!("majorant undefined at grid point {idx}")))
    }

    fn affine_piece(&self, delta: f64, pt: f64, m: f64) -> f64 {
        2.0 * self.mollifier.c1 / delta * pt + m
    }

    /// `ψ_δ(x, t)` for the `k`-th δ of the grid.
    pub fn psi_delta(&self, idx: usize, k: usize, t: f64) -> Result<f64> {
        let row = self.row(idx)?;
        Ok(self.affine_piece(self.delta_grid[k], self.p[idx] * t, row[k]))
    }

    /// `ψ(x, t) = min_δ ψ_δ(x, t)` over the grid and the tail, with `ψ(x, 0) = 0`.
    pub fn psi(&self, idx: usize, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Ok(0.0);
        }
        let row = self.row(idx)?;
        let pt = self.p[idx] * t;
        Ok(self
            .piece_deltas
            .iter()
            .zip(row)
            .map(|(&delta, &m)| self.affine_piece(delta, pt, m))
            .fold(f64::INFINITY, f64::min))
    }

    /// `ψ(x, ·)` on the t-grid.
    pub fn psi_table(&self, idx: usize) -> Result<Vec<f64>> {
        self.t_grid.iter().map(|&t| self.psi(idx, t)).collect()
    }

    pub fn eval(&self, idx: usize, _x: &[f64], t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Ok(0.0);
        }
        Ok(2.0 * self.p[idx] * t + self.psi(idx, t.min(1.0))?)
    }

    /// Wraps the majorant as a nonlinearity.
    pub fn into_phi(self) -> Phi {
        Phi::new(PhiKind::Majorant(Arc::new(self)), Claims::ALL)
    }
}
