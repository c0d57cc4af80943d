//! Command dispatch for the `semilab` binary: reads a [`RunConfig`], runs one
//! experiment, writes CSV and JSON artifacts plus a checksummed manifest.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experiments::{
    blowup_sweep, check_sup_identity, check_thin_witness, dichotomy_report,
    green_potential_diagnostic, run_exhaustion, scaling_bound_check, DichotomySetup,
};
use crate::field::fmt_f64;
use crate::geometry::DomainMask;
use crate::nonlinearity::{
    check_hypotheses, default_t_grid, mask_samples, uniform_t_grid, HypothesisReport, Phi,
};
use crate::operator::{assemble, check_ellipticity, check_m_matrix, SchemeOptions, SpatialFn};
use crate::solver::solve_semilinear_dirichlet;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_HYPOTHESIS: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Solve the semilinear Dirichlet problem once.
    Solve,
    /// Run the exhaustion `v_c = lim U_{D_n} c`.
    Exhaust,
    /// Build the concave majorant of the nonlinearity.
    Majorant,
    /// Sweep boundary constants `m` on a bounded domain.
    Blowup,
    /// Green-potential partial sums over truncations.
    Potential,
    /// Check hypotheses, ellipticity and the M-matrix property.
    Checks,
    /// Bounded-versus-large verdict table.
    Dichotomy,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Exhaust => "exhaust",
            Command::Majorant => "majorant",
            Command::Blowup => "blowup",
            Command::Potential => "potential",
            Command::Checks => "checks",
            Command::Dichotomy => "dichotomy",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "semilab", version, about = "Monotone solvers and experiments for Lu = phi(x, u)")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for randomized checks; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub verbose: bool,
}

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Hypothesis(_) | Error::Ellipticity { .. } | Error::MMatrix(_) => EXIT_HYPOTHESIS,
        Error::NonConvergence { .. } | Error::NegativeIterate { .. } | Error::LinearSolve(_) => {
            EXIT_NUMERICAL
        }
        _ => EXIT_CONFIG,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Writes artifacts into one directory and records their checksums.
pub struct OutputDir {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, content: &str) -> Result<()> {
        std::fs::write(self.dir.join(name), content)?;
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: sha256_hex(content.as_bytes()),
            bytes: content.len(),
        });
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::Format(format!("cannot serialize {name}: {e}")))?;
        self.write(name, &(text + "\n"))
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }
}

/// Result of one command: its exit status and a one-line summary.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    pub summary: String,
}

impl Outcome {
    fn ok(summary: String) -> Self {
        Self {
            exit_code: EXIT_OK,
            summary,
        }
    }
}

/// Runs `command` and writes its artifacts into `out`. The manifest is
/// written by [`run`].
pub fn run_command(
    command: Command,
    cfg: &RunConfig,
    seed: u64,
    out: &mut OutputDir,
) -> Result<Outcome> {
    match command {
        Command::Solve => cmd_solve(cfg, out),
        Command::Exhaust => cmd_exhaust(cfg, out),
        Command::Majorant => cmd_majorant(cfg, out),
        Command::Blowup => cmd_blowup(cfg, out),
        Command::Potential => cmd_potential(cfg, out),
        Command::Checks => cmd_checks(cfg, seed, out),
        Command::Dichotomy => cmd_dichotomy(cfg, out),
    }
}

fn cmd_solve(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome> {
    let omega = cfg.omega()?;
    let coeffs = cfg.coefficients(&omega)?;
    let op = assemble(omega.clone(), &coeffs, cfg.scheme())?;
    let phi = cfg.phi(&omega)?;
    let f = cfg.boundary_field(&omega)?;
    let (u, report) = solve_semilinear_dirichlet(&op, &phi, &f, &cfg.solver_params()?)?;
    out.write("solution.csv", &u.to_csv())?;
    out.write_json(
        "solve.json",
        &json!({
            "report": report,
            "m_matrix": check_m_matrix(&op),
            "ellipticity": op.ellipticity(),
            "interior_max": u.interior_max(),
            "interior_min": u.interior_min(),
        }),
    )?;
    Ok(Outcome::ok(format!(
        "converged in {} iterations, sup u = {:.6e}",
        report.iterations,
        u.interior_max()
    )))
}

/// Whether `φ` passed the sampled concavity check.
fn concave(cfg: &RunConfig, phi: &Phi, omega: &Arc<DomainMask>) -> Result<bool> {
    let samples = mask_samples(omega, cfg.experiment.check_samples.unwrap_or(256));
    let density = cfg.density(omega)?;
    let rep = check_hypotheses(phi, density.as_ref(), &samples, &default_t_grid())?;
    Ok(rep.h4.passed == Some(true))
}

fn cmd_exhaust(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome> {
    let omega = cfg.omega()?;
    let seq = cfg.exhaustion(omega.clone())?;
    let coeffs = cfg.coefficients(&omega)?;
    let phi = cfg.phi(&omega)?;
    let params = cfg.exhaustion_params()?;
    let (c, probe) = (cfg.c(), cfg.probe());
    let run = run_exhaustion(&seq, &coeffs, &phi, c, &probe, &params)?;
    let sup = check_sup_identity(&run, &params);
    let mut scaling = Vec::new();
    if let Some(ratios) = &cfg.experiment.lambda_ratios {
        let is_concave = concave(cfg, &phi, &omega)?;
        for &r in ratios {
            if !(r >= 1.0) {
                return Err(Error::Config(format!("lambda ratio {r} must be ≥ 1")));
            }
            let run_r = run_exhaustion(&seq, &coeffs, &phi, r * c, &probe, &params)?;
            scaling.push(scaling_bound_check(&run_r, &run, is_concave)?);
        }
    }
    out.write("levels.csv", &run.levels_csv())?;
    out.write("v_c.csv", &run.v_c().to_csv())?;
    out.write_json(
        "exhaust.json",
        &json!({ "run": run, "sup_identity": sup, "scaling": scaling }),
    )?;
    Ok(Outcome::ok(format!(
        "{} levels, sup estimate {:.6e}, verdict {:?}",
        run.levels.len(),
        run.sup_estimate,
        sup.verdict
    )))
}

fn cmd_majorant(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome> {
    let omega = cfg.omega()?;
    let base = cfg.base_phi(&omega)?;
    let maj = cfg.majorant(&base, &omega)?;
    let grid = omega.grid();
    let dim = grid.dim();
    let mut csv: String = (1..=dim).map(|k| format!("x{k},")).collect();
    csv.push_str("t,phi,phi1\n");
    for i in omega.closure_indices() {
        let x = grid.coords(i);
        let row = maj.psi_table(i)?;
        for (&t, &v) in maj.t_grid().iter().zip(&row) {
            for xk in &x[..dim] {
                csv.push_str(&fmt_f64(*xk));
                csv.push(',');
            }
            let _ = writeln!(
                csv,
                "{},{},{}",
                fmt_f64(t),
                fmt_f64(base.eval(i, &x[..dim], t)?),
                fmt_f64(v)
            );
        }
    }
    out.write("majorant.csv", &csv)?;
    out.write_json(
        "majorant.json",
        &json!({
            "report": maj.report(),
            "delta_grid": maj.delta_grid(),
            "t_grid": maj.t_grid(),
            "mollifier": maj.mollifier(),
        }),
    )?;
    Ok(Outcome::ok(format!(
        "majorant built, C = {:.6e}, domination margin {:.3e}",
        maj.constant_c(),
        maj.report().domination_margin
    )))
}

fn cmd_blowup(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome> {
    let omega = cfg.omega()?;
    let coeffs = cfg.coefficients(&omega)?;
    let op = assemble(omega.clone(), &coeffs, cfg.scheme())?;
    let phi = cfg.phi(&omega)?;
    let sweep = blowup_sweep(&op, &phi, &cfg.m_values()?, &cfg.probes(), &cfg.solver_params()?)?;
    out.write("sweep.csv", &sweep.to_csv())?;
    out.write_json("blowup.json", &sweep)?;
    let summary = format!("verdict {:?}, last-decade increments {:?}", sweep.verdict, sweep.last_decade_increment);
    Ok(match &sweep.failure {
        Some(msg) => Outcome {
            exit_code: EXIT_NUMERICAL,
            summary: format!("sweep stopped early: {msg}"),
        },
        None => Outcome::ok(summary),
    })
}

fn cmd_potential(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome> {
    let omega = cfg.omega()?;
    let seq = cfg.exhaustion(omega.clone())?;
    let coeffs = cfg.coefficients(&omega)?;
    let p = cfg
        .density(&omega)?
        .ok_or_else(|| Error::Config("the potential diagnostic needs `phi.p`".into()))?;
    let thin = cfg.thin_set(omega.grid())?;
    let probe = cfg.probe();
    let params = cfg.solver_params()?;
    let diag = green_potential_diagnostic(
        &cfg.truncations(&seq)?,
        &coeffs,
        &p,
        thin.as_deref(),
        &probe,
        cfg.scheme(),
        params.linear,
    )?;
    let witness = match (&cfg.experiment.thin_witness, &thin) {
        (Some(text), Some(a)) => {
            let op = assemble(omega.clone(), &coeffs, cfg.scheme())?;
            let s = SpatialFn::parse(text)?.to_field(omega.clone())?;
            Some(check_thin_witness(&op, &s, a, &probe, 1e-10)?)
        }
        (Some(_), None) => {
            return Err(Error::Config("thin_witness needs experiment.thin_set".into()))
        }
        _ => None,
    };
    out.write("potential.csv", &diag.to_csv())?;
    out.write_json("potential.json", &json!({ "diagnostic": diag, "thin_witness": witness }))?;
    Ok(Outcome::ok(format!(
        "verdict {:?}, growth exponent {:?}",
        diag.verdict, diag.growth_exponent
    )))
}

/// The theory assumes `d ≥ 3`; lower dimensions are supported but flagged.
fn warn_low_dimension(cfg: &RunConfig) {
    if cfg.dim() < 3 {
        log::warn!("dimension {} < 3 is outside the theory's hypotheses", cfg.dim());
    }
}

/// Sampled `t` nodes: a uniform grid plus `extra` seeded random nodes.
fn check_t_grid(cfg: &RunConfig, seed: u64, extra: usize) -> Vec<f64> {
    let t_max = cfg.experiment.t_max.unwrap_or(2.0);
    let mut t = uniform_t_grid(t_max, cfg.experiment.t_points.unwrap_or(257));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    t.extend((0..extra).map(|_| rng.gen_range(0.0..t_max)));
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

fn hypothesis_lines(rep: &HypothesisReport) -> String {
    let mut s = String::from("hypothesis,status,x,t,detail\n");
    for (name, h) in [
        ("SH1", &rep.sh1),
        ("H1", &rep.h1),
        ("H2", &rep.h2),
        ("H3", &rep.h3),
        ("H4", &rep.h4),
    ] {
        let status = match h.passed {
            Some(true) => "pass",
            Some(false) => "fail",
            None => "untested",
        };
        match &h.witness {
            Some(w) => {
                let x: Vec<String> = w.x.iter().map(|v| fmt_f64(*v)).collect();
                let _ = writeln!(
                    s,
                    "{name},{status},{},{},\"{}\"",
                    x.join(" "),
                    fmt_f64(w.t),
                    w.detail.replace('"', "'")
                );
            }
            None => {
                let _ = writeln!(s, "{name},{status},,,");
            }
        }
    }
    s
}

fn cmd_checks(cfg: &RunConfig, seed: u64, out: &mut OutputDir) -> Result<Outcome> {
    let omega = cfg.omega()?;
    let coeffs = cfg.coefficients(&omega)?;
    let scheme = cfg.scheme();
    let phi = cfg.phi(&omega)?;
    let samples = mask_samples(&omega, cfg.experiment.check_samples.unwrap_or(512));
    let t_grid = check_t_grid(cfg, seed, 64);
    let hyp = check_hypotheses(&phi, cfg.density(&omega)?.as_ref(), &samples, &t_grid)?;
    let ell = check_ellipticity(&coeffs, &omega, scheme.conditioning_threshold)?;
    let m_matrix = if ell.passed {
        let relaxed = SchemeOptions {
            require_m_matrix: false,
            ..scheme
        };
        Some(check_m_matrix(&assemble(omega.clone(), &coeffs, relaxed)?))
    } else {
        None
    };
    let mut failures: Vec<String> = hyp.failures().iter().map(|s| s.to_string()).collect();
    if !ell.passed {
        failures.push("ellipticity".into());
    }
    if m_matrix.as_ref().is_some_and(|m| !m.passed) {
        failures.push("M-matrix".into());
    }
    warn_low_dimension(cfg);
    out.write("hypotheses.csv", &hypothesis_lines(&hyp))?;
    out.write_json(
        "checks.json",
        &json!({
            "hypotheses": hyp,
            "ellipticity": ell,
            "m_matrix": m_matrix,
            "failures": failures,
            "dimension_below_3": cfg.dim() < 3,
            "t_nodes": t_grid.len(),
            "samples": samples.len(),
        }),
    )?;
    if failures.is_empty() {
        Ok(Outcome::ok("all checks passed".into()))
    } else {
        Ok(Outcome {
            exit_code: EXIT_HYPOTHESIS,
            summary: format!("failed: {}", failures.join(", ")),
        })
    }
}

fn cmd_dichotomy(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome> {
    let omega = cfg.omega()?;
    let seq = cfg.exhaustion(omega.clone())?;
    let coeffs = cfg.coefficients(&omega)?;
    let phi = cfg.phi(&omega)?;
    let params = cfg.exhaustion_params()?;
    let sweep_op = assemble(cfg.sweep_mask(&seq)?, &coeffs, params.scheme)?;
    let truncations = if cfg.geometry.levels.is_some() {
        cfg.truncations(&seq)?
    } else {
        Vec::new()
    };
    let setup = DichotomySetup {
        exhaustion: &seq,
        coeffs: &coeffs,
        phi: &phi,
        p: cfg.density(&omega)?,
        c: cfg.c(),
        probe: cfg.probe(),
        sweep_operator: &sweep_op,
        m_values: cfg.m_values()?,
        sweep_probes: cfg.probes(),
        truncations,
        thin_set: cfg.thin_set(omega.grid())?,
        params,
    };
    let rep = dichotomy_report(&setup)?;
    out.write("verdict.csv", &rep.verdict_table())?;
    out.write("levels.csv", &rep.exhaustion.levels_csv())?;
    out.write("sweep.csv", &rep.sweep.to_csv())?;
    if let Some(p) = &rep.potential {
        out.write("potential.csv", &p.to_csv())?;
    }
    warn_low_dimension(cfg);
    out.write_json(
        "dichotomy.json",
        &json!({ "report": rep, "dimension_below_3": cfg.dim() < 3 }),
    )?;
    let yn = |b: bool| if b { "yes" } else { "no" };
    if rep.contradiction {
        log::warn!("both a bounded and a large solution are indicated under checked hypotheses");
    }
    Ok(Outcome::ok(format!(
        "hypotheses {}, bounded: {}, large: {}",
        if rep.hypotheses_satisfied { "satisfied" } else { "violated" },
        yn(rep.bounded_solution_indicated),
        yn(rep.large_solution_indicated)
    )))
}

/// Parses arguments, runs the command, writes the manifest and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let level = if args.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    let cfg_text = match std::fs::read(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return EXIT_CONFIG;
        }
    };
    let cfg = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let seed = args.seed.unwrap_or_else(|| cfg.seed());
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("semilab-out").join(args.command.name()));
    let mut out = match OutputDir::create(&dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: cannot create {}: {e}", dir.display());
            return EXIT_CONFIG;
        }
    };
    log::info!("{} with {} (seed {seed})", args.command.name(), args.config.display());
    let (code, message) = match run_command(args.command, &cfg, seed, &mut out) {
        Ok(o) => (o.exit_code, o.summary),
        Err(e) => (exit_code(&e), format!("error: {e}")),
    };
    if code == EXIT_OK {
        println!("{}: {message}", args.command.name());
    } else {
        eprintln!("{}: {message}", args.command.name());
    }
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = json!({
        "command": args.command,
        "config": args.config.display().to_string(),
        "config_sha256": sha256_hex(&cfg_text),
        "seed": seed,
        "created_unix": created,
        "exit_code": code,
        "message": message,
        "artifacts": out.artifacts(),
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    if let Err(e) = std::fs::write(dir.join("manifest.json"), text) {
        eprintln!("error: cannot write manifest: {e}");
        return code.max(EXIT_CONFIG);
    }
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Hypothesis("x".into())), EXIT_HYPOTHESIS);
        assert_eq!(exit_code(&Error::MMatrix("x".into())), EXIT_HYPOTHESIS);
        let nc = Error::NonConvergence {
            iterations: 1,
            increment: 1.0,
            residual: 1.0,
        };
        assert_eq!(exit_code(&nc), EXIT_NUMERICAL);
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn usage_errors_exit_with_config_status() {
        assert_eq!(run(["semilab", "frobnicate", "--config", "x.toml"]), EXIT_CONFIG);
        assert_eq!(run(["semilab", "solve", "--config", "/nonexistent/x.toml"]), EXIT_CONFIG);
    }
}
