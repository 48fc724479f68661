//! Run configuration, subcommand dispatch and bit-stable result output.
//!
//! The config format is a flat key-value text file: one `key value...` per
//! line, `#` comments, repeated `term` lines for the forcing. Reruns with
//! the same config and seed produce byte-identical output files.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::forcing::{ForcingTerm, TorusForcing, TorusPoint};
use crate::lab::{Lab, LabConfig};
use crate::special::TAU;
use crate::successor::{EnsembleConfig, IteratePolicy, OrbitStart, OrbitSummary, SuccessorPoint};
use crate::verify;

pub const SCHEMA_VERSION: u32 = 1;

/// Everything a run needs, parsed from the flat config format.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RunConfig {
    pub alpha: f64,
    pub safety: f64,
    pub omega: Vec<f64>,
    pub theta: Vec<f64>,
    pub terms: Vec<ForcingTerm>,
    pub tol_integrator: f64,
    pub tol_newton: f64,
    pub tol_event: f64,
    /// Iteration tolerance of ensemble campaigns (looser than the
    /// verification tolerance by default).
    pub tol_campaign: f64,
    pub horizon: f64,
    pub seed: u64,
    pub n_max: usize,
    pub orbits: usize,
    pub theta_samples: usize,
    pub cal_i0_min: f64,
    pub cal_i0_max: f64,
    pub varphi0_min: f64,
    pub varphi0_max: f64,
    pub growth_factor: f64,
    pub delta: f64,
    pub burn_in: usize,
    pub store_iterates: bool,
    pub v0: f64,
    pub t0: f64,
    /// Optional directory for the binary special-function table cache.
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    /// The default campaign: alpha = 3, two-frequency forcing
    /// `0.1 cos(2 pi theta_1) + 0.05 sin(2 pi theta_2)`, omega = (1, sqrt 2).
    fn default() -> Self {
        RunConfig {
            alpha: 3.0,
            safety: 2.0,
            omega: vec![1.0, std::f64::consts::SQRT_2],
            theta: vec![0.2, 0.7],
            terms: vec![
                ForcingTerm {
                    k: vec![1, 0],
                    a: 0.1,
                    b: 0.0,
                },
                ForcingTerm {
                    k: vec![0, 1],
                    a: 0.0,
                    b: 0.05,
                },
            ],
            tol_integrator: 1e-10,
            tol_newton: 1e-12,
            tol_event: 1e-10,
            tol_campaign: 1e-8,
            horizon: 1e4,
            seed: 42,
            n_max: 1000,
            orbits: 256,
            theta_samples: 64,
            cal_i0_min: 1e4,
            cal_i0_max: 1e5,
            varphi0_min: 0.0,
            varphi0_max: TAU,
            growth_factor: 4.0,
            delta: 0.05,
            burn_in: 100,
            store_iterates: false,
            v0: -50.0,
            t0: 0.0,
            cache_dir: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(line_no: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "line {line_no}: cannot parse `{value}` for key `{key}`"
        ))
    })
}

fn parse_vec(line_no: usize, key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|s| parse_num(line_no, key, s.trim()))
        .collect()
}

impl RunConfig {
    /// Parse the flat key-value format; unknown keys and duplicate scalar
    /// keys are rejected with the offending line number.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        // forcing specification replaces the default as soon as any of its
        // keys appears
        let mut omega_set = false;
        let mut terms_set = false;
        let mut theta_set = false;
        let mut seen: std::collections::BTreeSet<&str> = std::collections::BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = match line.split_once(char::is_whitespace) {
                Some((k, v)) => (k.trim(), v.trim()),
                None => {
                    return Err(Error::Config(format!(
                        "line {line_no}: expected `key value`, got `{line}`"
                    )))
                }
            };
            if key != "term" && !seen.insert(key) {
                return Err(Error::Config(format!(
                    "line {line_no}: duplicate key `{key}`"
                )));
            }
            match key {
                "alpha" => cfg.alpha = parse_num(line_no, key, value)?,
                "safety" => cfg.safety = parse_num(line_no, key, value)?,
                "omega" => {
                    cfg.omega = parse_vec(line_no, key, value)?;
                    omega_set = true;
                }
                "theta" => {
                    cfg.theta = parse_vec(line_no, key, value)?;
                    theta_set = true;
                }
                "term" => {
                    if !terms_set {
                        cfg.terms.clear();
                        terms_set = true;
                    }
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    if parts.len() != 3 {
                        return Err(Error::Config(format!(
                            "line {line_no}: term wants `k1,..,kN a b`, got `{value}`"
                        )));
                    }
                    let k: Vec<i64> = parts[0]
                        .split(',')
                        .map(|s| parse_num(line_no, key, s.trim()))
                        .collect::<Result<_>>()?;
                    cfg.terms.push(ForcingTerm {
                        k,
                        a: parse_num(line_no, key, parts[1])?,
                        b: parse_num(line_no, key, parts[2])?,
                    });
                }
                "tol_integrator" => cfg.tol_integrator = parse_num(line_no, key, value)?,
                "tol_newton" => cfg.tol_newton = parse_num(line_no, key, value)?,
                "tol_event" => cfg.tol_event = parse_num(line_no, key, value)?,
                "tol_campaign" => cfg.tol_campaign = parse_num(line_no, key, value)?,
                "horizon" => cfg.horizon = parse_num(line_no, key, value)?,
                "seed" => cfg.seed = parse_num(line_no, key, value)?,
                "n_max" => cfg.n_max = parse_num(line_no, key, value)?,
                "orbits" => cfg.orbits = parse_num(line_no, key, value)?,
                "theta_samples" => cfg.theta_samples = parse_num(line_no, key, value)?,
                "cal_i0_min" => cfg.cal_i0_min = parse_num(line_no, key, value)?,
                "cal_i0_max" => cfg.cal_i0_max = parse_num(line_no, key, value)?,
                "varphi0_min" => cfg.varphi0_min = parse_num(line_no, key, value)?,
                "varphi0_max" => cfg.varphi0_max = parse_num(line_no, key, value)?,
                "growth_factor" => cfg.growth_factor = parse_num(line_no, key, value)?,
                "delta" => cfg.delta = parse_num(line_no, key, value)?,
                "burn_in" => cfg.burn_in = parse_num(line_no, key, value)?,
                "store_iterates" => {
                    cfg.store_iterates = match value {
                        "true" | "1" => true,
                        "false" | "0" => false,
                        other => {
                            return Err(Error::Config(format!(
                                "line {line_no}: store_iterates wants true/false, got `{other}`"
                            )))
                        }
                    }
                }
                "v0" => cfg.v0 = parse_num(line_no, key, value)?,
                "t0" => cfg.t0 = parse_num(line_no, key, value)?,
                "cache_dir" => cfg.cache_dir = Some(PathBuf::from(value)),
                other => {
                    return Err(Error::Config(format!(
                        "line {line_no}: unknown key `{other}`"
                    )));
                }
            }
        }
        if omega_set && !terms_set {
            // a config that re-specifies the frequencies defines its own
            // forcing; the default terms never leak into it
            cfg.terms.clear();
        }
        if omega_set && !theta_set {
            cfg.theta = vec![0.0; cfg.omega.len()];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 3.0) {
            return Err(Error::Config(format!(
                "alpha must be >= 3, got {}",
                self.alpha
            )));
        }
        for (name, v) in [
            ("safety", self.safety),
            ("tol_integrator", self.tol_integrator),
            ("tol_newton", self.tol_newton),
            ("tol_event", self.tol_event),
            ("tol_campaign", self.tol_campaign),
            ("horizon", self.horizon),
            ("growth_factor", self.growth_factor),
            ("delta", self.delta),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.theta.len() != self.omega.len() {
            return Err(Error::Config(format!(
                "theta has dimension {}, omega has {}",
                self.theta.len(),
                self.omega.len()
            )));
        }
        if !(self.cal_i0_min > 0.0 && self.cal_i0_max >= self.cal_i0_min) {
            return Err(Error::Config("need 0 < cal_i0_min <= cal_i0_max".into()));
        }
        if self.varphi0_max < self.varphi0_min {
            return Err(Error::Config("need varphi0_min <= varphi0_max".into()));
        }
        // forcing construction validates omega and the term dimensions
        self.forcing()?;
        Ok(())
    }

    pub fn forcing(&self) -> Result<TorusForcing> {
        TorusForcing::new(self.omega.clone(), self.terms.clone())
    }

    pub fn theta_point(&self) -> TorusPoint {
        TorusPoint::new(self.theta.clone())
    }

    pub fn build_lab(&self) -> Result<Lab> {
        Lab::with_config(
            self.forcing()?,
            LabConfig {
                alpha: self.alpha,
                safety: self.safety,
                table_tol: 1e-12,
                integrator_rtol: self.tol_integrator,
                integrator_atol: 1e-12,
                newton_tol: self.tol_newton,
                event_tol: self.tol_event,
                horizon: self.horizon,
                cache_dir: self.cache_dir.clone(),
            },
        )
    }

    pub fn policy(&self, record_iterates: bool) -> IteratePolicy {
        IteratePolicy {
            growth_factor: self.growth_factor,
            delta: self.delta,
            burn_in: self.burn_in,
            rtol: self.tol_campaign,
            record_iterates,
        }
    }

    pub fn ensemble(&self) -> EnsembleConfig {
        EnsembleConfig {
            theta_samples: self.theta_samples,
            orbits_per_theta: self.orbits,
            n_max: self.n_max,
            cal_i0: (self.cal_i0_min, self.cal_i0_max),
            varphi0: (self.varphi0_min, self.varphi0_max),
            seed: self.seed,
            policy: self.policy(self.store_iterates),
        }
    }
}

/// 17 significant decimal digits: enough for exact f64 round trips, and
/// identical on every rerun.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_json<T: serde::Serialize>(out_dir: &Path, name: &str, value: &T) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(name);
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numeric(format!("json encoding failed: {e}")))?;
    text.push('\n');
    std::fs::File::create(&path)?.write_all(text.as_bytes())?;
    Ok(())
}

fn orbit_csv_rows(out: &mut String, summary: &OrbitSummary, dim: usize) {
    for rec in &summary.iterates {
        let _ = write!(out, "{},{}", summary.orbit_id, rec.n);
        let _ = write!(
            out,
            ",{},{},{},{}",
            fmt_f64(rec.t),
            fmt_f64(rec.v),
            fmt_f64(rec.varphi),
            fmt_f64(rec.cal_i)
        );
        for d in 0..dim {
            let _ = write!(out, ",{}", fmt_f64(rec.theta[d]));
        }
        let _ = writeln!(
            out,
            ",{},{}",
            summary.left_domain as u8, summary.escape_suspect as u8
        );
    }
}

fn iterate_csv(summaries: &[OrbitSummary], dim: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# littlewood iterates csv schema {SCHEMA_VERSION}");
    let mut header = String::from("orbit_id,n,t,v,varphi,cal_i");
    for d in 0..dim {
        let _ = write!(header, ",theta{d}");
    }
    header.push_str(",left_domain,escape_suspect");
    let _ = writeln!(out, "{header}");
    for s in summaries {
        orbit_csv_rows(&mut out, s, dim);
    }
    out
}

fn summary_csv(summaries: &[OrbitSummary], dim: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# littlewood orbit-summary csv schema {SCHEMA_VERSION}"
    );
    let mut header = String::from("orbit_id");
    for d in 0..dim {
        let _ = write!(header, ",theta{d}");
    }
    header.push_str(
        ",varphi0,cal_i0,n_completed,left_domain,escape_suspect,recurrence_count,growth_ratio,max_gap,gap_violations,sandwich_violations,error",
    );
    let _ = writeln!(out, "{header}");
    for s in summaries {
        let _ = write!(out, "{}", s.orbit_id);
        for d in 0..dim {
            let _ = write!(out, ",{}", fmt_f64(s.theta0[d]));
        }
        let _ = writeln!(
            out,
            ",{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(s.varphi0),
            fmt_f64(s.cal_i0),
            s.n_completed,
            s.left_domain as u8,
            s.escape_suspect as u8,
            s.recurrence_count,
            fmt_f64(s.growth_ratio),
            fmt_f64(s.max_gap),
            s.gap_violations,
            s.sandwich_violations,
            s.error.as_deref().unwrap_or("")
        );
    }
    out
}

fn write_text(out_dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::File::create(out_dir.join(name))?.write_all(text.as_bytes())?;
    Ok(())
}

// ------------------------------------------------------------- subcommands

#[derive(serde::Serialize)]
struct ParamsReport<'a> {
    schema_version: u32,
    config: &'a RunConfig,
    params: &'a crate::special::AlphaParams,
    thresholds: &'a crate::transforms::Thresholds,
    identity_checks: Vec<verify::CheckResult>,
}

pub fn cmd_params(cfg: &RunConfig, out_dir: &Path) -> Result<i32> {
    let lab = cfg.build_lab()?;
    let checks = verify::check_constants(&lab);
    let p = &lab.params;
    let t = &lab.thresholds;
    println!("alpha      = {}", fmt_f64(p.alpha));
    println!(
        "T1         = {}   (minimal period at amplitude 1)",
        fmt_f64(p.t1)
    );
    println!(
        "Lambda     = {}   (amplitude with period 2 pi)",
        fmt_f64(p.lambda)
    );
    println!("gamma      = {}", fmt_f64(p.gamma));
    println!("kappa1     = {}", fmt_f64(p.kappa1));
    println!("kappa0     = {}", fmt_f64(p.kappa0));
    println!("b_alpha    = {}", fmt_f64(p.b_alpha));
    println!("thresholds:");
    println!("  r_star          = {}", fmt_f64(t.r_star));
    println!("  i_star          = {}", fmt_f64(t.i_star));
    println!(
        "  i_c0            = {}   (C0 = {})",
        fmt_f64(t.i_c0),
        fmt_f64(t.c0)
    );
    println!("  i_star_star     = {}", fmt_f64(t.i_star_star));
    println!(
        "  cal_i_star      = {}   (C0~ = {})",
        fmt_f64(t.cal_i_star),
        fmt_f64(t.c0_tilde)
    );
    println!("  cal_i_star_star = {}", fmt_f64(t.cal_i_star_star));
    println!("  cal_i_top       = {}", fmt_f64(t.cal_i_top));
    println!("  v_star          = {}", fmt_f64(t.v_star));
    println!("  gap constant C  = {}", fmt_f64(t.gap_constant));
    println!(
        "  alpha0, beta0   = {}, {}",
        fmt_f64(t.alpha0),
        fmt_f64(t.beta0)
    );
    println!(
        "  C4 lemma bound  = {}   (reported, not gating)",
        fmt_f64(t.lemma_c4_bound)
    );
    for c in &checks {
        println!("{}", c.one_line());
    }
    let ok = checks.iter().all(|c| c.passed);
    write_json(
        out_dir,
        "params.json",
        &ParamsReport {
            schema_version: SCHEMA_VERSION,
            config: cfg,
            params: p,
            thresholds: t,
            identity_checks: checks,
        },
    )?;
    Ok(if ok { 0 } else { 1 })
}

#[derive(serde::Serialize)]
struct VerifyReport<'a> {
    schema_version: u32,
    config: &'a RunConfig,
    passed: bool,
    checks: Vec<verify::CheckResult>,
}

pub fn cmd_verify(cfg: &RunConfig, out_dir: &Path) -> Result<i32> {
    let lab = cfg.build_lab()?;
    let checks = verify::run_all(&lab)?;
    for c in &checks {
        println!("{}", c.one_line());
    }
    let passed = checks.iter().all(|c| c.passed);
    let n_failed = checks.iter().filter(|c| !c.passed).count();
    println!(
        "verify: {} checks, {} failed, {} skipped",
        checks.len(),
        n_failed,
        checks.iter().filter(|c| c.skipped).count()
    );
    write_json(
        out_dir,
        "verify.json",
        &VerifyReport {
            schema_version: SCHEMA_VERSION,
            config: cfg,
            passed,
            checks,
        },
    )?;
    Ok(if passed { 0 } else { 1 })
}

#[derive(serde::Serialize)]
struct SuccessorReport<'a> {
    schema_version: u32,
    config: &'a RunConfig,
    v0: f64,
    t0: f64,
    direct: (f64, f64),
    transformed: (f64, f64),
    relative_discrepancy: f64,
    phi_in: (f64, f64),
    phi_out: (f64, f64),
}

pub fn cmd_successor(cfg: &RunConfig, out_dir: &Path) -> Result<i32> {
    let lab = cfg.build_lab()?;
    let theta = cfg.theta_point();
    let ev = lab.psi_direct(&theta, cfg.v0, cfg.t0)?;
    let (v1, t1) = lab.psi_transformed(&theta, cfg.v0, cfg.t0, cfg.tol_integrator)?;
    let disc = ((v1 - ev.v1) / ev.v1)
        .abs()
        .max(((t1 - ev.t1) / ev.t1.abs().max(1.0)).abs());
    // the transformed section point, for reference
    let entry = lab.kernel().t_forward(
        &theta,
        cfg.t0,
        0.5 * cfg.v0 * cfg.v0,
        crate::special::HALF_PI,
    )?;
    let end = lab.poincare_phi(
        &theta,
        SuccessorPoint {
            varphi: entry.varphi,
            cal_i: entry.cal_i,
        },
        cfg.tol_integrator,
    )?;
    println!(
        "psi_direct      : v1 = {}, t1 = {}",
        fmt_f64(ev.v1),
        fmt_f64(ev.t1)
    );
    println!(
        "psi_transformed : v1 = {}, t1 = {}",
        fmt_f64(v1),
        fmt_f64(t1)
    );
    println!("relative discrepancy = {:.3e}", disc);
    println!(
        "Phi: (varphi, J) = ({}, {}) -> ({}, {})",
        fmt_f64(entry.varphi),
        fmt_f64(entry.cal_i),
        fmt_f64(end.varphi),
        fmt_f64(end.cal_i)
    );
    write_json(
        out_dir,
        "successor.json",
        &SuccessorReport {
            schema_version: SCHEMA_VERSION,
            config: cfg,
            v0: cfg.v0,
            t0: cfg.t0,
            direct: (ev.v1, ev.t1),
            transformed: (v1, t1),
            relative_discrepancy: disc,
            phi_in: (entry.varphi, entry.cal_i),
            phi_out: (end.varphi, end.cal_i),
        },
    )?;
    Ok(0)
}

#[derive(serde::Serialize)]
struct OrbitReport<'a> {
    schema_version: u32,
    config: &'a RunConfig,
    summary: &'a OrbitSummary,
}

pub fn cmd_orbit(cfg: &RunConfig, out_dir: &Path) -> Result<i32> {
    let lab = cfg.build_lab()?;
    let theta = cfg.theta_point();
    let mut summary = lab.iterate_orbit(
        &theta,
        OrbitStart::Planar {
            v0: cfg.v0,
            t0: cfg.t0,
        },
        cfg.n_max,
        &cfg.policy(true),
    );
    summary.orbit_id = 0;
    println!(
        "orbit: {} iterations, left_domain = {}, escape_suspect = {}, recurrences = {}, growth = {}",
        summary.n_completed,
        summary.left_domain,
        summary.escape_suspect,
        summary.recurrence_count,
        fmt_f64(summary.growth_ratio)
    );
    if let Some(err) = &summary.error {
        println!("orbit ended early: {err}");
    }
    write_text(
        out_dir,
        "orbit.csv",
        &iterate_csv(std::slice::from_ref(&summary), lab.forcing.dim()),
    )?;
    write_json(
        out_dir,
        "orbit.json",
        &OrbitReport {
            schema_version: SCHEMA_VERSION,
            config: cfg,
            summary: &summary,
        },
    )?;
    Ok(0)
}

#[derive(serde::Serialize)]
struct EnsembleReport<'a> {
    schema_version: u32,
    config: &'a RunConfig,
    n_orbits: usize,
    escape_suspect_count: usize,
    escape_fraction: f64,
    left_domain_count: usize,
    error_count: usize,
    max_growth_ratio: f64,
    mean_recurrence: f64,
    recurrent_fraction: f64,
    max_gap: f64,
    gap_violations: usize,
    sandwich_violations: usize,
    gap_slope: Option<crate::fit::LineFit>,
    seed: u64,
}

pub fn cmd_ensemble(cfg: &RunConfig, out_dir: &Path) -> Result<i32> {
    let lab = cfg.build_lab()?;
    let res = lab.ensemble_run(&cfg.ensemble())?;
    println!(
        "ensemble: {} orbits, escape_suspect fraction {} ({} orbits), max growth ratio {}",
        res.n_orbits,
        fmt_f64(res.escape_fraction),
        res.escape_suspect_count,
        fmt_f64(res.max_growth_ratio)
    );
    println!(
        "  recurrences: mean {}, recurrent fraction {}",
        fmt_f64(res.mean_recurrence),
        fmt_f64(res.recurrent_fraction)
    );
    println!(
        "  certificates: {} gap violations, {} corridor violations, {} errors",
        res.gap_violations, res.sandwich_violations, res.error_count
    );
    match &res.gap_slope {
        Some(f) => println!(
            "  gap envelope slope = {} +- {} ({} bins)",
            fmt_f64(f.slope),
            fmt_f64(f.slope_band()),
            f.n
        ),
        None => println!("  gap envelope slope: not fitted (window degenerate or all gaps zero)"),
    }
    write_text(
        out_dir,
        "ensemble.csv",
        &summary_csv(&res.orbits, lab.forcing.dim()),
    )?;
    if cfg.store_iterates {
        write_text(
            out_dir,
            "iterates.csv",
            &iterate_csv(&res.orbits, lab.forcing.dim()),
        )?;
    }
    let report = EnsembleReport {
        schema_version: SCHEMA_VERSION,
        config: cfg,
        n_orbits: res.n_orbits,
        escape_suspect_count: res.escape_suspect_count,
        escape_fraction: res.escape_fraction,
        left_domain_count: res.left_domain_count,
        error_count: res.error_count,
        max_growth_ratio: res.max_growth_ratio,
        mean_recurrence: res.mean_recurrence,
        recurrent_fraction: res.recurrent_fraction,
        max_gap: res.max_gap,
        gap_violations: res.gap_violations,
        sandwich_violations: res.sandwich_violations,
        gap_slope: res.gap_slope,
        seed: res.seed,
    };
    write_json(out_dir, "ensemble.json", &report)?;
    Ok(0)
}

// --------------------------------------------------------------- dispatch

pub const USAGE: &str = "\
littlewood - numerical laboratory for the quasi-periodically forced
superlinear oscillator x'' + |x|^(alpha-1) x = p(t)

USAGE:
  littlewood <SUBCOMMAND> [FLAGS]

SUBCOMMANDS:
  params     derive and print all constants and thresholds
  verify     run the full property battery (exit 1 on any failure)
  successor  evaluate one successor step by both routes
  orbit      iterate one orbit, writing the per-iterate CSV
  ensemble   run a Monte Carlo campaign over phases and starting points

FLAGS:
  --config PATH   flat key-value run configuration (defaults built in)
  --out DIR       output directory for CSV/JSON results (default `.`)
  --seed U64      override the config seed
  --threads N     worker threads for ensembles (0 = all cores)
  --help          this text

EXIT CODES:
  0 success, 1 check failure, 2 usage/config error, 3 numeric failure
";

pub struct CliArgs {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

pub fn parse_args(args: &[String]) -> Result<CliArgs> {
    let mut command = None;
    let mut config_path = None;
    let mut out_dir = PathBuf::from(".");
    let mut seed = None;
    let mut threads = None;
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--config" => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Config("--config needs a path".into()))?;
                config_path = Some(PathBuf::from(v));
            }
            "--out" => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Config("--out needs a directory".into()))?;
                out_dir = PathBuf::from(v);
            }
            "--seed" => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Config("--seed needs a value".into()))?;
                seed = Some(
                    v.parse()
                        .map_err(|_| Error::Config(format!("bad seed `{v}`")))?,
                );
            }
            "--threads" => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Config("--threads needs a value".into()))?;
                threads = Some(
                    v.parse()
                        .map_err(|_| Error::Config(format!("bad thread count `{v}`")))?,
                );
            }
            "--help" | "-h" => {
                command = Some("help".to_string());
            }
            other if command.is_none() && !other.starts_with('-') => {
                command = Some(other.to_string());
            }
            other => {
                return Err(Error::Config(format!("unexpected argument `{other}`")));
            }
        }
    }
    Ok(CliArgs {
        command: command.ok_or_else(|| Error::Config("missing subcommand".into()))?,
        config_path,
        out_dir,
        seed,
        threads,
    })
}

/// Run the CLI; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    let parsed = match parse_args(args) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{USAGE}");
            return 2;
        }
    };
    if parsed.command == "help" {
        println!("{USAGE}");
        return 0;
    }
    let mut cfg = match &parsed.config_path {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => match RunConfig::parse(&text) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error in {}: {e}", path.display());
                    return 2;
                }
            },
            Err(e) => {
                eprintln!("error reading {}: {e}", path.display());
                return 2;
            }
        },
        None => RunConfig::default(),
    };
    if let Some(seed) = parsed.seed {
        cfg.seed = seed;
    }
    if let Some(n) = parsed.threads {
        if n > 0 {
            // a second initialization (e.g. in tests) is harmless
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    let result = match parsed.command.as_str() {
        "params" => cmd_params(&cfg, &parsed.out_dir),
        "verify" => cmd_verify(&cfg, &parsed.out_dir),
        "successor" => cmd_successor(&cfg, &parsed.out_dir),
        "orbit" => cmd_orbit(&cfg, &parsed.out_dir),
        "ensemble" => cmd_ensemble(&cfg, &parsed.out_dir),
        other => {
            eprintln!("error: unknown subcommand `{other}`");
            eprintln!("{USAGE}");
            return 2;
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_the_documented_format() {
        let text = "\
# campaign setup
alpha 3
omega 1,1.4142135623730951
theta 0.25,0.5
term 1,0 0.1 0
term 0,1 0 0.05
seed 7
n_max 50
store_iterates true
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.alpha, 3.0);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.n_max, 50);
        assert_eq!(cfg.terms.len(), 2);
        assert!(cfg.store_iterates);
        assert_eq!(cfg.theta, vec![0.25, 0.5]);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::parse("alpha 2.9").is_err());
        assert!(RunConfig::parse("frobnicate 3").is_err());
        assert!(RunConfig::parse("alpha 3\nalpha 4").is_err());
        assert!(RunConfig::parse("omega 1,2\ntheta 0.5").is_err());
        assert!(RunConfig::parse("term 1,0 0.1").is_err());
        assert!(RunConfig::parse("delta -1").is_err());
        // replacing the forcing drops the default terms
        let cfg = RunConfig::parse("omega 1\ntheta 0\nterm 1 0.2 0").unwrap();
        assert_eq!(cfg.terms.len(), 1);
        assert_eq!(cfg.omega.len(), 1);
    }

    #[test]
    fn float_format_round_trips() {
        for x in [
            1.0,
            -0.1234567890123456789,
            1e-300,
            9.99e299,
            std::f64::consts::PI,
        ] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn arg_parser_understands_flags() {
        let args: Vec<String> = [
            "ensemble",
            "--seed",
            "9",
            "--out",
            "/tmp/x",
            "--threads",
            "2",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let parsed = parse_args(&args).unwrap();
        assert_eq!(parsed.command, "ensemble");
        assert_eq!(parsed.seed, Some(9));
        assert_eq!(parsed.threads, Some(2));
        assert!(parse_args(&["--what".to_string()]).is_err());
        assert!(parse_args(&[]).is_err());
    }
}
