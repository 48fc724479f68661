//! Successor maps and orbit statistics.
//!
//! `Phi` is the time-2pi map of the transformed flow, taken from the
//! section `tau = pi/2` (where the zeros of `x` with negative velocity
//! live) to `tau = 5 pi/2`. Conjugating `Phi` with the coordinate chain
//! yields the successor map `psi` on `(v, t)`; reading the time variable
//! through the line flow `iota` instead yields the cylinder map `g` on
//! `T^N x (0, inf)`. All three views are implemented and checked against
//! each other.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{fit_log_log, LineFit};
use crate::forcing::TorusPoint;
use crate::lab::Lab;
use crate::ode::{self, OdeOptions, StepControl};
use crate::special::{HALF_PI, TAU};

/// Section point of the transformed flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessorPoint {
    pub varphi: f64,
    pub cal_i: f64,
}

/// Point of the cylinder map `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusMapPoint {
    pub theta: TorusPoint,
    pub cal_i: f64,
}

/// One revolution of the transformed flow, with the bounds it realized.
#[derive(Debug, Clone)]
pub struct PhiDiagnostics {
    pub end: SuccessorPoint,
    /// min and max of `J(tau)/J0` over the revolution.
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// max of `|J'(tau)|` over the accepted steps.
    pub max_rate: f64,
    /// Total variation of `J` over the revolution (dense-sampled).
    pub tv: f64,
}

impl Lab {
    fn phi_bounds_ok(cal_i: f64, cal_i0: f64) -> bool {
        // the 1/4 .. 4 corridor, with headroom for roundoff
        cal_i >= 0.25 * cal_i0 * (1.0 - 1e-12) && cal_i <= 4.0 * cal_i0 * (1.0 + 1e-12)
    }

    /// The Poincare successor map of the transformed system.
    pub fn poincare_phi(
        &self,
        theta: &TorusPoint,
        pt: SuccessorPoint,
        rtol: f64,
    ) -> Result<SuccessorPoint> {
        Ok(self.poincare_phi_diag(theta, pt, rtol)?.end)
    }

    /// Same map, also reporting the realized sandwich ratios and the
    /// maximal momentum rate (used by the adiabatic diagnostics).
    pub fn poincare_phi_diag(
        &self,
        theta: &TorusPoint,
        pt: SuccessorPoint,
        rtol: f64,
    ) -> Result<PhiDiagnostics> {
        if !(pt.cal_i > self.thresholds.cal_i_top) {
            return Err(Error::Domain(format!(
                "successor map needs J0 > {}, got {}",
                self.thresholds.cal_i_top, pt.cal_i
            )));
        }
        let kernel = self.kernel();
        let inner_err: RefCell<Option<Error>> = RefCell::new(None);
        let mut rhs = |tau: f64, y: &[f64; 2]| match kernel.h1_eval(theta, y[0], y[1], tau) {
            Ok(ev) => [ev.dvarphi, ev.dcal_i],
            Err(e) => {
                inner_err.borrow_mut().get_or_insert(e);
                [f64::NAN, f64::NAN]
            }
        };
        let opts = OdeOptions {
            rtol,
            atol: self.ensemble_atol(rtol, pt.cal_i),
            h_max: HALF_PI,
            ..Default::default()
        };
        let mut min_ratio = 1.0_f64;
        let mut max_ratio = 1.0_f64;
        let mut max_rate = 0.0_f64;
        let mut tv = 0.0_f64;
        let mut breached = false;
        let sol = ode::integrate_with(
            &mut rhs,
            HALF_PI,
            [pt.varphi, pt.cal_i],
            HALF_PI + TAU,
            &opts,
            |step| {
                let j = step.y1[1];
                min_ratio = min_ratio.min(j / pt.cal_i);
                max_ratio = max_ratio.max(j / pt.cal_i);
                max_rate = max_rate.max(step.f1[1].abs());
                let mut prev = step.y0[1];
                for k in 1..=8 {
                    let t = step.t0 + step.h * k as f64 / 8.0;
                    let val = if k == 8 { j } else { step.eval(t)[1] };
                    tv += (val - prev).abs();
                    prev = val;
                }
                if !Self::phi_bounds_ok(j, pt.cal_i) {
                    breached = true;
                    return StepControl::Stop;
                }
                StepControl::Continue
            },
        );
        if let Some(e) = inner_err.into_inner() {
            return Err(e);
        }
        let sol = sol?;
        if breached {
            return Err(Error::InvariantBreach(format!(
                "momentum left the 1/4..4 corridor during one revolution (J0 = {}, reached {})",
                pt.cal_i, sol.y[1]
            )));
        }
        Ok(PhiDiagnostics {
            end: SuccessorPoint {
                varphi: sol.y[0],
                cal_i: sol.y[1],
            },
            min_ratio,
            max_ratio,
            max_rate,
            tv,
        })
    }

    fn ensemble_atol(&self, rtol: f64, scale: f64) -> f64 {
        // keep the position component from demanding absolute accuracy far
        // beyond what the momentum statistics can use
        (rtol * scale * 1e-4).clamp(self.config.integrator_atol, 1e-6)
    }

    /// Successor map through the full coordinate chain:
    /// `(v0, t0) -> (v1, t1)` with `v0 < v_star`.
    pub fn psi_transformed(
        &self,
        theta: &TorusPoint,
        v0: f64,
        t0: f64,
        rtol: f64,
    ) -> Result<(f64, f64)> {
        if !(v0 < self.thresholds.v_star) {
            return Err(Error::Domain(format!(
                "successor map needs v0 < v_star = {}, got {v0}",
                self.thresholds.v_star
            )));
        }
        let kernel = self.kernel();
        // restriction of the chain to the section: x = 0, v < 0 means the
        // angle is pi/2 and the energy is v^2/2
        let i0 = 0.5 * v0 * v0;
        let start = kernel.t_forward(theta, t0, i0, HALF_PI)?;
        if !(start.cal_i >= 0.25 * v0 * v0) {
            return Err(Error::InvariantBreach(format!(
                "entry bound J0 >= v0^2/4 violated: J0 = {}, v0 = {v0}",
                start.cal_i
            )));
        }
        let end = self.poincare_phi(
            theta,
            SuccessorPoint {
                varphi: start.varphi,
                cal_i: start.cal_i,
            },
            rtol,
        )?;
        let te = kernel.t_inverse(theta, end.varphi, end.cal_i, HALF_PI + TAU)?;
        let v1 = -(2.0 * te.i).sqrt();
        Ok((v1, te.phi))
    }

    /// The increments `(F, G)` of the cylinder map, by integrating the
    /// transformed flow with its time argument read through the line flow.
    pub fn torus_f_g(&self, theta0: &TorusPoint, cal_i0: f64, rtol: f64) -> Result<(f64, f64)> {
        if !(cal_i0 > self.thresholds.cal_i_top) {
            return Err(Error::Domain(format!(
                "cylinder map needs J0 > {}, got {cal_i0}",
                self.thresholds.cal_i_top
            )));
        }
        let kernel = self.kernel();
        let inner_err: RefCell<Option<Error>> = RefCell::new(None);
        let mut scratch = theta0.clone();
        let mut rhs = |tau: f64, y: &[f64; 2]| {
            scratch.set_shifted(theta0, self.forcing.omega(), y[0]);
            match kernel.h1_eval(&scratch, 0.0, y[1], tau) {
                Ok(ev) => [ev.dvarphi, ev.dcal_i],
                Err(e) => {
                    inner_err.borrow_mut().get_or_insert(e);
                    [f64::NAN, f64::NAN]
                }
            }
        };
        let opts = OdeOptions {
            rtol,
            atol: self.ensemble_atol(rtol, cal_i0),
            h_max: HALF_PI,
            ..Default::default()
        };
        let mut breached = false;
        let sol = ode::integrate_with(
            &mut rhs,
            HALF_PI,
            [0.0, cal_i0],
            HALF_PI + TAU,
            &opts,
            |step| {
                if !Self::phi_bounds_ok(step.y1[1], cal_i0) {
                    breached = true;
                    return StepControl::Stop;
                }
                StepControl::Continue
            },
        );
        if let Some(e) = inner_err.into_inner() {
            return Err(e);
        }
        let sol = sol?;
        if breached {
            return Err(Error::InvariantBreach(format!(
                "momentum left the 1/4..4 corridor on the cylinder (J0 = {cal_i0})"
            )));
        }
        Ok((sol.y[0], sol.y[1] - cal_i0))
    }

    /// One application of the cylinder map `g`.
    pub fn g_map(&self, pt: &TorusMapPoint, rtol: f64) -> Result<TorusMapPoint> {
        let (f, g) = self.torus_f_g(&pt.theta, pt.cal_i, rtol)?;
        Ok(TorusMapPoint {
            theta: pt.theta.add(&self.forcing.iota(f)),
            cal_i: pt.cal_i + g,
        })
    }

    /// Maximum of `|I'|` over one revolution of the *untransformed*
    /// time-energy flow; the quantity whose failure to decay motivates the
    /// canonical transformation.
    pub fn te_flow_max_rate(
        &self,
        theta: &TorusPoint,
        phi0: f64,
        i0: f64,
        rtol: f64,
    ) -> Result<f64> {
        if i0 < self.thresholds.i_star {
            return Err(Error::Domain(format!(
                "time-energy flow starts at I = {}, got {i0}",
                self.thresholds.i_star
            )));
        }
        let kernel = self.kernel();
        let inner_err: RefCell<Option<Error>> = RefCell::new(None);
        let mut rhs = |tau: f64, y: &[f64; 2]| match kernel.te_field(theta, y[0], y[1], tau) {
            Ok(d) => [d.0, d.1],
            Err(e) => {
                inner_err.borrow_mut().get_or_insert(e);
                [f64::NAN, f64::NAN]
            }
        };
        let opts = OdeOptions {
            rtol,
            atol: self.ensemble_atol(rtol, i0),
            h_max: HALF_PI,
            ..Default::default()
        };
        let mut max_rate = 0.0_f64;
        ode::integrate_with(
            &mut rhs,
            HALF_PI,
            [phi0, i0],
            HALF_PI + TAU,
            &opts,
            |step| {
                max_rate = max_rate.max(step.f1[1].abs());
                StepControl::Continue
            },
        )?;
        if let Some(e) = inner_err.into_inner() {
            return Err(e);
        }
        Ok(max_rate)
    }
}

/// How an orbit is started.
#[derive(Debug, Clone)]
pub enum OrbitStart {
    /// A descending zero of the original equation.
    Planar { v0: f64, t0: f64 },
    /// A section point of the transformed flow with phase `theta`.
    Section { varphi0: f64, cal_i0: f64 },
}

/// Iteration policy and bookkeeping constants.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IteratePolicy {
    /// Sustained-growth factor for the escape heuristic.
    pub growth_factor: f64,
    /// Relative recurrence band around the initial momentum.
    pub delta: f64,
    /// Iterations ignored before the escape heuristic applies.
    pub burn_in: usize,
    /// Integrator tolerance per revolution.
    pub rtol: f64,
    /// Record the per-iterate rows (summaries are always kept).
    pub record_iterates: bool,
}

impl Default for IteratePolicy {
    fn default() -> Self {
        IteratePolicy {
            growth_factor: 4.0,
            delta: 0.05,
            burn_in: 100,
            rtol: 1e-8,
            record_iterates: false,
        }
    }
}

/// One recorded section crossing.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IterateRecord {
    pub n: usize,
    /// Zero time of the original equation.
    pub t: f64,
    /// Velocity at that zero (negative).
    pub v: f64,
    pub varphi: f64,
    pub cal_i: f64,
    /// Torus coordinate `theta + iota(varphi)`.
    pub theta: Vec<f64>,
}

/// Everything recorded about one orbit of the successor map.
#[derive(Debug, Clone, serde::Serialize)]
pub struct OrbitSummary {
    pub orbit_id: u64,
    /// Phase of the forcing for this orbit.
    pub theta0: Vec<f64>,
    pub varphi0: f64,
    pub cal_i0: f64,
    /// Completed iterations (the records span `0..=n_completed` when kept).
    pub n_completed: usize,
    pub iterates: Vec<IterateRecord>,
    /// The momentum dropped to the domain floor and iteration stopped.
    pub left_domain: bool,
    /// Sustained growth beyond `growth_factor` past the burn-in.
    pub escape_suspect: bool,
    /// Returns of the momentum into the `delta`-band around its start.
    pub recurrence_count: usize,
    /// `max_n J_n / J_0`.
    pub growth_ratio: f64,
    /// `max_n |J_{n+1} - J_n|`.
    pub max_gap: f64,
    /// Steps violating the one-step bound `|J_{n+1} - J_n| <= C J_n^b`.
    pub gap_violations: usize,
    /// Steps where the revolution left its 1/4..4 corridor (always an
    /// abnormal stop).
    pub sandwich_violations: usize,
    /// A numeric failure that ended the orbit early, if any.
    pub error: Option<String>,
}

impl Lab {
    /// Iterate the successor map with domain bookkeeping. Numeric trouble
    /// is reported through flags, never as an error.
    pub fn iterate_orbit(
        &self,
        theta: &TorusPoint,
        start: OrbitStart,
        n_max: usize,
        policy: &IteratePolicy,
    ) -> OrbitSummary {
        let kernel = self.kernel();
        let (varphi0, cal_i0, entry_error) = match &start {
            OrbitStart::Planar { v0, t0 } => {
                if !(*v0 < self.thresholds.v_star) {
                    (0.0, 0.0, Some(format!("v0 = {v0} is not below v_star")))
                } else {
                    match kernel.t_forward(theta, *t0, 0.5 * v0 * v0, HALF_PI) {
                        Ok(ts) => (ts.varphi, ts.cal_i, None),
                        Err(e) => (0.0, 0.0, Some(e.to_string())),
                    }
                }
            }
            OrbitStart::Section { varphi0, cal_i0 } => (*varphi0, *cal_i0, None),
        };

        let mut summary = OrbitSummary {
            orbit_id: 0,
            theta0: theta.coords().to_vec(),
            varphi0,
            cal_i0,
            n_completed: 0,
            iterates: Vec::new(),
            left_domain: false,
            escape_suspect: false,
            recurrence_count: 0,
            growth_ratio: 1.0,
            max_gap: 0.0,
            gap_violations: 0,
            sandwich_violations: 0,
            error: entry_error,
        };
        if summary.error.is_some() {
            return summary;
        }

        let b = self.params.b_alpha;
        let gap_c = self.thresholds.gap_constant;
        let mut varphi = varphi0;
        let mut cal_i = cal_i0;
        let mut all_above_after_burn_in = true;
        let mut seen_past_burn_in = false;

        if policy.record_iterates {
            summary.iterates.push(self.record(theta, 0, varphi, cal_i));
        }
        if !(cal_i > self.thresholds.cal_i_top) {
            summary.left_domain = true;
            return summary;
        }

        for n in 1..=n_max {
            let step = self.poincare_phi(theta, SuccessorPoint { varphi, cal_i }, policy.rtol);
            let end = match step {
                Ok(end) => end,
                Err(Error::InvariantBreach(msg)) => {
                    summary.sandwich_violations += 1;
                    summary.error = Some(msg);
                    break;
                }
                Err(e) => {
                    summary.error = Some(e.to_string());
                    break;
                }
            };
            let gap = (end.cal_i - cal_i).abs();
            summary.max_gap = summary.max_gap.max(gap);
            if gap > gap_c * cal_i.powf(b) * (1.0 + 1e-9) {
                summary.gap_violations += 1;
            }
            varphi = end.varphi;
            cal_i = end.cal_i;
            summary.n_completed = n;
            summary.growth_ratio = summary.growth_ratio.max(cal_i / cal_i0);
            if (cal_i - cal_i0).abs() < policy.delta * cal_i0 {
                summary.recurrence_count += 1;
            }
            if n >= policy.burn_in {
                seen_past_burn_in = true;
                if cal_i / cal_i0 <= policy.growth_factor {
                    all_above_after_burn_in = false;
                }
            }
            if policy.record_iterates {
                summary.iterates.push(self.record(theta, n, varphi, cal_i));
            }
            if !(cal_i > self.thresholds.cal_i_top) {
                summary.left_domain = true;
                break;
            }
        }
        summary.escape_suspect =
            seen_past_burn_in && all_above_after_burn_in && !summary.left_domain;
        summary
    }

    fn record(&self, theta: &TorusPoint, n: usize, varphi: f64, cal_i: f64) -> IterateRecord {
        let kernel = self.kernel();
        let (t, v) = match kernel.t_inverse(theta, varphi, cal_i, HALF_PI) {
            Ok(te) if te.i > 0.0 => (te.phi, -(2.0 * te.i).sqrt()),
            _ => (f64::NAN, f64::NAN),
        };
        IterateRecord {
            n,
            t,
            v,
            varphi,
            cal_i,
            theta: theta.add(&self.forcing.iota(varphi)).coords().to_vec(),
        }
    }
}

/// Configuration of one Monte Carlo campaign.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EnsembleConfig {
    pub theta_samples: usize,
    pub orbits_per_theta: usize,
    pub n_max: usize,
    /// Initial momenta drawn uniformly from this window.
    pub cal_i0: (f64, f64),
    /// Initial positions drawn uniformly from this window.
    pub varphi0: (f64, f64),
    pub seed: u64,
    pub policy: IteratePolicy,
}

impl EnsembleConfig {
    pub fn validate(&self, floor: f64) -> Result<()> {
        if self.theta_samples == 0 || self.orbits_per_theta == 0 || self.n_max == 0 {
            return Err(Error::Config(
                "ensemble sample counts must be positive".into(),
            ));
        }
        if !(self.cal_i0.0 > floor && self.cal_i0.1 >= self.cal_i0.0) {
            return Err(Error::Config(format!(
                "initial momentum window {:?} must sit above the domain floor {floor}",
                self.cal_i0
            )));
        }
        if !(self.varphi0.1 >= self.varphi0.0) {
            return Err(Error::Config("empty varphi window".into()));
        }
        if !(self.policy.growth_factor > 1.0) || !(self.policy.delta > 0.0) {
            return Err(Error::Config(
                "growth_factor must exceed 1 and delta be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Aggregated campaign output.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EnsembleResult {
    pub n_orbits: usize,
    pub escape_suspect_count: usize,
    pub escape_fraction: f64,
    pub left_domain_count: usize,
    pub error_count: usize,
    pub max_growth_ratio: f64,
    pub mean_recurrence: f64,
    /// Fraction of orbits that re-entered the recurrence band at least once.
    pub recurrent_fraction: f64,
    pub max_gap: f64,
    pub gap_violations: usize,
    pub sandwich_violations: usize,
    /// Envelope fit of `log max-gap` against `log J_0` over the window
    /// (`None` when the window is degenerate or every gap vanished).
    pub gap_slope: Option<LineFit>,
    pub seed: u64,
    pub orbits: Vec<OrbitSummary>,
}

impl Lab {
    /// Run a campaign: sample phases uniformly on the torus and starting
    /// points uniformly in the configured windows, iterate every orbit,
    /// and aggregate. Deterministic for a fixed seed, independent of the
    /// number of worker threads.
    pub fn ensemble_run(&self, cfg: &EnsembleConfig) -> Result<EnsembleResult> {
        cfg.validate(self.thresholds.cal_i_top)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dim = self.forcing.dim();
        struct Task {
            id: u64,
            theta: TorusPoint,
            varphi0: f64,
            cal_i0: f64,
        }
        let mut tasks = Vec::with_capacity(cfg.theta_samples * cfg.orbits_per_theta);
        for _ in 0..cfg.theta_samples {
            let theta = TorusPoint::new((0..dim).map(|_| rng.gen::<f64>()).collect());
            for _ in 0..cfg.orbits_per_theta {
                let varphi0 = rng.gen_range(cfg.varphi0.0..=cfg.varphi0.1);
                let cal_i0 = rng.gen_range(cfg.cal_i0.0..=cfg.cal_i0.1);
                tasks.push(Task {
                    id: tasks.len() as u64,
                    theta: theta.clone(),
                    varphi0,
                    cal_i0,
                });
            }
        }

        let orbits: Vec<OrbitSummary> = tasks
            .par_iter()
            .map(|task| {
                let mut summary = self.iterate_orbit(
                    &task.theta,
                    OrbitStart::Section {
                        varphi0: task.varphi0,
                        cal_i0: task.cal_i0,
                    },
                    cfg.n_max,
                    &cfg.policy,
                );
                summary.orbit_id = task.id;
                summary
            })
            .collect();

        let n_orbits = orbits.len();
        let escape_suspect_count = orbits.iter().filter(|o| o.escape_suspect).count();
        let left_domain_count = orbits.iter().filter(|o| o.left_domain).count();
        let error_count = orbits.iter().filter(|o| o.error.is_some()).count();
        let max_growth_ratio = orbits.iter().map(|o| o.growth_ratio).fold(0.0, f64::max);
        let mean_recurrence = orbits
            .iter()
            .map(|o| o.recurrence_count as f64)
            .sum::<f64>()
            / n_orbits.max(1) as f64;
        let recurrent_fraction = orbits.iter().filter(|o| o.recurrence_count > 0).count() as f64
            / n_orbits.max(1) as f64;
        let max_gap = orbits.iter().map(|o| o.max_gap).fold(0.0, f64::max);
        let gap_violations = orbits.iter().map(|o| o.gap_violations).sum();
        let sandwich_violations = orbits.iter().map(|o| o.sandwich_violations).sum();

        // envelope of the one-step gaps: per-bin maxima over log J0
        let n_bins = 6usize;
        let (lo, hi) = (cfg.cal_i0.0.ln(), cfg.cal_i0.1.ln());
        let gap_slope = if hi > lo {
            let mut bins: Vec<(f64, f64)> = vec![(0.0, 0.0); n_bins];
            for o in &orbits {
                if o.max_gap > 0.0 {
                    let frac = (o.cal_i0.ln() - lo) / (hi - lo);
                    let idx = ((frac * n_bins as f64) as usize).min(n_bins - 1);
                    if o.max_gap > bins[idx].1 {
                        bins[idx] = (o.cal_i0, o.max_gap.max(bins[idx].1));
                    }
                }
            }
            let pts: Vec<(f64, f64)> = bins.into_iter().filter(|p| p.1 > 0.0).collect();
            if pts.len() >= 3 {
                fit_log_log(&pts)
            } else {
                None
            }
        } else {
            None
        };

        Ok(EnsembleResult {
            n_orbits,
            escape_suspect_count,
            escape_fraction: escape_suspect_count as f64 / n_orbits.max(1) as f64,
            left_domain_count,
            error_count,
            max_growth_ratio,
            mean_recurrence,
            recurrent_fraction,
            max_gap,
            gap_violations,
            sandwich_violations,
            gap_slope,
            seed: cfg.seed,
            orbits,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::{ForcingTerm, TorusForcing};
    use crate::lab::LabConfig;

    fn forced_lab(alpha: f64) -> Lab {
        let forcing = TorusForcing::new(
            vec![1.0, std::f64::consts::SQRT_2],
            vec![
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
        )
        .unwrap();
        Lab::new(alpha, forcing).unwrap()
    }

    fn unforced_lab() -> Lab {
        Lab::with_config(
            TorusForcing::zero(2),
            LabConfig {
                alpha: 3.0,
                safety: 1.0,
                ..LabConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn unforced_revolution_is_a_rotation() {
        let lab = unforced_lab();
        let theta = TorusPoint::zero(2);
        let j0 = 1.0e4;
        let d = lab
            .poincare_phi_diag(
                &theta,
                SuccessorPoint {
                    varphi: 0.3,
                    cal_i: j0,
                },
                1e-10,
            )
            .unwrap();
        // momentum exactly conserved: the unforced field has J' = 0 identically
        assert_eq!(d.end.cal_i, j0);
        assert_eq!(d.max_rate, 0.0);
        let p = &lab.params;
        let advance =
            TAU * p.kappa0 * p.exp.r_of_energy * j0.powf((1.0 - p.alpha) / (2.0 * (p.alpha + 1.0)));
        assert!(
            ((d.end.varphi - 0.3) - advance).abs() < 1e-9,
            "advance defect"
        );
    }

    #[test]
    fn one_step_gap_respects_the_adiabatic_bound() {
        let lab = forced_lab(3.0);
        let theta = TorusPoint::new(vec![0.37, 0.81]);
        for j0 in [1.0e3, 1.0e4, 1.0e6] {
            let d = lab
                .poincare_phi_diag(
                    &theta,
                    SuccessorPoint {
                        varphi: 1.0,
                        cal_i: j0,
                    },
                    1e-10,
                )
                .unwrap();
            let gap = (d.end.cal_i - j0).abs();
            let bound = lab.thresholds.gap_constant * j0.powf(lab.params.b_alpha);
            assert!(
                gap <= bound,
                "gap {gap:.3e} exceeds bound {bound:.3e} at J0 = {j0:.1e}"
            );
            assert!(d.min_ratio > 0.25 && d.max_ratio < 4.0);
        }
    }

    #[test]
    fn psi_routes_agree_without_forcing() {
        let lab = unforced_lab();
        let theta = TorusPoint::zero(2);
        let (v1, t1) = lab.psi_transformed(&theta, -10.0, 0.0, 1e-11).unwrap();
        // frozen period oracle, as in the direct-route test
        assert!((v1 + 10.0).abs() < 1e-9, "v1 = {v1}");
        assert!((t1 - 1.9721035497842980).abs() < 1e-8, "t1 = {t1}");
    }

    #[test]
    fn psi_transformed_matches_psi_direct_with_forcing() {
        let lab = forced_lab(3.0);
        let theta = TorusPoint::new(vec![0.22, 0.64]);
        let v0 = 2.5 * lab.thresholds.v_star;
        let t0 = 0.7;
        let (v1, t1) = lab.psi_transformed(&theta, v0, t0, 1e-11).unwrap();
        let ev = lab.psi_direct(&theta, v0, t0).unwrap();
        assert!(
            ((v1 - ev.v1) / ev.v1).abs() < 1e-6,
            "velocity mismatch: {v1} vs {}",
            ev.v1
        );
        assert!(
            ((t1 - ev.t1) / ev.t1).abs() < 1e-6,
            "time mismatch: {t1} vs {}",
            ev.t1
        );
    }

    #[test]
    fn cylinder_map_matches_planar_successor() {
        // the commutative diagram: g at theta + iota(varphi0) reproduces Phi
        let lab = forced_lab(3.0);
        let theta = TorusPoint::new(vec![0.15, 0.4]);
        let varphi0 = 2.1;
        let j0 = 4.0e4;
        let end = lab
            .poincare_phi(
                &theta,
                SuccessorPoint {
                    varphi: varphi0,
                    cal_i: j0,
                },
                1e-11,
            )
            .unwrap();
        let shifted = theta.add(&lab.forcing.iota(varphi0));
        let (f, g) = lab.torus_f_g(&shifted, j0, 1e-11).unwrap();
        assert!((varphi0 + f - end.varphi).abs() < 1e-7, "F defect");
        assert!((j0 + g - end.cal_i).abs() < 1e-6 * j0.max(1.0), "G defect");
    }

    #[test]
    fn unforced_cylinder_map_preserves_momentum() {
        let lab = unforced_lab();
        let pt = TorusMapPoint {
            theta: TorusPoint::zero(2),
            cal_i: 100.0,
        };
        let next = lab.g_map(&pt, 1e-10).unwrap();
        assert_eq!(next.cal_i, 100.0);
        let p = &lab.params;
        let f_expect = TAU
            * p.kappa0
            * p.exp.r_of_energy
            * 100.0_f64.powf((1.0 - p.alpha) / (2.0 * (p.alpha + 1.0)));
        let (f, g) = lab.torus_f_g(&pt.theta, pt.cal_i, 1e-10).unwrap();
        assert_eq!(g, 0.0);
        assert!((f - f_expect).abs() < 1e-9);
    }

    #[test]
    fn planar_and_torus_iterations_share_the_momentum_sequence() {
        let lab = forced_lab(3.0);
        let phase = TorusPoint::new(vec![0.31, 0.77]);
        let varphi0 = 1.4;
        let j0 = 3.0e4;
        let n = 10;
        // planar route: iterate Phi with the fixed phase
        let mut planar = Vec::new();
        let mut pt = SuccessorPoint {
            varphi: varphi0,
            cal_i: j0,
        };
        for _ in 0..n {
            pt = lab.poincare_phi(&phase, pt, 1e-10).unwrap();
            planar.push(pt.cal_i);
        }
        // cylinder route: start from theta + iota(varphi0)
        let mut torus = Vec::new();
        let mut tp = TorusMapPoint {
            theta: phase.add(&lab.forcing.iota(varphi0)),
            cal_i: j0,
        };
        for _ in 0..n {
            tp = lab.g_map(&tp, 1e-10).unwrap();
            torus.push(tp.cal_i);
        }
        for (i, (a, b)) in planar.iter().zip(&torus).enumerate() {
            let tol = 1e-5 * (i + 1) as f64 * j0;
            assert!((a - b).abs() <= tol, "step {i}: {a} vs {b}");
        }
    }

    #[test]
    fn unforced_orbit_is_fully_recurrent() {
        let lab = unforced_lab();
        let theta = TorusPoint::zero(2);
        let n_max = 50;
        let policy = IteratePolicy {
            record_iterates: true,
            ..Default::default()
        };
        let summary = lab.iterate_orbit(
            &theta,
            OrbitStart::Section {
                varphi0: 0.0,
                cal_i0: 500.0,
            },
            n_max,
            &policy,
        );
        assert_eq!(summary.n_completed, n_max);
        assert_eq!(summary.recurrence_count, n_max);
        assert_eq!(summary.growth_ratio, 1.0);
        assert_eq!(summary.max_gap, 0.0);
        assert!(!summary.escape_suspect && !summary.left_domain);
        assert_eq!(summary.iterates.len(), n_max + 1);
        // records carry the derived zero data: v constant for p = 0
        let v0 = summary.iterates[0].v;
        assert!(summary.iterates.iter().all(|r| (r.v - v0).abs() < 1e-9));
    }

    #[test]
    fn orbit_below_domain_floor_stops_immediately() {
        let lab = forced_lab(3.0);
        let theta = TorusPoint::zero(2);
        let summary = lab.iterate_orbit(
            &theta,
            OrbitStart::Section {
                varphi0: 0.0,
                cal_i0: lab.thresholds.cal_i_top * 0.5,
            },
            10,
            &IteratePolicy::default(),
        );
        assert!(summary.left_domain);
        assert_eq!(summary.n_completed, 0);
    }

    #[test]
    fn small_ensemble_is_deterministic_and_unsuspicious() {
        let lab = forced_lab(3.0);
        let cfg = EnsembleConfig {
            theta_samples: 3,
            orbits_per_theta: 4,
            n_max: 20,
            cal_i0: (1.0e4, 1.0e5),
            varphi0: (0.0, TAU),
            seed: 42,
            policy: IteratePolicy {
                burn_in: 5,
                ..Default::default()
            },
        };
        let a = lab.ensemble_run(&cfg).unwrap();
        let b = lab.ensemble_run(&cfg).unwrap();
        assert_eq!(a.n_orbits, 12);
        assert_eq!(a.escape_suspect_count, 0);
        assert_eq!(a.gap_violations, 0);
        assert_eq!(a.sandwich_violations, 0);
        assert_eq!(a.error_count, 0);
        assert!(a.max_growth_ratio < 4.0);
        // bitwise reproducibility
        for (x, y) in a.orbits.iter().zip(&b.orbits) {
            assert_eq!(x.cal_i0.to_bits(), y.cal_i0.to_bits());
            assert_eq!(x.max_gap.to_bits(), y.max_gap.to_bits());
            assert_eq!(x.growth_ratio.to_bits(), y.growth_ratio.to_bits());
        }
    }

    #[test]
    fn zero_forcing_ensemble_has_no_gaps() {
        let lab = unforced_lab();
        let cfg = EnsembleConfig {
            theta_samples: 2,
            orbits_per_theta: 3,
            n_max: 10,
            cal_i0: (100.0, 1000.0),
            varphi0: (0.0, TAU),
            seed: 7,
            policy: IteratePolicy::default(),
        };
        let res = lab.ensemble_run(&cfg).unwrap();
        assert_eq!(res.escape_suspect_count, 0);
        assert_eq!(res.max_gap, 0.0);
        assert!(res.gap_slope.is_none(), "all gaps vanish, no slope to fit");
        assert_eq!(res.mean_recurrence, 10.0);
    }
}
