//! The property battery: every quantitative structure of the construction,
//! checked numerically at documented tolerances.
//!
//! Each check reports a single headline number `measured` that must not
//! exceed `threshold`. The acceptance suite and the `verify` subcommand
//! both run these functions; nothing here mutates the laboratory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fit::fit_log_log;
use crate::forcing::TorusPoint;
use crate::lab::Lab;
use crate::ode;
use crate::quad;
use crate::special::{AlphaParams, HALF_PI, PI, TAU};
use crate::successor::{EnsembleConfig, IteratePolicy, SuccessorPoint};
use crate::transforms::Thresholds;

/// Outcome of one check.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Headline figure; passing means `measured <= threshold`.
    pub measured: f64,
    pub threshold: f64,
    /// The check does not apply in this configuration (counted as passed).
    pub skipped: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, measured: f64, threshold: f64, detail: impl Into<String>) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            passed: measured <= threshold && measured.is_finite(),
            measured,
            threshold,
            skipped: false,
            detail: detail.into(),
        }
    }

    fn skipped(name: &str, detail: impl Into<String>) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            passed: true,
            measured: 0.0,
            threshold: 0.0,
            skipped: true,
            detail: detail.into(),
        }
    }

    pub fn one_line(&self) -> String {
        let status = if self.skipped {
            "SKIP"
        } else if self.passed {
            "PASS"
        } else {
            "FAIL"
        };
        format!(
            "{status} {:<28} measured {:.3e} (threshold {:.3e}) {}",
            self.name, self.measured, self.threshold, self.detail
        )
    }
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x0DD5_EED0 ^ tag)
}

fn random_theta(lab: &Lab, rng: &mut ChaCha8Rng) -> TorusPoint {
    TorusPoint::new((0..lab.forcing.dim()).map(|_| rng.gen::<f64>()).collect())
}

// ---------------------------------------------------------------- constants

/// Identity checks on the alpha-derived constants (pure arithmetic).
pub(crate) fn constants_checks(params: &AlphaParams) -> Vec<CheckResult> {
    let a = params.alpha;
    let mut out = Vec::new();
    let gamma_id =
        (params.gamma.powf(0.5 * (a + 3.0)) * 2.0 / (a + 3.0) * params.lambda.powf(a + 1.0) - 1.0)
            .abs();
    out.push(CheckResult::new("gamma-identity", gamma_id, 1e-12, ""));
    let k1 = (params.gamma * params.lambda).powf(a + 1.0) / (a + 1.0);
    out.push(CheckResult::new(
        "kappa1-identity",
        ((params.kappa1 - k1) / k1).abs(),
        1e-12,
        "",
    ));
    let k0 = params.kappa1.powf(-(a + 3.0) / (2.0 * (a + 1.0)));
    out.push(CheckResult::new(
        "kappa0-identity",
        ((params.kappa0 - k0) / k0).abs(),
        1e-12,
        "",
    ));
    let b = -(3.0 * a * a - 2.0 * a - 9.0) / (2.0 * (a + 3.0) * (a + 1.0));
    let b_ok = (params.b_alpha - b).abs()
        + if params.b_alpha < (3.0 - a) / (2.0 * (a + 1.0)) + 1e-15 && params.b_alpha <= 0.0 {
            0.0
        } else {
            1.0
        };
    out.push(CheckResult::new(
        "b-alpha-formula",
        b_ok,
        1e-14,
        format!("b = {b}"),
    ));
    out
}

/// The identity checks alone, for callers that have parameters but no lab.
pub fn constants_checks_public(params: &AlphaParams) -> Vec<CheckResult> {
    constants_checks(params)
}

pub fn check_constants(lab: &Lab) -> Vec<CheckResult> {
    let mut out = constants_checks(&lab.params);
    if lab.params.alpha == 3.0 {
        out.push(CheckResult::new(
            "lambda-elliptic-oracle",
            (lab.params.lambda - 1.1803406).abs(),
            1e-6,
            format!("Lambda = {:.10}", lab.params.lambda),
        ));
    }
    // re-integrate the amplitude-Lambda orbit over one nominal period
    let p = &lab.params;
    let mut rhs = |_t: f64, y: &[f64; 2]| [y[1], -p.odd_power(y[0])];
    let defect = match ode::integrate(
        &mut rhs,
        0.0,
        [p.lambda, 0.0],
        TAU,
        &ode::OdeOptions::with_tol(1e-12, 1e-14),
    ) {
        Ok(sol) => (sol.y[0] - p.lambda).abs().max(sol.y[1].abs()),
        Err(_) => f64::INFINITY,
    };
    out.push(CheckResult::new("period-reintegration", defect, 1e-8, ""));
    out
}

// ----------------------------------------------------------- special table

pub fn check_cs_table(lab: &Lab) -> Vec<CheckResult> {
    let p = &lab.params;
    let t = &lab.table;
    let level = p.lambda.powf(p.alpha + 1.0) / (p.alpha + 1.0);
    let mut worst_id: f64 = 0.0;
    for i in 0..10_000 {
        let tt = -2.0 * PI + 6.0 * PI * i as f64 / 10_000.0;
        let (c, s) = t.eval_cs(tt);
        worst_id = worst_id
            .max((0.5 * s * s + c.abs().powf(p.alpha + 1.0) / (p.alpha + 1.0) - level).abs());
    }
    let mut out = vec![CheckResult::new(
        "cs-energy-identity",
        worst_id,
        1e-9 * p.lambda.powf(p.alpha + 1.0),
        "10^4-point grid",
    )];

    let mut worst_sym: f64 = 0.0;
    for i in 0..1000 {
        let tt = -5.0 + 11.0 * i as f64 / 1000.0;
        let (c, s) = t.eval_cs(tt);
        let (cm, sm) = t.eval_cs(-tt);
        let (cp, sp) = t.eval_cs(tt + PI);
        worst_sym = worst_sym
            .max((cm - c).abs())
            .max((sm + s).abs())
            .max((cp + c).abs())
            .max((sp + s).abs());
    }
    out.push(CheckResult::new("cs-symmetry", worst_sym, 1e-10, ""));

    let mean_c = quad::integrate(|x| t.eval_cs(x).0, 0.0, TAU, 160) / TAU;
    let mean_s = quad::integrate(|x| t.eval_cs(x).1, 0.0, TAU, 160) / TAU;
    let mean_c1 = quad::integrate(|x| t.eval_c1(x), 0.0, TAU, 160) / TAU;
    out.push(CheckResult::new(
        "cs-zero-mean",
        mean_c.abs().max(mean_s.abs()).max(mean_c1.abs()),
        1e-10,
        "",
    ));
    out.push(CheckResult::new(
        "c1-at-zero",
        t.eval_c1(0.0).abs(),
        1e-14,
        "",
    ));

    let h = 1e-4;
    let mut worst_d: f64 = 0.0;
    for i in 0..50 {
        let tt = 0.1 + 6.0 * i as f64 / 50.0;
        let fd = (t.eval_c1(tt + h) - t.eval_c1(tt - h)) / (2.0 * h);
        worst_d = worst_d.max((fd - t.eval_cs(tt).0).abs());
    }
    out.push(CheckResult::new(
        "c1-derivative",
        worst_d,
        1e-7,
        "central h = 1e-4",
    ));
    out
}

// ------------------------------------------------------------- symplectic

pub fn check_eta_symplectic(lab: &Lab) -> CheckResult {
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let th = TAU * i as f64 / 20.0;
        for j in 0..20 {
            let r = 10.0_f64.powf(3.0 * j as f64 / 19.0);
            let h_th = 1e-5;
            let h_r = 1e-5 * r;
            let f = |th: f64, r: f64| lab.from_action_angle(th, r).unwrap();
            let (xp, vp) = f(th + h_th, r);
            let (xm, vm) = f(th - h_th, r);
            let (xr, vr) = f(th, r + h_r);
            let (xl, vl) = f(th, r - h_r);
            let det = (xp - xm) / (2.0 * h_th) * ((vr - vl) / (2.0 * h_r))
                - (xr - xl) / (2.0 * h_r) * ((vp - vm) / (2.0 * h_th));
            worst = worst.max((det - 1.0).abs());
        }
    }
    CheckResult::new(
        "eta-symplectic",
        worst,
        1e-6,
        "20x20 grid, central differences",
    )
}

/// Admissible random sample for the canonical transformation.
fn sample_t_point(lab: &Lab, rng: &mut ChaCha8Rng) -> (TorusPoint, f64, f64, f64) {
    let theta = random_theta(lab, rng);
    let phi = 40.0 * rng.gen::<f64>();
    let i = lab.thresholds.i_star_star.max(1.0) * 10.0_f64.powf(1.0 + 4.0 * rng.gen::<f64>());
    let tau = TAU * rng.gen::<f64>();
    (theta, phi, i, tau)
}

pub fn check_t_symplectic_and_sandwich(lab: &Lab) -> Vec<CheckResult> {
    let kernel = lab.kernel_with(1e-15);
    let mut rng = rng(2);
    let mut worst_det: f64 = 0.0;
    let mut sandwich_viol = 0usize;
    let mut worst_equiv: f64 = 0.0;
    let mut worst_round: f64 = 0.0;
    for _ in 0..30 {
        let (theta, phi, i, tau) = sample_t_point(lab, &mut rng);
        let h_phi = 1e-5 * phi.abs().max(1.0);
        let h_i = 1e-5 * i;
        let f = |phi: f64, i: f64| {
            let ts = kernel.t_forward(&theta, phi, i, tau).unwrap();
            (ts.varphi, ts.cal_i)
        };
        let (ap, bp) = f(phi + h_phi, i);
        let (am, bm) = f(phi - h_phi, i);
        let (ar, br) = f(phi, i + h_i);
        let (al, bl) = f(phi, i - h_i);
        let det = (ap - am) / (2.0 * h_phi) * ((br - bl) / (2.0 * h_i))
            - (ar - al) / (2.0 * h_i) * ((bp - bm) / (2.0 * h_phi));
        worst_det = worst_det.max((det - 1.0).abs());

        let ts = kernel.t_forward(&theta, phi, i, tau).unwrap();
        if !(0.5 * i <= ts.cal_i && ts.cal_i <= 2.0 * i) {
            sandwich_viol += 1;
        }
        let ts2 = kernel.t_forward(&theta, phi, i, tau + TAU).unwrap();
        worst_equiv = worst_equiv
            .max((ts.cal_i - ts2.cal_i).abs() / i)
            .max((ts.varphi - ts2.varphi).abs() / phi.abs().max(1.0));
        let back = kernel.t_inverse(&theta, ts.varphi, ts.cal_i, tau).unwrap();
        worst_round = worst_round
            .max((back.i - i).abs() / i)
            .max((back.phi - phi).abs() / phi.abs().max(1.0));
    }
    vec![
        CheckResult::new("t-symplectic", worst_det, 1e-6, "30 random points"),
        CheckResult::new("t-sandwich", sandwich_viol as f64, 0.0, "J in [I/2, 2I]"),
        CheckResult::new("t-equivariance", worst_equiv, 1e-12, "tau vs tau + 2pi"),
        CheckResult::new("t-round-trip", worst_round, 1e-10, ""),
    ]
}

pub fn check_phi_symplectic(lab: &Lab) -> CheckResult {
    let mut rng = rng(3);
    let mut worst: f64 = 0.0;
    let rtol = 1e-12;
    for _ in 0..30 {
        let theta = random_theta(lab, &mut rng);
        let varphi = 10.0 * rng.gen::<f64>();
        let j0 = lab.thresholds.cal_i_top.max(1e3) * 10.0_f64.powf(3.0 * rng.gen::<f64>());
        let j0 = j0.min(1e6);
        let phi_map = |varphi: f64, cal_i: f64| {
            let end = lab
                .poincare_phi(&theta, SuccessorPoint { varphi, cal_i }, rtol)
                .unwrap();
            (end.varphi, end.cal_i)
        };
        let det_at = |h_scale: f64| {
            let h_p = h_scale * varphi.abs().max(1.0);
            let h_j = h_scale * j0;
            let (ap, bp) = phi_map(varphi + h_p, j0);
            let (am, bm) = phi_map(varphi - h_p, j0);
            let (ar, br) = phi_map(varphi, j0 + h_j);
            let (al, bl) = phi_map(varphi, j0 - h_j);
            (ap - am) / (2.0 * h_p) * ((br - bl) / (2.0 * h_j))
                - (ar - al) / (2.0 * h_j) * ((bp - bm) / (2.0 * h_p))
        };
        // two mesh sizes + Richardson
        let d1 = det_at(1e-4);
        let d2 = det_at(5e-5);
        let det = (4.0 * d2 - d1) / 3.0;
        worst = worst.max((det - 1.0).abs());
    }
    CheckResult::new(
        "phi-symplectic",
        worst,
        1e-5,
        "30 points, Richardson differences",
    )
}

// -------------------------------------------------------- implicit solver

pub fn check_solve_h(lab: &Lab) -> Vec<CheckResult> {
    let kernel = lab.kernel();
    let p = &lab.params;
    let mut rng = rng(4);
    let mut worst_resid: f64 = 0.0;
    // per-decade bracket constants over I in [1e3, 1e7]
    let lo = lab.thresholds.i_star.max(1e3);
    let mut alpha0 = [f64::INFINITY; 5];
    let mut beta0 = [0.0_f64; 5];
    for _ in 0..1000 {
        let theta = random_theta(lab, &mut rng);
        let phi = 60.0 * rng.gen::<f64>();
        let tau = TAU * rng.gen::<f64>();
        let d = (rng.gen::<f64>() * 4.9999) as usize;
        let i = lo * 10.0_f64.powf(d as f64 + rng.gen::<f64>());
        let pc = kernel.p(&theta, phi, 0) * lab.table.eval_c(tau);
        let solved = kernel.solve_h(pc, i).unwrap();
        let resid = (p.kappa1 * p.pow_alpha1(solved.t_pow) - p.gamma * solved.t_pow * pc - i).abs();
        worst_resid = worst_resid.max(resid / i);
        let ratio = solved.h * i.powf(-p.exp.r_of_energy);
        alpha0[d] = alpha0[d].min(ratio);
        beta0[d] = beta0[d].max(ratio);
    }
    let spread = |v: &[f64]| {
        let max = v.iter().cloned().fold(f64::MIN, f64::max);
        let min = v.iter().cloned().fold(f64::MAX, f64::min);
        (max - min) / (0.5 * (max + min))
    };
    vec![
        CheckResult::new(
            "solve-h-residual",
            worst_resid,
            1e-10,
            "1000 random samples",
        ),
        CheckResult::new(
            "h-bracket-stability",
            spread(&alpha0).max(spread(&beta0)),
            0.05,
            format!(
                "alpha0 = {:.6}, beta0 = {:.6}",
                alpha0.iter().cloned().fold(f64::MAX, f64::min),
                beta0.iter().cloned().fold(f64::MIN, f64::max)
            ),
        ),
    ]
}

// ------------------------------------------------------- remainder scaling

/// Sup of `|R|` over a 32x32 `(phi, tau)` grid at each decade, fitted in
/// log-log coordinates.
pub fn check_remainder_scaling(lab: &Lab) -> Vec<CheckResult> {
    if lab.forcing.is_zero() {
        return vec![
            CheckResult::skipped("remainder-r-slope", "zero forcing: R vanishes identically"),
            CheckResult::skipped(
                "remainder-r1-slope",
                "zero forcing: R1 vanishes identically",
            ),
        ];
    }
    let kernel = lab.kernel_with(1e-15);
    let target = lab.params.exp.remainder;
    let mut rng = rng(5);
    let theta = random_theta(lab, &mut rng);
    let sup_r = |i: f64| -> f64 {
        let mut sup: f64 = 0.0;
        for jp in 0..32 {
            let phi = 40.0 * jp as f64 / 32.0;
            for jt in 0..32 {
                let tau = TAU * jt as f64 / 32.0;
                let (r, _, _) = kernel.remainder_r(&theta, phi, i, tau).unwrap();
                sup = sup.max(r.abs());
            }
        }
        sup
    };
    let sup_r1 = |j: f64| -> f64 {
        let mut sup: f64 = 0.0;
        for jp in 0..32 {
            let varphi = 40.0 * jp as f64 / 32.0;
            for jt in 0..32 {
                let tau = TAU * jt as f64 / 32.0;
                let (r1, _, _) = kernel.remainder_r1(&theta, varphi, j, tau).unwrap();
                sup = sup.max(r1.abs());
            }
        }
        sup
    };
    let decades: Vec<f64> = (3..=7).map(|d| 10.0_f64.powi(d)).collect();
    // the remainder is extracted by cancellation against kappa0 I^p, so
    // decades where it sinks below the f64 extraction floor carry no signal
    let noise_floor =
        |i: f64| 3200.0 * f64::EPSILON * lab.params.kappa0 * i.powf(lab.params.exp.r_of_energy);
    let pts_r: Vec<(f64, f64)> = decades
        .iter()
        .map(|&i| (i, sup_r(i)))
        .filter(|&(i, s)| s > noise_floor(i))
        .collect();
    let pts_r1: Vec<(f64, f64)> = decades.iter().map(|&j| (j, sup_r1(j))).collect();
    let fit_r = if pts_r.len() >= 3 {
        fit_log_log(&pts_r)
    } else {
        None
    };
    let fit_r1 = fit_log_log(&pts_r1);
    let mut out = Vec::new();
    match fit_r {
        // two-sided at alpha = 3; for larger alpha the leading coefficient
        // of the remainder carries the factor (5 - alpha) and the decay can
        // be genuinely faster than the lemma's exponent, so only the upper
        // bound is asserted there
        Some(f) if lab.params.alpha == 3.0 => out.push(CheckResult::new(
            "remainder-r-slope",
            (f.slope - target).abs(),
            0.1,
            format!(
                "slope {:.4} vs {:.4}, stderr {:.1e}",
                f.slope, target, f.slope_stderr
            ),
        )),
        Some(f) => out.push(CheckResult::new(
            "remainder-r-slope",
            f.slope - (target + 0.1),
            0.0,
            format!(
                "slope {:.4}, at most {:.4} (one-sided above alpha 3)",
                f.slope, target
            ),
        )),
        None => out.push(CheckResult::skipped(
            "remainder-r-slope",
            "remainder below the f64 extraction floor on most decades",
        )),
    }
    // For alpha > 3 the explicit correction term of the transformed
    // Hamiltonian carries the exponent (2-alpha)/(alpha+1) from the
    // expansion, while the subtracted term uses the quoted b_alpha; the
    // difference (equal only at alpha = 3) remains inside R1 and sets its
    // true decay rate.
    let a = lab.params.alpha;
    let r1_target = if a == 3.0 {
        target
    } else {
        (2.0 - a) / (a + 1.0)
    };
    match fit_r1 {
        // one-sided: the transformed remainder may decay faster
        Some(f) => out.push(CheckResult::new(
            "remainder-r1-slope",
            f.slope - r1_target,
            0.15,
            format!("slope {:.4} vs upper {:.4}", f.slope, r1_target),
        )),
        None => out.push(CheckResult::skipped(
            "remainder-r1-slope",
            "degenerate sup sequence",
        )),
    }
    if lab.params.alpha == 3.0 {
        // at alpha = 3 the correction term must dominate the remainder at
        // large momentum
        let j = 1e6;
        let mut worst_ratio: f64 = 0.0;
        let mut any = false;
        for jp in 0..16 {
            let varphi = 40.0 * jp as f64 / 16.0 + 0.03;
            for jt in 0..16 {
                let tau = TAU * jt as f64 / 16.0 + 0.05;
                let (r1, _, _) = kernel.remainder_r1(&theta, varphi, j, tau).unwrap();
                let f1 = lab.params.f1_coef() * kernel.p(&theta, varphi, 1);
                let term = f1 * lab.table.eval_c1(tau) * j.powf(lab.params.b_alpha);
                if term.abs() > 1e-8 {
                    any = true;
                    worst_ratio = worst_ratio.max(r1.abs() / term.abs());
                }
            }
        }
        if any {
            out.push(CheckResult::new(
                "remainder-r1-dominated",
                worst_ratio,
                1.0,
                "R1 below the explicit correction term at J = 1e6",
            ));
        }
    }
    out
}

// ------------------------------------------------------ adiabatic scaling

/// Sweep the successor map over momentum decades: per decade, the max over
/// 64 random `(varphi0, Theta)` of the one-step gap, of its in-revolution
/// total variation, and the realized corridor ratios.
pub struct GapSweep {
    /// `(J0, sup |J1 - J0|)` per decade.
    pub endpoint: Vec<(f64, f64)>,
    /// `(J0, sup TV(J))` per decade; the total variation tracks the
    /// `J^b_alpha` rate without the full-revolution cancellation that makes
    /// the endpoint gap decay faster.
    pub variation: Vec<(f64, f64)>,
    pub bound_excess: f64,
    /// `sup_tau |J'| * 2 pi` against the same bound (the rate form of the
    /// adiabatic lemma).
    pub rate_excess: f64,
    pub sandwich_bad: usize,
    pub tight_ratio_bad: usize,
}

pub fn gap_sweep(lab: &Lab, decades: std::ops::RangeInclusive<i32>, samples: usize) -> GapSweep {
    let b = lab.params.b_alpha;
    let c = lab.thresholds.gap_constant;
    let mut rng = rng(6);
    let mut sweep = GapSweep {
        endpoint: Vec::new(),
        variation: Vec::new(),
        bound_excess: 0.0,
        rate_excess: 0.0,
        sandwich_bad: 0,
        tight_ratio_bad: 0,
    };
    for d in decades {
        let j0 = 10.0_f64.powi(d);
        if j0 <= lab.thresholds.cal_i_top {
            continue;
        }
        let mut sup_gap: f64 = 0.0;
        let mut sup_tv: f64 = 0.0;
        for _ in 0..samples {
            let theta = random_theta(lab, &mut rng);
            let varphi = TAU * rng.gen::<f64>();
            let diag = lab
                .poincare_phi_diag(&theta, SuccessorPoint { varphi, cal_i: j0 }, 1e-12)
                .unwrap();
            let gap = (diag.end.cal_i - j0).abs();
            sup_gap = sup_gap.max(gap);
            sup_tv = sup_tv.max(diag.tv);
            if c > 0.0 {
                sweep.bound_excess = sweep.bound_excess.max(gap / (c * j0.powf(b)));
                // pointwise rate bound: |J'| <= C J0^b / (2 pi)
                sweep.rate_excess = sweep
                    .rate_excess
                    .max(diag.max_rate * crate::special::TAU / (c * j0.powf(b)));
            }
            if diag.min_ratio < 0.25 || diag.max_ratio > 4.0 {
                sweep.sandwich_bad += 1;
            }
            if j0 >= 1e4 && (diag.min_ratio < 0.9 || diag.max_ratio > 1.1) {
                sweep.tight_ratio_bad += 1;
            }
        }
        sweep.endpoint.push((j0, sup_gap));
        sweep.variation.push((j0, sup_tv));
    }
    sweep
}

pub fn check_adiabatic_gap(lab: &Lab) -> Vec<CheckResult> {
    if lab.forcing.is_zero() {
        return vec![CheckResult::skipped(
            "gap-slope",
            "zero forcing: all gaps vanish",
        )];
    }
    let b = lab.params.b_alpha;
    let sweep = gap_sweep(lab, 3..=7, 64);
    let mut out = Vec::new();
    match fit_log_log(&sweep.variation) {
        Some(f) => out.push(CheckResult::new(
            "gap-tv-slope",
            (f.slope - b).abs(),
            0.1,
            format!(
                "in-revolution variation slope {:.4} vs b_alpha {:.4}",
                f.slope, b
            ),
        )),
        None => out.push(CheckResult::skipped(
            "gap-tv-slope",
            "not enough admissible decades",
        )),
    }
    match fit_log_log(&sweep.endpoint) {
        // one-sided: the endpoint gap cancels over the full revolution and
        // decays strictly faster than the rate bound
        Some(f) => out.push(CheckResult::new(
            "gap-endpoint-slope",
            f.slope - (b + 0.1),
            0.0,
            format!(
                "endpoint slope {:.4}, at least as steep as b_alpha {:.4}",
                f.slope, b
            ),
        )),
        None => out.push(CheckResult::skipped(
            "gap-endpoint-slope",
            "not enough admissible decades",
        )),
    }
    out.push(CheckResult::new(
        "gap-bound",
        sweep.bound_excess,
        1.0,
        "every gap below C J0^b",
    ));
    out.push(CheckResult::new(
        "rate-bound",
        sweep.rate_excess,
        1.0,
        "pointwise 2 pi sup|J'| below C J0^b",
    ));
    out.push(CheckResult::new(
        "phi-sandwich",
        sweep.sandwich_bad as f64,
        0.0,
        "1/4..4 corridor on every revolution",
    ));
    out.push(CheckResult::new(
        "phi-sandwich-tight",
        sweep.tight_ratio_bad as f64,
        0.0,
        "[0.9, 1.1] corridor for J0 >= 1e4",
    ));
    out
}

/// The reason the transformation is needed: along the untransformed flow
/// `sup |I'|` does not decay at alpha = 3, along the transformed flow
/// `sup |J'|` decays like `J^(b-?)`; both slopes are measured.
pub fn check_rate_contrast(lab: &Lab) -> Vec<CheckResult> {
    if lab.forcing.is_zero() {
        return vec![CheckResult::skipped("rate-contrast", "zero forcing")];
    }
    if lab.params.alpha != 3.0 {
        return vec![CheckResult::skipped(
            "rate-contrast",
            "specific to alpha = 3",
        )];
    }
    let mut rng = rng(7);
    let mut pts_i = Vec::new();
    let mut pts_j = Vec::new();
    for d in 3..=7 {
        let level = 10.0_f64.powi(d);
        if level <= lab.thresholds.cal_i_top {
            continue;
        }
        let mut sup_i: f64 = 0.0;
        let mut sup_j: f64 = 0.0;
        for _ in 0..16 {
            let theta = random_theta(lab, &mut rng);
            let phi0 = TAU * rng.gen::<f64>();
            sup_i = sup_i.max(lab.te_flow_max_rate(&theta, phi0, level, 1e-11).unwrap());
            let diag = lab
                .poincare_phi_diag(
                    &theta,
                    SuccessorPoint {
                        varphi: phi0,
                        cal_i: level,
                    },
                    1e-11,
                )
                .unwrap();
            sup_j = sup_j.max(diag.max_rate);
        }
        pts_i.push((level, sup_i));
        pts_j.push((level, sup_j));
    }
    let mut out = Vec::new();
    match (fit_log_log(&pts_i), fit_log_log(&pts_j)) {
        (Some(fi), Some(fj)) => {
            out.push(CheckResult::new(
                "contrast-i-rate-flat",
                fi.slope.abs(),
                0.1,
                format!("sup|I'| slope {:.4}", fi.slope),
            ));
            out.push(CheckResult::new(
                "contrast-j-rate-decays",
                (fj.slope - lab.params.b_alpha).abs(),
                0.1,
                format!("sup|J'| slope {:.4} vs {:.2}", fj.slope, lab.params.b_alpha),
            ));
        }
        _ => out.push(CheckResult::skipped(
            "rate-contrast",
            "degenerate rate sequence",
        )),
    }
    out
}

// ------------------------------------------------------------ cross route

pub fn check_cross_route(lab: &Lab, samples: usize) -> Vec<CheckResult> {
    let mut rng = rng(8);
    let mut worst_v: f64 = 0.0;
    let mut worst_t: f64 = 0.0;
    let mut entry_bad = 0usize;
    let kernel = lab.kernel();
    for _ in 0..samples {
        let theta = random_theta(lab, &mut rng);
        let v0 = lab.thresholds.v_star * (2.0 + 2.0 * rng.gen::<f64>());
        let t0 = 20.0 * rng.gen::<f64>() - 10.0;
        let (v1, t1) = lab.psi_transformed(&theta, v0, t0, 1e-11).unwrap();
        let ev = lab.psi_direct(&theta, v0, t0).unwrap();
        worst_v = worst_v.max(((v1 - ev.v1) / ev.v1).abs());
        worst_t = worst_t.max(((t1 - ev.t1) / ev.t1.abs().max(1.0)).abs());
        let entry = kernel
            .t_forward(&theta, t0, 0.5 * v0 * v0, HALF_PI)
            .unwrap();
        if entry.cal_i < 0.25 * v0 * v0 {
            entry_bad += 1;
        }
    }
    vec![
        CheckResult::new(
            "psi-cross-route",
            worst_v.max(worst_t),
            1e-6,
            format!(
                "{samples} starts in [4 v*, 2 v*]; v defect {worst_v:.2e}, t defect {worst_t:.2e}"
            ),
        ),
        CheckResult::new("psi-entry-bound", entry_bad as f64, 0.0, "J0 >= v0^2/4"),
    ]
}

// -------------------------------------------------- measure preservation

pub fn check_g_determinant(lab: &Lab) -> CheckResult {
    let mut rng = rng(9);
    let rtol = 1e-11;
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let theta = random_theta(lab, &mut rng);
        let j0 = lab.thresholds.cal_i_top.max(1e3) * 10.0_f64.powf(2.0 * rng.gen::<f64>());
        let h_s = 1e-3;
        let h_j = 1e-4 * j0;
        let fg = |s: f64, j: f64| {
            let th = theta.add(&lab.forcing.iota(s));
            lab.torus_f_g(&th, j, rtol).unwrap()
        };
        let (fp, gp) = fg(h_s, j0);
        let (fm, gm) = fg(-h_s, j0);
        let (fr, gr) = fg(0.0, j0 + h_j);
        let (fl, gl) = fg(0.0, j0 - h_j);
        let dwf = (fp - fm) / (2.0 * h_s);
        let dwg = (gp - gm) / (2.0 * h_s);
        let djf = (fr - fl) / (2.0 * h_j);
        let djg = (gr - gl) / (2.0 * h_j);
        let det = (1.0 + dwf) * (1.0 + djg) - djf * dwg;
        worst = worst.max((det - 1.0).abs());
    }
    CheckResult::new(
        "g-det-identity",
        worst,
        1e-4,
        "(1 + dF/dw)(1 + dG/dJ) - dF/dJ dG/dw = 1 at 30 points",
    )
}

/// At least 10^4 cylinder-map applications with zero violations of the
/// one-step certificate and of the revolution corridor.
pub fn check_w_certificate(lab: &Lab) -> Result<CheckResult> {
    let floor = lab.thresholds.cal_i_top;
    let cfg = EnsembleConfig {
        theta_samples: 5,
        orbits_per_theta: 20,
        n_max: 100,
        cal_i0: (floor * 3.0, floor * 3.0 + 1e5),
        varphi0: (0.0, TAU),
        seed: 0xCE27,
        policy: IteratePolicy::default(),
    };
    let res = lab.ensemble_run(&cfg)?;
    let steps: usize = res.orbits.iter().map(|o| o.n_completed).sum();
    Ok(CheckResult::new(
        "w-certificate",
        (res.gap_violations + res.sandwich_violations + res.error_count) as f64,
        0.0,
        format!("{steps} map applications"),
    ))
}

// ------------------------------------------------------------- conjugacy

/// Flow the action-angle system directly and compare with the image of the
/// time-energy flow under the chart change, pointwise over one revolution.
pub fn check_te_conjugacy(lab: &Lab) -> Result<CheckResult> {
    let kernel = lab.kernel();
    let mut rng = rng(10);
    let theta = random_theta(lab, &mut rng);
    let t0 = 0.2;
    let theta0_angle = 0.4;
    let i0_target = (2.0 * lab.thresholds.i_star).max(50.0);
    // choose r0 so that H(theta0, r0; t0) = i0_target
    let solved = kernel.solve_h(
        kernel.p(&theta, t0, 0) * lab.table.eval_c(theta0_angle),
        i0_target,
    )?;
    let r0 = solved.h;

    let mut worst: f64 = 0.0;
    let taus: Vec<f64> = (1..=16)
        .map(|k| theta0_angle + TAU * k as f64 / 16.0)
        .collect();
    let opts = ode::OdeOptions::with_tol(1e-12, 1e-13);
    let mut te_state = [t0, i0_target];
    let mut tau_prev = theta0_angle;
    let mut aa_state = [theta0_angle, r0];
    let mut t_prev = t0;
    for &tau in &taus {
        // advance the time-energy flow to this angle
        let mut te_rhs = |tau: f64, y: &[f64; 2]| {
            let d = kernel.te_field(&theta, y[0], y[1], tau).unwrap();
            [d.0, d.1]
        };
        te_state = ode::integrate(&mut te_rhs, tau_prev, te_state, tau, &opts)?.y;
        tau_prev = tau;
        let (t_here, i_here) = (te_state[0], te_state[1]);
        // advance the action-angle flow to the corresponding time
        let mut aa_rhs = |t: f64, y: &[f64; 2]| {
            let d = kernel.aa_field(&theta, y[0], y[1], t);
            [d.0, d.1]
        };
        aa_state = ode::integrate(&mut aa_rhs, t_prev, aa_state, t_here, &opts)?.y;
        t_prev = t_here;
        let angle_defect = (aa_state[0] - tau).abs();
        let energy_defect =
            (kernel.aa_hamiltonian(&theta, aa_state[0], aa_state[1], t_here) - i_here).abs()
                / i_here;
        worst = worst.max(angle_defect).max(energy_defect);
    }
    Ok(CheckResult::new(
        "te-conjugacy",
        worst,
        1e-7,
        "direct angle flow vs time-energy flow over one revolution",
    ))
}

/// The exact transformed field against central differences of the
/// transformed Hamiltonian value.
pub fn check_h1_consistency(lab: &Lab) -> CheckResult {
    let kernel = lab.kernel_with(1e-15);
    let mut rng = rng(11);
    let mut worst: f64 = 0.0;
    // Richardson-extrapolated central differences: the Hamiltonian value
    // carries ~ulp(J^(3/4)) of representation noise, so plain narrow
    // differences cannot reach the tolerance.
    let richardson = |f: &dyn Fn(f64) -> f64, x: f64, h: f64| {
        let d1 = (f(x + h) - f(x - h)) / (2.0 * h);
        let d2 = (f(x + 0.5 * h) - f(x - 0.5 * h)) / h;
        (4.0 * d2 - d1) / 3.0
    };
    for _ in 0..25 {
        let theta = random_theta(lab, &mut rng);
        let varphi = 20.0 * rng.gen::<f64>();
        // moderate momenta: far above this window the field components
        // shrink below what differences of f64 Hamiltonian values resolve
        let j =
            lab.thresholds.cal_i_star_star.max(1.0) * 10.0_f64.powf(0.6 + 1.4 * rng.gen::<f64>());
        let tau = TAU * rng.gen::<f64>();
        let ev = kernel.h1_eval(&theta, varphi, j, tau).unwrap();
        let fd_j = richardson(
            &|jj| kernel.h1_eval(&theta, varphi, jj, tau).unwrap().h1,
            j,
            1e-4 * j,
        );
        let fd_p = richardson(
            &|ph| kernel.h1_eval(&theta, ph, j, tau).unwrap().h1,
            varphi,
            2e-3,
        );
        let field_scale = (ev.dvarphi.powi(2) + ev.dcal_i.powi(2)).sqrt().max(1e-12);
        worst = worst.max((ev.dvarphi - fd_j).abs() / field_scale);
        worst = worst.max((ev.dcal_i + fd_p).abs() / field_scale);
    }
    CheckResult::new(
        "h1-fd-consistency",
        worst,
        1e-6,
        "conjugated field vs finite differences of H1",
    )
}

pub fn check_r_star_sweep(lab: &Lab) -> CheckResult {
    let kernel = lab.kernel();
    let mut min_slope = f64::INFINITY;
    let r = lab.thresholds.r_star;
    for i in 0..40 {
        let angle = TAU * i as f64 / 40.0;
        for j in 0..40 {
            let t = 37.0 * j as f64 / 40.0;
            let th = lab.forcing.iota(0.13 * j as f64);
            min_slope = min_slope.min(kernel.aa_dr_hamiltonian(&th, angle, r, t));
        }
    }
    CheckResult::new(
        "r-star-sweep",
        1.0 - min_slope,
        1e-9,
        format!("min dH/dr = {min_slope:.12} at r_star"),
    )
}

pub fn check_threshold_monotonicity(lab: &Lab) -> Result<CheckResult> {
    if lab.forcing.is_zero() {
        return Ok(CheckResult::skipped(
            "threshold-monotonicity",
            "zero forcing",
        ));
    }
    let bigger = Thresholds::compute(
        &lab.params,
        &lab.table,
        &lab.forcing.scaled(2.0),
        lab.thresholds.safety,
        lab.config.newton_tol,
    )?;
    let t = &lab.thresholds;
    let ok = bigger.r_star >= t.r_star
        && bigger.i_star >= t.i_star
        && bigger.i_star_star >= t.i_star_star
        && bigger.cal_i_star_star >= t.cal_i_star_star
        && bigger.cal_i_top >= t.cal_i_top
        && bigger.v_star <= t.v_star;
    Ok(CheckResult::new(
        "threshold-monotonicity",
        if ok { 0.0 } else { 1.0 },
        0.0,
        "doubling the forcing never shrinks a threshold",
    ))
}

pub fn check_forcing(lab: &Lab) -> Vec<CheckResult> {
    let f = &lab.forcing;
    let mut rng = rng(12);
    let tol = 1e-12 * (1.0 + f.coeff_l1());
    let mut worst_shift: f64 = 0.0;
    let mut worst_fd: f64 = 0.0;
    let mut bound_excess: f64 = 0.0;
    for _ in 0..50 {
        let theta = random_theta(lab, &mut rng);
        let t = 30.0 * rng.gen::<f64>() - 15.0;
        let s = 30.0 * rng.gen::<f64>() - 15.0;
        let shifted = theta.add(&f.iota(s));
        let lhs = f.eval_p(&theta, t + s, 0).unwrap();
        let rhs = f.eval_p(&shifted, t, 0).unwrap();
        worst_shift = worst_shift.max((lhs - rhs).abs());
        for order in 1..=4u32 {
            let h = 1e-4;
            let fd = (f.eval_p(&theta, t + h, order - 1).unwrap()
                - f.eval_p(&theta, t - h, order - 1).unwrap())
                / (2.0 * h);
            let an = f.eval_p(&theta, t, order).unwrap();
            let scale = f.derivative_sup_bound(order).max(1e-12);
            worst_fd = worst_fd.max((fd - an).abs() / scale);
        }
        for order in 0..=4u32 {
            let v = f.eval_p(&theta, t, order).unwrap().abs();
            let bound = f.derivative_sup_bound(order);
            if bound > 0.0 {
                bound_excess = bound_excess.max(v / bound - 1.0);
            }
        }
    }
    vec![
        CheckResult::new("forcing-shift-identity", worst_shift, tol, ""),
        CheckResult::new(
            "forcing-derivative-fd",
            worst_fd,
            1e-6,
            "orders 1..4, h = 1e-4",
        ),
        CheckResult::new("forcing-bounded", bound_excess.max(0.0), 1e-12, ""),
    ]
}

/// Run the whole battery.
pub fn run_all(lab: &Lab) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    out.extend(check_constants(lab));
    out.extend(check_cs_table(lab));
    out.extend(check_forcing(lab));
    out.push(check_eta_symplectic(lab));
    out.push(check_r_star_sweep(lab));
    out.extend(check_solve_h(lab));
    out.extend(check_t_symplectic_and_sandwich(lab));
    out.extend(check_remainder_scaling(lab));
    out.push(check_te_conjugacy(lab)?);
    out.push(check_h1_consistency(lab));
    out.push(check_phi_symplectic(lab));
    out.extend(check_adiabatic_gap(lab));
    out.extend(check_rate_contrast(lab));
    if lab.forcing.is_zero() {
        out.push(CheckResult::skipped(
            "psi-cross-route",
            "zero forcing: routes trivially agree",
        ));
    } else {
        out.extend(check_cross_route(lab, 40));
    }
    out.push(check_g_determinant(lab));
    out.push(check_w_certificate(lab)?);
    out.push(check_threshold_monotonicity(lab)?);
    Ok(out)
}
