//! The coordinate chain of the laboratory.
//!
//! Three changes of variables take the forced oscillator to a form whose
//! momentum is an adiabatic invariant:
//!
//! * action-angle coordinates `(theta, r)` of the unperturbed system,
//! * time-energy coordinates `(phi, I; tau)` where the old time becomes the
//!   position, the Hamiltonian becomes the momentum and the angle becomes
//!   the independent variable (the Hamiltonian is then only implicitly
//!   defined), and
//! * a canonical transformation `(phi, I) -> (varphi, J)` generated by
//!   `Psi(phi, J; tau) = -J^correction f(phi) c1(tau)` which lowers the
//!   power of the momentum in the oscillating term.
//!
//! All vector fields are computed by exact implicit differentiation and by
//! exact pushforward through the generating-function relations; the
//! truncated expansions appear only as the remainder diagnostics `R`, `R1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forcing::{TorusForcing, TorusPoint};
use crate::special::{AlphaParams, CsTable, TAU};

/// Lifted action-angle state; `theta mod 2 pi` is the geometric angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionAngleState {
    pub theta: f64,
    pub r: f64,
    pub t: f64,
}

/// Time-energy state: position `phi` (the old time), momentum `i` (the old
/// Hamiltonian), independent variable `tau` (the old angle).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeEnergyState {
    pub phi: f64,
    pub i: f64,
    pub tau: f64,
}

/// State after the canonical transformation; `cal_i` is the adiabatic
/// momentum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformedState {
    pub varphi: f64,
    pub cal_i: f64,
    pub tau: f64,
}

/// Every threshold of the construction, produced constructively from
/// sufficient closed-form bounds (times a safety factor) plus measured
/// sup-constants validated by randomized sweeps.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Thresholds {
    /// Monotonicity threshold: `d/dr H(theta, r; t) >= 1` for `r >= r_star`.
    pub r_star: f64,
    /// The implicit Hamiltonian is well-defined for `I >= i_star`.
    pub i_star: f64,
    /// The remainder bound `|R| <= c0 I^remainder` is certified from here up.
    pub i_c0: f64,
    /// Measured sup-constant of the first remainder (value and first
    /// derivatives, scaled), inflated by 1.5 to dominate between samples.
    pub c0: f64,
    /// Domain floor of the forward canonical transformation.
    pub i_star_star: f64,
    /// The transformed chart contains every `cal_i >= cal_i_star`.
    pub cal_i_star: f64,
    /// Measured sup-constant of the transformed remainder, inflated by 1.5.
    pub c0_tilde: f64,
    /// One Poincare revolution stays in the 1/4..4 sandwich from here up.
    pub cal_i_star_star: f64,
    /// Domain floor of the successor map: `max(4 cal_i_star_star,
    /// (2 kappa1)^((alpha+3)/2))`.
    pub cal_i_top: f64,
    /// `-2 sqrt(cal_i_top)`: the successor map is defined for `v0 < v_star`.
    pub v_star: f64,
    /// One-step adiabatic gap constant: `|J_1 - J_0| <= gap_constant * J_0^b_alpha`.
    pub gap_constant: f64,
    /// Measured bracket constants: `alpha0 I^p <= H <= beta0 I^p`.
    pub alpha0: f64,
    pub beta0: f64,
    /// The crude closed-form C^4 bound from the quasi-periodicity lemma,
    /// reported for reference; the runtime domain is gated by the
    /// constructive bounds above, which the sweeps validate directly.
    pub lemma_c4_bound: f64,
    pub safety: f64,
}

/// Solution of the implicit Hamiltonian equation together with the pieces
/// needed for exact implicit differentiation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SolvedH {
    pub h: f64,
    /// `h^(2/(alpha+3))`.
    pub t_pow: f64,
    /// Derivative of the defining equation with respect to `H`; equals
    /// `d/dr H(tau, h; phi) >= 1` on the admissible domain.
    pub dfdh: f64,
}

/// Exact transformed vector field at one point, with the intermediate
/// quantities that the diagnostics reuse.
#[derive(Debug, Clone, Copy)]
pub(crate) struct H1Eval {
    pub dvarphi: f64,
    pub dcal_i: f64,
    /// Value of the transformed Hamiltonian `H1 = H + dPsi/dtau`.
    pub h1: f64,
}

/// Shared numeric context: everything the kernels need, without the
/// threshold bookkeeping (which is built *with* these kernels).
#[derive(Clone, Copy)]
pub(crate) struct Kernel<'a> {
    pub params: &'a AlphaParams,
    pub table: &'a CsTable,
    pub forcing: &'a TorusForcing,
    /// Lower bracket for the implicit Hamiltonian solves.
    pub r_floor: f64,
    pub newton_tol: f64,
}

impl<'a> Kernel<'a> {
    pub fn new(
        params: &'a AlphaParams,
        table: &'a CsTable,
        forcing: &'a TorusForcing,
        r_floor: f64,
        newton_tol: f64,
    ) -> Self {
        Kernel {
            params,
            table,
            forcing,
            r_floor,
            newton_tol,
        }
    }

    #[inline]
    pub fn p(&self, theta: &TorusPoint, t: f64, order: u32) -> f64 {
        self.forcing.eval(theta, t, order)
    }

    /// `H(theta, r; t) = kappa1 r^(2(a+1)/(a+3)) - gamma r^(2/(a+3)) p(t) c(theta)`.
    pub fn aa_hamiltonian(&self, theta: &TorusPoint, angle: f64, r: f64, t: f64) -> f64 {
        let p = self.params;
        let t_pow = r.powf(p.exp.x_of_r);
        p.kappa1 * p.pow_alpha1(t_pow)
            - p.gamma * t_pow * self.p(theta, t, 0) * self.table.eval_c(angle)
    }

    /// `d/dr` of the action-angle Hamiltonian.
    pub fn aa_dr_hamiltonian(&self, theta: &TorusPoint, angle: f64, r: f64, t: f64) -> f64 {
        let p = self.params;
        let t_pow = r.powf(p.exp.x_of_r);
        let pc = self.p(theta, t, 0) * self.table.eval_c(angle);
        p.exp.x_of_r * (p.kappa1 * (p.alpha + 1.0) * p.pow_alpha1(t_pow) - p.gamma * pc * t_pow) / r
    }

    /// Right-hand side of the action-angle system.
    pub fn aa_field(&self, theta: &TorusPoint, angle: f64, r: f64, t: f64) -> (f64, f64) {
        let p = self.params;
        let (c, s) = self.table.eval_cs(angle);
        let t_pow = r.powf(p.exp.x_of_r);
        let pt = self.p(theta, t, 0);
        let dtheta = p.exp.x_of_r
            * (p.kappa1 * (p.alpha + 1.0) * p.pow_alpha1(t_pow) - p.gamma * pt * c * t_pow)
            / r;
        let dr = p.gamma * t_pow * pt * s;
        (dtheta, dr)
    }

    /// Solve `kappa1 H^(2(a+1)/(a+3)) - gamma H^(2/(a+3)) pc = i` for the
    /// branch `H >= r_floor`, where `pc = p(phi) c(tau)` is supplied by the
    /// caller. Safeguarded Newton inside a guaranteed bracket; for `pc = 0`
    /// the closed form `kappa0 i^((a+3)/(2(a+1)))` is exact.
    pub fn solve_h(&self, pc: f64, i: f64) -> Result<SolvedH> {
        let p = self.params;
        let u = p.exp.x_of_r;
        let eval = |h: f64| -> (f64, f64, f64) {
            let t_pow = h.powf(u);
            let ta1 = p.pow_alpha1(t_pow);
            let f = p.kappa1 * ta1 - p.gamma * pc * t_pow;
            let df = u * (p.kappa1 * (p.alpha + 1.0) * ta1 - p.gamma * pc * t_pow) / h;
            (f, df, t_pow)
        };
        let leading = p.kappa0 * i.powf(p.exp.r_of_energy);
        if pc == 0.0 {
            let t_pow = leading.powf(u);
            let (_, df, _) = eval(leading);
            return Ok(SolvedH {
                h: leading,
                t_pow,
                dfdh: df,
            });
        }

        let mut lo = self.r_floor;
        let (flo, _, _) = eval(lo);
        if flo > i {
            return Err(Error::Domain(format!(
                "implicit Hamiltonian: I = {i:.6e} below the admissible level {flo:.6e}"
            )));
        }
        // first-order guess; its defect is exactly the remainder R
        let mut h = (leading + self.params.f_coef() * pc * i.powf(p.exp.correction))
            .max(lo * (1.0 + 1e-12));
        let mut hi = h.max(lo * 2.0);
        let mut expand = 0;
        while eval(hi).0 < i {
            hi *= 2.0;
            expand += 1;
            if expand > 200 {
                return Err(Error::Numeric(
                    "implicit Hamiltonian bracket expansion failed".into(),
                ));
            }
        }
        if h >= hi {
            h = 0.5 * (lo + hi);
        }
        // requested tolerances below the evaluation noise of F (a few ulp
        // per power) are floored so the iteration cannot stall
        let tol =
            self.newton_tol.max((p.alpha + 8.0) * f64::EPSILON) * i.abs().max(f64::MIN_POSITIVE);
        for _ in 0..60 {
            let (f, df, t_pow) = eval(h);
            let defect = f - i;
            if defect.abs() <= tol {
                return Ok(SolvedH { h, t_pow, dfdh: df });
            }
            if defect > 0.0 {
                hi = h;
            } else {
                lo = h;
            }
            let step = defect / df;
            let next = h - step;
            if step.abs() <= 64.0 * f64::EPSILON * h {
                // at the floating-point floor; the residual cannot improve
                let h_final = if next > lo && next < hi { next } else { h };
                let (_, df, t_pow) = eval(h_final);
                return Ok(SolvedH {
                    h: h_final,
                    t_pow,
                    dfdh: df,
                });
            }
            h = if next > lo && next < hi {
                next
            } else {
                0.5 * (lo + hi)
            };
        }
        Err(Error::Numeric(format!(
            "implicit Hamiltonian Newton stalled at I = {i:.6e}"
        )))
    }

    /// Exact time-energy vector field `(phi', I') = (dH/dI, -dH/dphi)` by
    /// implicit differentiation of the defining equation.
    pub fn te_field(&self, theta: &TorusPoint, phi: f64, i: f64, tau: f64) -> Result<(f64, f64)> {
        let c_tau = self.table.eval_c(tau);
        let p0 = self.p(theta, phi, 0);
        let solved = self.solve_h(p0 * c_tau, i)?;
        let p1 = self.p(theta, phi, 1);
        Ok(self.te_field_from(&solved, p1 * c_tau))
    }

    #[inline]
    pub fn te_field_from(&self, solved: &SolvedH, pdot_c: f64) -> (f64, f64) {
        let dphi = 1.0 / solved.dfdh;
        let di = -self.params.gamma * solved.t_pow * pdot_c / solved.dfdh;
        (dphi, di)
    }

    /// First remainder `R = H - kappa0 I^p - f(phi) c(tau) I^correction`
    /// together with its exact first derivatives.
    pub fn remainder_r(
        &self,
        theta: &TorusPoint,
        phi: f64,
        i: f64,
        tau: f64,
    ) -> Result<(f64, f64, f64)> {
        if self.forcing.is_zero() {
            // the implicit solve is the closed form and R vanishes identically
            return Ok((0.0, 0.0, 0.0));
        }
        let p = self.params;
        let fc = p.f_coef();
        let c_tau = self.table.eval_c(tau);
        let p0 = self.p(theta, phi, 0);
        let p1 = self.p(theta, phi, 1);
        let solved = self.solve_h(p0 * c_tau, i)?;
        let i_p = i.powf(p.exp.r_of_energy);
        let i_eps = i.powf(p.exp.correction);
        let r = solved.h - p.kappa0 * i_p - fc * p0 * c_tau * i_eps;
        // dH/dphi = gamma T p' c / dF/dH
        let dh_dphi = p.gamma * solved.t_pow * p1 * c_tau / solved.dfdh;
        let dr_dphi = dh_dphi - fc * p1 * c_tau * i_eps;
        let dr_di = 1.0 / solved.dfdh
            - p.kappa0 * p.exp.r_of_energy * i_p / i
            - p.exp.correction * fc * p0 * c_tau * i_eps / i;
        Ok((r, dr_dphi, dr_di))
    }

    /// Forward canonical transformation `(phi, I; tau) -> (varphi, J)`:
    /// solve `J - J^correction f'(phi) c1(tau) = I` for `J` in `[I/2, 2I]`,
    /// then shift the position by `dPsi/dJ`.
    pub fn t_forward(
        &self,
        theta: &TorusPoint,
        phi: f64,
        i: f64,
        tau: f64,
    ) -> Result<TransformedState> {
        let p = self.params;
        let eps = p.exp.correction;
        let fc = p.f_coef();
        let c1_tau = self.table.eval_c1(tau);
        let fdot = fc * self.p(theta, phi, 1);
        let fc1 = fdot * c1_tau;

        let cal_i = if fc1 == 0.0 || eps == 0.0 {
            // linear in J; the first-order guess is exact
            i + fc1 * if eps == 0.0 { 1.0 } else { i.powf(eps) }
        } else {
            let mut lo = 0.5 * i;
            let mut hi = 2.0 * i;
            let g = |j: f64| j - j.powf(eps) * fc1 - i;
            if !(g(lo) <= 0.0 && g(hi) >= 0.0) {
                return Err(Error::Domain(format!(
                    "canonical transformation bracket failed at I = {i:.6e}; below the domain floor"
                )));
            }
            let mut j = i + i.powf(eps) * fc1;
            if j <= lo || j >= hi {
                j = i;
            }
            let tol = self.newton_tol * i.max(f64::MIN_POSITIVE);
            let mut ok = false;
            for _ in 0..60 {
                let j_eps = j.powf(eps);
                let defect = j - j_eps * fc1 - i;
                if defect.abs() <= tol {
                    ok = true;
                    break;
                }
                if defect > 0.0 {
                    hi = j;
                } else {
                    lo = j;
                }
                let dg = 1.0 - eps * j_eps / j * fc1;
                let next = if dg > 1e-3 { j - defect / dg } else { f64::NAN };
                j = if next.is_finite() && next > lo && next < hi {
                    next
                } else {
                    0.5 * (lo + hi)
                };
            }
            if !ok {
                return Err(Error::Numeric(format!(
                    "canonical transformation Newton stalled at I = {i:.6e}"
                )));
            }
            j
        };
        if !(cal_i > 0.0) {
            return Err(Error::Numeric(format!(
                "canonical transformation produced J = {cal_i:.6e}"
            )));
        }
        let f_phi = fc * self.p(theta, phi, 0);
        let varphi = phi - eps * cal_i.powf(eps - 1.0) * f_phi * c1_tau;
        Ok(TransformedState { varphi, cal_i, tau })
    }

    /// The angle shift `q` of the inverse transformation as the fixed point
    /// of `q = correction * J^(q_power) c1(tau) f(varphi + q)`.
    pub fn solve_q(
        &self,
        theta: &TorusPoint,
        varphi: f64,
        cal_i: f64,
        tau: f64,
        tol: f64,
    ) -> Result<f64> {
        let p = self.params;
        let eps = p.exp.correction;
        if eps == 0.0 {
            return Ok(0.0);
        }
        let fc = p.f_coef();
        let c1_tau = self.table.eval_c1(tau);
        let coef = eps * cal_i.powf(p.exp.q_power) * c1_tau * fc;
        if coef == 0.0 {
            return Ok(0.0);
        }
        let contraction = coef.abs() * self.forcing.derivative_sup_bound(1);
        if contraction >= 0.95 {
            return Err(Error::Domain(format!(
                "angle-shift iteration not contracting (factor {contraction:.3}) at J = {cal_i:.6e}"
            )));
        }
        let mut q = 0.0;
        for _ in 0..200 {
            let next = coef * self.p(theta, varphi + q, 0);
            if (next - q).abs() <= tol {
                return Ok(next);
            }
            q = next;
        }
        Err(Error::Numeric(
            "angle-shift fixed point did not converge".into(),
        ))
    }

    /// Inverse canonical transformation `(varphi, J; tau) -> (phi, I)`.
    pub fn t_inverse(
        &self,
        theta: &TorusPoint,
        varphi: f64,
        cal_i: f64,
        tau: f64,
    ) -> Result<TimeEnergyState> {
        let p = self.params;
        let q = self.solve_q(theta, varphi, cal_i, tau, self.newton_tol)?;
        let phi = varphi + q;
        let c1_tau = self.table.eval_c1(tau);
        let fdot = p.f_coef() * self.p(theta, phi, 1);
        let i_eps = if p.exp.correction == 0.0 {
            1.0
        } else {
            cal_i.powf(p.exp.correction)
        };
        let i = cal_i - i_eps * fdot * c1_tau;
        Ok(TimeEnergyState { phi, i, tau })
    }

    /// The exact transformed vector field, obtained by pulling the state
    /// back through the inverse transformation, evaluating the exact
    /// time-energy field there, and pushing forward through the full
    /// tau-dependent derivative of the generating-function relations.
    pub fn h1_eval(&self, theta: &TorusPoint, varphi: f64, cal_i: f64, tau: f64) -> Result<H1Eval> {
        let p = self.params;
        let eps = p.exp.correction;
        let fc = p.f_coef();
        let (c_tau, _) = self.table.eval_cs(tau);
        let c1_tau = self.table.eval_c1(tau);

        // inverse transformation (inlined so the forcing evaluations are shared)
        let i_eps;
        let i_em1;
        if eps == 0.0 {
            i_eps = 1.0;
            i_em1 = 1.0 / cal_i;
        } else {
            i_eps = cal_i.powf(eps);
            i_em1 = i_eps / cal_i;
        }
        let phi = if eps == 0.0 {
            varphi
        } else {
            varphi + self.solve_q(theta, varphi, cal_i, tau, self.newton_tol)?
        };
        let p0 = self.p(theta, phi, 0);
        let p1 = self.p(theta, phi, 1);
        let p2 = self.p(theta, phi, 2);
        let f_phi = fc * p0;
        let fdot = fc * p1;
        let fddot = fc * p2;
        let i = cal_i - i_eps * fdot * c1_tau;

        let solved = self.solve_h(p0 * c_tau, i)?;
        let (dphi, di) = self.te_field_from(&solved, p1 * c_tau);

        // second partials of Psi(phi, J; tau) = -J^eps f(phi) c1(tau)
        let a = -eps * i_em1 * fdot * c1_tau;
        let b = -i_eps * fddot * c1_tau;
        let d = -eps * (eps - 1.0) * i_em1 / cal_i * f_phi * c1_tau;
        let psi_tau_phi = -i_eps * fdot * c_tau;
        let psi_tau_j = -eps * i_em1 * f_phi * c_tau;

        let one_a = 1.0 + a;
        if one_a <= 0.05 {
            return Err(Error::InvariantBreach(format!(
                "generating-function Jacobian degenerate (1+A = {one_a:.3e}) at J = {cal_i:.6e}"
            )));
        }
        let dcal_i = (di - b * dphi - psi_tau_phi) / one_a;
        let dvarphi = one_a * dphi + d * dcal_i + psi_tau_j;
        let h1 = solved.h - i_eps * f_phi * c_tau;
        Ok(H1Eval {
            dvarphi,
            dcal_i,
            h1,
        })
    }

    /// Transformed remainder `R1 = H1 - kappa0 J^p - f1(varphi) c1(tau) J^b`
    /// and its exact first derivatives.
    pub fn remainder_r1(
        &self,
        theta: &TorusPoint,
        varphi: f64,
        cal_i: f64,
        tau: f64,
    ) -> Result<(f64, f64, f64)> {
        if self.forcing.is_zero() {
            return Ok((0.0, 0.0, 0.0));
        }
        let p = self.params;
        let ev = self.h1_eval(theta, varphi, cal_i, tau)?;
        let c1_tau = self.table.eval_c1(tau);
        let f1 = p.f1_coef() * self.p(theta, varphi, 1);
        let f1dot = p.f1_coef() * self.p(theta, varphi, 2);
        let j_p = cal_i.powf(p.exp.r_of_energy);
        let j_b = cal_i.powf(p.b_alpha);
        let r1 = ev.h1 - p.kappa0 * j_p - f1 * c1_tau * j_b;
        // dH1/dvarphi = -J', dH1/dJ = varphi'
        let dr1_dvarphi = -ev.dcal_i - f1dot * c1_tau * j_b;
        let dr1_dj = ev.dvarphi
            - p.kappa0 * p.exp.r_of_energy * j_p / cal_i
            - p.b_alpha * f1 * c1_tau * j_b / cal_i;
        Ok((r1, dr1_dvarphi, dr1_dj))
    }
}

/// Smallest `r` with
/// `2(a+1)/(a+3) kappa1 r^((a-1)/(a+3)) - 2/(a+3) gamma r^(-(a+1)/(a+3)) |p| |c| >= 1`,
/// which makes the angle strictly increasing along every orbit above it.
pub fn find_r_star(params: &AlphaParams, table: &CsTable, forcing: &TorusForcing) -> f64 {
    let a_coef = params.exp.energy_of_r * params.kappa1;
    let e1 = (params.alpha - 1.0) / (params.alpha + 3.0);
    let b_coef = params.exp.x_of_r * params.gamma * forcing.derivative_sup_bound(0) * table.c_inf;
    let e2 = params.exp.v_of_r;
    if b_coef == 0.0 {
        return a_coef.powf(-1.0 / e1);
    }
    let g = |r: f64| a_coef * r.powf(e1) - b_coef * r.powf(-e2) - 1.0;
    let mut hi = 1.0;
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = hi / 2.0;
    while g(lo) > 0.0 {
        lo /= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Deterministic torus lattice used by the measurement sweeps.
fn theta_lattice(dim: usize, count: usize) -> Vec<TorusPoint> {
    const IRR: [f64; 8] = [
        std::f64::consts::SQRT_2,
        1.7320508075688772,
        2.23606797749979,
        2.6457513110645907,
        3.3166247903554,
        3.605551275463989,
        4.123105625617661,
        4.358898943540674,
    ];
    (0..count)
        .map(|j| {
            TorusPoint::new(
                (0..dim)
                    .map(|i| ((j + 1) as f64 * IRR[i % IRR.len()]).fract())
                    .collect(),
            )
        })
        .collect()
}

impl Thresholds {
    /// Build the full threshold set for one `(alpha, forcing)` pair.
    ///
    /// `safety >= 1` scales every sufficient bound. The measured constants
    /// `c0`, `c0_tilde` are sups over a deterministic lattice, inflated by
    /// 1.5 and then re-checked on independent random samples; a violation
    /// of the re-check is a hard error.
    pub fn compute(
        params: &AlphaParams,
        table: &CsTable,
        forcing: &TorusForcing,
        safety: f64,
        newton_tol: f64,
    ) -> Result<Thresholds> {
        if !(safety >= 1.0) {
            return Err(Error::Config(format!(
                "safety factor must be >= 1, got {safety}"
            )));
        }
        let p = params;
        let nonzero = !forcing.is_zero();
        let pn0 = forcing.derivative_sup_bound(0);
        let pn1 = forcing.derivative_sup_bound(1);
        let pn2 = forcing.derivative_sup_bound(2);
        let fc = p.f_coef();
        let fdot_inf = fc * pn1;
        let f1dot_inf = p.f1_coef().abs() * pn2;

        let r_star = find_r_star(params, table, forcing);
        let sup_h_at_r_star =
            p.energy_of_action(r_star) + p.gamma * r_star.powf(p.exp.x_of_r) * pn0 * table.c_inf;
        let i_star = safety * sup_h_at_r_star;
        let i_c0 = if nonzero { i_star.max(1.0) } else { i_star };

        // measurement needs residuals well below the remainder signal
        let kernel = Kernel::new(params, table, forcing, r_star, newton_tol.min(1e-15));

        // --- measure C0, alpha0, beta0 on the first-remainder sweep ---
        let eps = p.exp.correction;
        let rho = p.exp.remainder;
        let thetas = theta_lattice(forcing.dim(), 6);
        let sweep_hi: f64 = 1.0e7_f64.max(100.0 * i_c0);
        let n_i = 16;
        let mut c0_raw: f64 = 0.0;
        let mut alpha0 = f64::INFINITY;
        let mut beta0: f64 = 0.0;
        for ii in 0..n_i {
            let i_val = i_c0 * (sweep_hi / i_c0).powf(ii as f64 / (n_i - 1) as f64);
            for theta in &thetas {
                for jp in 0..12 {
                    let phi = 40.0 * jp as f64 / 12.0;
                    for jt in 0..12 {
                        let tau = TAU * jt as f64 / 12.0;
                        let (r, r_phi, r_i) = kernel.remainder_r(theta, phi, i_val, tau)?;
                        let h = kernel
                            .solve_h(kernel.p(theta, phi, 0) * table.eval_c(tau), i_val)?
                            .h;
                        let ratio = h * i_val.powf(-p.exp.r_of_energy);
                        alpha0 = alpha0.min(ratio);
                        beta0 = beta0.max(ratio);
                        let scaled = (r.abs() + r_phi.abs() + i_val * r_i.abs()) * i_val.powf(-rho);
                        c0_raw = c0_raw.max(scaled);
                    }
                }
            }
        }
        let c0 = 1.5 * c0_raw;

        // --- forward-transformation domain ---
        // i_star_star must leave room on both sides: the forward image
        // stays above cal_i_star = i_star_star/2, and the inverse image of
        // anything above cal_i_star must stay above the implicit-solve
        // floor, which costs at most |f'| |c1| of momentum.
        let shear = fdot_inf * table.c1_inf;
        let nf = shear.max(if nonzero { 1.0 } else { 0.0 });
        let i_star_star = if nonzero {
            safety
                * i_c0
                    .max(2.0 * nf.powf(1.0 / (1.0 - eps)))
                    .max(2.0 * (i_star + nf))
        } else {
            safety * i_c0.max(2.0 * i_star)
        };
        let cal_i_star = 0.5 * i_star_star;

        // --- measure C0~ on the transformed-remainder sweep ---
        let mut c0t_raw: f64 = 0.0;
        let base = cal_i_star.max(f64::MIN_POSITIVE);
        for ii in 0..n_i {
            let j_val = base * (sweep_hi / base).powf(ii as f64 / (n_i - 1) as f64);
            for theta in &thetas {
                for jp in 0..12 {
                    let varphi = 40.0 * jp as f64 / 12.0;
                    for jt in 0..12 {
                        let tau = TAU * jt as f64 / 12.0;
                        let (r1, r1_phi, r1_j) = kernel.remainder_r1(theta, varphi, j_val, tau)?;
                        let scaled =
                            (r1.abs() + r1_phi.abs() + j_val * r1_j.abs()) * j_val.powf(-rho);
                        c0t_raw = c0t_raw.max(scaled);
                    }
                }
            }
        }
        let c0_tilde = 1.5 * c0t_raw;

        // --- one-revolution sandwich bound (quantitative form of the
        //     existence lemma: the change of J^(1-b) over 2 pi is at most
        //     2 pi C_hat, which must fit inside the factor-2 corridor) ---
        let b = p.b_alpha;
        let hat_c = (1.0 - b) * (f1dot_inf * table.c1_inf + c0_tilde);
        let lemma_sandwich = if hat_c > 0.0 {
            (TAU * hat_c / (1.0 - (b - 1.0).exp2())).powf(1.0 / (1.0 - b))
        } else {
            0.0
        };
        let floor = if nonzero { 1.0 } else { 0.0 };
        let cal_i_star_star = safety
            * (4.0 * cal_i_star)
                .max(lemma_sandwich)
                .max(2.0 * i_star_star)
                .max(floor);

        let cal_i_top = (4.0 * cal_i_star_star).max((2.0 * p.kappa1).powf(0.5 * (p.alpha + 3.0)));
        let v_star = -2.0 * cal_i_top.sqrt();
        let gap_constant = TAU * (f1dot_inf * table.c1_inf + c0_tilde) * (-b).exp2().powf(2.0);

        let lemma_c4_bound = TAU
            * forcing
                .omega()
                .iter()
                .cloned()
                .fold(0.0_f64, f64::max)
                .powi(4)
                .max(1.0)
            * fc
            * forcing.c4_norm_bound()
            * table.c_inf;

        let thresholds = Thresholds {
            r_star,
            i_star,
            i_c0,
            c0,
            i_star_star,
            cal_i_star,
            c0_tilde,
            cal_i_star_star,
            cal_i_top,
            v_star,
            gap_constant,
            alpha0,
            beta0,
            lemma_c4_bound,
            safety,
        };

        // --- randomized validation of the measured constants ---
        let mut rng = ChaCha8Rng::seed_from_u64(0x11735EED);
        for _ in 0..300 {
            let theta = TorusPoint::new((0..forcing.dim()).map(|_| rng.gen::<f64>()).collect());
            let phi = 60.0 * rng.gen::<f64>();
            let tau = TAU * rng.gen::<f64>();
            let i_val = i_c0 * (sweep_hi / i_c0).powf(rng.gen::<f64>());
            let (r, r_phi, r_i) = kernel.remainder_r(&theta, phi, i_val, tau)?;
            let lhs = r.abs() + r_phi.abs() + i_val * r_i.abs();
            if lhs > c0 * i_val.powf(rho) + 1e-13 {
                return Err(Error::Numeric(format!(
                    "remainder validation sweep failed: {lhs:.6e} > C0 I^rho at I = {i_val:.3e}"
                )));
            }
            let j_val = base.max(1e-6) * (sweep_hi / base.max(1e-6)).powf(rng.gen::<f64>());
            let (r1, r1_phi, r1_j) = kernel.remainder_r1(&theta, phi, j_val, tau)?;
            let lhs1 = r1.abs() + r1_phi.abs() + j_val * r1_j.abs();
            if lhs1 > c0_tilde * j_val.powf(rho) + 1e-13 {
                return Err(Error::Numeric(format!(
                    "transformed-remainder validation sweep failed: {lhs1:.6e} at J = {j_val:.3e}"
                )));
            }
        }

        Ok(thresholds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::ForcingTerm;
    use crate::special::{derive_params, HALF_PI};

    fn setup(alpha: f64) -> (AlphaParams, CsTable) {
        let p = derive_params(alpha, 1e-12).unwrap();
        let t = CsTable::build(&p, 1e-12).unwrap();
        (p, t)
    }

    fn two_term() -> TorusForcing {
        TorusForcing::new(
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
        .unwrap()
    }

    #[test]
    fn r_star_closed_form_without_forcing() {
        let (p, t) = setup(3.0);
        let f = TorusForcing::zero(2);
        let r = find_r_star(&p, &t, &f);
        // frozen: ((a+3)/(2(a+1) kappa1))^((a+3)/(a-1))
        assert!((r - 0.64700572989720414).abs() < 1e-12, "r_star = {r}");
    }

    #[test]
    fn r_star_is_monotone_in_the_forcing() {
        let (p, t) = setup(3.0);
        let f = two_term();
        let r1 = find_r_star(&p, &t, &f);
        let r2 = find_r_star(&p, &t, &f.scaled(2.0));
        let r0 = find_r_star(&p, &t, &TorusForcing::zero(2));
        assert!(r0 < r1 && r1 < r2, "{r0} {r1} {r2}");
        // at r_star the sufficient condition is tight
        let a_coef = p.exp.energy_of_r * p.kappa1;
        let e1 = (p.alpha - 1.0) / (p.alpha + 3.0);
        let b_coef = p.exp.x_of_r * p.gamma * f.derivative_sup_bound(0) * t.c_inf;
        let g = a_coef * r1.powf(e1) - b_coef * r1.powf(-p.exp.v_of_r) - 1.0;
        assert!(g.abs() < 1e-10, "slack {g}");
    }

    #[test]
    fn solve_h_closed_form_and_residuals() {
        let (p, t) = setup(3.0);
        let f = two_term();
        let k = Kernel::new(&p, &t, &f, 0.65, 1e-12);
        // pc = 0: closed form
        let s = k.solve_h(0.0, 123.0).unwrap();
        assert!((s.h - p.kappa0 * 123.0_f64.powf(p.exp.r_of_energy)).abs() < 1e-12 * s.h);
        // tau = pi/2 kills c exactly
        let theta = TorusPoint::new(vec![0.3, 0.8]);
        let pc = k.p(&theta, 1.0, 0) * t.eval_c(HALF_PI);
        assert_eq!(pc, 0.0);
        // random samples: residual below 1e-10 * I
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let i = 10.0_f64.powf(1.0 + 6.0 * rng.gen::<f64>());
            let phi = 50.0 * rng.gen::<f64>();
            let tau = TAU * rng.gen::<f64>();
            let pc = k.p(&theta, phi, 0) * t.eval_c(tau);
            let s = k.solve_h(pc, i).unwrap();
            let resid = p.kappa1 * p.pow_alpha1(s.t_pow) - p.gamma * s.t_pow * pc - i;
            assert!(resid.abs() < 1e-10 * i, "residual {resid:.3e} at I={i:.3e}");
            assert!(s.dfdh >= 1.0 - 1e-9, "monotonicity {df}", df = s.dfdh);
        }
    }

    #[test]
    fn te_field_matches_finite_differences_of_h() {
        let (p, t) = setup(3.0);
        let f = two_term();
        let k = Kernel::new(&p, &t, &f, 0.65, 1e-13);
        let theta = TorusPoint::new(vec![0.15, 0.52]);
        let h_of = |phi: f64, i: f64, tau: f64| {
            k.solve_h(k.p(&theta, phi, 0) * t.eval_c(tau), i).unwrap().h
        };
        for (phi, i, tau) in [(0.4, 200.0, 1.0), (3.0, 5e3, 2.6), (11.0, 2e5, 5.1)] {
            let (dphi, di) = k.te_field(&theta, phi, i, tau).unwrap();
            let hi = 1e-4 * i;
            let fd_i = (h_of(phi, i + hi, tau) - h_of(phi, i - hi, tau)) / (2.0 * hi);
            let hp = 1e-5;
            let fd_phi = (h_of(phi + hp, i, tau) - h_of(phi - hp, i, tau)) / (2.0 * hp);
            assert!(
                ((dphi - fd_i) / fd_i).abs() < 1e-6,
                "dH/dI mismatch {} vs {}",
                dphi,
                fd_i
            );
            let scale = di.abs().max(1e-12);
            assert!(
                ((di + fd_phi) / scale).abs() < 1e-5,
                "dH/dphi mismatch {di} vs {fd_phi}"
            );
        }
    }

    #[test]
    fn te_field_matches_the_expansion_up_to_remainder_derivatives() {
        // the exact field differs from the two-term display exactly by the
        // remainder derivatives, which obey the measured decay constant
        let (p, t) = setup(3.0);
        let f = two_term();
        let th = Thresholds::compute(&p, &t, &f, 2.0, 1e-12).unwrap();
        let k = Kernel::new(&p, &t, &f, th.r_star, 1e-15);
        let fc = p.f_coef();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let theta = TorusPoint::new(vec![rng.gen(), rng.gen()]);
            let phi = 40.0 * rng.gen::<f64>();
            let tau = TAU * rng.gen::<f64>();
            let i = 10.0_f64.powf(1.0 + 5.0 * rng.gen::<f64>()) * th.i_c0;
            let (dphi, di) = k.te_field(&theta, phi, i, tau).unwrap();
            let c_tau = t.eval_c(tau);
            let p0 = k.p(&theta, phi, 0);
            let p1 = k.p(&theta, phi, 1);
            let dphi_trunc = p.kappa0 * p.exp.r_of_energy * i.powf(p.exp.r_of_energy - 1.0)
                + p.exp.correction * fc * p0 * c_tau * i.powf(p.exp.correction - 1.0);
            let di_trunc = -fc * p1 * c_tau * i.powf(p.exp.correction);
            let budget = th.c0 * i.powf(p.exp.remainder) * (1.0 + 1e-9);
            assert!(
                (dphi - dphi_trunc).abs() <= budget / i,
                "dphi defect {:.3e} above dR/dI budget {:.3e} at I = {i:.3e}",
                (dphi - dphi_trunc).abs(),
                budget / i
            );
            assert!(
                (di - di_trunc).abs() <= budget,
                "dI defect {:.3e} above dR/dphi budget {budget:.3e} at I = {i:.3e}",
                (di - di_trunc).abs()
            );
        }
    }

    #[test]
    fn unforced_te_field_is_integrable() {
        let (p, t) = setup(4.0);
        let f = TorusForcing::zero(1);
        let k = Kernel::new(&p, &t, &f, 0.7, 1e-12);
        let theta = TorusPoint::zero(1);
        let i = 500.0;
        let (dphi, di) = k.te_field(&theta, 0.3, i, 1.7).unwrap();
        assert_eq!(di, 0.0);
        let expect =
            p.kappa0 * p.exp.r_of_energy * i.powf((1.0 - p.alpha) / (2.0 * (p.alpha + 1.0)));
        assert!(((dphi - expect) / expect).abs() < 1e-12);
    }

    #[test]
    fn remainder_vanishes_without_forcing_and_at_the_section() {
        let (p, t) = setup(3.0);
        let zero = TorusForcing::zero(2);
        let k0 = Kernel::new(&p, &t, &zero, 0.65, 1e-13);
        let th = TorusPoint::zero(2);
        let (r, _, _) = k0.remainder_r(&th, 1.0, 1e4, 0.9).unwrap();
        assert!(r.abs() < 1e-12, "unforced remainder {r:.3e}");

        let f = two_term();
        let k = Kernel::new(&p, &t, &f, 0.65, 1e-13);
        let theta = TorusPoint::new(vec![0.4, 0.9]);
        for i in [1e3, 1e5] {
            let (r, _, _) = k.remainder_r(&theta, 2.0, i, HALF_PI).unwrap();
            assert!(
                r.abs() < 1e-12 * i.powf(p.exp.r_of_energy),
                "section remainder {r:.3e}"
            );
        }
    }

    #[test]
    fn forward_transformation_alpha3_is_the_closed_form_shear() {
        let (p, t) = setup(3.0);
        let f = two_term();
        let k = Kernel::new(&p, &t, &f, 0.65, 1e-13);
        let theta = TorusPoint::new(vec![0.7, 0.2]);
        let (phi, i, tau) = (1.3, 4.0e3, 2.2);
        let ts = k.t_forward(&theta, phi, i, tau).unwrap();
        let shear = p.f_coef() * k.p(&theta, phi, 1) * t.eval_c1(tau);
        assert!((ts.cal_i - (i + shear)).abs() < 1e-12 * i);
        assert_eq!(ts.varphi, phi);
        // p = 0 gives the identity
        let zero = TorusForcing::zero(2);
        let k0 = Kernel::new(&p, &t, &zero, 0.65, 1e-13);
        let id = k0.t_forward(&TorusPoint::zero(2), phi, i, tau).unwrap();
        assert_eq!(id.cal_i, i);
        assert_eq!(id.varphi, phi);
    }

    #[test]
    fn q_vanishes_at_alpha3_and_without_forcing() {
        let (p3, t3) = setup(3.0);
        let f = two_term();
        let k3 = Kernel::new(&p3, &t3, &f, 0.65, 1e-13);
        let th = TorusPoint::new(vec![0.1, 0.6]);
        assert_eq!(k3.solve_q(&th, 0.4, 1e4, 1.1, 1e-13).unwrap(), 0.0);

        let (p5, t5) = setup(5.0);
        let zero = TorusForcing::zero(2);
        let k5z = Kernel::new(&p5, &t5, &zero, 0.6, 1e-13);
        assert_eq!(k5z.solve_q(&th, 0.4, 1e4, 1.1, 1e-13).unwrap(), 0.0);
    }

    #[test]
    fn q_satisfies_its_defining_equation_at_alpha5() {
        let (p, t) = setup(5.0);
        let f = two_term();
        let k = Kernel::new(&p, &t, &f, 0.6, 1e-13);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let theta = TorusPoint::new(vec![rng.gen(), rng.gen()]);
            let varphi = 30.0 * rng.gen::<f64>();
            let j = 10.0_f64.powf(2.0 + 5.0 * rng.gen::<f64>());
            let tau = TAU * rng.gen::<f64>();
            let q = k.solve_q(&theta, varphi, j, tau, 1e-14).unwrap();
            let rhs = p.exp.correction
                * j.powf(p.exp.q_power)
                * t.eval_c1(tau)
                * p.f_coef()
                * k.p(&theta, varphi + q, 0);
            assert!((q - rhs).abs() < 1e-12, "fixed-point residual {}", q - rhs);
        }
    }

    #[test]
    fn transformation_round_trip_and_sandwich() {
        for alpha in [3.0, 4.0, 5.0] {
            let (p, t) = setup(alpha);
            let f = two_term();
            let k = Kernel::new(&p, &t, &f, 0.7, 1e-13);
            let mut rng = ChaCha8Rng::seed_from_u64(23);
            for _ in 0..200 {
                let theta = TorusPoint::new(vec![rng.gen(), rng.gen()]);
                let phi = 40.0 * rng.gen::<f64>();
                let i = 10.0_f64.powf(2.0 + 5.0 * rng.gen::<f64>());
                let tau = TAU * rng.gen::<f64>();
                let fwd = k.t_forward(&theta, phi, i, tau).unwrap();
                assert!(0.5 * i <= fwd.cal_i && fwd.cal_i <= 2.0 * i, "sandwich");
                let back = k.t_inverse(&theta, fwd.varphi, fwd.cal_i, tau).unwrap();
                assert!(
                    (back.phi - phi).abs() < 1e-10 * phi.abs().max(1.0),
                    "phi round trip"
                );
                assert!((back.i - i).abs() < 1e-10 * i, "I round trip");
            }
        }
    }

    #[test]
    fn transformation_is_2pi_equivariant_in_tau() {
        let (p, t) = setup(5.0);
        let f = two_term();
        let k = Kernel::new(&p, &t, &f, 0.7, 1e-13);
        let theta = TorusPoint::new(vec![0.33, 0.77]);
        for (phi, i, tau) in [(0.4, 3e3, 0.7), (9.0, 8e4, 4.4)] {
            let a = k.t_forward(&theta, phi, i, tau).unwrap();
            let b = k.t_forward(&theta, phi, i, tau + TAU).unwrap();
            assert!((a.cal_i - b.cal_i).abs() <= 1e-12 * i);
            assert!((a.varphi - b.varphi).abs() <= 1e-12 * phi.abs().max(1.0));
        }
    }

    #[test]
    fn h1_field_reduces_to_the_unforced_rotation() {
        let (p, t) = setup(4.0);
        let f = TorusForcing::zero(3);
        let k = Kernel::new(&p, &t, &f, 0.7, 1e-12);
        let ev = k.h1_eval(&TorusPoint::zero(3), 1.0, 2.0e4, 2.0).unwrap();
        assert_eq!(ev.dcal_i, 0.0);
        let expect = p.kappa0
            * p.exp.r_of_energy
            * 2.0e4_f64.powf((1.0 - p.alpha) / (2.0 * (p.alpha + 1.0)));
        assert!(((ev.dvarphi - expect) / expect).abs() < 1e-12);
    }

    #[test]
    fn thresholds_unforced_alpha3() {
        let (p, t) = setup(3.0);
        let f = TorusForcing::zero(2);
        let th = Thresholds::compute(&p, &t, &f, 1.0, 1e-12).unwrap();
        // frozen (2 kappa1)^3, the intrinsic successor-domain floor
        let kappa_floor = 5.2163371111662610;
        assert_eq!(th.cal_i_top, (4.0 * th.cal_i_star_star).max(kappa_floor));
        assert!(th.cal_i_top >= kappa_floor - 1e-12);
        assert_eq!(th.v_star, -2.0 * th.cal_i_top.sqrt());
        assert!(th.v_star < 0.0);
        assert_eq!(th.c0_tilde, 0.0);
        assert_eq!(th.gap_constant, 0.0);
        // without forcing at safety 1 the chain stays small enough that the
        // reference orbit at v0 = -10 lies inside the domain
        assert!(-10.0 < th.v_star, "v_star = {}", th.v_star);
    }

    #[test]
    fn thresholds_are_monotone_under_forcing_scale() {
        let (p, t) = setup(3.0);
        let f = two_term();
        let a = Thresholds::compute(&p, &t, &f, 2.0, 1e-12).unwrap();
        let b = Thresholds::compute(&p, &t, &f.scaled(2.0), 2.0, 1e-12).unwrap();
        assert!(b.r_star >= a.r_star);
        assert!(b.i_star >= a.i_star);
        assert!(b.i_star_star >= a.i_star_star);
        assert!(b.cal_i_star_star >= a.cal_i_star_star);
        assert!(b.cal_i_top >= a.cal_i_top);
        assert!(b.v_star <= a.v_star);
        assert!(a.alpha0 > 0.0 && a.beta0 >= a.alpha0);
    }

    #[test]
    fn ordering_of_the_threshold_chain() {
        let (p, t) = setup(5.0);
        let f = two_term();
        let th = Thresholds::compute(&p, &t, &f, 2.0, 1e-12).unwrap();
        assert!(th.r_star > 0.0);
        assert!(th.i_star <= th.i_c0);
        assert!(th.i_c0 <= th.i_star_star);
        assert!(th.cal_i_star <= th.cal_i_star_star);
        assert!(2.0 * th.i_star_star <= th.cal_i_star_star + 1e-12);
        assert!(4.0 * th.cal_i_star_star <= th.cal_i_top + 1e-12);
    }
}
