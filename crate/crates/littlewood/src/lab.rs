//! The laboratory bundle: one `(alpha, forcing)` pair with its table and
//! thresholds, plus the public coordinate-transformation operations.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::forcing::{TorusForcing, TorusPoint};
use crate::ode::OdeOptions;
use crate::special::{derive_params, AlphaParams, CsTable, PI, TAU};
use crate::transforms::{ActionAngleState, Kernel, Thresholds, TimeEnergyState, TransformedState};

/// Construction-time knobs. The defaults match the documented tolerances
/// of the verification battery.
#[derive(Debug, Clone)]
pub struct LabConfig {
    pub alpha: f64,
    /// Multiplies every sufficient threshold bound.
    pub safety: f64,
    /// Build tolerance of the special-function table.
    pub table_tol: f64,
    pub integrator_rtol: f64,
    pub integrator_atol: f64,
    pub newton_tol: f64,
    /// Zero events are accepted once `|x| <= event_tol * max(1, |v|)`.
    pub event_tol: f64,
    /// Time cap for one direct successor step.
    pub horizon: f64,
    /// Optional directory for the binary table cache.
    pub cache_dir: Option<PathBuf>,
}

impl Default for LabConfig {
    fn default() -> Self {
        LabConfig {
            alpha: 3.0,
            safety: 2.0,
            table_tol: 1e-12,
            integrator_rtol: 1e-10,
            integrator_atol: 1e-12,
            newton_tol: 1e-12,
            event_tol: 1e-10,
            horizon: 1e4,
            cache_dir: None,
        }
    }
}

/// Immutable after construction; all operations take `&self` and may be
/// called concurrently.
#[derive(Debug)]
pub struct Lab {
    pub params: AlphaParams,
    pub table: CsTable,
    pub forcing: TorusForcing,
    pub thresholds: Thresholds,
    pub config: LabConfig,
}

impl Lab {
    /// Defaults: safety 2, table at 1e-12, integrator at 1e-10.
    pub fn new(alpha: f64, forcing: TorusForcing) -> Result<Lab> {
        Lab::with_config(
            forcing,
            LabConfig {
                alpha,
                ..LabConfig::default()
            },
        )
    }

    pub fn with_config(forcing: TorusForcing, config: LabConfig) -> Result<Lab> {
        let params = derive_params(config.alpha, config.table_tol)?;
        let table = match &config.cache_dir {
            Some(dir) => CsTable::load_or_build(dir, &params, config.table_tol)?,
            None => CsTable::build(&params, config.table_tol)?,
        };
        let thresholds =
            Thresholds::compute(&params, &table, &forcing, config.safety, config.newton_tol)?;
        Ok(Lab {
            params,
            table,
            forcing,
            thresholds,
            config,
        })
    }

    pub(crate) fn kernel(&self) -> Kernel<'_> {
        self.kernel_with(self.config.newton_tol)
    }

    /// Kernel with a custom solver tolerance; finite-difference checks use
    /// a machine-tight one so the solve noise stays below the differences.
    pub(crate) fn kernel_with(&self, newton_tol: f64) -> Kernel<'_> {
        Kernel::new(
            &self.params,
            &self.table,
            &self.forcing,
            self.thresholds.r_star,
            newton_tol,
        )
    }

    pub fn ode_opts(&self, rtol: f64) -> OdeOptions {
        OdeOptions {
            rtol,
            atol: self.config.integrator_atol.min(rtol),
            ..Default::default()
        }
    }

    // ----- action-angle chart -----

    /// Invert the action-angle map at `(x, v)`; the angle is located on the
    /// monotone half-turn selected by the sign of `v` (ties on the axes
    /// broken by the sign of the other coordinate).
    pub fn to_action_angle(&self, x: f64, v: f64, t: f64) -> Result<ActionAngleState> {
        let p = &self.params;
        let e = p.energy(x, v);
        if e <= 0.0 {
            return Err(Error::Domain(
                "the origin (x, v) = (0, 0) is excluded".into(),
            ));
        }
        let r = p.action_of_energy(e);
        let c_hat = x / (p.gamma * r.powf(p.exp.x_of_r));
        let s_hat = v / (p.gamma_v * r.powf(p.exp.v_of_r));
        let theta = if s_hat < 0.0 {
            self.table.invert_c_upper(c_hat)
        } else if s_hat > 0.0 {
            TAU - self.table.invert_c_upper(c_hat)
        } else if c_hat > 0.0 {
            0.0
        } else {
            PI
        };
        Ok(ActionAngleState { theta, r, t })
    }

    /// `(x, v) = (gamma r^a c(theta), gamma^((alpha+1)/2) r^b s(theta))`.
    pub fn from_action_angle(&self, theta: f64, r: f64) -> Result<(f64, f64)> {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("action must be positive, got {r}")));
        }
        let p = &self.params;
        let (c, s) = self.table.eval_cs(theta);
        Ok((
            p.gamma * r.powf(p.exp.x_of_r) * c,
            p.gamma_v * r.powf(p.exp.v_of_r) * s,
        ))
    }

    /// Action-angle Hamiltonian at phase `theta_phase`.
    pub fn hamiltonian_aa(&self, theta: &TorusPoint, angle: f64, r: f64, t: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("action must be positive, got {r}")));
        }
        Ok(self.kernel().aa_hamiltonian(theta, angle, r, t))
    }

    /// Right-hand side of the action-angle equations of motion.
    pub fn aa_vector_field(
        &self,
        theta: &TorusPoint,
        angle: f64,
        r: f64,
        t: f64,
    ) -> Result<(f64, f64)> {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("action must be positive, got {r}")));
        }
        Ok(self.kernel().aa_field(theta, angle, r, t))
    }

    // ----- time-energy chart -----

    /// The implicit Hamiltonian `H(phi, I; tau)`.
    pub fn solve_h(&self, theta: &TorusPoint, phi: f64, i: f64, tau: f64) -> Result<f64> {
        self.require_i(i)?;
        let k = self.kernel();
        let pc = k.p(theta, phi, 0) * self.table.eval_c(tau);
        Ok(k.solve_h(pc, i)?.h)
    }

    /// Exact `(phi', I')` by implicit differentiation.
    pub fn te_vector_field(
        &self,
        theta: &TorusPoint,
        phi: f64,
        i: f64,
        tau: f64,
    ) -> Result<(f64, f64)> {
        self.require_i(i)?;
        self.kernel().te_field(theta, phi, i, tau)
    }

    /// Remainder of the two-term expansion of `H`.
    pub fn remainder_r(&self, theta: &TorusPoint, phi: f64, i: f64, tau: f64) -> Result<f64> {
        if i < self.thresholds.i_c0 {
            return Err(Error::Domain(format!(
                "remainder bound certified for I >= {}, got {i}",
                self.thresholds.i_c0
            )));
        }
        // the remainder is the defect of the solver's own initial guess, so
        // it must be extracted at the machine floor
        Ok(self.kernel_with(1e-15).remainder_r(theta, phi, i, tau)?.0)
    }

    // ----- canonical transformation -----

    /// Forward transformation `(phi, I; tau) -> (varphi, J; tau)`.
    pub fn t_forward(
        &self,
        theta: &TorusPoint,
        phi: f64,
        i: f64,
        tau: f64,
    ) -> Result<TransformedState> {
        if i < self.thresholds.i_star_star {
            return Err(Error::Domain(format!(
                "transformation domain starts at I = {}, got {i}",
                self.thresholds.i_star_star
            )));
        }
        self.kernel().t_forward(theta, phi, i, tau)
    }

    /// Inverse transformation `(varphi, J; tau) -> (phi, I; tau)`.
    pub fn t_inverse(
        &self,
        theta: &TorusPoint,
        varphi: f64,
        cal_i: f64,
        tau: f64,
    ) -> Result<TimeEnergyState> {
        self.require_cal_i(cal_i, self.thresholds.cal_i_star_star)?;
        self.kernel().t_inverse(theta, varphi, cal_i, tau)
    }

    /// The angle shift of the inverse transformation.
    pub fn solve_q(
        &self,
        theta: &TorusPoint,
        varphi: f64,
        cal_i: f64,
        tau: f64,
        tol: f64,
    ) -> Result<f64> {
        self.require_cal_i(cal_i, self.thresholds.cal_i_star_star)?;
        self.kernel().solve_q(theta, varphi, cal_i, tau, tol)
    }

    /// Exact transformed vector field `(varphi', J')`.
    pub fn h1_vector_field(
        &self,
        theta: &TorusPoint,
        varphi: f64,
        cal_i: f64,
        tau: f64,
    ) -> Result<(f64, f64)> {
        self.require_cal_i(cal_i, self.thresholds.cal_i_star_star)?;
        let ev = self.kernel().h1_eval(theta, varphi, cal_i, tau)?;
        Ok((ev.dvarphi, ev.dcal_i))
    }

    /// Value of the transformed Hamiltonian `H1`.
    pub fn h1_value(&self, theta: &TorusPoint, varphi: f64, cal_i: f64, tau: f64) -> Result<f64> {
        self.require_cal_i(cal_i, self.thresholds.cal_i_star_star)?;
        Ok(self.kernel().h1_eval(theta, varphi, cal_i, tau)?.h1)
    }

    /// Remainder of the transformed expansion.
    pub fn remainder_r1(
        &self,
        theta: &TorusPoint,
        varphi: f64,
        cal_i: f64,
        tau: f64,
    ) -> Result<f64> {
        self.require_cal_i(cal_i, self.thresholds.cal_i_star)?;
        Ok(self
            .kernel_with(1e-15)
            .remainder_r1(theta, varphi, cal_i, tau)?
            .0)
    }

    fn require_i(&self, i: f64) -> Result<()> {
        if i < self.thresholds.i_star {
            return Err(Error::Domain(format!(
                "time-energy chart starts at I = {}, got {i}",
                self.thresholds.i_star
            )));
        }
        Ok(())
    }

    fn require_cal_i(&self, cal_i: f64, floor: f64) -> Result<()> {
        if cal_i < floor {
            return Err(Error::Domain(format!(
                "transformed chart starts at J = {floor}, got {cal_i}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::ForcingTerm;
    use crate::special::HALF_PI;

    fn two_term_lab(alpha: f64) -> Lab {
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

    #[test]
    fn action_angle_at_the_section() {
        // x = 0, v < 0 lands on theta = pi/2 and I = v^2/2 = kappa1 r^(2(a+1)/(a+3))
        let lab = two_term_lab(3.0);
        let st = lab.to_action_angle(0.0, -10.0, 0.0).unwrap();
        assert!((st.theta - HALF_PI).abs() < 1e-10, "theta = {}", st.theta);
        // frozen: (50/kappa1)^(3/4)
        assert!((st.r - 20.924668549149649).abs() < 1e-9, "r = {}", st.r);
        let e = lab.params.energy_of_action(st.r);
        assert!((e - 50.0).abs() < 1e-10);
    }

    #[test]
    fn action_angle_round_trip() {
        let lab = two_term_lab(4.0);
        for (x, v) in [
            (1.0, 0.0),
            (0.3, -2.0),
            (-1.4, 0.7),
            (-0.2, -0.1),
            (2.0, 5.0),
        ] {
            let st = lab.to_action_angle(x, v, 1.0).unwrap();
            let (xb, vb) = lab.from_action_angle(st.theta, st.r).unwrap();
            let scale = lab.params.energy(x, v).sqrt();
            assert!((xb - x).abs() < 1e-9 * scale.max(1.0), "x: {x} -> {xb}");
            assert!((vb - v).abs() < 1e-9 * scale.max(1.0), "v: {v} -> {vb}");
        }
        assert!(lab.to_action_angle(0.0, 0.0, 0.0).is_err());
        assert!(lab.from_action_angle(1.0, -2.0).is_err());
    }

    #[test]
    fn from_action_angle_at_quarter_turn_and_scaling() {
        let lab = two_term_lab(3.0);
        let (x, v) = lab.from_action_angle(HALF_PI, 7.0).unwrap();
        assert_eq!(x, 0.0);
        assert!(v < 0.0);
        // doubling r multiplies x by 2^(2/(a+3)) at fixed angle
        let (x1, _) = lab.from_action_angle(0.9, 3.0).unwrap();
        let (x2, _) = lab.from_action_angle(0.9, 6.0).unwrap();
        let ratio = x2 / x1;
        assert!((ratio - 2.0_f64.powf(2.0 / 6.0)).abs() < 1e-12);
    }

    #[test]
    fn eta_jacobian_determinant_is_one() {
        let lab = two_term_lab(5.0);
        for (th, r) in [(0.3, 1.0), (2.0, 10.0), (4.5, 250.0)] {
            let h_th = 1e-5;
            let h_r = 1e-5 * r;
            let f = |th: f64, r: f64| lab.from_action_angle(th, r).unwrap();
            let (x_p, v_p) = f(th + h_th, r);
            let (x_m, v_m) = f(th - h_th, r);
            let (x_rp, v_rp) = f(th, r + h_r);
            let (x_rm, v_rm) = f(th, r - h_r);
            let det = ((x_p - x_m) / (2.0 * h_th)) * ((v_rp - v_rm) / (2.0 * h_r))
                - ((x_rp - x_rm) / (2.0 * h_r)) * ((v_p - v_m) / (2.0 * h_th));
            assert!((det - 1.0).abs() < 1e-6, "det = {det}");
        }
    }

    #[test]
    fn aa_hamiltonian_properties() {
        let lab = two_term_lab(3.0);
        let theta = TorusPoint::new(vec![0.2, 0.7]);
        // at the section the forcing term dies with c(pi/2) = 0
        let r = 11.0;
        let h_sec = lab.hamiltonian_aa(&theta, HALF_PI, r, 0.33).unwrap();
        let h_sec2 = lab
            .hamiltonian_aa(&TorusPoint::new(vec![0.9, 0.1]), HALF_PI, r, 5.0)
            .unwrap();
        assert_eq!(h_sec, h_sec2);
        assert!((h_sec - lab.params.energy_of_action(r)).abs() < 1e-12 * h_sec);
        // equals energy - x p(t) through the chart
        for (angle, r, t) in [(0.4, 2.0, 0.1), (3.8, 40.0, 2.2)] {
            let (x, v) = lab.from_action_angle(angle, r).unwrap();
            let p = lab.forcing.eval_p(&theta, t, 0).unwrap();
            let direct = lab.params.energy(x, v) - x * p;
            let ham = lab.hamiltonian_aa(&theta, angle, r, t).unwrap();
            assert!((ham - direct).abs() < 1e-10 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn aa_field_unforced_and_at_section() {
        let lab = two_term_lab(3.0);
        let theta = TorusPoint::new(vec![0.2, 0.7]);
        let p = &lab.params;
        let (dth, dr) = lab.aa_vector_field(&theta, HALF_PI, 5.0, 1.0).unwrap();
        // c(pi/2) = 0 so dr = gamma r^(2/(a+3)) p(t) s(pi/2) exactly
        let pt = lab.forcing.eval_p(&theta, 1.0, 0).unwrap();
        let s_half = lab.table.eval_cs(HALF_PI).1;
        assert!((dr - p.gamma * 5.0_f64.powf(p.exp.x_of_r) * pt * s_half).abs() < 1e-14);
        assert!(dth > 0.0);

        let zero = TorusForcing::zero(2);
        let lab0 = Lab::new(3.0, zero).unwrap();
        let (dth0, dr0) = lab0
            .aa_vector_field(&TorusPoint::zero(2), 1.1, 5.0, 0.0)
            .unwrap();
        assert_eq!(dr0, 0.0);
        let expect = p.exp.energy_of_r * p.kappa1 * 5.0_f64.powf((p.alpha - 1.0) / (p.alpha + 3.0));
        assert!((dth0 - expect).abs() < 1e-12);
    }

    #[test]
    fn aa_field_is_the_pushforward_of_the_cartesian_field() {
        // transport the Cartesian vector field through the chart by finite
        // differences along the flow direction
        let lab = two_term_lab(3.0);
        let theta = TorusPoint::new(vec![0.45, 0.9]);
        for (x, v, t) in [(0.8, -1.5, 0.3), (-1.2, 2.0, 5.0), (2.5, 0.7, 1.1)] {
            let p = lab.forcing.eval_p(&theta, t, 0).unwrap();
            let (dx, dv) = (v, -lab.params.odd_power(x) + p);
            let eps = 1e-6;
            let plus = lab
                .to_action_angle(x + eps * dx, v + eps * dv, t + eps)
                .unwrap();
            let minus = lab
                .to_action_angle(x - eps * dx, v - eps * dv, t - eps)
                .unwrap();
            let fd = (
                (plus.theta - minus.theta) / (2.0 * eps),
                (plus.r - minus.r) / (2.0 * eps),
            );
            let st = lab.to_action_angle(x, v, t).unwrap();
            let (dth, dr) = lab.aa_vector_field(&theta, st.theta, st.r, t).unwrap();
            let scale = dth.abs().max(dr.abs()).max(1.0);
            assert!(
                (fd.0 - dth).abs() / scale < 1e-7,
                "angle rate: {} vs {dth}",
                fd.0
            );
            assert!(
                (fd.1 - dr).abs() / scale < 1e-7,
                "action rate: {} vs {dr}",
                fd.1
            );
        }
    }

    #[test]
    fn domain_gates() {
        let lab = two_term_lab(3.0);
        let th = TorusPoint::zero(2);
        assert!(lab
            .solve_h(&th, 0.0, lab.thresholds.i_star * 0.5, 1.0)
            .is_err());
        assert!(lab
            .t_forward(&th, 0.0, lab.thresholds.i_star_star * 0.9, 1.0)
            .is_err());
        assert!(lab
            .t_inverse(&th, 0.0, lab.thresholds.cal_i_star_star * 0.9, 1.0)
            .is_err());
        assert!(lab
            .remainder_r(&th, 0.0, lab.thresholds.i_c0 * 0.9, 1.0)
            .is_err());
    }
}
