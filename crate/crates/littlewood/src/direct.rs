//! The forced oscillator in its original Cartesian coordinates, and the
//! reference successor map obtained by honest event detection.
//!
//! This is the ground truth that the whole transformed route is checked
//! against: a descending zero is located by bracketing sign changes of the
//! dense output and polished with short re-integrations, never by trusting
//! step boundaries.

use crate::error::{Error, Result};
use crate::forcing::TorusPoint;
use crate::lab::Lab;
use crate::ode::{self, DenseStep, OdeOptions, StepControl};

/// Phase-space point of the original equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianState {
    pub x: f64,
    pub v: f64,
    pub t: f64,
}

/// A zero of `x` with negative velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroEvent {
    pub t1: f64,
    pub v1: f64,
}

impl Lab {
    /// Advance the forced oscillator to `t_end` (either direction).
    pub fn integrate_cartesian(
        &self,
        theta: &TorusPoint,
        state: CartesianState,
        t_end: f64,
        rtol: f64,
    ) -> Result<CartesianState> {
        let mut rhs = self.cartesian_rhs(theta);
        let sol = ode::integrate(
            &mut rhs,
            state.t,
            [state.x, state.v],
            t_end,
            &self.ode_opts(rtol),
        )?;
        Ok(CartesianState {
            x: sol.y[0],
            v: sol.y[1],
            t: sol.t,
        })
    }

    fn cartesian_rhs<'a>(
        &'a self,
        theta: &'a TorusPoint,
    ) -> impl FnMut(f64, &[f64; 2]) -> [f64; 2] + 'a {
        move |t, y| {
            [
                y[1],
                -self.params.odd_power(y[0]) + self.forcing.eval(theta, t, 0),
            ]
        }
    }

    /// The direct successor map: starting from `x(t0) = 0`, `x'(t0) = v0 < v_star`,
    /// return the next zero with negative velocity.
    pub fn psi_direct(&self, theta: &TorusPoint, v0: f64, t0: f64) -> Result<ZeroEvent> {
        if !(v0 < self.thresholds.v_star) {
            return Err(Error::Domain(format!(
                "successor map needs v0 < v_star = {}, got {v0}",
                self.thresholds.v_star
            )));
        }
        let opts = self.ode_opts(self.config.integrator_rtol);
        let mut rhs = self.cartesian_rhs(theta);

        // scan dense steps for a + -> - sign change of x
        let mut bracket: Option<(DenseStep<2>, f64, f64)> = None;
        let horizon = t0 + self.config.horizon;
        let sol = ode::integrate_with(&mut rhs, t0, [0.0, v0], horizon, &opts, |step| {
            const SUBDIV: usize = 8;
            let mut t_prev = step.t0;
            let mut x_prev = step.y0[0];
            for j in 1..=SUBDIV {
                let t = step.t0 + step.h * j as f64 / SUBDIV as f64;
                let x = if j == SUBDIV {
                    step.y1[0]
                } else {
                    step.eval(t)[0]
                };
                if x_prev > 0.0 && x <= 0.0 {
                    bracket = Some((step.clone(), t_prev, t));
                    return StepControl::Stop;
                }
                t_prev = t;
                x_prev = x;
            }
            StepControl::Continue
        })?;

        let (step, mut lo, mut hi) = match bracket {
            Some(b) => b,
            None => {
                return Err(Error::Numeric(format!(
                    "no descending zero within the horizon {} (reached t = {})",
                    self.config.horizon, sol.t
                )))
            }
        };

        // bisect on the interpolant
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if step.eval(mid)[0] > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut t_event = 0.5 * (lo + hi);

        // polish with exact short integrations from the step base point
        let tight = OdeOptions {
            rtol: (self.config.integrator_rtol * 1e-3).max(1e-14),
            atol: opts.atol * 1e-2,
            ..Default::default()
        };
        let mut y = ode::integrate(&mut rhs, step.t0, step.y0, t_event, &tight)?.y;
        for _ in 0..8 {
            let (x, v) = (y[0], y[1]);
            if x.abs() <= self.config.event_tol * v.abs().max(1.0) {
                break;
            }
            if v == 0.0 {
                return Err(Error::Numeric(
                    "grazing zero: velocity vanished at the event".into(),
                ));
            }
            let dt = -x / v;
            y = ode::integrate(&mut rhs, t_event, y, t_event + dt, &tight)?.y;
            t_event += dt;
        }
        let (x1, v1) = (y[0], y[1]);
        if x1.abs() > self.config.event_tol * v1.abs().max(1.0) {
            return Err(Error::Numeric(format!(
                "event refinement stalled: |x| = {:.3e} at t = {t_event}",
                x1.abs()
            )));
        }
        if !(v1 < 0.0) {
            return Err(Error::Numeric(format!(
                "refined zero has non-negative velocity {v1:.3e}; grazing contact skipped"
            )));
        }
        Ok(ZeroEvent { t1: t_event, v1 })
    }
}
