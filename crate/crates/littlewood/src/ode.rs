//! Adaptive Dormand-Prince 5(4) integrator with dense output.
//!
//! The whole laboratory runs on smooth, low-dimensional flows, so one
//! embedded Runge-Kutta pair with a continuous extension covers every
//! integration need: the unperturbed table build, the forced Cartesian
//! flow with zero detection, and the transformed Hamiltonian flows in the
//! angle variable. The continuous extension is the classical fourth-order
//! interpolant evaluated from the stage derivatives of an accepted step.

use crate::error::{Error, Result};

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// e = b5 - b4: error estimator weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Dense-output weights (Hairer, Norsett & Wanner, dopri5 rcont5).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    /// Relative tolerance of the per-step error control.
    pub rtol: f64,
    /// Absolute tolerance floor.
    pub atol: f64,
    /// Initial step guess; `None` picks a heuristic from the first slope.
    pub h_init: Option<f64>,
    /// Hard cap on |h|.
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: None,
            h_max: f64::INFINITY,
            max_steps: 50_000_000,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(rtol: f64, atol: f64) -> Self {
        OdeOptions {
            rtol,
            atol,
            ..Default::default()
        }
    }
}

/// One accepted step together with its dense interpolant.
#[derive(Debug, Clone)]
pub struct DenseStep<const D: usize> {
    pub t0: f64,
    pub h: f64,
    pub y0: [f64; D],
    pub y1: [f64; D],
    /// Slope at the right end (the FSAL stage).
    pub f1: [f64; D],
    r3: [f64; D],
    r4: [f64; D],
    r5: [f64; D],
}

impl<const D: usize> DenseStep<D> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// Interpolated state at `t`, intended for `t` inside the step.
    pub fn eval(&self, t: f64) -> [f64; D] {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let mut y = [0.0; D];
        for i in 0..D {
            let diff = self.y1[i] - self.y0[i];
            y[i] = self.y0[i] + s * (diff + s1 * (self.r3[i] + s * (self.r4[i] + s1 * self.r5[i])));
        }
        y
    }
}

/// Whether the step callback wants the integration to keep going.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepControl {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct Solution<const D: usize> {
    /// Time actually reached (equals `t_end` unless a callback stopped early).
    pub t: f64,
    pub y: [f64; D],
    pub stopped: bool,
    pub n_steps: usize,
}

/// Integrate `y' = f(t, y)` from `t0` to `t_end` (either direction).
pub fn integrate<const D: usize, F>(
    f: &mut F,
    t0: f64,
    y0: [f64; D],
    t_end: f64,
    opts: &OdeOptions,
) -> Result<Solution<D>>
where
    F: FnMut(f64, &[f64; D]) -> [f64; D],
{
    integrate_with(f, t0, y0, t_end, opts, |_| StepControl::Continue)
}

/// Integrate with a per-step callback receiving each accepted dense step.
pub fn integrate_with<const D: usize, F, C>(
    f: &mut F,
    t0: f64,
    y0: [f64; D],
    t_end: f64,
    opts: &OdeOptions,
    mut on_step: C,
) -> Result<Solution<D>>
where
    F: FnMut(f64, &[f64; D]) -> [f64; D],
    C: FnMut(&DenseStep<D>) -> StepControl,
{
    let span = t_end - t0;
    if span == 0.0 {
        return Ok(Solution {
            t: t0,
            y: y0,
            stopped: false,
            n_steps: 0,
        });
    }
    let dir = span.signum();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);

    let mut h = match opts.h_init {
        Some(h0) => h0.abs().min(span.abs()).min(opts.h_max) * dir,
        None => initial_step(&y, &k1, span, opts) * dir,
    };

    let mut n_accepted = 0usize;
    for _ in 0..opts.max_steps {
        if (t - t_end) * dir >= 0.0 {
            return Ok(Solution {
                t,
                y,
                stopped: false,
                n_steps: n_accepted,
            });
        }
        // Clip onto the end point.
        if (t + 1.01 * h - t_end) * dir > 0.0 {
            h = t_end - t;
        }
        if h.abs() < 1e-14 * t.abs().max(1.0) {
            return Err(Error::Numeric(format!(
                "step size underflow at t = {t} (reached from {t0})"
            )));
        }

        let (y1, k, err) = try_step(f, t, &y, h, &k1, opts);

        if err <= 1.0 {
            let step = make_dense(t, h, &y, &y1, &k);
            t += h;
            y = y1;
            k1 = k[6]; // FSAL
            n_accepted += 1;
            let ctrl = on_step(&step);
            if ctrl == StepControl::Stop {
                return Ok(Solution {
                    t,
                    y,
                    stopped: true,
                    n_steps: n_accepted,
                });
            }
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
            h = (h * fac).clamp(-opts.h_max, opts.h_max);
        } else {
            let fac = (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            h *= fac;
        }
    }
    Err(Error::Numeric(format!(
        "integrator exceeded {} steps at t = {t} (target {t_end})",
        opts.max_steps
    )))
}

/// One trial step: returns candidate state, the seven stages and the scaled
/// error norm.
#[allow(clippy::type_complexity)]
fn try_step<const D: usize, F>(
    f: &mut F,
    t: f64,
    y: &[f64; D],
    h: f64,
    k1: &[f64; D],
    opts: &OdeOptions,
) -> ([f64; D], [[f64; D]; 7], f64)
where
    F: FnMut(f64, &[f64; D]) -> [f64; D],
{
    let mut k = [[0.0; D]; 7];
    k[0] = *k1;

    let mut yt = [0.0; D];
    for i in 0..D {
        yt[i] = y[i] + h * A21 * k[0][i];
    }
    k[1] = f(t + C2 * h, &yt);
    for i in 0..D {
        yt[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
    }
    k[2] = f(t + C3 * h, &yt);
    for i in 0..D {
        yt[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
    }
    k[3] = f(t + C4 * h, &yt);
    for i in 0..D {
        yt[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
    }
    k[4] = f(t + C5 * h, &yt);
    for i in 0..D {
        yt[i] = y[i]
            + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
    }
    k[5] = f(t + h, &yt);
    let mut y1 = [0.0; D];
    for i in 0..D {
        y1[i] = y[i]
            + h * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
    }
    k[6] = f(t + h, &y1);

    let mut err = 0.0;
    for i in 0..D {
        let e = h
            * (E1 * k[0][i]
                + E3 * k[2][i]
                + E4 * k[3][i]
                + E5 * k[4][i]
                + E6 * k[5][i]
                + E7 * k[6][i]);
        let sc = opts.atol + opts.rtol * y[i].abs().max(y1[i].abs());
        let r = e / sc;
        err += r * r;
    }
    (y1, k, (err / D as f64).sqrt())
}

fn make_dense<const D: usize>(
    t: f64,
    h: f64,
    y0: &[f64; D],
    y1: &[f64; D],
    k: &[[f64; D]; 7],
) -> DenseStep<D> {
    let mut r3 = [0.0; D];
    let mut r4 = [0.0; D];
    let mut r5 = [0.0; D];
    for i in 0..D {
        let diff = y1[i] - y0[i];
        let bspl = h * k[0][i] - diff;
        r3[i] = bspl;
        r4[i] = diff - h * k[6][i] - bspl;
        r5[i] = h
            * (D1 * k[0][i]
                + D3 * k[2][i]
                + D4 * k[3][i]
                + D5 * k[4][i]
                + D6 * k[5][i]
                + D7 * k[6][i]);
    }
    DenseStep {
        t0: t,
        h,
        y0: *y0,
        y1: *y1,
        f1: k[6],
        r3,
        r4,
        r5,
    }
}

/// Crude version of the classical starting-step heuristic.
fn initial_step<const D: usize>(y: &[f64; D], f0: &[f64; D], span: f64, opts: &OdeOptions) -> f64 {
    let mut d0: f64 = 0.0;
    let mut d1: f64 = 0.0;
    for i in 0..D {
        let sc = opts.atol + opts.rtol * y[i].abs();
        d0 = d0.max((y[i] / sc).abs());
        d1 = d1.max((f0[i] / sc).abs());
    }
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h.min(span.abs()).min(opts.h_max).max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic(_t: f64, y: &[f64; 2]) -> [f64; 2] {
        [y[1], -y[0]]
    }

    #[test]
    fn harmonic_oscillator_full_period() {
        let opts = OdeOptions::with_tol(1e-12, 1e-14);
        let sol = integrate(
            &mut harmonic,
            0.0,
            [1.0, 0.0],
            2.0 * std::f64::consts::PI,
            &opts,
        )
        .unwrap();
        assert!((sol.y[0] - 1.0).abs() < 1e-10, "x err {}", sol.y[0] - 1.0);
        assert!(sol.y[1].abs() < 1e-10);
    }

    #[test]
    fn backward_integration_returns_to_start() {
        let opts = OdeOptions::with_tol(1e-12, 1e-14);
        let fwd = integrate(&mut harmonic, 0.0, [0.3, -0.7], 2.5, &opts).unwrap();
        let back = integrate(&mut harmonic, 2.5, fwd.y, 0.0, &opts).unwrap();
        assert!((back.y[0] - 0.3).abs() < 1e-10);
        assert!((back.y[1] + 0.7).abs() < 1e-10);
    }

    #[test]
    fn dense_output_matches_exact_solution_inside_steps() {
        let opts = OdeOptions::with_tol(1e-10, 1e-12);
        let mut worst: f64 = 0.0;
        integrate_with(&mut harmonic, 0.0, [1.0, 0.0], 3.0, &opts, |step| {
            for j in 1..8 {
                let t = step.t0 + step.h * j as f64 / 8.0;
                let y = step.eval(t);
                worst = worst
                    .max((y[0] - t.cos()).abs())
                    .max((y[1] + t.sin()).abs());
            }
            StepControl::Continue
        })
        .unwrap();
        assert!(worst < 1e-9, "dense error {worst}");
    }

    #[test]
    fn callback_can_stop_early() {
        let opts = OdeOptions::default();
        let sol = integrate_with(&mut harmonic, 0.0, [1.0, 0.0], 100.0, &opts, |step| {
            if step.t1() > 1.0 {
                StepControl::Stop
            } else {
                StepControl::Continue
            }
        })
        .unwrap();
        assert!(sol.stopped);
        assert!(sol.t > 1.0 && sol.t < 100.0);
    }

    #[test]
    fn stiff_blowup_reports_step_underflow() {
        // y' = y^2 blows up at t = 1; the integrator must fail loudly.
        let mut f = |_t: f64, y: &[f64; 1]| [y[0] * y[0]];
        let opts = OdeOptions {
            max_steps: 100_000,
            ..OdeOptions::default()
        };
        let res = integrate(&mut f, 0.0, [1.0], 2.0, &opts);
        assert!(res.is_err());
    }
}
