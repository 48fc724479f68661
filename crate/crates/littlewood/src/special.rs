//! Constants derived from the nonlinearity exponent and the tabulated
//! periodic solutions of the unperturbed oscillator.
//!
//! The unperturbed equation `x'' + |x|^(a-1) x = 0` has a one-parameter
//! family of closed orbits. `c` is the solution with amplitude chosen so
//! that its minimal period is exactly 2*pi, `s = c'`, and `c1` is the
//! antiderivative of `c` with zero mean. Everything else in the laboratory
//! is built on top of `(c, s, c1)` and a handful of exponents and scale
//! factors fixed by `alpha`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ode::{self, OdeOptions};
use crate::quad;

pub const HALF_PI: f64 = std::f64::consts::FRAC_PI_2;
pub const PI: f64 = std::f64::consts::PI;
pub const TAU: f64 = std::f64::consts::TAU;

/// The exponents that recur throughout the coordinate chain.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Exponents {
    /// 2/(a+3): position amplitude as a power of the action.
    pub x_of_r: f64,
    /// (a+1)/(a+3): velocity amplitude as a power of the action.
    pub v_of_r: f64,
    /// 2(a+1)/(a+3): energy as a power of the action.
    pub energy_of_r: f64,
    /// (a+3)/(2(a+1)): action as a power of the energy; also the leading
    /// power of the implicit time-energy Hamiltonian.
    pub r_of_energy: f64,
    /// (3-a)/(2(a+1)): power of the momentum in the first-order correction
    /// term and in the generating function.
    pub correction: f64,
    /// (1-3a)/(2(a+1)) = correction - 1: power in the angle shift of the
    /// canonical transformation.
    pub q_power: f64,
    /// 3(1-a)/(2(a+1)): decay rate of both remainder functions.
    pub remainder: f64,
}

/// All alpha-derived constants.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AlphaParams {
    pub alpha: f64,
    /// Minimal period of the amplitude-1 solution.
    pub t1: f64,
    /// Amplitude with minimal period 2*pi.
    pub lambda: f64,
    /// Scale factor making the action-angle map symplectic.
    pub gamma: f64,
    /// gamma^((a+1)/2), the velocity scale of the action-angle map.
    pub gamma_v: f64,
    /// Energy coefficient: E = kappa1 * r^(2(a+1)/(a+3)).
    pub kappa1: f64,
    /// kappa1^(-(a+3)/(2(a+1))), leading coefficient of the implicit
    /// Hamiltonian.
    pub kappa0: f64,
    /// Exponent of the adiabatic momentum in the transformed correction
    /// term; strictly negative for a >= 3.
    pub b_alpha: f64,
    pub exp: Exponents,
    /// `alpha + 1` as an integer when `alpha` is integral, enabling `powi`
    /// on the hot paths.
    pub alpha1_int: Option<i32>,
}

impl AlphaParams {
    /// `|x|^(alpha-1) x`, the restoring force.
    #[inline]
    pub fn odd_power(&self, x: f64) -> f64 {
        match self.alpha1_int {
            Some(4) => {
                let x2 = x * x;
                x2 * x
            }
            Some(6) => {
                let x2 = x * x;
                x2 * x2 * x
            }
            _ => x.abs().powf(self.alpha - 1.0) * x,
        }
    }

    /// `t^(alpha+1)` with an integer fast path.
    #[inline]
    pub fn pow_alpha1(&self, t: f64) -> f64 {
        match self.alpha1_int {
            Some(n) => t.powi(n),
            None => t.powf(self.alpha + 1.0),
        }
    }

    /// Mechanical energy `v^2/2 + |x|^(a+1)/(a+1)`.
    #[inline]
    pub fn energy(&self, x: f64, v: f64) -> f64 {
        0.5 * v * v + x.abs().powf(self.alpha + 1.0) / (self.alpha + 1.0)
    }

    /// Action from energy: `r = (E/kappa1)^((a+3)/(2(a+1)))`.
    #[inline]
    pub fn action_of_energy(&self, e: f64) -> f64 {
        (e / self.kappa1).powf(self.exp.r_of_energy)
    }

    /// Energy from action, the inverse of [`Self::action_of_energy`].
    #[inline]
    pub fn energy_of_action(&self, r: f64) -> f64 {
        self.kappa1 * r.powf(self.exp.energy_of_r)
    }

    /// Coefficient of `p` in `f`: the forced correction term of the
    /// time-energy Hamiltonian is `f(phi) c(tau) I^correction` with
    /// `f = f_coef * p`.
    pub fn f_coef(&self) -> f64 {
        self.exp.r_of_energy
            * self.gamma
            * self.kappa0.powf((self.alpha + 5.0) / (self.alpha + 3.0))
    }

    /// Coefficient of `p'` in `f1`: after the canonical transformation the
    /// correction term reads `f1(varphi) c1(tau) I^b_alpha` with
    /// `f1 = f1_coef * p'`.
    pub fn f1_coef(&self) -> f64 {
        -self.exp.r_of_energy * self.kappa0 * self.f_coef()
    }

    /// Minimal period of the amplitude-`lambda` orbit.
    pub fn period(&self, lambda: f64) -> f64 {
        lambda.powf(0.5 * (1.0 - self.alpha)) * self.t1
    }
}

/// Derive every constant from `alpha`.
///
/// The period of the amplitude-1 solution is a singular integral; the
/// substitution `x = 1 - u^2` absorbs the square-root endpoint singularity
/// and leaves a smooth integrand for Gauss-Legendre quadrature. All other
/// constants follow in closed form.
pub fn derive_params(alpha: f64, tol: f64) -> Result<AlphaParams> {
    if !alpha.is_finite() || alpha < 3.0 {
        return Err(Error::Domain(format!("alpha must be >= 3, got {alpha}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!(
            "tolerance must be positive, got {tol}"
        )));
    }

    let t1 = period_amplitude_one(alpha, tol)?;
    let lambda = (t1 / TAU).powf(2.0 / (alpha - 1.0));
    let gamma = ((alpha + 3.0) / (2.0 * lambda.powf(alpha + 1.0))).powf(2.0 / (alpha + 3.0));
    let kappa1 = (gamma * lambda).powf(alpha + 1.0) / (alpha + 1.0);
    let r_of_energy = (alpha + 3.0) / (2.0 * (alpha + 1.0));
    let kappa0 = kappa1.powf(-r_of_energy);
    let b_alpha =
        -(3.0 * alpha * alpha - 2.0 * alpha - 9.0) / (2.0 * (alpha + 3.0) * (alpha + 1.0));
    let exp = Exponents {
        x_of_r: 2.0 / (alpha + 3.0),
        v_of_r: (alpha + 1.0) / (alpha + 3.0),
        energy_of_r: 2.0 * (alpha + 1.0) / (alpha + 3.0),
        r_of_energy,
        correction: (3.0 - alpha) / (2.0 * (alpha + 1.0)),
        q_power: (1.0 - 3.0 * alpha) / (2.0 * (alpha + 1.0)),
        remainder: 3.0 * (1.0 - alpha) / (2.0 * (alpha + 1.0)),
    };
    let alpha1_int = if alpha.fract() == 0.0 && alpha <= 60.0 {
        Some(alpha as i32 + 1)
    } else {
        None
    };
    Ok(AlphaParams {
        alpha,
        t1,
        lambda,
        gamma,
        gamma_v: gamma.powf(0.5 * (alpha + 1.0)),
        kappa1,
        kappa0,
        b_alpha,
        exp,
        alpha1_int,
    })
}

/// T(1) = 4 sqrt((a+1)/2) * int_0^1 dx / sqrt(1 - x^(a+1)).
fn period_amplitude_one(alpha: f64, tol: f64) -> Result<f64> {
    // After x = 1 - u^2 the integrand is 2 / sqrt(g(1-u^2)) with
    // g(x) = (1 - x^(a+1)) / (1 - x), smooth and positive on [0, 1].
    let g = |u: f64| {
        let u2 = u * u;
        if u2 < 1e-8 {
            // leading Taylor terms of (1 - (1-u^2)^(a+1)) / u^2
            (alpha + 1.0) * (1.0 - 0.5 * alpha * u2)
        } else {
            -f64::exp_m1((alpha + 1.0) * f64::ln_1p(-u2)) / u2
        }
    };
    let integrand = |u: f64| 1.0 / g(u).sqrt();
    let coarse = quad::integrate(integrand, 0.0, 1.0, 48);
    let fine = quad::integrate(integrand, 0.0, 1.0, 96);
    let scale = 8.0 * ((alpha + 1.0) / 2.0).sqrt();
    let residual = (scale * (fine - coarse)).abs();
    if residual > tol.max(1e-13) * scale * fine.abs() {
        return Err(Error::Numeric(format!(
            "period quadrature did not converge: residual {residual:.3e}"
        )));
    }
    Ok(scale * fine)
}

/// Tabulated `(c, s, c1)` on `[0, pi/2]` with quintic two-point Hermite
/// evaluation and exact symmetry reduction to the rest of the line.
///
/// Nodes are uniform; the integrator is forced to land on every node so the
/// stored values carry pure Runge-Kutta accuracy. First and second
/// derivatives at the nodes come from the differential equation itself,
/// which is what makes the quintic cells accurate to machine precision.
#[derive(Debug, Clone)]
pub struct CsTable {
    alpha: f64,
    n_cells: usize,
    h: f64,
    c: Vec<f64>,
    s: Vec<f64>,
    c1: Vec<f64>,
    /// s' = -|c|^(a-1) c at the nodes.
    sd: Vec<f64>,
    /// s'' = -a |c|^(a-1) s at the nodes.
    sdd: Vec<f64>,
    /// Residual estimate of the build (identity defect at the far node).
    pub tol_achieved: f64,
    /// sup |c| = Lambda.
    pub c_inf: f64,
    /// sup |s| = sqrt(2 Lambda^(a+1)/(a+1)), attained at the zeros of c.
    pub s_inf: f64,
    /// sup |c1| = c1(pi/2).
    pub c1_inf: f64,
}

const CACHE_MAGIC: &[u8; 8] = b"CSTABLE1";

impl CsTable {
    /// Integrate the unperturbed system once over a quarter period.
    pub fn build(params: &AlphaParams, tol: f64) -> Result<CsTable> {
        if !(tol > 0.0) {
            return Err(Error::Domain(format!(
                "table tolerance must be positive, got {tol}"
            )));
        }
        let n_cells = 256usize;
        let h = HALF_PI / n_cells as f64;
        let rtol = tol.min(1e-12);
        let opts = OdeOptions {
            rtol,
            atol: rtol * 1e-2,
            ..Default::default()
        };

        let mut rhs = |_t: f64, y: &[f64; 3]| [y[1], -params.odd_power(y[0]), y[0]];
        let mut c = Vec::with_capacity(n_cells + 1);
        let mut s = Vec::with_capacity(n_cells + 1);
        let mut c1 = Vec::with_capacity(n_cells + 1);
        let mut y = [params.lambda, 0.0, 0.0];
        c.push(y[0]);
        s.push(y[1]);
        c1.push(y[2]);
        for j in 1..=n_cells {
            let t_from = (j - 1) as f64 * h;
            let t_to = j as f64 * h;
            y = ode::integrate(&mut rhs, t_from, y, t_to, &opts)?.y;
            c.push(y[0]);
            s.push(y[1]);
            c1.push(y[2]);
        }

        // At the quarter period c vanishes and |s| is fixed by the energy
        // identity; re-pin the endpoint to those exact values.
        let e_level = params.lambda.powf(params.alpha + 1.0) / (params.alpha + 1.0);
        let s_end = -(2.0 * e_level).sqrt();
        let end_defect = c[n_cells].abs().max((s[n_cells] - s_end).abs());
        if end_defect > 1e-8 {
            return Err(Error::Numeric(format!(
                "quarter-period endpoint defect {end_defect:.3e}; period constants inconsistent"
            )));
        }
        c[n_cells] = 0.0;
        s[n_cells] = s_end;

        let sd: Vec<f64> = c.iter().map(|&x| -params.odd_power(x)).collect();
        let sdd: Vec<f64> = c
            .iter()
            .zip(&s)
            .map(|(&x, &v)| -params.alpha * x.abs().powf(params.alpha - 1.0) * v)
            .collect();

        // Identity defect across the nodes as the achieved-accuracy figure.
        let mut worst: f64 = end_defect;
        for j in 0..=n_cells {
            let res = 0.5 * s[j] * s[j]
                + c[j].abs().powf(params.alpha + 1.0) / (params.alpha + 1.0)
                - e_level;
            worst = worst.max(res.abs() / e_level);
        }

        Ok(CsTable {
            alpha: params.alpha,
            n_cells,
            h,
            c1_inf: c1[n_cells],
            c_inf: params.lambda,
            s_inf: -s_end,
            c,
            s,
            c1,
            sd,
            sdd,
            tol_achieved: worst,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Fold `t` into `[0, pi/2]`; returns the reduced argument and the
    /// signs to apply to `(c, s, c1)`. Exact in exact arithmetic: only
    /// evenness and pi-anti-periodicity are used.
    #[inline]
    fn fold(t: f64) -> (f64, f64, f64, f64) {
        let mut u = t.rem_euclid(TAU);
        let mut sc = 1.0;
        let mut ss = 1.0;
        let mut sc1 = 1.0;
        if u >= PI {
            // all three are anti-periodic with period pi
            u -= PI;
            sc = -sc;
            ss = -ss;
            sc1 = -sc1;
        }
        if u > HALF_PI {
            // c(t) = -c(pi - t), s(t) = s(pi - t), c1(t) = c1(pi - t)
            u = PI - u;
            sc = -sc;
        }
        (u, sc, ss, sc1)
    }

    #[inline]
    fn cell(&self, u: f64) -> (usize, f64) {
        let idx = (u / self.h) as usize;
        if idx >= self.n_cells {
            // u == pi/2 up to rounding: pin to the exact right endpoint
            return (self.n_cells - 1, self.h);
        }
        (idx, u - idx as f64 * self.h)
    }

    /// Quintic two-point Hermite using (f, f', f'') at both cell ends.
    #[inline]
    fn hermite(h: f64, x: f64, f0: f64, d0: f64, dd0: f64, f1: f64, d1: f64, dd1: f64) -> f64 {
        let t = x / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let t5 = t4 * t;
        let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
        let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
        let h2 = 0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5;
        let k0 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
        let k1 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
        let k2 = 0.5 * t3 - t4 + 0.5 * t5;
        f0 * h0 + h * d0 * h1 + h * h * dd0 * h2 + f1 * k0 + h * d1 * k1 + h * h * dd1 * k2
    }

    /// `(c(t), s(t))` anywhere on the line.
    #[inline]
    pub fn eval_cs(&self, t: f64) -> (f64, f64) {
        let (u, sc, ss, _) = Self::fold(t);
        let (j, x) = self.cell(u);
        let h = self.h;
        let c = Self::hermite(
            h,
            x,
            self.c[j],
            self.s[j],
            self.sd[j],
            self.c[j + 1],
            self.s[j + 1],
            self.sd[j + 1],
        );
        let s = Self::hermite(
            h,
            x,
            self.s[j],
            self.sd[j],
            self.sdd[j],
            self.s[j + 1],
            self.sd[j + 1],
            self.sdd[j + 1],
        );
        (sc * c, ss * s)
    }

    /// `c(t)` alone (hot path of the implicit Hamiltonian).
    #[inline]
    pub fn eval_c(&self, t: f64) -> f64 {
        let (u, sc, _, _) = Self::fold(t);
        let (j, x) = self.cell(u);
        sc * Self::hermite(
            self.h,
            x,
            self.c[j],
            self.s[j],
            self.sd[j],
            self.c[j + 1],
            self.s[j + 1],
            self.sd[j + 1],
        )
    }

    /// Zero-mean antiderivative `c1(t)` with `c1(0) = 0`.
    #[inline]
    pub fn eval_c1(&self, t: f64) -> f64 {
        let (u, _, _, sc1) = Self::fold(t);
        let (j, x) = self.cell(u);
        sc1 * Self::hermite(
            self.h,
            x,
            self.c1[j],
            self.c[j],
            self.s[j],
            self.c1[j + 1],
            self.c[j + 1],
            self.s[j + 1],
        )
    }

    /// Invert `c` on the monotone branch `[0, pi]` (where `s <= 0`).
    /// `c` decreases strictly from `Lambda` to `-Lambda` there.
    pub fn invert_c_upper(&self, target: f64) -> f64 {
        let tgt = target.clamp(-self.c_inf, self.c_inf);
        let mut lo = 0.0;
        let mut hi = PI;
        // bisection to a small bracket, then Newton with derivative s
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if self.eval_c(mid) > tgt {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut th = 0.5 * (lo + hi);
        for _ in 0..4 {
            let (cv, sv) = self.eval_cs(th);
            if sv.abs() < 1e-14 {
                break;
            }
            let step = (cv - tgt) / sv;
            let next = th - step;
            if next >= lo && next <= hi {
                th = next;
            } else {
                break;
            }
        }
        th
    }

    /// Serialize to the binary cache format: a magic tag, `alpha`, the
    /// build tolerance, the cell count, then the node arrays as
    /// little-endian doubles.
    pub fn write_to(&self, path: &Path, build_tol: f64) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&self.alpha.to_le_bytes());
        buf.extend_from_slice(&build_tol.to_le_bytes());
        buf.extend_from_slice(&(self.n_cells as u64).to_le_bytes());
        buf.extend_from_slice(&self.tol_achieved.to_le_bytes());
        for arr in [&self.c, &self.s, &self.c1] {
            for v in arr.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    /// Load a cached table; `params` must match the stored `alpha` bit for
    /// bit.
    pub fn read_from(path: &Path, params: &AlphaParams) -> Result<CsTable> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut off = 0usize;
        let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
            if *off + n > bytes.len() {
                return Err(Error::Numeric(format!(
                    "truncated cache file {}",
                    path.display()
                )));
            }
            let s = &bytes[*off..*off + n];
            *off += n;
            Ok(s)
        };
        let magic = take(&mut off, 8)?;
        if magic != CACHE_MAGIC {
            return Err(Error::Domain(format!(
                "not a table cache: {}",
                path.display()
            )));
        }
        let rd = |s: &[u8]| f64::from_le_bytes(s.try_into().unwrap());
        let alpha = rd(take(&mut off, 8)?);
        if alpha.to_bits() != params.alpha.to_bits() {
            return Err(Error::Domain(format!(
                "cache alpha {alpha} does not match requested {}",
                params.alpha
            )));
        }
        let _tol = rd(take(&mut off, 8)?);
        let n_cells = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
        if n_cells == 0 || n_cells > 1 << 20 {
            return Err(Error::Numeric("implausible cell count in cache".into()));
        }
        let tol_achieved = rd(take(&mut off, 8)?);
        let mut arrays = Vec::new();
        for _ in 0..3 {
            let mut arr = Vec::with_capacity(n_cells + 1);
            for _ in 0..=n_cells {
                arr.push(rd(take(&mut off, 8)?));
            }
            arrays.push(arr);
        }
        let c1 = arrays.pop().unwrap();
        let s = arrays.pop().unwrap();
        let c = arrays.pop().unwrap();
        if !c.iter().chain(&s).chain(&c1).all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite values in cache".into()));
        }
        let sd: Vec<f64> = c.iter().map(|&x| -params.odd_power(x)).collect();
        let sdd: Vec<f64> = c
            .iter()
            .zip(&s)
            .map(|(&x, &v)| -params.alpha * x.abs().powf(params.alpha - 1.0) * v)
            .collect();
        Ok(CsTable {
            alpha,
            n_cells,
            h: HALF_PI / n_cells as f64,
            c_inf: params.lambda,
            s_inf: s[n_cells].abs(),
            c1_inf: c1[n_cells],
            c,
            s,
            c1,
            sd,
            sdd,
            tol_achieved,
        })
    }

    /// Cache file name keyed by the exact bits of `(alpha, tol)`.
    pub fn cache_file(dir: &Path, alpha: f64, tol: f64) -> PathBuf {
        dir.join(format!(
            "cs_a{:016x}_t{:016x}.bin",
            alpha.to_bits(),
            tol.to_bits()
        ))
    }

    /// Load from `dir` if present, otherwise build and store.
    pub fn load_or_build(dir: &Path, params: &AlphaParams, tol: f64) -> Result<CsTable> {
        let path = Self::cache_file(dir, params.alpha, tol);
        if path.exists() {
            if let Ok(table) = Self::read_from(&path, params) {
                return Ok(table);
            }
        }
        let table = Self::build(params, tol)?;
        std::fs::create_dir_all(dir)?;
        table.write_to(&path, tol)?;
        Ok(table)
    }
}
