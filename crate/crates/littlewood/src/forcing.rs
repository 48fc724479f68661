//! Quasi-periodic forcing: a real trigonometric polynomial on the
//! N-torus, sampled along the line flow `t -> Theta + t omega`.
//!
//! Restricting to trigonometric polynomials keeps every time derivative
//! and every norm bound exact; nothing in the laboratory needs more
//! generality.

use crate::error::{Error, Result};

const TAU: f64 = std::f64::consts::TAU;

/// A point on the N-torus, coordinates stored reduced to `[0, 1)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl TorusPoint {
    pub fn new(coords: Vec<f64>) -> TorusPoint {
        TorusPoint {
            coords: coords.into_iter().map(reduce_mod_1).collect(),
        }
    }

    pub fn zero(dim: usize) -> TorusPoint {
        TorusPoint {
            coords: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Overwrite `self` with `base + iota(t)` without allocating; used on
    /// the integration hot path of the cylinder map.
    pub(crate) fn set_shifted(&mut self, base: &TorusPoint, omega: &[f64], t: f64) {
        debug_assert_eq!(self.dim(), base.dim());
        for ((dst, src), w) in self.coords.iter_mut().zip(&base.coords).zip(omega) {
            *dst = reduce_mod_1(src + w * t);
        }
    }

    /// Group operation on the torus.
    pub fn add(&self, other: &TorusPoint) -> TorusPoint {
        assert_eq!(self.dim(), other.dim(), "torus dimension mismatch");
        TorusPoint {
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| reduce_mod_1(a + b))
                .collect(),
        }
    }
}

#[inline]
fn reduce_mod_1(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    // rem_euclid can return exactly 1.0 for tiny negative inputs
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// The line flow `iota(t) = (t w_1, ..., t w_N) mod 1`.
pub fn iota(omega: &[f64], t: f64) -> TorusPoint {
    TorusPoint::new(omega.iter().map(|w| w * t).collect())
}

/// One term `a cos(2 pi k.Theta) + b sin(2 pi k.Theta)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ForcingTerm {
    pub k: Vec<i64>,
    pub a: f64,
    pub b: f64,
}

/// Trigonometric polynomial on the torus together with the frequency
/// vector generating the quasi-periodic family `p_Theta(t) = p(Theta + iota(t))`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TorusForcing {
    omega: Vec<f64>,
    terms: Vec<ForcingTerm>,
    /// Per-term time frequency `2 pi (k . omega)`.
    #[serde(skip)]
    w: Vec<f64>,
}

impl TorusForcing {
    pub fn new(omega: Vec<f64>, terms: Vec<ForcingTerm>) -> Result<TorusForcing> {
        if omega.is_empty() {
            return Err(Error::Config("frequency vector must not be empty".into()));
        }
        if !omega.iter().all(|w| w.is_finite() && *w > 0.0) {
            return Err(Error::Config(format!(
                "frequencies must be positive, got {omega:?}"
            )));
        }
        for term in &terms {
            if term.k.len() != omega.len() {
                return Err(Error::Config(format!(
                    "term index {:?} has dimension {}, expected {}",
                    term.k,
                    term.k.len(),
                    omega.len()
                )));
            }
            if !(term.a.is_finite() && term.b.is_finite()) {
                return Err(Error::Config("non-finite forcing coefficient".into()));
            }
        }
        let w = terms
            .iter()
            .map(|t| {
                TAU * t
                    .k
                    .iter()
                    .zip(&omega)
                    .map(|(k, w)| *k as f64 * w)
                    .sum::<f64>()
            })
            .collect();
        Ok(TorusForcing { omega, terms, w })
    }

    /// The zero forcing on an N-torus.
    pub fn zero(dim: usize) -> TorusForcing {
        TorusForcing::new(vec![1.0; dim.max(1)], Vec::new()).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn terms(&self) -> &[ForcingTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.a == 0.0 && t.b == 0.0)
    }

    /// Same terms with all coefficients multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> TorusForcing {
        let terms = self
            .terms
            .iter()
            .map(|t| ForcingTerm {
                k: t.k.clone(),
                a: t.a * factor,
                b: t.b * factor,
            })
            .collect();
        TorusForcing::new(self.omega.clone(), terms).unwrap()
    }

    pub fn iota(&self, t: f64) -> TorusPoint {
        iota(&self.omega, t)
    }

    /// `p(Theta)` on the torus.
    pub fn eval_torus(&self, theta: &TorusPoint) -> f64 {
        self.eval(theta, 0.0, 0)
    }

    /// `d^order/dt^order p_Theta(t)`, derivatives applied term by term.
    pub fn eval_p(&self, theta: &TorusPoint, t: f64, order: u32) -> Result<f64> {
        if order > 4 {
            return Err(Error::Domain(format!(
                "forcing derivatives are only budgeted up to order 4, got {order}"
            )));
        }
        Ok(self.eval(theta, t, order))
    }

    /// Unchecked evaluation used on hot paths; `order` must be small.
    #[inline]
    pub(crate) fn eval(&self, theta: &TorusPoint, t: f64, order: u32) -> f64 {
        debug_assert_eq!(theta.dim(), self.dim());
        let mut sum = 0.0;
        for (term, &w) in self.terms.iter().zip(&self.w) {
            let base: f64 = term
                .k
                .iter()
                .zip(theta.coords())
                .map(|(k, th)| *k as f64 * th)
                .sum();
            let phase = TAU * base + w * t;
            let (sin, cos) = phase.sin_cos();
            // m-th derivative rotates (cos, sin) by m * pi/2 and scales by w^m
            let (da, db) = match order % 4 {
                0 => (cos, sin),
                1 => (-sin, cos),
                2 => (-cos, -sin),
                _ => (sin, -cos),
            };
            sum += w.powi(order as i32) * (term.a * da + term.b * db);
        }
        sum
    }

    /// Upper bound for `sup |d^order p_Theta / dt^order|`, uniform in Theta.
    pub fn derivative_sup_bound(&self, order: u32) -> f64 {
        self.terms
            .iter()
            .zip(&self.w)
            .map(|(t, &w)| (t.a.abs() + t.b.abs()) * w.abs().powi(order as i32))
            .sum()
    }

    /// Upper bound for the C^4 torus norm via coefficient sums:
    /// `sum_k (|a_k| + |b_k|) max(1, (2 pi |k|_1)^4)`.
    pub fn c4_norm_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let k1: f64 = t.k.iter().map(|k| k.abs() as f64).sum();
                (t.a.abs() + t.b.abs()) * (TAU * k1).powi(4).max(1.0)
            })
            .sum()
    }

    /// `max(1, |omega|_inf^4) * c4_norm_bound()`, a bound for the C^4 norm
    /// of every member `p_Theta` on the real line.
    pub fn c4_norm_bound_real_line(&self) -> f64 {
        let winf = self.omega.iter().cloned().fold(0.0_f64, f64::max);
        winf.powi(4).max(1.0) * self.c4_norm_bound()
    }

    /// `sum |a| + |b|`, used in shift-identity tolerances.
    pub fn coeff_l1(&self) -> f64 {
        self.terms.iter().map(|t| t.a.abs() + t.b.abs()).sum()
    }
}
