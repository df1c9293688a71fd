//! Three-moment fitting of a canonical order-2 phase-type distribution.
//!
//! The canonical form has `alpha = (eta, 1 - eta)` and an upper bidiagonal
//! generator with rates `xi1 <= xi2`. Moments outside the attainable region
//! are first pulled onto its boundary by [`feasibility_clamp`], then
//! [`fit_ph2`] solves for `(eta, xi1, xi2)` in closed form.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ph::PhaseType;

/// First three raw moments `E[X]`, `E[X^2]`, `E[X^3]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentTriple {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
}

impl MomentTriple {
    pub fn new(m1: f64, m2: f64, m3: f64) -> Result<Self> {
        for (name, v) in [("m1", m1), ("m2", m2), ("m3", m3)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be positive")));
            }
        }
        Ok(Self { m1, m2, m3 })
    }

    pub fn of(ph: &PhaseType) -> Self {
        Self { m1: ph.moment(1), m2: ph.moment(2), m3: ph.moment(3) }
    }

    /// Squared coefficient of variation `m2 / m1^2 - 1`.
    pub fn scv(&self) -> f64 {
        self.m2 / (self.m1 * self.m1) - 1.0
    }

    fn get(&self, n: u32) -> f64 {
        match n {
            1 => self.m1,
            2 => self.m2,
            3 => self.m3,
            _ => unreachable!(),
        }
    }
}

/// Repair applied by [`feasibility_clamp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClampRule {
    /// `m2` raised to `1.5 m1^2`.
    A1,
    /// `m3` raised to the lower edge of the band for `0.5 <= scv <= 1`.
    A2,
    /// `m3` lowered to `6 m1^3 scv`.
    A3,
    /// `m3` raised to `1.5 m1^3 (1 + scv)^2` for `scv > 1`.
    A4,
}

impl fmt::Display for ClampRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClampRule::A1 => "a1",
            ClampRule::A2 => "a2",
            ClampRule::A3 => "a3",
            ClampRule::A4 => "a4",
        })
    }
}

/// Auxiliary quantities of the closed-form solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl FitCoefficients {
    pub fn of(mo: &MomentTriple) -> Self {
        let MomentTriple { m1, m2, m3 } = *mo;
        let c = 3.0 * m2 * m2 - 2.0 * m1 * m3;
        let d = 2.0 * m1 * m1 - m2;
        let b = 3.0 * m1 * m2 - m3;
        Self { a: b * b - 6.0 * c * d, b, c, d }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub clamped: MomentTriple,
    pub clamp_flags: Vec<ClampRule>,
    pub coefficients: FitCoefficients,
    pub eta: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub distribution: PhaseType,
}

/// Third-moment band `[lower, upper]` for a given mean and scv; `upper` is
/// infinite once `scv > 1`. Lower edge is exclusive in that case.
pub fn third_moment_band(m1: f64, scv: f64) -> (f64, f64) {
    let m1_3 = m1 * m1 * m1;
    if scv <= 1.0 {
        let lower = 3.0 * m1_3 * (3.0 * scv - 1.0 + std::f64::consts::SQRT_2 * (1.0 - scv).powf(1.5));
        (lower, 6.0 * m1_3 * scv)
    } else {
        (1.5 * m1_3 * (1.0 + scv).powi(2), f64::INFINITY)
    }
}

/// Pulls a moment triple into the PH(2)-attainable region.
///
/// The variance repair runs first and the scv is recomputed before the
/// third-moment rules are checked. At most one of `a2`/`a3`/`a4` fires.
pub fn feasibility_clamp(raw: MomentTriple) -> Result<(MomentTriple, Vec<ClampRule>)> {
    let MomentTriple { m1, mut m2, mut m3 } = MomentTriple::new(raw.m1, raw.m2, raw.m3)?;
    let mut flags = Vec::new();

    let floor = 1.5 * m1 * m1;
    if m2 < floor {
        m2 = floor;
        flags.push(ClampRule::A1);
    }
    // rounding can leave m2 / m1^2 - 1 a hair below 0.5 after the repair
    let scv = (m2 / (m1 * m1) - 1.0).max(0.5);
    let (lower, upper) = third_moment_band(m1, scv);
    if scv <= 1.0 {
        if m3 < lower {
            m3 = lower;
            flags.push(ClampRule::A2);
        } else if m3 > upper {
            m3 = upper;
            flags.push(ClampRule::A3);
        }
    } else if m3 < lower {
        m3 = lower;
        flags.push(ClampRule::A4);
    }
    Ok((MomentTriple { m1, m2, m3 }, flags))
}

/// Solves for the canonical PH(2) with the given (already clamped) moments.
pub fn fit_ph2(clamped: MomentTriple) -> Result<FitOutcome> {
    let mo = MomentTriple::new(clamped.m1, clamped.m2, clamped.m3)?;
    let coeff = FitCoefficients::of(&mo);
    let FitCoefficients { mut a, b, c, d } = coeff;
    let MomentTriple { m1, m2, m3 } = mo;

    let c_scale = (3.0 * m2 * m2).max(2.0 * m1 * m3);
    let (eta, xi1, xi2) = if c.abs() <= 1e-12 * c_scale {
        // c = 0 is the exponential point when scv = 1; for scv > 1 it is the
        // open edge of the region, reachable only in the limit xi2 -> inf.
        if (mo.scv() - 1.0).abs() > 1e-8 {
            return Err(Error::Infeasible(format!(
                "c = {c:e} vanishes at scv = {} > 1: the triple sits on the open boundary \
                 m3 = 1.5 m1^3 (1 + scv)^2, which no finite-rate PH(2) attains",
                mo.scv()
            )));
        }
        (0.0, 1.0 / m1, 1.0 / m1)
    } else {
        let a_scale = b * b + (6.0 * c * d).abs();
        if a < 0.0 {
            if a >= -1e-12 * a_scale {
                a = 0.0;
            } else {
                return Err(Error::Infeasible(format!("a = b^2 - 6cd = {a:e} < 0 (b = {b}, c = {c}, d = {d})")));
            }
        }
        // The displayed root formulas, rearranged to avoid cancellation:
        // (b + r)(b - r) = 6cd, so both roots follow from the larger of |b +- r|.
        let root = a.sqrt();
        let q = b + root.copysign(b);
        let (r1, r2) = (q / c, 6.0 * d / q);
        let (xi1, xi2) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        (mixing_weight(&mo, xi1, xi2), xi1, xi2)
    };

    let eta = if (-1e-9..0.0).contains(&eta) {
        0.0
    } else if eta > 1.0 && eta <= 1.0 + 1e-9 {
        1.0
    } else {
        eta
    };
    if !(0.0..=1.0).contains(&eta) || !(xi1 > 0.0 && xi1.is_finite() && xi2.is_finite()) {
        return Err(Error::Infeasible(format!(
            "solution out of range: eta = {eta}, xi1 = {xi1}, xi2 = {xi2} (a = {a}, b = {b}, c = {c}, d = {d})"
        )));
    }
    let distribution = PhaseType::coxian2(eta, xi1, xi2)?;
    Ok(FitOutcome { clamped: mo, clamp_flags: Vec::new(), coefficients: coeff, eta, xi1, xi2, distribution })
}

/// `eta` from whichever moment equation is most sensitive to it. Each is
/// linear in `eta` once the rates are known:
/// `m_n / n! = eta (u^n + .. + u v^(n-1)) + v^n`, with `u = 1/xi1`, `v = 1/xi2`.
fn mixing_weight(mo: &MomentTriple, xi1: f64, xi2: f64) -> f64 {
    let (u, v) = (1.0 / xi1, 1.0 / xi2);
    let eqs = [
        (mo.m1, mo.m1 - v, u),
        (mo.m2 / 2.0, mo.m2 / 2.0 - v * v, u * u + u * v),
        (mo.m3 / 6.0, mo.m3 / 6.0 - v * v * v, u * u * u + u * u * v + u * v * v),
    ];
    let (_, rhs, slope) = eqs.into_iter().max_by(|x, y| (x.2 / x.0).total_cmp(&(y.2 / y.0))).expect("three equations");
    rhs / slope
}

/// Clamps and fits in one go, recording which repairs fired.
pub fn fit(raw: MomentTriple) -> Result<FitOutcome> {
    let (clamped, flags) = feasibility_clamp(raw)?;
    let mut outcome = fit_ph2(clamped)?;
    outcome.clamp_flags = flags;
    Ok(outcome)
}

/// Largest relative deviation between the fitted and the clamped moments.
pub fn verify_fit(outcome: &FitOutcome) -> f64 {
    (1..=3)
        .map(|n| {
            let want = outcome.clamped.get(n);
            (outcome.distribution.moment(n) - want).abs() / want
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple(m1: f64, m2: f64, m3: f64) -> MomentTriple {
        MomentTriple::new(m1, m2, m3).unwrap()
    }

    #[test]
    fn exponential_moments_need_no_repair() {
        let (c, flags) = feasibility_clamp(triple(1.0, 2.0, 6.0)).unwrap();
        assert_eq!(c, triple(1.0, 2.0, 6.0));
        assert!(flags.is_empty());
    }

    #[test]
    fn low_variance_is_raised() {
        let (c, flags) = feasibility_clamp(triple(1.0, 1.2, 3.0)).unwrap();
        assert_eq!(c.m2, 1.5);
        assert_eq!(flags, vec![ClampRule::A1]);
    }

    #[test]
    fn heavy_tail_third_moment_is_raised() {
        let (c, flags) = feasibility_clamp(triple(1.0, 4.0, 10.0)).unwrap();
        assert_eq!(c.m3, 24.0);
        assert_eq!(flags, vec![ClampRule::A4]);
    }

    #[test]
    fn band_rules() {
        // scv = 0.75: band [3 (1.25 + sqrt2 * 0.125), 4.5]
        let (lower, upper) = third_moment_band(1.0, 0.75);
        let (c, flags) = feasibility_clamp(triple(1.0, 1.75, 3.0)).unwrap();
        assert_eq!((c.m3, flags), (lower, vec![ClampRule::A2]));
        let (c, flags) = feasibility_clamp(triple(1.0, 1.75, 5.0)).unwrap();
        assert_eq!((c.m3, flags), (upper, vec![ClampRule::A3]));
        assert_eq!(upper, 4.5);
    }

    #[test]
    fn rejects_nonpositive_moments() {
        assert!(MomentTriple::new(0.0, 1.0, 1.0).is_err());
        assert!(feasibility_clamp(MomentTriple { m1: 1.0, m2: -1.0, m3: 1.0 }).is_err());
    }

    #[test]
    fn fits_erlang_two() {
        let out = fit_ph2(triple(1.0, 1.5, 3.0)).unwrap();
        let FitCoefficients { a, b, c, d } = out.coefficients;
        assert_eq!((c, d, b, a), (0.75, 0.5, 1.5, 0.0));
        assert_eq!((out.eta, out.xi1, out.xi2), (1.0, 2.0, 2.0));
        assert!(verify_fit(&out) < 1e-12);
    }

    #[test]
    fn fits_exponential_through_c_zero_branch() {
        let out = fit_ph2(triple(1.0, 2.0, 6.0)).unwrap();
        assert_eq!(out.coefficients.c, 0.0);
        assert_eq!(out.eta, 0.0);
        assert_eq!(out.xi2, 1.0);
        assert!(verify_fit(&out) < 1e-12);
    }

    #[test]
    fn open_boundary_is_reported() {
        let err = fit(triple(1.0, 4.0, 10.0)).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn hyper_exponential_round_trip() {
        let ph = PhaseType::hyper_exponential(&[0.5, 0.5], &[3.0, 10.0]).unwrap();
        let out = fit(MomentTriple::of(&ph)).unwrap();
        assert!(out.clamp_flags.is_empty());
        assert!(out.coefficients.c < 0.0);
        assert!(verify_fit(&out) < 1e-8);
        assert!(out.xi1 <= out.xi2);
    }

    #[test]
    fn positive_c_branch_orders_rates() {
        // hypoexponential: two distinct sequential rates
        let ph = PhaseType::new(vec![1.0, 0.0], vec![vec![-1.0, 1.0], vec![0.0, -3.0]]).unwrap();
        let out = fit(MomentTriple::of(&ph)).unwrap();
        assert!(out.coefficients.c > 0.0);
        assert!(out.xi1 < out.xi2);
        assert!((out.xi1 - 1.0).abs() < 1e-10 && (out.xi2 - 3.0).abs() < 1e-10);
        assert!(verify_fit(&out) < 1e-10);
    }
}
