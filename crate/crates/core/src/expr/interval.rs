//! Closed real intervals with outward-rounded arithmetic.
//!
//! Point intervals (`lo == hi`) propagate through every operation using the
//! same floating-point operation as pointwise evaluation, so a constant
//! sub-expression bounds to exactly the value `eval` would produce. Any
//! non-degenerate result is widened by one ulp on each side.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ExprError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// Stationary points of sinc on (0, ∞) are the positive roots of tan x = x.
fn sinc_stationary_points(limit: f64) -> Vec<f64> {
    let mut roots = Vec::new();
    let mut k = 1.0;
    loop {
        // root lies in (kπ, kπ + π/2); start Newton just below the asymptote
        let mut x = k * PI + FRAC_PI_2 - 1.0 / (k * PI + FRAC_PI_2);
        for _ in 0..50 {
            let f = x * x.cos() - x.sin();
            let df = -x * x.sin();
            let next = x - f / df;
            if (next - x).abs() < 1e-15 * x {
                x = next;
                break;
            }
            x = next;
        }
        if x > limit {
            break;
        }
        roots.push(x);
        k += 1.0;
    }
    roots
}

/// Global minimum of sinc, attained at the first nonzero stationary point.
const SINC_GLOBAL_MIN: f64 = -0.217_233_628_211_221_7;

pub(crate) fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

fn down(v: f64) -> f64 {
    if v.is_finite() {
        v.next_down()
    } else {
        v
    }
}

fn up(v: f64) -> f64 {
    if v.is_finite() {
        v.next_up()
    } else {
        v
    }
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "interval bounds out of order: [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn symmetric(r: f64) -> Self {
        Self::new(-r.abs(), r.abs())
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    /// Intersection, or `None` when disjoint.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    fn outward(lo: f64, hi: f64) -> Interval {
        Interval::new(down(lo), up(hi))
    }

    fn from_candidates(values: &[f64]) -> Interval {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::outward(lo, hi)
    }

    pub fn add(self, rhs: Interval) -> Interval {
        if self.is_point() && rhs.is_point() {
            return Interval::point(self.lo + rhs.lo);
        }
        Self::outward(self.lo + rhs.lo, self.hi + rhs.hi)
    }

    pub fn sub(self, rhs: Interval) -> Interval {
        if self.is_point() && rhs.is_point() {
            return Interval::point(self.lo - rhs.lo);
        }
        Self::outward(self.lo - rhs.hi, self.hi - rhs.lo)
    }

    pub fn neg(self) -> Interval {
        Interval { lo: -self.hi, hi: -self.lo }
    }

    pub fn mul(self, rhs: Interval) -> Interval {
        if self.is_point() && rhs.is_point() {
            return Interval::point(self.lo * rhs.lo);
        }
        Self::from_candidates(&[
            self.lo * rhs.lo,
            self.lo * rhs.hi,
            self.hi * rhs.lo,
            self.hi * rhs.hi,
        ])
    }

    pub fn div(self, rhs: Interval) -> Result<Interval, ExprError> {
        if rhs.contains(0.0) {
            return Err(ExprError::Domain(format!(
                "divisor interval [{}, {}] contains zero",
                rhs.lo, rhs.hi
            )));
        }
        if self.is_point() && rhs.is_point() {
            return Ok(Interval::point(self.lo / rhs.lo));
        }
        Ok(Self::from_candidates(&[
            self.lo / rhs.lo,
            self.lo / rhs.hi,
            self.hi / rhs.lo,
            self.hi / rhs.hi,
        ]))
    }

    pub fn abs(self) -> Interval {
        if self.lo >= 0.0 {
            self
        } else if self.hi <= 0.0 {
            self.neg()
        } else {
            Interval { lo: 0.0, hi: (-self.lo).max(self.hi) }
        }
    }

    pub fn powi(self, k: i32) -> Result<Interval, ExprError> {
        if self.is_point() {
            let v = self.lo.powi(k);
            if !v.is_finite() {
                return Err(ExprError::Domain(format!("{}^{k} is not finite", self.lo)));
            }
            return Ok(Interval::point(v));
        }
        match k {
            0 => Ok(Interval::point(1.0)),
            k if k < 0 => Interval::point(1.0).div(self.powi(-k)?),
            k if k % 2 == 1 => Ok(Self::outward(self.lo.powi(k), self.hi.powi(k))),
            k => {
                let a = self.abs();
                let r = Self::outward(a.lo.powi(k), a.hi.powi(k));
                Ok(Interval::new(r.lo.max(0.0), r.hi))
            }
        }
    }

    pub fn exp(self) -> Interval {
        if self.is_point() {
            return Interval::point(self.lo.exp());
        }
        Interval::new(down(self.lo.exp()).max(0.0), up(self.hi.exp()))
    }

    /// Does `[lo, hi]` contain a point of the form `offset + k·period`?
    fn hits(&self, offset: f64, period: f64) -> bool {
        let k = ((self.lo - offset) / period).ceil();
        offset + k * period <= self.hi
    }

    pub fn sin(self) -> Interval {
        if self.is_point() {
            return Interval::point(self.lo.sin());
        }
        if self.width() >= TAU {
            return Interval::new(-1.0, 1.0);
        }
        let mut r = Self::from_candidates(&[self.lo.sin(), self.hi.sin()]);
        if self.hits(FRAC_PI_2, TAU) {
            r.hi = 1.0;
        }
        if self.hits(-FRAC_PI_2, TAU) {
            r.lo = -1.0;
        }
        r.clamp_unit()
    }

    pub fn cos(self) -> Interval {
        if self.is_point() {
            return Interval::point(self.lo.cos());
        }
        if self.width() >= TAU {
            return Interval::new(-1.0, 1.0);
        }
        let mut r = Self::from_candidates(&[self.lo.cos(), self.hi.cos()]);
        if self.hits(0.0, TAU) {
            r.hi = 1.0;
        }
        if self.hits(PI, TAU) {
            r.lo = -1.0;
        }
        r.clamp_unit()
    }

    fn clamp_unit(self) -> Interval {
        Interval { lo: self.lo.max(-1.0), hi: self.hi.min(1.0) }
    }

    pub fn tan(self) -> Result<Interval, ExprError> {
        if self.is_point() {
            if self.lo.cos().abs() < 1e-15 {
                return Err(ExprError::Domain(format!("tan pole at {}", self.lo)));
            }
            return Ok(Interval::point(self.lo.tan()));
        }
        if self.width() >= PI || self.hits(FRAC_PI_2, PI) {
            return Err(ExprError::Domain(format!(
                "tan interval [{}, {}] crosses a pole",
                self.lo, self.hi
            )));
        }
        Ok(Self::outward(self.lo.tan(), self.hi.tan()))
    }

    pub fn sinc(self) -> Interval {
        if self.is_point() {
            return Interval::point(sinc(self.lo));
        }
        let reach = self.lo.abs().max(self.hi.abs());
        if reach > 1e4 {
            return Interval::new(SINC_GLOBAL_MIN - 1e-12, 1.0);
        }
        let mut candidates = vec![sinc(self.lo), sinc(self.hi)];
        if self.contains(0.0) {
            candidates.push(1.0);
        }
        for s in sinc_stationary_points(reach) {
            for c in [s, -s] {
                if self.contains(c) {
                    candidates.push(sinc(c));
                }
            }
        }
        // stationary points are located to ~1e-15; the value error there is
        // second order, a fixed absolute pad covers it
        let r = Self::from_candidates(&candidates);
        Interval { lo: r.lo - 1e-14, hi: r.hi.min(1.0) }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sin_critical_points() {
        let r = Interval::new(0.0, 2.0).sin();
        assert_eq!(r.hi, 1.0);
        assert!(r.lo <= 0.0 && r.lo > -1e-15);
        let r = Interval::new(3.0, 5.0).sin();
        assert_eq!(r.lo, -1.0);
    }

    #[test]
    fn cos_over_symmetric_box() {
        let r = Interval::symmetric(0.4).cos();
        assert_eq!(r.hi, 1.0);
        assert!((r.lo - 0.4f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn tan_pole_is_reported() {
        assert!(Interval::new(1.0, 2.0).tan().is_err());
        assert!(Interval::new(-0.4, 0.4).tan().is_ok());
    }

    #[test]
    fn sinc_encloses_first_trough() {
        let r = Interval::new(3.0, 6.0).sinc();
        assert!(r.lo <= SINC_GLOBAL_MIN);
        assert!(r.lo > SINC_GLOBAL_MIN - 1e-12);
    }

    #[test]
    fn division_by_zero_interval() {
        assert!(Interval::point(1.0).div(Interval::new(-1.0, 1.0)).is_err());
    }

    #[test]
    fn even_power_of_straddling_interval() {
        let r = Interval::new(-2.0, 1.0).powi(2).unwrap();
        assert_eq!(r.lo, 0.0);
        assert!(r.hi >= 4.0);
    }
}
