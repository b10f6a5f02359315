//! Closed intervals with outward rounding.
//!
//! The four arithmetic operations are correctly rounded in IEEE 754, so
//! widening each result by one ulp in both directions encloses the exact
//! value. Library transcendental functions carry no such guarantee; results
//! that pass through them are widened by [`SLACK`] relative instead.

use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Relative widening applied to values computed by non-correctly-rounded
/// functions.
pub const SLACK: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "empty interval [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    /// Encloses a value computed with relative error well below [`SLACK`].
    pub fn approx(x: f64) -> Self {
        Self::new(x, x).widen(SLACK)
    }

    pub fn widen(self, rel: f64) -> Self {
        let pad = |v: f64| v.abs() * rel + f64::MIN_POSITIVE;
        Self::new(self.lo - pad(self.lo), self.hi + pad(self.hi))
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn split(&self) -> (Self, Self) {
        let m = self.mid();
        (Self::new(self.lo, m), Self::new(m, self.hi))
    }

    /// Image under a non-decreasing function evaluated to within [`SLACK`].
    pub fn map_increasing(self, f: impl Fn(f64) -> f64) -> Self {
        let lo = f(self.lo);
        let hi = f(self.hi);
        Self::new(lo, hi).widen(SLACK)
    }

    /// Image under a non-increasing function evaluated to within [`SLACK`].
    pub fn map_decreasing(self, f: impl Fn(f64) -> f64) -> Self {
        let lo = f(self.hi);
        let hi = f(self.lo);
        Self::new(lo, hi).widen(SLACK)
    }

    fn outward(lo: f64, hi: f64) -> Self {
        Self::new(lo.next_down(), hi.next_up())
    }

    /// Integer power of an interval with a positive lower end.
    pub fn powi_pos(self, k: i32) -> Self {
        debug_assert!(self.lo > 0.0);
        let mut acc = Interval::point(1.0);
        for _ in 0..k.unsigned_abs() {
            acc = acc * self;
        }
        if k < 0 {
            Interval::point(1.0) / acc
        } else {
            acc
        }
    }
}

impl Add for Interval {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::outward(self.lo + o.lo, self.hi + o.hi)
    }
}

impl Sub for Interval {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::outward(self.lo - o.hi, self.hi - o.lo)
    }
}

impl Neg for Interval {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.hi, -self.lo)
    }
}

impl Mul for Interval {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let c = [
            self.lo * o.lo,
            self.lo * o.hi,
            self.hi * o.lo,
            self.hi * o.hi,
        ];
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::outward(lo, hi)
    }
}

impl Div for Interval {
    type Output = Self;
    /// Panics in debug builds when the divisor straddles zero.
    fn div(self, o: Self) -> Self {
        debug_assert!(
            o.lo > 0.0 || o.hi < 0.0,
            "division by interval containing 0"
        );
        let c = [
            self.lo / o.lo,
            self.lo / o.hi,
            self.hi / o.lo,
            self.hi / o.hi,
        ];
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::outward(lo, hi)
    }
}

impl From<f64> for Interval {
    fn from(x: f64) -> Self {
        Self::point(x)
    }
}
