//! Exact rationals and the small numeric trait the support engine is
//! generic over.

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Rational = num_rational::BigRational;

/// Tolerance for cumulative-mass comparisons on floating inputs.
pub const MASS_TOL: f64 = 1e-9;

pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: usize) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

pub fn ceil_to_usize(r: &Rational) -> usize {
    r.ceil().to_integer().to_usize().unwrap_or(0)
}

pub fn floor_to_usize(r: &Rational) -> usize {
    r.floor().to_integer().to_usize().unwrap_or(0)
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Exact value of a finite float.
pub fn from_f64(x: f64) -> Rational {
    Rational::from_float(x).expect("finite float")
}

/// Nearest multiple of `2^-bits`.
pub fn dyadic(x: f64, bits: u32) -> Rational {
    let scale = (1u64 << bits) as f64;
    let n = (x * scale).round();
    Rational::new(BigInt::from(n as i64), BigInt::from(1u64 << bits))
}

/// Simplest fraction within `tol` of `x` with denominator at most `max_den`,
/// found by walking the continued-fraction convergents.
pub fn simplest_near(x: f64, tol: f64, max_den: u64) -> Option<Rational> {
    if !x.is_finite() {
        return None;
    }
    let (mut h0, mut h1) = (0i128, 1i128);
    let (mut k0, mut k1) = (1i128, 0i128);
    let mut v = x;
    for _ in 0..64 {
        let a = v.floor();
        if a.abs() > 1e15 {
            return None;
        }
        let a = a as i128;
        let h2 = a * h1 + h0;
        let k2 = a * k1 + k0;
        if k2 > max_den as i128 {
            return None;
        }
        if ((h2 as f64) / (k2 as f64) - x).abs() <= tol {
            return Some(Rational::new(BigInt::from(h2), BigInt::from(k2)));
        }
        let frac = v - a as f64;
        if frac.abs() < 1e-300 {
            return None;
        }
        v = 1.0 / frac;
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
    }
    None
}

/// A solution of `a·x = b` with free variables set to zero, or `None` when
/// the system is inconsistent.
pub fn solve_linear(a: &[Vec<Rational>], b: &[Rational]) -> Option<Vec<Rational>> {
    let cols = a.first().map_or(0, |r| r.len());
    let mut m: Vec<Vec<Rational>> =
        a.iter().zip(b).map(|(r, v)| r.iter().cloned().chain(std::iter::once(v.clone())).collect()).collect();
    let mut pivots = Vec::new();
    let mut top = 0;
    for col in 0..cols {
        let Some(p) = (top..m.len()).find(|&i| !m[i][col].is_zero()) else { continue };
        m.swap(top, p);
        let inv = m[top][col].recip();
        for v in m[top].iter_mut() {
            *v *= &inv;
        }
        for i in 0..m.len() {
            if i != top && !m[i][col].is_zero() {
                let f = m[i][col].clone();
                for j in col..=cols {
                    let d = &f * &m[top][j];
                    m[i][j] -= d;
                }
            }
        }
        pivots.push(col);
        top += 1;
    }
    if m[top..].iter().any(|r| !r[cols].is_zero()) {
        return None;
    }
    let mut x = vec![<Rational as Zero>::zero(); cols];
    for (row, &p) in pivots.iter().enumerate() {
        x[p] = m[row][cols].clone();
    }
    Some(x)
}

/// Numbers the support engine can run on: exact rationals or floats with a
/// fixed tolerance.
pub trait Scalar: Clone + std::fmt::Debug + Send + Sync {
    fn zero() -> Self;
    fn plus(&self, other: &Self) -> Self;
    fn from_rational(r: &Rational) -> Self;
    fn as_f64(&self) -> f64;
    /// `self ≥ other`, allowing the scalar's tolerance.
    fn reaches(&self, other: &Self) -> bool;
    /// Strictly positive beyond tolerance.
    fn positive(&self) -> bool;
    /// Strictly below one beyond tolerance.
    fn below_one(&self) -> bool;
}

impl Scalar for Rational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn plus(&self, other: &Self) -> Self {
        self + other
    }
    fn from_rational(r: &Rational) -> Self {
        r.clone()
    }
    fn as_f64(&self) -> f64 {
        to_f64(self)
    }
    fn reaches(&self, other: &Self) -> bool {
        self >= other
    }
    fn positive(&self) -> bool {
        self.is_positive()
    }
    fn below_one(&self) -> bool {
        self < &Rational::one()
    }
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn plus(&self, other: &Self) -> Self {
        self + other
    }
    fn from_rational(r: &Rational) -> Self {
        to_f64(r)
    }
    fn as_f64(&self) -> f64 {
        *self
    }
    fn reaches(&self, other: &Self) -> bool {
        *self >= other - MASS_TOL
    }
    fn positive(&self) -> bool {
        *self > MASS_TOL
    }
    fn below_one(&self) -> bool {
        *self < 1.0 - MASS_TOL
    }
}
