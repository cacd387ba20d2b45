//! Scalar abstraction shared by the kernel formulas.
//!
//! Every closed form in this crate is a rational expression in the walk
//! parameter `alpha` and in powers of `beta = (1 - alpha) / alpha`, so the
//! same code evaluates exactly over [`BigRational`], exactly over a real
//! quadratic extension [`QuadRat`] (needed by resolvent conjugation at
//! irrational eigenvalues), or approximately over `f64`. The [`Scalar`] trait
//! is the common interface.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, Zero};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{DlmlError, Result};

/// Builds a `BigRational` from a signed numerator and denominator.
///
/// Panics if `den == 0`.
pub fn big_ratio(num: i64, den: i64) -> BigRational {
    assert!(den != 0, "zero denominator");
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Field scalar for kernel formulas: exact rationals, a real quadratic
/// extension, or `f64`.
///
/// Implementations must form a field containing the rationals; `powi`
/// accepts negative exponents (the element must then be invertible).
pub trait Scalar:
    Clone
    + PartialEq
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Whether arithmetic in this scalar is exact (`true` for the rational
    /// and quadratic-extension types, `false` for floats). Decides whether
    /// a vanishing residual certifies an identity.
    const EXACT: bool;

    /// Additive identity.
    fn zero() -> Self;
    /// Multiplicative identity.
    fn one() -> Self;
    /// Embeds the rational `num / den`. Panics if `den == 0`.
    fn from_ratio(num: i64, den: i64) -> Self;
    /// Embeds an arbitrary rational.
    fn from_rational(r: &BigRational) -> Self;
    /// Exact zero test (used to detect degenerate denominators before
    /// dividing; for `f64` this is a literal comparison with `0.0`).
    fn is_zero(&self) -> bool;
    /// Integer power, negative exponents allowed for invertible elements.
    fn powi(&self, e: i64) -> Self;
    /// Approximate numeric value.
    fn to_f64(&self) -> f64;
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        num as f64 / den as f64
    }
    fn from_rational(r: &BigRational) -> Self {
        rational_to_f64(r)
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn powi(&self, e: i64) -> Self {
        f64::powi(*self, e as i32)
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for BigRational {
    const EXACT: bool = true;

    fn zero() -> Self {
        <BigRational as Zero>::zero()
    }
    fn one() -> Self {
        <BigRational as One>::one()
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        big_ratio(num, den)
    }
    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn powi(&self, e: i64) -> Self {
        if e >= 0 {
            num::pow::pow(self.clone(), e as usize)
        } else {
            assert!(!Zero::is_zero(self), "inverting zero");
            num::pow::pow(self.recip(), (-e) as usize)
        }
    }
    fn to_f64(&self) -> f64 {
        rational_to_f64(self)
    }
}

/// Converts a `BigRational` to `f64` without overflowing intermediate
/// integer-to-float casts: falls back to a scaled division for huge terms.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    // `num` provides ToPrimitive for BigRational; it handles large
    // numerators/denominators by binary scaling.
    num::ToPrimitive::to_f64(r).unwrap_or(f64::NAN)
}

/// Solves a dense rational linear system by Gaussian elimination with
/// first-nonzero pivoting. Returns `None` for singular systems. Intended
/// for the small exact solves (absorbing chains, restricted Green kernels
/// on small balls); quadratic memory, cubic time.
pub fn solve_dense_rational(
    mut a: Vec<Vec<BigRational>>,
    mut b: Vec<BigRational>,
) -> Option<Vec<BigRational>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).find(|&row| !num::Zero::is_zero(&a[row][col]))?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col].clone();
        for row in 0..n {
            if row == col || num::Zero::is_zero(&a[row][col]) {
                continue;
            }
            let f = &a[row][col] / &p;
            for k in col..n {
                let sub = &f * &a[col][k];
                a[row][k] -= sub;
            }
            let sub = &f * &b[col];
            b[row] -= sub;
        }
    }
    Some((0..n).map(|i| &b[i] / &a[i][i]).collect())
}

/// Element `a + b * sqrt(d)` of the real quadratic field `Q(sqrt(d))`.
///
/// `d` is a square-free nonnegative integer; `d == 0` encodes a plain
/// rational (then `b == 0`). Values with different nonzero `d` cannot be
/// combined; arithmetic panics on such a mix, since it indicates mixed-up
/// parameters rather than a recoverable condition. Construction from square
/// roots normalizes perfect squares down to rationals.
#[derive(Clone, Debug)]
pub struct QuadRat {
    a: BigRational,
    b: BigRational,
    d: BigInt,
}

impl QuadRat {
    /// The rational element `a`.
    pub fn from_big(a: BigRational) -> Self {
        QuadRat {
            a,
            b: Zero::zero(),
            d: Zero::zero(),
        }
    }

    /// Builds `a + b * sqrt(d)`. `d` must be square-free; `b == 0` collapses
    /// to a rational.
    pub fn new(a: BigRational, b: BigRational, d: BigInt) -> Result<Self> {
        if d.is_negative() {
            return Err(DlmlError::Domain(
                "negative discriminant for a real quadratic element".into(),
            ));
        }
        let mut v = QuadRat { a, b, d };
        v.normalize();
        Ok(v)
    }

    /// Exact square root of a nonnegative rational, as an element of the
    /// appropriate quadratic field (or of `Q` when the input is a perfect
    /// square).
    pub fn sqrt_of_rational(x: &BigRational) -> Result<Self> {
        if x.is_negative() {
            return Err(DlmlError::Domain(
                "square root of a negative rational".into(),
            ));
        }
        if Zero::is_zero(x) {
            return Ok(QuadRat::from_big(Zero::zero()));
        }
        // sqrt(n/m) = sqrt(n*m) / m.
        let n = x.numer().clone();
        let m = x.denom().clone();
        let s = &n * &m;
        let (square, free) = split_square(&s);
        // sqrt(s) = square * sqrt(free).
        let coeff = BigRational::new(square, m);
        if free.is_one() {
            Ok(QuadRat::from_big(coeff))
        } else {
            QuadRat::new(Zero::zero(), coeff, free)
        }
    }

    /// Rational part.
    pub fn rational_part(&self) -> &BigRational {
        &self.a
    }

    /// Coefficient of `sqrt(d)`.
    pub fn radical_part(&self) -> &BigRational {
        &self.b
    }

    /// The discriminant `d` (zero for rational elements).
    pub fn discriminant(&self) -> &BigInt {
        &self.d
    }

    /// Returns the value as an exact rational, if it is one.
    pub fn as_rational(&self) -> Option<&BigRational> {
        if Zero::is_zero(&self.b) {
            Some(&self.a)
        } else {
            None
        }
    }

    fn normalize(&mut self) {
        if Zero::is_zero(&self.b) {
            self.d = Zero::zero();
        }
    }

    /// Common discriminant for a binary operation; panics on a genuine mix.
    fn join_disc(&self, other: &Self) -> BigInt {
        if Zero::is_zero(&self.d) {
            other.d.clone()
        } else if Zero::is_zero(&other.d) || self.d == other.d {
            self.d.clone()
        } else {
            panic!(
                "mixed quadratic extensions: sqrt({}) vs sqrt({})",
                self.d, other.d
            );
        }
    }

    /// Multiplicative inverse. Panics on zero.
    fn inv(&self) -> Self {
        assert!(!Scalar::is_zero(self), "inverting zero");
        // 1 / (a + b sqrt d) = (a - b sqrt d) / (a^2 - b^2 d).
        let d_rat = BigRational::from(self.d.clone());
        let norm = &self.a * &self.a - &self.b * &self.b * d_rat;
        assert!(
            !Zero::is_zero(&norm),
            "zero field norm: discriminant is a perfect square"
        );
        let mut v = QuadRat {
            a: &self.a / &norm,
            b: -(&self.b / &norm),
            d: self.d.clone(),
        };
        v.normalize();
        v
    }
}

/// Splits `s > 0` as `square^2 * free` with `free` square-free.
///
/// Trial division; the discriminants arising here come from small walk
/// parameters, so inputs are tiny.
fn split_square(s: &BigInt) -> (BigInt, BigInt) {
    let mut square: BigInt = One::one();
    let mut rem = s.clone();
    let mut p: BigInt = BigInt::from(2);
    while &p * &p <= rem {
        let p2 = &p * &p;
        while (&rem % &p2).is_zero() {
            rem /= &p2;
            square *= &p;
        }
        p += 1;
    }
    (square, rem)
}

impl PartialEq for QuadRat {
    fn eq(&self, other: &Self) -> bool {
        self.a == other.a
            && self.b == other.b
            && (Zero::is_zero(&self.b) || self.d == other.d)
    }
}

impl QuadRat {
    /// Exact sign of `a + b sqrt(d)`: compares `a^2` against `b^2 d` when the
    /// two parts pull in different directions.
    fn sign(&self) -> i8 {
        let sa = if self.a.is_positive() {
            1i8
        } else if Zero::is_zero(&self.a) {
            0
        } else {
            -1
        };
        let sb = if self.b.is_positive() {
            1i8
        } else if Zero::is_zero(&self.b) {
            0
        } else {
            -1
        };
        match (sa, sb) {
            (s, 0) => s,
            (0, s) => s,
            (s, t) if s == t => s,
            (s, _) => {
                // a and b sqrt(d) have opposite signs: the larger magnitude
                // wins; compare a^2 with b^2 d exactly.
                let a2 = &self.a * &self.a;
                let b2d = &self.b * &self.b * BigRational::from(self.d.clone());
                if a2 > b2d {
                    s
                } else if a2 < b2d {
                    -s
                } else {
                    0
                }
            }
        }
    }
}

impl PartialOrd for QuadRat {
    /// Exact order within one extension; panics on a genuine mix of
    /// discriminants (like the arithmetic operators).
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        let diff = self.clone() - other.clone();
        Some(diff.sign().cmp(&0))
    }
}

impl fmt::Display for QuadRat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if Zero::is_zero(&self.b) {
            write!(f, "{}", self.a)
        } else if Zero::is_zero(&self.a) {
            write!(f, "{}*sqrt({})", self.b, self.d)
        } else {
            write!(f, "{} + {}*sqrt({})", self.a, self.b, self.d)
        }
    }
}

impl Add for QuadRat {
    type Output = QuadRat;
    fn add(self, rhs: QuadRat) -> QuadRat {
        let d = self.join_disc(&rhs);
        let mut v = QuadRat {
            a: self.a + rhs.a,
            b: self.b + rhs.b,
            d,
        };
        v.normalize();
        v
    }
}

impl Sub for QuadRat {
    type Output = QuadRat;
    fn sub(self, rhs: QuadRat) -> QuadRat {
        self + (-rhs)
    }
}

impl Neg for QuadRat {
    type Output = QuadRat;
    fn neg(self) -> QuadRat {
        QuadRat {
            a: -self.a,
            b: -self.b,
            d: self.d,
        }
    }
}

impl Mul for QuadRat {
    type Output = QuadRat;
    fn mul(self, rhs: QuadRat) -> QuadRat {
        let d = self.join_disc(&rhs);
        let d_rat = BigRational::from(d.clone());
        let a = &self.a * &rhs.a + &self.b * &rhs.b * &d_rat;
        let b = &self.a * &rhs.b + &self.b * &rhs.a;
        let mut v = QuadRat { a, b, d };
        v.normalize();
        v
    }
}

impl Div for QuadRat {
    type Output = QuadRat;
    fn div(self, rhs: QuadRat) -> QuadRat {
        self * rhs.inv()
    }
}

impl Scalar for QuadRat {
    const EXACT: bool = true;

    fn zero() -> Self {
        QuadRat::from_big(Zero::zero())
    }
    fn one() -> Self {
        QuadRat::from_big(One::one())
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        QuadRat::from_big(big_ratio(num, den))
    }
    fn from_rational(r: &BigRational) -> Self {
        QuadRat::from_big(r.clone())
    }
    fn is_zero(&self) -> bool {
        // a + b sqrt(d) = 0 with d square-free and > 1 forces a = b = 0.
        Zero::is_zero(&self.a) && Zero::is_zero(&self.b)
    }
    fn powi(&self, e: i64) -> Self {
        let base = if e >= 0 { self.clone() } else { self.inv() };
        let mut acc = <QuadRat as Scalar>::one();
        for _ in 0..e.unsigned_abs() {
            acc = acc * base.clone();
        }
        acc
    }
    fn to_f64(&self) -> f64 {
        let root = num::ToPrimitive::to_f64(&self.d)
            .map(f64::sqrt)
            .unwrap_or(f64::NAN);
        rational_to_f64(&self.a) + rational_to_f64(&self.b) * root
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        big_ratio(n, d)
    }

    #[test]
    fn sqrt_of_perfect_square_is_rational() {
        let v = QuadRat::sqrt_of_rational(&q(9, 16)).unwrap();
        assert_eq!(v.as_rational(), Some(&q(3, 4)));
    }

    #[test]
    fn sqrt_extracts_square_factors() {
        // sqrt(8/9) = (2/3) sqrt(2).
        let v = QuadRat::sqrt_of_rational(&q(8, 9)).unwrap();
        assert_eq!(v.as_rational(), None);
        assert_eq!(v.radical_part(), &q(2, 3));
        assert_eq!(v.discriminant(), &BigInt::from(2));
    }

    #[test]
    fn quadratic_field_arithmetic() {
        // (1 + sqrt 2)(1 - sqrt 2) = -1.
        let one_plus = QuadRat::new(q(1, 1), q(1, 1), BigInt::from(2)).unwrap();
        let one_minus = QuadRat::new(q(1, 1), q(-1, 1), BigInt::from(2)).unwrap();
        let prod = one_plus.clone() * one_minus;
        assert_eq!(prod.as_rational(), Some(&q(-1, 1)));
        // (1 + sqrt 2)^-2 = 3 - 2 sqrt 2.
        let inv2 = one_plus.powi(-2);
        assert_eq!(inv2.rational_part(), &q(3, 1));
        assert_eq!(inv2.radical_part(), &q(-2, 1));
    }

    #[test]
    fn rational_and_radical_mix_through_zero_disc() {
        let half = <QuadRat as Scalar>::from_ratio(1, 2);
        let root2 = QuadRat::sqrt_of_rational(&q(2, 1)).unwrap();
        let sum = half.clone() + root2.clone();
        assert_eq!(sum.rational_part(), &q(1, 2));
        assert_eq!(sum.radical_part(), &q(1, 1));
        let back = sum - root2;
        assert_eq!(back.as_rational(), Some(&q(1, 2)));
    }

    #[test]
    #[should_panic(expected = "mixed quadratic extensions")]
    fn mixing_extensions_panics() {
        let root2 = QuadRat::sqrt_of_rational(&q(2, 1)).unwrap();
        let root3 = QuadRat::sqrt_of_rational(&q(3, 1)).unwrap();
        let _ = root2 + root3;
    }

    #[test]
    fn powi_matches_f64() {
        let v = QuadRat::sqrt_of_rational(&q(8, 9)).unwrap();
        let exact = v.powi(5).to_f64();
        let float = (8.0f64 / 9.0).sqrt().powi(5);
        assert!((exact - float).abs() < 1e-12);
    }

    #[test]
    fn big_rational_negative_powers() {
        let b = q(3, 2);
        assert_eq!(Scalar::powi(&b, -2), q(4, 9));
    }

    #[test]
    fn quad_rat_exact_ordering() {
        let root2 = QuadRat::sqrt_of_rational(&q(2, 1)).unwrap();
        // sqrt(2) vs nearby rationals.
        assert!(root2 > <QuadRat as Scalar>::from_ratio(141421356, 100000000));
        assert!(root2 < <QuadRat as Scalar>::from_ratio(141421357, 100000000));
        // 1 - sqrt(2) < 0 < sqrt(2) - 1.
        let one = <QuadRat as Scalar>::one();
        let zero = <QuadRat as Scalar>::zero();
        assert!(one.clone() - root2.clone() < zero);
        assert!(root2.clone() - one > zero);
        // Equality case: sqrt(2) == sqrt(2).
        assert_eq!(root2.partial_cmp(&root2), Some(std::cmp::Ordering::Equal));
    }
}
