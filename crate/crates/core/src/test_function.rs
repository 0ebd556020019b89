//! Polynomial-times-Gaussian mixtures.
//!
//! A [`TestFunction`] is a finite sum of terms
//! `x ↦ (c0 + c1·x + … + cd·x^d) · exp(−(x − m)² / (2 s²))`.
//! The family is closed under addition, scaling, differentiation, pointwise
//! products and the Brownian heat semigroup, so every moment formula can be
//! evaluated without numerical convolution.

use std::fmt::Write as _;
use std::ops::{Add, Mul, Neg, Sub};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default cap on the polynomial degree of a single term.
pub const DEFAULT_DEGREE_CAP: usize = 8;

/// One polynomial×Gaussian term. `coeffs` are in powers of `x`;
/// `centered` caches the same polynomial in powers of `x − center`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTerm<T> {
    coeffs: Vec<T>,
    center: T,
    width: T,
    centered: Vec<T>,
}

impl<T: Scalar> GaussianTerm<T> {
    pub fn new(coeffs: Vec<T>, center: T, width: T) -> Result<Self> {
        if !(width > T::zero()) || !width.is_finite() {
            return Err(Error::Domain(format!(
                "term width must be positive and finite, got {width}"
            )));
        }
        if !center.is_finite() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("term center and coefficients must be finite".into()));
        }
        let coeffs = if coeffs.is_empty() { vec![T::zero()] } else { coeffs };
        let centered = taylor_shift(&coeffs, center);
        Ok(Self {
            coeffs,
            center,
            width,
            centered,
        })
    }

    fn from_centered(centered: Vec<T>, center: T, width: T) -> Self {
        let coeffs = taylor_shift(&centered, -center);
        Self {
            coeffs,
            center,
            width,
            centered,
        }
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn center(&self) -> T {
        self.center
    }

    pub fn width(&self) -> T {
        self.width
    }

    /// Degree of the stored coefficient vector (trailing zeros included).
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: T) -> T {
        let z = x - self.center;
        let poly = horner(&self.centered, z);
        poly * (-(z * z) / (T::lit(2.0) * self.width * self.width)).exp()
    }

    /// Heat semigroup applied to this term: Gaussian convolution with variance `t`.
    fn heat(&self, t: T) -> Self {
        let (scale, r, tau2, new_width) = heat_factors(self.width, t);
        let centered = heat_poly(&self.centered, r, tau2)
            .into_iter()
            .map(|c| c * scale)
            .collect();
        Self::from_centered(centered, self.center, new_width)
    }

    /// `(P_t term)(x)` without building the transformed term.
    fn heat_eval(&self, t: T, x: T) -> T {
        if t == T::zero() {
            return self.eval(x);
        }
        let (scale, r, tau2, new_width) = heat_factors(self.width, t);
        let z = x - self.center;
        let mean = r * z;
        // E[q(mean + tau G)] for standard normal G
        let mut acc = T::zero();
        for (j, &c) in self.centered.iter().enumerate() {
            if c == T::zero() {
                continue;
            }
            acc = acc + c * gaussian_shifted_moment(j, mean, tau2);
        }
        scale * acc * (-(z * z) / (T::lit(2.0) * new_width * new_width)).exp()
    }

    fn derivative(&self) -> Self {
        // d/dx [q e] = (q' − q (x − m)/s²) e, written in centered powers
        let q = &self.centered;
        let s2 = self.width * self.width;
        let mut out = vec![T::zero(); q.len() + 1];
        for (j, &c) in q.iter().enumerate() {
            if j > 0 {
                out[j - 1] = out[j - 1] + c * T::from_usize(j).unwrap();
            }
            out[j + 1] = out[j + 1] - c / s2;
        }
        Self::from_centered(out, self.center, self.width)
    }

    fn integral(&self) -> T {
        let s = self.width;
        let root_two_pi = T::lit((2.0 * std::f64::consts::PI).sqrt());
        let mut acc = T::zero();
        let mut s_pow = s; // s^{j+1}
        let mut dfact = T::one(); // (j-1)!!
        for (j, &c) in self.centered.iter().enumerate() {
            if j % 2 == 0 {
                acc = acc + c * s_pow * dfact;
                dfact = dfact * T::from_usize(j + 1).unwrap();
            }
            s_pow = s_pow * s;
        }
        acc * root_two_pi
    }

    fn product(&self, other: &Self) -> Self {
        let (s1, s2) = (self.width * self.width, other.width * other.width);
        let inv = T::one() / s1 + T::one() / s2;
        let width2 = T::one() / inv;
        let center = width2 * (self.center / s1 + other.center / s2);
        let d = self.center - other.center;
        let k = (-(d * d) / (T::lit(2.0) * (s1 + s2))).exp();
        let mut coeffs = vec![T::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] = coeffs[i + j] + a * b * k;
            }
        }
        let centered = taylor_shift(&coeffs, center);
        Self {
            coeffs,
            center,
            width: width2.sqrt(),
            centered,
        }
    }

    fn scaled(&self, a: T) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|&c| c * a).collect(),
            center: self.center,
            width: self.width,
            centered: self.centered.iter().map(|&c| c * a).collect(),
        }
    }
}

/// A finite polynomial×Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction<T> {
    terms: Vec<GaussianTerm<T>>,
    degree_cap: usize,
}

impl<T: Scalar> Default for TestFunction<T> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<T: Scalar> TestFunction<T> {
    pub fn zero() -> Self {
        Self {
            terms: Vec::new(),
            degree_cap: DEFAULT_DEGREE_CAP,
        }
    }

    pub fn new(terms: Vec<GaussianTerm<T>>) -> Result<Self> {
        Self::with_cap(terms, DEFAULT_DEGREE_CAP)
    }

    pub fn with_cap(terms: Vec<GaussianTerm<T>>, degree_cap: usize) -> Result<Self> {
        let f = Self { terms, degree_cap };
        f.check_cap()?;
        Ok(f)
    }

    /// `x ↦ exp(−(x − center)² / (2 width²))`.
    pub fn gaussian(center: T, width: T) -> Result<Self> {
        Self::new(vec![GaussianTerm::new(vec![T::one()], center, width)?])
    }

    /// Single term from x-power coefficients.
    pub fn term(coeffs: Vec<T>, center: T, width: T) -> Result<Self> {
        Self::new(vec![GaussianTerm::new(coeffs, center, width)?])
    }

    pub fn terms(&self) -> &[GaussianTerm<T>] {
        &self.terms
    }

    pub fn degree_cap(&self) -> usize {
        self.degree_cap
    }

    pub fn set_degree_cap(mut self, cap: usize) -> Result<Self> {
        self.degree_cap = cap;
        self.check_cap()?;
        Ok(self)
    }

    pub fn degree(&self) -> usize {
        self.terms.iter().map(|t| t.degree()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.coeffs.iter().all(|&c| c == T::zero()))
    }

    fn check_cap(&self) -> Result<()> {
        let needed = self.degree();
        if needed > self.degree_cap {
            return Err(Error::Capacity {
                cap: self.degree_cap,
                needed,
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: T) -> T {
        self.terms.iter().fold(T::zero(), |acc, t| acc + t.eval(x))
    }

    /// Exact heat semigroup `P_t f`; `t = 0` returns `f` unchanged.
    pub fn heat(&self, t: T) -> Result<Self> {
        if !(t >= T::zero()) || !t.is_finite() {
            return Err(Error::Domain(format!("semigroup time must be nonnegative, got {t}")));
        }
        if t == T::zero() {
            return Ok(self.clone());
        }
        Ok(Self {
            terms: self.terms.iter().map(|term| term.heat(t)).collect(),
            degree_cap: self.degree_cap,
        })
    }

    /// `(P_t f)(x)` evaluated directly. Panics on negative `t`.
    pub fn heat_eval(&self, t: T, x: T) -> T {
        assert!(t >= T::zero(), "semigroup time must be nonnegative");
        self.terms
            .iter()
            .fold(T::zero(), |acc, term| acc + term.heat_eval(t, x))
    }

    pub fn derivative(&self) -> Result<Self> {
        let f = Self {
            terms: self.terms.iter().map(|t| t.derivative()).collect(),
            degree_cap: self.degree_cap,
        };
        f.check_cap()?;
        Ok(f)
    }

    pub fn second_derivative(&self) -> Result<Self> {
        let f = Self {
            terms: self.terms.iter().map(|t| t.derivative().derivative()).collect(),
            degree_cap: self.degree_cap,
        };
        f.check_cap()?;
        Ok(f)
    }

    /// Brownian generator `A f = f″ / 2`.
    pub fn generator(&self) -> Result<Self> {
        Ok(self.second_derivative()?.scale(T::lit(0.5)))
    }

    /// `∫ f dx` over the real line.
    pub fn lebesgue_integral(&self) -> T {
        self.terms.iter().fold(T::zero(), |acc, t| acc + t.integral())
    }

    /// `∫ f g dx`, without materialising the product (no degree cap applies).
    pub fn inner(&self, other: &Self) -> T {
        let mut acc = T::zero();
        for a in &self.terms {
            for b in &other.terms {
                acc = acc + a.product(b).integral();
            }
        }
        acc
    }

    /// Pointwise product.
    pub fn product(&self, other: &Self) -> Result<Self> {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                terms.push(a.product(b));
            }
        }
        Self::with_cap(terms, self.degree_cap.max(other.degree_cap))
    }

    pub fn scale(&self, a: T) -> Self {
        Self {
            terms: self.terms.iter().map(|t| t.scaled(a)).collect(),
            degree_cap: self.degree_cap,
        }
    }

    /// Interval outside of which every term's Gaussian factor is below
    /// `exp(−radius²/2)` relative to its peak.
    pub fn envelope(&self, radius: T) -> Option<(T, T)> {
        self.terms.iter().fold(None, |acc, t| {
            let lo = t.center - radius * t.width;
            let hi = t.center + radius * t.width;
            Some(match acc {
                None => (lo, hi),
                Some((a, b)) => (a.min(lo), b.max(hi)),
            })
        })
    }

    /// `max(|m| + 2 s)` over the terms; zero for the zero function.
    pub fn support_radius(&self) -> T {
        self.terms
            .iter()
            .fold(T::zero(), |acc, t| acc.max(t.center.abs() + T::lit(2.0) * t.width))
    }

    /// Checks `f ≥ 0` on a dense grid covering twelve widths around every term.
    pub fn is_nonnegative(&self) -> bool {
        let Some((lo, hi)) = self.envelope(T::lit(12.0)) else {
            return true;
        };
        let n = 4000;
        let step = (hi - lo) / T::from_usize(n).unwrap();
        let values: Vec<T> = (0..=n)
            .map(|i| self.eval(lo + step * T::from_usize(i).unwrap()))
            .collect();
        let peak = values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let slack = peak * T::lit(1e-14);
        values.iter().all(|&v| v >= -slack)
    }

    /// JSON array of `{coeffs, m, s}` with 17 significant digits.
    pub fn to_json(&self) -> String {
        let mut out = String::from("[");
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str("{\"coeffs\":[");
            for (j, c) in t.coeffs.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                out.push_str(&crate::io::fmt_f64(c.to_f64().unwrap()));
            }
            let _ = write!(
                out,
                "],\"m\":{},\"s\":{}}}",
                crate::io::fmt_f64(t.center.to_f64().unwrap()),
                crate::io::fmt_f64(t.width.to_f64().unwrap())
            );
        }
        out.push(']');
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct RawTerm {
            coeffs: Vec<f64>,
            m: f64,
            s: f64,
        }
        let raw: Vec<RawTerm> = serde_json::from_str(text)?;
        let cast = |x: f64| T::from_f64(x).ok_or_else(|| Error::Parse(format!("{x} not representable")));
        let terms = raw
            .into_iter()
            .map(|r| {
                let coeffs = r.coeffs.into_iter().map(cast).collect::<Result<Vec<_>>>()?;
                GaussianTerm::new(coeffs, cast(r.m)?, cast(r.s)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(terms)
    }
}

impl<T: Scalar> Add for TestFunction<T> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.degree_cap = self.degree_cap.max(rhs.degree_cap);
        self.terms.extend(rhs.terms);
        self
    }
}

impl<T: Scalar> Sub for TestFunction<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl<T: Scalar> Neg for TestFunction<T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-T::one())
    }
}

impl<T: Scalar> Mul<T> for TestFunction<T> {
    type Output = Self;
    fn mul(self, a: T) -> Self {
        self.scale(a)
    }
}

fn horner<T: Scalar>(coeffs: &[T], x: T) -> T {
    coeffs.iter().rev().fold(T::zero(), |acc, &c| acc * x + c)
}

/// Coefficients of `p(z + a)` in powers of `z`.
fn taylor_shift<T: Scalar>(coeffs: &[T], a: T) -> Vec<T> {
    let mut b = coeffs.to_vec();
    let n = b.len();
    if a == T::zero() || n < 2 {
        return b;
    }
    for k in 0..n - 1 {
        for j in (k..n - 1).rev() {
            b[j] = b[j] + a * b[j + 1];
        }
    }
    b
}

/// Prefactor, mean contraction, conditional variance and new width for the
/// convolution of `exp(−z²/(2s²))` with the heat kernel at time `t`.
fn heat_factors<T: Scalar>(width: T, t: T) -> (T, T, T, T) {
    let s2 = width * width;
    let big2 = s2 + t;
    let new_width = big2.sqrt();
    (width / new_width, s2 / big2, s2 * t / big2, new_width)
}

/// Centered coefficients of `z ↦ E[q(r z + τ G)]`, `G` standard normal, `τ² = tau2`.
fn heat_poly<T: Scalar>(q: &[T], r: T, tau2: T) -> Vec<T> {
    let n = q.len();
    let mut out = vec![T::zero(); n];
    for (j, &c) in q.iter().enumerate() {
        if c == T::zero() {
            continue;
        }
        // (r z + τ G)^j = Σ_i C(j,i) r^{j-i} z^{j-i} τ^i G^i, E[G^i] = (i-1)!! for even i
        let mut i = 0;
        let mut tau_pow = T::one();
        let mut dfact = T::one();
        while i <= j {
            let p = j - i;
            let term = binomial::<T>(j, i) * r.powi(p as i32) * tau_pow * dfact;
            out[p] = out[p] + c * term;
            tau_pow = tau_pow * tau2;
            dfact = dfact * T::from_usize(i + 1).unwrap();
            i += 2;
        }
    }
    out
}

/// `E[(mean + τ G)^j]` for `τ² = tau2`.
fn gaussian_shifted_moment<T: Scalar>(j: usize, mean: T, tau2: T) -> T {
    let mut acc = T::zero();
    let mut i = 0;
    let mut tau_pow = T::one();
    let mut dfact = T::one();
    while i <= j {
        acc = acc + binomial::<T>(j, i) * mean.powi((j - i) as i32) * tau_pow * dfact;
        tau_pow = tau_pow * tau2;
        dfact = dfact * T::from_usize(i + 1).unwrap();
        i += 2;
    }
    acc
}

fn binomial<T: Scalar>(n: usize, k: usize) -> T {
    let k = k.min(n - k);
    let mut acc = 1.0_f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    T::lit(acc.round())
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;

    fn gauss() -> TestFunction<f64> {
        TestFunction::gaussian(0.0, 1.0).unwrap()
    }

    fn mixed() -> TestFunction<f64> {
        TestFunction::term(vec![0.3, -1.2, 0.5], 0.7, 0.8).unwrap()
            + TestFunction::term(vec![1.0, 0.0, 0.0, 0.25], -1.5, 1.3).unwrap()
    }

    #[test]
    fn heat_of_gaussian_matches_closed_form() {
        let p1 = gauss().heat(1.0).unwrap();
        assert!((p1.eval(0.0) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((gauss().heat_eval(1.0, 0.0) - 0.707_106_8).abs() < 1e-7);
        for x in [-2.0f64, 0.3, 1.7] {
            let exact = (0.5f64).sqrt() * (-x * x / 4.0).exp();
            assert!((p1.eval(x) - exact).abs() < 1e-15);
        }
    }

    #[test]
    fn heat_matches_quadrature_of_kernel() {
        let f = mixed();
        let t = 0.6;
        let pt = f.heat(t).unwrap();
        for x in [-3.0, -0.4, 0.0, 1.1, 2.5] {
            let q = integrate(
                |y| crate::kernels::heat_kernel(t, x - y).unwrap() * f.eval(y),
                -30.0,
                30.0,
                1e-13,
                0.0,
            );
            assert!((pt.eval(x) - q.value).abs() < 1e-11, "x={x}");
            assert!((f.heat_eval(t, x) - q.value).abs() < 1e-11, "x={x}");
        }
    }

    #[test]
    fn identity_at_zero_time() {
        let f = mixed();
        assert_eq!(f.heat(0.0).unwrap(), f);
    }

    #[test]
    fn semigroup_law() {
        let f = mixed();
        let a = f.heat(0.7).unwrap().heat(0.3).unwrap();
        let b = f.heat(1.0).unwrap();
        for (ta, tb) in a.terms().iter().zip(b.terms()) {
            assert!((ta.width() - tb.width()).abs() < 1e-15);
            for (x, y) in ta.coeffs().iter().zip(tb.coeffs()) {
                assert!((x - y).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn generator_of_gaussian() {
        let af = gauss().generator().unwrap();
        assert!((af.eval(0.0) + 0.5).abs() < 1e-15);
        // f''(x) = (x² − 1) e^{−x²/2}
        for x in [-1.3f64, 0.4, 2.2] {
            let exact = 0.5 * (x * x - 1.0) * (-0.5 * x * x).exp();
            assert!((af.eval(x) - exact).abs() < 1e-15);
        }
        assert!(TestFunction::<f64>::zero().generator().unwrap().is_zero());
    }

    #[test]
    fn generator_rejects_degree_overflow() {
        let f = TestFunction::term(vec![0.0; 8].into_iter().chain([1.0]).collect(), 0.0, 1.0).unwrap();
        assert_eq!(f.degree(), 8);
        assert!(matches!(f.generator(), Err(Error::Capacity { cap: 8, needed: 10 })));
        let g = TestFunction::term(vec![0.0; 10].into_iter().chain([1.0]).collect(), 0.0, 1.0);
        assert!(matches!(g, Err(Error::Capacity { .. })));
    }

    #[test]
    fn generator_is_heat_derivative() {
        let f = mixed();
        let af = f.generator().unwrap();
        for x in [-1.0, 0.0, 2.0] {
            let mut prev = f64::INFINITY;
            for h in [1e-2, 5e-3, 2.5e-3] {
                let fd = (f.heat_eval(h, x) - f.eval(x)) / h;
                let err = (af.eval(x) - fd).abs();
                assert!(err < prev);
                prev = err;
            }
            // O(h) convergence
            let e1 = (af.eval(x) - (f.heat_eval(1e-3, x) - f.eval(x)) / 1e-3).abs();
            let e2 = (af.eval(x) - (f.heat_eval(5e-4, x) - f.eval(x)) / 5e-4).abs();
            assert!(e1 / e2 > 1.8 && e1 / e2 < 2.2, "x={x} ratio {}", e1 / e2);
        }
    }

    #[test]
    fn generator_commutes_with_semigroup() {
        let f = mixed();
        let a = f.heat(0.45).unwrap().generator().unwrap();
        let b = f.generator().unwrap().heat(0.45).unwrap();
        for (ta, tb) in a.terms().iter().zip(b.terms()) {
            for (x, y) in ta.coeffs().iter().zip(tb.coeffs()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lebesgue_integral_of_gaussian() {
        assert!((gauss().lebesgue_integral() - 2.506_628_3).abs() < 1e-7);
        let f = mixed();
        let q = integrate(|x| f.eval(x), -40.0, 40.0, 1e-13, 0.0);
        assert!((f.lebesgue_integral() - q.value).abs() < 1e-12);
        assert!(f.generator().unwrap().lebesgue_integral().abs() < 1e-14);
    }

    #[test]
    fn product_and_inner() {
        let f = mixed();
        let g = gauss();
        let fg = f.product(&g).unwrap();
        for x in [-2.0, -0.5, 0.0, 1.5] {
            assert!((fg.eval(x) - f.eval(x) * g.eval(x)).abs() < 1e-15);
        }
        assert!((f.inner(&g) - fg.lebesgue_integral()).abs() < 1e-15);
    }

    #[test]
    fn nonnegativity_grid() {
        assert!(gauss().is_nonnegative());
        assert!(!mixed().is_nonnegative());
        assert!(TestFunction::term(vec![0.0, 0.0, 1.0], 0.0, 1.0)
            .unwrap()
            .is_nonnegative());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let f = mixed().heat(0.123_456_789).unwrap();
        let text = f.to_json();
        let back = TestFunction::<f64>::from_json(&text).unwrap();
        for (a, b) in f.terms().iter().zip(back.terms()) {
            assert_eq!(a.coeffs(), b.coeffs());
            assert_eq!(a.center(), b.center());
            assert_eq!(a.width(), b.width());
        }
        assert!(TestFunction::<f64>::from_json("[{\"coeffs\":[1],\"m\":0,\"s\":0}]").is_err());
        assert!(TestFunction::<f64>::from_json("[{\"coeffs\":[1],\"m\":0,\"s\":1,\"x\":2}]").is_err());
    }

    #[test]
    fn single_precision_agrees() {
        let f = TestFunction::<f32>::gaussian(0.0, 1.0).unwrap();
        assert!((f.heat_eval(1.0, 0.0) - 0.707_106_8).abs() < 1e-6);
        assert!((f.lebesgue_integral() - 2.506_628_3).abs() < 1e-5);
    }
}
