//! Brownian transition density, heat semigroup and generator on the
//! polynomial×Gaussian family, plus the model parameters and initial measures
//! shared by the rest of the crate.

use std::f64::consts::PI;

use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::test_function::TestFunction;

/// Brownian transition density `p(t, x) = (2πt)^{-1/2} exp(−x²/(2t))`.
pub fn heat_kernel<T: Scalar>(t: T, x: T) -> Result<T> {
    if !(t > T::zero()) {
        return Err(Error::Domain(format!("heat kernel needs t > 0, got {t}")));
    }
    let two_pi = T::lit(2.0 * PI);
    Ok((-(x * x) / (T::lit(2.0) * t)).exp() / (two_pi * t).sqrt())
}

/// `P_t f`, exact term by term.
pub fn semigroup_apply<T: Scalar>(f: &TestFunction<T>, t: T) -> Result<TestFunction<T>> {
    f.heat(t)
}

/// `A f = f″/2`; fails with a capacity error when the degree cap would be exceeded.
pub fn generator_apply<T: Scalar>(f: &TestFunction<T>) -> Result<TestFunction<T>> {
    f.generator()
}

/// `⟨λ, f⟩ = ∫ f dx`.
pub fn lebesgue_pairing<T: Scalar>(f: &TestFunction<T>) -> T {
    f.lebesgue_integral()
}

/// `∫_0^t p(s, d) ds`; equals `√(2t/π)` at `d = 0`.
pub fn kernel_time_integral(t: f64, d: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let a = d.abs();
    let gauss = (-(d * d) / (2.0 * t)).exp();
    let head = (2.0 * t / PI).sqrt() * gauss;
    if a == 0.0 {
        return head;
    }
    head - a * erfc(a / (2.0 * t).sqrt())
}

/// `∫_0^t s·p(s, d) ds`.
pub fn kernel_time_moment(t: f64, d: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let a = d.abs();
    let gauss = (-(d * d) / (2.0 * t)).exp();
    let head = 2.0 / (3.0 * (2.0 * PI).sqrt()) * (t * t.sqrt() - d * d * t.sqrt()) * gauss;
    if a == 0.0 {
        return head;
    }
    head + a * a * a / 3.0 * erfc(a / (2.0 * t).sqrt())
}

/// Catalyst position, branching intensity and fluctuation index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub c: f64,
    pub sigma2: f64,
    pub k: u32,
}

impl ModelParams {
    pub fn new(c: f64, sigma2: f64, k: u32) -> Result<Self> {
        let p = Self { c, sigma2, k };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.c.is_finite() {
            return Err(Error::Domain("catalyst position must be finite".into()));
        }
        if !(self.sigma2 >= 0.0) || !self.sigma2.is_finite() {
            return Err(Error::Domain(format!("sigma2 must be >= 0, got {}", self.sigma2)));
        }
        if self.k < 1 {
            return Err(Error::Domain("fluctuation index k must be >= 1".into()));
        }
        Ok(())
    }

    /// Branching intensity `σ²/k²` of the k-th process.
    pub fn effective_sigma2(&self) -> f64 {
        self.sigma2 / (self.k as f64 * self.k as f64)
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            c: 0.0,
            sigma2: 1.0,
            k: 1,
        }
    }
}

/// Initial measure (or mean of an initial distribution) on the line.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialMeasure {
    #[default]
    Zero,
    Lebesgue,
    /// Absolutely continuous with the given density.
    Density(TestFunction<f64>),
}

impl InitialMeasure {
    /// `⟨μ, f⟩`.
    pub fn pair(&self, f: &TestFunction<f64>) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Lebesgue => f.lebesgue_integral(),
            Self::Density(g) => g.inner(f),
        }
    }

    /// `⟨μ, P_t f⟩`.
    pub fn pair_heat(&self, f: &TestFunction<f64>, t: f64) -> Result<f64> {
        match self {
            Self::Zero => Ok(0.0),
            Self::Lebesgue => Ok(f.lebesgue_integral()),
            Self::Density(g) => Ok(g.inner(&f.heat(t)?)),
        }
    }

    /// `∫ μ(dy) p(t, x − y)`, i.e. `(μ P_t)(x)`; the heat kernel mass is 1 under `λ`.
    pub fn heat_density_at(&self, t: f64, x: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Lebesgue => 1.0,
            Self::Density(g) => g.heat_eval(t, x),
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match self {
            Self::Density(g) => g.is_nonnegative(),
            _ => true,
        }
    }
}
