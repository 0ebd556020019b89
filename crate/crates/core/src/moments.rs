//! First and second moments of the process, its occupation density and the
//! fluctuation limit. Under `λ` the spatial integral against `p(·, c − x)`
//! collapses to 1; under a density `g` it becomes `P_s g(c)`, so every formula
//! is a single time integral of closed-form factors.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{kernel_time_integral, InitialMeasure, ModelParams};
use crate::quadrature::integrate_with_breaks;
use crate::TestFn;

/// Absolute tolerance of every time quadrature in this module.
pub const QUAD_TOL: f64 = 1e-10;

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("time must be finite and nonnegative, got {t}")));
    }
    Ok(())
}

/// `∫_0^t h(s) ds` for a smooth closed-form integrand.
fn time_integral<F: Fn(f64) -> f64>(h: F, t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    integrate_with_breaks(h, &[0.0, 0.25 * t, 0.5 * t, t], QUAD_TOL, 0.0).value
}

/// `E⟨X_t, f⟩ = ⟨μ P_t, f⟩`.
pub fn mean_mass(initial: &InitialMeasure, f: &TestFn, t: f64) -> Result<f64> {
    check_time(t)?;
    initial.pair_heat(f, t)
}

/// `Var⟨X_t, f⟩ = (σ²/k²) ∫_0^t (μP_{t−s})(c) (P_s f(c))² ds`.
pub fn var_mass(initial: &InitialMeasure, f: &TestFn, t: f64, params: &ModelParams) -> Result<f64> {
    check_time(t)?;
    params.validate()?;
    let s2 = params.effective_sigma2();
    if s2 == 0.0 || matches!(initial, InitialMeasure::Zero) {
        return Ok(0.0);
    }
    let c = params.c;
    let integral = time_integral(
        |s| {
            let p = f.heat_eval(s, c);
            initial.heat_density_at(t - s, c) * p * p
        },
        t,
    );
    Ok(s2 * integral)
}

/// `E y_t(z) = ∫_0^t (μP_s)(z) ds`; exactly `t` under `λ`.
pub fn mean_occupation(initial: &InitialMeasure, z: f64, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(match initial {
        InitialMeasure::Zero => 0.0,
        InitialMeasure::Lebesgue => t,
        InitialMeasure::Density(g) => time_integral(|s| g.heat_eval(s, z), t),
    })
}

/// `Var y_t(z) = (σ²/k²) ∫_0^t (μP_s)(c) [∫_0^{t−s} p(u, z−c) du]² ds`.
/// Under `λ` at `z = c` this is `σ² t² / (π k²)`.
pub fn var_occupation(initial: &InitialMeasure, z: f64, t: f64, params: &ModelParams) -> Result<f64> {
    check_time(t)?;
    params.validate()?;
    let s2 = params.effective_sigma2();
    if s2 == 0.0 || matches!(initial, InitialMeasure::Zero) {
        return Ok(0.0);
    }
    let c = params.c;
    if matches!(initial, InitialMeasure::Lebesgue) && z == c {
        return Ok(s2 * t * t / std::f64::consts::PI);
    }
    let integral = time_integral(
        |s| {
            let clock = kernel_time_integral(t - s, z - c);
            initial.heat_density_at(s, c) * clock * clock
        },
        t,
    );
    Ok(s2 * integral)
}

/// `E⟨Z_k(t), f⟩² = σ² ∫_0^t (P_s f(c))² ds` under `λ`; the index `k` cancels
/// and is never read.
pub fn fluctuation_second_moment(f: &TestFn, t: f64, params: &ModelParams) -> Result<f64> {
    check_time(t)?;
    params.validate()?;
    if params.sigma2 == 0.0 {
        return Ok(0.0);
    }
    let c = params.c;
    Ok(params.sigma2 * time_integral(|s| f.heat_eval(s, c).powi(2), t))
}

/// `Cov(⟨Z(t), f⟩, ⟨Z(t′), g⟩) = σ² ∫_0^{t∧t′} P_{t−s}f(c) P_{t′−s}g(c) ds`.
pub fn ou_covariance(f: &TestFn, g: &TestFn, t: f64, t_prime: f64, params: &ModelParams) -> Result<f64> {
    check_time(t)?;
    check_time(t_prime)?;
    params.validate()?;
    if params.sigma2 == 0.0 {
        return Ok(0.0);
    }
    let c = params.c;
    let upper = t.min(t_prime);
    let integral = time_integral(|s| f.heat_eval(t - s, c) * g.heat_eval(t_prime - s, c), upper);
    Ok(params.sigma2 * integral)
}

/// `E exp(i⟨Z(t), f⟩) = exp(i⟨μ, P_t f⟩ − (σ²/2) ∫_0^t (P_s f(c))² ds)`.
pub fn ou_char_functional(f: &TestFn, t: f64, params: &ModelParams, initial: &InitialMeasure) -> Result<Complex64> {
    let phase = initial.pair_heat(f, t)?;
    let variance = fluctuation_second_moment(f, t, params)?;
    Ok(Complex64::new(-0.5 * variance, phase).exp())
}

/// One row of a moment report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub formula_id: String,
    pub inputs: BTreeMap<String, String>,
    pub value: f64,
    pub method: String,
}

impl MomentReport {
    pub fn new(formula_id: &str, inputs: &[(&str, String)], value: f64, closed_form: bool) -> Self {
        Self {
            formula_id: formula_id.to_string(),
            inputs: inputs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            value,
            method: if closed_form { "closed-form" } else { "quadrature" }.to_string(),
        }
    }
}

/// Renders a list of reports as a pretty JSON array.
pub fn reports_to_json(reports: &[MomentReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use crate::oracle::{nested_var_mass, nested_var_occupation};
    use std::f64::consts::{LN_2, PI};

    fn gauss() -> TestFn {
        TestFn::gaussian(0.0, 1.0).unwrap()
    }

    fn bench(k: u32) -> ModelParams {
        ModelParams::new(0.0, 1.0, k).unwrap()
    }

    #[test]
    fn mean_mass_under_lebesgue() {
        for t in [0.0, 1.0, 10.0] {
            let m = mean_mass(&InitialMeasure::Lebesgue, &gauss(), t).unwrap();
            assert!((m - 2.506_628_3).abs() < 1e-7);
        }
        let g = TestFn::gaussian(1.0, 0.5).unwrap();
        let mu = InitialMeasure::Density(g.clone());
        assert_eq!(mean_mass(&mu, &gauss(), 0.0).unwrap(), g.inner(&gauss()));
    }

    #[test]
    fn var_mass_benchmark() {
        let lam = InitialMeasure::Lebesgue;
        let v = var_mass(&lam, &gauss(), 1.0, &bench(1)).unwrap();
        assert!((v - LN_2).abs() < 1e-9);
        assert!((v - 0.693_147_2).abs() < 1e-7);
        let oracle = nested_var_mass(&gauss(), 1.0, &bench(1), 1e-11);
        assert!((v - oracle).abs() < 1e-9);
        assert_eq!(var_mass(&lam, &gauss(), 0.0, &bench(1)).unwrap(), 0.0);
        let quiet = ModelParams::new(0.0, 0.0, 1).unwrap();
        assert_eq!(var_mass(&lam, &gauss(), 1.0, &quiet).unwrap(), 0.0);
        // branching variance of the k-th process carries 1/k²
        let v4 = var_mass(&lam, &gauss(), 1.0, &bench(4)).unwrap();
        assert!((v4 - LN_2 / 16.0).abs() < 1e-10);
    }

    #[test]
    fn var_mass_under_density_matches_collapse_at_wide_density() {
        // a very wide flat density approaches λ
        let wide = TestFn::gaussian(0.0, 1e4).unwrap();
        let v = var_mass(&InitialMeasure::Density(wide), &gauss(), 1.0, &bench(1)).unwrap();
        assert!((v - LN_2).abs() < 1e-6);
    }

    #[test]
    fn occupation_means() {
        assert_eq!(mean_occupation(&InitialMeasure::Lebesgue, 3.0, 1.0).unwrap(), 1.0);
        assert_eq!(mean_occupation(&InitialMeasure::Lebesgue, 0.0, 0.0).unwrap(), 0.0);
        let width = 1e-3;
        let spike = TestFn::gaussian(0.0, width)
            .unwrap()
            .scale(1.0 / ((2.0 * PI).sqrt() * width));
        let m = mean_occupation(&InitialMeasure::Density(spike), 0.0, 1.0).unwrap();
        assert!((m - 0.797_884_6).abs() < 2e-3, "{m}");
    }

    #[test]
    fn occupation_variance() {
        let lam = InitialMeasure::Lebesgue;
        let v1 = var_occupation(&lam, 0.0, 1.0, &bench(1)).unwrap();
        assert!((v1 - 0.318_309_9).abs() < 1e-7);
        let oracle = nested_var_occupation(0.0, 1.0, &bench(1), 1e-11);
        assert!((v1 - oracle).abs() < 1e-9);
        let v2 = var_occupation(&lam, 0.0, 1.0, &bench(2)).unwrap();
        assert!((v2 - 0.079_577_5).abs() < 1e-7);
        assert_eq!(var_occupation(&lam, 0.0, 0.0, &bench(1)).unwrap(), 0.0);
        // off the catalyst the quadrature path is used
        let off = var_occupation(&lam, 0.7, 1.3, &bench(1)).unwrap();
        let oracle = nested_var_occupation(0.7, 1.3, &bench(1), 1e-11);
        assert!((off - oracle).abs() < 1e-9, "{off} vs {oracle}");
    }

    #[test]
    fn fluctuation_moment_is_k_invariant() {
        let base = fluctuation_second_moment(&gauss(), 1.0, &bench(1)).unwrap();
        assert!((base - LN_2).abs() < 1e-9);
        for k in [2, 4, 8] {
            assert_eq!(fluctuation_second_moment(&gauss(), 1.0, &bench(k)).unwrap(), base);
        }
        assert_eq!(fluctuation_second_moment(&gauss(), 0.0, &bench(1)).unwrap(), 0.0);
        // vanishing at the catalyst does not make the integrand vanish
        let odd = TestFn::term(vec![0.0, 1.0], 0.5, 1.0).unwrap();
        assert!(fluctuation_second_moment(&odd, 1.0, &bench(1)).unwrap() > 0.0);
    }

    #[test]
    fn ou_covariance_properties() {
        let p = bench(1);
        let v = ou_covariance(&gauss(), &gauss(), 1.0, 1.0, &p).unwrap();
        assert!((v - LN_2).abs() < 1e-9);
        assert!((v - fluctuation_second_moment(&gauss(), 1.0, &p).unwrap()).abs() < 1e-10);
        assert_eq!(ou_covariance(&gauss(), &gauss(), 0.0, 1.0, &p).unwrap(), 0.0);
        let g = TestFn::term(vec![1.0, 0.5], 0.3, 0.8).unwrap();
        let a = ou_covariance(&gauss(), &g, 0.5, 1.2, &p).unwrap();
        let b = ou_covariance(&g, &gauss(), 1.2, 0.5, &p).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn ou_gram_matrix_is_psd() {
        let p = bench(1);
        let fs = [
            gauss(),
            TestFn::term(vec![1.0, 0.5], 0.3, 0.8).unwrap(),
            TestFn::gaussian(-1.0, 0.4).unwrap(),
        ];
        let times = [0.1, 0.5, 1.0, 2.0];
        let items: Vec<(&TestFn, f64)> = fs.iter().flat_map(|f| times.iter().map(move |&t| (f, t))).collect();
        let n = items.len();
        let gram = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            ou_covariance(items[i].0, items[j].0, items[i].1, items[j].1, &p).unwrap()
        });
        let eig = gram.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-10));
    }

    #[test]
    fn char_functional() {
        let p = bench(1);
        let zero = ou_char_functional(&TestFn::zero(), 1.0, &p, &InitialMeasure::Zero).unwrap();
        assert_eq!(zero, Complex64::new(1.0, 0.0));
        let cf = ou_char_functional(&gauss(), 1.0, &p, &InitialMeasure::Zero).unwrap();
        assert!((cf.norm() - 0.707_106_8).abs() < 1e-7);
        assert!(cf.im.abs() < 1e-15);
        let shifted = ou_char_functional(&gauss(), 1.0, &p, &InitialMeasure::Lebesgue).unwrap();
        assert!((shifted.arg() - 2.506_628_3).abs() < 1e-7);
    }

    #[test]
    fn monotone_in_time_and_linear_in_intensity() {
        let lam = InitialMeasure::Lebesgue;
        let mut prev = (0.0, 0.0);
        for t in [0.1, 0.5, 1.0, 2.0, 4.0] {
            let vm = var_mass(&lam, &gauss(), t, &bench(1)).unwrap();
            let vo = var_occupation(&lam, 0.4, t, &bench(1)).unwrap();
            assert!(vm >= prev.0 && vo >= prev.1);
            prev = (vm, vo);
        }
        let two = ModelParams::new(0.0, 2.0, 1).unwrap();
        assert_eq!(
            var_mass(&lam, &gauss(), 1.0, &two).unwrap(),
            2.0 * var_mass(&lam, &gauss(), 1.0, &bench(1)).unwrap()
        );
    }

    #[test]
    fn report_json() {
        let r = MomentReport::new("var_mass", &[("t", "1".into())], LN_2, false);
        let text = reports_to_json(&[r]).unwrap();
        assert!(text.contains("\"method\": \"quadrature\""));
    }
}
