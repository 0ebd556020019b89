//! Values computed once by the independent oracles (Picard iteration with
//! FFT convolution at 2^14 steps, nested quadrature) and frozen here.

use std::f64::consts::{LN_2, PI};

use catalytic_sbm::evolution::{
    laplace_density_field, laplace_functional, laplace_occupation, reconstruct_solution, solve_catalyst_trace, Forcing,
};
use catalytic_sbm::moments::{fluctuation_second_moment, var_mass, var_occupation};
use catalytic_sbm::{InitialMeasure, ModelParams, TestFn};

fn gauss() -> TestFn {
    TestFn::gaussian(0.0, 1.0).unwrap()
}

fn bench() -> ModelParams {
    ModelParams::new(0.0, 1.0, 1).unwrap()
}

const TRACE_AT_1: f64 = 0.542701250820511;
const TRACE_AT_HALF: f64 = 0.662255427057157;
const FIELD_AT_2: f64 = 0.254641274483331;
const LAPLACE_LEBESGUE: f64 = 0.103840222081498;
const DENSITY_FIELD_AT_1: f64 = 0.373792113660175;
const OCCUPATION_AT_C: f64 = 0.416950922775830;

#[test]
fn catalyst_trace_matches_oracle() {
    let trace = solve_catalyst_trace(&Forcing::Semigroup(gauss()), &bench(), 1.0, 4096).unwrap();
    let w = trace.values();
    assert!((w[4096] - TRACE_AT_1).abs() < 1e-5);
    assert!((w[2048] - TRACE_AT_HALF).abs() < 1e-5);
    assert!((w[0] - 1.0).abs() < 1e-15);
}

#[test]
fn reconstructed_field_matches_oracle() {
    let forcing = Forcing::Semigroup(gauss());
    let trace = solve_catalyst_trace(&forcing, &bench(), 1.0, 4096).unwrap();
    let v = reconstruct_solution(&trace, &forcing, 1.0, 2.0).unwrap();
    assert!((v - FIELD_AT_2).abs() < 1e-6);
}

#[test]
fn laplace_transforms_under_lebesgue() {
    let lam = InitialMeasure::Lebesgue;
    let p = bench();
    assert!((laplace_functional(&gauss(), &p, 1.0, &lam).unwrap() - LAPLACE_LEBESGUE).abs() < 1e-6);
    assert!((laplace_density_field(&[(1.0, 1.0)], &p, 1.0, &lam).unwrap() - DENSITY_FIELD_AT_1).abs() < 1e-6);
    assert!((laplace_occupation(&[(1.0, 0.0)], &p, 1.0, &lam).unwrap() - OCCUPATION_AT_C).abs() < 1e-6);
}

#[test]
fn closed_form_moments() {
    let lam = InitialMeasure::Lebesgue;
    assert!((var_mass(&lam, &gauss(), 1.0, &bench()).unwrap() - LN_2).abs() < 1e-12);
    assert!((var_occupation(&lam, 0.0, 1.0, &bench()).unwrap() - 1.0 / PI).abs() < 1e-12);
    assert!((fluctuation_second_moment(&gauss(), 1.0, &bench()).unwrap() - LN_2).abs() < 1e-12);
    let k2 = ModelParams::new(0.0, 1.0, 2).unwrap();
    assert!((var_occupation(&lam, 0.0, 1.0, &k2).unwrap() - 0.25 / PI).abs() < 1e-12);
}
