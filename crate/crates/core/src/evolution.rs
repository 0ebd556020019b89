//! The log-Laplace evolution equation
//!
//! ```text
//! v(t,x) = g(t,x) − (σ²/2) ∫_0^t p(t−s, c−x) v(s,c)² ds
//! ```
//!
//! restricted to the catalyst, where it becomes a nonlinear Volterra equation
//! for `w(t) = v(t,c)` with the weakly singular kernel `(2π(t−s))^{-1/2}`.
//! The trace is computed by product integration (the kernel is integrated
//! exactly against piecewise-linear `w²`) and a scalar Newton solve per step.
//! The off-catalyst field and the Laplace functionals follow from the trace.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::io::{fmt_f64, CsvTable};
use crate::kernels::{heat_kernel, kernel_time_integral, kernel_time_moment, InitialMeasure, ModelParams};
use crate::quadrature::integrate_with_breaks;
use crate::TestFn;

const NEWTON_MAX_ITER: usize = 50;
const FIXED_POINT_MAX_ITER: usize = 10_000;
const RESIDUAL_TOL: f64 = 1e-12;
/// Gaussian reach (in standard deviations) beyond which forcing terms are below 1e-15.
const TAIL_SIGMAS: f64 = 8.5;
/// Default number of time steps used by the Laplace functionals.
pub const DEFAULT_STEPS: usize = 1024;

/// Source term `g(t, x)` of the evolution equation.
#[derive(Debug, Clone, PartialEq)]
pub enum Forcing {
    /// `g(t,x) = P_t f(x)`.
    Semigroup(TestFn),
    /// `g(t,x) = Σ θ_i p(t, z_i − x)`, pairs are `(θ_i, z_i)` with `z_i ≠ c`.
    DensityPoints(Vec<(f64, f64)>),
    /// `g(t,x) = Σ θ_i ∫_0^t p(s, z_i − x) ds`, pairs are `(θ_i, z_i)`.
    OccupationPoints(Vec<(f64, f64)>),
}

impl Forcing {
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        match self {
            Self::Semigroup(_) => Ok(()),
            Self::DensityPoints(points) => {
                check_weights(points)?;
                if let Some(&(_, z)) = points.iter().find(|&&(_, z)| z == params.c) {
                    return Err(Error::Domain(format!(
                        "density points must avoid the catalyst (z = {z} = c)"
                    )));
                }
                Ok(())
            }
            Self::OccupationPoints(points) => check_weights(points),
        }
    }

    /// `g(t, x)`.
    pub fn value(&self, t: f64, x: f64) -> f64 {
        match self {
            Self::Semigroup(f) => f.heat_eval(t, x),
            Self::DensityPoints(points) => {
                if t <= 0.0 {
                    return 0.0;
                }
                points
                    .iter()
                    .map(|&(theta, z)| theta * heat_kernel(t, z - x).expect("t > 0"))
                    .sum()
            }
            Self::OccupationPoints(points) => points
                .iter()
                .map(|&(theta, z)| theta * kernel_time_integral(t, z - x))
                .sum(),
        }
    }

    /// `∫ g(t, x) dx`.
    pub fn lebesgue_mass(&self, t: f64) -> f64 {
        match self {
            Self::Semigroup(f) => f.lebesgue_integral(),
            Self::DensityPoints(points) => {
                if t <= 0.0 {
                    0.0
                } else {
                    points.iter().map(|p| p.0).sum()
                }
            }
            Self::OccupationPoints(points) => points.iter().map(|p| p.0 * t).sum(),
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match self {
            Self::Semigroup(f) => f.is_nonnegative(),
            Self::DensityPoints(p) | Self::OccupationPoints(p) => p.iter().all(|q| q.0 >= 0.0),
        }
    }

    /// Short text identifying the forcing, stored with traces.
    pub fn describe(&self) -> String {
        let points = |kind: &str, p: &[(f64, f64)]| {
            let mut s = format!("{kind}:[");
            for (i, (theta, z)) in p.iter().enumerate() {
                if i > 0 {
                    s.push(';');
                }
                let _ = write!(s, "{}@{}", fmt_f64(*theta), fmt_f64(*z));
            }
            s.push(']');
            s
        };
        match self {
            Self::Semigroup(f) => format!("semigroup:{}", f.to_json()),
            Self::DensityPoints(p) => points("density-points", p),
            Self::OccupationPoints(p) => points("occupation-points", p),
        }
    }

    /// Points where `g(t, ·)` peaks or has a kink, and an interval outside of
    /// which it is negligible.
    fn spatial_layout(&self, t: f64) -> (Vec<f64>, f64, f64) {
        match self {
            Self::Semigroup(f) => {
                let breaks: Vec<f64> = f.terms().iter().map(|term| term.center()).collect();
                let (lo, hi) = f.heat(t).expect("t >= 0").envelope(TAIL_SIGMAS).unwrap_or((0.0, 0.0));
                (breaks, lo, hi)
            }
            Self::DensityPoints(p) | Self::OccupationPoints(p) => {
                let reach = TAIL_SIGMAS * t.sqrt();
                let breaks: Vec<f64> = p.iter().map(|q| q.1).collect();
                let lo = breaks.iter().cloned().fold(f64::INFINITY, f64::min) - reach;
                let hi = breaks.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + reach;
                (breaks, lo, hi)
            }
        }
    }
}

fn check_weights(points: &[(f64, f64)]) -> Result<()> {
    for &(theta, z) in points {
        if !(theta >= 0.0) || !theta.is_finite() || !z.is_finite() {
            return Err(Error::Domain(format!(
                "point weights must be finite and nonnegative, got ({theta}, {z})"
            )));
        }
    }
    Ok(())
}

/// Grid solution `w_i ≈ v(t_i, c)` on `t_i = i·Δ`, `i = 0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalystTrace {
    step: f64,
    values: Vec<f64>,
    forcing_id: String,
    params: ModelParams,
}

impl CatalystTrace {
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn forcing_id(&self) -> &str {
        &self.forcing_id
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn horizon(&self) -> f64 {
        self.step * (self.values.len() - 1) as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| i as f64 * self.step).collect()
    }

    /// `∫_0^T w(s)² ds` with `w²` piecewise linear (the absorbed mass under `λ`).
    pub fn absorbed_mass(&self) -> f64 {
        self.absorbed_mass_until(self.horizon())
    }

    fn absorbed_mass_until(&self, t: f64) -> f64 {
        let h = self.step;
        let full = ((t / h) + 1e-9).floor() as usize;
        let full = full.min(self.values.len() - 1);
        let sq = |i: usize| self.values[i] * self.values[i];
        let mut acc = 0.0;
        for i in 0..full {
            acc += 0.5 * h * (sq(i) + sq(i + 1));
        }
        let rest = t - full as f64 * h;
        if rest > 0.0 && full + 1 < self.values.len() {
            let end = sq(full) + (sq(full + 1) - sq(full)) * rest / h;
            acc += 0.5 * rest * (sq(full) + end);
        }
        acc
    }

    /// Two-column CSV `t,w`.
    pub fn to_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(&["t", "w"]);
        for (i, w) in self.values.iter().enumerate() {
            table.push(vec![fmt_f64(i as f64 * self.step), fmt_f64(*w)]);
        }
        table
    }
}

/// Product-integration weights for `∫ (t_i − s)^{-1/2} φ(s) ds` with `φ`
/// piecewise linear on a unit-spaced grid. For the interval at distance
/// `m ≥ 1` (covering `u = t_i − s ∈ [m−1, m]`), `near[m]` multiplies the node
/// closer to `t_i` and `far[m]` the node further away.
fn abel_weights(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut near = vec![0.0; n + 1];
    let mut far = vec![0.0; n + 1];
    for m in 1..=n {
        let a = (m as f64).sqrt();
        let b = ((m - 1) as f64).sqrt();
        let sum = a + b;
        let ratio = a / sum;
        near[m] = 2.0 / 3.0 * (1.0 + ratio) / sum;
        far[m] = 2.0 / (3.0 * sum) * (a + 2.0 * b) / sum;
    }
    (near, far)
}

/// Solves the catalyst trace equation
/// `w(t) = g(t,c) − (σ²/(2k²)) ∫_0^t (2π(t−s))^{-1/2} w(s)² ds` on `n` uniform steps.
pub fn solve_catalyst_trace(forcing: &Forcing, params: &ModelParams, horizon: f64, n: usize) -> Result<CatalystTrace> {
    params.validate()?;
    forcing.validate(params)?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
    }
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 steps, got {n}")));
    }
    let h = horizon / n as f64;
    let c = params.c;
    let kappa = params.effective_sigma2() / (2.0 * (2.0 * PI).sqrt()) * h.sqrt();
    let (near, far) = abel_weights(n);

    let starting = StartingWeights::new(n);
    let mut w = vec![0.0; n + 1];
    let mut sq = vec![0.0; n + 1];
    w[0] = match forcing {
        Forcing::DensityPoints(_) => 0.0,
        _ => forcing.value(0.0, c),
    };
    sq[0] = w[0] * w[0];

    for i in 1..=n {
        let t = i as f64 * h;
        let g = forcing.value(t, c);
        let mut history = far[i] * sq[0];
        let mut half_moment = near[1] * (i as f64).sqrt();
        let mut three_half_moment = near[1] * (i as f64).powf(1.5);
        for j in 1..i {
            let weight = near[i - j + 1] + far[i - j];
            history += weight * sq[j];
            half_moment += weight * starting.half[j];
            three_half_moment += weight * starting.three_half[j];
        }
        let omega = starting.correction(i, half_moment, three_half_moment);
        let mut diagonal = near[1];
        for (j, o) in omega.iter().enumerate() {
            if j == i {
                diagonal += o;
            } else {
                history += o * sq[j];
            }
        }
        let b = g - kappa * history;
        let a = kappa * diagonal;
        let wi = if a == 0.0 {
            b
        } else {
            solve_step(a, b).map_err(|reason| Error::SolverFailure {
                step: i,
                time: t,
                reason,
            })?
        };
        w[i] = wi;
        sq[i] = wi * wi;
    }

    Ok(CatalystTrace {
        step: h,
        values: w,
        forcing_id: forcing.describe(),
        params: *params,
    })
}

/// Correction weights on the first nodes making the product rule exact for
/// `s^{1/2}` and `s^{3/2}` as well as for constants and lines, which matches
/// the `√t` onset of the trace and restores second-order accuracy on a
/// uniform grid.
struct StartingWeights {
    /// `j^{1/2}` and `j^{3/2}` for every grid index.
    half: Vec<f64>,
    three_half: Vec<f64>,
    inverses: [nalgebra::DMatrix<f64>; 3],
}

impl StartingWeights {
    fn new(n: usize) -> Self {
        let half: Vec<f64> = (0..=n).map(|j| (j as f64).sqrt()).collect();
        let three_half: Vec<f64> = (0..=n).map(|j| (j as f64).powf(1.5)).collect();
        let exponents: [&[f64]; 3] = [&[0.0, 0.5], &[0.0, 0.5, 1.0], &[0.0, 0.5, 1.0, 1.5]];
        let inverses = exponents.map(|betas| {
            let m = betas.len();
            let v = nalgebra::DMatrix::from_fn(m, m, |r, j| {
                if betas[r] == 0.0 {
                    1.0
                } else {
                    (j as f64).powf(betas[r])
                }
            });
            v.try_inverse().expect("Vandermonde in distinct powers is invertible")
        });
        Self {
            half,
            three_half,
            inverses,
        }
    }

    /// Weights on nodes `0..=min(i,3)` given `Σ_j Ŵ_ij j^{1/2}` and `Σ_j Ŵ_ij j^{3/2}`.
    fn correction(&self, i: usize, half_moment: f64, three_half_moment: f64) -> Vec<f64> {
        let it = i as f64;
        // ∫_0^i (i−u)^{-1/2} u^β du = i^{β+1/2} B(1/2, β+1)
        let half_defect = it * PI / 2.0 - half_moment;
        let three_half_defect = it * it * 3.0 * PI / 8.0 - three_half_moment;
        let (inverse, rhs) = match i {
            1 => (&self.inverses[0], vec![0.0, half_defect]),
            2 => (&self.inverses[1], vec![0.0, half_defect, 0.0]),
            _ => (&self.inverses[2], vec![0.0, half_defect, 0.0, three_half_defect]),
        };
        (inverse * nalgebra::DVector::from_vec(rhs)).iter().copied().collect()
    }
}

/// Nonnegative root of `a w² + w = b` (`a > 0`) by Newton, falling back to
/// damped fixed-point iteration.
fn solve_step(a: f64, b: f64) -> std::result::Result<f64, String> {
    if !b.is_finite() {
        return Err(format!("non-finite right-hand side {b}"));
    }
    if b < 0.0 {
        return Err(format!(
            "no nonnegative solution (right-hand side {b:.3e}); step too coarse"
        ));
    }
    let tol = RESIDUAL_TOL * b.max(1.0);
    let residual = |w: f64| a * w * w + w - b;
    let mut w = b;
    for _ in 0..NEWTON_MAX_ITER {
        let r = residual(w);
        if r.abs() <= tol {
            return Ok(w);
        }
        w -= r / (2.0 * a * w + 1.0);
    }
    let mut w = b.max(0.0);
    for _ in 0..FIXED_POINT_MAX_ITER {
        if residual(w).abs() <= tol {
            if w < 0.0 {
                break;
            }
            return Ok(w);
        }
        w = 0.5 * w + 0.5 * (b - a * w * w);
    }
    Err(format!(
        "nonlinear step did not converge in {NEWTON_MAX_ITER} Newton iterations"
    ))
}

/// `v(t, x)` off (or on) the catalyst, from a trace solved with the same forcing.
pub fn reconstruct_solution(trace: &CatalystTrace, forcing: &Forcing, t: f64, x: f64) -> Result<f64> {
    let horizon = trace.horizon();
    if !(t > 0.0) || t > horizon * (1.0 + 1e-12) {
        return Err(Error::Domain(format!("t = {t} outside (0, {horizon}]")));
    }
    let h = trace.step;
    let c = trace.params.c;
    let pos = t / h;
    let nearest = pos.round();
    if x == c && (pos - nearest).abs() < 1e-9 {
        return Ok(trace.values[nearest as usize]);
    }
    let absorbed = catalyst_convolution(trace, t, c - x);
    Ok(forcing.value(t, x) - 0.5 * trace.params.effective_sigma2() * absorbed)
}

/// `∫_0^t p(t−s, d) w(s)² ds` with `w²` piecewise linear on the trace grid.
fn catalyst_convolution(trace: &CatalystTrace, t: f64, d: f64) -> f64 {
    let h = trace.step;
    let vals = &trace.values;
    let last = vals.len() - 1;
    let full = (((t / h) + 1e-9).floor() as usize).min(last);
    let sq = |i: usize| vals[i] * vals[i];
    // nodes s_0..s_full, then t itself if it falls strictly inside a step
    let mut nodes: Vec<(f64, f64)> = (0..=full).map(|i| (i as f64 * h, sq(i))).collect();
    let rest = t - full as f64 * h;
    if rest > 1e-12 * h && full < last {
        let end = sq(full) + (sq(full + 1) - sq(full)) * rest / h;
        nodes.push((t, end));
    } else if let Some(node) = nodes.last_mut() {
        node.0 = t;
    }
    let taus: Vec<f64> = nodes.iter().map(|&(s, _)| (t - s).max(0.0)).collect();
    let big_f: Vec<f64> = taus.iter().map(|&tau| kernel_time_integral(tau, d)).collect();
    let big_g: Vec<f64> = taus.iter().map(|&tau| kernel_time_moment(tau, d)).collect();
    let mut acc = 0.0;
    for j in 0..nodes.len() - 1 {
        let (tau0, tau1) = (taus[j], taus[j + 1]);
        let width = tau0 - tau1;
        if width <= 0.0 {
            continue;
        }
        let (phi0, phi1) = (nodes[j].1, nodes[j + 1].1);
        let i0 = big_f[j] - big_f[j + 1];
        let i1 = big_g[j] - big_g[j + 1];
        acc += phi1 * i0 + (phi0 - phi1) * (i1 - tau1 * i0) / width;
    }
    acc
}

/// Laplace functionals built on the trace solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceSolver {
    pub steps: usize,
    pub abs_tol: f64,
}

impl Default for LaplaceSolver {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            abs_tol: 1e-11,
        }
    }
}

impl LaplaceSolver {
    /// `exp(−⟨μ, V_t f⟩)` for `f ≥ 0`.
    pub fn functional(&self, f: &TestFn, params: &ModelParams, t: f64, initial: &InitialMeasure) -> Result<f64> {
        if !f.is_nonnegative() {
            return Err(Error::Domain(
                "Laplace functional needs a nonnegative test function".into(),
            ));
        }
        if !initial.is_nonnegative() {
            return Err(Error::Domain("initial density must be nonnegative".into()));
        }
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
        }
        if f.is_zero() {
            return Ok(1.0);
        }
        if t == 0.0 {
            return Ok((-initial.pair(f)).exp());
        }
        let forcing = Forcing::Semigroup(f.clone());
        Ok((-self.pairing(&forcing, params, t, initial)?).exp())
    }

    /// `E exp(−Σ θ_i x_t(z_i))` for the density field, points `(θ_i, z_i)`.
    pub fn density_field(
        &self,
        points: &[(f64, f64)],
        params: &ModelParams,
        t: f64,
        initial: &InitialMeasure,
    ) -> Result<f64> {
        let forcing = Forcing::DensityPoints(points.to_vec());
        forcing.validate(params)?;
        if !(t > 0.0) {
            return Err(Error::Domain(format!("density field needs t > 0, got {t}")));
        }
        if points.iter().all(|p| p.0 == 0.0) {
            return Ok(1.0);
        }
        Ok((-self.pairing(&forcing, params, t, initial)?).exp())
    }

    /// `E exp(−Σ θ_i y_t(z_i))` for the occupation density, points `(θ_i, z_i)`.
    pub fn occupation(
        &self,
        points: &[(f64, f64)],
        params: &ModelParams,
        t: f64,
        initial: &InitialMeasure,
    ) -> Result<f64> {
        let forcing = Forcing::OccupationPoints(points.to_vec());
        forcing.validate(params)?;
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
        }
        if t == 0.0 || points.iter().all(|p| p.0 == 0.0) {
            return Ok(1.0);
        }
        Ok((-self.pairing(&forcing, params, t, initial)?).exp())
    }

    /// `⟨μ, v(t, ·)⟩` by adaptive quadrature of the reconstructed field, split
    /// at the catalyst and at the forcing's peaks.
    pub fn pairing(&self, forcing: &Forcing, params: &ModelParams, t: f64, initial: &InitialMeasure) -> Result<f64> {
        if matches!(initial, InitialMeasure::Zero) {
            return Ok(0.0);
        }
        let trace = solve_catalyst_trace(forcing, params, t, self.steps)?;
        let (mut breaks, lo, hi) = forcing.spatial_layout(t);
        let c = params.c;
        let reach = TAIL_SIGMAS * t.sqrt();
        let mut lo = lo.min(c - reach);
        let mut hi = hi.max(c + reach);
        if let InitialMeasure::Density(g) = initial {
            // the density's own envelope bounds the integrand as well
            if let Some((glo, ghi)) = g.envelope(TAIL_SIGMAS) {
                lo = lo.max(glo);
                hi = hi.min(ghi);
                breaks.extend(g.terms().iter().map(|term| term.center()));
            }
        }
        if !(hi > lo) {
            return Ok(0.0);
        }
        breaks.push(c);
        breaks.push(lo);
        breaks.push(hi);
        breaks.retain(|b| *b >= lo && *b <= hi);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let integrand = |x: f64| {
            let v = reconstruct_solution(&trace, forcing, t, x).expect("t within trace");
            v * initial.heat_density_at(0.0, x)
        };
        Ok(integrate_with_breaks(integrand, &breaks, self.abs_tol, 1e-12).value)
    }
}

/// `exp(−⟨μ, V_t f⟩)` with the default grid.
pub fn laplace_functional(f: &TestFn, params: &ModelParams, t: f64, initial: &InitialMeasure) -> Result<f64> {
    LaplaceSolver::default().functional(f, params, t, initial)
}

/// Laplace transform of the density field with the default grid.
pub fn laplace_density_field(
    points: &[(f64, f64)],
    params: &ModelParams,
    t: f64,
    initial: &InitialMeasure,
) -> Result<f64> {
    LaplaceSolver::default().density_field(points, params, t, initial)
}

/// Laplace transform of the occupation density with the default grid.
pub fn laplace_occupation(
    points: &[(f64, f64)],
    params: &ModelParams,
    t: f64,
    initial: &InitialMeasure,
) -> Result<f64> {
    LaplaceSolver::default().occupation(points, params, t, initial)
}
