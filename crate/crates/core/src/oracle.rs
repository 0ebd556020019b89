//! Reference solvers built independently of the production code paths, used
//! by the verification suite to cross-check the Volterra solver and the
//! collapsed moment formulas.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::evolution::Forcing;
use crate::kernels::{heat_kernel, ModelParams};
use crate::quadrature::{gauss_legendre, integrate, integrate_with_breaks};
use crate::TestFn;

/// Catalyst trace from Picard iteration `w ← g − κ K[w²]` on a uniform grid.
#[derive(Debug, Clone)]
pub struct PicardSolution {
    pub step: f64,
    pub values: Vec<f64>,
    pub iterations: usize,
}

/// Weights of `∫ u^{-1/2} φ(u) du` over `[m−1, m]` for linear `φ`, via the
/// substitution `u = y²`, under which the integrand is a quadratic in `y`
/// and two-point Gauss–Legendre is exact. Returns (weight at `u = m−1`, weight at `u = m`).
fn substituted_weights(m: usize) -> (f64, f64) {
    let (nodes, weights) = gauss_legendre(2);
    let lo = ((m - 1) as f64).sqrt();
    let hi = (m as f64).sqrt();
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let mut near = 0.0;
    let mut far = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        let y = mid + half * x;
        let u = y * y;
        // φ(u) = φ_near·(m − u) + φ_far·(u − (m−1)); du = 2y dy cancels u^{-1/2} = 1/y
        near += 2.0 * half * w * (m as f64 - u);
        far += 2.0 * half * w * (u - (m - 1) as f64);
    }
    (near, far)
}

/// Solves the catalyst trace equation by Picard iteration with FFT
/// convolution, stopping when the sup-change falls below `tol`.
pub fn picard_trace(
    forcing: &Forcing,
    params: &ModelParams,
    horizon: f64,
    n: usize,
    tol: f64,
    max_iter: usize,
) -> Result<PicardSolution> {
    let h = horizon / n as f64;
    let kappa = params.effective_sigma2() / (2.0 * (2.0 * PI).sqrt()) * h.sqrt();
    let g: Vec<f64> = (0..=n)
        .map(|i| match forcing {
            Forcing::DensityPoints(_) if i == 0 => 0.0,
            _ => forcing.value(i as f64 * h, params.c),
        })
        .collect();

    let mut near = vec![0.0; n + 2];
    let mut far = vec![0.0; n + 2];
    for m in 1..=n + 1 {
        (near[m], far[m]) = substituted_weights(m);
    }
    // Toeplitz weight of w_j² in row i at lag d = i − j, valid for j ≥ 1
    let mut lag = vec![0.0; n + 1];
    lag[0] = near[1];
    for d in 1..=n {
        lag[d] = near[d + 1] + far[d];
    }

    let size = (2 * n + 2).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);
    let mut kernel: Vec<Complex64> = (0..size)
        .map(|i| Complex64::new(if i <= n { lag[i] } else { 0.0 }, 0.0))
        .collect();
    forward.process(&mut kernel);

    let mut w = g.clone();
    let mut buf = vec![Complex64::new(0.0, 0.0); size];
    for iteration in 1..=max_iter {
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new(if i <= n { w[i] * w[i] } else { 0.0 }, 0.0);
        }
        forward.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&kernel) {
            *b *= k;
        }
        inverse.process(&mut buf);
        let scale = 1.0 / size as f64;
        let w0sq = w[0] * w[0];
        let mut change: f64 = 0.0;
        let mut next = vec![g[0]; n + 1];
        for i in 1..=n {
            // j = 0 carries only the far weight of its interval
            let conv = buf[i].re * scale - lag[i] * w0sq + far[i] * w0sq;
            next[i] = g[i] - kappa * conv;
            change = change.max((next[i] - w[i]).abs());
        }
        w = next;
        if change < tol {
            return Ok(PicardSolution {
                step: h,
                values: w,
                iterations: iteration,
            });
        }
    }
    Err(Error::SolverFailure {
        step: n,
        time: horizon,
        reason: format!("Picard iteration did not settle in {max_iter} sweeps"),
    })
}

impl PicardSolution {
    /// `v(t_n, x)` at the final grid time by composite Simpson in `s`
    /// (the kernel `p(t−s, c−x)` is smooth for `x ≠ c`).
    pub fn field_at_horizon(&self, forcing: &Forcing, params: &ModelParams, x: f64) -> Result<f64> {
        let n = self.values.len() - 1;
        if !n.is_multiple_of(2) || x == params.c {
            return Err(Error::Domain(
                "Simpson field needs an even grid and x off the catalyst".into(),
            ));
        }
        let t = self.step * n as f64;
        let integrand = |i: usize| {
            let tau = t - i as f64 * self.step;
            let k = if tau > 0.0 {
                heat_kernel(tau, params.c - x).expect("tau > 0")
            } else {
                0.0
            };
            k * self.values[i] * self.values[i]
        };
        let mut acc = integrand(0) + integrand(n);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * integrand(i);
        }
        let absorbed = acc * self.step / 3.0;
        Ok(forcing.value(t, x) - 0.5 * params.effective_sigma2() * absorbed)
    }
}

/// `Var⟨X_t, f⟩` under `λ` by nested quadrature, without the kernel-mass
/// collapse: `σ² ∫dx ∫_0^t p(t−s, c−x) (P_s f(c))² ds`, with `P_s f(c)` itself
/// computed as a spatial integral against the heat kernel.
pub fn nested_var_mass(f: &TestFn, t: f64, params: &ModelParams, tol: f64) -> f64 {
    let c = params.c;
    let reach = f.support_radius();
    let heat_at_c = |s: f64| {
        if s == 0.0 {
            return f.eval(c);
        }
        let r = 12.0 * s.sqrt() + reach + c.abs();
        integrate(|y| heat_kernel(s, c - y).unwrap() * f.eval(y), -r, r, tol * 1e-2, 0.0).value
    };
    let inner = |x: f64| {
        integrate(
            |s| {
                if s >= t {
                    return 0.0;
                }
                let ps = heat_at_c(s);
                heat_kernel(t - s, c - x).unwrap() * ps * ps
            },
            0.0,
            t,
            tol * 1e-2,
            0.0,
        )
        .value
    };
    let r = 12.0 * t.sqrt();
    params.effective_sigma2() * integrate_with_breaks(inner, &[c - r, c, c + r], tol, 0.0).value
}

/// `Var y_t(z)` under `λ` by nested quadrature of the spatial, time and
/// inner-time integrals: `σ² ∫dx ∫_0^t p(s, c−x) [∫_s^t p(u−s, z−c) du]² ds`.
pub fn nested_var_occupation(z: f64, t: f64, params: &ModelParams, tol: f64) -> f64 {
    let c = params.c;
    // ∫_s^t p(u−s, z−c) du with u − s = r², which removes the r^{-1} singularity
    let clock = |s: f64| {
        integrate(
            |r| {
                if r > 0.0 {
                    2.0 * r * heat_kernel(r * r, z - c).unwrap()
                } else {
                    0.0
                }
            },
            0.0,
            (t - s).sqrt(),
            tol * 1e-3,
            0.0,
        )
        .value
    };
    let inner = |x: f64| {
        integrate(
            |s| {
                if s <= 0.0 {
                    return 0.0;
                }
                let q = clock(s);
                heat_kernel(s, c - x).unwrap() * q * q
            },
            0.0,
            t,
            tol * 1e-2,
            0.0,
        )
        .value
    };
    let r = 12.0 * t.sqrt();
    params.effective_sigma2() * integrate_with_breaks(inner, &[c - r, c, c + r], tol, 0.0).value
}
