//! Sampling the Ornstein–Uhlenbeck type fluctuation limit
//! `⟨Z(t), f⟩ = ⟨μ, P_t f⟩ + σ ∫_0^t P_{t−s} f(c) dB(s)`, driven by one
//! Brownian motion at the catalyst, and checking the Langevin form
//! `⟨Z(t), f⟩ = ⟨μ, f⟩ + σ B(t) f(c) + ∫_0^t ⟨Z(s), Af⟩ ds`.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{fmt_f64, CsvTable};
use crate::kernels::{InitialMeasure, ModelParams};
use crate::moments::{ou_char_functional, ou_covariance};
use crate::rng::{mix, stream};
use crate::TestFn;

/// Brownian path on a grid, tagged with the id of the noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub times: Vec<f64>,
    pub increments: Vec<f64>,
    pub noise_id: u64,
}

impl BrownianPath {
    /// Standard Brownian motion on `grid` (starting at 0) from noise `seed`.
    pub fn sample(grid: &[f64], seed: u64) -> Result<Self> {
        check_grid(grid)?;
        let mut rng = stream(seed);
        let increments = grid
            .windows(2)
            .map(|w| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (w[1] - w[0]).sqrt() * z
            })
            .collect();
        Ok(Self {
            times: grid.to_vec(),
            increments,
            noise_id: seed,
        })
    }

    /// `B(t_i)` for every grid time.
    pub fn values(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.times.len());
        let mut acc = 0.0;
        b.push(0.0);
        for d in &self.increments {
            acc += d;
            b.push(acc);
        }
        b
    }

    /// The same path observed on every `factor`-th grid point.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.increments.len().is_multiple_of(factor) {
            return Err(Error::Domain(format!(
                "cannot coarsen {} steps by {factor}",
                self.increments.len()
            )));
        }
        Ok(Self {
            times: self.times.iter().step_by(factor).copied().collect(),
            increments: self.increments.chunks(factor).map(|c| c.iter().sum()).collect(),
            noise_id: self.noise_id,
        })
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 || grid[0] != 0.0 {
        return Err(Error::Domain(
            "grid must start at 0 and contain at least two times".into(),
        ));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `⟨Z(t_i), f⟩` along a grid for one test function.
#[derive(Debug, Clone, PartialEq)]
pub struct OuPath {
    pub f: TestFn,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub noise_id: u64,
}

/// Paths of several test functions driven by one Brownian path.
#[derive(Debug, Clone, PartialEq)]
pub struct OuSample {
    pub brownian: BrownianPath,
    pub paths: Vec<OuPath>,
}

/// Wiener-integral paths for `fs` driven by `brownian`, midpoint rule in `s`.
pub fn ou_paths_from_noise(
    fs: &[TestFn],
    brownian: &BrownianPath,
    params: &ModelParams,
    initial: &InitialMeasure,
) -> Result<Vec<OuPath>> {
    params.validate()?;
    let times = &brownian.times;
    let mids: Vec<f64> = times.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let sigma = params.sigma2.sqrt();
    let c = params.c;
    let n = times.len() - 1;
    let h = times[n] / n as f64;
    let uniform = times
        .iter()
        .enumerate()
        .all(|(i, &t)| (t - i as f64 * h).abs() <= 1e-12 * times[n]);
    fs.iter()
        .map(|f| {
            // on a uniform grid the integrand depends on i − j only
            let lagged: Vec<f64> = if uniform {
                (0..=n)
                    .map(|d| {
                        if d == 0 {
                            0.0
                        } else {
                            f.heat_eval((d as f64 - 0.5) * h, c)
                        }
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let mut values = Vec::with_capacity(times.len());
            for (i, &t) in times.iter().enumerate() {
                let mean = initial.pair_heat(f, t)?;
                let mut noise = 0.0;
                for j in 0..i {
                    let k = if uniform {
                        lagged[i - j]
                    } else {
                        f.heat_eval(t - mids[j], c)
                    };
                    noise += k * brownian.increments[j];
                }
                values.push(mean + sigma * noise);
            }
            Ok(OuPath {
                f: f.clone(),
                times: times.clone(),
                values,
                noise_id: brownian.noise_id,
            })
        })
        .collect()
}

/// Samples one replicate: a Brownian path from `seed` and the paths of all `fs`.
pub fn sample_ou_paths(
    fs: &[TestFn],
    grid: &[f64],
    params: &ModelParams,
    initial: &InitialMeasure,
    seed: u64,
) -> Result<OuSample> {
    let brownian = BrownianPath::sample(grid, seed)?;
    let paths = ou_paths_from_noise(fs, &brownian, params, initial)?;
    Ok(OuSample { brownian, paths })
}

/// Terminal values `⟨Z(T), f⟩` of `m` independent path replicates on a
/// uniform grid of `steps` steps. Replicate `r` uses noise `mix(seed, r)`.
pub fn sample_ou_terminal(
    f: &TestFn,
    horizon: f64,
    steps: usize,
    params: &ModelParams,
    initial: &InitialMeasure,
    seed: u64,
    m: usize,
) -> Result<Vec<f64>> {
    params.validate()?;
    if steps == 0 || !(horizon > 0.0) {
        return Err(Error::Domain("need a positive horizon and at least one step".into()));
    }
    let dt = horizon / steps as f64;
    let sigma = params.sigma2.sqrt();
    let mean = initial.pair_heat(f, horizon)?;
    // integrand at the midpoints, identical to the path sampler's last row
    let weights: Vec<f64> = (0..steps)
        .map(|j| sigma * f.heat_eval(horizon - (j as f64 + 0.5) * dt, params.c))
        .collect();
    let root_dt = dt.sqrt();
    Ok((0..m)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(mix(seed, r as u64));
            let mut acc = 0.0;
            for w in &weights {
                let z: f64 = StandardNormal.sample(&mut rng);
                acc += w * root_dt * z;
            }
            mean + acc
        })
        .collect())
}

/// Exact Gaussian samples of `(⟨Z(t_1), f⟩, …, ⟨Z(t_n), f⟩)` from the
/// Cholesky factor of the covariance matrix; rows are replicates.
pub fn cholesky_sample(
    f: &TestFn,
    times: &[f64],
    params: &ModelParams,
    initial: &InitialMeasure,
    seed: u64,
    m: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = times.len();
    if n == 0 || times.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Domain("Cholesky sampler needs positive times".into()));
    }
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = ou_covariance(f, f, times[i], times[j], params)?;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let chol = Cholesky::new(gram).ok_or_else(|| Error::Domain("covariance matrix is not positive definite".into()))?;
    let factor = chol.l();
    let means: Vec<f64> = times.iter().map(|&t| initial.pair_heat(f, t)).collect::<Result<_>>()?;
    Ok((0..m)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(mix(seed, r as u64));
            let xi = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
            let z = &factor * xi;
            z.iter().zip(&means).map(|(z, m)| z + m).collect()
        })
        .collect())
}

/// `max_i |⟨Z(t_i),f⟩ − ⟨μ,f⟩ − σ B(t_i) f(c) − ∫_0^{t_i} ⟨Z(s),Af⟩ ds|`
/// with the time integral by the trapezoid rule.
pub fn langevin_residual(
    f_path: &OuPath,
    af_path: &OuPath,
    brownian: &BrownianPath,
    initial: &InitialMeasure,
    params: &ModelParams,
) -> Result<f64> {
    if f_path.noise_id != brownian.noise_id || af_path.noise_id != brownian.noise_id {
        return Err(Error::Contract(format!(
            "paths driven by noise {} and {} do not match Brownian path {}",
            f_path.noise_id, af_path.noise_id, brownian.noise_id
        )));
    }
    if f_path.times != brownian.times || af_path.times != brownian.times {
        return Err(Error::Contract("paths and Brownian motion use different grids".into()));
    }
    if af_path.f != f_path.f.generator()? {
        return Err(Error::Contract("second path is not driven by Af".into()));
    }
    let f = &f_path.f;
    let sigma = params.sigma2.sqrt();
    let fc = f.eval(params.c);
    let start = initial.pair(f);
    let b = brownian.values();
    let times = &brownian.times;
    let mut drift = 0.0;
    let mut worst: f64 = 0.0;
    for i in 0..times.len() {
        if i > 0 {
            drift += 0.5 * (times[i] - times[i - 1]) * (af_path.values[i] + af_path.values[i - 1]);
        }
        let r = f_path.values[i] - start - sigma * b[i] * fc - drift;
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

/// Empirical and analytic characteristic function of `⟨Z(t), f⟩` at argument 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CfReport {
    pub t: f64,
    pub samples: usize,
    pub empirical_re: f64,
    pub empirical_im: f64,
    pub analytic_re: f64,
    pub analytic_im: f64,
}

impl CfReport {
    pub fn empirical(&self) -> Complex64 {
        Complex64::new(self.empirical_re, self.empirical_im)
    }

    pub fn analytic(&self) -> Complex64 {
        Complex64::new(self.analytic_re, self.analytic_im)
    }

    pub fn gap(&self) -> f64 {
        (self.empirical() - self.analytic()).norm()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Compares `(1/M) Σ e^{i⟨Z(t),f⟩}` from the path sampler with the analytic value.
#[allow(clippy::too_many_arguments)]
pub fn ou_transition_check(
    f: &TestFn,
    t: f64,
    steps: usize,
    params: &ModelParams,
    initial: &InitialMeasure,
    seed: u64,
    m: usize,
) -> Result<CfReport> {
    let analytic = ou_char_functional(f, t, params, initial)?;
    let empirical = if t == 0.0 {
        let x = initial.pair(f);
        Complex64::new(0.0, x).exp()
    } else {
        let samples = sample_ou_terminal(f, t, steps, params, initial, seed, m)?;
        crate::stats::empirical_cf(&samples, 1.0)
    };
    Ok(CfReport {
        t,
        samples: m,
        empirical_re: empirical.re,
        empirical_im: empirical.im,
        analytic_re: analytic.re,
        analytic_im: analytic.im,
    })
}

/// CSV `t,f_id,value,replicate` for a set of samples.
pub fn paths_to_csv(samples: &[OuSample]) -> CsvTable {
    let mut table = CsvTable::new(&["t", "f_id", "value", "replicate"]);
    for (r, s) in samples.iter().enumerate() {
        for (j, path) in s.paths.iter().enumerate() {
            for (t, v) in path.times.iter().zip(&path.values) {
                table.push(vec![fmt_f64(*t), j.to_string(), fmt_f64(*v), r.to_string()]);
            }
        }
    }
    table
}

/// Uniform grid `0, h, …, T` with `steps` steps.
pub fn uniform_grid(horizon: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| horizon * i as f64 / steps as f64).collect()
}
