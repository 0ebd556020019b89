//! Monte Carlo summaries, goodness-of-fit statistics and the convergence
//! report across fluctuation indices.

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, CsvTable};
use crate::particle_sim::{fluctuation_observable, Trajectory};
use crate::TestFn;

/// Mean, unbiased variance and their standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McSummary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub stderr_mean: f64,
    /// From the fourth central moment: `√((m₄ − s⁴ (n−3)/(n−1)) / n)`.
    pub stderr_variance: f64,
}

pub fn mc_summary(samples: &[f64]) -> Result<McSummary> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {n}")));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let m2 = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    let m4 = samples.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
    let variance = m2 * nf / (nf - 1.0);
    let fourth = m4 - variance * variance * (nf - 3.0) / (nf - 1.0);
    Ok(McSummary {
        n,
        mean,
        variance,
        stderr_mean: (variance / nf).sqrt(),
        stderr_variance: (fourth.max(0.0) / nf).sqrt(),
    })
}

/// One-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
}

/// Asymptotic Kolmogorov tail `Q(λ) = 2 Σ_{j≥1} (−1)^{j−1} e^{−2 j² λ²}`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// `D = sup |F_n − F|`; p-value with Stephens' small-sample correction.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::Domain(format!("KS test needs at least 10 samples, got {n}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    let root = nf.sqrt();
    let lambda = (root + 0.12 + 0.11 / root) * d;
    Ok(KsResult {
        d,
        p_value: kolmogorov_tail(lambda),
    })
}

/// KS statistic against `Normal(mean, variance)`.
pub fn ks_normal(samples: &[f64], mean: f64, variance: f64) -> Result<KsResult> {
    let normal = Normal::new(mean, variance.sqrt()).map_err(|e| Error::Domain(e.to_string()))?;
    ks_statistic(samples, |x| normal.cdf(x))
}

/// Null standard deviation of `D` for `n` samples, `sd(K)/√n` with
/// `sd(K)² = π²/12 − (π/2) ln² 2` for the Kolmogorov law.
pub fn ks_stderr(n: usize) -> f64 {
    let sd = (PI * PI / 12.0 - 0.5 * PI * LN_2 * LN_2).sqrt();
    sd / (n as f64).sqrt()
}

/// `(1/M) Σ e^{i u x}`.
pub fn empirical_cf(samples: &[f64], u: f64) -> Complex64 {
    if samples.is_empty() {
        return Complex64::new(1.0, 0.0);
    }
    let (re, im) = samples
        .iter()
        .fold((0.0, 0.0), |(re, im), x| (re + (u * x).cos(), im + (u * x).sin()));
    let m = samples.len() as f64;
    Complex64::new(re / m, im / m)
}

/// Fluctuation samples of one index `k` at a fixed time, with the
/// configuration they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSamples {
    pub k: u32,
    pub sigma2: f64,
    pub c: f64,
    pub t: f64,
    pub f_id: String,
    /// `⟨Z_k(t), f⟩` per replicate.
    pub fluctuation: Vec<f64>,
    /// `sup_{s≤t} |y^k_s(c) − s|` per replicate.
    pub occupation_drift: Vec<f64>,
}

/// Collects the fluctuation at the last record time and the occupation
/// drift at the catalyst from one batch of trajectories.
pub fn index_samples(trajs: &[Trajectory], f: &TestFn, f_id: &str, raw: bool) -> Result<IndexSamples> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::Domain("index samples need at least one trajectory".into()))?;
    let k = first.model.k;
    let fluctuation = trajs
        .iter()
        .map(|t| {
            let path = fluctuation_observable(t, f, k, raw)?;
            Ok(*path.values.last().expect("record times are non-empty"))
        })
        .collect::<Result<_>>()?;
    let occupation_drift = trajs
        .iter()
        .map(|t| t.occupation_drift(t.model.c))
        .collect::<Result<_>>()?;
    Ok(IndexSamples {
        k,
        sigma2: first.model.sigma2,
        c: first.model.c,
        t: *first.record_times.last().expect("record times are non-empty"),
        f_id: f_id.to_string(),
        fluctuation,
        occupation_drift,
    })
}

/// One row of the convergence report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub k: u32,
    pub replicates: usize,
    pub mean: f64,
    pub variance: f64,
    pub stderr_variance: f64,
    /// `(variance − reference) / stderr_variance`.
    pub variance_z: f64,
    pub ks_d: f64,
    pub ks_stderr: f64,
    pub ks_p: f64,
    pub cf_gap: f64,
    pub drift_mean: f64,
    pub drift_stderr: f64,
    pub degenerate: bool,
}

/// Finite-dimensional surrogate of convergence in law across `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub header: String,
    pub reference_variance: f64,
    pub t: f64,
    pub f_id: String,
    pub rows: Vec<ConvergenceRow>,
}

pub const REPORT_HEADER: &str = "Convergence is assessed through the marginal law of <Z_k(t), f> at a fixed time and the occupation functional at the catalyst only; no path-space metric is computed.";

/// Compares each index's samples with `Normal(0, reference_variance)`.
pub fn convergence_report(samples: &[IndexSamples], reference_variance: f64) -> Result<ConvergenceReport> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Domain("convergence report needs at least one index".into()))?;
    for s in samples {
        if s.sigma2 != first.sigma2 || s.c != first.c || s.t != first.t || s.f_id != first.f_id {
            return Err(Error::Contract(format!(
                "index k = {} was run with a different configuration than k = {}",
                s.k, first.k
            )));
        }
    }
    let analytic_cf = (-0.5 * reference_variance).exp();
    let rows = samples
        .iter()
        .map(|s| {
            let summary = mc_summary(&s.fluctuation)?;
            let drift = mc_summary(&s.occupation_drift)?;
            let degenerate = reference_variance == 0.0;
            let (ks_d, ks_p, cf_gap, variance_z) = if degenerate {
                let spread = summary.variance;
                let d = if spread == 0.0 { 0.0 } else { 1.0 };
                (
                    d,
                    if spread == 0.0 { 1.0 } else { 0.0 },
                    (empirical_cf(&s.fluctuation, 1.0) - 1.0).norm(),
                    0.0,
                )
            } else {
                let ks = ks_normal(&s.fluctuation, 0.0, reference_variance)?;
                let gap = (empirical_cf(&s.fluctuation, 1.0) - Complex64::new(analytic_cf, 0.0)).norm();
                let z = (summary.variance - reference_variance) / summary.stderr_variance;
                (ks.d, ks.p_value, gap, z)
            };
            Ok(ConvergenceRow {
                k: s.k,
                replicates: summary.n,
                mean: summary.mean,
                variance: summary.variance,
                stderr_variance: summary.stderr_variance,
                variance_z,
                ks_d,
                ks_stderr: ks_stderr(summary.n),
                ks_p,
                cf_gap,
                drift_mean: drift.mean,
                drift_stderr: drift.stderr_mean,
                degenerate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceReport {
        header: REPORT_HEADER.to_string(),
        reference_variance,
        t: first.t,
        f_id: first.f_id.clone(),
        rows,
    })
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(&[
            "k",
            "replicates",
            "mean",
            "variance",
            "stderr_variance",
            "variance_z",
            "ks_d",
            "ks_stderr",
            "ks_p",
            "cf_gap",
            "drift_mean",
            "drift_stderr",
            "degenerate",
        ]);
        for r in &self.rows {
            table.push(vec![
                r.k.to_string(),
                r.replicates.to_string(),
                fmt_f64(r.mean),
                fmt_f64(r.variance),
                fmt_f64(r.stderr_variance),
                fmt_f64(r.variance_z),
                fmt_f64(r.ks_d),
                fmt_f64(r.ks_stderr),
                fmt_f64(r.ks_p),
                fmt_f64(r.cf_gap),
                fmt_f64(r.drift_mean),
                fmt_f64(r.drift_stderr),
                r.degenerate.to_string(),
            ]);
        }
        table
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
