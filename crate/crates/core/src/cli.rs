//! Command-line runner. Each invocation writes one run directory holding
//! CSV outputs and a `manifest.json` with the resolved configuration, seeds,
//! version and timings. A failed run leaves no directory behind.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::evolution::{
    laplace_density_field, laplace_functional, laplace_occupation, reconstruct_solution, solve_catalyst_trace, Forcing,
};
use crate::io::{fmt_f64, CsvTable};
use crate::moments::{
    fluctuation_second_moment, mean_mass, mean_occupation, ou_char_functional, ou_covariance, reports_to_json,
    var_mass, var_occupation, MomentReport,
};
use crate::ou_process::{langevin_residual, ou_transition_check, paths_to_csv, sample_ou_paths, uniform_grid};
use crate::particle_sim::{
    events_to_csv, fluctuation_observable, martingale_path, occupation_density, simulate, trajectories_to_csv,
};
use crate::rng::mix;
use crate::stats::{convergence_report, index_samples, mc_summary};

pub const USAGE: &str = "\
usage: catsbm <command> [--config PATH] [--out-dir DIR] [--seed N] [--threads N]
              [--k-list 1,2,4,8] [--KEY=VALUE ...]

commands:
  solve              catalyst trace, solution field and Laplace functionals
  moments            closed-form moment table
  simulate           particle system replicates
  ou-sample          limit-process paths, Langevin residuals and CF check
  fluctuation-study  convergence report over the k list
  verify             acceptance suite; exit code 1 when a hard check fails

Any config key can be overridden with --KEY=VALUE (dashes or underscores).";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Moments,
    Simulate,
    OuSample,
    FluctuationStudy,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Moments => "moments",
            Command::Simulate => "simulate",
            Command::OuSample => "ou-sample",
            Command::FluctuationStudy => "fluctuation-study",
            Command::Verify => "verify",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "solve" => Command::Solve,
            "moments" => Command::Moments,
            "simulate" => Command::Simulate,
            "ou-sample" => Command::OuSample,
            "fluctuation-study" => Command::FluctuationStudy,
            "verify" => Command::Verify,
            _ => return Err(Error::Parse(format!("unknown command `{s}`\n{USAGE}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub command: Command,
    pub config: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub overrides: Vec<(String, String)>,
}

/// Parses arguments after the program name.
pub fn parse_args(args: &[String]) -> Result<Invocation> {
    let mut iter = args.iter();
    let command = Command::parse(iter.next().ok_or_else(|| Error::Parse(USAGE.to_string()))?)?;
    let mut config = None;
    let mut out_dir = PathBuf::from("runs");
    let mut overrides = Vec::new();
    while let Some(arg) = iter.next() {
        let flag = arg
            .strip_prefix("--")
            .ok_or_else(|| Error::Parse(format!("unexpected argument `{arg}`\n{USAGE}")))?;
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        let mut value = || -> Result<String> {
            match &inline {
                Some(v) => Ok(v.clone()),
                None => iter
                    .next()
                    .cloned()
                    .ok_or_else(|| Error::Parse(format!("flag --{name} needs a value"))),
            }
        };
        match name {
            "config" => config = Some(PathBuf::from(value()?)),
            "out-dir" => out_dir = PathBuf::from(value()?),
            "seed" | "threads" => overrides.push((name.to_string(), value()?)),
            "k-list" => overrides.push(("k_list".to_string(), value()?)),
            _ => {
                let v =
                    inline.ok_or_else(|| Error::Parse(format!("override --{name} must be written --{name}=VALUE")))?;
                overrides.push((name.replace('-', "_"), v));
            }
        }
    }
    Ok(Invocation {
        command,
        config,
        out_dir,
        overrides,
    })
}

/// Result of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    /// False only when `verify` found a failing hard check.
    pub passed: bool,
}

struct Output {
    files: Vec<String>,
    extra: Value,
    passed: bool,
}

impl Output {
    fn new() -> Self {
        Self {
            files: Vec::new(),
            extra: json!({}),
            passed: true,
        }
    }

    fn csv(&mut self, dir: &Path, name: &str, table: &CsvTable) -> Result<()> {
        table.write(&dir.join(name))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn text(&mut self, dir: &Path, name: &str, body: &str) -> Result<()> {
        std::fs::write(dir.join(name), body)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn utc_now() -> chrono::DateTime<chrono::Utc> {
    std::time::SystemTime::now().into()
}

fn run_dir(out_dir: &Path, command: Command, seed: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let stamp = utc_now().format("%Y%m%dT%H%M%S%.3fZ");
    let base = format!("{}-{stamp}-seed{seed}", command.name());
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = out_dir.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("unbounded loop returns")
}

/// Runs an invocation to completion.
pub fn execute(inv: &Invocation) -> Result<RunOutcome> {
    let cfg = match &inv.config {
        Some(path) => Config::from_file(path, &inv.overrides)?,
        None => Config::with_overrides(&inv.overrides)?,
    };
    let dir = run_dir(&inv.out_dir, inv.command, cfg.seed)?;
    let started = utc_now().to_rfc3339();
    let clock = Instant::now();
    let result = dispatch(inv.command, &cfg, &dir).and_then(|out| {
        let manifest = json!({
            "command": inv.command.name(),
            "version": env!("CARGO_PKG_VERSION"),
            "started_at": started,
            "wall_seconds": clock.elapsed().as_secs_f64(),
            "config": cfg.to_entries(),
            "seeds": {
                "master": cfg.seed,
                "derivation": "replicate r of index k uses mix(mix(seed, k), r); see README",
            },
            "outputs": out.files,
            "details": out.extra,
        });
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(out.passed)
    });
    match result {
        Ok(passed) => Ok(RunOutcome { dir, passed }),
        Err(e) => {
            let _ = std::fs::remove_dir_all(&dir);
            Err(e)
        }
    }
}

/// Entry point for the binary: returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    if args.iter().any(|a| a == "--help" || a == "-h") || args.is_empty() {
        println!("{USAGE}");
        return if args.is_empty() { 2 } else { 0 };
    }
    let outcome = parse_args(args).and_then(|inv| execute(&inv));
    match outcome {
        Ok(o) => {
            println!("{}", o.dir.display());
            if o.passed {
                0
            } else {
                eprintln!("verification failed; see {}", o.dir.join("verify.csv").display());
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(command: Command, cfg: &Config, dir: &Path) -> Result<Output> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match command {
        Command::Solve => solve(cfg, dir),
        Command::Moments => moments(cfg, dir),
        Command::Simulate => simulate_cmd(cfg, dir),
        Command::OuSample => ou_sample(cfg, dir),
        Command::FluctuationStudy => fluctuation_study(cfg, dir),
        Command::Verify => verify(cfg, dir),
    })
}

fn solve(cfg: &Config, dir: &Path) -> Result<Output> {
    let mut out = Output::new();
    let model = cfg.model()?;
    let f = cfg.test_function()?;
    let initial = cfg.initial_measure()?;
    let forcing = Forcing::Semigroup(f.clone());
    let trace = solve_catalyst_trace(&forcing, &model, cfg.horizon, cfg.solver_steps)?;
    out.csv(dir, "trace.csv", &trace.to_csv())?;

    let mut field = CsvTable::new(&["x", "v"]);
    let n = cfg.field_points - 1;
    for i in 0..=n {
        let x = model.c - cfg.field_half_width + 2.0 * cfg.field_half_width * i as f64 / n as f64;
        field.push(vec![
            fmt_f64(x),
            fmt_f64(reconstruct_solution(&trace, &forcing, cfg.horizon, x)?),
        ]);
    }
    out.csv(dir, "field.csv", &field)?;

    let mut laplace = CsvTable::new(&["quantity", "value"]);
    let rows = [
        ("absorbed_mass", trace.absorbed_mass()),
        (
            "laplace_functional",
            laplace_functional(&f, &model, cfg.horizon, &initial)?,
        ),
        (
            "laplace_density_field_at_c_plus_1",
            laplace_density_field(&[(1.0, model.c + 1.0)], &model, cfg.horizon, &initial)?,
        ),
        (
            "laplace_occupation_at_c",
            laplace_occupation(&[(1.0, model.c)], &model, cfg.horizon, &initial)?,
        ),
    ];
    for (name, v) in rows {
        laplace.push(vec![name.to_string(), fmt_f64(v)]);
    }
    out.csv(dir, "laplace.csv", &laplace)?;
    Ok(out)
}

fn moments(cfg: &Config, dir: &Path) -> Result<Output> {
    let mut out = Output::new();
    let model = cfg.model()?;
    let f = cfg.test_function()?;
    let initial = cfg.initial_measure()?;
    let t = cfg.horizon;
    let base = |extra: &[(&'static str, String)]| -> Vec<(&'static str, String)> {
        let mut v = vec![
            ("t", fmt_f64(t)),
            ("sigma2", fmt_f64(model.sigma2)),
            ("c", fmt_f64(model.c)),
        ];
        v.extend(extra.iter().cloned());
        v
    };
    let kk = ("k", model.k.to_string());
    let zc = ("z", fmt_f64(model.c));
    let cf = ou_char_functional(&f, t, &model, &initial)?;
    let reports = vec![
        MomentReport::new("mean_mass", &base(&[]), mean_mass(&initial, &f, t)?, true),
        MomentReport::new(
            "var_mass",
            &base(std::slice::from_ref(&kk)),
            var_mass(&initial, &f, t, &model)?,
            true,
        ),
        MomentReport::new(
            "mean_occupation",
            &base(std::slice::from_ref(&zc)),
            mean_occupation(&initial, model.c, t)?,
            true,
        ),
        MomentReport::new(
            "var_occupation",
            &base(&[zc, kk]),
            var_occupation(&initial, model.c, t, &model)?,
            matches!(initial, crate::InitialMeasure::Lebesgue),
        ),
        MomentReport::new(
            "fluctuation_second_moment",
            &base(&[]),
            fluctuation_second_moment(&f, t, &model)?,
            true,
        ),
        MomentReport::new(
            "ou_covariance_half_horizon",
            &base(&[("t_prime", fmt_f64(0.5 * t))]),
            ou_covariance(&f, &f, t, 0.5 * t, &model)?,
            false,
        ),
        MomentReport::new("ou_char_functional_re", &base(&[]), cf.re, false),
        MomentReport::new("ou_char_functional_im", &base(&[]), cf.im, false),
    ];
    let mut table = CsvTable::new(&["formula_id", "value", "method"]);
    for r in &reports {
        table.push(vec![r.formula_id.clone(), fmt_f64(r.value), r.method.clone()]);
    }
    out.csv(dir, "moments.csv", &table)?;
    out.text(dir, "moments.json", &reports_to_json(&reports)?)?;
    Ok(out)
}

fn simulate_cmd(cfg: &Config, dir: &Path) -> Result<Output> {
    let mut out = Output::new();
    let model = cfg.model()?;
    let f = cfg.test_function()?;
    let sim = cfg.sim_params(model.k)?;
    let trajs = simulate(&sim, &model)?;
    out.csv(dir, "trajectories.csv", &trajectories_to_csv(&trajs))?;
    if cfg.log_events {
        out.csv(dir, "events.csv", &events_to_csv(&trajs))?;
    }

    let mut summary = CsvTable::new(&[
        "time",
        "mass_mean",
        "mass_var",
        "fluctuation_mean",
        "fluctuation_var",
        "occupation_mean",
        "occupation_var",
    ]);
    let column = |get: &dyn Fn(&crate::particle_sim::Trajectory) -> Result<Vec<f64>>| -> Result<Vec<Vec<f64>>> {
        trajs.iter().map(get).collect()
    };
    let mass = column(&|t| Ok(t.mass_path(&f)?.values))?;
    let fluct = column(&|t| Ok(fluctuation_observable(t, &f, model.k, cfg.raw_estimator)?.values))?;
    let occ = column(&|t| Ok(occupation_density(t, model.c)?.values))?;
    for (r, &time) in sim.record_times.iter().enumerate() {
        let mut row = vec![fmt_f64(time)];
        for series in [&mass, &fluct, &occ] {
            let xs: Vec<f64> = series.iter().map(|v| v[r]).collect();
            match mc_summary(&xs) {
                Ok(s) => row.extend([fmt_f64(s.mean), fmt_f64(s.variance)]),
                Err(_) => row.extend([fmt_f64(xs[0]), "nan".to_string()]),
            }
        }
        summary.push(row);
    }
    out.csv(dir, "summary.csv", &summary)?;

    let mut mart = CsvTable::new(&["replicate", "realized_qv", "predicted_qv"]);
    for t in &trajs {
        let m = martingale_path(t, &f)?;
        mart.push(vec![
            t.replicate.to_string(),
            fmt_f64(m.realized_qv),
            fmt_f64(m.predicted_qv),
        ]);
    }
    out.csv(dir, "martingale.csv", &mart)?;
    out.extra = json!({
        "replicate_seeds": trajs.iter().map(|t| t.seed).collect::<Vec<_>>(),
        "max_population": trajs.iter().map(|t| t.max_population).max(),
        "branch_events": trajs.iter().map(|t| t.branch_events).sum::<u64>(),
    });
    Ok(out)
}

fn ou_sample(cfg: &Config, dir: &Path) -> Result<Output> {
    let mut out = Output::new();
    let model = cfg.model()?;
    let f = cfg.test_function()?;
    let af = f.generator()?;
    let initial = cfg.initial_measure()?;
    let grid = uniform_grid(cfg.horizon, cfg.ou_steps);
    let seed = mix(cfg.seed, 30);
    let samples = (0..cfg.ou_paths as u64)
        .map(|r| sample_ou_paths(&[f.clone(), af.clone()], &grid, &model, &initial, mix(seed, r)))
        .collect::<Result<Vec<_>>>()?;
    out.csv(dir, "paths.csv", &paths_to_csv(&samples))?;
    let mut residuals = CsvTable::new(&["replicate", "sup_residual"]);
    for (r, s) in samples.iter().enumerate() {
        let res = langevin_residual(&s.paths[0], &s.paths[1], &s.brownian, &initial, &model)?;
        residuals.push(vec![r.to_string(), fmt_f64(res)]);
    }
    out.csv(dir, "langevin.csv", &residuals)?;
    let cf = ou_transition_check(
        &f,
        cfg.horizon,
        cfg.ou_steps,
        &model,
        &initial,
        mix(cfg.seed, 31),
        cfg.ou_samples,
    )?;
    out.text(dir, "cf.json", &cf.to_json()?)?;
    out.extra = json!({ "cf_gap": cf.gap() });
    Ok(out)
}

fn fluctuation_study(cfg: &Config, dir: &Path) -> Result<Output> {
    let mut out = Output::new();
    let f = cfg.test_function()?;
    let mut samples = Vec::new();
    for &k in &cfg.k_list {
        let model = crate::ModelParams::new(cfg.c, cfg.sigma2, k)?;
        let trajs = simulate(&cfg.sim_params(k)?, &model)?;
        samples.push(index_samples(&trajs, &f, &f.to_json(), cfg.raw_estimator)?);
    }
    let reference = fluctuation_second_moment(&f, cfg.horizon, &cfg.model()?)?;
    let report = convergence_report(&samples, reference)?;
    out.csv(dir, "convergence.csv", &report.to_csv())?;
    out.text(dir, "convergence.json", &report.to_json()?)?;
    Ok(out)
}

fn verify(cfg: &Config, dir: &Path) -> Result<Output> {
    let mut out = Output::new();
    let report = crate::verify::run_verify(&cfg.verify_config())?;
    out.csv(dir, "verify.csv", &report.to_csv())?;
    out.csv(dir, "convergence.csv", &report.convergence.to_csv())?;
    out.text(dir, "convergence.json", &report.convergence.to_json()?)?;
    out.text(dir, "timings.json", &report.timings_json()?)?;
    for (criterion, pass) in report.criterion_verdicts() {
        eprintln!("criterion {criterion}: {}", if pass { "pass" } else { "FAIL" });
    }
    out.passed = report.passed();
    out.extra = json!({ "passed": out.passed });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn argument_forms() {
        let inv = parse_args(&args(
            "simulate --seed 7 --threads=2 --k-list 1,2 --dt=5e-5 --out-dir /tmp/x --half-width=9",
        ))
        .unwrap();
        assert_eq!(inv.command, Command::Simulate);
        assert_eq!(inv.out_dir, PathBuf::from("/tmp/x"));
        let keys: Vec<&str> = inv.overrides.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(keys, ["seed", "threads", "k_list", "dt", "half_width"]);
        assert!(parse_args(&args("bogus")).is_err());
        assert!(parse_args(&args("solve --dt")).is_err());
        assert!(parse_args(&args("solve stray")).is_err());
    }

    #[test]
    fn failed_runs_leave_nothing_behind() {
        let tmp = tempfile::tempdir().unwrap();
        let inv = parse_args(&[
            "simulate".to_string(),
            format!("--out-dir={}", tmp.path().display()),
            "--sigma2=-1".to_string(),
        ])
        .unwrap();
        assert!(execute(&inv).is_err());
        // config errors happen before the directory exists; a runtime error
        // must also clean up
        let inv = parse_args(&[
            "simulate".to_string(),
            format!("--out-dir={}", tmp.path().display()),
            "--population-cap-factor=1".to_string(),
            "--density=50".to_string(),
            "--replicates=40".to_string(),
            "--sigma2=4".to_string(),
        ])
        .unwrap();
        assert!(matches!(execute(&inv), Err(Error::Explosion { .. })));
        let leftover: Vec<_> = std::fs::read_dir(tmp.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| !e.path().join("manifest.json").exists())
            .collect();
        assert!(leftover.is_empty());
    }

    #[test]
    fn moments_row_for_benchmark() {
        let tmp = tempfile::tempdir().unwrap();
        let inv = parse_args(&["moments".to_string(), format!("--out-dir={}", tmp.path().display())]).unwrap();
        let o = execute(&inv).unwrap();
        let csv = std::fs::read_to_string(o.dir.join("moments.csv")).unwrap();
        let row = csv.lines().find(|l| l.starts_with("var_mass,")).unwrap();
        let v: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-9);
        let manifest: Value =
            serde_json::from_str(&std::fs::read_to_string(o.dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["config"]["seed"], "20261015");
    }
}
