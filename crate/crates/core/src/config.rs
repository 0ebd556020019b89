//! Flat `key = value` run configuration.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. The
//! first key must be `schema_version = 1`. Unknown keys, duplicate keys and
//! unparsable values are errors that name the offending key. Every key has a
//! default, so an empty file holding only the schema line is valid.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernels::{InitialMeasure, ModelParams};
use crate::particle_sim::SimParams;
use crate::verify::VerifyConfig;
use crate::TestFn;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialKind {
    Zero,
    Lebesgue,
    /// Gaussian density `e^{−(x−center)²/(2 width²)}`.
    Density,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Full,
    Quick,
}

/// Resolved configuration. Field names are the config keys.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub threads: usize,
    // model
    pub c: f64,
    pub sigma2: f64,
    pub k: u32,
    pub horizon: f64,
    pub f_center: f64,
    pub f_width: f64,
    pub initial: InitialKind,
    pub initial_center: f64,
    pub initial_width: f64,
    // evolution
    pub solver_steps: usize,
    pub field_points: usize,
    pub field_half_width: f64,
    // particle system
    pub density: f64,
    pub half_width: f64,
    pub dt: f64,
    pub eps: f64,
    pub replicates: usize,
    pub record_every: f64,
    pub martingale_stride: usize,
    pub population_cap_factor: f64,
    pub log_events: bool,
    pub raw_estimator: bool,
    // limit process
    pub ou_samples: usize,
    pub ou_steps: usize,
    pub ou_paths: usize,
    // fluctuation study
    pub k_list: Vec<u32>,
    // acceptance suite
    pub verify_scale: Scale,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 20261015,
            threads: 0,
            c: 0.0,
            sigma2: 1.0,
            k: 1,
            horizon: 1.0,
            f_center: 0.0,
            f_width: 1.0,
            initial: InitialKind::Lebesgue,
            initial_center: 0.0,
            initial_width: 1.0,
            solver_steps: 1024,
            field_points: 81,
            field_half_width: 4.0,
            density: 200.0,
            half_width: 8.0,
            dt: 1e-4,
            eps: 0.05,
            replicates: 500,
            record_every: 0.01,
            martingale_stride: 10,
            population_cap_factor: 100.0,
            log_events: false,
            raw_estimator: false,
            ou_samples: 100_000,
            ou_steps: 256,
            ou_paths: 20,
            k_list: vec![1, 2, 4, 8],
            verify_scale: Scale::Full,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "key `{key}`: expected true or false, got `{value}`"
        ))),
    }
}

/// Parses a comma-separated list of positive integers.
pub fn parse_k_list(value: &str) -> Result<Vec<u32>> {
    let ks = value
        .split(',')
        .map(|s| parse::<u32>("k_list", s.trim()))
        .collect::<Result<Vec<_>>>()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("key `k_list`: entries must be positive integers".into()));
    }
    if ks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(
            "key `k_list`: entries must be strictly increasing".into(),
        ));
    }
    Ok(ks)
}

impl Config {
    /// Reads `text`, then applies `overrides` in order.
    pub fn from_text(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`, got `{raw}`", n + 1)))?;
            let key = key.trim().to_string();
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(Error::Config(format!("key `{key}` appears twice")));
            }
            entries.push((key, value.trim().to_string()));
        }
        match entries.first() {
            Some((k, v)) if k == "schema_version" => {
                if parse::<u32>(k, v)? != SCHEMA_VERSION {
                    return Err(Error::Config(format!(
                        "schema_version {v} is not supported (expected {SCHEMA_VERSION})"
                    )));
                }
            }
            _ => return Err(Error::Config("the first key must be `schema_version`".into())),
        }
        let mut cfg = Config::default();
        for (k, v) in entries.iter().skip(1).chain(overrides) {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text, overrides)
    }

    /// Defaults plus `overrides`.
    pub fn with_overrides(overrides: &[(String, String)]) -> Result<Self> {
        Self::from_text(&format!("schema_version = {SCHEMA_VERSION}\n"), overrides)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "schema_version" => return Err(Error::Config("schema_version cannot be overridden".into())),
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "c" => self.c = parse(key, value)?,
            "sigma2" => self.sigma2 = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "horizon" => self.horizon = parse(key, value)?,
            "f_center" => self.f_center = parse(key, value)?,
            "f_width" => self.f_width = parse(key, value)?,
            "initial" => {
                self.initial = match value {
                    "zero" => InitialKind::Zero,
                    "lebesgue" => InitialKind::Lebesgue,
                    "density" => InitialKind::Density,
                    _ => {
                        return Err(Error::Config(format!(
                            "key `initial`: expected zero, lebesgue or density, got `{value}`"
                        )))
                    }
                }
            }
            "initial_center" => self.initial_center = parse(key, value)?,
            "initial_width" => self.initial_width = parse(key, value)?,
            "solver_steps" => self.solver_steps = parse(key, value)?,
            "field_points" => self.field_points = parse(key, value)?,
            "field_half_width" => self.field_half_width = parse(key, value)?,
            "density" => self.density = parse(key, value)?,
            "half_width" => self.half_width = parse(key, value)?,
            "dt" => self.dt = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "replicates" => self.replicates = parse(key, value)?,
            "record_every" => self.record_every = parse(key, value)?,
            "martingale_stride" => self.martingale_stride = parse(key, value)?,
            "population_cap_factor" => self.population_cap_factor = parse(key, value)?,
            "log_events" => self.log_events = parse_bool(key, value)?,
            "raw_estimator" => self.raw_estimator = parse_bool(key, value)?,
            "ou_samples" => self.ou_samples = parse(key, value)?,
            "ou_steps" => self.ou_steps = parse(key, value)?,
            "ou_paths" => self.ou_paths = parse(key, value)?,
            "k_list" => self.k_list = parse_k_list(value)?,
            "verify_scale" => {
                self.verify_scale = match value {
                    "full" => Scale::Full,
                    "quick" => Scale::Quick,
                    _ => {
                        return Err(Error::Config(format!(
                            "key `verify_scale`: expected full or quick, got `{value}`"
                        )))
                    }
                }
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Checks the invariants the downstream modules would otherwise reject
    /// halfway through a run.
    pub fn validate(&self) -> Result<()> {
        let model = self.model()?;
        self.test_function()?;
        self.initial_measure()?;
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.solver_steps < 2 || self.field_points < 2 || !(self.field_half_width > 0.0) {
            return Err(Error::Config(
                "solver_steps and field_points must be at least 2 and field_half_width positive".into(),
            ));
        }
        self.sim_params(model.k)?.validate(&model)?;
        if self.ou_samples < 10 || self.ou_steps == 0 || self.ou_paths == 0 {
            return Err(Error::Config(
                "ou_samples must be at least 10, ou_steps and ou_paths positive".into(),
            ));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ModelParams> {
        ModelParams::new(self.c, self.sigma2, self.k).map_err(|e| Error::Config(e.to_string()))
    }

    /// The observable `e^{−(x−f_center)²/(2 f_width²)}`.
    pub fn test_function(&self) -> Result<TestFn> {
        TestFn::gaussian(self.f_center, self.f_width).map_err(|e| Error::Config(format!("f_width: {e}")))
    }

    pub fn initial_measure(&self) -> Result<InitialMeasure> {
        Ok(match self.initial {
            InitialKind::Zero => InitialMeasure::Zero,
            InitialKind::Lebesgue => InitialMeasure::Lebesgue,
            InitialKind::Density => InitialMeasure::Density(
                TestFn::gaussian(self.initial_center, self.initial_width)
                    .map_err(|e| Error::Config(format!("initial_width: {e}")))?,
            ),
        })
    }

    /// Particle configuration for fluctuation index `k`.
    pub fn sim_params(&self, k: u32) -> Result<SimParams> {
        if !(self.record_every > 0.0) {
            return Err(Error::Config("record_every must be positive".into()));
        }
        let records = (self.horizon / self.record_every).round() as usize;
        if ((records as f64) * self.record_every - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::Config("horizon must be a multiple of record_every".into()));
        }
        Ok(SimParams {
            density: self.density,
            half_width: self.half_width,
            dt: self.dt,
            eps: self.eps,
            horizon: self.horizon,
            seed: crate::rng::mix(self.seed, k as u64),
            replicates: self.replicates,
            record_times: (0..=records)
                .map(|i| self.horizon * i as f64 / records as f64)
                .collect(),
            observables: vec![self.test_function()?],
            martingale: vec![self.test_function()?],
            martingale_stride: self.martingale_stride,
            occupation_points: Vec::new(),
            population_cap_factor: self.population_cap_factor,
            keep_snapshots: false,
            log_events: self.log_events,
            threads: self.threads,
        })
    }

    pub fn verify_config(&self) -> VerifyConfig {
        let base = match self.verify_scale {
            Scale::Full => VerifyConfig::full(self.seed),
            Scale::Quick => VerifyConfig::quick(self.seed),
        };
        VerifyConfig {
            threads: self.threads,
            ..base
        }
    }

    /// Every key with its resolved value, in the file format.
    pub fn to_entries(&self) -> BTreeMap<&'static str, String> {
        let initial = match self.initial {
            InitialKind::Zero => "zero",
            InitialKind::Lebesgue => "lebesgue",
            InitialKind::Density => "density",
        };
        let scale = match self.verify_scale {
            Scale::Full => "full",
            Scale::Quick => "quick",
        };
        let k_list = self.k_list.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        BTreeMap::from([
            ("schema_version", SCHEMA_VERSION.to_string()),
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("c", format!("{:?}", self.c)),
            ("sigma2", format!("{:?}", self.sigma2)),
            ("k", self.k.to_string()),
            ("horizon", format!("{:?}", self.horizon)),
            ("f_center", format!("{:?}", self.f_center)),
            ("f_width", format!("{:?}", self.f_width)),
            ("initial", initial.to_string()),
            ("initial_center", format!("{:?}", self.initial_center)),
            ("initial_width", format!("{:?}", self.initial_width)),
            ("solver_steps", self.solver_steps.to_string()),
            ("field_points", self.field_points.to_string()),
            ("field_half_width", format!("{:?}", self.field_half_width)),
            ("density", format!("{:?}", self.density)),
            ("half_width", format!("{:?}", self.half_width)),
            ("dt", format!("{:?}", self.dt)),
            ("eps", format!("{:?}", self.eps)),
            ("replicates", self.replicates.to_string()),
            ("record_every", format!("{:?}", self.record_every)),
            ("martingale_stride", self.martingale_stride.to_string()),
            ("population_cap_factor", format!("{:?}", self.population_cap_factor)),
            ("log_events", self.log_events.to_string()),
            ("raw_estimator", self.raw_estimator.to_string()),
            ("ou_samples", self.ou_samples.to_string()),
            ("ou_steps", self.ou_steps.to_string()),
            ("ou_paths", self.ou_paths.to_string()),
            ("k_list", k_list),
            ("verify_scale", scale.to_string()),
        ])
    }

    /// Renders a config file that parses back to `self`.
    pub fn to_text(&self) -> String {
        let entries = self.to_entries();
        let mut out = format!("schema_version = {}\n", entries["schema_version"]);
        for (k, v) in entries.iter().filter(|(k, _)| **k != "schema_version") {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
