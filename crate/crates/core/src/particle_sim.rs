//! Branching Brownian particles with a mollified point catalyst.
//!
//! Particles carry mass `1/N` and start as a Poisson(2LN) sample uniform on
//! `[c−L, c+L]`. Each step they move by `N(0, dt)`; inside `(c−ε, c+ε)` a
//! particle branches with probability `q = N (σ²/k²) dt / (2ε)` into 0 or 2
//! offspring. A non-branching baseline shares the initial points and the root
//! increments, so the coupled difference isolates branching noise.
//!
//! Replicates are simulated root by root: a root's spine and baseline advance
//! together until the spine dies, offspring lineages are queued on a stack and
//! run to the horizon afterwards. All sums are accumulated in this fixed order,
//! so a replicate is a pure function of its seed.
//!
//! A particle at distance `d` from every catalyst and occupation window moves
//! `m` steps at once (one `N(0, m dt)` draw) when `d ≥ 8 √(m dt)` and no
//! checkpoint is skipped. The positions at visited steps have the exact law;
//! the probability of missing a window crossing is below 1e−14.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{fmt_f64, CsvTable};
use crate::kernels::ModelParams;
use crate::rng::{mix, stream, Stream};
use crate::TestFn;

const ROOT_DOMAIN: u64 = 1;
const EVENT_DOMAIN: u64 = 2;
const INIT_DOMAIN: u64 = 3;
/// Standard deviations of clearance required before a multi-step move.
const JUMP_CLEARANCE: f64 = 8.0;

/// Simulation configuration. `density` is `N`, the initial particles per unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub density: f64,
    pub half_width: f64,
    pub dt: f64,
    pub eps: f64,
    pub horizon: f64,
    pub seed: u64,
    pub replicates: usize,
    pub record_times: Vec<f64>,
    /// Test functions paired with the system and the baseline at record times.
    pub observables: Vec<TestFn>,
    /// Test functions whose martingale `M_t(f)` is tracked.
    pub martingale: Vec<TestFn>,
    /// Steps between martingale evaluation points.
    pub martingale_stride: usize,
    /// Occupation points besides the catalyst (which is always tracked).
    pub occupation_points: Vec<f64>,
    pub population_cap_factor: f64,
    pub keep_snapshots: bool,
    pub log_events: bool,
    /// Worker threads for the replicate pool; 0 uses the global pool.
    pub threads: usize,
}

impl SimParams {
    /// The calibration configuration: N = 200, L = 8, dt = 1e−4, ε = 0.05, T = 1,
    /// records every 0.01, Gaussian observable `e^{−x²/2}`.
    pub fn benchmark(seed: u64, replicates: usize) -> Self {
        Self {
            density: 200.0,
            half_width: 8.0,
            dt: 1e-4,
            eps: 0.05,
            horizon: 1.0,
            seed,
            replicates,
            record_times: (0..=100).map(|i| i as f64 / 100.0).collect(),
            observables: vec![TestFn::gaussian(0.0, 1.0).expect("valid")],
            martingale: Vec::new(),
            martingale_stride: 10,
            occupation_points: Vec::new(),
            population_cap_factor: 100.0,
            keep_snapshots: false,
            log_events: false,
            threads: 0,
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Per-step branching probability inside the catalyst window.
    pub fn branch_probability(&self, model: &ModelParams) -> f64 {
        self.density * model.effective_sigma2() * self.dt / (2.0 * self.eps)
    }

    fn record_steps(&self) -> Result<Vec<usize>> {
        let mut steps = Vec::with_capacity(self.record_times.len());
        for &t in &self.record_times {
            let s = (t / self.dt).round();
            if !(t >= 0.0) || t > self.horizon * (1.0 + 1e-12) || (s * self.dt - t).abs() > 1e-9 * self.horizon.max(1.0)
            {
                return Err(Error::Config(format!(
                    "record time {t} is not a grid time in [0, {}]",
                    self.horizon
                )));
            }
            let s = s as usize;
            if steps.last().is_some_and(|&prev| prev >= s) {
                return Err(Error::Config("record times must be strictly increasing".into()));
            }
            steps.push(s);
        }
        Ok(steps)
    }

    pub fn validate(&self, model: &ModelParams) -> Result<()> {
        model.validate()?;
        let positive = [
            ("density", self.density),
            ("half_width", self.half_width),
            ("dt", self.dt),
            ("eps", self.eps),
            ("horizon", self.horizon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be positive".into()));
        }
        if self.dt > self.eps * self.eps {
            return Err(Error::Config(format!(
                "dt = {} exceeds eps² = {}: the catalyst window is not resolved",
                self.dt,
                self.eps * self.eps
            )));
        }
        let q = self.branch_probability(model);
        if q > 0.5 {
            return Err(Error::Config(format!(
                "per-step branching probability {q} exceeds 0.5; reduce dt or N, or widen eps"
            )));
        }
        let radius = self
            .observables
            .iter()
            .chain(&self.martingale)
            .map(|f| f.support_radius())
            .fold(0.0, f64::max);
        let need = model.c.abs() + 6.0 * self.horizon.sqrt() + radius;
        if self.half_width < need {
            return Err(Error::Config(format!(
                "half_width = {} is below |c| + 6√T + support radius = {need}",
                self.half_width
            )));
        }
        for &z in &self.occupation_points {
            if !z.is_finite() || (z - model.c).abs() > self.half_width {
                return Err(Error::Config(format!("occupation point {z} outside the window")));
            }
        }
        if !(self.population_cap_factor >= 1.0) {
            return Err(Error::Config("population_cap_factor must be at least 1".into()));
        }
        if self.martingale_stride == 0 {
            return Err(Error::Config("martingale_stride must be positive".into()));
        }
        let steps = self.steps();
        if ((steps as f64) * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::Config("horizon must be a multiple of dt".into()));
        }
        if self.martingale.iter().any(|f| f.generator().is_err()) {
            return Err(Error::Config(
                "martingale test function exceeds the degree cap under A".into(),
            ));
        }
        self.record_steps()?;
        Ok(())
    }
}

/// Positions of the branching system and the baseline at one record time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParticleEnsemble {
    pub positions: Vec<f64>,
    pub baseline: Vec<f64>,
    pub mass: f64,
}

/// `(1/N) Σ f(x_i)` over the branching system.
pub fn pair_with(snapshot: &ParticleEnsemble, f: &TestFn) -> f64 {
    snapshot.positions.iter().map(|&x| f.eval(x)).sum::<f64>() * snapshot.mass
}

/// A branching event; `offspring` is 0 or 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchEvent {
    pub step: usize,
    pub position: f64,
    pub offspring: u8,
}

/// Pairings of the branching system with `f` and `Af` on the martingale grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleSums {
    pub f: TestFn,
    pub af: TestFn,
    pub times: Vec<f64>,
    pub pair_f: Vec<f64>,
    pub pair_af: Vec<f64>,
}

/// Aligned time series of one observable in one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub observable_id: String,
    pub replicate_id: usize,
    pub seed_used: u64,
}

/// Output of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub replicate: usize,
    pub seed: u64,
    pub model: ModelParams,
    pub density: f64,
    pub dt: f64,
    pub eps: f64,
    pub record_times: Vec<f64>,
    pub initial_count: usize,
    pub observables: Vec<TestFn>,
    /// `⟨baseline, f⟩` per record time and observable.
    pub baseline_pairs: Vec<Vec<f64>>,
    /// `⟨X, f⟩ − ⟨baseline, f⟩` per record time and observable.
    pub coupled_diffs: Vec<Vec<f64>>,
    /// Branching-system particle count per record time.
    pub population: Vec<usize>,
    /// Catalyst first, then the configured occupation points.
    pub occupation_points: Vec<f64>,
    /// Cumulative occupation density per point at every step.
    pub occupation: Vec<Vec<f64>>,
    pub martingale: Vec<MartingaleSums>,
    pub branch_events: u64,
    pub max_population: usize,
    pub event_log: Option<Vec<BranchEvent>>,
    pub snapshots: Option<Vec<ParticleEnsemble>>,
}

impl Trajectory {
    fn observable_index(&self, f: &TestFn) -> Result<usize> {
        self.observables
            .iter()
            .position(|g| g == f)
            .ok_or_else(|| Error::Contract("test function was not tracked in this simulation".into()))
    }

    fn occupation_index(&self, z: f64) -> Result<usize> {
        self.occupation_points
            .iter()
            .position(|&p| p == z)
            .ok_or_else(|| Error::Contract(format!("occupation at {z} was not tracked")))
    }

    /// `⟨X_t, f⟩` at record times.
    pub fn mass_path(&self, f: &TestFn) -> Result<PathSample> {
        let j = self.observable_index(f)?;
        let values = self
            .baseline_pairs
            .iter()
            .zip(&self.coupled_diffs)
            .map(|(b, d)| b[j] + d[j])
            .collect();
        Ok(self.sample(format!("mass[{j}]"), values))
    }

    /// Cumulative occupation density at every simulation step.
    pub fn occupation_steps(&self, z: f64) -> Result<&[f64]> {
        Ok(&self.occupation[self.occupation_index(z)?])
    }

    /// `sup_i |y_{t_i}(z) − t_i|` over all steps.
    pub fn occupation_drift(&self, z: f64) -> Result<f64> {
        let path = self.occupation_steps(z)?;
        Ok(path
            .iter()
            .enumerate()
            .map(|(i, y)| (y - i as f64 * self.dt).abs())
            .fold(0.0, f64::max))
    }

    fn sample(&self, id: String, values: Vec<f64>) -> PathSample {
        PathSample {
            times: self.record_times.clone(),
            values,
            observable_id: id,
            replicate_id: self.replicate,
            seed_used: self.seed,
        }
    }
}

/// `y_t(z)` at the record times.
pub fn occupation_density(traj: &Trajectory, z: f64) -> Result<PathSample> {
    let path = traj.occupation_steps(z)?;
    let values = traj
        .record_times
        .iter()
        .map(|&t| path[(t / traj.dt).round() as usize])
        .collect();
    Ok(traj.sample(format!("occupation[{}]", fmt_f64(z)), values))
}

/// `⟨Z_k(t), f⟩ = k (⟨X_k(t), f⟩ − ⟨λ, f⟩)` at the record times. The coupled
/// estimator replaces `⟨λ, f⟩` by the baseline pairing; `raw` keeps `⟨λ, f⟩`.
pub fn fluctuation_observable(traj: &Trajectory, f: &TestFn, k: u32, raw: bool) -> Result<PathSample> {
    if k != traj.model.k {
        return Err(Error::Contract(format!(
            "trajectory was simulated with k = {}, not {k}",
            traj.model.k
        )));
    }
    let j = traj.observable_index(f)?;
    let kf = k as f64;
    let lebesgue = f.lebesgue_integral();
    let values = traj
        .baseline_pairs
        .iter()
        .zip(&traj.coupled_diffs)
        .map(|(b, d)| if raw { kf * (b[j] + d[j] - lebesgue) } else { kf * d[j] })
        .collect();
    let id = if raw { "fluctuation-raw" } else { "fluctuation" };
    Ok(traj.sample(format!("{id}[{j}]"), values))
}

/// Martingale path with its realized and predicted quadratic variation at the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleRecord {
    pub path: PathSample,
    pub realized_qv: f64,
    pub predicted_qv: f64,
}

/// `M_t(f) = ⟨X_t,f⟩ − ⟨X_0,f⟩ − ∫_0^t ⟨X_s,Af⟩ ds` on the martingale grid
/// (trapezoid in time), realized QV `Σ (ΔM)²` and predicted QV
/// `(σ²/k²) f(c)² y_T(c)`.
pub fn martingale_path(traj: &Trajectory, f: &TestFn) -> Result<MartingaleRecord> {
    let sums = traj
        .martingale
        .iter()
        .find(|m| &m.f == f)
        .ok_or_else(|| Error::Contract("martingale of this test function was not tracked".into()))?;
    let mut values = Vec::with_capacity(sums.times.len());
    let mut drift = 0.0;
    let mut qv = 0.0;
    let mut prev = 0.0;
    for i in 0..sums.times.len() {
        if i > 0 {
            drift += 0.5 * (sums.times[i] - sums.times[i - 1]) * (sums.pair_af[i] + sums.pair_af[i - 1]);
        }
        let m = sums.pair_f[i] - sums.pair_f[0] - drift;
        if i > 0 {
            qv += (m - prev) * (m - prev);
        }
        prev = m;
        values.push(m);
    }
    let c = traj.model.c;
    let y = *traj.occupation[0].last().expect("non-empty occupation");
    let fc = f.eval(c);
    Ok(MartingaleRecord {
        path: PathSample {
            times: sums.times.clone(),
            values,
            observable_id: "martingale".into(),
            replicate_id: traj.replicate,
            seed_used: traj.seed,
        },
        realized_qv: qv,
        predicted_qv: traj.model.effective_sigma2() * fc * fc * y,
    })
}

/// Mutable accumulators of one replicate.
struct Replicate<'a> {
    params: &'a SimParams,
    c: f64,
    q: f64,
    n_steps: usize,
    sqrt_dt: f64,
    mass: f64,
    windows: Vec<f64>,
    record_at: Vec<Option<usize>>,
    mart_at: Vec<Option<usize>>,
    next_check: Vec<usize>,
    next_record: Vec<usize>,
    observables: Vec<TestFn>,
    mart_f: Vec<TestFn>,
    mart_af: Vec<TestFn>,
    event_seed: u64,
    events: u64,
    spawned: usize,
    cap: usize,
    counts: Vec<Vec<u32>>,
    pop_delta: Vec<i64>,
    base: Vec<Vec<f64>>,
    diff: Vec<Vec<f64>>,
    population: Vec<usize>,
    mart_pf: Vec<Vec<f64>>,
    mart_paf: Vec<Vec<f64>>,
    log: Option<Vec<BranchEvent>>,
    snaps: Option<Vec<ParticleEnsemble>>,
    stack: Vec<(usize, f64, u64)>,
}

impl<'a> Replicate<'a> {
    fn new(params: &'a SimParams, model: &ModelParams, seed: u64) -> Result<Self> {
        let n_steps = params.steps();
        let record_steps = params.record_steps()?;
        let mut record_at = vec![None; n_steps + 1];
        for (r, &s) in record_steps.iter().enumerate() {
            record_at[s] = Some(r);
        }
        let mut mart_at = vec![None; n_steps + 1];
        let track_mart = !params.martingale.is_empty();
        if track_mart {
            for (i, s) in (0..=n_steps).step_by(params.martingale_stride).enumerate() {
                mart_at[s] = Some(i);
            }
        }
        let mart_len = if track_mart {
            n_steps / params.martingale_stride + 1
        } else {
            0
        };
        // next step at or after i where anything is recorded, and next record step alone
        let mut next_check = vec![n_steps; n_steps + 2];
        let mut next_record = vec![usize::MAX; n_steps + 2];
        for i in (0..=n_steps).rev() {
            let after_check = next_check[i + 1];
            next_check[i] = if record_at[i].is_some() || mart_at[i].is_some() || i == n_steps {
                i
            } else {
                after_check
            };
            next_record[i] = if record_at[i].is_some() { i } else { next_record[i + 1] };
        }
        let mut windows = vec![model.c];
        windows.extend(params.occupation_points.iter().copied());
        let n_obs = params.observables.len();
        let n_rec = record_steps.len();
        let mart_af = params
            .martingale
            .iter()
            .map(|f| f.generator())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params,
            c: model.c,
            q: params.branch_probability(model),
            n_steps,
            sqrt_dt: params.dt.sqrt(),
            mass: 1.0 / params.density,
            counts: vec![vec![0; n_steps + 1]; windows.len()],
            windows,
            record_at,
            mart_at,
            next_check,
            next_record,
            observables: params.observables.clone(),
            mart_f: params.martingale.clone(),
            mart_af,
            event_seed: mix(seed, EVENT_DOMAIN),
            events: 0,
            spawned: 0,
            cap: 0,
            pop_delta: vec![0; n_steps + 2],
            base: vec![vec![0.0; n_obs]; n_rec],
            diff: vec![vec![0.0; n_obs]; n_rec],
            population: vec![0; n_rec],
            mart_pf: vec![vec![0.0; mart_len]; params.martingale.len()],
            mart_paf: vec![vec![0.0; mart_len]; params.martingale.len()],
            log: params.log_events.then(Vec::new),
            snaps: params.keep_snapshots.then(|| {
                vec![
                    ParticleEnsemble {
                        mass: 1.0 / params.density,
                        ..Default::default()
                    };
                    n_rec
                ]
            }),
            stack: Vec::new(),
        })
    }

    /// Largest safe multi-step move from `x` at step `i` (at least 1).
    fn jump_len(&self, x: f64, i: usize) -> usize {
        let eps = self.params.eps;
        let d = self
            .windows
            .iter()
            .map(|&w| (x - w).abs() - eps)
            .fold(f64::INFINITY, f64::min);
        let limit = self.next_check[i + 1] - i;
        if d <= 0.0 {
            return 1;
        }
        let free = d / JUMP_CLEARANCE;
        let m = (free * free / self.params.dt) as usize;
        m.clamp(1, limit)
    }

    /// Contributions of a branching-system particle at `x` at step `i`.
    fn observe(&mut self, x: f64, i: usize) {
        let eps = self.params.eps;
        for (w, z) in self.windows.iter().enumerate() {
            if (x - z).abs() < eps {
                self.counts[w][i] += 1;
            }
        }
        if let Some(m) = self.mart_at[i] {
            for j in 0..self.mart_f.len() {
                self.mart_pf[j][m] += self.mart_f[j].eval(x) * self.mass;
                self.mart_paf[j][m] += self.mart_af[j].eval(x) * self.mass;
            }
        }
    }

    /// Branching decision at step `i`; `Some(true)` on a split, `Some(false)` on death.
    fn branch(&mut self, x: f64, i: usize, rng: &mut Stream) -> Result<Option<bool>> {
        if (x - self.c).abs() >= self.params.eps || self.q == 0.0 {
            return Ok(None);
        }
        let u: f64 = rng.gen();
        if u >= self.q {
            return Ok(None);
        }
        self.events += 1;
        let split = u >= 0.5 * self.q;
        if let Some(log) = &mut self.log {
            log.push(BranchEvent {
                step: i,
                position: x,
                offspring: if split { 2 } else { 0 },
            });
        }
        if split {
            self.pop_delta[i + 1] += 1;
            self.spawned += 1;
            if self.spawned > self.cap {
                return Err(Error::Explosion {
                    population: self.spawned,
                    cap: self.cap,
                    step: i,
                });
            }
            self.stack.push((i, x, mix(self.event_seed, self.events)));
        } else {
            self.pop_delta[i + 1] -= 1;
        }
        Ok(Some(split))
    }

    fn record_baseline(&mut self, x: f64, r: usize, spine_alive: bool) {
        for j in 0..self.observables.len() {
            let v = self.observables[j].eval(x) * self.mass;
            self.base[r][j] += v;
            if !spine_alive {
                self.diff[r][j] -= v;
            }
        }
        if let Some(snaps) = &mut self.snaps {
            snaps[r].baseline.push(x);
            if spine_alive {
                snaps[r].positions.push(x);
            }
        }
        if spine_alive {
            self.population[r] += 1;
        }
    }

    fn record_extra(&mut self, x: f64, r: usize) {
        for j in 0..self.observables.len() {
            self.diff[r][j] += self.observables[j].eval(x) * self.mass;
        }
        if let Some(snaps) = &mut self.snaps {
            snaps[r].positions.push(x);
        }
        self.population[r] += 1;
    }

    /// Root lineage: spine and baseline share increments until the spine dies.
    fn run_root(&mut self, x0: f64, rng: &mut Stream) -> Result<()> {
        let mut x = x0;
        let mut alive = true;
        let mut i = 0;
        loop {
            if alive {
                self.observe(x, i);
            }
            if let Some(r) = self.record_at[i] {
                self.record_baseline(x, r, alive);
            }
            if i == self.n_steps {
                return Ok(());
            }
            if alive && self.branch(x, i, rng)? == Some(false) {
                alive = false;
            }
            let m = if alive {
                self.jump_len(x, i)
            } else {
                match self.next_record[i + 1] {
                    usize::MAX => return Ok(()),
                    s => s - i,
                }
            };
            let z: f64 = StandardNormal.sample(rng);
            x += self.sqrt_dt * (m as f64).sqrt() * z;
            i += m;
        }
    }

    /// Offspring lineage born at step `i0` at `x0`; it first moves to `i0 + 1`.
    fn run_extra(&mut self, i0: usize, x0: f64, rng: &mut Stream) -> Result<()> {
        let mut x = x0;
        let mut i = i0;
        loop {
            let m = self.jump_len(x, i);
            let z: f64 = StandardNormal.sample(rng);
            x += self.sqrt_dt * (m as f64).sqrt() * z;
            i += m;
            self.observe(x, i);
            if let Some(r) = self.record_at[i] {
                self.record_extra(x, r);
            }
            if i == self.n_steps || self.branch(x, i, rng)? == Some(false) {
                return Ok(());
            }
        }
    }
}

/// Simulates replicate `index` of the configured batch.
pub fn simulate_replicate(params: &SimParams, model: &ModelParams, index: usize) -> Result<Trajectory> {
    params.validate(model)?;
    let seed = mix(params.seed, index as u64);
    let mut rep = Replicate::new(params, model, seed)?;

    let mut init = stream(mix(seed, INIT_DOMAIN));
    let expected = 2.0 * params.half_width * params.density;
    let count = Poisson::new(expected)
        .map_err(|e| Error::Config(format!("initial intensity: {e}")))?
        .sample(&mut init) as usize;
    rep.cap = ((count.max(1) as f64) * params.population_cap_factor) as usize;
    let lo = model.c - params.half_width;
    let roots: Vec<f64> = (0..count)
        .map(|_| lo + 2.0 * params.half_width * init.gen::<f64>())
        .collect();

    let root_seed = mix(seed, ROOT_DOMAIN);
    for (r, &x0) in roots.iter().enumerate() {
        let mut rng = stream(mix(root_seed, r as u64));
        rep.run_root(x0, &mut rng)?;
        while let Some((i0, x, s)) = rep.stack.pop() {
            let mut rng = stream(s);
            rep.run_extra(i0, x, &mut rng)?;
        }
    }

    let mut population = count as i64;
    let mut max_population = count;
    for (i, d) in rep.pop_delta.iter().enumerate().take(rep.n_steps + 1) {
        population += d;
        max_population = max_population.max(population as usize);
        if population as usize > rep.cap {
            return Err(Error::Explosion {
                population: population as usize,
                cap: rep.cap,
                step: i,
            });
        }
    }

    let scale = params.dt / (2.0 * params.eps * params.density);
    let occupation = rep
        .counts
        .iter()
        .map(|counts| {
            let mut acc = 0.0;
            let mut path = Vec::with_capacity(counts.len());
            path.push(0.0);
            for w in counts.windows(2) {
                acc += 0.5 * scale * (w[0] + w[1]) as f64;
                path.push(acc);
            }
            path
        })
        .collect();
    let mart_times: Vec<f64> = (0..=rep.n_steps)
        .step_by(params.martingale_stride)
        .map(|s| s as f64 * params.dt)
        .collect();
    let martingale = params
        .martingale
        .iter()
        .enumerate()
        .map(|(j, f)| MartingaleSums {
            f: f.clone(),
            af: rep.mart_af[j].clone(),
            times: mart_times.clone(),
            pair_f: rep.mart_pf[j].clone(),
            pair_af: rep.mart_paf[j].clone(),
        })
        .collect();

    Ok(Trajectory {
        replicate: index,
        seed,
        model: *model,
        density: params.density,
        dt: params.dt,
        eps: params.eps,
        record_times: params.record_times.clone(),
        initial_count: count,
        observables: params.observables.clone(),
        baseline_pairs: rep.base,
        coupled_diffs: rep.diff,
        population: rep.population,
        occupation_points: rep.windows,
        occupation,
        martingale,
        branch_events: rep.events,
        max_population,
        event_log: rep.log,
        snapshots: rep.snaps,
    })
}

/// Runs all replicates, in parallel when `threads != 1`. Output order is the
/// replicate order regardless of scheduling.
pub fn simulate(params: &SimParams, model: &ModelParams) -> Result<Vec<Trajectory>> {
    params.validate(model)?;
    let run = || {
        (0..params.replicates)
            .into_par_iter()
            .map(|r| simulate_replicate(params, model, r))
            .collect::<Result<Vec<_>>>()
    };
    if params.threads == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(params.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)
    }
}

/// Long-format CSV `time,observable,value,replicate` of the recorded series.
pub fn trajectories_to_csv(trajs: &[Trajectory]) -> CsvTable {
    let mut table = CsvTable::new(&["time", "observable", "value", "replicate"]);
    for traj in trajs {
        let rep = traj.replicate.to_string();
        for (r, &t) in traj.record_times.iter().enumerate() {
            let time = fmt_f64(t);
            let mut push = |name: String, v: f64| table.push(vec![time.clone(), name, fmt_f64(v), rep.clone()]);
            for j in 0..traj.observables.len() {
                push(format!("baseline_pair[{j}]"), traj.baseline_pairs[r][j]);
                push(format!("coupled_diff[{j}]"), traj.coupled_diffs[r][j]);
            }
            push("population".into(), traj.population[r] as f64);
            let step = (t / traj.dt).round() as usize;
            for (w, z) in traj.occupation_points.iter().enumerate() {
                push(format!("occupation[{}]", fmt_f64(*z)), traj.occupation[w][step]);
            }
        }
    }
    table
}

/// CSV `step,time,position,offspring,replicate` of logged branch events.
pub fn events_to_csv(trajs: &[Trajectory]) -> CsvTable {
    let mut table = CsvTable::new(&["step", "time", "position", "offspring", "replicate"]);
    for traj in trajs {
        for e in traj.event_log.iter().flatten() {
            table.push(vec![
                e.step.to_string(),
                fmt_f64(e.step as f64 * traj.dt),
                fmt_f64(e.position),
                e.offspring.to_string(),
                traj.replicate.to_string(),
            ]);
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SimParams {
        SimParams {
            density: 20.0,
            half_width: 8.0,
            dt: 1e-3,
            eps: 0.05,
            horizon: 0.5,
            seed,
            replicates: 3,
            record_times: vec![0.0, 0.25, 0.5],
            observables: vec![TestFn::gaussian(0.0, 1.0).unwrap()],
            martingale: vec![TestFn::gaussian(0.0, 1.0).unwrap()],
            martingale_stride: 5,
            occupation_points: vec![0.5],
            population_cap_factor: 100.0,
            keep_snapshots: true,
            log_events: true,
            threads: 1,
        }
    }

    fn model(s2: f64) -> ModelParams {
        ModelParams::new(0.0, s2, 1).unwrap()
    }

    #[test]
    fn pair_with_basics() {
        let f = TestFn::gaussian(0.0, 1.0).unwrap();
        assert_eq!(pair_with(&ParticleEnsemble::default(), &f), 0.0);
        let one = ParticleEnsemble {
            positions: vec![0.0],
            baseline: vec![0.0],
            mass: 1.0,
        };
        assert_eq!(pair_with(&one, &f), 1.0);
        let two = ParticleEnsemble {
            positions: vec![0.3, -1.0],
            baseline: vec![],
            mass: 0.5,
        };
        let g = TestFn::term(vec![0.0, 1.0], 0.2, 0.7).unwrap();
        let lhs = pair_with(&two, &(f.clone() * 2.0 + g.clone()));
        assert!((lhs - (2.0 * pair_with(&two, &f) + pair_with(&two, &g))).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let m = model(1.0);
        assert!(small(1).validate(&m).is_ok());
        let mut p = small(1);
        p.dt = 0.01;
        assert!(p.validate(&m).is_err());
        let mut p = small(1);
        p.half_width = 3.0;
        assert!(p.validate(&m).is_err());
        let mut p = small(1);
        p.density = 2000.0;
        assert!(matches!(p.validate(&m), Err(Error::Config(msg)) if msg.contains("branching probability")));
        let mut p = small(1);
        p.record_times = vec![0.0, 0.2505];
        assert!(p.validate(&m).is_err());
    }

    #[test]
    fn no_branching_means_exact_coupling() {
        let p = small(7);
        let trajs = simulate(&p, &model(0.0)).unwrap();
        let f = &p.observables[0];
        for traj in &trajs {
            assert_eq!(traj.branch_events, 0);
            let z = fluctuation_observable(traj, f, 1, false).unwrap();
            assert!(z.values.iter().all(|&v| v.to_bits() == 0));
            for snap in traj.snapshots.as_ref().unwrap() {
                assert_eq!(snap.positions, snap.baseline);
            }
        }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let mut p = small(11);
        let a = simulate(&p, &model(1.0)).unwrap();
        p.threads = 2;
        let b = simulate(&p, &model(1.0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(trajectories_to_csv(&a).render(), trajectories_to_csv(&b).render());
        p.seed = 12;
        assert_ne!(a, simulate(&p, &model(1.0)).unwrap());
    }

    #[test]
    fn branch_events_stay_in_window_and_counts_balance() {
        let p = small(3);
        let m = model(1.0);
        for traj in simulate(&p, &m).unwrap() {
            let log = traj.event_log.as_ref().unwrap();
            assert_eq!(log.len() as u64, traj.branch_events);
            assert!(log.iter().all(|e| e.position.abs() < p.eps));
            let net: i64 = log.iter().map(|e| if e.offspring == 2 { 1 } else { -1 }).sum();
            let snaps = traj.snapshots.as_ref().unwrap();
            assert_eq!(snaps[2].positions.len() as i64, traj.initial_count as i64 + net);
            assert_eq!(traj.population[2], snaps[2].positions.len());
            for s in snaps {
                assert_eq!(s.baseline.len(), traj.initial_count);
            }
            // stored pairings agree with the snapshots
            let f = &p.observables[0];
            let mass = traj.mass_path(f).unwrap();
            assert!((mass.values[2] - pair_with(&snaps[2], f)).abs() < 1e-10);
        }
    }

    #[test]
    fn occupation_paths_are_monotone_from_zero() {
        let p = small(5);
        for traj in simulate(&p, &model(1.0)).unwrap() {
            for z in [0.0, 0.5] {
                let path = traj.occupation_steps(z).unwrap();
                assert_eq!(path[0], 0.0);
                assert!(path.windows(2).all(|w| w[1] >= w[0]));
                let y = occupation_density(&traj, z).unwrap();
                assert_eq!(y.values[0], 0.0);
            }
        }
    }

    #[test]
    fn martingale_predicted_qv_vanishes_when_f_vanishes_at_catalyst() {
        let mut p = small(9);
        let odd = TestFn::term(vec![0.0, 1.0], 0.0, 1.0).unwrap();
        p.martingale = vec![odd.clone()];
        let traj = simulate_replicate(&p, &model(1.0), 0).unwrap();
        let rec = martingale_path(&traj, &odd).unwrap();
        assert_eq!(rec.predicted_qv, 0.0);
        assert!(rec.realized_qv >= 0.0);
        assert_eq!(rec.path.values[0], 0.0);
    }

    #[test]
    fn untracked_requests_are_contract_errors() {
        let p = small(2);
        let traj = simulate_replicate(&p, &model(1.0), 0).unwrap();
        let other = TestFn::gaussian(1.0, 1.0).unwrap();
        assert!(matches!(
            fluctuation_observable(&traj, &other, 1, false),
            Err(Error::Contract(_))
        ));
        assert!(fluctuation_observable(&traj, &p.observables[0], 2, false).is_err());
        assert!(martingale_path(&traj, &other).is_err());
        assert!(occupation_density(&traj, 0.25).is_err());
    }

    #[test]
    fn explosion_is_reported() {
        // with the cap at the initial count, any net growth is an explosion
        let mut p = small(4);
        p.population_cap_factor = 1.0;
        let mut exploded = 0;
        for r in 0..20 {
            match simulate_replicate(&p, &model(1.0), r) {
                Err(Error::Explosion { population, cap, .. }) => {
                    assert!(population > cap);
                    exploded += 1;
                }
                Ok(traj) => assert!(traj.max_population <= traj.initial_count),
                Err(e) => panic!("{e}"),
            }
        }
        assert!(exploded > 0);
    }
}
