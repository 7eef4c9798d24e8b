//! Episodic environment over the plant: state, action, reward and the
//! per-step trajectory log.

use std::io::{Read, Write};

use chrono::{DateTime, FixedOffset, SecondsFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dispatcher::ObjectiveWeights;
use crate::ingest::TimeSeries;
use crate::market::{baseline_cost_series, grid_power, step_cost, GridSample, Tariff};
use crate::metrics::deviation_sum;
use crate::plant::{simulate_step, ClampFlags, SimStepResult, StringSpec, StringState};
use crate::{Error, Result, STEP_HOURS};

/// Observation `[p^L_t, p^PV_t, soc_{t−1}…, τ_{t−1}…, k^ToU_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub load: f64,
    pub pv: f64,
    pub soc: Vec<f64>,
    pub temperature: Vec<f64>,
    pub price: f64,
}

impl EnvState {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 + 2 * self.soc.len());
        v.push(self.load);
        v.push(self.pv);
        v.extend(&self.soc);
        v.extend(&self.temperature);
        v.push(self.price);
        v
    }
}

/// Affine scaling of observations for learned policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    /// Total rated battery power, kW.
    pub power_scale: f64,
    pub price_min: f64,
    pub price_max: f64,
}

impl ObsNormalizer {
    pub fn new(specs: &[StringSpec], prices: &[f64]) -> Self {
        let price_min = prices.iter().copied().fold(f64::INFINITY, f64::min);
        let price_max = prices.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            power_scale: specs.iter().map(|s| s.power_rating).sum(),
            price_min: if price_min.is_finite() { price_min } else { 0.0 },
            price_max: if price_max.is_finite() { price_max } else { 1.0 },
        }
    }

    pub fn normalize(&self, s: &EnvState) -> Vec<f64> {
        let span = self.price_max - self.price_min;
        let mut v = Vec::with_capacity(3 + 2 * s.soc.len());
        v.push(s.load / self.power_scale);
        v.push(s.pv / self.power_scale);
        v.extend(&s.soc);
        v.extend(s.temperature.iter().map(|t| (t - 25.0) / 20.0));
        v.push(if span > 0.0 { (s.price - self.price_min) / span } else { 0.5 });
        v
    }
}

/// Maps policy outputs in [−1, 1] to kW set points.
pub fn action_to_power(action: &[f64], specs: &[StringSpec]) -> Vec<f64> {
    action
        .iter()
        .zip(specs)
        .map(|(a, s)| a.clamp(-1.0, 1.0) * s.power_rating)
        .collect()
}

/// Inverse of [`action_to_power`].
pub fn power_to_action(powers: &[f64], specs: &[StringSpec]) -> Vec<f64> {
    powers
        .iter()
        .zip(specs)
        .map(|(p, s)| (p / s.power_rating).clamp(-1.0, 1.0))
        .collect()
}

/// Everything the reward is computed from, plus plant diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub grid_power: f64,
    pub cost: f64,
    pub baseline_cost: f64,
    pub delta_soc: f64,
    pub delta_tau: f64,
    pub strings: Vec<SimStepResult>,
}

impl StepInfo {
    pub fn flags(&self) -> Vec<ClampFlags> {
        self.strings.iter().map(|s| s.flags).collect()
    }
}

/// `r = x·(baseline − cost) − y·Δsoc − z·Δτ`.
pub fn reward(w: &ObjectiveWeights, baseline_cost: f64, cost: f64, delta_soc: f64, delta_tau: f64) -> f64 {
    w.x * (baseline_cost - cost) - w.y * delta_soc - w.z * delta_tau
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvTransition {
    /// Observation after the step.
    pub state: EnvState,
    /// Set points as applied by the plant, kW.
    pub action: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Anything that maps the environment's current situation to set points.
pub trait Controller {
    fn name(&self) -> &str;

    /// Called at the start of every episode.
    fn reset(&mut self) {}

    /// kW per string for the current step; positive charges.
    fn act(&mut self, env: &Env) -> Result<Vec<f64>>;
}

/// Always idle.
#[derive(Debug, Default, Clone)]
pub struct ZeroController;

impl Controller for ZeroController {
    fn name(&self) -> &str {
        "zero"
    }

    fn act(&mut self, env: &Env) -> Result<Vec<f64>> {
        Ok(vec![0.0; env.specs().len()])
    }
}

/// Uniform random set points within the ratings; deterministic per seed.
#[derive(Debug, Clone)]
pub struct RandomController {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomController {
    pub fn new(seed: u64) -> Self {
        Self { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Controller for RandomController {
    fn name(&self) -> &str {
        "random"
    }

    fn reset(&mut self) {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
    }

    fn act(&mut self, env: &Env) -> Result<Vec<f64>> {
        Ok(env
            .specs()
            .iter()
            .map(|s| self.rng.gen_range(-1.0..=1.0) * s.power_rating)
            .collect())
    }
}

/// Episodic environment over `[start, start + len)` of a profile.
#[derive(Debug, Clone)]
pub struct Env {
    profiles: TimeSeries,
    tariff: Tariff,
    baseline: Vec<f64>,
    specs: Vec<StringSpec>,
    weights: ObjectiveWeights,
    normalizer: ObsNormalizer,
    initial: Vec<StringState>,
    start: usize,
    end: usize,
    t: usize,
    states: Vec<StringState>,
}

impl Env {
    /// An environment whose episode spans the whole profile.
    pub fn new(
        profiles: TimeSeries,
        tariff: Tariff,
        specs: Vec<StringSpec>,
        weights: ObjectiveWeights,
        initial: Vec<StringState>,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("at least one battery string is required".into()));
        }
        for s in &specs {
            s.validate()?;
        }
        if initial.len() != specs.len() {
            return Err(Error::Config(format!(
                "{} initial states for {} strings",
                initial.len(),
                specs.len()
            )));
        }
        for (st, sp) in initial.iter().zip(&specs) {
            check_initial(st, sp)?;
        }
        if profiles.is_empty() {
            return Err(Error::Data("empty profile".into()));
        }
        let baseline = baseline_cost_series(&profiles, &tariff)?;
        let normalizer = ObsNormalizer::new(&specs, &tariff.buy_price()[..profiles.len()]);
        let end = profiles.len();
        Ok(Self {
            profiles,
            tariff,
            baseline,
            specs,
            weights,
            normalizer,
            states: initial.clone(),
            initial,
            start: 0,
            end,
            t: 0,
        })
    }

    /// Restricts episodes to `len` steps starting at `start`.
    pub fn set_window(&mut self, start: usize, len: usize) -> Result<()> {
        let end = start + len;
        if len == 0 || end > self.profiles.len() {
            return Err(Error::Index { index: end, len: self.profiles.len() });
        }
        self.start = start;
        self.end = end;
        self.t = start;
        Ok(())
    }

    pub fn set_initial(&mut self, initial: Vec<StringState>) -> Result<()> {
        if initial.len() != self.specs.len() {
            return Err(Error::Config("initial state count does not match strings".into()));
        }
        for (st, sp) in initial.iter().zip(&self.specs) {
            check_initial(st, sp)?;
        }
        self.initial = initial;
        Ok(())
    }

    pub fn set_normalizer(&mut self, n: ObsNormalizer) {
        self.normalizer = n;
    }

    pub fn reset(&mut self) -> EnvState {
        self.t = self.start;
        self.states = self.initial.clone();
        self.observation()
    }

    pub fn observation(&self) -> EnvState {
        let k = self.t.min(self.profiles.len() - 1);
        EnvState {
            load: self.profiles.load()[k],
            pv: self.profiles.pv()[k],
            soc: self.states.iter().map(|s| s.soc).collect(),
            temperature: self.states.iter().map(|s| s.temperature).collect(),
            price: self.tariff.buy_price()[k],
        }
    }

    pub fn normalized_observation(&self) -> Vec<f64> {
        self.normalizer.normalize(&self.observation())
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.end
    }

    pub fn step(&mut self, action: &[f64]) -> Result<EnvTransition> {
        if self.is_done() {
            return Err(Error::State(format!("step after episode end at {}", self.t)));
        }
        if action.len() != self.specs.len() {
            return Err(Error::Config(format!(
                "action has {} entries for {} strings",
                action.len(),
                self.specs.len()
            )));
        }
        let t = self.t;
        let mut results = Vec::with_capacity(self.specs.len());
        for ((st, spec), &p) in self.states.iter().zip(&self.specs).zip(action) {
            results.push(simulate_step(st, p, spec, STEP_HOURS)?);
        }
        let applied: Vec<f64> = results.iter().map(|r| r.p_applied).collect();
        let sample = GridSample::new(self.profiles.load()[t], self.profiles.pv()[t], STEP_HOURS)?;
        let p_grid = grid_power(&sample, &applied, self.specs.len())?;
        let cost = step_cost(p_grid, t, &self.tariff, STEP_HOURS)?;
        let baseline_cost = self.baseline[t];
        self.states = results.iter().map(|r| r.new_state).collect();
        let socs: Vec<f64> = self.states.iter().map(|s| s.soc).collect();
        let taus: Vec<f64> = self.states.iter().map(|s| s.temperature).collect();
        let delta_soc = deviation_sum(&socs);
        let delta_tau = deviation_sum(&taus);
        let r = reward(&self.weights, baseline_cost, cost, delta_soc, delta_tau);
        self.t += 1;
        Ok(EnvTransition {
            state: self.observation(),
            action: applied,
            reward: r,
            done: self.is_done(),
            info: StepInfo {
                grid_power: p_grid,
                cost,
                baseline_cost,
                delta_soc,
                delta_tau,
                strings: results,
            },
        })
    }

    /// Runs `controller` from a fresh reset to the end of the episode.
    pub fn run_episode(&mut self, controller: &mut dyn Controller) -> Result<Trajectory> {
        self.reset();
        controller.reset();
        let mut traj = Trajectory {
            controller: controller.name().to_string(),
            strings: self.specs.iter().map(|s| s.name.clone()).collect(),
            initial: self.initial.clone(),
            steps: Vec::with_capacity(self.end - self.start),
        };
        while !self.is_done() {
            let t = self.t;
            let obs = self.observation();
            let requested = controller.act(self)?;
            let tr = self.step(&requested)?;
            traj.steps.push(StepRecord::new(t, self.profiles.timestamps()[t], &obs, requested, &tr));
        }
        Ok(traj)
    }

    /// Absolute index of the current step.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn states(&self) -> &[StringState] {
        &self.states
    }

    pub fn specs(&self) -> &[StringSpec] {
        &self.specs
    }

    pub fn profiles(&self) -> &TimeSeries {
        &self.profiles
    }

    pub fn tariff(&self) -> &Tariff {
        &self.tariff
    }

    pub fn baseline(&self) -> &[f64] {
        &self.baseline
    }

    pub fn weights(&self) -> &ObjectiveWeights {
        &self.weights
    }

    pub fn normalizer(&self) -> &ObsNormalizer {
        &self.normalizer
    }
}

fn check_initial(st: &StringState, spec: &StringSpec) -> Result<()> {
    if !(st.soc >= spec.soc_min && st.soc <= spec.soc_max) || !st.temperature.is_finite() {
        return Err(Error::Config(format!(
            "initial state {st:?} of string {} outside SOC limits [{}, {}]",
            spec.name, spec.soc_min, spec.soc_max
        )));
    }
    Ok(())
}

/// Per-string columns of one logged step.
#[derive(Debug, Clone, PartialEq)]
pub struct StringRecord {
    pub requested: f64,
    pub applied: f64,
    /// State after the step.
    pub soc: f64,
    pub temperature: f64,
    pub p_inv_loss: f64,
    pub p_cell_loss: f64,
    pub p_heat: f64,
    pub flags: ClampFlags,
}

/// One row of the trajectory log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub timestamp: DateTime<FixedOffset>,
    pub load: f64,
    pub pv: f64,
    pub price: f64,
    pub strings: Vec<StringRecord>,
    pub grid_power: f64,
    pub cost: f64,
    pub baseline_cost: f64,
    pub delta_soc: f64,
    pub delta_tau: f64,
    pub reward: f64,
}

impl StepRecord {
    fn new(step: usize, timestamp: DateTime<FixedOffset>, obs: &EnvState, requested: Vec<f64>, tr: &EnvTransition) -> Self {
        Self {
            step,
            timestamp,
            load: obs.load,
            pv: obs.pv,
            price: obs.price,
            strings: tr
                .info
                .strings
                .iter()
                .zip(requested)
                .map(|(r, req)| StringRecord {
                    requested: req,
                    applied: r.p_applied,
                    soc: r.new_state.soc,
                    temperature: r.new_state.temperature,
                    p_inv_loss: r.p_inv_loss,
                    p_cell_loss: r.p_cell_loss,
                    p_heat: r.p_heat,
                    flags: r.flags,
                })
                .collect(),
            grid_power: tr.info.grid_power,
            cost: tr.info.cost,
            baseline_cost: tr.info.baseline_cost,
            delta_soc: tr.info.delta_soc,
            delta_tau: tr.info.delta_tau,
            reward: tr.reward,
        }
    }
}

/// The full log of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub controller: String,
    pub strings: Vec<String>,
    pub initial: Vec<StringState>,
    pub steps: Vec<StepRecord>,
}

const STRING_COLUMNS: [&str; 8] = ["p_req", "p", "soc", "tau", "p_inv", "p_cell_loss", "p_heat", "flags"];

impl Trajectory {
    pub fn costs(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.cost).collect()
    }

    pub fn baseline_costs(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.baseline_cost).collect()
    }

    /// Writes one row per step. Floats use shortest round-trip formatting so
    /// [`Trajectory::read_csv`] restores them exactly.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Data(format!("trajectory csv: {e}"));
        let mut header: Vec<String> = ["step", "timestamp", "load_kw", "pv_kw", "price_eur_kwh"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for name in &self.strings {
            header.extend(STRING_COLUMNS.iter().map(|c| format!("{c}_{name}")));
        }
        header.extend(
            ["grid_kw", "cost_eur", "baseline_eur", "delta_soc", "delta_tau", "reward"]
                .iter()
                .map(|s| s.to_string()),
        );
        w.write_record(&header).map_err(err)?;
        for s in &self.steps {
            let mut rec = vec![
                s.step.to_string(),
                s.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true),
                s.load.to_string(),
                s.pv.to_string(),
                s.price.to_string(),
            ];
            for r in &s.strings {
                rec.extend([
                    r.requested.to_string(),
                    r.applied.to_string(),
                    r.soc.to_string(),
                    r.temperature.to_string(),
                    r.p_inv_loss.to_string(),
                    r.p_cell_loss.to_string(),
                    r.p_heat.to_string(),
                    flags_code(&r.flags),
                ]);
            }
            rec.extend([
                s.grid_power.to_string(),
                s.cost.to_string(),
                s.baseline_cost.to_string(),
                s.delta_soc.to_string(),
                s.delta_tau.to_string(),
                s.reward.to_string(),
            ]);
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Data(format!("trajectory csv: {e}")))
    }

    /// Parses a log written by [`Trajectory::write_csv`]. The controller
    /// name and initial states are not part of the file.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Data(format!("trajectory header: {e}")))?.clone();
        let n_fixed = 5;
        let n_tail = 6;
        let per = STRING_COLUMNS.len();
        if headers.len() < n_fixed + n_tail || (headers.len() - n_fixed - n_tail) % per != 0 {
            return Err(Error::Data("trajectory header has an unexpected layout".into()));
        }
        let m = (headers.len() - n_fixed - n_tail) / per;
        let strings: Vec<String> = (0..m)
            .map(|k| headers[n_fixed + k * per].trim_start_matches("p_req_").to_string())
            .collect();
        let mut steps = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::Data(format!("trajectory row {row}: {e}")))?;
            let f = |c: usize| -> Result<f64> {
                rec[c].parse().map_err(|_| Error::Data(format!("trajectory row {row}: bad number `{}`", &rec[c])))
            };
            let mut strs = Vec::with_capacity(m);
            for k in 0..m {
                let b = n_fixed + k * per;
                strs.push(StringRecord {
                    requested: f(b)?,
                    applied: f(b + 1)?,
                    soc: f(b + 2)?,
                    temperature: f(b + 3)?,
                    p_inv_loss: f(b + 4)?,
                    p_cell_loss: f(b + 5)?,
                    p_heat: f(b + 6)?,
                    flags: parse_flags(&rec[b + 7])
                        .ok_or_else(|| Error::Data(format!("trajectory row {row}: bad flags")))?,
                });
            }
            let tail = n_fixed + m * per;
            steps.push(StepRecord {
                step: rec[0].parse().map_err(|_| Error::Data(format!("trajectory row {row}: bad step")))?,
                timestamp: DateTime::parse_from_rfc3339(&rec[1])
                    .map_err(|e| Error::Data(format!("trajectory row {row}: {e}")))?,
                load: f(2)?,
                pv: f(3)?,
                price: f(4)?,
                strings: strs,
                grid_power: f(tail)?,
                cost: f(tail + 1)?,
                baseline_cost: f(tail + 2)?,
                delta_soc: f(tail + 3)?,
                delta_tau: f(tail + 4)?,
                reward: f(tail + 5)?,
            });
        }
        Ok(Self { controller: String::new(), strings, initial: Vec::new(), steps })
    }
}

fn flags_code(f: &ClampFlags) -> String {
    let mut s = String::new();
    for (on, c) in [(f.rating, 'r'), (f.soc_limited, 's'), (f.standby, 'b'), (f.saturated, 'x')] {
        if on {
            s.push(c);
        }
    }
    if s.is_empty() {
        s.push('-');
    }
    s
}

fn parse_flags(s: &str) -> Option<ClampFlags> {
    let mut f = ClampFlags::default();
    if s == "-" {
        return Some(f);
    }
    for c in s.chars() {
        match c {
            'r' => f.rating = true,
            's' => f.soc_limited = true,
            'b' => f.standby = true,
            'x' => f.saturated = true,
            _ => return None,
        }
    }
    Some(f)
}
