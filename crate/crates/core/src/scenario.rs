//! Scenario configuration, run orchestration and report files.
//!
//! A scenario is one TOML document. Every field has a default, so an empty
//! file describes the long-term scenario: both strings empty (SOC 0.1) at
//! 25 °C, trimmed to 30 days of synthetic data. [`ScenarioConfig::short_term`]
//! gives the balancing scenario: SOC 0.7/0.3 and 35/25 °C over 7 days.
//!
//! ```toml
//! name = "week"
//! controller = "lp-persist"   # lp-perfect | lp-persist | bc | ppo | zero | random
//! days = 7
//! horizon = 96
//! initial_soc = [0.7, 0.3]
//! initial_temperature = [35.0, 25.0]
//!
//! [weights]                   # omit to scale from the baseline cost
//! x = 0.002
//! y = 0.01
//! z = 0.001
//!
//! [data]
//! path = "profiles.csv"       # omit for synthetic data seeded by `seed`
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dispatcher::{LpController, ObjectiveWeights, SolverSummary};
use crate::env::{Env, RandomController, Trajectory, ZeroController};
use crate::forecast::ForecastMode;
use crate::ingest::{load_csv, scale_prices, synth_profiles_with, ColumnMap, SynthParams, TimeSeries, PRICE_HI, PRICE_LO};
use crate::market::{baseline_cost_series, Tariff, DEFAULT_SELL_PRICE};
use crate::metrics::MetricsSummary;
use crate::plant::{StringSpec, StringState};
use crate::policy::{train_pipeline, PolicyCheckpoint, PolicyController, TrainConfig, TrainReport};
use crate::{Error, Result, STEPS_PER_DAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    LpPerfect,
    LpPersist,
    Bc,
    Ppo,
    Zero,
    Random,
}

impl ControllerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::LpPerfect => "lp-perfect",
            ControllerKind::LpPersist => "lp-persist",
            ControllerKind::Bc => "bc",
            ControllerKind::Ppo => "ppo",
            ControllerKind::Zero => "zero",
            ControllerKind::Random => "random",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lp-perfect" => ControllerKind::LpPerfect,
            "lp-persist" => ControllerKind::LpPersist,
            "bc" => ControllerKind::Bc,
            "ppo" => ControllerKind::Ppo,
            "zero" => ControllerKind::Zero,
            "random" => ControllerKind::Random,
            other => return Err(Error::Config(format!("unknown controller `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TariffConfig {
    /// Feed-in price, €/kWh.
    pub sell_price: f64,
    pub tax_ratio: f64,
}

impl Default for TariffConfig {
    fn default() -> Self {
        Self { sell_price: DEFAULT_SELL_PRICE, tax_ratio: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Profile CSV; synthetic data is generated when absent.
    pub path: Option<PathBuf>,
    pub columns: ColumnMap,
    /// Min-max map a CSV price column onto the tariff band.
    pub scale_prices: bool,
    pub synth: SynthParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { path: None, columns: ColumnMap::default(), scale_prices: true, synth: SynthParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub controller: ControllerKind,
    pub days: usize,
    /// First simulated day within the data.
    pub start_day: usize,
    pub seed: u64,
    /// LP horizon, steps.
    pub horizon: usize,
    pub initial_soc: Vec<f64>,
    pub initial_temperature: Vec<f64>,
    pub weights: Option<ObjectiveWeights>,
    pub tariff: TariffConfig,
    pub data: DataConfig,
    /// Policy checkpoint for `bc` and `ppo`.
    pub policy: Option<PathBuf>,
    pub strings: Vec<StringSpec>,
    pub training: TrainConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::long_term()
    }
}

impl ScenarioConfig {
    /// Year-long operation from empty strings, trimmed to 30 days; see
    /// [`ScenarioConfig::full_year`].
    pub fn long_term() -> Self {
        Self {
            name: "scenario-1".into(),
            controller: ControllerKind::LpPerfect,
            days: 30,
            start_day: 0,
            seed: 0,
            horizon: 96,
            initial_soc: vec![0.1, 0.1],
            initial_temperature: vec![25.0, 25.0],
            weights: None,
            tariff: TariffConfig::default(),
            data: DataConfig::default(),
            policy: None,
            strings: StringSpec::default_pair(),
            training: TrainConfig::default(),
        }
    }

    /// One week from imbalanced SOC and temperature.
    pub fn short_term() -> Self {
        Self {
            name: "scenario-2".into(),
            days: 7,
            initial_soc: vec![0.7, 0.3],
            initial_temperature: vec![35.0, 25.0],
            ..Self::long_term()
        }
    }

    pub fn full_year(mut self) -> Self {
        self.days = 365;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // relative data and policy paths are taken from the scenario file's directory
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.path, &mut cfg.policy].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.days == 0 {
            return Err(Error::Config("scenario must span at least one day".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least one step".into()));
        }
        if self.strings.is_empty() {
            return Err(Error::Config("at least one battery string is required".into()));
        }
        if self.initial_soc.len() != self.strings.len() || self.initial_temperature.len() != self.strings.len() {
            return Err(Error::Config(format!(
                "{} strings but {} initial SOCs and {} initial temperatures",
                self.strings.len(),
                self.initial_soc.len(),
                self.initial_temperature.len()
            )));
        }
        for (s, spec) in self.strings.iter().enumerate() {
            spec.validate()?;
            let soc = self.initial_soc[s];
            if !(soc >= spec.soc_min && soc <= spec.soc_max) {
                return Err(Error::Config(format!(
                    "initial SOC {soc} of string {} outside [{}, {}]",
                    spec.name, spec.soc_min, spec.soc_max
                )));
            }
        }
        if let Some(w) = self.weights {
            ObjectiveWeights::new(w.x, w.y, w.z)?;
        }
        Ok(())
    }

    pub fn initial_states(&self) -> Vec<StringState> {
        self.initial_soc
            .iter()
            .zip(&self.initial_temperature)
            .map(|(&soc, &temperature)| StringState { soc, temperature })
            .collect()
    }

    fn lookahead_days(&self) -> usize {
        self.horizon.div_ceil(STEPS_PER_DAY)
    }

    /// Loads the configured CSV, or synthesises enough days to cover the
    /// run plus one horizon of lookahead.
    /// A CSV without prices borrows the synthetic price curve.
    pub fn dataset(&self, min_days: usize) -> Result<TimeSeries> {
        let Some(path) = &self.data.path else {
            return synth_profiles_with(min_days + self.lookahead_days(), self.seed, &self.data.synth);
        };
        let series = load_csv(path, &self.data.columns)?;
        let prices = match series.price() {
            Some(raw) if self.data.scale_prices => scale_prices(raw, PRICE_LO, PRICE_HI)?,
            Some(raw) => raw.to_vec(),
            None => {
                log::warn!("{} has no price column; using synthetic prices", path.display());
                let n = series.len();
                let synth = synth_profiles_with(n.div_ceil(STEPS_PER_DAY), self.seed, &self.data.synth)?;
                synth.price().map(|p| p[..n].to_vec()).unwrap_or_default()
            }
        };
        series.with_price(prices)
    }

    /// Fingerprint of every field that affects results. The name is
    /// ignored and a policy checkpoint is identified by its content.
    pub fn config_hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.name.clear();
        let policy = c.policy.take().map(|p| fs::read(&p).map_err(|e| Error::io(p, e))).transpose()?;
        let json = serde_json::to_vec(&c).map_err(|e| Error::Config(format!("config hash: {e}")))?;
        let mut h = Sha256::new();
        h.update(&json);
        if let Some(bytes) = policy {
            h.update(b"\0policy\0");
            h.update(&bytes);
        }
        Ok(hex::encode(h.finalize()))
    }
}

/// SHA-256 over timestamps and samples.
pub fn dataset_hash(series: &TimeSeries) -> String {
    let mut h = Sha256::new();
    for i in 0..series.len() {
        h.update(series.timestamps()[i].timestamp().to_le_bytes());
        h.update(series.load()[i].to_le_bytes());
        h.update(series.pv()[i].to_le_bytes());
        if let Some(p) = series.price() {
            h.update(p[i].to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Run metadata written next to the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub scenario: String,
    pub controller: String,
    pub seed: u64,
    pub config_hash: String,
    pub dataset_hash: String,
    pub start_step: usize,
    pub steps: usize,
    pub horizon: usize,
    pub weights: ObjectiveWeights,
    pub solver: Option<SolverSummary>,
    pub wall_seconds: f64,
    pub version: String,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub trajectory: Trajectory,
    pub metrics: MetricsSummary,
    pub meta: RunMeta,
}

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const META_FILE: &str = "meta.json";

/// Builds the environment for `cfg` over `profiles`, returning it with the
/// resolved weights.
pub fn build_env(cfg: &ScenarioConfig, profiles: TimeSeries) -> Result<(Env, ObjectiveWeights)> {
    cfg.validate()?;
    let tariff = Tariff::from_series(&profiles, cfg.tariff.sell_price, cfg.tariff.tax_ratio)?;
    let start = cfg.start_day * STEPS_PER_DAY;
    let len = cfg.days * STEPS_PER_DAY;
    if start + len > profiles.len() {
        return Err(Error::Data(format!(
            "scenario needs steps {start}..{} but the data has {}",
            start + len,
            profiles.len()
        )));
    }
    let weights = match cfg.weights {
        Some(w) => w,
        None => {
            let base = baseline_cost_series(&profiles, &tariff)?;
            ObjectiveWeights::normalized(&base[start..], cfg.strings.len(), cfg.horizon)?
        }
    };
    let mut env = Env::new(profiles, tariff, cfg.strings.clone(), weights, cfg.initial_states())?;
    env.set_window(start, len)?;
    Ok((env, weights))
}

fn load_policy(cfg: &ScenarioConfig) -> Result<PolicyController> {
    let path = cfg.policy.as_ref().ok_or_else(|| {
        Error::Config(format!("controller `{}` needs a policy checkpoint", cfg.controller.as_str()))
    })?;
    let (policy, normalizer) = PolicyCheckpoint::load(path)?.into_policy()?;
    if policy.action_dim() != cfg.strings.len() {
        return Err(Error::Config(format!(
            "policy controls {} strings, scenario has {}",
            policy.action_dim(),
            cfg.strings.len()
        )));
    }
    Ok(PolicyController::new(cfg.controller.as_str(), policy, normalizer))
}

/// Runs the scenario in memory.
pub fn execute(cfg: &ScenarioConfig) -> Result<RunReport> {
    let started = Instant::now();
    let profiles = cfg.dataset(cfg.start_day + cfg.days)?;
    let data_hash = dataset_hash(&profiles);
    let (mut env, weights) = build_env(cfg, profiles)?;
    let (trajectory, solver) = match cfg.controller {
        ControllerKind::LpPerfect | ControllerKind::LpPersist => {
            let mode = if cfg.controller == ControllerKind::LpPerfect {
                ForecastMode::Perfect
            } else {
                ForecastMode::Persistence
            };
            let mut c = LpController::new(&cfg.strings, weights, cfg.horizon, mode)?;
            let traj = env.run_episode(&mut c)?;
            (traj, Some(c.summary()))
        }
        ControllerKind::Bc | ControllerKind::Ppo => (env.run_episode(&mut load_policy(cfg)?)?, None),
        ControllerKind::Zero => (env.run_episode(&mut ZeroController)?, None),
        ControllerKind::Random => (env.run_episode(&mut RandomController::new(cfg.seed))?, None),
    };
    let metrics = MetricsSummary::from_trajectory(&trajectory)?;
    let meta = RunMeta {
        scenario: cfg.name.clone(),
        controller: cfg.controller.as_str().into(),
        seed: cfg.seed,
        config_hash: cfg.config_hash()?,
        dataset_hash: data_hash,
        start_step: env.start(),
        steps: trajectory.steps.len(),
        horizon: cfg.horizon,
        weights,
        solver,
        wall_seconds: started.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").into(),
    };
    Ok(RunReport { trajectory, metrics, meta })
}

/// Runs the scenario and writes `trajectory.csv`, `metrics.json` and
/// `meta.json` into `out`.
pub fn run_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<RunReport> {
    let report = execute(cfg)?;
    write_report(&report, out)?;
    Ok(report)
}

pub fn write_report(report: &RunReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut csv = Vec::new();
    report.trajectory.write_csv(&mut csv)?;
    write_atomic(&out.join(TRAJECTORY_FILE), &csv)?;
    write_atomic(&out.join(METRICS_FILE), &to_json(&report.metrics)?)?;
    write_atomic(&out.join(META_FILE), &to_json(&report.meta)?)
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v).map_err(|e| Error::Data(format!("json: {e}")))?;
    s.push(b'\n');
    Ok(s)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Metrics and metadata of a report directory.
#[derive(Debug, Clone)]
pub struct StoredReport {
    pub dir: PathBuf,
    pub metrics: MetricsSummary,
    pub meta: RunMeta,
}

impl StoredReport {
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(p, e))
        };
        let metrics = serde_json::from_str(&read(METRICS_FILE)?)
            .map_err(|e| Error::Data(format!("{}: {e}", dir.join(METRICS_FILE).display())))?;
        let meta = serde_json::from_str(&read(META_FILE)?)
            .map_err(|e| Error::Data(format!("{}: {e}", dir.join(META_FILE).display())))?;
        Ok(Self { dir: dir.to_path_buf(), metrics, meta })
    }

    pub fn from_report(report: &RunReport, dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into(), metrics: report.metrics.clone(), meta: report.meta.clone() }
    }
}

/// Names of the scalar metrics in comparison tables, in order.
pub const COMPARED_METRICS: [&str; 8] = [
    "savings_eur",
    "mean_delta_soc",
    "mean_delta_tau_c",
    "efficiency_pct",
    "total_loss_kwh",
    "throughput_kwh",
    "total_cost_eur",
    "clamped_steps",
];

fn metric_values(m: &MetricsSummary) -> [f64; 8] {
    [
        m.savings,
        m.mean_delta_soc,
        m.mean_delta_tau,
        m.efficiency,
        m.total_loss,
        m.throughput,
        m.total_cost,
        m.clamped_steps as f64,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub values: Vec<f64>,
    /// Difference to the first column.
    pub deltas: Vec<f64>,
}

/// Side-by-side metrics, one column per report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub columns: Vec<String>,
    pub dataset_hash: String,
    pub rows: Vec<MetricRow>,
    /// Step-aligned series keyed by `<series>_<column>`.
    pub series: BTreeMap<String, Vec<f64>>,
}

/// Compares reports produced on the same data window.
pub fn compare(reports: &[StoredReport]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::Config("comparison needs at least two reports".into()));
    }
    let first = &reports[0].meta;
    for r in &reports[1..] {
        if r.meta.dataset_hash != first.dataset_hash
            || r.meta.start_step != first.start_step
            || r.meta.steps != first.steps
        {
            return Err(Error::Data(format!(
                "report {} was produced on different data than {}",
                r.dir.display(),
                reports[0].dir.display()
            )));
        }
    }
    let mut columns: Vec<String> = Vec::with_capacity(reports.len());
    for r in reports {
        let base = r.meta.controller.clone();
        let mut name = base.clone();
        let mut k = 2;
        while columns.contains(&name) {
            name = format!("{base}-{k}");
            k += 1;
        }
        columns.push(name);
    }
    let values: Vec<[f64; 8]> = reports.iter().map(|r| metric_values(&r.metrics)).collect();
    let rows = COMPARED_METRICS
        .iter()
        .enumerate()
        .map(|(i, name)| MetricRow {
            metric: name.to_string(),
            values: values.iter().map(|v| v[i]).collect(),
            deltas: values.iter().map(|v| v[i] - values[0][i]).collect(),
        })
        .collect();
    let mut series = BTreeMap::new();
    for (col, r) in columns.iter().zip(reports) {
        series.insert(format!("cumulative_savings_{col}"), r.metrics.cumulative_savings.clone());
        series.insert(format!("cumulative_loss_{col}"), r.metrics.cumulative_loss.clone());
        series.insert(format!("delta_soc_{col}"), r.metrics.delta_soc.clone());
        series.insert(format!("delta_tau_{col}"), r.metrics.delta_tau.clone());
    }
    Ok(Comparison { columns, dataset_hash: first.dataset_hash.clone(), rows, series })
}

impl Comparison {
    /// `metric, <col>…, delta_<col>…`, one row per metric.
    pub fn table_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Data(format!("comparison csv: {e}"));
        let mut header = vec!["metric".to_string()];
        header.extend(self.columns.iter().cloned());
        header.extend(self.columns.iter().map(|c| format!("delta_{c}")));
        w.write_record(&header).map_err(err)?;
        for row in &self.rows {
            let mut rec = vec![row.metric.clone()];
            rec.extend(row.values.iter().map(f64::to_string));
            rec.extend(row.deltas.iter().map(f64::to_string));
            w.write_record(&rec).map_err(err)?;
        }
        w.into_inner().map_err(|e| Error::Data(format!("comparison csv: {e}")))
    }

    /// `step` followed by every series, aligned per step.
    pub fn series_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Data(format!("comparison csv: {e}"));
        let mut header = vec!["step".to_string()];
        header.extend(self.series.keys().cloned());
        w.write_record(&header).map_err(err)?;
        let n = self.series.values().map(Vec::len).max().unwrap_or(0);
        for i in 0..n {
            let mut rec = vec![i.to_string()];
            rec.extend(self.series.values().map(|s| s.get(i).map_or(String::new(), f64::to_string)));
            w.write_record(&rec).map_err(err)?;
        }
        w.into_inner().map_err(|e| Error::Data(format!("comparison csv: {e}")))
    }

    /// Writes `comparison.json`, `comparison.csv` and `series.csv`.
    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_atomic(&out.join("comparison.json"), &to_json(self)?)?;
        write_atomic(&out.join("comparison.csv"), &self.table_csv()?)?;
        write_atomic(&out.join("series.csv"), &self.series_csv()?)
    }
}

/// Result of a seed sweep of the training pipeline.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub checkpoint: PolicyCheckpoint,
    pub best_seed: u64,
    pub reports: Vec<TrainReport>,
}

/// Trains one policy per seed `cfg.training.seed + k` for `k < seeds` and
/// keeps the one with the best validation savings.
pub fn train_policies(cfg: &ScenarioConfig, seeds: usize) -> Result<TrainingRun> {
    cfg.validate()?;
    if seeds == 0 {
        return Err(Error::Config("at least one training seed is required".into()));
    }
    let t = &cfg.training;
    let profiles = cfg.dataset(t.train_days + t.validation_days)?;
    let mut run_cfg = cfg.clone();
    run_cfg.start_day = 0;
    run_cfg.days = t.train_days + t.validation_days;
    run_cfg.horizon = t.expert_horizon;
    let (mut env, _) = build_env(&run_cfg, profiles)?;
    let mut best: Option<(f64, u64, PolicyCheckpoint)> = None;
    let mut reports = Vec::with_capacity(seeds);
    for k in 0..seeds {
        let tc = TrainConfig { seed: t.seed + k as u64, ..t.clone() };
        let out = train_pipeline(&mut env, &tc)?;
        let score = out.report.best_validation_savings;
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, tc.seed, PolicyCheckpoint::new(&out.policy, out.normalizer)));
        }
        reports.push(out.report);
    }
    let (_, best_seed, checkpoint) = best.expect("at least one seed ran");
    Ok(TrainingRun { checkpoint, best_seed, reports })
}

/// Writes `policy.json` and `train_report.json` into `out`.
pub fn write_training(run: &TrainingRun, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_atomic(&out.join("policy.json"), &to_json(&run.checkpoint)?)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        best_seed: u64,
        runs: &'a [TrainReport],
    }
    write_atomic(&out.join("train_report.json"), &to_json(&Summary { best_seed: run.best_seed, runs: &run.reports })?)
}
