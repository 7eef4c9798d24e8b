//! Receding-horizon LP dispatch over a forecast window.

use std::time::Instant;

use bess_lp::{solve_from, Basis, LpProblem, LpSolution, LpStatus, SolverOptions, VarStatus};
use serde::{Deserialize, Serialize};

use crate::env::{Controller, Env, Trajectory};
use crate::forecast::{perfect, Forecast, ForecastMode};
use crate::ingest::TimeSeries;
use crate::market::Tariff;
use crate::plant::{simulate_step, StringSpec, StringState};
use crate::{Error, Result, STEPS_PER_DAY, STEP_HOURS};

/// Weights of cost (`x`), SOC imbalance (`y`) and temperature imbalance
/// (`z`) in both the LP objective and the reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl ObjectiveWeights {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !(ok(x) && ok(y) && ok(z)) || x + y + z == 0.0 {
            return Err(Error::Config(format!(
                "objective weights ({x}, {y}, {z}) must be non-negative and not all zero"
            )));
        }
        Ok(Self { x, y, z })
    }

    /// Scales each term to order one over a horizon of `horizon` steps:
    /// `x` is the inverse mean daily baseline cost over the first week,
    /// `y` and `z` assume a typical imbalance of 0.5 SOC and 5 °C per string.
    pub fn normalized(baseline: &[f64], strings: usize, horizon: usize) -> Result<Self> {
        if baseline.is_empty() || strings == 0 || horizon == 0 {
            return Err(Error::Config("weight normalisation needs data, strings and a horizon".into()));
        }
        let n = baseline.len().min(7 * STEPS_PER_DAY);
        let days = n as f64 / STEPS_PER_DAY as f64;
        let daily = baseline[..n].iter().sum::<f64>() / days;
        let x = 1.0 / daily.abs().max(1e-3);
        let mh = (strings * horizon) as f64;
        Self::new(x, 1.0 / (mh * 0.5), 1.0 / (mh * 5.0))
    }
}

/// Linear surrogate of one string: constant efficiencies and a heat
/// coefficient fitted to the plant at half power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpStringModel {
    pub energy_capacity: f64,
    pub power_rating: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub eta_ch: f64,
    pub eta_dch: f64,
    /// Heat per unit of terminal power.
    pub alpha: f64,
    pub k1: f64,
    pub k2: f64,
    pub tau_air: f64,
}

impl LpStringModel {
    /// Fits efficiencies and `α` from one charge and one discharge step at
    /// half rating, starting from SOC 0.5 at ambient temperature.
    pub fn calibrate(spec: &StringSpec, dt: f64) -> Result<Self> {
        spec.validate()?;
        let half = 0.5 * spec.power_rating;
        let start = StringState { soc: 0.5, temperature: spec.thermal.tau_air };
        let ch = simulate_step(&start, half, spec, dt)?;
        let dch = simulate_step(&start, -half, spec, dt)?;
        if ch.p_applied != half || dch.p_applied != -half {
            return Err(Error::Domain(format!("string {} cannot run at half power from SOC 0.5", spec.name)));
        }
        let e = spec.energy_capacity;
        let eta_ch = (ch.new_state.soc - 0.5) * e / (half * dt);
        let eta_dch = half * dt / ((0.5 - dch.new_state.soc) * e);
        let alpha = 0.5 * (ch.p_heat + dch.p_heat) / half;
        if !(eta_ch > 0.0 && eta_dch > 0.0 && eta_ch.is_finite() && eta_dch.is_finite()) {
            return Err(Error::Domain(format!("calibration of string {} gave no usable efficiency", spec.name)));
        }
        Ok(Self {
            energy_capacity: e,
            power_rating: spec.power_rating,
            soc_min: spec.soc_min,
            soc_max: spec.soc_max,
            eta_ch,
            eta_dch,
            alpha,
            k1: spec.thermal.k1,
            k2: spec.thermal.k2,
            tau_air: spec.thermal.tau_air,
        })
    }
}

/// Column and row positions of the stage-major LP.
///
/// Per stage the columns are `buy, sell`, then `ch, dch, soc, τ` for each
/// string, then `soc_mean, τ_mean`, then `u_soc` and `u_τ` per string. Rows
/// are the SOC recursions, the SOC mean, the temperature recursions, the
/// temperature mean, the power balance and four absolute-value rows per
/// string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLayout {
    pub strings: usize,
}

impl VarLayout {
    pub fn vars_per_stage(&self) -> usize {
        6 * self.strings + 4
    }

    pub fn rows_per_stage(&self) -> usize {
        6 * self.strings + 3
    }

    fn base(&self, t: usize) -> usize {
        t * self.vars_per_stage()
    }

    pub fn buy(&self, t: usize) -> usize {
        self.base(t)
    }

    pub fn sell(&self, t: usize) -> usize {
        self.base(t) + 1
    }

    pub fn ch(&self, t: usize, m: usize) -> usize {
        self.base(t) + 2 + 4 * m
    }

    pub fn dch(&self, t: usize, m: usize) -> usize {
        self.ch(t, m) + 1
    }

    pub fn soc(&self, t: usize, m: usize) -> usize {
        self.ch(t, m) + 2
    }

    pub fn tau(&self, t: usize, m: usize) -> usize {
        self.ch(t, m) + 3
    }

    pub fn soc_mean(&self, t: usize) -> usize {
        self.base(t) + 2 + 4 * self.strings
    }

    pub fn tau_mean(&self, t: usize) -> usize {
        self.soc_mean(t) + 1
    }

    pub fn u_soc(&self, t: usize, m: usize) -> usize {
        self.soc_mean(t) + 2 + m
    }

    pub fn u_tau(&self, t: usize, m: usize) -> usize {
        self.soc_mean(t) + 2 + self.strings + m
    }
}

/// One horizon LP and the layout needed to read it.
#[derive(Debug, Clone)]
pub struct HorizonModel {
    pub problem: LpProblem,
    pub layout: VarLayout,
    pub horizon: usize,
    /// Net site demand `p^L − p^PV` per stage, used by the crash basis.
    net_demand: Vec<f64>,
    init: Vec<StringState>,
}

impl HorizonModel {
    /// A slack-heavy starting basis: grid purchase or sale basic depending on
    /// the sign of net demand, batteries idle, and the non-binding side of
    /// each absolute-value pair basic, judged at the initial state.
    pub fn crash_basis(&self) -> Basis {
        use VarStatus::{AtLower, Basic};
        let m = self.layout.strings;
        let soc_mean = self.init.iter().map(|s| s.soc).sum::<f64>() / m as f64;
        let tau_mean = self.init.iter().map(|s| s.temperature).sum::<f64>() / m as f64;
        let mut st = Vec::with_capacity(self.problem.num_vars());
        let mut lg = Vec::with_capacity(self.problem.num_rows());
        for &net in &self.net_demand {
            st.extend(if net >= 0.0 { [Basic, AtLower] } else { [AtLower, Basic] });
            for _ in 0..m {
                st.extend([AtLower, AtLower, Basic, Basic]);
            }
            st.extend([Basic, Basic]);
            st.extend(std::iter::repeat_n(Basic, 2 * m));
            lg.extend(std::iter::repeat_n(AtLower, 2 * m + 3));
            let pair = |d: f64| if d >= 0.0 { [AtLower, Basic] } else { [Basic, AtLower] };
            for s in &self.init {
                lg.extend(pair(soc_mean - s.soc));
                lg.extend(pair(tau_mean - s.temperature));
            }
        }
        Basis::new(st, lg)
    }

    /// Objective contribution of stage `t` at solution `x`.
    pub fn stage_objective(&self, t: usize, x: &[f64]) -> f64 {
        let v = self.layout.vars_per_stage();
        let c = self.problem.cost();
        (t * v..(t + 1) * v).map(|j| c[j] * x[j]).sum()
    }

    /// Predicted string states at the end of stage `t`.
    pub fn predicted_states(&self, t: usize, x: &[f64]) -> Vec<StringState> {
        (0..self.layout.strings)
            .map(|m| StringState { soc: x[self.layout.soc(t, m)], temperature: x[self.layout.tau(t, m)] })
            .collect()
    }
}

/// Builds the horizon LP starting from `init` at absolute step `t0`.
pub fn build_horizon_model(
    init: &[StringState],
    strings: &[LpStringModel],
    tariff: &Tariff,
    t0: usize,
    forecast: &Forecast,
    weights: &ObjectiveWeights,
    dt: f64,
) -> Result<HorizonModel> {
    let m_count = strings.len();
    let h = forecast.horizon();
    if m_count == 0 || init.len() != m_count {
        return Err(Error::Config(format!("{} initial states for {m_count} LP strings", init.len())));
    }
    if h == 0 || forecast.pv.len() != h {
        return Err(Error::Config("forecast must cover at least one step".into()));
    }
    if t0 + h > tariff.len() {
        return Err(Error::Index { index: t0 + h, len: tariff.len() });
    }
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("step length {dt} must be positive")));
    }
    let layout = VarLayout { strings: m_count };
    let inf = f64::INFINITY;
    let total_rating: f64 = strings.iter().map(|s| s.power_rating).sum();
    let sell_rate = tariff.export_rate();
    let mf = m_count as f64;

    let mut lp = LpProblem::new();
    let mut net_demand = Vec::with_capacity(h);
    for t in 0..h {
        let net = forecast.load[t] - forecast.pv[t];
        net_demand.push(net);
        let buy_rate = tariff.import_rate(t0 + t)?;
        lp.add_named_var(format!("buy_{t}"), weights.x * dt * buy_rate, 0.0, net.max(0.0) + total_rating);
        lp.add_named_var(format!("sell_{t}"), -weights.x * dt * sell_rate, 0.0, (-net).max(0.0) + total_rating);
        for (m, s) in strings.iter().enumerate() {
            let soc0 = init[m].soc;
            lp.add_named_var(format!("ch_{t}_{m}"), 0.0, 0.0, s.power_rating);
            lp.add_named_var(format!("dch_{t}_{m}"), 0.0, 0.0, s.power_rating);
            lp.add_named_var(format!("soc_{t}_{m}"), 0.0, s.soc_min.min(soc0), s.soc_max.max(soc0));
            lp.add_named_var(format!("tau_{t}_{m}"), 0.0, -inf, inf);
        }
        lp.add_named_var(format!("soc_mean_{t}"), 0.0, -inf, inf);
        lp.add_named_var(format!("tau_mean_{t}"), 0.0, -inf, inf);
        for m in 0..m_count {
            lp.add_named_var(format!("u_soc_{t}_{m}"), weights.y, 0.0, inf);
        }
        for m in 0..m_count {
            lp.add_named_var(format!("u_tau_{t}_{m}"), weights.z, 0.0, inf);
        }

        for (m, s) in strings.iter().enumerate() {
            let k = dt / s.energy_capacity;
            let mut row = vec![
                (layout.soc(t, m), 1.0),
                (layout.ch(t, m), -k * s.eta_ch),
                (layout.dch(t, m), k / s.eta_dch),
            ];
            let rhs = if t == 0 {
                init[m].soc
            } else {
                row.push((layout.soc(t - 1, m), -1.0));
                0.0
            };
            lp.add_eq(&row, rhs);
        }
        let mut row = vec![(layout.soc_mean(t), mf)];
        row.extend((0..m_count).map(|m| (layout.soc(t, m), -1.0)));
        lp.add_eq(&row, 0.0);

        for (m, s) in strings.iter().enumerate() {
            let decay = 1.0 - s.k2 * dt;
            let gain = dt * s.k1 * s.alpha;
            let mut row = vec![(layout.tau(t, m), 1.0), (layout.ch(t, m), -gain), (layout.dch(t, m), -gain)];
            let ambient = dt * s.k2 * s.tau_air;
            let rhs = if t == 0 {
                decay * init[m].temperature + ambient
            } else {
                row.push((layout.tau(t - 1, m), -decay));
                ambient
            };
            lp.add_eq(&row, rhs);
        }
        let mut row = vec![(layout.tau_mean(t), mf)];
        row.extend((0..m_count).map(|m| (layout.tau(t, m), -1.0)));
        lp.add_eq(&row, 0.0);

        let mut row = vec![(layout.buy(t), 1.0), (layout.sell(t), -1.0)];
        for m in 0..m_count {
            row.push((layout.ch(t, m), -1.0));
            row.push((layout.dch(t, m), 1.0));
        }
        lp.add_eq(&row, net);

        for m in 0..m_count {
            let (sm, s, us) = (layout.soc_mean(t), layout.soc(t, m), layout.u_soc(t, m));
            lp.add_le(&[(sm, 1.0), (s, -1.0), (us, -1.0)], 0.0);
            lp.add_le(&[(sm, -1.0), (s, 1.0), (us, -1.0)], 0.0);
            let (tm, tau, ut) = (layout.tau_mean(t), layout.tau(t, m), layout.u_tau(t, m));
            lp.add_le(&[(tm, 1.0), (tau, -1.0), (ut, -1.0)], 0.0);
            lp.add_le(&[(tm, -1.0), (tau, 1.0), (ut, -1.0)], 0.0);
        }
    }
    Ok(HorizonModel { problem: lp, layout, horizon: h, net_demand, init: init.to_vec() })
}

/// Stage-0 set points from an optimal solution.
#[derive(Debug, Clone, PartialEq)]
pub struct LpAction {
    /// kW per string, positive charging.
    pub powers: Vec<f64>,
    /// Strings whose charge and discharge were both active.
    pub simultaneous: Vec<bool>,
}

pub fn extract_action(model: &HorizonModel, sol: &LpSolution) -> Result<LpAction> {
    if sol.status != LpStatus::Optimal {
        return Err(Error::Solver { step: 0, message: format!("no optimal solution ({:?})", sol.status) });
    }
    let l = &model.layout;
    let mut powers = Vec::with_capacity(l.strings);
    let mut simultaneous = Vec::with_capacity(l.strings);
    for m in 0..l.strings {
        let ch = sol.x[l.ch(0, m)];
        let dch = sol.x[l.dch(0, m)];
        let both = ch.min(dch) > 1e-6;
        if both {
            log::debug!("string {m} charges {ch:.4} kW and discharges {dch:.4} kW in one step; using the net");
        }
        let rating = model.problem.upper()[l.ch(0, m)];
        powers.push((ch - dch).clamp(-rating, rating));
        simultaneous.push(both);
    }
    Ok(LpAction { powers, simultaneous })
}

/// Warm start for a horizon of `new_h` stages from the optimal basis of
/// the previous solve: drops the first stage and repeats the final one as
/// needed.
pub fn shift_basis(prev: &Basis, prev_h: usize, new_h: usize, layout: &VarLayout) -> Basis {
    let (v, r) = (layout.vars_per_stage(), layout.rows_per_stage());
    let shift = |src: &[VarStatus], w: usize| {
        let mut out = Vec::with_capacity(new_h * w);
        for k in 0..new_h {
            let stage = (k + 1).min(prev_h - 1);
            out.extend_from_slice(&src[stage * w..(stage + 1) * w]);
        }
        out
    };
    Basis::new(shift(prev.structural(), v), shift(prev.logical(), r))
}

/// Diagnostics of one dispatch solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub step: usize,
    pub horizon: usize,
    pub iterations: usize,
    pub warm: bool,
    pub fallback: bool,
    pub seconds: f64,
}

/// Aggregate of [`SolveStats`] for reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub solves: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
    pub fallbacks: usize,
    pub total_seconds: f64,
}

impl SolverSummary {
    pub fn from_stats(stats: &[SolveStats]) -> Self {
        Self {
            solves: stats.len(),
            total_iterations: stats.iter().map(|s| s.iterations).sum(),
            max_iterations: stats.iter().map(|s| s.iterations).max().unwrap_or(0),
            fallbacks: stats.iter().filter(|s| s.fallback).count(),
            total_seconds: stats.iter().map(|s| s.seconds).sum(),
        }
    }
}

/// Rolling-horizon LP controller. Each step re-solves over the next
/// `horizon` steps (fewer near the end of the data) from the measured
/// state and applies the first stage.
#[derive(Debug, Clone)]
pub struct LpController {
    name: String,
    strings: Vec<LpStringModel>,
    weights: ObjectiveWeights,
    horizon: usize,
    mode: ForecastMode,
    options: SolverOptions,
    warm: Option<(usize, Basis)>,
    stats: Vec<SolveStats>,
    warned_simultaneous: bool,
}

impl LpController {
    pub fn new(specs: &[StringSpec], weights: ObjectiveWeights, horizon: usize, mode: ForecastMode) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("LP horizon must be at least one step".into()));
        }
        let strings = specs
            .iter()
            .map(|s| LpStringModel::calibrate(s, STEP_HOURS))
            .collect::<Result<Vec<_>>>()?;
        let name = match mode {
            ForecastMode::Perfect => "lp-perfect",
            ForecastMode::Persistence => "lp-persist",
        };
        Ok(Self {
            name: name.to_string(),
            strings,
            weights,
            horizon,
            mode,
            options: SolverOptions::default(),
            warm: None,
            warned_simultaneous: false,
            stats: Vec::new(),
        })
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    pub fn strings(&self) -> &[LpStringModel] {
        &self.strings
    }

    pub fn stats(&self) -> &[SolveStats] {
        &self.stats
    }

    pub fn summary(&self) -> SolverSummary {
        SolverSummary::from_stats(&self.stats)
    }

    fn solve_step(&mut self, env: &Env) -> Result<Option<LpAction>> {
        let t = env.t();
        let h = self.horizon.min(env.profiles().len() - t);
        let forecast = self.mode.forecast(env.profiles(), t, h)?;
        let model = build_horizon_model(env.states(), &self.strings, env.tariff(), t, &forecast, &self.weights, STEP_HOURS)?;
        let started = Instant::now();
        let (start, warm) = match &self.warm {
            Some((ph, b)) => (shift_basis(b, *ph, h, &model.layout), true),
            None => (model.crash_basis(), false),
        };
        let mut iterations = 0;
        let mut sol = solve_from(&model.problem, &self.options, Some(&start));
        if warm && !matches!(&sol, Ok(s) if s.is_optimal()) {
            iterations += sol.as_ref().map_or(0, |s| s.iterations);
            sol = solve_from(&model.problem, &self.options, Some(&model.crash_basis()));
        }
        let outcome = match sol {
            Ok(s) if s.is_optimal() => {
                iterations += s.iterations;
                let action = extract_action(&model, &s)?;
                if !self.warned_simultaneous && action.simultaneous.iter().any(|&b| b) {
                    // Usually heat generation to pull temperatures together.
                    log::warn!("dispatch LP at step {t} charges and discharges one string at once; applying the net");
                    self.warned_simultaneous = true;
                }
                self.warm = Some((h, s.basis));
                Some(action)
            }
            Ok(s) => {
                iterations += s.iterations;
                log::warn!("dispatch LP at step {t} ended {:?}; holding the batteries idle", s.status);
                self.warm = None;
                None
            }
            Err(e) => {
                log::warn!("dispatch LP at step {t} failed: {e}; holding the batteries idle");
                self.warm = None;
                None
            }
        };
        self.stats.push(SolveStats {
            step: t,
            horizon: h,
            iterations,
            warm,
            fallback: outcome.is_none(),
            seconds: started.elapsed().as_secs_f64(),
        });
        Ok(outcome)
    }
}

impl Controller for LpController {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset(&mut self) {
        self.warm = None;
        self.stats.clear();
        self.warned_simultaneous = false;
    }

    fn act(&mut self, env: &Env) -> Result<Vec<f64>> {
        Ok(match self.solve_step(env)? {
            Some(a) => a.powers,
            None => vec![0.0; self.strings.len()],
        })
    }
}

/// Runs a full episode of `controller` on `env`.
pub fn rolling_run(env: &mut Env, controller: &mut dyn Controller) -> Result<Trajectory> {
    env.run_episode(controller)
}

/// Objective of the receding-horizon loop run on the LP's own model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecedingCheck {
    /// Sum of the applied first-stage objective terms.
    pub rolling_objective: f64,
    /// Optimal value of the single LP over the whole window.
    pub single_shot_objective: f64,
    pub solves: usize,
}

/// Runs the dispatcher with perfect foresight over the whole of `profiles`,
/// re-anchoring each solve at the LP's own predicted state and letting the
/// horizon shrink to the end of the window, and compares the accumulated
/// first-stage objective to the single-shot optimum.
pub fn receding_horizon_check(
    init: &[StringState],
    strings: &[LpStringModel],
    tariff: &Tariff,
    profiles: &TimeSeries,
    weights: &ObjectiveWeights,
    options: &SolverOptions,
) -> Result<RecedingCheck> {
    let n = profiles.len();
    let mut state = init.to_vec();
    let mut warm: Option<(usize, Basis)> = None;
    let mut rolling = 0.0;
    let mut single_shot = f64::NAN;
    for t in 0..n {
        let h = n - t;
        let model = build_horizon_model(&state, strings, tariff, t, &perfect(profiles, t, h)?, weights, STEP_HOURS)?;
        let start = match &warm {
            Some((ph, b)) => shift_basis(b, *ph, h, &model.layout),
            None => model.crash_basis(),
        };
        let sol = solve_from(&model.problem, options, Some(&start))
            .map_err(|e| Error::Solver { step: t, message: e.to_string() })?;
        if !sol.is_optimal() {
            return Err(Error::Solver { step: t, message: format!("{:?}", sol.status) });
        }
        if t == 0 {
            single_shot = sol.objective;
        }
        rolling += model.stage_objective(0, &sol.x);
        state = model.predicted_states(0, &sol.x);
        warm = Some((h, sol.basis));
    }
    Ok(RecedingCheck { rolling_objective: rolling, single_shot_objective: single_shot, solves: n })
}
