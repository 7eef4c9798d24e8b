//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

#[path = "../../lp/tests/support/vertex.rs"]
mod vertex;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use bess_lp::{solve, LpProblem, LpStatus, SolverOptions};
use bess_split::dispatcher::{receding_horizon_check, LpController, LpStringModel, ObjectiveWeights};
use bess_split::env::{Controller, Env, RandomController};
use bess_split::forecast::ForecastMode;
use bess_split::ingest::synth_profiles;
use bess_split::market::{baseline_cost_series, Tariff, DEFAULT_SELL_PRICE};
use bess_split::metrics::{deviation_sum, savings};
use bess_split::plant::{ocv_from_soc, StringSpec, StringState};
use bess_split::policy::{
    bc_loss, bc_loss_grad, bc_train, collect_expert, evaluate_policy, ppo_loss, ppo_loss_grad, value_network,
    ExpertSet, MlpPolicy, PolicyCheckpoint, PpoBatch, PpoCoefficients, TrainConfig,
};
use bess_split::scenario::{compare, execute, run_scenario, ControllerKind, ScenarioConfig, StoredReport};
use bess_split::{STEPS_PER_DAY, STEP_HOURS};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Horizon used by the week- and month-long LP runs below; see README.
const ACCEPTANCE_HORIZON: usize = 48;

const LP_CASES: usize = 100;
const LP_REL_TOL: f64 = 1e-6;
const LP_TIME_S: f64 = 5.0;
const BALANCE_TOL_KW: f64 = 1e-9;
const ENERGY_TOL_KWH: f64 = 1e-6;
const ORDERING_TOL_EUR: f64 = 1e-6;
const ORDERING_WEEKS: [u64; 3] = [31, 32, 33];
const ORDERING_TIME_S: f64 = 120.0;
const FINAL_DSOC: f64 = 0.05;
const FINAL_DTAU: f64 = 1.0;
const BALANCING_TIME_S: f64 = 60.0;
const REWARD_STEPS: usize = 10_000;
const GRAD_CASES: usize = 20;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
const GRAD_TIME_S: f64 = 10.0;
const RECEDING_REL_TOL: f64 = 1e-6;

struct Line {
    id: usize,
    pass: bool,
    text: String,
}

fn check(id: usize, name: &str, f: impl FnOnce() -> Result<(bool, String), String>) -> Line {
    let t0 = Instant::now();
    let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => (false, format!("error: {e}")),
        Err(_) => (false, "panicked".into()),
    };
    let text = format!(
        "criterion {id:>2} {} {name}: {detail} [{:.1} s]",
        if pass { "PASS" } else { "FAIL" },
        t0.elapsed().as_secs_f64()
    );
    println!("{text}");
    Line { id, pass, text }
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Synthetic environment over `days` days with one extra day of lookahead.
fn week_env(days: usize, seed: u64, init: [(f64, f64); 2], horizon: usize) -> (Env, ObjectiveWeights) {
    let series = synth_profiles(days + 1, seed).unwrap();
    let tariff = Tariff::from_series(&series, DEFAULT_SELL_PRICE, 0.0).unwrap();
    let base = baseline_cost_series(&series, &tariff).unwrap();
    let w = ObjectiveWeights::normalized(&base, 2, horizon).unwrap();
    let init = init.iter().map(|&(soc, temperature)| StringState { soc, temperature }).collect();
    let mut env = Env::new(series, tariff, StringSpec::default_pair(), w, init).unwrap();
    env.set_window(0, days * STEPS_PER_DAY).unwrap();
    (env, w)
}

fn c1_lp_oracle() -> Result<(bool, String), String> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for case in 0..LP_CASES {
        let d = vertex::random_lp(&mut rng, 6, 6);
        let oracle = vertex::vertex_minimum(&d).ok_or(format!("case {case}: oracle found no vertex"))?;
        let p = LpProblem::from_dense(&d.c, &d.a_eq, &d.b_eq, &d.a_ub, &d.b_ub, &d.lower, &d.upper).map_err(s)?;
        let sol = solve(&p, &SolverOptions::default()).map_err(s)?;
        if sol.status != LpStatus::Optimal {
            return Ok((false, format!("case {case}: status {:?}", sol.status)));
        }
        worst = worst.max((sol.objective - oracle).abs() / oracle.abs().max(1.0));
    }
    let secs = t0.elapsed().as_secs_f64();
    Ok((
        worst <= LP_REL_TOL && secs < LP_TIME_S,
        format!("{LP_CASES} LPs, max relative error {worst:.2e} (tol {LP_REL_TOL:.0e}), {secs:.2} s (limit {LP_TIME_S} s)"),
    ))
}

/// Full power, switching direction every six hours.
struct BangBang;

impl Controller for BangBang {
    fn name(&self) -> &str {
        "bang-bang"
    }

    fn act(&mut self, env: &Env) -> bess_split::Result<Vec<f64>> {
        let sign = if (env.t() / 24).is_multiple_of(2) { 1.0 } else { -1.0 };
        Ok(env.specs().iter().map(|s| sign * s.power_rating).collect())
    }
}

fn c2_energy_balance() -> Result<(bool, String), String> {
    let specs = StringSpec::default_pair();
    let (mut bal, mut energy) = (0.0f64, 0.0f64);
    let mut steps = 0;
    let controllers: [Box<dyn Controller>; 2] = [Box::new(RandomController::new(2)), Box::new(BangBang)];
    for mut c in controllers {
        let (mut env, _) = week_env(7, 2, [(0.5, 25.0), (0.5, 25.0)], 96);
        let traj = env.run_episode(c.as_mut()).map_err(s)?;
        let mut prev: Vec<f64> = traj.initial.iter().map(|s| s.soc).collect();
        for st in &traj.steps {
            let sum_p: f64 = st.strings.iter().map(|r| r.applied).sum();
            bal = bal.max((st.grid_power - (st.load - st.pv + sum_p)).abs());
            for (m, r) in st.strings.iter().enumerate() {
                let spec = &specs[m];
                let ocv = ocv_from_soc(prev[m], &spec.ocv).map_err(s)?;
                let stored = (r.soc - prev[m]) * spec.n_cells as f64 * spec.cell_capacity * ocv / 1000.0;
                let delivered = (r.applied - r.p_inv_loss - r.p_cell_loss) * STEP_HOURS;
                energy = energy.max((stored - delivered).abs());
                prev[m] = r.soc;
            }
            steps += 1;
        }
    }
    Ok((
        bal < BALANCE_TOL_KW && energy < ENERGY_TOL_KWH,
        format!(
            "{steps} steps (random, bang-bang): max balance residual {bal:.1e} kW (tol {BALANCE_TOL_KW:.0e}), \
             max energy residual {energy:.1e} kWh (tol {ENERGY_TOL_KWH:.0e})"
        ),
    ))
}

fn lp_savings(env: &mut Env, w: ObjectiveWeights, mode: ForecastMode) -> Result<f64, String> {
    let mut c = LpController::new(env.specs(), w, ACCEPTANCE_HORIZON, mode).map_err(s)?;
    let traj = env.run_episode(&mut c).map_err(s)?;
    if c.summary().fallbacks > 0 {
        return Err(format!("{} LP fallbacks", c.summary().fallbacks));
    }
    savings(&traj.costs(), &traj.baseline_costs()).map_err(s)
}

fn c3_forecast_ordering() -> Result<(bool, String), String> {
    let t0 = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in ORDERING_WEEKS {
        let (mut env, w) = week_env(7, seed, [(0.5, 25.0), (0.5, 25.0)], ACCEPTANCE_HORIZON);
        let p = lp_savings(&mut env, w, ForecastMode::Perfect)?;
        let f = lp_savings(&mut env, w, ForecastMode::Persistence)?;
        ok &= p >= f - ORDERING_TOL_EUR;
        parts.push(format!("week {seed}: {p:.2} >= {f:.2}"));
    }
    let secs = t0.elapsed().as_secs_f64();
    Ok((
        ok && secs < ORDERING_TIME_S,
        format!("savings LP perfect vs persistence, H={ACCEPTANCE_HORIZON}: {}; {secs:.0} s (limit {ORDERING_TIME_S} s)", parts.join(", ")),
    ))
}

fn c4_balancing() -> Result<(bool, String), String> {
    let t0 = Instant::now();
    let cfg = ScenarioConfig {
        controller: ControllerKind::LpPerfect,
        horizon: ACCEPTANCE_HORIZON,
        seed: 4,
        ..ScenarioConfig::short_term()
    };
    let init = cfg.initial_states();
    let soc0 = deviation_sum(&init.iter().map(|s| s.soc).collect::<Vec<_>>());
    let tau0 = deviation_sum(&init.iter().map(|s| s.temperature).collect::<Vec<_>>());
    let r = execute(&cfg).map_err(s)?;
    let w = r.meta.weights;
    let dsoc = *r.metrics.delta_soc.last().ok_or("empty run")?;
    let dtau = *r.metrics.delta_tau.last().ok_or("empty run")?;
    let secs = t0.elapsed().as_secs_f64();
    let ok = (soc0 - 0.4).abs() < 1e-12
        && (tau0 - 10.0).abs() < 1e-12
        && w.y > 0.0
        && w.z > 0.0
        && dsoc < FINAL_DSOC
        && dtau < FINAL_DTAU
        && secs < BALANCING_TIME_S;
    Ok((
        ok,
        format!(
            "dSOC {soc0:.2} -> {dsoc:.4} (limit {FINAL_DSOC}), dtau {tau0:.1} -> {dtau:.3} C (limit {FINAL_DTAU}), \
             y={:.2e} z={:.2e}, {secs:.0} s (limit {BALANCING_TIME_S} s)",
            w.y, w.z
        ),
    ))
}

fn c5_reward() -> Result<(bool, String), String> {
    let days = REWARD_STEPS.div_ceil(STEPS_PER_DAY);
    let (mut env, w) = week_env(days, 5, [(0.7, 35.0), (0.3, 25.0)], 96);
    env.set_window(0, REWARD_STEPS).map_err(s)?;
    env.reset();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut mismatches, mut dev_err) = (0usize, 0.0f64);
    for _ in 0..REWARD_STEPS {
        let a: Vec<f64> = env.specs().iter().map(|sp| rng.gen_range(-1.2..1.2) * sp.power_rating).collect();
        let tr = env.step(&a).map_err(s)?;
        let i = &tr.info;
        let r = w.x * (i.baseline_cost - i.cost) - w.y * i.delta_soc - w.z * i.delta_tau;
        if r.to_bits() != tr.reward.to_bits() {
            mismatches += 1;
        }
        let (s1, s2) = (tr.state.soc[0], tr.state.soc[1]);
        let (t1, t2) = (tr.state.temperature[0], tr.state.temperature[1]);
        dev_err = dev_err.max((i.delta_soc - (s1 - s2).abs()).abs()).max((i.delta_tau - (t1 - t2).abs()).abs());
    }
    Ok((
        mismatches == 0 && dev_err < 1e-12,
        format!("{REWARD_STEPS} random steps: {mismatches} bitwise mismatches, imbalance terms within {dev_err:.1e}"),
    ))
}

fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6)
}

fn fd_worst(f: impl Fn(&[f64]) -> f64, x: &[f64], g: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
        xp[i] += GRAD_STEP;
        xm[i] -= GRAD_STEP;
        worst = worst.max(rel_err((f(&xp) - f(&xm)) / (2.0 * GRAD_STEP), g[i]));
    }
    worst
}

fn c6_gradients() -> Result<(bool, String), String> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut bc_worst, mut ppo_worst) = (0.0f64, 0.0f64);
    let coefs = PpoCoefficients { clip: 0.2, value_coef: 0.5, entropy_coef: 0.01 };
    for _ in 0..GRAD_CASES {
        let mut policy = MlpPolicy::new(2, &[2], 2, 0.0, &mut rng).map_err(s)?;
        let mut params: Vec<f64> = (0..policy.num_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = params.len();
        params[n - 2] = rng.gen_range(-1.0..0.0);
        params[n - 1] = rng.gen_range(-1.0..0.0);
        policy.set_params(&params).map_err(s)?;
        let mut value = value_network(2, &[2], &mut rng).map_err(s)?;
        value.params_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));

        let mut batch = PpoBatch::default();
        for _ in 0..8 {
            let st = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let (a, lp) = policy.sample(&st, &mut rng).map_err(s)?;
            batch.states.push(st);
            batch.actions.push(a);
            batch.old_log_probs.push(lp + rng.gen_range(-0.3..0.3));
            batch.advantages.push(rng.gen_range(-1.0..1.0));
            batch.returns.push(rng.gen_range(-1.0..1.0));
        }
        let targets: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();

        let (_, g) = bc_loss_grad(&policy, &batch.states, &targets).map_err(s)?;
        let f = |p: &[f64]| {
            let mut q = policy.clone();
            q.set_params(p).unwrap();
            bc_loss(&q, &batch.states, &targets).unwrap()
        };
        bc_worst = bc_worst.max(fd_worst(f, &params, &g));

        let (_, gp, gv) = ppo_loss_grad(&policy, &value, &batch, &coefs).map_err(s)?;
        let fp = |p: &[f64]| {
            let mut q = policy.clone();
            q.set_params(p).unwrap();
            ppo_loss(&q, &value, &batch, &coefs).unwrap().loss
        };
        ppo_worst = ppo_worst.max(fd_worst(fp, &params, &gp));
        let fv = |p: &[f64]| {
            let mut v = value.clone();
            v.params_mut().copy_from_slice(p);
            ppo_loss(&policy, &v, &batch, &coefs).unwrap().loss
        };
        ppo_worst = ppo_worst.max(fd_worst(fv, value.params(), &gv));
    }
    let secs = t0.elapsed().as_secs_f64();
    Ok((
        bc_worst < GRAD_REL_TOL && ppo_worst < GRAD_REL_TOL && secs < GRAD_TIME_S,
        format!(
            "{GRAD_CASES} 2-2-2 networks: max relative error BC {bc_worst:.1e}, PPO {ppo_worst:.1e} \
             (tol {GRAD_REL_TOL:.0e}, h={GRAD_STEP:.0e}), {secs:.2} s (limit {GRAD_TIME_S} s)"
        ),
    ))
}

fn c7_bc(trained: &mut Option<PolicyCheckpoint>) -> Result<(bool, String), String> {
    let (mut env, _) = week_env(7, 7, [(0.5, 25.0), (0.5, 25.0)], ACCEPTANCE_HORIZON);
    let (expert, traj) = collect_expert(&mut env, ACCEPTANCE_HORIZON).map_err(s)?;
    let expert_savings = savings(&traj.costs(), &traj.baseline_costs()).map_err(s)?;
    let cfg = TrainConfig { seed: 7, bc_epochs: 50, ..TrainConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx: Vec<usize> = (0..expert.len()).collect();
    idx.shuffle(&mut rng);
    let n_val = expert.len() / 10;
    let pick = |ids: &[usize]| ExpertSet {
        states: ids.iter().map(|&i| expert.states[i].clone()).collect(),
        actions: ids.iter().map(|&i| expert.actions[i].clone()).collect(),
    };
    let (val, train) = (pick(&idx[..n_val]), pick(&idx[n_val..]));
    let mut policy = MlpPolicy::new(7, &cfg.hidden, 2, cfg.initial_log_std, &mut rng).map_err(s)?;
    let curve = bc_train(&mut policy, &train, Some(&val), &cfg, &mut rng).map_err(s)?;
    let (v1, v50) = (curve.validation_loss[0], curve.validation_loss[49]);
    let bc_savings = evaluate_policy(&mut env, &policy, 0, 7 * STEPS_PER_DAY).map_err(s)?;
    *trained = Some(PolicyCheckpoint::new(&policy, *env.normalizer()));
    Ok((
        bc_savings > 0.0 && v50 < v1,
        format!(
            "BC on {} expert samples: rollout savings {bc_savings:.2} EUR (expert {expert_savings:.2}), \
             validation loss epoch 1 {v1:.4} -> epoch 50 {v50:.4}",
            expert.len()
        ),
    ))
}

fn c8_comparison(policy: Option<&PolicyCheckpoint>, earlier_pass: bool) -> Result<(bool, String), String> {
    let dir = tempfile::tempdir().map_err(s)?;
    let ckpt = dir.path().join("bc.json");
    policy.ok_or("no behaviour-cloned policy from criterion 7")?.save(&ckpt).map_err(s)?;
    let base = ScenarioConfig { horizon: ACCEPTANCE_HORIZON, seed: 8, policy: Some(ckpt), ..ScenarioConfig::long_term() };
    let mut reports = Vec::new();
    for c in [ControllerKind::LpPerfect, ControllerKind::LpPersist, ControllerKind::Bc] {
        let r = execute(&ScenarioConfig { controller: c, ..base.clone() }).map_err(s)?;
        reports.push(StoredReport::from_report(&r, c.as_str()));
    }
    let cmp = compare(&reports).map_err(s)?;
    let wanted = ["savings_eur", "mean_delta_soc", "mean_delta_tau_c", "efficiency_pct"];
    let mut parts = Vec::new();
    let mut ok = earlier_pass;
    for name in wanted {
        match cmp.rows.iter().find(|r| r.metric == name) {
            Some(row) if row.values.len() == 3 && row.values.iter().all(|v| v.is_finite()) => {
                let vals: Vec<String> = row.values.iter().map(|v| format!("{v:.3}")).collect();
                parts.push(format!("{name} [{}]", vals.join(", ")));
            }
            _ => ok = false,
        }
    }
    ok &= cmp.columns == ["lp-perfect", "lp-persist", "bc"];
    Ok((
        ok,
        format!(
            "30-day comparison ({}): {}; criteria 1-7 {}",
            cmp.columns.join(" / "),
            parts.join("; "),
            if earlier_pass { "pass" } else { "do not all pass" }
        ),
    ))
}

fn c9_determinism() -> Result<(bool, String), String> {
    let mut ok = true;
    let mut parts = Vec::new();
    for c in [ControllerKind::LpPersist, ControllerKind::Random] {
        let cfg = ScenarioConfig { controller: c, days: 2, horizon: ACCEPTANCE_HORIZON, seed: 9, ..ScenarioConfig::short_term() };
        let (a, b) = (tempfile::tempdir().map_err(s)?, tempfile::tempdir().map_err(s)?);
        run_scenario(&cfg, a.path()).map_err(s)?;
        run_scenario(&cfg, b.path()).map_err(s)?;
        let fa = std::fs::read(a.path().join("trajectory.csv")).map_err(s)?;
        let fb = std::fs::read(b.path().join("trajectory.csv")).map_err(s)?;
        ok &= fa == fb && !fa.is_empty();
        parts.push(format!("{} {} bytes {}", c.as_str(), fa.len(), if fa == fb { "identical" } else { "differ" }));
    }
    Ok((ok, parts.join(", ")))
}

fn c10_receding() -> Result<(bool, String), String> {
    let series = synth_profiles(2, 10).map_err(s)?;
    let tariff = Tariff::from_series(&series, DEFAULT_SELL_PRICE, 0.0).map_err(s)?;
    let base = baseline_cost_series(&series, &tariff).map_err(s)?;
    let w = ObjectiveWeights::normalized(&base, 2, series.len()).map_err(s)?;
    let specs = StringSpec::default_pair();
    let models: Vec<LpStringModel> =
        specs.iter().map(|sp| LpStringModel::calibrate(sp, STEP_HOURS)).collect::<Result<_, _>>().map_err(s)?;
    let init = [StringState { soc: 0.7, temperature: 35.0 }, StringState { soc: 0.3, temperature: 25.0 }];
    let c = receding_horizon_check(&init, &models, &tariff, &series, &w, &SolverOptions::default()).map_err(s)?;
    let rel = (c.rolling_objective - c.single_shot_objective).abs() / c.single_shot_objective.abs().max(1e-12);
    Ok((
        rel < RECEDING_REL_TOL,
        format!(
            "{} solves: rolling {:.9} vs single-shot {:.9}, relative gap {rel:.1e} (tol {RECEDING_REL_TOL:.0e})",
            c.solves, c.rolling_objective, c.single_shot_objective
        ),
    ))
}

fn main() {
    let mut lines = Vec::new();
    let mut trained = None;
    lines.push(check(1, "LP oracle equivalence", c1_lp_oracle));
    lines.push(check(2, "energy balance", c2_energy_balance));
    lines.push(check(3, "forecast ordering", c3_forecast_ordering));
    lines.push(check(4, "balancing behaviour", c4_balancing));
    lines.push(check(5, "reward reconstruction", c5_reward));
    lines.push(check(6, "gradient oracle", c6_gradients));
    lines.push(check(7, "behaviour cloning sanity", || c7_bc(&mut trained)));
    let earlier = lines.iter().all(|l| l.pass);
    lines.push(check(8, "comparison pipeline", || c8_comparison(trained.as_ref(), earlier)));
    lines.push(check(9, "determinism", c9_determinism));
    lines.push(check(10, "receding-horizon consistency", c10_receding));

    let failed: Vec<&Line> = lines.iter().filter(|l| !l.pass).collect();
    println!("acceptance: {}/{} criteria pass", lines.len() - failed.len(), lines.len());
    if !failed.is_empty() {
        for l in &failed {
            eprintln!("failed criterion {}: {}", l.id, l.text);
        }
        std::process::exit(1);
    }
}
