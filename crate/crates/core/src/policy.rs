//! Neural controller trained by behaviour cloning from LP dispatch and then
//! fine-tuned with clipped policy-gradient updates.
//!
//! The networks are small, so differentiation is written out by hand over
//! a flat parameter vector. Each layer stores its weights row-major
//! (`outputs × inputs`) followed by its biases.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dispatcher::LpController;
use crate::env::{action_to_power, power_to_action, Controller, Env, ObsNormalizer, Trajectory};
use crate::forecast::ForecastMode;
use crate::metrics::savings;
use crate::{Error, Result, STEPS_PER_DAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    fn slope(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected network with a shared hidden activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self { sizes: sizes.to_vec(), hidden, output, params: vec![0.0; Self::count(sizes)] })
    }

    /// Uniform `±1/√fan_in` initialisation; the last layer is further
    /// scaled by `output_gain`.
    pub fn init<R: Rng>(sizes: &[usize], hidden: Activation, output: Activation, output_gain: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden, output)?;
        let layers = sizes.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            let gain = if l + 1 == layers { output_gain } else { 1.0 };
            for w in &mut net.params[off..off + n_in * n_out] {
                *w = gain * rng.gen_range(-bound..bound);
            }
            off += n_in * n_out + n_out;
        }
        Ok(net)
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Config(format!("network expects {} inputs, got {}", self.input_dim(), x.len())));
        }
        Ok(self.trace(x).pop().unwrap_or_default())
    }

    /// Activations of every layer, input first.
    fn trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let act = if l + 1 == layers { self.output } else { self.hidden };
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &acts[l];
            let out: Vec<f64> = (0..n_out)
                .map(|i| {
                    let row = &w[i * n_in..(i + 1) * n_in];
                    act.apply(b[i] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>())
                })
                .collect();
            off += n_in * n_out + n_out;
            acts.push(out);
        }
        acts
    }

    /// Accumulates `∂loss/∂params` into `grad` given `∂loss/∂output`.
    fn backward(&self, acts: &[Vec<f64>], grad_out: &[f64], grad: &mut [f64]) {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut g = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let act = if l + 1 == layers { self.output } else { self.hidden };
            let off = offsets[l];
            let (x, y) = (&acts[l], &acts[l + 1]);
            let dz: Vec<f64> = (0..n_out).map(|i| g[i] * act.slope(y[i])).collect();
            for i in 0..n_out {
                if dz[i] == 0.0 {
                    continue;
                }
                let row = &mut grad[off + i * n_in..off + (i + 1) * n_in];
                for (r, xj) in row.iter_mut().zip(x) {
                    *r += dz[i] * xj;
                }
                grad[off + n_in * n_out + i] += dz[i];
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                g = (0..n_in).map(|j| (0..n_out).map(|i| w[i * n_in + j] * dz[i]).sum()).collect();
            }
        }
    }
}

/// Gaussian policy: a tanh-bounded mean network plus a state-independent
/// log standard deviation per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpPolicy {
    pub mean: Mlp,
    pub log_std: Vec<f64>,
}

impl MlpPolicy {
    pub fn new<R: Rng>(inputs: usize, hidden: &[usize], actions: usize, log_std: f64, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![inputs];
        sizes.extend(hidden);
        sizes.push(actions);
        Ok(Self {
            mean: Mlp::init(&sizes, Activation::Relu, Activation::Tanh, 0.01, rng)?,
            log_std: vec![log_std; actions],
        })
    }

    pub fn from_parts(mean: Mlp, log_std: Vec<f64>) -> Result<Self> {
        if mean.output_dim() != log_std.len() {
            return Err(Error::Config("log-std length differs from the action dimension".into()));
        }
        Ok(Self { mean, log_std })
    }

    pub fn state_dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    /// Mean action and log standard deviation.
    pub fn forward(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.mean.forward(state)?, self.log_std.clone()))
    }

    /// Mean-network parameters followed by the log standard deviations.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.mean.params().to_vec();
        p.extend(&self.log_std);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let n = self.mean.num_params();
        if p.len() != n + self.log_std.len() {
            return Err(Error::Config(format!("expected {} parameters, got {}", n + self.log_std.len(), p.len())));
        }
        self.mean.params_mut().copy_from_slice(&p[..n]);
        self.log_std.copy_from_slice(&p[n..]);
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.mean.num_params() + self.log_std.len()
    }

    pub fn is_finite(&self) -> bool {
        self.mean.params().iter().chain(&self.log_std).all(|v| v.is_finite())
    }

    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let (mu, ls) = self.forward(state)?;
        Ok(gaussian_log_prob(&mu, &ls, action))
    }

    /// Draws `μ + σ·ε` and returns it with its log density.
    pub fn sample<R: Rng>(&self, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let (mu, ls) = self.forward(state)?;
        let a: Vec<f64> = mu
            .iter()
            .zip(&ls)
            .map(|(m, l)| m + l.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let lp = gaussian_log_prob(&mu, &ls, &a);
        Ok((a, lp))
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|l| l + 0.5 * (1.0 + (2.0 * PI).ln())).sum()
    }
}

/// Log density of a diagonal Gaussian.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, l), a)| {
            let z = (a - m) / l.exp();
            -0.5 * z * z - l - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// State-value network with a linear output.
pub fn value_network<R: Rng>(inputs: usize, hidden: &[usize], rng: &mut R) -> Result<Mlp> {
    let mut sizes = vec![inputs];
    sizes.extend(hidden);
    sizes.push(1);
    Mlp::init(&sizes, Activation::Relu, Activation::Identity, 1.0, rng)
}

/// Normalised states and expert actions in [−1, 1].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpertSet {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl ExpertSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            states: idx.iter().map(|&i| self.states[i].clone()).collect(),
            actions: idx.iter().map(|&i| self.actions[i].clone()).collect(),
        }
    }
}

/// Mean squared error between policy means and target actions.
pub fn bc_loss(policy: &MlpPolicy, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<f64> {
    bc_eval(policy, states, actions, false).map(|(l, _)| l)
}

/// BC loss and its gradient in [`MlpPolicy::params`] layout.
pub fn bc_loss_grad(policy: &MlpPolicy, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    bc_eval(policy, states, actions, true)
}

fn bc_eval(policy: &MlpPolicy, states: &[Vec<f64>], actions: &[Vec<f64>], with_grad: bool) -> Result<(f64, Vec<f64>)> {
    if states.is_empty() || states.len() != actions.len() {
        return Err(Error::Training(format!("{} states for {} actions", states.len(), actions.len())));
    }
    let a_dim = policy.action_dim();
    let scale = 1.0 / (states.len() * a_dim) as f64;
    let mut grad = if with_grad { vec![0.0; policy.num_params()] } else { Vec::new() };
    let mut loss = 0.0;
    for (s, a) in states.iter().zip(actions) {
        if s.len() != policy.state_dim() || a.len() != a_dim {
            return Err(Error::Config("sample dimensions do not match the policy".into()));
        }
        let acts = policy.mean.trace(s);
        let mu = &acts[acts.len() - 1];
        let diff: Vec<f64> = mu.iter().zip(a).map(|(m, t)| m - t).collect();
        loss += diff.iter().map(|d| d * d).sum::<f64>() * scale;
        if with_grad {
            let g_out: Vec<f64> = diff.iter().map(|d| 2.0 * d * scale).collect();
            policy.mean.backward(&acts, &g_out, &mut grad);
        }
    }
    Ok((loss, grad))
}

/// One batch of on-policy experience with advantage estimates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PpoBatch {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            states: idx.iter().map(|&i| self.states[i].clone()).collect(),
            actions: idx.iter().map(|&i| self.actions[i].clone()).collect(),
            old_log_probs: idx.iter().map(|&i| self.old_log_probs[i]).collect(),
            advantages: idx.iter().map(|&i| self.advantages[i]).collect(),
            returns: idx.iter().map(|&i| self.returns[i]).collect(),
        }
    }
}

/// Components of the PPO loss on one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoTerms {
    /// `−surrogate + c_v·value_loss − c_e·entropy`, minimised.
    pub loss: f64,
    /// Mean of `min(ρ·Â, clip(ρ)·Â)`.
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoCoefficients {
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

pub fn ppo_loss(policy: &MlpPolicy, value: &Mlp, batch: &PpoBatch, c: &PpoCoefficients) -> Result<PpoTerms> {
    ppo_eval(policy, value, batch, c, false).map(|r| r.0)
}

/// PPO loss with gradients for the policy ([`MlpPolicy::params`] layout)
/// and the value network.
pub fn ppo_loss_grad(policy: &MlpPolicy, value: &Mlp, batch: &PpoBatch, c: &PpoCoefficients) -> Result<(PpoTerms, Vec<f64>, Vec<f64>)> {
    ppo_eval(policy, value, batch, c, true)
}

fn ppo_eval(
    policy: &MlpPolicy,
    value: &Mlp,
    batch: &PpoBatch,
    c: &PpoCoefficients,
    with_grad: bool,
) -> Result<(PpoTerms, Vec<f64>, Vec<f64>)> {
    let n = batch.len();
    if n == 0
        || batch.actions.len() != n
        || batch.old_log_probs.len() != n
        || batch.advantages.len() != n
        || batch.returns.len() != n
    {
        return Err(Error::Training("inconsistent PPO batch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let n_mean = policy.mean.num_params();
    let mut gp = if with_grad { vec![0.0; policy.num_params()] } else { Vec::new() };
    let mut gv = if with_grad { vec![0.0; value.num_params()] } else { Vec::new() };
    let (mut surr, mut vloss, mut clipped, mut kl) = (0.0, 0.0, 0usize, 0.0);
    let sigma: Vec<f64> = policy.log_std.iter().map(|l| l.exp()).collect();

    for k in 0..n {
        let (s, a, adv) = (&batch.states[k], &batch.actions[k], batch.advantages[k]);
        let acts = policy.mean.trace(s);
        let mu = &acts[acts.len() - 1];
        let lp = gaussian_log_prob(mu, &policy.log_std, a);
        let log_ratio = lp - batch.old_log_probs[k];
        let ratio = log_ratio.exp();
        let unclipped = ratio * adv;
        let bounded = ratio.clamp(1.0 - c.clip, 1.0 + c.clip) * adv;
        let active = unclipped <= bounded;
        surr += unclipped.min(bounded) * inv_n;
        if !active {
            clipped += 1;
        }
        kl += ((ratio - 1.0) - log_ratio) * inv_n;

        let v_acts = value.trace(s);
        let v = v_acts[v_acts.len() - 1][0];
        let err = v - batch.returns[k];
        vloss += err * err * inv_n;

        if with_grad {
            if active {
                // d(−ρÂ/n)/d log π
                let w = -ratio * adv * inv_n;
                let g_mu: Vec<f64> = (0..mu.len()).map(|i| w * (a[i] - mu[i]) / (sigma[i] * sigma[i])).collect();
                policy.mean.backward(&acts, &g_mu, &mut gp[..n_mean]);
                for i in 0..mu.len() {
                    let z = (a[i] - mu[i]) / sigma[i];
                    gp[n_mean + i] += w * (z * z - 1.0);
                }
            }
            value.backward(&v_acts, &[2.0 * c.value_coef * err * inv_n], &mut gv);
        }
    }
    let entropy = policy.entropy();
    if with_grad {
        for g in &mut gp[n_mean..] {
            *g -= c.entropy_coef;
        }
    }
    let loss = -surr + c.value_coef * vloss - c.entropy_coef * entropy;
    let terms = PpoTerms {
        loss,
        surrogate: surr,
        value_loss: vloss,
        entropy,
        clip_fraction: clipped as f64 * inv_n,
        approx_kl: kl,
    };
    if !loss.is_finite() || gp.iter().chain(&gv).any(|g| !g.is_finite()) {
        return Err(Error::Training(format!("non-finite PPO loss or gradient ({terms:?})")));
    }
    Ok((terms, gp, gv))
}

/// Generalised advantage estimates and value targets for one episode;
/// `last_value` bootstraps the state after the final step.
pub fn gae(rewards: &[f64], values: &[f64], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Adam optimiser over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

fn clip_norm(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub initial_log_std: f64,
    /// LP horizon of the expert, steps.
    pub expert_horizon: usize,
    pub train_days: usize,
    pub validation_days: usize,
    pub bc_learning_rate: f64,
    pub bc_epochs: usize,
    /// Share of expert samples held out for the BC validation loss.
    pub bc_validation_fraction: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ppo_iterations: usize,
    pub ppo_epochs: usize,
    pub episodes_per_iteration: usize,
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            hidden: vec![64, 64],
            initial_log_std: -1.0,
            expert_horizon: 96,
            train_days: 7,
            validation_days: 7,
            bc_learning_rate: 1e-3,
            bc_epochs: 50,
            bc_validation_fraction: 0.1,
            batch_size: 64,
            learning_rate: 3e-4,
            ppo_iterations: 10,
            ppo_epochs: 4,
            episodes_per_iteration: 4,
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            entropy_coef: 0.0,
            value_coef: 0.5,
            max_grad_norm: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("training config: {m}")));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("GAE lambda must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.bc_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 || self.hidden.contains(&0) || self.expert_horizon == 0 {
            return bad("batch size, layer sizes and expert horizon must be positive");
        }
        if self.train_days == 0 || self.validation_days == 0 {
            return bad("training and validation ranges must be at least one day");
        }
        if !(0.0..1.0).contains(&self.bc_validation_fraction) {
            return bad("BC validation fraction must lie in [0, 1)");
        }
        if !(self.value_coef >= 0.0 && self.entropy_coef >= 0.0 && self.max_grad_norm > 0.0) {
            return bad("loss coefficients must be non-negative and the gradient bound positive");
        }
        Ok(())
    }

    fn coefficients(&self) -> PpoCoefficients {
        PpoCoefficients { clip: self.clip, value_coef: self.value_coef, entropy_coef: self.entropy_coef }
    }
}

/// Records normalised observations and normalised set points of an inner
/// controller.
struct Recorder<'a> {
    inner: &'a mut dyn Controller,
    normalizer: ObsNormalizer,
    set: ExpertSet,
}

impl Controller for Recorder<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn reset(&mut self) {
        self.inner.reset();
        self.set = ExpertSet::default();
    }

    fn act(&mut self, env: &Env) -> Result<Vec<f64>> {
        let p = self.inner.act(env)?;
        self.set.states.push(self.normalizer.normalize(&env.observation()));
        self.set.actions.push(power_to_action(&p, env.specs()));
        Ok(p)
    }
}

/// Runs the perfect-foresight LP over the environment's current window and
/// returns its state-action pairs together with the logged episode.
pub fn collect_expert(env: &mut Env, horizon: usize) -> Result<(ExpertSet, Trajectory)> {
    let mut lp = LpController::new(env.specs(), *env.weights(), horizon, ForecastMode::Perfect)?;
    let mut rec = Recorder { inner: &mut lp, normalizer: *env.normalizer(), set: ExpertSet::default() };
    let traj = env.run_episode(&mut rec)?;
    Ok((rec.set, traj))
}

/// Per-epoch losses of behaviour cloning. Entry `k` is measured after
/// epoch `k + 1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BcCurve {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
}

/// Minimises the BC loss with Adam over shuffled mini-batches.
pub fn bc_train(
    policy: &mut MlpPolicy,
    train: &ExpertSet,
    validation: Option<&ExpertSet>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BcCurve> {
    if train.is_empty() {
        return Err(Error::Training("behaviour cloning needs at least one expert sample".into()));
    }
    let n_mean = policy.mean.num_params();
    let mut opt = Adam::new(n_mean, cfg.bc_learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = BcCurve::default();
    for epoch in 1..=cfg.bc_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let b = train.subset(chunk);
            let (_, grad) = bc_loss_grad(policy, &b.states, &b.actions)?;
            opt.step(policy.mean.params_mut(), &grad[..n_mean]);
        }
        let loss = bc_loss(policy, &train.states, &train.actions)?;
        if !loss.is_finite() || !policy.is_finite() {
            return Err(Error::Training(format!(
                "behaviour cloning diverged at epoch {epoch} (loss {loss}, previous {:?})",
                curve.train_loss.last()
            )));
        }
        curve.train_loss.push(loss);
        if let Some(v) = validation.filter(|v| !v.is_empty()) {
            curve.validation_loss.push(bc_loss(policy, &v.states, &v.actions)?);
        }
    }
    Ok(curve)
}

/// Statistics of one PPO iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub mean_episode_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Optimiser state for the actor and the critic.
#[derive(Debug, Clone)]
pub struct PpoOptimizers {
    policy: Adam,
    value: Adam,
}

impl PpoOptimizers {
    pub fn new(policy: &MlpPolicy, value: &Mlp, lr: f64) -> Self {
        Self { policy: Adam::new(policy.num_params(), lr), value: Adam::new(value.num_params(), lr) }
    }
}

/// `cfg.ppo_epochs` passes of clipped-surrogate descent over `batch`, with
/// advantages normalised per mini-batch.
pub fn ppo_update(
    policy: &mut MlpPolicy,
    value: &mut Mlp,
    opt: &mut PpoOptimizers,
    batch: &PpoBatch,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PpoStats> {
    if batch.is_empty() {
        return Err(Error::Training("empty rollout batch".into()));
    }
    let coefs = cfg.coefficients();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = PpoStats::default();
    let mut count = 0.0;
    for _ in 0..cfg.ppo_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut mb = batch.subset(chunk);
            normalize_advantages(&mut mb.advantages);
            let (terms, mut gp, mut gv) = ppo_loss_grad(policy, value, &mb, &coefs)?;
            clip_norm(&mut gp, cfg.max_grad_norm);
            clip_norm(&mut gv, cfg.max_grad_norm);
            let mut p = policy.params();
            opt.policy.step(&mut p, &gp);
            policy.set_params(&p)?;
            opt.value.step(value.params_mut(), &gv);
            stats.policy_loss += -terms.surrogate;
            stats.value_loss += terms.value_loss;
            stats.entropy += terms.entropy;
            stats.clip_fraction += terms.clip_fraction;
            stats.approx_kl += terms.approx_kl;
            count += 1.0;
        }
    }
    if !policy.is_finite() {
        return Err(Error::Training("policy parameters became non-finite".into()));
    }
    stats.policy_loss /= count;
    stats.value_loss /= count;
    stats.entropy /= count;
    stats.clip_fraction /= count;
    stats.approx_kl /= count;
    Ok(stats)
}

fn normalize_advantages(adv: &mut [f64]) {
    if adv.len() < 2 {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}

/// Samples one episode per entry of `starts` (each `len` steps) under the
/// stochastic policy.
pub fn collect_rollouts(
    env: &mut Env,
    policy: &MlpPolicy,
    value: &Mlp,
    starts: &[usize],
    len: usize,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(PpoBatch, f64)> {
    let mut batch = PpoBatch::default();
    let mut total_reward = 0.0;
    for &start in starts {
        env.set_window(start, len)?;
        env.reset();
        let (mut rewards, mut values) = (Vec::new(), Vec::new());
        while !env.is_done() {
            let s = env.normalized_observation();
            let (a, lp) = policy.sample(&s, rng)?;
            values.push(value.forward(&s)?[0]);
            let tr = env.step(&action_to_power(&a, env.specs()))?;
            rewards.push(tr.reward);
            batch.states.push(s);
            batch.actions.push(a);
            batch.old_log_probs.push(lp);
        }
        let last = value.forward(&env.normalized_observation())?[0];
        let (adv, ret) = gae(&rewards, &values, last, cfg.gamma, cfg.gae_lambda);
        total_reward += rewards.iter().sum::<f64>();
        batch.advantages.extend(adv);
        batch.returns.extend(ret);
    }
    Ok((batch, total_reward / starts.len().max(1) as f64))
}

/// Applies the policy mean, mapped to set points.
#[derive(Debug, Clone)]
pub struct PolicyController {
    name: String,
    policy: MlpPolicy,
    normalizer: ObsNormalizer,
}

impl PolicyController {
    pub fn new(name: impl Into<String>, policy: MlpPolicy, normalizer: ObsNormalizer) -> Self {
        Self { name: name.into(), policy, normalizer }
    }

    pub fn policy(&self) -> &MlpPolicy {
        &self.policy
    }
}

impl Controller for PolicyController {
    fn name(&self) -> &str {
        &self.name
    }

    fn act(&mut self, env: &Env) -> Result<Vec<f64>> {
        let s = self.normalizer.normalize(&env.observation());
        let (mu, _) = self.policy.forward(&s)?;
        Ok(action_to_power(&mu, env.specs()))
    }
}

/// Savings of the deterministic policy over `[start, start + len)`.
pub fn evaluate_policy(env: &mut Env, policy: &MlpPolicy, start: usize, len: usize) -> Result<f64> {
    env.set_window(start, len)?;
    let mut c = PolicyController::new("eval", policy.clone(), *env.normalizer());
    let traj = env.run_episode(&mut c)?;
    savings(&traj.costs(), &traj.baseline_costs())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub expert_samples: usize,
    pub expert_savings: f64,
    pub bc: BcCurve,
    pub bc_validation_savings: f64,
    pub ppo: Vec<PpoIterationReport>,
    /// 0 is the behaviour-cloned policy, `k` the policy after PPO iteration `k`.
    pub best_iteration: usize,
    pub best_validation_savings: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoIterationReport {
    #[serde(flatten)]
    pub stats: PpoStats,
    pub validation_savings: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best policy by validation savings.
    pub policy: MlpPolicy,
    pub normalizer: ObsNormalizer,
    pub report: TrainReport,
}

/// Expert collection, behaviour cloning and PPO fine-tuning. The first
/// `train_days` of the environment's profile are used for training and the
/// following `validation_days` for model selection.
pub fn train_pipeline(env: &mut Env, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let days = env.profiles().len() / STEPS_PER_DAY;
    if days < 14 || days < cfg.train_days + cfg.validation_days {
        return Err(Error::Data(format!(
            "training needs at least max(14, {} + {}) days of data, found {days}",
            cfg.train_days, cfg.validation_days
        )));
    }
    let train_len = cfg.train_days * STEPS_PER_DAY;
    let (val_start, val_len) = (train_len, cfg.validation_days * STEPS_PER_DAY);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    env.set_window(0, train_len)?;
    let (expert, expert_traj) = collect_expert(env, cfg.expert_horizon)?;
    let mut idx: Vec<usize> = (0..expert.len()).collect();
    idx.shuffle(&mut rng);
    let n_val = (expert.len() as f64 * cfg.bc_validation_fraction).round() as usize;
    let (val_idx, train_idx) = idx.split_at(n_val);
    let bc_train_set = expert.subset(train_idx);
    let bc_val_set = expert.subset(val_idx);

    let state_dim = expert.states[0].len();
    let action_dim = env.specs().len();
    let mut policy = MlpPolicy::new(state_dim, &cfg.hidden, action_dim, cfg.initial_log_std, &mut rng)?;
    let mut value = value_network(state_dim, &cfg.hidden, &mut rng)?;
    let bc = bc_train(&mut policy, &bc_train_set, Some(&bc_val_set), cfg, &mut rng)?;
    let bc_savings = evaluate_policy(env, &policy, val_start, val_len)?;

    let mut report = TrainReport {
        seed: cfg.seed,
        expert_samples: expert.len(),
        expert_savings: savings(&expert_traj.costs(), &expert_traj.baseline_costs())?,
        bc,
        bc_validation_savings: bc_savings,
        ppo: Vec::new(),
        best_iteration: 0,
        best_validation_savings: bc_savings,
    };
    let mut best = policy.clone();
    let mut opt = PpoOptimizers::new(&policy, &value, cfg.learning_rate);
    for it in 1..=cfg.ppo_iterations {
        let starts: Vec<usize> = (0..cfg.episodes_per_iteration)
            .map(|_| rng.gen_range(0..cfg.train_days) * STEPS_PER_DAY)
            .collect();
        let (batch, mean_reward) = collect_rollouts(env, &policy, &value, &starts, STEPS_PER_DAY, cfg, &mut rng)?;
        let mut stats = ppo_update(&mut policy, &mut value, &mut opt, &batch, cfg, &mut rng)?;
        stats.mean_episode_reward = mean_reward;
        let val = evaluate_policy(env, &policy, val_start, val_len)?;
        log::info!("ppo iteration {it}: reward {mean_reward:.5}, validation savings {val:.2}");
        if val > report.best_validation_savings {
            report.best_validation_savings = val;
            report.best_iteration = it;
            best = policy.clone();
        }
        report.ppo.push(PpoIterationReport { stats, validation_savings: val });
    }
    Ok(TrainOutcome { policy: best, normalizer: *env.normalizer(), report })
}

/// On-disk layout of a trained policy.
///
/// Layer `k` maps `inputs` to `outputs` values as
/// `y = act(W·x + b)` with `weights` stored row-major (`outputs × inputs`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format: String,
    pub version: u32,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub layers: Vec<LayerCheckpoint>,
    pub log_std: Vec<f64>,
    pub normalizer: ObsNormalizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

const CHECKPOINT_FORMAT: &str = "bess-split-policy";
const CHECKPOINT_VERSION: u32 = 1;

impl PolicyCheckpoint {
    pub fn new(policy: &MlpPolicy, normalizer: ObsNormalizer) -> Self {
        let sizes = policy.mean.sizes();
        let p = policy.mean.params();
        let mut off = 0;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                let l = LayerCheckpoint {
                    inputs: i,
                    outputs: o,
                    weights: p[off..off + i * o].to_vec(),
                    bias: p[off + i * o..off + i * o + o].to_vec(),
                };
                off += i * o + o;
                l
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            hidden_activation: policy.mean.hidden_activation(),
            output_activation: policy.mean.output_activation(),
            layers,
            log_std: policy.log_std.clone(),
            normalizer,
        }
    }

    pub fn into_policy(self) -> Result<(MlpPolicy, ObsNormalizer)> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("checkpoint has no layers".into()));
        }
        let mut sizes = vec![self.layers[0].inputs];
        let mut params = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            if l.inputs != sizes[k] || l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Config(format!("checkpoint layer {k} has inconsistent shapes")));
            }
            sizes.push(l.outputs);
            params.extend(&l.weights);
            params.extend(&l.bias);
        }
        let mut mean = Mlp::zeros(&sizes, self.hidden_activation, self.output_activation)?;
        mean.params_mut().copy_from_slice(&params);
        let policy = MlpPolicy::from_parts(mean, self.log_std)?;
        if !policy.is_finite() {
            return Err(Error::Config("checkpoint contains non-finite parameters".into()));
        }
        Ok((policy, self.normalizer))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Data(format!("checkpoint: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_policy(seed: u64) -> MlpPolicy {
        let mut r = rng(seed);
        let mut p = MlpPolicy::new(2, &[2], 2, -0.3, &mut r).unwrap();
        let params: Vec<f64> = (0..p.num_params()).map(|_| r.gen_range(-1.0..1.0)).collect();
        p.set_params(&params).unwrap();
        p
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[7, 64, 64, 2], Activation::Relu, Activation::Tanh).unwrap();
        assert_eq!(net.forward(&[0.3; 7]).unwrap(), vec![0.0, 0.0]);
        assert!(net.forward(&[0.3; 6]).is_err());
    }

    #[test]
    fn hand_computed_forward_pass() {
        let mut net = Mlp::zeros(&[2, 2, 2], Activation::Relu, Activation::Tanh).unwrap();
        // W1 = [[1, -2], [0.5, 1]], b1 = [0.1, -3]; W2 = [[1, 2], [-1, 0.5]], b2 = [0, 0.2]
        net.params_mut()
            .copy_from_slice(&[1.0, -2.0, 0.5, 1.0, 0.1, -3.0, 1.0, 2.0, -1.0, 0.5, 0.0, 0.2]);
        let x = [1.5, 0.25];
        let h = [(1.5f64 - 0.5 + 0.1).max(0.0), (0.75f64 + 0.25 - 3.0).max(0.0)];
        let y = [(h[0] + 2.0 * h[1]).tanh(), (-h[0] + 0.5 * h[1] + 0.2).tanh()];
        assert_eq!(net.forward(&x).unwrap(), y.to_vec());
    }

    #[test]
    fn outputs_are_bounded() {
        let mut r = rng(1);
        let p = MlpPolicy::new(7, &[64, 64], 2, 0.0, &mut r).unwrap();
        let mut big = p.clone();
        let params: Vec<f64> = p.params().iter().map(|v| v * 1e3).collect();
        big.set_params(&params).unwrap();
        for _ in 0..50 {
            let s: Vec<f64> = (0..7).map(|_| r.gen_range(-5.0..5.0)).collect();
            for m in big.forward(&s).unwrap().0 {
                assert!((-1.0..=1.0).contains(&m));
            }
        }
    }

    #[test]
    fn log_prob_matches_closed_form() {
        let lp = gaussian_log_prob(&[0.0], &[0.0], &[0.0]);
        assert!((lp + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        let lp = gaussian_log_prob(&[1.0, 0.0], &[2f64.ln(), 0.0], &[2.0, 1.0]);
        let by_hand = -0.5 * 0.25 - 2f64.ln() - 0.5 - (2.0 * PI).ln();
        assert!((lp - by_hand).abs() < 1e-14);
    }

    #[test]
    fn gae_reduces_to_discounted_returns_at_lambda_one() {
        let r = [1.0, 0.0, 2.0];
        let v = [0.5, 0.2, 0.1];
        let (adv, ret) = gae(&r, &v, 0.0, 0.9, 1.0);
        let g2 = 2.0;
        let g1 = 0.0 + 0.9 * g2;
        let g0 = 1.0 + 0.9 * g1;
        for (got, want) in ret.iter().zip([g0, g1, g2]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((adv[0] - (g0 - 0.5)).abs() < 1e-12);
        let (adv0, _) = gae(&r, &v, 0.3, 0.9, 0.0);
        assert!((adv0[2] - (2.0 + 0.9 * 0.3 - 0.1)).abs() < 1e-12);
    }

    fn fd_check(f: impl Fn(&[f64]) -> f64, x: &[f64], g: &[f64]) {
        let h = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: fd {fd} analytic {}", g[i]);
        }
    }

    #[test]
    fn bc_gradient_matches_finite_differences() {
        let mut r = rng(2);
        let policy = small_policy(3);
        let states: Vec<Vec<f64>> = (0..8).map(|_| vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).collect();
        let actions: Vec<Vec<f64>> = (0..8).map(|_| vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).collect();
        let (_, g) = bc_loss_grad(&policy, &states, &actions).unwrap();
        let f = |p: &[f64]| {
            let mut q = policy.clone();
            q.set_params(p).unwrap();
            bc_loss(&q, &states, &actions).unwrap()
        };
        fd_check(f, &policy.params(), &g);
    }

    fn random_batch(policy: &MlpPolicy, r: &mut ChaCha8Rng) -> PpoBatch {
        let mut b = PpoBatch::default();
        for _ in 0..8 {
            let s = vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
            let (a, lp) = policy.sample(&s, r).unwrap();
            b.states.push(s);
            b.actions.push(a);
            b.old_log_probs.push(lp + r.gen_range(-0.5..0.5));
            b.advantages.push(r.gen_range(-1.0..1.0));
            b.returns.push(r.gen_range(-1.0..1.0));
        }
        b
    }

    #[test]
    fn ppo_gradient_matches_finite_differences() {
        let mut r = rng(4);
        let policy = small_policy(5);
        let value = value_network(2, &[2], &mut r).unwrap();
        let batch = random_batch(&policy, &mut r);
        let c = PpoCoefficients { clip: 0.2, value_coef: 0.5, entropy_coef: 0.01 };
        let (_, gp, gv) = ppo_loss_grad(&policy, &value, &batch, &c).unwrap();
        let fp = |p: &[f64]| {
            let mut q = policy.clone();
            q.set_params(p).unwrap();
            ppo_loss(&q, &value, &batch, &c).unwrap().loss
        };
        fd_check(fp, &policy.params(), &gp);
        let fv = |p: &[f64]| {
            let mut v = value.clone();
            v.params_mut().copy_from_slice(p);
            ppo_loss(&policy, &v, &batch, &c).unwrap().loss
        };
        fd_check(fv, value.params(), &gv);
    }

    #[test]
    fn unit_ratio_gives_vanilla_policy_gradient() {
        let mut r = rng(6);
        let policy = small_policy(7);
        let value = value_network(2, &[2], &mut r).unwrap();
        let mut batch = random_batch(&policy, &mut r);
        for k in 0..batch.len() {
            batch.old_log_probs[k] = policy.log_prob(&batch.states[k], &batch.actions[k]).unwrap();
        }
        let c = PpoCoefficients { clip: 0.2, value_coef: 0.0, entropy_coef: 0.0 };
        let (terms, gp, _) = ppo_loss_grad(&policy, &value, &batch, &c).unwrap();
        assert_eq!(terms.clip_fraction, 0.0);
        // −(1/n) Σ Â ∇log π, differentiated numerically
        let f = |p: &[f64]| {
            let mut q = policy.clone();
            q.set_params(p).unwrap();
            -(0..batch.len())
                .map(|k| batch.advantages[k] * q.log_prob(&batch.states[k], &batch.actions[k]).unwrap())
                .sum::<f64>()
                / batch.len() as f64
        };
        fd_check(f, &policy.params(), &gp);
    }

    #[test]
    fn clipped_samples_contribute_no_gradient() {
        let mut r = rng(8);
        let policy = small_policy(9);
        let value = value_network(2, &[2], &mut r).unwrap();
        let s = vec![0.3, -0.2];
        let (a, lp) = policy.sample(&s, &mut r).unwrap();
        let batch = PpoBatch {
            states: vec![s],
            actions: vec![a],
            old_log_probs: vec![lp - 1.0],
            advantages: vec![1.0],
            returns: vec![0.0],
        };
        let c = PpoCoefficients { clip: 0.2, value_coef: 0.0, entropy_coef: 0.0 };
        let (terms, gp, _) = ppo_loss_grad(&policy, &value, &batch, &c).unwrap();
        assert_eq!(terms.clip_fraction, 1.0);
        assert!(gp.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn infinite_clip_equals_unclipped_objective() {
        let mut r = rng(10);
        let policy = small_policy(11);
        let value = value_network(2, &[2], &mut r).unwrap();
        let batch = random_batch(&policy, &mut r);
        let c = PpoCoefficients { clip: f64::INFINITY, value_coef: 0.0, entropy_coef: 0.0 };
        let t = ppo_loss(&policy, &value, &batch, &c).unwrap();
        let unclipped: f64 = (0..batch.len())
            .map(|k| {
                let lp = policy.log_prob(&batch.states[k], &batch.actions[k]).unwrap();
                (lp - batch.old_log_probs[k]).exp() * batch.advantages[k]
            })
            .sum::<f64>()
            / batch.len() as f64;
        assert!((t.surrogate - unclipped).abs() < 1e-12);
        assert_eq!(t.clip_fraction, 0.0);
    }

    fn cfg() -> TrainConfig {
        TrainConfig { hidden: vec![16, 16], batch_size: 8, ..TrainConfig::default() }
    }

    #[test]
    fn bc_overfits_a_single_pair() {
        let mut r = rng(12);
        let mut p = MlpPolicy::new(7, &[16, 16], 2, -1.0, &mut r).unwrap();
        let set = ExpertSet { states: vec![vec![0.2, 0.1, 0.5, 0.4, 0.3, 0.0, 0.6]], actions: vec![vec![0.7, -0.4]] };
        let c = TrainConfig { bc_epochs: 500, ..cfg() };
        let curve = bc_train(&mut p, &set, None, &c, &mut r).unwrap();
        assert!(*curve.train_loss.last().unwrap() < 1e-4, "{:?}", curve.train_loss.last());
    }

    #[test]
    fn bc_loss_is_non_increasing_early_and_zero_expert_gives_zero_mean() {
        let mut r = rng(13);
        let states: Vec<Vec<f64>> = (0..64).map(|_| (0..7).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let set = ExpertSet {
            actions: states.iter().map(|s| vec![(s[0] - s[2]).tanh() * 0.5, 0.3 * s[6]]).collect(),
            states: states.clone(),
        };
        let mut p = MlpPolicy::new(7, &[16, 16], 2, -1.0, &mut r).unwrap();
        let curve = bc_train(&mut p, &set, None, &TrainConfig { bc_epochs: 10, ..cfg() }, &mut r).unwrap();
        for w in curve.train_loss.windows(2) {
            assert!(w[1] <= w[0], "{:?}", curve.train_loss);
        }

        let zero = ExpertSet { actions: vec![vec![0.0, 0.0]; 64], states };
        let mut p = MlpPolicy::new(7, &[16, 16], 2, -1.0, &mut r).unwrap();
        // move the initial means well away from zero
        p.mean.params_mut().iter_mut().for_each(|v| *v *= 5.0);
        let n = p.mean.num_params();
        p.mean.params_mut()[n - 2..].copy_from_slice(&[0.8, -0.6]);
        let mut trained = p.clone();
        let before = bc_loss(&p, &zero.states, &zero.actions).unwrap();
        bc_train(&mut trained, &zero, None, &TrainConfig { bc_epochs: 300, ..cfg() }, &mut r).unwrap();
        let after = bc_loss(&trained, &zero.states, &zero.actions).unwrap();
        assert!(after < 0.1 * before && after < 1e-3, "{before} -> {after}");
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let run = |seed| {
            let mut r = rng(seed);
            let mut p = MlpPolicy::new(7, &[8], 2, -1.0, &mut r).unwrap();
            let mut v = value_network(7, &[8], &mut r).unwrap();
            let states: Vec<Vec<f64>> = (0..32).map(|_| (0..7).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
            let mut batch = PpoBatch::default();
            for s in states {
                let (a, lp) = p.sample(&s, &mut r).unwrap();
                batch.states.push(s);
                batch.actions.push(a);
                batch.old_log_probs.push(lp);
                batch.advantages.push(r.gen_range(-1.0..1.0));
                batch.returns.push(r.gen_range(-1.0..1.0));
            }
            let c = cfg();
            let mut opt = PpoOptimizers::new(&p, &v, c.learning_rate);
            ppo_update(&mut p, &mut v, &mut opt, &batch, &c, &mut r).unwrap();
            p.params()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut r = rng(14);
        let p = MlpPolicy::new(7, &[64, 64], 2, -0.7, &mut r).unwrap();
        let n = ObsNormalizer { power_scale: 125.0, price_min: 0.18, price_max: 0.38 };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        PolicyCheckpoint::new(&p, n).save(&path).unwrap();
        let (q, m) = PolicyCheckpoint::load(&path).unwrap().into_policy().unwrap();
        assert_eq!(q, p);
        assert_eq!(m, n);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { clip: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { gamma: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
    }
}
