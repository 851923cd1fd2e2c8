//! Actor-critic PPO over the forecasting MDP: Gaussian policy on the raw
//! action, clipped surrogate, return regression for the critic.

use serde::{Deserialize, Serialize};

use crate::env::Episode;
use crate::lstm::CellRecord;
use crate::numerics::{mean, sigmoid, softplus, AdamState, ParamSet, RngStream};
use crate::{Error, Result};

pub const HIDDEN_WIDTH: usize = 64;
/// Added to the softplus of the actor's scale head.
pub const SCALE_FLOOR: f64 = 1e-6;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Fully connected network with tanh hidden layers and a linear output layer.
/// Weights of layer `l` are row-major `sizes[l+1] x sizes[l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl ParamSet for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }
}

/// Layer inputs and pre-activations of one forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        Mlp {
            sizes: sizes.to_vec(),
            weights: sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect(),
            biases: sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Weights uniform in `+-1/sqrt(fan_in)`, the output layer further scaled by
    /// `out_scale`; biases zero.
    pub fn init(sizes: &[usize], out_scale: f64, rng: &mut RngStream) -> Self {
        let mut m = Self::zeros(sizes);
        let last = m.weights.len() - 1;
        for (l, w) in m.weights.iter_mut().enumerate() {
            let r = 1.0 / (sizes[l] as f64).sqrt() * if l == last { out_scale } else { 1.0 };
            w.iter_mut().for_each(|v| *v = rng.uniform_range(-r, r));
        }
        m
    }

    /// `[input -> 64 -> 64 -> outputs]`.
    pub fn standard(input: usize, outputs: usize, out_scale: f64, rng: &mut RngStream) -> Self {
        Self::init(&[input, HIDDEN_WIDTH, HIDDEN_WIDTH, outputs], out_scale, rng)
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if x.len() != self.input_size() {
            return Err(Error::Shape(format!(
                "MLP expects {} inputs, got {}",
                self.input_size(),
                x.len()
            )));
        }
        let layers = self.weights.len();
        let mut inputs = Vec::with_capacity(layers);
        let mut a = x.to_vec();
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.weights[l];
            let mut z: Vec<f64> = (0..n_out)
                .map(|r| self.biases[l][r] + w[r * n_in..(r + 1) * n_in].iter().zip(&a).map(|(p, q)| p * q).sum::<f64>())
                .collect();
            if l + 1 < layers {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            inputs.push(std::mem::replace(&mut a, z));
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite MLP output {a:?}")));
        }
        Ok((a, MlpCache { inputs }))
    }

    /// Gradients with respect to every tensor given `d_out = dL/d(output)`.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64]) -> Mlp {
        let mut grad = Mlp::zeros(&self.sizes);
        self.backward_into(cache, d_out, &mut grad);
        grad
    }

    /// Accumulates gradients into `grad`.
    pub fn backward_into(&self, cache: &MlpCache, d_out: &[f64], grad: &mut Mlp) {
        let mut delta = d_out.to_vec();
        for l in (0..self.weights.len()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &cache.inputs[l];
            let w = &self.weights[l];
            let mut d_in = vec![0.0; n_in];
            for r in 0..n_out {
                grad.biases[l][r] += delta[r];
                let row = r * n_in;
                for j in 0..n_in {
                    grad.weights[l][row + j] += delta[r] * input[j];
                    d_in[j] += w[row + j] * delta[r];
                }
            }
            if l > 0 {
                // inputs[l] is the tanh output of layer l-1
                for j in 0..n_in {
                    d_in[j] *= 1.0 - input[j] * input[j];
                }
            }
            delta = d_in;
        }
    }
}

/// Gaussian policy head: `a_var` is the scale (standard deviation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    pub a_mean: f64,
    pub a_var: f64,
    pub raw_scale: f64,
}

pub fn policy_from_output(out: &[f64]) -> PolicyOutput {
    PolicyOutput {
        a_mean: out[0],
        a_var: softplus(out[1]) + SCALE_FLOOR,
        raw_scale: out[1],
    }
}

pub fn actor_forward(actor: &Mlp, s: &[f64]) -> Result<PolicyOutput> {
    Ok(policy_from_output(&actor.forward(s)?))
}

pub fn critic_forward(critic: &Mlp, s: &[f64]) -> Result<f64> {
    Ok(critic.forward(s)?[0])
}

/// Log-density of `N(mean, scale^2)` at `a`.
pub fn gaussian_log_prob(a: f64, a_mean: f64, scale: f64) -> f64 {
    let z = (a - a_mean) / scale;
    -0.5 * z * z - scale.ln() - LN_SQRT_2PI
}

/// Log-density and its derivative with respect to the mean.
pub fn gaussian_log_prob_grad(a: f64, a_mean: f64, a_var: f64) -> Result<(f64, f64)> {
    if !(a_var > 0.0) {
        return Err(Error::Domain(format!("policy scale must be positive, got {a_var}")));
    }
    Ok((gaussian_log_prob(a, a_mean, a_var), (a - a_mean) / (a_var * a_var)))
}

/// Derivative of the log-density with respect to the scale.
pub fn gaussian_log_prob_dscale(a: f64, a_mean: f64, scale: f64) -> f64 {
    let d = a - a_mean;
    (d * d - scale * scale) / (scale * scale * scale)
}

/// Where the sampling distribution's spread comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exploration {
    /// The actor's own scale head.
    Actor,
    /// An externally chosen variance; sampling scale is its square root.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub s: Vec<f64>,
    pub a_raw: f64,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub logp_old: f64,
    pub done: bool,
    /// Scale the action was sampled with.
    pub sample_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub experiences: Vec<Experience>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.experiences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experiences.is_empty()
    }

    /// Mean of per-episode mean rewards.
    pub fn mean_episode_reward(&self) -> f64 {
        let mut means = Vec::new();
        let mut acc = Vec::new();
        for e in &self.experiences {
            acc.push(e.r);
            if e.done {
                means.push(mean(&acc));
                acc.clear();
            }
        }
        if !acc.is_empty() {
            means.push(mean(&acc));
        }
        mean(&means)
    }
}

/// Runs the actor over one episode per start index.
pub fn collect_rollout(
    records: &[CellRecord],
    starts: &[usize],
    horizon: usize,
    actor: &Mlp,
    exploration: Exploration,
    rng: &RngStream,
) -> Result<Trajectory> {
    if starts.is_empty() {
        return Err(Error::Domain("rollout needs at least one episode".into()));
    }
    if let Exploration::Fixed(v) = exploration {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("exploration variance must be positive, got {v}")));
        }
    }
    let mut experiences = Vec::with_capacity(starts.len() * horizon);
    for (e, &start) in starts.iter().enumerate() {
        let mut stream = rng.split(e as u64);
        let (mut ep, s0) = Episode::reset(records, start, horizon)?;
        let mut s = s0.to_vec();
        while !ep.is_done() {
            let pol = actor_forward(actor, &s)?;
            let scale = match exploration {
                Exploration::Actor => pol.a_var,
                Exploration::Fixed(v) => v.sqrt(),
            };
            let a_raw = stream.gaussian(pol.a_mean, scale)?;
            let out = ep.step(a_raw)?;
            experiences.push(Experience {
                s: std::mem::replace(&mut s, out.next_state.clone()),
                a_raw,
                r: out.reward,
                s_next: out.next_state,
                logp_old: gaussian_log_prob(a_raw, pol.a_mean, scale),
                done: out.done,
                sample_scale: scale,
            });
        }
    }
    Ok(Trajectory {
        experiences,
        returns: Vec::new(),
        advantages: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReturnMode {
    /// `U_k = sum_{i>=k} gamma^(i-k) r_i` within the episode.
    #[default]
    RewardToGo,
    /// `Q_k = r_k + sum_{i=1..k} gamma^(k-i) r_{k-i}` within the episode.
    PastSum,
}

/// Per-episode discounted sums of `rewards`, split at `done` flags.
pub fn discounted_returns(rewards: &[f64], done: &[bool], gamma: f64, mode: ReturnMode) -> Vec<f64> {
    discounted_returns_with_tail(rewards, done, None, gamma, mode)
}

/// As [`discounted_returns`], but a reward-to-go episode ending at step `j`
/// continues with the value `tail[j]` discounted from the step after `j`.
pub fn discounted_returns_with_tail(rewards: &[f64], done: &[bool], tail: Option<&[f64]>, gamma: f64, mode: ReturnMode) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut begin = 0;
    for end in 0..rewards.len() {
        if !(done[end] || end + 1 == rewards.len()) {
            continue;
        }
        let r = &rewards[begin..=end];
        match mode {
            ReturnMode::RewardToGo => {
                let mut acc = tail.map_or(0.0, |t| t[end]);
                for k in (0..r.len()).rev() {
                    acc = r[k] + gamma * acc;
                    out[begin + k] = acc;
                }
            }
            ReturnMode::PastSum => {
                for k in 0..r.len() {
                    let past: f64 = (1..=k).map(|i| gamma.powi((k - i) as i32) * r[k - i]).sum();
                    out[begin + k] = r[k] + past;
                }
            }
        }
        begin = end + 1;
    }
    out
}

/// Centers to zero mean and scales to unit (population) standard deviation.
pub fn standardize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let m = mean(values);
    let sd = crate::numerics::variance(values).sqrt();
    for v in values.iter_mut() {
        *v -= m;
        if sd > 1e-12 {
            *v /= sd;
        }
    }
}

/// Returns, then advantages `U_k - V(s_k)` standardized over the batch.
///
/// With `bootstrap`, episodes cut off by the horizon continue with the
/// critic's value of the final next state.
pub fn returns_and_advantages(traj: &mut Trajectory, critic: &Mlp, gamma: f64, mode: ReturnMode, bootstrap: bool) -> Result<()> {
    let rewards: Vec<f64> = traj.experiences.iter().map(|e| e.r).collect();
    let done: Vec<bool> = traj.experiences.iter().map(|e| e.done).collect();
    let tail = if bootstrap {
        let mut t = vec![0.0; traj.len()];
        for (k, e) in traj.experiences.iter().enumerate() {
            if e.done || k + 1 == traj.len() {
                t[k] = critic_forward(critic, &e.s_next)?;
            }
        }
        Some(t)
    } else {
        None
    };
    traj.returns = discounted_returns_with_tail(&rewards, &done, tail.as_deref(), gamma, mode);
    let mut adv = Vec::with_capacity(traj.len());
    for (e, u) in traj.experiences.iter().zip(&traj.returns) {
        adv.push(u - critic_forward(critic, &e.s)?);
    }
    standardize(&mut adv);
    traj.advantages = adv;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub epochs_per_update: usize,
    pub return_mode: ReturnMode,
    /// Bootstrap reward-to-go at the horizon with the critic.
    pub bootstrap: bool,
    /// Steps per gradient step within an epoch; 0 uses the whole trajectory.
    pub minibatch: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.1,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            gamma: 0.99,
            epochs_per_update: 4,
            return_mode: ReturnMode::RewardToGo,
            bootstrap: true,
            minibatch: 0,
        }
    }
}

impl PpoConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Validation(format!("clip must lie in (0, 1), got {}", self.clip)));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::Validation("actor and critic learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Validation(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Per-step clipped objective `min(ratio A, clip(ratio) A)` and whether the
/// unclipped branch is the active one.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

/// Actor loss `-mean(min(ratio A, clip(ratio) A))` and its gradient.
///
/// With `train_scale` the scale head enters the new log-probability;
/// otherwise each step uses the scale it was sampled with.
pub fn surrogate_loss_and_grad(actor: &Mlp, traj: &Trajectory, clip: f64, train_scale: bool) -> Result<(f64, Mlp, f64)> {
    if traj.is_empty() || traj.advantages.len() != traj.len() {
        return Err(Error::State("trajectory has no advantages".into()));
    }
    let n = traj.len() as f64;
    let mut grad = Mlp::zeros(&actor.sizes);
    let mut loss = 0.0;
    let mut clipped = 0usize;
    for (e, &adv) in traj.experiences.iter().zip(&traj.advantages) {
        let (out, cache) = actor.forward_cached(&e.s)?;
        let pol = policy_from_output(&out);
        let scale = if train_scale { pol.a_var } else { e.sample_scale };
        let (logp, dmean) = gaussian_log_prob_grad(e.a_raw, pol.a_mean, scale)?;
        let ratio = (logp - e.logp_old).exp();
        let (obj, active) = clipped_objective(ratio, adv, clip);
        loss -= obj / n;
        if !active {
            clipped += 1;
            continue;
        }
        let dl_dlogp = -ratio * adv / n;
        let d_scale = if train_scale {
            dl_dlogp * gaussian_log_prob_dscale(e.a_raw, pol.a_mean, scale) * sigmoid(pol.raw_scale)
        } else {
            0.0
        };
        actor.backward_into(&cache, &[dl_dlogp * dmean, d_scale], &mut grad);
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite actor loss {loss}")));
    }
    Ok((loss, grad, clipped as f64 / n))
}

/// Critic loss `mean((V(s) - U)^2)` and its gradient.
pub fn critic_loss_and_grad(critic: &Mlp, traj: &Trajectory) -> Result<(f64, Mlp)> {
    if traj.is_empty() || traj.returns.len() != traj.len() {
        return Err(Error::State("trajectory has no returns".into()));
    }
    let n = traj.len() as f64;
    let mut grad = Mlp::zeros(&critic.sizes);
    let mut loss = 0.0;
    for (e, &u) in traj.experiences.iter().zip(&traj.returns) {
        let (out, cache) = critic.forward_cached(&e.s)?;
        let d = out[0] - u;
        loss += d * d / n;
        critic.backward_into(&cache, &[2.0 * d / n], &mut grad);
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite critic loss {loss}")));
    }
    Ok((loss, grad))
}

/// Actor and critic with their optimizer states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_adam: AdamState,
    pub critic_adam: AdamState,
}

impl Agent {
    /// Small output layers so the initial policy sits near `a_mean = 0`.
    pub fn new(state_dim: usize, rng: &mut RngStream) -> Self {
        let actor = Mlp::standard(state_dim, 2, 0.01, rng);
        let critic = Mlp::standard(state_dim, 1, 1.0, rng);
        Agent {
            actor_adam: AdamState::new(&actor),
            critic_adam: AdamState::new(&critic),
            actor,
            critic,
        }
    }

    /// Sets the bias of the actor's mean output.
    pub fn set_mean_bias(&mut self, value: f64) {
        if let Some(b) = self.actor.biases.last_mut() {
            b[0] = value;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Losses averaged over the update's epochs, each measured before its step.
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub clip_fraction: f64,
}

/// Whole-batch PPO epochs on a trajectory with returns and advantages.
pub fn ppo_update(agent: &mut Agent, traj: &Trajectory, cfg: &PpoConfig, train_scale: bool) -> Result<UpdateStats> {
    cfg.check()?;
    let mut stats = UpdateStats::default();
    let epochs = cfg.epochs_per_update.max(1);
    let size = if cfg.minibatch == 0 { traj.len().max(1) } else { cfg.minibatch };
    let batches: Vec<Trajectory> = if size >= traj.len() {
        vec![traj.clone()]
    } else {
        (0..traj.len())
            .step_by(size)
            .map(|lo| {
                let hi = (lo + size).min(traj.len());
                Trajectory {
                    experiences: traj.experiences[lo..hi].to_vec(),
                    returns: traj.returns[lo..hi].to_vec(),
                    advantages: traj.advantages[lo..hi].to_vec(),
                }
            })
            .collect()
    };
    let steps = (epochs * batches.len()) as f64;
    for _ in 0..epochs {
        for batch in &batches {
            let (a_loss, a_grad, frac) = surrogate_loss_and_grad(&agent.actor, batch, cfg.clip, train_scale)?;
            let (c_loss, c_grad) = critic_loss_and_grad(&agent.critic, batch)?;
            agent.actor_adam.update(&mut agent.actor, &a_grad, cfg.actor_lr)?;
            agent.critic_adam.update(&mut agent.critic, &c_grad, cfg.critic_lr)?;
            stats.actor_loss += a_loss / steps;
            stats.critic_loss += c_loss / steps;
            stats.clip_fraction += frac / steps;
        }
    }
    if !agent.actor.all_finite() || !agent.critic.all_finite() {
        return Err(Error::Numeric("PPO update produced non-finite parameters".into()));
    }
    Ok(stats)
}
