//! Proximal policy optimization over the digital twin.
//!
//! Each iteration collects complete episodes with the current policy,
//! computes GAE advantages, and runs several epochs of clipped-surrogate
//! minibatch updates with Adam. Checkpoints are written whenever the
//! cumulative episode count crosses a multiple of the checkpoint cadence;
//! the checkpoint with the highest mean episode reward is selected at the end.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fswactions::MacroAction;
use crate::policy::{
    self, argmax, distribution, log_softmax, sample, CheckpointMetadata, PolicyError, PolicyParams, N_ACTIONS,
};
use crate::twinsim::{self, harden, Observation, SimError, SpacecraftConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("checkpoint write failed: {0}")]
    Checkpoint(#[from] PolicyError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardeningStage {
    /// First iteration at which this stage applies.
    pub iteration: u32,
    pub battery_factor: f64,
    pub wheel_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub epochs_per_iter: u32,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Global gradient-norm clip; `None` disables it.
    pub max_grad_norm: Option<f64>,
    pub episodes_per_iteration: u32,
    pub total_iterations: u32,
    pub checkpoint_every_episodes: u64,
    pub seed: u64,
    pub hidden_sizes: Vec<usize>,
    pub hardening: Vec<HardeningStage>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            learning_rate: 3e-4,
            epochs_per_iter: 4,
            minibatch_size: 256,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: Some(0.5),
            episodes_per_iteration: 16,
            total_iterations: 200,
            checkpoint_every_episodes: 5,
            seed: 0,
            hidden_sizes: policy::DEFAULT_HIDDEN.to_vec(),
            hardening: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must be in [0, 1]");
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon must be > 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and > 0");
        }
        if self.minibatch_size == 0 || self.episodes_per_iteration == 0 || self.checkpoint_every_episodes == 0 {
            return bad("minibatch_size, episodes_per_iteration and checkpoint_every_episodes must be >= 1");
        }
        if self.hidden_sizes.contains(&0) {
            return bad("hidden layer sizes must be >= 1");
        }
        if self.max_grad_norm.is_some_and(|g| !(g > 0.0)) {
            return bad("max_grad_norm must be > 0");
        }
        for s in &self.hardening {
            for f in [s.battery_factor, s.wheel_factor] {
                if !(f > 0.0 && f <= 1.0) {
                    return bad("hardening factors must be in (0, 1]");
                }
            }
        }
        Ok(())
    }

    /// Environment in force at `iteration` after applying the latest
    /// hardening stage that has started.
    pub fn env_for_iteration(&self, base: &SpacecraftConfig, iteration: u32) -> Result<SpacecraftConfig, TrainError> {
        let stage = self.hardening.iter().filter(|s| s.iteration <= iteration).max_by_key(|s| s.iteration);
        Ok(match stage {
            Some(s) => harden(base, s.battery_factor, s.wheel_factor)?,
            None => base.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub obs: Observation,
    pub action: MacroAction,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub terminated: bool,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// Value estimate of the final observation when the episode was
    /// truncated; zero after a failure.
    pub bootstrap_value: f64,
    /// Decisions survived over decisions in a full episode.
    pub survival_fraction: f64,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Deterministic, well-mixed per-episode seed.
pub fn episode_seed(train_seed: u64, episode_index: u64) -> u64 {
    let mut z = train_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ episode_index.wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn action_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_0F0F_F0F0)
}

/// Runs one episode, sampling actions from the policy.
pub fn rollout_episode(env: &SpacecraftConfig, params: &PolicyParams, seed: u64) -> Result<Trajectory, SimError> {
    let (mut state, mut obs) = twinsim::reset(env, seed)?;
    let mut rng = action_rng(seed);
    let mut steps = Vec::with_capacity(env.steps_per_episode() as usize);
    let mut bootstrap_value = 0.0;
    let mut survived = 0u32;
    loop {
        let (logits, value) = params.forward(obs.as_slice()).expect("observation length is fixed");
        let action = sample(&distribution(&logits), &mut rng);
        let log_prob = log_softmax(&logits)[action.code()];
        let (next, res) = twinsim::step(&state, action, env)?;
        steps.push(StepRecord {
            obs,
            action,
            log_prob,
            reward: res.reward,
            value,
            terminated: res.terminated,
            truncated: res.truncated,
        });
        if !res.terminated {
            survived += 1;
        }
        if res.truncated {
            bootstrap_value = params.forward(res.observation.as_slice()).expect("fixed length").1;
        }
        if res.terminated || res.truncated {
            break;
        }
        state = next;
        obs = res.observation;
    }
    Ok(Trajectory { seed, steps, bootstrap_value, survival_fraction: survived as f64 / env.steps_per_episode() as f64 })
}

/// Collects one episode per seed, in parallel; output order follows `seeds`.
pub fn collect_rollouts(env: &SpacecraftConfig, params: &PolicyParams, seeds: &[u64]) -> Result<Vec<Trajectory>, SimError> {
    seeds.par_iter().map(|&s| rollout_episode(env, params, s)).collect()
}

/// Generalized advantage estimation for one trajectory.
pub fn gae(traj: &Trajectory, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = traj.steps.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = traj.bootstrap_value;
    for t in (0..n).rev() {
        let s = &traj.steps[t];
        let live = if s.terminated { 0.0 } else { 1.0 };
        let delta = s.reward + gamma * next_value * live - s.value;
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = s.value;
    }
    let returns = adv.iter().zip(&traj.steps).map(|(a, s)| a + s.value).collect();
    (adv, returns)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Observation,
    pub action: MacroAction,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// Flattens trajectories into training samples with GAE targets.
pub fn build_batch(trajs: &[Trajectory], gamma: f64, lambda: f64) -> Vec<Sample> {
    let mut batch = Vec::new();
    for traj in trajs {
        let (adv, ret) = gae(traj, gamma, lambda);
        for ((s, a), r) in traj.steps.iter().zip(adv).zip(ret) {
            batch.push(Sample { obs: s.obs, action: s.action, old_log_prob: s.log_prob, advantage: a, ret: r });
        }
    }
    batch
}

/// Rescales advantages to zero mean and unit standard deviation.
pub fn normalize_advantages(batch: &mut [Sample]) {
    if batch.is_empty() {
        return;
    }
    let n = batch.len() as f64;
    let mean = batch.iter().map(|s| s.advantage).sum::<f64>() / n;
    let var = batch.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    batch.iter_mut().for_each(|s| s.advantage = (s.advantage - mean) / std);
}

/// The per-sample clipped surrogate `min(ρA, clip(ρ, 1−ε, 1+ε)A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Negated mean clipped surrogate.
    pub policy_loss: f64,
    /// Mean squared value error.
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Minimized objective `−surrogate + c_v·(V−R)² − c_e·H`, averaged over the
/// minibatch, and its gradient with respect to every parameter.
pub fn loss_and_grad(params: &PolicyParams, batch: &[Sample], cfg: &TrainConfig) -> (LossBreakdown, PolicyParams) {
    let mut grad = params.zeros_like();
    let mut out = LossBreakdown::default();
    let n = batch.len() as f64;
    let eps = cfg.clip_epsilon;
    for s in batch {
        let cache = params.forward_cached(s.obs.as_slice()).expect("observation length is fixed");
        let logp = log_softmax(&cache.logits);
        let probs = logp.map(f64::exp);
        let a = s.action.code();
        let ratio = (logp[a] - s.old_log_prob).exp();
        let adv = s.advantage;
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
        let surrogate = unclipped.min(clipped);
        let entropy = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        let verr = cache.value - s.ret;

        out.policy_loss -= surrogate / n;
        out.value_loss += verr * verr / n;
        out.entropy += entropy / n;
        out.approx_kl += (s.old_log_prob - logp[a]) / n;
        if (ratio - 1.0).abs() > eps {
            out.clip_fraction += 1.0 / n;
        }

        let dsurr_dratio = if unclipped <= clipped { adv } else { 0.0 };
        let mut dlogits = [0.0; N_ACTIONS];
        for k in 0..N_ACTIONS {
            let onehot = if k == a { 1.0 } else { 0.0 };
            let d_policy = -dsurr_dratio * ratio * (onehot - probs[k]);
            let d_entropy = cfg.entropy_coef * probs[k] * (logp[k] + entropy);
            dlogits[k] = (d_policy + d_entropy) / n;
        }
        let dvalue = 2.0 * cfg.value_coef * verr / n;
        params.backward(&cache, &dlogits, dvalue, &mut grad);
    }
    out.total = out.policy_loss + cfg.value_coef * out.value_loss - cfg.entropy_coef * out.entropy;
    (out, grad)
}

/// Adam optimizer over the flattened parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    /// Applies one descent step for gradient `g` to `params`.
    pub fn step(&mut self, params: &mut [f64], g: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Scales `g` so its Euclidean norm is at most `max_norm`.
pub fn clip_grad_norm(g: &mut [f64], max_norm: f64) {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        g.iter_mut().for_each(|x| *x *= s);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateOutcome {
    pub loss: LossBreakdown,
    /// True when a non-finite loss aborted the update and the previous
    /// parameters were kept.
    pub aborted: bool,
}

/// Runs `epochs_per_iter` passes of shuffled minibatch updates over `batch`.
/// Advantages are expected to be normalized already.
pub fn ppo_update(
    params: &PolicyParams,
    optimizer: &mut Adam,
    batch: &[Sample],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> (PolicyParams, UpdateOutcome) {
    if batch.is_empty() {
        return (params.clone(), UpdateOutcome { loss: LossBreakdown::default(), aborted: false });
    }
    let saved_opt = optimizer.clone();
    let mut current = params.clone();
    let mut flat = current.to_flat();
    let mut indices: Vec<usize> = (0..batch.len()).collect();
    let mut sum = LossBreakdown::default();
    let mut count = 0.0;
    for _ in 0..cfg.epochs_per_iter {
        indices.shuffle(rng);
        for chunk in indices.chunks(cfg.minibatch_size) {
            let mb: Vec<Sample> = chunk.iter().map(|&i| batch[i].clone()).collect();
            let (loss, grad) = loss_and_grad(&current, &mb, cfg);
            let mut g = grad.to_flat();
            if !loss.total.is_finite() || g.iter().any(|x| !x.is_finite()) {
                *optimizer = saved_opt;
                return (params.clone(), UpdateOutcome { loss, aborted: true });
            }
            if let Some(max) = cfg.max_grad_norm {
                clip_grad_norm(&mut g, max);
            }
            optimizer.step(&mut flat, &g);
            current.set_flat(&flat);
            sum.policy_loss += loss.policy_loss;
            sum.value_loss += loss.value_loss;
            sum.entropy += loss.entropy;
            sum.total += loss.total;
            sum.approx_kl += loss.approx_kl;
            sum.clip_fraction += loss.clip_fraction;
            count += 1.0;
        }
    }
    let mean = LossBreakdown {
        policy_loss: sum.policy_loss / count,
        value_loss: sum.value_loss / count,
        entropy: sum.entropy / count,
        total: sum.total / count,
        approx_kl: sum.approx_kl / count,
        clip_fraction: sum.clip_fraction / count,
    };
    (current, UpdateOutcome { loss: mean, aborted: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u32,
    pub episodes_total: u64,
    pub mean_episode_reward: f64,
    pub mean_survival_fraction: f64,
    pub battery_factor: f64,
    pub wheel_factor: f64,
    pub loss: LossBreakdown,
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub episodes: u64,
    pub iteration: u32,
    pub mean_reward: f64,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: Vec<IterationReport>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub selected: Option<usize>,
    /// Set when training stopped early on an error.
    pub error: Option<String>,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    /// Parameters of every checkpoint, aligned with `report.checkpoints`.
    pub checkpoint_params: Vec<PolicyParams>,
}

impl TrainOutcome {
    pub fn selected_params(&self) -> Option<&PolicyParams> {
        self.report.selected.map(|i| &self.checkpoint_params[i])
    }
}

/// Index of the highest mean reward; ties go to the later checkpoint.
pub fn select_best(mean_rewards: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in mean_rewards.iter().enumerate() {
        if r.is_nan() {
            continue;
        }
        if best.is_none_or(|b| *r >= mean_rewards[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn checkpoint_file_name(episodes: u64) -> String {
    format!("checkpoint_ep{episodes:06}.json")
}

/// Full training run. When `out_dir` is given, checkpoints are written under
/// `out_dir/checkpoints/` and the report to `out_dir/train_report.json`.
/// A disk failure stops training and returns the partial report in
/// `report.error`.
pub fn train(env: &SpacecraftConfig, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    env.validate()?;
    let ck_dir = out_dir.map(|d| d.join("checkpoints"));
    if let Some(d) = &ck_dir {
        fs::create_dir_all(d)?;
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = PolicyParams::init(&cfg.hidden_sizes, &mut init_rng);
    let mut optimizer = Adam::new(params.num_params(), cfg.learning_rate);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));

    let mut report = TrainReport { iterations: vec![], checkpoints: vec![], selected: None, error: None };
    let mut checkpoint_params = Vec::new();
    let mut episodes_done = 0u64;

    'outer: for iteration in 0..cfg.total_iterations {
        let stage_env = cfg.env_for_iteration(env, iteration)?;
        let (bf, wf) = (
            stage_env.battery_capacity / env.battery_capacity,
            stage_env.wheel_max_speed / env.wheel_max_speed,
        );
        let seeds: Vec<u64> = (0..cfg.episodes_per_iteration as u64)
            .map(|k| episode_seed(cfg.seed, episodes_done + k))
            .collect();
        let trajs = collect_rollouts(&stage_env, &params, &seeds)?;
        let prev_done = episodes_done;
        episodes_done += trajs.len() as u64;
        let mean_reward = trajs.iter().map(Trajectory::total_reward).sum::<f64>() / trajs.len() as f64;
        let mean_survival = trajs.iter().map(|t| t.survival_fraction).sum::<f64>() / trajs.len() as f64;

        let every = cfg.checkpoint_every_episodes;
        for mult in (prev_done / every + 1)..=(episodes_done / every) {
            let episodes = mult * every;
            let meta = CheckpointMetadata { episodes, iteration: iteration as u64, mean_reward: Some(mean_reward) };
            let path = ck_dir.as_ref().map(|d| d.join(checkpoint_file_name(episodes)));
            if let Some(p) = &path {
                if let Err(e) = policy::save(&params, meta, p) {
                    report.error = Some(format!("writing {}: {e}", p.display()));
                    break 'outer;
                }
            }
            report.checkpoints.push(CheckpointRecord { episodes, iteration, mean_reward, path });
            checkpoint_params.push(params.clone());
        }

        let mut batch = build_batch(&trajs, cfg.gamma, cfg.gae_lambda);
        normalize_advantages(&mut batch);
        let (next, outcome) = ppo_update(&params, &mut optimizer, &batch, cfg, &mut shuffle_rng);
        params = next;
        report.iterations.push(IterationReport {
            iteration,
            episodes_total: episodes_done,
            mean_episode_reward: mean_reward,
            mean_survival_fraction: mean_survival,
            battery_factor: bf,
            wheel_factor: wf,
            loss: outcome.loss,
            aborted: outcome.aborted,
        });
    }

    let rewards: Vec<f64> = report.checkpoints.iter().map(|c| c.mean_reward).collect();
    report.selected = select_best(&rewards);
    if let Some(d) = out_dir {
        if let Err(e) = fs::write(d.join("train_report.json"), report.to_json()) {
            report.error.get_or_insert(format!("writing report: {e}"));
        }
    }
    Ok(TrainOutcome { report, checkpoint_params })
}

/// How a policy picks actions during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    Argmax,
    Stochastic,
}

/// Mean survival fraction of `choose` over one episode per seed. The
/// closure receives the observation and a per-episode seeded generator.
pub fn evaluate_with<F>(env: &SpacecraftConfig, seeds: &[u64], choose: F) -> Result<f64, SimError>
where
    F: Fn(&Observation, &mut ChaCha8Rng) -> MacroAction + Sync,
{
    let fractions: Result<Vec<f64>, SimError> = seeds
        .par_iter()
        .map(|&seed| {
            let (mut state, mut obs) = twinsim::reset(env, seed)?;
            let mut rng = action_rng(seed);
            let mut survived = 0u32;
            while state.is_alive() {
                let (next, res) = twinsim::step(&state, choose(&obs, &mut rng), env)?;
                if !res.terminated {
                    survived += 1;
                }
                state = next;
                obs = res.observation;
            }
            Ok(survived as f64 / env.steps_per_episode() as f64)
        })
        .collect();
    let f = fractions?;
    Ok(f.iter().sum::<f64>() / f.len().max(1) as f64)
}

pub fn evaluate_policy(env: &SpacecraftConfig, params: &PolicyParams, seeds: &[u64], mode: ActionMode) -> Result<f64, SimError> {
    evaluate_with(env, seeds, |obs, rng| {
        let (logits, _) = params.forward(obs.as_slice()).expect("fixed length");
        let dist = distribution(&logits);
        match mode {
            ActionMode::Argmax => argmax(&dist),
            ActionMode::Stochastic => sample(&dist, rng),
        }
    })
}
