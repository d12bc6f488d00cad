//! Online policies: the uniform Random baseline, an advantage actor-critic
//! learner, and greedy wrappers around a Q network restricted to an
//! allowed-action mask.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::config::SystemConfig;
use crate::env::{EnvError, NcsEnv, Policy};
use crate::net::{AdamState, Mlp, NetError};
use crate::rng::{derive_seed, derive_stream, Stream};
use crate::state::{encode_state, Action, EnvState, StateError};

/// Shared magic of all agent checkpoints; a type byte follows.
pub const AGENT_MAGIC: &[u8; 8] = b"AOSAGT01";
const AGENT_TYPE_A2C: u8 = 1;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("non-finite loss; update aborted")]
    NonFiniteLoss,
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

/// Uniform distribution over all actions.
pub struct RandomPolicy {
    num_actions: usize,
}

impl RandomPolicy {
    pub fn new(cfg: &SystemConfig) -> Self {
        Self {
            num_actions: cfg.num_actions(),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&self, _state: &EnvState, rng: &mut Stream) -> Action {
        let idx = rng.random_range(0..self.num_actions);
        Action::from_index(idx, self.num_actions - 1).expect("index in range")
    }
}

/// Argmax of `q_row` over the allowed actions, breaking ties toward the
/// lowest index. Panics if no action is allowed; callers guarantee a
/// nonempty mask.
pub fn greedy_action(q_row: &[f64], allowed: &[bool]) -> usize {
    assert_eq!(q_row.len(), allowed.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, (&q, &ok)) in q_row.iter().zip(allowed).enumerate() {
        if !ok {
            continue;
        }
        match best {
            Some((_, bq)) if q <= bq => {}
            _ => best = Some((i, q)),
        }
    }
    best.expect("allowed-action mask must not be empty").0
}

/// Deterministic greedy policy over a Q network, restricted per state to the
/// actions the mask function allows.
pub struct QGreedyPolicy<F> {
    qnet: Mlp,
    cfg: SystemConfig,
    mask_fn: F,
}

/// Wrap a Q network and an allowed-action mask into a policy.
pub fn greedy_from_q<F>(qnet: Mlp, cfg: SystemConfig, mask_fn: F) -> QGreedyPolicy<F>
where
    F: Fn(&EnvState) -> Vec<bool> + Sync,
{
    QGreedyPolicy { qnet, cfg, mask_fn }
}

impl<F> Policy for QGreedyPolicy<F>
where
    F: Fn(&EnvState) -> Vec<bool> + Sync,
{
    fn act(&self, state: &EnvState, _rng: &mut Stream) -> Action {
        let features = encode_state(state, &self.cfg).expect("state must be valid");
        let q = self.qnet.forward(&features).expect("dims fixed at build");
        let mask = (self.mask_fn)(state);
        let idx = greedy_action(&q, &mask);
        Action::from_index(idx, self.cfg.num_relays).expect("mask length matches actions")
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Loss components of one actor-critic update.
#[derive(Debug, Clone, Copy)]
pub struct A2cLosses {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub advantage: f64,
}

/// Feature-level advantage actor-critic: softmax actor, scalar critic,
/// 1-step bootstrapped advantage on a continuing task.
pub struct A2cCore {
    pub actor: Mlp,
    pub critic: Mlp,
    actor_opt: AdamState,
    critic_opt: AdamState,
    pub gamma: f64,
    pub entropy_weight: f64,
    num_actions: usize,
}

impl A2cCore {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        num_actions: usize,
        actor_lr: f64,
        critic_lr: f64,
        gamma: f64,
        entropy_weight: f64,
        rng: &mut Stream,
    ) -> Self {
        let actor = Mlp::new(input_dim, hidden_dim, num_actions, rng);
        let critic = Mlp::new(input_dim, hidden_dim, 1, rng);
        let actor_opt = AdamState::new(&actor, actor_lr);
        let critic_opt = AdamState::new(&critic, critic_lr);
        Self {
            actor,
            critic,
            actor_opt,
            critic_opt,
            gamma,
            entropy_weight,
            num_actions,
        }
    }

    pub fn probs(&self, features: &[f64]) -> Vec<f64> {
        softmax(&self.actor.forward(features).expect("actor dims"))
    }

    pub fn value(&self, features: &[f64]) -> f64 {
        self.critic.forward(features).expect("critic dims")[0]
    }

    pub fn sample_action(&self, features: &[f64], rng: &mut Stream) -> usize {
        let probs = self.probs(features);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.num_actions - 1
    }

    /// One transition update: advantage `A = r + gamma V(s') - V(s)`,
    /// squared-advantage critic loss, policy-gradient actor loss with an
    /// entropy bonus. Aborts before any parameter change on non-finite loss.
    pub fn update(
        &mut self,
        s_feat: &[f64],
        action: usize,
        reward: f64,
        ns_feat: &[f64],
    ) -> Result<A2cLosses, AgentError> {
        assert!(action < self.num_actions);
        let v_s = self.value(s_feat);
        let v_ns = self.value(ns_feat);
        let advantage = reward + self.gamma * v_ns - v_s;

        let probs = self.probs(s_feat);
        let ent = entropy(&probs);
        let log_pi_a = probs[action].max(1e-300).ln();
        let actor_loss = -log_pi_a * advantage - self.entropy_weight * ent;
        let critic_loss = advantage * advantage;
        if !actor_loss.is_finite() || !critic_loss.is_finite() {
            return Err(AgentError::NonFiniteLoss);
        }

        // d(actor_loss)/d(logit_i) = A (pi_i - 1{i=a}) + w_H pi_i (ln pi_i + H)
        let mut actor_up = vec![0.0; self.num_actions];
        for (i, up) in actor_up.iter_mut().enumerate() {
            let indicator = if i == action { 1.0 } else { 0.0 };
            *up = advantage * (probs[i] - indicator)
                + self.entropy_weight * probs[i] * (probs[i].max(1e-300).ln() + ent);
        }
        let actor_grads = self.actor.backward(s_feat, &actor_up)?;

        // d(critic_loss)/d(V(s)) with the bootstrap target held fixed.
        let critic_grads = self.critic.backward(s_feat, &[-2.0 * advantage])?;

        self.actor_opt.step(&mut self.actor, &actor_grads)?;
        self.critic_opt.step(&mut self.critic, &critic_grads)?;
        Ok(A2cLosses {
            actor_loss,
            critic_loss,
            entropy: ent,
            advantage,
        })
    }
}

/// Environment-facing actor-critic agent.
pub struct A2cAgent {
    pub core: A2cCore,
    cfg: SystemConfig,
}

impl A2cAgent {
    pub fn new(cfg: &SystemConfig, seed: u64) -> Self {
        let mut rng = derive_stream(seed, "a2c-init", 0);
        let core = A2cCore::new(
            cfg.feature_len(),
            cfg.hidden_dim,
            cfg.num_actions(),
            cfg.actor_learning_rate,
            cfg.critic_learning_rate,
            cfg.gamma,
            cfg.entropy_weight,
            &mut rng,
        );
        Self {
            core,
            cfg: cfg.clone(),
        }
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn update(
        &mut self,
        state: &EnvState,
        action: Action,
        reward: f64,
        next_state: &EnvState,
    ) -> Result<A2cLosses, AgentError> {
        let s = encode_state(state, &self.cfg)?;
        let ns = encode_state(next_state, &self.cfg)?;
        self.core.update(&s, action.index(), reward, &ns)
    }
}

impl Policy for A2cAgent {
    fn act(&self, state: &EnvState, rng: &mut Stream) -> Action {
        let features = encode_state(state, &self.cfg).expect("state must be valid");
        let idx = self.core.sample_action(&features, rng);
        Action::from_index(idx, self.cfg.num_relays).expect("index in range")
    }
}

/// Write an actor-critic checkpoint: agent-type header, then the actor and
/// critic network blocks.
pub fn save_a2c_checkpoint(
    path: &Path,
    agent: &A2cAgent,
    fingerprint: u64,
) -> Result<(), AgentError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(AGENT_MAGIC)?;
    w.write_all(&[AGENT_TYPE_A2C])?;
    w.write_all(&fingerprint.to_le_bytes())?;
    agent.core.actor.write_to(&mut w)?;
    agent.core.critic.write_to(&mut w)?;
    Ok(())
}

/// Load an actor-critic checkpoint for evaluation under `cfg`. Optimizer
/// state is not persisted; the loaded agent starts with fresh moments.
pub fn load_a2c_checkpoint(path: &Path, cfg: &SystemConfig) -> Result<A2cAgent, AgentError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| AgentError::BadCheckpoint("truncated magic".into()))?;
    if &magic != AGENT_MAGIC {
        return Err(AgentError::BadCheckpoint(format!(
            "unrecognized magic {magic:?}"
        )));
    }
    let mut byte = [0u8; 1];
    r.read_exact(&mut byte)
        .map_err(|_| AgentError::BadCheckpoint("truncated agent type".into()))?;
    if byte[0] != AGENT_TYPE_A2C {
        return Err(AgentError::BadCheckpoint(format!(
            "agent type {} is not an actor-critic checkpoint",
            byte[0]
        )));
    }
    let mut fp = [0u8; 8];
    r.read_exact(&mut fp)
        .map_err(|_| AgentError::BadCheckpoint("truncated fingerprint".into()))?;
    let actor = Mlp::read_from(&mut r)?;
    let critic = Mlp::read_from(&mut r)?;
    if actor.input_dim != cfg.feature_len() || actor.output_dim != cfg.num_actions() {
        return Err(AgentError::BadCheckpoint(format!(
            "actor dims {}x{} do not fit the configuration",
            actor.input_dim, actor.output_dim
        )));
    }
    let mut agent = A2cAgent::new(cfg, 0);
    agent.core.actor = actor;
    agent.core.critic = critic;
    Ok(agent)
}

/// Stopping rule and budget for online actor-critic training.
#[derive(Debug, Clone)]
pub struct A2cTrainOptions {
    /// Steps per averaging window.
    pub window_steps: usize,
    /// Converged when the window-average reward changes by less than this
    /// relative amount between consecutive windows.
    pub rel_tol: f64,
    /// Hard cap on environment steps.
    pub max_steps: usize,
}

impl Default for A2cTrainOptions {
    fn default() -> Self {
        Self {
            window_steps: 20_000,
            rel_tol: 0.01,
            max_steps: 400_000,
        }
    }
}

/// Result of online training: the converged agent and the per-window average
/// rewards observed along the way.
pub struct A2cTrainResult {
    pub agent: A2cAgent,
    pub window_rewards: Vec<f64>,
    pub converged: bool,
    pub steps: usize,
}

/// Train an actor-critic agent online until the windowed reward stabilizes.
pub fn train_a2c(
    cfg: &SystemConfig,
    seed: u64,
    opts: &A2cTrainOptions,
) -> Result<A2cTrainResult, AgentError> {
    let mut agent = A2cAgent::new(cfg, derive_seed(seed, "a2c-agent", 0));
    let mut env = NcsEnv::new(cfg.clone(), derive_seed(seed, "a2c-env", 0))?;
    let mut act_rng = derive_stream(seed, "a2c-actions", 0);

    let mut window_rewards: Vec<f64> = Vec::new();
    let mut window_sum = 0.0;
    let mut steps = 0usize;
    let mut converged = false;
    let mut state = env.state().clone();

    while steps < opts.max_steps {
        let action = agent.act(&state, &mut act_rng);
        let (next, reward, _) = env.step(action)?;
        agent.update(&state, action, reward, &next)?;
        state = next;
        window_sum += reward;
        steps += 1;

        if steps % opts.window_steps == 0 {
            let avg = window_sum / opts.window_steps as f64;
            window_sum = 0.0;
            if let Some(&prev) = window_rewards.last() {
                if (avg - prev).abs() < opts.rel_tol * prev.abs() {
                    window_rewards.push(avg);
                    converged = true;
                    break;
                }
            }
            window_rewards.push(avg);
        }
    }
    Ok(A2cTrainResult {
        agent,
        window_rewards,
        converged,
        steps,
    })
}
