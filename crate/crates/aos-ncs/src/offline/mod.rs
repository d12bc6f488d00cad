//! Offline policy optimization from a static dataset.
//!
//! The proposed scheme fits a Q network by temporal-difference learning in
//! which the Bellman backup is restricted to actions supported by the
//! dataset's empirical policy, plus a hinge penalty that forces the best
//! in-support value to exceed every out-of-support value by a margin. The
//! conservative Q-learning baseline keeps the unconstrained backup and
//! instead penalizes the log-sum-exp of the Q row relative to the dataset
//! action. Exact tabular oracles for both live in [`tabular`].

pub mod behavior;
pub mod tabular;

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

pub use behavior::{fit_behavior, support_from_probs, BehaviorMode, BehaviorModel, StateKeyer};

use crate::agents::{greedy_action, greedy_from_q, AGENT_MAGIC};
use crate::config::SystemConfig;
use crate::dataset::ExperienceStore;
use crate::env::{evaluate_policy, EnvError, EvalSummary, Policy};
use crate::net::{AdamState, Mlp, MlpGrads, NetError};
use crate::rng::{derive_seed, derive_stream};
use crate::state::{encode_state, EnvState, Experience, StateError};

#[derive(Debug, Error)]
pub enum OfflineError {
    #[error("dataset is empty")]
    EmptyDataset,
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

/// A dataset record with everything the updates need precomputed: encoded
/// features and support masks for both endpoint states.
#[derive(Debug, Clone)]
pub struct PreparedTransition {
    pub s_feat: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub ns_feat: Vec<f64>,
    pub support_s: Vec<bool>,
    pub support_ns: Vec<bool>,
}

/// Encode every record and attach the behavior model's support masks.
pub fn prepare_transitions(
    records: &[Experience],
    cfg: &SystemConfig,
    behavior: &BehaviorModel,
) -> Result<Vec<PreparedTransition>, OfflineError> {
    if records.is_empty() {
        return Err(OfflineError::EmptyDataset);
    }
    records
        .iter()
        .map(|e| {
            let s_feat = encode_state(&e.state, cfg)?;
            let ns_feat = encode_state(&e.next_state, cfg)?;
            let support_s = behavior.support(&e.state, &s_feat);
            let support_ns = behavior.support(&e.next_state, &ns_feat);
            Ok(PreparedTransition {
                s_feat,
                action: e.action.index(),
                reward: e.reward,
                ns_feat,
                support_s,
                support_ns,
            })
        })
        .collect()
}

/// Loss components of one gradient step. `penalty_loss` is the margin term
/// for the proposed scheme and the conservatism term for the baseline, both
/// before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponents {
    pub td_loss: f64,
    pub penalty_loss: f64,
    pub total: f64,
}

/// Numerically stable `ln(sum(exp(xs)))`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

fn masked_max(row: &[f64], mask: &[bool]) -> f64 {
    row.iter()
        .zip(mask)
        .filter(|&(_, &ok)| ok)
        .map(|(&q, _)| q)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Q-learning trainer over encoded transitions: online network, periodically
/// synced target network, one optimizer.
pub struct OfflineTrainer {
    qnet: Mlp,
    target: Mlp,
    opt: AdamState,
    pub gamma: f64,
    /// Weight of the margin penalty (proposed scheme).
    pub penalty_weight: f64,
    /// Margin by which in-support values must dominate out-of-support ones.
    pub margin: f64,
    /// Conservatism weight (baseline scheme).
    pub cql_alpha: f64,
    pub target_sync_period: usize,
    update_count: usize,
    num_actions: usize,
}

impl OfflineTrainer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        num_actions: usize,
        learning_rate: f64,
        gamma: f64,
        penalty_weight: f64,
        margin: f64,
        cql_alpha: f64,
        target_sync_period: usize,
        rng: &mut crate::rng::Stream,
    ) -> Self {
        let qnet = Mlp::new(input_dim, hidden_dim, num_actions, rng);
        let target = qnet.clone();
        let opt = AdamState::new(&qnet, learning_rate);
        Self {
            qnet,
            target,
            opt,
            gamma,
            penalty_weight,
            margin,
            cql_alpha,
            target_sync_period: target_sync_period.max(1),
            update_count: 0,
            num_actions,
        }
    }

    pub fn from_config(cfg: &SystemConfig, rng: &mut crate::rng::Stream) -> Self {
        Self::new(
            cfg.feature_len(),
            cfg.hidden_dim,
            cfg.num_actions(),
            cfg.q_learning_rate,
            cfg.gamma,
            cfg.penalty_weight,
            cfg.margin,
            cfg.cql_alpha,
            cfg.target_sync_period,
            rng,
        )
    }

    pub fn qnet(&self) -> &Mlp {
        &self.qnet
    }

    pub fn update_count(&self) -> usize {
        self.update_count
    }

    fn apply(&mut self, grads: &MlpGrads) -> Result<(), OfflineError> {
        self.opt.step(&mut self.qnet, grads)?;
        self.update_count += 1;
        if self.update_count % self.target_sync_period == 0 {
            self.target = self.qnet.clone();
        }
        Ok(())
    }

    /// Support-constrained TD update with the margin penalty:
    /// the backup maximizes the target network only over actions supported
    /// at the next state, and every unsupported action at the current state
    /// whose value comes within `margin` of the best supported value is
    /// pushed down.
    pub fn offline_update(
        &mut self,
        batch: &[&PreparedTransition],
    ) -> Result<LossComponents, OfflineError> {
        assert!(!batch.is_empty());
        let inv_b = 1.0 / batch.len() as f64;
        let mut grads = MlpGrads::zeros_like(&self.qnet);
        let mut td_sum = 0.0;
        let mut penalty_sum = 0.0;

        for item in batch {
            let q_s = self.qnet.forward(&item.s_feat)?;
            let q_ns_target = self.target.forward(&item.ns_feat)?;
            let backup = masked_max(&q_ns_target, &item.support_ns);
            debug_assert!(backup.is_finite(), "next-state support must be nonempty");
            let y = item.reward + self.gamma * backup;
            let td_err = q_s[item.action] - y;
            td_sum += td_err * td_err;

            let mut upstream = vec![0.0; self.num_actions];
            upstream[item.action] += 2.0 * td_err * inv_b;

            if self.penalty_weight > 0.0 {
                let best_supported = greedy_action(&q_s, &item.support_s);
                let support_max = q_s[best_supported];
                for (a, &supported) in item.support_s.iter().enumerate() {
                    if supported {
                        continue;
                    }
                    let violation = q_s[a] + self.margin - support_max;
                    if violation > 0.0 {
                        penalty_sum += violation;
                        upstream[a] += self.penalty_weight * inv_b;
                        upstream[best_supported] -= self.penalty_weight * inv_b;
                    }
                }
            }
            grads.add(&self.qnet.backward(&item.s_feat, &upstream)?);
        }

        let td_loss = td_sum * inv_b;
        let penalty_loss = penalty_sum * inv_b;
        let total = td_loss + self.penalty_weight * penalty_loss;
        if !total.is_finite() {
            return Err(OfflineError::NonFiniteLoss);
        }
        self.apply(&grads)?;
        Ok(LossComponents {
            td_loss,
            penalty_loss,
            total,
        })
    }

    /// Conservative baseline update: unconstrained backup plus
    /// `cql_alpha * (logsumexp(Q(s, .)) - Q(s, a_data))`.
    pub fn cql_update(
        &mut self,
        batch: &[&PreparedTransition],
    ) -> Result<LossComponents, OfflineError> {
        assert!(!batch.is_empty());
        let inv_b = 1.0 / batch.len() as f64;
        let mut grads = MlpGrads::zeros_like(&self.qnet);
        let mut td_sum = 0.0;
        let mut reg_sum = 0.0;

        for item in batch {
            let q_s = self.qnet.forward(&item.s_feat)?;
            let q_ns_target = self.target.forward(&item.ns_feat)?;
            let backup = q_ns_target
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let y = item.reward + self.gamma * backup;
            let td_err = q_s[item.action] - y;
            td_sum += td_err * td_err;

            let mut upstream = vec![0.0; self.num_actions];
            upstream[item.action] += 2.0 * td_err * inv_b;

            if self.cql_alpha > 0.0 {
                let lse = logsumexp(&q_s);
                reg_sum += lse - q_s[item.action];
                // d lse / d q_a = softmax(q)_a
                for (a, up) in upstream.iter_mut().enumerate() {
                    *up += self.cql_alpha * inv_b * (q_s[a] - lse).exp();
                }
                upstream[item.action] -= self.cql_alpha * inv_b;
            }
            grads.add(&self.qnet.backward(&item.s_feat, &upstream)?);
        }

        let td_loss = td_sum * inv_b;
        let penalty_loss = reg_sum * inv_b;
        let total = td_loss + self.cql_alpha * penalty_loss;
        if !total.is_finite() {
            return Err(OfflineError::NonFiniteLoss);
        }
        self.apply(&grads)?;
        Ok(LossComponents {
            td_loss,
            penalty_loss,
            total,
        })
    }
}

/// Greedy policy over a Q network restricted to the behavior model's
/// support; by construction it never selects an out-of-support action.
pub fn constrained_policy(
    qnet: Mlp,
    cfg: SystemConfig,
    behavior: BehaviorModel,
) -> impl Policy {
    let mask_cfg = cfg.clone();
    greedy_from_q(qnet, cfg, move |s: &EnvState| {
        let feats = encode_state(s, &mask_cfg).expect("evaluation states are valid");
        behavior.support(s, &feats)
    })
}

/// Which offline scheme to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Proposed,
    Cql,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Cql => "cql",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "proposed" => Some(Scheme::Proposed),
            "cql" => Some(Scheme::Cql),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Training iterations; each runs `steps_per_iteration` gradient steps.
    pub iterations: usize,
    /// Policy-evaluation realizations per iteration.
    pub eval_realizations: usize,
    pub behavior_mode: BehaviorMode,
    /// Keep a Q-network snapshot every this many iterations (0: final only).
    pub checkpoint_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            iterations: 800,
            eval_realizations: 10_000,
            behavior_mode: BehaviorMode::NeuralCloning,
            checkpoint_every: 0,
        }
    }
}

/// One row of the training metric log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub avg_reward: f64,
    pub avg_aos_s: f64,
    pub avg_energy_j: f64,
    pub td_loss: f64,
    pub penalty_loss: f64,
}

pub struct TrainOutcome {
    pub qnet: Mlp,
    pub behavior: BehaviorModel,
    pub metrics: Vec<IterationMetrics>,
    /// `(iteration, snapshot)` pairs when `checkpoint_every > 0`.
    pub checkpoints: Vec<(usize, Mlp)>,
}

/// Fit the behavior model, then run the configured number of iterations of
/// the chosen scheme; after every iteration the constrained-greedy policy of
/// the current Q network is evaluated and logged. Deterministic in `seed`.
pub fn train_offline(
    store: &ExperienceStore,
    cfg: &SystemConfig,
    scheme: Scheme,
    opts: &TrainOptions,
    seed: u64,
) -> Result<TrainOutcome, OfflineError> {
    let behavior = fit_behavior(
        store.records(),
        cfg,
        opts.behavior_mode,
        derive_seed(seed, "behavior-fit", 0),
    )?;
    let prepared = prepare_transitions(store.records(), cfg, &behavior)?;

    let mut init_rng = derive_stream(seed, "offline-init", 0);
    let mut trainer = OfflineTrainer::from_config(cfg, &mut init_rng);
    let mut batch_rng = derive_stream(seed, "offline-batches", 0);
    let eval_seed = derive_seed(seed, "offline-eval", 0);

    let mut metrics = Vec::with_capacity(opts.iterations);
    let mut checkpoints = Vec::new();

    for iteration in 0..opts.iterations {
        let mut td_acc = 0.0;
        let mut penalty_acc = 0.0;
        for _ in 0..cfg.steps_per_iteration {
            let batch: Vec<&PreparedTransition> = (0..cfg.batch_size)
                .map(|_| {
                    use rand::Rng;
                    &prepared[batch_rng.random_range(0..prepared.len())]
                })
                .collect();
            let losses = match scheme {
                Scheme::Proposed => trainer.offline_update(&batch)?,
                Scheme::Cql => trainer.cql_update(&batch)?,
            };
            td_acc += losses.td_loss;
            penalty_acc += losses.penalty_loss;
        }

        let policy = constrained_policy(trainer.qnet().clone(), cfg.clone(), behavior.clone());
        let summary: EvalSummary =
            evaluate_policy(cfg, &policy, opts.eval_realizations, eval_seed)?;
        metrics.push(IterationMetrics {
            iteration,
            avg_reward: summary.avg_reward,
            avg_aos_s: summary.avg_aos_s,
            avg_energy_j: summary.avg_energy_j,
            td_loss: td_acc / cfg.steps_per_iteration as f64,
            penalty_loss: penalty_acc / cfg.steps_per_iteration as f64,
        });
        if opts.checkpoint_every > 0 && (iteration + 1) % opts.checkpoint_every == 0 {
            checkpoints.push((iteration, trainer.qnet().clone()));
        }
    }

    Ok(TrainOutcome {
        qnet: trainer.qnet().clone(),
        behavior,
        metrics,
        checkpoints,
    })
}

/// Result of auditing the margin property over dataset states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginAudit {
    pub audited: usize,
    /// States whose support excludes at least one action.
    pub with_ood: usize,
    /// States satisfying `max_support Q >= max_ood Q + margin / 2`
    /// (states with no out-of-support action satisfy it vacuously).
    pub satisfied: usize,
}

impl MarginAudit {
    pub fn fraction(&self) -> f64 {
        self.satisfied as f64 / self.audited.max(1) as f64
    }
}

/// Check the intended effect of the margin penalty on up to `max_states`
/// evenly spaced dataset states.
pub fn audit_margin(
    qnet: &Mlp,
    prepared: &[PreparedTransition],
    margin: f64,
    max_states: usize,
) -> Result<MarginAudit, OfflineError> {
    let stride = (prepared.len() / max_states.max(1)).max(1);
    let mut audit = MarginAudit {
        audited: 0,
        with_ood: 0,
        satisfied: 0,
    };
    for item in prepared.iter().step_by(stride).take(max_states) {
        audit.audited += 1;
        let q = qnet.forward(&item.s_feat)?;
        let support_max = masked_max(&q, &item.support_s);
        let ood: Vec<bool> = item.support_s.iter().map(|&b| !b).collect();
        if ood.iter().all(|&b| !b) {
            audit.satisfied += 1;
            continue;
        }
        audit.with_ood += 1;
        let ood_max = masked_max(&q, &ood);
        if support_max >= ood_max + margin / 2.0 {
            audit.satisfied += 1;
        }
    }
    Ok(audit)
}

const AGENT_TYPE_CONSTRAINED_Q: u8 = 2;

/// Save a trained policy: Q network plus the behavior model that defines its
/// support constraint, tagged with the physics fingerprint of the config it
/// was trained under.
pub fn save_policy_checkpoint(
    path: &Path,
    qnet: &Mlp,
    behavior: &BehaviorModel,
    fingerprint: u64,
) -> Result<(), OfflineError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(AGENT_MAGIC)?;
    w.write_all(&[AGENT_TYPE_CONSTRAINED_Q])?;
    w.write_all(&fingerprint.to_le_bytes())?;
    qnet.write_to(&mut w)?;

    let (eps, num_actions, tab, neural) = behavior.clone().into_parts();
    w.write_all(&eps.to_le_bytes())?;
    w.write_all(&(num_actions as u32).to_le_bytes())?;
    match (tab, neural) {
        (Some((keyer, freqs)), None) => {
            w.write_all(&[0u8])?;
            w.write_all(&keyer.aos_cap.to_le_bytes())?;
            w.write_all(&(keyer.num_relays as u32).to_le_bytes())?;
            w.write_all(&keyer.gain_lo.to_le_bytes())?;
            w.write_all(&keyer.gain_hi.to_le_bytes())?;
            w.write_all(&(freqs.len() as u64).to_le_bytes())?;
            for (key, probs) in &freqs {
                w.write_all(&key.to_le_bytes())?;
                for p in probs {
                    w.write_all(&p.to_le_bytes())?;
                }
            }
        }
        (None, Some(net)) => {
            w.write_all(&[1u8])?;
            net.write_to(&mut w)?;
        }
        _ => unreachable!("behavior model has exactly one representation"),
    }
    Ok(())
}

/// Load a policy checkpoint saved by [`save_policy_checkpoint`].
pub fn load_policy_checkpoint(path: &Path) -> Result<(Mlp, BehaviorModel, u64), OfflineError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| OfflineError::BadCheckpoint("truncated magic".into()))?;
    if &magic != AGENT_MAGIC {
        return Err(OfflineError::BadCheckpoint(format!(
            "unrecognized magic {magic:?}"
        )));
    }
    let mut byte = [0u8; 1];
    r.read_exact(&mut byte)
        .map_err(|_| OfflineError::BadCheckpoint("truncated agent type".into()))?;
    if byte[0] != AGENT_TYPE_CONSTRAINED_Q {
        return Err(OfflineError::BadCheckpoint(format!(
            "unsupported agent type {}",
            byte[0]
        )));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)
        .map_err(|_| OfflineError::BadCheckpoint("truncated fingerprint".into()))?;
    let fingerprint = u64::from_le_bytes(u64buf);
    let qnet = Mlp::read_from(&mut r)?;

    r.read_exact(&mut u64buf)
        .map_err(|_| OfflineError::BadCheckpoint("truncated support threshold".into()))?;
    let eps = f64::from_le_bytes(u64buf);
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)
        .map_err(|_| OfflineError::BadCheckpoint("truncated action count".into()))?;
    let num_actions = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut byte)
        .map_err(|_| OfflineError::BadCheckpoint("truncated behavior mode".into()))?;

    let behavior = match byte[0] {
        0 => {
            r.read_exact(&mut u32buf)
                .map_err(|_| OfflineError::BadCheckpoint("truncated keyer".into()))?;
            let aos_cap = u32::from_le_bytes(u32buf);
            r.read_exact(&mut u32buf)
                .map_err(|_| OfflineError::BadCheckpoint("truncated keyer".into()))?;
            let num_relays = u32::from_le_bytes(u32buf) as usize;
            r.read_exact(&mut u64buf)
                .map_err(|_| OfflineError::BadCheckpoint("truncated keyer".into()))?;
            let gain_lo = f64::from_le_bytes(u64buf);
            r.read_exact(&mut u64buf)
                .map_err(|_| OfflineError::BadCheckpoint("truncated keyer".into()))?;
            let gain_hi = f64::from_le_bytes(u64buf);
            r.read_exact(&mut u64buf)
                .map_err(|_| OfflineError::BadCheckpoint("truncated table length".into()))?;
            let count = u64::from_le_bytes(u64buf);
            let mut freqs = std::collections::BTreeMap::new();
            for _ in 0..count {
                r.read_exact(&mut u64buf)
                    .map_err(|_| OfflineError::BadCheckpoint("truncated table".into()))?;
                let key = u64::from_le_bytes(u64buf);
                let mut probs = vec![0.0; num_actions];
                for p in probs.iter_mut() {
                    r.read_exact(&mut u64buf)
                        .map_err(|_| OfflineError::BadCheckpoint("truncated table".into()))?;
                    *p = f64::from_le_bytes(u64buf);
                }
                freqs.insert(key, probs);
            }
            let keyer = StateKeyer {
                aos_cap,
                num_relays,
                gain_lo,
                gain_hi,
            };
            BehaviorModel::from_tabular_parts(eps, num_actions, keyer, freqs)
        }
        1 => {
            let net = Mlp::read_from(&mut r)?;
            BehaviorModel::from_neural_parts(eps, num_actions, net)
        }
        other => {
            return Err(OfflineError::BadCheckpoint(format!(
                "unknown behavior mode {other}"
            )))
        }
    };
    Ok((qnet, behavior, fingerprint))
}
