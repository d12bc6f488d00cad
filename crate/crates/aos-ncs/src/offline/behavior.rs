//! Empirical behavior policy of a static dataset, and the support sets it
//! induces.
//!
//! Two representations are available: exact frequency counting over a
//! discretized state key (the oracle-friendly mode), and a softmax
//! classifier cloned from the data (the default at full scale, where almost
//! every continuous state is unique and counting degenerates).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::SystemConfig;
use crate::net::{AdamState, Mlp, MlpGrads};
use crate::rng::derive_stream;
use crate::state::{encode_state, EnvState, Experience};

use super::OfflineError;

/// How the behavior distribution is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BehaviorMode {
    /// Exact action frequencies per discretized state key.
    TabularCount,
    /// Cross-entropy cloning with a softmax network.
    NeuralCloning,
}

/// Discretization used by the tabular mode: ten age levels, the association
/// index, and a three-level bucket of the best relay pair's bottleneck gain
/// (thresholds are the dataset's tercile points of that statistic).
#[derive(Debug, Clone, PartialEq)]
pub struct StateKeyer {
    pub aos_cap: u32,
    pub num_relays: usize,
    pub gain_lo: f64,
    pub gain_hi: f64,
}

impl StateKeyer {
    /// Bottleneck gain of the best relay pair: the decision-relevant channel
    /// summary of a state.
    pub fn pair_stat(state: &EnvState) -> f64 {
        state
            .gains_sr
            .iter()
            .zip(&state.gains_rc)
            .map(|(&a, &b)| a.min(b))
            .fold(0.0f64, f64::max)
    }

    pub fn from_dataset(records: &[Experience], cfg: &SystemConfig) -> Self {
        let mut stats: Vec<f64> = records.iter().map(|e| Self::pair_stat(&e.state)).collect();
        stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pick = |q: f64| -> f64 {
            if stats.is_empty() {
                0.0
            } else {
                stats[((stats.len() as f64 * q) as usize).min(stats.len() - 1)]
            }
        };
        Self {
            aos_cap: cfg.aos_cap_slots,
            num_relays: cfg.num_relays,
            gain_lo: pick(1.0 / 3.0),
            gain_hi: pick(2.0 / 3.0),
        }
    }

    pub fn key(&self, state: &EnvState) -> u64 {
        let aos_bucket = (u64::from(state.aos_slots - 1) * 10 / u64::from(self.aos_cap)).min(9);
        let assoc = state.association.unwrap_or(self.num_relays) as u64;
        let stat = Self::pair_stat(state);
        let gain_bucket = if stat < self.gain_lo {
            0
        } else if stat < self.gain_hi {
            1
        } else {
            2
        };
        (aos_bucket * (self.num_relays as u64 + 1) + assoc) * 3 + gain_bucket
    }
}

#[derive(Debug, Clone)]
enum BehaviorRepr {
    Tabular {
        keyer: StateKeyer,
        /// Normalized action frequencies per key.
        freqs: BTreeMap<u64, Vec<f64>>,
    },
    Neural {
        net: Mlp,
    },
}

/// The empirical policy of a dataset together with its support rule:
/// an action is in-support at a state when its estimated probability is at
/// least `epsilon_support` times the most likely action's.
#[derive(Debug, Clone)]
pub struct BehaviorModel {
    pub epsilon_support: f64,
    num_actions: usize,
    repr: BehaviorRepr,
}

impl BehaviorModel {
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn mode(&self) -> BehaviorMode {
        match self.repr {
            BehaviorRepr::Tabular { .. } => BehaviorMode::TabularCount,
            BehaviorRepr::Neural { .. } => BehaviorMode::NeuralCloning,
        }
    }

    /// Estimated action distribution at a state. Tabular keys never seen in
    /// the dataset fall back to uniform (no information, nothing excluded).
    pub fn probs(&self, state: &EnvState, features: &[f64]) -> Vec<f64> {
        match &self.repr {
            BehaviorRepr::Tabular { keyer, freqs } => freqs
                .get(&keyer.key(state))
                .cloned()
                .unwrap_or_else(|| vec![1.0 / self.num_actions as f64; self.num_actions]),
            BehaviorRepr::Neural { net } => {
                softmax(&net.forward(features).expect("feature length fixed"))
            }
        }
    }

    /// Support mask at a state; nonempty by construction since the argmax
    /// action always passes its own threshold.
    pub fn support(&self, state: &EnvState, features: &[f64]) -> Vec<bool> {
        support_from_probs(&self.probs(state, features), self.epsilon_support)
    }

    pub(crate) fn into_parts(self) -> (f64, usize, Option<(StateKeyer, BTreeMap<u64, Vec<f64>>)>, Option<Mlp>) {
        match self.repr {
            BehaviorRepr::Tabular { keyer, freqs } => {
                (self.epsilon_support, self.num_actions, Some((keyer, freqs)), None)
            }
            BehaviorRepr::Neural { net } => (self.epsilon_support, self.num_actions, None, Some(net)),
        }
    }

    pub(crate) fn from_tabular_parts(
        epsilon_support: f64,
        num_actions: usize,
        keyer: StateKeyer,
        freqs: BTreeMap<u64, Vec<f64>>,
    ) -> Self {
        Self {
            epsilon_support,
            num_actions,
            repr: BehaviorRepr::Tabular { keyer, freqs },
        }
    }

    pub(crate) fn from_neural_parts(epsilon_support: f64, num_actions: usize, net: Mlp) -> Self {
        Self {
            epsilon_support,
            num_actions,
            repr: BehaviorRepr::Neural { net },
        }
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Actions whose probability reaches `eps` times the maximum.
pub fn support_from_probs(probs: &[f64], eps: f64) -> Vec<bool> {
    let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    probs.iter().map(|&p| p >= eps * max).collect()
}

/// Estimate the empirical policy of `records`.
pub fn fit_behavior(
    records: &[Experience],
    cfg: &SystemConfig,
    mode: BehaviorMode,
    seed: u64,
) -> Result<BehaviorModel, OfflineError> {
    if records.is_empty() {
        return Err(OfflineError::EmptyDataset);
    }
    let num_actions = cfg.num_actions();
    match mode {
        BehaviorMode::TabularCount => {
            let keyer = StateKeyer::from_dataset(records, cfg);
            let mut counts: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for e in records {
                let row = counts
                    .entry(keyer.key(&e.state))
                    .or_insert_with(|| vec![0.0; num_actions]);
                row[e.action.index()] += 1.0;
            }
            for row in counts.values_mut() {
                let total: f64 = row.iter().sum();
                for p in row.iter_mut() {
                    *p /= total;
                }
            }
            Ok(BehaviorModel {
                epsilon_support: cfg.epsilon_support,
                num_actions,
                repr: BehaviorRepr::Tabular {
                    keyer,
                    freqs: counts,
                },
            })
        }
        BehaviorMode::NeuralCloning => {
            let net = clone_behavior_net(records, cfg, seed)?;
            Ok(BehaviorModel {
                epsilon_support: cfg.epsilon_support,
                num_actions,
                repr: BehaviorRepr::Neural { net },
            })
        }
    }
}

/// Cross-entropy cloning until the held-out loss plateaus.
fn clone_behavior_net(
    records: &[Experience],
    cfg: &SystemConfig,
    seed: u64,
) -> Result<Mlp, OfflineError> {
    let num_actions = cfg.num_actions();
    let mut rng = derive_stream(seed, "behavior-clone", 0);

    let mut encoded: Vec<(Vec<f64>, usize)> = Vec::with_capacity(records.len());
    for e in records {
        encoded.push((encode_state(&e.state, cfg)?, e.action.index()));
    }
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    order.shuffle(&mut rng);
    let val_len = (encoded.len() / 10).max(1).min(encoded.len() - 1);
    let (val_idx, train_idx) = order.split_at(val_len);

    let mut net = Mlp::new(cfg.feature_len(), cfg.hidden_dim, num_actions, &mut rng);
    let mut opt = AdamState::new(&net, 3e-3);
    let batch = 256.min(train_idx.len());

    let val_loss = |net: &Mlp| -> f64 {
        let mut loss = 0.0;
        for &i in val_idx {
            let (x, a) = &encoded[i];
            let p = softmax(&net.forward(x).expect("dims"));
            loss -= p[*a].max(1e-300).ln();
        }
        loss / val_idx.len() as f64
    };

    let mut best = f64::INFINITY;
    let mut stale_epochs = 0usize;
    let steps_per_epoch = (train_idx.len() / batch).max(1);
    for _epoch in 0..200 {
        for _ in 0..steps_per_epoch {
            let mut grads = MlpGrads::zeros_like(&net);
            for _ in 0..batch {
                let i = train_idx[rng.random_range(0..train_idx.len())];
                let (x, a) = &encoded[i];
                let probs = softmax(&net.forward(x).expect("dims"));
                let mut upstream = probs;
                upstream[*a] -= 1.0;
                for u in upstream.iter_mut() {
                    *u /= batch as f64;
                }
                grads.add(&net.backward(x, &upstream)?);
            }
            opt.step(&mut net, &grads)?;
        }
        let loss = val_loss(&net);
        if loss < best - 1e-4 {
            best = loss;
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= 5 {
                break;
            }
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::Action;

    fn state_with(aos: u32, assoc: Option<usize>, gain: f64) -> EnvState {
        EnvState {
            aos_slots: aos,
            gains_sr: vec![gain; 5],
            gains_rc: vec![gain; 5],
            association: assoc,
        }
    }

    fn experience(aos: u32, action: Action) -> Experience {
        let s = state_with(aos, None, 0.0);
        Experience {
            state: s.clone(),
            action,
            reward: -0.1,
            next_state: s,
        }
    }

    #[test]
    fn counting_matches_observed_frequencies() {
        let cfg = SystemConfig::default();
        // One key observed four times with actions (2, 2, 2, 0).
        let records = vec![
            experience(1, Action::Sample(1)),
            experience(1, Action::Sample(1)),
            experience(1, Action::Sample(1)),
            experience(1, Action::Idle),
        ];
        let model = fit_behavior(&records, &cfg, BehaviorMode::TabularCount, 0).unwrap();
        let feats = encode_state(&records[0].state, &cfg).unwrap();
        let probs = model.probs(&records[0].state, &feats);
        assert!((probs[0] - 0.25).abs() < 1e-12);
        assert!((probs[2] - 0.75).abs() < 1e-12);
        assert!(probs[1].abs() < 1e-12);
    }

    #[test]
    fn single_action_dataset_supports_only_that_action() {
        let cfg = SystemConfig::default();
        let records: Vec<Experience> =
            (0..10).map(|_| experience(5, Action::Sample(3))).collect();
        let model = fit_behavior(&records, &cfg, BehaviorMode::TabularCount, 0).unwrap();
        let feats = encode_state(&records[0].state, &cfg).unwrap();
        let support = model.support(&records[0].state, &feats);
        assert_eq!(support, vec![false, false, false, false, true, false]);
    }

    #[test]
    fn empty_dataset_rejected() {
        let cfg = SystemConfig::default();
        assert!(matches!(
            fit_behavior(&[], &cfg, BehaviorMode::TabularCount, 0),
            Err(OfflineError::EmptyDataset)
        ));
    }

    #[test]
    fn unseen_key_falls_back_to_uniform_support() {
        let cfg = SystemConfig::default();
        let records = vec![experience(1, Action::Idle)];
        let model = fit_behavior(&records, &cfg, BehaviorMode::TabularCount, 0).unwrap();
        let unseen = state_with(50, Some(4), 0.0);
        let feats = encode_state(&unseen, &cfg).unwrap();
        assert!(model.support(&unseen, &feats).iter().all(|&b| b));
    }

    #[test]
    fn support_rule_is_relative_to_the_maximum() {
        let probs = [0.5, 0.04, 0.46, 0.0];
        let support = support_from_probs(&probs, 0.1);
        assert_eq!(support, vec![true, false, true, false]);
    }

    #[test]
    fn keyer_buckets_age_into_ten_levels() {
        let cfg = SystemConfig::default();
        let keyer = StateKeyer {
            aos_cap: cfg.aos_cap_slots,
            num_relays: cfg.num_relays,
            gain_lo: 0.0,
            gain_hi: 0.0,
        };
        let key_of = |aos| keyer.key(&state_with(aos, None, 1.0));
        assert_eq!(key_of(1), key_of(5));
        assert_ne!(key_of(5), key_of(6));
        assert_eq!(key_of(46), key_of(50));
    }

    #[test]
    fn neural_clone_recovers_tabular_distributions() {
        // Dataset generated from known per-key action distributions; the
        // exact counts are the oracle the clone must approach in total
        // variation.
        let mut cfg = SystemConfig::default();
        cfg.hidden_dim = 32;
        let mut rng = derive_stream(11, "behavior-test", 0);
        let contexts: Vec<(EnvState, Vec<f64>)> = vec![
            (state_with(1, None, 0.0), vec![0.7, 0.3, 0.0, 0.0, 0.0, 0.0]),
            (state_with(25, Some(2), 0.0), vec![0.1, 0.0, 0.8, 0.0, 0.1, 0.0]),
            (state_with(50, Some(4), 0.0), vec![0.0, 0.0, 0.0, 0.5, 0.0, 0.5]),
        ];
        let mut records = Vec::new();
        for _ in 0..3000 {
            let (s, dist) = &contexts[rng.random_range(0..contexts.len())];
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut action = 0;
            for (i, p) in dist.iter().enumerate() {
                acc += p;
                if u < acc {
                    action = i;
                    break;
                }
            }
            records.push(Experience {
                state: s.clone(),
                action: Action::from_index(action, cfg.num_relays).unwrap(),
                reward: -0.1,
                next_state: s.clone(),
            });
        }
        let counted = fit_behavior(&records, &cfg, BehaviorMode::TabularCount, 1).unwrap();
        let cloned = fit_behavior(&records, &cfg, BehaviorMode::NeuralCloning, 1).unwrap();
        let mut tv_sum = 0.0;
        for (s, _) in &contexts {
            let feats = encode_state(s, &cfg).unwrap();
            let p = counted.probs(s, &feats);
            let q = cloned.probs(s, &feats);
            let tv = 0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>();
            tv_sum += tv;
        }
        let avg_tv = tv_sum / contexts.len() as f64;
        assert!(avg_tv < 0.05, "average total variation {avg_tv}");
    }
}
