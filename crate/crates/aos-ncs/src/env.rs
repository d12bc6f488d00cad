//! The single-agent decision process: one step per slot, composing the
//! process chain, the radio links, the inference outcome, age bookkeeping
//! and the reward signal.
//!
//! Slot pipeline, in order:
//! 1. execute the action against the links drawn at the end of the previous
//!    slot (the policy acts on the channels it actually transmits over);
//! 2. update the age counter: reset to 1 slot on a perfect inference,
//!    otherwise increment and saturate at the cap;
//! 3. advance the process chain and draw fresh links for the next slot;
//! 4. reward is `-(w_aos * age_seconds + w_energy * sensor_energy)`.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, SystemConfig};
use crate::process::ProcessChain;
use crate::radio;
use crate::rng::{derive_seed, derive_stream, Stream};
use crate::state::{Action, EnvState, StateError};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid action: {0}")]
    InvalidAction(StateError),
    #[error("trajectory io: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-step observability for metrics; not part of the controller state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub delivered: bool,
    pub perfect_inference: bool,
    pub energy_j: f64,
    pub aos_seconds: f64,
}

/// A decision policy over controller observations. Implementations must be
/// usable from parallel evaluation workers, so `act` takes `&self` and all
/// randomness comes through the supplied stream.
pub trait Policy: Sync {
    fn act(&self, state: &EnvState, rng: &mut Stream) -> Action;
}

/// The environment: configuration, the hidden process chain, the current
/// controller observation, and one RNG stream per noise source.
pub struct NcsEnv {
    cfg: SystemConfig,
    chain: ProcessChain,
    state: EnvState,
    channel_rng: Stream,
    inference_rng: Stream,
    process_rng: Stream,
}

impl NcsEnv {
    pub fn new(cfg: SystemConfig, seed: u64) -> Result<Self, EnvError> {
        let cfg = cfg.validated()?;
        let mut process_rng = derive_stream(seed, "process", 0);
        let mut channel_rng = derive_stream(seed, "channel", 0);
        let chain =
            ProcessChain::with_uniform_start(cfg.num_process_states, cfg.alpha, &mut process_rng);
        let links = radio::draw_links(&cfg, &mut channel_rng);
        let state = EnvState {
            aos_slots: cfg.aos_cap_slots,
            gains_sr: links.gains_sr,
            gains_rc: links.gains_rc,
            association: None,
        };
        Ok(Self {
            inference_rng: derive_stream(seed, "inference", 0),
            cfg,
            chain,
            state,
            channel_rng,
            process_rng,
        })
    }

    /// Reinitialize: uniformly drawn process state, fully stale age counter,
    /// no association, fresh links. Deterministic in `seed`.
    pub fn reset(&mut self, seed: u64) -> EnvState {
        self.process_rng = derive_stream(seed, "process", 0);
        self.channel_rng = derive_stream(seed, "channel", 0);
        self.inference_rng = derive_stream(seed, "inference", 0);
        self.chain = ProcessChain::with_uniform_start(
            self.cfg.num_process_states,
            self.cfg.alpha,
            &mut self.process_rng,
        );
        let links = radio::draw_links(&self.cfg, &mut self.channel_rng);
        self.state = EnvState {
            aos_slots: self.cfg.aos_cap_slots,
            gains_sr: links.gains_sr,
            gains_rc: links.gains_rc,
            association: None,
        };
        self.state.clone()
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Index of the hidden process state; exposed for diagnostics only, the
    /// controller never observes it.
    pub fn process_state(&self) -> usize {
        self.chain.current
    }

    /// Advance one slot. The invalid-action check happens before any state
    /// mutation.
    pub fn step(&mut self, action: Action) -> Result<(EnvState, f64, StepInfo), EnvError> {
        if !action.is_valid(self.cfg.num_relays) {
            return Err(EnvError::InvalidAction(StateError::BadActionIndex {
                index: action.index(),
                num_relays: self.cfg.num_relays,
            }));
        }

        let (delivered, energy_j, sampled_relay) = match action {
            Action::Idle => (false, 0.0, None),
            Action::Sample(k) => {
                let links = radio::LinkRealization {
                    gains_sr: self.state.gains_sr.clone(),
                    gains_rc: self.state.gains_rc.clone(),
                };
                let outcome = radio::two_hop_outcome(&links, k, &self.cfg);
                (outcome.delivered, outcome.sensor_energy_j, Some(k))
            }
        };
        // A delivered sample yields a perfect inference with probability
        // beta. The draw is consumed only on delivery so idle slots do not
        // advance the inference stream.
        let perfect_inference = delivered && self.inference_rng.random::<f64>() < self.cfg.beta;

        let aos_slots = if perfect_inference {
            1
        } else {
            (self.state.aos_slots + 1).min(self.cfg.aos_cap_slots)
        };

        self.chain.step(&mut self.process_rng);
        let links = radio::draw_links(&self.cfg, &mut self.channel_rng);
        let association = sampled_relay.or(self.state.association);

        self.state = EnvState {
            aos_slots,
            gains_sr: links.gains_sr,
            gains_rc: links.gains_rc,
            association,
        };

        let aos_seconds = f64::from(aos_slots) * self.cfg.tau_s;
        let reward = -(self.cfg.reward_weight_aos * aos_seconds
            + self.cfg.reward_weight_energy * energy_j);
        let info = StepInfo {
            delivered,
            perfect_inference,
            energy_j,
            aos_seconds,
        };
        Ok((self.state.clone(), reward, info))
    }
}

/// Per-step averages from rolling a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub avg_reward: f64,
    pub avg_aos_s: f64,
    pub avg_energy_j: f64,
    pub num_realizations: usize,
}

/// Roll `policy` for `num_realizations` steps spread over
/// `cfg.eval_episodes` independent episodes and average per step.
/// Episodes run in parallel but are combined in a fixed order, so the result
/// is bit-identical for a given `(config, seed, policy)`.
pub fn evaluate_policy(
    cfg: &SystemConfig,
    policy: &dyn Policy,
    num_realizations: usize,
    seed: u64,
) -> Result<EvalSummary, EnvError> {
    assert!(num_realizations >= 1);
    let episodes = cfg.eval_episodes.max(1).min(num_realizations);
    let base = num_realizations / episodes;
    let remainder = num_realizations % episodes;

    let partials: Result<Vec<(f64, f64, f64)>, EnvError> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let steps = base + usize::from(e < remainder);
            let mut env = NcsEnv::new(cfg.clone(), derive_seed(seed, "eval-episode", e as u64))?;
            let mut policy_rng = derive_stream(seed, "eval-policy", e as u64);
            let (mut r, mut a, mut en) = (0.0, 0.0, 0.0);
            let mut state = env.state().clone();
            for _ in 0..steps {
                let action = policy.act(&state, &mut policy_rng);
                let (next, reward, info) = env.step(action)?;
                r += reward;
                a += info.aos_seconds;
                en += info.energy_j;
                state = next;
            }
            Ok((r, a, en))
        })
        .collect();

    let partials = partials?;
    let (mut r, mut a, mut en) = (0.0, 0.0, 0.0);
    for (pr, pa, pe) in partials {
        r += pr;
        a += pa;
        en += pe;
    }
    let n = num_realizations as f64;
    Ok(EvalSummary {
        avg_reward: r / n,
        avg_aos_s: a / n,
        avg_energy_j: en / n,
        num_realizations,
    })
}

/// Roll a policy and write one comma-separated record per step.
pub fn write_trajectory(
    cfg: &SystemConfig,
    policy: &dyn Policy,
    steps: usize,
    seed: u64,
    out: &mut dyn Write,
) -> Result<(), EnvError> {
    let mut env = NcsEnv::new(cfg.clone(), derive_seed(seed, "trajectory", 0))?;
    let mut policy_rng = derive_stream(seed, "trajectory-policy", 0);
    writeln!(
        out,
        "t,action,delivered,perfect_inference,aos_slots,energy_j,reward"
    )?;
    let mut state = env.state().clone();
    for t in 0..steps {
        let action = policy.act(&state, &mut policy_rng);
        let (next, reward, info) = env.step(action)?;
        writeln!(
            out,
            "{t},{},{},{},{},{},{}",
            action.index(),
            u8::from(info.delivered),
            u8::from(info.perfect_inference),
            next.aos_slots,
            info.energy_j,
            reward
        )?;
        state = next;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SystemConfig {
        SystemConfig::default()
    }

    /// Config whose channels always support both hops.
    fn forced_feasible() -> SystemConfig {
        SystemConfig {
            path_loss_sr: 1.0,
            path_loss_rc: 1.0,
            ..cfg()
        }
    }

    struct Always(Action);
    impl Policy for Always {
        fn act(&self, _state: &EnvState, _rng: &mut Stream) -> Action {
            self.0
        }
    }

    #[test]
    fn reset_starts_fully_stale() {
        let mut env = NcsEnv::new(cfg(), 1).unwrap();
        let s = env.reset(2);
        assert_eq!(s.aos_slots, 50);
        assert_eq!(s.association, None);
    }

    #[test]
    fn resets_with_same_seed_are_identical() {
        let mut env = NcsEnv::new(cfg(), 1).unwrap();
        let a = env.reset(77);
        let chain_a = env.process_state();
        let b = env.reset(77);
        assert_eq!(a, b);
        assert_eq!(chain_a, env.process_state());
    }

    #[test]
    fn reset_chain_state_is_uniform_within_three_percent() {
        let mut env = NcsEnv::new(cfg(), 0).unwrap();
        let n = 10_000;
        let mut counts = vec![0u32; 9];
        for i in 0..n {
            env.reset(i as u64);
            counts[env.process_state()] += 1;
        }
        for (s, &c) in counts.iter().enumerate() {
            let freq = f64::from(c) / f64::from(n);
            assert!(
                (freq - 1.0 / 9.0).abs() < 0.03,
                "state {s} frequency {freq}"
            );
        }
    }

    #[test]
    fn idle_increments_age_and_costs_no_energy() {
        let mut c = cfg();
        c.aos_cap_slots = 50;
        let mut env = NcsEnv::new(c, 3).unwrap();
        // Drive the age to a known value first: idle from the cap keeps it
        // there, so reset and walk down via a forced perfect inference is
        // not available here; instead verify the increment rule from 50
        // (saturation) and from 5 (fresh counter built by hand).
        let (s, _, _) = env.step(Action::Idle).unwrap();
        assert_eq!(s.aos_slots, 50, "cap saturates");

        // Now exercise the non-saturated path on a tiny cap.
        let mut c2 = cfg();
        c2.aos_cap_slots = 10;
        let mut env2 = NcsEnv::new(c2, 3).unwrap();
        env2.state.aos_slots = 5;
        let (s2, reward, info) = env2.step(Action::Idle).unwrap();
        assert_eq!(s2.aos_slots, 6);
        assert_eq!(info.energy_j, 0.0);
        assert!(!info.delivered);
        assert!((reward - -(1.0 * 0.6)).abs() < 1e-12, "reward {reward}");
    }

    #[test]
    fn perfect_inference_resets_age_to_one_slot() {
        let mut c = forced_feasible();
        c.beta = 1.0;
        let mut env = NcsEnv::new(c, 4).unwrap();
        let (s, _, info) = env.step(Action::Sample(2)).unwrap();
        assert!(info.delivered);
        assert!(info.perfect_inference);
        assert_eq!(s.aos_slots, 1);
        assert_eq!(s.association, Some(2));
    }

    #[test]
    fn association_persists_through_idle() {
        let mut c = forced_feasible();
        c.beta = 1.0;
        let mut env = NcsEnv::new(c, 4).unwrap();
        env.step(Action::Sample(3)).unwrap();
        let (s, _, _) = env.step(Action::Idle).unwrap();
        assert_eq!(s.association, Some(3));
    }

    #[test]
    fn invalid_action_rejected_before_mutation() {
        let mut env = NcsEnv::new(cfg(), 5).unwrap();
        let before = env.state().clone();
        assert!(env.step(Action::Sample(5)).is_err());
        assert_eq!(*env.state(), before);
    }

    #[test]
    fn always_sampling_under_certain_inference_pins_age_at_one_slot() {
        // With beta = 1 and channels that never fail, the age counter is 1
        // after every step, so the long-run average age is exactly one slot.
        let mut c = forced_feasible();
        c.beta = 1.0;
        let summary = evaluate_policy(&c, &Always(Action::Sample(0)), 5_000, 9).unwrap();
        assert!(
            (summary.avg_aos_s - c.tau_s).abs() < 1e-12,
            "avg aos {}",
            summary.avg_aos_s
        );
    }

    #[test]
    fn idle_policy_has_zero_energy_and_saturated_age() {
        let c = cfg();
        let summary = evaluate_policy(&c, &Always(Action::Idle), 20_000, 10).unwrap();
        assert_eq!(summary.avg_energy_j, 0.0);
        // Age saturates at the cap after the first steps; the average
        // approaches cap * tau from below.
        let cap_s = f64::from(c.aos_cap_slots) * c.tau_s;
        assert!(summary.avg_aos_s > 0.999 * cap_s && summary.avg_aos_s <= cap_s);
    }

    #[test]
    fn average_reward_equals_weighted_average_costs() {
        let c = cfg();
        let policy = Always(Action::Sample(1));
        let s = evaluate_policy(&c, &policy, 10_000, 11).unwrap();
        let recombined = -(c.reward_weight_aos * s.avg_aos_s
            + c.reward_weight_energy * s.avg_energy_j);
        assert!((s.avg_reward - recombined).abs() < 1e-9);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let c = cfg();
        let a = evaluate_policy(&c, &Always(Action::Sample(0)), 5_000, 13).unwrap();
        let b = evaluate_policy(&c, &Always(Action::Sample(0)), 5_000, 13).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trajectories_with_same_seed_are_identical() {
        let c = cfg();
        let mut out_a = Vec::new();
        let mut out_b = Vec::new();
        write_trajectory(&c, &Always(Action::Sample(0)), 200, 21, &mut out_a).unwrap();
        write_trajectory(&c, &Always(Action::Sample(0)), 200, 21, &mut out_b).unwrap();
        assert_eq!(out_a, out_b);
        assert_eq!(out_a.split(|&b| b == b'\n').count(), 202);
    }

    #[test]
    fn reward_is_never_positive_with_nonnegative_weights() {
        let c = cfg();
        let mut env = NcsEnv::new(c, 22).unwrap();
        let mut rng = derive_stream(22, "test-actions", 0);
        for _ in 0..2_000 {
            let a = Action::from_index(rng.random_range(0..6), 5).unwrap();
            let (_, reward, _) = env.step(a).unwrap();
            assert!(reward <= 0.0 && reward.is_finite());
        }
    }
}
