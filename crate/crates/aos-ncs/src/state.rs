//! Domain types shared by the whole crate: actions, controller observations,
//! experience tuples, and the feature encoding fed to function approximators.

use thiserror::Error;

use crate::config::SystemConfig;
use crate::radio;

/// Joint sampling and routing decision taken once per slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    /// Do not sample this slot.
    Idle,
    /// Sample the process and route the update through the given relay.
    Sample(usize),
}

impl Action {
    /// Dense index: 0 is idle, `1 + k` samples via relay `k`.
    pub fn index(self) -> usize {
        match self {
            Action::Idle => 0,
            Action::Sample(k) => 1 + k,
        }
    }

    pub fn from_index(index: usize, num_relays: usize) -> Result<Self, StateError> {
        match index {
            0 => Ok(Action::Idle),
            k if k <= num_relays => Ok(Action::Sample(k - 1)),
            _ => Err(StateError::BadActionIndex { index, num_relays }),
        }
    }

    pub fn is_valid(self, num_relays: usize) -> bool {
        match self {
            Action::Idle => true,
            Action::Sample(k) => k < num_relays,
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Idle => write!(f, "idle"),
            Action::Sample(k) => write!(f, "sample-relay-{k}"),
        }
    }
}

/// What the controller observes at a decision point: its age-of-semantics
/// counter, the effective gains of every link for the upcoming slot, and the
/// relay used by the most recent sample action.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    /// Age in whole slots; at least 1, saturating at the configured cap.
    pub aos_slots: u32,
    pub gains_sr: Vec<f64>,
    pub gains_rc: Vec<f64>,
    /// Relay of the most recent sample action, if any.
    pub association: Option<usize>,
}

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("aos_slots {aos} outside [1, {cap}]")]
    AosOutOfRange { aos: u32, cap: u32 },
    #[error("expected {expected} gains per direction, got {got}")]
    GainCount { expected: usize, got: usize },
    #[error("gain {value} at position {index} is negative or non-finite")]
    BadGain { index: usize, value: f64 },
    #[error("association {assoc} out of range for {num_relays} relays")]
    BadAssociation { assoc: usize, num_relays: usize },
    #[error("action index {index} out of range for {num_relays} relays")]
    BadActionIndex { index: usize, num_relays: usize },
}

impl EnvState {
    pub fn check(&self, cfg: &SystemConfig) -> Result<(), StateError> {
        if self.aos_slots < 1 || self.aos_slots > cfg.aos_cap_slots {
            return Err(StateError::AosOutOfRange {
                aos: self.aos_slots,
                cap: cfg.aos_cap_slots,
            });
        }
        for gains in [&self.gains_sr, &self.gains_rc] {
            if gains.len() != cfg.num_relays {
                return Err(StateError::GainCount {
                    expected: cfg.num_relays,
                    got: gains.len(),
                });
            }
            for (i, &g) in gains.iter().enumerate() {
                if !g.is_finite() || g < 0.0 {
                    return Err(StateError::BadGain { index: i, value: g });
                }
            }
        }
        if let Some(a) = self.association {
            if a >= cfg.num_relays {
                return Err(StateError::BadAssociation {
                    assoc: a,
                    num_relays: cfg.num_relays,
                });
            }
        }
        Ok(())
    }

    /// Age in seconds.
    pub fn aos_seconds(&self, cfg: &SystemConfig) -> f64 {
        f64::from(self.aos_slots) * cfg.tau_s
    }
}

/// One interaction record: the unit of the offline dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: EnvState,
    pub action: Action,
    pub reward: f64,
    pub next_state: EnvState,
}

/// Encode a state as a fixed-length feature vector:
/// normalized age, one log-compressed SNR feature per link (value 1.0 at the
/// single-hop feasibility threshold), and a one-hot of the association with
/// the final slot meaning "none". Length is `1 + 2R + (R + 1)`.
pub fn encode_state(s: &EnvState, cfg: &SystemConfig) -> Result<Vec<f64>, StateError> {
    s.check(cfg)?;
    let mut features = Vec::with_capacity(cfg.feature_len());
    features.push(f64::from(s.aos_slots) / f64::from(cfg.aos_cap_slots));

    let g_ref = radio::reference_gain(cfg);
    let snr_star = radio::required_snr(cfg, cfg.hop1_fraction * cfg.tau_s);
    let denom = snr_star.ln_1p();
    for &g in s.gains_sr.iter().chain(s.gains_rc.iter()) {
        features.push((g / g_ref).ln_1p() / denom);
    }

    let assoc_slot = s.association.unwrap_or(cfg.num_relays);
    for k in 0..=cfg.num_relays {
        features.push(if k == assoc_slot { 1.0 } else { 0.0 });
    }
    debug_assert_eq!(features.len(), cfg.feature_len());
    Ok(features)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SystemConfig {
        SystemConfig::default()
    }

    fn state(aos: u32, assoc: Option<usize>) -> EnvState {
        EnvState {
            aos_slots: aos,
            gains_sr: vec![0.0; 5],
            gains_rc: vec![0.0; 5],
            association: assoc,
        }
    }

    #[test]
    fn action_index_round_trip_and_count() {
        let c = cfg();
        assert_eq!(c.num_actions(), 6);
        for i in 0..c.num_actions() {
            let a = Action::from_index(i, c.num_relays).unwrap();
            assert_eq!(a.index(), i);
            assert!(a.is_valid(c.num_relays));
        }
        assert!(Action::from_index(6, 5).is_err());
    }

    #[test]
    fn feature_vector_has_expected_length() {
        let c = cfg();
        let f = encode_state(&state(10, None), &c).unwrap();
        assert_eq!(f.len(), 17);
        assert_eq!(f.len(), c.feature_len());
    }

    #[test]
    fn age_at_cap_encodes_to_one() {
        let c = cfg();
        let f = encode_state(&state(c.aos_cap_slots, None), &c).unwrap();
        assert_eq!(f[0], 1.0);
    }

    #[test]
    fn zero_gains_and_no_association() {
        let c = cfg();
        let f = encode_state(&state(1, None), &c).unwrap();
        assert!(f[1..11].iter().all(|&x| x == 0.0));
        assert_eq!(f[16], 1.0); // "none" slot
        assert!(f[11..16].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn threshold_gain_encodes_near_one() {
        let c = cfg();
        let g_star = radio::required_gain(&c, 0.05);
        let mut s = state(1, Some(2));
        s.gains_sr[0] = g_star;
        let f = encode_state(&s, &c).unwrap();
        assert!((f[1] - 1.0).abs() < 1e-9, "threshold feature {}", f[1]);
        assert_eq!(f[11 + 2], 1.0);
    }

    #[test]
    fn encoding_is_injective_on_age_and_association() {
        let c = cfg();
        let mut seen = Vec::new();
        for aos in 1..=c.aos_cap_slots {
            for assoc in std::iter::once(None).chain((0..c.num_relays).map(Some)) {
                let f = encode_state(&state(aos, assoc), &c).unwrap();
                assert!(!seen.contains(&f), "collision at aos={aos}, assoc={assoc:?}");
                seen.push(f);
            }
        }
    }

    #[test]
    fn invalid_states_are_rejected() {
        let c = cfg();
        assert!(encode_state(&state(0, None), &c).is_err());
        assert!(encode_state(&state(c.aos_cap_slots + 1, None), &c).is_err());
        let mut s = state(1, None);
        s.gains_sr[3] = f64::NAN;
        assert!(encode_state(&s, &c).is_err());
        let mut s2 = state(1, Some(7));
        s2.association = Some(7);
        assert!(encode_state(&s2, &c).is_err());
    }
}
