//! System configuration: every tunable of the simulator and the learning
//! stack in one flat struct, loadable from a `key = value` text file.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: cannot parse value {value:?} for key {key:?}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
}

/// Full system configuration. Units are SI throughout: seconds, Hz, Watts,
/// Joules, bits. Probabilities are plain fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Number of states of the physical process chain.
    pub num_process_states: usize,
    /// Self-transition probability of the process chain.
    pub alpha: f64,
    /// Probability that a delivered status update yields an accurate
    /// inference at the controller.
    pub beta: f64,
    /// Slot duration in seconds.
    pub tau_s: f64,
    /// Number of half-duplex relays.
    pub num_relays: usize,
    /// Number of reflecting elements of the surface.
    pub num_irs_elements: usize,
    /// System bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Maximum transmit power (sensor and relays) in Watts.
    pub tx_power_w: f64,
    /// Size of one compressed status sample in bits.
    pub sample_bits: f64,
    /// Receiver noise floor in Watts.
    pub noise_power_w: f64,
    /// Rayleigh scale of the direct path amplitude.
    pub rayleigh_scale_direct: f64,
    /// Rayleigh scale of the per-element reflected path amplitude.
    pub rayleigh_scale_irs: f64,
    /// Large-scale power attenuation on sensor-to-relay links.
    pub path_loss_sr: f64,
    /// Large-scale power attenuation on relay-to-controller links.
    pub path_loss_rc: f64,
    /// Fraction of the slot granted to the first hop; the second hop gets
    /// the remainder.
    pub hop1_fraction: f64,
    /// Fixed energy cost of sampling the process, in Joules.
    pub sampling_energy_j: f64,
    /// Fixed energy cost of compressing a sample, in Joules.
    pub extraction_energy_j: f64,
    /// Saturation value of the age counter, in slots.
    pub aos_cap_slots: u32,
    /// Reward weight on age, per second of age.
    pub reward_weight_aos: f64,
    /// Reward weight on sensor energy, per Joule.
    pub reward_weight_energy: f64,
    /// Discount factor of the control objective.
    pub gamma: f64,
    /// Hidden width of all function approximators.
    pub hidden_dim: usize,
    /// Learning rate of the offline Q networks.
    pub q_learning_rate: f64,
    /// Learning rate of the actor network.
    pub actor_learning_rate: f64,
    /// Learning rate of the critic network.
    pub critic_learning_rate: f64,
    /// Entropy bonus weight of the actor-critic baseline.
    pub entropy_weight: f64,
    /// Relative frequency threshold deciding which actions count as
    /// in-support at a state.
    pub epsilon_support: f64,
    /// Weight of the out-of-distribution margin penalty.
    pub penalty_weight: f64,
    /// Margin by which in-support values must dominate out-of-support ones.
    pub margin: f64,
    /// Conservatism weight of the conservative Q-learning baseline.
    pub cql_alpha: f64,
    /// Gradient steps between target-network syncs.
    pub target_sync_period: usize,
    /// Minibatch size of offline updates.
    pub batch_size: usize,
    /// Gradient steps per training iteration.
    pub steps_per_iteration: usize,
    /// Number of independent episodes a policy evaluation is spread over.
    pub eval_episodes: usize,
    /// Master seed; every stochastic component derives its own stream.
    pub rng_seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            num_process_states: 9,
            alpha: 0.3,
            beta: 0.5,
            tau_s: 0.1,
            num_relays: 5,
            num_irs_elements: 25,
            bandwidth_hz: 1.0e7,
            tx_power_w: 1.0,
            sample_bits: 6.2e6,
            noise_power_w: 4.0e-14,
            rayleigh_scale_direct: 1.0,
            rayleigh_scale_irs: 1.0,
            path_loss_sr: 6.0e-13,
            path_loss_rc: 6.0e-13,
            hop1_fraction: 0.5,
            sampling_energy_j: 0.01,
            extraction_energy_j: 0.05,
            aos_cap_slots: 50,
            reward_weight_aos: 1.0,
            reward_weight_energy: 1.0,
            gamma: 0.45,
            hidden_dim: 64,
            q_learning_rate: 3.0e-4,
            actor_learning_rate: 1.0e-3,
            critic_learning_rate: 5.0e-3,
            entropy_weight: 0.05,
            epsilon_support: 0.05,
            penalty_weight: 1.0,
            margin: 1.0,
            cql_alpha: 2.0,
            target_sync_period: 200,
            batch_size: 256,
            steps_per_iteration: 100,
            eval_episodes: 10,
            rng_seed: 42,
        }
    }
}

impl SystemConfig {
    /// Collect every violated invariant; an empty list means the
    /// configuration is usable.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut prob = |name: &str, v: f64| {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                errs.push(format!("{name} out of range: must be within [0, 1], got {v}"));
            }
        };
        prob("alpha", self.alpha);
        prob("beta", self.beta);
        prob("epsilon_support", self.epsilon_support);
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            errs.push(format!("gamma must be < 1 and >= 0, got {}", self.gamma));
        }
        if self.num_process_states < 2 {
            errs.push(format!(
                "num_process_states must be >= 2, got {}",
                self.num_process_states
            ));
        }
        if self.num_relays < 1 {
            errs.push("num_relays must be >= 1".into());
        }
        if self.aos_cap_slots < 1 {
            errs.push("aos_cap_slots must be >= 1".into());
        }
        let mut positive = |name: &str, v: f64| {
            if !(v > 0.0) || !v.is_finite() {
                errs.push(format!("{name} must be > 0, got {v}"));
            }
        };
        positive("tau_s", self.tau_s);
        positive("bandwidth_hz", self.bandwidth_hz);
        positive("tx_power_w", self.tx_power_w);
        positive("sample_bits", self.sample_bits);
        positive("noise_power_w", self.noise_power_w);
        let mut nonneg = |name: &str, v: f64| {
            if !(v >= 0.0) || !v.is_finite() {
                errs.push(format!("{name} must be >= 0, got {v}"));
            }
        };
        nonneg("rayleigh_scale_direct", self.rayleigh_scale_direct);
        nonneg("rayleigh_scale_irs", self.rayleigh_scale_irs);
        nonneg("path_loss_sr", self.path_loss_sr);
        nonneg("path_loss_rc", self.path_loss_rc);
        nonneg("sampling_energy_j", self.sampling_energy_j);
        nonneg("extraction_energy_j", self.extraction_energy_j);
        nonneg("reward_weight_aos", self.reward_weight_aos);
        nonneg("reward_weight_energy", self.reward_weight_energy);
        nonneg("penalty_weight", self.penalty_weight);
        nonneg("margin", self.margin);
        nonneg("cql_alpha", self.cql_alpha);
        if !(self.hop1_fraction > 0.0 && self.hop1_fraction < 1.0) {
            errs.push(format!(
                "hop1_fraction must be strictly inside (0, 1), got {}",
                self.hop1_fraction
            ));
        }
        for (name, v) in [
            ("hidden_dim", self.hidden_dim),
            ("target_sync_period", self.target_sync_period),
            ("batch_size", self.batch_size),
            ("steps_per_iteration", self.steps_per_iteration),
            ("eval_episodes", self.eval_episodes),
        ] {
            if v == 0 {
                errs.push(format!("{name} must be >= 1"));
            }
        }
        for (name, v) in [
            ("q_learning_rate", self.q_learning_rate),
            ("actor_learning_rate", self.actor_learning_rate),
            ("critic_learning_rate", self.critic_learning_rate),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                errs.push(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.entropy_weight >= 0.0) || !self.entropy_weight.is_finite() {
            errs.push(format!(
                "entropy_weight must be >= 0, got {}",
                self.entropy_weight
            ));
        }
        errs
    }

    /// `Ok(self)` when no invariant is violated.
    pub fn validated(self) -> Result<Self, ConfigError> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(self)
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    /// Total number of discrete actions: idle plus one sample action per relay.
    pub fn num_actions(&self) -> usize {
        self.num_relays + 1
    }

    /// Length of the encoded state feature vector.
    pub fn feature_len(&self) -> usize {
        1 + 2 * self.num_relays + self.num_relays + 1
    }

    /// Stable 64-bit fingerprint of the physics-relevant fields. Seeds and
    /// learning hyperparameters are excluded so one dataset can serve many
    /// learner settings.
    pub fn fingerprint(&self) -> u64 {
        const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = FNV_OFFSET;
        let mut absorb = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(FNV_PRIME);
            }
        };
        absorb(b"aos-ncs-fingerprint-v1");
        absorb(&(self.num_process_states as u64).to_le_bytes());
        absorb(&self.alpha.to_bits().to_le_bytes());
        absorb(&self.beta.to_bits().to_le_bytes());
        absorb(&self.tau_s.to_bits().to_le_bytes());
        absorb(&(self.num_relays as u64).to_le_bytes());
        absorb(&(self.num_irs_elements as u64).to_le_bytes());
        absorb(&self.bandwidth_hz.to_bits().to_le_bytes());
        absorb(&self.tx_power_w.to_bits().to_le_bytes());
        absorb(&self.sample_bits.to_bits().to_le_bytes());
        absorb(&self.noise_power_w.to_bits().to_le_bytes());
        absorb(&self.rayleigh_scale_direct.to_bits().to_le_bytes());
        absorb(&self.rayleigh_scale_irs.to_bits().to_le_bytes());
        absorb(&self.path_loss_sr.to_bits().to_le_bytes());
        absorb(&self.path_loss_rc.to_bits().to_le_bytes());
        absorb(&self.hop1_fraction.to_bits().to_le_bytes());
        absorb(&self.sampling_energy_j.to_bits().to_le_bytes());
        absorb(&self.extraction_energy_j.to_bits().to_le_bytes());
        absorb(&u64::from(self.aos_cap_slots).to_le_bytes());
        absorb(&self.reward_weight_aos.to_bits().to_le_bytes());
        absorb(&self.reward_weight_energy.to_bits().to_le_bytes());
        h
    }

    /// All fields as `(key, rendered value)` pairs, in file order.
    pub fn to_key_values(&self) -> Vec<(&'static str, String)> {
        vec![
            ("num_process_states", self.num_process_states.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("tau_s", self.tau_s.to_string()),
            ("num_relays", self.num_relays.to_string()),
            ("num_irs_elements", self.num_irs_elements.to_string()),
            ("bandwidth_hz", self.bandwidth_hz.to_string()),
            ("tx_power_w", self.tx_power_w.to_string()),
            ("sample_bits", self.sample_bits.to_string()),
            ("noise_power_w", self.noise_power_w.to_string()),
            (
                "rayleigh_scale_direct",
                self.rayleigh_scale_direct.to_string(),
            ),
            ("rayleigh_scale_irs", self.rayleigh_scale_irs.to_string()),
            ("path_loss_sr", self.path_loss_sr.to_string()),
            ("path_loss_rc", self.path_loss_rc.to_string()),
            ("hop1_fraction", self.hop1_fraction.to_string()),
            ("sampling_energy_j", self.sampling_energy_j.to_string()),
            ("extraction_energy_j", self.extraction_energy_j.to_string()),
            ("aos_cap_slots", self.aos_cap_slots.to_string()),
            ("reward_weight_aos", self.reward_weight_aos.to_string()),
            ("reward_weight_energy", self.reward_weight_energy.to_string()),
            ("gamma", self.gamma.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("q_learning_rate", self.q_learning_rate.to_string()),
            ("actor_learning_rate", self.actor_learning_rate.to_string()),
            ("critic_learning_rate", self.critic_learning_rate.to_string()),
            ("entropy_weight", self.entropy_weight.to_string()),
            ("epsilon_support", self.epsilon_support.to_string()),
            ("penalty_weight", self.penalty_weight.to_string()),
            ("margin", self.margin.to_string()),
            ("cql_alpha", self.cql_alpha.to_string()),
            ("target_sync_period", self.target_sync_period.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("steps_per_iteration", self.steps_per_iteration.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("rng_seed", self.rng_seed.to_string()),
        ]
    }

    fn set_key(&mut self, key: &str, value: &str) -> Result<(), ()> {
        macro_rules! parse {
            ($field:ident) => {{
                self.$field = value.parse().map_err(|_| ())?;
            }};
        }
        match key {
            "num_process_states" => parse!(num_process_states),
            "alpha" => parse!(alpha),
            "beta" => parse!(beta),
            "tau_s" => parse!(tau_s),
            "num_relays" => parse!(num_relays),
            "num_irs_elements" => parse!(num_irs_elements),
            "bandwidth_hz" => parse!(bandwidth_hz),
            "tx_power_w" => parse!(tx_power_w),
            "sample_bits" => parse!(sample_bits),
            "noise_power_w" => parse!(noise_power_w),
            "rayleigh_scale_direct" => parse!(rayleigh_scale_direct),
            "rayleigh_scale_irs" => parse!(rayleigh_scale_irs),
            "path_loss_sr" => parse!(path_loss_sr),
            "path_loss_rc" => parse!(path_loss_rc),
            "hop1_fraction" => parse!(hop1_fraction),
            "sampling_energy_j" => parse!(sampling_energy_j),
            "extraction_energy_j" => parse!(extraction_energy_j),
            "aos_cap_slots" => parse!(aos_cap_slots),
            "reward_weight_aos" => parse!(reward_weight_aos),
            "reward_weight_energy" => parse!(reward_weight_energy),
            "gamma" => parse!(gamma),
            "hidden_dim" => parse!(hidden_dim),
            "q_learning_rate" => parse!(q_learning_rate),
            "actor_learning_rate" => parse!(actor_learning_rate),
            "critic_learning_rate" => parse!(critic_learning_rate),
            "entropy_weight" => parse!(entropy_weight),
            "epsilon_support" => parse!(epsilon_support),
            "penalty_weight" => parse!(penalty_weight),
            "margin" => parse!(margin),
            "cql_alpha" => parse!(cql_alpha),
            "target_sync_period" => parse!(target_sync_period),
            "batch_size" => parse!(batch_size),
            "steps_per_iteration" => parse!(steps_per_iteration),
            "eval_episodes" => parse!(eval_episodes),
            "rng_seed" => parse!(rng_seed),
            _ => return Err(()),
        }
        Ok(())
    }

    /// Parse a `key = value` text. Lines starting with `#` and blank lines
    /// are ignored; keys not present keep their default values; unknown or
    /// repeated keys are rejected. The result is not yet validated.
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line: line_no,
                    text: raw.to_string(),
                });
            };
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(ConfigError::DuplicateKey {
                    line: line_no,
                    key: key.to_string(),
                });
            }
            seen.push(key.to_string());
            let mut probe = cfg.clone();
            if probe.set_key(key, value).is_err() {
                // Distinguish unknown key from unparsable value.
                let known = Self::default().set_key(key, "0").is_ok()
                    || Self::default().set_key(key, "0.0").is_ok();
                return Err(if known {
                    ConfigError::BadValue {
                        line: line_no,
                        key: key.to_string(),
                        value: value.to_string(),
                    }
                } else {
                    ConfigError::UnknownKey {
                        line: line_no,
                        key: key.to_string(),
                    }
                });
            }
            cfg = probe;
        }
        Ok(cfg)
    }

    /// Load and validate a configuration file.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)?.validated()
    }

    /// Render the full configuration in the same format `parse_str` accepts.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_key_values() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
