//! Per-slot channel realizations and link budgets.
//!
//! Each of the `2 * num_relays` links (sensor to relay, relay to controller)
//! combines a direct path and a surface-reflected path. Amplitudes are drawn
//! i.i.d. Rayleigh every slot; with ideal phase alignment the N reflecting
//! elements add coherently, so the effective amplitude is `a_d + N * a_r`
//! and the effective power gain is `path_loss * (a_d + N * a_r)^2`.

use rand::Rng;

use crate::config::SystemConfig;
use crate::rng::Stream;

/// Fresh effective power gains for all links of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkRealization {
    /// Sensor-to-relay gains, one per relay.
    pub gains_sr: Vec<f64>,
    /// Relay-to-controller gains, one per relay.
    pub gains_rc: Vec<f64>,
}

/// Budget of a single hop: achievable rate, required transmit time, whether
/// the hop fits its deadline, and the energy spent trying.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopBudget {
    pub rate_bps: f64,
    pub tx_time_s: f64,
    pub feasible: bool,
    pub energy_j: f64,
}

/// Result of a two-hop decode-and-forward delivery attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoHopOutcome {
    pub delivered: bool,
    /// Total sensor-side cost: sampling + extraction + first-hop transmit
    /// energy. Relay energy is not charged to the sensor.
    pub sensor_energy_j: f64,
}

/// Inverse-CDF Rayleigh sample with the given scale; a zero scale consumes
/// the draw anyway so the stream position schedule stays fixed.
fn rayleigh(scale: f64, rng: &mut Stream) -> f64 {
    let u: f64 = rng.random();
    scale * (-2.0 * (1.0 - u).ln()).sqrt()
}

fn effective_gain(path_loss: f64, n_elements: f64, rng: &mut Stream, cfg: &SystemConfig) -> f64 {
    let a_d = rayleigh(cfg.rayleigh_scale_direct, rng);
    let a_r = rayleigh(cfg.rayleigh_scale_irs, rng);
    let amplitude = a_d + n_elements * a_r;
    path_loss * amplitude * amplitude
}

/// Draw an independent channel realization for every link of the slot.
/// Draw order is fixed (all sensor-relay links, then all relay-controller
/// links) so a given stream position always yields the same realization.
pub fn draw_links(cfg: &SystemConfig, rng: &mut Stream) -> LinkRealization {
    let n = cfg.num_irs_elements as f64;
    let gains_sr = (0..cfg.num_relays)
        .map(|_| effective_gain(cfg.path_loss_sr, n, rng, cfg))
        .collect();
    let gains_rc = (0..cfg.num_relays)
        .map(|_| effective_gain(cfg.path_loss_rc, n, rng, cfg))
        .collect();
    LinkRealization { gains_sr, gains_rc }
}

/// Shannon-rate budget of one hop against a deadline. A zero-rate hop is
/// infeasible and burns transmit power until the deadline.
pub fn hop_budget(gain: f64, deadline_s: f64, cfg: &SystemConfig) -> HopBudget {
    debug_assert!(gain >= 0.0 && deadline_s > 0.0);
    let snr = cfg.tx_power_w * gain / cfg.noise_power_w;
    let rate_bps = cfg.bandwidth_hz * (1.0 + snr).log2();
    let tx_time_s = if rate_bps > 0.0 {
        cfg.sample_bits / rate_bps
    } else {
        f64::INFINITY
    };
    let feasible = tx_time_s <= deadline_s;
    let energy_j = cfg.tx_power_w * tx_time_s.min(deadline_s);
    HopBudget {
        rate_bps,
        tx_time_s,
        feasible,
        energy_j,
    }
}

/// Attempt delivery through `relay`: the first hop gets `hop1_fraction` of
/// the slot, the relay decodes and forwards during the remainder. The sample
/// arrives only if both hops fit their deadlines. A failed first hop still
/// transmits until its deadline, so the attempt energy is always charged.
pub fn two_hop_outcome(
    links: &LinkRealization,
    relay: usize,
    cfg: &SystemConfig,
) -> TwoHopOutcome {
    assert!(relay < cfg.num_relays, "relay index {relay} out of range");
    let d1 = cfg.hop1_fraction * cfg.tau_s;
    let d2 = (1.0 - cfg.hop1_fraction) * cfg.tau_s;
    let hop1 = hop_budget(links.gains_sr[relay], d1, cfg);
    let hop2 = hop_budget(links.gains_rc[relay], d2, cfg);
    TwoHopOutcome {
        delivered: hop1.feasible && hop2.feasible,
        sensor_energy_j: cfg.sampling_energy_j + cfg.extraction_energy_j + hop1.energy_j,
    }
}

/// Spectral efficiency a hop must sustain to move the sample within
/// `deadline_s`, in bits/s/Hz.
pub fn required_spectral_efficiency(cfg: &SystemConfig, deadline_s: f64) -> f64 {
    cfg.sample_bits / (cfg.bandwidth_hz * deadline_s)
}

/// Minimum SNR at which a hop meets `deadline_s`.
pub fn required_snr(cfg: &SystemConfig, deadline_s: f64) -> f64 {
    2f64.powf(required_spectral_efficiency(cfg, deadline_s)) - 1.0
}

/// Minimum effective power gain at which a hop meets `deadline_s`.
pub fn required_gain(cfg: &SystemConfig, deadline_s: f64) -> f64 {
    required_snr(cfg, deadline_s) * cfg.noise_power_w / cfg.tx_power_w
}

/// Gain at which the single-hop SNR is exactly 0 dB; the scale-free unit of
/// the feature encoding.
pub fn reference_gain(cfg: &SystemConfig) -> f64 {
    cfg.noise_power_w / cfg.tx_power_w
}
