//! Train the online actor-critic baseline until its windowed reward
//! stabilizes and compare it against the uniform Random policy.
//!
//! Usage: `cargo run --release --example train_baselines [-- CONFIG_FILE]`

use std::path::Path;

use aos_ncs::agents::{train_a2c, A2cTrainOptions, RandomPolicy};
use aos_ncs::config::SystemConfig;
use aos_ncs::env::evaluate_policy;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg = match args.get(1) {
        Some(path) => SystemConfig::from_file(Path::new(path)).expect("config file"),
        None => SystemConfig::default(),
    };

    let opts = A2cTrainOptions::default();
    println!(
        "training actor-critic (window {} steps, tolerance {}, cap {} steps)...",
        opts.window_steps, opts.rel_tol, opts.max_steps
    );
    let result = train_a2c(&cfg, cfg.rng_seed, &opts).expect("training");
    println!(
        "converged: {} after {} steps",
        result.converged, result.steps
    );
    for (i, r) in result.window_rewards.iter().enumerate() {
        println!("  window {i}: avg reward {r:.4}");
    }

    let eval_n = 50_000;
    let a2c = evaluate_policy(&cfg, &result.agent, eval_n, 1234).unwrap();
    let random = evaluate_policy(&cfg, &RandomPolicy::new(&cfg), eval_n, 1234).unwrap();
    println!("\n{:<18} {:>10} {:>10} {:>10}", "policy", "reward", "aos_s", "energy_j");
    for (name, s) in [("actor-critic", a2c), ("random", random)] {
        println!(
            "{:<18} {:>10.4} {:>10.4} {:>10.4}",
            name, s.avg_reward, s.avg_aos_s, s.avg_energy_j
        );
    }
}
