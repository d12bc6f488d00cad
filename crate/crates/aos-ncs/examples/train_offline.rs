//! End-to-end offline training demo at small scale: train the actor-critic
//! baseline online, collect Expert and Random datasets, mix them, train the
//! support-constrained scheme and the conservative baseline on the mixture,
//! and compare everything on a common evaluation seed.
//!
//! Usage: `cargo run --release --example train_offline`

use aos_ncs::agents::{train_a2c, A2cTrainOptions, RandomPolicy};
use aos_ncs::config::SystemConfig;
use aos_ncs::dataset::{collect, mix, SourceLabel};
use aos_ncs::env::evaluate_policy;
use aos_ncs::offline::{
    constrained_policy, train_offline, BehaviorMode, Scheme, TrainOptions,
};

fn main() {
    let mut cfg = SystemConfig::default();
    cfg.batch_size = 128;
    let eval_n = 20_000;
    let eval_seed = 99;

    // Online baselines.
    println!("training the actor-critic baseline online...");
    let a2c_opts = A2cTrainOptions {
        window_steps: 10_000,
        max_steps: 150_000,
        ..Default::default()
    };
    let a2c = train_a2c(&cfg, 7, &a2c_opts).expect("a2c training");
    println!(
        "  converged: {} after {} steps; window rewards: {:?}",
        a2c.converged,
        a2c.steps,
        a2c.window_rewards
            .iter()
            .map(|r| (r * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>()
    );
    let a2c_eval = evaluate_policy(&cfg, &a2c.agent, eval_n, eval_seed).unwrap();
    let random_eval =
        evaluate_policy(&cfg, &RandomPolicy::new(&cfg), eval_n, eval_seed).unwrap();

    // Datasets.
    println!("collecting datasets...");
    let expert = collect(&cfg, &a2c.agent, 20_000, 11, SourceLabel::Expert).unwrap();
    let random = collect(&cfg, &RandomPolicy::new(&cfg), 20_000, 12, SourceLabel::Random).unwrap();
    let mixed = mix(&expert, &random, 0.25, 20_000, 13).unwrap();

    // Offline training.
    let opts = TrainOptions {
        iterations: 60,
        eval_realizations: 2_000,
        behavior_mode: BehaviorMode::NeuralCloning,
        checkpoint_every: 0,
    };
    let mut results = Vec::new();
    for (name, store, scheme) in [
        ("proposed on expert", &expert, Scheme::Proposed),
        ("proposed on random", &random, Scheme::Proposed),
        ("proposed on mixed(0.25)", &mixed, Scheme::Proposed),
        ("cql on mixed(0.25)", &mixed, Scheme::Cql),
    ] {
        println!("training {name}...");
        let outcome = train_offline(store, &cfg, scheme, &opts, 21).unwrap();
        let policy = constrained_policy(outcome.qnet, cfg.clone(), outcome.behavior);
        let summary = evaluate_policy(&cfg, &policy, eval_n, eval_seed).unwrap();
        results.push((name, summary));
    }

    println!("\n{:<28} {:>10} {:>10} {:>10}", "policy", "reward", "aos_s", "energy_j");
    for (name, s) in [("a2c baseline", a2c_eval), ("random baseline", random_eval)]
        .into_iter()
        .chain(results)
    {
        println!(
            "{:<28} {:>10.4} {:>10.4} {:>10.4}",
            name, s.avg_reward, s.avg_aos_s, s.avg_energy_j
        );
    }
}
