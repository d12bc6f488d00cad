//! Sensitivity of offline training to dataset quality: sweep the expert
//! fraction of the training mixture and compare the resulting policies,
//! including the conservative baseline at a fixed fraction.
//!
//! Usage: `cargo run --release --example dataset_quality [-- CONFIG_FILE]`

use std::path::Path;

use aos_ncs::agents::{train_a2c, A2cTrainOptions, RandomPolicy};
use aos_ncs::config::SystemConfig;
use aos_ncs::dataset::{collect, mix, SourceLabel};
use aos_ncs::env::evaluate_policy;
use aos_ncs::offline::{constrained_policy, train_offline, BehaviorMode, Scheme, TrainOptions};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = match args.get(1) {
        Some(path) => SystemConfig::from_file(Path::new(path)).expect("config file"),
        None => SystemConfig::default(),
    };
    cfg.batch_size = 128;

    let eval_n = 20_000;
    let steps = 30_000;

    println!("building datasets...");
    let a2c = train_a2c(&cfg, cfg.rng_seed, &A2cTrainOptions::default()).expect("a2c");
    let expert = collect(&cfg, &a2c.agent, steps, 11, SourceLabel::Expert).unwrap();
    let random = collect(&cfg, &RandomPolicy::new(&cfg), steps, 12, SourceLabel::Random).unwrap();

    let opts = TrainOptions {
        iterations: 150,
        eval_realizations: 1_000,
        behavior_mode: BehaviorMode::NeuralCloning,
        checkpoint_every: 0,
    };

    println!("xi,scheme,seed,avg_reward,avg_aos_s,avg_energy_j");
    for xi in [0.01, 0.05, 0.25, 1.0] {
        for scheme in [Scheme::Proposed, Scheme::Cql] {
            for seed in [1u64, 2, 3] {
                let mixed = mix(&expert, &random, xi, steps, 13).unwrap();
                let outcome = train_offline(&mixed, &cfg, scheme, &opts, seed).unwrap();
                let policy = constrained_policy(outcome.qnet, cfg.clone(), outcome.behavior);
                let s = evaluate_policy(&cfg, &policy, eval_n, 99).unwrap();
                println!(
                    "{xi},{},{seed},{:.4},{:.4},{:.4}",
                    scheme.name(),
                    s.avg_reward,
                    s.avg_aos_s,
                    s.avg_energy_j
                );
            }
        }
    }
    let a2c_eval = evaluate_policy(&cfg, &a2c.agent, eval_n, 99).unwrap();
    println!(
        "baseline,a2c,-,{:.4},{:.4},{:.4}",
        a2c_eval.avg_reward, a2c_eval.avg_aos_s, a2c_eval.avg_energy_j
    );
    let rnd = evaluate_policy(&cfg, &RandomPolicy::new(&cfg), eval_n, 99).unwrap();
    println!(
        "baseline,random,-,{:.4},{:.4},{:.4}",
        rnd.avg_reward, rnd.avg_aos_s, rnd.avg_energy_j
    );
}
