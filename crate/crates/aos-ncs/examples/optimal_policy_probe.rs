//! Exact optimal-policy analysis on an abstraction of the environment.
//!
//! The controller's decision per slot reduces to: idle, or transmit through
//! the cheapest relay whose two hops are both feasible. Channel realizations
//! are i.i.d. across slots, so the pair (age counter, channel class) is a
//! small exact MDP: the channel class is "no feasible pair" or a bucketed
//! first-hop energy of the cheapest feasible pair. This example estimates
//! the class distribution by Monte Carlo, solves the abstract MDP by value
//! iteration for each inference-accuracy value on a grid, and prints the
//! exact stationary metrics of the optimal policy.
//!
//! Usage: `cargo run --example optimal_policy_probe [-- CONFIG_FILE]`

use std::path::Path;

use aos_ncs::config::SystemConfig;
use aos_ncs::offline::tabular::{value_iteration, TabularMdp};
use aos_ncs::radio;
use aos_ncs::rng::derive_stream;

const ENERGY_BUCKETS: usize = 8;

/// Probability of each channel class and the mean first-hop transmit energy
/// of the bucketed classes. Class 0 is "no feasible relay pair".
struct ClassModel {
    probs: Vec<f64>,
    energies: Vec<f64>,
}

fn estimate_classes(cfg: &SystemConfig, samples: usize) -> ClassModel {
    let d1 = cfg.hop1_fraction * cfg.tau_s;
    let d2 = (1.0 - cfg.hop1_fraction) * cfg.tau_s;
    let g1 = radio::required_gain(cfg, d1);
    let g2 = radio::required_gain(cfg, d2);
    let e_max = cfg.tx_power_w * d1;

    let mut rng = derive_stream(cfg.rng_seed, "probe-classes", 0);
    let mut counts = vec![0usize; ENERGY_BUCKETS + 1];
    let mut energy_sums = vec![0.0; ENERGY_BUCKETS + 1];
    for _ in 0..samples {
        let links = radio::draw_links(cfg, &mut rng);
        // Cheapest feasible pair: the strongest first hop among relays whose
        // both hops clear their thresholds.
        let mut best: Option<f64> = None;
        for k in 0..cfg.num_relays {
            if links.gains_sr[k] >= g1 && links.gains_rc[k] >= g2 {
                let budget = radio::hop_budget(links.gains_sr[k], d1, cfg);
                best = Some(best.map_or(budget.energy_j, |b: f64| b.min(budget.energy_j)));
            }
        }
        match best {
            None => counts[0] += 1,
            Some(e) => {
                let mut b = ((e / e_max) * ENERGY_BUCKETS as f64) as usize;
                if b >= ENERGY_BUCKETS {
                    b = ENERGY_BUCKETS - 1;
                }
                counts[b + 1] += 1;
                energy_sums[b + 1] += e;
            }
        }
    }
    let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / samples as f64).collect();
    let energies: Vec<f64> = counts
        .iter()
        .zip(&energy_sums)
        .map(|(&c, &s)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    ClassModel { probs, energies }
}

/// Build the exact (age, class) MDP for a given accuracy value.
fn build_mdp(cfg: &SystemConfig, classes: &ClassModel, beta: f64) -> TabularMdp {
    let cap = cfg.aos_cap_slots as usize;
    let n_classes = classes.probs.len();
    let num_states = cap * n_classes;
    let state = |age: usize, class: usize| (age - 1) * n_classes + class;
    let e_fixed = cfg.sampling_energy_j + cfg.extraction_energy_j;
    let e_burn = cfg.tx_power_w * cfg.hop1_fraction * cfg.tau_s;

    let mut transitions = vec![vec![Vec::new(), Vec::new()]; num_states];
    let mut rewards = vec![vec![0.0, 0.0]; num_states];

    for age in 1..=cap {
        let aged = (age + 1).min(cap);
        for class in 0..n_classes {
            let s = state(age, class);
            // Idle: age ramps, fresh class.
            for (c2, &p) in classes.probs.iter().enumerate() {
                if p > 0.0 {
                    transitions[s][0].push((state(aged, c2), p));
                }
            }
            rewards[s][0] = -cfg.reward_weight_aos * aged as f64 * cfg.tau_s;

            // Sample via the cheapest feasible pair (or burn the deadline if
            // none is feasible).
            let (p_success, energy) = if class == 0 {
                (0.0, e_fixed + e_burn)
            } else {
                (beta, e_fixed + classes.energies[class])
            };
            for (c2, &p) in classes.probs.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                if p_success > 0.0 {
                    transitions[s][1].push((state(1, c2), p * p_success));
                }
                if p_success < 1.0 {
                    transitions[s][1].push((state(aged, c2), p * (1.0 - p_success)));
                }
            }
            let mean_age = p_success * 1.0 + (1.0 - p_success) * aged as f64;
            rewards[s][1] = -(cfg.reward_weight_aos * mean_age * cfg.tau_s
                + cfg.reward_weight_energy * energy);
        }
    }
    TabularMdp {
        num_states,
        num_actions: 2,
        transitions,
        rewards,
    }
}

/// Stationary distribution of the chain induced by a deterministic policy.
fn stationary(mdp: &TabularMdp, policy: &[usize]) -> Vec<f64> {
    let n = mdp.num_states;
    let mut mu = vec![1.0 / n as f64; n];
    for _ in 0..4000 {
        let mut next = vec![0.0; n];
        for s in 0..n {
            for &(ns, p) in &mdp.transitions[s][policy[s]] {
                next[ns] += mu[s] * p;
            }
        }
        mu = next;
    }
    mu
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = match args.get(1) {
        Some(path) => SystemConfig::from_file(Path::new(path)).expect("config file"),
        None => SystemConfig::default(),
    };

    let classes = estimate_classes(&cfg, 400_000);
    println!("# channel classes (prob, mean hop-1 energy):");
    println!("#   infeasible: {:.4}", classes.probs[0]);
    for b in 1..classes.probs.len() {
        if classes.probs[b] > 0.0 {
            println!(
                "#   bucket {b}: p = {:.4}, e = {:.4} J",
                classes.probs[b], classes.energies[b]
            );
        }
    }

    println!("beta,avg_aos_s,avg_energy_j,avg_reward,sample_rate");
    for beta10 in 3..=9 {
        let beta = beta10 as f64 / 10.0;
        cfg.beta = beta;
        let mdp = build_mdp(&cfg, &classes, beta);
        let solved = value_iteration(&mdp, cfg.gamma, 1e-10).expect("value iteration");
        let mu = stationary(&mdp, &solved.greedy);

        let n_classes = classes.probs.len();
        let cap = cfg.aos_cap_slots as usize;
        let e_fixed = cfg.sampling_energy_j + cfg.extraction_energy_j;
        let e_burn = cfg.tx_power_w * cfg.hop1_fraction * cfg.tau_s;
        let mut avg_aos = 0.0;
        let mut avg_energy = 0.0;
        let mut sample_rate = 0.0;
        for age in 1..=cap {
            let aged = (age + 1).min(cap);
            for class in 0..n_classes {
                let s = (age - 1) * n_classes + class;
                let a = solved.greedy[s];
                let (p_success, energy) = match (a, class) {
                    (0, _) => (0.0, 0.0),
                    (1, 0) => (0.0, e_fixed + e_burn),
                    (1, c) => (beta, e_fixed + classes.energies[c]),
                    _ => unreachable!(),
                };
                let mean_age = p_success + (1.0 - p_success) * aged as f64;
                avg_aos += mu[s] * mean_age * cfg.tau_s;
                avg_energy += mu[s] * energy;
                if a == 1 {
                    sample_rate += mu[s];
                }
            }
        }
        let avg_reward = -(cfg.reward_weight_aos * avg_aos + cfg.reward_weight_energy * avg_energy);
        println!("{beta},{avg_aos:.5},{avg_energy:.5},{avg_reward:.5},{sample_rate:.4}");

        // Idle-versus-sample optimal value gaps at small ages in the modal
        // feasible class: the fine structure a learned Q must resolve.
        let modal = (1..n_classes)
            .max_by(|&a, &b| classes.probs[a].partial_cmp(&classes.probs[b]).unwrap())
            .unwrap();
        let gaps: Vec<String> = (1..=6.min(cap))
            .map(|age| {
                let s = (age - 1) * n_classes + modal;
                format!("{:.4}", solved.q[s][0] - solved.q[s][1])
            })
            .collect();
        eprintln!("# beta {beta}: idle-minus-sample Q at ages 1..6: {}", gaps.join(", "));
    }
}
