//! Thin command-line front end over the library; every subcommand maps to
//! one pipeline stage. See `examples/` for library-level usage.

use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aos_ncs::agents::A2cTrainOptions;
use aos_ncs::config::SystemConfig;
use aos_ncs::dataset;
use aos_ncs::env::{evaluate_policy, write_trajectory};
use aos_ncs::harness::{
    self, calibrate_links, run_convergence, run_sweep, write_metric_log, ExperimentKind,
    ExperimentSpec, HarnessError,
};
use aos_ncs::offline::{
    constrained_policy, load_policy_checkpoint, save_policy_checkpoint, train_offline,
    BehaviorMode, Scheme, TrainOptions,
};
use aos_ncs::rng::derive_seed;

#[derive(Parser)]
#[command(
    name = "aos-ncs",
    about = "Relay- and surface-assisted networked control simulator with offline policy learning",
    version
)]
struct Cli {
    /// Configuration file (`key = value` lines). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configuration's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for datasets, checkpoints and CSV files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate delivery probabilities and print the link-budget thresholds.
    Calibrate {
        /// Monte-Carlo channel draws per surface size.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Collect a source dataset into the output directory.
    Collect {
        /// Behavior policy: `expert` trains the actor-critic baseline to
        /// convergence first, `random` uses the uniform policy.
        #[arg(long, value_parser = ["expert", "random"])]
        policy: String,
        /// Number of transitions to record.
        #[arg(long, default_value_t = 100_000)]
        steps: usize,
    },
    /// Mix the expert and random datasets at a given expert fraction.
    Mix {
        /// Fraction of expert records in the result.
        #[arg(long)]
        xi: f64,
        /// Size of the mixed dataset.
        #[arg(long, default_value_t = 50_000)]
        total: usize,
    },
    /// Train an offline scheme on a dataset and write its metric log and
    /// policy checkpoint.
    Train {
        #[arg(long, value_parser = ["proposed", "cql"])]
        scheme: String,
        /// Dataset file; defaults to `expert.exp` in the output directory.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 800)]
        iterations: usize,
        /// Policy-evaluation realizations per iteration.
        #[arg(long, default_value_t = 10_000)]
        eval_realizations: usize,
        /// Behavior-policy estimator: `neural` or `tabular`.
        #[arg(long, value_parser = ["neural", "tabular"], default_value = "neural")]
        behavior: String,
        /// Accept a dataset whose config fingerprint does not match.
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a trained policy checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        realizations: usize,
        /// Optionally write a per-step trajectory log to this file.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Run an experiment specification file (convergence run or sweep).
    Sweep {
        #[arg(long)]
        spec: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<SystemConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => SystemConfig::from_file(path)?,
        None => SystemConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    Ok(cfg.validated()?)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let cfg = load_config(&cli)?;
    let out = cli.out.clone();
    std::fs::create_dir_all(&out)?;

    match cli.command {
        Command::Calibrate { samples } => {
            let report = calibrate_links(&cfg, samples, cfg.rng_seed)?;
            println!(
                "required spectral efficiency: {:.4} bits/s/Hz",
                report.required_spectral_efficiency
            );
            println!("required SNR: {:.1}", report.required_snr);
            println!("required gain (hop 1): {:.6e}", report.required_gain_hop1);
            let mut rows = Vec::new();
            for p in &report.points {
                println!(
                    "N = {:>3}: single-hop {:.4}, two-hop {:.4}, best-relay two-hop {:.4}",
                    p.n_elements, p.single_hop, p.two_hop, p.two_hop_best
                );
                rows.push(vec![
                    p.n_elements.to_string(),
                    p.single_hop.to_string(),
                    p.two_hop.to_string(),
                    p.two_hop_best.to_string(),
                ]);
            }
            write_csv_report(&out, &cfg, rows)?;
        }
        Command::Collect { policy, steps } => {
            let store = match policy.as_str() {
                "expert" => harness::collect_expert(
                    &cfg,
                    &out,
                    steps,
                    &A2cTrainOptions::default(),
                    cfg.rng_seed,
                )?,
                _ => harness::collect_random(&cfg, &out, steps, cfg.rng_seed)?,
            };
            println!(
                "collected {} transitions ({}) into {}",
                store.len(),
                store.source(),
                out.join(format!("{policy}.exp")).display()
            );
        }
        Command::Mix { xi, total } => {
            let expert = required_store(&out.join("expert.exp"), &cfg, "expert")?;
            let random = required_store(&out.join("random.exp"), &cfg, "random")?;
            let mixed = dataset::mix(
                &expert,
                &random,
                xi,
                total,
                derive_seed(cfg.rng_seed, "cli-mix", xi.to_bits()),
            )?;
            let name = format!("mixed_xi{}.exp", format_fraction(xi));
            let path = out.join(name);
            dataset::save(&mixed, &path)?;
            println!("wrote {} ({} records)", path.display(), mixed.len());
        }
        Command::Train {
            scheme,
            data,
            iterations,
            eval_realizations,
            behavior,
            force,
        } => {
            let scheme = Scheme::parse(&scheme).expect("clap restricts values");
            let data_path = data.unwrap_or_else(|| out.join("expert.exp"));
            if !data_path.exists() {
                return Err(HarnessError::MissingDataset {
                    path: data_path,
                    policy: "expert".into(),
                });
            }
            let store = dataset::load_checked(&data_path, &cfg, force)?;
            let opts = TrainOptions {
                iterations,
                eval_realizations,
                behavior_mode: match behavior.as_str() {
                    "tabular" => BehaviorMode::TabularCount,
                    _ => BehaviorMode::NeuralCloning,
                },
                checkpoint_every: 0,
            };
            let outcome = train_offline(&store, &cfg, scheme, &opts, cfg.rng_seed)?;
            let log_path = out.join(format!("train_{}.csv", scheme.name()));
            write_metric_log(&log_path, &cfg, &outcome.metrics)?;
            let ckpt_path = out.join(format!("policy_{}.ckpt", scheme.name()));
            save_policy_checkpoint(&ckpt_path, &outcome.qnet, &outcome.behavior, cfg.fingerprint())?;
            if let Some(last) = outcome.metrics.last() {
                println!(
                    "final: avg_reward {:.4}, avg_aos {:.4} s, avg_energy {:.4} J",
                    last.avg_reward, last.avg_aos_s, last.avg_energy_j
                );
            }
            println!("metric log: {}", log_path.display());
            println!("checkpoint: {}", ckpt_path.display());
        }
        Command::Eval {
            checkpoint,
            realizations,
            trajectory,
        } => {
            let eval_seed = derive_seed(cfg.rng_seed, "cli-eval", 0);
            let summary;
            match sniff_agent_type(&checkpoint)? {
                2 => {
                    let (qnet, behavior, _fp) = load_policy_checkpoint(&checkpoint)?;
                    let policy = constrained_policy(qnet, cfg.clone(), behavior);
                    summary = evaluate_policy(&cfg, &policy, realizations, eval_seed)?;
                    if let Some(traj) = &trajectory {
                        let mut file = std::fs::File::create(traj)?;
                        write_trajectory(&cfg, &policy, 10_000.min(realizations), eval_seed, &mut file)?;
                    }
                }
                _ => {
                    let agent = harness::load_a2c_for_eval(&checkpoint, &cfg)?;
                    summary = evaluate_policy(&cfg, &agent, realizations, eval_seed)?;
                    if let Some(traj) = &trajectory {
                        let mut file = std::fs::File::create(traj)?;
                        write_trajectory(&cfg, &agent, 10_000.min(realizations), eval_seed, &mut file)?;
                    }
                }
            }
            println!(
                "avg_reward {:.6}, avg_aos {:.6} s, avg_energy {:.6} J over {} realizations",
                summary.avg_reward, summary.avg_aos_s, summary.avg_energy_j, realizations
            );
        }
        Command::Sweep { spec } => {
            let spec = ExperimentSpec::from_file(&spec)?;
            match spec.kind {
                ExperimentKind::Convergence => {
                    let outcome = run_convergence(&spec, &cfg, &out)?;
                    let last = outcome.proposed_expert[0].last().map(|m| m.avg_reward);
                    println!(
                        "convergence run `{}` finished ({} seeds); final expert-trained reward {:?}",
                        spec.name,
                        spec.seeds.len(),
                        last
                    );
                    println!("curves written under {}", out.display());
                }
                ExperimentKind::Sweep => {
                    let outcome = run_sweep(&spec, &cfg, &out)?;
                    println!(
                        "sweep `{}` finished: {} result rows -> {}",
                        spec.name,
                        outcome.rows.len(),
                        out.join("sweep.csv").display()
                    );
                }
            }
        }
    }
    Ok(())
}

fn write_csv_report(
    out: &std::path::Path,
    cfg: &SystemConfig,
    rows: Vec<Vec<String>>,
) -> Result<(), HarnessError> {
    harness::write_csv(
        &out.join("calibration.csv"),
        cfg,
        &["n_elements", "single_hop", "two_hop", "two_hop_best"],
        &rows,
    )
}

fn required_store(
    path: &std::path::Path,
    cfg: &SystemConfig,
    policy: &str,
) -> Result<dataset::ExperienceStore, HarnessError> {
    if !path.exists() {
        return Err(HarnessError::MissingDataset {
            path: path.to_path_buf(),
            policy: policy.to_string(),
        });
    }
    Ok(dataset::load_checked(path, cfg, false)?)
}

fn format_fraction(xi: f64) -> String {
    format!("{xi}").replace('.', "p")
}

fn sniff_agent_type(path: &std::path::Path) -> Result<u8, HarnessError> {
    let mut f = std::fs::File::open(path)?;
    let mut head = [0u8; 9];
    f.read_exact(&mut head)?;
    Ok(head[8])
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
