//! Experiment orchestration: link calibration, dataset pipelines, the
//! convergence experiment, parameter sweeps, and self-describing CSV output.
//! Every run is a pure function of `(config, spec, seeds)`; re-running a
//! command reproduces its output files byte for byte.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::agents::{
    load_a2c_checkpoint, save_a2c_checkpoint, train_a2c, A2cTrainOptions, AgentError, RandomPolicy,
};
use crate::config::{ConfigError, SystemConfig};
use crate::dataset::{self, DatasetError, ExperienceStore, SourceLabel};
use crate::env::{evaluate_policy, EnvError, EvalSummary};
use crate::offline::{
    train_offline, BehaviorMode, IterationMetrics, OfflineError, Scheme, TrainOptions,
    TrainOutcome,
};
use crate::radio;
use crate::rng::{derive_seed, derive_stream};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Offline(#[from] OfflineError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("missing dataset {path}: run `aos-ncs collect --policy {policy}` first")]
    MissingDataset { path: PathBuf, policy: String },
    #[error("experiment spec line {line}: {message}")]
    Spec { line: usize, message: String },
    #[error(
        "link calibration out of band: two-hop delivery probability {value:.3} at {n} elements \
         lies outside [{lo}, {hi}]; adjust path_loss_sr/path_loss_rc or \
         rayleigh_scale_direct/rayleigh_scale_irs"
    )]
    CalibrationOutOfBand {
        value: f64,
        n: usize,
        lo: f64,
        hi: f64,
    },
}

// ---------------------------------------------------------------------------
// Statistics helpers
// ---------------------------------------------------------------------------

/// Two-sided 95% Student-t critical values for small samples.
fn t_critical_95(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
        2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    match df {
        0 => f64::INFINITY,
        d if d <= 30 => TABLE[d - 1],
        _ => 1.96,
    }
}

/// Sample mean and 95% confidence half-width over independent runs.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n >= 1);
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    (mean, t_critical_95(n - 1) * se)
}

/// A decrease-trend check that tolerates statistical noise: a step up only
/// counts as a violation when the two confidence intervals do not overlap.
pub fn nonincreasing_up_to_ci(means: &[f64], cis: &[f64]) -> bool {
    means.windows(2).zip(cis.windows(2)).all(|(m, c)| {
        m[1] <= m[0] || (m[1] - c[1]) <= (m[0] + c[0])
    })
}

pub fn nondecreasing_up_to_ci(means: &[f64], cis: &[f64]) -> bool {
    let rev_means: Vec<f64> = means.iter().rev().copied().collect();
    let rev_cis: Vec<f64> = cis.iter().rev().copied().collect();
    nonincreasing_up_to_ci(&rev_means, &rev_cis)
}

/// True when the largest value sits strictly inside the grid.
pub fn interior_argmax(values: &[f64]) -> bool {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best != 0 && best != values.len() - 1
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

/// Write a CSV whose comment block carries the full resolved configuration,
/// making every output file self-describing.
pub fn write_csv(
    path: &Path,
    cfg: &SystemConfig,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# config:")?;
    for (k, v) in cfg.to_key_values() {
        writeln!(w, "#   {k} = {v}")?;
    }
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Per-iteration training log in the standard column layout.
pub fn write_metric_log(
    path: &Path,
    cfg: &SystemConfig,
    metrics: &[IterationMetrics],
) -> Result<(), HarnessError> {
    let rows: Vec<Vec<String>> = metrics
        .iter()
        .map(|m| {
            vec![
                m.iteration.to_string(),
                m.avg_reward.to_string(),
                m.avg_aos_s.to_string(),
                m.avg_energy_j.to_string(),
                m.td_loss.to_string(),
                m.penalty_loss.to_string(),
            ]
        })
        .collect();
    write_csv(
        path,
        cfg,
        &[
            "iteration",
            "avg_reward",
            "avg_aos_s",
            "avg_energy_j",
            "td_loss",
            "penalty_loss",
        ],
        &rows,
    )
}

// ---------------------------------------------------------------------------
// Link calibration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct CalibrationPoint {
    pub n_elements: usize,
    /// Probability a single sensor-relay hop fits its deadline.
    pub single_hop: f64,
    /// Probability both hops of one fixed relay fit their deadlines.
    pub two_hop: f64,
    /// Probability at least one relay pair supports delivery.
    pub two_hop_best: f64,
}

#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub required_spectral_efficiency: f64,
    pub required_snr: f64,
    pub required_gain_hop1: f64,
    pub points: Vec<CalibrationPoint>,
}

impl CalibrationReport {
    pub fn point(&self, n: usize) -> Option<&CalibrationPoint> {
        self.points.iter().find(|p| p.n_elements == n)
    }
}

const CALIBRATION_BAND: (f64, f64) = (0.3, 0.9);

/// Monte-Carlo delivery probabilities at 25 and 75 reflecting elements (plus
/// the configured count, if different), and the feasibility thresholds of
/// the link budget. Errors when the two-hop delivery probability at 25
/// elements leaves the sweep-friendly band.
pub fn calibrate_links(
    cfg: &SystemConfig,
    samples: usize,
    seed: u64,
) -> Result<CalibrationReport, HarnessError> {
    let d1 = cfg.hop1_fraction * cfg.tau_s;
    let d2 = (1.0 - cfg.hop1_fraction) * cfg.tau_s;
    let g1 = radio::required_gain(cfg, d1);
    let g2 = radio::required_gain(cfg, d2);

    let mut n_values = vec![25usize, 75];
    if !n_values.contains(&cfg.num_irs_elements) {
        n_values.push(cfg.num_irs_elements);
    }
    n_values.sort_unstable();

    let points: Vec<CalibrationPoint> = n_values
        .iter()
        .map(|&n| {
            let mut c = cfg.clone();
            c.num_irs_elements = n;
            let mut rng = derive_stream(seed, "calibrate", n as u64);
            let mut single = 0usize;
            let mut two = 0usize;
            let mut two_best = 0usize;
            for _ in 0..samples {
                let links = radio::draw_links(&c, &mut rng);
                if links.gains_sr[0] >= g1 {
                    single += 1;
                }
                if links.gains_sr[0] >= g1 && links.gains_rc[0] >= g2 {
                    two += 1;
                }
                let any = (0..c.num_relays)
                    .any(|k| links.gains_sr[k] >= g1 && links.gains_rc[k] >= g2);
                if any {
                    two_best += 1;
                }
            }
            CalibrationPoint {
                n_elements: n,
                single_hop: single as f64 / samples as f64,
                two_hop: two as f64 / samples as f64,
                two_hop_best: two_best as f64 / samples as f64,
            }
        })
        .collect();

    let report = CalibrationReport {
        required_spectral_efficiency: radio::required_spectral_efficiency(cfg, d1),
        required_snr: radio::required_snr(cfg, d1),
        required_gain_hop1: g1,
        points,
    };

    let at_25 = report.point(25).expect("25 elements always evaluated");
    let (lo, hi) = CALIBRATION_BAND;
    if !(lo..=hi).contains(&at_25.two_hop) {
        return Err(HarnessError::CalibrationOutOfBand {
            value: at_25.two_hop,
            n: 25,
            lo,
            hi,
        });
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Experiment specification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Convergence,
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    Beta,
    Alpha,
    Xi,
    IrsElements,
    None,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::Beta => "beta",
            SweepVariable::Alpha => "alpha",
            SweepVariable::Xi => "xi",
            SweepVariable::IrsElements => "irs_elements",
            SweepVariable::None => "none",
        }
    }
}

/// Which policies a sweep covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Proposed,
    Cql,
    A2c,
    Random,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Proposed => "proposed",
            SchemeKind::Cql => "cql",
            SchemeKind::A2c => "a2c",
            SchemeKind::Random => "random",
        }
    }

    fn parse(text: &str) -> Option<Self> {
        match text {
            "proposed" => Some(Self::Proposed),
            "cql" => Some(Self::Cql),
            "a2c" => Some(Self::A2c),
            "random" => Some(Self::Random),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: String,
    pub kind: ExperimentKind,
    pub schemes: Vec<SchemeKind>,
    pub sweep: SweepVariable,
    pub grid: Vec<f64>,
    pub xi_grid: Vec<f64>,
    pub iterations: usize,
    pub eval_realizations: usize,
    /// Cheaper per-iteration evaluation used inside sweep training cells.
    pub per_iteration_eval: usize,
    pub seeds: Vec<u64>,
    pub dataset_steps: usize,
    pub mix_total: usize,
    pub behavior_mode: BehaviorMode,
    pub a2c_max_steps: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            kind: ExperimentKind::Sweep,
            schemes: vec![SchemeKind::Proposed, SchemeKind::Cql],
            sweep: SweepVariable::Beta,
            grid: vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            xi_grid: vec![0.01, 0.05, 0.25, 1.0],
            iterations: 800,
            eval_realizations: 10_000,
            per_iteration_eval: 1_000,
            seeds: vec![1, 2, 3],
            dataset_steps: 100_000,
            mix_total: 50_000,
            behavior_mode: BehaviorMode::NeuralCloning,
            a2c_max_steps: 400_000,
        }
    }
}

impl ExperimentSpec {
    /// Parse the `key = value` experiment file; grids and lists are
    /// comma-separated.
    pub fn parse_str(text: &str) -> Result<Self, HarnessError> {
        let mut spec = Self::default();
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
                return Err(HarnessError::Spec {
                    line: line_no,
                    message: format!("expected `key = value`, got {raw:?}"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            let bad = |message: String| HarnessError::Spec {
                line: line_no,
                message,
            };
            let parse_list = |value: &str| -> Result<Vec<f64>, HarnessError> {
                value
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| bad(format!("bad number {v:?}")))
                    })
                    .collect()
            };
            match key {
                "name" => spec.name = value.to_string(),
                "kind" => {
                    spec.kind = match value {
                        "convergence" => ExperimentKind::Convergence,
                        "sweep" => ExperimentKind::Sweep,
                        other => return Err(bad(format!("unknown kind {other:?}"))),
                    }
                }
                "schemes" => {
                    spec.schemes = value
                        .split(',')
                        .map(|s| {
                            SchemeKind::parse(s.trim())
                                .ok_or_else(|| bad(format!("unknown scheme {s:?}")))
                        })
                        .collect::<Result<_, _>>()?;
                    if spec.schemes.is_empty() {
                        return Err(bad("scheme list is empty".into()));
                    }
                }
                "sweep" => {
                    spec.sweep = match value {
                        "beta" => SweepVariable::Beta,
                        "alpha" => SweepVariable::Alpha,
                        "xi" => SweepVariable::Xi,
                        "irs_elements" => SweepVariable::IrsElements,
                        "none" => SweepVariable::None,
                        other => return Err(bad(format!("unknown sweep variable {other:?}"))),
                    }
                }
                "grid" => {
                    spec.grid = parse_list(value)?;
                    if spec.grid.is_empty() {
                        return Err(bad("grid is empty".into()));
                    }
                }
                "xi_grid" => {
                    spec.xi_grid = parse_list(value)?;
                    if spec.xi_grid.is_empty() {
                        return Err(bad("xi grid is empty".into()));
                    }
                }
                "iterations" => {
                    spec.iterations = value.parse().map_err(|_| bad("bad iterations".into()))?
                }
                "eval_realizations" => {
                    spec.eval_realizations =
                        value.parse().map_err(|_| bad("bad eval_realizations".into()))?
                }
                "per_iteration_eval" => {
                    spec.per_iteration_eval =
                        value.parse().map_err(|_| bad("bad per_iteration_eval".into()))?
                }
                "seeds" => {
                    spec.seeds = value
                        .split(',')
                        .map(|v| {
                            v.trim()
                                .parse::<u64>()
                                .map_err(|_| bad(format!("bad seed {v:?}")))
                        })
                        .collect::<Result<_, _>>()?;
                    if spec.seeds.is_empty() {
                        return Err(bad("seed list is empty".into()));
                    }
                }
                "dataset_steps" => {
                    spec.dataset_steps =
                        value.parse().map_err(|_| bad("bad dataset_steps".into()))?
                }
                "mix_total" => {
                    spec.mix_total = value.parse().map_err(|_| bad("bad mix_total".into()))?
                }
                "behavior" => {
                    spec.behavior_mode = match value {
                        "neural" => BehaviorMode::NeuralCloning,
                        "tabular" => BehaviorMode::TabularCount,
                        other => return Err(bad(format!("unknown behavior mode {other:?}"))),
                    }
                }
                "a2c_max_steps" => {
                    spec.a2c_max_steps =
                        value.parse().map_err(|_| bad("bad a2c_max_steps".into()))?
                }
                other => {
                    return Err(bad(format!("unknown key {other:?}")));
                }
            }
        }
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    fn a2c_options(&self) -> A2cTrainOptions {
        A2cTrainOptions {
            max_steps: self.a2c_max_steps,
            ..A2cTrainOptions::default()
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset pipeline
// ---------------------------------------------------------------------------

pub fn expert_dataset_path(dir: &Path) -> PathBuf {
    dir.join("expert.exp")
}

pub fn random_dataset_path(dir: &Path) -> PathBuf {
    dir.join("random.exp")
}

/// Collect the Expert dataset: train the actor-critic baseline online until
/// its windowed reward stabilizes, then roll its stochastic policy.
/// The converged agent checkpoint is written next to the dataset.
pub fn collect_expert(
    cfg: &SystemConfig,
    dir: &Path,
    steps: usize,
    a2c_opts: &A2cTrainOptions,
    seed: u64,
) -> Result<ExperienceStore, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let result = train_a2c(cfg, derive_seed(seed, "expert-a2c", 0), a2c_opts)?;
    save_a2c_checkpoint(&dir.join("a2c.ckpt"), &result.agent, cfg.fingerprint())?;
    let store = dataset::collect(
        cfg,
        &result.agent,
        steps,
        derive_seed(seed, "expert-collect", 0),
        SourceLabel::Expert,
    )?;
    dataset::save(&store, &expert_dataset_path(dir))?;
    Ok(store)
}

/// Collect the Random dataset from the uniform policy.
pub fn collect_random(
    cfg: &SystemConfig,
    dir: &Path,
    steps: usize,
    seed: u64,
) -> Result<ExperienceStore, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let store = dataset::collect(
        cfg,
        &RandomPolicy::new(cfg),
        steps,
        derive_seed(seed, "random-collect", 0),
        SourceLabel::Random,
    )?;
    dataset::save(&store, &random_dataset_path(dir))?;
    Ok(store)
}

/// Load both source datasets from `dir`, building them if absent.
pub fn ensure_datasets(
    cfg: &SystemConfig,
    dir: &Path,
    steps: usize,
    a2c_opts: &A2cTrainOptions,
    seed: u64,
) -> Result<(ExperienceStore, ExperienceStore), HarnessError> {
    let expert_path = expert_dataset_path(dir);
    let random_path = random_dataset_path(dir);
    let expert = if expert_path.exists() {
        dataset::load_checked(&expert_path, cfg, false)?
    } else {
        collect_expert(cfg, dir, steps, a2c_opts, seed)?
    };
    let random = if random_path.exists() {
        dataset::load_checked(&random_path, cfg, false)?
    } else {
        collect_random(cfg, dir, steps, seed)?
    };
    Ok((expert, random))
}

fn load_required(
    path: &Path,
    cfg: &SystemConfig,
    policy: &str,
) -> Result<ExperienceStore, HarnessError> {
    if !path.exists() {
        return Err(HarnessError::MissingDataset {
            path: path.to_path_buf(),
            policy: policy.to_string(),
        });
    }
    Ok(dataset::load_checked(path, cfg, false)?)
}

// ---------------------------------------------------------------------------
// Convergence experiment
// ---------------------------------------------------------------------------

pub struct ConvergenceOutcome {
    /// Per seed: full per-iteration metric log of the scheme trained on
    /// Expert Data.
    pub proposed_expert: Vec<Vec<IterationMetrics>>,
    /// Per seed: same, trained on Random Data.
    pub proposed_random: Vec<Vec<IterationMetrics>>,
    pub a2c_reference: Vec<EvalSummary>,
    pub random_reference: Vec<EvalSummary>,
}

fn aggregate_curve(cfg: &SystemConfig, runs: &[Vec<IterationMetrics>], path: &Path) -> Result<(), HarnessError> {
    let iterations = runs.iter().map(Vec::len).min().unwrap_or(0);
    let mut rows = Vec::with_capacity(iterations);
    for i in 0..iterations {
        let rewards: Vec<f64> = runs.iter().map(|r| r[i].avg_reward).collect();
        let aos: Vec<f64> = runs.iter().map(|r| r[i].avg_aos_s).collect();
        let energy: Vec<f64> = runs.iter().map(|r| r[i].avg_energy_j).collect();
        let (rm, rc) = mean_ci(&rewards);
        let (am, ac) = mean_ci(&aos);
        let (em, ec) = mean_ci(&energy);
        rows.push(vec![
            i.to_string(),
            rm.to_string(),
            rc.to_string(),
            am.to_string(),
            ac.to_string(),
            em.to_string(),
            ec.to_string(),
        ]);
    }
    write_csv(
        path,
        cfg,
        &[
            "iteration",
            "avg_reward",
            "reward_ci",
            "avg_aos_s",
            "aos_ci",
            "avg_energy_j",
            "energy_ci",
        ],
        &rows,
    )
}

/// Train the proposed scheme on Expert Data and on Random Data, evaluating
/// the constrained-greedy policy every iteration, and emit the trained
/// online baselines as reference lines. Datasets must already exist in
/// `out_dir` (see [`ensure_datasets`]).
pub fn run_convergence(
    spec: &ExperimentSpec,
    cfg: &SystemConfig,
    out_dir: &Path,
) -> Result<ConvergenceOutcome, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let expert = load_required(&expert_dataset_path(out_dir), cfg, "expert")?;
    let random = load_required(&random_dataset_path(out_dir), cfg, "random")?;

    let opts = TrainOptions {
        iterations: spec.iterations,
        eval_realizations: spec.eval_realizations,
        behavior_mode: spec.behavior_mode,
        checkpoint_every: 0,
    };

    // Each (dataset, seed) training cell is independent; run them in
    // parallel and reassemble in order.
    let cells: Vec<(usize, bool)> = (0..spec.seeds.len())
        .flat_map(|si| [(si, true), (si, false)])
        .collect();
    let trained: Result<Vec<Vec<IterationMetrics>>, HarnessError> = cells
        .par_iter()
        .map(|&(si, on_expert)| {
            let store = if on_expert { &expert } else { &random };
            let label = if on_expert { "expert" } else { "random" };
            let outcome: TrainOutcome = train_offline(
                store,
                cfg,
                Scheme::Proposed,
                &opts,
                derive_seed(spec.seeds[si], &format!("convergence-{label}"), 0),
            )?;
            Ok(outcome.metrics)
        })
        .collect();
    let trained = trained?;
    let mut proposed_expert = Vec::new();
    let mut proposed_random = Vec::new();
    for (i, metrics) in trained.into_iter().enumerate() {
        if cells[i].1 {
            proposed_expert.push(metrics);
        } else {
            proposed_random.push(metrics);
        }
    }

    let references: Result<Vec<(EvalSummary, EvalSummary)>, HarnessError> = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let a2c = train_a2c(cfg, derive_seed(seed, "reference-a2c", 0), &spec.a2c_options())?;
            let eval_seed = derive_seed(seed, "reference-eval", 0);
            let a2c_summary =
                evaluate_policy(cfg, &a2c.agent, spec.eval_realizations, eval_seed)?;
            let random_summary = evaluate_policy(
                cfg,
                &RandomPolicy::new(cfg),
                spec.eval_realizations,
                eval_seed,
            )?;
            Ok((a2c_summary, random_summary))
        })
        .collect();
    let (a2c_reference, random_reference): (Vec<_>, Vec<_>) =
        references?.into_iter().unzip();

    for (si, run) in proposed_expert.iter().enumerate() {
        write_metric_log(
            &out_dir.join(format!("proposed_expert_seed{si}.csv")),
            cfg,
            run,
        )?;
    }
    for (si, run) in proposed_random.iter().enumerate() {
        write_metric_log(
            &out_dir.join(format!("proposed_random_seed{si}.csv")),
            cfg,
            run,
        )?;
    }
    aggregate_curve(cfg, &proposed_expert, &out_dir.join("proposed_expert.csv"))?;
    aggregate_curve(cfg, &proposed_random, &out_dir.join("proposed_random.csv"))?;

    let mut rows = Vec::new();
    for (name, summaries) in [
        ("a2c", &a2c_reference),
        ("random", &random_reference),
    ] {
        let rewards: Vec<f64> = summaries.iter().map(|s| s.avg_reward).collect();
        let aos: Vec<f64> = summaries.iter().map(|s| s.avg_aos_s).collect();
        let energy: Vec<f64> = summaries.iter().map(|s| s.avg_energy_j).collect();
        let (rm, rc) = mean_ci(&rewards);
        let (am, ac) = mean_ci(&aos);
        let (em, ec) = mean_ci(&energy);
        rows.push(vec![
            name.to_string(),
            rm.to_string(),
            rc.to_string(),
            am.to_string(),
            ac.to_string(),
            em.to_string(),
            ec.to_string(),
        ]);
    }
    write_csv(
        &out_dir.join("references.csv"),
        cfg,
        &[
            "scheme",
            "avg_reward",
            "reward_ci",
            "avg_aos_s",
            "aos_ci",
            "avg_energy_j",
            "energy_ci",
        ],
        &rows,
    )?;

    Ok(ConvergenceOutcome {
        proposed_expert,
        proposed_random,
        a2c_reference,
        random_reference,
    })
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub variable: String,
    pub value: f64,
    /// Expert fraction of the training dataset; `None` for the online
    /// baselines, which do not train on a dataset.
    pub xi: Option<f64>,
    pub scheme: String,
    pub avg_aos_s: f64,
    pub aos_ci: f64,
    pub avg_energy_j: f64,
    pub energy_ci: f64,
    pub avg_reward: f64,
    pub reward_ci: f64,
}

pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
}

impl SweepOutcome {
    pub fn row(&self, value: f64, xi: Option<f64>, scheme: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| {
            r.scheme == scheme
                && (r.value - value).abs() < 1e-12
                && match (r.xi, xi) {
                    (Some(a), Some(b)) => (a - b).abs() < 1e-12,
                    (None, None) => true,
                    _ => false,
                }
        })
    }
}

fn apply_sweep_value(
    base: &SystemConfig,
    var: SweepVariable,
    value: f64,
) -> Result<SystemConfig, HarnessError> {
    let mut cfg = base.clone();
    match var {
        SweepVariable::Beta => cfg.beta = value,
        SweepVariable::Alpha => cfg.alpha = value,
        SweepVariable::IrsElements => cfg.num_irs_elements = value.round() as usize,
        SweepVariable::Xi | SweepVariable::None => {}
    }
    Ok(cfg.validated()?)
}

fn value_dir_name(var: SweepVariable, value: f64) -> String {
    format!("{}_{}", var.name(), value.to_string().replace('.', "p"))
}

/// Run the configured sweep. For every grid value the source datasets are
/// rebuilt under the adjusted config, every `(xi, scheme, seed)` training
/// cell runs independently, and per-cell final policies are evaluated at
/// full scale. Emits `sweep.csv` with per-cell means and confidence
/// half-widths over seeds.
pub fn run_sweep(
    spec: &ExperimentSpec,
    base: &SystemConfig,
    out_dir: &Path,
) -> Result<SweepOutcome, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let mut rows: Vec<SweepRow> = Vec::new();

    for &value in &spec.grid {
        let cfg = apply_sweep_value(base, spec.sweep, value)?;
        let data_dir = out_dir.join("datasets").join(value_dir_name(spec.sweep, value));
        let data_seed = derive_seed(base.rng_seed, "sweep-datasets", value.to_bits());
        let (expert, random) = ensure_datasets(
            &cfg,
            &data_dir,
            spec.dataset_steps,
            &spec.a2c_options(),
            data_seed,
        )?;

        let xi_values: Vec<f64> = if spec.sweep == SweepVariable::Xi {
            vec![value]
        } else {
            spec.xi_grid.clone()
        };

        // Offline schemes: one training cell per (xi, scheme, seed).
        let mut cells: Vec<(f64, SchemeKind)> = Vec::new();
        for &xi in &xi_values {
            for &scheme in &spec.schemes {
                if matches!(scheme, SchemeKind::Proposed | SchemeKind::Cql) {
                    cells.push((xi, scheme));
                }
            }
        }

        let cell_results: Result<Vec<Vec<EvalSummary>>, HarnessError> = cells
            .par_iter()
            .map(|&(xi, scheme)| {
                let mixed = dataset::mix(
                    &expert,
                    &random,
                    xi,
                    spec.mix_total.min(expert.len() + random.len()),
                    derive_seed(data_seed, "sweep-mix", xi.to_bits()),
                )?;
                let opts = TrainOptions {
                    iterations: spec.iterations,
                    eval_realizations: spec.per_iteration_eval,
                    behavior_mode: spec.behavior_mode,
                    checkpoint_every: 0,
                };
                let offline_scheme = match scheme {
                    SchemeKind::Proposed => Scheme::Proposed,
                    SchemeKind::Cql => Scheme::Cql,
                    _ => unreachable!(),
                };
                spec.seeds
                    .iter()
                    .map(|&seed| {
                        let outcome = train_offline(
                            &mixed,
                            &cfg,
                            offline_scheme,
                            &opts,
                            derive_seed(seed, "sweep-train", xi.to_bits()),
                        )?;
                        let policy = crate::offline::constrained_policy(
                            outcome.qnet,
                            cfg.clone(),
                            outcome.behavior,
                        );
                        let eval_seed = derive_seed(seed, "sweep-final-eval", value.to_bits());
                        Ok(evaluate_policy(
                            &cfg,
                            &policy,
                            spec.eval_realizations,
                            eval_seed,
                        )?)
                    })
                    .collect()
            })
            .collect();

        for ((xi, scheme), summaries) in cells.iter().zip(cell_results?) {
            rows.push(make_row(spec, value, Some(*xi), scheme.name(), &summaries));
        }

        // Online baselines: evaluation only.
        for &scheme in &spec.schemes {
            match scheme {
                SchemeKind::A2c => {
                    let summaries: Result<Vec<EvalSummary>, HarnessError> = spec
                        .seeds
                        .par_iter()
                        .map(|&seed| {
                            let trained = train_a2c(
                                &cfg,
                                derive_seed(seed, "sweep-a2c", value.to_bits()),
                                &spec.a2c_options(),
                            )?;
                            let eval_seed = derive_seed(seed, "sweep-final-eval", value.to_bits());
                            Ok(evaluate_policy(
                                &cfg,
                                &trained.agent,
                                spec.eval_realizations,
                                eval_seed,
                            )?)
                        })
                        .collect();
                    rows.push(make_row(spec, value, None, "a2c", &summaries?));
                }
                SchemeKind::Random => {
                    let summaries: Result<Vec<EvalSummary>, HarnessError> = spec
                        .seeds
                        .par_iter()
                        .map(|&seed| {
                            let eval_seed = derive_seed(seed, "sweep-final-eval", value.to_bits());
                            Ok(evaluate_policy(
                                &cfg,
                                &RandomPolicy::new(&cfg),
                                spec.eval_realizations,
                                eval_seed,
                            )?)
                        })
                        .collect();
                    rows.push(make_row(spec, value, None, "random", &summaries?));
                }
                _ => {}
            }
        }
    }

    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.variable.clone(),
                r.value.to_string(),
                r.xi.map(|x| x.to_string()).unwrap_or_default(),
                r.scheme.clone(),
                r.avg_aos_s.to_string(),
                r.aos_ci.to_string(),
                r.avg_energy_j.to_string(),
                r.energy_ci.to_string(),
                r.avg_reward.to_string(),
                r.reward_ci.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("sweep.csv"),
        base,
        &[
            "variable",
            "value",
            "xi",
            "scheme",
            "avg_aos_s",
            "aos_ci",
            "avg_energy_j",
            "energy_ci",
            "avg_reward",
            "reward_ci",
        ],
        &csv_rows,
    )?;

    Ok(SweepOutcome { rows })
}

fn make_row(
    spec: &ExperimentSpec,
    value: f64,
    xi: Option<f64>,
    scheme: &str,
    summaries: &[EvalSummary],
) -> SweepRow {
    let rewards: Vec<f64> = summaries.iter().map(|s| s.avg_reward).collect();
    let aos: Vec<f64> = summaries.iter().map(|s| s.avg_aos_s).collect();
    let energy: Vec<f64> = summaries.iter().map(|s| s.avg_energy_j).collect();
    let (rm, rc) = mean_ci(&rewards);
    let (am, ac) = mean_ci(&aos);
    let (em, ec) = mean_ci(&energy);
    SweepRow {
        variable: spec.sweep.name().to_string(),
        value,
        xi,
        scheme: scheme.to_string(),
        avg_aos_s: am,
        aos_ci: ac,
        avg_energy_j: em,
        energy_ci: ec,
        avg_reward: rm,
        reward_ci: rc,
    }
}

// Re-exported for the thin binary.
pub use crate::agents::A2cTrainOptions as A2cOptions;
pub use crate::offline::load_policy_checkpoint;
pub use crate::offline::save_policy_checkpoint;
pub type LoadedA2c = crate::agents::A2cAgent;

/// Convenience used by the binary's `eval` subcommand.
pub fn load_a2c_for_eval(path: &Path, cfg: &SystemConfig) -> Result<LoadedA2c, HarnessError> {
    Ok(load_a2c_checkpoint(path, cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_table_matches_known_values() {
        assert!((t_critical_95(2) - 4.303).abs() < 1e-9);
        assert!((t_critical_95(10) - 2.228).abs() < 1e-9);
        assert!((t_critical_95(100) - 1.96).abs() < 1e-9);
    }

    #[test]
    fn mean_ci_of_identical_values_is_zero_width() {
        let (m, ci) = mean_ci(&[2.0, 2.0, 2.0]);
        assert_eq!(m, 2.0);
        assert_eq!(ci, 0.0);
    }

    #[test]
    fn trend_checks_respect_ci_overlap() {
        // Clean decrease passes.
        assert!(nonincreasing_up_to_ci(&[3.0, 2.0, 1.0], &[0.0, 0.0, 0.0]));
        // A step up with disjoint intervals fails.
        assert!(!nonincreasing_up_to_ci(&[1.0, 2.0], &[0.1, 0.1]));
        // The same step up passes when intervals overlap.
        assert!(nonincreasing_up_to_ci(&[1.0, 2.0], &[0.6, 0.6]));
        assert!(nondecreasing_up_to_ci(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]));
        assert!(!nondecreasing_up_to_ci(&[2.0, 1.0], &[0.1, 0.1]));
    }

    #[test]
    fn interior_argmax_detects_boundaries() {
        assert!(interior_argmax(&[1.0, 3.0, 2.0]));
        assert!(!interior_argmax(&[3.0, 2.0, 1.0]));
        assert!(!interior_argmax(&[1.0, 2.0, 3.0]));
    }

    #[test]
    fn spec_file_round_trip_of_every_key() {
        let text = "\
name = trial
kind = convergence
schemes = proposed, random
sweep = alpha
grid = 0.1, 0.9
xi_grid = 0.5
iterations = 12
eval_realizations = 345
per_iteration_eval = 67
seeds = 4, 5
dataset_steps = 890
mix_total = 777
behavior = tabular
a2c_max_steps = 1000
";
        let spec = ExperimentSpec::parse_str(text).unwrap();
        assert_eq!(spec.name, "trial");
        assert_eq!(spec.kind, ExperimentKind::Convergence);
        assert_eq!(spec.schemes, vec![SchemeKind::Proposed, SchemeKind::Random]);
        assert_eq!(spec.sweep, SweepVariable::Alpha);
        assert_eq!(spec.grid, vec![0.1, 0.9]);
        assert_eq!(spec.xi_grid, vec![0.5]);
        assert_eq!(spec.iterations, 12);
        assert_eq!(spec.eval_realizations, 345);
        assert_eq!(spec.per_iteration_eval, 67);
        assert_eq!(spec.seeds, vec![4, 5]);
        assert_eq!(spec.dataset_steps, 890);
        assert_eq!(spec.mix_total, 777);
        assert_eq!(spec.behavior_mode, BehaviorMode::TabularCount);
        assert_eq!(spec.a2c_max_steps, 1000);
    }

    #[test]
    fn spec_rejects_unknown_keys_and_schemes() {
        assert!(matches!(
            ExperimentSpec::parse_str("mystery = 1\n"),
            Err(HarnessError::Spec { .. })
        ));
        assert!(matches!(
            ExperimentSpec::parse_str("schemes = dqn\n"),
            Err(HarnessError::Spec { .. })
        ));
    }

    #[test]
    fn calibration_report_contains_thresholds_and_monotone_gain() {
        let cfg = SystemConfig::default();
        let report = calibrate_links(&cfg, 20_000, 7).unwrap();
        assert!((report.required_spectral_efficiency - 12.4).abs() < 1e-12);
        assert!((report.required_snr - (2f64.powf(12.4) - 1.0)).abs() < 1e-6);
        let p25 = report.point(25).unwrap();
        let p75 = report.point(75).unwrap();
        assert!(p75.two_hop >= p25.two_hop);
        assert!((0.3..=0.9).contains(&p25.two_hop));
    }

    #[test]
    fn calibration_rejects_dead_radios() {
        let mut cfg = SystemConfig::default();
        cfg.tx_power_w = 1e-12;
        let err = calibrate_links(&cfg, 5_000, 7).unwrap_err();
        assert!(matches!(err, HarnessError::CalibrationOutOfBand { .. }));
    }

    #[test]
    fn csv_output_is_deterministic_and_self_describing() {
        let cfg = SystemConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![vec!["1".to_string(), "2.5".to_string()]];
        let path_a = dir.path().join("a.csv");
        let path_b = dir.path().join("b.csv");
        write_csv(&path_a, &cfg, &["x", "y"], &rows).unwrap();
        write_csv(&path_b, &cfg, &["x", "y"], &rows).unwrap();
        let a = std::fs::read(path_a).unwrap();
        let b = std::fs::read(path_b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.contains("#   noise_power_w = 0.00000000000004"));
        assert!(text.lines().any(|l| l == "x,y"));
    }
}
