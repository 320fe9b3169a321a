//! Experiment orchestration: seeded multi-run training loops, periodic
//! deterministic evaluation, and metrics persistence.
//!
//! A run is `epochs x cycles x (collect episodes, then update)`, evaluated
//! greedily after every epoch. Identical `(config, seed)` produce identical
//! metrics apart from wall-clock columns, and seeds are fully independent, so
//! they may execute in parallel without changing any result.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::agent::{Agent, AgentConfig, WeightMode};
use crate::envs::{EnvSpec, Task, ToyEnv, Transition};
use crate::error::{Error, Result};
use crate::replay::ReplayBuffer;
use crate::seeding::derive_seed;

// Seed streams: one per independent random component of a run.
const STREAM_AGENT: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_EVAL: u64 = 3;

/// Full experiment specification. One config describes a batch of identical
/// runs over `seeds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub weight_mode: WeightMode,
    pub reuse_count: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub rnd_lr: f64,
    pub action_noise_std: f64,
    pub random_episode_prob: f64,
    pub action_l2: f64,
    pub future_k: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub epochs: usize,
    pub cycles_per_epoch: usize,
    pub episodes_per_cycle: usize,
    pub updates_per_cycle: usize,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig::desk_default(Task::Reach)
    }
}

impl RunConfig {
    /// Desk-scale defaults: the whole curve reproduces in minutes on a CPU.
    pub fn desk_default(task: Task) -> RunConfig {
        RunConfig {
            env: EnvSpec::new(task),
            weight_mode: WeightMode::Nsr,
            reuse_count: 1,
            hidden_dim: 64,
            embed_dim: 32,
            gamma: 0.98,
            tau: 0.05,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            rnd_lr: 1e-3,
            action_noise_std: 0.1,
            random_episode_prob: 0.2,
            action_l2: 1.0,
            future_k: 4.0,
            batch_size: 128,
            buffer_capacity: 1000,
            epochs: 30,
            cycles_per_epoch: 10,
            episodes_per_cycle: 4,
            updates_per_cycle: 40,
            eval_episodes: 20,
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: PathBuf::from("out"),
        }
    }

    /// Checks the whole config and reports every violation at once.
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        self.env.collect_violations(&mut violations);
        self.agent_config().collect_violations(&mut violations);
        for (name, v) in [
            ("epochs", self.epochs),
            ("cycles_per_epoch", self.cycles_per_epoch),
            ("episodes_per_cycle", self.episodes_per_cycle),
            ("updates_per_cycle", self.updates_per_cycle),
            ("eval_episodes", self.eval_episodes),
            ("buffer_capacity", self.buffer_capacity),
        ] {
            if v < 1 {
                violations.push(format!("{name} must be >= 1, got {v}"));
            }
        }
        if self.seeds.is_empty() {
            violations.push("seeds must be nonempty".into());
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(violations))
        }
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            obs_dim: self.env.observation_dim(),
            goal_dim: crate::envs::GOAL_DIM,
            action_dim: self.env.action_dim(),
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
            gamma: self.gamma,
            tau: self.tau,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            rnd_lr: self.rnd_lr,
            action_noise_std: self.action_noise_std,
            random_episode_prob: self.random_episode_prob,
            action_l2: self.action_l2,
            weight_mode: self.weight_mode,
            reuse_count: self.reuse_count,
            batch_size: self.batch_size,
            future_k: self.future_k,
        }
    }

    pub fn load_json(path: &Path) -> Result<RunConfig> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// One seed-epoch row of a run report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub seed: u64,
    pub epoch: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_weight: f64,
    pub epoch_seconds: f64,
}

/// Persisted result of a run batch: config echo plus per-seed-epoch records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub code_version: String,
    pub config: RunConfig,
    pub records: Vec<EpochRecord>,
}

impl RunReport {
    /// Seed-mean success rate per epoch.
    pub fn mean_success_by_epoch(&self) -> Vec<f64> {
        let epochs = self.config.epochs;
        let mut sums = vec![0.0; epochs];
        let mut counts = vec![0usize; epochs];
        for r in &self.records {
            sums[r.epoch] += r.success_rate;
            counts[r.epoch] += 1;
        }
        sums.iter()
            .zip(&counts)
            .map(|(s, c)| if *c == 0 { 0.0 } else { s / *c as f64 })
            .collect()
    }

    /// First epoch whose seed-mean success reaches `level`, if any.
    pub fn first_epoch_reaching(&self, level: f64) -> Option<usize> {
        self.mean_success_by_epoch().iter().position(|s| *s >= level)
    }

    /// Mean wall-clock seconds per epoch across all records.
    pub fn mean_epoch_seconds(&self) -> f64 {
        let n = self.records.len().max(1);
        self.records.iter().map(|r| r.epoch_seconds).sum::<f64>() / n as f64
    }
}

/// Runs one full episode, exploring or greedy, and returns its transitions.
///
/// The episode seed, the 20%-random-episode draw, and any action noise all
/// come from `rng`, so a run is a single deterministic stream.
pub fn collect_episode<R: Rng>(
    spec: &EnvSpec,
    agent: &Agent,
    explore: bool,
    rng: &mut R,
) -> Result<Vec<Transition>> {
    let episode_seed: u64 = rng.gen();
    let (mut env, _) = ToyEnv::reset(spec, episode_seed);
    let random_episode = explore && rng.gen::<f64>() < agent.config.random_episode_prob;
    let mut episode = Vec::with_capacity(spec.max_episode_steps);
    while !env.done() {
        let obs = env.observe();
        let action = if random_episode {
            agent.random_action(rng)
        } else {
            agent.select_action(&obs, explore, rng)
        };
        episode.push(env.step(&action)?);
    }
    Ok(episode)
}

/// Detailed evaluation outcome.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalStats {
    /// Fraction of episodes that reach the goal at any step.
    pub success_rate: f64,
    /// Mean undiscounted episode return.
    pub mean_return: f64,
}

/// Greedy evaluation over `n_episodes` episodes seeded from `seed`.
///
/// Evaluation episode seeds are derived on a stream separate from every
/// training stream, so they never repeat training episodes.
pub fn evaluate_detailed(agent: &Agent, spec: &EnvSpec, n_episodes: usize, seed: u64) -> Result<EvalStats> {
    if n_episodes < 1 {
        return Err(Error::InvalidArgument("n_episodes must be >= 1".into()));
    }
    let mut successes = 0usize;
    let mut total_return = 0.0;
    let mut rng = StdRng::seed_from_u64(seed);
    for episode in 0..n_episodes {
        let (mut env, _) = ToyEnv::reset(spec, derive_seed(seed, episode as u64));
        let mut reached = false;
        while !env.done() {
            let obs = env.observe();
            let action = agent.select_action(&obs, false, &mut rng);
            let t = env.step(&action)?;
            total_return += t.reward;
            reached |= t.success;
        }
        if reached {
            successes += 1;
        }
    }
    Ok(EvalStats {
        success_rate: successes as f64 / n_episodes as f64,
        mean_return: total_return / n_episodes as f64,
    })
}

/// Success rate of greedy evaluation; see [`evaluate_detailed`].
pub fn evaluate(agent: &Agent, spec: &EnvSpec, n_episodes: usize, seed: u64) -> Result<f64> {
    Ok(evaluate_detailed(agent, spec, n_episodes, seed)?.success_rate)
}

fn run_seed(config: &RunConfig, seed: u64) -> Result<Vec<EpochRecord>> {
    let agent_config = config.agent_config();
    let mut agent = Agent::new(&agent_config, derive_seed(seed, STREAM_AGENT))?;
    let mut rng = StdRng::seed_from_u64(derive_seed(seed, STREAM_TRAIN));
    let mut buffer = ReplayBuffer::new(
        config.buffer_capacity,
        config.env.max_episode_steps,
        config.env.success_threshold,
    )?;
    let eval_base = derive_seed(seed, STREAM_EVAL);

    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut weight_sum = 0.0;
        let mut update_count = 0usize;
        for _ in 0..config.cycles_per_epoch {
            for _ in 0..config.episodes_per_cycle {
                let episode = collect_episode(&config.env, &agent, true, &mut rng)?;
                buffer.store_episode(episode)?;
            }
            for m in agent.update_cycle(&buffer, config.updates_per_cycle, &mut rng)? {
                weight_sum += m.mean_weight;
                update_count += 1;
            }
        }
        let epoch_seconds = started.elapsed().as_secs_f64();
        let stats = evaluate_detailed(
            &agent,
            &config.env,
            config.eval_episodes,
            derive_seed(eval_base, epoch as u64),
        )?;
        records.push(EpochRecord {
            seed,
            epoch,
            success_rate: stats.success_rate,
            mean_return: stats.mean_return,
            mean_weight: weight_sum / update_count.max(1) as f64,
            epoch_seconds,
        });
    }
    Ok(records)
}

/// Trains every seed in `config`, writes the report into `config.out_dir`,
/// and returns it. `jobs > 1` runs seeds in parallel; results are identical
/// regardless of parallelism.
pub fn run_experiment(config: &RunConfig, jobs: usize) -> Result<RunReport> {
    config.validate()?;
    let per_seed: Vec<Vec<EpochRecord>> = if jobs > 1 && config.seeds.len() > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            config
                .seeds
                .par_iter()
                .map(|&s| run_seed(config, s))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        config
            .seeds
            .iter()
            .map(|&s| run_seed(config, s))
            .collect::<Result<Vec<_>>>()?
    };
    let report = RunReport {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        records: per_seed.into_iter().flatten().collect(),
    };
    emit_metrics(&report, &config.out_dir)?;
    Ok(report)
}

pub const METRICS_HEADER: &str = "seed,epoch,success_rate,mean_return,mean_weight,epoch_seconds";
pub const SUMMARY_HEADER: &str = "epoch,success_rate_mean,success_rate_std";

/// Writes `config.json`, `metrics.csv`, and `summary.csv` into `out_dir`.
///
/// CSVs are UTF-8 with LF line endings; floats use the shortest
/// representation that parses back to the identical value.
pub fn emit_metrics(report: &RunReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;

    let echo = serde_json::json!({
        "code_version": report.code_version,
        "config": report.config,
    });
    let mut config_json = serde_json::to_string_pretty(&echo)?;
    config_json.push('\n');
    std::fs::write(out_dir.join("config.json"), config_json)?;

    let mut metrics = String::new();
    metrics.push_str(METRICS_HEADER);
    metrics.push('\n');
    for r in &report.records {
        metrics.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.seed, r.epoch, r.success_rate, r.mean_return, r.mean_weight, r.epoch_seconds
        ));
    }
    std::fs::write(out_dir.join("metrics.csv"), metrics)?;

    let mut summary = String::new();
    summary.push_str(SUMMARY_HEADER);
    summary.push('\n');
    for epoch in 0..report.config.epochs {
        let rates: Vec<f64> = report
            .records
            .iter()
            .filter(|r| r.epoch == epoch)
            .map(|r| r.success_rate)
            .collect();
        let n = rates.len().max(1) as f64;
        let mean = rates.iter().sum::<f64>() / n;
        let std = (rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
        summary.push_str(&format!("{epoch},{mean},{std}\n"));
    }
    std::fs::write(out_dir.join("summary.csv"), summary)?;
    Ok(())
}

/// Parses a `metrics.csv` produced by [`emit_metrics`]; exact round trip.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == METRICS_HEADER => {}
        other => {
            return Err(Error::InvalidArgument(format!(
                "unexpected metrics header: {other:?}"
            )))
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::InvalidArgument(format!(
                "row {i} has {} fields, expected 6",
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("row {i}: bad float '{s}': {e}")))
        };
        records.push(EpochRecord {
            seed: fields[0]
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("row {i}: bad seed: {e}")))?,
            epoch: fields[1]
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("row {i}: bad epoch: {e}")))?,
            success_rate: parse_f(fields[2])?,
            mean_return: parse_f(fields[3])?,
            mean_weight: parse_f(fields[4])?,
            epoch_seconds: parse_f(fields[5])?,
        });
    }
    Ok(records)
}

/// Named experiment batches mirroring the three headline comparisons:
/// method vs baseline across tasks, reuse counts vs novelty weighting, and
/// the weight-assignment ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Fig3,
    Fig4,
    Fig5,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Fig3 => "fig3",
            Preset::Fig4 => "fig4",
            Preset::Fig5 => "fig5",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Preset> {
        match s {
            "fig3" => Ok(Preset::Fig3),
            "fig4" => Ok(Preset::Fig4),
            "fig5" => Ok(Preset::Fig5),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset '{other}' (expected fig3, fig4, or fig5)"
            ))),
        }
    }
}

/// Expands a preset into named run configs. Each run inherits schedule,
/// seeds, and hyperparameters from `base`; task, weight mode, and reuse
/// count come from the preset. Output directories are left for the caller.
pub fn preset_runs(preset: Preset, base: &RunConfig) -> Vec<(String, RunConfig)> {
    let mut runs = Vec::new();
    let mut push = |name: String, task: Task, mode: WeightMode, reuse: usize| {
        let mut cfg = base.clone();
        cfg.env = EnvSpec::new(task);
        cfg.env.max_episode_steps = base.env.max_episode_steps;
        cfg.weight_mode = mode;
        cfg.reuse_count = reuse;
        runs.push((name, cfg));
    };
    match preset {
        Preset::Fig3 => {
            for task in [Task::Reach, Task::Push, Task::PickAndPlace] {
                for mode in [WeightMode::Nsr, WeightMode::Uniform] {
                    push(format!("{}-{}", task.name(), mode), task, mode, 1);
                }
            }
        }
        Preset::Fig4 => {
            for reuse in [1usize, 2, 3, 5] {
                push(
                    format!("push-uniform-reuse{reuse}"),
                    Task::Push,
                    WeightMode::Uniform,
                    reuse,
                );
            }
            push("push-nsr".into(), Task::Push, WeightMode::Nsr, 1);
        }
        Preset::Fig5 => {
            for mode in [WeightMode::Nsr, WeightMode::Mean, WeightMode::Random] {
                push(format!("reach-{mode}"), Task::Reach, mode, 1);
            }
        }
    }
    runs
}
