//! The training loop: shuffled task batches, repeated task presentation
//! with persistent setpoints, exploration noise, and one agent update per
//! environment step once the buffer is warm.
//!
//! Everything is keyed off the config seed; a fixed seed reproduces the
//! checkpoint and the metrics log byte for byte. No wall-clock values enter
//! the outputs.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scenario::Dataset;

use super::agent::{AgentConfig, DdpgAgent};
use super::env::{EnvConfig, GridEnv};
use super::replay::{Experience, ReplayBuffer};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Total environment steps.
    pub total_steps: u64,
    /// Consecutive presentations of each task.
    pub steps_per_task: usize,
    /// Tasks per shuffled group.
    pub task_batch: usize,
    pub hidden_width: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub lambda: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Experiences collected before the first update.
    pub warmup: usize,
    pub noise_sigma_start: f64,
    pub noise_sigma_end: f64,
    /// Steps between metric rows (and validation rollouts).
    pub metrics_interval: u64,
    /// Size of the validation slice drawn from the held-out set.
    pub validation_tasks: usize,
    pub feasibility_tol: f64,
    /// Steps between checkpoint events; none by default.
    pub checkpoint_interval: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            total_steps: 50_000,
            steps_per_task: 5,
            task_batch: 20,
            hidden_width: 512,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            gamma: 0.95,
            tau: 0.005,
            lambda: 2.0,
            buffer_capacity: 200_000,
            batch_size: 100,
            warmup: 1_000,
            noise_sigma_start: 0.1,
            noise_sigma_end: 0.01,
            metrics_interval: 1_000,
            validation_tasks: 50,
            feasibility_tol: crate::opf::DEFAULT_FEASIBILITY_TOL,
            checkpoint_interval: None,
        }
    }
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    /// Mean reward over the last interval.
    pub mean_reward: f64,
    /// Violation resolution rate on the validation slice; absent without
    /// validation data.
    pub resolution_rate: Option<f64>,
    pub critic_loss: f64,
    pub actor_loss: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "step,mean_reward,resolution_rate,critic_loss,actor_loss";

    pub fn to_csv_row(&self) -> String {
        let resolution = self.resolution_rate.map(|r| r.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.step, self.mean_reward, resolution, self.critic_loss, self.actor_loss
        )
    }
}

/// Versioned parameter container pairing the agent with its grid and
/// training configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub version: u32,
    pub grid_hash: String,
    pub config: TrainConfig,
    pub steps: u64,
    pub agent: DdpgAgent,
}

impl AgentCheckpoint {
    pub const VERSION: u32 = 1;

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: AgentCheckpoint = serde_json::from_str(&text)?;
        if ckpt.version != Self::VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        Ok(ckpt)
    }
}

pub struct TrainOutput {
    pub checkpoint: AgentCheckpoint,
    pub metrics: Vec<MetricsRow>,
    /// Tasks skipped because their reference power flow diverged.
    pub skipped_tasks: usize,
}

/// Streaming notifications out of the training loop.
pub enum TrainEvent<'a> {
    Metrics(&'a MetricsRow),
    Checkpoint(&'a AgentCheckpoint),
}

pub fn train(grid: &Grid, train_data: &Dataset, validation: Option<&Dataset>, config: &TrainConfig) -> Result<TrainOutput> {
    train_with_observer(grid, train_data, validation, config, |_| {})
}

/// Trains a fresh agent; `observer` receives metric rows as they are
/// produced and periodic checkpoints when `checkpoint_interval` is set.
pub fn train_with_observer(
    grid: &Grid,
    train_data: &Dataset,
    validation: Option<&Dataset>,
    config: &TrainConfig,
    mut observer: impl FnMut(TrainEvent<'_>),
) -> Result<TrainOutput> {
    if train_data.grid_hash != grid.content_hash() {
        return Err(Error::Dataset("training dataset belongs to a different grid".into()));
    }
    if config.batch_size == 0 || config.task_batch == 0 {
        return Err(Error::Config("batch sizes must be positive".into()));
    }

    let env_config = EnvConfig {
        steps_per_task: config.steps_per_task,
        lambda: config.lambda,
        feasibility_tol: config.feasibility_tol,
        pf: Default::default(),
    };
    let mut env = GridEnv::new(grid.clone(), env_config.clone())?;
    let mut validation_env = GridEnv::new(grid.clone(), env_config)?;

    let stream_rng = |stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream);
        rng
    };
    let mut init_rng = stream_rng(0);
    let mut shuffle_rng = stream_rng(1);
    let mut noise_rng = stream_rng(2);
    let mut sample_rng = stream_rng(3);

    let agent_config = AgentConfig {
        hidden_width: config.hidden_width,
        actor_lr: config.actor_lr,
        critic_lr: config.critic_lr,
    };
    let mut agent =
        DdpgAgent::new(env.observation_dim(), env.action_dim(), &agent_config, &mut init_rng);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);

    // Validation slice: the first violating held-out tasks.
    let validation_slice: Vec<_> = validation
        .map(|d| {
            d.violating_task_ids()
                .into_iter()
                .take(config.validation_tasks)
                .map(|i| d.tasks[i].clone())
                .collect()
        })
        .unwrap_or_default();

    let mut metrics = Vec::new();
    let mut skipped_tasks = 0usize;
    let mut step: u64 = 0;
    let mut reward_sum = 0.0;
    let mut reward_count = 0u64;
    let mut critic_loss_sum = 0.0;
    let mut actor_loss_sum = 0.0;
    let mut loss_count = 0u64;
    let warm_threshold = config.warmup.max(config.batch_size);

    'training: while step < config.total_steps {
        if train_data.tasks.is_empty() {
            break;
        }
        let mut order: Vec<usize> = (0..train_data.tasks.len()).collect();
        order.shuffle(&mut shuffle_rng);
        for group in order.chunks(config.task_batch) {
            for &task_id in group {
                let task = train_data.tasks[task_id].clone();
                let mut obs = match env.reset(task) {
                    Ok(obs) => obs,
                    Err(Error::TaskRejected(_)) => {
                        skipped_tasks += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                for _ in 0..config.steps_per_task {
                    let progress = step as f64 / config.total_steps.max(1) as f64;
                    let sigma = config.noise_sigma_start
                        + (config.noise_sigma_end - config.noise_sigma_start) * progress;
                    let mut action = agent.act(&obs)?;
                    for a in &mut action {
                        let z: f64 = noise_rng.sample(StandardNormal);
                        *a = (*a + sigma * z).clamp(-1.0, 1.0);
                    }

                    let outcome = env.step(&action)?;
                    buffer.push(Experience {
                        observation: std::mem::take(&mut obs),
                        action,
                        reward: outcome.reward,
                        next_observation: outcome.observation.clone(),
                        done: outcome.done,
                    });
                    obs = outcome.observation;
                    reward_sum += outcome.reward;
                    reward_count += 1;

                    if buffer.len() >= warm_threshold {
                        let batch = buffer.sample(config.batch_size, &mut sample_rng)?;
                        let losses = agent.update(&batch, config.gamma, config.tau)?;
                        critic_loss_sum += losses.critic_loss;
                        actor_loss_sum += losses.actor_loss;
                        loss_count += 1;
                    }

                    step += 1;
                    if step.is_multiple_of(config.metrics_interval) {
                        let resolution_rate = if validation_slice.is_empty() {
                            None
                        } else {
                            Some(resolution_rate(&mut validation_env, &agent, &validation_slice)?)
                        };
                        let row = MetricsRow {
                            step,
                            mean_reward: reward_sum / reward_count.max(1) as f64,
                            resolution_rate,
                            critic_loss: critic_loss_sum / loss_count.max(1) as f64,
                            actor_loss: actor_loss_sum / loss_count.max(1) as f64,
                        };
                        observer(TrainEvent::Metrics(&row));
                        metrics.push(row);
                        reward_sum = 0.0;
                        reward_count = 0;
                        critic_loss_sum = 0.0;
                        actor_loss_sum = 0.0;
                        loss_count = 0;
                    }
                    if let Some(interval) = config.checkpoint_interval {
                        if interval > 0 && step.is_multiple_of(interval) {
                            let ckpt = AgentCheckpoint {
                                version: AgentCheckpoint::VERSION,
                                grid_hash: grid.content_hash(),
                                config: config.clone(),
                                steps: step,
                                agent: agent.clone(),
                            };
                            observer(TrainEvent::Checkpoint(&ckpt));
                        }
                    }
                    if step >= config.total_steps {
                        break 'training;
                    }
                }
            }
        }
        // Guard against a dataset where every task is rejected.
        if skipped_tasks >= train_data.tasks.len() && step == 0 {
            return Err(Error::Dataset("every training task was rejected by the environment".into()));
        }
    }

    let checkpoint = AgentCheckpoint {
        version: AgentCheckpoint::VERSION,
        grid_hash: grid.content_hash(),
        config: config.clone(),
        steps: step,
        agent,
    };
    observer(TrainEvent::Checkpoint(&checkpoint));
    Ok(TrainOutput { checkpoint, metrics, skipped_tasks })
}

/// Fraction of the given violating tasks the greedy policy resolves.
fn resolution_rate(env: &mut GridEnv, agent: &DdpgAgent, tasks: &[crate::scenario::SupplyTask]) -> Result<f64> {
    if tasks.is_empty() {
        return Ok(0.0);
    }
    let mut resolved = 0usize;
    for task in tasks {
        let last = env.rollout(task.clone(), |obs| agent.act(obs).expect("observation fits"))?;
        if !last.info.report.has_violation {
            resolved += 1;
        }
    }
    Ok(resolved as f64 / tasks.len() as f64)
}
