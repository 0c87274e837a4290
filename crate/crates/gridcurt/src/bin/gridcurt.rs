//! File-based pipeline driver. Every subcommand reads and writes plain
//! files; errors leave as JSON on stderr with a nonzero exit code.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use gridcurt::error::{Error, Result};
use gridcurt::eval::{bench, emit_scatter, evaluate, evaluate_opf, EvalRecord, ScatterMode};
use gridcurt::grid::{load_grid, Grid};
use gridcurt::opf::OpfOptions;
use gridcurt::rl::{train_with_observer, AgentCheckpoint, MetricsRow, TrainConfig, TrainEvent};
use gridcurt::scenario::{
    augment, generate_profiles, label_violations, AugmentConfig, Dataset, ProfileConfig,
};

#[derive(Parser)]
#[command(
    name = "gridcurt",
    about = "Curative curtailment pipeline: dataset generation, OPF baseline, agent training and evaluation",
    version
)]
struct Cli {
    /// Grid file (JSON).
    #[arg(long, global = true)]
    grid: Option<PathBuf>,
    /// Seed for the seeded subcommands; overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Subcommand-specific configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Primary output path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an unlabeled supply-task dataset from profile config.
    Generate,
    /// Label a dataset with the violations of its uncurtailed states.
    Label(DataArgs),
    /// Augment a labeled dataset (bound noise, references to the maximum,
    /// lower-band rebalancing).
    Augment(DataArgs),
    /// Train the curtailment agent on an augmented dataset.
    Train(TrainArgs),
    /// Evaluate a trained agent on a labeled test dataset.
    Eval(EvalArgs),
    /// Run the OPF baseline over a dataset.
    Opf(OpfArgs),
    /// Compare agent and OPF wall time per supply task.
    Bench(BenchArgs),
    /// Emit scatter CSV (curtailment against worst-case state) from
    /// evaluation records.
    Scatter(ScatterArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Input dataset (JSON lines).
    #[arg(long)]
    data: PathBuf,
    /// Feasibility tolerance for violation labels.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset (augmented, labeled).
    #[arg(long)]
    data: PathBuf,
    /// Held-out dataset used for the validation metric.
    #[arg(long)]
    validation: Option<PathBuf>,
    /// Metrics log destination (CSV).
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Test dataset (labeled, original provenance).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Summary table destination (JSON).
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args)]
struct OpfArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Raw per-task OPF solutions (JSON array).
    #[arg(long)]
    solutions: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Timing repetitions (median of means).
    #[arg(long, default_value_t = 5)]
    repeats: usize,
}

#[derive(Args)]
struct ScatterArgs {
    /// Agent evaluation records (JSON array).
    #[arg(long)]
    records: PathBuf,
    /// Optional OPF records for a second series.
    #[arg(long)]
    opf_records: Option<PathBuf>,
    /// loading_vs_p, vmin_vs_p, or loading_vs_q.
    #[arg(long)]
    mode: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                let payload = serde_json::json!({
                    "error": e.to_string(),
                    "kind": "usage",
                });
                eprintln!("{payload}");
                return ExitCode::from(2);
            }
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = serde_json::json!({
                "error": e.to_string(),
                "kind": error_kind(&e),
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io(_) => "io",
        Error::Parse(_) => "parse",
        Error::Validation(_) => "validation",
        Error::Dimension(_) => "dimension",
        Error::Config(_) => "config",
        Error::TaskRejected(_) => "task_rejected",
        Error::Env(_) => "environment",
        Error::BufferUnderfilled { .. } => "buffer_underfilled",
        Error::NonFinite(_) => "non_finite",
        Error::BruteForceTooLarge(_) => "brute_force_too_large",
        Error::GridHashMismatch { .. } => "grid_hash_mismatch",
        Error::Dataset(_) => "dataset",
    }
}

fn require_grid(cli: &Cli) -> Result<Grid> {
    let path = cli.grid.as_ref().ok_or_else(|| Error::Config("--grid is required".into()))?;
    load_grid(path)
}

fn require_out(cli: &Cli) -> Result<&PathBuf> {
    cli.out.as_ref().ok_or_else(|| Error::Config("--out is required".into()))
}

fn read_config<T: serde::de::DeserializeOwned>(cli: &Cli, what: &str) -> Result<T> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config(format!("--config with a {what} file is required")))?;
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn read_records(path: &PathBuf) -> Result<Vec<EvalRecord>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn write_json<T: serde::Serialize>(path: &PathBuf, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Generate => {
            let grid = require_grid(&cli)?;
            let config: ProfileConfig = read_config(&cli, "profile")?;
            let seed = cli.seed.unwrap_or(0);
            let dataset = generate_profiles(&grid, &config, seed)?;
            dataset.write_jsonl(require_out(&cli)?)?;
            eprintln!("generated {} tasks", dataset.len());
        }
        Command::Label(args) => {
            let grid = require_grid(&cli)?;
            let dataset = Dataset::read_jsonl(&args.data)?;
            let labeled = label_violations(&grid, dataset, args.tol)?;
            eprintln!(
                "labeled {} tasks ({} violating, {} excluded as non-physical)",
                labeled.len(),
                labeled.violating_task_ids().len(),
                labeled.excluded_non_physical
            );
            labeled.write_jsonl(require_out(&cli)?)?;
        }
        Command::Augment(args) => {
            let grid = require_grid(&cli)?;
            let dataset = Dataset::read_jsonl(&args.data)?;
            let config: AugmentConfig = read_config(&cli, "augmentation")?;
            let seed = cli.seed.unwrap_or(0);
            let augmented = augment(&grid, &dataset, &config, seed)?;
            eprintln!(
                "augmented to {} tasks ({} violating)",
                augmented.len(),
                augmented.violating_task_ids().len()
            );
            augmented.write_jsonl(require_out(&cli)?)?;
        }
        Command::Train(args) => {
            let grid = require_grid(&cli)?;
            let train_data = Dataset::read_jsonl(&args.data)?;
            let validation = args
                .validation
                .as_ref()
                .map(Dataset::read_jsonl)
                .transpose()?;
            let mut config: TrainConfig = match cli.config {
                Some(_) => read_config(&cli, "training")?,
                None => TrainConfig::default(),
            };
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            let out = require_out(&cli)?;

            let begin = Instant::now();
            let mut rows: Vec<MetricsRow> = Vec::new();
            let output = train_with_observer(
                &grid,
                &train_data,
                validation.as_ref(),
                &config,
                |event| match event {
                    TrainEvent::Metrics(row) => {
                        eprintln!(
                            "step {:>8}  reward {:+.4}  resolution {}  critic {:.5}",
                            row.step,
                            row.mean_reward,
                            row.resolution_rate
                                .map(|r| format!("{:.3}", r))
                                .unwrap_or_else(|| "-".into()),
                            row.critic_loss
                        );
                        rows.push(row.clone());
                    }
                    TrainEvent::Checkpoint(ckpt) => {
                        if ckpt.steps < config.total_steps {
                            let path = out.with_extension(format!("step{}.json", ckpt.steps));
                            if let Err(e) = ckpt.save(&path) {
                                eprintln!("checkpoint write failed: {e}");
                            }
                        }
                    }
                },
            )?;
            output.checkpoint.save(out)?;
            if let Some(metrics_path) = &args.metrics {
                let mut text = String::from(MetricsRow::CSV_HEADER);
                text.push('\n');
                for row in &rows {
                    text.push_str(&row.to_csv_row());
                    text.push('\n');
                }
                std::fs::write(metrics_path, text)?;
            }
            eprintln!(
                "trained {} steps in {:.1} s ({} tasks skipped)",
                output.checkpoint.steps,
                begin.elapsed().as_secs_f64(),
                output.skipped_tasks
            );
        }
        Command::Eval(args) => {
            let grid = require_grid(&cli)?;
            let dataset = Dataset::read_jsonl(&args.data)?;
            let checkpoint = AgentCheckpoint::load(&args.checkpoint)?;
            let (records, summary) = evaluate(&checkpoint, &grid, &dataset, args.tol)?;
            write_json(require_out(&cli)?, &records)?;
            if let Some(path) = &args.summary {
                write_json(path, &summary)?;
            }
            eprintln!(
                "evaluated {} tasks: {}/{} violations resolved",
                records.len(),
                summary.total.solved,
                summary.total.count
            );
        }
        Command::Opf(args) => {
            let grid = require_grid(&cli)?;
            let dataset = Dataset::read_jsonl(&args.data)?;
            let opts: OpfOptions = match cli.config {
                Some(_) => read_config(&cli, "OPF options")?,
                None => OpfOptions::default(),
            };
            let (records, summary) = evaluate_opf(&grid, &dataset, &opts, args.tol)?;
            write_json(require_out(&cli)?, &records)?;
            if let Some(path) = &args.summary {
                write_json(path, &summary)?;
            }
            if let Some(path) = &args.solutions {
                let solutions = dataset
                    .tasks
                    .iter()
                    .map(|task| gridcurt::opf::solve_opf(&grid, task, &opts))
                    .collect::<gridcurt::Result<Vec<_>>>()?;
                write_json(path, &solutions)?;
            }
            eprintln!(
                "opf solved {} tasks: {}/{} violations resolved, {:.3} s/task",
                records.len(),
                summary.total.solved,
                summary.total.count,
                summary.opf_per_task_s.unwrap_or(f64::NAN)
            );
        }
        Command::Bench(args) => {
            let grid = require_grid(&cli)?;
            let dataset = Dataset::read_jsonl(&args.data)?;
            let checkpoint = AgentCheckpoint::load(&args.checkpoint)?;
            let opts: OpfOptions = match cli.config {
                Some(_) => read_config(&cli, "OPF options")?,
                None => OpfOptions::default(),
            };
            let report = bench(&grid, &dataset, &checkpoint, &opts, args.repeats)?;
            write_json(require_out(&cli)?, &report)?;
            eprintln!(
                "inference {:.4} s/task vs opf {:.4} s/task over {} tasks",
                report.inference_per_task_s, report.opf_per_task_s, report.tasks_used
            );
        }
        Command::Scatter(args) => {
            let grid = require_grid(&cli)?;
            let records = read_records(&args.records)?;
            let opf_records = args.opf_records.as_ref().map(read_records).transpose()?;
            let mode: ScatterMode = args.mode.parse()?;
            let csv = emit_scatter(&records, opf_records.as_deref(), mode, grid.base_mva)?;
            std::fs::write(require_out(&cli)?, csv)?;
        }
    }
    Ok(())
}
