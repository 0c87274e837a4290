//! Train the curtailment agent end to end on a synthetic feeder and save
//! the checkpoint plus the metrics log into `gridcurt_out/`.
//!
//!     cargo run --release --example train_agent
//!
//! Environment knobs: GRIDCURT_STEPS (default 50000), GRIDCURT_WIDTH
//! (default 64), GRIDCURT_SEED (default 0).

use std::time::Instant;

use gridcurt::rl::{train_with_observer, MetricsRow, TrainConfig, TrainEvent};
use gridcurt::scenario::{augment, generate_profiles, label_violations, AugmentConfig, ProfileConfig};
use gridcurt::synth::{build_feeder, FeederConfig};

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> gridcurt::Result<()> {
    let steps: u64 = env_or("GRIDCURT_STEPS", 50_000);
    let width: usize = env_or("GRIDCURT_WIDTH", 64);
    let seed: u64 = env_or("GRIDCURT_SEED", 0);

    let grid = build_feeder(&FeederConfig::default(), 7)?;
    let profile = ProfileConfig {
        n_steps: 672,
        household_peak: 0.012,
        pv_peak: 0.3,
        noise_level: 0.25,
        pv_buses: grid.controllable_buses(),
        power_factor: 0.95,
        start_day: 150,
    };
    let labeled = label_violations(&grid, generate_profiles(&grid, &profile, 42)?, 1e-4)?;
    let train_data = augment(
        &grid,
        &labeled,
        &AugmentConfig { bound_noise_sigma: 0.15, lower_band_target_fraction: 0.15, multiplier: 3 },
        43,
    )?;
    println!(
        "training on {} augmented tasks ({} violating), validating on {} held-out tasks",
        train_data.len(),
        train_data.violating_task_ids().len(),
        labeled.violating_task_ids().len()
    );

    let config = TrainConfig {
        seed,
        total_steps: steps,
        hidden_width: width,
        metrics_interval: 2_000,
        validation_tasks: 50,
        ..TrainConfig::default()
    };

    let out_dir = std::path::Path::new("gridcurt_out");
    std::fs::create_dir_all(out_dir)?;
    let begin = Instant::now();
    let mut rows: Vec<MetricsRow> = Vec::new();
    let output = train_with_observer(&grid, &train_data, Some(&labeled), &config, |event| {
        if let TrainEvent::Metrics(row) = event {
            println!(
                "step {:>7}  mean reward {:+.4}  validation resolution {}  critic loss {:.5}",
                row.step,
                row.mean_reward,
                row.resolution_rate.map(|r| format!("{:.3}", r)).unwrap_or_else(|| "-".into()),
                row.critic_loss
            );
            rows.push(row.clone());
        }
    })?;

    let ckpt_path = out_dir.join("checkpoint.json");
    output.checkpoint.save(&ckpt_path)?;
    let mut csv = String::from(MetricsRow::CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.to_csv_row());
        csv.push('\n');
    }
    std::fs::write(out_dir.join("metrics.csv"), csv)?;
    grid.save(out_dir.join("grid.json"))?;
    labeled.write_jsonl(out_dir.join("test.jsonl"))?;

    println!(
        "\ntrained {} steps in {:.1} s; wrote {} and metrics.csv",
        output.checkpoint.steps,
        begin.elapsed().as_secs_f64(),
        ckpt_path.display()
    );
    Ok(())
}
