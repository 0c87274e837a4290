//! Build the full dataset pipeline on a synthetic feeder: profile
//! generation, violation labelling, augmentation, and the train/test
//! split. Prints the violation distribution of both splits.
//!
//!     cargo run --release --example dataset_pipeline

use gridcurt::scenario::{
    augment, generate_profiles, label_violations, split, AugmentConfig, Dataset, ProfileConfig,
};
use gridcurt::synth::{build_feeder, FeederConfig};

fn violation_table(name: &str, data: &Dataset) {
    let mut upper = 0;
    let mut lower = 0;
    let mut overload = 0;
    let mut total = 0;
    for task in &data.tasks {
        if let Some(l) = &task.labels {
            if l.has_violation {
                total += 1;
            }
            upper += l.upper_voltage as usize;
            lower += l.lower_voltage as usize;
            overload += l.asset_overload as usize;
        }
    }
    println!("{name}: {} tasks ({} excluded as non-physical)", data.len(), data.excluded_non_physical);
    println!("  violations          {total:>6}");
    println!("  upper voltage band  {upper:>6}");
    println!("  lower voltage band  {lower:>6}");
    println!("  asset overloaded    {overload:>6}");
}

fn main() -> gridcurt::Result<()> {
    let grid = build_feeder(&FeederConfig::default(), 7)?;
    println!(
        "feeder: {} buses, {} controllable/observable\n",
        grid.bus_count(),
        grid.controllable_buses().len()
    );

    let profile = ProfileConfig {
        n_steps: 672, // one week of quarter hours
        household_peak: 0.012,
        pv_peak: 0.3,
        noise_level: 0.25,
        pv_buses: grid.controllable_buses(),
        power_factor: 0.95,
        start_day: 150,
    };
    let raw = generate_profiles(&grid, &profile, 42)?;
    let labeled = label_violations(&grid, raw, 1e-4)?;
    violation_table("original (test split)", &labeled);

    let augmented = augment(
        &grid,
        &labeled,
        &AugmentConfig {
            bound_noise_sigma: 0.15,
            lower_band_target_fraction: 0.15,
            multiplier: 3,
        },
        43,
    )?;
    println!();
    violation_table("augmented (train split)", &augmented);

    let parts = split(&labeled, &augmented)?;
    println!(
        "\nsplit: {} training tasks, {} held-out test tasks (disjoint by provenance)",
        parts.train.len(),
        parts.test.len()
    );
    Ok(())
}
