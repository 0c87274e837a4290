//! Evaluate a trained checkpoint against the OPF baseline on the held-out
//! test set: resolution percentages per violation category, relative
//! curtailment scatter CSVs, and timing.
//!
//! Run `cargo run --release --example train_agent` first, then
//!
//!     cargo run --release --example evaluate_agent

use std::path::Path;

use gridcurt::eval::{bench, emit_scatter, evaluate, evaluate_opf, ScatterMode, SummaryTable};
use gridcurt::grid::load_grid;
use gridcurt::opf::OpfOptions;
use gridcurt::rl::AgentCheckpoint;
use gridcurt::scenario::Dataset;

fn print_summary(name: &str, summary: &SummaryTable) {
    let row = |label: &str, stat: &gridcurt::eval::CategoryStat| {
        let pct = stat.solved_pct.map(|p| format!("{p:.1}%")).unwrap_or_else(|| "-".into());
        println!("  {label:<20} {:>6}   {pct:>7}", stat.count);
    };
    println!("{name}:");
    println!("  category              count    solved");
    row("total", &summary.total);
    row("upper voltage band", &summary.upper_voltage);
    row("lower voltage band", &summary.lower_voltage);
    row("asset overloaded", &summary.asset_overload);
}

fn main() -> gridcurt::Result<()> {
    let out_dir = Path::new("gridcurt_out");
    let grid = load_grid(out_dir.join("grid.json"))?;
    let test = Dataset::read_jsonl(out_dir.join("test.jsonl"))?;
    let checkpoint = AgentCheckpoint::load(out_dir.join("checkpoint.json"))?;

    let (rl_records, rl_summary) = evaluate(&checkpoint, &grid, &test, 1e-4)?;
    print_summary("agent", &rl_summary);

    let opf_opts = OpfOptions::default();
    let (opf_records, opf_summary) = evaluate_opf(&grid, &test, &opf_opts, 1e-4)?;
    println!();
    print_summary("opf baseline", &opf_summary);

    // Residual violations: does the agent at least act on them?
    let residuals: Vec<_> =
        rl_records.iter().filter(|r| r.pre_any && !r.resolved_all).collect();
    let acting = residuals
        .iter()
        .filter(|r| {
            r.relative_p_curtailment.unwrap_or(0.0) > 1e-6
                || r.relative_q_curtailment.unwrap_or(0.0) > 1e-6
        })
        .count();
    println!(
        "\nresidual violations after the agent: {} ({} with a nonzero setpoint response)",
        residuals.len(),
        acting
    );

    // Unnecessary curtailment: action without a pre-existing violation.
    let spurious = |records: &[gridcurt::eval::EvalRecord]| {
        records
            .iter()
            .filter(|r| !r.pre_any && r.relative_p_curtailment.unwrap_or(0.0) > 1e-3)
            .count()
    };
    println!(
        "tasks curtailed without a violation: agent {}, opf {}",
        spurious(&rl_records),
        spurious(&opf_records)
    );

    for (mode, file) in [
        (ScatterMode::LoadingVsP, "scatter_loading_vs_p.csv"),
        (ScatterMode::VminVsP, "scatter_vmin_vs_p.csv"),
        (ScatterMode::LoadingVsQ, "scatter_loading_vs_q.csv"),
    ] {
        let csv = emit_scatter(&rl_records, Some(&opf_records), mode, grid.base_mva)?;
        std::fs::write(out_dir.join(file), csv)?;
    }
    println!("wrote scatter CSVs into {}", out_dir.display());

    let report = bench(&grid, &test, &checkpoint, &opf_opts, 5)?;
    println!(
        "\ntiming over {} tasks ({} repeats): agent {:.4} s/task, opf {:.4} s/task",
        report.tasks_used, report.repeats, report.inference_per_task_s, report.opf_per_task_s
    );
    Ok(())
}
