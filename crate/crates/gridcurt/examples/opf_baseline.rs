//! Resolve an overload with the OPF baseline and cross-check the result
//! against the brute-force grid search.
//!
//!     cargo run --release --example opf_baseline

use std::path::Path;

use gridcurt::grid::load_grid;
use gridcurt::opf::{brute_force_opf, check_feasibility, solve_opf, OpfOptions};
use gridcurt::scenario::SupplyTask;

fn main() -> gridcurt::Result<()> {
    let grid = load_grid(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/feeder5.json"))?;

    // 0.10 p.u. of PV behind a 0.05 p.u. line: uncurtailed loading 2.0.
    let mut p_ref = vec![0.0; 5];
    p_ref[4] = 0.10;
    let task = SupplyTask::from_refs(&grid, 0, p_ref, vec![0.0; 5])?;

    let (p0, q0) = task.reference_setpoints();
    let before = check_feasibility(&grid, &task, &p0, &q0, 1e-4)?;
    println!(
        "uncurtailed state: overload excess {:.3}, upper-voltage excess {:.4}",
        before.max_loading_excess, before.max_upper_voltage_excess
    );

    let sol = solve_opf(&grid, &task, &OpfOptions::default())?;
    println!(
        "\npenalty method: feasible={} objective={:+.5} in {:.3} s",
        sol.feasible, sol.objective, sol.solve_time
    );
    println!("  p_set = {:?}", sol.p_set);
    println!("  q_set = {:?}", sol.q_set);

    let oracle = brute_force_opf(&grid, &task, 101)?;
    println!(
        "\nbrute force (101 points/axis): feasible={} objective={:+.5} in {:.3} s",
        oracle.feasible, oracle.objective, oracle.solve_time
    );
    println!("  p_set = {:?}", oracle.p_set);

    let gap = (sol.objective - oracle.objective) / oracle.objective.abs().max(1e-12);
    println!("\nrelative objective gap: {:+.4} (penalty method vs oracle)", gap);

    let after = check_feasibility(&grid, &task, &sol.p_set, &sol.q_set, 1e-4)?;
    println!("post-curtailment violations: {}", after.has_violation);
    Ok(())
}
