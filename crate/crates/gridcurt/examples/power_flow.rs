//! Solve the AC power flow on a synthetic feeder and print the bus
//! voltages and line loadings.
//!
//!     cargo run --release --example power_flow

use gridcurt::powerflow::{solve_power_flow, InjectionSet, PfOptions};
use gridcurt::synth::{build_feeder, FeederConfig};

fn main() -> gridcurt::Result<()> {
    let grid = build_feeder(&FeederConfig::default(), 7)?;
    let n = grid.bus_count();
    let pv_bus = grid.controllable_buses()[0];

    // Midday snapshot: strong PV at the controllable bus, light loads
    // everywhere else.
    let mut inj = InjectionSet::zeros(n);
    for bus in 1..n {
        if bus == pv_bus {
            inj.p[bus] = 0.28;
        } else {
            inj.p[bus] = -0.008;
            inj.q[bus] = -0.0026;
        }
    }

    let sol = solve_power_flow(&grid, &inj, &PfOptions::default())?;
    println!(
        "converged: {} in {} iterations (worst mismatch {:.2e} p.u.)\n",
        sol.converged, sol.iterations, sol.max_mismatch
    );

    println!("bus  injection P/Q (p.u.)      V (p.u.)  angle (deg)");
    for bus in 0..n {
        println!(
            "{bus:>3}  {:+.4} / {:+.4}        {:.4}    {:+.3}",
            inj.p[bus],
            inj.q[bus],
            sol.v_mag[bus],
            sol.v_ang[bus].to_degrees()
        );
    }

    println!("\nline   from->to   |S_from|   loading");
    for (idx, line) in grid.lines.iter().enumerate() {
        let flag = if sol.loading[idx] > 1.0 { "  <-- overloaded" } else { "" };
        println!(
            "{idx:>4}   {:>2} -> {:<2}   {:.4}     {:.2}{flag}",
            line.from_bus,
            line.to_bus,
            sol.s_from[idx].norm(),
            sol.loading[idx]
        );
    }

    let slack = grid.slack_bus();
    println!("\nslack balance: {:+.4} p.u. active, {:+.4} p.u. reactive", sol.p_bus[slack], sol.q_bus[slack]);
    Ok(())
}
