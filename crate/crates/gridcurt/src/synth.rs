//! Synthetic radial feeder builder: reproducible low-voltage test grids
//! with a configurable share of controllable (and therefore observable)
//! PV buses at the far end of the feeder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{validate, Bus, BusKind, Grid, Line};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FeederConfig {
    /// Total number of buses including the slack.
    pub n_buses: usize,
    /// Share of non-slack buses flagged controllable (rounded up, at least
    /// one). Controllable buses are also observable; nothing else is.
    pub controllable_fraction: f64,
    /// Active-power nameplate of each controllable PV bus (p.u.).
    pub pv_nameplate: f64,
    /// Reactive box half-width as a fraction of the nameplate.
    pub q_range_factor: f64,
    /// Mean series resistance per segment (p.u.); jittered per line.
    pub segment_resistance: f64,
    /// x = r * reactance_ratio.
    pub reactance_ratio: f64,
    /// Rating of segments leaving the slack (p.u.).
    pub trunk_rating: f64,
    /// Rating of the deepest segments; intermediate depths interpolate.
    pub end_rating: f64,
    /// Probability that a bus attaches to a random upstream bus instead of
    /// extending the main chain.
    pub branch_probability: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for FeederConfig {
    fn default() -> Self {
        FeederConfig {
            n_buses: 15,
            controllable_fraction: 0.07,
            pv_nameplate: 0.3,
            q_range_factor: 0.5,
            segment_resistance: 0.06,
            reactance_ratio: 0.5,
            trunk_rating: 0.3,
            end_rating: 0.12,
            branch_probability: 0.3,
            v_min: 0.95,
            v_max: 1.05,
        }
    }
}

/// Builds a validated radial feeder. Deterministic in (config, seed).
pub fn build_feeder(config: &FeederConfig, seed: u64) -> Result<Grid> {
    if config.n_buses < 2 {
        return Err(Error::Config("a feeder needs at least two buses".into()));
    }
    if !(0.0..=1.0).contains(&config.controllable_fraction) {
        return Err(Error::Config("controllable_fraction must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.n_buses;

    // Radial topology: mostly a chain, with occasional side branches.
    let mut parent = vec![0usize; n];
    let mut depth = vec![0usize; n];
    let mut chain_tip = 0usize;
    for i in 1..n {
        let p = if i > 1 && rng.random::<f64>() < config.branch_probability {
            rng.random_range(1..i)
        } else {
            chain_tip
        };
        parent[i] = p;
        depth[i] = depth[p] + 1;
        if p == chain_tip {
            chain_tip = i;
        }
    }
    let max_depth = *depth.iter().max().expect("n >= 2") as f64;

    // The deepest buses get the PV clusters: violations are electrically
    // far from the slack and visible at the controllable buses themselves.
    let k = ((config.controllable_fraction * (n - 1) as f64).ceil() as usize).max(1);
    let mut by_depth: Vec<usize> = (1..n).collect();
    by_depth.sort_by_key(|&i| (std::cmp::Reverse(depth[i]), i));
    let mut controllable = vec![false; n];
    for &i in by_depth.iter().take(k) {
        controllable[i] = true;
    }

    let buses = (0..n)
        .map(|id| {
            let kind = if id == 0 { BusKind::Slack } else { BusKind::Pq };
            if controllable[id] {
                let q_half = config.q_range_factor * config.pv_nameplate;
                Bus {
                    id,
                    kind,
                    v_min: config.v_min,
                    v_max: config.v_max,
                    observable: true,
                    controllable: true,
                    p_min: 0.0,
                    p_max: config.pv_nameplate,
                    q_min: -q_half,
                    q_max: q_half,
                    cost_coeffs: vec![0.0, -1.0, 0.0],
                }
            } else {
                Bus {
                    id,
                    kind,
                    v_min: config.v_min,
                    v_max: config.v_max,
                    observable: false,
                    controllable: false,
                    p_min: 0.0,
                    p_max: 0.0,
                    q_min: 0.0,
                    q_max: 0.0,
                    cost_coeffs: vec![0.0, 0.0, 0.0],
                }
            }
        })
        .collect();

    let lines = (1..n)
        .map(|i| {
            let jitter = 0.8 + 0.4 * rng.random::<f64>();
            let r = config.segment_resistance * jitter;
            let frac = (depth[i] as f64 - 1.0) / (max_depth - 1.0).max(1.0);
            Line {
                from_bus: parent[i],
                to_bus: i,
                r,
                x: r * config.reactance_ratio,
                b_shunt: 0.0,
                s_max: config.trunk_rating + (config.end_rating - config.trunk_rating) * frac,
            }
        })
        .collect();

    let grid = Grid { base_mva: 1.0, base_kv: 0.4, buses, lines };
    let issues = validate(&grid);
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    Ok(grid)
}
