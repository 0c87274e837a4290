//! Reward of one environment step, computed from the full grid state --
//! including buses the agent cannot observe.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::powerflow::PowerFlowSolution;
use crate::scenario::SupplyTask;

/// Decomposition of one reward evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    /// Maximum deviation from the voltage band over all buses (p.u.).
    pub voltage_excess: f64,
    /// Maximum relative line-load excess above rating.
    pub loading_excess: f64,
    /// Mean curtailed active power over the controllable buses (p.u.).
    pub mean_curtailment: f64,
    /// Normalizer: lambda / k times the summed active box widths.
    pub scale: f64,
    pub lambda: f64,
    pub converged: bool,
    pub reward: f64,
}

/// The scalar reward rule. Violations dominate: any violating state scores
/// strictly below any non-violating one, and the result stays within
/// [-1, 1]. A zero scale (no usable flexibility) saturates the violation
/// ratio and makes curtailment free.
pub fn reward_from_terms(voltage_excess: f64, loading_excess: f64, mean_curtailment: f64, scale: f64) -> f64 {
    if voltage_excess + loading_excess > 0.0 {
        let ratio = if scale > 0.0 {
            voltage_excess / scale
        } else if voltage_excess > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        -(ratio + loading_excess).min(1.0)
    } else {
        let ratio = if scale > 0.0 { mean_curtailment / scale } else { 0.0 };
        1.0 - ratio
    }
}

/// Evaluates the reward of the state `pf` reached after applying `p_set` at
/// the controllable buses. A diverged power flow earns the floor reward -1.
pub fn compute_reward(
    grid: &Grid,
    task: &SupplyTask,
    pf: &PowerFlowSolution,
    p_set: &[f64],
    lambda: f64,
) -> Result<RewardTerms> {
    let k = task.flex.len();
    if k == 0 {
        return Err(Error::Env("reward undefined without controllable buses".into()));
    }
    if p_set.len() != k {
        return Err(Error::Dimension("setpoint vector does not match controllable buses".into()));
    }
    if lambda <= 1.0 {
        return Err(Error::Config("lambda must be > 1".into()));
    }

    let width_sum: f64 = task.flex.iter().map(|f| (f.p_max - f.p_min).abs()).sum();
    let scale = lambda / k as f64 * width_sum;

    if !pf.converged {
        return Ok(RewardTerms {
            voltage_excess: 0.0,
            loading_excess: 0.0,
            mean_curtailment: 0.0,
            scale,
            lambda,
            converged: false,
            reward: -1.0,
        });
    }

    let mut voltage_excess: f64 = 0.0;
    for (bus, &v) in grid.buses.iter().zip(&pf.v_mag) {
        let clamped = v.clamp(bus.v_min, bus.v_max);
        voltage_excess = voltage_excess.max((v - clamped).abs());
    }
    let loading_excess =
        pf.loading.iter().fold(0.0_f64, |acc, &l| acc.max((l - 1.0).max(0.0)));
    let mean_curtailment = task
        .flex
        .iter()
        .zip(p_set)
        .map(|(f, &p)| (task.p_ref[f.bus] - p).abs())
        .sum::<f64>()
        / k as f64;

    Ok(RewardTerms {
        voltage_excess,
        loading_excess,
        mean_curtailment,
        scale,
        lambda,
        converged: true,
        reward: reward_from_terms(voltage_excess, loading_excess, mean_curtailment, scale),
    })
}
