//! Optimal power flow baseline and feasibility checking.
//!
//! The solver works in the reduced space of controllable-bus setpoints:
//! the network equality constraints are eliminated by running the power
//! flow inside the objective, box bounds are enforced by projection, and
//! the voltage-band and loading constraints enter as quadratic penalties
//! with a growing weight schedule. A brute-force grid search over the same
//! boxes serves as an independent oracle for small numbers of controllable
//! buses.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_admittance, AdmittanceMatrix, Grid};
use crate::powerflow::{solve_power_flow_with, InjectionSet, PfOptions, PowerFlowSolution};
use crate::scenario::SupplyTask;

/// Default slack on inequality constraints: below measurement noise, above
/// solver tolerance.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-4;

/// Voltage-band and loading excesses of one grid state, split by category.
/// A diverged power flow marks the report `non_physical` and counts as
/// violating regardless of the excess fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub max_upper_voltage_excess: f64,
    pub max_lower_voltage_excess: f64,
    pub max_loading_excess: f64,
    pub upper_voltage: bool,
    pub lower_voltage: bool,
    pub asset_overload: bool,
    pub non_physical: bool,
    pub has_violation: bool,
}

impl ViolationReport {
    /// Classifies a converged voltage/loading state against the per-bus
    /// bands and unit line ratings.
    pub fn from_state(grid: &Grid, v_mag: &[f64], loading: &[f64], tol: f64) -> Self {
        let mut upper: f64 = 0.0;
        let mut lower: f64 = 0.0;
        for (bus, &v) in grid.buses.iter().zip(v_mag) {
            upper = upper.max(v - bus.v_max);
            lower = lower.max(bus.v_min - v);
        }
        let overload = loading.iter().fold(0.0_f64, |acc, &l| acc.max(l - 1.0));
        let (upper, lower, overload) = (upper.max(0.0), lower.max(0.0), overload.max(0.0));
        let flags = (upper > tol, lower > tol, overload > tol);
        ViolationReport {
            max_upper_voltage_excess: upper,
            max_lower_voltage_excess: lower,
            max_loading_excess: overload,
            upper_voltage: flags.0,
            lower_voltage: flags.1,
            asset_overload: flags.2,
            non_physical: false,
            has_violation: flags.0 || flags.1 || flags.2,
        }
    }

    pub fn from_solution(grid: &Grid, sol: &PowerFlowSolution, tol: f64) -> Self {
        if !sol.converged {
            return ViolationReport::non_physical();
        }
        ViolationReport::from_state(grid, &sol.v_mag, &sol.loading, tol)
    }

    /// Report for a state the solver could not reproduce physically.
    pub fn non_physical() -> Self {
        ViolationReport {
            max_upper_voltage_excess: 0.0,
            max_lower_voltage_excess: 0.0,
            max_loading_excess: 0.0,
            upper_voltage: false,
            lower_voltage: false,
            asset_overload: false,
            non_physical: true,
            has_violation: true,
        }
    }

    /// Worst single excess, used to rank infeasible iterates.
    pub fn worst_excess(&self) -> f64 {
        if self.non_physical {
            return f64::INFINITY;
        }
        self.max_upper_voltage_excess
            .max(self.max_lower_voltage_excess)
            .max(self.max_loading_excess)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OpfOptions {
    /// First penalty weight of the outer schedule.
    pub penalty_initial: f64,
    /// Multiplier applied to the weight after every infeasible outer round.
    pub penalty_growth: f64,
    pub max_outer_iterations: usize,
    pub max_inner_iterations: usize,
    pub feasibility_tol: f64,
    pub pf: PfOptions,
}

impl Default for OpfOptions {
    fn default() -> Self {
        OpfOptions {
            penalty_initial: 1e2,
            penalty_growth: 10.0,
            max_outer_iterations: 6,
            max_inner_iterations: 40,
            feasibility_tol: DEFAULT_FEASIBILITY_TOL,
            pf: PfOptions::default(),
        }
    }
}

/// Result of [`solve_opf`] or [`brute_force_opf`]. Setpoints follow the
/// ascending order of controllable bus ids. When `feasible` is false the
/// setpoints are the least-violating iterate found.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OpfSolution {
    pub p_set: Vec<f64>,
    pub q_set: Vec<f64>,
    pub objective: f64,
    pub feasible: bool,
    pub violation_report: ViolationReport,
    pub solve_time: f64,
}

/// Polynomial operating cost of an injection vector:
/// sum_i sum_k c_ik * p_i^k.
pub fn operating_cost(grid: &Grid, p: &[f64]) -> f64 {
    grid.buses
        .iter()
        .zip(p)
        .map(|(bus, &pi)| {
            bus.cost_coeffs.iter().enumerate().map(|(k, &c)| c * pi.powi(k as i32)).sum::<f64>()
        })
        .sum()
}

/// Runs a power flow with the given controllable setpoints applied on top
/// of the task's reference injections and reports the resulting violations.
/// Setpoints are expected to lie within the task's boxes. A diverged power
/// flow yields a non-physical (violating) report.
pub fn check_feasibility(
    grid: &Grid,
    task: &SupplyTask,
    p_set: &[f64],
    q_set: &[f64],
    tol: f64,
) -> Result<ViolationReport> {
    let inj = task.injections_with(grid, p_set, q_set)?;
    let ybus = build_admittance(grid);
    let sol = solve_power_flow_with(grid, &ybus, &inj, &PfOptions::default())?;
    Ok(ViolationReport::from_solution(grid, &sol, tol))
}

struct Boxes {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Boxes {
    fn from_task(task: &SupplyTask) -> Self {
        let k = task.flex.len();
        let mut lo = Vec::with_capacity(2 * k);
        let mut hi = Vec::with_capacity(2 * k);
        for f in &task.flex {
            lo.push(f.p_min);
            hi.push(f.p_max);
        }
        for f in &task.flex {
            lo.push(f.q_min);
            hi.push(f.q_max);
        }
        Boxes { lo, hi }
    }

    fn clamp(&self, z: &mut [f64]) {
        for (i, v) in z.iter_mut().enumerate() {
            *v = v.clamp(self.lo[i], self.hi[i]);
        }
    }

    fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }
}

/// Shared evaluation state for the penalty method: one power flow per
/// objective evaluation.
struct OpfProblem<'a> {
    grid: &'a Grid,
    task: &'a SupplyTask,
    ybus: AdmittanceMatrix,
    controllable: Vec<usize>,
    opts: &'a OpfOptions,
}

const DIVERGED_COST: f64 = 1e12;

impl OpfProblem<'_> {
    fn injections(&self, z: &[f64]) -> InjectionSet {
        let k = self.controllable.len();
        let mut inj =
            InjectionSet { p: self.task.p_ref.clone(), q: self.task.q_ref.clone() };
        for (j, &bus) in self.controllable.iter().enumerate() {
            inj.p[bus] = z[j];
            inj.q[bus] = z[k + j];
        }
        inj
    }

    fn solve(&self, z: &[f64]) -> Option<PowerFlowSolution> {
        let sol =
            solve_power_flow_with(self.grid, &self.ybus, &self.injections(z), &self.opts.pf)
                .ok()?;
        sol.converged.then_some(sol)
    }

    fn cost(&self, z: &[f64]) -> f64 {
        let mut p = self.task.p_ref.clone();
        for (j, &bus) in self.controllable.iter().enumerate() {
            p[bus] = z[j];
        }
        operating_cost(self.grid, &p)
    }

    /// Penalized objective: operating cost plus weighted squared excesses.
    fn merit(&self, z: &[f64], weight: f64) -> f64 {
        match self.solve(z) {
            None => DIVERGED_COST * (1.0 + weight),
            Some(sol) => {
                let mut penalty = 0.0;
                for (bus, &v) in self.grid.buses.iter().zip(&sol.v_mag) {
                    penalty += (v - bus.v_max).max(0.0).powi(2);
                    penalty += (bus.v_min - v).max(0.0).powi(2);
                }
                for &l in &sol.loading {
                    penalty += (l - 1.0).max(0.0).powi(2);
                }
                self.cost(z) + weight * penalty
            }
        }
    }

    fn report(&self, z: &[f64]) -> ViolationReport {
        match self.solve(z) {
            None => ViolationReport::non_physical(),
            Some(sol) => {
                ViolationReport::from_state(self.grid, &sol.v_mag, &sol.loading, self.opts.feasibility_tol)
            }
        }
    }
}

/// Minimizes the penalized objective over the boxes with projected descent
/// and finite-difference gradients.
fn descend(problem: &OpfProblem, boxes: &Boxes, start: &[f64], weight: f64, max_iter: usize) -> Vec<f64> {
    let dim = start.len();
    let mut z = start.to_vec();
    boxes.clamp(&mut z);
    let mut merit = problem.merit(&z, weight);

    for _ in 0..max_iter {
        // Central finite differences, shrunk to stay inside the box.
        let mut grad = vec![0.0; dim];
        for d in 0..dim {
            let width = boxes.width(d);
            if width <= 1e-12 {
                continue;
            }
            let h = (1e-4 * width).max(1e-7);
            let mut plus = z.clone();
            let mut minus = z.clone();
            plus[d] = (z[d] + h).min(boxes.hi[d]);
            minus[d] = (z[d] - h).max(boxes.lo[d]);
            let spread = plus[d] - minus[d];
            if spread <= 0.0 {
                continue;
            }
            grad[d] = (problem.merit(&plus, weight) - problem.merit(&minus, weight)) / spread;
        }
        if grad.iter().all(|g| g.abs() < 1e-12) {
            break;
        }

        // Step halving line search along the box-scaled gradient.
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..25 {
            let mut candidate = z.clone();
            for d in 0..dim {
                let scale = boxes.width(d).powi(2);
                candidate[d] -= alpha * scale * grad[d];
            }
            boxes.clamp(&mut candidate);
            let candidate_merit = problem.merit(&candidate, weight);
            if candidate_merit < merit - 1e-14 {
                z = candidate;
                merit = candidate_merit;
                improved = true;
                break;
            }
            alpha /= 2.0;
        }
        if !improved {
            break;
        }
    }
    z
}

/// Solves the curtailment OPF for one supply task.
///
/// Decision variables are the (P, Q) setpoints of the controllable buses,
/// clipped to the task's flexibility boxes. Returns the best feasible
/// iterate if one is found, otherwise `feasible = false` together with the
/// least-violating iterate.
pub fn solve_opf(grid: &Grid, task: &SupplyTask, opts: &OpfOptions) -> Result<OpfSolution> {
    let begin = Instant::now();
    let controllable = grid.controllable_buses();
    task.check_matches(grid)?;
    let k = controllable.len();

    let problem = OpfProblem {
        grid,
        task,
        ybus: build_admittance(grid),
        controllable: controllable.clone(),
        opts,
    };

    if k == 0 {
        // Nothing to decide; report the reference state.
        let report = problem.report(&[]);
        return Ok(OpfSolution {
            p_set: vec![],
            q_set: vec![],
            objective: problem.cost(&[]),
            feasible: !report.has_violation,
            violation_report: report,
            solve_time: begin.elapsed().as_secs_f64(),
        });
    }

    let boxes = Boxes::from_task(task);
    let starts = candidate_starts(task, &boxes);

    let mut best_feasible: Option<(f64, Vec<f64>, ViolationReport)> = None;
    let mut least_violating: Option<(f64, f64, Vec<f64>, ViolationReport)> = None;

    for start in &starts {
        let mut weight = opts.penalty_initial;
        let mut z = start.clone();
        for _ in 0..opts.max_outer_iterations {
            z = descend(&problem, &boxes, &z, weight, opts.max_inner_iterations);
            let report = problem.report(&z);
            let cost = problem.cost(&z);
            if !report.has_violation {
                if best_feasible.as_ref().is_none_or(|(c, _, _)| cost < *c) {
                    best_feasible = Some((cost, z.clone(), report));
                }
                break;
            }
            let excess = report.worst_excess();
            if least_violating
                .as_ref()
                .is_none_or(|(e, c, _, _)| excess < *e || (excess == *e && cost < *c))
            {
                least_violating = Some((excess, cost, z.clone(), report));
            }
            weight *= opts.penalty_growth;
        }
    }

    let solve_time = begin.elapsed().as_secs_f64();
    let solution = match (best_feasible, least_violating) {
        (Some((cost, z, report)), _) => OpfSolution {
            p_set: z[..k].to_vec(),
            q_set: z[k..].to_vec(),
            objective: cost,
            feasible: true,
            violation_report: report,
            solve_time,
        },
        (None, Some((_, cost, z, report))) => OpfSolution {
            p_set: z[..k].to_vec(),
            q_set: z[k..].to_vec(),
            objective: cost,
            feasible: false,
            violation_report: report,
            solve_time,
        },
        (None, None) => unreachable!("at least one start is always evaluated"),
    };
    Ok(solution)
}

/// Deterministic multi-start: the uncurtailed reference, the
/// full-curtailment corner, and the box midpoint.
fn candidate_starts(task: &SupplyTask, boxes: &Boxes) -> Vec<Vec<f64>> {
    let k = task.flex.len();
    let dim = 2 * k;

    let mut reference = Vec::with_capacity(dim);
    for f in &task.flex {
        reference.push(task.p_ref[f.bus]);
    }
    for f in &task.flex {
        reference.push(task.q_ref[f.bus]);
    }

    let mut curtailed = reference.clone();
    for (j, _) in task.flex.iter().enumerate() {
        // Active power pulled as close to zero as the box allows.
        curtailed[j] = 0.0;
    }

    let midpoint: Vec<f64> =
        (0..dim).map(|d| (boxes.lo[d] + boxes.hi[d]) / 2.0).collect();

    let mut starts = vec![reference, curtailed, midpoint];
    for s in &mut starts {
        boxes.clamp(s);
    }
    starts.dedup();
    starts
}

/// Exhaustive search over the Cartesian product of all controllable boxes,
/// restricted to k <= 2 controllable buses. Degenerate axes collapse to a
/// single point. The minimum-cost feasible point wins; ties break on the
/// lexicographically smallest grid index, so the result is independent of
/// evaluation order.
pub fn brute_force_opf(
    grid: &Grid,
    task: &SupplyTask,
    grid_points_per_axis: usize,
) -> Result<OpfSolution> {
    let begin = Instant::now();
    let controllable = grid.controllable_buses();
    task.check_matches(grid)?;
    let k = controllable.len();
    if k > 2 {
        return Err(Error::BruteForceTooLarge(k));
    }
    if grid_points_per_axis < 11 {
        return Err(Error::Config("grid_points_per_axis must be >= 11".into()));
    }

    let opts = OpfOptions::default();
    let problem =
        OpfProblem { grid, task, ybus: build_admittance(grid), controllable: controllable.clone(), opts: &opts };

    let boxes = Boxes::from_task(task);
    let dim = 2 * k;
    let axes: Vec<Vec<f64>> = (0..dim)
        .map(|d| {
            let (lo, hi) = (boxes.lo[d], boxes.hi[d]);
            if hi - lo <= 1e-12 {
                vec![lo]
            } else {
                (0..grid_points_per_axis)
                    .map(|i| lo + (hi - lo) * i as f64 / (grid_points_per_axis - 1) as f64)
                    .collect()
            }
        })
        .collect();
    let total: usize = axes.iter().map(|a| a.len()).product();
    if total > 4_000_000 {
        return Err(Error::Config(format!(
            "brute force grid has {total} points; reduce grid_points_per_axis"
        )));
    }

    #[derive(Clone)]
    struct Candidate {
        feasible: bool,
        cost: f64,
        excess: f64,
        index: usize,
        z: Vec<f64>,
        report: ViolationReport,
    }

    fn better(a: &Candidate, b: &Candidate) -> bool {
        match (a.feasible, b.feasible) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => (a.cost, a.index) < (b.cost, b.index),
            (false, false) => (a.excess, a.cost, a.index) < (b.excess, b.cost, b.index),
        }
    }

    let winner = (0..total)
        .into_par_iter()
        .map(|index| {
            // Mixed-radix decode, last axis fastest.
            let mut rem = index;
            let mut z = vec![0.0; dim];
            for d in (0..dim).rev() {
                let len = axes[d].len();
                z[d] = axes[d][rem % len];
                rem /= len;
            }
            let report = problem.report(&z);
            Candidate {
                feasible: !report.has_violation,
                cost: problem.cost(&z),
                excess: report.worst_excess(),
                index,
                z,
                report,
            }
        })
        .reduce_with(|a, b| if better(&a, &b) { a } else { b })
        .expect("grid enumeration is non-empty");

    Ok(OpfSolution {
        p_set: winner.z[..k].to_vec(),
        q_set: winner.z[k..].to_vec(),
        objective: winner.cost,
        feasible: winner.feasible,
        violation_report: winner.report,
        solve_time: begin.elapsed().as_secs_f64(),
    })
}
